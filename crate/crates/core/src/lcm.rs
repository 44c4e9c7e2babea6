//! Latent class measurement model for binary items.

use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::ddt::{diffuse_locations, DiffusionVariances, ItemGrouping, NodeLocations};
use crate::error::{Error, Result};
use crate::rng::seeded;
use crate::tree::DdtTree;

/// Response probabilities are kept inside `[PROB_EPS, 1 - PROB_EPS]`.
pub const PROB_EPS: f64 = 1e-12;

pub fn sigmoid(x: f64) -> f64 {
    let p = if x >= 0.0 {
        1.0 / (1.0 + (-x).exp())
    } else {
        let e = x.exp();
        e / (1.0 + e)
    };
    p.clamp(PROB_EPS, 1.0 - PROB_EPS)
}

pub fn logit(p: f64) -> f64 {
    (p / (1.0 - p)).ln()
}

/// Numerically stable `log(sum(exp(x)))`.
pub fn log_sum_exp(xs: &[f64]) -> f64 {
    let m = xs.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    if m == f64::NEG_INFINITY {
        return m;
    }
    m + xs.iter().map(|x| (x - m).exp()).sum::<f64>().ln()
}

/// Class prevalences.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ClassProbability(Vec<f64>);

impl ClassProbability {
    pub fn new(values: Vec<f64>) -> Result<Self> {
        if values.is_empty() {
            return Err(Error::InvalidParameter("class probability is empty".into()));
        }
        if values.iter().any(|p| !(*p >= 0.0) || !p.is_finite()) {
            return Err(Error::InvalidParameter("class probabilities must be >= 0".into()));
        }
        let s: f64 = values.iter().sum();
        if (s - 1.0).abs() > 1e-12 {
            return Err(Error::InvalidParameter(format!("class probabilities sum to {s}, not 1")));
        }
        Ok(Self(values))
    }

    pub fn uniform(k: usize) -> Self {
        Self(vec![1.0 / k as f64; k])
    }

    pub fn as_slice(&self) -> &[f64] {
        &self.0
    }

    pub fn len(&self) -> usize {
        self.0.len()
    }

    pub fn is_empty(&self) -> bool {
        self.0.is_empty()
    }
}

/// K x J matrix of item response probabilities.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ItemResponseProbabilities(pub Vec<Vec<f64>>);

impl ItemResponseProbabilities {
    pub fn n_classes(&self) -> usize {
        self.0.len()
    }

    pub fn n_items(&self) -> usize {
        self.0.first().map_or(0, Vec::len)
    }

    pub fn get(&self, k: usize, j: usize) -> f64 {
        self.0[k][j]
    }

    pub fn rows(&self) -> &[Vec<f64>] {
        &self.0
    }
}

/// Elementwise sigmoid of leaf locations (rows in class order).
pub fn response_prob_from_locations(leaf_locations: &[Vec<f64>]) -> ItemResponseProbabilities {
    ItemResponseProbabilities(
        leaf_locations.iter().map(|row| row.iter().map(|&x| sigmoid(x)).collect()).collect(),
    )
}

/// N x J binary responses with row and column identifiers.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ResponseMatrix {
    n_rows: usize,
    n_cols: usize,
    values: Vec<u8>,
    pub row_ids: Vec<String>,
    pub col_ids: Vec<String>,
}

impl ResponseMatrix {
    pub fn new(rows: Vec<Vec<u8>>, row_ids: Vec<String>, col_ids: Vec<String>) -> Result<Self> {
        let n_rows = rows.len();
        if n_rows == 0 {
            return Err(Error::InvalidData("response matrix has no rows".into()));
        }
        let n_cols = col_ids.len();
        if row_ids.len() != n_rows {
            return Err(Error::Dimension(format!("{} row ids for {n_rows} rows", row_ids.len())));
        }
        let mut values = Vec::with_capacity(n_rows * n_cols);
        for (i, r) in rows.iter().enumerate() {
            if r.len() != n_cols {
                return Err(Error::Dimension(format!(
                    "row {} has {} entries, expected {n_cols}",
                    i + 1,
                    r.len()
                )));
            }
            if let Some(x) = r.iter().find(|&&x| x > 1) {
                return Err(Error::InvalidData(format!("non-binary value {x} in row {}", i + 1)));
            }
            values.extend_from_slice(r);
        }
        Ok(Self { n_rows, n_cols, values, row_ids, col_ids })
    }

    /// Rows labelled "1".."N", columns "item_1".."item_J".
    pub fn from_rows(rows: Vec<Vec<u8>>) -> Result<Self> {
        let n = rows.len();
        let j = rows.first().map_or(0, Vec::len);
        Self::new(
            rows,
            (1..=n).map(|i| i.to_string()).collect(),
            (1..=j).map(|j| format!("item_{j}")).collect(),
        )
    }

    pub fn n_rows(&self) -> usize {
        self.n_rows
    }

    pub fn n_cols(&self) -> usize {
        self.n_cols
    }

    pub fn get(&self, i: usize, j: usize) -> u8 {
        self.values[i * self.n_cols + j]
    }

    pub fn row(&self, i: usize) -> &[u8] {
        &self.values[i * self.n_cols..(i + 1) * self.n_cols]
    }

    pub fn rows(&self) -> impl Iterator<Item = &[u8]> {
        self.values.chunks(self.n_cols)
    }

    pub fn set(&mut self, i: usize, j: usize, v: u8) {
        self.values[i * self.n_cols + j] = v & 1;
    }
}

fn row_loglik(y: &[u8], theta_k: &[f64]) -> f64 {
    y.iter()
        .zip(theta_k)
        .map(|(&y, &t)| {
            let t = t.clamp(PROB_EPS, 1.0 - PROB_EPS);
            if y == 1 {
                t.ln()
            } else {
                (1.0 - t).ln()
            }
        })
        .sum()
}

fn check_shapes(y: &ResponseMatrix, theta: &ItemResponseProbabilities, pi: &[f64]) -> Result<()> {
    if theta.n_classes() != pi.len() {
        return Err(Error::Dimension(format!(
            "{} class profiles but {} class probabilities",
            theta.n_classes(),
            pi.len()
        )));
    }
    if theta.n_items() != y.n_cols() {
        return Err(Error::Dimension(format!(
            "profiles have {} items, data has {}",
            theta.n_items(),
            y.n_cols()
        )));
    }
    Ok(())
}

/// Complete-data log-likelihood given 0-based memberships.
pub fn loglik_complete(
    y: &ResponseMatrix,
    z: &[usize],
    theta: &ItemResponseProbabilities,
    pi: &[f64],
) -> Result<f64> {
    check_shapes(y, theta, pi)?;
    if z.len() != y.n_rows() {
        return Err(Error::Dimension(format!("{} memberships for {} rows", z.len(), y.n_rows())));
    }
    let mut total = 0.0;
    for (i, row) in y.rows().enumerate() {
        let k = z[i];
        if k >= pi.len() {
            return Err(Error::InvalidParameter(format!("membership {} out of range", k + 1)));
        }
        total += pi[k].ln() + row_loglik(row, &theta.0[k]);
    }
    Ok(total)
}

/// Per-class log joint `log pi_k + log p(y | theta_k)` for one row.
pub fn class_log_joint(row: &[u8], theta: &ItemResponseProbabilities, pi: &[f64]) -> Vec<f64> {
    pi.iter()
        .zip(theta.rows())
        .map(|(&p, t)| if p > 0.0 { p.ln() + row_loglik(row, t) } else { f64::NEG_INFINITY })
        .collect()
}

/// Observed-data log-likelihood with classes summed out.
pub fn loglik_marginal(y: &ResponseMatrix, theta: &ItemResponseProbabilities, pi: &[f64]) -> Result<f64> {
    check_shapes(y, theta, pi)?;
    Ok(y.rows().map(|row| log_sum_exp(&class_log_joint(row, theta, pi))).sum())
}

/// Posterior class probabilities of one response row.
pub fn membership_posterior(row: &[u8], theta: &ItemResponseProbabilities, pi: &[f64]) -> Vec<f64> {
    let lj = class_log_joint(row, theta, pi);
    let norm = log_sum_exp(&lj);
    lj.iter().map(|x| (x - norm).exp()).collect()
}

/// Inverse-CDF draw from a probability vector, scanning in index order.
pub fn draw_categorical<R: Rng + ?Sized>(probs: &[f64], rng: &mut R) -> usize {
    let total: f64 = probs.iter().sum();
    let u = rng.random::<f64>() * total;
    let mut acc = 0.0;
    let mut last = 0;
    for (k, &p) in probs.iter().enumerate() {
        if p > 0.0 {
            last = k;
        }
        acc += p;
        if u < acc {
            return k;
        }
    }
    last
}

/// Data simulated from known parameters, with all ground truth.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SimulatedDataset {
    pub response_matrix: ResponseMatrix,
    pub tree: DdtTree,
    pub locations: NodeLocations,
    pub theta: ItemResponseProbabilities,
    pub class_probability: ClassProbability,
    /// 0-based class of every row.
    pub memberships: Vec<usize>,
    pub seed_parameter: u64,
    pub seed_response: u64,
}

/// Leaf location rows in class order (natural leaf label order).
pub fn leaf_locations(tree: &DdtTree, locations: &NodeLocations) -> Vec<Vec<f64>> {
    tree.leaves().into_iter().map(|v| locations.nodes[v].clone()).collect()
}

/// Simulate responses from a latent class model whose profiles diffuse
/// along `tree`. Node locations use `seed_parameter`; memberships and
/// responses use `seed_response`.
#[allow(clippy::too_many_arguments)]
pub fn simulate_lcm_given_tree(
    tree: &DdtTree,
    n: usize,
    class_probability: &ClassProbability,
    grouping: &ItemGrouping,
    variances: &DiffusionVariances,
    root_location: &[f64],
    seed_parameter: u64,
    seed_response: u64,
) -> Result<SimulatedDataset> {
    let k = tree.n_leaves();
    if k != class_probability.len() {
        return Err(Error::Dimension(format!(
            "tree has {k} leaves but {} class probabilities were given",
            class_probability.len()
        )));
    }
    if n == 0 {
        return Err(Error::InvalidParameter("N must be at least 1".into()));
    }
    let mut prng = seeded(seed_parameter);
    let locations = diffuse_locations(tree, grouping, variances, root_location, &mut prng)?;
    let theta = response_prob_from_locations(&leaf_locations(tree, &locations));

    let mut rrng = seeded(seed_response);
    let pi = class_probability.as_slice();
    let memberships: Vec<usize> = (0..n).map(|_| draw_categorical(pi, &mut rrng)).collect();
    let rows: Vec<Vec<u8>> = memberships
        .iter()
        .map(|&z| theta.0[z].iter().map(|&t| u8::from(rrng.random::<f64>() < t)).collect())
        .collect();
    let response_matrix = ResponseMatrix::new(
        rows,
        (1..=n).map(|i| i.to_string()).collect(),
        (1..=grouping.n_items()).map(|j| format!("item_{j}")).collect(),
    )?;
    Ok(SimulatedDataset {
        response_matrix,
        tree: tree.clone(),
        locations,
        theta,
        class_probability: class_probability.clone(),
        memberships,
        seed_parameter,
        seed_response,
    })
}
