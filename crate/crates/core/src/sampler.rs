//! Metropolis-Hastings-within-Gibbs sampler for the tree-regularized LCM.
//!
//! One sweep updates, in order: the tree topology by prune/regraft MH moves,
//! the Pólya-Gamma auxiliaries, all node locations (exactly, by Gaussian
//! message passing on the tree), the group diffusion variances, the
//! divergence parameter, the class memberships and the class prevalences.

use std::time::Instant;

use rand::Rng;
use rand_distr::{Distribution, Gamma, StandardNormal};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use statrs::function::gamma::ln_gamma;

use crate::chain::{ChainMeta, PosteriorChain, Snapshot, CHAIN_SCHEMA_VERSION};
use crate::ddt::{
    divergence_statistics, log_locations_density, log_path_density, log_tree_density, sample_path,
    DiffusionVariances, DivergenceFunction, ItemGrouping, NodeLocations,
};
use crate::error::{Error, Result};
use crate::gaussian_tree::{self, Evidence};
use crate::init;
use crate::lcm::{
    class_log_joint, draw_categorical, log_sum_exp, loglik_complete, sigmoid,
    ItemResponseProbabilities, ResponseMatrix,
};
use crate::polya_gamma::{pg_mean, sample_pg1};
use crate::rng::{seeded, substream, SimRng};
use crate::tree::{DdtTree, NodeId};

const LN_2PI: f64 = 1.837_877_066_409_345_3;
const STEP_OMEGA: u64 = 1;
const STEP_MEMBERSHIP: u64 = 2;
/// Attempts at drawing a path that diverges before the pruned subtree.
const MAX_PROPOSAL_TRIES: usize = 100;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Hyperparameters {
    /// Symmetric Dirichlet concentration for the class prevalences.
    pub dirichlet_alpha: f64,
    /// Inverse-Gamma prior on each group diffusion variance.
    pub sigma2_shape: f64,
    pub sigma2_rate: f64,
    /// Gamma prior on the divergence parameter.
    pub c_shape: f64,
    pub c_rate: f64,
}

impl Default for Hyperparameters {
    fn default() -> Self {
        Self { dirichlet_alpha: 1.0, sigma2_shape: 2.0, sigma2_rate: 2.0, c_shape: 1.0, c_rate: 1.0 }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub enum LocationUpdate {
    /// Exact Gaussian update after Pólya-Gamma augmentation.
    PolyaGamma,
    /// Random-walk MH on each leaf coordinate, internal nodes drawn exactly.
    RandomWalk { step: f64 },
}

#[derive(Clone, Debug)]
pub struct SamplerConfig {
    pub k: usize,
    pub total_iters: usize,
    pub seed: u64,
    pub initial_tree: Option<DdtTree>,
    pub hyper: Hyperparameters,
    pub topology_moves: usize,
    pub fix_c: bool,
    pub initial_c: f64,
    /// Location of the origin, shared by every item.
    pub root_location: f64,
    pub location_update: LocationUpdate,
    pub check_invariants: bool,
    pub group_names: Vec<String>,
}

impl SamplerConfig {
    pub fn new(k: usize, total_iters: usize) -> Self {
        Self {
            k,
            total_iters,
            seed: 1,
            initial_tree: None,
            hyper: Hyperparameters::default(),
            topology_moves: 1,
            fix_c: false,
            initial_c: 1.0,
            root_location: 0.0,
            location_update: LocationUpdate::PolyaGamma,
            check_invariants: false,
            group_names: Vec::new(),
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.k < 2 {
            return Err(Error::InvalidParameter(format!("K must be at least 2, got {}", self.k)));
        }
        if self.total_iters < 1 {
            return Err(Error::InvalidParameter("total_iters must be at least 1".into()));
        }
        let h = &self.hyper;
        for (name, v) in [
            ("dirichlet_alpha", h.dirichlet_alpha),
            ("sigma2_shape", h.sigma2_shape),
            ("sigma2_rate", h.sigma2_rate),
            ("c_shape", h.c_shape),
            ("c_rate", h.c_rate),
            ("initial_c", self.initial_c),
        ] {
            if !(v > 0.0 && v.is_finite()) {
                return Err(Error::InvalidParameter(format!("{name} must be positive, got {v}")));
            }
        }
        if let LocationUpdate::RandomWalk { step } = self.location_update {
            if !(step > 0.0) {
                return Err(Error::InvalidParameter("random-walk step must be positive".into()));
            }
        }
        if let Some(t) = &self.initial_tree {
            t.validate()?;
            if t.n_leaves() != self.k {
                return Err(Error::Dimension(format!(
                    "initial tree has {} leaves, K = {}",
                    t.n_leaves(),
                    self.k
                )));
            }
        }
        Ok(())
    }
}

/// Full sampler state. Leaf `k` of the tree is class `k`; memberships are
/// 0-based; `omega` is N x J row-major.
#[derive(Clone, Debug)]
pub struct SamplerState {
    pub tree: DdtTree,
    pub locations: NodeLocations,
    pub sigma2: Vec<f64>,
    pub c: f64,
    pub pi: Vec<f64>,
    pub z: Vec<usize>,
    pub omega: Vec<f64>,
    pub log_likelihood: f64,
    pub log_posterior: f64,
}

impl SamplerState {
    pub fn theta(&self) -> ItemResponseProbabilities {
        let k = self.tree.n_leaves();
        ItemResponseProbabilities(
            (0..k).map(|v| self.locations.nodes[v].iter().map(|&x| sigmoid(x)).collect()).collect(),
        )
    }

    pub fn check_invariants(&self, n: usize, j: usize, g: usize) -> Result<()> {
        self.tree.validate()?;
        let k = self.tree.n_leaves();
        if (0..k).any(|v| !self.tree.is_leaf(v)) {
            return Err(Error::InvalidTree("leaves must occupy ids 0..K".into()));
        }
        self.locations.check(&self.tree, j)?;
        if self.locations.nodes.iter().flatten().any(|x| !x.is_finite()) {
            return Err(Error::NonFiniteDensity("non-finite node location".into()));
        }
        if self.sigma2.len() != g || self.sigma2.iter().any(|s| !(*s > 0.0 && s.is_finite())) {
            return Err(Error::InvalidParameter("diffusion variances must be positive".into()));
        }
        if !(self.c > 0.0 && self.c.is_finite()) {
            return Err(Error::InvalidParameter("c must be positive".into()));
        }
        if self.pi.len() != k
            || self.pi.iter().any(|p| !(*p >= 0.0))
            || (self.pi.iter().sum::<f64>() - 1.0).abs() > 1e-9
        {
            return Err(Error::InvalidParameter("class probabilities are not on the simplex".into()));
        }
        if self.z.len() != n || self.z.iter().any(|&z| z >= k) {
            return Err(Error::InvalidParameter("membership out of range".into()));
        }
        if self.omega.len() != n * j || self.omega.iter().any(|w| !(*w > 0.0 && w.is_finite())) {
            return Err(Error::InvalidParameter("Pólya-Gamma auxiliaries must be positive".into()));
        }
        if !self.log_posterior.is_finite() {
            return Err(Error::NonFiniteDensity("log posterior".into()));
        }
        Ok(())
    }
}

/// Counts of topology proposals in one call.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq)]
pub struct TopologyOutcome {
    pub accepted: usize,
    pub rejected: usize,
    pub skipped: usize,
}

/// `log ∫ prod_i N(y_i; x, v_i) dx`.
fn log_gauss_product_integral(terms: &[(f64, f64)]) -> f64 {
    let n = terms.len() as f64;
    let prec: f64 = terms.iter().map(|(_, v)| 1.0 / v).sum();
    let lin: f64 = terms.iter().map(|(y, v)| y / v).sum();
    let quad: f64 = terms.iter().map(|(y, v)| y * y / v).sum();
    let log_v: f64 = terms.iter().map(|(_, v)| v.ln()).sum();
    -0.5 * (n - 1.0) * LN_2PI - 0.5 * log_v - 0.5 * prec.ln() - 0.5 * (quad - lin * lin / prec)
}

fn log_normal(x: f64, mean: f64, var: f64) -> f64 {
    -0.5 * (LN_2PI + var.ln()) - 0.5 * (x - mean).powi(2) / var
}

/// Location log-density with the location of `p` integrated out.
pub fn log_locations_density_without(
    tree: &DdtTree,
    locations: &NodeLocations,
    grouping: &ItemGrouping,
    sigma2: &[f64],
    p: NodeId,
) -> f64 {
    let dim = locations.dim();
    let mut logp = 0.0;
    for v in 0..tree.n_nodes() {
        if v == p || tree.parent(v) == Some(p) {
            continue;
        }
        let len = tree.branch_length(v);
        if len <= 0.0 {
            continue;
        }
        let parent = locations.parent_location(tree, v);
        for j in 0..dim {
            logp += log_normal(locations.nodes[v][j], parent[j], sigma2[grouping.group_of(j)] * len);
        }
    }
    let [a, b] = tree.children(p).expect("p is internal");
    let up = locations.parent_location(tree, p);
    let lp = tree.branch_length(p);
    let (la, lb) = (tree.branch_length(a), tree.branch_length(b));
    for j in 0..dim {
        let s2 = sigma2[grouping.group_of(j)];
        let (ya, yb) = (locations.nodes[a][j], locations.nodes[b][j]);
        logp += if lp > 0.0 {
            log_gauss_product_integral(&[(up[j], s2 * lp), (ya, s2 * la), (yb, s2 * lb)])
        } else {
            log_normal(ya, up[j], s2 * la) + log_normal(yb, up[j], s2 * lb)
        };
    }
    logp
}

/// Draw the location of internal node `p` from its full conditional given
/// its parent (or the origin) and two children.
pub fn sample_node_given_neighbours<R: Rng + ?Sized>(
    tree: &DdtTree,
    locations: &mut NodeLocations,
    grouping: &ItemGrouping,
    sigma2: &[f64],
    p: NodeId,
    rng: &mut R,
) {
    let [a, b] = tree.children(p).expect("p is internal");
    let lp = tree.branch_length(p);
    let (la, lb) = (tree.branch_length(a), tree.branch_length(b));
    for j in 0..locations.dim() {
        let up = locations.parent_location(tree, p)[j];
        if lp <= 0.0 {
            locations.nodes[p][j] = up;
            continue;
        }
        let s2 = sigma2[grouping.group_of(j)];
        let terms = [(up, s2 * lp), (locations.nodes[a][j], s2 * la), (locations.nodes[b][j], s2 * lb)];
        let prec: f64 = terms.iter().map(|(_, v)| 1.0 / v).sum();
        let mean = terms.iter().map(|(y, v)| y / v).sum::<f64>() / prec;
        let e: f64 = StandardNormal.sample(rng);
        locations.nodes[p][j] = mean + e / prec.sqrt();
    }
}

/// Log acceptance ratio of moving subtree `x` onto the edge above `w` at
/// `time`, together with the proposed tree.
pub fn regraft_log_ratio(
    tree: &DdtTree,
    locations: &NodeLocations,
    grouping: &ItemGrouping,
    sigma2: &[f64],
    div: &DivergenceFunction,
    x: NodeId,
    w: NodeId,
    time: f64,
) -> Result<(f64, DdtTree)> {
    let p = tree.parent(x).ok_or_else(|| Error::InvalidEdit("cannot move the root".into()))?;
    let d = tree.detach_inner(x)?;
    let w_r = d
        .remnant_origin
        .iter()
        .position(|&v| v == w)
        .ok_or_else(|| Error::InvalidEdit("target edge is not in the remnant".into()))?;
    let mut proposed = tree.clone();
    proposed.regraft(x, w, time)?;
    let log_q_fwd = log_path_density(&d.remnant, div, w_r, time);
    let log_q_rev = log_path_density(&d.remnant, div, d.attach_edge, d.attach_time);
    let prior = log_tree_density(&proposed, div)? - log_tree_density(tree, div)?;
    let locs = log_locations_density_without(&proposed, locations, grouping, sigma2, p)
        - log_locations_density_without(tree, locations, grouping, sigma2, p);
    Ok((prior + log_q_rev - log_q_fwd + locs, proposed))
}

/// Prune/regraft MH moves. Leaf locations are untouched; the moved parent
/// node's location is integrated out of the ratio and redrawn on acceptance.
pub fn step_tree_topology<R: Rng + ?Sized>(
    tree: &mut DdtTree,
    locations: &mut NodeLocations,
    grouping: &ItemGrouping,
    sigma2: &[f64],
    div: &DivergenceFunction,
    moves: usize,
    rng: &mut R,
) -> Result<TopologyOutcome> {
    let mut out = TopologyOutcome::default();
    for _ in 0..moves {
        if tree.n_leaves() < 2 {
            out.skipped += 1;
            continue;
        }
        let root = tree.root();
        let pick = rng.random_range(0..tree.n_nodes() - 1);
        let x = if pick >= root { pick + 1 } else { pick };
        let p = tree.parent(x).unwrap();
        let d = tree.detach_inner(x)?;
        let tx = tree.time(x);
        let proposal = (0..MAX_PROPOSAL_TRIES).find_map(|_| sample_path(&d.remnant, div, tx, rng));
        let Some((w_r, time)) = proposal else {
            out.skipped += 1;
            continue;
        };
        let w = d.remnant_origin[w_r];
        let (log_ratio, proposed) =
            match regraft_log_ratio(tree, locations, grouping, sigma2, div, x, w, time) {
                Ok(r) => r,
                Err(_) => {
                    out.skipped += 1;
                    continue;
                }
            };
        if !log_ratio.is_nan() && rng.random::<f64>().ln() < log_ratio {
            *tree = proposed;
            sample_node_given_neighbours(tree, locations, grouping, sigma2, p, rng);
            out.accepted += 1;
        } else {
            out.rejected += 1;
        }
    }
    Ok(out)
}

/// Draw `omega_ij ~ PG(1, eta_{z_i, j})` for every cell.
pub fn step_pg_auxiliary(
    omega: &mut [f64],
    locations: &NodeLocations,
    z: &[usize],
    n_items: usize,
    seed: u64,
    iteration: u64,
) {
    omega.par_chunks_mut(n_items).enumerate().for_each(|(i, row)| {
        let mut rng = substream(seed, iteration, STEP_OMEGA, i as u64);
        let eta = &locations.nodes[z[i]];
        for (w, &e) in row.iter_mut().zip(eta) {
            *w = sample_pg1(e, &mut rng);
        }
    });
}

/// Per-class, per-item Gaussian factors implied by the augmentation:
/// precision `sum omega`, potential `sum (y - 1/2)`.
pub fn class_factors(
    data: &ResponseMatrix,
    z: &[usize],
    omega: &[f64],
    k: usize,
) -> (Vec<Vec<f64>>, Vec<Vec<f64>>) {
    let j = data.n_cols();
    let mut prec = vec![vec![0.0; j]; k];
    let mut pot = vec![vec![0.0; j]; k];
    for (i, row) in data.rows().enumerate() {
        let c = z[i];
        for jj in 0..j {
            prec[c][jj] += omega[i * j + jj];
            pot[c][jj] += row[jj] as f64 - 0.5;
        }
    }
    (prec, pot)
}

/// Joint draw of all node locations given leaf Gaussian factors.
pub fn step_leaf_locations<R: Rng + ?Sized>(
    tree: &DdtTree,
    locations: &mut NodeLocations,
    grouping: &ItemGrouping,
    sigma2: &[f64],
    precision: &[Vec<f64>],
    potential: &[Vec<f64>],
    rng: &mut R,
) {
    let n = tree.n_nodes();
    let k = tree.n_leaves();
    let mut evidence = vec![Evidence::None; n];
    for j in 0..locations.dim() {
        for v in 0..k {
            evidence[v] = Evidence::Factor { precision: precision[v][j], potential: potential[v][j] };
        }
        let draw = gaussian_tree::sample(
            tree,
            locations.origin[j],
            sigma2[grouping.group_of(j)],
            &evidence,
            rng,
        );
        for (v, x) in draw.into_iter().enumerate() {
            locations.nodes[v][j] = x;
        }
    }
}

/// Random-walk MH on leaf coordinates followed by an exact draw of internal
/// nodes given the leaves.
#[allow(clippy::too_many_arguments)]
pub fn step_locations_random_walk<R: Rng + ?Sized>(
    tree: &DdtTree,
    locations: &mut NodeLocations,
    grouping: &ItemGrouping,
    sigma2: &[f64],
    data: &ResponseMatrix,
    z: &[usize],
    step: f64,
    rng: &mut R,
) {
    let k = tree.n_leaves();
    let j = data.n_cols();
    let mut ones = vec![vec![0.0; j]; k];
    let mut counts = vec![0.0; k];
    for (i, row) in data.rows().enumerate() {
        counts[z[i]] += 1.0;
        for jj in 0..j {
            ones[z[i]][jj] += row[jj] as f64;
        }
    }
    let target = |eta: f64, n1: f64, n: f64, mean: f64, var: f64| {
        let lp = sigmoid(eta).ln();
        let lq = (1.0 - sigmoid(eta)).ln();
        n1 * lp + (n - n1) * lq + log_normal(eta, mean, var)
    };
    for v in 0..k {
        let var_scale = tree.branch_length(v);
        for jj in 0..j {
            let parent = locations.parent_location(tree, v)[jj];
            let var = sigma2[grouping.group_of(jj)] * var_scale;
            let cur = locations.nodes[v][jj];
            let e: f64 = StandardNormal.sample(rng);
            let prop = cur + step * e;
            let log_a = target(prop, ones[v][jj], counts[v], parent, var)
                - target(cur, ones[v][jj], counts[v], parent, var);
            if rng.random::<f64>().ln() < log_a {
                locations.nodes[v][jj] = prop;
            }
        }
    }
    let n = tree.n_nodes();
    for jj in 0..j {
        let evidence: Vec<Evidence> = (0..n)
            .map(|v| if v < k { Evidence::Observed(locations.nodes[v][jj]) } else { Evidence::None })
            .collect();
        let draw = gaussian_tree::sample(
            tree,
            locations.origin[jj],
            sigma2[grouping.group_of(jj)],
            &evidence,
            rng,
        );
        for v in k..n {
            locations.nodes[v][jj] = draw[v];
        }
    }
}

/// Inverse-Gamma posterior `(shape, rate)` of each group variance.
pub fn diffusion_variance_posterior(
    tree: &DdtTree,
    locations: &NodeLocations,
    grouping: &ItemGrouping,
    hyper: &Hyperparameters,
) -> Vec<(f64, f64)> {
    let g = grouping.n_groups();
    let mut count = vec![0.0; g];
    let mut ss = vec![0.0; g];
    for v in 0..tree.n_nodes() {
        let len = tree.branch_length(v);
        if len <= 0.0 {
            continue;
        }
        let parent = locations.parent_location(tree, v);
        for j in 0..locations.dim() {
            let gi = grouping.group_of(j);
            count[gi] += 1.0;
            ss[gi] += (locations.nodes[v][j] - parent[j]).powi(2) / len;
        }
    }
    (0..g)
        .map(|gi| (hyper.sigma2_shape + 0.5 * count[gi], hyper.sigma2_rate + 0.5 * ss[gi]))
        .collect()
}

pub fn step_diffusion_variances<R: Rng + ?Sized>(
    tree: &DdtTree,
    locations: &NodeLocations,
    grouping: &ItemGrouping,
    hyper: &Hyperparameters,
    rng: &mut R,
) -> Vec<f64> {
    diffusion_variance_posterior(tree, locations, grouping, hyper)
        .into_iter()
        .map(|(shape, rate)| {
            let g = Gamma::new(shape, 1.0 / rate).expect("positive gamma parameters");
            1.0 / g.sample(rng)
        })
        .collect()
}

/// Gamma posterior `(shape, rate)` of the divergence parameter.
pub fn divergence_posterior(tree: &DdtTree, hyper: &Hyperparameters) -> (f64, f64) {
    let s = divergence_statistics(tree);
    (hyper.c_shape + s.n_internal as f64, hyper.c_rate + s.rate_term)
}

pub fn step_divergence_parameter<R: Rng + ?Sized>(
    tree: &DdtTree,
    hyper: &Hyperparameters,
    rng: &mut R,
) -> f64 {
    let (shape, rate) = divergence_posterior(tree, hyper);
    let c = Gamma::new(shape, 1.0 / rate).expect("positive gamma parameters").sample(rng);
    c.max(f64::MIN_POSITIVE)
}

/// `z_i ~ p(z_i | y_i, theta, pi)` for every row.
pub fn step_memberships(
    data: &ResponseMatrix,
    theta: &ItemResponseProbabilities,
    pi: &[f64],
    seed: u64,
    iteration: u64,
) -> Vec<usize> {
    (0..data.n_rows())
        .into_par_iter()
        .map(|i| {
            let mut rng = substream(seed, iteration, STEP_MEMBERSHIP, i as u64);
            let lj = class_log_joint(data.row(i), theta, pi);
            let norm = log_sum_exp(&lj);
            let probs: Vec<f64> = lj.iter().map(|x| (x - norm).exp()).collect();
            draw_categorical(&probs, &mut rng)
        })
        .collect()
}

/// `pi ~ Dirichlet(alpha + counts)`.
pub fn step_class_probability<R: Rng + ?Sized>(
    z: &[usize],
    k: usize,
    alpha: f64,
    rng: &mut R,
) -> Vec<f64> {
    let mut counts = vec![0.0; k];
    for &c in z {
        counts[c] += 1.0;
    }
    loop {
        let draws: Vec<f64> = counts
            .iter()
            .map(|n| Gamma::new(alpha + n, 1.0).expect("positive shape").sample(rng))
            .collect();
        let s: f64 = draws.iter().sum();
        if s > 0.0 && s.is_finite() {
            return draws.iter().map(|d| d / s).collect();
        }
    }
}

fn log_inverse_gamma(x: f64, shape: f64, rate: f64) -> f64 {
    shape * rate.ln() - ln_gamma(shape) - (shape + 1.0) * x.ln() - rate / x
}

fn log_gamma_density(x: f64, shape: f64, rate: f64) -> f64 {
    shape * rate.ln() - ln_gamma(shape) + (shape - 1.0) * x.ln() - rate * x
}

pub struct Sampler {
    config: SamplerConfig,
    data: ResponseMatrix,
    grouping: ItemGrouping,
    state: SamplerState,
    rng: SimRng,
    iteration: u64,
    accepted: usize,
    skipped: usize,
}

impl Sampler {
    pub fn new(data: ResponseMatrix, grouping: ItemGrouping, config: SamplerConfig) -> Result<Self> {
        Self::check_inputs(&data, &grouping, &config)?;
        let mut rng = seeded(config.seed);
        let k = config.k;
        let labels = init::kmeans(&data, k, &mut rng);
        let means = init::class_means(&data, &labels, k);
        let tree = match &config.initial_tree {
            Some(t) => {
                let leaves = t.leaf_labels();
                t.relabel_leaves(|l| {
                    format!("v{}", leaves.iter().position(|x| x == l).unwrap() + 1)
                })?
            }
            None => init::linkage_tree(&means)?,
        };
        let leaf_eta = init::logit_means(&means);
        let j = data.n_cols();
        let origin = vec![config.root_location; j];
        let mut nodes = vec![vec![0.0; j]; tree.n_nodes()];
        for v in tree.postorder() {
            nodes[v] = match tree.children(v) {
                None => leaf_eta[v].clone(),
                Some([a, b]) => nodes[a].iter().zip(&nodes[b]).map(|(x, y)| 0.5 * (x + y)).collect(),
            };
        }
        if tree.root_edge_length() == 0.0 {
            nodes[tree.root()] = origin.clone();
        }
        let locations = NodeLocations { origin, nodes };
        let omega: Vec<f64> = (0..data.n_rows())
            .flat_map(|i| leaf_eta[labels[i]].iter().map(|&e| pg_mean(e)).collect::<Vec<_>>())
            .collect();
        let state = SamplerState {
            tree,
            locations,
            sigma2: vec![1.0; grouping.n_groups()],
            c: config.initial_c,
            pi: vec![1.0 / k as f64; k],
            z: labels,
            omega,
            log_likelihood: 0.0,
            log_posterior: 0.0,
        };
        let mut s = Self { config, data, grouping, state, rng, iteration: 0, accepted: 0, skipped: 0 };
        s.refresh_log_posterior()?;
        Ok(s)
    }

    /// Start from a given state instead of the default initialization.
    pub fn with_state(
        data: ResponseMatrix,
        grouping: ItemGrouping,
        config: SamplerConfig,
        state: SamplerState,
    ) -> Result<Self> {
        Self::check_inputs(&data, &grouping, &config)?;
        let rng = seeded(config.seed);
        let mut s = Self { config, data, grouping, state, rng, iteration: 0, accepted: 0, skipped: 0 };
        s.refresh_log_posterior()?;
        Ok(s)
    }

    fn check_inputs(data: &ResponseMatrix, grouping: &ItemGrouping, config: &SamplerConfig) -> Result<()> {
        config.validate()?;
        if data.n_cols() != grouping.n_items() {
            return Err(Error::Dimension(format!(
                "data has {} items but the grouping covers {}",
                data.n_cols(),
                grouping.n_items()
            )));
        }
        if config.k > data.n_rows() {
            return Err(Error::InvalidParameter(format!(
                "K = {} exceeds the number of observations N = {}",
                config.k,
                data.n_rows()
            )));
        }
        if !config.group_names.is_empty() && config.group_names.len() != grouping.n_groups() {
            return Err(Error::Dimension("group names do not match the grouping".into()));
        }
        Ok(())
    }

    pub fn state(&self) -> &SamplerState {
        &self.state
    }

    pub fn state_mut(&mut self) -> &mut SamplerState {
        &mut self.state
    }

    pub fn data(&self) -> &ResponseMatrix {
        &self.data
    }

    /// Swap in new responses of the same shape.
    pub fn set_data(&mut self, data: ResponseMatrix) -> Result<()> {
        if data.n_rows() != self.data.n_rows() || data.n_cols() != self.data.n_cols() {
            return Err(Error::Dimension("replacement data must keep its shape".into()));
        }
        self.data = data;
        Ok(())
    }

    pub fn rng(&mut self) -> &mut SimRng {
        &mut self.rng
    }

    pub fn divergence(&self) -> DivergenceFunction {
        DivergenceFunction::new(self.state.c).expect("c stays positive")
    }

    /// Recompute the cached log-likelihood and log-posterior.
    pub fn refresh_log_posterior(&mut self) -> Result<()> {
        let st = &self.state;
        let theta = st.theta();
        let loglik = loglik_complete(&self.data, &st.z, &theta, &st.pi)?;
        let h = &self.config.hyper;
        let k = st.pi.len() as f64;
        let log_dir = ln_gamma(h.dirichlet_alpha * k) - k * ln_gamma(h.dirichlet_alpha)
            + st.pi.iter().map(|p| (h.dirichlet_alpha - 1.0) * p.ln()).sum::<f64>();
        let div = DivergenceFunction::new(st.c)?;
        let log_tree = log_tree_density(&st.tree, &div)?;
        let variances = DiffusionVariances::new(st.sigma2.clone())?;
        let log_loc = log_locations_density(&st.tree, &st.locations, &self.grouping, &variances)?;
        let log_s2: f64 =
            st.sigma2.iter().map(|&s| log_inverse_gamma(s, h.sigma2_shape, h.sigma2_rate)).sum();
        let log_c = if self.config.fix_c { 0.0 } else { log_gamma_density(st.c, h.c_shape, h.c_rate) };
        let lp = loglik + log_dir + log_tree + log_loc + log_s2 + log_c;
        self.state.log_likelihood = loglik;
        self.state.log_posterior = lp;
        Ok(())
    }

    /// One full sweep. Returns the topology move counts.
    pub fn sweep(&mut self) -> Result<TopologyOutcome> {
        self.iteration += 1;
        let it = self.iteration;
        let seed = self.config.seed;
        let k = self.config.k;
        let div = self.divergence();
        let st = &mut self.state;

        let topo = step_tree_topology(
            &mut st.tree,
            &mut st.locations,
            &self.grouping,
            &st.sigma2,
            &div,
            self.config.topology_moves,
            &mut self.rng,
        )?;
        self.accepted += topo.accepted;
        self.skipped += topo.skipped;

        match self.config.location_update {
            LocationUpdate::PolyaGamma => {
                step_pg_auxiliary(&mut st.omega, &st.locations, &st.z, self.data.n_cols(), seed, it);
                let (prec, pot) = class_factors(&self.data, &st.z, &st.omega, k);
                step_leaf_locations(
                    &st.tree,
                    &mut st.locations,
                    &self.grouping,
                    &st.sigma2,
                    &prec,
                    &pot,
                    &mut self.rng,
                );
            }
            LocationUpdate::RandomWalk { step } => {
                step_locations_random_walk(
                    &st.tree,
                    &mut st.locations,
                    &self.grouping,
                    &st.sigma2,
                    &self.data,
                    &st.z,
                    step,
                    &mut self.rng,
                );
            }
        }

        st.sigma2 = step_diffusion_variances(
            &st.tree,
            &st.locations,
            &self.grouping,
            &self.config.hyper,
            &mut self.rng,
        );
        if !self.config.fix_c {
            st.c = step_divergence_parameter(&st.tree, &self.config.hyper, &mut self.rng);
        }
        let theta = st.theta();
        st.z = step_memberships(&self.data, &theta, &st.pi, seed, it);
        st.pi = step_class_probability(&st.z, k, self.config.hyper.dirichlet_alpha, &mut self.rng);

        self.refresh_log_posterior()?;
        if self.config.check_invariants {
            self.state.check_invariants(self.data.n_rows(), self.data.n_cols(), self.grouping.n_groups())?;
        }
        Ok(topo)
    }

    pub fn snapshot(&self, topology_accepted: bool) -> Snapshot {
        let st = &self.state;
        Snapshot {
            iteration: self.iteration as usize,
            tree: st.tree.to_newick(),
            theta: st.theta().0,
            class_probability: st.pi.clone(),
            sigma2: st.sigma2.clone(),
            c: st.c,
            memberships: st.z.iter().map(|z| z + 1).collect(),
            log_posterior: st.log_posterior,
            topology_accepted,
        }
    }

    pub fn run(mut self) -> Result<PosteriorChain> {
        let start = Instant::now();
        let mut snapshots = Vec::with_capacity(self.config.total_iters);
        for _ in 0..self.config.total_iters {
            let topo = self.sweep()?;
            if !self.state.log_posterior.is_finite() {
                return Err(Error::NonFiniteDensity(format!(
                    "log posterior at iteration {}",
                    self.iteration
                )));
            }
            snapshots.push(self.snapshot(topo.accepted > 0));
        }
        let group_names = if self.config.group_names.is_empty() {
            (1..=self.grouping.n_groups()).map(|g| format!("group_{g}")).collect()
        } else {
            self.config.group_names.clone()
        };
        let meta = ChainMeta {
            schema_version: CHAIN_SCHEMA_VERSION,
            n_observations: self.data.n_rows(),
            n_items: self.data.n_cols(),
            n_groups: self.grouping.n_groups(),
            n_classes: self.config.k,
            total_iters: self.config.total_iters,
            seed: self.config.seed,
            wall_time_secs: start.elapsed().as_secs_f64(),
            item_labels: self.data.col_ids.clone(),
            group_names,
            item_membership: self.grouping.memberships(),
            hyperparameters: self.config.hyper.clone(),
            topology_moves_per_iter: self.config.topology_moves,
            topology_proposal: "prune-regraft; reattachment drawn as a new diffusion-tree path \
                                through the remnant, truncated before the pruned node"
                .into(),
            location_update: match self.config.location_update {
                LocationUpdate::PolyaGamma => "polya-gamma".into(),
                LocationUpdate::RandomWalk { step } => format!("random-walk(step={step})"),
            },
            fix_c: self.config.fix_c,
            accepted_topology_moves: self.accepted,
            skipped_topology_moves: self.skipped,
        };
        Ok(PosteriorChain { meta, snapshots })
    }
}

/// Fit the model and return the full chain.
pub fn ddtlcm_fit(
    k: usize,
    data: &ResponseMatrix,
    grouping: &ItemGrouping,
    config: &SamplerConfig,
) -> Result<PosteriorChain> {
    if k != config.k {
        return Err(Error::InvalidParameter(format!("K = {k} but config.k = {}", config.k)));
    }
    Sampler::new(data.clone(), grouping.clone(), config.clone())?.run()
}
