//! Dirichlet diffusion tree prior over class profiles.
//!
//! Leaves are added one at a time. A new path starts at the origin and follows
//! existing edges; on an edge previously traversed by `m` paths it diverges at
//! time `t` with hazard `a(t)/m`, where `a(t) = c/(1-t)`. At an existing
//! branch point it picks a branch with probability proportional to the number
//! of paths that went each way. Node locations then diffuse along the tree as
//! independent Brownian motions per item, with one variance per item group.

use rand::Rng;
use rand_distr::{Distribution, Exp1, StandardNormal};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::tree::{DdtTree, NodeId};

/// Sampled divergence times are kept inside `[TIME_EPS, 1 - TIME_EPS]`.
pub const TIME_EPS: f64 = 1e-10;

const LN_2PI: f64 = 1.837_877_066_409_345_3;

/// Divergence hazard `a(t) = c / (1 - t)`.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct DivergenceFunction {
    c: f64,
}

impl DivergenceFunction {
    pub fn new(c: f64) -> Result<Self> {
        if !(c > 0.0 && c.is_finite()) {
            return Err(Error::InvalidParameter(format!("divergence parameter c = {c} must be > 0")));
        }
        Ok(Self { c })
    }

    pub fn c(&self) -> f64 {
        self.c
    }

    pub fn rate(&self, t: f64) -> f64 {
        self.c / (1.0 - t)
    }

    /// `A(t) = -c log(1 - t)`.
    pub fn cumulative(&self, t: f64) -> f64 {
        -self.c * (-t).ln_1p()
    }

    pub fn inverse_cumulative(&self, a: f64) -> f64 {
        -(-a / self.c).exp_m1()
    }
}

/// One diffusion variance per item group.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct DiffusionVariances(Vec<f64>);

impl DiffusionVariances {
    pub fn new(values: Vec<f64>) -> Result<Self> {
        if values.is_empty() {
            return Err(Error::InvalidParameter("no diffusion variances".into()));
        }
        if let Some(v) = values.iter().find(|v| !(**v > 0.0 && v.is_finite())) {
            return Err(Error::InvalidParameter(format!("diffusion variance {v} must be > 0")));
        }
        Ok(Self(values))
    }

    pub fn as_slice(&self) -> &[f64] {
        &self.0
    }

    pub fn get(&self, g: usize) -> f64 {
        self.0[g]
    }

    pub fn len(&self) -> usize {
        self.0.len()
    }

    pub fn is_empty(&self) -> bool {
        self.0.is_empty()
    }
}

/// Partition of items into major groups.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ItemGrouping {
    group_of: Vec<usize>,
    n_groups: usize,
}

impl ItemGrouping {
    /// Build from 0-based group indices, one per item.
    pub fn from_group_of(group_of: Vec<usize>) -> Result<Self> {
        if group_of.is_empty() {
            return Err(Error::InvalidParameter("grouping has no items".into()));
        }
        let n_groups = group_of.iter().max().unwrap() + 1;
        let mut seen = vec![false; n_groups];
        for &g in &group_of {
            seen[g] = true;
        }
        if let Some(g) = seen.iter().position(|s| !s) {
            return Err(Error::InvalidParameter(format!("group {} is empty", g + 1)));
        }
        Ok(Self { group_of, n_groups })
    }

    /// Build from lists of 1-based item indices, one list per group.
    pub fn from_memberships(groups: &[Vec<usize>]) -> Result<Self> {
        let n_items: usize = groups.iter().map(Vec::len).sum();
        let mut group_of = vec![usize::MAX; n_items];
        for (g, items) in groups.iter().enumerate() {
            if items.is_empty() {
                return Err(Error::InvalidParameter(format!("group {} is empty", g + 1)));
            }
            for &j in items {
                if j == 0 || j > n_items {
                    return Err(Error::InvalidParameter(format!(
                        "item index {j} in group {} is outside 1..={n_items}",
                        g + 1
                    )));
                }
                if group_of[j - 1] != usize::MAX {
                    return Err(Error::InvalidParameter(format!("item {j} belongs to two groups")));
                }
                group_of[j - 1] = g;
            }
        }
        Self::from_group_of(group_of)
    }

    pub fn n_items(&self) -> usize {
        self.group_of.len()
    }

    pub fn n_groups(&self) -> usize {
        self.n_groups
    }

    pub fn group_of(&self, j: usize) -> usize {
        self.group_of[j]
    }

    pub fn group_indices(&self) -> &[usize] {
        &self.group_of
    }

    /// 0-based item indices of group `g`.
    pub fn members(&self, g: usize) -> Vec<usize> {
        (0..self.group_of.len()).filter(|&j| self.group_of[j] == g).collect()
    }

    /// 1-based membership lists.
    pub fn memberships(&self) -> Vec<Vec<usize>> {
        (0..self.n_groups)
            .map(|g| self.members(g).into_iter().map(|j| j + 1).collect())
            .collect()
    }

    pub fn group_sizes(&self) -> Vec<usize> {
        let mut s = vec![0; self.n_groups];
        for &g in &self.group_of {
            s[g] += 1;
        }
        s
    }
}

/// Logit-scale profile vector at every tree node, plus the fixed location of
/// the origin above the root edge.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct NodeLocations {
    pub origin: Vec<f64>,
    pub nodes: Vec<Vec<f64>>,
}

impl NodeLocations {
    pub fn dim(&self) -> usize {
        self.origin.len()
    }

    pub fn node(&self, v: NodeId) -> &[f64] {
        &self.nodes[v]
    }

    /// Location of the parent of `v`, or the origin for the root.
    pub fn parent_location<'a>(&'a self, tree: &DdtTree, v: NodeId) -> &'a [f64] {
        match tree.parent(v) {
            Some(p) => &self.nodes[p],
            None => &self.origin,
        }
    }

    pub fn check(&self, tree: &DdtTree, dim: usize) -> Result<()> {
        if self.nodes.len() != tree.n_nodes() {
            return Err(Error::Dimension(format!(
                "{} node locations for a tree with {} nodes",
                self.nodes.len(),
                tree.n_nodes()
            )));
        }
        if self.origin.len() != dim || self.nodes.iter().any(|v| v.len() != dim) {
            return Err(Error::Dimension(format!("node locations must have length {dim}")));
        }
        if tree.root_edge_length() == 0.0 && self.nodes[tree.root()] != self.origin {
            return Err(Error::InvalidParameter(
                "root sits at time 0 but its location differs from the root location".into(),
            ));
        }
        Ok(())
    }
}

pub fn clamp_time(t: f64) -> f64 {
    t.clamp(TIME_EPS, 1.0 - TIME_EPS)
}

/// Draw a divergence time on a segment starting at `start` that is shared by
/// `m` earlier paths. Returns `None` if the path reaches `end` first.
fn divergence_on_segment<R: Rng + ?Sized>(
    div: &DivergenceFunction,
    start: f64,
    end: f64,
    m: usize,
    rng: &mut R,
) -> Option<f64> {
    let e: f64 = Exp1.sample(rng);
    // A(t) = A(start) + m e  =>  1 - t = (1 - start) exp(-m e / c)
    let t = 1.0 - (1.0 - start) * (-(m as f64) * e / div.c()).exp();
    // on a leaf segment the draw can round to 1 for tiny c
    if t >= end && end < 1.0 {
        return None;
    }
    let mut t = clamp_time(t);
    if t >= end || t < start {
        t = 0.5 * (start + end);
    }
    Some(t)
}

/// Simulate a new path through `tree` and return where it diverges: the
/// node whose parent edge holds the divergence, and the time. Returns `None`
/// when the path has not diverged before `max_time`.
pub fn sample_path<R: Rng + ?Sized>(
    tree: &DdtTree,
    div: &DivergenceFunction,
    max_time: f64,
    rng: &mut R,
) -> Option<(NodeId, f64)> {
    let m = tree.leaf_counts();
    let mut v = tree.root();
    let mut start = 0.0;
    loop {
        if start >= max_time {
            return None;
        }
        let end = tree.time(v);
        if let Some(t) = divergence_on_segment(div, start, end, m[v], rng) {
            return if t < max_time { Some((v, t)) } else { None };
        }
        let [a, b] = tree
            .children(v)
            .expect("leaf segments end at time 1 and always diverge");
        let u: f64 = rng.random::<f64>() * m[v] as f64;
        v = if u < m[a] as f64 { a } else { b };
        start = end;
    }
}

/// Log density of a new path diverging at `time` on the edge above `edge`.
pub fn log_path_density(tree: &DdtTree, div: &DivergenceFunction, edge: NodeId, time: f64) -> f64 {
    let m = tree.leaf_counts();
    let mut path = vec![edge];
    while let Some(p) = tree.parent(*path.last().unwrap()) {
        path.push(p);
    }
    path.reverse();
    let mut logp = 0.0;
    let mut start = 0.0;
    for (i, &v) in path.iter().enumerate() {
        let mv = m[v] as f64;
        if v == edge {
            logp += div.rate(time).ln() - mv.ln()
                - (div.cumulative(time) - div.cumulative(start)) / mv;
            break;
        }
        logp -= (div.cumulative(tree.time(v)) - div.cumulative(start)) / mv;
        logp += (m[path[i + 1]] as f64 / mv).ln();
        start = tree.time(v);
    }
    logp
}

/// Sample a K-leaf tree by sequential path construction. Leaves are labelled
/// `v1..vK` in insertion order.
pub fn sample_ddt_tree<R: Rng + ?Sized>(
    k: usize,
    div: &DivergenceFunction,
    rng: &mut R,
) -> Result<DdtTree> {
    if k < 2 {
        return Err(Error::InvalidParameter(format!("need at least 2 leaves, got {k}")));
    }
    let mut tree = DdtTree::single_leaf("v1".into());
    for i in 2..=k {
        let (w, t) = sample_path(&tree, div, f64::INFINITY, rng)
            .expect("unbounded path always diverges");
        tree.insert_leaf(w, t, format!("v{i}"));
    }
    Ok(tree.canonical())
}

fn harmonic(n: usize) -> f64 {
    (1..=n).map(|i| 1.0 / i as f64).sum()
}

fn ln_factorial(n: usize) -> f64 {
    (2..=n).map(|i| (i as f64).ln()).sum()
}

/// Sufficient statistics of a tree for the divergence parameter: the tree
/// density is `n_internal * log c - c * rate_term + const`.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct DivergenceStatistics {
    pub n_internal: usize,
    pub rate_term: f64,
}

pub fn divergence_statistics(tree: &DdtTree) -> DivergenceStatistics {
    let m = tree.leaf_counts();
    let mut rate_term = 0.0;
    for v in tree.internal_nodes() {
        let h = harmonic(m[v] - 1);
        // (A(t_v) - A(t_parent)) / c
        rate_term += h * (-(-tree.time(v)).ln_1p() + (-tree.parent_time(v)).ln_1p());
    }
    DivergenceStatistics { n_internal: tree.n_leaves() - 1, rate_term }
}

/// Log density of the tree (structure and divergence times) under the prior.
pub fn log_tree_density(tree: &DdtTree, div: &DivergenceFunction) -> Result<f64> {
    let m = tree.leaf_counts();
    let mut logp = 0.0;
    for v in tree.internal_nodes() {
        let t = tree.time(v);
        if t >= 1.0 {
            return Err(Error::NonFiniteDensity(format!(
                "internal node {v} diverges at time {t}"
            )));
        }
        let [a, b] = tree.children(v).unwrap();
        logp += div.rate(t).ln() + ln_factorial(m[a] - 1) + ln_factorial(m[b] - 1)
            - ln_factorial(m[v] - 1);
        logp += (div.cumulative(tree.parent_time(v)) - div.cumulative(t)) * harmonic(m[v] - 1);
    }
    if !logp.is_finite() {
        return Err(Error::NonFiniteDensity("tree density".into()));
    }
    Ok(logp)
}

fn check_dims(grouping: &ItemGrouping, variances: &DiffusionVariances, dim: usize) -> Result<()> {
    if grouping.n_groups() != variances.len() {
        return Err(Error::Dimension(format!(
            "{} groups but {} diffusion variances",
            grouping.n_groups(),
            variances.len()
        )));
    }
    if grouping.n_items() != dim {
        return Err(Error::Dimension(format!(
            "grouping covers {} items but locations have length {dim}",
            grouping.n_items()
        )));
    }
    Ok(())
}

/// Diffuse locations from the origin down the tree.
pub fn diffuse_locations<R: Rng + ?Sized>(
    tree: &DdtTree,
    grouping: &ItemGrouping,
    variances: &DiffusionVariances,
    root_location: &[f64],
    rng: &mut R,
) -> Result<NodeLocations> {
    let dim = root_location.len();
    check_dims(grouping, variances, dim)?;
    let mut nodes = vec![Vec::new(); tree.n_nodes()];
    for v in tree.preorder() {
        let parent: &[f64] = match tree.parent(v) {
            Some(p) => &nodes[p],
            None => root_location,
        };
        let len = tree.branch_length(v);
        let loc: Vec<f64> = (0..dim)
            .map(|j| {
                let z: f64 = StandardNormal.sample(rng);
                parent[j] + (variances.get(grouping.group_of(j)) * len).sqrt() * z
            })
            .collect();
        nodes[v] = loc;
    }
    Ok(NodeLocations { origin: root_location.to_vec(), nodes })
}

/// Sum of Gaussian increment log-densities over all edges and items. A root
/// edge of length zero pins the root to the origin and contributes nothing.
pub fn log_locations_density(
    tree: &DdtTree,
    locations: &NodeLocations,
    grouping: &ItemGrouping,
    variances: &DiffusionVariances,
) -> Result<f64> {
    let dim = locations.dim();
    check_dims(grouping, variances, dim)?;
    let mut logp = 0.0;
    for v in 0..tree.n_nodes() {
        let len = tree.branch_length(v);
        if len <= 0.0 {
            if v == tree.root() && len == 0.0 {
                continue;
            }
            return Err(Error::NonFiniteDensity(format!("nonpositive branch length above node {v}")));
        }
        let parent = locations.parent_location(tree, v);
        let child = locations.node(v);
        for j in 0..dim {
            let var = variances.get(grouping.group_of(j)) * len;
            let d = child[j] - parent[j];
            logp += -0.5 * (LN_2PI + var.ln()) - 0.5 * d * d / var;
        }
    }
    Ok(logp)
}

/// Gradient of [`log_locations_density`] with respect to every node location.
pub fn grad_log_locations_density(
    tree: &DdtTree,
    locations: &NodeLocations,
    grouping: &ItemGrouping,
    variances: &DiffusionVariances,
) -> Result<Vec<Vec<f64>>> {
    let dim = locations.dim();
    check_dims(grouping, variances, dim)?;
    let mut grad = vec![vec![0.0; dim]; tree.n_nodes()];
    for v in 0..tree.n_nodes() {
        let len = tree.branch_length(v);
        if len <= 0.0 {
            continue;
        }
        let parent = locations.parent_location(tree, v);
        for j in 0..dim {
            let var = variances.get(grouping.group_of(j)) * len;
            let g = (locations.nodes[v][j] - parent[j]) / var;
            grad[v][j] -= g;
            if let Some(p) = tree.parent(v) {
                grad[p][j] += g;
            }
        }
    }
    Ok(grad)
}

/// Per-group covariance of leaf locations, `sigma2_g * t(mrca(a, b))`, with
/// leaves in natural label order.
pub fn leaf_covariance(
    tree: &DdtTree,
    grouping: &ItemGrouping,
    variances: &DiffusionVariances,
) -> Result<Vec<Vec<Vec<f64>>>> {
    if grouping.n_groups() != variances.len() {
        return Err(Error::Dimension("groups and variances differ in length".into()));
    }
    let leaves = tree.leaves();
    let shared: Vec<Vec<f64>> = leaves
        .iter()
        .map(|&a| leaves.iter().map(|&b| tree.time(tree.mrca(a, b))).collect())
        .collect();
    Ok(variances
        .as_slice()
        .iter()
        .map(|s2| shared.iter().map(|row| row.iter().map(|x| s2 * x).collect()).collect())
        .collect())
}
