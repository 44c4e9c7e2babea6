//! Exact Gaussian inference for a scalar Brownian motion on a tree.
//!
//! Each node value is `N(parent value, sigma2 * branch length)` with the
//! origin fixed. Nodes may carry evidence, either an exact observation or a
//! Gaussian factor `exp(potential * x - precision * x^2 / 2)`. Messages are in
//! information form and flow upward; samples and marginals are produced on
//! the way back down.

use rand::Rng;
use rand_distr::{Distribution, StandardNormal};

use crate::tree::{DdtTree, NodeId};

#[derive(Clone, Copy, Debug, PartialEq)]
pub enum Evidence {
    None,
    Observed(f64),
    Factor { precision: f64, potential: f64 },
}

/// Information-form message `(precision, potential)`.
#[derive(Clone, Copy, Debug, Default, PartialEq)]
struct Info {
    precision: f64,
    potential: f64,
}

impl Info {
    fn add(self, o: Info) -> Info {
        Info { precision: self.precision + o.precision, potential: self.potential + o.potential }
    }

    /// Push through an edge of variance `s`.
    fn through(self, s: f64) -> Info {
        let d = 1.0 + s * self.precision;
        Info { precision: self.precision / d, potential: self.potential / d }
    }
}

/// Result of the upward pass.
struct Upward {
    /// Evidence from each node's own subtree, as a function of its value.
    inside: Vec<Info>,
    /// Fixed values (observed nodes, or a root pinned by a zero root edge).
    fixed: Vec<Option<f64>>,
}

fn upward(tree: &DdtTree, origin: f64, sigma2: f64, evidence: &[Evidence]) -> Upward {
    let n = tree.n_nodes();
    let mut inside = vec![Info::default(); n];
    let mut fixed = vec![None; n];
    for v in tree.postorder() {
        match evidence[v] {
            Evidence::Observed(x) => {
                fixed[v] = Some(x);
                continue;
            }
            Evidence::Factor { precision, potential } => {
                inside[v] = Info { precision, potential };
            }
            Evidence::None => {}
        }
        if let Some(ch) = tree.children(v) {
            for c in ch {
                let msg = passed(tree, sigma2, &inside, &fixed, c);
                inside[v] = inside[v].add(msg);
            }
        }
    }
    let r = tree.root();
    if fixed[r].is_none() && tree.root_edge_length() == 0.0 {
        fixed[r] = Some(origin);
    }
    Upward { inside, fixed }
}

/// Message from `c` to its parent.
fn passed(tree: &DdtTree, sigma2: f64, inside: &[Info], fixed: &[Option<f64>], c: NodeId) -> Info {
    let s = sigma2 * tree.branch_length(c);
    match fixed[c] {
        Some(x) => Info { precision: 1.0 / s, potential: x / s },
        None => inside[c].through(s),
    }
}

/// Draw all node values jointly from their conditional distribution.
pub fn sample<R: Rng + ?Sized>(
    tree: &DdtTree,
    origin: f64,
    sigma2: f64,
    evidence: &[Evidence],
    rng: &mut R,
) -> Vec<f64> {
    let up = upward(tree, origin, sigma2, evidence);
    let mut out = vec![0.0; tree.n_nodes()];
    for v in tree.preorder() {
        if let Some(x) = up.fixed[v] {
            out[v] = x;
            continue;
        }
        let parent = tree.parent(v).map_or(origin, |p| out[p]);
        let s = sigma2 * tree.branch_length(v);
        let prec = 1.0 / s + up.inside[v].precision;
        let mean = (parent / s + up.inside[v].potential) / prec;
        let z: f64 = StandardNormal.sample(rng);
        out[v] = mean + z / prec.sqrt();
    }
    out
}

/// Conditional mean and variance of every node. Fixed nodes have variance 0.
pub fn marginals(tree: &DdtTree, origin: f64, sigma2: f64, evidence: &[Evidence]) -> Vec<(f64, f64)> {
    let up = upward(tree, origin, sigma2, evidence);
    let n = tree.n_nodes();
    // outside[v]: evidence about v from everything outside its subtree
    let mut outside = vec![Info::default(); n];
    let r = tree.root();
    if up.fixed[r].is_none() {
        let s = sigma2 * tree.root_edge_length();
        outside[r] = Info { precision: 1.0 / s, potential: origin / s };
    }
    let mut out = vec![(0.0, 0.0); n];
    for v in tree.preorder() {
        if let Some(x) = up.fixed[v] {
            out[v] = (x, 0.0);
        } else {
            let total = outside[v].add(up.inside[v]);
            out[v] = (total.potential / total.precision, 1.0 / total.precision);
        }
        let Some([a, b]) = tree.children(v) else { continue };
        for (c, sib) in [(a, b), (b, a)] {
            let s = sigma2 * tree.branch_length(c);
            outside[c] = match up.fixed[v] {
                Some(x) => Info { precision: 1.0 / s, potential: x / s },
                None => {
                    let own = match evidence[v] {
                        Evidence::Factor { precision, potential } => Info { precision, potential },
                        _ => Info::default(),
                    };
                    outside[v]
                        .add(own)
                        .add(passed(tree, sigma2, &up.inside, &up.fixed, sib))
                        .through(s)
                }
            };
        }
    }
    out
}
