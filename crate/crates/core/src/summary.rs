//! Posterior summaries: burn-in, ECR relabeling, MAP tree and equal-tailed
//! credible intervals.
//!
//! Quantiles use inclusive linear interpolation: for sorted `x[0..n]` and
//! level `p`, `h = (n - 1) p` and the quantile is `x[⌊h⌋] + (h - ⌊h⌋)(x[⌊h⌋+1] - x[⌊h⌋])`.

use serde::{Deserialize, Serialize};

use crate::assignment::max_score_assignment;
use crate::chain::{PosteriorChain, Snapshot};
use crate::error::{Error, Result};
use crate::tree::DdtTree;

pub const SUMMARY_SCHEMA_VERSION: u32 = 1;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SummaryConfig {
    pub burnin: usize,
    pub relabel: bool,
    pub level: f64,
    pub quiet: bool,
}

impl Default for SummaryConfig {
    fn default() -> Self {
        Self { burnin: 0, relabel: true, level: 0.95, quiet: false }
    }
}

/// Posterior mean with an equal-tailed credible interval.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct Interval {
    pub mean: f64,
    pub lower: f64,
    pub upper: f64,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct PosteriorSummary {
    pub schema_version: u32,
    pub n_retained: usize,
    pub burnin: usize,
    pub level: f64,
    pub relabeled: bool,
    /// Iteration number (1-based) the MAP tree was taken from.
    pub map_iteration: usize,
    pub map_log_posterior: f64,
    pub map_tree: DdtTree,
    pub class_probability: Vec<Interval>,
    /// K x J.
    pub theta: Vec<Vec<Interval>>,
    pub sigma2: Vec<Interval>,
    pub c: Interval,
    /// Per retained iteration, the new 1-based label of each old class.
    pub permutations: Vec<Vec<usize>>,
    pub item_labels: Vec<String>,
    pub group_names: Vec<String>,
    pub item_membership: Vec<Vec<usize>>,
}

/// Drop the first `burnin` snapshots.
pub fn apply_burnin(chain: &PosteriorChain, burnin: usize) -> Result<PosteriorChain> {
    if burnin >= chain.len() {
        return Err(Error::InvalidParameter(format!(
            "burn-in {burnin} leaves no samples from a chain of length {}",
            chain.len()
        )));
    }
    Ok(PosteriorChain { meta: chain.meta.clone(), snapshots: chain.snapshots[burnin..].to_vec() })
}

/// Index of the snapshot with the largest log-posterior, earliest on ties.
pub fn map_index(snapshots: &[Snapshot]) -> Option<usize> {
    let mut best: Option<usize> = None;
    for (i, s) in snapshots.iter().enumerate() {
        if best.is_none_or(|b| s.log_posterior > snapshots[b].log_posterior) {
            best = Some(i);
        }
    }
    best
}

pub fn map_tree(chain: &PosteriorChain) -> Result<DdtTree> {
    let i = map_index(&chain.snapshots)
        .ok_or_else(|| Error::InvalidParameter("empty chain".into()))?;
    DdtTree::parse_newick(&chain.snapshots[i].tree)
}

/// Apply a class permutation (`perm[old] = new`, 0-based) to one snapshot.
pub fn permute_snapshot(s: &Snapshot, perm: &[usize]) -> Result<Snapshot> {
    let k = perm.len();
    let mut out = s.clone();
    for (old, &new) in perm.iter().enumerate() {
        out.class_probability[new] = s.class_probability[old];
        out.theta[new] = s.theta[old].clone();
    }
    for z in out.memberships.iter_mut() {
        *z = perm[*z - 1] + 1;
    }
    let tree = DdtTree::parse_newick(&s.tree)?;
    let relabeled = tree.relabel_leaves(|l| {
        match l.strip_prefix('v').and_then(|n| n.parse::<usize>().ok()) {
            Some(n) if (1..=k).contains(&n) => format!("v{}", perm[n - 1] + 1),
            _ => l.to_string(),
        }
    })?;
    out.tree = relabeled.to_newick();
    Ok(out)
}

/// Pivot labels in canonical order: classes numbered by first appearance in
/// the allocation, classes absent from it last in lexicographic order of
/// their response profiles. Returns `perm[old] = new`.
fn canonical_order(pivot: &Snapshot, k: usize) -> Vec<usize> {
    let mut order: Vec<usize> = Vec::with_capacity(k);
    for &z in &pivot.memberships {
        if !order.contains(&(z - 1)) {
            order.push(z - 1);
        }
    }
    let mut absent: Vec<usize> = (0..k).filter(|c| !order.contains(c)).collect();
    absent.sort_by(|&a, &b| {
        pivot.theta[a]
            .iter()
            .zip(&pivot.theta[b])
            .map(|(x, y)| x.total_cmp(y))
            .find(|o| o.is_ne())
            .unwrap_or(std::cmp::Ordering::Equal)
    });
    order.extend(absent);
    let mut perm = vec![0; k];
    for (new, &old) in order.iter().enumerate() {
        perm[old] = new;
    }
    perm
}

/// Equivalence-classes-representatives relabeling against the allocation of
/// the MAP iteration. Each iteration gets the permutation maximising the
/// number of rows whose class agrees with the pivot; ties between equally
/// agreeing permutations go to the one whose response profiles are closest
/// to the pivot's (mean absolute difference, scaled to stay below one
/// agreement). Returns the relabeled chain and, per iteration, the 0-based
/// permutation applied (`perm[old] = new`).
pub fn ecr_relabel(chain: &PosteriorChain) -> Result<(PosteriorChain, Vec<Vec<usize>>)> {
    let pivot_idx =
        map_index(&chain.snapshots).ok_or_else(|| Error::InvalidParameter("empty chain".into()))?;
    let k = chain.snapshots[pivot_idx].class_probability.len();
    for s in &chain.snapshots {
        if s.memberships.iter().any(|&z| z == 0 || z > k) {
            return Err(Error::InvalidParameter(format!("membership out of 1..{k}")));
        }
    }
    let pivot = permute_snapshot(
        &chain.snapshots[pivot_idx],
        &canonical_order(&chain.snapshots[pivot_idx], k),
    )?;
    let j = pivot.theta.first().map_or(1, Vec::len).max(1) as f64;
    let mut snapshots = Vec::with_capacity(chain.len());
    let mut perms = Vec::with_capacity(chain.len());
    for s in &chain.snapshots {
        if s.memberships.len() != pivot.memberships.len() {
            return Err(Error::Dimension("memberships differ in length across iterations".into()));
        }
        let mut score = vec![vec![0.0; k]; k];
        for (&z, &p) in s.memberships.iter().zip(&pivot.memberships) {
            score[z - 1][p - 1] += 1.0;
        }
        for (a, row) in score.iter_mut().enumerate() {
            for (b, x) in row.iter_mut().enumerate() {
                let d: f64 =
                    s.theta[a].iter().zip(&pivot.theta[b]).map(|(u, v)| (u - v).abs()).sum::<f64>() / j;
                *x -= 0.5 * d / k as f64;
            }
        }
        let perm = max_score_assignment(&score);
        snapshots.push(permute_snapshot(s, &perm)?);
        perms.push(perm);
    }
    Ok((PosteriorChain { meta: chain.meta.clone(), snapshots }, perms))
}

/// Type-7 sample quantile of `sorted` (ascending) at level `p`.
pub fn quantile_type7(sorted: &[f64], p: f64) -> f64 {
    let n = sorted.len();
    assert!(n > 0, "quantile of an empty sample");
    let h = (n - 1) as f64 * p.clamp(0.0, 1.0);
    let lo = h.floor() as usize;
    let hi = (lo + 1).min(n - 1);
    sorted[lo] + (h - lo as f64) * (sorted[hi] - sorted[lo])
}

pub fn interval(values: &[f64], level: f64) -> Interval {
    let mut sorted = values.to_vec();
    sorted.sort_by(f64::total_cmp);
    let mean = values.iter().sum::<f64>() / values.len() as f64;
    let tail = 0.5 * (1.0 - level);
    // guard against rounding pushing the mean outside a degenerate interval
    let lower = quantile_type7(&sorted, tail).min(mean);
    let upper = quantile_type7(&sorted, 1.0 - tail).max(mean);
    Interval { mean, lower, upper }
}

pub fn summarize(chain: &PosteriorChain, config: &SummaryConfig) -> Result<PosteriorSummary> {
    if !(config.level > 0.0 && config.level < 1.0) {
        return Err(Error::InvalidParameter(format!(
            "credible level must lie in (0, 1), got {}",
            config.level
        )));
    }
    let kept = apply_burnin(chain, config.burnin)?;
    let (kept, perms) = if config.relabel {
        ecr_relabel(&kept)?
    } else {
        let k = kept.snapshots[0].class_probability.len();
        let n = kept.len();
        (kept, vec![(0..k).collect(); n])
    };
    let snaps = &kept.snapshots;
    let k = snaps[0].class_probability.len();
    let j = snaps[0].theta.first().map_or(0, Vec::len);
    let g = snaps[0].sigma2.len();
    let col = |f: &dyn Fn(&Snapshot) -> f64| -> Interval {
        interval(&snaps.iter().map(f).collect::<Vec<_>>(), config.level)
    };
    let class_probability = (0..k).map(|c| col(&|s| s.class_probability[c])).collect();
    let theta = (0..k)
        .map(|c| (0..j).map(|jj| col(&|s| s.theta[c][jj])).collect())
        .collect();
    let sigma2 = (0..g).map(|gi| col(&|s| s.sigma2[gi])).collect();
    let c = col(&|s| s.c);
    let mi = map_index(snaps).expect("non-empty");
    Ok(PosteriorSummary {
        schema_version: SUMMARY_SCHEMA_VERSION,
        n_retained: snaps.len(),
        burnin: config.burnin,
        level: config.level,
        relabeled: config.relabel,
        map_iteration: snaps[mi].iteration,
        map_log_posterior: snaps[mi].log_posterior,
        map_tree: DdtTree::parse_newick(&snaps[mi].tree)?,
        class_probability,
        theta,
        sigma2,
        c,
        permutations: perms.iter().map(|p| p.iter().map(|x| x + 1).collect()).collect(),
        item_labels: chain.meta.item_labels.clone(),
        group_names: chain.meta.group_names.clone(),
        item_membership: chain.meta.item_membership.clone(),
    })
}

impl PosteriorSummary {
    pub fn n_classes(&self) -> usize {
        self.class_probability.len()
    }

    /// Plain-text report of prevalences and the MAP tree.
    pub fn report(&self) -> String {
        let pct = (self.level * 100.0).round();
        let mut out = format!(
            "Posterior summary over {} iterations (burn-in {}){}\n",
            self.n_retained,
            self.burnin,
            if self.relabeled { ", ECR relabeled" } else { "" }
        );
        out.push_str(&format!("MAP tree (iteration {}): {}\n", self.map_iteration, self.map_tree));
        out.push_str(&format!("Class prevalences with {pct}% credible intervals:\n"));
        for (c, p) in self.class_probability.iter().enumerate() {
            out.push_str(&format!(
                "  v{}: {:.3} ({:.3}, {:.3})\n",
                c + 1,
                p.mean,
                p.lower,
                p.upper
            ));
        }
        for (gi, s) in self.sigma2.iter().enumerate() {
            let name = self.group_names.get(gi).map_or_else(|| format!("group_{}", gi + 1), Clone::clone);
            out.push_str(&format!(
                "  sigma2[{name}]: {:.3} ({:.3}, {:.3})\n",
                s.mean, s.lower, s.upper
            ));
        }
        out.push_str(&format!("  c: {:.3} ({:.3}, {:.3})\n", self.c.mean, self.c.lower, self.c.upper));
        out
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn type7_quantiles() {
        let xs: Vec<f64> = (1..=10).map(|i| i as f64 / 10.0).collect();
        let iv = interval(&xs, 0.95);
        assert!((iv.mean - 0.55).abs() < 1e-12);
        // h = 9 * 0.025 = 0.225 -> 0.1 + 0.225 * 0.1
        assert!((iv.lower - 0.1225).abs() < 1e-12);
        assert!((iv.upper - 0.9775).abs() < 1e-12);
        assert_eq!(quantile_type7(&[3.0], 0.3), 3.0);
        assert_eq!(quantile_type7(&xs, 0.0), 0.1);
        assert_eq!(quantile_type7(&xs, 1.0), 1.0);
    }

    #[test]
    fn constant_values_give_point_interval() {
        let iv = interval(&[0.3; 7], 0.95);
        assert_eq!((iv.lower, iv.mean, iv.upper), (0.3, 0.3, 0.3));
    }
}
