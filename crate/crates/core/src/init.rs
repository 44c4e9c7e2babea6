//! Deterministic starting state: k-means on the responses, complete linkage
//! between class means for the tree, logit class means for the leaves.

use rand::Rng;

use crate::error::Result;
use crate::lcm::{logit, ResponseMatrix};
use crate::rng::SimRng;
use crate::tree::{DdtTree, RawNode};

const LLOYD_ITERS: usize = 25;
const KMEANS_RESTARTS: usize = 10;
const MEAN_CLAMP: f64 = 0.02;
const MIN_GAP: f64 = 1e-3;

fn sq_dist(row: &[u8], center: &[f64]) -> f64 {
    row.iter().zip(center).map(|(&y, &c)| (y as f64 - c).powi(2)).sum()
}

/// Hard k-means with k-means++ seeding, best of several restarts by
/// within-cluster sum of squares. Returns 0-based labels.
pub(crate) fn kmeans(data: &ResponseMatrix, k: usize, rng: &mut SimRng) -> Vec<usize> {
    let mut best: Option<(f64, Vec<usize>)> = None;
    for _ in 0..KMEANS_RESTARTS {
        let labels = lloyd(data, k, rng);
        let centers = cluster_means(data, &labels, k);
        let sse: f64 = (0..data.n_rows()).map(|i| sq_dist(data.row(i), &centers[labels[i]])).sum();
        if best.as_ref().is_none_or(|(b, _)| sse < *b) {
            best = Some((sse, labels));
        }
    }
    best.map(|(_, l)| l).unwrap_or_default()
}

fn cluster_means(data: &ResponseMatrix, labels: &[usize], k: usize) -> Vec<Vec<f64>> {
    let mut sums = vec![vec![0.0; data.n_cols()]; k];
    let mut counts = vec![0usize; k];
    for (i, &c) in labels.iter().enumerate() {
        counts[c] += 1;
        for (s, &y) in sums[c].iter_mut().zip(data.row(i)) {
            *s += y as f64;
        }
    }
    for (s, &n) in sums.iter_mut().zip(&counts) {
        s.iter_mut().for_each(|x| *x /= n.max(1) as f64);
    }
    sums
}

fn lloyd(data: &ResponseMatrix, k: usize, rng: &mut SimRng) -> Vec<usize> {
    let n = data.n_rows();
    let j = data.n_cols();
    let to_f = |i: usize| data.row(i).iter().map(|&y| y as f64).collect::<Vec<f64>>();

    let mut centers: Vec<Vec<f64>> = vec![to_f(rng.random_range(0..n))];
    let mut d2: Vec<f64> = (0..n).map(|i| sq_dist(data.row(i), &centers[0])).collect();
    while centers.len() < k {
        let total: f64 = d2.iter().sum();
        let pick = if total > 0.0 {
            let u = rng.random::<f64>() * total;
            let mut acc = 0.0;
            let mut pick = n - 1;
            for (i, &d) in d2.iter().enumerate() {
                acc += d;
                if u < acc {
                    pick = i;
                    break;
                }
            }
            pick
        } else {
            rng.random_range(0..n)
        };
        centers.push(to_f(pick));
        for i in 0..n {
            d2[i] = d2[i].min(sq_dist(data.row(i), centers.last().unwrap()));
        }
    }

    let mut labels = vec![0usize; n];
    for _ in 0..LLOYD_ITERS {
        let mut changed = false;
        for i in 0..n {
            let best = (0..k)
                .min_by(|&a, &b| {
                    sq_dist(data.row(i), &centers[a]).total_cmp(&sq_dist(data.row(i), &centers[b]))
                })
                .unwrap();
            if best != labels[i] {
                labels[i] = best;
                changed = true;
            }
        }
        let mut sums = vec![vec![0.0; j]; k];
        let mut counts = vec![0usize; k];
        for i in 0..n {
            counts[labels[i]] += 1;
            for (s, &y) in sums[labels[i]].iter_mut().zip(data.row(i)) {
                *s += y as f64;
            }
        }
        for c in 0..k {
            if counts[c] == 0 {
                // move an empty cluster to the point farthest from its center
                let far = (0..n)
                    .filter(|&i| counts[labels[i]] > 1)
                    .max_by(|&a, &b| {
                        sq_dist(data.row(a), &centers[labels[a]])
                            .total_cmp(&sq_dist(data.row(b), &centers[labels[b]]))
                    });
                if let Some(i) = far {
                    counts[labels[i]] -= 1;
                    labels[i] = c;
                    counts[c] = 1;
                    centers[c] = to_f(i);
                    changed = true;
                }
            } else {
                centers[c] = sums[c].iter().map(|s| s / counts[c] as f64).collect();
            }
        }
        if !changed {
            break;
        }
    }
    labels
}

/// Smoothed and clamped per-class response means.
pub(crate) fn class_means(data: &ResponseMatrix, labels: &[usize], k: usize) -> Vec<Vec<f64>> {
    let j = data.n_cols();
    let mut ones = vec![vec![0.0; j]; k];
    let mut counts = vec![0.0; k];
    for (i, &c) in labels.iter().enumerate() {
        counts[c] += 1.0;
        for (o, &y) in ones[c].iter_mut().zip(data.row(i)) {
            *o += y as f64;
        }
    }
    ones.iter()
        .zip(&counts)
        .map(|(row, &n)| {
            row.iter()
                .map(|&s| ((s + 0.5) / (n + 1.0)).clamp(MEAN_CLAMP, 1.0 - MEAN_CLAMP))
                .collect()
        })
        .collect()
}

/// Complete-linkage tree over class means, distances = mean absolute
/// difference. Leaves are labelled v1..vK; merge heights map to divergence
/// times so that the last merge sits near the top.
pub(crate) fn linkage_tree(means: &[Vec<f64>]) -> Result<DdtTree> {
    let k = means.len();
    let j = means[0].len() as f64;
    let dist = |a: usize, b: usize| -> f64 {
        means[a].iter().zip(&means[b]).map(|(x, y)| (x - y).abs()).sum::<f64>() / j
    };
    let mut raw: Vec<RawNode> = (0..k)
        .map(|i| RawNode { time: 1.0, children: None, label: Some(format!("v{}", i + 1)) })
        .collect();
    // active clusters: (raw node, members)
    let mut active: Vec<(usize, Vec<usize>)> = (0..k).map(|i| (i, vec![i])).collect();
    let mut heights = Vec::new();
    while active.len() > 1 {
        let mut best = (f64::INFINITY, 0, 1);
        for a in 0..active.len() {
            for b in a + 1..active.len() {
                let d = active[a]
                    .1
                    .iter()
                    .flat_map(|&x| active[b].1.iter().map(move |&y| (x, y)))
                    .map(|(x, y)| dist(x, y))
                    .fold(0.0, f64::max);
                if d < best.0 {
                    best = (d, a, b);
                }
            }
        }
        let (h, a, b) = best;
        let (nb, mb) = active.remove(b);
        let (na, ma) = active.remove(a);
        raw.push(RawNode { time: 0.0, children: Some([na, nb]), label: None });
        heights.push(h);
        let mut members = ma;
        members.extend(mb);
        active.push((raw.len() - 1, members));
    }
    let root = active[0].0;
    let h_max = heights.iter().copied().fold(0.0, f64::max);
    let n_merge = heights.len();
    for (m, h) in heights.iter().enumerate() {
        let t = if h_max > 0.0 {
            0.05 + 0.9 * (1.0 - h / h_max)
        } else {
            0.05 + 0.9 * (n_merge - 1 - m) as f64 / n_merge as f64
        };
        raw[k + m].time = t;
    }
    // times must increase strictly towards the leaves
    let mut stack = vec![(root, 0.0f64)];
    while let Some((v, parent_t)) = stack.pop() {
        if let Some(ch) = raw[v].children {
            let mut t = raw[v].time.max(parent_t + MIN_GAP);
            if t >= 1.0 - MIN_GAP {
                t = 0.5 * (parent_t + 1.0);
            }
            raw[v].time = t;
            for c in ch {
                stack.push((c, t));
            }
        }
    }
    DdtTree::from_raw(raw, root, 2)
}

pub(crate) fn logit_means(means: &[Vec<f64>]) -> Vec<Vec<f64>> {
    means.iter().map(|r| r.iter().map(|&p| logit(p)).collect()).collect()
}
