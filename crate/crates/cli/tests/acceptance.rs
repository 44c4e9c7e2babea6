//! Acceptance checks, one line per criterion:
//!
//! 1. paper-scale workflow through the binary
//! 2. divergence-time law for two leaves (KS)
//! 3. Brownian leaf covariance
//! 4. marginal likelihood against brute-force enumeration
//! 5. Pólya-Gamma means
//! 6. conditional-update oracles
//! 7. joint-distribution (Geweke) test
//! 8. parameter recovery
//! 9. ECR invariance
//! 10. serialization round trips and plot-data coverage of the SVG

use std::collections::HashSet;
use std::path::Path;
use std::process::Command;
use std::time::Instant;

use nalgebra::{DMatrix, DVector};
use rand::seq::SliceRandom;
use rand::Rng;
use rand_distr::{Distribution, Gamma};
use regex::Regex;
use treelcm_core::assignment::max_score_assignment;
use treelcm_core::ddt::{diffuse_locations, sample_ddt_tree};
use treelcm_core::gaussian_tree::{self, Evidence};
use treelcm_core::lcm::{loglik_complete, loglik_marginal, sigmoid};
use treelcm_core::polya_gamma::{pg_mean, sample_pg1};
use treelcm_core::rng::{seeded, SimRng};
use treelcm_core::sampler::{
    diffusion_variance_posterior, step_diffusion_variances, Hyperparameters, Sampler, SamplerState,
};
use treelcm_core::summary::{apply_burnin, ecr_relabel, map_index, permute_snapshot, summarize};
use treelcm_core::{
    ddtlcm_fit, DdtTree, DiffusionVariances, DivergenceFunction, ItemGrouping,
    ItemResponseProbabilities, NodeLocations, PosteriorChain, ResponseMatrix, SamplerConfig,
    SummaryConfig,
};

const LN_2PI: f64 = 1.837_877_066_409_345_3;

struct Outcome {
    pass: bool,
    detail: String,
}

fn outcome(pass: bool, detail: impl Into<String>) -> Outcome {
    Outcome { pass, detail: detail.into() }
}

// ---------------------------------------------------------------- helpers

/// Asymptotic Kolmogorov p-value of a one-sample KS statistic.
fn ks_p_value(d: f64, n: usize) -> f64 {
    let sn = (n as f64).sqrt();
    let lambda = (sn + 0.12 + 0.11 / sn) * d;
    let mut sum = 0.0;
    for k in 1..200 {
        let kf = k as f64;
        let term = (-2.0 * kf * kf * lambda * lambda).exp();
        sum += if k % 2 == 1 { term } else { -term };
        if term < 1e-12 {
            break;
        }
    }
    (2.0 * sum).clamp(0.0, 1.0)
}

fn ks_statistic(mut xs: Vec<f64>, cdf: impl Fn(f64) -> f64) -> f64 {
    xs.sort_by(f64::total_cmp);
    let n = xs.len() as f64;
    xs.iter()
        .enumerate()
        .map(|(i, &x)| {
            let f = cdf(x);
            (f - i as f64 / n).abs().max(((i + 1) as f64 / n - f).abs())
        })
        .fold(0.0, f64::max)
}

fn quantile(sorted: &[f64], p: f64) -> f64 {
    let h = (sorted.len() - 1) as f64 * p;
    let lo = h.floor() as usize;
    let hi = (lo + 1).min(sorted.len() - 1);
    sorted[lo] + (h - lo as f64) * (sorted[hi] - sorted[lo])
}

/// Least-squares slope of the quantiles of `y` against those of `x` at
/// levels 0.05, 0.10, ..., 0.95.
fn qq_slope(x: &[f64], y: &[f64]) -> f64 {
    let mut xs = x.to_vec();
    let mut ys = y.to_vec();
    xs.sort_by(f64::total_cmp);
    ys.sort_by(f64::total_cmp);
    let levels: Vec<f64> = (1..=19).map(|i| i as f64 * 0.05).collect();
    let qx: Vec<f64> = levels.iter().map(|&p| quantile(&xs, p)).collect();
    let qy: Vec<f64> = levels.iter().map(|&p| quantile(&ys, p)).collect();
    let mx = qx.iter().sum::<f64>() / qx.len() as f64;
    let my = qy.iter().sum::<f64>() / qy.len() as f64;
    let sxy: f64 = qx.iter().zip(&qy).map(|(a, b)| (a - mx) * (b - my)).sum();
    let sxx: f64 = qx.iter().map(|a| (a - mx).powi(2)).sum();
    sxy / sxx
}

fn bin() -> &'static str {
    env!("CARGO_BIN_EXE_treelcm")
}

fn run_cli(args: &[&str]) -> Result<String, String> {
    let out = Command::new(bin()).args(args).output().map_err(|e| e.to_string())?;
    if out.status.success() {
        Ok(String::from_utf8_lossy(&out.stdout).into_owned())
    } else {
        Err(String::from_utf8_lossy(&out.stderr).into_owned())
    }
}

fn numbers(text: &str) -> Vec<f64> {
    let re = Regex::new(r"-?\d+(?:\.\d+)?(?:[eE][-+]?\d+)?").unwrap();
    re.find_iter(text).filter_map(|m| m.as_str().parse().ok()).collect()
}

// ---------------------------------------------------------------- criteria

fn workflow() -> Outcome {
    let start = Instant::now();
    let dir = tempfile::tempdir().unwrap();
    let d = |p: &str| dir.path().join(p).to_string_lossy().into_owned();
    let params = concat!(env!("CARGO_MANIFEST_DIR"), "/parameters/diet_like.json");
    let steps = (|| -> Result<(String, String), String> {
        run_cli(&["simulate", "--params", params, "-N", "496", "--seed-parameter", "1", "--seed-response", "1", "--out", &d("sim")])?;
        let header = run_cli(&[
            "fit", "--data", &d("sim/responses.csv"), "--grouping", &d("sim/grouping.json"),
            "-K", "6", "--total-iters", "100", "--seed", "1", "--out", &d("fit"),
        ])?;
        run_cli(&["summarize", "--chain", &d("fit"), "--burnin", "50", "--relabel", "--quiet"])?;
        run_cli(&["report", "--summary", &d("fit/summary.json"), "--plot-option", "all", "--out", &d("report")])?;
        Ok((header, std::fs::read_to_string(d("fit/summary.json")).map_err(|e| e.to_string())?))
    })();
    let (header, summary) = match steps {
        Ok(x) => x,
        Err(e) => return outcome(false, format!("pipeline failed: {}", e.trim())),
    };
    let expected = "---------------------------------------------\nDDT-LCM with K = 6 latent classes run on 496 observations and 78 items in 7 major groups. 100 iterations of posterior samples drawn.\n---------------------------------------------\n";
    let summary: serde_json::Value = serde_json::from_str(&summary).unwrap();
    let retained = summary["n_retained"].as_u64().unwrap_or(0);
    let k = summary["class_probability"].as_array().map_or(0, Vec::len);
    let j = summary["theta"][0].as_array().map_or(0, Vec::len);
    let secs = start.elapsed().as_secs_f64();
    outcome(
        header == expected && retained == 50 && k == 6 && j == 78 && secs < 300.0,
        format!("header exact: {}, retained {retained}, K {k}, J {j}, {secs:.1}s", header == expected),
    )
}

fn divergence_law() -> Outcome {
    let mut details = Vec::new();
    let mut pass = true;
    for (ci, c) in [0.5, 1.0, 3.0].into_iter().enumerate() {
        let div = DivergenceFunction::new(c).unwrap();
        let mut ok = 0;
        let mut ps = Vec::new();
        for seed in [11u64, 12, 13].map(|s| s + 10 * ci as u64) {
            let mut rng = seeded(seed);
            let times: Vec<f64> = (0..10_000)
                .map(|_| {
                    let t = sample_ddt_tree(2, &div, &mut rng).unwrap();
                    t.time(t.root())
                })
                .collect();
            let d = ks_statistic(times, |t| 1.0 - (1.0 - t).powf(c));
            let p = ks_p_value(d, 10_000);
            ps.push(format!("{p:.3}"));
            if p > 0.01 {
                ok += 1;
            }
        }
        pass &= ok >= 2;
        details.push(format!("c={c}: p=[{}]", ps.join(", ")));
    }
    outcome(pass, details.join("; "))
}

fn brownian_kernel() -> Outcome {
    let tree = DdtTree::parse_newick("((v1:0.5,v2:0.5):0.5,v3:1.0);").unwrap();
    let sigma2 = 1.3;
    let n = 50_000;
    // one item per diffusion: every item is an independent draw
    let grouping = ItemGrouping::from_group_of(vec![0; n]).unwrap();
    let variances = DiffusionVariances::new(vec![sigma2]).unwrap();
    let locs = diffuse_locations(&tree, &grouping, &variances, &vec![0.0; n], &mut seeded(3)).unwrap();
    let leaves: Vec<&Vec<f64>> = ["v1", "v2", "v3"].iter().map(|l| &locs.nodes[tree.leaf_id(l).unwrap()]).collect();
    let shared = [[1.0, 0.5, 0.0], [0.5, 1.0, 0.0], [0.0, 0.0, 1.0]];
    let mut worst_rel: f64 = 0.0;
    let mut worst_abs: f64 = 0.0;
    for a in 0..3 {
        for b in 0..3 {
            let ma = leaves[a].iter().sum::<f64>() / n as f64;
            let mb = leaves[b].iter().sum::<f64>() / n as f64;
            let cov = leaves[a].iter().zip(leaves[b]).map(|(x, y)| (x - ma) * (y - mb)).sum::<f64>() / (n - 1) as f64;
            let expect = sigma2 * shared[a][b];
            if a == b {
                worst_rel = worst_rel.max((cov - expect).abs() / expect);
            } else {
                worst_abs = worst_abs.max((cov - expect).abs());
            }
        }
    }
    outcome(
        worst_rel < 0.05 && worst_abs < 0.05 * sigma2,
        format!("max diagonal rel err {worst_rel:.4}, max off-diagonal abs err {worst_abs:.4}"),
    )
}

fn likelihood_oracle() -> Outcome {
    let mut rng = seeded(4);
    let mut worst: f64 = 0.0;
    for _ in 0..20 {
        let rows: Vec<Vec<u8>> = (0..5).map(|_| (0..3).map(|_| rng.random_range(0..2u8)).collect()).collect();
        let y = ResponseMatrix::from_rows(rows).unwrap();
        let theta = ItemResponseProbabilities(
            (0..2).map(|_| (0..3).map(|_| rng.random_range(0.02..0.98)).collect()).collect(),
        );
        let p0: f64 = rng.random_range(0.05..0.95);
        let pi = [p0, 1.0 - p0];
        let terms: Vec<f64> = (0..32u32)
            .map(|mask| {
                let z: Vec<usize> = (0..5).map(|i| ((mask >> i) & 1) as usize).collect();
                loglik_complete(&y, &z, &theta, &pi).unwrap()
            })
            .collect();
        let m = terms.iter().copied().fold(f64::NEG_INFINITY, f64::max);
        let brute = m + terms.iter().map(|t| (t - m).exp()).sum::<f64>().ln();
        worst = worst.max((loglik_marginal(&y, &theta, &pi).unwrap() - brute).abs());
    }
    outcome(worst < 1e-12, format!("max |difference| {worst:.2e} over 20 instances"))
}

fn polya_gamma_moments() -> Outcome {
    let mut rng = seeded(5);
    let mut details = Vec::new();
    let mut pass = true;
    for z in [0.1, 1.0, 5.0] {
        let n = 100_000;
        let m = (0..n).map(|_| sample_pg1(z, &mut rng)).sum::<f64>() / n as f64;
        let rel = (m - pg_mean(z)).abs() / pg_mean(z);
        pass &= rel < 0.01;
        details.push(format!("z={z}: rel err {rel:.4}"));
    }
    outcome(pass, details.join(", "))
}

fn dense_cov(tree: &DdtTree, sigma2: f64) -> DMatrix<f64> {
    let n = tree.n_nodes();
    let anc = |v: usize| {
        let mut out = vec![v];
        while let Some(p) = tree.parent(*out.last().unwrap()) {
            out.push(p);
        }
        out
    };
    DMatrix::from_fn(n, n, |a, b| {
        let aa = anc(a);
        sigma2 * tree.time(anc(b).into_iter().find(|x| aa.contains(x)).unwrap())
    })
}

fn conditional_oracles() -> Outcome {
    // leaf-location conditional against the dense joint normal
    let tree = DdtTree::parse_newick("((v1:0.4,v2:0.4):0.3,v3:0.7):0.3;").unwrap();
    let (origin, sigma2) = (0.2, 1.4);
    let factors = [(2.5, 1.1), (0.8, -0.6), (4.0, 1.9)];
    let n = tree.n_nodes();
    let mut ev = vec![Evidence::None; n];
    for (v, &(p, h)) in factors.iter().enumerate() {
        ev[v] = Evidence::Factor { precision: p, potential: h };
    }
    let prior_prec = dense_cov(&tree, sigma2).try_inverse().unwrap();
    let mut post_prec = prior_prec.clone();
    let mut h = &prior_prec * DVector::from_element(n, origin);
    for (v, &(p, pot)) in factors.iter().enumerate() {
        post_prec[(v, v)] += p;
        h[v] += pot;
    }
    let post_cov = post_prec.try_inverse().unwrap();
    let mean = &post_cov * h;
    let mp = gaussian_tree::marginals(&tree, origin, sigma2, &ev);
    let mean_err = (0..n).map(|v| (mp[v].0 - mean[v]).abs()).fold(0.0, f64::max);
    let var_err = (0..n).map(|v| (mp[v].1 - post_cov[(v, v)]).abs()).fold(0.0, f64::max);

    // variance conditional against 1-D quadrature
    let vtree = DdtTree::parse_newick("(v1:1.0,v2:1.0):0;").unwrap();
    let grouping = ItemGrouping::from_group_of(vec![0; 6]).unwrap();
    let variances = DiffusionVariances::new(vec![1.2]).unwrap();
    let locs = diffuse_locations(&vtree, &grouping, &variances, &[0.0; 6], &mut seeded(6)).unwrap();
    let hyper = Hyperparameters::default();
    let log_post = |s2: f64| {
        let mut lp = -(hyper.sigma2_shape + 1.0) * s2.ln() - hyper.sigma2_rate / s2;
        for v in vtree.leaves() {
            for j in 0..6 {
                let d = locs.nodes[v][j];
                lp += -0.5 * (LN_2PI + s2.ln()) - 0.5 * d * d / s2;
            }
        }
        lp
    };
    let (lo, hi, m) = (1e-4, 40.0, 400_000);
    let step = (hi - lo) / m as f64;
    let grid: Vec<f64> = (0..m).map(|i| lo + (i as f64 + 0.5) * step).collect();
    let lmax = grid.iter().map(|&x| log_post(x)).fold(f64::NEG_INFINITY, f64::max);
    let w: Vec<f64> = grid.iter().map(|&x| (log_post(x) - lmax).exp()).collect();
    let z: f64 = w.iter().sum();
    let q_mean = grid.iter().zip(&w).map(|(x, w)| x * w).sum::<f64>() / z;
    let q_var = grid.iter().zip(&w).map(|(x, w)| (x - q_mean).powi(2) * w).sum::<f64>() / z;
    let (shape, rate) = diffusion_variance_posterior(&vtree, &locs, &grouping, &hyper)[0];
    let draws: Vec<f64> = {
        let mut rng = seeded(7);
        (0..100_000).map(|_| step_diffusion_variances(&vtree, &locs, &grouping, &hyper, &mut rng)[0]).collect()
    };
    let d_mean = draws.iter().sum::<f64>() / draws.len() as f64;
    let d_var = draws.iter().map(|x| (x - d_mean).powi(2)).sum::<f64>() / (draws.len() - 1) as f64;
    let a_mean = rate / (shape - 1.0);
    let a_var = rate * rate / ((shape - 1.0).powi(2) * (shape - 2.0));
    let rel = [
        (a_mean - q_mean).abs() / q_mean,
        (a_var - q_var).abs() / q_var,
        (d_mean - q_mean).abs() / q_mean,
        (d_var - q_var).abs() / q_var,
    ];
    let worst_rel = rel.iter().copied().fold(0.0, f64::max);
    outcome(
        mean_err < 1e-8 && var_err < 1e-6 && worst_rel < 0.01,
        format!(
            "message passing vs dense: mean err {mean_err:.1e}, var err {var_err:.1e}; \
             sigma2 posterior vs quadrature: max rel err {worst_rel:.4}"
        ),
    )
}

struct PriorDraw {
    tree: DdtTree,
    locations: NodeLocations,
    sigma2: f64,
    c: f64,
    pi: Vec<f64>,
    z: Vec<usize>,
}

const GW_N: usize = 15;
const GW_J: usize = 3;
const GW_CHAINS: usize = 100;

fn prior_draw(rng: &mut SimRng) -> PriorDraw {
    let c = Gamma::new(1.0, 1.0).unwrap().sample(rng);
    let tree = sample_ddt_tree(2, &DivergenceFunction::new(c).unwrap(), rng).unwrap();
    let sigma2 = 1.0 / Gamma::new(2.0, 0.5).unwrap().sample(rng);
    let grouping = ItemGrouping::from_group_of(vec![0; GW_J]).unwrap();
    let locations = diffuse_locations(
        &tree,
        &grouping,
        &DiffusionVariances::new(vec![sigma2]).unwrap(),
        &[0.0; GW_J],
        rng,
    )
    .unwrap();
    let g: Vec<f64> = (0..2).map(|_| Gamma::new(1.0, 1.0).unwrap().sample(rng)).collect();
    let pi = vec![g[0] / (g[0] + g[1]), g[1] / (g[0] + g[1])];
    let z = (0..GW_N).map(|_| usize::from(rng.random::<f64>() >= pi[0])).collect();
    PriorDraw { tree, locations, sigma2, c, pi, z }
}

fn draw_responses(locations: &NodeLocations, z: &[usize], rng: &mut SimRng) -> ResponseMatrix {
    let rows = z
        .iter()
        .map(|&k| locations.nodes[k].iter().map(|&eta| u8::from(rng.random::<f64>() < sigmoid(eta))).collect())
        .collect();
    ResponseMatrix::from_rows(rows).unwrap()
}

fn geweke() -> Outcome {
    let iters = 5000;
    let mut rng = seeded(8);
    // forward prior simulation
    let mut forward = [Vec::new(), Vec::new(), Vec::new()];
    for _ in 0..iters {
        let d = prior_draw(&mut rng);
        forward[0].push(d.pi[0]);
        forward[1].push(d.sigma2.ln());
        forward[2].push(d.tree.time(d.tree.root()));
    }
    // successive conditional: sampler sweep, then fresh data given the state;
    // the coupled iterations are spread over chains started at prior draws
    let mut chain = [Vec::new(), Vec::new(), Vec::new()];
    let mut data_rng = seeded(10);
    for c in 0..GW_CHAINS {
        let d = prior_draw(&mut rng);
        let data = draw_responses(&d.locations, &d.z, &mut rng);
        let omega = d
            .z
            .iter()
            .flat_map(|&k| d.locations.nodes[k].iter().map(|&e| pg_mean(e)).collect::<Vec<_>>())
            .collect();
        let state = SamplerState {
            tree: d.tree,
            locations: d.locations,
            sigma2: vec![d.sigma2],
            c: d.c,
            pi: d.pi,
            z: d.z,
            omega,
            log_likelihood: 0.0,
            log_posterior: 0.0,
        };
        let mut cfg = SamplerConfig::new(2, iters / GW_CHAINS);
        cfg.seed = 100 + c as u64;
        let grouping = ItemGrouping::from_group_of(vec![0; GW_J]).unwrap();
        let mut sampler = Sampler::with_state(data, grouping, cfg, state).unwrap();
        for _ in 0..iters / GW_CHAINS {
            sampler.sweep().unwrap();
            let st = sampler.state();
            chain[0].push(st.pi[0]);
            chain[1].push(st.sigma2[0].ln());
            chain[2].push(st.tree.time(st.tree.root()));
            let fresh = draw_responses(&st.locations, &st.z, &mut data_rng);
            sampler.set_data(fresh).unwrap();
        }
    }
    // sigma2 is compared on the log scale: its raw upper quantiles are too
    // noisy at this sample size even between two exact prior samples
    let names = ["pi_1", "log sigma2_1", "first divergence time"];
    let slopes: Vec<f64> = (0..3).map(|i| qq_slope(&forward[i], &chain[i])).collect();
    outcome(
        slopes.iter().all(|s| (0.9..=1.1).contains(s)),
        names.iter().zip(&slopes).map(|(n, s)| format!("{n} slope {s:.3}")).collect::<Vec<_>>().join(", "),
    )
}

fn recovery() -> Outcome {
    let start = Instant::now();
    let (n, j) = (1000, 20);
    let pi_true = [0.25, 0.35, 0.40];
    // v1 and v2 agree on 15 of 20 items, v3 is the outgroup
    let eta: Vec<Vec<f64>> = vec![
        vec![2.0; j],
        (0..j).map(|jj| if jj < 15 { 2.0 } else { -2.0 }).collect(),
        (0..j).map(|jj| if jj < 5 { 2.0 } else { -2.0 }).collect(),
    ];
    let theta_true: Vec<Vec<f64>> = eta.iter().map(|r| r.iter().map(|&e| sigmoid(e)).collect()).collect();
    let mut rng = seeded(12);
    let z_true: Vec<usize> = (0..n)
        .map(|_| {
            let u: f64 = rng.random();
            if u < pi_true[0] {
                0
            } else if u < pi_true[0] + pi_true[1] {
                1
            } else {
                2
            }
        })
        .collect();
    let rows = z_true
        .iter()
        .map(|&k| theta_true[k].iter().map(|&t| u8::from(rng.random::<f64>() < t)).collect())
        .collect();
    let data = ResponseMatrix::from_rows(rows).unwrap();
    let grouping = ItemGrouping::from_memberships(&[(1..=10).collect(), (11..=20).collect()]).unwrap();
    let mut cfg = SamplerConfig::new(3, 600);
    cfg.seed = 13;
    let chain = ddtlcm_fit(3, &data, &grouping, &cfg).unwrap();
    let sum_cfg = SummaryConfig { burnin: 300, relabel: true, level: 0.95, quiet: true };
    let summary = summarize(&chain, &sum_cfg).unwrap();
    let (relabeled, _) = ecr_relabel(&apply_burnin(&chain, 300).unwrap()).unwrap();
    let map = &relabeled.snapshots[map_index(&relabeled.snapshots).unwrap()];

    // fitted class -> true class by agreement of allocations
    let mut agree = vec![vec![0.0; 3]; 3];
    for (&zf, &zt) in map.memberships.iter().zip(&z_true) {
        agree[zf - 1][zt] += 1.0;
    }
    let to_true = max_score_assignment(&agree);
    let mut close = 0;
    for k in 0..3 {
        for jj in 0..j {
            if (summary.theta[k][jj].mean - theta_true[to_true[k]][jj]).abs() <= 0.10 {
                close += 1;
            }
        }
    }
    let frac = close as f64 / (3 * j) as f64;
    let pi_err = (0..3)
        .map(|k| (summary.class_probability[k].mean - pi_true[to_true[k]]).abs())
        .fold(0.0, f64::max);
    let tree = &summary.map_tree;
    let root = tree.root();
    let inner = tree.children(root).unwrap().into_iter().find(|&v| !tree.is_leaf(v)).unwrap();
    let mut pair: Vec<usize> = tree.children(inner).unwrap().iter().map(|&v| to_true[v]).collect();
    pair.sort_unstable();
    let secs = start.elapsed().as_secs_f64();
    outcome(
        frac >= 0.9 && pi_err <= 0.05 && pair == vec![0, 1] && secs < 600.0,
        format!(
            "theta cells within 0.10: {:.0}%, max pi error {pi_err:.3}, MAP tree pairs true classes {:?}, {secs:.1}s",
            100.0 * frac,
            pair.iter().map(|k| k + 1).collect::<Vec<_>>()
        ),
    )
}

fn small_chain(seed: u64) -> PosteriorChain {
    let mut rng = seeded(seed);
    let rows = (0..60)
        .map(|i| (0..8).map(|jj| u8::from(rng.random::<f64>() < if (i + jj) % 3 == 0 { 0.85 } else { 0.2 })).collect())
        .collect();
    let data = ResponseMatrix::from_rows(rows).unwrap();
    let grouping = ItemGrouping::from_memberships(&[vec![1, 2, 3, 4], vec![5, 6, 7, 8]]).unwrap();
    let mut cfg = SamplerConfig::new(3, 40);
    cfg.seed = seed;
    ddtlcm_fit(3, &data, &grouping, &cfg).unwrap()
}

fn ecr_invariance() -> Outcome {
    let (aligned, _) = ecr_relabel(&small_chain(14)).unwrap();
    let mut rng = seeded(15);
    let mut scrambled = aligned.clone();
    for s in scrambled.snapshots.iter_mut() {
        let mut rho: Vec<usize> = (0..3).collect();
        rho.shuffle(&mut rng);
        *s = permute_snapshot(s, &rho).unwrap();
    }
    let (restored, _) = ecr_relabel(&scrambled).unwrap();
    let exact = restored == aligned;
    let bits = restored
        .snapshots
        .iter()
        .zip(&scrambled.snapshots)
        .all(|(a, b)| a.log_posterior.to_bits() == b.log_posterior.to_bits());
    outcome(exact && bits, format!("restored exactly: {exact}, log-posterior bit-identical: {bits}"))
}

fn collect_json_numbers(v: &serde_json::Value, out: &mut Vec<f64>) {
    match v {
        serde_json::Value::Number(n) => out.push(n.as_f64().unwrap()),
        serde_json::Value::String(s) => out.extend(numbers(s)),
        serde_json::Value::Array(a) => a.iter().for_each(|x| collect_json_numbers(x, out)),
        serde_json::Value::Object(o) => o.values().for_each(|x| collect_json_numbers(x, out)),
        _ => {}
    }
}

fn svg_numbers_in_plot_data(dir: &Path) -> Result<usize, String> {
    let svg = std::fs::read_to_string(dir.join("report.svg")).map_err(|e| e.to_string())?;
    let json: serde_json::Value =
        serde_json::from_str(&std::fs::read_to_string(dir.join("plot_data.json")).map_err(|e| e.to_string())?)
            .map_err(|e| e.to_string())?;
    let mut known = Vec::new();
    collect_json_numbers(&json, &mut known);
    let known: HashSet<u64> = known.iter().map(|x| x.to_bits()).collect();
    let svg = svg.replace(r#"xmlns="http://www.w3.org/2000/svg""#, "");
    let drawn = numbers(&svg);
    match drawn.iter().find(|x| !known.contains(&x.to_bits()) && !known.contains(&(-**x).to_bits())) {
        Some(x) => Err(format!("SVG number {x} missing from plot data")),
        None => Ok(drawn.len()),
    }
}

fn serialization() -> Outcome {
    // Newick: text -> tree -> text, and sampled trees reach a fixed point
    let texts = [
        "((v1:0.5,v2:0.5):0.5,v3:1.0):0;",
        "(((v1:0.2,v2:0.2):0.3,v3:0.5):0.4,v4:0.9):0.1;",
        "((((v1:0.2,v2:0.2):0.3,v3:0.5):0.2,v4:0.7):0.2,(v5:0.45,v6:0.45):0.45):0.1;",
    ];
    let mut newick_ok = texts.iter().all(|t| DdtTree::parse_newick(t).unwrap().to_newick() == *t);
    let div = DivergenceFunction::new(1.0).unwrap();
    let mut rng = seeded(16);
    for k in 2..40 {
        let tree = sample_ddt_tree(k, &div, &mut rng).unwrap();
        let once = DdtTree::parse_newick(&tree.to_newick()).unwrap();
        let twice = DdtTree::parse_newick(&once.to_newick()).unwrap();
        newick_ok &= once == twice && once.to_newick() == twice.to_newick() && once.approx_eq(&tree, 1e-9);
    }
    // chain JSONL
    let chain = small_chain(17);
    let dir = tempfile::tempdir().unwrap();
    chain.save(dir.path()).unwrap();
    let back = PosteriorChain::load(dir.path()).unwrap();
    let chain_ok = back == chain && back.to_jsonl().unwrap() == chain.to_jsonl().unwrap();
    // SVG numbers against plot data
    let sum = summarize(&chain, &SummaryConfig { burnin: 10, relabel: true, level: 0.95, quiet: true }).unwrap();
    std::fs::write(dir.path().join("summary.json"), serde_json::to_string(&sum).unwrap()).unwrap();
    let mut svg_detail = Vec::new();
    let mut svg_ok = true;
    for opt in ["all", "tree", "profile"] {
        let out = dir.path().join(format!("report_{opt}"));
        let res = run_cli(&[
            "report",
            "--summary",
            &dir.path().join("summary.json").to_string_lossy(),
            "--plot-option",
            opt,
            "--out",
            &out.to_string_lossy(),
        ])
        .and_then(|_| svg_numbers_in_plot_data(&out));
        match res {
            Ok(n) => svg_detail.push(format!("{opt}: {n} numbers covered")),
            Err(e) => {
                svg_ok = false;
                svg_detail.push(format!("{opt}: {e}"));
            }
        }
    }
    outcome(
        newick_ok && chain_ok && svg_ok,
        format!("newick {newick_ok}, chain jsonl {chain_ok}, svg [{}]", svg_detail.join("; ")),
    )
}

fn main() {
    let criteria: [(&str, fn() -> Outcome); 10] = [
        ("workflow replication", workflow),
        ("divergence law", divergence_law),
        ("Brownian kernel", brownian_kernel),
        ("likelihood oracle", likelihood_oracle),
        ("Polya-Gamma moments", polya_gamma_moments),
        ("conditional-update oracles", conditional_oracles),
        ("joint-distribution test", geweke),
        ("parameter recovery", recovery),
        ("ECR invariance", ecr_invariance),
        ("serialization", serialization),
    ];
    let filter: Vec<String> = std::env::args().skip(1).filter(|a| !a.starts_with('-')).collect();
    let mut failed = 0;
    for (i, (name, check)) in criteria.iter().enumerate() {
        let id = (i + 1).to_string();
        if !filter.is_empty() && !filter.contains(&id) {
            continue;
        }
        let start = Instant::now();
        let o = check();
        let verdict = if o.pass { "PASS" } else { "FAIL" };
        println!(
            "criterion {id:>2} {verdict} {name} ({:.1}s): {}",
            start.elapsed().as_secs_f64(),
            o.detail
        );
        if !o.pass {
            failed += 1;
        }
    }
    if failed > 0 {
        println!("{failed} acceptance criteria failed");
        std::process::exit(1);
    }
}
