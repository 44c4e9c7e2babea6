//! Exact sampler for Pólya-Gamma PG(1, z) variates.
//!
//! Alternating-series rejection sampler for the Jacobi distribution J*(1, z/2),
//! proposing from a mixture of a truncated inverse Gaussian (left of 0.64)
//! and an exponential tail. `PG(1, z) = J*(1, z/2) / 4`.

use std::f64::consts::PI;

use rand::Rng;
use rand_distr::{Distribution, Exp1, StandardNormal};
use statrs::function::erf::erfc;

const TRUNC: f64 = 0.64;

pub fn pg_mean(z: f64) -> f64 {
    if z.abs() < 1e-8 {
        0.25
    } else {
        (0.5 * z).tanh() / (2.0 * z)
    }
}

pub fn pg_variance(z: f64) -> f64 {
    let z = z.abs();
    if z < 1e-4 {
        return 1.0 / 24.0;
    }
    // (sinh z - z) / (4 z^3 cosh^2(z/2))
    let c = (0.5 * z).cosh();
    (z.sinh() - z) / (4.0 * z.powi(3) * c * c)
}

fn log_norm_cdf(x: f64) -> f64 {
    (0.5 * erfc(-x / std::f64::consts::SQRT_2)).ln()
}

fn series_coef(n: usize, x: f64) -> f64 {
    let k = (n as f64 + 0.5) * PI;
    if x > TRUNC {
        k * (-0.5 * k * k * x).exp()
    } else if x > 0.0 {
        let nh = n as f64 + 0.5;
        (-1.5 * ((0.5 * PI).ln() + x.ln()) + k.ln() - 2.0 * nh * nh / x).exp()
    } else {
        0.0
    }
}

/// Probability of proposing from the exponential tail.
fn tail_mass(z: f64) -> f64 {
    let t = TRUNC;
    let fz = 0.125 * PI * PI + 0.5 * z * z;
    let b = (1.0 / t).sqrt() * (t * z - 1.0);
    let a = -(1.0 / t).sqrt() * (t * z + 1.0);
    let x0 = fz.ln() + fz * t;
    let xb = x0 - z + log_norm_cdf(b);
    let xa = x0 + z + log_norm_cdf(a);
    let q_over_p = 4.0 / PI * (xb.exp() + xa.exp());
    1.0 / (1.0 + q_over_p)
}

/// Inverse Gaussian IG(1/z, 1) truncated to (0, TRUNC).
fn truncated_inverse_gaussian<R: Rng + ?Sized>(z: f64, rng: &mut R) -> f64 {
    let t = TRUNC;
    if 1.0 / t > z {
        loop {
            let (mut e1, mut e2): (f64, f64) = (Exp1.sample(rng), Exp1.sample(rng));
            while e1 * e1 > 2.0 * e2 / t {
                e1 = Exp1.sample(rng);
                e2 = Exp1.sample(rng);
            }
            let d = 1.0 + e1 * t;
            let x = t / (d * d);
            let alpha = (-0.5 * z * z * x).exp();
            if rng.random::<f64>() <= alpha {
                return x;
            }
        }
    } else {
        let mu = 1.0 / z;
        loop {
            let n: f64 = StandardNormal.sample(rng);
            let y = n * n;
            let mu_y = mu * y;
            let mut x = mu + 0.5 * mu * mu_y - 0.5 * mu * (4.0 * mu_y + mu_y * mu_y).sqrt();
            if rng.random::<f64>() > mu / (mu + x) {
                x = mu * mu / x;
            }
            if x <= t {
                return x;
            }
        }
    }
}

/// Draw from PG(1, z).
pub fn sample_pg1<R: Rng + ?Sized>(z: f64, rng: &mut R) -> f64 {
    let z = 0.5 * z.abs();
    let fz = 0.125 * PI * PI + 0.5 * z * z;
    let p_tail = tail_mass(z);
    loop {
        let x = if rng.random::<f64>() < p_tail {
            TRUNC + Distribution::<f64>::sample(&Exp1, rng) / fz
        } else {
            truncated_inverse_gaussian(z, rng)
        };
        let mut s = series_coef(0, x);
        let y = rng.random::<f64>() * s;
        let mut n = 0;
        loop {
            n += 1;
            if n % 2 == 1 {
                s -= series_coef(n, x);
                if y <= s {
                    return 0.25 * x;
                }
            } else {
                s += series_coef(n, x);
                if y > s {
                    break;
                }
            }
        }
    }
}

/// Draw from PG(b, z) for integer `b` as a sum of PG(1, z) draws.
pub fn sample_pg<R: Rng + ?Sized>(b: usize, z: f64, rng: &mut R) -> f64 {
    (0..b).map(|_| sample_pg1(z, rng)).sum()
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::rng::seeded;

    fn moments(z: f64, n: usize, seed: u64) -> (f64, f64) {
        let mut rng = seeded(seed);
        let xs: Vec<f64> = (0..n).map(|_| sample_pg1(z, &mut rng)).collect();
        let m = xs.iter().sum::<f64>() / n as f64;
        let v = xs.iter().map(|x| (x - m).powi(2)).sum::<f64>() / (n - 1) as f64;
        (m, v)
    }

    #[test]
    fn mean_formula_values() {
        assert!((pg_mean(1.0) - 0.231_058_578_630_005).abs() < 1e-12);
        assert!((pg_mean(1e-12) - 0.25).abs() < 1e-12);
        assert!((pg_mean(1e-3) - 0.25).abs() < 1e-6);
        // variance series limit
        assert!((pg_variance(1e-3) - 1.0 / 24.0).abs() < 1e-6);
    }

    #[test]
    fn moments_match_formulas() {
        for (i, &z) in [0.0, 0.1, 1.0, 5.0, -2.0].iter().enumerate() {
            let (m, v) = moments(z, 100_000, 10 + i as u64);
            assert!((m - pg_mean(z)).abs() / pg_mean(z) < 0.01, "z={z} mean {m}");
            assert!((v - pg_variance(z)).abs() / pg_variance(z) < 0.03, "z={z} var {v}");
        }
    }

    #[test]
    fn draws_are_positive() {
        let mut rng = seeded(5);
        for i in 0..20_000 {
            let z = (i % 50) as f64 * 0.7 - 10.0;
            assert!(sample_pg1(z, &mut rng) > 0.0);
        }
    }

    #[test]
    fn sum_of_draws_has_scaled_mean() {
        let mut rng = seeded(8);
        let n = 20_000;
        let m = (0..n).map(|_| sample_pg(4, 1.5, &mut rng)).sum::<f64>() / n as f64;
        assert!((m - 4.0 * pg_mean(1.5)).abs() / (4.0 * pg_mean(1.5)) < 0.01);
    }
}
