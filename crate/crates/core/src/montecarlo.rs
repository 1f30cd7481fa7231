//! Monte Carlo oracle: exact per-realization mutual information over sampled
//! channels, with sample statistics and comparisons against the closed forms.
//!
//! Trial `t` draws from `ChaCha8Rng::seed_from_u64(seed)` on stream `t`, so
//! every trial owns an independent, reproducible sub-stream regardless of the
//! thread that runs it. Reductions run sequentially in trial order.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::channel::{sample_gaussian, SimLink};
use crate::error::{Error, Result};
use crate::fluctuations::normal_cdf;
use crate::linalg::{self, c, CMat, HermitianSpectrum};

/// `log det(I + ρ H H^H)` via Cholesky, on the smaller Gram matrix.
pub fn mi_sample(h: &CMat, rho: f64) -> Result<f64> {
    if !(rho.is_finite() && rho >= 0.0) {
        return Err(Error::invalid(format!("SNR must be finite and nonnegative, got {rho}")));
    }
    if rho == 0.0 || h.is_empty() {
        return Ok(0.0);
    }
    let gram = if h.nrows() <= h.ncols() {
        h * h.adjoint()
    } else {
        h.adjoint() * h
    };
    let arg = linalg::identity(gram.nrows()) + gram * c(rho);
    Ok(linalg::logdet_hpd(&arg)?.max(0.0))
}

/// Same quantity from the eigenvalues of `H H^H`.
pub fn mi_sample_eigen(h: &CMat, rho: f64) -> Result<f64> {
    let spec = HermitianSpectrum::new(&(h * h.adjoint()))?;
    Ok(spec.values.iter().map(|&v| (rho * v.max(0.0)).ln_1p()).sum())
}

/// Per-trial channel factors: `H = A G̃ B` with `A = D R_R^{1/2}`,
/// `B = R_T^{1/2} P` and `G̃` i.i.d. `CN(0, β/M)`.
struct TrialChannel {
    a: CMat,
    b: CMat,
    variance: f64,
}

impl TrialChannel {
    fn new(link: &SimLink) -> Self {
        Self {
            a: link.rx.compose() * link.stats.r_r_sqrt(),
            b: link.stats.r_t_sqrt() * link.tx.compose(),
            variance: link.channel_variance(),
        }
    }

    fn draw(&self, seed: u64, trial: u64) -> CMat {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        rng.set_stream(trial);
        let g = sample_gaussian(&mut rng, self.a.ncols(), self.b.nrows(), self.variance);
        &self.a * g * &self.b
    }
}

/// One row per trial, one column per SNR; every SNR sees the same channel.
pub fn sample_mi_multi(link: &SimLink, rhos: &[f64], n_trials: usize, seed: u64) -> Result<Vec<Vec<f64>>> {
    let ch = TrialChannel::new(link);
    (0..n_trials as u64)
        .into_par_iter()
        .map(|t| {
            let h = ch.draw(seed, t);
            rhos.iter().map(|&rho| mi_sample(&h, rho)).collect::<Result<Vec<f64>>>()
        })
        .collect()
}

pub fn sample_mi(link: &SimLink, rho: f64, n_trials: usize, seed: u64) -> Result<Vec<f64>> {
    Ok(sample_mi_multi(link, &[rho], n_trials, seed)?
        .into_iter()
        .map(|row| row[0])
        .collect())
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct RateOutage {
    pub rate: f64,
    pub outage: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct McEstimate {
    pub n_trials: usize,
    pub mean: f64,
    pub variance: f64,
    pub std_error_mean: f64,
    pub outage_by_rate: Vec<RateOutage>,
    pub seed: u64,
    pub ks_distance: Option<f64>,
    #[serde(skip)]
    pub samples: Vec<f64>,
}

impl McEstimate {
    pub fn from_samples(samples: Vec<f64>, rates: &[f64], seed: u64) -> Result<Self> {
        let n = samples.len();
        if n < 2 {
            return Err(Error::invalid(format!("need at least 2 trials, got {n}")));
        }
        if samples.iter().any(|x| !x.is_finite()) {
            return Err(Error::Numeric("non-finite mutual-information sample".into()));
        }
        let mean = samples.iter().sum::<f64>() / n as f64;
        let variance = samples.iter().map(|x| (x - mean).powi(2)).sum::<f64>() / (n - 1) as f64;
        let outage_by_rate = rates
            .iter()
            .map(|&rate| RateOutage {
                rate,
                outage: empirical_outage(&samples, rate),
            })
            .collect();
        Ok(Self {
            n_trials: n,
            mean,
            variance,
            std_error_mean: (variance / n as f64).sqrt(),
            outage_by_rate,
            seed,
            ks_distance: None,
            samples,
        })
    }
}

/// Fraction of samples strictly below `rate`.
pub fn empirical_outage(samples: &[f64], rate: f64) -> f64 {
    samples.iter().filter(|&&x| x < rate).count() as f64 / samples.len() as f64
}

pub fn estimate(link: &SimLink, rho: f64, rates: &[f64], n_trials: usize, seed: u64) -> Result<McEstimate> {
    if n_trials < 2 {
        return Err(Error::invalid(format!("need at least 2 trials, got {n_trials}")));
    }
    McEstimate::from_samples(sample_mi(link, rho, n_trials, seed)?, rates, seed)
}

/// Kolmogorov-Smirnov distance between `z` and the standard normal.
pub fn ks_distance_normal(z: &[f64]) -> f64 {
    let mut sorted = z.to_vec();
    sorted.sort_by(f64::total_cmp);
    let n = sorted.len() as f64;
    sorted
        .iter()
        .enumerate()
        .map(|(i, &x)| {
            let f = normal_cdf(x);
            ((i + 1) as f64 / n - f).max(f - i as f64 / n)
        })
        .fold(0.0, f64::max)
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct McTolerances {
    pub mean_z: f64,
    pub mean_rel_gap: f64,
    pub variance_rel: f64,
    pub outage_abs: f64,
    pub outage_window: (f64, f64),
    pub ks: f64,
}

impl Default for McTolerances {
    fn default() -> Self {
        Self {
            mean_z: 3.0,
            mean_rel_gap: 0.02,
            variance_rel: 0.10,
            outage_abs: 0.03,
            outage_window: (0.05, 0.95),
            ks: 0.03,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct TheoryComparison {
    pub mean_z: f64,
    pub mean_rel_gap: f64,
    pub variance_rel_err: f64,
    /// Over rates whose closed-form outage lies in the window; 0 if none do.
    pub max_outage_dev: f64,
    pub ks_distance: f64,
    pub mean_pass: bool,
    pub variance_pass: bool,
    pub outage_pass: bool,
    pub ks_pass: bool,
}

impl TheoryComparison {
    pub fn passed(&self) -> bool {
        self.mean_pass && self.variance_pass && self.outage_pass && self.ks_pass
    }
}

/// `outage_curve` pairs each rate of `mc.outage_by_rate` (same order) with
/// the closed-form outage.
pub fn compare_with_theory(
    mc: &McEstimate,
    mean_mi: f64,
    variance: f64,
    outage_curve: &[f64],
    tol: &McTolerances,
) -> Result<TheoryComparison> {
    if outage_curve.len() != mc.outage_by_rate.len() {
        return Err(Error::invalid("outage curve and MC rates differ in length"));
    }
    let gap = mean_mi - mc.mean;
    let mean_z = if mc.std_error_mean > 0.0 {
        gap / mc.std_error_mean
    } else if gap == 0.0 {
        0.0
    } else {
        f64::INFINITY
    };
    let mean_rel_gap = if mc.mean != 0.0 {
        gap.abs() / mc.mean.abs()
    } else {
        gap.abs()
    };
    let variance_rel_err = if mc.variance > 0.0 {
        (variance - mc.variance).abs() / mc.variance
    } else {
        (variance - mc.variance).abs()
    };
    let (lo, hi) = tol.outage_window;
    let max_outage_dev = mc
        .outage_by_rate
        .iter()
        .zip(outage_curve)
        .filter(|(_, &p)| p >= lo && p <= hi)
        .map(|(ro, &p)| (ro.outage - p).abs())
        .fold(0.0, f64::max);
    let ks_distance = if variance > 0.0 {
        let z: Vec<f64> = mc.samples.iter().map(|x| (x - mean_mi) / variance.sqrt()).collect();
        ks_distance_normal(&z)
    } else {
        1.0
    };
    Ok(TheoryComparison {
        mean_z,
        mean_rel_gap,
        variance_rel_err,
        max_outage_dev,
        ks_distance,
        mean_pass: mean_z.abs() <= tol.mean_z && mean_rel_gap <= tol.mean_rel_gap,
        variance_pass: variance_rel_err <= tol.variance_rel,
        outage_pass: max_outage_dev <= tol.outage_abs,
        ks_pass: ks_distance <= tol.ks,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::channel::LinkLayout;
    use num_complex::Complex64;

    #[test]
    fn scalar_channel() {
        let h = CMat::from_element(1, 1, Complex64::new(0.6, -0.8));
        assert!((mi_sample(&h, 3.0).unwrap() - 4f64.ln()).abs() < 1e-15);
        assert_eq!(mi_sample(&h, 0.0).unwrap(), 0.0);
        assert_eq!(mi_sample(&CMat::zeros(2, 3), 5.0).unwrap(), 0.0);
    }

    #[test]
    fn cholesky_and_eigen_paths_agree() {
        let h = CMat::from_fn(3, 5, |i, j| {
            Complex64::new((i * j) as f64 * 0.1 - 0.3, i as f64 - 0.2 * j as f64)
        });
        for rho in [0.01, 1.0, 100.0] {
            assert!((mi_sample(&h, rho).unwrap() - mi_sample_eigen(&h, rho).unwrap()).abs() < 1e-9);
            let ht = h.adjoint();
            assert!((mi_sample(&ht, rho).unwrap() - mi_sample_eigen(&ht, rho).unwrap()).abs() < 1e-9);
        }
    }

    #[test]
    fn identical_samples_have_zero_variance() {
        let est = McEstimate::from_samples(vec![1.5, 1.5], &[1.0, 2.0], 0).unwrap();
        assert_eq!(est.variance, 0.0);
        assert_eq!(est.outage_by_rate[0].outage, 0.0);
        assert_eq!(est.outage_by_rate[1].outage, 1.0);
        assert!(McEstimate::from_samples(vec![1.0], &[], 0).is_err());
    }

    #[test]
    fn ks_of_perfect_quantiles_is_small() {
        let n = 1000;
        // midpoint quantiles of N(0,1) via bisection on the CDF
        let z: Vec<f64> = (0..n)
            .map(|i| {
                let p = (i as f64 + 0.5) / n as f64;
                let (mut lo, mut hi) = (-10.0, 10.0);
                for _ in 0..100 {
                    let mid = 0.5 * (lo + hi);
                    if normal_cdf(mid) < p {
                        lo = mid;
                    } else {
                        hi = mid;
                    }
                }
                lo
            })
            .collect();
        assert!((ks_distance_normal(&z) - 0.5 / n as f64).abs() < 1e-9);
    }

    #[test]
    fn self_comparison_is_exact() {
        let link = LinkLayout::new(2, 2, 4, 4, 1, 1)
            .build_random(&mut ChaCha8Rng::seed_from_u64(1))
            .unwrap();
        let est = estimate(&link, 10.0, &[1.0, 2.0], 200, 3).unwrap();
        let curve: Vec<f64> = est.outage_by_rate.iter().map(|r| r.outage).collect();
        let cmp = compare_with_theory(&est, est.mean, est.variance, &curve, &McTolerances::default()).unwrap();
        assert_eq!(cmp.mean_z, 0.0);
        assert_eq!(cmp.variance_rel_err, 0.0);
        assert_eq!(cmp.max_outage_dev, 0.0);
        let bad = compare_with_theory(&est, est.mean * 1.1, est.variance, &curve, &McTolerances::default()).unwrap();
        assert!(!bad.mean_pass);
    }

    #[test]
    fn estimate_is_reproducible() {
        let link = LinkLayout::new(2, 2, 4, 4, 1, 1)
            .build_random(&mut ChaCha8Rng::seed_from_u64(2))
            .unwrap();
        let a = estimate(&link, 1.0, &[0.5], 64, 11).unwrap();
        let b = estimate(&link, 1.0, &[0.5], 64, 11).unwrap();
        assert_eq!(a, b);
        assert_eq!(a.samples, b.samples);
    }
}
