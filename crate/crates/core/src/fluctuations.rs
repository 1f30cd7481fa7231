//! Second-order (CLT) behaviour of the mutual information: variance `V(ρ)`,
//! the Gaussian outage approximation and the normalized statistic.
//!
//! ```text
//! f = σ² tr(R̄_R S),   S = (I + ρ f̃ R̄_R)^{-1}
//! f̃ = σ² tr(R̄_T S̃),  S̃ = (I + ρ f R̄_T)^{-1}
//! γ = ρσ² tr((R̄_R S)²),  γ̃ = ρσ² tr((R̄_T S̃)²),  V = -log(1 - γγ̃)
//! ```

use crate::det_equiv::{resolvent_moments, solve_fixed_point, DetEquilibrium, EffectiveCorrelations, SolverOptions};
use crate::error::{Error, Result};
use crate::fixed_point;
use crate::linalg::CMat;

#[derive(Debug, Clone)]
pub struct FluctuationSolution {
    pub rho: f64,
    pub f: f64,
    pub f_tilde: f64,
    /// `S` (`N_r x N_r`)
    pub s: CMat,
    /// `S̃` (`N_t x N_t`)
    pub s_tilde: CMat,
    pub gamma: f64,
    pub gamma_tilde: f64,
    pub variance: f64,
    pub residual: f64,
    pub iterations: usize,
    /// `tr((R̄_R S)²)`
    pub tau_r: f64,
    /// `tr((R̄_T S̃)²)`
    pub tau_t: f64,
    /// `tr((R̄_R S)³)`
    pub kappa_r: f64,
    /// `tr((R̄_T S̃)³)`
    pub kappa_t: f64,
}

/// The map in `(ρ f, ρ f̃)`, which is free of the channel scale.
fn fl_map(eff: &EffectiveCorrelations, s: f64, x: [f64; 2]) -> [f64; 2] {
    let [u, ut] = x;
    [
        s * resolvent_moments(eff.spectrum_r(), ut)[0],
        s * resolvent_moments(eff.spectrum_t(), u)[0],
    ]
}

pub fn solve_variance_fixed_point(
    eff: &EffectiveCorrelations,
    rho: f64,
    opts: &SolverOptions,
) -> Result<FluctuationSolution> {
    if !(rho.is_finite() && rho >= 0.0) {
        return Err(Error::invalid(format!("SNR must be finite and nonnegative, got {rho}")));
    }
    let sigma2 = eff.variance();
    let s = rho * sigma2;
    let (f, f_tilde, residual, iterations) = if rho == 0.0 {
        let r = resolvent_moments(eff.spectrum_r(), 0.0)[0];
        let t = resolvent_moments(eff.spectrum_t(), 0.0)[0];
        (sigma2 * r, sigma2 * t, 0.0, 0)
    } else {
        let fp = fixed_point::solve(
            "variance fixed point",
            |x| fl_map(eff, s, x),
            |x| {
                let tr = resolvent_moments(eff.spectrum_r(), x[1])[1];
                let tt = resolvent_moments(eff.spectrum_t(), x[0])[1];
                [[0.0, -s * tr], [-s * tt, 0.0]]
            },
            opts,
        )?;
        (fp.x[0] / rho, fp.x[1] / rho, fp.residual, fp.iterations)
    };
    let mr = resolvent_moments(eff.spectrum_r(), rho * f_tilde);
    let mt = resolvent_moments(eff.spectrum_t(), rho * f);
    let gamma = s * mr[1];
    let gamma_tilde = s * mt[1];
    let prod = gamma * gamma_tilde;
    if !(prod < 1.0) {
        return Err(Error::DegenerateVariance(prod));
    }
    let variance = -(-prod).ln_1p();
    Ok(FluctuationSolution {
        rho,
        f,
        f_tilde,
        s: eff.spectrum_r().map(|v| 1.0 / (1.0 + rho * f_tilde * v.max(0.0))),
        s_tilde: eff.spectrum_t().map(|v| 1.0 / (1.0 + rho * f * v.max(0.0))),
        gamma,
        gamma_tilde,
        variance,
        residual,
        iterations,
        tau_r: mr[1],
        tau_t: mt[1],
        kappa_r: mr[2],
        kappa_t: mt[2],
    })
}

/// Standard normal CDF.
pub fn normal_cdf(x: f64) -> f64 {
    0.5 * libm::erfc(-x / std::f64::consts::SQRT_2)
}

/// Standard normal density.
pub fn normal_pdf(x: f64) -> f64 {
    (-0.5 * x * x).exp() / (2.0 * std::f64::consts::PI).sqrt()
}

/// `Φ((R - C̄)/√V)`.
pub fn outage_probability(rate: f64, mean_mi: f64, variance: f64) -> Result<f64> {
    if !(variance > 0.0 && variance.is_finite()) {
        return Err(Error::invalid(format!("variance must be positive, got {variance}")));
    }
    Ok(normal_cdf(clt_statistic(rate, mean_mi, variance)))
}

/// `(C - C̄)/√V`.
pub fn clt_statistic(sample_mi: f64, mean_mi: f64, variance: f64) -> f64 {
    (sample_mi - mean_mi) / variance.sqrt()
}

/// Both fixed points at one SNR.
#[derive(Debug, Clone)]
pub struct Moments {
    pub eq: DetEquilibrium,
    pub fl: FluctuationSolution,
}

impl Moments {
    pub fn outage(&self, rate: f64) -> Result<f64> {
        outage_probability(rate, self.eq.mean_mi, self.fl.variance)
    }
}

pub fn moments(eff: &EffectiveCorrelations, rho: f64, opts: &SolverOptions) -> Result<Moments> {
    Ok(Moments {
        eq: solve_fixed_point(eff, rho, opts)?,
        fl: solve_variance_fixed_point(eff, rho, opts)?,
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn cdf_values() {
        assert_eq!(normal_cdf(0.0), 0.5);
        assert!((normal_cdf(3.0) - 0.998650101968).abs() < 1e-11);
        assert!((normal_cdf(-1.0) - 0.158655253931).abs() < 1e-11);
    }

    #[test]
    fn outage_at_mean_is_half() {
        assert_eq!(outage_probability(4.0, 4.0, 0.3).unwrap(), 0.5);
        let v: f64 = 0.7;
        assert!((outage_probability(1.0 + 3.0 * v.sqrt(), 1.0, v).unwrap() - 0.99865).abs() < 1e-5);
        assert!(outage_probability(1.0, 1.0, 0.0).is_err());
    }

    #[test]
    fn clt_statistic_values() {
        assert_eq!(clt_statistic(2.0, 2.0, 4.0), 0.0);
        assert_eq!(clt_statistic(4.0, 2.0, 4.0), 1.0);
    }

    #[test]
    fn identity_equal_antennas_satisfies_scalar_relations() {
        let n = 4;
        // σ² = 1/n makes f = 1/(1 + ρ f̃)
        let eff = EffectiveCorrelations::identity(n, n, 1.0 / n as f64).unwrap();
        for rho in [0.1, 1.0, 10.0] {
            let fl = solve_variance_fixed_point(&eff, rho, &SolverOptions::default()).unwrap();
            assert!((fl.f - 1.0 / (1.0 + rho * fl.f_tilde)).abs() < 1e-9);
            assert!((fl.f_tilde - 1.0 / (1.0 + rho * fl.f)).abs() < 1e-9);
            assert!(fl.variance > 0.0);
        }
    }

    #[test]
    fn links_to_mean_fixed_point() {
        let eff = EffectiveCorrelations::identity(3, 5, 0.2).unwrap();
        let m = moments(&eff, 3.0, &SolverOptions::default().with_tol(1e-13)).unwrap();
        assert!((m.fl.f_tilde * 3.0 - m.eq.delta).abs() < 1e-10);
        assert!((m.fl.f * 3.0 - m.eq.e).abs() < 1e-10);
    }
}
