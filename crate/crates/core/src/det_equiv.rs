//! Deterministic equivalent of the ergodic mutual information.
//!
//! With `s = ρσ²` (σ² the per-entry channel variance `β/M`) and the effective
//! correlations `R̄_T = P^H R_T P`, `R̄_R = D R_R D^H`, the pair `(δ, e)` solves
//!
//! ```text
//! δ = s tr(R̄_T Q_t),  Q_t = (I + e R̄_T)^{-1}
//! e = s tr(R̄_R Q_r),  Q_r = (I + δ R̄_R)^{-1}
//! ```
//!
//! and `C̄ = log det(I + e R̄_T) + log det(I + δ R̄_R) - δ e / s` (nats).
//! `e` here already carries the `N_r/N_t` factor, i.e. it multiplies `R̄_T`
//! directly.

use crate::channel::ChannelStatistics;
use crate::error::{Error, Result};
use crate::fixed_point;
pub use crate::fixed_point::SolverOptions;
use crate::linalg::{self, CMat, HermitianSpectrum};

/// `R̄_T`, `R̄_R` with their spectra and the channel variance σ².
#[derive(Debug, Clone)]
pub struct EffectiveCorrelations {
    rbar_t: CMat,
    rbar_r: CMat,
    spec_t: HermitianSpectrum,
    spec_r: HermitianSpectrum,
    variance: f64,
}

impl EffectiveCorrelations {
    pub fn new(rbar_t: CMat, rbar_r: CMat, variance: f64) -> Result<Self> {
        if !(variance > 0.0 && variance.is_finite()) {
            return Err(Error::invalid(format!(
                "channel variance must be positive, got {variance}"
            )));
        }
        let rbar_t = linalg::hermitian_part(&rbar_t);
        let rbar_r = linalg::hermitian_part(&rbar_r);
        let spec_t = HermitianSpectrum::new(&rbar_t)?;
        let spec_r = HermitianSpectrum::new(&rbar_r)?;
        if !spec_t.is_psd() || !spec_r.is_psd() {
            return Err(Error::invalid("effective correlations are not positive semidefinite"));
        }
        Ok(Self {
            rbar_t,
            rbar_r,
            spec_t,
            spec_r,
            variance,
        })
    }

    pub fn identity(n_t: usize, n_r: usize, variance: f64) -> Result<Self> {
        Self::new(linalg::identity(n_t), linalg::identity(n_r), variance)
    }

    pub fn rbar_t(&self) -> &CMat {
        &self.rbar_t
    }

    pub fn rbar_r(&self) -> &CMat {
        &self.rbar_r
    }

    pub fn spectrum_t(&self) -> &HermitianSpectrum {
        &self.spec_t
    }

    pub fn spectrum_r(&self) -> &HermitianSpectrum {
        &self.spec_r
    }

    /// Per-entry channel variance σ².
    pub fn variance(&self) -> f64 {
        self.variance
    }

    pub fn n_t(&self) -> usize {
        self.rbar_t.nrows()
    }

    pub fn n_r(&self) -> usize {
        self.rbar_r.nrows()
    }
}

/// `P^H R_T P` and `D R_R D^H`, symmetrized.
pub fn effective_correlations(p: &CMat, d: &CMat, stats: &ChannelStatistics) -> Result<EffectiveCorrelations> {
    if p.nrows() != stats.m() || d.ncols() != stats.n() {
        return Err(Error::invalid(format!(
            "P is {}x{} and D is {}x{}, but M={} and N={}",
            p.nrows(),
            p.ncols(),
            d.nrows(),
            d.ncols(),
            stats.m(),
            stats.n()
        )));
    }
    let rbar_t = p.adjoint() * stats.r_t() * p;
    let rbar_r = d * stats.r_r() * d.adjoint();
    EffectiveCorrelations::new(rbar_t, rbar_r, stats.entry_variance())
}

/// `[Σ λ/(1+xλ), Σ (λ/(1+xλ))², Σ (λ/(1+xλ))³]`, i.e. `tr((R Q)^k)` for
/// `Q = (I + xR)^{-1}`, `k = 1, 2, 3`.
pub fn resolvent_moments(spec: &HermitianSpectrum, x: f64) -> [f64; 3] {
    let mut m = [0.0; 3];
    for &v in &spec.values {
        let v = v.max(0.0);
        let a = v / (1.0 + x * v);
        m[0] += a;
        m[1] += a * a;
        m[2] += a * a * a;
    }
    m
}

/// `log det(I + xR)` from the spectrum.
pub fn logdet_shift(spec: &HermitianSpectrum, x: f64) -> f64 {
    spec.values.iter().map(|&v| (x * v.max(0.0)).ln_1p()).sum()
}

#[derive(Debug, Clone)]
pub struct DetEquilibrium {
    pub rho: f64,
    /// `ρσ²`
    pub s: f64,
    pub e: f64,
    pub delta: f64,
    pub q_t: CMat,
    pub q_r: CMat,
    /// nats
    pub mean_mi: f64,
    pub residual: f64,
    pub iterations: usize,
    /// `tr(R̄_T Q_t)`
    pub tr_t: f64,
    /// `tr(R̄_R Q_r)`
    pub tr_r: f64,
    /// `tr((R̄_T Q_t)²)`
    pub tau_t: f64,
    /// `tr((R̄_R Q_r)²)`
    pub tau_r: f64,
}

impl DetEquilibrium {
    /// Re-substitution gap of `(δ, e)`.
    pub fn self_consistency(&self, eff: &EffectiveCorrelations) -> f64 {
        if self.s == 0.0 {
            return 0.0;
        }
        let x = [self.delta, self.e];
        fixed_point::gap(x, de_map(eff, self.s, x))
    }
}

fn de_map(eff: &EffectiveCorrelations, s: f64, x: [f64; 2]) -> [f64; 2] {
    let [delta, e] = x;
    [
        s * resolvent_moments(&eff.spec_t, e)[0],
        s * resolvent_moments(&eff.spec_r, delta)[0],
    ]
}

fn check_rho(rho: f64) -> Result<()> {
    if rho.is_finite() && rho >= 0.0 {
        Ok(())
    } else {
        Err(Error::invalid(format!("SNR must be finite and nonnegative, got {rho}")))
    }
}

pub fn solve_fixed_point(eff: &EffectiveCorrelations, rho: f64, opts: &SolverOptions) -> Result<DetEquilibrium> {
    check_rho(rho)?;
    let s = rho * eff.variance;
    if s == 0.0 {
        return Ok(DetEquilibrium {
            rho,
            s,
            e: 0.0,
            delta: 0.0,
            q_t: linalg::identity(eff.n_t()),
            q_r: linalg::identity(eff.n_r()),
            mean_mi: 0.0,
            residual: 0.0,
            iterations: 0,
            tr_t: linalg::real_trace(&eff.rbar_t),
            tr_r: linalg::real_trace(&eff.rbar_r),
            tau_t: eff.spec_t.trace_of(|v| v * v),
            tau_r: eff.spec_r.trace_of(|v| v * v),
        });
    }
    let fp = fixed_point::solve(
        "deterministic equivalent",
        |x| de_map(eff, s, x),
        |x| {
            let tau_t = resolvent_moments(&eff.spec_t, x[1])[1];
            let tau_r = resolvent_moments(&eff.spec_r, x[0])[1];
            [[0.0, -s * tau_t], [-s * tau_r, 0.0]]
        },
        opts,
    )?;
    let [delta, e] = fp.x;
    let mt = resolvent_moments(&eff.spec_t, e);
    let mr = resolvent_moments(&eff.spec_r, delta);
    let mean_mi = logdet_shift(&eff.spec_t, e) + logdet_shift(&eff.spec_r, delta) - delta * e / s;
    if !mean_mi.is_finite() {
        return Err(Error::Numeric("non-finite mean mutual information".into()));
    }
    Ok(DetEquilibrium {
        rho,
        s,
        e,
        delta,
        q_t: eff.spec_t.map(|v| 1.0 / (1.0 + e * v.max(0.0))),
        q_r: eff.spec_r.map(|v| 1.0 / (1.0 + delta * v.max(0.0))),
        mean_mi,
        residual: fp.residual,
        iterations: fp.iterations,
        tr_t: mt[0],
        tr_r: mr[0],
        tau_t: mt[1],
        tau_r: mr[1],
    })
}

/// `C̄` re-evaluated from the matrices with Cholesky log-determinants.
pub fn mean_mi(eq: &DetEquilibrium, eff: &EffectiveCorrelations) -> Result<f64> {
    if eq.s == 0.0 {
        return Ok(0.0);
    }
    let a = linalg::identity(eff.n_t()) + eff.rbar_t() * linalg::c(eq.e);
    let b = linalg::identity(eff.n_r()) + eff.rbar_r() * linalg::c(eq.delta);
    Ok(linalg::logdet_hpd(&a)? + linalg::logdet_hpd(&b)? - eq.delta * eq.e / eq.s)
}

/// Closed-form root and mean MI as printed for the independent,
/// equal-antenna case: `ρδ² + (ρ+2)δ - 1 = 0` and
/// `C̄ = M log(1 + 1/(ρ(1+δ))) + N log(1+δ) - δ/(1+δ)`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct IidSpecialCase {
    pub delta: f64,
    pub mean_mi: f64,
}

pub fn mean_mi_iid_special(rho: f64, m: usize, n: usize) -> Result<IidSpecialCase> {
    if !(rho > 0.0 && rho.is_finite()) {
        return Err(Error::invalid(format!("SNR must be positive, got {rho}")));
    }
    // (-ρ-2+√(ρ²+8ρ+4))/(2ρ), rationalized to avoid cancellation
    let delta = 2.0 / (rho + 2.0 + (rho * rho + 8.0 * rho + 4.0).sqrt());
    let mean_mi = m as f64 * (1.0 / (rho * (1.0 + delta))).ln_1p() + n as f64 * delta.ln_1p() - delta / (1.0 + delta);
    Ok(IidSpecialCase { delta, mean_mi })
}

pub fn special_case_residual(rho: f64, delta: f64) -> f64 {
    rho * delta * delta + (rho + 2.0) * delta - 1.0
}

/// Exact solution of the fixed point for `R̄_T = I_{n_t}`, `R̄_R = I_{n_r}`:
/// `δ = s n_t / (1 + e)`, `e = s n_r / (1 + δ)`, so
/// `δ² + (1 + s(n_r - n_t)) δ - s n_t = 0`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct IdentityClosedForm {
    pub delta: f64,
    pub e: f64,
    pub mean_mi: f64,
}

pub fn identity_closed_form(s: f64, n_t: usize, n_r: usize) -> Result<IdentityClosedForm> {
    if !(s > 0.0 && s.is_finite()) {
        return Err(Error::invalid(format!("ρσ² must be positive, got {s}")));
    }
    let (nt, nr) = (n_t as f64, n_r as f64);
    let b = 1.0 + s * (nr - nt);
    let disc = (b * b + 4.0 * s * nt).sqrt();
    let delta = if b > 0.0 {
        2.0 * s * nt / (b + disc)
    } else {
        (disc - b) / 2.0
    };
    let e = s * nr / (1.0 + delta);
    let mean_mi = nt * e.ln_1p() + nr * delta.ln_1p() - delta * e / s;
    Ok(IdentityClosedForm { delta, e, mean_mi })
}
