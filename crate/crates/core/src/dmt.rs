//! Finite-SNR diversity-multiplexing tradeoff.
//!
//! For multiplexing gain `w = qR/C̄` (`q = min(M, N)`) the outage argument is
//! `u = (R - C̄)/√V = ((w - q)/q) G` with `G = C̄/√V`, so the diversity gain
//! `d = -∂ log P_out / ∂ log ρ` at fixed `w` is
//!
//! ```text
//! d(w, ρ) = ρ ((q - w)/q) φ(u) G'(ρ) / Φ(u),   G' = (C̄'V - ½ C̄ V') / V^{3/2}.
//! ```

use serde::{Deserialize, Serialize};

use crate::det_equiv::{EffectiveCorrelations, SolverOptions};
use crate::error::{Error, Result};
use crate::fluctuations::{moments, normal_cdf, normal_pdf, Moments};

/// Outage probabilities below this are treated as underflow.
pub const TAIL_FLOOR: f64 = 1e-300;

/// Derivatives with respect to `ρ`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct TheoryDerivatives {
    pub mean_mi_prime: f64,
    pub variance_prime: f64,
    pub e_prime: f64,
    pub delta_prime: f64,
    pub f_prime: f64,
    pub f_tilde_prime: f64,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct DmtPoint {
    pub w: f64,
    pub rho: f64,
    pub d_closed: f64,
    pub d_numeric: f64,
    pub derivatives: TheoryDerivatives,
}

pub fn multiplexing_gain(rate: f64, mean_mi: f64, q: usize) -> Result<f64> {
    if !(mean_mi > 0.0) {
        return Err(Error::invalid(format!(
            "mean mutual information must be positive, got {mean_mi}"
        )));
    }
    Ok(q as f64 * rate / mean_mi)
}

pub fn rate_from_gain(w: f64, mean_mi: f64, q: usize) -> f64 {
    w * mean_mi / q as f64
}

fn solve_2x2(a: [[f64; 2]; 2], b: [f64; 2]) -> Result<[f64; 2]> {
    let det = a[0][0] * a[1][1] - a[0][1] * a[1][0];
    if det.abs() < 1e-12 || !det.is_finite() {
        return Err(Error::SingularSensitivity("SNR derivative"));
    }
    Ok([
        (b[0] * a[1][1] - a[0][1] * b[1]) / det,
        (a[0][0] * b[1] - a[1][0] * b[0]) / det,
    ])
}

/// Differentiate both fixed points in `ρ`.
pub fn theory_derivatives(eff: &EffectiveCorrelations, m: &Moments) -> Result<TheoryDerivatives> {
    let (eq, fl) = (&m.eq, &m.fl);
    let rho = eq.rho;
    if !(rho > 0.0) {
        return Err(Error::invalid("derivatives need a positive SNR"));
    }
    let sigma2 = eff.variance();
    let s = eq.s;
    // [1, sτ_T; sτ_R, 1] [δ'; e'] = σ² [tr(R̄_T Q_t); tr(R̄_R Q_r)]
    let [delta_prime, e_prime] = solve_2x2(
        [[1.0, s * eq.tau_t], [s * eq.tau_r, 1.0]],
        [sigma2 * eq.tr_t, sigma2 * eq.tr_r],
    )?;
    let c_e = eq.tr_t - eq.delta / s;
    let c_d = eq.tr_r - eq.e / s;
    let mean_mi_prime = c_e * e_prime + c_d * delta_prime + eq.delta * eq.e / (s * s) * sigma2;

    // f' = -σ²τ_R (f̃ + ρ f̃'),  f̃' = -σ²τ_T (f + ρ f')
    let [f_prime, f_tilde_prime] = solve_2x2(
        [[1.0, sigma2 * fl.tau_r * rho], [sigma2 * fl.tau_t * rho, 1.0]],
        [-sigma2 * fl.tau_r * fl.f_tilde, -sigma2 * fl.tau_t * fl.f],
    )?;
    let sf = rho * sigma2;
    let gamma_prime = sigma2 * fl.tau_r - 2.0 * sf * fl.kappa_r * (fl.f_tilde + rho * f_tilde_prime);
    let gamma_tilde_prime = sigma2 * fl.tau_t - 2.0 * sf * fl.kappa_t * (fl.f + rho * f_prime);
    let variance_prime =
        (gamma_prime * fl.gamma_tilde + fl.gamma * gamma_tilde_prime) / (1.0 - fl.gamma * fl.gamma_tilde);
    Ok(TheoryDerivatives {
        mean_mi_prime,
        variance_prime,
        e_prime,
        delta_prime,
        f_prime,
        f_tilde_prime,
    })
}

fn check_gain(w: f64, q: usize) -> Result<()> {
    if q == 0 || !(w > 0.0 && w < q as f64) {
        return Err(Error::invalid(format!(
            "multiplexing gain must lie in (0, {q}), got {w}"
        )));
    }
    Ok(())
}

fn outage_at_gain(m: &Moments, w: f64, q: usize) -> f64 {
    let qf = q as f64;
    let g = m.eq.mean_mi / m.fl.variance.sqrt();
    normal_cdf((w - qf) / qf * g)
}

/// Closed-form diversity gain, with its derivative record.
pub fn dmt_closed_form(
    eff: &EffectiveCorrelations,
    q: usize,
    w: f64,
    rho: f64,
    opts: &SolverOptions,
) -> Result<(f64, TheoryDerivatives)> {
    check_gain(w, q)?;
    let m = moments(eff, rho, opts)?;
    let der = theory_derivatives(eff, &m)?;
    let (c, v) = (m.eq.mean_mi, m.fl.variance);
    let qf = q as f64;
    let u = (w - qf) / qf * c / v.sqrt();
    let cdf = normal_cdf(u);
    if cdf < TAIL_FLOOR {
        return Err(Error::TailUnderflow(cdf));
    }
    let g_prime = (der.mean_mi_prime * v - 0.5 * c * der.variance_prime) / v.powf(1.5);
    Ok((rho * (qf - w) / qf * normal_pdf(u) * g_prime / cdf, der))
}

/// `-∂ log P_out / ∂ log ρ` by central differences in `log ρ` at fixed `w`.
pub fn dmt_numeric(
    eff: &EffectiveCorrelations,
    q: usize,
    w: f64,
    rho: f64,
    step: f64,
    opts: &SolverOptions,
) -> Result<f64> {
    check_gain(w, q)?;
    if !(rho > 0.0 && step > 0.0) {
        return Err(Error::invalid("numeric DMT needs a positive SNR and step"));
    }
    let log_p = |r: f64| -> Result<f64> {
        let p = outage_at_gain(&moments(eff, r, opts)?, w, q);
        if p < TAIL_FLOOR {
            return Err(Error::TailUnderflow(p));
        }
        Ok(p.ln())
    };
    let up = log_p(rho * step.exp())?;
    let down = log_p(rho * (-step).exp())?;
    Ok(-(up - down) / (2.0 * step))
}

/// Closed form and numeric oracle at one point.
pub fn dmt_point(eff: &EffectiveCorrelations, q: usize, w: f64, rho: f64, opts: &SolverOptions) -> Result<DmtPoint> {
    let (d_closed, derivatives) = dmt_closed_form(eff, q, w, rho, opts)?;
    let d_numeric = dmt_numeric(eff, q, w, rho, 1e-3, opts)?;
    Ok(DmtPoint {
        w,
        rho,
        d_closed,
        d_numeric,
        derivatives,
    })
}
