//! Gradients of `C̄`, `V` and the outage probability with respect to the
//! conjugate phase factors `φ_l*` (transmit) and `ψ_k*` (receive).
//!
//! For a Hermitian weight `X`, the Wirtinger gradient of `tr(X R̄_T)` with
//! respect to layer `l` is `conj(diag(A_l(X P^H R_T)))`, where the sandwich
//! `A_l(Y) = (W^l Φ^{l-1} ... Φ^1 W^1) Y (Φ^L W^L ... Φ^{l+1} W^{l+1})`. The
//! receive side is the mirror image with `C_k(Y) = (U^{k+1} Ψ^{k+1} ... U^K Ψ^K) Y
//! (U^1 Ψ^1 ... U^k)` applied to `R_R D^H Y`. Every gradient below reduces to
//! one such weight per side, so the implicit sensitivities of the fixed
//! points only change the scalar mixing coefficients.

use num_complex::Complex64;

use crate::channel::SimLink;
use crate::det_equiv::{DetEquilibrium, EffectiveCorrelations, SolverOptions};
use crate::error::{Error, Result};
use crate::fluctuations::{moments, normal_pdf, FluctuationSolution, Moments};
use crate::linalg::{c, diag_of_product, scale_cols, scale_rows, CMat, CVec};

/// `∂/∂φ_l*` per transmit layer and `∂/∂ψ_k*` per receive layer.
#[derive(Debug, Clone, PartialEq)]
pub struct PhaseGradient {
    pub d_phi: Vec<CVec>,
    pub d_psi: Vec<CVec>,
}

impl PhaseGradient {
    pub fn zeros(link: &SimLink) -> Self {
        Self {
            d_phi: vec![CVec::zeros(link.m()); link.tx.layers()],
            d_psi: vec![CVec::zeros(link.n()); link.rx.layers()],
        }
    }

    fn entries(&self) -> impl Iterator<Item = &Complex64> {
        self.d_phi.iter().chain(self.d_psi.iter()).flat_map(|v| v.iter())
    }

    pub fn norm(&self) -> f64 {
        self.entries().map(|z| z.norm_sqr()).sum::<f64>().sqrt()
    }

    pub fn max_abs(&self) -> f64 {
        self.entries().map(|z| z.norm()).fold(0.0, f64::max)
    }

    pub fn is_finite(&self) -> bool {
        self.entries().all(|z| z.re.is_finite() && z.im.is_finite())
    }

    pub fn scaled(&self, a: f64) -> Self {
        Self {
            d_phi: self.d_phi.iter().map(|v| v * c(a)).collect(),
            d_psi: self.d_psi.iter().map(|v| v * c(a)).collect(),
        }
    }

    /// `a * self + b * other`.
    pub fn combine(&self, a: f64, other: &Self, b: f64) -> Self {
        let mix = |x: &[CVec], y: &[CVec]| -> Vec<CVec> { x.iter().zip(y).map(|(u, v)| u * c(a) + v * c(b)).collect() };
        Self {
            d_phi: mix(&self.d_phi, &other.d_phi),
            d_psi: mix(&self.d_psi, &other.d_psi),
        }
    }

    /// Derivatives with respect to the phase angles, `∂f/∂θ = 2 Im(conj(φ) g)`.
    pub fn phase_derivatives(&self, link: &SimLink) -> (Vec<Vec<f64>>, Vec<Vec<f64>>) {
        let side = |grads: &[CVec], stack: &crate::channel::SimStack| -> Vec<Vec<f64>> {
            grads
                .iter()
                .enumerate()
                .map(|(l, g)| {
                    let phi = stack.phase_factors(l);
                    g.iter().zip(phi.iter()).map(|(g, p)| 2.0 * (p.conj() * g).im).collect()
                })
                .collect()
        };
        (side(&self.d_phi, &link.tx), side(&self.d_psi, &link.rx))
    }

    /// Flat list of angle derivatives, transmit layers first.
    pub fn flat_phase_derivatives(&self, link: &SimLink) -> Vec<f64> {
        let (a, b) = self.phase_derivatives(link);
        a.into_iter().chain(b).flatten().collect()
    }
}

/// Partial products of both stacks at the current phases.
#[derive(Debug, Clone)]
pub struct GradientWorkspace {
    p: CMat,
    d: CMat,
    r_t: CMat,
    r_r: CMat,
    /// `W^l Φ^{l-1} ... Φ^1 W^1`
    tx_right: Vec<CMat>,
    /// `Φ^L W^L ... Φ^{l+1} W^{l+1}`
    tx_left: Vec<CMat>,
    /// `U^1 Ψ^1 ... U^k`
    rx_left: Vec<CMat>,
    /// `U^{k+1} Ψ^{k+1} ... U^K Ψ^K`
    rx_right: Vec<CMat>,
}

impl GradientWorkspace {
    pub fn new(link: &SimLink) -> Self {
        let tx = &link.tx;
        let l_count = tx.layers();
        let w = tx.transfers();
        let mut tx_right = Vec::with_capacity(l_count);
        tx_right.push(w[0].clone());
        for l in 1..l_count {
            let prev = scale_rows(&tx.phase_factors(l - 1), &tx_right[l - 1]);
            tx_right.push(&w[l] * prev);
        }
        let m = tx.atoms();
        let mut tx_left = vec![CMat::identity(m, m); l_count];
        for l in (0..l_count.saturating_sub(1)).rev() {
            tx_left[l] = scale_cols(&tx_left[l + 1], &tx.phase_factors(l + 1)) * &w[l + 1];
        }
        let p = scale_rows(&tx.phase_factors(l_count - 1), &tx_right[l_count - 1]);

        let rx = &link.rx;
        let k_count = rx.layers();
        let u = rx.transfers();
        let mut rx_left = Vec::with_capacity(k_count);
        rx_left.push(u[0].clone());
        for k in 1..k_count {
            let prev = scale_cols(&rx_left[k - 1], &rx.phase_factors(k - 1));
            rx_left.push(prev * &u[k]);
        }
        let n = rx.atoms();
        let mut rx_right = vec![CMat::identity(n, n); k_count];
        for k in (0..k_count.saturating_sub(1)).rev() {
            rx_right[k] = &u[k + 1] * scale_rows(&rx.phase_factors(k + 1), &rx_right[k + 1]);
        }
        let d = scale_cols(&rx_left[k_count - 1], &rx.phase_factors(k_count - 1));

        Self {
            p,
            d,
            r_t: link.stats.r_t().clone(),
            r_r: link.stats.r_r().clone(),
            tx_right,
            tx_left,
            rx_left,
            rx_right,
        }
    }

    pub fn p(&self) -> &CMat {
        &self.p
    }

    pub fn d(&self) -> &CMat {
        &self.d
    }

    /// `A_l(X)` for a 0-based transmit layer; `x` is `N_t x M`.
    pub fn sandwich_tx(&self, l: usize, x: &CMat) -> Result<CMat> {
        let (nt, m) = (self.p.ncols(), self.p.nrows());
        if l >= self.tx_right.len() || x.shape() != (nt, m) {
            return Err(Error::invalid(format!(
                "sandwich_tx needs l < {} and a {nt}x{m} matrix",
                self.tx_right.len()
            )));
        }
        Ok(&self.tx_right[l] * x * &self.tx_left[l])
    }

    /// `C_k(Y)` for a 0-based receive layer; `y` is `N x N_r`.
    pub fn sandwich_rx(&self, k: usize, y: &CMat) -> Result<CMat> {
        let (nr, n) = (self.d.nrows(), self.d.ncols());
        if k >= self.rx_left.len() || y.shape() != (n, nr) {
            return Err(Error::invalid(format!(
                "sandwich_rx needs k < {} and a {n}x{nr} matrix",
                self.rx_left.len()
            )));
        }
        Ok(&self.rx_right[k] * y * &self.rx_left[k])
    }

    /// Gradient of `tr(X R̄_T)` for Hermitian `X` (`N_t x N_t`).
    pub fn grad_tx(&self, x: &CMat) -> Vec<CVec> {
        let z = x * self.p.adjoint() * &self.r_t;
        self.tx_right
            .iter()
            .zip(&self.tx_left)
            .map(|(right, left)| diag_of_product(right, &(&z * left)).map(|v| v.conj()))
            .collect()
    }

    /// Gradient of `tr(Y R̄_R)` for Hermitian `Y` (`N_r x N_r`).
    pub fn grad_rx(&self, y: &CMat) -> Vec<CVec> {
        let z = &self.r_r * self.d.adjoint() * y;
        self.rx_right
            .iter()
            .zip(&self.rx_left)
            .map(|(right, left)| diag_of_product(right, &(&z * left)).map(|v| v.conj()))
            .collect()
    }

    fn gradient(&self, x: &CMat, y: &CMat) -> PhaseGradient {
        PhaseGradient {
            d_phi: self.grad_tx(x),
            d_psi: self.grad_rx(y),
        }
    }
}

const SINGULAR: f64 = 1e-12;

/// `∇C̄`. The sensitivities of `(δ, e)` enter through
/// `(1 - s² τ_T τ_R)`; the partials `∂C̄/∂δ`, `∂C̄/∂e` vanish at an exact
/// fixed point and are kept to stay consistent with a finite tolerance.
pub fn grad_mean_mi(ws: &GradientWorkspace, eq: &DetEquilibrium) -> Result<PhaseGradient> {
    let s = eq.s;
    if s == 0.0 {
        return Ok(ws.gradient(&(&eq.q_t * c(0.0)), &(&eq.q_r * c(0.0))));
    }
    let one_minus = 1.0 - s * s * eq.tau_t * eq.tau_r;
    if one_minus.abs() < SINGULAR {
        return Err(Error::SingularSensitivity("mean mutual information"));
    }
    let c_e = eq.tr_t - eq.delta / s;
    let c_d = eq.tr_r - eq.e / s;
    let a_t = (c_d - c_e * s * eq.tau_r) * s / one_minus;
    let a_r = (c_e - c_d * s * eq.tau_t) * s / one_minus;
    let x = &eq.q_t * c(eq.e) + &eq.q_t * &eq.q_t * c(a_t);
    let y = &eq.q_r * c(eq.delta) + &eq.q_r * &eq.q_r * c(a_r);
    Ok(ws.gradient(&x, &y))
}

/// `∇V = (γ̃∇γ + γ∇γ̃)/(1 - γγ̃)`, with `∇f`, `∇f̃` from the 2x2 system
/// `[1, σ²ρτ_R; σ²ρτ_T, 1] [∇f; ∇f̃] = σ² [tr(S² ∇R̄_R); tr(S̃² ∇R̄_T)]`.
pub fn grad_variance(
    ws: &GradientWorkspace,
    eff: &EffectiveCorrelations,
    fl: &FluctuationSolution,
) -> Result<PhaseGradient> {
    let rho = fl.rho;
    let sigma2 = eff.variance();
    let s = rho * sigma2;
    let (g, gt) = (fl.gamma, fl.gamma_tilde);
    let det = 1.0 - g * gt;
    if det.abs() < SINGULAR {
        return Err(Error::SingularSensitivity("variance"));
    }
    let s2 = &fl.s * &fl.s;
    let st2 = &fl.s_tilde * &fl.s_tilde;
    // transmit: a_T = tr(S̃² ∇R̄_T), ∇f = -σ⁴ρτ_R a_T/det, ∇f̃ = σ² a_T/det
    let dgamma_t = -2.0 * s * fl.kappa_r * rho * sigma2 / det;
    let dgamma_tilde_t = 2.0 * s * fl.kappa_t * rho * rho * sigma2 * sigma2 * fl.tau_r / det;
    let coef_st2 = (gt * dgamma_t + g * dgamma_tilde_t) / det;
    let coef_cube_t = g * 2.0 * s / det;
    let x = &st2 * c(coef_st2) + &fl.s_tilde * eff.rbar_t() * &st2 * c(coef_cube_t);
    // receive: a_R = tr(S² ∇R̄_R), ∇f = σ² a_R/det, ∇f̃ = -σ⁴ρτ_T a_R/det
    let dgamma_r = 2.0 * s * fl.kappa_r * rho * rho * sigma2 * sigma2 * fl.tau_t / det;
    let dgamma_tilde_r = -2.0 * s * fl.kappa_t * rho * sigma2 / det;
    let coef_s2 = (gt * dgamma_r + g * dgamma_tilde_r) / det;
    let coef_cube_r = gt * 2.0 * s / det;
    let y = &s2 * c(coef_s2) + &fl.s * eff.rbar_r() * &s2 * c(coef_cube_r);
    Ok(ws.gradient(&x, &y))
}

/// `∇P_out = φ(W) (-∇C̄ V - ½ (R - C̄) ∇V) / V^{3/2}`, `W = (R - C̄)/√V`.
pub fn grad_outage(
    ws: &GradientWorkspace,
    eff: &EffectiveCorrelations,
    m: &Moments,
    rate: f64,
) -> Result<PhaseGradient> {
    let v = m.fl.variance;
    if !(v > 0.0) {
        return Err(Error::invalid(format!(
            "outage gradient needs a positive variance, got {v}"
        )));
    }
    let gap = rate - m.eq.mean_mi;
    let w = gap / v.sqrt();
    let density = normal_pdf(w);
    let gc = grad_mean_mi(ws, &m.eq)?;
    let gv = grad_variance(ws, eff, &m.fl)?;
    let scale = density / v.powf(1.5);
    Ok(gc.combine(-v * scale, &gv, -0.5 * gap * scale))
}

/// Solve both fixed points for `link` and return `(P_out, ∇P_out)`.
pub fn outage_and_gradient(link: &SimLink, rho: f64, rate: f64, opts: &SolverOptions) -> Result<(f64, PhaseGradient)> {
    let eff = link.effective()?;
    let m = moments(&eff, rho, opts)?;
    let ws = GradientWorkspace::new(link);
    Ok((m.outage(rate)?, grad_outage(&ws, &eff, &m, rate)?))
}

/// Central differences over every phase angle, mapped to the `∂/∂φ*`
/// convention as `½ (∂f/∂θ) j e^{jθ}`. Only the component tangent to the
/// unit circle is observable this way, which is all the optimizer uses.
pub fn finite_difference_gradient(
    objective: impl Fn(&SimLink) -> Result<f64>,
    link: &SimLink,
    step: f64,
) -> Result<PhaseGradient> {
    if !(step > 0.0 && step.is_finite()) {
        return Err(Error::invalid(format!(
            "finite-difference step must be positive, got {step}"
        )));
    }
    let mut work = link.clone();
    let mut out = PhaseGradient::zeros(link);
    for l in 0..link.tx.layers() {
        let base = link.tx.phases()[l].clone();
        for i in 0..base.len() {
            let mut th = base.clone();
            th[i] = base[i] + step;
            work.tx.set_phases(l, &th)?;
            let fp = objective(&work)?;
            th[i] = base[i] - step;
            work.tx.set_phases(l, &th)?;
            let fm = objective(&work)?;
            let d = (fp - fm) / (2.0 * step);
            out.d_phi[l][i] = Complex64::new(0.0, 0.5 * d) * Complex64::from_polar(1.0, base[i]);
        }
        work.tx.set_phases(l, &base)?;
    }
    for k in 0..link.rx.layers() {
        let base = link.rx.phases()[k].clone();
        for i in 0..base.len() {
            let mut th = base.clone();
            th[i] = base[i] + step;
            work.rx.set_phases(k, &th)?;
            let fp = objective(&work)?;
            th[i] = base[i] - step;
            work.rx.set_phases(k, &th)?;
            let fm = objective(&work)?;
            let d = (fp - fm) / (2.0 * step);
            out.d_psi[k][i] = Complex64::new(0.0, 0.5 * d) * Complex64::from_polar(1.0, base[i]);
        }
        work.rx.set_phases(k, &base)?;
    }
    Ok(out)
}

/// Worst per-component disagreement of angle derivatives, as
/// `max |a - b| / max(|b|, floor / rel_tol)`: a value ≤ `rel_tol` means
/// every component is within `rel_tol` relative error or `floor` absolute.
pub fn worst_relative_error(
    link: &SimLink,
    analytic: &PhaseGradient,
    reference: &PhaseGradient,
    floor: f64,
    rel_tol: f64,
) -> f64 {
    let a = analytic.flat_phase_derivatives(link);
    let b = reference.flat_phase_derivatives(link);
    a.iter()
        .zip(&b)
        .map(|(x, y)| (x - y).abs() / y.abs().max(floor / rel_tol))
        .fold(0.0, f64::max)
}
