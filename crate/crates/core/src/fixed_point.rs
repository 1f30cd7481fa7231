//! Two-variable fixed-point solver: damped Picard iteration, with trial
//! Newton steps once the iterate is close and a Newton polish at the end.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SolverOptions {
    /// Picard damping `α` in `x ← (1-α) x + α T(x)`.
    pub damping: f64,
    pub tol: f64,
    pub max_iter: usize,
    pub init: [f64; 2],
    /// Newton steps attempted after Picard has met `tol`.
    pub polish_steps: usize,
}

impl Default for SolverOptions {
    fn default() -> Self {
        Self {
            damping: 0.5,
            tol: 1e-9,
            max_iter: 1000,
            init: [1.0, 1.0],
            polish_steps: 3,
        }
    }
}

impl SolverOptions {
    pub fn with_tol(mut self, tol: f64) -> Self {
        self.tol = tol;
        self
    }

    pub fn with_init(mut self, a: f64, b: f64) -> Self {
        self.init = [a, b];
        self
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.damping > 0.0 && self.damping <= 1.0) {
            return Err(Error::invalid(format!(
                "damping must lie in (0, 1], got {}",
                self.damping
            )));
        }
        if !(self.tol > 0.0 && self.tol.is_finite()) {
            return Err(Error::invalid(format!("tolerance must be positive, got {}", self.tol)));
        }
        if self.max_iter == 0 {
            return Err(Error::invalid("max_iter must be at least 1"));
        }
        if !(self.init.iter().all(|v| v.is_finite() && *v > 0.0)) {
            return Err(Error::invalid("initial point must be positive"));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct FixedPoint {
    pub x: [f64; 2],
    pub iterations: usize,
    pub residual: f64,
}

/// Relative self-consistency gap `max_i |x_i - T_i(x)| / |x_i|`.
pub fn gap(x: [f64; 2], tx: [f64; 2]) -> f64 {
    (0..2)
        .map(|i| (x[i] - tx[i]).abs() / x[i].abs().max(f64::MIN_POSITIVE))
        .fold(0.0, f64::max)
}

/// Gap below which each Picard step is followed by a trial Newton step.
const NEWTON_SWITCH: f64 = 1e-2;

fn newton_step(
    map: &impl Fn([f64; 2]) -> [f64; 2],
    jacobian: &impl Fn([f64; 2]) -> [[f64; 2]; 2],
    x: [f64; 2],
    tx: [f64; 2],
) -> Option<([f64; 2], [f64; 2], f64)> {
    let j = jacobian(x);
    // (I - J) dx = T(x) - x
    let m = [[1.0 - j[0][0], -j[0][1]], [-j[1][0], 1.0 - j[1][1]]];
    let det = m[0][0] * m[1][1] - m[0][1] * m[1][0];
    if det.abs() < 1e-300 || !det.is_finite() {
        return None;
    }
    let r = [tx[0] - x[0], tx[1] - x[1]];
    let cand = [
        x[0] + (m[1][1] * r[0] - m[0][1] * r[1]) / det,
        x[1] + (m[0][0] * r[1] - m[1][0] * r[0]) / det,
    ];
    if !(cand[0] > 0.0 && cand[1] > 0.0) {
        return None;
    }
    let tc = map(cand);
    let rc = gap(cand, tc);
    rc.is_finite().then_some((cand, tc, rc))
}

/// Solve `x = T(x)` on the positive quadrant. `jacobian` returns
/// `∂T/∂x` and drives the Newton steps; a Newton step is kept only when it
/// lowers the gap.
///
/// `T` must be crossed and decreasing: `T_0` depends on `x_1` only, `T_1` on
/// `x_0` only, both nonincreasing. When Picard exhausts `max_iter` the
/// solve falls back to bisection on `x_1 = T_1(T_0(x_1))`, which is
/// bracketed by `[0, T_1(0)]`.
pub fn solve(
    what: &'static str,
    map: impl Fn([f64; 2]) -> [f64; 2],
    jacobian: impl Fn([f64; 2]) -> [[f64; 2]; 2],
    opts: &SolverOptions,
) -> Result<FixedPoint> {
    opts.validate()?;
    let a = opts.damping;
    let mut x = opts.init;
    let mut tx = map(x);
    let mut res = gap(x, tx);
    let mut it = 0;
    while res > opts.tol {
        if it >= opts.max_iter {
            return bisect_reduced(what, &map, opts, it, res);
        }
        let picard = [(1.0 - a) * x[0] + a * tx[0], (1.0 - a) * x[1] + a * tx[1]];
        let tp = map(picard);
        let rp = gap(picard, tp);
        (x, tx, res) = (picard, tp, rp);
        if res < NEWTON_SWITCH {
            if let Some((xn, tn, rn)) = newton_step(&map, &jacobian, x, tx) {
                if rn < res {
                    (x, tx, res) = (xn, tn, rn);
                }
            }
        }
        it += 1;
        if !res.is_finite() {
            return Err(Error::Numeric(format!("{what}: non-finite iterate")));
        }
    }
    for _ in 0..opts.polish_steps {
        if res == 0.0 {
            break;
        }
        match newton_step(&map, &jacobian, x, tx) {
            Some((xn, tn, rn)) if rn < res => (x, tx, res) = (xn, tn, rn),
            _ => break,
        }
    }
    Ok(FixedPoint {
        x,
        iterations: it,
        residual: res,
    })
}

fn bisect_reduced(
    what: &'static str,
    map: &impl Fn([f64; 2]) -> [f64; 2],
    opts: &SolverOptions,
    picard_iterations: usize,
    picard_residual: f64,
) -> Result<FixedPoint> {
    let t0 = |x1: f64| map([1.0, x1])[0];
    let t1 = |x0: f64| map([x0, 1.0])[1];
    let h = |x1: f64| x1 - t1(t0(x1));
    let (mut lo, mut hi) = (0.0, t1(0.0));
    let mut best: Option<FixedPoint> = None;
    let mut it = picard_iterations;
    for _ in 0..2100 {
        let mid = 0.5 * (lo + hi);
        if !(mid > lo && mid < hi) {
            break;
        }
        it += 1;
        let hm = h(mid);
        if !hm.is_finite() {
            break;
        }
        let x = [t0(mid), mid];
        let res = gap(x, map(x));
        if best.as_ref().is_none_or(|b| res < b.residual) {
            best = Some(FixedPoint {
                x,
                iterations: it,
                residual: res,
            });
        }
        if res <= opts.tol {
            break;
        }
        if hm < 0.0 {
            lo = mid;
        } else {
            hi = mid;
        }
    }
    match best {
        Some(fp) if fp.residual <= opts.tol => Ok(fp),
        Some(fp) => Err(Error::Convergence {
            what,
            iterations: fp.iterations,
            residual: fp.residual.min(picard_residual),
        }),
        None => Err(Error::Convergence {
            what,
            iterations: it,
            residual: picard_residual,
        }),
    }
}
