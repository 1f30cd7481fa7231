//! Projected gradient descent over the unit-modulus SIM phase factors.

use std::time::Instant;

use num_complex::Complex64;
use serde::{Deserialize, Serialize};

use crate::channel::SimLink;
use crate::det_equiv::{solve_fixed_point, SolverOptions};
use crate::error::{Error, Result};
use crate::fluctuations::moments;
use crate::gradients::{grad_mean_mi, grad_outage, GradientWorkspace, PhaseGradient};
use crate::linalg::{c, CVec};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "kebab-case")]
pub enum Objective {
    /// Minimize the Gaussian outage probability at `rate` (nats).
    Outage { rate: f64 },
    /// Maximize the mean mutual information (minimize `-C̄`).
    NegMeanMi,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "kebab-case")]
pub enum UpdateMode {
    /// Every iteration updates both SIMs.
    Joint,
    /// `inner_steps` transmit-only iterations, then `inner_steps` receive-only
    /// iterations, repeating.
    Alternating { inner_steps: usize },
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct OptimizerConfig {
    pub step_tx: f64,
    pub step_rx: f64,
    pub max_iter: usize,
    pub tol: f64,
    pub objective: Objective,
    pub mode: UpdateMode,
    /// Halve the step (up to 20 times) whenever the objective would increase.
    pub backtracking: bool,
    /// With backtracking, the step carried into the next iteration grows by
    /// this factor after an iteration that needed no halving. `1` keeps the
    /// configured step as the ceiling.
    pub step_growth: f64,
    pub solver: SolverOptions,
}

impl Default for OptimizerConfig {
    fn default() -> Self {
        Self {
            step_tx: 0.01,
            step_rx: 0.01,
            max_iter: 100,
            tol: 1e-5,
            objective: Objective::NegMeanMi,
            mode: UpdateMode::Joint,
            backtracking: false,
            step_growth: 1.0,
            solver: SolverOptions::default(),
        }
    }
}

impl OptimizerConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.step_tx > 0.0 && self.step_rx > 0.0 && self.step_tx.is_finite() && self.step_rx.is_finite()) {
            return Err(Error::invalid("step sizes must be positive and finite"));
        }
        if !(self.step_growth >= 1.0 && self.step_growth.is_finite()) {
            return Err(Error::invalid("step growth must be at least 1"));
        }
        if self.max_iter == 0 {
            return Err(Error::invalid("max_iter must be at least 1"));
        }
        if !(self.tol >= 0.0) {
            return Err(Error::invalid("tol must be nonnegative"));
        }
        if let UpdateMode::Alternating { inner_steps: 0 } = self.mode {
            return Err(Error::invalid("alternating mode needs at least one inner step"));
        }
        if let Objective::Outage { rate } = self.objective {
            if !rate.is_finite() {
                return Err(Error::invalid("outage rate must be finite"));
            }
        }
        self.solver.validate()
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Termination {
    MaxIterations,
    Converged,
    /// The gradient vanished; phases were left unchanged.
    Stationary,
    /// A non-finite objective or gradient appeared; the last finite phases
    /// are kept.
    NonFinite,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct IterationRecord {
    pub iteration: usize,
    pub objective: f64,
    pub grad_norm: f64,
    pub elapsed_s: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct OptimizationTrace {
    pub initial_objective: f64,
    pub records: Vec<IterationRecord>,
    pub tx_phases: Vec<Vec<f64>>,
    pub rx_phases: Vec<Vec<f64>>,
    pub termination: Termination,
}

impl OptimizationTrace {
    pub fn final_objective(&self) -> f64 {
        self.records.last().map_or(self.initial_objective, |r| r.objective)
    }

    pub fn iterations(&self) -> usize {
        self.records.len()
    }

    /// Objective after each iteration, prefixed with the starting value.
    pub fn objective_curve(&self) -> Vec<f64> {
        std::iter::once(self.initial_objective)
            .chain(self.records.iter().map(|r| r.objective))
            .collect()
    }

    /// First iteration whose objective is within `rel` (relative) of `target`,
    /// for a minimized objective.
    pub fn iterations_to_reach(&self, target: f64, rel: f64) -> Option<usize> {
        let bound = target + rel * target.abs();
        self.objective_curve().iter().position(|&v| v <= bound)
    }

    /// Install the final phases into `link`.
    pub fn apply(&self, link: &mut SimLink) -> Result<()> {
        for (l, p) in self.tx_phases.iter().enumerate() {
            link.tx.set_phases(l, p)?;
        }
        for (k, p) in self.rx_phases.iter().enumerate() {
            link.rx.set_phases(k, p)?;
        }
        Ok(())
    }
}

/// `e^{j∠v_i}`, with `1` for entries below `1e-15` in magnitude.
pub fn project_unit_modulus(v: &CVec) -> CVec {
    v.map(|z| {
        let r = z.norm();
        if r < 1e-15 {
            c(1.0)
        } else {
            z / r
        }
    })
}

pub fn evaluate_objective(link: &SimLink, objective: Objective, rho: f64, solver: &SolverOptions) -> Result<f64> {
    let eff = link.effective()?;
    match objective {
        Objective::Outage { rate } => moments(&eff, rho, solver)?.outage(rate),
        Objective::NegMeanMi => Ok(-solve_fixed_point(&eff, rho, solver)?.mean_mi),
    }
}

pub fn objective_and_gradient(
    link: &SimLink,
    objective: Objective,
    rho: f64,
    solver: &SolverOptions,
) -> Result<(f64, PhaseGradient)> {
    let eff = link.effective()?;
    let ws = GradientWorkspace::new(link);
    match objective {
        Objective::Outage { rate } => {
            let m = moments(&eff, rho, solver)?;
            Ok((m.outage(rate)?, grad_outage(&ws, &eff, &m, rate)?))
        }
        Objective::NegMeanMi => {
            let eq = solve_fixed_point(&eff, rho, solver)?;
            Ok((-eq.mean_mi, grad_mean_mi(&ws, &eq)?.scaled(-1.0)))
        }
    }
}

fn step_layers(stack: &mut crate::channel::SimStack, grads: &[CVec], mu: f64) -> Result<()> {
    for (l, g) in grads.iter().enumerate() {
        let phi = stack.phase_factors(l);
        let moved = phi - g * Complex64::new(mu, 0.0);
        stack.set_phase_factors(l, &project_unit_modulus(&moved))?;
    }
    Ok(())
}

fn updated(link: &SimLink, g: &PhaseGradient, mu_tx: f64, mu_rx: f64, tx: bool, rx: bool) -> Result<SimLink> {
    let mut next = link.clone();
    if tx {
        step_layers(&mut next.tx, &g.d_phi, mu_tx)?;
    }
    if rx {
        step_layers(&mut next.rx, &g.d_psi, mu_rx)?;
    }
    Ok(next)
}

fn finite(v: f64, g: &PhaseGradient) -> bool {
    v.is_finite() && g.is_finite()
}

/// Gradient norm at or below which an iterate counts as stationary.
pub const STATIONARY_NORM: f64 = 1e-12;

/// Run projected gradient descent from the phases currently in `link`.
pub fn optimize(link: &SimLink, cfg: &OptimizerConfig, rho: f64) -> Result<OptimizationTrace> {
    cfg.validate()?;
    let start = Instant::now();
    let mut cur = link.clone();
    let (mut obj, mut grad) = objective_and_gradient(&cur, cfg.objective, rho, &cfg.solver)?;
    if !finite(obj, &grad) {
        return Err(Error::Numeric("objective is not finite at the initial phases".into()));
    }
    let initial_objective = obj;
    let mut records = Vec::new();
    let mut termination = Termination::MaxIterations;
    // Step multiplier carried between iterations when backtracking.
    let mut carry = 1.0;
    for it in 1..=cfg.max_iter {
        let (tx, rx) = match cfg.mode {
            UpdateMode::Joint => (true, true),
            UpdateMode::Alternating { inner_steps } => {
                let tx_turn = ((it - 1) / inner_steps) % 2 == 0;
                (tx_turn, !tx_turn)
            }
        };
        let active_norm = {
            let part = PhaseGradient {
                d_phi: if tx { grad.d_phi.clone() } else { vec![] },
                d_psi: if rx { grad.d_psi.clone() } else { vec![] },
            };
            part.norm()
        };
        if active_norm <= STATIONARY_NORM {
            records.push(IterationRecord {
                iteration: it,
                objective: obj,
                grad_norm: active_norm,
                elapsed_s: start.elapsed().as_secs_f64(),
            });
            termination = Termination::Stationary;
            break;
        }
        let mut scale = carry;
        let mut attempt = 0;
        let (next, next_obj, next_grad) = loop {
            let cand = updated(&cur, &grad, cfg.step_tx * scale, cfg.step_rx * scale, tx, rx)?;
            let evaluated = objective_and_gradient(&cand, cfg.objective, rho, &cfg.solver);
            let (v, g) = match evaluated {
                Ok(pair) => pair,
                Err(Error::Numeric(_)) | Err(Error::DegenerateVariance(_)) => (f64::NAN, PhaseGradient::zeros(&cand)),
                Err(e) => return Err(e),
            };
            if cfg.backtracking && attempt < 20 && !(v <= obj) {
                scale *= 0.5;
                attempt += 1;
                continue;
            }
            break (cand, v, g);
        };
        if cfg.backtracking {
            carry = if attempt == 0 { scale * cfg.step_growth } else { scale };
        }
        if !finite(next_obj, &next_grad) {
            termination = Termination::NonFinite;
            break;
        }
        let change = (next_obj - obj).abs();
        cur = next;
        obj = next_obj;
        grad = next_grad;
        records.push(IterationRecord {
            iteration: it,
            objective: obj,
            grad_norm: active_norm,
            elapsed_s: start.elapsed().as_secs_f64(),
        });
        if change < cfg.tol {
            termination = Termination::Converged;
            break;
        }
    }
    Ok(OptimizationTrace {
        initial_objective,
        records,
        tx_phases: cur.tx.phases().to_vec(),
        rx_phases: cur.rx.phases().to_vec(),
        termination,
    })
}

/// Optimize from every starting link and keep the run with the lowest final
/// objective (the earliest on ties). Returns its index and trace.
pub fn optimize_best_of(starts: &[SimLink], cfg: &OptimizerConfig, rho: f64) -> Result<(usize, OptimizationTrace)> {
    let mut best: Option<(usize, OptimizationTrace)> = None;
    for (i, link) in starts.iter().enumerate() {
        let trace = optimize(link, cfg, rho)?;
        if best
            .as_ref()
            .is_none_or(|(_, b)| trace.final_objective() < b.final_objective())
        {
            best = Some((i, trace));
        }
    }
    best.ok_or_else(|| Error::invalid("need at least one starting point"))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::channel::LinkLayout;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    #[test]
    fn projection_examples() {
        let v = CVec::from_vec(vec![c(2.0), Complex64::new(0.0, -3.0), c(0.0)]);
        let p = project_unit_modulus(&v);
        assert!((p[0] - c(1.0)).norm() < 1e-15);
        assert!((p[1] - Complex64::new(0.0, -1.0)).norm() < 1e-15);
        assert_eq!(p[2], c(1.0));
        let u = CVec::from_vec(vec![Complex64::from_polar(1.0, 0.3), Complex64::from_polar(1.0, -2.0)]);
        assert!((project_unit_modulus(&u) - &u).norm() < 1e-15);
    }

    #[test]
    fn deep_tail_start_is_stationary() {
        let link = LinkLayout::new(4, 4, 8, 8, 1, 1)
            .build_random(&mut ChaCha8Rng::seed_from_u64(4))
            .unwrap();
        let cfg = OptimizerConfig {
            objective: Objective::Outage { rate: 1e-9 },
            ..Default::default()
        };
        let m = moments(&link.effective().unwrap(), 1e8, &cfg.solver).unwrap();
        assert!((1e-9 - m.eq.mean_mi) / m.fl.variance.sqrt() < -8.0);
        let trace = optimize(&link, &cfg, 1e8).unwrap();
        assert_eq!(trace.termination, Termination::Stationary);
        assert_eq!(trace.iterations(), 1);
        assert_eq!(trace.tx_phases, link.tx.phases());
    }

    #[test]
    fn mean_mi_ascent_improves() {
        let link = LinkLayout::new(2, 2, 4, 4, 2, 2)
            .build_random(&mut ChaCha8Rng::seed_from_u64(8))
            .unwrap();
        let cfg = OptimizerConfig {
            step_tx: 1.0,
            step_rx: 1.0,
            max_iter: 20,
            ..Default::default()
        };
        let trace = optimize(&link, &cfg, 100.0).unwrap();
        assert!(trace.final_objective() < trace.initial_objective);
        for p in trace.tx_phases.iter().flatten() {
            assert!((0.0..2.0 * std::f64::consts::PI).contains(p));
        }
    }

    #[test]
    fn config_validation() {
        let bad = OptimizerConfig {
            step_tx: 0.0,
            ..Default::default()
        };
        assert!(bad.validate().is_err());
        let bad = OptimizerConfig {
            mode: UpdateMode::Alternating { inner_steps: 0 },
            ..Default::default()
        };
        assert!(bad.validate().is_err());
    }
}
