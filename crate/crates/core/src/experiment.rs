//! JSON-configured experiments: parameter sweeps of the mean mutual
//! information, outage and DMT, the optimizer comparison, and the Monte Carlo
//! and gradient verification suites.
//!
//! Every field has a default, and an empty object `{}` describes the full-scale
//! link: `N_t = N_r = 32`, `M = N = 200`, `L = K = 4`, 2 GHz carrier, 200 m
//! link with path-loss exponent 2.5, 20 dBm transmit power, -110 dBm noise and
//! `5λ` thick SIMs.
//!
//! Rates and mutual information are reported in bits in the outputs; the
//! library works in nats internally.

use std::f64::consts::{LN_2, LOG2_E};
use std::fmt::Write as _;
use std::fs;
use std::path::{Path, PathBuf};

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::channel::{dbm_to_watts, loss_db_to_gain, path_loss_db, LinkLayout, SimLink, SPEED_OF_LIGHT};
use crate::det_equiv::{solve_fixed_point, SolverOptions};
use crate::dmt::dmt_point;
use crate::error::{Error, Result};
use crate::fluctuations::{moments, Moments};
use crate::gradients::{
    finite_difference_gradient, grad_mean_mi, grad_outage, grad_variance, worst_relative_error, GradientWorkspace,
};
use crate::montecarlo::{compare_with_theory, sample_mi_multi, McEstimate, McTolerances};
use crate::optimizer::{evaluate_objective, optimize, optimize_best_of, Objective, OptimizerConfig, UpdateMode};

/// Largest `N_t N_r M N L K` accepted by the gradient check.
pub const CHECK_GRAD_CAP: u64 = 1 << 20;
/// Relative tolerance of the gradient check.
pub const CHECK_GRAD_TOL: f64 = 1e-4;
/// Relative tolerance between the closed-form and numeric DMT.
pub const DMT_TOL: f64 = 1e-3;

/// Random phase draws use streams far above the Monte Carlo trial streams.
const PHASE_STREAM: u64 = 1 << 63;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Scenario {
    #[default]
    EmiVsLayers,
    EmiVsAtoms,
    Optimize,
    OutageVsPower,
    OutageVsRate,
    Dmt,
    McVerify,
    CheckGrad,
}

impl Scenario {
    pub fn name(self) -> &'static str {
        match self {
            Scenario::EmiVsLayers => "emi-vs-layers",
            Scenario::EmiVsAtoms => "emi-vs-atoms",
            Scenario::Optimize => "optimize",
            Scenario::OutageVsPower => "outage-vs-power",
            Scenario::OutageVsRate => "outage-vs-rate",
            Scenario::Dmt => "dmt",
            Scenario::McVerify => "mc-verify",
            Scenario::CheckGrad => "check-grad",
        }
    }

    fn default_axis(self) -> Option<SweepAxis> {
        match self {
            Scenario::EmiVsLayers => Some(SweepAxis::Layers),
            Scenario::EmiVsAtoms => Some(SweepAxis::Atoms),
            Scenario::OutageVsPower => Some(SweepAxis::PowerDbm),
            Scenario::OutageVsRate => Some(SweepAxis::RateBits),
            Scenario::Dmt => Some(SweepAxis::GainFraction),
            Scenario::McVerify => Some(SweepAxis::PowerDbm),
            Scenario::Optimize | Scenario::CheckGrad => None,
        }
    }

    fn allowed_axes(self) -> &'static [SweepAxis] {
        use SweepAxis::*;
        match self {
            Scenario::EmiVsLayers => &[L, K, Layers],
            Scenario::EmiVsAtoms => &[M, N, Atoms],
            Scenario::OutageVsPower | Scenario::McVerify => &[PowerDbm, Rho],
            Scenario::OutageVsRate => &[RateBits],
            Scenario::Dmt => &[GainFraction],
            Scenario::Optimize | Scenario::CheckGrad => &[],
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum SweepAxis {
    L,
    K,
    /// `L` and `K` together.
    #[serde(rename = "layers")]
    Layers,
    M,
    N,
    /// `M` and `N` together.
    #[serde(rename = "atoms")]
    Atoms,
    #[serde(rename = "power-dbm")]
    PowerDbm,
    /// Linear SNR, used as is.
    #[serde(rename = "rho")]
    Rho,
    #[serde(rename = "rate-bits")]
    RateBits,
    /// Multiplexing gain as a fraction of `q = min(M, N)`.
    #[serde(rename = "gain-fraction")]
    GainFraction,
}

impl SweepAxis {
    fn name(self) -> &'static str {
        match self {
            SweepAxis::L => "L",
            SweepAxis::K => "K",
            SweepAxis::Layers => "layers",
            SweepAxis::M => "M",
            SweepAxis::N => "N",
            SweepAxis::Atoms => "atoms",
            SweepAxis::PowerDbm => "power_dbm",
            SweepAxis::Rho => "rho",
            SweepAxis::RateBits => "rate_bits",
            SweepAxis::GainFraction => "gain_fraction",
        }
    }

    fn integral(self) -> bool {
        matches!(
            self,
            SweepAxis::L | SweepAxis::K | SweepAxis::Layers | SweepAxis::M | SweepAxis::N | SweepAxis::Atoms
        )
    }

    fn default_values(self) -> Vec<f64> {
        match self {
            SweepAxis::L | SweepAxis::K | SweepAxis::Layers => (1..=7).map(f64::from).collect(),
            SweepAxis::M | SweepAxis::N | SweepAxis::Atoms => vec![16.0, 36.0, 64.0, 100.0, 144.0, 196.0],
            SweepAxis::PowerDbm => (-2..=6).map(|i| f64::from(i) * 5.0).collect(),
            SweepAxis::Rho => vec![0.1, 1.0, 10.0, 100.0],
            SweepAxis::RateBits => (1..=20).map(|i| f64::from(i) * 5.0).collect(),
            SweepAxis::GainFraction => vec![0.1, 0.2, 0.3, 0.4, 0.5, 0.6, 0.7, 0.8, 0.9],
        }
    }
}

/// How transmit power and path loss enter the model.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Normalization {
    /// `β` from the path loss scales the channel variance and
    /// `ρ = P / (N_t σ²)`.
    #[default]
    Physical,
    /// `β` is rescaled so that `E ||H||_F² = N_t N_r` at the initial phases
    /// and the path gain moves into `ρ = P β / (N_t σ²)`.
    UnitGain,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct Physics {
    pub carrier_hz: f64,
    pub distance_m: f64,
    pub reference_distance_m: f64,
    pub path_loss_exponent: f64,
    pub shadow_db: f64,
    pub tx_power_dbm: f64,
    pub noise_dbm: f64,
    /// SIM thickness in wavelengths.
    pub thickness_wavelengths: f64,
    pub normalization: Normalization,
    /// Linear SNR overriding the one derived from the powers.
    pub rho: Option<f64>,
}

impl Default for Physics {
    fn default() -> Self {
        Self {
            carrier_hz: 2e9,
            distance_m: 200.0,
            reference_distance_m: 1.0,
            path_loss_exponent: 2.5,
            shadow_db: 0.0,
            tx_power_dbm: 20.0,
            noise_dbm: -110.0,
            thickness_wavelengths: 5.0,
            normalization: Normalization::Physical,
            rho: None,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum ObjectiveKind {
    #[default]
    NegMeanMi,
    Outage,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum ModeKind {
    #[default]
    Joint,
    Alternating,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct OptimizerSettings {
    /// Optimize the phases before evaluating a sweep point.
    pub enabled: bool,
    pub objective: ObjectiveKind,
    pub mode: ModeKind,
    pub inner_steps: i64,
    pub step_tx: f64,
    pub step_rx: f64,
    pub max_iter: i64,
    pub tol: f64,
    pub backtracking: bool,
    pub step_growth: f64,
    /// Random starting points; the best final objective is kept.
    pub starts: i64,
}

impl Default for OptimizerSettings {
    fn default() -> Self {
        Self {
            enabled: true,
            objective: ObjectiveKind::NegMeanMi,
            mode: ModeKind::Joint,
            inner_steps: 10,
            step_tx: 30.0,
            step_rx: 30.0,
            max_iter: 500,
            tol: 1e-10,
            backtracking: true,
            step_growth: 1.2,
            starts: 1,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct McSettings {
    /// Add Monte Carlo columns to sweeps (always on for `mc-verify`).
    pub enabled: bool,
    pub trials: i64,
    pub seed: u64,
}

impl Default for McSettings {
    fn default() -> Self {
        Self {
            enabled: false,
            trials: 10_000,
            seed: 1,
        }
    }
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct Sweep {
    pub axis: Option<SweepAxis>,
    pub values: Option<Vec<f64>>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct ExperimentConfig {
    pub scenario: Scenario,
    #[serde(rename = "Nt")]
    pub n_t: i64,
    #[serde(rename = "Nr")]
    pub n_r: i64,
    #[serde(rename = "M")]
    pub m: i64,
    #[serde(rename = "N")]
    pub n: i64,
    #[serde(rename = "L")]
    pub l: i64,
    #[serde(rename = "K")]
    pub k: i64,
    pub physics: Physics,
    pub optimizer: OptimizerSettings,
    pub mc: McSettings,
    pub sweep: Sweep,
    /// Target rate for outage; defaults to the mean mutual information at
    /// the initial phases.
    pub rate_bits: Option<f64>,
    pub output: PathBuf,
}

impl Default for ExperimentConfig {
    fn default() -> Self {
        Self {
            scenario: Scenario::default(),
            n_t: 32,
            n_r: 32,
            m: 200,
            n: 200,
            l: 4,
            k: 4,
            physics: Physics::default(),
            optimizer: OptimizerSettings::default(),
            mc: McSettings::default(),
            sweep: Sweep::default(),
            rate_bits: None,
            output: PathBuf::from("simmimo-out"),
        }
    }
}

pub fn parse_config(text: &str) -> Result<ExperimentConfig> {
    Ok(serde_json::from_str(text)?)
}

pub fn load_config(path: &Path) -> Result<ExperimentConfig> {
    let text = fs::read_to_string(path).map_err(|source| Error::Io {
        path: path.to_path_buf(),
        source,
    })?;
    parse_config(&text)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct Dims {
    pub n_t: usize,
    pub n_r: usize,
    pub m: usize,
    pub n: usize,
    pub l: usize,
    pub k: usize,
}

impl Dims {
    fn product(&self) -> u64 {
        [self.n_t, self.n_r, self.m, self.n, self.l, self.k]
            .iter()
            .fold(1u64, |acc, &d| acc.saturating_mul(d as u64))
    }

    fn with_axis(mut self, axis: SweepAxis, v: usize) -> Self {
        match axis {
            SweepAxis::L => self.l = v,
            SweepAxis::K => self.k = v,
            SweepAxis::Layers => (self.l, self.k) = (v, v),
            SweepAxis::M => self.m = v,
            SweepAxis::N => self.n = v,
            SweepAxis::Atoms => (self.m, self.n) = (v, v),
            _ => {}
        }
        self
    }
}

fn positive_dim(field: &str, v: i64) -> Result<usize> {
    if v < 1 {
        return Err(Error::config(field, format!("must be at least 1, got {v}")));
    }
    usize::try_from(v).map_err(|_| Error::config(field, "too large"))
}

fn finite_field(field: &str, v: f64) -> Result<f64> {
    if !v.is_finite() {
        return Err(Error::config(field, format!("must be finite, got {v}")));
    }
    Ok(v)
}

fn positive_field(field: &str, v: f64) -> Result<f64> {
    if !(v > 0.0 && v.is_finite()) {
        return Err(Error::config(field, format!("must be positive and finite, got {v}")));
    }
    Ok(v)
}

/// A validated configuration.
#[derive(Debug, Clone)]
pub struct Plan {
    pub config: ExperimentConfig,
    pub dims: Dims,
    pub axis: Option<SweepAxis>,
    pub values: Vec<f64>,
    pub trials: usize,
    pub starts: usize,
    pub optimizer: OptimizerConfig,
}

impl ExperimentConfig {
    pub fn validate(&self) -> Result<Plan> {
        let dims = Dims {
            n_t: positive_dim("Nt", self.n_t)?,
            n_r: positive_dim("Nr", self.n_r)?,
            m: positive_dim("M", self.m)?,
            n: positive_dim("N", self.n)?,
            l: positive_dim("L", self.l)?,
            k: positive_dim("K", self.k)?,
        };
        let ph = &self.physics;
        positive_field("physics.carrier_hz", ph.carrier_hz)?;
        positive_field("physics.reference_distance_m", ph.reference_distance_m)?;
        positive_field("physics.distance_m", ph.distance_m)?;
        if ph.distance_m < ph.reference_distance_m {
            return Err(Error::config(
                "physics.distance_m",
                "must not be below the reference distance",
            ));
        }
        finite_field("physics.path_loss_exponent", ph.path_loss_exponent)?;
        finite_field("physics.shadow_db", ph.shadow_db)?;
        finite_field("physics.tx_power_dbm", ph.tx_power_dbm)?;
        finite_field("physics.noise_dbm", ph.noise_dbm)?;
        positive_field("physics.thickness_wavelengths", ph.thickness_wavelengths)?;
        if let Some(rho) = ph.rho {
            positive_field("physics.rho", rho)?;
        }
        if let Some(r) = self.rate_bits {
            positive_field("rate_bits", r)?;
        }

        let op = &self.optimizer;
        positive_field("optimizer.step_tx", op.step_tx)?;
        positive_field("optimizer.step_rx", op.step_rx)?;
        let max_iter = positive_dim("optimizer.max_iter", op.max_iter)?;
        if !(op.step_growth >= 1.0 && op.step_growth.is_finite()) {
            return Err(Error::config(
                "optimizer.step_growth",
                format!("must be at least 1, got {}", op.step_growth),
            ));
        }
        let inner_steps = positive_dim("optimizer.inner_steps", op.inner_steps)?;
        let starts = positive_dim("optimizer.starts", op.starts)?;
        if !(op.tol >= 0.0 && op.tol.is_finite()) {
            return Err(Error::config(
                "optimizer.tol",
                format!("must be nonnegative, got {}", op.tol),
            ));
        }
        let trials = positive_dim("mc.trials", self.mc.trials)?;
        if trials < 2 {
            return Err(Error::config("mc.trials", "need at least 2 trials"));
        }

        let allowed = self.scenario.allowed_axes();
        let axis = match self.sweep.axis {
            Some(a) if !allowed.contains(&a) => {
                return Err(Error::config(
                    "sweep.axis",
                    format!(
                        "`{}` is not a valid axis for scenario {}",
                        a.name(),
                        self.scenario.name()
                    ),
                ))
            }
            Some(a) => Some(a),
            None => self.scenario.default_axis(),
        };
        let values = match (axis, &self.sweep.values) {
            (None, _) => Vec::new(),
            (Some(a), None) => a.default_values(),
            (Some(a), Some(v)) => {
                if v.is_empty() {
                    return Err(Error::config("sweep.values", "must not be empty"));
                }
                if v.iter().any(|x| !x.is_finite()) {
                    return Err(Error::config("sweep.values", "must be finite"));
                }
                if v.windows(2).any(|w| w[0] >= w[1]) {
                    return Err(Error::config("sweep.values", "must be strictly increasing"));
                }
                if a.integral() && v.iter().any(|x| x.fract() != 0.0 || *x < 1.0) {
                    return Err(Error::config(
                        "sweep.values",
                        format!("{} values must be positive integers", a.name()),
                    ));
                }
                if matches!(a, SweepAxis::Rho | SweepAxis::RateBits) && v.iter().any(|x| *x <= 0.0) {
                    return Err(Error::config(
                        "sweep.values",
                        format!("{} values must be positive", a.name()),
                    ));
                }
                if a == SweepAxis::GainFraction && v.iter().any(|x| *x <= 0.0 || *x >= 1.0) {
                    return Err(Error::config("sweep.values", "gain fractions must lie in (0, 1)"));
                }
                v.clone()
            }
        };
        if axis == Some(SweepAxis::PowerDbm) && ph.rho.is_some() {
            return Err(Error::config("physics.rho", "cannot be combined with a power sweep"));
        }
        if self.scenario == Scenario::CheckGrad && dims.product() > CHECK_GRAD_CAP {
            return Err(Error::config(
                "Nt",
                format!(
                    "check-grad needs Nt*Nr*M*N*L*K <= {CHECK_GRAD_CAP}, got {}; use e.g. Nt=Nr=4, M=N=16, L=K=2",
                    dims.product()
                ),
            ));
        }
        let mode = match op.mode {
            ModeKind::Joint => UpdateMode::Joint,
            ModeKind::Alternating => UpdateMode::Alternating { inner_steps },
        };
        let optimizer = OptimizerConfig {
            step_tx: op.step_tx,
            step_rx: op.step_rx,
            max_iter,
            tol: op.tol,
            objective: Objective::NegMeanMi,
            mode,
            backtracking: op.backtracking,
            step_growth: op.step_growth,
            solver: SolverOptions::default(),
        };
        Ok(Plan {
            config: self.clone(),
            dims,
            axis,
            values,
            trials,
            starts,
            optimizer,
        })
    }
}

/// Phase generator for random start `start`.
pub fn phase_rng(seed: u64, start: u64) -> ChaCha8Rng {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(PHASE_STREAM + start);
    rng
}

/// A link ready for evaluation, with the SNR it is evaluated at.
#[derive(Debug, Clone)]
pub struct PreparedLink {
    pub link: SimLink,
    pub rho: f64,
    /// Rate used by the outage objective (nats), if one was needed.
    pub rate: Option<f64>,
}

impl Plan {
    fn wavelength(&self) -> f64 {
        SPEED_OF_LIGHT / self.config.physics.carrier_hz
    }

    pub fn path_gain(&self) -> Result<f64> {
        let ph = &self.config.physics;
        Ok(loss_db_to_gain(path_loss_db(
            ph.distance_m,
            ph.reference_distance_m,
            ph.path_loss_exponent,
            self.wavelength(),
            ph.shadow_db,
        )?))
    }

    /// SNR at transmit power `power_dbm` for `n_t` antennas.
    pub fn rho_at_power(&self, power_dbm: f64, n_t: usize) -> Result<f64> {
        let ph = &self.config.physics;
        let base = dbm_to_watts(power_dbm) / (n_t as f64 * dbm_to_watts(ph.noise_dbm));
        Ok(match ph.normalization {
            Normalization::Physical => base,
            Normalization::UnitGain => base * self.path_gain()?,
        })
    }

    /// SNR of the operating point, honouring the `rho` override.
    pub fn base_rho(&self, n_t: usize) -> Result<f64> {
        match self.config.physics.rho {
            Some(r) => Ok(r),
            None => self.rho_at_power(self.config.physics.tx_power_dbm, n_t),
        }
    }

    pub fn layout(&self, dims: Dims) -> Result<LinkLayout> {
        let wavelength = self.wavelength();
        let beta = match self.config.physics.normalization {
            Normalization::Physical => self.path_gain()?,
            Normalization::UnitGain => 1.0,
        };
        Ok(LinkLayout {
            n_t: dims.n_t,
            n_r: dims.n_r,
            m: dims.m,
            n: dims.n,
            l: dims.l,
            k: dims.k,
            wavelength,
            thickness: self.config.physics.thickness_wavelengths * wavelength,
            beta,
        })
    }

    /// Random link for start `start`, normalized as configured.
    pub fn random_link(&self, dims: Dims, start: u64) -> Result<SimLink> {
        let link = self
            .layout(dims)?
            .build_random(&mut phase_rng(self.config.mc.seed, start))?;
        match self.config.physics.normalization {
            Normalization::Physical => Ok(link),
            Normalization::UnitGain => link.with_unit_channel_gain(),
        }
    }

    fn objective_for(&self, link: &SimLink, rho: f64) -> Result<(Objective, Option<f64>)> {
        match self.config.optimizer.objective {
            ObjectiveKind::NegMeanMi => Ok((Objective::NegMeanMi, None)),
            ObjectiveKind::Outage => {
                let rate = self.rate_nats(link, rho)?;
                Ok((Objective::Outage { rate }, Some(rate)))
            }
        }
    }

    /// Configured rate in nats, or the mean mutual information of `link`.
    pub fn rate_nats(&self, link: &SimLink, rho: f64) -> Result<f64> {
        match self.config.rate_bits {
            Some(r) => Ok(r * LN_2),
            None => Ok(solve_fixed_point(&link.effective()?, rho, &SolverOptions::default())?.mean_mi),
        }
    }

    /// Random phases, optimized when the optimizer is enabled.
    pub fn prepare(&self, dims: Dims, rho: f64) -> Result<PreparedLink> {
        let first = self.random_link(dims, 0)?;
        if !self.config.optimizer.enabled {
            return Ok(PreparedLink {
                link: first,
                rho,
                rate: None,
            });
        }
        let (objective, rate) = self.objective_for(&first, rho)?;
        let cfg = OptimizerConfig {
            objective,
            ..self.optimizer
        };
        let mut starts = vec![first];
        for s in 1..self.starts as u64 {
            starts.push(self.random_link(dims, s)?);
        }
        let (best, trace) = optimize_best_of(&starts, &cfg, rho)?;
        let mut link = starts.swap_remove(best);
        trace.apply(&mut link)?;
        Ok(PreparedLink { link, rho, rate })
    }
}

/// One named pass/fail check of a verification scenario.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Check {
    pub name: String,
    pub value: f64,
    pub threshold: f64,
    pub pass: bool,
}

impl Check {
    fn at_most(name: impl Into<String>, value: f64, threshold: f64) -> Self {
        Self {
            name: name.into(),
            value,
            threshold,
            pass: value <= threshold,
        }
    }
}

/// Results of one run: a table and the verification checks.
#[derive(Debug, Clone, PartialEq)]
pub struct Report {
    pub scenario: Scenario,
    pub header: Vec<String>,
    pub rows: Vec<Vec<String>>,
    pub checks: Vec<Check>,
    pub rho: f64,
    pub beta: f64,
    pub config: ExperimentConfig,
}

impl Report {
    pub fn passed(&self) -> bool {
        self.checks.iter().all(|c| c.pass)
    }

    pub fn csv(&self) -> String {
        let mut out = self.header.join(",");
        out.push('\n');
        for row in &self.rows {
            out.push_str(&row.join(","));
            out.push('\n');
        }
        out
    }

    pub fn csv_name(&self) -> String {
        format!("{}.csv", self.scenario.name())
    }

    /// Run manifest; contains nothing that varies between identical runs.
    pub fn manifest(&self) -> Result<String> {
        let manifest = Manifest {
            tool: "simmimo",
            version: concat!("simmimo ", env!("CARGO_PKG_VERSION")),
            scenario: self.scenario.name(),
            seed: self.config.mc.seed,
            rho: self.rho,
            beta: self.beta,
            outputs: vec![self.csv_name()],
            status: if self.checks.is_empty() {
                "ok"
            } else if self.passed() {
                "pass"
            } else {
                "fail"
            },
            checks: &self.checks,
            config: &self.config,
        };
        let mut text = serde_json::to_string_pretty(&manifest)?;
        text.push('\n');
        Ok(text)
    }

    /// Write the CSV, `manifest.json` and `timing.json` into `dir`.
    pub fn write(&self, dir: &Path, wall_time_s: f64, threads: usize) -> Result<Vec<PathBuf>> {
        let io = |path: &Path| {
            let path = path.to_path_buf();
            move |source| Error::Io { path, source }
        };
        fs::create_dir_all(dir).map_err(io(dir))?;
        let csv = dir.join(self.csv_name());
        fs::write(&csv, self.csv()).map_err(io(&csv))?;
        let manifest = dir.join("manifest.json");
        fs::write(&manifest, self.manifest()?).map_err(io(&manifest))?;
        let timing = dir.join("timing.json");
        let t = serde_json::json!({ "wall_time_s": wall_time_s, "threads": threads });
        fs::write(&timing, format!("{}\n", serde_json::to_string_pretty(&t)?)).map_err(io(&timing))?;
        Ok(vec![csv, manifest, timing])
    }
}

#[derive(Serialize)]
struct Manifest<'a> {
    tool: &'static str,
    version: &'static str,
    scenario: &'static str,
    seed: u64,
    rho: f64,
    beta: f64,
    outputs: Vec<String>,
    status: &'static str,
    checks: &'a [Check],
    config: &'a ExperimentConfig,
}

/// CSV number format: plain decimal, scientific when `|x| >= 1e6` or
/// `0 < |x| < 1e-6`.
pub fn format_number(x: f64) -> String {
    if !x.is_finite() {
        return if x.is_nan() {
            "nan".into()
        } else if x > 0.0 {
            "inf".into()
        } else {
            "-inf".into()
        };
    }
    let a = x.abs();
    if a != 0.0 && !(1e-6..1e6).contains(&a) {
        format!("{x:e}")
    } else if x == 0.0 {
        "0".into()
    } else {
        format!("{x}")
    }
}

fn row(values: &[f64]) -> Vec<String> {
    values.iter().map(|&v| format_number(v)).collect()
}

fn header(cols: &[&str]) -> Vec<String> {
    cols.iter().map(|c| c.to_string()).collect()
}

fn outage_stderr(p: f64, n: usize) -> f64 {
    (p * (1.0 - p) / n as f64).sqrt()
}

/// Execute the configured scenario.
pub fn run(config: &ExperimentConfig) -> Result<Report> {
    let plan = config.validate()?;
    let mut report = Report {
        scenario: config.scenario,
        header: Vec::new(),
        rows: Vec::new(),
        checks: Vec::new(),
        rho: plan.base_rho(plan.dims.n_t)?,
        beta: plan.path_gain()?,
        config: config.clone(),
    };
    match config.scenario {
        Scenario::EmiVsLayers | Scenario::EmiVsAtoms => run_emi(&plan, &mut report)?,
        Scenario::Optimize => run_optimize(&plan, &mut report)?,
        Scenario::OutageVsPower => run_outage_vs_power(&plan, &mut report)?,
        Scenario::OutageVsRate => run_outage_vs_rate(&plan, &mut report)?,
        Scenario::Dmt => run_dmt(&plan, &mut report)?,
        Scenario::McVerify => run_mc_verify(&plan, &mut report)?,
        Scenario::CheckGrad => run_check_grad(&plan, &mut report)?,
    }
    Ok(report)
}

fn axis_of(plan: &Plan) -> Result<SweepAxis> {
    plan.axis
        .ok_or_else(|| Error::config("sweep.axis", "this scenario needs a sweep axis"))
}

fn run_emi(plan: &Plan, report: &mut Report) -> Result<()> {
    let axis = axis_of(plan)?;
    let mc = plan.config.mc.enabled;
    let rows = plan
        .values
        .par_iter()
        .map(|&v| -> Result<Vec<String>> {
            let dims = plan.dims.with_axis(axis, v as usize);
            let rho = plan.base_rho(dims.n_t)?;
            let prepared = plan.prepare(dims, rho)?;
            let eq = solve_fixed_point(&prepared.link.effective()?, rho, &SolverOptions::default())?;
            let mut out = vec![v, eq.mean_mi * LOG2_E];
            if mc {
                let samples = sample_column(&prepared.link, &[rho], plan.trials, plan.config.mc.seed)?;
                let est =
                    McEstimate::from_samples(samples.into_iter().next().unwrap_or_default(), &[], plan.config.mc.seed)?;
                out.extend([est.mean * LOG2_E, est.std_error_mean * LOG2_E]);
            }
            Ok(row(&out))
        })
        .collect::<Result<Vec<_>>>()?;
    let mut cols = vec![axis.name(), "emi_bits"];
    if mc {
        cols.extend(["emi_mc_bits", "emi_mc_stderr_bits"]);
    }
    report.header = header(&cols);
    report.rows = rows;
    Ok(())
}

/// Samples regrouped per SNR.
fn sample_column(link: &SimLink, rhos: &[f64], trials: usize, seed: u64) -> Result<Vec<Vec<f64>>> {
    let by_trial = sample_mi_multi(link, rhos, trials, seed)?;
    Ok((0..rhos.len())
        .map(|j| by_trial.iter().map(|r| r[j]).collect())
        .collect())
}

fn run_optimize(plan: &Plan, report: &mut Report) -> Result<()> {
    let rho = plan.base_rho(plan.dims.n_t)?;
    let link = plan.random_link(plan.dims, 0)?;
    let (objective, _) = match plan.config.optimizer.objective {
        ObjectiveKind::NegMeanMi => (Objective::NegMeanMi, None),
        ObjectiveKind::Outage => {
            let rate = plan.rate_nats(&link, rho)?;
            (Objective::Outage { rate }, Some(rate))
        }
    };
    let inner_steps = match plan.optimizer.mode {
        UpdateMode::Alternating { inner_steps } => inner_steps,
        UpdateMode::Joint => plan.config.optimizer.inner_steps as usize,
    };
    let joint_cfg = OptimizerConfig {
        objective,
        mode: UpdateMode::Joint,
        ..plan.optimizer
    };
    let alt_cfg = OptimizerConfig {
        mode: UpdateMode::Alternating { inner_steps },
        ..joint_cfg
    };
    let (joint, alternating) = rayon::join(|| optimize(&link, &joint_cfg, rho), || optimize(&link, &alt_cfg, rho));
    let (joint, alternating) = (joint?, alternating?);
    let (a, b) = (joint.objective_curve(), alternating.objective_curve());
    let len = a.len().max(b.len());
    let at = |c: &[f64], i: usize| c[i.min(c.len() - 1)];
    report.header = header(&["iteration", "objective_joint", "objective_alternating"]);
    report.rows = (0..len).map(|i| row(&[i as f64, at(&a, i), at(&b, i)])).collect();
    let initial = evaluate_objective(&link, objective, rho, &plan.optimizer.solver)?;
    report.checks.push(Check::at_most(
        "joint final objective not above initial",
        joint.final_objective(),
        initial,
    ));
    report.checks.push(Check::at_most(
        "alternating final objective not above initial",
        alternating.final_objective(),
        initial,
    ));
    Ok(())
}

fn run_outage_vs_power(plan: &Plan, report: &mut Report) -> Result<()> {
    let axis = axis_of(plan)?;
    let rho0 = plan.base_rho(plan.dims.n_t)?;
    let prepared = plan.prepare(plan.dims, rho0)?;
    let rate = match prepared.rate {
        Some(r) => r,
        None => plan.rate_nats(&prepared.link, rho0)?,
    };
    let rhos = plan
        .values
        .iter()
        .map(|&v| match axis {
            SweepAxis::Rho => Ok(v),
            _ => plan.rho_at_power(v, plan.dims.n_t),
        })
        .collect::<Result<Vec<f64>>>()?;
    let eff = prepared.link.effective()?;
    let opts = SolverOptions::default();
    let theory = rhos
        .par_iter()
        .map(|&r| moments(&eff, r, &opts)?.outage(rate))
        .collect::<Result<Vec<f64>>>()?;
    let mc = plan.config.mc.enabled;
    let columns = if mc {
        Some(sample_column(&prepared.link, &rhos, plan.trials, plan.config.mc.seed)?)
    } else {
        None
    };
    report.header = header(&if mc {
        vec![axis.name(), "outage", "outage_mc", "outage_mc_stderr"]
    } else {
        vec![axis.name(), "outage"]
    });
    report.rows = plan
        .values
        .iter()
        .enumerate()
        .map(|(i, &v)| {
            let mut out = vec![v, theory[i]];
            if let Some(cols) = &columns {
                let p = crate::montecarlo::empirical_outage(&cols[i], rate);
                out.extend([p, outage_stderr(p, plan.trials)]);
            }
            row(&out)
        })
        .collect();
    Ok(())
}

fn run_outage_vs_rate(plan: &Plan, report: &mut Report) -> Result<()> {
    let axis = axis_of(plan)?;
    let rho = plan.base_rho(plan.dims.n_t)?;
    let prepared = plan.prepare(plan.dims, rho)?;
    let m = moments(&prepared.link.effective()?, rho, &SolverOptions::default())?;
    let mc = plan.config.mc.enabled;
    let samples = if mc {
        sample_column(&prepared.link, &[rho], plan.trials, plan.config.mc.seed)?.pop()
    } else {
        None
    };
    report.header = header(&if mc {
        vec![axis.name(), "outage", "outage_mc", "outage_mc_stderr"]
    } else {
        vec![axis.name(), "outage"]
    });
    report.rows = plan
        .values
        .iter()
        .map(|&v| -> Result<Vec<String>> {
            let rate = v * LN_2;
            let mut out = vec![v, m.outage(rate)?];
            if let Some(s) = &samples {
                let p = crate::montecarlo::empirical_outage(s, rate);
                out.extend([p, outage_stderr(p, plan.trials)]);
            }
            Ok(row(&out))
        })
        .collect::<Result<Vec<_>>>()?;
    Ok(())
}

fn run_dmt(plan: &Plan, report: &mut Report) -> Result<()> {
    let rho = plan.base_rho(plan.dims.n_t)?;
    let prepared = plan.prepare(plan.dims, rho)?;
    let eff = prepared.link.effective()?;
    let q = plan.dims.m.min(plan.dims.n);
    let opts = SolverOptions::default().with_tol(1e-13);
    let points = plan
        .values
        .par_iter()
        .map(|&f| dmt_point(&eff, q, f * q as f64, rho, &opts))
        .collect::<Result<Vec<_>>>()?;
    report.header = header(&["gain_fraction", "w", "d_closed", "d_numeric"]);
    report.rows = plan
        .values
        .iter()
        .zip(&points)
        .map(|(&f, p)| row(&[f, p.w, p.d_closed, p.d_numeric]))
        .collect();
    let worst = points
        .iter()
        .map(|p| (p.d_closed - p.d_numeric).abs() / p.d_numeric.abs().max(f64::MIN_POSITIVE))
        .fold(0.0, f64::max);
    report
        .checks
        .push(Check::at_most("dmt closed form vs numeric (relative)", worst, DMT_TOL));
    Ok(())
}

/// Outage rates at `C̄ + z √V` for `z` from -2 to 2 in steps of 0.25.
pub fn verification_rates(m: &Moments) -> Vec<f64> {
    (-8..=8)
        .map(|i| m.eq.mean_mi + f64::from(i) * 0.25 * m.fl.variance.sqrt())
        .collect()
}

fn run_mc_verify(plan: &Plan, report: &mut Report) -> Result<()> {
    let axis = axis_of(plan)?;
    let rhos = plan
        .values
        .iter()
        .map(|&v| match axis {
            SweepAxis::Rho => Ok(v),
            _ => plan.rho_at_power(v, plan.dims.n_t),
        })
        .collect::<Result<Vec<f64>>>()?;
    let prepared = plan.prepare(plan.dims, plan.base_rho(plan.dims.n_t)?)?;
    let eff = prepared.link.effective()?;
    let opts = SolverOptions::default();
    let columns = sample_column(&prepared.link, &rhos, plan.trials, plan.config.mc.seed)?;
    let tol = McTolerances::default();
    report.header = header(&[
        axis.name(),
        "mean_bits",
        "mean_mc_bits",
        "mean_mc_stderr_bits",
        "variance_bits2",
        "variance_mc_bits2",
        "mean_z",
        "variance_rel_err",
        "ks_distance",
        "max_outage_dev",
    ]);
    let l2 = LOG2_E * LOG2_E;
    for ((&v, &rho), samples) in plan.values.iter().zip(&rhos).zip(columns) {
        let m = moments(&eff, rho, &opts)?;
        let rates = verification_rates(&m);
        let curve = rates.iter().map(|&r| m.outage(r)).collect::<Result<Vec<f64>>>()?;
        let est = McEstimate::from_samples(samples, &rates, plan.config.mc.seed)?;
        let cmp = compare_with_theory(&est, m.eq.mean_mi, m.fl.variance, &curve, &tol)?;
        report.rows.push(row(&[
            v,
            m.eq.mean_mi * LOG2_E,
            est.mean * LOG2_E,
            est.std_error_mean * LOG2_E,
            m.fl.variance * l2,
            est.variance * l2,
            cmp.mean_z,
            cmp.variance_rel_err,
            cmp.ks_distance,
            cmp.max_outage_dev,
        ]));
        let at = format!("{}={}", axis.name(), format_number(v));
        report.checks.extend([
            Check::at_most(format!("{at} mean |z|"), cmp.mean_z.abs(), tol.mean_z),
            Check::at_most(format!("{at} mean relative gap"), cmp.mean_rel_gap, tol.mean_rel_gap),
            Check::at_most(
                format!("{at} variance relative error"),
                cmp.variance_rel_err,
                tol.variance_rel,
            ),
            Check::at_most(format!("{at} KS distance"), cmp.ks_distance, tol.ks),
            Check::at_most(format!("{at} outage deviation"), cmp.max_outage_dev, tol.outage_abs),
        ]);
    }
    Ok(())
}

/// Worst relative gradient errors for the mean, variance and outage.
pub fn gradient_errors(link: &SimLink, rho: f64, rate: f64) -> Result<[f64; 3]> {
    let opts = SolverOptions::default().with_tol(1e-13);
    let eff = link.effective()?;
    let m = moments(&eff, rho, &opts)?;
    let ws = GradientWorkspace::new(link);
    let analytic = [
        grad_mean_mi(&ws, &m.eq)?,
        grad_variance(&ws, &eff, &m.fl)?,
        grad_outage(&ws, &eff, &m, rate)?,
    ];
    let objective = |which: usize| {
        move |l: &SimLink| -> Result<f64> {
            let m = moments(&l.effective()?, rho, &opts)?;
            match which {
                0 => Ok(m.eq.mean_mi),
                1 => Ok(m.fl.variance),
                _ => m.outage(rate),
            }
        }
    };
    let mut out = [0.0; 3];
    for (i, a) in analytic.iter().enumerate() {
        let fd = finite_difference_gradient(objective(i), link, 1e-6)?;
        out[i] = worst_relative_error(link, a, &fd, 1e-8, CHECK_GRAD_TOL);
    }
    Ok(out)
}

fn run_check_grad(plan: &Plan, report: &mut Report) -> Result<()> {
    let rho = plan.base_rho(plan.dims.n_t)?;
    let link = plan.random_link(plan.dims, 0)?;
    let rate = plan.rate_nats(&link, rho)?;
    let errs = gradient_errors(&link, rho, rate)?;
    report.header = header(&["family", "worst_relative_error"]);
    for (name, e) in ["mean_mi", "variance", "outage"].iter().zip(errs) {
        report.rows.push(vec![name.to_string(), format_number(e)]);
        report
            .checks
            .push(Check::at_most(format!("{name} gradient"), e, CHECK_GRAD_TOL));
    }
    Ok(())
}

/// Human-readable summary of a report.
pub fn summary(report: &Report) -> String {
    let mut s = String::new();
    let _ = writeln!(
        s,
        "scenario {} (rho = {})",
        report.scenario.name(),
        format_number(report.rho)
    );
    for c in &report.checks {
        let _ = writeln!(
            s,
            "{} {}: {} (limit {})",
            if c.pass { "PASS" } else { "FAIL" },
            c.name,
            format_number(c.value),
            format_number(c.threshold)
        );
    }
    s
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn empty_config_is_full_scale() {
        let cfg = parse_config("{}").unwrap();
        assert_eq!(cfg, ExperimentConfig::default());
        let plan = cfg.validate().unwrap();
        assert_eq!(
            plan.dims,
            Dims {
                n_t: 32,
                n_r: 32,
                m: 200,
                n: 200,
                l: 4,
                k: 4
            }
        );
        assert_eq!(plan.values, vec![1.0, 2.0, 3.0, 4.0, 5.0, 6.0, 7.0]);
    }

    #[test]
    fn negative_dimension_names_field() {
        let err = parse_config(r#"{"M": -3}"#).unwrap().validate().unwrap_err();
        assert!(err.to_string().contains("`M`"), "{err}");
    }

    #[test]
    fn unknown_field_rejected() {
        assert!(parse_config(r#"{"Mx": 3}"#).is_err());
    }

    #[test]
    fn unsorted_sweep_rejected() {
        let cfg = parse_config(r#"{"sweep": {"values": [3, 2]}}"#).unwrap();
        assert!(cfg.validate().unwrap_err().to_string().contains("sweep.values"));
    }

    #[test]
    fn axis_must_match_scenario() {
        let cfg = parse_config(r#"{"scenario": "emi-vs-atoms", "sweep": {"axis": "L"}}"#).unwrap();
        assert!(cfg.validate().unwrap_err().to_string().contains("sweep.axis"));
    }

    #[test]
    fn check_grad_cap() {
        let cfg = parse_config(r#"{"scenario": "check-grad"}"#).unwrap();
        let err = cfg.validate().unwrap_err().to_string();
        assert!(err.contains("check-grad needs"), "{err}");
    }

    #[test]
    fn physical_snr() {
        let plan = ExperimentConfig::default().validate().unwrap();
        let rho = plan.base_rho(32).unwrap();
        assert!((rho - 0.1 / (32.0 * 1e-14)).abs() <= 1e-6 * rho);
    }

    #[test]
    fn number_format() {
        assert_eq!(format_number(0.0), "0");
        assert_eq!(format_number(1.5), "1.5");
        assert_eq!(format_number(-250.0), "-250");
        assert_eq!(format_number(1e6), "1e6");
        assert_eq!(format_number(2.5e-7), "2.5e-7");
        assert_eq!(format_number(999_999.0), "999999");
        assert_eq!(format_number(1e-6), "0.000001");
        assert_eq!(format_number(f64::NAN), "nan");
    }
}
