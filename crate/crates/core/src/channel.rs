//! SIM geometry, wave-propagation transfer matrices, spatial correlation,
//! path loss and channel sampling.
//!
//! Coordinates are local to each SIM: metasurface layers lie in planes of
//! constant `z`, stacked along `+z` at `layer_spacing`; atoms sit on a
//! centered rectangular grid with pitch `atom_spacing`. Antennas form a
//! centered uniform line along `x` with the same pitch, one layer gap behind
//! the antenna-facing layer.

use std::f64::consts::PI;

use num_complex::Complex64;
use rand::Rng;
use rand_distr::{Distribution, StandardNormal};
use serde::{Deserialize, Serialize};

use crate::det_equiv::{effective_correlations, EffectiveCorrelations};
use crate::error::{Error, Result};
use crate::linalg::{self, c, scale_cols, scale_rows, CMat, CVec};

pub const SPEED_OF_LIGHT: f64 = 299_792_458.0;

pub type Point = [f64; 3];

/// Physical layout of one SIM.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SimGeometry {
    pub layers: usize,
    pub atoms_per_layer: usize,
    /// m²
    pub atom_area: f64,
    /// m
    pub atom_spacing: f64,
    /// m
    pub layer_spacing: f64,
    /// m
    pub wavelength: f64,
    pub grid_rows: usize,
    pub grid_cols: usize,
}

impl SimGeometry {
    /// Half-wavelength atom pitch, `(λ/2)²` atom area, and `thickness / layers`
    /// between layers. The grid is the most nearly square factorization of
    /// `atoms_per_layer` (`rows <= cols`).
    pub fn new(layers: usize, atoms_per_layer: usize, wavelength: f64, thickness: f64) -> Result<Self> {
        if atoms_per_layer == 0 {
            return Err(Error::invalid("atoms_per_layer must be at least 1"));
        }
        let (rows, cols) = near_square_grid(atoms_per_layer);
        let half = wavelength / 2.0;
        let g = Self {
            layers,
            atoms_per_layer,
            atom_area: half * half,
            atom_spacing: half,
            layer_spacing: if layers > 0 { thickness / layers as f64 } else { 0.0 },
            wavelength,
            grid_rows: rows,
            grid_cols: cols,
        };
        g.validate()?;
        Ok(g)
    }

    /// Replace the automatic grid with an explicit `rows x cols` layout.
    pub fn with_grid(mut self, rows: usize, cols: usize) -> Result<Self> {
        self.grid_rows = rows;
        self.grid_cols = cols;
        self.validate()?;
        Ok(self)
    }

    pub fn validate(&self) -> Result<()> {
        if self.layers == 0 {
            return Err(Error::invalid("a SIM needs at least one layer"));
        }
        if self.grid_rows * self.grid_cols != self.atoms_per_layer || self.atoms_per_layer == 0 {
            return Err(Error::invalid(format!(
                "grid {}x{} does not hold {} atoms",
                self.grid_rows, self.grid_cols, self.atoms_per_layer
            )));
        }
        let positive = [
            ("atom_area", self.atom_area),
            ("atom_spacing", self.atom_spacing),
            ("layer_spacing", self.layer_spacing),
            ("wavelength", self.wavelength),
        ];
        for (name, v) in positive {
            if !(v.is_finite() && v > 0.0) {
                return Err(Error::invalid(format!("{name} must be positive and finite, got {v}")));
            }
        }
        Ok(())
    }

    /// Atom centers of one layer at height `z`, row-major.
    pub fn atom_positions(&self, z: f64) -> Vec<Point> {
        let x0 = (self.grid_cols as f64 - 1.0) / 2.0;
        let y0 = (self.grid_rows as f64 - 1.0) / 2.0;
        let mut pts = Vec::with_capacity(self.atoms_per_layer);
        for r in 0..self.grid_rows {
            for col in 0..self.grid_cols {
                pts.push([
                    (col as f64 - x0) * self.atom_spacing,
                    (r as f64 - y0) * self.atom_spacing,
                    z,
                ]);
            }
        }
        pts
    }

    /// Antenna feed positions at height `z`.
    pub fn antenna_positions(&self, count: usize, z: f64) -> Vec<Point> {
        let x0 = (count as f64 - 1.0) / 2.0;
        (0..count)
            .map(|i| [(i as f64 - x0) * self.atom_spacing, 0.0, z])
            .collect()
    }

    fn positions_for(&self, count: usize, z: f64) -> Vec<Point> {
        if count == self.atoms_per_layer {
            self.atom_positions(z)
        } else {
            self.antenna_positions(count, z)
        }
    }
}

fn near_square_grid(n: usize) -> (usize, usize) {
    let mut rows = (n as f64).sqrt().floor() as usize;
    while rows > 1 && !n.is_multiple_of(rows) {
        rows -= 1;
    }
    let rows = rows.max(1);
    (rows, n / rows)
}

fn distance(a: &Point, b: &Point) -> f64 {
    ((a[0] - b[0]).powi(2) + (a[1] - b[1]).powi(2) + (a[2] - b[2]).powi(2)).sqrt()
}

/// `sin(πx) / (πx)` with `sinc(0) = 1`.
pub fn sinc(x: f64) -> f64 {
    if x.abs() < 1e-12 {
        1.0
    } else {
        (PI * x).sin() / (PI * x)
    }
}

/// Isotropic-scattering spatial correlation, `[R]_{ij} = sinc(2 |p_i - p_j| / λ)`.
pub fn build_correlation_matrix(positions: &[Point], wavelength: f64) -> Result<CMat> {
    if positions.is_empty() {
        return Err(Error::invalid("correlation needs at least one position"));
    }
    if !(wavelength.is_finite() && wavelength > 0.0) {
        return Err(Error::invalid(format!("wavelength must be positive, got {wavelength}")));
    }
    if positions.iter().flatten().any(|v| !v.is_finite()) {
        return Err(Error::invalid("non-finite position"));
    }
    let n = positions.len();
    Ok(CMat::from_fn(n, n, |i, j| {
        if i == j {
            c(1.0)
        } else {
            c(sinc(2.0 * distance(&positions[i], &positions[j]) / wavelength))
        }
    }))
}

/// Rayleigh-Sommerfeld coefficient between a radiating atom of area `area`
/// and a receiving point at distance `r`, seen at angle `χ` from the normal:
/// `(A cos χ / r) (1/(2πr) - j/λ) exp(j 2π r / λ)`.
pub fn diffraction_coefficient(area: f64, r: f64, cos_chi: f64, wavelength: f64) -> Complex64 {
    let amp = area * cos_chi / r;
    let near = Complex64::new(1.0 / (2.0 * PI * r), -1.0 / wavelength);
    amp * near * Complex64::from_polar(1.0, 2.0 * PI * r / wavelength)
}

/// Transfer matrix from `from` points to `to` points (`to.len() x from.len()`).
pub fn transfer_matrix(from: &[Point], to: &[Point], area: f64, wavelength: f64) -> Result<CMat> {
    let mut out = CMat::zeros(to.len(), from.len());
    for (i, p) in to.iter().enumerate() {
        for (j, q) in from.iter().enumerate() {
            let r = distance(p, q);
            if r <= 0.0 || !r.is_finite() {
                return Err(Error::DegenerateGeometry(format!(
                    "points {j} and {i} coincide across the layer gap"
                )));
            }
            let cos_chi = (p[2] - q[2]).abs() / r;
            out[(i, j)] = diffraction_coefficient(area, r, cos_chi, wavelength);
        }
    }
    Ok(out)
}

/// Transfer across one layer gap of `geometry`. A count equal to
/// `atoms_per_layer` denotes a metasurface layer, anything else an antenna
/// array. Result is `to_count x from_count`.
pub fn build_layer_transfer(geometry: &SimGeometry, from_count: usize, to_count: usize) -> Result<CMat> {
    geometry.validate()?;
    if from_count == 0 || to_count == 0 {
        return Err(Error::invalid("transfer endpoints must be non-empty"));
    }
    if from_count != geometry.atoms_per_layer && to_count != geometry.atoms_per_layer {
        return Err(Error::invalid(format!(
            "one side of a transfer must be a layer of {} atoms",
            geometry.atoms_per_layer
        )));
    }
    let from = geometry.positions_for(from_count, 0.0);
    let to = geometry.positions_for(to_count, geometry.layer_spacing);
    transfer_matrix(&from, &to, geometry.atom_area, geometry.wavelength)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Side {
    Transmit,
    Receive,
}

/// One SIM: geometry, per-layer phases and the fixed transfer matrices.
///
/// Transmit: `transfers[0] = W^1` (`M x N_t`), `transfers[l] = W^{l+1}`, and
/// the response is `P = Φ^L W^L ... Φ^1 W^1`.
/// Receive: `transfers[0] = U^1` (`N_r x N`), `transfers[k] = U^{k+1}`, and
/// the response is `D = U^1 Ψ^1 ... U^K Ψ^K`.
#[derive(Debug, Clone)]
pub struct SimStack {
    geometry: SimGeometry,
    side: Side,
    antennas: usize,
    phases: Vec<Vec<f64>>,
    transfers: Vec<CMat>,
}

fn wrap_phase(theta: f64) -> f64 {
    let t = theta.rem_euclid(2.0 * PI);
    if t >= 2.0 * PI {
        0.0
    } else {
        t
    }
}

impl SimStack {
    /// Builds the diffraction transfers from `geometry`.
    pub fn new(geometry: SimGeometry, side: Side, antennas: usize, phases: Vec<Vec<f64>>) -> Result<Self> {
        geometry.validate()?;
        if antennas == 0 {
            return Err(Error::invalid("a SIM needs at least one antenna"));
        }
        let m = geometry.atoms_per_layer;
        let mut transfers = Vec::with_capacity(geometry.layers);
        transfers.push(match side {
            Side::Transmit => build_layer_transfer(&geometry, antennas, m)?,
            Side::Receive => build_layer_transfer(&geometry, m, antennas)?,
        });
        if geometry.layers > 1 {
            let inter = build_layer_transfer(&geometry, m, m)?;
            transfers.extend(std::iter::repeat_n(inter, geometry.layers - 1));
        }
        Self::from_parts(geometry, side, phases, transfers)
    }

    pub fn with_zero_phases(geometry: SimGeometry, side: Side, antennas: usize) -> Result<Self> {
        let phases = vec![vec![0.0; geometry.atoms_per_layer]; geometry.layers];
        Self::new(geometry, side, antennas, phases)
    }

    /// Phases drawn uniformly on `[0, 2π)`.
    pub fn with_random_phases<R: Rng + ?Sized>(
        geometry: SimGeometry,
        side: Side,
        antennas: usize,
        rng: &mut R,
    ) -> Result<Self> {
        let phases = random_phases(geometry.layers, geometry.atoms_per_layer, rng);
        Self::new(geometry, side, antennas, phases)
    }

    /// Assemble a stack from explicit transfer matrices.
    pub fn from_parts(geometry: SimGeometry, side: Side, phases: Vec<Vec<f64>>, transfers: Vec<CMat>) -> Result<Self> {
        let layers = geometry.layers;
        let m = geometry.atoms_per_layer;
        if phases.len() != layers || transfers.len() != layers {
            return Err(Error::invalid(format!(
                "{layers} layers need {layers} phase vectors and transfers, got {} and {}",
                phases.len(),
                transfers.len()
            )));
        }
        for (l, p) in phases.iter().enumerate() {
            if p.len() != m {
                return Err(Error::invalid(format!(
                    "layer {l} has {} phases, expected {m}",
                    p.len()
                )));
            }
            if p.iter().any(|t| !t.is_finite()) {
                return Err(Error::invalid(format!("layer {l} has a non-finite phase")));
            }
        }
        let first = &transfers[0];
        let antennas = match side {
            Side::Transmit => {
                if first.nrows() != m {
                    return Err(Error::invalid(format!("W^1 must have {m} rows, has {}", first.nrows())));
                }
                first.ncols()
            }
            Side::Receive => {
                if first.ncols() != m {
                    return Err(Error::invalid(format!(
                        "U^1 must have {m} columns, has {}",
                        first.ncols()
                    )));
                }
                first.nrows()
            }
        };
        for (l, t) in transfers.iter().enumerate().skip(1) {
            if t.shape() != (m, m) {
                return Err(Error::invalid(format!(
                    "inter-layer transfer {} must be {m}x{m}, is {}x{}",
                    l + 1,
                    t.nrows(),
                    t.ncols()
                )));
            }
        }
        let phases = phases
            .into_iter()
            .map(|p| p.into_iter().map(wrap_phase).collect())
            .collect();
        Ok(Self {
            geometry,
            side,
            antennas,
            phases,
            transfers,
        })
    }

    pub fn geometry(&self) -> &SimGeometry {
        &self.geometry
    }

    pub fn side(&self) -> Side {
        self.side
    }

    pub fn antennas(&self) -> usize {
        self.antennas
    }

    pub fn atoms(&self) -> usize {
        self.geometry.atoms_per_layer
    }

    pub fn layers(&self) -> usize {
        self.geometry.layers
    }

    pub fn phases(&self) -> &[Vec<f64>] {
        &self.phases
    }

    pub fn transfers(&self) -> &[CMat] {
        &self.transfers
    }

    pub fn set_phases(&mut self, layer: usize, phases: &[f64]) -> Result<()> {
        if layer >= self.layers() || phases.len() != self.atoms() {
            return Err(Error::invalid("phase vector does not match the stack"));
        }
        if phases.iter().any(|t| !t.is_finite()) {
            return Err(Error::invalid("non-finite phase"));
        }
        self.phases[layer] = phases.iter().copied().map(wrap_phase).collect();
        Ok(())
    }

    /// `e^{jθ}` for one layer.
    pub fn phase_factors(&self, layer: usize) -> CVec {
        CVec::from_iterator(
            self.atoms(),
            self.phases[layer].iter().map(|&t| Complex64::from_polar(1.0, t)),
        )
    }

    /// Set a layer from unit-modulus factors (only the angle is kept).
    pub fn set_phase_factors(&mut self, layer: usize, factors: &CVec) -> Result<()> {
        let angles: Vec<f64> = factors.iter().map(|z| z.arg()).collect();
        self.set_phases(layer, &angles)
    }

    /// `P` for a transmit stack, `D` for a receive stack.
    pub fn compose(&self) -> CMat {
        match self.side {
            Side::Transmit => {
                let mut acc = scale_rows(&self.phase_factors(0), &self.transfers[0]);
                for l in 1..self.layers() {
                    acc = scale_rows(&self.phase_factors(l), &(&self.transfers[l] * acc));
                }
                acc
            }
            Side::Receive => {
                let mut acc = scale_cols(&self.transfers[0], &self.phase_factors(0));
                for k in 1..self.layers() {
                    acc = scale_cols(&(acc * &self.transfers[k]), &self.phase_factors(k));
                }
                acc
            }
        }
    }
}

/// Checked composition of a stack's response matrix.
pub fn compose_sim(stack: &SimStack) -> Result<CMat> {
    let rebuilt = SimStack::from_parts(
        stack.geometry,
        stack.side,
        stack.phases.clone(),
        stack.transfers.clone(),
    )?;
    Ok(rebuilt.compose())
}

pub fn random_phases<R: Rng + ?Sized>(layers: usize, atoms: usize, rng: &mut R) -> Vec<Vec<f64>> {
    (0..layers)
        .map(|_| (0..atoms).map(|_| rng.random::<f64>() * 2.0 * PI).collect())
        .collect()
}

/// Log-distance path loss in dB:
/// `20 log10(4π d0 / λ) + 10 b log10(d / d0) + shadow_db`.
pub fn path_loss_db(d: f64, d0: f64, exponent: f64, wavelength: f64, shadow_db: f64) -> Result<f64> {
    if !(d0 > 0.0 && d0.is_finite()) {
        return Err(Error::invalid(format!("reference distance must be positive, got {d0}")));
    }
    if !(d >= d0 && d.is_finite()) {
        return Err(Error::invalid(format!(
            "distance {d} is below the reference distance {d0}"
        )));
    }
    if !(wavelength > 0.0 && wavelength.is_finite()) {
        return Err(Error::invalid(format!("wavelength must be positive, got {wavelength}")));
    }
    Ok(20.0 * (4.0 * PI * d0 / wavelength).log10() + 10.0 * exponent * (d / d0).log10() + shadow_db)
}

/// Linear power gain of a loss given in dB.
pub fn loss_db_to_gain(loss_db: f64) -> f64 {
    10f64.powf(-loss_db / 10.0)
}

pub fn dbm_to_watts(dbm: f64) -> f64 {
    10f64.powf((dbm - 30.0) / 10.0)
}

/// Second-order statistics of the SIM-to-SIM channel
/// `G = R_R^{1/2} G̃ R_T^{1/2}` with `G̃` i.i.d. `CN(0, β/M)`.
#[derive(Debug, Clone)]
pub struct ChannelStatistics {
    r_t: CMat,
    r_r: CMat,
    beta: f64,
    r_t_sqrt: CMat,
    r_r_sqrt: CMat,
}

fn check_correlation(name: &str, r: &CMat) -> Result<CMat> {
    if !r.is_square() || r.nrows() == 0 {
        return Err(Error::invalid(format!("{name} must be square and non-empty")));
    }
    let scale = r.iter().map(|z| z.norm()).fold(1.0, f64::max);
    if linalg::hermitian_defect(r) > 1e-12 * scale {
        return Err(Error::invalid(format!("{name} is not Hermitian")));
    }
    if r.diagonal().iter().any(|d| (d - c(1.0)).norm() > 1e-12) {
        return Err(Error::invalid(format!("{name} must have a unit diagonal")));
    }
    linalg::psd_sqrt(r).map_err(|e| Error::invalid(format!("{name}: {e}")))
}

impl ChannelStatistics {
    pub fn new(r_t: CMat, r_r: CMat, beta: f64) -> Result<Self> {
        if !(beta > 0.0 && beta.is_finite()) {
            return Err(Error::invalid(format!("path gain beta must be positive, got {beta}")));
        }
        let r_t_sqrt = check_correlation("R_T", &r_t)?;
        let r_r_sqrt = check_correlation("R_R", &r_r)?;
        Ok(Self {
            r_t,
            r_r,
            beta,
            r_t_sqrt,
            r_r_sqrt,
        })
    }

    /// Uncorrelated channel.
    pub fn iid(m: usize, n: usize, beta: f64) -> Result<Self> {
        Self::new(linalg::identity(m), linalg::identity(n), beta)
    }

    /// Sinc correlation across the channel-facing layer of each SIM.
    pub fn from_geometries(tx: &SimGeometry, rx: &SimGeometry, beta: f64) -> Result<Self> {
        let r_t = build_correlation_matrix(&tx.atom_positions(0.0), tx.wavelength)?;
        let r_r = build_correlation_matrix(&rx.atom_positions(0.0), rx.wavelength)?;
        Self::new(r_t, r_r, beta)
    }

    pub fn r_t(&self) -> &CMat {
        &self.r_t
    }

    pub fn r_r(&self) -> &CMat {
        &self.r_r
    }

    pub fn r_t_sqrt(&self) -> &CMat {
        &self.r_t_sqrt
    }

    pub fn r_r_sqrt(&self) -> &CMat {
        &self.r_r_sqrt
    }

    pub fn beta(&self) -> f64 {
        self.beta
    }

    /// `M`
    pub fn m(&self) -> usize {
        self.r_t.nrows()
    }

    /// `N`
    pub fn n(&self) -> usize {
        self.r_r.nrows()
    }

    /// Per-entry variance of `G̃`, `β / M`.
    pub fn entry_variance(&self) -> f64 {
        self.beta / self.m() as f64
    }
}

/// I.i.d. `CN(0, variance)` matrix.
pub fn sample_gaussian<R: Rng + ?Sized>(rng: &mut R, rows: usize, cols: usize, variance: f64) -> CMat {
    let sd = (variance / 2.0).sqrt();
    // column-major fill; the draw order is part of the reproducibility contract
    CMat::from_fn(rows, cols, |_, _| {
        let re: f64 = StandardNormal.sample(rng);
        let im: f64 = StandardNormal.sample(rng);
        Complex64::new(sd * re, sd * im)
    })
}

/// One realization of `G` (`N x M`).
pub fn sample_channel<R: Rng + ?Sized>(rng: &mut R, stats: &ChannelStatistics, m: usize, n: usize) -> Result<CMat> {
    if stats.m() != m || stats.n() != n {
        return Err(Error::invalid(format!(
            "statistics are {}x{} / {}x{}, requested M={m}, N={n}",
            stats.m(),
            stats.m(),
            stats.n(),
            stats.n()
        )));
    }
    let g = sample_gaussian(rng, n, m, stats.entry_variance());
    Ok(stats.r_r_sqrt() * g * stats.r_t_sqrt())
}

/// A complete link: transmit SIM, channel statistics, receive SIM.
#[derive(Debug, Clone)]
pub struct SimLink {
    pub tx: SimStack,
    pub rx: SimStack,
    pub stats: ChannelStatistics,
}

impl SimLink {
    pub fn new(tx: SimStack, rx: SimStack, stats: ChannelStatistics) -> Result<Self> {
        if tx.side() != Side::Transmit || rx.side() != Side::Receive {
            return Err(Error::invalid("link needs a transmit and a receive stack"));
        }
        if tx.atoms() != stats.m() || rx.atoms() != stats.n() {
            return Err(Error::invalid(format!(
                "stacks have M={}, N={} atoms but correlations are {}x{} and {}x{}",
                tx.atoms(),
                rx.atoms(),
                stats.m(),
                stats.m(),
                stats.n(),
                stats.n()
            )));
        }
        Ok(Self { tx, rx, stats })
    }

    pub fn n_t(&self) -> usize {
        self.tx.antennas()
    }

    pub fn n_r(&self) -> usize {
        self.rx.antennas()
    }

    pub fn m(&self) -> usize {
        self.tx.atoms()
    }

    pub fn n(&self) -> usize {
        self.rx.atoms()
    }

    pub fn channel_variance(&self) -> f64 {
        self.stats.entry_variance()
    }

    pub fn effective(&self) -> Result<EffectiveCorrelations> {
        effective_correlations(&self.tx.compose(), &self.rx.compose(), &self.stats)
    }

    /// `E ||H||_F² = (β/M) tr(R̄_T) tr(R̄_R)`.
    pub fn mean_channel_power(&self) -> Result<f64> {
        let eff = self.effective()?;
        Ok(self.channel_variance() * linalg::real_trace(eff.rbar_t()) * linalg::real_trace(eff.rbar_r()))
    }

    /// Rescale `β` so that `E ||H||_F² = N_t N_r` at the current phases,
    /// which makes `ρ` the average SNR per antenna pair.
    pub fn with_unit_channel_gain(self) -> Result<Self> {
        let power = self.mean_channel_power()?;
        if !(power > 0.0 && power.is_finite()) {
            return Err(Error::Numeric(format!("cannot normalize a channel of power {power}")));
        }
        let beta = self.stats.beta() * (self.n_t() * self.n_r()) as f64 / power;
        let stats = ChannelStatistics::new(self.stats.r_t().clone(), self.stats.r_r().clone(), beta)?;
        Ok(Self { stats, ..self })
    }

    /// End-to-end channel `H = D G P` for one realization `G`.
    pub fn end_to_end(&self, g: &CMat) -> CMat {
        self.rx.compose() * g * self.tx.compose()
    }
}

/// Dimensions and physics for building a [`SimLink`] with the default
/// geometry rules.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct LinkLayout {
    pub n_t: usize,
    pub n_r: usize,
    pub m: usize,
    pub n: usize,
    pub l: usize,
    pub k: usize,
    pub wavelength: f64,
    /// SIM thickness; layer spacing is `thickness / layers`.
    pub thickness: f64,
    pub beta: f64,
}

impl LinkLayout {
    /// 2 GHz carrier, `5λ` thick SIMs, unit path gain.
    pub fn new(n_t: usize, n_r: usize, m: usize, n: usize, l: usize, k: usize) -> Self {
        let wavelength = SPEED_OF_LIGHT / 2e9;
        Self {
            n_t,
            n_r,
            m,
            n,
            l,
            k,
            wavelength,
            thickness: 5.0 * wavelength,
            beta: 1.0,
        }
    }

    pub fn with_beta(mut self, beta: f64) -> Self {
        self.beta = beta;
        self
    }

    pub fn geometries(&self) -> Result<(SimGeometry, SimGeometry)> {
        Ok((
            SimGeometry::new(self.l, self.m, self.wavelength, self.thickness)?,
            SimGeometry::new(self.k, self.n, self.wavelength, self.thickness)?,
        ))
    }

    pub fn build_with_phases(&self, tx_phases: Vec<Vec<f64>>, rx_phases: Vec<Vec<f64>>) -> Result<SimLink> {
        let (tg, rg) = self.geometries()?;
        let tx = SimStack::new(tg, Side::Transmit, self.n_t, tx_phases)?;
        let rx = SimStack::new(rg, Side::Receive, self.n_r, rx_phases)?;
        let stats = ChannelStatistics::from_geometries(&tg, &rg, self.beta)?;
        SimLink::new(tx, rx, stats)
    }

    /// Transmit phases first, then receive phases, from `rng`.
    pub fn build_random<R: Rng + ?Sized>(&self, rng: &mut R) -> Result<SimLink> {
        let tx = random_phases(self.l, self.m, rng);
        let rx = random_phases(self.k, self.n, rng);
        self.build_with_phases(tx, rx)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    fn lambda() -> f64 {
        SPEED_OF_LIGHT / 2e9
    }

    #[test]
    fn single_atom_correlation_is_one() {
        let r = build_correlation_matrix(&[[0.0, 0.0, 0.0]], 0.1).unwrap();
        assert_eq!(r.shape(), (1, 1));
        assert_eq!(r[(0, 0)], c(1.0));
    }

    #[test]
    fn half_wavelength_pair_is_uncorrelated() {
        let lam = 0.2;
        let r = build_correlation_matrix(&[[0.0, 0.0, 0.0], [lam / 2.0, 0.0, 0.0]], lam).unwrap();
        assert!(r[(0, 1)].norm() < 1e-15);
        assert_eq!(r[(1, 1)], c(1.0));
    }

    #[test]
    #[allow(clippy::approx_constant)]
    fn quarter_wavelength_pair() {
        let lam = 0.2;
        let r = build_correlation_matrix(&[[0.0, 0.0, 0.0], [0.0, lam / 4.0, 0.0]], lam).unwrap();
        // sin(π/2) / (π/2)
        assert!((r[(0, 1)].re - 2.0 / PI).abs() < 1e-15);
        assert!((r[(0, 1)].re - 0.636620).abs() < 1e-6);
    }

    #[test]
    fn correlation_rejects_nan() {
        assert!(build_correlation_matrix(&[[f64::NAN, 0.0, 0.0]], 0.1).is_err());
        assert!(build_correlation_matrix(&[], 0.1).is_err());
    }

    #[test]
    fn grid_factorization() {
        assert_eq!(near_square_grid(32), (4, 8));
        assert_eq!(near_square_grid(36), (6, 6));
        assert_eq!(near_square_grid(200), (10, 20));
        assert_eq!(near_square_grid(7), (1, 7));
    }

    #[test]
    fn facing_atoms_coefficient_magnitude() {
        let g = SimGeometry::new(2, 1, lambda(), 5.0 * lambda()).unwrap();
        let w = build_layer_transfer(&g, 1, 1).unwrap();
        let d = g.layer_spacing;
        let a = g.atom_area;
        let expected = a * ((1.0 / (2.0 * PI * d)).powi(2) + 1.0 / lambda().powi(2)).sqrt() / d;
        assert!((w[(0, 0)].norm() - expected).abs() < 1e-15 * expected.max(1.0));
    }

    #[test]
    fn coefficient_decreases_with_lateral_offset() {
        let lam = lambda();
        let gap = 2.5 * lam;
        let area = (lam / 2.0).powi(2);
        let src = [0.0, 0.0, 0.0];
        let mut last = f64::INFINITY;
        for i in 0..200 {
            let x = i as f64 * lam / 20.0;
            let w = transfer_matrix(&[src], &[[x, 0.0, gap]], area, lam).unwrap();
            let mag = w[(0, 0)].norm();
            assert!(mag < last, "offset {x}");
            last = mag;
        }
    }

    #[test]
    fn transfer_rejects_coincident_points() {
        let p = [0.0, 0.0, 0.0];
        let err = transfer_matrix(&[p], &[p], 1.0, 1.0).unwrap_err();
        assert!(matches!(err, Error::DegenerateGeometry(_)));
    }

    #[test]
    fn path_loss_examples() {
        let lam = SPEED_OF_LIGHT / 2e9;
        let pl0 = path_loss_db(1.0, 1.0, 2.5, lam, 0.0).unwrap();
        assert!((pl0 - 20.0 * (4.0 * PI / lam).log10()).abs() < 1e-12);
        assert!((pl0 - 38.46).abs() < 0.01);
        let a = path_loss_db(50.0, 1.0, 2.5, lam, 0.0).unwrap();
        let b = path_loss_db(100.0, 1.0, 2.5, lam, 0.0).unwrap();
        assert!((b - a - 25.0 * 2f64.log10()).abs() < 1e-12);
        assert!((b - a - 7.5257).abs() < 1e-4);
        assert!(path_loss_db(0.5, 1.0, 2.5, lam, 0.0).is_err());
        assert!((path_loss_db(1.0, 1.0, 2.5, lam, 3.0).unwrap() - pl0 - 3.0).abs() < 1e-12);
    }

    #[test]
    fn gain_decreases_with_distance() {
        let lam = lambda();
        let mut last = f64::INFINITY;
        for i in 0..50 {
            let d = 1.0 + i as f64 * 7.3;
            let g = loss_db_to_gain(path_loss_db(d, 1.0, 2.5, lam, 0.0).unwrap());
            assert!(g < last);
            last = g;
        }
    }

    #[test]
    fn single_layer_zero_phase_is_transfer() {
        let g = SimGeometry::new(1, 4, lambda(), 5.0 * lambda()).unwrap();
        let s = SimStack::with_zero_phases(g, Side::Transmit, 2).unwrap();
        assert!(linalg::max_abs_diff(&s.compose(), &s.transfers()[0]) == 0.0);
    }

    #[test]
    fn phases_wrap_into_range() {
        let g = SimGeometry::new(1, 4, lambda(), 5.0 * lambda()).unwrap();
        let s = SimStack::new(g, Side::Receive, 2, vec![vec![-0.5, 7.0, 2.0 * PI, -1e-20]]).unwrap();
        for &t in &s.phases()[0] {
            assert!((0.0..2.0 * PI).contains(&t));
        }
    }

    #[test]
    fn stack_rejects_mismatched_parts() {
        let g = SimGeometry::new(2, 4, lambda(), 5.0 * lambda()).unwrap();
        let w1 = CMat::zeros(4, 2);
        let bad = CMat::zeros(3, 3);
        let phases = vec![vec![0.0; 4]; 2];
        assert!(SimStack::from_parts(g, Side::Transmit, phases.clone(), vec![w1.clone(), bad]).is_err());
        assert!(SimStack::from_parts(
            g,
            Side::Transmit,
            vec![vec![0.0; 4]],
            vec![w1.clone(), CMat::zeros(4, 4)]
        )
        .is_err());
        assert!(SimStack::from_parts(g, Side::Receive, phases, vec![w1, CMat::zeros(4, 4)]).is_err());
    }

    #[test]
    fn channel_sampling_is_reproducible() {
        let stats = ChannelStatistics::iid(4, 3, 2.0).unwrap();
        let a = sample_channel(&mut ChaCha8Rng::seed_from_u64(9), &stats, 4, 3).unwrap();
        let b = sample_channel(&mut ChaCha8Rng::seed_from_u64(9), &stats, 4, 3).unwrap();
        assert_eq!(a, b);
        assert_eq!(a.shape(), (3, 4));
        assert!(sample_channel(&mut ChaCha8Rng::seed_from_u64(9), &stats, 3, 3).is_err());
    }

    #[test]
    fn statistics_validation() {
        let mut r = linalg::identity(2);
        r[(0, 1)] = c(0.5);
        assert!(ChannelStatistics::new(r.clone(), linalg::identity(2), 1.0).is_err());
        r[(1, 0)] = c(0.5);
        assert!(ChannelStatistics::new(r.clone(), linalg::identity(2), 1.0).is_ok());
        assert!(ChannelStatistics::new(r.clone(), linalg::identity(2), 0.0).is_err());
        let mut indefinite = linalg::identity(2);
        indefinite[(0, 1)] = c(1.5);
        indefinite[(1, 0)] = c(1.5);
        assert!(ChannelStatistics::new(indefinite, linalg::identity(2), 1.0).is_err());
    }
}
