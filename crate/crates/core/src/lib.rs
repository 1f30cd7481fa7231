//! Mutual-information statistics and phase optimization for MIMO links
//! assisted by stacked intelligent metasurfaces (SIMs).
//!
//! A transmit SIM with `L` layers of `M` programmable meta-atoms shapes the
//! signal of `N_t` antennas, a receive SIM with `K` layers of `N` atoms feeds
//! `N_r` antennas, and the two are connected by a Kronecker-correlated
//! Rayleigh channel. The crate provides:
//!
//! * [`channel`]: SIM geometry, diffraction transfer matrices, sinc spatial
//!   correlation, path loss and channel sampling.
//! * [`det_equiv`]: the large-system deterministic equivalent of the ergodic
//!   mutual information.
//! * [`fluctuations`]: the CLT variance of the mutual information and the
//!   Gaussian outage approximation built on it.
//! * [`gradients`]: closed-form Wirtinger gradients of the mean, variance and
//!   outage with respect to every SIM phase, plus a finite-difference oracle.
//! * [`optimizer`]: projected gradient descent on the unit-modulus phases,
//!   jointly or alternating between the two SIMs.
//! * [`montecarlo`]: a seeded, parallel, bit-reproducible Monte Carlo oracle.
//! * [`dmt`]: the finite-SNR diversity-multiplexing tradeoff.
//! * [`experiment`]: the JSON-configured experiment runner behind the
//!   `simmimo` binary.
//!
//! Mutual information is measured in nats throughout the library; the
//! experiment runner converts to bits for reporting.

// `!(x > 0.0)` also rejects NaN.
#![allow(clippy::neg_cmp_op_on_partial_ord)]

pub mod channel;
pub mod det_equiv;
pub mod dmt;
pub mod error;
pub mod experiment;
pub mod fixed_point;
pub mod fluctuations;
pub mod gradients;
pub mod linalg;
pub mod montecarlo;
pub mod optimizer;

pub use channel::{ChannelStatistics, LinkLayout, Side, SimGeometry, SimLink, SimStack};
pub use det_equiv::{DetEquilibrium, EffectiveCorrelations, SolverOptions};
pub use error::{Error, Result};
pub use fluctuations::{FluctuationSolution, Moments};
pub use gradients::PhaseGradient;
pub use montecarlo::McEstimate;
pub use optimizer::{Objective, OptimizationTrace, OptimizerConfig, UpdateMode};
