#![allow(dead_code)]

use num_complex::Complex64;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use simmimo::linalg::CMat;
use simmimo::{LinkLayout, SimLink};

pub fn link(n_t: usize, n_r: usize, m: usize, n: usize, l: usize, k: usize, seed: u64) -> SimLink {
    LinkLayout::new(n_t, n_r, m, n, l, k)
        .build_random(&mut ChaCha8Rng::seed_from_u64(seed))
        .unwrap()
}

/// Small link with unit average channel gain.
pub fn small_link(seed: u64) -> SimLink {
    link(4, 4, 8, 8, 2, 2, seed).with_unit_channel_gain().unwrap()
}

pub fn max_abs(a: &CMat, b: &CMat) -> f64 {
    assert_eq!(a.shape(), b.shape());
    a.iter().zip(b.iter()).map(|(x, y)| (x - y).norm()).fold(0.0, f64::max)
}

pub fn diag_phase(theta: &[f64]) -> CMat {
    CMat::from_diagonal(&nalgebra::DVector::from_iterator(
        theta.len(),
        theta.iter().map(|&t| Complex64::from_polar(1.0, t)),
    ))
}
