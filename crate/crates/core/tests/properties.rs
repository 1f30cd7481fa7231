mod common;

use std::f64::consts::PI;

use proptest::prelude::*;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use simmimo::channel::{build_correlation_matrix, loss_db_to_gain, path_loss_db, sample_channel, sample_gaussian};
use simmimo::det_equiv::solve_fixed_point;
use simmimo::fluctuations::{moments, outage_probability};
use simmimo::gradients::{grad_mean_mi, grad_outage, grad_variance, GradientWorkspace};
use simmimo::linalg::CMat;
use simmimo::montecarlo::{mi_sample, mi_sample_eigen, McEstimate};
use simmimo::{ChannelStatistics, EffectiveCorrelations, SimLink, SimStack, SolverOptions};

use common::{link, max_abs};

fn opts() -> SolverOptions {
    SolverOptions::default().with_tol(1e-13)
}

fn random_psd(n: usize, seed: u64) -> CMat {
    let a = sample_gaussian(&mut ChaCha8Rng::seed_from_u64(seed), n, n, 1.0);
    &a * a.adjoint() + CMat::identity(n, n) * num_complex::Complex64::new(0.05, 0.0)
}

fn tiny_link(seed: u64) -> SimLink {
    link(2, 3, 4, 6, 2, 2, seed).with_unit_channel_gain().unwrap()
}

proptest! {
    #![proptest_config(ProptestConfig {
        cases: 32,
        failure_persistence: None,
        ..ProptestConfig::default()
    })]

    #[test]
    fn composition_is_2pi_periodic(seed in 0u64..1000, layer in 0usize..3, atom in 0usize..9, turns in -3i32..4) {
        let l = link(2, 2, 9, 9, 3, 3, seed);
        let mut tx = l.tx.clone();
        let mut th = tx.phases()[layer].clone();
        th[atom] += 2.0 * PI * turns as f64;
        tx.set_phases(layer, &th).unwrap();
        prop_assert!(max_abs(&tx.compose(), &l.tx.compose()) < 1e-12);
        prop_assert!(tx.phases()[layer].iter().all(|t| (0.0..2.0 * PI).contains(t)));
    }

    #[test]
    fn correlation_is_symmetric_unit_diagonal_psd(
        pts in prop::collection::vec((-1.0f64..1.0, -1.0f64..1.0), 1..12),
        wavelength in 0.05f64..1.0,
    ) {
        let pos: Vec<[f64; 3]> = pts.iter().map(|&(x, y)| [x, y, 0.0]).collect();
        let r = build_correlation_matrix(&pos, wavelength).unwrap();
        let n = pos.len();
        for i in 0..n {
            prop_assert_eq!(r[(i, i)].re, 1.0);
            for j in 0..n {
                prop_assert_eq!(r[(i, j)], r[(j, i)]);
                prop_assert_eq!(r[(i, j)].im, 0.0);
            }
        }
        prop_assert!(r.map(|z| z.re).symmetric_eigenvalues().min() >= -1e-10);
    }

    #[test]
    fn path_gain_decreases_with_distance(d in 1.0f64..1e3, extra in 1e-3f64..100.0, b in 0.5f64..5.0) {
        let g = |d| loss_db_to_gain(path_loss_db(d, 1.0, b, 0.15, 0.0).unwrap());
        prop_assert!(g(d + extra) < g(d));
    }

    #[test]
    fn channel_sampling_is_bit_reproducible(seed in any::<u64>()) {
        let r = |n: usize| build_correlation_matrix(&(0..n).map(|i| [0.04 * i as f64, 0.0, 0.0]).collect::<Vec<_>>(), 0.15).unwrap();
        let stats = ChannelStatistics::new(r(3), r(2), 0.7).unwrap();
        let a = sample_channel(&mut ChaCha8Rng::seed_from_u64(seed), &stats, 3, 2).unwrap();
        let b = sample_channel(&mut ChaCha8Rng::seed_from_u64(seed), &stats, 3, 2).unwrap();
        prop_assert_eq!(a, b);
    }

    #[test]
    fn fixed_point_ignores_initialization(seed in 0u64..500, log_rho in -2.0f64..3.0, i in 0usize..3, j in 0usize..3) {
        let inits = [0.1, 1.0, 10.0];
        let eff = EffectiveCorrelations::new(random_psd(3, seed), random_psd(4, seed + 7), 0.1).unwrap();
        let rho = 10f64.powf(log_rho);
        let base = solve_fixed_point(&eff, rho, &opts()).unwrap();
        let other = solve_fixed_point(&eff, rho, &opts().with_init(inits[i], inits[j])).unwrap();
        prop_assert!((base.mean_mi - other.mean_mi).abs() <= 1e-9 * base.mean_mi.max(1.0));
        prop_assert!((base.delta - other.delta).abs() <= 1e-9 * base.delta.max(1.0));
        prop_assert!(base.e > 0.0 && base.delta > 0.0 && base.mean_mi >= 0.0);
        prop_assert!(base.residual <= 1e-13);
    }

    #[test]
    fn mean_is_nondecreasing_in_snr(seed in 0u64..500, mut grid in prop::collection::vec(1e-3f64..1e3, 2..10)) {
        grid.sort_by(f64::total_cmp);
        let eff = EffectiveCorrelations::new(random_psd(4, seed), random_psd(3, seed + 3), 0.2).unwrap();
        let c: Vec<f64> = grid.iter().map(|&r| solve_fixed_point(&eff, r, &opts()).unwrap().mean_mi).collect();
        for w in c.windows(2) {
            prop_assert!(w[1] >= w[0] - 1e-12);
        }
    }

    #[test]
    fn moments_depend_on_spectra_only(seed in 0u64..500, rho in 0.01f64..100.0) {
        let (rt, rr) = (random_psd(3, seed), random_psd(4, seed + 11));
        let u = sample_gaussian(&mut ChaCha8Rng::seed_from_u64(seed + 1), 3, 3, 1.0).qr().q();
        let v = sample_gaussian(&mut ChaCha8Rng::seed_from_u64(seed + 2), 4, 4, 1.0).qr().q();
        let a = moments(&EffectiveCorrelations::new(rt.clone(), rr.clone(), 0.1).unwrap(), rho, &opts()).unwrap();
        let rotated = EffectiveCorrelations::new(&u * rt * u.adjoint(), &v * rr * v.adjoint(), 0.1).unwrap();
        let b = moments(&rotated, rho, &opts()).unwrap();
        prop_assert!((a.eq.mean_mi - b.eq.mean_mi).abs() <= 1e-9 * a.eq.mean_mi.max(1.0));
        prop_assert!((a.fl.gamma - b.fl.gamma).abs() <= 1e-9);
        prop_assert!((a.fl.gamma_tilde - b.fl.gamma_tilde).abs() <= 1e-9);
        prop_assert!(a.fl.variance >= 0.0 && a.fl.gamma * a.fl.gamma_tilde < 1.0);
        prop_assert!(a.fl.f > 0.0 && a.fl.f_tilde > 0.0);
    }

    #[test]
    fn outage_monotone_in_rate_and_mean(c in 0.5f64..20.0, v in 0.01f64..4.0, r in 0.0f64..20.0, dr in 0.01f64..1.0) {
        let p = outage_probability(r, c, v).unwrap();
        prop_assert!((0.0..=1.0).contains(&p));
        let z = (r - c) / v.sqrt();
        // strict where the Gaussian tail is representable
        if z.abs() < 5.0 {
            prop_assert!(outage_probability(r + dr, c, v).unwrap() > p);
            prop_assert!(outage_probability(r, c + dr, v).unwrap() < p);
        }
    }

    #[test]
    fn global_phase_is_a_null_direction(seed in 0u64..300, log_rho in -1.0f64..2.0) {
        let l = tiny_link(seed);
        let rho = 10f64.powf(log_rho);
        let eff = l.effective().unwrap();
        let m = moments(&eff, rho, &opts()).unwrap();
        let ws = GradientWorkspace::new(&l);
        let rate = m.eq.mean_mi;
        let grads = [
            grad_mean_mi(&ws, &m.eq).unwrap(),
            grad_variance(&ws, &eff, &m.fl).unwrap(),
            grad_outage(&ws, &eff, &m, rate).unwrap(),
        ];
        for g in grads {
            let (dt, dr) = g.phase_derivatives(&l);
            // every phase of one SIM shifted together
            let tx: f64 = dt.iter().flatten().sum();
            let rx: f64 = dr.iter().flatten().sum();
            prop_assert!(tx.abs() < 1e-8 && rx.abs() < 1e-8, "{} {}", tx, rx);
        }
    }

    #[test]
    fn gradients_follow_atom_relabeling(seed in 0u64..300, shift in 1usize..4) {
        let l = tiny_link(seed);
        let m = l.m();
        let perm: Vec<usize> = (0..m).map(|i| (i + shift) % m).collect();
        // relabel the atoms of the first transmit layer: rows of W^1, columns of W^2
        let t = l.tx.transfers();
        let w1 = CMat::from_fn(m, t[0].ncols(), |i, j| t[0][(perm[i], j)]);
        let w2 = CMat::from_fn(m, m, |i, j| t[1][(i, perm[j])]);
        let p0: Vec<f64> = perm.iter().map(|&i| l.tx.phases()[0][i]).collect();
        let tx = SimStack::from_parts(
            *l.tx.geometry(),
            l.tx.side(),
            vec![p0, l.tx.phases()[1].clone()],
            vec![w1, w2],
        )
        .unwrap();
        let relabeled = SimLink::new(tx, l.rx.clone(), l.stats.clone()).unwrap();
        let grad = |x: &SimLink| {
            let eff = x.effective().unwrap();
            let m = moments(&eff, 2.0, &opts()).unwrap();
            let ws = GradientWorkspace::new(x);
            (grad_mean_mi(&ws, &m.eq).unwrap(), grad_variance(&ws, &eff, &m.fl).unwrap())
        };
        let (a, b) = (grad(&l), grad(&relabeled));
        for (ga, gb) in [(a.0, b.0), (a.1, b.1)] {
            for (i, &j) in perm.iter().enumerate() {
                prop_assert!((gb.d_phi[0][i] - ga.d_phi[0][j]).norm() < 1e-10);
                prop_assert!((gb.d_phi[1][i] - ga.d_phi[1][i]).norm() < 1e-10);
            }
        }
    }

    #[test]
    fn mi_paths_agree(seed in any::<u64>(), rows in 1usize..5, cols in 1usize..5, rho in 0.0f64..1e3) {
        let h = sample_gaussian(&mut ChaCha8Rng::seed_from_u64(seed), rows, cols, 1.0);
        let a = mi_sample(&h, rho).unwrap();
        let b = mi_sample_eigen(&h, rho).unwrap();
        prop_assert!((a - b).abs() <= 1e-9 * a.max(1.0));
    }

    #[test]
    fn sample_statistics_are_consistent(samples in prop::collection::vec(0.0f64..50.0, 2..200), rates in prop::collection::vec(0.0f64..50.0, 0..5)) {
        let est = McEstimate::from_samples(samples.clone(), &rates, 0).unwrap();
        prop_assert!(est.variance >= 0.0);
        prop_assert!((est.std_error_mean - (est.variance / samples.len() as f64).sqrt()).abs() <= 1e-15 * est.std_error_mean.max(1.0));
        for ro in &est.outage_by_rate {
            prop_assert!((0.0..=1.0).contains(&ro.outage));
        }
    }
}
