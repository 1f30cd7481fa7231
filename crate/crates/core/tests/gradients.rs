mod common;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use simmimo::det_equiv::solve_fixed_point;
use simmimo::fluctuations::{moments, solve_variance_fixed_point};
use simmimo::gradients::{
    finite_difference_gradient, grad_mean_mi, grad_outage, grad_variance, worst_relative_error, GradientWorkspace,
    PhaseGradient,
};
use simmimo::{SimLink, SolverOptions};

use common::{link, small_link};

fn opts() -> SolverOptions {
    SolverOptions::default().with_tol(1e-13)
}

fn mean_mi(l: &SimLink, rho: f64) -> f64 {
    solve_fixed_point(&l.effective().unwrap(), rho, &opts())
        .unwrap()
        .mean_mi
}

fn variance(l: &SimLink, rho: f64) -> f64 {
    solve_variance_fixed_point(&l.effective().unwrap(), rho, &opts())
        .unwrap()
        .variance
}

fn analytic(l: &SimLink, rho: f64) -> (PhaseGradient, PhaseGradient) {
    let eff = l.effective().unwrap();
    let m = moments(&eff, rho, &opts()).unwrap();
    let ws = GradientWorkspace::new(l);
    (
        grad_mean_mi(&ws, &m.eq).unwrap(),
        grad_variance(&ws, &eff, &m.fl).unwrap(),
    )
}

#[test]
fn mean_and_variance_gradients_match_finite_differences() {
    for seed in 0..4 {
        let l = small_link(seed);
        let rho = 5.0;
        let (gc, gv) = analytic(&l, rho);
        let fc = finite_difference_gradient(|x| Ok(mean_mi(x, rho)), &l, 1e-6).unwrap();
        let fv = finite_difference_gradient(|x| Ok(variance(x, rho)), &l, 1e-6).unwrap();
        assert!(worst_relative_error(&l, &gc, &fc, 1e-8, 1e-4) <= 1e-4);
        assert!(worst_relative_error(&l, &gv, &fv, 1e-8, 1e-4) <= 1e-4);
    }
}

#[test]
fn outage_gradient_matches_finite_differences() {
    let l = small_link(7);
    let rho = 5.0;
    let eff = l.effective().unwrap();
    let m = moments(&eff, rho, &opts()).unwrap();
    let rate = m.eq.mean_mi - 0.5 * m.fl.variance.sqrt();
    let g = grad_outage(&GradientWorkspace::new(&l), &eff, &m, rate).unwrap();
    let fd = finite_difference_gradient(|x| moments(&x.effective()?, rho, &opts())?.outage(rate), &l, 1e-6).unwrap();
    assert!(worst_relative_error(&l, &g, &fd, 1e-8, 1e-4) <= 1e-4);
}

#[test]
fn finite_difference_steps_agree() {
    let l = small_link(11);
    let f = |x: &SimLink| Ok(mean_mi(x, 2.0));
    let a = finite_difference_gradient(f, &l, 1e-5).unwrap();
    let b = finite_difference_gradient(f, &l, 1e-7).unwrap();
    assert!(worst_relative_error(&l, &a, &b, 1e-7, 1e-3) <= 1e-3);
}

#[test]
fn common_layer_rotation_is_a_null_direction() {
    // rotating every atom of a layer by the same angle only scales P or D by a phase
    let l = link(3, 3, 9, 9, 2, 2, 5);
    let (gc, gv) = analytic(&l, 3.0);
    for g in [gc, gv] {
        let (dt, dr) = g.phase_derivatives(&l);
        for layer in dt.iter().chain(&dr) {
            let sum: f64 = layer.iter().sum();
            let scale = layer.iter().map(|x| x.abs()).sum::<f64>().max(1e-300);
            assert!(sum.abs() <= 1e-8 * scale, "{sum} vs {scale}");
        }
    }
}

#[test]
fn variance_gradient_vanishes_at_low_snr() {
    let l = small_link(3);
    let hi = analytic(&l, 1.0).1.norm();
    let lo = analytic(&l, 1e-4).1.norm();
    assert!(lo < 1e-4 * hi, "{lo} vs {hi}");
}

#[test]
fn small_steps_along_negative_gradient_descend() {
    let mut rng = ChaCha8Rng::seed_from_u64(404);
    let trials = 100;
    let mut descended = 0;
    for _ in 0..trials {
        let l = small_link(rng.random());
        let rho = 10f64.powf(rng.random_range(-1.0..2.0));
        let f0 = -mean_mi(&l, rho);
        let (dt, dr) = analytic(&l, rho).0.scaled(-1.0).phase_derivatives(&l);
        let mut next = l.clone();
        let h = 1e-4;
        for (i, d) in dt.iter().enumerate() {
            let th: Vec<f64> = l.tx.phases()[i].iter().zip(d).map(|(t, g)| t - h * g).collect();
            next.tx.set_phases(i, &th).unwrap();
        }
        for (k, d) in dr.iter().enumerate() {
            let th: Vec<f64> = l.rx.phases()[k].iter().zip(d).map(|(t, g)| t - h * g).collect();
            next.rx.set_phases(k, &th).unwrap();
        }
        if -mean_mi(&next, rho) < f0 {
            descended += 1;
        }
    }
    assert!(descended * 100 >= 95 * trials, "{descended}/{trials}");
}

#[test]
fn gradients_are_finite_over_snr_range() {
    let l = small_link(21);
    for &rho in &[1e-3, 1e-1, 1.0, 1e2, 1e4] {
        let (gc, gv) = analytic(&l, rho);
        assert!(gc.is_finite() && gv.is_finite());
    }
}
