//! Compare the closed-form mean, variance and outage with Monte Carlo
//! samples of the exact mutual information.
//!
//! cargo run --release --example mc_verify

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use simmimo::fluctuations::moments;
use simmimo::montecarlo::{compare_with_theory, estimate, McTolerances};
use simmimo::{LinkLayout, SolverOptions};

fn main() -> simmimo::Result<()> {
    let link = LinkLayout::new(8, 8, 32, 32, 2, 2)
        .build_random(&mut ChaCha8Rng::seed_from_u64(7))?
        .with_unit_channel_gain()?;
    let eff = link.effective()?;
    println!("rho,emi,emi_mc,var,var_mc,ks,pass");
    for rho in [0.1, 1.0, 10.0] {
        let m = moments(&eff, rho, &SolverOptions::default())?;
        let sd = m.fl.variance.sqrt();
        let rates: Vec<f64> = (-8..=8).map(|z| m.eq.mean_mi + 0.25 * z as f64 * sd).collect();
        let curve = rates
            .iter()
            .map(|&r| m.outage(r))
            .collect::<simmimo::Result<Vec<_>>>()?;
        let mc = estimate(&link, rho, &rates, 10_000, 7)?;
        let cmp = compare_with_theory(&mc, m.eq.mean_mi, m.fl.variance, &curve, &McTolerances::default())?;
        println!(
            "{rho},{:.4},{:.4},{:.4},{:.4},{:.4},{}",
            m.eq.mean_mi,
            mc.mean,
            m.fl.variance,
            mc.variance,
            cmp.ks_distance,
            cmp.passed()
        );
    }
    Ok(())
}
