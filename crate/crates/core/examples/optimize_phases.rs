//! Minimize outage by projected gradient descent, joint against alternating
//! updates, starting from the same random phases.
//!
//! cargo run --release --example optimize_phases

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use simmimo::det_equiv::solve_fixed_point;
use simmimo::optimizer::{optimize, Objective, OptimizerConfig, UpdateMode};
use simmimo::{LinkLayout, SolverOptions};

fn main() -> simmimo::Result<()> {
    let rho = 10.0;
    let link = LinkLayout::new(8, 8, 32, 32, 2, 2)
        .build_random(&mut ChaCha8Rng::seed_from_u64(5))?
        .with_unit_channel_gain()?;
    // target the rate the random phases support on average
    let rate = solve_fixed_point(&link.effective()?, rho, &SolverOptions::default())?.mean_mi;
    let joint = OptimizerConfig {
        objective: Objective::Outage { rate },
        max_iter: 100,
        ..OptimizerConfig::default()
    };
    let alternating = OptimizerConfig {
        mode: UpdateMode::Alternating { inner_steps: 10 },
        ..joint
    };
    let a = optimize(&link, &joint, rho)?;
    let b = optimize(&link, &alternating, rho)?;
    println!("iteration,outage_joint,outage_alternating");
    let (ca, cb) = (a.objective_curve(), b.objective_curve());
    for i in (0..ca.len().max(cb.len())).step_by(10) {
        let at = |c: &[f64]| c.get(i).or(c.last()).copied().unwrap_or(f64::NAN);
        println!("{i},{:.6},{:.6}", at(&ca), at(&cb));
    }
    println!("# joint {:?} after {} iterations", a.termination, a.iterations());
    println!("# alternating {:?} after {} iterations", b.termination, b.iterations());
    Ok(())
}
