//! Mean mutual information against the number of transmit layers, with the
//! phases drawn at random.
//!
//! cargo run --release --example emi_sweep

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use simmimo::det_equiv::solve_fixed_point;
use simmimo::{LinkLayout, SolverOptions};

fn main() -> simmimo::Result<()> {
    let rho = 100.0;
    println!("layers,emi_bits");
    for layers in 1..=6 {
        let link = LinkLayout::new(4, 4, 36, 36, layers, 2)
            .build_random(&mut ChaCha8Rng::seed_from_u64(1))?
            .with_unit_channel_gain()?;
        let eq = solve_fixed_point(&link.effective()?, rho, &SolverOptions::default())?;
        println!("{layers},{:.4}", eq.mean_mi / std::f64::consts::LN_2);
    }
    Ok(())
}
