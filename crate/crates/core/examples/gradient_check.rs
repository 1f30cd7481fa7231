//! Analytic phase gradients of the mean, variance and outage against central
//! finite differences.
//!
//! cargo run --release --example gradient_check

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use simmimo::experiment::gradient_errors;
use simmimo::fluctuations::moments;
use simmimo::{LinkLayout, SolverOptions};

fn main() -> simmimo::Result<()> {
    let rho = 5.0;
    println!("seed,mean,variance,outage");
    for seed in 0..5 {
        let link = LinkLayout::new(4, 4, 8, 8, 2, 2)
            .build_random(&mut ChaCha8Rng::seed_from_u64(seed))?
            .with_unit_channel_gain()?;
        let m = moments(&link.effective()?, rho, &SolverOptions::default())?;
        let rate = m.eq.mean_mi - 0.5 * m.fl.variance.sqrt();
        let [c, v, p] = gradient_errors(&link, rho, rate)?;
        println!("{seed},{c:.2e},{v:.2e},{p:.2e}");
    }
    Ok(())
}
