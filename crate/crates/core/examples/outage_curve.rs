//! Gaussian outage probability against SNR at a fixed rate.
//!
//! cargo run --release --example outage_curve

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use simmimo::fluctuations::moments;
use simmimo::{LinkLayout, SolverOptions};

fn main() -> simmimo::Result<()> {
    let link = LinkLayout::new(8, 8, 32, 32, 2, 2)
        .build_random(&mut ChaCha8Rng::seed_from_u64(3))?
        .with_unit_channel_gain()?;
    let eff = link.effective()?;
    let rate_bits = 12.0;
    let rate = rate_bits * std::f64::consts::LN_2;
    println!("snr_db,emi_bits,std_bits,outage");
    for db in (-10..=30).step_by(5) {
        let rho = 10f64.powf(db as f64 / 10.0);
        let m = moments(&eff, rho, &SolverOptions::default())?;
        println!(
            "{db},{:.4},{:.4},{:.4e}",
            m.eq.mean_mi / std::f64::consts::LN_2,
            m.fl.variance.sqrt() / std::f64::consts::LN_2,
            m.outage(rate)?
        );
    }
    Ok(())
}
