//! Finite-SNR diversity against multiplexing gain, closed form next to a
//! numerical derivative of the outage probability.
//!
//! cargo run --release --example dmt_curve

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use simmimo::dmt::dmt_point;
use simmimo::{LinkLayout, SolverOptions};

fn main() -> simmimo::Result<()> {
    let link = LinkLayout::new(4, 4, 16, 16, 2, 2)
        .build_random(&mut ChaCha8Rng::seed_from_u64(2))?
        .with_unit_channel_gain()?;
    let eff = link.effective()?;
    let q = link.m().min(link.n());
    let opts = SolverOptions::default().with_tol(1e-12);
    for rho in [1.0, 10.0] {
        println!("# rho = {rho}");
        println!("w,d_closed,d_numeric");
        for i in 1..10 {
            let w = q as f64 * i as f64 / 10.0;
            match dmt_point(&eff, q, w, rho, &opts) {
                Ok(p) => println!("{w},{:.6},{:.6}", p.d_closed, p.d_numeric),
                Err(e) => println!("{w},skipped: {e}"),
            }
        }
    }
    Ok(())
}
