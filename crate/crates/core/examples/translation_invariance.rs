//! `x + z_t(tau_x y)` against the diffusion started at `x` with coefficients built from `y`.
//!
//! `cargo run --release --example translation_invariance`

use sprime::distribution::TemperedDistribution;
use sprime::flow::translation_invariance_check;
use sprime::sde::{BrownianPath, DEFAULT_THRESHOLDS};
use sprime::verify::smooth_coefficients;

fn main() -> sprime::Result<()> {
    let y = TemperedDistribution::gaussian(vec![0.0], 1.0, 1.0)?;
    let b = BrownianPath::sample(5, 0, 1, 1.0, 1e-3)?;
    for x in [-5.0, -1.0, 0.5, 1.0, 5.0] {
        let dev = translation_invariance_check(&y, &smooth_coefficients(), &[x], &b, &DEFAULT_THRESHOLDS)?;
        println!("x = {x:>5}: max deviation {dev:.2e}");
    }
    Ok(())
}
