//! Two strong solvers on one noise: the translation representation and explicit Euler on
//! Hermite coefficients. Their distance shrinks with the step size.
//!
//! `cargo run --release --example uniqueness`

use sprime::distribution::TemperedDistribution;
use sprime::flow::uniqueness_check;
use sprime::sde::BrownianPath;
use sprime::verify::smooth_coefficients;

fn main() -> sprime::Result<()> {
    let y = TemperedDistribution::gaussian(vec![0.0], 1.0, 1.0)?;
    for path in 0..3 {
        let b = BrownianPath::sample(12, path, 1, 0.5, 0.01)?;
        let table = uniqueness_check(&y, &smooth_coefficients(), &b, 4, 24, 0.0)?;
        println!("path {path}: slope {:.2}", table.slope);
        for (dt, dist) in table.dts.iter().zip(&table.max_distance) {
            println!("  dt = {dt:.5}: max_t ||tau_z y - Y^coef||_(-1) = {dist:.3e}");
        }
    }
    Ok(())
}
