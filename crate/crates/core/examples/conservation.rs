//! The integral of `Y_t = tau_{z_t} y` stays equal to the mass of `y`.
//!
//! `cargo run --release --example conservation`

use sprime::distribution::TemperedDistribution;
use sprime::flow::{conservation_check, evolve_flow, MassGrid};
use sprime::sde::{BrownianPath, DEFAULT_THRESHOLDS};
use sprime::verify::smooth_coefficients;

fn main() -> sprime::Result<()> {
    let y = TemperedDistribution::gaussian(vec![0.3], 0.8, 1.7)?;
    for path in 0..3 {
        let b = BrownianPath::sample(9, path, 1, 1.0, 1e-3)?;
        let flow = evolve_flow(&y, &smooth_coefficients(), &b, &DEFAULT_THRESHOLDS)?;
        let report = conservation_check(&flow, MassGrid::default(), &[0.3], 100)?;
        println!(
            "path {path}: mass {} max drift {:.2e} over {} times",
            report.mass,
            report.max_error,
            report.times.len()
        );
    }
    Ok(())
}
