//! Strong convergence order of Euler-Maruyama for multiplicative and additive noise.
//!
//! `cargo run --release --example strong_order`

use sprime::sde::{scalar_fields, strong_error, SimulationConfig};

fn main() -> sprime::Result<()> {
    let dts: Vec<f64> = (3..=7).map(|k| 2f64.powi(-k)).collect();
    let config = SimulationConfig::new(1.0, dts[0], 11);
    let multiplicative = scalar_fields(|x| x.sin(), |_| 0.0);
    let additive = scalar_fields(|_| 1.0, |x| x.sin());
    for (name, table) in [
        ("sigma = sin x", strong_error(&multiplicative, &[1.0], &config, &dts, 300, 4)?),
        ("b = sin x, sigma = 1", strong_error(&additive, &[1.0], &config, &dts, 300, 4)?),
    ] {
        println!("{name}: order {:.3} (dropped {})", table.order, table.dropped);
        for (dt, e) in table.dts.iter().zip(&table.errors) {
            println!("  dt = {dt:.5}  error {e:.3e}");
        }
    }
    Ok(())
}
