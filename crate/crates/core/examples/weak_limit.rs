//! `tau_z y` tends to zero weakly as `|z|` grows, tested against a few fixed elements.
//!
//! `cargo run --release --example weak_limit`

use sprime::distribution::{SmoothKind, TemperedDistribution};
use sprime::flow::weak_limit_check;

fn main() -> sprime::Result<()> {
    let y = TemperedDistribution::gaussian(vec![0.0], 0.5, 1.0)?;
    let tests = [
        TemperedDistribution::gaussian(vec![1.0], 1.0, 1.0)?,
        TemperedDistribution::smooth(SmoothKind::Bump { amplitude: 1.0, width: 1.0 }, 1)?,
    ];
    let points: Vec<Vec<f64>> = (0..8).map(|i| vec![2f64.powi(i)]).collect();
    let table = weak_limit_check(&y, &points, &tests, 1e-6)?;
    for (dist, row) in table.distances.iter().zip(&table.values) {
        let cells: Vec<String> = row.iter().map(|v| format!("{v:.3e}")).collect();
        println!("|z| = {dist:>5}: {}", cells.join("  "));
    }
    println!("below 1e-6 from index {:?} (Gaussian surrogate: {})", table.settled_from, table.surrogate);
    Ok(())
}
