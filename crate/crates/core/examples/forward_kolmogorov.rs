//! The empirical kernel `P_bar(x0, y, t, .)` tested against the forward equation.
//!
//! `cargo run --release --example forward_kolmogorov`

use sprime::distribution::TemperedDistribution;
use sprime::evolution::{default_panel, forward_residual, EvolutionConfig};
use sprime::verify::smooth_coefficients;

fn main() -> sprime::Result<()> {
    let y = TemperedDistribution::gaussian(vec![0.0], 1.0, 1.0)?;
    let times: Vec<f64> = (0..=8).map(|k| k as f64 * 0.05).collect();
    let config = EvolutionConfig::new(9, 0.005);
    let panel = default_panel(1)?;
    let report = forward_residual(&[0.5], &y, &smooth_coefficients(), &times, 4000, 0.5, 4, &config, &panel)?;
    let last = *report.times.last().unwrap();
    for row in report.panel.iter().filter(|r| r.t == last) {
        println!(
            "{:>6}: residual {:>10.3e}  budget {:>10.3e}  {}",
            row.label,
            row.residual,
            row.budget,
            if row.within_budget { "ok" } else { "OUT" }
        );
    }
    for row in &report.norm_rows {
        println!("t = {:.2}: ||residual||_(-q-1) = {:.3e} (budget {:.3e})", row.t, row.residual, row.budget);
    }
    println!("within budget: {}", report.within_budget);

    // q at or below d/4 is rejected: delta is not in S_(-q) there
    let err = forward_residual(&[0.0], &y, &smooth_coefficients(), &times, 10, 0.2, 4, &config, &panel).unwrap_err();
    println!("q = 0.2: {err}");
    Ok(())
}
