//! `psi(t, y) = E Y_t(y)` for the heat setting and the residual of its evolution equation.
//!
//! `cargo run --release --example evolution_psi`

use sprime::distribution::{CoefficientMatrix, TemperedDistribution};
use sprime::evolution::{estimate_psi, evolution_residual, EvolutionConfig};

fn main() -> sprime::Result<()> {
    let y = TemperedDistribution::gaussian(vec![0.0], 1.0, 1.0)?;
    let coeffs = CoefficientMatrix::constant(1, 1.0, 0.0);
    let times: Vec<f64> = (0..=10).map(|k| k as f64 * 0.05).collect();
    let config = EvolutionConfig::new(9, 0.005);
    let report = estimate_psi(&y, &coeffs, &times, 4000, 2, &config)?;
    let table = evolution_residual(&report, &y, &coeffs)?;
    // psi(t) is the Gaussian of variance 1 + t, so its h_0 coefficient is known.
    for (i, t) in report.times.iter().enumerate() {
        let exact = std::f64::consts::PI.powf(-0.25) / (2.0 + t).sqrt();
        println!(
            "t = {t:.2}: c_0 = {:.5} +- {:.5} (exact {exact:.5}), mass {:.5}",
            report.coeffs[i][0], report.std_errors[i][0], report.mass[i]
        );
    }
    for row in &table.integrated {
        println!("integrated residual at t = {:.2}: {:.3e} (budget {:.3e})", row.t, row.residual, row.budget);
    }
    println!("within budget: {}", table.within_budget);
    Ok(())
}
