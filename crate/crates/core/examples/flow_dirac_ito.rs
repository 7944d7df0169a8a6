//! With `y = delta_0` the flow pairs test functions with the classical Ito diffusion.
//!
//! `cargo run --release --example flow_dirac_ito`

use sprime::distribution::{SmoothKind, TemperedDistribution};
use sprime::flow::evolve_flow;
use sprime::sde::{BrownianPath, DEFAULT_THRESHOLDS};
use sprime::verify::smooth_coefficients;

fn main() -> sprime::Result<()> {
    let coeffs = smooth_coefficients();
    let y = TemperedDistribution::dirac(vec![0.0]);
    let phi = TemperedDistribution::smooth(SmoothKind::Tanh { offset: 0.0, amplitude: 1.0, axis: 0, scale: 1.0 }, 1)?;
    let b = BrownianPath::sample(3, 0, 1, 1.0, 1e-3)?;
    let flow = evolve_flow(&y, &coeffs, &b, &DEFAULT_THRESHOLDS)?;

    // dX = (0.8 + 0.3 cos X) dB + 0.5 sin X dt on the same increments
    let mut x = 0.0f64;
    let mut worst = 0.0f64;
    for k in 0..=b.steps() {
        worst = worst.max((flow.observe(&phi, k)? - x.tanh()).abs());
        if k < b.steps() {
            x += (0.8 + 0.3 * x.cos()) * b.increment(k)[0] + 0.5 * x.sin() * b.dt();
        }
    }
    println!("X_1 = {:.6}, z_1 = {:.6}", x, flow.z(b.steps()).unwrap()[0]);
    println!("max_t |<tanh, Y_t> - tanh(X_t)| = {worst:.2e}");

    let mut csv = Vec::new();
    flow.write_csv(&mut csv, &[phi])?;
    println!("\nfirst rows of the trajectory CSV:");
    for line in String::from_utf8_lossy(&csv).lines().take(4) {
        println!("  {line}");
    }
    Ok(())
}
