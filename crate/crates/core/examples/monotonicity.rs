//! The monotonicity constant for constant coefficients at several Sobolev indices.
//!
//! `cargo run --release --example monotonicity`

use sprime::hermite::TruncationScheme;
use sprime::monotonicity::estimate_constant;

fn main() -> sprime::Result<()> {
    for p in [0.0, 0.5, 1.0, 1.5, 2.0] {
        let est = estimate_constant(1.0, p, 1, 200, TruncationScheme::new(1, 32)?, 1)?;
        println!(
            "p = {p}: C_hat = {:.6e}, argmax degree {}, saturation {:?}",
            est.c_hat, est.argmax_phi_degree, est.saturation_curve
        );
    }
    Ok(())
}
