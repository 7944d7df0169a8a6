//! Norms on the Hermite-Sobolev scale, the duality pairing and the derivative probe.
//!
//! `cargo run --release --example sobolev_scale`

use sprime::hermite::{HermiteCoeffs, TruncationScheme};
use sprime::sobolev::{derivative_boundedness_probe, duality_pair, sobolev_norm, SobolevElement};

fn main() -> sprime::Result<()> {
    let scheme = TruncationScheme::new(1, 20)?;
    let c = HermiteCoeffs::from_values(scheme, (0..21).map(|k| (-1f64).powi(k) / (1.0 + k as f64).powi(2)).collect())?;
    println!("{:>6} {:>14}", "p", "||c||_p");
    for p in [-2.0, -1.0, -0.5, 0.0, 0.5, 1.0, 2.0] {
        println!("{p:>6.1} {:>14.6e}", sobolev_norm(&c, p));
    }

    let phi =
        HermiteCoeffs::from_values(scheme, (0..21).map(|k| (k as f64).cos() / (1.0 + k as f64).powi(3)).collect())?;
    let pairing = duality_pair(&SobolevElement::new(c.clone(), -1.0), &SobolevElement::new(phi, 1.0))?;
    println!("\n<c, phi> = {:.6e}, |<c, phi>| <= {:.6e}, tail {:.2e}", pairing.value, pairing.bound, pairing.tail);

    println!("\nd/dx : S_p -> S_(p-1/2), largest ratio on the truncation");
    for p in [0.0, 1.0, 2.0] {
        let probe = derivative_boundedness_probe(p, 200, TruncationScheme::new(1, 40)?, 0, 7)?;
        println!("  p = {p}: max ratio {:.4} (argmax degree {})", probe.max_ratio, probe.argmax_degree);
    }
    Ok(())
}
