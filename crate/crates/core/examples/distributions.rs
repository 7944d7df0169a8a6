//! The distribution variants, their translations and pairings, and coefficient fields.
//!
//! `cargo run --release --example distributions`

use sprime::distribution::{
    coefficient_field, pair, projection, translate, DistributionSpec, SmoothKind, TemperedDistribution,
};
use sprime::hermite::TruncationScheme;
use sprime::sobolev::sobolev_norm;

fn main() -> sprime::Result<()> {
    let dirac = TemperedDistribution::dirac(vec![0.0]);
    let gauss = TemperedDistribution::gaussian(vec![0.5], 0.4, 1.0)?;
    let wave = TemperedDistribution::smooth(
        SmoothKind::Cosine { offset: 0.0, amplitude: 1.0, frequency: vec![2.0], phase: 0.0 },
        1,
    )?;

    println!("<delta_0, tau_x wave> = wave(-x): {:.6} vs {:.6}", pair(&dirac, &wave, &[0.3])?, (2.0 * -0.3f64).cos());
    println!("<wave, tau_x gauss> = {:.6}", pair(&wave, &gauss, &[1.0])?);
    let moved = translate(&gauss, &[2.0])?;
    println!("tau_2 gauss at 2.5 = {:.6} (flagged: {})", moved.value.eval(&[2.5]).unwrap(), moved.is_flagged(1e-8));

    let scheme = TruncationScheme::new(1, 30)?;
    for x in [0.0, 2.0, 4.0] {
        let c = projection(&dirac, &[x], scheme)?;
        println!("||tau_{x} delta_0||_(-1), N = 30: {:.5}", sobolev_norm(&c, -1.0));
    }

    println!("\nsigma_bar(x) = <wave, tau_x gauss>:");
    for x in [-1.0, 0.0, 1.0] {
        println!("  x = {x:>4}: {:.6}", coefficient_field(&wave, &gauss, &[x])?);
    }

    let spec: DistributionSpec = serde_json::from_str(r#"{"variant": "gaussian", "mean": [0.0, 1.0], "mass": 2.0}"#)?;
    let built = spec.build(2)?;
    println!("\nfrom a spec: {} with mass {:?}", built.variant_name(), built.mass());
    Ok(())
}
