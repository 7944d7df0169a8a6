//! Markov consistency `T_{s+t} f = T_t (T_s f)` by nested Monte Carlo.
//!
//! `cargo run --release --example semigroup`

use sprime::distribution::TemperedDistribution;
use sprime::evolution::{semigroup_estimate, EvolutionConfig, Observable};
use sprime::verify::smooth_coefficients;

fn main() -> sprime::Result<()> {
    let y = TemperedDistribution::gaussian(vec![0.0], 1.0, 1.0)?;
    let f = Observable::Pairing { label: "gauss".into(), phi: TemperedDistribution::gaussian(vec![0.5], 0.5, 1.0)? };
    let config = EvolutionConfig::new(8, 0.01);
    let r = semigroup_estimate(&f, &y, &smooth_coefficients(), 0.25, 0.25, 1000, 40, 8, &config)?;
    println!("single stage   {:.5} +- {:.5}", r.single, r.single_error);
    println!("two stage      {:.5} +- {:.5}", r.two_stage, r.two_stage_error);
    println!("difference     {:.2e} (3 sigma = {:.2e}): agree {}", r.difference, 3.0 * r.combined_error, r.agree);
    Ok(())
}
