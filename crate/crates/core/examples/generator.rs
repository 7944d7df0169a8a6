//! The small-time quotient `(E <phi, Y_t> - <phi, y>) / t` against `<phi, L(y)>`.
//!
//! `cargo run --release --example generator`

use sprime::distribution::TemperedDistribution;
use sprime::evolution::{generator_special_case, EvolutionConfig};
use sprime::hermite::{HermiteCoeffs, MultiIndex, TruncationScheme};
use sprime::verify::smooth_coefficients;

fn main() -> sprime::Result<()> {
    let y = TemperedDistribution::gaussian(vec![0.2], 0.6, 1.0)?;
    let phi = HermiteCoeffs::unit(TruncationScheme::new(1, 2)?, &MultiIndex::new(vec![2]))?;
    let times = [0.01, 0.02, 0.03, 0.04, 0.05];
    let r = generator_special_case(&y, &smooth_coefficients(), &phi, &times, 2000, 6, &EvolutionConfig::new(4, 0.001))?;
    for ((t, q), e) in r.times.iter().zip(&r.quotients).zip(&r.quotient_errors) {
        println!("t = {t:.2}: quotient {q:.5} +- {e:.5}");
    }
    println!("limit {:.5} +- {:.5}", r.limit, r.limit_error);
    println!(
        "<phi, L(y)> = {:.5} (diffusion {:.5}, drift {:.5}); from apply_l {:?}",
        r.analytic, r.diffusion_part, r.drift_part, r.apply_l_value
    );
    println!("agree: {}", r.agree);
    Ok(())
}
