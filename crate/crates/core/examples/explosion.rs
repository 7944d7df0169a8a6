//! Blow-up of `dX = X^2 dt` from `X_0 = 1`, where the exact explosion time is 1.
//!
//! `cargo run --release --example explosion`

use sprime::sde::{explosion_time_richardson, scalar_fields, simulate_path, BrownianPath, DEFAULT_THRESHOLDS};

fn main() -> sprime::Result<()> {
    let fields = scalar_fields(|_| 0.0, |x| x * x);
    for dt in [1e-2, 1e-3, 1e-4] {
        let b = BrownianPath::sample(1, 0, 1, 2.0, dt)?;
        let path = simulate_path(&fields, &[1.0], &b, &DEFAULT_THRESHOLDS)?;
        let richardson = explosion_time_richardson(&fields, &[1.0], &b, &DEFAULT_THRESHOLDS)?;
        println!(
            "dt = {dt:.0e}: grid eta {:?}, interval {:?}, extrapolated {:?}",
            path.eta, path.eta_interval, richardson
        );
        println!("    hitting times of 10, 100, 1000, 10000: {:?}", path.hitting_times);
    }
    Ok(())
}
