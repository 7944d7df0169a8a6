//! Drive an experiment from a TOML config through the library, without the binary.
//!
//! `cargo run --release --example config_run -- examples/configs/evolve_heat.toml`

use sprime::cli::{resolve, run, ExperimentConfig, Kind, Overrides};

fn main() -> sprime::Result<()> {
    let path = std::env::args()
        .nth(1)
        .unwrap_or_else(|| concat!(env!("CARGO_MANIFEST_DIR"), "/examples/configs/evolve_heat.toml").into());
    let config = ExperimentConfig::load(path.as_ref())?;
    let kind = config.kind.unwrap_or(Kind::Evolve);
    let resolved = resolve(config, kind, &Overrides { paths: Some(500), ..Overrides::default() })?;
    println!("resolved config:\n{}", resolved.to_toml()?);
    let artifacts = run(&resolved)?;
    let residual = &artifacts.summary["result"]["residual"];
    println!("residual within budget: {}", residual["within_budget"]);
    println!("series.csv: {} bytes", artifacts.series.len());
    Ok(())
}
