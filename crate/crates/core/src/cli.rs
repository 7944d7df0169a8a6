//! Command-line driver.
//!
//! One subcommand per experiment kind. Each reads an optional TOML config, applies flag
//! overrides, validates everything, runs, and writes
//! `<out>/<name>/<timestamp>/{summary.json, series.csv, config.resolved}`.
//! The resolved config is itself a valid config file.

use std::ffi::OsString;
use std::fmt;
use std::fs;
use std::path::{Path, PathBuf};

use clap::{Args, Parser, Subcommand};
use serde::{Deserialize, Serialize};
use serde_json::{json, Value};

use crate::distribution::{CoefficientMatrix, ConvolvedFields, DistributionSpec, TemperedDistribution};
use crate::error::{Error, Result};
use crate::evolution::{
    default_panel, estimate_kernel, estimate_psi, evolution_residual, forward_residual, write_kernels_csv,
    EvolutionConfig,
};
use crate::flow::{conservation_check, evolve_flow, uniqueness_check, MassGrid};
use crate::hermite::{format_float, TruncationScheme, MAX_DIM};
use crate::monotonicity::estimate_constant;
use crate::sde::{BrownianPath, DEFAULT_THRESHOLDS};
use crate::sobolev::{derivative_boundedness_probe, dirac_norm_partial_sums, dirac_threshold};
use crate::verify::{tolerances, verify_suite, Level, DEFAULT_SEED};

pub const EXIT_OK: i32 = 0;
pub const EXIT_FAILURE: i32 = 1;
pub const EXIT_CONFIG: i32 = 2;
pub const EXIT_HYPOTHESIS: i32 = 3;
pub const EXIT_ACCEPTANCE: i32 = 4;

/// Experiment kinds, one per subcommand.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Kind {
    Flow,
    Evolve,
    Kernel,
    Forward,
    Monotonicity,
    SobolevProbe,
    Uniqueness,
}

impl fmt::Display for Kind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Kind::Flow => "flow",
            Kind::Evolve => "evolve",
            Kind::Kernel => "kernel",
            Kind::Forward => "forward",
            Kind::Monotonicity => "monotonicity",
            Kind::SobolevProbe => "sobolev-probe",
            Kind::Uniqueness => "uniqueness",
        })
    }
}

/// Config file schema. Every key is optional; unknown keys are rejected.
///
/// `sigma` lists the `d * d` entries of the coefficient matrix row by row, `b` the `d`
/// drift entries. `y`, `sigma` and `b` entries are [`DistributionSpec`] tables.
#[derive(Clone, Debug, Default, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ExperimentConfig {
    pub name: Option<String>,
    pub kind: Option<Kind>,
    pub d: Option<usize>,
    #[serde(rename = "N")]
    pub n: Option<usize>,
    pub p: Option<f64>,
    pub q: Option<f64>,
    pub dt: Option<f64>,
    #[serde(rename = "T")]
    pub horizon: Option<f64>,
    #[serde(rename = "M")]
    pub paths: Option<usize>,
    pub thresholds: Option<Vec<f64>>,
    pub seed: Option<u64>,
    pub t_grid: Option<Vec<f64>>,
    pub x0: Option<Vec<f64>>,
    pub alpha: Option<f64>,
    pub samples: Option<usize>,
    pub levels: Option<u32>,
    pub out: Option<PathBuf>,
    pub y: Option<DistributionSpec>,
    pub sigma: Option<Vec<DistributionSpec>>,
    pub b: Option<Vec<DistributionSpec>>,
}

impl ExperimentConfig {
    pub fn from_toml(text: &str) -> Result<Self> {
        toml::from_str(text).map_err(|e| Error::Config(e.to_string()))
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = fs::read_to_string(path).map_err(|e| Error::Config(format!("{}: {e}", path.display())))?;
        Self::from_toml(&text).map_err(|e| Error::Config(format!("{}: {e}", path.display())))
    }
}

/// Values given on the command line; they win over the config file.
#[derive(Clone, Debug, Default)]
pub struct Overrides {
    pub seed: Option<u64>,
    pub paths: Option<usize>,
    pub dt: Option<f64>,
    pub out: Option<PathBuf>,
}

/// A fully specified, validated experiment.
#[derive(Clone, Debug, Serialize)]
pub struct ResolvedConfig {
    pub name: String,
    pub kind: Kind,
    pub d: usize,
    #[serde(rename = "N")]
    pub n: usize,
    pub p: f64,
    pub q: f64,
    pub dt: f64,
    #[serde(rename = "T")]
    pub horizon: f64,
    #[serde(rename = "M")]
    pub paths: usize,
    pub thresholds: Vec<f64>,
    pub seed: u64,
    pub t_grid: Vec<f64>,
    pub x0: Vec<f64>,
    pub alpha: f64,
    pub samples: usize,
    pub levels: u32,
    pub out: PathBuf,
    pub y: DistributionSpec,
    pub sigma: Vec<DistributionSpec>,
    pub b: Vec<DistributionSpec>,
}

fn invalid(field: &str, message: impl fmt::Display) -> Error {
    Error::Config(format!("{field}: {message}"))
}

fn positive(field: &str, v: f64) -> Result<()> {
    if v.is_finite() && v > 0.0 {
        Ok(())
    } else {
        Err(invalid(field, format!("must be positive and finite, got {v}")))
    }
}

fn default_grid(horizon: f64, dt: f64) -> Vec<f64> {
    let steps = (horizon / dt).round() as usize;
    let mut ks: Vec<usize> = (0..=10).map(|i| (i * steps + 5) / 10).collect();
    ks.dedup();
    ks.into_iter().map(|k| (k as f64 * dt * 1e12).round() / 1e12).collect()
}

fn on_lattice(t: f64, dt: f64) -> bool {
    let k = (t / dt).round();
    (t - k * dt).abs() <= 1e-9 * dt.max(t.abs())
}

/// Fill in defaults, apply overrides and validate every field before anything runs.
pub fn resolve(config: ExperimentConfig, kind: Kind, overrides: &Overrides) -> Result<ResolvedConfig> {
    if let Some(k) = config.kind {
        if k != kind {
            return Err(invalid("kind", format!("config says {k} but the subcommand is {kind}")));
        }
    }
    let d = config.d.unwrap_or(1);
    if d == 0 || d > MAX_DIM {
        return Err(invalid("d", format!("must be between 1 and {MAX_DIM}, got {d}")));
    }
    let n = config.n.unwrap_or(12);
    let p = config.p.unwrap_or(1.0);
    let q = config.q.unwrap_or(1.0);
    if !p.is_finite() {
        return Err(invalid("p", "must be finite"));
    }
    if !q.is_finite() {
        return Err(invalid("q", "must be finite"));
    }
    if kind == Kind::Forward && q <= d as f64 / 4.0 {
        return Err(invalid("q", format!("q must exceed d/4 (q = {q}, d = {d})")));
    }
    let dt = overrides.dt.or(config.dt).unwrap_or(0.01);
    positive("dt", dt)?;
    let horizon = config.horizon.unwrap_or(1.0);
    positive("T", horizon)?;
    if !on_lattice(horizon, dt) {
        return Err(invalid("T", format!("must be a multiple of dt = {dt}, got {horizon}")));
    }
    let default_paths = match kind {
        Kind::Flow | Kind::Uniqueness => 1,
        _ => 2000,
    };
    let paths = overrides.paths.or(config.paths).unwrap_or(default_paths);
    let min_paths = if matches!(kind, Kind::Evolve | Kind::Kernel | Kind::Forward) { 2 } else { 1 };
    if paths < min_paths {
        return Err(invalid("M", format!("needs at least {min_paths} paths, got {paths}")));
    }
    let thresholds = config.thresholds.unwrap_or_else(|| DEFAULT_THRESHOLDS.to_vec());
    if thresholds.is_empty()
        || thresholds.iter().any(|r| !(r.is_finite() && *r > 0.0))
        || thresholds.windows(2).any(|w| w[1] <= w[0])
    {
        return Err(invalid("thresholds", "must be a non-empty increasing list of positive radii"));
    }
    let seed = overrides.seed.or(config.seed).unwrap_or(DEFAULT_SEED);
    let t_grid = config.t_grid.unwrap_or_else(|| default_grid(horizon, dt));
    if t_grid.is_empty() {
        return Err(invalid("t_grid", "must not be empty"));
    }
    for (i, &t) in t_grid.iter().enumerate() {
        if !(0.0..=horizon * (1.0 + 1e-12)).contains(&t) || !on_lattice(t, dt) {
            return Err(invalid("t_grid", format!("entry {i} = {t} must be a multiple of dt in [0, T]")));
        }
        if i > 0 && t <= t_grid[i - 1] {
            return Err(invalid("t_grid", "must be strictly increasing"));
        }
    }
    let x0 = config.x0.unwrap_or_else(|| vec![0.0; d]);
    if x0.len() != d || x0.iter().any(|v| !v.is_finite()) {
        return Err(invalid("x0", format!("must hold {d} finite numbers")));
    }
    let alpha = config.alpha.unwrap_or(1.0);
    positive("alpha", alpha)?;
    let samples = config.samples.unwrap_or(200);
    if kind == Kind::Monotonicity && samples < 100 {
        return Err(invalid("samples", format!("monotonicity needs at least 100, got {samples}")));
    }
    if samples == 0 {
        return Err(invalid("samples", "must be positive"));
    }
    let levels = config.levels.unwrap_or(3);
    if levels > 8 {
        return Err(invalid("levels", format!("at most 8 refinements, got {levels}")));
    }
    let out = overrides.out.clone().or(config.out).unwrap_or_else(|| PathBuf::from("out"));
    let name = config.name.unwrap_or_else(|| kind.to_string());
    if name.is_empty() || name.contains(['/', '\\']) || name == "." || name == ".." {
        return Err(invalid("name", format!("{name:?} is not a valid directory name")));
    }
    let y = config.y.unwrap_or(DistributionSpec::Gaussian { mean: vec![0.0; d], cov: None, mass: 1.0 });
    let sigma = config.sigma.unwrap_or_else(|| {
        (0..d * d).map(|e| DistributionSpec::Constant { value: if e % (d + 1) == 0 { 1.0 } else { 0.0 } }).collect()
    });
    let b = config.b.unwrap_or_else(|| vec![DistributionSpec::Constant { value: 0.0 }; d]);
    if sigma.len() != d * d {
        return Err(invalid("sigma", format!("needs d*d = {} entries, got {}", d * d, sigma.len())));
    }
    if b.len() != d {
        return Err(invalid("b", format!("needs d = {d} entries, got {}", b.len())));
    }
    let resolved = ResolvedConfig {
        name,
        kind,
        d,
        n,
        p,
        q,
        dt,
        horizon,
        paths,
        thresholds,
        seed,
        t_grid,
        x0,
        alpha,
        samples,
        levels,
        out,
        y,
        sigma,
        b,
    };
    let problem = resolved.problem()?;
    if !matches!(kind, Kind::Monotonicity | Kind::SobolevProbe) {
        let fields =
            ConvolvedFields::new(problem.coeffs.clone(), problem.y.clone()).map_err(|e| invalid("sigma/b", e))?;
        let mut s = vec![0.0; d * d];
        let mut drift = vec![0.0; d];
        fields.eval(&resolved.x0, &mut s, &mut drift).map_err(|e| invalid("sigma/b", e))?;
    }
    TruncationScheme::new(d, n).map_err(|e| invalid("N", e))?;
    Ok(resolved)
}

/// The distributions of a resolved config.
pub struct Problem {
    pub y: TemperedDistribution,
    pub coeffs: CoefficientMatrix,
}

impl ResolvedConfig {
    pub fn problem(&self) -> Result<Problem> {
        let d = self.d;
        let y = self.y.build(d).map_err(|e| invalid("y", e))?;
        let build = |field: &str, specs: &[DistributionSpec]| {
            specs
                .iter()
                .enumerate()
                .map(|(i, s)| s.build(d).map_err(|e| invalid(&format!("{field}[{i}]"), e)))
                .collect::<Result<Vec<_>>>()
        };
        let coeffs = CoefficientMatrix::new(build("sigma", &self.sigma)?, build("b", &self.b)?)
            .map_err(|e| invalid("sigma/b", e))?;
        Ok(Problem { y, coeffs })
    }

    pub fn to_toml(&self) -> Result<String> {
        toml::to_string(self).map_err(|e| Error::Config(format!("cannot serialize resolved config: {e}")))
    }

    fn evolution_config(&self) -> EvolutionConfig {
        EvolutionConfig {
            degree: self.n,
            index: self.p,
            dt: self.dt,
            thresholds: self.thresholds.clone(),
            field_bound: None,
        }
    }
}

/// What a run produces before it touches the disk.
#[derive(Clone, Debug)]
pub struct Artifacts {
    pub summary: Value,
    pub series: Vec<u8>,
}

/// Run a resolved experiment. Hypothesis violations come back as [`Error::Hypothesis`].
pub fn run(config: &ResolvedConfig) -> Result<Artifacts> {
    let problem = config.problem()?;
    let (result, series) = match config.kind {
        Kind::Flow => run_flow(config, &problem)?,
        Kind::Evolve => run_evolve(config, &problem)?,
        Kind::Kernel => run_kernel(config, &problem)?,
        Kind::Forward => run_forward(config, &problem)?,
        Kind::Monotonicity => run_monotonicity(config)?,
        Kind::SobolevProbe => run_probe(config)?,
        Kind::Uniqueness => run_uniqueness(config, &problem)?,
    };
    let summary = json!({
        "kind": config.kind.to_string(),
        "name": config.name,
        "seed": config.seed,
        "config": serde_json::to_value(config)?,
        "result": result,
    });
    Ok(Artifacts { summary, series })
}

fn run_flow(config: &ResolvedConfig, problem: &Problem) -> Result<(Value, Vec<u8>)> {
    let d = config.d;
    let mut w = csv::Writer::from_writer(Vec::new());
    let mut header = vec!["path".to_string(), "t".to_string()];
    header.extend((1..=d).map(|a| format!("z_{a}")));
    header.push("alive".into());
    w.write_record(&header)?;
    let conservable = d <= 2 && problem.y.mass().is_some() && !matches!(problem.y, TemperedDistribution::Dirac { .. });
    let center = match &problem.y {
        TemperedDistribution::Gaussian(g) => g.mean().to_vec(),
        _ => vec![0.0; d],
    };
    let mut rows = Vec::with_capacity(config.paths);
    let mut max_displacement = 0.0f64;
    let mut max_mass_error = 0.0f64;
    for path in 0..config.paths as u64 {
        let brownian = BrownianPath::sample(config.seed, path, d, config.horizon, config.dt)?;
        let flow = evolve_flow(&problem.y, &problem.coeffs, &brownian, &config.thresholds)?;
        let mut displacement = 0.0f64;
        let mut exit_time = None;
        for (k, t) in flow.times().iter().enumerate() {
            let mut row = vec![path.to_string(), format_float(*t)];
            match flow.z(k) {
                Some(z) => {
                    displacement = displacement.max(z.iter().map(|v| v * v).sum::<f64>().sqrt());
                    row.extend(z.iter().map(|v| format_float(*v)));
                    row.push("1".into());
                }
                None => {
                    exit_time.get_or_insert(*t);
                    row.extend((0..d).map(|_| "inf".to_string()));
                    row.push("0".into());
                }
            }
            w.write_record(&row)?;
        }
        max_displacement = max_displacement.max(displacement);
        let conservation = if conservable {
            let stride = (flow.times().len() / 10).max(1);
            let report = conservation_check(&flow, MassGrid::default(), &center, stride)?;
            max_mass_error = max_mass_error.max(report.max_error);
            serde_json::to_value(report)?
        } else {
            Value::Null
        };
        let last = flow.times().len() - 1;
        rows.push(json!({
            "path": path,
            "alive": flow.z(last).is_some(),
            "final_z": flow.z(last).map(<[f64]>::to_vec),
            "exit_time": exit_time,
            "max_displacement": displacement,
            "conservation": conservation,
        }));
    }
    let conservation = if conservable {
        json!({ "max_error": max_mass_error, "tolerance": tolerances::MASS_DRIFT, "pass": max_mass_error <= tolerances::MASS_DRIFT })
    } else {
        json!({ "skipped": "needs a function-like y with known mass and d <= 2" })
    };
    let summary = json!({ "max_displacement": max_displacement, "conservation": conservation, "paths": rows });
    Ok((summary, w.into_inner().map_err(|e| Error::Io(e.into_error()))?))
}

fn run_evolve(config: &ResolvedConfig, problem: &Problem) -> Result<(Value, Vec<u8>)> {
    let report = estimate_psi(
        &problem.y,
        &problem.coeffs,
        &config.t_grid,
        config.paths,
        config.seed,
        &config.evolution_config(),
    )?;
    let report = if config.t_grid.len() >= 3 {
        let table = evolution_residual(&report, &problem.y, &problem.coeffs)?;
        report.with_residual(table)
    } else {
        report
    };
    let mut series = Vec::new();
    report.write_csv(&mut series)?;
    Ok((serde_json::to_value(&report)?, series))
}

fn run_kernel(config: &ResolvedConfig, problem: &Problem) -> Result<(Value, Vec<u8>)> {
    let kernels = estimate_kernel(
        &config.x0,
        &problem.y,
        &problem.coeffs,
        &config.t_grid,
        config.paths,
        config.seed,
        &config.evolution_config(),
    )?;
    let rows: Vec<Value> = kernels
        .iter()
        .map(|k| {
            json!({
                "t": k.t,
                "alive_fraction": k.alive_fraction(),
                "cemetery_mass": k.cemetery_mass(),
                "mean": k.mean(),
                "variance": k.variance(),
            })
        })
        .collect();
    let mut series = Vec::new();
    write_kernels_csv(&kernels, &mut series)?;
    Ok((json!({ "kernels": rows }), series))
}

fn run_forward(config: &ResolvedConfig, problem: &Problem) -> Result<(Value, Vec<u8>)> {
    let panel = default_panel(config.d)?;
    let report = forward_residual(
        &config.x0,
        &problem.y,
        &problem.coeffs,
        &config.t_grid,
        config.paths,
        config.q,
        config.seed,
        &config.evolution_config(),
        &panel,
    )?;
    let mut w = csv::Writer::from_writer(Vec::new());
    w.write_record(["label", "t", "residual", "mc_error", "dt_error", "budget", "within_budget"])?;
    for r in &report.panel {
        w.write_record([
            r.label.clone(),
            format_float(r.t),
            format_float(r.residual),
            format_float(r.mc_error),
            format_float(r.dt_error),
            format_float(r.budget),
            r.within_budget.to_string(),
        ])?;
    }
    Ok((serde_json::to_value(&report)?, w.into_inner().map_err(|e| Error::Io(e.into_error()))?))
}

fn run_monotonicity(config: &ResolvedConfig) -> Result<(Value, Vec<u8>)> {
    let scheme = TruncationScheme::new(config.d, config.n)?;
    let estimate = estimate_constant(config.alpha, config.p, config.d, config.samples, scheme, config.seed)?;
    let mut w = csv::Writer::from_writer(Vec::new());
    w.write_record(["N", "C_hat"])?;
    for (n, c) in &estimate.saturation_curve {
        w.write_record([n.to_string(), format_float(*c)])?;
    }
    Ok((serde_json::to_value(&estimate)?, w.into_inner().map_err(|e| Error::Io(e.into_error()))?))
}

fn run_probe(config: &ResolvedConfig) -> Result<(Value, Vec<u8>)> {
    let scheme = TruncationScheme::new(config.d, config.n)?;
    let probes = (0..config.d)
        .map(|axis| derivative_boundedness_probe(config.p, config.samples, scheme, axis, config.seed))
        .collect::<Result<Vec<_>>>()?;
    let threshold = dirac_threshold(config.q, tolerances::SLOPE_MARGIN, tolerances::DIRAC_TAIL);
    let sums = dirac_norm_partial_sums(config.q, config.n);
    let mut w = csv::Writer::from_writer(Vec::new());
    w.write_record(["n", "dirac_partial_sum"])?;
    for (i, s) in sums.iter().enumerate() {
        w.write_record([i.to_string(), format_float(*s)])?;
    }
    let summary = json!({ "derivative_probes": probes, "dirac_threshold_1d": threshold });
    Ok((summary, w.into_inner().map_err(|e| Error::Io(e.into_error()))?))
}

fn run_uniqueness(config: &ResolvedConfig, problem: &Problem) -> Result<(Value, Vec<u8>)> {
    let mut w = csv::Writer::from_writer(Vec::new());
    w.write_record(["path", "dt", "max_distance"])?;
    let mut tables = Vec::with_capacity(config.paths);
    for path in 0..config.paths as u64 {
        let brownian = BrownianPath::sample(config.seed, path, config.d, config.horizon, config.dt)?;
        let table = uniqueness_check(&problem.y, &problem.coeffs, &brownian, config.levels, config.n, config.p)?;
        for (dt, dist) in table.dts.iter().zip(&table.max_distance) {
            w.write_record([path.to_string(), format_float(*dt), format_float(*dist)])?;
        }
        tables.push(table);
    }
    let mean_slope = tables.iter().map(|t| t.slope).sum::<f64>() / tables.len() as f64;
    let summary = json!({ "index": config.p - 1.0, "mean_slope": mean_slope, "tables": tables });
    Ok((summary, w.into_inner().map_err(|e| Error::Io(e.into_error()))?))
}

fn fresh_dir(base: &Path) -> Result<PathBuf> {
    let stamp = chrono::Utc::now().format("%Y%m%dT%H%M%S%.3fZ").to_string();
    let mut dir = base.join(&stamp);
    let mut i = 1;
    while dir.exists() {
        dir = base.join(format!("{stamp}-{i}"));
        i += 1;
    }
    fs::create_dir_all(&dir)?;
    Ok(dir)
}

/// Write `summary.json`, `series.csv` and `config.resolved` under a new timestamped directory.
pub fn write_artifacts(out: &Path, name: &str, artifacts: &Artifacts, resolved: &str) -> Result<PathBuf> {
    let dir = fresh_dir(&out.join(name))?;
    let mut summary = serde_json::to_string_pretty(&artifacts.summary)?;
    summary.push('\n');
    fs::write(dir.join("summary.json"), summary)?;
    fs::write(dir.join("series.csv"), &artifacts.series)?;
    fs::write(dir.join("config.resolved"), resolved)?;
    Ok(dir)
}

#[derive(Parser, Debug)]
#[command(
    name = "sprime",
    version,
    about = "Simulate and verify translation-invariant diffusions of tempered distributions"
)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand, Debug)]
enum Command {
    /// Simulate `z_t(y)` and track `tau_{z_t} y`.
    Flow(RunArgs),
    /// Estimate `psi(t, y) = E Y_t(y)` and the residual of its evolution equation.
    Evolve(RunArgs),
    /// Empirical transition kernels of `X(x0, y, t)`.
    Kernel(RunArgs),
    /// Residual of the forward equation for the kernel.
    Forward(RunArgs),
    /// Estimate the monotonicity constant for constant coefficients.
    Monotonicity(RunArgs),
    /// Derivative boundedness probe and the `delta_0` threshold.
    #[command(name = "sobolev-probe")]
    SobolevProbe(RunArgs),
    /// Compare the representation with a direct coefficient solver on one noise.
    Uniqueness(RunArgs),
    /// Run the acceptance battery.
    Verify(VerifyArgs),
}

#[derive(Args, Debug)]
struct RunArgs {
    /// TOML config file.
    #[arg(long)]
    config: Option<PathBuf>,
    #[arg(long)]
    seed: Option<u64>,
    /// Number of Monte Carlo paths `M`.
    #[arg(long)]
    paths: Option<usize>,
    #[arg(long)]
    dt: Option<f64>,
    /// Output root directory.
    #[arg(long)]
    out: Option<PathBuf>,
    /// Worker threads; results do not depend on it.
    #[arg(long)]
    workers: Option<usize>,
}

#[derive(Args, Debug)]
struct VerifyArgs {
    #[arg(long, default_value = "quick")]
    level: Level,
    #[arg(long, default_value_t = DEFAULT_SEED)]
    seed: u64,
    #[arg(long, default_value = "out")]
    out: PathBuf,
    #[arg(long)]
    workers: Option<usize>,
}

fn exit_code(e: &Error) -> i32 {
    match e {
        Error::Config(_) => EXIT_CONFIG,
        Error::Hypothesis(_) => EXIT_HYPOTHESIS,
        _ => EXIT_FAILURE,
    }
}

fn with_workers<T: Send>(workers: Option<usize>, job: impl FnOnce() -> T + Send) -> Result<T> {
    match workers {
        None => Ok(job()),
        Some(0) => Err(invalid("workers", "must be positive")),
        Some(n) => {
            let pool = rayon::ThreadPoolBuilder::new()
                .num_threads(n)
                .build()
                .map_err(|e| Error::Config(format!("workers: {e}")))?;
            Ok(pool.install(job))
        }
    }
}

fn experiment(kind: Kind, args: RunArgs) -> Result<PathBuf> {
    let config = match &args.config {
        Some(path) => ExperimentConfig::load(path)?,
        None => ExperimentConfig::default(),
    };
    let overrides = Overrides { seed: args.seed, paths: args.paths, dt: args.dt, out: args.out };
    let resolved = resolve(config, kind, &overrides)?;
    let text = resolved.to_toml()?;
    let artifacts = with_workers(args.workers, || run(&resolved))??;
    write_artifacts(&resolved.out, &resolved.name, &artifacts, &text)
}

fn verify(args: VerifyArgs) -> Result<(PathBuf, bool)> {
    let report = with_workers(args.workers, || verify_suite(args.level, args.seed))?;
    for c in &report.criteria {
        println!("{}", c.line());
    }
    let mut w = csv::Writer::from_writer(Vec::new());
    w.write_record(["id", "name", "passed", "observed", "threshold"])?;
    for c in &report.criteria {
        w.write_record([
            c.id.to_string(),
            c.name.clone(),
            c.passed.to_string(),
            c.observed.to_string(),
            c.threshold.to_string(),
        ])?;
    }
    let artifacts = Artifacts {
        summary: serde_json::to_value(&report)?,
        series: w.into_inner().map_err(|e| Error::Io(e.into_error()))?,
    };
    let resolved = format!("level = \"{}\"\nseed = {}\n", args.level, args.seed);
    let dir = write_artifacts(&args.out, "verify", &artifacts, &resolved)?;
    Ok((dir, report.passed))
}

/// Entry point for the binary; returns the process exit code.
pub fn main<I, T>(args: I) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<OsString> + Clone,
{
    let cli = match Cli::try_parse_from(args) {
        Ok(cli) => cli,
        Err(e) => {
            let code = if e.use_stderr() { EXIT_CONFIG } else { EXIT_OK };
            let _ = e.print();
            return code;
        }
    };
    let kind = match cli.command {
        Command::Flow(a) => (Kind::Flow, a),
        Command::Evolve(a) => (Kind::Evolve, a),
        Command::Kernel(a) => (Kind::Kernel, a),
        Command::Forward(a) => (Kind::Forward, a),
        Command::Monotonicity(a) => (Kind::Monotonicity, a),
        Command::SobolevProbe(a) => (Kind::SobolevProbe, a),
        Command::Uniqueness(a) => (Kind::Uniqueness, a),
        Command::Verify(a) => {
            return match verify(a) {
                Ok((dir, passed)) => {
                    println!("{}", dir.display());
                    if passed {
                        EXIT_OK
                    } else {
                        eprintln!("acceptance failure");
                        EXIT_ACCEPTANCE
                    }
                }
                Err(e) => {
                    eprintln!("error: {e}");
                    exit_code(&e)
                }
            };
        }
    };
    match experiment(kind.0, kind.1) {
        Ok(dir) => {
            println!("{}", dir.display());
            EXIT_OK
        }
        Err(e) => {
            let label = match &e {
                Error::Config(_) => "config error",
                Error::Hypothesis(_) => "hypothesis violation",
                _ => "error",
            };
            eprintln!("{label}: {e}");
            exit_code(&e)
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn resolved(kind: Kind, text: &str) -> Result<ResolvedConfig> {
        resolve(ExperimentConfig::from_toml(text)?, kind, &Overrides::default())
    }

    #[test]
    fn unknown_keys_are_rejected() {
        let e = ExperimentConfig::from_toml("dx = 0.1").unwrap_err();
        assert!(matches!(e, Error::Config(m) if m.contains("dx")));
    }

    #[test]
    fn resolved_config_round_trips() {
        let r = resolved(Kind::Evolve, "d = 2\nN = 6\n[y]\nvariant = \"dirac\"\nlocation = [0.5, 0.0]\n").unwrap();
        let text = r.to_toml().unwrap();
        let again = resolved(Kind::Evolve, &text).unwrap();
        assert_eq!(again.to_toml().unwrap(), text);
        assert_eq!(again.t_grid.len(), 11);
    }

    #[test]
    fn field_level_diagnostics() {
        let cases = [
            (Kind::Flow, "dt = -1.0", "dt"),
            (Kind::Flow, "T = 1.005\ndt = 0.01", "T"),
            (Kind::Evolve, "t_grid = [0.0, 0.015]", "t_grid"),
            (Kind::Flow, "x0 = [0.0, 1.0]", "x0"),
            (Kind::Flow, "b = []", "b"),
            (Kind::Flow, "d = 4", "d"),
            (Kind::Monotonicity, "samples = 10", "samples"),
            (Kind::Forward, "q = 0.2", "q must exceed d/4"),
            (Kind::Flow, "kind = \"evolve\"", "kind"),
            (Kind::Flow, "[y]\nvariant = \"dirac\"\nlocation = [0.0, 0.0]", "y"),
        ];
        for (kind, text, needle) in cases {
            match resolved(kind, text) {
                Err(Error::Config(m)) => assert!(m.contains(needle), "{text}: {m}"),
                other => panic!("{text}: {other:?}"),
            }
        }
    }

    #[test]
    fn default_grid_lands_on_the_step_lattice() {
        let g = default_grid(0.25, 0.01);
        assert_eq!(g.first(), Some(&0.0));
        assert!((g.last().unwrap() - 0.25).abs() < 1e-12);
        assert!(g.iter().all(|t| on_lattice(*t, 0.01)));
    }
}
