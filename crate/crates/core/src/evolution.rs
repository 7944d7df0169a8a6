//! Empirical transition kernels and the equations they satisfy.
//!
//! Everything here is a Monte Carlo estimate over the driving diffusion
//! `dX = sigma_bar(X) dB + b_bar(X) dt`. Kernels are plain sample clouds with equal
//! weights; the cemetery is stored as `+inf` and contributes zero to every average.
//! Estimates come with standard errors, and time-discretization errors are estimated
//! by rerunning on the pairwise-coarsened Brownian path or on a halved time grid.

use std::io::Write;
use std::sync::Arc;

use rayon::prelude::*;
use serde::Serialize;

use crate::distribution::{pair, projection, translate, CoefficientMatrix, ConvolvedFields, TemperedDistribution};
use crate::error::{Error, Result};
use crate::flow::FlowState;
use crate::hermite::{
    derivative_coeffs, format_float, hermite_functions, hermite_transform, HermiteCoeffs, MultiIndex, QuadratureRule,
    TruncationScheme,
};
use crate::rng::{derive_seed, tags};
use crate::sde::{simulate_path, BrownianPath, Fields, PathResult, DEFAULT_THRESHOLDS};
use crate::sobolev::{sobolev_norm, SobolevElement};

/// Numerical settings shared by the estimators of this module.
#[derive(Clone, Debug, Serialize)]
pub struct EvolutionConfig {
    /// Total degree `N` of coefficient outputs.
    pub degree: usize,
    /// Sobolev index `p` of `psi`; residuals are measured at `p - 1`.
    pub index: f64,
    pub dt: f64,
    pub thresholds: Vec<f64>,
    /// Declared bound on `|sigma_bar|`, `|b_bar|`; derived from the data when `None`.
    pub field_bound: Option<f64>,
}

impl EvolutionConfig {
    pub fn new(degree: usize, dt: f64) -> Self {
        EvolutionConfig { degree, index: 0.0, dt, thresholds: DEFAULT_THRESHOLDS.to_vec(), field_bound: None }
    }

    fn scheme(&self, dim: usize) -> Result<TruncationScheme> {
        TruncationScheme::new(dim, self.degree)
    }
}

/// A sample cloud approximating `P_bar(x, y, t, .)`; every sample carries weight `1/M`.
#[derive(Clone, Debug, PartialEq)]
pub struct EmpiricalKernel {
    pub t: f64,
    dim: usize,
    samples: Vec<f64>,
    alive: usize,
}

impl EmpiricalKernel {
    /// Sample-major coordinates; a sample with a non-finite coordinate is in the cemetery.
    pub fn from_samples(t: f64, dim: usize, mut samples: Vec<f64>) -> Result<Self> {
        if dim == 0 || samples.is_empty() || !samples.len().is_multiple_of(dim) {
            return Err(Error::InvalidInput("kernel samples must fill whole points".into()));
        }
        let mut alive = 0;
        for chunk in samples.chunks_mut(dim) {
            if chunk.iter().all(|v| v.is_finite()) {
                alive += 1;
            } else {
                chunk.fill(f64::INFINITY);
            }
        }
        Ok(EmpiricalKernel { t, dim, samples, alive })
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn len(&self) -> usize {
        self.samples.len() / self.dim
    }

    pub fn is_empty(&self) -> bool {
        self.samples.is_empty()
    }

    /// Sample `m`, `None` in the cemetery.
    pub fn sample(&self, m: usize) -> Option<&[f64]> {
        let x = &self.samples[m * self.dim..(m + 1) * self.dim];
        x[0].is_finite().then_some(x)
    }

    pub fn weight(&self) -> f64 {
        1.0 / self.len() as f64
    }

    /// Weights as the exact fraction `numerator / denominator` each.
    pub fn weight_fraction(&self) -> (usize, usize) {
        (1, self.len())
    }

    pub fn alive_count(&self) -> usize {
        self.alive
    }

    pub fn alive_fraction(&self) -> f64 {
        self.alive as f64 / self.len() as f64
    }

    pub fn cemetery_mass(&self) -> f64 {
        (self.len() - self.alive) as f64 / self.len() as f64
    }

    /// Mean of the alive samples.
    pub fn mean(&self) -> Vec<f64> {
        let mut m = vec![0.0; self.dim];
        for x in (0..self.len()).filter_map(|k| self.sample(k)) {
            m.iter_mut().zip(x).for_each(|(a, b)| *a += b);
        }
        m.iter_mut().for_each(|a| *a /= self.alive.max(1) as f64);
        m
    }

    /// Unbiased per-axis variance of the alive samples.
    pub fn variance(&self) -> Vec<f64> {
        let mean = self.mean();
        let mut v = vec![0.0; self.dim];
        for x in (0..self.len()).filter_map(|k| self.sample(k)) {
            for a in 0..self.dim {
                v[a] += (x[a] - mean[a]).powi(2);
            }
        }
        v.iter_mut().for_each(|a| *a /= (self.alive.max(2) - 1) as f64);
        v
    }
}

/// CSV with columns `t, x_1..x_d, alive`, one row per sample.
pub fn write_kernels_csv<W: Write>(kernels: &[EmpiricalKernel], out: W) -> Result<()> {
    let mut w = csv::Writer::from_writer(out);
    let d = kernels.first().map_or(1, |k| k.dim);
    let mut header = vec!["t".to_string()];
    header.extend((1..=d).map(|a| format!("x_{a}")));
    header.push("alive".into());
    w.write_record(&header)?;
    for k in kernels {
        for m in 0..k.len() {
            let mut row = vec![format_float(k.t)];
            let x = &k.samples[m * d..(m + 1) * d];
            row.extend(x.iter().map(|v| format_float(*v)));
            row.push(if x[0].is_finite() { "1" } else { "0" }.into());
            w.write_record(&row)?;
        }
    }
    w.flush()?;
    Ok(())
}

/// Grid times as step counts of `dt`.
fn grid_steps(t_grid: &[f64], dt: f64) -> Result<Vec<usize>> {
    if t_grid.is_empty() {
        return Err(Error::InvalidInput("time grid is empty".into()));
    }
    if !(dt > 0.0) {
        return Err(Error::InvalidInput("dt must be positive".into()));
    }
    let mut out = Vec::with_capacity(t_grid.len());
    for &t in t_grid {
        let k = (t / dt).round();
        if !(t >= 0.0) || (k * dt - t).abs() > 1e-9 * t.max(1.0) {
            return Err(Error::InvalidInput(format!("grid time {t} is not a multiple of dt = {dt}")));
        }
        if out.last().is_some_and(|&last| k as usize <= last) {
            return Err(Error::InvalidInput("time grid must be strictly increasing".into()));
        }
        out.push(k as usize);
    }
    Ok(out)
}

/// Fine paths, and the same paths on the coarsened Brownian increments.
struct Ensemble {
    fine: Vec<PathResult>,
    coarse: Option<Vec<PathResult>>,
}

fn run_ensemble<F: Fields + ?Sized>(
    fields: &F,
    x0: &[f64],
    steps: usize,
    paths: usize,
    seed: u64,
    config: &EvolutionConfig,
    with_coarse: bool,
) -> Result<Ensemble> {
    if paths == 0 {
        return Err(Error::InvalidInput("at least one path is required".into()));
    }
    let steps = steps.max(2);
    let horizon = steps as f64 * config.dt;
    let coarse = with_coarse && steps.is_multiple_of(2);
    let runs: Vec<(PathResult, Option<PathResult>)> = (0..paths as u64)
        .into_par_iter()
        .map(|m| {
            let b = BrownianPath::sample(seed, m, fields.dim(), horizon, config.dt)?;
            let fine = simulate_path(fields, x0, &b, &config.thresholds)?;
            let coarse =
                if coarse { Some(simulate_path(fields, x0, &b.coarsen(1)?, &config.thresholds)?) } else { None };
            Ok((fine, coarse))
        })
        .collect::<Result<_>>()?;
    let (fine, coarse_runs): (Vec<_>, Vec<_>) = runs.into_iter().unzip();
    let coarse = if coarse { Some(coarse_runs.into_iter().map(|c| c.expect("coarse run")).collect()) } else { None };
    Ok(Ensemble { fine, coarse })
}

fn kernel_at(paths: &[PathResult], step: usize, t: f64) -> EmpiricalKernel {
    let d = paths[0].dim;
    let mut samples = Vec::with_capacity(paths.len() * d);
    for p in paths {
        samples.extend_from_slice(p.state(step));
    }
    EmpiricalKernel::from_samples(t, d, samples).expect("sized from paths")
}

/// Empirical kernels of `X(x0, y, t)` at the grid times for arbitrary fields.
pub fn estimate_kernel_with<F: Fields + ?Sized>(
    fields: &F,
    x0: &[f64],
    t_grid: &[f64],
    paths: usize,
    seed: u64,
    config: &EvolutionConfig,
) -> Result<Vec<EmpiricalKernel>> {
    let steps = grid_steps(t_grid, config.dt)?;
    let ens = run_ensemble(fields, x0, *steps.last().expect("non-empty"), paths, seed, config, false)?;
    Ok(steps.iter().zip(t_grid).map(|(&k, &t)| kernel_at(&ens.fine, k, t)).collect())
}

/// Empirical kernels `P_bar(x0, y, t, .)` at the grid times.
pub fn estimate_kernel(
    x0: &[f64],
    y: &TemperedDistribution,
    coeffs: &CoefficientMatrix,
    t_grid: &[f64],
    paths: usize,
    seed: u64,
    config: &EvolutionConfig,
) -> Result<Vec<EmpiricalKernel>> {
    let fields = ConvolvedFields::new(coeffs.clone(), y.clone())?;
    estimate_kernel_with(&fields, x0, t_grid, paths, seed, config)
}

/// A Monte Carlo average of coefficient vectors.
#[derive(Clone, Debug, Serialize)]
pub struct Convolution {
    #[serde(serialize_with = "serialize_values")]
    pub coeffs: HermiteCoeffs,
    pub std_errors: Vec<f64>,
    /// Mean of `||h(tau_x y)||_p` over the alive samples.
    pub mean_norm: f64,
    pub max_norm: f64,
    /// A single sample dominates the average, or a norm is not finite.
    pub growth_flag: bool,
}

fn serialize_values<S: serde::Serializer>(c: &HermiteCoeffs, s: S) -> std::result::Result<S::Ok, S::Error> {
    s.collect_seq(c.values())
}

/// `(1/M) sum_m h(x_m)` over the kernel, with cemetery samples contributing zero.
pub fn nonlinear_convolution<H>(
    h: H,
    kernel: &EmpiricalKernel,
    scheme: TruncationScheme,
    index: f64,
) -> Result<Convolution>
where
    H: Fn(&[f64]) -> Result<HermiteCoeffs> + Sync,
{
    let m = kernel.len();
    let first = kernel.sample(0);
    if kernel.alive == m && first.is_some() && kernel.samples.chunks(kernel.dim).all(|x| x == first.unwrap()) {
        // A point mass: no averaging, so the identity at t = 0 is exact.
        let c = h(first.unwrap())?;
        let n = sobolev_norm(&c, index);
        return Ok(Convolution {
            std_errors: vec![0.0; c.values().len()],
            coeffs: c,
            mean_norm: n,
            max_norm: n,
            growth_flag: !n.is_finite(),
        });
    }
    let values: Vec<Option<HermiteCoeffs>> =
        (0..m).into_par_iter().map(|k| kernel.sample(k).map(&h).transpose()).collect::<Result<_>>()?;
    let len = scheme.len();
    let mut sum = vec![0.0; len];
    let mut norms = Vec::with_capacity(kernel.alive);
    for c in values.iter().flatten() {
        if c.scheme() != scheme {
            return Err(Error::InvalidInput("convolution integrand changed truncation".into()));
        }
        sum.iter_mut().zip(c.values()).for_each(|(s, v)| *s += v);
        norms.push(sobolev_norm(c, index));
    }
    let mean: Vec<f64> = sum.iter().map(|s| s / m as f64).collect();
    let mut var = vec![0.0; len];
    for c in &values {
        for (j, v) in var.iter_mut().enumerate() {
            let x = c.as_ref().map_or(0.0, |c| c.values()[j]);
            *v += (x - mean[j]).powi(2);
        }
    }
    let std_errors = var.iter().map(|v| (v / (m.max(2) - 1) as f64 / m as f64).sqrt()).collect();
    let total: f64 = norms.iter().sum();
    let max_norm = norms.iter().cloned().fold(0.0, f64::max);
    Ok(Convolution {
        coeffs: HermiteCoeffs::from_values(scheme, mean)?,
        std_errors,
        mean_norm: total / norms.len().max(1) as f64,
        max_norm,
        growth_flag: !total.is_finite() || (m >= 10 && max_norm > 0.5 * total),
    })
}

/// The default integrand `x -> tau_x y`.
pub fn translates(
    y: &TemperedDistribution,
    scheme: TruncationScheme,
) -> impl Fn(&[f64]) -> Result<HermiteCoeffs> + Sync + '_ {
    move |x| projection(y, x, scheme)
}

/// Coefficients of `L(tau_x y) = 1/2 sum a_ik(x) d_ik tau_x y - sum b_i(x) d_i tau_x y`.
///
/// `a = sigma_bar sigma_bar^T` and `b_bar` are taken from `fields` at `x`.
pub fn generator_at_translate<F: Fields + ?Sized>(
    fields: &F,
    y: &TemperedDistribution,
    x: &[f64],
    scheme: TruncationScheme,
) -> Result<HermiteCoeffs> {
    let d = scheme.dim();
    let mut sigma = vec![0.0; d * d];
    let mut b = vec![0.0; d];
    fields.eval(x, &mut sigma, &mut b)?;
    let n = scheme.max_degree();
    let p = projection(y, x, scheme.with_degree(n + 2))?;
    Ok(second_order(&p, &sigma, &b, -1.0).with_degree(n))
}

/// `1/2 sum a_ik d_ik c + drift_sign sum b_i d_i c` with constant `a = sigma sigma^T`, at degree `N + 2`.
fn second_order(c: &HermiteCoeffs, sigma: &[f64], b: &[f64], drift_sign: f64) -> HermiteCoeffs {
    let d = c.dim();
    let out_scheme = c.scheme().with_degree(c.max_degree() + 2);
    let mut out = HermiteCoeffs::zeros(out_scheme);
    let first: Vec<HermiteCoeffs> = (0..d).map(|i| derivative_coeffs(c, i)).collect();
    for i in 0..d {
        for k in 0..d {
            let a: f64 = (0..d).map(|j| sigma[i * d + j] * sigma[k * d + j]).sum();
            if a != 0.0 {
                out = out.add_scaled(0.5 * a, &derivative_coeffs(&first[i], k));
            }
        }
        if b[i] != 0.0 {
            out = out.add_scaled(drift_sign * b[i], &first[i].with_degree(out_scheme.max_degree()));
        }
    }
    out
}

/// Largest value `|sigma_bar|`, `|b_bar|` can take, when the data make it evident.
///
/// Bounded smooth or constant coefficients paired against a nonnegative measure of known mass.
pub fn declared_field_bound(coeffs: &CoefficientMatrix, y: &TemperedDistribution) -> Option<f64> {
    let mass = match y {
        TemperedDistribution::Dirac { .. } => 1.0,
        TemperedDistribution::Gaussian(g) if g.mass() >= 0.0 => g.mass(),
        _ => return None,
    };
    coeffs.sup_bound().map(|s| s * mass)
}

/// `psi(t, y) = E Y_t(y)` on a time grid, with per-coefficient error bars.
#[derive(Clone, Debug, Serialize)]
pub struct EvolutionReport {
    pub dim: usize,
    pub degree: usize,
    pub index: f64,
    pub paths: usize,
    pub seed: u64,
    pub dt: f64,
    pub times: Vec<f64>,
    pub coeffs: Vec<Vec<f64>>,
    pub std_errors: Vec<Vec<f64>>,
    /// `|psi_dt - psi_2dt|` on the coarsened Brownian path, when the grid allows it.
    pub dt_errors: Option<Vec<Vec<f64>>>,
    /// Integral of each truncated `psi(t)`.
    pub mass: Vec<f64>,
    pub alive_fraction: Vec<f64>,
    pub growth_flags: Vec<bool>,
    pub max_field: f64,
    pub field_bound: Option<f64>,
    pub residual: Option<ResidualTable>,
    #[serde(skip)]
    steps: Vec<usize>,
    #[serde(skip)]
    ensemble: Arc<Vec<PathResult>>,
}

impl EvolutionReport {
    pub fn scheme(&self) -> TruncationScheme {
        TruncationScheme::new(self.dim, self.degree).expect("validated on construction")
    }

    /// `psi` at grid index `i`.
    pub fn psi(&self, i: usize) -> HermiteCoeffs {
        HermiteCoeffs::from_values(self.scheme(), self.coeffs[i].clone()).expect("sized from scheme")
    }

    /// The kernel the estimate at grid index `i` was averaged over.
    pub fn kernel(&self, i: usize) -> EmpiricalKernel {
        kernel_at(&self.ensemble, self.steps[i], self.times[i])
    }

    /// Attach a residual table for serialization.
    pub fn with_residual(mut self, residual: ResidualTable) -> Self {
        self.residual = Some(residual);
        self
    }

    /// CSV with columns `t, k, c, se` (one row per time and coefficient, `k` in graded-lex position).
    pub fn write_csv<W: Write>(&self, out: W) -> Result<()> {
        let mut w = csv::Writer::from_writer(out);
        w.write_record(["t", "k", "c", "se"])?;
        for (i, t) in self.times.iter().enumerate() {
            for (k, (c, s)) in self.coeffs[i].iter().zip(&self.std_errors[i]).enumerate() {
                w.write_record([format_float(*t), k.to_string(), format_float(*c), format_float(*s)])?;
            }
        }
        w.flush()?;
        Ok(())
    }
}

fn monitor(paths: &[PathResult], bound: Option<f64>) -> Result<f64> {
    let mut max_field = 0.0f64;
    for p in paths {
        if let Some(t) = p.eta {
            let why = p.diagnostic.clone().unwrap_or_else(|| "explosion".into());
            return Err(Error::Hypothesis(format!("{why} at t = {t}; bounded fields never explode")));
        }
        max_field = max_field.max(p.max_field);
    }
    if let Some(b) = bound {
        if max_field > b * (1.0 + 1e-9) + 1e-300 {
            return Err(Error::Hypothesis(format!("field value {max_field} exceeds the declared bound {b}")));
        }
    }
    Ok(max_field)
}

/// [`estimate_psi`] with frozen fields: `y` is only translated, never re-paired with the coefficients.
pub fn estimate_psi_with<F: Fields + ?Sized>(
    fields: &F,
    y: &TemperedDistribution,
    t_grid: &[f64],
    paths: usize,
    seed: u64,
    config: &EvolutionConfig,
) -> Result<EvolutionReport> {
    let d = y.dim();
    let scheme = config.scheme(d)?;
    let steps = grid_steps(t_grid, config.dt)?;
    let ens = run_ensemble(fields, &vec![0.0; d], *steps.last().expect("non-empty"), paths, seed, config, true)?;
    let max_field = monitor(&ens.fine, config.field_bound)?;
    let h = translates(y, scheme);
    let mut coeffs = Vec::new();
    let mut std_errors = Vec::new();
    let mut mass = Vec::new();
    let mut alive_fraction = Vec::new();
    let mut growth_flags = Vec::new();
    let mut dt_errors = ens.coarse.as_ref().map(|_| Vec::new());
    for (&k, &t) in steps.iter().zip(t_grid) {
        let kernel = kernel_at(&ens.fine, k, t);
        let conv = nonlinear_convolution(&h, &kernel, scheme, config.index)?;
        if let (Some(errs), Some(coarse)) = (dt_errors.as_mut(), ens.coarse.as_ref()) {
            let ck = if k % 2 == 0 { Some(kernel_at(coarse, k / 2, t)) } else { None };
            match ck {
                Some(ck) => {
                    let c2 = nonlinear_convolution(&h, &ck, scheme, config.index)?;
                    errs.push(
                        conv.coeffs.values().iter().zip(c2.coeffs.values()).map(|(a, b)| (a - b).abs()).collect(),
                    );
                }
                None => errs.push(vec![0.0; scheme.len()]),
            }
        }
        mass.push(conv.coeffs.integral());
        alive_fraction.push(kernel.alive_fraction());
        growth_flags.push(conv.growth_flag);
        std_errors.push(conv.std_errors);
        coeffs.push(conv.coeffs.into_values());
    }
    Ok(EvolutionReport {
        dim: d,
        degree: config.degree,
        index: config.index,
        paths,
        seed,
        dt: config.dt,
        times: t_grid.to_vec(),
        coeffs,
        std_errors,
        dt_errors,
        mass,
        alive_fraction,
        growth_flags,
        max_field,
        field_bound: config.field_bound,
        residual: None,
        steps,
        ensemble: Arc::new(ens.fine),
    })
}

/// `psi(t, y) = E Y_t(y) = y o P_bar(0, y, t, .)` on the grid.
///
/// Explosions, and field values above the declared bound, are hypothesis violations.
pub fn estimate_psi(
    y: &TemperedDistribution,
    coeffs: &CoefficientMatrix,
    t_grid: &[f64],
    paths: usize,
    seed: u64,
    config: &EvolutionConfig,
) -> Result<EvolutionReport> {
    let fields = ConvolvedFields::new(coeffs.clone(), y.clone())?;
    let mut config = config.clone();
    if config.field_bound.is_none() {
        config.field_bound = declared_field_bound(coeffs, y);
    }
    estimate_psi_with(&fields, y, t_grid, paths, seed, &config)
}

/// One line of a residual table.
#[derive(Clone, Debug, Serialize)]
pub struct ResidualRow {
    pub t: f64,
    pub residual: f64,
    pub mc_error: f64,
    pub discretization_error: f64,
    /// `3 * (mc_error + discretization_error)`, combined per coefficient before the norm.
    pub budget: f64,
    pub within_budget: bool,
    /// The same residual from the first half of the paths.
    pub residual_half_paths: f64,
}

/// Residuals of the evolution equation in `||.||_{p-1}`.
#[derive(Clone, Debug, Serialize)]
pub struct ResidualTable {
    pub index: f64,
    pub step: f64,
    /// `d/dt psi - L(y) o mu_t` by central differences at interior grid times.
    pub differential: Vec<ResidualRow>,
    /// `psi(t) - y - int_0^t L(y) o mu_s ds` by the trapezoidal rule on the grid.
    pub integrated: Vec<ResidualRow>,
    pub within_budget: bool,
}

/// Mean, standard error and Richardson error of per-path coefficient vectors.
struct Accumulated {
    mean: Vec<f64>,
    se: Vec<f64>,
    half: Vec<f64>,
}

fn accumulate(samples: &[Vec<f64>]) -> Accumulated {
    let m = samples.len();
    let len = samples[0].len();
    let half_m = (m / 2).max(1);
    let mut mean = vec![0.0; len];
    let mut half = vec![0.0; len];
    for (k, s) in samples.iter().enumerate() {
        mean.iter_mut().zip(s).for_each(|(a, b)| *a += b);
        if k < half_m {
            half.iter_mut().zip(s).for_each(|(a, b)| *a += b);
        }
    }
    mean.iter_mut().for_each(|a| *a /= m as f64);
    half.iter_mut().for_each(|a| *a /= half_m as f64);
    let mut var = vec![0.0; len];
    for s in samples {
        var.iter_mut().zip(s.iter().zip(&mean)).for_each(|(v, (x, mu))| *v += (x - mu).powi(2));
    }
    let se = var.iter().map(|v| (v / (m.max(2) - 1) as f64 / m as f64).sqrt()).collect();
    Accumulated { mean, se, half }
}

fn weighted_norm(values: &[f64], scheme: TruncationScheme, index: f64) -> f64 {
    let c = HermiteCoeffs::from_values(scheme, values.to_vec()).expect("sized from scheme");
    sobolev_norm(&c, index)
}

fn residual_row(t: f64, acc: &Accumulated, disc: &[f64], scheme: TruncationScheme, index: f64) -> ResidualRow {
    let combined: Vec<f64> = acc.se.iter().zip(disc).map(|(a, b)| a + b).collect();
    let residual = weighted_norm(&acc.mean, scheme, index);
    let budget = 3.0 * weighted_norm(&combined, scheme, index);
    ResidualRow {
        t,
        residual,
        mc_error: weighted_norm(&acc.se, scheme, index),
        discretization_error: weighted_norm(disc, scheme, index),
        budget,
        within_budget: residual <= budget,
        residual_half_paths: weighted_norm(&acc.half, scheme, index),
    }
}

/// Residuals of `d/dt psi(t, y) = psi(t, L(y))` from the paths behind `report`.
pub fn evolution_residual(
    report: &EvolutionReport,
    y: &TemperedDistribution,
    coeffs: &CoefficientMatrix,
) -> Result<ResidualTable> {
    let fields = ConvolvedFields::new(coeffs.clone(), y.clone())?;
    evolution_residual_with(report, &fields, y)
}

/// [`evolution_residual`] for the fields the report was simulated with.
pub fn evolution_residual_with<F: Fields + ?Sized>(
    report: &EvolutionReport,
    fields: &F,
    y: &TemperedDistribution,
) -> Result<ResidualTable> {
    let n = report.times.len();
    if n < 5 {
        return Err(Error::InvalidInput("the residual needs at least 5 grid times".into()));
    }
    let s = report.steps[1] - report.steps[0];
    if report.steps.windows(2).any(|w| w[1] - w[0] != s) {
        return Err(Error::InvalidInput("the residual needs a uniform time grid".into()));
    }
    let halves = s.is_multiple_of(2);
    let sub = if halves { s / 2 } else { s };
    let delta = s as f64 * report.dt;
    let scheme = report.scheme();
    let len = scheme.len();
    let points: Vec<usize> =
        (0..=(report.steps[n - 1] - report.steps[0]) / sub).map(|j| report.steps[0] + j * sub).collect();
    let per = s / sub;

    // Per path: projections P and generator values G at every sub-grid point.
    let evals: Vec<(Vec<Vec<f64>>, Vec<Vec<f64>>)> = report
        .ensemble
        .par_iter()
        .map(|path| {
            let mut ps = Vec::with_capacity(points.len());
            let mut gs = Vec::with_capacity(points.len());
            for &k in &points {
                if path.is_alive(k) {
                    let x = path.state(k);
                    ps.push(projection(y, x, scheme)?.into_values());
                    gs.push(generator_at_translate(fields, y, x, scheme)?.into_values());
                } else {
                    ps.push(vec![0.0; len]);
                    gs.push(vec![0.0; len]);
                }
            }
            Ok((ps, gs))
        })
        .collect::<Result<_>>()?;

    let combine = |f: &dyn Fn(&[Vec<f64>], &[Vec<f64>]) -> Vec<f64>| -> Vec<Vec<f64>> {
        evals.iter().map(|(p, g)| f(p, g)).collect()
    };
    let index = report.index - 1.0;
    let mut differential = Vec::new();
    for i in 1..n - 1 {
        let c = i * per;
        let full = accumulate(&combine(&|p, g| {
            (0..len).map(|j| (p[c + per][j] - p[c - per][j]) / (2.0 * delta) - g[c][j]).collect()
        }));
        let disc: Vec<f64> = if halves {
            let half =
                accumulate(&combine(&|p, g| (0..len).map(|j| (p[c + 1][j] - p[c - 1][j]) / delta - g[c][j]).collect()));
            full.mean.iter().zip(&half.mean).map(|(a, b)| 4.0 / 3.0 * (a - b).abs()).collect()
        } else {
            vec![0.0; len]
        };
        differential.push(residual_row(report.times[i], &full, &disc, scheme, index));
    }
    let mut integrated = Vec::new();
    for i in 1..n {
        let c = i * per;
        let trapezoid = |g: &[Vec<f64>], stride: usize, j: usize, h: f64| -> f64 {
            let mut acc = 0.5 * (g[0][j] + g[c][j]);
            let mut k = stride;
            while k < c {
                acc += g[k][j];
                k += stride;
            }
            acc * h
        };
        let full =
            accumulate(&combine(&|p, g| (0..len).map(|j| p[c][j] - p[0][j] - trapezoid(g, per, j, delta)).collect()));
        let disc: Vec<f64> = if halves {
            let half = accumulate(&combine(&|p, g| {
                (0..len).map(|j| p[c][j] - p[0][j] - trapezoid(g, 1, j, delta / 2.0)).collect()
            }));
            full.mean.iter().zip(&half.mean).map(|(a, b)| 4.0 / 3.0 * (a - b).abs()).collect()
        } else {
            vec![0.0; len]
        };
        integrated.push(residual_row(report.times[i], &full, &disc, scheme, index));
    }
    let within_budget = differential.iter().chain(&integrated).all(|r| r.within_budget);
    Ok(ResidualTable { index, step: delta, differential, integrated, within_budget })
}

/// `L_bar^* phi` in coefficients.
#[derive(Clone, Debug, Serialize)]
pub struct Adjoint {
    #[serde(serialize_with = "serialize_values")]
    pub coeffs: HermiteCoeffs,
    /// Aliasing estimate of the re-projected products; zero for constant fields.
    pub reprojection_error: f64,
}

impl Adjoint {
    pub fn is_flagged(&self, tolerance: f64) -> bool {
        self.reprojection_error > tolerance
    }
}

/// `L_bar^* phi = 1/2 sum d_ij (a_ij phi) - sum d_i (b_bar_i phi)` on degree `N + 2`.
///
/// Constant fields act exactly in coefficient space. Otherwise the products are sampled
/// at quadrature nodes and re-projected on degree `N + 4`, which is all the two outer
/// derivatives need; the re-projection error compares two quadrature resolutions.
pub fn adjoint_apply<F: Fields + ?Sized>(fields: &F, phi: &HermiteCoeffs) -> Result<Adjoint> {
    let d = fields.dim();
    if phi.dim() != d {
        return Err(Error::DimensionMismatch { expected: d, got: phi.dim() });
    }
    if let Some((sigma, b)) = fields.constant() {
        return Ok(Adjoint { coeffs: second_order(phi, &sigma, &b, -1.0), reprojection_error: 0.0 });
    }
    let n = phi.max_degree();
    let coarse = reprojected_adjoint(fields, phi, &QuadratureRule::new(n + 4 + 24)?)?;
    let fine = reprojected_adjoint(fields, phi, &QuadratureRule::new(n + 4 + 48)?)?;
    let reprojection_error = fine.add_scaled(-1.0, &coarse).values().iter().map(|v| v * v).sum::<f64>().sqrt();
    Ok(Adjoint { coeffs: fine, reprojection_error })
}

fn reprojected_adjoint<F: Fields + ?Sized>(
    fields: &F,
    phi: &HermiteCoeffs,
    quad: &QuadratureRule,
) -> Result<HermiteCoeffs> {
    let d = fields.dim();
    let n = phi.max_degree();
    let wide = phi.scheme().with_degree(n + 4);
    let failure = std::sync::Mutex::new(None);
    let field_at = |x: &[f64]| {
        let mut sigma = vec![0.0; d * d];
        let mut b = vec![0.0; d];
        match fields.eval(x, &mut sigma, &mut b) {
            Ok(()) => Some((sigma, b)),
            Err(e) => {
                failure.lock().expect("not poisoned").get_or_insert(e);
                None
            }
        }
    };
    let mut out = HermiteCoeffs::zeros(phi.scheme().with_degree(n + 6));
    for i in 0..d {
        for k in i..d {
            let t = hermite_transform(
                |x| {
                    field_at(x).map_or(0.0, |(s, _)| {
                        (0..d).map(|j| s[i * d + j] * s[k * d + j]).sum::<f64>() * phi.reconstruct(x)
                    })
                },
                wide,
                quad,
            )?;
            let factor = if i == k { 0.5 } else { 1.0 };
            out = out.add_scaled(factor, &derivative_coeffs(&derivative_coeffs(&t.coeffs, i), k));
        }
        let t = hermite_transform(|x| field_at(x).map_or(0.0, |(_, b)| b[i] * phi.reconstruct(x)), wide, quad)?;
        out = out.add_scaled(-1.0, &derivative_coeffs(&t.coeffs, i).with_degree(n + 6));
    }
    if let Some(e) = failure.into_inner().expect("not poisoned") {
        return Err(e);
    }
    Ok(out.with_degree(n + 2))
}

/// `L_bar f = 1/2 sum a_ij d_ij f + sum b_bar_i d_i f` at `x`, from a value jet of `f`.
fn lbar(sigma: &[f64], b: &[f64], grad: &[f64], hess: &[f64]) -> f64 {
    let d = b.len();
    let mut acc = 0.0;
    for i in 0..d {
        acc += b[i] * grad[i];
        for k in 0..d {
            let a: f64 = (0..d).map(|j| sigma[i * d + j] * sigma[k * d + j]).sum();
            acc += 0.5 * a * hess[i * d + k];
        }
    }
    acc
}

/// A test function for the forward equation, with exact first and second derivatives.
#[derive(Clone, Debug)]
pub enum TestFunction {
    /// A Hermite truncation.
    Hermite { label: String, coeffs: HermiteCoeffs },
    /// `x_axis^power`, `power` at most 2.
    Monomial { axis: usize, power: u32 },
}

impl TestFunction {
    /// `h_k` on the first axis times `h_0` on the others.
    pub fn hermite_axis(dim: usize, k: u32) -> Result<Self> {
        let mut entries = vec![0; dim];
        entries[0] = k;
        let scheme = TruncationScheme::new(dim, k as usize)?;
        Ok(TestFunction::Hermite {
            label: format!("h_{k}"),
            coeffs: HermiteCoeffs::unit(scheme, &MultiIndex::new(entries))?,
        })
    }

    pub fn label(&self) -> String {
        match self {
            TestFunction::Hermite { label, .. } => label.clone(),
            TestFunction::Monomial { axis, power: 1 } => format!("x_{}", axis + 1),
            TestFunction::Monomial { axis, power } => format!("x_{}^{power}", axis + 1),
        }
    }

    fn jet(&self, dim: usize) -> Result<Jet> {
        Ok(match self {
            TestFunction::Hermite { coeffs, .. } => {
                if coeffs.dim() != dim {
                    return Err(Error::DimensionMismatch { expected: dim, got: coeffs.dim() });
                }
                let first: Vec<HermiteCoeffs> = (0..dim).map(|i| derivative_coeffs(coeffs, i)).collect();
                let second = (0..dim * dim).map(|ik| derivative_coeffs(&first[ik / dim], ik % dim)).collect();
                Jet::Hermite { value: coeffs.clone(), first, second }
            }
            TestFunction::Monomial { axis, power } => {
                if *axis >= dim || *power > 2 {
                    return Err(Error::InvalidInput("monomial test functions are x_i or x_i^2".into()));
                }
                Jet::Monomial { axis: *axis, power: *power }
            }
        })
    }
}

enum Jet {
    Hermite { value: HermiteCoeffs, first: Vec<HermiteCoeffs>, second: Vec<HermiteCoeffs> },
    Monomial { axis: usize, power: u32 },
}

impl Jet {
    fn eval(&self, x: &[f64], grad: &mut [f64], hess: &mut [f64]) -> f64 {
        match self {
            Jet::Hermite { value, first, second } => {
                grad.iter_mut().zip(first).for_each(|(g, c)| *g = c.reconstruct(x));
                hess.iter_mut().zip(second).for_each(|(h, c)| *h = c.reconstruct(x));
                value.reconstruct(x)
            }
            Jet::Monomial { axis, power } => {
                grad.fill(0.0);
                hess.fill(0.0);
                let d = grad.len();
                let v = x[*axis];
                if *power == 1 {
                    grad[*axis] = 1.0;
                    v
                } else {
                    grad[*axis] = 2.0 * v;
                    hess[*axis * d + *axis] = 2.0;
                    v * v
                }
            }
        }
    }
}

/// `{h_0, .., h_4, x_1, x_1^2}`.
pub fn default_panel(dim: usize) -> Result<Vec<TestFunction>> {
    let mut panel = (0..=4).map(|k| TestFunction::hermite_axis(dim, k)).collect::<Result<Vec<_>>>()?;
    panel.push(TestFunction::Monomial { axis: 0, power: 1 });
    panel.push(TestFunction::Monomial { axis: 0, power: 2 });
    Ok(panel)
}

/// Value, gradient and Hessian of every basis function `h_k`, `|k| <= N`, at `x`.
fn basis_jets(x: &[f64], scheme: TruncationScheme, indices: &[MultiIndex]) -> (Vec<f64>, Vec<f64>, Vec<f64>) {
    let d = scheme.dim();
    let n = scheme.max_degree();
    let mut v1 = Vec::with_capacity(d);
    let mut g1 = Vec::with_capacity(d);
    let mut h1 = Vec::with_capacity(d);
    for &xa in x {
        let h = hermite_functions(n + 1, xa);
        let g: Vec<f64> = (0..=n)
            .map(|k| {
                let down = if k > 0 { (k as f64 / 2.0).sqrt() * h[k - 1] } else { 0.0 };
                down - ((k as f64 + 1.0) / 2.0).sqrt() * h[k + 1]
            })
            .collect();
        let hh: Vec<f64> = (0..=n).map(|k| (xa * xa - (2 * k + 1) as f64) * h[k]).collect();
        v1.push(h);
        g1.push(g);
        h1.push(hh);
    }
    let len = indices.len();
    let mut value = vec![0.0; len];
    let mut grad = vec![0.0; len * d];
    let mut hess = vec![0.0; len * d * d];
    for (m, k) in indices.iter().enumerate() {
        let e = k.entries();
        let factor = |a: usize, order: [usize; 2]| -> f64 {
            let ka = e[a] as usize;
            match order.iter().filter(|&&o| o == a).count() {
                0 => v1[a][ka],
                1 => g1[a][ka],
                _ => h1[a][ka],
            }
        };
        value[m] = (0..d).map(|a| v1[a][e[a] as usize]).product();
        for i in 0..d {
            grad[m * d + i] = (0..d).map(|a| factor(a, [i, usize::MAX])).product();
            for j in 0..d {
                hess[(m * d + i) * d + j] = (0..d).map(|a| factor(a, [i, j])).product();
            }
        }
    }
    (value, grad, hess)
}

/// A residual of the forward equation paired with one test function.
#[derive(Clone, Debug, Serialize)]
pub struct PanelRow {
    pub label: String,
    pub t: f64,
    pub residual: f64,
    pub mc_error: f64,
    pub dt_error: f64,
    pub budget: f64,
    pub within_budget: bool,
}

/// `d/dt E X_t` against `E b_bar(X_t)` on one axis.
#[derive(Clone, Debug, Serialize)]
pub struct MomentRow {
    pub t: f64,
    pub axis: usize,
    pub derivative: f64,
    pub drift: f64,
    pub mc_error: f64,
    pub difference_error: f64,
    pub within_error: bool,
}

/// The forward-equation residual in `S_{-q-1}`, with pairings against a test panel.
#[derive(Clone, Debug, Serialize)]
pub struct ForwardReport {
    pub q: f64,
    pub dim: usize,
    pub degree: usize,
    pub paths: usize,
    pub seed: u64,
    pub dt: f64,
    pub times: Vec<f64>,
    /// Coefficients of `E delta_{X_t}`, and their `||.||_{-q}` norms.
    pub kernel_coeffs: Vec<Vec<f64>>,
    pub kernel_norms: Vec<f64>,
    pub panel: Vec<PanelRow>,
    /// The residual against every `h_k`, `|k| <= N`, in `||.||_{-q-1}`.
    pub norm_rows: Vec<ResidualRow>,
    pub first_moment: Vec<MomentRow>,
    pub within_budget: bool,
}

/// Per-path residual `f(X_t) - f(x0) - int_0^t L_bar f(X_s) ds` at every grid time, for
/// a family of test functions evaluated by `jets`.
fn forward_path_residuals<F, J>(
    fields: &F,
    path: &PathResult,
    grid: &[usize],
    stride: usize,
    count: usize,
    jets: J,
) -> Result<Vec<Vec<f64>>>
where
    F: Fields + ?Sized,
    J: Fn(&[f64], &mut Vec<f64>, &mut Vec<f64>),
{
    let d = path.dim;
    let dt = (path.times[1] - path.times[0]) * stride as f64;
    let mut sigma = vec![0.0; d * d];
    let mut b = vec![0.0; d];
    let mut values = Vec::new();
    let mut lbars = Vec::new();
    let mut integral = vec![0.0; count];
    let mut initial = vec![0.0; count];
    let mut previous = vec![0.0; count];
    let mut out = Vec::with_capacity(grid.len());
    let mut next = 0;
    let last = *grid.last().expect("non-empty");
    let mut k = 0;
    while k <= last {
        let alive = path.is_alive(k);
        let mut current = vec![0.0; count];
        let mut value_now = vec![0.0; count];
        if alive {
            let x = path.state(k);
            fields.eval(x, &mut sigma, &mut b)?;
            jets(x, &mut values, &mut lbars);
            for j in 0..count {
                value_now[j] = values[j];
                current[j] = lbar(
                    &sigma,
                    &b,
                    &lbars[j * (d + d * d)..j * (d + d * d) + d],
                    &lbars[j * (d + d * d) + d..(j + 1) * (d + d * d)],
                );
            }
        }
        if k == 0 {
            initial = value_now.clone();
        } else {
            for j in 0..count {
                integral[j] += 0.5 * (previous[j] + current[j]) * dt;
            }
        }
        previous = current;
        while next < grid.len() && grid[next] == k {
            out.push((0..count).map(|j| value_now[j] - initial[j] - integral[j]).collect());
            next += 1;
        }
        k += stride;
    }
    Ok(out)
}

/// The forward equation `P_bar_t = delta_x0 + int_0^t L_bar^* P_bar_s ds`, tested by pairings.
pub fn forward_residual(
    x0: &[f64],
    y: &TemperedDistribution,
    coeffs: &CoefficientMatrix,
    t_grid: &[f64],
    paths: usize,
    q: f64,
    seed: u64,
    config: &EvolutionConfig,
    panel: &[TestFunction],
) -> Result<ForwardReport> {
    let d = y.dim();
    check_q(q, d)?;
    let fields = ConvolvedFields::new(coeffs.clone(), y.clone())?;
    forward_residual_with(&fields, x0, t_grid, paths, q, seed, config, panel)
}

fn check_q(q: f64, d: usize) -> Result<()> {
    if q <= d as f64 / 4.0 {
        return Err(Error::Hypothesis(format!("q must exceed d/4 (q = {q}, d = {d}): delta is not in S_-q")));
    }
    Ok(())
}

/// [`forward_residual`] for arbitrary fields.
#[allow(clippy::too_many_arguments)]
pub fn forward_residual_with<F: Fields + ?Sized>(
    fields: &F,
    x0: &[f64],
    t_grid: &[f64],
    paths: usize,
    q: f64,
    seed: u64,
    config: &EvolutionConfig,
    panel: &[TestFunction],
) -> Result<ForwardReport> {
    let d = fields.dim();
    check_q(q, d)?;
    if x0.len() != d {
        return Err(Error::DimensionMismatch { expected: d, got: x0.len() });
    }
    let scheme = config.scheme(d)?;
    let indices = scheme.indices();
    let grid = grid_steps(t_grid, config.dt)?;
    let ens = run_ensemble(fields, x0, *grid.last().expect("non-empty"), paths, seed, config, true)?;
    monitor(&ens.fine, config.field_bound)?;
    let coarse_ok = ens.coarse.is_some() && grid.iter().all(|k| k % 2 == 0);
    let jets: Vec<Jet> = panel.iter().map(|f| f.jet(d)).collect::<Result<_>>()?;
    let stride_jet = d + d * d;
    let panel_jets = |x: &[f64], values: &mut Vec<f64>, derivs: &mut Vec<f64>| {
        values.resize(jets.len(), 0.0);
        derivs.resize(jets.len() * stride_jet, 0.0);
        for (j, jet) in jets.iter().enumerate() {
            let (g, h) = derivs[j * stride_jet..(j + 1) * stride_jet].split_at_mut(d);
            values[j] = jet.eval(x, g, h);
        }
    };
    let basis = |x: &[f64], values: &mut Vec<f64>, derivs: &mut Vec<f64>| {
        let (v, g, h) = basis_jets(x, scheme, &indices);
        derivs.clear();
        for m in 0..v.len() {
            derivs.extend_from_slice(&g[m * d..(m + 1) * d]);
            derivs.extend_from_slice(&h[m * d * d..(m + 1) * d * d]);
        }
        *values = v;
    };
    let count_panel = jets.len();
    let count_basis = indices.len();
    let half_grid: Vec<usize> = grid.iter().map(|k| k / 2).collect();
    let per_path: Vec<[Vec<Vec<f64>>; 4]> = (0..paths)
        .into_par_iter()
        .map(|m| {
            let fine = &ens.fine[m];
            let pf = forward_path_residuals(fields, fine, &grid, 1, count_panel, panel_jets)?;
            let bf = forward_path_residuals(fields, fine, &grid, 1, count_basis, basis)?;
            let (pc, bc) = if coarse_ok {
                let coarse = &ens.coarse.as_ref().expect("coarse runs")[m];
                (
                    forward_path_residuals(fields, coarse, &half_grid, 1, count_panel, panel_jets)?,
                    forward_path_residuals(fields, coarse, &half_grid, 1, count_basis, basis)?,
                )
            } else {
                (Vec::new(), Vec::new())
            };
            Ok([pf, bf, pc, bc])
        })
        .collect::<Result<_>>()?;

    let mut panel_rows = Vec::new();
    let mut norm_rows = Vec::new();
    let mut kernel_coeffs = Vec::new();
    let mut kernel_norms = Vec::new();
    let norm_index = -q - 1.0;
    for (i, &t) in t_grid.iter().enumerate() {
        let column = |which: usize| -> Vec<Vec<f64>> { per_path.iter().map(|r| r[which][i].clone()).collect() };
        let pf = accumulate(&column(0));
        let bf = accumulate(&column(1));
        let (pdt, bdt) = if coarse_ok {
            let pc = accumulate(&column(2));
            let bc = accumulate(&column(3));
            (
                pf.mean.iter().zip(&pc.mean).map(|(a, b)| (a - b).abs()).collect::<Vec<_>>(),
                bf.mean.iter().zip(&bc.mean).map(|(a, b)| (a - b).abs()).collect::<Vec<_>>(),
            )
        } else {
            (vec![0.0; count_panel], vec![0.0; count_basis])
        };
        for (j, f) in panel.iter().enumerate() {
            let budget = 3.0 * (pf.se[j] + pdt[j]);
            panel_rows.push(PanelRow {
                label: f.label(),
                t,
                residual: pf.mean[j],
                mc_error: pf.se[j],
                dt_error: pdt[j],
                budget,
                within_budget: pf.mean[j].abs() <= budget,
            });
        }
        norm_rows.push(residual_row(t, &bf, &bdt, scheme, norm_index));
        let kernel = kernel_at(&ens.fine, grid[i], t);
        let mut avg = vec![0.0; count_basis];
        for m in 0..kernel.len() {
            if let Some(x) = kernel.sample(m) {
                let c = crate::sobolev::dirac_coeffs(x, scheme)?;
                avg.iter_mut().zip(c.values()).for_each(|(a, v)| *a += v);
            }
        }
        avg.iter_mut().for_each(|a| *a /= kernel.len() as f64);
        kernel_norms.push(weighted_norm(&avg, scheme, -q));
        kernel_coeffs.push(avg);
    }

    let first_moment = first_moment_rows(fields, &ens.fine, &grid, t_grid, config.dt)?;
    let within_budget = panel_rows.iter().all(|r| r.within_budget)
        && norm_rows.iter().all(|r| r.within_budget)
        && first_moment.iter().all(|r| r.within_error);
    Ok(ForwardReport {
        q,
        dim: d,
        degree: config.degree,
        paths,
        seed,
        dt: config.dt,
        times: t_grid.to_vec(),
        kernel_coeffs,
        kernel_norms,
        panel: panel_rows,
        norm_rows,
        first_moment,
        within_budget,
    })
}

/// Central differences of `E X` over the grid spacing against `E b_bar(X_t)`, at interior grid times.
///
/// The difference-quotient bias is estimated by Richardson against the half span when the
/// span has an even number of steps.
fn first_moment_rows<F: Fields + ?Sized>(
    fields: &F,
    paths: &[PathResult],
    grid: &[usize],
    t_grid: &[f64],
    dt: f64,
) -> Result<Vec<MomentRow>> {
    let d = fields.dim();
    let mut rows = Vec::new();
    for i in 1..grid.len().saturating_sub(1) {
        let mid = grid[i];
        let s = (grid[i + 1] - mid).min(mid - grid[i - 1]);
        let narrow = s.is_multiple_of(2).then_some(s / 2);
        for axis in 0..d {
            let samples: Vec<Vec<f64>> = paths
                .iter()
                .map(|p| {
                    let mut sigma = vec![0.0; d * d];
                    let mut b = vec![0.0; d];
                    if !p.is_alive(mid + s) {
                        return Ok(vec![0.0; 3]);
                    }
                    fields.eval(p.state(mid), &mut sigma, &mut b)?;
                    let quotient = |h: usize| (p.state(mid + h)[axis] - p.state(mid - h)[axis]) / (2.0 * h as f64 * dt);
                    let wide = quotient(s);
                    Ok(vec![wide - b[axis], b[axis], narrow.map_or(wide, quotient)])
                })
                .collect::<Result<_>>()?;
            let acc = accumulate(&samples);
            let derivative = acc.mean[0] + acc.mean[1];
            let difference_error = 4.0 / 3.0 * (derivative - acc.mean[2]).abs();
            rows.push(MomentRow {
                t: t_grid[i],
                axis,
                derivative,
                drift: acc.mean[1],
                mc_error: acc.se[0],
                difference_error,
                within_error: acc.mean[0].abs() <= 3.0 * acc.se[0] + difference_error,
            });
        }
    }
    Ok(rows)
}

/// A bounded observable on flow states, vanishing in the cemetery.
#[derive(Clone, Debug)]
pub enum Observable {
    /// `1` on every alive state.
    Alive,
    /// `y' -> <phi, y'>`.
    Pairing { label: String, phi: TemperedDistribution },
}

impl Observable {
    pub fn label(&self) -> String {
        match self {
            Observable::Alive => "1".into(),
            Observable::Pairing { label, .. } => label.clone(),
        }
    }

    pub fn eval(&self, state: &FlowState) -> Result<f64> {
        match (self, state) {
            (_, FlowState::Cemetery) => Ok(0.0),
            (Observable::Alive, FlowState::Alive(_)) => Ok(1.0),
            (Observable::Pairing { phi, .. }, s) => s.observe(phi),
        }
    }

    /// The observable at `tau_z y`, or at the cemetery when `z` is `None`.
    fn at_translate(&self, y: &TemperedDistribution, z: Option<&[f64]>) -> Result<f64> {
        match (self, z) {
            (_, None) => Ok(0.0),
            (Observable::Alive, Some(_)) => Ok(1.0),
            (Observable::Pairing { phi, .. }, Some(z)) => pair(phi, y, z),
        }
    }
}

/// Single-stage against two-stage estimates of `T_{s+t} f(y)`.
#[derive(Clone, Debug, Serialize)]
pub struct SemigroupReport {
    pub observable: String,
    pub s: f64,
    pub t: f64,
    pub outer_paths: usize,
    pub inner_paths: usize,
    /// `E f(Y_{s+t}(y))`.
    pub single: f64,
    pub single_error: f64,
    /// `E g(Y_t(y))` with `g(y') = E f(Y_s(y'))` on fresh noise.
    pub two_stage: f64,
    pub two_stage_error: f64,
    pub difference: f64,
    pub combined_error: f64,
    pub agree: bool,
    /// Fraction of single-stage paths alive at `s + t`.
    pub alive_fraction: f64,
}

fn mean_se(v: &[f64]) -> (f64, f64) {
    let n = v.len() as f64;
    let mean = v.iter().sum::<f64>() / n;
    let var = v.iter().map(|x| (x - mean).powi(2)).sum::<f64>() / (n - 1.0).max(1.0);
    (mean, (var / n).sqrt())
}

/// Terminal `z` of the flow of `y` over `steps` steps on stream `stream` of `seed`.
fn terminal_z(
    fields: &ConvolvedFields,
    steps: usize,
    seed: u64,
    stream: u64,
    config: &EvolutionConfig,
) -> Result<Option<Vec<f64>>> {
    let d = fields.dim();
    if steps == 0 {
        return Ok(Some(vec![0.0; d]));
    }
    let b = BrownianPath::sample(seed, stream, d, steps as f64 * config.dt, config.dt)?;
    Ok(simulate_path(fields, &vec![0.0; d], &b, &config.thresholds)?.terminal().map(<[f64]>::to_vec))
}

/// Markov consistency `T_{s+t} f = T_t (T_s f)` by nested Monte Carlo.
///
/// Single-stage, outer and inner paths draw from disjoint seed lineages; inner path `j`
/// of outer path `m` is stream `m * inner_paths + j`.
#[allow(clippy::too_many_arguments)]
pub fn semigroup_estimate(
    f: &Observable,
    y: &TemperedDistribution,
    coeffs: &CoefficientMatrix,
    s: f64,
    t: f64,
    outer_paths: usize,
    inner_paths: usize,
    seed: u64,
    config: &EvolutionConfig,
) -> Result<SemigroupReport> {
    if outer_paths < 2 || inner_paths < 1 {
        return Err(Error::InvalidInput("need at least 2 outer and 1 inner path".into()));
    }
    let steps = grid_steps(&[s, t, s + t], config.dt).or_else(|_| {
        // Zero lengths are allowed; only divisibility matters.
        let k = |v: f64| (v / config.dt).round();
        if [s, t].iter().all(|&v| v >= 0.0 && (k(v) * config.dt - v).abs() <= 1e-9 * v.max(1.0)) {
            Ok(vec![k(s) as usize, k(t) as usize, (k(s) + k(t)) as usize])
        } else {
            Err(Error::InvalidInput(format!("s = {s} and t = {t} must be multiples of dt")))
        }
    })?;
    let (ks, kt, kst) = (steps[0], steps[1], steps[2]);
    let fields = ConvolvedFields::new(coeffs.clone(), y.clone())?;
    let single_seed = derive_seed(seed, &[tags::OUTER, 1]);
    let outer_seed = derive_seed(seed, &[tags::OUTER, 2]);
    let inner_seed = derive_seed(seed, &[tags::INNER]);

    let single: Vec<(f64, bool)> = (0..outer_paths as u64)
        .into_par_iter()
        .map(|m| {
            let z = terminal_z(&fields, kst, single_seed, m, config)?;
            Ok((f.at_translate(y, z.as_deref())?, z.is_some()))
        })
        .collect::<Result<_>>()?;
    let two: Vec<f64> = (0..outer_paths as u64)
        .into_par_iter()
        .map(|m| {
            let Some(z) = terminal_z(&fields, kt, outer_seed, m, config)? else {
                return Ok(0.0);
            };
            let moved = translate(y, &z)?.value;
            if ks == 0 {
                return f.at_translate(&moved, Some(&vec![0.0; z.len()]));
            }
            let inner_fields = ConvolvedFields::new(coeffs.clone(), moved.clone())?;
            let mut acc = 0.0;
            for j in 0..inner_paths as u64 {
                let w = terminal_z(&inner_fields, ks, inner_seed, m * inner_paths as u64 + j, config)?;
                acc += f.at_translate(&moved, w.as_deref())?;
            }
            Ok(acc / inner_paths as f64)
        })
        .collect::<Result<_>>()?;
    let values: Vec<f64> = single.iter().map(|v| v.0).collect();
    let (single_mean, single_error) = mean_se(&values);
    let (two_mean, two_error) = mean_se(&two);
    let combined_error = single_error.hypot(two_error);
    let difference = two_mean - single_mean;
    Ok(SemigroupReport {
        observable: f.label(),
        s,
        t,
        outer_paths,
        inner_paths,
        single: single_mean,
        single_error,
        two_stage: two_mean,
        two_stage_error: two_error,
        difference,
        combined_error,
        agree: difference.abs() <= 3.0 * combined_error,
        alive_fraction: single.iter().filter(|v| v.1).count() as f64 / outer_paths as f64,
    })
}

/// Small-time limit of `(E <phi, Y_t(y)> - <phi, y>) / t` against `<phi, L(y)>`.
#[derive(Clone, Debug, Serialize)]
pub struct GeneratorReport {
    pub times: Vec<f64>,
    pub quotients: Vec<f64>,
    pub quotient_errors: Vec<f64>,
    /// Linear extrapolation of the quotients to `t = 0`.
    pub limit: f64,
    pub limit_error: f64,
    /// `<phi, L(y)> = L_bar f_bar(0)`, split into its diffusion and drift parts.
    pub analytic: f64,
    pub diffusion_part: f64,
    pub drift_part: f64,
    /// `<phi, apply_l(y)>` with `y` in coefficient form, when available.
    pub apply_l_value: Option<f64>,
    pub agree: bool,
}

/// `<phi, L(y)>` as `(diffusion, drift)`: `1/2 sum a_ik <d_ik phi, y>` and `sum b_i <d_i phi, y>`.
pub fn generator_analytic(
    y: &TemperedDistribution,
    coeffs: &CoefficientMatrix,
    phi: &HermiteCoeffs,
) -> Result<(f64, f64)> {
    let d = y.dim();
    let fields = ConvolvedFields::new(coeffs.clone(), y.clone())?;
    let mut sigma = vec![0.0; d * d];
    let mut b = vec![0.0; d];
    let origin = vec![0.0; d];
    fields.eval(&origin, &mut sigma, &mut b)?;
    let against = |c: HermiteCoeffs| pair(&TemperedDistribution::hermite(c, 0.0), y, &origin);
    let first: Vec<HermiteCoeffs> = (0..d).map(|i| derivative_coeffs(phi, i)).collect();
    let mut diffusion = 0.0;
    let mut drift = 0.0;
    for i in 0..d {
        if b[i] != 0.0 {
            drift += b[i] * against(first[i].clone())?;
        }
        for k in 0..d {
            let a: f64 = (0..d).map(|j| sigma[i * d + j] * sigma[k * d + j]).sum();
            if a != 0.0 {
                diffusion += 0.5 * a * against(derivative_coeffs(&first[i], k))?;
            }
        }
    }
    Ok((diffusion, drift))
}

fn apply_l_value(y: &TemperedDistribution, coeffs: &CoefficientMatrix, phi: &HermiteCoeffs) -> Result<Option<f64>> {
    let d = y.dim();
    let degree = (phi.max_degree() + 2).max(if d == 1 { 48 } else { 24 });
    let yc = match projection(y, &vec![0.0; d], phi.scheme().with_degree(degree)) {
        Ok(c) => c,
        Err(Error::UnsupportedPairing { .. }) => return Ok(None),
        Err(e) => return Err(e),
    };
    let l = crate::distribution::apply_l(coeffs, &SobolevElement::new(yc, 0.0))?;
    let top = l.coeffs.max_degree().max(phi.max_degree());
    Ok(Some(l.coeffs.with_degree(top).dot(&phi.with_degree(top))))
}

/// Generator check with antithetic pairs `(B, -B)`; the limit and its error come from
/// per-pair least-squares intercepts over `t_grid`.
pub fn generator_special_case(
    y: &TemperedDistribution,
    coeffs: &CoefficientMatrix,
    phi: &HermiteCoeffs,
    t_grid: &[f64],
    pairs: usize,
    seed: u64,
    config: &EvolutionConfig,
) -> Result<GeneratorReport> {
    let d = y.dim();
    if pairs < 2 {
        return Err(Error::InvalidInput("need at least 2 antithetic pairs".into()));
    }
    let steps = grid_steps(t_grid, config.dt)?;
    if steps[0] == 0 {
        return Err(Error::InvalidInput("generator times must be positive".into()));
    }
    let (diffusion_part, drift_part) = generator_analytic(y, coeffs, phi)?;
    let analytic = diffusion_part + drift_part;
    let fields = ConvolvedFields::new(coeffs.clone(), y.clone())?;
    let phi_dist = TemperedDistribution::hermite(phi.clone(), 0.0);
    let origin = vec![0.0; d];
    let base = pair(&phi_dist, y, &origin)?;
    let last = *steps.last().expect("non-empty");
    let horizon = last as f64 * config.dt;
    let n = t_grid.len() as f64;
    let st: f64 = t_grid.iter().sum();
    let stt: f64 = t_grid.iter().map(|t| t * t).sum();
    let lsq: Vec<f64> = if t_grid.len() == 1 {
        vec![1.0]
    } else {
        t_grid.iter().map(|t| (stt - t * st) / (n * stt - st * st)).collect()
    };
    let per_pair: Vec<Vec<f64>> = (0..pairs as u64)
        .into_par_iter()
        .map(|m| {
            let b = BrownianPath::sample(seed, m, d, horizon, config.dt)?;
            let plus = simulate_path(&fields, &origin, &b, &config.thresholds)?;
            let minus = simulate_path(&fields, &origin, &b.negated(), &config.thresholds)?;
            let mut row = Vec::with_capacity(steps.len() + 1);
            for (&k, &t) in steps.iter().zip(t_grid) {
                let obs = |p: &PathResult| if p.is_alive(k) { pair(&phi_dist, y, p.state(k)) } else { Ok(0.0) };
                row.push((0.5 * (obs(&plus)? + obs(&minus)?) - base) / t);
            }
            let intercept = row.iter().zip(&lsq).map(|(v, w)| v * w).sum();
            row.push(intercept);
            Ok(row)
        })
        .collect::<Result<_>>()?;
    let acc = accumulate(&per_pair);
    let k = t_grid.len();
    let limit = acc.mean[k];
    let limit_error = acc.se[k];
    Ok(GeneratorReport {
        times: t_grid.to_vec(),
        quotients: acc.mean[..k].to_vec(),
        quotient_errors: acc.se[..k].to_vec(),
        limit,
        limit_error,
        analytic,
        diffusion_part,
        drift_part,
        apply_l_value: apply_l_value(y, coeffs, phi)?,
        agree: (limit - analytic).abs() <= 3.0 * limit_error + 1e-12 * analytic.abs().max(1.0),
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::distribution::{SmoothFunction, SmoothKind};
    use crate::sde::{ConstantFields, FnFields};
    use approx::assert_abs_diff_eq;

    fn unit_gaussian() -> TemperedDistribution {
        TemperedDistribution::gaussian(vec![0.0], 1.0, 1.0).unwrap()
    }

    fn grid(n: usize, step: f64) -> Vec<f64> {
        (0..n).map(|k| k as f64 * step).collect()
    }

    #[test]
    fn deterministic_drift_gives_point_masses() {
        let coeffs = CoefficientMatrix::constant(1, 0.0, 0.7);
        let config = EvolutionConfig::new(8, 0.01);
        let ks = estimate_kernel(&[0.5], &unit_gaussian(), &coeffs, &[0.0, 0.5, 1.0], 20, 1, &config).unwrap();
        for k in &ks {
            for m in 0..k.len() {
                assert_abs_diff_eq!(k.sample(m).unwrap()[0], 0.5 + 0.7 * k.t, epsilon = 1e-12);
            }
            assert_eq!(k.weight_fraction(), (1, 20));
            assert_eq!(k.alive_fraction(), 1.0);
        }
    }

    #[test]
    fn brownian_kernel_moments() {
        let (s, t, m) = (1.3, 0.8, 4000);
        let fields = ConstantFields::new(1, s, 0.0);
        let config = EvolutionConfig::new(8, 0.02);
        let k = estimate_kernel_with(&fields, &[0.25], &[t], m, 3, &config).unwrap().remove(0);
        let var = s * s * t;
        assert!((k.mean()[0] - 0.25).abs() < 3.0 * s * (t / m as f64).sqrt());
        assert!((k.variance()[0] - var).abs() < 3.0 * var * (2.0 / m as f64).sqrt());
    }

    #[test]
    fn quadratic_drift_sends_mass_to_the_cemetery() {
        let fields =
            FnFields::new(1, |_: &[f64], s: &mut [f64]| s[0] = 0.0, |x: &[f64], b: &mut [f64]| b[0] = x[0] * x[0]);
        let mut config = EvolutionConfig::new(4, 1e-3);
        config.thresholds = vec![10.0, 100.0];
        let ks = estimate_kernel_with(&fields, &[1.0], &[0.5, 2.0], 5, 0, &config).unwrap();
        assert_eq!(ks[0].cemetery_mass(), 0.0);
        assert_eq!(ks[1].cemetery_mass(), 1.0);
        let mut buf = Vec::new();
        write_kernels_csv(&ks, &mut buf).unwrap();
        let text = String::from_utf8(buf).unwrap();
        assert!(text.starts_with("t,x_1,alive\n"));
        assert!(text.contains("2.0,inf,0"));
    }

    #[test]
    fn psi_at_zero_is_exact_and_zero_fields_freeze_psi() {
        let y = unit_gaussian();
        let config = EvolutionConfig::new(10, 0.01);
        let report = estimate_psi(&y, &CoefficientMatrix::zero(1), &grid(6, 0.1), 50, 2, &config).unwrap();
        let exact = projection(&y, &[0.0], report.scheme()).unwrap();
        for c in &report.coeffs {
            assert_eq!(c.as_slice(), exact.values());
        }
        let table = evolution_residual(&report, &y, &CoefficientMatrix::zero(1)).unwrap();
        for row in table.differential.iter().chain(&table.integrated) {
            assert!(row.residual <= 1e-12, "{row:?}");
        }
    }

    #[test]
    fn heat_smoothing_of_a_gaussian() {
        let y = unit_gaussian();
        let s: f64 = 0.8;
        let coeffs = CoefficientMatrix::constant(1, s, 0.0);
        let config = EvolutionConfig::new(9, 0.01);
        let times = grid(6, 0.1);
        let report = estimate_psi(&y, &coeffs, &times, 3000, 4, &config).unwrap();
        for (i, t) in times.iter().enumerate() {
            let exact = TemperedDistribution::gaussian(vec![0.0], 1.0 + s * s * t, 1.0).unwrap();
            let exact = projection(&exact, &[0.0], report.scheme()).unwrap();
            for (k, (a, b)) in report.coeffs[i].iter().zip(exact.values()).enumerate() {
                assert!((a - b).abs() <= 4.0 * report.std_errors[i][k] + 1e-14, "t={t} k={k}: {a} vs {b}");
            }
            assert_abs_diff_eq!(report.mass[i], 1.0, epsilon = 2e-2);
        }
        let dt_errors = report.dt_errors.as_ref().unwrap();
        assert!(dt_errors.iter().flatten().all(|e| *e < 1e-12));
        let table = evolution_residual(&report, &y, &coeffs).unwrap();
        assert!(table.within_budget, "{table:?}");
    }

    #[test]
    fn frozen_fields_make_psi_linear_in_y() {
        let y = unit_gaussian();
        let y2 = TemperedDistribution::gaussian(vec![0.0], 1.0, 2.0).unwrap();
        let coeffs = CoefficientMatrix::new(
            vec![TemperedDistribution::smooth(
                SmoothKind::Cosine { offset: 1.0, amplitude: 0.3, frequency: vec![1.0], phase: 0.0 },
                1,
            )
            .unwrap()],
            vec![TemperedDistribution::constant(0.0, 1)],
        )
        .unwrap();
        let fields = ConvolvedFields::new(coeffs.clone(), y.clone()).unwrap();
        let config = EvolutionConfig::new(6, 0.02);
        let times = [0.0, 0.2, 0.4];
        let a = estimate_psi_with(&fields, &y, &times, 40, 5, &config).unwrap();
        let b = estimate_psi_with(&fields, &y2, &times, 40, 5, &config).unwrap();
        for (ca, cb) in a.coeffs.iter().zip(&b.coeffs) {
            for (u, v) in ca.iter().zip(cb) {
                assert_eq!(2.0 * u, *v);
            }
        }
        let c = estimate_psi(&y2, &coeffs, &times, 40, 5, &config).unwrap();
        let gap: f64 = c.coeffs[2].iter().zip(&b.coeffs[2]).map(|(u, v)| (u - v).abs()).sum();
        assert!(gap > 1e-3);
    }

    #[test]
    fn explosion_is_a_hypothesis_violation() {
        let y = TemperedDistribution::dirac(vec![0.0]);
        let coeffs = CoefficientMatrix::new(
            vec![TemperedDistribution::constant(0.0, 1)],
            vec![TemperedDistribution::smooth(
                SmoothKind::Polynomial { axis: 0, coefficients: vec![1.0, 0.0, 1.0] },
                1,
            )
            .unwrap()],
        )
        .unwrap();
        let mut config = EvolutionConfig::new(4, 1e-3);
        config.thresholds = vec![10.0];
        let err = estimate_psi(&y, &coeffs, &[0.0, 2.0], 2, 0, &config).unwrap_err();
        assert!(matches!(err, Error::Hypothesis(_)));
    }

    #[test]
    fn adjoint_with_constant_fields_is_exact() {
        let scheme = TruncationScheme::new(1, 6).unwrap();
        let phi = HermiteCoeffs::from_values(scheme, vec![0.3, -0.2, 0.5, 0.1, 0.0, -0.4, 0.2]).unwrap();
        let out = adjoint_apply(&ConstantFields::new(1, 1.0, 0.0), &phi).unwrap();
        let second = derivative_coeffs(&derivative_coeffs(&phi, 0), 0).scale(0.5);
        assert_eq!(out.coeffs, second);
        assert_eq!(out.reprojection_error, 0.0);
        let zero = adjoint_apply(&ConstantFields::new(1, 1.0, 0.3), &HermiteCoeffs::zeros(scheme)).unwrap();
        assert!(zero.coeffs.values().iter().all(|v| *v == 0.0));
    }

    #[test]
    fn adjoint_duality_with_smooth_fields() {
        use rand::Rng;
        let fields = FnFields::new(
            1,
            |x: &[f64], s: &mut [f64]| s[0] = 0.8 + 0.3 * x[0].cos(),
            |x: &[f64], b: &mut [f64]| b[0] = 0.5 * x[0].sin(),
        );
        let scheme = TruncationScheme::new(1, 8).unwrap();
        let mut rng = crate::rng::stream_rng(7, 0);
        let mut random =
            || HermiteCoeffs::from_values(scheme, (0..9).map(|_| rng.random_range(-1.0..1.0)).collect()).unwrap();
        let phi = random();
        let adj = adjoint_apply(&fields, &phi).unwrap();
        assert!(!adj.is_flagged(1e-8));
        let quad = QuadratureRule::new(120).unwrap();
        for _ in 0..5 {
            let f = random();
            let f1 = derivative_coeffs(&f, 0);
            let f2 = derivative_coeffs(&f1, 0);
            let lhs = adj.coeffs.dot(&f.with_degree(adj.coeffs.max_degree()));
            let rhs = quad.integrate(1, |x| {
                let mut s = [0.0];
                let mut b = [0.0];
                fields.eval(x, &mut s, &mut b).unwrap();
                phi.reconstruct(x) * (0.5 * s[0] * s[0] * f2.reconstruct(x) + b[0] * f1.reconstruct(x))
            });
            assert_abs_diff_eq!(lhs, rhs, epsilon = 1e-7);
        }
    }

    #[test]
    fn forward_rejects_small_q() {
        let err = forward_residual(
            &[0.0],
            &unit_gaussian(),
            &CoefficientMatrix::constant(1, 1.0, 0.0),
            &[0.0, 0.1],
            10,
            0.2,
            0,
            &EvolutionConfig::new(6, 0.01),
            &default_panel(1).unwrap(),
        )
        .unwrap_err();
        assert!(err.to_string().contains("q must exceed d/4"));
    }

    #[test]
    fn forward_residual_for_brownian_motion() {
        let panel = default_panel(1).unwrap();
        let config = EvolutionConfig::new(8, 0.01);
        let report = forward_residual(
            &[0.0],
            &unit_gaussian(),
            &CoefficientMatrix::constant(1, 1.0, 0.0),
            &grid(6, 0.1),
            2000,
            0.5,
            9,
            &config,
            &panel,
        )
        .unwrap();
        assert!(report.within_budget, "{report:#?}");
        for row in report.panel.iter().filter(|r| r.t == 0.0) {
            assert_eq!(row.residual, 0.0);
        }
        // E delta_{X_t} against h_0 is E h_0(X_t) for X_t ~ N(0, t).
        let t: f64 = 0.5;
        let h0 = std::f64::consts::PI.powf(-0.25) / (1.0 + t).sqrt();
        assert!((report.kernel_coeffs[5][0] - h0).abs() < 0.01);
        assert!(report.kernel_norms.iter().all(|n| n.is_finite()));
    }

    #[test]
    fn basis_jets_match_coefficient_derivatives() {
        let scheme = TruncationScheme::new(2, 4).unwrap();
        let indices = scheme.indices();
        let x = [0.3, -0.7];
        let (v, g, h) = basis_jets(&x, scheme, &indices);
        for (m, k) in indices.iter().enumerate() {
            let c = HermiteCoeffs::unit(scheme, k).unwrap();
            assert_abs_diff_eq!(v[m], c.reconstruct(&x), epsilon = 1e-13);
            for i in 0..2 {
                let ci = derivative_coeffs(&c, i);
                assert_abs_diff_eq!(g[m * 2 + i], ci.reconstruct(&x), epsilon = 1e-13);
                for j in 0..2 {
                    let cij = derivative_coeffs(&ci, j);
                    assert_abs_diff_eq!(h[(m * 2 + i) * 2 + j], cij.reconstruct(&x), epsilon = 1e-12);
                }
            }
        }
    }

    #[test]
    fn semigroup_consistency() {
        let y = unit_gaussian();
        let coeffs = CoefficientMatrix::constant(1, 1.0, 0.2);
        let config = EvolutionConfig::new(6, 0.02);
        let one = semigroup_estimate(&Observable::Alive, &y, &coeffs, 0.2, 0.2, 50, 5, 3, &config).unwrap();
        assert_eq!((one.single, one.two_stage, one.alive_fraction), (1.0, 1.0, 1.0));
        let h0 = Observable::Pairing {
            label: "h_0".into(),
            phi: TemperedDistribution::hermite(
                HermiteCoeffs::unit(TruncationScheme::new(1, 0).unwrap(), &MultiIndex::zero(1)).unwrap(),
                0.0,
            ),
        };
        let r = semigroup_estimate(&h0, &y, &coeffs, 0.2, 0.2, 400, 20, 3, &config).unwrap();
        assert!(r.agree, "{r:?}");
        let r0 = semigroup_estimate(&h0, &y, &coeffs, 0.0, 0.4, 400, 1, 3, &config).unwrap();
        assert!(r0.agree, "{r0:?}");
        assert!(r0.two_stage_error > 0.0);
    }

    #[test]
    fn generator_matches_the_gaussian_closed_form() {
        let y = unit_gaussian();
        let scheme = TruncationScheme::new(1, 4).unwrap();
        let phi = HermiteCoeffs::from_values(scheme, vec![0.5, 0.4, -0.3, 0.2, 0.1]).unwrap();
        let config = EvolutionConfig::new(4, 1e-3);
        let zero =
            generator_special_case(&y, &CoefficientMatrix::zero(1), &phi, &[0.01, 0.02], 10, 1, &config).unwrap();
        assert_eq!((zero.analytic, zero.limit), (0.0, 0.0));

        let (s, b) = (0.9, 0.4);
        let coeffs = CoefficientMatrix::constant(1, s, b);
        let report = generator_special_case(&y, &coeffs, &phi, &[0.01, 0.02, 0.04], 4000, 2, &config).unwrap();
        // Oracle: 1/2 s^2 <phi, y''> - b <phi, y'> by quadrature of the density's derivatives.
        let quad = QuadratureRule::new(80).unwrap();
        let g = |x: f64| (-x * x / 2.0).exp() / (2.0 * std::f64::consts::PI).sqrt();
        let oracle = quad.integrate(1, |x| {
            let r = x[0];
            phi.reconstruct(x) * (0.5 * s * s * (r * r - 1.0) * g(r) + b * r * g(r))
        });
        assert_abs_diff_eq!(report.analytic, oracle, epsilon = 1e-12);
        assert_abs_diff_eq!(report.apply_l_value.unwrap(), oracle, epsilon = 1e-10);
        assert!(report.agree, "{report:?}");
        let flipped = generator_analytic(&y, &CoefficientMatrix::constant(1, s, -b), &phi).unwrap();
        assert_eq!(flipped.1, -report.drift_part);
        assert_eq!(flipped.0, report.diffusion_part);
    }

    #[test]
    fn convolution_flags_dominating_samples() {
        let scheme = TruncationScheme::new(1, 2).unwrap();
        let mut xs = vec![0.0; 20];
        xs[3] = 1.0;
        let kernel = EmpiricalKernel::from_samples(0.0, 1, xs).unwrap();
        let spike = |x: &[f64]| {
            Ok(HermiteCoeffs::zeros(scheme)
                .add_scaled(1e9 * x[0] + 1e-3, &HermiteCoeffs::unit(scheme, &MultiIndex::zero(1)).unwrap()))
        };
        assert!(nonlinear_convolution(spike, &kernel, scheme, 0.0).unwrap().growth_flag);
        let smooth = SmoothFunction::new(SmoothKind::Bump { amplitude: 1.0, width: 1.0 }, 1).unwrap();
        let y = TemperedDistribution::Smooth(smooth);
        assert!(!nonlinear_convolution(translates(&y, scheme), &kernel, scheme, 0.0).unwrap().growth_flag);
    }
}
