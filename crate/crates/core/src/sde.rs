//! Euler-Maruyama for `dX = sigma_bar(X) dB + b_bar(X) dt` with explosion detection.
//!
//! Brownian increments come from seeded streams so that the same path can be
//! replayed, refined by Brownian bridges, or coarsened for strong-error studies.

use std::io::Write;

use rand_distr::{Distribution, StandardNormal};
use rayon::prelude::*;
use serde::Serialize;

use crate::distribution::ConvolvedFields;
use crate::error::{Error, Result};
use crate::hermite::format_float;
use crate::rng::{derive_seed, stream_rng, tags};

/// Default explosion thresholds.
pub const DEFAULT_THRESHOLDS: [f64; 4] = [1e1, 1e2, 1e3, 1e4];

/// Coefficient fields of the finite-dimensional equation.
pub trait Fields: Sync {
    fn dim(&self) -> usize;

    /// Fill row-major `sigma_bar(x)` (d x d) and `b_bar(x)` (d).
    fn eval(&self, x: &[f64], sigma: &mut [f64], drift: &mut [f64]) -> Result<()>;

    /// Row-major `(sigma, b)` when the fields do not depend on `x`.
    fn constant(&self) -> Option<(Vec<f64>, Vec<f64>)> {
        None
    }
}

impl Fields for ConvolvedFields {
    fn dim(&self) -> usize {
        ConvolvedFields::dim(self)
    }

    fn eval(&self, x: &[f64], sigma: &mut [f64], drift: &mut [f64]) -> Result<()> {
        ConvolvedFields::eval(self, x, sigma, drift)
    }

    fn constant(&self) -> Option<(Vec<f64>, Vec<f64>)> {
        self.as_constant().map(|(s, b)| (s.to_vec(), b.to_vec()))
    }
}

/// Fields that do not depend on the state.
#[derive(Clone, Debug, PartialEq)]
pub struct ConstantFields {
    pub sigma: Vec<f64>,
    pub drift: Vec<f64>,
}

impl ConstantFields {
    /// `sigma_bar = s I`, `b_bar = (b, ..., b)`.
    pub fn new(dim: usize, s: f64, b: f64) -> Self {
        let sigma = (0..dim * dim).map(|k| if k % (dim + 1) == 0 { s } else { 0.0 }).collect();
        ConstantFields { sigma, drift: vec![b; dim] }
    }
}

impl Fields for ConstantFields {
    fn dim(&self) -> usize {
        self.drift.len()
    }

    fn eval(&self, _x: &[f64], sigma: &mut [f64], drift: &mut [f64]) -> Result<()> {
        sigma.copy_from_slice(&self.sigma);
        drift.copy_from_slice(&self.drift);
        Ok(())
    }

    fn constant(&self) -> Option<(Vec<f64>, Vec<f64>)> {
        Some((self.sigma.clone(), self.drift.clone()))
    }
}

/// Fields given by two closures.
pub struct FnFields<S, B> {
    dim: usize,
    sigma: S,
    drift: B,
}

impl<S, B> FnFields<S, B>
where
    S: Fn(&[f64], &mut [f64]) + Sync,
    B: Fn(&[f64], &mut [f64]) + Sync,
{
    pub fn new(dim: usize, sigma: S, drift: B) -> Self {
        FnFields { dim, sigma, drift }
    }
}

impl<S, B> Fields for FnFields<S, B>
where
    S: Fn(&[f64], &mut [f64]) + Sync,
    B: Fn(&[f64], &mut [f64]) + Sync,
{
    fn dim(&self) -> usize {
        self.dim
    }

    fn eval(&self, x: &[f64], sigma: &mut [f64], drift: &mut [f64]) -> Result<()> {
        (self.sigma)(x, sigma);
        (self.drift)(x, drift);
        Ok(())
    }
}

/// One-dimensional fields from scalar functions.
pub fn scalar_fields<S, B>(
    sigma: S,
    drift: B,
) -> FnFields<impl Fn(&[f64], &mut [f64]) + Sync, impl Fn(&[f64], &mut [f64]) + Sync>
where
    S: Fn(f64) -> f64 + Sync,
    B: Fn(f64) -> f64 + Sync,
{
    FnFields::new(
        1,
        move |x: &[f64], s: &mut [f64]| s[0] = sigma(x[0]),
        move |x: &[f64], b: &mut [f64]| b[0] = drift(x[0]),
    )
}

/// A sampled Brownian path on a uniform grid.
///
/// Increments live on the lattice `quantum * Z`, with `quantum` a power of two about
/// `2^-40 sqrt(dt)` of the base grid. Sums of lattice values of this size are exact in
/// `f64`, which makes bridge refinement and pairwise coarsening exact inverses.
#[derive(Clone, Debug, PartialEq)]
pub struct BrownianPath {
    horizon: f64,
    dt: f64,
    dim: usize,
    quantum: f64,
    /// Step-major: increment of axis `a` over step `k` at `k * dim + a`.
    increments: Vec<f64>,
    seed: u64,
    path_id: u64,
    level: u32,
}

fn step_count(horizon: f64, dt: f64) -> Result<usize> {
    if !(horizon > 0.0 && dt > 0.0 && horizon.is_finite()) {
        return Err(Error::InvalidInput("horizon and dt must be positive".into()));
    }
    let steps = (horizon / dt).round();
    if (steps * dt - horizon).abs() > 1e-9 * horizon {
        return Err(Error::InvalidInput(format!("dt = {dt} does not divide T = {horizon}")));
    }
    Ok(steps as usize)
}

fn quantum_for(dt: f64) -> f64 {
    2f64.powi(dt.sqrt().log2().floor() as i32 - 40)
}

fn snap(v: f64, quantum: f64) -> f64 {
    (v / quantum).round() * quantum
}

impl BrownianPath {
    /// Increments `N(0, dt)` from stream `path_id` of the Brownian lineage of `seed`.
    pub fn sample(seed: u64, path_id: u64, dim: usize, horizon: f64, dt: f64) -> Result<Self> {
        let steps = step_count(horizon, dt)?;
        let mut rng = stream_rng(derive_seed(seed, &[tags::BROWNIAN]), path_id);
        let scale = dt.sqrt();
        let quantum = quantum_for(dt);
        let increments = (0..steps * dim)
            .map(|_| {
                let z: f64 = StandardNormal.sample(&mut rng);
                snap(scale * z, quantum)
            })
            .collect();
        Ok(BrownianPath { horizon, dt, dim, quantum, increments, seed, path_id, level: 0 })
    }

    /// A path with prescribed increments, snapped onto the lattice.
    pub fn from_increments(horizon: f64, dim: usize, increments: Vec<f64>) -> Result<Self> {
        if dim == 0 || increments.is_empty() || !increments.len().is_multiple_of(dim) {
            return Err(Error::InvalidInput("increments must fill whole steps".into()));
        }
        let dt = horizon / (increments.len() / dim) as f64;
        let quantum = quantum_for(dt);
        let increments = increments.into_iter().map(|v| snap(v, quantum)).collect();
        Ok(BrownianPath { horizon, dt, dim, quantum, increments, seed: 0, path_id: 0, level: 0 })
    }

    /// The mirrored path `-B`, for antithetic sampling.
    pub fn negated(&self) -> Self {
        let mut out = self.clone();
        out.increments.iter_mut().for_each(|v| *v = -*v);
        out
    }

    pub fn horizon(&self) -> f64 {
        self.horizon
    }

    pub fn dt(&self) -> f64 {
        self.dt
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn steps(&self) -> usize {
        self.increments.len() / self.dim
    }

    pub fn level(&self) -> u32 {
        self.level
    }

    pub fn path_id(&self) -> u64 {
        self.path_id
    }

    pub fn increments(&self) -> &[f64] {
        &self.increments
    }

    pub fn increment(&self, step: usize) -> &[f64] {
        &self.increments[step * self.dim..(step + 1) * self.dim]
    }

    /// `B_{t_k}` for every grid time, step-major.
    pub fn cumulative(&self) -> Vec<f64> {
        let mut out = vec![0.0; self.increments.len() + self.dim];
        for k in 0..self.steps() {
            for a in 0..self.dim {
                out[(k + 1) * self.dim + a] = out[k * self.dim + a] + self.increments[k * self.dim + a];
            }
        }
        out
    }

    /// Halve the step `levels` times by Brownian-bridge midpoints.
    ///
    /// The two halves of every increment add up to it exactly, so [`Self::coarsen`] undoes
    /// the refinement bit for bit.
    pub fn refine(&self, levels: u32) -> Self {
        let mut path = self.clone();
        for _ in 0..levels {
            path = path.refine_once();
        }
        path
    }

    fn refine_once(&self) -> Self {
        let level = self.level + 1;
        let lineage = derive_seed(self.seed, &[tags::BRIDGE, level as u64]);
        let mut rng = stream_rng(lineage, self.path_id);
        let half_sd = (self.dt / 4.0).sqrt();
        let mut out = vec![0.0; 2 * self.increments.len()];
        for k in 0..self.steps() {
            for a in 0..self.dim {
                let total = self.increments[k * self.dim + a];
                let z: f64 = StandardNormal.sample(&mut rng);
                let first = snap(0.5 * total + half_sd * z, self.quantum);
                let second = total - first;
                out[2 * k * self.dim + a] = first;
                out[(2 * k + 1) * self.dim + a] = second;
            }
        }
        BrownianPath {
            horizon: self.horizon,
            dt: self.dt / 2.0,
            dim: self.dim,
            quantum: self.quantum,
            increments: out,
            seed: self.seed,
            path_id: self.path_id,
            level,
        }
    }

    /// Sum adjacent pairs of increments `levels` times.
    pub fn coarsen(&self, levels: u32) -> Result<Self> {
        let mut path = self.clone();
        for _ in 0..levels {
            if !path.steps().is_multiple_of(2) {
                return Err(Error::InvalidInput("cannot coarsen an odd number of steps".into()));
            }
            let d = path.dim;
            let increments = (0..path.steps() / 2)
                .flat_map(|k| {
                    let p = &path;
                    (0..d).map(move |a| p.increments[2 * k * d + a] + p.increments[(2 * k + 1) * d + a])
                })
                .collect();
            path = BrownianPath {
                horizon: path.horizon,
                dt: path.dt * 2.0,
                dim: d,
                quantum: path.quantum,
                increments,
                seed: path.seed,
                path_id: path.path_id,
                level: path.level.saturating_sub(1),
            };
        }
        Ok(path)
    }
}

/// A simulated trajectory.
#[derive(Clone, Debug, Serialize)]
pub struct PathResult {
    pub dim: usize,
    pub times: Vec<f64>,
    /// Step-major states; `+inf` marks the cemetery.
    pub states: Vec<f64>,
    pub thresholds: Vec<f64>,
    /// First grid time with `|X| >= n` for each threshold `n`.
    pub hitting_times: Vec<Option<f64>>,
    pub exploded: bool,
    /// First grid time in the cemetery.
    pub eta: Option<f64>,
    /// `[eta, eta + dt]`.
    pub eta_interval: Option<(f64, f64)>,
    /// Why the path was killed, when it was not a threshold crossing.
    pub diagnostic: Option<String>,
    /// Largest absolute field entry seen along the alive part of the path.
    pub max_field: f64,
}

impl PathResult {
    pub fn steps(&self) -> usize {
        self.times.len() - 1
    }

    pub fn state(&self, k: usize) -> &[f64] {
        &self.states[k * self.dim..(k + 1) * self.dim]
    }

    pub fn is_alive(&self, k: usize) -> bool {
        self.state(k)[0].is_finite()
    }

    /// Final state, `None` in the cemetery.
    pub fn terminal(&self) -> Option<&[f64]> {
        let k = self.steps();
        self.is_alive(k).then(|| self.state(k))
    }

    /// Number of grid points strictly before the cemetery.
    pub fn alive_len(&self) -> usize {
        (0..self.times.len()).take_while(|&k| self.is_alive(k)).count()
    }

    /// CSV with columns `t, X_1..X_d, alive`.
    pub fn write_csv<W: Write>(&self, out: W) -> Result<()> {
        let mut w = csv::Writer::from_writer(out);
        let mut header = vec!["t".to_string()];
        header.extend((1..=self.dim).map(|a| format!("X_{a}")));
        header.push("alive".into());
        w.write_record(&header)?;
        for (k, t) in self.times.iter().enumerate() {
            let mut row = vec![format_float(*t)];
            row.extend(self.state(k).iter().map(|v| format_float(*v)));
            row.push(if self.is_alive(k) { "1" } else { "0" }.into());
            w.write_record(&row)?;
        }
        w.flush()?;
        Ok(())
    }
}

fn norm(x: &[f64]) -> f64 {
    x.iter().map(|v| v * v).sum::<f64>().sqrt()
}

/// Euler-Maruyama along `brownian` from `x0`.
///
/// The path is sent to the cemetery at the first grid time where `|X|` reaches the largest
/// threshold, or where a field value is not finite.
pub fn simulate_path<F: Fields + ?Sized>(
    fields: &F,
    x0: &[f64],
    brownian: &BrownianPath,
    thresholds: &[f64],
) -> Result<PathResult> {
    let d = fields.dim();
    if x0.len() != d || brownian.dim() != d {
        return Err(Error::DimensionMismatch {
            expected: d,
            got: if x0.len() != d { x0.len() } else { brownian.dim() },
        });
    }
    if thresholds.is_empty() || thresholds.windows(2).any(|w| w[1] <= w[0]) || thresholds[0] <= 0.0 {
        return Err(Error::InvalidInput("thresholds must be positive and strictly increasing".into()));
    }
    let steps = brownian.steps();
    let dt = brownian.dt();
    let times: Vec<f64> = (0..=steps).map(|k| k as f64 * dt).collect();
    let mut states = vec![f64::INFINITY; (steps + 1) * d];
    let mut hitting_times = vec![None; thresholds.len()];
    let largest = *thresholds.last().expect("non-empty");
    let mut x = x0.to_vec();
    let mut sigma = vec![0.0; d * d];
    let mut drift = vec![0.0; d];
    let mut max_field = 0.0f64;
    let mut eta = None;
    let mut exploded = false;
    let mut diagnostic = None;

    for k in 0..=steps {
        let r = norm(&x);
        for (h, n) in hitting_times.iter_mut().zip(thresholds) {
            if h.is_none() && r >= *n {
                *h = Some(times[k]);
            }
        }
        if r >= largest || !r.is_finite() {
            exploded = true;
            eta = Some(times[k]);
            break;
        }
        states[k * d..(k + 1) * d].copy_from_slice(&x);
        if k == steps {
            break;
        }
        let ok = fields.eval(&x, &mut sigma, &mut drift);
        if let Err(e) = ok {
            diagnostic = Some(format!("field evaluation failed at t = {}: {e}", times[k]));
        } else if sigma.iter().chain(&drift).any(|v| !v.is_finite()) {
            diagnostic = Some(format!("non-finite field value at t = {}", times[k]));
        }
        if diagnostic.is_some() {
            states[k * d..(k + 1) * d].fill(f64::INFINITY);
            eta = Some(times[k]);
            break;
        }
        max_field = sigma.iter().chain(&drift).fold(max_field, |m, v| m.max(v.abs()));
        let db = brownian.increment(k);
        for i in 0..d {
            let mut dx = drift[i] * dt;
            for j in 0..d {
                dx += sigma[i * d + j] * db[j];
            }
            x[i] += dx;
        }
    }
    Ok(PathResult {
        dim: d,
        times,
        states,
        thresholds: thresholds.to_vec(),
        hitting_times,
        exploded,
        eta,
        eta_interval: if exploded { eta.map(|t| (t, t + dt)) } else { None },
        diagnostic,
        max_field,
    })
}

/// Simulation settings shared by ensembles.
#[derive(Clone, Debug, Serialize)]
pub struct SimulationConfig {
    pub horizon: f64,
    pub dt: f64,
    pub thresholds: Vec<f64>,
    pub seed: u64,
}

impl SimulationConfig {
    pub fn new(horizon: f64, dt: f64, seed: u64) -> Self {
        SimulationConfig { horizon, dt, thresholds: DEFAULT_THRESHOLDS.to_vec(), seed }
    }
}

/// `paths` independent trajectories from `x0`; path `m` uses Brownian stream `m`.
pub fn simulate_ensemble<F: Fields + ?Sized>(
    fields: &F,
    x0: &[f64],
    config: &SimulationConfig,
    paths: usize,
) -> Result<Vec<PathResult>> {
    (0..paths as u64)
        .into_par_iter()
        .map(|m| {
            let b = BrownianPath::sample(config.seed, m, fields.dim(), config.horizon, config.dt)?;
            simulate_path(fields, x0, &b, &config.thresholds)
        })
        .collect()
}

/// Explosion time from two resolutions of the same path, `2 eta(dt/2) - eta(dt)`.
///
/// The plain grid estimate carries a first-order bias for blow-up of the type `x' = x^2`;
/// the extrapolation removes its leading term. Returns `None` when either run stays finite.
pub fn explosion_time_richardson<F: Fields + ?Sized>(
    fields: &F,
    x0: &[f64],
    brownian: &BrownianPath,
    thresholds: &[f64],
) -> Result<Option<f64>> {
    let coarse = simulate_path(fields, x0, brownian, thresholds)?;
    let fine = simulate_path(fields, x0, &brownian.refine(1), thresholds)?;
    Ok(match (coarse.exploded.then_some(coarse.eta).flatten(), fine.exploded.then_some(fine.eta).flatten()) {
        (Some(a), Some(b)) => Some(2.0 * b - a),
        _ => None,
    })
}

/// Strong error against a refined reference on the same noise.
#[derive(Clone, Debug, Serialize)]
pub struct StrongErrorTable {
    pub dts: Vec<f64>,
    /// Mean over paths of `max_t |X^dt_t - X^ref_t|` on the coarsest grid.
    pub errors: Vec<f64>,
    pub reference_dt: f64,
    /// Fitted log-log slope of error against dt.
    pub order: f64,
    /// Paths dropped because some resolution left the alive region.
    pub dropped: usize,
}

/// Least-squares slope of `ln y` against `ln x`.
pub fn loglog_slope(xs: &[f64], ys: &[f64]) -> f64 {
    let lx: Vec<f64> = xs.iter().map(|v| v.ln()).collect();
    let ly: Vec<f64> = ys.iter().map(|v| v.ln()).collect();
    let n = lx.len() as f64;
    let mx = lx.iter().sum::<f64>() / n;
    let my = ly.iter().sum::<f64>() / n;
    let sxy: f64 = lx.iter().zip(&ly).map(|(x, y)| (x - mx) * (y - my)).sum();
    let sxx: f64 = lx.iter().map(|x| (x - mx).powi(2)).sum();
    sxy / sxx
}

/// Strong error of Euler-Maruyama for each `dt` in `dts` (descending, each halving the
/// previous a whole number of times), measured against the same noise refined
/// `extra_levels` times beyond the finest `dt`.
pub fn strong_error<F: Fields + ?Sized>(
    fields: &F,
    x0: &[f64],
    config: &SimulationConfig,
    dts: &[f64],
    paths: usize,
    extra_levels: u32,
) -> Result<StrongErrorTable> {
    if dts.len() < 2 {
        return Err(Error::InvalidInput("need at least two step sizes".into()));
    }
    let mut levels = vec![0u32];
    for w in dts.windows(2) {
        let ratio = w[0] / w[1];
        let l = ratio.log2().round();
        if l < 1.0 || (2f64.powf(l) - ratio).abs() > 1e-9 * ratio {
            return Err(Error::InvalidInput("each dt must halve the previous a whole number of times".into()));
        }
        levels.push(levels.last().expect("non-empty") + l as u32);
    }
    let finest = *levels.last().expect("non-empty") + extra_levels;
    let coarse_steps = step_count(config.horizon, dts[0])?;
    let per_path: Vec<Option<Vec<f64>>> = (0..paths as u64)
        .into_par_iter()
        .map(|m| {
            let base = BrownianPath::sample(config.seed, m, fields.dim(), config.horizon, dts[0])?;
            let reference_path = base.refine(finest);
            let reference = simulate_path(fields, x0, &reference_path, &config.thresholds)?;
            let stride_ref = 1usize << finest;
            let mut errs = Vec::with_capacity(dts.len());
            for &l in &levels {
                let run = simulate_path(fields, x0, &reference_path.coarsen(finest - l)?, &config.thresholds)?;
                let stride = 1usize << l;
                let mut worst = 0.0f64;
                for k in 0..=coarse_steps {
                    let a = run.state(k * stride);
                    let b = reference.state(k * stride_ref);
                    for (u, v) in a.iter().zip(b) {
                        let e = (u - v).abs();
                        if !e.is_finite() {
                            return Ok(None);
                        }
                        worst = worst.max(e);
                    }
                }
                errs.push(worst);
            }
            Ok(Some(errs))
        })
        .collect::<Result<_>>()?;
    let kept: Vec<&Vec<f64>> = per_path.iter().flatten().collect();
    if kept.is_empty() {
        return Err(Error::Hypothesis("every path left the alive region".into()));
    }
    let errors: Vec<f64> = (0..dts.len()).map(|i| kept.iter().map(|e| e[i]).sum::<f64>() / kept.len() as f64).collect();
    Ok(StrongErrorTable {
        dts: dts.to_vec(),
        order: loglog_slope(dts, &errors),
        errors,
        reference_dt: dts[0] / 2f64.powi(finest as i32),
        dropped: paths - kept.len(),
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_abs_diff_eq;

    #[test]
    fn constant_drift_is_exact() {
        let f = ConstantFields::new(1, 0.0, 0.5);
        let b = BrownianPath::sample(1, 0, 1, 1.0, 0.125).unwrap();
        let r = simulate_path(&f, &[2.0], &b, &DEFAULT_THRESHOLDS).unwrap();
        for (k, t) in r.times.iter().enumerate() {
            assert_eq!(r.state(k)[0], 2.0 + 0.5 * t);
        }
        assert!(!r.exploded && r.eta.is_none());
    }

    #[test]
    fn brownian_second_moment() {
        let f = ConstantFields::new(1, 1.0, 0.0);
        let t = 1.0;
        let m = 10_000;
        let runs = simulate_ensemble(&f, &[0.0], &SimulationConfig::new(t, 0.05, 5), m).unwrap();
        let mean_sq = runs.iter().map(|r| r.terminal().unwrap()[0].powi(2)).sum::<f64>() / m as f64;
        let band = 3.0 * (2.0 / m as f64).sqrt();
        assert!(mean_sq > t * (1.0 - band) && mean_sq < t * (1.0 + band), "{mean_sq}");
    }

    #[test]
    fn explosion_of_quadratic_drift() {
        let f = scalar_fields(|_| 0.0, |x| x * x);
        let thresholds = [1e1, 1e2, 1e3, 1e4, 1e5, 1e6];
        let b = BrownianPath::sample(0, 0, 1, 2.0, 1e-3).unwrap();
        let r = simulate_path(&f, &[1.0], &b, &thresholds).unwrap();
        assert!(r.exploded);
        let hits: Vec<f64> = r.hitting_times.iter().map(|h| h.unwrap()).collect();
        assert!(hits.windows(2).all(|w| w[0] <= w[1]));
        let eta = r.eta.unwrap();
        assert_eq!(eta, *hits.last().unwrap());
        let k = (eta / 1e-3).round() as usize;
        assert!(r.state(k - 1)[0].is_finite());
        assert!((k..r.times.len()).all(|j| !r.is_alive(j)));
        assert!(eta > 1.0 && eta < 1.02);
        let rich = explosion_time_richardson(&f, &[1.0], &b, &thresholds).unwrap().unwrap();
        assert!((rich - 1.0).abs() < (eta - 1.0).abs());
    }

    #[test]
    fn bad_field_kills_path() {
        let f = scalar_fields(|x| if x > 0.5 { f64::NAN } else { 0.0 }, |_| 1.0);
        let b = BrownianPath::sample(0, 0, 1, 1.0, 0.1).unwrap();
        let r = simulate_path(&f, &[0.0], &b, &DEFAULT_THRESHOLDS).unwrap();
        assert!(!r.exploded);
        assert!(r.diagnostic.as_deref().unwrap().contains("non-finite"));
        assert!(!r.is_alive(r.steps()));
        assert!(simulate_path(&f, &[0.0], &b, &[10.0, 5.0]).is_err());
    }

    #[test]
    fn refinement_is_consistent() {
        let b = BrownianPath::sample(3, 7, 2, 1.0, 0.01).unwrap();
        let fine = b.refine(3);
        assert_eq!(fine.steps(), 800);
        assert_eq!(fine.coarsen(3).unwrap().increments(), b.increments());
        assert_eq!(b.refine(3), fine);
        assert_eq!(fine.coarsen(1).unwrap().increments(), b.refine(2).increments());
    }

    #[test]
    fn bridge_variance() {
        let n = 10_000;
        let b = BrownianPath::sample(9, 0, 1, n as f64 * 0.01, 0.01).unwrap();
        let fine = b.refine(1);
        let var = fine.increments().iter().map(|v| v * v).sum::<f64>() / fine.increments().len() as f64;
        let target = 0.005;
        let band = 3.0 * target * (2.0 / fine.increments().len() as f64).sqrt();
        assert!((var - target).abs() < band, "{var}");
    }

    #[test]
    fn determinism_across_thread_counts() {
        let f = scalar_fields(|x| 0.5 + 0.2 * x.sin(), |x| -x);
        let cfg = SimulationConfig::new(1.0, 0.01, 42);
        let one = rayon::ThreadPoolBuilder::new().num_threads(1).build().unwrap();
        let four = rayon::ThreadPoolBuilder::new().num_threads(4).build().unwrap();
        let a = one.install(|| simulate_ensemble(&f, &[0.1], &cfg, 64).unwrap());
        let b = four.install(|| simulate_ensemble(&f, &[0.1], &cfg, 64).unwrap());
        for (x, y) in a.iter().zip(&b) {
            assert_eq!(x.states, y.states);
        }
    }

    #[test]
    fn trajectory_csv() {
        let f = ConstantFields::new(1, 0.0, 1.0);
        let b = BrownianPath::from_increments(1.0, 1, vec![0.0; 2]).unwrap();
        let r = simulate_path(&f, &[0.0], &b, &[0.8]).unwrap();
        let mut buf = Vec::new();
        r.write_csv(&mut buf).unwrap();
        assert_eq!(String::from_utf8(buf).unwrap(), "t,X_1,alive\n0.0,0.0,1\n0.5,0.5,1\n1.0,inf,0\n");
    }

    #[test]
    fn strong_order_for_ode() {
        let f = scalar_fields(|_| 0.0, |x| -x.sin());
        let cfg = SimulationConfig::new(1.0, 0.1, 1);
        let t = strong_error(&f, &[1.0], &cfg, &[0.1, 0.05, 0.025, 0.0125], 4, 4).unwrap();
        assert_abs_diff_eq!(t.order, 1.0, epsilon = 0.2);
    }
}
