//! The distribution-valued flow `Y_t(y) = tau_{z_t(y)} y`.
//!
//! The flow is carried by the finite-dimensional path `z_t`, which solves the
//! Euler-Maruyama recursion with fields `x -> <sigma, tau_x y>`. States are
//! produced on demand by translating `y`; observables vanish in the cemetery.

use std::io::Write;

use rayon::prelude::*;
use serde::Serialize;

use crate::distribution::{
    apply_a, apply_l, pair, projection, translate, CoefficientMatrix, ConvolvedFields, TemperedDistribution,
};
use crate::error::{Error, Result};
use crate::hermite::{derivative_coeffs, format_float, HermiteCoeffs};
use crate::sde::{loglog_slope, simulate_path, BrownianPath, PathResult, SimulationConfig};
use crate::sobolev::{sobolev_norm, SobolevElement};

/// A flow state: a translate of the initial datum, or the cemetery.
#[derive(Clone, Debug)]
pub enum FlowState {
    Alive(TemperedDistribution),
    Cemetery,
}

impl FlowState {
    pub fn is_alive(&self) -> bool {
        matches!(self, FlowState::Alive(_))
    }

    /// `<phi, state>`, zero in the cemetery.
    pub fn observe(&self, phi: &TemperedDistribution) -> Result<f64> {
        match self {
            FlowState::Alive(y) => pair(phi, y, &vec![0.0; y.dim()]),
            FlowState::Cemetery => Ok(0.0),
        }
    }
}

/// A flow trajectory together with its driving path `z_t`.
#[derive(Clone, Debug)]
pub struct FlowPath {
    y: TemperedDistribution,
    path: PathResult,
}

impl FlowPath {
    pub fn initial(&self) -> &TemperedDistribution {
        &self.y
    }

    pub fn path(&self) -> &PathResult {
        &self.path
    }

    pub fn times(&self) -> &[f64] {
        &self.path.times
    }

    /// `z_{t_k}`, `None` in the cemetery.
    pub fn z(&self, k: usize) -> Option<&[f64]> {
        self.path.is_alive(k).then(|| self.path.state(k))
    }

    /// `Y_{t_k} = tau_{z_k} y`.
    pub fn state(&self, k: usize) -> Result<FlowState> {
        match self.z(k) {
            Some(z) => Ok(FlowState::Alive(translate(&self.y, z)?.value)),
            None => Ok(FlowState::Cemetery),
        }
    }

    /// `<phi, Y_{t_k}>` computed as `<phi, tau_{z_k} y>` without materializing the translate.
    pub fn observe(&self, phi: &TemperedDistribution, k: usize) -> Result<f64> {
        match self.z(k) {
            Some(z) => pair(phi, &self.y, z),
            None => Ok(0.0),
        }
    }

    /// CSV with columns `t, z_1..z_d, alive, obs_1..obs_m`.
    pub fn write_csv<W: Write>(&self, out: W, observables: &[TemperedDistribution]) -> Result<()> {
        let d = self.path.dim;
        let mut w = csv::Writer::from_writer(out);
        let mut header = vec!["t".to_string()];
        header.extend((1..=d).map(|a| format!("z_{a}")));
        header.push("alive".into());
        header.extend((1..=observables.len()).map(|i| format!("obs_{i}")));
        w.write_record(&header)?;
        for (k, t) in self.times().iter().enumerate() {
            let mut row = vec![format_float(*t)];
            row.extend(self.path.state(k).iter().map(|v| format_float(*v)));
            row.push(if self.path.is_alive(k) { "1" } else { "0" }.into());
            for phi in observables {
                row.push(format_float(self.observe(phi, k)?));
            }
            w.write_record(&row)?;
        }
        w.flush()?;
        Ok(())
    }
}

/// Simulate `z_t(y)` from the origin and wrap it as a flow.
pub fn evolve_flow(
    y: &TemperedDistribution,
    coeffs: &CoefficientMatrix,
    brownian: &BrownianPath,
    thresholds: &[f64],
) -> Result<FlowPath> {
    let fields = ConvolvedFields::new(coeffs.clone(), y.clone())?;
    let path = simulate_path(&fields, &vec![0.0; y.dim()], brownian, thresholds)?;
    Ok(FlowPath { y: y.clone(), path })
}

/// Residual series of the weak form of the flow equation for one test element.
#[derive(Clone, Debug, Serialize)]
pub struct Residual {
    /// `R(t_k)` on the alive grid.
    pub series: Vec<f64>,
    pub max_abs: f64,
}

/// `R(t) = <phi, Y_t - y> - sum_j int <phi, A_j Y_s> dB^j - int <phi, L Y_s> ds` with left-point
/// sums on the simulation grid.
///
/// Derivatives are moved onto `phi`: `<phi, A_j Y> = sum_i <sigma_ij, Y> <d_i phi, Y>` and
/// `<phi, L Y> = 1/2 sum a_ik <d_ik phi, Y> + sum_i <b_i, Y> <d_i phi, Y>`.
pub fn strong_solution_residual(
    flow: &FlowPath,
    coeffs: &CoefficientMatrix,
    brownian: &BrownianPath,
    test_set: &[HermiteCoeffs],
) -> Result<Vec<Residual>> {
    let d = coeffs.dim();
    let y = &flow.y;
    let alive = flow.path.alive_len();
    let dt = brownian.dt();
    test_set
        .iter()
        .map(|phi| {
            let first: Vec<HermiteCoeffs> = (0..d).map(|i| derivative_coeffs(phi, i)).collect();
            let second: Vec<HermiteCoeffs> = (0..d * d).map(|ik| derivative_coeffs(&first[ik / d], ik % d)).collect();
            let as_dist = |c: &HermiteCoeffs| TemperedDistribution::hermite(c.clone(), 0.0);
            let phi_d = as_dist(phi);
            let first_d: Vec<_> = first.iter().map(as_dist).collect();
            let second_d: Vec<_> = second.iter().map(as_dist).collect();
            let origin = vec![0.0; d];
            let base = pair(&phi_d, y, &origin)?;
            let mut integral = 0.0;
            let mut series = Vec::with_capacity(alive);
            let mut max_abs = 0.0f64;
            for k in 0..alive {
                let z = flow.path.state(k);
                let r = pair(&phi_d, y, z)? - base - integral;
                max_abs = max_abs.max(r.abs());
                series.push(r);
                if k + 1 == alive {
                    break;
                }
                let sigma: Vec<f64> =
                    (0..d * d).map(|ij| pair(coeffs.sigma(ij / d, ij % d), y, z)).collect::<Result<_>>()?;
                let b: Vec<f64> = (0..d).map(|i| pair(coeffs.b(i), y, z)).collect::<Result<_>>()?;
                let grad: Vec<f64> = first_d.iter().map(|f| pair(f, y, z)).collect::<Result<_>>()?;
                let db = brownian.increment(k);
                let mut step = 0.0;
                for j in 0..d {
                    let a_j: f64 = (0..d).map(|i| sigma[i * d + j] * grad[i]).sum();
                    step += a_j * db[j];
                }
                let mut l = 0.0;
                for i in 0..d {
                    for kk in 0..d {
                        let a: f64 = (0..d).map(|j| sigma[i * d + j] * sigma[kk * d + j]).sum();
                        if a != 0.0 {
                            l += 0.5 * a * pair(&second_d[i * d + kk], y, z)?;
                        }
                    }
                    l += b[i] * grad[i];
                }
                integral += step + l * dt;
            }
            Ok(Residual { series, max_abs })
        })
        .collect()
}

/// Mean over paths of `max |R|` for each step size, on refinements of the same noise.
#[derive(Clone, Debug, Serialize)]
pub struct ResidualScaling {
    pub dts: Vec<f64>,
    pub mean_max_residual: Vec<f64>,
    pub slope: f64,
}

/// Residual scaling over `levels + 1` successive halvings of `config.dt`.
pub fn residual_scaling(
    y: &TemperedDistribution,
    coeffs: &CoefficientMatrix,
    config: &SimulationConfig,
    levels: u32,
    paths: usize,
    phi: &HermiteCoeffs,
) -> Result<ResidualScaling> {
    let per_path: Vec<Vec<f64>> = (0..paths as u64)
        .into_par_iter()
        .map(|m| {
            let base = BrownianPath::sample(config.seed, m, y.dim(), config.horizon, config.dt)?;
            (0..=levels)
                .map(|l| {
                    let b = base.refine(l);
                    let flow = evolve_flow(y, coeffs, &b, &config.thresholds)?;
                    Ok(strong_solution_residual(&flow, coeffs, &b, std::slice::from_ref(phi))?[0].max_abs)
                })
                .collect()
        })
        .collect::<Result<_>>()?;
    let dts: Vec<f64> = (0..=levels).map(|l| config.dt / 2f64.powi(l as i32)).collect();
    let mean_max_residual: Vec<f64> =
        (0..=levels as usize).map(|l| per_path.iter().map(|r| r[l]).sum::<f64>() / paths as f64).collect();
    Ok(ResidualScaling { slope: loglog_slope(&dts, &mean_max_residual), dts, mean_max_residual })
}

/// `max_t |x + z_t(tau_x y) - X_t(x)|` on the common alive window, same noise.
pub fn translation_invariance_check(
    y: &TemperedDistribution,
    coeffs: &CoefficientMatrix,
    x: &[f64],
    brownian: &BrownianPath,
    thresholds: &[f64],
) -> Result<f64> {
    let moved = translate(y, x)?.value;
    let flow = evolve_flow(&moved, coeffs, brownian, thresholds)?;
    let fields = ConvolvedFields::new(coeffs.clone(), y.clone())?;
    let direct = simulate_path(&fields, x, brownian, thresholds)?;
    let window = flow.path.alive_len().min(direct.alive_len());
    let mut worst = 0.0f64;
    for k in 0..window {
        for ((xa, za), da) in x.iter().zip(flow.path.state(k)).zip(direct.state(k)) {
            worst = worst.max((xa + za - da).abs());
        }
    }
    Ok(worst)
}

/// Tensor trapezoid grid around each state.
#[derive(Clone, Copy, Debug, Serialize)]
pub struct MassGrid {
    pub half_width: f64,
    pub spacing: f64,
}

impl Default for MassGrid {
    fn default() -> Self {
        MassGrid { half_width: 12.0, spacing: 0.05 }
    }
}

/// Mass error `|int Y_t - int y|` at each sampled alive time.
#[derive(Clone, Debug, Serialize)]
pub struct ConservationReport {
    pub mass: f64,
    pub times: Vec<f64>,
    pub errors: Vec<f64>,
    pub max_error: f64,
    /// Sampled times skipped because the flow was in the cemetery.
    pub skipped: usize,
}

/// Integrate `Y_{t_k}` on a trapezoid grid centered at `center + z_k` every `stride` steps.
pub fn conservation_check(
    flow: &FlowPath,
    grid: MassGrid,
    center: &[f64],
    stride: usize,
) -> Result<ConservationReport> {
    let y = &flow.y;
    let mass = y.mass().ok_or_else(|| Error::InvalidInput(format!("{} has no known mass", y.variant_name())))?;
    if matches!(y, TemperedDistribution::Dirac { .. }) {
        return Err(Error::InvalidInput("conservation needs a function-like initial datum".into()));
    }
    let d = y.dim();
    let n = (grid.half_width / grid.spacing).round() as i64;
    let mut times = Vec::new();
    let mut errors = Vec::new();
    let mut skipped = 0;
    for k in (0..flow.times().len()).step_by(stride.max(1)) {
        let Some(z) = flow.z(k) else {
            skipped += 1;
            continue;
        };
        let moved = translate(y, z)?.value;
        let side = (2 * n + 1) as usize;
        let mut total = 0.0;
        let mut r = vec![0.0; d];
        for cell in 0..side.pow(d as u32) {
            let mut c = cell;
            let mut w = 1.0;
            for a in 0..d {
                let i = (c % side) as i64 - n;
                c /= side;
                r[a] = center[a] + z[a] + i as f64 * grid.spacing;
                if i.abs() == n {
                    w *= 0.5;
                }
            }
            total += w * moved.eval(&r).expect("function-like");
        }
        total *= grid.spacing.powi(d as i32);
        times.push(flow.times()[k]);
        errors.push((total - mass).abs());
    }
    let max_error = errors.iter().copied().fold(0.0, f64::max);
    Ok(ConservationReport { mass, times, errors, max_error, skipped })
}

/// `|<phi_i, tau_z y>|` along a diverging sequence of points.
#[derive(Clone, Debug, Serialize)]
pub struct WeakLimitTable {
    pub distances: Vec<f64>,
    /// One row per point, one column per test element.
    pub values: Vec<Vec<f64>>,
    /// First index from which every entry stays below the tolerance, if any.
    pub settled_from: Option<usize>,
    /// Set when `y` is not compactly supported and Gaussian decay stands in for it.
    pub surrogate: bool,
}

pub fn weak_limit_check(
    y: &TemperedDistribution,
    points: &[Vec<f64>],
    test_set: &[TemperedDistribution],
    tolerance: f64,
) -> Result<WeakLimitTable> {
    let mut values = Vec::with_capacity(points.len());
    for z in points {
        values.push(test_set.iter().map(|phi| pair(phi, y, z).map(f64::abs)).collect::<Result<Vec<_>>>()?);
    }
    let below = |row: &Vec<f64>| row.iter().all(|v| *v < tolerance);
    let settled_from = (0..values.len()).find(|&i| values[i..].iter().all(below));
    let distances = points.iter().map(|z| z.iter().map(|v| v * v).sum::<f64>().sqrt()).collect();
    let surrogate = !matches!(y, TemperedDistribution::Dirac { .. });
    Ok(WeakLimitTable { distances, values, settled_from, surrogate })
}

/// Explicit Euler directly on coefficients, `Y += sum_j A_j(Y) dB^j + L(Y) dt`, cut back to
/// degree `N` after every step. Returns `Y` at every `stride`-th grid time.
///
/// This is a second strong solver, independent of the representation through `z_t`.
pub fn coefficient_euler(
    y: &HermiteCoeffs,
    coeffs: &CoefficientMatrix,
    brownian: &BrownianPath,
    stride: usize,
) -> Result<Vec<HermiteCoeffs>> {
    let d = coeffs.dim();
    if y.dim() != d || brownian.dim() != d {
        return Err(Error::DimensionMismatch { expected: d, got: y.dim() });
    }
    let n = y.max_degree();
    let stride = stride.max(1);
    let mut state = y.clone();
    let mut out = vec![state.clone()];
    for k in 0..brownian.steps() {
        let element = SobolevElement::new(state.clone(), 0.0);
        let mut next = state.add_scaled(brownian.dt(), &apply_l(coeffs, &element)?.coeffs.with_degree(n));
        let db = brownian.increment(k);
        for (j, dbj) in db.iter().enumerate() {
            next = next.add_scaled(*dbj, &apply_a(coeffs, &element, j)?.coeffs.with_degree(n));
        }
        state = next;
        if (k + 1) % stride == 0 {
            out.push(state.clone());
        }
    }
    Ok(out)
}

/// Distance between the two strong solvers on refinements of one Brownian path.
#[derive(Clone, Debug, Serialize)]
pub struct UniquenessTable {
    pub dts: Vec<f64>,
    /// `max_t ||tau_{z_t} y - Y^coef_t||_{p-1}` over the base grid times.
    pub max_distance: Vec<f64>,
    pub slope: f64,
}

/// Pathwise uniqueness in practice: the representation `tau_{z_t} y` and [`coefficient_euler`]
/// are driven by the same noise at step sizes `dt / 2^l`, `l = 0..=levels`.
pub fn uniqueness_check(
    y: &TemperedDistribution,
    coeffs: &CoefficientMatrix,
    brownian: &BrownianPath,
    levels: u32,
    degree: usize,
    p: f64,
) -> Result<UniquenessTable> {
    let scheme = crate::hermite::TruncationScheme::new(y.dim(), degree)?;
    let y0 = projection(y, &vec![0.0; y.dim()], scheme)?;
    let mut dts = Vec::new();
    let mut max_distance = Vec::new();
    for l in 0..=levels {
        let b = brownian.refine(l);
        let stride = 1usize << l;
        let flow = evolve_flow(y, coeffs, &b, &crate::sde::DEFAULT_THRESHOLDS)?;
        let direct = coefficient_euler(&y0, coeffs, &b, stride)?;
        let mut worst = 0.0f64;
        for (i, c) in direct.iter().enumerate() {
            let Some(z) = flow.z(i * stride) else { break };
            let exact = projection(y, z, scheme)?;
            worst = worst.max(sobolev_norm(&exact.add_scaled(-1.0, c), p - 1.0));
        }
        dts.push(b.dt());
        max_distance.push(worst);
    }
    Ok(UniquenessTable { slope: loglog_slope(&dts, &max_distance), dts, max_distance })
}
