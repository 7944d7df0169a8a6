//! Tempered distributions used as initial data and coefficients.
//!
//! Closed forms (Dirac mass, Gaussian density, constant function, smooth
//! function) are kept symbolic so translation is exact. A Hermite truncation is
//! translated by exact projection back onto its own truncation.
//!
//! Supported pairings `<a, tau_s b>`:
//!
//! | left \ right | Dirac | Constant | Gaussian | Hermite | Smooth |
//! |---|---|---|---|---|---|
//! | Dirac | diverges | value | density | point value | point value |
//! | Constant | | diverges | `c * mass` | `c * integral` | `c * mass` if known or decaying |
//! | Gaussian | | | closed form | exact quadrature | Gauss rule |
//! | Hermite | | | | exact quadrature | quadrature |
//! | Smooth | | | | | quadrature if one side decays |
//!
//! The table is symmetric. A constant equal to zero pairs to zero with anything.

use std::collections::HashMap;
use std::f64::consts::PI;
use std::fmt;
use std::sync::{Arc, Mutex, OnceLock};

use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::hermite::{derivative_coeffs, hermite_functions, HermiteCoeffs, QuadratureRule, TruncationScheme, MAX_DIM};
use crate::sobolev::SobolevElement;

fn gauss_rule(points: usize) -> Arc<QuadratureRule> {
    static RULES: OnceLock<Mutex<HashMap<usize, Arc<QuadratureRule>>>> = OnceLock::new();
    let cache = RULES.get_or_init(|| Mutex::new(HashMap::new()));
    let mut guard = cache.lock().expect("rule cache poisoned");
    guard.entry(points).or_insert_with(|| Arc::new(QuadratureRule::new(points).expect("positive node count"))).clone()
}

/// Visit the tensor nodes of `rule` in `dim` dimensions with product Gauss weights (for `e^{-|x|^2}`).
fn for_each_gauss_node<F: FnMut(&[f64], f64)>(rule: &QuadratureRule, dim: usize, mut visit: F) {
    let q = rule.len();
    let mut idx = [0usize; MAX_DIM];
    let mut point = [0.0; MAX_DIM];
    for _ in 0..q.pow(dim as u32) {
        let mut w = 1.0;
        for a in 0..dim {
            point[a] = rule.nodes()[idx[a]];
            w *= rule.weights()[idx[a]];
        }
        visit(&point[..dim], w);
        for a in (0..dim).rev() {
            idx[a] += 1;
            if idx[a] < q {
                break;
            }
            idx[a] = 0;
        }
    }
}

fn default_gauss_points(dim: usize) -> usize {
    match dim {
        1 => 40,
        2 => 20,
        _ => 12,
    }
}

/// A multivariate normal density scaled by `mass`.
#[derive(Clone, Debug, PartialEq)]
pub struct GaussianDensity {
    mean: Vec<f64>,
    cov: DMatrix<f64>,
    chol: DMatrix<f64>,
    mass: f64,
}

impl GaussianDensity {
    pub fn new(mean: Vec<f64>, cov: DMatrix<f64>, mass: f64) -> Result<Self> {
        let d = mean.len();
        if d == 0 || d > MAX_DIM {
            return Err(Error::InvalidInput(format!("dimension {d} not in 1..={MAX_DIM}")));
        }
        if cov.nrows() != d || cov.ncols() != d {
            return Err(Error::DimensionMismatch { expected: d, got: cov.nrows() });
        }
        if !mass.is_finite() || mean.iter().chain(cov.iter()).any(|v| !v.is_finite()) {
            return Err(Error::InvalidInput("Gaussian parameters must be finite".into()));
        }
        if (&cov - cov.transpose()).amax() > 1e-12 * cov.amax().max(1.0) {
            return Err(Error::InvalidInput("covariance must be symmetric".into()));
        }
        let chol = cov
            .clone()
            .cholesky()
            .ok_or_else(|| Error::InvalidInput("covariance must be positive definite".into()))?
            .l();
        Ok(GaussianDensity { mean, cov, chol, mass })
    }

    /// `mass * N(0, variance I)` centered at `mean`.
    pub fn isotropic(mean: Vec<f64>, variance: f64, mass: f64) -> Result<Self> {
        let d = mean.len();
        GaussianDensity::new(mean, DMatrix::identity(d, d) * variance, mass)
    }

    pub fn dim(&self) -> usize {
        self.mean.len()
    }

    pub fn mean(&self) -> &[f64] {
        &self.mean
    }

    pub fn cov(&self) -> &DMatrix<f64> {
        &self.cov
    }

    pub fn mass(&self) -> f64 {
        self.mass
    }

    pub fn density(&self, r: &[f64]) -> f64 {
        normal_pdf(r, &self.mean, &self.cov) * self.mass
    }

    fn shifted(&self, x: &[f64]) -> Self {
        let mut g = self.clone();
        g.mean.iter_mut().zip(x).for_each(|(m, s)| *m += s);
        g
    }

    /// `mass * E f(mean + L z)` by a tensor Gauss rule.
    fn expect<F: Fn(&[f64]) -> f64>(&self, points: usize, f: F) -> f64 {
        let rule = gauss_rule(points);
        let d = self.dim();
        let norm = PI.powf(-(d as f64) / 2.0);
        let mut acc = 0.0;
        let mut r = [0.0; MAX_DIM];
        for_each_gauss_node(&rule, d, |z, w| {
            for i in 0..d {
                r[i] = self.mean[i];
                for j in 0..=i {
                    r[i] += self.chol[(i, j)] * std::f64::consts::SQRT_2 * z[j];
                }
            }
            acc += w * f(&r[..d]);
        });
        self.mass * norm * acc
    }
}

fn normal_pdf(r: &[f64], mean: &[f64], cov: &DMatrix<f64>) -> f64 {
    let d = r.len();
    let v = DVector::from_iterator(d, r.iter().zip(mean).map(|(a, b)| a - b));
    let chol = cov.clone().cholesky().expect("validated covariance");
    let sol = chol.solve(&v);
    let quad = v.dot(&sol);
    let det = chol.determinant();
    (-0.5 * quad).exp() / ((2.0 * PI).powi(d as i32) * det).sqrt()
}

/// A user-supplied smooth function with the facts the pairing code needs.
#[derive(Clone)]
pub struct CustomFunction {
    pub label: String,
    pub f: Arc<dyn Fn(&[f64]) -> f64 + Send + Sync>,
    /// Width `w` such that `|f(r)| <= C exp(-|r|^2 / (2 w^2))`.
    pub decay: Option<f64>,
    pub mass: Option<f64>,
    pub bound: Option<f64>,
}

impl fmt::Debug for CustomFunction {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "CustomFunction({})", self.label)
    }
}

/// Built-in smooth functions, written in a local coordinate `u`.
#[derive(Clone, Debug)]
pub enum SmoothKind {
    /// `sum_i c_i u_axis^i`.
    Polynomial {
        axis: usize,
        coefficients: Vec<f64>,
    },
    /// `offset + amplitude * cos(frequency . u + phase)`.
    Cosine {
        offset: f64,
        amplitude: f64,
        frequency: Vec<f64>,
        phase: f64,
    },
    /// `offset + amplitude * tanh(scale * u_axis)`.
    Tanh {
        offset: f64,
        amplitude: f64,
        axis: usize,
        scale: f64,
    },
    /// `amplitude * exp(-|u|^2 / (2 width^2))`.
    Bump {
        amplitude: f64,
        width: f64,
    },
    Custom(CustomFunction),
}

impl SmoothKind {
    fn eval(&self, u: &[f64]) -> f64 {
        match self {
            SmoothKind::Polynomial { axis, coefficients } => {
                coefficients.iter().rev().fold(0.0, |acc, c| acc * u[*axis] + c)
            }
            SmoothKind::Cosine { offset, amplitude, frequency, phase } => {
                let arg: f64 = frequency.iter().zip(u).map(|(k, x)| k * x).sum::<f64>() + phase;
                offset + amplitude * arg.cos()
            }
            SmoothKind::Tanh { offset, amplitude, axis, scale } => offset + amplitude * (scale * u[*axis]).tanh(),
            SmoothKind::Bump { amplitude, width } => {
                let r2: f64 = u.iter().map(|x| x * x).sum();
                amplitude * (-r2 / (2.0 * width * width)).exp()
            }
            SmoothKind::Custom(c) => (c.f)(u),
        }
    }

    fn decay(&self) -> Option<f64> {
        match self {
            SmoothKind::Bump { width, .. } => Some(*width),
            SmoothKind::Custom(c) => c.decay,
            _ => None,
        }
    }

    fn mass(&self, dim: usize) -> Option<f64> {
        match self {
            SmoothKind::Bump { amplitude, width } => {
                Some(amplitude * (2.0 * PI * width * width).powf(dim as f64 / 2.0))
            }
            SmoothKind::Custom(c) => c.mass,
            _ => None,
        }
    }

    fn bound(&self) -> Option<f64> {
        match self {
            SmoothKind::Polynomial { coefficients, .. } => {
                if coefficients.iter().skip(1).all(|c| *c == 0.0) {
                    Some(coefficients.first().copied().unwrap_or(0.0).abs())
                } else {
                    None
                }
            }
            SmoothKind::Cosine { offset, amplitude, .. } | SmoothKind::Tanh { offset, amplitude, .. } => {
                Some(offset.abs() + amplitude.abs())
            }
            SmoothKind::Bump { amplitude, .. } => Some(amplitude.abs()),
            SmoothKind::Custom(c) => c.bound,
        }
    }

    fn validate(&self, dim: usize) -> Result<()> {
        let bad_axis = |axis: usize| {
            if axis >= dim {
                Err(Error::InvalidInput(format!("axis {axis} out of range for d={dim}")))
            } else {
                Ok(())
            }
        };
        match self {
            SmoothKind::Polynomial { axis, .. } | SmoothKind::Tanh { axis, .. } => bad_axis(*axis),
            SmoothKind::Cosine { frequency, .. } if frequency.len() != dim => {
                Err(Error::DimensionMismatch { expected: dim, got: frequency.len() })
            }
            SmoothKind::Bump { width, .. } if *width <= 0.0 => {
                Err(Error::InvalidInput("bump width must be positive".into()))
            }
            _ => Ok(()),
        }
    }
}

/// `r -> kind(sign * (r - offset))`.
#[derive(Clone, Debug)]
pub struct SmoothFunction {
    kind: SmoothKind,
    offset: Vec<f64>,
    sign: f64,
}

impl SmoothFunction {
    pub fn new(kind: SmoothKind, dim: usize) -> Result<Self> {
        if dim == 0 || dim > MAX_DIM {
            return Err(Error::InvalidInput(format!("dimension {dim} not in 1..={MAX_DIM}")));
        }
        kind.validate(dim)?;
        Ok(SmoothFunction { kind, offset: vec![0.0; dim], sign: 1.0 })
    }

    pub fn custom<F>(dim: usize, label: &str, f: F) -> Self
    where
        F: Fn(&[f64]) -> f64 + Send + Sync + 'static,
    {
        let kind = SmoothKind::Custom(CustomFunction {
            label: label.into(),
            f: Arc::new(f),
            decay: None,
            mass: None,
            bound: None,
        });
        SmoothFunction::new(kind, dim).expect("custom functions need no validation")
    }

    pub fn kind(&self) -> &SmoothKind {
        &self.kind
    }

    pub fn dim(&self) -> usize {
        self.offset.len()
    }

    pub fn eval(&self, r: &[f64]) -> f64 {
        let mut u = [0.0; MAX_DIM];
        for (i, (x, o)) in r.iter().zip(&self.offset).enumerate() {
            u[i] = self.sign * (x - o);
        }
        self.kind.eval(&u[..r.len()])
    }

    /// Center and width of a Gaussian envelope, if any.
    pub fn decay(&self) -> Option<(&[f64], f64)> {
        self.kind.decay().map(|w| (self.offset.as_slice(), w))
    }

    pub fn mass(&self) -> Option<f64> {
        self.kind.mass(self.dim())
    }

    pub fn bound(&self) -> Option<f64> {
        self.kind.bound()
    }

    fn shifted(&self, x: &[f64]) -> Self {
        let mut g = self.clone();
        g.offset.iter_mut().zip(x).for_each(|(o, s)| *o += s);
        g
    }

    fn reflected(&self) -> Self {
        SmoothFunction { kind: self.kind.clone(), offset: self.offset.iter().map(|o| -o).collect(), sign: -self.sign }
    }
}

/// A tempered distribution in one of the supported representations.
#[derive(Clone, Debug)]
pub enum TemperedDistribution {
    Dirac { location: Vec<f64> },
    Gaussian(GaussianDensity),
    Constant { value: f64, dim: usize },
    Smooth(SmoothFunction),
    Hermite { coeffs: HermiteCoeffs, p: f64 },
}

impl TemperedDistribution {
    pub fn dirac(location: Vec<f64>) -> Self {
        TemperedDistribution::Dirac { location }
    }

    pub fn constant(value: f64, dim: usize) -> Self {
        TemperedDistribution::Constant { value, dim }
    }

    pub fn gaussian(mean: Vec<f64>, variance: f64, mass: f64) -> Result<Self> {
        Ok(TemperedDistribution::Gaussian(GaussianDensity::isotropic(mean, variance, mass)?))
    }

    pub fn smooth(kind: SmoothKind, dim: usize) -> Result<Self> {
        Ok(TemperedDistribution::Smooth(SmoothFunction::new(kind, dim)?))
    }

    pub fn hermite(coeffs: HermiteCoeffs, p: f64) -> Self {
        TemperedDistribution::Hermite { coeffs, p }
    }

    pub fn dim(&self) -> usize {
        match self {
            TemperedDistribution::Dirac { location } => location.len(),
            TemperedDistribution::Gaussian(g) => g.dim(),
            TemperedDistribution::Constant { dim, .. } => *dim,
            TemperedDistribution::Smooth(s) => s.dim(),
            TemperedDistribution::Hermite { coeffs, .. } => coeffs.dim(),
        }
    }

    pub fn variant_name(&self) -> &'static str {
        match self {
            TemperedDistribution::Dirac { .. } => "dirac",
            TemperedDistribution::Gaussian(_) => "gaussian",
            TemperedDistribution::Constant { .. } => "constant",
            TemperedDistribution::Smooth(_) => "smooth",
            TemperedDistribution::Hermite { .. } => "hermite",
        }
    }

    /// Sobolev index attached to the representation: the supremum `-d/4` (not attained) for a
    /// Dirac mass, the declared index for a truncation.
    pub fn sobolev_index(&self) -> Option<f64> {
        match self {
            TemperedDistribution::Dirac { location } => Some(-(location.len() as f64) / 4.0),
            TemperedDistribution::Hermite { p, .. } => Some(*p),
            _ => None,
        }
    }

    /// Whether the representation is known to lie in `S_q`.
    pub fn admits_index(&self, q: f64) -> Option<bool> {
        match self {
            TemperedDistribution::Dirac { location } => Some(q < -(location.len() as f64) / 4.0),
            TemperedDistribution::Hermite { .. } => Some(true),
            _ => None,
        }
    }

    /// `int y`, where defined.
    pub fn mass(&self) -> Option<f64> {
        match self {
            TemperedDistribution::Dirac { .. } => Some(1.0),
            TemperedDistribution::Gaussian(g) => Some(g.mass),
            TemperedDistribution::Constant { value, .. } => (*value == 0.0).then_some(0.0),
            TemperedDistribution::Smooth(s) => s.mass().or_else(|| {
                let (center, width) = s.decay()?;
                Some(decaying_integral(center, width, |r| s.eval(r), default_gauss_points(s.dim())))
            }),
            TemperedDistribution::Hermite { coeffs, .. } => Some(coeffs.integral()),
        }
    }

    /// Pointwise value for function-like variants.
    pub fn eval(&self, r: &[f64]) -> Option<f64> {
        match self {
            TemperedDistribution::Dirac { .. } => None,
            TemperedDistribution::Gaussian(g) => Some(g.density(r)),
            TemperedDistribution::Constant { value, .. } => Some(*value),
            TemperedDistribution::Smooth(s) => Some(s.eval(r)),
            TemperedDistribution::Hermite { coeffs, .. } => Some(coeffs.reconstruct(r)),
        }
    }

    /// Sup norm, where a bound is known.
    pub fn sup_bound(&self) -> Option<f64> {
        match self {
            TemperedDistribution::Constant { value, .. } => Some(value.abs()),
            TemperedDistribution::Smooth(s) => s.bound(),
            TemperedDistribution::Gaussian(g) => Some(g.density(&g.mean).abs()),
            _ => None,
        }
    }

    /// `y(-r)`.
    pub fn reflect(&self) -> Self {
        match self {
            TemperedDistribution::Dirac { location } => {
                TemperedDistribution::Dirac { location: location.iter().map(|v| -v).collect() }
            }
            TemperedDistribution::Gaussian(g) => {
                let mut g = g.clone();
                g.mean.iter_mut().for_each(|m| *m = -*m);
                TemperedDistribution::Gaussian(g)
            }
            TemperedDistribution::Constant { .. } => self.clone(),
            TemperedDistribution::Smooth(s) => TemperedDistribution::Smooth(s.reflected()),
            TemperedDistribution::Hermite { coeffs, p } => {
                TemperedDistribution::Hermite { coeffs: coeffs.reflect(), p: *p }
            }
        }
    }

    /// Exact translation for closed forms, `None` for truncations.
    pub fn translate_exact(&self, x: &[f64]) -> Option<Self> {
        match self {
            TemperedDistribution::Dirac { location } => {
                Some(TemperedDistribution::Dirac { location: location.iter().zip(x).map(|(l, s)| l + s).collect() })
            }
            TemperedDistribution::Gaussian(g) => Some(TemperedDistribution::Gaussian(g.shifted(x))),
            TemperedDistribution::Constant { .. } => Some(self.clone()),
            TemperedDistribution::Smooth(s) => Some(TemperedDistribution::Smooth(s.shifted(x))),
            TemperedDistribution::Hermite { .. } => None,
        }
    }

    fn is_zero_constant(&self) -> bool {
        matches!(self, TemperedDistribution::Constant { value, .. } if *value == 0.0)
    }
}

/// A translated distribution and the L^2 mass the truncation lost in the process.
#[derive(Clone, Debug)]
pub struct Translation {
    pub value: TemperedDistribution,
    pub reprojection_error: f64,
}

impl Translation {
    pub fn is_flagged(&self, tolerance: f64) -> bool {
        self.reprojection_error > tolerance
    }
}

/// `tau_x y`, with `(tau_x f)(r) = f(r - x)`.
pub fn translate(y: &TemperedDistribution, x: &[f64]) -> Result<Translation> {
    if x.len() != y.dim() {
        return Err(Error::DimensionMismatch { expected: y.dim(), got: x.len() });
    }
    if x.iter().any(|v| !v.is_finite()) {
        return Err(Error::InvalidInput("translation vector must be finite".into()));
    }
    if let Some(value) = y.translate_exact(x) {
        return Ok(Translation { value, reprojection_error: 0.0 });
    }
    let TemperedDistribution::Hermite { coeffs, p } = y else { unreachable!("closed forms handled above") };
    if x.iter().all(|v| *v == 0.0) {
        return Ok(Translation { value: y.clone(), reprojection_error: 0.0 });
    }
    let shifted = translate_coeffs(coeffs, x);
    let before: f64 = coeffs.values().iter().map(|v| v * v).sum();
    let after: f64 = shifted.values().iter().map(|v| v * v).sum();
    Ok(Translation {
        value: TemperedDistribution::Hermite { coeffs: shifted, p: *p },
        reprojection_error: (before - after).max(0.0).sqrt(),
    })
}

/// Projection of `c(. - x)` onto the truncation of `c`.
///
/// `<h_k, tau_x f> = int h_k(u + x/2) f(u - x/2) du`, and for `f` a finite Hermite sum the
/// integrand is `e^{-u^2}` times a polynomial of degree at most `2N`, so a rule with `N + 1`
/// nodes per axis is exact.
pub fn translate_coeffs(c: &HermiteCoeffs, x: &[f64]) -> HermiteCoeffs {
    let scheme = c.scheme();
    let n = scheme.max_degree();
    let d = scheme.dim();
    let rule = gauss_rule(n + 1);
    let fw = rule.function_weights();
    // per axis, per node: h_m(node + x/2) and h_m(node - x/2)
    let plus: Vec<Vec<Vec<f64>>> =
        (0..d).map(|a| rule.nodes().iter().map(|&u| hermite_functions(n, u + x[a] / 2.0)).collect()).collect();
    let minus: Vec<Vec<Vec<f64>>> =
        (0..d).map(|a| rule.nodes().iter().map(|&u| hermite_functions(n, u - x[a] / 2.0)).collect()).collect();
    let indices = scheme.indices();
    let nodes = rule.tensor_indices(d);
    let weighted: Vec<f64> = nodes
        .iter()
        .map(|idx| {
            let w: f64 = idx.iter().map(|&i| fw[i]).product();
            let f: f64 = indices
                .iter()
                .zip(c.values())
                .map(|(k, v)| {
                    let mut b = *v;
                    for (a, &ka) in k.entries().iter().enumerate() {
                        b *= minus[a][idx[a]][ka as usize];
                    }
                    b
                })
                .sum();
            w * f
        })
        .collect();
    let values = indices
        .iter()
        .map(|k| {
            nodes
                .iter()
                .zip(&weighted)
                .map(|(idx, w)| {
                    let mut b = *w;
                    for (a, &ka) in k.entries().iter().enumerate() {
                        b *= plus[a][idx[a]][ka as usize];
                    }
                    b
                })
                .sum()
        })
        .collect();
    HermiteCoeffs::from_values(scheme, values).expect("sized from scheme")
}

/// `(sqrt2 w)^d sum_i W_i f(c + sqrt2 w x_i)`, accurate for integrands with a Gaussian
/// envelope of width `w` around `c`.
fn decaying_integral<F: Fn(&[f64]) -> f64>(center: &[f64], width: f64, f: F, points: usize) -> f64 {
    let rule = gauss_rule(points);
    let d = center.len();
    let s = std::f64::consts::SQRT_2 * width;
    let mut acc = 0.0;
    let mut r = [0.0; MAX_DIM];
    rule.for_each_node(d, |u, w| {
        for a in 0..d {
            r[a] = center[a] + s * u[a];
        }
        acc += w * f(&r[..d]);
    });
    acc * s.powi(d as i32)
}

fn rank(t: &TemperedDistribution) -> u8 {
    match t {
        TemperedDistribution::Dirac { .. } => 0,
        TemperedDistribution::Constant { .. } => 1,
        TemperedDistribution::Gaussian(_) => 2,
        TemperedDistribution::Hermite { .. } => 3,
        TemperedDistribution::Smooth(_) => 4,
    }
}

/// A pairing value and an estimate of its numerical error.
#[derive(Clone, Copy, Debug, PartialEq, Serialize)]
pub struct PairingValue {
    pub value: f64,
    pub error: f64,
}

impl PairingValue {
    fn exact(value: f64) -> Self {
        PairingValue { value, error: 0.0 }
    }
}

/// `<a, tau_shift b>`.
pub fn pair(a: &TemperedDistribution, b: &TemperedDistribution, shift: &[f64]) -> Result<f64> {
    pair_inner(a, b, shift, false).map(|p| p.value)
}

/// `<a, tau_shift b>` with an error estimate for quadrature-based cases.
pub fn pair_detailed(a: &TemperedDistribution, b: &TemperedDistribution, shift: &[f64]) -> Result<PairingValue> {
    pair_inner(a, b, shift, true)
}

fn pair_inner(
    a: &TemperedDistribution,
    b: &TemperedDistribution,
    shift: &[f64],
    detailed: bool,
) -> Result<PairingValue> {
    let d = a.dim();
    if b.dim() != d {
        return Err(Error::DimensionMismatch { expected: d, got: b.dim() });
    }
    if shift.len() != d {
        return Err(Error::DimensionMismatch { expected: d, got: shift.len() });
    }
    if a.is_zero_constant() || b.is_zero_constant() {
        return Ok(PairingValue::exact(0.0));
    }
    if let Some(bs) = b.translate_exact(shift) {
        return pair_unshifted(a, &bs, detailed);
    }
    let minus: Vec<f64> = shift.iter().map(|v| -v).collect();
    if let Some(as_) = a.translate_exact(&minus) {
        return pair_unshifted(&as_, b, detailed);
    }
    let (TemperedDistribution::Hermite { coeffs: ca, .. }, TemperedDistribution::Hermite { coeffs: cb, .. }) = (a, b)
    else {
        unreachable!("only truncations lack exact translation")
    };
    Ok(PairingValue::exact(hermite_shifted_pairing(ca, cb, shift)))
}

/// `int f(r) g(r - s) dr` for two truncations, exact.
fn hermite_shifted_pairing(f: &HermiteCoeffs, g: &HermiteCoeffs, s: &[f64]) -> f64 {
    let d = f.dim();
    let rule = gauss_rule((f.max_degree() + g.max_degree()) / 2 + 1);
    let mut acc = 0.0;
    let mut plus = [0.0; MAX_DIM];
    let mut minus = [0.0; MAX_DIM];
    rule.for_each_node(d, |u, w| {
        for a in 0..d {
            plus[a] = u[a] + s[a] / 2.0;
            minus[a] = u[a] - s[a] / 2.0;
        }
        acc += w * f.reconstruct(&plus[..d]) * g.reconstruct(&minus[..d]);
    });
    acc
}

fn pair_unshifted(a: &TemperedDistribution, b: &TemperedDistribution, detailed: bool) -> Result<PairingValue> {
    use TemperedDistribution as T;
    let (a, b) = if rank(a) <= rank(b) { (a, b) } else { (b, a) };
    let d = a.dim();
    match (a, b) {
        (T::Dirac { .. }, T::Dirac { .. }) => Err(Error::DivergentPairing { left: "dirac", right: "dirac" }),
        (T::Dirac { location }, other) => Ok(PairingValue::exact(other.eval(location).expect("function-like"))),
        (T::Constant { .. }, T::Constant { .. }) => {
            Err(Error::DivergentPairing { left: "constant", right: "constant" })
        }
        (T::Constant { value, .. }, other) => match other.mass() {
            Some(m) => Ok(PairingValue::exact(value * m)),
            None => Err(Error::DivergentPairing { left: "constant", right: other.variant_name() }),
        },
        (T::Gaussian(g1), T::Gaussian(g2)) => {
            let cov = &g1.cov + &g2.cov;
            Ok(PairingValue::exact(g1.mass * g2.mass * normal_pdf(&g1.mean, &g2.mean, &cov)))
        }
        (T::Gaussian(g), T::Hermite { coeffs, .. }) => Ok(PairingValue::exact(gaussian_hermite(g, coeffs))),
        (T::Gaussian(g), T::Smooth(s)) => {
            let q = default_gauss_points(d);
            let value = g.expect(q, |r| s.eval(r));
            let error = if detailed { (g.expect(q + 8, |r| s.eval(r)) - value).abs() } else { 0.0 };
            Ok(PairingValue { value, error })
        }
        (T::Hermite { coeffs: c1, .. }, T::Hermite { coeffs: c2, .. }) => Ok(PairingValue::exact(c1.dot(c2))),
        (T::Hermite { coeffs, .. }, T::Smooth(s)) => {
            let q = coeffs.max_degree() + default_gauss_points(d);
            let f = |r: &[f64]| coeffs.reconstruct(r) * s.eval(r);
            let center = vec![0.0; d];
            let value = decaying_integral(&center, 1.0, f, q);
            let error = if detailed { (decaying_integral(&center, 1.0, f, q + 8) - value).abs() } else { 0.0 };
            Ok(PairingValue { value, error })
        }
        (T::Smooth(s1), T::Smooth(s2)) => {
            let (center, width) = s1
                .decay()
                .or_else(|| s2.decay())
                .ok_or(Error::UnsupportedPairing { left: "smooth", right: "smooth" })?;
            let q = default_gauss_points(d);
            let f = |r: &[f64]| s1.eval(r) * s2.eval(r);
            let value = decaying_integral(center, width, f, q);
            let error = if detailed { (decaying_integral(center, width, f, q + 8) - value).abs() } else { 0.0 };
            Ok(PairingValue { value, error })
        }
        _ => unreachable!("pairs are ordered by rank"),
    }
}

/// `int N_m(r; mu, Sigma) f(r) dr` for a truncation `f = P e^{-|r|^2/2}`.
///
/// `e^{-|r|^2/2} N(r; mu, Sigma) = C N(r; mu', (Sigma^{-1} + I)^{-1})`, and the polynomial part
/// is integrated exactly by a Gauss rule under the new normal law.
fn gaussian_hermite(g: &GaussianDensity, f: &HermiteCoeffs) -> f64 {
    let d = g.dim();
    let mu = DVector::from_column_slice(&g.mean);
    let sigma_inv = g.cov.clone().cholesky().expect("validated").inverse();
    let precision = &sigma_inv + DMatrix::identity(d, d);
    let pchol = precision.clone().cholesky().expect("positive definite");
    let new_cov = pchol.inverse();
    let new_mean = &new_cov * (&sigma_inv * &mu);
    let exponent = -0.5 * (mu.dot(&(&sigma_inv * &mu)) - new_mean.dot(&(&precision * &new_mean)));
    let c = exponent.exp() / (g.cov.determinant() * precision.determinant()).sqrt();
    let inner = GaussianDensity::new(new_mean.iter().copied().collect(), new_cov, 1.0).expect("valid");
    let q = f.max_degree() / 2 + 2;
    g.mass * c * inner.expect(q, |r| f.reconstruct_polynomial_part(r))
}

/// Coefficients `<h_k, tau_shift y>` for all `|k| <= N` of `scheme`.
///
/// Exact for Dirac masses, Gaussians and truncations; smooth functions go through a
/// quadrature transform and need a Gaussian envelope.
pub fn projection(y: &TemperedDistribution, shift: &[f64], scheme: TruncationScheme) -> Result<HermiteCoeffs> {
    let d = scheme.dim();
    if y.dim() != d || shift.len() != d {
        return Err(Error::DimensionMismatch { expected: d, got: if y.dim() != d { y.dim() } else { shift.len() } });
    }
    let n = scheme.max_degree();
    match y {
        TemperedDistribution::Dirac { location } => {
            let at: Vec<f64> = location.iter().zip(shift).map(|(l, s)| l + s).collect();
            crate::sobolev::dirac_coeffs(&at, scheme)
        }
        TemperedDistribution::Gaussian(g) => Ok(gaussian_projection(&g.shifted(shift), scheme)),
        TemperedDistribution::Hermite { coeffs, .. } => {
            let wide = coeffs.with_degree(coeffs.max_degree().max(n));
            let moved = if shift.iter().all(|v| *v == 0.0) { wide } else { translate_coeffs(&wide, shift) };
            Ok(moved.with_degree(n))
        }
        TemperedDistribution::Constant { value, .. } if *value == 0.0 => Ok(HermiteCoeffs::zeros(scheme)),
        TemperedDistribution::Constant { .. } => Err(Error::UnsupportedPairing { left: "hermite", right: "constant" }),
        TemperedDistribution::Smooth(s) => {
            if s.decay().is_none() {
                return Err(Error::UnsupportedPairing { left: "hermite", right: "smooth" });
            }
            let moved = s.shifted(shift);
            let quad = gauss_rule(n + default_gauss_points(d));
            Ok(crate::hermite::hermite_transform(|r| moved.eval(r), scheme, &quad)?.coeffs)
        }
    }
}

/// All Hermite coefficients of a Gaussian at once, with the exact polynomial rule of
/// [`gaussian_hermite`].
fn gaussian_projection(g: &GaussianDensity, scheme: TruncationScheme) -> HermiteCoeffs {
    let d = g.dim();
    let n = scheme.max_degree();
    let mu = DVector::from_column_slice(&g.mean);
    let sigma_inv = g.cov.clone().cholesky().expect("validated").inverse();
    let precision = &sigma_inv + DMatrix::identity(d, d);
    let new_cov = precision.clone().cholesky().expect("positive definite").inverse();
    let new_mean = &new_cov * (&sigma_inv * &mu);
    let exponent = -0.5 * (mu.dot(&(&sigma_inv * &mu)) - new_mean.dot(&(&precision * &new_mean)));
    let c = g.mass * exponent.exp() / (g.cov.determinant() * precision.determinant()).sqrt();
    let chol = new_cov.cholesky().expect("positive definite").l();
    let rule = gauss_rule(n / 2 + 2);
    let norm = c * PI.powf(-(d as f64) / 2.0);
    let indices = scheme.indices();
    let mut values = vec![0.0; indices.len()];
    let mut r = [0.0; MAX_DIM];
    for_each_gauss_node(&rule, d, |z, w| {
        for i in 0..d {
            r[i] = new_mean[i];
            for j in 0..=i {
                r[i] += chol[(i, j)] * std::f64::consts::SQRT_2 * z[j];
            }
        }
        let tables: Vec<Vec<f64>> = (0..d).map(|a| crate::hermite::hermite_polynomial_parts(n, r[a])).collect();
        for (v, k) in values.iter_mut().zip(&indices) {
            let mut b = w * norm;
            for (a, &ka) in k.entries().iter().enumerate() {
                b *= tables[a][ka as usize];
            }
            *v += b;
        }
    });
    HermiteCoeffs::from_values(scheme, values).expect("sized from scheme")
}

/// The coefficient field `x -> <sigma, tau_x y>`.
pub fn coefficient_field(sigma: &TemperedDistribution, y: &TemperedDistribution, x: &[f64]) -> Result<f64> {
    pair(sigma, y, x)
}

/// A map from (coefficient, translated initial datum) to a real number.
pub type Functional = Arc<dyn Fn(&TemperedDistribution, &TemperedDistribution, &[f64]) -> Result<f64> + Send + Sync>;

/// The matrix `sigma` and vector `b` of coefficient distributions.
#[derive(Clone, Debug)]
pub struct CoefficientMatrix {
    sigma: Vec<TemperedDistribution>,
    b: Vec<TemperedDistribution>,
    dim: usize,
}

impl CoefficientMatrix {
    /// `sigma` in row-major order.
    pub fn new(sigma: Vec<TemperedDistribution>, b: Vec<TemperedDistribution>) -> Result<Self> {
        let dim = b.len();
        if dim == 0 || dim > MAX_DIM {
            return Err(Error::InvalidInput(format!("dimension {dim} not in 1..={MAX_DIM}")));
        }
        if sigma.len() != dim * dim {
            return Err(Error::DimensionMismatch { expected: dim * dim, got: sigma.len() });
        }
        if let Some(bad) = sigma.iter().chain(&b).find(|t| t.dim() != dim) {
            return Err(Error::DimensionMismatch { expected: dim, got: bad.dim() });
        }
        Ok(CoefficientMatrix { sigma, b, dim })
    }

    pub fn zero(dim: usize) -> Self {
        let z = TemperedDistribution::constant(0.0, dim);
        CoefficientMatrix::new(vec![z.clone(); dim * dim], vec![z; dim]).expect("consistent")
    }

    /// `sigma = s I` and `b = c` as constant functions.
    pub fn constant(dim: usize, s: f64, b: f64) -> Self {
        let sigma = (0..dim * dim)
            .map(|k| TemperedDistribution::constant(if k % (dim + 1) == 0 { s } else { 0.0 }, dim))
            .collect();
        CoefficientMatrix::new(sigma, vec![TemperedDistribution::constant(b, dim); dim]).expect("consistent")
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn sigma(&self, i: usize, j: usize) -> &TemperedDistribution {
        &self.sigma[i * self.dim + j]
    }

    pub fn b(&self, i: usize) -> &TemperedDistribution {
        &self.b[i]
    }

    /// Entry-wise sup bound, when every entry has one.
    pub fn sup_bound(&self) -> Option<f64> {
        self.sigma.iter().chain(&self.b).map(|t| t.sup_bound()).try_fold(0.0f64, |m, v| v.map(|v| m.max(v)))
    }
}

/// The convolved fields `sigma_bar(x)`, `b_bar(x)` for fixed coefficients and initial datum.
#[derive(Clone)]
pub struct ConvolvedFields {
    coeffs: CoefficientMatrix,
    y: TemperedDistribution,
    functional: Option<Functional>,
    constant: Option<(Vec<f64>, Vec<f64>)>,
}

impl fmt::Debug for ConvolvedFields {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.debug_struct("ConvolvedFields")
            .field("coeffs", &self.coeffs)
            .field("y", &self.y)
            .field("custom_functional", &self.functional.is_some())
            .finish()
    }
}

impl ConvolvedFields {
    pub fn new(coeffs: CoefficientMatrix, y: TemperedDistribution) -> Result<Self> {
        if y.dim() != coeffs.dim() {
            return Err(Error::DimensionMismatch { expected: coeffs.dim(), got: y.dim() });
        }
        let mut fields = ConvolvedFields { coeffs, y, functional: None, constant: None };
        fields.constant = fields.detect_constant()?;
        Ok(fields)
    }

    /// Replace the linear pairing by another functional of `(sigma_ij, tau_x y)`.
    pub fn with_functional(mut self, functional: Functional) -> Self {
        self.functional = Some(functional);
        self.constant = None;
        self
    }

    fn detect_constant(&self) -> Result<Option<(Vec<f64>, Vec<f64>)>> {
        let translation_free = |t: &TemperedDistribution| {
            matches!(t, TemperedDistribution::Constant { .. })
                || matches!(self.y, TemperedDistribution::Constant { .. })
        };
        if !self.coeffs.sigma.iter().chain(&self.coeffs.b).all(translation_free) {
            return Ok(None);
        }
        let origin = vec![0.0; self.dim()];
        let sigma = self.coeffs.sigma.iter().map(|s| pair(s, &self.y, &origin)).collect::<Result<_>>()?;
        let b = self.coeffs.b.iter().map(|s| pair(s, &self.y, &origin)).collect::<Result<_>>()?;
        Ok(Some((sigma, b)))
    }

    pub fn dim(&self) -> usize {
        self.coeffs.dim()
    }

    pub fn coeffs(&self) -> &CoefficientMatrix {
        &self.coeffs
    }

    pub fn initial(&self) -> &TemperedDistribution {
        &self.y
    }

    /// Row-major `sigma_bar(x)` and `b_bar(x)` when they do not depend on `x`.
    pub fn as_constant(&self) -> Option<(&[f64], &[f64])> {
        self.constant.as_ref().map(|(s, b)| (s.as_slice(), b.as_slice()))
    }

    fn value(&self, t: &TemperedDistribution, x: &[f64]) -> Result<f64> {
        match &self.functional {
            None => pair(t, &self.y, x),
            Some(f) => f(t, &self.y, x),
        }
    }

    /// Fill row-major `sigma_bar(x)` and `b_bar(x)`.
    pub fn eval(&self, x: &[f64], sigma: &mut [f64], drift: &mut [f64]) -> Result<()> {
        if let Some((s, b)) = &self.constant {
            sigma.copy_from_slice(s);
            drift.copy_from_slice(b);
            return Ok(());
        }
        for (o, t) in sigma.iter_mut().zip(&self.coeffs.sigma) {
            *o = self.value(t, x)?;
        }
        for (o, t) in drift.iter_mut().zip(&self.coeffs.b) {
            *o = self.value(t, x)?;
        }
        Ok(())
    }
}

/// Largest finite-difference slope of `field` along grid edges of spacing `h` in the box.
pub fn lipschitz_probe<F: Fn(&[f64]) -> f64>(field: F, lower: &[f64], upper: &[f64], h: f64) -> f64 {
    let d = lower.len();
    assert_eq!(upper.len(), d, "box bounds must agree in dimension");
    assert!(h > 0.0, "grid spacing must be positive");
    let counts: Vec<usize> = lower.iter().zip(upper).map(|(l, u)| ((u - l) / h).round() as usize + 1).collect();
    let total: usize = counts.iter().product();
    let mut idx = vec![0usize; d];
    let mut point = vec![0.0; d];
    let mut best = 0.0f64;
    for _ in 0..total {
        for a in 0..d {
            point[a] = lower[a] + idx[a] as f64 * h;
        }
        let here = field(&point);
        for a in 0..d {
            if idx[a] + 1 < counts[a] {
                point[a] += h;
                let slope = (field(&point) - here).abs() / h;
                best = best.max(slope);
                point[a] -= h;
            }
        }
        for a in (0..d).rev() {
            idx[a] += 1;
            if idx[a] < counts[a] {
                break;
            }
            idx[a] = 0;
        }
    }
    best
}

fn test_pairings(coeffs: &CoefficientMatrix, phi: &HermiteCoeffs) -> Result<(Vec<f64>, Vec<f64>)> {
    let d = coeffs.dim();
    if phi.dim() != d {
        return Err(Error::DimensionMismatch { expected: d, got: phi.dim() });
    }
    let as_dist = TemperedDistribution::hermite(phi.clone(), 0.0);
    let origin = vec![0.0; d];
    let sigma = coeffs.sigma.iter().map(|s| pair(s, &as_dist, &origin)).collect::<Result<_>>()?;
    let b = coeffs.b.iter().map(|s| pair(s, &as_dist, &origin)).collect::<Result<_>>()?;
    Ok((sigma, b))
}

/// `A_j phi = -sum_i <sigma_ij, phi> d_i phi`, on degree `N + 1` and index `p - 1`.
pub fn apply_a(coeffs: &CoefficientMatrix, phi: &SobolevElement, j: usize) -> Result<SobolevElement> {
    let d = coeffs.dim();
    if j >= d {
        return Err(Error::InvalidInput(format!("axis {j} out of range")));
    }
    let (sigma, _) = test_pairings(coeffs, &phi.coeffs)?;
    let mut out = HermiteCoeffs::zeros(phi.coeffs.scheme().with_degree(phi.coeffs.max_degree() + 1));
    for i in 0..d {
        let s = sigma[i * d + j];
        if s != 0.0 {
            out = out.add_scaled(-s, &derivative_coeffs(&phi.coeffs, i));
        }
    }
    Ok(SobolevElement::new(out, phi.index - 1.0))
}

/// Diffusion and drift parts of `L phi`, both on degree `N + 2` and index `p - 1`.
pub fn apply_l_parts(coeffs: &CoefficientMatrix, phi: &SobolevElement) -> Result<(SobolevElement, SobolevElement)> {
    let d = coeffs.dim();
    let (sigma, b) = test_pairings(coeffs, &phi.coeffs)?;
    let scheme = phi.coeffs.scheme().with_degree(phi.coeffs.max_degree() + 2);
    let first: Vec<HermiteCoeffs> = (0..d).map(|i| derivative_coeffs(&phi.coeffs, i)).collect();
    // a = sigma sigma^T
    let mut diffusion = HermiteCoeffs::zeros(scheme);
    for i in 0..d {
        for k in 0..d {
            let a: f64 = (0..d).map(|j| sigma[i * d + j] * sigma[k * d + j]).sum();
            if a != 0.0 {
                diffusion = diffusion.add_scaled(0.5 * a, &derivative_coeffs(&first[i], k));
            }
        }
    }
    let mut drift = HermiteCoeffs::zeros(scheme);
    for i in 0..d {
        if b[i] != 0.0 {
            drift = drift.add_scaled(-b[i], &first[i].with_degree(scheme.max_degree()));
        }
    }
    let p = phi.index - 1.0;
    Ok((SobolevElement::new(diffusion, p), SobolevElement::new(drift, p)))
}

/// `L phi = 1/2 sum (<sigma,phi><sigma,phi>^T)_ij d_ij phi - sum_i <b_i,phi> d_i phi`.
pub fn apply_l(coeffs: &CoefficientMatrix, phi: &SobolevElement) -> Result<SobolevElement> {
    let (diffusion, drift) = apply_l_parts(coeffs, phi)?;
    Ok(SobolevElement::new(diffusion.coeffs.add_scaled(1.0, &drift.coeffs), diffusion.index))
}

/// Serializable description of a distribution.
#[derive(Clone, Debug, Serialize, Deserialize, PartialEq)]
#[serde(tag = "variant", rename_all = "snake_case", deny_unknown_fields)]
pub enum DistributionSpec {
    Dirac {
        location: Vec<f64>,
    },
    Gaussian {
        mean: Vec<f64>,
        /// Row-major covariance; identity when omitted.
        #[serde(default)]
        cov: Option<Vec<f64>>,
        #[serde(default = "one")]
        mass: f64,
    },
    Constant {
        value: f64,
    },
    Smooth {
        function: SmoothSpec,
    },
    Hermite {
        #[serde(rename = "N")]
        n: usize,
        p: f64,
        /// Graded-lexicographic order.
        coeffs: Vec<f64>,
    },
}

fn one() -> f64 {
    1.0
}

/// Serializable smooth functions; see [`SmoothKind`].
#[derive(Clone, Debug, Serialize, Deserialize, PartialEq)]
#[serde(tag = "kind", rename_all = "snake_case", deny_unknown_fields)]
pub enum SmoothSpec {
    Polynomial {
        #[serde(default)]
        axis: usize,
        coefficients: Vec<f64>,
    },
    Cosine {
        #[serde(default)]
        offset: f64,
        amplitude: f64,
        frequency: Vec<f64>,
        #[serde(default)]
        phase: f64,
    },
    Tanh {
        #[serde(default)]
        offset: f64,
        amplitude: f64,
        #[serde(default)]
        axis: usize,
        scale: f64,
    },
    Bump {
        amplitude: f64,
        width: f64,
    },
}

impl From<SmoothSpec> for SmoothKind {
    fn from(s: SmoothSpec) -> Self {
        match s {
            SmoothSpec::Polynomial { axis, coefficients } => SmoothKind::Polynomial { axis, coefficients },
            SmoothSpec::Cosine { offset, amplitude, frequency, phase } => {
                SmoothKind::Cosine { offset, amplitude, frequency, phase }
            }
            SmoothSpec::Tanh { offset, amplitude, axis, scale } => SmoothKind::Tanh { offset, amplitude, axis, scale },
            SmoothSpec::Bump { amplitude, width } => SmoothKind::Bump { amplitude, width },
        }
    }
}

impl DistributionSpec {
    pub fn build(&self, dim: usize) -> Result<TemperedDistribution> {
        let check = |len: usize| {
            if len == dim {
                Ok(())
            } else {
                Err(Error::DimensionMismatch { expected: dim, got: len })
            }
        };
        match self {
            DistributionSpec::Dirac { location } => {
                check(location.len())?;
                Ok(TemperedDistribution::dirac(location.clone()))
            }
            DistributionSpec::Gaussian { mean, cov, mass } => {
                check(mean.len())?;
                let cov = match cov {
                    None => DMatrix::identity(dim, dim),
                    Some(c) => {
                        check(if c.len() == dim * dim { dim } else { c.len() })?;
                        DMatrix::from_row_slice(dim, dim, c)
                    }
                };
                Ok(TemperedDistribution::Gaussian(GaussianDensity::new(mean.clone(), cov, *mass)?))
            }
            DistributionSpec::Constant { value } => Ok(TemperedDistribution::constant(*value, dim)),
            DistributionSpec::Smooth { function } => TemperedDistribution::smooth(function.clone().into(), dim),
            DistributionSpec::Hermite { n, p, coeffs } => {
                let scheme = TruncationScheme::new(dim, *n)?;
                Ok(TemperedDistribution::hermite(HermiteCoeffs::from_values(scheme, coeffs.clone())?, *p))
            }
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::hermite::{hermite_eval, hermite_transform, MultiIndex};
    use approx::assert_abs_diff_eq;

    fn unit_gaussian() -> TemperedDistribution {
        TemperedDistribution::gaussian(vec![0.0], 1.0, 1.0).unwrap()
    }

    fn sine() -> TemperedDistribution {
        TemperedDistribution::smooth(
            SmoothKind::Cosine { offset: 0.0, amplitude: 1.0, frequency: vec![1.0], phase: -PI / 2.0 },
            1,
        )
        .unwrap()
    }

    fn h(n: u32, big_n: usize) -> HermiteCoeffs {
        HermiteCoeffs::unit(TruncationScheme::new(1, big_n).unwrap(), &MultiIndex::new(vec![n])).unwrap()
    }

    #[test]
    fn closed_form_translations() {
        let t = translate(&TemperedDistribution::dirac(vec![0.0]), &[2.5]).unwrap();
        assert!(matches!(t.value, TemperedDistribution::Dirac { ref location } if location == &vec![2.5]));
        let g = translate(&unit_gaussian(), &[1.0]).unwrap().value;
        assert_abs_diff_eq!(g.eval(&[1.0]).unwrap(), (2.0 * PI).powf(-0.5), epsilon = 1e-15);
        let s = translate(&sine(), &[0.5]).unwrap().value;
        assert_abs_diff_eq!(s.eval(&[1.5]).unwrap(), 1f64.sin(), epsilon = 1e-15);
        assert!(translate(&sine(), &[f64::INFINITY]).is_err());
    }

    #[test]
    fn hermite_translation_matches_direct_transform() {
        let n = 40;
        let y = TemperedDistribution::hermite(h(0, n), 0.0);
        let t = translate(&y, &[1.0]).unwrap();
        let quad = QuadratureRule::for_degree(n);
        let scheme = TruncationScheme::new(1, n).unwrap();
        let oracle =
            hermite_transform(|x| PI.powf(-0.25) * (-(x[0] - 1.0).powi(2) / 2.0).exp(), scheme, &quad).unwrap().coeffs;
        let TemperedDistribution::Hermite { coeffs, .. } = &t.value else { panic!() };
        for (a, b) in coeffs.values().iter().zip(oracle.values()) {
            assert_abs_diff_eq!(a, b, epsilon = 1e-7);
        }
        assert!(t.reprojection_error < 1e-10);
        assert!(!t.is_flagged(1e-8));
        // a big shift pushes mass out of the truncation
        assert!(translate(&y, &[8.0]).unwrap().is_flagged(1e-3));
    }

    /// `exp(-x d)` truncated, applied in coefficient space on a larger truncation.
    fn exp_translation(c: &HermiteCoeffs, x: f64, terms: usize) -> HermiteCoeffs {
        let n = c.max_degree();
        let mut term = c.with_degree(n + terms);
        let mut acc = term.clone();
        for k in 1..=terms {
            term = derivative_coeffs(&term, 0).with_degree(n + terms).scale(-x / k as f64);
            acc = acc.add_scaled(1.0, &term);
        }
        acc.with_degree(n)
    }

    #[test]
    fn translation_agrees_with_matrix_exponential() {
        let scheme = TruncationScheme::new(1, 16).unwrap();
        let c = HermiteCoeffs::from_values(scheme, (0..17).map(|k| 0.6f64.powi(k) * (-1f64).powi(k / 3)).collect())
            .unwrap();
        for &x in &[-1.0, -0.3, 0.4, 1.0] {
            let direct = translate_coeffs(&c, &[x]);
            let oracle = exp_translation(&c, x, 60);
            // the truncated exponential sees the tail beyond N as well; compare low shells
            for k in 0..8 {
                assert_abs_diff_eq!(direct.values()[k], oracle.values()[k], epsilon = 1e-3);
            }
        }
        let near = translate_coeffs(&h(0, 60), &[0.5]);
        let oracle = exp_translation(&h(0, 60), 0.5, 80);
        for (a, b) in near.values().iter().zip(oracle.values()).take(30) {
            assert_abs_diff_eq!(a, b, epsilon = 1e-12);
        }
    }

    #[test]
    fn translation_round_trip() {
        let y = TemperedDistribution::hermite(h(2, 50).add_scaled(0.5, &h(1, 50)), 0.0);
        let there = translate(&y, &[0.7]).unwrap().value;
        let back = translate(&there, &[-0.7]).unwrap().value;
        let (TemperedDistribution::Hermite { coeffs: a, .. }, TemperedDistribution::Hermite { coeffs: b, .. }) =
            (&y, &back)
        else {
            panic!()
        };
        for (u, v) in a.values().iter().zip(b.values()) {
            assert_abs_diff_eq!(u, v, epsilon = 1e-10);
        }
    }

    #[test]
    fn reflections() {
        let r = TemperedDistribution::dirac(vec![1.5]).reflect();
        assert!(matches!(r, TemperedDistribution::Dirac { ref location } if location == &vec![-1.5]));
        let g = unit_gaussian().reflect();
        assert_abs_diff_eq!(g.eval(&[0.3]).unwrap(), unit_gaussian().eval(&[0.3]).unwrap(), epsilon = 0.0);
        let s = sine().reflect();
        assert_abs_diff_eq!(s.eval(&[0.4]).unwrap(), -(0.4f64.sin()), epsilon = 1e-15);
        let shifted = translate(&sine(), &[0.3]).unwrap().value.reflect();
        assert_abs_diff_eq!(shifted.eval(&[0.4]).unwrap(), (-0.7f64).sin(), epsilon = 1e-15);
    }

    #[test]
    fn pairing_matrix() {
        let dirac = TemperedDistribution::dirac(vec![0.0]);
        let c2 = TemperedDistribution::constant(2.0, 1);
        assert!(matches!(pair(&dirac, &dirac, &[0.0]), Err(Error::DivergentPairing { .. })));
        assert!(matches!(pair(&c2, &c2, &[0.0]), Err(Error::DivergentPairing { .. })));
        assert!(matches!(pair(&sine(), &sine(), &[0.0]), Err(Error::UnsupportedPairing { .. })));
        assert!(pair(&c2, &sine(), &[0.0]).is_err());
        // <delta_0, tau_x y> = y(-x)
        assert_abs_diff_eq!(pair(&dirac, &sine(), &[0.8]).unwrap(), (-0.8f64).sin(), epsilon = 1e-15);
        // <s, tau_x delta_0> = s(x)
        assert_abs_diff_eq!(pair(&sine(), &dirac, &[0.8]).unwrap(), 0.8f64.sin(), epsilon = 1e-15);
        // <c, tau_x y> = c * mass
        let g = TemperedDistribution::gaussian(vec![0.2], 0.5, 1.0).unwrap();
        for x in [-3.0, 0.0, 4.0] {
            assert_abs_diff_eq!(pair(&c2, &g, &[x]).unwrap(), 2.0, epsilon = 0.0);
        }
        // zero constant pairs with anything
        assert_eq!(pair(&TemperedDistribution::constant(0.0, 1), &c2, &[1.0]).unwrap(), 0.0);
        assert!(pair(&dirac, &TemperedDistribution::dirac(vec![0.0, 0.0]), &[0.0]).is_err());
    }

    #[test]
    fn gaussian_pairings() {
        let g1 = TemperedDistribution::gaussian(vec![0.3], 0.5, 2.0).unwrap();
        let g2 = TemperedDistribution::gaussian(vec![-0.1], 0.7, 1.5).unwrap();
        let x = 0.9;
        let closed = pair(&g1, &g2, &[x]).unwrap();
        let oracle = 2.0 * 1.5 * (-(0.3 - (-0.1 + x)).powi(2) / (2.0 * 1.2)).exp() / (2.0 * PI * 1.2).sqrt();
        assert_abs_diff_eq!(closed, oracle, epsilon = 1e-15);
        // E sin(mu + Z) = sin(mu) exp(-v/2)
        let v = pair(&g1, &sine(), &[0.0]).unwrap();
        assert_abs_diff_eq!(v, 2.0 * 0.3f64.sin() * (-0.25f64).exp(), epsilon = 1e-13);
        let detailed = pair_detailed(&g1, &sine(), &[0.0]).unwrap();
        assert!(detailed.error < 1e-12);
        // against a truncation: h_0 paired with N(mu, v): closed form
        let hd = TemperedDistribution::hermite(h(0, 6), 0.0);
        let mu = 0.3_f64;
        let exact = PI.powf(-0.25) * (-mu * mu / (2.0 * 1.5)).exp() / 1.5f64.sqrt() * 2.0;
        assert_abs_diff_eq!(pair(&g1, &hd, &[0.0]).unwrap(), exact, epsilon = 1e-14);
        // the same through the symmetric route
        assert_abs_diff_eq!(pair(&hd, &g1, &[0.0]).unwrap(), exact, epsilon = 1e-14);
    }

    #[test]
    fn gaussian_hermite_against_quadrature() {
        let scheme = TruncationScheme::new(2, 7).unwrap();
        let values: Vec<f64> = (0..scheme.len()).map(|k| ((k * 7 % 5) as f64 - 2.0) / 3.0).collect();
        let c = HermiteCoeffs::from_values(scheme, values).unwrap();
        let cov = DMatrix::from_row_slice(2, 2, &[0.8, 0.3, 0.3, 0.5]);
        let g = GaussianDensity::new(vec![0.4, -0.2], cov, 1.3).unwrap();
        let exact = gaussian_hermite(&g, &c);
        let brute = decaying_integral(&[0.0, 0.0], 1.0, |r| c.reconstruct(r) * g.density(r), 60);
        assert_abs_diff_eq!(exact, brute, epsilon = 1e-12);
    }

    #[test]
    fn hermite_shifted_pairing_matches_translation() {
        let a = h(3, 20).add_scaled(0.2, &h(0, 20));
        let b = h(1, 20).add_scaled(-0.4, &h(4, 20));
        let s = 0.6;
        let direct = hermite_shifted_pairing(&a, &b, &[s]);
        let moved = translate_coeffs(&b.with_degree(60), &[s]);
        assert_abs_diff_eq!(direct, a.with_degree(60).dot(&moved), epsilon = 1e-12);
    }

    #[test]
    fn hermite_smooth_pairing() {
        let hd = TemperedDistribution::hermite(h(0, 4), 0.0);
        // int h_0(r) sin(r - 0) = 0 by parity, int h_0 cos = sqrt2 pi^{1/4} e^{-1/2}
        let cosine = TemperedDistribution::smooth(
            SmoothKind::Cosine { offset: 0.0, amplitude: 1.0, frequency: vec![1.0], phase: 0.0 },
            1,
        )
        .unwrap();
        let v = pair_detailed(&hd, &cosine, &[0.0]).unwrap();
        assert_abs_diff_eq!(v.value, 2f64.sqrt() * PI.powf(0.25) * (-0.5f64).exp(), epsilon = 1e-12);
        assert!(v.error < 1e-10);
        assert_abs_diff_eq!(pair(&hd, &sine(), &[0.0]).unwrap(), 0.0, epsilon = 1e-14);
        let bump = TemperedDistribution::smooth(SmoothKind::Bump { amplitude: 1.0, width: 1.0 }, 1).unwrap();
        assert_abs_diff_eq!(
            pair(&bump, &cosine, &[0.0]).unwrap(),
            (2.0 * PI).sqrt() * (-0.5f64).exp(),
            epsilon = 1e-12
        );
        assert_abs_diff_eq!(bump.mass().unwrap(), (2.0 * PI).sqrt(), epsilon = 1e-15);
    }

    #[test]
    fn projections_agree_with_transforms() {
        let scheme = TruncationScheme::new(1, 12).unwrap();
        let quad = QuadratureRule::for_degree(60);
        let g = TemperedDistribution::gaussian(vec![0.2], 0.6, 1.4).unwrap();
        let fast = projection(&g, &[0.5], scheme).unwrap();
        let slow = hermite_transform(|r| g.eval(&[r[0] - 0.5]).unwrap(), scheme, &quad).unwrap().coeffs;
        for (a, b) in fast.values().iter().zip(slow.values()) {
            assert_abs_diff_eq!(a, b, epsilon = 1e-13);
        }
        let bump = TemperedDistribution::smooth(SmoothKind::Bump { amplitude: 1.0, width: 0.8 }, 1).unwrap();
        let pb = projection(&bump, &[-0.3], scheme).unwrap();
        let ob = hermite_transform(|r| (-(r[0] + 0.3).powi(2) / 1.28).exp(), scheme, &quad).unwrap().coeffs;
        for (a, b) in pb.values().iter().zip(ob.values()) {
            assert_abs_diff_eq!(a, b, epsilon = 1e-12);
        }
        let dirac = projection(&TemperedDistribution::dirac(vec![0.5]), &[0.25], scheme).unwrap();
        assert_abs_diff_eq!(dirac.values()[3], hermite_eval(&MultiIndex::new(vec![3]), &[0.75]), epsilon = 1e-15);
        let hy = TemperedDistribution::hermite(h(2, 8), 0.0);
        assert_eq!(projection(&hy, &[0.0], scheme).unwrap(), h(2, 12));
        assert!(projection(&sine(), &[0.0], scheme).is_err());
    }

    #[test]
    fn coefficient_field_examples() {
        let dirac = TemperedDistribution::dirac(vec![0.0]);
        for x in [-1.0, 0.25, 2.0] {
            assert_abs_diff_eq!(coefficient_field(&sine(), &dirac, &[x]).unwrap(), x.sin(), epsilon = 1e-15);
            let y = TemperedDistribution::gaussian(vec![0.5], 1.0, 1.0).unwrap();
            let expected = y.eval(&[-x]).unwrap();
            assert_abs_diff_eq!(coefficient_field(&dirac, &y, &[x]).unwrap(), expected, epsilon = 1e-15);
            let c = TemperedDistribution::constant(3.0, 1);
            assert_abs_diff_eq!(coefficient_field(&c, &unit_gaussian(), &[x]).unwrap(), 3.0, epsilon = 0.0);
        }
    }

    #[test]
    fn lipschitz_examples() {
        assert_eq!(lipschitz_probe(|_| 4.0, &[-1.0], &[1.0], 1e-2), 0.0);
        assert_abs_diff_eq!(lipschitz_probe(|x| x[0], &[-1.0], &[1.0], 1e-2), 1.0, epsilon = 1e-9);
        let dirac = TemperedDistribution::dirac(vec![0.0]);
        let s = 0.7;
        let y = TemperedDistribution::gaussian(vec![0.0], s * s, 1.0).unwrap();
        let probe = lipschitz_probe(|x| coefficient_field(&dirac, &y, x).unwrap(), &[-3.0], &[3.0], 1e-3);
        let oracle = 1.0 / (s * s * (2.0 * PI * std::f64::consts::E).sqrt());
        assert_abs_diff_eq!(probe, oracle, epsilon = 1e-5);
    }

    #[test]
    fn operator_a_examples() {
        let sigma = CoefficientMatrix::constant(1, 1.0, 0.0);
        let phi = SobolevElement::new(h(0, 3), 1.0);
        let a = apply_a(&sigma, &phi, 0).unwrap();
        assert_eq!(a.index, 0.0);
        assert_eq!(a.coeffs.max_degree(), 4);
        assert_abs_diff_eq!(a.coeffs.values()[1], PI.powf(0.25), epsilon = 1e-14);
        assert!(a.coeffs.values().iter().enumerate().all(|(k, v)| k == 1 || *v == 0.0));
        let twice = apply_a(&sigma, &SobolevElement::new(phi.coeffs.scale(2.0), 1.0), 0).unwrap();
        for (u, v) in twice.coeffs.values().iter().zip(a.coeffs.values()) {
            assert_eq!(*u, 4.0 * v);
        }
        // odd sigma against an even phi pairs to zero
        let odd = CoefficientMatrix::new(vec![sine()], vec![TemperedDistribution::constant(0.0, 1)]).unwrap();
        let zero = apply_a(&odd, &phi, 0).unwrap();
        assert!(zero.coeffs.values().iter().all(|v| v.abs() < 1e-14));
    }

    #[test]
    fn operator_l_on_ground_state() {
        let sigma = CoefficientMatrix::constant(1, 1.0, 0.0);
        let phi = SobolevElement::new(h(0, 3), 1.0);
        let l = apply_l(&sigma, &phi).unwrap();
        let second = derivative_coeffs(&derivative_coeffs(&phi.coeffs, 0), 0);
        let expected = second.scale(PI.sqrt());
        assert_eq!(l.coeffs.max_degree(), 5);
        for (u, v) in l.coeffs.values().iter().zip(expected.values()) {
            assert_abs_diff_eq!(u, v, epsilon = 1e-14);
        }
        // symbolic oracle: h_0'' = (x^2 - 1) h_0
        let x = 0.7;
        let rebuilt = l.coeffs.reconstruct(&[x]);
        assert_abs_diff_eq!(
            rebuilt,
            PI.sqrt() * (x * x - 1.0) * hermite_eval(&MultiIndex::zero(1), &[x]),
            epsilon = 1e-13
        );
    }

    #[test]
    fn operator_l_homogeneity() {
        let coeffs = CoefficientMatrix::new(
            vec![TemperedDistribution::smooth(SmoothKind::Bump { amplitude: 0.8, width: 1.2 }, 1).unwrap()],
            vec![TemperedDistribution::gaussian(vec![0.3], 0.6, 1.0).unwrap()],
        )
        .unwrap();
        let phi = SobolevElement::new(h(1, 6).add_scaled(0.5, &h(0, 6)), 0.0);
        let (d1, b1) = apply_l_parts(&coeffs, &phi).unwrap();
        let lam = 1.5;
        let (d2, b2) = apply_l_parts(&coeffs, &SobolevElement::new(phi.coeffs.scale(lam), 0.0)).unwrap();
        for (u, v) in d2.coeffs.values().iter().zip(d1.coeffs.values()) {
            assert_abs_diff_eq!(*u, lam.powi(3) * v, epsilon = 1e-12);
        }
        for (u, v) in b2.coeffs.values().iter().zip(b1.coeffs.values()) {
            assert_abs_diff_eq!(*u, lam.powi(2) * v, epsilon = 1e-12);
        }
    }

    #[test]
    fn fields_detect_constants() {
        let f = ConvolvedFields::new(CoefficientMatrix::constant(1, 2.0, -1.0), unit_gaussian()).unwrap();
        assert_eq!(f.as_constant(), Some((&[2.0][..], &[-1.0][..])));
        let g = ConvolvedFields::new(
            CoefficientMatrix::new(vec![sine()], vec![TemperedDistribution::constant(0.0, 1)]).unwrap(),
            TemperedDistribution::dirac(vec![0.0]),
        )
        .unwrap();
        assert!(g.as_constant().is_none());
        let (mut s, mut b) = ([0.0], [0.0]);
        g.eval(&[0.3], &mut s, &mut b).unwrap();
        assert_abs_diff_eq!(s[0], 0.3f64.sin(), epsilon = 1e-15);
        let squared = g.with_functional(Arc::new(|t, y, x| Ok(pair(t, y, x)?.powi(2))));
        squared.eval(&[0.3], &mut s, &mut b).unwrap();
        assert_abs_diff_eq!(s[0], 0.3f64.sin().powi(2), epsilon = 1e-15);
    }

    #[test]
    fn spec_parsing() {
        let spec: DistributionSpec =
            toml::from_str("variant = \"smooth\"\nfunction = { kind = \"tanh\", amplitude = 0.5, scale = 2.0 }")
                .unwrap();
        let t = spec.build(1).unwrap();
        assert_abs_diff_eq!(t.eval(&[0.1]).unwrap(), 0.5 * 0.2f64.tanh(), epsilon = 1e-15);
        let g: DistributionSpec = toml::from_str("variant = \"gaussian\"\nmean = [0.0, 1.0]").unwrap();
        assert_eq!(g.build(2).unwrap().mass(), Some(1.0));
        assert!(g.build(1).is_err());
        assert!(toml::from_str::<DistributionSpec>("variant = \"dirac\"\nlocation = [0.0]\nextra = 1").is_err());
        let hspec: DistributionSpec =
            toml::from_str("variant = \"hermite\"\nN = 2\np = 0.5\ncoeffs = [1.0, 0.0, 0.5]").unwrap();
        assert_eq!(hspec.build(1).unwrap().sobolev_index(), Some(0.5));
        assert_eq!(TemperedDistribution::dirac(vec![0.0]).admits_index(-0.3), Some(true));
        assert_eq!(TemperedDistribution::dirac(vec![0.0]).admits_index(-0.2), Some(false));
    }
}
