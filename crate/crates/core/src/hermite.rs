//! Tensor Hermite functions on R^d and their coefficient calculus.
//!
//! The orthonormal Hermite functions
//!
//! ```text
//! h_0(x)     = pi^{-1/4} exp(-x^2 / 2)
//! h_{n+1}(x) = sqrt(2/(n+1)) x h_n(x) - sqrt(n/(n+1)) h_{n-1}(x)
//! ```
//!
//! form an orthonormal basis of L^2(R). On R^d we use products
//! `h_k(x) = h_{k_1}(x_1) ... h_{k_d}(x_d)`. A truncated element is stored as the
//! vector of coefficients `c_k = <f, h_k>` for every multi-index with `|k| <= N`.
//!
//! Multi-indices are enumerated in graded lexicographic order: first by total
//! degree, then lexicographically ascending within a degree, so for `d = 2`
//! the order is `(0,0), (0,1), (1,0), (0,2), (1,1), (2,0), ...`. This order is
//! part of the file formats and must not change. Because it is graded, the
//! coefficients of a truncation at degree `N` are a prefix of those at any
//! degree `N' > N`.
//!
//! Differentiation and multiplication by a coordinate act exactly on
//! coefficients through
//!
//! ```text
//! h_n'    = sqrt(n/2) h_{n-1} - sqrt((n+1)/2) h_{n+1}
//! x h_n   = sqrt(n/2) h_{n-1} + sqrt((n+1)/2) h_{n+1}
//! ```
//!
//! and raise the degree by one.

use std::f64::consts::PI;
use std::fmt;
use std::io::Write;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Largest supported dimension.
pub const MAX_DIM: usize = 3;

const JACOBI_SEED_NODES: usize = 160;

/// Rescaling threshold for the log-magnitude recurrence.
const RESCALE: f64 = 1e150;

/// A multi-index `(k_1, ..., k_d)` in `Z^d_+`.
#[derive(Clone, Debug, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub struct MultiIndex(Vec<u32>);

impl MultiIndex {
    pub fn new(entries: Vec<u32>) -> Self {
        MultiIndex(entries)
    }

    pub fn zero(dim: usize) -> Self {
        MultiIndex(vec![0; dim])
    }

    pub fn dim(&self) -> usize {
        self.0.len()
    }

    /// Total degree `|k|`.
    pub fn degree(&self) -> usize {
        self.0.iter().map(|&k| k as usize).sum()
    }

    pub fn entries(&self) -> &[u32] {
        &self.0
    }

    /// `(-1)^{|k|}`.
    pub fn parity_sign(&self) -> f64 {
        if self.degree().is_multiple_of(2) {
            1.0
        } else {
            -1.0
        }
    }
}

impl From<&[u32]> for MultiIndex {
    fn from(v: &[u32]) -> Self {
        MultiIndex(v.to_vec())
    }
}

impl fmt::Display for MultiIndex {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "(")?;
        for (i, k) in self.0.iter().enumerate() {
            if i > 0 {
                write!(f, ",")?;
            }
            write!(f, "{k}")?;
        }
        write!(f, ")")
    }
}

fn binomial(n: usize, k: usize) -> usize {
    if k > n {
        return 0;
    }
    let k = k.min(n - k);
    let mut acc: usize = 1;
    for i in 0..k {
        acc = acc * (n - i) / (i + 1);
    }
    acc
}

/// Number of multi-indices in `parts` dimensions with total degree exactly `degree`.
fn shell_size(degree: usize, parts: usize) -> usize {
    if parts == 0 {
        return usize::from(degree == 0);
    }
    binomial(degree + parts - 1, parts - 1)
}

/// Keep every multi-index with `|k| <= max_degree`.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct TruncationScheme {
    dim: usize,
    max_degree: usize,
}

impl TruncationScheme {
    pub fn new(dim: usize, max_degree: usize) -> Result<Self> {
        if dim == 0 || dim > MAX_DIM {
            return Err(Error::InvalidInput(format!("dimension must be in 1..={MAX_DIM}, got {dim}")));
        }
        Ok(TruncationScheme { dim, max_degree })
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn max_degree(&self) -> usize {
        self.max_degree
    }

    /// Basis size `C(N + d, d)`.
    pub fn len(&self) -> usize {
        binomial(self.max_degree + self.dim, self.dim)
    }

    pub fn is_empty(&self) -> bool {
        false
    }

    /// Same dimension, different degree.
    pub fn with_degree(&self, max_degree: usize) -> Self {
        TruncationScheme { dim: self.dim, max_degree }
    }

    /// Position of `k` in graded-lex order, `None` when outside the truncation.
    pub fn position(&self, k: &[u32]) -> Option<usize> {
        if k.len() != self.dim {
            return None;
        }
        let degree: usize = k.iter().map(|&v| v as usize).sum();
        if degree > self.max_degree {
            return None;
        }
        // everything of lower total degree comes first
        let offset = if degree == 0 { 0 } else { binomial(degree - 1 + self.dim, self.dim) };
        Some(offset + rank_in_shell(k, degree))
    }

    /// All multi-indices in graded-lex order.
    pub fn indices(&self) -> Vec<MultiIndex> {
        let mut out = Vec::with_capacity(self.len());
        let mut buf = vec![0u32; self.dim];
        for degree in 0..=self.max_degree {
            push_shell(&mut out, &mut buf, 0, degree);
        }
        out
    }
}

fn rank_in_shell(k: &[u32], degree: usize) -> usize {
    if k.len() <= 1 {
        return 0;
    }
    let first = k[0] as usize;
    let mut r = 0;
    for a in 0..first {
        r += shell_size(degree - a, k.len() - 1);
    }
    r + rank_in_shell(&k[1..], degree - first)
}

fn push_shell(out: &mut Vec<MultiIndex>, buf: &mut [u32], pos: usize, remaining: usize) {
    if pos == buf.len() - 1 {
        buf[pos] = remaining as u32;
        out.push(MultiIndex(buf.to_vec()));
        return;
    }
    for a in 0..=remaining {
        buf[pos] = a as u32;
        push_shell(out, buf, pos + 1, remaining - a);
    }
}

/// Values `h_0(x), ..., h_n(x)` of the orthonormal Hermite functions.
///
/// The recurrence runs on a rescaled sequence with the Gaussian factor kept in
/// log form, so large `|x|` neither overflows nor loses the small values to
/// premature underflow; values below the double range come back as 0.
pub fn hermite_functions(n: usize, x: f64) -> Vec<f64> {
    let mut out = vec![0.0; n + 1];
    let mut log_scale = -0.5 * x * x;
    let mut prev = 0.0;
    let mut cur = PI.powf(-0.25);
    out[0] = cur * log_scale.exp();
    for m in 0..n {
        let mf = m as f64;
        let next = (2.0 / (mf + 1.0)).sqrt() * x * cur - (mf / (mf + 1.0)).sqrt() * prev;
        prev = cur;
        cur = next;
        if cur.abs() > RESCALE {
            prev /= RESCALE;
            cur /= RESCALE;
            log_scale += RESCALE.ln();
        }
        out[m + 1] = cur * log_scale.exp();
    }
    out
}

/// Polynomial parts `h_k(x) exp(x^2 / 2)` for `k = 0..=n`.
pub fn hermite_polynomial_parts(n: usize, x: f64) -> Vec<f64> {
    let mut out = vec![0.0; n + 1];
    out[0] = PI.powf(-0.25);
    if n >= 1 {
        out[1] = 2f64.sqrt() * x * out[0];
    }
    for m in 1..n {
        let mf = m as f64;
        out[m + 1] = (2.0 / (mf + 1.0)).sqrt() * x * out[m] - (mf / (mf + 1.0)).sqrt() * out[m - 1];
    }
    out
}

/// `h_k(x)` for a multi-index `k` and a point `x` of the same dimension.
pub fn hermite_eval(k: &MultiIndex, x: &[f64]) -> f64 {
    assert_eq!(k.dim(), x.len(), "multi-index and point dimensions differ");
    k.entries().iter().zip(x).map(|(&ki, &xi)| hermite_functions(ki as usize, xi)[ki as usize]).product()
}

/// Gauss-Hermite rule for the weight `exp(-x^2)` with `Q` nodes.
///
/// Besides the classical weights `w_i` it carries the weights
/// `W_i = w_i exp(x_i^2) = 1 / (Q h_{Q-1}(x_i)^2)` that integrate Hermite
/// *functions* directly: `sum_i W_i h_j(x_i) h_k(x_i) = delta_jk` whenever
/// `j + k <= 2Q - 1`.
#[derive(Clone, Debug, PartialEq)]
pub struct QuadratureRule {
    nodes: Vec<f64>,
    weights: Vec<f64>,
    function_weights: Vec<f64>,
}

impl QuadratureRule {
    pub fn new(points: usize) -> Result<Self> {
        if points == 0 {
            return Err(Error::InvalidInput("quadrature needs at least one node".into()));
        }
        let n = points;
        let nf = n as f64;
        let half = n.div_ceil(2);
        let mut roots = vec![0.0; n];
        // The asymptotic guesses lose track of the roots for large rules; there the
        // eigenvalues of the Jacobi matrix seed Newton instead.
        let seeds = (n > JACOBI_SEED_NODES).then(|| {
            let off = |k: usize| (k as f64 / 2.0).sqrt();
            let jacobi = nalgebra::DMatrix::from_fn(n, n, |i, j| if i.abs_diff(j) == 1 { off(i.max(j)) } else { 0.0 });
            let mut ev: Vec<f64> = jacobi.symmetric_eigenvalues().iter().copied().collect();
            ev.sort_by(|a, b| b.partial_cmp(a).expect("finite eigenvalues"));
            ev
        });
        let mut z = 0.0f64;
        for i in 0..half {
            z = match (&seeds, i) {
                (Some(ev), _) => ev[i],
                (None, 0) => (2.0 * nf + 1.0).sqrt() - 1.85575 * (2.0 * nf + 1.0).powf(-1.0 / 6.0),
                (None, 1) => z - 1.14 * nf.powf(0.426) / z,
                (None, 2) => 1.86 * z - 0.86 * roots[0],
                (None, 3) => 1.91 * z - 0.91 * roots[1],
                (None, _) => 2.0 * z - roots[i - 2],
            };
            for _ in 0..200 {
                let p = hermite_polynomial_parts(n, z);
                let dz = p[n] / ((2.0 * nf).sqrt() * p[n - 1]);
                z -= dz;
                if dz.abs() <= 1e-15 * z.abs().max(1.0) {
                    break;
                }
            }
            roots[i] = z;
            roots[n - 1 - i] = -z;
        }
        if n % 2 == 1 {
            roots[n / 2] = 0.0;
        }
        roots.sort_by(|a, b| a.partial_cmp(b).expect("finite nodes"));
        let mut weights = Vec::with_capacity(n);
        let mut function_weights = Vec::with_capacity(n);
        for &x in &roots {
            let p = hermite_polynomial_parts(n - 1, x)[n - 1];
            let h = hermite_functions(n - 1, x)[n - 1];
            weights.push(1.0 / (nf * p * p));
            function_weights.push(1.0 / (nf * h * h));
        }
        Ok(QuadratureRule { nodes: roots, weights, function_weights })
    }

    /// Default rule for a truncation of degree `N`: `N + 8` nodes per axis.
    pub fn for_degree(max_degree: usize) -> Self {
        Self::new(max_degree + 8).expect("positive node count")
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    pub fn nodes(&self) -> &[f64] {
        &self.nodes
    }

    /// Weights for `int exp(-x^2) g(x) dx`.
    pub fn weights(&self) -> &[f64] {
        &self.weights
    }

    /// Weights for `int f(x) dx` with `f` of Hermite-function type.
    pub fn function_weights(&self) -> &[f64] {
        &self.function_weights
    }

    /// `int f(x) dx` over R^d by the tensor rule with Hermite-function weights.
    pub fn integrate<F>(&self, dim: usize, f: F) -> f64
    where
        F: Fn(&[f64]) -> f64,
    {
        let mut acc = 0.0;
        self.for_each_node(dim, |x, w| acc += w * f(x));
        acc
    }

    /// Visit every tensor node in row-major order with its product function weight.
    pub fn for_each_node<F>(&self, dim: usize, mut visit: F)
    where
        F: FnMut(&[f64], f64),
    {
        let q = self.len();
        let total = q.pow(dim as u32);
        let mut point = vec![0.0; dim];
        let mut idx = vec![0usize; dim];
        for _ in 0..total {
            let mut w = 1.0;
            for a in 0..dim {
                point[a] = self.nodes[idx[a]];
                w *= self.function_weights[idx[a]];
            }
            visit(&point, w);
            for a in (0..dim).rev() {
                idx[a] += 1;
                if idx[a] < q {
                    break;
                }
                idx[a] = 0;
            }
        }
    }

    /// Tensor node multi-indices in the same row-major order as [`Self::for_each_node`].
    pub(crate) fn tensor_indices(&self, dim: usize) -> Vec<Vec<usize>> {
        let q = self.len();
        let total = q.pow(dim as u32);
        let mut out = Vec::with_capacity(total);
        let mut idx = vec![0usize; dim];
        for _ in 0..total {
            out.push(idx.clone());
            for a in (0..dim).rev() {
                idx[a] += 1;
                if idx[a] < q {
                    break;
                }
                idx[a] = 0;
            }
        }
        out
    }
}

/// A truncated coefficient vector `c_k = <f, h_k>_0`, `|k| <= N`.
#[derive(Clone, Debug, PartialEq)]
pub struct HermiteCoeffs {
    scheme: TruncationScheme,
    values: Vec<f64>,
}

impl HermiteCoeffs {
    pub fn zeros(scheme: TruncationScheme) -> Self {
        HermiteCoeffs { scheme, values: vec![0.0; scheme.len()] }
    }

    pub fn from_values(scheme: TruncationScheme, values: Vec<f64>) -> Result<Self> {
        if values.len() != scheme.len() {
            return Err(Error::InvalidInput(format!(
                "expected {} coefficients for d={}, N={}, got {}",
                scheme.len(),
                scheme.dim(),
                scheme.max_degree(),
                values.len()
            )));
        }
        Ok(HermiteCoeffs { scheme, values })
    }

    /// The unit coordinate vector `e_k`.
    pub fn unit(scheme: TruncationScheme, k: &MultiIndex) -> Result<Self> {
        let pos = scheme.position(k.entries()).ok_or_else(|| Error::InvalidInput(format!("{k} outside truncation")))?;
        let mut c = Self::zeros(scheme);
        c.values[pos] = 1.0;
        Ok(c)
    }

    pub fn scheme(&self) -> TruncationScheme {
        self.scheme
    }

    pub fn dim(&self) -> usize {
        self.scheme.dim()
    }

    pub fn max_degree(&self) -> usize {
        self.scheme.max_degree()
    }

    pub fn values(&self) -> &[f64] {
        &self.values
    }

    pub fn values_mut(&mut self) -> &mut [f64] {
        &mut self.values
    }

    pub fn into_values(self) -> Vec<f64> {
        self.values
    }

    pub fn get(&self, k: &[u32]) -> f64 {
        self.scheme.position(k).map_or(0.0, |p| self.values[p])
    }

    /// Zero-pad (or cut) to another degree; the graded order makes this a prefix operation.
    pub fn with_degree(&self, max_degree: usize) -> Self {
        let scheme = self.scheme.with_degree(max_degree);
        let mut values = vec![0.0; scheme.len()];
        let n = values.len().min(self.values.len());
        values[..n].copy_from_slice(&self.values[..n]);
        HermiteCoeffs { scheme, values }
    }

    pub fn scale(&self, a: f64) -> Self {
        HermiteCoeffs { scheme: self.scheme, values: self.values.iter().map(|v| a * v).collect() }
    }

    /// `self + a * other` on the larger of the two truncations.
    pub fn add_scaled(&self, a: f64, other: &HermiteCoeffs) -> Self {
        assert_eq!(self.dim(), other.dim(), "dimension mismatch");
        let n = self.max_degree().max(other.max_degree());
        let mut out = self.with_degree(n);
        for (o, v) in out.values.iter_mut().zip(&other.values) {
            *o += a * v;
        }
        out
    }

    /// Plain coefficient dot product over the common prefix.
    pub fn dot(&self, other: &HermiteCoeffs) -> f64 {
        assert_eq!(self.dim(), other.dim(), "dimension mismatch");
        self.values.iter().zip(&other.values).map(|(a, b)| a * b).sum()
    }

    /// `c_k -> (-1)^{|k|} c_k`, the coefficients of `f(-x)`.
    pub fn reflect(&self) -> Self {
        let mut out = self.clone();
        for (v, k) in out.values.iter_mut().zip(self.scheme.indices()) {
            *v *= k.parity_sign();
        }
        out
    }

    /// Evaluate `sum_k c_k h_k(x)`.
    pub fn reconstruct(&self, x: &[f64]) -> f64 {
        let n = self.max_degree();
        let tables: Vec<Vec<f64>> = x.iter().map(|&xi| hermite_functions(n, xi)).collect();
        self.sum_with_tables(&tables)
    }

    /// Evaluate `exp(|x|^2 / 2) sum_k c_k h_k(x)`, a polynomial of degree `N`.
    pub fn reconstruct_polynomial_part(&self, x: &[f64]) -> f64 {
        let n = self.max_degree();
        let tables: Vec<Vec<f64>> = x.iter().map(|&xi| hermite_polynomial_parts(n, xi)).collect();
        self.sum_with_tables(&tables)
    }

    fn sum_with_tables(&self, tables: &[Vec<f64>]) -> f64 {
        self.scheme
            .indices()
            .iter()
            .zip(&self.values)
            .map(|(k, c)| {
                let mut v = *c;
                for (a, &ka) in k.entries().iter().enumerate() {
                    v *= tables[a][ka as usize];
                }
                v
            })
            .sum()
    }

    /// `int sum_k c_k h_k(x) dx`, using `int h_{2m} = sqrt(2 pi) (-1)^m h_{2m}(0)` and
    /// vanishing odd integrals.
    pub fn integral(&self) -> f64 {
        let n = self.max_degree();
        let at_zero = hermite_functions(n, 0.0);
        let one_d: Vec<f64> = (0..=n)
            .map(|m| {
                if m % 2 == 1 {
                    0.0
                } else {
                    let sign = if (m / 2) % 2 == 0 { 1.0 } else { -1.0 };
                    (2.0 * PI).sqrt() * sign * at_zero[m]
                }
            })
            .collect();
        let tables = vec![one_d; self.dim()];
        self.sum_with_tables(&tables)
    }

    /// JSON object `{d, N, order: "graded-lex", coeffs: [...]}`.
    pub fn to_json(&self) -> serde_json::Value {
        serde_json::to_value(CoeffsFile {
            d: self.dim(),
            n: self.max_degree(),
            order: GRADED_LEX.to_string(),
            coeffs: self.values.clone(),
        })
        .expect("plain data serializes")
    }

    pub fn from_json(value: &serde_json::Value) -> Result<Self> {
        let file: CoeffsFile = serde_json::from_value(value.clone())?;
        if file.order != GRADED_LEX {
            return Err(Error::InvalidInput(format!("unsupported order '{}'", file.order)));
        }
        Self::from_values(TruncationScheme::new(file.d, file.n)?, file.coeffs)
    }

    /// Flat CSV with header `index,k_1..k_d,value`.
    pub fn write_csv<W: Write>(&self, out: W) -> Result<()> {
        let mut w = csv::Writer::from_writer(out);
        let mut header = vec!["index".to_string()];
        header.extend((1..=self.dim()).map(|i| format!("k_{i}")));
        header.push("value".into());
        w.write_record(&header)?;
        for (i, (k, v)) in self.scheme.indices().iter().zip(&self.values).enumerate() {
            let mut rec = vec![i.to_string()];
            rec.extend(k.entries().iter().map(|e| e.to_string()));
            rec.push(format_float(*v));
            w.write_record(&rec)?;
        }
        w.flush()?;
        Ok(())
    }
}

pub(crate) fn format_float(v: f64) -> String {
    // shortest round-trip representation
    format!("{v:?}")
}

const GRADED_LEX: &str = "graded-lex";

#[derive(Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct CoeffsFile {
    d: usize,
    #[serde(rename = "N")]
    n: usize,
    order: String,
    coeffs: Vec<f64>,
}

/// Coefficients together with an aliasing estimate.
#[derive(Clone, Debug)]
pub struct Transform {
    pub coeffs: HermiteCoeffs,
    /// Euclidean norm of the top-degree shell `|k| = N`; a proxy for the truncation tail.
    pub aliasing: f64,
}

/// Quadrature approximation of `c_k = int f h_k dx` for all `|k| <= N`.
///
/// Each coefficient is summed over the tensor nodes in a fixed order, so the
/// result does not depend on how the work is split across threads.
pub fn hermite_transform<F>(f: F, scheme: TruncationScheme, quad: &QuadratureRule) -> Result<Transform>
where
    F: Fn(&[f64]) -> f64 + Sync,
{
    let n = scheme.max_degree();
    if quad.len() < n + 1 {
        return Err(Error::QuadratureTooSmall { nodes: quad.len(), degree: n });
    }
    let dim = scheme.dim();
    let table: Vec<Vec<f64>> = quad.nodes().iter().map(|&x| hermite_functions(n, x)).collect();
    let nodes = quad.tensor_indices(dim);
    let weighted: Vec<f64> = nodes
        .par_iter()
        .map(|idx| {
            let point: Vec<f64> = idx.iter().map(|&i| quad.nodes()[i]).collect();
            let w: f64 = idx.iter().map(|&i| quad.function_weights()[i]).product();
            w * f(&point)
        })
        .collect();
    let indices = scheme.indices();
    let values: Vec<f64> = indices
        .par_iter()
        .map(|k| {
            let mut acc = 0.0;
            for (idx, fw) in nodes.iter().zip(&weighted) {
                let mut basis = 1.0;
                for (a, &ka) in k.entries().iter().enumerate() {
                    basis *= table[idx[a]][ka as usize];
                }
                acc += fw * basis;
            }
            acc
        })
        .collect();
    let aliasing = indices.iter().zip(&values).filter(|(k, _)| k.degree() == n).map(|(_, v)| v * v).sum::<f64>().sqrt();
    Ok(Transform { coeffs: HermiteCoeffs { scheme, values }, aliasing })
}

fn check_axis(c: &HermiteCoeffs, axis: usize) {
    assert!(axis < c.dim(), "axis {axis} out of range for d={}", c.dim());
}

/// Exact coefficients of `d/dx_axis` on the truncation of degree `N + 1`.
pub fn derivative_coeffs(c: &HermiteCoeffs, axis: usize) -> HermiteCoeffs {
    ladder(c, axis, -1.0)
}

/// Exact coefficients of `x_axis * f` on the truncation of degree `N + 1`.
pub fn multiply_by_coordinate(c: &HermiteCoeffs, axis: usize) -> HermiteCoeffs {
    ladder(c, axis, 1.0)
}

fn ladder(c: &HermiteCoeffs, axis: usize, raise_sign: f64) -> HermiteCoeffs {
    check_axis(c, axis);
    let out_scheme = c.scheme.with_degree(c.max_degree() + 1);
    let mut out = HermiteCoeffs::zeros(out_scheme);
    let mut k_buf = vec![0u32; c.dim()];
    for (k, &v) in c.scheme.indices().iter().zip(&c.values) {
        if v == 0.0 {
            continue;
        }
        let n = k.entries()[axis] as f64;
        k_buf.copy_from_slice(k.entries());
        if n > 0.0 {
            k_buf[axis] -= 1;
            let p = out_scheme.position(&k_buf).expect("lowered index stays inside");
            out.values[p] += v * (n / 2.0).sqrt();
            k_buf[axis] += 1;
        }
        k_buf[axis] += 1;
        let p = out_scheme.position(&k_buf).expect("raised index fits degree N+1");
        out.values[p] += raise_sign * v * ((n + 1.0) / 2.0).sqrt();
    }
    out
}
