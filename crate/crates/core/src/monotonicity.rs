//! The monotonicity inequality for constant-coefficient operators:
//! `2 <phi, L_o phi>_{p-1} + sum_i ||A_oi phi||^2_{p-1} <= C ||phi||^2_{p-1}`.
//!
//! Everything is computed with exact coefficient recurrences on the truncation of
//! degree `N + 2`, so no quadrature enters.

use nalgebra::{DMatrix, SymmetricEigen};
use rand::Rng;
use rand_distr::{Distribution, StandardNormal};
use rayon::prelude::*;
use serde::Serialize;

use crate::error::{Error, Result};
use crate::hermite::{derivative_coeffs, HermiteCoeffs, MultiIndex, TruncationScheme};
use crate::rng::{derive_seed, stream_rng, tags};
use crate::sobolev::{norm_weight, sobolev_inner, sobolev_norm};

/// Constant `sigma` (row-major, d x d), `b` and Sobolev index `p`.
#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct ConstantOperatorPair {
    pub sigma: Vec<f64>,
    pub b: Vec<f64>,
    pub p: f64,
}

impl ConstantOperatorPair {
    pub fn new(sigma: Vec<f64>, b: Vec<f64>, p: f64) -> Result<Self> {
        let d = b.len();
        if d == 0 || sigma.len() != d * d {
            return Err(Error::DimensionMismatch { expected: d * d, got: sigma.len() });
        }
        Ok(ConstantOperatorPair { sigma, b, p })
    }

    pub fn dim(&self) -> usize {
        self.b.len()
    }

    /// `max_{i,j} {|sigma_ij|, |b_i|}`.
    pub fn alpha(&self) -> f64 {
        self.sigma.iter().chain(&self.b).fold(0.0, |m, v| m.max(v.abs()))
    }

    /// `A_oj phi = -sum_i sigma_ij d_i phi` on degree `N + 2`.
    pub fn apply_a(&self, phi: &HermiteCoeffs, j: usize) -> HermiteCoeffs {
        let d = self.dim();
        let scheme = phi.scheme().with_degree(phi.max_degree() + 2);
        let mut out = HermiteCoeffs::zeros(scheme);
        for i in 0..d {
            let s = self.sigma[i * d + j];
            if s != 0.0 {
                out = out.add_scaled(-s, &derivative_coeffs(phi, i).with_degree(scheme.max_degree()));
            }
        }
        out
    }

    /// `L_o phi = 1/2 sum (sigma sigma^T)_ik d_ik phi - sum_i b_i d_i phi` on degree `N + 2`.
    pub fn apply_l(&self, phi: &HermiteCoeffs) -> HermiteCoeffs {
        let d = self.dim();
        let scheme = phi.scheme().with_degree(phi.max_degree() + 2);
        let first: Vec<HermiteCoeffs> = (0..d).map(|i| derivative_coeffs(phi, i)).collect();
        let mut out = HermiteCoeffs::zeros(scheme);
        for i in 0..d {
            for k in 0..d {
                let a: f64 = (0..d).map(|j| self.sigma[i * d + j] * self.sigma[k * d + j]).sum();
                if a != 0.0 {
                    out = out.add_scaled(0.5 * a, &derivative_coeffs(&first[i], k));
                }
            }
            if self.b[i] != 0.0 {
                out = out.add_scaled(-self.b[i], &first[i].with_degree(scheme.max_degree()));
            }
        }
        out
    }
}

/// `2 <phi, L_o phi>_{p-1} + sum_i ||A_oi phi||^2_{p-1}`.
pub fn monotonicity_lhs(ops: &ConstantOperatorPair, phi: &HermiteCoeffs) -> f64 {
    let q = ops.p - 1.0;
    let drift = 2.0 * sobolev_inner(phi, &ops.apply_l(phi), q);
    let diffusion: f64 = (0..ops.dim()).map(|j| sobolev_norm(&ops.apply_a(phi, j), q).powi(2)).sum();
    drift + diffusion
}

/// `LHS / ||phi||^2_{p-1}`.
pub fn monotonicity_ratio(ops: &ConstantOperatorPair, phi: &HermiteCoeffs) -> f64 {
    monotonicity_lhs(ops, phi) / sobolev_norm(phi, ops.p - 1.0).powi(2)
}

/// Largest value of `LHS / ||phi||^2_{p-1}` over the truncation, and a maximizer.
///
/// The left side is the quadratic form of a symmetric matrix `M`; the maximum is the top
/// eigenvalue of `W^{-1/2} M W^{-1/2}` with `W` the diagonal norm weights.
pub fn rayleigh_max(ops: &ConstantOperatorPair, scheme: TruncationScheme) -> (f64, HermiteCoeffs) {
    let d = ops.dim();
    let q = ops.p - 1.0;
    let n = scheme.len();
    let ext = scheme.with_degree(scheme.max_degree() + 2);
    let ext_weights: Vec<f64> = ext.indices().iter().map(|k| norm_weight(k.degree(), d, q)).collect();
    let basis = scheme.indices();
    let mut lmat = DMatrix::zeros(ext.len(), n);
    let mut amats = vec![DMatrix::zeros(ext.len(), n); d];
    for (col, k) in basis.iter().enumerate() {
        let e = HermiteCoeffs::unit(scheme, k).expect("index from scheme");
        lmat.column_mut(col).copy_from_slice(ops.apply_l(&e).values());
        for (j, a) in amats.iter_mut().enumerate() {
            a.column_mut(col).copy_from_slice(ops.apply_a(&e, j).values());
        }
    }
    let w_ext = DMatrix::from_diagonal(&nalgebra::DVector::from_vec(ext_weights.clone()));
    let wl = (&w_ext * &lmat).rows(0, n).into_owned();
    let mut m = &wl + wl.transpose();
    for a in &amats {
        m += a.transpose() * &w_ext * a;
    }
    let inv_sqrt: Vec<f64> = ext_weights[..n].iter().map(|w| 1.0 / w.sqrt()).collect();
    for r in 0..n {
        for c in 0..n {
            m[(r, c)] *= inv_sqrt[r] * inv_sqrt[c];
        }
    }
    let eig = SymmetricEigen::new(m);
    let (top, &lambda) =
        eig.eigenvalues.iter().enumerate().fold((0, &f64::NEG_INFINITY), |acc, x| if x.1 > acc.1 { x } else { acc });
    let v: Vec<f64> = eig.eigenvectors.column(top).iter().zip(&inv_sqrt).map(|(x, s)| x * s).collect();
    (lambda, HermiteCoeffs::from_values(scheme, v).expect("sized from scheme"))
}

fn dominant_degree(phi: &HermiteCoeffs, q: f64) -> usize {
    let d = phi.dim();
    phi.scheme()
        .indices()
        .iter()
        .zip(phi.values())
        .map(|(k, v)| (norm_weight(k.degree(), d, q) * v * v, k.degree()))
        .fold((0.0, 0), |acc, x| if x.0 > acc.0 { x } else { acc })
        .1
}

/// Estimated monotonicity constant.
#[derive(Clone, Debug, Serialize)]
pub struct ConstantEstimate {
    pub alpha: f64,
    pub p: f64,
    pub d: usize,
    #[serde(rename = "N")]
    pub n: usize,
    #[serde(rename = "C_hat")]
    pub c_hat: f64,
    pub argmax_phi_degree: usize,
    pub argmax_operator: ConstantOperatorPair,
    /// `(N, C_hat)` for `N = N_0, 2 N_0, ...` up to the requested degree.
    pub saturation_curve: Vec<(usize, f64)>,
    /// Number of operator pairs tried (random box samples plus corners).
    pub operators: usize,
    /// Largest ratio seen on random test elements, which never exceeds `C_hat`.
    pub random_phi_max: f64,
}

/// Sample operator pairs in the `alpha` box (plus all sign corners) and maximize the ratio.
pub fn estimate_constant(
    alpha: f64,
    p: f64,
    d: usize,
    samples: usize,
    scheme: TruncationScheme,
    seed: u64,
) -> Result<ConstantEstimate> {
    if samples < 100 {
        return Err(Error::InvalidInput("estimate_constant needs at least 100 samples".into()));
    }
    if scheme.dim() != d {
        return Err(Error::DimensionMismatch { expected: d, got: scheme.dim() });
    }
    let entries = d * d + d;
    let lineage = derive_seed(seed, &[tags::MONOTONICITY]);
    let mut ops: Vec<ConstantOperatorPair> = (0..samples as u64)
        .map(|s| {
            let mut rng = stream_rng(lineage, s);
            let v: Vec<f64> = (0..entries).map(|_| alpha * (2.0 * rng.random::<f64>() - 1.0)).collect();
            ConstantOperatorPair::new(v[..d * d].to_vec(), v[d * d..].to_vec(), p).expect("consistent")
        })
        .collect();
    for mask in 0..(1u64 << entries) {
        let v: Vec<f64> = (0..entries).map(|e| if mask >> e & 1 == 1 { alpha } else { -alpha }).collect();
        ops.push(ConstantOperatorPair::new(v[..d * d].to_vec(), v[d * d..].to_vec(), p).expect("consistent"));
    }

    let top = scheme.max_degree();
    let mut degrees = vec![top];
    while degrees.last().expect("non-empty") / 2 >= 4 {
        degrees.push(degrees.last().expect("non-empty") / 2);
    }
    degrees.reverse();

    let per_op: Vec<(Vec<f64>, HermiteCoeffs, f64)> = ops
        .par_iter()
        .enumerate()
        .map(|(i, op)| {
            let curve: Vec<f64> = degrees.iter().map(|&n| rayleigh_max(op, scheme.with_degree(n)).0).collect();
            let (_, argmax) = rayleigh_max(op, scheme);
            let mut rng = stream_rng(derive_seed(lineage, &[1]), i as u64);
            let raw: Vec<f64> = (0..scheme.len()).map(|_| StandardNormal.sample(&mut rng)).collect();
            let phi = HermiteCoeffs::from_values(scheme, raw).expect("sized from scheme");
            (curve, argmax, monotonicity_ratio(op, &phi))
        })
        .collect();

    let mut best = 0usize;
    for (i, (curve, _, _)) in per_op.iter().enumerate() {
        if curve.last() > per_op[best].0.last() {
            best = i;
        }
    }
    let saturation_curve: Vec<(usize, f64)> = degrees
        .iter()
        .enumerate()
        .map(|(li, &n)| (n, per_op.iter().map(|(c, _, _)| c[li]).fold(f64::NEG_INFINITY, f64::max)))
        .collect();
    let random_phi_max = per_op.iter().map(|(_, _, r)| *r).fold(f64::NEG_INFINITY, f64::max);
    let c_hat = saturation_curve.last().expect("non-empty").1.max(0.0);
    let c_hat = if alpha == 0.0 { 0.0 } else { c_hat };
    Ok(ConstantEstimate {
        alpha,
        p,
        d,
        n: top,
        c_hat,
        argmax_phi_degree: dominant_degree(&per_op[best].1, p - 1.0),
        argmax_operator: ops[best].clone(),
        saturation_curve,
        operators: ops.len(),
        random_phi_max,
    })
}

/// The unit vector `e_k` of a one-dimensional truncation.
pub fn unit_1d(k: u32, n: usize) -> HermiteCoeffs {
    HermiteCoeffs::unit(TruncationScheme::new(1, n).expect("d = 1"), &MultiIndex::new(vec![k])).expect("k <= n")
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_abs_diff_eq;

    #[test]
    fn zero_phi_gives_zero() {
        let ops = ConstantOperatorPair::new(vec![1.3], vec![-0.4], 0.5).unwrap();
        let zero = HermiteCoeffs::zeros(TruncationScheme::new(1, 6).unwrap());
        assert_eq!(monotonicity_lhs(&ops, &zero), 0.0);
    }

    #[test]
    fn identity_at_p_one() {
        let scheme = TruncationScheme::new(1, 12).unwrap();
        let phi =
            HermiteCoeffs::from_values(scheme, (0..13).map(|k| ((k * 5 % 7) as f64 - 3.0) / 2.0).collect()).unwrap();
        for (s, b) in [(1.0, 0.0), (-2.0, 1.5), (0.3, -2.0)] {
            let ops = ConstantOperatorPair::new(vec![s], vec![b], 1.0).unwrap();
            let norm2 = sobolev_norm(&phi, 0.0).powi(2);
            assert!(monotonicity_lhs(&ops, &phi).abs() <= 1e-10 * norm2);
        }
        let ops = ConstantOperatorPair::new(vec![1.0], vec![0.7], 1.0).unwrap();
        assert!(monotonicity_lhs(&ops, &unit_1d(0, 0)).abs() < 1e-15);
        assert!(monotonicity_lhs(&ops, &unit_1d(1, 1)).abs() < 1e-15);
    }

    #[test]
    fn ground_state_at_p_zero() {
        // phi' = -sqrt(1/2) e_1, phi'' = -1/2 e_0 + sqrt(1/2) e_2; weights (2n+1)^{-2}
        let ops = ConstantOperatorPair::new(vec![1.0], vec![0.0], 0.0).unwrap();
        let oracle = 2.0 * 0.5 * (-0.5) + 0.5 / 9.0;
        assert_abs_diff_eq!(monotonicity_lhs(&ops, &unit_1d(0, 0)), oracle, epsilon = 1e-15);
        assert_abs_diff_eq!(oracle, -4.0 / 9.0, epsilon = 1e-15);
    }

    #[test]
    fn quadratic_scaling_and_symmetry() {
        let scheme = TruncationScheme::new(2, 6).unwrap();
        let phi = HermiteCoeffs::from_values(scheme, (0..scheme.len()).map(|k| (k as f64).sin()).collect()).unwrap();
        let sigma = vec![0.4, -1.1, 0.7, 0.2];
        let base = ConstantOperatorPair::new(sigma.clone(), vec![0.0, 0.0], 0.3).unwrap();
        let twice = ConstantOperatorPair::new(sigma.iter().map(|v| 2.0 * v).collect(), vec![0.0, 0.0], 0.3).unwrap();
        let neg = ConstantOperatorPair::new(sigma.iter().map(|v| -v).collect(), vec![0.0, 0.0], 0.3).unwrap();
        assert_eq!(monotonicity_lhs(&twice, &phi), 4.0 * monotonicity_lhs(&base, &phi));
        assert_eq!(monotonicity_lhs(&neg, &phi), monotonicity_lhs(&base, &phi));
    }

    #[test]
    fn rayleigh_bounds_every_element() {
        let ops = ConstantOperatorPair::new(vec![1.0], vec![0.5], 0.0).unwrap();
        let scheme = TruncationScheme::new(1, 10).unwrap();
        let (lambda, v) = rayleigh_max(&ops, scheme);
        assert_abs_diff_eq!(monotonicity_ratio(&ops, &v), lambda, epsilon = 1e-12);
        for k in 0..=10 {
            assert!(monotonicity_ratio(&ops, &unit_1d(k, 10)) <= lambda + 1e-12);
        }
    }

    #[test]
    fn estimates() {
        let scheme = TruncationScheme::new(1, 16).unwrap();
        let zero = estimate_constant(0.0, 0.0, 1, 100, scheme, 1).unwrap();
        assert_eq!(zero.c_hat, 0.0);
        let ident = estimate_constant(2.0, 1.0, 1, 100, scheme, 1).unwrap();
        assert!(ident.c_hat <= 1e-8, "{}", ident.c_hat);
        let p0 = estimate_constant(1.0, 0.0, 1, 100, scheme, 1).unwrap();
        assert!(p0.c_hat > 0.0 && p0.random_phi_max <= p0.c_hat + 1e-12);
        let curve: Vec<f64> = p0.saturation_curve.iter().map(|c| c.1).collect();
        assert!(curve.windows(2).all(|w| w[1] >= w[0] - 1e-12));
        assert!(estimate_constant(1.0, 0.0, 1, 10, scheme, 1).is_err());
        let json = serde_json::to_value(&p0).unwrap();
        for key in ["alpha", "p", "d", "N", "C_hat", "argmax_phi_degree", "saturation_curve"] {
            assert!(json.get(key).is_some(), "{key}");
        }
    }

    #[test]
    fn frozen_regression_anchor() {
        // p = 0, d = 1, alpha = 1: saturated by N = 16 and stable through N = 128.
        let e = estimate_constant(1.0, 0.0, 1, 100, TruncationScheme::new(1, 32).unwrap(), 7).unwrap();
        assert!((e.c_hat - 4.999786942719).abs() < 1e-9, "{}", e.c_hat);
        assert_eq!(e.argmax_phi_degree, 1);
    }
}
