//! The Hermite-Sobolev scale `S_p`.
//!
//! For real `p` the norm of a truncated element is
//! `||f||_p^2 = sum_k (2|k| + d)^{2p} <f, h_k>^2`. Coefficients are always
//! stored as plain L^2 coefficients and the weight is applied when a norm or
//! inner product is taken, so the same vector can be measured at any index.

use std::f64::consts::PI;

use rand_distr::{Distribution, StandardNormal};
use rayon::prelude::*;
use serde::Serialize;

use crate::error::{Error, Result};
use crate::hermite::{derivative_coeffs, hermite_functions, HermiteCoeffs, TruncationScheme};
use crate::rng::{derive_seed, stream_rng, tags};

/// The base of the norm weight, `2|k| + d`.
pub fn weight_base(degree: usize, dim: usize) -> f64 {
    (2 * degree + dim) as f64
}

/// `(2|k| + d)^{2p}`.
pub fn norm_weight(degree: usize, dim: usize, p: f64) -> f64 {
    weight_base(degree, dim).powf(2.0 * p)
}

/// `||c||_p`.
pub fn sobolev_norm(c: &HermiteCoeffs, p: f64) -> f64 {
    sobolev_norm_with(c, p, weight_base)
}

/// `||c||_p` with a caller-supplied weight base in place of `2|k| + d`.
pub fn sobolev_norm_with<W>(c: &HermiteCoeffs, p: f64, base: W) -> f64
where
    W: Fn(usize, usize) -> f64,
{
    let d = c.dim();
    c.scheme()
        .indices()
        .iter()
        .zip(c.values())
        .map(|(k, v)| base(k.degree(), d).powf(2.0 * p) * v * v)
        .sum::<f64>()
        .sqrt()
}

/// `<a, b>_p` over the common prefix of the two truncations.
pub fn sobolev_inner(a: &HermiteCoeffs, b: &HermiteCoeffs, p: f64) -> f64 {
    assert_eq!(a.dim(), b.dim(), "dimension mismatch");
    let d = a.dim();
    let scheme = if a.max_degree() <= b.max_degree() { a.scheme() } else { b.scheme() };
    scheme
        .indices()
        .iter()
        .zip(a.values().iter().zip(b.values()))
        .map(|(k, (x, y))| norm_weight(k.degree(), d, p) * x * y)
        .sum()
}

/// An element of `S_p` given by a truncated coefficient vector.
#[derive(Clone, Debug, PartialEq)]
pub struct SobolevElement {
    pub coeffs: HermiteCoeffs,
    pub index: f64,
}

impl SobolevElement {
    pub fn new(coeffs: HermiteCoeffs, index: f64) -> Self {
        SobolevElement { coeffs, index }
    }

    pub fn norm(&self) -> f64 {
        sobolev_norm(&self.coeffs, self.index)
    }
}

/// Result of pairing an element of `S_{-p}` with one of `S_p`.
#[derive(Clone, Copy, Debug, Serialize)]
pub struct Pairing {
    pub value: f64,
    /// `||psi||_{-p} ||phi||_p`.
    pub bound: f64,
    /// Contribution of the upper half of the degree shells to the bound; a proxy for what the
    /// truncation drops.
    pub tail: f64,
    /// Set when the tail dominates the bound and the truncated value should not be trusted.
    pub unreliable: bool,
}

/// `<psi, phi>` as the coefficient dot product, with a Cauchy-Schwarz bound and tail estimate.
pub fn duality_pair(psi: &SobolevElement, phi: &SobolevElement) -> Result<Pairing> {
    if psi.coeffs.dim() != phi.coeffs.dim() {
        return Err(Error::DimensionMismatch { expected: phi.coeffs.dim(), got: psi.coeffs.dim() });
    }
    let p = phi.index;
    let value = psi.coeffs.dot(&phi.coeffs);
    let psi_norm = sobolev_norm(&psi.coeffs, -p);
    let phi_norm = sobolev_norm(&phi.coeffs, p);
    let top = psi.coeffs.max_degree().min(phi.coeffs.max_degree());
    let psi_top = high_shell_norm(&psi.coeffs, top / 2, -p);
    let phi_top = high_shell_norm(&phi.coeffs, top / 2, p);
    let tail = psi_top * phi_norm + psi_norm * phi_top;
    let bound = psi_norm * phi_norm;
    Ok(Pairing { value, bound, tail, unreliable: bound > 0.0 && tail > 0.5 * bound })
}

fn high_shell_norm(c: &HermiteCoeffs, above: usize, p: f64) -> f64 {
    let d = c.dim();
    c.scheme()
        .indices()
        .iter()
        .zip(c.values())
        .filter(|(k, _)| k.degree() > above)
        .map(|(k, v)| norm_weight(k.degree(), d, p) * v * v)
        .sum::<f64>()
        .sqrt()
}

/// Coefficients `h_k(x)` of the Dirac mass at `x`.
pub fn dirac_coeffs(x: &[f64], scheme: TruncationScheme) -> Result<HermiteCoeffs> {
    if x.len() != scheme.dim() {
        return Err(Error::DimensionMismatch { expected: scheme.dim(), got: x.len() });
    }
    if x.iter().any(|v| !v.is_finite()) {
        return Err(Error::InvalidInput("Dirac location must be finite".into()));
    }
    let n = scheme.max_degree();
    let tables: Vec<Vec<f64>> = x.iter().map(|&xi| hermite_functions(n, xi)).collect();
    let values = scheme
        .indices()
        .iter()
        .map(|k| k.entries().iter().enumerate().map(|(a, &ka)| tables[a][ka as usize]).product())
        .collect();
    HermiteCoeffs::from_values(scheme, values)
}

/// Ratio statistics of `||d_i phi||_{p-1/2} / ||phi||_p`.
#[derive(Clone, Debug, Serialize)]
pub struct BoundednessProbe {
    pub p: f64,
    pub axis: usize,
    pub samples: usize,
    /// Largest ratio over basis vectors and random samples.
    pub max_ratio: f64,
    /// Degree of the dominant coefficient of the maximizing element.
    pub argmax_degree: usize,
    /// Largest ratio over basis vectors alone.
    pub basis_max_ratio: f64,
    pub basis_argmax_degree: usize,
}

fn derivative_ratio(phi: &HermiteCoeffs, axis: usize, p: f64) -> f64 {
    sobolev_norm(&derivative_coeffs(phi, axis), p - 0.5) / sobolev_norm(phi, p)
}

/// Probe boundedness of `d_axis : S_p -> S_{p-1/2}` on a truncation.
///
/// Every basis vector is tried, then `samples` random elements with i.i.d.
/// standard normal coefficients scaled to unit `||.||_p`.
pub fn derivative_boundedness_probe(
    p: f64,
    samples: usize,
    scheme: TruncationScheme,
    axis: usize,
    seed: u64,
) -> Result<BoundednessProbe> {
    if samples == 0 {
        return Err(Error::InvalidInput("probe needs at least one sample".into()));
    }
    if axis >= scheme.dim() {
        return Err(Error::InvalidInput(format!("axis {axis} out of range")));
    }
    let indices = scheme.indices();
    let (basis_max_ratio, basis_argmax_degree) = indices
        .iter()
        .map(|k| {
            let e = HermiteCoeffs::unit(scheme, k).expect("index from scheme");
            (derivative_ratio(&e, axis, p), k.degree())
        })
        .fold((0.0, 0), |acc, x| if x.0 > acc.0 { x } else { acc });

    let lineage = derive_seed(seed, &[tags::PROBE]);
    let d = scheme.dim();
    let random: Vec<(f64, usize)> = (0..samples as u64)
        .into_par_iter()
        .map(|s| {
            let mut rng = stream_rng(lineage, s);
            let raw: Vec<f64> = indices.iter().map(|_| StandardNormal.sample(&mut rng)).collect();
            let mut phi = HermiteCoeffs::from_values(scheme, raw).expect("sized from scheme");
            let n = sobolev_norm(&phi, p);
            phi = phi.scale(1.0 / n);
            let dominant = indices
                .iter()
                .zip(phi.values())
                .map(|(k, v)| (norm_weight(k.degree(), d, p) * v * v, k.degree()))
                .fold((0.0, 0), |acc, x| if x.0 > acc.0 { x } else { acc })
                .1;
            (derivative_ratio(&phi, axis, p), dominant)
        })
        .collect();
    let (max_ratio, argmax_degree) =
        random.into_iter().fold((basis_max_ratio, basis_argmax_degree), |acc, x| if x.0 > acc.0 { x } else { acc });
    Ok(BoundednessProbe { p, axis, samples, max_ratio, argmax_degree, basis_max_ratio, basis_argmax_degree })
}

/// `Gamma(m + 1/2) / Gamma(m + 1)`: recurrence for integers below 500, asymptotic series otherwise.
pub(crate) fn half_gamma_ratio(m: f64) -> f64 {
    if m < 500.0 {
        debug_assert_eq!(m.fract(), 0.0, "recurrence needs an integer argument");
        let mut r = PI.sqrt();
        let mut j = 0.0;
        while j < m {
            r *= (j + 0.5) / (j + 1.0);
            j += 1.0;
        }
        r
    } else {
        let x = 1.0 / m;
        m.powf(-0.5) * (1.0 - x / 8.0 + x * x / 128.0 + 5.0 * x.powi(3) / 1024.0 - 21.0 * x.powi(4) / 32768.0)
    }
}

/// The term `(2n+d)^{-2q} h_n(0)^2` of `||delta_0||_{-q}^2` in one dimension, for `n = 2m`.
///
/// Odd terms vanish; even ones use `h_{2m}(0)^2 = Gamma(m+1/2) / (pi Gamma(m+1))`.
pub fn dirac_even_term(m: f64, q: f64) -> f64 {
    (4.0 * m + 1.0).powf(-2.0 * q) * half_gamma_ratio(m) / PI
}

/// Partial sums `S_N = sum_{n <= N} (2n+1)^{-2q} h_n(0)^2` for `N = 0..=n_max`, computed from
/// the Dirac coefficients of the truncation.
pub fn dirac_norm_partial_sums(q: f64, n_max: usize) -> Vec<f64> {
    let scheme = TruncationScheme::new(1, n_max).expect("d = 1");
    let c = dirac_coeffs(&[0.0], scheme).expect("finite point");
    let mut acc = 0.0;
    c.values()
        .iter()
        .enumerate()
        .map(|(n, v)| {
            acc += norm_weight(n, 1, -q) * v * v;
            acc
        })
        .collect()
}

/// `sum_{m >= m0} dirac_even_term(m, q)` for `m0 >= 1000`, `q > 1/4`.
///
/// Euler-Maclaurin with the integral done in the log variable, plus an analytic
/// power-law remainder far out.
pub fn dirac_norm_even_tail(m0: f64, q: f64) -> Result<f64> {
    if q <= 0.25 {
        return Err(Error::InvalidInput(format!("tail diverges for q = {q} <= d/4")));
    }
    if m0 < 1000.0 {
        return Err(Error::InvalidInput("tail start must be at least 1000".into()));
    }
    let f = |m: f64| dirac_even_term(m, q);
    // sum_{m >= m0} f(m) = int_{m0 - 1/2}^inf f + f'(m0 - 1/2)/24 + ...
    let a = (m0 - 0.5).ln();
    let span = 80.0;
    let panels = 8000;
    let h = span / panels as f64;
    let g = |u: f64| {
        let m = u.exp();
        f(m) * m
    };
    let mut simpson = g(a) + g(a + span);
    for i in 1..panels {
        let u = a + i as f64 * h;
        simpson += if i % 2 == 1 { 4.0 * g(u) } else { 2.0 * g(u) };
    }
    let mut integral = simpson * h / 3.0;
    let m1 = (a + span).exp();
    let s = 2.0 * q - 0.5;
    integral += 4f64.powf(-2.0 * q) * m1.powf(-s) / (PI * s);
    let mid = m0 - 0.5;
    let dh = 1e-3 * mid;
    let fprime = (f(mid + dh) - f(mid - dh)) / (2.0 * dh);
    Ok(integral + fprime / 24.0)
}

/// Outcome of the `delta_0 in S_{-q}` analysis in one dimension.
#[derive(Clone, Debug, Serialize)]
pub struct DiracThreshold {
    pub q: f64,
    /// Fitted log-log slope of the nonzero terms against `n`.
    pub term_slope: f64,
    /// `term_slope < -1 - margin`.
    pub convergent: bool,
    /// `term_slope > -1 + margin`.
    pub divergent: bool,
    /// Fitted log-log slope of the partial sums over the same window.
    pub partial_sum_slope: f64,
    /// Smallest `N = 10^j` whose remaining tail is below the requested tolerance (convergent case).
    pub cauchy_n: Option<f64>,
    pub cauchy_tail: Option<f64>,
    /// `||delta_0||^2_{-q}` (convergent case).
    pub limit: Option<f64>,
}

fn fit_slope(xs: &[f64], ys: &[f64]) -> f64 {
    let n = xs.len() as f64;
    let mx = xs.iter().sum::<f64>() / n;
    let my = ys.iter().sum::<f64>() / n;
    let sxy: f64 = xs.iter().zip(ys).map(|(x, y)| (x - mx) * (y - my)).sum();
    let sxx: f64 = xs.iter().map(|x| (x - mx) * (x - mx)).sum();
    sxy / sxx
}

/// Classify `sum_n (2n+1)^{-2q} h_n(0)^2` as convergent or divergent and, when it converges,
/// find the truncation `N = 10^j` beyond which the remaining tail is below `tail_tol`.
pub fn dirac_threshold(q: f64, margin: f64, tail_tol: f64) -> DiracThreshold {
    // brute-force partial sum up to n = 2 * (M0 - 1) from the coefficient recurrence
    const M0: usize = 1000;
    let head = dirac_norm_partial_sums(q, 2 * (M0 - 1));
    let head_sum = *head.last().expect("non-empty");

    let window: Vec<f64> = (0..=40).map(|i| 1e3 * 10f64.powf(i as f64 * 0.05)).collect();
    let xs: Vec<f64> = window.iter().map(|m| (2.0 * m).ln()).collect();
    let ys: Vec<f64> = window.iter().map(|&m| dirac_even_term(m, q).ln()).collect();
    let term_slope = fit_slope(&xs, &ys);

    // partial sums over the same window: head plus sum of even terms in between
    let mut sums = Vec::with_capacity(window.len());
    let mut acc = head_sum;
    let mut m = M0 as f64;
    for &target in &window {
        while m <= target {
            acc += dirac_even_term(m, q);
            m += 1.0;
        }
        sums.push(acc.ln());
    }
    let partial_sum_slope = fit_slope(&xs, &sums);

    let convergent = term_slope < -1.0 - margin;
    let divergent = term_slope > -1.0 + margin;
    let (mut cauchy_n, mut cauchy_tail, mut limit) = (None, None, None);
    if convergent && q > 0.25 {
        let total_tail = dirac_norm_even_tail(M0 as f64, q).expect("q > 1/4");
        limit = Some(head_sum + total_tail);
        for j in 4..=80 {
            let n = 10f64.powi(j);
            let tail = dirac_norm_even_tail((n / 2.0).floor() + 1.0, q).expect("q > 1/4");
            if tail < tail_tol {
                cauchy_n = Some(n);
                cauchy_tail = Some(tail);
                break;
            }
        }
    }
    DiracThreshold { q, term_slope, convergent, divergent, partial_sum_slope, cauchy_n, cauchy_tail, limit }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::hermite::{hermite_eval, hermite_transform, MultiIndex, QuadratureRule};
    use approx::assert_abs_diff_eq;

    fn scheme(d: usize, n: usize) -> TruncationScheme {
        TruncationScheme::new(d, n).unwrap()
    }

    #[test]
    fn norm_of_basis_vector() {
        let e2 = HermiteCoeffs::unit(scheme(1, 4), &MultiIndex::new(vec![2])).unwrap();
        assert_abs_diff_eq!(sobolev_norm(&e2, 0.5), 5f64.sqrt(), epsilon = 1e-15);
        assert_abs_diff_eq!(5f64.sqrt(), 2.236_068_0, epsilon = 1e-7);
        assert_eq!(sobolev_norm(&HermiteCoeffs::zeros(scheme(2, 5)), -1.3), 0.0);
    }

    #[test]
    fn dirac_coefficients() {
        let c = dirac_coeffs(&[0.0], scheme(1, 6)).unwrap();
        assert_eq!(c.values()[1], 0.0);
        assert_abs_diff_eq!(c.values()[0], PI.powf(-0.25), epsilon = 1e-15);
        assert!(dirac_coeffs(&[f64::NAN], scheme(1, 3)).is_err());
        assert!(dirac_coeffs(&[0.0, 1.0], scheme(1, 3)).is_err());
    }

    #[test]
    fn dirac_pairs_to_point_value() {
        let s = scheme(1, 12);
        let quad = QuadratureRule::for_degree(12);
        let h4 = MultiIndex::new(vec![4]);
        let f = hermite_transform(|x| hermite_eval(&h4, x), s, &quad).unwrap().coeffs;
        let delta = dirac_coeffs(&[1.5], s).unwrap();
        let pair = duality_pair(&SobolevElement::new(delta, -1.0), &SobolevElement::new(f, 1.0)).unwrap();
        assert_abs_diff_eq!(pair.value, hermite_eval(&h4, &[1.5]), epsilon = 1e-8);
        assert!(pair.value.abs() <= pair.bound + 1e-12);
    }

    #[test]
    fn gaussian_self_pairing_is_its_l2_norm() {
        let s = scheme(1, 30);
        let quad = QuadratureRule::for_degree(30);
        let g = hermite_transform(|x| (-0.5 * x[0] * x[0]).exp(), s, &quad).unwrap().coeffs;
        let e = SobolevElement::new(g, 0.0);
        let pair = duality_pair(&e, &e).unwrap();
        // oracle: int exp(-x^2) dx
        assert_abs_diff_eq!(pair.value, PI.sqrt(), epsilon = 1e-12);
        assert_abs_diff_eq!(PI.sqrt(), 1.772_453_9, epsilon = 1e-7);
        assert!(!pair.unreliable);
    }

    #[test]
    fn truncated_dirac_pairing_is_flagged() {
        let s = scheme(1, 10);
        let delta = SobolevElement::new(dirac_coeffs(&[0.3], s).unwrap(), -0.1);
        let ones = SobolevElement::new(HermiteCoeffs::from_values(s, vec![1.0; 11]).unwrap(), 0.1);
        assert!(duality_pair(&delta, &ones).unwrap().unreliable);
    }

    #[test]
    fn probe_ground_state_ratio() {
        let e0 = HermiteCoeffs::unit(scheme(1, 0), &MultiIndex::zero(1)).unwrap();
        assert_abs_diff_eq!(derivative_ratio(&e0, 0, 1.0), 1.5f64.sqrt(), epsilon = 1e-14);
        assert_abs_diff_eq!(1.5f64.sqrt(), 1.224_744_9, epsilon = 1e-7);
    }

    #[test]
    fn probe_basis_maximum_matches_formula() {
        // oracle: ||d e_n||_{-1/2}^2 = (n/2)(2n-1)^{-1} + ((n+1)/2)(2n+3)^{-1}, ||e_n||_0 = 1
        let oracle = (0..=40)
            .map(|n| {
                let nf = n as f64;
                let down = if n == 0 { 0.0 } else { nf / 2.0 / (2.0 * nf - 1.0) };
                (down + (nf + 1.0) / 2.0 / (2.0 * nf + 3.0)).sqrt()
            })
            .fold(0.0, f64::max);
        let probe = derivative_boundedness_probe(0.0, 200, scheme(1, 40), 0, 11).unwrap();
        assert_abs_diff_eq!(probe.basis_max_ratio, oracle, epsilon = 1e-14);
        assert_abs_diff_eq!(oracle, 0.7f64.sqrt(), epsilon = 1e-14);
        assert_eq!(probe.basis_argmax_degree, 1);
        assert!(probe.max_ratio >= probe.basis_max_ratio);
        // bounded: no sample exceeds sqrt(3/2) times the basis maximum
        assert!(probe.max_ratio < 1.05);
        assert!(derivative_boundedness_probe(0.0, 0, scheme(1, 4), 0, 1).is_err());
    }

    #[test]
    fn gamma_ratio_series_matches_recurrence() {
        let mut r = PI.sqrt();
        for j in 0..1500 {
            if j >= 499 {
                let rel = (half_gamma_ratio(j as f64 + 1.0) - r * (j as f64 + 0.5) / (j as f64 + 1.0)).abs() / r;
                assert!(rel < 1e-13, "m={} rel={rel}", j + 1);
            }
            r *= (j as f64 + 0.5) / (j as f64 + 1.0);
        }
    }

    #[test]
    fn even_terms_match_coefficients() {
        let sums = dirac_norm_partial_sums(0.3, 40);
        let c = dirac_coeffs(&[0.0], scheme(1, 40)).unwrap();
        for m in 0..=20 {
            let direct = norm_weight(2 * m, 1, -0.3) * c.values()[2 * m].powi(2);
            assert_abs_diff_eq!(dirac_even_term(m as f64, 0.3), direct, epsilon = 1e-15);
        }
        assert!(sums.windows(2).all(|w| w[1] >= w[0]));
    }

    #[test]
    fn tail_matches_brute_force_difference() {
        // sum_{m = 1000}^{199999} by brute force against tail(1000) - tail(200000)
        let q = 0.4;
        let brute: f64 = (1000..200_000).map(|m| dirac_even_term(m as f64, q)).sum();
        let est = dirac_norm_even_tail(1000.0, q).unwrap() - dirac_norm_even_tail(200_000.0, q).unwrap();
        assert!((brute - est).abs() < 1e-10 * brute, "{brute} vs {est}");
        assert!(dirac_norm_even_tail(1000.0, 0.25).is_err());
    }

    #[test]
    fn dirac_threshold_classification() {
        let conv = dirac_threshold(0.3, 0.05, 1e-3);
        assert!(conv.convergent && !conv.divergent);
        assert!(conv.cauchy_tail.unwrap() < 1e-3);
        let div = dirac_threshold(0.2, 0.05, 1e-3);
        assert!(div.divergent && !div.convergent);
        assert!(div.cauchy_n.is_none());
        let a = dirac_norm_partial_sums(0.3, 500);
        let b = dirac_norm_partial_sums(0.2, 500);
        assert!(a.last().unwrap() < b.last().unwrap());
    }
}
