use proptest::prelude::*;

use sprime::distribution::{
    apply_a, apply_l_parts, projection, translate_coeffs, CoefficientMatrix, SmoothKind, TemperedDistribution,
};
use sprime::evolution::EmpiricalKernel;
use sprime::hermite::{
    derivative_coeffs, hermite_eval, hermite_transform, multiply_by_coordinate, HermiteCoeffs, MultiIndex,
    QuadratureRule, TruncationScheme,
};
use sprime::monotonicity::{monotonicity_lhs, ConstantOperatorPair};
use sprime::sde::{loglog_slope, scalar_fields, simulate_path, BrownianPath};
use sprime::sobolev::{duality_pair, sobolev_norm, SobolevElement};

fn coeffs(d: usize, n: usize) -> impl Strategy<Value = HermiteCoeffs> {
    let scheme = TruncationScheme::new(d, n).unwrap();
    prop::collection::vec(-2.0f64..2.0, scheme.len()).prop_map(move |v| HermiteCoeffs::from_values(scheme, v).unwrap())
}

fn sized_coeffs() -> impl Strategy<Value = HermiteCoeffs> {
    (1usize..=2, 0usize..=10).prop_flat_map(|(d, n)| coeffs(d, n))
}

fn max_abs_diff(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| (x - y).abs()).fold(0.0, f64::max)
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(64))]

    #[test]
    fn parity(k in prop::collection::vec(0u32..30, 1..=3), x in prop::collection::vec(-8.0f64..8.0, 3)) {
        let k = MultiIndex::new(k);
        let x = &x[..k.dim()];
        let minus: Vec<f64> = x.iter().map(|v| -v).collect();
        let lhs = hermite_eval(&k, &minus);
        let rhs = k.parity_sign() * hermite_eval(&k, x);
        prop_assert!((lhs - rhs).abs() <= 1e-12, "{lhs} vs {rhs}");
    }

    #[test]
    fn transform_round_trip(c in sized_coeffs()) {
        let quad = QuadratureRule::new(c.max_degree() + 1).unwrap();
        let back = hermite_transform(|x| c.reconstruct(x), c.scheme(), &quad).unwrap().coeffs;
        prop_assert!(max_abs_diff(back.values(), c.values()) <= 1e-9);
    }

    #[test]
    fn parseval(c in sized_coeffs()) {
        let quad = QuadratureRule::new(c.max_degree() + 2).unwrap();
        let e = SobolevElement::new(c.clone(), 0.0);
        let pairing = duality_pair(&e, &e).unwrap().value;
        let integral = quad.integrate(c.dim(), |x| {
            let v = c.reconstruct(x);
            v * v
        });
        prop_assert!((pairing - integral).abs() <= 1e-8 * (1.0 + integral));
    }

    #[test]
    fn derivative_and_coordinate_commute_to_identity(c in sized_coeffs(), axis in 0usize..2) {
        let axis = axis % c.dim();
        let dx = derivative_coeffs(&multiply_by_coordinate(&c, axis), axis);
        let xd = multiply_by_coordinate(&derivative_coeffs(&c, axis), axis);
        let commutator = dx.add_scaled(-1.0, &xd);
        let expected = c.with_degree(c.max_degree() + 2);
        prop_assert!(max_abs_diff(commutator.values(), expected.values()) <= 1e-12 * (1.0 + c.max_degree() as f64));
    }

    #[test]
    fn scale_monotonicity(c in sized_coeffs(), q in 0.0f64..3.0, gap in 0.0f64..3.0) {
        let p = q + gap;
        prop_assert!(sobolev_norm(&c, q) <= sobolev_norm(&c, p) * (1.0 + 1e-12));
    }

    #[test]
    fn duality_bound((a, b) in (1usize..=2, 0usize..=10).prop_flat_map(|(d, n)| (coeffs(d, n), coeffs(d, n))), p in -3.0f64..3.0) {
        let pairing = duality_pair(&SobolevElement::new(a.clone(), -p), &SobolevElement::new(b.clone(), p)).unwrap();
        let bound = sobolev_norm(&a, -p) * sobolev_norm(&b, p);
        prop_assert!(pairing.value.abs() <= bound * (1.0 + 1e-12));
        prop_assert!((pairing.bound - bound).abs() <= 1e-12 * bound);
    }

    #[test]
    fn norm_homogeneity(c in sized_coeffs(), a in -5.0f64..5.0, p in -2.0f64..2.0) {
        let lhs = sobolev_norm(&c.scale(a), p);
        let rhs = a.abs() * sobolev_norm(&c, p);
        prop_assert!((lhs - rhs).abs() <= 1e-12 * (1.0 + rhs));
    }

    #[test]
    fn reflect_twice_is_identity(c in sized_coeffs(), x in prop::collection::vec(-5.0f64..5.0, 2), s in 0.1f64..3.0) {
        prop_assert_eq!(c.reflect().reflect(), c.clone());
        let d = c.dim();
        let dirac = TemperedDistribution::dirac(x[..d].to_vec());
        let TemperedDistribution::Dirac { location } = dirac.reflect().reflect() else { unreachable!() };
        prop_assert_eq!(&location[..], &x[..d]);
        let g = TemperedDistribution::gaussian(x[..d].to_vec(), s, 1.5).unwrap();
        let (TemperedDistribution::Gaussian(a), TemperedDistribution::Gaussian(b)) = (&g, &g.reflect().reflect()) else { unreachable!() };
        prop_assert_eq!(a.mean(), b.mean());
        prop_assert_eq!(a.cov(), b.cov());
        prop_assert_eq!(a.mass(), b.mass());
    }

    #[test]
    fn translation_round_trip(low in coeffs(1, 3), x in -1.0f64..1.0) {
        let mut padded = vec![0.0; 41];
        padded[..4].copy_from_slice(low.values());
        let c = HermiteCoeffs::from_values(TruncationScheme::new(1, 40).unwrap(), padded).unwrap();
        let back = translate_coeffs(&translate_coeffs(&c, &[x]), &[-x]);
        prop_assert!(max_abs_diff(back.values(), c.values()) <= 1e-9);
    }

    #[test]
    fn closed_form_translation_round_trip(mean in -5.0f64..5.0, x in -10.0f64..10.0) {
        let g = TemperedDistribution::gaussian(vec![mean], 0.7, 1.0).unwrap();
        let back = g.translate_exact(&[x]).unwrap().translate_exact(&[-x]).unwrap();
        let (TemperedDistribution::Gaussian(a), TemperedDistribution::Gaussian(b)) = (&g, &back) else { unreachable!() };
        prop_assert!((a.mean()[0] - b.mean()[0]).abs() <= 1e-14 * (1.0 + x.abs()));
        prop_assert_eq!(a.cov(), b.cov());
    }

    #[test]
    fn operator_homogeneity(c in coeffs(1, 8), lambda in -3.0f64..3.0) {
        let sigma = TemperedDistribution::gaussian(vec![0.3], 0.8, 1.0).unwrap();
        let b = TemperedDistribution::smooth(SmoothKind::Tanh { offset: 0.0, amplitude: 0.5, axis: 0, scale: 1.0 }, 1).unwrap();
        let ops = CoefficientMatrix::new(vec![sigma], vec![b]).unwrap();
        let phi = SobolevElement::new(c.clone(), 0.0);
        let scaled = SobolevElement::new(c.scale(lambda), 0.0);
        let tol = |v: &HermiteCoeffs| 1e-9 * (1.0 + v.values().iter().map(|x| x.abs()).fold(0.0, f64::max));

        let a1 = apply_a(&ops, &phi, 0).unwrap().coeffs;
        let a2 = apply_a(&ops, &scaled, 0).unwrap().coeffs;
        prop_assert!(max_abs_diff(a2.values(), a1.scale(lambda * lambda).values()) <= tol(&a2));

        let (diff1, drift1) = apply_l_parts(&ops, &phi).unwrap();
        let (diff2, drift2) = apply_l_parts(&ops, &scaled).unwrap();
        let l3 = lambda.powi(3);
        prop_assert!(max_abs_diff(diff2.coeffs.values(), diff1.coeffs.scale(l3).values()) <= tol(&diff2.coeffs));
        prop_assert!(max_abs_diff(drift2.coeffs.values(), drift1.coeffs.scale(lambda * lambda).values()) <= tol(&drift2.coeffs));
    }

    #[test]
    fn monotonicity_scaling_and_symmetry(c in coeffs(1, 10), s in -2.0f64..2.0, p in -1.0f64..2.0) {
        let base = ConstantOperatorPair::new(vec![s], vec![0.0], p).unwrap();
        let twice = ConstantOperatorPair::new(vec![2.0 * s], vec![0.0], p).unwrap();
        let neg = ConstantOperatorPair::new(vec![-s], vec![0.0], p).unwrap();
        prop_assert_eq!(monotonicity_lhs(&twice, &c), 4.0 * monotonicity_lhs(&base, &c));
        prop_assert_eq!(monotonicity_lhs(&neg, &c), monotonicity_lhs(&base, &c));
    }

    #[test]
    fn monotonicity_vanishes_at_p_one(c in coeffs(1, 12), s in -2.0f64..2.0, b in -2.0f64..2.0) {
        let ops = ConstantOperatorPair::new(vec![s], vec![b], 1.0).unwrap();
        let scale = sobolev_norm(&c, 0.0).powi(2) * (1.0 + s * s + b.abs());
        prop_assert!(monotonicity_lhs(&ops, &c).abs() <= 1e-10 * scale);
    }

    #[test]
    fn cemetery_absorbs(seed in 0u64..1000, strength in 1.0f64..4.0) {
        let fields = scalar_fields(|_| 1.0, move |x| strength * x * x);
        let brownian = BrownianPath::sample(seed, 0, 1, 2.0, 0.01).unwrap();
        let path = simulate_path(&fields, &[1.0], &brownian, &[1e1, 1e2, 1e3]).unwrap();
        if let Some(first) = (0..=path.steps()).find(|&k| !path.is_alive(k)) {
            prop_assert!((first..=path.steps()).all(|k| !path.is_alive(k)));
        }
        let hits: Vec<f64> = path.hitting_times.iter().map(|t| t.unwrap_or(f64::INFINITY)).collect();
        prop_assert!(hits.windows(2).all(|w| w[0] <= w[1]));
    }

    #[test]
    fn kernel_weights_sum_to_one(samples in prop::collection::vec(-3.0f64..3.0, 1..200)) {
        let k = EmpiricalKernel::from_samples(0.5, 1, samples.clone()).unwrap();
        prop_assert_eq!(k.weight_fraction(), (1, samples.len()));
        let total: f64 = (0..k.len()).map(|_| k.weight()).sum();
        prop_assert!((total - 1.0).abs() <= 1e-12);
    }
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(8))]

    #[test]
    fn translation_grows_polynomially(p in 0.0f64..2.0) {
        // unit-norm ground state as a Gaussian density
        let h0 = TemperedDistribution::gaussian(vec![0.0], 1.0, 2f64.sqrt() * std::f64::consts::PI.powf(0.25)).unwrap();
        let scheme = TruncationScheme::new(1, 400).unwrap();
        let zs: Vec<f64> = (0..=9).map(|i| 2.0 * 10f64.powf(i as f64 / 9.0)).collect();
        let norms: Vec<f64> = zs.iter().map(|&z| sobolev_norm(&projection(&h0, &[z], scheme).unwrap(), p)).collect();
        let slope = loglog_slope(&zs, &norms);
        prop_assert!(slope <= 2.0 * p + 1.0 + 0.2, "p = {p}, slope = {slope}");
    }
}
