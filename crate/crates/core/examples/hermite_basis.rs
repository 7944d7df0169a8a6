//! Hermite functions, the graded-lex truncation and a round trip through the transform.
//!
//! `cargo run --release --example hermite_basis`

use sprime::hermite::{hermite_functions, hermite_transform, HermiteCoeffs, QuadratureRule, TruncationScheme};

fn main() -> sprime::Result<()> {
    let scheme = TruncationScheme::new(2, 3)?;
    println!("d = 2, N = 3: {} basis functions", scheme.len());
    for (i, k) in scheme.indices().iter().enumerate() {
        println!("  {i:2}  k = {k}");
    }

    println!("\nh_0..h_4 at x = 0.5: {:?}", hermite_functions(4, 0.5));

    // Gram matrix on a rule with N + 8 nodes.
    let rule = QuadratureRule::for_degree(10);
    let mut worst = 0.0f64;
    for j in 0..=10 {
        for k in 0..=10 {
            let g: f64 = rule
                .nodes()
                .iter()
                .zip(rule.function_weights())
                .map(|(&x, w)| {
                    let h = hermite_functions(10, x);
                    w * h[j] * h[k]
                })
                .sum();
            worst = worst.max((g - if j == k { 1.0 } else { 0.0 }).abs());
        }
    }
    println!("max |Gram - I| for N = 10: {worst:.2e}");

    let one_d = TruncationScheme::new(1, 12)?;
    let c = HermiteCoeffs::from_values(one_d, (0..13).map(|k| 1.0 / (1.0 + k as f64)).collect())?;
    let back = hermite_transform(|x| c.reconstruct(x), one_d, &QuadratureRule::new(13)?)?.coeffs;
    let err = back.values().iter().zip(c.values()).map(|(a, b)| (a - b).abs()).fold(0.0, f64::max);
    println!("transform(reconstruct(c)) round trip error: {err:.2e}");
    Ok(())
}
