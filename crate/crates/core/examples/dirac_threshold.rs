//! Partial sums of `||delta_0||_{-q}^2` in one dimension on both sides of `q = 1/4`.
//!
//! `cargo run --release --example dirac_threshold`

use sprime::sobolev::{dirac_norm_partial_sums, dirac_threshold};

fn main() {
    for q in [0.2, 0.25, 0.3, 0.5] {
        let t = dirac_threshold(q, 0.05, 1e-3);
        let sums = dirac_norm_partial_sums(q, 10_000);
        println!(
            "q = {q:<4}  S_100 = {:<10.5} S_10000 = {:<10.5} term slope {:>7.4}  convergent {:<5} divergent {:<5} limit {:?}",
            sums[100], sums[10_000], t.term_slope, t.convergent, t.divergent, t.limit
        );
    }
}
