//! Tabulates the scalar proximal map across the convex and nonconvex regimes,
//! and shows the jump of the nonconvex map at its threshold.
//!
//! Run with `cargo run --example scalar_prox`.

use multischatten::prox::{matrix_prox, nonconvex_threshold, scalar_objective};
use multischatten::prelude::*;

fn main() -> Result<()> {
    let lambda = 1.0;
    let exponents = [0.25, 0.5, 1.0, 1.5, 2.0, 3.0];
    print!("{:>6}", "y");
    for p in exponents {
        print!(" {:>9}", format!("p={p}"));
    }
    println!();
    for k in 0..=12 {
        let y = 0.25 * k as f64;
        print!("{y:>6.2}");
        for p in exponents {
            print!(" {:>9.5}", scalar_prox(y, lambda, p)?);
        }
        println!();
    }

    for p in [0.25, 0.5] {
        let tau = nonconvex_threshold(lambda, p);
        let below = scalar_prox(tau - 1e-9, lambda, p)?;
        let above = scalar_prox(tau + 1e-9, lambda, p)?;
        println!(
            "p={p}: threshold {tau:.6}, prox jumps {below} -> {above:.6}, objective there {:.6} vs {:.6}",
            scalar_objective(below, tau, lambda, p),
            scalar_objective(above, tau, lambda, p)
        );
    }

    // The matrix map shrinks singular values and keeps the singular vectors.
    let y = DenseMatrix::from_row_slice(3, 3, &[3.0, 0.0, 0.0, 0.0, 1.2, 0.0, 0.0, 0.0, 0.4]);
    let x = matrix_prox(&y, lambda, 0.5)?;
    println!("diag(3, 1.2, 0.4) -> diag({:.5}, {:.5}, {:.5})", x[(0, 0)], x[(1, 1)], x[(2, 2)]);
    Ok(())
}
