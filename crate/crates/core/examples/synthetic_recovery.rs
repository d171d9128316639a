//! Recovers a noisy 100x100 rank-5 matrix from 20% of its entries with the
//! four-factor nuclear-norm surrogate of the S_{1/4} quasi-norm, sweeping lambda.
//!
//! Run with `cargo run --release --example synthetic_recovery`.

use multischatten::prelude::*;

fn main() -> Result<()> {
    let instance = generate_synthetic(100, 100, 5, 0.3, 0.2, 2024)?;
    let spec = make_partition(Rational::new(1, 4), PartitionMode::AllConvex)?;
    println!("partition {spec}");
    println!(
        "{:>8} {:>8} {:>10} {:>10} {:>9} {:>9} {:>7}",
        "lambda", "iters", "objective", "rsre", "converged", "residual", "time"
    );
    for lambda in [0.0, 1.0, 5.75, 10.5, 15.25, 20.0] {
        let config = SolverConfig { lambda, d: 15, seed: 1, ..SolverConfig::default() };
        let (chain, trace) = solve(&instance.observed, &spec, &config)?;
        let last = trace.last().expect("trace is never empty");
        println!(
            "{lambda:>8.2} {:>8} {:>10.4} {:>10.4} {:>9} {:>9.2e} {:>6.2}s",
            trace.iterations(),
            last.objective,
            rsre(&chain.product(), &instance.truth)?,
            trace.converged,
            last.stop_statistic,
            last.elapsed_secs
        );
    }
    Ok(())
}
