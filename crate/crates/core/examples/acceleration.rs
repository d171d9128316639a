//! Compares iteration counts of PALM with and without extrapolation on the
//! reference synthetic setting (100x100, rank 5, sigma 0.3, 20% observed, p = 1/4).
//!
//! Run with `cargo run --release --example acceleration`.

use multischatten::prelude::*;

fn main() -> Result<()> {
    let spec = make_partition(Rational::new(1, 4), PartitionMode::AllConvex)?;
    let lambda = 10.5;
    println!("{spec}, lambda {lambda}");
    println!("{:>4} {:>14} {:>14} {:>10} {:>10}", "seed", "iters (extrap)", "iters (plain)", "F extrap", "F plain");
    let mut faster = 0;
    for seed in 0..10 {
        let instance = generate_synthetic(100, 100, 5, 0.3, 0.2, 100 + seed)?;
        let mut runs = Vec::new();
        for use_extrapolation in [true, false] {
            let config = SolverConfig { lambda, d: 15, seed, use_extrapolation, ..SolverConfig::default() };
            let (_, trace) = solve(&instance.observed, &spec, &config)?;
            runs.push((trace.iterations(), trace.converged, trace.last().map_or(f64::NAN, |r| r.objective)));
        }
        let (on, off) = (runs[0], runs[1]);
        if on.1 && on.0 <= off.0 {
            faster += 1;
        }
        println!("{seed:>4} {:>11}{:>3} {:>11}{:>3} {:>10.3} {:>10.3}", on.0, if on.1 { "" } else { "*" }, off.0, if off.1 { "" } else { "*" }, on.2, off.2);
    }
    println!("extrapolation converged no later on {faster} of 10 seeds (* = hit max_iters)");
    Ok(())
}
