//! Checks the multi-factor surrogate numerically: the balanced factors built from
//! an SVD attain `(1/p) ||X||_{S_p}^p`, and any other factorization of the same
//! product can only be larger.
//!
//! Run with `cargo run --example surrogate_equality`.

use multischatten::prelude::*;
use multischatten::surrogate::{ratio_to_f64, scaled_schatten};
use nalgebra::DMatrix;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;

fn main() -> Result<()> {
    let mut rng = ChaCha8Rng::seed_from_u64(7);
    let mut gaussian = |r: usize, c: usize| DMatrix::from_fn(r, c, |_, _| rng.sample::<f64, _>(StandardNormal));
    let x = gaussian(30, 4) * gaussian(4, 25);

    for (p, mode) in [
        (Rational::new(1, 2), PartitionMode::AllConvex),
        (Rational::new(1, 4), PartitionMode::AllConvex),
        (Rational::new(2, 3), PartitionMode::AllSmooth),
        (Rational::new(1, 3), PartitionMode::AllSmooth),
    ] {
        let spec = make_partition(p, mode)?;
        let balanced = optimal_factors(&x, &spec, 4)?;
        let bound = check_surrogate_bound(&x, &balanced, &spec)?;

        // Same product, unbalanced: scale the first factor up and the second down.
        let mut skewed = balanced.clone();
        let first = skewed.factor(0) * 3.0;
        let second = skewed.factor(1) / 3.0;
        skewed.set_factor(0, first)?;
        skewed.set_factor(1, second)?;
        let worse = check_surrogate_bound(&x, &skewed, &spec)?;

        println!(
            "{spec}: (1/p)||X||^p = {:.6}, balanced {:.6} (gap {:.1e}), skewed {:.6}",
            scaled_schatten(&x, ratio_to_f64(p))?,
            bound.rhs,
            bound.relative_gap(),
            worse.rhs
        );
    }
    Ok(())
}
