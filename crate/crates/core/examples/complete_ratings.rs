//! Completes a small triplet rating file end to end: load, split, solve on the
//! training part and report held-out RMSE along the way.
//!
//! Run with `cargo run --release --example complete_ratings`.

use multischatten::palm::Palm;
use multischatten::prelude::*;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

fn main() -> std::result::Result<(), Box<dyn std::error::Error>> {
    // 60 users x 40 items, ratings 1..5 from a rank-3 taste model, 40% observed.
    let mut rng = ChaCha8Rng::seed_from_u64(3);
    let users: Vec<[f64; 3]> = (0..60).map(|_| [rng.random(), rng.random(), rng.random()]).collect();
    let items: Vec<[f64; 3]> = (0..40).map(|_| [rng.random(), rng.random(), rng.random()]).collect();
    let mut text = String::from("# user item rating timestamp\n");
    for (u, a) in users.iter().enumerate() {
        for (i, b) in items.iter().enumerate() {
            if rng.random::<f64>() < 0.4 {
                let score: f64 = a.iter().zip(b).map(|(x, y)| x * y).sum();
                let rating = (1.0 + 4.0 * score / 3.0).round();
                text.push_str(&format!("{} {} {rating} 0\n", 1000 + u, 50 + 2 * i));
            }
        }
    }
    let path = std::env::temp_dir().join("multischatten-example-ratings.txt");
    std::fs::write(&path, text)?;

    let data = load_triplets(&path)?;
    let (train, test) = split_train_test(&data, 0.8, 11)?;
    println!("{}x{} ratings: {} train, {} test", data.rows(), data.cols(), train.len(), test.len());

    let spec = make_partition(Rational::new(1, 2), PartitionMode::AllConvex)?;
    let config = SolverConfig { lambda: 2.0, d: 5, seed: 1, max_iters: 1000, ..SolverConfig::default() };
    let (chain, trace) = Palm::new(&train, &spec, config)?.run_with(|record, chain| {
        if record.iteration % 50 == 0 {
            let err = rmse(chain, &test).unwrap_or(f64::NAN);
            println!("iter {:>4}  objective {:>10.4}  test rmse {err:.4}", record.iteration, record.objective);
        }
    })?;
    println!(
        "stopped after {} iterations (converged: {}), test rmse {:.4}",
        trace.iterations(),
        trace.converged,
        rmse(&chain, &test)?
    );
    std::fs::remove_file(&path)?;
    Ok(())
}
