//! Runs a small synthetic sweep through the experiment driver, which writes
//! `trials.csv`, `timings.csv` and `summary.json` and picks the best lambda per cell.
//!
//! Run with `cargo run --release --example lambda_sweep`.

use multischatten::experiment::{run_synthetic, ExperimentConfig};
use multischatten::Result;

fn main() -> Result<()> {
    let output = std::env::temp_dir().join("multischatten-lambda-sweep");
    let config = ExperimentConfig {
        p: vec!["1/2".into(), "1/4".into()],
        lambda: vec![0.5, 2.0, 8.0],
        m: 50,
        n: 40,
        rank: 3,
        d: 8,
        max_iters: 3000,
        sigma: vec![0.1],
        obs_fraction: vec![0.3],
        repeat: 3,
        output: output.clone(),
        ..ExperimentConfig::default()
    };
    let report = run_synthetic(&config, &mut std::io::stdout())?;
    for cell in &report.summary.cells {
        let rsre = cell.mean_rsre.map_or("-".to_string(), |r| format!("{r:.4}"));
        println!("{:>4} lambda {:>4}: mean rsre {rsre} ({}/{} converged)", cell.p, cell.lambda, cell.converged, cell.trials);
    }
    for best in &report.summary.best {
        println!("best for p={}: lambda {} with mean rsre {:.4}", best.p, best.lambda, best.mean_rsre);
    }
    println!("artifacts in {}", output.display());
    Ok(())
}
