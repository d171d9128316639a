use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};
use multischatten::experiment::{run_complete, run_synthetic, run_verify, ExperimentConfig};
use multischatten::palm::ShuffleMode;
use multischatten::Result;

/// Multi-factor Schatten-p completion experiments.
#[derive(Parser)]
#[command(name = "multischatten", version)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Sweep synthetic low-rank recovery over p, lambda, sigma and observed fraction.
    Synthetic(Overrides),
    /// Complete a triplet rating file and trace test RMSE.
    Complete(Overrides),
    /// Check the surrogate identities on random matrices.
    Verify {
        #[command(flatten)]
        overrides: Overrides,
        /// Multiply p on the left-hand side of every check (negative control).
        #[arg(long, hide = true)]
        inject_wrong_exponent: Option<f64>,
    },
}

/// Flags override the JSON config; list flags take comma-separated values.
#[derive(Args)]
struct Overrides {
    /// Flat JSON experiment config.
    #[arg(long)]
    config: Option<PathBuf>,
    #[arg(long, value_delimiter = ',')]
    p: Option<Vec<String>>,
    /// all_convex, all_smooth or explicit.
    #[arg(long)]
    mode: Option<String>,
    #[arg(long, value_delimiter = ',')]
    factor_exponents: Option<Vec<String>>,
    #[arg(long, value_delimiter = ',')]
    lambda: Option<Vec<f64>>,
    #[arg(long)]
    d: Option<usize>,
    #[arg(long)]
    epsilon: Option<f64>,
    #[arg(long)]
    stop_tol: Option<f64>,
    #[arg(long)]
    max_iters: Option<usize>,
    #[arg(long)]
    rho0: Option<f64>,
    #[arg(long)]
    growth: Option<f64>,
    /// off, one_per_cycle or two_per_cycle.
    #[arg(long)]
    shuffle_inner: Option<ShuffleMode>,
    #[arg(long)]
    use_extrapolation: Option<bool>,
    #[arg(long)]
    seed: Option<u64>,
    #[arg(long)]
    m: Option<usize>,
    #[arg(long)]
    n: Option<usize>,
    #[arg(long)]
    rank: Option<usize>,
    #[arg(long, value_delimiter = ',')]
    sigma: Option<Vec<f64>>,
    #[arg(long, value_delimiter = ',')]
    obs_fraction: Option<Vec<f64>>,
    #[arg(long)]
    repeat: Option<usize>,
    /// Triplet file (plain or gzip).
    #[arg(long)]
    input: Option<PathBuf>,
    #[arg(long)]
    train_fraction: Option<f64>,
    /// Output directory.
    #[arg(long)]
    output: Option<PathBuf>,
    #[arg(long)]
    verify_trials: Option<usize>,
    #[arg(long)]
    verify_refactorizations: Option<usize>,
}

macro_rules! apply {
    ($config:ident, $flags:ident, $($field:ident),*) => {
        $(if let Some(v) = $flags.$field { $config.$field = v; })*
    };
}

impl Overrides {
    fn resolve(self) -> Result<ExperimentConfig> {
        let mut config = match &self.config {
            Some(path) => ExperimentConfig::load(path)?,
            None => ExperimentConfig::default(),
        };
        let flags = self;
        apply!(
            config, flags, p, mode, factor_exponents, lambda, d, epsilon, stop_tol, max_iters, rho0, growth,
            shuffle_inner, use_extrapolation, seed, m, n, rank, sigma, obs_fraction, repeat, train_fraction,
            output, verify_trials, verify_refactorizations
        );
        if flags.input.is_some() {
            config.input = flags.input;
        }
        Ok(config)
    }
}

fn run(cli: Cli) -> Result<bool> {
    let mut stdout = std::io::stdout();
    match cli.command {
        Command::Synthetic(flags) => Ok(run_synthetic(&flags.resolve()?, &mut stdout)?.success()),
        Command::Complete(flags) => Ok(run_complete(&flags.resolve()?, &mut stdout)?.converged),
        Command::Verify {
            overrides,
            inject_wrong_exponent,
        } => {
            let config = overrides.resolve()?;
            Ok(run_verify(&config, inject_wrong_exponent.unwrap_or(1.0), &mut stdout)?.passed)
        }
    }
}

fn main() -> ExitCode {
    match run(Cli::parse()) {
        Ok(true) => ExitCode::SUCCESS,
        Ok(false) => ExitCode::FAILURE,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(2)
        }
    }
}
