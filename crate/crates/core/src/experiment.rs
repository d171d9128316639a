//! Drivers behind the `synthetic`, `complete` and `verify` subcommands.
//!
//! An experiment is described by one flat JSON document ([`ExperimentConfig`]).
//! Every list-valued field is a sweep axis; a bare scalar is accepted wherever a
//! list is. All randomness derives from `seed`: each synthetic instance is keyed
//! by `(trial, sigma, obs_fraction)` and each solver start by `trial`, so every
//! `p` and `lambda` in a trial sees the same data and the same initial factors.
//!
//! Artifacts (all written to a temporary file and renamed into place):
//!
//! | subcommand  | files                                                        |
//! |-------------|--------------------------------------------------------------|
//! | `synthetic` | `trials.csv`, `timings.csv`, `summary.json`                  |
//! | `complete`  | `trace.csv`, `factors.txt`, `summary.json`                   |
//!
//! `trials.csv` carries no timing column so that a rerun with the same seed
//! reproduces it byte for byte; wall-clock times go to `timings.csv`.
//!
//! `factors.txt` layout:
//!
//! ```text
//! multischatten-factors v1
//! p 1/4
//! exponents 1 1 1 1
//! factor 0 943 15
//! <943 lines of 15 space-separated values>
//! factor 1 15 15
//! ...
//! ```
//!
//! Values use Rust's shortest round-trip exponent notation, so reading the dump
//! back reproduces the factors exactly.

use std::fmt::Write as _;
use std::fs;
use std::io::Write;
use std::path::{Path, PathBuf};
use std::time::Instant;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;
use rayon::prelude::*;
use serde::{Deserialize, Deserializer, Serialize};

use crate::completion::{rmse, rsre};
use crate::data::{generate_synthetic, load_triplets, split_train_test};
use crate::palm::{splitmix64, Continuation, Palm, ShuffleMode, SolverConfig};
use crate::spectra::{effective_singulars, DenseMatrix};
use crate::surrogate::{
    make_partition, optimal_factors, parse_rational, scaled_schatten, surrogate_value, FactorChain, PartitionMode,
    PartitionSpec,
};
use crate::{Error, Rational, Result};

/// Environment variable overriding the worker-pool size.
pub const THREADS_ENV: &str = "MULTISCHATTEN_THREADS";

/// Tolerance for every check run by `verify`.
pub const VERIFY_TOLERANCE: f64 = 1e-9;

pub const FACTOR_HEADER: &str = "multischatten-factors v1";

fn one_or_many<'de, D, T>(deserializer: D) -> std::result::Result<Vec<T>, D::Error>
where
    D: Deserializer<'de>,
    T: Deserialize<'de>,
{
    #[derive(Deserialize)]
    #[serde(untagged)]
    enum OneOrMany<T> {
        One(T),
        Many(Vec<T>),
    }
    Ok(match OneOrMany::deserialize(deserializer)? {
        OneOrMany::One(v) => vec![v],
        OneOrMany::Many(v) => v,
    })
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ExperimentConfig {
    /// Target exponents as rationals, e.g. `"1/4"`.
    #[serde(deserialize_with = "one_or_many")]
    pub p: Vec<String>,
    /// `all_convex`, `all_smooth` or `explicit`.
    pub mode: String,
    /// Factor exponents for `explicit` mode.
    pub factor_exponents: Vec<String>,
    #[serde(deserialize_with = "one_or_many")]
    pub lambda: Vec<f64>,
    pub d: usize,
    pub epsilon: f64,
    pub stop_tol: f64,
    pub max_iters: usize,
    pub rho0: f64,
    pub growth: f64,
    pub shuffle_inner: ShuffleMode,
    pub use_extrapolation: bool,
    pub seed: u64,

    pub m: usize,
    pub n: usize,
    pub rank: usize,
    #[serde(deserialize_with = "one_or_many")]
    pub sigma: Vec<f64>,
    #[serde(deserialize_with = "one_or_many")]
    pub obs_fraction: Vec<f64>,
    pub repeat: usize,

    /// Triplet file for `complete`.
    pub input: Option<PathBuf>,
    pub train_fraction: f64,

    pub output: PathBuf,

    pub verify_trials: usize,
    pub verify_refactorizations: usize,
}

impl Default for ExperimentConfig {
    fn default() -> Self {
        let solver = SolverConfig::default();
        ExperimentConfig {
            p: vec!["1/4".into()],
            mode: "all_convex".into(),
            factor_exponents: Vec::new(),
            lambda: vec![solver.lambda],
            d: 15,
            epsilon: solver.epsilon,
            stop_tol: solver.stop_tol,
            max_iters: solver.max_iters,
            rho0: solver.continuation.rho0,
            growth: solver.continuation.growth,
            shuffle_inner: solver.shuffle_inner,
            use_extrapolation: solver.use_extrapolation,
            seed: 0,
            m: 100,
            n: 100,
            rank: 5,
            sigma: vec![0.3],
            obs_fraction: vec![0.2],
            repeat: 1,
            input: None,
            train_fraction: 0.8,
            output: PathBuf::from("multischatten-out"),
            verify_trials: 200,
            verify_refactorizations: 100,
        }
    }
}

impl ExperimentConfig {
    pub fn from_json(text: &str) -> Result<Self> {
        Ok(serde_json::from_str(text)?)
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        Self::from_json(&text)
    }

    pub fn partition(&self, p: &str) -> Result<PartitionSpec> {
        let p = parse_rational(p)?;
        match self.mode.as_str() {
            "explicit" => {
                let exps = self.factor_exponents.iter().map(|e| parse_rational(e)).collect::<Result<Vec<_>>>()?;
                PartitionSpec::new(p, exps)
            }
            other => make_partition(p, other.parse::<PartitionMode>()?),
        }
    }

    pub fn partitions(&self) -> Result<Vec<PartitionSpec>> {
        self.p.iter().map(|p| self.partition(p)).collect()
    }

    pub fn solver(&self, lambda: f64, seed: u64) -> SolverConfig {
        SolverConfig {
            lambda,
            d: self.d,
            epsilon: self.epsilon,
            stop_tol: self.stop_tol,
            max_iters: self.max_iters,
            continuation: Continuation {
                rho0: self.rho0,
                growth: self.growth,
            },
            shuffle_inner: self.shuffle_inner,
            use_extrapolation: self.use_extrapolation,
            seed,
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.p.is_empty() || self.lambda.is_empty() || self.sigma.is_empty() || self.obs_fraction.is_empty() {
            return Err(Error::Config("p, lambda, sigma and obs_fraction need at least one value".into()));
        }
        self.partitions()?;
        for &lambda in &self.lambda {
            self.solver(lambda, 0).validate()?;
        }
        if self.repeat == 0 {
            return Err(Error::Config("repeat must be at least 1".into()));
        }
        Ok(())
    }
}

/// Deterministic seed for a sweep coordinate.
pub fn derive_seed(base: u64, tags: &[u64]) -> u64 {
    tags.iter().fold(splitmix64(base), |acc, &t| splitmix64(acc ^ splitmix64(t)))
}

fn thread_pool() -> Result<rayon::ThreadPool> {
    let mut builder = rayon::ThreadPoolBuilder::new();
    if let Ok(value) = std::env::var(THREADS_ENV) {
        let threads: usize = value
            .trim()
            .parse()
            .map_err(|_| Error::Config(format!("{THREADS_ENV}={value:?} is not a thread count")))?;
        builder = builder.num_threads(threads);
    }
    builder
        .build()
        .map_err(|e| Error::Config(format!("cannot start worker pool: {e}")))
}

/// Writes `contents` to `path` through a sibling temporary file and a rename.
pub fn write_atomic(path: &Path, contents: &[u8]) -> Result<()> {
    let mut tmp = path.as_os_str().to_owned();
    tmp.push(".tmp");
    let tmp = PathBuf::from(tmp);
    fs::write(&tmp, contents).map_err(|e| Error::io(&tmp, e))?;
    fs::rename(&tmp, path).map_err(|e| Error::io(path, e))
}

fn csv_bytes<T: Serialize>(rows: &[T]) -> Result<Vec<u8>> {
    let mut writer = csv::Writer::from_writer(Vec::new());
    for row in rows {
        writer.serialize(row)?;
    }
    writer
        .into_inner()
        .map_err(|e| Error::Config(format!("csv buffer: {e}")))
}

/// Reads a CSV written by this module back into rows.
pub fn read_csv<T: for<'de> Deserialize<'de>>(path: &Path) -> Result<Vec<T>> {
    let mut reader = csv::Reader::from_path(path)?;
    Ok(reader.deserialize().collect::<std::result::Result<Vec<T>, _>>()?)
}

fn ensure_dir(dir: &Path) -> Result<()> {
    fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct TrialRow {
    pub trial: usize,
    pub p: String,
    pub sigma: f64,
    pub obs_fraction: f64,
    pub lambda: f64,
    pub rsre: f64,
    pub iterations: usize,
    pub converged: bool,
    /// `ok`, `diverged` or an error message.
    pub status: String,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct TimingRow {
    pub trial: usize,
    pub p: String,
    pub sigma: f64,
    pub obs_fraction: f64,
    pub lambda: f64,
    pub wall_seconds: f64,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct CellSummary {
    pub p: String,
    pub sigma: f64,
    pub obs_fraction: f64,
    pub lambda: f64,
    /// Mean over trials that finished without error; `null` if none did.
    pub mean_rsre: Option<f64>,
    pub trials: usize,
    pub converged: usize,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct BestLambda {
    pub p: String,
    pub sigma: f64,
    pub obs_fraction: f64,
    pub lambda: f64,
    pub mean_rsre: f64,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SyntheticSummary {
    pub cells: Vec<CellSummary>,
    pub best: Vec<BestLambda>,
    pub trials: usize,
    pub failures: usize,
    pub unconverged: usize,
}

#[derive(Clone, Debug)]
pub struct SyntheticReport {
    pub rows: Vec<TrialRow>,
    pub timings: Vec<TimingRow>,
    pub summary: SyntheticSummary,
}

impl SyntheticReport {
    /// Every run finished without error and reached the stopping tolerance.
    pub fn success(&self) -> bool {
        self.summary.failures == 0 && self.summary.unconverged == 0
    }
}

struct Job {
    trial: usize,
    sigma_idx: usize,
    obs_idx: usize,
    p_idx: usize,
    lambda: f64,
}

/// Runs the full sweep `repeat x sigma x obs_fraction x p x lambda` and writes its artifacts.
pub fn run_synthetic(config: &ExperimentConfig, log: &mut dyn Write) -> Result<SyntheticReport> {
    config.validate()?;
    let specs = config.partitions()?;
    if config.rank > config.m.min(config.n) {
        return Err(Error::Config(format!("rank {} exceeds min(m, n)", config.rank)));
    }
    let mut jobs = Vec::new();
    for trial in 0..config.repeat {
        for sigma_idx in 0..config.sigma.len() {
            for obs_idx in 0..config.obs_fraction.len() {
                for p_idx in 0..specs.len() {
                    for &lambda in &config.lambda {
                        jobs.push(Job { trial, sigma_idx, obs_idx, p_idx, lambda });
                    }
                }
            }
        }
    }
    let _ = writeln!(log, "synthetic: {} runs on {}x{} rank {}", jobs.len(), config.m, config.n, config.rank);

    let pool = thread_pool()?;
    let results: Vec<(TrialRow, TimingRow)> = pool.install(|| {
        jobs.par_iter()
            .map(|job| run_trial(config, &specs, job))
            .collect::<Result<Vec<_>>>()
    })?;
    let (rows, timings): (Vec<_>, Vec<_>) = results.into_iter().unzip();

    let summary = summarize(config, &specs, &rows);
    ensure_dir(&config.output)?;
    write_atomic(&config.output.join("trials.csv"), &csv_bytes(&rows)?)?;
    write_atomic(&config.output.join("timings.csv"), &csv_bytes(&timings)?)?;
    write_atomic(
        &config.output.join("summary.json"),
        serde_json::to_string_pretty(&summary)?.as_bytes(),
    )?;
    for best in &summary.best {
        let _ = writeln!(
            log,
            "p={} sigma={} obs={}: best lambda {} mean rsre {:.4}",
            best.p, best.sigma, best.obs_fraction, best.lambda, best.mean_rsre
        );
    }
    if summary.failures > 0 || summary.unconverged > 0 {
        let _ = writeln!(log, "{} failed, {} unconverged", summary.failures, summary.unconverged);
    }
    Ok(SyntheticReport { rows, timings, summary })
}

fn run_trial(config: &ExperimentConfig, specs: &[PartitionSpec], job: &Job) -> Result<(TrialRow, TimingRow)> {
    let sigma = config.sigma[job.sigma_idx];
    let obs_fraction = config.obs_fraction[job.obs_idx];
    let spec = &specs[job.p_idx];
    let instance_seed = derive_seed(config.seed, &[0, job.trial as u64, job.sigma_idx as u64, job.obs_idx as u64]);
    let start_seed = derive_seed(config.seed, &[1, job.trial as u64]);
    let instance = generate_synthetic(config.m, config.n, config.rank, sigma, obs_fraction, instance_seed)?;

    let started = Instant::now();
    let outcome = Palm::new(&instance.observed, spec, config.solver(job.lambda, start_seed)).and_then(Palm::run);
    let wall_seconds = started.elapsed().as_secs_f64();

    let (rsre_value, iterations, converged, status) = match outcome {
        Ok((chain, trace)) => (rsre(&chain.product(), &instance.truth)?, trace.iterations(), trace.converged, "ok".to_string()),
        Err(Error::Divergence { iteration, .. }) => (f64::NAN, iteration, false, "diverged".to_string()),
        Err(e @ (Error::Config(_) | Error::Domain(_) | Error::Infeasible { .. })) => return Err(e),
        Err(other) => (f64::NAN, 0, false, other.to_string()),
    };
    let p = spec.p().to_string();
    Ok((
        TrialRow {
            trial: job.trial,
            p: p.clone(),
            sigma,
            obs_fraction,
            lambda: job.lambda,
            rsre: rsre_value,
            iterations,
            converged,
            status,
        },
        TimingRow {
            trial: job.trial,
            p,
            sigma,
            obs_fraction,
            lambda: job.lambda,
            wall_seconds,
        },
    ))
}

fn summarize(config: &ExperimentConfig, specs: &[PartitionSpec], rows: &[TrialRow]) -> SyntheticSummary {
    let mut cells = Vec::new();
    let mut best = Vec::new();
    for &sigma in &config.sigma {
        for &obs_fraction in &config.obs_fraction {
            for spec in specs {
                let p = spec.p().to_string();
                let mut best_cell: Option<BestLambda> = None;
                for &lambda in &config.lambda {
                    let matching: Vec<&TrialRow> = rows
                        .iter()
                        .filter(|r| r.p == p && r.sigma == sigma && r.obs_fraction == obs_fraction && r.lambda == lambda)
                        .collect();
                    let finished: Vec<f64> = matching.iter().filter(|r| r.status == "ok").map(|r| r.rsre).collect();
                    let mean_rsre = (!finished.is_empty()).then(|| finished.iter().sum::<f64>() / finished.len() as f64);
                    if let Some(mean) = mean_rsre {
                        if best_cell.as_ref().is_none_or(|b| mean < b.mean_rsre) {
                            best_cell = Some(BestLambda { p: p.clone(), sigma, obs_fraction, lambda, mean_rsre: mean });
                        }
                    }
                    cells.push(CellSummary {
                        p: p.clone(),
                        sigma,
                        obs_fraction,
                        lambda,
                        mean_rsre,
                        trials: matching.len(),
                        converged: matching.iter().filter(|r| r.converged).count(),
                    });
                }
                best.extend(best_cell);
            }
        }
    }
    SyntheticSummary {
        cells,
        best,
        trials: rows.len(),
        failures: rows.iter().filter(|r| r.status != "ok").count(),
        unconverged: rows.iter().filter(|r| r.status == "ok" && !r.converged).count(),
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct TraceRow {
    pub iteration: usize,
    pub objective: f64,
    pub test_rmse: f64,
    pub elapsed_seconds: f64,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct CompleteSummary {
    pub input: PathBuf,
    pub rows: usize,
    pub cols: usize,
    pub train: usize,
    pub test: usize,
    pub partition: String,
    pub lambda: f64,
    pub d: usize,
    pub iterations: usize,
    pub converged: bool,
    pub final_objective: f64,
    pub test_rmse: f64,
}

/// Completes a triplet file: split 80/20 (by default), solve on the training part,
/// record test RMSE per iteration and dump the factors.
pub fn run_complete(config: &ExperimentConfig, log: &mut dyn Write) -> Result<CompleteSummary> {
    config.validate()?;
    let input = config
        .input
        .clone()
        .ok_or_else(|| Error::Config("complete needs an input triplet file".into()))?;
    if config.p.len() != 1 || config.lambda.len() != 1 {
        return Err(Error::Config("complete takes exactly one p and one lambda".into()));
    }
    let spec = config.partition(&config.p[0])?;
    let lambda = config.lambda[0];

    let data = load_triplets(&input)?;
    if config.d > data.rows().min(data.cols()) {
        return Err(Error::Config(format!(
            "d = {} exceeds the smaller dimension of the {}x{} matrix",
            config.d,
            data.rows(),
            data.cols()
        )));
    }
    let (train, test) = split_train_test(&data, config.train_fraction, derive_seed(config.seed, &[2]))?;
    let _ = writeln!(
        log,
        "complete: {}x{} with {} train / {} test, {spec}, lambda {lambda}, d {}",
        data.rows(),
        data.cols(),
        train.len(),
        test.len(),
        config.d
    );

    let mut trace_rows = Vec::new();
    let mut rmse_error = None;
    let solver = Palm::new(&train, &spec, config.solver(lambda, derive_seed(config.seed, &[1, 0])))?;
    let (chain, trace) = solver.run_with(|record, chain| {
        let test_rmse = rmse(chain, &test).unwrap_or_else(|e| {
            rmse_error.get_or_insert(e);
            f64::NAN
        });
        trace_rows.push(TraceRow {
            iteration: record.iteration,
            objective: record.objective,
            test_rmse,
            elapsed_seconds: record.elapsed_secs,
        });
    })?;
    if let Some(e) = rmse_error {
        return Err(e);
    }

    ensure_dir(&config.output)?;
    write_atomic(&config.output.join("trace.csv"), &csv_bytes(&trace_rows)?)?;
    write_atomic(&config.output.join("factors.txt"), factors_to_string(&chain, &spec).as_bytes())?;
    let last = trace_rows.last().expect("trace has the starting point");
    let summary = CompleteSummary {
        input,
        rows: data.rows(),
        cols: data.cols(),
        train: train.len(),
        test: test.len(),
        partition: spec.to_string(),
        lambda,
        d: config.d,
        iterations: trace.iterations(),
        converged: trace.converged,
        final_objective: last.objective,
        test_rmse: last.test_rmse,
    };
    write_atomic(
        &config.output.join("summary.json"),
        serde_json::to_string_pretty(&summary)?.as_bytes(),
    )?;
    let _ = writeln!(
        log,
        "{} iterations, converged {}, objective {:.6}, test rmse {:.6}",
        summary.iterations, summary.converged, summary.final_objective, summary.test_rmse
    );
    Ok(summary)
}

pub fn factors_to_string(chain: &FactorChain, spec: &PartitionSpec) -> String {
    let mut out = String::new();
    let _ = writeln!(out, "{FACTOR_HEADER}");
    let _ = writeln!(out, "p {}", spec.p());
    let exps: Vec<String> = spec.exponents().iter().map(|e| e.to_string()).collect();
    let _ = writeln!(out, "exponents {}", exps.join(" "));
    for (i, f) in chain.factors().iter().enumerate() {
        let _ = writeln!(out, "factor {i} {} {}", f.nrows(), f.ncols());
        for r in 0..f.nrows() {
            let row: Vec<String> = (0..f.ncols()).map(|c| format!("{:e}", f[(r, c)])).collect();
            let _ = writeln!(out, "{}", row.join(" "));
        }
    }
    out
}

/// Parses a factor dump back into its partition and chain.
pub fn read_factors(path: &Path) -> Result<(PartitionSpec, FactorChain)> {
    let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    let err = |line: usize, message: &str| Error::Parse {
        path: path.to_path_buf(),
        line,
        message: message.to_string(),
    };
    let mut lines = text.lines().enumerate().map(|(i, l)| (i + 1, l));
    let mut next = |what: &str| lines.next().ok_or_else(|| err(0, &format!("missing {what}")));

    let (n, header) = next("header")?;
    if header != FACTOR_HEADER {
        return Err(err(n, "not a factor dump"));
    }
    let (n, p_line) = next("p line")?;
    let p = p_line.strip_prefix("p ").ok_or_else(|| err(n, "expected `p <rational>`"))?;
    let p = parse_rational(p).map_err(|_| err(n, "bad exponent"))?;
    let (n, e_line) = next("exponents line")?;
    let exps = e_line
        .strip_prefix("exponents ")
        .ok_or_else(|| err(n, "expected `exponents ...`"))?
        .split_whitespace()
        .map(parse_rational)
        .collect::<Result<Vec<Rational>>>()
        .map_err(|_| err(n, "bad exponent"))?;
    let spec = PartitionSpec::new(p, exps)?;

    let mut factors = Vec::with_capacity(spec.factor_count());
    for i in 0..spec.factor_count() {
        let (n, head) = next("factor header")?;
        let dims: Vec<usize> = head
            .strip_prefix(&format!("factor {i} "))
            .ok_or_else(|| err(n, "expected `factor <i> <rows> <cols>`"))?
            .split_whitespace()
            .map(|t| t.parse().map_err(|_| err(n, "bad dimension")))
            .collect::<Result<_>>()?;
        if dims.len() != 2 {
            return Err(err(n, "expected two dimensions"));
        }
        let mut values = Vec::with_capacity(dims[0] * dims[1]);
        for _ in 0..dims[0] {
            let (n, row) = next("factor row")?;
            let before = values.len();
            for t in row.split_whitespace() {
                values.push(t.parse::<f64>().map_err(|_| err(n, "bad value"))?);
            }
            if values.len() - before != dims[1] {
                return Err(err(n, "wrong number of values"));
            }
        }
        factors.push(DenseMatrix::from_row_slice(dims[0], dims[1], &values));
    }
    Ok((spec, FactorChain::new(factors)?))
}

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct VerifyReport {
    pub partitions: Vec<String>,
    pub matrices: usize,
    /// Largest `|rhs - lhs| / lhs` at the optimal factors.
    pub equality_gap: f64,
    /// Largest `lhs - rhs` over random refactorizations (positive means the bound failed).
    pub inequality_undercut: f64,
    /// Largest relative gap of the bi-Frobenius, Frobenius/nuclear and bi-nuclear identities.
    pub special_case_gap: f64,
    /// Largest violation of `sum s_i^p(A B^T) <= sum s_i^p(A) s_i^p(B)`.
    pub singular_product_violation: f64,
    pub passed: bool,
}

fn random_low_rank(rng: &mut ChaCha8Rng, max_rows: usize, max_cols: usize, max_d: usize) -> (DenseMatrix, usize) {
    let m = rng.random_range(2..=max_rows);
    let n = rng.random_range(2..=max_cols);
    let r = rng.random_range(1..=m.min(n).min(max_d));
    let d = rng.random_range(r..=max_d);
    let mut normal = |rows, cols| DenseMatrix::from_fn(rows, cols, |_, _| rng.sample::<f64, _>(StandardNormal));
    (normal(m, r) * normal(r, n), d)
}

/// Orthogonal factor of the QR decomposition of a Gaussian matrix.
fn random_orthogonal(n: usize, rng: &mut ChaCha8Rng) -> DenseMatrix {
    let g = DenseMatrix::from_fn(n, n, |_, _| rng.sample::<f64, _>(StandardNormal));
    g.qr().q()
}

/// Inserts `T T^{-1}` between every pair of adjacent factors with `T = Q1 diag(s) Q2`,
/// `s` in `[e^{-1}, e]`.
pub fn random_refactorization(chain: &FactorChain, rng: &mut ChaCha8Rng) -> Result<FactorChain> {
    let mut factors = chain.factors().to_vec();
    for j in 0..factors.len().saturating_sub(1) {
        let d = factors[j].ncols();
        let q1 = random_orthogonal(d, rng);
        let q2 = random_orthogonal(d, rng);
        let s: Vec<f64> = (0..d).map(|_| rng.random_range(-1.0..1.0f64).exp()).collect();
        let t = &q1 * DenseMatrix::from_diagonal(&s.clone().into()) * &q2;
        let t_inv = q2.transpose() * DenseMatrix::from_diagonal(&s.iter().map(|v| 1.0 / v).collect::<Vec<_>>().into()) * q1.transpose();
        factors[j] = &factors[j] * t;
        factors[j + 1] = t_inv * &factors[j + 1];
    }
    FactorChain::new(factors)
}

fn verify_partitions() -> Vec<PartitionSpec> {
    let mut specs = Vec::new();
    for (n, d) in [(1, 5), (1, 4), (1, 3), (2, 5), (1, 2), (2, 3), (3, 4), (1, 1), (3, 2), (2, 1)] {
        for mode in [PartitionMode::AllConvex, PartitionMode::AllSmooth] {
            let spec = make_partition(Rational::new(n, d), mode).expect("grid exponents are valid");
            if !specs.contains(&spec) {
                specs.push(spec);
            }
        }
    }
    specs
}

/// `(p, exponents)` of the bi-Frobenius, Frobenius/nuclear and bi-nuclear identities.
fn special_cases() -> Vec<PartitionSpec> {
    let q = Rational::new;
    vec![
        PartitionSpec::new(q(1, 1), vec![q(2, 1), q(2, 1)]),
        PartitionSpec::new(q(2, 3), vec![q(1, 1), q(2, 1)]),
        PartitionSpec::new(q(1, 2), vec![q(1, 1), q(1, 1)]),
    ]
    .into_iter()
    .collect::<Result<_>>()
    .expect("special cases are valid")
}

/// Checks the surrogate identities on random matrices.
///
/// `exponent_scale` multiplies `p` on the left-hand side; anything but 1 is a
/// deliberate fault used to confirm that the checks can fail.
pub fn run_verify(config: &ExperimentConfig, exponent_scale: f64, log: &mut dyn Write) -> Result<VerifyReport> {
    let mut partitions = Vec::new();
    for p in &config.p {
        let spec = config.partition(p)?;
        let _ = writeln!(log, "partition {spec}");
        partitions.push(spec.to_string());
    }

    let grid = verify_partitions();
    let mut rng = ChaCha8Rng::seed_from_u64(derive_seed(config.seed, &[3]));
    let mut equality_gap = 0.0_f64;
    let mut inequality_undercut = f64::NEG_INFINITY;
    for k in 0..config.verify_trials {
        let spec = &grid[k % grid.len()];
        let (x, d) = random_low_rank(&mut rng, 30, 20, 12);
        let chain = optimal_factors(&x, spec, d)?;
        let lhs = scaled_schatten(&x, spec.p_f64() * exponent_scale)?;
        let rhs = surrogate_value(&chain, spec, 1.0)?;
        equality_gap = equality_gap.max((rhs - lhs).abs() / lhs.max(f64::MIN_POSITIVE));
        if chain.len() > 1 {
            for _ in 0..config.verify_refactorizations {
                let other = random_refactorization(&chain, &mut rng)?;
                let rhs = surrogate_value(&other, spec, 1.0)?;
                inequality_undercut = inequality_undercut.max(lhs - rhs);
            }
        }
    }
    let _ = writeln!(
        log,
        "surrogate equality: {} matrices over {} partitions, max relative gap {equality_gap:.3e}",
        config.verify_trials,
        grid.len()
    );
    let _ = writeln!(
        log,
        "surrogate inequality: {} refactorizations each, max lhs - rhs {inequality_undercut:.3e}",
        config.verify_refactorizations
    );

    let mut special_case_gap = 0.0_f64;
    for spec in special_cases() {
        for _ in 0..50 {
            let (x, d) = random_low_rank(&mut rng, 30, 20, 12);
            let chain = optimal_factors(&x, &spec, d)?;
            let lhs = scaled_schatten(&x, spec.p_f64() * exponent_scale)?;
            let rhs = surrogate_value(&chain, &spec, 1.0)?;
            special_case_gap = special_case_gap.max((rhs - lhs).abs() / lhs.max(f64::MIN_POSITIVE));
        }
    }
    let _ = writeln!(log, "special cases (p=1, 2/3, 1/2): max relative gap {special_case_gap:.3e}");

    let mut singular_product_violation = f64::NEG_INFINITY;
    for _ in 0..100 {
        let (m, n, l) = (rng.random_range(1..=12), rng.random_range(1..=12), rng.random_range(1..=12));
        let a = DenseMatrix::from_fn(m, l, |_, _| rng.sample::<f64, _>(StandardNormal));
        let b = DenseMatrix::from_fn(n, l, |_, _| rng.sample::<f64, _>(StandardNormal));
        let (sa, sb, sab) = (effective_singulars(&a)?, effective_singulars(&b)?, effective_singulars(&(&a * b.transpose()))?);
        for p in [1.0 / 3.0, 0.5, 1.0, 2.0] {
            let p = p * exponent_scale;
            let lhs: f64 = sab.iter().map(|s| s.powf(p)).sum();
            let rhs: f64 = sa.iter().zip(sb.iter()).map(|(x, y)| x.powf(p) * y.powf(p)).sum();
            singular_product_violation = singular_product_violation.max((lhs - rhs) / rhs.max(1.0));
        }
    }
    let _ = writeln!(log, "singular value product inequality: max violation {singular_product_violation:.3e}");

    let passed = equality_gap <= VERIFY_TOLERANCE
        && inequality_undercut <= VERIFY_TOLERANCE
        && special_case_gap <= VERIFY_TOLERANCE
        && singular_product_violation <= VERIFY_TOLERANCE;
    let _ = writeln!(log, "{}", if passed { "all checks passed" } else { "VERIFICATION FAILED" });
    Ok(VerifyReport {
        partitions,
        matrices: config.verify_trials,
        equality_gap,
        inequality_undercut,
        special_case_gap,
        singular_product_violation,
        passed,
    })
}
