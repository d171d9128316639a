//! Acceptance gate: one PASS/FAIL line per criterion, nonzero exit on any failure.
//!
//! Run with `cargo test --release --test acceptance`.

mod common;

use std::path::Path;
use std::process::{Command, ExitCode};
use std::time::{Duration, Instant};

use common::*;
use multischatten::prelude::*;
use multischatten::surrogate::scaled_schatten;
use rand::Rng;
use rayon::prelude::*;

type Outcome = std::result::Result<String, String>;

fn check(ok: bool, detail: String) -> Outcome {
    if ok {
        Ok(detail)
    } else {
        Err(detail)
    }
}

fn q(n: i64, d: i64) -> Rational {
    Rational::new(n, d)
}

fn within(elapsed: Duration, limit_secs: u64) -> bool {
    elapsed.as_secs_f64() < limit_secs as f64
}

/// Partitions from both construction modes plus the three classical special cases.
fn partitions() -> Vec<PartitionSpec> {
    let mut specs: Vec<PartitionSpec> = Vec::new();
    for (n, d) in [(1, 5), (1, 4), (1, 3), (2, 5), (1, 2), (2, 3), (3, 4), (1, 1), (3, 2), (2, 1)] {
        for mode in [PartitionMode::AllConvex, PartitionMode::AllSmooth] {
            let spec = make_partition(q(n, d), mode).unwrap();
            if !specs.contains(&spec) {
                specs.push(spec);
            }
        }
    }
    specs.push(PartitionSpec::new(q(1, 1), vec![q(2, 1), q(2, 1)]).unwrap());
    specs.push(PartitionSpec::new(q(2, 3), vec![q(1, 1), q(2, 1)]).unwrap());
    specs.push(PartitionSpec::new(q(1, 2), vec![q(1, 1), q(1, 1)]).unwrap());
    specs
}

fn surrogate_equality() -> Outcome {
    let started = Instant::now();
    let specs = partitions();
    let mut rng = rng(101);
    let (mut worst_eq, mut worst_undercut) = (0.0_f64, f64::NEG_INFINITY);
    for k in 0..200 {
        let spec = &specs[k % specs.len()];
        let m = rng.random_range(1..=30);
        let n = rng.random_range(1..=20);
        let r = rng.random_range(1..=m.min(n).min(12));
        let d = rng.random_range(r..=12);
        let x = gaussian(m, r, &mut rng) * gaussian(r, n, &mut rng);
        let p = spec.p_f64();
        let exps = spec.exponents_f64();
        let lhs = schatten_pow(&x, p, r) / p;
        let value = |chain: &FactorChain| -> f64 {
            chain.factors().iter().zip(&exps).map(|(f, &pi)| schatten_pow(f, pi, r) / pi).sum()
        };
        let chain = optimal_factors(&x, spec, d).map_err(|e| format!("{spec}: {e}"))?;
        if (chain.product() - &x).norm() > 1e-9 * x.norm() {
            return Err(format!("optimal factors of {spec} do not reproduce X"));
        }
        worst_eq = worst_eq.max((value(&chain) - lhs).abs() / lhs);
        for _ in 0..100 {
            let other = refactor(&chain, &mut rng);
            worst_undercut = worst_undercut.max(lhs - value(&other));
        }
    }
    let elapsed = started.elapsed();
    check(
        worst_eq <= 1e-9 && worst_undercut <= 1e-9 && within(elapsed, 60),
        format!(
            "200 matrices, {} partitions: max rel. equality gap {worst_eq:.2e}, max undercut {worst_undercut:.2e}, {:.1}s",
            specs.len(),
            elapsed.as_secs_f64()
        ),
    )
}

fn scalar_prox_oracle() -> Outcome {
    let started = Instant::now();
    let cases: Vec<(f64, f64, f64)> = [1.0 / 3.0, 0.5, 2.0 / 3.0, 1.0, 1.5, 2.0]
        .iter()
        .flat_map(|&p| [0.1, 1.0, 5.0].map(move |l| (l, p)))
        .flat_map(|(l, p)| (0..200).map(move |k| (10.0 * k as f64 / 199.0, l, p)))
        .collect();
    let results: Vec<(f64, f64)> = cases
        .par_iter()
        .map(|&(y, lambda, p)| {
            let got = scalar_prox(y, lambda, p).unwrap();
            let want = prox_oracle(y, lambda, p);
            let dx = (got - want).abs();
            let df = prox_objective(got, y, lambda, p) - prox_objective(want, y, lambda, p);
            (dx, df)
        })
        .collect();
    let worst_x = results.iter().map(|r| r.0).fold(0.0, f64::max);
    let worst_f = results.iter().map(|r| r.1).fold(f64::NEG_INFINITY, f64::max);
    let elapsed = started.elapsed();
    check(
        worst_x <= 1e-6 && worst_f <= 1e-10 && within(elapsed, 30),
        format!(
            "{} points: max |x - oracle| {worst_x:.2e}, max objective excess {worst_f:.2e}, {:.1}s",
            cases.len(),
            elapsed.as_secs_f64()
        ),
    )
}

fn gradient_correctness() -> Outcome {
    let mut rng = rng(303);
    let mut worst = 0.0_f64;
    for k in 0..50 {
        let count = 2 + k % 3;
        let (m, n, d) = (rng.random_range(2..=9), rng.random_range(2..=9), rng.random_range(1..=4));
        let data = random_data(m, n, 0.6, &mut rng);
        let chain = random_chain(m, n, d, count, &mut rng);
        let cache = PrefixSuffixCache::new(&chain);
        for i in 0..count {
            let at = chain.factor(i);
            let grad = block_gradient(&cache, &data, i, at).map_err(|e| e.to_string())?;
            let mut fd = DenseMatrix::zeros(at.nrows(), at.ncols());
            for r in 0..at.nrows() {
                for c in 0..at.ncols() {
                    let h = 1e-5 * at[(r, c)].abs().max(1.0);
                    let eval = |delta: f64| {
                        let mut factors = chain.factors().to_vec();
                        factors[i][(r, c)] += delta;
                        dense_loss(&factors, &data)
                    };
                    fd[(r, c)] = (eval(h) - eval(-h)) / (2.0 * h);
                }
            }
            let err = (&grad - &fd).norm() / fd.norm().max(1e-12);
            worst = worst.max(err);
        }
    }
    check(worst <= 1e-5, format!("50 instances, I in {{2,3,4}}: max relative error {worst:.2e}"))
}

fn descent_inequality() -> Outcome {
    let mut rng = rng(404);
    let mut worst = f64::INFINITY;
    for k in 0..100 {
        let count = 2 + k % 3;
        let (m, n, d) = (rng.random_range(2..=10), rng.random_range(2..=10), rng.random_range(1..=5));
        let data = random_data(m, n, 0.5, &mut rng);
        let chain = random_chain(m, n, d, count, &mut rng);
        let i = rng.random_range(0..count);
        let cache = PrefixSuffixCache::new(&chain);
        let x = chain.factor(i);
        let step = 10f64.powf(rng.random_range(-3.0..1.0));
        let y = x + gaussian(x.nrows(), x.ncols(), &mut rng) * step;
        let l = block_lipschitz(&cache, i, 1e-6).map_err(|e| e.to_string())?;
        let g = block_gradient(&cache, &data, i, x).map_err(|e| e.to_string())?;
        let mut at_y = chain.factors().to_vec();
        at_y[i] = y.clone();
        let delta = &y - x;
        let bound = dense_loss(chain.factors(), &data) + g.dot(&delta) + 0.5 * l * delta.norm_squared();
        worst = worst.min(bound - dense_loss(&at_y, &data));
    }
    check(worst >= -1e-9, format!("100 (chain, block, step) triples: min slack {worst:.3e}"))
}

const LAMBDAS: [f64; 5] = [1.0, 5.75, 10.5, 15.25, 20.0];

struct ReferenceRun {
    seed: u64,
    seconds: f64,
    lambda: f64,
    extrapolation: bool,
    rsre: f64,
    iterations: usize,
    converged: bool,
    monotone_excess: f64,
    finite: bool,
    certificate: f64,
}

/// The reference synthetic setting: 100x100, rank 5, sigma 0.3, 20% observed, d = 15, p = 1/4, p_i = 1.
fn reference_runs() -> Vec<ReferenceRun> {
    let spec = make_partition(q(1, 4), PartitionMode::AllConvex).unwrap();
    let mut jobs: Vec<(u64, f64, bool)> = Vec::new();
    for seed in 0..10 {
        for &lambda in LAMBDAS.iter().chain([0.0].iter()) {
            jobs.push((seed, lambda, true));
        }
        jobs.push((seed, 10.5, false));
    }
    jobs.par_iter()
        .map(|&(seed, lambda, extrapolation)| {
            let run_started = Instant::now();
            let instance = generate_synthetic(100, 100, 5, 0.3, 0.2, 1000 + seed).unwrap();
            let config = SolverConfig { lambda, d: 15, seed, use_extrapolation: extrapolation, ..SolverConfig::default() };
            let (chain, trace) = solve(&instance.observed, &spec, &config).unwrap();
            let f = trace.objectives();
            let monotone_excess = f.windows(2).map(|w| (w[1] - w[0]) / f[0]).fold(f64::NEG_INFINITY, f64::max);
            let finite = trace
                .records
                .iter()
                .all(|r| r.objective.is_finite() && r.stop_statistic.is_finite() && r.max_abs_entry.is_finite());
            let cert = certificate(&chain, &instance.observed, &spec, lambda, config.epsilon);
            ReferenceRun {
                seed,
                seconds: run_started.elapsed().as_secs_f64(),
                lambda,
                extrapolation,
                rsre: rsre(&chain.product(), &instance.truth).unwrap(),
                iterations: trace.iterations(),
                converged: trace.converged,
                monotone_excess,
                finite,
                certificate: cert.into_iter().fold(0.0, f64::max),
            }
        })
        .collect()
}

fn solver_properties(runs: &[ReferenceRun]) -> Outcome {
    let graded: Vec<&ReferenceRun> = runs.iter().filter(|r| r.extrapolation && r.lambda > 0.0).collect();
    // serial wall time of the graded runs
    let seconds: f64 = graded.iter().map(|r| r.seconds).sum();
    let stop_tol = SolverConfig::default().stop_tol;
    let monotone = graded.iter().map(|r| r.monotone_excess).fold(f64::NEG_INFINITY, f64::max);
    let finite = graded.iter().all(|r| r.finite);
    let cert = graded.iter().map(|r| r.certificate).fold(0.0, f64::max);
    let converged = graded.iter().filter(|r| r.converged).count();
    check(
        monotone <= 1e-12 && finite && cert <= 10.0 * stop_tol && seconds < 300.0,
        format!(
            "{} runs (10 seeds x 5 lambdas): max relative increase {monotone:.1e}, all finite {finite}, max certificate {cert:.2e}, {converged} reached stop_tol, {seconds:.1}s",
            graded.len()
        ),
    )
}

fn recovery_quality(runs: &[ReferenceRun]) -> Outcome {
    // (i) noiseless, 60% observed, d = r = 5, lambda = 1
    let spec = make_partition(q(1, 4), PartitionMode::AllConvex).unwrap();
    let instance = generate_synthetic(100, 100, 5, 0.0, 0.6, 77).unwrap();
    let config = SolverConfig { lambda: 1.0, d: 5, seed: 7, ..SolverConfig::default() };
    let (chain, _) = solve(&instance.observed, &spec, &config).map_err(|e| e.to_string())?;
    let noiseless = rsre(&chain.product(), &instance.truth).unwrap();

    // (ii) best lambda against the unregularized baseline, mean over seeds
    let mean = |lambda: f64| {
        let v: Vec<f64> = runs.iter().filter(|r| r.extrapolation && r.lambda == lambda).map(|r| r.rsre).collect();
        v.iter().sum::<f64>() / v.len() as f64
    };
    let (best_lambda, best) = LAMBDAS.iter().map(|&l| (l, mean(l))).min_by(|a, b| a.1.total_cmp(&b.1)).unwrap();
    let baseline = mean(0.0);

    // (iii) iterations to the stopping tolerance with and without extrapolation
    let mut faster = 0;
    for seed in 0..10 {
        let find = |extrapolation| runs.iter().find(|r| r.seed == seed && r.lambda == 10.5 && r.extrapolation == extrapolation).unwrap();
        let (on, off) = (find(true), find(false));
        if on.converged && (on.iterations <= off.iterations || !off.converged) {
            faster += 1;
        }
    }
    check(
        noiseless <= 1e-2 && best < baseline && faster >= 7,
        format!(
            "(i) noiseless RSRE {noiseless:.2e}; (ii) best lambda {best_lambda} mean RSRE {best:.4} vs lambda=0 {baseline:.4}; (iii) extrapolation no slower on {faster}/10 seeds"
        ),
    )
}

fn special_cases() -> Outcome {
    let mut rng = rng(707);
    let bifrobenius = PartitionSpec::new(q(1, 1), vec![q(2, 1), q(2, 1)]).unwrap();
    let frob_nuclear = PartitionSpec::new(q(2, 3), vec![q(1, 1), q(2, 1)]).unwrap();
    let binuclear = PartitionSpec::new(q(1, 2), vec![q(1, 1), q(1, 1)]).unwrap();
    let (mut worst1, mut worst2) = (0.0_f64, 0.0_f64);
    for _ in 0..50 {
        let (m, n) = (rng.random_range(2..=30), rng.random_range(2..=20));
        let r = rng.random_range(1..=m.min(n).min(10));
        let d = rng.random_range(r..=12);
        let x = gaussian(m, r, &mut rng) * gaussian(r, n, &mut rng);

        let nuclear = schatten_pow(&x, 1.0, r);
        let chain = optimal_factors(&x, &bifrobenius, d).map_err(|e| e.to_string())?;
        let value = surrogate_value(&chain, &bifrobenius, 1.0).map_err(|e| e.to_string())?;
        let direct = 0.5 * chain.factor(0).norm_squared() + 0.5 * chain.factor(1).norm_squared();
        worst1 = worst1.max((value - nuclear).abs() / nuclear).max((direct - nuclear).abs() / nuclear);

        // 3/2 ||X||_{2/3}^{2/3} = ||U||_* + 0.5 ||V||_F^2 at the optimum
        let chain = optimal_factors(&x, &frob_nuclear, d).map_err(|e| e.to_string())?;
        let lhs = 1.5 * schatten_pow(&x, 2.0 / 3.0, r);
        let rhs = schatten_pow(chain.factor(0), 1.0, r) + 0.5 * chain.factor(1).norm_squared();
        worst2 = worst2.max((lhs - rhs).abs() / lhs);
        worst2 = worst2.max((scaled_schatten(&x, 2.0 / 3.0).unwrap() - lhs).abs() / lhs);

        // 2 ||X||_{1/2}^{1/2} = ||U||_* + ||V||_* at the optimum
        let chain = optimal_factors(&x, &binuclear, d).map_err(|e| e.to_string())?;
        let lhs = 2.0 * schatten_pow(&x, 0.5, r);
        let rhs = schatten_pow(chain.factor(0), 1.0, r) + schatten_pow(chain.factor(1), 1.0, r);
        worst2 = worst2.max((lhs - rhs).abs() / lhs);
    }
    check(
        worst1 <= 1e-9 && worst2 <= 1e-9,
        format!("50 matrices: bi-Frobenius vs nuclear {worst1:.2e}; p=2/3 and p=1/2 identities {worst2:.2e}"),
    )
}

fn cli_end_to_end() -> Outcome {
    let bin = env!("CARGO_BIN_EXE_multischatten");
    let verify = Command::new(bin).arg("verify").output().map_err(|e| e.to_string())?;
    if !verify.status.success() {
        return Err(format!("verify exited with {}", verify.status));
    }
    let dir = tempfile::tempdir().map_err(|e| e.to_string())?;
    let sweep = |out: &Path| -> std::result::Result<Vec<u8>, String> {
        let status = Command::new(bin)
            .args(["synthetic", "--p", "1/4", "--lambda", "2,8", "--repeat", "2", "--seed", "11"])
            .args(["--m", "40", "--n", "40", "--rank", "3", "--d", "6", "--max-iters", "3000"])
            .arg("--output")
            .arg(out)
            .output()
            .map_err(|e| e.to_string())?;
        if !status.status.success() {
            return Err(format!("synthetic exited with {}", status.status));
        }
        std::fs::read(out.join("trials.csv")).map_err(|e| e.to_string())
    };
    let first = sweep(&dir.path().join("a"))?;
    let second = sweep(&dir.path().join("b"))?;
    let rows = first.iter().filter(|&&b| b == b'\n').count() - 1;
    check(
        first == second && rows == 4,
        format!("verify exit 0; 2-cell sweep x 2 repeats: {rows} rows, byte-identical {}", first == second),
    )
}

fn main() -> ExitCode {
    let started = Instant::now();
    let mut failed = 0;
    let mut report = |name: &str, outcome: Outcome| match outcome {
        Ok(detail) => println!("PASS  {name}: {detail}"),
        Err(detail) => {
            failed += 1;
            println!("FAIL  {name}: {detail}");
        }
    };
    report("surrogate equality", surrogate_equality());
    report("scalar prox oracle equivalence", scalar_prox_oracle());
    report("gradient correctness", gradient_correctness());
    report("descent inequality", descent_inequality());
    let runs = reference_runs();
    report("solver convergence properties", solver_properties(&runs));
    report("recovery quality", recovery_quality(&runs));
    report("special cases", special_cases());
    report("end-to-end CLI", cli_end_to_end());
    println!("{} criteria, {failed} failed, {:.1}s", 8, started.elapsed().as_secs_f64());
    if failed == 0 {
        ExitCode::SUCCESS
    } else {
        ExitCode::FAILURE
    }
}
