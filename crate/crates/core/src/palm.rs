//! Accelerated proximal alternating linearized minimization (PALM) for the
//! masked completion objective.
//!
//! One cycle updates the blocks in Gauss-Seidel order. Block `i` linearizes its
//! loss at an extrapolated point
//! `Xh = X_i^{k-1} + w (X_i^{k-1} - X_i^{k-2})` and takes a proximal step
//! `X_i^k = Prox_{lambda/L, p_i}(Xh - grad f_i(Xh) / L)` with `L` the block
//! Lipschitz bound scaled by the continuation factor `rho`. When a cycle fails
//! to decrease the objective it is redone without extrapolation, and if that
//! still fails while `rho < 1` it is redone once more with the full bound.

use std::time::Instant;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};

use crate::completion::{
    block_lipschitz, block_loss_and_gradient, objective, MaskedMatrix, PrefixSuffixCache,
};
use crate::prox::matrix_prox;
use crate::spectra::{schatten_norm_pow, DenseMatrix};
use crate::surrogate::{FactorChain, PartitionSpec};
use crate::{Error, Result};

/// Cap on the extrapolation weight relative to `sqrt(L^{k-2} / L^{k-1})`.
pub const WEIGHT_CAP: f64 = 0.9999;

/// Relative slack on the objective increase tolerated after a safeguarded cycle.
const CONSISTENCY_SLACK: f64 = 1e-9;

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ShuffleMode {
    /// Every block in every cycle.
    #[default]
    Off,
    /// Side blocks plus one inner block, rotating.
    OnePerCycle,
    /// Side blocks plus two inner blocks, rotating.
    TwoPerCycle,
}

impl std::str::FromStr for ShuffleMode {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "off" => Ok(ShuffleMode::Off),
            "one_per_cycle" | "one" => Ok(ShuffleMode::OnePerCycle),
            "two_per_cycle" | "two" => Ok(ShuffleMode::TwoPerCycle),
            other => Err(Error::Config(format!("unknown shuffle mode {other:?}"))),
        }
    }
}

/// Lipschitz underestimation schedule: start at `rho0 * L`, multiply `rho` by `growth`
/// after every cycle, never exceeding 1.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct Continuation {
    pub rho0: f64,
    pub growth: f64,
}

impl Continuation {
    pub const OFF: Continuation = Continuation {
        rho0: 1.0,
        growth: 1.0,
    };
}

impl Default for Continuation {
    fn default() -> Self {
        Continuation {
            rho0: 0.3,
            growth: 1.05,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SolverConfig {
    pub lambda: f64,
    /// Inner dimension of the factorization.
    pub d: usize,
    /// Floor on the block Lipschitz constants.
    pub epsilon: f64,
    pub stop_tol: f64,
    pub max_iters: usize,
    pub continuation: Continuation,
    pub shuffle_inner: ShuffleMode,
    pub use_extrapolation: bool,
    pub seed: u64,
}

impl Default for SolverConfig {
    fn default() -> Self {
        SolverConfig {
            lambda: 1.0,
            d: 10,
            epsilon: 1e-6,
            stop_tol: 1e-4,
            max_iters: 500,
            continuation: Continuation::default(),
            shuffle_inner: ShuffleMode::Off,
            use_extrapolation: true,
            seed: 0,
        }
    }
}

impl SolverConfig {
    pub fn validate(&self) -> Result<()> {
        let positive = |v: f64| v.is_finite() && v > 0.0;
        if !(self.lambda.is_finite() && self.lambda >= 0.0) {
            return Err(Error::Config(format!("lambda must be non-negative, got {}", self.lambda)));
        }
        if self.d == 0 {
            return Err(Error::Config("inner dimension d must be at least 1".into()));
        }
        if !positive(self.epsilon) || !positive(self.stop_tol) {
            return Err(Error::Config("epsilon and stop_tol must be positive".into()));
        }
        let Continuation { rho0, growth } = self.continuation;
        if !(positive(rho0) && rho0 <= 1.0) || !(growth.is_finite() && growth >= 1.0) {
            return Err(Error::Config(format!(
                "continuation needs 0 < rho0 <= 1 and growth >= 1, got {rho0} and {growth}"
            )));
        }
        Ok(())
    }
}

/// `t_k = (1 + sqrt(1 + 4 t_{k-1}^2)) / 2`.
pub fn momentum_next(t_prev: f64) -> f64 {
    0.5 * (1.0 + (1.0 + 4.0 * t_prev * t_prev).sqrt())
}

/// `min((t_{k-1} - 1) / t_k, 0.9999 sqrt(L^{k-2} / L^{k-1}))`, clamped at zero.
pub fn extrapolation_weight(t_prev: f64, t_curr: f64, lipschitz_prev2: f64, lipschitz_prev1: f64) -> f64 {
    let momentum = (t_prev - 1.0) / t_curr;
    let cap = WEIGHT_CAP * (lipschitz_prev2 / lipschitz_prev1).sqrt();
    momentum.min(cap).max(0.0)
}

pub fn continuation_update(rho: f64, continuation: &Continuation) -> f64 {
    (rho * continuation.growth).min(1.0)
}

/// Minimizer of the linearized block subproblem
/// `<g, X - anchor> + (L/2) ||X - anchor||_F^2 + (lambda/p) ||X||_{S_p}^p`,
/// i.e. `Prox_{lambda/L, p}(anchor - g/L)` with `g` the block gradient at `anchor`.
pub fn linearized_prox_step(
    cache: &PrefixSuffixCache,
    data: &MaskedMatrix,
    i: usize,
    anchor: &DenseMatrix,
    lipschitz: f64,
    lambda: f64,
    exponent: f64,
) -> Result<DenseMatrix> {
    let (_, grad) = block_loss_and_gradient(cache, data, i, anchor)?;
    let target = anchor - grad / lipschitz;
    matrix_prox(&target, lambda / lipschitz, exponent)
}

/// Value of the linearized block subproblem at `candidate` (without the constant `f_i(anchor)`).
#[allow(clippy::too_many_arguments)]
pub fn linearized_objective(
    cache: &PrefixSuffixCache,
    data: &MaskedMatrix,
    i: usize,
    anchor: &DenseMatrix,
    candidate: &DenseMatrix,
    lipschitz: f64,
    lambda: f64,
    exponent: f64,
) -> Result<f64> {
    let (_, grad) = block_loss_and_gradient(cache, data, i, anchor)?;
    let delta = candidate - anchor;
    Ok(grad.dot(&delta)
        + 0.5 * lipschitz * delta.norm_squared()
        + lambda / exponent * schatten_norm_pow(candidate, exponent)?)
}

/// Per-block prox residual `||X_i - Prox(X_i - grad f_i / L_i)||_F / max(1, ||X_i||_F)` at a
/// fixed chain, using the full Lipschitz bounds. All entries are zero exactly at a critical point.
pub fn critical_point_certificate(
    chain: &FactorChain,
    data: &MaskedMatrix,
    spec: &PartitionSpec,
    lambda: f64,
    epsilon: f64,
) -> Result<Vec<f64>> {
    let cache = PrefixSuffixCache::new(chain);
    let exponents = spec.exponents_f64();
    let mut out = Vec::with_capacity(chain.len());
    for (i, &q) in exponents.iter().enumerate() {
        let block = chain.factor(i);
        let l = block_lipschitz(&cache, i, epsilon)?;
        let step = linearized_prox_step(&cache, data, i, block, l, lambda, q)?;
        out.push((block - step).norm() / block.norm().max(1.0));
    }
    Ok(out)
}

/// Factors with i.i.d. `N(0, 1/d)` entries.
pub fn random_chain(rows: usize, cols: usize, d: usize, count: usize, seed: u64) -> Result<FactorChain> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let scale = 1.0 / (d as f64).sqrt();
    let mut factors = Vec::with_capacity(count);
    for i in 0..count {
        let r = if i == 0 { rows } else { d };
        let c = if i + 1 == count { cols } else { d };
        factors.push(DenseMatrix::from_fn(r, c, |_, _| scale * rng.sample::<f64, _>(StandardNormal)));
    }
    FactorChain::new(factors)
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct IterationRecord {
    /// Cycle counter `k`; record 0 describes the starting point.
    pub iteration: usize,
    pub objective: f64,
    /// Largest per-block prox residual at the recorded chain.
    pub stop_statistic: f64,
    /// The extrapolated cycle failed to decrease the objective and was redone without extrapolation.
    pub restarted: bool,
    /// The non-extrapolated redo also failed and the cycle was redone with `rho = 1`.
    pub backtracked: bool,
    /// No safeguarded update decreased the objective; the chain was left unchanged.
    pub stalled: bool,
    /// Continuation factor used by the accepted cycle.
    pub rho: f64,
    /// Extrapolation weight per block (`None` for blocks skipped this cycle).
    pub weights: Vec<Option<f64>>,
    /// Effective Lipschitz constant per block (`None` for blocks skipped this cycle).
    pub lipschitz: Vec<Option<f64>>,
    /// `sum_i ||X_i^k - X_i^{k-1}||_F`.
    pub iterate_gap: f64,
    pub max_abs_entry: f64,
    pub elapsed_secs: f64,
}

#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct SolveTrace {
    pub records: Vec<IterationRecord>,
    /// Stopping statistic reached the tolerance.
    pub converged: bool,
    /// The momentum sequence `t_k` advances on restarted cycles as well.
    pub momentum_advances_on_restart: bool,
}

impl SolveTrace {
    pub fn objectives(&self) -> Vec<f64> {
        self.records.iter().map(|r| r.objective).collect()
    }

    /// Number of completed cycles.
    pub fn iterations(&self) -> usize {
        self.records.last().map_or(0, |r| r.iteration)
    }

    pub fn last(&self) -> Option<&IterationRecord> {
        self.records.last()
    }

    pub fn restarts(&self) -> usize {
        self.records.iter().filter(|r| r.restarted).count()
    }
}

/// Solver state between cycles.
#[derive(Clone, Debug)]
pub struct IterateState {
    /// `X^k`
    pub current: FactorChain,
    /// `X^{k-1}`
    pub previous: FactorChain,
    /// Effective Lipschitz constant used for each block in its latest update.
    pub last_lipschitz: Vec<Option<f64>>,
    /// `t_k`
    pub momentum: f64,
    pub iteration: usize,
    pub rho: f64,
    pub objective: f64,
}

struct Sweep {
    chain: FactorChain,
    weights: Vec<Option<f64>>,
    lipschitz: Vec<Option<f64>>,
    objective: f64,
}

pub struct Palm<'a> {
    data: &'a MaskedMatrix,
    spec: &'a PartitionSpec,
    config: SolverConfig,
    exponents: Vec<f64>,
    state: IterateState,
    trace: SolveTrace,
    rotation_offset: usize,
    started: Instant,
}

impl<'a> Palm<'a> {
    /// Starts from a random chain drawn with `config.seed`.
    pub fn new(data: &'a MaskedMatrix, spec: &'a PartitionSpec, config: SolverConfig) -> Result<Self> {
        config.validate()?;
        let init = random_chain(data.rows(), data.cols(), config.d, spec.factor_count(), config.seed)?;
        Self::with_initial(data, spec, config, init)
    }

    pub fn with_initial(
        data: &'a MaskedMatrix,
        spec: &'a PartitionSpec,
        config: SolverConfig,
        init: FactorChain,
    ) -> Result<Self> {
        config.validate()?;
        if init.len() != spec.factor_count() {
            return Err(Error::Shape(format!(
                "initial chain has {} factors, partition has {}",
                init.len(),
                spec.factor_count()
            )));
        }
        let started = Instant::now();
        let f0 = objective(&init, data, config.lambda, spec)?;
        let blocks = init.len();
        let inner = blocks.saturating_sub(2).max(1);
        let rotation_offset = (splitmix64(config.seed) % inner as u64) as usize;
        let state = IterateState {
            previous: init.clone(),
            current: init,
            last_lipschitz: vec![None; blocks],
            momentum: 1.0,
            iteration: 0,
            rho: config.continuation.rho0,
            objective: f0,
        };
        let mut palm = Palm {
            data,
            spec,
            exponents: spec.exponents_f64(),
            config,
            state,
            trace: SolveTrace {
                records: Vec::new(),
                converged: false,
                momentum_advances_on_restart: true,
            },
            rotation_offset,
            started,
        };
        if !f0.is_finite() {
            return Err(palm.diverged());
        }
        let stat = palm.stopping_statistic()?;
        palm.trace.records.push(IterationRecord {
            iteration: 0,
            objective: f0,
            stop_statistic: stat,
            restarted: false,
            backtracked: false,
            stalled: false,
            rho: palm.state.rho,
            weights: vec![None; blocks],
            lipschitz: vec![None; blocks],
            iterate_gap: 0.0,
            max_abs_entry: palm.state.current.max_abs_entry(),
            elapsed_secs: palm.started.elapsed().as_secs_f64(),
        });
        Ok(palm)
    }

    pub fn state(&self) -> &IterateState {
        &self.state
    }

    pub fn trace(&self) -> &SolveTrace {
        &self.trace
    }

    pub fn config(&self) -> &SolverConfig {
        &self.config
    }

    pub fn stopping_statistic(&self) -> Result<f64> {
        let cert = critical_point_certificate(
            &self.state.current,
            self.data,
            self.spec,
            self.config.lambda,
            self.config.epsilon,
        )?;
        Ok(cert.into_iter().fold(0.0, f64::max))
    }

    /// Blocks updated in cycle `k`, in update order.
    pub fn block_order(&self, k: usize) -> Vec<usize> {
        let blocks = self.state.current.len();
        let take = match self.config.shuffle_inner {
            ShuffleMode::Off => return (0..blocks).collect(),
            ShuffleMode::OnePerCycle => 1,
            ShuffleMode::TwoPerCycle => 2,
        };
        let inner = blocks.saturating_sub(2);
        if inner <= take {
            return (0..blocks).collect();
        }
        let start = (self.rotation_offset + k * take) % inner;
        let mut chosen: Vec<usize> = (0..take).map(|j| 1 + (start + j) % inner).collect();
        chosen.sort_unstable();
        let mut order = vec![0];
        order.extend(chosen);
        order.push(blocks - 1);
        order
    }

    /// Proximal update of block `i` within a sweep whose partially updated chain is `working`.
    ///
    /// Returns the new block, the extrapolation weight and the effective Lipschitz constant.
    pub fn block_step(
        &self,
        working: &FactorChain,
        i: usize,
        extrapolate: bool,
        rho: f64,
        t_prev: f64,
        t_curr: f64,
    ) -> Result<(DenseMatrix, f64, f64)> {
        let cache = PrefixSuffixCache::new(working);
        let lipschitz = rho * block_lipschitz(&cache, i, self.config.epsilon)?;
        let exponent = self.exponents[i];
        let weight = match self.state.last_lipschitz[i] {
            Some(prev) if extrapolate && exponent >= 1.0 => extrapolation_weight(t_prev, t_curr, prev, lipschitz),
            _ => 0.0,
        };
        let last = self.state.current.factor(i);
        let anchor = if weight > 0.0 {
            last + (last - self.state.previous.factor(i)) * weight
        } else {
            last.clone()
        };
        let block = linearized_prox_step(&cache, self.data, i, &anchor, lipschitz, self.config.lambda, exponent)?;
        Ok((block, weight, lipschitz))
    }

    fn sweep(&self, order: &[usize], extrapolate: bool, rho: f64, t_prev: f64, t_curr: f64) -> Result<Sweep> {
        let blocks = self.state.current.len();
        let mut working = self.state.current.clone();
        let mut weights = vec![None; blocks];
        let mut lipschitz = vec![None; blocks];
        for &i in order {
            let (block, w, l) = self.block_step(&working, i, extrapolate, rho, t_prev, t_curr)?;
            working.set_factor(i, block)?;
            weights[i] = Some(w);
            lipschitz[i] = Some(l);
        }
        let objective = objective(&working, self.data, self.config.lambda, self.spec)?;
        Ok(Sweep {
            chain: working,
            weights,
            lipschitz,
            objective,
        })
    }

    /// Runs one cycle and returns its trace record.
    pub fn cycle(&mut self) -> Result<&IterationRecord> {
        match self.cycle_inner() {
            Err(Error::NonFinite) => Err(self.diverged()),
            other => other,
        }?;
        Ok(self.trace.records.last().expect("cycle pushes a record"))
    }

    fn cycle_inner(&mut self) -> Result<()> {
        let k = self.state.iteration + 1;
        let order = self.block_order(k);
        let t_prev = self.state.momentum;
        let t_curr = momentum_next(t_prev);
        let before = self.state.objective;
        let rho = self.state.rho;
        let extrapolate = self.config.use_extrapolation;

        let mut restarted = false;
        let mut backtracked = false;
        let mut rho_used = rho;
        let mut sweep = self.sweep(&order, extrapolate, rho, t_prev, t_curr)?;
        if !sweep.objective.is_finite() {
            return Err(Error::NonFinite);
        }
        if sweep.objective >= before {
            restarted = true;
            if extrapolate {
                sweep = self.sweep(&order, false, rho, t_prev, t_curr)?;
            }
            if sweep.objective > before && rho < 1.0 {
                backtracked = true;
                rho_used = 1.0;
                sweep = self.sweep(&order, false, 1.0, t_prev, t_curr)?;
            }
        }
        if !sweep.objective.is_finite() {
            return Err(Error::NonFinite);
        }

        let mut stalled = false;
        if sweep.objective > before {
            if sweep.objective > before + CONSISTENCY_SLACK * before.abs().max(1.0) {
                return Err(Error::InternalConsistency {
                    before,
                    after: sweep.objective,
                });
            }
            // rounding-level increase: keep the current chain
            stalled = true;
        }

        let blocks = self.state.current.len();
        let (iterate_gap, objective_now) = if stalled {
            (0.0, before)
        } else {
            let gap = (0..blocks)
                .map(|i| (sweep.chain.factor(i) - self.state.current.factor(i)).norm())
                .sum();
            let next = sweep.chain.clone();
            self.state.previous = std::mem::replace(&mut self.state.current, next);
            for i in 0..blocks {
                if let Some(l) = sweep.lipschitz[i] {
                    self.state.last_lipschitz[i] = Some(l);
                }
            }
            (gap, sweep.objective)
        };
        self.state.objective = objective_now;
        self.state.momentum = t_curr;
        self.state.iteration = k;
        self.state.rho = continuation_update(rho, &self.config.continuation);

        let stat = self.stopping_statistic()?;
        self.trace.records.push(IterationRecord {
            iteration: k,
            objective: objective_now,
            stop_statistic: stat,
            restarted,
            backtracked,
            stalled,
            rho: rho_used,
            weights: sweep.weights,
            lipschitz: sweep.lipschitz,
            iterate_gap,
            max_abs_entry: self.state.current.max_abs_entry(),
            elapsed_secs: self.started.elapsed().as_secs_f64(),
        });
        Ok(())
    }

    fn diverged(&self) -> Error {
        Error::Divergence {
            iteration: self.state.iteration + 1,
            trace: Box::new(self.trace.clone()),
        }
    }

    fn finished(&self) -> bool {
        let last = self.trace.records.last().expect("record 0 exists");
        last.stop_statistic <= self.config.stop_tol || last.stalled || self.state.iteration >= self.config.max_iters
    }

    /// Cycles until the stopping statistic reaches `stop_tol` or `max_iters` cycles have run.
    /// `observer` sees every record (including the starting point) with the chain it describes.
    pub fn run_with<F>(mut self, mut observer: F) -> Result<(FactorChain, SolveTrace)>
    where
        F: FnMut(&IterationRecord, &FactorChain),
    {
        observer(&self.trace.records[0], &self.state.current);
        while !self.finished() {
            self.cycle()?;
            observer(self.trace.records.last().unwrap(), &self.state.current);
        }
        let last = self.trace.records.last().unwrap();
        self.trace.converged = last.stop_statistic <= self.config.stop_tol;
        Ok((self.state.current, self.trace))
    }

    pub fn run(self) -> Result<(FactorChain, SolveTrace)> {
        self.run_with(|_, _| {})
    }
}

/// Minimizes the masked completion objective from a random start.
pub fn solve(data: &MaskedMatrix, spec: &PartitionSpec, config: &SolverConfig) -> Result<(FactorChain, SolveTrace)> {
    Palm::new(data, spec, config.clone())?.run()
}

pub(crate) fn splitmix64(mut x: u64) -> u64 {
    x = x.wrapping_add(0x9E37_79B9_7F4A_7C15);
    let mut z = x;
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    z ^ (z >> 31)
}
