//! Independent oracles shared by the integration and acceptance tests.
#![allow(dead_code)]

use multischatten::prelude::*;
use nalgebra::DMatrix;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;

pub fn rng(seed: u64) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(seed)
}

pub fn gaussian(rows: usize, cols: usize, rng: &mut ChaCha8Rng) -> DenseMatrix {
    DMatrix::from_fn(rows, cols, |_, _| rng.sample::<f64, _>(StandardNormal))
}

pub fn orthogonal(n: usize, rng: &mut ChaCha8Rng) -> DenseMatrix {
    gaussian(n, n, rng).qr().q()
}

/// Top `rank` singular values from nalgebra's values-only SVD, descending.
pub fn singulars(a: &DenseMatrix, rank: usize) -> Vec<f64> {
    let mut s: Vec<f64> = nalgebra::SVD::new(a.clone(), false, false).singular_values.iter().copied().collect();
    s.sort_by(|x, y| y.total_cmp(x));
    s.truncate(rank);
    s
}

/// `sum_{i <= rank} sigma_i^p` for a matrix known to have exactly `rank` nonzero singular values.
pub fn schatten_pow(a: &DenseMatrix, p: f64, rank: usize) -> f64 {
    singulars(a, rank).iter().map(|s| s.powf(p)).sum()
}

/// `0.5 sum_{observed} (M_ij - (X_1 ... X_I)_ij)^2` with a plain dense product.
pub fn dense_loss(factors: &[DenseMatrix], data: &MaskedMatrix) -> f64 {
    let mut product = factors[0].clone();
    for f in &factors[1..] {
        product *= f;
    }
    0.5 * data
        .observations()
        .iter()
        .map(|o| (o.value - product[(o.row, o.col)]).powi(2))
        .sum::<f64>()
}

pub fn random_data(m: usize, n: usize, frac: f64, rng: &mut ChaCha8Rng) -> MaskedMatrix {
    let mut obs = Vec::new();
    for i in 0..m {
        for j in 0..n {
            if rng.random::<f64>() < frac {
                obs.push(Observation { row: i, col: j, value: rng.sample(StandardNormal) });
            }
        }
    }
    if obs.is_empty() {
        obs.push(Observation { row: 0, col: 0, value: 1.0 });
    }
    MaskedMatrix::new(m, n, obs).unwrap()
}

pub fn random_chain(m: usize, n: usize, d: usize, count: usize, rng: &mut ChaCha8Rng) -> FactorChain {
    let factors = (0..count)
        .map(|i| {
            let r = if i == 0 { m } else { d };
            let c = if i + 1 == count { n } else { d };
            gaussian(r, c, rng)
        })
        .collect();
    FactorChain::new(factors).unwrap()
}

/// Scalar prox objective `0.5 (x - y)^2 + (lambda/p) x^p`.
pub fn prox_objective(x: f64, y: f64, lambda: f64, p: f64) -> f64 {
    let penalty = if x > 0.0 { lambda / p * x.powf(p) } else { 0.0 };
    0.5 * (x - y).powi(2) + penalty
}

/// Minimizer over `[0, y]` by a dense grid followed by golden-section refinement.
pub fn prox_oracle(y: f64, lambda: f64, p: f64) -> f64 {
    if y == 0.0 {
        return 0.0;
    }
    let f = |x: f64| prox_objective(x, y, lambda, p);
    let cells = 20_000;
    let h = y / cells as f64;
    let best = (0..=cells).min_by(|&a, &b| f(a as f64 * h).total_cmp(&f(b as f64 * h))).unwrap();
    let (mut a, mut b) = ((best as f64 - 1.0).max(0.0) * h, (best as f64 + 1.0).min(cells as f64) * h);
    let g = (5f64.sqrt() - 1.0) / 2.0;
    for _ in 0..200 {
        let c = b - g * (b - a);
        let d = a + g * (b - a);
        if f(c) < f(d) {
            b = d;
        } else {
            a = c;
        }
    }
    let mid = 0.5 * (a + b);
    [0.0, mid, a, b].into_iter().min_by(|&u, &v| f(u).total_cmp(&f(v))).unwrap()
}

/// Same product, different factors: inserts `T T^{-1}` between neighbours with
/// `T = Q1 diag(e^u) Q2`, `u` uniform in `[-1, 1]`.
pub fn refactor(chain: &FactorChain, rng: &mut ChaCha8Rng) -> FactorChain {
    let mut factors = chain.factors().to_vec();
    for j in 0..factors.len().saturating_sub(1) {
        let d = factors[j].ncols();
        let q1 = orthogonal(d, rng);
        let q2 = orthogonal(d, rng);
        let u: Vec<f64> = (0..d).map(|_| rng.random_range(-1.0..1.0f64)).collect();
        let scale = DMatrix::from_fn(d, d, |r, c| if r == c { u[r].exp() } else { 0.0 });
        let inverse = DMatrix::from_fn(d, d, |r, c| if r == c { (-u[r]).exp() } else { 0.0 });
        factors[j] = &factors[j] * (&q1 * scale * &q2);
        factors[j + 1] = (q2.transpose() * inverse * q1.transpose()) * &factors[j + 1];
    }
    FactorChain::new(factors).unwrap()
}

/// Prox residual `||X_i - Prox(X_i - grad/L)|| / max(1, ||X_i||)` per block, from public primitives.
pub fn certificate(chain: &FactorChain, data: &MaskedMatrix, spec: &PartitionSpec, lambda: f64, epsilon: f64) -> Vec<f64> {
    let cache = PrefixSuffixCache::new(chain);
    spec.exponents_f64()
        .iter()
        .enumerate()
        .map(|(i, &q)| {
            let x = chain.factor(i);
            let l = block_lipschitz(&cache, i, epsilon).unwrap();
            let g = block_gradient(&cache, data, i, x).unwrap();
            let step = matrix_prox(&(x - g / l), lambda / l, q).unwrap();
            (x - step).norm() / x.norm().max(1.0)
        })
        .collect()
}
