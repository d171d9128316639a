//! Masked matrix-completion objective
//! `F(X_1..X_I) = 0.5 ||W o (M - X_1 ... X_I)||_F^2 + sum (lambda/p_i) ||X_i||_{S_{p_i}}^{p_i}`,
//! its block gradients and blockwise Lipschitz bounds, plus recovery metrics.
//!
//! Residuals are only ever formed at observed positions. For block `i` the
//! product is `A_{-i} X_i A_{+i}`, and each prediction is an inner product between
//! a row of a left factor and a column of a right factor, so one block
//! evaluation costs `O(|obs| d + (m + n) d^2)`.

use std::collections::HashSet;

use serde::{Deserialize, Serialize};

use crate::spectra::{spectral_norm, DenseMatrix};
use crate::surrogate::{surrogate_value, FactorChain, PartitionSpec};
use crate::{Error, Result};

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct Observation {
    pub row: usize,
    pub col: usize,
    pub value: f64,
}

/// Observed entries of an `rows x cols` matrix. The mask is implicit.
#[derive(Clone, Debug, PartialEq)]
pub struct MaskedMatrix {
    rows: usize,
    cols: usize,
    observations: Vec<Observation>,
}

impl MaskedMatrix {
    pub fn new(rows: usize, cols: usize, observations: Vec<Observation>) -> Result<Self> {
        if observations.is_empty() {
            return Err(Error::Data("a masked matrix needs at least one observation".into()));
        }
        let mut seen = HashSet::with_capacity(observations.len());
        for o in &observations {
            if o.row >= rows || o.col >= cols {
                return Err(Error::Data(format!(
                    "observation ({}, {}) is outside a {rows}x{cols} matrix",
                    o.row, o.col
                )));
            }
            if !o.value.is_finite() {
                return Err(Error::Data(format!("observation ({}, {}) is not finite", o.row, o.col)));
            }
            if !seen.insert((o.row, o.col)) {
                return Err(Error::Data(format!("duplicate observation at ({}, {})", o.row, o.col)));
            }
        }
        Ok(MaskedMatrix {
            rows,
            cols,
            observations,
        })
    }

    /// Every entry of `dense` observed.
    pub fn from_dense(dense: &DenseMatrix) -> Result<Self> {
        let mut obs = Vec::with_capacity(dense.len());
        for r in 0..dense.nrows() {
            for c in 0..dense.ncols() {
                obs.push(Observation {
                    row: r,
                    col: c,
                    value: dense[(r, c)],
                });
            }
        }
        MaskedMatrix::new(dense.nrows(), dense.ncols(), obs)
    }

    pub fn rows(&self) -> usize {
        self.rows
    }

    pub fn cols(&self) -> usize {
        self.cols
    }

    pub fn observations(&self) -> &[Observation] {
        &self.observations
    }

    pub fn len(&self) -> usize {
        self.observations.len()
    }

    pub fn is_empty(&self) -> bool {
        self.observations.is_empty()
    }

    /// `W o M` as a dense matrix (unobserved entries are zero).
    pub fn to_dense(&self) -> DenseMatrix {
        let mut out = DenseMatrix::zeros(self.rows, self.cols);
        for o in &self.observations {
            out[(o.row, o.col)] = o.value;
        }
        out
    }

    /// The 0/1 mask `W`.
    pub fn mask(&self) -> DenseMatrix {
        let mut out = DenseMatrix::zeros(self.rows, self.cols);
        for o in &self.observations {
            out[(o.row, o.col)] = 1.0;
        }
        out
    }
}

/// Prefix products `A_{-i} = X_1 ... X_{i-1}` and suffix products `A_{+i} = X_{i+1} ... X_I`
/// of a chain snapshot. Empty products are the identity and stored as `None`.
#[derive(Clone, Debug)]
pub struct PrefixSuffixCache {
    prefixes: Vec<Option<DenseMatrix>>,
    suffixes: Vec<Option<DenseMatrix>>,
    block_shapes: Vec<(usize, usize)>,
}

impl PrefixSuffixCache {
    pub fn new(chain: &FactorChain) -> Self {
        let count = chain.len();
        let mut prefixes = Vec::with_capacity(count);
        let mut running: Option<DenseMatrix> = None;
        for f in chain.factors() {
            prefixes.push(running.clone());
            running = Some(match running {
                None => f.clone(),
                Some(acc) => acc * f,
            });
        }
        let mut suffixes = vec![None; count];
        let mut running: Option<DenseMatrix> = None;
        for (i, f) in chain.factors().iter().enumerate().rev() {
            suffixes[i] = running.clone();
            running = Some(match running {
                None => f.clone(),
                Some(acc) => f * acc,
            });
        }
        PrefixSuffixCache {
            prefixes,
            suffixes,
            block_shapes: chain.factors().iter().map(|f| f.shape()).collect(),
        }
    }

    pub fn blocks(&self) -> usize {
        self.prefixes.len()
    }

    pub fn prefix(&self, i: usize) -> Option<&DenseMatrix> {
        self.prefixes[i].as_ref()
    }

    pub fn suffix(&self, i: usize) -> Option<&DenseMatrix> {
        self.suffixes[i].as_ref()
    }

    fn check_block(&self, i: usize, at: &DenseMatrix) -> Result<()> {
        let shape = *self
            .block_shapes
            .get(i)
            .ok_or_else(|| Error::Domain(format!("block index {i} out of range for {} blocks", self.blocks())))?;
        if at.shape() != shape {
            return Err(Error::Shape(format!(
                "block {i} is {:?} but the evaluation point is {:?}",
                shape,
                at.shape()
            )));
        }
        Ok(())
    }

    fn predictor(&self, i: usize, at: &DenseMatrix) -> Predictor {
        match (self.prefix(i), self.suffix(i)) {
            (None, None) => Predictor::Dense(at.clone()),
            (None, Some(s)) => Predictor::factored(at, s.clone()),
            (Some(p), None) => Predictor::factored(p, at.clone()),
            (Some(p), Some(s)) => Predictor::factored(&(p * at), s.clone()),
        }
    }
}

/// Evaluates entries of a product held as `left * right` without materializing it.
enum Predictor {
    Dense(DenseMatrix),
    Factored {
        /// `left^T`, so that row `r` of `left` is a contiguous column.
        left_t: DenseMatrix,
        right: DenseMatrix,
    },
}

impl Predictor {
    fn factored(left: &DenseMatrix, right: DenseMatrix) -> Self {
        Predictor::Factored {
            left_t: left.transpose(),
            right,
        }
    }

    fn for_chain(chain: &FactorChain) -> Self {
        let count = chain.len();
        match chain.product_range(0, count - 1) {
            None => Predictor::Dense(chain.factor(0).clone()),
            Some(left) => Predictor::factored(&left, chain.factor(count - 1).clone()),
        }
    }

    #[inline]
    fn at(&self, r: usize, c: usize) -> f64 {
        match self {
            Predictor::Dense(x) => x[(r, c)],
            Predictor::Factored { left_t, right } => dot(left_t.column(r).as_slice(), right.column(c).as_slice()),
        }
    }
}

#[inline]
fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

fn check_dims(chain: &FactorChain, data: &MaskedMatrix) -> Result<()> {
    if chain.rows() != data.rows() || chain.cols() != data.cols() {
        return Err(Error::Shape(format!(
            "chain product is {}x{} but the data matrix is {}x{}",
            chain.rows(),
            chain.cols(),
            data.rows(),
            data.cols()
        )));
    }
    Ok(())
}

/// `M - X` at the observed positions, in observation order.
fn residuals_with(predictor: &Predictor, data: &MaskedMatrix) -> Vec<f64> {
    data.observations()
        .iter()
        .map(|o| o.value - predictor.at(o.row, o.col))
        .collect()
}

/// `0.5 ||W o (M - X_1 ... X_I)||_F^2`.
pub fn masked_loss(chain: &FactorChain, data: &MaskedMatrix) -> Result<f64> {
    check_dims(chain, data)?;
    let predictor = Predictor::for_chain(chain);
    Ok(0.5 * residuals_with(&predictor, data).iter().map(|r| r * r).sum::<f64>())
}

pub fn objective(chain: &FactorChain, data: &MaskedMatrix, lambda: f64, spec: &PartitionSpec) -> Result<f64> {
    if !(lambda.is_finite() && lambda >= 0.0) {
        return Err(Error::Domain(format!("lambda must be non-negative, got {lambda}")));
    }
    let loss = masked_loss(chain, data)?;
    Ok(loss + surrogate_value(chain, spec, lambda)?)
}

/// `f_i(at) = 0.5 ||W o (M - A_{-i} at A_{+i})||_F^2`.
pub fn block_loss(cache: &PrefixSuffixCache, data: &MaskedMatrix, i: usize, at: &DenseMatrix) -> Result<f64> {
    cache.check_block(i, at)?;
    let predictor = cache.predictor(i, at);
    Ok(0.5 * residuals_with(&predictor, data).iter().map(|r| r * r).sum::<f64>())
}

/// Gradient of `f_i` at `at`: `-(A_{-i})^T (W o (M - A_{-i} at A_{+i})) (A_{+i})^T`.
pub fn block_gradient(
    cache: &PrefixSuffixCache,
    data: &MaskedMatrix,
    i: usize,
    at: &DenseMatrix,
) -> Result<DenseMatrix> {
    block_loss_and_gradient(cache, data, i, at).map(|(_, g)| g)
}

pub(crate) fn block_loss_and_gradient(
    cache: &PrefixSuffixCache,
    data: &MaskedMatrix,
    i: usize,
    at: &DenseMatrix,
) -> Result<(f64, DenseMatrix)> {
    cache.check_block(i, at)?;
    let predictor = cache.predictor(i, at);
    let residuals = residuals_with(&predictor, data);
    let loss = 0.5 * residuals.iter().map(|r| r * r).sum::<f64>();
    let obs = data.observations();

    let gradient = match (cache.prefix(i), cache.suffix(i)) {
        (None, None) => {
            let mut g = DenseMatrix::zeros(data.rows(), data.cols());
            for (o, r) in obs.iter().zip(&residuals) {
                g[(o.row, o.col)] = -r;
            }
            g
        }
        (Some(p), None) => {
            // column c of the gradient collects -r * (row r of P)
            let p_t = p.transpose();
            let mut g = DenseMatrix::zeros(at.nrows(), at.ncols());
            for (o, &r) in obs.iter().zip(&residuals) {
                let src = p_t.column(o.row);
                let mut dst = g.column_mut(o.col);
                dst.axpy(-r, &src, 1.0);
            }
            g
        }
        (prefix, Some(s)) => {
            // acc = S R^T, so the gradient is -(acc P)^T, or -acc^T without a prefix
            let mut acc = DenseMatrix::zeros(s.nrows(), data.rows());
            for (o, &r) in obs.iter().zip(&residuals) {
                let src = s.column(o.col);
                let mut dst = acc.column_mut(o.row);
                dst.axpy(r, &src, 1.0);
            }
            match prefix {
                None => -acc.transpose(),
                Some(p) => -(acc * p).transpose(),
            }
        }
    };
    Ok((loss, gradient))
}

/// `max(||A_{-i}||_2^2 ||A_{+i}||_2^2, epsilon)`.
pub fn block_lipschitz(cache: &PrefixSuffixCache, i: usize, epsilon: f64) -> Result<f64> {
    if !(epsilon.is_finite() && epsilon > 0.0) {
        return Err(Error::Domain(format!("Lipschitz floor must be positive, got {epsilon}")));
    }
    if i >= cache.blocks() {
        return Err(Error::Domain(format!("block index {i} out of range for {} blocks", cache.blocks())));
    }
    let left = cache.prefix(i).map(spectral_norm).transpose()?.unwrap_or(1.0);
    let right = cache.suffix(i).map(spectral_norm).transpose()?.unwrap_or(1.0);
    Ok((left * left * right * right).max(epsilon))
}

/// Relative square-root error `||X - truth||_F / ||truth||_F`.
pub fn rsre(x: &DenseMatrix, truth: &DenseMatrix) -> Result<f64> {
    if x.shape() != truth.shape() {
        return Err(Error::Shape(format!("{:?} vs {:?}", x.shape(), truth.shape())));
    }
    let denom = truth.norm();
    if denom == 0.0 {
        return Err(Error::Domain("relative error against a zero matrix".into()));
    }
    Ok((x - truth).norm() / denom)
}

/// Root mean squared error of the chain's product over the test entries.
pub fn rmse(chain: &FactorChain, test: &MaskedMatrix) -> Result<f64> {
    if test.is_empty() {
        return Err(Error::Domain("RMSE over an empty test set".into()));
    }
    check_dims(chain, test)?;
    let predictor = Predictor::for_chain(chain);
    let sq: f64 = residuals_with(&predictor, test).iter().map(|r| r * r).sum();
    Ok((sq / test.len() as f64).sqrt())
}
