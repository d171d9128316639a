//! Exponent partitions and factor chains for the multi-factor Schatten surrogate.
//!
//! A [`PartitionSpec`] holds `p` and `p_1..p_I` with `1/p = sum 1/p_i`, kept as exact
//! rationals. For any chain with `X = X_1 ... X_I`,
//! `(1/p) ||X||_{S_p}^p <= sum (1/p_i) ||X_i||_{S_{p_i}}^{p_i}`, and [`optimal_factors`]
//! builds a chain attaining equality from the SVD of `X`.

use std::fmt;

use nalgebra::DVector;
use num_traits::{One, Signed, ToPrimitive, Zero};

use crate::spectra::{schatten_norm_pow, thin_svd, DenseMatrix};
use crate::{Error, Rational, Result};

/// Singular values at or below this fraction of `sigma_1` do not count towards the rank.
pub const RANK_TOLERANCE: f64 = 1e-10;

const PRODUCT_TOLERANCE: f64 = 1e-9;

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum PartitionMode {
    /// Every `p_i >= 1`: each factor penalty is convex.
    AllConvex,
    /// Every `p_i > 1`: each factor penalty is differentiable.
    AllSmooth,
}

impl std::str::FromStr for PartitionMode {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "all_convex" | "convex" => Ok(PartitionMode::AllConvex),
            "all_smooth" | "smooth" => Ok(PartitionMode::AllSmooth),
            other => Err(Error::Config(format!("unknown partition mode {other:?}"))),
        }
    }
}

#[derive(Clone, Debug, PartialEq, Eq)]
pub struct PartitionSpec {
    p: Rational,
    factor_exponents: Vec<Rational>,
}

impl PartitionSpec {
    pub fn new(p: Rational, factor_exponents: Vec<Rational>) -> Result<Self> {
        if !p.is_positive() {
            return Err(Error::Domain(format!("target exponent must be positive, got {p}")));
        }
        if factor_exponents.is_empty() {
            return Err(Error::Domain("a partition needs at least one factor".into()));
        }
        if let Some(bad) = factor_exponents.iter().find(|q| !q.is_positive()) {
            return Err(Error::Domain(format!("factor exponent must be positive, got {bad}")));
        }
        let sum: Rational = factor_exponents.iter().map(|q| q.recip()).sum();
        if sum != p.recip() {
            return Err(Error::Domain(format!(
                "reciprocals of the factor exponents sum to {sum}, expected 1/p = {}",
                p.recip()
            )));
        }
        Ok(PartitionSpec { p, factor_exponents })
    }

    /// The degenerate one-factor spec (no factorization).
    pub fn single(p: Rational) -> Result<Self> {
        PartitionSpec::new(p, vec![p])
    }

    pub fn p(&self) -> Rational {
        self.p
    }

    pub fn p_f64(&self) -> f64 {
        ratio_to_f64(self.p)
    }

    pub fn exponents(&self) -> &[Rational] {
        &self.factor_exponents
    }

    pub fn exponents_f64(&self) -> Vec<f64> {
        self.factor_exponents.iter().map(|&q| ratio_to_f64(q)).collect()
    }

    pub fn factor_count(&self) -> usize {
        self.factor_exponents.len()
    }
}

impl fmt::Display for PartitionSpec {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "p={} -> [", self.p)?;
        for (i, q) in self.factor_exponents.iter().enumerate() {
            if i > 0 {
                write!(f, ", ")?;
            }
            write!(f, "{q}")?;
        }
        write!(f, "]")
    }
}

pub fn ratio_to_f64(q: Rational) -> f64 {
    q.numer().to_f64().unwrap() / q.denom().to_f64().unwrap()
}

/// Parses `"a/b"`, `"a"` or a plain decimal such as `"0.25"` into an exact rational.
pub fn parse_rational(text: &str) -> Result<Rational> {
    let text = text.trim();
    let bad = || Error::Config(format!("cannot parse {text:?} as a rational number"));
    if let Some((num, den)) = text.split_once('/') {
        let num: i64 = num.trim().parse().map_err(|_| bad())?;
        let den: i64 = den.trim().parse().map_err(|_| bad())?;
        if den == 0 {
            return Err(bad());
        }
        return Ok(Rational::new(num, den));
    }
    if let Some((whole, frac)) = text.split_once('.') {
        if frac.len() > 15 || !frac.chars().all(|c| c.is_ascii_digit()) {
            return Err(bad());
        }
        let negative = whole.starts_with('-');
        let whole: i64 = if whole.is_empty() || whole == "-" { 0 } else { whole.parse().map_err(|_| bad())? };
        let scale = 10_i64.pow(frac.len() as u32);
        let frac: i64 = if frac.is_empty() { 0 } else { frac.parse().map_err(|_| bad())? };
        let magnitude = whole.abs() * scale + frac;
        let signed = if negative { -magnitude } else { magnitude };
        return Ok(Rational::new(signed, scale));
    }
    let whole: i64 = text.parse().map_err(|_| bad())?;
    Ok(Rational::from_integer(whole))
}

/// Splits `1/p` into factor exponents that are all `>= 1` or all `> 1`.
///
/// For `p > 1` the single-factor spec is returned.
pub fn make_partition(p: Rational, mode: PartitionMode) -> Result<PartitionSpec> {
    if !p.is_positive() {
        return Err(Error::Domain(format!("target exponent must be positive, got {p}")));
    }
    if p > Rational::one() {
        return PartitionSpec::single(p);
    }
    let inverse = p.recip();
    let whole = inverse.floor();
    let count = whole.to_integer() as usize;
    let exponents = match mode {
        PartitionMode::AllConvex => {
            let rest = inverse - whole;
            if rest.is_zero() {
                vec![Rational::one(); count]
            } else {
                let mut e = vec![Rational::one(); count];
                e.push(rest.recip());
                e
            }
        }
        PartitionMode::AllSmooth => {
            let factors = count + 1;
            vec![p * Rational::from_integer(factors as i64); factors]
        }
    };
    PartitionSpec::new(p, exponents)
}

/// Ordered factors `X_1 (m x d), X_2..X_{I-1} (d x d), X_I (d x n)` whose product is the estimate.
#[derive(Clone, Debug, PartialEq)]
pub struct FactorChain {
    factors: Vec<DenseMatrix>,
}

impl FactorChain {
    pub fn new(factors: Vec<DenseMatrix>) -> Result<Self> {
        if factors.is_empty() {
            return Err(Error::Shape("a factor chain needs at least one factor".into()));
        }
        for pair in factors.windows(2) {
            if pair[0].ncols() != pair[1].nrows() {
                return Err(Error::Shape(format!(
                    "adjacent factors {}x{} and {}x{} are not conformable",
                    pair[0].nrows(),
                    pair[0].ncols(),
                    pair[1].nrows(),
                    pair[1].ncols()
                )));
            }
        }
        for f in &factors {
            crate::spectra::ensure_finite(f)?;
        }
        Ok(FactorChain { factors })
    }

    pub fn factors(&self) -> &[DenseMatrix] {
        &self.factors
    }

    pub fn factor(&self, i: usize) -> &DenseMatrix {
        &self.factors[i]
    }

    pub fn into_factors(self) -> Vec<DenseMatrix> {
        self.factors
    }

    /// Replaces block `i`; the new block must keep its shape.
    pub fn set_factor(&mut self, i: usize, value: DenseMatrix) -> Result<()> {
        let old = self
            .factors
            .get(i)
            .ok_or_else(|| Error::Domain(format!("block index {i} out of range")))?;
        if old.shape() != value.shape() {
            return Err(Error::Shape(format!(
                "block {i} is {:?}, replacement is {:?}",
                old.shape(),
                value.shape()
            )));
        }
        self.factors[i] = value;
        Ok(())
    }

    pub fn len(&self) -> usize {
        self.factors.len()
    }

    pub fn is_empty(&self) -> bool {
        self.factors.is_empty()
    }

    pub fn rows(&self) -> usize {
        self.factors[0].nrows()
    }

    pub fn cols(&self) -> usize {
        self.factors[self.factors.len() - 1].ncols()
    }

    /// Shared inner dimension `d` (the column count of `X_1`).
    pub fn inner_dim(&self) -> usize {
        self.factors[0].ncols()
    }

    /// `X_start ... X_{end-1}`, or `None` for an empty range.
    pub fn product_range(&self, start: usize, end: usize) -> Option<DenseMatrix> {
        let mut blocks = self.factors[start..end].iter();
        let first = blocks.next()?.clone();
        Some(blocks.fold(first, |acc, f| acc * f))
    }

    pub fn product(&self) -> DenseMatrix {
        self.product_range(0, self.factors.len()).expect("chain is non-empty")
    }

    pub fn max_abs_entry(&self) -> f64 {
        self.factors
            .iter()
            .flat_map(|f| f.iter())
            .fold(0.0, |acc: f64, v| acc.max(v.abs()))
    }
}

/// Builds the chain `X_1 = U S^{p/p_1}, X_i = S^{p/p_i}, X_I = S^{p/p_I} V^T` from the SVD
/// of `x`, padded with zero singular directions up to `d`.
pub fn optimal_factors(x: &DenseMatrix, spec: &PartitionSpec, d: usize) -> Result<FactorChain> {
    let count = spec.factor_count();
    if count == 1 {
        return FactorChain::new(vec![x.clone()]);
    }
    if d == 0 {
        return Err(Error::Domain("inner dimension must be at least 1".into()));
    }
    let (m, n) = x.shape();
    let svd = thin_svd(x)?;
    let top = if svd.rank() > 0 { svd.singulars[0] } else { 0.0 };
    let rank = svd
        .singulars
        .iter()
        .filter(|&&s| s > RANK_TOLERANCE * top)
        .count();
    if rank > d {
        return Err(Error::Infeasible { rank, d });
    }

    let kept = d.min(svd.rank());
    let mut left = DenseMatrix::zeros(m, d);
    let mut right = DenseMatrix::zeros(n, d);
    let mut sigma = DVector::zeros(d);
    for j in 0..kept {
        left.set_column(j, &svd.left.column(j));
        right.set_column(j, &svd.right.column(j));
        if j < rank {
            sigma[j] = svd.singulars[j];
        }
    }

    let p = spec.p_f64();
    let power = |q: f64| DVector::from_iterator(d, sigma.iter().map(|&s| if s > 0.0 { s.powf(p / q) } else { 0.0 }));
    let exps = spec.exponents_f64();
    let mut factors = Vec::with_capacity(count);
    for (i, &q) in exps.iter().enumerate() {
        let diag = power(q);
        let block = if i == 0 {
            let mut b = left.clone();
            for (j, &s) in diag.iter().enumerate() {
                b.column_mut(j).scale_mut(s);
            }
            b
        } else if i + 1 == count {
            let mut b = right.transpose();
            for (j, &s) in diag.iter().enumerate() {
                b.row_mut(j).scale_mut(s);
            }
            b
        } else {
            DenseMatrix::from_diagonal(&diag)
        };
        factors.push(block);
    }
    FactorChain::new(factors)
}

/// `sum_i (lambda/p_i) ||X_i||_{S_{p_i}}^{p_i}`.
pub fn surrogate_value(chain: &FactorChain, spec: &PartitionSpec, lambda: f64) -> Result<f64> {
    if chain.len() != spec.factor_count() {
        return Err(Error::Shape(format!(
            "chain has {} factors but the partition has {}",
            chain.len(),
            spec.factor_count()
        )));
    }
    let mut total = 0.0;
    for (f, q) in chain.factors().iter().zip(spec.exponents_f64()) {
        total += lambda / q * schatten_norm_pow(f, q)?;
    }
    Ok(total)
}

/// `(1/p) ||X||_{S_p}^p`.
pub fn scaled_schatten(x: &DenseMatrix, p: f64) -> Result<f64> {
    Ok(schatten_norm_pow(x, p)? / p)
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct SurrogateBound {
    /// `(1/p) ||X||_{S_p}^p`
    pub lhs: f64,
    /// `sum (1/p_i) ||X_i||_{S_{p_i}}^{p_i}`
    pub rhs: f64,
    /// `rhs - lhs`; non-negative up to rounding.
    pub gap: f64,
}

impl SurrogateBound {
    pub fn relative_gap(&self) -> f64 {
        self.gap / self.lhs.abs().max(f64::MIN_POSITIVE)
    }
}

pub fn check_surrogate_bound(
    x: &DenseMatrix,
    chain: &FactorChain,
    spec: &PartitionSpec,
) -> Result<SurrogateBound> {
    let product = chain.product();
    if product.shape() != x.shape() {
        return Err(Error::Precondition(format!(
            "chain product is {:?} but X is {:?}",
            product.shape(),
            x.shape()
        )));
    }
    let mismatch = (&product - x).norm();
    if mismatch > PRODUCT_TOLERANCE * x.norm().max(1.0) {
        return Err(Error::Precondition(format!(
            "chain product differs from X by {mismatch:e} in Frobenius norm"
        )));
    }
    let lhs = scaled_schatten(x, spec.p_f64())?;
    let rhs = surrogate_value(chain, spec, 1.0)?;
    Ok(SurrogateBound { lhs, rhs, gap: rhs - lhs })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::spectra::testutil::{gaussian, orthogonal};
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn q(n: i64, d: i64) -> Rational {
        Rational::new(n, d)
    }

    fn low_rank(m: usize, n: usize, r: usize, rng: &mut ChaCha8Rng) -> DenseMatrix {
        gaussian(m, r, rng) * gaussian(r, n, rng)
    }

    #[test]
    fn partition_examples() {
        let spec = make_partition(q(1, 3), PartitionMode::AllConvex).unwrap();
        assert_eq!(spec.exponents(), &[q(1, 1); 3]);
        let spec = make_partition(q(2, 3), PartitionMode::AllConvex).unwrap();
        assert_eq!(spec.exponents(), &[q(1, 1), q(2, 1)]);
        let spec = make_partition(q(1, 2), PartitionMode::AllSmooth).unwrap();
        assert_eq!(spec.exponents(), &[q(3, 2); 3]);
        let spec = make_partition(q(1, 1), PartitionMode::AllSmooth).unwrap();
        assert_eq!(spec.exponents(), &[q(2, 1); 2]);
        let spec = make_partition(q(3, 2), PartitionMode::AllConvex).unwrap();
        assert_eq!(spec.exponents(), &[q(3, 2)]);
        assert!(make_partition(q(0, 1), PartitionMode::AllConvex).is_err());
        assert!(make_partition(q(-1, 2), PartitionMode::AllSmooth).is_err());
    }

    #[test]
    fn partition_reciprocals_sum_exactly() {
        for den in 1..40 {
            for num in 1..=den {
                let p = q(num, den);
                for mode in [PartitionMode::AllConvex, PartitionMode::AllSmooth] {
                    let spec = make_partition(p, mode).unwrap();
                    let sum: Rational = spec.exponents().iter().map(|e| e.recip()).sum();
                    assert_eq!(sum, p.recip());
                    match mode {
                        PartitionMode::AllConvex => assert!(spec.exponents().iter().all(|e| *e >= q(1, 1))),
                        PartitionMode::AllSmooth => assert!(spec.exponents().iter().all(|e| *e > q(1, 1))),
                    }
                }
            }
        }
    }

    #[test]
    fn spec_rejects_inconsistent_exponents() {
        assert!(PartitionSpec::new(q(1, 2), vec![q(1, 1), q(2, 1)]).is_err());
        assert!(PartitionSpec::new(q(1, 2), vec![]).is_err());
        assert!(PartitionSpec::new(q(1, 2), vec![q(1, 1), q(1, 1)]).is_ok());
    }

    #[test]
    fn parses_rationals() {
        assert_eq!(parse_rational("1/4").unwrap(), q(1, 4));
        assert_eq!(parse_rational(" 2 / 3 ").unwrap(), q(2, 3));
        assert_eq!(parse_rational("0.25").unwrap(), q(1, 4));
        assert_eq!(parse_rational("3").unwrap(), q(3, 1));
        assert!(parse_rational("1/0").is_err());
        assert!(parse_rational("abc").is_err());
    }

    #[test]
    fn scalar_optimal_factors() {
        let x = DenseMatrix::from_element(1, 1, 4.0);
        let spec = PartitionSpec::new(q(1, 2), vec![q(1, 1), q(1, 1)]).unwrap();
        let chain = optimal_factors(&x, &spec, 1).unwrap();
        assert!((chain.factor(0)[(0, 0)].abs() - 2.0).abs() < 1e-12);
        assert!((chain.factor(1)[(0, 0)].abs() - 2.0).abs() < 1e-12);
        assert!((surrogate_value(&chain, &spec, 1.0).unwrap() - 4.0).abs() < 1e-12);
    }

    #[test]
    fn zero_matrix_gives_zero_chain() {
        let spec = make_partition(q(1, 3), PartitionMode::AllConvex).unwrap();
        let chain = optimal_factors(&DenseMatrix::zeros(5, 4), &spec, 2).unwrap();
        assert!(chain.factors().iter().all(|f| f.iter().all(|&v| v == 0.0)));
        assert_eq!(surrogate_value(&chain, &spec, 3.0).unwrap(), 0.0);
    }

    #[test]
    fn optimal_factors_attain_equality() {
        let mut rng = ChaCha8Rng::seed_from_u64(21);
        let x = low_rank(10, 8, 4, &mut rng);
        let spec = make_partition(q(1, 4), PartitionMode::AllConvex).unwrap();
        assert_eq!(spec.exponents(), &[q(1, 1); 4]);
        let chain = optimal_factors(&x, &spec, 6).unwrap();
        assert!((chain.product() - &x).norm() <= 1e-9 * x.norm());
        let bound = check_surrogate_bound(&x, &chain, &spec).unwrap();
        assert!(bound.relative_gap().abs() <= 1e-9, "{bound:?}");
        for &lambda in &[0.5, 3.0] {
            let v = surrogate_value(&chain, &spec, lambda).unwrap();
            assert!((v - lambda * bound.lhs).abs() <= 1e-9 * lambda * bound.lhs);
        }
    }

    #[test]
    fn padding_beyond_min_dimension() {
        let mut rng = ChaCha8Rng::seed_from_u64(22);
        let x = low_rank(4, 3, 2, &mut rng);
        let spec = make_partition(q(1, 2), PartitionMode::AllSmooth).unwrap();
        let chain = optimal_factors(&x, &spec, 6).unwrap();
        assert_eq!(chain.inner_dim(), 6);
        let bound = check_surrogate_bound(&x, &chain, &spec).unwrap();
        assert!(bound.relative_gap().abs() < 1e-9);
    }

    #[test]
    fn infeasible_when_d_below_rank() {
        let mut rng = ChaCha8Rng::seed_from_u64(23);
        let x = low_rank(6, 6, 3, &mut rng);
        let spec = make_partition(q(1, 2), PartitionMode::AllConvex).unwrap();
        assert!(matches!(optimal_factors(&x, &spec, 2), Err(Error::Infeasible { rank: 3, d: 2 })));
    }

    #[test]
    fn rotated_factorizations_never_undercut() {
        let mut rng = ChaCha8Rng::seed_from_u64(24);
        for _ in 0..20 {
            let (m, d) = (rng.random_range(2..8), rng.random_range(1..5));
            let x = gaussian(m, d, &mut rng);
            let qm = orthogonal(d, &mut rng);
            let chain = FactorChain::new(vec![&x * &qm, qm.transpose()]).unwrap();
            let product = chain.product();
            for spec in [
                PartitionSpec::new(q(1, 2), vec![q(1, 1), q(1, 1)]).unwrap(),
                PartitionSpec::new(q(2, 3), vec![q(1, 1), q(2, 1)]).unwrap(),
                PartitionSpec::new(q(1, 1), vec![q(2, 1), q(2, 1)]).unwrap(),
            ] {
                let bound = check_surrogate_bound(&product, &chain, &spec).unwrap();
                assert!(bound.gap >= -1e-9 * bound.lhs.max(1.0));
            }
        }
    }

    #[test]
    fn scalar_bound_arithmetic() {
        let x = DenseMatrix::from_element(1, 1, 4.0);
        let chain = FactorChain::new(vec![
            DenseMatrix::from_element(1, 1, 8.0),
            DenseMatrix::from_element(1, 1, 0.5),
        ])
        .unwrap();
        let spec = PartitionSpec::new(q(1, 2), vec![q(1, 1), q(1, 1)]).unwrap();
        let bound = check_surrogate_bound(&x, &chain, &spec).unwrap();
        assert!((bound.lhs - 4.0).abs() < 1e-12);
        assert!((bound.rhs - 8.5).abs() < 1e-12);
        assert!((bound.gap - 4.5).abs() < 1e-12);
    }

    #[test]
    fn bound_check_rejects_wrong_product() {
        let x = DenseMatrix::from_element(1, 1, 4.0);
        let chain = FactorChain::new(vec![
            DenseMatrix::from_element(1, 1, 1.0),
            DenseMatrix::from_element(1, 1, 1.0),
        ])
        .unwrap();
        let spec = PartitionSpec::new(q(1, 2), vec![q(1, 1), q(1, 1)]).unwrap();
        assert!(matches!(check_surrogate_bound(&x, &chain, &spec), Err(Error::Precondition(_))));
        assert!(surrogate_value(&chain, &make_partition(q(1, 3), PartitionMode::AllConvex).unwrap(), 1.0).is_err());
    }

    #[test]
    fn chain_shape_checks() {
        assert!(FactorChain::new(vec![DenseMatrix::zeros(3, 2), DenseMatrix::zeros(3, 4)]).is_err());
        let mut chain = FactorChain::new(vec![DenseMatrix::zeros(3, 2), DenseMatrix::zeros(2, 4)]).unwrap();
        assert_eq!((chain.rows(), chain.cols(), chain.inner_dim()), (3, 4, 2));
        assert!(chain.set_factor(1, DenseMatrix::zeros(3, 3)).is_err());
        assert!(chain.set_factor(2, DenseMatrix::zeros(2, 4)).is_err());
        chain.set_factor(1, DenseMatrix::from_element(2, 4, 1.0)).unwrap();
        assert_eq!(chain.max_abs_entry(), 1.0);
    }
}
