//! Dense linear-algebra substrate: thin SVD, Schatten-p norms, the gradient of
//! the smooth Schatten powers, and spectral norms.

use nalgebra::{DMatrix, DVector};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;

use crate::{Error, Result};

pub type DenseMatrix = DMatrix<f64>;

/// Singular values at or below this fraction of the largest one are treated as zero
/// by the norm and gradient routines.
pub const ZERO_SINGULAR_RATIO: f64 = 1e-12;

const JACOBI_MAX_SWEEPS: usize = 100;

const POWER_TOL: f64 = 1e-10;
const POWER_MAX_ITERS: usize = 500;

/// Thin SVD `A = left * diag(singulars) * right^T` with `k = min(rows, cols)`.
#[derive(Clone, Debug)]
pub struct SvdFactors {
    /// `m x k`, orthonormal columns.
    pub left: DenseMatrix,
    /// Length `k`, non-negative, descending.
    pub singulars: DVector<f64>,
    /// `n x k`, orthonormal columns.
    pub right: DenseMatrix,
}

impl SvdFactors {
    pub fn rank(&self) -> usize {
        self.singulars.len()
    }

    /// `left * diag(values) * right^T` for an arbitrary replacement spectrum.
    pub fn recompose_with(&self, values: &DVector<f64>) -> DenseMatrix {
        assert_eq!(values.len(), self.singulars.len());
        let mut scaled = self.left.clone();
        for (j, &s) in values.iter().enumerate() {
            scaled.column_mut(j).scale_mut(s);
        }
        scaled * self.right.transpose()
    }

    pub fn recompose(&self) -> DenseMatrix {
        self.recompose_with(&self.singulars)
    }
}

pub(crate) fn ensure_finite(a: &DenseMatrix) -> Result<()> {
    if a.iter().all(|v| v.is_finite()) {
        Ok(())
    } else {
        Err(Error::NonFinite)
    }
}

/// Thin SVD by one-sided Jacobi rotations.
///
/// Accurate to high relative precision on rank-deficient input, where the
/// bidiagonal QR routine shipped with nalgebra can return wrong singular values
/// once singular vectors are requested.
pub fn thin_svd(a: &DenseMatrix) -> Result<SvdFactors> {
    ensure_finite(a)?;
    let (m, n) = a.shape();
    if m.min(n) == 0 {
        return Ok(SvdFactors {
            left: DenseMatrix::zeros(m, 0),
            singulars: DVector::zeros(0),
            right: DenseMatrix::zeros(n, 0),
        });
    }
    if m < n {
        let t = jacobi_svd(&a.transpose())?;
        return Ok(SvdFactors {
            left: t.right,
            singulars: t.singulars,
            right: t.left,
        });
    }
    jacobi_svd(a)
}

/// Hestenes iteration on a matrix with `rows >= cols`: rotate column pairs until
/// all are mutually orthogonal, accumulating the rotations in `V`.
fn jacobi_svd(a: &DenseMatrix) -> Result<SvdFactors> {
    let (m, n) = a.shape();
    let mut w = a.clone();
    let mut v = DenseMatrix::identity(n, n);
    let tol = m as f64 * f64::EPSILON;
    // columns this small are rounding noise and are treated as exact zeros
    let negligible = f64::EPSILON * a.norm();
    let floor = negligible * negligible;

    let mut converged = false;
    for _ in 0..JACOBI_MAX_SWEEPS {
        let mut rotated = false;
        for p in 0..n {
            for q in (p + 1)..n {
                let (alpha, beta, gamma) = {
                    let (cp, cq) = (w.column(p), w.column(q));
                    (cp.norm_squared(), cq.norm_squared(), cp.dot(&cq))
                };
                if alpha <= floor || beta <= floor || gamma.abs() <= tol * alpha.sqrt() * beta.sqrt() {
                    continue;
                }
                rotated = true;
                let zeta = (beta - alpha) / (2.0 * gamma);
                let t = zeta.signum() / (zeta.abs() + (1.0 + zeta * zeta).sqrt());
                let c = 1.0 / (1.0 + t * t).sqrt();
                let s = c * t;
                rotate_columns(w.as_mut_slice(), m, p, q, c, s);
                rotate_columns(v.as_mut_slice(), n, p, q, c, s);
            }
        }
        if !rotated {
            converged = true;
            break;
        }
    }
    if !converged {
        return Err(Error::Decomposition);
    }

    let norms: Vec<f64> = (0..n)
        .map(|j| w.column(j).norm())
        .map(|v| if v <= negligible { 0.0 } else { v })
        .collect();
    let mut order: Vec<usize> = (0..n).collect();
    order.sort_by(|&x, &y| norms[y].total_cmp(&norms[x]));

    let mut left = DenseMatrix::zeros(m, n);
    let mut right = DenseMatrix::zeros(n, n);
    let mut singulars = DVector::zeros(n);
    let mut missing = Vec::new();
    for (dst, &src) in order.iter().enumerate() {
        singulars[dst] = norms[src];
        right.set_column(dst, &v.column(src));
        if norms[src] > 0.0 {
            left.set_column(dst, &(w.column(src) / norms[src]));
        } else {
            missing.push(dst);
        }
    }
    complete_orthonormal(&mut left, &missing);
    Ok(SvdFactors {
        left,
        singulars,
        right,
    })
}

/// `(x_p, x_q) <- (c x_p - s x_q, s x_p + c x_q)` on the columns of a column-major buffer.
fn rotate_columns(data: &mut [f64], rows: usize, p: usize, q: usize, c: f64, s: f64) {
    let (head, tail) = data.split_at_mut(q * rows);
    let xp = &mut head[p * rows..(p + 1) * rows];
    let xq = &mut tail[..rows];
    for (a, b) in xp.iter_mut().zip(xq.iter_mut()) {
        let (u, w) = (*a, *b);
        *a = c * u - s * w;
        *b = s * u + c * w;
    }
}

/// Fills the listed (zero) columns with unit vectors orthogonal to every other column.
fn complete_orthonormal(basis: &mut DenseMatrix, missing: &[usize]) {
    let m = basis.nrows();
    let residual = |basis: &DenseMatrix, k: usize, skip: usize| {
        let mut x = DVector::zeros(m);
        x[k] = 1.0;
        // two passes of Gram-Schmidt
        for _ in 0..2 {
            for other in (0..basis.ncols()).filter(|&o| o != skip) {
                let col = basis.column(other);
                let proj = col.dot(&x);
                x.axpy(-proj, &col, 1.0);
            }
        }
        x
    };
    for &j in missing {
        // the coordinate vector with the largest residual is far from the span
        let best = (0..m)
            .map(|k| residual(basis, k, j))
            .max_by(|a, b| a.norm_squared().total_cmp(&b.norm_squared()))
            .expect("at least one row");
        let norm = best.norm();
        basis.set_column(j, &(best / norm));
    }
}

/// Singular values with everything at or below `ZERO_SINGULAR_RATIO * sigma_1` set to zero.
pub fn effective_singulars(a: &DenseMatrix) -> Result<DVector<f64>> {
    let svd = thin_svd(a)?;
    Ok(clamp_small(svd.singulars))
}

fn clamp_small(mut singulars: DVector<f64>) -> DVector<f64> {
    let top = singulars.iter().copied().fold(0.0, f64::max);
    let floor = ZERO_SINGULAR_RATIO * top;
    for s in singulars.iter_mut() {
        if *s <= floor {
            *s = 0.0;
        }
    }
    singulars
}

fn check_exponent(p: f64) -> Result<()> {
    if !(p.is_finite() && p > 0.0) {
        return Err(Error::Domain(format!("Schatten exponent must be positive, got {p}")));
    }
    Ok(())
}

/// `||A||_{S_p}^p = sum_i sigma_i(A)^p`, with `0^p = 0`.
pub fn schatten_norm_pow(a: &DenseMatrix, p: f64) -> Result<f64> {
    check_exponent(p)?;
    let singulars = effective_singulars(a)?;
    Ok(singulars
        .iter()
        .filter(|&&s| s > 0.0)
        .map(|&s| s.powf(p))
        .sum())
}

/// Gradient of `||A||_{S_p}^p` for `p > 1`: `p * U diag(sigma^{p-1}) V^T`.
pub fn schatten_grad(a: &DenseMatrix, p: f64) -> Result<DenseMatrix> {
    check_exponent(p)?;
    if p <= 1.0 {
        return Err(Error::Domain(format!(
            "Schatten power is not differentiable for p = {p} <= 1"
        )));
    }
    let svd = thin_svd(a)?;
    let weights = clamp_small(svd.singulars.clone()).map(|s| if s > 0.0 { p * s.powf(p - 1.0) } else { 0.0 });
    Ok(svd.recompose_with(&weights))
}

/// Largest singular value.
///
/// Runs power iteration on the smaller Gram matrix and falls back to a full
/// SVD when the iteration does not settle within the cap.
pub fn spectral_norm(a: &DenseMatrix) -> Result<f64> {
    ensure_finite(a)?;
    let (m, n) = a.shape();
    if m == 0 || n == 0 {
        return Ok(0.0);
    }
    let gram = if m >= n { a.tr_mul(a) } else { a * a.transpose() };
    let trace: f64 = gram.diagonal().sum();
    if trace == 0.0 {
        return Ok(0.0);
    }

    match power_iteration(&gram) {
        Some(lambda) => Ok(lambda.max(0.0).sqrt()),
        None => {
            let svd = thin_svd(a)?;
            Ok(svd.singulars[0])
        }
    }
}

/// Dominant eigenvalue of a symmetric PSD matrix, or `None` if it has not converged.
fn power_iteration(gram: &DenseMatrix) -> Option<f64> {
    let k = gram.nrows();
    // fixed start vector so the result is reproducible
    let mut rng = ChaCha8Rng::seed_from_u64(0x005E_ED0F_5EC7);
    let mut v = DVector::from_fn(k, |_, _| rng.sample::<f64, _>(StandardNormal));
    v /= v.norm();

    let mut estimate = 0.0_f64;
    for _ in 0..POWER_MAX_ITERS {
        let w = gram * &v;
        let next = v.dot(&w);
        let norm = w.norm();
        if norm == 0.0 {
            // start vector landed in the null space
            return None;
        }
        v = w / norm;
        if (next - estimate).abs() <= POWER_TOL * next.abs() {
            // Rayleigh quotient of the normalized iterate
            return Some(v.dot(&(gram * &v)).max(next));
        }
        estimate = next;
    }
    None
}

pub fn frobenius_sq(a: &DenseMatrix) -> f64 {
    a.iter().map(|v| v * v).sum()
}
