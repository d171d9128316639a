//! Proximal maps of `(lambda/p) ||.||_{S_p}^p` for every `p > 0`.
//!
//! The matrix map acts on singular values only, so everything reduces to the
//! scalar problem `argmin_{x >= 0} 0.5 (x - y)^2 + (lambda/p) x^p`:
//!
//! - `p = 1` is soft thresholding and `p = 2` is a rescaling;
//! - `0 < p < 1` uses generalized iterated shrinkage: below a closed-form
//!   threshold the answer is 0, above it a contracting fixed-point iteration
//!   finds the interior stationary point;
//! - other `p > 1` solve `x - y + lambda x^{p-1} = 0` with a safeguarded Newton
//!   iteration on `[0, y]`.

use crate::spectra::{thin_svd, DenseMatrix};
use crate::{Error, Result};

const FIXED_POINT_TOL: f64 = 1e-12;
const FIXED_POINT_MAX_ITERS: usize = 200;
const NEWTON_MAX_ITERS: usize = 200;

/// Scalar prox objective `0.5 (x - y)^2 + (lambda/p) x^p`.
pub fn scalar_objective(x: f64, y: f64, lambda: f64, p: f64) -> f64 {
    let penalty = if x > 0.0 { lambda / p * x.powf(p) } else { 0.0 };
    0.5 * (x - y) * (x - y) + penalty
}

fn check_args(lambda: f64, p: f64) -> Result<()> {
    if !(lambda.is_finite() && lambda >= 0.0) {
        return Err(Error::Domain(format!("lambda must be non-negative, got {lambda}")));
    }
    if !(p.is_finite() && p > 0.0) {
        return Err(Error::Domain(format!("exponent must be positive, got {p}")));
    }
    Ok(())
}

pub fn scalar_prox(y: f64, lambda: f64, p: f64) -> Result<f64> {
    check_args(lambda, p)?;
    if !(y.is_finite() && y >= 0.0) {
        return Err(Error::Domain(format!("prox argument must be non-negative, got {y}")));
    }
    Ok(scalar_prox_unchecked(y, lambda, p))
}

pub(crate) fn scalar_prox_unchecked(y: f64, lambda: f64, p: f64) -> f64 {
    if lambda == 0.0 || y == 0.0 {
        return y;
    }
    if p == 1.0 {
        return (y - lambda).max(0.0);
    }
    if p == 2.0 {
        return y / (1.0 + lambda);
    }
    if p < 1.0 {
        shrink_nonconvex(y, lambda, p)
    } else {
        newton_convex(y, lambda, p)
    }
}

/// Threshold below which zero is the global minimizer for `0 < p < 1`.
pub fn nonconvex_threshold(lambda: f64, p: f64) -> f64 {
    // penalty weight in the form 0.5 (x - y)^2 + w |x|^p
    let weight = lambda / p;
    let knot = (2.0 * weight * (1.0 - p)).powf(1.0 / (2.0 - p));
    knot + weight * p * knot.powf(p - 1.0)
}

fn shrink_nonconvex(y: f64, lambda: f64, p: f64) -> f64 {
    if y <= nonconvex_threshold(lambda, p) {
        return 0.0;
    }
    let tol = FIXED_POINT_TOL * y.max(1.0);
    let mut x = y;
    for _ in 0..FIXED_POINT_MAX_ITERS {
        let next = y - lambda * x.powf(p - 1.0);
        if next.is_nan() || next <= 0.0 {
            return 0.0;
        }
        let step = (next - x).abs();
        x = next;
        if step <= tol {
            break;
        }
    }
    // ties go to zero
    if scalar_objective(0.0, y, lambda, p) <= scalar_objective(x, y, lambda, p) {
        0.0
    } else {
        x
    }
}

fn newton_convex(y: f64, lambda: f64, p: f64) -> f64 {
    // phi is increasing with phi(0) = -y < 0 < phi(y) = lambda y^{p-1}
    let phi = |x: f64| x - y + lambda * x.powf(p - 1.0);
    let dphi = |x: f64| 1.0 + lambda * (p - 1.0) * x.powf(p - 2.0);

    let (mut lo, mut hi) = (0.0_f64, y);
    let mut x = y / (1.0 + lambda);
    let tol = 4.0 * f64::EPSILON * y.max(1.0);
    for _ in 0..NEWTON_MAX_ITERS {
        let value = phi(x);
        if value == 0.0 {
            return x;
        }
        if value < 0.0 {
            lo = x;
        } else {
            hi = x;
        }
        let mut next = x - value / dphi(x);
        if !(next > lo && next < hi) {
            next = 0.5 * (lo + hi);
        }
        if (next - x).abs() <= tol || hi - lo <= tol {
            return next;
        }
        x = next;
    }
    x
}

/// `Prox_{lambda, p}(Y) = U diag(prox(sigma_i)) V^T`.
pub fn matrix_prox(y: &DenseMatrix, lambda: f64, p: f64) -> Result<DenseMatrix> {
    check_args(lambda, p)?;
    let svd = thin_svd(y)?;
    let shrunk = svd.singulars.map(|s| scalar_prox_unchecked(s, lambda, p));
    Ok(svd.recompose_with(&shrunk))
}

/// `0.5 ||X - Y||_F^2 + (lambda/p) ||X||_{S_p}^p`.
pub fn matrix_prox_objective(x: &DenseMatrix, y: &DenseMatrix, lambda: f64, p: f64) -> Result<f64> {
    let fit = 0.5 * crate::spectra::frobenius_sq(&(x - y));
    Ok(fit + lambda / p * crate::spectra::schatten_norm_pow(x, p)?)
}
