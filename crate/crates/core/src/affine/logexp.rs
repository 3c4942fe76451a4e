//! Principal logarithm (inverse scaling and squaring) and exponential of
//! homogeneous affine matrices.

use nalgebra::DMatrix;

use super::{AffineTransform, LogAffine};
use crate::error::{Error, Result};

/// Eigenvalues of the linear part with negative real part and |imaginary part|
/// at or below this value are treated as lying on the negative real axis.
pub const LOG_EIGEN_TOLERANCE: f64 = 1e-9;

/// Square roots are taken until `‖A − I‖_F` drops below this radius.
const SERIES_RADIUS: f64 = 0.25;
const MAX_SQUARE_ROOTS: usize = 64;
const MAX_DB_ITERATIONS: usize = 100;
const MAX_SERIES_TERMS: usize = 200;

pub fn matrix_log(a: &AffineTransform) -> Result<LogAffine> {
    matrix_log_with_tolerance(a, LOG_EIGEN_TOLERANCE)
}

/// Principal logarithm of `a`.
///
/// Fails with [`Error::LogUndefined`] when an eigenvalue of the linear part
/// lies on the closed negative real half-line (within `tolerance` on the
/// imaginary part).
pub fn matrix_log_with_tolerance(a: &AffineTransform, tolerance: f64) -> Result<LogAffine> {
    for lambda in crate::linalg::complex_eigenvalues(a.linear())? {
        if lambda.re <= 0.0 && lambda.im.abs() <= tolerance {
            return Err(Error::LogUndefined {
                re: lambda.re,
                im: lambda.im,
            });
        }
    }

    let n = a.dim() + 1;
    let identity = DMatrix::<f64>::identity(n, n);
    let mut m = a.homogeneous();
    let mut roots = 0;
    while (&m - &identity).norm() >= SERIES_RADIUS {
        if roots == MAX_SQUARE_ROOTS {
            return Err(Error::DegenerateConfiguration(
                "matrix logarithm: square roots did not approach the identity".into(),
            ));
        }
        m = sqrtm_denman_beavers(&m)?;
        roots += 1;
    }

    let x = &m - &identity;
    let mut sum = x.clone();
    let mut power = x.clone();
    for k in 2..=MAX_SERIES_TERMS {
        power = &power * &x;
        let sign = if k % 2 == 0 { -1.0 } else { 1.0 };
        let term = &power * (sign / k as f64);
        let small = term.norm() <= f64::EPSILON * 1e-2 * sum.norm().max(f64::MIN_POSITIVE);
        sum += term;
        if small || power.norm() == 0.0 {
            break;
        }
    }
    sum *= (2.0f64).powi(roots as i32);
    Ok(LogAffine::from_homogeneous(&sum))
}

/// Principal square root by the product form of the Denman–Beavers iteration.
fn sqrtm_denman_beavers(a: &DMatrix<f64>) -> Result<DMatrix<f64>> {
    let n = a.nrows();
    let identity = DMatrix::<f64>::identity(n, n);
    let mut m = a.clone();
    let mut y = a.clone();
    for _ in 0..MAX_DB_ITERATIONS {
        let m_inv = m
            .clone()
            .try_inverse()
            .ok_or_else(|| Error::Singular(m.determinant()))?;
        let y_next = &y * (&identity + &m_inv) * 0.5;
        let m_next = (&identity + (&m + &m_inv) * 0.5) * 0.5;
        let delta = (&y_next - &y).norm();
        y = y_next;
        m = m_next;
        if delta <= 1e-15 * y.norm() {
            break;
        }
    }
    // The square root of an affine matrix is affine.
    let last = n - 1;
    for j in 0..n {
        y[(last, j)] = if j == last { 1.0 } else { 0.0 };
    }
    Ok(y)
}

/// Matrix exponential of a generator. Total: never fails.
pub fn matrix_exp(m: &LogAffine) -> AffineTransform {
    let e = m.matrix().exp();
    let d = m.dim();
    AffineTransform::new_unchecked(
        e.view((0, 0), (d, d)).into_owned(),
        e.view((0, d), (d, 1)).column(0).into_owned(),
    )
    .expect("generator shape already validated")
}
