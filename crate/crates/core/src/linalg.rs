//! Iteration-capped wrappers over nalgebra decompositions.
//!
//! nalgebra's convenience methods iterate without bound, and its Schur
//! iteration can cycle on orthogonal matrices.

use nalgebra::{Complex, DMatrix, DVector, Schur, SVD};

use crate::error::{Error, Result};

const MAX_ITERATIONS: usize = 10_000;

fn not_converged(what: &str) -> Error {
    Error::DegenerateConfiguration(format!("{what} did not converge"))
}

pub(crate) fn svd(m: DMatrix<f64>, compute_u: bool, compute_v: bool) -> Result<SVD<f64, nalgebra::Dyn, nalgebra::Dyn>> {
    m.try_svd(compute_u, compute_v, f64::EPSILON, MAX_ITERATIONS)
        .ok_or_else(|| not_converged("singular value decomposition"))
}

pub(crate) fn singular_values(m: DMatrix<f64>) -> Result<DVector<f64>> {
    svd(m, false, false).map(|s| s.singular_values)
}

/// Eigenvalues of a square matrix.
///
/// The Schur iteration runs on `(m - mu I) / r` with `mu` the mean eigenvalue
/// and `r` the norm of the centred matrix, so clusters around `mu` (rotations
/// close to the identity) are resolved relative to their own spread. When it
/// still stalls it is retried with a shifted spectrum.
pub(crate) fn complex_eigenvalues(m: &DMatrix<f64>) -> Result<Vec<Complex<f64>>> {
    let n = m.nrows();
    let identity = DMatrix::<f64>::identity(n, n);
    let mu = m.trace() / n as f64;
    let centred = m - &identity * mu;
    let r = centred.norm();
    if r == 0.0 {
        return Ok(vec![Complex::new(mu, 0.0); n]);
    }
    let unit = centred / r;
    for shift in [0.0, 1.0, -0.5] {
        let shifted = &unit + &identity * shift;
        if let Some(schur) = Schur::try_new(shifted, f64::EPSILON, MAX_ITERATIONS) {
            return Ok(schur
                .complex_eigenvalues()
                .iter()
                .map(|l| Complex::new(mu + r * (l.re - shift), r * l.im))
                .collect());
        }
    }
    Err(not_converged("eigenvalue iteration"))
}
