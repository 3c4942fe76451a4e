//! Homogeneous affine transforms, their principal logarithms, and closed-form
//! point-set fits.
//!
//! Transforms are dimension-generic (d = 2 or 3) and backed by dynamically
//! sized nalgebra matrices. Hot loops over voxels convert to fixed-size 3D
//! matrices through [`AffineTransform::to_matrix3`].

mod fit;
mod io;
mod logexp;
pub(crate) mod points;

pub use fit::{fit_affine_lls, fit_rigid, fit_translation, residual, FitModel};
pub use io::{format_affine, parse_affine, read_affine, write_affine};
pub use logexp::{matrix_exp, matrix_log, matrix_log_with_tolerance, LOG_EIGEN_TOLERANCE};
pub use points::PointSet;

use nalgebra::{DMatrix, DVector, Matrix3, Vector3};

use crate::error::{Error, Result};

/// Smallest |det L| accepted for an invertible linear part.
pub const MIN_ABS_DET: f64 = 1e-12;

/// Affine map `x -> L x + t` in d dimensions.
#[derive(Debug, Clone, PartialEq)]
pub struct AffineTransform {
    linear: DMatrix<f64>,
    translation: DVector<f64>,
}

impl AffineTransform {
    pub fn new(linear: DMatrix<f64>, translation: DVector<f64>) -> Result<Self> {
        let a = Self::new_unchecked(linear, translation)?;
        let det = a.linear.determinant();
        if !(det.abs() > MIN_ABS_DET) {
            return Err(Error::Singular(det));
        }
        Ok(a)
    }

    /// Builds a transform without the invertibility check; shapes are still validated.
    pub(crate) fn new_unchecked(linear: DMatrix<f64>, translation: DVector<f64>) -> Result<Self> {
        let d = linear.nrows();
        if linear.ncols() != d {
            return Err(Error::DimensionMismatch {
                expected: d,
                found: linear.ncols(),
            });
        }
        if translation.len() != d {
            return Err(Error::DimensionMismatch {
                expected: d,
                found: translation.len(),
            });
        }
        if !(2..=3).contains(&d) {
            return Err(Error::DimensionalityUnsupported(format!(
                "affine dimension {d}"
            )));
        }
        Ok(Self {
            linear,
            translation,
        })
    }

    pub fn identity(dim: usize) -> Self {
        Self {
            linear: DMatrix::identity(dim, dim),
            translation: DVector::zeros(dim),
        }
    }

    pub fn from_translation(t: &[f64]) -> Self {
        Self {
            linear: DMatrix::identity(t.len(), t.len()),
            translation: DVector::from_column_slice(t),
        }
    }

    /// Parses a (d+1)×(d+1) homogeneous matrix. The last row must be `[0 … 0 1]`.
    pub fn from_homogeneous(m: &DMatrix<f64>) -> Result<Self> {
        let n = m.nrows();
        if m.ncols() != n || n < 3 {
            return Err(Error::DimensionMismatch {
                expected: n,
                found: m.ncols(),
            });
        }
        let d = n - 1;
        for j in 0..n {
            let expected = if j == d { 1.0 } else { 0.0 };
            if (m[(d, j)] - expected).abs() > 1e-12 {
                return Err(Error::InvalidConfig(
                    "last row of a homogeneous affine must be [0 ... 0 1]".into(),
                ));
            }
        }
        Self::new(
            m.view((0, 0), (d, d)).into_owned(),
            m.view((0, d), (d, 1)).column(0).into_owned(),
        )
    }

    pub fn from_matrix3(linear: &Matrix3<f64>, translation: &Vector3<f64>) -> Result<Self> {
        Self::new(
            DMatrix::from_column_slice(3, 3, linear.as_slice()),
            DVector::from_column_slice(translation.as_slice()),
        )
    }

    pub fn dim(&self) -> usize {
        self.linear.nrows()
    }

    pub fn linear(&self) -> &DMatrix<f64> {
        &self.linear
    }

    pub fn translation(&self) -> &DVector<f64> {
        &self.translation
    }

    pub fn homogeneous(&self) -> DMatrix<f64> {
        let d = self.dim();
        let mut m = DMatrix::zeros(d + 1, d + 1);
        m.view_mut((0, 0), (d, d)).copy_from(&self.linear);
        m.view_mut((0, d), (d, 1)).copy_from(&self.translation);
        m[(d, d)] = 1.0;
        m
    }

    /// Fixed-size 3D copy of `(L, t)`. Panics when `dim() != 3`.
    pub fn to_matrix3(&self) -> (Matrix3<f64>, Vector3<f64>) {
        assert_eq!(self.dim(), 3, "to_matrix3 on a {}D affine", self.dim());
        (
            Matrix3::from_column_slice(self.linear.as_slice()),
            Vector3::from_column_slice(self.translation.as_slice()),
        )
    }

    pub fn apply(&self, x: &DVector<f64>) -> DVector<f64> {
        &self.linear * x + &self.translation
    }

    /// Applies a 3D transform to a point given as an array.
    pub fn apply3(&self, x: [f64; 3]) -> [f64; 3] {
        let (l, t) = self.to_matrix3();
        let y = l * Vector3::from(x) + t;
        [y.x, y.y, y.z]
    }

    /// `self ∘ other`, i.e. `other` is applied first.
    pub fn compose(&self, other: &AffineTransform) -> Result<AffineTransform> {
        if self.dim() != other.dim() {
            return Err(Error::DimensionMismatch {
                expected: self.dim(),
                found: other.dim(),
            });
        }
        Ok(Self {
            linear: &self.linear * &other.linear,
            translation: &self.linear * &other.translation + &self.translation,
        })
    }

    pub fn invert(&self) -> Result<AffineTransform> {
        let det = self.linear.determinant();
        if !(det.abs() > MIN_ABS_DET) {
            return Err(Error::Singular(det));
        }
        let inv = self
            .linear
            .clone()
            .try_inverse()
            .ok_or(Error::Singular(det))?;
        let translation = -(&inv * &self.translation);
        Ok(Self {
            linear: inv,
            translation,
        })
    }

    /// Largest absolute elementwise difference of the homogeneous matrices.
    pub fn max_abs_diff(&self, other: &AffineTransform) -> f64 {
        self.linear
            .iter()
            .zip(other.linear.iter())
            .chain(self.translation.iter().zip(other.translation.iter()))
            .map(|(a, b)| (a - b).abs())
            .fold(0.0, f64::max)
    }
}

/// Element of the affine Lie algebra: a (d+1)×(d+1) matrix whose last row is zero.
///
/// Only the top d rows are stored, so the zero last row holds by construction.
#[derive(Debug, Clone, PartialEq)]
pub struct LogAffine {
    linear: DMatrix<f64>,
    translation: DVector<f64>,
}

impl LogAffine {
    pub fn new(linear: DMatrix<f64>, translation: DVector<f64>) -> Result<Self> {
        let d = linear.nrows();
        if linear.ncols() != d || translation.len() != d {
            return Err(Error::DimensionMismatch {
                expected: d,
                found: translation.len(),
            });
        }
        Ok(Self {
            linear,
            translation,
        })
    }

    pub fn zero(dim: usize) -> Self {
        Self {
            linear: DMatrix::zeros(dim, dim),
            translation: DVector::zeros(dim),
        }
    }

    /// Reads the top d rows of a homogeneous matrix; the last row is discarded.
    pub fn from_homogeneous(m: &DMatrix<f64>) -> Self {
        let d = m.nrows() - 1;
        Self {
            linear: m.view((0, 0), (d, d)).into_owned(),
            translation: m.view((0, d), (d, 1)).column(0).into_owned(),
        }
    }

    pub fn dim(&self) -> usize {
        self.linear.nrows()
    }

    pub fn linear(&self) -> &DMatrix<f64> {
        &self.linear
    }

    pub fn translation(&self) -> &DVector<f64> {
        &self.translation
    }

    pub fn matrix(&self) -> DMatrix<f64> {
        let d = self.dim();
        let mut m = DMatrix::zeros(d + 1, d + 1);
        m.view_mut((0, 0), (d, d)).copy_from(&self.linear);
        m.view_mut((0, d), (d, 1)).copy_from(&self.translation);
        m
    }

    pub fn scale(&self, s: f64) -> Self {
        Self {
            linear: &self.linear * s,
            translation: &self.translation * s,
        }
    }

    /// Velocity `M x̂` of the generator at `x`.
    pub fn velocity(&self, x: &DVector<f64>) -> DVector<f64> {
        &self.linear * x + &self.translation
    }

    /// Row-major 3×4 block `[linear | translation]` of a 3D generator.
    pub fn to_rows3x4(&self) -> [f64; 12] {
        assert_eq!(self.dim(), 3);
        let mut out = [0.0; 12];
        for r in 0..3 {
            for c in 0..3 {
                out[4 * r + c] = self.linear[(r, c)];
            }
            out[4 * r + 3] = self.translation[r];
        }
        out
    }

    pub fn frobenius_norm(&self) -> f64 {
        (self.linear.norm_squared() + self.translation.norm_squared()).sqrt()
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn sample() -> AffineTransform {
        AffineTransform::new(
            DMatrix::from_row_slice(3, 3, &[1.1, 0.2, 0.0, -0.1, 0.9, 0.3, 0.05, 0.0, 1.2]),
            DVector::from_column_slice(&[3.0, -2.0, 7.5]),
        )
        .unwrap()
    }

    #[test]
    fn compose_with_identity_is_noop() {
        let a = sample();
        let id = AffineTransform::identity(3);
        assert_eq!(a.compose(&id).unwrap(), a);
        assert_eq!(id.compose(&a).unwrap(), a);
    }

    #[test]
    fn inverse_of_translation() {
        let t = AffineTransform::from_translation(&[1.0, -2.0, 3.5]);
        let inv = t.invert().unwrap();
        assert_eq!(inv, AffineTransform::from_translation(&[-1.0, 2.0, -3.5]));
    }

    #[test]
    fn compose_with_inverse_is_identity() {
        let a = sample();
        let id = a.compose(&a.invert().unwrap()).unwrap();
        assert!(id.max_abs_diff(&AffineTransform::identity(3)) < 1e-10);
    }

    #[test]
    fn singular_linear_part_is_rejected() {
        let l = DMatrix::from_row_slice(3, 3, &[1.0, 2.0, 3.0, 2.0, 4.0, 6.0, 0.0, 0.0, 1.0]);
        let err = AffineTransform::new(l, DVector::zeros(3)).unwrap_err();
        assert!(matches!(err, Error::Singular(_)));
    }

    #[test]
    fn homogeneous_roundtrip() {
        let a = sample();
        assert_eq!(AffineTransform::from_homogeneous(&a.homogeneous()).unwrap(), a);
    }

    #[test]
    fn log_affine_last_row_is_zero() {
        let m = LogAffine::new(DMatrix::from_element(3, 3, 0.3), DVector::from_element(3, 2.0))
            .unwrap()
            .matrix();
        assert!(m.row(3).iter().all(|&v| v == 0.0));
    }

    #[test]
    fn compose_matches_pointwise_application() {
        use rand::{Rng, SeedableRng};
        let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(11);
        let random_affine = |rng: &mut rand_chacha::ChaCha8Rng| {
            let l = DMatrix::from_fn(3, 3, |r, c| {
                (if r == c { 1.0 } else { 0.0 }) + rng.random_range(-0.4..0.4)
            });
            let t = DVector::from_fn(3, |_, _| rng.random_range(-20.0..20.0));
            AffineTransform::new(l, t).unwrap()
        };
        let a = random_affine(&mut rng);
        let b = random_affine(&mut rng);
        let ab = a.compose(&b).unwrap();
        for _ in 0..100 {
            let x = DVector::from_fn(3, |_, _| rng.random_range(-100.0..100.0));
            let direct = a.apply(&b.apply(&x));
            let composed = ab.apply(&x);
            assert!((direct - composed).amax() < 1e-10);
        }
    }
}
