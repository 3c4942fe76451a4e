//! Closed-form least-squares fits between paired point sets.

use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};

use super::points::mean;
use super::{AffineTransform, PointSet};
use crate::error::{Error, Result};

/// Ratio of smallest to largest singular value below which a scatter or
/// covariance matrix is treated as singular.
const CONDITION_FLOOR: f64 = 1e-10;

/// Degrees of freedom of a local fit.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum FitModel {
    Affine,
    Rigid,
    Translation,
}

impl FitModel {
    pub fn fit(self, reference: &[&DVector<f64>], moving: &[&DVector<f64>]) -> Result<AffineTransform> {
        match self {
            FitModel::Affine => fit_affine_points(reference, moving),
            FitModel::Rigid => fit_rigid_points(reference, moving),
            FitModel::Translation => fit_translation_points(reference, moving),
        }
    }

    /// Next lower-dof model, used when a neighbourhood is degenerate.
    pub fn fallback(self) -> Option<FitModel> {
        match self {
            FitModel::Affine => Some(FitModel::Rigid),
            FitModel::Rigid => Some(FitModel::Translation),
            FitModel::Translation => None,
        }
    }
}

impl std::str::FromStr for FitModel {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "affine" => Ok(FitModel::Affine),
            "rigid" => Ok(FitModel::Rigid),
            "translation" => Ok(FitModel::Translation),
            other => Err(Error::InvalidConfig(format!("unknown fit model '{other}'"))),
        }
    }
}

fn check_paired(reference: &PointSet, moving: &PointSet) -> Result<()> {
    if reference.labels() != moving.labels() {
        return Err(Error::PairingMismatch(format!(
            "reference has {} labels, moving has {}; label lists differ",
            reference.len(),
            moving.len()
        )));
    }
    if reference.dim() != moving.dim() {
        return Err(Error::DimensionMismatch {
            expected: reference.dim(),
            found: moving.dim(),
        });
    }
    Ok(())
}

fn refs(ps: &PointSet) -> Vec<&DVector<f64>> {
    ps.points().iter().collect()
}

/// Least-squares affine map taking `reference` onto `moving`.
pub fn fit_affine_lls(reference: &PointSet, moving: &PointSet) -> Result<AffineTransform> {
    check_paired(reference, moving)?;
    fit_affine_points(&refs(reference), &refs(moving))
}

/// Least-squares rigid motion (rotation + translation).
pub fn fit_rigid(reference: &PointSet, moving: &PointSet) -> Result<AffineTransform> {
    check_paired(reference, moving)?;
    fit_rigid_points(&refs(reference), &refs(moving))
}

/// Translation between the two means.
pub fn fit_translation(reference: &PointSet, moving: &PointSet) -> Result<AffineTransform> {
    check_paired(reference, moving)?;
    fit_translation_points(&refs(reference), &refs(moving))
}

/// Sum of squared distances between `moving` and the mapped `reference`.
pub fn residual(reference: &PointSet, moving: &PointSet, a: &AffineTransform) -> f64 {
    reference
        .points()
        .iter()
        .zip(moving.points())
        .map(|(x, y)| (y - a.apply(x)).norm_squared())
        .sum()
}

/// Centred copies and means of both point lists.
struct Centred {
    x: Vec<DVector<f64>>,
    y: Vec<DVector<f64>>,
    x_mean: DVector<f64>,
    y_mean: DVector<f64>,
}

fn centre(reference: &[&DVector<f64>], moving: &[&DVector<f64>]) -> Result<Centred> {
    if reference.len() != moving.len() {
        return Err(Error::PairingMismatch(format!(
            "{} reference points, {} moving points",
            reference.len(),
            moving.len()
        )));
    }
    if reference.is_empty() {
        return Err(Error::EmptyPointSet);
    }
    let x_mean = mean(reference.iter().copied());
    let y_mean = mean(moving.iter().copied());
    Ok(Centred {
        x: reference.iter().map(|p| *p - &x_mean).collect(),
        y: moving.iter().map(|p| *p - &y_mean).collect(),
        x_mean,
        y_mean,
    })
}

fn outer_sum(a: &[DVector<f64>], b: &[DVector<f64>]) -> DMatrix<f64> {
    let d = a[0].len();
    let mut s = DMatrix::zeros(d, d);
    for (u, v) in a.iter().zip(b) {
        s.ger(1.0, u, v, 1.0);
    }
    s
}

pub(crate) fn fit_affine_points(
    reference: &[&DVector<f64>],
    moving: &[&DVector<f64>],
) -> Result<AffineTransform> {
    let c = centre(reference, moving)?;
    let d = c.x_mean.len();
    if reference.len() < d + 1 {
        return Err(Error::DegenerateConfiguration(format!(
            "{} points cannot determine a {d}D affine transform",
            reference.len()
        )));
    }
    let sxx = outer_sum(&c.x, &c.x);
    let syx = outer_sum(&c.y, &c.x);
    let sv = crate::linalg::singular_values(sxx.clone())?;
    let (smax, smin) = (sv.max(), sv.min());
    if !(smin > CONDITION_FLOOR * smax) {
        return Err(Error::DegenerateConfiguration(format!(
            "reference scatter matrix is singular (condition ratio {:.3e})",
            if smax > 0.0 { smin / smax } else { 0.0 }
        )));
    }
    // L Sxx = Syx with Sxx symmetric positive definite.
    let chol = sxx.cholesky().ok_or_else(|| {
        Error::DegenerateConfiguration("reference scatter matrix is not positive definite".into())
    })?;
    let linear = chol.solve(&syx.transpose()).transpose();
    let translation = &c.y_mean - &linear * &c.x_mean;
    AffineTransform::new(linear, translation)
        .map_err(|_| Error::DegenerateConfiguration("fitted linear part is singular".into()))
}

pub(crate) fn fit_rigid_points(
    reference: &[&DVector<f64>],
    moving: &[&DVector<f64>],
) -> Result<AffineTransform> {
    let c = centre(reference, moving)?;
    let d = c.x_mean.len();
    let h = outer_sum(&c.y, &c.x);
    let svd = crate::linalg::svd(h, true, true)?;
    let mut sv: Vec<(usize, f64)> = svd.singular_values.iter().copied().enumerate().collect();
    sv.sort_by(|a, b| b.1.total_cmp(&a.1));
    let smax = sv[0].1;
    // Rotation is unique when the cross-covariance has rank >= d - 1.
    if !(smax > 0.0) || !(sv[d - 2].1 > CONDITION_FLOOR * smax) {
        return Err(Error::DegenerateConfiguration(
            "cross-covariance is rank deficient, rotation is not unique".into(),
        ));
    }
    let mut u = svd.u.expect("requested U");
    let v_t = svd.v_t.expect("requested V^T");
    if (&u * &v_t).determinant() < 0.0 {
        let weakest = sv[d - 1].0;
        u.column_mut(weakest).neg_mut();
    }
    let rotation = u * v_t;
    let translation = &c.y_mean - &rotation * &c.x_mean;
    AffineTransform::new(rotation, translation)
}

pub(crate) fn fit_translation_points(
    reference: &[&DVector<f64>],
    moving: &[&DVector<f64>],
) -> Result<AffineTransform> {
    let c = centre(reference, moving)?;
    let d = c.x_mean.len();
    AffineTransform::new(DMatrix::identity(d, d), &c.y_mean - &c.x_mean)
}

#[cfg(test)]
mod tests {
    use super::*;
    use nalgebra::{Rotation3, Unit, Vector3};
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn cloud(rng: &mut ChaCha8Rng, n: usize) -> PointSet {
        let pts: Vec<[f64; 3]> = (0..n)
            .map(|_| {
                [
                    rng.random_range(-50.0..50.0),
                    rng.random_range(-50.0..50.0),
                    rng.random_range(-50.0..50.0),
                ]
            })
            .collect();
        PointSet::from_arrays((1..=n as u32).collect(), &pts).unwrap()
    }

    fn random_rotation(rng: &mut ChaCha8Rng) -> Rotation3<f64> {
        let axis = Unit::new_normalize(Vector3::new(
            rng.random_range(-1.0..1.0),
            rng.random_range(-1.0..1.0),
            rng.random_range(-1.0..1.0),
        ));
        Rotation3::from_axis_angle(&axis, rng.random_range(-3.0..3.0))
    }

    #[test]
    fn identity_fit() {
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let x = cloud(&mut rng, 20);
        let a = fit_affine_lls(&x, &x).unwrap();
        assert!(a.max_abs_diff(&AffineTransform::identity(3)) < 1e-10);
    }

    #[test]
    fn translation_is_recovered_by_affine_fit() {
        let mut rng = ChaCha8Rng::seed_from_u64(2);
        let x = cloud(&mut rng, 20);
        let t = AffineTransform::from_translation(&[3.0, -1.0, 2.0]);
        let a = fit_affine_lls(&x, &x.transformed(&t).unwrap()).unwrap();
        assert!(a.max_abs_diff(&t) < 1e-10);
    }

    #[test]
    fn random_affine_is_recovered_from_ten_points() {
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        let mut checked = 0;
        while checked < 20 {
            let l = DMatrix::from_fn(3, 3, |r, c| {
                (if r == c { 1.0 } else { 0.0 }) + rng.random_range(-0.4..0.4)
            });
            let det = l.determinant();
            if !(0.5..=2.0).contains(&det) {
                continue;
            }
            let gen = AffineTransform::new(l, DVector::from_fn(3, |_, _| rng.random_range(-10.0..10.0)))
                .unwrap();
            let x = cloud(&mut rng, 10);
            let a = fit_affine_lls(&x, &x.transformed(&gen).unwrap()).unwrap();
            assert!(a.max_abs_diff(&gen) < 1e-9);
            checked += 1;
        }
    }

    #[test]
    fn coplanar_points_are_degenerate() {
        let pts: Vec<[f64; 3]> = (0..8).map(|i| [i as f64, (i * i) as f64, 0.0]).collect();
        let x = PointSet::from_arrays((0..8).collect(), &pts).unwrap();
        let err = fit_affine_lls(&x, &x).unwrap_err();
        assert!(matches!(err, Error::DegenerateConfiguration(_)));
    }

    #[test]
    fn mismatched_labels_are_rejected() {
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let x = cloud(&mut rng, 6);
        let y = PointSet::new(
            (10..16).collect(),
            x.points().to_vec(),
        )
        .unwrap();
        assert!(matches!(fit_affine_lls(&x, &y), Err(Error::PairingMismatch(_))));
        assert!(matches!(fit_translation(&x, &y), Err(Error::PairingMismatch(_))));
    }

    #[test]
    fn rigid_motion_is_recovered() {
        let mut rng = ChaCha8Rng::seed_from_u64(7);
        for _ in 0..20 {
            let r = random_rotation(&mut rng);
            let t = Vector3::new(
                rng.random_range(-20.0..20.0),
                rng.random_range(-20.0..20.0),
                rng.random_range(-20.0..20.0),
            );
            let gen = AffineTransform::from_matrix3(r.matrix(), &t).unwrap();
            let x = cloud(&mut rng, 12);
            let a = fit_rigid(&x, &x.transformed(&gen).unwrap()).unwrap();
            assert!(a.max_abs_diff(&gen) < 1e-9);
        }
    }

    #[test]
    fn rigid_fit_of_identity() {
        let mut rng = ChaCha8Rng::seed_from_u64(8);
        let x = cloud(&mut rng, 5);
        let a = fit_rigid(&x, &x).unwrap();
        assert!(a.max_abs_diff(&AffineTransform::identity(3)) < 1e-10);
    }

    #[test]
    fn rigid_fit_of_pure_scaling_matches_rotation_grid_search() {
        let mut rng = ChaCha8Rng::seed_from_u64(9);
        let x = cloud(&mut rng, 15);
        let pre = random_rotation(&mut rng);
        let gen = AffineTransform::from_matrix3(&(pre.matrix() * 2.0), &Vector3::zeros()).unwrap();
        let y = x.transformed(&gen).unwrap();
        let a = fit_rigid(&x, &y).unwrap();
        let l = a.linear();
        assert!((l.transpose() * l - DMatrix::identity(3, 3)).amax() < 1e-10);
        assert!(l.determinant() > 0.0);
        let got = residual(&x, &y, &a);

        // Brute force over a grid of rotation vectors; the translation for a
        // fixed rotation is the difference of means.
        let steps = 24;
        let mut best = f64::INFINITY;
        for i in 0..=steps {
            for j in 0..=steps {
                for k in 0..=steps {
                    let w = Vector3::new(i as f64, j as f64, k as f64) * (2.0 * std::f64::consts::PI / steps as f64)
                        - Vector3::repeat(std::f64::consts::PI);
                    if w.norm() > std::f64::consts::PI {
                        continue;
                    }
                    let r = Rotation3::new(w);
                    let t = Vector3::from_column_slice(y.centroid().as_slice())
                        - r * Vector3::from_column_slice(x.centroid().as_slice());
                    let cand = AffineTransform::from_matrix3(r.matrix(), &t).unwrap();
                    best = best.min(residual(&x, &y, &cand));
                }
            }
        }
        assert!(got <= best + 1e-9 * best);
        assert!((best - got) / best < 0.1);
    }

    #[test]
    fn rigid_fit_of_collinear_points_is_degenerate() {
        let pts: Vec<[f64; 3]> = (0..5).map(|i| [i as f64, 2.0 * i as f64, 0.5 * i as f64]).collect();
        let x = PointSet::from_arrays((0..5).collect(), &pts).unwrap();
        assert!(matches!(fit_rigid(&x, &x), Err(Error::DegenerateConfiguration(_))));
    }

    #[test]
    fn single_pair_translation() {
        let x = PointSet::from_arrays(vec![1], &[[1.0, 2.0, 3.0]]).unwrap();
        let y = PointSet::from_arrays(vec![1], &[[4.0, 4.0, 4.0]]).unwrap();
        let a = fit_translation(&x, &y).unwrap();
        assert_eq!(a.translation().as_slice(), &[3.0, 2.0, 1.0]);
        assert_eq!(a.linear(), &DMatrix::identity(3, 3));
    }

    #[test]
    fn translation_equals_difference_of_means() {
        let mut rng = ChaCha8Rng::seed_from_u64(10);
        let x = cloud(&mut rng, 30);
        let y = cloud(&mut rng, 30);
        let a = fit_translation(&x, &y).unwrap();
        for axis in 0..3 {
            let mx: f64 = x.points().iter().map(|p| p[axis]).sum::<f64>() / 30.0;
            let my: f64 = y.points().iter().map(|p| p[axis]).sum::<f64>() / 30.0;
            assert!((a.translation()[axis] - (my - mx)).abs() < 1e-12);
        }
        let zero = fit_translation(&x, &x).unwrap();
        assert!(zero.translation().amax() < 1e-12);
    }

    #[test]
    fn affine_fit_in_two_dimensions() {
        let pts = [[0.0, 0.0, 0.0], [1.0, 0.0, 0.0], [0.0, 1.0, 0.0], [2.0, 3.0, 0.0]];
        let x = PointSet::new(
            (0..4).collect(),
            pts.iter().map(|p| DVector::from_column_slice(&p[..2])).collect(),
        )
        .unwrap();
        let gen = AffineTransform::new(
            DMatrix::from_row_slice(2, 2, &[1.5, 0.2, -0.3, 0.8]),
            DVector::from_column_slice(&[1.0, -2.0]),
        )
        .unwrap();
        let a = fit_affine_lls(&x, &x.transformed(&gen).unwrap()).unwrap();
        assert!(a.max_abs_diff(&gen) < 1e-12);
    }
}
