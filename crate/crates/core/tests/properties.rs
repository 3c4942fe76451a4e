use nalgebra::{Matrix3, Rotation3, Unit, Vector3};
use polaffini::affine::{fit_affine_lls, matrix_exp, matrix_log, AffineTransform, PointSet};
use polaffini::evaluation::dice;
use polaffini::features::{LabelSelection, LabelVolume};
use polaffini::grid::Grid;
use polaffini::polyaffine::{exponentiate, VectorField};
use proptest::prelude::*;

fn affine_strategy() -> impl Strategy<Value = AffineTransform> {
    (
        prop::array::uniform3(-1.0f64..1.0),
        0.0f64..2.5,
        prop::array::uniform3(0.8f64..1.25),
        prop::array::uniform3(-30.0f64..30.0),
    )
        .prop_filter("axis must be non-zero", |(axis, ..)| axis.iter().map(|a| a * a).sum::<f64>() > 1e-3)
        .prop_map(|(axis, angle, scale, t)| {
            let r = Rotation3::from_axis_angle(&Unit::new_normalize(Vector3::from(axis)), angle);
            let l = r.matrix() * Matrix3::from_diagonal(&Vector3::from(scale));
            AffineTransform::from_matrix3(&l, &Vector3::from(t)).unwrap()
        })
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(64))]

    #[test]
    fn log_then_exp_is_identity(a in affine_strategy()) {
        let back = matrix_exp(&matrix_log(&a).unwrap());
        prop_assert!(back.max_abs_diff(&a) <= 1e-9 * (1.0 + a.homogeneous().norm()));
    }

    #[test]
    fn near_identity_rotations_have_small_logs(
        axis in prop::array::uniform3(0.1f64..1.0),
        angle in 0.0f64..1e-12,
    ) {
        let r = Rotation3::from_axis_angle(&Unit::new_normalize(Vector3::from(axis)), angle);
        let a = AffineTransform::from_matrix3(r.matrix(), &Vector3::zeros()).unwrap();
        prop_assert!(matrix_log(&a).unwrap().frobenius_norm() <= 1e-11);
    }

    #[test]
    fn half_log_squared_is_the_transform(a in affine_strategy()) {
        let half = matrix_exp(&matrix_log(&a).unwrap().scale(0.5));
        prop_assert!(half.compose(&half).unwrap().max_abs_diff(&a) <= 1e-8 * (1.0 + a.homogeneous().norm()));
    }

    #[test]
    fn lls_fit_recovers_generator(
        a in affine_strategy(),
        pts in prop::collection::vec(prop::array::uniform3(-60.0f64..60.0), 8..30),
    ) {
        let x = PointSet::from_arrays((1..=pts.len() as u32).collect(), &pts).unwrap();
        let y = x.transformed(&a).unwrap();
        if let Ok(fit) = fit_affine_lls(&x, &y) {
            prop_assert!(fit.max_abs_diff(&a) <= 1e-6);
        }
    }

    #[test]
    fn dice_is_symmetric_and_bounded(
        a in prop::collection::vec(0u32..5, 216),
        b in prop::collection::vec(0u32..5, 216),
    ) {
        let grid = Grid::isotropic([6, 6, 6], 1.0, [0.0; 3]).unwrap();
        let va = LabelVolume::new(grid.clone(), a).unwrap();
        let vb = LabelVolume::new(grid, b).unwrap();
        let sel = LabelSelection::all();
        let (ab, ba) = (dice(&va, &vb, &sel).unwrap(), dice(&vb, &va, &sel).unwrap());
        prop_assert_eq!(&ab.per_label, &ba.per_label);
        prop_assert!(ab.per_label.values().all(|d| (0.0..=1.0).contains(d)));
        let self_dice = dice(&va, &va, &sel).unwrap();
        prop_assert!(self_dice.per_label.values().all(|&d| d == 1.0));
    }

    #[test]
    fn constant_velocity_exponentiates_to_translation(v in prop::array::uniform3(-3.0f64..3.0), steps in 1u32..10) {
        let grid = Grid::isotropic([8, 8, 8], 1.5, [0.0; 3]).unwrap();
        let field = VectorField::new(grid.clone(), vec![v; grid.len()]).unwrap();
        let d = exponentiate(&field, steps).unwrap();
        for u in d.vectors() {
            for c in 0..3 {
                prop_assert!((u[c] - v[c]).abs() <= 1e-12);
            }
        }
    }
}
