//! Synthetic segmentation pairs with known ground-truth transformations.
//!
//! The reference is a Voronoi partition of random seed points inside an
//! ellipsoid; the moving volume is the reference resampled (nearest neighbor)
//! through the inverse of the ground-truth map.

use nalgebra::{DMatrix, DVector, Matrix3, Vector3};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::affine::{AffineTransform, FitModel, LogAffine};
use crate::error::{Error, Result};
use crate::features::LabelVolume;
use crate::grid::Grid;
use crate::polyaffine::{
    build_svf, invert_transform, LocalTransformSet, Model, PolyaffineResult, ResultMetadata, VectorField,
    WeightConfig, DEFAULT_BACKGROUND_WEIGHT, DEFAULT_SIGMA, DEFAULT_STEPS, DEFAULT_SVF_DOWNSAMPLE,
};
use crate::volume::{resample, Interpolation, SpatialTransform, Volume};

/// Minimum voxel count of every generated region.
pub const MIN_REGION_VOXELS: usize = 27;
const MAX_ATTEMPTS: u64 = 16;
/// Semi-axes of the labelled ellipsoid, as a fraction of the grid extent.
const ELLIPSOID_FRACTION: f64 = 0.4;
const WARP_STREAM: u64 = 1 << 32;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case", tag = "kind")]
pub enum Warp {
    Identity,
    Affine {
        linear: [[f64; 3]; 3],
        translation: [f64; 3],
    },
    /// Gaussian-weighted fusion of `anchors` random local log-affines whose
    /// linear parts have spectral norm `magnitude` and whose velocity at the
    /// anchor is up to `magnitude` times the kernel width.
    Polyaffine { anchors: usize, magnitude: f64 },
    /// Displacement `amplitude * sin(2π x / period)` along x, in mm.
    SinusoidalFold { amplitude: f64, period: f64 },
}

impl Warp {
    pub fn affine(a: &AffineTransform) -> Self {
        let (l, t) = a.to_matrix3();
        Warp::Affine {
            linear: std::array::from_fn(|r| std::array::from_fn(|c| l[(r, c)])),
            translation: [t.x, t.y, t.z],
        }
    }

    pub fn translation(t: [f64; 3]) -> Self {
        Warp::Affine {
            linear: [[1.0, 0.0, 0.0], [0.0, 1.0, 0.0], [0.0, 0.0, 1.0]],
            translation: t,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SynthSpec {
    pub seed: u64,
    pub n_regions: usize,
    pub dims: [usize; 3],
    /// Isotropic voxel size in mm.
    pub spacing: f64,
    pub warp: Warp,
}

impl SynthSpec {
    pub fn validate(&self) -> Result<()> {
        if self.n_regions < 5 {
            return Err(Error::InvalidConfig(format!(
                "at least 5 regions are required, got {}",
                self.n_regions
            )));
        }
        if self.dims.iter().any(|&n| n < 3) || !(self.spacing > 0.0) {
            return Err(Error::InvalidConfig("grid must be at least 3 voxels per axis with positive spacing".into()));
        }
        match &self.warp {
            Warp::Polyaffine { anchors, magnitude } => {
                if *anchors == 0 || !(*magnitude > 0.0 && *magnitude <= 0.5) {
                    return Err(Error::InvalidConfig(
                        "polyaffine warp needs at least one anchor and magnitude in (0, 0.5]".into(),
                    ));
                }
            }
            Warp::SinusoidalFold { period, amplitude } => {
                if !(*period > 0.0) || !amplitude.is_finite() {
                    return Err(Error::InvalidConfig("fold needs a positive period".into()));
                }
            }
            Warp::Affine { .. } => {
                self.affine_warp()?;
            }
            Warp::Identity => {}
        }
        Ok(())
    }

    fn affine_warp(&self) -> Result<AffineTransform> {
        match &self.warp {
            Warp::Affine { linear, translation } => AffineTransform::from_matrix3(
                &Matrix3::from_fn(|r, c| linear[r][c]),
                &Vector3::from(*translation),
            ),
            _ => Ok(AffineTransform::identity(3)),
        }
    }

    pub fn grid(&self) -> Result<Grid> {
        Grid::centred(self.dims, self.spacing)
    }
}

/// The known map behind a synthetic pair.
#[derive(Debug, Clone)]
pub enum GroundTruth {
    /// Reference-to-moving affine map.
    Affine(AffineTransform),
    /// Reference-to-moving dense map.
    Polyaffine(PolyaffineResult),
    /// Non-invertible fold: the moving volume samples the reference at
    /// `y + displacement(y)`, so this is the moving-to-reference pullback.
    Fold(VectorField),
}

impl GroundTruth {
    /// Displacement of the ground-truth map on `grid`.
    pub fn displacement_on(&self, grid: &Grid) -> VectorField {
        let f = |x: [f64; 3]| {
            let (y, _) = self.map_point(x);
            [y[0] - x[0], y[1] - x[1], y[2] - x[2]]
        };
        VectorField::from_fn(grid.clone(), f).expect("ground truth is finite")
    }
}

impl SpatialTransform for GroundTruth {
    fn map_point(&self, x: [f64; 3]) -> ([f64; 3], bool) {
        match self {
            GroundTruth::Affine(a) => a.map_point(x),
            GroundTruth::Polyaffine(r) => r.map_point(x),
            GroundTruth::Fold(u) => {
                let (d, inside) = u.sample(x);
                ([x[0] + d[0], x[1] + d[1], x[2] + d[2]], inside)
            }
        }
    }
}

#[derive(Debug, Clone)]
pub struct SynthPair {
    pub reference: LabelVolume,
    pub moving: LabelVolume,
    pub ground_truth: GroundTruth,
}

fn rng_for(seed: u64, stream: u64) -> ChaCha8Rng {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(stream);
    rng
}

/// Uniform point inside the ellipsoid centred at the origin.
fn point_in_ellipsoid(rng: &mut ChaCha8Rng, semi: [f64; 3]) -> [f64; 3] {
    loop {
        let u: [f64; 3] = std::array::from_fn(|_| rng.random_range(-1.0..1.0));
        if u.iter().map(|v| v * v).sum::<f64>() <= 1.0 {
            return std::array::from_fn(|a| u[a] * semi[a]);
        }
    }
}

fn semi_axes(grid: &Grid) -> [f64; 3] {
    let dims = grid.dims();
    let spacing = grid.spacing();
    std::array::from_fn(|a| ELLIPSOID_FRACTION * dims[a] as f64 * spacing[a])
}

fn voronoi(grid: &Grid, seeds: &[[f64; 3]], semi: [f64; 3]) -> Vec<u32> {
    let [nx, ny, _] = grid.dims();
    let mut labels = vec![0u32; grid.len()];
    labels.par_chunks_mut(nx * ny).enumerate().for_each(|(k, slice)| {
        for (l, out) in slice.iter_mut().enumerate() {
            let x = grid.voxel_world(l % nx, l / nx, k);
            let r: f64 = (0..3).map(|a| (x[a] / semi[a]).powi(2)).sum();
            if r > 1.0 {
                continue;
            }
            let mut best = (f64::INFINITY, 0);
            for (s, p) in seeds.iter().enumerate() {
                let d = (0..3).map(|a| (x[a] - p[a]).powi(2)).sum::<f64>();
                if d < best.0 {
                    best = (d, s);
                }
            }
            *out = best.1 as u32 + 1;
        }
    });
    labels
}

fn reference_labels(spec: &SynthSpec, grid: &Grid) -> Result<Vec<u32>> {
    let semi = semi_axes(grid);
    let volume = 4.0 / 3.0 * std::f64::consts::PI * semi[0] * semi[1] * semi[2];
    let min_dist = 0.5 * (volume / spec.n_regions as f64).cbrt();
    let voxel_volume = grid.linear().determinant().abs();
    let too_many = Error::InvalidConfig(format!(
        "could not place {} regions of at least {MIN_REGION_VOXELS} voxels on a {:?} grid",
        spec.n_regions, spec.dims
    ));
    if volume / voxel_volume < (MIN_REGION_VOXELS * spec.n_regions) as f64 {
        return Err(too_many);
    }
    for attempt in 0..MAX_ATTEMPTS {
        let mut rng = rng_for(spec.seed, attempt);
        let mut seeds: Vec<[f64; 3]> = Vec::with_capacity(spec.n_regions);
        let mut tries = 0;
        while seeds.len() < spec.n_regions && tries < 100 * spec.n_regions {
            tries += 1;
            let p = point_in_ellipsoid(&mut rng, semi);
            let far = seeds
                .iter()
                .all(|q| (0..3).map(|a| (p[a] - q[a]).powi(2)).sum::<f64>() >= min_dist * min_dist);
            if far {
                seeds.push(p);
            }
        }
        if seeds.len() < spec.n_regions {
            continue;
        }
        let labels = voronoi(grid, &seeds, semi);
        let mut counts = vec![0usize; spec.n_regions + 1];
        for &l in &labels {
            counts[l as usize] += 1;
        }
        if counts[1..].iter().all(|&c| c >= MIN_REGION_VOXELS) {
            return Ok(labels);
        }
    }
    Err(too_many)
}

fn polyaffine_truth(spec: &SynthSpec, grid: &Grid, anchors: usize, magnitude: f64) -> Result<PolyaffineResult> {
    let mut rng = rng_for(spec.seed, WARP_STREAM);
    let semi = semi_axes(grid);
    let sigma = DEFAULT_SIGMA;
    let mut logs = Vec::with_capacity(anchors);
    let mut centers = Vec::with_capacity(anchors);
    for _ in 0..anchors {
        let a = point_in_ellipsoid(&mut rng, semi);
        let b = DMatrix::from_fn(3, 3, |_, _| rng.random_range(-1.0..1.0));
        let norm = crate::linalg::singular_values(b.clone())?.max();
        let linear = b * (magnitude / norm);
        let dir = DVector::from_fn(3, |_, _| rng.random_range(-1.0..1.0));
        let speed = magnitude * sigma * rng.random_range(0.5..1.0);
        let velocity = dir.normalize() * speed;
        let anchor = DVector::from_row_slice(&a);
        let translation = velocity - &linear * &anchor;
        logs.push(LogAffine::new(linear, translation)?);
        centers.push(anchor);
    }
    let locals = LocalTransformSet::from_logs((1..=anchors as u32).collect(), logs, centers, FitModel::Affine)?;
    let cfg = WeightConfig::new(sigma, DEFAULT_BACKGROUND_WEIGHT)?;
    let svf = build_svf(&locals, &cfg, &grid.downsample(DEFAULT_SVF_DOWNSAMPLE)?)?;
    let metadata = ResultMetadata {
        model: Model::Polyaffine,
        sigma: Some(sigma),
        sigma_auto: false,
        background_weight: DEFAULT_BACKGROUND_WEIGHT,
        steps: DEFAULT_STEPS,
        svf_downsample: DEFAULT_SVF_DOWNSAMPLE,
        reference_labels: anchors,
        moving_labels: anchors,
        labels: (1..=anchors as u32).collect(),
        fallbacks: Vec::new(),
        triangulation_jittered: false,
    };
    PolyaffineResult::from_svf(AffineTransform::identity(3), svf, grid, metadata)
}

fn warp_labels(reference: &LabelVolume, pullback: &dyn SpatialTransform) -> Result<LabelVolume> {
    let (moving, _) = resample(&reference.to_volume(), pullback, reference.grid(), Interpolation::Nearest)?;
    LabelVolume::try_from(&moving)
}

/// Generates a reference/moving pair; deterministic given the spec.
pub fn generate(spec: &SynthSpec) -> Result<SynthPair> {
    spec.validate()?;
    let grid = spec.grid()?;
    let reference = LabelVolume::new(grid.clone(), reference_labels(spec, &grid)?)?;
    let (moving, ground_truth) = match &spec.warp {
        Warp::Identity => (reference.clone(), GroundTruth::Affine(AffineTransform::identity(3))),
        Warp::Affine { .. } => {
            let a = spec.affine_warp()?;
            (warp_labels(&reference, &a.invert()?)?, GroundTruth::Affine(a))
        }
        Warp::Polyaffine { anchors, magnitude } => {
            let truth = polyaffine_truth(spec, &grid, *anchors, *magnitude)?;
            let inverse = invert_transform(&truth, &grid)?;
            (warp_labels(&reference, &inverse)?, GroundTruth::Polyaffine(truth))
        }
        Warp::SinusoidalFold { amplitude, period } => {
            let k = 2.0 * std::f64::consts::PI / period;
            let u = VectorField::from_fn(grid.clone(), |x| [amplitude * (k * x[0]).sin(), 0.0, 0.0])?;
            let truth = GroundTruth::Fold(u);
            (warp_labels(&reference, &truth)?, truth)
        }
    };
    Ok(SynthPair {
        reference,
        moving,
        ground_truth,
    })
}

impl SynthPair {
    pub fn reference_volume(&self) -> Volume {
        self.reference.to_volume()
    }

    pub fn moving_volume(&self) -> Volume {
        self.moving.to_volume()
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::evaluation::{displacement_jacobian_report, jacobian_report};
    use crate::features::{extract_centroids, LabelSelection};

    fn spec(warp: Warp) -> SynthSpec {
        SynthSpec {
            seed: 7,
            n_regions: 12,
            dims: [32, 32, 32],
            spacing: 2.0,
            warp,
        }
    }

    #[test]
    fn identity_warp_copies_the_reference() {
        let pair = generate(&spec(Warp::Identity)).unwrap();
        assert_eq!(pair.reference, pair.moving);
        let labels = pair.reference.labels();
        assert_eq!(labels, (1..=12).collect::<Vec<u32>>());
        for l in labels {
            assert!(pair.reference.data().iter().filter(|&&v| v == l).count() >= MIN_REGION_VOXELS);
        }
    }

    #[test]
    fn generation_is_deterministic() {
        let s = spec(Warp::Polyaffine { anchors: 3, magnitude: 0.2 });
        let (a, b) = (generate(&s).unwrap(), generate(&s).unwrap());
        assert_eq!(a.reference, b.reference);
        assert_eq!(a.moving, b.moving);
        let other = generate(&SynthSpec { seed: 8, ..s }).unwrap();
        assert_ne!(a.reference, other.reference);
    }

    #[test]
    fn translation_shifts_centroids() {
        let s = SynthSpec {
            dims: [48, 40, 40],
            spacing: 1.0,
            ..spec(Warp::translation([5.0, 0.0, 0.0]))
        };
        let pair = generate(&s).unwrap();
        let sel = LabelSelection::all();
        let x = extract_centroids(&pair.reference, &sel).unwrap();
        let y = extract_centroids(&pair.moving, &sel).unwrap();
        for (p, q) in x.points().iter().zip(y.points()) {
            let d = q - p;
            assert!((d[0] - 5.0).abs() <= 0.5 && d[1].abs() <= 0.5 && d[2].abs() <= 0.5, "{d}");
        }
    }

    #[test]
    fn polyaffine_ground_truth_has_no_folds() {
        let s = SynthSpec {
            n_regions: 20,
            dims: [48, 48, 48],
            ..spec(Warp::Polyaffine { anchors: 8, magnitude: 0.2 })
        };
        let pair = generate(&s).unwrap();
        let GroundTruth::Polyaffine(truth) = &pair.ground_truth else {
            panic!("expected a dense ground truth");
        };
        assert!(truth.full_displacement.max_norm() > 1.0);
        assert_eq!(jacobian_report(truth).unwrap().negative_count, 0);
    }

    #[test]
    fn strong_fold_has_negative_jacobians() {
        let s = spec(Warp::SinusoidalFold { amplitude: 8.0, period: 16.0 });
        let pair = generate(&s).unwrap();
        let u = pair.ground_truth.displacement_on(pair.reference.grid());
        assert!(displacement_jacobian_report(&u).unwrap().negative_count > 0);
    }

    #[test]
    fn invalid_specs_are_rejected() {
        assert!(generate(&SynthSpec { n_regions: 4, ..spec(Warp::Identity) }).is_err());
        assert!(generate(&spec(Warp::Polyaffine { anchors: 8, magnitude: 0.9 })).is_err());
        let s = SynthSpec {
            n_regions: 2000,
            dims: [8, 8, 8],
            ..spec(Warp::Identity)
        };
        assert!(generate(&s).is_err());
    }
}
