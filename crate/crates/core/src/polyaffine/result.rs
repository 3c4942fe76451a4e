use serde::{Deserialize, Serialize};

use super::{
    build_svf, estimate_local_transforms, exponentiate, sigma_heuristic, Fallback, LocalTransformSet,
    VectorField, WeightConfig, DEFAULT_BACKGROUND_WEIGHT, DEFAULT_SIGMA, DEFAULT_STEPS,
    DEFAULT_SVF_DOWNSAMPLE,
};
use crate::affine::{fit_affine_lls, AffineTransform, FitModel};
use crate::error::{Error, Result, Stage, StageExt};
use crate::features::{extract_centroids, pair_point_sets, LabelSelection, LabelVolume};
use crate::graph::NeighborhoodGraph;
use crate::grid::Grid;
use crate::parallel::with_threads;
use crate::volume::SpatialTransform;

/// Transformation model of an estimate.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Model {
    /// Background affine only.
    Affine,
    /// Polyaffine with rigid local transformations.
    Rigid,
    /// Polyaffine with translation-only local transformations.
    Translation,
    /// Polyaffine with affine local transformations.
    Polyaffine,
}

impl Model {
    /// Local fit model, or `None` for the background-only model.
    pub fn local_model(self) -> Option<FitModel> {
        match self {
            Model::Affine => None,
            Model::Rigid => Some(FitModel::Rigid),
            Model::Translation => Some(FitModel::Translation),
            Model::Polyaffine => Some(FitModel::Affine),
        }
    }
}

impl std::str::FromStr for Model {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "affine" => Ok(Model::Affine),
            "rigid" => Ok(Model::Rigid),
            "translation" => Ok(Model::Translation),
            "polyaffine" => Ok(Model::Polyaffine),
            other => Err(Error::InvalidConfig(format!("unknown model '{other}'"))),
        }
    }
}

/// Kernel width: fixed in mm, or derived from the reference points.
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum Sigma {
    Fixed(f64),
    Auto,
}

impl std::str::FromStr for Sigma {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        if s == "auto" {
            return Ok(Sigma::Auto);
        }
        match s.parse::<f64>() {
            Ok(v) if v > 0.0 && v.is_finite() => Ok(Sigma::Fixed(v)),
            _ => Err(Error::InvalidConfig(format!(
                "sigma must be a positive number of mm or 'auto', got '{s}'"
            ))),
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct EstimateParams {
    pub model: Model,
    pub sigma: Sigma,
    pub background_weight: f64,
    pub steps: u32,
    pub svf_downsample: usize,
    /// Worker count; `None` uses the global pool. Results do not depend on it.
    pub threads: Option<usize>,
}

impl Default for EstimateParams {
    fn default() -> Self {
        Self {
            model: Model::Polyaffine,
            sigma: Sigma::Fixed(DEFAULT_SIGMA),
            background_weight: DEFAULT_BACKGROUND_WEIGHT,
            steps: DEFAULT_STEPS,
            svf_downsample: DEFAULT_SVF_DOWNSAMPLE,
            threads: None,
        }
    }
}

/// Parameters and bookkeeping of an estimate, persisted next to the fields.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ResultMetadata {
    pub model: Model,
    /// Kernel width actually used (mm); absent for the background-only model.
    pub sigma: Option<f64>,
    pub sigma_auto: bool,
    pub background_weight: f64,
    pub steps: u32,
    pub svf_downsample: usize,
    pub reference_labels: usize,
    pub moving_labels: usize,
    /// Labels present in both volumes, in increasing order.
    pub labels: Vec<u32>,
    pub fallbacks: Vec<Fallback>,
    pub triangulation_jittered: bool,
}

/// The dense map `T(x) = exp(V)(A_B x)` from reference to moving world space.
#[derive(Debug, Clone, PartialEq)]
pub struct PolyaffineResult {
    pub background: AffineTransform,
    /// Stationary velocity field on the downsampled reference grid.
    pub svf: VectorField,
    /// `exp(V) - Id` on the reference grid.
    pub displacement: VectorField,
    /// `T - Id` on the reference grid.
    pub full_displacement: VectorField,
    pub metadata: ResultMetadata,
}

impl PolyaffineResult {
    /// Assembles a result from its background and velocity field; the
    /// displacements are computed on `grid`.
    pub fn from_svf(
        background: AffineTransform,
        svf: VectorField,
        grid: &Grid,
        metadata: ResultMetadata,
    ) -> Result<Self> {
        let coarse = exponentiate(&svf, metadata.steps).stage(Stage::Exponentiation)?;
        let displacement = coarse.resampled(grid);
        let full_displacement = compose_full(&background, &displacement);
        full_displacement.check_finite().stage(Stage::Composition)?;
        Ok(Self {
            background,
            svf,
            displacement,
            full_displacement,
            metadata,
        })
    }

    /// A result whose map is the affine alone.
    pub fn from_affine(background: AffineTransform, grid: &Grid, metadata: ResultMetadata) -> Result<Self> {
        let svf = VectorField::zeros(grid.downsample(metadata.svf_downsample)?);
        let displacement = VectorField::zeros(grid.clone());
        let full_displacement = compose_full(&background, &displacement);
        full_displacement.check_finite().stage(Stage::Composition)?;
        Ok(Self {
            background,
            svf,
            displacement,
            full_displacement,
            metadata,
        })
    }

    pub fn grid(&self) -> &Grid {
        self.full_displacement.grid()
    }
}

/// `T(x) - x = A_B x + D(A_B x) - x` at every voxel of the displacement grid.
fn compose_full(background: &AffineTransform, displacement: &VectorField) -> VectorField {
    VectorField::from_voxels(displacement.grid().clone(), |_, x| {
        let y = background.apply3(x);
        let (d, _) = displacement.sample(y);
        [y[0] + d[0] - x[0], y[1] + d[1] - x[1], y[2] + d[2] - x[2]]
    })
}

/// Evaluates `T(x) = x + full_displacement(x)`; the flag is false when `x`
/// lies outside the grid and the displacement was clamped.
pub fn full_transform_at(result: &PolyaffineResult, x: [f64; 3]) -> ([f64; 3], bool) {
    let (d, inside) = result.full_displacement.sample(x);
    ([x[0] + d[0], x[1] + d[1], x[2] + d[2]], inside)
}

impl SpatialTransform for PolyaffineResult {
    fn map_point(&self, x: [f64; 3]) -> ([f64; 3], bool) {
        full_transform_at(self, x)
    }
}

/// Inverse map `A_B^{-1} ∘ exp(-V) = exp(W) ∘ A_B^{-1}` with
/// `W(z) = -L_B^{-1} V(A_B z)`, with displacements on `grid`.
pub fn invert_transform(result: &PolyaffineResult, grid: &Grid) -> Result<PolyaffineResult> {
    let background = result.background.invert().stage(Stage::Composition)?;
    let (lin, _) = result.background.to_matrix3();
    let inv_lin = lin.try_inverse().ok_or(Error::Singular(0.0)).stage(Stage::Composition)?;
    let svf_grid = grid.downsample(result.metadata.svf_downsample)?;
    let svf = &result.svf;
    let bg = &result.background;
    let w = VectorField::from_voxels(svf_grid, |_, z| {
        let (v, _) = svf.sample(bg.apply3(z));
        let u = -(inv_lin * nalgebra::Vector3::from(v));
        [u.x, u.y, u.z]
    });
    PolyaffineResult::from_svf(background, w, grid, result.metadata.clone())
}

/// Runs the full estimation pipeline from two label volumes.
pub fn estimate_polyaffine(
    reference: &LabelVolume,
    moving: &LabelVolume,
    selection: &LabelSelection,
    params: &EstimateParams,
    graph: Option<&NeighborhoodGraph>,
) -> Result<PolyaffineResult> {
    estimate_polyaffine_with_graph(reference, moving, selection, params, graph).map(|(r, _)| r)
}

/// Like [`estimate_polyaffine`], also returning the neighborhood graph used
/// (absent for the background-only model).
pub fn estimate_polyaffine_with_graph(
    reference: &LabelVolume,
    moving: &LabelVolume,
    selection: &LabelSelection,
    params: &EstimateParams,
    graph: Option<&NeighborhoodGraph>,
) -> Result<(PolyaffineResult, Option<NeighborhoodGraph>)> {
    with_threads(params.threads, || estimate(reference, moving, selection, params, graph))?
}

fn estimate(
    reference: &LabelVolume,
    moving: &LabelVolume,
    selection: &LabelSelection,
    params: &EstimateParams,
    graph: Option<&NeighborhoodGraph>,
) -> Result<(PolyaffineResult, Option<NeighborhoodGraph>)> {
    if params.svf_downsample == 0 {
        return Err(Error::InvalidConfig("svf downsample factor must be at least 1".into()));
    }
    let x_all = extract_centroids(reference, selection).stage(Stage::Centroids)?;
    let y_all = extract_centroids(moving, selection).stage(Stage::Centroids)?;
    let (x, y) = pair_point_sets(&x_all, &y_all).stage(Stage::Pairing)?;
    let background = fit_affine_lls(&x, &y).stage(Stage::BackgroundAffine)?;

    let mut metadata = ResultMetadata {
        model: params.model,
        sigma: None,
        sigma_auto: params.sigma == Sigma::Auto,
        background_weight: params.background_weight,
        steps: params.steps,
        svf_downsample: params.svf_downsample,
        reference_labels: x_all.len(),
        moving_labels: y_all.len(),
        labels: x.labels().to_vec(),
        fallbacks: Vec::new(),
        triangulation_jittered: false,
    };
    let grid = reference.grid();
    let Some(local_model) = params.model.local_model() else {
        return Ok((PolyaffineResult::from_affine(background, grid, metadata)?, None));
    };

    let x_bg = x.transformed(&background).stage(Stage::BackgroundAffine)?;
    let graph = match graph {
        Some(g) => g.with_points(&x).stage(Stage::Triangulation)?,
        None => NeighborhoodGraph::delaunay(&x).stage(Stage::Triangulation)?,
    };
    let locals: LocalTransformSet =
        estimate_local_transforms(&graph, &x_bg, &y, local_model).stage(Stage::LocalFits)?;

    let sigma = match params.sigma {
        Sigma::Fixed(s) => s,
        Sigma::Auto => sigma_heuristic(&x).stage(Stage::Fusion)?,
    };
    let cfg = WeightConfig::new(sigma, params.background_weight).stage(Stage::Fusion)?;
    let svf_grid = grid.downsample(params.svf_downsample).stage(Stage::Fusion)?;
    let svf = build_svf(&locals, &cfg, &svf_grid).stage(Stage::Fusion)?;

    metadata.sigma = Some(sigma);
    metadata.fallbacks = locals.fallbacks().to_vec();
    metadata.triangulation_jittered = graph.jittered();
    Ok((PolyaffineResult::from_svf(background, svf, grid, metadata)?, Some(graph)))
}

#[cfg(test)]
mod tests {
    use super::*;
    use nalgebra::{DMatrix, DVector};

    fn metadata(model: Model) -> ResultMetadata {
        ResultMetadata {
            model,
            sigma: Some(20.0),
            sigma_auto: false,
            background_weight: 1e-5,
            steps: 7,
            svf_downsample: 2,
            reference_labels: 0,
            moving_labels: 0,
            labels: vec![],
            fallbacks: vec![],
            triangulation_jittered: false,
        }
    }

    fn affine() -> AffineTransform {
        AffineTransform::new(
            DMatrix::from_row_slice(3, 3, &[1.05, 0.05, 0.0, -0.03, 0.97, 0.04, 0.02, 0.0, 1.02]),
            DVector::from_vec(vec![2.0, -1.5, 0.5]),
        )
        .unwrap()
    }

    #[test]
    fn identity_result_is_identity() {
        let g = Grid::centred([10, 9, 8], 2.0).unwrap();
        let r = PolyaffineResult::from_affine(AffineTransform::identity(3), &g, metadata(Model::Affine)).unwrap();
        let (y, inside) = full_transform_at(&r, [1.3, -2.2, 0.7]);
        assert!(inside);
        assert_eq!(y, [1.3, -2.2, 0.7]);
    }

    #[test]
    fn affine_result_reproduces_the_affine() {
        let g = Grid::centred([10, 9, 8], 2.0).unwrap();
        let a = affine();
        let r = PolyaffineResult::from_affine(a.clone(), &g, metadata(Model::Affine)).unwrap();
        for x in [[1.3, -2.2, 0.7], [-5.0, 4.0, 3.0]] {
            let (y, _) = full_transform_at(&r, x);
            let e = a.apply3(x);
            for c in 0..3 {
                assert!((y[c] - e[c]).abs() < 1e-10);
            }
        }
    }

    #[test]
    fn inverse_of_affine_result_is_the_inverse_affine() {
        let g = Grid::centred([16, 16, 16], 2.0).unwrap();
        let r = PolyaffineResult::from_affine(affine(), &g, metadata(Model::Affine)).unwrap();
        let inv = invert_transform(&r, &g).unwrap();
        for k in 3..13 {
            for j in 3..13 {
                for i in 3..13 {
                    let x = g.voxel_world(i, j, k);
                    let (y, _) = full_transform_at(&r, x);
                    let (z, _) = full_transform_at(&inv, y);
                    for c in 0..3 {
                        assert!((z[c] - x[c]).abs() < 1e-9);
                    }
                }
            }
        }
    }

    #[test]
    fn parsing_models_and_sigma() {
        assert_eq!("rigid".parse::<Model>().unwrap(), Model::Rigid);
        assert!("spline".parse::<Model>().is_err());
        assert_eq!("auto".parse::<Sigma>().unwrap(), Sigma::Auto);
        assert_eq!("12.5".parse::<Sigma>().unwrap(), Sigma::Fixed(12.5));
        assert!("-1".parse::<Sigma>().is_err());
    }
}
