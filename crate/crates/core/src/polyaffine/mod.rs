//! Fusion of local affine transformations into a dense diffeomorphism.
//!
//! Local fits per neighborhood are mapped to their principal logarithms,
//! blended with Gaussian weight maps into a stationary velocity field `V`,
//! and exponentiated by scaling and squaring. The final map from reference
//! to moving space is `T(x) = exp(V)(A_B x)`, where `A_B` is the background
//! affine.

mod field;
mod io;
mod local;
mod result;
mod svf;

pub use field::VectorField;
pub use io::{
    load_result, save_result, BACKGROUND_FILE, DISPLACEMENT_FILE, FULL_DISPLACEMENT_FILE, PARAMS_FILE,
    SVF_FILE,
};
pub use local::{estimate_local_transforms, sigma_heuristic, Fallback, LocalTransformSet};
pub use result::{
    estimate_polyaffine, estimate_polyaffine_with_graph, full_transform_at, invert_transform, EstimateParams, Model, PolyaffineResult,
    ResultMetadata, Sigma,
};
pub use svf::{
    build_svf, exponentiate, Kernel, WeightConfig, DEFAULT_BACKGROUND_WEIGHT, DEFAULT_SIGMA, DEFAULT_STEPS,
    DEFAULT_SVF_DOWNSAMPLE, WEIGHT_CUTOFF,
};
