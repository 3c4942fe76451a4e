//! Dense polyaffine transformations estimated from paired segmentation centroids.
//!
//! Centroids of paired segmentation labels drive a global (background) affine
//! fit and one local affine fit per Delaunay neighbourhood. The local affines
//! are fused in the log-Euclidean framework into a stationary velocity field
//! whose exponential, composed after the background affine, gives a dense
//! diffeomorphic transformation.

pub mod affine;
pub mod error;
pub mod evaluation;
pub mod features;
pub mod graph;
pub mod grid;
mod linalg;
pub mod parallel;
pub mod polyaffine;
pub mod synth;
pub mod volume;

pub use error::{Error, Result, Stage};
