use rayon::prelude::*;

use super::{Volume, VolumeData};
use crate::affine::AffineTransform;
use crate::error::{Error, Result};
use crate::grid::Grid;

/// A map from target (reference) world space to source (moving) world space.
pub trait SpatialTransform: Sync {
    /// Returns the mapped point and whether it was computed inside the
    /// transform's domain (false means a clamped extrapolation was used).
    fn map_point(&self, x: [f64; 3]) -> ([f64; 3], bool);
}

impl SpatialTransform for AffineTransform {
    fn map_point(&self, x: [f64; 3]) -> ([f64; 3], bool) {
        (self.apply3(x), true)
    }
}

impl<T: SpatialTransform + ?Sized> SpatialTransform for &T {
    fn map_point(&self, x: [f64; 3]) -> ([f64; 3], bool) {
        (**self).map_point(x)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Interpolation {
    Nearest,
    Trilinear,
}

impl std::str::FromStr for Interpolation {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "nearest" => Ok(Interpolation::Nearest),
            "trilinear" | "linear" => Ok(Interpolation::Trilinear),
            other => Err(Error::InvalidConfig(format!("unknown interpolation '{other}'"))),
        }
    }
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, serde::Serialize)]
pub struct ResampleReport {
    pub voxels: usize,
    /// Target voxels whose value came from clamped extrapolation, either in
    /// the transform or in the moving volume.
    pub out_of_domain: usize,
}

/// Resamples `moving` onto `target`: each output voxel at world position `x`
/// takes the moving value at `transform(x)`, in a single interpolation.
pub fn resample(
    moving: &Volume,
    transform: &dyn SpatialTransform,
    target: &Grid,
    interpolation: Interpolation,
) -> Result<(Volume, ResampleReport)> {
    if interpolation == Interpolation::Trilinear && moving.element_type().is_integer() {
        return Err(Error::InterpolationMismatch);
    }
    let src = moving.grid();
    let n = target.len();
    let slice = target.slice_len();

    // Continuous source index per target voxel, plus an in-domain flag.
    let mut coords = vec![([0.0f64; 3], true); n];
    coords
        .par_chunks_mut(slice)
        .enumerate()
        .for_each(|(k, chunk)| {
            for (l, out) in chunk.iter_mut().enumerate() {
                let [i, j, _] = target.index_of(l);
                let x = target.voxel_world(i, j, k);
                let (y, ok) = transform.map_point(x);
                let c = src.world_to_index(y);
                *out = (c, ok && src.contains_index(c));
            }
        });
    let report = ResampleReport {
        voxels: n,
        out_of_domain: coords.iter().filter(|(_, ok)| !ok).count(),
    };

    let channels = moving.channels();
    let src_len = src.len();
    let data = match interpolation {
        Interpolation::Nearest => {
            let nearest: Vec<usize> = coords.par_iter().map(|(c, _)| src.nearest_clamped(*c)).collect();
            let indices: Vec<usize> = (0..channels)
                .flat_map(|ch| nearest.iter().map(move |&i| i + ch * src_len))
                .collect();
            moving.data().gather(&indices)
        }
        Interpolation::Trilinear => {
            let values: Vec<f64> = (0..channels)
                .flat_map(|ch| {
                    coords
                        .par_iter()
                        .map(|(c, _)| {
                            let s = src.trilinear_stencil(*c);
                            s.interpolate(|i| [moving.data().get(i + ch * src_len)])[0]
                        })
                        .collect::<Vec<f64>>()
                })
                .collect();
            match moving.data() {
                VolumeData::F32(_) => VolumeData::F32(values.into_iter().map(|v| v as f32).collect()),
                _ => VolumeData::F64(values),
            }
        }
    };
    let out = Volume::new(target.clone(), channels, data)?.with_intent(moving.intent_code());
    Ok((out, report))
}
