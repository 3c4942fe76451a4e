use rayon::prelude::*;

use crate::error::{Error, Result};
use crate::grid::Grid;
use crate::volume::{Volume, VolumeData};

/// A world-space (mm) 3-vector per voxel of a grid.
#[derive(Debug, Clone, PartialEq)]
pub struct VectorField {
    grid: Grid,
    vectors: Vec<[f64; 3]>,
}

impl VectorField {
    pub fn new(grid: Grid, vectors: Vec<[f64; 3]>) -> Result<Self> {
        if vectors.len() != grid.len() {
            return Err(Error::DimensionMismatch {
                expected: grid.len(),
                found: vectors.len(),
            });
        }
        if let Some(l) = vectors.iter().position(|v| v.iter().any(|c| !c.is_finite())) {
            return Err(Error::NonFinite(format!("vector at voxel {:?}", grid.index_of(l))));
        }
        Ok(Self { grid, vectors })
    }

    pub fn zeros(grid: Grid) -> Self {
        let vectors = vec![[0.0; 3]; grid.len()];
        Self { grid, vectors }
    }

    /// Evaluates `f(index, world position)` at every voxel, in parallel over slices.
    pub(crate) fn from_voxels(grid: Grid, f: impl Fn([usize; 3], [f64; 3]) -> [f64; 3] + Sync) -> Self {
        let mut vectors = vec![[0.0; 3]; grid.len()];
        let [nx, ny, _] = grid.dims();
        vectors
            .par_chunks_mut(nx * ny)
            .enumerate()
            .for_each(|(k, slice)| {
                for (l, out) in slice.iter_mut().enumerate() {
                    let (i, j) = (l % nx, l / nx);
                    *out = f([i, j, k], grid.voxel_world(i, j, k));
                }
            });
        Self { grid, vectors }
    }

    /// Evaluates `f` at the world position of every voxel.
    pub fn from_fn(grid: Grid, f: impl Fn([f64; 3]) -> [f64; 3] + Sync) -> Result<Self> {
        let field = Self::from_voxels(grid, |_, x| f(x));
        field.check_finite()?;
        Ok(field)
    }

    pub(crate) fn check_finite(&self) -> Result<()> {
        match self.vectors.iter().position(|v| v.iter().any(|c| !c.is_finite())) {
            None => Ok(()),
            Some(l) => Err(Error::NonFinite(format!(
                "vector at voxel {:?}",
                self.grid.index_of(l)
            ))),
        }
    }

    pub fn grid(&self) -> &Grid {
        &self.grid
    }

    pub fn vectors(&self) -> &[[f64; 3]] {
        &self.vectors
    }

    pub fn get(&self, linear: usize) -> [f64; 3] {
        self.vectors[linear]
    }

    /// Trilinear sample at a continuous voxel index, clamped at the edges.
    #[inline]
    pub fn sample_index(&self, c: [f64; 3]) -> [f64; 3] {
        self.grid.trilinear_stencil(c).interpolate(|l| self.vectors[l])
    }

    /// Trilinear sample at a world position; the flag is false when the
    /// position is outside the grid and the value was clamped.
    #[inline]
    pub fn sample(&self, x: [f64; 3]) -> ([f64; 3], bool) {
        let c = self.grid.world_to_index(x);
        (self.sample_index(c), self.grid.contains_index(c))
    }

    /// Largest vector norm.
    pub fn max_norm(&self) -> f64 {
        self.vectors
            .iter()
            .map(|v| (v[0] * v[0] + v[1] * v[1] + v[2] * v[2]).sqrt())
            .fold(0.0, f64::max)
    }

    pub fn scaled(&self, s: f64) -> Self {
        Self {
            grid: self.grid.clone(),
            vectors: self.vectors.iter().map(|v| v.map(|c| c * s)).collect(),
        }
    }

    /// Trilinear resampling onto another grid (edge-clamped).
    pub fn resampled(&self, target: &Grid) -> Self {
        Self::from_voxels(target.clone(), |_, x| self.sample(x).0)
    }

    /// Three-channel single-precision volume with the given NIfTI intent.
    pub fn to_volume(&self, intent_code: i16) -> Volume {
        let n = self.vectors.len();
        let mut data = vec![0.0f32; 3 * n];
        for (l, v) in self.vectors.iter().enumerate() {
            for c in 0..3 {
                data[l + c * n] = v[c] as f32;
            }
        }
        Volume::new(self.grid.clone(), 3, VolumeData::F32(data))
            .expect("field length matches its grid")
            .with_intent(intent_code)
    }

    pub fn from_volume(volume: &Volume) -> Result<Self> {
        if volume.channels() != 3 {
            return Err(Error::DimensionalityUnsupported(format!(
                "vector field needs 3 channels, volume has {}",
                volume.channels()
            )));
        }
        let n = volume.grid().len();
        let vectors = (0..n)
            .map(|l| [volume.value(l, 0), volume.value(l, 1), volume.value(l, 2)])
            .collect();
        Self::new(volume.grid().clone(), vectors)
    }
}
