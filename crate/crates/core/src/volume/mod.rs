//! Scalar and vector volumes, NIfTI-1 file I/O, and resampling through
//! spatial transformations.

mod nifti;
mod resample;

pub use nifti::{read_volume, write_volume, INTENT_DISPLACEMENT, INTENT_VECTOR};
pub use resample::{resample, Interpolation, ResampleReport, SpatialTransform};

use crate::error::{Error, Result};
use crate::grid::Grid;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ElementType {
    U8,
    I16,
    I32,
    F32,
    F64,
}

impl ElementType {
    pub fn is_integer(self) -> bool {
        matches!(self, ElementType::U8 | ElementType::I16 | ElementType::I32)
    }
}

#[derive(Debug, Clone, PartialEq)]
pub enum VolumeData {
    U8(Vec<u8>),
    I16(Vec<i16>),
    I32(Vec<i32>),
    F32(Vec<f32>),
    F64(Vec<f64>),
}

impl VolumeData {
    pub fn len(&self) -> usize {
        match self {
            VolumeData::U8(v) => v.len(),
            VolumeData::I16(v) => v.len(),
            VolumeData::I32(v) => v.len(),
            VolumeData::F32(v) => v.len(),
            VolumeData::F64(v) => v.len(),
        }
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    pub fn element_type(&self) -> ElementType {
        match self {
            VolumeData::U8(_) => ElementType::U8,
            VolumeData::I16(_) => ElementType::I16,
            VolumeData::I32(_) => ElementType::I32,
            VolumeData::F32(_) => ElementType::F32,
            VolumeData::F64(_) => ElementType::F64,
        }
    }

    #[inline]
    pub fn get(&self, i: usize) -> f64 {
        match self {
            VolumeData::U8(v) => v[i] as f64,
            VolumeData::I16(v) => v[i] as f64,
            VolumeData::I32(v) => v[i] as f64,
            VolumeData::F32(v) => v[i] as f64,
            VolumeData::F64(v) => v[i],
        }
    }

    /// Copies the elements at `indices`, preserving the element type.
    pub fn gather(&self, indices: &[usize]) -> VolumeData {
        fn pick<T: Copy>(v: &[T], idx: &[usize]) -> Vec<T> {
            idx.iter().map(|&i| v[i]).collect()
        }
        match self {
            VolumeData::U8(v) => VolumeData::U8(pick(v, indices)),
            VolumeData::I16(v) => VolumeData::I16(pick(v, indices)),
            VolumeData::I32(v) => VolumeData::I32(pick(v, indices)),
            VolumeData::F32(v) => VolumeData::F32(pick(v, indices)),
            VolumeData::F64(v) => VolumeData::F64(pick(v, indices)),
        }
    }
}

/// A scalar (1 channel) or vector (3 channel) volume. Channels are stored
/// one after another (channel-major), each x-fastest.
#[derive(Debug, Clone, PartialEq)]
pub struct Volume {
    grid: Grid,
    channels: usize,
    intent_code: i16,
    data: VolumeData,
}

impl Volume {
    pub fn new(grid: Grid, channels: usize, data: VolumeData) -> Result<Self> {
        if channels != 1 && channels != 3 {
            return Err(Error::DimensionalityUnsupported(format!(
                "{channels} channels (expected 1 or 3)"
            )));
        }
        if data.len() != grid.len() * channels {
            return Err(Error::MalformedHeader(format!(
                "{} values for {} voxels x {} channels",
                data.len(),
                grid.len(),
                channels
            )));
        }
        Ok(Self {
            grid,
            channels,
            intent_code: 0,
            data,
        })
    }

    pub fn with_intent(mut self, code: i16) -> Self {
        self.intent_code = code;
        self
    }

    pub fn grid(&self) -> &Grid {
        &self.grid
    }

    pub fn dims(&self) -> [usize; 3] {
        self.grid.dims()
    }

    pub fn channels(&self) -> usize {
        self.channels
    }

    pub fn intent_code(&self) -> i16 {
        self.intent_code
    }

    pub fn data(&self) -> &VolumeData {
        &self.data
    }

    pub fn into_data(self) -> VolumeData {
        self.data
    }

    pub fn element_type(&self) -> ElementType {
        self.data.element_type()
    }

    #[inline]
    pub fn value(&self, voxel: usize, channel: usize) -> f64 {
        self.data.get(voxel + channel * self.grid.len())
    }

    pub fn world_to_voxel(&self, x: [f64; 3]) -> [f64; 3] {
        self.grid.world_to_index(x)
    }

    pub fn voxel_to_world(&self, idx: [f64; 3]) -> [f64; 3] {
        self.grid.index_to_world(idx)
    }
}
