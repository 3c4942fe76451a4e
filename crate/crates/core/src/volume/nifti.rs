//! NIfTI-1 single-file (`n+1`) reader and writer, optionally gzip-compressed.
//!
//! Supported element types: u8, i16, i32, f32, f64. Scalar volumes are 3D;
//! vector volumes are read from `(nx, ny, nz, 3)` or `(nx, ny, nz, 1, 3)` and
//! written in the latter layout, the one used by ITK-based tools.

use std::io::{Read, Write};
use std::path::Path;

use flate2::read::GzDecoder;
use flate2::write::GzEncoder;
use flate2::Compression;
use nalgebra::{Matrix3, Vector3};

use super::{Volume, VolumeData};
use crate::affine::AffineTransform;
use crate::error::{Error, Result};
use crate::grid::Grid;

const HEADER_SIZE: usize = 348;
const DATA_OFFSET: usize = 352;

/// `NIFTI_INTENT_DISPVECT`: vectors are displacements in world mm.
pub const INTENT_DISPLACEMENT: i16 = 1006;
/// `NIFTI_INTENT_VECTOR`.
pub const INTENT_VECTOR: i16 = 1007;

const DT_UINT8: i16 = 2;
const DT_INT16: i16 = 4;
const DT_INT32: i16 = 8;
const DT_FLOAT32: i16 = 16;
const DT_FLOAT64: i16 = 64;

#[derive(Clone, Copy, PartialEq)]
enum Endian {
    Little,
    Big,
}

struct Reader<'a> {
    bytes: &'a [u8],
    endian: Endian,
}

impl Reader<'_> {
    fn take<const N: usize>(&self, at: usize) -> [u8; N] {
        let mut b: [u8; N] = self.bytes[at..at + N].try_into().expect("length checked");
        if self.endian == Endian::Big {
            b.reverse();
        }
        b
    }
    fn i16(&self, at: usize) -> i16 {
        i16::from_le_bytes(self.take(at))
    }
    fn i32(&self, at: usize) -> i32 {
        i32::from_le_bytes(self.take(at))
    }
    fn f32(&self, at: usize) -> f32 {
        f32::from_le_bytes(self.take(at))
    }
}

fn is_gzip(bytes: &[u8]) -> bool {
    bytes.len() >= 2 && bytes[0] == 0x1f && bytes[1] == 0x8b
}

pub fn read_volume(path: impl AsRef<Path>) -> Result<Volume> {
    let path = path.as_ref();
    let raw = std::fs::read(path).map_err(|e| Error::io(path, e))?;
    let bytes = if is_gzip(&raw) {
        let mut out = Vec::new();
        GzDecoder::new(&raw[..])
            .read_to_end(&mut out)
            .map_err(|e| Error::io(path, e))?;
        out
    } else {
        raw
    };
    decode(&bytes)
}

fn decode(bytes: &[u8]) -> Result<Volume> {
    if bytes.len() < HEADER_SIZE {
        return Err(Error::MalformedHeader(format!(
            "file has {} bytes, a NIfTI-1 header needs {HEADER_SIZE}",
            bytes.len()
        )));
    }
    let le = Reader {
        bytes,
        endian: Endian::Little,
    };
    let endian = if (1..=7).contains(&le.i16(40)) {
        Endian::Little
    } else {
        Endian::Big
    };
    let r = Reader { bytes, endian };
    if r.i32(0) != HEADER_SIZE as i32 {
        return Err(Error::MalformedHeader(format!("sizeof_hdr is {}", r.i32(0))));
    }
    if &bytes[344..348] != b"n+1\0" {
        return Err(Error::MalformedHeader(format!(
            "magic {:?} is not \"n+1\"",
            String::from_utf8_lossy(&bytes[344..347])
        )));
    }
    let dim: [i16; 8] = std::array::from_fn(|i| r.i16(40 + 2 * i));
    let ndim = dim[0];
    if !(1..=7).contains(&ndim) {
        return Err(Error::MalformedHeader(format!("dim[0] = {ndim}")));
    }
    let extent = |i: usize| -> Result<usize> {
        if i as i16 > ndim {
            return Ok(1);
        }
        match dim[i] {
            n if n >= 1 => Ok(n as usize),
            n => Err(Error::MalformedHeader(format!("dim[{i}] = {n}"))),
        }
    };
    let dims = [extent(1)?, extent(2)?, extent(3)?];
    let channels = match ndim {
        1..=3 => 1,
        4 => extent(4)?,
        5 if extent(4)? == 1 => extent(5)?,
        _ if (4..=ndim as usize).all(|i| dim[i] == 1) => 1,
        _ => {
            return Err(Error::DimensionalityUnsupported(format!(
                "{ndim}D volume with dims {:?}",
                &dim[1..=ndim as usize]
            )))
        }
    };
    if channels != 1 && channels != 3 {
        return Err(Error::DimensionalityUnsupported(format!(
            "{channels} components per voxel"
        )));
    }

    let datatype = r.i16(70);
    let width = match datatype {
        DT_UINT8 => 1,
        DT_INT16 => 2,
        DT_INT32 | DT_FLOAT32 => 4,
        DT_FLOAT64 => 8,
        other => return Err(Error::UnsupportedDatatype(other)),
    };
    let vox_offset = r.f32(108);
    if !(vox_offset >= HEADER_SIZE as f32) {
        return Err(Error::MalformedHeader(format!("vox_offset = {vox_offset}")));
    }
    let offset = vox_offset as usize;
    let count = dims.iter().product::<usize>() * channels;
    let end = offset + count * width;
    if bytes.len() < end {
        return Err(Error::MalformedHeader(format!(
            "data needs {end} bytes, file has {}",
            bytes.len()
        )));
    }
    let payload = Reader {
        bytes: &bytes[offset..end],
        endian,
    };
    let mut data = match datatype {
        DT_UINT8 => VolumeData::U8(payload.bytes.to_vec()),
        DT_INT16 => VolumeData::I16((0..count).map(|i| payload.i16(2 * i)).collect()),
        DT_INT32 => VolumeData::I32((0..count).map(|i| payload.i32(4 * i)).collect()),
        DT_FLOAT32 => VolumeData::F32((0..count).map(|i| payload.f32(4 * i)).collect()),
        _ => VolumeData::F64(
            (0..count)
                .map(|i| f64::from_le_bytes(payload.take(8 * i)))
                .collect(),
        ),
    };

    let slope = r.f32(112) as f64;
    let inter = r.f32(116) as f64;
    if slope != 0.0 && slope.is_finite() && inter.is_finite() && (slope != 1.0 || inter != 0.0) {
        data = VolumeData::F64((0..count).map(|i| slope * data.get(i) + inter).collect());
    }

    let pixdim: [f64; 8] = std::array::from_fn(|i| r.f32(76 + 4 * i) as f64);
    let affine = header_affine(&r, &pixdim)?;
    let grid = Grid::new(dims, affine)?;
    Ok(Volume::new(grid, channels, data)?.with_intent(r.i16(68)))
}

fn header_affine(r: &Reader<'_>, pixdim: &[f64; 8]) -> Result<AffineTransform> {
    let qform_code = r.i16(252);
    let sform_code = r.i16(254);
    let spacing = |i: usize| if pixdim[i] > 0.0 { pixdim[i] } else { 1.0 };
    let (lin, off) = if sform_code > 0 {
        let row = |base: usize| -> [f64; 4] { std::array::from_fn(|j| r.f32(base + 4 * j) as f64) };
        let (x, y, z) = (row(280), row(296), row(312));
        (
            Matrix3::new(x[0], x[1], x[2], y[0], y[1], y[2], z[0], z[1], z[2]),
            Vector3::new(x[3], y[3], z[3]),
        )
    } else if qform_code > 0 {
        let (b, c, d) = (r.f32(256) as f64, r.f32(260) as f64, r.f32(264) as f64);
        let mut a2 = 1.0 - (b * b + c * c + d * d);
        let (b, c, d) = if a2 < 1e-7 {
            let n = (b * b + c * c + d * d).sqrt();
            a2 = 0.0;
            (b / n, c / n, d / n)
        } else {
            (b, c, d)
        };
        let a = a2.sqrt();
        let rot = Matrix3::new(
            a * a + b * b - c * c - d * d,
            2.0 * (b * c - a * d),
            2.0 * (b * d + a * c),
            2.0 * (b * c + a * d),
            a * a + c * c - b * b - d * d,
            2.0 * (c * d - a * b),
            2.0 * (b * d - a * c),
            2.0 * (c * d + a * b),
            a * a + d * d - c * c - b * b,
        );
        let qfac = if pixdim[0] < 0.0 { -1.0 } else { 1.0 };
        let scale = Matrix3::from_diagonal(&Vector3::new(spacing(1), spacing(2), qfac * spacing(3)));
        (
            rot * scale,
            Vector3::new(r.f32(268) as f64, r.f32(272) as f64, r.f32(276) as f64),
        )
    } else {
        (
            Matrix3::from_diagonal(&Vector3::new(spacing(1), spacing(2), spacing(3))),
            Vector3::zeros(),
        )
    };
    AffineTransform::from_matrix3(&lin, &off)
        .map_err(|_| Error::MalformedHeader("voxel-to-world affine is singular".into()))
}

fn encode(volume: &Volume) -> Vec<u8> {
    let mut h = vec![0u8; DATA_OFFSET];
    let put = |h: &mut Vec<u8>, at: usize, b: &[u8]| h[at..at + b.len()].copy_from_slice(b);

    put(&mut h, 0, &(HEADER_SIZE as i32).to_le_bytes());
    h[38] = b'r';
    let [nx, ny, nz] = volume.dims();
    let dim: [i16; 8] = if volume.channels() == 1 {
        [3, nx as i16, ny as i16, nz as i16, 1, 1, 1, 1]
    } else {
        [5, nx as i16, ny as i16, nz as i16, 1, volume.channels() as i16, 1, 1]
    };
    for (i, d) in dim.iter().enumerate() {
        put(&mut h, 40 + 2 * i, &d.to_le_bytes());
    }
    put(&mut h, 68, &volume.intent_code().to_le_bytes());
    let (code, bitpix): (i16, i16) = match volume.data() {
        VolumeData::U8(_) => (DT_UINT8, 8),
        VolumeData::I16(_) => (DT_INT16, 16),
        VolumeData::I32(_) => (DT_INT32, 32),
        VolumeData::F32(_) => (DT_FLOAT32, 32),
        VolumeData::F64(_) => (DT_FLOAT64, 64),
    };
    put(&mut h, 70, &code.to_le_bytes());
    put(&mut h, 72, &bitpix.to_le_bytes());
    let spacing = volume.grid().spacing();
    let mut pixdim = [1.0f32; 8];
    for a in 0..3 {
        pixdim[a + 1] = spacing[a] as f32;
    }
    for (i, p) in pixdim.iter().enumerate() {
        put(&mut h, 76 + 4 * i, &p.to_le_bytes());
    }
    put(&mut h, 108, &(DATA_OFFSET as f32).to_le_bytes());
    put(&mut h, 112, &1.0f32.to_le_bytes());
    h[123] = 2; // millimetres
    put(&mut h, 148, b"polaffini");
    put(&mut h, 254, &1i16.to_le_bytes());
    let m = volume.grid().voxel_to_world().homogeneous();
    for row in 0..3 {
        for col in 0..4 {
            put(&mut h, 280 + 16 * row + 4 * col, &(m[(row, col)] as f32).to_le_bytes());
        }
    }
    put(&mut h, 344, b"n+1\0");

    let width = bitpix as usize / 8;
    h.reserve(volume.data().len() * width);
    match volume.data() {
        VolumeData::U8(v) => h.extend_from_slice(v),
        VolumeData::I16(v) => v.iter().for_each(|x| h.extend_from_slice(&x.to_le_bytes())),
        VolumeData::I32(v) => v.iter().for_each(|x| h.extend_from_slice(&x.to_le_bytes())),
        VolumeData::F32(v) => v.iter().for_each(|x| h.extend_from_slice(&x.to_le_bytes())),
        VolumeData::F64(v) => v.iter().for_each(|x| h.extend_from_slice(&x.to_le_bytes())),
    }
    h
}

/// Writes `.nii`, or gzip-compressed when the path ends in `.gz`.
///
/// The voxel-to-world affine is stored in the sform at single precision.
pub fn write_volume(volume: &Volume, path: impl AsRef<Path>) -> Result<()> {
    let path = path.as_ref();
    if volume.dims().iter().any(|&n| n > i16::MAX as usize) {
        return Err(Error::DimensionalityUnsupported(format!(
            "dimension {:?} exceeds the NIfTI-1 limit",
            volume.dims()
        )));
    }
    let bytes = encode(volume);
    let gz = path
        .extension()
        .is_some_and(|e| e.eq_ignore_ascii_case("gz"));
    let out = if gz {
        let mut enc = GzEncoder::new(Vec::new(), Compression::fast());
        enc.write_all(&bytes)
            .and_then(|_| enc.finish())
            .map_err(|e| Error::io(path, e))?
    } else {
        bytes
    };
    std::fs::write(path, out).map_err(|e| Error::io(path, e))
}
