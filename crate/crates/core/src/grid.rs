//! Regular 3D voxel grids with a voxel-to-world affine, and trilinear sampling.
//!
//! A voxel's world position is the affine applied to its integer index
//! (centre-of-voxel convention). Voxel data is stored x-fastest.

use nalgebra::{Matrix3, Vector3};

use crate::affine::AffineTransform;
use crate::error::{Error, Result};

#[derive(Debug, Clone, PartialEq)]
pub struct Grid {
    dims: [usize; 3],
    voxel_to_world: AffineTransform,
    lin: Matrix3<f64>,
    off: Vector3<f64>,
    inv_lin: Matrix3<f64>,
    inv_off: Vector3<f64>,
}

impl Grid {
    pub fn new(dims: [usize; 3], voxel_to_world: AffineTransform) -> Result<Self> {
        if dims.iter().any(|&n| n == 0) {
            return Err(Error::GridTooSmall(format!("empty grid {dims:?}")));
        }
        if voxel_to_world.dim() != 3 {
            return Err(Error::DimensionMismatch {
                expected: 3,
                found: voxel_to_world.dim(),
            });
        }
        let inverse = voxel_to_world.invert()?;
        let (lin, off) = voxel_to_world.to_matrix3();
        let (inv_lin, inv_off) = inverse.to_matrix3();
        Ok(Self {
            dims,
            voxel_to_world,
            lin,
            off,
            inv_lin,
            inv_off,
        })
    }

    /// Axis-aligned grid with isotropic `spacing` and the given world origin.
    pub fn isotropic(dims: [usize; 3], spacing: f64, origin: [f64; 3]) -> Result<Self> {
        let a = AffineTransform::from_matrix3(
            &(Matrix3::identity() * spacing),
            &Vector3::from(origin),
        )?;
        Self::new(dims, a)
    }

    /// Isotropic grid whose centre voxel sits at the world origin.
    pub fn centred(dims: [usize; 3], spacing: f64) -> Result<Self> {
        let origin = dims.map(|n| -0.5 * (n as f64 - 1.0) * spacing);
        Self::isotropic(dims, spacing, origin)
    }

    pub fn dims(&self) -> [usize; 3] {
        self.dims
    }

    pub fn len(&self) -> usize {
        self.dims[0] * self.dims[1] * self.dims[2]
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    /// Voxels in one z-slice.
    pub fn slice_len(&self) -> usize {
        self.dims[0] * self.dims[1]
    }

    pub fn voxel_to_world(&self) -> &AffineTransform {
        &self.voxel_to_world
    }

    pub fn linear(&self) -> &Matrix3<f64> {
        &self.lin
    }

    pub fn inverse_linear(&self) -> &Matrix3<f64> {
        &self.inv_lin
    }

    /// Lengths of the voxel axes in world units.
    pub fn spacing(&self) -> [f64; 3] {
        [
            self.lin.column(0).norm(),
            self.lin.column(1).norm(),
            self.lin.column(2).norm(),
        ]
    }

    /// Mean voxel edge length.
    pub fn mean_spacing(&self) -> f64 {
        self.spacing().iter().sum::<f64>() / 3.0
    }

    #[inline]
    pub fn linear_index(&self, i: usize, j: usize, k: usize) -> usize {
        i + self.dims[0] * (j + self.dims[1] * k)
    }

    #[inline]
    pub fn index_of(&self, linear: usize) -> [usize; 3] {
        let nx = self.dims[0];
        let ny = self.dims[1];
        [linear % nx, (linear / nx) % ny, linear / (nx * ny)]
    }

    #[inline]
    pub fn index_to_world(&self, idx: [f64; 3]) -> [f64; 3] {
        let w = self.lin * Vector3::from(idx) + self.off;
        [w.x, w.y, w.z]
    }

    #[inline]
    pub fn world_to_index(&self, x: [f64; 3]) -> [f64; 3] {
        let c = self.inv_lin * Vector3::from(x) + self.inv_off;
        [c.x, c.y, c.z]
    }

    #[inline]
    pub fn voxel_world(&self, i: usize, j: usize, k: usize) -> [f64; 3] {
        self.index_to_world([i as f64, j as f64, k as f64])
    }

    /// Coarser grid keeping every `factor`-th voxel, anchored at voxel 0.
    pub fn downsample(&self, factor: usize) -> Result<Grid> {
        if factor == 0 {
            return Err(Error::InvalidConfig("downsampling factor must be >= 1".into()));
        }
        if factor == 1 {
            return Ok(self.clone());
        }
        let dims = self.dims.map(|n| n.div_ceil(factor));
        let lin = self.lin * factor as f64;
        Grid::new(dims, AffineTransform::from_matrix3(&lin, &self.off)?)
    }

    /// Same dimensions and voxel-to-world affine up to `tol`.
    pub fn matches(&self, other: &Grid, tol: f64) -> bool {
        self.dims == other.dims && self.voxel_to_world.max_abs_diff(&other.voxel_to_world) <= tol
    }

    /// Whether a continuous index lies inside the sampled box.
    #[inline]
    pub fn contains_index(&self, c: [f64; 3]) -> bool {
        const EPS: f64 = 1e-9;
        (0..3).all(|a| c[a] >= -EPS && c[a] <= self.dims[a] as f64 - 1.0 + EPS)
    }

    /// Nearest voxel to a continuous index, clamped to the grid.
    #[inline]
    pub fn nearest_clamped(&self, c: [f64; 3]) -> usize {
        let r = |a: usize| -> usize {
            let v = c[a].round();
            if v <= 0.0 {
                0
            } else {
                (v as usize).min(self.dims[a] - 1)
            }
        };
        self.linear_index(r(0), r(1), r(2))
    }

    /// Corner indices and fractional offsets for trilinear sampling with edge clamping.
    #[inline]
    pub fn trilinear_stencil(&self, c: [f64; 3]) -> Stencil {
        let mut lo = [0usize; 3];
        let mut hi = [0usize; 3];
        let mut frac = [0.0f64; 3];
        for a in 0..3 {
            let n = self.dims[a];
            let max = (n - 1) as f64;
            let v = if c[a].is_nan() { 0.0 } else { c[a].clamp(0.0, max) };
            if n == 1 {
                continue;
            }
            let i0 = (v.floor() as usize).min(n - 2);
            lo[a] = i0;
            hi[a] = i0 + 1;
            frac[a] = v - i0 as f64;
        }
        let nx = self.dims[0];
        let nxy = nx * self.dims[1];
        let corner = |x: usize, y: usize, z: usize| x + nx * y + nxy * z;
        Stencil {
            corners: [
                corner(lo[0], lo[1], lo[2]),
                corner(hi[0], lo[1], lo[2]),
                corner(lo[0], hi[1], lo[2]),
                corner(hi[0], hi[1], lo[2]),
                corner(lo[0], lo[1], hi[2]),
                corner(hi[0], lo[1], hi[2]),
                corner(lo[0], hi[1], hi[2]),
                corner(hi[0], hi[1], hi[2]),
            ],
            frac,
        }
    }
}

/// The eight corners of a trilinear cell (x fastest) and the offsets inside it.
#[derive(Debug, Clone, Copy)]
pub struct Stencil {
    pub corners: [usize; 8],
    pub frac: [f64; 3],
}

#[inline]
fn lerp(a: f64, b: f64, t: f64) -> f64 {
    a + t * (b - a)
}

impl Stencil {
    /// Interpolates `C` channels; `value` fetches a voxel by linear index.
    ///
    /// Uses nested `a + t (b - a)` so that equal corner values are reproduced
    /// exactly.
    #[inline]
    pub fn interpolate<const C: usize>(&self, mut value: impl FnMut(usize) -> [f64; C]) -> [f64; C] {
        let v: [[f64; C]; 8] = std::array::from_fn(|i| value(self.corners[i]));
        let [fx, fy, fz] = self.frac;
        std::array::from_fn(|ch| {
            let x00 = lerp(v[0][ch], v[1][ch], fx);
            let x10 = lerp(v[2][ch], v[3][ch], fx);
            let x01 = lerp(v[4][ch], v[5][ch], fx);
            let x11 = lerp(v[6][ch], v[7][ch], fx);
            let y0 = lerp(x00, x10, fy);
            let y1 = lerp(x01, x11, fy);
            lerp(y0, y1, fz)
        })
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::{Rng, SeedableRng};

    #[test]
    fn identity_header_maps_index_to_coordinates() {
        let g = Grid::new([4, 4, 4], AffineTransform::identity(3)).unwrap();
        assert_eq!(g.index_to_world([1.0, 2.0, 3.0]), [1.0, 2.0, 3.0]);
        assert_eq!(g.world_to_index([1.5, 2.0, 3.0]), [1.5, 2.0, 3.0]);
    }

    #[test]
    fn two_mm_grid() {
        let g = Grid::isotropic([10, 10, 10], 2.0, [0.0; 3]).unwrap();
        assert_eq!(g.world_to_index([4.0, 6.0, 8.0]), [2.0, 3.0, 4.0]);
    }

    #[test]
    fn random_header_roundtrip() {
        let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(21);
        let lin = Matrix3::from_fn(|r, c| {
            (if r == c { 1.5 } else { 0.0 }) + rng.random_range(-0.3..0.3)
        });
        let off = Vector3::new(-90.0, 126.0, -72.0);
        let g = Grid::new([50, 60, 70], AffineTransform::from_matrix3(&lin, &off).unwrap()).unwrap();
        for _ in 0..1000 {
            let x = [
                rng.random_range(-200.0..200.0),
                rng.random_range(-200.0..200.0),
                rng.random_range(-200.0..200.0),
            ];
            let back = g.index_to_world(g.world_to_index(x));
            for a in 0..3 {
                assert!((back[a] - x[a]).abs() < 1e-10);
            }
        }
    }

    #[test]
    fn downsample_keeps_origin_and_covers_extent() {
        let g = Grid::isotropic([9, 10, 1], 1.0, [5.0, 0.0, 0.0]).unwrap();
        let d = g.downsample(2).unwrap();
        assert_eq!(d.dims(), [5, 5, 1]);
        assert_eq!(d.voxel_world(0, 0, 0), [5.0, 0.0, 0.0]);
        assert_eq!(d.voxel_world(4, 4, 0), [13.0, 8.0, 0.0]);
    }

    #[test]
    fn trilinear_reproduces_linear_functions_and_clamps() {
        let g = Grid::isotropic([4, 5, 6], 1.0, [0.0; 3]).unwrap();
        let f = |l: usize| {
            let [i, j, k] = g.index_of(l);
            [1.0 + 2.0 * i as f64 - 0.5 * j as f64 + 3.0 * k as f64]
        };
        let s = g.trilinear_stencil([1.25, 3.5, 2.75]);
        let v = s.interpolate(f)[0];
        assert!((v - (1.0 + 2.5 - 1.75 + 8.25)).abs() < 1e-12);
        // Outside the box: value of the nearest face.
        let s = g.trilinear_stencil([-3.0, 1.0, 1.0]);
        assert!((s.interpolate(f)[0] - (1.0 - 0.5 + 3.0)).abs() < 1e-12);
        assert!(!g.contains_index([-3.0, 1.0, 1.0]));
    }
}
