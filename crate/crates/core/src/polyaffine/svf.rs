use serde::{Deserialize, Serialize};

use super::{LocalTransformSet, VectorField};
use crate::error::{Error, Result};
use crate::grid::Grid;

/// Weights below this value are treated as zero.
pub const WEIGHT_CUTOFF: f64 = 1e-12;

pub const DEFAULT_SIGMA: f64 = 20.0;
pub const DEFAULT_BACKGROUND_WEIGHT: f64 = 1e-5;
pub const DEFAULT_STEPS: u32 = 7;
pub const DEFAULT_SVF_DOWNSAMPLE: usize = 2;

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Kernel {
    #[default]
    Gaussian,
}

/// Weight maps of the local transformations and the uniform background weight.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct WeightConfig {
    /// Kernel standard deviation in mm.
    pub sigma: f64,
    pub background_weight: f64,
    pub kernel: Kernel,
    /// Distance (mm) beyond which a weight is zero.
    pub cutoff_radius: Option<f64>,
}

impl Default for WeightConfig {
    fn default() -> Self {
        Self {
            sigma: DEFAULT_SIGMA,
            background_weight: DEFAULT_BACKGROUND_WEIGHT,
            kernel: Kernel::Gaussian,
            cutoff_radius: None,
        }
    }
}

impl WeightConfig {
    pub fn new(sigma: f64, background_weight: f64) -> Result<Self> {
        let cfg = Self {
            sigma,
            background_weight,
            ..Self::default()
        };
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.sigma > 0.0 && self.sigma.is_finite()) {
            return Err(Error::InvalidConfig(format!("sigma must be positive, got {}", self.sigma)));
        }
        if !(self.background_weight >= 0.0 && self.background_weight.is_finite()) {
            return Err(Error::InvalidConfig(format!(
                "background weight must be non-negative, got {}",
                self.background_weight
            )));
        }
        if let Some(r) = self.cutoff_radius {
            if !(r >= 3.0 * self.sigma) {
                return Err(Error::InvalidConfig(format!(
                    "cutoff radius {r} mm is below 3 sigma ({} mm)",
                    3.0 * self.sigma
                )));
            }
        }
        Ok(())
    }
}

/// Stationary velocity field fusing the local logs with Gaussian weights:
/// `V(x) = [Σ w_i(x) log(A_i) / (w_B + Σ w_i(x))] x̂`.
///
/// With a zero background weight the normalization makes the weights
/// invariant to a common factor, so squared distances are taken relative to
/// the nearest anchor to avoid underflow far from all anchors.
pub fn build_svf(locals: &LocalTransformSet, cfg: &WeightConfig, grid: &Grid) -> Result<VectorField> {
    if locals.is_empty() {
        return Err(Error::NoTransforms);
    }
    cfg.validate()?;
    let logs: Vec<[f64; 12]> = locals.logs().iter().map(|l| l.to_rows3x4()).collect();
    let anchors: Vec<[f64; 3]> = locals.anchors().iter().map(|a| [a[0], a[1], a[2]]).collect();
    let inv_two_var = 1.0 / (2.0 * cfg.sigma * cfg.sigma);
    let cutoff2 = cfg.cutoff_radius.map_or(f64::INFINITY, |r| r * r);
    let w_b = cfg.background_weight;

    let field = VectorField::from_voxels(grid.clone(), |_, x| {
        let mut d2: Vec<f64> = Vec::with_capacity(anchors.len());
        d2.extend(anchors.iter().map(|a| {
            let (dx, dy, dz) = (x[0] - a[0], x[1] - a[1], x[2] - a[2]);
            dx * dx + dy * dy + dz * dz
        }));
        let shift = if w_b == 0.0 {
            d2.iter().copied().filter(|&d| d <= cutoff2).fold(f64::INFINITY, f64::min)
        } else {
            0.0
        };
        let mut sum_w = 0.0;
        let mut m = [0.0f64; 12];
        for (log, &d) in logs.iter().zip(&d2) {
            if d > cutoff2 {
                continue;
            }
            let w = (-(d - shift) * inv_two_var).exp();
            if w < WEIGHT_CUTOFF {
                continue;
            }
            sum_w += w;
            for (acc, v) in m.iter_mut().zip(log) {
                *acc += w * v;
            }
        }
        let denom = w_b + sum_w;
        if denom == 0.0 {
            return [0.0; 3];
        }
        std::array::from_fn(|r| {
            let row = &m[4 * r..4 * r + 4];
            (row[0] * x[0] + row[1] * x[1] + row[2] * x[2] + row[3]) / denom
        })
    });
    field.check_finite()?;
    Ok(field)
}

/// Scaling and squaring: returns the displacement `D` with `exp(V)(x) = x + D(x)`.
pub fn exponentiate(svf: &VectorField, steps: u32) -> Result<VectorField> {
    if steps == 0 || steps > 60 {
        return Err(Error::InvalidConfig(format!("steps must be in 1..=60, got {steps}")));
    }
    svf.check_finite()?;
    let grid = svf.grid().clone();
    let inv = *grid.inverse_linear();
    let mut d = svf.scaled(0.5f64.powi(steps as i32));
    for _ in 0..steps {
        let current = &d;
        d = VectorField::from_voxels(grid.clone(), |idx, _| {
            let l = grid.linear_index(idx[0], idx[1], idx[2]);
            let u = current.get(l);
            let du = inv * nalgebra::Vector3::from(u);
            let c = [idx[0] as f64 + du.x, idx[1] as f64 + du.y, idx[2] as f64 + du.z];
            let v = current.sample_index(c);
            [u[0] + v[0], u[1] + v[1], u[2] + v[2]]
        });
    }
    d.check_finite()?;
    Ok(d)
}
