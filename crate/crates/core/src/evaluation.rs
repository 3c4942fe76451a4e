//! Alignment quality: label overlap and Jacobian determinants.

use std::collections::BTreeMap;
use std::fmt::Write as _;

use nalgebra::Matrix3;
use rayon::prelude::*;
use serde::Serialize;

use crate::error::{Error, Result};
use crate::features::{LabelSelection, LabelVolume};
use crate::polyaffine::{PolyaffineResult, VectorField};

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize)]
pub struct LabelCounts {
    pub reference: u64,
    pub warped: u64,
    pub intersection: u64,
}

impl LabelCounts {
    pub fn dice(&self) -> f64 {
        2.0 * self.intersection as f64 / (self.reference + self.warped) as f64
    }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct OverlapReport {
    pub per_label: BTreeMap<u32, f64>,
    pub counts: BTreeMap<u32, LabelCounts>,
    /// Unweighted mean of the per-label scores.
    pub mean_dice: f64,
    pub labels_evaluated: usize,
}

impl OverlapReport {
    /// Mean weighted by each label's total voxel count in both volumes.
    pub fn volume_weighted_mean(&self) -> f64 {
        let (num, den) = self.counts.values().fold((0.0, 0u64), |(n, d), c| {
            (n + 2.0 * c.intersection as f64, d + c.reference + c.warped)
        });
        if den == 0 {
            f64::NAN
        } else {
            num / den as f64
        }
    }

    /// Aligned-column table, one row per label, then the mean.
    pub fn to_table(&self) -> String {
        let mut out = format!("{:>8} {:>10} {:>10} {:>12} {:>8}\n", "label", "reference", "warped", "intersection", "dice");
        for (label, c) in &self.counts {
            let _ = writeln!(
                out,
                "{label:>8} {:>10} {:>10} {:>12} {:>8.4}",
                c.reference,
                c.warped,
                c.intersection,
                c.dice()
            );
        }
        let _ = writeln!(out, "{:>8} {:>45.4}", "mean", self.mean_dice);
        out
    }
}

/// Per-label Dice overlap `2|A∩B| / (|A|+|B|)` after applying the selection
/// to both volumes. Labels absent from both are omitted.
pub fn dice(reference: &LabelVolume, warped: &LabelVolume, sel: &LabelSelection) -> Result<OverlapReport> {
    if !reference.grid().matches(warped.grid(), 1e-6) {
        return Err(Error::GridMismatch);
    }
    let slice = reference.grid().slice_len();
    let partial: Vec<BTreeMap<u32, LabelCounts>> = reference
        .data()
        .par_chunks(slice)
        .zip(warped.data().par_chunks(slice))
        .map(|(a, b)| {
            let mut map: BTreeMap<u32, LabelCounts> = BTreeMap::new();
            for (&la, &lb) in a.iter().zip(b) {
                let (ra, rb) = (sel.resolve(la), sel.resolve(lb));
                if let Some(l) = ra {
                    map.entry(l).or_default().reference += 1;
                }
                if let Some(l) = rb {
                    map.entry(l).or_default().warped += 1;
                }
                if let (Some(x), Some(y)) = (ra, rb) {
                    if x == y {
                        map.entry(x).or_default().intersection += 1;
                    }
                }
            }
            map
        })
        .collect();
    let mut counts: BTreeMap<u32, LabelCounts> = BTreeMap::new();
    for map in partial {
        for (l, c) in map {
            let e = counts.entry(l).or_default();
            e.reference += c.reference;
            e.warped += c.warped;
            e.intersection += c.intersection;
        }
    }
    let per_label: BTreeMap<u32, f64> = counts.iter().map(|(&l, c)| (l, c.dice())).collect();
    let mean_dice = if per_label.is_empty() {
        f64::NAN
    } else {
        per_label.values().sum::<f64>() / per_label.len() as f64
    };
    Ok(OverlapReport {
        labels_evaluated: per_label.len(),
        per_label,
        counts,
        mean_dice,
    })
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct JacobianReport {
    pub negative_count: u64,
    pub min_det: f64,
    pub max_det: f64,
    pub mean_det: f64,
    pub interior_voxels: u64,
}

impl JacobianReport {
    pub fn to_table(&self) -> String {
        format!(
            "{:<16} {:>14}\n{:<16} {:>14}\n{:<16} {:>14.6}\n{:<16} {:>14.6}\n{:<16} {:>14.6}\n",
            "interior_voxels",
            self.interior_voxels,
            "negative_count",
            self.negative_count,
            "min_det",
            self.min_det,
            "max_det",
            self.max_det,
            "mean_det",
            self.mean_det
        )
    }
}

/// Jacobian determinant statistics of the total map of `result`.
pub fn jacobian_report(result: &PolyaffineResult) -> Result<JacobianReport> {
    displacement_jacobian_report(&result.full_displacement)
}

/// Jacobian determinant statistics of `x -> x + u(x)` over interior voxels,
/// using central differences.
pub fn displacement_jacobian_report(u: &VectorField) -> Result<JacobianReport> {
    let grid = u.grid();
    let [nx, ny, nz] = grid.dims();
    if nx < 3 || ny < 3 || nz < 3 {
        return Err(Error::GridTooSmall(format!(
            "Jacobian needs at least 3 voxels per axis, grid is {nx}x{ny}x{nz}"
        )));
    }
    let inv = *grid.inverse_linear();

    #[derive(Clone, Copy)]
    struct Partial {
        negative: u64,
        min: f64,
        max: f64,
        sum: f64,
    }

    let partials: Vec<Partial> = (1..nz - 1)
        .into_par_iter()
        .map(|k| {
            let mut p = Partial {
                negative: 0,
                min: f64::INFINITY,
                max: f64::NEG_INFINITY,
                sum: 0.0,
            };
            for j in 1..ny - 1 {
                for i in 1..nx - 1 {
                    let at = |i, j, k| u.get(grid.linear_index(i, j, k));
                    let diffs = [
                        (at(i + 1, j, k), at(i - 1, j, k)),
                        (at(i, j + 1, k), at(i, j - 1, k)),
                        (at(i, j, k + 1), at(i, j, k - 1)),
                    ];
                    let g = Matrix3::from_fn(|r, c| 0.5 * (diffs[c].0[r] - diffs[c].1[r]));
                    let det = (Matrix3::identity() + g * inv).determinant();
                    if det < 0.0 {
                        p.negative += 1;
                    }
                    p.min = p.min.min(det);
                    p.max = p.max.max(det);
                    p.sum += det;
                }
            }
            p
        })
        .collect();

    let mut total = Partial {
        negative: 0,
        min: f64::INFINITY,
        max: f64::NEG_INFINITY,
        sum: 0.0,
    };
    for p in partials {
        total.negative += p.negative;
        total.min = total.min.min(p.min);
        total.max = total.max.max(p.max);
        total.sum += p.sum;
    }
    let interior = ((nx - 2) * (ny - 2) * (nz - 2)) as u64;
    Ok(JacobianReport {
        negative_count: total.negative,
        min_det: total.min,
        max_det: total.max,
        mean_det: total.sum / interior as f64,
        interior_voxels: interior,
    })
}
