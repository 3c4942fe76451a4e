use nalgebra::DVector;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::affine::{matrix_exp, matrix_log, points::mean, AffineTransform, FitModel, LogAffine, PointSet};
use crate::error::{Error, Result};
use crate::graph::NeighborhoodGraph;

/// A neighborhood whose fit under the requested model was degenerate.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Fallback {
    pub label: u32,
    pub requested: FitModel,
    pub used: FitModel,
}

/// One local transformation per feature point, with its principal log and
/// the center of its weight map.
#[derive(Debug, Clone)]
pub struct LocalTransformSet {
    labels: Vec<u32>,
    transforms: Vec<AffineTransform>,
    logs: Vec<LogAffine>,
    anchors: Vec<DVector<f64>>,
    model: FitModel,
    fallbacks: Vec<Fallback>,
}

impl LocalTransformSet {
    /// Builds the set from transforms, computing their logarithms.
    pub fn from_transforms(
        labels: Vec<u32>,
        transforms: Vec<AffineTransform>,
        anchors: Vec<DVector<f64>>,
        model: FitModel,
    ) -> Result<Self> {
        let logs = transforms.iter().map(matrix_log).collect::<Result<Vec<_>>>()?;
        Self::assemble(labels, transforms, logs, anchors, model, Vec::new())
    }

    /// Builds the set from logarithms, computing the transforms.
    pub fn from_logs(
        labels: Vec<u32>,
        logs: Vec<LogAffine>,
        anchors: Vec<DVector<f64>>,
        model: FitModel,
    ) -> Result<Self> {
        let transforms = logs.iter().map(matrix_exp).collect();
        Self::assemble(labels, transforms, logs, anchors, model, Vec::new())
    }

    fn assemble(
        labels: Vec<u32>,
        transforms: Vec<AffineTransform>,
        logs: Vec<LogAffine>,
        anchors: Vec<DVector<f64>>,
        model: FitModel,
        fallbacks: Vec<Fallback>,
    ) -> Result<Self> {
        let n = labels.len();
        for len in [transforms.len(), logs.len(), anchors.len()] {
            if len != n {
                return Err(Error::DimensionMismatch { expected: n, found: len });
            }
        }
        if anchors.iter().any(|a| a.len() != 3) || logs.iter().any(|l| l.dim() != 3) {
            return Err(Error::DimensionMismatch { expected: 3, found: 2 });
        }
        Ok(Self {
            labels,
            transforms,
            logs,
            anchors,
            model,
            fallbacks,
        })
    }

    pub fn len(&self) -> usize {
        self.labels.len()
    }

    pub fn is_empty(&self) -> bool {
        self.labels.is_empty()
    }

    pub fn labels(&self) -> &[u32] {
        &self.labels
    }

    pub fn transforms(&self) -> &[AffineTransform] {
        &self.transforms
    }

    pub fn logs(&self) -> &[LogAffine] {
        &self.logs
    }

    pub fn anchors(&self) -> &[DVector<f64>] {
        &self.anchors
    }

    pub fn model(&self) -> FitModel {
        self.model
    }

    pub fn fallbacks(&self) -> &[Fallback] {
        &self.fallbacks
    }

    /// Same anchors, every log multiplied by `s`.
    pub fn scaled(&self, s: f64) -> Self {
        let logs: Vec<LogAffine> = self.logs.iter().map(|l| l.scale(s)).collect();
        Self {
            transforms: logs.iter().map(matrix_exp).collect(),
            logs,
            ..self.clone()
        }
    }
}

/// Fits one local transformation per neighborhood, from the background-mapped
/// reference points `reference_bg` to the `moving` points. Degenerate fits
/// fall back to lower-dof models and are recorded.
pub fn estimate_local_transforms(
    graph: &NeighborhoodGraph,
    reference_bg: &PointSet,
    moving: &PointSet,
    model: FitModel,
) -> Result<LocalTransformSet> {
    if graph.labels() != reference_bg.labels() || reference_bg.labels() != moving.labels() {
        return Err(Error::PairingMismatch(
            "graph, reference and moving labels differ".into(),
        ));
    }
    let fits: Vec<(AffineTransform, LogAffine, DVector<f64>, FitModel)> = (0..graph.len())
        .into_par_iter()
        .map(|i| {
            let nbrs = graph.neighbors(i);
            let x: Vec<&DVector<f64>> = nbrs.iter().map(|&p| reference_bg.point(p)).collect();
            let y: Vec<&DVector<f64>> = nbrs.iter().map(|&p| moving.point(p)).collect();
            let mut used = model;
            let transform = loop {
                match used.fit(&x, &y) {
                    Ok(a) => break a,
                    Err(e) => match used.fallback() {
                        Some(next) => used = next,
                        None => return Err(e),
                    },
                }
            };
            let log = matrix_log(&transform)?;
            let anchor = mean(x.iter().copied());
            Ok((transform, log, anchor, used))
        })
        .collect::<Result<_>>()?;

    let mut transforms = Vec::with_capacity(fits.len());
    let mut logs = Vec::with_capacity(fits.len());
    let mut anchors = Vec::with_capacity(fits.len());
    let mut fallbacks = Vec::new();
    for (i, (t, l, a, used)) in fits.into_iter().enumerate() {
        if used != model {
            fallbacks.push(Fallback {
                label: graph.labels()[i],
                requested: model,
                used,
            });
        }
        transforms.push(t);
        logs.push(l);
        anchors.push(a);
    }
    LocalTransformSet::assemble(graph.labels().to_vec(), transforms, logs, anchors, model, fallbacks)
}

/// Twice the mean distance from each point to its nearest other point.
pub fn sigma_heuristic(points: &PointSet) -> Result<f64> {
    let n = points.len();
    if n < 2 {
        return Err(Error::InsufficientPoints { found: n, required: 2 });
    }
    let total: f64 = (0..n)
        .map(|i| {
            (0..n)
                .filter(|&p| p != i)
                .map(|p| (points.point(i) - points.point(p)).norm())
                .fold(f64::INFINITY, f64::min)
        })
        .sum();
    Ok(2.0 * total / n as f64)
}
