use nalgebra::DVector;

use super::AffineTransform;
use crate::error::{Error, Result};

/// Labeled world-space points, sorted by label.
#[derive(Debug, Clone, PartialEq)]
pub struct PointSet {
    labels: Vec<u32>,
    points: Vec<DVector<f64>>,
    centroid: DVector<f64>,
}

impl PointSet {
    /// Builds a point set, sorting by label. Labels must be unique and all
    /// points must share one dimension.
    pub fn new(labels: Vec<u32>, points: Vec<DVector<f64>>) -> Result<Self> {
        if labels.len() != points.len() {
            return Err(Error::PairingMismatch(format!(
                "{} labels for {} points",
                labels.len(),
                points.len()
            )));
        }
        if points.is_empty() {
            return Err(Error::EmptyPointSet);
        }
        let dim = points[0].len();
        if let Some(p) = points.iter().find(|p| p.len() != dim) {
            return Err(Error::DimensionMismatch {
                expected: dim,
                found: p.len(),
            });
        }
        let mut order: Vec<usize> = (0..labels.len()).collect();
        order.sort_by_key(|&i| labels[i]);
        if let Some(w) = order.windows(2).find(|w| labels[w[0]] == labels[w[1]]) {
            return Err(Error::InvalidLabels(format!(
                "duplicate label {}",
                labels[w[0]]
            )));
        }
        let labels: Vec<u32> = order.iter().map(|&i| labels[i]).collect();
        let points: Vec<DVector<f64>> = order.iter().map(|&i| points[i].clone()).collect();
        let centroid = mean(points.iter());
        Ok(Self {
            labels,
            points,
            centroid,
        })
    }

    /// Convenience constructor for 3D points given as arrays.
    pub fn from_arrays(labels: Vec<u32>, points: &[[f64; 3]]) -> Result<Self> {
        Self::new(
            labels,
            points
                .iter()
                .map(|p| DVector::from_column_slice(p))
                .collect(),
        )
    }

    pub fn len(&self) -> usize {
        self.labels.len()
    }

    pub fn is_empty(&self) -> bool {
        self.labels.is_empty()
    }

    pub fn dim(&self) -> usize {
        self.centroid.len()
    }

    pub fn labels(&self) -> &[u32] {
        &self.labels
    }

    pub fn points(&self) -> &[DVector<f64>] {
        &self.points
    }

    pub fn point(&self, i: usize) -> &DVector<f64> {
        &self.points[i]
    }

    pub fn centroid(&self) -> &DVector<f64> {
        &self.centroid
    }

    pub fn index_of(&self, label: u32) -> Option<usize> {
        self.labels.binary_search(&label).ok()
    }

    /// Points as fixed 3D arrays. Panics when `dim() != 3`.
    pub fn to_arrays(&self) -> Vec<[f64; 3]> {
        assert_eq!(self.dim(), 3);
        self.points.iter().map(|p| [p[0], p[1], p[2]]).collect()
    }

    /// Same labels, every point mapped through `a`.
    pub fn transformed(&self, a: &AffineTransform) -> Result<PointSet> {
        if a.dim() != self.dim() {
            return Err(Error::DimensionMismatch {
                expected: self.dim(),
                found: a.dim(),
            });
        }
        let points: Vec<DVector<f64>> = self.points.iter().map(|p| a.apply(p)).collect();
        let centroid = mean(points.iter());
        Ok(PointSet {
            labels: self.labels.clone(),
            points,
            centroid,
        })
    }

    /// Sub-set selected by indices; indices must be increasing.
    pub fn subset(&self, indices: &[usize]) -> Result<PointSet> {
        Self::new(
            indices.iter().map(|&i| self.labels[i]).collect(),
            indices.iter().map(|&i| self.points[i].clone()).collect(),
        )
    }
}

pub(crate) fn mean<'a>(points: impl Iterator<Item = &'a DVector<f64>>) -> DVector<f64> {
    let mut count = 0usize;
    let mut sum: Option<DVector<f64>> = None;
    for p in points {
        count += 1;
        match sum.as_mut() {
            Some(s) => *s += p,
            None => sum = Some(p.clone()),
        }
    }
    match sum {
        Some(s) => s / count as f64,
        None => DVector::zeros(0),
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn sorts_by_label_and_caches_centroid() {
        let ps = PointSet::from_arrays(vec![5, 2, 9], &[[1.0, 0.0, 0.0], [0.0, 3.0, 0.0], [2.0, 0.0, 6.0]])
            .unwrap();
        assert_eq!(ps.labels(), &[2, 5, 9]);
        assert_eq!(ps.point(0)[1], 3.0);
        assert_eq!(ps.centroid().as_slice(), &[1.0, 1.0, 2.0]);
    }

    #[test]
    fn duplicate_labels_are_rejected() {
        let err = PointSet::from_arrays(vec![1, 1], &[[0.0; 3], [1.0; 3]]).unwrap_err();
        assert!(matches!(err, Error::InvalidLabels(_)));
    }
}
