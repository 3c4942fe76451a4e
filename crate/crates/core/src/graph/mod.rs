//! Neighborhood graphs over labelled point sets.
//!
//! Each point's neighborhood is itself plus every point it shares a Delaunay
//! tetrahedron with.

mod delaunay;

pub use delaunay::{delaunay_tetrahedra, Triangulation};

use std::collections::BTreeSet;
use std::path::Path;

use nalgebra::DVector;

use crate::affine::{points::mean, PointSet};
use crate::error::{Error, Result};

#[derive(Debug, Clone, PartialEq)]
pub struct NeighborhoodGraph {
    labels: Vec<u32>,
    /// Sorted neighbor indices per point, each including the point itself.
    neighbors: Vec<Vec<usize>>,
    centers: Vec<DVector<f64>>,
    jittered: bool,
}

impl NeighborhoodGraph {
    /// Builds the graph from the Delaunay tetrahedralization of a 3D point set.
    pub fn delaunay(points: &PointSet) -> Result<Self> {
        if points.dim() != 3 {
            return Err(Error::DimensionMismatch {
                expected: 3,
                found: points.dim(),
            });
        }
        let coords: Vec<[f64; 3]> = points.points().iter().map(|p| [p[0], p[1], p[2]]).collect();
        let tri = delaunay_tetrahedra(&coords)?;
        let mut sets: Vec<BTreeSet<usize>> = (0..points.len()).map(|i| BTreeSet::from([i])).collect();
        for t in &tri.tetrahedra {
            for &a in t {
                sets[a].extend(t.iter().copied());
            }
        }
        let neighbors = sets.into_iter().map(|s| s.into_iter().collect()).collect();
        let mut graph = Self::from_parts(points, neighbors)?;
        graph.jittered = tri.jittered;
        Ok(graph)
    }

    /// Every point is its own and only neighbor.
    pub fn singletons(points: &PointSet) -> Self {
        let neighbors = (0..points.len()).map(|i| vec![i]).collect();
        Self::from_parts(points, neighbors).expect("singleton neighborhoods are valid")
    }

    fn from_parts(points: &PointSet, neighbors: Vec<Vec<usize>>) -> Result<Self> {
        let centers = neighbors
            .iter()
            .map(|n: &Vec<usize>| mean(n.iter().map(|&j| points.point(j))))
            .collect();
        Ok(Self {
            labels: points.labels().to_vec(),
            neighbors,
            centers,
            jittered: false,
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

    /// Indices of the neighborhood of point `i`, sorted, including `i`.
    pub fn neighbors(&self, i: usize) -> &[usize] {
        &self.neighbors[i]
    }

    /// Mean position of the neighborhood of point `i`.
    pub fn center(&self, i: usize) -> &DVector<f64> {
        &self.centers[i]
    }

    /// Whether the triangulation needed jittering to resolve a degeneracy.
    pub fn jittered(&self) -> bool {
        self.jittered
    }

    /// Recomputes neighborhood centers from another point set with the same labels.
    pub fn with_points(&self, points: &PointSet) -> Result<Self> {
        if points.labels() != self.labels.as_slice() {
            return Err(Error::PairingMismatch(
                "graph labels differ from point set labels".into(),
            ));
        }
        let mut graph = Self::from_parts(points, self.neighbors.clone())?;
        graph.jittered = self.jittered;
        Ok(graph)
    }

    /// One line per point: `label: neighbor neighbor ...`, neighbors sorted
    /// by label and including the point itself.
    pub fn to_text(&self) -> String {
        let mut out = String::new();
        for (i, n) in self.neighbors.iter().enumerate() {
            out.push_str(&self.labels[i].to_string());
            out.push(':');
            for &j in n {
                out.push(' ');
                out.push_str(&self.labels[j].to_string());
            }
            out.push('\n');
        }
        out
    }

    /// Parses the text form, resolving labels against `points`.
    pub fn from_text(text: &str, points: &PointSet) -> Result<Self> {
        let bad = |msg: String| Error::InvalidConfig(format!("graph: {msg}"));
        let mut neighbors: Vec<Option<Vec<usize>>> = vec![None; points.len()];
        for (lineno, line) in text.lines().enumerate() {
            let line = line.trim();
            if line.is_empty() || line.starts_with('#') {
                continue;
            }
            let (head, tail) = line
                .split_once(':')
                .ok_or_else(|| bad(format!("line {}: missing ':'", lineno + 1)))?;
            let index = |tok: &str| -> Result<usize> {
                let label: u32 = tok
                    .parse()
                    .map_err(|_| bad(format!("line {}: invalid label '{tok}'", lineno + 1)))?;
                points
                    .index_of(label)
                    .ok_or_else(|| bad(format!("label {label} is not in the point set")))
            };
            let i = index(head.trim())?;
            let mut n: Vec<usize> = tail.split_whitespace().map(index).collect::<Result<_>>()?;
            n.sort_unstable();
            n.dedup();
            if !n.contains(&i) {
                return Err(bad(format!("neighborhood of {} omits itself", points.labels()[i])));
            }
            if neighbors[i].replace(n).is_some() {
                return Err(bad(format!("label {} listed twice", points.labels()[i])));
            }
        }
        let neighbors = neighbors
            .into_iter()
            .enumerate()
            .map(|(i, n)| n.ok_or_else(|| bad(format!("label {} has no entry", points.labels()[i]))))
            .collect::<Result<Vec<_>>>()?;
        for (i, n) in neighbors.iter().enumerate() {
            if let Some(&j) = n.iter().find(|&&j| neighbors[j].binary_search(&i).is_err()) {
                return Err(bad(format!(
                    "not symmetric: {} lists {} but not conversely",
                    points.labels()[i],
                    points.labels()[j]
                )));
            }
        }
        Self::from_parts(points, neighbors)
    }

    pub fn read(path: &Path, points: &PointSet) -> Result<Self> {
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        Self::from_text(&text, points)
    }

    pub fn write(&self, path: &Path) -> Result<()> {
        std::fs::write(path, self.to_text()).map_err(|e| Error::io(path, e))
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn random_points(n: usize, seed: u64) -> PointSet {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let pts: Vec<DVector<f64>> = (0..n)
            .map(|_| DVector::from_fn(3, |_, _| rng.random_range(-50.0..50.0)))
            .collect();
        PointSet::new((1..=n as u32).map(|l| l * 3).collect(), pts).unwrap()
    }

    #[test]
    fn four_points_are_all_mutual_neighbors() {
        let ps = PointSet::new(
            vec![1, 2, 3, 4],
            vec![
                DVector::from_vec(vec![0.0, 0.0, 0.0]),
                DVector::from_vec(vec![1.0, 0.0, 0.0]),
                DVector::from_vec(vec![0.0, 1.0, 0.0]),
                DVector::from_vec(vec![0.0, 0.0, 1.0]),
            ],
        )
        .unwrap();
        let g = NeighborhoodGraph::delaunay(&ps).unwrap();
        for i in 0..4 {
            assert_eq!(g.neighbors(i), &[0, 1, 2, 3]);
            assert!((g.center(i) - DVector::from_vec(vec![0.25, 0.25, 0.25])).norm() < 1e-15);
        }
    }

    #[test]
    fn graph_is_symmetric_and_reflexive() {
        let ps = random_points(60, 5);
        let g = NeighborhoodGraph::delaunay(&ps).unwrap();
        for i in 0..g.len() {
            assert!(g.neighbors(i).contains(&i));
            assert!(g.neighbors(i).len() >= 4);
            for &j in g.neighbors(i) {
                assert!(g.neighbors(j).contains(&i));
            }
        }
    }

    #[test]
    fn construction_is_deterministic() {
        let ps = random_points(80, 11);
        let a = NeighborhoodGraph::delaunay(&ps).unwrap();
        let b = NeighborhoodGraph::delaunay(&ps).unwrap();
        assert_eq!(a.to_text(), b.to_text());
    }

    #[test]
    fn text_roundtrip() {
        let ps = random_points(30, 2);
        let g = NeighborhoodGraph::delaunay(&ps).unwrap();
        let text = g.to_text();
        let back = NeighborhoodGraph::from_text(&text, &ps).unwrap();
        assert_eq!(back.to_text(), text);
        assert_eq!(back.neighbors, g.neighbors);
        assert_eq!(back.centers, g.centers);
    }

    #[test]
    fn text_errors() {
        let ps = random_points(4, 2);
        assert!(NeighborhoodGraph::from_text("3: 3\n6: 6\n9: 9\n", &ps).is_err());
        assert!(NeighborhoodGraph::from_text("3: 3 6\n6: 6\n9: 9\n12: 12\n", &ps).is_err());
        assert!(NeighborhoodGraph::from_text("3: 6\n6: 6\n9: 9\n12: 12\n", &ps).is_err());
        assert!(NeighborhoodGraph::from_text("3: 3 6\n6: 3 6\n9: 9\n12: 12\n", &ps).is_ok());
    }

    #[test]
    fn singletons_center_on_points() {
        let ps = random_points(5, 1);
        let g = NeighborhoodGraph::singletons(&ps);
        for i in 0..5 {
            assert_eq!(g.neighbors(i), &[i]);
            assert_eq!(g.center(i), ps.point(i));
        }
    }

    #[test]
    fn two_dimensional_points_are_rejected() {
        let ps = PointSet::new(
            vec![1, 2, 3],
            (0..3).map(|i| DVector::from_vec(vec![i as f64, 1.0])).collect(),
        )
        .unwrap();
        assert!(matches!(
            NeighborhoodGraph::delaunay(&ps),
            Err(Error::DimensionMismatch { .. })
        ));
    }
}
