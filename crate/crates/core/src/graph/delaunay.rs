//! Incremental Bowyer–Watson Delaunay tetrahedralization.
//!
//! The convex hull is closed with "ghost" tetrahedra sharing a vertex at
//! infinity, so no bounding super-tetrahedron is needed. Orientation and
//! in-sphere tests use adaptive exact predicates. When a predicate reports an
//! exact degeneracy (cospherical or coplanar configurations), construction is
//! restarted on deterministically jittered copies of the points.

use std::collections::BTreeMap;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use robust::{insphere, orient3d, Coord3D};

use crate::error::{Error, Result};

const GHOST: usize = usize::MAX;

/// Face opposite vertex k, ordered so that vertex k lies on its positive side.
const FACES: [[usize; 3]; 4] = [[2, 1, 3], [0, 2, 3], [1, 0, 3], [0, 1, 2]];

/// Jitter scales, relative to the bounding-box diagonal, tried in turn.
const JITTER_SCALES: [f64; 3] = [1e-8, 1e-7, 1e-6];

/// Finite tetrahedra of a 3D Delaunay triangulation, each positively oriented.
#[derive(Debug, Clone, PartialEq)]
pub struct Triangulation {
    pub tetrahedra: Vec<[usize; 4]>,
    /// Whether the points had to be jittered to break an exact degeneracy.
    pub jittered: bool,
}

struct Degenerate;

fn coord(p: &[f64; 3]) -> Coord3D<f64> {
    Coord3D {
        x: p[0],
        y: p[1],
        z: p[2],
    }
}

fn orient(a: &[f64; 3], b: &[f64; 3], c: &[f64; 3], d: &[f64; 3]) -> f64 {
    orient3d(coord(a), coord(b), coord(c), coord(d))
}

fn sign(v: f64) -> std::result::Result<bool, Degenerate> {
    if v > 0.0 {
        Ok(true)
    } else if v < 0.0 {
        Ok(false)
    } else {
        Err(Degenerate)
    }
}

fn face_of(t: &[usize; 4], k: usize) -> [usize; 3] {
    FACES[k].map(|i| t[i])
}

fn in_conflict(pts: &[[f64; 3]], t: &[usize; 4], p: &[f64; 3]) -> std::result::Result<bool, Degenerate> {
    match t.iter().position(|&v| v == GHOST) {
        None => {
            let [a, b, c, d] = t.map(|v| coord(&pts[v]));
            sign(insphere(a, b, c, d, coord(p)))
        }
        Some(g) => {
            let [a, b, c] = face_of(t, g);
            sign(orient(&pts[a], &pts[b], &pts[c], p))
        }
    }
}

fn initial_simplex(pts: &[[f64; 3]]) -> Option<[usize; 4]> {
    let p0 = 0;
    let p1 = (1..pts.len()).find(|&j| pts[j] != pts[p0])?;
    let (a, b) = (pts[p0], pts[p1]);
    let collinear = |c: &[f64; 3]| {
        let proj = |x: usize, y: usize| {
            robust::orient2d(
                robust::Coord { x: a[x], y: a[y] },
                robust::Coord { x: b[x], y: b[y] },
                robust::Coord { x: c[x], y: c[y] },
            )
        };
        proj(0, 1) == 0.0 && proj(1, 2) == 0.0 && proj(0, 2) == 0.0
    };
    let p2 = (1..pts.len()).find(|&k| k != p1 && !collinear(&pts[k]))?;
    let p3 = (1..pts.len())
        .find(|&l| l != p1 && l != p2 && orient(&pts[p0], &pts[p1], &pts[p2], &pts[l]) != 0.0)?;
    if orient(&pts[p0], &pts[p1], &pts[p2], &pts[p3]) > 0.0 {
        Some([p0, p1, p2, p3])
    } else {
        Some([p1, p0, p2, p3])
    }
}

fn bowyer_watson(pts: &[[f64; 3]]) -> std::result::Result<Vec<[usize; 4]>, Degenerate> {
    let first = initial_simplex(pts).ok_or(Degenerate)?;
    let mut tets: Vec<[usize; 4]> = vec![first];
    for k in 0..4 {
        let [a, b, c] = face_of(&first, k);
        tets.push([b, a, c, GHOST]);
    }

    for (i, p) in pts.iter().enumerate() {
        if first.contains(&i) {
            continue;
        }
        let mut conflict = Vec::with_capacity(tets.len());
        for t in &tets {
            conflict.push(in_conflict(pts, t, p)?);
        }
        if !conflict.iter().any(|&c| c) {
            return Err(Degenerate);
        }

        let mut boundary: BTreeMap<[usize; 3], ([usize; 3], u32)> = BTreeMap::new();
        for (t, _) in tets.iter().zip(&conflict).filter(|(_, &c)| c) {
            for k in 0..4 {
                let face = face_of(t, k);
                let mut key = face;
                key.sort_unstable();
                boundary.entry(key).or_insert((face, 0)).1 += 1;
            }
        }

        let mut kept: Vec<[usize; 4]> = tets
            .iter()
            .zip(&conflict)
            .filter(|(_, &c)| !c)
            .map(|(t, _)| *t)
            .collect();
        for (face, count) in boundary.values() {
            if *count == 1 {
                kept.push([face[0], face[1], face[2], i]);
            }
        }
        tets = kept;
    }

    Ok(tets.into_iter().filter(|t| !t.contains(&GHOST)).collect())
}

fn jitter(pts: &[[f64; 3]], scale: f64) -> Vec<[f64; 3]> {
    let mut lo = [f64::INFINITY; 3];
    let mut hi = [f64::NEG_INFINITY; 3];
    for p in pts {
        for a in 0..3 {
            lo[a] = lo[a].min(p[a]);
            hi[a] = hi[a].max(p[a]);
        }
    }
    let diag = (0..3).map(|a| (hi[a] - lo[a]).powi(2)).sum::<f64>().sqrt();
    let amount = scale * diag.max(f64::MIN_POSITIVE);
    pts.iter()
        .enumerate()
        .map(|(i, p)| {
            let mut rng = ChaCha8Rng::seed_from_u64(i as u64);
            std::array::from_fn(|a| p[a] + amount * rng.random_range(-1.0..1.0))
        })
        .collect()
}

/// Delaunay tetrahedralization of `points` (at least 4, not all coplanar).
pub fn delaunay_tetrahedra(points: &[[f64; 3]]) -> Result<Triangulation> {
    if points.len() < 4 {
        return Err(Error::DegenerateInput(format!(
            "{} points, a tetrahedralization needs at least 4",
            points.len()
        )));
    }
    if points.iter().flatten().any(|v| !v.is_finite()) {
        return Err(Error::DegenerateInput("non-finite coordinates".into()));
    }
    check_spread(points)?;
    if let Ok(tets) = bowyer_watson(points) {
        return Ok(Triangulation {
            tetrahedra: tets,
            jittered: false,
        });
    }
    for scale in JITTER_SCALES {
        if let Ok(tets) = bowyer_watson(&jitter(points, scale)) {
            return Ok(Triangulation {
                tetrahedra: tets,
                jittered: true,
            });
        }
    }
    Err(Error::DegenerateInput(
        "degenerate configuration persists after jittering".into(),
    ))
}

/// Rejects point clouds that are (numerically) coplanar or collinear.
fn check_spread(points: &[[f64; 3]]) -> Result<()> {
    let n = points.len() as f64;
    let mean: [f64; 3] = std::array::from_fn(|a| points.iter().map(|p| p[a]).sum::<f64>() / n);
    let mut scatter = nalgebra::Matrix3::<f64>::zeros();
    for p in points {
        let d = nalgebra::Vector3::new(p[0] - mean[0], p[1] - mean[1], p[2] - mean[2]);
        scatter += d * d.transpose();
    }
    let sv = crate::linalg::singular_values(nalgebra::DMatrix::from_column_slice(3, 3, scatter.as_slice()))?;
    if !(sv.min() > 1e-10 * sv.max()) {
        return Err(Error::DegenerateInput(
            "points are coplanar or collinear".into(),
        ));
    }
    Ok(())
}
