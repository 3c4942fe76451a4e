//! Segmentation label volumes, region centroids, and label-based pairing.

use std::collections::{BTreeMap, BTreeSet};
use std::path::Path;

use nalgebra::DVector;
use rayon::prelude::*;

use crate::affine::PointSet;
use crate::error::{Error, Result};
use crate::grid::Grid;
use crate::volume::{Volume, VolumeData};

/// Integer label per voxel; 0 is background.
#[derive(Debug, Clone, PartialEq)]
pub struct LabelVolume {
    grid: Grid,
    data: Vec<u32>,
}

impl LabelVolume {
    pub fn new(grid: Grid, data: Vec<u32>) -> Result<Self> {
        if data.len() != grid.len() {
            return Err(Error::MalformedHeader(format!(
                "{} labels for {} voxels",
                data.len(),
                grid.len()
            )));
        }
        Ok(Self { grid, data })
    }

    pub fn grid(&self) -> &Grid {
        &self.grid
    }

    pub fn data(&self) -> &[u32] {
        &self.data
    }

    pub fn with_grid(self, grid: Grid) -> Result<Self> {
        Self::new(grid, self.data)
    }

    /// Distinct non-zero labels, ascending.
    pub fn labels(&self) -> Vec<u32> {
        let set: BTreeSet<u32> = self.data.iter().copied().filter(|&l| l != 0).collect();
        set.into_iter().collect()
    }

    /// Packs into the narrowest integer element type that holds every label.
    pub fn to_volume(&self) -> Volume {
        let max = self.data.iter().copied().max().unwrap_or(0);
        let data = if max <= u8::MAX as u32 {
            VolumeData::U8(self.data.iter().map(|&l| l as u8).collect())
        } else if max <= i16::MAX as u32 {
            VolumeData::I16(self.data.iter().map(|&l| l as i16).collect())
        } else {
            VolumeData::I32(self.data.iter().map(|&l| l as i32).collect())
        };
        Volume::new(self.grid.clone(), 1, data).expect("length matches grid")
    }
}

impl TryFrom<&Volume> for LabelVolume {
    type Error = Error;

    fn try_from(v: &Volume) -> Result<Self> {
        if v.channels() != 1 {
            return Err(Error::InvalidLabels("label volume must be scalar".into()));
        }
        let data = (0..v.grid().len())
            .map(|i| {
                let x = v.value(i, 0);
                if x < 0.0 || x.fract() != 0.0 || x > u32::MAX as f64 || !x.is_finite() {
                    Err(Error::InvalidLabels(format!("voxel value {x} is not a label")))
                } else {
                    Ok(x as u32)
                }
            })
            .collect::<Result<Vec<u32>>>()?;
        LabelVolume::new(v.grid().clone(), data)
    }
}

/// Labels to ignore and labels to merge into groups.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct LabelSelection {
    excluded: BTreeSet<u32>,
    merge_map: BTreeMap<u32, u32>,
}

impl LabelSelection {
    pub fn new(excluded: BTreeSet<u32>, merge_map: BTreeMap<u32, u32>) -> Result<Self> {
        if let Some(l) = merge_map.keys().find(|l| excluded.contains(l)) {
            return Err(Error::InvalidConfig(format!(
                "label {l} is both excluded and merged"
            )));
        }
        Ok(Self {
            excluded,
            merge_map,
        })
    }

    pub fn all() -> Self {
        Self::default()
    }

    pub fn excluding(labels: impl IntoIterator<Item = u32>) -> Self {
        Self {
            excluded: labels.into_iter().collect(),
            merge_map: BTreeMap::new(),
        }
    }

    pub fn excluded(&self) -> &BTreeSet<u32> {
        &self.excluded
    }

    pub fn merge_map(&self) -> &BTreeMap<u32, u32> {
        &self.merge_map
    }

    /// Label a voxel counts towards, or `None` when it is dropped.
    ///
    /// Background (0) is always dropped; exclusion applies both to the
    /// original label and to its merge target.
    pub fn resolve(&self, label: u32) -> Option<u32> {
        if label == 0 || self.excluded.contains(&label) {
            return None;
        }
        let mapped = self.merge_map.get(&label).copied().unwrap_or(label);
        (mapped != 0 && !self.excluded.contains(&mapped)).then_some(mapped)
    }

    /// Parses the text format: one label id per line to exclude, or
    /// `merge <src> <dst>`; `#` starts a comment.
    pub fn parse(text: &str) -> std::result::Result<Self, String> {
        let mut excluded = BTreeSet::new();
        let mut merge_map = BTreeMap::new();
        for (n, line) in text.lines().enumerate() {
            let line = line.split('#').next().unwrap_or("").trim();
            if line.is_empty() {
                continue;
            }
            let tokens: Vec<&str> = line.split_whitespace().collect();
            let num = |s: &str| {
                s.parse::<u32>()
                    .map_err(|_| format!("line {}: '{s}' is not a label id", n + 1))
            };
            match tokens.as_slice() {
                [id] => {
                    excluded.insert(num(id)?);
                }
                ["merge", src, dst] => {
                    merge_map.insert(num(src)?, num(dst)?);
                }
                _ => return Err(format!("line {}: cannot parse '{line}'", n + 1)),
            }
        }
        Self::new(excluded, merge_map).map_err(|e| e.to_string())
    }

    pub fn read(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        Self::parse(&text).map_err(|m| Error::parse(path, m))
    }
}

/// Voxel count and integer index sums of one label.
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq)]
struct Accumulator {
    count: u64,
    sum: [u64; 3],
}

impl Accumulator {
    fn add(&mut self, other: &Accumulator) {
        self.count += other.count;
        for a in 0..3 {
            self.sum[a] += other.sum[a];
        }
    }
}

/// Per-label voxel statistics. Index sums are exact integers, so the result
/// does not depend on how slices are split across threads.
fn accumulate(vol: &LabelVolume, sel: &LabelSelection) -> BTreeMap<u32, Accumulator> {
    let grid = vol.grid();
    let [nx, ny, _] = grid.dims();
    let per_slice: Vec<BTreeMap<u32, Accumulator>> = vol
        .data()
        .par_chunks(grid.slice_len())
        .enumerate()
        .map(|(k, slice)| {
            let mut map: BTreeMap<u32, Accumulator> = BTreeMap::new();
            let mut last: Option<(u32, Accumulator)> = None;
            for j in 0..ny {
                for i in 0..nx {
                    let label = slice[i + nx * j];
                    if label == 0 {
                        continue;
                    }
                    match last.as_mut() {
                        Some((l, acc)) if *l == label => {
                            acc.count += 1;
                            acc.sum[0] += i as u64;
                            acc.sum[1] += j as u64;
                            acc.sum[2] += k as u64;
                        }
                        _ => {
                            if let Some((l, acc)) = last.take() {
                                map.entry(l).or_default().add(&acc);
                            }
                            last = Some((
                                label,
                                Accumulator {
                                    count: 1,
                                    sum: [i as u64, j as u64, k as u64],
                                },
                            ));
                        }
                    }
                }
            }
            if let Some((l, acc)) = last {
                map.entry(l).or_default().add(&acc);
            }
            map
        })
        .collect();

    let mut total: BTreeMap<u32, Accumulator> = BTreeMap::new();
    for map in per_slice {
        for (label, acc) in map {
            if let Some(target) = sel.resolve(label) {
                total.entry(target).or_default().add(&acc);
            }
        }
    }
    total
}

/// Centroids of every retained label together with their voxel counts.
pub fn extract_centroids_with_counts(
    vol: &LabelVolume,
    sel: &LabelSelection,
) -> Result<(PointSet, Vec<u64>)> {
    let stats = accumulate(vol, sel);
    if stats.is_empty() {
        return Err(Error::EmptyPointSet);
    }
    let grid = vol.grid();
    let mut labels = Vec::with_capacity(stats.len());
    let mut points = Vec::with_capacity(stats.len());
    let mut counts = Vec::with_capacity(stats.len());
    for (label, acc) in stats {
        let n = acc.count as f64;
        let mean_index = acc.sum.map(|s| s as f64 / n);
        labels.push(label);
        points.push(DVector::from_column_slice(&grid.index_to_world(mean_index)));
        counts.push(acc.count);
    }
    Ok((PointSet::new(labels, points)?, counts))
}

/// World-space centroid of each retained label present in the volume.
pub fn extract_centroids(vol: &LabelVolume, sel: &LabelSelection) -> Result<PointSet> {
    extract_centroids_with_counts(vol, sel).map(|(ps, _)| ps)
}

/// Restricts both sets to their common labels.
pub fn pair_point_sets(reference: &PointSet, moving: &PointSet) -> Result<(PointSet, PointSet)> {
    if reference.dim() != moving.dim() {
        return Err(Error::DimensionMismatch {
            expected: reference.dim(),
            found: moving.dim(),
        });
    }
    let mut ri = Vec::new();
    let mut mi = Vec::new();
    for (i, &label) in reference.labels().iter().enumerate() {
        if let Some(j) = moving.index_of(label) {
            ri.push(i);
            mi.push(j);
        }
    }
    let required = reference.dim() + 1;
    if ri.len() < required {
        return Err(Error::InsufficientPoints {
            found: ri.len(),
            required,
        });
    }
    Ok((reference.subset(&ri)?, moving.subset(&mi)?))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::affine::AffineTransform;
    use nalgebra::{Matrix3, Vector3};
    use proptest::prelude::*;

    fn empty(dims: [usize; 3], spacing: f64) -> LabelVolume {
        let g = Grid::isotropic(dims, spacing, [0.0; 3]).unwrap();
        let n = g.len();
        LabelVolume::new(g, vec![0; n]).unwrap()
    }

    fn set(vol: &mut LabelVolume, i: usize, j: usize, k: usize, label: u32) {
        let l = vol.grid.linear_index(i, j, k);
        vol.data[l] = label;
    }

    #[test]
    fn single_voxel_centroid() {
        let mut v = empty([6, 6, 6], 1.0);
        set(&mut v, 2, 3, 4, 7);
        let ps = extract_centroids(&v, &LabelSelection::all()).unwrap();
        assert_eq!(ps.labels(), &[7]);
        assert_eq!(ps.point(0).as_slice(), &[2.0, 3.0, 4.0]);
    }

    #[test]
    fn cube_centroid_with_spacing() {
        let mut v = empty([10, 10, 10], 2.0);
        for i in 4..=6 {
            for j in 4..=6 {
                for k in 4..=6 {
                    set(&mut v, i, j, k, 5);
                }
            }
        }
        let ps = extract_centroids(&v, &LabelSelection::all()).unwrap();
        assert_eq!(ps.point(0).as_slice(), &[10.0, 10.0, 10.0]);
    }

    #[test]
    fn l_shape_matches_voxel_enumeration() {
        let a = AffineTransform::from_matrix3(
            &Matrix3::new(1.2, 0.1, 0.0, -0.05, 0.9, 0.2, 0.0, 0.03, 1.5),
            &Vector3::new(-30.0, 12.5, 7.0),
        )
        .unwrap();
        let g = Grid::new([8, 8, 8], a).unwrap();
        let mut v = LabelVolume::new(g.clone(), vec![0; 512]).unwrap();
        let mut voxels = Vec::new();
        for i in 1..6 {
            voxels.push((i, 1, 2));
        }
        for j in 2..7 {
            voxels.push((1, j, 2));
        }
        voxels.push((1, 6, 3));
        for &(i, j, k) in &voxels {
            set(&mut v, i, j, k, 3);
        }
        let mut sum = [0.0; 3];
        for &(i, j, k) in &voxels {
            let w = g.voxel_world(i, j, k);
            for a in 0..3 {
                sum[a] += w[a];
            }
        }
        let ps = extract_centroids(&v, &LabelSelection::all()).unwrap();
        for a in 0..3 {
            assert!((ps.point(0)[a] - sum[a] / voxels.len() as f64).abs() < 1e-12);
        }
    }

    #[test]
    fn empty_selection_is_an_error() {
        let mut v = empty([3, 3, 3], 1.0);
        set(&mut v, 1, 1, 1, 4);
        let err = extract_centroids(&v, &LabelSelection::excluding([4])).unwrap_err();
        assert!(matches!(err, Error::EmptyPointSet));
    }

    #[test]
    fn merge_then_extract_is_count_weighted_mean() {
        let mut v = empty([12, 12, 12], 1.5);
        let mut n = 0u32;
        for k in 0..12 {
            for j in 0..12 {
                for i in 0..12 {
                    n = n.wrapping_mul(1103515245).wrapping_add(12345);
                    set(&mut v, i, j, k, (n >> 16) % 6);
                }
            }
        }
        let (plain, counts) = extract_centroids_with_counts(&v, &LabelSelection::all()).unwrap();
        let sel = LabelSelection::parse("merge 2 9\nmerge 3 9\n5 # drop\n").unwrap();
        let merged = extract_centroids(&v, &sel).unwrap();
        assert_eq!(merged.labels(), &[1, 4, 9]);
        let i2 = plain.index_of(2).unwrap();
        let i3 = plain.index_of(3).unwrap();
        let (c2, c3) = (counts[i2] as f64, counts[i3] as f64);
        let expect = (plain.point(i2) * c2 + plain.point(i3) * c3) / (c2 + c3);
        assert!((merged.point(merged.index_of(9).unwrap()) - expect).amax() < 1e-10);
    }

    #[test]
    fn centroids_are_equivariant_under_affine_headers() {
        let mut v = empty([9, 9, 9], 1.0);
        for (l, (i, j, k)) in [(1, (1, 2, 3)), (1, (2, 2, 3)), (2, (7, 7, 1)), (3, (4, 0, 8)), (3, (5, 1, 7))] {
            set(&mut v, i, j, k, l);
        }
        let a = AffineTransform::from_matrix3(
            &Matrix3::new(0.9, 0.2, 0.0, -0.1, 1.1, 0.3, 0.05, 0.0, 1.3),
            &Vector3::new(4.0, -7.0, 1.5),
        )
        .unwrap();
        let moved_grid = Grid::new(v.grid.dims(), a.compose(v.grid.voxel_to_world()).unwrap()).unwrap();
        let before = extract_centroids(&v, &LabelSelection::all()).unwrap();
        let after = extract_centroids(&v.clone().with_grid(moved_grid).unwrap(), &LabelSelection::all()).unwrap();
        let expect = before.transformed(&a).unwrap();
        for i in 0..before.len() {
            assert!((after.point(i) - expect.point(i)).amax() < 1e-10);
        }
    }

    #[test]
    fn selection_parsing() {
        let sel = LabelSelection::parse("# header\n2\n41 # wm\nmerge 1003 3\n").unwrap();
        assert_eq!(sel.resolve(2), None);
        assert_eq!(sel.resolve(41), None);
        assert_eq!(sel.resolve(1003), Some(3));
        assert_eq!(sel.resolve(0), None);
        assert_eq!(sel.resolve(17), Some(17));
        assert!(LabelSelection::parse("merge 4 5\n4\n").is_err());
        assert!(LabelSelection::parse("merge x 5\n").is_err());
    }

    fn ps(labels: &[u32]) -> PointSet {
        let pts: Vec<[f64; 3]> = labels
            .iter()
            .map(|&l| [l as f64, (l * l % 7) as f64, (l % 3) as f64])
            .collect();
        PointSet::from_arrays(labels.to_vec(), &pts).unwrap()
    }

    #[test]
    fn pairing_drops_unshared_labels() {
        let (r, m) = pair_point_sets(&ps(&[1, 2, 3, 4, 10]), &ps(&[4, 3, 2, 1])).unwrap();
        assert_eq!(r.labels(), &[1, 2, 3, 4]);
        assert_eq!(m.labels(), &[1, 2, 3, 4]);
        let err = pair_point_sets(&ps(&[1, 2, 3]), &ps(&[1, 2, 3])).unwrap_err();
        assert!(matches!(err, Error::InsufficientPoints { found: 3, required: 4 }));
    }

    proptest! {
        #[test]
        fn pairing_matches_dictionary_join(
            a in proptest::collection::btree_set(1u32..60, 4..30),
            b in proptest::collection::btree_set(1u32..60, 4..30),
            seed in 0u64..1000,
        ) {
            // Shuffle the input order; the point set sorts internally.
            let mut la: Vec<u32> = a.iter().copied().collect();
            let mut lb: Vec<u32> = b.iter().copied().collect();
            let n = la.len();
            la.rotate_left((seed as usize) % n);
            lb.reverse();
            let pa = ps(&la);
            let pb = PointSet::from_arrays(lb.clone(), &lb.iter().map(|&l| [l as f64 * 2.0, 1.0, 0.0]).collect::<Vec<_>>()).unwrap();
            let common: BTreeMap<u32, ([f64; 3], [f64; 3])> = a
                .intersection(&b)
                .map(|&l| (l, ([l as f64, (l * l % 7) as f64, (l % 3) as f64], [l as f64 * 2.0, 1.0, 0.0])))
                .collect();
            match pair_point_sets(&pa, &pb) {
                Ok((r, m)) => {
                    prop_assert!(common.len() >= 4);
                    prop_assert_eq!(r.labels(), m.labels());
                    prop_assert_eq!(r.labels().to_vec(), common.keys().copied().collect::<Vec<_>>());
                    for (i, (_, (x, y))) in common.iter().enumerate() {
                        prop_assert_eq!(r.point(i).as_slice(), &x[..]);
                        prop_assert_eq!(m.point(i).as_slice(), &y[..]);
                    }
                    // Idempotent, and symmetric in label content.
                    let (r2, m2) = pair_point_sets(&r, &m).unwrap();
                    prop_assert_eq!(&r2, &r);
                    prop_assert_eq!(&m2, &m);
                    let (m3, r3) = pair_point_sets(&pb, &pa).unwrap();
                    prop_assert_eq!(m3.labels(), r3.labels());
                    prop_assert_eq!(r3.labels(), r.labels());
                }
                Err(Error::InsufficientPoints { found, .. }) => prop_assert_eq!(found, common.len()),
                Err(e) => prop_assert!(false, "unexpected error {e}"),
            }
        }
    }
}
