use std::sync::Arc;

use rustc_hash::FxHashMap;

use super::{CoordSet, SparseTensor, VoxelCoord};
use crate::error::ensure_dim;
use crate::{Error, Real, Result};

/// Raw points in meters with a fixed-width attribute vector per point
/// (for LiDAR scans: a single intensity channel).
#[derive(Debug, Clone, Default, PartialEq)]
pub struct PointCloud {
    pub positions: Vec<[f32; 3]>,
    pub attributes: Vec<f32>,
    pub attr_dim: usize,
}

impl PointCloud {
    pub fn new(positions: Vec<[f32; 3]>, attributes: Vec<f32>, attr_dim: usize) -> Result<Self> {
        ensure_dim("point attributes", positions.len() * attr_dim, attributes.len())?;
        Ok(Self {
            positions,
            attributes,
            attr_dim,
        })
    }

    pub fn len(&self) -> usize {
        self.positions.len()
    }

    pub fn is_empty(&self) -> bool {
        self.positions.is_empty()
    }

    pub fn attributes_of(&self, i: usize) -> &[f32] {
        &self.attributes[i * self.attr_dim..(i + 1) * self.attr_dim]
    }

    pub fn validate(&self) -> Result<()> {
        ensure_dim(
            "point attributes",
            self.positions.len() * self.attr_dim,
            self.attributes.len(),
        )?;
        if self.positions.iter().flatten().any(|v| !v.is_finite()) {
            return Err(Error::NonFinite("point positions"));
        }
        if self.attributes.iter().any(|v| !v.is_finite()) {
            return Err(Error::NonFinite("point attributes"));
        }
        Ok(())
    }
}

/// Quantizes a cloud into batch-0 voxels of edge `voxel_size`, averaging the
/// attributes of points that land in the same voxel.
pub fn voxelize<T: Real>(cloud: &PointCloud, voxel_size: f64) -> Result<SparseTensor<T>> {
    voxelize_with_counts(cloud, voxel_size).map(|(t, _)| t)
}

/// Like [`voxelize`], also returning the number of points per voxel row.
///
/// Rows are ordered by packed coordinate key.
pub fn voxelize_with_counts<T: Real>(
    cloud: &PointCloud,
    voxel_size: f64,
) -> Result<(SparseTensor<T>, Vec<usize>)> {
    if !(voxel_size > 0.0 && voxel_size.is_finite()) {
        return Err(Error::config(format!(
            "voxel_size must be positive, got {voxel_size}"
        )));
    }
    cloud.validate()?;
    let dim = cloud.attr_dim;
    let mut acc: FxHashMap<u64, (Vec<f64>, usize)> = FxHashMap::default();
    for (i, p) in cloud.positions.iter().enumerate() {
        let q = |v: f32| (v as f64 / voxel_size).floor() as i64;
        let key = VoxelCoord::checked(0, q(p[0]), q(p[1]), q(p[2]))?.pack_key()?;
        let slot = acc.entry(key).or_insert_with(|| (vec![0.0; dim], 0));
        for (s, a) in slot.0.iter_mut().zip(cloud.attributes_of(i)) {
            *s += *a as f64;
        }
        slot.1 += 1;
    }
    let mut cells: Vec<(u64, (Vec<f64>, usize))> = acc.into_iter().collect();
    cells.sort_unstable_by_key(|(k, _)| *k);

    let mut coords = Vec::with_capacity(cells.len());
    let mut features = Vec::with_capacity(cells.len() * dim);
    let mut counts = Vec::with_capacity(cells.len());
    for (key, (sum, n)) in cells {
        coords.push(VoxelCoord::unpack_key(key));
        features.extend(sum.iter().map(|s| T::of(s / n as f64)));
        counts.push(n);
    }
    let set = Arc::new(CoordSet::new(coords)?);
    Ok((SparseTensor::from_set(set, features, dim)?, counts))
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::{Rng, SeedableRng};
    use std::collections::BTreeMap;

    fn cloud(points: &[([f32; 3], f32)]) -> PointCloud {
        PointCloud::new(
            points.iter().map(|p| p.0).collect(),
            points.iter().map(|p| p.1).collect(),
            1,
        )
        .unwrap()
    }

    #[test]
    fn nearby_points_merge_and_average() {
        let c = cloud(&[([0.01, 0.02, 0.03], 1.0), ([0.04, 0.01, 0.02], 3.0)]);
        let t: SparseTensor<f64> = voxelize(&c, 0.05).unwrap();
        assert_eq!(t.coords(), &[VoxelCoord::new(0, 0, 0, 0)]);
        assert!((t.row(0)[0] - 2.0).abs() < 1e-12);
    }

    #[test]
    fn negative_coordinates_floor() {
        let c = cloud(&[([-0.01, 0.0, 0.0], 0.0)]);
        let t: SparseTensor<f32> = voxelize(&c, 0.05).unwrap();
        assert_eq!(t.coords(), &[VoxelCoord::new(0, -1, 0, 0)]);
    }

    #[test]
    fn empty_cloud_gives_empty_tensor() {
        let t: SparseTensor<f32> = voxelize(&PointCloud::default(), 0.05).unwrap();
        assert!(t.is_empty());
    }

    #[test]
    fn out_of_bound_points_error() {
        let c = cloud(&[([5000.0, 0.0, 0.0], 0.0)]);
        assert!(matches!(
            voxelize::<f32>(&c, 0.05),
            Err(Error::Bounds { axis: "x", .. })
        ));
    }

    #[test]
    fn nan_points_error() {
        let c = cloud(&[([f32::NAN, 0.0, 0.0], 0.0)]);
        assert!(matches!(voxelize::<f32>(&c, 0.05), Err(Error::NonFinite(_))));
    }

    #[test]
    fn bad_voxel_size_is_config_error() {
        let c = cloud(&[([0.0, 0.0, 0.0], 0.0)]);
        assert!(matches!(voxelize::<f32>(&c, 0.0), Err(Error::Config(_))));
    }

    #[test]
    fn random_cloud_matches_regrouping_oracle() {
        let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(3);
        let points: Vec<([f32; 3], f32)> = (0..1000)
            .map(|_| {
                (
                    [
                        rng.random_range(-1.0..1.0),
                        rng.random_range(-1.0..1.0),
                        rng.random_range(-1.0..1.0),
                    ],
                    rng.random_range(0.0..1.0),
                )
            })
            .collect();
        let c = cloud(&points);
        let (t, counts) = voxelize_with_counts::<f64>(&c, 0.05).unwrap();

        let mut groups: BTreeMap<(i64, i64, i64), Vec<f64>> = BTreeMap::new();
        for (p, a) in &points {
            let key = (
                (p[0] as f64 / 0.05).floor() as i64,
                (p[1] as f64 / 0.05).floor() as i64,
                (p[2] as f64 / 0.05).floor() as i64,
            );
            groups.entry(key).or_default().push(*a as f64);
        }
        assert_eq!(t.len(), groups.len());
        for (row, v) in t.coords().iter().enumerate() {
            let members = &groups[&(v.x as i64, v.y as i64, v.z as i64)];
            assert_eq!(counts[row], members.len());
            let mean = members.iter().sum::<f64>() / members.len() as f64;
            assert!((t.row(row)[0] - mean).abs() < 1e-12);
        }
        let mass: f64 = (0..t.len()).map(|r| t.row(r)[0] * counts[r] as f64).sum();
        let expected: f64 = points.iter().map(|p| p.1 as f64).sum();
        assert!((mass - expected).abs() < 1e-9);
    }

    #[test]
    fn revoxelizing_centers_is_idempotent() {
        let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(5);
        let points: Vec<([f32; 3], f32)> = (0..500)
            .map(|_| {
                (
                    [
                        rng.random_range(-3.0..3.0),
                        rng.random_range(-3.0..3.0),
                        rng.random_range(-1.0..1.0),
                    ],
                    1.0,
                )
            })
            .collect();
        let t: SparseTensor<f32> = voxelize(&cloud(&points), 0.05).unwrap();
        let centers: Vec<([f32; 3], f32)> = t
            .coords()
            .iter()
            .map(|c| {
                let m = |v: i32| ((v as f64 + 0.5) * 0.05) as f32;
                ([m(c.x), m(c.y), m(c.z)], 1.0)
            })
            .collect();
        let again: SparseTensor<f32> = voxelize(&cloud(&centers), 0.05).unwrap();
        assert_eq!(again.coords(), t.coords());
    }
}
