use std::sync::Arc;

use crate::sparse::{CoordSet, SparseTensor, VoxelCoord};
use crate::{Error, Real, Result};

/// Neighbor enumeration of a sparse convolution.
///
/// `pairs[n]` lists `(in_row, out_row)` for offset `offsets[n]`, sorted by
/// `(out_row, in_row)` so every reduction runs in a fixed order.
#[derive(Debug, Clone)]
pub struct KernelMap {
    kernel_size: usize,
    stride: usize,
    offsets: Vec<[i32; 3]>,
    pairs: Vec<Vec<(u32, u32)>>,
    in_len: usize,
    out: Arc<CoordSet>,
}

impl KernelMap {
    /// Stride 1 (odd `kernel_size`): submanifold map, outputs are the inputs.
    /// Stride 2 (`kernel_size == 2`): outputs are the unique `floor(c / 2)`.
    pub fn build<T: Real>(t: &SparseTensor<T>, kernel_size: usize, stride: usize) -> Result<Self> {
        match (kernel_size, stride) {
            (k, 1) if k % 2 == 1 => Ok(Self::submanifold(t.coord_set(), k)),
            (2, 2) => Self::downsample(t.coord_set()),
            (k, s) => Err(Error::config(format!(
                "unsupported kernel_size={k} with stride={s}; \
                 stride 1 needs an odd kernel, stride 2 needs kernel 2"
            ))),
        }
    }

    pub fn submanifold(set: &Arc<CoordSet>, kernel_size: usize) -> Self {
        let half = (kernel_size / 2) as i32;
        let offsets = cube_offsets(-half, kernel_size);
        let mut pairs = vec![Vec::new(); offsets.len()];
        for (out_row, c) in set.coords().iter().enumerate() {
            for (n, d) in offsets.iter().enumerate() {
                if let Some(in_row) = set.query(&c.offset(*d)) {
                    pairs[n].push((in_row as u32, out_row as u32));
                }
            }
        }
        Self {
            kernel_size,
            stride: 1,
            offsets,
            pairs,
            in_len: set.len(),
            out: set.clone(),
        }
    }

    pub fn downsample(set: &Arc<CoordSet>) -> Result<Self> {
        let mut out: Vec<VoxelCoord> = set.coords().iter().map(|c| c.floor_div(2)).collect();
        out.sort_unstable();
        out.dedup();
        let out = Arc::new(CoordSet::sorted(out)?);
        let offsets = cube_offsets(0, 2);
        let mut pairs = vec![Vec::new(); offsets.len()];
        for (out_row, o) in out.coords().iter().enumerate() {
            let base = VoxelCoord::new(o.batch, o.x * 2, o.y * 2, o.z * 2);
            for (n, d) in offsets.iter().enumerate() {
                if let Some(in_row) = set.query(&base.offset(*d)) {
                    pairs[n].push((in_row as u32, out_row as u32));
                }
            }
        }
        Ok(Self {
            kernel_size: 2,
            stride: 2,
            offsets,
            pairs,
            in_len: set.len(),
            out,
        })
    }

    pub fn kernel_size(&self) -> usize {
        self.kernel_size
    }

    pub fn stride(&self) -> usize {
        self.stride
    }

    pub fn offsets(&self) -> &[[i32; 3]] {
        &self.offsets
    }

    pub fn pairs(&self, n: usize) -> &[(u32, u32)] {
        &self.pairs[n]
    }

    pub fn in_len(&self) -> usize {
        self.in_len
    }

    pub fn out_set(&self) -> &Arc<CoordSet> {
        &self.out
    }

    pub fn out_coords(&self) -> &[VoxelCoord] {
        self.out.coords()
    }

    pub fn num_pairs(&self) -> usize {
        self.pairs.iter().map(Vec::len).sum()
    }
}

/// All offsets of a `k^3` cube starting at `lo` on each axis, x-major.
fn cube_offsets(lo: i32, k: usize) -> Vec<[i32; 3]> {
    let k = k as i32;
    let mut v = Vec::with_capacity((k * k * k) as usize);
    for dx in lo..lo + k {
        for dy in lo..lo + k {
            for dz in lo..lo + k {
                v.push([dx, dy, dz]);
            }
        }
    }
    v
}

#[cfg(test)]
mod tests {
    use super::*;

    fn tensor(coords: &[[i32; 3]]) -> SparseTensor<f64> {
        let coords: Vec<VoxelCoord> = coords
            .iter()
            .map(|c| VoxelCoord::new(0, c[0], c[1], c[2]))
            .collect();
        let n = coords.len();
        SparseTensor::new(coords, vec![0.0; n], 1).unwrap()
    }

    fn count_at(km: &KernelMap, d: [i32; 3]) -> usize {
        let n = km.offsets().iter().position(|o| *o == d).unwrap();
        km.pairs(n).len()
    }

    #[test]
    fn single_voxel_has_only_center_pair() {
        let km = KernelMap::build(&tensor(&[[0, 0, 0]]), 3, 1).unwrap();
        assert_eq!(km.num_pairs(), 1);
        assert_eq!(count_at(&km, [0, 0, 0]), 1);
    }

    #[test]
    fn collinear_voxels() {
        let km = KernelMap::build(&tensor(&[[0, 0, 0], [1, 0, 0], [2, 0, 0]]), 3, 1).unwrap();
        assert_eq!(count_at(&km, [1, 0, 0]), 2);
        assert_eq!(count_at(&km, [-1, 0, 0]), 2);
        assert_eq!(count_at(&km, [0, 0, 0]), 3);
        assert_eq!(km.num_pairs(), 7);
        let t = tensor(&[[0, 0, 0], [1, 0, 0], [2, 0, 0]]);
        for (n, d) in km.offsets().iter().enumerate() {
            for &(i, o) in km.pairs(n) {
                assert_eq!(t.coords()[o as usize].offset(*d), t.coords()[i as usize]);
            }
        }
    }

    #[test]
    fn downsample_merges_children() {
        let km = KernelMap::build(&tensor(&[[0, 0, 0], [1, 1, 1]]), 2, 2).unwrap();
        assert_eq!(km.out_coords(), &[VoxelCoord::new(0, 0, 0, 0)]);
        assert_eq!(km.num_pairs(), 2);
    }

    #[test]
    fn downsample_floors_negatives() {
        let km = KernelMap::build(&tensor(&[[-1, 0, 3], [-2, 1, 2]]), 2, 2).unwrap();
        assert_eq!(km.out_coords(), &[VoxelCoord::new(0, -1, 0, 1)]);
    }

    #[test]
    fn unsupported_combinations() {
        let t = tensor(&[[0, 0, 0]]);
        assert!(matches!(KernelMap::build(&t, 2, 1), Err(Error::Config(_))));
        assert!(matches!(KernelMap::build(&t, 3, 2), Err(Error::Config(_))));
        assert!(matches!(KernelMap::build(&t, 1, 3), Err(Error::Config(_))));
    }

    #[test]
    fn pairs_are_sorted_by_output() {
        let t = tensor(&[[0, 0, 0], [1, 0, 0], [0, 1, 0], [1, 1, 1], [2, 2, 2]]);
        let km = KernelMap::build(&t, 3, 1).unwrap();
        for n in 0..km.offsets().len() {
            let p = km.pairs(n);
            assert!(p.windows(2).all(|w| (w[0].1, w[0].0) < (w[1].1, w[1].0)));
        }
    }
}
