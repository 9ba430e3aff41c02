use rustc_hash::FxHashMap;

use super::VoxelCoord;
use crate::{Error, Result};

/// Hash index from packed voxel keys to tensor rows.
#[derive(Debug, Clone, Default)]
pub struct CoordIndex {
    rows: FxHashMap<u64, usize>,
}

impl CoordIndex {
    /// Builds the index; fails on out-of-bound or duplicate coordinates.
    pub fn build(coords: &[VoxelCoord]) -> Result<Self> {
        let mut rows = FxHashMap::default();
        rows.reserve(coords.len());
        for (row, c) in coords.iter().enumerate() {
            if rows.insert(c.pack_key()?, row).is_some() {
                return Err(Error::DuplicateCoord(*c));
            }
        }
        Ok(Self { rows })
    }

    /// Row holding `c`, if present. Out-of-bound coordinates always miss.
    #[inline]
    pub fn query(&self, c: &VoxelCoord) -> Option<usize> {
        let key = c.pack_key().ok()?;
        self.rows.get(&key).copied()
    }

    #[inline]
    pub fn query_key(&self, key: u64) -> Option<usize> {
        self.rows.get(&key).copied()
    }

    pub fn len(&self) -> usize {
        self.rows.len()
    }

    pub fn is_empty(&self) -> bool {
        self.rows.is_empty()
    }
}

/// An immutable coordinate list together with its index.
///
/// Tensors produced by submanifold operators share their input's set through
/// an `Arc`, so coordinate preservation is visible by pointer identity.
#[derive(Debug, Clone, Default)]
pub struct CoordSet {
    coords: Vec<VoxelCoord>,
    index: CoordIndex,
}

impl CoordSet {
    pub fn new(coords: Vec<VoxelCoord>) -> Result<Self> {
        let index = CoordIndex::build(&coords)?;
        Ok(Self { coords, index })
    }

    /// Sorts by packed key before indexing, giving a canonical row order.
    pub fn sorted(mut coords: Vec<VoxelCoord>) -> Result<Self> {
        for c in &coords {
            c.pack_key()?;
        }
        coords.sort_unstable_by_key(|c| c.pack_key().unwrap_or(u64::MAX));
        Self::new(coords)
    }

    pub fn coords(&self) -> &[VoxelCoord] {
        &self.coords
    }

    pub fn index(&self) -> &CoordIndex {
        &self.index
    }

    pub fn query(&self, c: &VoxelCoord) -> Option<usize> {
        self.index.query(c)
    }

    pub fn len(&self) -> usize {
        self.coords.len()
    }

    pub fn is_empty(&self) -> bool {
        self.coords.is_empty()
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::{Rng, SeedableRng};
    use std::collections::HashSet;

    #[test]
    fn empty_index_misses_everything() {
        let idx = CoordIndex::build(&[]).unwrap();
        assert!(idx.is_empty());
        assert_eq!(idx.query(&VoxelCoord::new(0, 0, 0, 0)), None);
    }

    #[test]
    fn single_entry() {
        let idx = CoordIndex::build(&[VoxelCoord::new(0, 0, 0, 0)]).unwrap();
        assert_eq!(idx.query(&VoxelCoord::new(0, 0, 0, 0)), Some(0));
        assert_eq!(idx.query(&VoxelCoord::new(0, 1, 0, 0)), None);
    }

    #[test]
    fn duplicates_are_rejected() {
        let c = VoxelCoord::new(1, 2, 3, 4);
        assert!(matches!(
            CoordIndex::build(&[c, VoxelCoord::new(0, 0, 0, 0), c]),
            Err(Error::DuplicateCoord(d)) if d == c
        ));
    }

    #[test]
    fn random_hits_and_misses_agree_with_linear_scan() {
        let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(11);
        let draw = |rng: &mut rand_chacha::ChaCha8Rng| {
            VoxelCoord::new(
                rng.random_range(0..4),
                rng.random_range(-500..500),
                rng.random_range(-500..500),
                rng.random_range(-50..50),
            )
        };
        let mut seen = HashSet::new();
        let mut coords = Vec::new();
        while coords.len() < 10_000 {
            let c = draw(&mut rng);
            if seen.insert(c) {
                coords.push(c);
            }
        }
        let idx = CoordIndex::build(&coords).unwrap();
        for (row, c) in coords.iter().enumerate() {
            assert_eq!(idx.query(c), Some(row));
        }
        let mut absent = 0;
        while absent < 10_000 {
            let c = draw(&mut rng);
            if seen.insert(c) {
                // linear scan confirms absence independently of the hash
                assert!(!coords.contains(&c));
                assert_eq!(idx.query(&c), None);
                absent += 1;
            }
        }
    }

    #[test]
    fn sorted_set_orders_by_key() {
        let set = CoordSet::sorted(vec![
            VoxelCoord::new(1, 0, 0, 0),
            VoxelCoord::new(0, 5, 0, 0),
            VoxelCoord::new(0, -5, 0, 0),
        ])
        .unwrap();
        assert_eq!(
            set.coords(),
            &[
                VoxelCoord::new(0, -5, 0, 0),
                VoxelCoord::new(0, 5, 0, 0),
                VoxelCoord::new(1, 0, 0, 0)
            ]
        );
        for (row, c) in set.coords().iter().enumerate() {
            assert_eq!(set.query(c), Some(row));
        }
    }
}
