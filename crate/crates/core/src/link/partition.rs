use rustc_hash::FxHashMap;

use crate::sparse::{SparseTensor, VoxelCoord};
use crate::{Error, Real, Result};

/// Assignment of voxels to non-overlapping `s^3` blocks.
///
/// Block ids follow first appearance in row order, and every member list is
/// sorted by row, so iteration order is a function of the tensor alone.
#[derive(Debug, Clone)]
pub struct BlockPartition {
    block_size: i32,
    blocks: Vec<VoxelCoord>,
    registry: FxHashMap<u64, u32>,
    voxel_block: Vec<u32>,
    block_voxels: Vec<Vec<u32>>,
}

impl BlockPartition {
    pub fn block_size(&self) -> i32 {
        self.block_size
    }

    pub fn num_blocks(&self) -> usize {
        self.blocks.len()
    }

    /// Block coordinate (`floor(p / s)` per axis, same batch) of block `id`.
    pub fn block_coord(&self, id: usize) -> VoxelCoord {
        self.blocks[id]
    }

    pub fn block_of(&self, row: usize) -> usize {
        self.voxel_block[row] as usize
    }

    pub fn voxel_blocks(&self) -> &[u32] {
        &self.voxel_block
    }

    pub fn members(&self, id: usize) -> &[u32] {
        &self.block_voxels[id]
    }

    pub fn lookup(&self, block: &VoxelCoord) -> Option<usize> {
        let key = block.pack_key().ok()?;
        self.registry.get(&key).map(|&b| b as usize)
    }
}

/// Groups voxels by the hash of `(batch, floor(x/s), floor(y/s), floor(z/s))`.
pub fn partition_blocks<T: Real>(t: &SparseTensor<T>, block_size: i32) -> Result<BlockPartition> {
    if block_size < 1 {
        return Err(Error::config(format!(
            "block size must be >= 1, got {block_size}"
        )));
    }
    let mut registry = FxHashMap::default();
    let mut blocks = Vec::new();
    let mut block_voxels: Vec<Vec<u32>> = Vec::new();
    let mut voxel_block = Vec::with_capacity(t.len());
    for (row, c) in t.coords().iter().enumerate() {
        let b = c.floor_div(block_size);
        let id = *registry.entry(b.pack_key()?).or_insert_with(|| {
            blocks.push(b);
            block_voxels.push(Vec::new());
            (blocks.len() - 1) as u32
        });
        block_voxels[id as usize].push(row as u32);
        voxel_block.push(id);
    }
    Ok(BlockPartition {
        block_size,
        blocks,
        registry,
        voxel_block,
        block_voxels,
    })
}

/// Per-axis block offsets of an `r`-wide neighborhood: centered for odd `r`,
/// `-floor(r/2) ..= ceil(r/2) - 1` for even `r`.
pub fn neighbor_offsets(range: usize) -> Vec<[i32; 3]> {
    let (lo, hi) = super::proxy::offset_bounds(range);
    let mut v = Vec::with_capacity(range.pow(3));
    for dx in lo..=hi {
        for dy in lo..=hi {
            for dz in lo..=hi {
                v.push([dx, dy, dz]);
            }
        }
    }
    v
}
