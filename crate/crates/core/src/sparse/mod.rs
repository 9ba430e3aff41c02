//! Voxel coordinates, coordinate hashing and sparse feature tensors.

mod coord;
mod index;
mod tensor;
mod voxelize;

pub use coord::{floor_div, VoxelCoord, BATCH_LIMIT, COORD_MAX, COORD_MIN};
pub use index::{CoordIndex, CoordSet};
pub use tensor::SparseTensor;
pub use voxelize::{voxelize, voxelize_with_counts, PointCloud};
