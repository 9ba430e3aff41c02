use std::fmt;

use crate::{Error, Result};

/// Smallest representable spatial component.
pub const COORD_MIN: i32 = -(1 << 15);
/// Largest representable spatial component.
pub const COORD_MAX: i32 = (1 << 15) - 1;
/// Batch indices must be strictly below this value.
pub const BATCH_LIMIT: u32 = 1 << 16;

const OFFSET: i64 = 1 << 15;
const FIELD_MASK: u64 = 0xFFFF;

/// Integer voxel coordinate with a batch index.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Default)]
pub struct VoxelCoord {
    pub batch: u32,
    pub x: i32,
    pub y: i32,
    pub z: i32,
}

impl VoxelCoord {
    pub const fn new(batch: u32, x: i32, y: i32, z: i32) -> Self {
        Self { batch, x, y, z }
    }

    pub fn xyz(&self) -> [i32; 3] {
        [self.x, self.y, self.z]
    }

    /// Builds a coordinate from wide components, rejecting anything that
    /// cannot be packed.
    pub fn checked(batch: i64, x: i64, y: i64, z: i64) -> Result<Self> {
        if !(0..BATCH_LIMIT as i64).contains(&batch) {
            return Err(Error::Bounds {
                axis: "batch",
                value: batch,
            });
        }
        let axis = |name: &'static str, v: i64| -> Result<i32> {
            if (COORD_MIN as i64..=COORD_MAX as i64).contains(&v) {
                Ok(v as i32)
            } else {
                Err(Error::Bounds { axis: name, value: v })
            }
        };
        Ok(Self {
            batch: batch as u32,
            x: axis("x", x)?,
            y: axis("y", y)?,
            z: axis("z", z)?,
        })
    }

    pub fn in_bounds(&self) -> bool {
        self.batch < BATCH_LIMIT
            && [self.x, self.y, self.z]
                .iter()
                .all(|v| (COORD_MIN..=COORD_MAX).contains(v))
    }

    /// Packs the coordinate as `batch(16) | x+2^15 (16) | y+2^15 (16) | z+2^15 (16)`.
    pub fn pack_key(&self) -> Result<u64> {
        let c = Self::checked(self.batch as i64, self.x as i64, self.y as i64, self.z as i64)?;
        Ok(((c.batch as u64) << 48)
            | (((c.x as i64 + OFFSET) as u64) << 32)
            | (((c.y as i64 + OFFSET) as u64) << 16)
            | ((c.z as i64 + OFFSET) as u64))
    }

    pub fn unpack_key(key: u64) -> Self {
        let field = |shift: u32| ((key >> shift) & FIELD_MASK) as i64 - OFFSET;
        Self {
            batch: (key >> 48) as u32,
            x: field(32) as i32,
            y: field(16) as i32,
            z: field(0) as i32,
        }
    }

    /// Component-wise translation of the spatial part; the batch is kept.
    pub fn offset(&self, d: [i32; 3]) -> Self {
        Self {
            batch: self.batch,
            x: self.x.wrapping_add(d[0]),
            y: self.y.wrapping_add(d[1]),
            z: self.z.wrapping_add(d[2]),
        }
    }

    /// Floor division of every spatial component by `s`.
    pub fn floor_div(&self, s: i32) -> Self {
        Self {
            batch: self.batch,
            x: floor_div(self.x, s),
            y: floor_div(self.y, s),
            z: floor_div(self.z, s),
        }
    }
}

impl fmt::Display for VoxelCoord {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "({}, {}, {}, {})", self.batch, self.x, self.y, self.z)
    }
}

/// Arithmetic floor division (rounds toward negative infinity).
pub fn floor_div(v: i32, s: i32) -> i32 {
    v.div_euclid(s)
}
