use std::ops::AddAssign;

use rayon::prelude::*;
use rustc_hash::FxHashMap;

use super::generator::Kernels;
use super::partition::{neighbor_offsets, BlockPartition};
use crate::error::ensure_dim;
use crate::sparse::{SparseTensor, VoxelCoord};
use crate::{Real, Result};

/// Work performed by one push / gather / pull pass.
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq)]
pub struct OpCounters {
    /// Kernel-weighted voxel deposits into proxies (one per voxel).
    pub push_macs: usize,
    /// Kernel-weighted voxel reconstructions from proxies (one per voxel).
    pub pull_macs: usize,
    /// Candidate neighbor block positions covered by gather (`r^3` per block).
    pub gather_probes: usize,
    /// Existing neighbor proxies actually summed during gather.
    pub gather_reads: usize,
}

impl OpCounters {
    pub fn kernel_macs(&self) -> usize {
        self.push_macs + self.pull_macs
    }
}

/// Deliberate corruption of the gather step, used as a negative control.
#[doc(hidden)]
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum GatherFault {
    /// Skip the first existing non-self neighbor of every block.
    DropNeighbor,
}

/// Per-block proxy sums and their neighborhood aggregates, `blocks x C`.
#[derive(Debug, Clone)]
pub struct ProxySet<T> {
    pub channels: usize,
    pub f0: Vec<T>,
    pub f1: Vec<T>,
    pub g0: Vec<T>,
    pub g1: Vec<T>,
    /// Non-empty voxels inside each block's neighborhood.
    pub count: Vec<usize>,
    pub counters: OpCounters,
}

impl<T: Real> ProxySet<T> {
    pub fn num_blocks(&self) -> usize {
        self.count.len()
    }

    pub fn f0_of(&self, b: usize) -> &[T] {
        &self.f0[b * self.channels..(b + 1) * self.channels]
    }

    pub fn f1_of(&self, b: usize) -> &[T] {
        &self.f1[b * self.channels..(b + 1) * self.channels]
    }

    pub fn g0_of(&self, b: usize) -> &[T] {
        &self.g0[b * self.channels..(b + 1) * self.channels]
    }

    pub fn g1_of(&self, b: usize) -> &[T] {
        &self.g1[b * self.channels..(b + 1) * self.channels]
    }
}

/// `f0_B = sum_{x in B} k0(x) * f_x` and likewise `f1_B`, channel-wise.
pub fn push_proxies<T: Real>(
    part: &BlockPartition,
    features: &[T],
    kernels: &Kernels<T>,
) -> Result<ProxySet<T>> {
    let c = kernels.channels;
    let n = part.voxel_blocks().len();
    ensure_dim("push features", n * c, features.len())?;
    ensure_dim("push kernels", n * c, kernels.k0.len())?;
    let nb = part.num_blocks();
    let mut f0 = vec![T::zero(); nb * c];
    let mut f1 = vec![T::zero(); nb * c];
    let mut macs = 0;
    for b in 0..nb {
        let (d0, d1) = (&mut f0[b * c..(b + 1) * c], &mut f1[b * c..(b + 1) * c]);
        for &row in part.members(b) {
            let r = row as usize * c;
            for i in 0..c {
                let f = features[r + i];
                d0[i] += kernels.k0[r + i] * f;
                d1[i] += kernels.k1[r + i] * f;
            }
            macs += 1;
        }
    }
    Ok(ProxySet {
        channels: c,
        g0: vec![T::zero(); nb * c],
        g1: vec![T::zero(); nb * c],
        count: vec![0; nb],
        f0,
        f1,
        counters: OpCounters {
            push_macs: macs,
            ..OpCounters::default()
        },
    })
}

/// Sums the proxies of every existing block in each block's `r^3`
/// neighborhood and counts the voxels they hold.
pub fn gather_neighborhood<T: Real>(part: &BlockPartition, proxies: &mut ProxySet<T>, range: usize) {
    gather_with(part, proxies, range, None, false)
}

pub(crate) fn gather_with<T: Real>(
    part: &BlockPartition,
    proxies: &mut ProxySet<T>,
    range: usize,
    fault: Option<GatherFault>,
    parallel: bool,
) {
    let nb = part.num_blocks();
    let c = proxies.channels;
    let (lo, hi) = offset_bounds(range);

    let occupancy: Vec<usize> = (0..nb).flat_map(|b| [part.members(b).len(), 1]).collect();
    let totals = box_sum(part, &occupancy, 2, lo, hi);
    proxies.count = totals.iter().step_by(2).copied().collect();
    proxies.counters.gather_probes = nb * range.pow(3);
    proxies.counters.gather_reads = totals.iter().skip(1).step_by(2).sum();

    if let Some(fault) = fault {
        let neighbors = direct_neighbors(part, range, Some(fault), parallel);
        let (f0, f1) = (&proxies.f0, &proxies.f1);
        for (b, list) in neighbors.iter().enumerate() {
            let (g0, g1) = (
                &mut proxies.g0[b * c..(b + 1) * c],
                &mut proxies.g1[b * c..(b + 1) * c],
            );
            g0.iter_mut().for_each(|v| *v = T::zero());
            g1.iter_mut().for_each(|v| *v = T::zero());
            for &j in list {
                let j = j as usize;
                for i in 0..c {
                    g0[i] += f0[j * c + i];
                    g1[i] += f1[j * c + i];
                }
            }
        }
        return;
    }

    let stacked: Vec<T> = (0..nb)
        .flat_map(|b| proxies.f0_of(b).iter().chain(proxies.f1_of(b)).copied())
        .collect();
    let summed = box_sum(part, &stacked, 2 * c, lo, hi);
    for (b, row) in summed.chunks(2 * c).enumerate() {
        proxies.g0[b * c..(b + 1) * c].copy_from_slice(&row[..c]);
        proxies.g1[b * c..(b + 1) * c].copy_from_slice(&row[c..]);
    }
}

/// Per-axis offset bounds `[lo, hi]` of an `r`-wide neighborhood.
pub(crate) fn offset_bounds(range: usize) -> (i32, i32) {
    let r = range as i32;
    if r % 2 == 1 {
        (-(r - 1) / 2, (r - 1) / 2)
    } else {
        (-(r / 2), r / 2 - 1)
    }
}

/// `out_b = sum_{o in [lo, hi]^3} v_{b + o}` over occupied blocks, with
/// `width` values per block.
///
/// The x and y sweeps scatter into the set of positions they reach, the z
/// sweep reads back at occupied blocks only. Work per block is `O(r)` on a
/// filled block grid and never worse than the direct `r^3` probe.
pub(crate) fn box_sum<V>(part: &BlockPartition, values: &[V], width: usize, lo: i32, hi: i32) -> Vec<V>
where
    V: Copy + Default + AddAssign,
{
    let nb = part.num_blocks();
    let mut coords: Vec<VoxelCoord> = (0..nb).map(|b| part.block_coord(b)).collect();
    let mut data = values.to_vec();
    let mut index: FxHashMap<u64, u32> = FxHashMap::default();
    for axis in 0..2 {
        index = FxHashMap::default();
        index.reserve(coords.len() + coords.len() / 4);
        let mut next = Vec::with_capacity(coords.len());
        let mut out: Vec<V> = Vec::with_capacity(data.len());
        for (row, c) in coords.iter().enumerate() {
            for o in lo..=hi {
                let mut d = [0; 3];
                d[axis] = -o;
                let q = c.offset(d);
                let Ok(key) = q.pack_key() else { continue };
                let id = *index.entry(key).or_insert_with(|| {
                    next.push(q);
                    out.resize(out.len() + width, V::default());
                    (next.len() - 1) as u32
                }) as usize;
                let (src, dst) = (
                    &data[row * width..(row + 1) * width],
                    &mut out[id * width..(id + 1) * width],
                );
                for (d, s) in dst.iter_mut().zip(src) {
                    *d += *s;
                }
            }
        }
        coords = next;
        data = out;
    }

    let mut result = vec![V::default(); nb * width];
    for (b, dst) in result.chunks_mut(width).enumerate() {
        let bc = part.block_coord(b);
        for o in lo..=hi {
            let Ok(key) = bc.offset([0, 0, o]).pack_key() else {
                continue;
            };
            if let Some(&id) = index.get(&key) {
                let src = &data[id as usize * width..(id as usize + 1) * width];
                for (d, s) in dst.iter_mut().zip(src) {
                    *d += *s;
                }
            }
        }
    }
    result
}

/// Existing neighbor blocks of every block, in offset order, found by
/// probing all `r^3` candidates.
pub(crate) fn direct_neighbors(
    part: &BlockPartition,
    range: usize,
    fault: Option<GatherFault>,
    parallel: bool,
) -> Vec<Vec<u32>> {
    let offsets = neighbor_offsets(range);
    let find = |b: usize| -> Vec<u32> {
        let bc = part.block_coord(b);
        let mut v: Vec<u32> = offsets
            .iter()
            .filter_map(|o| part.lookup(&bc.offset(*o)).map(|id| id as u32))
            .collect();
        if fault == Some(GatherFault::DropNeighbor) {
            if let Some(pos) = v.iter().position(|&id| id as usize != b) {
                v.remove(pos);
            }
        }
        v
    };
    if parallel {
        (0..part.num_blocks()).into_par_iter().map(find).collect()
    } else {
        (0..part.num_blocks()).map(find).collect()
    }
}

/// `g_x = (g0_B * k0(x) + g1_B * k1(x)) / N_B` for the voxel's own block `B`;
/// the division is skipped when `normalize` is false.
pub fn pull<T: Real>(
    t: &SparseTensor<T>,
    part: &BlockPartition,
    proxies: &ProxySet<T>,
    kernels: &Kernels<T>,
    normalize: bool,
) -> Result<SparseTensor<T>> {
    let mut counters = OpCounters::default();
    pull_with(t, part, proxies, kernels, normalize, false, &mut counters)
}

pub(crate) fn pull_with<T: Real>(
    t: &SparseTensor<T>,
    part: &BlockPartition,
    proxies: &ProxySet<T>,
    kernels: &Kernels<T>,
    normalize: bool,
    parallel: bool,
    counters: &mut OpCounters,
) -> Result<SparseTensor<T>> {
    let c = proxies.channels;
    ensure_dim("pull voxels", part.voxel_blocks().len(), t.len())?;
    ensure_dim("pull kernels", t.len() * c, kernels.k0.len())?;
    let mut out = vec![T::zero(); t.len() * c];
    let row = |(x, dst): (usize, &mut [T])| {
        let b = part.block_of(x);
        let scale = if normalize {
            T::one() / T::of(proxies.count[b] as f64)
        } else {
            T::one()
        };
        let (g0, g1) = (proxies.g0_of(b), proxies.g1_of(b));
        let r = x * c;
        for i in 0..c {
            dst[i] = (g0[i] * kernels.k0[r + i] + g1[i] * kernels.k1[r + i]) * scale;
        }
    };
    if parallel {
        out.par_chunks_mut(c).enumerate().for_each(row);
    } else {
        out.chunks_mut(c).enumerate().for_each(row);
    }
    counters.pull_macs += t.len();
    t.with_features(out, c)
}
