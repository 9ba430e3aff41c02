use super::generator::{generate_kernel_at, generator_backward, ActivationMode, KernelGenerator, Kernels};
use super::partition::{partition_blocks, BlockPartition};
use super::proxy::{
    box_sum, direct_neighbors, gather_with, offset_bounds, pull_with, push_proxies, GatherFault, OpCounters,
    ProxySet,
};
use crate::error::ensure_dim;
use crate::sparse::{floor_div, SparseTensor, VoxelCoord};
use crate::{Error, Real, Result};

/// Block size `s`, neighborhood range `r` and normalisation of a LinK layer.
///
/// The learnable part (linear map, frequencies, mode, groups) lives in the
/// [`KernelGenerator`] passed alongside.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct LinKConfig {
    pub block_size: i32,
    pub range: usize,
    pub normalize: bool,
    /// Parallelise per-voxel and per-block loops. Every reduction keeps a
    /// fixed order, so results do not depend on this flag.
    pub parallel: bool,
    #[doc(hidden)]
    pub fault: Option<GatherFault>,
}

impl LinKConfig {
    pub fn new(block_size: i32, range: usize) -> Self {
        Self {
            block_size,
            range,
            normalize: true,
            parallel: false,
            fault: None,
        }
    }

    /// Edge length `r * s` of the cube a voxel can aggregate from.
    pub fn kernel_extent(&self) -> usize {
        self.range * self.block_size.max(0) as usize
    }

    pub fn validate(&self) -> Result<()> {
        if self.block_size < 1 || self.range < 1 {
            return Err(Error::config(format!(
                "LinK needs s >= 1 and r >= 1, got s={} r={}",
                self.block_size, self.range
            )));
        }
        Ok(())
    }
}

/// Origin the generator is evaluated against.
///
/// Pure-mode kernels only depend on offsets, so coordinates are taken
/// relative to the lowest occupied block corner; this keeps phases small and
/// makes block-multiple translations exact. Augmented kernels keep the
/// tensor's global coordinates.
pub fn kernel_anchor(coords: &[VoxelCoord], block_size: i32, mode: ActivationMode) -> [i32; 3] {
    if mode == ActivationMode::Augmented || coords.is_empty() {
        return [0; 3];
    }
    let mut lo = [i32::MAX; 3];
    for c in coords {
        for (l, v) in lo.iter_mut().zip(c.xyz()) {
            *l = (*l).min(floor_div(v, block_size));
        }
    }
    lo.map(|b| b * block_size)
}

/// Forward intermediates needed by [`link_backward`].
#[derive(Debug, Clone)]
pub struct LinkState<T> {
    pub partition: BlockPartition,
    pub kernels: Kernels<T>,
    pub proxies: ProxySet<T>,
    pub anchor: [i32; 3],
    pub counters: OpCounters,
    input: Vec<T>,
    len: usize,
}

/// partition -> generate -> push -> gather -> pull.
pub fn link_forward<T: Real>(
    t: &SparseTensor<T>,
    gen: &KernelGenerator<T>,
    cfg: &LinKConfig,
) -> Result<(SparseTensor<T>, LinkState<T>)> {
    cfg.validate()?;
    ensure_dim("LinK channels", gen.channels, t.channels())?;
    let partition = partition_blocks(t, cfg.block_size)?;
    let anchor = kernel_anchor(t.coords(), cfg.block_size, gen.mode);
    let kernels = generate_kernel_at(gen, t.coords(), anchor, cfg.parallel)?;
    let mut proxies = push_proxies(&partition, t.features(), &kernels)?;
    gather_with(&partition, &mut proxies, cfg.range, cfg.fault, cfg.parallel);
    let mut counters = proxies.counters;
    let out = pull_with(
        t,
        &partition,
        &proxies,
        &kernels,
        cfg.normalize,
        cfg.parallel,
        &mut counters,
    )?;
    Ok((
        out,
        LinkState {
            partition,
            kernels,
            proxies,
            anchor,
            counters,
            input: t.features().to_vec(),
            len: t.len(),
        },
    ))
}

/// Gradients of [`link_forward`]; `generator` holds `dL/dW` and `dL/dalpha`.
#[derive(Debug, Clone)]
pub struct LinkGrads<T> {
    pub features: Vec<T>,
    pub generator: KernelGenerator<T>,
}

/// Exact adjoint of [`link_forward`] with respect to the input features and
/// the generator parameters. Kernel gradients are collected from both the
/// push and the pull side before being chained into the generator.
pub fn link_backward<T: Real>(
    grad_out: &[T],
    t: &SparseTensor<T>,
    gen: &KernelGenerator<T>,
    cfg: &LinKConfig,
    state: &LinkState<T>,
) -> Result<LinkGrads<T>> {
    let c = gen.channels;
    if state.len != t.len() || state.kernels.channels != c {
        return Err(Error::Usage(format!(
            "saved LinK state is for {} voxels x {} channels, called with {} x {}",
            state.len,
            state.kernels.channels,
            t.len(),
            c
        )));
    }
    ensure_dim("LinK grad_out", t.len() * c, grad_out.len())?;
    let part = &state.partition;
    let px = &state.proxies;
    let k = &state.kernels;
    let nb = part.num_blocks();

    let mut dk0 = vec![T::zero(); t.len() * c];
    let mut dk1 = vec![T::zero(); t.len() * c];
    let mut dg0 = vec![T::zero(); nb * c];
    let mut dg1 = vec![T::zero(); nb * c];
    for b in 0..nb {
        let scale = if cfg.normalize {
            T::one() / T::of(px.count[b] as f64)
        } else {
            T::one()
        };
        let (g0, g1) = (px.g0_of(b), px.g1_of(b));
        for &row in part.members(b) {
            let r = row as usize * c;
            for i in 0..c {
                let g = grad_out[r + i] * scale;
                dg0[b * c + i] += g * k.k0[r + i];
                dg1[b * c + i] += g * k.k1[r + i];
                dk0[r + i] = g * g0[i];
                dk1[r + i] = g * g1[i];
            }
        }
    }

    // transpose of the gather: every block's aggregate fed its neighbors
    let mut df0 = vec![T::zero(); nb * c];
    let mut df1 = vec![T::zero(); nb * c];
    if cfg.fault.is_some() {
        for (b, list) in direct_neighbors(part, cfg.range, cfg.fault, false)
            .iter()
            .enumerate()
        {
            for &j in list {
                let j = j as usize;
                for i in 0..c {
                    df0[j * c + i] += dg0[b * c + i];
                    df1[j * c + i] += dg1[b * c + i];
                }
            }
        }
    } else {
        let (lo, hi) = offset_bounds(cfg.range);
        let stacked: Vec<T> = (0..nb)
            .flat_map(|b| {
                dg0[b * c..(b + 1) * c]
                    .iter()
                    .chain(&dg1[b * c..(b + 1) * c])
                    .copied()
            })
            .collect();
        let summed = box_sum(part, &stacked, 2 * c, -hi, -lo);
        for (b, row) in summed.chunks(2 * c).enumerate() {
            df0[b * c..(b + 1) * c].copy_from_slice(&row[..c]);
            df1[b * c..(b + 1) * c].copy_from_slice(&row[c..]);
        }
    }

    let mut dfeat = vec![T::zero(); t.len() * c];
    for (x, &b) in part.voxel_blocks().iter().enumerate() {
        let (b, r) = (b as usize * c, x * c);
        for i in 0..c {
            let (a0, a1) = (df0[b + i], df1[b + i]);
            dfeat[r + i] = a0 * k.k0[r + i] + a1 * k.k1[r + i];
            let f = state.input[r + i];
            dk0[r + i] += a0 * f;
            dk1[r + i] += a1 * f;
        }
    }

    let generator = generator_backward(gen, t.coords(), state.anchor, k, &dk0, &dk1);
    Ok(LinkGrads {
        features: dfeat,
        generator,
    })
}
