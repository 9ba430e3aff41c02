use rayon::prelude::*;

use super::forward::{kernel_anchor, LinKConfig};
use super::generator::{generate_kernel_at, KernelGenerator};
use crate::error::ensure_dim;
use crate::sparse::{SparseTensor, VoxelCoord};
use crate::{Real, Result};

/// Direct pairwise evaluation of the LinK operator.
///
/// For each voxel `x` every occupied position inside the `r^3` blocks around
/// `x`'s block is visited through the coordinate index, and
/// `g_x = (1/|S(x)|) sum_p kappa(p, x) * f_p` with
/// `kappa(p, x) = k0(p) k0(x) + k1(p) k1(x)`. Cost is `(r s)^3` lookups per
/// voxel, so this is meant for tests and benchmarks only.
pub fn link_oracle<T: Real>(
    t: &SparseTensor<T>,
    gen: &KernelGenerator<T>,
    cfg: &LinKConfig,
) -> Result<SparseTensor<T>> {
    cfg.validate()?;
    ensure_dim("LinK channels", gen.channels, t.channels())?;
    let c = gen.channels;
    let s = cfg.block_size;
    let anchor = kernel_anchor(t.coords(), s, gen.mode);
    let k = generate_kernel_at(gen, t.coords(), anchor, cfg.parallel)?;
    let f = t.features();
    let lo = -((cfg.range / 2) as i32);
    let hi = lo + cfg.range as i32 - 1;

    let row = |(x, dst): (usize, &mut [T])| {
        let v = t.coords()[x];
        let home = [v.x.div_euclid(s), v.y.div_euclid(s), v.z.div_euclid(s)];
        let mut support = 0usize;
        let xr = x * c;
        for bx in home[0] + lo..=home[0] + hi {
            for by in home[1] + lo..=home[1] + hi {
                for bz in home[2] + lo..=home[2] + hi {
                    for lx in 0..s {
                        for ly in 0..s {
                            for lz in 0..s {
                                let q = VoxelCoord::new(v.batch, bx * s + lx, by * s + ly, bz * s + lz);
                                let Some(p) = t.query(&q) else { continue };
                                support += 1;
                                let pr = p * c;
                                for i in 0..c {
                                    let kappa = k.k0[pr + i] * k.k0[xr + i] + k.k1[pr + i] * k.k1[xr + i];
                                    dst[i] += kappa * f[pr + i];
                                }
                            }
                        }
                    }
                }
            }
        }
        if cfg.normalize {
            let inv = T::one() / T::of(support as f64);
            for d in dst.iter_mut() {
                *d *= inv;
            }
        }
    };
    let mut out = vec![T::zero(); t.len() * c];
    if cfg.parallel {
        out.par_chunks_mut(c).enumerate().for_each(row);
    } else {
        out.chunks_mut(c).enumerate().for_each(row);
    }
    t.with_features(out, c)
}
