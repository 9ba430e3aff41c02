//! Per-voxel LayerNorm and ReLU with their adjoints.

use crate::error::ensure_dim;
use crate::{Parameters, Real, Result};

const LN_EPS: f64 = 1e-5;

/// Per-channel affine parameters of a LayerNorm over the channel axis.
#[derive(Debug, Clone, PartialEq)]
pub struct LayerNormParams<T> {
    pub scale: Vec<T>,
    pub shift: Vec<T>,
}

impl<T: Real> LayerNormParams<T> {
    pub fn new(channels: usize) -> Self {
        Self {
            scale: vec![T::one(); channels],
            shift: vec![T::zero(); channels],
        }
    }

    pub fn channels(&self) -> usize {
        self.scale.len()
    }
}

impl<T: Real> Parameters<T> for LayerNormParams<T> {
    fn slices(&self) -> Vec<&[T]> {
        vec![&self.scale, &self.shift]
    }

    fn slices_mut(&mut self) -> Vec<&mut [T]> {
        vec![&mut self.scale, &mut self.shift]
    }
}

/// Saved normalised activations; `None` when normalisation is disabled.
#[derive(Debug, Clone)]
pub struct LayerNormCache<T> {
    state: Option<(Vec<T>, Vec<T>)>,
}

/// Normalises each voxel row over its channels. With `enabled == false` the
/// input passes through unchanged.
pub fn layer_norm_forward<T: Real>(
    x: &[T],
    p: &LayerNormParams<T>,
    enabled: bool,
) -> Result<(Vec<T>, LayerNormCache<T>)> {
    let c = p.channels();
    if !enabled {
        return Ok((x.to_vec(), LayerNormCache { state: None }));
    }
    ensure_dim("layer norm width", 0, x.len() % c.max(1))?;
    let eps = T::of(LN_EPS);
    let inv_c = T::one() / T::of(c as f64);
    let mut y = vec![T::zero(); x.len()];
    let mut xhat = vec![T::zero(); x.len()];
    let mut inv_std = Vec::with_capacity(x.len() / c.max(1));
    for ((row, yr), hr) in x
        .chunks_exact(c)
        .zip(y.chunks_exact_mut(c))
        .zip(xhat.chunks_exact_mut(c))
    {
        let mean = row.iter().copied().sum::<T>() * inv_c;
        let var = row.iter().map(|v| (*v - mean) * (*v - mean)).sum::<T>() * inv_c;
        let is = T::one() / (var + eps).sqrt();
        for i in 0..c {
            hr[i] = (row[i] - mean) * is;
            yr[i] = hr[i] * p.scale[i] + p.shift[i];
        }
        inv_std.push(is);
    }
    Ok((
        y,
        LayerNormCache {
            state: Some((xhat, inv_std)),
        },
    ))
}

/// Returns `(grad_x, grad_params)`.
pub fn layer_norm_backward<T: Real>(
    grad_y: &[T],
    p: &LayerNormParams<T>,
    cache: &LayerNormCache<T>,
) -> (Vec<T>, LayerNormParams<T>) {
    let mut gp = p.zeroed();
    let Some((xhat, inv_std)) = &cache.state else {
        return (grad_y.to_vec(), gp);
    };
    let c = p.channels();
    let inv_c = T::one() / T::of(c as f64);
    let mut gx = vec![T::zero(); grad_y.len()];
    for (((gy, h), gxr), &is) in grad_y
        .chunks_exact(c)
        .zip(xhat.chunks_exact(c))
        .zip(gx.chunks_exact_mut(c))
        .zip(inv_std)
    {
        let mut mean_d = T::zero();
        let mut mean_dh = T::zero();
        for i in 0..c {
            gp.scale[i] += gy[i] * h[i];
            gp.shift[i] += gy[i];
            let d = gy[i] * p.scale[i];
            mean_d += d;
            mean_dh += d * h[i];
        }
        mean_d *= inv_c;
        mean_dh *= inv_c;
        for i in 0..c {
            let d = gy[i] * p.scale[i];
            gxr[i] = is * (d - mean_d - h[i] * mean_dh);
        }
    }
    (gx, gp)
}

pub fn relu_inplace<T: Real>(x: &mut [T]) {
    for v in x {
        if v.is_nan() || *v <= T::zero() {
            *v = T::zero();
        }
    }
}

/// Masks `grad` where the ReLU output was not positive.
pub fn relu_backward<T: Real>(grad: &[T], out: &[T]) -> Vec<T> {
    grad.iter()
        .zip(out)
        .map(|(g, y)| if *y > T::zero() { *g } else { T::zero() })
        .collect()
}
