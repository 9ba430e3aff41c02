use rand::Rng;
use rand_distr::{Distribution, Normal};

use super::KernelMap;
use crate::error::ensure_dim;
use crate::sparse::SparseTensor;
use crate::{Error, Parameters, Real, Result};

/// Convolution weights laid out as `[offset][c_in][c_out]`, offsets in the
/// order of [`KernelMap::offsets`].
#[derive(Debug, Clone, PartialEq)]
pub struct ConvWeights<T> {
    pub kernel_size: usize,
    pub c_in: usize,
    pub c_out: usize,
    pub weights: Vec<T>,
    pub bias: Option<Vec<T>>,
}

impl<T: Real> ConvWeights<T> {
    pub fn zeros(kernel_size: usize, c_in: usize, c_out: usize) -> Self {
        Self {
            kernel_size,
            c_in,
            c_out,
            weights: vec![T::zero(); kernel_size.pow(3) * c_in * c_out],
            bias: Some(vec![T::zero(); c_out]),
        }
    }

    /// He-normal weights, zero bias.
    pub fn random<R: Rng + ?Sized>(kernel_size: usize, c_in: usize, c_out: usize, rng: &mut R) -> Self {
        let mut w = Self::zeros(kernel_size, c_in, c_out);
        let fan_in = (kernel_size.pow(3) * c_in) as f64;
        let normal = Normal::new(0.0, (2.0 / fan_in).sqrt()).expect("positive std");
        for v in &mut w.weights {
            *v = T::of(normal.sample(rng));
        }
        w
    }

    /// Identity on the center tap, zero elsewhere (odd kernels only).
    pub fn identity_center(kernel_size: usize, channels: usize) -> Self {
        let mut w = Self::zeros(kernel_size, channels, channels);
        let center = kernel_size.pow(3) / 2;
        for c in 0..channels {
            w.weights[(center * channels + c) * channels + c] = T::one();
        }
        w
    }

    pub fn without_bias(mut self) -> Self {
        self.bias = None;
        self
    }

    pub fn volume(&self) -> usize {
        self.kernel_size.pow(3)
    }

    pub fn cast<U: Real>(&self) -> ConvWeights<U> {
        ConvWeights {
            kernel_size: self.kernel_size,
            c_in: self.c_in,
            c_out: self.c_out,
            weights: self.weights.iter().map(|v| U::of(v.as_f64())).collect(),
            bias: self
                .bias
                .as_ref()
                .map(|b| b.iter().map(|v| U::of(v.as_f64())).collect()),
        }
    }

    fn tap(&self, n: usize) -> &[T] {
        let len = self.c_in * self.c_out;
        &self.weights[n * len..(n + 1) * len]
    }

    fn check(&self, km: &KernelMap, c_in: usize) -> Result<()> {
        if km.kernel_size() != self.kernel_size {
            return Err(Error::config(format!(
                "kernel map of size {} used with weights of size {}",
                km.kernel_size(),
                self.kernel_size
            )));
        }
        ensure_dim(
            "conv weights",
            self.volume() * self.c_in * self.c_out,
            self.weights.len(),
        )?;
        ensure_dim("conv input channels", self.c_in, c_in)?;
        if let Some(b) = &self.bias {
            ensure_dim("conv bias", self.c_out, b.len())?;
        }
        Ok(())
    }
}

impl<T: Real> Parameters<T> for ConvWeights<T> {
    fn slices(&self) -> Vec<&[T]> {
        let mut v = vec![self.weights.as_slice()];
        if let Some(b) = &self.bias {
            v.push(b);
        }
        v
    }

    fn slices_mut(&mut self) -> Vec<&mut [T]> {
        let mut v = vec![self.weights.as_mut_slice()];
        if let Some(b) = &mut self.bias {
            v.push(b);
        }
        v
    }
}

/// `g_p = sum_n w_n f_{p+n} + bias` over the pairs in `km`.
pub fn sparse_conv_forward<T: Real>(
    t: &SparseTensor<T>,
    w: &ConvWeights<T>,
    km: &KernelMap,
) -> Result<SparseTensor<T>> {
    w.check(km, t.channels())?;
    ensure_dim("kernel map input rows", km.in_len(), t.len())?;
    let (cin, cout) = (w.c_in, w.c_out);
    let n_out = km.out_coords().len();
    let mut out = vec![T::zero(); n_out * cout];
    if let Some(b) = &w.bias {
        for row in out.chunks_exact_mut(cout) {
            row.copy_from_slice(b);
        }
    }
    let f = t.features();
    for n in 0..km.offsets().len() {
        let tap = w.tap(n);
        for &(i, o) in km.pairs(n) {
            let fin = &f[i as usize * cin..(i as usize + 1) * cin];
            let dst = &mut out[o as usize * cout..(o as usize + 1) * cout];
            for (ci, &fv) in fin.iter().enumerate() {
                let wrow = &tap[ci * cout..(ci + 1) * cout];
                for (d, &wv) in dst.iter_mut().zip(wrow) {
                    *d += fv * wv;
                }
            }
        }
    }
    SparseTensor::from_set(km.out_set().clone(), out, cout)
}

/// Gradients of [`sparse_conv_forward`].
#[derive(Debug, Clone)]
pub struct ConvGrads<T> {
    pub features: Vec<T>,
    pub weights: ConvWeights<T>,
}

impl<T: Real> ConvGrads<T> {
    pub fn bias(&self) -> Option<&[T]> {
        self.weights.bias.as_deref()
    }
}

/// Exact adjoint of [`sparse_conv_forward`] with respect to the input
/// features, the weights and the bias.
pub fn sparse_conv_backward<T: Real>(
    grad_out: &[T],
    t: &SparseTensor<T>,
    w: &ConvWeights<T>,
    km: &KernelMap,
) -> Result<ConvGrads<T>> {
    w.check(km, t.channels())?;
    ensure_dim("kernel map input rows", km.in_len(), t.len())?;
    let (cin, cout) = (w.c_in, w.c_out);
    ensure_dim("conv grad_out", km.out_coords().len() * cout, grad_out.len())?;
    let f = t.features();
    let mut gf = vec![T::zero(); t.len() * cin];
    let mut gw = w.zeroed();
    if let Some(gb) = &mut gw.bias {
        for row in grad_out.chunks_exact(cout) {
            for (b, &g) in gb.iter_mut().zip(row) {
                *b += g;
            }
        }
    }
    let tap_len = cin * cout;
    for n in 0..km.offsets().len() {
        let tap = w.tap(n);
        let gtap = &mut gw.weights[n * tap_len..(n + 1) * tap_len];
        for &(i, o) in km.pairs(n) {
            let (i, o) = (i as usize, o as usize);
            let g = &grad_out[o * cout..(o + 1) * cout];
            let fin = &f[i * cin..(i + 1) * cin];
            let dst = &mut gf[i * cin..(i + 1) * cin];
            for ci in 0..cin {
                let wrow = &tap[ci * cout..(ci + 1) * cout];
                let mut acc = T::zero();
                for (&wv, &gv) in wrow.iter().zip(g) {
                    acc += wv * gv;
                }
                dst[ci] += acc;
                let grow = &mut gtap[ci * cout..(ci + 1) * cout];
                let fv = fin[ci];
                for (gwv, &gv) in grow.iter_mut().zip(g) {
                    *gwv += fv * gv;
                }
            }
        }
    }
    Ok(ConvGrads {
        features: gf,
        weights: gw,
    })
}
