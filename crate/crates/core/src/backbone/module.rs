use rand::Rng;

use crate::conv::{
    layer_norm_backward, layer_norm_forward, relu_backward, relu_inplace, sparse_conv_backward,
    sparse_conv_forward, ConvWeights, KernelMap, LayerNormCache, LayerNormParams,
};
use crate::link::{link_backward, link_forward, ActivationMode, KernelGenerator, LinKConfig, LinkState};
use crate::sparse::SparseTensor;
use crate::{Error, Parameters, Real, Result};

/// Learnable tensors of one LinK module.
#[derive(Debug, Clone, PartialEq)]
pub struct LinkModuleParams<T> {
    /// 1^3 channel mixing in front of the large-kernel branch.
    pub pointwise: ConvWeights<T>,
    pub generator: KernelGenerator<T>,
    /// 3^3 submanifold bypass, dilation 1.
    pub bypass: ConvWeights<T>,
    pub norm: LayerNormParams<T>,
}

impl<T: Real> LinkModuleParams<T> {
    pub fn random<R: Rng + ?Sized>(
        channels: usize,
        groups: usize,
        mode: ActivationMode,
        link: &LinKConfig,
        rng: &mut R,
    ) -> Result<Self> {
        Ok(Self {
            pointwise: ConvWeights::random(1, channels, channels, rng),
            generator: KernelGenerator::random(channels, groups, mode, link.kernel_extent(), rng)?,
            bypass: ConvWeights::random(3, channels, channels, rng),
            norm: LayerNormParams::new(channels),
        })
    }

    pub fn zeros(channels: usize, groups: usize, mode: ActivationMode) -> Result<Self> {
        Ok(Self {
            pointwise: ConvWeights::zeros(1, channels, channels),
            generator: KernelGenerator::zeros(channels, groups, mode)?,
            bypass: ConvWeights::zeros(3, channels, channels),
            norm: LayerNormParams::new(channels),
        })
    }

    pub fn channels(&self) -> usize {
        self.bypass.c_in
    }
}

impl<T: Real> Parameters<T> for LinkModuleParams<T> {
    fn slices(&self) -> Vec<&[T]> {
        let mut v = self.pointwise.slices();
        v.extend(self.generator.slices());
        v.extend(self.bypass.slices());
        v.extend(self.norm.slices());
        v
    }

    fn slices_mut(&mut self) -> Vec<&mut [T]> {
        let mut v = self.pointwise.slices_mut();
        v.extend(self.generator.slices_mut());
        v.extend(self.bypass.slices_mut());
        v.extend(self.norm.slices_mut());
        v
    }
}

/// Wiring switches of a LinK module.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct LinkModuleConfig {
    pub link: LinKConfig,
    pub norm: bool,
    /// With `false` the large-kernel branch contributes zero (bypass only).
    pub link_branch: bool,
}

/// Kernel maps shared by every layer operating on one coordinate set.
#[derive(Debug, Clone)]
pub struct StageMaps {
    pub pointwise: KernelMap,
    pub conv3: KernelMap,
}

impl StageMaps {
    pub fn build<T: Real>(t: &SparseTensor<T>) -> Result<Self> {
        Ok(Self {
            pointwise: KernelMap::build(t, 1, 1)?,
            conv3: KernelMap::build(t, 3, 1)?,
        })
    }
}

#[derive(Debug, Clone)]
pub struct LinkModuleCache<T> {
    input: SparseTensor<T>,
    mixed: Option<SparseTensor<T>>,
    link: Option<LinkState<T>>,
    norm: LayerNormCache<T>,
    output: Vec<T>,
}

/// `y = ReLU(LayerNorm(LinK(PW(x)) + Conv3(x)))`, coordinates preserved.
pub fn link_module_forward<T: Real>(
    x: &SparseTensor<T>,
    p: &LinkModuleParams<T>,
    cfg: &LinkModuleConfig,
    maps: &StageMaps,
) -> Result<(SparseTensor<T>, LinkModuleCache<T>)> {
    let c = x.channels();
    if p.channels() != c || p.pointwise.c_out != c || p.generator.channels != c {
        return Err(Error::dim("LinK module channels", p.channels(), c));
    }
    let mut z = sparse_conv_forward(x, &p.bypass, &maps.conv3)?.into_features();
    let (mixed, link) = if cfg.link_branch {
        let mixed = sparse_conv_forward(x, &p.pointwise, &maps.pointwise)?;
        let (lk, state) = link_forward(&mixed, &p.generator, &cfg.link)?;
        for (a, b) in z.iter_mut().zip(lk.features()) {
            *a += *b;
        }
        (Some(mixed), Some(state))
    } else {
        (None, None)
    };
    let (mut y, norm) = layer_norm_forward(&z, &p.norm, cfg.norm)?;
    relu_inplace(&mut y);
    Ok((
        x.with_features(y.clone(), c)?,
        LinkModuleCache {
            input: x.clone(),
            mixed,
            link,
            norm,
            output: y,
        },
    ))
}

/// Returns `(grad_x, grad_params)`.
pub fn link_module_backward<T: Real>(
    grad_y: &[T],
    p: &LinkModuleParams<T>,
    cfg: &LinkModuleConfig,
    maps: &StageMaps,
    cache: &LinkModuleCache<T>,
) -> Result<(Vec<T>, LinkModuleParams<T>)> {
    let mut grads = p.zeroed();
    let dn = relu_backward(grad_y, &cache.output);
    let (dz, gnorm) = layer_norm_backward(&dn, &p.norm, &cache.norm);
    grads.norm = gnorm;
    let gb = sparse_conv_backward(&dz, &cache.input, &p.bypass, &maps.conv3)?;
    grads.bypass = gb.weights;
    let mut dx = gb.features;
    if let (Some(mixed), Some(state)) = (&cache.mixed, &cache.link) {
        let gl = link_backward(&dz, mixed, &p.generator, &cfg.link, state)?;
        grads.generator = gl.generator;
        let gp = sparse_conv_backward(&gl.features, &cache.input, &p.pointwise, &maps.pointwise)?;
        grads.pointwise = gp.weights;
        for (a, b) in dx.iter_mut().zip(&gp.features) {
            *a += *b;
        }
    }
    Ok((dx, grads))
}
