use rand::Rng;

use super::module::{
    link_module_backward, link_module_forward, LinkModuleCache, LinkModuleConfig, LinkModuleParams, StageMaps,
};
use crate::conv::{
    layer_norm_backward, layer_norm_forward, relu_backward, relu_inplace, residual_block_backward,
    residual_block_forward, sparse_conv_backward, sparse_conv_forward, ConvWeights, KernelMap,
    LayerNormCache, LayerNormParams, ResidualBlockParams, ResidualCache,
};
use crate::link::{count_dense_kernel_params, count_generator_params, ActivationMode, LinKConfig};
use crate::sparse::SparseTensor;
use crate::{Error, Parameters, Real, Result};

/// Number of downsampling stages.
pub const NUM_STAGES: usize = 4;
/// Residual blocks per stage.
pub const RESIDUAL_BLOCKS: usize = 2;

#[derive(Debug, Clone, PartialEq)]
pub struct EncoderConfig {
    pub in_channels: usize,
    pub stem_width: usize,
    pub widths: [usize; NUM_STAGES],
    pub block_sizes: [i32; NUM_STAGES],
    pub ranges: [usize; NUM_STAGES],
    pub mode: ActivationMode,
    pub groups: usize,
    pub norm: bool,
    /// `false` zeroes every LinK branch, leaving the 3^3 bypass.
    pub link_branch: bool,
    pub parallel: bool,
}

impl EncoderConfig {
    /// Uniform width 64 with `{r=2, s=3}` LinK blocks.
    pub fn segmentation(in_channels: usize) -> Self {
        Self {
            in_channels,
            stem_width: 64,
            widths: [64; NUM_STAGES],
            block_sizes: [3; NUM_STAGES],
            ranges: [2; NUM_STAGES],
            mode: ActivationMode::Augmented,
            groups: 2,
            norm: true,
            link_branch: true,
            parallel: true,
        }
    }

    /// Widths `[16, 32, 64, 128]` with `{r=3, s=7}` LinK blocks.
    pub fn detection(in_channels: usize) -> Self {
        Self {
            in_channels,
            stem_width: 16,
            widths: [16, 32, 64, 128],
            block_sizes: [7; NUM_STAGES],
            ranges: [3; NUM_STAGES],
            mode: ActivationMode::Augmented,
            groups: 2,
            norm: true,
            link_branch: true,
            parallel: true,
        }
    }

    /// Same layout with every width set to `width`.
    pub fn uniform(in_channels: usize, width: usize, block_size: i32, range: usize) -> Self {
        Self {
            in_channels,
            stem_width: width,
            widths: [width; NUM_STAGES],
            block_sizes: [block_size; NUM_STAGES],
            ranges: [range; NUM_STAGES],
            mode: ActivationMode::Augmented,
            groups: 1,
            norm: true,
            link_branch: true,
            parallel: true,
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.in_channels == 0 || self.stem_width == 0 || self.widths.contains(&0) {
            return Err(Error::config("encoder widths must be positive"));
        }
        if self.groups == 0 || self.widths.iter().any(|w| w % self.groups != 0) {
            return Err(Error::config(format!(
                "groups {} must divide every stage width {:?}",
                self.groups, self.widths
            )));
        }
        for k in 0..NUM_STAGES {
            self.link_config(k).validate()?;
        }
        Ok(())
    }

    /// LinK settings of stage `k` (0-based).
    pub fn link_config(&self, k: usize) -> LinKConfig {
        let mut c = LinKConfig::new(self.block_sizes[k], self.ranges[k]);
        c.parallel = self.parallel;
        c
    }

    fn module_config(&self, k: usize) -> LinkModuleConfig {
        LinkModuleConfig {
            link: self.link_config(k),
            norm: self.norm,
            link_branch: self.link_branch,
        }
    }

    fn stage_input_width(&self, k: usize) -> usize {
        if k == 0 {
            self.stem_width
        } else {
            self.widths[k - 1]
        }
    }
}

/// Convolution followed by LayerNorm and ReLU.
#[derive(Debug, Clone, PartialEq)]
pub struct ConvNormParams<T> {
    pub conv: ConvWeights<T>,
    pub norm: LayerNormParams<T>,
}

impl<T: Real> ConvNormParams<T> {
    fn random<R: Rng + ?Sized>(k: usize, c_in: usize, c_out: usize, rng: &mut R) -> Self {
        Self {
            conv: ConvWeights::random(k, c_in, c_out, rng),
            norm: LayerNormParams::new(c_out),
        }
    }
}

impl<T: Real> Parameters<T> for ConvNormParams<T> {
    fn slices(&self) -> Vec<&[T]> {
        let mut v = self.conv.slices();
        v.extend(self.norm.slices());
        v
    }

    fn slices_mut(&mut self) -> Vec<&mut [T]> {
        let mut v = self.conv.slices_mut();
        v.extend(self.norm.slices_mut());
        v
    }
}

#[derive(Debug, Clone)]
struct ConvNormCache<T> {
    input: SparseTensor<T>,
    norm: LayerNormCache<T>,
    output: Vec<T>,
}

fn conv_norm_forward<T: Real>(
    x: &SparseTensor<T>,
    p: &ConvNormParams<T>,
    km: &KernelMap,
    norm: bool,
) -> Result<(SparseTensor<T>, ConvNormCache<T>)> {
    let h = sparse_conv_forward(x, &p.conv, km)?;
    let (mut y, nc) = layer_norm_forward(h.features(), &p.norm, norm)?;
    relu_inplace(&mut y);
    let out = h.with_features(y.clone(), p.conv.c_out)?;
    Ok((
        out,
        ConvNormCache {
            input: x.clone(),
            norm: nc,
            output: y,
        },
    ))
}

fn conv_norm_backward<T: Real>(
    grad_y: &[T],
    p: &ConvNormParams<T>,
    km: &KernelMap,
    cache: &ConvNormCache<T>,
) -> Result<(Vec<T>, ConvNormParams<T>)> {
    let dh = relu_backward(grad_y, &cache.output);
    let (dh, gn) = layer_norm_backward(&dh, &p.norm, &cache.norm);
    let g = sparse_conv_backward(&dh, &cache.input, &p.conv, km)?;
    Ok((
        g.features,
        ConvNormParams {
            conv: g.weights,
            norm: gn,
        },
    ))
}

/// Downsample, then `ResidualBranch(x) + LinKModule(x)`.
#[derive(Debug, Clone, PartialEq)]
pub struct StageParams<T> {
    pub down: ConvNormParams<T>,
    pub residual: Vec<ResidualBlockParams<T>>,
    pub link: LinkModuleParams<T>,
}

impl<T: Real> Parameters<T> for StageParams<T> {
    fn slices(&self) -> Vec<&[T]> {
        let mut v = self.down.slices();
        for r in &self.residual {
            v.extend(r.slices());
        }
        v.extend(self.link.slices());
        v
    }

    fn slices_mut(&mut self) -> Vec<&mut [T]> {
        let mut v = self.down.slices_mut();
        for r in &mut self.residual {
            v.extend(r.slices_mut());
        }
        v.extend(self.link.slices_mut());
        v
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct EncoderParams<T> {
    pub stem: Vec<ConvNormParams<T>>,
    pub stages: Vec<StageParams<T>>,
}

impl<T: Real> EncoderParams<T> {
    pub fn random<R: Rng + ?Sized>(cfg: &EncoderConfig, rng: &mut R) -> Result<Self> {
        cfg.validate()?;
        let stem = vec![
            ConvNormParams::random(3, cfg.in_channels, cfg.stem_width, rng),
            ConvNormParams::random(3, cfg.stem_width, cfg.stem_width, rng),
        ];
        let mut stages = Vec::with_capacity(NUM_STAGES);
        for k in 0..NUM_STAGES {
            let w = cfg.widths[k];
            let down = ConvNormParams::random(2, cfg.stage_input_width(k), w, rng);
            let residual = (0..RESIDUAL_BLOCKS)
                .map(|_| ResidualBlockParams::random(w, rng))
                .collect();
            let link = LinkModuleParams::random(w, cfg.groups, cfg.mode, &cfg.link_config(k), rng)?;
            stages.push(StageParams { down, residual, link });
        }
        Ok(Self { stem, stages })
    }

    /// Parameters of the same encoder with each LinK operator replaced by a
    /// dense `kernel_size^3` convolution at equal width.
    pub fn dense_replacement_params(&self, kernel_size: u64) -> u64 {
        let mut total = self.num_params() as u64;
        for st in &self.stages {
            let c = st.link.channels() as u64;
            total -= count_generator_params(&st.link.generator) as u64;
            total += count_dense_kernel_params(kernel_size, c, c);
        }
        total
    }

    /// Learnable parameters held by the kernel generators.
    pub fn generator_params(&self) -> usize {
        self.stages
            .iter()
            .map(|st| count_generator_params(&st.link.generator))
            .sum()
    }
}

impl<T: Real> Parameters<T> for EncoderParams<T> {
    fn slices(&self) -> Vec<&[T]> {
        let mut v = Vec::new();
        for s in &self.stem {
            v.extend(s.slices());
        }
        for s in &self.stages {
            v.extend(s.slices());
        }
        v
    }

    fn slices_mut(&mut self) -> Vec<&mut [T]> {
        let mut v = Vec::new();
        for s in &mut self.stem {
            v.extend(s.slices_mut());
        }
        for s in &mut self.stages {
            v.extend(s.slices_mut());
        }
        v
    }
}

#[derive(Debug, Clone)]
struct StageCache<T> {
    down_map: KernelMap,
    down: ConvNormCache<T>,
    maps: StageMaps,
    residual: Vec<ResidualCache<T>>,
    link: LinkModuleCache<T>,
}

/// Saved activations of an [`encoder_forward`] pass.
#[derive(Debug, Clone)]
pub struct EncoderCache<T> {
    input_len: usize,
    in_channels: usize,
    stem_map: KernelMap,
    stem: Vec<ConvNormCache<T>>,
    stages: Vec<StageCache<T>>,
}

impl<T> EncoderCache<T> {
    pub fn num_stages(&self) -> usize {
        self.stages.len()
    }
}

/// Runs the stem and all four stages. Element `k` of the result is the
/// output of stage `k + 1`.
pub fn encoder_forward<T: Real>(
    t: &SparseTensor<T>,
    params: &EncoderParams<T>,
    cfg: &EncoderConfig,
) -> Result<(Vec<SparseTensor<T>>, EncoderCache<T>)> {
    encoder_forward_stages(t, params, cfg, NUM_STAGES)
}

/// Like [`encoder_forward`] but stops after `stages` stages.
pub fn encoder_forward_stages<T: Real>(
    t: &SparseTensor<T>,
    params: &EncoderParams<T>,
    cfg: &EncoderConfig,
    stages: usize,
) -> Result<(Vec<SparseTensor<T>>, EncoderCache<T>)> {
    cfg.validate()?;
    if stages > NUM_STAGES || params.stages.len() != NUM_STAGES || params.stem.len() != 2 {
        return Err(Error::dim(
            "encoder stages",
            NUM_STAGES,
            stages.max(params.stages.len()),
        ));
    }
    if t.channels() != cfg.in_channels {
        return Err(Error::dim(
            "encoder input channels",
            cfg.in_channels,
            t.channels(),
        ));
    }
    let stem_map = KernelMap::build(t, 3, 1)?;
    let mut x = t.clone();
    let mut stem = Vec::with_capacity(2);
    for p in &params.stem {
        let (y, c) = conv_norm_forward(&x, p, &stem_map, cfg.norm)?;
        stem.push(c);
        x = y;
    }
    let mut outputs = Vec::with_capacity(stages);
    let mut caches = Vec::with_capacity(stages);
    for (k, sp) in params.stages.iter().take(stages).enumerate() {
        let down_map = KernelMap::build(&x, 2, 2)?;
        let (d, down) = conv_norm_forward(&x, &sp.down, &down_map, cfg.norm)?;
        let maps = StageMaps::build(&d)?;
        let mut r = d.clone();
        let mut residual = Vec::with_capacity(sp.residual.len());
        for rp in &sp.residual {
            let (y, c) = residual_block_forward(&r, rp, &maps.conv3, cfg.norm)?;
            residual.push(c);
            r = y;
        }
        let (l, link) = link_module_forward(&d, &sp.link, &cfg.module_config(k), &maps)?;
        let mut out = r.into_features();
        for (a, b) in out.iter_mut().zip(l.features()) {
            *a += *b;
        }
        x = d.with_features(out, d.channels())?;
        outputs.push(x.clone());
        caches.push(StageCache {
            down_map,
            down,
            maps,
            residual,
            link,
        });
    }
    Ok((
        outputs,
        EncoderCache {
            input_len: t.len(),
            in_channels: t.channels(),
            stem_map,
            stem,
            stages: caches,
        },
    ))
}

/// Backpropagates per-stage output gradients (`None` = zero). Returns the
/// input feature gradient and parameter gradients; stages not run by the
/// forward pass receive zero gradients.
pub fn encoder_backward<T: Real>(
    grads: &[Option<Vec<T>>],
    params: &EncoderParams<T>,
    cfg: &EncoderConfig,
    cache: &EncoderCache<T>,
) -> Result<(Vec<T>, EncoderParams<T>)> {
    let n = cache.stages.len();
    if grads.len() > n {
        return Err(Error::Usage(format!(
            "{} stage gradients supplied for a {n}-stage forward pass",
            grads.len()
        )));
    }
    let mut gp = params.zeroed();
    let mut carry: Option<Vec<T>> = None;
    for k in (0..n).rev() {
        let sc = &cache.stages[k];
        let sp = &params.stages[k];
        let mut g = carry.take();
        if let Some(Some(ext)) = grads.get(k) {
            match &mut g {
                Some(g) => {
                    for (a, b) in g.iter_mut().zip(ext) {
                        *a += *b;
                    }
                }
                None => g = Some(ext.clone()),
            }
        }
        let Some(g) = g else { continue };
        let len = sc.maps.conv3.in_len() * sp.link.channels();
        if g.len() != len {
            return Err(Error::dim("stage gradient", len, g.len()));
        }
        let (mut dd, glink) = link_module_backward(&g, &sp.link, &cfg.module_config(k), &sc.maps, &sc.link)?;
        gp.stages[k].link = glink;
        let mut gr = g;
        for (j, rp) in sp.residual.iter().enumerate().rev() {
            let (dx, grp) = residual_block_backward(&gr, rp, &sc.maps.conv3, &sc.residual[j])?;
            gp.stages[k].residual[j] = grp;
            gr = dx;
        }
        for (a, b) in dd.iter_mut().zip(&gr) {
            *a += *b;
        }
        let (dx, gdown) = conv_norm_backward(&dd, &sp.down, &sc.down_map, &sc.down)?;
        gp.stages[k].down = gdown;
        carry = Some(dx);
    }
    let mut g = carry.unwrap_or_else(|| vec![T::zero(); cache.input_len * params.stem[1].conv.c_out]);
    for (j, p) in params.stem.iter().enumerate().rev() {
        let (dx, gs) = conv_norm_backward(&g, p, &cache.stem_map, &cache.stem[j])?;
        gp.stem[j] = gs;
        g = dx;
    }
    debug_assert_eq!(g.len(), cache.input_len * cache.in_channels);
    Ok((g, gp))
}
