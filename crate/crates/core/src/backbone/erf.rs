use super::encoder::{
    encoder_backward, encoder_forward_stages, EncoderConfig, EncoderParams, NUM_STAGES, RESIDUAL_BLOCKS,
};
use crate::sparse::{SparseTensor, VoxelCoord};
use crate::{Error, Real, Result};

/// Per-input-voxel gradient magnitude of one stage output voxel.
#[derive(Debug, Clone, PartialEq)]
pub struct ErfMap {
    /// 1-based stage index.
    pub stage: usize,
    /// Seed voxel in stage coordinates.
    pub seed: VoxelCoord,
    /// Centre of the seed footprint in input voxel units.
    pub seed_center: [f64; 3],
    pub coords: Vec<VoxelCoord>,
    /// L1 norm over input channels of the feature gradient.
    pub magnitude: Vec<f64>,
    pub total: f64,
}

impl ErfMap {
    pub fn chebyshev(&self, c: &VoxelCoord) -> f64 {
        let p = [c.x as f64, c.y as f64, c.z as f64];
        (0..3)
            .map(|a| (p[a] - self.seed_center[a]).abs())
            .fold(0.0, f64::max)
    }

    /// Smallest Chebyshev radius around the seed centre holding `fraction`
    /// of the total magnitude. Zero for an all-zero map.
    pub fn mass_radius(&self, fraction: f64) -> f64 {
        if self.total.is_nan() || self.total <= 0.0 {
            return 0.0;
        }
        let mut v: Vec<(f64, f64)> = self
            .coords
            .iter()
            .zip(&self.magnitude)
            .filter(|(_, m)| **m > 0.0)
            .map(|(c, m)| (self.chebyshev(c), *m))
            .collect();
        v.sort_by(|a, b| a.0.total_cmp(&b.0));
        let target = fraction * self.total;
        let mut acc = 0.0;
        for (d, m) in &v {
            acc += m;
            if acc >= target {
                return *d;
            }
        }
        v.last().map_or(0.0, |x| x.0)
    }

    pub fn radius90(&self) -> f64 {
        self.mass_radius(0.9)
    }

    /// Largest Chebyshev distance of any voxel with nonzero magnitude.
    pub fn support_radius(&self) -> f64 {
        self.coords
            .iter()
            .zip(&self.magnitude)
            .filter(|(_, m)| **m != 0.0)
            .map(|(c, _)| self.chebyshev(c))
            .fold(0.0, f64::max)
    }
}

fn footprint_center(seed: &VoxelCoord, stage: usize) -> [f64; 3] {
    let f = (1i64 << stage) as f64;
    let off = (f - 1.0) / 2.0;
    [
        seed.x as f64 * f + off,
        seed.y as f64 * f + off,
        seed.z as f64 * f + off,
    ]
}

/// Inclusive per-axis input-coordinate box outside which a stage-`stage`
/// voxel has zero gradient when every LinK branch is disabled.
pub fn bypass_support_box(seed: &VoxelCoord, stage: usize) -> [[i64; 2]; 3] {
    let depth = 2 * RESIDUAL_BLOCKS as i64;
    let mut b = [seed.x, seed.y, seed.z].map(|v| [v as i64 - depth, v as i64 + depth]);
    for level in (0..stage).rev() {
        let grow = if level == 0 { 2 } else { depth };
        for ax in &mut b {
            *ax = [2 * ax[0] - grow, 2 * ax[1] + 1 + grow];
        }
    }
    b
}

/// Receptive-field map of the stage-`stage` voxel nearest the input centroid.
pub fn erf_map<T: Real>(
    t: &SparseTensor<T>,
    params: &EncoderParams<T>,
    cfg: &EncoderConfig,
    stage: usize,
) -> Result<ErfMap> {
    if stage == 0 || stage > NUM_STAGES {
        return Err(Error::Usage(format!(
            "stage must be in 1..={NUM_STAGES}, got {stage}"
        )));
    }
    if t.is_empty() {
        return Err(Error::Usage("empty scene".into()));
    }
    let (outs, cache) = encoder_forward_stages(t, params, cfg, stage)?;
    let out = &outs[stage - 1];
    if out.is_empty() {
        return Err(Error::Usage(format!("stage {stage} has no voxels")));
    }
    let n = t.len() as f64;
    let mut centroid = [0.0; 3];
    for c in t.coords() {
        centroid[0] += c.x as f64 / n;
        centroid[1] += c.y as f64 / n;
        centroid[2] += c.z as f64 / n;
    }
    let mut best = (f64::INFINITY, 0);
    for (i, c) in out.coords().iter().enumerate() {
        let p = footprint_center(c, stage);
        let d: f64 = (0..3).map(|a| (p[a] - centroid[a]).powi(2)).sum();
        if d < best.0 {
            best = (d, i);
        }
    }
    let row = best.1;
    let ch = out.channels();
    let mut g = vec![T::zero(); out.features().len()];
    g[row * ch..(row + 1) * ch].fill(T::one());
    let mut grads: Vec<Option<Vec<T>>> = vec![None; stage];
    grads[stage - 1] = Some(g);
    let (gx, _) = encoder_backward(&grads, params, cfg, &cache)?;
    let magnitude: Vec<f64> = gx
        .chunks_exact(t.channels())
        .map(|r| r.iter().map(|v| v.as_f64().abs()).sum())
        .collect();
    let total = magnitude.iter().sum();
    let seed = out.coords()[row];
    Ok(ErfMap {
        stage,
        seed,
        seed_center: footprint_center(&seed, stage),
        coords: t.coords().to_vec(),
        magnitude,
        total,
    })
}
