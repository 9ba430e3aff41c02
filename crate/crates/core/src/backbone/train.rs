use std::sync::Arc;

use rand::Rng;

use super::encoder::{encoder_backward, encoder_forward_stages, EncoderConfig, EncoderParams};
use crate::conv::{sparse_conv_backward, sparse_conv_forward, ConvWeights, KernelMap};
use crate::sparse::{CoordSet, SparseTensor, VoxelCoord};
use crate::{Error, Parameters, Real, Result};

/// Largest supported number of classes.
pub const MAX_CLASSES: usize = 8;

/// Encoder plus a pointwise classification head at stage-1 resolution.
#[derive(Debug, Clone, PartialEq)]
pub struct ToyModel<T> {
    pub encoder: EncoderParams<T>,
    pub head: ConvWeights<T>,
}

impl<T: Real> ToyModel<T> {
    /// Random encoder, zero head (uniform logits at initialisation).
    pub fn new<R: Rng + ?Sized>(cfg: &EncoderConfig, classes: usize, rng: &mut R) -> Result<Self> {
        if !(2..=MAX_CLASSES).contains(&classes) {
            return Err(Error::config(format!(
                "classes must be in 2..={MAX_CLASSES}, got {classes}"
            )));
        }
        Ok(Self {
            encoder: EncoderParams::random(cfg, rng)?,
            head: ConvWeights::zeros(1, cfg.widths[0], classes),
        })
    }

    pub fn classes(&self) -> usize {
        self.head.c_out
    }
}

impl<T: Real> Parameters<T> for ToyModel<T> {
    fn slices(&self) -> Vec<&[T]> {
        let mut v = self.encoder.slices();
        v.extend(self.head.slices());
        v
    }

    fn slices_mut(&mut self) -> Vec<&mut [T]> {
        let mut v = self.encoder.slices_mut();
        v.extend(self.head.slices_mut());
        v
    }
}

/// Majority vote of input labels over each stride-2 parent voxel; ties go
/// to the smallest class.
pub fn downsample_labels(coords: &[VoxelCoord], labels: &[u8], out: &CoordSet) -> Result<Vec<u8>> {
    if coords.len() != labels.len() {
        return Err(Error::dim("labels", coords.len(), labels.len()));
    }
    let mut votes = vec![[0u32; 256]; out.len()];
    for (c, &l) in coords.iter().zip(labels) {
        let Some(row) = out.query(&c.floor_div(2)) else {
            return Err(Error::Usage(format!("{c} has no parent voxel")));
        };
        votes[row][l as usize] += 1;
    }
    Ok(votes
        .iter()
        .map(|v| {
            let mut best = 0;
            for (k, &n) in v.iter().enumerate() {
                if n > v[best] {
                    best = k;
                }
            }
            best as u8
        })
        .collect())
}

struct Prepared {
    targets: Vec<u8>,
    head_map: KernelMap,
}

fn prepare<T: Real>(t: &SparseTensor<T>, labels: &[u8], classes: usize) -> Result<Prepared> {
    if let Some(&l) = labels.iter().find(|&&l| l as usize >= classes) {
        return Err(Error::config(format!(
            "label {l} out of range for {classes} classes"
        )));
    }
    let down = KernelMap::downsample(t.coord_set())?;
    let out: Arc<CoordSet> = down.out_set().clone();
    let targets = downsample_labels(t.coords(), labels, &out)?;
    let head_map = KernelMap::submanifold(&out, 1);
    Ok(Prepared { targets, head_map })
}

/// Mean cross-entropy of the model on one scene and, optionally, its
/// gradient scaled by `weight`.
fn scene_loss<T: Real>(
    model: &ToyModel<T>,
    cfg: &EncoderConfig,
    t: &SparseTensor<T>,
    prep: &Prepared,
    weight: f64,
    grads: Option<&mut ToyModel<T>>,
) -> Result<f64> {
    let (outs, cache) = encoder_forward_stages(t, &model.encoder, cfg, 1)?;
    let feat = &outs[0];
    let logits = sparse_conv_forward(feat, &model.head, &prep.head_map)?;
    let k = model.classes();
    let n = prep.targets.len() as f64;
    let mut loss = 0.0;
    let mut dlogits = vec![T::zero(); logits.features().len()];
    for ((row, &y), d) in logits
        .features()
        .chunks_exact(k)
        .zip(&prep.targets)
        .zip(dlogits.chunks_exact_mut(k))
    {
        let m = row.iter().fold(T::neg_infinity(), |a, b| a.max(*b));
        let exps: Vec<T> = row.iter().map(|v| (*v - m).exp()).collect();
        let z: T = exps.iter().copied().sum();
        loss += (z.ln() + m - row[y as usize]).as_f64();
        let scale = T::of(weight / n);
        for j in 0..k {
            let p = exps[j] / z;
            let target = if j == y as usize { T::one() } else { T::zero() };
            d[j] = (p - target) * scale;
        }
    }
    if let Some(g) = grads {
        let gh = sparse_conv_backward(&dlogits, feat, &model.head, &prep.head_map)?;
        g.head.accumulate(&gh.weights);
        let (_, ge) = encoder_backward(&[Some(gh.features)], &model.encoder, cfg, &cache)?;
        g.encoder.accumulate(&ge);
    }
    Ok(loss / n)
}

/// Plain gradient descent on the mean per-scene cross-entropy. Entry `i` of
/// the trace is the loss before update `i`.
pub fn toy_train<T: Real>(
    model: &mut ToyModel<T>,
    scenes: &[SparseTensor<T>],
    labels: &[Vec<u8>],
    cfg: &EncoderConfig,
    steps: usize,
    lr: f64,
) -> Result<Vec<f64>> {
    if scenes.len() != labels.len() {
        return Err(Error::dim("label sets", scenes.len(), labels.len()));
    }
    if scenes.is_empty() || scenes.iter().any(|s| s.is_empty()) {
        return Err(Error::Usage("toy training needs non-empty scenes".into()));
    }
    if !lr.is_finite() || lr < 0.0 {
        return Err(Error::config(format!(
            "learning rate must be finite and >= 0, got {lr}"
        )));
    }
    let prepared = scenes
        .iter()
        .zip(labels)
        .map(|(t, l)| prepare(t, l, model.classes()))
        .collect::<Result<Vec<_>>>()?;
    let w = 1.0 / scenes.len() as f64;
    let mut trace = Vec::with_capacity(steps);
    for step in 0..steps {
        let mut grads = model.zeroed();
        let mut loss = 0.0;
        for (t, prep) in scenes.iter().zip(&prepared) {
            loss += w * scene_loss(model, cfg, t, prep, w, Some(&mut grads))?;
        }
        if !loss.is_finite() {
            return Err(Error::Divergence { step, loss });
        }
        trace.push(loss);
        model.sgd_step(&grads, T::of(lr));
    }
    Ok(trace)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::gradcheck::GradCheck;
    use crate::link::ActivationMode;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    fn scene(rng: &mut ChaCha8Rng, n: usize) -> (SparseTensor<f64>, Vec<u8>) {
        let mut coords: Vec<VoxelCoord> = (0..n * 2)
            .map(|_| {
                VoxelCoord::new(
                    0,
                    rng.random_range(-6..6),
                    rng.random_range(-6..6),
                    rng.random_range(0..3),
                )
            })
            .collect();
        coords.sort();
        coords.dedup();
        coords.truncate(n);
        let labels = coords
            .iter()
            .map(|c| {
                if c.z == 0 {
                    0
                } else if c.x < 0 {
                    1
                } else {
                    2
                }
            })
            .collect();
        let f = coords.iter().flat_map(|c| [c.z as f64 / 3.0, 1.0]).collect();
        (SparseTensor::new(coords, f, 2).unwrap(), labels)
    }

    fn cfg() -> EncoderConfig {
        let mut c = EncoderConfig::uniform(2, 8, 3, 2);
        c.groups = 2;
        c.mode = ActivationMode::Augmented;
        c
    }

    #[test]
    fn majority_vote_ties_to_smallest() {
        let coords = vec![
            VoxelCoord::new(0, 0, 0, 0),
            VoxelCoord::new(0, 1, 0, 0),
            VoxelCoord::new(0, 2, 0, 0),
            VoxelCoord::new(0, 3, 0, 0),
            VoxelCoord::new(0, 3, 1, 1),
        ];
        let out = CoordSet::sorted(vec![VoxelCoord::new(0, 0, 0, 0), VoxelCoord::new(0, 1, 0, 0)]).unwrap();
        let l = downsample_labels(&coords, &[3, 1, 2, 4, 4], &out).unwrap();
        assert_eq!(l, vec![1, 4]);
    }

    #[test]
    fn initial_loss_is_log_classes() {
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let (t, l) = scene(&mut rng, 80);
        let mut m = ToyModel::new(&cfg(), 3, &mut rng).unwrap();
        let trace = toy_train(&mut m, &[t], &[l], &cfg(), 1, 0.1).unwrap();
        assert!((trace[0] - 3f64.ln()).abs() < 1e-12);
    }

    #[test]
    fn zero_learning_rate_is_constant() {
        let mut rng = ChaCha8Rng::seed_from_u64(2);
        let (t, l) = scene(&mut rng, 80);
        let mut m = ToyModel::new(&cfg(), 3, &mut rng).unwrap();
        let before = m.clone();
        let trace = toy_train(&mut m, &[t], &[l], &cfg(), 5, 0.0).unwrap();
        assert!(trace.iter().all(|v| *v == trace[0]));
        assert_eq!(m, before);
    }

    #[test]
    fn loss_decreases() {
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let (t, l) = scene(&mut rng, 120);
        let mut m = ToyModel::new(&cfg(), 3, &mut rng).unwrap();
        let trace = toy_train(&mut m, &[t], &[l], &cfg(), 40, 0.2).unwrap();
        assert!(trace[39] < trace[0] * 0.7, "{trace:?}");
    }

    #[test]
    fn divergence_reports_step() {
        let mut rng = ChaCha8Rng::seed_from_u64(4);
        let (t, l) = scene(&mut rng, 60);
        let mut m = ToyModel::new(&cfg(), 3, &mut rng).unwrap();
        let e = toy_train(
            &mut m,
            std::slice::from_ref(&t),
            std::slice::from_ref(&l),
            &cfg(),
            5,
            f64::MAX,
        )
        .unwrap_err();
        assert!(matches!(e, Error::Divergence { step, .. } if step >= 1), "{e:?}");
        let mut f = t.features().to_vec();
        f[3] = f64::NAN;
        let bad = t.with_features(f, 2).unwrap();
        let e = toy_train(&mut m, &[bad], &[l], &cfg(), 5, 0.1).unwrap_err();
        assert!(matches!(e, Error::Divergence { step: 0, .. }), "{e:?}");
    }

    #[test]
    fn rejects_bad_labels() {
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        let (t, mut l) = scene(&mut rng, 60);
        let mut m = ToyModel::new(&cfg(), 3, &mut rng).unwrap();
        l[0] = 7;
        assert!(toy_train(
            &mut m,
            std::slice::from_ref(&t),
            std::slice::from_ref(&l),
            &cfg(),
            1,
            0.1
        )
        .is_err());
        assert!(toy_train(&mut m, &[t], &[l[1..].to_vec()], &cfg(), 1, 0.1).is_err());
        assert!(ToyModel::<f64>::new(&cfg(), 9, &mut rng).is_err());
    }

    #[test]
    fn gradient_matches_finite_differences() {
        let mut rng = ChaCha8Rng::seed_from_u64(6);
        let (t, l) = scene(&mut rng, 60);
        let c = cfg();
        let mut m = ToyModel::new(&c, 3, &mut rng).unwrap();
        m.head = ConvWeights::random(1, 8, 3, &mut rng);
        let prep = prepare(&t, &l, 3).unwrap();
        let mut g = m.zeroed();
        scene_loss(&m, &c, &t, &prep, 1.0, Some(&mut g)).unwrap();
        let r = GradCheck::end_to_end()
            .check_params(&m, &g, |m| scene_loss(m, &c, &t, &prep, 1.0, None).unwrap());
        assert!(r.passed(), "{r:?}");
    }
}
