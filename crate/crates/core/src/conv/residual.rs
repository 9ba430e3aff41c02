use rand::Rng;

use super::layers::{
    layer_norm_backward, layer_norm_forward, relu_backward, relu_inplace, LayerNormCache, LayerNormParams,
};
use super::{sparse_conv_backward, sparse_conv_forward, ConvWeights, KernelMap};
use crate::sparse::SparseTensor;
use crate::{Error, Parameters, Real, Result};

/// Two submanifold 3^3 convolutions with LayerNorm and an identity skip:
/// `y = ReLU(Norm(Conv(ReLU(Norm(Conv(x))))) + x)`.
#[derive(Debug, Clone, PartialEq)]
pub struct ResidualBlockParams<T> {
    pub conv1: ConvWeights<T>,
    pub norm1: LayerNormParams<T>,
    pub conv2: ConvWeights<T>,
    pub norm2: LayerNormParams<T>,
}

impl<T: Real> ResidualBlockParams<T> {
    pub fn zeros(channels: usize) -> Self {
        Self {
            conv1: ConvWeights::zeros(3, channels, channels),
            norm1: LayerNormParams::new(channels),
            conv2: ConvWeights::zeros(3, channels, channels),
            norm2: LayerNormParams::new(channels),
        }
    }

    pub fn random<R: Rng + ?Sized>(channels: usize, rng: &mut R) -> Self {
        Self {
            conv1: ConvWeights::random(3, channels, channels, rng),
            norm1: LayerNormParams::new(channels),
            conv2: ConvWeights::random(3, channels, channels, rng),
            norm2: LayerNormParams::new(channels),
        }
    }

    pub fn channels(&self) -> usize {
        self.conv1.c_in
    }
}

impl<T: Real> Parameters<T> for ResidualBlockParams<T> {
    fn slices(&self) -> Vec<&[T]> {
        let mut v = self.conv1.slices();
        v.extend(self.norm1.slices());
        v.extend(self.conv2.slices());
        v.extend(self.norm2.slices());
        v
    }

    fn slices_mut(&mut self) -> Vec<&mut [T]> {
        let mut v = self.conv1.slices_mut();
        v.extend(self.norm1.slices_mut());
        v.extend(self.conv2.slices_mut());
        v.extend(self.norm2.slices_mut());
        v
    }
}

#[derive(Debug, Clone)]
pub struct ResidualCache<T> {
    input: SparseTensor<T>,
    norm1: LayerNormCache<T>,
    hidden: SparseTensor<T>,
    norm2: LayerNormCache<T>,
    output: Vec<T>,
}

/// Forward pass over a prebuilt 3^3 submanifold map.
pub fn residual_block_forward<T: Real>(
    x: &SparseTensor<T>,
    p: &ResidualBlockParams<T>,
    km: &KernelMap,
    norm: bool,
) -> Result<(SparseTensor<T>, ResidualCache<T>)> {
    let c = x.channels();
    if p.conv1.c_in != c || p.conv1.c_out != c || p.conv2.c_in != c || p.conv2.c_out != c {
        return Err(Error::dim("residual block channels", c, p.conv1.c_out));
    }
    let h1 = sparse_conv_forward(x, &p.conv1, km)?;
    let (mut a1, norm1) = layer_norm_forward(h1.features(), &p.norm1, norm)?;
    relu_inplace(&mut a1);
    let hidden = x.with_features(a1, c)?;
    let h2 = sparse_conv_forward(&hidden, &p.conv2, km)?;
    let (mut y, norm2) = layer_norm_forward(h2.features(), &p.norm2, norm)?;
    for (v, s) in y.iter_mut().zip(x.features()) {
        *v += *s;
    }
    relu_inplace(&mut y);
    let out = x.with_features(y.clone(), c)?;
    Ok((
        out,
        ResidualCache {
            input: x.clone(),
            norm1,
            hidden,
            norm2,
            output: y,
        },
    ))
}

/// Returns `(grad_x, grad_params)`.
pub fn residual_block_backward<T: Real>(
    grad_y: &[T],
    p: &ResidualBlockParams<T>,
    km: &KernelMap,
    cache: &ResidualCache<T>,
) -> Result<(Vec<T>, ResidualBlockParams<T>)> {
    let dz = relu_backward(grad_y, &cache.output);
    let (dh2, gn2) = layer_norm_backward(&dz, &p.norm2, &cache.norm2);
    let g2 = sparse_conv_backward(&dh2, &cache.hidden, &p.conv2, km)?;
    let da1 = relu_backward(&g2.features, cache.hidden.features());
    let (dh1, gn1) = layer_norm_backward(&da1, &p.norm1, &cache.norm1);
    let g1 = sparse_conv_backward(&dh1, &cache.input, &p.conv1, km)?;
    let mut dx = g1.features;
    for (d, s) in dx.iter_mut().zip(&dz) {
        *d += *s;
    }
    Ok((
        dx,
        ResidualBlockParams {
            conv1: g1.weights,
            norm1: gn1,
            conv2: g2.weights,
            norm2: gn2,
        },
    ))
}

/// Convenience wrapper that builds its own submanifold map.
pub fn residual_block<T: Real>(
    x: &SparseTensor<T>,
    p: &ResidualBlockParams<T>,
    norm: bool,
) -> Result<SparseTensor<T>> {
    let km = KernelMap::build(x, 3, 1)?;
    residual_block_forward(x, p, &km, norm).map(|(y, _)| y)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::gradcheck::GradCheck;
    use crate::sparse::VoxelCoord;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    fn scene(rng: &mut ChaCha8Rng, n: usize, c: usize) -> SparseTensor<f64> {
        let mut coords: Vec<VoxelCoord> = (0..n * 3)
            .map(|_| {
                VoxelCoord::new(
                    0,
                    rng.random_range(0..5),
                    rng.random_range(0..5),
                    rng.random_range(0..5),
                )
            })
            .collect();
        coords.sort();
        coords.dedup();
        coords.truncate(n);
        let n = coords.len();
        let f = (0..n * c).map(|_| rng.random_range(-1.0..1.0)).collect();
        SparseTensor::new(coords, f, c).unwrap()
    }

    #[test]
    fn zero_weights_reduce_to_relu_of_input() {
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let x = scene(&mut rng, 20, 3);
        let y = residual_block(&x, &ResidualBlockParams::zeros(3), false).unwrap();
        for (a, b) in y.features().iter().zip(x.features()) {
            assert_eq!(*a, b.max(0.0));
        }
    }

    #[test]
    fn identity_center_on_single_voxel() {
        let x = SparseTensor::new(vec![VoxelCoord::new(0, 1, 1, 1)], vec![1.5f64, -0.5, -2.0], 3).unwrap();
        let mut p = ResidualBlockParams::zeros(3);
        p.conv1 = ConvWeights::identity_center(3, 3);
        p.conv2 = ConvWeights::identity_center(3, 3);
        let y = residual_block(&x, &p, false).unwrap();
        for (a, v) in y.features().iter().zip(x.features()) {
            assert_eq!(*a, (v.max(0.0) + v).max(0.0));
        }
    }

    #[test]
    fn preserves_coordinates() {
        let mut rng = ChaCha8Rng::seed_from_u64(2);
        let x = scene(&mut rng, 40, 4);
        let y = residual_block(&x, &ResidualBlockParams::random(4, &mut rng), true).unwrap();
        assert_eq!(y.coords(), x.coords());
    }

    #[test]
    fn channel_mismatch() {
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let x = scene(&mut rng, 5, 2);
        assert!(matches!(
            residual_block(&x, &ResidualBlockParams::zeros(3), true),
            Err(Error::Dimension { .. })
        ));
    }

    #[test]
    fn backward_matches_finite_differences() {
        for seed in 0..3 {
            let mut rng = ChaCha8Rng::seed_from_u64(10 + seed);
            let x = scene(&mut rng, 15, 3);
            let mut p = ResidualBlockParams::random(3, &mut rng);
            for v in p.norm1.shift.iter_mut().chain(p.norm2.shift.iter_mut()) {
                *v = rng.random_range(0.2..0.6);
            }
            let km = KernelMap::build(&x, 3, 1).unwrap();
            let r: Vec<f64> = (0..x.features().len())
                .map(|_| rng.random_range(-1.0..1.0))
                .collect();
            let loss = |x: &SparseTensor<f64>, p: &ResidualBlockParams<f64>| -> f64 {
                let (y, _) = residual_block_forward(x, p, &km, true).unwrap();
                y.features().iter().zip(&r).map(|(a, b)| a * b).sum()
            };
            let (_, cache) = residual_block_forward(&x, &p, &km, true).unwrap();
            let (gx, gp) = residual_block_backward(&r, &p, &km, &cache).unwrap();
            let check = GradCheck::per_op();
            let rx = check.check_vector(x.features(), &gx, |f| {
                loss(&x.with_features(f.to_vec(), 3).unwrap(), &p)
            });
            assert!(rx.passed(), "{rx:?}");
            let rp = check.check_params(&p, &gp, |p| loss(&x, p));
            assert!(rp.passed(), "{rp:?}");
        }
    }
}
