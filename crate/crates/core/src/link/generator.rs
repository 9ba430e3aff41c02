use std::f64::consts::PI;

use rand::Rng;
use rayon::prelude::*;

use crate::error::ensure_dim;
use crate::sparse::VoxelCoord;
use crate::{Error, Parameters, Real, Result};

/// Activation applied to the linear phase `sigma = W x`.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum ActivationMode {
    /// `k0 = cos(sigma)`, `k1 = sin(sigma)`; the pairwise kernel is an exact
    /// function of the offset.
    Pure,
    /// `k0 = cos(alpha * sigma) + sigma`, `k1 = sin(alpha * sigma) + sigma`
    /// with learnable per-channel frequency `alpha`.
    Augmented,
}

impl std::str::FromStr for ActivationMode {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "pure" => Ok(Self::Pure),
            "augmented" => Ok(Self::Augmented),
            other => Err(Error::config(format!(
                "unknown activation mode {other:?} (expected pure or augmented)"
            ))),
        }
    }
}

impl std::fmt::Display for ActivationMode {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(match self {
            Self::Pure => "pure",
            Self::Augmented => "augmented",
        })
    }
}

/// Linear kernel generator producing per-voxel, per-channel weight pairs.
///
/// Only `channels / groups` channels are generated; they are tiled `groups`
/// times so output channel `c` uses generated channel `c % (channels / groups)`.
#[derive(Debug, Clone, PartialEq)]
pub struct KernelGenerator<T> {
    /// `(channels / groups) x 3`, row-major.
    pub weights: Vec<T>,
    /// Frequencies, one per generated channel. Fixed at one in pure mode.
    pub alpha: Vec<T>,
    pub mode: ActivationMode,
    pub groups: usize,
    pub channels: usize,
}

impl<T: Real> KernelGenerator<T> {
    /// All-zero linear map, unit frequencies.
    pub fn zeros(channels: usize, groups: usize, mode: ActivationMode) -> Result<Self> {
        if groups == 0 || channels == 0 || !channels.is_multiple_of(groups) {
            return Err(Error::config(format!(
                "groups={groups} must be positive and divide channels={channels}"
            )));
        }
        let gc = channels / groups;
        Ok(Self {
            weights: vec![T::zero(); gc * 3],
            alpha: vec![T::one(); gc],
            mode,
            groups,
            channels,
        })
    }

    /// Weights uniform in `[-pi / extent, pi / extent]` where `extent = r * s`,
    /// so the phase sweeps about one period across the receptive field.
    pub fn random<R: Rng + ?Sized>(
        channels: usize,
        groups: usize,
        mode: ActivationMode,
        extent: usize,
        rng: &mut R,
    ) -> Result<Self> {
        let mut g = Self::zeros(channels, groups, mode)?;
        let bound = PI / extent.max(1) as f64;
        for w in &mut g.weights {
            *w = T::of(rng.random_range(-bound..=bound));
        }
        Ok(g)
    }

    pub fn cast<U: Real>(&self) -> KernelGenerator<U> {
        KernelGenerator {
            weights: self.weights.iter().map(|v| U::of(v.as_f64())).collect(),
            alpha: self.alpha.iter().map(|v| U::of(v.as_f64())).collect(),
            mode: self.mode,
            groups: self.groups,
            channels: self.channels,
        }
    }

    pub fn generated_channels(&self) -> usize {
        self.channels / self.groups
    }

    pub fn param_count(&self) -> usize {
        count_generator_params(self)
    }

    fn validate(&self) -> Result<()> {
        if self.groups == 0 || !self.channels.is_multiple_of(self.groups) {
            return Err(Error::config(format!(
                "groups={} must divide channels={}",
                self.groups, self.channels
            )));
        }
        let gc = self.generated_channels();
        ensure_dim("generator weights", gc * 3, self.weights.len())?;
        ensure_dim("generator alpha", gc, self.alpha.len())
    }

    #[inline]
    fn phase(&self, j: usize, p: [T; 3]) -> T {
        let w = &self.weights[j * 3..j * 3 + 3];
        w[0] * p[0] + w[1] * p[1] + w[2] * p[2]
    }
}

impl<T: Real> Parameters<T> for KernelGenerator<T> {
    fn slices(&self) -> Vec<&[T]> {
        match self.mode {
            ActivationMode::Pure => vec![&self.weights],
            ActivationMode::Augmented => vec![&self.weights, &self.alpha],
        }
    }

    fn slices_mut(&mut self) -> Vec<&mut [T]> {
        match self.mode {
            ActivationMode::Pure => vec![&mut self.weights],
            ActivationMode::Augmented => vec![&mut self.weights, &mut self.alpha],
        }
    }
}

/// Per-voxel kernel pairs, `N x channels` each, plus the generated phases
/// (`N x channels/groups`) kept for the backward pass.
#[derive(Debug, Clone)]
pub struct Kernels<T> {
    pub k0: Vec<T>,
    pub k1: Vec<T>,
    pub sigma: Vec<T>,
    pub channels: usize,
}

/// Evaluates both kernel components at every coordinate's `(x, y, z)`.
pub fn generate_kernel<T: Real>(gen: &KernelGenerator<T>, coords: &[VoxelCoord]) -> Result<Kernels<T>> {
    generate_kernel_at(gen, coords, [0; 3], false)
}

/// Like [`generate_kernel`] but evaluates the generator at `coord - anchor`.
#[allow(clippy::type_complexity)]
pub fn generate_kernel_at<T: Real>(
    gen: &KernelGenerator<T>,
    coords: &[VoxelCoord],
    anchor: [i32; 3],
    parallel: bool,
) -> Result<Kernels<T>> {
    gen.validate()?;
    for c in coords {
        c.pack_key()?;
    }
    let (c, gc) = (gen.channels, gen.generated_channels());
    let n = coords.len();
    let mut k0 = vec![T::zero(); n * c];
    let mut k1 = vec![T::zero(); n * c];
    let mut sigma = vec![T::zero(); n * gc];

    let fill = |(((v, k0r), k1r), sr): (((&VoxelCoord, &mut [T]), &mut [T]), &mut [T])| {
        let p = relative(v, anchor);
        for j in 0..gc {
            let s = gen.phase(j, p);
            sr[j] = s;
            let (a, b) = match gen.mode {
                ActivationMode::Pure => (s.cos(), s.sin()),
                ActivationMode::Augmented => {
                    let t = gen.alpha[j] * s;
                    (t.cos() + s, t.sin() + s)
                }
            };
            for g in 0..gen.groups {
                k0r[g * gc + j] = a;
                k1r[g * gc + j] = b;
            }
        }
    };
    if parallel {
        coords
            .par_iter()
            .zip(k0.par_chunks_mut(c))
            .zip(k1.par_chunks_mut(c))
            .zip(sigma.par_chunks_mut(gc))
            .for_each(fill);
    } else {
        coords
            .iter()
            .zip(k0.chunks_mut(c))
            .zip(k1.chunks_mut(c))
            .zip(sigma.chunks_mut(gc))
            .for_each(fill);
    }
    Ok(Kernels {
        k0,
        k1,
        sigma,
        channels: c,
    })
}

#[inline]
pub(crate) fn relative<T: Real>(v: &VoxelCoord, anchor: [i32; 3]) -> [T; 3] {
    [
        T::of((v.x as i64 - anchor[0] as i64) as f64),
        T::of((v.y as i64 - anchor[1] as i64) as f64),
        T::of((v.z as i64 - anchor[2] as i64) as f64),
    ]
}

/// Chains kernel-value gradients `dk0`, `dk1` (`N x channels`) back to the
/// generator weights and frequencies.
pub fn generator_backward<T: Real>(
    gen: &KernelGenerator<T>,
    coords: &[VoxelCoord],
    anchor: [i32; 3],
    kernels: &Kernels<T>,
    dk0: &[T],
    dk1: &[T],
) -> KernelGenerator<T> {
    let mut grad = gen.zeroed();
    let (c, gc) = (gen.channels, gen.generated_channels());
    for (row, v) in coords.iter().enumerate() {
        let p: [T; 3] = relative(v, anchor);
        for j in 0..gc {
            let s = kernels.sigma[row * gc + j];
            let mut d0 = T::zero();
            let mut d1 = T::zero();
            for g in 0..gen.groups {
                d0 += dk0[row * c + g * gc + j];
                d1 += dk1[row * c + g * gc + j];
            }
            let ds = match gen.mode {
                ActivationMode::Pure => -s.sin() * d0 + s.cos() * d1,
                ActivationMode::Augmented => {
                    let a = gen.alpha[j];
                    let (sn, cs) = (a * s).sin_cos();
                    grad.alpha[j] += -s * sn * d0 + s * cs * d1;
                    (T::one() - a * sn) * d0 + (T::one() + a * cs) * d1
                }
            };
            for (axis, pv) in p.iter().enumerate() {
                grad.weights[j * 3 + axis] += ds * *pv;
            }
        }
    }
    grad
}

/// Learnable parameters of a generator: `3 C/g`, plus `C/g` frequencies in
/// augmented mode. Independent of block size and range.
pub fn count_generator_params<T: Real>(gen: &KernelGenerator<T>) -> usize {
    let gc = gen.generated_channels();
    3 * gc
        + match gen.mode {
            ActivationMode::Pure => 0,
            ActivationMode::Augmented => gc,
        }
}

/// Parameters of a dense `K^3` kernel: `K^3 * C_in * C_out`.
pub fn count_dense_kernel_params(kernel_size: u64, c_in: u64, c_out: u64) -> u64 {
    kernel_size.pow(3) * c_in * c_out
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    fn origin() -> Vec<VoxelCoord> {
        vec![VoxelCoord::new(0, 0, 0, 0)]
    }

    #[test]
    fn origin_gives_unit_cosine_zero_sine() {
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        for mode in [ActivationMode::Pure, ActivationMode::Augmented] {
            let g = KernelGenerator::<f64>::random(8, 2, mode, 9, &mut rng).unwrap();
            let k = generate_kernel(&g, &origin()).unwrap();
            assert!(k.k0.iter().all(|v| *v == 1.0));
            assert!(k.k1.iter().all(|v| *v == 0.0));
        }
    }

    #[test]
    fn pure_mode_satisfies_pythagoras() {
        let mut rng = ChaCha8Rng::seed_from_u64(2);
        let g = KernelGenerator::<f64>::random(6, 1, ActivationMode::Pure, 3, &mut rng).unwrap();
        let coords: Vec<VoxelCoord> = (0..200)
            .map(|_| {
                VoxelCoord::new(
                    0,
                    rng.random_range(-900..900),
                    rng.random_range(-900..900),
                    rng.random_range(-90..90),
                )
            })
            .collect();
        let k = generate_kernel(&g, &coords).unwrap();
        for (a, b) in k.k0.iter().zip(&k.k1) {
            assert!((a * a + b * b - 1.0).abs() <= 1e-12);
        }
    }

    #[test]
    fn group_sharing_tiles_generated_channels() {
        let mut g = KernelGenerator::<f64>::zeros(4, 2, ActivationMode::Pure).unwrap();
        g.weights = vec![0.1, 0.2, 0.3, -0.4, 0.5, 0.25];
        let v = VoxelCoord::new(0, 1, 2, -3);
        let k = generate_kernel(&g, &[v]).unwrap();
        // by hand: sigma_a = 0.1 + 0.4 - 0.9, sigma_b = -0.4 + 1.0 - 0.75
        let (sa, sb) = (0.1f64 + 0.4 - 0.9, -0.4f64 + 1.0 - 0.75);
        let want0 = [sa.cos(), sb.cos(), sa.cos(), sb.cos()];
        let want1 = [sa.sin(), sb.sin(), sa.sin(), sb.sin()];
        for i in 0..4 {
            assert!((k.k0[i] - want0[i]).abs() < 1e-15);
            assert!((k.k1[i] - want1[i]).abs() < 1e-15);
        }
        assert_eq!(k.k0[0], k.k0[2]);
        assert_eq!(k.k1[1], k.k1[3]);
    }

    #[test]
    fn groups_must_divide_channels() {
        assert!(matches!(
            KernelGenerator::<f32>::zeros(6, 4, ActivationMode::Pure),
            Err(Error::Config(_))
        ));
        let mut g = KernelGenerator::<f32>::zeros(4, 2, ActivationMode::Pure).unwrap();
        g.groups = 3;
        assert!(matches!(generate_kernel(&g, &origin()), Err(Error::Config(_))));
    }

    #[test]
    fn parallel_matches_sequential() {
        let mut rng = ChaCha8Rng::seed_from_u64(9);
        let g = KernelGenerator::<f32>::random(16, 2, ActivationMode::Augmented, 21, &mut rng).unwrap();
        let coords: Vec<VoxelCoord> = (0..5000)
            .map(|_| {
                VoxelCoord::new(
                    0,
                    rng.random_range(-60..60),
                    rng.random_range(-60..60),
                    rng.random_range(-5..5),
                )
            })
            .collect();
        let a = generate_kernel_at(&g, &coords, [3, -1, 2], false).unwrap();
        let b = generate_kernel_at(&g, &coords, [3, -1, 2], true).unwrap();
        assert_eq!(a.k0, b.k0);
        assert_eq!(a.k1, b.k1);
    }

    #[test]
    fn parameter_counts() {
        assert_eq!(count_dense_kernel_params(21, 32, 64), 18_966_528);
        assert_eq!(count_dense_kernel_params(1, 7, 7), 49);
        assert_eq!(count_dense_kernel_params(3, 4, 4), 432);
        let aug = KernelGenerator::<f32>::zeros(64, 2, ActivationMode::Augmented).unwrap();
        assert_eq!(count_generator_params(&aug), 128);
        assert_eq!(aug.num_params(), 128);
        let pure = KernelGenerator::<f32>::zeros(64, 1, ActivationMode::Pure).unwrap();
        assert_eq!(count_generator_params(&pure), 192);
        assert_eq!(pure.num_params(), 192);
    }
}
