use std::fs;
use std::path::Path;

use link_core::sparse::{voxelize, PointCloud, SparseTensor};
use link_core::Real;
use rand::seq::index::sample;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};

use crate::config::{Profile, RunConfig};
use crate::error::{CliError, Result};

const RECORD: usize = 16;

/// Reads a scan of little-endian `(x, y, z, intensity)` f32 records.
pub fn load_lidar_bin(path: &Path) -> Result<PointCloud> {
    let bytes = fs::read(path).map_err(|e| CliError::io(path, e))?;
    if bytes.len() % RECORD != 0 {
        return Err(CliError::Format {
            path: path.to_path_buf(),
            msg: format!("length {} is not a multiple of {RECORD}", bytes.len()),
        });
    }
    let n = bytes.len() / RECORD;
    let mut positions = Vec::with_capacity(n);
    let mut attributes = Vec::with_capacity(n);
    for rec in bytes.chunks_exact(RECORD) {
        let f = |i: usize| f32::from_le_bytes(rec[i * 4..i * 4 + 4].try_into().unwrap());
        positions.push([f(0), f(1), f(2)]);
        attributes.push(f(3));
    }
    Ok(PointCloud::new(positions, attributes, 1)?)
}

/// Writes a single-attribute cloud in the format read by [`load_lidar_bin`].
pub fn write_lidar_bin(path: &Path, cloud: &PointCloud) -> Result<()> {
    if cloud.attr_dim != 1 {
        return Err(CliError::Usage(format!(
            "scan records hold one attribute, cloud has {}",
            cloud.attr_dim
        )));
    }
    let mut bytes = Vec::with_capacity(cloud.len() * RECORD);
    for (p, a) in cloud.positions.iter().zip(&cloud.attributes) {
        for v in [p[0], p[1], p[2], *a] {
            bytes.extend_from_slice(&v.to_le_bytes());
        }
    }
    fs::write(path, bytes).map_err(|e| CliError::io(path, e))
}

/// Deterministic synthetic scene inside `[-extent/2, extent/2)` in x and y.
///
/// `Uniform` fills the cube uniformly. `GroundClusters` puts 60% of the
/// points on a thin ground slab and the rest in Gaussian blobs resting on it;
/// ground intensity lies in `[0, 0.5)` and blob intensity in `[0.5, 1)`.
pub fn gen_synthetic_scene(seed: u64, n_points: usize, extent: f64, profile: Profile) -> PointCloud {
    gen_labeled_scene(seed, n_points, extent, profile, 2).0
}

/// Like [`gen_synthetic_scene`], also returning a per-point class: 0 for
/// ground or uniform points, `1 + blob % (classes - 1)` for blob points.
pub fn gen_labeled_scene(
    seed: u64,
    n_points: usize,
    extent: f64,
    profile: Profile,
    classes: usize,
) -> (PointCloud, Vec<u8>) {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let h = extent / 2.0;
    let mut positions = Vec::with_capacity(n_points);
    let mut intensity = Vec::with_capacity(n_points);
    let mut labels = Vec::with_capacity(n_points);
    match profile {
        Profile::Uniform => {
            for _ in 0..n_points {
                positions.push([0, 1, 2].map(|_| rng.random_range(-h..h) as f32));
                intensity.push(rng.random_range(0.0..1.0f32));
                labels.push(0);
            }
        }
        Profile::GroundClusters => {
            let n_blobs = 6;
            let blobs: Vec<([f64; 3], f64)> = (0..n_blobs)
                .map(|_| {
                    let size = extent * rng.random_range(0.03..0.07);
                    let c = [
                        rng.random_range(-0.8 * h..0.8 * h),
                        rng.random_range(-0.8 * h..0.8 * h),
                        2.0 * size,
                    ];
                    (c, size)
                })
                .collect();
            let slab = extent * 0.01;
            let n_ground = n_points * 3 / 5;
            for i in 0..n_points {
                if i < n_ground {
                    positions.push([
                        rng.random_range(-h..h) as f32,
                        rng.random_range(-h..h) as f32,
                        rng.random_range(0.0..slab) as f32,
                    ]);
                    intensity.push(rng.random_range(0.0..0.5f32));
                    labels.push(0);
                } else {
                    let b = rng.random_range(0..n_blobs);
                    let (c, size) = blobs[b];
                    let normal = Normal::new(0.0, size).expect("positive spread");
                    let mut p = [0f32; 3];
                    for a in 0..3 {
                        let v = c[a] + normal.sample(&mut rng);
                        p[a] = v.clamp(
                            if a == 2 { slab } else { -h },
                            if a == 2 { extent } else { h - 1e-6 },
                        ) as f32;
                    }
                    positions.push(p);
                    intensity.push(rng.random_range(0.5..1.0f32));
                    labels.push((1 + b % (classes - 1).max(1)) as u8);
                }
            }
        }
    }
    let cloud = PointCloud::new(positions, intensity, 1).expect("consistent lengths");
    (cloud, labels)
}

/// Voxelized input for a run: the configured scan, or a synthetic scene.
pub fn load_scene<T: Real>(cfg: &RunConfig) -> Result<SparseTensor<T>> {
    let cloud = match &cfg.input {
        Some(p) => load_lidar_bin(p)?,
        None => gen_synthetic_scene(cfg.seed, cfg.points, cfg.extent, cfg.profile),
    };
    Ok(voxelize(&cloud, cfg.voxel_size)?)
}

/// Voxelized labeled scene with majority-vote voxel labels (ties to the
/// smallest class), subsampled to at most `max_voxels` voxels.
pub fn labeled_voxels<T: Real>(
    cloud: &PointCloud,
    labels: &[u8],
    classes: usize,
    voxel_size: f64,
    max_voxels: usize,
    seed: u64,
) -> Result<(SparseTensor<T>, Vec<u8>)> {
    let mut onehot = vec![0f32; labels.len() * classes];
    for (i, &l) in labels.iter().enumerate() {
        onehot[i * classes + l as usize] = 1.0;
    }
    let votes = PointCloud::new(cloud.positions.clone(), onehot, classes)?;
    let feats: SparseTensor<T> = voxelize(cloud, voxel_size)?;
    let shares: SparseTensor<f64> = voxelize(&votes, voxel_size)?;
    let vox_labels: Vec<u8> = shares
        .features()
        .chunks_exact(classes)
        .map(|row| {
            let mut best = 0;
            for k in 1..classes {
                if row[k] > row[best] {
                    best = k;
                }
            }
            best as u8
        })
        .collect();
    if feats.len() <= max_voxels {
        return Ok((feats, vox_labels));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut keep = sample(&mut rng, feats.len(), max_voxels).into_vec();
    keep.sort_unstable();
    let c = feats.channels();
    let coords = keep.iter().map(|&i| feats.coords()[i]).collect();
    let f = keep.iter().flat_map(|&i| feats.row(i).to_vec()).collect();
    let l = keep.iter().map(|&i| vox_labels[i]).collect();
    Ok((SparseTensor::new(coords, f, c)?, l))
}
