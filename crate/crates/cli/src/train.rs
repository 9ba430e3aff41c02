use std::io::Write;

use link_core::backbone::{toy_train, ToyModel};
use link_core::sparse::SparseTensor;
use link_core::Real;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use crate::config::{Precision, Profile, RunConfig};
use crate::data::{gen_labeled_scene, labeled_voxels};
use crate::error::{CliError, Result};

pub const TRAIN_HEADER: [&str; 2] = ["step", "loss"];

/// The fixed labeled scene used by `train-toy`.
pub fn toy_scene<T: Real>(cfg: &RunConfig) -> Result<(SparseTensor<T>, Vec<u8>)> {
    let (cloud, labels) = gen_labeled_scene(
        cfg.seed,
        cfg.points,
        cfg.extent,
        Profile::GroundClusters,
        cfg.classes,
    );
    labeled_voxels(&cloud, &labels, cfg.classes, cfg.voxel_size, cfg.voxels, cfg.seed)
}

fn train_typed<T: Real>(cfg: &RunConfig) -> Result<Vec<f64>> {
    let (scene, labels) = toy_scene::<T>(cfg)?;
    if scene.is_empty() {
        return Err(CliError::Usage("toy training needs a non-empty scene".into()));
    }
    let enc = cfg.encoder_config(scene.channels());
    let mut model = ToyModel::<T>::new(&enc, cfg.classes, &mut ChaCha8Rng::seed_from_u64(cfg.seed))?;
    Ok(toy_train(
        &mut model,
        &[scene],
        &[labels],
        &enc,
        cfg.steps,
        cfg.lr,
    )?)
}

/// Per-step loss of plain gradient descent on the toy segmentation task.
pub fn run_train_toy(cfg: &RunConfig) -> Result<Vec<f64>> {
    cfg.validate()?;
    match cfg.precision {
        Precision::F32 => train_typed::<f32>(cfg),
        Precision::F64 => train_typed::<f64>(cfg),
    }
}

pub fn write_loss_csv(trace: &[f64], out: impl Write) -> Result<()> {
    let mut w = csv::Writer::from_writer(out);
    w.write_record(TRAIN_HEADER)?;
    for (i, l) in trace.iter().enumerate() {
        w.write_record([i.to_string(), format!("{l:e}")])?;
    }
    w.flush().map_err(|e| CliError::io("<csv>", e))?;
    Ok(())
}

pub fn cmd_train_toy(cfg: &RunConfig, out: impl Write) -> Result<Vec<f64>> {
    let trace = run_train_toy(cfg)?;
    write_loss_csv(&trace, out)?;
    Ok(trace)
}
