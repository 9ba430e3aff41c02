use std::io::Write;

use link_core::backbone::{erf_map, EncoderParams, ErfMap};
use link_core::Real;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use crate::config::{Precision, RunConfig};
use crate::data::load_scene;
use crate::error::{CliError, Result};

pub const ERF_HEADER: [&str; 4] = ["x", "y", "z", "magnitude"];

fn erf_typed<T: Real>(cfg: &RunConfig) -> Result<ErfMap> {
    let scene = load_scene::<T>(cfg)?;
    if scene.is_empty() {
        return Err(CliError::Usage("ERF needs a non-empty scene".into()));
    }
    let enc = cfg.encoder_config(scene.channels());
    let params = EncoderParams::<T>::random(&enc, &mut ChaCha8Rng::seed_from_u64(cfg.seed))?;
    Ok(erf_map(&scene, &params, &enc, cfg.stage)?)
}

/// Receptive-field map of the configured encoder on the configured scene.
/// Weights are drawn from `seed`, so runs differing only in `link_branch`
/// share every other parameter.
pub fn run_erf(cfg: &RunConfig) -> Result<ErfMap> {
    cfg.validate()?;
    match cfg.precision {
        Precision::F32 => erf_typed::<f32>(cfg),
        Precision::F64 => erf_typed::<f64>(cfg),
    }
}

/// One row per input voxel, then a `#` summary line.
pub fn write_erf_csv(map: &ErfMap, mut out: impl Write) -> Result<()> {
    {
        let mut w = csv::Writer::from_writer(&mut out);
        w.write_record(ERF_HEADER)?;
        for (c, m) in map.coords.iter().zip(&map.magnitude) {
            w.write_record([
                c.x.to_string(),
                c.y.to_string(),
                c.z.to_string(),
                format!("{m:e}"),
            ])?;
        }
        w.flush().map_err(|e| CliError::io("<csv>", e))?;
    }
    writeln!(
        out,
        "# radius90={},total={:e},stage={},seed={}",
        map.radius90(),
        map.total,
        map.stage,
        map.seed
    )
    .map_err(|e| CliError::io("<csv>", e))
}

pub fn cmd_erf(cfg: &RunConfig, out: impl Write) -> Result<ErfMap> {
    let map = run_erf(cfg)?;
    write_erf_csv(&map, out)?;
    Ok(map)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::config::Command;
    use link_core::backbone::bypass_support_box;

    fn small() -> RunConfig {
        let mut c = RunConfig::defaults(Command::Erf);
        c.set("preset", "segmentation").unwrap();
        c.widths = [4; 4];
        c.stem_width = 4;
        c.extent = 3.2;
        c.points = 8_000;
        c.stage = 1;
        c
    }

    #[test]
    fn csv_rows_and_summary() {
        let cfg = small();
        let mut buf = Vec::new();
        let map = cmd_erf(&cfg, &mut buf).unwrap();
        let text = String::from_utf8(buf).unwrap();
        let lines: Vec<&str> = text.lines().collect();
        assert_eq!(lines[0], "x,y,z,magnitude");
        assert_eq!(lines.len(), map.coords.len() + 2);
        assert!(lines.last().unwrap().starts_with("# radius90="));
        let sum: f64 = lines[1..lines.len() - 1]
            .iter()
            .map(|l| l.rsplit(',').next().unwrap().parse::<f64>().unwrap())
            .inspect(|m| assert!(*m >= 0.0))
            .sum();
        assert!((sum - map.total).abs() <= 1e-9 * map.total);
    }

    #[test]
    fn bypass_only_bound() {
        let mut cfg = small();
        cfg.link_branch = false;
        let map = run_erf(&cfg).unwrap();
        let b = bypass_support_box(&map.seed, 1);
        for (c, m) in map.coords.iter().zip(&map.magnitude) {
            let inside = c
                .xyz()
                .iter()
                .zip(&b)
                .all(|(v, ax)| (ax[0]..=ax[1]).contains(&(*v as i64)));
            assert!(inside || *m == 0.0);
        }
    }

    #[test]
    fn empty_scene_is_usage_error() {
        let mut cfg = small();
        cfg.points = 0;
        let e = run_erf(&cfg).unwrap_err();
        assert_eq!(e.exit_code(), 2);
    }
}
