use std::fmt;
use std::path::{Path, PathBuf};
use std::str::FromStr;

use link_core::backbone::{EncoderConfig, NUM_STAGES};
use link_core::link::{ActivationMode, GatherFault, LinKConfig};

use crate::error::{CliError, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Command {
    Verify,
    Bench,
    Erf,
    TrainToy,
}

impl fmt::Display for Command {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Command::Verify => "verify",
            Command::Bench => "bench",
            Command::Erf => "erf",
            Command::TrainToy => "train-toy",
        })
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Precision {
    F32,
    F64,
}

impl FromStr for Precision {
    type Err = String;

    fn from_str(s: &str) -> std::result::Result<Self, String> {
        match s {
            "32" | "f32" => Ok(Precision::F32),
            "64" | "f64" => Ok(Precision::F64),
            _ => Err(format!("precision must be 32 or 64, got {s:?}")),
        }
    }
}

impl fmt::Display for Precision {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Precision::F32 => "32",
            Precision::F64 => "64",
        })
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Profile {
    Uniform,
    GroundClusters,
}

impl FromStr for Profile {
    type Err = String;

    fn from_str(s: &str) -> std::result::Result<Self, String> {
        match s {
            "uniform" => Ok(Profile::Uniform),
            "ground+clusters" | "ground_clusters" => Ok(Profile::GroundClusters),
            _ => Err(format!("profile must be uniform or ground+clusters, got {s:?}")),
        }
    }
}

/// Every knob of a run. Built from defaults for the command, then a config
/// file, then `--set` overrides, and validated before use.
#[derive(Debug, Clone, PartialEq)]
pub struct RunConfig {
    pub command: Command,
    /// Block size `s` (key `s`).
    pub block_size: i32,
    /// Block neighborhood range `r` (key `r`).
    pub range: usize,
    pub mode: ActivationMode,
    pub groups: usize,
    /// LinK channel count for `verify` and `bench`.
    pub channels: usize,
    /// Encoder stage widths for `erf` and `train-toy`.
    pub widths: [usize; NUM_STAGES],
    pub stem_width: usize,
    pub norm: bool,
    pub voxel_size: f64,
    pub precision: Precision,
    pub deterministic: bool,
    pub seed: u64,
    pub input: Option<PathBuf>,
    pub points: usize,
    /// Synthetic scene edge length in meters.
    pub extent: f64,
    pub profile: Profile,
    pub out: Option<PathBuf>,
    /// Random scenes per `verify` suite.
    pub scenes: usize,
    pub runs: usize,
    pub ranges: Vec<usize>,
    pub oracle_voxels: usize,
    pub stage: usize,
    pub link_branch: bool,
    pub steps: usize,
    pub lr: f64,
    pub classes: usize,
    pub voxels: usize,
    pub test_fault: Option<GatherFault>,
}

pub const KEYS: &[&str] = &[
    "preset",
    "s",
    "r",
    "mode",
    "groups",
    "channels",
    "widths",
    "stem_width",
    "norm",
    "voxel_size",
    "precision",
    "deterministic",
    "seed",
    "input",
    "points",
    "extent",
    "profile",
    "out",
    "scenes",
    "runs",
    "ranges",
    "oracle_voxels",
    "stage",
    "link_branch",
    "steps",
    "lr",
    "classes",
    "voxels",
    "test_fault",
];

impl RunConfig {
    pub fn defaults(command: Command) -> Self {
        let mut c = Self {
            command,
            block_size: 3,
            range: 2,
            mode: ActivationMode::Pure,
            groups: 2,
            channels: 8,
            widths: [16; NUM_STAGES],
            stem_width: 16,
            norm: true,
            voxel_size: 0.1,
            precision: Precision::F64,
            deterministic: true,
            seed: 0,
            input: None,
            points: 20_000,
            extent: 20.0,
            profile: Profile::GroundClusters,
            out: None,
            scenes: 8,
            runs: 5,
            ranges: vec![1, 3, 5],
            oracle_voxels: 1_000,
            stage: 2,
            link_branch: true,
            steps: 500,
            lr: 0.1,
            classes: 3,
            voxels: 200,
            test_fault: None,
        };
        match command {
            Command::Verify => {}
            Command::Bench => {
                c.precision = Precision::F32;
                c.profile = Profile::GroundClusters;
                c.points = 300_000;
                c.extent = 30.0;
                c.voxel_size = 0.2;
                c.channels = 16;
                c.deterministic = false;
            }
            Command::Erf => {
                c.apply_preset("detection").expect("builtin preset");
                c.mode = ActivationMode::Augmented;
                c.extent = 12.8;
                c.points = 240_000;
            }
            Command::TrainToy => {
                c.mode = ActivationMode::Augmented;
                c.points = 4_000;
                c.extent = 4.0;
            }
        }
        c
    }

    fn apply_preset(&mut self, name: &str) -> Result<()> {
        match name {
            "detection" => {
                self.block_size = 7;
                self.range = 3;
                self.widths = [16, 32, 64, 128];
                self.stem_width = 16;
            }
            "segmentation" => {
                self.block_size = 3;
                self.range = 2;
                self.widths = [64; NUM_STAGES];
                self.stem_width = 64;
            }
            _ => {
                return Err(CliError::Config(format!(
                    "preset must be detection or segmentation, got {name:?}"
                )))
            }
        }
        Ok(())
    }

    /// Applies one `key=value` assignment. Unknown keys are usage errors.
    pub fn set(&mut self, key: &str, value: &str) -> Result<()> {
        let value = value.trim();
        match key.trim() {
            "preset" => self.apply_preset(value)?,
            "s" => self.block_size = parse(key, value)?,
            "r" => self.range = parse(key, value)?,
            "mode" => self.mode = parse(key, value)?,
            "groups" => self.groups = parse(key, value)?,
            "channels" => self.channels = parse(key, value)?,
            "widths" => {
                let w: Vec<usize> = parse_list(key, value)?;
                self.widths = match w.len() {
                    1 => [w[0]; NUM_STAGES],
                    NUM_STAGES => [w[0], w[1], w[2], w[3]],
                    n => {
                        return Err(CliError::Config(format!(
                            "widths needs 1 or {NUM_STAGES} values, got {n}"
                        )))
                    }
                };
            }
            "stem_width" => self.stem_width = parse(key, value)?,
            "norm" => self.norm = parse_bool(key, value)?,
            "voxel_size" => self.voxel_size = parse(key, value)?,
            "precision" => self.precision = parse(key, value)?,
            "deterministic" => self.deterministic = parse_bool(key, value)?,
            "seed" => self.seed = parse(key, value)?,
            "input" => self.input = (!value.is_empty()).then(|| PathBuf::from(value)),
            "points" => self.points = parse(key, value)?,
            "extent" => self.extent = parse(key, value)?,
            "profile" => self.profile = parse(key, value)?,
            "out" => self.out = (!value.is_empty()).then(|| PathBuf::from(value)),
            "scenes" => self.scenes = parse(key, value)?,
            "runs" => self.runs = parse(key, value)?,
            "ranges" => self.ranges = parse_list(key, value)?,
            "oracle_voxels" => self.oracle_voxels = parse(key, value)?,
            "stage" => self.stage = parse(key, value)?,
            "link_branch" => self.link_branch = parse_bool(key, value)?,
            "steps" => self.steps = parse(key, value)?,
            "lr" => self.lr = parse(key, value)?,
            "classes" => self.classes = parse(key, value)?,
            "voxels" => self.voxels = parse(key, value)?,
            "test_fault" => {
                self.test_fault = match value {
                    "" | "none" => None,
                    "drop_neighbor" => Some(GatherFault::DropNeighbor),
                    _ => return Err(CliError::Config(format!("unknown test_fault {value:?}"))),
                }
            }
            other => {
                return Err(CliError::Usage(format!(
                    "unknown config key {other:?} (known: {})",
                    KEYS.join(", ")
                )))
            }
        }
        Ok(())
    }

    /// Parses `key=value` lines; blank lines and `#` comments are ignored.
    pub fn apply_text(&mut self, text: &str, origin: &str) -> Result<()> {
        for (n, line) in text.lines().enumerate() {
            let line = line.split('#').next().unwrap_or("").trim();
            if line.is_empty() {
                continue;
            }
            let (k, v) = line.split_once('=').ok_or_else(|| {
                CliError::Usage(format!("{origin}:{}: expected key=value, got {line:?}", n + 1))
            })?;
            self.set(k, v)?;
        }
        Ok(())
    }

    pub fn apply_file(&mut self, path: &Path) -> Result<()> {
        let text = std::fs::read_to_string(path).map_err(|e| CliError::io(path, e))?;
        self.apply_text(&text, &path.display().to_string())
    }

    /// Applies a `key=value` override from the command line.
    pub fn apply_override(&mut self, assignment: &str) -> Result<()> {
        let (k, v) = assignment
            .split_once('=')
            .ok_or_else(|| CliError::Usage(format!("--set expects key=value, got {assignment:?}")))?;
        self.set(k, v)
    }

    pub fn validate(&self) -> Result<()> {
        let bad = |msg: String| Err(CliError::Config(msg));
        self.link_config().validate()?;
        if self.groups == 0 || self.channels == 0 || !self.channels.is_multiple_of(self.groups) {
            return bad(format!(
                "groups {} must divide channels {}",
                self.groups, self.channels
            ));
        }
        if !(self.voxel_size > 0.0 && self.voxel_size.is_finite()) {
            return bad(format!("voxel_size must be positive, got {}", self.voxel_size));
        }
        if !(self.extent > 0.0 && self.extent.is_finite()) {
            return bad(format!("extent must be positive, got {}", self.extent));
        }
        if self.runs < 5 {
            return bad(format!("runs must be at least 5, got {}", self.runs));
        }
        if self.ranges.is_empty() || self.ranges.contains(&0) {
            return bad("ranges must be a non-empty list of positive integers".into());
        }
        if self.stage == 0 || self.stage > NUM_STAGES {
            return bad(format!("stage must be in 1..={NUM_STAGES}, got {}", self.stage));
        }
        if !(self.lr >= 0.0 && self.lr.is_finite()) {
            return bad(format!("lr must be finite and >= 0, got {}", self.lr));
        }
        if !(2..=8).contains(&self.classes) {
            return bad(format!("classes must be in 2..=8, got {}", self.classes));
        }
        if self.scenes == 0 {
            return bad("scenes must be positive".into());
        }
        if matches!(self.command, Command::Erf | Command::TrainToy) {
            self.encoder_config(1).validate()?;
        }
        Ok(())
    }

    pub fn link_config(&self) -> LinKConfig {
        let mut c = LinKConfig::new(self.block_size, self.range);
        c.parallel = !self.deterministic;
        c.fault = self.test_fault;
        c
    }

    pub fn encoder_config(&self, in_channels: usize) -> EncoderConfig {
        EncoderConfig {
            in_channels,
            stem_width: self.stem_width,
            widths: self.widths,
            block_sizes: [self.block_size; NUM_STAGES],
            ranges: [self.range; NUM_STAGES],
            mode: self.mode,
            groups: self.groups,
            norm: self.norm,
            link_branch: self.link_branch,
            parallel: !self.deterministic,
        }
    }
}

fn parse<T: FromStr>(key: &str, value: &str) -> Result<T>
where
    T::Err: fmt::Display,
{
    value
        .parse()
        .map_err(|e| CliError::Config(format!("{key}={value:?}: {e}")))
}

fn parse_bool(key: &str, value: &str) -> Result<bool> {
    match value {
        "true" | "1" | "yes" | "on" => Ok(true),
        "false" | "0" | "no" | "off" => Ok(false),
        _ => Err(CliError::Config(format!("{key}={value:?}: expected a boolean"))),
    }
}

fn parse_list<T: FromStr>(key: &str, value: &str) -> Result<Vec<T>>
where
    T::Err: fmt::Display,
{
    value.split(',').map(|v| parse(key, v.trim())).collect()
}
