use std::collections::HashSet;
use std::fmt;

use link_core::conv::{sparse_conv_backward, sparse_conv_forward, ConvWeights, KernelMap};
use link_core::gradcheck::{GradCheck, GradReport};
use link_core::link::{
    generate_kernel, link_backward, link_forward, link_oracle, ActivationMode, KernelGenerator, LinKConfig,
};
use link_core::sparse::{SparseTensor, VoxelCoord};
use link_core::Real;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::config::{Precision, RunConfig};
use crate::error::{CliError, Result};

#[derive(Debug, Clone, PartialEq)]
pub enum Status {
    Pass,
    Fail,
    Skipped(String),
}

#[derive(Debug, Clone, PartialEq)]
pub struct SuiteResult {
    pub name: &'static str,
    pub status: Status,
    pub max_error: f64,
    pub tolerance: f64,
}

impl SuiteResult {
    fn measured(name: &'static str, max_error: f64, tolerance: f64) -> Self {
        let status = if max_error <= tolerance {
            Status::Pass
        } else {
            Status::Fail
        };
        Self {
            name,
            status,
            max_error,
            tolerance,
        }
    }

    fn skipped(name: &'static str, why: &str) -> Self {
        Self {
            name,
            status: Status::Skipped(why.to_string()),
            max_error: 0.0,
            tolerance: 0.0,
        }
    }
}

impl fmt::Display for SuiteResult {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match &self.status {
            Status::Skipped(why) => write!(f, "{:<20} skipped ({why})", self.name),
            s => write!(
                f,
                "{:<20} {}  max_err={:.3e}  tol={:.1e}",
                self.name,
                if *s == Status::Pass { "PASS" } else { "FAIL" },
                self.max_error,
                self.tolerance
            ),
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct VerifyReport {
    pub suites: Vec<SuiteResult>,
}

impl VerifyReport {
    pub fn passed(&self) -> bool {
        self.suites.iter().all(|s| s.status != Status::Fail)
    }

    pub fn failed(&self) -> Vec<&'static str> {
        self.suites
            .iter()
            .filter(|s| s.status == Status::Fail)
            .map(|s| s.name)
            .collect()
    }

    pub fn get(&self, name: &str) -> Option<&SuiteResult> {
        self.suites.iter().find(|s| s.name == name)
    }
}

impl fmt::Display for VerifyReport {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        for s in &self.suites {
            writeln!(f, "{s}")?;
        }
        Ok(())
    }
}

fn tolerance(p: Precision) -> f64 {
    match p {
        Precision::F32 => 1e-5,
        Precision::F64 => 1e-12,
    }
}

fn max_abs_diff<T: Real>(a: &[T], b: &[T]) -> f64 {
    a.iter()
        .zip(b)
        .map(|(x, y)| (*x - *y).abs().as_f64())
        .fold(0.0, f64::max)
}

/// `n` distinct batch-0 voxels in `[-half, half)^3` with features in `[-1, 1)`.
pub fn random_scene<T: Real>(rng: &mut impl Rng, n: usize, half: i32, c: usize) -> SparseTensor<T> {
    let cap = (2 * half as usize).pow(3);
    let n = n.min(cap);
    let mut seen = HashSet::new();
    let mut coords = Vec::with_capacity(n);
    while coords.len() < n {
        let v = VoxelCoord::new(
            0,
            rng.random_range(-half..half),
            rng.random_range(-half..half),
            rng.random_range(-half..half),
        );
        if seen.insert(v) {
            coords.push(v);
        }
    }
    let f = (0..n * c).map(|_| T::of(rng.random_range(-1.0..1.0))).collect();
    SparseTensor::new(coords, f, c).expect("distinct coordinates")
}

/// Generator with weights in the default range and, in augmented mode,
/// frequencies drawn from `[0.5, 1.5)`.
pub fn random_generator(
    rng: &mut impl Rng,
    channels: usize,
    groups: usize,
    mode: ActivationMode,
    link: &LinKConfig,
) -> Result<KernelGenerator<f64>> {
    let mut g = KernelGenerator::random(channels, groups, mode, link.kernel_extent(), rng)?;
    if mode == ActivationMode::Augmented {
        for a in &mut g.alpha {
            *a = rng.random_range(0.5..1.5);
        }
    }
    Ok(g)
}

/// Dense-grid convolution evaluated at the occupied voxels of `t`.
pub fn dense_grid_conv(t: &SparseTensor<f64>, w: &ConvWeights<f64>) -> Vec<f64> {
    let (cin, cout) = (w.c_in, w.c_out);
    let k = w.kernel_size as i32;
    let half = k / 2;
    let lo = [0, 1, 2].map(|a| t.coords().iter().map(|c| c.xyz()[a]).min().unwrap_or(0) - half);
    let hi = [0, 1, 2].map(|a| t.coords().iter().map(|c| c.xyz()[a]).max().unwrap_or(0) + half);
    let dims = [0, 1, 2].map(|a| (hi[a] - lo[a] + 1) as usize);
    let cell = |p: [i32; 3]| {
        (((p[0] - lo[0]) as usize * dims[1] + (p[1] - lo[1]) as usize) * dims[2] + (p[2] - lo[2]) as usize)
            * cin
    };
    let mut grid = vec![0.0; dims[0] * dims[1] * dims[2] * cin];
    for (r, c) in t.coords().iter().enumerate() {
        let at = cell(c.xyz());
        grid[at..at + cin].copy_from_slice(t.row(r));
    }
    let mut out = Vec::with_capacity(t.len() * cout);
    for c in t.coords() {
        let p = c.xyz();
        for co in 0..cout {
            let mut acc = w.bias.as_ref().map_or(0.0, |b| b[co]);
            let mut tap = 0;
            for dx in -half..=half {
                for dy in -half..=half {
                    for dz in -half..=half {
                        let at = cell([p[0] + dx, p[1] + dy, p[2] + dz]);
                        for ci in 0..cin {
                            acc += w.weights[(tap * cin + ci) * cout + co] * grid[at + ci];
                        }
                        tap += 1;
                    }
                }
            }
            out.push(acc);
        }
    }
    out
}

/// Runs every suite at the configured precision and kernel settings.
pub fn run_suites(cfg: &RunConfig) -> Result<VerifyReport> {
    cfg.validate()?;
    let suites = vec![
        match cfg.precision {
            Precision::F32 => oracle_suite::<f32>(cfg)?,
            Precision::F64 => oracle_suite::<f64>(cfg)?,
        },
        sum_to_product_suite(cfg)?,
        offset_purity_suite(cfg)?,
        match cfg.precision {
            Precision::F32 => translation_suite::<f32>(cfg)?,
            Precision::F64 => translation_suite::<f64>(cfg)?,
        },
        match cfg.precision {
            Precision::F32 => identity_suite::<f32>(cfg)?,
            Precision::F64 => identity_suite::<f64>(cfg)?,
        },
        conv_dense_suite(cfg)?,
        gradient_suite(cfg)?,
    ];
    Ok(VerifyReport { suites })
}

/// Prints the report and turns any failed suite into a verification error.
pub fn cmd_verify(cfg: &RunConfig, out: &mut dyn std::io::Write) -> Result<VerifyReport> {
    let report = run_suites(cfg)?;
    write!(out, "{report}").map_err(|e| CliError::io("<stdout>", e))?;
    if report.passed() {
        Ok(report)
    } else {
        Err(CliError::Verify(report.failed().join(", ")))
    }
}

fn suite_rng(cfg: &RunConfig, salt: u64) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(cfg.seed.wrapping_mul(0x9e37_79b9).wrapping_add(salt))
}

fn oracle_suite<T: Real>(cfg: &RunConfig) -> Result<SuiteResult> {
    let mut rng = suite_rng(cfg, 1);
    let link = cfg.link_config();
    let half = (cfg.block_size * cfg.range as i32).max(2);
    let mut err = 0.0f64;
    for _ in 0..cfg.scenes {
        let n = rng.random_range(1..=500);
        let t: SparseTensor<T> = random_scene::<f64>(&mut rng, n, half, cfg.channels).cast();
        let g = random_generator(&mut rng, cfg.channels, cfg.groups, cfg.mode, &link)?.cast::<T>();
        let (y, _) = link_forward(&t, &g, &link)?;
        let mut clean = link;
        clean.fault = None;
        let o = link_oracle(&t, &g, &clean)?;
        err = err.max(max_abs_diff(y.features(), o.features()));
    }
    Ok(SuiteResult::measured(
        "oracle-equivalence",
        err,
        tolerance(cfg.precision),
    ))
}

fn sum_to_product_suite(cfg: &RunConfig) -> Result<SuiteResult> {
    let mut rng = suite_rng(cfg, 2);
    let link = cfg.link_config();
    let g = random_generator(&mut rng, cfg.channels, cfg.groups, ActivationMode::Pure, &link)?;
    let gc = g.generated_channels();
    let mut err = 0.0f64;
    for _ in 0..10_000 {
        let mut v = || {
            VoxelCoord::new(
                0,
                rng.random_range(-1000..1000),
                rng.random_range(-1000..1000),
                rng.random_range(-1000..1000),
            )
        };
        let (p, x) = (v(), v());
        let k = generate_kernel(&g, &[p, x])?;
        let c = g.channels;
        for i in 0..c {
            let product = k.k0[i] * k.k0[c + i] + k.k1[i] * k.k1[c + i];
            let w = &g.weights[(i % gc) * 3..(i % gc) * 3 + 3];
            let d = [p.x - x.x, p.y - x.y, p.z - x.z];
            let phase: f64 = (0..3).map(|a| w[a] * d[a] as f64).sum();
            err = err.max((product - phase.cos()).abs());
        }
    }
    Ok(SuiteResult::measured("sum-to-product", err, 1e-12))
}

fn offset_purity_suite(cfg: &RunConfig) -> Result<SuiteResult> {
    if cfg.mode == ActivationMode::Augmented {
        return Ok(SuiteResult::skipped("offset-purity", "augmented"));
    }
    let mut rng = suite_rng(cfg, 3);
    let link = cfg.link_config();
    let g = random_generator(&mut rng, cfg.channels, cfg.groups, ActivationMode::Pure, &link)?;
    let c = g.channels;
    let mut err = 0.0f64;
    for _ in 0..2_000 {
        let mut v = |h: i32| {
            VoxelCoord::new(
                0,
                rng.random_range(-h..h),
                rng.random_range(-h..h),
                rng.random_range(-h..h),
            )
        };
        let (p, x) = (v(100), v(100));
        let d = v(1000).xyz();
        let k = generate_kernel(&g, &[p, x, p.offset(d), x.offset(d)])?;
        for i in 0..c {
            let a = k.k0[i] * k.k0[c + i] + k.k1[i] * k.k1[c + i];
            let b = k.k0[2 * c + i] * k.k0[3 * c + i] + k.k1[2 * c + i] * k.k1[3 * c + i];
            err = err.max((a - b).abs());
        }
    }
    Ok(SuiteResult::measured("offset-purity", err, 1e-12))
}

fn translation_suite<T: Real>(cfg: &RunConfig) -> Result<SuiteResult> {
    if cfg.mode == ActivationMode::Augmented {
        return Ok(SuiteResult::skipped("translation", "augmented"));
    }
    let mut rng = suite_rng(cfg, 4);
    let link = cfg.link_config();
    let s = cfg.block_size;
    let mut err = 0.0f64;
    for _ in 0..cfg.scenes {
        let t: SparseTensor<T> = random_scene::<f64>(&mut rng, 300, 3 * s.max(2), cfg.channels).cast();
        let g =
            random_generator(&mut rng, cfg.channels, cfg.groups, ActivationMode::Pure, &link)?.cast::<T>();
        let shift = [0, 1, 2].map(|_| s * rng.random_range(-40..40));
        let moved = t.coords().iter().map(|c| c.offset(shift)).collect();
        let t2 = SparseTensor::new(moved, t.features().to_vec(), t.channels())?;
        let (a, _) = link_forward(&t, &g, &link)?;
        let (b, _) = link_forward(&t2, &g, &link)?;
        err = err.max(max_abs_diff(a.features(), b.features()));
    }
    Ok(SuiteResult::measured("translation", err, 0.0))
}

fn identity_suite<T: Real>(cfg: &RunConfig) -> Result<SuiteResult> {
    let mut rng = suite_rng(cfg, 5);
    let link = cfg.link_config();
    let mut err = 0.0f64;
    for _ in 0..cfg.scenes.max(1) * 10 {
        // Augmented kernels are only unit-norm where sigma vanishes.
        let c = match cfg.mode {
            ActivationMode::Pure => VoxelCoord::new(
                0,
                rng.random_range(-5000..5000),
                rng.random_range(-5000..5000),
                rng.random_range(-5000..5000),
            ),
            ActivationMode::Augmented => VoxelCoord::new(0, 0, 0, 0),
        };
        let f: Vec<T> = (0..cfg.channels)
            .map(|_| T::of(rng.random_range(-1.0..1.0)))
            .collect();
        let t = SparseTensor::new(vec![c], f, cfg.channels)?;
        let g = random_generator(&mut rng, cfg.channels, cfg.groups, cfg.mode, &link)?.cast::<T>();
        let (y, _) = link_forward(&t, &g, &link)?;
        err = err.max(max_abs_diff(y.features(), t.features()));
        if y.coords() != t.coords() {
            err = f64::INFINITY;
        }
    }
    Ok(SuiteResult::measured("identity", err, tolerance(cfg.precision)))
}

fn conv_dense_suite(cfg: &RunConfig) -> Result<SuiteResult> {
    let mut rng = suite_rng(cfg, 6);
    let mut err = 0.0f64;
    for _ in 0..cfg.scenes {
        let n = rng.random_range(1..=200);
        let t: SparseTensor<f64> = random_scene(&mut rng, n, 4, 3);
        let mut w = ConvWeights::random(3, 3, 4, &mut rng);
        w.bias = Some((0..4).map(|_| rng.random_range(-1.0..1.0)).collect());
        let km = KernelMap::build(&t, 3, 1)?;
        let dense = dense_grid_conv(&t, &w);
        let e = match cfg.precision {
            Precision::F32 => {
                let y = sparse_conv_forward(&t.cast::<f32>(), &w.cast::<f32>(), &km)?;
                y.features()
                    .iter()
                    .zip(&dense)
                    .map(|(a, b)| (*a as f64 - b).abs())
                    .fold(0.0, f64::max)
            }
            Precision::F64 => {
                let y = sparse_conv_forward(&t, &w, &km)?;
                max_abs_diff(y.features(), &dense)
            }
        };
        err = err.max(e);
    }
    Ok(SuiteResult::measured("conv-dense", err, tolerance(cfg.precision)))
}

/// Per-operator finite-difference checks at 64-bit, three seeds.
pub fn gradient_reports(cfg: &RunConfig) -> Result<Vec<GradReport>> {
    let link = {
        let mut l = cfg.link_config();
        l.fault = None;
        l
    };
    let c = cfg.channels.min(4).max(cfg.groups);
    let c = c - c % cfg.groups;
    let mut reports = Vec::new();
    for seed in 0..3u64 {
        let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed.wrapping_add(seed).wrapping_mul(31) + 7);
        let check = GradCheck {
            seed,
            ..GradCheck::per_op()
        };
        let half = (cfg.block_size * cfg.range as i32).clamp(2, 6);
        let t: SparseTensor<f64> = random_scene(&mut rng, 40, half, c);
        let g = random_generator(&mut rng, c, cfg.groups, cfg.mode, &link)?;
        let r: Vec<f64> = (0..t.features().len())
            .map(|_| rng.random_range(-1.0..1.0))
            .collect();
        let loss = |t: &SparseTensor<f64>, g: &KernelGenerator<f64>| -> f64 {
            let (y, _) = link_forward(t, g, &link).expect("valid forward");
            y.features().iter().zip(&r).map(|(a, b)| a * b).sum()
        };
        let (_, state) = link_forward(&t, &g, &link)?;
        let grads = link_backward(&r, &t, &g, &link, &state)?;
        let mut rep = check.check_vector(t.features(), &grads.features, |f| {
            loss(&t.with_features(f.to_vec(), c).expect("same width"), &g)
        });
        rep.merge(check.check_params(&g, &grads.generator, |g| loss(&t, g)));

        let w = ConvWeights::random(3, c, 3, &mut rng);
        let km = KernelMap::build(&t, 3, 1)?;
        let rc: Vec<f64> = (0..t.len() * 3).map(|_| rng.random_range(-1.0..1.0)).collect();
        let closs = |t: &SparseTensor<f64>, w: &ConvWeights<f64>| -> f64 {
            let y = sparse_conv_forward(t, w, &km).expect("valid conv");
            y.features().iter().zip(&rc).map(|(a, b)| a * b).sum()
        };
        let cg = sparse_conv_backward(&rc, &t, &w, &km)?;
        rep.merge(check.check_vector(t.features(), &cg.features, |f| {
            closs(&t.with_features(f.to_vec(), c).expect("same width"), &w)
        }));
        rep.merge(check.check_params(&w, &cg.weights, |w| closs(&t, w)));
        reports.push(rep);
    }
    Ok(reports)
}

fn gradient_suite(cfg: &RunConfig) -> Result<SuiteResult> {
    let reports = gradient_reports(cfg)?;
    let passed = reports.iter().all(|r| r.passed());
    let err = reports.iter().map(|r| r.max_rel_error).fold(0.0, f64::max);
    let mut s = SuiteResult::measured("gradient", err, GradCheck::per_op().rel_tol);
    s.status = if passed { Status::Pass } else { Status::Fail };
    Ok(s)
}
