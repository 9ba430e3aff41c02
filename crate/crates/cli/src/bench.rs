use std::io::Write;
use std::time::Instant;

use link_core::conv::{sparse_conv_forward, ConvWeights, KernelMap};
use link_core::link::{count_generator_params, link_forward, link_oracle, KernelGenerator, OpCounters};
use link_core::sparse::SparseTensor;
use link_core::Real;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use crate::config::{Precision, RunConfig};
use crate::data::load_scene;
use crate::error::{CliError, Result};
use crate::verify::random_generator;

pub const BENCH_HEADER: [&str; 5] = ["kernel_extent", "method", "n_voxels", "wall_ms", "params"];

#[derive(Debug, Clone, PartialEq)]
pub struct BenchRow {
    pub kernel_extent: usize,
    pub method: &'static str,
    pub n_voxels: usize,
    pub wall_ms: f64,
    pub params: usize,
    /// Operation counters of the timed LinK pass (zero for other methods).
    pub counters: OpCounters,
}

pub fn median(mut v: Vec<f64>) -> f64 {
    v.sort_by(f64::total_cmp);
    let n = v.len();
    if n == 0 {
        return f64::NAN;
    }
    if n % 2 == 1 {
        v[n / 2]
    } else {
        0.5 * (v[n / 2 - 1] + v[n / 2])
    }
}

/// Median wall time in milliseconds of `runs` calls after one warm-up call.
fn time_ms<R>(runs: usize, mut f: impl FnMut() -> Result<R>) -> Result<f64> {
    f()?;
    let mut times = Vec::with_capacity(runs);
    for _ in 0..runs {
        let t0 = Instant::now();
        std::hint::black_box(f()?);
        times.push(t0.elapsed().as_secs_f64() * 1e3);
    }
    Ok(median(times))
}

/// The `n` voxels closest to the scene centroid.
pub fn central_crop<T: Real>(t: &SparseTensor<T>, n: usize) -> Result<SparseTensor<T>> {
    if t.len() <= n {
        return Ok(t.clone());
    }
    let len = t.len() as f64;
    let mut mean = [0.0; 3];
    for c in t.coords() {
        for (m, v) in mean.iter_mut().zip(c.xyz()) {
            *m += v as f64 / len;
        }
    }
    let dist = |i: usize| -> f64 {
        let p = t.coords()[i].xyz();
        (0..3).map(|a| (p[a] as f64 - mean[a]).powi(2)).sum()
    };
    let mut rows: Vec<usize> = (0..t.len()).collect();
    rows.sort_by(|a, b| dist(*a).total_cmp(&dist(*b)).then(a.cmp(b)));
    rows.truncate(n);
    rows.sort_unstable();
    let coords = rows.iter().map(|&i| t.coords()[i]).collect();
    let f = rows.iter().flat_map(|&i| t.row(i).to_vec()).collect();
    Ok(SparseTensor::new(coords, f, t.channels())?)
}

fn widen<T: Real>(t: &SparseTensor<T>, channels: usize) -> Result<SparseTensor<T>> {
    let src = t.channels().max(1);
    let f = (0..t.len())
        .flat_map(|r| (0..channels).map(move |c| (r, c)))
        .map(|(r, c)| {
            let base = if t.channels() == 0 {
                T::one()
            } else {
                t.row(r)[c % src]
            };
            base * T::of(1.0 + c as f64 / channels as f64)
        })
        .collect();
    Ok(t.with_features(f, channels)?)
}

fn bench_typed<T: Real>(cfg: &RunConfig) -> Result<Vec<BenchRow>> {
    let scene = widen(&load_scene::<T>(cfg)?, cfg.channels)?;
    let crop = central_crop(&scene, cfg.oracle_voxels)?;
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    let mut rows = Vec::new();
    for &r in &cfg.ranges {
        let mut link = cfg.link_config();
        link.range = r;
        let g: KernelGenerator<T> =
            random_generator(&mut rng, cfg.channels, cfg.groups, cfg.mode, &link)?.cast();
        let params = count_generator_params(&g);
        let extent = link.kernel_extent();
        let mut counters = OpCounters::default();
        let wall = time_ms(cfg.runs, || {
            let (y, st) = link_forward(&scene, &g, &link)?;
            counters = st.counters;
            Ok(y)
        })?;
        rows.push(BenchRow {
            kernel_extent: extent,
            method: "link",
            n_voxels: scene.len(),
            wall_ms: wall,
            params,
            counters,
        });
        let wall = time_ms(cfg.runs, || Ok(link_oracle(&crop, &g, &link)?))?;
        rows.push(BenchRow {
            kernel_extent: extent,
            method: "oracle",
            n_voxels: crop.len(),
            wall_ms: wall,
            params,
            counters: OpCounters::default(),
        });
    }
    let w: ConvWeights<T> = ConvWeights::<f64>::random(3, cfg.channels, cfg.channels, &mut rng).cast();
    let params = w.weights.len() + w.bias.as_ref().map_or(0, Vec::len);
    let wall = time_ms(cfg.runs, || {
        let km = KernelMap::build(&scene, 3, 1)?;
        Ok(sparse_conv_forward(&scene, &w, &km)?)
    })?;
    rows.push(BenchRow {
        kernel_extent: 3,
        method: "conv3",
        n_voxels: scene.len(),
        wall_ms: wall,
        params,
        counters: OpCounters::default(),
    });
    Ok(rows)
}

/// Runtime and parameter sweep over the configured ranges.
pub fn run_bench(cfg: &RunConfig) -> Result<Vec<BenchRow>> {
    cfg.validate()?;
    match cfg.precision {
        Precision::F32 => bench_typed::<f32>(cfg),
        Precision::F64 => bench_typed::<f64>(cfg),
    }
}

pub fn write_bench_csv(rows: &[BenchRow], out: impl Write) -> Result<()> {
    let mut w = csv::Writer::from_writer(out);
    w.write_record(BENCH_HEADER)?;
    for r in rows {
        w.write_record([
            r.kernel_extent.to_string(),
            r.method.to_string(),
            r.n_voxels.to_string(),
            format!("{:.3}", r.wall_ms),
            r.params.to_string(),
        ])?;
    }
    w.flush().map_err(|e| CliError::io("<csv>", e))?;
    Ok(())
}

pub fn cmd_bench(cfg: &RunConfig, out: impl Write) -> Result<Vec<BenchRow>> {
    let rows = run_bench(cfg)?;
    write_bench_csv(&rows, out)?;
    Ok(rows)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::config::Command;

    fn small() -> RunConfig {
        let mut c = RunConfig::defaults(Command::Bench);
        c.points = 3_000;
        c.extent = 10.0;
        c.channels = 4;
        c.oracle_voxels = 200;
        c
    }

    #[test]
    fn median_of_odd_and_even() {
        assert_eq!(median(vec![3.0, 1.0, 2.0]), 2.0);
        assert_eq!(median(vec![4.0, 1.0, 2.0, 3.0]), 2.5);
    }

    #[test]
    fn csv_schema_and_link_params() {
        let rows = run_bench(&small()).unwrap();
        assert_eq!(rows.len(), 2 * 3 + 1);
        let link: Vec<&BenchRow> = rows.iter().filter(|r| r.method == "link").collect();
        assert!(link.windows(2).all(|w| w[0].params == w[1].params));
        assert_eq!(
            link.iter().map(|r| r.kernel_extent).collect::<Vec<_>>(),
            vec![3, 9, 15]
        );
        let macs: Vec<usize> = link.iter().map(|r| r.counters.kernel_macs()).collect();
        assert!(macs.iter().all(|m| *m == 2 * link[0].n_voxels));
        let mut buf = Vec::new();
        write_bench_csv(&rows, &mut buf).unwrap();
        let text = String::from_utf8(buf).unwrap();
        assert_eq!(
            text.lines().next().unwrap(),
            "kernel_extent,method,n_voxels,wall_ms,params"
        );
        assert_eq!(text.lines().count(), 8);
    }

    #[test]
    fn crop_is_central_subset() {
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let t: SparseTensor<f64> = crate::verify::random_scene(&mut rng, 500, 10, 2);
        let c = central_crop(&t, 50).unwrap();
        assert_eq!(c.len(), 50);
        for (i, co) in c.coords().iter().enumerate() {
            let r = t.query(co).unwrap();
            assert_eq!(c.row(i), t.row(r));
        }
    }
}
