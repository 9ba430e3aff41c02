use std::collections::BTreeSet;

use link_core::backbone::{encoder_forward, EncoderConfig, EncoderParams};
use link_core::conv::{sparse_conv_forward, ConvWeights, KernelMap};
use link_core::link::{
    count_generator_params, generate_kernel, link_forward, link_oracle, ActivationMode, KernelGenerator,
    LinKConfig,
};
use link_core::sparse::{voxelize, CoordIndex, PointCloud, SparseTensor, VoxelCoord};
use proptest::prelude::*;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

fn coords(half: i32, max: usize) -> impl Strategy<Value = Vec<VoxelCoord>> {
    prop::collection::btree_set((0u32..2, -half..half, -half..half, -half..half), 1..max).prop_map(|s| {
        s.into_iter()
            .map(|(b, x, y, z)| VoxelCoord::new(b, x, y, z))
            .collect()
    })
}

fn tensor(coords: Vec<VoxelCoord>, c: usize, seed: u64) -> SparseTensor<f64> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let f = (0..coords.len() * c)
        .map(|_| rng.random_range(-1.0..1.0))
        .collect();
    SparseTensor::new(coords, f, c).unwrap()
}

fn mode(augmented: bool) -> ActivationMode {
    if augmented {
        ActivationMode::Augmented
    } else {
        ActivationMode::Pure
    }
}

fn generator(
    c: usize,
    groups: usize,
    mode: ActivationMode,
    link: &LinKConfig,
    seed: u64,
) -> KernelGenerator<f64> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed ^ 0x5eed);
    let mut g = KernelGenerator::random(c, groups, mode, link.kernel_extent(), &mut rng).unwrap();
    if mode == ActivationMode::Augmented {
        for a in &mut g.alpha {
            *a = rng.random_range(0.5..1.5);
        }
    }
    g
}

fn max_abs_diff(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| (x - y).abs()).fold(0.0, f64::max)
}

/// Direct dense-grid convolution over `[-8, 8)^3` evaluated at occupied voxels.
fn dense_conv(t: &SparseTensor<f64>, w: &ConvWeights<f64>) -> Vec<f64> {
    let half = w.kernel_size as i32 / 2;
    let (cin, cout) = (w.c_in, w.c_out);
    let mut out = Vec::new();
    for c in t.coords() {
        for co in 0..cout {
            let mut acc = w.bias.as_ref().map_or(0.0, |b| b[co]);
            let mut tap = 0;
            for dx in -half..=half {
                for dy in -half..=half {
                    for dz in -half..=half {
                        if let Some(row) = t.query(&c.offset([dx, dy, dz])) {
                            for ci in 0..cin {
                                acc += w.weights[(tap * cin + ci) * cout + co] * t.row(row)[ci];
                            }
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

proptest! {
    #![proptest_config(ProptestConfig::with_cases(48))]

    #[test]
    fn voxelizing_voxel_centers_is_idempotent(cs in coords(40, 200), v in prop::sample::select(vec![0.05f64, 0.1, 0.25, 1.0])) {
        let cs: Vec<VoxelCoord> = cs.into_iter().filter(|c| c.batch == 0).collect();
        let pos = cs.iter().map(|c| c.xyz().map(|a| ((a as f64 + 0.5) * v) as f32)).collect();
        let cloud = PointCloud::new(pos, vec![], 0).unwrap();
        let t: SparseTensor<f64> = voxelize(&cloud, v).unwrap();
        let got: BTreeSet<_> = t.coords().iter().copied().collect();
        let want: BTreeSet<_> = cs.iter().copied().collect();
        prop_assert_eq!(got, want);
    }

    #[test]
    fn index_recovers_row_order(cs in coords(500, 300)) {
        let idx = CoordIndex::build(&cs).unwrap();
        for (i, c) in cs.iter().enumerate() {
            prop_assert_eq!(idx.query(c), Some(i));
        }
    }

    #[test]
    fn conv_matches_dense_grid_and_keeps_coords(cs in coords(4, 200), k in prop::sample::select(vec![1usize, 3, 5]), seed in any::<u64>()) {
        let t = tensor(cs, 2, seed);
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut w = ConvWeights::random(k, 2, 3, &mut rng);
        w.bias = Some(vec![0.5, -0.25, 1.0]);
        let km = KernelMap::build(&t, k, 1).unwrap();
        let y = sparse_conv_forward(&t, &w, &km).unwrap();
        prop_assert_eq!(y.coords(), t.coords());
        prop_assert!(max_abs_diff(y.features(), &dense_conv(&t, &w)) <= 1e-12);
        let again = sparse_conv_forward(&t, &w, &KernelMap::build(&t, k, 1).unwrap()).unwrap();
        prop_assert_eq!(y.features(), again.features());
    }

    #[test]
    fn link_matches_oracle(cs in coords(9, 300), s in 1i32..=4, r in 1usize..=3, aug in any::<bool>(), seed in any::<u64>()) {
        let link = LinKConfig::new(s, r);
        let t = tensor(cs, 4, seed);
        let g = generator(4, 2, mode(aug), &link, seed);
        let (y, st) = link_forward(&t, &g, &link).unwrap();
        let o = link_oracle(&t, &g, &link).unwrap();
        prop_assert!(max_abs_diff(y.features(), o.features()) <= 1e-12);
        prop_assert_eq!(y.coords(), t.coords());

        let nb = st.partition.num_blocks();
        prop_assert_eq!(st.counters.push_macs, t.len());
        prop_assert_eq!(st.counters.pull_macs, t.len());
        prop_assert_eq!(st.counters.gather_probes, nb * r.pow(3));
        prop_assert!(st.counters.gather_reads <= nb * r.pow(3));
        prop_assert!(st.counters.gather_reads >= nb);

        let mut par = link;
        par.parallel = true;
        let (p, _) = link_forward(&t, &g, &par).unwrap();
        prop_assert_eq!(y.features(), p.features());
    }

    #[test]
    fn pure_kernel_depends_only_on_offset(p in coords(1000, 2), x in coords(1000, 2), d in (-900i32..900, -900i32..900, -900i32..900), seed in any::<u64>()) {
        let link = LinKConfig::new(3, 3);
        let g = generator(6, 3, ActivationMode::Pure, &link, seed);
        let (p, x, d) = (p[0], x[0], [d.0, d.1, d.2]);
        let k = generate_kernel(&g, &[p, x, p.offset(d), x.offset(d)]).unwrap();
        for i in 0..6 {
            let a = k.k0[i] * k.k0[6 + i] + k.k1[i] * k.k1[6 + i];
            let b = k.k0[12 + i] * k.k0[18 + i] + k.k1[12 + i] * k.k1[18 + i];
            prop_assert!((a - b).abs() <= 1e-12);
        }
    }

    #[test]
    fn block_translation_is_bit_exact(cs in coords(12, 300), s in 1i32..=5, r in 1usize..=4, t3 in (-300i32..300, -300i32..300, -300i32..300), seed in any::<u64>()) {
        let link = LinKConfig::new(s, r);
        let t = tensor(cs, 4, seed);
        let g = generator(4, 1, ActivationMode::Pure, &link, seed);
        let shift = [t3.0 * s, t3.1 * s, t3.2 * s];
        let moved = SparseTensor::new(t.coords().iter().map(|c| c.offset(shift)).collect(), t.features().to_vec(), 4).unwrap();
        let (a, _) = link_forward(&t, &g, &link).unwrap();
        let (b, _) = link_forward(&moved, &g, &link).unwrap();
        prop_assert_eq!(a.features(), b.features());
    }

    #[test]
    fn singleton_is_reproduced(c in coords(5000, 2), s in 1i32..=8, r in 1usize..=5, seed in any::<u64>()) {
        let link = LinKConfig::new(s, r);
        let t = tensor(vec![c[0]], 4, seed);
        let g = generator(4, 2, ActivationMode::Pure, &link, seed);
        let (y, _) = link_forward(&t, &g, &link).unwrap();
        prop_assert!(max_abs_diff(y.features(), t.features()) <= 1e-12);
    }

    #[test]
    fn generator_size_ignores_block_and_range(s in 1i32..=9, r in 1usize..=6, aug in any::<bool>()) {
        let g = generator(16, 4, mode(aug), &LinKConfig::new(s, r), 0);
        let base = generator(16, 4, mode(aug), &LinKConfig::new(1, 1), 0);
        prop_assert_eq!(count_generator_params(&g), count_generator_params(&base));
    }
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(12))]

    #[test]
    fn encoder_stages_stay_on_downsampled_sets(cs in coords(10, 150), seed in any::<u64>()) {
        let t = tensor(cs, 2, seed);
        let cfg = EncoderConfig::uniform(2, 4, 2, 2);
        let p = EncoderParams::random(&cfg, &mut ChaCha8Rng::seed_from_u64(seed)).unwrap();
        let (outs, _) = encoder_forward(&t, &p, &cfg).unwrap();
        let mut prev: BTreeSet<VoxelCoord> = t.coords().iter().copied().collect();
        for o in &outs {
            let want: BTreeSet<_> = prev.iter().map(|c| c.floor_div(2)).collect();
            let got: BTreeSet<_> = o.coords().iter().copied().collect();
            prop_assert_eq!(got.len(), o.len());
            prop_assert_eq!(&got, &want);
            prop_assert!(o.features().iter().all(|v| v.is_finite()));
            prev = got;
        }
    }
}
