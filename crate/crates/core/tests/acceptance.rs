//! Acceptance gate: ten criteria, each printing one pass/fail line.
//! Run with `cargo test --test acceptance -- --test-threads=1 --nocapture`
//! to see the lines in order; under the default harness they are captured
//! per test and shown on failure.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use s2ica::descriptor::{
    describe_image, load_descriptors, pool_patches, pool_scales, save_descriptors,
    scale_patch_features, DescriptorConfig, Pool,
};
use s2ica::gradcheck::check_network;
use s2ica::image::{decode_netpbm, encode_netpbm, Image};
use s2ica::network::{
    extract_conv_features, finetune, graft, load_model, pretrain, save_model, train_transfernet,
    with_su_layer, LayerSpec, Network, NetworkSpec, TrainConfig, TransferNetSpec,
};
use s2ica::pyramid::resize_to_smaller_dim;
use s2ica::su::{
    build_transform, shuffle_alg1, shuffle_permutation, su_forward, SuConfig, block_cell_permutation,
};
use s2ica::svm::{evaluate, load_svm, save_svm, train_svm, SvmConfig};
use s2ica::synth::{generate_dataset, load_dataset, save_dataset, SceneDataset, SynthConfig};
use s2ica::tensor::{FeatureMap, Tensor};
use std::time::{Duration, Instant};

/// Wraps a criterion body so exactly one PASS/FAIL line is printed.
fn report(n: u32, name: &str, f: impl FnOnce() + std::panic::UnwindSafe) {
    match std::panic::catch_unwind(f) {
        Ok(()) => println!("criterion {:2} ({}): PASS", n, name),
        Err(e) => {
            println!("criterion {:2} ({}): FAIL", n, name);
            std::panic::resume_unwind(e);
        }
    }
}

fn filled_map(h: usize, w: usize, c: usize, s: usize, seed: u64) -> FeatureMap<f32> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut m = FeatureMap::zeros(h, w, c, s);
    for b in 0..s {
        for i in 0..h {
            for j in 0..w {
                for k in 0..c {
                    m.set(i, j, k, b, rng.random_range(-1.0..1.0));
                }
            }
        }
    }
    m
}

/// Map with pairwise-distinct cell values per channel, so multiset
/// comparisons detect any duplication or loss.
fn distinct_map(h: usize, w: usize, c: usize) -> FeatureMap<f32> {
    let mut m = FeatureMap::zeros(h, w, c, 1);
    for k in 0..c {
        for i in 0..h {
            for j in 0..w {
                m.set(i, j, k, 0, (k * h * w + i * w + j) as f32);
            }
        }
    }
    m
}

fn maps_bit_equal(a: &FeatureMap<f32>, b: &FeatureMap<f32>) -> bool {
    let (h, w, c, s) = a.dims();
    if b.dims() != (h, w, c, s) {
        return false;
    }
    for bb in 0..s {
        for i in 0..h {
            for j in 0..w {
                for k in 0..c {
                    if a.at(i, j, k, bb).to_bits() != b.at(i, j, k, bb).to_bits() {
                        return false;
                    }
                }
            }
        }
    }
    true
}

/// Datasets reach the pipeline through the on-disk layout, which orders
/// samples by sorted class-directory name; mirror that here so results
/// match end-to-end runs exactly.
fn via_disk(ds: &SceneDataset) -> SceneDataset {
    let dir = tempfile::tempdir().unwrap();
    save_dataset(dir.path(), ds).unwrap();
    load_dataset(dir.path()).unwrap()
}

/// Whole scenes resized to the 32-pixel training resolution.
fn scene_inputs_32(ds: &SceneDataset) -> Vec<(FeatureMap<f32>, usize)> {
    ds.images
        .iter()
        .zip(&ds.labels)
        .map(|(img, &l)| {
            let m = img.to_grayscale().to_feature_map::<f32>();
            (resize_to_smaller_dim(&m, 32).unwrap(), l)
        })
        .collect()
}

fn post_hoc_accuracy(net: &Network<f32>, data: &[(FeatureMap<f32>, usize)]) -> f64 {
    let mut correct = 0usize;
    for (x, label) in data {
        let logits = net.forward(x).unwrap();
        let row = logits.data();
        let pred = (0..row.len())
            .max_by(|&a, &b| row[a].partial_cmp(&row[b]).unwrap())
            .unwrap();
        if pred == *label {
            correct += 1;
        }
    }
    correct as f64 / data.len() as f64
}

#[test]
fn criterion_01_permutation_matrix_properties() {
    report(1, "permutation matrix properties", || {
        let start = Instant::now();
        for &n in &[4usize, 16, 64] {
            let t = build_transform(n).unwrap();
            let k = t.size();
            assert_eq!(k * k, n);
            for i in 0..k {
                for j in 0..k {
                    // binary (and hence nonnegative)
                    assert!(t.entry(i, j) <= 1);
                }
            }
            // rows and columns each sum to one: binary + these sums is
            // exactly the bistochastic property
            for i in 0..k {
                let rsum: u32 = (0..k).map(|j| u32::from(t.entry(i, j))).sum();
                assert_eq!(rsum, 1, "row {} of T for n={}", i, n);
            }
            for j in 0..k {
                let csum: u32 = (0..k).map(|i| u32::from(t.entry(i, j))).sum();
                assert_eq!(csum, 1, "col {} of T for n={}", j, n);
            }
            // T * T' = I, exactly, in integer arithmetic
            for i in 0..k {
                for j in 0..k {
                    let v: u32 = (0..k)
                        .map(|m| u32::from(t.entry(i, m)) * u32::from(t.entry(j, m)))
                        .sum();
                    assert_eq!(v, u32::from(i == j), "T T' at ({}, {})", i, j);
                }
            }
            // T * T = I: the transform is an involution
            for i in 0..k {
                for j in 0..k {
                    let v: u32 = (0..k)
                        .map(|m| u32::from(t.entry(i, m)) * u32::from(t.entry(m, j)))
                        .sum();
                    assert_eq!(v, u32::from(i == j), "T^2 at ({}, {})", i, j);
                }
            }
        }
        assert!(start.elapsed() < Duration::from_secs(1), "took {:?}", start.elapsed());
    });
}

#[test]
fn criterion_02_shuffle_oracle_and_random_properties() {
    report(2, "shuffle oracle, bijection, involution", || {
        let start = Instant::now();

        // Hand-derived oracle: 4x4 map, 4 requested blocks -> one block
        // covering the map, rows and columns rotated by 2. Written out
        // literally, independent of the rotation code.
        let x = distinct_map(4, 4, 1);
        let expected: [[f32; 4]; 4] = [
            [10.0, 11.0, 8.0, 9.0],
            [14.0, 15.0, 12.0, 13.0],
            [2.0, 3.0, 0.0, 1.0],
            [6.0, 7.0, 4.0, 5.0],
        ];
        let (y, _) = shuffle_alg1(&x, 4).unwrap();
        for i in 0..4 {
            for j in 0..4 {
                assert_eq!(y.at(i, j, 0, 0), expected[i][j], "oracle cell ({}, {})", i, j);
            }
        }

        let mut rng = ChaCha8Rng::seed_from_u64(2024);
        for case in 0..1000 {
            let level = rng.random_range(1..=4usize);
            let n = (2 * level) * (2 * level);

            // bijection on an arbitrary shape: per-channel multisets of
            // values are preserved exactly
            let h = rng.random_range(level..=level + 16);
            let w = rng.random_range(level..=level + 16);
            let c = rng.random_range(1..=2usize);
            let x = distinct_map(h, w, c);
            let (y, map) = shuffle_alg1(&x, n).unwrap();
            for k in 0..c {
                let mut a: Vec<f32> = Vec::with_capacity(h * w);
                let mut b: Vec<f32> = Vec::with_capacity(h * w);
                for i in 0..h {
                    for j in 0..w {
                        a.push(x.at(i, j, k, 0));
                        b.push(y.at(i, j, k, 0));
                    }
                }
                a.sort_by(|u, v| u.partial_cmp(v).unwrap());
                b.sort_by(|u, v| u.partial_cmp(v).unwrap());
                assert_eq!(a, b, "case {}: multiset changed", case);
            }
            // the recorded permutation inverts exactly
            assert!(maps_bit_equal(&map.apply_inverse(&y).unwrap(), &x));

            // involution on even block extents: shapes chosen so every
            // block extent is even, shuffling twice is the identity
            let h = 2 * level * rng.random_range(1..=4usize);
            let w = 2 * level * rng.random_range(1..=4usize);
            let x = distinct_map(h, w, 1);
            let (y, _) = shuffle_alg1(&x, n).unwrap();
            let (z, _) = shuffle_alg1(&y, n).unwrap();
            assert!(maps_bit_equal(&z, &x), "case {}: not an involution at {}x{}", case, h, w);
        }
        assert!(start.elapsed() < Duration::from_secs(10), "took {:?}", start.elapsed());
    });
}

#[test]
fn criterion_03_matrix_route_matches_executable_shuffle() {
    report(3, "matrix form vs executable shuffle", || {
        let start = Instant::now();
        let mut rng = ChaCha8Rng::seed_from_u64(7);
        for case in 0..100 {
            let h = 2 * rng.random_range(1..=20usize);
            let w = 2 * rng.random_range(1..=20usize);
            // four requested blocks: matrix route permutes a 2x2 block
            // grid, executable shuffle rotates the single level-1 block
            let mat = block_cell_permutation(h, w, 4).unwrap();
            let alg = shuffle_permutation(h, w, 1).unwrap();
            assert_eq!(
                mat.forward_indices(),
                alg.forward_indices(),
                "case {}: cell permutations differ at {}x{}",
                case,
                h,
                w
            );
        }
        assert!(start.elapsed() < Duration::from_secs(5), "took {:?}", start.elapsed());
    });
}

#[test]
fn criterion_04_gradient_suite() {
    report(4, "finite-difference gradient suite", || {
        let start = Instant::now();
        let tol = 1e-5;
        let conv = |o, k, s, p| LayerSpec::Conv {
            out_channels: o,
            kernel: k,
            stride: s,
            pad: p,
        };
        let fc = |o, relu| LayerSpec::Fc { out: o, relu };
        let free = |layers: Vec<LayerSpec>, input| NetworkSpec {
            input,
            layers,
            strict_census: false,
        };
        let check = |name: &str, spec: NetworkSpec, h: usize, w: usize, c: usize| {
            let net = Network::<f64>::build_with_init(spec, 17, 0.3).unwrap();
            let x = {
                let mut rng = ChaCha8Rng::seed_from_u64(23);
                let mut m = FeatureMap::<f64>::zeros(h, w, c, 1);
                for i in 0..h {
                    for j in 0..w {
                        for k in 0..c {
                            m.set(i, j, k, 0, rng.random_range(-1.0..1.0));
                        }
                    }
                }
                m
            };
            let report = check_network(&net, &x, 0, 1e-5).unwrap();
            assert!(
                report.max_rel_err <= tol,
                "{}: max rel err {:.3e} over {} params + {} inputs",
                name,
                report.max_rel_err,
                report.params_checked,
                report.inputs_checked
            );
        };

        check("conv", free(vec![conv(3, 3, 1, 1), fc(3, false)], (6, 6, 2)), 6, 6, 2);
        check(
            "lrn",
            free(vec![conv(4, 3, 1, 1), LayerSpec::Lrn, fc(3, false)], (5, 5, 2)),
            5,
            5,
            2,
        );
        check(
            "subsample",
            free(
                vec![conv(3, 3, 1, 1), LayerSpec::SubSample { window: 2 }, fc(3, false)],
                (6, 6, 1),
            ),
            6,
            6,
            1,
        );
        check(
            "maxpool",
            free(
                vec![
                    conv(2, 3, 1, 0),
                    LayerSpec::MaxPool { window: 2, stride: 2 },
                    fc(2, false),
                ],
                (6, 6, 1),
            ),
            6,
            6,
            1,
        );
        check(
            "su",
            free(
                vec![
                    conv(2, 3, 1, 1),
                    LayerSpec::SubSample { window: 2 },
                    LayerSpec::Su { blocks: 4, prob: 1.0 },
                    fc(4, true),
                    fc(2, false),
                ],
                (8, 8, 1),
            ),
            8,
            8,
            1,
        );
        check("fc", free(vec![fc(5, true), fc(3, false)], (1, 1, 6)), 1, 1, 6);

        // full network in the census shape (5 conv + 4 fc + shuffle) at a
        // reduced resolution so the exhaustive parameter sweep stays in
        // budget
        let full = NetworkSpec {
            input: (16, 16, 1),
            layers: vec![
                conv(2, 5, 1, 2),
                LayerSpec::Lrn,
                LayerSpec::SubSample { window: 2 },
                LayerSpec::Su { blocks: 4, prob: 1.0 },
                conv(4, 3, 1, 1),
                LayerSpec::SubSample { window: 2 },
                conv(4, 3, 1, 1),
                conv(4, 3, 1, 1),
                conv(4, 3, 1, 1),
                fc(8, true),
                fc(8, true),
                fc(8, true),
                fc(3, false),
            ],
            strict_census: true,
        };
        check("network", full, 16, 16, 1);
        assert!(start.elapsed() < Duration::from_secs(120), "took {:?}", start.elapsed());
    });
}

#[test]
fn criterion_05_bernoulli_gating() {
    report(5, "bernoulli gating rates", || {
        let x = distinct_map(4, 4, 2);
        let mut rng = ChaCha8Rng::seed_from_u64(99);

        // p = 0: exact identity
        let cfg = SuConfig::new(4, 0.0).unwrap();
        let (y, cache) = su_forward(&cfg, &x, &mut rng).unwrap();
        assert!(maps_bit_equal(&y, &x));
        assert!(cache.applied.iter().all(|&a| !a));

        // p = 1: exactly the shuffled map, and actually different
        let cfg = SuConfig::new(4, 1.0).unwrap();
        let (y, cache) = su_forward(&cfg, &x, &mut rng).unwrap();
        let (expected, _) = shuffle_alg1(&x, 4).unwrap();
        assert!(maps_bit_equal(&y, &expected));
        assert!(!maps_bit_equal(&y, &x));
        assert!(cache.applied.iter().all(|&a| a));

        // p = 0.5 over 10^4 independent per-sample draws
        let draws = 10_000usize;
        let batch = FeatureMap::<f32>::zeros(2, 2, 1, draws);
        let cfg = SuConfig::new(4, 0.5).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(123);
        let (_, cache) = su_forward(&cfg, &batch, &mut rng).unwrap();
        let rate = cache.applied.iter().filter(|&&a| a).count() as f64 / draws as f64;
        assert!(
            (rate - 0.5).abs() <= 0.02,
            "empirical rate {} outside 0.5 +/- 0.02",
            rate
        );
    });
}

#[test]
fn criterion_06_transfer_pipeline_integrity() {
    report(6, "transfer pipeline integrity", || {
        let scfg = SynthConfig {
            instances_per_class: 15,
            ..SynthConfig::default()
        };
        let (train_ds, _) = generate_dataset(&scfg, 1, false).unwrap();
        let data = scene_inputs_32(&train_ds);
        let labels: Vec<usize> = data.iter().map(|(_, l)| *l).collect();
        let maps: Vec<FeatureMap<f32>> = data.iter().map(|(m, _)| m.clone()).collect();

        let tc = TrainConfig {
            epochs: 30,
            seed: 0,
            ..TrainConfig::default()
        };
        let mut base =
            Network::<f32>::build_with_init(NetworkSpec::toy(4, None), 0, tc.init_std).unwrap();
        pretrain(&mut base, &data, &tc, true).unwrap();

        let features = extract_conv_features(&base, &maps).unwrap();
        let tspec = TransferNetSpec { hidden: 64, classes: 4 };
        let (tnet, _) = train_transfernet(&features, &labels, &tspec, &tc, true).unwrap();

        let combined = graft(&base, &tnet).unwrap();
        assert_eq!(combined.spec().conv_count(), 5, "conv census");
        assert_eq!(combined.spec().fc_count(), 4, "fc census");

        // composition identity: grafted forward equals the transfer head
        // applied to the frozen features, bit for bit
        for ((x, _), f) in data.iter().zip(&features) {
            let a = combined.forward(x).unwrap();
            let fv = FeatureMap::new(
                Tensor::from_vec(&[1, 1, f.len(), 1], f.clone()).unwrap(),
            )
            .unwrap();
            let b = tnet.forward(&fv).unwrap();
            assert_eq!(a.data().len(), b.data().len());
            for (u, v) in a.data().iter().zip(b.data()) {
                assert_eq!(u.to_bits(), v.to_bits(), "graft composition not bit-exact");
            }
        }

        // five fine-tuning epochs must not lose training accuracy
        // relative to the frozen-feature head
        let frozen_data: Vec<(FeatureMap<f32>, usize)> = features
            .iter()
            .zip(&labels)
            .map(|(f, &l)| {
                let t = Tensor::from_vec(&[1, 1, f.len(), 1], f.clone()).unwrap();
                (FeatureMap::new(t).unwrap(), l)
            })
            .collect();
        let frozen_acc = post_hoc_accuracy(&tnet, &frozen_data);

        let ft = TrainConfig {
            epochs: 5,
            lr: 0.001,
            seed: 0,
            ..TrainConfig::default()
        };
        let (tuned, _) = finetune(&combined, &data, &ft, None, true).unwrap();
        let tuned_acc = post_hoc_accuracy(&tuned, &data);
        assert!(
            tuned_acc + 1e-12 >= frozen_acc,
            "fine-tuning dropped training accuracy: {} < {}",
            tuned_acc,
            frozen_acc
        );
    });
}

#[test]
fn criterion_07_ablation_directions() {
    report(7, "ablation directions over five seeds", || {
        let start = Instant::now();
        let dcfg = DescriptorConfig::default();
        let base_idx = dcfg
            .scales
            .iter()
            .position(|s| (s - 1.0).abs() < 1e-9)
            .expect("unit scale present");

        // accumulated stress-test accuracy per descriptor variant:
        // combined max+pyramid, baseline half only, combined without the
        // pyramid, combined with mean pooling
        let mut acc = [0.0f64; 4];
        let seeds = 5u64;
        for seed in 0..seeds {
            let scfg = SynthConfig { seed, ..SynthConfig::default() };
            let (train_ds, test_ds) = generate_dataset(&scfg, 25, true).unwrap();
            let (train_ds, test_ds) = (via_disk(&train_ds), via_disk(&test_ds));
            assert_eq!(train_ds.len(), 200);
            assert_eq!(test_ds.len(), 100);
            let data = scene_inputs_32(&train_ds);
            let labels: Vec<usize> = data.iter().map(|(_, l)| *l).collect();
            let maps: Vec<FeatureMap<f32>> = data.iter().map(|(m, _)| m.clone()).collect();

            let tc = TrainConfig { epochs: 60, seed, ..TrainConfig::default() };
            let mut base =
                Network::<f32>::build_with_init(NetworkSpec::toy(4, None), seed, tc.init_std)
                    .unwrap();
            pretrain(&mut base, &data, &tc, true).unwrap();
            let features = extract_conv_features(&base, &maps).unwrap();
            let tspec = TransferNetSpec { hidden: 64, classes: 4 };
            let (tnet, _) = train_transfernet(&features, &labels, &tspec, &tc, true).unwrap();
            let combined = graft(&base, &tnet).unwrap();

            // gentle plain fine-tune: the graft is already near an optimum
            let wc = TrainConfig { epochs: 20, lr: 0.001, seed, ..TrainConfig::default() };
            let (w, _) = finetune(&combined, &data, &wc, None, true).unwrap();
            // the shuffle objective starts far from converged and needs a
            // longer, slightly hotter schedule; a high shuffle probability
            // pushes the representation toward layout invariance so the
            // inference-time shuffle view matches across splits
            let sc = TrainConfig { epochs: 60, lr: 0.005, seed, ..TrainConfig::default() };
            let (wsu, _) = finetune(&combined, &data, &sc, Some((4, 0.9)), true).unwrap();

            // one expensive feature pass per image and network; every
            // descriptor variant is derived from the shared features
            let describe_split = |ds: &SceneDataset| -> [Vec<Vec<f32>>; 4] {
                let mut variants: [Vec<Vec<f32>>; 4] = Default::default();
                for img in &ds.images {
                    let m = img.to_grayscale().to_feature_map::<f32>();
                    let fw = scale_patch_features(&w, &m, &dcfg).unwrap();
                    let fs = scale_patch_features(&wsu, &m, &dcfg).unwrap();
                    let max_w = pool_scales(&fw, Pool::Max).unwrap();
                    let max_s = pool_scales(&fs, Pool::Max).unwrap();

                    let mut comb = max_w.clone();
                    comb.extend(max_s.iter().copied());
                    variants[0].push(comb);
                    variants[1].push(max_w);
                    let mut nopyr = pool_patches(&fw[base_idx], Pool::Max).unwrap();
                    nopyr.extend(pool_patches(&fs[base_idx], Pool::Max).unwrap());
                    variants[2].push(nopyr);
                    let mut mean = pool_scales(&fw, Pool::Mean).unwrap();
                    mean.extend(pool_scales(&fs, Pool::Mean).unwrap());
                    variants[3].push(mean);
                }
                variants
            };
            let train_vars = describe_split(&train_ds);
            let test_vars = describe_split(&test_ds);

            let svm_cfg = SvmConfig { epochs: 300, seed, ..SvmConfig::default() };
            let mut seed_acc = [0.0f64; 4];
            for v in 0..4 {
                let (model, _) = train_svm(&train_vars[v], &train_ds.labels, &svm_cfg).unwrap();
                let (a, _) = evaluate(&model, &test_vars[v], &test_ds.labels).unwrap();
                seed_acc[v] = a;
                acc[v] += a;
            }
            println!(
                "seed {}: combined {:.3}, baseline {:.3}, no-pyramid {:.3}, mean-pool {:.3}",
                seed, seed_acc[0], seed_acc[1], seed_acc[2], seed_acc[3]
            );
        }
        for a in &mut acc {
            *a /= seeds as f64;
        }
        let [combined, baseline, no_pyramid, mean_pool] = acc;
        println!(
            "ablation means: combined {:.3}, baseline {:.3}, no-pyramid {:.3}, mean-pool {:.3}",
            combined, baseline, no_pyramid, mean_pool
        );
        assert!(
            combined >= baseline + 0.02,
            "combined {:.3} not two points above baseline {:.3}",
            combined,
            baseline
        );
        assert!(
            combined >= no_pyramid,
            "pyramid {:.3} below single scale {:.3}",
            combined,
            no_pyramid
        );
        assert!(
            combined >= mean_pool,
            "max pooling {:.3} below mean pooling {:.3}",
            combined,
            mean_pool
        );
        assert!(
            start.elapsed() < Duration::from_secs(900),
            "took {:?}",
            start.elapsed()
        );
    });
}

#[test]
fn criterion_08_descriptor_invariants() {
    report(8, "descriptor invariants", || {
        let dcfg = DescriptorConfig::default();
        let scfg = SynthConfig {
            instances_per_class: 1,
            ..SynthConfig::default()
        };
        let (ds, _) = generate_dataset(&scfg, 1, false).unwrap();
        let img = ds.images[0].to_grayscale().to_feature_map::<f32>();

        let build = || {
            let w = Network::<f32>::build_with_init(NetworkSpec::toy(4, None), 11, 0.1).unwrap();
            let wsu = with_su_layer(&w, 4, 0.5).unwrap();
            (w, wsu)
        };
        let (w, wsu) = build();

        // fixed length: two networks, V channels each
        let d = describe_image(&w, Some(&wsu), &img, &dcfg).unwrap();
        let volume = 16usize; // channels of the last convolutional layer
        assert_eq!(d.len(), 2 * volume);
        let half = describe_image(&w, None, &img, &dcfg).unwrap();
        assert_eq!(half.len(), volume);
        assert_eq!(
            d[..volume].iter().map(|v| v.to_bits()).collect::<Vec<_>>(),
            half.iter().map(|v| v.to_bits()).collect::<Vec<_>>()
        );

        // traversal-order invariance: pooling the same per-patch features
        // in reversed patch and scale order changes nothing (max pooling
        // is exact; mean pooling only up to accumulation rounding)
        let per_scale = scale_patch_features(&w, &img, &dcfg).unwrap();
        let mut reversed: Vec<Vec<Vec<f32>>> = per_scale
            .iter()
            .map(|feats| feats.iter().rev().cloned().collect())
            .collect();
        reversed.reverse();
        let a = pool_scales(&per_scale, Pool::Max).unwrap();
        let b = pool_scales(&reversed, Pool::Max).unwrap();
        assert_eq!(
            a.iter().map(|v| v.to_bits()).collect::<Vec<_>>(),
            b.iter().map(|v| v.to_bits()).collect::<Vec<_>>()
        );
        let am = pool_scales(&per_scale, Pool::Mean).unwrap();
        let bm = pool_scales(&reversed, Pool::Mean).unwrap();
        for (u, v) in am.iter().zip(&bm) {
            assert!((u - v).abs() <= 1e-6 * u.abs().max(1.0), "{} vs {}", u, v);
        }

        // determinism: rebuilding everything from the same seeds
        // reproduces the descriptor bit for bit
        let (w2, wsu2) = build();
        let d2 = describe_image(&w2, Some(&wsu2), &img, &dcfg).unwrap();
        assert_eq!(
            d.iter().map(|v| v.to_bits()).collect::<Vec<_>>(),
            d2.iter().map(|v| v.to_bits()).collect::<Vec<_>>()
        );
    });
}

#[test]
fn criterion_09_svm_suite() {
    report(9, "svm training properties", || {
        // well-separated blobs: one-hot class centers plus small noise
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        let classes = 3usize;
        let per_class = 20usize;
        let mut xs: Vec<Vec<f32>> = Vec::new();
        let mut labels: Vec<usize> = Vec::new();
        for c in 0..classes {
            for _ in 0..per_class {
                let mut v = vec![0.0f32; 8];
                v[c] = 4.0;
                for e in v.iter_mut() {
                    *e += rng.random_range(-0.5..0.5);
                }
                xs.push(v);
                labels.push(c);
            }
        }
        let cfg = SvmConfig { epochs: 200, ..SvmConfig::default() };
        let (model, traces) = train_svm(&xs, &labels, &cfg).unwrap();

        let (train_acc, confusion) = evaluate(&model, &xs, &labels).unwrap();
        assert_eq!(train_acc, 1.0, "separable set not fully fit");
        for (c, row) in confusion.iter().enumerate() {
            assert_eq!(row.iter().sum::<usize>(), per_class, "row {} sum", c);
        }

        // per-class hinge objective: averaged over non-overlapping
        // 25-epoch windows the trace never increases beyond stochastic
        // jitter. Subgradient descent with decaying steps is only
        // non-increasing in expectation, so the converged plateau is
        // allowed 0.1% relative noise.
        let window = 25usize;
        for (c, trace) in traces.iter().enumerate() {
            assert!(trace.len() >= 2 * window);
            let ma: Vec<f64> = trace
                .chunks_exact(window)
                .map(|w| w.iter().sum::<f64>() / window as f64)
                .collect();
            for (i, pair) in ma.windows(2).enumerate() {
                assert!(
                    pair[1] <= pair[0] * 1.001,
                    "class {} objective rose at window {}: {} -> {}",
                    c,
                    i,
                    pair[0],
                    pair[1]
                );
            }
            // and the smoothed objective must genuinely improve overall
            assert!(
                *ma.last().unwrap() < ma[0],
                "class {} objective never improved: {} -> {}",
                c,
                ma[0],
                ma.last().unwrap()
            );
        }
    });
}

#[test]
fn criterion_10_file_formats() {
    report(10, "file format round-trips and corruption", || {
        let dir = tempfile::tempdir().unwrap();

        // model round-trip
        let net = Network::<f32>::build_with_init(NetworkSpec::toy(4, None), 3, 0.1).unwrap();
        let mpath = dir.path().join("model.s2ic");
        save_model(&mpath, &net, "pretrained").unwrap();
        let (loaded, variant) = load_model(&mpath).unwrap();
        assert_eq!(variant, "pretrained");
        assert_eq!(
            net.flat_params().iter().map(|v| v.to_bits()).collect::<Vec<_>>(),
            loaded.flat_params().iter().map(|v| v.to_bits()).collect::<Vec<_>>()
        );
        let x = filled_map(32, 32, 1, 1, 9);
        assert_eq!(
            net.forward(&x).unwrap().data().iter().map(|v| v.to_bits()).collect::<Vec<_>>(),
            loaded.forward(&x).unwrap().data().iter().map(|v| v.to_bits()).collect::<Vec<_>>()
        );

        // descriptor table round-trip
        let rows: Vec<Vec<f32>> = (0..5)
            .map(|i| (0..7).map(|j| (i * 7 + j) as f32 * 0.25 - 3.0).collect())
            .collect();
        let dpath = dir.path().join("rows.s2fv");
        save_descriptors(&dpath, &rows).unwrap();
        let back = load_descriptors(&dpath).unwrap();
        assert_eq!(rows.len(), back.len());
        for (a, b) in rows.iter().zip(&back) {
            assert_eq!(
                a.iter().map(|v| v.to_bits()).collect::<Vec<_>>(),
                b.iter().map(|v| v.to_bits()).collect::<Vec<_>>()
            );
        }

        // svm round-trip
        let xs = vec![vec![-1.0f32, 0.0], vec![1.0, 0.5], vec![-0.5, 1.0], vec![0.7, -0.3]];
        let labels = vec![0usize, 1, 0, 1];
        let (svm, _) = train_svm(&xs, &labels, &SvmConfig::default()).unwrap();
        let spath = dir.path().join("model.s2sv");
        save_svm(&spath, &svm).unwrap();
        let svm2 = load_svm(&spath).unwrap();
        assert_eq!(svm.biases.iter().map(|v| v.to_bits()).collect::<Vec<_>>(),
                   svm2.biases.iter().map(|v| v.to_bits()).collect::<Vec<_>>());
        for (a, b) in svm.weights.iter().zip(&svm2.weights) {
            assert_eq!(
                a.iter().map(|v| v.to_bits()).collect::<Vec<_>>(),
                b.iter().map(|v| v.to_bits()).collect::<Vec<_>>()
            );
        }

        // netpbm round-trips, grayscale and color
        let mut rng = ChaCha8Rng::seed_from_u64(31);
        for channels in [1usize, 3] {
            let mut img = Image::new(9, 7, channels).unwrap();
            for i in 0..9 {
                for j in 0..7 {
                    for c in 0..channels {
                        img.set(i, j, c, rng.random_range(0..=255u32) as u8);
                    }
                }
            }
            let bytes = encode_netpbm(&img);
            let back = decode_netpbm(&bytes).unwrap();
            assert_eq!(img.height, back.height);
            assert_eq!(img.width, back.width);
            assert_eq!(img.channels, back.channels);
            assert_eq!(img.data, back.data);
        }

        // corruption: every reader returns a categorized error, never
        // panics
        assert!(decode_netpbm(b"P7\n2 2\n255\n0000").is_err());
        assert!(decode_netpbm(b"P5\n4 4\n255\nab").is_err());
        assert!(decode_netpbm(b"P5\n-3 4\n255\n").is_err());

        let junk = dir.path().join("junk.bin");
        std::fs::write(&junk, b"XXXXnot a model").unwrap();
        assert!(load_model(&junk).is_err());
        assert!(load_descriptors(&junk).is_err());
        assert!(load_svm(&junk).is_err());

        // truncated model file
        let bytes = std::fs::read(&mpath).unwrap();
        let tpath = dir.path().join("trunc.s2ic");
        std::fs::write(&tpath, &bytes[..bytes.len() / 2]).unwrap();
        assert!(load_model(&tpath).is_err());
    });
}
