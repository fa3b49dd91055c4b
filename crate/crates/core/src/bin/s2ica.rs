use clap::{Parser, Subcommand, ValueEnum};
use s2ica::descriptor::{
    contribution_map, describe_image, load_descriptors, save_descriptors, DescriptorConfig, Pool,
};
use s2ica::error::{Error, Result};
use s2ica::gradcheck::check_network;
use s2ica::image::{load_image, save_image, Image};
use s2ica::network::{
    extract_conv_features, finetune, graft, load_model, pretrain, save_model, train_transfernet,
    write_metrics_csv, LayerSpec, Network, NetworkSpec, TrainConfig, TransferNetSpec,
};
use s2ica::pyramid::{extract_patches, resize_bilinear, resize_to_smaller_dim};
use s2ica::su::{rearrangement_level, shuffle_alg1};
use s2ica::svm::{evaluate, load_svm, save_svm, train_svm, write_confusion_csv, SvmConfig};
use s2ica::synth::{generate_dataset, load_dataset, save_dataset, SceneDataset, SynthConfig};
use s2ica::tensor::FeatureMap;
use serde::{Deserialize, Serialize};
use std::path::{Path, PathBuf};
use std::process::ExitCode;

#[derive(Parser)]
#[command(name = "s2ica", version, about = "Layout- and scale-robust scene descriptors")]
struct Cli {
    /// TOML run configuration; flags override individual keys
    #[arg(long, global = true)]
    config: Option<PathBuf>,
    #[arg(long, global = true)]
    seed: Option<u64>,
    /// Worker thread cap (default: one per core)
    #[arg(long, global = true)]
    threads: Option<usize>,
    /// Run directory for artifacts
    #[arg(long, global = true)]
    out: Option<PathBuf>,
    #[command(subcommand)]
    cmd: Cmd,
}

#[derive(Clone, Copy, ValueEnum)]
enum PoolArg {
    Max,
    Mean,
}

#[derive(Subcommand)]
enum Cmd {
    /// Generate the synthetic glyph-world train and layout-stress test splits
    SynthGen {
        /// Test images per class
        #[arg(long, default_value_t = 25)]
        test_per_class: usize,
        /// Draw test positions from the same prior as training
        #[arg(long)]
        no_stress: bool,
    },
    /// Train the base network on source-dataset patches
    Pretrain {
        #[arg(long = "in")]
        input: PathBuf,
        #[arg(long)]
        epochs: Option<usize>,
        #[arg(long)]
        lr: Option<f64>,
    },
    /// Extract last-conv features of training patches with the pretrained network
    ExtractConv {
        #[arg(long = "in")]
        input: PathBuf,
    },
    /// Train the four fully connected layers on frozen features
    TrainTransfernet {
        #[arg(long)]
        epochs: Option<usize>,
        #[arg(long)]
        lr: Option<f64>,
    },
    /// Graft the TransferNet onto the pretrained convolutional stack
    Graft,
    /// Fine-tune the grafted network (variant W, or W_su with the shuffle layer)
    Finetune {
        #[arg(long = "in")]
        input: PathBuf,
        #[arg(long)]
        epochs: Option<usize>,
        #[arg(long)]
        lr: Option<f64>,
        #[arg(long)]
        blocks: Option<usize>,
        #[arg(long)]
        su_prob: Option<f64>,
        /// Train the plain variant W instead of W_su
        #[arg(long)]
        no_su: bool,
    },
    /// Compute image descriptors for a dataset with the tuned networks
    Describe {
        #[arg(long = "in")]
        input: PathBuf,
        #[arg(long)]
        patch_size: Option<usize>,
        #[arg(long)]
        stride: Option<usize>,
        #[arg(long)]
        scales: Option<String>,
        #[arg(long)]
        pool: Option<PoolArg>,
        #[arg(long)]
        no_pyramid: bool,
        /// Use only the plain network W
        #[arg(long)]
        no_su: bool,
    },
    /// Train the one-vs-rest linear SVM on saved descriptors
    TrainSvm {
        #[arg(long = "C")]
        c: Option<f64>,
        #[arg(long)]
        epochs: Option<usize>,
    },
    /// Evaluate the SVM on a dataset; writes the confusion matrix CSV
    Evaluate {
        #[arg(long = "in")]
        input: PathBuf,
        #[arg(long)]
        patch_size: Option<usize>,
        #[arg(long)]
        stride: Option<usize>,
        #[arg(long)]
        scales: Option<String>,
        #[arg(long)]
        pool: Option<PoolArg>,
        #[arg(long)]
        no_pyramid: bool,
        #[arg(long)]
        no_su: bool,
    },
    /// Per-patch contribution heat map for one image
    Heatmap {
        #[arg(long = "in")]
        input: PathBuf,
        /// True class index to score against
        #[arg(long, default_value_t = 0)]
        class: usize,
        #[arg(long)]
        patch_size: Option<usize>,
        #[arg(long)]
        stride: Option<usize>,
        #[arg(long)]
        no_su: bool,
    },
    /// Write the block-shuffled version of an image
    ShuffleDemo {
        #[arg(long = "in")]
        input: PathBuf,
        #[arg(long, default_value_t = 4)]
        blocks: usize,
    },
    /// Finite-difference verification of all layer and network gradients
    Gradcheck,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(default)]
struct SuParams {
    blocks: usize,
    prob: f64,
}

impl Default for SuParams {
    fn default() -> Self {
        // a high shuffle probability trains near-invariance to the block
        // permutation, so the deterministic inference-time shuffle gives
        // consistent features on both layout splits
        SuParams {
            blocks: 4,
            prob: 0.9,
        }
    }
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(default)]
struct RunConfig {
    seed: u64,
    threads: usize,
    classes: usize,
    /// network input side used for training samples
    train_input: usize,
    transfer_hidden: usize,
    synth: SynthConfig,
    su: SuParams,
    train: TrainConfig,
    svm: SvmConfig,
    descriptor: DescriptorConfig,
}

impl Default for RunConfig {
    fn default() -> Self {
        RunConfig {
            seed: 0,
            threads: 0,
            classes: 4,
            train_input: 32,
            transfer_hidden: 64,
            synth: SynthConfig::default(),
            su: SuParams::default(),
            train: TrainConfig::default(),
            svm: SvmConfig::default(),
            descriptor: DescriptorConfig::default(),
        }
    }
}

fn load_run_config(cli: &Cli) -> Result<RunConfig> {
    let mut cfg = match &cli.config {
        Some(path) => {
            let text = std::fs::read_to_string(path)?;
            toml::from_str(&text).map_err(|e| Error::Config(format!("bad config: {}", e)))?
        }
        None => RunConfig::default(),
    };
    if let Some(seed) = cli.seed {
        cfg.seed = seed;
        cfg.synth.seed = seed;
        cfg.train.seed = seed;
        cfg.svm.seed = seed;
    }
    if let Some(t) = cli.threads {
        cfg.threads = t;
    }
    Ok(cfg)
}

fn out_dir(cli: &Cli) -> Result<PathBuf> {
    let dir = cli.out.clone().unwrap_or_else(|| PathBuf::from("run"));
    std::fs::create_dir_all(&dir)?;
    Ok(dir)
}

fn echo_config(dir: &Path, cfg: &RunConfig) -> Result<()> {
    let text =
        toml::to_string_pretty(cfg).map_err(|e| Error::Config(format!("config echo: {}", e)))?;
    std::fs::write(dir.join("config.resolved.toml"), text)?;
    Ok(())
}

fn summary(cmd: &str, fields: &[(&str, String)]) {
    let mut obj = serde_json::Map::new();
    obj.insert("cmd".into(), cmd.into());
    for (k, v) in fields {
        let val = v
            .parse::<f64>()
            .map(|f| serde_json::json!(f))
            .unwrap_or_else(|_| serde_json::json!(v));
        obj.insert((*k).to_string(), val);
    }
    println!("{}", serde_json::Value::Object(obj));
}

/// Target-style training samples: dense patches from the base pyramid
/// level, each carrying its scene's label. This matches the view the
/// descriptor stage sees.
fn dataset_patch_inputs(
    ds: &SceneDataset,
    base_dim: usize,
    patch_size: usize,
    stride: usize,
    side: usize,
) -> Result<Vec<(FeatureMap<f32>, usize)>> {
    let mut out = Vec::new();
    for (img, &label) in ds.images.iter().zip(&ds.labels) {
        let m = img.to_grayscale().to_feature_map::<f32>();
        let base = resize_to_smaller_dim(&m, base_dim)?;
        for p in extract_patches(&base, patch_size, stride)? {
            let (h, w, _, _) = p.map.dims();
            let fitted = if (h, w) == (side, side) {
                p.map
            } else {
                resize_bilinear(&p.map, side, side)?
            };
            out.push((fitted, label));
        }
    }
    Ok(out)
}

fn read_labels(path: &Path) -> Result<Vec<usize>> {
    let text = std::fs::read_to_string(path)?;
    text.lines()
        .map(|l| {
            l.trim()
                .parse::<usize>()
                .map_err(|e| Error::Format {
                    offset: 0,
                    msg: format!("bad label line {:?}: {}", l, e),
                })
        })
        .collect()
}

fn write_labels(path: &Path, labels: &[usize]) -> Result<()> {
    let text: String = labels.iter().map(|l| format!("{}\n", l)).collect();
    std::fs::write(path, text)?;
    Ok(())
}

fn parse_scales(s: &str) -> Result<Vec<f64>> {
    s.split(',')
        .map(|t| {
            t.trim()
                .parse::<f64>()
                .map_err(|e| Error::Config(format!("bad scale {:?}: {}", t, e)))
        })
        .collect()
}

fn descriptor_config(
    base: &DescriptorConfig,
    patch_size: Option<usize>,
    stride: Option<usize>,
    scales: &Option<String>,
    pool: Option<PoolArg>,
    no_pyramid: bool,
) -> Result<DescriptorConfig> {
    let mut cfg = base.clone();
    if let Some(p) = patch_size {
        cfg.patch_size = p;
    }
    if let Some(s) = stride {
        cfg.stride = s;
    }
    if let Some(s) = scales {
        cfg.scales = parse_scales(s)?;
    }
    if let Some(p) = pool {
        cfg.pool = match p {
            PoolArg::Max => Pool::Max,
            PoolArg::Mean => Pool::Mean,
        };
    }
    if no_pyramid {
        cfg.pyramid = false;
    }
    Ok(cfg)
}

fn load_nets(dir: &Path, no_su: bool) -> Result<(Network<f32>, Option<Network<f32>>)> {
    let (w, _) = load_model(&dir.join("w.s2ic"))?;
    let wsu = if no_su {
        None
    } else {
        Some(load_model(&dir.join("w_su.s2ic"))?.0)
    };
    Ok((w, wsu))
}

fn describe_dataset(
    ds: &SceneDataset,
    w: &Network<f32>,
    wsu: Option<&Network<f32>>,
    cfg: &DescriptorConfig,
) -> Result<Vec<Vec<f32>>> {
    ds.images
        .iter()
        .map(|img| {
            let m = img.to_grayscale().to_feature_map::<f32>();
            describe_image(w, wsu, &m, cfg)
        })
        .collect()
}

fn run(cli: &Cli) -> Result<()> {
    let cfg = load_run_config(cli)?;
    if cfg.threads > 0 {
        rayon::ThreadPoolBuilder::new()
            .num_threads(cfg.threads)
            .build_global()
            .map_err(|e| Error::Config(format!("thread pool: {}", e)))?;
    }
    let dir = out_dir(cli)?;
    echo_config(&dir, &cfg)?;
    match &cli.cmd {
        Cmd::SynthGen {
            test_per_class,
            no_stress,
        } => {
            let (train, test) = generate_dataset(&cfg.synth, *test_per_class, !*no_stress)?;
            save_dataset(&dir.join("train"), &train)?;
            save_dataset(&dir.join("test"), &test)?;
            summary(
                "synth-gen",
                &[
                    ("train_images", train.len().to_string()),
                    ("test_images", test.len().to_string()),
                    ("classes", train.class_names.len().to_string()),
                ],
            );
        }
        Cmd::Pretrain { input, epochs, lr } => {
            let ds = load_dataset(input)?;
            let classes = ds.class_names.len();
            let patches = dataset_patch_inputs(
                &ds,
                cfg.descriptor.base_dim,
                cfg.descriptor.patch_size,
                cfg.descriptor.patch_size,
                cfg.train_input,
            )?;
            let mut tc = cfg.train.clone();
            if let Some(e) = epochs {
                tc.epochs = *e;
            }
            if let Some(l) = lr {
                tc.lr = *l;
            }
            let mut net = Network::<f32>::build_with_init(
                NetworkSpec::toy(classes, None),
                cfg.seed,
                tc.init_std,
            )?;
            let records = pretrain(&mut net, &patches, &tc, false)?;
            save_model(&dir.join("pretrained.s2ic"), &net, "pretrained")?;
            write_metrics_csv(&dir.join("pretrain_metrics.csv"), &records)?;
            let last = records.last().expect("at least one epoch");
            summary(
                "pretrain",
                &[
                    ("patches", patches.len().to_string()),
                    ("loss", format!("{}", last.loss)),
                    ("accuracy", format!("{}", last.accuracy)),
                ],
            );
        }
        Cmd::ExtractConv { input } => {
            let (net, _) = load_model(&dir.join("pretrained.s2ic"))?;
            let ds = load_dataset(input)?;
            let patches = dataset_patch_inputs(
                &ds,
                cfg.descriptor.base_dim,
                cfg.descriptor.patch_size,
                cfg.descriptor.patch_size,
                cfg.train_input,
            )?;
            let maps: Vec<FeatureMap<f32>> = patches.iter().map(|(m, _)| m.clone()).collect();
            let labels: Vec<usize> = patches.iter().map(|(_, l)| *l).collect();
            let features = extract_conv_features(&net, &maps)?;
            save_descriptors(&dir.join("features.s2fv"), &features)?;
            write_labels(&dir.join("features.labels"), &labels)?;
            summary(
                "extract-conv",
                &[
                    ("count", features.len().to_string()),
                    ("length", features[0].len().to_string()),
                ],
            );
        }
        Cmd::TrainTransfernet { epochs, lr } => {
            let features = load_descriptors(&dir.join("features.s2fv"))?;
            let labels = read_labels(&dir.join("features.labels"))?;
            let classes = labels.iter().max().map(|&m| m + 1).unwrap_or(0);
            let mut tc = cfg.train.clone();
            if let Some(e) = epochs {
                tc.epochs = *e;
            }
            if let Some(l) = lr {
                tc.lr = *l;
            }
            let tspec = TransferNetSpec {
                hidden: cfg.transfer_hidden,
                classes,
            };
            let (net, records) = train_transfernet(&features, &labels, &tspec, &tc, false)?;
            save_model(&dir.join("transfernet.s2ic"), &net, "transfernet")?;
            write_metrics_csv(&dir.join("transfernet_metrics.csv"), &records)?;
            let last = records.last().expect("at least one epoch");
            summary(
                "train-transfernet",
                &[
                    ("loss", format!("{}", last.loss)),
                    ("accuracy", format!("{}", last.accuracy)),
                ],
            );
        }
        Cmd::Graft => {
            let (base, _) = load_model(&dir.join("pretrained.s2ic"))?;
            let (transfer, _) = load_model(&dir.join("transfernet.s2ic"))?;
            let combined = graft(&base, &transfer)?;
            save_model(&dir.join("combined.s2ic"), &combined, "combined")?;
            summary(
                "graft",
                &[
                    ("conv_layers", combined.spec().conv_count().to_string()),
                    ("fc_layers", combined.spec().fc_count().to_string()),
                ],
            );
        }
        Cmd::Finetune {
            input,
            epochs,
            lr,
            blocks,
            su_prob,
            no_su,
        } => {
            let (combined, _) = load_model(&dir.join("combined.s2ic"))?;
            let ds = load_dataset(input)?;
            let patches = dataset_patch_inputs(
                &ds,
                cfg.descriptor.base_dim,
                cfg.descriptor.patch_size,
                cfg.descriptor.patch_size,
                cfg.train_input,
            )?;
            let mut tc = cfg.train.clone();
            tc.epochs = epochs.unwrap_or(5);
            // Fine-tuning resumes from a grafted optimum; a tenth of the
            // base rate keeps it from overshooting.
            tc.lr = lr.unwrap_or(tc.lr * 0.1);
            let su = if *no_su {
                None
            } else {
                Some((
                    blocks.unwrap_or(cfg.su.blocks),
                    su_prob.unwrap_or(cfg.su.prob),
                ))
            };
            let (net, records) = finetune(&combined, &patches, &tc, su, false)?;
            let (file, variant) = if *no_su {
                ("w.s2ic", "W")
            } else {
                ("w_su.s2ic", "W_su")
            };
            save_model(&dir.join(file), &net, variant)?;
            write_metrics_csv(
                &dir.join(format!("finetune_{}_metrics.csv", variant.to_lowercase())),
                &records,
            )?;
            let last = records.last().expect("at least one epoch");
            summary(
                "finetune",
                &[
                    ("variant", variant.to_string()),
                    ("loss", format!("{}", last.loss)),
                    ("accuracy", format!("{}", last.accuracy)),
                ],
            );
        }
        Cmd::Describe {
            input,
            patch_size,
            stride,
            scales,
            pool,
            no_pyramid,
            no_su,
        } => {
            let dcfg = descriptor_config(
                &cfg.descriptor,
                *patch_size,
                *stride,
                scales,
                *pool,
                *no_pyramid,
            )?;
            let (w, wsu) = load_nets(&dir, *no_su)?;
            let ds = load_dataset(input)?;
            let rows = describe_dataset(&ds, &w, wsu.as_ref(), &dcfg)?;
            save_descriptors(&dir.join("descriptors.s2fv"), &rows)?;
            write_labels(&dir.join("descriptors.labels"), &ds.labels)?;
            summary(
                "describe",
                &[
                    ("count", rows.len().to_string()),
                    ("length", rows[0].len().to_string()),
                ],
            );
        }
        Cmd::TrainSvm { c, epochs } => {
            let rows = load_descriptors(&dir.join("descriptors.s2fv"))?;
            let labels = read_labels(&dir.join("descriptors.labels"))?;
            let mut scfg = cfg.svm.clone();
            if let Some(c) = c {
                scfg.c = *c;
            }
            if let Some(e) = epochs {
                scfg.epochs = *e;
            }
            let (model, _) = train_svm(&rows, &labels, &scfg)?;
            save_svm(&dir.join("svm.s2sv"), &model)?;
            let (acc, _) = evaluate(&model, &rows, &labels)?;
            summary(
                "train-svm",
                &[
                    ("classes", model.weights.len().to_string()),
                    ("train_accuracy", format!("{}", acc)),
                ],
            );
        }
        Cmd::Evaluate {
            input,
            patch_size,
            stride,
            scales,
            pool,
            no_pyramid,
            no_su,
        } => {
            let dcfg = descriptor_config(
                &cfg.descriptor,
                *patch_size,
                *stride,
                scales,
                *pool,
                *no_pyramid,
            )?;
            let (w, wsu) = load_nets(&dir, *no_su)?;
            let model = load_svm(&dir.join("svm.s2sv"))?;
            let ds = load_dataset(input)?;
            let rows = describe_dataset(&ds, &w, wsu.as_ref(), &dcfg)?;
            let (acc, confusion) = evaluate(&model, &rows, &ds.labels)?;
            write_confusion_csv(&dir.join("confusion.csv"), &confusion)?;
            summary(
                "evaluate",
                &[
                    ("images", ds.len().to_string()),
                    ("accuracy", format!("{}", acc)),
                ],
            );
        }
        Cmd::Heatmap {
            input,
            class,
            patch_size,
            stride,
            no_su,
        } => {
            let dcfg = descriptor_config(
                &cfg.descriptor,
                *patch_size,
                *stride,
                &None,
                None,
                false,
            )?;
            let (w, wsu) = load_nets(&dir, *no_su)?;
            let model = load_svm(&dir.join("svm.s2sv"))?;
            let img = load_image(input)?.to_grayscale().to_feature_map::<f32>();
            let cm = contribution_map(&w, wsu.as_ref(), &img, &dcfg, &model, *class)?;
            let heat = cm.to_heat_image(dcfg.stride)?;
            save_image(&dir.join("heatmap.pgm"), &heat)?;
            summary(
                "heatmap",
                &[
                    ("rows", cm.rows.to_string()),
                    ("cols", cm.cols.to_string()),
                ],
            );
        }
        Cmd::ShuffleDemo { input, blocks } => {
            let img = load_image(input)?.to_grayscale();
            let m = img.to_feature_map::<f32>();
            let (h, w, _, _) = m.dims();
            // clamp so the grid never exceeds one cell per block
            let mut n = (*blocks).max(4);
            loop {
                let level = rearrangement_level(n)?;
                if level <= h.min(w) || n == 4 {
                    break;
                }
                n = (level - 1).pow(2).max(4) * 4; // shrink toward a feasible grid
            }
            let n = n.min((h.min(w)).pow(2).max(4));
            let (shuffled, _) = shuffle_alg1(&m, n)?;
            let out_img = Image::from_feature_map(&shuffled)?;
            save_image(&dir.join("shuffled.pgm"), &out_img)?;
            summary(
                "shuffle-demo",
                &[
                    ("blocks", n.to_string()),
                    ("height", h.to_string()),
                    ("width", w.to_string()),
                ],
            );
        }
        Cmd::Gradcheck => {
            let tol = 1e-5;
            let mut worst = 0.0f64;
            let mut check = |name: &str,
                             spec: NetworkSpec,
                             h: usize,
                             w: usize,
                             c: usize|
             -> Result<()> {
                let net = Network::<f64>::build_with_init(spec, 17, 0.3)?;
                use rand::{Rng, SeedableRng};
                let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(23);
                let mut x = FeatureMap::<f64>::zeros(h, w, c, 1);
                for i in 0..h {
                    for j in 0..w {
                        for k in 0..c {
                            x.set(i, j, k, 0, rng.random_range(-1.0..1.0));
                        }
                    }
                }
                let report = check_network(&net, &x, 0, 1e-5)?;
                worst = worst.max(report.max_rel_err);
                println!(
                    "gradcheck {}: max_rel_err {:.3e} over {} params + {} inputs",
                    name, report.max_rel_err, report.params_checked, report.inputs_checked
                );
                Ok(())
            };
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
            check(
                "conv",
                free(vec![conv(3, 3, 1, 1), fc(3, false)], (6, 6, 2)),
                6,
                6,
                2,
            )?;
            check(
                "lrn",
                free(vec![conv(4, 3, 1, 1), LayerSpec::Lrn, fc(3, false)], (5, 5, 2)),
                5,
                5,
                2,
            )?;
            check(
                "subsample",
                free(
                    vec![conv(3, 3, 1, 1), LayerSpec::SubSample { window: 2 }, fc(3, false)],
                    (6, 6, 1),
                ),
                6,
                6,
                1,
            )?;
            check(
                "maxpool",
                free(
                    vec![
                        conv(2, 3, 1, 0),
                        LayerSpec::MaxPool {
                            window: 2,
                            stride: 2,
                        },
                        fc(2, false),
                    ],
                    (6, 6, 1),
                ),
                6,
                6,
                1,
            )?;
            check(
                "su",
                free(
                    vec![
                        conv(2, 3, 1, 1),
                        LayerSpec::SubSample { window: 2 },
                        LayerSpec::Su {
                            blocks: 4,
                            prob: 1.0,
                        },
                        fc(4, true),
                        fc(2, false),
                    ],
                    (8, 8, 1),
                ),
                8,
                8,
                1,
            )?;
            check(
                "fc",
                free(vec![fc(5, true), fc(3, false)], (1, 1, 6)),
                1,
                1,
                6,
            )?;
            // census-shaped network (5 conv + 4 fc) with the shuffle layer
            let toy = NetworkSpec {
                input: (16, 16, 1),
                layers: vec![
                    conv(2, 5, 1, 2),
                    LayerSpec::Lrn,
                    LayerSpec::SubSample { window: 2 },
                    LayerSpec::Su {
                        blocks: 4,
                        prob: 1.0,
                    },
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
            check("network", toy, 16, 16, 1)?;
            summary(
                "gradcheck",
                &[
                    ("max_rel_err", format!("{}", worst)),
                    ("tolerance", format!("{}", tol)),
                    ("pass", (worst <= tol).to_string()),
                ],
            );
            if worst > tol {
                return Err(Error::Training(format!(
                    "gradient check failed: {} > {}",
                    worst, tol
                )));
            }
        }
    }
    Ok(())
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    match run(&cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {}", e);
            ExitCode::FAILURE
        }
    }
}
