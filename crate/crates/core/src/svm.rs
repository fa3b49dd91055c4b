//! One-vs-rest linear SVM trained by deterministic-shuffle subgradient
//! descent on the L2-regularized hinge loss, with 1/(lambda t) steps.

use crate::error::{Error, Result};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use std::io::{Read, Write};
use std::path::Path;

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct SvmModel {
    pub weights: Vec<Vec<f32>>, // one per class
    pub biases: Vec<f32>,
    pub c: f64,
    pub normalize: bool,
    pub dim: usize,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(default)]
pub struct SvmConfig {
    pub c: f64,
    pub epochs: usize,
    pub normalize: bool,
    pub seed: u64,
}

impl Default for SvmConfig {
    fn default() -> Self {
        SvmConfig {
            c: 1.0,
            epochs: 100,
            normalize: true,
            seed: 0,
        }
    }
}

fn l2_normalize(x: &[f32]) -> Vec<f32> {
    let norm = x.iter().map(|&v| (v as f64) * (v as f64)).sum::<f64>().sqrt();
    if norm > 0.0 {
        x.iter().map(|&v| (v as f64 / norm) as f32).collect()
    } else {
        x.to_vec()
    }
}

fn dot(w: &[f32], x: &[f32]) -> f64 {
    w.iter().zip(x).map(|(&a, &b)| a as f64 * b as f64).sum()
}

/// Mean hinge objective of one binary problem:
/// lambda/2 ||w||^2 + mean(max(0, 1 - y (w.x + b))).
fn binary_objective(w: &[f32], b: f64, xs: &[Vec<f32>], ys: &[f64], lambda: f64) -> f64 {
    let reg = lambda / 2.0 * dot(w, w);
    let hinge: f64 = xs
        .iter()
        .zip(ys)
        .map(|(x, &y)| (1.0 - y * (dot(w, x) + b)).max(0.0))
        .sum::<f64>()
        / xs.len() as f64;
    reg + hinge
}

/// Train one binary problem; also returns the per-epoch objective.
fn train_binary(
    xs: &[Vec<f32>],
    ys: &[f64],
    lambda: f64,
    epochs: usize,
    seed: u64,
) -> (Vec<f32>, f64, Vec<f64>) {
    let dim = xs[0].len();
    let mut w = vec![0.0f32; dim];
    let mut b = 0.0f64;
    let mut order: Vec<usize> = (0..xs.len()).collect();
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut t = 0usize;
    let mut objectives = Vec::with_capacity(epochs);
    for _ in 0..epochs {
        for i in (1..order.len()).rev() {
            let j = rng.random_range(0..=i);
            order.swap(i, j);
        }
        for &idx in &order {
            t += 1;
            let eta = 1.0 / (lambda * t as f64);
            let x = &xs[idx];
            let y = ys[idx];
            let margin = y * (dot(&w, x) + b);
            let shrink = 1.0 - eta * lambda;
            for wv in w.iter_mut() {
                *wv = (*wv as f64 * shrink) as f32;
            }
            if margin < 1.0 {
                for (wv, &xv) in w.iter_mut().zip(x) {
                    *wv = (*wv as f64 + eta * y * xv as f64) as f32;
                }
                b += eta * y;
            }
        }
        objectives.push(binary_objective(&w, b, xs, ys, lambda));
    }
    (w, b, objectives)
}

/// Train one one-vs-rest problem per class. Returns the model and, for
/// each class, the per-epoch hinge objective trace.
pub fn train_svm(
    descriptors: &[Vec<f32>],
    labels: &[usize],
    cfg: &SvmConfig,
) -> Result<(SvmModel, Vec<Vec<f64>>)> {
    if descriptors.is_empty() {
        return Err(Error::EmptyInput("no descriptors".into()));
    }
    if descriptors.len() != labels.len() {
        return Err(Error::Label(format!(
            "{} descriptors but {} labels",
            descriptors.len(),
            labels.len()
        )));
    }
    let dim = descriptors[0].len();
    if descriptors.iter().any(|d| d.len() != dim) {
        return Err(Error::dim("descriptors have ragged lengths"));
    }
    let classes = labels.iter().max().map(|&m| m + 1).unwrap_or(0);
    if classes < 2 {
        return Err(Error::Config("need at least two classes".into()));
    }
    let xs: Vec<Vec<f32>> = if cfg.normalize {
        descriptors.iter().map(|d| l2_normalize(d)).collect()
    } else {
        descriptors.to_vec()
    };
    let lambda = 1.0 / (cfg.c * xs.len() as f64);
    let results: Vec<(Vec<f32>, f64, Vec<f64>)> = {
        use rayon::prelude::*;
        (0..classes)
            .into_par_iter()
            .map(|class| {
                let ys: Vec<f64> = labels
                    .iter()
                    .map(|&l| if l == class { 1.0 } else { -1.0 })
                    .collect();
                train_binary(&xs, &ys, lambda, cfg.epochs, cfg.seed ^ class as u64)
            })
            .collect()
    };
    let mut weights = Vec::with_capacity(classes);
    let mut biases = Vec::with_capacity(classes);
    let mut traces = Vec::with_capacity(classes);
    for (w, b, obj) in results {
        weights.push(w);
        biases.push(b as f32);
        traces.push(obj);
    }
    Ok((
        SvmModel {
            weights,
            biases,
            c: cfg.c,
            normalize: cfg.normalize,
            dim,
        },
        traces,
    ))
}

impl SvmModel {
    /// Per-class decision scores w.x + b (after the model's configured
    /// normalization).
    pub fn scores(&self, descriptor: &[f32]) -> Result<Vec<f64>> {
        if descriptor.len() != self.dim {
            return Err(Error::dim(format!(
                "descriptor length {} does not match model dimension {}",
                descriptor.len(),
                self.dim
            )));
        }
        let x = if self.normalize {
            l2_normalize(descriptor)
        } else {
            descriptor.to_vec()
        };
        Ok(self
            .weights
            .iter()
            .zip(&self.biases)
            .map(|(w, &b)| dot(w, &x) + b as f64)
            .collect())
    }

    /// Argmax class; ties break to the smallest index.
    pub fn predict(&self, descriptor: &[f32]) -> Result<(usize, Vec<f64>)> {
        let scores = self.scores(descriptor)?;
        let mut best = 0usize;
        for (i, &s) in scores.iter().enumerate() {
            if s > scores[best] {
                best = i;
            }
        }
        Ok((best, scores))
    }
}

/// Mean accuracy and K x K confusion counts (rows = true class).
pub fn evaluate(
    model: &SvmModel,
    descriptors: &[Vec<f32>],
    labels: &[usize],
) -> Result<(f64, Vec<Vec<usize>>)> {
    if descriptors.is_empty() {
        return Err(Error::EmptyInput("empty test set".into()));
    }
    if descriptors.len() != labels.len() {
        return Err(Error::Label("test labels do not match descriptors".into()));
    }
    let k = model.weights.len();
    let mut confusion = vec![vec![0usize; k]; k];
    let mut correct = 0usize;
    for (d, &l) in descriptors.iter().zip(labels) {
        if l >= k {
            return Err(Error::Label(format!("label {} out of range", l)));
        }
        let (pred, _) = model.predict(d)?;
        confusion[l][pred] += 1;
        if pred == l {
            correct += 1;
        }
    }
    Ok((correct as f64 / labels.len() as f64, confusion))
}

pub fn write_confusion_csv(path: &Path, confusion: &[Vec<usize>]) -> Result<()> {
    let mut out = String::new();
    for row in confusion {
        let cells: Vec<String> = row.iter().map(|v| v.to_string()).collect();
        out.push_str(&cells.join(","));
        out.push('\n');
    }
    std::fs::write(path, out)?;
    Ok(())
}

const SVM_MAGIC: &[u8; 4] = b"S2SV";
const SVM_VERSION: u32 = 1;

#[derive(Serialize, Deserialize)]
struct SvmHeader {
    classes: usize,
    dim: usize,
    c: f64,
    normalize: bool,
}

/// Same container layout as network models: magic, version,
/// length-prefixed JSON header, then per class the weight vector and
/// bias as little-endian f32.
pub fn save_svm(path: &Path, model: &SvmModel) -> Result<()> {
    let header = serde_json::to_vec(&SvmHeader {
        classes: model.weights.len(),
        dim: model.dim,
        c: model.c,
        normalize: model.normalize,
    })
    .map_err(|e| Error::format(0, e.to_string()))?;
    let mut buf = Vec::new();
    buf.extend_from_slice(SVM_MAGIC);
    buf.extend_from_slice(&SVM_VERSION.to_le_bytes());
    buf.extend_from_slice(&(header.len() as u32).to_le_bytes());
    buf.extend_from_slice(&header);
    for (w, &b) in model.weights.iter().zip(&model.biases) {
        for v in w {
            buf.extend_from_slice(&v.to_le_bytes());
        }
        buf.extend_from_slice(&b.to_le_bytes());
    }
    let tmp = path.with_extension("tmp");
    {
        let mut f = std::fs::File::create(&tmp)?;
        f.write_all(&buf)?;
        f.sync_all()?;
    }
    std::fs::rename(&tmp, path)?;
    Ok(())
}

pub fn load_svm(path: &Path) -> Result<SvmModel> {
    let mut buf = Vec::new();
    std::fs::File::open(path)?.read_to_end(&mut buf)?;
    if buf.len() < 12 {
        return Err(Error::format(buf.len(), "file truncated before header"));
    }
    if &buf[0..4] != SVM_MAGIC {
        return Err(Error::format(0, "bad magic; not an svm model file"));
    }
    let version = u32::from_le_bytes(buf[4..8].try_into().unwrap());
    if version != SVM_VERSION {
        return Err(Error::format(4, format!("unsupported svm version {}", version)));
    }
    let hlen = u32::from_le_bytes(buf[8..12].try_into().unwrap()) as usize;
    if buf.len() < 12 + hlen {
        return Err(Error::format(buf.len(), "file truncated inside header"));
    }
    let header: SvmHeader = serde_json::from_slice(&buf[12..12 + hlen])
        .map_err(|e| Error::format(12, format!("bad header: {}", e)))?;
    let body = &buf[12 + hlen..];
    let expected = header.classes * (header.dim + 1) * 4;
    if body.len() != expected {
        return Err(Error::format(
            12 + hlen,
            format!("weight blob is {} bytes, expected {}", body.len(), expected),
        ));
    }
    let mut weights = Vec::with_capacity(header.classes);
    let mut biases = Vec::with_capacity(header.classes);
    for c in 0..header.classes {
        let off = c * (header.dim + 1) * 4;
        let row: Vec<f32> = body[off..off + header.dim * 4]
            .chunks_exact(4)
            .map(|b| f32::from_le_bytes(b.try_into().unwrap()))
            .collect();
        weights.push(row);
        biases.push(f32::from_le_bytes(
            body[off + header.dim * 4..off + (header.dim + 1) * 4]
                .try_into()
                .unwrap(),
        ));
    }
    Ok(SvmModel {
        weights,
        biases,
        c: header.c,
        normalize: header.normalize,
        dim: header.dim,
    })
}
