//! Image descriptors: dense patches over a three-scale pyramid are fed
//! through the two trained networks; per-patch channel vectors are
//! pooled across patches and scales, and the two networks' vectors are
//! concatenated (plain variant first, shuffle-trained variant second).

use crate::error::{Error, Result};
use crate::image::Image;
use crate::network::Network;
use crate::pyramid::{
    build_pyramid, extract_patches, patch_count_1d, resize_bilinear, resize_to_smaller_dim, Patch,
    PyramidSpec,
};
use crate::svm::SvmModel;
use crate::tensor::{FeatureMap, Scalar};
use std::io::{Read, Write};
use std::path::Path;

#[derive(Debug, Clone, Copy, PartialEq, Eq, serde::Serialize, serde::Deserialize)]
pub enum Pool {
    Max,
    Mean,
}

#[derive(Debug, Clone, serde::Serialize, serde::Deserialize)]
#[serde(default)]
pub struct DescriptorConfig {
    pub patch_size: usize,
    pub stride: usize,
    pub pyramid: bool,
    pub base_dim: usize,
    pub scales: Vec<f64>,
    pub pool: Pool,
}

impl Default for DescriptorConfig {
    fn default() -> Self {
        DescriptorConfig {
            patch_size: 32,
            stride: 8,
            pyramid: true,
            base_dim: 32,
            scales: crate::pyramid::DEFAULT_SCALES.to_vec(),
            pool: Pool::Max,
        }
    }
}

impl DescriptorConfig {
    pub fn pyramid_spec(&self) -> PyramidSpec {
        PyramidSpec {
            base_dim: self.base_dim,
            scales: self.scales.clone(),
        }
    }
}

/// Elementwise pooling across equal-length vectors.
pub fn pool_patches<T: Scalar>(features: &[Vec<T>], pool: Pool) -> Result<Vec<T>> {
    let first = features
        .first()
        .ok_or_else(|| Error::EmptyInput("no patch features to pool".into()))?;
    let len = first.len();
    if features.iter().any(|f| f.len() != len) {
        return Err(Error::dim("patch features have ragged lengths"));
    }
    match pool {
        Pool::Max => {
            let mut out = first.clone();
            for f in &features[1..] {
                for (o, &v) in out.iter_mut().zip(f) {
                    if v > *o {
                        *o = v;
                    }
                }
            }
            Ok(out)
        }
        Pool::Mean => {
            let mut acc = vec![0.0f64; len];
            for f in features {
                for (a, &v) in acc.iter_mut().zip(f) {
                    *a += v.to_f64();
                }
            }
            let n = features.len() as f64;
            Ok(acc.into_iter().map(|a| T::from_f64(a / n)).collect())
        }
    }
}

/// Spatial maximum per channel of a patch's last-conv activation map:
/// the per-patch feature vector of length V = channel count.
fn patch_channel_vector<T: Scalar>(net: &Network<T>, patch: &FeatureMap<T>) -> Result<Vec<T>> {
    let m = net.conv_feature_map(patch)?;
    let (h, w, c, _) = m.dims();
    let mut out = vec![T::neg_infinity(); c];
    for i in 0..h {
        for j in 0..w {
            for k in 0..c {
                let v = m.at(i, j, k, 0);
                if v > out[k] {
                    out[k] = v;
                }
            }
        }
    }
    Ok(out)
}

/// Resize a patch to the network's input extents when they differ.
fn fit_to_input<T: Scalar>(net: &Network<T>, patch: &FeatureMap<T>) -> Result<FeatureMap<T>> {
    let (ih, iw, _) = net.spec().input;
    let (h, w, _, _) = patch.dims();
    if (h, w) == (ih, iw) {
        Ok(patch.clone())
    } else {
        resize_bilinear(patch, ih, iw)
    }
}

/// Per-scale, per-patch channel vectors for one network. Shared by the
/// descriptor variants so ablations reuse the expensive forward passes.
pub fn scale_patch_features<T: Scalar>(
    net: &Network<T>,
    image: &FeatureMap<T>,
    cfg: &DescriptorConfig,
) -> Result<Vec<Vec<Vec<T>>>> {
    let scales: Vec<FeatureMap<T>> = if cfg.pyramid {
        build_pyramid(image, &cfg.pyramid_spec())?
    } else {
        vec![resize_to_smaller_dim(image, cfg.base_dim)?]
    };
    let mut out = Vec::with_capacity(scales.len());
    for s in &scales {
        let patches = extract_patches(s, cfg.patch_size, cfg.stride)?;
        let feats: Vec<Vec<T>> = {
            use rayon::prelude::*;
            patches
                .par_iter()
                .map(|p| patch_channel_vector(net, &fit_to_input(net, &p.map)?))
                .collect::<Result<_>>()?
        };
        out.push(feats);
    }
    Ok(out)
}

/// Pool per-scale patch features into one per-network vector.
pub fn pool_scales<T: Scalar>(per_scale: &[Vec<Vec<T>>], pool: Pool) -> Result<Vec<T>> {
    let scale_vectors: Vec<Vec<T>> = per_scale
        .iter()
        .map(|feats| pool_patches(feats, pool))
        .collect::<Result<_>>()?;
    pool_patches(&scale_vectors, pool)
}

/// One network's pooled vector for an image.
pub fn network_vector<T: Scalar>(
    net: &Network<T>,
    image: &FeatureMap<T>,
    cfg: &DescriptorConfig,
) -> Result<Vec<T>> {
    pool_scales(&scale_patch_features(net, image, cfg)?, cfg.pool)
}

/// The full descriptor: plain-network vector followed by the
/// shuffle-trained network's vector; length 2V. With `net_su` absent
/// the descriptor is the plain half alone (length V).
pub fn describe_image<T: Scalar>(
    net_w: &Network<T>,
    net_su: Option<&Network<T>>,
    image: &FeatureMap<T>,
    cfg: &DescriptorConfig,
) -> Result<Vec<T>> {
    let mut d = network_vector(net_w, image, cfg)?;
    if let Some(su) = net_su {
        d.extend(network_vector(su, image, cfg)?);
    }
    Ok(d)
}

/// Per-patch contribution scores on the base-scale patch grid: the
/// true-class SVM score of a descriptor built from that patch alone.
pub struct ContributionMap {
    pub rows: usize,
    pub cols: usize,
    pub scores: Vec<f64>,
}

pub fn contribution_map(
    net_w: &Network<f32>,
    net_su: Option<&Network<f32>>,
    image: &FeatureMap<f32>,
    cfg: &DescriptorConfig,
    svm: &SvmModel,
    true_class: usize,
) -> Result<ContributionMap> {
    if true_class >= svm.weights.len() {
        return Err(Error::Label(format!("class {} out of range", true_class)));
    }
    let (h, w, _, _) = image.dims();
    let rows = patch_count_1d(h, cfg.patch_size, cfg.stride);
    let cols = patch_count_1d(w, cfg.patch_size, cfg.stride);
    let patches: Vec<Patch<f32>> = extract_patches(image, cfg.patch_size, cfg.stride)?;
    let mut scores = Vec::with_capacity(patches.len());
    for p in &patches {
        let fitted = fit_to_input(net_w, &p.map)?;
        let mut d = patch_channel_vector(net_w, &fitted)?;
        if let Some(su) = net_su {
            d.extend(patch_channel_vector(su, &fit_to_input(su, &p.map)?)?);
        }
        scores.push(svm.scores(&d)?[true_class]);
    }
    Ok(ContributionMap { rows, cols, scores })
}

impl ContributionMap {
    /// Render as a grayscale heat image (min -> 0, max -> 255), one
    /// pixel block per patch-grid cell scaled up by `cell` pixels.
    pub fn to_heat_image(&self, cell: usize) -> Result<Image> {
        if self.scores.is_empty() {
            return Err(Error::EmptyInput("empty contribution map".into()));
        }
        let lo = self.scores.iter().cloned().fold(f64::INFINITY, f64::min);
        let hi = self.scores.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
        let span = if hi > lo { hi - lo } else { 1.0 };
        let mut img = Image::new(self.rows * cell, self.cols * cell, 1)?;
        for r in 0..self.rows {
            for c in 0..self.cols {
                let v = ((self.scores[r * self.cols + c] - lo) / span * 255.0).round() as u8;
                for i in 0..cell {
                    for j in 0..cell {
                        img.set(r * cell + i, c * cell + j, 0, v);
                    }
                }
            }
        }
        Ok(img)
    }
}

const DESC_MAGIC: &[u8; 4] = b"S2FV";

/// Binary descriptor table: magic, u32 count, u32 length, then
/// row-major little-endian f32 values.
pub fn save_descriptors(path: &Path, rows: &[Vec<f32>]) -> Result<()> {
    let len = rows.first().map(|r| r.len()).unwrap_or(0);
    if rows.iter().any(|r| r.len() != len) {
        return Err(Error::dim("descriptor rows have ragged lengths"));
    }
    let mut buf = Vec::with_capacity(12 + rows.len() * len * 4);
    buf.extend_from_slice(DESC_MAGIC);
    buf.extend_from_slice(&(rows.len() as u32).to_le_bytes());
    buf.extend_from_slice(&(len as u32).to_le_bytes());
    for r in rows {
        for v in r {
            buf.extend_from_slice(&v.to_le_bytes());
        }
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

pub fn load_descriptors(path: &Path) -> Result<Vec<Vec<f32>>> {
    let mut buf = Vec::new();
    std::fs::File::open(path)?.read_to_end(&mut buf)?;
    if buf.len() < 12 {
        return Err(Error::format(buf.len(), "file truncated before header"));
    }
    if &buf[0..4] != DESC_MAGIC {
        return Err(Error::format(0, "bad magic; not a descriptor table"));
    }
    let count = u32::from_le_bytes(buf[4..8].try_into().unwrap()) as usize;
    let len = u32::from_le_bytes(buf[8..12].try_into().unwrap()) as usize;
    let body = &buf[12..];
    if body.len() != count * len * 4 {
        return Err(Error::format(
            12,
            format!("table body is {} bytes, expected {}", body.len(), count * len * 4),
        ));
    }
    let mut rows = Vec::with_capacity(count);
    for r in 0..count {
        rows.push(
            body[r * len * 4..(r + 1) * len * 4]
                .chunks_exact(4)
                .map(|b| f32::from_le_bytes(b.try_into().unwrap()))
                .collect(),
        );
    }
    Ok(rows)
}

pub fn write_descriptors_csv(path: &Path, rows: &[Vec<f32>], labels: Option<&[usize]>) -> Result<()> {
    let mut out = String::new();
    for (i, r) in rows.iter().enumerate() {
        if let Some(ls) = labels {
            out.push_str(&ls[i].to_string());
            out.push(',');
        }
        let cells: Vec<String> = r.iter().map(|v| v.to_string()).collect();
        out.push_str(&cells.join(","));
        out.push('\n');
    }
    std::fs::write(path, out)?;
    Ok(())
}
