//! Multi-scale pyramid and dense patch extraction. Pyramid levels are
//! targets for the smaller image dimension derived from a configurable
//! base dimension; resizing is bilinear with half-pixel centre
//! alignment.

use crate::error::{Error, Result};
use crate::tensor::{FeatureMap, Scalar};

/// Bilinear resize of a (h, w, c, s) map to (oh, ow). Source coordinates
/// use half-pixel centres, clamped at the borders.
pub fn resize_bilinear<T: Scalar>(x: &FeatureMap<T>, oh: usize, ow: usize) -> Result<FeatureMap<T>> {
    let (h, w, c, s) = x.dims();
    if oh == 0 || ow == 0 {
        return Err(Error::dim("resize target must be non-empty"));
    }
    let mut out = FeatureMap::zeros(oh, ow, c, s);
    let sy = h as f64 / oh as f64;
    let sx = w as f64 / ow as f64;
    for i in 0..oh {
        let fy = ((i as f64 + 0.5) * sy - 0.5).clamp(0.0, (h - 1) as f64);
        let y0 = fy.floor() as usize;
        let y1 = (y0 + 1).min(h - 1);
        let wy = fy - y0 as f64;
        for j in 0..ow {
            let fx = ((j as f64 + 0.5) * sx - 0.5).clamp(0.0, (w - 1) as f64);
            let x0 = fx.floor() as usize;
            let x1 = (x0 + 1).min(w - 1);
            let wx = fx - x0 as f64;
            for k in 0..c {
                for b in 0..s {
                    let a = x.at(y0, x0, k, b).to_f64();
                    let bb = x.at(y0, x1, k, b).to_f64();
                    let cc = x.at(y1, x0, k, b).to_f64();
                    let d = x.at(y1, x1, k, b).to_f64();
                    let top = a * (1.0 - wx) + bb * wx;
                    let bot = cc * (1.0 - wx) + d * wx;
                    out.set(i, j, k, b, T::from_f64(top * (1.0 - wy) + bot * wy));
                }
            }
        }
    }
    Ok(out)
}

pub const DEFAULT_SCALES: [f64; 3] = [0.75, 1.0, 1.25];

/// Resize so the smaller dimension equals `target`, preserving the
/// aspect ratio (the other extent is floored). Resizing to the current
/// size returns a bit-exact copy.
pub fn resize_to_smaller_dim<T: Scalar>(
    x: &FeatureMap<T>,
    target: usize,
) -> Result<FeatureMap<T>> {
    if target == 0 {
        return Err(Error::dim("resize target must be positive"));
    }
    let (h, w, _, _) = x.dims();
    let smaller = h.min(w);
    if smaller == target {
        return Ok(x.clone());
    }
    let f = target as f64 / smaller as f64;
    let (oh, ow) = if h <= w {
        (target, ((w as f64 * f).floor() as usize).max(target))
    } else {
        (((h as f64 * f).floor() as usize).max(target), target)
    };
    resize_bilinear(x, oh, ow)
}

/// The three-level pyramid specification: a base target for the smaller
/// image dimension and the fixed scale factors applied to it.
#[derive(Debug, Clone, serde::Serialize, serde::Deserialize)]
pub struct PyramidSpec {
    pub base_dim: usize,
    pub scales: Vec<f64>,
}

impl Default for PyramidSpec {
    fn default() -> Self {
        PyramidSpec {
            base_dim: 64,
            scales: DEFAULT_SCALES.to_vec(),
        }
    }
}

impl PyramidSpec {
    /// Smaller-dimension targets, floored per level.
    pub fn levels(&self) -> Result<Vec<usize>> {
        if self.scales.is_empty() {
            return Err(Error::EmptyInput("no pyramid scales".into()));
        }
        if self.scales.iter().any(|&f| f <= 0.0) || self.base_dim == 0 {
            return Err(Error::Config(
                "pyramid base and scales must be positive".into(),
            ));
        }
        Ok(self
            .scales
            .iter()
            .map(|f| ((self.base_dim as f64 * f).floor() as usize).max(1))
            .collect())
    }
}

/// Pyramid levels: the image resized so its smaller dimension hits each
/// of the spec's targets.
pub fn build_pyramid<T: Scalar>(
    x: &FeatureMap<T>,
    spec: &PyramidSpec,
) -> Result<Vec<FeatureMap<T>>> {
    spec.levels()?
        .into_iter()
        .map(|t| resize_to_smaller_dim(x, t))
        .collect()
}

/// A dense patch and its top-left grid position on the source image.
#[derive(Debug, Clone)]
pub struct Patch<T: Scalar> {
    pub map: FeatureMap<T>,
    pub row: usize,
    pub col: usize,
}

/// Number of dense positions along one axis.
pub fn patch_count_1d(extent: usize, side: usize, stride: usize) -> usize {
    if extent < side {
        1
    } else {
        (extent - side) / stride + 1
    }
}

/// Dense square patches at the given stride. An image smaller than the
/// patch yields a single edge-replicated patch.
pub fn extract_patches<T: Scalar>(
    x: &FeatureMap<T>,
    side: usize,
    stride: usize,
) -> Result<Vec<Patch<T>>> {
    if side == 0 || stride == 0 {
        return Err(Error::dim("patch side and stride must be positive"));
    }
    let (h, w, c, s) = x.dims();
    if s != 1 {
        return Err(Error::dim("patch extraction expects a single sample"));
    }
    let nr = patch_count_1d(h, side, stride);
    let nc = patch_count_1d(w, side, stride);
    let mut out = Vec::with_capacity(nr * nc);
    for pi in 0..nr {
        for pj in 0..nc {
            let r0 = pi * stride;
            let c0 = pj * stride;
            let mut m = FeatureMap::zeros(side, side, c, 1);
            for i in 0..side {
                let si = (r0 + i).min(h - 1);
                for j in 0..side {
                    let sj = (c0 + j).min(w - 1);
                    for k in 0..c {
                        m.set(i, j, k, 0, x.at(si, sj, k, 0));
                    }
                }
            }
            out.push(Patch {
                map: m,
                row: r0,
                col: c0,
            });
        }
    }
    Ok(out)
}
