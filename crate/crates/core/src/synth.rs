//! Deterministic synthetic "glyph-world" scenes: each class is a fixed
//! multiset of glyphs, drawn at random scales and intensities under a
//! per-class quadrant layout prior. The layout-stress split keeps the
//! glyph content but permutes the quadrants, so only layout changes.

use crate::error::{Error, Result};
use crate::image::{load_image, save_image, Image};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};
use std::io::Write;
use std::path::Path;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub enum Glyph {
    Disk,
    Square,
    Cross,
    Triangle,
    Ring,
}

impl Glyph {
    /// Membership test for the unit glyph: offsets relative to the
    /// centre, `half` = size/2.
    fn covers(self, dy: f64, dx: f64, half: f64) -> bool {
        match self {
            Glyph::Disk => dy * dy + dx * dx <= half * half,
            Glyph::Square => dy.abs() <= half && dx.abs() <= half,
            Glyph::Cross => {
                let arm = (half / 3.0).max(1.0);
                (dx.abs() <= arm && dy.abs() <= half) || (dy.abs() <= arm && dx.abs() <= half)
            }
            Glyph::Triangle => {
                dy.abs() <= half && dx.abs() <= (dy + half) / 2.0
            }
            Glyph::Ring => {
                let r2 = dy * dy + dx * dx;
                let inner = (half - (half / 3.0).max(2.0)).max(0.0);
                r2 <= half * half && r2 >= inner * inner
            }
        }
    }
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct SynthClass {
    pub name: String,
    pub glyphs: Vec<Glyph>,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(default)]
pub struct SynthConfig {
    pub canvas: usize,
    pub classes: Vec<SynthClass>,
    pub instances_per_class: usize,
    pub scale_range: (f64, f64),
    pub base_size: f64,
    pub intensity_range: (f64, f64),
    pub noise_std: f64,
    pub seed: u64,
}

impl Default for SynthConfig {
    fn default() -> Self {
        let cls = |name: &str, glyphs: &[Glyph]| SynthClass {
            name: name.to_string(),
            glyphs: glyphs.to_vec(),
        };
        SynthConfig {
            canvas: 96,
            classes: vec![
                cls("atrium", &[Glyph::Disk, Glyph::Square, Glyph::Cross]),
                cls("foyer", &[Glyph::Disk, Glyph::Square, Glyph::Ring]),
                cls("stairwell", &[Glyph::Triangle, Glyph::Cross, Glyph::Ring]),
                cls("closet", &[Glyph::Triangle, Glyph::Disk, Glyph::Disk]),
            ],
            instances_per_class: 50,
            scale_range: (0.5, 1.0),
            base_size: 24.0,
            intensity_range: (0.4, 1.0),
            noise_std: 0.05,
            seed: 0,
        }
    }
}

impl SynthConfig {
    pub fn validate(&self) -> Result<()> {
        if self.canvas < 8 {
            return Err(Error::Config("canvas too small".into()));
        }
        if self.classes.len() < 2 {
            return Err(Error::Config("need at least two classes".into()));
        }
        if self.classes.iter().any(|c| c.glyphs.is_empty()) {
            return Err(Error::Config("every class needs at least one glyph".into()));
        }
        let mut multisets: Vec<Vec<Glyph>> = self
            .classes
            .iter()
            .map(|c| {
                let mut g = c.glyphs.clone();
                g.sort();
                g
            })
            .collect();
        multisets.sort();
        multisets.dedup();
        if multisets.len() != self.classes.len() {
            return Err(Error::Config(
                "class glyph multisets must be pairwise distinct".into(),
            ));
        }
        if !(self.scale_range.0 <= self.scale_range.1 && self.scale_range.0 > 0.0) {
            return Err(Error::Config("invalid scale range".into()));
        }
        Ok(())
    }
}

/// Layout prior for glyph placement.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum Layout {
    /// Glyph g of class c drawn inside quadrant (c + g) mod 4.
    Standard,
    /// Same content, diagonally opposite quadrants: tests layout
    /// robustness with unchanged appearance statistics.
    Stress,
}

fn quadrant(class: usize, glyph_idx: usize, layout: Layout) -> usize {
    let q = (class + glyph_idx) % 4;
    match layout {
        Layout::Standard => q,
        Layout::Stress => q ^ 3, // diagonal swap: 0<->3, 1<->2
    }
}

/// Axis-aligned placement with centre and half-extent.
#[derive(Debug, Clone, Copy)]
struct Placement {
    cy: f64,
    cx: f64,
    half: f64,
}

fn boxes_overlap(a: &Placement, b: &Placement) -> bool {
    (a.cy - b.cy).abs() <= a.half + b.half && (a.cx - b.cx).abs() <= a.half + b.half
}

/// Labeled image collection with class names.
#[derive(Debug, Clone)]
pub struct SceneDataset {
    pub images: Vec<Image>,
    pub labels: Vec<usize>,
    pub class_names: Vec<String>,
}

impl SceneDataset {
    pub fn len(&self) -> usize {
        self.images.len()
    }

    pub fn is_empty(&self) -> bool {
        self.images.is_empty()
    }
}

fn render_scene(
    cfg: &SynthConfig,
    class: usize,
    layout: Layout,
    rng: &mut ChaCha8Rng,
) -> Result<Image> {
    let n = cfg.canvas;
    let noise = Normal::new(0.0, cfg.noise_std).map_err(|e| Error::Config(e.to_string()))?;
    let mut canvas = vec![0.0f64; n * n];
    for v in canvas.iter_mut() {
        *v = noise.sample(rng).max(0.0);
    }
    let mut placed: Vec<Placement> = Vec::new();
    let half_canvas = n as f64 / 2.0;
    for (gi, &glyph) in cfg.classes[class].glyphs.iter().enumerate() {
        let q = quadrant(class, gi, layout);
        let (qy, qx) = ((q / 2) as f64 * half_canvas, (q % 2) as f64 * half_canvas);
        let scale = rng.random_range(cfg.scale_range.0..=cfg.scale_range.1);
        let intensity = rng.random_range(cfg.intensity_range.0..=cfg.intensity_range.1);
        let half = cfg.base_size * scale / 2.0;
        let lo = half;
        let hi = half_canvas - half;
        if hi <= lo {
            return Err(Error::Generation(
                "glyph larger than its quadrant; use a smaller scale range".into(),
            ));
        }
        let mut ok = None;
        for _ in 0..100 {
            let p = Placement {
                cy: qy + rng.random_range(lo..hi),
                cx: qx + rng.random_range(lo..hi),
                half,
            };
            if placed.iter().all(|o| !boxes_overlap(&p, o)) {
                ok = Some(p);
                break;
            }
        }
        let p = ok.ok_or_else(|| {
            Error::Generation(
                "could not place glyph without overlap after 100 attempts; \
                 use a smaller scale range"
                    .into(),
            )
        })?;
        placed.push(p);
        let y0 = (p.cy - p.half).floor().max(0.0) as usize;
        let y1 = ((p.cy + p.half).ceil() as usize).min(n - 1);
        let x0 = (p.cx - p.half).floor().max(0.0) as usize;
        let x1 = ((p.cx + p.half).ceil() as usize).min(n - 1);
        for i in y0..=y1 {
            for j in x0..=x1 {
                let dy = i as f64 + 0.5 - p.cy;
                let dx = j as f64 + 0.5 - p.cx;
                if glyph.covers(dy, dx, p.half) {
                    let c = &mut canvas[i * n + j];
                    *c = c.max(intensity);
                }
            }
        }
    }
    let mut img = Image::new(n, n, 1)?;
    for (dst, &v) in img.data.iter_mut().zip(&canvas) {
        *dst = (v.clamp(0.0, 1.0) * 255.0).round() as u8;
    }
    Ok(img)
}

/// Generate one split. Deterministic: image k of the split uses the
/// sub-seed `base_seed ^ k`, so ordering and parallelism cannot change
/// the output.
pub fn generate_split(cfg: &SynthConfig, layout: Layout, base_seed: u64) -> Result<SceneDataset> {
    cfg.validate()?;
    let total = cfg.classes.len() * cfg.instances_per_class;
    let results: Vec<Result<Image>> = {
        use rayon::prelude::*;
        (0..total)
            .into_par_iter()
            .map(|k| {
                let class = k / cfg.instances_per_class;
                let mut rng = ChaCha8Rng::seed_from_u64(base_seed ^ (k as u64));
                render_scene(cfg, class, layout, &mut rng)
            })
            .collect()
    };
    let mut images = Vec::with_capacity(total);
    let mut labels = Vec::with_capacity(total);
    for (k, r) in results.into_iter().enumerate() {
        images.push(r?);
        labels.push(k / cfg.instances_per_class);
    }
    Ok(SceneDataset {
        images,
        labels,
        class_names: cfg.classes.iter().map(|c| c.name.clone()).collect(),
    })
}

/// Standard-layout train split plus a layout-stress test split.
pub fn generate_dataset(
    cfg: &SynthConfig,
    test_instances_per_class: usize,
    stress_test: bool,
) -> Result<(SceneDataset, SceneDataset)> {
    let train = generate_split(cfg, Layout::Standard, cfg.seed)?;
    let test_cfg = SynthConfig {
        instances_per_class: test_instances_per_class,
        ..cfg.clone()
    };
    let layout = if stress_test {
        Layout::Stress
    } else {
        Layout::Standard
    };
    // distinct seed stream for the test split
    let test = generate_split(&test_cfg, layout, cfg.seed ^ 0x9e37_79b9_7f4a_7c15)?;
    Ok((train, test))
}

/// Write `root/class_name/img_NNNN.pgm` plus a manifest of
/// `relative_path<TAB>class_index` lines.
pub fn save_dataset(root: &Path, ds: &SceneDataset) -> Result<()> {
    std::fs::create_dir_all(root)?;
    let mut manifest = std::fs::File::create(root.join("manifest.tsv"))?;
    let mut per_class = vec![0usize; ds.class_names.len()];
    for (img, &label) in ds.images.iter().zip(&ds.labels) {
        let name = &ds.class_names[label];
        let dir = root.join(name);
        std::fs::create_dir_all(&dir)?;
        let file = format!("img_{:04}.pgm", per_class[label]);
        per_class[label] += 1;
        save_image(&dir.join(&file), img)?;
        writeln!(manifest, "{}/{}\t{}", name, file, label)?;
    }
    Ok(())
}

/// Load a dataset from the directory layout; labels come from the
/// sorted class directory names.
pub fn load_dataset(root: &Path) -> Result<SceneDataset> {
    let mut class_names: Vec<String> = std::fs::read_dir(root)?
        .filter_map(|e| e.ok())
        .filter(|e| e.path().is_dir())
        .map(|e| e.file_name().to_string_lossy().into_owned())
        .collect();
    class_names.sort();
    if class_names.is_empty() {
        return Err(Error::EmptyInput(format!(
            "no class directories under {}",
            root.display()
        )));
    }
    let mut images = Vec::new();
    let mut labels = Vec::new();
    for (label, name) in class_names.iter().enumerate() {
        let mut files: Vec<_> = std::fs::read_dir(root.join(name))?
            .filter_map(|e| e.ok())
            .map(|e| e.path())
            .filter(|p| {
                matches!(
                    p.extension().and_then(|e| e.to_str()),
                    Some("pgm") | Some("ppm")
                )
            })
            .collect();
        files.sort();
        for f in files {
            images.push(load_image(&f)?.to_grayscale());
            labels.push(label);
        }
    }
    if images.is_empty() {
        return Err(Error::EmptyInput("dataset has no images".into()));
    }
    Ok(SceneDataset {
        images,
        labels,
        class_names,
    })
}
