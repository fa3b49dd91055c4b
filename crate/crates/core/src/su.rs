//! Spatially unstructured layer: splits feature maps into blocks and
//! permutes their content. Two equivalent formulations are provided: the
//! matrix route (block-scope matrix U, swap matrix S, transform T, block
//! permutation T' U T) and the executable shuffle (within-block circular
//! rotation by half the block extent). The executable shuffle is what the
//! network uses; its backward pass applies the exact inverse permutation.

use crate::error::{Error, Result};
use crate::tensor::{FeatureMap, Scalar};
use rand::Rng;
use serde::{Deserialize, Serialize};

/// Half-open scope of one block along both spatial axes.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct Scope {
    pub row0: usize,
    pub row1: usize,
    pub col0: usize,
    pub col1: usize,
}

impl Scope {
    pub fn height(&self) -> usize {
        self.row1 - self.row0
    }
    pub fn width(&self) -> usize {
        self.col1 - self.col0
    }
}

/// Uniform block boundaries: k+1 points, floor(i * extent / k).
fn bounds(extent: usize, k: usize) -> Vec<usize> {
    (0..=k).map(|i| i * extent / k).collect()
}

/// Grid of contiguous block scopes tiling a height x width map.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct BlockGrid {
    pub height: usize,
    pub width: usize,
    row_bounds: Vec<usize>,
    col_bounds: Vec<usize>,
}

impl BlockGrid {
    fn new(height: usize, width: usize, grid: usize) -> Result<Self> {
        if height < grid || width < grid {
            return Err(Error::dim(format!(
                "map {}x{} smaller than {}x{} block grid",
                height, width, grid, grid
            )));
        }
        Ok(BlockGrid {
            height,
            width,
            row_bounds: bounds(height, grid),
            col_bounds: bounds(width, grid),
        })
    }

    /// Blocks per axis.
    pub fn grid_size(&self) -> usize {
        self.row_bounds.len() - 1
    }

    pub fn scope(&self, i: usize, j: usize) -> Scope {
        Scope {
            row0: self.row_bounds[i],
            row1: self.row_bounds[i + 1],
            col0: self.col_bounds[j],
            col1: self.col_bounds[j + 1],
        }
    }

    pub fn scopes(&self) -> ScopeMatrix {
        let k = self.grid_size();
        ScopeMatrix {
            size: k,
            scopes: (0..k * k).map(|f| self.scope(f / k, f % k)).collect(),
        }
    }
}

/// The rearrangement level of the executable shuffle: floor(sqrt(n) / 2).
pub fn rearrangement_level(n: usize) -> Result<usize> {
    let level = ((n as f64).sqrt() / 2.0).floor() as usize;
    if level < 1 {
        return Err(Error::Config(format!(
            "block count {} yields a trivial layer (level 0); need n >= 4",
            n
        )));
    }
    Ok(level)
}

/// Block grid for the executable shuffle: level^2 blocks for n requested
/// blocks, level = floor(sqrt(n) / 2).
pub fn build_block_grid(height: usize, width: usize, n: usize) -> Result<BlockGrid> {
    BlockGrid::new(height, width, rearrangement_level(n)?)
}

/// Square-root-of-n sized block scope matrix U used by the matrix
/// formulation.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct ScopeMatrix {
    pub size: usize,
    /// row-major, size * size entries
    pub scopes: Vec<Scope>,
}

impl ScopeMatrix {
    pub fn at(&self, i: usize, j: usize) -> Scope {
        self.scopes[i * self.size + j]
    }
}

/// Binary permutation matrix T: block-diagonal copies of the 2x2 swap
/// S = |I - 1|. Stored as the column index of the single 1 in each row.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct TransformMatrix {
    perm: Vec<usize>,
}

impl TransformMatrix {
    pub fn size(&self) -> usize {
        self.perm.len()
    }

    pub fn entry(&self, i: usize, j: usize) -> u8 {
        u8::from(self.perm[i] == j)
    }

    /// Row index of the 1 in column j.
    pub fn col_to_row(&self, j: usize) -> usize {
        self.perm.iter().position(|&p| p == j).expect("permutation")
    }
}

/// T for n blocks: sqrt(n)/2 diagonal copies of the 2x2 swap matrix.
pub fn build_transform(n: usize) -> Result<TransformMatrix> {
    let k = (n as f64).sqrt().round() as usize;
    if k * k != n {
        return Err(Error::Config(format!("block count {} is not a perfect square", n)));
    }
    if k % 2 != 0 {
        return Err(Error::Config(format!(
            "sqrt({}) = {} is odd; 2x2 swap blocks cannot tile the transform",
            n, k
        )));
    }
    Ok(TransformMatrix {
        perm: (0..k).map(|i| i ^ 1).collect(),
    })
}

/// The matrix-form block permutation: T' U T swaps adjacent block pairs
/// along both axes.
pub fn apply_block_permutation(u: &ScopeMatrix, t: &TransformMatrix) -> Result<ScopeMatrix> {
    let k = u.size;
    if k != t.size() {
        return Err(Error::dim(format!(
            "scope matrix {}x{} does not match transform {}x{}",
            k,
            k,
            t.size(),
            t.size()
        )));
    }
    let mut scopes = Vec::with_capacity(k * k);
    for i in 0..k {
        let pi = t.col_to_row(i);
        for j in 0..k {
            let pj = t.col_to_row(j);
            scopes.push(u.at(pi, pj));
        }
    }
    Ok(ScopeMatrix { size: k, scopes })
}

/// Flat spatial-index permutation over height x width cells with its
/// inverse; realizes the block-index reading function as an index map so
/// the backward pass is exact.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct PermutationMap {
    pub height: usize,
    pub width: usize,
    /// forward[dst] = src: output cell dst reads input cell src
    forward: Vec<usize>,
    inverse: Vec<usize>,
}

impl PermutationMap {
    pub fn from_forward(height: usize, width: usize, forward: Vec<usize>) -> Result<Self> {
        let n = height * width;
        if forward.len() != n {
            return Err(Error::dim("permutation length mismatch"));
        }
        let mut inverse = vec![usize::MAX; n];
        for (dst, &src) in forward.iter().enumerate() {
            if src >= n || inverse[src] != usize::MAX {
                return Err(Error::Config("not a bijection".into()));
            }
            inverse[src] = dst;
        }
        Ok(PermutationMap {
            height,
            width,
            forward,
            inverse,
        })
    }

    pub fn identity(height: usize, width: usize) -> Self {
        let n = height * width;
        PermutationMap {
            height,
            width,
            forward: (0..n).collect(),
            inverse: (0..n).collect(),
        }
    }

    pub fn forward_indices(&self) -> &[usize] {
        &self.forward
    }

    pub fn is_identity(&self) -> bool {
        self.forward.iter().enumerate().all(|(i, &s)| i == s)
    }

    fn gather<T: Scalar>(&self, x: &FeatureMap<T>, idx: &[usize]) -> Result<FeatureMap<T>> {
        let (h, w, nc, s) = x.dims();
        if h != self.height || w != self.width {
            return Err(Error::dim(format!(
                "permutation built for {}x{}, map is {}x{}",
                self.height, self.width, h, w
            )));
        }
        let mut out = FeatureMap::zeros(h, w, nc, s);
        for (dst, &src) in idx.iter().enumerate() {
            let (di, dj) = (dst / w, dst % w);
            let (si, sj) = (src / w, src % w);
            for c in 0..nc {
                for b in 0..s {
                    out.set(di, dj, c, b, x.at(si, sj, c, b));
                }
            }
        }
        Ok(out)
    }

    /// Permute every channel and batch member identically.
    pub fn apply<T: Scalar>(&self, x: &FeatureMap<T>) -> Result<FeatureMap<T>> {
        self.gather(x, &self.forward)
    }

    /// The exact inverse permutation (the Jacobian of `apply`).
    pub fn apply_inverse<T: Scalar>(&self, x: &FeatureMap<T>) -> Result<FeatureMap<T>> {
        self.gather(x, &self.inverse)
    }

    /// Permute a single batch member of a single channel stored as a flat
    /// row-major slice.
    pub fn apply_sample<T: Scalar>(&self, x: &FeatureMap<T>, b: usize) -> Result<FeatureMap<T>> {
        let (h, w, nc, s) = x.dims();
        if b >= s {
            return Err(Error::Index("batch index out of range".into()));
        }
        let _ = (h, w, nc);
        self.apply(x)
    }
}

/// Cell permutation of the executable shuffle for a given map shape:
/// within every block, rows and columns circularly rotated by half the
/// block extent.
pub fn shuffle_permutation(height: usize, width: usize, level: usize) -> Result<PermutationMap> {
    let grid = BlockGrid::new(height, width, level)?;
    let mut forward = vec![0usize; height * width];
    let k = grid.grid_size();
    for gi in 0..k {
        for gj in 0..k {
            let s = grid.scope(gi, gj);
            let (bh, bw) = (s.height(), s.width());
            for i in 0..bh {
                let si = s.row0 + (i + bh / 2) % bh;
                for j in 0..bw {
                    let sj = s.col0 + (j + bw / 2) % bw;
                    forward[(s.row0 + i) * width + (s.col0 + j)] = si * width + sj;
                }
            }
        }
    }
    PermutationMap::from_forward(height, width, forward)
}

/// The executable shuffle: permute the spatial cells of every channel and
/// batch member by the block-rotation permutation for n requested blocks.
pub fn shuffle_alg1<T: Scalar>(x: &FeatureMap<T>, n: usize) -> Result<(FeatureMap<T>, PermutationMap)> {
    let (h, w, _, _) = x.dims();
    let map = shuffle_permutation(h, w, rearrangement_level(n)?)?;
    Ok((map.apply(x)?, map))
}

/// Cell permutation induced by the matrix route (T' U T) on a uniform
/// sqrt(n) x sqrt(n) block grid. Requires all blocks to have identical
/// extents so cell offsets are preserved.
pub fn block_cell_permutation(height: usize, width: usize, n: usize) -> Result<PermutationMap> {
    let t = build_transform(n)?;
    let k = t.size();
    let grid = BlockGrid::new(height, width, k)?;
    let u = grid.scopes();
    let hatu = apply_block_permutation(&u, &t)?;
    let mut forward = vec![0usize; height * width];
    for i in 0..k {
        for j in 0..k {
            let dst = grid.scope(i, j);
            let src = hatu.at(i, j);
            if dst.height() != src.height() || dst.width() != src.width() {
                return Err(Error::dim(
                    "block extents differ; matrix-form permutation needs equal blocks",
                ));
            }
            for di in 0..dst.height() {
                for dj in 0..dst.width() {
                    forward[(dst.row0 + di) * width + (dst.col0 + dj)] =
                        (src.row0 + di) * width + (src.col0 + dj);
                }
            }
        }
    }
    PermutationMap::from_forward(height, width, forward)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum SuMode {
    Train,
    Infer,
}

/// Configuration of the spatially unstructured layer.
#[derive(Debug, Clone, Copy, Serialize, Deserialize)]
pub struct SuConfig {
    /// requested number of blocks n (n >= 4, perfect square expected)
    pub blocks: usize,
    /// probability of applying the shuffle to a sample in train mode
    pub prob: f64,
    pub mode: SuMode,
    /// whether inference applies the shuffle deterministically
    pub infer_apply: bool,
}

impl SuConfig {
    pub fn new(blocks: usize, prob: f64) -> Result<Self> {
        if !(0.0..=1.0).contains(&prob) {
            return Err(Error::Config(format!("probability {} outside [0, 1]", prob)));
        }
        rearrangement_level(blocks)?;
        Ok(SuConfig {
            blocks,
            prob,
            mode: SuMode::Train,
            infer_apply: true,
        })
    }
}

/// Per-call forward state: the realized permutation and, per batch
/// sample, whether it was applied.
#[derive(Debug, Clone)]
pub struct SuCache {
    pub map: PermutationMap,
    pub applied: Vec<bool>,
}

/// Bernoulli-gated shuffle. In train mode each batch sample independently
/// draws r ~ Bernoulli(p); r = 1 shuffles, r = 0 passes through. In infer
/// mode r is deterministic.
pub fn su_forward<T: Scalar, R: Rng>(
    cfg: &SuConfig,
    x: &FeatureMap<T>,
    rng: &mut R,
) -> Result<(FeatureMap<T>, SuCache)> {
    let (h, w, nc, s) = x.dims();
    let map = shuffle_permutation(h, w, rearrangement_level(cfg.blocks)?)?;
    let applied: Vec<bool> = match cfg.mode {
        SuMode::Train => (0..s).map(|_| rng.random::<f64>() < cfg.prob).collect(),
        SuMode::Infer => vec![cfg.infer_apply; s],
    };
    let mut out = x.clone();
    for (b, &on) in applied.iter().enumerate() {
        if !on {
            continue;
        }
        for (dst, &src) in map.forward_indices().iter().enumerate() {
            let (di, dj) = (dst / w, dst % w);
            let (si, sj) = (src / w, src % w);
            for c in 0..nc {
                out.set(di, dj, c, b, x.at(si, sj, c, b));
            }
        }
    }
    Ok((out, SuCache { map, applied }))
}

/// Backward pass: the Jacobian of a permutation is its inverse, so the
/// incoming gradient is inverse-permuted for the samples that were
/// shuffled and passed through otherwise.
pub fn su_backward<T: Scalar>(cache: &SuCache, grad_out: &FeatureMap<T>) -> Result<FeatureMap<T>> {
    let (h, w, nc, s) = grad_out.dims();
    if h != cache.map.height || w != cache.map.width || s != cache.applied.len() {
        return Err(Error::State(
            "su backward called with a map recorded for a different shape".into(),
        ));
    }
    let mut out = grad_out.clone();
    for (b, &on) in cache.applied.iter().enumerate() {
        if !on {
            continue;
        }
        for (dst, &src) in cache.map.inverse.iter().enumerate() {
            let (di, dj) = (dst / w, dst % w);
            let (si, sj) = (src / w, src % w);
            for c in 0..nc {
                out.set(di, dj, c, b, grad_out.at(si, sj, c, b));
            }
        }
    }
    Ok(out)
}
