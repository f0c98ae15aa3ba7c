//! Patch-grid masks (blockwise and uniformly random) and mask-token
//! substitution into a patch-token sequence.
//!
//! The grid has `⌊h/m_s⌋ × ⌊w/m_s⌋` cells; all block arithmetic is in cells.

use rand::seq::index::sample;
use rand::Rng;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::seeds;
use crate::tensor::{GradFn, Tensor, TensorError};

/// Smallest block area in cells.
pub const S_MIN: usize = 4;
const MAX_BLOCKS: usize = 100_000;

#[derive(Debug, Error)]
pub enum MaskError {
    #[error("invalid mask config: {0}")]
    Config(String),
    #[error("mask grid {gh}x{gw} cannot hold a block of {S_MIN} cells")]
    Unsatisfiable { gh: usize, gw: usize },
    #[error(transparent)]
    Tensor(#[from] TensorError),
}

pub type Result<T> = std::result::Result<T, MaskError>;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum MaskStrategy {
    #[default]
    Blockwise,
    Random,
}

impl MaskStrategy {
    pub fn as_str(self) -> &'static str {
        match self {
            MaskStrategy::Blockwise => "blockwise",
            MaskStrategy::Random => "random",
        }
    }
}

impl std::str::FromStr for MaskStrategy {
    type Err = String;
    fn from_str(s: &str) -> std::result::Result<Self, String> {
        match s {
            "blockwise" => Ok(MaskStrategy::Blockwise),
            "random" => Ok(MaskStrategy::Random),
            _ => Err(format!("unknown mask strategy `{s}` (blockwise, random)")),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct MaskConfig {
    /// pixels per mask-cell edge
    pub size: usize,
    pub ratio: f64,
    pub aspect: f64,
    pub seed: u64,
}

impl Default for MaskConfig {
    /// Toy scale: one cell per 8-pixel patch, 25% ratio, aspect 0.3.
    fn default() -> Self {
        MaskConfig {
            size: 8,
            ratio: 0.25,
            aspect: 0.3,
            seed: 0,
        }
    }
}

impl MaskConfig {
    pub fn validate(&self) -> Result<()> {
        if self.size == 0 {
            return Err(MaskError::Config("mask size must be positive".into()));
        }
        if !(self.ratio > 0.0 && self.ratio < 1.0) {
            return Err(MaskError::Config(format!("mask ratio {} not in (0, 1)", self.ratio)));
        }
        if !(self.aspect > 0.0 && self.aspect < 1.0) {
            return Err(MaskError::Config(format!("aspect {} not in (0, 1)", self.aspect)));
        }
        Ok(())
    }

    pub fn with_seed(mut self, seed: u64) -> Self {
        self.seed = seed;
        self
    }

    fn grid_dims(&self, h: usize, w: usize) -> Result<(usize, usize)> {
        self.validate()?;
        let (gh, gw) = (h / self.size, w / self.size);
        if gh == 0 || gw == 0 {
            return Err(MaskError::Config(format!(
                "mask size {} exceeds image {h}x{w}",
                self.size
            )));
        }
        Ok((gh, gw))
    }
}

/// One rectangle placed by the blockwise generator.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Block {
    pub top: usize,
    pub left: usize,
    pub height: usize,
    pub width: usize,
    /// sampled area target in cells
    pub area: f64,
    /// sampled aspect ratio before rounding
    pub aspect: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MaskGrid {
    pub gh: usize,
    pub gw: usize,
    /// row-major, true = masked
    pub cells: Vec<bool>,
    pub achieved_ratio: f64,
    pub blocks: Vec<Block>,
}

impl MaskGrid {
    pub fn empty(gh: usize, gw: usize) -> Self {
        MaskGrid {
            gh,
            gw,
            cells: vec![false; gh * gw],
            achieved_ratio: 0.0,
            blocks: Vec::new(),
        }
    }

    pub fn full(gh: usize, gw: usize) -> Self {
        MaskGrid {
            cells: vec![true; gh * gw],
            achieved_ratio: 1.0,
            ..MaskGrid::empty(gh, gw)
        }
    }

    fn from_cells(gh: usize, gw: usize, cells: Vec<bool>, blocks: Vec<Block>) -> Self {
        let count = cells.iter().filter(|&&c| c).count();
        MaskGrid {
            gh,
            gw,
            achieved_ratio: count as f64 / (gh * gw) as f64,
            cells,
            blocks,
        }
    }

    pub fn count(&self) -> usize {
        self.cells.iter().filter(|&&c| c).count()
    }

    pub fn at(&self, row: usize, col: usize) -> bool {
        self.cells[row * self.gw + col]
    }

    /// Repeat every cell over a `factor × factor` block, e.g. to move a mask
    /// drawn on 2×-patch cells onto the transformer patch grid.
    pub fn repeat(&self, factor: usize) -> MaskGrid {
        let (gh, gw) = (self.gh * factor, self.gw * factor);
        let cells = (0..gh * gw)
            .map(|i| self.at((i / gw) / factor, (i % gw) / factor))
            .collect();
        MaskGrid::from_cells(gh, gw, cells, self.blocks.clone())
    }

    /// Per-pixel flags of an `h × w` image whose cells are `cell_px` wide.
    /// Pixels beyond the last whole cell are never masked.
    pub fn pixel_mask(&self, h: usize, w: usize, cell_px: usize) -> Vec<bool> {
        let mut out = vec![false; h * w];
        for y in 0..h {
            let r = y / cell_px;
            if r >= self.gh {
                continue;
            }
            for x in 0..w {
                let c = x / cell_px;
                if c < self.gw {
                    out[y * w + x] = self.at(r, c);
                }
            }
        }
        out
    }

    /// Plain-text PGM (P2) rendering, `scale` pixels per cell.
    pub fn to_pgm(&self, scale: usize) -> String {
        let (h, w) = (self.gh * scale, self.gw * scale);
        let mut s = format!("P2\n{w} {h}\n255\n");
        for y in 0..h {
            let row: Vec<&str> = (0..w)
                .map(|x| if self.at(y / scale, x / scale) { "0" } else { "255" })
                .collect();
            s.push_str(&row.join(" "));
            s.push('\n');
        }
        s
    }
}

/// Union random rectangles of cells until the masked fraction reaches
/// `cfg.ratio`.
pub fn blockwise_mask(cfg: &MaskConfig, h: usize, w: usize) -> Result<MaskGrid> {
    let (gh, gw) = cfg.grid_dims(h, w)?;
    blockwise_on_grid(cfg, gh, gw)
}

pub fn blockwise_on_grid(cfg: &MaskConfig, gh: usize, gw: usize) -> Result<MaskGrid> {
    cfg.validate()?;
    let n = gh * gw;
    if n < S_MIN {
        return Err(MaskError::Unsatisfiable { gh, gw });
    }
    let target = (cfg.ratio * n as f64).max(1.0);
    let mut rng = seeds::rng(cfg.seed);
    let mut cells = vec![false; n];
    let mut count = 0usize;
    let mut blocks = Vec::new();
    loop {
        let budget = target - count as f64;
        let s = if budget >= S_MIN as f64 {
            rng.random_range(S_MIN as f64..=budget)
        } else {
            S_MIN as f64
        };
        let r = rng.random_range(cfg.aspect..=1.0 / cfg.aspect);
        let mut bh = ((s * r).sqrt().round() as usize).clamp(1, gh);
        let mut bw = ((s / r).sqrt().round() as usize).clamp(1, gw);
        if bh * bw < S_MIN {
            bw = gw.min(S_MIN.div_ceil(bh));
            if bh * bw < S_MIN {
                bh = gh.min(S_MIN.div_ceil(bw));
            }
        }
        let top = rng.random_range(0..=gh - bh);
        let left = rng.random_range(0..=gw - bw);
        for y in top..top + bh {
            for x in left..left + bw {
                let c = &mut cells[y * gw + x];
                if !*c {
                    *c = true;
                    count += 1;
                }
            }
        }
        blocks.push(Block {
            top,
            left,
            height: bh,
            width: bw,
            area: s,
            aspect: r,
        });
        if count as f64 >= target {
            break;
        }
        if blocks.len() >= MAX_BLOCKS {
            return Err(MaskError::Unsatisfiable { gh, gw });
        }
    }
    Ok(MaskGrid::from_cells(gh, gw, cells, blocks))
}

/// Exactly `max(1, round(ratio·n))` cells chosen uniformly without
/// replacement.
pub fn random_mask(cfg: &MaskConfig, h: usize, w: usize) -> Result<MaskGrid> {
    let (gh, gw) = cfg.grid_dims(h, w)?;
    random_on_grid(cfg, gh, gw)
}

pub fn random_on_grid(cfg: &MaskConfig, gh: usize, gw: usize) -> Result<MaskGrid> {
    cfg.validate()?;
    let n = gh * gw;
    let k = ((cfg.ratio * n as f64).round() as usize).clamp(1, n);
    let mut rng = seeds::rng(cfg.seed);
    let mut cells = vec![false; n];
    for i in sample(&mut rng, n, k) {
        cells[i] = true;
    }
    Ok(MaskGrid::from_cells(gh, gw, cells, Vec::new()))
}

pub fn generate(strategy: MaskStrategy, cfg: &MaskConfig, h: usize, w: usize) -> Result<MaskGrid> {
    match strategy {
        MaskStrategy::Blockwise => blockwise_mask(cfg, h, w),
        MaskStrategy::Random => random_mask(cfg, h, w),
    }
}

/// Masks for a batch on the transformer patch grid. `patch_edge` must divide
/// `cfg.size`; each mask cell then covers `(size/patch_edge)²` patches.
/// Item `i` uses seed `cfg.seed ^ i`.
pub fn batch_masks(
    strategy: MaskStrategy,
    cfg: &MaskConfig,
    h: usize,
    w: usize,
    patch_edge: usize,
    batch: usize,
) -> Result<Vec<MaskGrid>> {
    if !cfg.size.is_multiple_of(patch_edge) {
        return Err(MaskError::Config(format!(
            "mask size {} is not a multiple of patch edge {patch_edge}",
            cfg.size
        )));
    }
    let factor = cfg.size / patch_edge;
    (0..batch)
        .map(|i| {
            let m = generate(strategy, &cfg.with_seed(cfg.seed ^ i as u64), h, w)?;
            Ok(if factor == 1 { m } else { m.repeat(factor) })
        })
        .collect()
}

struct MaskSelectFn {
    tokens: Tensor,
    mask_token: Tensor,
    masked: Vec<bool>,
    per_position: bool,
}

impl GradFn for MaskSelectFn {
    fn name(&self) -> &'static str {
        "apply_mask"
    }

    fn inputs(&self) -> Vec<&Tensor> {
        vec![&self.tokens, &self.mask_token]
    }

    fn backward(&self, _out: &[f64], g: &[f64]) -> Vec<Option<Vec<f64>>> {
        let s = self.tokens.shape();
        let (n, w) = (s[1], s[2]);
        let mut gt = vec![0.0; g.len()];
        let mut gm = vec![0.0; self.mask_token.numel()];
        for (row, &m) in self.masked.iter().enumerate() {
            let src = &g[row * w..(row + 1) * w];
            if m {
                let off = if self.per_position { (row % n) * w } else { 0 };
                for (d, v) in gm[off..off + w].iter_mut().zip(src) {
                    *d += v;
                }
            } else {
                gt[row * w..(row + 1) * w].copy_from_slice(src);
            }
        }
        vec![Some(gt), Some(gm)]
    }
}

/// Replace masked rows of `tokens` `[B, N, W]` with the mask embedding,
/// either one shared `[W]` vector or per-position `[N, W]`.
pub fn apply_mask(tokens: &Tensor, masks: &[MaskGrid], mask_token: &Tensor) -> Result<Tensor> {
    let s = tokens.shape();
    if s.len() != 3 || masks.len() != s[0] {
        return Err(TensorError::ShapeMismatch {
            op: "apply_mask",
            lhs: s.to_vec(),
            rhs: vec![masks.len()],
        }
        .into());
    }
    let (n, w) = (s[1], s[2]);
    if let Some(m) = masks.iter().find(|m| m.cells.len() != n) {
        return Err(TensorError::ShapeMismatch {
            op: "apply_mask",
            lhs: s.to_vec(),
            rhs: vec![m.gh, m.gw],
        }
        .into());
    }
    let per_position = match mask_token.shape() {
        [x] if *x == w => false,
        [a, b] if *a == n && *b == w => true,
        other => {
            return Err(TensorError::ShapeMismatch {
                op: "apply_mask token",
                lhs: other.to_vec(),
                rhs: vec![n, w],
            }
            .into())
        }
    };
    let masked: Vec<bool> = masks.iter().flat_map(|m| m.cells.iter().copied()).collect();
    let src = tokens.data();
    let emb = mask_token.data();
    let mut out = src.to_vec();
    for (row, &m) in masked.iter().enumerate() {
        if m {
            let off = if per_position { (row % n) * w } else { 0 };
            out[row * w..(row + 1) * w].copy_from_slice(&emb[off..off + w]);
        }
    }
    Ok(Tensor::from_op(
        out,
        s.to_vec(),
        MaskSelectFn {
            tokens: tokens.clone(),
            mask_token: mask_token.clone(),
            masked,
            per_position,
        },
    ))
}
