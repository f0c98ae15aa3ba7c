//! Self-supervised depth objective: SSIM + L1 photometric reconstruction and
//! edge-aware disparity smoothness.
//!
//! Images are `[B, H, W, C]`, per-pixel maps and disparity `[B, H, W]`.

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::geometry::{synthesize_target, GeometryError, Intrinsics, PoseTensor};
use crate::tensor::{GradFn, Tensor, TensorError};

pub const SSIM_C1: f64 = 0.01 * 0.01;
pub const SSIM_C2: f64 = 0.03 * 0.03;

/// Added to the reprojection error of pixels a source cannot see, so the
/// per-pixel minimum picks the other source.
const INVALID_PENALTY: f64 = 1e3;

#[derive(Debug, Error)]
pub enum LossError {
    #[error("no pixel contributes to the photometric loss")]
    EmptyValidity,
    #[error("loss_region = masked_only requires a mask")]
    MissingMask,
    #[error("disparity mean is zero")]
    ZeroDisparity,
    #[error("invalid loss weights: {0}")]
    Weights(String),
    #[error(transparent)]
    Geometry(#[from] GeometryError),
    #[error(transparent)]
    Tensor(#[from] TensorError),
}

pub type Result<T> = std::result::Result<T, LossError>;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct LossWeights {
    pub lambda1: f64,
    pub lambda2: f64,
    pub lambda3: f64,
}

impl Default for LossWeights {
    fn default() -> Self {
        LossWeights {
            lambda1: 0.85,
            lambda2: 0.15,
            lambda3: 1e-3,
        }
    }
}

impl LossWeights {
    pub fn validate(&self) -> Result<()> {
        let all = [self.lambda1, self.lambda2, self.lambda3];
        if all.iter().any(|w| !w.is_finite() || *w < 0.0) || self.lambda1 + self.lambda2 <= 0.0 {
            return Err(LossError::Weights(format!("{self:?}")));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum PhotometricCombine {
    #[default]
    Min,
    Mean,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum LossRegion {
    #[default]
    Complete,
    MaskedOnly,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct LossConfig {
    pub weights: LossWeights,
    pub combine: PhotometricCombine,
    pub region: LossRegion,
    pub ssim_window: usize,
}

impl Default for LossConfig {
    fn default() -> Self {
        LossConfig {
            weights: LossWeights::default(),
            combine: PhotometricCombine::Min,
            region: LossRegion::Complete,
            ssim_window: 3,
        }
    }
}

fn reflect(i: isize, n: usize) -> usize {
    let n = n as isize;
    let mut i = i;
    if i < 0 {
        i = -i;
    }
    if i >= n {
        i = 2 * (n - 1) - i;
    }
    i as usize
}

/// Mean over a `(2r+1)²` window with reflect padding, per channel of
/// `[B, H, W, C]`.
struct BoxFilterFn {
    input: Tensor,
    radius: usize,
}

fn box_apply(x: &[f64], shape: &[usize], radius: usize, transpose: bool) -> Vec<f64> {
    let (b, h, w, c) = (shape[0], shape[1], shape[2], shape[3]);
    let r = radius as isize;
    let norm = 1.0 / ((2 * radius + 1) * (2 * radius + 1)) as f64;
    let mut out = vec![0.0; x.len()];
    for bi in 0..b {
        let base = bi * h * w;
        for y in 0..h {
            for xx in 0..w {
                let o = (base + y * w + xx) * c;
                for dy in -r..=r {
                    let sy = reflect(y as isize + dy, h);
                    for dx in -r..=r {
                        let sx = reflect(xx as isize + dx, w);
                        let s = (base + sy * w + sx) * c;
                        for ch in 0..c {
                            if transpose {
                                out[s + ch] += x[o + ch] * norm;
                            } else {
                                out[o + ch] += x[s + ch] * norm;
                            }
                        }
                    }
                }
            }
        }
    }
    out
}

impl GradFn for BoxFilterFn {
    fn name(&self) -> &'static str {
        "box_filter"
    }

    fn inputs(&self) -> Vec<&Tensor> {
        vec![&self.input]
    }

    fn backward(&self, _out: &[f64], g: &[f64]) -> Vec<Option<Vec<f64>>> {
        vec![Some(box_apply(g, self.input.shape(), self.radius, true))]
    }
}

pub fn box_filter(x: &Tensor, window: usize) -> std::result::Result<Tensor, TensorError> {
    let s = x.shape();
    let radius = window / 2;
    if s.len() != 4 || window.is_multiple_of(2) || s[1] <= radius || s[2] <= radius {
        return Err(TensorError::Invalid(format!(
            "box filter of window {window} on shape {s:?}"
        )));
    }
    let data = box_apply(x.data(), s, radius, false);
    Ok(Tensor::from_op(data, s.to_vec(), BoxFilterFn { input: x.clone(), radius }))
}

fn check_same(op: &'static str, a: &Tensor, b: &Tensor) -> Result<()> {
    if a.shape() != b.shape() || a.rank() != 4 {
        return Err(TensorError::ShapeMismatch {
            op,
            lhs: a.shape().to_vec(),
            rhs: b.shape().to_vec(),
        }
        .into());
    }
    Ok(())
}

/// Per-pixel, per-channel `clamp((1 - SSIM) / 2, 0, 1)`, shape `[B, H, W, C]`.
pub fn ssim_map(a: &Tensor, b: &Tensor, window: usize) -> Result<Tensor> {
    check_same("ssim", a, b)?;
    let mu_a = box_filter(a, window)?;
    let mu_b = box_filter(b, window)?;
    let mu_a2 = mu_a.mul(&mu_a)?;
    let mu_b2 = mu_b.mul(&mu_b)?;
    let mu_ab = mu_a.mul(&mu_b)?;
    let sig_a = box_filter(&a.mul(a)?, window)?.sub(&mu_a2)?;
    let sig_b = box_filter(&b.mul(b)?, window)?.sub(&mu_b2)?;
    let sig_ab = box_filter(&a.mul(b)?, window)?.sub(&mu_ab)?;
    let num = mu_ab
        .mul_scalar(2.0)
        .add_scalar(SSIM_C1)
        .mul(&sig_ab.mul_scalar(2.0).add_scalar(SSIM_C2))?;
    let den = mu_a2
        .add(&mu_b2)?
        .add_scalar(SSIM_C1)
        .mul(&sig_a.add(&sig_b)?.add_scalar(SSIM_C2))?;
    let ssim = num.div(&den)?;
    Ok(ssim.neg().add_scalar(1.0).mul_scalar(0.5).clamp(0.0, 1.0))
}

/// Mean of `(1 - SSIM) / 2` over all pixels and channels.
pub fn ssim_loss(a: &Tensor, b: &Tensor, window: usize) -> Result<Tensor> {
    Ok(ssim_map(a, b, window)?.mean_all())
}

fn pixel_count(shape: &[usize]) -> usize {
    shape[0] * shape[1] * shape[2]
}

fn masked_mean(map: &Tensor, weights: &[f64]) -> Result<Tensor> {
    let count: f64 = weights.iter().sum();
    if count == 0.0 {
        return Err(LossError::EmptyValidity);
    }
    let w = Tensor::new(weights.to_vec(), map.shape())?;
    Ok(map.mul(&w)?.sum_all().mul_scalar(1.0 / count))
}

fn flags_to_weights(flags: &[bool]) -> Vec<f64> {
    flags.iter().map(|&v| if v { 1.0 } else { 0.0 }).collect()
}

/// Mean absolute difference over pixels marked valid (and all channels).
pub fn l1_photometric(a: &Tensor, b: &Tensor, validity: &[bool]) -> Result<Tensor> {
    check_same("l1_photometric", a, b)?;
    let n = pixel_count(a.shape());
    if validity.len() != n {
        return Err(TensorError::ElementCount {
            op: "l1_photometric",
            shape: a.shape()[..3].to_vec(),
            got: validity.len(),
        }
        .into());
    }
    let per_pixel = a.sub(b)?.abs().mean(&[3], false)?;
    masked_mean(&per_pixel, &flags_to_weights(validity))
}

/// Per-pixel reprojection error `λ1·(1-SSIM)/2 + λ2·|a-b|`, channel-averaged,
/// shape `[B, H, W]`.
pub fn photometric_map(pred: &Tensor, target: &Tensor, weights: &LossWeights, window: usize) -> Result<Tensor> {
    check_same("photometric", pred, target)?;
    let l1 = pred.sub(target)?.abs().mean(&[3], false)?;
    if weights.lambda1 == 0.0 {
        return Ok(l1.mul_scalar(weights.lambda2));
    }
    let ssim = ssim_map(pred, target, window)?.mean(&[3], false)?;
    Ok(ssim.mul_scalar(weights.lambda1).add(&l1.mul_scalar(weights.lambda2))?)
}

/// Edge-aware smoothness of mean-normalized disparity `[B, H, W]` against
/// `image` `[B, H, W, C]`: the x and y terms are each averaged over their own
/// difference grids and summed.
pub fn smoothness_loss(disparity: &Tensor, image: &Tensor) -> Result<Tensor> {
    let ds = disparity.shape();
    let is = image.shape();
    if ds.len() != 3 || is.len() != 4 || ds != &is[..3] {
        return Err(TensorError::ShapeMismatch {
            op: "smoothness",
            lhs: ds.to_vec(),
            rhs: is.to_vec(),
        }
        .into());
    }
    let (h, w) = (ds[1], ds[2]);
    let mean = disparity.mean(&[1, 2], true)?;
    if mean.data().contains(&0.0) {
        return Err(LossError::ZeroDisparity);
    }
    let d = disparity.div(&mean)?;
    let mut total = Tensor::scalar(0.0);
    for (axis, extent) in [(2usize, w), (1usize, h)] {
        if extent < 2 {
            continue;
        }
        let dd = d.slice(axis, 1, extent)?.sub(&d.slice(axis, 0, extent - 1)?)?.abs();
        let di = image
            .slice(axis, 1, extent)?
            .sub(&image.slice(axis, 0, extent - 1)?)?
            .abs()
            .mean(&[3], false)?
            .neg()
            .exp();
        total = total.add(&dd.mul(&di)?.mean_all())?;
    }
    Ok(total)
}

/// Inputs of the full objective for one batch.
pub struct DepthLossInputs<'a> {
    pub target: &'a Tensor,
    /// `[I-1, I1]`
    pub sources: [&'a Tensor; 2],
    pub depth: &'a Tensor,
    pub disparity: &'a Tensor,
    /// `T_{s←0}` for each source
    pub poses: [&'a PoseTensor; 2],
    pub intrinsics: &'a Intrinsics,
    /// Per-pixel `[B·H·W]` flags of masked patches; needed for `masked_only`.
    pub mask: Option<&'a [bool]>,
}

pub struct LossBreakdown {
    pub total: Tensor,
    pub photometric: f64,
    pub smoothness: f64,
    /// fraction of target pixels contributing to the photometric mean
    pub coverage: f64,
}

pub fn depth_loss(inp: &DepthLossInputs, cfg: &LossConfig) -> Result<LossBreakdown> {
    cfg.weights.validate()?;
    let n = pixel_count(inp.target.shape());
    let mut maps = Vec::with_capacity(2);
    let mut valids = Vec::with_capacity(2);
    for (src, pose) in inp.sources.iter().zip(inp.poses) {
        let (pred, valid) = synthesize_target(src, inp.depth, pose, inp.intrinsics)?;
        maps.push(photometric_map(&pred, inp.target, &cfg.weights, cfg.ssim_window)?);
        valids.push(valid);
    }
    let seen: Vec<bool> = (0..n).map(|i| valids[0][i] || valids[1][i]).collect();
    let combined = match cfg.combine {
        PhotometricCombine::Min => {
            let shape = maps[0].shape().to_vec();
            let penal: Vec<Tensor> = maps
                .iter()
                .zip(&valids)
                .map(|(m, v)| {
                    let p: Vec<f64> = v.iter().map(|&ok| if ok { 0.0 } else { INVALID_PENALTY }).collect();
                    m.add(&Tensor::new(p, &shape)?)
                })
                .collect::<std::result::Result<_, _>>()?;
            penal[0].min_pair(&penal[1])?
        }
        PhotometricCombine::Mean => {
            let shape = maps[0].shape().to_vec();
            let scale = |k: usize| -> Vec<f64> {
                (0..n)
                    .map(|i| {
                        let cnt = valids[0][i] as u8 + valids[1][i] as u8;
                        if valids[k][i] {
                            1.0 / cnt as f64
                        } else {
                            0.0
                        }
                    })
                    .collect()
            };
            let a = maps[0].mul(&Tensor::new(scale(0), &shape)?)?;
            let b = maps[1].mul(&Tensor::new(scale(1), &shape)?)?;
            a.add(&b)?
        }
    };
    let mut weights = flags_to_weights(&seen);
    if cfg.region == LossRegion::MaskedOnly {
        let mask = inp.mask.ok_or(LossError::MissingMask)?;
        if mask.len() != n {
            return Err(TensorError::ElementCount {
                op: "depth_loss mask",
                shape: inp.target.shape()[..3].to_vec(),
                got: mask.len(),
            }
            .into());
        }
        for (w, &m) in weights.iter_mut().zip(mask) {
            if !m {
                *w = 0.0;
            }
        }
    }
    let coverage = weights.iter().sum::<f64>() / n as f64;
    let photo = masked_mean(&combined, &weights)?;
    let (total, smooth) = if cfg.weights.lambda3 > 0.0 {
        let s = smoothness_loss(inp.disparity, inp.target)?;
        let sv = s.item();
        (photo.add(&s.mul_scalar(cfg.weights.lambda3))?, sv)
    } else {
        (photo.clone(), 0.0)
    };
    Ok(LossBreakdown {
        photometric: photo.item(),
        smoothness: smooth,
        coverage,
        total,
    })
}

#[cfg(test)]
mod tests;
