//! Iterative sign-gradient attacks on the centre frame, projected onto the
//! L∞ ball of radius ε/255 and the unit cube.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::geometry::Intrinsics;
use crate::image::Image;
use crate::losses::LossConfig;
use crate::model::{joint_loss, Frames, Masks, Model};
use crate::nn::depth_forward;
use crate::Tensor;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum FlipDirection {
    Horizontal,
    Vertical,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum AttackMode {
    Untargeted,
    FlipHorizontal,
    FlipVertical,
}

impl AttackMode {
    pub fn as_str(self) -> &'static str {
        match self {
            AttackMode::Untargeted => "untargeted",
            AttackMode::FlipHorizontal => "flip_horizontal",
            AttackMode::FlipVertical => "flip_vertical",
        }
    }
}

impl std::str::FromStr for AttackMode {
    type Err = Error;
    fn from_str(s: &str) -> Result<Self> {
        match s {
            "untargeted" => Ok(AttackMode::Untargeted),
            "flip_horizontal" => Ok(AttackMode::FlipHorizontal),
            "flip_vertical" => Ok(AttackMode::FlipVertical),
            _ => Err(Error::Config(format!(
                "unknown attack `{s}` (untargeted, flip_horizontal, flip_vertical)"
            ))),
        }
    }
}

/// `min(ε + 4, ⌈1.25 ε⌉)`, at least one step.
pub fn attack_iterations(eps: f64) -> usize {
    ((eps + 4.0).floor().min((1.25 * eps).ceil()) as usize).max(1)
}

#[derive(Debug, Clone, PartialEq)]
pub struct AttackOutcome {
    pub image: Image,
    pub iterations: usize,
    pub epsilon: f64,
    /// attack objective on the clean input and on the final iterate
    pub objective_before: f64,
    pub objective_after: f64,
    /// `‖x_adv − x‖∞`
    pub linf: f64,
}

fn check_eps(eps: f64) -> Result<()> {
    if !(eps.is_finite() && eps > 0.0) {
        return Err(Error::Config(format!("attack epsilon {eps} must be positive")));
    }
    if ![1.0, 2.0, 4.0, 8.0, 16.0].contains(&eps) {
        log::warn!("attack epsilon {eps} is outside the evaluated set {{1, 2, 4, 8, 16}}");
    }
    Ok(())
}

/// Run `attack_iterations(eps)` signed steps of size `eps/N/255`, each
/// followed by projection. `objective` returns the value and the gradient
/// with respect to the image tensor `[1, H, W, 3]`; `sign` is +1 to ascend
/// and −1 to descend.
fn iterate<F>(clean: &Image, eps: f64, sign: f64, mut objective: F) -> Result<AttackOutcome>
where
    F: FnMut(&Tensor) -> Result<(f64, Vec<f64>)>,
{
    check_eps(eps)?;
    let n = attack_iterations(eps);
    let radius = eps / 255.0;
    let alpha = radius / n as f64;
    let x0 = clean.data.clone();
    let mut x = x0.clone();
    let shape = [1, clean.height, clean.width, 3];
    let mut before = None;
    for _ in 0..n {
        let (value, grad) = objective(&Tensor::param(x.clone(), &shape)?)?;
        before.get_or_insert(value);
        for ((xi, &gi), &ci) in x.iter_mut().zip(&grad).zip(&x0) {
            let step = if gi > 0.0 {
                alpha
            } else if gi < 0.0 {
                -alpha
            } else {
                0.0
            };
            *xi = (*xi + sign * step).clamp(ci - radius, ci + radius).clamp(0.0, 1.0);
        }
    }
    let (after, _) = objective(&Tensor::param(x.clone(), &shape)?)?;
    let linf = x.iter().zip(&x0).map(|(a, b)| (a - b).abs()).fold(0.0, f64::max);
    Ok(AttackOutcome {
        image: Image::new(clean.width, clean.height, x),
        iterations: n,
        epsilon: eps,
        objective_before: before.expect("at least one iteration"),
        objective_after: after,
        linf,
    })
}

/// Ascend the training objective with respect to the centre frame `I0`. The
/// perturbed frame replaces `I0` everywhere: depth input, both ego pairs and
/// the photometric target.
pub fn untargeted_attack(
    model: &Model,
    frames: [&Image; 3],
    k: &Intrinsics,
    eps: f64,
    loss_cfg: &LossConfig,
) -> Result<AttackOutcome> {
    let p = model.store.constants();
    let base = Frames::from_images(&[frames[0]], &[frames[1]], &[frames[2]])?;
    iterate(frames[1], eps, 1.0, |x| {
        let out = joint_loss(&p, model.config(), &base.with_target(x.clone()), k, &Masks::none(), loss_cfg)?;
        out.loss.total.backward()?;
        Ok((out.loss.total.item(), x.grad_or_zeros()))
    })
}

/// Mirror each `[H, W]` depth map of a `[B, H, W]` buffer.
pub fn flip_depth(values: &[f64], h: usize, w: usize, dir: FlipDirection) -> Vec<f64> {
    let mut out = vec![0.0; values.len()];
    for (i, o) in out.iter_mut().enumerate() {
        let (b, y, x) = (i / (h * w), (i / w) % h, i % w);
        let (sy, sx) = match dir {
            FlipDirection::Horizontal => (y, w - 1 - x),
            FlipDirection::Vertical => (h - 1 - y, x),
        };
        *o = values[b * h * w + sy * w + sx];
    }
    out
}

/// Descend `RMSE(depth(x), flip(depth(I0)))`.
pub fn targeted_flip_attack(model: &Model, image: &Image, eps: f64, dir: FlipDirection) -> Result<AttackOutcome> {
    let p = model.store.constants();
    let cfg = model.config();
    let (h, w) = (image.height, image.width);
    let clean = model.depth_tensor(&image.to_tensor())?;
    let target = Tensor::new(flip_depth(clean.data(), h, w, dir), clean.shape())?;
    iterate(image, eps, -1.0, |x| {
        let d = depth_forward(&p, cfg, x, None)?.depth;
        let rmse = d.sub(&target)?.pow_scalar(2.0)?.mean_all().add_scalar(1e-24).sqrt()?;
        rmse.backward()?;
        Ok((rmse.item(), x.grad_or_zeros()))
    })
}
