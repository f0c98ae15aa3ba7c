//! Evaluation-time perturbations: natural corruptions, mean-colour
//! occlusions driven by the patch-mask generators, and iterative sign-gradient
//! attacks against the trained networks.

mod attack;
mod corrupt;

pub use attack::{attack_iterations, flip_depth, targeted_flip_attack, untargeted_attack, AttackMode, AttackOutcome, FlipDirection};
pub use corrupt::{corrupt, CorruptionKind, CorruptionSpec, SeverityTable};

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::image::Image;
use crate::masking::{generate, MaskConfig, MaskGrid, MaskStrategy};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct OcclusionSpec {
    pub strategy: MaskStrategy,
    /// mask-grid parameters; `mask.size` is the cell edge in pixels
    pub mask: MaskConfig,
}

impl Default for OcclusionSpec {
    fn default() -> Self {
        OcclusionSpec {
            strategy: MaskStrategy::Blockwise,
            mask: MaskConfig::default(),
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Occluded {
    pub image: Image,
    pub grid: MaskGrid,
    /// per-pixel flags, true where the image was replaced
    pub pixels: Vec<bool>,
}

/// Replace the masked cells of a patch-grid mask with the mean RGB of the
/// complete image.
pub fn occlude(image: &Image, spec: &OcclusionSpec) -> Result<Occluded> {
    let r = spec.mask.ratio;
    if !(r > 0.0 && r < 1.0) {
        return Err(Error::Config(format!("occlusion ratio {r} not in (0, 1)")));
    }
    let grid = generate(spec.strategy, &spec.mask, image.height, image.width)?;
    let pixels = grid.pixel_mask(image.height, image.width, spec.mask.size);
    let mean = image.mean_rgb();
    let mut out = image.clone();
    for (px, &m) in out.data.chunks_mut(3).zip(&pixels) {
        if m {
            px.copy_from_slice(&mean);
        }
    }
    Ok(Occluded {
        image: out,
        grid,
        pixels,
    })
}

#[cfg(test)]
mod tests;
