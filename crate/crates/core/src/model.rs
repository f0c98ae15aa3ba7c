//! Joint depth and ego-motion pass over triplet batches, shared by training,
//! evaluation and the attacks.

use crate::data::Dataset;
use crate::error::Result;
use crate::geometry::{DepthMap, Intrinsics, PoseTensor};
use crate::image::{batch_tensor, Image};
use crate::losses::{depth_loss, DepthLossInputs, LossBreakdown, LossConfig};
use crate::masking::MaskGrid;
use crate::nn::{depth_forward, ego_forward, DepthOutput, ModelConfig, ParamStore, Params};
use crate::Tensor;

/// `I-1`, `I0`, `I1` as `[B, H, W, 3]` tensors.
#[derive(Debug, Clone)]
pub struct Frames {
    pub prev: Tensor,
    pub target: Tensor,
    pub next: Tensor,
}

impl Frames {
    pub fn from_images(prev: &[&Image], target: &[&Image], next: &[&Image]) -> Result<Frames> {
        Ok(Frames {
            prev: batch_tensor(prev)?,
            target: batch_tensor(target)?,
            next: batch_tensor(next)?,
        })
    }

    pub fn from_dataset(ds: &Dataset, triplets: &[usize]) -> Result<Frames> {
        let pick = |slot: usize| -> Vec<&Image> { triplets.iter().map(|&i| ds.triplet(i).frames[slot]).collect() };
        Frames::from_images(&pick(0), &pick(1), &pick(2))
    }

    pub fn batch(&self) -> usize {
        self.target.shape()[0]
    }

    pub fn with_target(&self, target: Tensor) -> Frames {
        Frames {
            target,
            ..self.clone()
        }
    }
}

/// Masks for the depth network (one per item) and the ego network (one per
/// ordered pair, `2B`).
#[derive(Debug, Clone, Default)]
pub struct Masks {
    pub depth: Option<Vec<MaskGrid>>,
    pub ego: Option<Vec<MaskGrid>>,
}

impl Masks {
    pub fn none() -> Masks {
        Masks::default()
    }
}

/// `[(I-1, I0); (I0, I1)]` channel-stacked, `[2B, H, W, 6]`.
pub fn ego_pairs(f: &Frames) -> Result<Tensor> {
    let a = Tensor::concat(&[f.prev.clone(), f.target.clone()], 3)?;
    let b = Tensor::concat(&[f.target.clone(), f.next.clone()], 3)?;
    Ok(Tensor::concat(&[a, b], 0)?)
}

/// `[T_{-1←0}, T_{1←0}]` from one ego pass over both ordered pairs; the
/// second pair yields `T_{0←1}`, which is inverted.
pub fn predict_poses(p: &Params, cfg: &ModelConfig, f: &Frames, masks: Option<&[MaskGrid]>) -> Result<[PoseTensor; 2]> {
    let b = f.batch();
    let out = ego_forward(p, cfg, &ego_pairs(f)?, masks)?.pose;
    let part = |lo: usize, hi: usize| -> Result<PoseTensor> {
        Ok(PoseTensor {
            rotation: out.rotation.slice(0, lo, hi)?,
            translation: out.translation.slice(0, lo, hi)?,
        })
    };
    Ok([part(0, b)?, part(b, 2 * b)?.inverse()?])
}

pub struct JointOutput {
    pub loss: LossBreakdown,
    pub depth: DepthOutput,
    pub poses: [PoseTensor; 2],
}

/// Forward both networks and evaluate the training objective.
pub fn joint_loss(
    p: &Params,
    cfg: &ModelConfig,
    frames: &Frames,
    k: &Intrinsics,
    masks: &Masks,
    loss_cfg: &LossConfig,
) -> Result<JointOutput> {
    let depth = depth_forward(p, cfg, &frames.target, masks.depth.as_deref())?;
    let poses = predict_poses(p, cfg, frames, masks.ego.as_deref())?;
    let (h, w) = (cfg.vit.image_height, cfg.vit.image_width);
    let pixel_mask: Option<Vec<bool>> = masks
        .depth
        .as_ref()
        .map(|ms| ms.iter().flat_map(|m| m.pixel_mask(h, w, cfg.vit.patch_edge)).collect());
    let inp = DepthLossInputs {
        target: &frames.target,
        sources: [&frames.prev, &frames.next],
        depth: &depth.depth,
        disparity: &depth.disparity,
        poses: [&poses[0], &poses[1]],
        intrinsics: k,
        mask: pixel_mask.as_deref(),
    };
    let loss = depth_loss(&inp, loss_cfg)?;
    Ok(JointOutput { loss, depth, poses })
}

fn split_depth(t: &Tensor) -> Result<Vec<DepthMap>> {
    let s = t.shape();
    let n = s[1] * s[2];
    (0..s[0])
        .map(|i| Ok(DepthMap::new(s[2], s[1], t.data()[i * n..(i + 1) * n].to_vec())?))
        .collect()
}

/// Anything that maps images to depth maps, so evaluation can score trained
/// models and reference predictors alike.
pub trait DepthPredictor: Sync {
    fn predict(&self, images: &[&Image]) -> Result<Vec<DepthMap>>;

    /// The differentiable networks behind the predictor, if any.
    fn model(&self) -> Option<&Model> {
        None
    }
}

/// Trained (or freshly initialised) pair of networks.
#[derive(Debug, Clone, PartialEq)]
pub struct Model {
    pub store: ParamStore,
}

const INFER_CHUNK: usize = 8;

impl Model {
    pub fn new(store: ParamStore) -> Model {
        Model { store }
    }

    pub fn config(&self) -> &ModelConfig {
        &self.store.config
    }

    pub fn depth_tensor(&self, images: &Tensor) -> Result<Tensor> {
        Ok(depth_forward(&self.store.constants(), self.config(), images, None)?.depth)
    }
}

impl DepthPredictor for Model {
    fn predict(&self, images: &[&Image]) -> Result<Vec<DepthMap>> {
        let p = self.store.constants();
        let mut out = Vec::with_capacity(images.len());
        for chunk in images.chunks(INFER_CHUNK) {
            let d = depth_forward(&p, self.config(), &batch_tensor(chunk)?, None)?;
            out.extend(split_depth(&d.depth)?);
        }
        Ok(out)
    }

    fn model(&self) -> Option<&Model> {
        Some(self)
    }
}

/// Predicts one fixed depth everywhere.
pub struct ConstantDepth(pub f64);

impl DepthPredictor for ConstantDepth {
    fn predict(&self, images: &[&Image]) -> Result<Vec<DepthMap>> {
        Ok(images
            .iter()
            .map(|i| DepthMap::constant(i.width, i.height, self.0))
            .collect())
    }
}
