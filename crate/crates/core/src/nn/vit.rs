use super::{ModelConfig, NnError, Params, Result, ViTConfig, DEPTH, EGO};
use crate::geometry::PoseTensor;
use crate::masking::{apply_mask, MaskGrid};
use crate::tensor::{Tensor, TensorError};

const LN_EPS: f64 = 1e-6;

fn check_image(op: &'static str, image: &Tensor, v: &ViTConfig, channels: usize) -> Result<()> {
    let s = image.shape();
    if s.len() != 4 || s[1] != v.image_height || s[2] != v.image_width || s[3] != channels {
        return Err(TensorError::ShapeMismatch {
            op,
            lhs: s.to_vec(),
            rhs: vec![v.image_height, v.image_width, channels],
        }
        .into());
    }
    Ok(())
}

/// `[B, H, W, C]` → `[B, N, p·p·C]`, patches in row-major grid order, each
/// flattened as (row, column, channel).
pub fn patchify(image: &Tensor, patch: usize) -> Result<Tensor> {
    let s = image.shape();
    if s.len() != 4 || patch == 0 || !s[1].is_multiple_of(patch) || !s[2].is_multiple_of(patch) {
        return Err(NnError::Config(format!("cannot split {s:?} into {patch}px patches")));
    }
    let (b, h, w, c) = (s[0], s[1], s[2], s[3]);
    let (gh, gw) = (h / patch, w / patch);
    Ok(image
        .reshape(&[b, gh, patch, gw, patch, c])?
        .permute(&[0, 1, 3, 2, 4, 5])?
        .reshape(&[b, gh * gw, patch * patch * c])?)
}

fn linear(x: &Tensor, p: &Params, name: &str) -> Result<Tensor> {
    let w = p.get(&format!("{name}.weight"))?;
    let b = p.get(&format!("{name}.bias"))?;
    Ok(x.matmul(w)?.add(b)?)
}

fn norm(x: &Tensor, p: &Params, name: &str) -> Result<Tensor> {
    let axis = x.rank() - 1;
    Ok(x.layer_norm(axis, p.get(&format!("{name}.gain"))?, p.get(&format!("{name}.bias"))?, LN_EPS)?)
}

/// Linear projection of flattened patches, without position embeddings.
pub fn patch_embed(p: &Params, cfg: &ModelConfig, net: &str, image: &Tensor) -> Result<Tensor> {
    let patches = patchify(image, cfg.vit.patch_edge)?;
    linear(&patches, p, &format!("{net}.patch_embed"))
}

/// Tokens entering the first transformer block: patch embeddings, mask-token
/// substitution (if `masks`), then position embeddings.
pub fn embed_tokens(
    p: &Params,
    cfg: &ModelConfig,
    net: &str,
    image: &Tensor,
    masks: Option<&[MaskGrid]>,
) -> Result<Tensor> {
    let mut x = patch_embed(p, cfg, net, image)?;
    if let Some(m) = masks {
        x = apply_mask(&x, m, p.get(&format!("{net}.mask_token"))?)?;
    }
    Ok(x.add(p.get(&format!("{net}.pos_embed"))?)?)
}

/// Multi-head self-attention; also returns the attention probabilities
/// `[B, heads, N, N]`.
pub(crate) fn attention(x: &Tensor, p: &Params, name: &str, heads: usize) -> Result<(Tensor, Tensor)> {
    let s = x.shape();
    let (b, n, w) = (s[0], s[1], s[2]);
    let dh = w / heads;
    let qkv = linear(x, p, &format!("{name}.qkv"))?
        .reshape(&[b, n, 3, heads, dh])?
        .permute(&[2, 0, 3, 1, 4])?;
    let part = |i: usize| -> Result<Tensor> { Ok(qkv.slice(0, i, i + 1)?.reshape(&[b, heads, n, dh])?) };
    let (q, k, v) = (part(0)?, part(1)?, part(2)?);
    let scores = q.matmul(&k.transpose(2, 3)?)?.mul_scalar(1.0 / (dh as f64).sqrt());
    let probs = scores.softmax(3)?;
    let mixed = probs.matmul(&v)?.permute(&[0, 2, 1, 3])?.reshape(&[b, n, w])?;
    Ok((linear(&mixed, p, &format!("{name}.proj"))?, probs))
}

/// Pre-norm transformer blocks (attention then MLP, each residual).
pub fn transformer_encoder(p: &Params, cfg: &ModelConfig, net: &str, tokens: &Tensor) -> Result<Tensor> {
    let v = &cfg.vit;
    let s = tokens.shape();
    if s.len() != 3 || s[1] != v.tokens() || s[2] != v.width {
        return Err(TensorError::ShapeMismatch {
            op: "transformer_encoder",
            lhs: s.to_vec(),
            rhs: vec![v.tokens(), v.width],
        }
        .into());
    }
    let mut x = tokens.clone();
    for l in 0..v.layers {
        let b = format!("{net}.blocks.{l}");
        let (att, _) = attention(&norm(&x, p, &format!("{b}.norm1"))?, p, &format!("{b}.attn"), v.heads)?;
        x = x.add(&att)?;
        let h = linear(&norm(&x, p, &format!("{b}.norm2"))?, p, &format!("{b}.mlp.fc1"))?.gelu();
        x = x.add(&linear(&h, p, &format!("{b}.mlp.fc2"))?)?;
    }
    Ok(x)
}

#[derive(Debug, Clone)]
pub struct DepthOutput {
    /// sigmoid output in (0, 1), `[B, H, W]`
    pub disparity: Tensor,
    /// `1 / (σ/d_min + (1-σ)/d_max)`, `[B, H, W]`
    pub depth: Tensor,
}

pub fn depth_forward(p: &Params, cfg: &ModelConfig, images: &Tensor, masks: Option<&[MaskGrid]>) -> Result<DepthOutput> {
    let v = &cfg.vit;
    check_image("depth_forward", images, v, 3)?;
    let b = images.shape()[0];
    let (gh, gw) = v.grid();
    let pe = v.patch_edge;
    let x = embed_tokens(p, cfg, DEPTH, images, masks)?;
    let x = transformer_encoder(p, cfg, DEPTH, &x)?;
    let x = norm(&x, p, &format!("{DEPTH}.norm"))?;
    let logits = linear(&x, p, &format!("{DEPTH}.head"))?
        .reshape(&[b, gh, gw, pe, pe])?
        .permute(&[0, 1, 3, 2, 4])?
        .reshape(&[b, v.image_height, v.image_width])?;
    let disparity = logits.sigmoid();
    let (lo, hi) = (1.0 / cfg.d_max, 1.0 / cfg.d_min);
    let depth = disparity.mul_scalar(hi - lo).add_scalar(lo).pow_scalar(-1.0)?;
    Ok(DepthOutput { disparity, depth })
}

#[derive(Debug, Clone)]
pub struct EgoOutput {
    /// `T_{a←b}` for each input pair `(a, b)`
    pub pose: PoseTensor,
}

/// Relative pose of each channel-stacked pair `[B, H, W, 6]`.
pub fn ego_forward(p: &Params, cfg: &ModelConfig, pairs: &Tensor, masks: Option<&[MaskGrid]>) -> Result<EgoOutput> {
    check_image("ego_forward", pairs, &cfg.vit, 6)?;
    let x = embed_tokens(p, cfg, EGO, pairs, masks)?;
    let x = transformer_encoder(p, cfg, EGO, &x)?;
    let x = norm(&x, p, &format!("{EGO}.norm"))?;
    let pooled = x.mean(&[1], false)?;
    let out = linear(&pooled, p, &format!("{EGO}.head"))?.mul_scalar(cfg.pose_scale);
    Ok(EgoOutput {
        pose: PoseTensor {
            rotation: out.slice(1, 0, 3)?,
            translation: out.slice(1, 3, 6)?,
        },
    })
}
