//! Toy vision-transformer depth and ego-motion networks, their parameter
//! store and the binary checkpoint format.

mod checkpoint;
mod vit;

pub use checkpoint::{load_checkpoint, save_checkpoint, read_checkpoint, write_checkpoint, CHECKPOINT_VERSION};
pub use vit::{
    depth_forward, ego_forward, embed_tokens, patch_embed, patchify, transformer_encoder, DepthOutput, EgoOutput,
};

use std::collections::BTreeMap;

use rand::Rng;
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::seeds;
use crate::tensor::{Tensor, TensorError};

#[derive(Debug, Error)]
pub enum NnError {
    #[error("invalid network config: {0}")]
    Config(String),
    #[error("missing parameter `{0}`")]
    MissingParam(String),
    #[error("checkpoint: {0}")]
    Checkpoint(String),
    #[error(transparent)]
    Io(#[from] std::io::Error),
    #[error("{path}: {source}")]
    File {
        path: std::path::PathBuf,
        #[source]
        source: std::io::Error,
    },
    #[error(transparent)]
    Tensor(#[from] TensorError),
    #[error(transparent)]
    Mask(#[from] crate::masking::MaskError),
}

pub type Result<T> = std::result::Result<T, NnError>;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct ViTConfig {
    pub patch_edge: usize,
    pub width: usize,
    pub layers: usize,
    pub heads: usize,
    pub mlp_ratio: f64,
    pub image_height: usize,
    pub image_width: usize,
}

impl Default for ViTConfig {
    fn default() -> Self {
        ViTConfig {
            patch_edge: 8,
            width: 64,
            layers: 4,
            heads: 4,
            mlp_ratio: 2.0,
            image_height: 64,
            image_width: 64,
        }
    }
}

impl ViTConfig {
    pub fn validate(&self) -> Result<()> {
        let p = self.patch_edge;
        let bad = |m: String| Err(NnError::Config(m));
        if p == 0 || self.width == 0 || self.heads == 0 {
            return bad(format!("{self:?}"));
        }
        if !self.width.is_multiple_of(self.heads) {
            return bad(format!("width {} not divisible by heads {}", self.width, self.heads));
        }
        if !self.image_height.is_multiple_of(p) || !self.image_width.is_multiple_of(p) || self.image_height == 0 || self.image_width == 0 {
            return bad(format!(
                "image {}x{} not divisible by patch edge {p}",
                self.image_height, self.image_width
            ));
        }
        if self.mlp_hidden() == 0 {
            return bad(format!("mlp ratio {} gives an empty hidden layer", self.mlp_ratio));
        }
        Ok(())
    }

    pub fn grid(&self) -> (usize, usize) {
        (self.image_height / self.patch_edge, self.image_width / self.patch_edge)
    }

    pub fn tokens(&self) -> usize {
        let (gh, gw) = self.grid();
        gh * gw
    }

    pub fn mlp_hidden(&self) -> usize {
        (self.width as f64 * self.mlp_ratio).round() as usize
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct ModelConfig {
    pub vit: ViTConfig,
    pub d_min: f64,
    pub d_max: f64,
    pub pose_scale: f64,
    pub mask_token_std: f64,
    pub per_position_mask_tokens: bool,
    pub init_std: f64,
}

impl Default for ModelConfig {
    fn default() -> Self {
        ModelConfig {
            vit: ViTConfig::default(),
            d_min: 0.1,
            d_max: 100.0,
            pose_scale: 0.01,
            mask_token_std: 0.02,
            per_position_mask_tokens: false,
            init_std: 0.02,
        }
    }
}

impl ModelConfig {
    pub fn validate(&self) -> Result<()> {
        self.vit.validate()?;
        if !(self.d_min > 0.0 && self.d_min < self.d_max && self.d_max.is_finite()) {
            return Err(NnError::Config(format!("depth range [{}, {}]", self.d_min, self.d_max)));
        }
        Ok(())
    }
}

/// Which network a parameter belongs to.
pub const DEPTH: &str = "depth";
pub const EGO: &str = "ego";

/// Named parameter shapes of both networks, in a fixed order.
pub fn parameter_layout(cfg: &ModelConfig) -> Vec<(String, Vec<usize>)> {
    let v = &cfg.vit;
    let p2 = v.patch_edge * v.patch_edge;
    let (w, n, hid) = (v.width, v.tokens(), v.mlp_hidden());
    let mut out = Vec::new();
    for (net, in_ch) in [(DEPTH, 3usize), (EGO, 6usize)] {
        let mut add = |name: &str, shape: Vec<usize>| out.push((format!("{net}.{name}"), shape));
        add("patch_embed.weight", vec![p2 * in_ch, w]);
        add("patch_embed.bias", vec![w]);
        add("pos_embed", vec![n, w]);
        add(
            "mask_token",
            if cfg.per_position_mask_tokens { vec![n, w] } else { vec![w] },
        );
        for l in 0..v.layers {
            let b = format!("blocks.{l}");
            add(&format!("{b}.norm1.gain"), vec![w]);
            add(&format!("{b}.norm1.bias"), vec![w]);
            add(&format!("{b}.attn.qkv.weight"), vec![w, 3 * w]);
            add(&format!("{b}.attn.qkv.bias"), vec![3 * w]);
            add(&format!("{b}.attn.proj.weight"), vec![w, w]);
            add(&format!("{b}.attn.proj.bias"), vec![w]);
            add(&format!("{b}.norm2.gain"), vec![w]);
            add(&format!("{b}.norm2.bias"), vec![w]);
            add(&format!("{b}.mlp.fc1.weight"), vec![w, hid]);
            add(&format!("{b}.mlp.fc1.bias"), vec![hid]);
            add(&format!("{b}.mlp.fc2.weight"), vec![hid, w]);
            add(&format!("{b}.mlp.fc2.bias"), vec![w]);
        }
        add("norm.gain", vec![w]);
        add("norm.bias", vec![w]);
        if net == DEPTH {
            add("head.weight", vec![w, p2]);
            add("head.bias", vec![p2]);
        } else {
            add("head.weight", vec![w, 6]);
            add("head.bias", vec![6]);
        }
    }
    out
}

fn trunc_normal<R: Rng>(rng: &mut R, std: f64, n: usize) -> Vec<f64> {
    let dist = Normal::new(0.0, std).expect("positive std");
    (0..n)
        .map(|_| loop {
            let v = dist.sample(rng);
            if v.abs() <= 2.0 * std {
                break v;
            }
        })
        .collect()
}

#[derive(Debug, Clone, PartialEq)]
pub struct ParamEntry {
    pub shape: Vec<usize>,
    pub data: Vec<f64>,
}

/// Owning store of every network parameter, keyed by dotted name.
#[derive(Debug, Clone, PartialEq)]
pub struct ParamStore {
    pub config: ModelConfig,
    entries: BTreeMap<String, ParamEntry>,
}

impl ParamStore {
    /// Truncated-normal weights, zero biases, unit norm gains and Gaussian
    /// mask tokens.
    pub fn init(config: ModelConfig, seed: u64) -> Result<Self> {
        config.validate()?;
        let mut rng = seeds::rng(seeds::derive(seed, &[seeds::stream::INIT]));
        let mut entries = BTreeMap::new();
        for (name, shape) in parameter_layout(&config) {
            let n: usize = shape.iter().product();
            let data = if name.ends_with(".gain") {
                vec![1.0; n]
            } else if name.ends_with(".bias") {
                vec![0.0; n]
            } else if name.ends_with("mask_token") {
                let dist = Normal::new(0.0, config.mask_token_std).map_err(|e| NnError::Config(e.to_string()))?;
                (0..n).map(|_| dist.sample(&mut rng)).collect()
            } else {
                trunc_normal(&mut rng, config.init_std, n)
            };
            entries.insert(name, ParamEntry { shape, data });
        }
        Ok(ParamStore { config, entries })
    }

    pub(crate) fn from_entries(config: ModelConfig, entries: BTreeMap<String, ParamEntry>) -> Result<Self> {
        config.validate()?;
        let layout = parameter_layout(&config);
        if layout.len() != entries.len() {
            return Err(NnError::Checkpoint(format!(
                "expected {} parameters, found {}",
                layout.len(),
                entries.len()
            )));
        }
        for (name, shape) in layout {
            match entries.get(&name) {
                Some(e) if e.shape == shape => {}
                Some(e) => {
                    return Err(NnError::Checkpoint(format!(
                        "`{name}` has shape {:?}, expected {shape:?}",
                        e.shape
                    )))
                }
                None => return Err(NnError::MissingParam(name)),
            }
        }
        Ok(ParamStore { config, entries })
    }

    pub fn entries(&self) -> &BTreeMap<String, ParamEntry> {
        &self.entries
    }

    pub fn get(&self, name: &str) -> Option<&ParamEntry> {
        self.entries.get(name)
    }

    pub fn get_mut(&mut self, name: &str) -> Option<&mut ParamEntry> {
        self.entries.get_mut(name)
    }

    pub fn num_params(&self) -> usize {
        self.entries.values().map(|e| e.data.len()).sum()
    }

    pub fn num_params_of(&self, net: &str) -> usize {
        self.entries
            .iter()
            .filter(|(k, _)| k.starts_with(net) && k[net.len()..].starts_with('.'))
            .map(|(_, e)| e.data.len())
            .sum()
    }

    /// Fresh gradient-tracking leaves for one training step.
    pub fn leaves(&self) -> Params {
        self.tensors(true)
    }

    /// Constant tensors for inference.
    pub fn constants(&self) -> Params {
        self.tensors(false)
    }

    fn tensors(&self, grad: bool) -> Params {
        let map = self
            .entries
            .iter()
            .map(|(k, e)| {
                let t = if grad {
                    Tensor::param(e.data.clone(), &e.shape)
                } else {
                    Tensor::new(e.data.clone(), &e.shape)
                };
                (k.clone(), t.expect("stored shape is consistent"))
            })
            .collect();
        Params { map }
    }

    /// Set one parameter, e.g. to zero a head in tests.
    pub fn set(&mut self, name: &str, data: Vec<f64>) -> Result<()> {
        let e = self.entries.get_mut(name).ok_or_else(|| NnError::MissingParam(name.into()))?;
        if e.data.len() != data.len() {
            return Err(NnError::Config(format!("`{name}` expects {} values", e.data.len())));
        }
        e.data = data;
        Ok(())
    }
}

/// Parameter tensors of one forward pass.
#[derive(Debug, Clone)]
pub struct Params {
    map: BTreeMap<String, Tensor>,
}

impl Params {
    pub fn get(&self, name: &str) -> Result<&Tensor> {
        self.map.get(name).ok_or_else(|| NnError::MissingParam(name.into()))
    }

    pub fn iter(&self) -> impl Iterator<Item = (&String, &Tensor)> {
        self.map.iter()
    }

    /// Gradients of every leaf (zeros where the loss did not reach).
    pub fn grads(&self) -> BTreeMap<String, Vec<f64>> {
        self.map.iter().map(|(k, t)| (k.clone(), t.grad_or_zeros())).collect()
    }
}
