//! Training configuration: TOML sections with `section.key=value` overrides.

use std::path::{Path, PathBuf};

use serde::de::DeserializeOwned;
use serde::{Deserialize, Serialize};

use crate::error::{io_at, Error, Result};
use crate::losses::{LossConfig, LossRegion};
use crate::masking::{MaskConfig, MaskStrategy};
use crate::nn::ModelConfig;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum MaskTarget {
    #[default]
    DepthOnly,
    EgoOnly,
    Both,
    None,
}

impl MaskTarget {
    pub fn depth(self) -> bool {
        matches!(self, MaskTarget::DepthOnly | MaskTarget::Both)
    }

    pub fn ego(self) -> bool {
        matches!(self, MaskTarget::EgoOnly | MaskTarget::Both)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct RunSection {
    pub seed: u64,
    pub dataset: PathBuf,
    pub checkpoint: PathBuf,
    pub epochs: usize,
    pub steps_per_epoch: usize,
    pub batch_size: usize,
    /// triplets used to measure the objective before and after training
    pub probe_triplets: usize,
    pub log_every: usize,
}

impl Default for RunSection {
    fn default() -> Self {
        RunSection {
            seed: 0,
            dataset: PathBuf::from("data/train"),
            checkpoint: PathBuf::from("runs/model.ckpt"),
            epochs: 20,
            steps_per_epoch: 100,
            batch_size: 4,
            probe_triplets: 16,
            log_every: 50,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct OptimConfig {
    pub lr: f64,
    /// lr is divided by this factor from `lr_decay_epoch` on
    pub lr_decay: f64,
    pub lr_decay_epoch: usize,
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
    pub weight_decay: f64,
}

impl Default for OptimConfig {
    fn default() -> Self {
        OptimConfig {
            lr: 5e-4,
            lr_decay: 10.0,
            lr_decay_epoch: 15,
            beta1: 0.9,
            beta2: 0.999,
            eps: 1e-8,
            weight_decay: 0.01,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct MaskingSection {
    pub target: MaskTarget,
    pub depth_strategy: MaskStrategy,
    pub ego_strategy: MaskStrategy,
    /// cell edge in pixels; must be a multiple of the patch edge
    pub size: usize,
    pub ratio: f64,
    pub aspect: f64,
}

impl Default for MaskingSection {
    fn default() -> Self {
        let m = MaskConfig::default();
        MaskingSection {
            target: MaskTarget::DepthOnly,
            depth_strategy: MaskStrategy::Blockwise,
            ego_strategy: MaskStrategy::Blockwise,
            size: m.size,
            ratio: m.ratio,
            aspect: m.aspect,
        }
    }
}

impl MaskingSection {
    pub fn mask_config(&self, seed: u64) -> MaskConfig {
        MaskConfig {
            size: self.size,
            ratio: self.ratio,
            aspect: self.aspect,
            seed,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize, Default)]
#[serde(default)]
pub struct TrainConfig {
    pub run: RunSection,
    pub optim: OptimConfig,
    pub masking: MaskingSection,
    pub loss: LossConfig,
    pub model: ModelConfig,
}

impl TrainConfig {
    pub fn total_steps(&self) -> usize {
        self.run.epochs * self.run.steps_per_epoch
    }

    /// Learning rate in effect during `epoch` (0-based).
    pub fn lr_at(&self, epoch: usize) -> f64 {
        if epoch >= self.optim.lr_decay_epoch {
            self.optim.lr / self.optim.lr_decay
        } else {
            self.optim.lr
        }
    }

    pub fn validate(&self) -> Result<()> {
        let bad = |m: String| Err(Error::Config(m));
        let r = &self.run;
        if r.epochs == 0 || r.steps_per_epoch == 0 || r.batch_size == 0 {
            return bad("epochs, steps_per_epoch and batch_size must be positive".into());
        }
        let o = &self.optim;
        if !(o.lr > 0.0 && o.lr_decay >= 1.0 && (0.0..1.0).contains(&o.beta1) && (0.0..1.0).contains(&o.beta2)) {
            return bad(format!("optimizer settings {o:?}"));
        }
        if !(o.eps > 0.0 && o.weight_decay >= 0.0) {
            return bad(format!("optimizer settings {o:?}"));
        }
        self.model.validate()?;
        self.loss.weights.validate()?;
        let m = &self.masking;
        if m.target != MaskTarget::None {
            self.masking.mask_config(0).validate()?;
            if !m.size.is_multiple_of(self.model.vit.patch_edge) {
                return bad(format!(
                    "mask size {} is not a multiple of patch edge {}",
                    m.size, self.model.vit.patch_edge
                ));
            }
        }
        if self.loss.region == LossRegion::MaskedOnly && !m.target.depth() {
            return bad("loss region masked_only needs depth masking".into());
        }
        Ok(())
    }

    pub fn to_toml(&self) -> String {
        toml::to_string(self).expect("config serializes")
    }

    pub fn from_toml(text: &str) -> Result<TrainConfig> {
        Self::from_toml_with(text, &[])
    }

    pub fn from_toml_with(text: &str, overrides: &[String]) -> Result<TrainConfig> {
        toml_with_overrides(text, overrides)
    }

    pub fn load(path: &Path, overrides: &[String]) -> Result<TrainConfig> {
        let text = std::fs::read_to_string(path).map_err(io_at(path))?;
        Self::from_toml_with(&text, overrides).map_err(|e| Error::Config(format!("{}: {e}", path.display())))
    }
}

/// Parse `text` into `T` after applying `section.key=value` overrides;
/// values are read as TOML scalars, falling back to plain strings. Keys
/// absent from `T::default()` are rejected so typos fail loudly.
pub fn toml_with_overrides<T>(text: &str, overrides: &[String]) -> Result<T>
where
    T: Serialize + DeserializeOwned + Default,
{
    let mut table: toml::Table = text.parse().map_err(|e| Error::Config(format!("{e}")))?;
    for o in overrides {
        let (key, raw) = o
            .split_once('=')
            .ok_or_else(|| Error::Config(format!("override `{o}` is not key=value")))?;
        let value = parse_value(raw.trim());
        let mut parts: Vec<&str> = key.trim().split('.').collect();
        let last = parts.pop().filter(|s| !s.is_empty()).ok_or_else(|| Error::Config(format!("empty key in `{o}`")))?;
        let mut node = &mut table;
        for p in parts {
            let entry = node.entry(p.to_string()).or_insert_with(|| toml::Value::Table(toml::Table::new()));
            node = entry
                .as_table_mut()
                .ok_or_else(|| Error::Config(format!("`{p}` in `{o}` is not a section")))?;
        }
        node.insert(last.to_string(), value);
    }
    let known = toml::Table::try_from(T::default()).map_err(|e| Error::Config(e.to_string()))?;
    check_keys(&table, &known, "")?;
    table.try_into().map_err(|e: toml::de::Error| Error::Config(e.to_string()))
}

fn parse_value(raw: &str) -> toml::Value {
    format!("v = {raw}")
        .parse::<toml::Table>()
        .ok()
        .and_then(|mut t| t.remove("v"))
        .unwrap_or_else(|| toml::Value::String(raw.to_string()))
}

/// Reject keys the config does not have, so typos fail loudly.
fn check_keys(given: &toml::Table, known: &toml::Table, prefix: &str) -> Result<()> {
    for (k, v) in given {
        let path = format!("{prefix}{k}");
        match known.get(k) {
            None => return Err(Error::Config(format!("unknown key `{path}`"))),
            Some(toml::Value::Table(inner)) => {
                if let toml::Value::Table(g) = v {
                    check_keys(g, inner, &format!("{path}."))?;
                }
            }
            Some(_) => {}
        }
    }
    Ok(())
}
