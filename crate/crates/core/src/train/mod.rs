//! Joint training of the depth and ego-motion networks, evaluation suites
//! and the ablation grid.

mod ablation;
mod config;
mod eval;
mod optim;
pub mod plot;

pub use ablation::{ablation_grid, default_arms, AblationReport, Arm, ArmResult};
pub use config::{toml_with_overrides, MaskTarget, MaskingSection, OptimConfig, RunSection, TrainConfig};
pub use eval::{evaluate, summarize, write_csv, read_csv, EvalRow, Suite, SuiteParams, SummaryRow};
pub use optim::{adamw_step, AdamW, AdamWParams, Moments};

use std::path::Path;
use std::time::Instant;

use rand::seq::index::sample;
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::data::Dataset;
use crate::error::{io_at, Error, Result};
use crate::geometry::GeometryError;
use crate::losses::LossError;
use crate::masking::batch_masks;
use crate::model::{joint_loss, Frames, Masks, Model};
use crate::nn::{write_checkpoint, ParamStore, DEPTH, EGO};
use crate::seeds;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct EpochLoss {
    pub epoch: usize,
    pub lr: f64,
    pub total: f64,
    pub photometric: f64,
    pub smoothness: f64,
}

/// Objective on the fixed probe triplets, unmasked and over the complete
/// image.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Probe {
    pub total: f64,
    pub photometric: f64,
    pub smoothness: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunRecord {
    pub config: TrainConfig,
    pub epochs: Vec<EpochLoss>,
    pub probe_initial: Probe,
    pub probe_final: Probe,
    /// SHA-256 of the serialized final checkpoint
    pub checkpoint_sha256: String,
    pub num_params: usize,
    pub steps: usize,
    pub wall_seconds: f64,
}

impl RunRecord {
    pub fn probe_ratio(&self) -> f64 {
        self.probe_final.total / self.probe_initial.total
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        std::fs::write(path, serde_json::to_string_pretty(self)?).map_err(io_at(path))
    }

    pub fn load(path: &Path) -> Result<RunRecord> {
        let text = std::fs::read_to_string(path).map_err(io_at(path))?;
        Ok(serde_json::from_str(&text)?)
    }
}

pub struct TrainOutcome {
    pub model: Model,
    pub record: RunRecord,
}

/// Progress callback payload.
#[derive(Debug, Clone, Copy)]
pub struct StepLog {
    pub step: usize,
    pub epoch: usize,
    pub lr: f64,
    pub total: f64,
    pub photometric: f64,
    pub smoothness: f64,
}

pub fn checkpoint_bytes(store: &ParamStore) -> Result<Vec<u8>> {
    let mut buf = Vec::new();
    write_checkpoint(store, &mut buf)?;
    Ok(buf)
}

pub fn sha256_hex(bytes: &[u8]) -> String {
    hex::encode(Sha256::digest(bytes))
}

fn check_dataset(cfg: &TrainConfig, ds: &Dataset) -> Result<()> {
    let v = &cfg.model.vit;
    if ds.is_empty() {
        return Err(Error::Config("dataset has no triplets".into()));
    }
    if (ds.intrinsics.width, ds.intrinsics.height) != (v.image_width, v.image_height) {
        return Err(Error::Config(format!(
            "dataset frames are {}x{} but the model expects {}x{}",
            ds.intrinsics.width, ds.intrinsics.height, v.image_width, v.image_height
        )));
    }
    Ok(())
}

/// Triplet indices of one step, drawn without replacement.
pub fn batch_indices(cfg: &TrainConfig, n: usize, step: usize) -> Vec<usize> {
    let mut rng = seeds::rng(seeds::derive(cfg.run.seed, &[seeds::stream::BATCH, step as u64]));
    let b = cfg.run.batch_size.min(n);
    sample(&mut rng, n, b).into_vec()
}

/// Masks of one step per `cfg.masking`.
pub fn step_masks(cfg: &TrainConfig, step: usize, batch: usize) -> Result<Masks> {
    let m = &cfg.masking;
    let v = &cfg.model.vit;
    let draw = |stream: u64, strategy, count| {
        let mc = m.mask_config(seeds::derive(cfg.run.seed, &[stream, step as u64]));
        batch_masks(strategy, &mc, v.image_height, v.image_width, v.patch_edge, count)
    };
    Ok(Masks {
        depth: if m.target.depth() {
            Some(draw(seeds::stream::DEPTH_MASK, m.depth_strategy, batch)?)
        } else {
            None
        },
        ego: if m.target.ego() {
            Some(draw(seeds::stream::EGO_MASK, m.ego_strategy, 2 * batch)?)
        } else {
            None
        },
    })
}

/// A diverged depth network surfaces as a geometry error before any loss
/// value exists.
fn non_finite_depth(e: &Error) -> bool {
    let g = match e {
        Error::Geometry(g) | Error::Loss(LossError::Geometry(g)) => g,
        _ => return false,
    };
    matches!(g, GeometryError::NonPositiveDepth(v) if !v.is_finite())
}

/// Unmasked complete-image objective of `store` on the probe triplets.
pub fn probe(cfg: &TrainConfig, store: &ParamStore, ds: &Dataset) -> Result<Probe> {
    let n = cfg.run.probe_triplets.clamp(1, ds.len());
    let loss_cfg = crate::losses::LossConfig {
        region: crate::losses::LossRegion::Complete,
        ..cfg.loss
    };
    let p = store.constants();
    let mut acc = [0.0; 3];
    let idx: Vec<usize> = (0..n).collect();
    let chunks: Vec<&[usize]> = idx.chunks(cfg.run.batch_size.max(1)).collect();
    for c in &chunks {
        let frames = Frames::from_dataset(ds, c)?;
        let out = match joint_loss(&p, &cfg.model, &frames, &ds.intrinsics, &Masks::none(), &loss_cfg) {
            Err(e) if non_finite_depth(&e) => {
                return Ok(Probe {
                    total: f64::NAN,
                    photometric: f64::NAN,
                    smoothness: f64::NAN,
                })
            }
            r => r?,
        };
        let w = c.len() as f64 / n as f64;
        acc[0] += w * out.loss.total.item();
        acc[1] += w * out.loss.photometric;
        acc[2] += w * out.loss.smoothness;
    }
    Ok(Probe {
        total: acc[0],
        photometric: acc[1],
        smoothness: acc[2],
    })
}

/// Train both networks with a common loss. `on_step` sees every step.
pub fn train(cfg: &TrainConfig, ds: &Dataset, mut on_step: impl FnMut(&StepLog)) -> Result<TrainOutcome> {
    cfg.validate()?;
    check_dataset(cfg, ds)?;
    let start = Instant::now();
    let mut store = ParamStore::init(cfg.model, cfg.run.seed)?;
    let probe_initial = probe(cfg, &store, ds)?;
    let mut opt = AdamW::new(AdamWParams {
        beta1: cfg.optim.beta1,
        beta2: cfg.optim.beta2,
        eps: cfg.optim.eps,
        weight_decay: cfg.optim.weight_decay,
    });
    let mut epochs = Vec::with_capacity(cfg.run.epochs);
    for epoch in 0..cfg.run.epochs {
        let lr = cfg.lr_at(epoch);
        let mut acc = [0.0; 3];
        for s in 0..cfg.run.steps_per_epoch {
            let step = epoch * cfg.run.steps_per_epoch + s;
            let idx = batch_indices(cfg, ds.len(), step);
            let frames = Frames::from_dataset(ds, &idx)?;
            let masks = step_masks(cfg, step, idx.len())?;
            let p = store.leaves();
            let out = match joint_loss(&p, &cfg.model, &frames, &ds.intrinsics, &masks, &cfg.loss) {
                Err(e) if non_finite_depth(&e) => {
                    return Err(Error::NonFinite {
                        step,
                        lr,
                        photometric: f64::NAN,
                        smoothness: f64::NAN,
                    })
                }
                r => r?,
            };
            let total = out.loss.total.item();
            if !total.is_finite() {
                return Err(Error::NonFinite {
                    step,
                    lr,
                    photometric: out.loss.photometric,
                    smoothness: out.loss.smoothness,
                });
            }
            out.loss.total.backward()?;
            let grads = p.grads();
            if grads.values().flatten().any(|g| !g.is_finite()) {
                return Err(Error::NonFinite {
                    step,
                    lr,
                    photometric: out.loss.photometric,
                    smoothness: out.loss.smoothness,
                });
            }
            opt.step(&mut store, &grads, lr)?;
            acc[0] += total;
            acc[1] += out.loss.photometric;
            acc[2] += out.loss.smoothness;
            on_step(&StepLog {
                step,
                epoch,
                lr,
                total,
                photometric: out.loss.photometric,
                smoothness: out.loss.smoothness,
            });
        }
        let n = cfg.run.steps_per_epoch as f64;
        epochs.push(EpochLoss {
            epoch,
            lr,
            total: acc[0] / n,
            photometric: acc[1] / n,
            smoothness: acc[2] / n,
        });
    }
    let probe_final = probe(cfg, &store, ds)?;
    let digest = sha256_hex(&checkpoint_bytes(&store)?);
    let record = RunRecord {
        config: cfg.clone(),
        epochs,
        probe_initial,
        probe_final,
        checkpoint_sha256: digest,
        num_params: store.num_params(),
        steps: cfg.total_steps(),
        wall_seconds: start.elapsed().as_secs_f64(),
    };
    Ok(TrainOutcome {
        model: Model::new(store),
        record,
    })
}

/// Gradient magnitude of each network after one backward pass of the common
/// loss, for checking that both networks are coupled.
pub fn gradient_norms(cfg: &TrainConfig, store: &ParamStore, ds: &Dataset, step: usize) -> Result<[f64; 2]> {
    let idx = batch_indices(cfg, ds.len(), step);
    let frames = Frames::from_dataset(ds, &idx)?;
    let masks = step_masks(cfg, step, idx.len())?;
    let p = store.leaves();
    joint_loss(&p, &cfg.model, &frames, &ds.intrinsics, &masks, &cfg.loss)?
        .loss
        .total
        .backward()?;
    let mut norms = [0.0; 2];
    for (name, g) in p.grads() {
        let slot = if name.starts_with(&format!("{DEPTH}.")) {
            0
        } else if name.starts_with(&format!("{EGO}.")) {
            1
        } else {
            continue;
        };
        norms[slot] += g.iter().map(|v| v * v).sum::<f64>();
    }
    Ok(norms.map(f64::sqrt))
}
