//! Ablation grid over masking target, strategy, size, ratio and loss region.

use std::fmt::Write as _;
use std::path::Path;

use serde::{Deserialize, Serialize};

use super::eval::{evaluate, Suite, SuiteParams};
use super::{train, MaskTarget, RunRecord, StepLog, TrainConfig};
use crate::data::Dataset;
use crate::error::{io_at, Result};
use crate::losses::LossRegion;
use crate::masking::MaskStrategy;
use crate::nn::save_checkpoint;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Arm {
    pub name: String,
    /// strategy of each network's mask, `None` = unmasked
    pub depth: Option<MaskStrategy>,
    pub ego: Option<MaskStrategy>,
    pub size: usize,
    pub ratio: f64,
    pub region: LossRegion,
}

impl Arm {
    pub fn apply(&self, base: &TrainConfig, seed: u64) -> TrainConfig {
        let mut cfg = base.clone();
        cfg.run.seed = seed;
        cfg.masking.target = match (self.depth, self.ego) {
            (Some(_), Some(_)) => MaskTarget::Both,
            (Some(_), None) => MaskTarget::DepthOnly,
            (None, Some(_)) => MaskTarget::EgoOnly,
            (None, None) => MaskTarget::None,
        };
        if let Some(s) = self.depth {
            cfg.masking.depth_strategy = s;
        }
        if let Some(s) = self.ego {
            cfg.masking.ego_strategy = s;
        }
        cfg.masking.size = self.size;
        cfg.masking.ratio = self.ratio;
        cfg.loss.region = self.region;
        cfg
    }

    fn label(s: Option<MaskStrategy>) -> &'static str {
        match s {
            Some(MaskStrategy::Blockwise) => "B",
            Some(MaskStrategy::Random) => "R",
            None => "-",
        }
    }
}

/// Four strategy arms and three size/ratio/loss arms; the blockwise
/// depth-only arm at the base size and ratio is shared. The larger-size arm
/// doubles the base cell edge.
pub fn default_arms(base: &TrainConfig) -> Vec<Arm> {
    let (size, ratio) = (base.masking.size, base.masking.ratio);
    let b = Some(MaskStrategy::Blockwise);
    let r = Some(MaskStrategy::Random);
    let arm = |name: &str, depth, ego, size, ratio, region| Arm {
        name: name.into(),
        depth,
        ego,
        size,
        ratio,
        region,
    };
    vec![
        arm("B/-", b, None, size, ratio, LossRegion::Complete),
        arm("R/-", r, None, size, ratio, LossRegion::Complete),
        arm("B/B", b, b, size, ratio, LossRegion::Complete),
        arm("B/R", b, r, size, ratio, LossRegion::Complete),
        arm("ratio40", b, None, size, 0.40, LossRegion::Complete),
        arm("size2x", b, None, 2 * size, ratio, LossRegion::Complete),
        arm("masked-loss", b, None, size, ratio, LossRegion::MaskedOnly),
    ]
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ArmResult {
    pub arm: String,
    pub seed: u64,
    pub record: RunRecord,
    /// mean RMSE over the evaluation images
    pub clean: f64,
    pub blockwise: f64,
    pub random: f64,
}

impl ArmResult {
    pub fn mean(&self) -> f64 {
        (self.clean + self.blockwise + self.random) / 3.0
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AblationReport {
    pub arms: Vec<Arm>,
    pub seeds: Vec<u64>,
    pub results: Vec<ArmResult>,
}

fn mean(v: impl Iterator<Item = f64>) -> f64 {
    let (s, n) = v.fold((0.0, 0usize), |(s, n), x| (s + x, n + 1));
    s / n as f64
}

impl AblationReport {
    /// Seed-mean (clean, blockwise, random, overall) RMSE of one arm.
    pub fn cell(&self, arm: &str) -> [f64; 4] {
        let rs: Vec<&ArmResult> = self.results.iter().filter(|r| r.arm == arm).collect();
        [
            mean(rs.iter().map(|r| r.clean)),
            mean(rs.iter().map(|r| r.blockwise)),
            mean(rs.iter().map(|r| r.random)),
            mean(rs.iter().map(|r| r.mean())),
        ]
    }

    /// Arm names sorted by mean RMSE over clean and both occlusions.
    pub fn ordering(&self) -> Vec<String> {
        let mut names: Vec<(f64, String)> = self.arms.iter().map(|a| (self.cell(&a.name)[3], a.name.clone())).collect();
        names.sort_by(|a, b| a.0.total_cmp(&b.0));
        names.into_iter().map(|(_, n)| n).collect()
    }

    /// Markdown table shaped like the strategy and size/ratio/loss tables,
    /// cells are means over seeds.
    pub fn table(&self) -> String {
        let mut s = String::new();
        let _ = writeln!(s, "| arm | depth | ego | size | ratio | loss | clean | blockwise | random | mean |");
        let _ = writeln!(s, "|---|---|---|---|---|---|---|---|---|---|");
        for a in &self.arms {
            let c = self.cell(&a.name);
            let loss = match a.region {
                LossRegion::Complete => "complete",
                LossRegion::MaskedOnly => "masked",
            };
            let _ = writeln!(
                s,
                "| {} | {} | {} | {} | {:.0}% | {} | {:.4} | {:.4} | {:.4} | {:.4} |",
                a.name,
                Arm::label(a.depth),
                Arm::label(a.ego),
                a.size,
                a.ratio * 100.0,
                loss,
                c[0],
                c[1],
                c[2],
                c[3]
            );
        }
        let _ = writeln!(s, "\nseeds: {:?}; ordering by mean RMSE: {}", self.seeds, self.ordering().join(" < "));
        s
    }
}

/// Train every arm for every seed on `train_ds` and score clean and both
/// occlusion variants on `eval_ds`. With `out_dir`, checkpoints, run records
/// and per-image CSVs are written there.
pub fn ablation_grid(
    base: &TrainConfig,
    arms: &[Arm],
    seeds: &[u64],
    train_ds: &Dataset,
    eval_ds: &Dataset,
    params: &SuiteParams,
    out_dir: Option<&Path>,
    mut on_step: impl FnMut(&str, u64, &StepLog),
) -> Result<AblationReport> {
    if let Some(d) = out_dir {
        std::fs::create_dir_all(d).map_err(io_at(d))?;
    }
    let mut results = Vec::new();
    for arm in arms {
        for &seed in seeds {
            let cfg = arm.apply(base, seed);
            let out = train(&cfg, train_ds, |log| on_step(&arm.name, seed, log))?;
            let id = format!("{}-seed{}", arm.name.replace('/', "_"), seed);
            let clean = evaluate(&out.model, eval_ds, Suite::Clean, params, &id)?;
            let occ_params = SuiteParams {
                occlusion_strategies: vec![MaskStrategy::Blockwise, MaskStrategy::Random],
                ..params.clone()
            };
            let occ = evaluate(&out.model, eval_ds, Suite::Occlusion, &occ_params, &id)?;
            let pick = |p: &str| mean(occ.iter().filter(|r| r.perturbation == p && r.region == "complete").map(|r| r.rmse));
            let result = ArmResult {
                arm: arm.name.clone(),
                seed,
                clean: mean(clean.iter().map(|r| r.rmse)),
                blockwise: pick("blockwise"),
                random: pick("random"),
                record: out.record,
            };
            if let Some(d) = out_dir {
                save_checkpoint(&out.model.store, &d.join(format!("{id}.ckpt")))?;
                result.record.save(&d.join(format!("{id}.json")))?;
                let mut rows = clean;
                rows.extend(occ);
                super::write_csv(&d.join(format!("{id}.csv")), &rows)?;
            }
            results.push(result);
        }
    }
    Ok(AblationReport {
        arms: arms.to_vec(),
        seeds: seeds.to_vec(),
        results,
    })
}
