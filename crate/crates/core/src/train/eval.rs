//! Evaluation suites producing one CSV row per image and perturbation.

use std::collections::BTreeMap;
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::data::Dataset;
use crate::error::{io_at, Error, Result};
use crate::image::Image;
use crate::losses::LossConfig;
use crate::masking::{MaskConfig, MaskStrategy};
use crate::metrics::{depth_metrics, DepthEval, DepthMetrics};
use crate::model::DepthPredictor;
use crate::robustness::{
    corrupt, occlude, targeted_flip_attack, untargeted_attack, AttackMode, CorruptionKind, CorruptionSpec,
    FlipDirection, OcclusionSpec, SeverityTable,
};
use crate::{parallel, seeds};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Suite {
    Clean,
    Corruption,
    Occlusion,
    Attack,
}

impl Suite {
    pub fn as_str(self) -> &'static str {
        match self {
            Suite::Clean => "clean",
            Suite::Corruption => "corruption",
            Suite::Occlusion => "occlusion",
            Suite::Attack => "attack",
        }
    }
}

impl std::str::FromStr for Suite {
    type Err = Error;
    fn from_str(s: &str) -> Result<Self> {
        match s {
            "clean" => Ok(Suite::Clean),
            "corruption" => Ok(Suite::Corruption),
            "occlusion" => Ok(Suite::Occlusion),
            "attack" => Ok(Suite::Attack),
            _ => Err(Error::Config(format!("unknown suite `{s}` (clean, corruption, occlusion, attack)"))),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct SuiteParams {
    pub eval: DepthEval,
    /// evaluate the first `max_images` triplets (0 = all)
    pub max_images: usize,
    pub seed: u64,
    pub corruptions: Vec<CorruptionKind>,
    pub severities: Vec<u8>,
    pub table: SeverityTable,
    pub occlusion_strategies: Vec<MaskStrategy>,
    pub occlusion: MaskConfig,
    pub attacks: Vec<AttackMode>,
    pub epsilons: Vec<f64>,
    pub loss: LossConfig,
}

impl Default for SuiteParams {
    fn default() -> Self {
        SuiteParams {
            eval: DepthEval::default(),
            max_images: 0,
            seed: 0,
            corruptions: CorruptionKind::ALL.to_vec(),
            severities: vec![1, 2, 3, 4, 5],
            table: SeverityTable::default(),
            occlusion_strategies: vec![MaskStrategy::Blockwise, MaskStrategy::Random],
            occlusion: MaskConfig::default(),
            attacks: vec![AttackMode::Untargeted, AttackMode::FlipHorizontal, AttackMode::FlipVertical],
            epsilons: vec![1.0, 2.0, 4.0, 8.0, 16.0],
            loss: LossConfig::default(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EvalRow {
    pub run_id: String,
    pub suite: String,
    pub perturbation: String,
    /// severity, ε, or 0 for clean rows
    pub level: f64,
    /// complete, unmasked or masked
    pub region: String,
    /// triplet index
    pub image: usize,
    pub rmse: f64,
    pub delta1: f64,
    pub delta2: f64,
    pub delta3: f64,
}

struct RowKey<'a> {
    perturbation: &'a str,
    level: f64,
    region: &'a str,
    image: usize,
}

fn row(run_id: &str, suite: Suite, k: RowKey, m: &DepthMetrics) -> EvalRow {
    EvalRow {
        run_id: run_id.to_string(),
        suite: suite.as_str().to_string(),
        perturbation: k.perturbation.to_string(),
        level: k.level,
        region: k.region.to_string(),
        image: k.image,
        rmse: m.rmse,
        delta1: m.delta1,
        delta2: m.delta2,
        delta3: m.delta3,
    }
}

fn mismatch(suite: Suite, what: &str) -> Error {
    Error::Config(format!("suite `{}` needs {what}", suite.as_str()))
}

/// Score `predictor` on one suite over the dataset's triplet centres.
pub fn evaluate(
    predictor: &dyn DepthPredictor,
    ds: &Dataset,
    suite: Suite,
    params: &SuiteParams,
    run_id: &str,
) -> Result<Vec<EvalRow>> {
    let n = if params.max_images == 0 {
        ds.len()
    } else {
        params.max_images.min(ds.len())
    };
    let workers = parallel::threads();
    let per_image = |f: &(dyn Fn(usize) -> Result<Vec<EvalRow>> + Sync)| -> Result<Vec<EvalRow>> {
        Ok(parallel::map_indexed(n, workers, f)?.into_iter().flatten().collect())
    };
    let score = |img: &Image, i: usize, region: Option<&[bool]>| -> Result<DepthMetrics> {
        let pred = predictor.predict(&[img])?;
        Ok(depth_metrics(&pred[0], ds.triplet(i).depth, region, &params.eval)?)
    };
    let single = |i: usize, perturbation: &str, level: f64, m: &DepthMetrics| {
        let key = RowKey {
            perturbation,
            level,
            region: "complete",
            image: i,
        };
        vec![row(run_id, suite, key, m)]
    };
    let mut rows = Vec::new();
    match suite {
        Suite::Clean => {
            rows = per_image(&|i| Ok(single(i, "none", 0.0, &score(ds.triplet(i).frames[1], i, None)?)))?;
        }
        Suite::Corruption => {
            if params.corruptions.is_empty() || params.severities.is_empty() {
                return Err(mismatch(suite, "corruption kinds and severities"));
            }
            for &kind in &params.corruptions {
                for &s in &params.severities {
                    rows.extend(per_image(&|i| {
                        let seed = seeds::derive(params.seed, &[seeds::stream::CORRUPT, i as u64]);
                        let img = corrupt(ds.triplet(i).frames[1], &CorruptionSpec::new(kind, s, seed)?, &params.table)?;
                        Ok(single(i, kind.as_str(), s as f64, &score(&img, i, None)?))
                    })?);
                }
            }
        }
        Suite::Occlusion => {
            if params.occlusion_strategies.is_empty() {
                return Err(mismatch(suite, "occlusion strategies"));
            }
            for &strategy in &params.occlusion_strategies {
                rows.extend(per_image(&|i| {
                    let spec = OcclusionSpec {
                        strategy,
                        mask: params
                            .occlusion
                            .with_seed(seeds::derive(params.seed, &[seeds::stream::OCCLUDE, i as u64])),
                    };
                    let occ = occlude(ds.triplet(i).frames[1], &spec)?;
                    let pred = predictor.predict(&[&occ.image])?;
                    let unmasked: Vec<bool> = occ.pixels.iter().map(|m| !m).collect();
                    let mut out = Vec::with_capacity(3);
                    for (region, mask) in [("complete", None), ("unmasked", Some(&unmasked)), ("masked", Some(&occ.pixels))] {
                        let m = depth_metrics(&pred[0], ds.triplet(i).depth, mask.map(|v| v.as_slice()), &params.eval)?;
                        let key = RowKey {
                            perturbation: strategy.as_str(),
                            level: params.occlusion.ratio,
                            region,
                            image: i,
                        };
                        out.push(row(run_id, suite, key, &m));
                    }
                    Ok(out)
                })?);
            }
        }
        Suite::Attack => {
            let model = predictor
                .model()
                .ok_or_else(|| Error::Config("attacks need a model with gradient support".into()))?;
            if params.attacks.is_empty() || params.epsilons.is_empty() {
                return Err(mismatch(suite, "attack modes and epsilons"));
            }
            for &mode in &params.attacks {
                for &eps in &params.epsilons {
                    rows.extend(per_image(&|i| {
                        let t = ds.triplet(i);
                        let adv = match mode {
                            AttackMode::Untargeted => untargeted_attack(model, t.frames, &ds.intrinsics, eps, &params.loss)?,
                            AttackMode::FlipHorizontal => {
                                targeted_flip_attack(model, t.frames[1], eps, FlipDirection::Horizontal)?
                            }
                            AttackMode::FlipVertical => targeted_flip_attack(model, t.frames[1], eps, FlipDirection::Vertical)?,
                        };
                        Ok(single(i, mode.as_str(), eps, &score(&adv.image, i, None)?))
                    })?);
                }
            }
        }
    }
    Ok(rows)
}

pub fn write_csv(path: &Path, rows: &[EvalRow]) -> Result<()> {
    if let Some(dir) = path.parent().filter(|d| !d.as_os_str().is_empty()) {
        std::fs::create_dir_all(dir).map_err(io_at(dir))?;
    }
    let mut w = csv::Writer::from_path(path)?;
    for r in rows {
        w.serialize(r)?;
    }
    w.flush().map_err(io_at(path))?;
    Ok(())
}

pub fn read_csv(path: &Path) -> Result<Vec<EvalRow>> {
    let mut r = csv::Reader::from_path(path)?;
    Ok(r.deserialize().collect::<std::result::Result<_, _>>()?)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SummaryRow {
    pub run_id: String,
    pub suite: String,
    pub perturbation: String,
    pub level: f64,
    pub region: String,
    pub images: usize,
    pub rmse: f64,
    pub delta1: f64,
}

/// Mean RMSE and δ1 per (run, suite, perturbation, level, region), in first
/// appearance order.
pub fn summarize(rows: &[EvalRow]) -> Vec<SummaryRow> {
    let mut order = Vec::new();
    let mut acc: BTreeMap<(String, String, String, u64, String), (usize, f64, f64)> = BTreeMap::new();
    for r in rows {
        let key = (r.run_id.clone(), r.suite.clone(), r.perturbation.clone(), r.level.to_bits(), r.region.clone());
        let e = acc.entry(key.clone()).or_insert_with(|| {
            order.push(key);
            (0, 0.0, 0.0)
        });
        e.0 += 1;
        e.1 += r.rmse;
        e.2 += r.delta1;
    }
    order
        .into_iter()
        .map(|k| {
            let (n, rmse, d1) = acc[&k];
            SummaryRow {
                run_id: k.0,
                suite: k.1,
                perturbation: k.2,
                level: f64::from_bits(k.3),
                region: k.4,
                images: n,
                rmse: rmse / n as f64,
                delta1: d1 / n as f64,
            }
        })
        .collect()
}
