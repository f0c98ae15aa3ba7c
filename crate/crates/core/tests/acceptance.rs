//! Acceptance suite: one PASS/FAIL line per criterion. Criterion 7 is
//! reported but does not gate the exit status.

use std::panic::{catch_unwind, AssertUnwindSafe};
use std::time::Instant;

use mimdepth::data::{Dataset, SceneSpec};
use mimdepth::geometry::{axis_angle_to_matrix, backproject, bilinear_sample, project, synthesize_target, DepthMap, Intrinsics, Pose, PoseTensor};
use mimdepth::gradcheck::{fixture, GradCheck, GradReport};
use mimdepth::image::{read_pfm, read_ppm, write_pfm, write_ppm, Image};
use mimdepth::losses::{
    box_filter, depth_loss, l1_photometric, photometric_map, smoothness_loss, ssim_loss, ssim_map, DepthLossInputs, LossConfig, LossWeights, PhotometricCombine,
};
use mimdepth::masking::{apply_mask, blockwise_mask, random_mask, MaskConfig, MaskStrategy};
use mimdepth::metrics::{chain, depth_metrics, odometry_metrics, DepthEval, SEGMENTS};
use mimdepth::model::{joint_loss, predict_poses, ConstantDepth, Frames, Masks, Model};
use mimdepth::nn::read_checkpoint;
use mimdepth::robustness::{
    corrupt, occlude, targeted_flip_attack, untargeted_attack, CorruptionKind, CorruptionSpec, FlipDirection,
    OcclusionSpec, SeverityTable,
};
use mimdepth::tensor::{PadMode, Result as TResult, TensorError};
use mimdepth::train::{
    ablation_grid, checkpoint_bytes, default_arms, evaluate, train, EvalRow, Suite, SuiteParams, TrainConfig,
};
use mimdepth::Tensor;

const TRAIN_TRIPLETS: usize = 200;
const EVAL_TRIPLETS: usize = 32;
const EVAL_SEED: u64 = 1000;

struct Outcome {
    pass: bool,
    detail: String,
}

fn outcome(pass: bool, detail: String) -> Outcome {
    Outcome { pass, detail }
}

struct Suite_ {
    failures: usize,
}

impl Suite_ {
    fn run(&mut self, id: &str, name: &str, gating: bool, f: impl FnOnce() -> Outcome) {
        let start = Instant::now();
        let res = catch_unwind(AssertUnwindSafe(f)).unwrap_or_else(|e| {
            let msg = e
                .downcast_ref::<String>()
                .cloned()
                .or_else(|| e.downcast_ref::<&str>().map(|s| s.to_string()))
                .unwrap_or_default();
            outcome(false, format!("panicked: {msg}"))
        });
        let secs = start.elapsed().as_secs_f64();
        let tag = match (res.pass, gating) {
            (true, _) => "PASS",
            (false, true) => "FAIL",
            (false, false) => "MISS",
        };
        let gate = if gating { "" } else { " (reported, non-gating)" };
        println!("[{tag}] {id} {name}{gate}: {} [{secs:.1}s]", res.detail);
        if gating && !res.pass {
            self.failures += 1;
        }
    }
}

fn eval_data() -> Dataset {
    Dataset::generate(
        &SceneSpec {
            seed: EVAL_SEED,
            ..SceneSpec::default()
        },
        EVAL_TRIPLETS,
    )
    .unwrap()
}

fn mean(v: impl IntoIterator<Item = f64>) -> f64 {
    let (s, n) = v.into_iter().fold((0.0, 0usize), |(s, n), x| (s + x, n + 1));
    s / n as f64
}

fn median(mut v: Vec<f64>) -> f64 {
    v.sort_by(f64::total_cmp);
    let n = v.len();
    if n % 2 == 1 {
        v[n / 2]
    } else {
        0.5 * (v[n / 2 - 1] + v[n / 2])
    }
}

// ---------------------------------------------------------------- criterion 1

fn weighted(y: &Tensor, seed: u64) -> TResult<Tensor> {
    let w = Tensor::new(fixture(y.numel(), seed ^ 0xabc, -1.0, 1.0), y.shape())?;
    Ok(y.mul(&w)?.sum_all())
}

fn signed_away_from_zero(n: usize, seed: u64) -> Vec<f64> {
    fixture(n, seed, 0.1, 1.0)
        .into_iter()
        .zip(fixture(n, seed + 7, -1.0, 1.0))
        .map(|(m, s)| if s < 0.0 { -m } else { m })
        .collect()
}

fn terr<E: std::fmt::Display>(e: E) -> TensorError {
    TensorError::Invalid(e.to_string())
}

type Case = (&'static str, bool, fn(u64) -> GradReport);

fn gc(inputs: &[(Vec<f64>, Vec<usize>)], f: impl Fn(&[Tensor]) -> TResult<Tensor>) -> GradReport {
    GradCheck::default().run(inputs, f).unwrap()
}

fn inp(shape: &[usize], seed: u64, lo: f64, hi: f64) -> (Vec<f64>, Vec<usize>) {
    (fixture(shape.iter().product(), seed, lo, hi), shape.to_vec())
}

fn small_k() -> Intrinsics {
    Intrinsics::new(6.0, 6.0, 3.5, 2.5, 8, 6).unwrap()
}

fn pose_pair(x: &Tensor, row: usize) -> TResult<PoseTensor> {
    Ok(PoseTensor {
        rotation: x.slice(0, row, row + 1)?,
        translation: x.slice(0, row + 1, row + 2)?,
    })
}

fn small_pose(seed: u64, rows: usize) -> (Vec<f64>, Vec<usize>) {
    let mut v = fixture(rows * 3, seed, -0.05, 0.05);
    for r in (1..rows).step_by(2) {
        for c in 0..3 {
            v[r * 3 + c] *= 2.0;
        }
    }
    (v, vec![rows, 3])
}

/// Finite differences are only meaningful away from the kinks of bilinear
/// sampling: every warped coordinate must sit at least 1e-3 from an integer
/// (pixel centres) or half-integer (the validity border) so the h=1e-5 probe
/// never crosses one.
fn smooth_warp(depth: &[f64], pose: &[f64], rows: &[usize]) -> bool {
    let d = Tensor::new(depth.to_vec(), &[1, 6, 8]).unwrap();
    let x = Tensor::new(pose.to_vec(), &[pose.len() / 3, 3]).unwrap();
    let pts = backproject(&d, &small_k()).unwrap();
    rows.iter().all(|&r| {
        let (grid, _) = project(&pts, &pose_pair(&x, r).unwrap(), &small_k()).unwrap();
        grid.data().iter().all(|c| (2.0 * c - (2.0 * c).round()).abs() > 2e-3)
    })
}

/// First seed at or after `s` (in steps of 7919) whose depth and pose fixtures
/// give a kink-free warp.
fn smooth_seed(s: u64, pose_rows: usize) -> u64 {
    let rows: Vec<usize> = (0..pose_rows).step_by(2).collect();
    (0..)
        .map(|k| s + 7919 * k)
        .find(|&c| smooth_warp(&inp(&[1, 6, 8], c, 1.0, 3.0).0, &small_pose(c + 1, pose_rows).0, &rows))
        .unwrap()
}

fn loss_images(s: u64) -> [Tensor; 3] {
    [1, 2, 3].map(|k| Tensor::new(fixture(48 * 3, s * 10 + k, 0.0, 1.0), &[1, 6, 8, 3]).unwrap())
}

/// Like `smooth_seed`, and additionally keeps every L1 residual away from zero
/// and, under the per-pixel minimum, the two sources' errors apart.
fn smooth_loss_seed(s: u64, combine: PhotometricCombine) -> u64 {
    let ok = |c: u64| {
        let (depth, pose) = (inp(&[1, 6, 8], c, 1.0, 3.0).0, small_pose(c + 1, 4).0);
        if !smooth_warp(&depth, &pose, &[0, 2]) {
            return false;
        }
        let [target, s0, s1] = loss_images(c);
        let d = Tensor::new(depth, &[1, 6, 8]).unwrap();
        let x = Tensor::new(pose, &[4, 3]).unwrap();
        let mut maps = Vec::new();
        for (src, row) in [(&s0, 0), (&s1, 2)] {
            let (warped, valid) = synthesize_target(src, &d, &pose_pair(&x, row).unwrap(), &small_k()).unwrap();
            let near_zero = warped
                .data()
                .chunks(3)
                .zip(target.data().chunks(3))
                .zip(&valid)
                .any(|((w, t), &v)| v && w.iter().zip(t).any(|(a, b)| (a - b).abs() < 1e-3));
            if near_zero {
                return false;
            }
            let m = photometric_map(&warped, &target, &LossWeights::default(), 3).unwrap();
            maps.push((m.data().to_vec(), valid));
        }
        combine != PhotometricCombine::Min
            || (0..48).all(|p| !(maps[0].1[p] && maps[1].1[p]) || (maps[0].0[p] - maps[1].0[p]).abs() > 1e-4)
    };
    (0..).map(|k| s + 7919 * k).find(|&c| ok(c)).unwrap()
}

fn cases() -> Vec<Case> {
    vec![
        ("add", true, |s| gc(&[inp(&[3, 4], s, -1.0, 1.0), inp(&[4], s + 1, -1.0, 1.0)], |x| weighted(&x[0].add(&x[1])?, s))),
        ("sub", true, |s| gc(&[inp(&[2, 3], s, -1.0, 1.0), inp(&[2, 3], s + 1, -1.0, 1.0)], |x| weighted(&x[0].sub(&x[1])?, s))),
        ("mul", true, |s| gc(&[inp(&[3, 4], s, -1.0, 1.0), inp(&[3, 1], s + 1, -1.0, 1.0)], |x| weighted(&x[0].mul(&x[1])?, s))),
        ("div", true, |s| gc(&[inp(&[3, 4], s, -1.0, 1.0), inp(&[3, 4], s + 1, 0.5, 2.0)], |x| weighted(&x[0].div(&x[1])?, s))),
        ("min_pair", true, |s| {
            gc(&[inp(&[12], s, -1.0, 1.0), inp(&[12], s + 1, -1.0, 1.0)], |x| weighted(&x[0].min_pair(&x[1])?, s))
        }),
        ("max_pair", true, |s| {
            gc(&[inp(&[12], s, -1.0, 1.0), inp(&[12], s + 1, -1.0, 1.0)], |x| weighted(&x[0].max_pair(&x[1])?, s))
        }),
        ("neg", true, |s| gc(&[inp(&[7], s, -1.0, 1.0)], |x| weighted(&x[0].neg(), s))),
        ("exp", true, |s| gc(&[inp(&[7], s, -2.0, 2.0)], |x| weighted(&x[0].exp(), s))),
        ("log", true, |s| gc(&[inp(&[7], s, 0.2, 3.0)], |x| weighted(&x[0].log()?, s))),
        ("sigmoid", true, |s| gc(&[inp(&[7], s, -4.0, 4.0)], |x| weighted(&x[0].sigmoid(), s))),
        ("abs", true, |s| gc(&[(signed_away_from_zero(9, s), vec![9])], |x| weighted(&x[0].abs(), s))),
        ("sqrt", true, |s| gc(&[inp(&[7], s, 0.2, 3.0)], |x| weighted(&x[0].sqrt()?, s))),
        ("tanh", true, |s| gc(&[inp(&[7], s, -2.0, 2.0)], |x| weighted(&x[0].tanh(), s))),
        ("gelu", true, |s| gc(&[inp(&[9], s, -3.0, 3.0)], |x| weighted(&x[0].gelu(), s))),
        ("add_scalar", true, |s| gc(&[inp(&[5], s, -1.0, 1.0)], |x| weighted(&x[0].add_scalar(0.3), s))),
        ("mul_scalar", true, |s| gc(&[inp(&[5], s, -1.0, 1.0)], |x| weighted(&x[0].mul_scalar(-1.7), s))),
        ("pow_scalar", true, |s| gc(&[inp(&[6], s, 0.3, 2.0)], |x| weighted(&x[0].pow_scalar(2.5)?, s))),
        ("clamp", true, |s| gc(&[inp(&[10], s, -1.0, 1.0)], |x| weighted(&x[0].clamp(-0.5, 0.5), s))),
        ("matmul", true, |s| {
            gc(&[inp(&[2, 3, 4], s, -1.0, 1.0), inp(&[4, 2], s + 1, -1.0, 1.0)], |x| weighted(&x[0].matmul(&x[1])?, s))
        }),
        ("softmax", true, |s| gc(&[inp(&[3, 5], s, -2.0, 2.0)], |x| weighted(&x[0].softmax(1)?, s))),
        ("layer_norm", true, |s| {
            gc(&[inp(&[3, 6], s, -2.0, 2.0), inp(&[6], s + 1, 0.5, 1.5), inp(&[6], s + 2, -0.5, 0.5)], |x| {
                weighted(&x[0].layer_norm(1, &x[1], &x[2], 1e-5)?, s)
            })
        }),
        ("sum", true, |s| gc(&[inp(&[2, 3, 4], s, -1.0, 1.0)], |x| weighted(&x[0].sum(&[0, 2], true)?, s))),
        ("mean", true, |s| gc(&[inp(&[2, 3, 4], s, -1.0, 1.0)], |x| weighted(&x[0].mean(&[1], false)?, s))),
        ("sum_all/mean_all", true, |s| {
            gc(&[inp(&[2, 5], s, -1.0, 1.0)], |x| x[0].sum_all().mul(&x[0].mean_all()))
        }),
        ("reshape", true, |s| gc(&[inp(&[2, 6], s, -1.0, 1.0)], |x| weighted(&x[0].reshape(&[3, 4])?, s))),
        ("permute", true, |s| gc(&[inp(&[2, 3, 4], s, -1.0, 1.0)], |x| weighted(&x[0].permute(&[2, 0, 1])?, s))),
        ("transpose", true, |s| gc(&[inp(&[3, 4], s, -1.0, 1.0)], |x| weighted(&x[0].transpose(0, 1)?, s))),
        ("slice", true, |s| gc(&[inp(&[4, 5], s, -1.0, 1.0)], |x| weighted(&x[0].slice(1, 1, 4)?, s))),
        ("concat", true, |s| {
            gc(&[inp(&[2, 3], s, -1.0, 1.0), inp(&[2, 2], s + 1, -1.0, 1.0)], |x| {
                weighted(&Tensor::concat(&[x[0].clone(), x[1].clone()], 1)?, s)
            })
        }),
        ("pad", true, |s| {
            gc(&[inp(&[3, 4], s, -1.0, 1.0)], |x| {
                let a = x[0].pad(1, 2, 1, PadMode::Reflect)?;
                let b = x[0].pad(0, 1, 2, PadMode::Replicate)?;
                let c = x[0].pad(1, 1, 1, PadMode::Zero)?;
                weighted(&a, s)?.add(&weighted(&b, s + 1)?)?.add(&weighted(&c, s + 2)?)
            })
        }),
        ("shift", true, |s| {
            gc(&[inp(&[3, 5], s, -1.0, 1.0)], |x| {
                weighted(&x[0].shift(1, 2)?, s)?.add(&weighted(&x[0].shift(0, -1)?, s + 1)?)
            })
        }),
        ("axis_angle_to_matrix", true, |s| {
            gc(&[inp(&[3, 3], s, -1.5, 1.5)], |x| weighted(&axis_angle_to_matrix(&x[0])?, s))
        }),
        ("apply_mask", true, |s| {
            let cfg = MaskConfig {
                size: 1,
                ratio: 0.3,
                aspect: 0.3,
                seed: s,
            };
            let masks = vec![random_mask(&cfg, 3, 4).unwrap(), random_mask(&cfg.with_seed(s + 1), 3, 4).unwrap()];
            gc(&[inp(&[2, 12, 5], s, -1.0, 1.0), inp(&[5], s + 1, -1.0, 1.0)], move |x| {
                weighted(&apply_mask(&x[0], &masks, &x[1]).map_err(terr)?, s)
            })
        }),
        ("box_filter", true, |s| gc(&[inp(&[2, 5, 6, 2], s, -1.0, 1.0)], |x| weighted(&box_filter(&x[0], 3)?, s))),
        ("backproject", false, |s| {
            gc(&[inp(&[1, 6, 8], s, 0.5, 3.0)], |x| weighted(&backproject(&x[0], &small_k()).map_err(terr)?, s))
        }),
        ("project", false, |s| {
            gc(&[inp(&[1, 6, 8, 3], s, 0.5, 3.0), small_pose(s + 1, 2)], |x| {
                let p = pose_pair(&x[1], 0)?;
                weighted(&project(&x[0], &p, &small_k()).map_err(terr)?.0, s)
            })
        }),
        ("ssim_map", false, |s| {
            let b = Tensor::new(fixture(5 * 6 * 3, s + 3, 0.0, 1.0), &[1, 5, 6, 3]).unwrap();
            gc(&[inp(&[1, 5, 6, 3], s, 0.1, 0.9)], move |x| weighted(&ssim_map(&x[0], &b, 3).map_err(terr)?, s))
        }),
        ("l1_photometric", false, |s| {
            let b = Tensor::new(fixture(5 * 6 * 3, s + 3, 0.0, 1.0), &[1, 5, 6, 3]).unwrap();
            let valid: Vec<bool> = (0..30).map(|i| i % 4 != 1).collect();
            gc(&[inp(&[1, 5, 6, 3], s, 0.0, 1.0)], move |x| l1_photometric(&x[0], &b, &valid).map_err(terr))
        }),
        ("bilinear_sample", false, |s| {
            gc(&[inp(&[1, 5, 6, 3], s, 0.0, 1.0), inp(&[1, 4, 3, 2], s + 1, 0.3, 4.6)], |x| {
                weighted(&bilinear_sample(&x[0], &x[1], None).map_err(terr)?.0, s)
            })
        }),
        ("pose_inverse", false, |s| {
            gc(&[small_pose(s, 2)], |x| {
                let inv = pose_pair(&x[0], 0)?.inverse().map_err(terr)?;
                weighted(&Tensor::concat(&[inv.rotation, inv.translation], 1)?, s)
            })
        }),
        ("synthesize_target", false, |s| {
            let s = smooth_seed(s, 2);
            let src = Tensor::new(fixture(48 * 3, s + 5, 0.0, 1.0), &[1, 6, 8, 3]).unwrap();
            gc(&[inp(&[1, 6, 8], s, 1.0, 3.0), small_pose(s + 1, 2)], move |x| {
                let p = pose_pair(&x[1], 0)?;
                weighted(&synthesize_target(&src, &x[0], &p, &small_k()).map_err(terr)?.0, s)
            })
        }),
        ("ssim_loss", false, |s| {
            let b = Tensor::new(fixture(2 * 5 * 5 * 3, s + 3, 0.0, 1.0), &[2, 5, 5, 3]).unwrap();
            gc(&[inp(&[2, 5, 5, 3], s, 0.1, 0.9)], move |x| ssim_loss(&x[0], &b, 3).map_err(terr))
        }),
        ("photometric_map", false, |s| {
            let b = Tensor::new(fixture(5 * 6 * 3, s + 3, 0.0, 1.0), &[1, 5, 6, 3]).unwrap();
            gc(&[inp(&[1, 5, 6, 3], s, 0.0, 1.0)], move |x| {
                weighted(&photometric_map(&x[0], &b, &LossWeights::default(), 3).map_err(terr)?, s)
            })
        }),
        ("smoothness_loss", false, |s| {
            gc(&[inp(&[1, 5, 6], s, 0.2, 2.0), inp(&[1, 5, 6, 3], s + 1, 0.0, 1.0)], |x| {
                smoothness_loss(&x[0], &x[1]).map_err(terr)
            })
        }),
        ("depth_loss", false, |s| {
            let combine = if s % 2 == 0 { PhotometricCombine::Min } else { PhotometricCombine::Mean };
            let s = smooth_loss_seed(s, combine);
            let [target, s0, s1] = loss_images(s);
            gc(&[inp(&[1, 6, 8], s, 1.0, 3.0), small_pose(s + 1, 4)], move |x| {
                let (p0, p1) = (pose_pair(&x[1], 0)?, pose_pair(&x[1], 2)?);
                let disp = x[0].pow_scalar(-1.0)?;
                let inp = DepthLossInputs {
                    target: &target,
                    sources: [&s0, &s1],
                    depth: &x[0],
                    disparity: &disp,
                    poses: [&p0, &p1],
                    intrinsics: &small_k(),
                    mask: None,
                };
                let cfg = LossConfig {
                    combine,
                    ..LossConfig::default()
                };
                depth_loss(&inp, &cfg).map(|o| o.total).map_err(terr)
            })
        }),
    ]
}

fn criterion_1() -> Outcome {
    let start = Instant::now();
    let cases = cases();
    let per_case = 100;
    let (mut n, mut worst_p, mut worst_c) = (0, (0.0f64, ""), (0.0f64, ""));
    let mut failures = Vec::new();
    for (name, primitive, f) in &cases {
        for s in 0..per_case as u64 {
            let rep = f(1000 + 17 * s);
            n += 1;
            let (tol, worst) = if *primitive { (1e-5, &mut worst_p) } else { (1e-4, &mut worst_c) };
            if rep.max_rel_err > worst.0 {
                *worst = (rep.max_rel_err, name);
            }
            if !(rep.max_rel_err < tol) {
                let (i, e) = rep.worst;
                failures.push(format!(
                    "{name}#{s} {:.2e} (analytic {:.6e}, numeric {:.6e})",
                    rep.max_rel_err, rep.analytic[i][e], rep.numeric[i][e]
                ));
            }
        }
    }
    let secs = start.elapsed().as_secs_f64();
    let pass = failures.is_empty() && n >= 100 && secs < 120.0;
    outcome(
        pass,
        format!(
            "{n} instances over {} ops; worst primitive {:.2e} ({}) < 1e-5, worst composite {:.2e} ({}) < 1e-4; {secs:.1}s < 120s{}",
            cases.len(),
            worst_p.0,
            worst_p.1,
            worst_c.0,
            worst_c.1,
            if failures.is_empty() { String::new() } else { format!("; failures: {}", failures.join(", ")) }
        ),
    )
}

// ---------------------------------------------------------------- criterion 2

fn criterion_2() -> Outcome {
    let start = Instant::now();
    // 16-pixel cells on a 192×640 frame give the 12×40 = 480-cell grid
    let (h, w) = (192, 640);
    let n_cells = 480.0;
    let hi = 0.25 + 64.0 / n_cells;
    let want_random = (0.25f64 * n_cells).round() as usize;
    let (mut ratio_min, mut ratio_max) = (f64::INFINITY, 0.0f64);
    let (mut aspect_min, mut aspect_max) = (f64::INFINITY, 0.0f64);
    let (mut rounded_in, mut blocks) = (0usize, 0usize);
    let mut bad = Vec::new();
    for seed in 0..1000u64 {
        let cfg = MaskConfig {
            size: 16,
            ratio: 0.25,
            aspect: 0.3,
            seed,
        };
        let b = blockwise_mask(&cfg, h, w).unwrap();
        assert_eq!(b.gh * b.gw, 480);
        let r = b.count() as f64 / n_cells;
        ratio_min = ratio_min.min(r);
        ratio_max = ratio_max.max(r);
        if !(0.25..=hi).contains(&r) {
            bad.push(format!("seed {seed} ratio {r}"));
        }
        for blk in &b.blocks {
            aspect_min = aspect_min.min(blk.aspect);
            aspect_max = aspect_max.max(blk.aspect);
            if !(0.3..=1.0 / 0.3).contains(&blk.aspect) {
                bad.push(format!("seed {seed} aspect {}", blk.aspect));
            }
            let rr = blk.height as f64 / blk.width as f64;
            blocks += 1;
            if (0.3..=1.0 / 0.3).contains(&rr) {
                rounded_in += 1;
            }
        }
        let rm = random_mask(&cfg, h, w).unwrap();
        if rm.count() != want_random {
            bad.push(format!("seed {seed} random count {}", rm.count()));
        }
    }
    let secs = start.elapsed().as_secs_f64();
    outcome(
        bad.is_empty() && secs < 30.0,
        format!(
            "1000 seeds: blockwise ratio in [{ratio_min:.4}, {ratio_max:.4}] within [0.25, {hi:.4}]; sampled aspect in [{aspect_min:.3}, {aspect_max:.3}] within [0.3, 3.333] \
             ({:.1}% of rounded rectangles also in range); random exactly {want_random} cells; {secs:.1}s < 30s{}",
            100.0 * rounded_in as f64 / blocks as f64,
            if bad.is_empty() { String::new() } else { format!("; violations: {}", bad[..bad.len().min(5)].join(", ")) }
        ),
    )
}

// ---------------------------------------------------------------- criterion 3

fn criterion_3() -> Outcome {
    let k = Intrinsics::new(48.0, 48.0, 31.5, 31.5, 64, 64).unwrap();
    let mut ident_err = 0.0f64;
    for s in 0..10u64 {
        let src = Tensor::new(fixture(2 * 64 * 64 * 3, s, 0.0, 1.0), &[2, 64, 64, 3]).unwrap();
        let depth = Tensor::new(fixture(2 * 64 * 64, s + 50, 0.1, 100.0), &[2, 64, 64]).unwrap();
        let (out, valid) = synthesize_target(&src, &depth, &PoseTensor::identity(2), &k).unwrap();
        assert!(valid.iter().all(|&v| v));
        for (a, b) in out.data().iter().zip(src.data()) {
            ident_err = ident_err.max((a - b).abs());
        }
    }

    let ds = eval_data();
    let mut residuals = Vec::new();
    for i in 0..ds.len() {
        let t = ds.triplet(i);
        let depth = Tensor::new(t.depth.values.clone(), &[1, t.depth.height, t.depth.width]).unwrap();
        for (src, pose) in [(t.frames[0], t.poses[0]), (t.frames[2], t.poses[1])] {
            let (warped, valid) =
                synthesize_target(&src.to_tensor(), &depth, &PoseTensor::from_poses(&[pose]), &ds.intrinsics).unwrap();
            for (p, &ok) in valid.iter().enumerate() {
                if ok {
                    let r: f64 = (0..3).map(|c| (warped.data()[p * 3 + c] - t.frames[1].data[p * 3 + c]).abs()).sum();
                    residuals.push(r / 3.0);
                }
            }
        }
    }
    let n = residuals.len();
    let med = median(residuals);
    outcome(
        ident_err <= 1e-12 && med < 0.02,
        format!(
            "identity-pose max |synth - src| = {ident_err:.1e} <= 1e-12; gt depth/pose warp median L1 = {med:.4} < 0.02 over {n} valid pixels of {} triplets",
            ds.len()
        ),
    )
}

// ---------------------------------------------------------------- criterion 4

struct Trained {
    seed: u64,
    model: Model,
    probe_ratio: f64,
    rmse: f64,
    baseline: f64,
    secs: f64,
}

fn mean_rmse(rows: &[EvalRow]) -> f64 {
    mean(rows.iter().map(|r| r.rmse))
}

fn train_default(seed: u64, train_ds: &Dataset, eval_ds: &Dataset) -> Trained {
    let mut cfg = TrainConfig::default();
    cfg.run.seed = seed;
    let start = Instant::now();
    let out = train(&cfg, train_ds, |_| {}).unwrap();
    let secs = start.elapsed().as_secs_f64();
    let p = SuiteParams::default();
    let rmse = mean_rmse(&evaluate(&out.model, eval_ds, Suite::Clean, &p, "m").unwrap());
    let baseline = mean_rmse(&evaluate(&ConstantDepth(1.0), eval_ds, Suite::Clean, &p, "c").unwrap());
    Trained {
        seed,
        model: out.model,
        probe_ratio: out.record.probe_ratio(),
        rmse,
        baseline,
        secs,
    }
}

fn criterion_4(runs: &[Trained]) -> Outcome {
    let s0 = runs.iter().find(|r| r.seed == 0).unwrap();
    let gains: Vec<f64> = runs.iter().map(|r| 1.0 - r.rmse / r.baseline).collect();
    let med_gain = median(gains.clone());
    let slowest = runs.iter().map(|r| r.secs).fold(0.0, f64::max);
    let per_seed: Vec<String> = runs
        .iter()
        .zip(&gains)
        .map(|(r, g)| {
            format!(
                "seed {}: loss ratio {:.3}, rmse {:.3} vs {:.3} ({:+.1}%), {:.0}s",
                r.seed,
                r.probe_ratio,
                r.rmse,
                r.baseline,
                100.0 * g,
                r.secs
            )
        })
        .collect();
    outcome(
        s0.probe_ratio < 0.4 && med_gain >= 0.20 && slowest < 1800.0,
        format!(
            "seed-0 L_depth ratio {:.3} < 0.4; median RMSE gain over constant-median depth {:.1}% >= 20%; slowest seed {slowest:.0}s < 1800s [{}]",
            s0.probe_ratio,
            100.0 * med_gain,
            per_seed.join("; ")
        ),
    )
}

/// Pose RMSE over `[axis-angle, translation]` of both source poses, with one
/// least-squares scale on the predicted translations (monocular scale is
/// unobservable). Identity predicts zero motion.
fn criterion_4_pose(model: &Model, ds: &Dataset) -> Outcome {
    let idx: Vec<usize> = (0..ds.len()).collect();
    let mut pred = Vec::new();
    let mut gt = Vec::new();
    for c in idx.chunks(8) {
        let frames = Frames::from_dataset(ds, c).unwrap();
        let [a, b] = predict_poses(&model.store.constants(), model.config(), &frames, None).unwrap();
        let (pa, pb) = (a.to_poses(), b.to_poses());
        for (j, &i) in c.iter().enumerate() {
            let t = ds.triplet(i);
            pred.push(pa[j]);
            pred.push(pb[j]);
            gt.push(t.poses[0]);
            gt.push(t.poses[1]);
        }
    }
    let dot = |a: [f64; 3], b: [f64; 3]| a[0] * b[0] + a[1] * b[1] + a[2] * b[2];
    let num: f64 = pred.iter().zip(&gt).map(|(p, g)| dot(p.translation, g.translation)).sum();
    let den: f64 = pred.iter().map(|p| dot(p.translation, p.translation)).sum();
    let scale = if den > 0.0 { num / den } else { 0.0 };
    let sq = |a: [f64; 3], b: [f64; 3], s: f64| (0..3).map(|k| (s * a[k] - b[k]).powi(2)).sum::<f64>();
    let n = pred.len() as f64;
    let model_rmse = (pred
        .iter()
        .zip(&gt)
        .map(|(p, g)| sq(p.rotation, g.rotation, 1.0) + sq(p.translation, g.translation, scale))
        .sum::<f64>()
        / n)
        .sqrt();
    let ident_rmse = (gt.iter().map(|g| dot(g.rotation, g.rotation) + dot(g.translation, g.translation)).sum::<f64>() / n).sqrt();
    outcome(
        model_rmse < ident_rmse,
        format!(
            "seed-0 ego head pose RMSE {model_rmse:.5} < identity {ident_rmse:.5} on {} pairs (translation scale {scale:.3})",
            pred.len()
        ),
    )
}

// ---------------------------------------------------------------- criterion 5

fn criterion_5(model: &Model, ds: &Dataset) -> Outcome {
    let schedule: Vec<(f64, usize)> = [1.0, 2.0, 4.0, 8.0, 16.0]
        .iter()
        .map(|&e: &f64| (e, (e + 4.0).min((1.25 * e).ceil()) as usize))
        .collect();
    let expected = [2, 3, 5, 10, 20];
    let mut sched_ok = schedule.iter().zip(expected).all(|(&(_, n), want)| n == want);
    let loss_cfg = LossConfig::default();
    let k = &ds.intrinsics;
    let l_depth = |frames: [&Image; 3]| -> f64 {
        let f = Frames::from_images(&[frames[0]], &[frames[1]], &[frames[2]]).unwrap();
        joint_loss(&model.store.constants(), model.config(), &f, k, &Masks::none(), &loss_cfg)
            .unwrap()
            .loss
            .total
            .item()
    };
    let mut linf_ok = true;
    let mut worst_linf = 0.0f64;
    let mut up = 0;
    for i in 0..ds.len() {
        let t = ds.triplet(i);
        let o = untargeted_attack(model, t.frames, k, 8.0, &loss_cfg).unwrap();
        sched_ok &= o.iterations == 10;
        let linf = o.image.data.iter().zip(&t.frames[1].data).map(|(a, b)| (a - b).abs()).fold(0.0, f64::max);
        worst_linf = worst_linf.max(linf * 255.0 / 8.0);
        linf_ok &= linf <= 8.0 / 255.0 + 1e-9 && o.image.data.iter().all(|v| (0.0..=1.0).contains(v));
        if l_depth([t.frames[0], &o.image, t.frames[2]]) > l_depth(t.frames) {
            up += 1;
        }
    }
    let rmse_to = |img: &Image, target: &[f64]| -> f64 {
        let d = model.depth_tensor(&img.to_tensor()).unwrap();
        (d.data().iter().zip(target).map(|(a, b)| (a - b).powi(2)).sum::<f64>() / target.len() as f64).sqrt()
    };
    let mut down = 0;
    let mut flips = 0;
    for i in 0..ds.len() {
        let img = ds.triplet(i).frames[1];
        for (dir, vertical) in [(FlipDirection::Horizontal, false), (FlipDirection::Vertical, true)] {
            let clean = model.depth_tensor(&img.to_tensor()).unwrap();
            let (h, w) = (img.height, img.width);
            let target: Vec<f64> = (0..h * w)
                .map(|q| {
                    let (y, x) = (q / w, q % w);
                    let (sy, sx) = if vertical { (h - 1 - y, x) } else { (y, w - 1 - x) };
                    clean.data()[sy * w + sx]
                })
                .collect();
            let o = targeted_flip_attack(model, img, 4.0, dir).unwrap();
            sched_ok &= o.iterations == 5;
            let linf = o.image.data.iter().zip(&img.data).map(|(a, b)| (a - b).abs()).fold(0.0, f64::max);
            linf_ok &= linf <= 4.0 / 255.0 + 1e-9 && o.image.data.iter().all(|v| (0.0..=1.0).contains(v));
            flips += 1;
            if rmse_to(&o.image, &target) < rmse_to(img, &target) {
                down += 1;
            }
        }
    }
    let n = ds.len();
    let up_frac = up as f64 / n as f64;
    let down_frac = down as f64 / flips as f64;
    outcome(
        sched_ok && linf_ok && up_frac >= 0.95 && down_frac >= 0.95,
        format!(
            "N(eps) = {:?}; L_inf bound held (max {:.3} of eps at eps=8); untargeted eps=8 raised L_depth on {up}/{n} ({:.0}% >= 95%); \
             flip eps=4 lowered RMSE-to-flip on {down}/{flips} ({:.0}% >= 95%)",
            schedule.iter().map(|&(e, n)| format!("{e}->{n}")).collect::<Vec<_>>(),
            worst_linf,
            100.0 * up_frac,
            100.0 * down_frac
        ),
    )
}

// ---------------------------------------------------------------- criterion 6

fn criterion_6(model: &Model, ds: &Dataset) -> Outcome {
    let mut exact = true;
    for i in 0..ds.len() {
        let img = ds.triplet(i).frames[1];
        let m = img.mean_rgb();
        for strategy in [MaskStrategy::Blockwise, MaskStrategy::Random] {
            let spec = OcclusionSpec {
                strategy,
                mask: MaskConfig::default().with_seed(i as u64),
            };
            let o = occlude(img, &spec).unwrap();
            for (p, &masked) in o.pixels.iter().enumerate() {
                for c in 0..3 {
                    let v = o.image.data[p * 3 + c];
                    exact &= if masked { v == m[c] } else { v == img.data[p * 3 + c] };
                }
            }
        }
    }
    let params = SuiteParams::default();
    let rows = evaluate(model, ds, Suite::Occlusion, &params, "acc").unwrap();
    let want = ds.len() * 2 * 3;
    let mut counts_ok = rows.len() == want;
    for strategy in ["blockwise", "random"] {
        for region in ["complete", "unmasked", "masked"] {
            let c = rows.iter().filter(|r| r.perturbation == strategy && r.region == region).count();
            counts_ok &= c == ds.len();
        }
    }

    let images: Vec<&Image> = (0..4).map(|i| ds.triplet(i).frames[1]).collect();
    let table = SeverityTable::default();
    let mut mono_bad = Vec::new();
    let mut summary = Vec::new();
    for kind in CorruptionKind::ALL {
        let mut curve = Vec::new();
        for s in 1..=5u8 {
            let mut acc = 0.0;
            for seed in 0..20u64 {
                for img in &images {
                    let c = corrupt(img, &CorruptionSpec::new(kind, s, seed).unwrap(), &table).unwrap();
                    acc += c.data.iter().zip(&img.data).map(|(a, b)| (a - b).abs()).sum::<f64>() / c.data.len() as f64;
                }
            }
            curve.push(acc / (20 * images.len()) as f64);
        }
        if curve.windows(2).any(|w| w[1] < w[0]) {
            mono_bad.push(format!("{} {:?}", kind.as_str(), curve));
        }
        summary.push(format!("{} {:.3}..{:.3}", kind.as_str(), curve[0], curve[4]));
    }
    outcome(
        exact && counts_ok && mono_bad.is_empty(),
        format!(
            "occluded pixels == image mean exactly: {exact}; {} rows == {} images x 2 strategies x 3 regions: {counts_ok}; \
             severity-monotone mean L1 (20 seeds) for 10/10 kinds: {} [{}]",
            rows.len(),
            ds.len(),
            mono_bad.is_empty(),
            if mono_bad.is_empty() { summary.join(", ") } else { mono_bad.join("; ") }
        ),
    )
}

// ---------------------------------------------------------------- criterion 7

fn criterion_7(train_ds: &Dataset, eval_ds: &Dataset) -> Outcome {
    let mut base = TrainConfig::default();
    base.run.epochs = 3;
    base.optim.lr_decay_epoch = 2;
    let arms = default_arms(&base);
    let params = SuiteParams {
        max_images: 16,
        ..SuiteParams::default()
    };
    let report = ablation_grid(&base, &arms, &[0, 1, 2], train_ds, eval_ds, &params, None, |_, _, _| {}).unwrap();
    println!("{}", report.table());
    let order = report.ordering();
    let best = order[0].clone();
    outcome(
        best == "B/-",
        format!(
            "7 arms x 3 seeds at {} steps each; best mean clean+occlusion RMSE: {best} (expected B/-); ordering {}",
            base.total_steps(),
            order.join(" < ")
        ),
    )
}

// ---------------------------------------------------------------- criterion 8

fn criterion_8(train_ds: &Dataset) -> Outcome {
    let mut cfg = TrainConfig::default();
    cfg.run.epochs = 2;
    cfg.run.steps_per_epoch = 15;
    cfg.optim.lr_decay_epoch = 1;
    let a = train(&cfg, train_ds, |_| {}).unwrap();
    let b = train(&cfg, train_ds, |_| {}).unwrap();
    let bytes_a = checkpoint_bytes(&a.model.store).unwrap();
    let bytes_b = checkpoint_bytes(&b.model.store).unwrap();
    let same_run = bytes_a == bytes_b && a.record.epochs == b.record.epochs;
    let loaded = read_checkpoint(bytes_a.as_slice()).unwrap();
    let ckpt_ok = loaded == a.model.store && checkpoint_bytes(&loaded).unwrap() == bytes_a;

    let dir = tempfile::tempdir().unwrap();
    let img = train_ds.triplet(0).frames[1].quantized();
    let ppm = dir.path().join("x.ppm");
    write_ppm(&ppm, &img).unwrap();
    let ppm_ok = read_ppm(&ppm).unwrap() == img;
    let depth: Vec<f32> = train_ds.triplet(0).depth.values.iter().map(|&v| v as f32).collect();
    let pfm = dir.path().join("x.pfm");
    write_pfm(&pfm, 64, 64, &depth).unwrap();
    let (w, h, back) = read_pfm(&pfm).unwrap();
    let pfm_ok = (w, h) == (64, 64) && back.iter().zip(&depth).all(|(a, b)| a.to_bits() == b.to_bits());
    outcome(
        same_run && ckpt_ok && ppm_ok && pfm_ok,
        format!(
            "repeat run: identical checkpoint bytes and per-epoch losses: {same_run} (sha256 {}); checkpoint round-trip: {ckpt_ok}; PPM: {ppm_ok}; PFM: {pfm_ok}",
            &a.record.checkpoint_sha256[..16]
        ),
    )
}

// ---------------------------------------------------------------- criterion 9

fn criterion_9() -> Outcome {
    let mut notes = Vec::new();
    let gt = DepthMap::new(8, 8, fixture(64, 3, 0.5, 20.0)).unwrap();
    let eval = DepthEval::default();
    let m = depth_metrics(&gt, &gt, None, &eval).unwrap();
    let identical = m.rmse == 0.0 && m.delta1 == 1.0 && m.delta2 == 1.0 && m.delta3 == 1.0;
    notes.push(format!("pred==gt -> ({}, {}): {identical}", m.rmse, m.delta1));
    let twice = DepthMap::new(8, 8, gt.values.iter().map(|v| 2.0 * v).collect()).unwrap();
    let m2 = depth_metrics(&twice, &gt, None, &eval).unwrap();
    let scaled = m2.rmse < 1e-12;
    notes.push(format!("2*gt median-scaled rmse {:.1e}: {scaled}", m2.rmse));
    let more = DepthMap::new(8, 8, gt.values.iter().map(|v| 1.3 * v).collect()).unwrap();
    let raw = DepthEval {
        median_scaling: false,
        ..eval
    };
    let m3 = depth_metrics(&more, &gt, None, &raw).unwrap();
    let ratio13 = m3.delta1 == 0.0 && m3.delta2 == 1.0;
    notes.push(format!("1.3*gt unscaled delta1 {}: {ratio13}", m3.delta1));

    let straight: Vec<Pose> = (0..101).map(|i| Pose::new([0.0; 3], [0.0, 0.0, 0.1 * i as f64])).collect();
    let zero = odometry_metrics(&straight, &straight, &SEGMENTS).unwrap();
    let ident_ok = zero.t_err == 0.0 && zero.r_err == 0.0;
    notes.push(format!("pred==gt -> ({}, {}): {ident_ok}", zero.t_err, zero.r_err));
    let stretched: Vec<Pose> = straight.iter().map(|p| Pose::new([0.0; 3], [0.0, 0.0, 1.1 * p.translation[2]])).collect();
    let s = odometry_metrics(&stretched, &straight, &SEGMENTS).unwrap();
    let ten = (s.t_err - 10.0).abs() < 1e-9;
    notes.push(format!("1.1x translation t_err {:.9}%: {ten}", s.t_err));

    let step = Pose::new([0.0; 3], [0.0, 0.0, 0.1]);
    let gt_traj = chain(&vec![step; 100]);
    let yaw = |theta: f64| {
        let biased = step.compose(&Pose::new([0.0, theta, 0.0], [0.0; 3]));
        odometry_metrics(&chain(&vec![biased; 100]), &gt_traj, &SEGMENTS).unwrap().r_err
    };
    let th = 1e-4;
    let (r1, r2, r3) = (yaw(th), yaw(2.0 * th), yaw(3.0 * th));
    let linear = r1 > 0.0 && ((r2 / r1) - 2.0).abs() < 1e-3 && ((r3 / r1) - 3.0).abs() < 1e-3;
    notes.push(format!("yaw bias r_err ratios {:.4}, {:.4}: {linear}", r2 / r1, r3 / r1));

    let wiggly: Vec<Pose> = (0..60)
        .map(|i| {
            let t = i as f64;
            Pose::new([0.01 * (t * 0.3).sin(), 0.02 * (t * 0.2).cos(), 0.0], [0.1 * (t * 0.1).sin(), 0.0, 0.15 * t])
        })
        .collect();
    let noisy: Vec<Pose> = wiggly
        .iter()
        .enumerate()
        .map(|(i, p)| p.compose(&Pose::new([0.001 * (i as f64).sin(), 0.0, 0.0], [0.002 * (i as f64).cos(), 0.0, 0.0])))
        .collect();
    let g = Pose::new([0.3, -1.2, 0.7], [5.0, -2.0, 1.0]);
    let base = odometry_metrics(&noisy, &wiggly, &SEGMENTS).unwrap();
    let moved = odometry_metrics(
        &noisy.iter().map(|p| g.compose(p)).collect::<Vec<_>>(),
        &wiggly.iter().map(|p| g.compose(p)).collect::<Vec<_>>(),
        &SEGMENTS,
    )
    .unwrap();
    let rigid = (base.t_err - moved.t_err).abs() < 1e-9 && (base.r_err - moved.r_err).abs() < 1e-9;
    notes.push(format!("global rigid transform invariance: {rigid}"));
    outcome(identical && scaled && ratio13 && ident_ok && ten && linear && rigid, notes.join("; "))
}

fn main() {
    // `acceptance C1 C9` runs a subset; libtest flags from `cargo test` are ignored
    let only: Vec<String> = std::env::args().skip(1).filter(|a| a.starts_with('C')).collect();
    if std::env::args().any(|a| a == "--list") {
        return;
    }
    let want = |id: &str| only.is_empty() || only.iter().any(|o| o == id);
    let start = Instant::now();
    println!("acceptance suite (64x64 desk-scale defaults)");
    let mut suite = Suite_ { failures: 0 };
    if want("C1") {
        suite.run("C1", "gradient integrity", true, criterion_1);
    }
    if want("C2") {
        suite.run("C2", "mask-law conformance", true, criterion_2);
    }
    if want("C3") {
        suite.run("C3", "warp oracle", true, criterion_3);
    }

    let train_ds = Dataset::generate(&SceneSpec::default(), TRAIN_TRIPLETS).unwrap();
    let eval_ds = eval_data();
    if ["C4", "C5", "C6"].iter().any(|c| want(c)) {
        let seeds: &[u64] = if want("C4") { &[0, 1, 2] } else { &[0] };
        let mut runs = Vec::new();
        for &seed in seeds {
            let t = Instant::now();
            match catch_unwind(AssertUnwindSafe(|| train_default(seed, &train_ds, &eval_ds))) {
                Ok(r) => runs.push(r),
                Err(_) => println!("training seed {seed} panicked"),
            }
            println!("  trained seed {seed} in {:.0}s", t.elapsed().as_secs_f64());
        }
        let model = runs.iter().find(|r| r.seed == 0).map(|r| &r.model);
        let missing = || outcome(false, "training failed".into());
        if want("C4") {
            if runs.len() == seeds.len() {
                suite.run("C4", "training convergence", true, || criterion_4(&runs));
            } else {
                suite.run("C4", "training convergence", true, missing);
            }
            match model {
                Some(m) => suite.run("C4", "ego-motion head vs identity pose", true, || criterion_4_pose(m, &eval_ds)),
                None => suite.run("C4", "ego-motion head vs identity pose", true, missing),
            }
        }
        if want("C5") {
            match model {
                Some(m) => suite.run("C5", "attack schedule and contract", true, || criterion_5(m, &eval_ds)),
                None => suite.run("C5", "attack schedule and contract", true, missing),
            }
        }
        if want("C6") {
            match model {
                Some(m) => suite.run("C6", "occlusion protocol and corruption monotonicity", true, || criterion_6(m, &eval_ds)),
                None => suite.run("C6", "occlusion protocol and corruption monotonicity", true, missing),
            }
        }
    }
    if want("C7") {
        suite.run("C7", "ablation direction", false, || criterion_7(&train_ds, &eval_ds));
    }
    if want("C8") {
        suite.run("C8", "determinism and persistence", true, || criterion_8(&train_ds));
    }
    if want("C9") {
        suite.run("C9", "metric oracles", true, criterion_9);
    }
    println!(
        "acceptance: {} gating failure(s), {:.0}s total",
        suite.failures,
        start.elapsed().as_secs_f64()
    );
    if suite.failures > 0 {
        std::process::exit(1);
    }
}
