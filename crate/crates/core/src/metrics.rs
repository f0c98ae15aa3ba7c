//! Depth accuracy (RMSE, δ-thresholds) and trajectory drift (t_err, r_err).

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::geometry::{DepthMap, Pose};

#[derive(Debug, Error)]
pub enum MetricsError {
    #[error("depth maps differ in size: {0:?} vs {1:?}")]
    Shape((usize, usize), (usize, usize)),
    #[error("no valid ground-truth pixels")]
    NoValidPixels,
    #[error("trajectories differ in length: {0} vs {1}")]
    Length(usize, usize),
    #[error("trajectory path length {path} is shorter than every segment")]
    TooShort { path: f64 },
    #[error("invalid evaluation settings: {0}")]
    Config(String),
}

pub type Result<T> = std::result::Result<T, MetricsError>;

/// Depth evaluation settings: clamp range and median scaling.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct DepthEval {
    pub d_min: f64,
    pub d_max: f64,
    pub median_scaling: bool,
}

impl Default for DepthEval {
    fn default() -> Self {
        DepthEval {
            d_min: 0.1,
            d_max: 100.0,
            median_scaling: true,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct DepthMetrics {
    pub rmse: f64,
    pub delta1: f64,
    pub delta2: f64,
    pub delta3: f64,
    /// median-scaling factor applied to the prediction (1 when disabled)
    pub scale: f64,
    pub pixels: usize,
}

pub fn median(values: &mut [f64]) -> f64 {
    values.sort_by(f64::total_cmp);
    let n = values.len();
    if n % 2 == 1 {
        values[n / 2]
    } else {
        0.5 * (values[n / 2 - 1] + values[n / 2])
    }
}

/// Metrics over pixels with positive finite ground truth, optionally
/// restricted to `region`.
pub fn depth_metrics(pred: &DepthMap, gt: &DepthMap, region: Option<&[bool]>, eval: &DepthEval) -> Result<DepthMetrics> {
    if (pred.width, pred.height) != (gt.width, gt.height) {
        return Err(MetricsError::Shape((pred.width, pred.height), (gt.width, gt.height)));
    }
    if !(eval.d_min > 0.0 && eval.d_min < eval.d_max) {
        return Err(MetricsError::Config(format!("clamp [{}, {}]", eval.d_min, eval.d_max)));
    }
    if region.is_some_and(|r| r.len() != gt.values.len()) {
        return Err(MetricsError::Config("region mask has the wrong size".into()));
    }
    let idx: Vec<usize> = (0..gt.values.len())
        .filter(|&i| gt.values[i].is_finite() && gt.values[i] > 0.0 && region.is_none_or(|r| r[i]))
        .collect();
    if idx.is_empty() {
        return Err(MetricsError::NoValidPixels);
    }
    let scale = if eval.median_scaling {
        let mut g: Vec<f64> = idx.iter().map(|&i| gt.values[i]).collect();
        let mut p: Vec<f64> = idx.iter().map(|&i| pred.values[i]).collect();
        median(&mut g) / median(&mut p)
    } else {
        1.0
    };
    let mut sq = 0.0;
    let mut hits = [0usize; 3];
    for &i in &idx {
        let p = (pred.values[i] * scale).clamp(eval.d_min, eval.d_max);
        let g = gt.values[i].clamp(eval.d_min, eval.d_max);
        sq += (p - g) * (p - g);
        let ratio = (p / g).max(g / p);
        for (k, h) in hits.iter_mut().enumerate() {
            if ratio < 1.25f64.powi(k as i32 + 1) {
                *h += 1;
            }
        }
    }
    let n = idx.len() as f64;
    Ok(DepthMetrics {
        rmse: (sq / n).sqrt(),
        delta1: hits[0] as f64 / n,
        delta2: hits[1] as f64 / n,
        delta3: hits[2] as f64 / n,
        scale,
        pixels: idx.len(),
    })
}

/// Synthetic segment lengths in scene units.
pub const SEGMENTS: [f64; 4] = [1.0, 2.0, 4.0, 8.0];

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct OdometryMetrics {
    /// mean translational drift, percent of segment length
    pub t_err: f64,
    /// mean rotational drift, degrees per 100 units
    pub r_err: f64,
    pub segments_used: Vec<f64>,
    pub segments_skipped: Vec<f64>,
    pub samples: usize,
}

/// Chain relative poses `T_{i←i+1}` into camera-to-world poses starting at
/// the identity.
pub fn chain(relative: &[Pose]) -> Vec<Pose> {
    let mut out = vec![Pose::identity()];
    for t in relative {
        let last = *out.last().unwrap();
        out.push(last.compose(t));
    }
    out
}

/// KITTI-style segment errors. For every start frame and segment length `L`
/// the end frame is the first one whose ground-truth path length from the
/// start reaches `L`; the error transform is `(P_s⁻¹P_e)⁻¹ (G_s⁻¹G_e)`.
pub fn odometry_metrics(pred: &[Pose], gt: &[Pose], segments: &[f64]) -> Result<OdometryMetrics> {
    if pred.len() != gt.len() {
        return Err(MetricsError::Length(pred.len(), gt.len()));
    }
    let mut dist = vec![0.0; gt.len()];
    for i in 1..gt.len() {
        let (a, b) = (gt[i - 1].translation, gt[i].translation);
        dist[i] = dist[i - 1] + ((0..3).map(|k| (b[k] - a[k]).powi(2)).sum::<f64>()).sqrt();
    }
    let path = dist.last().copied().unwrap_or(0.0);
    let (mut t_sum, mut r_sum, mut n) = (0.0, 0.0, 0usize);
    let mut used = Vec::new();
    let mut skipped = Vec::new();
    for &len in segments {
        let mut any = false;
        for first in 0..gt.len() {
            let Some(last) = (first..gt.len()).find(|&j| dist[j] >= dist[first] + len - 1e-9) else {
                break;
            };
            let dg = gt[first].inverse().compose(&gt[last]);
            let dp = pred[first].inverse().compose(&pred[last]);
            let e = dp.inverse().compose(&dg);
            let t = e.translation;
            t_sum += (t[0] * t[0] + t[1] * t[1] + t[2] * t[2]).sqrt() / len;
            r_sum += e.angle() / len;
            n += 1;
            any = true;
        }
        if any {
            used.push(len);
        } else {
            skipped.push(len);
        }
    }
    if n == 0 {
        return Err(MetricsError::TooShort { path });
    }
    Ok(OdometryMetrics {
        t_err: 100.0 * t_sum / n as f64,
        r_err: 100.0 * (r_sum / n as f64).to_degrees(),
        segments_used: used,
        segments_skipped: skipped,
        samples: n,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn ramp(w: usize, h: usize) -> DepthMap {
        DepthMap::new(w, h, (0..w * h).map(|i| 0.5 + i as f64 * 0.1).collect()).unwrap()
    }

    #[test]
    fn identical_maps_are_perfect() {
        let g = ramp(8, 4);
        let m = depth_metrics(&g, &g, None, &DepthEval::default()).unwrap();
        assert_eq!((m.rmse, m.delta1, m.delta2, m.delta3), (0.0, 1.0, 1.0, 1.0));
    }

    #[test]
    fn median_scaling_removes_constant_factor() {
        let g = ramp(8, 4);
        let p = DepthMap::new(8, 4, g.values.iter().map(|v| 2.0 * v).collect()).unwrap();
        let m = depth_metrics(&p, &g, None, &DepthEval::default()).unwrap();
        assert!(m.rmse < 1e-12 && (m.scale - 0.5).abs() < 1e-15);
    }

    #[test]
    fn unscaled_ratio_above_threshold_fails_delta1() {
        let g = ramp(8, 4);
        let p = DepthMap::new(8, 4, g.values.iter().map(|v| 1.3 * v).collect()).unwrap();
        let eval = DepthEval {
            median_scaling: false,
            ..DepthEval::default()
        };
        let m = depth_metrics(&p, &g, None, &eval).unwrap();
        assert_eq!(m.delta1, 0.0);
        assert_eq!(m.delta2, 1.0);
        // oracle: rmse of 0.3·g
        let want = (g.values.iter().map(|v| (0.3 * v) * (0.3 * v)).sum::<f64>() / 32.0).sqrt();
        assert!((m.rmse - want).abs() < 1e-12);
    }

    #[test]
    fn region_and_errors() {
        let g = ramp(4, 2);
        let mut region = vec![false; 8];
        region[3] = true;
        let p = DepthMap::constant(4, 2, 7.0);
        let m = depth_metrics(&p, &g, Some(&region), &DepthEval::default()).unwrap();
        assert_eq!(m.pixels, 1);
        assert!(m.rmse < 1e-12);
        assert!(matches!(
            depth_metrics(&p, &g, Some(&[false; 8]), &DepthEval::default()),
            Err(MetricsError::NoValidPixels)
        ));
        assert!(depth_metrics(&ramp(2, 2), &g, None, &DepthEval::default()).is_err());
    }

    fn straight(n: usize, step: f64) -> Vec<Pose> {
        (0..n).map(|i| Pose::new([0.0; 3], [0.0, 0.0, step * i as f64])).collect()
    }

    #[test]
    fn identical_trajectories_have_zero_drift() {
        let gt = straight(200, 0.05);
        let m = odometry_metrics(&gt, &gt, &SEGMENTS).unwrap();
        assert_eq!((m.t_err, m.r_err), (0.0, 0.0));
        assert_eq!(m.segments_used, SEGMENTS.to_vec());
    }

    #[test]
    fn uniform_translation_scaling_gives_ten_percent() {
        let gt = straight(200, 0.05);
        let pred: Vec<Pose> = gt
            .iter()
            .map(|p| Pose::new(p.rotation, p.translation.map(|t| 1.1 * t)))
            .collect();
        let m = odometry_metrics(&pred, &gt, &SEGMENTS).unwrap();
        assert!((m.t_err - 10.0).abs() < 1e-6, "{}", m.t_err);
        assert!(m.r_err.abs() < 1e-12);
    }

    #[test]
    fn short_trajectories_skip_long_segments() {
        let gt = straight(50, 0.05);
        let m = odometry_metrics(&gt, &gt, &SEGMENTS).unwrap();
        assert_eq!(m.segments_used, vec![1.0, 2.0]);
        assert_eq!(m.segments_skipped, vec![4.0, 8.0]);
        assert!(matches!(
            odometry_metrics(&gt[..3], &gt[..3], &SEGMENTS),
            Err(MetricsError::TooShort { .. })
        ));
        assert!(odometry_metrics(&gt[..3], &gt, &SEGMENTS).is_err());
    }

    #[test]
    fn yaw_bias_grows_rotation_error_linearly() {
        let step = Pose::new([0.0; 3], [0.0, 0.0, 0.05]);
        let gt = chain(&vec![step; 199]);
        let r_err = |theta: f64| {
            let biased = Pose::new([0.0, theta, 0.0], step.translation);
            odometry_metrics(&chain(&vec![biased; 199]), &gt, &[1.0, 2.0]).unwrap().r_err
        };
        let (a, b) = (r_err(1e-4), r_err(2e-4));
        // oracle: a segment of L units spans L/0.05 frames, each adding θ
        let want = 100.0 * (20.0 * 1e-4f64).to_degrees();
        assert!((a - want).abs() < 1e-6 * want, "{a} vs {want}");
        assert!((b / a - 2.0).abs() < 1e-6);
    }

    proptest! {
        #[test]
        fn deltas_are_ordered(vals in proptest::collection::vec(0.05f64..50.0, 16), gt in proptest::collection::vec(0.05f64..50.0, 16), scale in any::<bool>()) {
            let p = DepthMap::new(4, 4, vals).unwrap();
            let g = DepthMap::new(4, 4, gt).unwrap();
            let m = depth_metrics(&p, &g, None, &DepthEval { median_scaling: scale, ..DepthEval::default() }).unwrap();
            prop_assert!(0.0 <= m.delta1 && m.delta1 <= m.delta2 && m.delta2 <= m.delta3 && m.delta3 <= 1.0);
            prop_assert!(m.rmse >= 0.0);
        }

        #[test]
        fn self_comparison_is_perfect(vals in proptest::collection::vec(0.01f64..500.0, 12)) {
            let g = DepthMap::new(4, 3, vals).unwrap();
            let m = depth_metrics(&g, &g, None, &DepthEval::default()).unwrap();
            prop_assert_eq!((m.rmse, m.delta1, m.delta2, m.delta3), (0.0, 1.0, 1.0, 1.0));
        }

        #[test]
        fn odometry_is_invariant_to_a_global_transform(
            rot in proptest::array::uniform3(-1.0f64..1.0),
            tr in proptest::array::uniform3(-5.0f64..5.0),
            yaw in -0.01f64..0.01,
            scale in 0.8f64..1.2,
        ) {
            let g = Pose::new(rot, tr);
            let step = Pose::new([0.0, 0.003, 0.001], [0.01, 0.0, 0.05]);
            let gt = chain(&vec![step; 120]);
            let pred = chain(&vec![Pose::new([0.0, 0.003 + yaw, 0.001], [0.01, 0.0, 0.05 * scale]); 120]);
            let moved = |t: &[Pose]| t.iter().map(|p| g.compose(p)).collect::<Vec<_>>();
            let a = odometry_metrics(&pred, &gt, &SEGMENTS).unwrap();
            let b = odometry_metrics(&moved(&pred), &moved(&gt), &SEGMENTS).unwrap();
            prop_assert!((a.t_err - b.t_err).abs() < 1e-9 && (a.r_err - b.r_err).abs() < 1e-9);
        }
    }
}
