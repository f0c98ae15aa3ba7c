use super::*;
use crate::geometry::Pose;
use crate::gradcheck::{fixture, GradCheck};
use proptest::prelude::*;

fn img(seed: u64, shape: &[usize]) -> Tensor {
    let n = shape.iter().product();
    Tensor::new(fixture(n, seed, 0.0, 1.0), shape).unwrap()
}

/// Direct SSIM of two windows, written independently of the tensor route.
fn ssim_brute(a: &[f64], b: &[f64], h: usize, w: usize) -> Vec<f64> {
    let refl = |i: isize, n: usize| -> usize {
        let n = n as isize;
        (if i < 0 { -i } else if i >= n { 2 * n - 2 - i } else { i }) as usize
    };
    let mut out = Vec::new();
    for y in 0..h {
        for x in 0..w {
            let mut pa = Vec::new();
            let mut pb = Vec::new();
            for dy in -1..=1isize {
                for dx in -1..=1isize {
                    let i = refl(y as isize + dy, h) * w + refl(x as isize + dx, w);
                    pa.push(a[i]);
                    pb.push(b[i]);
                }
            }
            let m = |v: &[f64]| v.iter().sum::<f64>() / 9.0;
            let (ma, mb) = (m(&pa), m(&pb));
            let va = pa.iter().map(|v| (v - ma).powi(2)).sum::<f64>() / 9.0;
            let vb = pb.iter().map(|v| (v - mb).powi(2)).sum::<f64>() / 9.0;
            let cov = pa.iter().zip(&pb).map(|(p, q)| (p - ma) * (q - mb)).sum::<f64>() / 9.0;
            let s = (2.0 * ma * mb + SSIM_C1) * (2.0 * cov + SSIM_C2)
                / ((ma * ma + mb * mb + SSIM_C1) * (va + vb + SSIM_C2));
            out.push(((1.0 - s) / 2.0).clamp(0.0, 1.0));
        }
    }
    out
}

#[test]
fn ssim_identical_is_zero() {
    let a = img(1, &[2, 6, 7, 3]);
    assert!(ssim_loss(&a, &a, 3).unwrap().item().abs() < 1e-12);
}

#[test]
fn ssim_constant_images_closed_form() {
    let a = Tensor::zeros(&[1, 5, 5, 3]);
    let b = Tensor::full(&[1, 5, 5, 3], 1.0);
    let want = (1.0 - SSIM_C1 * SSIM_C2 / ((1.0 + SSIM_C1) * SSIM_C2)) / 2.0;
    let got = ssim_loss(&a, &b, 3).unwrap().item();
    assert!((got - want).abs() < 1e-12, "{got} vs {want}");
}

#[test]
fn ssim_matches_window_oracle_and_is_symmetric() {
    let a = img(2, &[1, 5, 6, 1]);
    let b = img(3, &[1, 5, 6, 1]);
    let map = ssim_map(&a, &b, 3).unwrap();
    let want = ssim_brute(a.data(), b.data(), 5, 6);
    for (g, w) in map.data().iter().zip(&want) {
        assert!((g - w).abs() < 1e-12);
    }
    let ab = ssim_loss(&a, &b, 3).unwrap().item();
    let ba = ssim_loss(&b, &a, 3).unwrap().item();
    assert_eq!(ab, ba);
    assert!(ssim_loss(&a, &img(4, &[1, 5, 5, 1]), 3).is_err());
}

#[test]
fn ssim_decreases_as_images_blend() {
    for seed in 0..5 {
        let a = img(10 + seed, &[1, 8, 8, 3]);
        let b = img(20 + seed, &[1, 8, 8, 3]);
        let vals: Vec<f64> = [0.0, 0.25, 0.5, 0.75, 1.0]
            .iter()
            .map(|&t| {
                let mix = b.mul_scalar(1.0 - t).add(&a.mul_scalar(t)).unwrap();
                ssim_loss(&a, &mix, 3).unwrap().item()
            })
            .collect();
        assert!(vals.windows(2).all(|p| p[1] < p[0]), "{vals:?}");
        assert!(vals[4].abs() < 1e-12);
    }
}

#[test]
fn box_filter_gradient() {
    let rep = GradCheck::default()
        .run(&[(fixture(2 * 4 * 5 * 2, 5, -1.0, 1.0), vec![2, 4, 5, 2])], |xs| {
            let y = box_filter(&xs[0], 3)?;
            Ok(y.mul(&y)?.sum_all())
        })
        .unwrap();
    assert!(rep.max_rel_err < 1e-7, "{rep:?}");
}

#[test]
fn ssim_gradient() {
    let b = img(7, &[1, 4, 4, 2]);
    let rep = GradCheck::default()
        .run(&[(fixture(32, 8, 0.1, 0.9), vec![1, 4, 4, 2])], |xs| {
            ssim_loss(&xs[0], &b, 3).map_err(|e| TensorError::Invalid(e.to_string()))
        })
        .unwrap();
    assert!(rep.max_rel_err < 1e-5, "{rep:?}");
}

#[test]
fn l1_photometric_examples() {
    let a = img(1, &[1, 4, 4, 3]);
    let all = vec![true; 16];
    assert_eq!(l1_photometric(&a, &a, &all).unwrap().item(), 0.0);
    let b = a.add_scalar(0.5);
    assert!((l1_photometric(&b, &a, &all).unwrap().item() - 0.5).abs() < 1e-15);

    let c = img(2, &[1, 4, 4, 3]);
    let half: Vec<bool> = (0..16).map(|i| i % 2 == 0).collect();
    let mut acc = 0.0;
    for p in (0..16).step_by(2) {
        for ch in 0..3 {
            acc += (a.data()[p * 3 + ch] - c.data()[p * 3 + ch]).abs();
        }
    }
    let want = acc / 24.0;
    assert!((l1_photometric(&a, &c, &half).unwrap().item() - want).abs() < 1e-15);
    assert!(matches!(
        l1_photometric(&a, &c, &[false; 16]),
        Err(LossError::EmptyValidity)
    ));
}

#[test]
fn smoothness_examples() {
    let flat = Tensor::full(&[1, 4, 4, 3], 0.3);
    let d = Tensor::full(&[1, 4, 4], 0.7);
    assert_eq!(smoothness_loss(&d, &flat).unwrap().item(), 0.0);

    // d(x) = x + 1 has mean 2.5, so the normalized slope is 0.4 along x and 0 along y
    let ramp: Vec<f64> = (0..16).map(|i| (i % 4) as f64 + 1.0).collect();
    let ramp = Tensor::new(ramp, &[1, 4, 4]).unwrap();
    let got = smoothness_loss(&ramp, &flat).unwrap().item();
    assert!((got - 0.4).abs() < 1e-15, "{got}");

    // an image edge along the same columns damps the penalty
    let edge: Vec<f64> = (0..48).map(|i| ((i / 3) % 4) as f64 * 0.3).collect();
    let edge = Tensor::new(edge, &[1, 4, 4, 3]).unwrap();
    assert!(smoothness_loss(&ramp, &edge).unwrap().item() < got);

    assert!(matches!(
        smoothness_loss(&Tensor::zeros(&[1, 4, 4]), &flat),
        Err(LossError::ZeroDisparity)
    ));
}

fn toy_k() -> Intrinsics {
    Intrinsics::new(8.0, 8.0, 3.5, 3.5, 8, 8).unwrap()
}

#[test]
fn identical_frames_identity_pose_zero_photometric() {
    let f = img(3, &[2, 8, 8, 3]);
    let depth = Tensor::full(&[2, 8, 8], 3.0);
    let id = PoseTensor::identity(2);
    let inp = DepthLossInputs {
        target: &f,
        sources: [&f, &f],
        depth: &depth,
        disparity: &depth,
        poses: [&id, &id],
        intrinsics: &toy_k(),
        mask: None,
    };
    let mut cfg = LossConfig::default();
    cfg.weights.lambda3 = 0.0;
    for combine in [PhotometricCombine::Min, PhotometricCombine::Mean] {
        cfg.combine = combine;
        let out = depth_loss(&inp, &cfg).unwrap();
        assert!(out.total.item().abs() < 1e-12);
        assert_eq!(out.coverage, 1.0);
    }
}

fn warp_fixture() -> (Tensor, Tensor, Tensor, Tensor, PoseTensor, PoseTensor) {
    let target = img(30, &[1, 8, 8, 3]);
    let s0 = img(31, &[1, 8, 8, 3]);
    let s1 = img(32, &[1, 8, 8, 3]);
    let depth = Tensor::new(fixture(64, 33, 2.0, 4.0), &[1, 8, 8]).unwrap();
    let p0 = PoseTensor::from_poses(&[Pose::new([0.01, 0.02, -0.01], [0.1, 0.0, 0.05])]);
    let p1 = PoseTensor::from_poses(&[Pose::new([-0.02, 0.01, 0.0], [-0.1, 0.02, -0.05])]);
    (target, s0, s1, depth, p0, p1)
}

#[test]
fn masked_only_with_full_mask_equals_complete() {
    let (target, s0, s1, depth, p0, p1) = warp_fixture();
    let full = vec![true; 64];
    let mut inp = DepthLossInputs {
        target: &target,
        sources: [&s0, &s1],
        depth: &depth,
        disparity: &depth,
        poses: [&p0, &p1],
        intrinsics: &toy_k(),
        mask: None,
    };
    let cfg = LossConfig::default();
    let complete = depth_loss(&inp, &cfg).unwrap().total.item();
    let masked_cfg = LossConfig {
        region: LossRegion::MaskedOnly,
        ..cfg
    };
    assert!(matches!(depth_loss(&inp, &masked_cfg), Err(LossError::MissingMask)));
    inp.mask = Some(&full);
    assert_eq!(depth_loss(&inp, &masked_cfg).unwrap().total.item(), complete);
    let partial: Vec<bool> = (0..64).map(|i| i < 32).collect();
    inp.mask = Some(&partial);
    let part = depth_loss(&inp, &masked_cfg).unwrap();
    assert!(part.coverage <= 0.5);
}

#[test]
fn min_combine_prefers_the_visible_source() {
    let (target, s0, _, depth, p0, _) = warp_fixture();
    // second source is pushed far outside the frustum
    let away = PoseTensor::from_poses(&[Pose::new([0.0; 3], [100.0, 0.0, 0.0])]);
    let inp_one = DepthLossInputs {
        target: &target,
        sources: [&s0, &s0],
        depth: &depth,
        disparity: &depth,
        poses: [&p0, &away],
        intrinsics: &toy_k(),
        mask: None,
    };
    let inp_two = DepthLossInputs {
        poses: [&p0, &p0],
        ..inp_one
    };
    let mut cfg = LossConfig::default();
    cfg.weights.lambda3 = 0.0;
    let a = depth_loss(&inp_one, &cfg).unwrap().total.item();
    let b = depth_loss(&inp_two, &cfg).unwrap().total.item();
    assert!((a - b).abs() < 1e-12);
    cfg.combine = PhotometricCombine::Mean;
    let c = depth_loss(&inp_one, &cfg).unwrap().total.item();
    assert!((c - b).abs() < 1e-12);
}

#[test]
fn depth_loss_gradient_wrt_depth_and_pose() {
    let (target, s0, s1, depth, _, _) = warp_fixture();
    let k = toy_k();
    let pose = vec![0.01, 0.02, -0.01, 0.1, 0.0, 0.05, -0.02, 0.01, 0.0, -0.1, 0.02, -0.05];
    for combine in [PhotometricCombine::Min, PhotometricCombine::Mean] {
        let cfg = LossConfig {
            combine,
            ..LossConfig::default()
        };
        let rep = GradCheck::default()
            .run(&[(depth.to_vec(), vec![1, 8, 8]), (pose.clone(), vec![4, 3])], |xs| {
                let p0 = PoseTensor {
                    rotation: xs[1].slice(0, 0, 1)?,
                    translation: xs[1].slice(0, 1, 2)?,
                };
                let p1 = PoseTensor {
                    rotation: xs[1].slice(0, 2, 3)?,
                    translation: xs[1].slice(0, 3, 4)?,
                };
                let disp = xs[0].pow_scalar(-1.0)?;
                let inp = DepthLossInputs {
                    target: &target,
                    sources: [&s0, &s1],
                    depth: &xs[0],
                    disparity: &disp,
                    poses: [&p0, &p1],
                    intrinsics: &k,
                    mask: None,
                };
                depth_loss(&inp, &cfg)
                    .map(|o| o.total)
                    .map_err(|e| TensorError::Invalid(e.to_string()))
            })
            .unwrap();
        assert!(rep.max_rel_err < 1e-4, "{combine:?} {:?} {}", rep.worst, rep.max_rel_err);
    }
}

#[test]
fn weights_validation() {
    let bad = LossWeights {
        lambda1: 0.0,
        lambda2: 0.0,
        lambda3: 1.0,
    };
    assert!(bad.validate().is_err());
    assert!(LossWeights {
        lambda1: -0.1,
        ..LossWeights::default()
    }
    .validate()
    .is_err());
    assert!(LossWeights::default().validate().is_ok());
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(32))]
    #[test]
    fn losses_are_finite_and_non_negative(seed in 0u64..10_000, tx in -0.5f64..0.5, tz in -0.5f64..0.5) {
        let target = img(seed, &[1, 8, 8, 3]);
        let s0 = img(seed + 1, &[1, 8, 8, 3]);
        let depth = Tensor::new(fixture(64, seed + 2, 0.1, 100.0), &[1, 8, 8]).unwrap();
        let p = PoseTensor::from_poses(&[Pose::new([0.0; 3], [tx, 0.0, tz])]);
        let id = PoseTensor::identity(1);
        let inp = DepthLossInputs {
            target: &target,
            sources: [&s0, &s0],
            depth: &depth,
            disparity: &depth,
            poses: [&p, &id],
            intrinsics: &toy_k(),
            mask: None,
        };
        let out = depth_loss(&inp, &LossConfig::default()).unwrap();
        let v = out.total.item();
        prop_assert!(v.is_finite() && v >= 0.0);
        let s = ssim_loss(&target, &s0, 3).unwrap().item();
        prop_assert!((0.0..=1.0).contains(&s));
        prop_assert!(smoothness_loss(&depth, &target).unwrap().item() >= 0.0);
    }
}
