use super::*;
use crate::data::{Dataset, SceneSpec};
use crate::geometry::DepthMap;
use crate::masking::batch_masks;
use crate::model::{DepthPredictor, Model};
use crate::nn::{ModelConfig, ParamStore};
use proptest::prelude::*;

fn frames(n: usize) -> Dataset {
    let spec = SceneSpec {
        seed: 11,
        supersample: 1,
        ..SceneSpec::default()
    };
    Dataset::generate(&spec, n).unwrap()
}

fn spec(kind: CorruptionKind, severity: u8, seed: u64) -> CorruptionSpec {
    CorruptionSpec::new(kind, severity, seed).unwrap()
}

#[test]
fn gaussian_noise_std_matches_table() {
    let table = SeverityTable::default();
    let img = Image::filled(64, 64, [0.5; 3]);
    for s in 1..=5u8 {
        let out = corrupt(&img, &spec(CorruptionKind::GaussianNoise, s, 3), &table).unwrap();
        let n = out.data.len() as f64;
        let mean = out.data.iter().sum::<f64>() / n;
        let std = (out.data.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / (n - 1.0)).sqrt();
        let sigma = table.gaussian_noise[s as usize - 1];
        assert!((std / sigma - 1.0).abs() < 0.1, "severity {s}: {std} vs {sigma}");
    }
}

#[test]
fn brightness_is_additive_and_clipped() {
    let table = SeverityTable::default();
    let img = Image::new(2, 1, vec![0.0, 0.5, 0.95, 0.2, 0.8, 1.0]);
    let out = corrupt(&img, &spec(CorruptionKind::Brightness, 3, 0), &table).unwrap();
    let want: Vec<f64> = img.data.iter().map(|v| (v + 0.15f64).min(1.0)).collect();
    assert_eq!(out.data, want);
}

#[test]
fn pixelate_is_idempotent() {
    let table = SeverityTable::default();
    let img = frames(1).frames[1].clone();
    let once = corrupt(&img, &spec(CorruptionKind::Pixelate, 5, 0), &table).unwrap();
    let twice = corrupt(&once, &spec(CorruptionKind::Pixelate, 5, 0), &table).unwrap();
    for (a, b) in once.data.iter().zip(&twice.data) {
        assert!((a - b).abs() < 1e-12);
    }
    assert!(once.mean_abs_diff(&img) > 0.0);
}

#[test]
fn unknown_kind_and_severity_are_rejected() {
    assert!("glass_blur".parse::<CorruptionKind>().is_err());
    assert_eq!("zoom_blur".parse::<CorruptionKind>().unwrap(), CorruptionKind::ZoomBlur);
    assert!(CorruptionSpec::new(CorruptionKind::Fog, 0, 0).is_err());
    assert!(CorruptionSpec::new(CorruptionKind::Fog, 6, 0).is_err());
}

#[test]
fn severity_is_monotone_for_every_kind() {
    let table = SeverityTable::default();
    let ds = frames(4);
    for kind in CorruptionKind::ALL {
        let mut prev = 0.0;
        for s in 1..=5u8 {
            let mut total = 0.0;
            for seed in 0..20u64 {
                let img = &ds.frames[seed as usize % ds.frames.len()];
                total += corrupt(img, &spec(kind, s, seed), &table).unwrap().mean_abs_diff(img);
            }
            let avg = total / 20.0;
            assert!(avg >= prev, "{}: severity {s} gives {avg} < {prev}", kind.as_str());
            prev = avg;
        }
    }
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(24))]
    #[test]
    fn corruptions_are_deterministic_and_in_range(k in 0usize..10, s in 1u8..=5, seed in any::<u64>()) {
        let img = Image::new(16, 12, crate::gradcheck::fixture(16 * 12 * 3, seed, 0.0, 1.0));
        let sp = spec(CorruptionKind::ALL[k], s, seed);
        let a = corrupt(&img, &sp, &SeverityTable::default()).unwrap();
        let b = corrupt(&img, &sp, &SeverityTable::default()).unwrap();
        prop_assert_eq!(&a, &b);
        prop_assert!(a.data.iter().all(|v| (0.0..=1.0).contains(v)));
    }
}

fn occ(strategy: MaskStrategy, seed: u64) -> OcclusionSpec {
    OcclusionSpec {
        strategy,
        mask: MaskConfig {
            seed,
            ..MaskConfig::default()
        },
    }
}

#[test]
fn occluding_a_constant_image_changes_nothing() {
    let img = Image::filled(64, 64, [0.25, 0.5, 0.75]);
    let out = occlude(&img, &occ(MaskStrategy::Blockwise, 4)).unwrap();
    assert_eq!(out.image, img);
    assert!(out.pixels.iter().any(|&m| m));
}

#[test]
fn random_occlusion_replaces_a_quarter_of_cells_with_the_mean() {
    let img = frames(1).frames[1].clone();
    let mean = img.mean_rgb();
    for seed in 0..10 {
        let out = occlude(&img, &occ(MaskStrategy::Random, seed)).unwrap();
        assert_eq!(out.grid.count(), 16);
        assert_eq!(out.pixels.iter().filter(|&&m| m).count(), 16 * 64);
        for (p, &m) in out.image.data.chunks(3).zip(&out.pixels) {
            if m {
                for c in 0..3 {
                    assert!((p[c] - mean[c]).abs() < 1e-12);
                }
            }
        }
        let untouched = out
            .image
            .data
            .chunks(3)
            .zip(img.data.chunks(3))
            .zip(&out.pixels)
            .all(|((a, b), &m)| m || a == b);
        assert!(untouched);
    }
    let bad = OcclusionSpec {
        mask: MaskConfig {
            ratio: 1.0,
            ..MaskConfig::default()
        },
        ..OcclusionSpec::default()
    };
    assert!(occlude(&img, &bad).is_err());
}

#[test]
fn occlusion_and_token_masking_agree_on_the_patch_set() {
    let img = frames(1).frames[1].clone();
    for size in [8, 16] {
        for seed in 0..20 {
            let mut sp = occ(MaskStrategy::Blockwise, seed);
            sp.mask.size = size;
            let out = occlude(&img, &sp).unwrap();
            let tokens = &batch_masks(MaskStrategy::Blockwise, &sp.mask, 64, 64, 8, 1).unwrap()[0];
            assert_eq!(out.pixels, tokens.pixel_mask(64, 64, 8), "size {size} seed {seed}");
        }
    }
}

#[test]
fn iteration_schedule() {
    let n: Vec<usize> = [1.0, 2.0, 4.0, 8.0, 16.0].iter().map(|&e| attack_iterations(e)).collect();
    assert_eq!(n, vec![2, 3, 5, 10, 20]);
}

fn small_model() -> Model {
    Model::new(ParamStore::init(ModelConfig::default(), 5).unwrap())
}

#[test]
fn untargeted_attack_respects_the_ball_and_raises_the_loss() {
    let ds = frames(2);
    let model = small_model();
    let t = ds.triplet(0);
    let cfg = crate::losses::LossConfig::default();
    let out = untargeted_attack(&model, t.frames, &ds.intrinsics, 2.0, &cfg).unwrap();
    assert_eq!(out.iterations, 3);
    assert!(out.linf <= 2.0 / 255.0 + 1e-12);
    assert!(out.image.data.iter().all(|v| (0.0..=1.0).contains(v)));
    assert!(out.objective_after > out.objective_before);
    let again = untargeted_attack(&model, t.frames, &ds.intrinsics, 2.0, &cfg).unwrap();
    assert_eq!(again, out);
    assert!(untargeted_attack(&model, t.frames, &ds.intrinsics, 0.0, &cfg).is_err());
}

#[test]
fn flip_attack_descends_and_is_a_no_op_on_symmetric_depth() {
    let ds = frames(1);
    let model = small_model();
    let img = ds.frames[1].clone();
    let out = targeted_flip_attack(&model, &img, 4.0, FlipDirection::Horizontal).unwrap();
    assert!(out.linf <= 4.0 / 255.0 + 1e-12);
    assert!(out.objective_after < out.objective_before);

    // a uniform image gives a left-right symmetric prediction only if the
    // model is symmetric; zero the head so depth is constant instead
    let mut store = model.store.clone();
    for name in ["depth.head.weight", "depth.head.bias"] {
        let n = store.get(name).unwrap().data.len();
        store.set(name, vec![0.0; n]).unwrap();
    }
    let flat = Model::new(store);
    let d = flat.predict(&[&img]).unwrap();
    assert!(d[0].values.iter().all(|&v| v == d[0].values[0]));
    let out = targeted_flip_attack(&flat, &img, 4.0, FlipDirection::Vertical).unwrap();
    assert!(out.objective_before < 1e-9);
    assert_eq!(out.image, img);
}

#[test]
fn flip_depth_mirrors_each_map() {
    let d = DepthMap::new(3, 2, vec![1.0, 2.0, 3.0, 4.0, 5.0, 6.0]).unwrap();
    assert_eq!(flip_depth(&d.values, 2, 3, FlipDirection::Horizontal), vec![3.0, 2.0, 1.0, 6.0, 5.0, 4.0]);
    assert_eq!(flip_depth(&d.values, 2, 3, FlipDirection::Vertical), vec![4.0, 5.0, 6.0, 1.0, 2.0, 3.0]);
}
