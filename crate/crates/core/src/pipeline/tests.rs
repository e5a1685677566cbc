use super::*;
use crate::encoder::{encoder_forward, EncoderConfig, FusionMode};
use crate::losses::IGNORE_LABEL;
use crate::numerics::rng::Rng;
use crate::numerics::tensor::Tensor;

const C: usize = 3;

fn tiny_encoder(fusion: FusionMode) -> EncoderConfig {
    EncoderConfig {
        patch_size: 4,
        stage_dims: vec![8, 8],
        heads_per_stage: vec![2, 2],
        num_classes: C,
        fusion_mode: fusion,
    }
}

/// Structured 16x16 sample: vertical color bands aligned to the 4-pixel
/// patch grid (so per-token labels are unambiguous), one class per band,
/// disparity increasing with the band index.
fn banded_sample(seed: u64, shift: f64) -> ImageSample {
    let (h, w) = (16usize, 16usize);
    let mut rng = Rng::new(seed);
    let mut rgb = vec![0.0; h * w * 3];
    let mut disp = vec![0.0; h * w];
    let mut labels = vec![0u32; h * w];
    let band_colors = [[220.0, 60.0, 40.0], [40.0, 200.0, 80.0], [50.0, 90.0, 230.0]];
    for y in 0..h {
        for x in 0..w {
            let band = (x / 4) % C;
            let i = y * w + x;
            for ch in 0..3 {
                rgb[i * 3 + ch] =
                    (band_colors[band][ch] + shift + rng.uniform(-10.0, 10.0)).clamp(0.0, 255.0);
            }
            disp[i] = 2000.0 + band as f64 * 4000.0 + rng.uniform(-100.0, 100.0);
            labels[i] = band as u32;
        }
    }
    ImageSample::from_parts(
        Tensor::from_vec_unchecked(vec![h, w, 3], rgb),
        Tensor::from_vec_unchecked(vec![h, w], disp),
        Some(labels),
        C,
    )
    .unwrap()
}

fn banded_dataset(n: usize, seed: u64, shift: f64) -> Dataset {
    Dataset::new((0..n).map(|i| banded_sample(seed ^ i as u64, shift)).collect())
}

fn quick_cfg(seed: u64) -> AdaptConfig {
    AdaptConfig {
        lr: 5e-3,
        pretrain_epochs: 2,
        adapt_epochs: 2,
        ema_period: 2,
        seed,
        ..AdaptConfig::default()
    }
}

#[test]
fn stylize_sample_beta_zero_is_bitwise_identity() {
    let target = banded_dataset(2, 50, 30.0);
    let style = build_style_profiles(&target, 2).unwrap();
    let s = banded_sample(1, 0.0);
    let out = stylize_sample(&s, &style, 0.0, 0.0, C).unwrap();
    assert_eq!(out.rgb.data(), s.rgb.data());
    assert_eq!(out.disparity.data(), s.disparity.data());
    assert_eq!(out.valid, s.valid);
}

#[test]
fn overfit_single_sample() {
    // One labeled sample, 200 steps: the supervised loss must collapse.
    let source = Dataset::new(vec![banded_sample(7, 0.0)]);
    let target = banded_dataset(2, 8, 20.0);
    let style = build_style_profiles(&target, 2).unwrap();
    let cfg = AdaptConfig {
        lr: 1e-2,
        pretrain_epochs: 200,
        pretrain_batch_size: 4,
        beta_rgb: 0.0,
        beta_d: 0.0,
        seed: 3,
        ..AdaptConfig::default()
    };
    let (_, records) = pretrain_source(&source, &style, &tiny_encoder(FusionMode::KeySwap), &cfg)
        .unwrap();
    let first = records.first().unwrap().loss_supervised.unwrap();
    let last = records.last().unwrap().loss_supervised.unwrap();
    assert!(
        last < 0.1 * first,
        "loss did not collapse: first {first}, last {last}"
    );
}

#[test]
fn pretrain_is_seed_deterministic() {
    let source = banded_dataset(6, 21, 0.0);
    let target = banded_dataset(4, 22, 25.0);
    let style = build_style_profiles(&target, 4).unwrap();
    let cfg = quick_cfg(11);
    let enc = tiny_encoder(FusionMode::KeySwap);
    let (a, ra) = pretrain_source(&source, &style, &enc, &cfg).unwrap();
    let (b, rb) = pretrain_source(&source, &style, &enc, &cfg).unwrap();
    let (fa, fb) = (a.flatten(), b.flatten());
    assert!(fa.iter().zip(&fb).all(|(x, y)| x.to_bits() == y.to_bits()));
    let (ja, jb) = (
        serde_json::to_string(&ra).unwrap(),
        serde_json::to_string(&rb).unwrap(),
    );
    assert_eq!(ja, jb, "metrics streams differ between identical runs");
}

#[test]
fn adapt_is_seed_deterministic_and_reports_mask_telemetry() {
    let source = banded_dataset(6, 31, 0.0);
    let target = banded_dataset(6, 32, 25.0);
    let style = build_style_profiles(&target, 4).unwrap();
    let cfg = quick_cfg(13);
    let enc = tiny_encoder(FusionMode::KeySwap);
    let (pre, _) = pretrain_source(&source, &style, &enc, &cfg).unwrap();
    let (s1, r1) = adapt_target(&target, &pre, &cfg).unwrap();
    let (s2, r2) = adapt_target(&target, &pre, &cfg).unwrap();
    assert!(s1
        .flatten()
        .iter()
        .zip(&s2.flatten())
        .all(|(x, y)| x.to_bits() == y.to_bits()));
    assert_eq!(
        serde_json::to_string(&r1).unwrap(),
        serde_json::to_string(&r2).unwrap()
    );
    for r in &r1 {
        let kept = r.mask_kept_fraction.unwrap();
        assert!((0.0..=1.0).contains(&kept));
    }
    assert!(!r1.is_empty());
}

#[test]
fn adapt_rejects_empty_and_lossless_setups() {
    let source = banded_dataset(4, 41, 0.0);
    let target = banded_dataset(4, 42, 25.0);
    let style = build_style_profiles(&target, 2).unwrap();
    let cfg = quick_cfg(14);
    let enc = tiny_encoder(FusionMode::KeySwap);
    let (pre, _) = pretrain_source(&source, &style, &enc, &cfg).unwrap();

    assert!(adapt_target(&Dataset::new(vec![]), &pre, &cfg).is_err());
    assert!(adapt_target_with(
        &target,
        &pre,
        &cfg,
        AdaptOptions {
            self_training: false,
            entropy: false
        }
    )
    .is_err());
}

#[test]
fn adapt_never_reads_source_store() {
    let source = banded_dataset(4, 51, 0.0);
    let target = banded_dataset(4, 52, 25.0);
    let style = build_style_profiles(&target, 2).unwrap();
    let cfg = quick_cfg(15);
    let enc = tiny_encoder(FusionMode::KeySwap);
    let (pre, _) = pretrain_source(&source, &style, &enc, &cfg).unwrap();

    // Poison the source store; adaptation must complete regardless.
    source.poison();
    let (adapted, _) = adapt_target(&target, &pre, &cfg).unwrap();
    assert!(adapted.all_finite());
}

#[test]
fn ema_update_op_endpoints_and_arithmetic() {
    let enc = tiny_encoder(FusionMode::KeySwap);
    let teacher = crate::encoder::ModelParams::init(&enc, &mut Rng::new(61)).unwrap();
    let student = crate::encoder::ModelParams::init(&enc, &mut Rng::new(62)).unwrap();

    let t0 = ema_update(&teacher, &student, 0.0).unwrap();
    assert_eq!(t0.flatten(), student.flatten());
    let t1 = ema_update(&teacher, &student, 1.0).unwrap();
    assert_eq!(t1.flatten(), teacher.flatten());

    // Scalar check: teacher 1.0, student 0.0, momentum 0.99 -> 0.99.
    let mut ones = crate::encoder::ModelParams::zeros_like(&enc).unwrap();
    let flat = vec![1.0; ones.param_count()];
    ones.unflatten_from(&flat).unwrap();
    let zeros = crate::encoder::ModelParams::zeros_like(&enc).unwrap();
    let mixed = ema_update(&ones, &zeros, 0.99).unwrap();
    assert!(mixed.flatten().iter().all(|&v| (v - 0.99).abs() < 1e-15));
}

#[test]
fn evaluate_perfect_predictions_give_miou_one() {
    let enc = tiny_encoder(FusionMode::KeySwap);
    let model = crate::encoder::ModelParams::init(&enc, &mut Rng::new(71)).unwrap();
    // Label every sample with the model's own argmax predictions.
    let base = banded_dataset(3, 72, 0.0);
    let mut samples = Vec::new();
    for i in 0..base.len() {
        let s = base.get(i);
        let (logits, _) = encoder_forward(&s.rgb, &s.disparity, &model).unwrap();
        let labels: Vec<u32> = logits
            .data()
            .chunks_exact(C)
            .map(|px| {
                let mut best = 0usize;
                for k in 1..C {
                    if px[k] > px[best] {
                        best = k;
                    }
                }
                best as u32
            })
            .collect();
        samples.push(
            ImageSample::from_parts(s.rgb.clone(), s.disparity.clone(), Some(labels), C).unwrap(),
        );
    }
    let ds = Dataset::new(samples);
    let result = evaluate(&model, &ds).unwrap();
    assert_eq!(result.miou, 1.0);
    for iou in result.per_class_iou.iter().flatten() {
        assert_eq!(*iou, 1.0);
    }
}

#[test]
fn evaluate_disjoint_predictions_give_zero_iou() {
    let enc = tiny_encoder(FusionMode::KeySwap);
    let model = crate::encoder::ModelParams::init(&enc, &mut Rng::new(81)).unwrap();
    let base = banded_dataset(2, 82, 0.0);
    let mut samples = Vec::new();
    for i in 0..base.len() {
        let s = base.get(i);
        let (logits, _) = encoder_forward(&s.rgb, &s.disparity, &model).unwrap();
        // Shift every predicted label by one class: intersections vanish.
        let labels: Vec<u32> = logits
            .data()
            .chunks_exact(C)
            .map(|px| {
                let mut best = 0usize;
                for k in 1..C {
                    if px[k] > px[best] {
                        best = k;
                    }
                }
                ((best + 1) % C) as u32
            })
            .collect();
        samples.push(
            ImageSample::from_parts(s.rgb.clone(), s.disparity.clone(), Some(labels), C).unwrap(),
        );
    }
    let result = evaluate(&model, &Dataset::new(samples)).unwrap();
    assert_eq!(result.miou, 0.0);
}

#[test]
fn evaluate_skips_ignored_pixels_and_conserves_counts() {
    let enc = tiny_encoder(FusionMode::KeySwap);
    let model = crate::encoder::ModelParams::init(&enc, &mut Rng::new(91)).unwrap();
    let s = banded_sample(92, 0.0);
    let mut labels = s.label.clone().unwrap();
    let total = labels.len();
    for l in labels.iter_mut().take(total / 2) {
        *l = IGNORE_LABEL;
    }
    let ds = Dataset::new(vec![
        ImageSample::from_parts(s.rgb.clone(), s.disparity.clone(), Some(labels), C).unwrap(),
    ]);
    let result = evaluate(&model, &ds).unwrap();
    assert_eq!(result.pixel_count as usize, total - total / 2);
    assert_eq!(result.confusion.iter().sum::<u64>(), result.pixel_count);
}

#[test]
fn evaluate_rejects_unlabeled_or_fully_ignored() {
    let enc = tiny_encoder(FusionMode::KeySwap);
    let model = crate::encoder::ModelParams::init(&enc, &mut Rng::new(95)).unwrap();
    let s = banded_sample(96, 0.0);
    let unlabeled = ImageSample::from_parts(s.rgb.clone(), s.disparity.clone(), None, C).unwrap();
    assert!(evaluate(&model, &Dataset::new(vec![unlabeled])).is_err());

    let all_ignored =
        ImageSample::from_parts(s.rgb.clone(), s.disparity.clone(), Some(vec![IGNORE_LABEL; 256]), C)
            .unwrap();
    assert!(evaluate(&model, &Dataset::new(vec![all_ignored])).is_err());
}

#[test]
fn ablation_matrix_emits_expected_records() {
    let source = banded_dataset(4, 101, 0.0);
    let target = banded_dataset(4, 102, 25.0);
    let style = build_style_profiles(&target, 2).unwrap();
    let cfg = AdaptConfig {
        lr: 5e-3,
        pretrain_epochs: 1,
        adapt_epochs: 1,
        seed: 0,
        ..AdaptConfig::default()
    };
    let grid = AblationGrid {
        fusion_modes: vec![FusionMode::KeySwap],
        self_training: vec![false, true],
        style: vec![false, true],
        entropy: vec![false],
        seeds: vec![0, 1],
    };
    let enc = tiny_encoder(FusionMode::KeySwap);
    let records =
        run_ablation_matrix(&source, &target, &style, &enc, &cfg, &grid).unwrap();
    assert_eq!(records.len(), 8);
    for r in &records {
        let miou = r.metrics.miou.unwrap();
        assert!((0.0..=1.0).contains(&miou));
        let adapts = r.cell.self_training || r.cell.entropy;
        if !adapts {
            // Source-only cells are evaluated straight after pretraining.
            assert_eq!(r.trained_steps, 1 * 1);
        }
    }

    // Byte-determinism of the emitted table.
    let again = run_ablation_matrix(&source, &target, &style, &enc, &cfg, &grid).unwrap();
    assert_eq!(
        serde_json::to_string(&records).unwrap(),
        serde_json::to_string(&again).unwrap()
    );
}
