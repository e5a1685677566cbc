//! Two-phase training: supervised source pretraining with stylized
//! inputs, then source-free target adaptation with an EMA teacher,
//! depth-masked self-training and disparity-weighted entropy
//! minimization.

use rayon::prelude::*;

use crate::encoder::{encoder_backward, encoder_forward, EncoderConfig, ModelParams};
use crate::error::{Error, Result};
use crate::losses::{
    depth_entropy_grad, masked_ce_grad, pseudo_labels, selection_mask, supervised_ce_grad,
    ProbabilityMap,
};
use crate::numerics::linalg::axpy;
use crate::numerics::rng::Rng;
use crate::numerics::tensor::Tensor;
use crate::pipeline::config::{AdaptConfig, MetricsRecord};
use crate::pipeline::data::{Dataset, ImageSample};
use crate::pipeline::optim::AdamW;
use crate::spectral::{stylize, target_amplitude_profile, AmplitudeProfile, StyleConfig};

/// Precomputed target amplitude profiles for both modalities.
#[derive(Debug, Clone)]
pub struct StyleProfiles {
    pub rgb: AmplitudeProfile,
    pub depth: AmplitudeProfile,
}

/// Averages the first `count` target samples into per-modality profiles.
pub fn build_style_profiles(target: &Dataset, count: usize) -> Result<StyleProfiles> {
    if target.is_empty() {
        return Err(Error::invalid_input("style profiles need target samples"));
    }
    let n = count.clamp(1, target.len());
    let mut rgbs = Vec::with_capacity(n);
    let mut depths = Vec::with_capacity(n);
    for i in 0..n {
        let s = target.get(i);
        rgbs.push(s.rgb.clone());
        let (h, w) = (s.height(), s.width());
        depths.push(Tensor::from_vec_unchecked(
            vec![h, w, 1],
            s.disparity.data().to_vec(),
        ));
    }
    Ok(StyleProfiles {
        rgb: target_amplitude_profile(&rgbs)?,
        depth: target_amplitude_profile(&depths)?,
    })
}

/// Applies frequency-domain style transfer to one sample. Validity and
/// labels pass through unchanged; invalid disparity pixels enter the
/// transform as their stored zeros.
pub fn stylize_sample(
    sample: &ImageSample,
    style: &StyleProfiles,
    beta_rgb: f64,
    beta_d: f64,
    num_classes: usize,
) -> Result<ImageSample> {
    let rgb = stylize(&sample.rgb, &style.rgb, &StyleConfig::color(beta_rgb)?)?;
    let (h, w) = (sample.height(), sample.width());
    let disp3 = Tensor::from_vec_unchecked(vec![h, w, 1], sample.disparity.data().to_vec());
    let disp = stylize(&disp3, &style.depth, &StyleConfig::disparity(beta_d)?)?;
    let disparity = Tensor::from_vec_unchecked(vec![h, w], disp.into_data());
    ImageSample::new(
        rgb,
        disparity,
        sample.valid.clone(),
        sample.label.clone(),
        num_classes,
    )
}

fn mean_scale(parts: Vec<Vec<f64>>, scale: f64) -> Vec<f64> {
    let mut it = parts.into_iter();
    let mut acc = it.next().expect("at least one gradient part");
    for part in it {
        axpy(1.0, &part, &mut acc);
    }
    for v in acc.iter_mut() {
        *v *= scale;
    }
    acc
}

fn batches(order: &[usize], batch_size: usize) -> Vec<Vec<usize>> {
    order.chunks(batch_size).map(|c| c.to_vec()).collect()
}

/// Supervised pretraining on the labeled source split with style
/// transfer applied on the fly to both modalities of every drawn sample.
pub fn pretrain_source(
    source: &Dataset,
    style: &StyleProfiles,
    enc_cfg: &EncoderConfig,
    cfg: &AdaptConfig,
) -> Result<(ModelParams, Vec<MetricsRecord>)> {
    cfg.validate()?;
    enc_cfg.validate()?;
    if source.is_empty() {
        return Err(Error::invalid_input("pretrain_source: empty source dataset"));
    }
    if !source.fully_labeled() {
        return Err(Error::invalid_input("pretrain_source: every sample must be labeled"));
    }

    let root = Rng::new(cfg.seed);
    let mut params = ModelParams::init(enc_cfg, &mut root.fork(0))?;
    let mut order_rng = root.fork(1);
    let mut flip_rng = root.fork(2);

    let steps_per_epoch = source.len().div_ceil(cfg.pretrain_batch_size);
    let total_steps = steps_per_epoch * cfg.pretrain_epochs;
    let mut opt = AdamW::new(params.param_count(), cfg.lr, cfg.weight_decay, total_steps);
    let mut records = Vec::with_capacity(total_steps);
    let mut flat = params.flatten();
    let mut step = 0usize;

    for _epoch in 0..cfg.pretrain_epochs {
        let mut order: Vec<usize> = (0..source.len()).collect();
        order_rng.shuffle(&mut order);
        for batch in batches(&order, cfg.pretrain_batch_size) {
            let flips: Vec<bool> = batch.iter().map(|_| flip_rng.chance(0.5)).collect();
            let results: Vec<Result<(f64, Vec<f64>)>> = batch
                .par_iter()
                .zip(&flips)
                .map(|(&idx, &flip)| {
                    let raw = source.get(idx);
                    let mut s = stylize_sample(
                        raw,
                        style,
                        cfg.beta_rgb,
                        cfg.beta_d,
                        enc_cfg.num_classes,
                    )?;
                    if flip {
                        s = s.flipped();
                    }
                    let labels = s.label.as_ref().expect("labeled source");
                    let (logits, cache) = encoder_forward(&s.rgb, &s.disparity, &params)?;
                    let (loss, dlogits) = supervised_ce_grad(&logits, labels)?;
                    let (grads, _) = encoder_backward(&dlogits, &cache, &params)?;
                    Ok((loss.value, grads.flatten()))
                })
                .collect();

            let mut losses = Vec::with_capacity(results.len());
            let mut grad_parts = Vec::with_capacity(results.len());
            for r in results {
                let (l, g) = r?;
                losses.push(l);
                grad_parts.push(g);
            }
            let batch_len = losses.len();
            let loss = losses.iter().sum::<f64>() / batch_len as f64;
            if !loss.is_finite() {
                return Err(Error::Train {
                    step,
                    msg: format!("supervised loss diverged ({loss})"),
                });
            }
            let grad = mean_scale(grad_parts, 1.0 / batch_len as f64);
            opt.step(&mut flat, &grad)?;
            params.unflatten_from(&flat)?;
            step += 1;
            records.push(MetricsRecord {
                step,
                phase: "pretrain".into(),
                loss_supervised: Some(loss),
                ..Default::default()
            });
        }
    }
    Ok((params, records))
}

/// Loss-term toggles for ablation cells.
#[derive(Debug, Clone, Copy)]
pub struct AdaptOptions {
    pub self_training: bool,
    pub entropy: bool,
}

impl Default for AdaptOptions {
    fn default() -> Self {
        Self {
            self_training: true,
            entropy: true,
        }
    }
}

/// Teacher update: `teacher' = momentum * teacher + (1 - momentum) * student`.
pub fn ema_update(teacher: &ModelParams, student: &ModelParams, momentum: f64) -> Result<ModelParams> {
    if !(0.0..=1.0).contains(&momentum) {
        return Err(Error::invalid_config("ema momentum outside [0,1]"));
    }
    let mut next = teacher.clone();
    next.ema_from(student, momentum)?;
    Ok(next)
}

/// Source-free target adaptation: the signature admits no source data.
/// The student starts from the pretrained weights; a teacher copy
/// produces pseudo-labels, filtered by depth validity and confidence,
/// and is refreshed by EMA every `ema_period` steps.
pub fn adapt_target(
    target: &Dataset,
    pretrained: &ModelParams,
    cfg: &AdaptConfig,
) -> Result<(ModelParams, Vec<MetricsRecord>)> {
    adapt_target_with(target, pretrained, cfg, AdaptOptions::default())
}

/// [`adapt_target`] with explicit loss-term toggles.
pub fn adapt_target_with(
    target: &Dataset,
    pretrained: &ModelParams,
    cfg: &AdaptConfig,
    options: AdaptOptions,
) -> Result<(ModelParams, Vec<MetricsRecord>)> {
    cfg.validate()?;
    if target.is_empty() {
        return Err(Error::invalid_input("adapt_target: empty target dataset"));
    }
    if !options.self_training && !options.entropy {
        return Err(Error::invalid_input(
            "adapt_target: at least one adaptation loss must be enabled",
        ));
    }

    let root = Rng::new(cfg.seed);
    let mut order_rng = root.fork(11);
    let mut flip_rng = root.fork(12);

    let mut student = pretrained.clone();
    let mut teacher = pretrained.clone();
    let filter = cfg.filter_config();

    let steps_per_epoch = target.len().div_ceil(cfg.adapt_batch_size);
    let total_steps = steps_per_epoch * cfg.adapt_epochs;
    let mut opt = AdamW::new(student.param_count(), cfg.lr, cfg.weight_decay, total_steps);
    let mut records = Vec::with_capacity(total_steps);
    let mut flat = student.flatten();
    let mut step = 0usize;

    struct SampleOut {
        pseudo_loss: f64,
        entropy_loss: f64,
        kept: usize,
        pixels: usize,
        grad: Vec<f64>,
    }

    for _epoch in 0..cfg.adapt_epochs {
        let mut order: Vec<usize> = (0..target.len()).collect();
        order_rng.shuffle(&mut order);
        for batch in batches(&order, cfg.adapt_batch_size) {
            let flips: Vec<bool> = batch.iter().map(|_| flip_rng.chance(0.5)).collect();
            let results: Vec<Result<SampleOut>> = batch
                .par_iter()
                .zip(&flips)
                .map(|(&idx, &flip)| {
                    let sample = if flip {
                        target.get(idx).flipped()
                    } else {
                        target.get(idx).clone()
                    };
                    // Teacher produces the pseudo-labels and the mask.
                    let (t_logits, _) = encoder_forward(&sample.rgb, &sample.disparity, &teacher)?;
                    let t_probs = ProbabilityMap::from_logits(&t_logits)?;
                    let pl = pseudo_labels(&t_probs);
                    let mask = selection_mask(&pl, &sample.valid, &filter)?;

                    // Student trains on the masked pseudo-labels plus the
                    // disparity-weighted entropy of its own predictions.
                    let (s_logits, cache) =
                        encoder_forward(&sample.rgb, &sample.disparity, &student)?;
                    let (h, w, c) = (
                        s_logits.shape()[0],
                        s_logits.shape()[1],
                        s_logits.shape()[2],
                    );
                    let mut dlogits = Tensor::zeros(vec![h, w, c]);
                    let mut pseudo_loss = 0.0;
                    let mut entropy_loss = 0.0;
                    if options.self_training {
                        let (l, g) = masked_ce_grad(&s_logits, &pl, &mask)?;
                        pseudo_loss = l.value;
                        axpy(1.0, g.data(), dlogits.data_mut());
                    }
                    if options.entropy && cfg.lambda_ent > 0.0 {
                        let (l, g) =
                            depth_entropy_grad(&s_logits, &sample.disparity, &sample.valid)?;
                        entropy_loss = l.value;
                        axpy(cfg.lambda_ent, g.data(), dlogits.data_mut());
                    }
                    let (grads, _) = encoder_backward(&dlogits, &cache, &student)?;
                    Ok(SampleOut {
                        pseudo_loss,
                        entropy_loss,
                        kept: mask.kept,
                        pixels: h * w,
                        grad: grads.flatten(),
                    })
                })
                .collect();

            let mut outs = Vec::with_capacity(results.len());
            for r in results {
                outs.push(r?);
            }
            let batch_len = outs.len();
            let pseudo = outs.iter().map(|o| o.pseudo_loss).sum::<f64>() / batch_len as f64;
            let entropy = outs.iter().map(|o| o.entropy_loss).sum::<f64>() / batch_len as f64;
            let total = pseudo + cfg.lambda_ent * entropy;
            if !total.is_finite() {
                return Err(Error::Train {
                    step,
                    msg: format!("adaptation loss diverged ({total})"),
                });
            }
            let kept: usize = outs.iter().map(|o| o.kept).sum();
            let pixels: usize = outs.iter().map(|o| o.pixels).sum();
            let grad = mean_scale(
                outs.into_iter().map(|o| o.grad).collect(),
                1.0 / batch_len as f64,
            );
            opt.step(&mut flat, &grad)?;
            student.unflatten_from(&flat)?;
            step += 1;

            if step % cfg.ema_period == 0 {
                teacher.ema_from(&student, cfg.ema_momentum)?;
            }

            records.push(MetricsRecord {
                step,
                phase: "adapt".into(),
                loss_pseudo: options.self_training.then_some(pseudo),
                loss_entropy: options.entropy.then_some(entropy),
                mask_kept_fraction: Some(kept as f64 / pixels as f64),
                ..Default::default()
            });
        }
    }
    Ok((student, records))
}
