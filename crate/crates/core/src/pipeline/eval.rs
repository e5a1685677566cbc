//! Confusion-matrix evaluation with per-class IoU and mIoU.

use rayon::prelude::*;

use crate::encoder::{encoder_forward, ModelParams};
use crate::error::{Error, Result};
use crate::losses::IGNORE_LABEL;
use crate::pipeline::config::MetricsRecord;
use crate::pipeline::data::Dataset;

/// Aggregated evaluation outcome over a labeled dataset.
#[derive(Debug, Clone)]
pub struct EvalResult {
    pub num_classes: usize,
    /// Row = ground truth class, column = predicted class.
    pub confusion: Vec<u64>,
    /// IoU per class; `None` when the class has neither ground-truth nor
    /// predicted pixels.
    pub per_class_iou: Vec<Option<f64>>,
    /// Mean IoU over the present classes.
    pub miou: f64,
    /// Total counted (non-ignored) pixels.
    pub pixel_count: u64,
}

impl EvalResult {
    pub fn to_record(&self, step: usize) -> MetricsRecord {
        MetricsRecord {
            step,
            phase: "eval".into(),
            per_class_iou: Some(self.per_class_iou.clone()),
            miou: Some(self.miou),
            ..Default::default()
        }
    }
}

/// Runs the model over every labeled sample and accumulates a `C x C`
/// confusion matrix (ignore-sentinel pixels skipped), then derives
/// `IoU_c = TP / (TP + FP + FN)` and the mean over present classes.
pub fn evaluate(model: &ModelParams, data: &Dataset) -> Result<EvalResult> {
    let c = model.cfg.num_classes;
    if data.is_empty() {
        return Err(Error::invalid_input("evaluate: empty dataset"));
    }
    if !data.fully_labeled() {
        return Err(Error::invalid_input("evaluate: every sample must be labeled"));
    }

    let partials: Vec<Result<Vec<u64>>> = (0..data.len())
        .into_par_iter()
        .map(|i| {
            let s = data.get(i);
            let labels = s.label.as_ref().expect("labeled");
            let (logits, _) = encoder_forward(&s.rgb, &s.disparity, model)?;
            let mut confusion = vec![0u64; c * c];
            for (px, &gt) in logits.data().chunks_exact(c).zip(labels) {
                if gt == IGNORE_LABEL {
                    continue;
                }
                let mut best = 0usize;
                for k in 1..c {
                    if px[k] > px[best] {
                        best = k;
                    }
                }
                confusion[gt as usize * c + best] += 1;
            }
            Ok(confusion)
        })
        .collect();

    let mut confusion = vec![0u64; c * c];
    for p in partials {
        for (acc, v) in confusion.iter_mut().zip(p?) {
            *acc += v;
        }
    }
    let pixel_count: u64 = confusion.iter().sum();
    if pixel_count == 0 {
        return Err(Error::invalid_input("evaluate: no labeled pixels"));
    }

    let mut per_class_iou = Vec::with_capacity(c);
    let mut present = 0usize;
    let mut iou_sum = 0.0;
    for k in 0..c {
        let tp = confusion[k * c + k];
        let fn_: u64 = (0..c).map(|j| confusion[k * c + j]).sum::<u64>() - tp;
        let fp: u64 = (0..c).map(|i| confusion[i * c + k]).sum::<u64>() - tp;
        let denom = tp + fp + fn_;
        if denom == 0 {
            per_class_iou.push(None);
        } else {
            let iou = tp as f64 / denom as f64;
            per_class_iou.push(Some(iou));
            iou_sum += iou;
            present += 1;
        }
    }
    Ok(EvalResult {
        num_classes: c,
        confusion,
        per_class_iou,
        miou: if present > 0 { iou_sum / present as f64 } else { 0.0 },
        pixel_count,
    })
}
