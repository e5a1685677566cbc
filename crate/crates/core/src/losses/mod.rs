//! Output-level adaptation machinery: pseudo-labels, the depth-validity
//! plus confidence selection mask, masked self-training cross-entropy,
//! per-pixel entropy and disparity-weighted entropy minimization.
//!
//! Scalar losses operate on probability maps. The `*_grad` companions
//! take raw logits and return the analytic gradient used by training;
//! both routes are validated against each other and against finite
//! differences in the tests.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::numerics::softmax::softmax_row_inplace;
use crate::numerics::tensor::Tensor;

/// Sentinel label excluded from supervised losses and evaluation.
pub const IGNORE_LABEL: u32 = 255;

/// Per-pixel class distribution, `H x W x C`.
#[derive(Debug, Clone)]
pub struct ProbabilityMap {
    probs: Tensor,
}

impl ProbabilityMap {
    /// Validates shape, non-negativity and per-pixel normalization.
    pub fn new(probs: Tensor) -> Result<Self> {
        probs.expect_rank(3, "probability map")?;
        let c = probs.shape()[2];
        if c == 0 {
            return Err(Error::invalid_input("probability map needs >= 1 class"));
        }
        for (i, px) in probs.data().chunks_exact(c).enumerate() {
            let mut sum = 0.0;
            for &p in px {
                if p < 0.0 {
                    return Err(Error::invalid_input(format!(
                        "probability map has negative entry at pixel {i}"
                    )));
                }
                sum += p;
            }
            if (sum - 1.0).abs() > 1e-9 {
                return Err(Error::invalid_input(format!(
                    "probability map pixel {i} sums to {sum}, not 1"
                )));
            }
        }
        Ok(Self { probs })
    }

    /// Per-pixel softmax over the class axis of an `H x W x C` logits tensor.
    pub fn from_logits(logits: &Tensor) -> Result<Self> {
        logits.expect_rank(3, "logits")?;
        let c = logits.shape()[2];
        let mut probs = logits.clone();
        for px in probs.data_mut().chunks_exact_mut(c) {
            softmax_row_inplace(px);
        }
        Ok(Self { probs })
    }

    pub fn tensor(&self) -> &Tensor {
        &self.probs
    }

    pub fn height(&self) -> usize {
        self.probs.shape()[0]
    }

    pub fn width(&self) -> usize {
        self.probs.shape()[1]
    }

    pub fn num_classes(&self) -> usize {
        self.probs.shape()[2]
    }
}

/// Argmax labels with their confidences.
#[derive(Debug, Clone)]
pub struct PseudoLabel {
    pub height: usize,
    pub width: usize,
    pub labels: Vec<u32>,
    pub confidence: Vec<f64>,
}

/// Binary keep/reject grid with rejection diagnostics.
#[derive(Debug, Clone)]
pub struct SelectionMask {
    pub height: usize,
    pub width: usize,
    pub keep: Vec<bool>,
    pub rejected_by_depth: usize,
    pub rejected_by_confidence: usize,
    pub kept: usize,
}

impl SelectionMask {
    pub fn kept_fraction(&self) -> f64 {
        self.kept as f64 / (self.height * self.width) as f64
    }
}

/// Confidence filter scope for the top-fraction branch.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum FilterScope {
    /// Rank each pixel among pixels sharing its pseudo-label.
    PerClass,
    /// Rank each pixel among all pixels of the image.
    Global,
}

/// Pseudo-label confidence filter settings.
#[derive(Debug, Clone, Copy, Serialize, Deserialize)]
pub struct FilterConfig {
    pub tau: f64,
    pub top_fraction: f64,
    pub scope: FilterScope,
}

impl FilterConfig {
    pub fn validate(&self) -> Result<()> {
        if !(0.0..=1.0).contains(&self.tau) {
            return Err(Error::invalid_config(format!("tau {} outside [0,1]", self.tau)));
        }
        if !(self.top_fraction > 0.0 && self.top_fraction <= 1.0) {
            return Err(Error::invalid_config(format!(
                "top_fraction {} outside (0,1]",
                self.top_fraction
            )));
        }
        Ok(())
    }
}

impl Default for FilterConfig {
    fn default() -> Self {
        Self {
            tau: 0.9,
            top_fraction: 0.66,
            scope: FilterScope::PerClass,
        }
    }
}

/// Minimum class population for the top-fraction branch to apply.
const MIN_CLASS_PIXELS: usize = 3;

/// Argmax class and max probability per pixel. Ties break toward the
/// lowest class index.
pub fn pseudo_labels(teacher_probs: &ProbabilityMap) -> PseudoLabel {
    let (h, w, c) = (
        teacher_probs.height(),
        teacher_probs.width(),
        teacher_probs.num_classes(),
    );
    let mut labels = Vec::with_capacity(h * w);
    let mut confidence = Vec::with_capacity(h * w);
    for px in teacher_probs.tensor().data().chunks_exact(c) {
        let mut best = 0usize;
        let mut best_p = px[0];
        for (k, &p) in px.iter().enumerate().skip(1) {
            if p > best_p {
                best = k;
                best_p = p;
            }
        }
        labels.push(best as u32);
        confidence.push(best_p);
    }
    PseudoLabel {
        height: h,
        width: w,
        labels,
        confidence,
    }
}

/// Per-pixel keep decision: depth must be valid AND the confidence must
/// either exceed `tau` or sit within the top `top_fraction` of confidences
/// in its scope. Classes with fewer than three pixels keep only their
/// tau-passing pixels. The top-fraction cut is threshold-based: every
/// pixel whose confidence reaches the k-th largest value is kept, with
/// `k = ceil(top_fraction * n)`.
pub fn selection_mask(
    pl: &PseudoLabel,
    depth_valid: &[bool],
    cfg: &FilterConfig,
) -> Result<SelectionMask> {
    cfg.validate()?;
    let n = pl.height * pl.width;
    if depth_valid.len() != n || pl.labels.len() != n || pl.confidence.len() != n {
        return Err(Error::invalid_input(format!(
            "selection_mask: grid size mismatch ({} labels, {} valid, {}x{})",
            pl.labels.len(),
            depth_valid.len(),
            pl.height,
            pl.width
        )));
    }

    // Top-fraction confidence cutoffs per scope group.
    let groups: Vec<Vec<f64>> = match cfg.scope {
        FilterScope::Global => vec![pl.confidence.clone()],
        FilterScope::PerClass => {
            let max_label = pl.labels.iter().copied().max().unwrap_or(0) as usize;
            let mut per = vec![Vec::new(); max_label + 1];
            for (&lbl, &conf) in pl.labels.iter().zip(&pl.confidence) {
                per[lbl as usize].push(conf);
            }
            per
        }
    };
    let cutoffs: Vec<Option<f64>> = groups
        .into_iter()
        .map(|mut confs| {
            if confs.len() < MIN_CLASS_PIXELS {
                return None;
            }
            let k = ((cfg.top_fraction * confs.len() as f64).ceil() as usize)
                .clamp(1, confs.len());
            confs.sort_by(|a, b| b.partial_cmp(a).unwrap());
            Some(confs[k - 1])
        })
        .collect();

    let mut keep = vec![false; n];
    let (mut by_depth, mut by_conf, mut kept) = (0usize, 0usize, 0usize);
    for i in 0..n {
        if !depth_valid[i] {
            by_depth += 1;
            continue;
        }
        let conf = pl.confidence[i];
        let cutoff = match cfg.scope {
            FilterScope::Global => cutoffs[0],
            FilterScope::PerClass => cutoffs[pl.labels[i] as usize],
        };
        let in_top = cutoff.map_or(false, |c| conf >= c);
        if conf > cfg.tau || in_top {
            keep[i] = true;
            kept += 1;
        } else {
            by_conf += 1;
        }
    }
    Ok(SelectionMask {
        height: pl.height,
        width: pl.width,
        keep,
        rejected_by_depth: by_depth,
        rejected_by_confidence: by_conf,
        kept,
    })
}

/// Scalar loss value plus a degenerate-input flag.
#[derive(Debug, Clone, Copy)]
pub struct LossValue {
    pub value: f64,
    /// Set when the loss was defined as zero because no pixel contributed.
    pub degenerate: bool,
}

fn lse(row: &[f64]) -> f64 {
    let max = row.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    max + row.iter().map(|&z| (z - max).exp()).sum::<f64>().ln()
}

/// Mean `-log p(label)` over mask-kept pixels, from raw logits.
/// An empty mask yields zero with the degenerate flag set.
pub fn masked_ce(logits: &Tensor, pl: &PseudoLabel, mask: &SelectionMask) -> Result<LossValue> {
    let (loss, _, degenerate) = masked_ce_grad_impl(logits, &pl.labels, Some(&mask.keep), false)?;
    if degenerate {
        log::warn!("masked_ce: empty selection mask, loss defined as 0");
    }
    Ok(LossValue {
        value: loss,
        degenerate,
    })
}

/// Masked cross-entropy with its gradient with respect to the logits.
pub fn masked_ce_grad(
    logits: &Tensor,
    pl: &PseudoLabel,
    mask: &SelectionMask,
) -> Result<(LossValue, Tensor)> {
    let (loss, grad, degenerate) =
        masked_ce_grad_impl(logits, &pl.labels, Some(&mask.keep), true)?;
    Ok((
        LossValue {
            value: loss,
            degenerate,
        },
        grad.expect("gradient requested"),
    ))
}

/// Mean `-log p(label)` over non-ignored pixels of a ground-truth grid.
pub fn supervised_ce(probs: &ProbabilityMap, labels: &[u32]) -> Result<LossValue> {
    let (h, w, c) = (probs.height(), probs.width(), probs.num_classes());
    if labels.len() != h * w {
        return Err(Error::invalid_input("supervised_ce: label grid size mismatch"));
    }
    let mut sum = 0.0;
    let mut count = 0usize;
    for (px, &lbl) in probs.tensor().data().chunks_exact(c).zip(labels) {
        if lbl == IGNORE_LABEL {
            continue;
        }
        if lbl as usize >= c {
            return Err(Error::invalid_input(format!(
                "supervised_ce: label {lbl} outside [0, {c})"
            )));
        }
        sum += -(px[lbl as usize].max(f64::MIN_POSITIVE)).ln();
        count += 1;
    }
    if count == 0 {
        log::warn!("supervised_ce: all pixels ignored, loss defined as 0");
        return Ok(LossValue {
            value: 0.0,
            degenerate: true,
        });
    }
    Ok(LossValue {
        value: sum / count as f64,
        degenerate: false,
    })
}

/// Supervised cross-entropy from logits with gradient.
pub fn supervised_ce_grad(logits: &Tensor, labels: &[u32]) -> Result<(LossValue, Tensor)> {
    let (loss, grad, degenerate) = masked_ce_grad_impl(logits, labels, None, true)?;
    if degenerate {
        log::warn!("supervised_ce: all pixels ignored, loss defined as 0");
    }
    Ok((
        LossValue {
            value: loss,
            degenerate,
        },
        grad.expect("gradient requested"),
    ))
}

/// Shared masked/ignored cross-entropy core. `mask` of `None` means all
/// pixels participate except those labeled [`IGNORE_LABEL`].
fn masked_ce_grad_impl(
    logits: &Tensor,
    labels: &[u32],
    mask: Option<&[bool]>,
    want_grad: bool,
) -> Result<(f64, Option<Tensor>, bool)> {
    logits.expect_rank(3, "cross-entropy logits")?;
    let (h, w, c) = (logits.shape()[0], logits.shape()[1], logits.shape()[2]);
    if labels.len() != h * w {
        return Err(Error::invalid_input(format!(
            "cross-entropy: {} labels for {h}x{w} logits",
            labels.len()
        )));
    }
    if let Some(m) = mask {
        if m.len() != h * w {
            return Err(Error::invalid_input("cross-entropy: mask size mismatch"));
        }
    }
    let included: Vec<usize> = (0..h * w)
        .filter(|&i| mask.map_or(labels[i] != IGNORE_LABEL, |m| m[i]))
        .collect();
    let mut grad = want_grad.then(|| Tensor::zeros(vec![h, w, c]));
    if included.is_empty() {
        return Ok((0.0, grad, true));
    }
    let inv_n = 1.0 / included.len() as f64;
    let mut loss = 0.0;
    for &i in &included {
        let lbl = labels[i] as usize;
        if lbl >= c {
            return Err(Error::invalid_input(format!(
                "cross-entropy: label {lbl} outside [0, {c})"
            )));
        }
        let row = &logits.data()[i * c..(i + 1) * c];
        let logz = lse(row);
        loss += logz - row[lbl];
        if let Some(g) = grad.as_mut() {
            let grow = &mut g.data_mut()[i * c..(i + 1) * c];
            for (k, gk) in grow.iter_mut().enumerate() {
                let p = (row[k] - logz).exp();
                *gk = (p - if k == lbl { 1.0 } else { 0.0 }) * inv_n;
            }
        }
    }
    Ok((loss * inv_n, grad, false))
}

/// Per-pixel Shannon entropy (natural log), with `0 * log 0 = 0`.
pub fn entropy_map(probs: &ProbabilityMap) -> Tensor {
    let (h, w, c) = (probs.height(), probs.width(), probs.num_classes());
    let data = probs
        .tensor()
        .data()
        .chunks_exact(c)
        .map(|px| -px.iter().filter(|&&p| p > 0.0).map(|&p| p * p.ln()).sum::<f64>())
        .collect();
    Tensor::from_vec_unchecked(vec![h, w], data)
}

/// Disparity-weighted entropy: weights are `disparity / max(valid disparity)`
/// and the loss is the weighted mean entropy over valid pixels. Returns
/// zero with the degenerate flag when no valid pixel exists or the
/// maximum disparity is zero.
pub fn depth_entropy_loss(
    probs: &ProbabilityMap,
    disparity: &Tensor,
    valid: &[bool],
) -> Result<LossValue> {
    let ent = entropy_map(probs);
    depth_weighted_mean(&ent, disparity, valid).map(|(value, degenerate)| LossValue {
        value,
        degenerate,
    })
}

/// Disparity-weighted entropy from logits, with gradient.
pub fn depth_entropy_grad(
    logits: &Tensor,
    disparity: &Tensor,
    valid: &[bool],
) -> Result<(LossValue, Tensor)> {
    logits.expect_rank(3, "entropy logits")?;
    let (h, w, c) = (logits.shape()[0], logits.shape()[1], logits.shape()[2]);
    check_disparity(disparity, valid, h, w)?;
    let mut grad = Tensor::zeros(vec![h, w, c]);
    let max_disp = max_valid_disparity(disparity, valid);
    let n_valid = valid.iter().filter(|&&v| v).count();
    if n_valid == 0 || max_disp <= 0.0 {
        log::warn!("depth_entropy: no valid pixels or zero max disparity, loss defined as 0");
        return Ok((
            LossValue {
                value: 0.0,
                degenerate: true,
            },
            grad,
        ));
    }
    let inv_n = 1.0 / n_valid as f64;
    let mut loss = 0.0;
    for i in 0..h * w {
        if !valid[i] {
            continue;
        }
        let wgt = disparity.data()[i] / max_disp;
        let row = &logits.data()[i * c..(i + 1) * c];
        let logz = lse(row);
        let mut entropy = 0.0;
        let mut probs_row = vec![0.0; c];
        for k in 0..c {
            let logp = row[k] - logz;
            let p = logp.exp();
            probs_row[k] = p;
            if p > 0.0 {
                entropy -= p * logp;
            }
        }
        loss += wgt * entropy;
        let grow = &mut grad.data_mut()[i * c..(i + 1) * c];
        for k in 0..c {
            let p = probs_row[k];
            let dh_dz = if p > 0.0 { -p * ((row[k] - logz) + entropy) } else { 0.0 };
            grow[k] = wgt * dh_dz * inv_n;
        }
    }
    Ok((
        LossValue {
            value: loss * inv_n,
            degenerate: false,
        },
        grad,
    ))
}

fn check_disparity(disparity: &Tensor, valid: &[bool], h: usize, w: usize) -> Result<()> {
    disparity.expect_rank(2, "disparity")?;
    if disparity.shape() != [h, w] || valid.len() != h * w {
        return Err(Error::invalid_input("depth_entropy: grid shape mismatch"));
    }
    if disparity.data().iter().any(|&d| d < 0.0) {
        return Err(Error::invalid_input("depth_entropy: negative disparity"));
    }
    Ok(())
}

fn max_valid_disparity(disparity: &Tensor, valid: &[bool]) -> f64 {
    disparity
        .data()
        .iter()
        .zip(valid)
        .filter(|(_, &v)| v)
        .map(|(&d, _)| d)
        .fold(0.0, f64::max)
}

fn depth_weighted_mean(ent: &Tensor, disparity: &Tensor, valid: &[bool]) -> Result<(f64, bool)> {
    let (h, w) = (ent.shape()[0], ent.shape()[1]);
    check_disparity(disparity, valid, h, w)?;
    let max_disp = max_valid_disparity(disparity, valid);
    let n_valid = valid.iter().filter(|&&v| v).count();
    if n_valid == 0 || max_disp <= 0.0 {
        log::warn!("depth_entropy: no valid pixels or zero max disparity, loss defined as 0");
        return Ok((0.0, true));
    }
    let mut sum = 0.0;
    for i in 0..h * w {
        if valid[i] {
            sum += ent.data()[i] * disparity.data()[i] / max_disp;
        }
    }
    Ok((sum / n_valid as f64, false))
}
