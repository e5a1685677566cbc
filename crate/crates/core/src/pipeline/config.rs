//! Adaptation hyperparameters and per-step metrics records.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::losses::{FilterConfig, FilterScope};

/// Every hyperparameter of the pretrain/adapt pipeline. The JSON config
/// file mirrors these field names exactly; unknown keys are rejected.
#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct AdaptConfig {
    /// Low-frequency window fraction for color style transfer.
    pub beta_rgb: f64,
    /// Low-frequency window fraction for disparity style transfer.
    pub beta_d: f64,
    /// Pseudo-label confidence threshold.
    pub tau: f64,
    /// Kept quantile of the confidence filter.
    pub top_fraction: f64,
    /// Confidence ranking scope.
    pub filter_scope: FilterScope,
    /// Teacher EMA momentum.
    pub ema_momentum: f64,
    /// Steps between teacher updates.
    pub ema_period: usize,
    /// Weight of the disparity-weighted entropy term.
    pub lambda_ent: f64,
    /// Peak learning rate (decays linearly to zero over each run).
    pub lr: f64,
    /// Decoupled weight decay.
    pub weight_decay: f64,
    pub pretrain_epochs: usize,
    pub adapt_epochs: usize,
    pub pretrain_batch_size: usize,
    pub adapt_batch_size: usize,
    pub seed: u64,
}

impl Default for AdaptConfig {
    fn default() -> Self {
        Self {
            beta_rgb: 0.01,
            beta_d: 0.09,
            tau: 0.9,
            top_fraction: 0.66,
            filter_scope: FilterScope::PerClass,
            ema_momentum: 0.99,
            ema_period: 100,
            lambda_ent: 0.1,
            lr: 6e-5,
            weight_decay: 0.01,
            pretrain_epochs: 20,
            adapt_epochs: 20,
            pretrain_batch_size: 4,
            adapt_batch_size: 2,
            seed: 0,
        }
    }
}

impl AdaptConfig {
    /// Settings for the built-in 64x64 benchmark: the learning rate is
    /// raised for from-scratch training of the small model, which has no
    /// pretrained backbone to fine-tune.
    pub fn toy() -> Self {
        Self {
            lr: 3e-3,
            pretrain_epochs: 10,
            adapt_epochs: 8,
            ..Self::default()
        }
    }

    pub fn validate(&self) -> Result<()> {
        for (name, v) in [("beta_rgb", self.beta_rgb), ("beta_d", self.beta_d)] {
            if !(0.0..=1.0).contains(&v) {
                return Err(Error::invalid_config(format!("{name} {v} outside [0,1]")));
            }
        }
        if !(0.0..=1.0).contains(&self.ema_momentum) {
            return Err(Error::invalid_config("ema_momentum outside [0,1]"));
        }
        if self.ema_period == 0 {
            return Err(Error::invalid_config("ema_period must be >= 1"));
        }
        if !(self.lr > 0.0) {
            return Err(Error::invalid_config("lr must be positive"));
        }
        if self.weight_decay < 0.0 {
            return Err(Error::invalid_config("weight_decay must be non-negative"));
        }
        if self.lambda_ent < 0.0 {
            return Err(Error::invalid_config("lambda_ent must be non-negative"));
        }
        if self.pretrain_batch_size == 0 || self.adapt_batch_size == 0 {
            return Err(Error::invalid_config("batch sizes must be >= 1"));
        }
        if self.pretrain_epochs == 0 || self.adapt_epochs == 0 {
            return Err(Error::invalid_config("epoch counts must be >= 1"));
        }
        self.filter_config().validate()
    }

    pub fn filter_config(&self) -> FilterConfig {
        FilterConfig {
            tau: self.tau,
            top_fraction: self.top_fraction,
            scope: self.filter_scope,
        }
    }

    /// Parses the JSON config document.
    pub fn from_json(json: &str) -> Result<Self> {
        let cfg: AdaptConfig = serde_json::from_str(json)
            .map_err(|e| Error::invalid_config(format!("config JSON: {e}")))?;
        cfg.validate()?;
        Ok(cfg)
    }
}

/// One pipeline telemetry record; serialized as one NDJSON line.
#[derive(Debug, Clone, Serialize, Deserialize, Default)]
pub struct MetricsRecord {
    pub step: usize,
    pub phase: String,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub loss_supervised: Option<f64>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub loss_pseudo: Option<f64>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub loss_entropy: Option<f64>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub mask_kept_fraction: Option<f64>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub per_class_iou: Option<Vec<Option<f64>>>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub miou: Option<f64>,
}
