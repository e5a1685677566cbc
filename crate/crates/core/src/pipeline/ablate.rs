//! Ablation matrix runner: cartesian grid over fusion mode, the
//! self-training / style / entropy toggles and a common seed set.

use std::collections::BTreeMap;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::encoder::{EncoderConfig, FusionMode, ModelParams};
use crate::error::{Error, Result};
use crate::pipeline::config::{AdaptConfig, MetricsRecord};
use crate::pipeline::data::Dataset;
use crate::pipeline::eval::evaluate;
use crate::pipeline::train::{adapt_target_with, pretrain_source, AdaptOptions, StyleProfiles};

/// Axis value lists; the runner executes their cartesian product.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct AblationGrid {
    pub fusion_modes: Vec<FusionMode>,
    pub self_training: Vec<bool>,
    pub style: Vec<bool>,
    pub entropy: Vec<bool>,
    pub seeds: Vec<u64>,
}

impl AblationGrid {
    /// The six-row layout of the module ablation: color-only and
    /// multimodal baselines, then self-training, style and entropy
    /// stacked on top.
    pub fn module_rows() -> Vec<AblationCell> {
        let mut rows = Vec::new();
        for (fusion, st, style, entropy) in [
            (FusionMode::RgbOnly, false, false, false),
            (FusionMode::RgbOnly, true, false, false),
            (FusionMode::KeySwap, false, false, false),
            (FusionMode::KeySwap, true, false, false),
            (FusionMode::KeySwap, true, true, false),
            (FusionMode::KeySwap, true, true, true),
        ] {
            rows.push(AblationCell {
                fusion_mode: fusion,
                self_training: st,
                style,
                entropy,
                seed: 0,
            });
        }
        rows
    }

    pub fn validate(&self) -> Result<()> {
        if self.fusion_modes.is_empty()
            || self.self_training.is_empty()
            || self.style.is_empty()
            || self.entropy.is_empty()
            || self.seeds.is_empty()
        {
            return Err(Error::invalid_config("ablation grid has an empty axis"));
        }
        Ok(())
    }

    /// Cells in deterministic nested order (fusion, st, style, entropy, seed).
    pub fn cells(&self) -> Vec<AblationCell> {
        let mut out = Vec::new();
        for &fusion_mode in &self.fusion_modes {
            for &self_training in &self.self_training {
                for &style in &self.style {
                    for &entropy in &self.entropy {
                        for &seed in &self.seeds {
                            out.push(AblationCell {
                                fusion_mode,
                                self_training,
                                style,
                                entropy,
                                seed,
                            });
                        }
                    }
                }
            }
        }
        out
    }
}

/// One configuration point of the ablation matrix.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct AblationCell {
    pub fusion_mode: FusionMode,
    pub self_training: bool,
    pub style: bool,
    pub entropy: bool,
    pub seed: u64,
}

/// Final target evaluation of one cell.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct AblationRecord {
    #[serde(flatten)]
    pub cell: AblationCell,
    /// Optimizer steps the evaluated model received.
    pub trained_steps: usize,
    pub metrics: MetricsRecord,
}

#[derive(PartialEq, Eq, PartialOrd, Ord, Clone, Copy)]
struct PretrainKey {
    fusion: u8,
    style: bool,
    seed: u64,
}

fn fusion_tag(f: FusionMode) -> u8 {
    match f {
        FusionMode::RgbOnly => 0,
        FusionMode::CrossDToRgb => 1,
        FusionMode::KeySwap => 2,
    }
}

/// Runs every cell of the grid. Pretraining is shared between cells that
/// agree on (fusion mode, style, seed); the result is identical to
/// running each cell in isolation because pretraining depends only on
/// those inputs. Evaluation always runs on the labeled target split.
pub fn run_ablation_matrix(
    source: &Dataset,
    target: &Dataset,
    style_profiles: &StyleProfiles,
    enc_base: &EncoderConfig,
    base_cfg: &AdaptConfig,
    grid: &AblationGrid,
) -> Result<Vec<AblationRecord>> {
    grid.validate()?;
    base_cfg.validate()?;
    let cells = grid.cells();

    // Distinct pretraining jobs.
    let mut keys: Vec<PretrainKey> = cells
        .iter()
        .map(|c| PretrainKey {
            fusion: fusion_tag(c.fusion_mode),
            style: c.style,
            seed: c.seed,
        })
        .collect();
    keys.sort();
    keys.dedup();

    let pretrained: BTreeMap<PretrainKey, (ModelParams, usize)> = keys
        .par_iter()
        .map(|key| {
            let mut enc_cfg = enc_base.clone();
            enc_cfg.fusion_mode = match key.fusion {
                0 => FusionMode::RgbOnly,
                1 => FusionMode::CrossDToRgb,
                _ => FusionMode::KeySwap,
            };
            let mut cfg = base_cfg.clone();
            cfg.seed = key.seed;
            if !key.style {
                cfg.beta_rgb = 0.0;
                cfg.beta_d = 0.0;
            }
            let (params, recs) = pretrain_source(source, style_profiles, &enc_cfg, &cfg)?;
            Ok((*key, (params, recs.len())))
        })
        .collect::<Result<Vec<_>>>()?
        .into_iter()
        .collect();

    let records: Vec<Result<AblationRecord>> = cells
        .par_iter()
        .map(|cell| {
            let key = PretrainKey {
                fusion: fusion_tag(cell.fusion_mode),
                style: cell.style,
                seed: cell.seed,
            };
            let (base_model, pretrain_steps) = pretrained
                .get(&key)
                .expect("pretraining job scheduled for every cell");
            let adapts = cell.self_training || cell.entropy;
            let (model, steps) = if adapts {
                let mut cfg = base_cfg.clone();
                cfg.seed = cell.seed;
                let (model, recs) = adapt_target_with(
                    target,
                    base_model,
                    &cfg,
                    AdaptOptions {
                        self_training: cell.self_training,
                        entropy: cell.entropy,
                    },
                )?;
                (model, pretrain_steps + recs.len())
            } else {
                (base_model.clone(), *pretrain_steps)
            };
            let result = evaluate(&model, target)?;
            Ok(AblationRecord {
                cell: *cell,
                trained_steps: steps,
                metrics: result.to_record(steps),
            })
        })
        .collect();

    records.into_iter().collect()
}
