//! Encoder architecture description.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// How the depth stream interacts with the color stream inside each
/// stage's attention.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum FusionMode {
    /// Plain self-attention on the color stream; depth is ignored.
    RgbOnly,
    /// Cross-attention in the depth-to-color direction:
    /// `softmax(Q_rgb K_d^T / sqrt(d_head)) V_d`.
    CrossDToRgb,
    /// Key swap: `softmax(Q_rgb K_d^T / sqrt(d_head)) V_rgb`.
    KeySwap,
}

impl FusionMode {
    pub fn as_str(&self) -> &'static str {
        match self {
            FusionMode::RgbOnly => "rgb_only",
            FusionMode::CrossDToRgb => "cross_d_to_rgb",
            FusionMode::KeySwap => "key_swap",
        }
    }

    pub fn parse(s: &str) -> Result<Self> {
        match s {
            "rgb_only" => Ok(FusionMode::RgbOnly),
            "cross_d_to_rgb" => Ok(FusionMode::CrossDToRgb),
            "key_swap" => Ok(FusionMode::KeySwap),
            other => Err(Error::invalid_config(format!("unknown fusion mode `{other}`"))),
        }
    }
}

/// Hidden width of every MLP block relative to its stage dimension.
pub const MLP_RATIO: usize = 2;

/// Channels fed to the shared patch embedding. Depth maps are replicated
/// to this channel count so one embedding serves both modalities.
pub const EMBED_CHANNELS: usize = 3;

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct EncoderConfig {
    pub patch_size: usize,
    pub stage_dims: Vec<usize>,
    pub heads_per_stage: Vec<usize>,
    pub num_classes: usize,
    pub fusion_mode: FusionMode,
}

impl EncoderConfig {
    /// Small reference model used across the test and benchmark suites.
    pub fn toy(num_classes: usize, fusion_mode: FusionMode) -> Self {
        Self {
            patch_size: 4,
            stage_dims: vec![16, 32],
            heads_per_stage: vec![2, 2],
            num_classes,
            fusion_mode,
        }
    }

    pub fn num_stages(&self) -> usize {
        self.stage_dims.len()
    }

    pub fn validate(&self) -> Result<()> {
        if self.patch_size == 0 {
            return Err(Error::invalid_config("patch_size must be positive"));
        }
        if self.stage_dims.is_empty() {
            return Err(Error::invalid_config("at least one stage required"));
        }
        if self.stage_dims.len() != self.heads_per_stage.len() {
            return Err(Error::invalid_config(
                "stage_dims and heads_per_stage lengths differ",
            ));
        }
        for (s, (&dim, &heads)) in self
            .stage_dims
            .iter()
            .zip(&self.heads_per_stage)
            .enumerate()
        {
            if dim == 0 || heads == 0 || dim % heads != 0 {
                return Err(Error::invalid_config(format!(
                    "stage {s}: dim {dim} not divisible by heads {heads}"
                )));
            }
        }
        if self.num_classes == 0 {
            return Err(Error::invalid_config("num_classes must be positive"));
        }
        Ok(())
    }

    /// Errors unless the patch size tiles the given spatial extent.
    pub fn check_divides(&self, height: usize, width: usize) -> Result<()> {
        if height == 0 || width == 0 || height % self.patch_size != 0 || width % self.patch_size != 0 {
            return Err(Error::invalid_config(format!(
                "patch size {} does not tile {height}x{width}",
                self.patch_size
            )));
        }
        Ok(())
    }
}
