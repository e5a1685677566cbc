//! Two-phase training orchestration: supervised source pretraining with
//! stylized inputs, source-free target adaptation with an EMA teacher,
//! evaluation and the ablation matrix runner.

mod ablate;
mod config;
mod data;
mod eval;
mod optim;
mod train;

pub use ablate::{run_ablation_matrix, AblationCell, AblationGrid, AblationRecord};
pub use config::{AdaptConfig, MetricsRecord};
pub use data::{Dataset, ImageSample};
pub use eval::{evaluate, EvalResult};
pub use optim::AdamW;
pub use train::{
    adapt_target, adapt_target_with, build_style_profiles, ema_update, pretrain_source,
    stylize_sample, AdaptOptions, StyleProfiles,
};

#[cfg(test)]
mod tests;
