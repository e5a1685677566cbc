//! Toy shared-encoder vision transformer with cross-modality attention.
//!
//! One patch embedding and one stack of attention/MLP stages serve both
//! the color and the depth stream; fusion happens inside every stage's
//! attention according to the configured mode. Only the fused stream
//! reaches the decoder. Backward passes are fully analytic and checked
//! against finite differences.

mod backward;
mod config;
mod forward;
mod params;

pub use backward::{encoder_backward, InputGrads};
pub use config::{EncoderConfig, FusionMode, EMBED_CHANNELS, MLP_RATIO};
pub use forward::{
    encoder_forward, keyswap_attention_probs, mha_cross, mha_keyswap, patch_embed, EncoderCache,
    TokenGrid, DISP_SCALE, LN_EPS, RGB_SCALE,
};
pub use params::{AttentionParams, LayerNormParams, LinearParams, ModelParams, StageParams};
