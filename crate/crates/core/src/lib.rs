//! Multimodal source-free domain adaptation for RGB-D semantic
//! segmentation at desk scale.
//!
//! The crate provides the four building blocks and their composition:
//!
//! * [`numerics`] — tensors, 2D DFT, stable softmax, seeded RNG and a
//!   finite-difference gradient oracle;
//! * [`spectral`] — frequency-domain style transfer on color and
//!   disparity images (amplitude swap inside a low-frequency window);
//! * [`encoder`] — a small shared-encoder vision transformer with
//!   key-swap cross-modality attention and analytic backward passes;
//! * [`losses`] — pseudo-label generation, depth-validity confidence
//!   filtering, masked cross-entropy and disparity-weighted entropy
//!   minimization;
//! * [`pipeline`] — the pretrain/adapt/evaluate loops, EMA teacher,
//!   optimizer and the ablation matrix runner.

pub mod checkpoint;
pub mod encoder;
pub mod error;
pub mod losses;
pub mod numerics;
pub mod pipeline;
pub mod spectral;

pub use error::{Error, Result};
