//! Flat-lit to relit video translation: a synthetic light stage, a data
//! preparation pipeline, a small conditional pixel-space diffusion model with
//! LoRA adaptation, chunked video inference and evaluation metrics.

pub mod cli;
pub mod datapipe;
pub mod diffusion;
pub mod envmap;
pub mod error;
pub mod experiments;
pub mod fsutil;
pub mod image;
pub mod infer;
pub mod metrics;
pub mod parallel;
pub mod synthstage;

pub use error::{Error, Result};
