//! Pixel-space conditional denoising diffusion with clean-target regression,
//! explicit gradients, Adam and low-rank adaptation.

pub mod adam;
pub mod checkpoint;
pub mod cond;
pub mod lora;
pub mod net;
pub mod objective;
pub mod ops;
pub mod real;
pub mod schedule;
pub mod train;

pub use adam::{AdamConfig, AdamState};
pub use cond::{
    env_conditioning, ConditioningStack, IdentityEncoder, LatentEncoder, STACK_CHANNELS,
};
pub use lora::{merge_lora, LoraAdapter};
pub use net::{Denoiser, NetConfig, ParamSet};
pub use objective::{
    draw_noise, grad, grad_with_draws, loss, loss_with_draws, predictor_loss, NoiseDraw, TrainItem,
    X0Predictor,
};
pub use real::Real;
pub use schedule::Schedule;
pub use train::{InputSource, TrainConfig, TrainMode, Trainer};
