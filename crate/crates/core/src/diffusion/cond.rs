//! Channel-stacked conditioning input and the latent encoder interface.

use crate::envmap::{reinhard_tonemap, CameraPose, EnvironmentMap};
use crate::error::{Error, Result};
use crate::image::Image;

pub const TARGET_CHANNELS: usize = 3;
/// Normal (3), roughness (1), metalness (1); always zero.
pub const GBUFFER_CHANNELS: usize = 5;
pub const STACK_CHANNELS: usize = 3 * TARGET_CHANNELS + GBUFFER_CHANNELS;

/// Maps images to the space the denoiser works in.
pub trait LatentEncoder {
    fn encode(&self, image: &Image) -> Image;
    fn decode(&self, latent: &Image) -> Image;
}

/// Pixel-space diffusion: latents are the images themselves.
#[derive(Clone, Copy, Debug, Default)]
pub struct IdentityEncoder;

impl LatentEncoder for IdentityEncoder {
    fn encode(&self, image: &Image) -> Image {
        image.clone()
    }

    fn decode(&self, latent: &Image) -> Image {
        latent.clone()
    }
}

/// Tone-mapped, camera-frame environment resized to the image resolution.
pub fn env_conditioning(
    env: &EnvironmentMap,
    camera: &CameraPose,
    width: usize,
    height: usize,
) -> Result<Image> {
    let view = env.project_to_view(camera)?;
    Ok(reinhard_tonemap(&view.to_image()).resize_bilinear(width, height))
}

/// Noisy target, flat-lit frame, environment conditioning and zeroed G-buffer slots.
#[derive(Clone, Debug, PartialEq)]
pub struct ConditioningStack {
    pub width: usize,
    pub height: usize,
    pub data: Vec<f32>,
}

impl ConditioningStack {
    pub fn build(noisy: &[f32], flat: &Image, env: &Image) -> Result<Self> {
        let (w, h) = (flat.width, flat.height);
        let plane = w * h;
        if flat.channels != TARGET_CHANNELS || env.channels != TARGET_CHANNELS {
            return Err(Error::Shape(
                "flat and environment inputs must be RGB".into(),
            ));
        }
        flat.check_shape(env)?;
        if noisy.len() != TARGET_CHANNELS * plane {
            return Err(Error::Shape(format!(
                "noisy target has {} values, expected {}",
                noisy.len(),
                TARGET_CHANNELS * plane
            )));
        }
        let mut data = Vec::with_capacity(STACK_CHANNELS * plane);
        data.extend_from_slice(noisy);
        data.extend_from_slice(&flat.data);
        data.extend_from_slice(&env.data);
        data.resize(STACK_CHANNELS * plane, 0.0);
        Ok(ConditioningStack {
            width: w,
            height: h,
            data,
        })
    }

    /// Replace the noisy-target slot in place.
    pub fn set_noisy(&mut self, noisy: &[f32]) {
        let n = TARGET_CHANNELS * self.width * self.height;
        self.data[..n].copy_from_slice(noisy);
    }

    pub fn gbuffer(&self) -> &[f32] {
        &self.data[3 * TARGET_CHANNELS * self.width * self.height..]
    }
}
