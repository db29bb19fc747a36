//! Turning captures into training items.

use serde::{Deserialize, Serialize};

use crate::datapipe::{mask_background, BackgroundMode};
use crate::diffusion::{env_conditioning, InputSource, TrainConfig, TrainItem};
use crate::error::Result;
use crate::image::Image;
use crate::parallel::par_map;
use crate::synthstage::{degrade, synth_capture, CaptureConfig, CaptureSet, FramePair};

/// How a frame pair becomes a training or evaluation example.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct ItemOptions {
    pub input_source: InputSource,
    pub degrade_level: f32,
    pub background: BackgroundMode,
    pub seed: u64,
}

impl Default for ItemOptions {
    fn default() -> Self {
        ItemOptions {
            input_source: InputSource::Flat,
            degrade_level: crate::diffusion::train::DEFAULT_DEGRADE_LEVEL,
            background: BackgroundMode::Keep,
            seed: 0,
        }
    }
}

impl From<&TrainConfig> for ItemOptions {
    fn from(c: &TrainConfig) -> Self {
        ItemOptions {
            input_source: c.input_source,
            degrade_level: c.degrade_level,
            background: c.background,
            seed: c.seed,
        }
    }
}

fn mix(seed: u64, t: usize, camera: usize) -> u64 {
    seed.wrapping_mul(0x9e37_79b9_7f4a_7c15) ^ ((t as u64) << 20) ^ camera as u64
}

/// Tone-mapped camera-frame conditioning for a pair's light.
pub fn pair_env(capture: &CaptureSet, pair: &FramePair) -> Result<Image> {
    let cam = &capture.cameras[pair.camera_id];
    env_conditioning(
        &capture.lights[pair.light_id],
        cam,
        pair.flat.width,
        pair.flat.height,
    )
}

pub fn pair_item(capture: &CaptureSet, pair: &FramePair, opts: &ItemOptions) -> Result<TrainItem> {
    let p = mask_background(pair, opts.background)?;
    let flat = match opts.input_source {
        InputSource::Flat => p.flat,
        InputSource::Degraded => degrade(
            &p.flat,
            opts.degrade_level,
            mix(opts.seed, p.t, p.camera_id),
        )?,
    };
    Ok(TrainItem {
        flat,
        target: p.relit,
        env: pair_env(capture, pair)?,
    })
}

/// Items for the given indices into `capture.pairs`, in index order.
pub fn make_items(
    capture: &CaptureSet,
    indices: &[usize],
    opts: &ItemOptions,
) -> Result<Vec<TrainItem>> {
    par_map(indices.len(), |i| {
        pair_item(capture, &capture.pairs[indices[i]], opts)
    })
    .into_iter()
    .collect()
}

/// Many-subject corpus for the prior.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct PriorConfig {
    pub n_subjects: usize,
    /// Subject ids are `first_subject_id..first_subject_id + n_subjects`.
    pub first_subject_id: u64,
    pub pairs_per_subject: usize,
    pub n_cameras: usize,
    pub image_size: usize,
    pub n_lights: usize,
    pub light_seed: u64,
}

impl Default for PriorConfig {
    fn default() -> Self {
        PriorConfig {
            n_subjects: 64,
            first_subject_id: 1000,
            pairs_per_subject: 8,
            n_cameras: 4,
            image_size: 64,
            n_lights: 100,
            light_seed: 1017,
        }
    }
}

impl PriorConfig {
    /// Capture settings of the `i`-th prior subject; complexity cycles through 1..=4.
    pub fn subject_capture(&self, i: usize) -> CaptureConfig {
        CaptureConfig {
            subject_id: self.first_subject_id + i as u64,
            complexity: (i % 4) as u8 + 1,
            n_pairs: self.pairs_per_subject,
            n_cameras: self.n_cameras,
            image_size: self.image_size,
            n_lights: self.n_lights,
            light_seed: self.light_seed,
            ..CaptureConfig::default()
        }
    }
}

pub fn prior_corpus(cfg: &PriorConfig, opts: &ItemOptions) -> Result<Vec<TrainItem>> {
    let per_subject = par_map(cfg.n_subjects, |i| -> Result<Vec<TrainItem>> {
        let cap = synth_capture(&cfg.subject_capture(i))?;
        let all: Vec<usize> = (0..cap.pairs.len()).collect();
        make_items(&cap, &all, opts)
    });
    let mut out = Vec::new();
    for items in per_subject {
        out.extend(items?);
    }
    Ok(out)
}
