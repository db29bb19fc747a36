//! DDIM sampling, per-frame relighting, chunked long-video assembly and
//! cross-seed consistency.

use std::ops::Range;
use std::path::Path;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};
use serde::{Deserialize, Serialize};

use crate::diffusion::{env_conditioning, ConditioningStack, Schedule, X0Predictor};
use crate::envmap::{CameraPose, EnvironmentMap};
use crate::error::{Error, Result};
use crate::fsutil;
use crate::image::Image;
use crate::parallel::par_map;

pub const DEFAULT_DDIM_STEPS: usize = 15;
pub const DEFAULT_CHUNK_LEN: usize = 9;
pub const DEFAULT_OVERLAP: usize = 4;

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct DdimConfig {
    pub steps: usize,
    pub eta: f64,
    pub seed: u64,
}

impl Default for DdimConfig {
    fn default() -> Self {
        DdimConfig {
            steps: DEFAULT_DDIM_STEPS,
            eta: 0.0,
            seed: 0,
        }
    }
}

/// Descending visit order `T − i·T/S` for `i < S`, then 0.
pub fn ddim_timesteps(total: usize, steps: usize) -> Vec<usize> {
    let mut ts: Vec<usize> = (0..steps).map(|i| total - i * total / steps).collect();
    ts.push(0);
    ts
}

fn gaussian(rng: &mut ChaCha8Rng, n: usize) -> Vec<f32> {
    (0..n)
        .map(|_| {
            let v: f64 = StandardNormal.sample(rng);
            v as f32
        })
        .collect()
}

/// Sample a relit frame for fixed flat and environment conditioning. The seed fixes the
/// initial noise (and, for `eta > 0`, the per-step noise).
pub fn ddim_sample(
    model: &dyn X0Predictor,
    schedule: &Schedule,
    flat: &Image,
    env: &Image,
    cfg: &DdimConfig,
) -> Result<Image> {
    if cfg.steps == 0 || cfg.steps > schedule.steps {
        return Err(Error::Invalid(format!(
            "ddim steps must lie in 1..={}",
            schedule.steps
        )));
    }
    if !(0.0..=1.0).contains(&cfg.eta) {
        return Err(Error::Invalid(format!(
            "eta must lie in [0, 1], got {}",
            cfg.eta
        )));
    }
    let n = flat.data.len();
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    let mut z = gaussian(&mut rng, n);
    let mut stack = ConditioningStack::build(&z, flat, env)?;
    let ts = ddim_timesteps(schedule.steps, cfg.steps);
    for pair in ts.windows(2) {
        let (t, t_prev) = (pair[0], pair[1]);
        stack.set_noisy(&z);
        let mut x0 = model.predict_x0(&stack, t)?;
        if x0.len() != n {
            return Err(Error::Shape(format!(
                "denoiser returned {} values, expected {n}",
                x0.len()
            )));
        }
        x0.iter_mut().for_each(|v| *v = v.clamp(0.0, 1.0));
        if t_prev == 0 {
            z = x0;
            break;
        }
        let (ab, ab_prev) = (schedule.alpha_bar(t), schedule.alpha_bar(t_prev));
        let sigma = cfg.eta * ((1.0 - ab_prev) / (1.0 - ab)).sqrt() * (1.0 - ab / ab_prev).sqrt();
        let dir = (1.0 - ab_prev - sigma * sigma).max(0.0).sqrt();
        let (sa, sn) = (ab.sqrt() as f32, (1.0 - ab).sqrt() as f32);
        let noise = if sigma > 0.0 {
            gaussian(&mut rng, n)
        } else {
            Vec::new()
        };
        for i in 0..n {
            let eps = (z[i] - sa * x0[i]) / sn;
            let mut v = ab_prev.sqrt() as f32 * x0[i] + dir as f32 * eps;
            if sigma > 0.0 {
                v += sigma as f32 * noise[i];
            }
            z[i] = v;
        }
    }
    Image::from_data(flat.channels, flat.width, flat.height, z)
}

/// Project a world-frame environment into the camera, tone-map, resize and sample.
pub fn relight_frame(
    model: &dyn X0Predictor,
    schedule: &Schedule,
    flat: &Image,
    env: &EnvironmentMap,
    camera: &CameraPose,
    cfg: &DdimConfig,
) -> Result<Image> {
    let cond = env_conditioning(env, camera, flat.width, flat.height)?;
    ddim_sample(model, schedule, flat, &cond, cfg)
}

/// Weight of chunk `b` on overlap frame `i`.
pub fn blend_weight(i: usize, overlap: usize) -> f32 {
    (i + 1) as f32 / (overlap + 1) as f32
}

/// Concatenate two chunks whose last/first `overlap` frames coincide in time,
/// ramping linearly from `a` to `b` across the overlap.
pub fn linear_blend(a: &[Image], b: &[Image], overlap: usize) -> Result<Vec<Image>> {
    if overlap > a.len() || overlap > b.len() {
        return Err(Error::Invalid(format!(
            "overlap {overlap} exceeds chunk lengths {} and {}",
            a.len(),
            b.len()
        )));
    }
    let head = a.len() - overlap;
    let mut out: Vec<Image> = a[..head].to_vec();
    for i in 0..overlap {
        let (fa, fb) = (&a[head + i], &b[i]);
        fa.check_shape(fb)?;
        let w = blend_weight(i, overlap);
        let data = fa
            .data
            .iter()
            .zip(&fb.data)
            .map(|(x, y)| x + w * (y - x))
            .collect();
        out.push(Image::from_data(fa.channels, fa.width, fa.height, data)?);
    }
    out.extend_from_slice(&b[overlap..]);
    Ok(out)
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct ChunkPlan {
    pub chunk_len: usize,
    pub overlap: usize,
    pub total_frames: usize,
}

impl ChunkPlan {
    pub fn new(chunk_len: usize, overlap: usize, total_frames: usize) -> Result<Self> {
        if chunk_len == 0 || overlap >= chunk_len || total_frames == 0 {
            return Err(Error::Invalid(format!(
                "chunk plan needs 0 <= overlap < chunk_len and frames > 0 (got {chunk_len}, {overlap}, {total_frames})"
            )));
        }
        Ok(ChunkPlan {
            chunk_len,
            overlap,
            total_frames,
        })
    }

    pub fn stride(&self) -> usize {
        self.chunk_len - self.overlap
    }

    /// Frame ranges of every chunk; consecutive chunks share exactly `overlap` frames
    /// and the last chunk may be shorter.
    pub fn chunks(&self) -> Vec<Range<usize>> {
        let mut out = Vec::new();
        let mut start = 0;
        loop {
            let end = (start + self.chunk_len).min(self.total_frames);
            out.push(start..end);
            if end == self.total_frames {
                return out;
            }
            start += self.stride();
        }
    }
}

/// Infer every chunk independently (`frame(index, seed)`), then fold with [`linear_blend`].
pub fn long_video_with<F>(plan: &ChunkPlan, seeds: &[u64], frame: F) -> Result<Vec<Image>>
where
    F: Fn(usize, u64) -> Result<Image> + Sync,
{
    let chunks = plan.chunks();
    if seeds.len() != chunks.len() {
        return Err(Error::Invalid(format!(
            "plan has {} chunks but {} seeds were given",
            chunks.len(),
            seeds.len()
        )));
    }
    let jobs: Vec<(usize, u64)> = chunks
        .iter()
        .zip(seeds)
        .flat_map(|(r, s)| r.clone().map(move |f| (f, *s)))
        .collect();
    let frames = par_map(jobs.len(), |j| frame(jobs[j].0, jobs[j].1));
    let mut frames = frames.into_iter();
    let mut video: Vec<Image> = Vec::new();
    for (c, r) in chunks.iter().enumerate() {
        let chunk: Vec<Image> = frames.by_ref().take(r.len()).collect::<Result<_>>()?;
        video = if c == 0 {
            chunk
        } else {
            linear_blend(&video, &chunk, plan.overlap)?
        };
    }
    Ok(video)
}

/// Per-frame inputs of a video: flat-lit frame and its environment conditioning.
#[derive(Clone, Debug)]
pub struct FrameInput {
    pub flat: Image,
    pub env: Image,
}

pub fn long_video(
    model: &dyn X0Predictor,
    schedule: &Schedule,
    frames: &[FrameInput],
    plan: &ChunkPlan,
    seeds: &[u64],
    ddim_steps: usize,
) -> Result<Vec<Image>> {
    if frames.len() != plan.total_frames {
        return Err(Error::Invalid(format!(
            "plan covers {} frames but {} were given",
            plan.total_frames,
            frames.len()
        )));
    }
    long_video_with(plan, seeds, |i, seed| {
        let cfg = DdimConfig {
            steps: ddim_steps,
            eta: 0.0,
            seed,
        };
        ddim_sample(model, schedule, &frames[i].flat, &frames[i].env, &cfg)
    })
}

#[derive(Clone, Debug)]
pub struct ConsistencyReport {
    /// Per-pixel population standard deviation across seeds.
    pub std_map: Image,
    /// Mean of the std map over the mask (all pixels without a mask).
    pub mean_std: f64,
}

/// Spread of outputs across seeds for a fixed input.
pub fn consistency_report(
    model: &dyn X0Predictor,
    schedule: &Schedule,
    input: &FrameInput,
    seeds: &[u64],
    ddim_steps: usize,
    mask: Option<&Image>,
) -> Result<ConsistencyReport> {
    let outs = par_map(seeds.len(), |i| {
        let cfg = DdimConfig {
            steps: ddim_steps,
            eta: 0.0,
            seed: seeds[i],
        };
        ddim_sample(model, schedule, &input.flat, &input.env, &cfg)
    })
    .into_iter()
    .collect::<Result<Vec<_>>>()?;
    std_report(&outs, mask)
}

pub fn std_report(outputs: &[Image], mask: Option<&Image>) -> Result<ConsistencyReport> {
    if outputs.len() < 2 {
        return Err(Error::Invalid("consistency needs at least 2 seeds".into()));
    }
    let first = &outputs[0];
    for o in outputs {
        first.check_shape(o)?;
    }
    let k = outputs.len() as f64;
    let mut std_map = Image::zeros(first.channels, first.width, first.height);
    for i in 0..first.data.len() {
        let mean = outputs.iter().map(|o| o.data[i] as f64).sum::<f64>() / k;
        let var = outputs
            .iter()
            .map(|o| (o.data[i] as f64 - mean).powi(2))
            .sum::<f64>()
            / k;
        std_map.data[i] = var.sqrt() as f32;
    }
    let mean_std = match mask {
        Some(m) => {
            let plane = first.plane_len();
            let mut sum = 0.0;
            let mut count = 0usize;
            for p in 0..plane {
                if m.data[p] > 0.5 {
                    for c in 0..first.channels {
                        sum += std_map.data[c * plane + p] as f64;
                    }
                    count += first.channels;
                }
            }
            if count == 0 {
                return Err(Error::EmptyMask);
            }
            sum / count as f64
        }
        None => std_map.mean(),
    };
    Ok(ConsistencyReport { std_map, mean_std })
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct VideoMeta {
    pub fps: f64,
    pub plan: ChunkPlan,
    pub seeds: Vec<u64>,
    pub ddim_steps: usize,
    pub camera_id: usize,
    /// Capture frame index of the first output frame.
    pub first_frame: usize,
    /// File names, in frame order; filled in by [`write_video`].
    pub frames: Vec<String>,
}

pub const VIDEO_FPS: f64 = 30.0;
pub const VIDEO_META: &str = "video.json";

pub fn frame_name(i: usize) -> String {
    format!("frame_{i:05}.png")
}

/// Write numbered PNGs plus the metadata file.
pub fn write_video(dir: &Path, frames: &[Image], mut meta: VideoMeta) -> Result<()> {
    meta.frames.clear();
    for (i, f) in frames.iter().enumerate() {
        let name = frame_name(i);
        f.save_png(&dir.join(&name))?;
        meta.frames.push(name);
    }
    fsutil::write_atomic(&dir.join(VIDEO_META), &serde_json::to_vec_pretty(&meta)?)
}

pub fn read_video_meta(dir: &Path) -> Result<VideoMeta> {
    Ok(serde_json::from_slice(&fsutil::read(
        &dir.join(VIDEO_META),
    )?)?)
}

#[cfg(test)]
mod tests {
    use super::*;

    struct Fixed(Vec<f32>);

    impl X0Predictor for Fixed {
        fn predict_x0(&self, _: &ConditioningStack, _: usize) -> Result<Vec<f32>> {
            Ok(self.0.clone())
        }
    }

    fn frames(vals: &[f32]) -> Vec<Image> {
        vals.iter().map(|v| Image::filled(3, 2, 2, *v)).collect()
    }

    #[test]
    fn timesteps_visit_order() {
        assert_eq!(ddim_timesteps(200, 1), vec![200, 0]);
        let ts = ddim_timesteps(200, 15);
        assert_eq!(ts.len(), 16);
        assert_eq!(ts[0], 200);
        assert!(ts.windows(2).all(|w| w[0] > w[1]));
        assert_eq!(ddim_timesteps(200, 200).len(), 201);
    }

    #[test]
    fn perfect_denoiser_is_a_fixed_point() {
        let target = Image::from_data(3, 4, 4, (0..48).map(|i| i as f32 / 48.0).collect()).unwrap();
        let model = Fixed(target.data.clone());
        let s = Schedule::default();
        let flat = Image::zeros(3, 4, 4);
        for steps in [1, 2, 15, 200] {
            for eta in [0.0, 1.0] {
                let cfg = DdimConfig {
                    steps,
                    eta,
                    seed: 3,
                };
                assert_eq!(ddim_sample(&model, &s, &flat, &flat, &cfg).unwrap(), target);
            }
        }
        assert!(ddim_sample(
            &model,
            &s,
            &flat,
            &flat,
            &DdimConfig {
                steps: 201,
                ..Default::default()
            }
        )
        .is_err());
    }

    #[test]
    fn blend_cases() {
        let a = frames(&[0.0, 0.0, 0.0]);
        let b = frames(&[1.0, 1.0, 1.0]);
        let m = linear_blend(&a, &b, 1).unwrap();
        assert_eq!(m.len(), 5);
        assert_eq!(m[2].data[0], 0.5);
        let m = linear_blend(&a, &b, 3).unwrap();
        assert_eq!(m.len(), 3);
        assert!((m[0].data[0] - 0.25).abs() < 1e-7 && (m[2].data[0] - 0.75).abs() < 1e-7);
        assert_eq!(linear_blend(&a, &a, 2).unwrap(), frames(&[0.0; 4]));
        assert!(linear_blend(&a, &b, 4).is_err());
        for ov in 1..20 {
            for i in 0..ov {
                let w = blend_weight(i, ov);
                assert!(w > 0.0 && w < 1.0);
                assert_eq!((1.0 - w) + w, 1.0);
            }
        }
    }

    #[test]
    fn chunk_plans() {
        let p = ChunkPlan::new(9, 4, 20).unwrap();
        assert_eq!(p.chunks(), vec![0..9, 5..14, 10..19, 15..20]);
        assert_eq!(ChunkPlan::new(57, 32, 57).unwrap().chunks(), vec![0..57]);
        assert!(ChunkPlan::new(4, 4, 10).is_err());
    }

    #[test]
    fn long_video_length_and_single_chunk() {
        let plan = ChunkPlan::new(5, 2, 5).unwrap();
        let v = long_video_with(&plan, &[7], |i, s| {
            Ok(Image::filled(1, 1, 1, (i as u64 + s) as f32))
        })
        .unwrap();
        assert_eq!(
            v.iter().map(|f| f.data[0]).collect::<Vec<_>>(),
            vec![7.0, 8.0, 9.0, 10.0, 11.0]
        );
        let plan = ChunkPlan::new(5, 2, 13).unwrap();
        let v = long_video_with(&plan, &[1, 1, 1, 1], |i, _| {
            Ok(Image::filled(1, 1, 1, i as f32))
        })
        .unwrap();
        assert_eq!(v.len(), 13);
        assert_eq!(
            v.iter().map(|f| f.data[0]).collect::<Vec<_>>(),
            (0..13).map(|i| i as f32).collect::<Vec<_>>()
        );
        assert!(long_video_with(&plan, &[1], |_, _| Ok(Image::zeros(1, 1, 1))).is_err());
    }

    #[test]
    fn std_report_cases() {
        let a = Image::filled(3, 2, 2, 0.25);
        let r = std_report(&[a.clone(), a.clone()], None).unwrap();
        assert_eq!(r.mean_std, 0.0);
        assert_eq!(r.std_map.data.len(), a.data.len());
        let b = Image::filled(3, 2, 2, 0.75);
        let r = std_report(&[a.clone(), b], Some(&Image::filled(1, 2, 2, 1.0))).unwrap();
        assert!((r.mean_std - 0.25).abs() < 1e-7);
        assert!(std_report(&[a], None).is_err());
    }
}
