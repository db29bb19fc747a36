//! Capture preparation: demultiplexing, temporal mask filtering, background
//! compositing, canvas padding, train/test splitting and background masking.

use std::collections::BTreeSet;

use rand::seq::index::sample;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::image::Image;
use crate::synthstage::{CaptureSet, FramePair, Role};

/// Split interleaved `[WL0, RL0, WL1, RL1, ...]` into `(WL, RL)` pairs.
pub fn demux<T: Clone>(frames: &[(Role, T)]) -> Result<Vec<(T, T)>> {
    if !frames.len().is_multiple_of(2) {
        return Err(Error::Invalid(format!(
            "odd-length interleaved sequence ({})",
            frames.len()
        )));
    }
    frames
        .chunks_exact(2)
        .enumerate()
        .map(|(i, ch)| {
            for (j, expected) in [(0, Role::Flat), (1, Role::Relit)] {
                if ch[j].0 != expected {
                    return Err(Error::RoleMismatch {
                        index: 2 * i + j,
                        expected: expected.as_str(),
                        found: ch[j].0.as_str().to_string(),
                    });
                }
            }
            Ok((ch[0].1.clone(), ch[1].1.clone()))
        })
        .collect()
}

/// Per-pixel temporal median over a centered window (shrunk at the sequence ends).
pub fn temporal_mask_filter(masks: &[Image], window: usize) -> Result<Vec<Image>> {
    if window < 3 || window.is_multiple_of(2) {
        return Err(Error::Invalid(format!(
            "mask filter window must be odd and >= 3, got {window}"
        )));
    }
    if let Some(first) = masks.first() {
        for m in masks {
            m.check_shape(first)?;
        }
    }
    let half = window / 2;
    let n = masks.len();
    let mut out = Vec::with_capacity(n);
    for t in 0..n {
        // shrink symmetrically so the window stays centered and odd
        let r = half.min(t).min(n - 1 - t);
        let lo = t - r;
        let hi = t + r;
        let count = hi - lo + 1;
        let mut m = masks[t].clone();
        for (i, v) in m.data.iter_mut().enumerate() {
            let ones = (lo..=hi).filter(|&s| masks[s].data[i] > 0.5).count();
            *v = if 2 * ones > count { 1.0 } else { 0.0 };
        }
        out.push(m);
    }
    Ok(out)
}

/// `pred·α + bg·(1 − α)` with a single-channel α.
pub fn composite_background(pred: &Image, alpha: &Image, bg: &Image) -> Result<Image> {
    pred.check_shape(bg)?;
    if alpha.channels != 1 || alpha.width != pred.width || alpha.height != pred.height {
        return Err(Error::Shape(
            "alpha must be single-channel with the image size".into(),
        ));
    }
    let n = pred.plane_len();
    let mut out = pred.clone();
    for c in 0..pred.channels {
        for i in 0..n {
            let a = alpha.data[i];
            out.data[c * n + i] = pred.data[c * n + i] * a + bg.data[c * n + i] * (1.0 - a);
        }
    }
    Ok(out)
}

/// Zero padding that centers an image on a larger canvas.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct Padding {
    pub left: usize,
    pub right: usize,
    pub top: usize,
    pub bottom: usize,
}

impl Padding {
    pub fn centered(src_w: usize, src_h: usize, target_w: usize, target_h: usize) -> Result<Self> {
        if target_w < src_w || target_h < src_h {
            return Err(Error::Invalid(format!(
                "canvas {target_w}x{target_h} smaller than image {src_w}x{src_h}"
            )));
        }
        let (dx, dy) = (target_w - src_w, target_h - src_h);
        // odd remainders go to the right and bottom
        Ok(Padding {
            left: dx / 2,
            right: dx - dx / 2,
            top: dy / 2,
            bottom: dy - dy / 2,
        })
    }
}

pub fn pad_to_canvas(image: &Image, target_w: usize, target_h: usize) -> Result<(Image, Padding)> {
    let pad = Padding::centered(image.width, image.height, target_w, target_h)?;
    let mut out = Image::zeros(image.channels, target_w, target_h);
    for c in 0..image.channels {
        for y in 0..image.height {
            let src = image.idx(c, 0, y);
            let dst = out.idx(c, pad.left, y + pad.top);
            out.data[dst..dst + image.width].copy_from_slice(&image.data[src..src + image.width]);
        }
    }
    Ok((out, pad))
}

pub fn crop_from_canvas(canvas: &Image, pad: &Padding) -> Result<Image> {
    let w = canvas
        .width
        .checked_sub(pad.left + pad.right)
        .ok_or_else(|| Error::Shape("padding wider than canvas".into()))?;
    let h = canvas
        .height
        .checked_sub(pad.top + pad.bottom)
        .ok_or_else(|| Error::Shape("padding taller than canvas".into()))?;
    canvas.crop(pad.left, pad.top, w, h)
}

/// Default seed for held-out light sampling.
pub const SPLIT_SEED: u64 = 2025;
pub const LIGHT_HOLDOUT_FRAC: f64 = 0.10;
/// 12250 / 14400 rounded to two places.
pub const FRAME_FRAC: f64 = 0.85;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct DatasetSplit {
    /// Indices into `CaptureSet::pairs`.
    pub train_pairs: Vec<usize>,
    pub test_pairs: Vec<usize>,
    pub heldout_lights: Vec<usize>,
    pub heldout_cameras: Vec<usize>,
    pub frame_threshold: usize,
    pub seed: u64,
}

impl DatasetSplit {
    /// Whether a pair is routed to test by each rule: (light, camera, frame).
    pub fn holdout_reasons(&self, pair: &FramePair) -> (bool, bool, bool) {
        (
            self.heldout_lights.binary_search(&pair.light_id).is_ok(),
            self.heldout_cameras.binary_search(&pair.camera_id).is_ok(),
            pair.t >= self.frame_threshold,
        )
    }
}

/// Hold out a uniformly sampled fraction of the light pool, the given cameras, and every
/// frame with index ≥ ⌈frame_frac · N_pairs⌉.
pub fn split_dataset(
    capture: &CaptureSet,
    light_holdout_frac: f64,
    frame_frac: f64,
    heldout_cameras: &[usize],
    seed: u64,
) -> Result<DatasetSplit> {
    for (name, f) in [
        ("light_holdout_frac", light_holdout_frac),
        ("frame_frac", frame_frac),
    ] {
        if !(f > 0.0 && f < 1.0) {
            return Err(Error::Invalid(format!(
                "{name} must lie in (0, 1), got {f}"
            )));
        }
    }
    let n_lights = capture.lights.len();
    let n_held =
        ((light_holdout_frac * n_lights as f64).round() as usize).min(n_lights.saturating_sub(1));
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut heldout_lights: Vec<usize> = sample(&mut rng, n_lights, n_held).into_vec();
    heldout_lights.sort_unstable();
    let cams: BTreeSet<usize> = heldout_cameras.iter().copied().collect();
    if cams.len() >= capture.n_views() {
        return Err(Error::Invalid("every camera is held out".into()));
    }
    let frame_threshold = (frame_frac * capture.n_pairs() as f64).ceil() as usize;
    let mut split = DatasetSplit {
        train_pairs: Vec::new(),
        test_pairs: Vec::new(),
        heldout_lights,
        heldout_cameras: cams.into_iter().collect(),
        frame_threshold,
        seed,
    };
    for (i, p) in capture.pairs.iter().enumerate() {
        let (l, c, f) = split.holdout_reasons(p);
        if l || c || f {
            split.test_pairs.push(i);
        } else {
            split.train_pairs.push(i);
        }
    }
    if split.train_pairs.is_empty() {
        return Err(Error::Invalid("split leaves the training set empty".into()));
    }
    Ok(split)
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize, clap::ValueEnum)]
#[serde(rename_all = "lowercase")]
pub enum BackgroundMode {
    Keep,
    Remove,
}

/// With `Remove`, zero every pixel outside the subject in both frames (each by its own mask).
pub fn mask_background(pair: &FramePair, mode: BackgroundMode) -> Result<FramePair> {
    match mode {
        BackgroundMode::Keep => Ok(pair.clone()),
        BackgroundMode::Remove => Ok(FramePair {
            flat: pair.flat.masked(&pair.flat_mask)?,
            relit: pair.relit.masked(&pair.relit_mask)?,
            ..pair.clone()
        }),
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::synthstage::{synth_capture, CaptureConfig};

    fn bin_seq(values: &[f32]) -> Vec<Image> {
        values.iter().map(|&v| Image::filled(1, 1, 1, v)).collect()
    }

    #[test]
    fn demux_cases() {
        let f = [
            (Role::Flat, 0),
            (Role::Relit, 1),
            (Role::Flat, 2),
            (Role::Relit, 3),
        ];
        assert_eq!(demux(&f).unwrap(), vec![(0, 1), (2, 3)]);
        let bad = [(Role::Flat, 0), (Role::Flat, 1)];
        let e = demux(&bad).unwrap_err();
        assert!(e.to_string().contains("role mismatch"), "{e}");
        assert!(demux(&f[..3]).is_err());
    }

    #[test]
    fn median_filter_cases() {
        let constant = bin_seq(&[1.0; 6]);
        assert_eq!(temporal_mask_filter(&constant, 5).unwrap(), constant);
        let blip = bin_seq(&[0.0, 0.0, 0.0, 1.0, 0.0, 0.0, 0.0]);
        let out = temporal_mask_filter(&blip, 5).unwrap();
        assert!(out.iter().all(|m| m.data[0] == 0.0));
        // alternating: interior frames take the 2-of-3 majority, i.e. they flip
        let alt = bin_seq(&[0.0, 1.0, 0.0, 1.0, 0.0, 1.0]);
        let out = temporal_mask_filter(&alt, 3).unwrap();
        let got: Vec<f32> = out.iter().map(|m| m.data[0]).collect();
        let mut expected = vec![0.0f32; 6];
        for t in 0..6usize {
            let lo = t.saturating_sub(1);
            let hi = (t + 1).min(5);
            let r = (t - lo).min(hi - t);
            let win: Vec<f32> = (t - r..=t + r)
                .map(|s| [0.0, 1.0, 0.0, 1.0, 0.0, 1.0][s])
                .collect();
            let ones = win.iter().filter(|&&v| v > 0.5).count();
            expected[t] = if 2 * ones > win.len() { 1.0 } else { 0.0 };
        }
        assert_eq!(got, expected);
        assert_eq!(&got[1..5], &[0.0, 1.0, 0.0, 1.0]);
        assert!(temporal_mask_filter(&alt, 4).is_err());
    }

    #[test]
    fn compositing_cases() {
        let pred = Image::filled(3, 2, 2, 1.0);
        let bg = Image::filled(3, 2, 2, 0.0);
        let one = Image::filled(1, 2, 2, 1.0);
        let zero = Image::filled(1, 2, 2, 0.0);
        let half = Image::filled(1, 2, 2, 0.5);
        assert_eq!(composite_background(&pred, &one, &bg).unwrap(), pred);
        assert_eq!(composite_background(&pred, &zero, &bg).unwrap(), bg);
        assert!(composite_background(&pred, &half, &bg)
            .unwrap()
            .data
            .iter()
            .all(|&v| v == 0.5));
        assert!(composite_background(&pred, &Image::filled(1, 3, 2, 1.0), &bg).is_err());
    }

    #[test]
    fn padding_cases() {
        let img = Image::filled(3, 371, 704, 0.5);
        let (canvas, pad) = pad_to_canvas(&img, 1280, 704).unwrap();
        assert_eq!((pad.left, pad.right, pad.top, pad.bottom), (454, 455, 0, 0));
        assert_eq!(canvas.get(0, 453, 10), 0.0);
        assert_eq!(canvas.get(0, 454, 10), 0.5);
        assert_eq!(crop_from_canvas(&canvas, &pad).unwrap(), img);
        let small = Image::filled(3, 4, 4, 0.2);
        assert_eq!(pad_to_canvas(&small, 4, 4).unwrap().0, small);
        assert!(pad_to_canvas(&small, 3, 4).is_err());
    }

    fn tiny_capture() -> CaptureSet {
        synth_capture(&CaptureConfig {
            n_pairs: 20,
            n_cameras: 3,
            image_size: 16,
            n_lights: 100,
            env_height: 8,
            ..CaptureConfig::default()
        })
        .unwrap()
    }

    #[test]
    fn split_rules_and_determinism() {
        let cap = tiny_capture();
        let split = split_dataset(&cap, 0.10, 0.85, &[2], 9).unwrap();
        assert_eq!(split.heldout_lights.len(), 10);
        assert_eq!(split.frame_threshold, 17);
        assert_eq!(split, split_dataset(&cap, 0.10, 0.85, &[2], 9).unwrap());
        let train: BTreeSet<_> = split.train_pairs.iter().collect();
        let test: BTreeSet<_> = split.test_pairs.iter().collect();
        assert!(train.is_disjoint(&test));
        assert_eq!(train.len() + test.len(), cap.pairs.len());
        for (i, p) in cap.pairs.iter().enumerate() {
            let (l, c, f) = split.holdout_reasons(p);
            if l || c || f {
                assert!(test.contains(&i));
            }
        }
        assert!(split_dataset(&cap, 0.0, 0.85, &[], 9).is_err());
        assert!(split_dataset(&cap, 0.1, 0.85, &[0, 1, 2], 9).is_err());
    }

    #[test]
    fn paper_frame_threshold() {
        // 12250 of 14400 frames train: ⌈0.85 · 14400⌉ = 12240, the nearest two-decimal fraction
        assert!((12250.0f64 / 14400.0 - FRAME_FRAC).abs() < 0.005);
        assert_eq!((FRAME_FRAC * 14400.0).ceil() as usize, 12240);
    }

    #[test]
    fn background_masking() {
        let cap = tiny_capture();
        let p = &cap.pairs[0];
        assert_eq!(&mask_background(p, BackgroundMode::Keep).unwrap(), p);
        let removed = mask_background(p, BackgroundMode::Remove).unwrap();
        for i in 0..p.flat_mask.data.len() {
            if p.flat_mask.data[i] == 0.0 {
                assert_eq!(removed.flat.data[i], 0.0);
            } else {
                assert_eq!(removed.flat.data[i], p.flat.data[i]);
            }
        }
        let mut full = p.clone();
        full.flat_mask = Image::filled(1, 16, 16, 1.0);
        full.relit_mask = full.flat_mask.clone();
        assert_eq!(
            mask_background(&full, BackgroundMode::Remove).unwrap(),
            full
        );
    }
}
