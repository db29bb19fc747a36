//! Interleaved flat-lit / relit capture sessions and their on-disk layout.

use std::f64::consts::PI;
use std::path::Path;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::envmap::{CameraPose, EnvironmentMap, Vec3};
use crate::error::{Error, Result};
use crate::fsutil;
use crate::image::Image;

use super::lights::{make_light_pool, LightKind};
use super::render::{render_flat, render_relit};
use super::scene::{make_subject, MotionState, SceneSpec, DEFAULT_A_MOTION};

/// One flat-lit frame and the relit frame captured right after it.
#[derive(Clone, Debug, PartialEq)]
pub struct FramePair {
    pub t: usize,
    pub camera_id: usize,
    pub light_id: usize,
    pub flat: Image,
    pub relit: Image,
    pub flat_mask: Image,
    pub relit_mask: Image,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct CaptureConfig {
    pub subject_id: u64,
    pub complexity: u8,
    pub n_pairs: usize,
    pub n_cameras: usize,
    pub image_size: usize,
    pub n_lights: usize,
    pub light_seed: u64,
    pub env_height: usize,
    pub misalignment_px: f64,
    pub a_motion: f64,
}

impl Default for CaptureConfig {
    fn default() -> Self {
        CaptureConfig {
            subject_id: 0,
            complexity: 2,
            n_pairs: 512,
            n_cameras: 4,
            image_size: 64,
            n_lights: 100,
            light_seed: 17,
            env_height: crate::envmap::DEFAULT_HEIGHT,
            misalignment_px: 0.0,
            a_motion: DEFAULT_A_MOTION,
        }
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct CaptureSet {
    pub config: CaptureConfig,
    pub scene: SceneSpec,
    pub cameras: Vec<CameraPose>,
    pub lights: Vec<EnvironmentMap>,
    pub light_kinds: Vec<LightKind>,
    /// Light id for each t.
    pub light_sequence: Vec<usize>,
    /// Ordered by t, then camera.
    pub pairs: Vec<FramePair>,
}

impl CaptureSet {
    pub fn n_pairs(&self) -> usize {
        self.light_sequence.len()
    }

    pub fn n_views(&self) -> usize {
        self.cameras.len()
    }

    pub fn pair(&self, t: usize, camera_id: usize) -> &FramePair {
        &self.pairs[t * self.n_views() + camera_id]
    }
}

pub const CAMERA_DISTANCE: f64 = 3.0;
pub const CAMERA_HEIGHT: f64 = 0.4;
pub const CAMERA_FOV: f64 = 0.62;

/// `n` cameras evenly spaced on a horizontal ring, all aimed at the origin.
pub fn ring_cameras(n: usize, image_size: usize) -> Result<Vec<CameraPose>> {
    (0..n)
        .map(|k| {
            let a = 2.0 * PI * k as f64 / n as f64;
            let eye = Vec3::new(
                CAMERA_DISTANCE * a.cos(),
                CAMERA_DISTANCE * a.sin(),
                CAMERA_HEIGHT,
            );
            CameraPose::look_at(
                eye,
                Vec3::zeros(),
                Vec3::z(),
                CAMERA_FOV,
                (image_size, image_size),
            )
        })
        .collect()
}

/// World-space rigid offset (along +z, i.e. image-up in every ring camera) that moves the
/// subject by about `px` pixels.
pub fn misalignment_offset(px: f64, cameras: &[CameraPose]) -> [f64; 3] {
    if px == 0.0 || cameras.is_empty() {
        return [0.0; 3];
    }
    let mut meters_per_px = 0.0;
    for cam in cameras {
        let depth = (cam.rotation_matrix() * (-cam.center())).z;
        meters_per_px += depth / cam.fy;
    }
    meters_per_px /= cameras.len() as f64;
    [0.0, 0.0, px * meters_per_px]
}

/// Light id per frame, drawn uniformly from a pool of `n_lights`.
pub fn light_sequence(n_pairs: usize, n_lights: usize, seed: u64) -> Vec<usize> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed ^ 0x7365_7175);
    (0..n_pairs)
        .map(|_| rng.random_range(0..n_lights))
        .collect()
}

/// Render every (t, camera) pair: flat at motion(t), relit at motion(t) displaced by the
/// misalignment offset.
#[allow(clippy::too_many_arguments)]
pub fn make_capture(
    config: &CaptureConfig,
    scene: &SceneSpec,
    cameras: &[CameraPose],
    lights: Vec<EnvironmentMap>,
    light_kinds: Vec<LightKind>,
    light_sequence: Vec<usize>,
) -> Result<CaptureSet> {
    if config.n_pairs == 0 || light_sequence.len() != config.n_pairs {
        return Err(Error::Invalid(
            "need n_pairs >= 1 and one light per pair".into(),
        ));
    }
    if let Some(bad) = light_sequence.iter().find(|&&l| l >= lights.len()) {
        return Err(Error::Invalid(format!("light id {bad} outside the pool")));
    }
    scene.validate()?;
    let offset = misalignment_offset(config.misalignment_px, cameras);
    let mut pairs = Vec::with_capacity(config.n_pairs * cameras.len());
    for (t, &light_id) in light_sequence.iter().enumerate() {
        let motion = MotionState {
            t: t as f64,
            a_motion: config.a_motion,
            offset: [0.0; 3],
        };
        let relit_motion = motion.with_offset(offset);
        for (camera_id, cam) in cameras.iter().enumerate() {
            let (flat, flat_mask) = render_flat(scene, &motion, cam);
            let (relit, relit_mask) = render_relit(scene, &relit_motion, cam, &lights[light_id])?;
            pairs.push(FramePair {
                t,
                camera_id,
                light_id,
                flat,
                relit,
                flat_mask,
                relit_mask,
            });
        }
    }
    Ok(CaptureSet {
        config: config.clone(),
        scene: scene.clone(),
        cameras: cameras.to_vec(),
        lights,
        light_kinds,
        light_sequence,
        pairs,
    })
}

/// Subject, ring cameras, light pool and sequence all derived from `config`.
pub fn synth_capture(config: &CaptureConfig) -> Result<CaptureSet> {
    let scene = make_subject(config.subject_id, config.complexity);
    let cameras = ring_cameras(config.n_cameras, config.image_size)?;
    let pool = make_light_pool(config.n_lights, config.light_seed, config.env_height)?;
    let (kinds, lights): (Vec<_>, Vec<_>) = pool.into_iter().unzip();
    let seq = light_sequence(
        config.n_pairs,
        config.n_lights,
        config.light_seed.wrapping_add(config.subject_id),
    );
    make_capture(config, &scene, &cameras, lights, kinds, seq)
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Role {
    Flat,
    Relit,
}

impl Role {
    pub fn as_str(self) -> &'static str {
        match self {
            Role::Flat => "flat",
            Role::Relit => "relit",
        }
    }
}

/// One manifest line.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ManifestRow {
    pub t: usize,
    pub camera_id: usize,
    pub role: Role,
    pub image_path: String,
    pub mask_path: String,
    pub env_path: String,
    pub subject_id: u64,
}

#[derive(Clone, Debug, Serialize, Deserialize)]
struct CaptureMeta {
    config: CaptureConfig,
    scene: SceneSpec,
    cameras: Vec<CameraPose>,
    light_kinds: Vec<String>,
    light_sequence: Vec<usize>,
}

pub fn light_path(id: usize) -> String {
    format!("lights/light_{id:03}.pfm")
}

pub fn frame_path(kind: &str, camera_id: usize, t: usize, role: Role) -> String {
    format!("{kind}/cam{camera_id:02}/{t:05}_{}.png", role.as_str())
}

pub fn manifest_rows(capture: &CaptureSet) -> Vec<ManifestRow> {
    let mut rows = Vec::with_capacity(capture.pairs.len() * 2);
    for p in &capture.pairs {
        for role in [Role::Flat, Role::Relit] {
            rows.push(ManifestRow {
                t: p.t,
                camera_id: p.camera_id,
                role,
                image_path: frame_path("frames", p.camera_id, p.t, role),
                mask_path: frame_path("masks", p.camera_id, p.t, role),
                env_path: light_path(p.light_id),
                subject_id: capture.config.subject_id,
            });
        }
    }
    rows
}

pub fn write_manifest(rows: &[ManifestRow], path: &Path) -> Result<()> {
    let mut text = String::new();
    for r in rows {
        text.push_str(&serde_json::to_string(r)?);
        text.push('\n');
    }
    fsutil::write_atomic(path, text.as_bytes())
}

pub fn read_manifest(path: &Path) -> Result<Vec<ManifestRow>> {
    let text = String::from_utf8_lossy(&fsutil::read(path)?).into_owned();
    text.lines()
        .filter(|l| !l.trim().is_empty())
        .map(|l| serde_json::from_str(l).map_err(Error::from))
        .collect()
}

/// Write frames, masks, light maps, `manifest.jsonl` and `capture.json` below `dir`.
pub fn write_capture(capture: &CaptureSet, dir: &Path) -> Result<()> {
    for (id, light) in capture.lights.iter().enumerate() {
        light.save_pfm(&dir.join(light_path(id)))?;
    }
    for p in &capture.pairs {
        p.flat
            .save_png(&dir.join(frame_path("frames", p.camera_id, p.t, Role::Flat)))?;
        p.relit
            .save_png(&dir.join(frame_path("frames", p.camera_id, p.t, Role::Relit)))?;
        p.flat_mask
            .save_png(&dir.join(frame_path("masks", p.camera_id, p.t, Role::Flat)))?;
        p.relit_mask
            .save_png(&dir.join(frame_path("masks", p.camera_id, p.t, Role::Relit)))?;
    }
    let meta = CaptureMeta {
        config: capture.config.clone(),
        scene: capture.scene.clone(),
        cameras: capture.cameras.clone(),
        light_kinds: capture
            .light_kinds
            .iter()
            .map(|k| format!("{k:?}").to_lowercase())
            .collect(),
        light_sequence: capture.light_sequence.clone(),
    };
    fsutil::write_atomic(
        &dir.join("capture.json"),
        serde_json::to_string_pretty(&meta)?.as_bytes(),
    )?;
    write_manifest(&manifest_rows(capture), &dir.join("manifest.jsonl"))
}

/// Load a capture written by [`write_capture`]; pairs are rebuilt from the interleaved manifest.
pub fn read_capture(dir: &Path) -> Result<CaptureSet> {
    let meta: CaptureMeta = serde_json::from_slice(&fsutil::read(&dir.join("capture.json"))?)?;
    let rows = read_manifest(&dir.join("manifest.jsonl"))?;
    let tagged: Vec<(Role, &ManifestRow)> = rows.iter().map(|r| (r.role, r)).collect();
    let pairs_rows = crate::datapipe::demux(&tagged)?;
    let mut lights = Vec::with_capacity(meta.light_kinds.len());
    for id in 0..meta.light_kinds.len() {
        lights.push(EnvironmentMap::load_pfm(&dir.join(light_path(id)))?);
    }
    let mut pairs = Vec::with_capacity(pairs_rows.len());
    for (f, r) in pairs_rows {
        if (f.t, f.camera_id) != (r.t, r.camera_id) {
            return Err(Error::Invalid(format!(
                "flat/relit rows disagree: t {} cam {} vs t {} cam {}",
                f.t, f.camera_id, r.t, r.camera_id
            )));
        }
        let light_id = meta
            .light_sequence
            .get(f.t)
            .copied()
            .ok_or_else(|| Error::Invalid(format!("no light recorded for t {}", f.t)))?;
        pairs.push(FramePair {
            t: f.t,
            camera_id: f.camera_id,
            light_id,
            flat: Image::load_png(&dir.join(&f.image_path))?,
            relit: Image::load_png(&dir.join(&r.image_path))?,
            flat_mask: Image::load_png(&dir.join(&f.mask_path))?,
            relit_mask: Image::load_png(&dir.join(&r.mask_path))?,
        });
    }
    pairs.sort_by_key(|p| (p.t, p.camera_id));
    let light_kinds = meta
        .light_kinds
        .iter()
        .map(|k| {
            if k == "olat" {
                LightKind::Olat
            } else {
                LightKind::Hdri
            }
        })
        .collect();
    Ok(CaptureSet {
        config: meta.config,
        scene: meta.scene,
        cameras: meta.cameras,
        lights,
        light_kinds,
        light_sequence: meta.light_sequence,
        pairs,
    })
}

/// Mask centroid `(x, y)` in pixels, or `None` for an empty mask.
pub fn mask_centroid(mask: &Image) -> Option<(f64, f64)> {
    let (mut sx, mut sy, mut n) = (0.0, 0.0, 0.0);
    for y in 0..mask.height {
        for x in 0..mask.width {
            let m = mask.get(0, x, y) as f64;
            sx += m * (x as f64 + 0.5);
            sy += m * (y as f64 + 0.5);
            n += m;
        }
    }
    (n > 0.0).then(|| (sx / n, sy / n))
}

#[cfg(test)]
mod tests {
    use super::*;

    fn small(n_pairs: usize, n_cameras: usize, misalignment_px: f64) -> CaptureConfig {
        CaptureConfig {
            subject_id: 3,
            complexity: 2,
            n_pairs,
            n_cameras,
            image_size: 48,
            n_lights: 6,
            light_seed: 1,
            env_height: 16,
            misalignment_px,
            a_motion: DEFAULT_A_MOTION,
        }
    }

    #[test]
    fn pair_count_and_aligned_masks() {
        let cap = synth_capture(&small(3, 2, 0.0)).unwrap();
        assert_eq!(cap.pairs.len(), 6);
        for p in &cap.pairs {
            assert_eq!(p.flat_mask, p.relit_mask);
        }
        assert_eq!(manifest_rows(&cap).len(), 12);
    }

    #[test]
    fn misalignment_moves_centroid() {
        let cap = synth_capture(&small(4, 4, 4.0)).unwrap();
        let mut total = 0.0;
        for p in &cap.pairs {
            let a = mask_centroid(&p.flat_mask).unwrap();
            let b = mask_centroid(&p.relit_mask).unwrap();
            total += ((a.0 - b.0).powi(2) + (a.1 - b.1).powi(2)).sqrt();
        }
        let mean = total / cap.pairs.len() as f64;
        assert!((mean - 4.0).abs() <= 1.0, "mean displacement {mean}");
    }

    #[test]
    fn write_read_round_trip() {
        let dir = tempfile::tempdir().unwrap();
        let cap = synth_capture(&small(2, 2, 0.0)).unwrap();
        write_capture(&cap, dir.path()).unwrap();
        let back = read_capture(dir.path()).unwrap();
        assert_eq!(back.pairs.len(), cap.pairs.len());
        assert_eq!(back.light_sequence, cap.light_sequence);
        assert_eq!(back.lights, cap.lights);
        assert_eq!(back.cameras, cap.cameras);
        for (a, b) in back.pairs.iter().zip(&cap.pairs) {
            assert_eq!(a.flat_mask, b.flat_mask);
            let err = a
                .relit
                .data
                .iter()
                .zip(&b.relit.data)
                .map(|(x, y)| (x - y).abs())
                .fold(0.0, f32::max);
            assert!(err <= 0.5 / 255.0 + 1e-6);
        }
        let rows = read_manifest(&dir.path().join("manifest.jsonl")).unwrap();
        assert_eq!(rows[0].role, Role::Flat);
        assert_eq!(rows[1].role, Role::Relit);
        let line = std::fs::read_to_string(dir.path().join("manifest.jsonl")).unwrap();
        let first: serde_json::Value = serde_json::from_str(line.lines().next().unwrap()).unwrap();
        let mut keys: Vec<_> = first.as_object().unwrap().keys().cloned().collect();
        keys.sort();
        assert_eq!(
            keys,
            [
                "camera_id",
                "env_path",
                "image_path",
                "mask_path",
                "role",
                "subject_id",
                "t"
            ]
        );
    }
}
