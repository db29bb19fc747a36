use std::f64::consts::PI;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::envmap::{Rgb, Vec3};
use crate::error::{Error, Result};

pub const TEXTURE_SIZE: usize = 16;

/// Square RGB texture in [0, 1], row-major.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Texture {
    pub size: usize,
    pub texels: Vec<Rgb>,
}

impl Texture {
    pub fn constant(value: Rgb) -> Self {
        Texture {
            size: TEXTURE_SIZE,
            texels: vec![value; TEXTURE_SIZE * TEXTURE_SIZE],
        }
    }

    /// Bilinear lookup, wrapping in `s` and clamping in `t`; coordinates in texture units [0, 1).
    pub fn sample(&self, s: f64, t: f64) -> Rgb {
        let n = self.size;
        let fs = s * n as f64 - 0.5;
        let ft = (t * n as f64 - 0.5).clamp(0.0, (n - 1) as f64);
        let s0 = fs.floor();
        let ws = (fs - s0) as f32;
        let s0 = (s0 as i64).rem_euclid(n as i64) as usize;
        let s1 = (s0 + 1) % n;
        let t0 = ft.floor() as usize;
        let t1 = (t0 + 1).min(n - 1);
        let wt = (ft - t0 as f64) as f32;
        let at = |x: usize, y: usize| self.texels[y * n + x];
        let (a, b, c, d) = (at(s0, t0), at(s1, t0), at(s0, t1), at(s1, t1));
        let mut out = [0.0; 3];
        for k in 0..3 {
            let top = a[k] + (b[k] - a[k]) * ws;
            let bot = c[k] + (d[k] - c[k]) * ws;
            out[k] = top + (bot - top) * wt;
        }
        out
    }
}

/// Smooth periodic path of one sphere; peak speed of each axis is `a_motion` per frame.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct MotionCurve {
    pub freq: [f64; 3],
    pub phase: [f64; 3],
    pub weight: [f64; 3],
    /// Spin about +z in radians per meter of motion amplitude.
    pub spin: f64,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SphereSpec {
    pub center: [f64; 3],
    pub radius: f64,
    pub albedo: Texture,
    pub specular: f32,
    pub shininess: f32,
    pub motion: MotionCurve,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub enum Background {
    Solid(Rgb),
    /// Texture tiled `repeats` times across the image plane.
    Textured {
        texture: Texture,
        repeats: f64,
    },
}

impl Background {
    pub fn albedo_at(&self, x: f64, y: f64) -> Rgb {
        match self {
            Background::Solid(c) => *c,
            Background::Textured { texture, repeats } => {
                texture.sample(x * repeats, (y * repeats).fract())
            }
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SceneSpec {
    pub subject_id: u64,
    pub complexity: u8,
    pub spheres: Vec<SphereSpec>,
    pub background: Background,
}

impl SceneSpec {
    pub fn validate(&self) -> Result<()> {
        if self.spheres.is_empty() {
            return Err(Error::Invalid("scene needs at least one sphere".into()));
        }
        for s in &self.spheres {
            if !(s.radius > 0.0) {
                return Err(Error::Invalid("sphere radius must be positive".into()));
            }
            if s.albedo
                .texels
                .iter()
                .flatten()
                .any(|v| !(0.0..=1.0).contains(v))
            {
                return Err(Error::Invalid("albedo outside [0, 1]".into()));
            }
        }
        Ok(())
    }
}

/// Pose of the subject at (possibly fractional) frame `t`, plus a rigid offset of the whole subject.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct MotionState {
    pub t: f64,
    pub a_motion: f64,
    pub offset: [f64; 3],
}

pub const DEFAULT_A_MOTION: f64 = 0.01;

impl MotionState {
    pub fn at(t: usize) -> Self {
        MotionState {
            t: t as f64,
            a_motion: DEFAULT_A_MOTION,
            offset: [0.0; 3],
        }
    }

    pub fn still() -> Self {
        MotionState {
            t: 0.0,
            a_motion: 0.0,
            offset: [0.0; 3],
        }
    }

    pub fn with_offset(mut self, offset: [f64; 3]) -> Self {
        self.offset = offset;
        self
    }
}

/// A sphere placed at a given motion state.
#[derive(Clone, Debug)]
pub struct PlacedSphere {
    pub center: Vec3,
    pub radius: f64,
    pub spin: f64,
}

pub fn place(scene: &SceneSpec, motion: &MotionState) -> Vec<PlacedSphere> {
    let off = Vec3::new(motion.offset[0], motion.offset[1], motion.offset[2]);
    scene
        .spheres
        .iter()
        .map(|s| {
            let m = &s.motion;
            let mut c = Vec3::new(s.center[0], s.center[1], s.center[2]) + off;
            let mut travel = 0.0;
            for k in 0..3 {
                let amp = motion.a_motion / m.freq[k];
                c[k] += m.weight[k] * amp * (m.freq[k] * motion.t + m.phase[k]).sin();
                travel += amp;
            }
            PlacedSphere {
                center: c,
                radius: s.radius,
                spin: m.spin * travel * (0.05 * motion.t).sin(),
            }
        })
        .collect()
}

fn subject_rng(subject_id: u64, complexity: u8) -> ChaCha8Rng {
    let mut seed = [0u8; 32];
    seed[..8].copy_from_slice(&subject_id.to_le_bytes());
    seed[8] = complexity;
    seed[9..16].copy_from_slice(b"subject");
    ChaCha8Rng::from_seed(seed)
}

fn make_texture(
    rng: &mut ChaCha8Rng,
    base_lo: f32,
    base_hi: f32,
    waves: usize,
    max_freq: usize,
    amp: f32,
) -> Texture {
    let base: Rgb = [
        rng.random_range(base_lo..base_hi),
        rng.random_range(base_lo..base_hi),
        rng.random_range(base_lo..base_hi),
    ];
    let mut waves_params = Vec::new();
    for _ in 0..waves {
        let fx = rng.random_range(0..=max_freq) as f64;
        let fy = rng.random_range(0..=max_freq) as f64;
        let phase = rng.random_range(0.0..2.0 * PI);
        let tint: Rgb = [
            rng.random_range(-1.0..1.0),
            rng.random_range(-1.0..1.0),
            rng.random_range(-1.0..1.0),
        ];
        waves_params.push((fx.max(1.0), fy, phase, tint));
    }
    let n = TEXTURE_SIZE;
    let mut texels = Vec::with_capacity(n * n);
    for y in 0..n {
        for x in 0..n {
            let mut px = base;
            for (fx, fy, phase, tint) in &waves_params {
                let arg = 2.0 * PI * (fx * x as f64 / n as f64 + fy * y as f64 / n as f64) + phase;
                let w = arg.sin() as f32 * amp;
                for k in 0..3 {
                    px[k] += w * (0.5 + 0.5 * tint[k]);
                }
            }
            texels.push(px.map(|v| v.clamp(0.0, 1.0)));
        }
    }
    Texture { size: n, texels }
}

/// Number of spheres for each complexity level 1..=4.
pub fn sphere_count(complexity: u8) -> usize {
    match complexity {
        0 | 1 => 2,
        2 => 3,
        3 => 5,
        _ => 8,
    }
}

/// Deterministic subject: sphere count and texture frequency grow with `complexity` (clamped to 1..=4).
pub fn make_subject(subject_id: u64, complexity: u8) -> SceneSpec {
    let complexity = complexity.clamp(1, 4);
    let mut rng = subject_rng(subject_id, complexity);
    let n = sphere_count(complexity);
    let extent = 0.45;
    let mut spheres = Vec::with_capacity(n);
    for i in 0..n {
        // the first sphere is a large "torso" near the origin, the rest cluster around it
        let radius = if i == 0 {
            rng.random_range(0.3..0.38)
        } else {
            rng.random_range(0.12..0.24)
        };
        let center = if i == 0 {
            [0.0, 0.0, rng.random_range(-0.1..0.1)]
        } else {
            let a = rng.random_range(0.0..2.0 * PI);
            let r = rng.random_range(0.25..extent);
            [
                r * a.cos() * 0.6,
                r * a.sin() * 0.6,
                rng.random_range(-0.5..0.55),
            ]
        };
        let albedo = make_texture(
            &mut rng,
            0.15,
            0.85,
            complexity as usize + 1,
            2 * complexity as usize,
            0.18,
        );
        let specular = rng.random_range(0.0..0.6);
        let shininess = rng.random_range(8.0..64.0);
        let motion = MotionCurve {
            freq: [
                rng.random_range(0.03..0.08),
                rng.random_range(0.03..0.08),
                rng.random_range(0.03..0.08),
            ],
            phase: [
                rng.random_range(0.0..2.0 * PI),
                rng.random_range(0.0..2.0 * PI),
                rng.random_range(0.0..2.0 * PI),
            ],
            weight: [
                rng.random_range(0.3..1.0),
                rng.random_range(0.3..1.0),
                rng.random_range(0.3..1.0),
            ],
            spin: rng.random_range(-2.0..2.0),
        };
        spheres.push(SphereSpec {
            center,
            radius,
            albedo,
            specular,
            shininess,
            motion,
        });
    }
    let bg_texture = make_texture(&mut rng, 0.15, 0.45, 3, 3, 0.12);
    SceneSpec {
        subject_id,
        complexity,
        spheres,
        background: Background::Textured {
            texture: bg_texture,
            repeats: 2.0,
        },
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn deterministic_and_counts() {
        assert_eq!(make_subject(7, 2), make_subject(7, 2));
        for (c, n) in [(1u8, 2usize), (2, 3), (3, 5), (4, 8)] {
            assert_eq!(make_subject(3, c).spheres.len(), n);
        }
        make_subject(3, 4).validate().unwrap();
    }

    #[test]
    fn different_ids_differ() {
        let (a, b) = (make_subject(1, 2), make_subject(2, 2));
        let differs = a.spheres[0]
            .albedo
            .texels
            .iter()
            .zip(&b.spheres[0].albedo.texels)
            .any(|(x, y)| x != y);
        assert!(differs);
    }

    #[test]
    fn motion_is_smooth_and_bounded() {
        let s = make_subject(5, 3);
        let a = place(&s, &MotionState::at(10));
        let b = place(&s, &MotionState::at(11));
        for (p, q) in a.iter().zip(&b) {
            // per-axis peak speed is a_motion
            assert!((p.center - q.center).norm() <= DEFAULT_A_MOTION * 3f64.sqrt() + 1e-12);
        }
    }

    #[test]
    fn texture_wraps_in_s() {
        let mut rng = subject_rng(0, 1);
        let t = make_texture(&mut rng, 0.2, 0.8, 2, 2, 0.1);
        let a = t.sample(0.0, 0.5);
        let b = t.sample(1.0, 0.5);
        for k in 0..3 {
            assert!((a[k] - b[k]).abs() < 1e-6);
        }
    }
}
