//! Analytic renderer: ray-sphere visibility, albedo textures, Lambertian plus
//! normalized Blinn-Phong shading under an environment map with hard shadows.

use std::f64::consts::PI;

use crate::envmap::{texel_solid_angle, texel_to_dir, CameraPose, EnvironmentMap, Frame, Vec3};
use crate::error::{Error, Result};
use crate::image::Image;

use super::scene::{place, MotionState, PlacedSphere, SceneSpec};

/// Exposure applied to relit radiance before clamping to [0, 1].
pub const RELIT_EXPOSURE: f32 = 1.0;
/// Rows of the environment copy used for light sums.
pub const LIGHT_SUM_HEIGHT: usize = 16;

const SHADOW_EPS: f64 = 1e-6;

#[derive(Clone, Copy, Debug)]
struct Hit {
    sphere: usize,
    point: Vec3,
    normal: Vec3,
}

fn first_hit(spheres: &[PlacedSphere], origin: &Vec3, dir: &Vec3) -> Option<Hit> {
    let mut best: Option<(f64, usize)> = None;
    for (i, s) in spheres.iter().enumerate() {
        let oc = origin - s.center;
        let b = oc.dot(dir);
        let c = oc.norm_squared() - s.radius * s.radius;
        let disc = b * b - c;
        if disc <= 0.0 {
            continue;
        }
        let sq = disc.sqrt();
        let t = if -b - sq > 0.0 { -b - sq } else { -b + sq };
        if t > 0.0 && best.is_none_or(|(bt, _)| t < bt) {
            best = Some((t, i));
        }
    }
    best.map(|(t, i)| {
        let point = origin + dir * t;
        let normal = (point - spheres[i].center) / spheres[i].radius;
        Hit {
            sphere: i,
            point,
            normal,
        }
    })
}

fn occluded(spheres: &[PlacedSphere], origin: &Vec3, dir: &Vec3) -> bool {
    spheres.iter().any(|s| {
        let oc = origin - s.center;
        let b = oc.dot(dir);
        let c = oc.norm_squared() - s.radius * s.radius;
        let disc = b * b - c;
        if disc <= 0.0 {
            return false;
        }
        let sq = disc.sqrt();
        -b + sq > SHADOW_EPS && (c < 0.0 || -b - sq > SHADOW_EPS)
    })
}

/// Nonzero texels of a low-resolution copy of the environment: direction and radiance × solid angle.
struct LightSet {
    dirs: Vec<Vec3>,
    power: Vec<[f64; 3]>,
}

impl LightSet {
    fn from_env(env: &EnvironmentMap) -> Result<Self> {
        let low = if env.height() <= LIGHT_SUM_HEIGHT {
            env.clone()
        } else if env.height().is_multiple_of(LIGHT_SUM_HEIGHT) {
            env.downsample(LIGHT_SUM_HEIGHT)?
        } else {
            let h = LIGHT_SUM_HEIGHT;
            let data = (0..h)
                .flat_map(|v| (0..2 * h).map(move |u| (u, v)))
                .map(|(u, v)| env.sample(&texel_to_dir(u, v, h)))
                .collect();
            EnvironmentMap::new(2 * h, h, data, env.frame)?
        };
        let h = low.height();
        let mut dirs = Vec::new();
        let mut power = Vec::new();
        for v in 0..h {
            let sa = texel_solid_angle(v, h);
            for u in 0..2 * h {
                let px = low.texel(u, v);
                if px.iter().any(|&c| c > 0.0) {
                    dirs.push(texel_to_dir(u, v, h));
                    power.push([px[0] as f64 * sa, px[1] as f64 * sa, px[2] as f64 * sa]);
                }
            }
        }
        Ok(LightSet { dirs, power })
    }

    /// Unshadowed irradiance on a plane with normal `n`.
    fn irradiance(&self, n: &Vec3) -> [f64; 3] {
        let mut e = [0.0; 3];
        for (d, p) in self.dirs.iter().zip(&self.power) {
            let c = n.dot(d);
            if c > 0.0 {
                for k in 0..3 {
                    e[k] += p[k] * c;
                }
            }
        }
        e
    }
}

fn albedo_at(scene: &SceneSpec, placed: &[PlacedSphere], hit: &Hit) -> [f32; 3] {
    let spin = placed[hit.sphere].spin;
    let (s, c) = (-spin).sin_cos();
    let n = hit.normal;
    let local = Vec3::new(c * n.x - s * n.y, s * n.x + c * n.y, n.z);
    let theta = local.z.clamp(-1.0, 1.0).acos();
    let mut phi = local.y.atan2(local.x);
    if phi < 0.0 {
        phi += 2.0 * PI;
    }
    scene.spheres[hit.sphere]
        .albedo
        .sample(phi / (2.0 * PI), theta / PI)
}

fn background_uv(camera: &CameraPose, px: usize, py: usize) -> (f64, f64) {
    let (w, h) = camera.image_size;
    ((px as f64 + 0.5) / w as f64, (py as f64 + 0.5) / h as f64)
}

/// Unshaded albedo render and subject coverage mask.
pub fn render_flat(scene: &SceneSpec, motion: &MotionState, camera: &CameraPose) -> (Image, Image) {
    let (w, h) = camera.image_size;
    let placed = place(scene, motion);
    let origin = camera.center();
    let mut img = Image::zeros(3, w, h);
    let mut mask = Image::zeros(1, w, h);
    for py in 0..h {
        for px in 0..w {
            let dir = camera.ray_dir(px, py);
            let color = match first_hit(&placed, &origin, &dir) {
                Some(hit) => {
                    mask.set(0, px, py, 1.0);
                    albedo_at(scene, &placed, &hit)
                }
                None => {
                    let (u, v) = background_uv(camera, px, py);
                    scene.background.albedo_at(u, v)
                }
            };
            for c in 0..3 {
                img.set(c, px, py, color[c]);
            }
        }
    }
    (img, mask)
}

/// Linear HDR radiance under `env` before exposure and clamping, plus the coverage mask.
pub fn render_relit_radiance(
    scene: &SceneSpec,
    motion: &MotionState,
    camera: &CameraPose,
    env: &EnvironmentMap,
) -> Result<(Image, Image)> {
    if env.frame != Frame::World {
        return Err(Error::Invalid(
            "relighting expects a world-frame environment".into(),
        ));
    }
    let lights = LightSet::from_env(env)?;
    let (w, h) = camera.image_size;
    let placed = place(scene, motion);
    let origin = camera.center();
    let facing = -(camera.rotation_matrix().transpose() * Vec3::z());
    let bg_irr = lights.irradiance(&facing);
    let mut img = Image::zeros(3, w, h);
    let mut mask = Image::zeros(1, w, h);
    for py in 0..h {
        for px in 0..w {
            let dir = camera.ray_dir(px, py);
            let radiance = match first_hit(&placed, &origin, &dir) {
                Some(hit) => {
                    mask.set(0, px, py, 1.0);
                    let albedo = albedo_at(scene, &placed, &hit);
                    let spec = &scene.spheres[hit.sphere];
                    let view = -dir;
                    let shadow_origin = hit.point + hit.normal * SHADOW_EPS;
                    let ks = spec.specular as f64;
                    let shin = spec.shininess as f64;
                    let spec_norm = (shin + 2.0) / (8.0 * PI);
                    let mut acc = [0.0f64; 3];
                    for (wi, p) in lights.dirs.iter().zip(&lights.power) {
                        let cos = hit.normal.dot(wi);
                        // below the tangent plane the sphere itself blocks the light
                        if cos <= 0.0 || occluded(&placed, &shadow_origin, wi) {
                            continue;
                        }
                        let half = (wi + view).normalize();
                        let nh = hit.normal.dot(&half).max(0.0);
                        let specular = if ks > 0.0 {
                            ks * nh.powf(shin) * spec_norm
                        } else {
                            0.0
                        };
                        for k in 0..3 {
                            acc[k] += p[k] * (albedo[k] as f64 / PI * cos + specular);
                        }
                    }
                    acc
                }
                None => {
                    let (u, v) = background_uv(camera, px, py);
                    let a = scene.background.albedo_at(u, v);
                    [
                        a[0] as f64 * bg_irr[0] / PI,
                        a[1] as f64 * bg_irr[1] / PI,
                        a[2] as f64 * bg_irr[2] / PI,
                    ]
                }
            };
            for c in 0..3 {
                img.set(c, px, py, radiance[c] as f32);
            }
        }
    }
    Ok((img, mask))
}

/// Relit frame: radiance × exposure, clamped to [0, 1].
pub fn render_relit(
    scene: &SceneSpec,
    motion: &MotionState,
    camera: &CameraPose,
    env: &EnvironmentMap,
) -> Result<(Image, Image)> {
    let (hdr, mask) = render_relit_radiance(scene, motion, camera, env)?;
    Ok((hdr.map(|v| (v * RELIT_EXPOSURE).clamp(0.0, 1.0)), mask))
}

#[cfg(test)]
mod tests {
    use super::super::scene::{Background, MotionCurve, SphereSpec, Texture};
    use super::*;

    fn still_sphere(center: [f64; 3], radius: f64, albedo: f32, specular: f32) -> SphereSpec {
        SphereSpec {
            center,
            radius,
            albedo: Texture::constant([albedo; 3]),
            specular,
            shininess: 16.0,
            motion: MotionCurve {
                freq: [0.05; 3],
                phase: [0.0; 3],
                weight: [0.0; 3],
                spin: 0.0,
            },
        }
    }

    fn scene(spheres: Vec<SphereSpec>) -> SceneSpec {
        SceneSpec {
            subject_id: 0,
            complexity: 1,
            spheres,
            background: Background::Solid([0.2, 0.3, 0.4]),
        }
    }

    fn camera(size: usize) -> CameraPose {
        CameraPose::look_at(
            Vec3::new(3.0, 0.0, 0.0),
            Vec3::zeros(),
            Vec3::z(),
            0.6,
            (size, size),
        )
        .unwrap()
    }

    /// Pixel whose primary ray hits closest to the sphere's top point.
    fn top_pixel(cam: &CameraPose, s: &SceneSpec) -> (usize, usize) {
        let placed = place(s, &MotionState::still());
        let (w, h) = cam.image_size;
        let mut best = (0, 0, -1.0);
        for py in 0..h {
            for px in 0..w {
                if let Some(hit) = first_hit(&placed, &cam.center(), &cam.ray_dir(px, py)) {
                    if hit.normal.z > best.2 {
                        best = (px, py, hit.normal.z);
                    }
                }
            }
        }
        (best.0, best.1)
    }

    #[test]
    fn flat_render_shows_albedo_and_background() {
        let s = scene(vec![still_sphere([0.0; 3], 0.4, 0.3, 0.0)]);
        let cam = camera(32);
        let (img, mask) = render_flat(&s, &MotionState::still(), &cam);
        for py in 0..32 {
            for px in 0..32 {
                let m = mask.get(0, px, py);
                for c in 0..3 {
                    let v = img.get(c, px, py);
                    if m > 0.5 {
                        assert!((v - 0.3).abs() < 1e-6);
                    } else {
                        assert_eq!(v, [0.2, 0.3, 0.4][c]);
                    }
                }
            }
        }
    }

    /// Analytic disc: the silhouette of a sphere at distance d subtends a cone of
    /// half-angle asin(r/d); its image is a disc of radius f·tan(asin(r/d)).
    #[test]
    fn mask_area_matches_projected_disc() {
        let r = 0.4;
        let s = scene(vec![still_sphere([0.0; 3], r, 0.5, 0.0)]);
        let cam = camera(128);
        let (_, mask) = render_flat(&s, &MotionState::still(), &cam);
        let count: f32 = mask.data.iter().sum();
        let half_angle = (r / 3.0f64).asin();
        let disc_r = cam.fx * half_angle.tan();
        let area = PI * disc_r * disc_r;
        assert!(
            ((count as f64) / area - 1.0).abs() < 0.02,
            "{count} vs {area}"
        );
    }

    #[test]
    fn white_furnace() {
        for albedo in [1.0f32, 0.6] {
            let s = scene(vec![still_sphere([0.0; 3], 0.4, albedo, 0.0)]);
            let cam = camera(32);
            let env = EnvironmentMap::make_uniform([1.0; 3], 64).unwrap();
            let (img, mask) = render_relit_radiance(&s, &MotionState::still(), &cam, &env).unwrap();
            let (px, py) = top_pixel(&cam, &s);
            assert_eq!(mask.get(0, px, py), 1.0);
            for c in 0..3 {
                let v = img.get(c, px, py);
                assert!((v - albedo).abs() < 1e-2, "albedo {albedo}: {v}");
            }
            // every unoccluded single-sphere pixel integrates the full hemisphere
            for (v, m) in img.plane(0).iter().zip(&mask.data) {
                if *m > 0.5 {
                    assert!((v - albedo).abs() < 1e-2);
                }
            }
        }
    }

    #[test]
    fn black_env_renders_black_subject() {
        let s = scene(vec![still_sphere([0.0; 3], 0.4, 0.8, 0.5)]);
        let env = EnvironmentMap::make_uniform([0.0; 3], 16).unwrap();
        let (img, _) = render_relit(&s, &MotionState::still(), &camera(16), &env).unwrap();
        assert!(img.data.iter().all(|&v| v == 0.0));
    }

    #[test]
    fn light_from_behind_gives_no_diffuse_on_front() {
        let s = scene(vec![still_sphere([0.0; 3], 0.4, 0.8, 0.0)]);
        let cam = camera(32);
        // camera sits on +x; light arrives from -x
        let env = EnvironmentMap::make_olat(-Vec3::x(), 0.2, [5.0; 3], 64).unwrap();
        let (img, mask) = render_relit_radiance(&s, &MotionState::still(), &cam, &env).unwrap();
        // the pixel at the image center sees the point facing the camera, n = +x
        assert_eq!(mask.get(0, 16, 16), 1.0);
        assert_eq!(img.get(0, 16, 16), 0.0);
    }

    #[test]
    fn radiance_scales_linearly_with_env() {
        let s = super::super::scene::make_subject(4, 3);
        let cam = camera(24);
        let env = EnvironmentMap::make_olat(
            Vec3::new(0.3, 0.2, 0.9).normalize(),
            0.3,
            [2.0, 1.0, 0.5],
            32,
        )
        .unwrap();
        let m = MotionState::at(3);
        let (a, _) = render_relit_radiance(&s, &m, &cam, &env).unwrap();
        let (b, _) = render_relit_radiance(&s, &m, &cam, &env.scaled(2.5)).unwrap();
        for (x, y) in a.data.iter().zip(&b.data) {
            assert!((y - 2.5 * x).abs() <= 1e-5 * y.abs().max(1e-3));
        }
    }

    #[test]
    fn fully_occluded_point_is_black() {
        // a small sphere directly below a big one, lit only from straight above
        let s = scene(vec![
            still_sphere([0.0, 0.0, 0.0], 0.15, 0.9, 0.0),
            still_sphere([0.0, 0.0, 0.9], 0.6, 0.9, 0.0),
        ]);
        let env = EnvironmentMap::make_olat(Vec3::z(), 0.1, [10.0; 3], 64).unwrap();
        let placed = place(&s, &MotionState::still());
        let cam = camera(64);
        let (img, _) = render_relit_radiance(&s, &MotionState::still(), &cam, &env).unwrap();
        let mut checked = 0;
        for py in 0..64 {
            for px in 0..64 {
                if let Some(hit) = first_hit(&placed, &cam.center(), &cam.ray_dir(px, py)) {
                    if hit.sphere == 0 {
                        checked += 1;
                        assert_eq!(img.get(0, px, py), 0.0);
                    }
                }
            }
        }
        assert!(checked > 0);
    }

    #[test]
    fn deterministic_render() {
        let s = super::super::scene::make_subject(9, 4);
        let env = EnvironmentMap::make_uniform([0.5, 0.6, 0.7], 16).unwrap();
        let cam = camera(20);
        let a = render_relit(&s, &MotionState::at(5), &cam, &env).unwrap();
        let b = render_relit(&s, &MotionState::at(5), &cam, &env).unwrap();
        assert_eq!(a, b);
    }
}
