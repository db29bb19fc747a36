//! Equirectangular HDR environment maps.
//!
//! Convention: z-up, polar angle θ measured from +z, azimuth φ measured from +x
//! toward +y. Row `v` covers θ ∈ [vπ/H, (v+1)π/H], column `u` covers
//! φ ∈ [2πu/W, 2π(u+1)/W], with W = 2H.

use std::f64::consts::PI;
use std::path::Path;

use nalgebra::{Matrix3, Vector3};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::fsutil;
use crate::image::Image;

pub type Vec3 = Vector3<f64>;
pub type Mat3 = Matrix3<f64>;
pub type Rgb = [f32; 3];

/// Default map height used throughout the pipeline.
pub const DEFAULT_HEIGHT: usize = 64;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub enum Frame {
    World,
    Camera,
}

#[derive(Clone, Debug, PartialEq)]
pub struct EnvironmentMap {
    width: usize,
    height: usize,
    data: Vec<Rgb>,
    pub frame: Frame,
}

impl EnvironmentMap {
    /// Validating constructor; `data` is row-major, top row first.
    pub fn new(width: usize, height: usize, data: Vec<Rgb>, frame: Frame) -> Result<Self> {
        if height == 0 || width != 2 * height {
            return Err(Error::Aspect { width, height });
        }
        if data.len() != width * height {
            return Err(Error::Shape(format!(
                "{} texels for a {width}x{height} map",
                data.len()
            )));
        }
        for (i, px) in data.iter().enumerate() {
            if px.iter().any(|c| !c.is_finite() || *c < 0.0) {
                return Err(Error::NonFinite {
                    u: i % width,
                    v: i / width,
                });
            }
        }
        Ok(EnvironmentMap {
            width,
            height,
            data,
            frame,
        })
    }

    pub fn width(&self) -> usize {
        self.width
    }

    pub fn height(&self) -> usize {
        self.height
    }

    pub fn texels(&self) -> &[Rgb] {
        &self.data
    }

    #[inline]
    pub fn texel(&self, u: usize, v: usize) -> Rgb {
        self.data[v * self.width + u]
    }

    pub fn make_uniform(radiance: Rgb, height: usize) -> Result<Self> {
        if height == 0 {
            return Err(Error::Invalid("height must be >= 1".into()));
        }
        let width = 2 * height;
        EnvironmentMap::new(width, height, vec![radiance; width * height], Frame::World)
    }

    /// Small-cone area light on a black background.
    pub fn make_olat(
        direction: Vec3,
        angular_radius: f64,
        intensity: Rgb,
        height: usize,
    ) -> Result<Self> {
        if (direction.norm() - 1.0).abs() > 1e-6 {
            return Err(Error::Invalid(format!(
                "degenerate OLAT direction with norm {}",
                direction.norm()
            )));
        }
        if !(angular_radius > 0.0 && angular_radius < PI / 2.0) {
            return Err(Error::Invalid(format!(
                "angular radius {angular_radius} outside (0, pi/2)"
            )));
        }
        if height == 0 {
            return Err(Error::Invalid("height must be >= 1".into()));
        }
        let width = 2 * height;
        let cos_r = angular_radius.cos();
        let mut data = vec![[0.0; 3]; width * height];
        for v in 0..height {
            for u in 0..width {
                if texel_to_dir(u, v, height).dot(&direction) >= cos_r {
                    data[v * width + u] = intensity;
                }
            }
        }
        EnvironmentMap::new(width, height, data, Frame::World)
    }

    /// Sum of radiance × texel solid angle per channel.
    pub fn total_power(&self) -> [f64; 3] {
        let mut acc = [0.0; 3];
        for v in 0..self.height {
            let sa = texel_solid_angle(v, self.height);
            for u in 0..self.width {
                let px = self.texel(u, v);
                for c in 0..3 {
                    acc[c] += px[c] as f64 * sa;
                }
            }
        }
        acc
    }

    pub fn scaled(&self, s: f32) -> EnvironmentMap {
        EnvironmentMap {
            data: self
                .data
                .iter()
                .map(|p| [p[0] * s, p[1] * s, p[2] * s])
                .collect(),
            ..self.clone()
        }
    }

    /// Bilinear lookup with azimuth wraparound and polar clamping.
    pub fn sample(&self, direction: &Vec3) -> Rgb {
        let (theta, phi) = dir_to_angles(direction);
        let fu = snap(phi / (2.0 * PI) * self.width as f64 - 0.5);
        let fv = snap(theta / PI * self.height as f64 - 0.5).clamp(0.0, (self.height - 1) as f64);
        let u0f = fu.floor();
        let tu = (fu - u0f) as f32;
        let w = self.width as i64;
        let u0 = (u0f as i64).rem_euclid(w) as usize;
        let u1 = (u0 + 1) % self.width;
        let v0 = fv.floor() as usize;
        let v1 = (v0 + 1).min(self.height - 1);
        let tv = (fv - v0 as f64) as f32;
        let (a, b, c, d) = (
            self.texel(u0, v0),
            self.texel(u1, v0),
            self.texel(u0, v1),
            self.texel(u1, v1),
        );
        let mut out = [0.0; 3];
        for k in 0..3 {
            let top = if tu == 0.0 {
                a[k]
            } else {
                a[k] * (1.0 - tu) + b[k] * tu
            };
            let bot = if tu == 0.0 {
                c[k]
            } else {
                c[k] * (1.0 - tu) + d[k] * tu
            };
            out[k] = if tv == 0.0 {
                top
            } else {
                top * (1.0 - tv) + bot * tv
            };
        }
        out
    }

    /// Re-express the map in a frame rotated by `world_to_view`:
    /// `out(d) = in(world_to_viewᵀ · d)`.
    pub fn rotated(&self, world_to_view: &Mat3) -> EnvironmentMap {
        let view_to_world = world_to_view.transpose();
        let mut data = Vec::with_capacity(self.data.len());
        for v in 0..self.height {
            for u in 0..self.width {
                let d = texel_to_dir(u, v, self.height);
                data.push(self.sample(&(view_to_world * d)));
            }
        }
        EnvironmentMap {
            width: self.width,
            height: self.height,
            data,
            frame: Frame::Camera,
        }
    }

    /// World-frame map as seen from `camera` (camera-right = +x, forward = +y, up = +z).
    pub fn project_to_view(&self, camera: &CameraPose) -> Result<EnvironmentMap> {
        if self.frame != Frame::World {
            return Err(Error::Invalid(
                "project_to_view expects a world-frame map".into(),
            ));
        }
        Ok(self.rotated(&camera.env_view_rotation()))
    }

    /// Solid-angle weighted box downsample to `height` rows; `height` must divide the source height.
    pub fn downsample(&self, height: usize) -> Result<EnvironmentMap> {
        if height == 0 || !self.height.is_multiple_of(height) {
            return Err(Error::Invalid(format!(
                "cannot downsample height {} to {height}",
                self.height
            )));
        }
        if height == self.height {
            return Ok(self.clone());
        }
        let f = self.height / height;
        let width = 2 * height;
        let mut data = vec![[0.0f32; 3]; width * height];
        for v in 0..height {
            for u in 0..width {
                let mut acc = [0.0f64; 3];
                let mut wsum = 0.0;
                for dv in 0..f {
                    let sv = v * f + dv;
                    let sa = texel_solid_angle(sv, self.height);
                    for du in 0..f {
                        let px = self.texel(u * f + du, sv);
                        for c in 0..3 {
                            acc[c] += px[c] as f64 * sa;
                        }
                        wsum += sa;
                    }
                }
                data[v * width + u] = [
                    (acc[0] / wsum) as f32,
                    (acc[1] / wsum) as f32,
                    (acc[2] / wsum) as f32,
                ];
            }
        }
        EnvironmentMap::new(width, height, data, self.frame)
    }

    /// Linear radiance as a 3×W×H image.
    pub fn to_image(&self) -> Image {
        let mut img = Image::zeros(3, self.width, self.height);
        for v in 0..self.height {
            for u in 0..self.width {
                let px = self.texel(u, v);
                for c in 0..3 {
                    img.set(c, u, v, px[c]);
                }
            }
        }
        img
    }

    pub fn encode_pfm(&self) -> Vec<u8> {
        let mut out = format!("PF\n{} {}\n-1.0\n", self.width, self.height).into_bytes();
        out.reserve(self.data.len() * 12);
        // PFM scanlines run bottom to top.
        for v in (0..self.height).rev() {
            for u in 0..self.width {
                for c in self.texel(u, v) {
                    out.extend_from_slice(&c.to_le_bytes());
                }
            }
        }
        out
    }

    pub fn decode_pfm(bytes: &[u8]) -> Result<EnvironmentMap> {
        let mut pos = 0;
        let mut token = || -> Result<String> {
            while pos < bytes.len() && bytes[pos].is_ascii_whitespace() {
                pos += 1;
            }
            let start = pos;
            while pos < bytes.len() && !bytes[pos].is_ascii_whitespace() {
                pos += 1;
            }
            if start == pos {
                return Err(Error::PfmHeader("truncated header".into()));
            }
            Ok(String::from_utf8_lossy(&bytes[start..pos]).into_owned())
        };
        let magic = token()?;
        if magic != "PF" {
            return Err(Error::PfmHeader(format!(
                "expected PF magic, found {magic:?}"
            )));
        }
        let width: usize = token()?
            .parse()
            .map_err(|_| Error::PfmHeader("bad width".into()))?;
        let height: usize = token()?
            .parse()
            .map_err(|_| Error::PfmHeader("bad height".into()))?;
        let scale: f32 = token()?
            .parse()
            .map_err(|_| Error::PfmHeader("bad scale".into()))?;
        if scale == 0.0 || !scale.is_finite() {
            return Err(Error::PfmHeader("scale must be finite and nonzero".into()));
        }
        // exactly one whitespace byte separates the header from the raster
        pos += 1;
        let need = width * height * 12;
        if bytes.len() < pos + need {
            return Err(Error::PfmHeader(format!(
                "raster has {} bytes, expected {need}",
                bytes.len().saturating_sub(pos)
            )));
        }
        if height == 0 || width != 2 * height {
            return Err(Error::Aspect { width, height });
        }
        let little = scale < 0.0;
        let raster = &bytes[pos..pos + need];
        let mut data = vec![[0.0f32; 3]; width * height];
        for (i, chunk) in raster.chunks_exact(12).enumerate() {
            let row_from_bottom = i / width;
            let u = i % width;
            let v = height - 1 - row_from_bottom;
            let mut px = [0.0f32; 3];
            for c in 0..3 {
                let b: [u8; 4] = chunk[c * 4..c * 4 + 4].try_into().unwrap();
                px[c] = if little {
                    f32::from_le_bytes(b)
                } else {
                    f32::from_be_bytes(b)
                };
            }
            data[v * width + u] = px;
        }
        EnvironmentMap::new(width, height, data, Frame::World)
    }

    pub fn save_pfm(&self, path: &Path) -> Result<()> {
        fsutil::write_atomic(path, &self.encode_pfm())
    }

    pub fn load_pfm(path: &Path) -> Result<EnvironmentMap> {
        EnvironmentMap::decode_pfm(&fsutil::read(path)?)
    }
}

#[inline]
fn snap(x: f64) -> f64 {
    let r = x.round();
    if (x - r).abs() < 1e-9 {
        r
    } else {
        x
    }
}

/// (θ, φ) of a direction, φ wrapped into [0, 2π).
#[inline]
pub fn dir_to_angles(d: &Vec3) -> (f64, f64) {
    let n = d.norm();
    let theta = (d.z / n).clamp(-1.0, 1.0).acos();
    let mut phi = d.y.atan2(d.x);
    if phi < 0.0 {
        phi += 2.0 * PI;
    }
    if phi >= 2.0 * PI {
        phi -= 2.0 * PI;
    }
    (theta, phi)
}

#[inline]
pub fn angles_to_dir(theta: f64, phi: f64) -> Vec3 {
    let s = theta.sin();
    Vec3::new(s * phi.cos(), s * phi.sin(), theta.cos())
}

/// Direction through the center of texel `(u, v)` of a map with `height` rows.
#[inline]
pub fn texel_to_dir(u: usize, v: usize, height: usize) -> Vec3 {
    let width = 2 * height;
    let theta = (v as f64 + 0.5) * PI / height as f64;
    let phi = (u as f64 + 0.5) * 2.0 * PI / width as f64;
    angles_to_dir(theta, phi)
}

pub fn dir_to_texel(d: &Vec3, height: usize) -> (usize, usize) {
    let width = 2 * height;
    let (theta, phi) = dir_to_angles(d);
    let u = ((phi / (2.0 * PI) * width as f64).floor() as usize).min(width - 1);
    let v = ((theta / PI * height as f64).floor() as usize).min(height - 1);
    (u, v)
}

/// Midpoint solid angle of any texel in row `v`.
#[inline]
pub fn texel_solid_angle(v: usize, height: usize) -> f64 {
    let width = 2 * height;
    let theta = (v as f64 + 0.5) * PI / height as f64;
    (2.0 * PI / width as f64) * (PI / height as f64) * theta.sin()
}

/// Reinhard global operator `x / (1 + x)` applied per channel.
#[inline]
pub fn reinhard(x: f32) -> f32 {
    x / (1.0 + x)
}

pub fn reinhard_tonemap(img: &Image) -> Image {
    img.map(reinhard)
}

/// Pinhole camera. `rotation` maps world vectors into camera coordinates
/// (x right, y down, z forward).
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct CameraPose {
    pub rotation: [[f64; 3]; 3],
    pub position: [f64; 3],
    pub fx: f64,
    pub fy: f64,
    pub cx: f64,
    pub cy: f64,
    pub image_size: (usize, usize),
}

impl CameraPose {
    pub fn new(
        rotation: Mat3,
        position: Vec3,
        fx: f64,
        fy: f64,
        image_size: (usize, usize),
    ) -> Result<Self> {
        let cam = CameraPose {
            rotation: [
                [rotation[(0, 0)], rotation[(0, 1)], rotation[(0, 2)]],
                [rotation[(1, 0)], rotation[(1, 1)], rotation[(1, 2)]],
                [rotation[(2, 0)], rotation[(2, 1)], rotation[(2, 2)]],
            ],
            position: [position.x, position.y, position.z],
            fx,
            fy,
            cx: image_size.0 as f64 / 2.0,
            cy: image_size.1 as f64 / 2.0,
            image_size,
        };
        cam.validate()?;
        Ok(cam)
    }

    /// Camera at `eye` looking at `target` with `up` hinting the vertical.
    pub fn look_at(
        eye: Vec3,
        target: Vec3,
        up: Vec3,
        fov_y: f64,
        image_size: (usize, usize),
    ) -> Result<Self> {
        let forward = (target - eye).normalize();
        let right = forward.cross(&up).normalize();
        let down = forward.cross(&right);
        let r = Mat3::from_rows(&[right.transpose(), down.transpose(), forward.transpose()]);
        let f = image_size.1 as f64 / 2.0 / (fov_y / 2.0).tan();
        CameraPose::new(r, eye, f, f, image_size)
    }

    pub fn validate(&self) -> Result<()> {
        let r = self.rotation_matrix();
        let err = (r * r.transpose() - Mat3::identity()).abs().max();
        if err > 1e-6 {
            return Err(Error::Invalid(format!(
                "camera rotation not orthonormal (err {err:e})"
            )));
        }
        if !(self.fx > 0.0 && self.fy > 0.0) {
            return Err(Error::Invalid("focal lengths must be positive".into()));
        }
        Ok(())
    }

    pub fn rotation_matrix(&self) -> Mat3 {
        Mat3::from_fn(|i, j| self.rotation[i][j])
    }

    pub fn center(&self) -> Vec3 {
        Vec3::new(self.position[0], self.position[1], self.position[2])
    }

    /// World-space unit ray through the center of pixel `(px, py)`.
    pub fn ray_dir(&self, px: usize, py: usize) -> Vec3 {
        let d = Vec3::new(
            (px as f64 + 0.5 - self.cx) / self.fx,
            (py as f64 + 0.5 - self.cy) / self.fy,
            1.0,
        );
        (self.rotation_matrix().transpose() * d).normalize()
    }

    /// Pixel coordinates of a world point (continuous, pixel centers at +0.5).
    pub fn project(&self, p: &Vec3) -> Option<(f64, f64)> {
        let q = self.rotation_matrix() * (p - self.center());
        if q.z <= 0.0 {
            return None;
        }
        Some((self.fx * q.x / q.z + self.cx, self.fy * q.y / q.z + self.cy))
    }

    /// Rotation from world directions into the z-up camera environment frame.
    pub fn env_view_rotation(&self) -> Mat3 {
        // rows: camera right, camera forward, camera up (= -y_cam)
        let remap = Mat3::new(1.0, 0.0, 0.0, 0.0, 0.0, 1.0, 0.0, -1.0, 0.0);
        remap * self.rotation_matrix()
    }
}

/// Rotation about +z by `angle` (right-handed).
pub fn rot_z(angle: f64) -> Mat3 {
    let (s, c) = angle.sin_cos();
    Mat3::new(c, -s, 0.0, s, c, 0.0, 0.0, 0.0, 1.0)
}

pub fn rot_x(angle: f64) -> Mat3 {
    let (s, c) = angle.sin_cos();
    Mat3::new(1.0, 0.0, 0.0, 0.0, c, -s, 0.0, s, c)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn smooth_map(height: usize) -> EnvironmentMap {
        let lobes = [
            (
                Vec3::new(0.3, 0.5, 0.8).normalize(),
                6.0,
                [2.0f32, 1.5, 1.0],
            ),
            (Vec3::new(-0.7, 0.2, -0.1).normalize(), 4.0, [0.5, 0.8, 1.2]),
        ];
        let width = 2 * height;
        let mut data = Vec::new();
        for v in 0..height {
            for u in 0..width {
                let d = texel_to_dir(u, v, height);
                let mut px = [0.05f32; 3];
                for (mu, k, c) in &lobes {
                    let w = (k * (d.dot(mu) - 1.0)).exp() as f32;
                    for i in 0..3 {
                        px[i] += c[i] * w;
                    }
                }
                data.push(px);
            }
        }
        EnvironmentMap::new(width, height, data, Frame::World).unwrap()
    }

    #[test]
    fn pfm_round_trip_bit_exact() {
        let m = EnvironmentMap::make_uniform([0.5; 3], 2).unwrap();
        assert_eq!(m.width(), 4);
        let back = EnvironmentMap::decode_pfm(&m.encode_pfm()).unwrap();
        assert_eq!(back, m);
        let s = smooth_map(8);
        let back = EnvironmentMap::decode_pfm(&s.encode_pfm()).unwrap();
        for (a, b) in s.texels().iter().zip(back.texels()) {
            for c in 0..3 {
                assert_eq!(a[c].to_bits(), b[c].to_bits());
            }
        }
    }

    #[test]
    fn pfm_big_endian_accepted() {
        let mut bytes = b"PF\n2 1\n1.0\n".to_vec();
        for i in 0..6 {
            bytes.extend_from_slice(&(i as f32).to_be_bytes());
        }
        let m = EnvironmentMap::decode_pfm(&bytes).unwrap();
        assert_eq!(m.texel(1, 0), [3.0, 4.0, 5.0]);
    }

    #[test]
    fn pfm_rejects_bad_aspect_and_nan() {
        let mut bytes = b"PF\n3 2\n-1.0\n".to_vec();
        bytes.extend(std::iter::repeat_n(0u8, 3 * 2 * 12));
        let err = EnvironmentMap::decode_pfm(&bytes).unwrap_err();
        assert!(err.to_string().contains("aspect"), "{err}");

        let mut m = EnvironmentMap::make_uniform([0.5; 3], 2)
            .unwrap()
            .encode_pfm();
        let at = m.len() - 4;
        m[at..].copy_from_slice(&f32::NAN.to_le_bytes());
        let err = EnvironmentMap::decode_pfm(&m).unwrap_err();
        assert!(err.to_string().contains("non-finite"), "{err}");

        assert!(EnvironmentMap::decode_pfm(b"P6\n2 1\n-1\n").is_err());
        assert!(EnvironmentMap::decode_pfm(b"PF\n2 1\n-1\n\x00").is_err());
    }

    #[test]
    fn uniform_maps() {
        let m = EnvironmentMap::make_uniform([1.0; 3], 8).unwrap();
        assert_eq!((m.width(), m.height()), (16, 8));
        assert!(m.texels().iter().all(|p| *p == [1.0; 3]));
        assert_eq!(m.frame, Frame::World);
        let z = EnvironmentMap::make_uniform([0.0; 3], 1).unwrap();
        assert!(z.texels().iter().all(|p| *p == [0.0; 3]));
    }

    #[test]
    fn olat_locality_and_power() {
        let h = 64;
        let (u, v) = (37, 20);
        let dir = texel_to_dir(u, v, h);
        let m = EnvironmentMap::make_olat(dir, 0.2, [3.0, 2.0, 1.0], h).unwrap();
        assert!(m.texel(u, v)[0] > 0.0);
        let cos_r = 0.2f64.cos();
        for vv in 0..h {
            for uu in 0..2 * h {
                if texel_to_dir(uu, vv, h).dot(&dir) < cos_r {
                    assert_eq!(m.texel(uu, vv), [0.0; 3]);
                }
            }
        }
        let expected = 2.0 * PI * (1.0 - cos_r);
        let p = m.total_power();
        for (c, i) in [3.0, 2.0, 1.0].iter().enumerate() {
            let rel = (p[c] / (i * expected) - 1.0).abs();
            assert!(rel < 0.05, "channel {c} rel err {rel}");
        }
        let black = EnvironmentMap::make_olat(dir, 0.2, [0.0; 3], h).unwrap();
        assert!(black.texels().iter().all(|p| *p == [0.0; 3]));
        assert!(EnvironmentMap::make_olat(Vec3::new(0.0, 0.0, 0.5), 0.1, [1.0; 3], 8).is_err());
        assert!(EnvironmentMap::make_olat(Vec3::z(), 2.0, [1.0; 3], 8).is_err());
    }

    #[test]
    fn solid_angles_partition_sphere() {
        for h in [32usize, 64, 128] {
            let total: f64 = (0..h)
                .map(|v| texel_solid_angle(v, h) * (2 * h) as f64)
                .sum();
            assert!((total / (4.0 * PI) - 1.0).abs() < 1e-3, "h={h}: {total}");
        }
    }

    #[test]
    fn texel_direction_inverse_pair() {
        let h = 16;
        for v in 0..h {
            for u in 0..2 * h {
                assert_eq!(dir_to_texel(&texel_to_dir(u, v, h), h), (u, v));
            }
        }
        assert_eq!(dir_to_texel(&Vec3::z(), h).1, 0);
        assert_eq!(dir_to_texel(&-Vec3::z(), h).1, h - 1);
    }

    #[test]
    fn reinhard_values() {
        assert_eq!(reinhard(0.0), 0.0);
        assert_eq!(reinhard(1.0), 0.5);
        assert_eq!(reinhard(3.0), 0.75);
        assert!(reinhard(1e30) < 1.0 || reinhard(1e30) == 1.0);
    }

    #[test]
    fn sampling_uniform_texel_center_and_seam() {
        let u = EnvironmentMap::make_uniform([0.7, 0.2, 0.1], 8).unwrap();
        for d in [Vec3::x(), Vec3::new(0.3, -0.4, 0.5).normalize(), -Vec3::z()] {
            let s = u.sample(&d);
            for c in 0..3 {
                assert!((s[c] - [0.7, 0.2, 0.1][c]).abs() < 1e-6);
            }
        }
        let m = smooth_map(8);
        assert_eq!(m.sample(&texel_to_dir(5, 3, 8)), m.texel(5, 3));
        // exactly on the seam at phi = 0: halfway between the last and first columns
        let h = 8;
        let w = 16;
        let theta = (3.0 + 0.5) * PI / h as f64;
        let s = m.sample(&angles_to_dir(theta, 0.0));
        let (a, b) = (m.texel(w - 1, 3), m.texel(0, 3));
        for c in 0..3 {
            assert!((s[c] - 0.5 * (a[c] + b[c])).abs() < 1e-5);
        }
        // a quarter texel past the seam
        let s = m.sample(&angles_to_dir(theta, 0.25 * 2.0 * PI / w as f64));
        for c in 0..3 {
            assert!((s[c] - (0.25 * a[c] + 0.75 * b[c])).abs() < 1e-5);
        }
    }

    #[test]
    fn identity_rotation_and_yaw_pi() {
        let m = smooth_map(16);
        assert_eq!(m.rotated(&Mat3::identity()).texels(), m.texels());
        let r = m.rotated(&rot_z(PI));
        let w = m.width();
        for v in 0..m.height() {
            for u in 0..w {
                let a = r.texel(u, v);
                let b = m.texel((u + w / 2) % w, v);
                for c in 0..3 {
                    assert!((a[c] - b[c]).abs() <= 1e-6 * b[c].max(1.0));
                }
            }
        }
    }

    #[test]
    fn canonical_camera_is_identity_projection() {
        let cam = CameraPose::look_at(
            Vec3::new(0.0, -3.0, 0.0),
            Vec3::zeros(),
            Vec3::z(),
            0.6,
            (16, 16),
        )
        .unwrap();
        let rot = cam.env_view_rotation();
        assert!((rot - Mat3::identity()).abs().max() < 1e-12);
        let m = smooth_map(8);
        let p = m.project_to_view(&cam).unwrap();
        assert_eq!(p.frame, Frame::Camera);
        for (a, b) in p.texels().iter().zip(m.texels()) {
            for c in 0..3 {
                assert!((a[c] - b[c]).abs() < 1e-6);
            }
        }
        assert!(p.project_to_view(&cam).is_err());
    }

    /// Brute-force oracle: resample every texel of the rotated map independently and
    /// compare the round trip against the source.
    #[test]
    fn rotation_round_trip_mae() {
        let m = smooth_map(64);
        let r = rot_z(0.7) * rot_x(0.4);
        let back = m.rotated(&r).rotated(&r.transpose());
        let mut mae = 0.0f64;
        for (a, b) in back.texels().iter().zip(m.texels()) {
            for c in 0..3 {
                mae += (crate::envmap::reinhard(a[c]) - crate::envmap::reinhard(b[c])).abs() as f64;
            }
        }
        mae /= (m.texels().len() * 3) as f64;
        assert!(mae < 2.0 / 255.0, "mae {mae}");
        // the same holds on raw radiance for this map
        let raw: f64 = back
            .texels()
            .iter()
            .zip(m.texels())
            .map(|(a, b)| (0..3).map(|c| (a[c] - b[c]).abs() as f64).sum::<f64>())
            .sum::<f64>()
            / (m.texels().len() * 3) as f64;
        assert!(raw < 2.0 / 255.0, "raw mae {raw}");
    }

    #[test]
    fn rotation_equivariance_of_sampling() {
        let m = smooth_map(64);
        let r = rot_z(1.1) * rot_x(-0.3);
        let rotated = m.rotated(&r);
        let mut worst = 0.0f32;
        for i in 0..200 {
            let t = i as f64 * 0.37;
            let d = Vec3::new(t.sin() * 0.9, t.cos(), (t * 1.7).sin() * 0.8).normalize();
            let a = rotated.sample(&d);
            let b = m.sample(&(r.transpose() * d));
            for c in 0..3 {
                worst = worst.max((a[c] - b[c]).abs());
            }
        }
        assert!(worst < 2.0 / 255.0, "worst {worst}");
    }

    #[test]
    fn downsample_preserves_power() {
        let m = smooth_map(64);
        let d = m.downsample(16).unwrap();
        let (a, b) = (m.total_power(), d.total_power());
        for c in 0..3 {
            assert!((a[c] / b[c] - 1.0).abs() < 2e-3);
        }
        assert!(m.downsample(10).is_err());
    }

    #[test]
    fn camera_validation() {
        let bad = CameraPose::new(Mat3::identity() * 2.0, Vec3::zeros(), 10.0, 10.0, (4, 4));
        assert!(bad.is_err());
        let bad = CameraPose::new(Mat3::identity(), Vec3::zeros(), 0.0, 10.0, (4, 4));
        assert!(bad.is_err());
        let cam = CameraPose::look_at(
            Vec3::new(3.0, 0.0, 0.0),
            Vec3::zeros(),
            Vec3::z(),
            0.5,
            (32, 32),
        )
        .unwrap();
        let (px, py) = cam.project(&Vec3::zeros()).unwrap();
        assert!((px - 16.0).abs() < 1e-9 && (py - 16.0).abs() < 1e-9);
        let up = cam.project(&Vec3::new(0.0, 0.0, 0.5)).unwrap();
        assert!(up.1 < 16.0, "up is toward row 0");
    }
}
