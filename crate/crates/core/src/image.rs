//! Planar float images and PNG I/O.

use std::io::Cursor;
use std::path::Path;

use crate::error::{Error, Result};
use crate::fsutil;

/// Channel-planar (C×H×W) float image.
#[derive(Clone, Debug, PartialEq)]
pub struct Image {
    pub width: usize,
    pub height: usize,
    pub channels: usize,
    pub data: Vec<f32>,
}

impl Image {
    pub fn zeros(channels: usize, width: usize, height: usize) -> Self {
        Self::filled(channels, width, height, 0.0)
    }

    pub fn filled(channels: usize, width: usize, height: usize, value: f32) -> Self {
        Image {
            width,
            height,
            channels,
            data: vec![value; channels * width * height],
        }
    }

    pub fn from_data(channels: usize, width: usize, height: usize, data: Vec<f32>) -> Result<Self> {
        if data.len() != channels * width * height {
            return Err(Error::Shape(format!(
                "{} values for {channels}x{width}x{height}",
                data.len()
            )));
        }
        Ok(Image {
            width,
            height,
            channels,
            data,
        })
    }

    #[inline]
    pub fn plane_len(&self) -> usize {
        self.width * self.height
    }

    #[inline]
    pub fn idx(&self, c: usize, x: usize, y: usize) -> usize {
        (c * self.height + y) * self.width + x
    }

    #[inline]
    pub fn get(&self, c: usize, x: usize, y: usize) -> f32 {
        self.data[self.idx(c, x, y)]
    }

    #[inline]
    pub fn set(&mut self, c: usize, x: usize, y: usize, v: f32) {
        let i = self.idx(c, x, y);
        self.data[i] = v;
    }

    pub fn plane(&self, c: usize) -> &[f32] {
        let n = self.plane_len();
        &self.data[c * n..(c + 1) * n]
    }

    pub fn same_shape(&self, other: &Image) -> bool {
        self.width == other.width && self.height == other.height && self.channels == other.channels
    }

    pub fn check_shape(&self, other: &Image) -> Result<()> {
        if self.same_shape(other) {
            Ok(())
        } else {
            Err(Error::Shape(format!(
                "{}x{}x{} vs {}x{}x{}",
                self.channels, self.width, self.height, other.channels, other.width, other.height
            )))
        }
    }

    pub fn map(&self, f: impl Fn(f32) -> f32) -> Image {
        Image {
            data: self.data.iter().map(|&v| f(v)).collect(),
            ..*self
        }
    }

    pub fn clamp01(&self) -> Image {
        self.map(|v| v.clamp(0.0, 1.0))
    }

    pub fn mean(&self) -> f64 {
        self.data.iter().map(|&v| v as f64).sum::<f64>() / self.data.len().max(1) as f64
    }

    /// Multiply every channel by a single-channel mask of the same spatial size.
    pub fn masked(&self, mask: &Image) -> Result<Image> {
        if mask.channels != 1 || mask.width != self.width || mask.height != self.height {
            return Err(Error::Shape(
                "mask must be 1-channel with matching size".into(),
            ));
        }
        let n = self.plane_len();
        let mut out = self.clone();
        for c in 0..self.channels {
            for (v, m) in out.data[c * n..(c + 1) * n].iter_mut().zip(&mask.data) {
                *v *= m;
            }
        }
        Ok(out)
    }

    /// Copy of the region `[x0, x0+w) × [y0, y0+h)`.
    pub fn crop(&self, x0: usize, y0: usize, w: usize, h: usize) -> Result<Image> {
        if x0 + w > self.width || y0 + h > self.height {
            return Err(Error::Shape(format!(
                "crop {w}x{h}+{x0}+{y0} outside {}x{}",
                self.width, self.height
            )));
        }
        let mut out = Image::zeros(self.channels, w, h);
        for c in 0..self.channels {
            for y in 0..h {
                let src = self.idx(c, x0, y0 + y);
                let dst = out.idx(c, 0, y);
                out.data[dst..dst + w].copy_from_slice(&self.data[src..src + w]);
            }
        }
        Ok(out)
    }

    /// Bilinear resample to `w × h` using pixel-center alignment with edge clamping.
    pub fn resize_bilinear(&self, w: usize, h: usize) -> Image {
        if w == self.width && h == self.height {
            return self.clone();
        }
        let mut out = Image::zeros(self.channels, w, h);
        let sx = self.width as f32 / w as f32;
        let sy = self.height as f32 / h as f32;
        for y in 0..h {
            let fy = ((y as f32 + 0.5) * sy - 0.5).clamp(0.0, (self.height - 1) as f32);
            let y0 = fy.floor() as usize;
            let y1 = (y0 + 1).min(self.height - 1);
            let ty = fy - y0 as f32;
            for x in 0..w {
                let fx = ((x as f32 + 0.5) * sx - 0.5).clamp(0.0, (self.width - 1) as f32);
                let x0 = fx.floor() as usize;
                let x1 = (x0 + 1).min(self.width - 1);
                let tx = fx - x0 as f32;
                for c in 0..self.channels {
                    let a = self.get(c, x0, y0) * (1.0 - tx) + self.get(c, x1, y0) * tx;
                    let b = self.get(c, x0, y1) * (1.0 - tx) + self.get(c, x1, y1) * tx;
                    out.set(c, x, y, a * (1.0 - ty) + b * ty);
                }
            }
        }
        out
    }

    /// Separable Gaussian blur with clamped borders; `sigma <= 0` returns a copy.
    pub fn gaussian_blur(&self, sigma: f32) -> Image {
        if sigma <= 0.0 {
            return self.clone();
        }
        let radius = (3.0 * sigma).ceil() as isize;
        let mut kernel: Vec<f32> = (-radius..=radius)
            .map(|i| (-(i * i) as f32 / (2.0 * sigma * sigma)).exp())
            .collect();
        let total: f32 = kernel.iter().sum();
        kernel.iter_mut().for_each(|k| *k /= total);
        let (w, h) = (self.width as isize, self.height as isize);
        let mut tmp = Image::zeros(self.channels, self.width, self.height);
        for c in 0..self.channels {
            for y in 0..h {
                for x in 0..w {
                    let mut acc = 0.0;
                    for (k, i) in kernel.iter().zip(-radius..=radius) {
                        let xx = (x + i).clamp(0, w - 1) as usize;
                        acc += k * self.get(c, xx, y as usize);
                    }
                    tmp.set(c, x as usize, y as usize, acc);
                }
            }
        }
        let mut out = Image::zeros(self.channels, self.width, self.height);
        for c in 0..self.channels {
            for y in 0..h {
                for x in 0..w {
                    let mut acc = 0.0;
                    for (k, i) in kernel.iter().zip(-radius..=radius) {
                        let yy = (y + i).clamp(0, h - 1) as usize;
                        acc += k * tmp.get(c, x as usize, yy);
                    }
                    out.set(c, x as usize, y as usize, acc);
                }
            }
        }
        out
    }

    /// 8-bit PNG encoding; 1-channel images become grayscale, 3-channel RGB.
    pub fn encode_png(&self) -> Result<Vec<u8>> {
        let color = match self.channels {
            1 => png::ColorType::Grayscale,
            3 => png::ColorType::Rgb,
            c => return Err(Error::Png(format!("cannot encode {c}-channel image"))),
        };
        let n = self.plane_len();
        let mut bytes = Vec::with_capacity(n * self.channels);
        for i in 0..n {
            for c in 0..self.channels {
                bytes.push(quantize(self.data[c * n + i]));
            }
        }
        let mut buf = Vec::new();
        {
            let mut enc = png::Encoder::new(&mut buf, self.width as u32, self.height as u32);
            enc.set_color(color);
            enc.set_depth(png::BitDepth::Eight);
            let mut writer = enc.write_header().map_err(|e| Error::Png(e.to_string()))?;
            writer
                .write_image_data(&bytes)
                .map_err(|e| Error::Png(e.to_string()))?;
        }
        Ok(buf)
    }

    pub fn save_png(&self, path: &Path) -> Result<()> {
        fsutil::write_atomic(path, &self.encode_png()?)
    }

    pub fn decode_png(bytes: &[u8]) -> Result<Image> {
        let decoder = png::Decoder::new(Cursor::new(bytes));
        let mut reader = decoder.read_info().map_err(|e| Error::Png(e.to_string()))?;
        let size = reader
            .output_buffer_size()
            .ok_or_else(|| Error::Png("image too large".into()))?;
        let mut buf = vec![0u8; size];
        let info = reader
            .next_frame(&mut buf)
            .map_err(|e| Error::Png(e.to_string()))?;
        if info.bit_depth != png::BitDepth::Eight {
            return Err(Error::Png("only 8-bit PNG is supported".into()));
        }
        let channels = match info.color_type {
            png::ColorType::Grayscale => 1,
            png::ColorType::Rgb => 3,
            other => return Err(Error::Png(format!("unsupported color type {other:?}"))),
        };
        let (w, h) = (info.width as usize, info.height as usize);
        let mut img = Image::zeros(channels, w, h);
        let n = w * h;
        for y in 0..h {
            let row = &buf[y * info.line_size..];
            for x in 0..w {
                for c in 0..channels {
                    img.data[c * n + y * w + x] = row[x * channels + c] as f32 / 255.0;
                }
            }
        }
        Ok(img)
    }

    pub fn load_png(path: &Path) -> Result<Image> {
        Image::decode_png(&fsutil::read(path)?)
    }
}

#[inline]
pub fn quantize(v: f32) -> u8 {
    (v.clamp(0.0, 1.0) * 255.0).round() as u8
}

/// Concatenate images along the channel axis.
pub fn concat_channels(parts: &[&Image]) -> Result<Image> {
    let first = parts
        .first()
        .ok_or_else(|| Error::Shape("nothing to concatenate".into()))?;
    let mut data = Vec::new();
    let mut channels = 0;
    for p in parts {
        if p.width != first.width || p.height != first.height {
            return Err(Error::Shape("spatial sizes differ in concat".into()));
        }
        channels += p.channels;
        data.extend_from_slice(&p.data);
    }
    Image::from_data(channels, first.width, first.height, data)
}
