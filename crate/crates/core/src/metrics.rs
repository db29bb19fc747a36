//! Image quality and temporal stability metrics.

use std::collections::BTreeMap;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::image::Image;

/// Returned by [`psnr`] when the images are identical.
pub const PSNR_CAP_DB: f64 = 99.0;

pub fn mse(a: &Image, b: &Image) -> Result<f64> {
    a.check_shape(b)?;
    let sum: f64 = a
        .data
        .iter()
        .zip(&b.data)
        .map(|(x, y)| {
            let d = (x - y) as f64;
            d * d
        })
        .sum();
    Ok(sum / a.data.len().max(1) as f64)
}

/// Peak signal-to-noise ratio in dB for signals in [0, `max_val`]; capped at 99 dB.
pub fn psnr_with(a: &Image, b: &Image, max_val: f64, cap: f64) -> Result<f64> {
    let m = mse(a, b)?;
    if m == 0.0 {
        return Ok(cap);
    }
    Ok((10.0 * (max_val * max_val / m).log10()).min(cap))
}

pub fn psnr(a: &Image, b: &Image) -> Result<f64> {
    psnr_with(a, b, 1.0, PSNR_CAP_DB)
}

const SSIM_WINDOW: usize = 11;
const SSIM_SIGMA: f64 = 1.5;
const SSIM_K1: f64 = 0.01;
const SSIM_K2: f64 = 0.03;

fn gray(img: &Image) -> Vec<f64> {
    let n = img.plane_len();
    (0..n)
        .map(|i| {
            (0..img.channels)
                .map(|c| img.data[c * n + i] as f64)
                .sum::<f64>()
                / img.channels as f64
        })
        .collect()
}

/// Valid-region separable Gaussian filter of a `w × h` plane.
fn filter_valid(src: &[f64], w: usize, h: usize, kernel: &[f64]) -> Vec<f64> {
    let k = kernel.len();
    let (ow, oh) = (w - k + 1, h - k + 1);
    let mut tmp = vec![0.0; ow * h];
    for y in 0..h {
        for x in 0..ow {
            tmp[y * ow + x] = (0..k).map(|i| kernel[i] * src[y * w + x + i]).sum();
        }
    }
    let mut out = vec![0.0; ow * oh];
    for y in 0..oh {
        for x in 0..ow {
            out[y * ow + x] = (0..k).map(|i| kernel[i] * tmp[(y + i) * ow + x]).sum();
        }
    }
    out
}

/// Mean local SSIM on the channel-mean image; 11×11 Gaussian window (σ = 1.5),
/// K1 = 0.01, K2 = 0.03, dynamic range 1. Only fully interior windows are used.
pub fn ssim(a: &Image, b: &Image) -> Result<f64> {
    a.check_shape(b)?;
    if a.width < SSIM_WINDOW || a.height < SSIM_WINDOW {
        return Err(Error::Shape(format!(
            "ssim needs at least {SSIM_WINDOW}x{SSIM_WINDOW}, got {}x{}",
            a.width, a.height
        )));
    }
    let half = (SSIM_WINDOW / 2) as f64;
    let mut kernel: Vec<f64> = (0..SSIM_WINDOW)
        .map(|i| {
            let d = i as f64 - half;
            (-d * d / (2.0 * SSIM_SIGMA * SSIM_SIGMA)).exp()
        })
        .collect();
    let s: f64 = kernel.iter().sum();
    kernel.iter_mut().for_each(|k| *k /= s);
    let (w, h) = (a.width, a.height);
    let x = gray(a);
    let y = gray(b);
    let xx: Vec<f64> = x.iter().map(|v| v * v).collect();
    let yy: Vec<f64> = y.iter().map(|v| v * v).collect();
    let xy: Vec<f64> = x.iter().zip(&y).map(|(p, q)| p * q).collect();
    let mx = filter_valid(&x, w, h, &kernel);
    let my = filter_valid(&y, w, h, &kernel);
    let sxx = filter_valid(&xx, w, h, &kernel);
    let syy = filter_valid(&yy, w, h, &kernel);
    let sxy = filter_valid(&xy, w, h, &kernel);
    let c1 = (SSIM_K1 * 1.0).powi(2);
    let c2 = (SSIM_K2 * 1.0).powi(2);
    let mut total = 0.0;
    for i in 0..mx.len() {
        let (ux, uy) = (mx[i], my[i]);
        let vx = sxx[i] - ux * ux;
        let vy = syy[i] - uy * uy;
        let cxy = sxy[i] - ux * uy;
        total +=
            ((2.0 * ux * uy + c1) * (2.0 * cxy + c2)) / ((ux * ux + uy * uy + c1) * (vx + vy + c2));
    }
    Ok(total / mx.len() as f64)
}

/// Tight bounding box `(x0, y0, w, h)` of the nonzero mask pixels.
pub fn mask_bbox(mask: &Image) -> Option<(usize, usize, usize, usize)> {
    let (mut x0, mut y0, mut x1, mut y1) = (usize::MAX, usize::MAX, 0, 0);
    for y in 0..mask.height {
        for x in 0..mask.width {
            if mask.get(0, x, y) > 0.5 {
                x0 = x0.min(x);
                y0 = y0.min(y);
                x1 = x1.max(x);
                y1 = y1.max(y);
            }
        }
    }
    (x0 != usize::MAX).then(|| (x0, y0, x1 - x0 + 1, y1 - y0 + 1))
}

/// Evaluate `metric` on the mask's bounding box with off-mask pixels of both images zeroed.
pub fn masked_metric(
    metric: impl Fn(&Image, &Image) -> Result<f64>,
    a: &Image,
    b: &Image,
    mask: &Image,
) -> Result<f64> {
    a.check_shape(b)?;
    let (x0, y0, w, h) = mask_bbox(mask).ok_or(Error::EmptyMask)?;
    let binary = mask.map(|m| if m > 0.5 { 1.0 } else { 0.0 });
    let am = a.masked(&binary)?.crop(x0, y0, w, h)?;
    let bm = b.masked(&binary)?.crop(x0, y0, w, h)?;
    metric(&am, &bm)
}

pub fn masked_psnr(a: &Image, b: &Image, mask: &Image) -> Result<f64> {
    masked_metric(psnr, a, b, mask)
}

/// Mean over consecutive frame pairs of the mean absolute difference.
pub fn flicker_energy(video: &[Image]) -> Result<f64> {
    if video.len() < 2 {
        return Err(Error::Invalid(
            "flicker energy needs at least 2 frames".into(),
        ));
    }
    let mut total = 0.0;
    for pair in video.windows(2) {
        pair[0].check_shape(&pair[1])?;
        let d: f64 = pair[0]
            .data
            .iter()
            .zip(&pair[1].data)
            .map(|(x, y)| (x - y).abs() as f64)
            .sum();
        total += d / pair[0].data.len() as f64;
    }
    Ok(total / (video.len() - 1) as f64)
}

/// One variant's row in a comparison table. LPIPS is never computed and stays `None`.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ReportRow {
    pub variant: String,
    pub n: usize,
    pub psnr: f64,
    pub ssim: Option<f64>,
    pub lpips: Option<f64>,
    /// Experiment-specific columns, e.g. cross-seed std or centroid shift.
    #[serde(default)]
    pub extra: BTreeMap<String, f64>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Report {
    pub title: String,
    pub rows: Vec<ReportRow>,
}

fn cell(v: Option<f64>, digits: usize) -> String {
    match v {
        Some(x) if x.is_finite() => format!("{x:.digits$}"),
        _ => "-".to_string(),
    }
}

impl Report {
    pub fn row(&self, variant: &str) -> Option<&ReportRow> {
        self.rows.iter().find(|r| r.variant == variant)
    }

    /// Aligned plain-text table, variants down, metrics across.
    pub fn table(&self) -> String {
        let extras: Vec<&String> = {
            let mut keys: Vec<&String> = self.rows.iter().flat_map(|r| r.extra.keys()).collect();
            keys.sort();
            keys.dedup();
            keys
        };
        let mut header = vec![
            "variant".to_string(),
            "n".into(),
            "PSNR".into(),
            "SSIM".into(),
            "LPIPS".into(),
        ];
        header.extend(extras.iter().map(|k| k.to_string()));
        let mut lines = vec![header];
        for r in &self.rows {
            let mut line = vec![
                r.variant.clone(),
                r.n.to_string(),
                cell(Some(r.psnr), 2),
                cell(r.ssim, 4),
                cell(r.lpips, 4),
            ];
            line.extend(extras.iter().map(|k| cell(r.extra.get(*k).copied(), 4)));
            lines.push(line);
        }
        let widths: Vec<usize> = (0..lines[0].len())
            .map(|c| lines.iter().map(|l| l[c].len()).max().unwrap_or(0))
            .collect();
        let mut out = format!("{}\n", self.title);
        for l in &lines {
            let cells: Vec<String> = l
                .iter()
                .zip(&widths)
                .map(|(s, w)| format!("{s:<w$}"))
                .collect();
            out.push_str(cells.join("  ").trim_end());
            out.push('\n');
        }
        out
    }

    /// One JSON object per row.
    pub fn jsonl(&self) -> Result<String> {
        let mut out = String::new();
        for r in &self.rows {
            let mut v = serde_json::to_value(r)?;
            v["report"] = serde_json::Value::String(self.title.clone());
            out.push_str(&serde_json::to_string(&v)?);
            out.push('\n');
        }
        Ok(out)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn natural(seed: u64, n: usize) -> Image {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut img = Image::zeros(3, n, n);
        let fx: f32 = rng.random_range(0.1..0.4);
        let fy: f32 = rng.random_range(0.1..0.4);
        for c in 0..3 {
            for y in 0..n {
                for x in 0..n {
                    let v = 0.45
                        + 0.25 * (x as f32 * fx + c as f32).sin() * (y as f32 * fy).cos()
                        + rng.random_range(-0.05..0.05);
                    img.set(c, x, y, v.clamp(0.0, 0.85));
                }
            }
        }
        img
    }

    #[test]
    fn psnr_cap_value_and_symmetry() {
        let a = natural(1, 16);
        assert_eq!(psnr(&a, &a).unwrap(), 99.0);
        let b = a.map(|v| v + 0.1);
        assert!((psnr(&a, &b).unwrap() - 20.0).abs() < 1e-4);
        let c = natural(2, 16);
        assert_eq!(psnr(&a, &c).unwrap(), psnr(&c, &a).unwrap());
        assert!(psnr(&a, &Image::zeros(3, 4, 4)).is_err());
    }

    #[test]
    fn ssim_identity_and_inversion() {
        let a = natural(3, 32);
        assert_eq!(ssim(&a, &a).unwrap(), 1.0);
        let mut bin = Image::zeros(3, 24, 24);
        for c in 0..3 {
            for y in 0..24 {
                for x in 0..24 {
                    bin.set(c, x, y, ((x / 3 + y / 3) % 2) as f32);
                }
            }
        }
        let inv = bin.map(|v| 1.0 - v);
        assert!(ssim(&bin, &inv).unwrap() < 0.0);
        assert!(ssim(&Image::zeros(3, 8, 8), &Image::zeros(3, 8, 8)).is_err());
    }

    #[test]
    fn ssim_small_constant_shift() {
        for seed in 0..4 {
            let a = natural(seed, 48);
            let b = natural(seed + 100, 48);
            let base = ssim(&a, &b).unwrap();
            let shifted = ssim(&a.map(|v| v + 0.05), &b.map(|v| v + 0.05)).unwrap();
            assert!((base - shifted).abs() < 0.05);
        }
    }

    #[test]
    fn masked_metric_cases() {
        let a = natural(4, 16);
        let full = Image::filled(1, 16, 16, 1.0);
        let b = natural(5, 16);
        assert_eq!(masked_psnr(&a, &b, &full).unwrap(), psnr(&a, &b).unwrap());
        let mut mask = Image::zeros(1, 16, 16);
        let mut c = a.clone();
        for y in 0..16 {
            for x in 0..16 {
                if (4..10).contains(&x) && (3..12).contains(&y) {
                    mask.set(0, x, y, 1.0);
                } else {
                    for ch in 0..3 {
                        c.set(ch, x, y, 0.9);
                    }
                }
            }
        }
        assert_eq!(masked_psnr(&a, &c, &mask).unwrap(), PSNR_CAP_DB);
        assert_eq!(mask_bbox(&mask), Some((4, 3, 6, 9)));
        assert!(matches!(
            masked_psnr(&a, &b, &Image::zeros(1, 16, 16)),
            Err(Error::EmptyMask)
        ));
    }

    #[test]
    fn flicker_cases() {
        let a = natural(6, 8);
        assert_eq!(
            flicker_energy(&[a.clone(), a.clone(), a.clone()]).unwrap(),
            0.0
        );
        let black = Image::zeros(3, 8, 8);
        let white = Image::filled(3, 8, 8, 1.0);
        let v = vec![black.clone(), white.clone(), black, white];
        assert_eq!(flicker_energy(&v).unwrap(), 1.0);
        assert!(flicker_energy(&[a]).is_err());
    }

    #[test]
    fn report_table_and_jsonl() {
        let row = |variant: &str, n, psnr, extra: &[(&str, f64)]| ReportRow {
            variant: variant.into(),
            n,
            psnr,
            ssim: (n > 0).then_some(0.5),
            lpips: None,
            extra: extra.iter().map(|(k, v)| (k.to_string(), *v)).collect(),
        };
        let rep = Report {
            title: "t".into(),
            rows: vec![
                row("lora", 3, 22.5, &[("seed_std", 0.01)]),
                row("empty", 0, f64::NAN, &[]),
            ],
        };
        let lines: Vec<String> = rep.table().lines().map(String::from).collect();
        assert_eq!(lines[0], "t");
        assert_eq!(lines[1], "variant  n  PSNR   SSIM    LPIPS  seed_std");
        assert_eq!(lines[2], "lora     3  22.50  0.5000  -      0.0100");
        assert_eq!(lines[3], "empty    0  -      -       -      -");
        let json = rep.jsonl().unwrap();
        let first: serde_json::Value = serde_json::from_str(json.lines().next().unwrap()).unwrap();
        assert_eq!(first["report"], "t");
        assert_eq!(first["extra"]["seed_std"], 0.01);
        assert!(first["lpips"].is_null());
        assert_eq!(rep.row("lora").unwrap().n, 3);
    }
}
