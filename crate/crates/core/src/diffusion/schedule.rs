//! Variance-preserving noise schedule.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

pub const DEFAULT_STEPS: usize = 200;
/// Beta endpoints of the 1000-step reference schedule.
pub const BETA_START: f64 = 1e-4;
pub const BETA_END: f64 = 0.02;
const REFERENCE_STEPS: f64 = 1000.0;

/// Linear-beta schedule; `alpha_bar[0] = 1` is the clean signal.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Schedule {
    pub steps: usize,
    betas: Vec<f64>,
    alpha_bar: Vec<f64>,
}

impl Default for Schedule {
    fn default() -> Self {
        Schedule::scaled_linear(DEFAULT_STEPS)
    }
}

impl Schedule {
    /// Reference linear betas rescaled by `1000 / steps`, so that shorter
    /// schedules still end close to pure noise.
    pub fn scaled_linear(steps: usize) -> Self {
        let k = REFERENCE_STEPS / steps.max(1) as f64;
        Schedule::linear(steps, BETA_START * k, (BETA_END * k).min(0.999)).unwrap()
    }

    pub fn linear(steps: usize, beta_start: f64, beta_end: f64) -> Result<Self> {
        if steps == 0 || !(0.0 < beta_start && beta_start <= beta_end && beta_end < 1.0) {
            return Err(Error::Invalid(format!(
                "bad schedule: {steps} steps, betas {beta_start}..{beta_end}"
            )));
        }
        let betas: Vec<f64> = (0..steps)
            .map(|i| {
                let f = if steps == 1 {
                    0.0
                } else {
                    i as f64 / (steps - 1) as f64
                };
                beta_start + (beta_end - beta_start) * f
            })
            .collect();
        let mut alpha_bar = Vec::with_capacity(steps + 1);
        alpha_bar.push(1.0);
        let mut acc = 1.0;
        for b in &betas {
            acc *= 1.0 - b;
            alpha_bar.push(acc);
        }
        Ok(Schedule {
            steps,
            betas,
            alpha_bar,
        })
    }

    /// `beta_t` for `t` in `1..=steps`.
    pub fn beta(&self, t: usize) -> f64 {
        self.betas[t - 1]
    }

    /// Cumulative signal fraction; `t = 0` gives 1.
    pub fn alpha_bar(&self, t: usize) -> f64 {
        self.alpha_bar[t]
    }

    pub fn check_t(&self, t: usize) -> Result<()> {
        if t > self.steps {
            return Err(Error::Invalid(format!(
                "timestep {t} outside 0..={}",
                self.steps
            )));
        }
        Ok(())
    }

    /// `z_t = √ᾱ_t · x0 + √(1−ᾱ_t) · noise`.
    pub fn forward_diffuse(&self, x0: &[f32], t: usize, noise: &[f32]) -> Result<Vec<f32>> {
        self.check_t(t)?;
        if x0.len() != noise.len() {
            return Err(Error::Shape(format!(
                "signal has {} values, noise {}",
                x0.len(),
                noise.len()
            )));
        }
        let ab = self.alpha_bar(t);
        let (a, b) = (ab.sqrt() as f32, (1.0 - ab).sqrt() as f32);
        Ok(x0.iter().zip(noise).map(|(x, n)| a * x + b * n).collect())
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;
    use rand_distr::{Distribution, StandardNormal};

    #[test]
    fn alpha_bar_monotone_and_final_value() {
        let s = Schedule::default();
        assert_eq!(s.alpha_bar(0), 1.0);
        for t in 1..=s.steps {
            assert!(s.alpha_bar(t) < s.alpha_bar(t - 1));
            assert!(s.alpha_bar(t) > 0.0);
        }
        // direct product of (1 - beta) for the defaults
        let mut prod = 1.0f64;
        for i in 0..200 {
            prod *= 1.0 - (5e-4 + (0.1 - 5e-4) * i as f64 / 199.0);
        }
        assert!((s.alpha_bar(200) - prod).abs() < 1e-15);
        assert!(s.alpha_bar(200) < 1e-3);
    }

    #[test]
    fn t_zero_is_identity_and_range_checked() {
        let s = Schedule::default();
        let x = vec![0.25f32, -0.5, 1.0];
        assert_eq!(s.forward_diffuse(&x, 0, &[9.0, 9.0, 9.0]).unwrap(), x);
        assert!(s.forward_diffuse(&x, 201, &[0.0; 3]).is_err());
    }

    #[test]
    fn sample_moments_match_closed_form() {
        let s = Schedule::default();
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let t = 80;
        let x0 = 0.7f32;
        let n = 10_000;
        let draws: Vec<f64> = (0..n)
            .map(|_| {
                let e: f64 = StandardNormal.sample(&mut rng);
                s.forward_diffuse(&[x0], t, &[e as f32]).unwrap()[0] as f64
            })
            .collect();
        let mean = draws.iter().sum::<f64>() / n as f64;
        let var = draws.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / (n - 1) as f64;
        let ab = s.alpha_bar(t);
        assert!((mean - ab.sqrt() * x0 as f64).abs() < 0.05 * ab.sqrt() * x0 as f64);
        assert!((var - (1.0 - ab)).abs() < 0.05 * (1.0 - ab));
    }

    #[test]
    fn final_step_is_nearly_pure_noise() {
        let s = Schedule::default();
        let mut rng = ChaCha8Rng::seed_from_u64(4);
        let n = 64 * 64;
        let x0: Vec<f32> = (0..n)
            .map(|i| ((i % 64) as f32 / 64.0 - 0.5) * 2.0)
            .collect();
        let noise: Vec<f32> = (0..n)
            .map(|_| StandardNormal.sample(&mut rng))
            .collect::<Vec<f64>>()
            .iter()
            .map(|v| *v as f32)
            .collect();
        let z = s.forward_diffuse(&x0, s.steps, &noise).unwrap();
        let corr = pearson(&x0, &z);
        assert!(corr.abs() < 0.1, "correlation {corr}");
    }

    fn pearson(a: &[f32], b: &[f32]) -> f64 {
        let n = a.len() as f64;
        let ma = a.iter().map(|v| *v as f64).sum::<f64>() / n;
        let mb = b.iter().map(|v| *v as f64).sum::<f64>() / n;
        let mut sab = 0.0;
        let mut saa = 0.0;
        let mut sbb = 0.0;
        for (x, y) in a.iter().zip(b) {
            let (dx, dy) = (*x as f64 - ma, *y as f64 - mb);
            sab += dx * dy;
            saa += dx * dx;
            sbb += dy * dy;
        }
        sab / (saa * sbb).sqrt()
    }
}
