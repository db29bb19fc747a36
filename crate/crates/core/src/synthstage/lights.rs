//! Light pool: smooth HDRI-like lobe maps mixed with OLATs.

use std::f64::consts::PI;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::envmap::{angles_to_dir, texel_to_dir, EnvironmentMap, Frame, Vec3};
use crate::error::Result;

/// Fraction of the pool made of smooth lobe maps; the rest are OLATs.
pub const HDRI_FRACTION: f64 = 0.7;

/// Total-power ranges in units of π. Powers are drawn log-uniformly so that dim
/// exposures are as common per stop as bright ones.
pub const HDRI_POWER: (f64, f64) = (0.1, 1.4);
pub const OLAT_POWER: (f64, f64) = (0.1, 1.5);

fn log_uniform(rng: &mut ChaCha8Rng, (lo, hi): (f64, f64)) -> f64 {
    rng.random_range(lo.ln()..hi.ln()).exp()
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum LightKind {
    Hdri,
    Olat,
}

fn random_dir(rng: &mut ChaCha8Rng, min_z: f64) -> Vec3 {
    let z: f64 = rng.random_range(min_z..1.0);
    let phi = rng.random_range(0.0..2.0 * PI);
    angles_to_dir(z.acos(), phi)
}

fn random_tint(rng: &mut ChaCha8Rng) -> [f32; 3] {
    let warmth: f32 = rng.random_range(-1.0..1.0);
    let sat: f32 = rng.random_range(0.0..0.35);
    [1.0 + sat * warmth, 1.0, 1.0 - sat * warmth]
}

/// Sum of 3–8 positive lobes `c·exp(κ(d·μ − 1))` plus a weak ambient floor,
/// normalized to a random total power in [`HDRI_POWER`]·π.
pub fn random_hdri(rng: &mut ChaCha8Rng, height: usize) -> Result<EnvironmentMap> {
    let n_lobes = rng.random_range(3..=8);
    let lobes: Vec<(Vec3, f64, [f32; 3], f64)> = (0..n_lobes)
        .map(|i| {
            // the first lobe plays the key light and comes from above the horizon
            let dir = random_dir(rng, if i == 0 { 0.1 } else { -0.6 });
            let kappa = rng.random_range(4.0..40.0);
            let weight = if i == 0 {
                1.0
            } else {
                rng.random_range(0.05..0.6)
            };
            (dir, kappa, random_tint(rng), weight)
        })
        .collect();
    let ambient: f32 = rng.random_range(0.01..0.06);
    let width = 2 * height;
    let mut data = Vec::with_capacity(width * height);
    for v in 0..height {
        for u in 0..width {
            let d = texel_to_dir(u, v, height);
            let mut px = [ambient; 3];
            for (mu, kappa, tint, weight) in &lobes {
                // lobes normalized to unit power so `weight` is a share of the total
                let norm = kappa / (2.0 * PI * (1.0 - (-2.0 * kappa).exp()));
                let w = (weight * norm * (kappa * (d.dot(mu) - 1.0)).exp()) as f32;
                for c in 0..3 {
                    px[c] += w * tint[c];
                }
            }
            data.push(px);
        }
    }
    let map = EnvironmentMap::new(width, height, data, Frame::World)?;
    let p = map.total_power();
    let mean = (p[0] + p[1] + p[2]) / 3.0;
    let target = log_uniform(rng, HDRI_POWER) * PI;
    Ok(map.scaled((target / mean) as f32))
}

/// Small-cone area light from a random direction with total power in [`OLAT_POWER`]·π.
pub fn random_olat(rng: &mut ChaCha8Rng, height: usize) -> Result<EnvironmentMap> {
    let dir = random_dir(rng, -0.5);
    let radius: f64 = rng.random_range(0.12..0.22);
    let power = log_uniform(rng, OLAT_POWER) * PI;
    let tint = random_tint(rng);
    let level = (power / (2.0 * PI * (1.0 - radius.cos()))) as f32;
    EnvironmentMap::make_olat(dir, radius, tint.map(|t| t * level), height)
}

/// Deterministic light pool of `n` maps; each entry is an HDRI-like map with probability 0.7.
pub fn make_light_pool(
    n: usize,
    seed: u64,
    height: usize,
) -> Result<Vec<(LightKind, EnvironmentMap)>> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed ^ 0x6c69_6768_7473);
    (0..n)
        .map(|_| {
            if rng.random_bool(HDRI_FRACTION) {
                Ok((LightKind::Hdri, random_hdri(&mut rng, height)?))
            } else {
                Ok((LightKind::Olat, random_olat(&mut rng, height)?))
            }
        })
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn pool_is_deterministic_and_mixed() {
        let a = make_light_pool(40, 3, 64).unwrap();
        let b = make_light_pool(40, 3, 64).unwrap();
        assert_eq!(a, b);
        let olats = a.iter().filter(|(k, _)| *k == LightKind::Olat).count();
        assert!(olats > 3 && olats < 25, "{olats}");
        for (_, m) in &a {
            let p = m.total_power();
            let mean = (p[0] + p[1] + p[2]) / 3.0;
            assert!(mean > 0.09 * PI && mean < 1.6 * PI, "{mean}");
        }
    }
}
