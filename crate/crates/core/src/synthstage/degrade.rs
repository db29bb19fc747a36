use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};

use crate::error::{Error, Result};
use crate::image::Image;

/// Stand-in for avatar-render artifacts: Gaussian blur with σ = 2·level px, then
/// additive Gaussian noise with σ = 0.05·level, clamped to [0, 1].
pub fn degrade(image: &Image, level: f32, seed: u64) -> Result<Image> {
    if !(0.0..=1.0).contains(&level) {
        return Err(Error::Invalid(format!(
            "degrade level {level} outside [0, 1]"
        )));
    }
    if level == 0.0 {
        return Ok(image.clone());
    }
    let blurred = image.gaussian_blur(2.0 * level);
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let noise = Normal::new(0.0f32, 0.05 * level).map_err(|e| Error::Invalid(e.to_string()))?;
    let mut out = blurred;
    for v in out.data.iter_mut() {
        *v = (*v + noise.sample(&mut rng)).clamp(0.0, 1.0);
    }
    Ok(out)
}
