//! Clean-target regression loss and its gradient.

use std::borrow::Cow;

use rand::Rng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};

use super::cond::ConditioningStack;
use super::lora::{merge_lora, LoraAdapter};
use super::net::Denoiser;
use super::real::Real;
use super::schedule::Schedule;
use crate::error::{Error, Result};
use crate::image::Image;
use crate::parallel::par_map;

/// One supervised example: flat-lit input, relit target and environment conditioning.
#[derive(Clone, Debug, PartialEq)]
pub struct TrainItem {
    pub flat: Image,
    pub target: Image,
    pub env: Image,
}

impl TrainItem {
    pub fn validate(&self) -> Result<()> {
        self.flat.check_shape(&self.target)?;
        self.flat.check_shape(&self.env)?;
        if self.flat.channels != 3 {
            return Err(Error::Shape("training images must be RGB".into()));
        }
        Ok(())
    }
}

/// Timestep and noise drawn for one batch item.
#[derive(Clone, Debug, PartialEq)]
pub struct NoiseDraw {
    pub t: usize,
    pub noise: Vec<f32>,
}

/// Draw `t ~ U{1..T}` then a standard normal field per item, in batch order.
pub fn draw_noise(
    rng: &mut ChaCha8Rng,
    schedule: &Schedule,
    batch: &[&TrainItem],
) -> Vec<NoiseDraw> {
    batch
        .iter()
        .map(|item| {
            let t = rng.random_range(1..=schedule.steps);
            let noise = (0..item.target.data.len())
                .map(|_| {
                    let v: f64 = StandardNormal.sample(rng);
                    v as f32
                })
                .collect();
            NoiseDraw { t, noise }
        })
        .collect()
}

pub fn noisy_stack(
    item: &TrainItem,
    draw: &NoiseDraw,
    schedule: &Schedule,
) -> Result<ConditioningStack> {
    let z = schedule.forward_diffuse(&item.target.data, draw.t, &draw.noise)?;
    ConditioningStack::build(&z, &item.flat, &item.env)
}

fn effective<'a, T: Real>(
    net: &'a Denoiser<T>,
    adapter: Option<&LoraAdapter<T>>,
) -> Result<Cow<'a, Denoiser<T>>> {
    match adapter {
        Some(a) => Ok(Cow::Owned(merge_lora(net, a)?)),
        None => Ok(Cow::Borrowed(net)),
    }
}

fn check_batch(batch: &[&TrainItem]) -> Result<()> {
    if batch.is_empty() {
        return Err(Error::Invalid("empty batch".into()));
    }
    batch.iter().try_for_each(|b| b.validate())
}

fn to_real<T: Real>(v: &[f32]) -> Vec<T> {
    v.iter().map(|x| T::lit(*x as f64)).collect()
}

/// Sum of squared errors for one item, and optionally its parameter gradient
/// scaled by `2 / norm`.
fn item_terms<T: Real>(
    net: &Denoiser<T>,
    item: &TrainItem,
    draw: &NoiseDraw,
    schedule: &Schedule,
    norm: f64,
    with_grad: bool,
) -> Result<(f64, Option<Vec<Vec<T>>>)> {
    let stack = noisy_stack(item, draw, schedule)?;
    let input = to_real::<T>(&stack.data);
    let (h, w) = (stack.height, stack.width);
    let t = draw.t as f64;
    if !with_grad {
        let out = net.predict(&input, h, w, t)?;
        let sse = out
            .iter()
            .zip(&item.target.data)
            .map(|(p, y)| (p.f64() - *y as f64).powi(2))
            .sum();
        return Ok((sse, None));
    }
    let (out, cache) = net.forward_cached(&input, h, w, t)?;
    let k = T::lit(2.0 / norm);
    let mut sse = 0.0;
    let dout: Vec<T> = out
        .iter()
        .zip(&item.target.data)
        .map(|(p, y)| {
            let d = *p - T::lit(*y as f64);
            sse += d.f64() * d.f64();
            d * k
        })
        .collect();
    let mut grads = net.params.zeros_like();
    net.backward(&cache, &dout, &mut grads);
    Ok((sse, Some(grads)))
}

/// Loss for pre-drawn noise: mean squared error over batch items and pixels.
pub fn loss_with_draws<T: Real>(
    net: &Denoiser<T>,
    adapter: Option<&LoraAdapter<T>>,
    batch: &[&TrainItem],
    draws: &[NoiseDraw],
    schedule: &Schedule,
) -> Result<f64> {
    check_batch(batch)?;
    let eff = effective(net, adapter)?;
    let norm = (batch.len() * batch[0].target.data.len()) as f64;
    let terms = par_map(batch.len(), |i| {
        item_terms(&eff, batch[i], &draws[i], schedule, norm, false)
    });
    let mut sse = 0.0;
    for t in terms {
        sse += t?.0;
    }
    Ok(sse / norm)
}

/// Loss and gradient for pre-drawn noise. With an adapter, only the adapter factors
/// receive gradients (interleaved down/up per layer); otherwise every base tensor does.
pub fn grad_with_draws<T: Real>(
    net: &Denoiser<T>,
    adapter: Option<&LoraAdapter<T>>,
    batch: &[&TrainItem],
    draws: &[NoiseDraw],
    schedule: &Schedule,
) -> Result<(f64, Vec<Vec<T>>)> {
    check_batch(batch)?;
    if draws.len() != batch.len() {
        return Err(Error::Shape(
            "one noise draw per batch item is required".into(),
        ));
    }
    let eff = effective(net, adapter)?;
    let norm = (batch.len() * batch[0].target.data.len()) as f64;
    let terms = par_map(batch.len(), |i| {
        item_terms(&eff, batch[i], &draws[i], schedule, norm, true)
    });
    let mut sse = 0.0;
    let mut total = net.params.zeros_like();
    for term in terms {
        let (s, g) = term?;
        sse += s;
        for (acc, g) in total.iter_mut().zip(g.unwrap()) {
            acc.iter_mut().zip(g).for_each(|(a, b)| *a = *a + b);
        }
    }
    let grads = match adapter {
        Some(a) => a.factor_grads(&total),
        None => total,
    };
    Ok((sse / norm, grads))
}

/// Anything that maps a conditioning stack and timestep to a clean-target estimate.
pub trait X0Predictor: Sync {
    fn predict_x0(&self, stack: &ConditioningStack, t: usize) -> Result<Vec<f32>>;
}

impl X0Predictor for Denoiser<f32> {
    fn predict_x0(&self, stack: &ConditioningStack, t: usize) -> Result<Vec<f32>> {
        self.predict(&stack.data, stack.height, stack.width, t as f64)
    }
}

/// Loss of an arbitrary predictor for pre-drawn noise.
pub fn predictor_loss(
    predictor: &dyn X0Predictor,
    batch: &[&TrainItem],
    draws: &[NoiseDraw],
    schedule: &Schedule,
) -> Result<f64> {
    check_batch(batch)?;
    let mut sse = 0.0;
    for (item, draw) in batch.iter().zip(draws) {
        let pred = predictor.predict_x0(&noisy_stack(item, draw, schedule)?, draw.t)?;
        sse += pred
            .iter()
            .zip(&item.target.data)
            .map(|(p, y)| ((p - y) as f64).powi(2))
            .sum::<f64>();
    }
    Ok(sse / (batch.len() * batch[0].target.data.len()) as f64)
}

pub fn loss<T: Real>(
    net: &Denoiser<T>,
    adapter: Option<&LoraAdapter<T>>,
    batch: &[&TrainItem],
    schedule: &Schedule,
    rng: &mut ChaCha8Rng,
) -> Result<f64> {
    let draws = draw_noise(rng, schedule, batch);
    loss_with_draws(net, adapter, batch, &draws, schedule)
}

/// Same draws as [`loss`] for the same rng state.
pub fn grad<T: Real>(
    net: &Denoiser<T>,
    adapter: Option<&LoraAdapter<T>>,
    batch: &[&TrainItem],
    schedule: &Schedule,
    rng: &mut ChaCha8Rng,
) -> Result<(f64, Vec<Vec<T>>)> {
    let draws = draw_noise(rng, schedule, batch);
    grad_with_draws(net, adapter, batch, &draws, schedule)
}
