//! Independent oracles shared by the integration tests.
#![allow(dead_code)]

use nalgebra::DMatrix;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};
use relightkit::diffusion::{
    grad_with_draws, loss_with_draws, Denoiser, LoraAdapter, NoiseDraw, Schedule, TrainItem,
};
use relightkit::image::Image;

pub fn random_image(channels: usize, size: usize, rng: &mut ChaCha8Rng) -> Image {
    let data = (0..channels * size * size)
        .map(|_| rng.random_range(0.0..1.0))
        .collect();
    Image::from_data(channels, size, size, data).unwrap()
}

pub fn random_items(n: usize, size: usize, seed: u64) -> Vec<TrainItem> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    (0..n)
        .map(|_| TrainItem {
            flat: random_image(3, size, &mut rng),
            target: random_image(3, size, &mut rng),
            env: random_image(3, size, &mut rng),
        })
        .collect()
}

/// Add Gaussian noise to every tensor so no gradient is structurally zero.
pub fn jitter(tensors: &mut [Vec<f64>], std: f64, seed: u64) {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let n = Normal::new(0.0, std).unwrap();
    for t in tensors.iter_mut() {
        for v in t.iter_mut() {
            *v += n.sample(&mut rng);
        }
    }
}

pub struct FdReport {
    /// Largest entrywise `|a − n| / max(|a|, |n|, 0.01·rms(n))` over each tensor.
    pub max_entry_rel: f64,
    pub worst: String,
    /// Largest per-tensor `‖a − n‖ / max(‖a‖, ‖n‖)`.
    pub max_group_rel: f64,
    pub checked: usize,
}

const SCALE_FLOOR: f64 = 1e-2;
const ABS_FLOOR: f64 = 1e-12;

fn compare(analytic: &[Vec<f64>], numeric: &[Vec<f64>], names: &[String]) -> FdReport {
    let mut rep = FdReport {
        max_entry_rel: 0.0,
        worst: String::new(),
        max_group_rel: 0.0,
        checked: 0,
    };
    for (k, (a, n)) in analytic.iter().zip(numeric).enumerate() {
        // entries far below the tensor's typical gradient are judged against that scale
        let rms = (n.iter().map(|v| v * v).sum::<f64>() / n.len().max(1) as f64).sqrt();
        let floor = (SCALE_FLOOR * rms).max(ABS_FLOOR);
        let mut diff2 = 0.0;
        let mut a2 = 0.0;
        let mut n2 = 0.0;
        for (i, (x, y)) in a.iter().zip(n).enumerate() {
            let rel = (x - y).abs() / x.abs().max(y.abs()).max(floor);
            if rel > rep.max_entry_rel {
                rep.max_entry_rel = rel;
                rep.worst = format!("{}[{i}]: analytic {x:e}, numeric {y:e}", names[k]);
            }
            diff2 += (x - y).powi(2);
            a2 += x * x;
            n2 += y * y;
            rep.checked += 1;
        }
        let denom = a2.sqrt().max(n2.sqrt());
        if denom > 0.0 {
            rep.max_group_rel = rep.max_group_rel.max(diff2.sqrt() / denom);
        }
    }
    rep
}

/// Central differences of the loss w.r.t. every base parameter.
pub fn fd_check_base(
    net: &Denoiser<f64>,
    items: &[TrainItem],
    draws: &[NoiseDraw],
    schedule: &Schedule,
    h: f64,
) -> FdReport {
    let batch: Vec<&TrainItem> = items.iter().collect();
    let (_, analytic) = grad_with_draws(net, None, &batch, draws, schedule).unwrap();
    let mut probe = net.clone();
    let mut numeric = net.params.zeros_like();
    for k in 0..net.params.len() {
        for i in 0..net.params.tensors[k].len() {
            let w0 = net.params.tensors[k][i];
            probe.params.tensors[k][i] = w0 + h;
            let up = loss_with_draws(&probe, None, &batch, draws, schedule).unwrap();
            probe.params.tensors[k][i] = w0 - h;
            let down = loss_with_draws(&probe, None, &batch, draws, schedule).unwrap();
            probe.params.tensors[k][i] = w0;
            numeric[k][i] = (up - down) / (2.0 * h);
        }
    }
    compare(&analytic, &numeric, &net.params.names)
}

fn factor_mut(a: &mut LoraAdapter<f64>, k: usize) -> &mut Vec<f64> {
    if k.is_multiple_of(2) {
        &mut a.down[k / 2]
    } else {
        &mut a.up[k / 2]
    }
}

/// Central differences w.r.t. every adapter factor entry.
pub fn fd_check_adapter(
    net: &Denoiser<f64>,
    adapter: &LoraAdapter<f64>,
    items: &[TrainItem],
    draws: &[NoiseDraw],
    schedule: &Schedule,
    h: f64,
) -> FdReport {
    let batch: Vec<&TrainItem> = items.iter().collect();
    let (_, analytic) = grad_with_draws(net, Some(adapter), &batch, draws, schedule).unwrap();
    let mut probe = adapter.clone();
    let n_t = analytic.len();
    let mut numeric: Vec<Vec<f64>> = analytic.iter().map(|t| vec![0.0; t.len()]).collect();
    for k in 0..n_t {
        for i in 0..analytic[k].len() {
            let w0 = factor_mut(&mut probe, k)[i];
            factor_mut(&mut probe, k)[i] = w0 + h;
            let up = loss_with_draws(net, Some(&probe), &batch, draws, schedule).unwrap();
            factor_mut(&mut probe, k)[i] = w0 - h;
            let down = loss_with_draws(net, Some(&probe), &batch, draws, schedule).unwrap();
            factor_mut(&mut probe, k)[i] = w0;
            numeric[k][i] = (up - down) / (2.0 * h);
        }
    }
    let names: Vec<String> = (0..n_t)
        .map(|k| format!("lora.{}.{}", k / 2, if k % 2 == 0 { "down" } else { "up" }))
        .collect();
    compare(&analytic, &numeric, &names)
}

/// Best rank-`r` factorization `B·A` of `target` (`rows × cols`) via SVD;
/// returns the Frobenius residual.
pub fn lowrank_fit_residual(target: &[f64], rows: usize, cols: usize, r: usize) -> f64 {
    let m = DMatrix::from_row_slice(rows, cols, target);
    let svd = m.clone().svd(true, true);
    let u = svd.u.unwrap();
    let vt = svd.v_t.unwrap();
    let k = r.min(svd.singular_values.len());
    let b = u.columns(0, k) * DMatrix::from_diagonal(&svd.singular_values.rows(0, k).into_owned());
    let a = vt.rows(0, k).into_owned();
    (m - b * a).norm()
}
