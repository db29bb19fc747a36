//! Low-rank adapters on every convolution kernel.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};

use super::net::{ConvRef, Denoiser, ParamSet};
use super::real::{matmul, Real};
use crate::error::{Error, Result};

pub const DEFAULT_RANK: usize = 8;
pub const DEFAULT_ALPHA: f64 = 16.0;
pub const DOWN_INIT_STD: f64 = 0.01;

/// Per-convolution factors: `down` is `rank × fan_in`, `up` is `fan_out × rank`.
#[derive(Clone, Debug, PartialEq)]
pub struct LoraAdapter<T> {
    pub rank: usize,
    pub alpha: f64,
    pub layers: Vec<ConvRef>,
    pub down: Vec<Vec<T>>,
    pub up: Vec<Vec<T>>,
}

impl<T: Real> LoraAdapter<T> {
    /// Gaussian `down`, zero `up`: the adapted model starts equal to the base.
    pub fn new(net: &Denoiser<T>, rank: usize, alpha: f64, seed: u64) -> Result<Self> {
        if rank == 0 || !(alpha > 0.0) {
            return Err(Error::Invalid(format!(
                "lora rank {rank} and alpha {alpha} must be positive"
            )));
        }
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let normal = Normal::new(0.0, DOWN_INIT_STD).unwrap();
        let layers = net.layout.convs.clone();
        let down = layers
            .iter()
            .map(|c| {
                (0..rank * c.fan_in())
                    .map(|_| T::lit(normal.sample(&mut rng)))
                    .collect()
            })
            .collect();
        let up = layers
            .iter()
            .map(|c| vec![T::zero(); c.cout * rank])
            .collect();
        Ok(LoraAdapter {
            rank,
            alpha,
            layers,
            down,
            up,
        })
    }

    pub fn scale(&self) -> f64 {
        self.alpha / self.rank as f64
    }

    /// Check factor shapes against a network's convolutions.
    pub fn check(&self, net: &Denoiser<T>) -> Result<()> {
        let convs = &net.layout.convs;
        let consistent = self.layers.len() == convs.len()
            && self.down.len() == convs.len()
            && self.up.len() == convs.len()
            && convs.iter().enumerate().all(|(i, c)| {
                let l = &self.layers[i];
                l.weight == c.weight
                    && l.fan_in() == c.fan_in()
                    && l.cout == c.cout
                    && self.down[i].len() == self.rank * c.fan_in()
                    && self.up[i].len() == c.cout * self.rank
            });
        if consistent {
            Ok(())
        } else {
            Err(Error::Shape(format!(
                "rank mismatch: adapter of rank {} does not fit this network",
                self.rank
            )))
        }
    }

    /// `(α/r)·B·A` for layer `i`, shaped like the kernel.
    pub fn delta(&self, i: usize) -> Vec<T> {
        let c = &self.layers[i];
        let mut d = vec![T::zero(); c.cout * c.fan_in()];
        matmul(
            c.cout,
            self.rank,
            c.fan_in(),
            &self.up[i],
            &self.down[i],
            T::zero(),
            &mut d,
        );
        let s = T::lit(self.scale());
        d.iter_mut().for_each(|v| *v = *v * s);
        d
    }

    /// Parameters with every adapted kernel replaced by `W + (α/r)·B·A`.
    pub fn effective(&self, params: &ParamSet<T>) -> ParamSet<T> {
        let mut out = params.clone();
        for (i, c) in self.layers.iter().enumerate() {
            let d = self.delta(i);
            out.tensors[c.weight]
                .iter_mut()
                .zip(&d)
                .for_each(|(w, x)| *w = *w + *x);
        }
        out
    }

    /// Chain kernel gradients into factor gradients, returned as `[dA₀, dB₀, dA₁, dB₁, …]`.
    pub fn factor_grads(&self, kernel_grads: &[Vec<T>]) -> Vec<Vec<T>> {
        let s = T::lit(self.scale());
        let r = self.rank;
        let mut out = Vec::with_capacity(2 * self.layers.len());
        for (i, c) in self.layers.iter().enumerate() {
            let (fo, fi) = (c.cout, c.fan_in());
            let dw = &kernel_grads[c.weight];
            // dA = s·Bᵀ·dW  (r × fi)
            let mut da = vec![T::zero(); r * fi];
            T::gemm(
                r,
                fo,
                fi,
                s,
                &self.up[i],
                1,
                r as isize,
                dw,
                fi as isize,
                1,
                T::zero(),
                &mut da,
                fi as isize,
                1,
            );
            // dB = s·dW·Aᵀ  (fo × r)
            let mut db = vec![T::zero(); fo * r];
            T::gemm(
                fo,
                fi,
                r,
                s,
                dw,
                fi as isize,
                1,
                &self.down[i],
                1,
                fi as isize,
                T::zero(),
                &mut db,
                r as isize,
                1,
            );
            out.push(da);
            out.push(db);
        }
        out
    }

    /// Factors in the same interleaved order as [`LoraAdapter::factor_grads`].
    pub fn tensors_mut(&mut self) -> Vec<&mut Vec<T>> {
        self.down
            .iter_mut()
            .zip(self.up.iter_mut())
            .flat_map(|(a, b)| [a, b])
            .collect()
    }

    pub fn tensors(&self) -> Vec<&Vec<T>> {
        self.down
            .iter()
            .zip(self.up.iter())
            .flat_map(|(a, b)| [a, b])
            .collect()
    }
}

/// Fold the adapter into the base kernels.
pub fn merge_lora<T: Real>(net: &Denoiser<T>, adapter: &LoraAdapter<T>) -> Result<Denoiser<T>> {
    adapter.check(net)?;
    Ok(Denoiser {
        config: net.config.clone(),
        layout: net.layout.clone(),
        params: adapter.effective(&net.params),
    })
}
