//! Training configuration and the optimization loop.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::adam::{AdamConfig, AdamState};
use super::lora::{merge_lora, LoraAdapter, DEFAULT_ALPHA, DEFAULT_RANK};
use super::net::{Denoiser, NetConfig};
use super::objective::{grad, TrainItem};
use super::schedule::{Schedule, DEFAULT_STEPS};
use crate::datapipe::BackgroundMode;
use crate::error::{Error, Result};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize, clap::ValueEnum)]
#[serde(rename_all = "lowercase")]
pub enum TrainMode {
    /// Random init, all weights, many subjects.
    Pretrain,
    /// Frozen base plus low-rank adapters.
    Lora,
    /// All weights, initialized from the base.
    Full,
    /// All weights, random init.
    Scratch,
    /// No training: evaluate the base as is.
    None,
}

impl TrainMode {
    pub fn as_str(self) -> &'static str {
        match self {
            TrainMode::Pretrain => "pretrain",
            TrainMode::Lora => "lora",
            TrainMode::Full => "full",
            TrainMode::Scratch => "scratch",
            TrainMode::None => "none",
        }
    }

    pub fn needs_base(self) -> bool {
        matches!(self, TrainMode::Lora | TrainMode::Full | TrainMode::None)
    }
}

/// Which frames feed the flat-lit slot.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize, clap::ValueEnum)]
#[serde(rename_all = "lowercase")]
pub enum InputSource {
    Flat,
    /// Blurred and noised flat frames, standing in for a lower-quality avatar.
    Degraded,
}

pub const PRETRAIN_LR: f64 = 3e-4;
pub const ADAPT_LR: f64 = 1e-4;
pub const DEFAULT_BATCH: usize = 8;
pub const DEFAULT_DEGRADE_LEVEL: f32 = 0.5;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct TrainConfig {
    pub mode: TrainMode,
    pub batch_size: usize,
    pub steps: u64,
    pub lr: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
    pub seed: u64,
    pub input_source: InputSource,
    pub degrade_level: f32,
    pub background: BackgroundMode,
    /// Checkpoint period in steps; 0 disables periodic checkpoints.
    pub checkpoint_every: u64,
    pub lora_rank: usize,
    pub lora_alpha: f64,
    pub net: NetConfig,
    pub schedule_steps: usize,
}

impl TrainConfig {
    pub fn new(mode: TrainMode) -> Self {
        TrainConfig {
            mode,
            batch_size: DEFAULT_BATCH,
            steps: 1000,
            lr: if mode == TrainMode::Pretrain {
                PRETRAIN_LR
            } else {
                ADAPT_LR
            },
            beta1: 0.9,
            beta2: 0.999,
            eps: 1e-8,
            seed: 0,
            input_source: InputSource::Flat,
            degrade_level: DEFAULT_DEGRADE_LEVEL,
            background: BackgroundMode::Keep,
            checkpoint_every: 0,
            lora_rank: DEFAULT_RANK,
            lora_alpha: DEFAULT_ALPHA,
            net: NetConfig::default(),
            schedule_steps: DEFAULT_STEPS,
        }
    }

    pub fn validate(&self) -> Result<()> {
        let ok = self.batch_size > 0
            && self.lr > 0.0
            && self.lr.is_finite()
            && (0.0..1.0).contains(&self.beta1)
            && (0.0..1.0).contains(&self.beta2)
            && self.eps > 0.0
            && self.lora_rank > 0
            && self.lora_alpha > 0.0
            && self.schedule_steps > 0
            && (0.0..=1.0).contains(&self.degrade_level);
        if !ok {
            return Err(Error::Invalid(format!(
                "invalid training configuration: {self:?}"
            )));
        }
        self.net.validate()
    }

    pub fn adam(&self) -> AdamConfig {
        AdamConfig {
            lr: self.lr,
            beta1: self.beta1,
            beta2: self.beta2,
            eps: self.eps,
        }
    }

    pub fn schedule(&self) -> Schedule {
        Schedule::scaled_linear(self.schedule_steps)
    }
}

// Independent seed streams derived from the configured seed.
const INIT_SALT: u64 = 0x1a2b_3c4d;
const ADAPTER_SALT: u64 = 0x5e6f_7081;
const LOOP_SALT: u64 = 0x9a0b_1c2d;

/// Mutable training state; everything needed to resume lives in a checkpoint.
#[derive(Clone, Debug)]
pub struct Trainer {
    pub config: TrainConfig,
    pub net: Denoiser<f32>,
    pub adapter: Option<LoraAdapter<f32>>,
    pub adam: AdamState<f32>,
    pub rng: ChaCha8Rng,
    pub step: u64,
    pub losses: Vec<f64>,
}

impl Trainer {
    pub fn new(config: TrainConfig, base: Option<&Denoiser<f32>>) -> Result<Self> {
        config.validate()?;
        let base = match (config.mode.needs_base(), base) {
            (true, None) => {
                return Err(Error::Invalid(format!(
                    "mode {} needs a base checkpoint",
                    config.mode.as_str()
                )))
            }
            (true, Some(b)) => Some(b),
            (false, _) => None,
        };
        let net = match base {
            Some(b) => b.clone(),
            None => Denoiser::init(&config.net, config.seed ^ INIT_SALT)?,
        };
        let adapter = match config.mode {
            TrainMode::Lora => Some(LoraAdapter::new(
                &net,
                config.lora_rank,
                config.lora_alpha,
                config.seed ^ ADAPTER_SALT,
            )?),
            _ => None,
        };
        let adam = match &adapter {
            Some(a) => AdamState::new(a.tensors().iter().map(|t| t.len())),
            None => AdamState::new(net.params.tensors.iter().map(Vec::len)),
        };
        Ok(Trainer {
            rng: ChaCha8Rng::seed_from_u64(config.seed ^ LOOP_SALT),
            config,
            net,
            adapter,
            adam,
            step: 0,
            losses: Vec::new(),
        })
    }

    pub fn schedule(&self) -> Schedule {
        self.config.schedule()
    }

    /// One optimizer step on a uniformly sampled batch; returns the batch loss.
    pub fn train_step(&mut self, data: &[TrainItem]) -> Result<f64> {
        if data.is_empty() {
            return Err(Error::Invalid("empty training set".into()));
        }
        if self.config.mode == TrainMode::None {
            return Err(Error::Invalid("mode none does not train".into()));
        }
        let schedule = self.schedule();
        let picks: Vec<usize> = (0..self.config.batch_size)
            .map(|_| self.rng.random_range(0..data.len()))
            .collect();
        let batch: Vec<&TrainItem> = picks.iter().map(|i| &data[*i]).collect();
        let (loss, grads) = grad(
            &self.net,
            self.adapter.as_ref(),
            &batch,
            &schedule,
            &mut self.rng,
        )?;
        if !loss.is_finite() || grads.iter().flatten().any(|g| !g.is_finite()) {
            return Err(Error::Numeric(format!(
                "non-finite loss or gradient at step {} (loss {loss})",
                self.step + 1
            )));
        }
        let cfg = self.config.adam();
        match &mut self.adapter {
            Some(a) => self.adam.update(&mut a.tensors_mut(), &grads, &cfg)?,
            None => self.adam.update(
                &mut self.net.params.tensors.iter_mut().collect::<Vec<_>>(),
                &grads,
                &cfg,
            )?,
        }
        self.step += 1;
        self.losses.push(loss);
        Ok(loss)
    }

    /// Train until `config.steps`, calling `on_checkpoint` every `checkpoint_every` steps.
    pub fn run(
        &mut self,
        data: &[TrainItem],
        mut on_checkpoint: impl FnMut(&Trainer) -> Result<()>,
    ) -> Result<()> {
        if self.config.mode == TrainMode::None {
            return Ok(());
        }
        while self.step < self.config.steps {
            self.train_step(data)?;
            let every = self.config.checkpoint_every;
            if every > 0 && self.step.is_multiple_of(every) {
                on_checkpoint(self)?;
            }
        }
        Ok(())
    }

    /// The network used for inference, with any adapter folded in.
    pub fn model(&self) -> Result<Denoiser<f32>> {
        match &self.adapter {
            Some(a) => merge_lora(&self.net, a),
            None => Ok(self.net.clone()),
        }
    }
}
