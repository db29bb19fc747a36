//! End-to-end experiment matrices: prior/adaptation, input enhancement, background masks
//! and capture misalignment.

use std::collections::BTreeMap;

use serde::{Deserialize, Serialize};

use super::data::{make_items, prior_corpus, ItemOptions, PriorConfig};
use super::eval::{predict_pairs, score_pairs, EvalSummary};
use crate::datapipe::{
    mask_background, split_dataset, BackgroundMode, FRAME_FRAC, LIGHT_HOLDOUT_FRAC, SPLIT_SEED,
};
use crate::diffusion::{
    Denoiser, InputSource, NetConfig, TrainConfig, TrainItem, TrainMode, Trainer,
};
use crate::error::{Error, Result};
use crate::image::Image;
use crate::infer::{consistency_report, DdimConfig, FrameInput};
use crate::metrics::{Report, ReportRow};
use crate::synthstage::{mask_centroid, synth_capture, CaptureConfig, CaptureSet};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize, clap::ValueEnum)]
#[serde(rename_all = "lowercase")]
pub enum Ablation {
    /// Zero-shot prior vs full fine-tuning vs scratch vs LoRA.
    Prior,
    /// Clean flat input vs degraded input.
    Enhance,
    /// Background kept vs removed during training.
    Masks,
    /// Aligned vs shifted relit frames.
    Misalign,
}

impl Ablation {
    pub fn as_str(self) -> &'static str {
        match self {
            Ablation::Prior => "prior",
            Ablation::Enhance => "enhance",
            Ablation::Masks => "masks",
            Ablation::Misalign => "misalign",
        }
    }
}

/// Pixels whose brightest channel exceeds this count as subject in a background-free output.
pub const OUTPUT_MASK_THRESHOLD: f32 = 0.05;

/// Sizes and budgets shared by every experiment matrix.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct AblationScale {
    pub image_size: usize,
    pub subject_id: u64,
    pub subject_complexity: u8,
    pub subject_pairs: usize,
    pub n_cameras: usize,
    pub n_lights: usize,
    pub prior_subjects: usize,
    pub prior_pairs_per_subject: usize,
    pub pretrain_steps: u64,
    pub pretrain_lr: f64,
    /// Steps for every single-subject run (adaptation and from-scratch alike).
    pub adapt_steps: u64,
    pub adapt_lr: f64,
    pub batch_size: usize,
    pub seeds: Vec<u64>,
    /// Test pairs scored per run.
    pub eval_pairs: usize,
    pub ddim_steps: usize,
    /// Sampling seeds per frame for the cross-seed spread.
    pub consistency_seeds: usize,
    pub consistency_frames: usize,
    pub misalign_px: f64,
    pub net: NetConfig,
}

impl Default for AblationScale {
    fn default() -> Self {
        AblationScale {
            image_size: 32,
            subject_id: 7,
            subject_complexity: 2,
            subject_pairs: 128,
            n_cameras: 4,
            n_lights: 100,
            prior_subjects: 64,
            prior_pairs_per_subject: 8,
            pretrain_steps: 1500,
            pretrain_lr: 3e-4,
            adapt_steps: 1000,
            adapt_lr: 3e-4,
            batch_size: 8,
            seeds: vec![0, 1, 2],
            eval_pairs: 24,
            ddim_steps: crate::infer::DEFAULT_DDIM_STEPS,
            consistency_seeds: 4,
            consistency_frames: 8,
            misalign_px: 8.0,
            net: NetConfig::default(),
        }
    }
}

impl AblationScale {
    pub fn validate(&self) -> Result<()> {
        let ok = self.image_size >= 8
            && self.image_size.is_multiple_of(4)
            && self.subject_pairs >= 4
            && self.n_cameras > 0
            && self.n_lights >= 2
            && self.prior_subjects > 0
            && self.prior_pairs_per_subject > 0
            && self.batch_size > 0
            && !self.seeds.is_empty()
            && self.eval_pairs > 0
            && self.ddim_steps > 0
            && self.consistency_seeds >= 2
            && self.consistency_frames > 0
            && self.misalign_px >= 0.0;
        if !ok {
            return Err(Error::Invalid(format!("invalid ablation scale: {self:?}")));
        }
        self.net.validate()
    }

    pub fn subject_capture(&self, misalign_px: f64) -> CaptureConfig {
        CaptureConfig {
            subject_id: self.subject_id,
            complexity: self.subject_complexity,
            n_pairs: self.subject_pairs,
            n_cameras: self.n_cameras,
            image_size: self.image_size,
            n_lights: self.n_lights,
            misalignment_px: misalign_px,
            ..CaptureConfig::default()
        }
    }

    pub fn prior(&self) -> PriorConfig {
        PriorConfig {
            n_subjects: self.prior_subjects,
            pairs_per_subject: self.prior_pairs_per_subject,
            n_cameras: self.n_cameras,
            image_size: self.image_size,
            n_lights: self.n_lights,
            ..PriorConfig::default()
        }
    }

    fn train_config(&self, mode: TrainMode, seed: u64, opts: &ItemOptions) -> TrainConfig {
        let mut c = TrainConfig::new(mode);
        c.batch_size = self.batch_size;
        c.seed = seed;
        c.net = self.net.clone();
        c.input_source = opts.input_source;
        c.background = opts.background;
        if mode == TrainMode::Pretrain {
            c.steps = self.pretrain_steps;
            c.lr = self.pretrain_lr;
        } else {
            c.steps = self.adapt_steps;
            c.lr = self.adapt_lr;
        }
        c
    }
}

/// One (variant, seed) evaluation plus any experiment-specific measurements.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct RunRecord {
    pub variant: String,
    pub seed: u64,
    pub summary: EvalSummary,
    #[serde(default)]
    pub extra: BTreeMap<String, f64>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct AblationOutcome {
    pub ablation: Ablation,
    pub scale: AblationScale,
    pub runs: Vec<RunRecord>,
    /// Medians over seeds, one row per variant in matrix order.
    pub report: Report,
}

impl AblationOutcome {
    pub fn median_psnr(&self, variant: &str) -> Option<f64> {
        self.report.row(variant).map(|r| r.psnr)
    }

    pub fn median_extra(&self, variant: &str, key: &str) -> Option<f64> {
        self.report
            .row(variant)
            .and_then(|r| r.extra.get(key).copied())
    }
}

/// Median of a nonempty list (mean of the middle two for even lengths).
pub fn median(values: &[f64]) -> f64 {
    let mut v = values.to_vec();
    v.sort_by(f64::total_cmp);
    let n = v.len();
    if n == 0 {
        return f64::NAN;
    }
    if n % 2 == 1 {
        v[n / 2]
    } else {
        0.5 * (v[n / 2 - 1] + v[n / 2])
    }
}

fn summarize(title: &str, variants: &[&str], runs: &[RunRecord]) -> Report {
    let rows = variants
        .iter()
        .map(|&name| {
            let mine: Vec<&RunRecord> = runs.iter().filter(|r| r.variant == name).collect();
            let psnr = median(&mine.iter().map(|r| r.summary.mean_psnr).collect::<Vec<_>>());
            let ssims: Vec<f64> = mine.iter().filter_map(|r| r.summary.mean_ssim).collect();
            let mut extra = BTreeMap::new();
            for key in mine
                .iter()
                .flat_map(|r| r.extra.keys())
                .collect::<std::collections::BTreeSet<_>>()
            {
                let vals: Vec<f64> = mine
                    .iter()
                    .filter_map(|r| r.extra.get(key).copied())
                    .collect();
                extra.insert(key.clone(), median(&vals));
            }
            ReportRow {
                variant: name.to_string(),
                n: mine.first().map_or(0, |r| r.summary.n),
                psnr,
                ssim: (!ssims.is_empty()).then(|| median(&ssims)),
                lpips: None,
                extra,
            }
        })
        .collect();
    Report {
        title: title.to_string(),
        rows,
    }
}

/// A subject capture with its training items and evenly spaced test pairs.
pub struct SubjectData {
    pub capture: CaptureSet,
    pub train: Vec<TrainItem>,
    pub test: Vec<usize>,
}

/// Every `k`-th test pair so that at most `n` remain.
pub fn spread(indices: &[usize], n: usize) -> Vec<usize> {
    if indices.len() <= n {
        return indices.to_vec();
    }
    (0..n).map(|i| indices[i * indices.len() / n]).collect()
}

pub fn subject_data(
    scale: &AblationScale,
    misalign_px: f64,
    opts: &ItemOptions,
) -> Result<SubjectData> {
    let capture = synth_capture(&scale.subject_capture(misalign_px))?;
    let split = split_dataset(&capture, LIGHT_HOLDOUT_FRAC, FRAME_FRAC, &[], SPLIT_SEED)?;
    let train = make_items(&capture, &split.train_pairs, opts)?;
    let test = spread(&split.test_pairs, scale.eval_pairs);
    Ok(SubjectData {
        capture,
        train,
        test,
    })
}

pub fn train_model(
    config: TrainConfig,
    base: Option<&Denoiser<f32>>,
    data: &[TrainItem],
) -> Result<Denoiser<f32>> {
    let mut trainer = Trainer::new(config, base)?;
    trainer.run(data, |_| Ok(()))?;
    trainer.model()
}

/// Pretrain a prior on the many-subject corpus.
pub fn pretrain_prior(scale: &AblationScale, opts: &ItemOptions) -> Result<Denoiser<f32>> {
    let corpus = prior_corpus(&scale.prior(), opts)?;
    train_model(
        scale.train_config(TrainMode::Pretrain, 0, opts),
        None,
        &corpus,
    )
}

fn ddim(scale: &AblationScale, seed: u64) -> DdimConfig {
    DdimConfig {
        steps: scale.ddim_steps,
        eta: 0.0,
        seed,
    }
}

/// Mean cross-seed pixel std over the first test frames, inside the relit mask.
pub fn seed_spread(
    model: &Denoiser<f32>,
    scale: &AblationScale,
    data: &SubjectData,
    opts: &ItemOptions,
) -> Result<f64> {
    let schedule = crate::diffusion::Schedule::default();
    let seeds: Vec<u64> = (0..scale.consistency_seeds as u64)
        .map(|s| 1000 + s)
        .collect();
    let frames = &data.test[..scale.consistency_frames.min(data.test.len())];
    let mut total = 0.0;
    for &idx in frames {
        let pair = &data.capture.pairs[idx];
        let item = super::data::pair_item(&data.capture, pair, opts)?;
        let input = FrameInput {
            flat: item.flat,
            env: item.env,
        };
        let rep = consistency_report(
            model,
            &schedule,
            &input,
            &seeds,
            scale.ddim_steps,
            Some(&pair.relit_mask),
        )?;
        total += rep.mean_std;
    }
    Ok(total / frames.len() as f64)
}

fn evaluate_on(
    model: &Denoiser<f32>,
    scale: &AblationScale,
    data: &SubjectData,
    opts: &ItemOptions,
    seed: u64,
) -> Result<(EvalSummary, Vec<Image>)> {
    let schedule = crate::diffusion::Schedule::default();
    let preds = predict_pairs(
        model,
        &schedule,
        &data.capture,
        &data.test,
        opts,
        &ddim(scale, seed),
    )?;
    Ok((score_pairs(&data.capture, &data.test, &preds, opts)?, preds))
}

/// Variants in the order the prior matrix reports them.
pub const PRIOR_VARIANTS: [&str; 4] = ["none", "full", "scratch", "lora"];

/// Key of the cross-seed spread column.
pub const SEED_STD: &str = "seed_std";

/// Adapt a pretrained prior to an unseen subject under matched budgets.
pub fn run_prior(scale: &AblationScale, log: &mut dyn FnMut(&str)) -> Result<AblationOutcome> {
    scale.validate()?;
    let opts = ItemOptions::default();
    log("pretraining prior");
    let prior = pretrain_prior(scale, &opts)?;
    let data = subject_data(scale, 0.0, &opts)?;
    let mut runs = Vec::new();
    for &seed in &scale.seeds {
        for variant in PRIOR_VARIANTS {
            log(&format!("{variant} seed {seed}"));
            let model = match variant {
                "none" => prior.clone(),
                "full" => train_model(
                    scale.train_config(TrainMode::Full, seed, &opts),
                    Some(&prior),
                    &data.train,
                )?,
                "scratch" => train_model(
                    scale.train_config(TrainMode::Scratch, seed, &opts),
                    None,
                    &data.train,
                )?,
                _ => train_model(
                    scale.train_config(TrainMode::Lora, seed, &opts),
                    Some(&prior),
                    &data.train,
                )?,
            };
            let (summary, _) = evaluate_on(&model, scale, &data, &opts, seed)?;
            let mut extra = BTreeMap::new();
            if matches!(variant, "none" | "lora") {
                extra.insert(
                    SEED_STD.to_string(),
                    seed_spread(&model, scale, &data, &opts)?,
                );
            }
            runs.push(RunRecord {
                variant: variant.to_string(),
                seed,
                summary,
                extra,
            });
        }
    }
    Ok(AblationOutcome {
        ablation: Ablation::Prior,
        report: summarize(
            "prior: adaptation of a many-subject prior",
            &PRIOR_VARIANTS,
            &runs,
        ),
        scale: scale.clone(),
        runs,
    })
}

/// Train from scratch on the subject under each option set and score each on its own inputs.
fn run_pairwise(
    scale: &AblationScale,
    ablation: Ablation,
    title: &str,
    variants: &[(&str, ItemOptions, f64)],
    log: &mut dyn FnMut(&str),
    mut measure: impl FnMut(&SubjectData, &[Image], &mut BTreeMap<String, f64>) -> Result<()>,
) -> Result<AblationOutcome> {
    scale.validate()?;
    let mut runs = Vec::new();
    for &(name, opts, misalign) in variants {
        let data = subject_data(scale, misalign, &opts)?;
        for &seed in &scale.seeds {
            log(&format!("{name} seed {seed}"));
            let opts = ItemOptions { seed, ..opts };
            let model = train_model(
                scale.train_config(TrainMode::Scratch, seed, &opts),
                None,
                &data.train,
            )?;
            let (summary, preds) = evaluate_on(&model, scale, &data, &opts, seed)?;
            let mut extra = BTreeMap::new();
            measure(&data, &preds, &mut extra)?;
            runs.push(RunRecord {
                variant: name.to_string(),
                seed,
                summary,
                extra,
            });
        }
    }
    let names: Vec<&str> = variants.iter().map(|v| v.0).collect();
    Ok(AblationOutcome {
        ablation,
        report: summarize(title, &names, &runs),
        scale: scale.clone(),
        runs,
    })
}

pub fn run_enhance(scale: &AblationScale, log: &mut dyn FnMut(&str)) -> Result<AblationOutcome> {
    let flat = ItemOptions::default();
    let degraded = ItemOptions {
        input_source: InputSource::Degraded,
        ..flat
    };
    run_pairwise(
        scale,
        Ablation::Enhance,
        "enhance: clean vs degraded flat input",
        &[("flat", flat, 0.0), ("degraded", degraded, 0.0)],
        log,
        |_, _, _| Ok(()),
    )
}

pub fn run_masks(scale: &AblationScale, log: &mut dyn FnMut(&str)) -> Result<AblationOutcome> {
    let keep = ItemOptions::default();
    let remove = ItemOptions {
        background: BackgroundMode::Remove,
        ..keep
    };
    run_pairwise(
        scale,
        Ablation::Masks,
        "masks: background kept vs removed",
        &[("keep", keep, 0.0), ("remove", remove, 0.0)],
        log,
        |_, _, _| Ok(()),
    )
}

/// Key of the centroid displacement column.
pub const CENTROID_SHIFT: &str = "centroid_shift_px";

/// Binary mask of output pixels brighter than [`OUTPUT_MASK_THRESHOLD`] in any channel.
pub fn output_mask(image: &Image) -> Image {
    let plane = image.plane_len();
    let mut m = Image::zeros(1, image.width, image.height);
    for p in 0..plane {
        let bright = (0..image.channels).any(|c| image.data[c * plane + p] > OUTPUT_MASK_THRESHOLD);
        m.data[p] = if bright { 1.0 } else { 0.0 };
    }
    m
}

/// Mean distance between the output-mask centroid and the flat-mask centroid.
pub fn centroid_shift(capture: &CaptureSet, indices: &[usize], preds: &[Image]) -> Result<f64> {
    let mut total = 0.0;
    let mut n = 0usize;
    for (&idx, pred) in indices.iter().zip(preds) {
        let pair = mask_background(&capture.pairs[idx], BackgroundMode::Remove)?;
        if let (Some(a), Some(b)) = (
            mask_centroid(&output_mask(pred)),
            mask_centroid(&pair.flat_mask),
        ) {
            total += ((a.0 - b.0).powi(2) + (a.1 - b.1).powi(2)).sqrt();
            n += 1;
        }
    }
    if n == 0 {
        return Err(Error::EmptyMask);
    }
    Ok(total / n as f64)
}

/// Background-free training on aligned and on shifted captures.
pub fn run_misalign(scale: &AblationScale, log: &mut dyn FnMut(&str)) -> Result<AblationOutcome> {
    let opts = ItemOptions {
        background: BackgroundMode::Remove,
        ..ItemOptions::default()
    };
    let shifted = format!("shift{}", scale.misalign_px);
    run_pairwise(
        scale,
        Ablation::Misalign,
        "misalign: aligned vs shifted relit frames",
        &[
            ("shift0", opts, 0.0),
            (shifted.as_str(), opts, scale.misalign_px),
        ],
        log,
        |data, preds, extra| {
            extra.insert(
                CENTROID_SHIFT.to_string(),
                centroid_shift(&data.capture, &data.test, preds)?,
            );
            Ok(())
        },
    )
}

pub fn run(
    ablation: Ablation,
    scale: &AblationScale,
    log: &mut dyn FnMut(&str),
) -> Result<AblationOutcome> {
    match ablation {
        Ablation::Prior => run_prior(scale, log),
        Ablation::Enhance => run_enhance(scale, log),
        Ablation::Masks => run_masks(scale, log),
        Ablation::Misalign => run_misalign(scale, log),
    }
}
