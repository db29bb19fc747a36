//! Command-line front end: one subcommand per pipeline stage plus the experiment matrices.
//!
//! Every flag is optional at parse time so that a `--config` TOML file can supply it; the
//! file's `[subcommand]` table (keys in snake_case) is read first and explicit flags win.

use std::fs;
use std::path::{Path, PathBuf};

use clap::{Args, Parser, Subcommand};
use serde::de::DeserializeOwned;
use serde::{Deserialize, Serialize};

use crate::datapipe::{self, BackgroundMode, DatasetSplit};
use crate::diffusion::checkpoint;
use crate::diffusion::{Denoiser, InputSource, TrainConfig, TrainMode, Trainer};
use crate::error::{Error, Result};
use crate::experiments::{self, Ablation, AblationScale, ItemOptions, PriorConfig};
use crate::fsutil;
use crate::image::Image;
use crate::infer::{self, ChunkPlan, FrameInput, VideoMeta};
use crate::metrics::{masked_metric, masked_psnr, ssim, Report, ReportRow};
use crate::synthstage::capture::frame_path;
use crate::synthstage::{
    read_capture, synth_capture, write_capture, CaptureConfig, CaptureSet, Role,
};

/// Name of the config echo written next to every output.
pub const RUN_ECHO: &str = "run.json";
pub const SPLIT_FILE: &str = "split.json";
pub const PREP_FILE: &str = "prep.json";

#[derive(Debug, Parser)]
#[command(
    name = "relightkit",
    version,
    about = "Flat-lit to relit video translation at desk scale"
)]
pub struct Cli {
    /// TOML file whose `[<subcommand>]` table provides defaults; flags override it.
    #[arg(long, global = true)]
    pub config: Option<PathBuf>,
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Render a synthetic interleaved capture session.
    SynthCapture(SynthArgs),
    /// Temporally filter masks and fix the train/test split.
    Preprocess(PreprocessArgs),
    /// Train a prior on many synthetic subjects.
    Pretrain(PretrainArgs),
    /// Adapt a prior (or train from scratch) on one subject.
    Adapt(AdaptArgs),
    /// Relight a capture into chunked, blended videos.
    Infer(InferArgs),
    /// Score predictions against ground truth inside the subject masks.
    Eval(EvalArgs),
    /// Run an experiment matrix end to end and emit a comparison table.
    Ablate(AblateArgs),
}

impl Command {
    pub fn name(&self) -> &'static str {
        match self {
            Command::SynthCapture(_) => "synth-capture",
            Command::Preprocess(_) => "preprocess",
            Command::Pretrain(_) => "pretrain",
            Command::Adapt(_) => "adapt",
            Command::Infer(_) => "infer",
            Command::Eval(_) => "eval",
            Command::Ablate(_) => "ablate",
        }
    }
}

#[derive(Debug, Clone, Default, Args, Serialize, Deserialize)]
#[serde(default)]
pub struct SynthArgs {
    /// Subject seed [default: 0]
    #[arg(long)]
    pub subject_id: Option<u64>,
    /// Scene complexity 1..=4 [default: 2]
    #[arg(long)]
    pub complexity: Option<u8>,
    /// Flat/relit pairs per camera [default: 512]
    #[arg(long)]
    pub pairs: Option<usize>,
    /// Ring cameras [default: 4; the physical stage has 40]
    #[arg(long)]
    pub cameras: Option<usize>,
    /// Rigid shift of the relit frames in pixels [default: 0]
    #[arg(long)]
    pub misalign_px: Option<f64>,
    /// Square frame size [default: 64]
    #[arg(long)]
    pub image_size: Option<usize>,
    /// Light pool size [default: 100]
    #[arg(long)]
    pub lights: Option<usize>,
    /// Light pool seed [default: 17]
    #[arg(long)]
    pub light_seed: Option<u64>,
    /// Output capture directory
    #[arg(long)]
    pub out: Option<PathBuf>,
}

#[derive(Debug, Clone, Default, Args, Serialize, Deserialize)]
#[serde(default)]
pub struct PreprocessArgs {
    /// Capture directory
    #[arg(long = "in")]
    pub input: Option<PathBuf>,
    /// Odd temporal median window for masks [default: 5]
    #[arg(long)]
    pub mask_filter_window: Option<usize>,
    /// Background handling recorded for training [default: keep]
    #[arg(long, value_enum)]
    pub background: Option<BackgroundMode>,
    /// Seed of the held-out light draw [default: 2025]
    #[arg(long)]
    pub split_seed: Option<u64>,
    /// Fraction of the light pool held out [default: 0.1]
    #[arg(long)]
    pub light_holdout_frac: Option<f64>,
    /// Leading fraction of frames kept for training [default: 0.85]
    #[arg(long)]
    pub frame_frac: Option<f64>,
    /// Camera ids held out entirely, comma separated [default: none]
    #[arg(long, value_delimiter = ',')]
    pub heldout_cameras: Option<Vec<usize>>,
    /// Output directory [default: <in>/prep]
    #[arg(long)]
    pub out: Option<PathBuf>,
}

#[derive(Debug, Clone, Default, Args, Serialize, Deserialize)]
#[serde(default)]
pub struct TrainArgs {
    /// Optimizer steps [default: 1000]
    #[arg(long)]
    pub steps: Option<u64>,
    /// Pairs per step [default: 8; the paper used 5 for LoRA and 2 for full fine-tuning]
    #[arg(long)]
    pub batch: Option<usize>,
    /// Adam learning rate [default: 3e-4 pretrain, 1e-4 otherwise]
    #[arg(long)]
    pub lr: Option<f64>,
    /// Seed for init, batch sampling and noise [default: 0]
    #[arg(long)]
    pub seed: Option<u64>,
    /// [default: flat]
    #[arg(long, value_enum)]
    pub input_source: Option<InputSource>,
    /// Degradation strength for `--input-source degraded` [default: 0.5]
    #[arg(long)]
    pub degrade_level: Option<f32>,
    /// [default: keep, or the value recorded by preprocess]
    #[arg(long, value_enum)]
    pub background: Option<BackgroundMode>,
    /// Write `<out>.stepN` every N steps; 0 disables [default: 0]
    #[arg(long)]
    pub checkpoint_every: Option<u64>,
    /// Continue from this checkpoint instead of starting fresh
    #[arg(long)]
    pub resume: Option<PathBuf>,
    /// Output checkpoint file
    #[arg(long)]
    pub out: Option<PathBuf>,
}

#[derive(Debug, Clone, Default, Args, Serialize, Deserialize)]
#[serde(default)]
pub struct PretrainArgs {
    /// Prior subjects [default: 64]
    #[arg(long)]
    pub subjects: Option<usize>,
    /// Pairs per camera per subject [default: 8]
    #[arg(long)]
    pub pairs_per_subject: Option<usize>,
    /// [default: 4]
    #[arg(long)]
    pub cameras: Option<usize>,
    /// [default: 64]
    #[arg(long)]
    pub image_size: Option<usize>,
    /// [default: 100]
    #[arg(long)]
    pub lights: Option<usize>,
    #[command(flatten)]
    #[serde(flatten)]
    pub train: TrainArgs,
}

#[derive(Debug, Clone, Default, Args, Serialize, Deserialize)]
#[serde(default)]
pub struct AdaptArgs {
    /// `none` re-emits the prior for zero-shot evaluation [default: lora]
    #[arg(long, value_enum)]
    pub mode: Option<TrainMode>,
    /// Prior checkpoint (unused by scratch)
    #[arg(long)]
    pub base: Option<PathBuf>,
    /// Capture or preprocess output directory of the subject
    #[arg(long)]
    pub subject: Option<PathBuf>,
    /// [default: 8]
    #[arg(long)]
    pub lora_rank: Option<usize>,
    /// [default: 16]
    #[arg(long)]
    pub lora_alpha: Option<f64>,
    #[command(flatten)]
    #[serde(flatten)]
    pub train: TrainArgs,
}

#[derive(Debug, Clone, Default, Args, Serialize, Deserialize)]
#[serde(default)]
pub struct InferArgs {
    /// Model checkpoint
    #[arg(long)]
    pub ckpt: Option<PathBuf>,
    /// Capture directory supplying flat frames and lights
    #[arg(long)]
    pub capture: Option<PathBuf>,
    /// Single camera to render [default: every camera]
    #[arg(long)]
    pub camera: Option<usize>,
    /// First capture frame [default: 0]
    #[arg(long)]
    pub first_frame: Option<usize>,
    /// Frames to render [default: through the end of the capture]
    #[arg(long)]
    pub frames: Option<usize>,
    /// [default: 9; paper scale 57]
    #[arg(long)]
    pub chunk_len: Option<usize>,
    /// [default: 4; paper scale 32]
    #[arg(long)]
    pub overlap: Option<usize>,
    /// [default: 15]
    #[arg(long)]
    pub ddim_steps: Option<usize>,
    /// Chunk k samples with seed + k [default: 0]
    #[arg(long)]
    pub seed: Option<u64>,
    /// Output directory; one `camNN` video per camera
    #[arg(long)]
    pub out: Option<PathBuf>,
}

#[derive(Debug, Clone, Default, Args, Serialize, Deserialize)]
#[serde(default)]
pub struct EvalArgs {
    /// Output of `infer`
    #[arg(long)]
    pub pred: Option<PathBuf>,
    /// Ground-truth capture directory
    #[arg(long)]
    pub gt: Option<PathBuf>,
    /// Capture-shaped directory whose relit masks bound the metric [default: --gt]
    #[arg(long)]
    pub masks: Option<PathBuf>,
    /// Score only test-split pairs
    #[arg(long, num_args = 0..=1, default_missing_value = "true")]
    pub heldout_only: Option<bool>,
    /// Split file [default: <masks>/split.json if present, else the default split]
    #[arg(long)]
    pub split: Option<PathBuf>,
    /// Report directory
    #[arg(long)]
    pub out: Option<PathBuf>,
}

#[derive(Debug, Clone, Default, Args, Serialize, Deserialize)]
#[serde(default)]
pub struct AblateArgs {
    /// Experiment matrix
    #[arg(value_enum)]
    pub which: Option<Ablation>,
    /// Working directory; results land in `<workdir>/<matrix>`
    #[arg(long)]
    pub workdir: Option<PathBuf>,
    /// [default: 32]
    #[arg(long)]
    pub image_size: Option<usize>,
    /// [default: 128]
    #[arg(long)]
    pub subject_pairs: Option<usize>,
    /// [default: 64]
    #[arg(long)]
    pub prior_subjects: Option<usize>,
    /// [default: 8]
    #[arg(long)]
    pub prior_pairs_per_subject: Option<usize>,
    /// [default: 1500]
    #[arg(long)]
    pub pretrain_steps: Option<u64>,
    /// [default: 1000]
    #[arg(long)]
    pub adapt_steps: Option<u64>,
    /// [default: 3e-4]
    #[arg(long)]
    pub pretrain_lr: Option<f64>,
    /// [default: 3e-4]
    #[arg(long)]
    pub adapt_lr: Option<f64>,
    /// [default: 8]
    #[arg(long)]
    pub batch: Option<usize>,
    /// Comma separated [default: 0,1,2]
    #[arg(long, value_delimiter = ',')]
    pub seeds: Option<Vec<u64>>,
    /// [default: 24]
    #[arg(long)]
    pub eval_pairs: Option<usize>,
    /// [default: 15]
    #[arg(long)]
    pub ddim_steps: Option<usize>,
    /// [default: 8]
    #[arg(long)]
    pub misalign_px: Option<f64>,
}

/// Overlay explicit flags on the config-file table for `section`.
fn resolve<T: Serialize + DeserializeOwned + Default>(
    flags: &T,
    file: Option<&toml::Table>,
    section: &str,
) -> Result<T> {
    let mut merged = match file.and_then(|t| t.get(section)) {
        Some(v) => serde_json::to_value(v)?,
        None => serde_json::Value::Object(Default::default()),
    };
    let obj = merged
        .as_object_mut()
        .ok_or_else(|| Error::Invalid(format!("config section [{section}] must be a table")))?;
    // every option serializes (as null when unset), so the default lists the known keys
    let known = serde_json::to_value(T::default())?;
    if let Some(bad) = obj.keys().find(|k| known.get(k.as_str()).is_none()) {
        return Err(Error::Invalid(format!(
            "config section [{section}]: unknown key `{bad}`"
        )));
    }
    if let serde_json::Value::Object(over) = serde_json::to_value(flags)? {
        for (k, v) in over {
            if !v.is_null() {
                obj.insert(k, v);
            }
        }
    }
    serde_json::from_value(merged)
        .map_err(|e| Error::Invalid(format!("config section [{section}]: {e}")))
}

fn load_config(path: Option<&Path>) -> Result<Option<toml::Table>> {
    let Some(p) = path else { return Ok(None) };
    let text = String::from_utf8(fsutil::read(p)?)
        .map_err(|_| Error::Invalid(format!("{} is not UTF-8", p.display())))?;
    text.parse::<toml::Table>()
        .map(Some)
        .map_err(|e| Error::Invalid(format!("{}: {e}", p.display())))
}

fn required<T: Clone>(v: &Option<T>, flag: &str) -> Result<T> {
    v.clone()
        .ok_or_else(|| Error::Invalid(format!("missing required --{flag}")))
}

#[derive(Serialize)]
struct Echo<'a, T: Serialize> {
    command: &'a str,
    version: &'a str,
    args: &'a T,
}

fn echo_bytes<T: Serialize>(command: &str, args: &T) -> Result<Vec<u8>> {
    let mut bytes = serde_json::to_vec_pretty(&Echo {
        command,
        version: env!("CARGO_PKG_VERSION"),
        args,
    })?;
    bytes.push(b'\n');
    Ok(bytes)
}

fn with_suffix(path: &Path, suffix: &str) -> PathBuf {
    let mut s = path.as_os_str().to_os_string();
    s.push(suffix);
    PathBuf::from(s)
}

/// Build a directory under a staging name and rename it into place. An existing target is
/// replaced only if it is empty or carries a config echo from an earlier run.
fn publish_dir(out: &Path, build: impl FnOnce(&Path) -> Result<()>) -> Result<()> {
    if out.exists() {
        let ours = out.join(RUN_ECHO).is_file();
        let empty = fs::read_dir(out)
            .map_err(|e| Error::io(out, e))?
            .next()
            .is_none();
        if !ours && !empty {
            return Err(Error::Invalid(format!(
                "refusing to replace {}: not empty and not written by relightkit",
                out.display()
            )));
        }
    }
    let staging = with_suffix(out, ".partial");
    if staging.exists() {
        fs::remove_dir_all(&staging).map_err(|e| Error::io(&staging, e))?;
    }
    fs::create_dir_all(&staging).map_err(|e| Error::io(&staging, e))?;
    build(&staging)?;
    if out.exists() {
        fs::remove_dir_all(out).map_err(|e| Error::io(out, e))?;
    }
    fs::rename(&staging, out).map_err(|e| Error::io(out, e))
}

fn synth_capture_cmd(a: &SynthArgs) -> Result<String> {
    let out = required(&a.out, "out")?;
    let d = CaptureConfig::default();
    let cfg = CaptureConfig {
        subject_id: a.subject_id.unwrap_or(d.subject_id),
        complexity: a.complexity.unwrap_or(d.complexity),
        n_pairs: a.pairs.unwrap_or(d.n_pairs),
        n_cameras: a.cameras.unwrap_or(d.n_cameras),
        image_size: a.image_size.unwrap_or(d.image_size),
        n_lights: a.lights.unwrap_or(d.n_lights),
        light_seed: a.light_seed.unwrap_or(d.light_seed),
        misalignment_px: a.misalign_px.unwrap_or(d.misalignment_px),
        ..d
    };
    if !(1..=4).contains(&cfg.complexity)
        || cfg.n_cameras == 0
        || cfg.image_size < 8
        || cfg.n_lights == 0
    {
        return Err(Error::Invalid(format!("invalid capture settings: {cfg:?}")));
    }
    let capture = synth_capture(&cfg)?;
    publish_dir(&out, |dir| {
        write_capture(&capture, dir)?;
        fsutil::write_atomic(&dir.join(RUN_ECHO), &echo_bytes("synth-capture", a)?)
    })?;
    Ok(format!(
        "wrote {} pairs x {} cameras to {}",
        cfg.n_pairs,
        cfg.n_cameras,
        out.display()
    ))
}

/// Settings recorded by `preprocess` for downstream stages.
#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct PrepInfo {
    pub background: BackgroundMode,
    pub mask_filter_window: usize,
}

/// Median-filter every camera's flat and relit mask sequences over time.
pub fn filter_capture_masks(capture: &mut CaptureSet, window: usize) -> Result<()> {
    let views = capture.n_views();
    for cam in 0..views {
        let idx: Vec<usize> = (0..capture.pairs.len())
            .filter(|&i| capture.pairs[i].camera_id == cam)
            .collect();
        let flat: Vec<Image> = idx
            .iter()
            .map(|&i| capture.pairs[i].flat_mask.clone())
            .collect();
        let relit: Vec<Image> = idx
            .iter()
            .map(|&i| capture.pairs[i].relit_mask.clone())
            .collect();
        let flat = datapipe::temporal_mask_filter(&flat, window)?;
        let relit = datapipe::temporal_mask_filter(&relit, window)?;
        for ((&i, f), r) in idx.iter().zip(flat).zip(relit) {
            capture.pairs[i].flat_mask = f;
            capture.pairs[i].relit_mask = r;
        }
    }
    Ok(())
}

fn preprocess_cmd(a: &PreprocessArgs) -> Result<String> {
    let input = required(&a.input, "in")?;
    let out = a.out.clone().unwrap_or_else(|| input.join("prep"));
    let window = a.mask_filter_window.unwrap_or(5);
    let mut capture = read_capture(&input)?;
    filter_capture_masks(&mut capture, window)?;
    let split = datapipe::split_dataset(
        &capture,
        a.light_holdout_frac.unwrap_or(datapipe::LIGHT_HOLDOUT_FRAC),
        a.frame_frac.unwrap_or(datapipe::FRAME_FRAC),
        a.heldout_cameras.as_deref().unwrap_or(&[]),
        a.split_seed.unwrap_or(datapipe::SPLIT_SEED),
    )?;
    let info = PrepInfo {
        background: a.background.unwrap_or(BackgroundMode::Keep),
        mask_filter_window: window,
    };
    publish_dir(&out, |dir| {
        write_capture(&capture, dir)?;
        fsutil::write_atomic(&dir.join(SPLIT_FILE), &serde_json::to_vec_pretty(&split)?)?;
        fsutil::write_atomic(&dir.join(PREP_FILE), &serde_json::to_vec_pretty(&info)?)?;
        fsutil::write_atomic(&dir.join(RUN_ECHO), &echo_bytes("preprocess", a)?)
    })?;
    Ok(format!(
        "{} train / {} test pairs, {} held-out lights, written to {}",
        split.train_pairs.len(),
        split.test_pairs.len(),
        split.heldout_lights.len(),
        out.display()
    ))
}

/// Split stored next to a capture, or the default split.
pub fn subject_split(dir: &Path, capture: &CaptureSet) -> Result<DatasetSplit> {
    let p = dir.join(SPLIT_FILE);
    if p.is_file() {
        return Ok(serde_json::from_slice(&fsutil::read(&p)?)?);
    }
    datapipe::split_dataset(
        capture,
        datapipe::LIGHT_HOLDOUT_FRAC,
        datapipe::FRAME_FRAC,
        &[],
        datapipe::SPLIT_SEED,
    )
}

fn prep_info(dir: &Path) -> Result<Option<PrepInfo>> {
    let p = dir.join(PREP_FILE);
    if !p.is_file() {
        return Ok(None);
    }
    Ok(Some(serde_json::from_slice(&fsutil::read(&p)?)?))
}

fn apply_train_args(c: &mut TrainConfig, t: &TrainArgs, background: BackgroundMode) {
    if let Some(v) = t.steps {
        c.steps = v;
    }
    if let Some(v) = t.batch {
        c.batch_size = v;
    }
    if let Some(v) = t.lr {
        c.lr = v;
    }
    if let Some(v) = t.seed {
        c.seed = v;
    }
    if let Some(v) = t.input_source {
        c.input_source = v;
    }
    if let Some(v) = t.degrade_level {
        c.degrade_level = v;
    }
    if let Some(v) = t.checkpoint_every {
        c.checkpoint_every = v;
    }
    c.background = t.background.unwrap_or(background);
}

/// Run (or resume) a training job and write the final checkpoint plus its echo.
fn train_to(
    trainer: &mut Trainer,
    items: &[crate::diffusion::TrainItem],
    out: &Path,
    echo: Vec<u8>,
) -> Result<()> {
    trainer.run(items, |tr| {
        checkpoint::save(tr, &with_suffix(out, &format!(".step{}", tr.step)))
    })?;
    checkpoint::save(trainer, out)?;
    fsutil::write_atomic(&with_suffix(out, ".run.json"), &echo)
}

fn resume_or(
    t: &TrainArgs,
    mode: TrainMode,
    fresh: impl FnOnce() -> Result<Trainer>,
) -> Result<Trainer> {
    match &t.resume {
        Some(p) => {
            let tr = checkpoint::load(p)?;
            if tr.config.mode != mode {
                return Err(Error::Invalid(format!(
                    "cannot resume a {} checkpoint as {}",
                    tr.config.mode.as_str(),
                    mode.as_str()
                )));
            }
            Ok(tr)
        }
        None => fresh(),
    }
}

fn pretrain_cmd(a: &PretrainArgs) -> Result<String> {
    let out = required(&a.train.out, "out")?;
    let d = PriorConfig::default();
    let prior = PriorConfig {
        n_subjects: a.subjects.unwrap_or(d.n_subjects),
        pairs_per_subject: a.pairs_per_subject.unwrap_or(d.pairs_per_subject),
        n_cameras: a.cameras.unwrap_or(d.n_cameras),
        image_size: a.image_size.unwrap_or(d.image_size),
        n_lights: a.lights.unwrap_or(d.n_lights),
        ..d
    };
    let mut cfg = TrainConfig::new(TrainMode::Pretrain);
    apply_train_args(&mut cfg, &a.train, BackgroundMode::Keep);
    let mut trainer = resume_or(&a.train, TrainMode::Pretrain, || {
        Trainer::new(cfg.clone(), None)
    })?;
    if a.train.steps.is_some() {
        trainer.config.steps = cfg.steps;
    }
    let items = experiments::prior_corpus(&prior, &ItemOptions::from(&trainer.config))?;
    train_to(&mut trainer, &items, &out, echo_bytes("pretrain", a)?)?;
    Ok(format!(
        "pretrained {} steps on {} pairs; final loss {:.5}; wrote {}",
        trainer.step,
        items.len(),
        trainer.losses.last().copied().unwrap_or(f64::NAN),
        out.display()
    ))
}

fn adapt_cmd(a: &AdaptArgs) -> Result<String> {
    let out = required(&a.train.out, "out")?;
    let subject = required(&a.subject, "subject")?;
    let mode = a.mode.unwrap_or(TrainMode::Lora);
    if mode == TrainMode::Pretrain {
        return Err(Error::Invalid(
            "use the pretrain subcommand for mode pretrain".into(),
        ));
    }
    let base: Option<Denoiser<f32>> = match (&a.base, mode.needs_base()) {
        (Some(p), true) => Some(checkpoint::load(p)?.model()?),
        (None, true) => {
            return Err(Error::Invalid(format!(
                "mode {} needs --base",
                mode.as_str()
            )))
        }
        (_, false) => None,
    };
    let capture = read_capture(&subject)?;
    let split = subject_split(&subject, &capture)?;
    let background = prep_info(&subject)?.map_or(BackgroundMode::Keep, |p| p.background);
    let mut cfg = TrainConfig::new(mode);
    if let Some(b) = &base {
        cfg.net = b.config.clone();
    }
    if let Some(r) = a.lora_rank {
        cfg.lora_rank = r;
    }
    if let Some(al) = a.lora_alpha {
        cfg.lora_alpha = al;
    }
    apply_train_args(&mut cfg, &a.train, background);
    let mut trainer = resume_or(&a.train, mode, || Trainer::new(cfg.clone(), base.as_ref()))?;
    if a.train.steps.is_some() {
        trainer.config.steps = cfg.steps;
    }
    let items = experiments::make_items(
        &capture,
        &split.train_pairs,
        &ItemOptions::from(&trainer.config),
    )?;
    train_to(&mut trainer, &items, &out, echo_bytes("adapt", a)?)?;
    Ok(format!(
        "{} adaptation: {} steps on {} pairs; wrote {}",
        mode.as_str(),
        trainer.step,
        items.len(),
        out.display()
    ))
}

fn infer_cmd(a: &InferArgs) -> Result<String> {
    let ckpt = required(&a.ckpt, "ckpt")?;
    let cap_dir = required(&a.capture, "capture")?;
    let out = required(&a.out, "out")?;
    let trainer = checkpoint::load(&ckpt)?;
    let model = trainer.model()?;
    let schedule = trainer.schedule();
    let capture = read_capture(&cap_dir)?;
    let first = a.first_frame.unwrap_or(0);
    let n_pairs = capture.n_pairs();
    if first >= n_pairs {
        return Err(Error::Invalid(format!(
            "first frame {first} beyond the {n_pairs}-frame capture"
        )));
    }
    let frames = a.frames.unwrap_or(n_pairs - first);
    if frames == 0 || first + frames > n_pairs {
        return Err(Error::Invalid(format!(
            "frames {first}..{} exceed the capture",
            first + frames
        )));
    }
    let plan = ChunkPlan::new(
        a.chunk_len.unwrap_or(infer::DEFAULT_CHUNK_LEN).min(frames),
        a.overlap.unwrap_or(infer::DEFAULT_OVERLAP),
        frames,
    )?;
    let ddim_steps = a.ddim_steps.unwrap_or(infer::DEFAULT_DDIM_STEPS);
    let seed = a.seed.unwrap_or(0);
    let seeds: Vec<u64> = (0..plan.chunks().len() as u64)
        .map(|k| seed.wrapping_add(k))
        .collect();
    let cameras: Vec<usize> = match a.camera {
        Some(c) if c < capture.n_views() => vec![c],
        Some(c) => return Err(Error::Invalid(format!("camera {c} not in capture"))),
        None => (0..capture.n_views()).collect(),
    };
    let opts = ItemOptions::from(&trainer.config);
    publish_dir(&out, |dir| {
        for &cam in &cameras {
            let inputs = (first..first + frames)
                .map(|t| {
                    let item = experiments::pair_item(&capture, capture.pair(t, cam), &opts)?;
                    Ok(FrameInput {
                        flat: item.flat,
                        env: item.env,
                    })
                })
                .collect::<Result<Vec<_>>>()?;
            let video = infer::long_video(&model, &schedule, &inputs, &plan, &seeds, ddim_steps)?;
            let meta = VideoMeta {
                fps: infer::VIDEO_FPS,
                plan,
                seeds: seeds.clone(),
                ddim_steps,
                camera_id: cam,
                first_frame: first,
                frames: Vec::new(),
            };
            infer::write_video(&dir.join(format!("cam{cam:02}")), &video, meta)?;
        }
        fsutil::write_atomic(&dir.join(RUN_ECHO), &echo_bytes("infer", a)?)
    })?;
    Ok(format!(
        "rendered {} camera(s) x {frames} frames in {} chunks to {}",
        cameras.len(),
        plan.chunks().len(),
        out.display()
    ))
}

/// Predictions keyed by capture pair index, read from `infer` output.
fn read_predictions(pred: &Path, capture: &CaptureSet) -> Result<Vec<(usize, Image)>> {
    let mut out = Vec::new();
    for cam in 0..capture.n_views() {
        let dir = pred.join(format!("cam{cam:02}"));
        if !dir.is_dir() {
            continue;
        }
        let meta = infer::read_video_meta(&dir)?;
        for (i, name) in meta.frames.iter().enumerate() {
            let t = meta.first_frame + i;
            if t >= capture.n_pairs() {
                return Err(Error::Invalid(format!(
                    "prediction frame {t} beyond the capture"
                )));
            }
            out.push((
                t * capture.n_views() + meta.camera_id,
                Image::load_png(&dir.join(name))?,
            ));
        }
    }
    out.sort_by_key(|(i, _)| *i);
    if out.is_empty() {
        return Err(Error::Invalid(format!(
            "no predictions under {}",
            pred.display()
        )));
    }
    Ok(out)
}

/// Report rows for the two test regimes (and the training pairs unless held-out only).
pub fn eval_report(
    capture: &CaptureSet,
    split: &DatasetSplit,
    preds: &[(usize, Image)],
    masks: &[Image],
    heldout_only: bool,
) -> Result<Report> {
    let groups: [(&str, Box<dyn Fn(usize) -> bool>); 3] = [
        (
            "novel view/motion",
            Box::new(|i| {
                split.test_pairs.binary_search(&i).is_ok()
                    && !split.holdout_reasons(&capture.pairs[i]).0
            }),
        ),
        (
            "novel view/motion/light",
            Box::new(|i| {
                split.test_pairs.binary_search(&i).is_ok()
                    && split.holdout_reasons(&capture.pairs[i]).0
            }),
        ),
        (
            "train",
            Box::new(|i| split.train_pairs.binary_search(&i).is_ok()),
        ),
    ];
    let mut rows = Vec::new();
    for (name, member) in groups.iter() {
        if heldout_only && *name == "train" {
            continue;
        }
        let mine: Vec<&(usize, Image)> = preds.iter().filter(|(i, _)| member(*i)).collect();
        let (mut psnr, mut base, mut ssims) = (0.0, 0.0, Vec::new());
        for (i, p) in &mine {
            let pair = &capture.pairs[*i];
            psnr += masked_psnr(p, &pair.relit, &masks[*i])?;
            base += masked_psnr(&pair.flat, &pair.relit, &masks[*i])?;
            if let Ok(s) = masked_metric(ssim, p, &pair.relit, &masks[*i]) {
                ssims.push(s);
            }
        }
        let n = mine.len();
        let denom = n.max(1) as f64;
        rows.push(ReportRow {
            variant: name.to_string(),
            n,
            psnr: if n == 0 { f64::NAN } else { psnr / denom },
            ssim: (!ssims.is_empty()).then(|| ssims.iter().sum::<f64>() / ssims.len() as f64),
            lpips: None,
            extra: [(
                "baseline_psnr".to_string(),
                if n == 0 { f64::NAN } else { base / denom },
            )]
            .into_iter()
            .collect(),
        });
    }
    Ok(Report {
        title: "relighting quality (masked)".into(),
        rows,
    })
}

fn eval_cmd(a: &EvalArgs) -> Result<String> {
    let pred = required(&a.pred, "pred")?;
    let gt = required(&a.gt, "gt")?;
    let out = required(&a.out, "out")?;
    let masks_dir = a.masks.clone().unwrap_or_else(|| gt.clone());
    let capture = read_capture(&gt)?;
    let split = match &a.split {
        Some(p) => serde_json::from_slice(&fsutil::read(p)?)?,
        None => subject_split(&masks_dir, &capture)?,
    };
    let masks = capture
        .pairs
        .iter()
        .map(|p| {
            Image::load_png(&masks_dir.join(frame_path("masks", p.camera_id, p.t, Role::Relit)))
        })
        .collect::<Result<Vec<_>>>()?;
    let preds = read_predictions(&pred, &capture)?;
    let report = eval_report(
        &capture,
        &split,
        &preds,
        &masks,
        a.heldout_only.unwrap_or(false),
    )?;
    let table = report.table();
    publish_dir(&out, |dir| {
        fsutil::write_atomic(&dir.join("report.txt"), table.as_bytes())?;
        fsutil::write_atomic(&dir.join("report.jsonl"), report.jsonl()?.as_bytes())?;
        fsutil::write_atomic(&dir.join(RUN_ECHO), &echo_bytes("eval", a)?)
    })?;
    Ok(table)
}

/// Scale for an ablation run with flag overrides applied.
pub fn ablation_scale(a: &AblateArgs) -> AblationScale {
    let d = AblationScale::default();
    AblationScale {
        image_size: a.image_size.unwrap_or(d.image_size),
        subject_pairs: a.subject_pairs.unwrap_or(d.subject_pairs),
        prior_subjects: a.prior_subjects.unwrap_or(d.prior_subjects),
        prior_pairs_per_subject: a
            .prior_pairs_per_subject
            .unwrap_or(d.prior_pairs_per_subject),
        pretrain_steps: a.pretrain_steps.unwrap_or(d.pretrain_steps),
        adapt_steps: a.adapt_steps.unwrap_or(d.adapt_steps),
        pretrain_lr: a.pretrain_lr.unwrap_or(d.pretrain_lr),
        adapt_lr: a.adapt_lr.unwrap_or(d.adapt_lr),
        batch_size: a.batch.unwrap_or(d.batch_size),
        seeds: a.seeds.clone().unwrap_or(d.seeds.clone()),
        eval_pairs: a.eval_pairs.unwrap_or(d.eval_pairs),
        ddim_steps: a.ddim_steps.unwrap_or(d.ddim_steps),
        misalign_px: a.misalign_px.unwrap_or(d.misalign_px),
        ..d
    }
}

fn ablate_cmd(a: &AblateArgs) -> Result<String> {
    let which = required(&a.which, "<WHICH>")?;
    let workdir = required(&a.workdir, "workdir")?;
    let scale = ablation_scale(a);
    let outcome = experiments::run(which, &scale, &mut |m| {
        eprintln!("[{}] {m}", which.as_str())
    })?;
    let table = outcome.report.table();
    publish_dir(&workdir.join(which.as_str()), |dir| {
        fsutil::write_atomic(&dir.join("report.txt"), table.as_bytes())?;
        fsutil::write_atomic(
            &dir.join("report.jsonl"),
            outcome.report.jsonl()?.as_bytes(),
        )?;
        fsutil::write_atomic(
            &dir.join("runs.json"),
            &serde_json::to_vec_pretty(&outcome)?,
        )?;
        fsutil::write_atomic(&dir.join(RUN_ECHO), &echo_bytes("ablate", a)?)
    })?;
    Ok(table)
}

/// Execute a parsed command line; returns the summary printed on success.
pub fn execute(cli: &Cli) -> Result<String> {
    let file = load_config(cli.config.as_deref())?;
    let file = file.as_ref();
    let section = cli.command.name();
    match &cli.command {
        Command::SynthCapture(a) => synth_capture_cmd(&resolve(a, file, section)?),
        Command::Preprocess(a) => preprocess_cmd(&resolve(a, file, section)?),
        Command::Pretrain(a) => pretrain_cmd(&resolve(a, file, section)?),
        Command::Adapt(a) => adapt_cmd(&resolve(a, file, section)?),
        Command::Infer(a) => infer_cmd(&resolve(a, file, section)?),
        Command::Eval(a) => eval_cmd(&resolve(a, file, section)?),
        Command::Ablate(a) => ablate_cmd(&resolve(a, file, section)?),
    }
}

/// Parse `args`, run, and map the outcome to a process exit code.
pub fn main_with<I, S>(args: I) -> i32
where
    I: IntoIterator<Item = S>,
    S: Into<std::ffi::OsString> + Clone,
{
    let cli = match Cli::try_parse_from(args) {
        Ok(c) => c,
        Err(e) => {
            let code = if e.use_stderr() { 2 } else { 0 };
            let _ = e.print();
            return code;
        }
    };
    match execute(&cli) {
        Ok(summary) => {
            println!("{}", summary.trim_end());
            0
        }
        Err(e) => {
            eprintln!(
                "relightkit {}: {}",
                cli.command.name(),
                e.to_string().replace('\n', " ")
            );
            e.exit_code()
        }
    }
}
