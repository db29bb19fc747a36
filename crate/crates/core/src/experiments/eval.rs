//! Masked evaluation of a model on capture pairs.

use serde::{Deserialize, Serialize};

use super::data::{pair_item, ItemOptions};
use crate::diffusion::{Schedule, X0Predictor};
use crate::error::Result;
use crate::image::Image;
use crate::infer::{ddim_sample, DdimConfig};
use crate::metrics::{masked_metric, masked_psnr, ssim};
use crate::parallel::par_map;
use crate::synthstage::CaptureSet;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct PairScore {
    pub index: usize,
    pub t: usize,
    pub camera_id: usize,
    pub light_id: usize,
    pub psnr: f64,
    /// `None` when the subject box is smaller than the SSIM window.
    pub ssim: Option<f64>,
    /// Input frame scored directly against the target.
    pub baseline_psnr: f64,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct EvalSummary {
    pub n: usize,
    pub mean_psnr: f64,
    pub mean_ssim: Option<f64>,
    pub mean_baseline_psnr: f64,
    pub scores: Vec<PairScore>,
}

impl EvalSummary {
    pub fn from_scores(scores: Vec<PairScore>) -> Self {
        let n = scores.len();
        let mean =
            |f: &dyn Fn(&PairScore) -> f64| scores.iter().map(f).sum::<f64>() / n.max(1) as f64;
        let ssims: Vec<f64> = scores.iter().filter_map(|s| s.ssim).collect();
        EvalSummary {
            n,
            mean_psnr: mean(&|s| s.psnr),
            mean_ssim: (!ssims.is_empty()).then(|| ssims.iter().sum::<f64>() / ssims.len() as f64),
            mean_baseline_psnr: mean(&|s| s.baseline_psnr),
            scores,
        }
    }
}

/// Sample a prediction for every listed pair (index order); `opts` shapes the model input.
pub fn predict_pairs(
    model: &dyn X0Predictor,
    schedule: &Schedule,
    capture: &CaptureSet,
    indices: &[usize],
    opts: &ItemOptions,
    ddim: &DdimConfig,
) -> Result<Vec<Image>> {
    par_map(indices.len(), |i| {
        let item = pair_item(capture, &capture.pairs[indices[i]], opts)?;
        ddim_sample(model, schedule, &item.flat, &item.env, ddim)
    })
    .into_iter()
    .collect()
}

/// Score predictions against the relit ground truth inside its subject mask.
pub fn score_pairs(
    capture: &CaptureSet,
    indices: &[usize],
    predictions: &[Image],
    opts: &ItemOptions,
) -> Result<EvalSummary> {
    let mut scores = Vec::with_capacity(indices.len());
    for (&idx, pred) in indices.iter().zip(predictions) {
        let pair = &capture.pairs[idx];
        let input = pair_item(capture, pair, opts)?.flat;
        let mask = &pair.relit_mask;
        scores.push(PairScore {
            index: idx,
            t: pair.t,
            camera_id: pair.camera_id,
            light_id: pair.light_id,
            psnr: masked_psnr(pred, &pair.relit, mask)?,
            ssim: masked_metric(ssim, pred, &pair.relit, mask).ok(),
            baseline_psnr: masked_psnr(&input, &pair.relit, mask)?,
        });
    }
    Ok(EvalSummary::from_scores(scores))
}

pub fn evaluate(
    model: &dyn X0Predictor,
    schedule: &Schedule,
    capture: &CaptureSet,
    indices: &[usize],
    opts: &ItemOptions,
    ddim: &DdimConfig,
) -> Result<EvalSummary> {
    let preds = predict_pairs(model, schedule, capture, indices, opts, ddim)?;
    score_pairs(capture, indices, &preds, opts)
}
