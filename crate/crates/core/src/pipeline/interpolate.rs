//! Frame interpolation: fit the odd frames, decode the even ones. Index
//! conditioning uses a slower frequency base here so neighbouring indices
//! stay correlated.

use serde::{Deserialize, Serialize};

use super::train::{samples, train_regression, EpochStats, Sample, TrainConfig, Trained};
use super::video::VideoClip;
use crate::decoder::DecoderConfig;
use crate::error::{Error, Result};

/// Frequency base of the positional encoding for interpolation runs.
pub const INTERP_PE_BASE: f64 = 1.05;

/// 1-based odd (train) and even (held-out) frame indices.
pub fn split_odd_even(frames: usize) -> (Vec<usize>, Vec<usize>) {
    (1..=frames).partition(|t| t % 2 == 1)
}

pub fn interpolation_config(mut cfg: DecoderConfig) -> DecoderConfig {
    cfg.pe.b = INTERP_PE_BASE;
    cfg
}

#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct InterpReport {
    pub train_psnr: f64,
    pub psnr: f64,
    pub ms_ssim: f64,
    pub held_out: Vec<usize>,
}

/// Trains on the odd frames of `clip` and evaluates on the even ones.
/// Hybrid decoders get held-out embeddings from the trained encoder.
pub fn train_interpolation(
    model: &mut Trained,
    clip: &VideoClip,
    cfg: &TrainConfig,
    on_epoch: impl FnMut(&EpochStats),
) -> Result<InterpReport> {
    if clip.len() < 2 {
        return Err(Error::Config("interpolation needs at least two frames".into()));
    }
    let (odd, even) = split_odd_even(clip.len());
    let train: Vec<Sample> = samples(clip, &odd)?;
    let test: Vec<Sample> = samples(clip, &even)?;
    train_regression(model, &train, cfg, on_epoch)?;
    let fit = model.evaluate(&train)?;
    let held = model.evaluate(&test)?;
    Ok(InterpReport { train_psnr: fit.psnr, psnr: held.psnr, ms_ssim: held.ms_ssim, held_out: even })
}
