//! Inpainting: train on frames with hidden regions, then measure how well
//! the hidden pixels are filled in.

use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::train::{evaluate_with, train_regression, Sample, TrainConfig, Trained};
use crate::error::{Error, Result};
use crate::objectives::psnr_from_mse;
use crate::tensor::Tensor;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum MaskSpec {
    /// `count` squares of side `size`, one per randomly chosen grid cell.
    Disperse { count: usize, size: usize, seed: u64 },
    /// One centred rectangle of `W/4 x H/4`.
    Central,
}

impl Default for MaskSpec {
    fn default() -> Self {
        Self::Disperse { count: 5, size: 50, seed: 11 }
    }
}

impl std::str::FromStr for MaskSpec {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "disperse" => Ok(Self::default()),
            "central" => Ok(Self::Central),
            other => Err(Error::Config(format!("unknown mask {other:?} (expected disperse or central)"))),
        }
    }
}

/// `[H, W]` visibility map: 1 = visible, 0 = hidden.
pub fn build_mask(spec: &MaskSpec, h: usize, w: usize) -> Result<Tensor<f32>> {
    let mut m = Tensor::full(vec![h, w], 1.0f32);
    let mut hide = |y0: usize, x0: usize, mh: usize, mw: usize| {
        let d = m.data_mut();
        for y in y0..(y0 + mh).min(h) {
            d[y * w + x0..(x0 + mw).min(w) + y * w].fill(0.0);
        }
    };
    match *spec {
        MaskSpec::Central => {
            let (mh, mw) = (h / 4, w / 4);
            if mh == 0 || mw == 0 {
                return Err(Error::Config(format!("frame {h}x{w} too small for a central mask")));
            }
            hide((h - mh) / 2, (w - mw) / 2, mh, mw);
        }
        MaskSpec::Disperse { count, size, seed } => {
            let (rows, cols) = (h / size.max(1), w / size.max(1));
            if size == 0 || rows * cols < count {
                return Err(Error::Config(format!("{count} squares of {size}px do not fit a {h}x{w} frame")));
            }
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            let mut cells: Vec<usize> = (0..rows * cols).collect();
            cells.shuffle(&mut rng);
            let (ch, cw) = (h / rows, w / cols);
            for &c in &cells[..count] {
                let (r, k) = (c / cols, c % cols);
                let y = r * ch + rng.gen_range(0..=ch - size);
                let x = k * cw + rng.gen_range(0..=cw - size);
                hide(y, x, size, size);
            }
        }
    }
    Ok(m)
}

#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct InpaintReport {
    /// Over the whole frame, against the unmasked original.
    pub psnr: f64,
    pub ms_ssim: f64,
    /// Over hidden pixels only.
    pub psnr_hidden: f64,
    pub psnr_visible: f64,
    pub hidden_fraction: f64,
}

/// PSNR over the pixels where `mask` equals `want`.
pub fn region_psnr(target: &Tensor<f32>, out: &Tensor<f32>, mask: &Tensor<f32>, want: f32) -> f64 {
    let hw = mask.numel();
    let (mut se, mut n) = (0.0, 0usize);
    for (i, (a, b)) in out.data().iter().zip(target.data()).enumerate() {
        if mask.data()[i % hw] == want {
            se += (*a as f64 - *b as f64).powi(2);
            n += 1;
        }
    }
    psnr_from_mse(se / n.max(1) as f64)
}

/// Attaches `mask` to every sample, trains, and scores the fill-in.
pub fn train_inpainting(
    model: &mut Trained,
    set: &[Sample],
    mask: &Tensor<f32>,
    cfg: &TrainConfig,
    on_epoch: impl FnMut(&super::train::EpochStats),
) -> Result<InpaintReport> {
    let masked: Vec<Sample> = set.iter().map(|s| Sample { mask: Some(mask.clone()), ..s.clone() }).collect();
    train_regression(model, &masked, cfg, on_epoch)?;
    let (mut hidden, mut visible) = (0.0, 0.0);
    let full = evaluate_with(&masked, |s| {
        let out = model.reconstruct(s)?;
        hidden += region_psnr(&s.target, &out, mask, 0.0);
        visible += region_psnr(&s.target, &out, mask, 1.0);
        Ok(out)
    })?;
    let n = set.len().max(1) as f64;
    Ok(InpaintReport {
        psnr: full.psnr,
        ms_ssim: full.ms_ssim,
        psnr_hidden: hidden / n,
        psnr_visible: visible / n,
        hidden_fraction: mask.data().iter().filter(|&&v| v == 0.0).count() as f64 / mask.numel() as f64,
    })
}
