//! Reconstruction losses and quality metrics. Frames are `[3, H, W]` tensors
//! with values nominally in `[0, 1]`; every loss is a mean over elements.

use serde::{Deserialize, Serialize};

use crate::autograd::{FreqMode, Graph, Var};
use crate::error::{Error, Result};
use crate::tensor::{Real, Tensor};

pub const MS_SSIM_WEIGHTS: [f64; 5] = [0.0448, 0.2856, 0.3001, 0.2363, 0.1333];
pub const SSIM_WINDOW: usize = 11;
pub const SSIM_SIGMA: f64 = 1.5;
const SSIM_C1: f64 = 0.01 * 0.01;
const SSIM_C2: f64 = 0.03 * 0.03;
/// Floor applied to per-level similarity terms before the fractional
/// powers, keeping their gradients finite.
const SSIM_FLOOR: f64 = 1e-6;

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum PixelNorm {
    #[default]
    L1,
    L2,
}

/// Scaling of the 2-D FFT feeding the frequency loss. `Ortho` divides by
/// `sqrt(H·W)`; `Backward` is the unnormalized forward transform.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum FftNorm {
    #[default]
    Ortho,
    Backward,
}

/// `L = w_f·L_freq + λα·L_pix + λ(1-α)(1 - MS-SSIM)`
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct LossWeights {
    pub lambda: f64,
    pub alpha: f64,
    /// Weight of the frequency term; 0 removes it.
    pub freq_weight: f64,
    pub freq_mode: FreqMode,
    pub fft_norm: FftNorm,
    pub pixel: PixelNorm,
}

impl Default for LossWeights {
    fn default() -> Self {
        Self {
            lambda: 60.0,
            alpha: 0.7,
            freq_weight: 1.0,
            freq_mode: FreqMode::ComplexDiff,
            fft_norm: FftNorm::Ortho,
            pixel: PixelNorm::L1,
        }
    }
}

impl LossWeights {
    /// Plain mean squared error.
    pub fn l2() -> Self {
        Self { lambda: 1.0, alpha: 1.0, freq_weight: 0.0, pixel: PixelNorm::L2, ..Self::default() }
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.lambda > 0.0) || !(0.0..=1.0).contains(&self.alpha) || !(self.freq_weight >= 0.0) {
            return Err(Error::Config(format!(
                "invalid loss weights lambda={} alpha={} freq_weight={}",
                self.lambda, self.alpha, self.freq_weight
            )));
        }
        Ok(())
    }
}

fn gaussian_window<T: Real>() -> Vec<T> {
    let c = (SSIM_WINDOW / 2) as f64;
    let raw: Vec<f64> =
        (0..SSIM_WINDOW).map(|i| (-(i as f64 - c).powi(2) / (2.0 * SSIM_SIGMA * SSIM_SIGMA)).exp()).collect();
    let s: f64 = raw.iter().sum();
    raw.into_iter().map(|v| T::lit(v / s)).collect()
}

/// Number of MS-SSIM scales usable at `h x w` (at most 5).
pub fn ms_ssim_levels(h: usize, w: usize) -> Result<usize> {
    let side = h.min(w);
    if side < SSIM_WINDOW {
        return Err(Error::Shape(format!("{h}x{w} image is smaller than the {SSIM_WINDOW}-pixel SSIM window")));
    }
    Ok((1..=MS_SSIM_WEIGHTS.len()).rev().find(|&l| side >> (l - 1) >= SSIM_WINDOW).unwrap_or(1))
}

/// Level weights, renormalized to sum to one when fewer than five scales fit.
pub fn ms_ssim_weights(levels: usize) -> Vec<f64> {
    let w = &MS_SSIM_WEIGHTS[..levels];
    let s: f64 = w.iter().sum();
    w.iter().map(|v| v / s).collect()
}

/// Per-channel `(luminance·cs, cs)` means at one scale.
fn ssim_terms<T: Real>(g: &mut Graph<T>, x: Var, y: Var, win: &[T]) -> Result<(Var, Var)> {
    let mu_x = g.blur_valid(x, win)?;
    let mu_y = g.blur_valid(y, win)?;
    let xx = g.mul(x, x)?;
    let yy = g.mul(y, y)?;
    let xy = g.mul(x, y)?;
    let e_xx = g.blur_valid(xx, win)?;
    let e_yy = g.blur_valid(yy, win)?;
    let e_xy = g.blur_valid(xy, win)?;
    let mx2 = g.mul(mu_x, mu_x)?;
    let my2 = g.mul(mu_y, mu_y)?;
    let mxy = g.mul(mu_x, mu_y)?;
    let s_xx = g.sub(e_xx, mx2)?;
    let s_yy = g.sub(e_yy, my2)?;
    let s_xy = g.sub(e_xy, mxy)?;

    let num = g.scale(s_xy, T::lit(2.0));
    let num = g.add_scalar(num, T::lit(SSIM_C2));
    let den = g.add(s_xx, s_yy)?;
    let den = g.add_scalar(den, T::lit(SSIM_C2));
    let cs_map = g.div(num, den)?;

    let lnum = g.scale(mxy, T::lit(2.0));
    let lnum = g.add_scalar(lnum, T::lit(SSIM_C1));
    let lden = g.add(mx2, my2)?;
    let lden = g.add_scalar(lden, T::lit(SSIM_C1));
    let lum = g.div(lnum, lden)?;
    let ssim_map = g.mul(lum, cs_map)?;
    Ok((g.channel_mean(ssim_map), g.channel_mean(cs_map)))
}

/// Differentiable MS-SSIM between two `[C, H, W]` nodes, averaged over channels.
pub fn ms_ssim_node<T: Real>(g: &mut Graph<T>, x: Var, y: Var) -> Result<Var> {
    let (_, h, w) = g.value(x).chw()?;
    if g.shape(x) != g.shape(y) {
        return Err(Error::Shape(format!("ms_ssim operands {:?} and {:?}", g.shape(x), g.shape(y))));
    }
    let levels = ms_ssim_levels(h, w)?;
    let weights = ms_ssim_weights(levels);
    let win = gaussian_window::<T>();
    let (mut x, mut y) = (x, y);
    let mut acc: Option<Var> = None;
    for (l, &wt) in weights.iter().enumerate() {
        let (ssim, cs) = ssim_terms(g, x, y, &win)?;
        let term = if l + 1 == levels { ssim } else { cs };
        let term = g.clamp_min(term, T::lit(SSIM_FLOOR));
        let term = g.pow_scalar(term, T::lit(wt));
        acc = Some(match acc {
            Some(a) => g.mul(a, term)?,
            None => term,
        });
        if l + 1 < levels {
            x = g.avg_pool2(x)?;
            y = g.avg_pool2(y)?;
        }
    }
    Ok(g.mean(acc.expect("at least one level")))
}

pub fn ms_ssim<T: Real>(x: &Tensor<T>, y: &Tensor<T>) -> Result<f64> {
    let mut g = Graph::new();
    let (a, b) = (g.constant(x.clone()), g.constant(y.clone()));
    let v = ms_ssim_node(&mut g, a, b)?;
    Ok(g.value(v).item().as_f64())
}

/// Mean modulus of the spectrum difference between `xhat` and `x`.
pub fn frequency_l1_node<T: Real>(
    g: &mut Graph<T>,
    xhat: Var,
    x: &Tensor<T>,
    mode: FreqMode,
    norm: FftNorm,
) -> Result<Var> {
    let d = g.freq_distance(xhat, x, mode)?;
    let (_, h, w) = x.chw()?;
    Ok(match (norm, mode) {
        (FftNorm::Ortho, _) => d,
        (FftNorm::Backward, FreqMode::ComplexL2) => g.scale(d, T::lit((h * w) as f64)),
        (FftNorm::Backward, _) => g.scale(d, T::lit(((h * w) as f64).sqrt())),
    })
}

pub fn frequency_l1<T: Real>(x: &Tensor<T>, xhat: &Tensor<T>) -> Result<f64> {
    let mut g = Graph::new();
    let v = g.constant(xhat.clone());
    let d = frequency_l1_node(&mut g, v, x, FreqMode::ComplexDiff, FftNorm::Ortho)?;
    Ok(g.value(d).item().as_f64())
}

/// Distortion loss of the reconstruction node `xhat` against the frame `x`.
pub fn distortion_loss_node<T: Real>(g: &mut Graph<T>, xhat: Var, x: &Tensor<T>, w: &LossWeights) -> Result<Var> {
    w.validate()?;
    if g.shape(xhat) != x.shape() {
        return Err(Error::Shape(format!("reconstruction {:?} vs frame {:?}", g.shape(xhat), x.shape())));
    }
    let target = g.constant(x.clone());
    let diff = g.sub(xhat, target)?;
    let pix = match w.pixel {
        PixelNorm::L1 => g.abs(diff),
        PixelNorm::L2 => g.sqr(diff),
    };
    let pix = g.mean(pix);
    let mut loss = g.scale(pix, T::lit(w.lambda * w.alpha));
    if w.alpha < 1.0 {
        let ms = ms_ssim_node(g, xhat, target)?;
        let one_minus = g.neg(ms);
        let one_minus = g.add_scalar(one_minus, T::one());
        let term = g.scale(one_minus, T::lit(w.lambda * (1.0 - w.alpha)));
        loss = g.add(loss, term)?;
    }
    if w.freq_weight > 0.0 {
        let f = frequency_l1_node(g, xhat, x, w.freq_mode, w.fft_norm)?;
        let f = g.scale(f, T::lit(w.freq_weight));
        loss = g.add(loss, f)?;
    }
    Ok(loss)
}

pub fn distortion_loss<T: Real>(x: &Tensor<T>, xhat: &Tensor<T>, w: &LossWeights) -> Result<f64> {
    let mut g = Graph::new();
    let v = g.constant(xhat.clone());
    let l = distortion_loss_node(&mut g, v, x, w)?;
    Ok(g.value(l).item().as_f64())
}

/// Distortion restricted to visible pixels: both the reconstruction and the
/// target are multiplied by `mask` (an `[H, W]` map, 1 = visible), so hidden
/// pixels contribute no gradient and hidden target values never enter the
/// loss, not even through the MS-SSIM windows that straddle the mask edge.
pub fn masked_distortion_loss_node<T: Real>(
    g: &mut Graph<T>,
    xhat: Var,
    x: &Tensor<T>,
    mask: &Tensor<T>,
    w: &LossWeights,
) -> Result<Var> {
    let (c, h, wd) = x.chw()?;
    if mask.shape() != [h, wd] {
        return Err(Error::Shape(format!("mask {:?} does not match frame {h}x{wd}", mask.shape())));
    }
    let plane = h * wd;
    let keep = Tensor::from_fn(vec![c, h, wd], |i| mask.data()[i % plane]);
    let observed = Tensor::from_fn(vec![c, h, wd], |i| mask.data()[i % plane] * x.data()[i]);
    let keep = g.constant(keep);
    let kept = g.mul(xhat, keep)?;
    distortion_loss_node(g, kept, &observed, w)
}

pub fn mse<T: Real>(x: &Tensor<T>, xhat: &Tensor<T>) -> Result<f64> {
    if x.shape() != xhat.shape() {
        return Err(Error::Shape(format!("mse operands {:?} and {:?}", x.shape(), xhat.shape())));
    }
    let n = x.numel().max(1) as f64;
    Ok(x.data().iter().zip(xhat.data()).map(|(a, b)| (a.as_f64() - b.as_f64()).powi(2)).sum::<f64>() / n)
}

/// `10·log10(1 / mse)`; identical inputs give `f64::INFINITY`.
pub fn psnr_from_mse(mse: f64) -> f64 {
    if mse == 0.0 {
        f64::INFINITY
    } else {
        -10.0 * mse.log10()
    }
}

pub fn psnr<T: Real>(x: &Tensor<T>, xhat: &Tensor<T>) -> Result<f64> {
    Ok(psnr_from_mse(mse(x, xhat)?))
}

pub fn bpp(total_bits: f64, frames: usize, h: usize, w: usize) -> f64 {
    total_bits / (frames * h * w) as f64
}
