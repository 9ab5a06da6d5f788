//! Learned scalar quantizers, the per-tensor Gaussian entropy model and the
//! rate-regularized objective.
//!
//! Symbols live in a unit-bin domain: a value `x` maps to `(x - η) / ς`, and
//! the entropy model is a Gaussian over that domain convolved with a unit
//! box, so the probability of an integer symbol is the Gaussian mass of its
//! bin.

use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::autograd::{Graph, Var};
use crate::error::{Error, Result};
use crate::tensor::{Real, Tensor};

pub const SCALE_MIN: f64 = 1e-9;
pub const SIGMA_MIN: f64 = 1e-6;
pub const P_MIN: f64 = 1e-9;
pub const DEFAULT_B_AVG: f64 = 4.0;

/// κ for unmodified baselines.
pub const KAPPA_BASELINE: f64 = 0.05;
/// κ for the boosted index-based variants.
pub const KAPPA_INDEX_BOOST: f64 = 0.2;
/// κ for the boosted hybrid variant.
pub const KAPPA_HYBRID_BOOST: f64 = 0.5;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum QuantMode {
    /// Weights: zero offset.
    Symmetric,
    /// Embeddings: learned offset.
    Asymmetric,
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct QuantParams {
    pub scale: f64,
    pub offset: f64,
    pub mode: QuantMode,
}

impl QuantParams {
    pub fn symmetric(scale: f64) -> Self {
        Self { scale, offset: 0.0, mode: QuantMode::Symmetric }
    }

    pub fn asymmetric(scale: f64, offset: f64) -> Self {
        Self { scale, offset, mode: QuantMode::Asymmetric }
    }

    /// Initial lattice spanning `x` at `bits` bits.
    pub fn init<T: Real>(x: &[T], mode: QuantMode, bits: f64) -> Self {
        let (lo, hi) = x.iter().fold((f64::INFINITY, f64::NEG_INFINITY), |(lo, hi), v| {
            let v = v.as_f64();
            (lo.min(v), hi.max(v))
        });
        let offset = match mode {
            QuantMode::Symmetric => 0.0,
            QuantMode::Asymmetric if lo.is_finite() => 0.5 * (lo + hi),
            QuantMode::Asymmetric => 0.0,
        };
        let spread = x.iter().map(|v| (v.as_f64() - offset).abs()).fold(0.0, f64::max);
        let levels = (2f64.powf(bits) - 1.0).max(1.0);
        let scale = if spread > 0.0 { (2.0 * spread / levels).max(SCALE_MIN) } else { 1.0 };
        Self { scale, offset, mode }
    }

    /// Rounds both parameters to the nearest `f32`, the precision they are
    /// stored at in the bitstream.
    pub fn to_stored(self) -> Self {
        Self { scale: self.scale as f32 as f64, offset: self.offset as f32 as f64, mode: self.mode }
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.scale > SCALE_MIN) || !self.scale.is_finite() || !self.offset.is_finite() {
            return Err(Error::Domain(format!("quantizer scale {} / offset {} out of range", self.scale, self.offset)));
        }
        if self.mode == QuantMode::Symmetric && self.offset != 0.0 {
            return Err(Error::Domain("symmetric quantizer with nonzero offset".into()));
        }
        Ok(())
    }
}

/// `round((x - η) / ς)` with ties to even.
pub fn quantize<T: Real>(x: &[T], q: &QuantParams) -> Result<Vec<i32>> {
    q.validate()?;
    x.iter()
        .map(|v| {
            let s = ((v.as_f64() - q.offset) / q.scale).round_ties_even();
            if !s.is_finite() || s.abs() > (i32::MAX / 2) as f64 {
                return Err(Error::Domain(format!("value {v} does not quantize to a finite symbol")));
            }
            Ok(s as i32)
        })
        .collect()
}

/// `symbol · ς + η`.
pub fn dequantize(symbols: &[i32], q: &QuantParams) -> Vec<f64> {
    symbols.iter().map(|&s| s as f64 * q.scale + q.offset).collect()
}

pub fn dequantize_tensor<T: Real>(symbols: &[i32], q: &QuantParams, shape: Vec<usize>) -> Result<Tensor<T>> {
    Tensor::new(shape, dequantize(symbols, q).into_iter().map(T::lit).collect())
}

/// Symbol-domain Gaussian `(μ_s, σ_s)`; two scalars per tensor.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct EntropyParams {
    pub mu: f64,
    pub sigma: f64,
}

impl EntropyParams {
    pub fn to_stored(self) -> Self {
        Self { mu: self.mu as f32 as f64, sigma: (self.sigma as f32 as f64).max(SIGMA_MIN) }
    }
}

/// Probability of the unit bin centred at `v` under `N(μ_s, σ_s²)`, floored
/// at [`P_MIN`]. The mass is computed from complementary error functions on
/// the distance to the mean, which stays accurate far into the tails.
pub fn symbol_likelihood(v: f64, m: &EntropyParams) -> f64 {
    let s = m.sigma.max(SIGMA_MIN) * std::f64::consts::SQRT_2;
    let d = (v - m.mu).abs();
    let p = 0.5 * (libm::erfc((d - 0.5) / s) - libm::erfc((d + 0.5) / s));
    p.max(P_MIN)
}

/// `μ_s = (mean(x) - η) / ς`, `σ_s = max(std(x) / ς, σ_min)` using the
/// population standard deviation.
pub fn fit_entropy_model<T: Real>(x: &[T], q: &QuantParams) -> Result<EntropyParams> {
    if x.is_empty() {
        return Err(Error::Domain("entropy model of an empty tensor".into()));
    }
    q.validate()?;
    let n = x.len() as f64;
    let mean = x.iter().map(|v| v.as_f64()).sum::<f64>() / n;
    let var = x.iter().map(|v| (v.as_f64() - mean).powi(2)).sum::<f64>() / n;
    Ok(EntropyParams { mu: (mean - q.offset) / q.scale, sigma: (var.sqrt() / q.scale).max(SIGMA_MIN) })
}

/// `Σ -log2 p(v)` over the given symbol-domain values.
pub fn estimate_rate_bits(values: impl IntoIterator<Item = f64>, m: &EntropyParams) -> f64 {
    let mut bits = 0.0;
    for v in values {
        bits -= symbol_likelihood(v, m).log2();
    }
    bits
}

/// Quantizer and entropy model of one tensor.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct TensorCode {
    pub quant: QuantParams,
    pub entropy: EntropyParams,
}

/// Rate against its target, both in bits per pixel.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct RateBudget {
    pub r: f64,
    pub r_target: f64,
    pub b_avg: f64,
    pub kappa: f64,
}

/// `R_target = B_avg · numel / (T·H·W)` where `numel` counts every
/// transmitted value (all frame embeddings plus decoder and temporal
/// network parameters).
pub fn rate_target(numel: usize, b_avg: f64, frames: usize, h: usize, w: usize) -> f64 {
    b_avg * numel as f64 / (frames * h * w) as f64
}

pub fn rate_budget(total_bits: f64, numel: usize, b_avg: f64, kappa: f64, frames: usize, h: usize, w: usize) -> RateBudget {
    RateBudget {
        r: total_bits / (frames * h * w) as f64,
        r_target: rate_target(numel, b_avg, frames, h, w),
        b_avg,
        kappa,
    }
}

/// `L_d + κ · ReLU(R - R_target)`.
pub fn cem_loss(distortion: f64, budget: &RateBudget) -> f64 {
    distortion + budget.kappa * (budget.r - budget.r_target).max(0.0)
}

/// Quantizer parameters of one tensor as graph nodes (single-element).
#[derive(Clone, Copy, Debug)]
pub struct QuantVars {
    pub scale: Var,
    pub offset: Option<Var>,
}

/// The two training-time views of a quantized tensor.
#[derive(Clone, Copy, Debug)]
pub struct MixedView {
    /// `(x - η)/ς + u`, `u ~ U(-1/2, 1/2)`; feeds the rate term.
    pub noisy: Var,
    /// `ς·round((x - η)/ς) + η` with a straight-through round; feeds the
    /// forward pass.
    pub ste: Var,
}

/// Uniform `U(-1/2, 1/2)` noise of the given shape.
pub fn uniform_noise<T: Real>(shape: Vec<usize>, rng: &mut impl Rng) -> Tensor<T> {
    Tensor::from_fn(shape, |_| T::lit(rng.gen_range(-0.5..0.5)))
}

fn to_symbol_domain<T: Real>(g: &mut Graph<T>, x: Var, q: &QuantVars) -> Result<Var> {
    let centred = match q.offset {
        Some(eta) => {
            let neg = g.neg(eta);
            g.add_scalar_var(x, neg)?
        }
        None => x,
    };
    let inv = g.recip(q.scale);
    g.mul_scalar_var(centred, inv)
}

pub fn mixed_quantize_node<T: Real>(g: &mut Graph<T>, x: Var, q: &QuantVars, noise: &Tensor<T>) -> Result<MixedView> {
    if g.shape(x) != noise.shape() {
        return Err(Error::Shape(format!("noise {:?} for tensor {:?}", noise.shape(), g.shape(x))));
    }
    let s = to_symbol_domain(g, x, q)?;
    let u = g.constant(noise.clone());
    let noisy = g.add(s, u)?;
    let r = g.ste_round(s);
    let scaled = g.mul_scalar_var(r, q.scale)?;
    let ste = match q.offset {
        Some(eta) => g.add_scalar_var(scaled, eta)?,
        None => scaled,
    };
    Ok(MixedView { noisy, ste })
}

/// Differentiable `(μ_s, σ_s)` of a continuous tensor.
pub fn entropy_model_node<T: Real>(g: &mut Graph<T>, x: Var, q: &QuantVars) -> Result<(Var, Var)> {
    let mean = g.mean(x);
    let neg_mean = g.neg(mean);
    let centred = g.add_scalar_var(x, neg_mean)?;
    let sq = g.sqr(centred);
    let var = g.mean(sq);
    let std = g.sqrt(var);
    let inv = g.recip(q.scale);
    let sigma = g.mul(std, inv)?;
    let sigma = g.clamp_min(sigma, T::lit(SIGMA_MIN));
    let mu_num = match q.offset {
        Some(eta) => g.sub(mean, eta)?,
        None => mean,
    };
    let mu = g.mul(mu_num, inv)?;
    Ok((mu, sigma))
}

/// `Σ -log2 p(v)` over the symbol-domain node `v`.
pub fn rate_bits_node<T: Real>(g: &mut Graph<T>, v: Var, mu: Var, sigma: Var) -> Result<Var> {
    let neg_mu = g.neg(mu);
    let d = g.add_scalar_var(v, neg_mu)?;
    let d = g.abs(d);
    let inv = g.recip(sigma);
    let inv = g.scale(inv, T::lit(std::f64::consts::FRAC_1_SQRT_2));
    let lo = g.add_scalar(d, T::lit(-0.5));
    let lo = g.mul_scalar_var(lo, inv)?;
    let hi = g.add_scalar(d, T::lit(0.5));
    let hi = g.mul_scalar_var(hi, inv)?;
    let a = g.erfc(lo);
    let b = g.erfc(hi);
    let p = g.sub(a, b)?;
    let p = g.scale(p, T::lit(0.5));
    let p = g.clamp_min(p, T::lit(P_MIN));
    let ln_p = g.ln(p);
    let total = g.sum(ln_p);
    Ok(g.scale(total, T::lit(-std::f64::consts::LOG2_E)))
}

/// `L_d + κ · ReLU(bits / pixels - R_target)` on the tape.
pub fn cem_loss_node<T: Real>(
    g: &mut Graph<T>,
    distortion: Var,
    total_bits: Var,
    pixels: usize,
    r_target: f64,
    kappa: f64,
) -> Result<Var> {
    let r = g.scale(total_bits, T::lit(1.0 / pixels as f64));
    let excess = g.add_scalar(r, T::lit(-r_target));
    let excess = g.relu(excess);
    let pen = g.scale(excess, T::lit(kappa));
    g.add(distortion, pen)
}

#[cfg(test)]
mod tests;
