//! Rate-aware fine-tuning followed by entropy coding into a bitstream.
//!
//! Weights get symmetric quantizers and embeddings asymmetric ones, each with
//! its own learned scale. Scales are optimized as `log ς` so one learning
//! rate suits tensors of very different magnitude.

use std::collections::HashMap;

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::optim::{lr_at, Adan, AdanConfig};
use super::train::{evaluate_with, Sample, Trained};
use crate::autograd::{Graph, Var};
use crate::codec::{embedding_name, CoderBackend, QuantizedModel};
use crate::decoder::{DecoderModel, Modulation, Variant};
use crate::error::{Error, Result};
use crate::objectives::{distortion_loss_node, LossWeights};
use crate::quant::{
    cem_loss_node, entropy_model_node, estimate_rate_bits, fit_entropy_model, mixed_quantize_node, quantize,
    rate_target, uniform_noise, QuantMode, QuantParams, QuantVars, TensorCode, DEFAULT_B_AVG, KAPPA_BASELINE,
    KAPPA_HYBRID_BOOST, KAPPA_INDEX_BOOST, SCALE_MIN,
};
use crate::tensor::Tensor;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct CompressConfig {
    pub epochs: usize,
    pub lr: f64,
    pub warmup: f64,
    /// Target average bits per transmitted value.
    pub b_avg: f64,
    pub kappa: f64,
    pub seed: u64,
    pub loss: LossWeights,
    pub adan: AdanConfig,
}

impl CompressConfig {
    /// Defaults for a decoder, with the penalty weight chosen by variant.
    pub fn for_decoder(model: &DecoderModel<f32>) -> Self {
        Self {
            epochs: 100,
            lr: 5e-4,
            warmup: 0.1,
            b_avg: DEFAULT_B_AVG,
            kappa: default_kappa(model.cfg.variant, model.cfg.modulation),
            seed: 2,
            loss: LossWeights::default(),
            adan: AdanConfig::default(),
        }
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.lr > 0.0) || !(self.b_avg > 0.0) || !(self.kappa >= 0.0) || !(0.0..1.0).contains(&self.warmup) {
            return Err(Error::Config(format!(
                "invalid compression settings lr={} b_avg={} kappa={} warmup={}",
                self.lr, self.b_avg, self.kappa, self.warmup
            )));
        }
        self.loss.validate()
    }
}

/// Rate penalty weight: larger for boosted decoders, largest for the hybrid.
pub fn default_kappa(variant: Variant, modulation: Modulation) -> f64 {
    match (modulation, variant) {
        (Modulation::None, _) => KAPPA_BASELINE,
        (_, Variant::HnervBoost) => KAPPA_HYBRID_BOOST,
        _ => KAPPA_INDEX_BOOST,
    }
}

/// Quantizer whose Gaussian entropy estimate is about `bits` per value.
pub fn init_quantizer(x: &[f32], mode: QuantMode, bits: f64) -> QuantParams {
    let n = x.len().max(1) as f64;
    let mean = x.iter().map(|&v| v as f64).sum::<f64>() / n;
    let std = (x.iter().map(|&v| (v as f64 - mean).powi(2)).sum::<f64>() / n).sqrt();
    let scale = if std > 0.0 {
        (std * (2.0 * std::f64::consts::PI * std::f64::consts::E).sqrt() / 2f64.powf(bits)).max(SCALE_MIN * 10.0)
    } else {
        1.0
    };
    match mode {
        QuantMode::Symmetric => QuantParams::symmetric(scale),
        QuantMode::Asymmetric => QuantParams::asymmetric(scale, mean),
    }
}

#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct CompressReport {
    pub b_avg: f64,
    pub kappa: f64,
    pub frames: usize,
    pub numel: usize,
    pub bytes: usize,
    /// From the serialized size.
    pub bpp: f64,
    /// From the stored entropy models.
    pub estimated_bpp: f64,
    pub r_target: f64,
    /// Decoded from the bitstream.
    pub psnr: f64,
    pub ms_ssim: f64,
    /// From the quantized model before serialization.
    pub psnr_in_memory: f64,
    pub final_loss: f64,
}

#[derive(Clone, Debug)]
pub struct Compressed {
    pub model: QuantizedModel,
    pub bytes: Vec<u8>,
    pub report: CompressReport,
}

struct Slot {
    name: String,
    value: Tensor<f32>,
    log_scale: Tensor<f32>,
    offset: Option<Tensor<f32>>,
}

impl Slot {
    fn new(name: String, value: Tensor<f32>, mode: QuantMode, bits: f64) -> Self {
        let q = init_quantizer(value.data(), mode, bits);
        Self {
            name,
            log_scale: Tensor::scalar(q.scale.ln() as f32),
            offset: (mode == QuantMode::Asymmetric).then(|| Tensor::scalar(q.offset as f32)),
            value,
        }
    }

    fn quant(&self) -> QuantParams {
        let scale = (self.log_scale.item() as f64).exp().max(SCALE_MIN * 10.0);
        match &self.offset {
            Some(o) => QuantParams::asymmetric(scale, o.item() as f64),
            None => QuantParams::symmetric(scale),
        }
    }

    fn code(&self) -> Result<TensorCode> {
        let quant = self.quant().to_stored();
        Ok(TensorCode { quant, entropy: fit_entropy_model(self.value.data(), &quant)?.to_stored() })
    }

    /// Entropy-model bits of the hard-quantized tensor.
    fn bits(&self) -> Result<f64> {
        let code = self.code()?;
        let symbols = quantize(self.value.data(), &code.quant)?;
        Ok(estimate_rate_bits(symbols.into_iter().map(f64::from), &code.entropy))
    }
}

/// Vars of one slot on the tape: (value, log scale, offset).
struct OnTape {
    value: Var,
    log_scale: Var,
    offset: Option<Var>,
}

fn put_on_tape(g: &mut Graph<f32>, s: &Slot) -> OnTape {
    OnTape {
        value: g.leaf(s.value.clone()),
        log_scale: g.leaf(s.log_scale.clone()),
        offset: s.offset.as_ref().map(|o| g.leaf(o.clone())),
    }
}

/// Straight-through quantized view and estimated bits of one slot.
fn quantized_view(g: &mut Graph<f32>, t: &OnTape, rng: &mut ChaCha8Rng) -> Result<(Var, Var)> {
    let scale = g.exp(t.log_scale);
    let q = QuantVars { scale, offset: t.offset };
    let noise = uniform_noise(g.shape(t.value).to_vec(), rng);
    let view = mixed_quantize_node(g, t.value, &q, &noise)?;
    let (mu, sigma) = entropy_model_node(g, t.value, &q)?;
    let bits = crate::quant::rate_bits_node(g, view.noisy, mu, sigma)?;
    Ok((view.ste, bits))
}

fn slot_grads<'a>(grads: &'a crate::autograd::Gradients<f32>, t: &OnTape) -> [Option<&'a Tensor<f32>>; 3] {
    [grads.get(t.value), grads.get(t.log_scale), t.offset.and_then(|o| grads.get(o))]
}

/// Fine-tunes `trained` under the rate penalty, then quantizes, serializes
/// with `backend` and measures quality on frames decoded from the bytes.
pub fn finetune_compress(
    trained: &Trained,
    set: &[Sample],
    cfg: &CompressConfig,
    backend: &dyn CoderBackend,
    mut on_epoch: impl FnMut(usize, f64),
) -> Result<Compressed> {
    cfg.validate()?;
    let first = set.first().ok_or_else(|| Error::Config("no frames to compress".into()))?;
    let (_, h, w) = first.target.chw()?;
    let frames = set.len();
    let pixels = frames * h * w;
    let mut decoder = trained.decoder.clone();

    let mut weights: Vec<Slot> = decoder
        .store
        .iter()
        .map(|(_, name, t)| Slot::new(name.to_string(), t.clone(), QuantMode::Symmetric, cfg.b_avg))
        .collect();
    let mut embeddings: Vec<Slot> = Vec::new();
    if decoder.cfg.variant.is_hybrid() {
        for s in set {
            let y = trained.embed(&s.observed())?.ok_or_else(|| Error::Config("hybrid decoder without encoder".into()))?;
            embeddings.push(Slot::new(embedding_name(s.index), y, QuantMode::Asymmetric, cfg.b_avg));
        }
    }
    let numel: usize =
        weights.iter().map(|s| s.value.numel()).sum::<usize>() + embeddings.iter().map(|s| s.value.numel()).sum::<usize>();
    let r_target = rate_target(numel, cfg.b_avg, frames, h, w);
    let mut emb_bits: Vec<f64> = embeddings.iter().map(Slot::bits).collect::<Result<_>>()?;

    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    let mut opt = Adan::new(cfg.adan);
    let mut order: Vec<usize> = (0..frames).collect();
    let mut final_loss = f64::NAN;
    let ids: Vec<_> = decoder.store.ids().collect();
    for epoch in 0..cfg.epochs {
        order.shuffle(&mut rng);
        let mut loss_sum = 0.0;
        for (i, &k) in order.iter().enumerate() {
            let s = &set[k];
            let lr = lr_at((epoch as f64 + i as f64 / frames as f64) / cfg.epochs as f64, cfg.lr, cfg.warmup);
            let mut g = Graph::new();
            let mut bound = decoder.store.bind(&mut g, false);
            let tape: Vec<OnTape> = weights.iter().map(|s| put_on_tape(&mut g, s)).collect();
            let mut bits = Vec::with_capacity(tape.len() + 1);
            for (id, t) in ids.iter().zip(&tape) {
                let (ste, b) = quantized_view(&mut g, t, &mut rng)?;
                bound.replace(*id, ste);
                bits.push(b);
            }
            let emb = embeddings.get(k).map(|e| put_on_tape(&mut g, e));
            let y = match &emb {
                Some(t) => {
                    let (ste, b) = quantized_view(&mut g, t, &mut rng)?;
                    bits.push(b);
                    Some(ste)
                }
                None => None,
            };
            let mut total = bits[0];
            for b in &bits[1..] {
                total = g.add(total, *b)?;
            }
            let others: f64 = emb_bits.iter().enumerate().filter(|(j, _)| *j != k).map(|(_, b)| b).sum();
            let total = g.add_scalar(total, others as f32);
            let out = decoder.frame_forward(&mut g, &bound, y, s.t_norm)?;
            let dist = distortion_loss_node(&mut g, out, &s.target, &cfg.loss)?;
            let loss = cem_loss_node(&mut g, dist, total, pixels, r_target, cfg.kappa)?;
            let lv = g.value(loss).item() as f64;
            if !lv.is_finite() {
                return Err(Error::Diverged(format!("compression loss became {lv} in epoch {}", epoch + 1)));
            }
            loss_sum += lv;
            let grads = g.backward(loss);

            let mut params: Vec<&mut Tensor<f32>> = Vec::new();
            let mut gs: Vec<Option<&Tensor<f32>>> = Vec::new();
            for (slot, t) in weights.iter_mut().zip(&tape) {
                let [gv, gl, _] = slot_grads(&grads, t);
                params.push(&mut slot.value);
                params.push(&mut slot.log_scale);
                gs.push(gv);
                gs.push(gl);
            }
            // every embedding keeps a fixed position in the optimizer state
            for (j, slot) in embeddings.iter_mut().enumerate() {
                let [gv, gl, go] = match (&emb, j == k) {
                    (Some(t), true) => slot_grads(&grads, t),
                    _ => [None, None, None],
                };
                params.push(&mut slot.value);
                params.push(&mut slot.log_scale);
                gs.push(gv);
                gs.push(gl);
                if let Some(o) = slot.offset.as_mut() {
                    params.push(o);
                    gs.push(go);
                }
            }
            opt.step(&mut params, &gs, lr);
            for (id, slot) in ids.iter().zip(&weights) {
                *decoder.store.get_mut(*id) = slot.value.clone();
            }
            if let Some(e) = embeddings.get(k) {
                emb_bits[k] = e.bits()?;
            }
        }
        final_loss = loss_sum / frames as f64;
        log::debug!("compress epoch {} loss {final_loss:.5}", epoch + 1);
        on_epoch(epoch + 1, final_loss);
    }

    let mut codes = HashMap::new();
    for s in weights.iter().chain(&embeddings) {
        codes.insert(s.name.clone(), s.code()?);
    }
    let embs: Vec<(usize, Tensor<f32>)> = set.iter().zip(&embeddings).map(|(s, e)| (s.index, e.value.clone())).collect();
    let model = QuantizedModel::quantize(&decoder, &embs, &codes, frames)?;
    let bytes = model.to_bytes(backend)?;

    let in_memory = decode_eval(&model, set)?;
    let decoded = QuantizedModel::from_bytes(&bytes, backend)?;
    let eval = decode_eval(&decoded, set)?;
    let report = CompressReport {
        b_avg: cfg.b_avg,
        kappa: cfg.kappa,
        frames,
        numel,
        bytes: bytes.len(),
        bpp: bytes.len() as f64 * 8.0 / pixels as f64,
        estimated_bpp: model.estimated_bits() / pixels as f64,
        r_target,
        psnr: eval.psnr,
        ms_ssim: eval.ms_ssim,
        psnr_in_memory: in_memory.psnr,
        final_loss,
    };
    Ok(Compressed { model, bytes, report })
}

/// Quality of a quantized model on `set`, matching embeddings by frame index.
pub fn decode_eval(model: &QuantizedModel, set: &[Sample]) -> Result<super::train::EvalStats> {
    let (decoder, embs) = model.dequantize()?;
    let embs: HashMap<usize, Tensor<f32>> = embs.into_iter().collect();
    evaluate_with(set, |s| {
        let y = match decoder.cfg.variant.is_hybrid() {
            true => Some(embs.get(&s.index).ok_or_else(|| Error::Config(format!("no embedding for frame {}", s.index)))?),
            false => None,
        };
        decoder.decode_frame(y, s.t_norm)
    })
}
