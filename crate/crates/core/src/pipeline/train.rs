//! Regression training of a decoder (and, for the hybrid variant, its frame
//! encoder) on a set of frames.

use std::time::Instant;

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::optim::{lr_at, Adan, AdanConfig};
use super::video::VideoClip;
use crate::autograd::{Graph, Var};
use crate::checkpoint::Checkpoint;
use crate::decoder::{DecoderConfig, DecoderModel};
use crate::encoder::{EncoderConfig, FrameEncoder, ENCODER_PREFIX};
use crate::error::{Error, Result};
use crate::objectives::{distortion_loss_node, masked_distortion_loss_node, ms_ssim, mse, psnr_from_mse, LossWeights};
use crate::params::{Bound, ParamStore};
use crate::temporal::normalize_index;
use crate::tensor::Tensor;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct TrainConfig {
    pub epochs: usize,
    pub lr: f64,
    /// Fraction of training spent in linear warm-up.
    pub warmup: f64,
    pub seed: u64,
    pub loss: LossWeights,
    pub adan: AdanConfig,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self { epochs: 150, lr: 3e-3, warmup: 0.1, seed: 1, loss: LossWeights::default(), adan: AdanConfig::default() }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        if self.epochs == 0 || !(self.lr > 0.0) || !(0.0..1.0).contains(&self.warmup) {
            return Err(Error::Config(format!(
                "invalid schedule: epochs={} lr={} warmup={}",
                self.epochs, self.lr, self.warmup
            )));
        }
        self.loss.validate()
    }
}

/// One training frame: its normalized index, the target and an optional
/// visibility mask (`[H, W]`, 1 = visible). Masked frames are shown to the
/// encoder with hidden pixels zeroed.
#[derive(Clone, Debug)]
pub struct Sample {
    pub index: usize,
    pub t_norm: f64,
    pub target: Tensor<f32>,
    pub mask: Option<Tensor<f32>>,
}

impl Sample {
    /// Encoder input: the frame with hidden pixels set to zero.
    pub fn observed(&self) -> Tensor<f32> {
        match &self.mask {
            None => self.target.clone(),
            Some(m) => {
                let hw = m.numel();
                let md = m.data();
                let mut x = self.target.clone();
                for (i, v) in x.data_mut().iter_mut().enumerate() {
                    *v *= md[i % hw];
                }
                x
            }
        }
    }
}

/// Samples for the 1-based frame `indices` of `clip`, normalized over the
/// whole clip length.
pub fn samples(clip: &VideoClip, indices: &[usize]) -> Result<Vec<Sample>> {
    indices
        .iter()
        .map(|&t| {
            let t_norm = normalize_index(t, clip.len())?;
            Ok(Sample { index: t, t_norm, target: clip.frames[t - 1].clone(), mask: None })
        })
        .collect()
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct EpochStats {
    pub epoch: usize,
    pub loss: f64,
    pub psnr: f64,
    pub lr: f64,
    pub seconds: f64,
}

#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct EvalStats {
    pub psnr: f64,
    pub ms_ssim: f64,
    pub frame_psnr: Vec<f64>,
}

/// A decoder with its encoder (hybrid only) and training history.
#[derive(Clone, Debug)]
pub struct Trained {
    pub decoder: DecoderModel<f32>,
    pub encoder: Option<FrameEncoder<f32>>,
    pub history: Vec<EpochStats>,
}

impl Trained {
    pub fn build(cfg: DecoderConfig, seed: u64) -> Result<Self> {
        let encoder = if cfg.variant.is_hybrid() {
            Some(FrameEncoder::build(EncoderConfig::new(&cfg.strides, cfg.embed_dim), seed.wrapping_add(1))?)
        } else {
            None
        };
        Ok(Self { decoder: DecoderModel::build(cfg, seed)?, encoder, history: Vec::new() })
    }

    /// Decoder and encoder weights with the decoder configuration as metadata.
    pub fn to_checkpoint(&self) -> Checkpoint {
        let mut tensors: Vec<(String, Tensor<f32>)> =
            self.decoder.store.iter().map(|(_, n, t)| (n.to_string(), t.clone())).collect();
        if let Some(e) = &self.encoder {
            tensors.extend(e.store.iter().map(|(_, n, t)| (n.to_string(), t.clone())));
        }
        Checkpoint { meta: self.decoder.cfg.to_kv(), tensors }
    }

    pub fn from_checkpoint(ck: &Checkpoint) -> Result<Self> {
        let cfg = DecoderConfig::from_kv(&ck.meta)?;
        let mut store = ParamStore::new();
        for (name, t) in ck.tensors.iter().filter(|(n, _)| !n.starts_with(ENCODER_PREFIX)) {
            store.insert(name.clone(), t.clone())?;
        }
        let decoder = DecoderModel::from_store(cfg, store)?;
        let mut model = Self::build(decoder.cfg.clone(), 0)?;
        model.decoder = decoder;
        if let Some(enc) = model.encoder.as_mut() {
            let ids: Vec<_> = enc.store.ids().collect();
            for id in ids {
                let name = enc.store.name(id).to_string();
                let t = ck.get(&name).ok_or_else(|| Error::Checkpoint(format!("missing encoder tensor {name}")))?;
                if t.shape() != enc.store.get(id).shape() {
                    return Err(Error::Checkpoint(format!("{name}: shape {:?} in checkpoint", t.shape())));
                }
                *enc.store.get_mut(id) = t.clone();
            }
        }
        Ok(model)
    }

    /// Content embedding of a frame (hybrid only).
    pub fn embed(&self, frame: &Tensor<f32>) -> Result<Option<Tensor<f32>>> {
        self.encoder.as_ref().map(|e| e.encode_frame(frame)).transpose()
    }

    /// Clamped reconstruction of a sample.
    pub fn reconstruct(&self, s: &Sample) -> Result<Tensor<f32>> {
        let y = self.embed(&s.observed())?;
        self.decoder.decode_frame(y.as_ref(), s.t_norm)
    }

    /// PSNR and MS-SSIM against the samples' full targets.
    pub fn evaluate(&self, set: &[Sample]) -> Result<EvalStats> {
        evaluate_with(set, |s| self.reconstruct(s))
    }
}

/// Clip-level PSNR (from the mean MSE) and mean MS-SSIM of `reconstruct`
/// over `set`.
pub fn evaluate_with(set: &[Sample], mut reconstruct: impl FnMut(&Sample) -> Result<Tensor<f32>>) -> Result<EvalStats> {
    let mut frame_psnr = Vec::with_capacity(set.len());
    let (mut ssim, mut mse_sum) = (0.0, 0.0);
    for s in set {
        let out = reconstruct(s)?;
        let e = mse(&s.target, &out)?;
        mse_sum += e;
        frame_psnr.push(psnr_from_mse(e));
        ssim += ms_ssim(&s.target, &out)?;
    }
    let n = set.len().max(1) as f64;
    Ok(EvalStats { psnr: psnr_from_mse(mse_sum / n), ms_ssim: ssim / n, frame_psnr })
}

/// Forward pass of one sample on a fresh tape. Returns the loss node and the
/// reconstruction node.
pub(crate) fn sample_loss(
    g: &mut Graph<f32>,
    model: &Trained,
    dec: &Bound,
    enc: Option<&Bound>,
    embedding: Option<Var>,
    s: &Sample,
    loss: &LossWeights,
) -> Result<(Var, Var)> {
    let y = match (embedding, &model.encoder, enc) {
        (Some(y), _, _) => Some(y),
        (None, Some(e), Some(b)) => {
            let x = g.constant(s.observed());
            Some(e.encode(g, b, x)?)
        }
        _ => None,
    };
    let out = model.decoder.frame_forward(g, dec, y, s.t_norm)?;
    let l = match &s.mask {
        Some(m) => masked_distortion_loss_node(g, out, &s.target, m, loss)?,
        None => distortion_loss_node(g, out, &s.target, loss)?,
    };
    Ok((l, out))
}

fn check_finite(v: f64, what: &str, epoch: usize) -> Result<()> {
    if v.is_finite() {
        Ok(())
    } else {
        Err(Error::Diverged(format!("{what} became {v} in epoch {}", epoch + 1)))
    }
}

/// PSNR of a clamped on-tape output, restricted to visible pixels when masked.
fn train_psnr(out: &Tensor<f32>, s: &Sample) -> f64 {
    let hw = s.target.numel() / 3;
    let (mut se, mut n) = (0.0, 0.0);
    for (i, (a, b)) in out.data().iter().zip(s.target.data()).enumerate() {
        let w = s.mask.as_ref().map_or(1.0, |m| m.data()[i % hw] as f64);
        let d = a.clamp(0.0, 1.0) as f64 - *b as f64;
        se += w * d * d;
        n += w;
    }
    psnr_from_mse(se / n.max(1.0))
}

/// Trains decoder and encoder jointly, one frame per step, frames shuffled
/// every epoch. `on_epoch` sees the stats of each finished epoch.
pub fn train_regression(
    model: &mut Trained,
    set: &[Sample],
    cfg: &TrainConfig,
    mut on_epoch: impl FnMut(&EpochStats),
) -> Result<()> {
    cfg.validate()?;
    if set.is_empty() {
        return Err(Error::Config("no training frames".into()));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    let mut opt = Adan::new(cfg.adan);
    let mut order: Vec<usize> = (0..set.len()).collect();
    for epoch in 0..cfg.epochs {
        let start = Instant::now();
        order.shuffle(&mut rng);
        let (mut loss_sum, mut psnr_sum, mut lr) = (0.0, 0.0, 0.0);
        for (i, &k) in order.iter().enumerate() {
            let s = &set[k];
            lr = lr_at((epoch as f64 + i as f64 / set.len() as f64) / cfg.epochs as f64, cfg.lr, cfg.warmup);
            let mut g = Graph::new();
            let dec = model.decoder.store.bind(&mut g, true);
            let enc = model.encoder.as_ref().map(|e| e.store.bind(&mut g, true));
            let (l, out) = sample_loss(&mut g, model, &dec, enc.as_ref(), None, s, &cfg.loss)?;
            let lv = g.value(l).item() as f64;
            check_finite(lv, "loss", epoch)?;
            loss_sum += lv;
            psnr_sum += train_psnr(g.value(out), s);
            let grads = g.backward(l);
            let mut vars: Vec<Var> = dec.vars().to_vec();
            if let Some(b) = &enc {
                vars.extend_from_slice(b.vars());
            }
            let gs: Vec<Option<&Tensor<f32>>> = vars.iter().map(|v| grads.get(*v)).collect();
            let mut params = params_mut(&mut model.decoder.store, model.encoder.as_mut().map(|e| &mut e.store));
            opt.step(&mut params, &gs, lr);
        }
        let n = set.len() as f64;
        let stats = EpochStats {
            epoch: epoch + 1,
            loss: loss_sum / n,
            psnr: psnr_sum / n,
            lr,
            seconds: start.elapsed().as_secs_f64(),
        };
        log::debug!("epoch {} loss {:.5} psnr {:.2} dB", stats.epoch, stats.loss, stats.psnr);
        on_epoch(&stats);
        model.history.push(stats);
    }
    Ok(())
}

pub(crate) fn params_mut<'a>(
    dec: &'a mut ParamStore<f32>,
    enc: Option<&'a mut ParamStore<f32>>,
) -> Vec<&'a mut Tensor<f32>> {
    let mut out: Vec<&mut Tensor<f32>> = dec.tensors_mut().collect();
    if let Some(e) = enc {
        out.extend(e.tensors_mut());
    }
    out
}
