//! Run settings shared by the command-line workflows, read from `key = value`
//! text with command-line overrides applied on top.

use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use super::compress::CompressConfig;
use super::inpaint::MaskSpec;
use super::train::{TrainConfig, Trained};
use super::video::{load_video, synth_video, SynthSpec, VideoClip};
use crate::decoder::{Activation, DecoderConfig, Modulation, Variant};
use crate::error::{Error, Result};
use crate::kv::KvMap;
use crate::objectives::LossWeights;

/// Environment variable naming the default output root.
pub const OUT_ENV: &str = "NERV_BOOST_OUT";

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct RunConfig {
    pub variant: Variant,
    pub strides: Vec<usize>,
    pub params: usize,
    /// Directory of PNG frames; a synthetic clip is used when absent.
    pub input: Option<PathBuf>,
    pub synth: SynthSpec,
    pub epochs: usize,
    /// Defaults by variant when absent.
    pub lr: Option<f64>,
    pub seed: u64,
    /// Drop modulation, use GELU and a plain MSE loss.
    pub ablate: bool,
    pub compress_epochs: usize,
    pub compress_lr: f64,
    pub b_avg: Vec<f64>,
    pub kappa: Option<f64>,
    pub mask: MaskSpec,
    pub out: PathBuf,
}

impl Default for RunConfig {
    fn default() -> Self {
        Self {
            variant: Variant::HnervBoost,
            strides: vec![5, 3, 2, 2, 2],
            params: 300_000,
            input: None,
            synth: SynthSpec::default(),
            epochs: 150,
            lr: None,
            seed: 1,
            ablate: false,
            compress_epochs: 100,
            compress_lr: 5e-4,
            b_avg: vec![4.0],
            kappa: None,
            mask: MaskSpec::default(),
            out: std::env::var_os(OUT_ENV).map_or_else(|| PathBuf::from("runs"), PathBuf::from),
        }
    }
}

impl RunConfig {
    /// Applies every key present in `kv`; unknown keys are an error.
    pub fn apply(&mut self, kv: &KvMap) -> Result<()> {
        for key in kv.keys() {
            match key {
                "variant" => self.variant = kv.require(key)?,
                "strides" => self.strides = kv.get_list(key)?.unwrap_or_default(),
                "params" => self.params = kv.require(key)?,
                "input" => self.input = Some(PathBuf::from(kv.raw(key).unwrap_or_default())),
                "frames" => self.synth.frames = kv.require(key)?,
                "height" => self.synth.height = kv.require(key)?,
                "width" => self.synth.width = kv.require(key)?,
                "synth_seed" => self.synth.seed = kv.require(key)?,
                "epochs" => self.epochs = kv.require(key)?,
                "lr" => self.lr = Some(kv.require(key)?),
                "seed" => self.seed = kv.require(key)?,
                "ablate" => self.ablate = kv.require(key)?,
                "compress_epochs" => self.compress_epochs = kv.require(key)?,
                "compress_lr" => self.compress_lr = kv.require(key)?,
                "b_avg" => self.b_avg = kv.get_list(key)?.unwrap_or_default(),
                "kappa" => self.kappa = Some(kv.require(key)?),
                "mask" => self.mask = kv.require(key)?,
                "out" => self.out = PathBuf::from(kv.raw(key).unwrap_or_default()),
                other => return Err(Error::Config(format!("unknown setting {other:?}"))),
            }
        }
        Ok(())
    }

    pub fn from_file(path: &Path) -> Result<Self> {
        let mut cfg = Self::default();
        cfg.apply(&KvMap::parse(&std::fs::read_to_string(path)?)?)?;
        Ok(cfg)
    }

    /// Applies `key=value` overrides.
    pub fn with_overrides<S: AsRef<str>>(mut self, overrides: &[S]) -> Result<Self> {
        let text: String = overrides.iter().map(|s| format!("{}\n", s.as_ref())).collect();
        self.apply(&KvMap::parse(&text)?)?;
        Ok(self)
    }

    pub fn load_clip(&self) -> Result<VideoClip> {
        match &self.input {
            Some(dir) => load_video(dir),
            None => synth_video(&self.synth),
        }
    }

    /// Decoder configuration for `frame_hw`, with widths solved to the
    /// parameter budget.
    pub fn decoder_config(&self, frame_hw: (usize, usize)) -> Result<DecoderConfig> {
        let mut cfg = DecoderConfig::new(self.variant, &self.strides, frame_hw)?;
        if self.ablate {
            cfg.modulation = Modulation::None;
            cfg.activation = Activation::Gelu;
        }
        cfg.with_target_params(self.params)
    }

    pub fn train_config(&self) -> TrainConfig {
        let lr = self.lr.unwrap_or(match self.variant {
            Variant::EnervBoost => 1.5e-3,
            _ => 3e-3,
        });
        let loss = if self.ablate { LossWeights::l2() } else { LossWeights::default() };
        TrainConfig { epochs: self.epochs, lr, seed: self.seed, loss, ..TrainConfig::default() }
    }

    /// Compression settings for one average bit target.
    pub fn compress_config(&self, model: &Trained, b_avg: f64) -> CompressConfig {
        let mut c = CompressConfig::for_decoder(&model.decoder);
        c.epochs = self.compress_epochs;
        c.lr = self.compress_lr;
        c.b_avg = b_avg;
        c.seed = self.seed.wrapping_add(1);
        if let Some(k) = self.kappa {
            c.kappa = k;
        }
        if self.ablate {
            c.loss = LossWeights::l2();
        }
        c
    }

    /// Short run label used in file names and report series.
    pub fn label(&self) -> String {
        if self.ablate {
            format!("{}-ablated", self.variant)
        } else {
            self.variant.to_string()
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn overrides_and_defaults() {
        let cfg = RunConfig::default()
            .with_overrides(&["variant = enerv_boost", "b_avg = 2, 4 8", "epochs=3", "mask=central"])
            .unwrap();
        assert_eq!(cfg.variant, Variant::EnervBoost);
        assert_eq!(cfg.b_avg, vec![2.0, 4.0, 8.0]);
        assert_eq!(cfg.mask, MaskSpec::Central);
        assert_eq!(cfg.train_config().lr, 1.5e-3);
        assert_eq!(cfg.train_config().epochs, 3);
        assert!(RunConfig::default().with_overrides(&["bogus = 1"]).is_err());
        assert!(RunConfig::default().with_overrides(&["epochs = many"]).is_err());
    }

    #[test]
    fn ablation_strips_boosting() {
        let cfg = RunConfig { ablate: true, ..RunConfig::default() };
        let d = cfg.decoder_config((120, 240)).unwrap();
        assert_eq!((d.modulation, d.activation), (Modulation::None, Activation::Gelu));
        assert_eq!(cfg.train_config().loss, LossWeights::l2());
    }
}
