use std::collections::HashMap;

use super::record::{decode_records, encode_records, QuantizedRecord};
use super::rans::CoderBackend;
use super::CodecError;
use crate::decoder::{DecoderConfig, DecoderModel};
use crate::error::{Error, Result};
use crate::kv::KvMap;
use crate::params::ParamStore;
use crate::quant::{
    dequantize_tensor, estimate_rate_bits, fit_entropy_model, quantize, QuantParams, TensorCode,
};
use crate::tensor::Tensor;

/// Name of the record carrying the model configuration as UTF-8 bytes.
pub const CONFIG_RECORD: &str = "@config";
/// Per-frame content embeddings are stored as `emb.<frame index>`.
pub const EMBEDDING_PREFIX: &str = "emb.";

/// A fully quantized model: decoder and temporal network weights plus the
/// per-frame embeddings, each as a [`QuantizedRecord`].
#[derive(Clone, Debug, PartialEq)]
pub struct QuantizedModel {
    pub cfg: DecoderConfig,
    /// Frames of the represented clip (the `T` of bits per pixel).
    pub frames: usize,
    pub layout: String,
    pub params: Vec<QuantizedRecord>,
    pub embeddings: Vec<(usize, QuantizedRecord)>,
}

pub fn embedding_name(t: usize) -> String {
    format!("{EMBEDDING_PREFIX}{t}")
}

fn quantize_record(name: String, t: &Tensor<f32>, code: &TensorCode) -> Result<QuantizedRecord> {
    let q = code.quant.to_stored();
    let m = code.entropy.to_stored();
    let symbols = quantize(t.data(), &q)?;
    Ok(QuantizedRecord::new(name, t.shape().to_vec(), symbols, &q, &m))
}

impl QuantizedModel {
    /// Quantizes `model` and the `(frame index, embedding)` pairs with the
    /// given per-tensor codes (keyed by parameter name or `emb.<t>`).
    pub fn quantize(
        model: &DecoderModel<f32>,
        embeddings: &[(usize, Tensor<f32>)],
        codes: &HashMap<String, TensorCode>,
        frames: usize,
    ) -> Result<Self> {
        let code = |name: &str| {
            codes.get(name).ok_or_else(|| Error::Config(format!("no quantizer for tensor {name}")))
        };
        let mut params = Vec::new();
        for (_, name, t) in model.store.iter() {
            params.push(quantize_record(name.to_string(), t, code(name)?)?);
        }
        let mut embs = Vec::new();
        for (t, y) in embeddings {
            let name = embedding_name(*t);
            embs.push((*t, quantize_record(name.clone(), y, code(&name)?)?));
        }
        Ok(Self { cfg: model.cfg.clone(), frames, layout: model.layout_fingerprint(), params, embeddings: embs })
    }

    /// Dequantized decoder and embeddings.
    pub fn dequantize(&self) -> Result<(DecoderModel<f32>, Vec<(usize, Tensor<f32>)>)> {
        let mut store = ParamStore::new();
        for r in &self.params {
            store.insert(r.name.clone(), dequantize_tensor(&r.symbols, &r.quant_params(), r.shape.clone())?)?;
        }
        let model = DecoderModel::from_store(self.cfg.clone(), store)?;
        let found = model.layout_fingerprint();
        if found != self.layout {
            return Err(CodecError::ConfigHash { found: self.layout.clone(), expected: found }.into());
        }
        let embs = self
            .embeddings
            .iter()
            .map(|(t, r)| Ok((*t, dequantize_tensor(&r.symbols, &r.quant_params(), r.shape.clone())?)))
            .collect::<Result<_>>()?;
        Ok((model, embs))
    }

    fn config_record(&self) -> Result<QuantizedRecord> {
        let mut kv = self.cfg.to_kv();
        kv.set("frames", self.frames);
        kv.set("layout", &self.layout);
        let bytes: Vec<i32> = kv.to_text().bytes().map(i32::from).collect();
        let q = QuantParams::symmetric(1.0);
        let m = fit_entropy_model(&bytes.iter().map(|&b| b as f64).collect::<Vec<_>>(), &q)?;
        Ok(QuantizedRecord::new(CONFIG_RECORD, vec![bytes.len()], bytes, &q, &m))
    }

    /// All records in stream order: configuration, weights, embeddings.
    pub fn records(&self) -> Result<Vec<QuantizedRecord>> {
        let mut out = vec![self.config_record()?];
        out.extend(self.params.iter().cloned());
        out.extend(self.embeddings.iter().map(|(_, r)| r.clone()));
        Ok(out)
    }

    pub fn to_bytes(&self, backend: &dyn CoderBackend) -> Result<Vec<u8>> {
        Ok(encode_records(&self.records()?, backend)?)
    }

    pub fn from_bytes(bytes: &[u8], backend: &dyn CoderBackend) -> Result<Self> {
        let mut records = decode_records(bytes, backend)?.into_iter();
        let cfg_rec = records
            .next()
            .filter(|r| r.name == CONFIG_RECORD)
            .ok_or_else(|| CodecError::CorruptHeader("stream does not start with the configuration record".into()))?;
        let text: Vec<u8> = cfg_rec
            .symbols
            .iter()
            .map(|&s| u8::try_from(s))
            .collect::<std::result::Result<_, _>>()
            .map_err(|_| CodecError::CorruptHeader("configuration record is not text".into()))?;
        let text = String::from_utf8(text).map_err(|_| CodecError::CorruptHeader("configuration is not UTF-8".into()))?;
        let kv = KvMap::parse(&text)?;
        let cfg = DecoderConfig::from_kv(&kv)?;
        let frames = kv.require("frames")?;
        let layout = kv.require("layout")?;
        let (mut params, mut embeddings) = (Vec::new(), Vec::new());
        for r in records {
            match r.name.strip_prefix(EMBEDDING_PREFIX) {
                Some(t) => {
                    let t = t
                        .parse()
                        .map_err(|_| CodecError::CorruptHeader(format!("bad embedding record name {}", r.name)))?;
                    embeddings.push((t, r));
                }
                None => params.push(r),
            }
        }
        Ok(Self { cfg, frames, layout, params, embeddings })
    }

    /// Model-estimated bits of every weight and embedding record.
    pub fn estimated_bits(&self) -> f64 {
        self.params
            .iter()
            .chain(self.embeddings.iter().map(|(_, r)| r))
            .map(record_estimated_bits)
            .sum()
    }

    /// Number of transmitted values (weights plus embeddings).
    pub fn numel(&self) -> usize {
        self.params.iter().chain(self.embeddings.iter().map(|(_, r)| r)).map(|r| r.symbols.len()).sum()
    }
}

/// `Σ -log2 p(s)` of a record's symbols under its stored entropy model.
pub fn record_estimated_bits(r: &QuantizedRecord) -> f64 {
    estimate_rate_bits(r.symbols.iter().map(|&s| s as f64), &r.entropy_params())
}
