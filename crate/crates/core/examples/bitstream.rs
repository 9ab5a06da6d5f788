//! Quantizes an untrained decoder, writes it as a bitstream and lists the
//! records, comparing coded size with the entropy-model estimate.

use std::collections::HashMap;

use nerv_boost::codec::{record_estimated_bits, QuantizedModel, ReferenceCoder};
use nerv_boost::decoder::{DecoderConfig, DecoderModel, Variant};
use nerv_boost::quant::{fit_entropy_model, QuantMode, QuantParams, TensorCode};

fn main() -> anyhow::Result<()> {
    let cfg = DecoderConfig::new(Variant::NervBoost, &[5, 3, 2, 2, 2], (120, 240))?.with_target_params(200_000)?;
    let model = DecoderModel::<f32>::build(cfg, 9)?;
    let mut codes = HashMap::new();
    for (_, name, t) in model.store.iter() {
        let quant = QuantParams::init(t.data(), QuantMode::Symmetric, 6.0).to_stored();
        codes.insert(name.to_string(), TensorCode { quant, entropy: fit_entropy_model(t.data(), &quant)?.to_stored() });
    }
    let q = QuantizedModel::quantize(&model, &[], &codes, 8)?;
    let bytes = q.to_bytes(&ReferenceCoder)?;
    for r in q.records()?.iter().take(8) {
        println!("{:<24} {:>7} symbols  {:>9.0} bits est.  range {}..={}", r.name, r.symbols.len(), record_estimated_bits(r), r.s_min, r.s_max);
    }
    println!("... {} records, {} bytes total, estimate {:.0} bytes", q.records()?.len(), bytes.len(), q.estimated_bits() / 8.0);
    let back = QuantizedModel::from_bytes(&bytes, &ReferenceCoder)?;
    assert_eq!(back, q);
    println!("decoded stream matches the quantized model");
    Ok(())
}
