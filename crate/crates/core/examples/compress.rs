//! Trains a small hybrid decoder, fine-tunes it under the rate penalty and
//! writes the bitstream. The reported quality is measured on frames decoded
//! from the written bytes.

use nerv_boost::codec::{QuantizedModel, ReferenceCoder};
use nerv_boost::decoder::{DecoderConfig, Variant};
use nerv_boost::pipeline::{
    decode_eval, finetune_compress, samples, synth_video, train_regression, CompressConfig, SynthSpec, TrainConfig,
    Trained,
};

fn main() -> anyhow::Result<()> {
    let mut args = std::env::args().skip(1);
    let epochs = args.next().and_then(|s| s.parse().ok()).unwrap_or(30);
    let compress_epochs = args.next().and_then(|s| s.parse().ok()).unwrap_or(10);
    let clip = synth_video(&SynthSpec { frames: 4, ..SynthSpec::default() })?;
    let cfg = DecoderConfig::new(Variant::HnervBoost, &[5, 3, 2, 2, 2], (clip.height, clip.width))?
        .with_target_params(150_000)?;
    let mut model = Trained::build(cfg, 3)?;
    let set = samples(&clip, &(1..=clip.len()).collect::<Vec<_>>())?;
    train_regression(&mut model, &set, &TrainConfig { epochs, ..TrainConfig::default() }, |_| {})?;
    println!("float model: {:.2} dB", model.evaluate(&set)?.psnr);

    let ccfg = CompressConfig { epochs: compress_epochs, ..CompressConfig::for_decoder(&model.decoder) };
    let out = finetune_compress(&model, &set, &ccfg, &ReferenceCoder, |e, l| println!("  epoch {e}: loss {l:.4}"))?;
    let path = std::env::temp_dir().join("nerv_boost_example.nrvb");
    std::fs::write(&path, &out.bytes)?;
    let r = &out.report;
    println!("{} bytes ({:.4} bpp, estimate {:.4}, target {:.4})", r.bytes, r.bpp, r.estimated_bpp, r.r_target);

    // a decoder only needs the file
    let decoded = QuantizedModel::from_bytes(&std::fs::read(&path)?, &ReferenceCoder)?;
    let eval = decode_eval(&decoded, &set)?;
    println!("decoded from {}: {:.2} dB, ms-ssim {:.4}", path.display(), eval.psnr, eval.ms_ssim);
    Ok(())
}
