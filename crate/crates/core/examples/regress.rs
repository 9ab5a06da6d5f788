//! Fits a boosted hybrid decoder to a short synthetic clip and reports the
//! per-epoch PSNR.

use nerv_boost::decoder::{DecoderConfig, Variant};
use nerv_boost::pipeline::{samples, synth_video, train_regression, SynthSpec, TrainConfig, Trained};

fn main() -> anyhow::Result<()> {
    let epochs = std::env::args().nth(1).and_then(|s| s.parse().ok()).unwrap_or(20);
    let clip = synth_video(&SynthSpec::default())?;
    let cfg = DecoderConfig::new(Variant::HnervBoost, &[5, 3, 2, 2, 2], (clip.height, clip.width))?
        .with_target_params(300_000)?;
    let mut model = Trained::build(cfg, 1)?;
    println!("decoder parameters: {}", model.decoder.num_params());
    let set = samples(&clip, &(1..=clip.len()).collect::<Vec<_>>())?;
    let train = TrainConfig { epochs, ..TrainConfig::default() };
    train_regression(&mut model, &set, &train, |s| {
        println!("epoch {:3}  loss {:.4}  psnr {:.2} dB  ({:.2} s)", s.epoch, s.loss, s.psnr, s.seconds)
    })?;
    let eval = model.evaluate(&set)?;
    println!("final psnr {:.2} dB  ms-ssim {:.4}", eval.psnr, eval.ms_ssim);
    Ok(())
}
