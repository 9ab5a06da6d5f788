//! Trains with five hidden squares per frame and reports how well the hidden
//! area is reconstructed.

use nerv_boost::decoder::{DecoderConfig, Variant};
use nerv_boost::pipeline::{build_mask, samples, synth_video, train_inpainting, MaskSpec, SynthSpec, TrainConfig, Trained};

fn main() -> anyhow::Result<()> {
    let epochs = std::env::args().nth(1).and_then(|s| s.parse().ok()).unwrap_or(40);
    let clip = synth_video(&SynthSpec::default())?;
    let cfg = DecoderConfig::new(Variant::HnervBoost, &[5, 3, 2, 2, 2], (clip.height, clip.width))?
        .with_target_params(300_000)?;
    let mut model = Trained::build(cfg, 1)?;
    let mask = build_mask(&MaskSpec::Disperse { count: 5, size: 30, seed: 4 }, clip.height, clip.width)?;
    let set = samples(&clip, &(1..=clip.len()).collect::<Vec<_>>())?;
    let r = train_inpainting(&mut model, &set, &mask, &TrainConfig { epochs, ..TrainConfig::default() }, |_| {})?;
    println!("{:.1}% hidden", 100.0 * r.hidden_fraction);
    println!("full frame {:.2} dB, hidden {:.2} dB, visible {:.2} dB", r.psnr, r.psnr_hidden, r.psnr_visible);
    Ok(())
}
