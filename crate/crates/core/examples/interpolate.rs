//! Fits the odd frames of a clip with an index-based decoder and decodes the
//! unseen even frames from their indices alone.

use nerv_boost::decoder::{DecoderConfig, Variant};
use nerv_boost::pipeline::{interpolation_config, synth_video, train_interpolation, SynthSpec, TrainConfig, Trained};

fn main() -> anyhow::Result<()> {
    let epochs = std::env::args().nth(1).and_then(|s| s.parse().ok()).unwrap_or(60);
    let clip = synth_video(&SynthSpec { frames: 16, ..SynthSpec::default() })?;
    let cfg = DecoderConfig::new(Variant::NervBoost, &[5, 3, 2, 2, 2], (clip.height, clip.width))?
        .with_target_params(300_000)?;
    let mut model = Trained::build(interpolation_config(cfg), 1)?;
    let r = train_interpolation(&mut model, &clip, &TrainConfig { epochs, ..TrainConfig::default() }, |_| {})?;
    println!("frames seen: {:.2} dB; held-out frames {:?}: {:.2} dB", r.train_psnr, r.held_out, r.psnr);
    Ok(())
}
