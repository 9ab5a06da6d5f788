//! Compresses one trained model at several bit targets and plots the
//! rate-distortion curve.

use nerv_boost::codec::ReferenceCoder;
use nerv_boost::decoder::{DecoderConfig, Variant};
use nerv_boost::pipeline::{
    finetune_compress, plot_rd, samples, synth_video, train_regression, write_csv, CompressConfig, RdPoint, SynthSpec,
    TrainConfig, Trained,
};

fn main() -> anyhow::Result<()> {
    let epochs = std::env::args().nth(1).and_then(|s| s.parse().ok()).unwrap_or(40);
    let clip = synth_video(&SynthSpec { frames: 4, ..SynthSpec::default() })?;
    let cfg = DecoderConfig::new(Variant::HnervBoost, &[5, 3, 2, 2, 2], (clip.height, clip.width))?
        .with_target_params(150_000)?;
    let mut model = Trained::build(cfg, 5)?;
    let set = samples(&clip, &(1..=clip.len()).collect::<Vec<_>>())?;
    train_regression(&mut model, &set, &TrainConfig { epochs, ..TrainConfig::default() }, |_| {})?;
    let mut points = Vec::new();
    for b_avg in [2.0, 4.0, 8.0] {
        let c = CompressConfig { epochs: 5, b_avg, ..CompressConfig::for_decoder(&model.decoder) };
        let r = finetune_compress(&model, &set, &c, &ReferenceCoder, |_, _| {})?.report;
        println!("B_avg {b_avg}: {:.4} bpp, {:.2} dB", r.bpp, r.psnr);
        points.push(RdPoint { series: "hnerv_boost".into(), bpp: r.bpp, psnr: r.psnr, ms_ssim: r.ms_ssim });
    }
    let dir = std::env::temp_dir();
    write_csv(&points, &dir.join("rd.csv"))?;
    plot_rd(&points, &dir.join("rd.png"))?;
    println!("wrote {}", dir.join("rd.png").display());
    Ok(())
}
