use nerv_boost::checkpoint::Checkpoint;
use nerv_boost::codec::{QuantizedModel, ReferenceCoder};
use nerv_boost::decoder::{DecoderConfig, Variant};
use nerv_boost::pipeline::{
    build_mask, decode_eval, finetune_compress, interpolation_config, samples, synth_video, train_inpainting,
    train_interpolation, train_regression, CompressConfig, MaskSpec, Sample, SynthSpec, TrainConfig, Trained,
    VideoClip,
};

fn tiny_clip(frames: usize) -> VideoClip {
    synth_video(&SynthSpec { frames, height: 40, width: 80, seed: 5 }).unwrap()
}

fn tiny(variant: Variant) -> Trained {
    let mut cfg = DecoderConfig::new(variant, &[5, 2, 2], (40, 80)).unwrap();
    cfg.c1 = 24;
    cfg.stem_hidden = 32;
    Trained::build(cfg, 3).unwrap()
}

fn all(clip: &VideoClip) -> Vec<Sample> {
    samples(clip, &(1..=clip.len()).collect::<Vec<_>>()).unwrap()
}

#[test]
fn training_improves_every_variant() {
    let clip = tiny_clip(3);
    let set = all(&clip);
    for v in [Variant::NervBoost, Variant::EnervBoost, Variant::HnervBoost] {
        let mut m = tiny(v);
        let before = m.evaluate(&set).unwrap().psnr;
        let cfg = TrainConfig { epochs: 25, lr: 2e-3, ..TrainConfig::default() };
        train_regression(&mut m, &set, &cfg, |_| {}).unwrap();
        let after = m.evaluate(&set).unwrap();
        assert_eq!(m.history.len(), 25);
        assert!(after.psnr > before + 2.0, "{v}: {before:.2} -> {:.2}", after.psnr);
        assert!(after.ms_ssim > 0.0 && after.ms_ssim <= 1.0);
    }
}

#[test]
fn synthetic_clips_are_seeded_and_in_range() {
    let a = tiny_clip(2);
    assert_eq!(a, tiny_clip(2));
    assert_ne!(a, synth_video(&SynthSpec { frames: 2, height: 40, width: 80, seed: 6 }).unwrap());
    assert_ne!(a.frames[0], a.frames[1]);
    assert!(a.frames.iter().all(|f| f.data().iter().all(|v| (0.0..=1.0).contains(v))));
}

#[test]
fn png_directory_round_trip() {
    let clip = tiny_clip(3);
    let dir = tempfile::tempdir().unwrap();
    nerv_boost::pipeline::save_clip(&clip, dir.path()).unwrap();
    let back = nerv_boost::pipeline::load_video(dir.path()).unwrap();
    assert_eq!(back.len(), 3);
    for (a, b) in clip.frames.iter().zip(&back.frames) {
        assert!(a.data().iter().zip(b.data()).all(|(x, y)| (x - y).abs() <= 0.5 / 255.0 + 1e-6));
    }
    let empty = tempfile::tempdir().unwrap();
    assert!(nerv_boost::pipeline::load_video(empty.path()).is_err());
}

#[test]
fn checkpoint_restores_identical_outputs() {
    let clip = tiny_clip(2);
    let set = all(&clip);
    let mut m = tiny(Variant::HnervBoost);
    train_regression(&mut m, &set, &TrainConfig { epochs: 2, ..TrainConfig::default() }, |_| {}).unwrap();
    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("m.nrvc");
    m.to_checkpoint().save(&path).unwrap();
    let back = Trained::from_checkpoint(&Checkpoint::load(&path).unwrap()).unwrap();
    assert_eq!(back.reconstruct(&set[1]).unwrap(), m.reconstruct(&set[1]).unwrap());
}

#[test]
fn compression_bitstream_matches_in_memory_model() {
    let clip = tiny_clip(3);
    let set = all(&clip);
    for v in [Variant::HnervBoost, Variant::NervBoost] {
        let mut m = tiny(v);
        train_regression(&mut m, &set, &TrainConfig { epochs: 10, ..TrainConfig::default() }, |_| {}).unwrap();
        let cfg = CompressConfig { epochs: 3, ..CompressConfig::for_decoder(&m.decoder) };
        let c = finetune_compress(&m, &set, &cfg, &ReferenceCoder, |_, _| {}).unwrap();
        assert_eq!(c.report.psnr, c.report.psnr_in_memory, "{v}");
        let decoded = QuantizedModel::from_bytes(&c.bytes, &ReferenceCoder).unwrap();
        assert_eq!(decoded, c.model);
        assert_eq!(decode_eval(&decoded, &set).unwrap().psnr, c.report.psnr);
        assert_eq!(c.model.embeddings.len(), if v.is_hybrid() { 3 } else { 0 });
        assert!(c.report.bpp > c.report.estimated_bpp && c.report.bpp < 2.0 * c.report.estimated_bpp);
        assert!(c.report.psnr > 10.0);
    }
}

#[test]
fn inpainting_ignores_hidden_pixels() {
    let clip = tiny_clip(2);
    let set = all(&clip);
    let mask = build_mask(&MaskSpec::Central, 40, 80).unwrap();
    // same frames with the hidden region scrambled
    let scrambled: Vec<Sample> = set
        .iter()
        .map(|s| {
            let mut target = s.target.clone();
            for (i, v) in target.data_mut().iter_mut().enumerate() {
                if mask.data()[i % 3200] == 0.0 {
                    *v = ((i * 37) % 101) as f32 / 100.0;
                }
            }
            Sample { target, ..s.clone() }
        })
        .collect();
    let cfg = TrainConfig { epochs: 3, ..TrainConfig::default() };
    let (mut a, mut b) = (tiny(Variant::HnervBoost), tiny(Variant::HnervBoost));
    let ra = train_inpainting(&mut a, &set, &mask, &cfg, |_| {}).unwrap();
    train_inpainting(&mut b, &scrambled, &mask, &cfg, |_| {}).unwrap();
    assert!((ra.hidden_fraction - (10.0 * 20.0) / (40.0 * 80.0)).abs() < 1e-12);
    for ((_, n, x), (_, _, y)) in a.decoder.store.iter().zip(b.decoder.store.iter()) {
        assert_eq!(x, y, "{n}");
    }
    let masked = |s: &Sample| Sample { mask: Some(mask.clone()), ..s.clone() };
    assert_eq!(a.reconstruct(&masked(&set[0])).unwrap(), b.reconstruct(&masked(&scrambled[0])).unwrap());
}

#[test]
fn interpolation_holds_out_even_frames() {
    let clip = tiny_clip(4);
    let mut m = tiny(Variant::NervBoost);
    m = Trained::build(interpolation_config(m.decoder.cfg.clone()), 3).unwrap();
    assert_eq!(m.decoder.cfg.pe.b, 1.05);
    let r = train_interpolation(&mut m, &clip, &TrainConfig { epochs: 10, ..TrainConfig::default() }, |_| {}).unwrap();
    assert_eq!(r.held_out, vec![2, 4]);
    assert!(r.psnr.is_finite() && r.train_psnr.is_finite());
}
