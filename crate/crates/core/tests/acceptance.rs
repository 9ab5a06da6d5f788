//! Acceptance checks, one PASS/FAIL line per criterion. Runs without the
//! test harness so the summary is always printed; exits non-zero on any
//! failure.

mod common;

use std::time::Instant;

use nerv_boost::autograd::Graph;
use nerv_boost::codec::{decode_records, encode_records, CoderBackend, QuantizedRecord, ReferenceCoder};
use nerv_boost::decoder::{count_params, Activation, DecoderConfig, DecoderModel, Modulation, Variant};
use nerv_boost::objectives::{distortion_loss, distortion_loss_node, masked_distortion_loss_node, LossWeights, PixelNorm};
use nerv_boost::pipeline::{
    finetune_compress, samples, synth_video, train_regression, CompressConfig, Sample, SynthSpec, TrainConfig, Trained,
};
use nerv_boost::quant::{
    entropy_model_node, estimate_rate_bits, mixed_quantize_node, rate_bits_node, symbol_likelihood, uniform_noise,
    EntropyParams, QuantParams, QuantVars,
};
use nerv_boost::temporal::{positional_encode, PeConfig};
use nerv_boost::Tensor;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};

/// Payload size must match the model estimate this closely.
const CEM_TOLERANCE: f64 = 0.02;
const GRAD_REL_TOL: f64 = 1e-2;
const BUDGET_TOL: f64 = 0.03;
const BOOST_MARGIN_DB: f64 = 0.3;
const BOOST_EPOCHS: usize = 150;
const RD_COMPRESS_EPOCHS: usize = 20;

type Outcome = Result<String, String>;

fn check(cond: bool, ok: String, fail: String) -> Outcome {
    if cond {
        Ok(ok)
    } else {
        Err(fail)
    }
}

fn codec_round_trip() -> Outcome {
    let mut records = 0;
    for seed in 0..1000 {
        let set = common::random_record_set(seed);
        records += set.len();
        let bytes = encode_records(&set, &ReferenceCoder).map_err(|e| format!("seed {seed}: {e}"))?;
        let back = decode_records(&bytes, &ReferenceCoder).map_err(|e| format!("seed {seed}: {e}"))?;
        if back != set {
            return Err(format!("seed {seed}: decoded records differ"));
        }
    }
    Ok(format!("1000 sets ({records} records) bit-exact"))
}

fn cem_consistency() -> Outcome {
    let mut rng = ChaCha8Rng::seed_from_u64(5);
    let mut worst: f64 = 0.0;
    for (n, mu, sigma) in [(65_536, 0.0, 1.0), (65_536, 3.3, 2.5), (131_072, -7.0, 8.0), (200_000, 0.4, 30.0), (70_000, 12.0, 120.0)] {
        let normal = Normal::<f64>::new(mu, sigma).unwrap();
        let symbols: Vec<i32> = (0..n).map(|_| normal.sample(&mut rng).round() as i32).collect();
        let m = EntropyParams { mu, sigma };
        let rec = QuantizedRecord::new("t", vec![n], symbols, &QuantParams::symmetric(0.01), &m);
        let payload = ReferenceCoder.encode(&rec.symbols, &rec.cdf().map_err(|e| e.to_string())?).map_err(|e| e.to_string())?;
        let est = estimate_rate_bits(rec.symbols.iter().map(|&s| s as f64), &rec.entropy_params());
        let rel = (payload.len() as f64 * 8.0 - est) / est;
        worst = worst.max(rel.abs());
        if rel.abs() > CEM_TOLERANCE {
            return Err(format!("n={n} sigma={sigma}: payload {} bits vs estimate {est:.0} ({:+.3}%)", payload.len() * 8, rel * 100.0));
        }
    }
    Ok(format!("worst payload/estimate gap {:.3}% (tolerance {:.0}%)", worst * 100.0, CEM_TOLERANCE * 100.0))
}

fn entropy_validity() -> Outcome {
    let p0 = symbol_likelihood(0.0, &EntropyParams { mu: 0.0, sigma: 1.0 });
    if (p0 - 0.382925).abs() > 1e-5 {
        return Err(format!("p(0|0,1) = {p0}"));
    }
    let (mut lo, mut hi) = (f64::INFINITY, 0.0f64);
    for (mu, sigma) in [(0.0, 1.0), (0.3, 0.7), (-4.2, 3.0), (10.5, 25.0), (0.0, 0.6), (2.0, 200.0)] {
        let m = EntropyParams { mu, sigma };
        let a = (mu - 8.0 * sigma).floor() as i64;
        let b = (mu + 8.0 * sigma).ceil() as i64;
        let total: f64 = (a..=b).map(|v| symbol_likelihood(v as f64, &m)).sum();
        lo = lo.min(total);
        hi = hi.max(total);
        if !(0.999..=1.0 + 1e-6).contains(&total) {
            return Err(format!("mass over +-8 sigma for N({mu}, {sigma}) is {total}"));
        }
    }
    Ok(format!("p(0|0,1) = {p0:.6}; mass over +-8 sigma in [{lo:.7}, {hi:.7}]"))
}

fn rel_err(a: f64, b: f64) -> f64 {
    (a - b).abs() / a.abs().max(b.abs()).max(1e-300)
}

/// Rate bits of `x` under the mixed quantizer with fixed noise, its
/// analytic gradient with respect to ς and η, evaluated at (ς, η).
fn rate_and_grads(x: &Tensor<f64>, noise: &Tensor<f64>, scale: f64, offset: f64) -> (f64, f64, f64) {
    let mut g = Graph::<f64>::new();
    let xv = g.constant(x.clone());
    let s = g.leaf(Tensor::scalar(scale));
    let o = g.leaf(Tensor::scalar(offset));
    let q = QuantVars { scale: s, offset: Some(o) };
    let view = mixed_quantize_node(&mut g, xv, &q, noise).unwrap();
    let (mu, sigma) = entropy_model_node(&mut g, xv, &q).unwrap();
    let bits = rate_bits_node(&mut g, view.noisy, mu, sigma).unwrap();
    let grads = g.backward(bits);
    (g.value(bits).item(), grads.get(s).map_or(0.0, |t| t.item()), grads.get(o).map_or(0.0, |t| t.item()))
}

fn gradient_suite() -> Outcome {
    let mut rng = ChaCha8Rng::seed_from_u64(21);
    let x = Tensor::from_fn(vec![4096], |_| rng.gen_range(-0.3..0.5f64));
    let noise = uniform_noise(vec![4096], &mut rng);
    let mut worst_scale: f64 = 0.0;
    let mut eta_gap: f64 = 0.0;
    for (scale, offset) in [(0.01, 0.05), (0.04, -0.1), (0.002, 0.0)] {
        let (bits, ds, de) = rate_and_grads(&x, &noise, scale, offset);
        let h = scale * 1e-5;
        let fd_s = (rate_and_grads(&x, &noise, scale + h, offset).0 - rate_and_grads(&x, &noise, scale - h, offset).0) / (2.0 * h);
        let he = 1e-6;
        let fd_e = (rate_and_grads(&x, &noise, scale, offset + he).0 - rate_and_grads(&x, &noise, scale, offset - he).0) / (2.0 * he);
        let e = rel_err(ds, fd_s);
        worst_scale = worst_scale.max(e);
        if e > GRAD_REL_TOL {
            return Err(format!("d rate / d scale at {scale}: analytic {ds} vs numeric {fd_s}"));
        }
        // the rate does not depend on the offset, so both sides must vanish;
        // relative error is meaningless at zero, hence the absolute floor
        let floor = 1e-6 * bits / scale;
        let ok = rel_err(de, fd_e) <= GRAD_REL_TOL || (de.abs() <= floor && fd_e.abs() <= floor);
        eta_gap = eta_gap.max(de.abs().max(fd_e.abs()) / floor);
        if !ok {
            return Err(format!("d rate / d offset: analytic {de} vs numeric {fd_e}"));
        }
    }

    // decoder parameters through the distortion loss
    let mut cfg = DecoderConfig::new(Variant::HnervBoost, &[2, 2, 2], (32, 48)).map_err(|e| e.to_string())?;
    cfg.c1 = 12;
    cfg.c_min = 6;
    cfg.pe = PeConfig { b: 1.25, l: 8 };
    let mut model = DecoderModel::<f64>::build(cfg.clone(), 4).map_err(|e| e.to_string())?;
    // move zero-initialized layers away from zero so every parameter matters
    let ids: Vec<_> = model.store.ids().collect();
    for &id in &ids {
        for v in model.store.get_mut(id).data_mut() {
            *v += rng.gen_range(-0.05..0.05);
        }
    }
    let (eh, ew) = cfg.embed_hw;
    let y = Tensor::from_fn(vec![cfg.embed_dim, eh, ew], |_| rng.gen_range(-1.0..1.0f64));
    let target = Tensor::from_fn(vec![3, 32, 48], |_| rng.gen_range(0.0..1.0f64));
    let w = LossWeights::default();
    let loss_at = |m: &DecoderModel<f64>| -> (f64, Vec<Option<Tensor<f64>>>) {
        let mut g = Graph::new();
        let p = m.store.bind(&mut g, true);
        let yv = g.constant(y.clone());
        let out = m.frame_forward(&mut g, &p, Some(yv), 0.5).unwrap();
        let l = distortion_loss_node(&mut g, out, &target, &w).unwrap();
        let grads = g.backward(l);
        (g.value(l).item(), p.vars().iter().map(|v| grads.get(*v).cloned()).collect())
    };
    let (_, grads) = loss_at(&model);
    let mut worst_param: f64 = 0.0;
    for _ in 0..10 {
        let k = rng.gen_range(0..ids.len());
        let id = ids[k];
        let i = rng.gen_range(0..model.store.get(id).numel());
        let analytic = grads[k].as_ref().map_or(0.0, |t| t.data()[i]);
        let h = 1e-6;
        let orig = model.store.get(id).data()[i];
        model.store.get_mut(id).data_mut()[i] = orig + h;
        let up = loss_at(&model).0;
        model.store.get_mut(id).data_mut()[i] = orig - h;
        let down = loss_at(&model).0;
        model.store.get_mut(id).data_mut()[i] = orig;
        let numeric = (up - down) / (2.0 * h);
        let e = rel_err(analytic, numeric);
        worst_param = worst_param.max(e);
        if e > GRAD_REL_TOL {
            return Err(format!("{}[{i}]: analytic {analytic} vs numeric {numeric}", model.store.name(id)));
        }
    }
    Ok(format!(
        "scale rel err {worst_scale:.1e}; offset gradient {eta_gap:.1e} of floor; 10 decoder params rel err {worst_param:.1e}"
    ))
}

fn loss_identities() -> Outcome {
    let mut rng = ChaCha8Rng::seed_from_u64(8);
    let x = Tensor::from_fn(vec![3, 64, 96], |_| rng.gen_range(0.0..1.0f64));
    let w = LossWeights::default();
    if (w.lambda, w.alpha) != (60.0, 0.7) {
        return Err(format!("defaults lambda={} alpha={}", w.lambda, w.alpha));
    }
    let terms = [
        ("frequency", LossWeights { lambda: 1e-9, alpha: 1.0, ..w.clone() }),
        ("pixel L1", LossWeights { freq_weight: 0.0, alpha: 1.0, ..w.clone() }),
        ("pixel L2", LossWeights { freq_weight: 0.0, alpha: 1.0, pixel: PixelNorm::L2, ..w.clone() }),
        ("ms-ssim", LossWeights { freq_weight: 0.0, alpha: 0.0, ..w.clone() }),
        ("combined", w.clone()),
    ];
    for (name, t) in &terms {
        let v = distortion_loss(&x, &x, t).map_err(|e| e.to_string())?;
        if v != 0.0 {
            return Err(format!("{name} term of L(x, x) = {v}"));
        }
    }
    let y = Tensor::from_fn(vec![3, 64, 96], |_| rng.gen_range(0.0..1.0f64));
    let mask = Tensor::from_fn(vec![64, 96], |i| if (i / 96) % 7 == 3 || i % 11 == 0 { 0.0 } else { 1.0 });
    let mut g = Graph::new();
    let v = g.leaf(y);
    let l = masked_distortion_loss_node(&mut g, v, &x, &mask, &w).map_err(|e| e.to_string())?;
    let grad = g.backward(l).take(v).ok_or("no gradient")?;
    let leaks = grad.data().iter().enumerate().filter(|(i, d)| mask.data()[i % mask.numel()] == 0.0 && **d != 0.0).count();
    check(
        leaks == 0,
        "L(x, x) = 0 for every term; hidden-pixel gradients exactly 0; lambda = 60, alpha = 0.7".into(),
        format!("{leaks} hidden pixels received gradient"),
    )
}

fn shape_identity() -> Outcome {
    let pe = positional_encode(0.5, &PeConfig::default()).map_err(|e| e.to_string())?;
    let d = PeConfig::default();
    if pe.len() != 160 || (d.b, d.l) != (1.25, 80) {
        return Err(format!("default encoding: b={} l={} len={}", d.b, d.l, pe.len()));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(13);
    let variants = [Variant::NervBoost, Variant::EnervBoost, Variant::HnervBoost];
    for case in 0..12 {
        let v = variants[case % 3];
        let strides: Vec<usize> = (0..rng.gen_range(1..=3)).map(|_| rng.gen_range(1..=3)).collect();
        let prod: usize = strides.iter().product();
        let (eh, ew) = (rng.gen_range(1..=3), rng.gen_range(1..=4));
        let mut cfg = DecoderConfig::new(v, &strides, (eh * prod, ew * prod)).map_err(|e| e.to_string())?;
        cfg.c1 = rng.gen_range(6..=20);
        cfg.c_min = 4;
        cfg.pe = PeConfig { b: 1.25, l: 6 };
        cfg.stem_hidden = 16;
        let m = DecoderModel::<f64>::build(cfg.clone(), case as u64).map_err(|e| e.to_string())?;
        let y = Tensor::from_fn(vec![cfg.embed_dim, eh, ew], |_| rng.gen_range(-1.0..1.0));
        let out = m.decode_frame(v.is_hybrid().then_some(&y), 0.3).map_err(|e| e.to_string())?;
        if out.shape() != [3, eh * prod, ew * prod] {
            return Err(format!("{v} strides {strides:?}: output {:?}", out.shape()));
        }
        if v.is_hybrid() && out != m.decode_frame(Some(&y), 0.8).map_err(|e| e.to_string())? {
            return Err(format!("{v} strides {strides:?}: output depends on t at initialization"));
        }
    }
    Ok("12 random layouts give [3, h*prod, w*prod]; initial output independent of t; encoding length 160 (b 1.25, l 80)".into())
}

fn budgeting() -> Outcome {
    let mut worst: f64 = 0.0;
    for v in [Variant::NervBoost, Variant::EnervBoost, Variant::HnervBoost] {
        for target in [300_000, 500_000, 750_000, 1_000_000, 1_500_000, 2_000_000, 2_500_000, 3_000_000] {
            let cfg = DecoderConfig::new(v, &[5, 3, 2, 2, 2], (1080, 1920))
                .and_then(|c| c.with_target_params(target))
                .map_err(|e| format!("{v} at {target}: {e}"))?;
            let dev = count_params(&cfg) as f64 / target as f64 - 1.0;
            worst = worst.max(dev.abs());
            if dev.abs() > BUDGET_TOL {
                return Err(format!("{v} at {target}: off by {:+.2}%", dev * 100.0));
            }
        }
    }
    let cv = |v: Variant| -> Result<f64, String> {
        let cfg = DecoderConfig::new(v, &[5, 3, 2, 2, 2], (1080, 1920))
            .and_then(|c| c.with_target_params(3_000_000))
            .map_err(|e| e.to_string())?;
        Ok(DecoderModel::<f32>::build(cfg, 0).map_err(|e| e.to_string())?.balance_report().cv)
    };
    let (h, n) = (cv(Variant::HnervBoost)?, cv(Variant::NervBoost)?);
    check(
        worst <= BUDGET_TOL && h < n,
        format!("24 targets within {:.2}% (tolerance 3%); stage CV hybrid {h:.3} < index {n:.3}", worst * 100.0),
        format!("stage CV hybrid {h:.3} vs index {n:.3}"),
    )
}

struct Boosting {
    boosted: Trained,
    set: Vec<Sample>,
    psnr_boost: f64,
    psnr_base: f64,
}

fn train_pair() -> Result<Boosting, String> {
    let clip = synth_video(&SynthSpec { frames: 8, height: 120, width: 240, seed: 7 }).map_err(|e| e.to_string())?;
    let set = samples(&clip, &(1..=8).collect::<Vec<_>>()).map_err(|e| e.to_string())?;
    let base_cfg = DecoderConfig::new(Variant::HnervBoost, &[5, 3, 2, 2, 2], (120, 240)).map_err(|e| e.to_string())?;
    let run = |cfg: DecoderConfig, loss: LossWeights| -> Result<(Trained, f64), String> {
        let cfg = cfg.with_target_params(300_000).map_err(|e| e.to_string())?;
        let mut m = Trained::build(cfg, 1).map_err(|e| e.to_string())?;
        let tc = TrainConfig { epochs: BOOST_EPOCHS, loss, ..TrainConfig::default() };
        train_regression(&mut m, &set, &tc, |_| {}).map_err(|e| e.to_string())?;
        let p = m.evaluate(&set).map_err(|e| e.to_string())?.psnr;
        Ok((m, p))
    };
    let (boosted, psnr_boost) = run(base_cfg.clone(), LossWeights::default())?;
    let ablated = DecoderConfig { modulation: Modulation::None, activation: Activation::Gelu, ..base_cfg };
    let (_, psnr_base) = run(ablated, LossWeights::l2())?;
    Ok(Boosting { boosted, set, psnr_boost, psnr_base })
}

fn boosting(b: &Boosting) -> Outcome {
    let margin = b.psnr_boost - b.psnr_base;
    let msg = format!(
        "boosted {:.2} dB vs ablated {:.2} dB: margin {margin:+.2} dB (required {BOOST_MARGIN_DB:+.1})",
        b.psnr_boost, b.psnr_base
    );
    check(margin >= BOOST_MARGIN_DB, msg.clone(), msg)
}

fn rd_sanity(b: &Boosting) -> Outcome {
    let mut points = Vec::new();
    for b_avg in [2.0, 4.0, 8.0] {
        let cfg = CompressConfig { epochs: RD_COMPRESS_EPOCHS, b_avg, ..CompressConfig::for_decoder(&b.boosted.decoder) };
        let r = finetune_compress(&b.boosted, &b.set, &cfg, &ReferenceCoder, |_, _| {}).map_err(|e| e.to_string())?.report;
        if r.psnr != r.psnr_in_memory {
            return Err(format!("B={b_avg}: bitstream {} dB vs in-memory {} dB", r.psnr, r.psnr_in_memory));
        }
        points.push((b_avg, r.bpp, r.psnr));
    }
    let text = points.iter().map(|(b, r, p)| format!("B={b}: {r:.3} bpp {p:.2} dB")).collect::<Vec<_>>().join(", ");
    let monotone = points.windows(2).all(|w| w[1].1 > w[0].1 && w[1].2 > w[0].2);
    check(monotone, format!("{text}; bitstream PSNR equals in-memory"), format!("not monotone: {text}"))
}

fn main() {
    let mut failed = 0;
    let mut report = |name: &str, start: Instant, outcome: Outcome| {
        let secs = start.elapsed().as_secs_f64();
        match outcome {
            Ok(msg) => println!("PASS  {name:<22} {msg}  [{secs:.1}s]"),
            Err(msg) => {
                failed += 1;
                println!("FAIL  {name:<22} {msg}  [{secs:.1}s]");
            }
        }
    };
    let fast: [(&str, fn() -> Outcome); 7] = [
        ("codec round-trip", codec_round_trip),
        ("cem consistency", cem_consistency),
        ("entropy validity", entropy_validity),
        ("gradient suite", gradient_suite),
        ("loss identities", loss_identities),
        ("shape/identity", shape_identity),
        ("parameter budgeting", budgeting),
    ];
    for (name, f) in fast {
        let t = Instant::now();
        report(name, t, f());
    }
    if std::env::var_os("NERV_BOOST_SKIP_SCALED").is_some() {
        println!("SKIP  scaled boosting and scaled rd sanity (NERV_BOOST_SKIP_SCALED is set)");
        println!("{failed} criteria failed");
        std::process::exit(i32::from(failed > 0));
    }
    let t = Instant::now();
    match train_pair() {
        Ok(pair) => {
            report("scaled boosting", t, boosting(&pair));
            let t = Instant::now();
            report("scaled rd sanity", t, rd_sanity(&pair));
        }
        Err(e) => {
            report("scaled boosting", t, Err(e.clone()));
            report("scaled rd sanity", Instant::now(), Err(format!("no trained model: {e}")));
        }
    }
    println!("{failed} criteria failed");
    if failed > 0 {
        std::process::exit(1);
    }
}
