use std::path::{Path, PathBuf};

use anyhow::{bail, Context, Result};
use clap::{Args, Parser, Subcommand};
use nerv_boost::checkpoint::Checkpoint;
use nerv_boost::codec::ReferenceCoder;
use nerv_boost::pipeline::{
    build_mask, finetune_compress, interpolation_config, plot_rd, read_csv, samples, save_png, train_inpainting,
    train_interpolation, train_regression, write_csv, write_json, EpochStats, RdPoint, RunConfig, Trained,
};

#[derive(Parser)]
#[command(name = "nerv-boost", version, about = "Boosted neural video representations")]
struct Cli {
    #[command(subcommand)]
    cmd: Cmd,
}

#[derive(Args)]
struct Common {
    /// key = value settings file
    #[arg(long)]
    config: Option<PathBuf>,
    /// Directory of PNG frames (default: synthetic clip)
    #[arg(long)]
    input: Option<PathBuf>,
    /// Output directory
    #[arg(long)]
    out: Option<PathBuf>,
    /// Override a setting, e.g. `-s epochs=50`
    #[arg(short = 's', long = "set", value_name = "KEY=VALUE")]
    set: Vec<String>,
}

impl Common {
    fn resolve(&self) -> Result<RunConfig> {
        let mut cfg = match &self.config {
            Some(p) => RunConfig::from_file(p).with_context(|| format!("reading {}", p.display()))?,
            None => RunConfig::default(),
        };
        cfg = cfg.with_overrides(&self.set)?;
        if let Some(i) = &self.input {
            cfg.input = Some(i.clone());
        }
        if let Some(o) = &self.out {
            cfg.out = o.clone();
        }
        std::fs::create_dir_all(&cfg.out).with_context(|| format!("creating {}", cfg.out.display()))?;
        Ok(cfg)
    }
}

#[derive(Subcommand)]
enum Cmd {
    /// Fit a decoder to a clip and save a checkpoint
    Regress(Common),
    /// Fit (or load) a decoder, then write one bitstream per bit target
    Compress {
        #[command(flatten)]
        common: Common,
        /// Start from this checkpoint instead of training
        #[arg(long)]
        checkpoint: Option<PathBuf>,
    },
    /// Train with hidden regions and score the fill-in
    Inpaint(Common),
    /// Train on odd frames and decode the even ones
    Interpolate(Common),
    /// Plot rate-distortion results from CSV files
    Report {
        /// CSV files written by `compress` (default: <out>/rd.csv)
        csv: Vec<PathBuf>,
        #[arg(long)]
        out: Option<PathBuf>,
    },
}

fn log_epoch(s: &EpochStats) {
    log::info!("epoch {:4}  loss {:.4}  psnr {:.2} dB  lr {:.2e}  {:.1}s", s.epoch, s.loss, s.psnr, s.lr, s.seconds);
}

fn train(cfg: &RunConfig) -> Result<(Trained, nerv_boost::pipeline::VideoClip)> {
    let clip = cfg.load_clip()?;
    let dcfg = cfg.decoder_config((clip.height, clip.width))?;
    let mut model = Trained::build(dcfg, cfg.seed)?;
    log::info!("{}: {} decoder parameters, {} frames", cfg.label(), model.decoder.num_params(), clip.len());
    let set = samples(&clip, &(1..=clip.len()).collect::<Vec<_>>())?;
    train_regression(&mut model, &set, &cfg.train_config(), log_epoch)?;
    Ok((model, clip))
}

fn regress(cfg: &RunConfig) -> Result<()> {
    let (model, clip) = train(cfg)?;
    let set = samples(&clip, &(1..=clip.len()).collect::<Vec<_>>())?;
    let eval = model.evaluate(&set)?;
    let ck = cfg.out.join(format!("{}.nrvc", cfg.label()));
    model.to_checkpoint().save(&ck)?;
    write_json(&serde_json::json!({ "eval": eval, "history": model.history }), &cfg.out.join("regress.json"))?;
    save_png(&model.reconstruct(&set[0])?, &cfg.out.join("frame_0001.png"))?;
    println!("psnr {:.2} dB  ms-ssim {:.4}  checkpoint {}", eval.psnr, eval.ms_ssim, ck.display());
    Ok(())
}

fn compress(cfg: &RunConfig, checkpoint: Option<&Path>) -> Result<()> {
    let clip = cfg.load_clip()?;
    let model = match checkpoint {
        Some(p) => Trained::from_checkpoint(&Checkpoint::load(p)?)?,
        None => train(cfg)?.0,
    };
    let set = samples(&clip, &(1..=clip.len()).collect::<Vec<_>>())?;
    let csv = cfg.out.join("rd.csv");
    let mut points = if csv.exists() { read_csv(&csv)? } else { Vec::new() };
    for &b in &cfg.b_avg {
        let c = finetune_compress(&model, &set, &cfg.compress_config(&model, b), &ReferenceCoder, |e, l| {
            log::info!("compress b={b} epoch {e} loss {l:.4}")
        })?;
        let path = cfg.out.join(format!("{}-b{b}.nrvb", cfg.label()));
        std::fs::write(&path, &c.bytes)?;
        let r = &c.report;
        println!("b_avg {b}: {:.4} bpp  psnr {:.2} dB  ms-ssim {:.4}  -> {}", r.bpp, r.psnr, r.ms_ssim, path.display());
        points.push(RdPoint { series: cfg.label(), bpp: r.bpp, psnr: r.psnr, ms_ssim: r.ms_ssim });
        write_json(r, &path.with_extension("json"))?;
    }
    write_csv(&points, &csv)?;
    Ok(())
}

fn inpaint(cfg: &RunConfig) -> Result<()> {
    let clip = cfg.load_clip()?;
    let mut model = Trained::build(cfg.decoder_config((clip.height, clip.width))?, cfg.seed)?;
    let mask = build_mask(&cfg.mask, clip.height, clip.width)?;
    let set = samples(&clip, &(1..=clip.len()).collect::<Vec<_>>())?;
    let r = train_inpainting(&mut model, &set, &mask, &cfg.train_config(), log_epoch)?;
    write_json(&r, &cfg.out.join("inpaint.json"))?;
    println!("psnr {:.2} dB  hidden {:.2} dB  visible {:.2} dB", r.psnr, r.psnr_hidden, r.psnr_visible);
    Ok(())
}

fn interpolate(cfg: &RunConfig) -> Result<()> {
    let clip = cfg.load_clip()?;
    let dcfg = interpolation_config(cfg.decoder_config((clip.height, clip.width))?);
    let mut model = Trained::build(dcfg, cfg.seed)?;
    let r = train_interpolation(&mut model, &clip, &cfg.train_config(), log_epoch)?;
    write_json(&r, &cfg.out.join("interpolate.json"))?;
    println!("held-out psnr {:.2} dB  ms-ssim {:.4}  (train {:.2} dB)", r.psnr, r.ms_ssim, r.train_psnr);
    Ok(())
}

fn report(csv: &[PathBuf], out: Option<PathBuf>) -> Result<()> {
    let out = out.unwrap_or_else(|| RunConfig::default().out);
    let files = if csv.is_empty() { vec![out.join("rd.csv")] } else { csv.to_vec() };
    let mut points = Vec::new();
    for f in &files {
        points.extend(read_csv(f).with_context(|| format!("reading {}", f.display()))?);
    }
    if points.is_empty() {
        bail!("no rate-distortion points in {files:?}");
    }
    std::fs::create_dir_all(&out)?;
    for (series, pts) in nerv_boost::pipeline::rd_curves(&points) {
        for (bpp, psnr) in pts {
            println!("{series:>20}  {bpp:.4} bpp  {psnr:.2} dB");
        }
    }
    let png = out.join("rd.png");
    plot_rd(&points, &png)?;
    write_json(&points, &out.join("rd.json"))?;
    println!("plot written to {}", png.display());
    Ok(())
}

fn main() -> Result<()> {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("info")).init();
    match Cli::parse().cmd {
        Cmd::Regress(c) => regress(&c.resolve()?),
        Cmd::Compress { common, checkpoint } => compress(&common.resolve()?, checkpoint.as_deref()),
        Cmd::Inpaint(c) => inpaint(&c.resolve()?),
        Cmd::Interpolate(c) => interpolate(&c.resolve()?),
        Cmd::Report { csv, out } => report(&csv, out),
    }
}
