//! End-to-end workflows: training, compression, inpainting, interpolation
//! and reporting.

pub mod compress;
pub mod config;
pub mod inpaint;
pub mod interpolate;
pub mod optim;
pub mod report;
pub mod train;
pub mod video;

pub use compress::{decode_eval, default_kappa, finetune_compress, CompressConfig, CompressReport, Compressed};
pub use config::{RunConfig, OUT_ENV};
pub use inpaint::{build_mask, region_psnr, train_inpainting, InpaintReport, MaskSpec};
pub use interpolate::{interpolation_config, split_odd_even, train_interpolation, InterpReport, INTERP_PE_BASE};
pub use optim::{lr_at, Adan, AdanConfig};
pub use report::{plot_rd, rd_curves, read_csv, write_csv, write_json, RdPoint};
pub use train::{evaluate_with, samples, train_regression, EpochStats, EvalStats, Sample, TrainConfig, Trained};
pub use video::{load_video, save_clip, save_png, synth_video, SynthSpec, VideoClip};
