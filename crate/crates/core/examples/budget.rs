//! Solves channel widths for a parameter budget and prints how the
//! parameters spread over the decoder stages for each variant.

use nerv_boost::decoder::{DecoderConfig, DecoderModel, Variant};

fn main() -> anyhow::Result<()> {
    let target = std::env::args().nth(1).and_then(|s| s.parse().ok()).unwrap_or(3_000_000);
    for v in [Variant::NervBoost, Variant::EnervBoost, Variant::HnervBoost] {
        let cfg = DecoderConfig::new(v, &[5, 3, 2, 2, 2], (1080, 1920))?.with_target_params(target)?;
        let model = DecoderModel::<f32>::build(cfg, 0)?;
        let report = model.balance_report();
        println!("{v}: C1={} widths={:?} params={}", model.cfg.c1, model.cfg.stage_widths(), model.num_params());
        for (group, n) in &report.groups {
            println!("  {group:>8} {n:>9}");
        }
        println!("  stage CV {:.3}", report.cv);
    }
    Ok(())
}
