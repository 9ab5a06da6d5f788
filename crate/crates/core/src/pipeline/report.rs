//! Result tables (CSV, JSON) and a rate-distortion plot.

use std::collections::BTreeMap;
use std::path::Path;

use image::{Rgb, RgbImage};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// One rate-distortion point.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct RdPoint {
    pub series: String,
    pub bpp: f64,
    pub psnr: f64,
    pub ms_ssim: f64,
}

pub fn write_csv(points: &[RdPoint], path: &Path) -> Result<()> {
    let mut w = csv::Writer::from_path(path).map_err(|e| Error::Config(format!("{}: {e}", path.display())))?;
    for p in points {
        w.serialize(p).map_err(|e| Error::Config(format!("{}: {e}", path.display())))?;
    }
    w.flush()?;
    Ok(())
}

pub fn read_csv(path: &Path) -> Result<Vec<RdPoint>> {
    let mut r = csv::Reader::from_path(path).map_err(|e| Error::Config(format!("{}: {e}", path.display())))?;
    r.deserialize()
        .map(|row| row.map_err(|e| Error::Config(format!("{}: {e}", path.display()))))
        .collect()
}

pub fn write_json<T: Serialize>(value: &T, path: &Path) -> Result<()> {
    let text = serde_json::to_string_pretty(value).map_err(|e| Error::Config(e.to_string()))?;
    std::fs::write(path, text)?;
    Ok(())
}

/// Points grouped by series, each sorted by bits per pixel.
pub fn rd_curves(points: &[RdPoint]) -> BTreeMap<String, Vec<(f64, f64)>> {
    let mut out: BTreeMap<String, Vec<(f64, f64)>> = BTreeMap::new();
    for p in points {
        out.entry(p.series.clone()).or_default().push((p.bpp, p.psnr));
    }
    for v in out.values_mut() {
        v.sort_by(|a, b| a.0.total_cmp(&b.0));
    }
    out
}

const PALETTE: [[u8; 3]; 6] = [[214, 39, 40], [31, 119, 180], [44, 160, 44], [255, 127, 14], [148, 103, 189], [23, 190, 207]];

fn line(img: &mut RgbImage, (x0, y0): (i64, i64), (x1, y1): (i64, i64), c: Rgb<u8>) {
    let steps = (x1 - x0).abs().max((y1 - y0).abs()).max(1);
    for i in 0..=steps {
        let x = x0 + (x1 - x0) * i / steps;
        let y = y0 + (y1 - y0) * i / steps;
        for (dx, dy) in [(0, 0), (1, 0), (0, 1)] {
            let (px, py) = (x + dx, y + dy);
            if px >= 0 && py >= 0 && (px as u32) < img.width() && (py as u32) < img.height() {
                img.put_pixel(px as u32, py as u32, c);
            }
        }
    }
}

/// PSNR over bpp, one coloured polyline per series (colours follow series
/// name order), on light grid lines at round values.
pub fn plot_rd(points: &[RdPoint], path: &Path) -> Result<()> {
    let curves = rd_curves(points);
    let finite = || points.iter().filter(|p| p.bpp.is_finite() && p.psnr.is_finite());
    if finite().next().is_none() {
        return Err(Error::Config("nothing to plot".into()));
    }
    let (w, h, m) = (640i64, 420i64, 40i64);
    let (bmin, bmax) = finite().fold((f64::INFINITY, f64::NEG_INFINITY), |a, p| (a.0.min(p.bpp), a.1.max(p.bpp)));
    let (pmin, pmax) = finite().fold((f64::INFINITY, f64::NEG_INFINITY), |a, p| (a.0.min(p.psnr), a.1.max(p.psnr)));
    let (bmin, bmax) = (bmin * 0.95, bmax * 1.05 + 1e-9);
    let (pmin, pmax) = ((pmin - 1.0).floor(), (pmax + 1.0).ceil());
    let to_px = |b: f64, p: f64| {
        (m + ((b - bmin) / (bmax - bmin) * (w - 2 * m) as f64) as i64, h - m - ((p - pmin) / (pmax - pmin) * (h - 2 * m) as f64) as i64)
    };
    let mut img = RgbImage::from_pixel(w as u32, h as u32, Rgb([255, 255, 255]));
    let grid = Rgb([225, 225, 225]);
    let mut p = pmin;
    while p <= pmax {
        line(&mut img, to_px(bmin, p), to_px(bmax, p), grid);
        p += 1.0;
    }
    let axis = Rgb([0, 0, 0]);
    line(&mut img, (m, h - m), (w - m, h - m), axis);
    line(&mut img, (m, m), (m, h - m), axis);
    for (i, pts) in curves.values().enumerate() {
        let c = Rgb(PALETTE[i % PALETTE.len()]);
        let pts: Vec<(i64, i64)> = pts.iter().filter(|(b, p)| b.is_finite() && p.is_finite()).map(|&(b, p)| to_px(b, p)).collect();
        for pair in pts.windows(2) {
            line(&mut img, pair[0], pair[1], c);
        }
        for &(x, y) in &pts {
            for d in -3..=3 {
                line(&mut img, (x + d, y - 3), (x + d, y + 3), c);
            }
        }
    }
    img.save(path)?;
    Ok(())
}
