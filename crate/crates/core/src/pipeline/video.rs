//! Clips as `[3, H, W]` frames in `[0, 1]`: PNG directory I/O and a seeded
//! synthetic generator of moving patterns.

use std::path::{Path, PathBuf};

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::tensor::Tensor;

#[derive(Clone, Debug, PartialEq)]
pub struct VideoClip {
    pub frames: Vec<Tensor<f32>>,
    pub height: usize,
    pub width: usize,
}

impl VideoClip {
    pub fn new(frames: Vec<Tensor<f32>>) -> Result<Self> {
        let first = frames.first().ok_or_else(|| Error::Video("clip has no frames".into()))?;
        let (c, height, width) = first.chw()?;
        if c != 3 {
            return Err(Error::Video(format!("frames need 3 channels, got {c}")));
        }
        if let Some((i, f)) = frames.iter().enumerate().find(|(_, f)| f.shape() != first.shape()) {
            return Err(Error::Video(format!("frame {i} is {:?}, frame 0 is {:?}", f.shape(), first.shape())));
        }
        Ok(Self { frames, height, width })
    }

    pub fn len(&self) -> usize {
        self.frames.len()
    }

    pub fn is_empty(&self) -> bool {
        self.frames.is_empty()
    }

    pub fn pixels_per_frame(&self) -> usize {
        self.height * self.width
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct SynthSpec {
    pub frames: usize,
    pub height: usize,
    pub width: usize,
    pub seed: u64,
}

impl Default for SynthSpec {
    fn default() -> Self {
        Self { frames: 8, height: 120, width: 240, seed: 7 }
    }
}

struct Sprite {
    cy: f32,
    cx: f32,
    vy: f32,
    vx: f32,
    radius: f32,
    round: bool,
    color: [f32; 3],
    stripe: f32,
    angle: f32,
}

/// Translating colour waves over a gradient, with textured sprites moving
/// across the frame (wrapping at the borders).
pub fn synth_video(spec: &SynthSpec) -> Result<VideoClip> {
    if spec.frames == 0 || spec.height == 0 || spec.width == 0 {
        return Err(Error::Video(format!("empty synthetic clip {spec:?}")));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(spec.seed);
    let (h, w) = (spec.height as f32, spec.width as f32);
    let waves: Vec<[f32; 4]> = (0..3)
        .map(|_| [rng.gen_range(0.5..2.5), rng.gen_range(0.3..1.5), rng.gen_range(0.0..6.28), rng.gen_range(0.2..0.6)])
        .collect();
    let sprites: Vec<Sprite> = (0..3)
        .map(|_| Sprite {
            cy: rng.gen_range(0.0..h),
            cx: rng.gen_range(0.0..w),
            vy: rng.gen_range(-0.04..0.04) * h,
            vx: rng.gen_range(-0.06..0.06) * w,
            radius: rng.gen_range(0.1..0.2) * h,
            round: rng.gen_bool(0.5),
            color: [rng.gen_range(0.1..0.9), rng.gen_range(0.1..0.9), rng.gen_range(0.1..0.9)],
            stripe: rng.gen_range(3.0..7.0),
            angle: rng.gen_range(0.0..3.14),
        })
        .collect();
    let frames = (0..spec.frames)
        .map(|t| {
            let tf = t as f32;
            let mut frame = Tensor::from_fn(vec![3, spec.height, spec.width], |i| {
                let (c, y, x) = (i / (spec.height * spec.width), (i / spec.width) % spec.height, i % spec.width);
                let [fx, fy, ph, speed] = waves[c];
                let (u, v) = (x as f32 / w, y as f32 / h);
                let wave = (std::f32::consts::TAU * (fx * u + fy * v) + ph + speed * tf).sin();
                0.45 + 0.2 * wave + 0.25 * (u - 0.5) * if c == 1 { -1.0 } else { 1.0 }
            });
            let data = frame.data_mut();
            for s in &sprites {
                let cy = (s.cy + s.vy * tf).rem_euclid(h);
                let cx = (s.cx + s.vx * tf).rem_euclid(w);
                let r = s.radius;
                let (sa, ca) = s.angle.sin_cos();
                for y in 0..spec.height {
                    for x in 0..spec.width {
                        let mut dy = y as f32 - cy;
                        let mut dx = x as f32 - cx;
                        dy -= h * (dy / h).round();
                        dx -= w * (dx / w).round();
                        let inside = if s.round { dy * dy + dx * dx <= r * r } else { dy.abs() <= r && dx.abs() <= r };
                        if !inside {
                            continue;
                        }
                        let along = dx * ca + dy * sa;
                        let tex = 0.5 + 0.5 * (along * std::f32::consts::TAU / (2.0 * s.stripe)).sin().signum();
                        for (c, col) in s.color.iter().enumerate() {
                            data[c * spec.height * spec.width + y * spec.width + x] = col * (0.55 + 0.45 * tex);
                        }
                    }
                }
            }
            for v in data.iter_mut() {
                *v = v.clamp(0.0, 1.0);
            }
            frame
        })
        .collect();
    VideoClip::new(frames)
}

fn numeric_key(p: &Path) -> (u64, String) {
    let stem = p.file_stem().and_then(|s| s.to_str()).unwrap_or_default().to_string();
    let digits: String = stem.chars().rev().take_while(|c| c.is_ascii_digit()).collect::<Vec<_>>().into_iter().rev().collect();
    (digits.parse().unwrap_or(u64::MAX), stem)
}

/// Loads every `.png` in `dir`, ordered by the trailing number in the file name.
pub fn load_video(dir: &Path) -> Result<VideoClip> {
    let mut paths: Vec<PathBuf> = std::fs::read_dir(dir)
        .map_err(|e| Error::Video(format!("{}: {e}", dir.display())))?
        .filter_map(|e| e.ok().map(|e| e.path()))
        .filter(|p| p.extension().and_then(|e| e.to_str()).is_some_and(|e| e.eq_ignore_ascii_case("png")))
        .collect();
    if paths.is_empty() {
        return Err(Error::Video(format!("no PNG frames in {}", dir.display())));
    }
    paths.sort_by_key(|p| numeric_key(p));
    let frames = paths.iter().map(|p| load_png(p)).collect::<Result<Vec<_>>>()?;
    VideoClip::new(frames)
}

pub fn load_png(path: &Path) -> Result<Tensor<f32>> {
    let img = image::open(path).map_err(|e| Error::Video(format!("{}: {e}", path.display())))?.to_rgb8();
    let (w, h) = (img.width() as usize, img.height() as usize);
    let raw = img.into_raw();
    Ok(Tensor::from_fn(vec![3, h, w], |i| {
        let (c, p) = (i / (h * w), i % (h * w));
        raw[p * 3 + c] as f32 / 255.0
    }))
}

/// Writes a `[3, H, W]` frame as 8-bit RGB, clamping to `[0, 1]`.
pub fn save_png(frame: &Tensor<f32>, path: &Path) -> Result<()> {
    let (_, h, w) = frame.chw()?;
    let d = frame.data();
    let raw: Vec<u8> = (0..h * w * 3)
        .map(|i| {
            let (p, c) = (i / 3, i % 3);
            (d[c * h * w + p].clamp(0.0, 1.0) * 255.0).round() as u8
        })
        .collect();
    image::RgbImage::from_raw(w as u32, h as u32, raw)
        .ok_or_else(|| Error::Video("frame buffer size mismatch".into()))?
        .save(path)?;
    Ok(())
}

pub fn save_clip(clip: &VideoClip, dir: &Path) -> Result<()> {
    std::fs::create_dir_all(dir)?;
    for (t, f) in clip.frames.iter().enumerate() {
        save_png(f, &dir.join(format!("frame_{t:04}.png")))?;
    }
    Ok(())
}
