//! Strided convolutional frame encoder producing the compact content
//! embedding consumed by the hybrid decoder. Encoder weights are encode-time
//! machinery and never enter the bitstream.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::autograd::{Graph, Var};
use crate::error::{Error, Result};
use crate::params::{Bound, Init, InitSink, ParamId, ParamSink, ParamStore};
use crate::tensor::{Real, Tensor};

/// Every encoder parameter name starts with this.
pub const ENCODER_PREFIX: &str = "enc.";

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct EncoderConfig {
    /// Downsampling strides in order of application. The default applies the
    /// decoder list as written, so the largest stride acts as a patchify stem.
    pub strides: Vec<usize>,
    pub width: usize,
    pub embed_dim: usize,
    /// Pointwise expansion ratio inside each block.
    pub expand: usize,
}

impl EncoderConfig {
    pub fn new(decoder_strides: &[usize], embed_dim: usize) -> Self {
        Self { strides: decoder_strides.to_vec(), width: 64, embed_dim, expand: 4 }
    }

    /// Embedding shape `[d, h, w]` for an `H x W` frame.
    pub fn embed_shape(&self, h: usize, w: usize) -> Result<[usize; 3]> {
        if self.strides.is_empty() {
            return Err(Error::Config("encoder needs at least one stride".into()));
        }
        let (mut ch, mut cw) = (h, w);
        for (i, &s) in self.strides.iter().enumerate() {
            if s == 0 || ch % s != 0 || cw % s != 0 {
                return Err(Error::Config(format!(
                    "frame {h}x{w} is not divisible by stride {s} at encoder stage {} (feature map {ch}x{cw})",
                    i + 1
                )));
            }
            ch /= s;
            cw /= s;
        }
        Ok([self.embed_dim, ch, cw])
    }
}

#[derive(Clone, Debug)]
struct EncStage {
    stride: usize,
    k: usize,
    down: (ParamId, ParamId),
    dw: (ParamId, ParamId),
    pw1: (ParamId, ParamId),
    pw2: (ParamId, ParamId),
}

#[derive(Clone, Debug)]
pub struct FrameEncoder<T> {
    pub cfg: EncoderConfig,
    pub store: ParamStore<T>,
    stages: Vec<EncStage>,
    proj: (ParamId, ParamId),
}

fn conv(sink: &mut impl ParamSink, name: &str, cout: usize, cin: usize, k: usize) -> (ParamId, ParamId) {
    let fan = cin * k * k;
    (
        sink.declare(format!("{name}.w"), vec![cout, cin, k, k], Init::FanIn(fan)),
        sink.declare(format!("{name}.b"), vec![cout], Init::FanIn(fan)),
    )
}

impl<T: Real> FrameEncoder<T> {
    pub fn build(cfg: EncoderConfig, seed: u64) -> Result<Self> {
        if cfg.width == 0 || cfg.embed_dim == 0 || cfg.expand == 0 || cfg.strides.is_empty() {
            return Err(Error::Config("encoder widths and strides must be positive".into()));
        }
        let mut store = ParamStore::new();
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let sink = &mut InitSink { store: &mut store, rng: &mut rng };
        let c = cfg.width;
        let mut stages = Vec::new();
        for (i, &s) in cfg.strides.iter().enumerate() {
            let cin = if i == 0 { 3 } else { c };
            let k = if i == 0 { s } else { 3 };
            let p = format!("enc.s{}", i + 1);
            stages.push(EncStage {
                stride: s,
                k,
                down: conv(sink, &format!("{p}.down"), c, cin, k),
                dw: (
                    sink.declare(format!("{p}.dw.w"), vec![c, 1, 7, 7], Init::FanIn(49)),
                    sink.declare(format!("{p}.dw.b"), vec![c], Init::FanIn(49)),
                ),
                pw1: conv(sink, &format!("{p}.pw1"), c * cfg.expand, c, 1),
                pw2: conv(sink, &format!("{p}.pw2"), c, c * cfg.expand, 1),
            });
        }
        let proj = conv(sink, "enc.proj", cfg.embed_dim, c, 1);
        Ok(Self { cfg, store, stages, proj })
    }

    /// Encodes a `[3, H, W]` frame on the tape.
    pub fn encode(&self, g: &mut Graph<T>, p: &Bound, frame: Var) -> Result<Var> {
        let (c, h, w) = g.value(frame).chw()?;
        if c != 3 {
            return Err(Error::Shape(format!("encoder expects 3 channels, got {c}")));
        }
        self.cfg.embed_shape(h, w)?;
        let mut f = frame;
        for st in &self.stages {
            let pad = if st.k == st.stride { 0 } else { st.k / 2 };
            f = g.conv2d(f, p.var(st.down.0), Some(p.var(st.down.1)), st.stride, pad)?;
            let r = g.depthwise_conv2d(f, p.var(st.dw.0), Some(p.var(st.dw.1)), 3)?;
            let r = g.conv2d(r, p.var(st.pw1.0), Some(p.var(st.pw1.1)), 1, 0)?;
            let r = g.gelu(r);
            let r = g.conv2d(r, p.var(st.pw2.0), Some(p.var(st.pw2.1)), 1, 0)?;
            f = g.add(f, r)?;
        }
        g.conv2d(f, p.var(self.proj.0), Some(p.var(self.proj.1)), 1, 0)
    }

    /// Content embedding `[d, h, w]` of a `[3, H, W]` frame.
    pub fn encode_frame(&self, frame: &Tensor<T>) -> Result<Tensor<T>> {
        let mut g = Graph::new();
        let p = self.store.bind(&mut g, false);
        let x = g.constant(frame.clone());
        let y = self.encode(&mut g, &p, x)?;
        Ok(g.value(y).clone())
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn embedding_shapes() {
        let cfg = EncoderConfig::new(&[5, 3, 2, 2, 2], 16);
        assert_eq!(cfg.embed_shape(1080, 1920).unwrap(), [16, 9, 16]);
        assert_eq!(cfg.embed_shape(120, 240).unwrap(), [16, 1, 2]);
        let err = cfg.embed_shape(128, 128).unwrap_err().to_string();
        assert!(err.contains("stride 5 at encoder stage 1"), "{err}");
    }

    #[test]
    fn encodes_desk_frame() {
        let cfg = EncoderConfig { width: 8, ..EncoderConfig::new(&[5, 3, 2, 2, 2], 16) };
        let enc = FrameEncoder::<f32>::build(cfg, 1).unwrap();
        let frame = Tensor::from_fn(vec![3, 120, 240], |i| (i % 17) as f32 / 17.0);
        let y = enc.encode_frame(&frame).unwrap();
        assert_eq!(y.shape(), &[16, 1, 2]);
        assert!(y.is_finite());
    }

    #[test]
    fn gradient_reaches_the_frame() {
        let cfg = EncoderConfig { width: 4, expand: 2, ..EncoderConfig::new(&[2, 3], 3) };
        let enc = FrameEncoder::<f64>::build(cfg, 5).unwrap();
        let frame = Tensor::from_fn(vec![3, 6, 6], |i| ((i * 7) % 11) as f64 / 11.0);
        let energy = |x: &Tensor<f64>| enc.encode_frame(x).unwrap().data().iter().map(|v| v * v).sum::<f64>();
        let mut g = Graph::new();
        let p = enc.store.bind(&mut g, false);
        let x = g.leaf(frame.clone());
        let y = enc.encode(&mut g, &p, x).unwrap();
        let e = g.sqr(y);
        let e = g.sum(e);
        let grads = g.backward(e);
        let dx = grads.get(x).unwrap();
        // central differences on a 3x3 patch of the first channel
        for r in 1..4 {
            for c in 1..4 {
                let i = r * 6 + c;
                let h = 1e-6;
                let (mut a, mut b) = (frame.clone(), frame.clone());
                a.data_mut()[i] += h;
                b.data_mut()[i] -= h;
                let fd = (energy(&a) - energy(&b)) / (2.0 * h);
                let an = dx.data()[i];
                assert!((fd - an).abs() <= 1e-3 * fd.abs().max(an.abs()).max(1e-8), "{i}: {fd} vs {an}");
            }
        }
    }
}
