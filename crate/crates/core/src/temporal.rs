//! Frame-index conditioning: frequency positional encoding of the normalized
//! index followed by a small sine-activated network producing the temporal
//! embedding used by every modulation layer.

use serde::{Deserialize, Serialize};

use crate::autograd::{Graph, Var};
use crate::error::{Error, Result};
use crate::params::{Bound, Init, ParamId, ParamSink, ParamStore};
use crate::tensor::{Real, Tensor};

/// Channels of the temporal embedding.
pub const Z_CHANNELS: usize = 32;
/// Hidden width of the embedding network.
pub const Z_HIDDEN: usize = 64;

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct PeConfig {
    /// Frequency base.
    pub b: f64,
    /// Number of frequency bands; the encoding has `2 * l` entries.
    pub l: usize,
}

impl Default for PeConfig {
    fn default() -> Self {
        Self { b: 1.25, l: 80 }
    }
}

impl PeConfig {
    pub fn dim(&self) -> usize {
        2 * self.l
    }

    pub fn validate(&self) -> Result<()> {
        if self.l == 0 {
            return Err(Error::Config("positional encoding needs at least one band".into()));
        }
        if !(self.b > 1.0 && self.b.is_finite()) {
            return Err(Error::Config(format!("frequency base must exceed 1, got {}", self.b)));
        }
        Ok(())
    }
}

/// Maps a 1-based frame index into `(0, 1]`.
pub fn normalize_index(t: usize, total: usize) -> Result<f64> {
    if t == 0 || t > total {
        return Err(Error::Domain(format!("frame index {t} outside 1..={total}")));
    }
    Ok(t as f64 / total as f64)
}

/// `(sin(b⁰πt), cos(b⁰πt), …, sin(b^{l-1}πt), cos(b^{l-1}πt))`
pub fn positional_encode(t_norm: f64, cfg: &PeConfig) -> Result<Vec<f64>> {
    cfg.validate()?;
    if !(t_norm > 0.0 && t_norm <= 1.0) {
        return Err(Error::Domain(format!("normalized frame index {t_norm} not in (0, 1]")));
    }
    let mut out = Vec::with_capacity(cfg.dim());
    for j in 0..cfg.l {
        let arg = cfg.b.powi(j as i32) * std::f64::consts::PI * t_norm;
        out.push(arg.sin());
        out.push(arg.cos());
    }
    Ok(out)
}

/// The temporal embedding of one frame.
#[derive(Clone, Debug, PartialEq)]
pub struct TemporalEmbedding<T> {
    /// `[32, 1, 1]`
    pub z: Tensor<T>,
    pub t_norm: f64,
}

/// `SINE(Conv1x1(SINE(Conv1x1(pe))))`, widths `2l -> 64 -> 32`.
#[derive(Clone, Debug)]
pub struct TemporalNet {
    pub in_dim: usize,
    w1: ParamId,
    b1: ParamId,
    w2: ParamId,
    b2: ParamId,
}

impl TemporalNet {
    pub fn declare(sink: &mut impl ParamSink, prefix: &str, in_dim: usize) -> Self {
        let p = |s: &str| format!("{prefix}.{s}");
        Self {
            in_dim,
            w1: sink.declare(p("w1"), vec![Z_HIDDEN, in_dim, 1, 1], Init::FanIn(in_dim)),
            b1: sink.declare(p("b1"), vec![Z_HIDDEN], Init::FanIn(in_dim)),
            w2: sink.declare(p("w2"), vec![Z_CHANNELS, Z_HIDDEN, 1, 1], Init::FanIn(Z_HIDDEN)),
            b2: sink.declare(p("b2"), vec![Z_CHANNELS], Init::FanIn(Z_HIDDEN)),
        }
    }

    /// `pe` is a `[2l, 1, 1]` node; returns the `[32, 1, 1]` embedding node.
    pub fn forward<T: Real>(&self, g: &mut Graph<T>, p: &Bound, pe: Var) -> Result<Var> {
        let n = g.value(pe).numel();
        if n != self.in_dim {
            return Err(Error::Shape(format!("positional encoding has {n} entries, network expects {}", self.in_dim)));
        }
        let pe = g.reshape(pe, vec![n, 1, 1])?;
        let h = g.conv2d(pe, p.var(self.w1), Some(p.var(self.b1)), 1, 0)?;
        let h = g.sin(h);
        let z = g.conv2d(h, p.var(self.w2), Some(p.var(self.b2)), 1, 0)?;
        Ok(g.sin(z))
    }

    /// Evaluates the network outside of any training graph.
    pub fn embed<T: Real>(&self, store: &ParamStore<T>, pe_vec: &[f64], t_norm: f64) -> Result<TemporalEmbedding<T>> {
        let mut g = Graph::new();
        let bound = store.bind(&mut g, false);
        let pe = g.constant(Tensor::new(vec![pe_vec.len()], pe_vec.iter().map(|&v| T::lit(v)).collect())?);
        let z = self.forward(&mut g, &bound, pe)?;
        Ok(TemporalEmbedding { z: g.value(z).clone(), t_norm })
    }
}
