//! Building blocks of the conditional decoder: the temporal-aware affine
//! transform (TAT), its residual block, the AdaIN baseline modulation, and
//! the sinusoidal upsampling blocks.

use serde::{Deserialize, Serialize};

use crate::autograd::{Graph, Var};
use crate::error::{Error, Result};
use crate::params::{Bound, Init, ParamId, ParamSink};
use crate::temporal::Z_CHANNELS;
use crate::tensor::Real;

/// Floor for the per-channel standard deviation in AdaIN.
pub const ADAIN_EPS: f64 = 1e-5;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Activation {
    Sine,
    Gelu,
}

impl Activation {
    pub fn apply<T: Real>(self, g: &mut Graph<T>, x: Var) -> Var {
        match self {
            Activation::Sine => g.sin(x),
            Activation::Gelu => g.gelu(x),
        }
    }
}

/// How the temporal embedding modulates intermediate features.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Modulation {
    /// Normalization-free channel affine transform.
    Tat,
    /// Adaptive instance normalization (ablation baseline).
    Adain,
    /// No modulation blocks at all.
    None,
}

/// `out[c, i, j] = gamma[c] * f[c, i, j] + beta[c]`
pub fn tat_affine<T: Real>(g: &mut Graph<T>, f: Var, gamma: Var, beta: Var) -> Result<Var> {
    let c = g.shape(f)[0];
    if g.value(gamma).numel() != c || g.value(beta).numel() != c {
        return Err(Error::Shape(format!(
            "affine parameters ({}, {}) for {c} channels",
            g.value(gamma).numel(),
            g.value(beta).numel()
        )));
    }
    let scaled = g.channel_mul(f, gamma)?;
    g.channel_add(scaled, beta)
}

/// `sigma_t * (f - mean(f)) / std(f) + mu_t`, statistics per channel over
/// spatial positions.
pub fn adain_modulate<T: Real>(g: &mut Graph<T>, f: Var, mu_t: Var, sigma_t: Var) -> Result<Var> {
    let c = g.shape(f)[0];
    if g.value(mu_t).numel() != c || g.value(sigma_t).numel() != c {
        return Err(Error::Shape(format!("AdaIN statistics do not match {c} channels")));
    }
    let mu = g.channel_mean(f);
    let neg_mu = g.neg(mu);
    let centered = g.channel_add(f, neg_mu)?;
    let sq = g.sqr(centered);
    let var = g.channel_mean(sq);
    let var = g.add_scalar(var, T::lit(ADAIN_EPS * ADAIN_EPS));
    let sd = g.sqrt(var);
    let inv = g.recip(sd);
    let normalized = g.channel_mul(centered, inv)?;
    let scaled = g.channel_mul(normalized, sigma_t)?;
    g.channel_add(scaled, mu_t)
}

/// Two-layer `1x1 conv -> ReLU -> 1x1 conv` head on the temporal embedding.
#[derive(Clone, Debug)]
struct Head {
    w1: ParamId,
    b1: ParamId,
    w2: ParamId,
    b2: ParamId,
}

impl Head {
    fn declare(sink: &mut impl ParamSink, prefix: &str, c: usize) -> Self {
        Self {
            w1: sink.declare(format!("{prefix}.w1"), vec![Z_CHANNELS, Z_CHANNELS, 1, 1], Init::FanIn(Z_CHANNELS)),
            b1: sink.declare(format!("{prefix}.b1"), vec![Z_CHANNELS], Init::FanIn(Z_CHANNELS)),
            w2: sink.declare(format!("{prefix}.w2"), vec![c, Z_CHANNELS, 1, 1], Init::Zeros),
            b2: sink.declare(format!("{prefix}.b2"), vec![c], Init::Zeros),
        }
    }

    fn forward<T: Real>(&self, g: &mut Graph<T>, p: &Bound, z: Var) -> Result<Var> {
        let h = g.conv2d(z, p.var(self.w1), Some(p.var(self.b1)), 1, 0)?;
        let h = g.relu(h);
        let o = g.conv2d(h, p.var(self.w2), Some(p.var(self.b2)), 1, 0)?;
        let c = g.value(o).numel();
        g.reshape(o, vec![c])
    }
}

/// Generates per-channel `(scale, shift)` from the temporal embedding. The
/// scale head's output is offset by one, so a zero-initialized layer is the
/// identity.
#[derive(Clone, Debug)]
pub struct TatLayer {
    pub channels: usize,
    scale: Head,
    shift: Head,
}

impl TatLayer {
    pub fn declare(sink: &mut impl ParamSink, prefix: &str, channels: usize) -> Self {
        Self {
            channels,
            scale: Head::declare(sink, &format!("{prefix}.gamma"), channels),
            shift: Head::declare(sink, &format!("{prefix}.beta"), channels),
        }
    }

    pub fn params<T: Real>(&self, g: &mut Graph<T>, p: &Bound, z: Var) -> Result<(Var, Var)> {
        let zc = g.value(z).numel();
        if zc != Z_CHANNELS {
            return Err(Error::Shape(format!("temporal embedding has {zc} channels, expected {Z_CHANNELS}")));
        }
        let z = g.reshape(z, vec![Z_CHANNELS, 1, 1])?;
        let gamma = self.scale.forward(g, p, z)?;
        let gamma = g.add_scalar(gamma, T::one());
        let beta = self.shift.forward(g, p, z)?;
        Ok((gamma, beta))
    }

    fn modulate<T: Real>(&self, g: &mut Graph<T>, p: &Bound, f: Var, z: Var, kind: Modulation) -> Result<Var> {
        let (a, b) = self.params(g, p, z)?;
        match kind {
            Modulation::Adain => adain_modulate(g, f, b, a),
            _ => tat_affine(g, f, a, b),
        }
    }
}

/// `f + Conv(Mod(GELU(Conv(Mod(f)))))` with 3x3 convolutions; the second
/// convolution starts at zero so the block is the identity at initialization.
#[derive(Clone, Debug)]
pub struct ResBlock {
    pub channels: usize,
    kind: Modulation,
    m1: TatLayer,
    w1: ParamId,
    b1: ParamId,
    m2: TatLayer,
    w2: ParamId,
    b2: ParamId,
}

impl ResBlock {
    pub fn declare(sink: &mut impl ParamSink, prefix: &str, channels: usize, kind: Modulation) -> Self {
        let fan = channels * 9;
        Self {
            channels,
            kind,
            m1: TatLayer::declare(sink, &format!("{prefix}.m1"), channels),
            w1: sink.declare(format!("{prefix}.conv1.w"), vec![channels, channels, 3, 3], Init::FanIn(fan)),
            b1: sink.declare(format!("{prefix}.conv1.b"), vec![channels], Init::FanIn(fan)),
            m2: TatLayer::declare(sink, &format!("{prefix}.m2"), channels),
            w2: sink.declare(format!("{prefix}.conv2.w"), vec![channels, channels, 3, 3], Init::Zeros),
            b2: sink.declare(format!("{prefix}.conv2.b"), vec![channels], Init::Zeros),
        }
    }

    pub fn forward<T: Real>(&self, g: &mut Graph<T>, p: &Bound, f: Var, z: Var) -> Result<Var> {
        let c = g.shape(f)[0];
        if c != self.channels {
            return Err(Error::Shape(format!("residual block for {} channels got {c}", self.channels)));
        }
        let h = self.m1.modulate(g, p, f, z, self.kind)?;
        let h = g.conv2d(h, p.var(self.w1), Some(p.var(self.b1)), 1, 1)?;
        let h = g.gelu(h);
        let h = self.m2.modulate(g, p, h, z, self.kind)?;
        let h = g.conv2d(h, p.var(self.w2), Some(p.var(self.b2)), 1, 1)?;
        g.add(f, h)
    }
}

/// `ACT(PixelShuffle_s(Conv_k(f)))`, mapping `cin` to `cout` channels and
/// upscaling by `s`.
#[derive(Clone, Debug)]
pub struct SnervBlock {
    pub cin: usize,
    pub cout: usize,
    pub k: usize,
    pub s: usize,
    pub act: Activation,
    w: ParamId,
    b: ParamId,
}

impl SnervBlock {
    pub fn declare(
        sink: &mut impl ParamSink,
        prefix: &str,
        cin: usize,
        cout: usize,
        k: usize,
        s: usize,
        act: Activation,
    ) -> Self {
        let fan = cin * k * k;
        Self {
            cin,
            cout,
            k,
            s,
            act,
            w: sink.declare(format!("{prefix}.w"), vec![cout * s * s, cin, k, k], Init::FanIn(fan)),
            b: sink.declare(format!("{prefix}.b"), vec![cout * s * s], Init::FanIn(fan)),
        }
    }

    pub fn forward<T: Real>(&self, g: &mut Graph<T>, p: &Bound, f: Var) -> Result<Var> {
        if g.shape(f)[0] != self.cin {
            return Err(Error::Shape(format!("block expects {} channels, got {}", self.cin, g.shape(f)[0])));
        }
        let h = g.conv2d(f, p.var(self.w), Some(p.var(self.b)), 1, self.k / 2)?;
        let h = g.pixel_shuffle(h, self.s)?;
        Ok(self.act.apply(g, h))
    }
}

/// `ACT(Conv_3(PixelShuffle_s(Conv_k(f))))` with a `cin/4` bottleneck after
/// the shuffle.
#[derive(Clone, Debug)]
pub struct EnervBlock {
    pub cin: usize,
    pub mid: usize,
    pub cout: usize,
    pub k: usize,
    pub s: usize,
    pub act: Activation,
    w1: ParamId,
    b1: ParamId,
    w2: ParamId,
    b2: ParamId,
}

impl EnervBlock {
    pub fn declare(
        sink: &mut impl ParamSink,
        prefix: &str,
        cin: usize,
        cout: usize,
        k: usize,
        s: usize,
        act: Activation,
    ) -> Self {
        let mid = (cin / 4).max(1);
        let fan1 = cin * k * k;
        let fan2 = mid * 9;
        Self {
            cin,
            mid,
            cout,
            k,
            s,
            act,
            w1: sink.declare(format!("{prefix}.conv1.w"), vec![mid * s * s, cin, k, k], Init::FanIn(fan1)),
            b1: sink.declare(format!("{prefix}.conv1.b"), vec![mid * s * s], Init::FanIn(fan1)),
            w2: sink.declare(format!("{prefix}.conv2.w"), vec![cout, mid, 3, 3], Init::FanIn(fan2)),
            b2: sink.declare(format!("{prefix}.conv2.b"), vec![cout], Init::FanIn(fan2)),
        }
    }

    pub fn forward<T: Real>(&self, g: &mut Graph<T>, p: &Bound, f: Var) -> Result<Var> {
        if g.shape(f)[0] != self.cin {
            return Err(Error::Shape(format!("block expects {} channels, got {}", self.cin, g.shape(f)[0])));
        }
        let h = g.conv2d(f, p.var(self.w1), Some(p.var(self.b1)), 1, self.k / 2)?;
        let h = g.pixel_shuffle(h, self.s)?;
        let h = g.conv2d(h, p.var(self.w2), Some(p.var(self.b2)), 1, 1)?;
        Ok(self.act.apply(g, h))
    }
}
