//! Temporal-aware conditional decoder: stacks of sinusoidal upsampling
//! blocks interleaved with modulated residual blocks, for the index-based
//! (`nerv_boost`, `enerv_boost`) and hybrid (`hnerv_boost`) layouts.

pub mod blocks;
mod budget;

use std::fmt;
use std::str::FromStr;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

pub use blocks::{adain_modulate, tat_affine, Activation, EnervBlock, Modulation, ResBlock, SnervBlock, TatLayer};
pub use budget::{count_params, parameter_balance_report, solve_widths, BalanceReport, BUDGET_TOLERANCE};

use crate::autograd::{Graph, Var};
use crate::error::{Error, Result};
use crate::kv::{join_list, KvMap};
use crate::params::{Bound, Init, InitSink, ParamId, ParamSink, ParamStore};
use crate::temporal::{positional_encode, PeConfig, TemporalNet};
use crate::tensor::{Real, Tensor};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Variant {
    NervBoost,
    EnervBoost,
    HnervBoost,
}

impl Variant {
    pub fn is_hybrid(self) -> bool {
        self == Variant::HnervBoost
    }

    /// Channel reduction of each upsampling stage.
    pub fn default_reductions(self, stages: usize) -> Vec<f64> {
        (0..stages)
            .map(|i| match (self, i) {
                (Variant::HnervBoost, _) => 1.2,
                (Variant::NervBoost, 0) => 1.0,
                (Variant::EnervBoost, 0) => 1.0 / 3.0,
                _ => 2.0,
            })
            .collect()
    }
}

impl fmt::Display for Variant {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Variant::NervBoost => "nerv_boost",
            Variant::EnervBoost => "enerv_boost",
            Variant::HnervBoost => "hnerv_boost",
        })
    }
}

impl FromStr for Variant {
    type Err = Error;
    fn from_str(s: &str) -> Result<Self> {
        match s {
            "nerv_boost" | "nerv" => Ok(Variant::NervBoost),
            "enerv_boost" | "enerv" => Ok(Variant::EnervBoost),
            "hnerv_boost" | "hnerv" => Ok(Variant::HnervBoost),
            _ => Err(Error::Config(format!("unknown variant {s:?}"))),
        }
    }
}

macro_rules! text_enum {
    ($t:ty, $($v:path => $s:literal),+) => {
        impl fmt::Display for $t {
            fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
                f.write_str(match self { $($v => $s),+ })
            }
        }
        impl FromStr for $t {
            type Err = Error;
            fn from_str(s: &str) -> Result<Self> {
                match s {
                    $($s => Ok($v),)+
                    _ => Err(Error::Config(format!("unknown {} {s:?}", stringify!($t)))),
                }
            }
        }
    };
}
text_enum!(Activation, Activation::Sine => "sine", Activation::Gelu => "gelu");
text_enum!(Modulation, Modulation::Tat => "tat", Modulation::Adain => "adain", Modulation::None => "none");

/// Channels of the hybrid variant's content embedding.
pub const DEFAULT_EMBED_DIM: usize = 16;
pub const DEFAULT_C_MIN: usize = 12;
pub const DEFAULT_STEM_HIDDEN: usize = 256;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct DecoderConfig {
    pub variant: Variant,
    /// Upsampling factor of each stage, applied in order.
    pub strides: Vec<usize>,
    /// Channels of the content embedding (hybrid variant only).
    pub embed_dim: usize,
    /// Spatial size of the decoder input grid.
    pub embed_hw: (usize, usize),
    /// Base channel width `C1`.
    pub c1: usize,
    pub c_min: usize,
    pub reductions: Vec<f64>,
    pub activation: Activation,
    pub modulation: Modulation,
    pub pe: PeConfig,
    /// Hidden width of the fully connected stem (index-based variants).
    pub stem_hidden: usize,
}

impl DecoderConfig {
    /// Default layout for frames of `frame_hw = (H, W)`.
    pub fn new(variant: Variant, strides: &[usize], frame_hw: (usize, usize)) -> Result<Self> {
        let prod = stride_product(strides)?;
        for (dim, name) in [(frame_hw.0, "height"), (frame_hw.1, "width")] {
            if dim == 0 || dim % prod != 0 {
                return Err(Error::Config(format!(
                    "frame {name} {dim} is not divisible by the stride product {prod} (strides {strides:?})"
                )));
            }
        }
        let cfg = Self {
            variant,
            strides: strides.to_vec(),
            embed_dim: DEFAULT_EMBED_DIM,
            embed_hw: (frame_hw.0 / prod, frame_hw.1 / prod),
            c1: 64,
            c_min: DEFAULT_C_MIN,
            reductions: variant.default_reductions(strides.len()),
            activation: Activation::Sine,
            modulation: Modulation::Tat,
            pe: PeConfig::default(),
            stem_hidden: DEFAULT_STEM_HIDDEN,
        };
        cfg.validate()?;
        Ok(cfg)
    }

    /// Chooses the widths so the decoder plus temporal network hits `target`
    /// parameters within [`BUDGET_TOLERANCE`].
    pub fn with_target_params(self, target: usize) -> Result<Self> {
        solve_widths(&self, target)
    }

    pub fn validate(&self) -> Result<()> {
        stride_product(&self.strides)?;
        if self.reductions.len() != self.strides.len() {
            return Err(Error::Config("one channel reduction per stage is required".into()));
        }
        if self.reductions.iter().any(|r| !(*r > 0.0 && r.is_finite())) {
            return Err(Error::Config(format!("invalid reductions {:?}", self.reductions)));
        }
        if self.c1 == 0 || self.embed_dim == 0 || self.embed_hw.0 == 0 || self.embed_hw.1 == 0 {
            return Err(Error::Config("widths and embedding size must be positive".into()));
        }
        self.pe.validate()?;
        if self.stage_widths().iter().any(|&w| w == 0) {
            return Err(Error::Config("channel reduction produced an empty stage".into()));
        }
        Ok(())
    }

    pub fn out_hw(&self) -> (usize, usize) {
        let p: usize = self.strides.iter().product();
        (self.embed_hw.0 * p, self.embed_hw.1 * p)
    }

    /// Channel width entering stage 1 followed by the width after every stage.
    pub fn stage_widths(&self) -> Vec<usize> {
        let mut w = vec![self.c1];
        for &r in &self.reductions {
            let prev = *w.last().expect("nonempty");
            let next = (prev as f64 / r + 1e-9).floor() as usize;
            w.push(if r == 1.0 { prev } else { next.max(self.c_min) });
        }
        w
    }

    /// Stages that carry a stride-1 refinement block (the last three).
    pub fn refined_stage(&self, i: usize) -> bool {
        i + 3 >= self.strides.len()
    }

    pub fn to_kv(&self) -> KvMap {
        let mut kv = KvMap::default();
        kv.set("variant", self.variant);
        kv.set("strides", join_list(&self.strides));
        kv.set("embed_dim", self.embed_dim);
        kv.set("embed_hw", format!("{} {}", self.embed_hw.0, self.embed_hw.1));
        kv.set("c1", self.c1);
        kv.set("c_min", self.c_min);
        kv.set("reductions", join_list(&self.reductions));
        kv.set("activation", self.activation);
        kv.set("modulation", self.modulation);
        kv.set("pe_b", self.pe.b);
        kv.set("pe_l", self.pe.l);
        kv.set("stem_hidden", self.stem_hidden);
        kv
    }

    pub fn from_kv(kv: &KvMap) -> Result<Self> {
        let hw: Vec<usize> = kv.get_list("embed_hw")?.ok_or_else(|| Error::Config("missing embed_hw".into()))?;
        let [h, w] = hw[..] else {
            return Err(Error::Config("embed_hw needs two values".into()));
        };
        let cfg = Self {
            variant: kv.require::<String>("variant")?.parse()?,
            strides: kv.get_list("strides")?.ok_or_else(|| Error::Config("missing strides".into()))?,
            embed_dim: kv.require("embed_dim")?,
            embed_hw: (h, w),
            c1: kv.require("c1")?,
            c_min: kv.require("c_min")?,
            reductions: kv.get_list("reductions")?.ok_or_else(|| Error::Config("missing reductions".into()))?,
            activation: kv.require::<String>("activation")?.parse()?,
            modulation: kv.require::<String>("modulation")?.parse()?,
            pe: PeConfig { b: kv.require("pe_b")?, l: kv.require("pe_l")? },
            stem_hidden: kv.require("stem_hidden")?,
        };
        cfg.validate()?;
        Ok(cfg)
    }
}

pub(crate) fn stride_product(strides: &[usize]) -> Result<usize> {
    if strides.is_empty() || strides.contains(&0) {
        return Err(Error::Config(format!("invalid stride list {strides:?}")));
    }
    Ok(strides.iter().product())
}

#[derive(Clone, Debug)]
enum Stem {
    /// Hybrid variant: pointwise channel expansion of the content embedding.
    Expand(SnervBlock),
    /// Index-based variants: positional encoding to a `C1 x h x w` grid.
    Fc { w1: ParamId, b1: ParamId, w2: ParamId, b2: ParamId, c1: usize, h: usize, w: usize },
}

#[derive(Clone, Debug)]
enum UpBlock {
    Snerv(SnervBlock),
    Enerv(EnervBlock),
}

#[derive(Clone, Debug)]
struct Stage {
    up: UpBlock,
    modulate: Option<ResBlock>,
    refine: Option<(SnervBlock, Option<ResBlock>)>,
}

#[derive(Clone, Debug)]
struct Arch {
    zgen: Option<TemporalNet>,
    stem: Stem,
    stem_mod: Option<ResBlock>,
    stages: Vec<Stage>,
    head_w: ParamId,
    head_b: ParamId,
}

fn maybe_res(sink: &mut impl ParamSink, name: &str, c: usize, kind: Modulation) -> Option<ResBlock> {
    (kind != Modulation::None).then(|| ResBlock::declare(sink, name, c, kind))
}

impl Arch {
    fn declare(sink: &mut impl ParamSink, cfg: &DecoderConfig) -> Self {
        let widths = cfg.stage_widths();
        let act = cfg.activation;
        let kind = cfg.modulation;
        let zgen = (kind != Modulation::None).then(|| TemporalNet::declare(sink, "zgen", cfg.pe.dim()));
        let stem = if cfg.variant.is_hybrid() {
            Stem::Expand(SnervBlock::declare(sink, "dec.stem", cfg.embed_dim, cfg.c1, 1, 1, act))
        } else {
            let (h, w) = cfg.embed_hw;
            let pe = cfg.pe.dim();
            let hid = cfg.stem_hidden;
            let out = cfg.c1 * h * w;
            Stem::Fc {
                w1: sink.declare("dec.stem.fc1.w".into(), vec![hid, pe, 1, 1], Init::FanIn(pe)),
                b1: sink.declare("dec.stem.fc1.b".into(), vec![hid], Init::FanIn(pe)),
                w2: sink.declare("dec.stem.fc2.w".into(), vec![out, hid, 1, 1], Init::FanIn(hid)),
                b2: sink.declare("dec.stem.fc2.b".into(), vec![out], Init::FanIn(hid)),
                c1: cfg.c1,
                h,
                w,
            }
        };
        let stem_mod = if cfg.variant.is_hybrid() { maybe_res(sink, "dec.stem_mod", cfg.c1, kind) } else { None };
        let mut stages = Vec::new();
        for (i, &s) in cfg.strides.iter().enumerate() {
            let (cin, cout) = (widths[i], widths[i + 1]);
            let p = format!("dec.s{}", i + 1);
            let up = if i == 0 && cfg.variant == Variant::EnervBoost {
                UpBlock::Enerv(EnervBlock::declare(sink, &format!("{p}.up"), cin, cout, 3, s, act))
            } else {
                UpBlock::Snerv(SnervBlock::declare(sink, &format!("{p}.up"), cin, cout, 3, s, act))
            };
            let modulate = maybe_res(sink, &format!("{p}.mod1"), cout, kind);
            let refine = if cfg.refined_stage(i) {
                let block = SnervBlock::declare(sink, &format!("{p}.refine"), cout, cout, 3, 1, act);
                Some((block, maybe_res(sink, &format!("{p}.mod2"), cout, kind)))
            } else {
                None
            };
            stages.push(Stage { up, modulate, refine });
        }
        let last = *widths.last().expect("widths");
        Arch {
            zgen,
            stem,
            stem_mod,
            stages,
            head_w: sink.declare("dec.head.w".into(), vec![3, last, 1, 1], Init::FanIn(last)),
            head_b: sink.declare("dec.head.b".into(), vec![3], Init::FanIn(last)),
        }
    }
}

/// Resolves declarations against an existing store, in declaration order.
struct LookupSink<'a, T> {
    store: &'a ParamStore<T>,
    error: Option<String>,
}

impl<T: Real> ParamSink for LookupSink<'_, T> {
    fn declare(&mut self, name: String, shape: Vec<usize>, _init: Init) -> ParamId {
        match self.store.find(&name) {
            Some(id) if self.store.get(id).shape() == shape.as_slice() => id,
            found => {
                let msg = match found {
                    Some(id) => format!("{name}: stored shape {:?}, expected {shape:?}", self.store.get(id).shape()),
                    None => format!("missing parameter {name}"),
                };
                self.error.get_or_insert(msg);
                ParamId(0)
            }
        }
    }
}

/// Decoder `F(y_t, z_t; θ)` together with the temporal network `M(·; ψ)`.
#[derive(Clone, Debug)]
pub struct DecoderModel<T> {
    pub cfg: DecoderConfig,
    pub store: ParamStore<T>,
    arch: Arch,
}

impl<T: Real> DecoderModel<T> {
    pub fn build(cfg: DecoderConfig, seed: u64) -> Result<Self> {
        cfg.validate()?;
        let mut store = ParamStore::new();
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let arch = Arch::declare(&mut InitSink { store: &mut store, rng: &mut rng }, &cfg);
        Ok(Self { cfg, store, arch })
    }

    /// Reassembles a model around stored parameters (checkpoint or bitstream).
    pub fn from_store(cfg: DecoderConfig, store: ParamStore<T>) -> Result<Self> {
        cfg.validate()?;
        let mut sink = LookupSink { store: &store, error: None };
        let arch = Arch::declare(&mut sink, &cfg);
        if let Some(e) = sink.error {
            return Err(Error::Checkpoint(e));
        }
        let expected = count_params(&cfg);
        if expected != store.numel() {
            return Err(Error::Checkpoint(format!("store holds {} values, layout needs {expected}", store.numel())));
        }
        Ok(Self { cfg, store, arch })
    }

    pub fn num_params(&self) -> usize {
        self.store.numel()
    }

    pub fn cast<U: Real>(&self) -> DecoderModel<U> {
        DecoderModel { cfg: self.cfg.clone(), store: self.store.cast(), arch: self.arch.clone() }
    }

    pub fn balance_report(&self) -> BalanceReport {
        parameter_balance_report(self.store.iter().map(|(_, n, t)| (n.to_string(), t.numel())), self.cfg.strides.len())
    }

    /// Digest of the configuration and every parameter name and shape.
    pub fn layout_fingerprint(&self) -> String {
        let mut h = Sha256::new();
        h.update(self.cfg.to_kv().to_text().as_bytes());
        for (_, name, t) in self.store.iter() {
            h.update(name.as_bytes());
            for d in t.shape() {
                h.update((*d as u64).to_le_bytes());
            }
        }
        h.finalize().iter().take(8).map(|b| format!("{b:02x}")).collect()
    }

    pub fn positional_input(&self, g: &mut Graph<T>, t_norm: f64) -> Result<Var> {
        let pe = positional_encode(t_norm, &self.cfg.pe)?;
        let n = pe.len();
        Ok(g.constant(Tensor::new(vec![n], pe.into_iter().map(T::lit).collect())?))
    }

    /// The temporal embedding node, or `None` for unmodulated decoders.
    pub fn temporal(&self, g: &mut Graph<T>, p: &Bound, pe: Var) -> Result<Option<Var>> {
        self.arch.zgen.as_ref().map(|net| net.forward(g, p, pe)).transpose()
    }

    /// Decoder body. `input` is the content embedding `[d, h, w]` for the
    /// hybrid variant and the positional encoding for index-based ones; `z`
    /// is the `[32, 1, 1]` temporal embedding.
    pub fn forward(&self, g: &mut Graph<T>, p: &Bound, input: Var, z: Option<Var>) -> Result<Var> {
        let need_z = self.arch.zgen.is_some();
        let z = match (need_z, z) {
            (true, Some(z)) => Some(z),
            (true, None) => return Err(Error::Shape("modulated decoder needs a temporal embedding".into())),
            (false, _) => None,
        };
        let modulate = |g: &mut Graph<T>, blk: &Option<ResBlock>, f: Var| -> Result<Var> {
            match (blk, z) {
                (Some(b), Some(z)) => b.forward(g, p, f, z),
                _ => Ok(f),
            }
        };
        let mut f = match &self.arch.stem {
            Stem::Expand(block) => {
                let s = g.shape(input).to_vec();
                let want = [self.cfg.embed_dim, self.cfg.embed_hw.0, self.cfg.embed_hw.1];
                if s != want {
                    return Err(Error::Shape(format!("content embedding {s:?}, decoder expects {want:?}")));
                }
                block.forward(g, p, input)?
            }
            Stem::Fc { w1, b1, w2, b2, c1, h, w } => {
                let n = g.value(input).numel();
                if n != self.cfg.pe.dim() {
                    return Err(Error::Shape(format!("positional input has {n} entries, expected {}", self.cfg.pe.dim())));
                }
                let x = g.reshape(input, vec![n, 1, 1])?;
                let x = g.conv2d(x, p.var(*w1), Some(p.var(*b1)), 1, 0)?;
                let x = self.cfg.activation.apply(g, x);
                let x = g.conv2d(x, p.var(*w2), Some(p.var(*b2)), 1, 0)?;
                let x = self.cfg.activation.apply(g, x);
                g.reshape(x, vec![*c1, *h, *w])?
            }
        };
        f = modulate(g, &self.arch.stem_mod, f)?;
        for stage in &self.arch.stages {
            f = match &stage.up {
                UpBlock::Snerv(b) => b.forward(g, p, f)?,
                UpBlock::Enerv(b) => b.forward(g, p, f)?,
            };
            f = modulate(g, &stage.modulate, f)?;
            if let Some((block, m)) = &stage.refine {
                f = block.forward(g, p, f)?;
                f = modulate(g, m, f)?;
            }
        }
        g.conv2d(f, p.var(self.arch.head_w), Some(p.var(self.arch.head_b)), 1, 0)
    }

    /// Full frame reconstruction on the tape (unclamped output).
    pub fn frame_forward(&self, g: &mut Graph<T>, p: &Bound, embedding: Option<Var>, t_norm: f64) -> Result<Var> {
        let pe = self.positional_input(g, t_norm)?;
        let z = self.temporal(g, p, pe)?;
        let input = if self.cfg.variant.is_hybrid() {
            embedding.ok_or_else(|| Error::Shape("hybrid decoder needs a content embedding".into()))?
        } else {
            pe
        };
        self.forward(g, p, input, z)
    }

    /// Evaluation-time reconstruction `[3, H, W]`, clamped to `[0, 1]`.
    pub fn decode_frame(&self, embedding: Option<&Tensor<T>>, t_norm: f64) -> Result<Tensor<T>> {
        let mut g = Graph::new();
        let p = self.store.bind(&mut g, false);
        let y = embedding.map(|e| g.constant(e.clone()));
        let out = self.frame_forward(&mut g, &p, y, t_norm)?;
        Ok(g.value(out).map(|v| v.max(T::zero()).min(T::one())))
    }
}
