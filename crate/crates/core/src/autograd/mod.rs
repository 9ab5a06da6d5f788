//! A small reverse-mode automatic differentiation tape.
//!
//! Every forward computation records its nodes on a [`Graph`]; calling
//! [`Graph::backward`] on a scalar node walks the tape in reverse. Feature maps
//! are single images in channel-first `[C, H, W]` layout (batch size is always
//! one).

pub(crate) mod fft;
pub(crate) mod kernels;

use rustfft::num_complex::Complex;

use crate::error::{Error, Result};
use crate::tensor::{Real, Tensor};
use kernels::ConvGeom;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub struct Var(usize);

impl Var {
    pub fn index(self) -> usize {
        self.0
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Unary {
    Neg,
    Sin,
    Gelu,
    Relu,
    Sqr,
    Sqrt,
    Abs,
    Exp,
    Ln,
    Erf,
    Erfc,
    Recip,
}

/// How the frequency-domain distance compares two spectra.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, serde::Serialize, serde::Deserialize)]
pub enum FreqMode {
    /// Mean modulus of the complex spectrum difference.
    #[default]
    ComplexDiff,
    /// Mean absolute difference of spectrum magnitudes (phase ignored).
    Amplitude,
    /// Mean squared modulus of the complex difference.
    ComplexL2,
}

enum Op<T> {
    Leaf,
    Reshape(Var),
    Add(Var, Var),
    Sub(Var, Var),
    Mul(Var, Var),
    Div(Var, Var),
    Scale(Var, T),
    AddScalar(Var),
    Unary(Var, Unary),
    Pow(Var, T),
    ClampMin(Var, T),
    SteRound(Var),
    ChannelMul(Var, Var),
    ChannelAdd(Var, Var),
    ChannelMean(Var),
    Sum(Var),
    Mean(Var),
    Conv2d { x: Var, w: Var, b: Option<Var>, geom: ConvGeom, cout: usize, cols: Option<Vec<T>> },
    Depthwise { x: Var, w: Var, b: Option<Var>, k: usize, pad: usize },
    PixelShuffle(Var, usize),
    Blur(Var, Vec<T>),
    AvgPool2(Var),
    /// Gradient of the loss w.r.t. the input is precomputed at forward time.
    Freq(Var, Vec<T>),
}

struct Node<T> {
    value: Tensor<T>,
    op: Op<T>,
    needs_grad: bool,
}

pub struct Graph<T: Real> {
    nodes: Vec<Node<T>>,
}

impl<T: Real> Default for Graph<T> {
    fn default() -> Self {
        Self::new()
    }
}

fn same_shape<T: Real>(a: &Tensor<T>, b: &Tensor<T>, what: &str) -> Result<()> {
    if a.shape() != b.shape() {
        return Err(Error::Shape(format!("{what}: {:?} vs {:?}", a.shape(), b.shape())));
    }
    Ok(())
}

impl<T: Real> Graph<T> {
    pub fn new() -> Self {
        Self { nodes: Vec::new() }
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    fn push(&mut self, value: Tensor<T>, op: Op<T>, needs_grad: bool) -> Var {
        self.nodes.push(Node { value, op, needs_grad });
        Var(self.nodes.len() - 1)
    }

    fn ng(&self, v: Var) -> bool {
        self.nodes[v.0].needs_grad
    }

    /// A value that never receives gradient.
    pub fn constant(&mut self, value: Tensor<T>) -> Var {
        self.push(value, Op::Leaf, false)
    }

    /// A differentiable input (parameter or data we want gradients for).
    pub fn leaf(&mut self, value: Tensor<T>) -> Var {
        self.push(value, Op::Leaf, true)
    }

    pub fn value(&self, v: Var) -> &Tensor<T> {
        &self.nodes[v.0].value
    }

    pub fn shape(&self, v: Var) -> &[usize] {
        self.nodes[v.0].value.shape()
    }

    /// Same value, cut off from the tape.
    pub fn detach(&mut self, v: Var) -> Var {
        let t = self.value(v).clone();
        self.constant(t)
    }

    pub fn reshape(&mut self, v: Var, shape: impl Into<Vec<usize>>) -> Result<Var> {
        let t = self.value(v).clone().reshape(shape)?;
        let ng = self.ng(v);
        Ok(self.push(t, Op::Reshape(v), ng))
    }

    fn zip(&mut self, a: Var, b: Var, what: &str, f: impl Fn(T, T) -> T, op: Op<T>) -> Result<Var> {
        let (ta, tb) = (self.value(a), self.value(b));
        same_shape(ta, tb, what)?;
        let data = ta.data().iter().zip(tb.data()).map(|(&x, &y)| f(x, y)).collect();
        let t = Tensor::new(ta.shape().to_vec(), data)?;
        let ng = self.ng(a) || self.ng(b);
        Ok(self.push(t, op, ng))
    }

    pub fn add(&mut self, a: Var, b: Var) -> Result<Var> {
        self.zip(a, b, "add", |x, y| x + y, Op::Add(a, b))
    }

    pub fn sub(&mut self, a: Var, b: Var) -> Result<Var> {
        self.zip(a, b, "sub", |x, y| x - y, Op::Sub(a, b))
    }

    pub fn mul(&mut self, a: Var, b: Var) -> Result<Var> {
        self.zip(a, b, "mul", |x, y| x * y, Op::Mul(a, b))
    }

    pub fn div(&mut self, a: Var, b: Var) -> Result<Var> {
        self.zip(a, b, "div", |x, y| x / y, Op::Div(a, b))
    }

    pub fn scale(&mut self, a: Var, c: T) -> Var {
        let t = self.value(a).map(|x| x * c);
        let ng = self.ng(a);
        self.push(t, Op::Scale(a, c), ng)
    }

    pub fn add_scalar(&mut self, a: Var, c: T) -> Var {
        let t = self.value(a).map(|x| x + c);
        let ng = self.ng(a);
        self.push(t, Op::AddScalar(a), ng)
    }

    pub fn unary(&mut self, a: Var, kind: Unary) -> Var {
        let half = T::lit(0.5);
        let rsqrt2 = T::lit(std::f64::consts::FRAC_1_SQRT_2);
        let f = |x: T| match kind {
            Unary::Neg => -x,
            Unary::Sin => x.sin(),
            Unary::Gelu => half * x * (T::one() + (x * rsqrt2).erf()),
            Unary::Relu => x.max(T::zero()),
            Unary::Sqr => x * x,
            Unary::Sqrt => x.sqrt(),
            Unary::Abs => x.abs(),
            Unary::Exp => x.exp(),
            Unary::Ln => x.ln(),
            Unary::Erf => x.erf(),
            Unary::Erfc => x.erfc(),
            Unary::Recip => x.recip(),
        };
        let t = self.value(a).map(f);
        let ng = self.ng(a);
        self.push(t, Op::Unary(a, kind), ng)
    }

    pub fn neg(&mut self, a: Var) -> Var {
        self.unary(a, Unary::Neg)
    }
    pub fn sin(&mut self, a: Var) -> Var {
        self.unary(a, Unary::Sin)
    }
    pub fn gelu(&mut self, a: Var) -> Var {
        self.unary(a, Unary::Gelu)
    }
    pub fn relu(&mut self, a: Var) -> Var {
        self.unary(a, Unary::Relu)
    }
    pub fn sqr(&mut self, a: Var) -> Var {
        self.unary(a, Unary::Sqr)
    }
    pub fn sqrt(&mut self, a: Var) -> Var {
        self.unary(a, Unary::Sqrt)
    }
    pub fn abs(&mut self, a: Var) -> Var {
        self.unary(a, Unary::Abs)
    }
    pub fn exp(&mut self, a: Var) -> Var {
        self.unary(a, Unary::Exp)
    }
    pub fn ln(&mut self, a: Var) -> Var {
        self.unary(a, Unary::Ln)
    }
    pub fn erf(&mut self, a: Var) -> Var {
        self.unary(a, Unary::Erf)
    }
    pub fn erfc(&mut self, a: Var) -> Var {
        self.unary(a, Unary::Erfc)
    }
    pub fn recip(&mut self, a: Var) -> Var {
        self.unary(a, Unary::Recip)
    }

    pub fn pow_scalar(&mut self, a: Var, p: T) -> Var {
        let t = self.value(a).map(|x| x.powf(p));
        let ng = self.ng(a);
        self.push(t, Op::Pow(a, p), ng)
    }

    /// `max(x, lo)`; gradient flows only where `x > lo`.
    pub fn clamp_min(&mut self, a: Var, lo: T) -> Var {
        let t = self.value(a).map(|x| x.max(lo));
        let ng = self.ng(a);
        self.push(t, Op::ClampMin(a, lo), ng)
    }

    /// Round half to even in the forward pass, identity in the backward pass.
    pub fn ste_round(&mut self, a: Var) -> Var {
        let t = self.value(a).map(|x| x.round_even());
        let ng = self.ng(a);
        self.push(t, Op::SteRound(a), ng)
    }

    fn channel_len(&self, x: Var, g: Var, what: &str) -> Result<(usize, usize)> {
        let (tx, tg) = (self.value(x), self.value(g));
        let c = tx.shape().first().copied().unwrap_or(0);
        if tg.numel() != c || c == 0 {
            return Err(Error::Shape(format!(
                "{what}: {} channel coefficients for tensor of shape {:?}",
                tg.numel(),
                tx.shape()
            )));
        }
        Ok((c, tx.numel() / c))
    }

    /// `out[c, ..] = x[c, ..] * g[c]`
    pub fn channel_mul(&mut self, x: Var, g: Var) -> Result<Var> {
        let (_, n) = self.channel_len(x, g, "channel_mul")?;
        let (tx, tg) = (self.value(x), self.value(g));
        let data = tx.data().chunks(n).zip(tg.data()).flat_map(|(row, &s)| row.iter().map(move |&v| v * s)).collect();
        let t = Tensor::new(tx.shape().to_vec(), data)?;
        let ng = self.ng(x) || self.ng(g);
        Ok(self.push(t, Op::ChannelMul(x, g), ng))
    }

    /// `out[c, ..] = x[c, ..] + b[c]`
    pub fn channel_add(&mut self, x: Var, b: Var) -> Result<Var> {
        let (_, n) = self.channel_len(x, b, "channel_add")?;
        let (tx, tb) = (self.value(x), self.value(b));
        let data = tx.data().chunks(n).zip(tb.data()).flat_map(|(row, &s)| row.iter().map(move |&v| v + s)).collect();
        let t = Tensor::new(tx.shape().to_vec(), data)?;
        let ng = self.ng(x) || self.ng(b);
        Ok(self.push(t, Op::ChannelAdd(x, b), ng))
    }

    /// Mean over everything but the leading (channel) axis.
    pub fn channel_mean(&mut self, x: Var) -> Var {
        let tx = self.value(x);
        let c = tx.shape()[0];
        let n = tx.numel() / c;
        let n_t = T::lit(n as f64);
        let data: Vec<T> = tx.data().chunks(n).map(|r| r.iter().copied().sum::<T>() / n_t).collect();
        let t = Tensor::new(vec![c], data).expect("channel mean shape");
        let ng = self.ng(x);
        self.push(t, Op::ChannelMean(x), ng)
    }

    /// Multiplies every element of `x` by the single-element tensor `s`.
    pub fn mul_scalar_var(&mut self, x: Var, s: Var) -> Result<Var> {
        let shape = self.shape(x).to_vec();
        let n = self.value(x).numel();
        let flat = self.reshape(x, vec![1, n])?;
        let out = self.channel_mul(flat, s)?;
        self.reshape(out, shape)
    }

    /// Adds the single-element tensor `s` to every element of `x`.
    pub fn add_scalar_var(&mut self, x: Var, s: Var) -> Result<Var> {
        let shape = self.shape(x).to_vec();
        let n = self.value(x).numel();
        let flat = self.reshape(x, vec![1, n])?;
        let out = self.channel_add(flat, s)?;
        self.reshape(out, shape)
    }

    pub fn sum(&mut self, a: Var) -> Var {
        let t = Tensor::scalar(self.value(a).sum());
        let ng = self.ng(a);
        self.push(t, Op::Sum(a), ng)
    }

    pub fn mean(&mut self, a: Var) -> Var {
        let t = Tensor::scalar(self.value(a).mean());
        let ng = self.ng(a);
        self.push(t, Op::Mean(a), ng)
    }

    /// 2-D convolution of a `[Cin, H, W]` map with `[Cout, Cin, k, k]` weights.
    pub fn conv2d(&mut self, x: Var, w: Var, b: Option<Var>, stride: usize, pad: usize) -> Result<Var> {
        let (cin, h, wd) = self.value(x).chw()?;
        let ws = self.shape(w).to_vec();
        let [cout, wcin, k, k2] = ws[..] else {
            return Err(Error::Shape(format!("conv weight must be 4-D, got {ws:?}")));
        };
        if wcin != cin || k != k2 {
            return Err(Error::Shape(format!("conv weight {ws:?} does not fit input with {cin} channels")));
        }
        if let Some(b) = b {
            if self.value(b).numel() != cout {
                return Err(Error::Shape(format!("conv bias has {} entries, expected {cout}", self.value(b).numel())));
            }
        }
        if stride == 0 || h + 2 * pad < k || wd + 2 * pad < k {
            return Err(Error::Shape(format!("conv k={k} stride={stride} pad={pad} on {h}x{wd}")));
        }
        let geom = ConvGeom { cin, h, w: wd, k, stride, pad };
        let (ho, wo) = geom.out_hw();
        let bias = b.map(|b| self.value(b).data());
        let (out, cols) = kernels::conv2d_forward(self.value(x).data(), self.value(w).data(), bias, cout, geom);
        let t = Tensor::new(vec![cout, ho, wo], out)?;
        let ng = self.ng(x) || self.ng(w) || b.is_some_and(|b| self.ng(b));
        let cols = if ng && (self.ng(w)) { cols } else { None };
        Ok(self.push(t, Op::Conv2d { x, w, b, geom, cout, cols }, ng))
    }

    /// Depthwise stride-1 convolution with `[C, 1, k, k]` weights.
    pub fn depthwise_conv2d(&mut self, x: Var, w: Var, b: Option<Var>, pad: usize) -> Result<Var> {
        let (c, h, wd) = self.value(x).chw()?;
        let ws = self.shape(w).to_vec();
        let [wc, 1, k, k2] = ws[..] else {
            return Err(Error::Shape(format!("depthwise weight must be [C, 1, k, k], got {ws:?}")));
        };
        if wc != c || k != k2 || h + 2 * pad < k || wd + 2 * pad < k {
            return Err(Error::Shape(format!("depthwise weight {ws:?} does not fit [{c}, {h}, {wd}]")));
        }
        let bias = b.map(|b| self.value(b).data());
        let out = kernels::depthwise_forward(self.value(x).data(), self.value(w).data(), bias, (c, h, wd), k, pad);
        let t = Tensor::new(vec![c, h + 2 * pad - k + 1, wd + 2 * pad - k + 1], out)?;
        let ng = self.ng(x) || self.ng(w) || b.is_some_and(|b| self.ng(b));
        Ok(self.push(t, Op::Depthwise { x, w, b, k, pad }, ng))
    }

    /// Sub-pixel rearrangement `[C·s², H, W] -> [C, H·s, W·s]`.
    pub fn pixel_shuffle(&mut self, x: Var, s: usize) -> Result<Var> {
        let (cs, h, w) = self.value(x).chw()?;
        if s == 0 || cs % (s * s) != 0 {
            return Err(Error::Shape(format!("pixel shuffle: {cs} channels not divisible by {s}²")));
        }
        if s == 1 {
            return self.reshape(x, vec![cs, h, w]);
        }
        let c = cs / (s * s);
        let src = self.value(x).data();
        let mut out = vec![T::zero(); src.len()];
        let (ho, wo) = (h * s, w * s);
        for (idx, &v) in src.iter().enumerate() {
            let (ch, rem) = (idx / (h * w), idx % (h * w));
            let (y, xx) = (rem / w, rem % w);
            let (oc, sub) = (ch / (s * s), ch % (s * s));
            let (i, j) = (sub / s, sub % s);
            out[(oc * ho + y * s + i) * wo + xx * s + j] = v;
        }
        let t = Tensor::new(vec![c, ho, wo], out)?;
        let ng = self.ng(x);
        Ok(self.push(t, Op::PixelShuffle(x, s), ng))
    }

    /// Separable "valid" filtering of each channel with a 1-D kernel.
    pub fn blur_valid(&mut self, x: Var, kernel: &[T]) -> Result<Var> {
        let (c, h, w) = self.value(x).chw()?;
        let k = kernel.len();
        if k == 0 || h < k || w < k {
            return Err(Error::Shape(format!("blur window {k} larger than {h}x{w}")));
        }
        let out = kernels::blur_valid(self.value(x).data(), (c, h, w), kernel);
        let t = Tensor::new(vec![c, h + 1 - k, w + 1 - k], out)?;
        let ng = self.ng(x);
        Ok(self.push(t, Op::Blur(x, kernel.to_vec()), ng))
    }

    /// 2×2 average pooling with stride 2; a trailing odd row/column is dropped.
    pub fn avg_pool2(&mut self, x: Var) -> Result<Var> {
        let (c, h, w) = self.value(x).chw()?;
        let (ho, wo) = (h / 2, w / 2);
        let src = self.value(x).data();
        let q = T::lit(0.25);
        let t = Tensor::from_fn(vec![c, ho, wo], |i| {
            let (ch, rem) = (i / (ho * wo), i % (ho * wo));
            let (y, xx) = (rem / wo, rem % wo);
            let base = ch * h * w + 2 * y * w + 2 * xx;
            (src[base] + src[base + 1] + src[base + w] + src[base + w + 1]) * q
        });
        let ng = self.ng(x);
        Ok(self.push(t, Op::AvgPool2(x), ng))
    }

    /// Frequency-domain distance between `xhat` and a constant `target`, both
    /// `[C, H, W]`, using per-channel orthonormal 2-D FFTs and averaging over
    /// all `C·H·W` bins.
    pub fn freq_distance(&mut self, xhat: Var, target: &Tensor<T>, mode: FreqMode) -> Result<Var> {
        same_shape(self.value(xhat), target, "freq_distance")?;
        let (c, h, w) = target.chw()?;
        let n = T::lit((c * h * w) as f64);
        let mut a = fft::real_to_complex(self.value(xhat).data());
        let mut b = fft::real_to_complex(target.data());
        let zero = Complex::new(T::zero(), T::zero());
        let (loss, mut dir) = match mode {
            FreqMode::ComplexDiff | FreqMode::ComplexL2 => {
                let mut d: Vec<Complex<T>> = a.iter().zip(&b).map(|(p, q)| p - q).collect();
                fft::fft2_ortho(&mut d, c, h, w, false);
                let mut loss = T::zero();
                for v in d.iter_mut() {
                    let m = v.norm();
                    if mode == FreqMode::ComplexL2 {
                        loss += m * m;
                        *v = *v * T::lit(2.0);
                    } else {
                        loss += m;
                        *v = if m > T::zero() { *v / m } else { zero };
                    }
                }
                (loss / n, d)
            }
            FreqMode::Amplitude => {
                fft::fft2_ortho(&mut a, c, h, w, false);
                fft::fft2_ortho(&mut b, c, h, w, false);
                let mut loss = T::zero();
                for (p, q) in a.iter_mut().zip(&b) {
                    let diff = p.norm() - q.norm();
                    loss += diff.abs();
                    let m = p.norm();
                    *p = if m > T::zero() && diff != T::zero() { *p / m * diff.signum() } else { zero };
                }
                (loss / n, a)
            }
        };
        fft::fft2_ortho(&mut dir, c, h, w, true);
        let grad: Vec<T> = dir.iter().map(|v| v.re / n).collect();
        let ng = self.ng(xhat);
        Ok(self.push(Tensor::scalar(loss), Op::Freq(xhat, grad), ng))
    }

    /// Reverse pass from a single-element node.
    pub fn backward(&self, root: Var) -> Gradients<T> {
        assert_eq!(self.value(root).numel(), 1, "backward needs a scalar root");
        let mut grads: Vec<Option<Tensor<T>>> = (0..self.nodes.len()).map(|_| None).collect();
        grads[root.0] = Some(Tensor::full(self.shape(root).to_vec(), T::one()));
        for idx in (0..=root.0).rev() {
            let Some(g) = grads[idx].take() else { continue };
            let node = &self.nodes[idx];
            if !node.needs_grad {
                continue;
            }
            self.propagate(node, &g, &mut grads);
            grads[idx] = Some(g);
        }
        Gradients { grads }
    }

    fn propagate(&self, node: &Node<T>, g: &Tensor<T>, grads: &mut [Option<Tensor<T>>]) {
        let mut acc = |v: Var, t: Tensor<T>| {
            if !self.nodes[v.0].needs_grad {
                return;
            }
            match &mut grads[v.0] {
                Some(e) => e.add_assign(&t),
                slot => *slot = Some(t),
            }
        };
        let val = |v: Var| &self.nodes[v.0].value;
        let like = |v: Var, data: Vec<T>| Tensor::new(val(v).shape().to_vec(), data).expect("gradient shape");
        let gd = g.data();
        match &node.op {
            Op::Leaf => {}
            Op::Reshape(a) => acc(*a, like(*a, gd.to_vec())),
            Op::Add(a, b) => {
                acc(*a, like(*a, gd.to_vec()));
                acc(*b, like(*b, gd.to_vec()));
            }
            Op::Sub(a, b) => {
                acc(*a, like(*a, gd.to_vec()));
                acc(*b, like(*b, gd.iter().map(|&v| -v).collect()));
            }
            Op::Mul(a, b) => {
                let (ta, tb) = (val(*a).data(), val(*b).data());
                acc(*a, like(*a, gd.iter().zip(tb).map(|(&g, &y)| g * y).collect()));
                acc(*b, like(*b, gd.iter().zip(ta).map(|(&g, &x)| g * x).collect()));
            }
            Op::Div(a, b) => {
                let (ta, tb) = (val(*a).data(), val(*b).data());
                acc(*a, like(*a, gd.iter().zip(tb).map(|(&g, &y)| g / y).collect()));
                acc(
                    *b,
                    like(*b, gd.iter().zip(ta.iter().zip(tb)).map(|(&g, (&x, &y))| -g * x / (y * y)).collect()),
                );
            }
            Op::Scale(a, c) => acc(*a, like(*a, gd.iter().map(|&v| v * *c).collect())),
            Op::AddScalar(a) | Op::SteRound(a) => acc(*a, like(*a, gd.to_vec())),
            Op::Unary(a, kind) => {
                let x = val(*a).data();
                let y = node.value.data();
                let inv_sqrt_2pi = T::lit(1.0 / (2.0 * std::f64::consts::PI).sqrt());
                let two_over_sqrt_pi = T::lit(std::f64::consts::FRAC_2_SQRT_PI);
                let rsqrt2 = T::lit(std::f64::consts::FRAC_1_SQRT_2);
                let half = T::lit(0.5);
                let d: Vec<T> = gd
                    .iter()
                    .zip(x.iter().zip(y))
                    .map(|(&g, (&x, &y))| {
                        g * match kind {
                            Unary::Neg => -T::one(),
                            Unary::Sin => x.cos(),
                            Unary::Gelu => {
                                half * (T::one() + (x * rsqrt2).erf()) + x * (-half * x * x).exp() * inv_sqrt_2pi
                            }
                            Unary::Relu => {
                                if x > T::zero() {
                                    T::one()
                                } else {
                                    T::zero()
                                }
                            }
                            Unary::Sqr => x + x,
                            Unary::Sqrt => half / y,
                            Unary::Abs => {
                                if x > T::zero() {
                                    T::one()
                                } else if x < T::zero() {
                                    -T::one()
                                } else {
                                    T::zero()
                                }
                            }
                            Unary::Exp => y,
                            Unary::Ln => x.recip(),
                            Unary::Erf => two_over_sqrt_pi * (-x * x).exp(),
                            Unary::Erfc => -two_over_sqrt_pi * (-x * x).exp(),
                            Unary::Recip => -y * y,
                        }
                    })
                    .collect();
                acc(*a, like(*a, d));
            }
            Op::Pow(a, p) => {
                let x = val(*a).data();
                let pm1 = *p - T::one();
                acc(*a, like(*a, gd.iter().zip(x).map(|(&g, &x)| g * *p * x.powf(pm1)).collect()));
            }
            Op::ClampMin(a, lo) => {
                let x = val(*a).data();
                acc(*a, like(*a, gd.iter().zip(x).map(|(&g, &x)| if x > *lo { g } else { T::zero() }).collect()));
            }
            Op::ChannelMul(x, s) => {
                let (tx, ts) = (val(*x).data(), val(*s).data());
                let n = tx.len() / ts.len();
                let dx = gd.chunks(n).zip(ts).flat_map(|(r, &s)| r.iter().map(move |&g| g * s)).collect();
                acc(*x, like(*x, dx));
                let ds = gd.chunks(n).zip(tx.chunks(n)).map(|(r, xr)| r.iter().zip(xr).map(|(&g, &v)| g * v).sum()).collect();
                acc(*s, like(*s, ds));
            }
            Op::ChannelAdd(x, b) => {
                let n = gd.len() / val(*b).numel();
                acc(*x, like(*x, gd.to_vec()));
                acc(*b, like(*b, gd.chunks(n).map(|r| r.iter().copied().sum()).collect()));
            }
            Op::ChannelMean(x) => {
                let tx = val(*x);
                let n = tx.numel() / gd.len();
                let inv = T::one() / T::lit(n as f64);
                let dx = gd.iter().flat_map(|&g| std::iter::repeat(g * inv).take(n)).collect();
                acc(*x, like(*x, dx));
            }
            Op::Sum(a) => {
                let n = val(*a).numel();
                acc(*a, like(*a, vec![gd[0]; n]));
            }
            Op::Mean(a) => {
                let n = val(*a).numel();
                acc(*a, like(*a, vec![gd[0] / T::lit(n as f64); n]));
            }
            Op::Conv2d { x, w, b, geom, cout, cols } => {
                let need_dx = self.nodes[x.0].needs_grad;
                let need_dw = self.nodes[w.0].needs_grad;
                let need_db = b.is_some_and(|b| self.nodes[b.0].needs_grad);
                // cols are only retained when the weight needs a gradient
                let recomputed;
                let cols = match cols {
                    Some(c) => Some(c.as_slice()),
                    None if need_dw && !geom.is_pointwise() => {
                        recomputed = kernels::im2col(val(*x).data(), *geom);
                        Some(recomputed.as_slice())
                    }
                    None => None,
                };
                let r = kernels::conv2d_backward(
                    gd,
                    val(*x).data(),
                    cols,
                    val(*w).data(),
                    *cout,
                    *geom,
                    need_dx,
                    need_dw,
                    need_db,
                );
                if let Some(dx) = r.dx {
                    acc(*x, like(*x, dx));
                }
                if let Some(dw) = r.dw {
                    acc(*w, like(*w, dw));
                }
                if let (Some(b), Some(db)) = (b, r.db) {
                    acc(*b, like(*b, db));
                }
            }
            Op::Depthwise { x, w, b, k, pad } => {
                let dims = val(*x).chw().expect("depthwise input");
                let (dx, dw, db) = kernels::depthwise_backward(gd, val(*x).data(), val(*w).data(), dims, *k, *pad);
                acc(*x, like(*x, dx));
                acc(*w, like(*w, dw));
                if let Some(b) = b {
                    acc(*b, like(*b, db));
                }
            }
            Op::PixelShuffle(x, s) => {
                let s = *s;
                let (_, h, w) = val(*x).chw().expect("shuffle input");
                let (ho, wo) = (h * s, w * s);
                let dx = (0..gd.len())
                    .map(|idx| {
                        let (ch, rem) = (idx / (h * w), idx % (h * w));
                        let (y, xx) = (rem / w, rem % w);
                        let (oc, sub) = (ch / (s * s), ch % (s * s));
                        let (i, j) = (sub / s, sub % s);
                        gd[(oc * ho + y * s + i) * wo + xx * s + j]
                    })
                    .collect();
                acc(*x, like(*x, dx));
            }
            Op::Blur(x, kernel) => {
                let dims = val(*x).chw().expect("blur input");
                acc(*x, like(*x, kernels::blur_valid_backward(gd, dims, kernel)));
            }
            Op::AvgPool2(x) => {
                let (c, h, w) = val(*x).chw().expect("pool input");
                let (ho, wo) = (h / 2, w / 2);
                let q = T::lit(0.25);
                let mut dx = vec![T::zero(); c * h * w];
                for (i, &g) in gd.iter().enumerate() {
                    let (ch, rem) = (i / (ho * wo), i % (ho * wo));
                    let (y, xx) = (rem / wo, rem % wo);
                    let base = ch * h * w + 2 * y * w + 2 * xx;
                    for off in [0, 1, w, w + 1] {
                        dx[base + off] = g * q;
                    }
                }
                acc(*x, like(*x, dx));
            }
            Op::Freq(x, dir) => {
                let g0 = gd[0];
                acc(*x, like(*x, dir.iter().map(|&d| d * g0).collect()));
            }
        }
    }
}

pub struct Gradients<T> {
    grads: Vec<Option<Tensor<T>>>,
}

impl<T: Real> Gradients<T> {
    pub fn get(&self, v: Var) -> Option<&Tensor<T>> {
        self.grads.get(v.0).and_then(Option::as_ref)
    }

    pub fn take(&mut self, v: Var) -> Option<Tensor<T>> {
        self.grads.get_mut(v.0).and_then(Option::take)
    }
}
