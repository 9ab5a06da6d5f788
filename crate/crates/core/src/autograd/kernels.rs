//! Dense kernels behind the graph ops: gemm-backed convolution via im2col,
//! depthwise convolution and separable Gaussian filtering.

use crate::tensor::Real;

/// `dst (m×n, row-major) [+]= a (m×k) · b (k×n)` with arbitrary strides for
/// the operands.
#[allow(clippy::too_many_arguments)]
pub(crate) fn matmul<T: Real>(
    m: usize,
    n: usize,
    k: usize,
    dst: &mut [T],
    accumulate: bool,
    a: &[T],
    a_rs: isize,
    a_cs: isize,
    b: &[T],
    b_rs: isize,
    b_cs: isize,
) {
    debug_assert!(dst.len() >= m * n);
    if m == 0 || n == 0 {
        return;
    }
    if k == 0 {
        if !accumulate {
            dst[..m * n].iter_mut().for_each(|v| *v = T::zero());
        }
        return;
    }
    // SAFETY: the slices cover every element addressed by (m, n, k) and the
    // given strides; callers pass strides derived from the slice layouts.
    unsafe {
        gemm::gemm(
            m,
            n,
            k,
            dst.as_mut_ptr(),
            1,
            n as isize,
            accumulate,
            a.as_ptr(),
            a_cs,
            a_rs,
            b.as_ptr(),
            b_cs,
            b_rs,
            T::one(),
            T::one(),
            false,
            false,
            false,
            gemm::Parallelism::None,
        );
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub(crate) struct ConvGeom {
    pub cin: usize,
    pub h: usize,
    pub w: usize,
    pub k: usize,
    pub stride: usize,
    pub pad: usize,
}

impl ConvGeom {
    pub fn out_hw(&self) -> (usize, usize) {
        (
            (self.h + 2 * self.pad - self.k) / self.stride + 1,
            (self.w + 2 * self.pad - self.k) / self.stride + 1,
        )
    }

    pub fn is_pointwise(&self) -> bool {
        self.k == 1 && self.stride == 1 && self.pad == 0
    }
}

pub(crate) fn im2col<T: Real>(x: &[T], g: ConvGeom) -> Vec<T> {
    let (ho, wo) = g.out_hw();
    let n = ho * wo;
    let mut cols = vec![T::zero(); g.cin * g.k * g.k * n];
    for ci in 0..g.cin {
        let plane = &x[ci * g.h * g.w..(ci + 1) * g.h * g.w];
        for ki in 0..g.k {
            for kj in 0..g.k {
                let row = (ci * g.k + ki) * g.k + kj;
                let dst = &mut cols[row * n..(row + 1) * n];
                for oh in 0..ho {
                    let ih = (oh * g.stride + ki) as isize - g.pad as isize;
                    if ih < 0 || ih >= g.h as isize {
                        continue;
                    }
                    let src = &plane[ih as usize * g.w..(ih as usize + 1) * g.w];
                    let drow = &mut dst[oh * wo..(oh + 1) * wo];
                    if g.stride == 1 {
                        // valid ow range: 0 <= ow + kj - pad < w
                        let lo = g.pad.saturating_sub(kj);
                        let hi = (g.w + g.pad).saturating_sub(kj).min(wo);
                        if lo < hi {
                            let s0 = lo + kj - g.pad;
                            drow[lo..hi].copy_from_slice(&src[s0..s0 + (hi - lo)]);
                        }
                    } else {
                        for (ow, d) in drow.iter_mut().enumerate() {
                            let iw = (ow * g.stride + kj) as isize - g.pad as isize;
                            if iw >= 0 && iw < g.w as isize {
                                *d = src[iw as usize];
                            }
                        }
                    }
                }
            }
        }
    }
    cols
}

pub(crate) fn col2im<T: Real>(cols: &[T], g: ConvGeom) -> Vec<T> {
    let (ho, wo) = g.out_hw();
    let n = ho * wo;
    let mut x = vec![T::zero(); g.cin * g.h * g.w];
    for ci in 0..g.cin {
        let plane = &mut x[ci * g.h * g.w..(ci + 1) * g.h * g.w];
        for ki in 0..g.k {
            for kj in 0..g.k {
                let row = (ci * g.k + ki) * g.k + kj;
                let src = &cols[row * n..(row + 1) * n];
                for oh in 0..ho {
                    let ih = (oh * g.stride + ki) as isize - g.pad as isize;
                    if ih < 0 || ih >= g.h as isize {
                        continue;
                    }
                    let dst = &mut plane[ih as usize * g.w..(ih as usize + 1) * g.w];
                    let srow = &src[oh * wo..(oh + 1) * wo];
                    for (ow, &v) in srow.iter().enumerate() {
                        let iw = (ow * g.stride + kj) as isize - g.pad as isize;
                        if iw >= 0 && iw < g.w as isize {
                            dst[iw as usize] += v;
                        }
                    }
                }
            }
        }
    }
    x
}

/// Forward convolution. Returns the output and, unless the convolution is
/// pointwise, the im2col buffer needed by the backward pass.
pub(crate) fn conv2d_forward<T: Real>(
    x: &[T],
    weight: &[T],
    bias: Option<&[T]>,
    cout: usize,
    g: ConvGeom,
) -> (Vec<T>, Option<Vec<T>>) {
    let (ho, wo) = g.out_hw();
    let n = ho * wo;
    let kk = g.cin * g.k * g.k;
    let mut out = vec![T::zero(); cout * n];
    let cols = if g.is_pointwise() { None } else { Some(im2col(x, g)) };
    let b = cols.as_deref().unwrap_or(x);
    if let Some(bias) = bias {
        for (co, row) in out.chunks_mut(n).enumerate() {
            row.iter_mut().for_each(|v| *v = bias[co]);
        }
    }
    matmul(cout, n, kk, &mut out, bias.is_some(), weight, kk as isize, 1, b, n as isize, 1);
    (out, cols)
}

pub(crate) struct ConvGrads<T> {
    pub dx: Option<Vec<T>>,
    pub dw: Option<Vec<T>>,
    pub db: Option<Vec<T>>,
}

#[allow(clippy::too_many_arguments)]
pub(crate) fn conv2d_backward<T: Real>(
    dout: &[T],
    x: &[T],
    cols: Option<&[T]>,
    weight: &[T],
    cout: usize,
    g: ConvGeom,
    need_dx: bool,
    need_dw: bool,
    need_db: bool,
) -> ConvGrads<T> {
    let (ho, wo) = g.out_hw();
    let n = ho * wo;
    let kk = g.cin * g.k * g.k;
    let b = cols.unwrap_or(x);
    let dw = need_dw.then(|| {
        let mut dw = vec![T::zero(); cout * kk];
        // dW = dOut · colsᵀ
        matmul(cout, kk, n, &mut dw, false, dout, n as isize, 1, b, 1, n as isize);
        dw
    });
    let db = need_db.then(|| dout.chunks(n).map(|r| r.iter().copied().sum()).collect());
    let dx = need_dx.then(|| {
        let mut dcols = vec![T::zero(); kk * n];
        // dCols = Wᵀ · dOut
        matmul(kk, n, cout, &mut dcols, false, weight, 1, kk as isize, dout, n as isize, 1);
        if g.is_pointwise() {
            dcols
        } else {
            col2im(&dcols, g)
        }
    });
    ConvGrads { dx, dw, db }
}

/// Depthwise (one filter per channel) stride-1 convolution with `pad` zero
/// padding on every side.
pub(crate) fn depthwise_forward<T: Real>(
    x: &[T],
    weight: &[T],
    bias: Option<&[T]>,
    (c, h, w): (usize, usize, usize),
    k: usize,
    pad: usize,
) -> Vec<T> {
    let ho = h + 2 * pad - k + 1;
    let wo = w + 2 * pad - k + 1;
    let mut out = vec![T::zero(); c * ho * wo];
    for ch in 0..c {
        let plane = &x[ch * h * w..(ch + 1) * h * w];
        let filt = &weight[ch * k * k..(ch + 1) * k * k];
        let dst = &mut out[ch * ho * wo..(ch + 1) * ho * wo];
        let b0 = bias.map_or(T::zero(), |b| b[ch]);
        dst.iter_mut().for_each(|v| *v = b0);
        for ki in 0..k {
            for kj in 0..k {
                let f = filt[ki * k + kj];
                for oh in 0..ho {
                    let ih = (oh + ki) as isize - pad as isize;
                    if ih < 0 || ih >= h as isize {
                        continue;
                    }
                    let src = &plane[ih as usize * w..(ih as usize + 1) * w];
                    let drow = &mut dst[oh * wo..(oh + 1) * wo];
                    let lo = pad.saturating_sub(kj);
                    let hi = (w + pad).saturating_sub(kj).min(wo);
                    for ow in lo..hi {
                        drow[ow] += f * src[ow + kj - pad];
                    }
                }
            }
        }
    }
    out
}

#[allow(clippy::type_complexity)]
pub(crate) fn depthwise_backward<T: Real>(
    dout: &[T],
    x: &[T],
    weight: &[T],
    (c, h, w): (usize, usize, usize),
    k: usize,
    pad: usize,
) -> (Vec<T>, Vec<T>, Vec<T>) {
    let ho = h + 2 * pad - k + 1;
    let wo = w + 2 * pad - k + 1;
    let mut dx = vec![T::zero(); c * h * w];
    let mut dw = vec![T::zero(); c * k * k];
    let mut db = vec![T::zero(); c];
    for ch in 0..c {
        let plane = &x[ch * h * w..(ch + 1) * h * w];
        let dplane = &mut dx[ch * h * w..(ch + 1) * h * w];
        let filt = &weight[ch * k * k..(ch + 1) * k * k];
        let g = &dout[ch * ho * wo..(ch + 1) * ho * wo];
        db[ch] = g.iter().copied().sum();
        for ki in 0..k {
            for kj in 0..k {
                let f = filt[ki * k + kj];
                let mut acc = T::zero();
                for oh in 0..ho {
                    let ih = (oh + ki) as isize - pad as isize;
                    if ih < 0 || ih >= h as isize {
                        continue;
                    }
                    let base = ih as usize * w;
                    let grow = &g[oh * wo..(oh + 1) * wo];
                    let lo = pad.saturating_sub(kj);
                    let hi = (w + pad).saturating_sub(kj).min(wo);
                    for ow in lo..hi {
                        let iw = ow + kj - pad;
                        acc += grow[ow] * plane[base + iw];
                        dplane[base + iw] += grow[ow] * f;
                    }
                }
                dw[ch * k * k + ki * k + kj] = acc;
            }
        }
    }
    (dx, dw, db)
}

/// Separable "valid" filtering of every channel with the same 1-D kernel
/// along both axes.
pub(crate) fn blur_valid<T: Real>(x: &[T], (c, h, w): (usize, usize, usize), g: &[T]) -> Vec<T> {
    let k = g.len();
    let (ho, wo) = (h + 1 - k, w + 1 - k);
    let mut tmp = vec![T::zero(); h * wo];
    let mut out = vec![T::zero(); c * ho * wo];
    for ch in 0..c {
        let plane = &x[ch * h * w..(ch + 1) * h * w];
        for r in 0..h {
            let src = &plane[r * w..(r + 1) * w];
            for (cc, d) in tmp[r * wo..(r + 1) * wo].iter_mut().enumerate() {
                *d = g.iter().zip(&src[cc..cc + k]).map(|(&a, &b)| a * b).sum();
            }
        }
        let dst = &mut out[ch * ho * wo..(ch + 1) * ho * wo];
        for r in 0..ho {
            let drow = &mut dst[r * wo..(r + 1) * wo];
            for (i, &gi) in g.iter().enumerate() {
                let srow = &tmp[(r + i) * wo..(r + i + 1) * wo];
                for (d, &s) in drow.iter_mut().zip(srow) {
                    *d += gi * s;
                }
            }
        }
    }
    out
}

pub(crate) fn blur_valid_backward<T: Real>(
    dout: &[T],
    (c, h, w): (usize, usize, usize),
    g: &[T],
) -> Vec<T> {
    let k = g.len();
    let (ho, wo) = (h + 1 - k, w + 1 - k);
    let mut dtmp = vec![T::zero(); h * wo];
    let mut dx = vec![T::zero(); c * h * w];
    for ch in 0..c {
        dtmp.iter_mut().for_each(|v| *v = T::zero());
        let gd = &dout[ch * ho * wo..(ch + 1) * ho * wo];
        for r in 0..ho {
            let grow = &gd[r * wo..(r + 1) * wo];
            for (i, &gi) in g.iter().enumerate() {
                let trow = &mut dtmp[(r + i) * wo..(r + i + 1) * wo];
                for (t, &s) in trow.iter_mut().zip(grow) {
                    *t += gi * s;
                }
            }
        }
        let dplane = &mut dx[ch * h * w..(ch + 1) * h * w];
        for r in 0..h {
            let trow = &dtmp[r * wo..(r + 1) * wo];
            let drow = &mut dplane[r * w..(r + 1) * w];
            for (cc, &t) in trow.iter().enumerate() {
                for (j, &gj) in g.iter().enumerate() {
                    drow[cc + j] += gj * t;
                }
            }
        }
    }
    dx
}
