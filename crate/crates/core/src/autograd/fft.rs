//! Orthonormal 2-D FFT over each channel of a `[C, H, W]` buffer.

use rustfft::num_complex::Complex;
use rustfft::{FftDirection, FftPlanner};

use crate::tensor::Real;

/// Applies an orthonormal 2-D transform in place to `c` planes of `h×w`
/// complex samples.
pub(crate) fn fft2_ortho<T: Real>(buf: &mut [Complex<T>], c: usize, h: usize, w: usize, inverse: bool) {
    let dir = if inverse { FftDirection::Inverse } else { FftDirection::Forward };
    let mut planner = FftPlanner::<T>::new();
    let row = planner.plan_fft(w, dir);
    let col = planner.plan_fft(h, dir);
    let scale = T::one() / T::lit(((h * w) as f64).sqrt());
    let mut column = vec![Complex::new(T::zero(), T::zero()); h];
    for plane in buf.chunks_mut(h * w).take(c) {
        row.process(plane);
        for x in 0..w {
            for y in 0..h {
                column[y] = plane[y * w + x];
            }
            col.process(&mut column);
            for y in 0..h {
                plane[y * w + x] = column[y] * scale;
            }
        }
    }
}

pub(crate) fn real_to_complex<T: Real>(x: &[T]) -> Vec<Complex<T>> {
    x.iter().map(|&v| Complex::new(v, T::zero())).collect()
}
