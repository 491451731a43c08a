//! Centered, unitary discrete Fourier transforms.
//!
//! Index `n / 2` of every transformed axis is the zero frequency, and both
//! directions are scaled by `1 / sqrt(n)`, so the forward transform is
//! unitary and the inverse is its adjoint.

use std::cell::RefCell;
use std::collections::HashMap;
use std::sync::Arc;

use num_complex::Complex64;
use rustfft::{Fft, FftDirection, FftPlanner};

use super::ComplexTensor;
use crate::error::{ensure, Result};

thread_local! {
    static PLANS: RefCell<(FftPlanner<f64>, HashMap<(usize, bool), Arc<dyn Fft<f64>>>)> =
        RefCell::new((FftPlanner::new(), HashMap::new()));
}

fn plan(len: usize, inverse: bool) -> Arc<dyn Fft<f64>> {
    PLANS.with(|p| {
        let mut p = p.borrow_mut();
        let (planner, cache) = &mut *p;
        cache
            .entry((len, inverse))
            .or_insert_with(|| {
                let dir = if inverse {
                    FftDirection::Inverse
                } else {
                    FftDirection::Forward
                };
                planner.plan_fft(len, dir)
            })
            .clone()
    })
}

/// Centered unitary forward DFT along `axes`.
pub fn fft_centered(x: &ComplexTensor, axes: &[usize]) -> Result<ComplexTensor> {
    transform_axes(x, axes, false)
}

/// Inverse of [`fft_centered`].
pub fn ifft_centered(x: &ComplexTensor, axes: &[usize]) -> Result<ComplexTensor> {
    transform_axes(x, axes, true)
}

fn transform_axes(x: &ComplexTensor, axes: &[usize], inverse: bool) -> Result<ComplexTensor> {
    let shape = x.shape().to_vec();
    for &a in axes {
        ensure(a < shape.len(), || {
            format!("fft axis {a} out of range for {}-d tensor", shape.len())
        })?;
    }
    let mut out = x.clone();
    for &axis in axes {
        let n = shape[axis];
        let stride: usize = shape[axis + 1..].iter().product();
        let outer: usize = shape[..axis].iter().product();
        let fft = plan(n, inverse);
        let scale = 1.0 / (n as f64).sqrt();
        let c = n / 2;
        let mut lane = vec![Complex64::default(); n];
        let mut scratch = vec![Complex64::default(); fft.get_inplace_scratch_len()];
        let data = out.data_mut();
        for o in 0..outer {
            for s in 0..stride {
                let base = o * n * stride + s;
                for (m, v) in lane.iter_mut().enumerate() {
                    *v = data[base + ((m + c) % n) * stride];
                }
                fft.process_with_scratch(&mut lane, &mut scratch);
                for k in 0..n {
                    data[base + k * stride] = lane[(k + n - c) % n] * scale;
                }
            }
        }
    }
    Ok(out)
}

/// In-place centered unitary 2-D forward DFT of one row-major `h x w` plane.
pub fn fft2_centered_inplace(plane: &mut [Complex64], h: usize, w: usize) {
    fft2_plane(plane, h, w, false)
}

/// In-place inverse of [`fft2_centered_inplace`].
pub fn ifft2_centered_inplace(plane: &mut [Complex64], h: usize, w: usize) {
    fft2_plane(plane, h, w, true)
}

thread_local! {
    static SCRATCH: RefCell<(Vec<Complex64>, Vec<Complex64>, Vec<Complex64>)> =
        const { RefCell::new((Vec::new(), Vec::new(), Vec::new())) };
}

fn fft2_plane(plane: &mut [Complex64], h: usize, w: usize, inverse: bool) {
    debug_assert_eq!(plane.len(), h * w);
    let row_fft = plan(w, inverse);
    let col_fft = plan(h, inverse);
    let (ch, cw) = (h / 2, w / 2);
    let scale = 1.0 / ((h * w) as f64).sqrt();
    SCRATCH.with(|s| {
        let mut s = s.borrow_mut();
        let (a, b, scratch) = &mut *s;
        a.resize(h * w, Complex64::default());
        b.resize(h * w, Complex64::default());
        let need = row_fft
            .get_inplace_scratch_len()
            .max(col_fft.get_inplace_scratch_len());
        scratch.resize(need, Complex64::default());

        // rows: ifftshift along w, transform every row in one call
        for r in 0..h {
            let src = &plane[r * w..(r + 1) * w];
            let dst = &mut a[r * w..(r + 1) * w];
            dst[..w - cw].copy_from_slice(&src[cw..]);
            dst[w - cw..].copy_from_slice(&src[..cw]);
        }
        row_fft.process_with_scratch(&mut a[..], &mut scratch[..]);

        // fftshift along w, transpose, ifftshift along h
        for kw in 0..w {
            let src_col = (kw + w - cw) % w;
            let dst = &mut b[kw * h..(kw + 1) * h];
            for (m, v) in dst.iter_mut().enumerate() {
                *v = a[((m + ch) % h) * w + src_col];
            }
        }
        col_fft.process_with_scratch(&mut b[..], &mut scratch[..]);

        for kh in 0..h {
            let src_row = (kh + h - ch) % h;
            let dst = &mut plane[kh * w..(kh + 1) * w];
            for (kw, v) in dst.iter_mut().enumerate() {
                *v = b[kw * h + src_row] * scale;
            }
        }
    });
}
