//! N-dimensional FFT helpers shared by the generators, the spectrum
//! estimator and the spectral convolution layer.

use std::cell::RefCell;
use std::sync::Arc;

use rustfft::num_complex::Complex;
use rustfft::{Fft, FftDirection, FftPlanner};

thread_local! {
    static PLANNER: RefCell<FftPlanner<f64>> = RefCell::new(FftPlanner::new());
}

fn plan(n: usize, direction: FftDirection) -> Arc<dyn Fft<f64>> {
    PLANNER.with(|p| p.borrow_mut().plan_fft(n, direction))
}

/// Unnormalized forward FFT along every axis of a row-major array.
pub fn forward(shape: &[usize], data: &mut [Complex<f64>]) {
    transform(shape, data, FftDirection::Forward);
}

/// Inverse FFT along every axis, normalized by `1/N`.
pub fn inverse(shape: &[usize], data: &mut [Complex<f64>]) {
    transform(shape, data, FftDirection::Inverse);
    let n: usize = shape.iter().product();
    let scale = 1.0 / n as f64;
    for v in data.iter_mut() {
        *v *= scale;
    }
}

fn transform(shape: &[usize], data: &mut [Complex<f64>], direction: FftDirection) {
    let total: usize = shape.iter().product();
    assert_eq!(data.len(), total, "fft buffer does not match shape");
    let ndim = shape.len();
    // strides, row-major
    let mut strides = vec![1usize; ndim];
    for a in (0..ndim.saturating_sub(1)).rev() {
        strides[a] = strides[a + 1] * shape[a + 1];
    }
    let mut scratch = Vec::new();
    for axis in 0..ndim {
        let n = shape[axis];
        if n == 1 {
            continue;
        }
        let fft = plan(n, direction);
        if axis == ndim - 1 {
            for chunk in data.chunks_mut(n) {
                fft.process(chunk);
            }
        } else {
            scratch.resize(n, Complex::default());
            let stride = strides[axis];
            let lines = total / n;
            for line in 0..lines {
                // line index -> base offset with the transform axis removed
                let outer = line / stride;
                let inner = line % stride;
                let base = outer * stride * n + inner;
                for i in 0..n {
                    scratch[i] = data[base + i * stride];
                }
                fft.process(&mut scratch);
                for i in 0..n {
                    data[base + i * stride] = scratch[i];
                }
            }
        }
    }
}

/// Integer FFT mode number for bin `i` of an axis with `n` points
/// (`0, 1, ..., n/2, -(n/2-1), ..., -1` for even `n`).
pub fn mode(n: usize, i: usize) -> isize {
    if i <= n / 2 {
        i as isize
    } else {
        i as isize - n as isize
    }
}

pub fn to_complex(src: &[f64]) -> Vec<Complex<f64>> {
    src.iter().map(|&v| Complex::new(v, 0.0)).collect()
}

pub fn real_part(src: &[Complex<f64>]) -> Vec<f64> {
    src.iter().map(|v| v.re).collect()
}

/// Circular convolution of two real arrays via the convolution theorem.
pub fn circular_convolve(shape: &[usize], a: &[f64], b: &[f64]) -> Vec<f64> {
    let mut fa = to_complex(a);
    let mut fb = to_complex(b);
    forward(shape, &mut fa);
    forward(shape, &mut fb);
    for (x, y) in fa.iter_mut().zip(&fb) {
        *x *= *y;
    }
    inverse(shape, &mut fa);
    real_part(&fa)
}

/// Circular correlation (convolution with the reversed kernel): the adjoint
/// of `circular_convolve` in its first argument.
pub fn circular_correlate(shape: &[usize], a: &[f64], b: &[f64]) -> Vec<f64> {
    let mut fa = to_complex(a);
    let mut fb = to_complex(b);
    forward(shape, &mut fa);
    forward(shape, &mut fb);
    for (x, y) in fa.iter_mut().zip(&fb) {
        *x *= y.conj();
    }
    inverse(shape, &mut fa);
    real_part(&fa)
}
