//! Multi-dimensional FFTs over row-major buffers (last axis fastest).

use rayon::prelude::*;
use rustfft::num_complex::Complex64;
use rustfft::{Fft, FftPlanner};
use std::sync::Arc;

pub use rustfft::num_complex::Complex64 as C64;

fn plan(len: usize, inverse: bool) -> Arc<dyn Fft<f64>> {
    let mut planner = FftPlanner::new();
    if inverse {
        planner.plan_fft_inverse(len)
    } else {
        planner.plan_fft_forward(len)
    }
}

/// Unnormalized transform along the contiguous axis of every row.
pub fn fft_rows(data: &mut [Complex64], len: usize, inverse: bool) {
    let fft = plan(len, inverse);
    data.par_chunks_mut(len).for_each(|row| fft.process(row));
}

/// Unnormalized transform along an axis with the given stride, for every
/// line in a buffer made of `outer` blocks of `len * stride` elements.
fn fft_strided(data: &mut [Complex64], len: usize, stride: usize, inverse: bool) {
    let fft = plan(len, inverse);
    data.par_chunks_mut(len * stride).for_each(|block| {
        let mut line = vec![Complex64::new(0.0, 0.0); len];
        for s in 0..stride {
            for (k, v) in line.iter_mut().enumerate() {
                *v = block[k * stride + s];
            }
            fft.process(&mut line);
            for (k, v) in line.iter().enumerate() {
                block[k * stride + s] = *v;
            }
        }
    });
}

/// Unnormalized 2D transform of a `rows x cols` buffer.
pub fn fft2(data: &mut [Complex64], rows: usize, cols: usize, inverse: bool) {
    debug_assert_eq!(data.len(), rows * cols);
    fft_rows(data, cols, inverse);
    fft_strided(data, rows, cols, inverse);
}

/// Unnormalized 3D transform of an `n^3` buffer.
pub fn fft3(data: &mut [Complex64], n: usize, inverse: bool) {
    debug_assert_eq!(data.len(), n * n * n);
    fft_rows(data, n, inverse);
    fft_strided(data, n, n, inverse);
    fft_strided(data, n, n * n, inverse);
}

/// Signed frequency index for position `k` of an `n`-point transform.
pub fn signed_index(k: usize, n: usize) -> isize {
    if k < n.div_ceil(2) {
        k as isize
    } else {
        k as isize - n as isize
    }
}
