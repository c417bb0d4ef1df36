//! Square 2-D discrete Fourier transforms with unitary normalization.

use std::sync::Arc;

use ndarray::Array2;
use num_complex::Complex64;
use rustfft::{Fft, FftPlanner};

/// Reusable plan for `n x n` transforms.
#[derive(Clone)]
pub struct Fft2 {
    n: usize,
    forward: Arc<dyn Fft<f64>>,
    inverse: Arc<dyn Fft<f64>>,
    scratch: Vec<Complex64>,
}

impl std::fmt::Debug for Fft2 {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.debug_struct("Fft2").field("n", &self.n).finish()
    }
}

impl Fft2 {
    pub fn new(n: usize) -> Self {
        let mut planner = FftPlanner::new();
        let forward = planner.plan_fft_forward(n);
        let inverse = planner.plan_fft_inverse(n);
        let len = forward.get_inplace_scratch_len().max(inverse.get_inplace_scratch_len());
        Self { n, forward, inverse, scratch: vec![Complex64::default(); len] }
    }

    pub fn len(&self) -> usize {
        self.n
    }

    pub fn is_empty(&self) -> bool {
        self.n == 0
    }

    /// Unitary forward transform, in place.
    pub fn forward(&mut self, data: &mut Array2<Complex64>) {
        let f = self.forward.clone();
        self.transform(data, f.as_ref());
        self.scale(data);
    }

    /// Unitary inverse transform, in place.
    pub fn inverse(&mut self, data: &mut Array2<Complex64>) {
        let f = self.inverse.clone();
        self.transform(data, f.as_ref());
        self.scale(data);
    }

    /// Inverse transform without the `1/n` factor: `sum_k c_k exp(+i 2 pi k.j / n)`.
    pub fn inverse_unnormalized(&mut self, data: &mut Array2<Complex64>) {
        let f = self.inverse.clone();
        self.transform(data, f.as_ref());
    }

    fn scale(&self, data: &mut Array2<Complex64>) {
        let s = 1.0 / self.n as f64;
        data.mapv_inplace(|v| v * s);
    }

    fn transform(&mut self, data: &mut Array2<Complex64>, fft: &dyn Fft<f64>) {
        assert_eq!(data.dim(), (self.n, self.n), "transform size mismatch");
        let buf = data.as_slice_mut().expect("standard layout");
        fft.process_with_scratch(buf, &mut self.scratch);
        transpose_square(buf, self.n);
        fft.process_with_scratch(buf, &mut self.scratch);
        transpose_square(buf, self.n);
    }
}

fn transpose_square(buf: &mut [Complex64], n: usize) {
    const BLOCK: usize = 32;
    for bi in (0..n).step_by(BLOCK) {
        for bj in (bi..n).step_by(BLOCK) {
            for i in bi..(bi + BLOCK).min(n) {
                let start = if bi == bj { i + 1 } else { bj };
                for j in start..(bj + BLOCK).min(n) {
                    buf.swap(i * n + j, j * n + i);
                }
            }
        }
    }
}

/// Angular frequency of FFT bin `m` for `n` samples at spacing `step`.
pub fn bin_frequency(m: usize, n: usize, step: f64) -> f64 {
    let signed = if m < n / 2 { m as f64 } else { m as f64 - n as f64 };
    2.0 * std::f64::consts::PI * signed / (n as f64 * step)
}
