//! Batched 2-D FFTs over channel-major `[channel][row][col]` buffers.

use std::sync::Arc;

use rustfft::num_complex::Complex;
use rustfft::{Fft, FftPlanner};

use crate::Scalar;

pub struct Fft2<T: Scalar> {
    rows: usize,
    cols: usize,
    row_fwd: Arc<dyn Fft<T>>,
    row_inv: Arc<dyn Fft<T>>,
    col_fwd: Arc<dyn Fft<T>>,
    col_inv: Arc<dyn Fft<T>>,
}

impl<T: Scalar> Fft2<T> {
    pub fn new(rows: usize, cols: usize) -> Self {
        let mut planner = FftPlanner::new();
        Self {
            rows,
            cols,
            row_fwd: planner.plan_fft_forward(cols),
            row_inv: planner.plan_fft_inverse(cols),
            col_fwd: planner.plan_fft_forward(rows),
            col_inv: planner.plan_fft_inverse(rows),
        }
    }

    pub fn len(&self) -> usize {
        self.rows * self.cols
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    /// Unnormalized transform of every channel in place:
    /// `X[k] = sum_n x[n] exp(-+2 pi i k.n / N)`, sign `+` when `inverse`.
    pub fn transform(&self, buf: &mut [Complex<T>], inverse: bool) {
        let n = self.len();
        debug_assert_eq!(buf.len() % n, 0);
        let (row, col) = if inverse {
            (&self.row_inv, &self.col_inv)
        } else {
            (&self.row_fwd, &self.col_fwd)
        };
        row.process(buf);
        let mut t = vec![Complex::default(); buf.len()];
        for (src, dst) in buf.chunks_exact(n).zip(t.chunks_exact_mut(n)) {
            transpose(src, dst, self.rows, self.cols);
        }
        col.process(&mut t);
        for (src, dst) in t.chunks_exact(n).zip(buf.chunks_exact_mut(n)) {
            transpose(src, dst, self.cols, self.rows);
        }
    }

    /// Forward transform of real channel-major data.
    pub fn forward_real(&self, x: &[T]) -> Vec<Complex<T>> {
        let mut buf: Vec<Complex<T>> = x.iter().map(|&v| Complex::new(v, T::zero())).collect();
        self.transform(&mut buf, false);
        buf
    }

    /// Real part of the normalized inverse transform.
    pub fn inverse_real(&self, mut spec: Vec<Complex<T>>) -> Vec<T> {
        self.transform(&mut spec, true);
        let norm = T::one() / T::of_usize(self.len());
        spec.into_iter().map(|c| c.re * norm).collect()
    }
}

fn transpose<C: Copy>(src: &[C], dst: &mut [C], rows: usize, cols: usize) {
    for r in 0..rows {
        for c in 0..cols {
            dst[c * rows + r] = src[r * cols + c];
        }
    }
}
