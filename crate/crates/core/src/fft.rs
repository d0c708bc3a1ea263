//! Two-dimensional complex FFT on row-major buffers.

use std::sync::Arc;

use ndarray::Array2;
use num_complex::Complex64;
use rustfft::{Fft, FftPlanner};

/// Planned forward/inverse 2-D transforms for a fixed `rows × cols` grid.
///
/// Buffers are row-major with `rows * cols` entries. The inverse transform is
/// normalized, so `inverse(forward(a)) == a` up to round-off.
#[derive(Clone)]
pub struct Fft2 {
    rows: usize,
    cols: usize,
    row_fwd: Arc<dyn Fft<f64>>,
    row_inv: Arc<dyn Fft<f64>>,
    col_fwd: Arc<dyn Fft<f64>>,
    col_inv: Arc<dyn Fft<f64>>,
}

impl std::fmt::Debug for Fft2 {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.debug_struct("Fft2")
            .field("rows", &self.rows)
            .field("cols", &self.cols)
            .finish()
    }
}

impl Fft2 {
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

    pub fn shape(&self) -> (usize, usize) {
        (self.rows, self.cols)
    }

    pub fn len(&self) -> usize {
        self.rows * self.cols
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    pub fn forward(&self, data: &mut [Complex64]) {
        self.transform(data, &self.row_fwd, &self.col_fwd);
    }

    pub fn inverse(&self, data: &mut [Complex64]) {
        self.transform(data, &self.row_inv, &self.col_inv);
        let scale = 1.0 / self.len() as f64;
        for v in data.iter_mut() {
            *v *= scale;
        }
    }

    fn transform(&self, data: &mut [Complex64], row: &Arc<dyn Fft<f64>>, col: &Arc<dyn Fft<f64>>) {
        assert_eq!(data.len(), self.len(), "buffer does not match FFT grid");
        let zero = Complex64::new(0.0, 0.0);
        let mut scratch = vec![zero; row.get_inplace_scratch_len().max(col.get_inplace_scratch_len())];
        if self.cols > 1 {
            row.process_with_scratch(data, &mut scratch);
        }
        if self.rows > 1 {
            let mut t = vec![zero; data.len()];
            transpose(data, &mut t, self.rows, self.cols);
            col.process_with_scratch(&mut t, &mut scratch);
            transpose(&t, data, self.cols, self.rows);
        }
    }

    /// For each frequency `k`, the flat index of `−k`.
    pub fn negated_index(&self) -> Vec<usize> {
        let (r, c) = (self.rows, self.cols);
        (0..r)
            .flat_map(|i| (0..c).map(move |j| ((r - i) % r) * c + (c - j) % c))
            .collect()
    }

    /// Forward transform of a real image.
    pub fn forward_real(&self, a: &Array2<f64>) -> Vec<Complex64> {
        let mut buf = to_complex(a);
        self.forward(&mut buf);
        buf
    }

    /// Inverse transform keeping only the real part.
    pub fn inverse_real(&self, mut buf: Vec<Complex64>) -> Array2<f64> {
        self.inverse(&mut buf);
        let data = buf.into_iter().map(|c| c.re).collect();
        Array2::from_shape_vec((self.rows, self.cols), data).expect("shape matches buffer")
    }
}

fn transpose(src: &[Complex64], dst: &mut [Complex64], rows: usize, cols: usize) {
    const TILE: usize = 16;
    for r0 in (0..rows).step_by(TILE) {
        for c0 in (0..cols).step_by(TILE) {
            for r in r0..(r0 + TILE).min(rows) {
                for c in c0..(c0 + TILE).min(cols) {
                    dst[c * rows + r] = src[r * cols + c];
                }
            }
        }
    }
}

pub(crate) fn to_complex(a: &Array2<f64>) -> Vec<Complex64> {
    a.iter().map(|&v| Complex64::new(v, 0.0)).collect()
}
