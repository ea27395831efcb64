//! Two-dimensional complex FFT on a row-major `height x width` grid.
//!
//! The spectrum is kept in *transposed* order (`width` rows of `height`
//! samples, i.e. indexed `[kx][kv]`) so that a forward/inverse pair costs
//! only two transposes. Everything that multiplies spectra pointwise
//! (the shearlet filters) is stored in the same order.

use std::sync::Arc;

use num_complex::Complex64;
use rustfft::{Fft, FftPlanner};

#[derive(Clone)]
pub(crate) struct Fft2d {
    width: usize,
    height: usize,
    row_fwd: Arc<dyn Fft<f64>>,
    row_inv: Arc<dyn Fft<f64>>,
    col_fwd: Arc<dyn Fft<f64>>,
    col_inv: Arc<dyn Fft<f64>>,
}

/// Per-call scratch space. Never shared between threads.
pub(crate) struct FftWorkspace {
    scratch: Vec<Complex64>,
    transposed: Vec<Complex64>,
}

impl Fft2d {
    pub fn new(width: usize, height: usize) -> Self {
        let mut planner = FftPlanner::new();
        Self {
            width,
            height,
            row_fwd: planner.plan_fft_forward(width),
            row_inv: planner.plan_fft_inverse(width),
            col_fwd: planner.plan_fft_forward(height),
            col_inv: planner.plan_fft_inverse(height),
        }
    }

    pub fn len(&self) -> usize {
        self.width * self.height
    }

    pub fn workspace(&self) -> FftWorkspace {
        let scratch_len = [
            self.row_fwd.get_inplace_scratch_len(),
            self.row_inv.get_inplace_scratch_len(),
            self.col_fwd.get_inplace_scratch_len(),
            self.col_inv.get_inplace_scratch_len(),
        ]
        .into_iter()
        .max()
        .unwrap_or(0);
        FftWorkspace {
            scratch: vec![Complex64::default(); scratch_len],
            transposed: vec![Complex64::default(); self.len()],
        }
    }

    /// Spatial (row-major, `height x width`) to spectrum (`[kx][kv]`), in place.
    pub fn forward(&self, data: &mut [Complex64], ws: &mut FftWorkspace) {
        debug_assert_eq!(data.len(), self.len());
        self.row_fwd.process_with_scratch(data, &mut ws.scratch);
        transpose::transpose(data, &mut ws.transposed, self.width, self.height);
        self.col_fwd
            .process_with_scratch(&mut ws.transposed, &mut ws.scratch);
        data.copy_from_slice(&ws.transposed);
    }

    /// Spectrum (`[kx][kv]`) back to spatial row-major, in place. Unnormalized:
    /// the caller scales by `1 / (width * height)`.
    pub fn inverse(&self, data: &mut [Complex64], ws: &mut FftWorkspace) {
        debug_assert_eq!(data.len(), self.len());
        self.col_inv.process_with_scratch(data, &mut ws.scratch);
        transpose::transpose(data, &mut ws.transposed, self.height, self.width);
        self.row_inv
            .process_with_scratch(&mut ws.transposed, &mut ws.scratch);
        data.copy_from_slice(&ws.transposed);
    }
}

/// Signed frequency of DFT bin `k` on an axis of length `n`, in cycles per sample.
pub(crate) fn bin_frequency(k: usize, n: usize) -> f64 {
    let k = k as isize;
    let n_i = n as isize;
    let signed = if k <= (n_i - 1) / 2 { k } else { k - n_i };
    signed as f64 / n as f64
}
