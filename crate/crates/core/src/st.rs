//! Iterative hard-thresholding inpainting in the shearlet domain.
//!
//! Each iteration analyzes the current estimate, hard-thresholds the
//! coefficients, synthesizes, and re-imposes the known rows. The threshold
//! decreases linearly from `lambda_max * c_max` to `lambda_min * c_max`,
//! where `c_max` is the largest analysis coefficient magnitude of the input.
//!
//! Two options change the plain iteration:
//!
//! * `cone`: analysis sees only the slope cone of the spectrum. The zero rows
//!   of the remapped grid alias the data into out-of-cone directions, which
//!   are otherwise sparse enough to survive thresholding.
//! * `preconditioner`: the known-row residual `y - z` of the latest
//!   synthesis `z` is filtered along each row with gain
//!   `c * min(tau, 2 / |X|)` before being added to `z`. After the cone
//!   projection a sparse row set keeps only about `max(1/tau, |X|/2)` of
//!   its energy at normalized horizontal frequency `X`, so the plain update
//!   needs on the order of `tau` iterations to fill in the gaps.
//!
//! `SolverConfig::plain()` disables both and is exactly
//! `x <- M y + (1 - M) SH*(T(SH(x)))`.

use std::sync::Arc;

use ndarray::{Array2, ArrayView2};
use num_complex::Complex64;
use rustfft::{Fft, FftPlanner};

use crate::epi::RowGrid;
use crate::error::{Error, Result};
use crate::fft::bin_frequency;
use crate::shearlet::ShearletSystem;

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SolverConfig {
    pub iterations: usize,
    pub lambda_max: f64,
    pub lambda_min: f64,
    pub cone: bool,
    /// Scale `c` of the known-row residual gain; `None` re-imposes `y` as is.
    pub preconditioner: Option<f64>,
}

impl Default for SolverConfig {
    fn default() -> Self {
        Self {
            iterations: 50,
            lambda_max: 0.9,
            lambda_min: 0.0,
            cone: true,
            preconditioner: Some(0.75),
        }
    }
}

impl SolverConfig {
    pub fn plain() -> Self {
        Self {
            cone: false,
            preconditioner: None,
            ..Self::default()
        }
    }

    pub fn with_iterations(self, iterations: usize) -> Self {
        Self { iterations, ..self }
    }

    pub fn validate(&self) -> Result<()> {
        if !(0.0 <= self.lambda_min && self.lambda_min <= self.lambda_max) {
            return Err(Error::param(format!(
                "threshold schedule needs 0 <= lambda_min <= lambda_max, got [{}, {}]",
                self.lambda_min, self.lambda_max
            )));
        }
        if self.preconditioner.is_some_and(|c| !(c > 0.0 && c.is_finite())) {
            return Err(Error::param("preconditioner scale must be positive and finite"));
        }
        Ok(())
    }

    /// Threshold fraction (of `c_max`) at iteration `k`.
    pub fn fraction(&self, k: usize) -> f64 {
        if self.iterations <= 1 {
            return self.lambda_max;
        }
        self.lambda_max
            - (self.lambda_max - self.lambda_min) * k as f64 / (self.iterations - 1) as f64
    }
}

/// Which rows of the dense grid carry measured data.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct KnownRows(Vec<bool>);

impl KnownRows {
    pub fn from_grid(grid: RowGrid, height: usize) -> Result<Self> {
        if grid.stop >= height {
            return Err(Error::OutOfRange {
                index: grid.stop,
                limit: height,
            });
        }
        let mut rows = vec![false; height];
        for r in grid.rows() {
            rows[r] = true;
        }
        Ok(Self(rows))
    }

    /// Rows `0, tau, ..., (views - 1) tau` of a `height`-row grid.
    pub fn remapped(views: usize, tau: usize, height: usize) -> Result<Self> {
        if views < 1 || tau < 1 {
            return Err(Error::param("need views >= 1 and tau >= 1"));
        }
        Self::from_grid(RowGrid::new(0, tau, (views - 1) * tau)?, height)
    }

    pub fn all(height: usize) -> Self {
        Self(vec![true; height])
    }

    pub fn from_rows(rows: Vec<bool>) -> Self {
        Self(rows)
    }

    pub fn len(&self) -> usize {
        self.0.len()
    }

    pub fn is_empty(&self) -> bool {
        self.0.is_empty()
    }

    pub fn is_known(&self, row: usize) -> bool {
        self.0[row]
    }
}

/// Reconstruct a remapped EPI channel `y` (`height x width` of the system grid).
pub fn st_reconstruct(
    system: &ShearletSystem,
    y: ArrayView2<'_, f64>,
    known: &KnownRows,
    cfg: &SolverConfig,
) -> Result<Array2<f64>> {
    st_reconstruct_with(system, y, known, cfg, |_, _| {})
}

/// As [`st_reconstruct`], calling `observer(k, x)` after iteration `k` with the
/// unclamped iterate.
pub fn st_reconstruct_with(
    system: &ShearletSystem,
    y: ArrayView2<'_, f64>,
    known: &KnownRows,
    cfg: &SolverConfig,
    mut observer: impl FnMut(usize, ArrayView2<'_, f64>),
) -> Result<Array2<f64>> {
    cfg.validate()?;
    let (h, w) = y.dim();
    if (h, w) != (system.height(), system.width()) {
        return Err(Error::shape(format!(
            "channel is {w}x{h}, system grid is {}x{}",
            system.width(),
            system.height()
        )));
    }
    if known.len() != h {
        return Err(Error::shape(format!(
            "known-row mask has {} rows, grid has {h}",
            known.len()
        )));
    }
    let y: Vec<f64> = y.iter().copied().collect();
    let mut x = y.clone();
    if cfg.iterations > 0 {
        let n = h * w;
        let mut ws = system.workspace();
        let mut coeffs = vec![0.0; n * system.num_filters()];
        let mut z = y.clone();
        let mut input = y.clone();
        let mut gain = cfg
            .preconditioner
            .map(|c| RowGain::new(w, system.tau() as f64, c));
        let analyze = |x: &[f64], out: &mut [f64], ws: &mut _| {
            if cfg.cone {
                system.analyze_cone_into(x, out, ws)
            } else {
                system.analyze_into(x, out, ws)
            }
        };

        // z = y at k = 0, so the first analysis also yields c_max
        analyze(&y, &mut coeffs, &mut ws);
        let c_max = coeffs.iter().fold(0.0f64, |m, &c| m.max(c.abs()));

        for k in 0..cfg.iterations {
            if k > 0 {
                for row in 0..h {
                    let r = row * w..(row + 1) * w;
                    match (&mut gain, known.is_known(row)) {
                        (Some(g), true) => g.apply(&z[r.clone()], &y[r.clone()], &mut input[r]),
                        (None, true) => input[r.clone()].copy_from_slice(&y[r]),
                        (_, false) => input[r.clone()].copy_from_slice(&z[r]),
                    }
                }
                analyze(&input, &mut coeffs, &mut ws);
            }
            let lambda = cfg.fraction(k) * c_max;
            for c in coeffs.iter_mut() {
                if c.abs() <= lambda {
                    *c = 0.0;
                }
            }
            system.synthesize_into(&coeffs, &mut z, &mut ws);
            for row in 0..h {
                if !known.is_known(row) {
                    x[row * w..(row + 1) * w].copy_from_slice(&z[row * w..(row + 1) * w]);
                }
            }
            observer(k, ArrayView2::from_shape((h, w), &x).expect("grid shape"));
        }
    }
    for (row, chunk) in x.chunks_mut(w).enumerate() {
        if !known.is_known(row) {
            chunk.iter_mut().for_each(|v| *v = v.clamp(0.0, 1.0));
        }
    }
    Ok(Array2::from_shape_vec((h, w), x).expect("grid shape"))
}

/// Row filter `c * min(tau, 2 / |X|)` applied to known-row residuals.
struct RowGain {
    fwd: Arc<dyn Fft<f64>>,
    inv: Arc<dyn Fft<f64>>,
    gain: Vec<f64>,
    buf: Vec<Complex64>,
}

impl RowGain {
    fn new(width: usize, tau: f64, scale: f64) -> Self {
        let mut planner = FftPlanner::new();
        let gain = (0..width)
            .map(|k| {
                let x = 2.0 * bin_frequency(k, width).abs();
                let g = if x == 0.0 { tau } else { tau.min(2.0 / x) };
                scale * g / width as f64
            })
            .collect();
        Self {
            fwd: planner.plan_fft_forward(width),
            inv: planner.plan_fft_inverse(width),
            gain,
            buf: vec![Complex64::default(); width],
        }
    }

    /// `out = z + G (y - z)`.
    fn apply(&mut self, z: &[f64], y: &[f64], out: &mut [f64]) {
        for ((b, &zv), &yv) in self.buf.iter_mut().zip(z).zip(y) {
            *b = Complex64::new(yv - zv, 0.0);
        }
        self.fwd.process(&mut self.buf);
        for (b, &g) in self.buf.iter_mut().zip(&self.gain) {
            *b *= g;
        }
        self.inv.process(&mut self.buf);
        for ((o, &zv), b) in out.iter_mut().zip(z).zip(&self.buf) {
            *o = zv + b.re;
        }
    }
}
