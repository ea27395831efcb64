//! Geometric EPI operators: shearing, crop ranges, row selection, remapping
//! onto a zero-padded dense grid and the inverse post-shear.
//!
//! All row indices are 0-based. A shear with parameter `rho` moves row `v` of
//! an `H`-row EPI by `(H - 1 - v) * rho` columns: the bottom row stays put
//! and positive `rho` pushes upper rows toward higher columns. A scene line
//! with disparity `d` therefore ends up with disparity `d - rho`.

use ndarray::{s, Array3, Axis};
use rand::Rng;

use crate::error::{Error, Result};
use crate::lightfield::{Epi, RowRole};

/// Horizontal displacement of row `row` of a `rows`-row EPI.
pub fn row_shift(rows: usize, row: usize, rho: f64) -> f64 {
    (rows - 1 - row) as f64 * rho
}

/// Shear `epi` by `rho` pixels per row step. Fractional shifts interpolate
/// linearly between neighbouring columns; pixels with no source are set to
/// `fill`.
pub fn shear(epi: &Epi, rho: f64, fill: f32) -> Epi {
    let (rows, width, _) = epi.pixels.dim();
    let mut out = Array3::from_elem((rows, width, 3), fill);
    for v in 0..rows {
        let shift = row_shift(rows, v, rho);
        let src_row = epi.pixels.index_axis(Axis(0), v);
        let mut dst_row = out.index_axis_mut(Axis(0), v);
        for c in 0..width {
            let pos = c as f64 - shift;
            if pos < 0.0 || pos > (width - 1) as f64 {
                continue;
            }
            let c0 = pos.floor() as usize;
            let frac = pos - c0 as f64;
            for ch in 0..3 {
                dst_row[[c, ch]] = if frac == 0.0 {
                    src_row[[c0, ch]]
                } else {
                    let a = src_row[[c0, ch]] as f64;
                    let b = src_row[[c0 + 1, ch]] as f64;
                    ((1.0 - frac) * a + frac * b) as f32
                };
            }
        }
    }
    Epi::new(out, epi.role)
}

/// Inclusive range of crop starts (0-based columns) such that a `crop`-wide
/// window of the `rho`-sheared EPI contains no fill pixels in any row.
pub fn valid_crop_range(
    width: usize,
    rows: usize,
    rho: f64,
    crop: usize,
) -> Result<(usize, usize)> {
    if rows == 0 || crop == 0 || crop > width {
        return Err(Error::EmptyCropRange(format!(
            "crop width {crop} does not fit a {width}-column EPI"
        )));
    }
    // Column c of row v is valid iff 0 <= c - shift_v <= width - 1.
    let mut lo = 0f64;
    let mut hi = (width - 1) as f64;
    for v in 0..rows {
        let shift = row_shift(rows, v, rho);
        lo = lo.max(shift.ceil());
        hi = hi.min((width - 1) as f64 + shift).floor();
    }
    let last_start = hi - (crop - 1) as f64;
    if last_start < lo {
        return Err(Error::EmptyCropRange(format!(
            "a {crop}-column window does not fit between fill borders of a {width}-column EPI sheared by {rho} over {rows} rows"
        )));
    }
    Ok((lo as usize, last_start as usize))
}

/// Shear by `rho` and return a random `crop`-wide window free of fill pixels.
/// The start column is drawn uniformly from [`valid_crop_range`].
pub fn random_crop<R: Rng + ?Sized>(
    epi: &Epi,
    rho: f64,
    crop: usize,
    rng: &mut R,
) -> Result<(Epi, usize)> {
    let (lo, hi) = valid_crop_range(epi.width(), epi.rows(), rho, crop)?;
    let start = rng.random_range(lo..=hi);
    let sheared = shear(epi, rho, 0.0);
    let pixels = sheared.pixels.slice(s![.., start..start + crop, ..]).to_owned();
    Ok((Epi::new(pixels, epi.role), start))
}

/// Rows `0, k, 2k, ..., rows-1` with `k = (rows - 1) / (views - 1)`.
pub fn select_rows(crop: &Epi, views: usize) -> Result<Epi> {
    let rows = crop.rows();
    if views < 2 || views > rows || !(rows - 1).is_multiple_of(views - 1) {
        return Err(Error::param(format!(
            "cannot pick {views} evenly spaced rows out of {rows}"
        )));
    }
    let stride = (rows - 1) / (views - 1);
    let pixels = crop.pixels.slice(s![..;stride, .., ..]).to_owned();
    Ok(Epi::new(pixels, crop.role))
}

/// Place row `k` of `rows` at row `k * tau` of a zero EPI with `height` rows.
pub fn remap(rows: &Epi, tau: usize, height: usize) -> Result<Epi> {
    let t = rows.rows();
    if t == 0 || tau == 0 {
        return Err(Error::param("remap needs at least one row and tau >= 1"));
    }
    let occupied = (t - 1) * tau + 1;
    if occupied > height {
        return Err(Error::param(format!(
            "{t} rows at interval {tau} need {occupied} rows, grid has {height}"
        )));
    }
    let mut out = Array3::zeros((height, rows.width(), 3));
    out.slice_mut(s![..occupied;tau, .., ..]).assign(&rows.pixels);
    Ok(Epi::new(out, RowRole::Padded))
}

/// Evenly strided row selection `start, start + stride, ..., stop` (0-based, inclusive).
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct RowGrid {
    pub start: usize,
    pub stride: usize,
    pub stop: usize,
}

impl RowGrid {
    pub fn new(start: usize, stride: usize, stop: usize) -> Result<Self> {
        if stride == 0 || stop < start || !(stop - start).is_multiple_of(stride) {
            return Err(Error::param(format!(
                "row grid {start}:{stride}:{stop} is not evenly strided"
            )));
        }
        Ok(Self { start, stride, stop })
    }

    /// Grid written in 1-based `a:s:b` slice notation.
    pub fn one_based(start: usize, stride: usize, stop: usize) -> Result<Self> {
        if start == 0 {
            return Err(Error::param("1-based grid cannot start at 0"));
        }
        Self::new(start - 1, stride, stop - 1)
    }

    /// Grid for a rational stride `num / den`; rejects non-integer strides.
    pub fn with_ratio(start: usize, num: usize, den: usize, stop: usize) -> Result<Self> {
        if den == 0 || !num.is_multiple_of(den) {
            return Err(Error::param(format!(
                "stride {num}/{den} is not an integer"
            )));
        }
        Self::new(start, num / den, stop)
    }

    pub fn len(&self) -> usize {
        (self.stop - self.start) / self.stride + 1
    }

    pub fn is_empty(&self) -> bool {
        false
    }

    pub fn rows(&self) -> impl Iterator<Item = usize> {
        (self.start..=self.stop).step_by(self.stride)
    }
}

/// The rows addressed by `grid`, in order.
pub fn slice_rows(epi: &Epi, grid: RowGrid) -> Result<Epi> {
    if grid.stop >= epi.rows() {
        return Err(Error::OutOfRange {
            index: grid.stop,
            limit: epi.rows(),
        });
    }
    let pixels = epi
        .pixels
        .slice(s![grid.start..=grid.stop;grid.stride, .., ..])
        .to_owned();
    Ok(Epi::new(pixels, epi.role))
}

/// Undo a pre-shear of `rho` on a dense reconstruction of `views` input rows:
/// keep the top `(views - 1) tau + 1` rows, shear them by `-rho / tau` with
/// zero fill and clamp to `[0, 1]`.
pub fn postshear_cut(dense: &Epi, rho: f64, tau: usize, views: usize) -> Result<Epi> {
    if views < 1 || tau < 1 {
        return Err(Error::param("postshear needs views >= 1 and tau >= 1"));
    }
    let keep = (views - 1) * tau + 1;
    if dense.rows() < keep {
        return Err(Error::param(format!(
            "dense EPI has {} rows, needs at least {keep}",
            dense.rows()
        )));
    }
    let top = Epi::new(dense.pixels.slice(s![..keep, .., ..]).to_owned(), RowRole::Dense);
    let mut out = shear(&top, -rho / tau as f64, 0.0);
    out.clamp_unit();
    Ok(out)
}

/// Widen to `width` columns by edge replication, placing the original at `left`.
pub fn pad_columns(epi: &Epi, left: usize, width: usize) -> Result<Epi> {
    let m = epi.width();
    if m == 0 || left + m > width {
        return Err(Error::param(format!(
            "cannot place {m} columns at {left} in a {width}-column EPI"
        )));
    }
    let pixels = Array3::from_shape_fn((epi.rows(), width, 3), |(v, c, ch)| {
        epi.pixels[[v, c.saturating_sub(left).min(m - 1), ch]]
    });
    Ok(Epi::new(pixels, epi.role))
}

/// Columns `left..left + width`.
pub fn crop_columns(epi: &Epi, left: usize, width: usize) -> Result<Epi> {
    if left + width > epi.width() {
        return Err(Error::OutOfRange {
            index: left + width,
            limit: epi.width(),
        });
    }
    Ok(Epi::new(
        epi.pixels.slice(s![.., left..left + width, ..]).to_owned(),
        epi.role,
    ))
}
