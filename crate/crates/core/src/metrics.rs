//! Training losses, PSNR and evaluation reports.

use std::fmt::Write as _;
use std::time::Instant;

use ndarray::{s, ArrayView3};
use serde::{Deserialize, Serialize};

use crate::epi::{slice_rows, RowGrid};
use crate::error::{Error, Result};
use crate::lightfield::{Epi, LightField};

pub const PSNR_CAP_DB: f64 = 99.0;

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct LossConfig {
    pub lambda: f64,
}

impl Default for LossConfig {
    fn default() -> Self {
        Self { lambda: 2.0 }
    }
}

fn mean_abs(a: ArrayView3<'_, f32>, b: ArrayView3<'_, f32>) -> Result<f64> {
    if a.dim() != b.dim() {
        return Err(Error::shape(format!("compared {:?} with {:?}", a.dim(), b.dim())));
    }
    let n = a.len();
    if n == 0 {
        return Err(Error::shape("nothing to compare"));
    }
    let sum: f64 = a
        .iter()
        .zip(b.iter())
        .map(|(&x, &y)| (f64::from(x) - f64::from(y)).abs())
        .sum();
    Ok(sum / n as f64)
}

/// Rows of a `t`-view dense prediction that coincide with the `n'` training rows.
pub fn supervision_grid(t: usize, tau: usize, n_train: usize) -> Result<RowGrid> {
    if t < 2 || n_train < 2 {
        return Err(Error::param("need t >= 2 and at least 2 training rows"));
    }
    let span = (t - 1) * tau;
    RowGrid::with_ratio(0, span, n_train - 1, span)
}

/// Mean absolute error between `pred` at the supervision grid and `crop`.
pub fn loss_s(pred: &Epi, crop: &Epi, t: usize, tau: usize, n_train: usize) -> Result<f64> {
    if crop.rows() != n_train {
        return Err(Error::shape(format!(
            "crop has {} rows, expected {n_train}",
            crop.rows()
        )));
    }
    let picked = slice_rows(pred, supervision_grid(t, tau, n_train)?)?;
    mean_abs(picked.pixels.view(), crop.pixels.view())
}

/// Mean absolute error between rows `0..=2 tau` of `pred3` and rows
/// `0, 2, ..., 4 tau` of `pred5`.
pub fn loss_cyc(pred3: &Epi, pred5: &Epi, tau: usize) -> Result<f64> {
    if pred3.rows() < 2 * tau + 1 || pred5.rows() < 4 * tau + 1 {
        return Err(Error::shape(format!(
            "cycle loss needs {} and {} rows, got {} and {}",
            2 * tau + 1,
            4 * tau + 1,
            pred3.rows(),
            pred5.rows()
        )));
    }
    mean_abs(
        pred3.pixels.slice(s![..=2 * tau, .., ..]),
        pred5.pixels.slice(s![..=4 * tau;2, .., ..]),
    )
}

pub fn loss_total(ls3: f64, ls5: f64, lcyc: f64, cfg: LossConfig) -> f64 {
    ls3 + ls5 + cfg.lambda * lcyc
}

/// `10 log10(1 / MSE)` over all pixels and channels, capped at [`PSNR_CAP_DB`].
pub fn psnr(view: ArrayView3<'_, f32>, gt: ArrayView3<'_, f32>) -> Result<f64> {
    if view.dim() != gt.dim() {
        return Err(Error::shape(format!("PSNR of {:?} against {:?}", view.dim(), gt.dim())));
    }
    let n = view.len().max(1) as f64;
    let mse: f64 = view
        .iter()
        .zip(gt.iter())
        .map(|(&a, &b)| {
            let d = f64::from(a) - f64::from(b);
            d * d
        })
        .sum::<f64>()
        / n;
    if mse == 0.0 {
        return Ok(PSNR_CAP_DB);
    }
    Ok((-10.0 * mse.log10()).min(PSNR_CAP_DB))
}

/// `"min / avg"` with three decimals.
pub fn format_min_avg(min: f64, avg: f64) -> String {
    format!("{min:.3} / {avg:.3}")
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EvaluationReport {
    pub method: String,
    pub per_view_db: Vec<f64>,
    pub min_db: f64,
    pub avg_db: f64,
    /// Median wall time per EPI.
    pub epi_ms: f64,
    /// Index of every entry of `per_view_db` in the dense light field.
    #[serde(skip)]
    pub views: Vec<usize>,
}

impl EvaluationReport {
    pub fn summary(&self) -> String {
        format_min_avg(self.min_db, self.avg_db)
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("report serializes")
    }

    /// `view,psnr_db` rows.
    pub fn per_view_csv(&self) -> String {
        let mut out = String::from("view,psnr_db\n");
        for (v, db) in self.views.iter().zip(&self.per_view_db) {
            let _ = writeln!(out, "{v},{db:.3}");
        }
        out
    }
}

/// One row per light field, one `min / avg` cell per method.
pub fn table_csv(rows: &[(String, Vec<EvaluationReport>)]) -> String {
    let mut methods: Vec<&str> = Vec::new();
    for (_, reports) in rows {
        for r in reports {
            if !methods.contains(&r.method.as_str()) {
                methods.push(&r.method);
            }
        }
    }
    let mut out = String::from("light_field");
    for m in &methods {
        let _ = write!(out, ",{m}");
    }
    out.push('\n');
    for (name, reports) in rows {
        out.push_str(name);
        for m in &methods {
            let cell = reports
                .iter()
                .find(|r| r.method == *m)
                .map(|r| r.summary())
                .unwrap_or_default();
            let _ = write!(out, ",{cell}");
        }
        out.push('\n');
    }
    out
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct EvaluateOptions {
    /// Sampling interval of the input views; with `exclude_inputs` views at
    /// multiples of `tau` are skipped.
    pub tau: usize,
    pub exclude_inputs: bool,
}

pub fn evaluate(
    recon: &LightField,
    gt: &LightField,
    opts: EvaluateOptions,
    method: &str,
    epi_ms: &[f64],
) -> Result<EvaluationReport> {
    if recon.num_views() != gt.num_views() {
        return Err(Error::shape(format!(
            "reconstruction has {} views, ground truth {}",
            recon.num_views(),
            gt.num_views()
        )));
    }
    if opts.exclude_inputs && opts.tau == 0 {
        return Err(Error::param("tau must be positive to exclude input views"));
    }
    let views: Vec<usize> = (0..gt.num_views())
        .filter(|v| !(opts.exclude_inputs && v % opts.tau == 0))
        .collect();
    if views.is_empty() {
        return Err(Error::param("no views left to evaluate"));
    }
    let per_view_db = views
        .iter()
        .map(|&v| psnr(recon.view(v), gt.view(v)))
        .collect::<Result<Vec<_>>>()?;
    let min_db = per_view_db.iter().copied().fold(f64::INFINITY, f64::min);
    let avg_db = per_view_db.iter().sum::<f64>() / per_view_db.len() as f64;
    Ok(EvaluationReport {
        method: method.to_string(),
        per_view_db,
        min_db,
        avg_db,
        epi_ms: median(epi_ms).unwrap_or(0.0),
        views,
    })
}

pub fn median(values: &[f64]) -> Option<f64> {
    if values.is_empty() {
        return None;
    }
    let mut v = values.to_vec();
    v.sort_by(f64::total_cmp);
    let mid = v.len() / 2;
    Some(if v.len() % 2 == 1 {
        v[mid]
    } else {
        0.5 * (v[mid - 1] + v[mid])
    })
}

/// Run `f` `runs` times (at least 3) and return each wall time in milliseconds.
pub fn time_runs<T>(runs: usize, mut f: impl FnMut() -> T) -> Vec<f64> {
    (0..runs.max(3))
        .map(|_| {
            let start = Instant::now();
            std::hint::black_box(f());
            start.elapsed().as_secs_f64() * 1e3
        })
        .collect()
}
