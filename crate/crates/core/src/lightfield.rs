//! Light fields, EPIs, dataset manifests and image I/O.
//!
//! Views are stored as `(rows, columns, 3)` arrays of `f32` in `[0, 1]`.
//! An EPI at image row `i` stacks row `i` of every view, so its rows are
//! angular samples and its columns are the spatial axis.

use std::path::{Path, PathBuf};

use image::{DynamicImage, ImageBuffer, Rgb};
use ndarray::{s, Array3, ArrayView3, Axis};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Known disparity bounds of a light field, in pixels per view step.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct DisparityMeta {
    pub d_min: f64,
    pub d_max: f64,
}

impl DisparityMeta {
    pub fn new(d_min: f64, d_max: f64) -> Result<Self> {
        if !(d_min.is_finite() && d_max.is_finite()) || d_max < d_min {
            return Err(Error::param(format!(
                "disparity bounds [{d_min}, {d_max}] are not an interval"
            )));
        }
        Ok(Self { d_min, d_max })
    }

    pub fn range(&self) -> f64 {
        self.d_max - self.d_min
    }

    /// Bounds after keeping every `delta`-th view.
    pub fn scaled(&self, delta: usize) -> Self {
        Self {
            d_min: self.d_min * delta as f64,
            d_max: self.d_max * delta as f64,
        }
    }
}

/// JSON description of a light field on disk.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DatasetManifest {
    pub name: String,
    pub width: usize,
    pub height: usize,
    /// View files in angular order. Relative paths resolve against the
    /// manifest's directory when loaded with [`DatasetManifest::load`].
    pub views: Vec<PathBuf>,
    pub d_min: f64,
    pub d_max: f64,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub delta: Option<usize>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub n_dense: Option<usize>,
}

impl DatasetManifest {
    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        let mut manifest: DatasetManifest = serde_json::from_str(&text)?;
        let base = path.parent().unwrap_or(Path::new("."));
        for v in manifest.views.iter_mut() {
            if v.is_relative() {
                *v = base.join(&*v);
            }
        }
        Ok(manifest)
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        let text = serde_json::to_string_pretty(self)?;
        std::fs::write(path, text).map_err(|e| Error::io(path, e))
    }

    pub fn disparity(&self) -> Result<DisparityMeta> {
        DisparityMeta::new(self.d_min, self.d_max)
    }
}

/// Ordered stack of `n >= 2` colour views with identical dimensions.
#[derive(Debug, Clone, PartialEq)]
pub struct LightField {
    views: Vec<Array3<f32>>,
    meta: DisparityMeta,
}

impl LightField {
    pub fn new(views: Vec<Array3<f32>>, meta: DisparityMeta) -> Result<Self> {
        if views.len() < 2 {
            return Err(Error::TooFewViews(views.len()));
        }
        let dim = views[0].dim();
        if dim.2 != 3 {
            return Err(Error::shape(format!("views need 3 channels, got {}", dim.2)));
        }
        if dim.0 == 0 || dim.1 == 0 {
            return Err(Error::shape("views must not be empty"));
        }
        for (i, v) in views.iter().enumerate() {
            if v.dim() != dim {
                return Err(Error::shape(format!(
                    "view {i} is {:?}, view 0 is {:?}",
                    v.dim(),
                    dim
                )));
            }
            if let Some(bad) = v.iter().find(|p| !(0.0..=1.0).contains(*p)) {
                return Err(Error::param(format!("view {i} has pixel value {bad} outside [0, 1]")));
            }
        }
        Ok(Self { views, meta })
    }

    /// Assemble a light field whose row `i` is `epis[i]`.
    pub fn from_epis(epis: &[Epi], meta: DisparityMeta) -> Result<Self> {
        let first = epis
            .first()
            .ok_or_else(|| Error::shape("no EPIs to assemble"))?;
        let (n, m) = (first.rows(), first.width());
        let l = epis.len();
        let mut views = vec![Array3::<f32>::zeros((l, m, 3)); n];
        for (i, epi) in epis.iter().enumerate() {
            if (epi.rows(), epi.width()) != (n, m) {
                return Err(Error::shape(format!(
                    "EPI {i} is {}x{}, expected {n}x{m}",
                    epi.rows(),
                    epi.width()
                )));
            }
            for (v, view) in views.iter_mut().enumerate() {
                view.slice_mut(s![i, .., ..])
                    .assign(&epi.pixels.slice(s![v, .., ..]));
            }
        }
        Self::new(views, meta)
    }

    pub fn num_views(&self) -> usize {
        self.views.len()
    }

    /// Spatial width `m`.
    pub fn width(&self) -> usize {
        self.views[0].dim().1
    }

    /// Spatial height `l` (number of EPIs).
    pub fn height(&self) -> usize {
        self.views[0].dim().0
    }

    pub fn meta(&self) -> DisparityMeta {
        self.meta
    }

    pub fn views(&self) -> &[Array3<f32>] {
        &self.views
    }

    pub fn view(&self, v: usize) -> ArrayView3<'_, f32> {
        self.views[v].view()
    }

    pub fn into_views(self) -> Vec<Array3<f32>> {
        self.views
    }

    /// Replace view `v` with `pixels` (same shape, values in `[0, 1]`).
    pub fn set_view(&mut self, v: usize, pixels: ArrayView3<'_, f32>) -> Result<()> {
        if v >= self.views.len() {
            return Err(Error::OutOfRange {
                index: v,
                limit: self.views.len(),
            });
        }
        if pixels.dim() != self.views[v].dim() {
            return Err(Error::shape("replacement view has a different shape"));
        }
        self.views[v].assign(&pixels);
        Ok(())
    }

    /// EPI at image row `row` (0-based): row `v` of the EPI is row `row` of view `v`.
    pub fn extract_epi(&self, row: usize) -> Result<Epi> {
        if row >= self.height() {
            return Err(Error::OutOfRange {
                index: row,
                limit: self.height(),
            });
        }
        let mut pixels = Array3::zeros((self.num_views(), self.width(), 3));
        for (v, view) in self.views.iter().enumerate() {
            pixels
                .slice_mut(s![v, .., ..])
                .assign(&view.slice(s![row, .., ..]));
        }
        Ok(Epi::new(pixels, RowRole::Sparse))
    }

    /// Write `epi` back as image row `row` of every view.
    pub fn insert_epi(&mut self, row: usize, epi: &Epi) -> Result<()> {
        if row >= self.height() {
            return Err(Error::OutOfRange {
                index: row,
                limit: self.height(),
            });
        }
        if epi.rows() != self.num_views() || epi.width() != self.width() {
            return Err(Error::shape(format!(
                "EPI is {}x{}, light field needs {}x{}",
                epi.rows(),
                epi.width(),
                self.num_views(),
                self.width()
            )));
        }
        for (v, view) in self.views.iter_mut().enumerate() {
            view.slice_mut(s![row, .., ..])
                .assign(&epi.pixels.slice(s![v, .., ..]));
        }
        Ok(())
    }

    /// Keep views `0, delta, 2 delta, ...`; disparities scale by `delta`.
    pub fn subsample_views(&self, delta: usize) -> Result<Self> {
        let n_dense = self.num_views();
        if delta == 0 || !(n_dense - 1).is_multiple_of(delta) {
            return Err(Error::param(format!(
                "{n_dense} views cannot be subsampled at rate {delta}"
            )));
        }
        let views = self.views.iter().step_by(delta).cloned().collect();
        Self::new(views, self.meta.scaled(delta))
    }
}

/// Which angular sampling an EPI's rows represent.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum RowRole {
    /// `n` rows of an input light field.
    Sparse,
    /// `n'` rows of a training light field.
    Training,
    /// `(n-1) tau + 1` rows of a reconstruction.
    Dense,
    /// Remapped onto a zero-padded grid of `b` rows.
    Padded,
}

/// Epipolar-plane image: `(rows, width, 3)`.
#[derive(Debug, Clone, PartialEq)]
pub struct Epi {
    pub pixels: Array3<f32>,
    pub role: RowRole,
}

impl Epi {
    pub fn new(pixels: Array3<f32>, role: RowRole) -> Self {
        debug_assert_eq!(pixels.dim().2, 3);
        Self { pixels, role }
    }

    pub fn zeros(rows: usize, width: usize, role: RowRole) -> Self {
        Self::new(Array3::zeros((rows, width, 3)), role)
    }

    pub fn rows(&self) -> usize {
        self.pixels.dim().0
    }

    pub fn width(&self) -> usize {
        self.pixels.dim().1
    }

    pub fn with_role(mut self, role: RowRole) -> Self {
        self.role = role;
        self
    }

    /// One colour channel as `f64`, `(rows, width)`.
    pub fn channel(&self, c: usize) -> ndarray::Array2<f64> {
        self.pixels.index_axis(Axis(2), c).mapv(f64::from)
    }

    pub fn set_channel(&mut self, c: usize, values: ndarray::ArrayView2<'_, f64>) {
        self.pixels
            .index_axis_mut(Axis(2), c)
            .zip_mut_with(&values, |d, &v| *d = v as f32);
    }

    pub fn clamp_unit(&mut self) {
        self.pixels.mapv_inplace(|v| v.clamp(0.0, 1.0));
    }
}

/// Decode an 8/16-bit PNG or PPM (or anything else the `image` crate reads)
/// into `[0, 1]`.
pub fn read_image(path: &Path) -> Result<Array3<f32>> {
    let img = image::open(path).map_err(|source| Error::Image {
        path: path.to_owned(),
        source,
    })?;
    Ok(image_to_array(img))
}

fn image_to_array(img: DynamicImage) -> Array3<f32> {
    let (w, h) = (img.width() as usize, img.height() as usize);
    use image::ColorType::*;
    match img.color() {
        L16 | La16 | Rgb16 | Rgba16 => {
            let buf = img.to_rgb16();
            Array3::from_shape_fn((h, w, 3), |(y, x, c)| {
                buf.get_pixel(x as u32, y as u32)[c] as f32 / 65535.0
            })
        }
        Rgb32F | Rgba32F => {
            let buf = img.to_rgb32f();
            Array3::from_shape_fn((h, w, 3), |(y, x, c)| {
                buf.get_pixel(x as u32, y as u32)[c].clamp(0.0, 1.0)
            })
        }
        _ => {
            let buf = img.to_rgb8();
            Array3::from_shape_fn((h, w, 3), |(y, x, c)| {
                buf.get_pixel(x as u32, y as u32)[c] as f32 / 255.0
            })
        }
    }
}

/// Sample depth used when writing views.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum BitDepth {
    #[default]
    Eight,
    Sixteen,
}

/// Encode `[0, 1]` pixels, rounding half away from zero. The format follows
/// the extension (`.png`, `.ppm`, ...).
pub fn write_image(path: &Path, pixels: ArrayView3<'_, f32>, depth: BitDepth) -> Result<()> {
    let (h, w, _) = pixels.dim();
    let err = |source| Error::Image {
        path: path.to_owned(),
        source,
    };
    match depth {
        BitDepth::Eight => {
            let buf = ImageBuffer::from_fn(w as u32, h as u32, |x, y| {
                let q = |c: usize| (pixels[[y as usize, x as usize, c]].clamp(0.0, 1.0) * 255.0).round() as u8;
                Rgb([q(0), q(1), q(2)])
            });
            buf.save(path).map_err(err)
        }
        BitDepth::Sixteen => {
            let buf: ImageBuffer<Rgb<u16>, Vec<u16>> = ImageBuffer::from_fn(w as u32, h as u32, |x, y| {
                let q = |c: usize| (pixels[[y as usize, x as usize, c]].clamp(0.0, 1.0) * 65535.0).round() as u16;
                Rgb([q(0), q(1), q(2)])
            });
            buf.save(path).map_err(err)
        }
    }
}

/// Load every view listed in `manifest`.
pub fn load_lightfield(manifest: &DatasetManifest) -> Result<LightField> {
    if manifest.views.len() < 2 {
        return Err(Error::TooFewViews(manifest.views.len()));
    }
    let meta = manifest.disparity()?;
    let mut views = Vec::with_capacity(manifest.views.len());
    for path in &manifest.views {
        let img = read_image(path)?;
        let (h, w, _) = img.dim();
        if (w, h) != (manifest.width, manifest.height) {
            return Err(Error::DimensionMismatch {
                path: path.clone(),
                got_w: w,
                got_h: h,
                want_w: manifest.width,
                want_h: manifest.height,
            });
        }
        views.push(img);
    }
    LightField::new(views, meta)
}

/// Write every view as `<dir>/<stem>_NNN.<ext>` plus `<dir>/manifest.json`.
pub fn save_lightfield(
    lf: &LightField,
    dir: &Path,
    name: &str,
    ext: &str,
    depth: BitDepth,
) -> Result<DatasetManifest> {
    std::fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
    let digits = lf.num_views().to_string().len().max(3);
    let mut files = Vec::with_capacity(lf.num_views());
    for (v, view) in lf.views().iter().enumerate() {
        let file = PathBuf::from(format!("view_{v:0digits$}.{ext}"));
        write_image(&dir.join(&file), view.view(), depth)?;
        files.push(file);
    }
    let manifest = DatasetManifest {
        name: name.to_owned(),
        width: lf.width(),
        height: lf.height(),
        views: files,
        d_min: lf.meta().d_min,
        d_max: lf.meta().d_max,
        delta: None,
        n_dense: None,
    };
    manifest.save(&dir.join("manifest.json"))?;
    Ok(manifest)
}
