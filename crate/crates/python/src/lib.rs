//! Python bindings. Arrays cross the boundary as flat row-major lists plus a
//! shape, so the module has no numpy build dependency.

use std::path::PathBuf;

use ndarray::{Array2, Array3};
use pyo3::exceptions::{PyIOError, PyValueError};
use pyo3::prelude::*;
use pyo3::types::PyDict;

use epishear::lightfield::{DisparityMeta, Epi, LightField, RowRole};
use epishear::restore::{reconstruct_lightfield, Method, ReconstructOptions, SystemCache};
use epishear::shearlet::CoefficientStack;
use epishear::st::SolverConfig;

fn py_err(e: epishear::Error) -> PyErr {
    match e {
        epishear::Error::Io { .. } | epishear::Error::Image { .. } => PyIOError::new_err(e.to_string()),
        _ => PyValueError::new_err(e.to_string()),
    }
}

fn array2(data: Vec<f64>, height: usize, width: usize) -> PyResult<Array2<f64>> {
    Array2::from_shape_vec((height, width), data).map_err(|e| PyValueError::new_err(e.to_string()))
}

fn array3(data: Vec<f32>, shape: (usize, usize, usize)) -> PyResult<Array3<f32>> {
    Array3::from_shape_vec(shape, data).map_err(|e| PyValueError::new_err(e.to_string()))
}

/// Shearlet system for one sampling interval and grid size.
#[pyclass(frozen)]
struct ShearletSystem(epishear::shearlet::ShearletSystem);

#[pymethods]
impl ShearletSystem {
    #[new]
    fn new(tau: usize, width: usize, height: usize) -> PyResult<Self> {
        epishear::shearlet::ShearletSystem::build(tau, width, height)
            .map(Self)
            .map_err(py_err)
    }

    #[getter]
    fn scales(&self) -> usize {
        self.0.scales()
    }

    #[getter]
    fn num_filters(&self) -> usize {
        self.0.num_filters()
    }

    #[getter]
    fn shape(&self) -> (usize, usize) {
        (self.0.height(), self.0.width())
    }

    fn frame_energy_deviation(&self) -> f64 {
        self.0.frame_energy_deviation()
    }

    /// `height * width` values in, `filters * height * width` out.
    fn analyze(&self, py: Python<'_>, data: Vec<f64>) -> PyResult<Vec<f64>> {
        let x = array2(data, self.0.height(), self.0.width())?;
        let stack = py.detach(|| self.0.analyze(x.view())).map_err(py_err)?;
        Ok(stack.data.into_raw_vec_and_offset().0)
    }

    fn synthesize(&self, py: Python<'_>, data: Vec<f64>) -> PyResult<Vec<f64>> {
        let shape = (self.0.num_filters(), self.0.height(), self.0.width());
        let stack = Array3::from_shape_vec(shape, data).map_err(|e| PyValueError::new_err(e.to_string()))?;
        let out = py
            .detach(|| self.0.synthesize(&CoefficientStack::new(stack)))
            .map_err(py_err)?;
        Ok(out.into_raw_vec_and_offset().0)
    }

    fn __repr__(&self) -> String {
        format!(
            "ShearletSystem(tau={}, width={}, height={}, filters={})",
            self.0.tau(),
            self.0.width(),
            self.0.height(),
            self.0.num_filters()
        )
    }
}

/// Residual network weights in the LFW1 layout.
#[pyclass(frozen)]
struct NetworkWeights(epishear::network::NetworkWeights);

#[pymethods]
impl NetworkWeights {
    #[staticmethod]
    #[pyo3(signature = (channels = 68))]
    fn zeros(channels: usize) -> PyResult<Self> {
        let cfg = epishear::network::NetworkConfig::for_channels(channels);
        epishear::network::NetworkWeights::zeros(cfg).map(Self).map_err(py_err)
    }

    #[staticmethod]
    #[pyo3(signature = (seed, channels = 68))]
    fn random(seed: u64, channels: usize) -> PyResult<Self> {
        let cfg = epishear::network::NetworkConfig::for_channels(channels);
        epishear::network::NetworkWeights::random(cfg, seed).map(Self).map_err(py_err)
    }

    #[staticmethod]
    fn load(path: PathBuf) -> PyResult<Self> {
        epishear::lfw::load_weights(&path).map(Self).map_err(py_err)
    }

    fn save(&self, path: PathBuf) -> PyResult<()> {
        epishear::lfw::save_weights(&self.0, &path).map_err(py_err)
    }

    fn to_bytes(&self) -> Vec<u8> {
        epishear::lfw::to_bytes(&self.0)
    }

    #[staticmethod]
    fn from_bytes(data: Vec<u8>) -> PyResult<Self> {
        epishear::lfw::from_bytes(&data).map(Self).map_err(py_err)
    }

    #[getter]
    fn param_count(&self) -> usize {
        self.0.config().param_count()
    }

    /// `(name, shape)` in container order.
    fn tensors(&self) -> Vec<(String, Vec<usize>)> {
        self.0.tensors().iter().map(|t| (t.name.clone(), t.shape.clone())).collect()
    }

    /// Residual for a `(channels, height, width)` stack given flat.
    fn forward(&self, py: Python<'_>, data: Vec<f32>, height: usize, width: usize) -> PyResult<Vec<f32>> {
        let x = array3(data, (self.0.config().in_channels, height, width))?;
        let out = py.detach(|| self.0.prepare::<f32>().forward(x.view())).map_err(py_err)?;
        Ok(out.into_raw_vec_and_offset().0)
    }
}

/// Reconstruct `(n - 1) tau + 1` views from `n` views of shape `(height, width, 3)`.
///
/// `method` is `"st"` or `"cyclest"`; the latter needs `weights`. Returns the
/// dense views flattened and the per-EPI milliseconds.
#[pyfunction]
#[pyo3(signature = (views, height, width, d_min, d_max, method = "st", tau = 32, iterations = 50, weights = None))]
#[allow(clippy::too_many_arguments)]
fn reconstruct(
    py: Python<'_>,
    views: Vec<Vec<f32>>,
    height: usize,
    width: usize,
    d_min: f64,
    d_max: f64,
    method: &str,
    tau: usize,
    iterations: usize,
    weights: Option<&NetworkWeights>,
) -> PyResult<(Vec<Vec<f32>>, Vec<f64>)> {
    let views = views
        .into_iter()
        .map(|v| array3(v, (height, width, 3)))
        .collect::<PyResult<Vec<_>>>()?;
    let meta = DisparityMeta::new(d_min, d_max).map_err(py_err)?;
    let sslf = LightField::new(views, meta).map_err(py_err)?;
    let net = match (method, weights) {
        ("cyclest", Some(w)) => Some(w.0.prepare::<f32>()),
        ("cyclest", None) => return Err(PyValueError::new_err("method 'cyclest' needs weights")),
        ("st", _) => None,
        (other, _) => return Err(PyValueError::new_err(format!("unknown method {other:?}"))),
    };
    let m = match &net {
        Some(n) => Method::CycleSt(n),
        None => Method::St(SolverConfig::default().with_iterations(iterations)),
    };
    let rec = py
        .detach(|| reconstruct_lightfield(&sslf, m, ReconstructOptions::new(tau), &SystemCache::new()))
        .map_err(py_err)?;
    let out = rec
        .lightfield
        .into_views()
        .into_iter()
        .map(|v| v.into_raw_vec_and_offset().0)
        .collect();
    Ok((out, rec.epi_ms))
}

/// PSNR in dB of two equally shaped images given flat.
#[pyfunction]
fn psnr(a: Vec<f32>, b: Vec<f32>) -> PyResult<f64> {
    if a.len() != b.len() {
        return Err(PyValueError::new_err("images differ in size"));
    }
    let n = a.len();
    let (x, y) = (array3(a, (1, n, 1))?, array3(b, (1, n, 1))?);
    epishear::metrics::psnr(x.view(), y.view()).map_err(py_err)
}

/// Cycle loss between a 3-view and a 5-view dense prediction, each `(rows, width, 3)` flat.
#[pyfunction]
fn loss_cyc(pred3: Vec<f32>, pred5: Vec<f32>, width: usize, tau: usize) -> PyResult<f64> {
    let epi = |v: Vec<f32>| -> PyResult<Epi> {
        let rows = v.len() / (3 * width.max(1));
        Ok(Epi::new(array3(v, (rows, width, 3))?, RowRole::Dense))
    };
    epishear::metrics::loss_cyc(&epi(pred3)?, &epi(pred5)?, tau).map_err(py_err)
}

#[pyfunction]
#[pyo3(signature = (ls3, ls5, lcyc, lam = 2.0))]
fn loss_total(ls3: f64, ls5: f64, lcyc: f64, lam: f64) -> f64 {
    epishear::metrics::loss_total(ls3, ls5, lcyc, epishear::metrics::LossConfig { lambda: lam })
}

/// Render the reference scene: returns the sparse and dense views flattened.
#[pyfunction]
#[pyo3(signature = (views = 4, tau = 32, width = 64, height = 8))]
fn synth_reference(
    py: Python<'_>,
    views: usize,
    tau: usize,
    width: usize,
    height: usize,
) -> PyResult<Bound<'_, PyDict>> {
    let (sparse, dense) = py
        .detach(|| epishear::synth::make_eval_pair(&epishear::synth::SceneSpec::reference(), views, tau, width, height))
        .map_err(py_err)?;
    let flat = |lf: LightField| -> Vec<Vec<f32>> {
        lf.into_views().into_iter().map(|v| v.into_raw_vec_and_offset().0).collect()
    };
    let d = PyDict::new(py);
    d.set_item("d_min", sparse.meta().d_min)?;
    d.set_item("d_max", sparse.meta().d_max)?;
    d.set_item("sparse", flat(sparse))?;
    d.set_item("dense", flat(dense))?;
    Ok(d)
}

#[pyfunction]
fn num_shearlets(tau: usize) -> PyResult<(usize, usize)> {
    let xi = epishear::shearlet::scales_for_interval(tau).map_err(py_err)?;
    Ok((xi, epishear::shearlet::num_shearlets(xi).map_err(py_err)?))
}

#[pymodule]
fn pyepishear(m: &Bound<'_, PyModule>) -> PyResult<()> {
    m.add_class::<ShearletSystem>()?;
    m.add_class::<NetworkWeights>()?;
    m.add_function(wrap_pyfunction!(reconstruct, m)?)?;
    m.add_function(wrap_pyfunction!(psnr, m)?)?;
    m.add_function(wrap_pyfunction!(loss_cyc, m)?)?;
    m.add_function(wrap_pyfunction!(loss_total, m)?)?;
    m.add_function(wrap_pyfunction!(synth_reference, m)?)?;
    m.add_function(wrap_pyfunction!(num_shearlets, m)?)?;
    m.add("LFW_MAGIC", "LFW1")?;
    Ok(())
}
