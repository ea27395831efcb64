//! Sparse-to-dense light field reconstruction.
//!
//! Every image row is processed independently: extract the EPI, pad its
//! width by edge replication, pre-shear by `rho = d_min`, remap the rows at
//! interval `tau`, restore each colour channel, undo the shear on the top
//! `(n - 1) tau + 1` rows and crop the padding. Finally the input views are
//! written back at their grid positions.

use std::collections::HashMap;
use std::path::PathBuf;
use std::sync::{Arc, Mutex};
use std::time::Instant;

use ndarray::{Array2, Array3, ArrayView2};
use rayon::prelude::*;

use crate::epi::{crop_columns, pad_columns, postshear_cut, remap, shear};
use crate::error::{Error, Result};
use crate::lightfield::{DisparityMeta, Epi, LightField};
use crate::network::Network;
use crate::shearlet::ShearletSystem;
use crate::st::{st_reconstruct, KnownRows, SolverConfig};

/// Minimum number of grid rows.
pub const MIN_GRID_HEIGHT: usize = 256;
/// Edge-replicated columns added on each side before restoration.
pub const DEFAULT_MARGIN: usize = 16;
const WIDTH_QUANTUM: usize = 64;
const HEIGHT_QUANTUM: usize = 64;

/// Grid geometry for `views` input rows of `width` columns at interval `tau`.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct GridPlan {
    pub views: usize,
    pub tau: usize,
    pub width: usize,
    pub left: usize,
    pub grid_width: usize,
    pub grid_height: usize,
}

fn round_up(v: usize, q: usize) -> usize {
    v.div_ceil(q) * q
}

impl GridPlan {
    /// The grid is at least `MIN_GRID_HEIGHT` rows and leaves `tau` free rows
    /// below the dense block; both sides are multiples of 64.
    pub fn new(views: usize, tau: usize, width: usize, margin: usize) -> Result<Self> {
        if views < 2 {
            return Err(Error::TooFewViews(views));
        }
        if tau < 2 || width == 0 {
            return Err(Error::param(format!(
                "need tau >= 2 and a non-empty width, got tau={tau}, width={width}"
            )));
        }
        let dense = (views - 1) * tau + 1;
        let grid_width = round_up(width + 2 * margin, WIDTH_QUANTUM);
        Ok(Self {
            views,
            tau,
            width,
            left: (grid_width - width) / 2,
            grid_width,
            grid_height: round_up(dense + tau, HEIGHT_QUANTUM).max(MIN_GRID_HEIGHT),
        })
    }

    pub fn dense_rows(&self) -> usize {
        (self.views - 1) * self.tau + 1
    }

    pub fn known_rows(&self) -> KnownRows {
        KnownRows::remapped(self.views, self.tau, self.grid_height).expect("grid holds the dense rows")
    }

    /// Sparse EPI (`views x width`) to the remapped grid EPI.
    pub fn prepare(&self, epi: &Epi, rho: f64) -> Result<Epi> {
        if (epi.rows(), epi.width()) != (self.views, self.width) {
            return Err(Error::shape(format!(
                "EPI is {}x{}, plan expects {}x{}",
                epi.rows(),
                epi.width(),
                self.views,
                self.width
            )));
        }
        let padded = pad_columns(epi, self.left, self.grid_width)?;
        remap(&shear(&padded, rho, 0.0), self.tau, self.grid_height)
    }

    /// Restored grid EPI back to the dense EPI (`dense_rows x width`).
    pub fn finish(&self, grid: &Epi, rho: f64) -> Result<Epi> {
        let dense = postshear_cut(grid, rho, self.tau, self.views)?;
        crop_columns(&dense, self.left, self.width)
    }
}

/// Shearlet systems shared across EPIs and calls, keyed by `(tau, width, height)`.
#[derive(Debug, Default)]
pub struct SystemCache {
    systems: Mutex<HashMap<(usize, usize, usize), Arc<ShearletSystem>>>,
    dir: Option<PathBuf>,
}

impl SystemCache {
    pub fn new() -> Self {
        Self::default()
    }

    /// Also persist systems as `SHS1` files under `dir`.
    pub fn with_dir(dir: PathBuf) -> Self {
        Self {
            systems: Mutex::default(),
            dir: Some(dir),
        }
    }

    pub fn file_name(tau: usize, width: usize, height: usize) -> String {
        format!("shearlet_t{tau}_{width}x{height}.shs")
    }

    pub fn get(&self, tau: usize, width: usize, height: usize) -> Result<Arc<ShearletSystem>> {
        let key = (tau, width, height);
        if let Some(sys) = self.systems.lock().expect("cache lock").get(&key) {
            return Ok(Arc::clone(sys));
        }
        let path = self.dir.as_ref().map(|d| d.join(Self::file_name(tau, width, height)));
        let system = match &path {
            Some(p) if p.exists() => ShearletSystem::load(p)?,
            _ => {
                let sys = ShearletSystem::build(tau, width, height)?;
                if let Some(p) = &path {
                    std::fs::create_dir_all(p.parent().expect("file in dir"))
                        .map_err(|e| Error::io(p, e))?;
                    sys.save(p)?;
                }
                sys
            }
        };
        if (system.tau(), system.width(), system.height()) != key {
            return Err(Error::Format(format!(
                "cached system {:?} does not match requested {key:?}",
                (system.tau(), system.width(), system.height())
            )));
        }
        let system = Arc::new(system);
        self.systems
            .lock()
            .expect("cache lock")
            .insert(key, Arc::clone(&system));
        Ok(system)
    }
}

/// `SH*(SH(x) + R(SH(x)))` clamped to `[0, 1]`; the network runs in `f32`.
pub fn restore_epi(system: &ShearletSystem, net: &Network<f32>, channel: ArrayView2<'_, f64>) -> Result<Array2<f64>> {
    let coeffs = system.analyze(channel)?;
    let stack: Array3<f32> = coeffs.data.mapv(|v| v as f32);
    let residual = net.forward(stack.view())?;
    let sum = (stack + residual).mapv(f64::from);
    let mut out = system.synthesize(&crate::shearlet::CoefficientStack::new(sum))?;
    out.mapv_inplace(|v| v.clamp(0.0, 1.0));
    Ok(out)
}

#[derive(Clone, Copy)]
pub enum Method<'a> {
    St(SolverConfig),
    CycleSt(&'a Network<f32>),
}

impl Method<'_> {
    pub fn name(&self) -> &'static str {
        match self {
            Method::St(_) => "st",
            Method::CycleSt(_) => "cyclest",
        }
    }

    fn restore_channel(
        &self,
        system: &ShearletSystem,
        known: &KnownRows,
        channel: ArrayView2<'_, f64>,
    ) -> Result<Array2<f64>> {
        match self {
            Method::St(cfg) => st_reconstruct(system, channel, known, cfg),
            Method::CycleSt(net) => restore_epi(system, net, channel),
        }
    }
}

/// Restore one sparse EPI to its dense counterpart.
pub fn restore_sparse_epi(
    plan: &GridPlan,
    system: &ShearletSystem,
    method: Method<'_>,
    epi: &Epi,
    rho: f64,
) -> Result<Epi> {
    let mut grid = plan.prepare(epi, rho)?;
    let known = plan.known_rows();
    for c in 0..3 {
        let restored = method.restore_channel(system, &known, grid.channel(c).view())?;
        grid.set_channel(c, restored.view());
    }
    plan.finish(&grid, rho)
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ReconstructOptions {
    pub tau: usize,
    pub margin: usize,
}

impl ReconstructOptions {
    pub fn new(tau: usize) -> Self {
        Self {
            tau,
            margin: DEFAULT_MARGIN,
        }
    }
}

#[derive(Debug, Clone)]
pub struct Reconstruction {
    pub lightfield: LightField,
    /// Wall time per EPI, in image-row order.
    pub epi_ms: Vec<f64>,
}

/// Reconstruct `(n - 1) tau + 1` views from `n`. Rows run in parallel on the
/// current rayon pool.
pub fn reconstruct_lightfield(
    sslf: &LightField,
    method: Method<'_>,
    opts: ReconstructOptions,
    cache: &SystemCache,
) -> Result<Reconstruction> {
    let meta = sslf.meta();
    let tau = opts.tau;
    if meta.range() > tau as f64 {
        return Err(Error::DisparityRange {
            range: meta.range(),
            tau,
        });
    }
    let plan = GridPlan::new(sslf.num_views(), tau, sslf.width(), opts.margin)?;
    if let Method::CycleSt(net) = method {
        let d = net.config().divisor();
        if plan.grid_width % d != 0 || plan.grid_height % d != 0 {
            return Err(Error::shape(format!("grid is not divisible by {d}")));
        }
    }
    let system = cache.get(tau, plan.grid_width, plan.grid_height)?;
    let rho = meta.d_min;

    let rows: Vec<(Epi, f64)> = (0..sslf.height())
        .into_par_iter()
        .map(|row| {
            let start = Instant::now();
            let epi = sslf.extract_epi(row)?;
            let dense = restore_sparse_epi(&plan, &system, method, &epi, rho)?;
            Ok((dense, start.elapsed().as_secs_f64() * 1e3))
        })
        .collect::<Result<_>>()?;
    let (epis, epi_ms): (Vec<Epi>, Vec<f64>) = rows.into_iter().unzip();

    let dense_meta = DisparityMeta::new(meta.d_min / tau as f64, meta.d_max / tau as f64)?;
    let mut lightfield = LightField::from_epis(&epis, dense_meta)?;
    for k in 0..sslf.num_views() {
        lightfield.set_view(k * tau, sslf.view(k))?;
    }
    Ok(Reconstruction { lightfield, epi_ms })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::network::{NetworkConfig, NetworkWeights};

    #[test]
    fn plan_geometry() {
        let p = GridPlan::new(4, 32, 512, 16).unwrap();
        assert_eq!((p.grid_width, p.grid_height, p.left), (576, 256, 32));
        assert_eq!(p.dense_rows(), 97);
        let p = GridPlan::new(7, 32, 960, 16).unwrap();
        assert_eq!((p.grid_width, p.grid_height), (1024, 256));
        let p = GridPlan::new(9, 32, 100, 0).unwrap();
        assert_eq!((p.grid_width, p.grid_height, p.left), (128, 320, 14));
        assert!(GridPlan::new(1, 32, 100, 0).is_err());
    }

    #[test]
    fn prepare_finish_round_trip_on_grid_rows() {
        let plan = GridPlan::new(3, 4, 40, 8).unwrap();
        let epi = Epi::new(
            Array3::from_shape_fn((3, 40, 3), |(v, x, c)| ((v * 7 + x * 3 + c) % 10) as f32 / 10.0),
            crate::lightfield::RowRole::Sparse,
        );
        let grid = plan.prepare(&epi, 2.0).unwrap();
        let back = plan.finish(&grid, 2.0).unwrap();
        assert_eq!(back.rows(), 9);
        // grid rows come back exactly where the shear does not reach the fill
        for k in 0..3 {
            for x in 0..40 {
                assert_eq!(back.pixels[[4 * k, x, 1]], epi.pixels[[k, x, 1]], "row {k} col {x}");
            }
        }
    }

    #[test]
    fn cache_reuses_systems() {
        let cache = SystemCache::new();
        let a = cache.get(4, 64, 64).unwrap();
        let b = cache.get(4, 64, 64).unwrap();
        assert!(Arc::ptr_eq(&a, &b));
        let dir = tempfile::tempdir().unwrap();
        let disk = SystemCache::with_dir(dir.path().to_path_buf());
        let c = disk.get(4, 64, 64).unwrap();
        assert!(dir.path().join(SystemCache::file_name(4, 64, 64)).exists());
        let again = SystemCache::with_dir(dir.path().to_path_buf()).get(4, 64, 64).unwrap();
        assert_eq!(c.filter(3), again.filter(3));
    }

    #[test]
    fn disparity_range_checked() {
        let views = vec![Array3::<f32>::zeros((2, 8, 3)); 3];
        let lf = LightField::new(views, DisparityMeta::new(0.0, 40.0).unwrap()).unwrap();
        let net = NetworkWeights::zeros(NetworkConfig::for_channels(68)).unwrap().prepare();
        let err = reconstruct_lightfield(&lf, Method::CycleSt(&net), ReconstructOptions::new(32), &SystemCache::new());
        assert!(matches!(err, Err(Error::DisparityRange { .. })));
    }
}
