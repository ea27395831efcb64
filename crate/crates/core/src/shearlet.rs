//! Frequency-domain shearlet frame tailored to EPIs whose lines have slopes
//! in `[0, 1]` pixel per row.
//!
//! The system has one low-pass filter and, at scale `j = 1..=scales`,
//! `2^j + 1` directional filters centred on the slopes `k / 2^j`. Radial
//! bands and angular wedges are both built from Meyer-type windows whose
//! squares form partitions of unity, so the squared magnitudes of all
//! filters sum to one at every DFT bin (a Parseval frame). Directions outside
//! the slope range `[0, 1]` are absorbed by the two boundary wedges of each
//! scale so that every bin is covered.
//!
//! Filters are real and even, so every spatial impulse response is real and
//! two coefficient slabs can share one complex FFT.

use std::f64::consts::{FRAC_PI_2, PI};
use std::io::{Read, Write};
use std::path::Path;

use ndarray::{Array2, Array3, ArrayView2};
use num_complex::Complex64;

use crate::error::{Error, Result};
use crate::fft::{bin_frequency, Fft2d, FftWorkspace};

const MIN_GRID: usize = 32;
const CACHE_MAGIC: &[u8; 4] = b"SHS1";

/// Number of shearlets `2^(scales+1) + scales - 1` in a system with `scales` scales.
pub fn num_shearlets(scales: usize) -> Result<usize> {
    if scales < 1 {
        return Err(Error::param("a shearlet system needs at least one scale"));
    }
    if scales > 16 {
        return Err(Error::param(format!("{scales} scales is unreasonably many")));
    }
    Ok((1usize << (scales + 1)) + scales - 1)
}

/// Scale count `ceil(log2(tau))` for a sampling interval.
pub fn scales_for_interval(tau: usize) -> Result<usize> {
    if tau < 2 {
        return Err(Error::param(format!(
            "sampling interval must be at least 2, got {tau}"
        )));
    }
    Ok((usize::BITS - (tau - 1).leading_zeros()) as usize)
}

/// Where a filter sits in the frequency tiling.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct FilterInfo {
    /// 0 for the low-pass filter, `1..=scales` for directional filters.
    pub scale: usize,
    /// Shear index `k` in `0..=2^scale` (0 for the low-pass filter).
    pub shear: usize,
}

impl FilterInfo {
    /// Centre slope of the wedge in pixels per row, `None` for the low-pass.
    pub fn slope(&self) -> Option<f64> {
        (self.scale > 0).then(|| self.shear as f64 / (1u64 << self.scale) as f64)
    }
}

/// Shearlet coefficients of one channel: `(filters, height, width)`.
#[derive(Debug, Clone, PartialEq)]
pub struct CoefficientStack<T = f64> {
    pub data: Array3<T>,
}

impl<T: Copy> CoefficientStack<T> {
    pub fn new(data: Array3<T>) -> Self {
        Self { data }
    }

    pub fn filters(&self) -> usize {
        self.data.dim().0
    }

    pub fn height(&self) -> usize {
        self.data.dim().1
    }

    pub fn width(&self) -> usize {
        self.data.dim().2
    }

    pub fn map<U: Copy>(&self, f: impl Fn(T) -> U) -> CoefficientStack<U> {
        CoefficientStack {
            data: self.data.mapv(f),
        }
    }
}

/// Immutable shearlet frame on a `width x height` DFT grid.
pub struct ShearletSystem {
    scales: usize,
    tau: usize,
    width: usize,
    height: usize,
    info: Vec<FilterInfo>,
    /// Filter pairs `psi[2p] + i psi[2p+1]` in transposed spectral order.
    pairs: Vec<Vec<Complex64>>,
    cone: Vec<f64>,
    fft: Fft2d,
}

impl std::fmt::Debug for ShearletSystem {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.debug_struct("ShearletSystem")
            .field("scales", &self.scales)
            .field("tau", &self.tau)
            .field("width", &self.width)
            .field("height", &self.height)
            .field("filters", &self.info.len())
            .finish()
    }
}

impl ShearletSystem {
    /// Build the system tailored to sampling interval `tau` on a `width x height` grid.
    pub fn build(tau: usize, width: usize, height: usize) -> Result<Self> {
        let scales = scales_for_interval(tau)?;
        if width < MIN_GRID || height < MIN_GRID {
            return Err(Error::param(format!(
                "degenerate grid {width}x{height}, both sides must be at least {MIN_GRID}"
            )));
        }
        let info = filter_layout(scales);
        let filters = construct_filters(scales, width, height, &info);
        Ok(Self::from_filters(scales, tau, width, height, info, filters))
    }

    fn from_filters(
        scales: usize,
        tau: usize,
        width: usize,
        height: usize,
        info: Vec<FilterInfo>,
        filters: Vec<Vec<f64>>,
    ) -> Self {
        let pairs = filters
            .chunks(2)
            .map(|chunk| match chunk {
                [a, b] => a
                    .iter()
                    .zip(b)
                    .map(|(&re, &im)| Complex64::new(re, im))
                    .collect(),
                [a] => a.iter().map(|&re| Complex64::new(re, 0.0)).collect(),
                _ => unreachable!(),
            })
            .collect();
        Self {
            scales,
            tau,
            width,
            height,
            info,
            pairs,
            cone: cone_weights(scales, width, height),
            fft: Fft2d::new(width, height),
        }
    }

    pub fn scales(&self) -> usize {
        self.scales
    }

    pub fn tau(&self) -> usize {
        self.tau
    }

    pub fn width(&self) -> usize {
        self.width
    }

    pub fn height(&self) -> usize {
        self.height
    }

    pub fn num_filters(&self) -> usize {
        self.info.len()
    }

    pub fn filter_info(&self) -> &[FilterInfo] {
        &self.info
    }

    /// Filter count per scale, low-pass first.
    pub fn scale_counts(&self) -> Vec<usize> {
        let mut counts = vec![0; self.scales + 1];
        for f in &self.info {
            counts[f.scale] += 1;
        }
        counts
    }

    fn spectral(&self, k: usize, idx: usize) -> f64 {
        let c = self.pairs[k / 2][idx];
        if k.is_multiple_of(2) {
            c.re
        } else {
            c.im
        }
    }

    /// Frequency response of filter `k` as a `height x width` array in natural
    /// DFT order (row = vertical frequency bin, column = horizontal bin).
    pub fn filter(&self, k: usize) -> Array2<f64> {
        assert!(k < self.num_filters(), "filter index out of range");
        let h = self.height;
        Array2::from_shape_fn((h, self.width), |(kv, kx)| self.spectral(k, kx * h + kv))
    }

    /// Largest deviation of the pointwise filter energy `sum_k |psi_k|^2` from one.
    pub fn frame_energy_deviation(&self) -> f64 {
        let n = self.width * self.height;
        (0..n)
            .map(|idx| {
                let e: f64 = self
                    .pairs
                    .iter()
                    .map(|p| p[idx].re * p[idx].re + p[idx].im * p[idx].im)
                    .sum();
                (e - 1.0).abs()
            })
            .fold(0.0, f64::max)
    }

    fn check_grid(&self, h: usize, w: usize) -> Result<()> {
        if (h, w) != (self.height, self.width) {
            return Err(Error::shape(format!(
                "image is {w}x{h}, system grid is {}x{}",
                self.width, self.height
            )));
        }
        Ok(())
    }

    pub fn workspace(&self) -> TransformWorkspace {
        let n = self.width * self.height;
        TransformWorkspace {
            fft: self.fft.workspace(),
            spectrum: vec![Complex64::default(); n],
            tmp: vec![Complex64::default(); n],
        }
    }

    /// Analysis transform of one real channel.
    pub fn analyze(&self, channel: ArrayView2<'_, f64>) -> Result<CoefficientStack> {
        let (h, w) = channel.dim();
        self.check_grid(h, w)?;
        let input: Vec<f64> = channel.iter().copied().collect();
        let mut out = vec![0.0; self.num_filters() * h * w];
        self.analyze_into(&input, &mut out, &mut self.workspace());
        let data = Array3::from_shape_vec((self.num_filters(), h, w), out)
            .expect("analysis output has the stack shape");
        Ok(CoefficientStack::new(data))
    }

    /// Synthesis transform back to one real channel.
    pub fn synthesize(&self, stack: &CoefficientStack) -> Result<Array2<f64>> {
        let (f, h, w) = stack.data.dim();
        if f != self.num_filters() {
            return Err(Error::shape(format!(
                "stack has {f} slabs, system has {} filters",
                self.num_filters()
            )));
        }
        self.check_grid(h, w)?;
        let mut out = vec![0.0; h * w];
        match stack.data.as_slice() {
            Some(s) => self.synthesize_into(s, &mut out, &mut self.workspace()),
            None => {
                let owned: Vec<f64> = stack.data.iter().copied().collect();
                self.synthesize_into(&owned, &mut out, &mut self.workspace())
            }
        }
        Ok(Array2::from_shape_vec((h, w), out).expect("synthesis output has the grid shape"))
    }

    /// Slice-level analysis: `input` is row-major `height x width`, `out`
    /// receives `filters x height x width`.
    pub fn analyze_into(&self, input: &[f64], out: &mut [f64], ws: &mut TransformWorkspace) {
        self.load_spectrum(input, ws);
        self.filter_spectrum(out, ws);
    }

    /// Analysis of the cone projection of `input`: the spectrum is weighted by
    /// [`Self::cone_weight`] before filtering.
    pub fn analyze_cone_into(&self, input: &[f64], out: &mut [f64], ws: &mut TransformWorkspace) {
        self.load_spectrum(input, ws);
        for (s, &c) in ws.spectrum.iter_mut().zip(&self.cone) {
            *s *= c;
        }
        self.filter_spectrum(out, ws);
    }

    /// Spectral weight that keeps the low-pass band and directions with
    /// slopes in `[0, 1]`, rolling off smoothly outside, in natural DFT order.
    pub fn cone_weight(&self) -> Array2<f64> {
        let h = self.height;
        Array2::from_shape_fn((h, self.width), |(kv, kx)| self.cone[kx * h + kv])
    }

    fn load_spectrum(&self, input: &[f64], ws: &mut TransformWorkspace) {
        assert_eq!(input.len(), self.width * self.height);
        for (s, &x) in ws.spectrum.iter_mut().zip(input) {
            *s = Complex64::new(x, 0.0);
        }
        self.fft.forward(&mut ws.spectrum, &mut ws.fft);
    }

    fn filter_spectrum(&self, out: &mut [f64], ws: &mut TransformWorkspace) {
        let n = self.width * self.height;
        assert_eq!(out.len(), n * self.num_filters());
        let scale = 1.0 / n as f64;
        for (p, pair) in self.pairs.iter().enumerate() {
            for ((t, &s), &f) in ws.tmp.iter_mut().zip(&ws.spectrum).zip(pair) {
                *t = s * f;
            }
            self.fft.inverse(&mut ws.tmp, &mut ws.fft);
            let (first, rest) = out[2 * p * n..].split_at_mut(n);
            for (o, t) in first.iter_mut().zip(&ws.tmp) {
                *o = t.re * scale;
            }
            if 2 * p + 1 < self.num_filters() {
                for (o, t) in rest[..n].iter_mut().zip(&ws.tmp) {
                    *o = t.im * scale;
                }
            }
        }
    }

    /// Slice-level synthesis, the inverse layout of [`Self::analyze_into`].
    pub fn synthesize_into(&self, stack: &[f64], out: &mut [f64], ws: &mut TransformWorkspace) {
        let n = self.width * self.height;
        assert_eq!(stack.len(), n * self.num_filters());
        assert_eq!(out.len(), n);
        ws.spectrum.fill(Complex64::default());
        for (p, pair) in self.pairs.iter().enumerate() {
            let a = &stack[2 * p * n..(2 * p + 1) * n];
            if 2 * p + 1 < self.num_filters() {
                let b = &stack[(2 * p + 1) * n..(2 * p + 2) * n];
                for ((t, &re), &im) in ws.tmp.iter_mut().zip(a).zip(b) {
                    *t = Complex64::new(re, im);
                }
            } else {
                for (t, &re) in ws.tmp.iter_mut().zip(a) {
                    *t = Complex64::new(re, 0.0);
                }
            }
            self.fft.forward(&mut ws.tmp, &mut ws.fft);
            // Re IFFT( (psi_a - i psi_b) FFT(a + i b) ) = IFFT(psi_a A + psi_b B)
            for ((acc, &t), &f) in ws.spectrum.iter_mut().zip(&ws.tmp).zip(pair) {
                *acc += f.conj() * t;
            }
        }
        self.fft.inverse(&mut ws.spectrum, &mut ws.fft);
        let scale = 1.0 / n as f64;
        for (o, s) in out.iter_mut().zip(&ws.spectrum) {
            *o = s.re * scale;
        }
    }

    /// Write the system in the `SHS1` cache format.
    pub fn write_cache(&self, mut w: impl Write) -> std::io::Result<()> {
        w.write_all(CACHE_MAGIC)?;
        for v in [self.scales, self.tau, self.width, self.height, self.num_filters()] {
            w.write_all(&(v as u32).to_le_bytes())?;
        }
        let mut row = Vec::with_capacity(self.width * 16);
        for k in 0..self.num_filters() {
            for kv in 0..self.height {
                row.clear();
                for kx in 0..self.width {
                    let re = self.spectral(k, kx * self.height + kv);
                    row.extend_from_slice(&re.to_le_bytes());
                    row.extend_from_slice(&0f64.to_le_bytes());
                }
                w.write_all(&row)?;
            }
        }
        Ok(())
    }

    /// Read a system previously written by [`Self::write_cache`].
    pub fn read_cache(mut r: impl Read) -> Result<Self> {
        let bad = |m: &str| Error::Format(format!("shearlet cache: {m}"));
        let mut magic = [0u8; 4];
        r.read_exact(&mut magic).map_err(|_| bad("truncated header"))?;
        if &magic != CACHE_MAGIC {
            return Err(bad("bad magic"));
        }
        let mut fields = [0usize; 5];
        for f in fields.iter_mut() {
            let mut b = [0u8; 4];
            r.read_exact(&mut b).map_err(|_| bad("truncated header"))?;
            *f = u32::from_le_bytes(b) as usize;
        }
        let [scales, tau, width, height, count] = fields;
        if count != num_shearlets(scales)? || scales != scales_for_interval(tau)? {
            return Err(bad("inconsistent scale/filter counts"));
        }
        if width < MIN_GRID || height < MIN_GRID {
            return Err(bad("degenerate grid"));
        }
        let n = width * height;
        let mut filters = vec![vec![0.0; n]; count];
        let mut row = vec![0u8; width * 16];
        for filter in filters.iter_mut() {
            for kv in 0..height {
                r.read_exact(&mut row).map_err(|_| bad("truncated filter data"))?;
                for kx in 0..width {
                    let at = kx * 16;
                    let re = f64::from_le_bytes(row[at..at + 8].try_into().unwrap());
                    let im = f64::from_le_bytes(row[at + 8..at + 16].try_into().unwrap());
                    if im != 0.0 || !re.is_finite() {
                        return Err(bad("filters must be real and finite"));
                    }
                    filter[kx * height + kv] = re;
                }
            }
        }
        Ok(Self::from_filters(
            scales,
            tau,
            width,
            height,
            filter_layout(scales),
            filters,
        ))
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        let file = std::fs::File::create(path).map_err(|e| Error::io(path, e))?;
        let mut w = std::io::BufWriter::new(file);
        self.write_cache(&mut w)
            .and_then(|_| w.flush())
            .map_err(|e| Error::io(path, e))
    }

    pub fn load(path: &Path) -> Result<Self> {
        let file = std::fs::File::open(path).map_err(|e| Error::io(path, e))?;
        Self::read_cache(std::io::BufReader::new(file))
    }
}

/// Reusable buffers for [`ShearletSystem::analyze_into`] / [`ShearletSystem::synthesize_into`].
pub struct TransformWorkspace {
    fft: FftWorkspace,
    spectrum: Vec<Complex64>,
    tmp: Vec<Complex64>,
}

fn filter_layout(scales: usize) -> Vec<FilterInfo> {
    let mut info = vec![FilterInfo { scale: 0, shear: 0 }];
    for j in 1..=scales {
        for k in 0..=(1usize << j) {
            info.push(FilterInfo { scale: j, shear: k });
        }
    }
    info
}

/// Meyer auxiliary function: smooth 0 -> 1 on [0, 1] with `nu(x) + nu(1-x) = 1`.
fn meyer_nu(x: f64) -> f64 {
    if x <= 0.0 {
        0.0
    } else if x >= 1.0 {
        1.0
    } else {
        x.powi(4) * (35.0 - 84.0 * x + 70.0 * x * x - 20.0 * x * x * x)
    }
}

/// Squared low-pass profile at dyadic level `level`: one below `c 2^level`, zero above twice that.
fn lowpass_sq(r: f64, level: usize, cutoff: f64) -> f64 {
    let c = cutoff * (1u64 << level) as f64;
    if r <= c {
        1.0
    } else if r >= 2.0 * c {
        0.0
    } else {
        (FRAC_PI_2 * meyer_nu((r - c) / c)).cos().powi(2)
    }
}

/// Angular partition of one scale. Wedge `k` is centred on slope `k / 2^j`;
/// the seam opposite the slope range splits the remaining directions between
/// the two boundary wedges.
struct AngularPartition {
    /// Cyclic boundaries in angle, starting with the seam. Boundary `i`
    /// separates cell `i - 1 (mod count)` from cell `i`.
    bounds: Vec<f64>,
    half_widths: Vec<f64>,
    seam: f64,
}

impl AngularPartition {
    fn new(scale: usize) -> Self {
        let shears = (1usize << scale) as f64;
        let seam = -3.0 * PI / 8.0;
        let mut bounds = vec![seam];
        bounds.extend((0..(1usize << scale)).map(|i| ((i as f64 + 0.5) / shears).atan()));
        let m = bounds.len();
        let gap = |i: usize| {
            // gap between boundary i and i+1 (cyclically, angles mod pi)
            let next = if i + 1 == m { seam + PI } else { bounds[i + 1] };
            next - bounds[i]
        };
        let half_widths = (0..m)
            .map(|i| 0.5 * gap(i).min(gap((i + m - 1) % m)))
            .collect();
        Self {
            bounds,
            half_widths,
            seam,
        }
    }

    fn cells(&self) -> usize {
        self.bounds.len()
    }

    /// Squared weights `(cell, weight)`; at most two cells are non-zero.
    fn weights(&self, theta: f64) -> [(usize, f64); 2] {
        let m = self.bounds.len();
        for (i, (&b, &h)) in self.bounds.iter().zip(&self.half_widths).enumerate() {
            let mut d = theta - b;
            if d > FRAC_PI_2 {
                d -= PI;
            } else if d <= -FRAC_PI_2 {
                d += PI;
            }
            if d.abs() < h {
                let s = (FRAC_PI_2 * meyer_nu((d + h) / (2.0 * h))).sin().powi(2);
                let lower = (i + m - 1) % m;
                return [(lower, 1.0 - s), (i, s)];
            }
        }
        let t = if theta >= self.seam { theta } else { theta + PI };
        let cell = self.bounds[1..].iter().filter(|&&b| b < t).count();
        [(cell, 1.0), (cell, 0.0)]
    }
}

/// Smooth in-cone weight: one on the low-pass support and for angles
/// `atan(s)`, `s` in `[0, 1]`; Meyer roll-off over `atan(2^-scales)` beyond
/// either edge; zero elsewhere.
fn cone_weights(scales: usize, width: usize, height: usize) -> Vec<f64> {
    let cutoff = 0.5f64.powi(scales as i32 + 1);
    let margin = 0.5f64.powi(scales as i32).atan();
    let lo = 0.0;
    let hi = FRAC_PI_2 / 2.0;
    let mut out = vec![0.0; width * height];
    for kx in 0..width {
        let x = 2.0 * bin_frequency(kx, width);
        for kv in 0..height {
            let v = 2.0 * bin_frequency(kv, height);
            let r = x.abs().max(v.abs());
            let low = lowpass_sq(r, 0, cutoff);
            let mut theta = (-v).atan2(x);
            if theta > FRAC_PI_2 {
                theta -= PI;
            } else if theta <= -FRAC_PI_2 {
                theta += PI;
            }
            let outside = (lo - theta).max(theta - hi).max(0.0);
            let angular = (FRAC_PI_2 * meyer_nu(outside / margin)).cos().powi(2);
            out[kx * height + kv] = low + (1.0 - low) * angular;
        }
    }
    // Nyquist lines of even axes: make the weight even like the filters.
    let mirror = |kx: usize, kv: usize| ((width - kx) % width) * height + (height - kv) % height;
    for kx in 0..width {
        for kv in 0..height {
            let i = kx * height + kv;
            let j = mirror(kx, kv);
            if j > i {
                let avg = 0.5 * (out[i] + out[j]);
                out[i] = avg;
                out[j] = avg;
            }
        }
    }
    out
}

fn construct_filters(
    scales: usize,
    width: usize,
    height: usize,
    info: &[FilterInfo],
) -> Vec<Vec<f64>> {
    let n = width * height;
    let count = info.len();
    let mut energy = vec![vec![0.0f64; n]; count];
    let partitions: Vec<AngularPartition> = (1..=scales).map(AngularPartition::new).collect();
    let offsets: Vec<usize> = {
        let mut o = vec![1];
        for j in 1..scales {
            o.push(o[j - 1] + (1 << j) + 1);
        }
        o
    };
    let cutoff = 0.5f64.powi(scales as i32 + 1);

    for kx in 0..width {
        let x = 2.0 * bin_frequency(kx, width);
        for kv in 0..height {
            let v = 2.0 * bin_frequency(kv, height);
            let idx = kx * height + kv;
            let r = x.abs().max(v.abs());
            let mut prev = lowpass_sq(r, 0, cutoff);
            energy[0][idx] = prev;
            if r == 0.0 {
                continue;
            }
            let mut theta = (-v).atan2(x);
            if theta > FRAC_PI_2 {
                theta -= PI;
            } else if theta <= -FRAC_PI_2 {
                theta += PI;
            }
            for j in 1..=scales {
                let cur = if j == scales {
                    1.0
                } else {
                    lowpass_sq(r, j, cutoff)
                };
                let band = (cur - prev).max(0.0);
                prev = cur;
                if band == 0.0 {
                    continue;
                }
                let part = &partitions[j - 1];
                debug_assert_eq!(part.cells(), (1 << j) + 1);
                for (cell, w) in part.weights(theta) {
                    if w > 0.0 {
                        energy[offsets[j - 1] + cell][idx] += band * w;
                    }
                }
            }
        }
    }

    // Even symmetry psi(-w) = psi(w) on the discrete grid. Only the Nyquist
    // lines of even-length axes are affected; averaging energies keeps the sum.
    let mirror = |kx: usize, kv: usize| ((width - kx) % width) * height + (height - kv) % height;
    for e in energy.iter_mut() {
        for kx in 0..width {
            for kv in 0..height {
                let i = kx * height + kv;
                let j = mirror(kx, kv);
                if j > i {
                    let avg = 0.5 * (e[i] + e[j]);
                    e[i] = avg;
                    e[j] = avg;
                }
            }
        }
    }

    let mut total = vec![0.0; n];
    for e in &energy {
        for (t, &v) in total.iter_mut().zip(e) {
            *t += v;
        }
    }
    for e in energy.iter_mut() {
        for (v, &t) in e.iter_mut().zip(&total) {
            *v = (*v / t).sqrt();
        }
    }
    energy
}
