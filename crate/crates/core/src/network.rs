//! Residual encoder-decoder operating on shearlet coefficient stacks.
//!
//! Encoder hierarchy `i` is `3x3 conv -> leaky ReLU -> 2x2 average pool`,
//! producing `a_i` (`a_0` is the input). Decoder hierarchy `k` is
//! `3x3 conv -> leaky ReLU -> 2x bilinear upsample`, producing `b_k`. The
//! first decoder reads `a_L`; decoder `k >= 2` reads `concat(b_{k-1}, a_{L-k+1})`
//! while `k - 1 <= skips`, and `b_{k-1}` alone otherwise. A final 1x1
//! convolution maps `b_L` back to the input channel count.
//!
//! Tensors are named `enc{i}.weight`, `enc{i}.bias`, `dec{k}.weight`,
//! `dec{k}.bias`, `head.weight`, `head.bias` (1-based), kernels shaped
//! `[out, in, kh, kw]`.

use ndarray::{s, Array2, Array3, ArrayView3, ArrayViewMut3, Axis, LinalgScalar};
use num_traits::Float;
use rand::{Rng, SeedableRng};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Upper bound on im2col tile elements; keeps the column buffer cache-friendly.
const TILE_ELEMS: usize = 1 << 20;
const MAX_WIDTH: usize = 1 << 16;
const MAX_HIERARCHIES: usize = 16;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct NetworkConfig {
    pub in_channels: usize,
    pub encoder: Vec<usize>,
    pub decoder: Vec<usize>,
    pub skips: usize,
    pub leaky_slope: f64,
}

impl Default for NetworkConfig {
    fn default() -> Self {
        Self::for_channels(68)
    }
}

impl NetworkConfig {
    /// Default four-hierarchy layout for `in_channels` coefficient slabs.
    pub fn for_channels(in_channels: usize) -> Self {
        Self {
            in_channels,
            encoder: vec![32, 64, 128, 224],
            decoder: vec![224, 128, 64, 32],
            skips: 3,
            leaky_slope: 0.2,
        }
    }

    pub fn hierarchies(&self) -> usize {
        self.encoder.len()
    }

    pub fn validate(&self) -> Result<()> {
        let l = self.encoder.len();
        if l == 0 || self.decoder.len() != l {
            return Err(Error::param(format!(
                "encoder and decoder need the same non-zero depth, got {} and {}",
                l,
                self.decoder.len()
            )));
        }
        let widths = || std::iter::once(&self.in_channels).chain(&self.encoder).chain(&self.decoder);
        if widths().any(|&w| w == 0 || w > MAX_WIDTH) {
            return Err(Error::param(format!("channel widths must lie in 1..={MAX_WIDTH}")));
        }
        if l > MAX_HIERARCHIES {
            return Err(Error::param(format!("at most {MAX_HIERARCHIES} hierarchies")));
        }
        if self.skips >= l {
            return Err(Error::param(format!(
                "{} skip connections need more than {l} hierarchies",
                self.skips
            )));
        }
        if !(self.leaky_slope.is_finite() && self.leaky_slope >= 0.0) {
            return Err(Error::param("leaky slope must be finite and non-negative"));
        }
        Ok(())
    }

    /// Spatial dimensions must be divisible by this.
    pub fn divisor(&self) -> usize {
        1 << self.encoder.len()
    }

    fn decoder_inputs(&self, k: usize) -> usize {
        let l = self.encoder.len();
        if k == 0 {
            self.encoder[l - 1]
        } else if k <= self.skips {
            self.decoder[k - 1] + self.encoder[l - 1 - k]
        } else {
            self.decoder[k - 1]
        }
    }

    /// Name and shape of every tensor, in container order.
    pub fn tensor_specs(&self) -> Vec<(String, Vec<usize>)> {
        let mut specs = Vec::new();
        let mut prev = self.in_channels;
        for (i, &out) in self.encoder.iter().enumerate() {
            specs.push((format!("enc{}.weight", i + 1), vec![out, prev, 3, 3]));
            specs.push((format!("enc{}.bias", i + 1), vec![out]));
            prev = out;
        }
        for (k, &out) in self.decoder.iter().enumerate() {
            specs.push((format!("dec{}.weight", k + 1), vec![out, self.decoder_inputs(k), 3, 3]));
            specs.push((format!("dec{}.bias", k + 1), vec![out]));
        }
        let last = *self.decoder.last().expect("validated depth");
        specs.push(("head.weight".into(), vec![self.in_channels, last, 1, 1]));
        specs.push(("head.bias".into(), vec![self.in_channels]));
        specs
    }

    pub fn param_count(&self) -> usize {
        self.tensor_specs()
            .iter()
            .map(|(_, shape)| shape.iter().product::<usize>())
            .sum()
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Tensor {
    pub name: String,
    pub shape: Vec<usize>,
    pub data: Vec<f32>,
}

impl Tensor {
    pub fn len(&self) -> usize {
        self.data.len()
    }

    pub fn is_empty(&self) -> bool {
        self.data.is_empty()
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct NetworkWeights {
    config: NetworkConfig,
    tensors: Vec<Tensor>,
}

impl NetworkWeights {
    /// Validate names, order, shapes and finiteness against `config`.
    pub fn new(config: NetworkConfig, tensors: Vec<Tensor>) -> Result<Self> {
        config.validate()?;
        let specs = config.tensor_specs();
        if specs.len() != tensors.len() {
            return Err(Error::shape(format!(
                "config expects {} tensors, got {}",
                specs.len(),
                tensors.len()
            )));
        }
        for ((name, shape), t) in specs.iter().zip(&tensors) {
            if &t.name != name || &t.shape != shape {
                return Err(Error::shape(format!(
                    "expected tensor {name} {shape:?}, got {} {:?}",
                    t.name, t.shape
                )));
            }
            if t.data.len() != shape.iter().product::<usize>() {
                return Err(Error::shape(format!(
                    "tensor {name} holds {} values for shape {shape:?}",
                    t.data.len()
                )));
            }
            if let Some(i) = t.data.iter().position(|v| !v.is_finite()) {
                return Err(Error::param(format!("tensor {name} has a non-finite value at {i}")));
            }
        }
        Ok(Self { config, tensors })
    }

    pub fn zeros(config: NetworkConfig) -> Result<Self> {
        Self::from_fn(config, |_, _| 0.0)
    }

    /// Seeded He-uniform kernels and small uniform biases.
    pub fn random(config: NetworkConfig, seed: u64) -> Result<Self> {
        let mut rng = rand::rngs::StdRng::seed_from_u64(seed);
        Self::from_fn(config, |name, shape| {
            let bound = if name.ends_with(".bias") {
                0.05
            } else {
                let fan_in: usize = shape[1..].iter().product();
                (6.0 / fan_in as f32).sqrt()
            };
            rng.random_range(-bound..=bound)
        })
    }

    fn from_fn(config: NetworkConfig, mut f: impl FnMut(&str, &[usize]) -> f32) -> Result<Self> {
        config.validate()?;
        let tensors = config
            .tensor_specs()
            .into_iter()
            .map(|(name, shape)| {
                let n = shape.iter().product();
                let data = (0..n).map(|_| f(&name, &shape)).collect();
                Tensor { name, shape, data }
            })
            .collect();
        Self::new(config, tensors)
    }

    pub fn config(&self) -> &NetworkConfig {
        &self.config
    }

    pub fn tensors(&self) -> &[Tensor] {
        &self.tensors
    }

    pub fn tensor(&self, name: &str) -> Option<&Tensor> {
        self.tensors.iter().find(|t| t.name == name)
    }

    pub fn into_parts(self) -> (NetworkConfig, Vec<Tensor>) {
        (self.config, self.tensors)
    }

    /// Weights converted once for repeated forward passes at precision `T`.
    pub fn prepare<T: Real>(&self) -> Network<T> {
        let layer = |i: usize| {
            let w = &self.tensors[2 * i];
            let b = &self.tensors[2 * i + 1];
            let cols = w.shape[1..].iter().product();
            Layer {
                weight: Array2::from_shape_fn((w.shape[0], cols), |(o, c)| T::of(w.data[o * cols + c])),
                bias: b.data.iter().map(|&v| T::of(v)).collect(),
            }
        };
        let l = self.config.hierarchies();
        Network {
            config: self.config.clone(),
            encoder: (0..l).map(layer).collect(),
            decoder: (l..2 * l).map(layer).collect(),
            head: layer(2 * l),
        }
    }

    /// Convenience wrapper around [`Network::forward`].
    pub fn forward<T: Real>(&self, stack: ArrayView3<'_, T>) -> Result<Array3<T>> {
        self.prepare::<T>().forward(stack)
    }
}

/// Floating-point types the forward pass runs in.
pub trait Real: Float + LinalgScalar + Send + Sync + std::fmt::Debug {
    fn of(v: f32) -> Self;
    fn of64(v: f64) -> Self;
}

impl Real for f32 {
    fn of(v: f32) -> Self {
        v
    }
    fn of64(v: f64) -> Self {
        v as f32
    }
}

impl Real for f64 {
    fn of(v: f32) -> Self {
        v as f64
    }
    fn of64(v: f64) -> Self {
        v
    }
}

#[derive(Debug, Clone)]
struct Layer<T> {
    /// `[out, in * kh * kw]`
    weight: Array2<T>,
    bias: Vec<T>,
}

/// Weights laid out for the forward pass.
#[derive(Debug, Clone)]
pub struct Network<T> {
    config: NetworkConfig,
    encoder: Vec<Layer<T>>,
    decoder: Vec<Layer<T>>,
    head: Layer<T>,
}

impl<T: Real> Network<T> {
    pub fn config(&self) -> &NetworkConfig {
        &self.config
    }

    /// Residual for a `(channels, height, width)` stack; same shape as the input.
    pub fn forward(&self, stack: ArrayView3<'_, T>) -> Result<Array3<T>> {
        let (c, h, w) = stack.dim();
        if c != self.config.in_channels {
            return Err(Error::shape(format!(
                "stack has {c} channels, network expects {}",
                self.config.in_channels
            )));
        }
        let d = self.config.divisor();
        if h % d != 0 || w % d != 0 || h == 0 || w == 0 {
            return Err(Error::shape(format!(
                "stack is {w}x{h}, both sides must be positive multiples of {d}"
            )));
        }
        let slope = T::of64(self.config.leaky_slope);
        let l = self.config.hierarchies();

        let mut skips: Vec<Array3<T>> = Vec::with_capacity(l);
        let mut x = stack.as_standard_layout().into_owned();
        for layer in &self.encoder {
            let y = conv3x3(x.view(), layer, Some(slope));
            x = avg_pool2(y.view());
            skips.push(x.clone());
        }
        let mut x = skips.pop().expect("at least one hierarchy");
        for (k, layer) in self.decoder.iter().enumerate() {
            if k > 0 && k <= self.config.skips {
                let skip = skips.pop().expect("skip count validated");
                x = ndarray::concatenate(Axis(0), &[x.view(), skip.view()])
                    .expect("skip and decoder maps share a size");
            }
            let y = conv3x3(x.view(), layer, Some(slope));
            x = upsample2(y.view());
        }
        Ok(conv1x1(x.view(), &self.head))
    }
}

fn activate<T: Real>(mut out: ArrayViewMut3<'_, T>, bias: &[T], slope: Option<T>) {
    for (mut plane, &b) in out.outer_iter_mut().zip(bias) {
        plane.mapv_inplace(|v| {
            let v = v + b;
            match slope {
                Some(s) if v < T::zero() => v * s,
                _ => v,
            }
        });
    }
}

/// 3x3 convolution, stride 1, zero padding 1, via row-tiled im2col and GEMM.
fn conv3x3<T: Real>(input: ArrayView3<'_, T>, layer: &Layer<T>, slope: Option<T>) -> Array3<T> {
    let (c, h, w) = input.dim();
    let out_c = layer.weight.nrows();
    debug_assert_eq!(layer.weight.ncols(), c * 9);
    let input = input.as_standard_layout();
    let src = input.as_slice().expect("standard layout");
    let mut out = Array3::<T>::zeros((out_c, h, w));

    let tile_rows = (TILE_ELEMS / (c * 9 * w)).clamp(1, h);
    let mut col = Array2::<T>::zeros((c * 9, tile_rows * w));
    for r0 in (0..h).step_by(tile_rows) {
        let rows = tile_rows.min(h - r0);
        let n = rows * w;
        {
            let col_data = col.as_slice_mut().expect("contiguous");
            let stride = tile_rows * w;
            for ci in 0..c {
                let plane = &src[ci * h * w..(ci + 1) * h * w];
                for ky in 0..3 {
                    for kx in 0..3 {
                        let row = &mut col_data[(ci * 9 + ky * 3 + kx) * stride..][..n];
                        for r in 0..rows {
                            let dst = &mut row[r * w..(r + 1) * w];
                            let sy = (r0 + r + ky) as isize - 1;
                            if sy < 0 || sy >= h as isize {
                                dst.fill(T::zero());
                                continue;
                            }
                            let line = &plane[sy as usize * w..(sy as usize + 1) * w];
                            match kx {
                                0 => {
                                    dst[0] = T::zero();
                                    dst[1..].copy_from_slice(&line[..w - 1]);
                                }
                                1 => dst.copy_from_slice(line),
                                _ => {
                                    dst[..w - 1].copy_from_slice(&line[1..]);
                                    dst[w - 1] = T::zero();
                                }
                            }
                        }
                    }
                }
            }
        }
        let prod = layer.weight.dot(&col.slice(s![.., ..n]));
        let prod = prod.into_shape_with_order((out_c, rows, w)).expect("tile shape");
        out.slice_mut(s![.., r0..r0 + rows, ..]).assign(&prod);
    }
    activate(out.view_mut(), &layer.bias, slope);
    out
}

fn conv1x1<T: Real>(input: ArrayView3<'_, T>, layer: &Layer<T>) -> Array3<T> {
    let (c, h, w) = input.dim();
    let input = input.as_standard_layout();
    let flat = input.view().into_shape_with_order((c, h * w)).expect("contiguous");
    let mut out = layer
        .weight
        .dot(&flat)
        .into_shape_with_order((layer.weight.nrows(), h, w))
        .expect("head shape");
    activate(out.view_mut(), &layer.bias, None);
    out
}

fn avg_pool2<T: Real>(input: ArrayView3<'_, T>) -> Array3<T> {
    let (c, h, w) = input.dim();
    let quarter = T::of(0.25);
    Array3::from_shape_fn((c, h / 2, w / 2), |(ci, y, x)| {
        let (y, x) = (2 * y, 2 * x);
        (input[[ci, y, x]] + input[[ci, y, x + 1]] + input[[ci, y + 1, x]] + input[[ci, y + 1, x + 1]])
            * quarter
    })
}

/// Neighbours and weight of the upper neighbour for 2x half-pixel upsampling.
fn up_taps(n: usize) -> Vec<(usize, usize, f64)> {
    (0..2 * n)
        .map(|o| {
            let src = ((o as f64 + 0.5) / 2.0 - 0.5).max(0.0);
            let i0 = src.floor() as usize;
            let i1 = (i0 + 1).min(n - 1);
            (i0, i1, src - i0 as f64)
        })
        .collect()
}

fn upsample2<T: Real>(input: ArrayView3<'_, T>) -> Array3<T> {
    let (c, h, w) = input.dim();
    let ty = up_taps(h);
    let tx = up_taps(w);
    let mut rows = Array3::<T>::zeros((c, 2 * h, w));
    for (ci, plane) in input.outer_iter().enumerate() {
        for (o, &(i0, i1, f)) in ty.iter().enumerate() {
            let f = T::of64(f);
            let g = T::one() - f;
            let mut dst = rows.slice_mut(s![ci, o, ..]);
            dst.zip_mut_with(&plane.row(i0), |d, &a| *d = g * a);
            dst.zip_mut_with(&plane.row(i1), |d, &b| *d = *d + f * b);
        }
    }
    let mut out = Array3::<T>::zeros((c, 2 * h, 2 * w));
    for ci in 0..c {
        for y in 0..2 * h {
            let src = rows.slice(s![ci, y, ..]);
            let mut dst = out.slice_mut(s![ci, y, ..]);
            for (o, &(i0, i1, f)) in tx.iter().enumerate() {
                let f = T::of64(f);
                dst[o] = (T::one() - f) * src[i0] + f * src[i1];
            }
        }
    }
    out
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn default_budget() {
        let cfg = NetworkConfig::default();
        cfg.validate().unwrap();
        assert_eq!(cfg.param_count(), 1_368_260);
        assert_eq!(cfg.hierarchies(), 4);
    }

    #[test]
    fn tensor_specs_follow_skip_layout() {
        let specs = NetworkConfig::default().tensor_specs();
        let shape = |n: &str| specs.iter().find(|(name, _)| name == n).unwrap().1.clone();
        assert_eq!(shape("enc1.weight"), vec![32, 68, 3, 3]);
        assert_eq!(shape("dec1.weight"), vec![224, 224, 3, 3]);
        assert_eq!(shape("dec2.weight"), vec![128, 224 + 128, 3, 3]);
        assert_eq!(shape("dec4.weight"), vec![32, 64 + 32, 3, 3]);
        assert_eq!(shape("head.weight"), vec![68, 32, 1, 1]);
        assert_eq!(specs.len(), 18);
    }

    #[test]
    fn invalid_configs() {
        let cfg = NetworkConfig { skips: 4, ..NetworkConfig::default() };
        assert!(cfg.validate().is_err());
        let mut cfg = NetworkConfig::default();
        cfg.decoder.pop();
        assert!(cfg.validate().is_err());
        let cfg = NetworkConfig { leaky_slope: f64::NAN, ..NetworkConfig::default() };
        assert!(cfg.validate().is_err());
    }

    #[test]
    fn weights_reject_bad_tensors() {
        let w = NetworkWeights::zeros(NetworkConfig::for_channels(4)).unwrap();
        let (cfg, mut tensors) = w.into_parts();
        tensors[0].data[0] = f32::INFINITY;
        assert!(NetworkWeights::new(cfg.clone(), tensors.clone()).is_err());
        tensors[0].data[0] = 0.0;
        tensors[1].name = "enc9.bias".into();
        assert!(NetworkWeights::new(cfg.clone(), tensors.clone()).is_err());
        tensors[1].name = "enc1.bias".into();
        tensors.pop();
        assert!(NetworkWeights::new(cfg, tensors).is_err());
    }

    #[test]
    fn upsample_taps_half_pixel() {
        let t = up_taps(3);
        assert_eq!(t[0], (0, 1, 0.0));
        assert_eq!(t[1], (0, 1, 0.25));
        assert_eq!(t[2], (0, 1, 0.75));
        assert_eq!(t[5], (2, 2, 0.25));
    }

    #[test]
    fn pool_then_upsample_constant() {
        let x = Array3::from_elem((2, 4, 6), 1.5f64);
        let y = upsample2(avg_pool2(x.view()).view());
        assert_eq!(y, x);
    }

    #[test]
    fn zero_weights_zero_output() {
        let w = NetworkWeights::zeros(NetworkConfig::default()).unwrap();
        let x = Array3::from_shape_fn((68, 32, 48), |(c, y, x)| ((c + y * x) % 7) as f32 - 3.0);
        let out = w.forward(x.view()).unwrap();
        assert_eq!(out.dim(), (68, 32, 48));
        assert!(out.iter().all(|&v| v == 0.0));
    }

    #[test]
    fn shape_errors() {
        let w = NetworkWeights::zeros(NetworkConfig::for_channels(4)).unwrap();
        assert!(w.forward(Array3::<f32>::zeros((3, 16, 16)).view()).is_err());
        assert!(w.forward(Array3::<f32>::zeros((4, 24, 16)).view()).is_err());
        assert!(w.forward(Array3::<f32>::zeros((4, 0, 16)).view()).is_err());
    }

    #[test]
    fn tiling_does_not_change_result() {
        // a 9-row tile boundary exercise: wide enough that tiles hold few rows
        let cfg = NetworkConfig {
            in_channels: 3,
            encoder: vec![4],
            decoder: vec![4],
            skips: 0,
            leaky_slope: 0.2,
        };
        let net = NetworkWeights::random(cfg, 7).unwrap().prepare::<f64>();
        let w = TILE_ELEMS / 27 / 3 + 2;
        let x = Array3::from_shape_fn((3, 6, 2 * w), |(c, y, x)| ((c * 31 + y * 7 + x) % 11) as f64 / 11.0);
        let tiled = conv3x3(x.view(), &net.encoder[0], None);
        let whole = {
            let mut out = Array3::<f64>::zeros((4, 6, 2 * w));
            for o in 0..4 {
                for y in 0..6 {
                    for xx in 0..2 * w {
                        let mut acc = 0.0;
                        for c in 0..3 {
                            for ky in 0..3 {
                                for kx in 0..3 {
                                    let sy = y as isize + ky as isize - 1;
                                    let sx = xx as isize + kx as isize - 1;
                                    if (0..6).contains(&sy) && (0..(2 * w) as isize).contains(&sx) {
                                        acc += net.encoder[0].weight[[o, c * 9 + ky * 3 + kx]]
                                            * x[[c, sy as usize, sx as usize]];
                                    }
                                }
                            }
                        }
                        out[[o, y, xx]] = acc + net.encoder[0].bias[o];
                    }
                }
            }
            out
        };
        let err = (&tiled - &whole).iter().fold(0.0f64, |m, v| m.max(v.abs()));
        assert!(err < 1e-12, "{err}");
    }
}
