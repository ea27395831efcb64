//! Analytic layered scenes with exact disparities.
//!
//! A scene is a front-to-back list of opaque fronto-parallel layers. At view
//! position `p` (measured in input-view steps) a layer with disparity `d`
//! appears shifted by `d * p` columns, so every pixel of every view,
//! including fractional positions, is evaluated in closed form.

use std::f64::consts::TAU;

use ndarray::Array3;
use rand::{Rng, SeedableRng};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::lightfield::{DisparityMeta, LightField};

const MAX_COMPONENTS: usize = 8;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Sinusoid {
    /// Per-channel amplitude.
    pub amplitude: [f64; 3],
    /// Horizontal frequency in cycles per pixel.
    pub fx: f64,
    /// Vertical frequency in cycles per pixel.
    pub fy: f64,
    pub phase: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum Texture {
    /// `base + sum_i a_i sin(2 pi (fx x + fy y) + phase_i)`.
    Sinusoids {
        base: [f64; 3],
        components: Vec<Sinusoid>,
    },
    Checker {
        period: f64,
        low: [f64; 3],
        high: [f64; 3],
    },
    /// Seeded random sinusoid sum with frequencies below `max_frequency`.
    Noise {
        seed: u64,
        components: usize,
        max_frequency: f64,
        base: [f64; 3],
        amplitude: f64,
    },
}

impl Texture {
    /// Expand `Noise` into explicit sinusoids; other variants are returned as is.
    pub fn resolved(&self) -> Texture {
        match *self {
            Texture::Noise {
                seed,
                components,
                max_frequency,
                base,
                amplitude,
            } => {
                let mut rng = rand::rngs::StdRng::seed_from_u64(seed);
                let count = components.clamp(1, MAX_COMPONENTS);
                let components = (0..count)
                    .map(|_| {
                        let a = amplitude / count as f64;
                        Sinusoid {
                            amplitude: [
                                a * rng.random_range(0.5..1.0),
                                a * rng.random_range(0.5..1.0),
                                a * rng.random_range(0.5..1.0),
                            ],
                            fx: rng.random_range(-max_frequency..max_frequency),
                            fy: rng.random_range(-max_frequency..max_frequency),
                            phase: rng.random_range(0.0..TAU),
                        }
                    })
                    .collect();
                Texture::Sinusoids { base, components }
            }
            _ => self.clone(),
        }
    }

    pub fn sample(&self, x: f64, y: f64) -> [f64; 3] {
        match self {
            Texture::Sinusoids { base, components } => {
                let mut out = *base;
                for s in components {
                    let v = (TAU * (s.fx * x + s.fy * y) + s.phase).sin();
                    for (o, a) in out.iter_mut().zip(s.amplitude) {
                        *o += a * v;
                    }
                }
                out.map(|v| v.clamp(0.0, 1.0))
            }
            Texture::Checker { period, low, high } => {
                let cx = (x / period).floor() as i64;
                let cy = (y / period).floor() as i64;
                if (cx + cy).rem_euclid(2) == 0 {
                    *low
                } else {
                    *high
                }
            }
            Texture::Noise { .. } => self.resolved().sample(x, y),
        }
    }

    fn validate(&self) -> Result<()> {
        match self {
            Texture::Sinusoids { components, .. } => {
                if components.len() > MAX_COMPONENTS {
                    return Err(Error::param(format!(
                        "at most {MAX_COMPONENTS} sinusoids per texture"
                    )));
                }
                if components.iter().any(|s| s.fx.abs() >= 0.5 || s.fy.abs() >= 0.5) {
                    return Err(Error::param("sinusoid frequencies must be below 0.5 cycles/pixel"));
                }
                Ok(())
            }
            Texture::Checker { period, .. } if *period <= 0.0 => {
                Err(Error::param("checker period must be positive"))
            }
            Texture::Noise { max_frequency, .. } if !(0.0..0.5).contains(max_frequency) => {
                Err(Error::param("noise max_frequency must lie in [0, 0.5)"))
            }
            _ => Ok(()),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Layer {
    /// Pixels of horizontal motion per input-view step.
    pub disparity: f64,
    pub texture: Texture,
    /// Covered columns `[start, end)` at view position 0; `None` covers everything.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub extent: Option<[f64; 2]>,
}

impl Layer {
    fn covers(&self, u: f64) -> bool {
        match self.extent {
            Some([a, b]) => u >= a && u < b,
            None => true,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SceneSpec {
    pub d_min: f64,
    pub d_max: f64,
    /// Front to back.
    pub layers: Vec<Layer>,
}

impl SceneSpec {
    pub fn validate(&self) -> Result<()> {
        DisparityMeta::new(self.d_min, self.d_max)?;
        if self.layers.is_empty() {
            return Err(Error::param("scene has no layers"));
        }
        for (i, layer) in self.layers.iter().enumerate() {
            if !(self.d_min..=self.d_max).contains(&layer.disparity) {
                return Err(Error::param(format!(
                    "layer {i} disparity {} outside [{}, {}]",
                    layer.disparity, self.d_min, self.d_max
                )));
            }
            if let Some([a, b]) = layer.extent {
                if a.is_nan() || b.is_nan() || a >= b {
                    return Err(Error::param(format!("layer {i} has an empty extent")));
                }
            }
            layer.texture.validate()?;
        }
        Ok(())
    }

    pub fn from_json(text: &str) -> Result<Self> {
        let spec: SceneSpec = serde_json::from_str(text)?;
        spec.validate()?;
        Ok(spec)
    }

    pub fn meta(&self) -> DisparityMeta {
        DisparityMeta {
            d_min: self.d_min,
            d_max: self.d_max,
        }
    }

    fn resolved(&self) -> SceneSpec {
        SceneSpec {
            layers: self
                .layers
                .iter()
                .map(|l| Layer {
                    texture: l.texture.resolved(),
                    ..l.clone()
                })
                .collect(),
            ..self.clone()
        }
    }

    /// Colour of column `x`, image row `y` at view position `p`: the
    /// front-most layer covering the point wins; uncovered points are black.
    pub fn sample(&self, p: f64, x: f64, y: f64) -> [f64; 3] {
        for layer in &self.layers {
            let u = x - layer.disparity * p;
            if layer.covers(u) {
                return layer.texture.sample(u, y);
            }
        }
        [0.0; 3]
    }

    /// Two-layer-plus-background scene with disparities spanning `[0, 32]`.
    pub fn reference() -> Self {
        let sin = |a: [f64; 3], fx: f64, fy: f64, phase: f64| Sinusoid {
            amplitude: a,
            fx,
            fy,
            phase,
        };
        SceneSpec {
            d_min: 0.0,
            d_max: 32.0,
            layers: vec![
                Layer {
                    disparity: 32.0,
                    texture: Texture::Sinusoids {
                        base: [0.55, 0.45, 0.35],
                        components: vec![
                            sin([0.18, 0.12, 0.10], 0.0110, 0.0070, 0.3),
                            sin([0.08, 0.10, 0.12], 0.0041 * std::f64::consts::SQRT_2, -0.0123, 1.7),
                        ],
                    },
                    extent: Some([150.0, 260.0]),
                },
                Layer {
                    disparity: 18.5,
                    texture: Texture::Sinusoids {
                        base: [0.35, 0.55, 0.45],
                        components: vec![
                            sin([0.15, 0.10, 0.14], 0.0087, 0.0101, 0.9),
                            sin([0.06, 0.09, 0.05], 0.0171, -0.0049, 2.4),
                        ],
                    },
                    extent: Some([-40.0, 120.0]),
                },
                Layer {
                    disparity: 4.0,
                    texture: Texture::Sinusoids {
                        base: [0.45, 0.40, 0.55],
                        components: vec![
                            sin([0.16, 0.14, 0.12], 0.0062, 0.0089, 0.0),
                            sin([0.10, 0.08, 0.12], 0.0133 / std::f64::consts::SQRT_2 * 2.0, 0.0037, 1.1),
                            sin([0.05, 0.06, 0.04], 0.0029, -0.0151, 4.0),
                        ],
                    },
                    extent: None,
                },
            ],
        }
    }
}

/// Render views at fractional `positions` (input-view steps). The returned
/// disparity bounds are per step between the first two positions.
pub fn render_views(spec: &SceneSpec, positions: &[f64], width: usize, height: usize) -> Result<LightField> {
    spec.validate()?;
    if positions.len() < 2 {
        return Err(Error::TooFewViews(positions.len()));
    }
    let scene = spec.resolved();
    let views = positions
        .iter()
        .map(|&p| {
            let mut view = Array3::zeros((height, width, 3));
            for y in 0..height {
                for x in 0..width {
                    let rgb = scene.sample(p, x as f64, y as f64);
                    for c in 0..3 {
                        view[[y, x, c]] = rgb[c] as f32;
                    }
                }
            }
            view
        })
        .collect();
    let step = positions[1] - positions[0];
    let meta = DisparityMeta::new(
        (spec.d_min * step).min(spec.d_max * step),
        (spec.d_min * step).max(spec.d_max * step),
    )?;
    LightField::new(views, meta)
}

/// Sparse input with `views` views and its dense ground truth with
/// `(views - 1) tau + 1` views at positions `0, 1/tau, ..., views - 1`.
pub fn make_eval_pair(
    spec: &SceneSpec,
    views: usize,
    tau: usize,
    width: usize,
    height: usize,
) -> Result<(LightField, LightField)> {
    if views < 2 || tau < 1 {
        return Err(Error::param("need at least 2 views and tau >= 1"));
    }
    let dense_count = (views - 1) * tau + 1;
    let positions: Vec<f64> = (0..dense_count).map(|k| k as f64 / tau as f64).collect();
    let dense = render_views(spec, &positions, width, height)?;
    let sparse = dense.subsample_views(tau)?;
    Ok((sparse, dense))
}

#[cfg(test)]
mod tests {
    use super::*;
    use ndarray::s;

    fn flat_layer(d: f64) -> SceneSpec {
        SceneSpec {
            d_min: 0.0,
            d_max: 4.0,
            layers: vec![Layer {
                disparity: d,
                texture: Texture::Sinusoids {
                    base: [0.5; 3],
                    components: vec![Sinusoid {
                        amplitude: [0.3, 0.2, 0.1],
                        fx: 0.07,
                        fy: 0.03,
                        phase: 0.4,
                    }],
                },
                extent: None,
            }],
        }
    }

    #[test]
    fn zero_disparity_views_identical() {
        let lf = render_views(&flat_layer(0.0), &[0.0, 1.0, 2.5], 16, 4).unwrap();
        assert_eq!(lf.view(0), lf.view(1));
        assert_eq!(lf.view(0), lf.view(2));
    }

    #[test]
    fn unit_step_shifts_by_disparity() {
        let lf = render_views(&flat_layer(2.0), &[0.0, 1.0], 20, 3).unwrap();
        assert_eq!(lf.view(1).slice(s![.., 2.., ..]), lf.view(0).slice(s![.., ..18, ..]));
    }

    #[test]
    fn single_layer_epis_are_lines() {
        let spec = flat_layer(1.75);
        for y in [0.0, 3.0] {
            for p in [0.0, 0.25, 1.0, 2.5] {
                for x in [10.0, 11.5, 40.0] {
                    let a = spec.sample(p, x, y);
                    let b = spec.sample(0.0, x - 1.75 * p, y);
                    for c in 0..3 {
                        assert!((a[c] - b[c]).abs() <= 1e-10);
                    }
                }
            }
        }
    }

    #[test]
    fn occlusion_follows_layer_order() {
        let tex = |v: f64| Texture::Checker {
            period: 1e9,
            low: [v; 3],
            high: [v; 3],
        };
        let spec = SceneSpec {
            d_min: 0.0,
            d_max: 4.0,
            layers: vec![
                Layer { disparity: 1.0, texture: tex(0.9), extent: Some([10.0, 20.0]) },
                Layer { disparity: 3.0, texture: tex(0.2), extent: None },
            ],
        };
        for p in [0.0, 0.5, 1.0, 2.25] {
            let lf = render_views(&spec, &[p, p + 1.0], 40, 1).unwrap();
            for x in 0..40 {
                // z-order oracle: the front layer wins wherever its shifted extent covers x
                let front = (x as f64) >= 10.0 + p && (x as f64) < 20.0 + p;
                let want = if front { 0.9 } else { 0.2 };
                assert_eq!(lf.view(0)[[0, x, 0]], want as f32, "p={p} x={x}");
            }
        }
    }

    #[test]
    fn eval_pair_counts_and_grid() {
        let (sparse, dense) = make_eval_pair(&flat_layer(3.0), 4, 32, 24, 2).unwrap();
        assert_eq!(sparse.num_views(), 4);
        assert_eq!(dense.num_views(), 97);
        for k in 0..4 {
            assert_eq!(sparse.view(k), dense.view(32 * k));
        }
        assert_eq!(sparse.meta(), DisparityMeta::new(0.0, 4.0).unwrap());
        assert!(sparse.meta().d_max <= 32.0);
    }

    #[test]
    fn reference_scene_fits_interval() {
        let spec = SceneSpec::reference();
        spec.validate().unwrap();
        assert!(spec.d_min >= 0.0 && spec.d_max <= 32.0);
    }

    #[test]
    fn json_round_trip_and_validation() {
        let spec = SceneSpec::reference();
        let text = serde_json::to_string(&spec).unwrap();
        assert_eq!(SceneSpec::from_json(&text).unwrap(), spec);
        let mut bad = spec.clone();
        bad.layers[0].disparity = 40.0;
        assert!(bad.validate().is_err());
        let noise = r#"{"d_min":0,"d_max":1,"layers":[{"disparity":0.5,"texture":{"kind":"noise","seed":3,"components":4,"max_frequency":0.05,"base":[0.5,0.5,0.5],"amplitude":0.3}}]}"#;
        let spec = SceneSpec::from_json(noise).unwrap();
        let a = render_views(&spec, &[0.0, 1.0], 8, 2).unwrap();
        let b = render_views(&spec, &[0.0, 1.0], 8, 2).unwrap();
        assert_eq!(a, b);
    }
}
