use epishear::network::{NetworkConfig, NetworkWeights};
use ndarray::Array3;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

/// Straight-line reference: every layer written as explicit loops in f64.
struct Oracle<'a> {
    w: &'a NetworkWeights,
}

impl Oracle<'_> {
    fn tensor(&self, name: &str) -> (&[usize], Vec<f64>) {
        let t = self.w.tensor(name).unwrap();
        (&t.shape, t.data.iter().map(|&v| v as f64).collect())
    }

    fn conv(&self, x: &Array3<f64>, name: &str, slope: Option<f64>) -> Array3<f64> {
        let (shape, k) = self.tensor(&format!("{name}.weight"));
        let (_, b) = self.tensor(&format!("{name}.bias"));
        let (out_c, in_c, kh, kw) = (shape[0], shape[1], shape[2], shape[3]);
        let (c, h, w) = x.dim();
        assert_eq!(c, in_c);
        let (ph, pw) = (kh as isize / 2, kw as isize / 2);
        let mut out = Array3::zeros((out_c, h, w));
        for o in 0..out_c {
            for y in 0..h {
                for xx in 0..w {
                    let mut acc = b[o];
                    for i in 0..in_c {
                        for dy in 0..kh {
                            for dx in 0..kw {
                                let sy = y as isize + dy as isize - ph;
                                let sx = xx as isize + dx as isize - pw;
                                if sy < 0 || sx < 0 || sy >= h as isize || sx >= w as isize {
                                    continue;
                                }
                                acc += k[((o * in_c + i) * kh + dy) * kw + dx] * x[[i, sy as usize, sx as usize]];
                            }
                        }
                    }
                    out[[o, y, xx]] = match slope {
                        Some(s) if acc < 0.0 => s * acc,
                        _ => acc,
                    };
                }
            }
        }
        out
    }

    fn pool(x: &Array3<f64>) -> Array3<f64> {
        let (c, h, w) = x.dim();
        Array3::from_shape_fn((c, h / 2, w / 2), |(i, y, xx)| {
            let mut s = 0.0;
            for dy in 0..2 {
                for dx in 0..2 {
                    s += x[[i, 2 * y + dy, 2 * xx + dx]];
                }
            }
            s / 4.0
        })
    }

    /// Bilinear 2x with source coordinate `(o + 0.5) / 2 - 0.5`, clamped at the borders.
    fn upsample(x: &Array3<f64>) -> Array3<f64> {
        let (c, h, w) = x.dim();
        let coord = |o: usize, n: usize| {
            let s = ((o as f64 + 0.5) / 2.0 - 0.5).clamp(0.0, (n - 1) as f64);
            let lo = s.floor() as usize;
            (lo, (lo + 1).min(n - 1), s - lo as f64)
        };
        Array3::from_shape_fn((c, 2 * h, 2 * w), |(i, y, xx)| {
            let (y0, y1, fy) = coord(y, h);
            let (x0, x1, fx) = coord(xx, w);
            let top = x[[i, y0, x0]] * (1.0 - fx) + x[[i, y0, x1]] * fx;
            let bot = x[[i, y1, x0]] * (1.0 - fx) + x[[i, y1, x1]] * fx;
            top * (1.0 - fy) + bot * fy
        })
    }

    fn concat(a: &Array3<f64>, b: &Array3<f64>) -> Array3<f64> {
        let (ca, h, w) = a.dim();
        let cb = b.dim().0;
        Array3::from_shape_fn((ca + cb, h, w), |(i, y, x)| if i < ca { a[[i, y, x]] } else { b[[i - ca, y, x]] })
    }

    fn forward(&self, x: &Array3<f64>) -> Array3<f64> {
        let cfg = self.w.config();
        let slope = Some(cfg.leaky_slope);
        let l = cfg.encoder.len();
        let mut enc = Vec::new();
        let mut cur = x.clone();
        for i in 1..=l {
            cur = Self::pool(&self.conv(&cur, &format!("enc{i}"), slope));
            enc.push(cur.clone());
        }
        let mut cur = enc[l - 1].clone();
        for k in 1..=l {
            if k >= 2 && k - 1 <= cfg.skips {
                cur = Self::concat(&cur, &enc[l - k]);
            }
            cur = Self::upsample(&self.conv(&cur, &format!("dec{k}"), slope));
        }
        self.conv(&cur, "head", None)
    }
}

fn micro() -> NetworkWeights {
    let cfg = NetworkConfig {
        in_channels: 4,
        encoder: vec![5, 6],
        decoder: vec![6, 5],
        skips: 1,
        leaky_slope: 0.2,
    };
    NetworkWeights::random(cfg, 2024).unwrap()
}

fn input(c: usize, h: usize, w: usize, seed: u64) -> Array3<f64> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    Array3::from_shape_fn((c, h, w), |_| rng.random_range(-1.0..1.0))
}

#[test]
fn micro_config_matches_loop_oracle() {
    let w = micro();
    let x = input(4, 32, 32, 5);
    let fast = w.forward(x.view()).unwrap();
    let slow = Oracle { w: &w }.forward(&x);
    assert_eq!(fast.dim(), (4, 32, 32));
    let err = (&fast - &slow).iter().fold(0.0f64, |m, v| m.max(v.abs()));
    assert!(err <= 1e-10, "max deviation {err}");
}

#[test]
fn deeper_config_with_unskipped_decoder_matches_oracle() {
    let cfg = NetworkConfig {
        in_channels: 3,
        encoder: vec![4, 4, 5],
        decoder: vec![5, 4, 3],
        skips: 1,
        leaky_slope: 0.1,
    };
    let w = NetworkWeights::random(cfg, 77).unwrap();
    let x = input(3, 16, 24, 6);
    let err = (&w.forward(x.view()).unwrap() - &Oracle { w: &w }.forward(&x))
        .iter()
        .fold(0.0f64, |m, v| m.max(v.abs()));
    assert!(err <= 1e-10, "max deviation {err}");
}

#[test]
fn single_precision_tracks_double() {
    let w = micro();
    let x = input(4, 32, 32, 8);
    let d = w.forward(x.view()).unwrap();
    let s = w.forward(x.mapv(|v| v as f32).view()).unwrap();
    let err = d.iter().zip(&s).fold(0.0f64, |m, (a, &b)| m.max((a - b as f64).abs()));
    assert!(err < 1e-4, "{err}");
}

#[test]
fn default_network_preserves_paper_shape() {
    let w = NetworkWeights::random(NetworkConfig::default(), 1).unwrap();
    let net = w.prepare::<f32>();
    let x = input(68, 256, 256, 9).mapv(|v| v as f32);
    let a = net.forward(x.view()).unwrap();
    assert_eq!(a.dim(), (68, 256, 256));
    let b = net.forward(x.view()).unwrap();
    assert!(a.iter().zip(&b).all(|(p, q)| p.to_bits() == q.to_bits()), "repeat runs differ");
}

#[test]
fn leaky_network_is_not_linear() {
    let w = micro();
    let x = input(4, 16, 16, 10);
    let one = w.forward(x.view()).unwrap();
    let two = w.forward((&x * 2.0).view()).unwrap();
    let gap = (&two - &(&one * 2.0)).iter().fold(0.0f64, |m, v| m.max(v.abs()));
    assert!(gap > 1e-6);
}
