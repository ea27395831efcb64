use epishear::lightfield::{Epi, RowRole};
use epishear::restore::{GridPlan, SystemCache};
use epishear::shearlet::{CoefficientStack, ShearletSystem};
use epishear::st::{st_reconstruct, st_reconstruct_with, KnownRows, SolverConfig};
use epishear::synth::SceneSpec;
use ndarray::{s, Array2, Array3};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

fn masked_random(h: usize, w: usize, known: &KnownRows, seed: u64) -> Array2<f64> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    Array2::from_shape_fn((h, w), |(r, _)| if known.is_known(r) { rng.random::<f64>() } else { 0.0 })
}

/// The plain update written directly with the public transforms.
fn formula(system: &ShearletSystem, y: &Array2<f64>, known: &KnownRows, cfg: &SolverConfig) -> Array2<f64> {
    let c_max = system.analyze(y.view()).unwrap().data.iter().fold(0.0f64, |m, c| m.max(c.abs()));
    let mut x = y.clone();
    for k in 0..cfg.iterations {
        let lambda = cfg.fraction(k) * c_max;
        let mut coeffs = system.analyze(x.view()).unwrap();
        coeffs.data.mapv_inplace(|c| if c.abs() <= lambda { 0.0 } else { c });
        let z = system.synthesize(&CoefficientStack::new(coeffs.data)).unwrap();
        for (r, mut row) in x.rows_mut().into_iter().enumerate() {
            row.assign(&if known.is_known(r) { y.row(r) } else { z.row(r) });
        }
    }
    for (r, mut row) in x.rows_mut().into_iter().enumerate() {
        if !known.is_known(r) {
            row.mapv_inplace(|v| v.clamp(0.0, 1.0));
        }
    }
    x
}

#[test]
fn plain_solver_matches_formula() {
    let system = ShearletSystem::build(8, 64, 64).unwrap();
    let known = KnownRows::remapped(4, 8, 64).unwrap();
    let y = masked_random(64, 64, &known, 1);
    let cfg = SolverConfig::plain().with_iterations(6);
    let got = st_reconstruct(&system, y.view(), &known, &cfg).unwrap();
    let want = formula(&system, &y, &known, &cfg);
    let err = (&got - &want).iter().fold(0.0f64, |m, v| m.max(v.abs()));
    assert!(err < 1e-12, "{err}");
}

#[test]
fn cone_analysis_equals_analysis_of_cone_projection() {
    let system = ShearletSystem::build(8, 64, 32).unwrap();
    let x = masked_random(32, 64, &KnownRows::all(32), 2);
    let mut ws = system.workspace();
    let n = 32 * 64 * system.num_filters();
    let mut cone = vec![0.0; n];
    system.analyze_cone_into(x.as_slice().unwrap(), &mut cone, &mut ws);

    // project by hand: weight the 2D spectrum, then analyze normally
    let weight = system.cone_weight();
    let projected = spectral_filter(&x, &weight);
    let plain = system.analyze(projected.view()).unwrap();
    let err = plain.data.iter().zip(&cone).fold(0.0f64, |m, (a, b)| m.max((a - b).abs()));
    assert!(err < 1e-10, "{err}");
}

fn spectral_filter(x: &Array2<f64>, weight: &Array2<f64>) -> Array2<f64> {
    use num_complex::Complex64;
    let (h, w) = x.dim();
    let mut out = Array2::zeros((h, w));
    // direct DFT keeps this independent of the crate's FFT plumbing
    let tw = |k: usize, n: usize, sign: f64| {
        let a = sign * 2.0 * std::f64::consts::PI * k as f64 / n as f64;
        Complex64::new(a.cos(), a.sin())
    };
    let mut spec = Array2::<Complex64>::zeros((h, w));
    for ((u, v), s) in spec.indexed_iter_mut() {
        let mut acc = Complex64::default();
        for ((r, c), &val) in x.indexed_iter() {
            acc += val * tw((u * r) % h, h, -1.0) * tw((v * c) % w, w, -1.0);
        }
        *s = acc * weight[[u, v]];
    }
    for ((r, c), o) in out.indexed_iter_mut() {
        let mut acc = Complex64::default();
        for ((u, v), s) in spec.indexed_iter() {
            acc += s * tw((u * r) % h, h, 1.0) * tw((v * c) % w, w, 1.0);
        }
        *o = acc.re / (h * w) as f64;
    }
    out
}

#[test]
fn unknown_row_error_decreases_over_last_quarter() {
    let spec = SceneSpec::reference();
    let (tau, width, y_img) = (32, 128, 200);
    let plan = GridPlan::new(4, tau, width, 16).unwrap();
    let system = SystemCache::new().get(tau, plan.grid_width, plan.grid_height).unwrap();
    let render = |positions: Vec<f64>| {
        Epi::new(
            Array3::from_shape_fn((positions.len(), width, 3), |(v, x, c)| {
                spec.sample(positions[v], x as f64, y_img as f64)[c] as f32
            }),
            RowRole::Dense,
        )
    };
    let sparse = render((0..4).map(f64::from).collect());
    let truth = render((0..plan.dense_rows()).map(|k| k as f64 / tau as f64).collect());
    assert_eq!(spec.d_min, 0.0, "the comparison below assumes no pre-shear");

    let grid = plan.prepare(&sparse, spec.d_min).unwrap();
    let known = plan.known_rows();
    let cfg = SolverConfig::default();
    assert_eq!(cfg.lambda_min, 0.0);
    let truth_g = truth.channel(1);
    let cols = plan.left..plan.left + width;
    let mut errors = Vec::new();
    st_reconstruct_with(&system, grid.channel(1).view(), &known, &cfg, |_, x| {
        let block = x.slice(s![..plan.dense_rows(), cols.clone()]);
        let mut sum = 0.0;
        for ((r, c), v) in block.indexed_iter() {
            if !known.is_known(r) {
                sum += (v - truth_g[[r, c]]).powi(2);
            }
        }
        errors.push(sum.sqrt());
    })
    .unwrap();
    let tail = &errors[cfg.iterations * 3 / 4..];
    for pair in tail.windows(2) {
        assert!(pair[1] <= pair[0], "error rose from {} to {} ({errors:?})", pair[0], pair[1]);
    }
    assert!(errors[cfg.iterations - 1] < 0.5 * errors[0], "{errors:?}");
}
