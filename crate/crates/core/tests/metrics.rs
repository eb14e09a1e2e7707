use kornet::corpus::{by_name, make_anisotropic, make_poly_bubble, make_sine_product, make_zero};
use kornet::metrics::*;
use kornet::net::{AffineLayer, ReluNetwork};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use std::f64::consts::PI;

fn zero_net(d: usize) -> ReluNetwork<f64> {
    ReluNetwork::constant(d, vec![0.0])
}

/// Gauss-Legendre nodes and weights on `[0, 1]` via Newton on `P_n`.
fn gauss_legendre(n: usize) -> Vec<(f64, f64)> {
    (1..=n)
        .map(|k| {
            let mut x = (PI * (k as f64 - 0.25) / (n as f64 + 0.5)).cos();
            let mut dp = 0.0;
            for _ in 0..100 {
                let (mut p0, mut p1) = (1.0, x);
                for j in 2..=n {
                    let p2 = ((2 * j - 1) as f64 * x * p1 - (j - 1) as f64 * p0) / j as f64;
                    p0 = p1;
                    p1 = p2;
                }
                dp = n as f64 * (x * p1 - p0) / (x * x - 1.0);
                let dx = p1 / dp;
                x -= dx;
                if dx.abs() < 1e-15 {
                    break;
                }
            }
            let w = 2.0 / ((1.0 - x * x) * dp * dp);
            ((x + 1.0) / 2.0, w / 2.0)
        })
        .collect()
}

fn gl_integral(f: impl Fn(f64) -> f64, panels: usize) -> f64 {
    let gl = gauss_legendre(16);
    (0..panels)
        .map(|p| {
            let (a, h) = (p as f64 / panels as f64, 1.0 / panels as f64);
            gl.iter().map(|(x, w)| w * h * f(a + h * x)).sum::<f64>()
        })
        .sum()
}

#[test]
fn bubble_closed_forms() {
    let f = make_poly_bubble(1).unwrap();
    let q = QuadratureConfig::default_for(1);
    let l2 = lp_error(&f, &zero_net(1), 2.0, &q).unwrap();
    assert!((l2.value - 1.0 / 30f64.sqrt()).abs() / (1.0 / 30f64.sqrt()) < 1e-3);
    let w = w1p_error(&f, &zero_net(1), 2.0, &q).unwrap();
    let want = (1.0f64 / 30.0 + 1.0 / 3.0).sqrt();
    assert!((w.value - want).abs() / want < 1e-3);
    assert!((want - 0.60553).abs() < 1e-5);
    assert!(w.value >= l2.value);
}

#[test]
fn self_comparison_of_hat_net() {
    // exact ReLU form of the level-1 hat interpolant of the bubble
    let a0 = AffineLayer::from_dense(vec![vec![2.0], vec![2.0], vec![2.0]], vec![0.0, -1.0, -2.0]).unwrap();
    let a1 = AffineLayer::from_dense(vec![vec![0.25, -0.5, 0.25]], vec![0.0]).unwrap();
    let net = ReluNetwork::new(vec![a0, a1]).unwrap();
    let q = QuadratureConfig::tensor(1 << 10);
    let e = lp_distance(|x| 0.25 * (1.0 - (2.0 * x[0] - 1.0).abs()).max(0.0), |x| net.eval1(x), 1, 2.0, &q).unwrap();
    assert!(e.value <= 1e-9);
    let g = w1p_distance(
        |x| {
            let (v, j) = net.value_and_gradient(x).unwrap();
            (v[0], j[0].clone())
        },
        |x| {
            let (v, j) = net.value_and_gradient(x).unwrap();
            (v[0], j[0].clone())
        },
        1,
        2.0,
        &q,
    )
    .unwrap();
    assert!(g.value <= 1e-8);
}

#[test]
fn resolution_doubling_is_stable() {
    let f = make_sine_product(2).unwrap();
    let a = lp_error(&f, &zero_net(2), 2.0, &QuadratureConfig::tensor(128)).unwrap();
    let b = lp_error(&f, &zero_net(2), 2.0, &QuadratureConfig::tensor(256)).unwrap();
    assert!((a.value - b.value).abs() / b.value < 0.01);
    assert!((b.value - 0.5).abs() < 1e-3);
}

#[test]
fn monte_carlo_agrees_with_tensor_grid() {
    let f = make_sine_product(2).unwrap();
    let t = lp_error(&f, &zero_net(2), 2.0, &QuadratureConfig::tensor(256)).unwrap();
    let mc = lp_error(&f, &zero_net(2), 2.0, &QuadratureConfig::monte_carlo(20_000, 7)).unwrap();
    let combined = (mc.uncertainty.powi(2) + t.uncertainty.powi(2)).sqrt();
    assert!((t.value - mc.value).abs() <= 3.0 * combined, "{t:?} {mc:?}");
    let again = lp_error(&f, &zero_net(2), 2.0, &QuadratureConfig::monte_carlo(20_000, 7)).unwrap();
    assert_eq!(again, mc);
}

#[test]
fn offsets_avoid_dyadic_breakpoints() {
    for k in 1..=16 {
        let per_axis = 1usize << k;
        let nodes = axis_nodes(per_axis, DEFAULT_OFFSET);
        assert_eq!(nodes.len(), per_axis);
        for x in nodes {
            // distance to the nearest multiple of 2^{-(k+1)}
            let s = x * (1u64 << (k + 1)) as f64;
            let dist = (s - s.round()).abs() / (1u64 << (k + 1)) as f64;
            assert!(dist > 1e-9, "k={k} x={x}");
        }
    }
}

#[test]
fn rate_fits() {
    let exact: Vec<(f64, f64)> = (1..6).map(|k| (k as f64, (k as f64).powi(-4))).collect();
    let fit = fit_rate(&exact).unwrap();
    assert!((fit.slope + 4.0).abs() < 1e-12 && (fit.r2 - 1.0).abs() < 1e-12);
    let flat: Vec<(f64, f64)> = (1..6).map(|k| (k as f64, 0.3)).collect();
    assert_eq!(fit_rate(&flat).unwrap().slope, 0.0);
    let mut rng = ChaCha8Rng::seed_from_u64(11);
    let noisy: Vec<(f64, f64)> = (1..=20)
        .map(|k| {
            let s = k as f64;
            (s, s.powi(-2) * (1.0 + rng.gen_range(-0.05..0.05)))
        })
        .collect();
    assert!((fit_rate(&noisy).unwrap().slope + 2.0).abs() <= 0.2);
    assert!(fit_rate(&exact[..2]).is_err());
}

#[test]
fn bad_inputs_rejected() {
    let f = make_sine_product(1).unwrap();
    assert!(lp_error(&f, &zero_net(1), 0.5, &QuadratureConfig::tensor(64)).is_err());
    assert!(lp_error(&f, &zero_net(2), 2.0, &QuadratureConfig::tensor(64)).is_err());
    assert!(lp_error(&f, &zero_net(1), 2.0, &QuadratureConfig::tensor(0)).is_err());
}

#[test]
fn corpus_values() {
    let s1 = make_sine_product(1).unwrap();
    assert!(s1.eval(&[0.0]).abs() < 1e-15 && s1.eval(&[1.0]).abs() < 1e-15);
    assert!((s1.eval(&[0.5]) - 1.0).abs() < 1e-15);
    assert!((s1.seminorm(2, 2.0) - PI * PI / 2f64.sqrt()).abs() < 1e-9);
    let s2 = make_sine_product(2).unwrap();
    assert!((s2.mixed_derivative(&[1, 1], &[0.25, 0.25]) - PI * PI / 2.0).abs() < 1e-12);
    let b1 = make_poly_bubble(1).unwrap();
    assert_eq!(b1.seminorm(2, 2.0), 2.0);
    assert!(!b1.usable_for(3));
    assert!((make_poly_bubble(2).unwrap().eval(&[0.5, 0.5]) - 1.0 / 16.0).abs() < 1e-15);
    let a = make_anisotropic(1, &[2.0]).unwrap();
    assert!(a.eval(&[0.5]).abs() < 1e-15 && (a.eval(&[0.25]) - 1.0).abs() < 1e-15);
    let ones = make_anisotropic(2, &[1.0, 1.0]).unwrap();
    assert_eq!(ones.eval(&[0.3, 0.7]), s2.eval(&[0.3, 0.7]));
    assert!(by_name("nope", 1).is_err());
    assert_eq!(make_zero(3).unwrap().eval(&[0.1, 0.2, 0.3]), 0.0);
}

#[test]
fn seminorms_match_quadrature() {
    for p in [1.0, 2.0, 3.0] {
        for m in [2usize, 3] {
            let s = make_sine_product(1).unwrap();
            let q = gl_integral(|x| s.mixed_derivative(&[m], &[x]).abs().powf(p), 64).powf(1.0 / p);
            assert!((s.seminorm(m, p) - q).abs() / q < 1e-3, "sine m={m} p={p}");
            let s2 = make_sine_product(2).unwrap();
            assert!((s2.seminorm(m, p) - q * q).abs() / (q * q) < 1e-3);
        }
        let b = make_poly_bubble(1).unwrap();
        let q = gl_integral(|x| b.mixed_derivative(&[2], &[x]).abs().powf(p), 8).powf(1.0 / p);
        assert!((b.seminorm(2, p) - q).abs() / q < 1e-3);
    }
}

#[test]
fn boundary_trace_and_gradients() {
    let mut rng = ChaCha8Rng::seed_from_u64(5);
    let fns = [
        make_sine_product(2).unwrap(),
        make_poly_bubble(3).unwrap(),
        make_anisotropic(2, &[2.0, 3.0]).unwrap(),
        make_zero(2).unwrap(),
    ];
    for f in &fns {
        let d = f.dim();
        for _ in 0..1000 {
            let mut x: Vec<f64> = (0..d).map(|_| rng.gen()).collect();
            let face = rng.gen_range(0..d);
            x[face] = if rng.gen_bool(0.5) { 0.0 } else { 1.0 };
            assert!(f.eval(&x).abs() <= 1e-12, "{}", f.name());
        }
        let h = 1e-6;
        for _ in 0..100 {
            let x: Vec<f64> = (0..d).map(|_| rng.gen_range(0.05..0.95)).collect();
            let g = f.gradient(&x);
            for j in 0..d {
                let mut xp = x.clone();
                let mut xm = x.clone();
                xp[j] += h;
                xm[j] -= h;
                let fd = (f.eval(&xp) - f.eval(&xm)) / (2.0 * h);
                assert!((fd - g[j]).abs() <= 1e-6 * g[j].abs().max(1.0), "{} {j}", f.name());
            }
        }
    }
}
