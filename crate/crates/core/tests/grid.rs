use kornet::corpus::{make_poly_bubble, make_sine_product};
use kornet::grid::*;
use kornet::metrics::{fit_rate, lp_distance, QuadratureConfig};
use proptest::prelude::*;

fn hat(l: u32, i: u64, x: f64) -> f64 {
    let t = (x * (1u64 << l) as f64 - i as f64).abs();
    (1.0 - t).max(0.0)
}

/// Surplus by the tensorized `[-1/2, 1, -1/2]` stencil.
fn stencil(f: &dyn Fn(&[f64]) -> f64, level: &[u32], pos: &[u64]) -> f64 {
    let d = level.len();
    let mut total = 0.0;
    for mask in 0..3usize.pow(d as u32) {
        let mut r = mask;
        let mut w = 1.0;
        let x: Vec<f64> = (0..d)
            .map(|j| {
                let s = r % 3;
                r /= 3;
                let h = 1.0 / (1u64 << level[j]) as f64;
                let c = pos[j] as f64 * h;
                match s {
                    0 => c,
                    1 => {
                        w *= -0.5;
                        c - h
                    }
                    _ => {
                        w *= -0.5;
                        c + h
                    }
                }
            })
            .collect();
        total += w * f(&x);
    }
    total
}

fn naive_eval(interp: &SparseInterpolant<f64>, x: &[f64]) -> f64 {
    interp
        .entries()
        .iter()
        .map(|(mi, v)| v * mi.level.iter().zip(&mi.position).zip(x).map(|((&l, &i), &xj)| hat(l, i, xj)).product::<f64>())
        .sum()
}

#[test]
fn index_sets() {
    assert_eq!(hier_index_set(&[1]).unwrap(), vec![vec![1]]);
    assert_eq!(hier_index_set(&[2]).unwrap(), vec![vec![1], vec![3]]);
    let s = hier_index_set(&[2, 1]).unwrap();
    assert_eq!(s.len(), 2);
    assert!(s.contains(&vec![1, 1]) && s.contains(&vec![3, 1]));
    assert!(hier_index_set(&[0]).is_err());
    assert!(MultiIndex::new(vec![2], vec![2]).is_err());
}

#[test]
fn level_enumeration() {
    let sorted = |mut v: Vec<Vec<u32>>| {
        v.sort();
        v
    };
    assert_eq!(enumerate_levels(1, 2), vec![vec![1, 1]]);
    assert_eq!(sorted(enumerate_levels(2, 2)), vec![vec![1, 1], vec![1, 2], vec![2, 1]]);
    assert_eq!(sorted(enumerate_levels(3, 1)), vec![vec![1], vec![2], vec![3]]);
    for n in 1..=8 {
        for d in 1..=3 {
            let lv = enumerate_levels(n, d);
            assert!(lv.len() <= (n + d).pow(d as u32));
            // count of compositions of s into d positive parts
            let want: usize = (d..n + d).map(|s| binom(s - 1, d - 1)).sum();
            assert_eq!(lv.len(), want, "n={n} d={d}");
        }
    }
}

fn binom(n: usize, k: usize) -> usize {
    (0..k).fold(1, |acc, i| acc * (n - i) / (i + 1))
}

#[test]
fn hat_values() {
    assert_eq!(hat_1d(1, 1, 0.5), 1.0);
    assert_eq!(hat_1d(2, 1, 0.5), 0.0);
    let b = Basis::new(MultiIndex::new(vec![2, 2], vec![1, 3]).unwrap(), 2).unwrap();
    assert_eq!(b.eval(&[0.25, 0.75]), 1.0);
    for k in 0..200 {
        let x = k as f64 / 199.0;
        assert!((hat_1d(3, 5, x) - hat(3, 5, x)).abs() < 1e-15);
    }
}

#[test]
fn quadratic_basis_matches_lagrange() {
    // m = 3 at (l, i): 1 - t^2 on the support with t = 2^l x - i
    let b = Basis::new(MultiIndex::new(vec![3], vec![5]).unwrap(), 3).unwrap();
    for k in 0..=100 {
        let x = 0.5 + 0.25 * k as f64 / 100.0;
        let t = 8.0 * x - 5.0;
        let want = if t.abs() <= 1.0 { 1.0 - t * t } else { 0.0 };
        assert!((b.eval(&[x]) - want).abs() < 1e-12, "x={x}");
    }
    assert!(shape_table(4).is_err());
}

#[test]
fn bubble_surpluses_match_stencil() {
    let f = |x: &[f64]| x[0] * (1.0 - x[0]);
    let interp = hierarchize(f, 4, 2, 1).unwrap();
    let b1 = interp.blocks.iter().find(|b| b.level == vec![1]).unwrap();
    assert!((b1.surpluses[0] - 0.25).abs() < 1e-12);
    let b2 = interp.blocks.iter().find(|b| b.level == vec![2]).unwrap();
    assert!((b2.surpluses[0] - 0.0625).abs() < 1e-12);
    for (mi, v) in interp.entries() {
        assert!((v - stencil(&f, &mi.level, &mi.position)).abs() < 1e-12);
    }
}

#[test]
fn two_dim_surpluses_match_stencil() {
    let s = make_sine_product(2).unwrap();
    let f = |x: &[f64]| s.eval(x);
    let interp = hierarchize(f, 4, 2, 2).unwrap();
    for (mi, v) in interp.entries() {
        assert!((v - stencil(&f, &mi.level, &mi.position)).abs() < 1e-12, "{mi:?}");
    }
}

#[test]
fn zero_and_empty() {
    let interp = hierarchize(|_: &[f64]| 0.0, 3, 2, 3).unwrap();
    assert_eq!(interp.max_abs_surplus(), 0.0);
    let e = SparseInterpolant::<f64>::empty(2, 3, 2);
    assert_eq!(interp_eval(&e, &[0.3, 0.6]), 0.0);
}

#[test]
fn nodal_exactness_and_single_surplus() {
    let f = |x: &[f64]| x[0] * (1.0 - x[0]);
    let interp = hierarchize(f, 2, 2, 1).unwrap();
    assert!((interp_eval(&interp, &[0.25]) - 0.1875).abs() < 1e-12);

    let g = |x: &[f64]| 16.0 * x[0] * (1.0 - x[0]) * x[1] * (1.0 - x[1]);
    let one = hierarchize(g, 1, 2, 2).unwrap();
    assert!((interp_eval(&one, &[0.5, 0.5]) - 1.0).abs() < 1e-12);

    let s = make_sine_product(2).unwrap();
    let interp = hierarchize(|x: &[f64]| s.eval(x), 5, 2, 2).unwrap();
    for (mi, _) in interp.entries() {
        let x: Vec<f64> = mi.point();
        assert!((interp_eval(&interp, &x) - s.eval(&x)).abs() < 1e-12);
    }
}

#[test]
fn eval_matches_naive_sum() {
    let s = make_sine_product(2).unwrap();
    let interp = hierarchize(|x: &[f64]| s.eval(x), 4, 2, 2).unwrap();
    for k in 0..300 {
        let x = [(k as f64 * 0.6180339887) % 1.0, (k as f64 * 0.7548776662) % 1.0];
        assert!((interp_eval(&interp, &x) - naive_eval(&interp, &x)).abs() < 1e-12);
    }
}

#[test]
fn projection_property() {
    let s = make_sine_product(2).unwrap();
    let a = hierarchize(|x: &[f64]| s.eval(x), 4, 2, 2).unwrap();
    let b = hierarchize(|x: &[f64]| interp_eval(&a, x), 4, 2, 2).unwrap();
    for (ba, bb) in a.blocks.iter().zip(&b.blocks) {
        for (u, v) in ba.surpluses.iter().zip(&bb.surpluses) {
            assert!((u - v).abs() < 1e-10);
        }
    }
}

#[test]
fn surplus_decay_against_second_derivative() {
    // sup-norm variant: |v_{l,i}| <= 2^{-2|l|_1 - d} sup |D^2 f| on the support
    let d = 2;
    let s = make_sine_product(d).unwrap();
    let interp = hierarchize(|x: &[f64]| s.eval(x), 6, 2, d).unwrap();
    for (mi, v) in interp.entries() {
        let mut sup: f64 = 0.0;
        let steps = 40;
        for a in 0..=steps {
            for b in 0..=steps {
                let x: Vec<f64> = mi
                    .level
                    .iter()
                    .zip(&mi.position)
                    .zip([a, b])
                    .map(|((&l, &i), t)| ((i as f64 - 1.0) + 2.0 * t as f64 / steps as f64) / (1u64 << l) as f64)
                    .collect();
                sup = sup.max(s.mixed_derivative(&[2, 2], &x).abs());
            }
        }
        let l1: u32 = mi.level.iter().sum();
        let bound = 2f64.powi(-2 * l1 as i32 - d as i32) * sup;
        assert!(v.abs() <= bound * 1.05 + 1e-15, "{mi:?}: {v} vs {bound}");
    }
}

#[test]
fn anisotropic_decay_ordering() {
    let f = kornet::corpus::make_anisotropic(2, &[1.0, 3.0]).unwrap();
    let interp = hierarchize(|x: &[f64]| f.eval(x), 6, 2, 2).unwrap();
    let max_at = |l: Vec<u32>| interp.blocks.iter().find(|b| b.level == l).unwrap().max_abs();
    for k in 2..=4 {
        assert!(max_at(vec![k, 1]) < max_at(vec![1, k]), "level {k}");
    }
}

#[test]
fn bound_formula_values() {
    assert_eq!(interp_error_bound(1, 2, 1, 2.0, None).unwrap(), 0.25);
    assert_eq!(interp_error_bound(3, 2, 2, 2.0, None).unwrap(), 3.375);
    assert_eq!(interp_error_bound(2, 3, 1, 2.0, Some(1.0)).unwrap(), 0.015625);
}

fn interp_rate(d: usize, m: usize, per_axis: usize) -> (f64, f64) {
    let s = make_sine_product(d).unwrap();
    let q = QuadratureConfig::tensor(per_axis);
    let recs: Vec<(f64, f64)> = (2..=8)
        .map(|n| {
            let interp = hierarchize(|x: &[f64]| s.eval(x), n, m, d).unwrap();
            let e = lp_distance(|x| s.eval(x), |x| interp_eval(&interp, x), d, 2.0, &q).unwrap();
            (2f64.powi(n as i32), e.value)
        })
        .collect();
    let fit = fit_rate(&recs).unwrap();
    (fit.slope, fit.r2)
}

#[test]
fn interpolation_rate_one_dim() {
    let (slope, r2) = interp_rate(1, 2, 1 << 12);
    assert!(slope <= -1.8 && r2 >= 0.98, "{slope} {r2}");
    let (slope3, _) = interp_rate(1, 3, 1 << 12);
    assert!(slope3 <= -2.7, "{slope3}");
}

#[test]
fn interpolation_error_under_bound() {
    let f = make_poly_bubble(1).unwrap();
    let q = QuadratureConfig::tensor(1 << 12);
    for n in 1..=6 {
        let interp = hierarchize(|x: &[f64]| f.eval(x), n, 2, 1).unwrap();
        let e = lp_distance(|x| f.eval(x), |x| interp_eval(&interp, x), 1, 2.0, &q).unwrap();
        assert!(e.value <= interp_error_bound(n, 2, 1, 2.0, None).unwrap());
    }
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(32))]

    #[test]
    fn linear_index_is_bijection(level in proptest::collection::vec(1u32..5, 1..4)) {
        let set = hier_index_set(&level.iter().map(|&l| l as i64).collect::<Vec<_>>()).unwrap();
        let total: u64 = level.iter().map(|&l| 1u64 << (l - 1)).product();
        prop_assert_eq!(set.len() as u64, total);
        let mut seen = vec![false; total as usize];
        for pos in &set {
            prop_assert!(pos.iter().all(|&i| i % 2 == 1));
            let k = linear_index(&level, pos);
            prop_assert!(k < total && !seen[k as usize]);
            seen[k as usize] = true;
        }
    }

    #[test]
    fn nodal_exactness_random_poly(a in -2.0f64..2.0, b in -2.0f64..2.0, n in 1usize..6) {
        let f = move |x: &[f64]| x[0] * (1.0 - x[0]) * (a + b * x[0]);
        let interp = hierarchize(f, n, 2, 1).unwrap();
        for (mi, _) in interp.entries() {
            let x: Vec<f64> = mi.point();
            prop_assert!((interp_eval(&interp, &x) - f(&x)).abs() < 1e-12);
        }
    }

    #[test]
    fn basis_nodes_and_support(l in 1u32..6, k in 0u64..16, x in 0.0f64..1.0) {
        let i = 2 * (k % (1u64 << (l - 1))) + 1;
        let mi = MultiIndex::new(vec![l], vec![i]).unwrap();
        let b = Basis::new(mi.clone(), 2).unwrap();
        prop_assert_eq!(b.eval(&mi.point::<f64>()), 1.0);
        let h = 1.0 / (1u64 << l) as f64;
        let v = b.eval(&[x]);
        prop_assert!((0.0..=1.0).contains(&v));
        if x <= (i as f64 - 1.0) * h || x >= (i as f64 + 1.0) * h {
            prop_assert_eq!(v, 0.0);
        }
    }
}
