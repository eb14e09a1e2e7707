//! One PASS/FAIL line per criterion. Exits nonzero if any criterion fails.

use std::time::Instant;

use kornet::construct::{build_theorem1, build_theorem2, BuildOptions};
use kornet::corpus::{make_poly_bubble, make_sine_product, TestFunction};
use kornet::gadgets::suite::{run_suite, SuiteConfig};
use kornet::gadgets::{partition_g, perturbation_bound_holds, PartitionG};
use kornet::grid::{hierarchize, interp_error_bound, interp_eval};
use kornet::metrics::{fit_rate, lp_distance, lp_error, w1p_error, QuadratureConfig};
use kornet::net::{compose, concat, grid_sum, sum_parallel, sum_serial, AffineLayer, ReluNetwork};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

type Net = ReluNetwork<f64>;

struct Outcome {
    pass: bool,
    detail: String,
}

fn outcome(pass: bool, detail: String) -> Outcome {
    Outcome { pass, detail }
}

fn random_net(rng: &mut ChaCha8Rng, d: usize, w: usize, l: usize) -> Net {
    let mut dims = vec![d];
    dims.extend(std::iter::repeat(w).take(l));
    dims.push(1);
    let layers = dims
        .windows(2)
        .map(|p| {
            let weight = (0..p[1]).map(|_| (0..p[0]).map(|_| rng.gen_range(-1.0..1.0)).collect()).collect();
            let bias = (0..p[1]).map(|_| rng.gen_range(-0.5..0.5)).collect();
            AffineLayer::from_dense(weight, bias).unwrap()
        })
        .collect();
    ReluNetwork::new(layers).unwrap()
}

fn gadget_suite() -> Outcome {
    let rows = run_suite(&SuiteConfig::default());
    let failed: Vec<String> = rows
        .iter()
        .filter(|r| !r.pass)
        .map(|r| format!("{} [{}] measured={:.3e} bound={:.3e}", r.gadget, r.params, r.measured, r.bound))
        .collect();
    let worst = rows.iter().map(|r| r.margin()).fold(f64::INFINITY, f64::min);
    outcome(
        failed.is_empty(),
        format!("{} rows, {} failed, min margin {worst:.3e} {}", rows.len(), failed.len(), failed.join("; ")),
    )
}

fn combinators() -> Outcome {
    let mut rng = ChaCha8Rng::seed_from_u64(2024);
    let mut bad = Vec::new();
    let mut worst: f64 = 0.0;
    for cfg in 0..200 {
        let d = rng.gen_range(1..4);
        let pick = |rng: &mut ChaCha8Rng| (rng.gen_range(2..7), rng.gen_range(1..5));
        let pts: Vec<Vec<f64>> = (0..20).map(|_| (0..d).map(|_| rng.gen_range(-2.0..2.0)).collect()).collect();
        let (net, want, naive): (Net, (usize, usize), Box<dyn Fn(&[f64]) -> f64>) = match cfg % 5 {
            0 => {
                let ((w1, l1), (w2, l2)) = (pick(&mut rng), pick(&mut rng));
                let inner = random_net(&mut rng, d, w2, l2);
                let outer = random_net(&mut rng, 1, w1, l1);
                let c = compose(&outer, &inner).unwrap();
                (c, (w1.max(w2), l1 + l2), Box::new(move |x: &[f64]| outer.eval1(&[inner.eval1(x)])))
            }
            1 => {
                let ((w1, l1), (w2, l2)) = (pick(&mut rng), pick(&mut rng));
                let a = random_net(&mut rng, d, w1, l1);
                let b = random_net(&mut rng, d, w2, l2);
                // concat on a doubled input, outputs summed afterwards
                let c = concat(&a, &b);
                let s = c.then_affine(AffineLayer::from_rows(2, vec![vec![(0, 1.0), (1, 1.0)]], vec![0.0])).unwrap();
                let dup = AffineLayer::from_rows(d, (0..2 * d).map(|i| vec![(i % d, 1.0)]).collect(), vec![0.0; 2 * d]);
                let s = s.after_affine(dup).unwrap();
                (s, (w1 + w2, l1.max(l2)), Box::new(move |x: &[f64]| a.eval1(x) + b.eval1(x)))
            }
            2 | 3 => {
                let count = rng.gen_range(1..5);
                let shapes: Vec<(usize, usize)> = (0..count).map(|_| pick(&mut rng)).collect();
                let nets: Vec<Net> = shapes.iter().map(|&(w, l)| random_net(&mut rng, d, w, l)).collect();
                let (net, want) = if cfg % 5 == 2 {
                    let s = sum_parallel(&nets).unwrap();
                    (s, (shapes.iter().map(|s| s.0).sum(), shapes.iter().map(|s| s.1).max().unwrap()))
                } else {
                    let s = sum_serial(&nets).unwrap();
                    (s, (shapes.iter().map(|s| s.0).max().unwrap() + 2 * d + 2, shapes.iter().map(|s| s.1).sum()))
                };
                (net, want, Box::new(move |x: &[f64]| nets.iter().map(|g| g.eval1(x)).sum()))
            }
            _ => {
                let (w, l) = pick(&mut rng);
                let (n1, n2) = (rng.gen_range(1..4), rng.gen_range(1..4));
                let nets: Vec<Net> = (0..n1 * n2).map(|_| random_net(&mut rng, d, w, l)).collect();
                let g = grid_sum(&nets, n1, n2).unwrap();
                let want = if n2 == 1 { (n1 * w, l) } else { (n1 * w + 2 * d + 2, n2 * l) };
                (g, want, Box::new(move |x: &[f64]| nets.iter().map(|h| h.eval1(x)).sum()))
            }
        };
        if net.size() != want {
            bad.push(format!("config {cfg}: size {:?} != {want:?}", net.size()));
        }
        for x in &pts {
            worst = worst.max((net.eval1(x) - naive(x)).abs());
        }
    }
    outcome(
        bad.is_empty() && worst <= 1e-10,
        format!("200 configs, {} size mismatches, max eval dev {worst:.2e} {}", bad.len(), bad.join("; ")),
    )
}

fn interp_fit(d: usize, m: usize, per_axis: usize) -> (f64, f64) {
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

fn interpolation_rates() -> Outcome {
    let (s1, r1) = interp_fit(1, 2, 1 << 12);
    let (s2, r2) = interp_fit(2, 2, 1 << 10);
    let (s3, _) = interp_fit(1, 3, 1 << 12);
    let ok1 = s1 <= -1.8 && r1 >= 0.98;
    let ok2 = s2 <= -1.8 && r2 >= 0.98;
    let ok3 = s3 <= -2.7;
    outcome(
        ok1 && ok2 && ok3,
        format!(
            "d=1 m=2 slope {s1:.3} R2 {r1:.4} [{}]; d=2 m=2 slope {s2:.3} R2 {r2:.4} [{}]; d=1 m=3 slope {s3:.3} [{}]",
            tag(ok1),
            tag(ok2),
            tag(ok3)
        ),
    )
}

fn tag(ok: bool) -> &'static str {
    if ok {
        "ok"
    } else {
        "fail"
    }
}

struct T1Row {
    label: String,
    err: f64,
    bound: f64,
    budget_ok: bool,
}

fn theorem1_row(f: &TestFunction, m: usize, w: usize, q: &QuadratureConfig, opts: &BuildOptions) -> T1Row {
    let (net, rep) = build_theorem1(f, m, w, 1, 2.0, opts).unwrap();
    let err = lp_error(f, &net, 2.0, q).unwrap().value;
    T1Row {
        label: format!("d={} m={m} W={w} n={}", f.dim(), rep.n),
        err,
        bound: rep.interp_bound + rep.block_bound_sum + 1e-6,
        budget_ok: rep.budget_ok && net.assert_budget().is_ok(),
    }
}

fn theorem1_sweep(rows: &[T1Row]) -> Outcome {
    let errs: Vec<f64> = rows.iter().map(|r| r.err).collect();
    let monotone = errs.windows(2).all(|p| p[1] <= p[0]);
    let recs: Vec<(f64, f64)> = errs.iter().enumerate().map(|(i, &e)| ((i + 1) as f64, e)).collect();
    let slope = fit_rate(&recs).unwrap().slope;
    let budgets = rows.iter().all(|r| r.budget_ok);
    let list: Vec<String> = errs.iter().map(|e| format!("{e:.3e}")).collect();
    outcome(
        monotone && slope <= -3.0 && budgets,
        format!("errors [{}], slope {slope:.3}, monotone {monotone}, budgets {budgets}", list.join(", ")),
    )
}

fn triangle_control(rows: &[T1Row]) -> Outcome {
    let bad: Vec<String> = rows
        .iter()
        .filter(|r| r.err > r.bound)
        .map(|r| format!("{} err {:.3e} > {:.3e}", r.label, r.err, r.bound))
        .collect();
    let tight = rows.iter().map(|r| r.err / r.bound).fold(0.0, f64::max);
    outcome(
        bad.is_empty(),
        format!("{} configurations, max err/bound {tight:.3} {}", rows.len(), bad.join("; ")),
    )
}

fn calibrated_m3_constant(f: &TestFunction, q: &QuadratureConfig) -> f64 {
    // smallest configuration, frozen afterwards
    let n = kornet::construct::choose_n(1, 1);
    let interp = hierarchize(|x: &[f64]| f.eval(x), n, 3, f.dim()).unwrap();
    let e = lp_distance(|x| f.eval(x), |x| interp_eval(&interp, x), f.dim(), 2.0, q).unwrap().value;
    e / interp_error_bound(n, 3, f.dim(), 2.0, Some(1.0)).unwrap()
}

fn theorem2_sweep() -> Outcome {
    let f = make_poly_bubble(1).unwrap();
    let q = QuadratureConfig::tensor(1 << 12);
    let mut recs = Vec::new();
    let mut budgets = true;
    for w in 2..=4 {
        let (net, rep, _) = build_theorem2(&f, 2, w, 1, 2.0, &BuildOptions::default()).unwrap();
        budgets &= rep.budget_ok && net.assert_budget().is_ok();
        recs.push((w as f64, w1p_error(&f, &net, 2.0, &q).unwrap().value));
    }
    let slope = fit_rate(&recs).unwrap().slope;

    let mut rng = ChaCha8Rng::seed_from_u64(6);
    let mut unity: f64 = 0.0;
    for d in 1..=3usize {
        let k = rng.gen_range(1..20u64);
        let gs: Vec<PartitionG> = (0..1usize << d)
            .map(|mask| {
                let kinds: Vec<u8> = (0..d).map(|j| if mask >> j & 1 == 1 { 2 } else { 1 }).collect();
                partition_g(k, d, &kinds).unwrap()
            })
            .collect();
        for _ in 0..10_000 {
            let x: Vec<f64> = (0..d).map(|_| rng.gen()).collect();
            unity = unity.max((gs.iter().map(|g| g.eval(&x)).sum::<f64>() - 1.0).abs());
        }
    }
    let list: Vec<String> = recs.iter().map(|r| format!("{:.3e}", r.1)).collect();
    outcome(
        slope <= -1.5 && unity <= 1e-12 && budgets,
        format!("W1_2 errors [{}], slope {slope:.3}, budgets {budgets}, max |sum g - 1| {unity:.2e}", list.join(", ")),
    )
}

fn perturbation() -> Outcome {
    let mut rng = ChaCha8Rng::seed_from_u64(8);
    let mut failures = 0;
    for t in 0..10_000 {
        let m = 1 + t % 6;
        let eps = if t % 2 == 0 { 1e-4 } else { 1e-2 };
        let b: Vec<f64> = (0..m).map(|_| rng.gen_range(-1.0..=1.0)).collect();
        let a: Vec<f64> = b.iter().map(|v| v + rng.gen_range(-eps..=eps)).collect();
        if !perturbation_bound_holds(&a, &b, eps) {
            failures += 1;
        }
    }
    outcome(failures == 0, format!("10000 tuples, {failures} violations"))
}

fn oracles() -> Outcome {
    let f = |x: &[f64]| x[0] * (1.0 - x[0]);
    let interp = hierarchize(f, 6, 2, 1).unwrap();
    let mut worst: f64 = 0.0;
    for b in &interp.blocks {
        // the bubble's surplus at level l is 4^{-l}, the same at every node
        let want = 4f64.powi(-(b.level[0] as i32));
        for v in &b.surpluses {
            worst = worst.max((v - want).abs());
        }
    }
    let bubble = make_poly_bubble(1).unwrap();
    let zero = Net::constant(1, vec![0.0]);
    let q = QuadratureConfig::default_for(1);
    let l2 = lp_error(&bubble, &zero, 2.0, &q).unwrap().value;
    let w12 = w1p_error(&bubble, &zero, 2.0, &q).unwrap().value;
    let rl2 = (l2 - 1.0 / 30f64.sqrt()).abs() * 30f64.sqrt();
    let rw = (w12 - 0.60553).abs() / 0.60553;
    outcome(
        worst <= 1e-12 && rl2 <= 1e-3 && rw <= 1e-3,
        format!("surplus dev {worst:.1e}; L2 {l2:.6} (rel {rl2:.1e}); W1_2 {w12:.6} (rel {rw:.1e})"),
    )
}

fn report(id: usize, start: Instant, o: &Outcome) {
    println!(
        "criterion {id}: {} ({:.1}s) {}",
        if o.pass { "PASS" } else { "FAIL" },
        start.elapsed().as_secs_f64(),
        o.detail
    );
}

fn main() {
    let run = |id: usize, f: &dyn Fn() -> Outcome| {
        let t = Instant::now();
        let o = f();
        report(id, t, &o);
        o.pass
    };
    let mut all = run(1, &gadget_suite);
    all &= run(2, &combinators);
    all &= run(3, &interpolation_rates);

    let t = Instant::now();
    let sine = make_sine_product(1).unwrap();
    let q = QuadratureConfig::tensor(1 << 13);
    let opts = BuildOptions::default();
    let sweep: Vec<T1Row> = (1..=4).map(|w| theorem1_row(&sine, 2, w, &q, &opts)).collect();
    let o4 = theorem1_sweep(&sweep);
    report(4, t, &o4);
    all &= o4.pass;

    let t = Instant::now();
    let mut rows = sweep;
    let sine2 = make_sine_product(2).unwrap();
    let q2 = QuadratureConfig::tensor(128);
    rows.extend((1..=2).map(|w| theorem1_row(&sine2, 2, w, &q2, &opts)));
    let c = calibrated_m3_constant(&sine, &q);
    let opts3 = BuildOptions {
        c_md: Some(c),
        ..BuildOptions::default()
    };
    rows.extend((1..=3).map(|w| theorem1_row(&sine, 3, w, &q, &opts3)));
    let mut o5 = triangle_control(&rows);
    o5.detail = format!("{} (m=3 C={c:.4})", o5.detail);
    report(5, t, &o5);
    all &= o5.pass;

    all &= run(6, &theorem2_sweep);
    all &= run(7, &perturbation);
    all &= run(8, &oracles);
    if !all {
        std::process::exit(1);
    }
}
