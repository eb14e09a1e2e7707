//! Contract checks for every gadget over a fixed parameter matrix.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use super::{
    fitter_bits, partition_g, partition_net, point_fitter, product2, product_multi, step_network, GadgetContract,
};
use crate::net::{AffineLayer, ReluNetwork, SizeBudget};

/// Float slack allowed on top of every error bound.
pub const SLACK: f64 = 1e-7;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SuiteRow {
    pub gadget: String,
    pub params: String,
    pub width: usize,
    pub depth: usize,
    pub budget: SizeBudget,
    pub measured: f64,
    pub bound: f64,
    pub pass: bool,
}

impl SuiteRow {
    /// `bound - measured`; negative on failure.
    pub fn margin(&self) -> f64 {
        self.bound - self.measured
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SuiteConfig {
    pub max_w: usize,
    pub max_l: usize,
    pub max_d: usize,
    pub mc_points: usize,
    pub seed: u64,
    /// Gadget whose network is perturbed before checking (test hook).
    pub fault: Option<String>,
}

impl Default for SuiteConfig {
    fn default() -> Self {
        Self {
            max_w: 3,
            max_l: 3,
            max_d: 3,
            mc_points: 100_000,
            seed: 0,
            fault: None,
        }
    }
}

type Net = ReluNetwork<f64>;

fn row(name: &str, params: String, net: &Net, c: &GadgetContract, measured: f64) -> SuiteRow {
    SuiteRow {
        gadget: name.into(),
        params,
        width: net.width(),
        depth: net.depth(),
        budget: c.size,
        measured,
        bound: c.error_bound,
        pass: c.size_ok(net) && measured <= c.error_bound + SLACK,
    }
}

fn maybe_fault(cfg: &SuiteConfig, name: &str, net: Net) -> Net {
    match &cfg.fault {
        Some(f) if f == name => {
            let k = net.output_dim();
            let shift = AffineLayer::from_rows(k, (0..k).map(|o| vec![(o, 1.0)]).collect(), vec![1e3; k]);
            net.then_affine(shift).expect("matching dimensions")
        }
        _ => net,
    }
}

/// Max deviation in value and every gradient entry.
fn w1inf_dev(net: &Net, x: &[f64], v: f64, g: &[f64]) -> f64 {
    let (nv, ng) = net.value_and_gradient(x).expect("dims");
    ng[0]
        .iter()
        .zip(g)
        .map(|(a, b)| (a - b).abs())
        .fold((nv[0] - v).abs(), f64::max)
}

fn step_rows(cfg: &SuiteConfig) -> Vec<SuiteRow> {
    let mut out = Vec::new();
    for w in 1..=cfg.max_w {
        for l in 1..=cfg.max_l {
            let cap = ((w * l) * (w * l)) as u64;
            for k in [cap, (cap / 2).max(1)] {
                for eps in [1.0 / (3.0 * k as f64), 1e-9] {
                    let (net, c) = step_network(k, w, l, eps).expect("valid step parameters");
                    let net = maybe_fault(cfg, "step", net);
                    let mut worst: f64 = 0.0;
                    for cell in 0..k {
                        let lo = cell as f64 / k as f64;
                        let hi = (cell + 1) as f64 / k as f64 - if cell + 1 < k { eps } else { 0.0 };
                        for s in 0..50 {
                            let x = lo + (hi - lo) * s as f64 / 49.0;
                            worst = worst.max((net.eval1(&[x]) - cell as f64).abs());
                        }
                    }
                    out.push(row("step", format!("K={k} W={w} L={l} eps={eps:.3e}"), &net, &c, worst));
                }
            }
        }
    }
    out
}

fn fitter_rows(cfg: &SuiteConfig) -> Vec<SuiteRow> {
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    let mut out = Vec::new();
    for w in 1..=cfg.max_w {
        for l in 1..=cfg.max_l {
            for s in 1..=3u32 {
                if fitter_bits(w, l, s) > 40 {
                    continue;
                }
                let k = (w * l) * (w * l);
                let xi: Vec<f64> = (0..k).map(|_| rng.gen()).collect();
                let (net, c) = point_fitter(&xi, w, l, s).expect("valid fitter parameters");
                let net = maybe_fault(cfg, "point-fitter", net);
                let worst = xi
                    .iter()
                    .enumerate()
                    .map(|(i, v)| (net.eval1(&[i as f64]) - v).abs())
                    .fold(0.0, f64::max);
                out.push(row("point-fitter", format!("K={k} W={w} L={l} s={s}"), &net, &c, worst));
            }
        }
    }
    out
}

fn product2_rows(cfg: &SuiteConfig) -> Vec<SuiteRow> {
    let mut out = Vec::new();
    for w in 1..=cfg.max_w {
        for l in 1..=cfg.max_l {
            for a in [2.0, 5.0] {
                let (net, c) = product2(w, l, a).expect("valid product parameters");
                let net = maybe_fault(cfg, "product2", net);
                let n = 101;
                let mut worst: f64 = 0.0;
                for i in 0..n {
                    for j in 0..n {
                        // half-spacing offsets keep samples off the kinks
                        let x = -a + 2.0 * a * (i as f64 + 0.5) / n as f64;
                        let y = -a + 2.0 * a * (j as f64 + 0.5) / n as f64;
                        worst = worst.max(w1inf_dev(&net, &[x, y], x * y, &[y, x]));
                    }
                }
                // zero slices must be exact
                for i in 0..n {
                    let t = -a + 2.0 * a * i as f64 / (n - 1) as f64;
                    if net.eval1(&[0.0, t]) != 0.0 || net.eval1(&[t, 0.0]) != 0.0 {
                        worst = f64::INFINITY;
                    }
                }
                out.push(row("product2", format!("W={w} L={l} a={a}"), &net, &c, worst));
            }
        }
    }
    out
}

fn multi_rows(cfg: &SuiteConfig) -> Vec<SuiteRow> {
    let mut out = Vec::new();
    for d in 2..=cfg.max_d.max(2) {
        for w in 1..=cfg.max_w {
            for l in 1..=cfg.max_l {
                let cval = 3.0;
                let (net, c) = product_multi(d + 1, cval, w, l).expect("valid multi parameters");
                let net = maybe_fault(cfg, "product-multi", net);
                let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed ^ (d * 100 + w * 10 + l) as u64);
                let pts: Vec<Vec<f64>> = (0..cfg.mc_points)
                    .map(|_| {
                        let mut x: Vec<f64> = (0..d).map(|_| rng.gen_range(-2.0..2.0)).collect();
                        x.push(rng.gen_range(-cval..cval));
                        x
                    })
                    .collect();
                let worst = pts
                    .par_iter()
                    .map(|x| {
                        let v: f64 = x.iter().product();
                        let g: Vec<f64> = (0..x.len())
                            .map(|j| x.iter().enumerate().filter(|(i, _)| *i != j).map(|(_, v)| v).product())
                            .collect();
                        w1inf_dev(&net, x, v, &g)
                    })
                    .reduce(|| 0.0, f64::max);
                out.push(row("product-multi", format!("d={d} c={cval} W={w} L={l}"), &net, &c, worst));
            }
        }
    }
    out
}

fn partition_rows(cfg: &SuiteConfig) -> Vec<SuiteRow> {
    let n = 2;
    let mut out = Vec::new();
    for d in 1..=cfg.max_d {
        for w in 1..=cfg.max_w {
            for l in 1..=cfg.max_l {
                let k = ((w * l) * (w * l)) as u64;
                for kind in [1u8, 2] {
                    let kinds = vec![kind; d];
                    let (net, c) = partition_net(k, d, &kinds, w, l, n).expect("valid partition parameters");
                    let net = maybe_fault(cfg, "partition", net);
                    let g = partition_g(k, d, &kinds).expect("valid kinds");
                    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed ^ (d * 100 + w * 10 + l) as u64 ^ kind as u64);
                    let count = if d == 1 { 20_000 } else { cfg.mc_points };
                    let pts: Vec<Vec<f64>> = (0..count).map(|_| (0..d).map(|_| rng.gen()).collect()).collect();
                    let worst = pts
                        .par_iter()
                        .map(|x| w1inf_dev(&net, x, g.eval(x), &g.gradient(x)))
                        .reduce(|| 0.0, f64::max);
                    out.push(row(
                        "partition",
                        format!("K={k} d={d} kinds={kind} W={w} L={l} n={n}"),
                        &net,
                        &c,
                        worst,
                    ));
                }
            }
        }
    }
    out
}

/// All contract rows in a fixed order.
pub fn run_suite(cfg: &SuiteConfig) -> Vec<SuiteRow> {
    let mut rows = step_rows(cfg);
    rows.extend(fitter_rows(cfg));
    rows.extend(product2_rows(cfg));
    rows.extend(multi_rows(cfg));
    rows.extend(partition_rows(cfg));
    rows
}
