use super::builder::{Builder, Layer, Lin};
use super::product::product_chain;
use super::{GadgetContract, GadgetError, Norm, Region};
use crate::net::{compose, concat_all, ReluNetwork, SizeBudget};

/// Exact trapezoid partition of unity `g_k(x) = Π g_{k_j}(x_j)`.
#[derive(Debug, Clone, PartialEq)]
pub struct PartitionG {
    k: u64,
    kinds: Vec<u8>,
}

fn trapezoid(kc: f64, kind: u8, x: f64) -> (f64, f64) {
    let y = kc * x + if kind == 2 { 0.5 } else { 0.0 };
    let t = y - y.floor();
    if t < 0.25 {
        (4.0 * t, 4.0 * kc)
    } else if t < 0.5 {
        (1.0, 0.0)
    } else if t < 0.75 {
        (3.0 - 4.0 * t, -4.0 * kc)
    } else {
        (0.0, 0.0)
    }
}

impl PartitionG {
    pub fn cells(&self) -> u64 {
        self.k
    }

    pub fn kinds(&self) -> &[u8] {
        &self.kinds
    }

    pub fn eval(&self, x: &[f64]) -> f64 {
        let kc = self.k as f64;
        self.kinds
            .iter()
            .zip(x)
            .map(|(&k, &v)| trapezoid(kc, k, v).0)
            .product()
    }

    pub fn gradient(&self, x: &[f64]) -> Vec<f64> {
        let kc = self.k as f64;
        let parts: Vec<(f64, f64)> = self
            .kinds
            .iter()
            .zip(x)
            .map(|(&k, &v)| trapezoid(kc, k, v))
            .collect();
        (0..parts.len())
            .map(|j| {
                parts
                    .iter()
                    .enumerate()
                    .map(|(i, p)| if i == j { p.1 } else { p.0 })
                    .product()
            })
            .collect()
    }
}

fn check_kinds(d: usize, kinds: &[u8]) -> Result<(), GadgetError> {
    if d == 0 || kinds.len() != d || kinds.iter().any(|&k| k != 1 && k != 2) {
        return Err(GadgetError::BadParameter(format!(
            "k must be a vector in {{1,2}}^{d}, got {kinds:?}"
        )));
    }
    Ok(())
}

pub fn partition_g(k: u64, d: usize, kinds: &[u8]) -> Result<PartitionG, GadgetError> {
    if k == 0 {
        return Err(GadgetError::BadParameter("K must be positive".into()));
    }
    check_kinds(d, kinds)?;
    Ok(PartitionG {
        k,
        kinds: kinds.to_vec(),
    })
}

/// Whether `x` lies in the cell family `Ω_k`.
pub fn omega_contains(k: u64, kinds: &[u8], x: &[f64]) -> bool {
    let kc = k as f64;
    kinds.iter().zip(x).all(|(&kind, &v)| {
        if !(0.0..=1.0).contains(&v) {
            return false;
        }
        let base = (v * kc).floor() as i64;
        (base - 1..=base + 1).any(|i| {
            let c = i as f64 / kc;
            if kind == 1 {
                i >= 0 && i < k as i64 && c <= v && v <= c + 0.75 / kc
            } else {
                i >= 0 && i <= k as i64 && c - 0.5 / kc <= v && v <= c + 0.25 / kc
            }
        })
    })
}

fn prime_factors(mut n: u64) -> Vec<u64> {
    let mut out = Vec::new();
    let mut p = 2;
    while p * p <= n {
        while n % p == 0 {
            out.push(p);
            n /= p;
        }
        p += 1;
    }
    if n > 1 {
        out.push(n);
    }
    out
}

/// Split `n` into factors `<= fmax` (first-fit decreasing); `None` if a prime exceeds `fmax`.
fn pack_factors(n: u64, fmax: u64) -> Option<Vec<usize>> {
    let mut primes = prime_factors(n);
    if primes.iter().any(|&p| p > fmax) {
        return None;
    }
    primes.sort_unstable_by(|a, b| b.cmp(a));
    let mut bins: Vec<u64> = Vec::new();
    for p in primes {
        match bins.iter_mut().find(|b| **b * p <= fmax) {
            Some(b) => *b *= p,
            None => bins.push(p),
        }
    }
    Some(bins.into_iter().map(|b| b as usize).collect())
}

/// Smallest period `C >= cmin` whose zigzag `Z_{2C}` needs the fewest layers of
/// width `<= fmax`, searched over `[cmin, 2 cmin]`.
fn zigzag_period(cmin: u64, fmax: usize) -> (u64, Vec<usize>) {
    let fmax = fmax.max(2) as u64;
    let mut best: Option<(u64, Vec<usize>)> = None;
    for c in cmin..=2 * cmin {
        if let Some(f) = pack_factors(2 * c, fmax) {
            if best.as_ref().is_none_or(|(_, bf)| f.len() < bf.len()) {
                best = Some((c, f));
            }
        }
    }
    best.expect("a power of two lies in [cmin, 2 cmin]")
}

/// Appends the zigzag `Z_N(t)`, `N = Π factors`, for `t` in `[0, 1]`.
pub(crate) fn append_zigzag(b: &mut Builder, t: Lin, factors: &[usize]) -> Lin {
    let mut z = t;
    for &f in factors {
        let ff = f as f64;
        let mut ly = Layer::new();
        let mut next = ly.relu(z.clone()) * ff;
        for j in 1..f {
            let sign = if j % 2 == 1 { -1.0 } else { 1.0 };
            next = next + ly.relu(z.clone() - j as f64 / ff) * (2.0 * sign * ff);
        }
        b.push(ly);
        z = next;
    }
    z
}

/// Appends `dist(v, Z)` for `v` in `[0, vmax]` using layers of width `<= fmax`.
pub(crate) fn append_frac_dist(b: &mut Builder, v: Lin, vmax: f64, fmax: usize) -> Lin {
    let (c, factors) = zigzag_period(vmax.ceil() as u64 + 1, fmax);
    append_zigzag(b, v * (1.0 / c as f64), &factors) * 0.5
}

/// Standalone zigzag network `Z_N` on `[0, 1]`, one layer per factor.
pub fn zigzag_net(factors: &[usize]) -> ReluNetwork<f64> {
    let (mut b, x) = Builder::new(1);
    let z = append_zigzag(&mut b, x[0].clone(), factors);
    b.finish(vec![z])
}

fn trapezoid_net(k: u64, kind: u8, fmax: usize) -> ReluNetwork<f64> {
    let kc = k as f64;
    let (mut b, x) = Builder::new(1);
    let shift = 1.0 - 0.375 + if kind == 2 { 0.5 } else { 0.0 };
    let delta = append_frac_dist(&mut b, x[0].clone() * kc + shift, kc + 2.0, fmax);
    let mut lh = Layer::new();
    let hi = lh.relu(Lin::constant(1.5) - delta.clone() * 4.0);
    let lo = lh.relu(Lin::constant(0.5) - delta * 4.0);
    b.push(lh);
    b.finish(vec![hi - lo])
}

/// Network for `g_k`; exact for `d = 1`, a product chain of exact factors beyond.
pub fn partition_net(
    k: u64,
    d: usize,
    kinds: &[u8],
    w: usize,
    l: usize,
    n: usize,
) -> Result<(ReluNetwork<f64>, GadgetContract), GadgetError> {
    check_kinds(d, kinds)?;
    if w == 0 || l == 0 || n == 0 {
        return Err(GadgetError::BadParameter("W, L, n must be positive".into()));
    }
    if k != (w as u64 * l as u64).pow(2) {
        return Err(GadgetError::BadParameter(format!("K = {k} must equal W^2 L^2")));
    }
    let size = SizeBudget {
        width: (9 + d) * (w + 1) + d - 1,
        depth: 15 * (d * (d - 1)).max(1) * n * l,
    };
    let contract = GadgetContract {
        name: "partition".into(),
        size,
        error_bound: 50.0 * (d as f64).powf(2.5) * ((w + 1) as f64).powi(-((4 * d * n * l) as i32)),
        norm: Norm::W1Inf,
        region: Region::Box {
            bounds: vec![(0.0, 1.0); d],
        },
    };
    let fmax = size.width / d;
    let factors: Vec<ReluNetwork<f64>> = kinds.iter().map(|&kd| trapezoid_net(k, kd, fmax)).collect();
    if d == 1 {
        return Ok((factors.into_iter().next().expect("d = 1"), contract));
    }
    let front = concat_all(&factors);
    let b = ((size.width - 2 * (d - 2)) / 6).max(2);
    let room = size.depth.saturating_sub(front.depth()) / (d - 1);
    if room < 2 {
        return Err(GadgetError::NoLayout(size));
    }
    let m = super::product::stage_cap(b, room - 1);
    let chain = product_chain(d, b, m, 2.0, 2.0);
    let net = compose(&chain, &front).expect("chain arity matches");
    Ok((net, contract))
}

/// Dense check that `|φ_k g|` outside `Ω_k` never exceeds its maximum inside.
pub fn support_localization_check<G>(
    phi: &ReluNetwork<f64>,
    g: G,
    k: u64,
    kinds: &[u8],
    per_axis: usize,
) -> bool
where
    G: Fn(&[f64]) -> f64,
{
    let d = kinds.len();
    let total = per_axis.pow(d as u32);
    let mut inside: f64 = 0.0;
    let mut outside: f64 = 0.0;
    for idx in 0..total {
        let mut r = idx;
        let x: Vec<f64> = (0..d)
            .map(|_| {
                let c = r % per_axis;
                r /= per_axis;
                c as f64 / (per_axis - 1) as f64
            })
            .collect();
        let v = (phi.eval1(&x) * g(&x)).abs();
        if omega_contains(k, kinds, &x) {
            inside = inside.max(v);
        } else {
            outside = outside.max(v);
        }
    }
    outside <= inside + 1e-9
}
