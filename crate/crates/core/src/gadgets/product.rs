use super::builder::{Builder, Layer, Lin};
use super::{GadgetContract, GadgetError, Norm, Region};
use crate::net::{compose, concat, ReluNetwork, SizeBudget};

/// Largest stage count worth building: beyond `b^m >= 2^60` the truncation error
/// is below double precision.
pub(crate) fn stage_cap(b: usize, m: usize) -> usize {
    let mut k = 1;
    let mut p = b as f64;
    while k < m && p < 2f64.powi(60) {
        k += 1;
        p *= b as f64;
    }
    k
}

/// `b`-tooth zigzag and the interpolation defect of `t -> t^2`, both as combinations
/// of `σ(z - j/b)`, `j = 0..b`.
fn zig_and_defect(parts: &[Lin], b: usize) -> (Lin, Lin) {
    let bf = b as f64;
    let mut zig = parts[0].clone() * bf;
    let mut def = parts[0].clone() * (1.0 - 1.0 / bf);
    for (j, p) in parts.iter().enumerate().skip(1) {
        let sign = if j % 2 == 1 { -1.0 } else { 1.0 };
        zig = zig + p.clone() * (sign * 2.0 * bf);
        def = def + p.clone() * (-2.0 / bf);
    }
    (zig, def)
}

/// `xy` on `(-a, a)^2` through three squarers with `b` teeth and `m` stages.
/// Depth `m + 1`, width `6b`.
pub fn product2_with(b: usize, m: usize, a: f64) -> ReluNetwork<f64> {
    let bf = b as f64;
    let s = 1.0 / (2.0 * a);
    let (mut bld, inp) = Builder::new(2);
    let (x, y) = (inp[0].clone(), inp[1].clone());
    let chans = [(x.clone() + y.clone()) * s, x * s, y * s];

    // channels interleaved (x+y, y, x) so input gradients on the zero slices cancel
    // term by term
    let mut l1 = Layer::new();
    let mut parts: Vec<Vec<Lin>> = vec![Vec::with_capacity(b); 3];
    for j in 0..b {
        let jb = j as f64 / bf;
        let mut sums = [Lin::zero(), Lin::zero(), Lin::zero()];
        for sign in [1.0, -1.0] {
            for ch in [0, 2, 1] {
                sums[ch] = sums[ch].clone() + l1.relu(chans[ch].clone() * sign - jb);
            }
        }
        for (ch, s) in sums.into_iter().enumerate() {
            parts[ch].push(s);
        }
    }
    let mut state: Vec<(Lin, Lin)> = parts
        .iter()
        .map(|p| {
            let (zig, def) = zig_and_defect(p, b);
            (zig, p[0].clone() - def)
        })
        .collect();
    bld.push(l1);

    let mut scale = 1.0;
    for _ in 1..m {
        scale /= bf * bf;
        let mut ls = Layer::new();
        state = state
            .into_iter()
            .map(|(z, acc)| {
                let parts: Vec<Lin> = (0..b).map(|j| ls.relu(z.clone() - j as f64 / bf)).collect();
                let acc = ls.keep(acc);
                let (zig, def) = zig_and_defect(&parts, b);
                (zig, acc - def * scale)
            })
            .collect();
        bld.push(ls);
    }

    let mut lf = Layer::new();
    let sq: Vec<Lin> = state.into_iter().map(|(_, acc)| lf.keep(acc)).collect();
    bld.push(lf);
    let c = 2.0 * a * a;
    bld.finish(vec![(sq[0].clone() - sq[1].clone() - sq[2].clone()) * c])
}

fn product2_params(w: usize, l: usize) -> (usize, usize) {
    let b = (5 * w / 2).max(2);
    (b, stage_cap(b, 2 * l - 1))
}

/// Binary product on `(-a, a)^2` with `φ(0, y) = φ(x, 0) = 0` exactly.
pub fn product2(w: usize, l: usize, a: f64) -> Result<(ReluNetwork<f64>, GadgetContract), GadgetError> {
    if w == 0 || l == 0 {
        return Err(GadgetError::BadParameter("W, L must be positive".into()));
    }
    if !(a >= 2.0 && a.is_finite()) {
        return Err(GadgetError::BadParameter(format!("a = {a} must be >= 2")));
    }
    let (b, m) = product2_params(w, l);
    let net = product2_with(b, m, a);
    let contract = GadgetContract {
        name: "product2".into(),
        size: SizeBudget {
            width: 15 * w,
            depth: 2 * l,
        },
        error_bound: 6.0 * a * a * (w as f64).powi(-(l as i32)),
        norm: Norm::W1Inf,
        region: Region::Box {
            bounds: vec![(-a, a); 2],
        },
    };
    Ok((net, contract))
}

/// Left fold `φ(...φ(φ(x_1, x_2), x_3)..., x_n)`; the last step uses `a_last`,
/// the others `a_inner`. Unused inputs are carried by identity pairs.
pub fn product_chain(arity: usize, b: usize, m: usize, a_inner: f64, a_last: f64) -> ReluNetwork<f64> {
    assert!(arity >= 2, "product chain needs at least two factors");
    let mut net: Option<ReluNetwork<f64>> = None;
    for step in 0..arity - 1 {
        let rest = arity - 2 - step;
        let a = if rest == 0 { a_last } else { a_inner };
        let p = product2_with(b, m, a);
        let layer = if rest == 0 {
            p
        } else {
            concat(&p, &ReluNetwork::identity(rest, p.depth()))
        };
        net = Some(match net {
            None => layer,
            Some(prev) => compose(&layer, &prev).expect("chain dimensions"),
        });
    }
    net.expect("arity >= 2")
}

/// Product of `arity = d + 1` inputs on `[-2, 2]^d x [-c, c]`.
pub fn product_multi(
    arity: usize,
    c: f64,
    w: usize,
    l: usize,
) -> Result<(ReluNetwork<f64>, GadgetContract), GadgetError> {
    if arity < 3 {
        return Err(GadgetError::BadParameter(format!("arity {arity} < 3")));
    }
    if !(c > 2.0 && c.is_finite()) {
        return Err(GadgetError::BadParameter(format!("c = {c} must exceed 2")));
    }
    if w == 0 || l == 0 {
        return Err(GadgetError::BadParameter("W, L must be positive".into()));
    }
    let d = arity - 1;
    let inner = 2f64.powi(d as i32 + 1);
    let a = inner.max(c);
    let (b, m) = product2_params(w + 1, 7 * d * l);
    let net = product_chain(arity, b, m, inner, a);
    let mut bounds = vec![(-2.0, 2.0); d];
    bounds.push((-c, c));
    let contract = GadgetContract {
        name: "product-multi".into(),
        size: SizeBudget {
            width: 15 * (w + 1) + 2 * d - 1,
            depth: 14 * d * d * l,
        },
        error_bound: 14.0 * a.powi(4) * ((w + 1) as f64).powi(-((7 * d * l) as i32)),
        norm: Norm::W1Inf,
        region: Region::Box { bounds },
    };
    Ok((net, contract))
}
