use super::builder::{Builder, Layer, Lin};
use super::step::staircase;
use super::{GadgetContract, GadgetError, Norm, Region};
use crate::net::{ReluNetwork, SizeBudget};

/// Bits per stored sample: `ceil(2 s log2(WL)) + 2`.
pub fn fitter_bits(w: usize, l: usize, s: u32) -> u32 {
    let wl = (w * l) as f64;
    (2.0 * s as f64 * wl.log2()).ceil() as u32 + 2
}

fn budget(w: usize, l: usize, s: u32) -> SizeBudget {
    let wf = w as f64;
    let lf = l as f64;
    SizeBudget {
        width: (16.0 * s as f64 * (wf + 1.0) * (8.0 * wf).log2()).floor() as usize,
        depth: (5.0 * (lf + 2.0) * (4.0 * lf).log2()).floor() as usize,
    }
}

/// Network with `φ(i) ≈ ξ_i` at the integers `0..K` and output clamped to `[0, 1]`.
pub fn point_fitter(
    xi: &[f64],
    w: usize,
    l: usize,
    s: u32,
) -> Result<(ReluNetwork<f64>, GadgetContract), GadgetError> {
    if w == 0 || l == 0 || s == 0 {
        return Err(GadgetError::BadParameter("W, L, s must be positive".into()));
    }
    if xi.is_empty() {
        return Err(GadgetError::NoSamples);
    }
    let k = xi.len() as u64;
    let cap = (w as u64 * l as u64).pow(2);
    if k > cap {
        return Err(GadgetError::TooManyCells { k, cap });
    }
    if let Some((index, &value)) = xi
        .iter()
        .enumerate()
        .find(|(_, v)| !(0.0..=1.0).contains(*v))
    {
        return Err(GadgetError::SampleOutOfRange { index, value });
    }
    let bits = fitter_bits(w, l, s);
    if bits > 40 {
        return Err(GadgetError::TooManyBits { bits });
    }
    let size = budget(w, l, s);
    let contract = GadgetContract {
        name: "point-fitter".into(),
        size,
        error_bound: ((w * l) as f64).powi(-2 * s as i32),
        norm: Norm::Sup,
        region: Region::Integers { count: k },
    };
    if k == 1 {
        return Ok((ReluNetwork::constant(1, vec![xi[0]]), contract));
    }
    let scale = ((1u64 << bits) - 1) as f64;
    let codes: Vec<u64> = xi.iter().map(|&v| (v * scale).round() as u64).collect();
    for m in 1..=50usize {
        let g = (k as usize).div_ceil(m);
        if (g as f64) * 2f64.powi(m as i32 + 1) >= 2f64.powi(53) {
            break;
        }
        let net = assemble(&codes, bits, m, 4 * w);
        if net.width() <= size.width && net.depth() <= size.depth {
            return Ok((net, contract));
        }
    }
    Err(GadgetError::NoLayout(size))
}

/// Bit plane `b` of group `q`: bit `b` (MSB first) of each code in the group,
/// packed with offset `r = 0` at weight `2^(m-1)`.
fn plane(codes: &[u64], bits: u32, m: usize, q: usize, b: u32) -> u64 {
    (0..m)
        .map(|r| {
            let bit = codes
                .get(q * m + r)
                .map_or(0, |c| (c >> (bits - 1 - b)) & 1);
            bit << (m - 1 - r)
        })
        .sum()
}

fn assemble(codes: &[u64], bits: u32, m: usize, jumps: usize) -> ReluNetwork<f64> {
    let k = codes.len();
    let g = k.div_ceil(m);
    let mf = m as f64;
    let (mut b, inp) = Builder::new(1);
    let i = inp[0].clone();

    // q = floor(i / m), with i carried
    let (q, carried) = staircase(
        &mut b,
        (i.clone() + 0.5) * (1.0 / mf),
        g as u64,
        0.5 / mf,
        jumps,
        vec![i],
    );
    let i = carried[0].clone();

    let mut lq = Layer::new();
    let ramps: Vec<Lin> = (0..g.saturating_sub(1))
        .map(|j| lq.relu(q.clone() - j as f64))
        .collect();
    let mut r = lq.keep(i - q * mf);
    b.push(lq);

    // piecewise-linear interpolation of each plane through the integers q
    let mut z: Vec<Lin> = (0..bits)
        .map(|bi| {
            let vals: Vec<f64> = (0..g).map(|q| plane(codes, bits, m, q, bi) as f64).collect();
            let mut e = Lin::constant(vals[0]);
            let mut prev_slope = 0.0;
            for j in 0..g.saturating_sub(1) {
                let slope = vals[j + 1] - vals[j];
                e = e + ramps[j].clone() * (slope - prev_slope);
                prev_slope = slope;
            }
            e
        })
        .collect();

    let mut acc = Lin::zero();
    let mut pending: Option<(Vec<Lin>, Lin)> = None;
    for t in 0..m {
        let thr = (1u64 << (m - 1 - t)) as f64;
        let mut ly = Layer::new();
        if let Some((bs, ind)) = pending.take() {
            acc = flush(&mut ly, acc, bs, ind, bits);
        } else {
            acc = ly.keep(acc);
        }
        let last = t + 1 == m;
        let mut bs = Vec::with_capacity(bits as usize);
        let mut nz = Vec::with_capacity(bits as usize);
        for zb in z {
            let hi = ly.relu(zb.clone() - thr + 1.0);
            let lo = ly.relu(zb.clone() - thr);
            let bit = hi - lo;
            if !last {
                let zc = ly.keep(zb);
                nz.push(zc - bit.clone() * thr);
            }
            bs.push(bit);
        }
        z = nz;
        let tf = t as f64;
        let ind = if t == 0 {
            // r in {0, .., m-1}: indicator of r = 0
            let a = ly.relu(Lin::constant(1.0) - r.clone());
            let c = ly.relu(r.clone() * -1.0);
            a - c
        } else {
            let h1 = ly.relu(r.clone() - tf + 1.0);
            let h0 = ly.relu(r.clone() - tf);
            let hm = ly.relu(r.clone() - tf - 1.0);
            h1 - h0 * 2.0 + hm
        };
        if !last {
            r = ly.keep(r);
        }
        b.push(ly);
        pending = Some((bs, ind));
    }
    let mut lf = Layer::new();
    let (bs, ind) = pending.expect("m >= 1");
    acc = flush(&mut lf, acc, bs, ind, bits);
    b.push(lf);

    let v = acc * (1.0 / ((1u64 << bits) - 1) as f64);
    let mut lc = Layer::new();
    let lo = lc.relu(v.clone());
    let hi = lc.relu(v - 1.0);
    b.push(lc);
    b.finish(vec![lo - hi])
}

/// Selected bits `bit AND ind` added to the running code with their binary weights.
fn flush(ly: &mut Layer, acc: Lin, bs: Vec<Lin>, ind: Lin, bits: u32) -> Lin {
    let mut out = ly.keep(acc);
    for (bi, bit) in bs.into_iter().enumerate() {
        let p = ly.relu(bit + ind.clone() - 1.0);
        out = out + p * (1u64 << (bits as usize - 1 - bi)) as f64;
    }
    out
}
