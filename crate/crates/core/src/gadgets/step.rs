use super::builder::{Builder, Layer, Lin};
use super::{GadgetContract, GadgetError, Norm, Region};
use crate::net::{ReluNetwork, SizeBudget};

/// Appends a multi-stage staircase to `b`: returns `floor(y)` for `y` in `[0, range)`
/// whenever `y` is at least `delta` below the next integer.
///
/// Each stage splits the current range into `jumps + 1` blocks and subtracts the block
/// offset. `carries` are nonnegative values threaded through unchanged.
pub fn staircase(
    b: &mut Builder,
    y: Lin,
    range: u64,
    delta: f64,
    jumps: usize,
    carries: Vec<Lin>,
) -> (Lin, Vec<Lin>) {
    let mut y = y;
    let mut range = range;
    let mut acc: Option<Lin> = None;
    let mut carries = carries;
    let inv = 1.0 / (0.8 * delta);
    while range > 1 {
        let block = range.div_ceil(jumps as u64 + 1);
        let pos: Vec<u64> = (1..=jumps as u64)
            .map(|j| j * block)
            .filter(|&p| p < range)
            .collect();

        let mut la = Layer::new();
        let us: Vec<Lin> = pos
            .iter()
            .map(|&p| la.relu((y.clone() - p as f64 + 0.9 * delta) * inv))
            .collect();
        let yk = la.keep(y);
        let ak = acc.map(|a| la.keep(a));
        let ck: Vec<Lin> = carries.into_iter().map(|c| la.keep(c)).collect();
        b.push(la);

        let mut lb = Layer::new();
        let ws: Vec<Lin> = us.into_iter().map(|u| lb.relu(Lin::constant(1.0) - u)).collect();
        let yk = lb.keep(yk);
        let ak = ak.map(|a| lb.keep(a));
        carries = ck.into_iter().map(|c| lb.keep(c)).collect();
        b.push(lb);

        let count = Lin::constant(pos.len() as f64) - Lin::sum(ws);
        y = yk - count.clone() * block as f64;
        let step = count * block as f64;
        acc = Some(match ak {
            Some(a) => a + step,
            None => step,
        });
        range = block;
    }
    (acc.unwrap_or_default(), carries)
}

/// Network equal to `k` on `[k/K, (k+1)/K - eps]` (last cell untrimmed).
pub fn step_network(
    k: u64,
    w: usize,
    l: usize,
    eps: f64,
) -> Result<(ReluNetwork<f64>, GadgetContract), GadgetError> {
    if w == 0 || l == 0 || k == 0 {
        return Err(GadgetError::BadParameter("W, L, K must be positive".into()));
    }
    let cap = (w as u64 * l as u64).pow(2);
    if k > cap {
        return Err(GadgetError::TooManyCells { k, cap });
    }
    if !(eps > 0.0 && eps <= 1.0 / (3.0 * k as f64)) {
        return Err(GadgetError::BadTrim { k, eps });
    }
    let contract = GadgetContract {
        name: "step".into(),
        size: SizeBudget {
            width: 4 * w + 3,
            depth: 4 * l + 5,
        },
        error_bound: f64::MIN_POSITIVE,
        norm: Norm::Sup,
        region: Region::Trimmed { cells: k, eps },
    };
    if k == 1 {
        return Ok((ReluNetwork::constant(1, vec![0.0]), contract));
    }
    let kf = k as f64;
    let (mut b, x) = Builder::new(1);
    // clamp y = Kx into [0, K - 1/2]
    let mut lc = Layer::new();
    let lo = lc.relu(x[0].clone() * kf);
    let hi = lc.relu(x[0].clone() * kf - (kf - 0.5));
    b.push(lc);
    let (out, _) = staircase(&mut b, lo - hi, k, kf * eps, 4 * w, Vec::new());
    Ok((b.finish(vec![out]), contract))
}
