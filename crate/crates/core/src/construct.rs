//! End-to-end assemblies: sparse-grid blocks compiled through the gadgets and
//! summed into one network.

use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::corpus::TestFunction;
use crate::gadgets::builder::{Builder, Layer, Lin};
use crate::gadgets::{
    fitter_bits, in_trimmed, partition_net, point_fitter, product2, product_chain, product_multi, step_network,
    GadgetError,
};
use crate::grid::{hierarchize, interp_error_bound, GridError, LevelBlock, SparseInterpolant};
use crate::metrics::{w1p_distance, ErrorEstimate, MetricsError, QuadratureConfig};
use crate::net::{compose, concat_all, grid_sum, sum_parallel, AffineLayer, NetError, ReluNetwork, SizeBudget};

#[derive(Debug, Error, Clone, PartialEq)]
pub enum ConstructError {
    #[error(transparent)]
    Grid(#[from] GridError),
    #[error(transparent)]
    Gadget(#[from] GadgetError),
    #[error(transparent)]
    Net(#[from] NetError),
    #[error(transparent)]
    Metrics(#[from] MetricsError),
    #[error("level {level:?} needs {cells} cells; budget allows {cap}")]
    LevelTooFine { level: Vec<u32>, cells: u64, cap: u64 },
    #[error("coefficient {0} outside [-1, 1]")]
    CoefficientRange(f64),
    #[error("invalid configuration: {0}")]
    BadConfig(String),
}

type Net = ReluNetwork<f64>;

/// `Ω_ε^l` (one level) or the global `Ω_ε` (intersection over admissible levels).
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrimmedRegion {
    pub n: usize,
    pub d: usize,
    pub eps: f64,
    pub level: Option<Vec<u32>>,
}

impl TrimmedRegion {
    pub fn new(n: usize, d: usize, eps: f64, level: Option<Vec<u32>>) -> Result<Self, ConstructError> {
        if n == 0 || d == 0 {
            return Err(ConstructError::BadConfig("n and d must be positive".into()));
        }
        if !(eps > 0.0 && eps < 2f64.powi(-2 * n as i32)) {
            return Err(ConstructError::BadConfig(format!("eps = {eps} not in (0, 2^-2n)")));
        }
        if let Some(l) = &level {
            if l.len() != d || l.iter().any(|&v| v == 0) || l.iter().sum::<u32>() as usize > n + d - 1 {
                return Err(ConstructError::BadConfig(format!("level {l:?} not admissible")));
            }
        }
        Ok(Self { n, d, eps, level })
    }

    pub fn contains(&self, x: &[f64]) -> bool {
        if x.len() != self.d {
            return false;
        }
        match &self.level {
            Some(l) => l
                .iter()
                .zip(x)
                .all(|(&lj, &xj)| in_trimmed(1 << (lj - 1), self.eps, xj)),
            // every coordinate level from 1 to n occurs in some admissible l
            None => x
                .iter()
                .all(|&xj| (1..=self.n as u32).all(|lj| in_trimmed(1 << (lj - 1), self.eps, xj))),
        }
    }

    /// `μ(Ω \ Ω_ε) <= ε d 2^{n+d} (n+d)^d`.
    pub fn complement_measure_bound(&self) -> f64 {
        measure_factor(self.n, self.d) * self.eps
    }
}

fn measure_factor(n: usize, d: usize) -> f64 {
    d as f64 * 2f64.powi((n + d) as i32) * ((n + d) as f64).powi(d as i32)
}

/// `n = ceil(2 log2(2WL))`.
pub fn choose_n(w: usize, l: usize) -> usize {
    (2.0 * ((2 * w * l) as f64).log2()).ceil() as usize
}

/// Trim width making the trimmed-away strips cost at most `per_block_bound` in `L_p`.
pub fn choose_epsilon(n: usize, p: f64, d: usize, per_block_bound: f64, sup_estimate: f64) -> f64 {
    let cap = 2f64.powi(-2 * n as i32 - 1);
    if sup_estimate <= 0.0 {
        return cap;
    }
    let eps = (per_block_bound / sup_estimate).powf(p) / measure_factor(n, d);
    eps.min(cap)
}

fn dup(d: usize, pattern: &[usize]) -> AffineLayer<f64> {
    AffineLayer::from_rows(d, pattern.iter().map(|&c| vec![(c, 1.0)]).collect(), vec![0.0; pattern.len()])
}

fn check_level_fits(level: &[u32], w: usize, l: usize) -> Result<(), ConstructError> {
    let cap = (w as u64 * 2 * l as u64).pow(2);
    let cells: u64 = level.iter().map(|&lj| 1u64 << (lj - 1)).product();
    if cells > cap {
        return Err(ConstructError::LevelTooFine {
            level: level.to_vec(),
            cells,
            cap,
        });
    }
    Ok(())
}

/// `x -> (k_1, ..., k_d)` with `i_j = 2 k_j + 1` the odd position of the cell holding `x_j`.
fn position_encoder(level: &[u32], w: usize, l: usize, eps: f64) -> Result<Net, ConstructError> {
    check_level_fits(level, w, l)?;
    let steps = level
        .iter()
        .map(|&lj| step_network(1 << (lj - 1), w, 2 * l, eps).map(|s| s.0))
        .collect::<Result<Vec<_>, _>>()?;
    Ok(concat_all(&steps))
}

/// `Φ_l(x) = ind(i)`, exact on `Ω_ε^l`.
pub fn index_encoder(level: &[u32], w: usize, l: usize, eps: f64) -> Result<Net, ConstructError> {
    let pos = position_encoder(level, w, l, eps)?;
    let mut stride = 1u64;
    let mut row = Vec::new();
    for (j, &lj) in level.iter().enumerate() {
        row.push((j, stride as f64));
        stride <<= lj - 1;
    }
    Ok(pos.then_affine(AffineLayer::from_rows(level.len(), vec![row], vec![0.0]))?)
}

/// Per-block inputs.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BlockPlan {
    pub level: Vec<u32>,
    /// Normalized surpluses in linear-index order.
    pub coeffs: Vec<f64>,
    pub w: usize,
    pub l: usize,
    pub s: u32,
    pub m: usize,
    pub n: usize,
    pub eps: f64,
}

impl BlockPlan {
    fn d(&self) -> usize {
        self.level.len()
    }
}

fn check_coeffs(c: &[f64]) -> Result<(), ConstructError> {
    match c.iter().find(|v| !(v.abs() <= 1.0)) {
        Some(&v) => Err(ConstructError::CoefficientRange(v)),
        None => Ok(()),
    }
}

/// Per-dimension gate vanishing on the trims `[p - ε, p]` of a level-`lj` encoder,
/// rising with slope `2^{lj+1} γ` up to `cap`.
fn gate_net(lj: u32, eps: f64, gamma: f64, cap: f64, fmax: usize) -> Net {
    let cells = (1u64 << (lj - 1)) as f64;
    let e = eps * cells;
    let (mut b, x) = Builder::new(1);
    let v = x[0].clone() * cells + e / 2.0;
    let dist = crate::gadgets::append_frac_dist(&mut b, v, cells + 1.0, fmax);
    let arg = (dist - e / 2.0) * (4.0 * gamma);
    let mut lg = Layer::new();
    let hi = lg.relu(arg.clone());
    let lo = lg.relu(arg - 1.0);
    b.push(lg);
    b.finish(vec![(hi - lo) * cap])
}

/// Shared front end: `x -> (basis_1..basis_d, ind)` with optional gating.
fn block_front(plan: &BlockPlan, gated: bool) -> Result<Net, ConstructError> {
    let d = plan.d();
    let (w, l) = (plan.w, plan.l);
    let pos = position_encoder(&plan.level, w, l, plan.eps)?;
    let norm = 2f64.powi(-((plan.n + d - 1) as i32));
    let basis_cap = if plan.m == 2 { 1.0 } else { norm * norm };
    let gamma = if plan.m == 2 { 1.0 } else { 2.0 };
    let gate_dims: Vec<usize> = if gated {
        (0..d).filter(|&j| plan.level[j] >= 2).collect()
    } else {
        Vec::new()
    };
    let gates: Vec<Net> = gate_dims
        .iter()
        .map(|&j| gate_net(plan.level[j], plan.eps, gamma, basis_cap, 4 * w + 3))
        .collect();
    let mut parts = vec![pos, ReluNetwork::identity(d, 0)];
    parts.extend(gates);
    let mut pattern: Vec<usize> = (0..d).chain(0..d).collect();
    pattern.extend(gate_dims.iter().copied());
    let front = concat_all(&parts).after_affine(dup(d, &pattern))?;

    // (k, x, g) -> basis values and ind
    let ng = gate_dims.len();
    let (mut b, inp) = Builder::new(2 * d + ng);
    let mut l1 = Layer::new();
    let mut stride = 1u64;
    let mut ind = Lin::zero();
    let mut basis: Vec<Vec<Lin>> = Vec::with_capacity(d);
    for j in 0..d {
        let lj = plan.level[j];
        let t = inp[d + j].clone() * (1u64 << lj) as f64 - inp[j].clone() * 2.0 - 1.0;
        if plan.m == 2 {
            let a = l1.relu(t.clone() + 1.0);
            let c = l1.relu(t.clone());
            let e = l1.relu(t - 1.0);
            basis.push(vec![a - c * 2.0 + e]);
        } else {
            let r1 = l1.relu(Lin::constant(1.0) - t.clone());
            let r2 = l1.relu(t + 1.0);
            basis.push(vec![r1 * norm, r2 * norm]);
        }
        ind = ind + inp[j].clone() * stride as f64;
        stride <<= lj - 1;
    }
    let ind = l1.keep(ind);
    let gk: Vec<Lin> = (0..ng).map(|g| l1.keep(inp[2 * d + g].clone())).collect();
    b.push(l1);
    let mut outs: Vec<Lin> = basis.into_iter().flatten().collect();
    outs.push(ind);
    outs.extend(gk);
    let stage = b.finish(outs);
    let mut net = compose(&stage, &front)?;

    if plan.m != 2 {
        // per-dimension ramp products
        let shape = crate::grid::shape_table(plan.m)?;
        let (pb, pm) = product_params(w + 1, 7 * l);
        let mut prods: Vec<Net> = (0..d)
            .map(|_| product_chain(shape.c.len(), pb, pm, 2.0, 2.0))
            .collect();
        prods.push(ReluNetwork::identity(1 + ng, 0));
        net = compose(&concat_all(&prods), &net)?;
    }

    if gated {
        // σ(σ(h) - σ(h - g)) as a single neuron: exactly 0 wherever g = 0
        let (mut b, inp) = Builder::new(d + 1 + ng);
        let mut la = Layer::new();
        let mut gi = 0;
        let mut pairs = Vec::with_capacity(d);
        for j in 0..d {
            let h = inp[j].clone();
            if gate_dims.contains(&j) {
                let g = inp[d + 1 + gi].clone();
                gi += 1;
                pairs.push((la.relu(h.clone()), Some(la.relu(h - g))));
            } else {
                pairs.push((la.relu(h), None));
            }
        }
        let ind = la.keep(inp[d].clone());
        b.push(la);
        let mut lb = Layer::new();
        let mut outs: Vec<Lin> = pairs
            .into_iter()
            .map(|(a, c)| match c {
                Some(c) => lb.relu(a - c),
                None => lb.relu(a),
            })
            .collect();
        outs.push(lb.keep(ind));
        b.push(lb);
        net = compose(&b.finish(outs), &net)?;
    }
    Ok(net)
}

fn product_params(w: usize, l: usize) -> (usize, usize) {
    let b = (5 * w / 2).max(2);
    let mut m = 1;
    let mut p = b as f64;
    while m < 2 * l - 1 && p < 2f64.powi(60) {
        m += 1;
        p *= b as f64;
    }
    (b, m)
}

/// Fitter `s` lowered until the encoding needs at most 40 bits.
fn effective_s(w: usize, l: usize, s: u32) -> u32 {
    let mut s = s.max(1);
    while s > 1 && fitter_bits(w, l, s) > 40 {
        s -= 1;
    }
    s
}

/// `(basis..., ind) -> (basis..., ṽ) -> Π`.
fn block_back(plan: &BlockPlan, front: Net) -> Result<(Net, f64), ConstructError> {
    let d = plan.d();
    let (w, l) = (plan.w, plan.l);
    let xi: Vec<f64> = plan.coeffs.iter().map(|v| ((v + 1.0) / 2.0).clamp(0.0, 1.0)).collect();
    let s = effective_s(w, 2 * l, plan.s);
    let (fit, fc) = point_fitter(&xi, w, 2 * l, s)?;
    let carry = ReluNetwork::identity(d, fit.depth());
    let stage = concat_all(&[carry, fit]);
    let mut rows: Vec<Vec<(usize, f64)>> = (0..d).map(|j| vec![(j, 1.0)]).collect();
    rows.push(vec![(d, 2.0)]);
    let mut bias = vec![0.0; d];
    bias.push(-1.0);
    let stage = stage.then_affine(AffineLayer::from_rows(d + 1, rows, bias))?;
    let net = compose(&stage, &front)?;

    let (prod, prod_err) = if d == 1 {
        let (b, m) = product_params(w + 1, 14 * (d + 1) * l);
        let err = 6.0 * 9.0 * ((w + 1) as f64).powi(-((14 * (d + 1) * l) as i32));
        (crate::gadgets::product2_with(b, m, 3.0), err)
    } else {
        let lp = (2 * (d + 1) * l).div_ceil(d);
        let (p, c) = product_multi(d + 1, 3.0, w, lp)?;
        (p, c.error_bound)
    };
    let net = compose(&prod, &net)?;
    let fit_err = 2.0 * fc.error_bound;
    Ok((net, fit_err + prod_err))
}

/// Order-2 block `Σ_i v_i φ_{l,i}` on `Ω_ε^l`, with its error bound.
pub fn build_block_m2(plan: &BlockPlan) -> Result<(Net, f64), ConstructError> {
    if plan.m != 2 {
        return Err(ConstructError::BadConfig("build_block_m2 needs m = 2".into()));
    }
    check_coeffs(&plan.coeffs)?;
    let front = block_front(plan, false)?;
    let (net, _) = block_back(plan, front)?;
    let d = plan.d() as i32;
    let (w, l) = (plan.w as f64, plan.l as f64);
    let s = effective_s(plan.w, 2 * plan.l, plan.s) as i32;
    let bound = 3f64.powi(5 * d + 4) * (w + 1.0).powf(-14.0 * (d as f64 + 1.0) * l)
        + 2.0 * w.powi(-2 * s + 2) * (2.0 * l).powi(-2 * s + 2);
    Ok((net, bound))
}

/// Order-`m >= 3` block: normalized ramp products, rescaled at the output.
pub fn build_block_m3(plan: &BlockPlan) -> Result<(Net, f64), ConstructError> {
    if plan.m < 3 {
        return Err(ConstructError::BadConfig("build_block_m3 needs m >= 3".into()));
    }
    check_coeffs(&plan.coeffs)?;
    let front = block_front(plan, false)?;
    let (net, err) = block_back(plan, front)?;
    let scale = rescale(plan.m, plan.d(), plan.n);
    Ok((net.scale_output(scale), err * scale))
}

/// Output factor undoing the `2^{-(n+d-1)}` normalization of each ramp.
fn rescale(m: usize, d: usize, n: usize) -> f64 {
    2f64.powi(((m - 1) * d * (n + d - 1)) as i32)
}

/// Gated block for the `W^1_p` construction.
fn build_block_gated(plan: &BlockPlan) -> Result<(Net, f64), ConstructError> {
    check_coeffs(&plan.coeffs)?;
    let front = block_front(plan, true)?;
    let (net, err) = block_back(plan, front)?;
    if plan.m == 2 {
        Ok((net, err))
    } else {
        let scale = rescale(plan.m, plan.d(), plan.n);
        Ok((net.scale_output(scale), err * scale))
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Default, Serialize, Deserialize)]
pub struct BuildOptions {
    pub n: Option<usize>,
    pub s: Option<u32>,
    pub eps: Option<f64>,
    /// `C_{m,d}` in the order-`m` interpolation bound (default 1).
    pub c_md: Option<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ConstructionReport {
    pub d: usize,
    pub m: usize,
    pub w: usize,
    pub l: usize,
    pub n: usize,
    pub eps: f64,
    pub s: u32,
    /// Surplus normalization `c = max(1, max |v|)`.
    pub coeff_scale: f64,
    pub levels: Vec<Vec<u32>>,
    pub block_bounds: Vec<f64>,
    /// Max `|φ_l(x_{l,i}) - v_{l,i}|` over nodes inside `Ω_ε^l`.
    pub block_node_errors: Vec<f64>,
    pub block_bound_sum: f64,
    pub interp_bound: f64,
    pub layout: (usize, usize),
    pub width: usize,
    pub depth: usize,
    pub params: usize,
    pub budget: SizeBudget,
    pub budget_ok: bool,
}

fn log2_8(x: usize) -> f64 {
    (8.0 * x as f64).log2()
}

fn theorem1_budget(d: usize, w: usize, l: usize) -> SizeBudget {
    let c1 = 112.0 * d as f64 * (2.0 * d as f64).powi(d as i32);
    let c2 = 320.0 * (d * d) as f64;
    SizeBudget {
        width: (c1 * w as f64 * log2_8(w).powi(d as i32 + 1)).floor() as usize,
        depth: (c2 * l as f64 * log2_8(l).powi(d as i32 + 1)).floor() as usize,
    }
}

struct Prepared {
    interp: SparseInterpolant<f64>,
    n: usize,
    c: f64,
    s: u32,
}

fn prepare(f: &TestFunction, m: usize, w: usize, l: usize, opts: &BuildOptions) -> Result<Prepared, ConstructError> {
    if w == 0 || l == 0 {
        return Err(ConstructError::BadConfig("W and L must be positive".into()));
    }
    if m < 2 {
        return Err(ConstructError::BadConfig(format!("order m = {m} < 2")));
    }
    let d = f.dim();
    let n = opts.n.unwrap_or_else(|| choose_n(w, l));
    let interp = hierarchize(|x: &[f64]| f.eval(x), n, m, d)?;
    let c = interp.max_abs_surplus().max(1.0);
    let s = opts.s.unwrap_or(if m == 2 { 3 } else { (m * d + m) as u32 });
    Ok(Prepared { interp, n, c, s })
}

fn plans(prep: &Prepared, m: usize, w: usize, l: usize, eps: f64) -> Vec<BlockPlan> {
    prep.interp
        .blocks
        .iter()
        .map(|b: &LevelBlock<f64>| BlockPlan {
            level: b.level.clone(),
            coeffs: b.surpluses.iter().map(|v| v / prep.c).collect(),
            w,
            l,
            s: prep.s,
            m,
            n: prep.n,
            eps,
        })
        .collect()
}

fn node_error(net: &Net, block: &LevelBlock<f64>, c: f64, region: &TrimmedRegion) -> f64 {
    block
        .positions()
        .filter_map(|(pos, v)| {
            let x: Vec<f64> = block
                .level
                .iter()
                .zip(&pos)
                .map(|(&l, &i)| i as f64 / (1u64 << l) as f64)
                .collect();
            region.contains(&x).then(|| (net.eval1(&x) * c - v).abs())
        })
        .fold(0.0, f64::max)
}

fn pad_and_sum(mut nets: Vec<Net>, d: usize, n2: usize) -> Result<(Net, (usize, usize)), ConstructError> {
    if nets.is_empty() {
        return Ok((ReluNetwork::constant(d, vec![0.0]), (1, 1)));
    }
    let n2 = n2.clamp(1, nets.len());
    let n1 = nets.len().div_ceil(n2);
    nets.resize(n1 * n2, ReluNetwork::constant(d, vec![0.0]));
    Ok((grid_sum(&nets, n1, n2)?, (n1, n2)))
}

/// Sparse-grid network for `f` in `L_p`.
pub fn build_theorem1(
    f: &TestFunction,
    m: usize,
    w: usize,
    l: usize,
    p: f64,
    opts: &BuildOptions,
) -> Result<(Net, ConstructionReport), ConstructError> {
    let d = f.dim();
    let prep = prepare(f, m, w, l, opts)?;
    let n = prep.n;
    let s_eff = effective_s(w, 2 * l, prep.s);

    // bound with a placeholder trim; the trim does not enter the bound
    let probe = plans(&prep, m, w, l, 2f64.powi(-2 * n as i32 - 1));
    let unit_bound = if m == 2 {
        let (wf, lf, s) = (w as f64, l as f64, s_eff as i32);
        3f64.powi(5 * d as i32 + 4) * (wf + 1.0).powf(-14.0 * (d as f64 + 1.0) * lf)
            + 2.0 * wf.powi(-2 * s + 2) * (2.0 * lf).powi(-2 * s + 2)
    } else {
        2.0 * ((w * 2 * l) as f64).powi(-2 * s_eff as i32)
    };
    let per_block = unit_bound * prep.c * if m == 2 { 1.0 } else { rescale(m, d, n) };
    let eps = opts
        .eps
        .unwrap_or_else(|| choose_epsilon(n, p, d, per_block, 2.0 * prep.c * (1.0 + unit_bound)));
    let region_plans: Vec<BlockPlan> = probe.into_iter().map(|pl| BlockPlan { eps, ..pl }).collect();

    let built: Vec<(Net, f64)> = region_plans
        .par_iter()
        .map(|pl| if m == 2 { build_block_m2(pl) } else { build_block_m3(pl) })
        .collect::<Result<_, _>>()?;

    let mut node_errors = Vec::with_capacity(built.len());
    for ((net, _), block) in built.iter().zip(&prep.interp.blocks) {
        let region = TrimmedRegion::new(n, d, eps, Some(block.level.clone()))?;
        node_errors.push(node_error(net, block, prep.c, &region));
    }
    let block_bounds: Vec<f64> = built.iter().map(|(_, b)| b * prep.c).collect();
    let nets: Vec<Net> = built.into_iter().map(|(n, _)| n).collect();
    let n2 = log2_8(l).powi(d as i32).floor() as usize;
    let (net, layout) = pad_and_sum(nets, d, n2)?;
    let budget = theorem1_budget(d, w, l);
    let net = net.scale_output(prep.c).with_budget(budget);
    let interp_bound = interp_error_bound(n, m, d, p, opts.c_md)?;
    let report = ConstructionReport {
        d,
        m,
        w,
        l,
        n,
        eps,
        s: s_eff,
        coeff_scale: prep.c,
        levels: prep.interp.blocks.iter().map(|b| b.level.clone()).collect(),
        block_bound_sum: block_bounds.iter().sum(),
        block_bounds,
        block_node_errors: node_errors,
        interp_bound,
        layout,
        width: net.width(),
        depth: net.depth(),
        params: net.param_count(),
        budget,
        budget_ok: net.assert_budget().is_ok(),
    };
    Ok((net, report))
}

fn log2_floor1(x: usize) -> f64 {
    (x as f64).log2().max(1.0)
}

fn psi_budget(d: usize, m: usize, w: usize, l: usize) -> SizeBudget {
    let (df, mf) = (d as f64, m as f64);
    let c4 = 68.0 * df * (2.0 * df).powi(d as i32) * mf * mf;
    let c5 = 89.0 * df * df * mf * mf;
    SizeBudget {
        width: (c4 * w as f64 * log2_floor1(w).powi(d as i32 + 1)).floor() as usize,
        depth: (c5 * l as f64 * log2_floor1(l).powi(d as i32 + 1)).floor() as usize,
    }
}

fn theorem2_budget(d: usize, m: usize, w: usize, l: usize) -> SizeBudget {
    let (df, mf) = (d as f64, m as f64);
    let c4 = 68.0 * df * (2.0 * df).powi(d as i32) * mf * mf;
    let c5 = 89.0 * df * df * mf * mf;
    let c6 = 2f64.powi(d as i32) * (c4 + 21.0 * df);
    let c7 = c5 + 8.0;
    SizeBudget {
        width: (c6 * w as f64 * log2_floor1(w).powi(d as i32 + 1)).floor() as usize,
        depth: (c7 * l as f64 * log2_floor1(l).powi(d as i32 + 1)).floor() as usize,
    }
}

/// Smallest row count `N2` whose grid-sum layout fits `budget`; falls back to all rows.
fn fit_layout(nets: &[Net], d: usize, budget: SizeBudget) -> usize {
    let bw = nets.iter().map(Net::width).max().unwrap_or(0);
    let bd = nets.iter().map(Net::depth).max().unwrap_or(0).max(1);
    let count = nets.len().max(1);
    (1..=count)
        .find(|&n2| {
            let n1 = count.div_ceil(n2);
            let width = if n2 == 1 { n1 * bw } else { n1 * bw + 2 * d + 2 };
            width <= budget.width && n2 * bd <= budget.depth
        })
        .unwrap_or(count)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PsiReport {
    pub k: Vec<u8>,
    pub n: usize,
    pub eps: f64,
    pub s: u32,
    pub coeff_scale: f64,
    pub block_bounds: Vec<f64>,
    pub layout: (usize, usize),
    pub width: usize,
    pub depth: usize,
    pub budget: SizeBudget,
    pub budget_ok: bool,
}

fn check_k(d: usize, k: &[u8]) -> Result<(), ConstructError> {
    if k.len() != d || k.iter().any(|&v| v != 1 && v != 2) {
        return Err(ConstructError::BadConfig(format!("k = {k:?} not in {{1,2}}^{d}")));
    }
    Ok(())
}

fn psi_eps(prep: &Prepared, p: f64, d: usize, w: usize, l: usize, opts: &BuildOptions) -> f64 {
    let n = prep.n;
    let bound = ((w * l) as f64).powi(-4);
    // sup of the local slope: gradients up to 2^{n+1} c on the trims
    let sup = prep.c * 2f64.powi(n as i32 + 1) * d as f64;
    opts.eps.unwrap_or_else(|| choose_epsilon(n, p, d, bound, sup))
}

fn build_psi(
    prep: &Prepared,
    m: usize,
    w: usize,
    l: usize,
    d: usize,
    eps: f64,
    k: &[u8],
) -> Result<(Net, PsiReport), ConstructError> {
    let s_eff = effective_s(w, 2 * l, prep.s);
    let built: Vec<(Net, f64)> = plans(prep, m, w, l, eps)
        .par_iter()
        .map(build_block_gated)
        .collect::<Result<_, _>>()?;
    let block_bounds: Vec<f64> = built.iter().map(|(_, b)| b * prep.c).collect();
    let nets: Vec<Net> = built.into_iter().map(|(n, _)| n).collect();
    let budget = psi_budget(d, m, w, l);
    let n2 = fit_layout(&nets, d, budget);
    let (net, layout) = pad_and_sum(nets, d, n2)?;
    let net = net.scale_output(prep.c).with_budget(budget);
    let report = PsiReport {
        k: k.to_vec(),
        n: prep.n,
        eps,
        s: s_eff,
        coeff_scale: prep.c,
        block_bounds,
        layout,
        width: net.width(),
        depth: net.depth(),
        budget,
        budget_ok: net.assert_budget().is_ok(),
    };
    Ok((net, report))
}

/// `ψ_k`: the sparse-grid network with every basis factor gated off the encoder trims,
/// accurate in `W^1_∞` on `Ω_k`.
pub fn build_psi_k(
    f: &TestFunction,
    m: usize,
    w: usize,
    l: usize,
    p: f64,
    k: &[u8],
    opts: &BuildOptions,
) -> Result<(Net, PsiReport), ConstructError> {
    let d = f.dim();
    check_k(d, k)?;
    let prep = prepare(f, m, w, l, opts)?;
    let eps = psi_eps(&prep, p, d, w, l, opts);
    build_psi(&prep, m, w, l, d, eps, k)
}

/// Pieces of the `W^1_p` assembly, kept for error decomposition.
#[derive(Debug, Clone)]
pub struct Theorem2Parts {
    pub phis: Vec<(Vec<u8>, Net)>,
    pub psi: Net,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Theorem2Report {
    pub d: usize,
    pub m: usize,
    pub w: usize,
    pub l: usize,
    pub n: usize,
    pub eps: f64,
    pub cells: u64,
    /// Domain half-width of the outer products.
    pub a: f64,
    pub psi: PsiReport,
    pub width: usize,
    pub depth: usize,
    pub params: usize,
    pub budget: SizeBudget,
    pub budget_ok: bool,
    /// `(E1, E2)` once measured by [`record_error_split`].
    pub error_split: Option<(ErrorEstimate, ErrorEstimate)>,
}

/// Sup bound on `|Π f|` and `|∇ Π f|` from the surpluses.
fn w1inf_bound(interp: &SparseInterpolant<f64>) -> f64 {
    let slope = if interp.m == 2 { 1.0 } else { 2.0 };
    interp
        .blocks
        .iter()
        .map(|b| b.max_abs() * slope * 2f64.powi(*b.level.iter().max().unwrap_or(&0) as i32))
        .sum::<f64>()
        .max(1.0)
}

/// `φ = Σ_k φ̃(φ_k, ψ_k)` approximating `f` in `W^1_p`.
pub fn build_theorem2(
    f: &TestFunction,
    m: usize,
    w: usize,
    l: usize,
    p: f64,
    opts: &BuildOptions,
) -> Result<(Net, Theorem2Report, Theorem2Parts), ConstructError> {
    let d = f.dim();
    let prep = prepare(f, m, w, l, opts)?;
    let eps = psi_eps(&prep, p, d, w, l, opts);
    let ones = vec![1u8; d];
    // gating makes ψ independent of k, so it is built once
    let (psi, psi_report) = build_psi(&prep, m, w, l, d, eps, &ones)?;
    let cells = (w as u64 * l as u64).pow(2);
    let a = w1inf_bound(&prep.interp) + 50.0 * (d as f64).powf(2.5) + 1.0;
    let (outer, _) = product2(w + 1, 4 * m * l, a)?;

    let kinds: Vec<Vec<u8>> = (0..1usize << d)
        .map(|mask| (0..d).map(|j| if mask >> j & 1 == 1 { 2 } else { 1 }).collect())
        .collect();
    let mut phis = Vec::with_capacity(kinds.len());
    let mut terms = Vec::with_capacity(kinds.len());
    for kind in kinds {
        let (phi, _) = partition_net(cells, d, &kind, w, l, prep.n)?;
        let pair = concat_all(&[phi.clone(), psi.clone()]).after_affine(dup(d, &(0..d).chain(0..d).collect::<Vec<_>>()))?;
        terms.push(compose(&outer, &pair)?);
        phis.push((kind, phi));
    }
    let budget = theorem2_budget(d, m, w, l);
    let net = sum_parallel(&terms)?.with_budget(budget);
    let report = Theorem2Report {
        d,
        m,
        w,
        l,
        n: prep.n,
        eps,
        cells,
        a,
        psi: psi_report,
        width: net.width(),
        depth: net.depth(),
        params: net.param_count(),
        budget,
        budget_ok: net.assert_budget().is_ok(),
        error_split: None,
    };
    Ok((net, report, Theorem2Parts { phis, psi }))
}

/// `W^1_p` split: `(‖f - Σ φ_k ψ_k‖, ‖Σ φ_k ψ_k - φ‖)`, the localization error and
/// the outer-product error.
pub fn theorem2_error_split(
    f: &TestFunction,
    net: &Net,
    parts: &Theorem2Parts,
    p: f64,
    q: &QuadratureConfig,
) -> Result<(ErrorEstimate, ErrorEstimate), ConstructError> {
    let d = f.dim();
    let local = |x: &[f64]| -> (f64, Vec<f64>) {
        let (pv, pg) = parts.psi.value_and_gradient(x).expect("dims");
        let mut v = 0.0;
        let mut g = vec![0.0; d];
        for (_, phi) in &parts.phis {
            let (fv, fg) = phi.value_and_gradient(x).expect("dims");
            v += fv[0] * pv[0];
            for j in 0..d {
                g[j] += fg[0][j] * pv[0] + fv[0] * pg[0][j];
            }
        }
        (v, g)
    };
    let target = |x: &[f64]| (f.eval(x), f.gradient(x));
    let full = |x: &[f64]| {
        let (v, g) = net.value_and_gradient(x).expect("dims");
        (v[0], g.into_iter().next().expect("one output"))
    };
    let e1 = w1p_distance(target, local, d, p, q)?;
    let e2 = w1p_distance(local, full, d, p, q)?;
    Ok((e1, e2))
}

/// Measures the split and stores it in `report`.
pub fn record_error_split(
    report: &mut Theorem2Report,
    f: &TestFunction,
    net: &Net,
    parts: &Theorem2Parts,
    p: f64,
    q: &QuadratureConfig,
) -> Result<(ErrorEstimate, ErrorEstimate), ConstructError> {
    let split = theorem2_error_split(f, net, parts, p, q)?;
    report.error_split = Some(split);
    Ok(split)
}
