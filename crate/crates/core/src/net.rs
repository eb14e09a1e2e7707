//! Explicit ReLU networks and the width/depth combinator calculus.
//!
//! A network is a list of affine layers `A_0, ..., A_L` with ReLU between
//! consecutive layers and none after the last. Width is the largest hidden
//! layer, depth is the number of activations (`L`).

use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::scalar::Scalar;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum NetError {
    #[error("dimension mismatch: expected {expected}, got {got}")]
    DimensionMismatch { expected: usize, got: usize },
    #[error("network list is empty")]
    Empty,
    #[error("expected {expected} networks, got {got}")]
    Count { expected: usize, got: usize },
    #[error("malformed layer: {0}")]
    Malformed(String),
}

/// Declared size budget `NN(W, L)`.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct SizeBudget {
    pub width: usize,
    pub depth: usize,
}

impl SizeBudget {
    pub fn new(width: usize, depth: usize) -> Self {
        Self { width, depth }
    }
}

#[derive(Debug, Error, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[error("budget exceeded: actual ({actual_width}, {actual_depth}) vs declared ({budget_width}, {budget_depth})")]
pub struct BudgetViolation {
    pub actual_width: usize,
    pub actual_depth: usize,
    pub budget_width: usize,
    pub budget_depth: usize,
}

/// Affine map `x -> W x + b`, rows stored as sorted `(column, weight)` lists.
///
/// Constructed weight matrices are extremely sparse, so only nonzeros are kept.
#[derive(Debug, Clone, PartialEq)]
pub struct AffineLayer<T> {
    cols: usize,
    rows: Vec<Vec<(usize, T)>>,
    bias: Vec<T>,
}

impl<T: Scalar> AffineLayer<T> {
    pub fn from_dense(weight: Vec<Vec<T>>, bias: Vec<T>) -> Result<Self, NetError> {
        if weight.len() != bias.len() {
            return Err(NetError::Malformed(format!(
                "{} weight rows, {} biases",
                weight.len(),
                bias.len()
            )));
        }
        let cols = weight.first().map_or(0, |r| r.len());
        let mut rows = Vec::with_capacity(weight.len());
        for r in weight {
            if r.len() != cols {
                return Err(NetError::Malformed("ragged weight matrix".into()));
            }
            rows.push(
                r.into_iter()
                    .enumerate()
                    .filter(|(_, w)| *w != T::zero())
                    .collect(),
            );
        }
        Ok(Self { cols, rows, bias })
    }

    /// Build from sparse rows; duplicate columns are summed in insertion order.
    pub fn from_rows(cols: usize, rows: Vec<Vec<(usize, T)>>, bias: Vec<T>) -> Self {
        assert_eq!(rows.len(), bias.len(), "row/bias count mismatch");
        let rows = rows
            .into_iter()
            .map(|mut r| {
                r.sort_by_key(|e| e.0);
                let mut out: Vec<(usize, T)> = Vec::with_capacity(r.len());
                for (c, w) in r {
                    assert!(c < cols, "column {c} out of range {cols}");
                    match out.last_mut() {
                        Some(last) if last.0 == c => last.1 = last.1 + w,
                        _ => out.push((c, w)),
                    }
                }
                out.retain(|e| e.1 != T::zero());
                out
            })
            .collect();
        Self { cols, rows, bias }
    }

    pub fn identity(n: usize) -> Self {
        Self::from_rows(
            n,
            (0..n).map(|i| vec![(i, T::one())]).collect(),
            vec![T::zero(); n],
        )
    }

    pub fn in_dim(&self) -> usize {
        self.cols
    }

    pub fn out_dim(&self) -> usize {
        self.rows.len()
    }

    pub fn bias(&self) -> &[T] {
        &self.bias
    }

    pub fn row(&self, r: usize) -> &[(usize, T)] {
        &self.rows[r]
    }

    pub fn nonzeros(&self) -> usize {
        self.rows.iter().map(Vec::len).sum()
    }

    pub fn dense_weight(&self) -> Vec<Vec<T>> {
        self.rows
            .iter()
            .map(|r| {
                let mut d = vec![T::zero(); self.cols];
                for &(c, w) in r {
                    d[c] = w;
                }
                d
            })
            .collect()
    }

    fn apply_into(&self, x: &[T], out: &mut Vec<T>) {
        out.clear();
        for (r, b) in self.rows.iter().zip(&self.bias) {
            let mut acc = T::zero();
            for &(c, w) in r {
                acc = acc + w * x[c];
            }
            out.push(acc + *b);
        }
    }

    /// `self ∘ inner` as a single affine map.
    fn after(&self, inner: &AffineLayer<T>) -> AffineLayer<T> {
        let mut rows = Vec::with_capacity(self.rows.len());
        let mut bias = Vec::with_capacity(self.rows.len());
        for (r, b) in self.rows.iter().zip(&self.bias) {
            let mut row = Vec::new();
            let mut acc = T::zero();
            for &(c, w) in r {
                for &(c2, w2) in &inner.rows[c] {
                    row.push((c2, w * w2));
                }
                acc = acc + w * inner.bias[c];
            }
            rows.push(row);
            bias.push(acc + *b);
        }
        AffineLayer::from_rows(inner.cols, rows, bias)
    }

    fn scaled(&self, c: T) -> AffineLayer<T> {
        AffineLayer {
            cols: self.cols,
            rows: self
                .rows
                .iter()
                .map(|r| r.iter().map(|&(j, w)| (j, w * c)).collect())
                .collect(),
            bias: self.bias.iter().map(|&b| b * c).collect(),
        }
    }

    fn shifted(&self, dc: usize) -> Vec<Vec<(usize, T)>> {
        self.rows
            .iter()
            .map(|r| r.iter().map(|&(j, w)| (j + dc, w)).collect())
            .collect()
    }
}

/// Feedforward ReLU network `A_L ∘ σ ∘ ... ∘ σ ∘ A_0`.
#[derive(Debug, Clone, PartialEq)]
pub struct ReluNetwork<T> {
    layers: Vec<AffineLayer<T>>,
    budget: Option<SizeBudget>,
}

impl<T: Scalar> ReluNetwork<T> {
    pub fn new(layers: Vec<AffineLayer<T>>) -> Result<Self, NetError> {
        if layers.is_empty() {
            return Err(NetError::Empty);
        }
        for w in layers.windows(2) {
            if w[1].in_dim() != w[0].out_dim() {
                return Err(NetError::DimensionMismatch {
                    expected: w[0].out_dim(),
                    got: w[1].in_dim(),
                });
            }
        }
        Ok(Self {
            layers,
            budget: None,
        })
    }

    /// Depth-0 network computing an affine map.
    pub fn affine(layer: AffineLayer<T>) -> Self {
        Self {
            layers: vec![layer],
            budget: None,
        }
    }

    /// Identity on `n` coordinates carried through `depth` activations by
    /// `σ(x), σ(-x)` pairs recombined with weights `(1, -1)`.
    pub fn identity(n: usize, depth: usize) -> Self {
        if depth == 0 {
            return Self::affine(AffineLayer::identity(n));
        }
        let one = T::one();
        let split = AffineLayer::from_rows(
            n,
            (0..n)
                .map(|i| vec![(i, one)])
                .chain((0..n).map(|i| vec![(i, -one)]))
                .collect(),
            vec![T::zero(); 2 * n],
        );
        let merge = AffineLayer::from_rows(
            2 * n,
            (0..n).map(|i| vec![(i, one), (i + n, -one)]).collect(),
            vec![T::zero(); n],
        );
        let mut layers = vec![split];
        for _ in 1..depth {
            layers.push(AffineLayer::identity(2 * n));
        }
        layers.push(merge);
        Self {
            layers,
            budget: None,
        }
    }

    /// Constant map `R^d -> R^k`.
    pub fn constant(d: usize, values: Vec<T>) -> Self {
        let k = values.len();
        Self::affine(AffineLayer::from_rows(d, vec![Vec::new(); k], values))
    }

    pub fn with_budget(mut self, budget: SizeBudget) -> Self {
        self.budget = Some(budget);
        self
    }

    pub fn budget(&self) -> Option<SizeBudget> {
        self.budget
    }

    pub fn layers(&self) -> &[AffineLayer<T>] {
        &self.layers
    }

    pub fn input_dim(&self) -> usize {
        self.layers[0].in_dim()
    }

    pub fn output_dim(&self) -> usize {
        self.layers[self.layers.len() - 1].out_dim()
    }

    pub fn width(&self) -> usize {
        self.layers[..self.layers.len() - 1]
            .iter()
            .map(AffineLayer::out_dim)
            .max()
            .unwrap_or(0)
    }

    pub fn depth(&self) -> usize {
        self.layers.len() - 1
    }

    /// `(actual width, actual depth)`.
    pub fn size(&self) -> (usize, usize) {
        (self.width(), self.depth())
    }

    /// Number of nonzero weights plus biases.
    pub fn param_count(&self) -> usize {
        self.layers.iter().map(|l| l.nonzeros() + l.out_dim()).sum()
    }

    pub fn assert_budget(&self) -> Result<(), BudgetViolation> {
        match self.budget {
            Some(b) => check_budget(self, b),
            None => Ok(()),
        }
    }

    pub fn evaluate(&self, x: &[T]) -> Result<Vec<T>, NetError> {
        if x.len() != self.input_dim() {
            return Err(NetError::DimensionMismatch {
                expected: self.input_dim(),
                got: x.len(),
            });
        }
        Ok(self.eval_unchecked(x))
    }

    fn eval_unchecked(&self, x: &[T]) -> Vec<T> {
        let mut cur = x.to_vec();
        let mut next = Vec::new();
        let last = self.layers.len() - 1;
        for (k, layer) in self.layers.iter().enumerate() {
            layer.apply_into(&cur, &mut next);
            if k < last {
                for v in next.iter_mut() {
                    *v = v.relu();
                }
            }
            std::mem::swap(&mut cur, &mut next);
        }
        cur
    }

    /// Scalar output of a single-output network.
    pub fn eval1(&self, x: &[T]) -> T {
        debug_assert_eq!(self.output_dim(), 1);
        self.evaluate(x).expect("input dimension")[0]
    }

    pub fn evaluate_batch(&self, xs: &[Vec<T>]) -> Result<Vec<Vec<T>>, NetError> {
        xs.par_iter().map(|x| self.evaluate(x)).collect()
    }

    /// Jacobian (`output_dim x input_dim`) with `σ'(0) = 0`.
    pub fn gradient(&self, x: &[T]) -> Result<Vec<Vec<T>>, NetError> {
        let (_, jac) = self.value_and_gradient(x)?;
        Ok(jac)
    }

    pub fn value_and_gradient(&self, x: &[T]) -> Result<(Vec<T>, Vec<Vec<T>>), NetError> {
        if x.len() != self.input_dim() {
            return Err(NetError::DimensionMismatch {
                expected: self.input_dim(),
                got: x.len(),
            });
        }
        let last = self.layers.len() - 1;
        let mut masks: Vec<Vec<bool>> = Vec::with_capacity(last);
        let mut cur = x.to_vec();
        let mut next = Vec::new();
        for (k, layer) in self.layers.iter().enumerate() {
            layer.apply_into(&cur, &mut next);
            if k < last {
                masks.push(next.iter().map(|v| *v > T::zero()).collect());
                for v in next.iter_mut() {
                    *v = v.relu();
                }
            }
            std::mem::swap(&mut cur, &mut next);
        }
        let mut jac = Vec::with_capacity(self.output_dim());
        for o in 0..self.output_dim() {
            let mut g = vec![T::zero(); self.layers[last].in_dim()];
            for &(c, w) in self.layers[last].row(o) {
                g[c] = w;
            }
            for k in (0..last).rev() {
                let layer = &self.layers[k];
                let mut h = vec![T::zero(); layer.in_dim()];
                for (r, gr) in g.iter().enumerate() {
                    if !masks[k][r] || *gr == T::zero() {
                        continue;
                    }
                    for &(c, w) in layer.row(r) {
                        h[c] = h[c] + *gr * w;
                    }
                }
                g = h;
            }
            jac.push(g);
        }
        Ok((cur, jac))
    }

    /// Multiply every output by `c` (folded into the last layer).
    pub fn scale_output(mut self, c: T) -> Self {
        let last = self.layers.len() - 1;
        self.layers[last] = self.layers[last].scaled(c);
        self
    }

    /// Post-compose with an affine map on the outputs.
    pub fn then_affine(self, a: AffineLayer<T>) -> Result<Self, NetError> {
        compose(&ReluNetwork::affine(a), &self)
    }

    /// Pre-compose with an affine map on the inputs.
    pub fn after_affine(self, a: AffineLayer<T>) -> Result<Self, NetError> {
        compose(&self, &ReluNetwork::affine(a))
    }

    /// Pad with identity layers on the output up to `depth`.
    pub fn padded_to(&self, depth: usize) -> Self {
        if depth <= self.depth() {
            return self.clone();
        }
        compose(
            &ReluNetwork::identity(self.output_dim(), depth - self.depth()),
            self,
        )
        .expect("identity matches output dimension")
    }
}

pub fn check_budget<T: Scalar>(net: &ReluNetwork<T>, b: SizeBudget) -> Result<(), BudgetViolation> {
    let (w, l) = net.size();
    if w <= b.width && l <= b.depth {
        Ok(())
    } else {
        Err(BudgetViolation {
            actual_width: w,
            actual_depth: l,
            budget_width: b.width,
            budget_depth: b.depth,
        })
    }
}

/// `outer ∘ inner`; the two boundary affine maps are merged.
pub fn compose<T: Scalar>(
    outer: &ReluNetwork<T>,
    inner: &ReluNetwork<T>,
) -> Result<ReluNetwork<T>, NetError> {
    if inner.output_dim() != outer.input_dim() {
        return Err(NetError::DimensionMismatch {
            expected: outer.input_dim(),
            got: inner.output_dim(),
        });
    }
    let n = inner.layers.len();
    let mut layers: Vec<AffineLayer<T>> = inner.layers[..n - 1].to_vec();
    layers.push(outer.layers[0].after(&inner.layers[n - 1]));
    layers.extend(outer.layers[1..].iter().cloned());
    ReluNetwork::new(layers)
}

/// Block-diagonal stacking of layer lists of equal length.
fn stack_diag<T: Scalar>(parts: &[&ReluNetwork<T>], share_input: bool) -> Vec<AffineLayer<T>> {
    let depth = parts[0].depth();
    let mut layers = Vec::with_capacity(depth + 1);
    for k in 0..=depth {
        let mut rows = Vec::new();
        let mut bias = Vec::new();
        let mut off = 0;
        for p in parts {
            let layer = &p.layers[k];
            let dc = if k == 0 && share_input { 0 } else { off };
            rows.extend(layer.shifted(dc));
            bias.extend_from_slice(layer.bias());
            off += layer.in_dim();
        }
        let cols = if k == 0 && share_input {
            parts[0].input_dim()
        } else {
            off
        };
        layers.push(AffineLayer::from_rows(cols, rows, bias));
    }
    layers
}

/// `(a(x_1), b(x_2))` on disjoint input slices; width `W_1 + W_2`, depth `max(L_1, L_2)`.
pub fn concat<T: Scalar>(a: &ReluNetwork<T>, b: &ReluNetwork<T>) -> ReluNetwork<T> {
    concat_all(&[a.clone(), b.clone()])
}

pub fn concat_all<T: Scalar>(nets: &[ReluNetwork<T>]) -> ReluNetwork<T> {
    let depth = nets.iter().map(ReluNetwork::depth).max().unwrap_or(0);
    let padded: Vec<ReluNetwork<T>> = nets.iter().map(|n| n.padded_to(depth)).collect();
    let refs: Vec<&ReluNetwork<T>> = padded.iter().collect();
    ReluNetwork::new(stack_diag(&refs, false)).expect("consistent stacking")
}

/// `Σ φ_i` with shared input; width `Σ W_i`, depth `max L_i`.
pub fn sum_parallel<T: Scalar>(nets: &[ReluNetwork<T>]) -> Result<ReluNetwork<T>, NetError> {
    let first = nets.first().ok_or(NetError::Empty)?;
    let (d, k) = (first.input_dim(), first.output_dim());
    for n in nets {
        if n.input_dim() != d {
            return Err(NetError::DimensionMismatch {
                expected: d,
                got: n.input_dim(),
            });
        }
        if n.output_dim() != k {
            return Err(NetError::DimensionMismatch {
                expected: k,
                got: n.output_dim(),
            });
        }
    }
    let depth = nets.iter().map(ReluNetwork::depth).max().unwrap_or(0);
    let padded: Vec<ReluNetwork<T>> = nets.iter().map(|n| n.padded_to(depth)).collect();
    let refs: Vec<&ReluNetwork<T>> = padded.iter().collect();
    let mut layers = stack_diag(&refs, true);
    let stacked = layers.pop().expect("at least one layer");
    let blocks = nets.len();
    let sum = AffineLayer::from_rows(
        k * blocks,
        (0..k)
            .map(|o| (0..blocks).map(|b| (b * k + o, T::one())).collect())
            .collect(),
        vec![T::zero(); k],
    );
    layers.push(sum.after(&stacked));
    ReluNetwork::new(layers)
}

/// `Σ φ_i` computed one network after another, carrying the input and the
/// running sum; width `max W_i + 2d + 2k`, depth `Σ L_i`.
pub fn sum_serial<T: Scalar>(nets: &[ReluNetwork<T>]) -> Result<ReluNetwork<T>, NetError> {
    let first = nets.first().ok_or(NetError::Empty)?;
    let (d, k) = (first.input_dim(), first.output_dim());
    for n in nets {
        if n.input_dim() != d || n.output_dim() != k {
            return Err(NetError::DimensionMismatch {
                expected: d,
                got: n.input_dim(),
            });
        }
    }
    let nets: Vec<ReluNetwork<T>> = nets.iter().map(|n| n.padded_to(1)).collect();
    let one = T::one();
    let zero = T::zero();
    let mut layers = Vec::new();

    // Layer 0: [A^1_0 x ; σ(x) ; σ(-x) ; 0 ; 0]
    {
        let a = &nets[0].layers[0];
        let mut rows = a.shifted(0);
        let mut bias = a.bias().to_vec();
        rows.extend((0..d).map(|i| vec![(i, one)]));
        rows.extend((0..d).map(|i| vec![(i, -one)]));
        rows.extend((0..2 * k).map(|_| Vec::new()));
        bias.extend(std::iter::repeat(zero).take(2 * d + 2 * k));
        layers.push(AffineLayer::from_rows(d, rows, bias));
    }
    for (idx, net) in nets.iter().enumerate() {
        let l = net.depth();
        // carries sit after the hidden block of the current net
        let carry = |rows: &mut Vec<Vec<(usize, T)>>, bias: &mut Vec<T>, from: usize| {
            for i in 0..2 * d + 2 * k {
                rows.push(vec![(from + i, one)]);
                bias.push(zero);
            }
        };
        for t in 1..l {
            let a = &net.layers[t];
            let mut rows = a.shifted(0);
            let mut bias = a.bias().to_vec();
            carry(&mut rows, &mut bias, a.in_dim());
            layers.push(AffineLayer::from_rows(a.in_dim() + 2 * d + 2 * k, rows, bias));
        }
        let out = &net.layers[l];
        let hw = out.in_dim();
        let xp = hw;
        let xm = hw + d;
        let ap = hw + 2 * d;
        let am = hw + 2 * d + k;
        let cols = hw + 2 * d + 2 * k;
        // acc + φ_idx(x) as a row over the current hidden layer
        let acc_row = |o: usize| -> Vec<(usize, T)> {
            let mut r: Vec<(usize, T)> = out.row(o).to_vec();
            r.push((ap + o, one));
            r.push((am + o, -one));
            r
        };
        if idx + 1 == nets.len() {
            let rows = (0..k).map(acc_row).collect();
            layers.push(AffineLayer::from_rows(cols, rows, out.bias().to_vec()));
        } else {
            let nxt = &nets[idx + 1].layers[0];
            let mut rows = Vec::new();
            let mut bias = Vec::new();
            for r in 0..nxt.out_dim() {
                let mut row = Vec::new();
                for &(c, wt) in nxt.row(r) {
                    row.push((xp + c, wt));
                    row.push((xm + c, -wt));
                }
                rows.push(row);
                bias.push(nxt.bias()[r]);
            }
            for i in 0..d {
                rows.push(vec![(xp + i, one)]);
                bias.push(zero);
            }
            for i in 0..d {
                rows.push(vec![(xm + i, one)]);
                bias.push(zero);
            }
            for o in 0..k {
                rows.push(acc_row(o));
                bias.push(out.bias()[o]);
            }
            for o in 0..k {
                rows.push(acc_row(o).into_iter().map(|(c, v)| (c, -v)).collect());
                bias.push(-out.bias()[o]);
            }
            layers.push(AffineLayer::from_rows(cols, rows, bias));
        }
    }
    ReluNetwork::new(layers)
}

/// Sum of `N_1 N_2` single-output networks arranged as `N_2` serial rows of
/// `N_1` parallel networks; width `≤ N_1 W + 2d + 2`, depth `≤ N_2 L`.
pub fn grid_sum<T: Scalar>(
    nets: &[ReluNetwork<T>],
    n1: usize,
    n2: usize,
) -> Result<ReluNetwork<T>, NetError> {
    if nets.len() != n1 * n2 || nets.is_empty() {
        return Err(NetError::Count {
            expected: n1 * n2,
            got: nets.len(),
        });
    }
    let rows: Vec<ReluNetwork<T>> = nets
        .chunks(n1)
        .map(sum_parallel)
        .collect::<Result<_, _>>()?;
    if rows.len() == 1 {
        return Ok(rows.into_iter().next().expect("one row"));
    }
    sum_serial(&rows)
}

#[derive(Debug, Clone, Serialize, Deserialize, PartialEq)]
struct LayerDoc {
    in_dim: usize,
    weight: Vec<Vec<f64>>,
    bias: Vec<f64>,
}

#[derive(Debug, Clone, Serialize, Deserialize, PartialEq)]
struct NetworkDoc {
    input_dim: usize,
    output_dim: usize,
    width: usize,
    depth: usize,
    budget: Option<SizeBudget>,
    layers: Vec<LayerDoc>,
}

impl<T: Scalar> ReluNetwork<T> {
    /// JSON document with dense nested-array layers and a metadata block.
    pub fn to_json(&self) -> String {
        let doc = NetworkDoc {
            input_dim: self.input_dim(),
            output_dim: self.output_dim(),
            width: self.width(),
            depth: self.depth(),
            budget: self.budget,
            layers: self
                .layers
                .iter()
                .map(|l| LayerDoc {
                    in_dim: l.in_dim(),
                    weight: l
                        .dense_weight()
                        .into_iter()
                        .map(|r| r.into_iter().map(Scalar::as_f64).collect())
                        .collect(),
                    bias: l.bias().iter().map(|b| b.as_f64()).collect(),
                })
                .collect(),
        };
        serde_json::to_string(&doc).expect("network document serializes")
    }

    pub fn from_json(s: &str) -> Result<Self, NetError> {
        let doc: NetworkDoc =
            serde_json::from_str(s).map_err(|e| NetError::Malformed(e.to_string()))?;
        let mut layers = Vec::with_capacity(doc.layers.len());
        for l in doc.layers {
            if l.weight.len() != l.bias.len() || l.weight.iter().any(|r| r.len() != l.in_dim) {
                return Err(NetError::Malformed("layer shape".into()));
            }
            let rows = l
                .weight
                .into_iter()
                .map(|r| {
                    r.into_iter()
                        .enumerate()
                        .filter(|(_, w)| *w != 0.0)
                        .map(|(c, w)| (c, T::of(w)))
                        .collect()
                })
                .collect();
            let bias = l.bias.into_iter().map(T::of).collect();
            layers.push(AffineLayer::from_rows(l.in_dim, rows, bias));
        }
        let mut net = ReluNetwork::new(layers)?;
        net.budget = doc.budget;
        Ok(net)
    }
}
