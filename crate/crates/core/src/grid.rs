//! Sparse grids: hierarchical index sets, hat and quadratic bases,
//! hierarchization and interpolant evaluation.

use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::scalar::Scalar;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum GridError {
    #[error("level components must be >= 1, got {0:?}")]
    InvalidLevel(Vec<i64>),
    #[error("position {position:?} is not in the index set of level {level:?}")]
    InvalidPosition { level: Vec<u32>, position: Vec<u64> },
    #[error("order m must be >= 2, got {0}")]
    InvalidOrder(usize),
    #[error("no basis shape table for order {0}")]
    MissingShapeTable(usize),
    #[error("non-finite sample at {0:?}")]
    NonFinite(Vec<f64>),
    #[error("budget n and dimension d must be >= 1")]
    InvalidBudget,
}

/// Level vector `l` and odd position vector `i`.
#[derive(Debug, Clone, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct MultiIndex {
    pub level: Vec<u32>,
    pub position: Vec<u64>,
}

impl MultiIndex {
    pub fn new(level: Vec<u32>, position: Vec<u64>) -> Result<Self, GridError> {
        let ok = level.len() == position.len()
            && level.iter().zip(&position).all(|(&l, &i)| {
                l >= 1 && l < 63 && i % 2 == 1 && i < (1u64 << l)
            });
        if !ok {
            return Err(GridError::InvalidPosition { level, position });
        }
        Ok(Self { level, position })
    }

    pub fn dim(&self) -> usize {
        self.level.len()
    }

    /// Grid point `(i_1 2^{-l_1}, ..., i_d 2^{-l_d})`, exact in binary.
    pub fn point<T: Scalar>(&self) -> Vec<T> {
        self.level
            .iter()
            .zip(&self.position)
            .map(|(&l, &i)| T::of(i as f64 / (1u64 << l) as f64))
            .collect()
    }

    /// Linear index `Σ_j (i_j - 1)/2 · Π_{r<j} 2^{l_r - 1}`.
    pub fn linear_index(&self) -> u64 {
        linear_index(&self.level, &self.position)
    }
}

pub fn linear_index(level: &[u32], position: &[u64]) -> u64 {
    let mut stride = 1u64;
    let mut idx = 0u64;
    for (&l, &i) in level.iter().zip(position) {
        idx += (i - 1) / 2 * stride;
        stride <<= l - 1;
    }
    idx
}

fn positions_from_linear(level: &[u32], mut idx: u64) -> Vec<u64> {
    level
        .iter()
        .map(|&l| {
            let size = 1u64 << (l - 1);
            let k = idx % size;
            idx /= size;
            2 * k + 1
        })
        .collect()
}

fn check_level(l: &[i64]) -> Result<Vec<u32>, GridError> {
    if l.is_empty() || l.iter().any(|&v| v < 1 || v > 62) {
        return Err(GridError::InvalidLevel(l.to_vec()));
    }
    Ok(l.iter().map(|&v| v as u32).collect())
}

/// All odd position vectors `1 <= i_j <= 2^{l_j} - 1`, first coordinate fastest.
pub fn hier_index_set(level: &[i64]) -> Result<Vec<Vec<u64>>, GridError> {
    let level = check_level(level)?;
    let count: u64 = level.iter().map(|&l| 1u64 << (l - 1)).product();
    Ok((0..count)
        .map(|k| positions_from_linear(&level, k))
        .collect())
}

/// Level vectors with `|l|_1 <= n + d - 1`, ordered by `|l|_1` then lexicographically.
pub fn enumerate_levels(n: usize, d: usize) -> Vec<Vec<u32>> {
    if n == 0 || d == 0 {
        return Vec::new();
    }
    let mut out = Vec::new();
    for total in d..=n + d - 1 {
        let mut cur = Vec::with_capacity(d);
        compositions(total, d, &mut cur, &mut out);
    }
    out
}

fn compositions(total: usize, parts: usize, cur: &mut Vec<u32>, out: &mut Vec<Vec<u32>>) {
    if parts == 1 {
        cur.push(total as u32);
        out.push(cur.clone());
        cur.pop();
        return;
    }
    for first in 1..=total - (parts - 1) {
        cur.push(first as u32);
        compositions(total - first, parts - 1, cur, out);
        cur.pop();
    }
}

/// One-dimensional hat `σ(1 - |2^l x - i|)`.
pub fn hat_1d<T: Scalar>(l: u32, i: u64, x: T) -> T {
    let t = x * T::of((1u64 << l) as f64) - T::of(i as f64);
    (T::one() - t.abs()).relu()
}

/// Single-kink ramp `σ(-2^l c x + c i + 1)`.
pub fn ramp<T: Scalar>(l: u32, i: u64, c: f64, x: T) -> T {
    let c = T::of(c);
    (-T::of((1u64 << l) as f64) * c * x + c * T::of(i as f64) + T::one()).relu()
}

/// Ramp coefficients `c_k` whose ramp product is the order-`m` basis shape.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ShapeTable {
    pub m: usize,
    pub c: Vec<f64>,
}

/// Shipped tables: `m = 3` only (the hat covers `m = 2` directly).
pub fn shape_table(m: usize) -> Result<ShapeTable, GridError> {
    match m {
        0 | 1 => Err(GridError::InvalidOrder(m)),
        3 => Ok(ShapeTable {
            m,
            c: vec![1.0, -1.0],
        }),
        _ => Err(GridError::MissingShapeTable(m)),
    }
}

/// Tensor basis function of order `m` (hat for `m = 2`, ramp products otherwise).
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub enum Basis {
    Hat(MultiIndex),
    HighOrder { index: MultiIndex, shape: ShapeTable },
}

impl Basis {
    pub fn new(index: MultiIndex, m: usize) -> Result<Self, GridError> {
        if m == 2 {
            Ok(Basis::Hat(index))
        } else {
            Ok(Basis::HighOrder {
                index,
                shape: shape_table(m)?,
            })
        }
    }

    pub fn index(&self) -> &MultiIndex {
        match self {
            Basis::Hat(ix) | Basis::HighOrder { index: ix, .. } => ix,
        }
    }

    /// The ramp factors `ρ_{l_j, i_j, k}(x_j)`, dimension-major.
    pub fn ramp_factors<T: Scalar>(&self, x: &[T]) -> Vec<T> {
        match self {
            Basis::Hat(_) => Vec::new(),
            Basis::HighOrder { index, shape } => index
                .level
                .iter()
                .zip(&index.position)
                .zip(x)
                .flat_map(|((&l, &i), &xj)| shape.c.iter().map(move |&c| ramp(l, i, c, xj)))
                .collect(),
        }
    }

    pub fn eval<T: Scalar>(&self, x: &[T]) -> T {
        match self {
            Basis::Hat(ix) => ix
                .level
                .iter()
                .zip(&ix.position)
                .zip(x)
                .fold(T::one(), |acc, ((&l, &i), &xj)| acc * hat_1d(l, i, xj)),
            Basis::HighOrder { .. } => self
                .ramp_factors(x)
                .into_iter()
                .fold(T::one(), |a, b| a * b),
        }
    }
}

fn basis_1d<T: Scalar>(m: usize, l: u32, i: u64, x: T) -> T {
    if m == 2 {
        hat_1d(l, i, x)
    } else {
        ramp(l, i, 1.0, x) * ramp(l, i, -1.0, x)
    }
}

/// Surpluses of one level vector, addressed by [`linear_index`].
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LevelBlock<T> {
    pub level: Vec<u32>,
    pub surpluses: Vec<T>,
}

impl<T: Scalar> LevelBlock<T> {
    pub fn positions(&self) -> impl Iterator<Item = (Vec<u64>, T)> + '_ {
        self.surpluses
            .iter()
            .enumerate()
            .map(|(k, &v)| (positions_from_linear(&self.level, k as u64), v))
    }

    pub fn max_abs(&self) -> T {
        self.surpluses
            .iter()
            .fold(T::zero(), |a, &v| a.max(v.abs()))
    }
}

/// `Σ_{|l|_1 <= n+d-1} Σ_{i ∈ I_l} v_{l,i} φ_{l,i}` of order `m`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SparseInterpolant<T> {
    pub m: usize,
    pub n: usize,
    pub d: usize,
    pub blocks: Vec<LevelBlock<T>>,
}

impl<T: Scalar> SparseInterpolant<T> {
    pub fn empty(m: usize, n: usize, d: usize) -> Self {
        Self {
            m,
            n,
            d,
            blocks: Vec::new(),
        }
    }

    pub fn entries(&self) -> Vec<(MultiIndex, T)> {
        self.blocks
            .iter()
            .flat_map(|b| {
                b.positions().map(|(position, v)| {
                    (
                        MultiIndex {
                            level: b.level.clone(),
                            position,
                        },
                        v,
                    )
                })
            })
            .collect()
    }

    pub fn len(&self) -> usize {
        self.blocks.iter().map(|b| b.surpluses.len()).sum()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    pub fn max_abs_surplus(&self) -> T {
        self.blocks
            .iter()
            .fold(T::zero(), |a, b| a.max(b.max_abs()))
    }

    /// Contribution of one level block at `x` (only the cell containing `x` is visited).
    pub fn eval_block(&self, block: &LevelBlock<T>, x: &[T]) -> T {
        let mut value = T::one();
        let mut idx = 0u64;
        let mut stride = 1u64;
        for (&l, &xj) in block.level.iter().zip(x) {
            let t = (xj * T::of((1u64 << l) as f64)).as_f64();
            let max_i = (1u64 << l) - 1;
            let i = ((t / 2.0).floor() as i64 * 2 + 1).clamp(1, max_i as i64) as u64;
            let b = basis_1d(self.m, l, i, xj);
            if b == T::zero() {
                return T::zero();
            }
            value = value * b;
            idx += (i - 1) / 2 * stride;
            stride <<= l - 1;
        }
        block.surpluses[idx as usize] * value
    }

    pub fn eval(&self, x: &[T]) -> T {
        self.blocks
            .iter()
            .fold(T::zero(), |acc, b| acc + self.eval_block(b, x))
    }
}

/// `interp_eval`: exact weighted sum of basis values.
pub fn interp_eval<T: Scalar>(interp: &SparseInterpolant<T>, x: &[T]) -> T {
    interp.eval(x)
}

/// Evaluate `f` at the grid point with boundary samples forced to zero.
fn sample<T: Scalar, F: Fn(&[T]) -> T>(f: &F, x: &[T]) -> Result<T, GridError> {
    if x.iter().any(|&v| v <= T::zero() || v >= T::one()) {
        return Ok(T::zero());
    }
    let v = f(x);
    if !v.is_finite() {
        return Err(GridError::NonFinite(x.iter().map(|v| v.as_f64()).collect()));
    }
    Ok(v)
}

/// Hierarchical surpluses of `f` on the level-`n` sparse grid.
///
/// `m = 2` applies the tensorized `[-1/2, 1, -1/2]` stencil at each node;
/// `m >= 3` subtracts coarser contributions level by level.
pub fn hierarchize<T, F>(f: F, n: usize, m: usize, d: usize) -> Result<SparseInterpolant<T>, GridError>
where
    T: Scalar,
    F: Fn(&[T]) -> T + Sync,
{
    if m < 2 {
        return Err(GridError::InvalidOrder(m));
    }
    if n == 0 || d == 0 {
        return Err(GridError::InvalidBudget);
    }
    if m > 2 {
        shape_table(m)?;
        return hierarchize_residual(&f, n, m, d);
    }
    let levels = enumerate_levels(n, d);
    let blocks = levels
        .into_par_iter()
        .map(|level| {
            let count = level.iter().map(|&l| 1usize << (l - 1)).product::<usize>();
            let mut surpluses = Vec::with_capacity(count);
            for k in 0..count {
                let pos = positions_from_linear(&level, k as u64);
                surpluses.push(stencil_surplus(&f, &level, &pos)?);
            }
            Ok(LevelBlock { level, surpluses })
        })
        .collect::<Result<Vec<_>, GridError>>()?;
    Ok(SparseInterpolant { m, n, d, blocks })
}

fn stencil_surplus<T: Scalar, F: Fn(&[T]) -> T>(
    f: &F,
    level: &[u32],
    pos: &[u64],
) -> Result<T, GridError> {
    let d = level.len();
    let mut total = T::zero();
    let mut x = vec![T::zero(); d];
    for code in 0..3usize.pow(d as u32) {
        let mut c = code;
        let mut weight = T::one();
        for j in 0..d {
            let off = (c % 3) as i64 - 1;
            c /= 3;
            if off != 0 {
                weight = weight * T::of(-0.5);
            }
            let num = pos[j] as i64 + off;
            x[j] = T::of(num as f64 / (1u64 << level[j]) as f64);
        }
        total = total + weight * sample(f, &x)?;
    }
    Ok(total)
}

fn hierarchize_residual<T: Scalar, F: Fn(&[T]) -> T + Sync>(
    f: &F,
    n: usize,
    m: usize,
    d: usize,
) -> Result<SparseInterpolant<T>, GridError> {
    let mut interp = SparseInterpolant::empty(m, n, d);
    for level in enumerate_levels(n, d) {
        let count = level.iter().map(|&l| 1usize << (l - 1)).product::<usize>();
        let surpluses = (0..count)
            .into_par_iter()
            .map(|k| {
                let pos = positions_from_linear(&level, k as u64);
                let ix = MultiIndex {
                    level: level.clone(),
                    position: pos,
                };
                let x: Vec<T> = ix.point();
                let fx = sample(f, &x)?;
                Ok(fx - interp.eval(&x))
            })
            .collect::<Result<Vec<T>, GridError>>()?;
        interp.blocks.push(LevelBlock { level, surpluses });
    }
    Ok(interp)
}

/// Theoretical interpolation error: `2^{-2n}(nd)^{3(d-1)}` for `m = 2`,
/// `C 2^{-mn} n^{d-1}` for `m >= 3`.
pub fn interp_error_bound(n: usize, m: usize, d: usize, _p: f64, c: Option<f64>) -> Result<f64, GridError> {
    match m {
        0 | 1 => Err(GridError::InvalidOrder(m)),
        2 => Ok(2f64.powi(-2 * n as i32) * ((n * d) as f64).powi(3 * (d as i32 - 1))),
        _ => Ok(c.unwrap_or(1.0) * 2f64.powi(-((m * n) as i32)) * (n as f64).powi(d as i32 - 1)),
    }
}
