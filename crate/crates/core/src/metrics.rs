//! L_p and W^1_p error estimation, and log-log rate fitting.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::corpus::TestFunction;
use crate::net::ReluNetwork;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum MetricsError {
    #[error("p must be finite and >= 1, got {0}")]
    BadExponent(f64),
    #[error("dimension mismatch: target d = {target}, network input {net}")]
    DimensionMismatch { target: usize, net: usize },
    #[error("invalid quadrature configuration: {0}")]
    BadConfig(String),
    #[error("need at least 3 records, got {0}")]
    TooFewRecords(usize),
    #[error("sizes and errors must be positive")]
    NonPositive,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "mode", rename_all = "kebab-case")]
pub enum QuadMode {
    /// Midpoint rule with `per_axis` cells per coordinate.
    TensorGrid { per_axis: usize },
    MonteCarlo { samples: usize },
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct QuadratureConfig {
    pub mode: QuadMode,
    pub seed: u64,
    /// Shift applied to midpoints, as a fraction of the cell width.
    pub offset: f64,
}

/// Default shift: `(√2 - 1)/4` of a cell, so no sample sits on a dyadic breakpoint
/// of the cell mesh or its half.
pub const DEFAULT_OFFSET: f64 = 0.103_553_390_593_273_76;

impl QuadratureConfig {
    pub fn tensor(per_axis: usize) -> Self {
        Self {
            mode: QuadMode::TensorGrid { per_axis },
            seed: 0,
            offset: DEFAULT_OFFSET,
        }
    }

    pub fn monte_carlo(samples: usize, seed: u64) -> Self {
        Self {
            mode: QuadMode::MonteCarlo { samples },
            seed,
            offset: DEFAULT_OFFSET,
        }
    }

    /// `2^14` points for d = 1, `2^9` per axis for d = 2, `10^6` Monte Carlo samples beyond.
    pub fn default_for(d: usize) -> Self {
        match d {
            1 => Self::tensor(1 << 14),
            2 => Self::tensor(1 << 9),
            _ => Self::monte_carlo(1_000_000, 0),
        }
    }

    pub fn validate(&self) -> Result<(), MetricsError> {
        let res = match self.mode {
            QuadMode::TensorGrid { per_axis } => per_axis,
            QuadMode::MonteCarlo { samples } => samples,
        };
        if res < 2 {
            return Err(MetricsError::BadConfig("resolution must be >= 2".into()));
        }
        if !(self.offset > 0.0 && self.offset < 0.5) {
            return Err(MetricsError::BadConfig(
                "offset must lie strictly inside (0, 1/2) of a cell".into(),
            ));
        }
        Ok(())
    }

    /// Sample points (equal weights).
    pub fn points(&self, d: usize) -> Vec<Vec<f64>> {
        match self.mode {
            QuadMode::TensorGrid { per_axis } => tensor_points(d, per_axis, self.offset),
            QuadMode::MonteCarlo { samples } => {
                let mut rng = ChaCha8Rng::seed_from_u64(self.seed);
                (0..samples)
                    .map(|_| (0..d).map(|_| rng.gen::<f64>()).collect())
                    .collect()
            }
        }
    }
}

/// 1-d midpoint nodes `(k + 1/2 + offset)/N`.
pub fn axis_nodes(per_axis: usize, offset: f64) -> Vec<f64> {
    let h = 1.0 / per_axis as f64;
    (0..per_axis)
        .map(|k| (k as f64 + 0.5 + offset) * h)
        .collect()
}

fn tensor_points(d: usize, per_axis: usize, offset: f64) -> Vec<Vec<f64>> {
    let axis = axis_nodes(per_axis, offset);
    let total = per_axis.pow(d as u32);
    (0..total)
        .map(|mut k| {
            (0..d)
                .map(|_| {
                    let v = axis[k % per_axis];
                    k /= per_axis;
                    v
                })
                .collect()
        })
        .collect()
}

/// Deterministic pairwise summation.
pub fn pairwise_sum(v: &[f64]) -> f64 {
    if v.len() <= 64 {
        return v.iter().sum();
    }
    let mid = v.len() / 2;
    pairwise_sum(&v[..mid]) + pairwise_sum(&v[mid..])
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ErrorEstimate {
    pub value: f64,
    /// Tensor grid: |estimate - estimate at half resolution|. Monte Carlo: standard error.
    pub uncertainty: f64,
}

fn check_p(p: f64) -> Result<(), MetricsError> {
    if !(p.is_finite() && p >= 1.0) {
        return Err(MetricsError::BadExponent(p));
    }
    Ok(())
}

/// Per-point integrand `|e(x)|^p` summed into a p-norm estimate.
fn estimate<E>(integrand: E, d: usize, p: f64, q: &QuadratureConfig) -> Result<ErrorEstimate, MetricsError>
where
    E: Fn(&[f64]) -> f64 + Sync,
{
    check_p(p)?;
    q.validate()?;
    let run = |q: &QuadratureConfig| -> (f64, f64) {
        let pts = q.points(d);
        let vals: Vec<f64> = pts.par_iter().map(|x| integrand(x)).collect();
        let n = vals.len() as f64;
        let mean = pairwise_sum(&vals) / n;
        let sq: Vec<f64> = vals.iter().map(|v| (v - mean) * (v - mean)).collect();
        let var = pairwise_sum(&sq) / (n - 1.0).max(1.0);
        (mean, (var / n).sqrt())
    };
    let (mean, se) = run(q);
    let value = mean.max(0.0).powf(1.0 / p);
    let uncertainty = match q.mode {
        QuadMode::TensorGrid { per_axis } if per_axis >= 4 => {
            let coarse = QuadratureConfig {
                mode: QuadMode::TensorGrid {
                    per_axis: per_axis / 2,
                },
                ..*q
            };
            let (m2, _) = run(&coarse);
            (value - m2.max(0.0).powf(1.0 / p)).abs()
        }
        QuadMode::TensorGrid { .. } => f64::NAN,
        QuadMode::MonteCarlo { .. } => {
            // delta method on t -> t^{1/p}
            if mean > 0.0 {
                se * mean.powf(1.0 / p - 1.0) / p
            } else {
                0.0
            }
        }
    };
    Ok(ErrorEstimate { value, uncertainty })
}

/// `‖f - g‖_{L_p}` for arbitrary callables.
pub fn lp_distance<F, G>(f: F, g: G, d: usize, p: f64, q: &QuadratureConfig) -> Result<ErrorEstimate, MetricsError>
where
    F: Fn(&[f64]) -> f64 + Sync,
    G: Fn(&[f64]) -> f64 + Sync,
{
    estimate(|x| (f(x) - g(x)).abs().powf(p), d, p, q)
}

/// `‖f - g‖_{W^1_p}` where each callable returns `(value, gradient)`.
pub fn w1p_distance<F, G>(f: F, g: G, d: usize, p: f64, q: &QuadratureConfig) -> Result<ErrorEstimate, MetricsError>
where
    F: Fn(&[f64]) -> (f64, Vec<f64>) + Sync,
    G: Fn(&[f64]) -> (f64, Vec<f64>) + Sync,
{
    estimate(
        |x| {
            let (fv, fg) = f(x);
            let (gv, gg) = g(x);
            (fv - gv).abs().powf(p)
                + fg
                    .iter()
                    .zip(&gg)
                    .map(|(a, b)| (a - b).abs().powf(p))
                    .sum::<f64>()
        },
        d,
        p,
        q,
    )
}

fn check_dims(f: &TestFunction, net: &ReluNetwork<f64>) -> Result<(), MetricsError> {
    if f.dim() != net.input_dim() || net.output_dim() != 1 {
        return Err(MetricsError::DimensionMismatch {
            target: f.dim(),
            net: net.input_dim(),
        });
    }
    Ok(())
}

pub fn lp_error(
    f: &TestFunction,
    net: &ReluNetwork<f64>,
    p: f64,
    q: &QuadratureConfig,
) -> Result<ErrorEstimate, MetricsError> {
    check_dims(f, net)?;
    lp_distance(|x| f.eval(x), |x| net.eval1(x), f.dim(), p, q)
}

pub fn w1p_error(
    f: &TestFunction,
    net: &ReluNetwork<f64>,
    p: f64,
    q: &QuadratureConfig,
) -> Result<ErrorEstimate, MetricsError> {
    check_dims(f, net)?;
    w1p_distance(
        |x| (f.eval(x), f.gradient(x)),
        |x| {
            let (v, j) = net.value_and_gradient(x).expect("checked dimensions");
            (v[0], j.into_iter().next().expect("one output"))
        },
        f.dim(),
        p,
        q,
    )
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct RateFit {
    pub slope: f64,
    pub r2: f64,
}

/// Least-squares slope of `log(error)` against `log(size)`.
pub fn fit_rate(records: &[(f64, f64)]) -> Result<RateFit, MetricsError> {
    if records.len() < 3 {
        return Err(MetricsError::TooFewRecords(records.len()));
    }
    if records.iter().any(|&(s, e)| !(s > 0.0) || !(e > 0.0)) {
        return Err(MetricsError::NonPositive);
    }
    let xs: Vec<f64> = records.iter().map(|r| r.0.ln()).collect();
    let ys: Vec<f64> = records.iter().map(|r| r.1.ln()).collect();
    let n = xs.len() as f64;
    let mx = xs.iter().sum::<f64>() / n;
    let my = ys.iter().sum::<f64>() / n;
    let sxx: f64 = xs.iter().map(|x| (x - mx).powi(2)).sum();
    let sxy: f64 = xs.iter().zip(&ys).map(|(x, y)| (x - mx) * (y - my)).sum();
    let syy: f64 = ys.iter().map(|y| (y - my).powi(2)).sum();
    if sxx == 0.0 {
        return Err(MetricsError::BadConfig("all sizes equal".into()));
    }
    let slope = sxy / sxx;
    let r2 = if syy == 0.0 {
        1.0
    } else {
        (sxy * sxy) / (sxx * syy)
    };
    Ok(RateFit { slope, r2 })
}

/// Log-log fit over a sweep with its records kept.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RateReport {
    pub records: Vec<(f64, f64)>,
    pub fit: Option<RateFit>,
}

impl RateReport {
    pub fn new(records: Vec<(f64, f64)>) -> Self {
        let fit = fit_rate(&records).ok();
        Self { records, fit }
    }
}
