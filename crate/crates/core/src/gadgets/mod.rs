//! Primitive constructions with their contracts: step networks, point fitters,
//! product approximators and the partition of unity.

pub mod builder;
mod fitter;
mod partition;
mod product;
mod step;
pub mod suite;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::net::{ReluNetwork, SizeBudget};

pub use fitter::{fitter_bits, point_fitter};
pub use partition::{omega_contains, partition_g, partition_net, support_localization_check, zigzag_net, PartitionG};
pub use product::{product2, product2_with, product_chain, product_multi};
pub use step::{staircase, step_network};
pub(crate) use partition::append_frac_dist;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum GadgetError {
    #[error("K = {k} exceeds the capacity {cap} of the given budget")]
    TooManyCells { k: u64, cap: u64 },
    #[error("trim width {eps} outside (0, 1/(3K)] for K = {k}")]
    BadTrim { k: u64, eps: f64 },
    #[error("sample {index} = {value} outside [0, 1]")]
    SampleOutOfRange { index: usize, value: f64 },
    #[error("no samples given")]
    NoSamples,
    #[error("{bits} bits requested; at most 40 are supported")]
    TooManyBits { bits: u32 },
    #[error("invalid parameter: {0}")]
    BadParameter(String),
    #[error("no internal layout fits the size budget {0:?}")]
    NoLayout(SizeBudget),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Norm {
    Sup,
    W1Inf,
}

/// Where a contract's error bound is claimed to hold.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "kebab-case")]
pub enum Region {
    /// Axis-aligned box, one closed interval per coordinate.
    Box { bounds: Vec<(f64, f64)> },
    /// Union of `[k/K, (k+1)/K - eps]`, last cell untrimmed.
    Trimmed { cells: u64, eps: f64 },
    /// The integers `0..count`.
    Integers { count: u64 },
}

impl Region {
    pub fn contains(&self, x: &[f64]) -> bool {
        match self {
            Region::Box { bounds } => {
                bounds.len() == x.len()
                    && bounds.iter().zip(x).all(|(&(lo, hi), &v)| lo <= v && v <= hi)
            }
            Region::Trimmed { cells, eps } => x.iter().all(|&v| in_trimmed(*cells, *eps, v)),
            Region::Integers { count } => {
                x.len() == 1 && x[0].fract() == 0.0 && x[0] >= 0.0 && x[0] < *count as f64
            }
        }
    }

    pub fn is_empty(&self) -> bool {
        match self {
            Region::Box { bounds } => bounds.is_empty() || bounds.iter().any(|&(lo, hi)| lo > hi),
            Region::Trimmed { cells, eps } => *cells == 0 || *eps * *cells as f64 >= 1.0,
            Region::Integers { count } => *count == 0,
        }
    }
}

/// Membership in the safe set of a `cells`-cell step network with trim `eps`.
pub fn in_trimmed(cells: u64, eps: f64, v: f64) -> bool {
    if !(0.0..=1.0).contains(&v) {
        return false;
    }
    let k = cells as f64;
    let cell = ((v * k).floor() as u64).min(cells - 1);
    if cell + 1 >= cells {
        return true;
    }
    v <= (cell + 1) as f64 / k - eps
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GadgetContract {
    pub name: String,
    pub size: SizeBudget,
    pub error_bound: f64,
    pub norm: Norm,
    pub region: Region,
}

impl GadgetContract {
    pub fn size_ok(&self, net: &ReluNetwork<f64>) -> bool {
        net.width() <= self.size.width && net.depth() <= self.size.depth
    }
}

/// `|Π a - Π b| <= 2^m eps` for tuples with `|a_i| <= 2`, `|b_i| <= 1`, `|a_i - b_i| <= eps`.
pub fn perturbation_bound_holds(a: &[f64], b: &[f64], eps: f64) -> bool {
    let m = a.len() as i32;
    let pa: f64 = a.iter().product();
    let pb: f64 = b.iter().product();
    (pa - pb).abs() <= 2f64.powi(m) * eps
}
