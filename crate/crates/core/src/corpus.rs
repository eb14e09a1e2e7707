//! Target functions with zero boundary trace and closed-form mixed derivatives.

use std::f64::consts::PI;

use thiserror::Error;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum CorpusError {
    #[error("unknown function name `{0}`")]
    UnknownName(String),
    #[error("frequencies must be positive integers, got {0:?}")]
    BadFrequency(Vec<f64>),
    #[error("dimension must be >= 1")]
    BadDimension,
    #[error("`{name}` has {got} frequencies but d = {d}")]
    DimensionMismatch { name: String, got: usize, d: usize },
}

#[derive(Debug, Clone, PartialEq)]
enum Kind {
    /// `Π sin(ω_j π x_j)`
    Sine(Vec<u32>),
    /// `Π x_j (1 - x_j)`
    Bubble,
    Zero,
}

#[derive(Debug, Clone, PartialEq)]
pub struct TestFunction {
    name: String,
    d: usize,
    kind: Kind,
}

fn sin_deriv(w: u32, k: usize, x: f64) -> f64 {
    let a = w as f64 * PI;
    a.powi(k as i32) * (a * x + k as f64 * PI / 2.0).sin()
}

fn bubble_deriv(k: usize, x: f64) -> f64 {
    match k {
        0 => x * (1.0 - x),
        1 => 1.0 - 2.0 * x,
        2 => -2.0,
        _ => 0.0,
    }
}

/// `(∫_0^1 |sin(π x)|^p dx)^{1/p}` by composite Simpson.
fn sine_lp_factor(p: f64) -> f64 {
    if p == 2.0 {
        return std::f64::consts::FRAC_1_SQRT_2;
    }
    let n = 20_000;
    let h = 1.0 / n as f64;
    let mut s = 0.0;
    for k in 0..=n {
        let w = if k == 0 || k == n {
            1.0
        } else if k % 2 == 1 {
            4.0
        } else {
            2.0
        };
        s += w * (PI * k as f64 * h).sin().abs().powf(p);
    }
    (s * h / 3.0).powf(1.0 / p)
}

impl TestFunction {
    pub fn name(&self) -> &str {
        &self.name
    }

    pub fn dim(&self) -> usize {
        self.d
    }

    pub fn eval(&self, x: &[f64]) -> f64 {
        self.mixed_derivative(&vec![0; self.d], x)
    }

    pub fn gradient(&self, x: &[f64]) -> Vec<f64> {
        (0..self.d)
            .map(|j| {
                let mut k = vec![0; self.d];
                k[j] = 1;
                self.mixed_derivative(&k, x)
            })
            .collect()
    }

    /// `∂^{|k|} f / ∂x_1^{k_1} ... ∂x_d^{k_d}` at `x`.
    pub fn mixed_derivative(&self, k: &[usize], x: &[f64]) -> f64 {
        match &self.kind {
            Kind::Zero => 0.0,
            Kind::Bubble => k
                .iter()
                .zip(x)
                .map(|(&kj, &xj)| bubble_deriv(kj, xj))
                .product(),
            Kind::Sine(w) => k
                .iter()
                .zip(x)
                .zip(w)
                .map(|((&kj, &xj), &wj)| sin_deriv(wj, kj, xj))
                .product(),
        }
    }

    /// Korobov seminorm `‖∂^{md} f / ∂x_1^m ... ∂x_d^m‖_{L_p}`.
    pub fn seminorm(&self, m: usize, p: f64) -> f64 {
        match &self.kind {
            Kind::Zero => 0.0,
            Kind::Bubble => match m {
                0 | 1 => bubble_seminorm_quad(m, p, self.d),
                2 => 2f64.powi(self.d as i32),
                _ => 0.0,
            },
            Kind::Sine(w) => w
                .iter()
                .map(|&wj| (wj as f64 * PI).powi(m as i32) * sine_lp_factor(p))
                .product(),
        }
    }

    /// Whether the order-`m` seminorm is nonzero.
    pub fn usable_for(&self, m: usize) -> bool {
        self.seminorm(m, 2.0) > 0.0
    }
}

fn bubble_seminorm_quad(m: usize, p: f64, d: usize) -> f64 {
    let n = 20_000;
    let s: f64 = (0..n)
        .map(|k| bubble_deriv(m, (k as f64 + 0.5) / n as f64).abs().powf(p))
        .sum::<f64>()
        / n as f64;
    s.powf(1.0 / p).powi(d as i32)
}

pub fn make_sine_product(d: usize) -> Result<TestFunction, CorpusError> {
    if d == 0 {
        return Err(CorpusError::BadDimension);
    }
    Ok(TestFunction {
        name: "sine".into(),
        d,
        kind: Kind::Sine(vec![1; d]),
    })
}

pub fn make_poly_bubble(d: usize) -> Result<TestFunction, CorpusError> {
    if d == 0 {
        return Err(CorpusError::BadDimension);
    }
    Ok(TestFunction {
        name: "bubble".into(),
        d,
        kind: Kind::Bubble,
    })
}

pub fn make_anisotropic(d: usize, freq: &[f64]) -> Result<TestFunction, CorpusError> {
    if d == 0 {
        return Err(CorpusError::BadDimension);
    }
    if freq.iter().any(|&w| w < 1.0 || w.fract() != 0.0 || w > u32::MAX as f64) {
        return Err(CorpusError::BadFrequency(freq.to_vec()));
    }
    if freq.len() != d {
        return Err(CorpusError::DimensionMismatch {
            name: "aniso".into(),
            got: freq.len(),
            d,
        });
    }
    let w: Vec<u32> = freq.iter().map(|&w| w as u32).collect();
    let name = format!(
        "aniso:{}",
        w.iter().map(u32::to_string).collect::<Vec<_>>().join(",")
    );
    Ok(TestFunction {
        name,
        d,
        kind: Kind::Sine(w),
    })
}

pub fn make_zero(d: usize) -> Result<TestFunction, CorpusError> {
    if d == 0 {
        return Err(CorpusError::BadDimension);
    }
    Ok(TestFunction {
        name: "zero".into(),
        d,
        kind: Kind::Zero,
    })
}

/// Registry lookup: `sine`, `bubble`, `zero`, `aniso:w1,w2,...`.
pub fn by_name(name: &str, d: usize) -> Result<TestFunction, CorpusError> {
    match name {
        "sine" => make_sine_product(d),
        "bubble" => make_poly_bubble(d),
        "zero" => make_zero(d),
        _ => {
            let rest = name
                .strip_prefix("aniso:")
                .ok_or_else(|| CorpusError::UnknownName(name.into()))?;
            let freq = rest
                .split(',')
                .map(|s| s.trim().parse::<f64>())
                .collect::<Result<Vec<_>, _>>()
                .map_err(|_| CorpusError::UnknownName(name.into()))?;
            make_anisotropic(d, &freq)
        }
    }
}

pub const REGISTRY: &[&str] = &["sine", "bubble", "zero", "aniso:<w1,...,wd>"];
