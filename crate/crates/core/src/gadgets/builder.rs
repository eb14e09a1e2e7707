//! Layer-by-layer network assembly over symbolic affine expressions.

use std::ops::{Add, Mul, Neg, Sub};

use crate::net::{AffineLayer, ReluNetwork};

/// Affine expression over the neurons of the current frontier layer.
#[derive(Debug, Clone, PartialEq, Default)]
pub struct Lin {
    pub terms: Vec<(usize, f64)>,
    pub c: f64,
}

impl Lin {
    pub fn var(i: usize) -> Self {
        Self {
            terms: vec![(i, 1.0)],
            c: 0.0,
        }
    }

    pub fn constant(c: f64) -> Self {
        Self {
            terms: Vec::new(),
            c,
        }
    }

    pub fn zero() -> Self {
        Self::constant(0.0)
    }

    pub fn sum<I: IntoIterator<Item = Lin>>(it: I) -> Lin {
        it.into_iter().fold(Lin::zero(), |a, b| a + b)
    }
}

impl Add for Lin {
    type Output = Lin;
    fn add(mut self, rhs: Lin) -> Lin {
        self.terms.extend(rhs.terms);
        self.c += rhs.c;
        self
    }
}

impl Add<f64> for Lin {
    type Output = Lin;
    fn add(mut self, rhs: f64) -> Lin {
        self.c += rhs;
        self
    }
}

impl Sub for Lin {
    type Output = Lin;
    fn sub(self, rhs: Lin) -> Lin {
        self + (-rhs)
    }
}

impl Sub<f64> for Lin {
    type Output = Lin;
    fn sub(self, rhs: f64) -> Lin {
        self + (-rhs)
    }
}

impl Neg for Lin {
    type Output = Lin;
    fn neg(self) -> Lin {
        self * -1.0
    }
}

impl Mul<f64> for Lin {
    type Output = Lin;
    fn mul(mut self, k: f64) -> Lin {
        for t in &mut self.terms {
            t.1 *= k;
        }
        self.c *= k;
        self
    }
}

/// Pending hidden layer: every pushed expression becomes one ReLU neuron.
#[derive(Debug, Default)]
pub struct Layer {
    pre: Vec<Lin>,
}

impl Layer {
    pub fn new() -> Self {
        Self::default()
    }

    /// `σ(e)`; the returned expression refers to the layer after it is pushed.
    pub fn relu(&mut self, e: Lin) -> Lin {
        self.pre.push(e);
        Lin::var(self.pre.len() - 1)
    }

    /// Carry a value known to be nonnegative.
    pub fn keep(&mut self, e: Lin) -> Lin {
        self.relu(e)
    }

    /// Carry a signed value as `σ(e) - σ(-e)`.
    pub fn signed(&mut self, e: Lin) -> Lin {
        let a = self.relu(e.clone());
        let b = self.relu(-e);
        a - b
    }

    pub fn len(&self) -> usize {
        self.pre.len()
    }

    pub fn is_empty(&self) -> bool {
        self.pre.is_empty()
    }
}

#[derive(Debug)]
pub struct Builder {
    frontier: usize,
    layers: Vec<AffineLayer<f64>>,
}

impl Builder {
    /// Start from `input_dim` inputs; returns the input expressions.
    pub fn new(input_dim: usize) -> (Self, Vec<Lin>) {
        (
            Self {
                frontier: input_dim,
                layers: Vec::new(),
            },
            (0..input_dim).map(Lin::var).collect(),
        )
    }

    fn affine(&self, exprs: Vec<Lin>) -> AffineLayer<f64> {
        let mut bias = Vec::with_capacity(exprs.len());
        let rows = exprs
            .into_iter()
            .map(|e| {
                bias.push(e.c);
                e.terms
            })
            .collect();
        AffineLayer::from_rows(self.frontier, rows, bias)
    }

    pub fn push(&mut self, layer: Layer) {
        let n = layer.pre.len();
        let a = self.affine(layer.pre);
        self.layers.push(a);
        self.frontier = n;
    }

    pub fn depth(&self) -> usize {
        self.layers.len()
    }

    pub fn finish(self, outputs: Vec<Lin>) -> ReluNetwork<f64> {
        let last = self.affine(outputs);
        let mut layers = self.layers;
        layers.push(last);
        ReluNetwork::new(layers).expect("builder keeps layer dimensions consistent")
    }
}
