//! Sparse-grid interpolants of Korobov functions compiled into explicit ReLU
//! networks, with the gadget library and error metrics needed to check the
//! resulting approximation rates.

pub mod construct;
pub mod corpus;
pub mod gadgets;
pub mod grid;
pub mod metrics;
pub mod net;
pub mod scalar;

pub use scalar::Scalar;

pub type Network = net::ReluNetwork<f64>;
pub type Layer = net::AffineLayer<f64>;
pub type Interpolant = grid::SparseInterpolant<f64>;
pub type Network32 = net::ReluNetwork<f32>;
pub type Interpolant32 = grid::SparseInterpolant<f32>;
