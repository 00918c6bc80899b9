//! Tongue-protrusion detection from face video frames: a small convolutional
//! network with its own autograd kernels, a Haar-cascade face detector and
//! the leave-one-subject-out experiment harness around them.
//!
//! Numeric code is generic over [`Scalar`] (`f32`, `f64`); the aliases below
//! name the common instantiations. Metrics are additionally available over
//! exact rationals.

pub mod scalar;
pub mod tensor;

pub mod dataset;
pub mod experiments;
pub mod gradsuite;
pub mod model;
pub mod nn;
pub mod vision;

pub use scalar::Scalar;
pub use tensor::{Shape, Tensor, TensorError};

pub type Tensor32 = Tensor<f32>;
pub type Tensor64 = Tensor<f64>;
pub type Network32 = model::Network<f32>;
pub type Network64 = model::Network<f64>;
/// Metrics in exact rational arithmetic.
pub type ExactMetricSet = experiments::MetricSet<num_rational::Ratio<i64>>;
