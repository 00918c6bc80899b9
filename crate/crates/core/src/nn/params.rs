use rand::Rng;
use rand_distr::{Distribution, StandardNormal};
use serde::{Deserialize, Serialize};

use crate::scalar::Scalar;
use crate::tensor::{Shape, Tensor, TensorError};

/// Which trainable layer a [`LayerParams`] belongs to.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum LayerKind {
    Conv,
    BatchNorm,
    FullyConnected,
}

/// Normalization state carried by batch-norm layers.
#[derive(Clone, Debug, PartialEq)]
pub struct NormStats<T> {
    pub running_mean: Vec<T>,
    pub running_var: Vec<T>,
    pub epsilon: T,
    pub stats_momentum: T,
}

pub const DEFAULT_BN_EPSILON: f64 = 1e-5;
pub const DEFAULT_BN_MOMENTUM: f64 = 0.1;

/// Trainable state of one layer.
///
/// Shapes: conv weights are `(filters, in_channels, kh, kw)`; batch-norm
/// weights (the scale) are `(1, channels, 1, 1)`; fully-connected weights are
/// `(outputs, inputs, 1, 1)`. `bias` has one entry per output channel.
#[derive(Clone, Debug, PartialEq)]
pub struct LayerParams<T> {
    pub kind: LayerKind,
    pub weights: Tensor<T>,
    pub bias: Vec<T>,
    pub norm: Option<NormStats<T>>,
}

impl<T: Scalar> LayerParams<T> {
    pub fn conv(weights: Tensor<T>, bias: Vec<T>) -> Result<Self, TensorError> {
        if bias.len() != weights.shape().n {
            return Err(TensorError::Shape(format!(
                "{} biases for {} filters",
                bias.len(),
                weights.shape().n
            )));
        }
        Ok(Self { kind: LayerKind::Conv, weights, bias, norm: None })
    }

    pub fn fully_connected(weights: Tensor<T>, bias: Vec<T>) -> Result<Self, TensorError> {
        let s = weights.shape();
        if s.h != 1 || s.w != 1 || bias.len() != s.n {
            return Err(TensorError::Shape(format!(
                "fully-connected weights {s} with {} biases",
                bias.len()
            )));
        }
        Ok(Self { kind: LayerKind::FullyConnected, weights, bias, norm: None })
    }

    /// Batch norm with unit scale, zero shift and identity running statistics.
    pub fn batch_norm(channels: usize) -> Self {
        Self {
            kind: LayerKind::BatchNorm,
            weights: Tensor::filled(Shape::new(1, channels, 1, 1), T::one()),
            bias: vec![T::zero(); channels],
            norm: Some(NormStats {
                running_mean: vec![T::zero(); channels],
                running_var: vec![T::one(); channels],
                epsilon: T::from_f64_lossy(DEFAULT_BN_EPSILON),
                stats_momentum: T::from_f64_lossy(DEFAULT_BN_MOMENTUM),
            }),
        }
    }

    /// Kaiming-normal conv weights (`std = sqrt(2 / fan_in)`), zero bias.
    pub fn kaiming_conv(filters: usize, in_channels: usize, kernel: usize, rng: &mut impl Rng) -> Self {
        let shape = Shape::new(filters, in_channels, kernel, kernel);
        let weights = kaiming(shape, in_channels * kernel * kernel, rng);
        Self { kind: LayerKind::Conv, weights, bias: vec![T::zero(); filters], norm: None }
    }

    pub fn kaiming_fully_connected(outputs: usize, inputs: usize, rng: &mut impl Rng) -> Self {
        let weights = kaiming(Shape::new(outputs, inputs, 1, 1), inputs, rng);
        Self { kind: LayerKind::FullyConnected, weights, bias: vec![T::zero(); outputs], norm: None }
    }

    /// Output channels (filters, normalized channels, or output units).
    pub fn out_channels(&self) -> usize {
        match self.kind {
            LayerKind::BatchNorm => self.weights.shape().c,
            _ => self.weights.shape().n,
        }
    }

    pub fn trainable_len(&self) -> usize {
        self.weights.len() + self.bias.len()
    }

    /// Converts every buffer and statistic to another scalar type.
    pub fn cast<U: Scalar>(&self) -> LayerParams<U> {
        let conv = |v: &[T]| v.iter().map(|x| U::from_f64_lossy(x.to_f64_lossy())).collect::<Vec<U>>();
        LayerParams {
            kind: self.kind,
            weights: self.weights.cast(),
            bias: conv(&self.bias),
            norm: self.norm.as_ref().map(|s| NormStats {
                running_mean: conv(&s.running_mean),
                running_var: conv(&s.running_var),
                epsilon: U::from_f64_lossy(s.epsilon.to_f64_lossy()),
                stats_momentum: U::from_f64_lossy(s.stats_momentum.to_f64_lossy()),
            }),
        }
    }
}

fn kaiming<T: Scalar>(shape: Shape, fan_in: usize, rng: &mut impl Rng) -> Tensor<T> {
    let std = (2.0 / fan_in as f64).sqrt();
    let data = (0..shape.len())
        .map(|_| {
            let z: f64 = StandardNormal.sample(rng);
            T::from_f64_lossy(z * std)
        })
        .collect();
    Tensor::from_vec(shape, data).expect("length matches shape")
}
