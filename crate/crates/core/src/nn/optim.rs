//! Stochastic gradient descent with heavy-ball momentum:
//! `v <- momentum * v + grad; param <- param - lr * v`.

use crate::scalar::Scalar;

pub const DEFAULT_LEARNING_RATE: f64 = 0.01;
pub const DEFAULT_MOMENTUM: f64 = 0.9;

#[derive(Clone, Debug, PartialEq)]
pub struct OptimizerState<T> {
    pub learning_rate: T,
    pub momentum: T,
    /// One buffer per parameter, zero until the first step.
    pub velocity: Vec<Vec<T>>,
}

impl<T: Scalar> OptimizerState<T> {
    pub fn new(learning_rate: T, momentum: T, parameter_lens: impl IntoIterator<Item = usize>) -> Self {
        assert!(learning_rate > T::zero(), "learning rate must be positive");
        assert!(momentum >= T::zero() && momentum < T::one(), "momentum must lie in [0, 1)");
        Self {
            learning_rate,
            momentum,
            velocity: parameter_lens.into_iter().map(|n| vec![T::zero(); n]).collect(),
        }
    }
}

/// Applies one update to every parameter buffer.
pub fn sgd_momentum_step<T: Scalar>(params: &mut [&mut [T]], grads: &[&[T]], state: &mut OptimizerState<T>) {
    assert_eq!(params.len(), state.velocity.len(), "one velocity buffer per parameter");
    assert_eq!(params.len(), grads.len(), "one gradient per parameter");
    for ((p, g), v) in params.iter_mut().zip(grads).zip(state.velocity.iter_mut()) {
        assert_eq!(p.len(), g.len());
        assert_eq!(p.len(), v.len());
        for ((pi, &gi), vi) in p.iter_mut().zip(g.iter()).zip(v.iter_mut()) {
            *vi = state.momentum * *vi + gi;
            *pi -= state.learning_rate * *vi;
        }
    }
}
