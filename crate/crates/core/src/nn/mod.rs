//! Layer kernels (forward and backward), loss, optimizer and gradient checker.

pub mod activation;
pub mod batchnorm;
pub mod conv;
pub mod gradcheck;
pub mod linear;
pub mod loss;
pub mod optim;
pub mod params;
pub mod pool;

pub use activation::{relu, relu_backward};
pub use batchnorm::{batchnorm_backward, batchnorm_forward, batchnorm_forward_frozen, BatchNormCache, BatchNormGrads};
pub use conv::{conv2d_backward, conv2d_forward, ConvGrads};
pub use gradcheck::{gradient_check, GradCheckError, GradCheckOptions, GradCheckReport};
pub use linear::{fully_connected_backward, fully_connected_forward, LinearGrads};
pub use loss::{softmax, softmax_cross_entropy, weighted_softmax_cross_entropy, LossOutput};
pub use optim::{sgd_momentum_step, OptimizerState};
pub use params::{LayerKind, LayerParams, NormStats};
pub use pool::{maxpool_backward, maxpool_forward, ArgmaxMap};
