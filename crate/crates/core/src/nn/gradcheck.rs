//! Finite-difference verification of analytic gradients.
//!
//! Every probe exposes a scalar objective over named coordinate groups (the
//! layer input and each parameter buffer). For layers the objective is a
//! fixed random weighting of the outputs, `L = sum(r_i * y_i)`, so the
//! upstream gradient is `r`. Central differences
//! `(L(x + h) - L(x - h)) / 2h` are compared against the analytic gradient on
//! a seeded subset of coordinates. Perturbations that flip a ReLU mask or a
//! pooling argmax are redrawn, since the objective is not differentiable
//! across those boundaries.

use rand::seq::index::sample;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};
use thiserror::Error;

use crate::model::network::{ForwardMode, Network};
use crate::nn::activation::{relu, relu_backward};
use crate::nn::batchnorm::{batchnorm_backward, batchnorm_forward_frozen};
use crate::nn::conv::{conv2d_backward, conv2d_forward};
use crate::nn::linear::{fully_connected_backward, fully_connected_forward};
use crate::nn::loss::softmax_cross_entropy;
use crate::nn::params::LayerParams;
use crate::nn::pool::{maxpool_backward, maxpool_forward};
use crate::scalar::Scalar;
use crate::tensor::{Tensor, TensorError};

pub const DEFAULT_THRESHOLD: f64 = 1e-3;

#[derive(Debug, Error)]
pub enum GradCheckError {
    #[error("gradient check invalid: {0}")]
    CheckInvalid(String),
    #[error(transparent)]
    Tensor(#[from] TensorError),
}

#[derive(Clone, Debug)]
pub struct GradCheckOptions {
    /// Perturbation size; must be positive.
    pub epsilon: f64,
    /// Coordinates sampled per group (all of them when the group is smaller).
    pub samples_per_group: usize,
    pub seed: u64,
    /// Denominator floor of the relative error
    /// `|a - n| / max(|a|, |n|, floor * G)`, where `G` is the largest
    /// analytic gradient magnitude of the whole probe. Coordinates whose
    /// gradient is tiny next to `G` (exactly zero ones included) are judged
    /// on the probe's scale instead of their own.
    pub floor: f64,
    /// Redraws allowed per coordinate when a perturbation crosses a kink.
    pub max_redraws: usize,
}

impl Default for GradCheckOptions {
    fn default() -> Self {
        Self { epsilon: 1e-6, samples_per_group: 24, seed: 7, floor: 1e-3, max_redraws: 16 }
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct GroupReport {
    pub name: String,
    pub checked: usize,
    pub max_relative_error: f64,
}

#[derive(Clone, Debug, PartialEq)]
pub struct GradCheckReport {
    pub groups: Vec<GroupReport>,
    /// Coordinates abandoned because every redraw crossed a kink.
    pub skipped: usize,
}

impl GradCheckReport {
    pub fn max_relative_error(&self) -> f64 {
        self.groups.iter().map(|g| g.max_relative_error).fold(0.0, f64::max)
    }

    pub fn checked(&self) -> usize {
        self.groups.iter().map(|g| g.checked).sum()
    }
}

pub fn relative_error(analytic: f64, numeric: f64, floor: f64) -> f64 {
    let denom = analytic.abs().max(numeric.abs()).max(floor);
    (analytic - numeric).abs() / denom
}

/// A differentiable scalar objective over groups of coordinates.
pub trait Differentiable<T: Scalar> {
    fn group_names(&self) -> Vec<String>;
    /// Current coordinate values of group `g`.
    fn values(&self, g: usize) -> Vec<T>;
    /// Objective with group `g` replaced by `values`.
    fn objective(&self, g: usize, values: &[T]) -> Result<f64, TensorError>;
    /// Analytic gradient of the objective, one vector per group.
    fn analytic(&self) -> Result<Vec<Vec<T>>, TensorError>;
    /// Identifies the piecewise-linear region the point lies in, if any.
    fn region(&self, _g: usize, _values: &[T]) -> Result<Option<Vec<usize>>, TensorError> {
        Ok(None)
    }
}

/// Compares analytic and central-difference gradients of `probe`.
pub fn gradient_check<T: Scalar, D: Differentiable<T> + ?Sized>(
    probe: &D,
    opts: &GradCheckOptions,
) -> Result<GradCheckReport, GradCheckError> {
    check_against(probe, probe, opts)
}

/// Like [`gradient_check`], but the finite differences are taken on
/// `reference`, the same objective evaluated in another precision (usually
/// an `f64` copy of an `f32` probe). Only `probe`'s analytic gradient is
/// under test.
pub fn gradient_check_with_reference<T, U, D, R>(
    probe: &D,
    reference: &R,
    opts: &GradCheckOptions,
) -> Result<GradCheckReport, GradCheckError>
where
    T: Scalar,
    U: Scalar,
    D: Differentiable<T> + ?Sized,
    R: Differentiable<U> + ?Sized,
{
    if probe.group_names() != reference.group_names() {
        return Err(GradCheckError::CheckInvalid("reference objective has different groups".into()));
    }
    check_against(probe, reference, opts)
}

fn check_against<T, U, D, R>(probe: &D, reference: &R, opts: &GradCheckOptions) -> Result<GradCheckReport, GradCheckError>
where
    T: Scalar,
    U: Scalar,
    D: Differentiable<T> + ?Sized,
    R: Differentiable<U> + ?Sized,
{
    if !(opts.epsilon > 0.0 && opts.epsilon.is_finite()) {
        return Err(GradCheckError::CheckInvalid(format!("epsilon must be positive, got {}", opts.epsilon)));
    }
    let names = probe.group_names();
    let analytic = probe.analytic()?;
    if analytic.len() != names.len() {
        return Err(GradCheckError::CheckInvalid("analytic gradient group count differs".into()));
    }
    let scale = analytic.iter().flatten().map(|v| v.to_f64_lossy().abs()).fold(0.0, f64::max);
    let floor = if scale > 0.0 { opts.floor * scale } else { opts.floor };
    let mut rng = ChaCha8Rng::seed_from_u64(opts.seed);
    let eps = U::from_f64_lossy(opts.epsilon);
    let mut groups = Vec::with_capacity(names.len());
    let mut skipped = 0;
    for (g, name) in names.iter().enumerate() {
        let base = reference.values(g);
        if analytic[g].len() != base.len() {
            return Err(GradCheckError::CheckInvalid(format!("gradient of {name} has the wrong length")));
        }
        let l0 = reference.objective(g, &base)?;
        let l1 = reference.objective(g, &base)?;
        if l0.to_bits() != l1.to_bits() {
            return Err(GradCheckError::CheckInvalid(format!(
                "objective is not deterministic for group {name}"
            )));
        }
        let region0 = reference.region(g, &base)?;
        let want = opts.samples_per_group.min(base.len());
        let order: Vec<usize> = sample(&mut rng, base.len(), base.len()).into_vec();
        let mut report = GroupReport { name: name.clone(), checked: 0, max_relative_error: 0.0 };
        let mut cursor = 0;
        let mut redraws = 0;
        while report.checked < want && cursor < order.len() {
            let i = order[cursor];
            cursor += 1;
            let mut plus = base.clone();
            let mut minus = base.clone();
            plus[i] = base[i] + eps;
            minus[i] = base[i] - eps;
            if region0.is_some() {
                let same = reference.region(g, &plus)? == region0 && reference.region(g, &minus)? == region0;
                if !same {
                    redraws += 1;
                    if redraws > opts.max_redraws * want {
                        break;
                    }
                    continue;
                }
            }
            // actual step after rounding
            let step = (plus[i] - minus[i]).to_f64_lossy();
            let numeric = (reference.objective(g, &plus)? - reference.objective(g, &minus)?) / step;
            let err = relative_error(analytic[g][i].to_f64_lossy(), numeric, floor);
            if !err.is_finite() {
                return Err(GradCheckError::CheckInvalid(format!("non-finite difference in {name}[{i}]")));
            }
            report.max_relative_error = report.max_relative_error.max(err);
            report.checked += 1;
        }
        skipped += want - report.checked;
        groups.push(report);
    }
    Ok(GradCheckReport { groups, skipped })
}

fn weighted_sum<T: Scalar>(y: &Tensor<T>, r: &[f64]) -> f64 {
    y.data().iter().zip(r).map(|(&v, &w)| v.to_f64_lossy() * w).sum()
}

fn random_weights(len: usize, rng: &mut impl Rng) -> Vec<f64> {
    (0..len).map(|_| StandardNormal.sample(rng)).collect()
}

fn upstream<T: Scalar>(like: &Tensor<T>, r: &[f64]) -> Tensor<T> {
    Tensor::from_vec(like.shape(), r.iter().map(|&v| T::from_f64_lossy(v)).collect()).expect("same length")
}

fn replace_params<T: Scalar>(params: &LayerParams<T>, g: usize, values: &[T]) -> LayerParams<T> {
    let mut p = params.clone();
    match g {
        1 => p.weights.data_mut().copy_from_slice(values),
        2 => p.bias.copy_from_slice(values),
        _ => unreachable!("group index"),
    }
    p
}

fn input_params_names() -> Vec<String> {
    vec!["input".into(), "weights".into(), "bias".into()]
}

/// Convolution probe.
pub struct ConvProbe<T> {
    pub input: Tensor<T>,
    pub params: LayerParams<T>,
    pub pad: usize,
    pub stride: usize,
    weights: Vec<f64>,
}

impl<T: Scalar> ConvProbe<T> {
    pub fn cast<U: Scalar>(&self) -> ConvProbe<U> {
        ConvProbe {
            input: self.input.cast(),
            params: self.params.cast(),
            pad: self.pad,
            stride: self.stride,
            weights: self.weights.clone(),
        }
    }

    pub fn new(input: Tensor<T>, params: LayerParams<T>, pad: usize, stride: usize, seed: u64) -> Result<Self, TensorError> {
        let out = conv2d_forward(&input, &params, pad, stride)?;
        let weights = random_weights(out.len(), &mut ChaCha8Rng::seed_from_u64(seed));
        Ok(Self { input, params, pad, stride, weights })
    }
}

impl<T: Scalar> Differentiable<T> for ConvProbe<T> {
    fn group_names(&self) -> Vec<String> {
        input_params_names()
    }

    fn values(&self, g: usize) -> Vec<T> {
        match g {
            0 => self.input.data().to_vec(),
            1 => self.params.weights.data().to_vec(),
            _ => self.params.bias.clone(),
        }
    }

    fn objective(&self, g: usize, values: &[T]) -> Result<f64, TensorError> {
        let y = if g == 0 {
            conv2d_forward(&Tensor::from_vec(self.input.shape(), values.to_vec())?, &self.params, self.pad, self.stride)?
        } else {
            conv2d_forward(&self.input, &replace_params(&self.params, g, values), self.pad, self.stride)?
        };
        Ok(weighted_sum(&y, &self.weights))
    }

    fn analytic(&self) -> Result<Vec<Vec<T>>, TensorError> {
        let y = conv2d_forward(&self.input, &self.params, self.pad, self.stride)?;
        let g = conv2d_backward(&self.input, &self.params, &upstream(&y, &self.weights), self.pad, self.stride)?;
        Ok(vec![g.input.into_data(), g.weights.into_data(), g.bias])
    }
}

/// Batch-norm probe; running statistics are never updated.
pub struct BatchNormProbe<T> {
    pub input: Tensor<T>,
    pub params: LayerParams<T>,
    pub training: bool,
    weights: Vec<f64>,
}

impl<T: Scalar> BatchNormProbe<T> {
    pub fn cast<U: Scalar>(&self) -> BatchNormProbe<U> {
        BatchNormProbe {
            input: self.input.cast(),
            params: self.params.cast(),
            training: self.training,
            weights: self.weights.clone(),
        }
    }

    pub fn new(input: Tensor<T>, params: LayerParams<T>, training: bool, seed: u64) -> Self {
        let weights = random_weights(input.len(), &mut ChaCha8Rng::seed_from_u64(seed));
        Self { input, params, training, weights }
    }
}

impl<T: Scalar> Differentiable<T> for BatchNormProbe<T> {
    fn group_names(&self) -> Vec<String> {
        input_params_names()
    }

    fn values(&self, g: usize) -> Vec<T> {
        match g {
            0 => self.input.data().to_vec(),
            1 => self.params.weights.data().to_vec(),
            _ => self.params.bias.clone(),
        }
    }

    fn objective(&self, g: usize, values: &[T]) -> Result<f64, TensorError> {
        let (y, _) = if g == 0 {
            batchnorm_forward_frozen(&Tensor::from_vec(self.input.shape(), values.to_vec())?, &self.params, self.training)?
        } else {
            batchnorm_forward_frozen(&self.input, &replace_params(&self.params, g, values), self.training)?
        };
        Ok(weighted_sum(&y, &self.weights))
    }

    fn analytic(&self) -> Result<Vec<Vec<T>>, TensorError> {
        let (y, cache) = batchnorm_forward_frozen(&self.input, &self.params, self.training)?;
        let g = batchnorm_backward(&cache, &self.params, &upstream(&y, &self.weights))?;
        Ok(vec![g.input.into_data(), g.weights, g.bias])
    }
}

/// Fully-connected probe.
pub struct LinearProbe<T> {
    pub input: Tensor<T>,
    pub params: LayerParams<T>,
    weights: Vec<f64>,
}

impl<T: Scalar> LinearProbe<T> {
    pub fn cast<U: Scalar>(&self) -> LinearProbe<U> {
        LinearProbe { input: self.input.cast(), params: self.params.cast(), weights: self.weights.clone() }
    }

    pub fn new(input: Tensor<T>, params: LayerParams<T>, seed: u64) -> Result<Self, TensorError> {
        let out = fully_connected_forward(&input, &params)?;
        let weights = random_weights(out.len(), &mut ChaCha8Rng::seed_from_u64(seed));
        Ok(Self { input, params, weights })
    }
}

impl<T: Scalar> Differentiable<T> for LinearProbe<T> {
    fn group_names(&self) -> Vec<String> {
        input_params_names()
    }

    fn values(&self, g: usize) -> Vec<T> {
        match g {
            0 => self.input.data().to_vec(),
            1 => self.params.weights.data().to_vec(),
            _ => self.params.bias.clone(),
        }
    }

    fn objective(&self, g: usize, values: &[T]) -> Result<f64, TensorError> {
        let y = if g == 0 {
            fully_connected_forward(&Tensor::from_vec(self.input.shape(), values.to_vec())?, &self.params)?
        } else {
            fully_connected_forward(&self.input, &replace_params(&self.params, g, values))?
        };
        Ok(weighted_sum(&y, &self.weights))
    }

    fn analytic(&self) -> Result<Vec<Vec<T>>, TensorError> {
        let y = fully_connected_forward(&self.input, &self.params)?;
        let g = fully_connected_backward(&self.input, &self.params, &upstream(&y, &self.weights))?;
        Ok(vec![g.input.into_data(), g.weights.into_data(), g.bias])
    }
}

/// ReLU probe over its input.
pub struct ReluProbe<T> {
    pub input: Tensor<T>,
    weights: Vec<f64>,
}

impl<T: Scalar> ReluProbe<T> {
    pub fn cast<U: Scalar>(&self) -> ReluProbe<U> {
        ReluProbe { input: self.input.cast(), weights: self.weights.clone() }
    }

    pub fn new(input: Tensor<T>, seed: u64) -> Self {
        let weights = random_weights(input.len(), &mut ChaCha8Rng::seed_from_u64(seed));
        Self { input, weights }
    }
}

impl<T: Scalar> Differentiable<T> for ReluProbe<T> {
    fn group_names(&self) -> Vec<String> {
        vec!["input".into()]
    }

    fn values(&self, _g: usize) -> Vec<T> {
        self.input.data().to_vec()
    }

    fn objective(&self, _g: usize, values: &[T]) -> Result<f64, TensorError> {
        Ok(weighted_sum(&relu(&Tensor::from_vec(self.input.shape(), values.to_vec())?), &self.weights))
    }

    fn analytic(&self) -> Result<Vec<Vec<T>>, TensorError> {
        Ok(vec![relu_backward(&self.input, &upstream(&self.input, &self.weights))?.into_data()])
    }

    fn region(&self, _g: usize, values: &[T]) -> Result<Option<Vec<usize>>, TensorError> {
        Ok(Some(values.iter().map(|&v| usize::from(v > T::zero())).collect()))
    }
}

/// Max-pool probe over its input.
pub struct PoolProbe<T> {
    pub input: Tensor<T>,
    pub size: usize,
    pub stride: usize,
    weights: Vec<f64>,
}

impl<T: Scalar> PoolProbe<T> {
    pub fn cast<U: Scalar>(&self) -> PoolProbe<U> {
        PoolProbe { input: self.input.cast(), size: self.size, stride: self.stride, weights: self.weights.clone() }
    }

    pub fn new(input: Tensor<T>, size: usize, stride: usize, seed: u64) -> Result<Self, TensorError> {
        let (out, _) = maxpool_forward(&input, size, stride)?;
        let weights = random_weights(out.len(), &mut ChaCha8Rng::seed_from_u64(seed));
        Ok(Self { input, size, stride, weights })
    }
}

impl<T: Scalar> Differentiable<T> for PoolProbe<T> {
    fn group_names(&self) -> Vec<String> {
        vec!["input".into()]
    }

    fn values(&self, _g: usize) -> Vec<T> {
        self.input.data().to_vec()
    }

    fn objective(&self, _g: usize, values: &[T]) -> Result<f64, TensorError> {
        let x = Tensor::from_vec(self.input.shape(), values.to_vec())?;
        Ok(weighted_sum(&maxpool_forward(&x, self.size, self.stride)?.0, &self.weights))
    }

    fn analytic(&self) -> Result<Vec<Vec<T>>, TensorError> {
        let (y, map) = maxpool_forward(&self.input, self.size, self.stride)?;
        Ok(vec![maxpool_backward(&map, &upstream(&y, &self.weights))?.into_data()])
    }

    fn region(&self, _g: usize, values: &[T]) -> Result<Option<Vec<usize>>, TensorError> {
        let x = Tensor::from_vec(self.input.shape(), values.to_vec())?;
        Ok(Some(maxpool_forward(&x, self.size, self.stride)?.1.indices))
    }
}

/// Softmax cross-entropy probe over the logits.
pub struct SoftmaxProbe<T> {
    pub logits: Tensor<T>,
    pub labels: Vec<usize>,
}

impl<T: Scalar> SoftmaxProbe<T> {
    pub fn cast<U: Scalar>(&self) -> SoftmaxProbe<U> {
        SoftmaxProbe { logits: self.logits.cast(), labels: self.labels.clone() }
    }
}

/// Wraps a probe and negates its analytic gradient, emulating a sign error
/// in a backward kernel. Used to confirm the checker catches such bugs.
pub struct SignFlipped<P>(pub P);

impl<T: Scalar, P: Differentiable<T>> Differentiable<T> for SignFlipped<P> {
    fn group_names(&self) -> Vec<String> {
        self.0.group_names()
    }

    fn values(&self, g: usize) -> Vec<T> {
        self.0.values(g)
    }

    fn objective(&self, g: usize, values: &[T]) -> Result<f64, TensorError> {
        self.0.objective(g, values)
    }

    fn analytic(&self) -> Result<Vec<Vec<T>>, TensorError> {
        Ok(self.0.analytic()?.into_iter().map(|g| g.into_iter().map(|v| -v).collect()).collect())
    }

    fn region(&self, g: usize, values: &[T]) -> Result<Option<Vec<usize>>, TensorError> {
        self.0.region(g, values)
    }
}

impl<T: Scalar> Differentiable<T> for SoftmaxProbe<T> {
    fn group_names(&self) -> Vec<String> {
        vec!["logits".into()]
    }

    fn values(&self, _g: usize) -> Vec<T> {
        self.logits.data().to_vec()
    }

    fn objective(&self, _g: usize, values: &[T]) -> Result<f64, TensorError> {
        let l = Tensor::from_vec(self.logits.shape(), values.to_vec())?;
        Ok(softmax_cross_entropy(&l, &self.labels)?.loss.to_f64_lossy())
    }

    fn analytic(&self) -> Result<Vec<Vec<T>>, TensorError> {
        Ok(vec![softmax_cross_entropy(&self.logits, &self.labels)?.grad_logits.into_data()])
    }
}

/// Objective placed on top of a network's logits.
#[derive(Clone, Debug)]
pub enum NetworkObjective {
    /// Seeded random weighting of the logits.
    WeightedLogits(u64),
    /// Mean cross-entropy against these labels.
    CrossEntropy(Vec<usize>),
}

/// Whole-network probe over the input and every parameter buffer.
///
/// Batch norm runs with batch statistics (training-mode normalization) but
/// without touching running statistics, so the forward is a pure function.
pub struct NetworkProbe<T> {
    pub network: Network<T>,
    pub input: Tensor<T>,
    pub mode: ForwardMode,
    objective: NetworkObjective,
    logit_weights: Vec<f64>,
}

impl<T: Scalar> NetworkProbe<T> {
    pub fn cast<U: Scalar>(&self) -> NetworkProbe<U> {
        NetworkProbe {
            network: self.network.cast(),
            input: self.input.cast(),
            mode: self.mode,
            objective: self.objective.clone(),
            logit_weights: self.logit_weights.clone(),
        }
    }

    pub fn new(network: Network<T>, input: Tensor<T>, mode: ForwardMode, objective: NetworkObjective) -> Result<Self, GradCheckError> {
        if mode == ForwardMode::Train {
            return Err(GradCheckError::CheckInvalid(
                "training mode mutates running statistics; use BatchStatistics or Inference".into(),
            ));
        }
        let logits = network.forward_pure(&input, mode)?;
        let logit_weights = match &objective {
            NetworkObjective::WeightedLogits(seed) => random_weights(logits.len(), &mut ChaCha8Rng::seed_from_u64(*seed)),
            NetworkObjective::CrossEntropy(labels) => {
                if labels.len() != input.shape().n {
                    return Err(GradCheckError::CheckInvalid("one label per sample required".into()));
                }
                Vec::new()
            }
        };
        Ok(Self { network, input, mode, objective, logit_weights })
    }

    fn with_group(&self, g: usize, values: &[T]) -> Result<(Network<T>, Tensor<T>), TensorError> {
        if g == 0 {
            return Ok((self.network.clone(), Tensor::from_vec(self.input.shape(), values.to_vec())?));
        }
        let mut net = self.network.clone();
        {
            let mut bufs = net.parameters_mut();
            bufs[g - 1].copy_from_slice(values);
        }
        Ok((net, self.input.clone()))
    }

    fn loss_and_upstream(&self, logits: &Tensor<T>) -> Result<(f64, Tensor<T>), TensorError> {
        match &self.objective {
            NetworkObjective::WeightedLogits(_) => {
                Ok((weighted_sum(logits, &self.logit_weights), upstream(logits, &self.logit_weights)))
            }
            NetworkObjective::CrossEntropy(labels) => {
                let out = softmax_cross_entropy(logits, labels)?;
                Ok((out.loss.to_f64_lossy(), out.grad_logits))
            }
        }
    }
}

impl<T: Scalar> Differentiable<T> for NetworkProbe<T> {
    fn group_names(&self) -> Vec<String> {
        let mut names = vec!["input".to_string()];
        names.extend(self.network.parameter_names());
        names
    }

    fn values(&self, g: usize) -> Vec<T> {
        if g == 0 {
            self.input.data().to_vec()
        } else {
            self.network.parameters()[g - 1].to_vec()
        }
    }

    fn objective(&self, g: usize, values: &[T]) -> Result<f64, TensorError> {
        let (net, x) = self.with_group(g, values)?;
        let logits = net.forward_pure(&x, self.mode)?;
        Ok(self.loss_and_upstream(&logits)?.0)
    }

    fn analytic(&self) -> Result<Vec<Vec<T>>, TensorError> {
        let (logits, tape) = self.network.forward_taped(&self.input, self.mode)?;
        let (_, up) = self.loss_and_upstream(&logits)?;
        let grads = self.network.backward(&tape, &up, true)?;
        let mut out = vec![grads.input.expect("input gradient requested").into_data()];
        out.extend(grads.params.into_iter());
        Ok(out)
    }

    fn region(&self, g: usize, values: &[T]) -> Result<Option<Vec<usize>>, TensorError> {
        let (net, x) = self.with_group(g, values)?;
        Ok(Some(net.activation_pattern(&x, self.mode)?))
    }
}
