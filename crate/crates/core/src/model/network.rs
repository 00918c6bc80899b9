//! Sequential network built from [`LayerSpec`]s.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::model::ModelError;
use crate::nn::activation::{relu, relu_backward};
use crate::nn::batchnorm::{batchnorm_backward, batchnorm_forward_frozen, update_running_stats, BatchNormCache};
use crate::nn::conv::{conv2d_backward_impl, conv2d_forward};
use crate::nn::linear::{fully_connected_backward, fully_connected_forward};
use crate::nn::loss::softmax;
use crate::nn::params::{LayerKind, LayerParams};
use crate::nn::pool::{maxpool_backward, maxpool_forward, pooled_extent, ArgmaxMap};
use crate::scalar::Scalar;
use crate::tensor::{Shape, Tensor, TensorError};

/// Input geometry of the tongue-detection network: RGB 32x32.
pub const INPUT_CHANNELS: usize = 3;
pub const INPUT_SIZE: usize = 32;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(tag = "type", rename_all = "snake_case")]
pub enum LayerSpec {
    Conv { filters: usize, kernel: usize, pad: usize, stride: usize },
    BatchNorm,
    Relu,
    MaxPool { size: usize, stride: usize },
    FullyConnected { outputs: usize },
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct NetworkSpec {
    pub layers: Vec<LayerSpec>,
    pub class_count: usize,
    /// `(channels, height, width)` of one sample.
    pub input_shape: (usize, usize, usize),
}

impl NetworkSpec {
    /// Three conv/batch-norm/ReLU blocks with 96, 32 and 64 filters, the first
    /// two followed by 2x2 stride-2 max pooling, then a fully-connected head.
    pub fn paper(class_count: usize) -> Self {
        let conv = |filters| LayerSpec::Conv { filters, kernel: 3, pad: 1, stride: 1 };
        let pool = LayerSpec::MaxPool { size: 2, stride: 2 };
        use LayerSpec::{BatchNorm, Relu};
        Self {
            layers: vec![
                conv(96),
                BatchNorm,
                Relu,
                pool,
                conv(32),
                BatchNorm,
                Relu,
                pool,
                conv(64),
                BatchNorm,
                Relu,
                LayerSpec::FullyConnected { outputs: class_count },
            ],
            class_count,
            input_shape: (INPUT_CHANNELS, INPUT_SIZE, INPUT_SIZE),
        }
    }

    /// Per-sample output shape of every layer; fails if the chain is broken.
    pub fn layer_shapes(&self) -> Result<Vec<Shape>, ModelError> {
        if self.class_count < 2 {
            return Err(ModelError::Topology(format!("class_count must be at least 2, got {}", self.class_count)));
        }
        match self.layers.last() {
            Some(LayerSpec::FullyConnected { outputs }) if *outputs == self.class_count => {}
            _ => {
                return Err(ModelError::Topology(format!(
                    "last layer must be fully connected with {} outputs",
                    self.class_count
                )))
            }
        }
        let (c, h, w) = self.input_shape;
        let mut shape = Shape::new(1, c, h, w);
        let mut shapes = Vec::with_capacity(self.layers.len());
        for (i, layer) in self.layers.iter().enumerate() {
            let bad = |msg: String| ModelError::Topology(format!("layer {i} ({layer:?}): {msg}"));
            shape = match *layer {
                LayerSpec::Conv { filters, kernel, pad, stride } => {
                    if filters == 0 || kernel == 0 || stride == 0 {
                        return Err(bad("zero-sized convolution".into()));
                    }
                    let ext = |len: usize| {
                        let padded = len + 2 * pad;
                        if padded < kernel || (padded - kernel) % stride != 0 {
                            Err(bad(format!("extent {len} does not tile")))
                        } else {
                            Ok((padded - kernel) / stride + 1)
                        }
                    };
                    Shape::new(1, filters, ext(shape.h)?, ext(shape.w)?)
                }
                LayerSpec::BatchNorm | LayerSpec::Relu => shape,
                LayerSpec::MaxPool { size, stride } => {
                    let h = pooled_extent(shape.h, size, stride).map_err(|e| bad(e.to_string()))?;
                    let w = pooled_extent(shape.w, size, stride).map_err(|e| bad(e.to_string()))?;
                    Shape::new(1, shape.c, h, w)
                }
                LayerSpec::FullyConnected { outputs } => {
                    if i + 1 != self.layers.len() {
                        return Err(bad("fully-connected layers are only supported as the head".into()));
                    }
                    Shape::new(1, outputs, 1, 1)
                }
            };
            shapes.push(shape);
        }
        Ok(shapes)
    }
}

/// How batch normalization behaves during a forward pass.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum ForwardMode {
    /// Batch statistics, running statistics updated.
    Train,
    /// Batch statistics, running statistics untouched.
    BatchStatistics,
    /// Running statistics.
    Inference,
}

impl ForwardMode {
    fn batch_stats(self) -> bool {
        !matches!(self, ForwardMode::Inference)
    }
}

enum LayerCache<T> {
    None,
    Norm(BatchNormCache<T>),
    Pool(ArgmaxMap),
}

/// Intermediate values recorded by a forward pass for [`Network::backward`].
pub struct Tape<T> {
    inputs: Vec<Tensor<T>>,
    caches: Vec<LayerCache<T>>,
}

#[derive(Clone, Debug)]
pub struct NetworkGrads<T> {
    pub input: Option<Tensor<T>>,
    /// In [`Network::parameters`] order.
    pub params: Vec<Vec<T>>,
}

impl<T> NetworkGrads<T> {
    pub fn as_slices(&self) -> Vec<&[T]> {
        self.params.iter().map(|p| p.as_slice()).collect()
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct Network<T> {
    spec: NetworkSpec,
    params: Vec<Option<LayerParams<T>>>,
}

impl<T: Scalar> Network<T> {
    /// Seeded Kaiming initialization of `spec`.
    pub fn new(spec: NetworkSpec, seed: u64) -> Result<Self, ModelError> {
        let shapes = spec.layer_shapes()?;
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let (c, h, w) = spec.input_shape;
        let mut prev = Shape::new(1, c, h, w);
        let mut params = Vec::with_capacity(spec.layers.len());
        for (layer, &out) in spec.layers.iter().zip(&shapes) {
            params.push(match *layer {
                LayerSpec::Conv { filters, kernel, .. } => Some(LayerParams::kaiming_conv(filters, prev.c, kernel, &mut rng)),
                LayerSpec::BatchNorm => Some(LayerParams::batch_norm(prev.c)),
                LayerSpec::FullyConnected { outputs } => {
                    Some(LayerParams::kaiming_fully_connected(outputs, prev.sample_len(), &mut rng))
                }
                LayerSpec::Relu | LayerSpec::MaxPool { .. } => None,
            });
            prev = out;
        }
        Ok(Self { spec, params })
    }

    /// Assembles a network from explicit parameters, validating every shape.
    pub fn from_parts(spec: NetworkSpec, params: Vec<Option<LayerParams<T>>>) -> Result<Self, ModelError> {
        let template = Network::<T>::new(spec.clone(), 0)?;
        if params.len() != template.params.len() {
            return Err(ModelError::Topology(format!(
                "{} parameter slots for {} layers",
                params.len(),
                template.params.len()
            )));
        }
        for (i, (have, want)) in params.iter().zip(&template.params).enumerate() {
            let ok = match (have, want) {
                (None, None) => true,
                (Some(a), Some(b)) => {
                    a.kind == b.kind
                        && a.weights.shape() == b.weights.shape()
                        && a.bias.len() == b.bias.len()
                        && a.norm.as_ref().map(|s| (s.running_mean.len(), s.running_var.len()))
                            == b.norm.as_ref().map(|s| (s.running_mean.len(), s.running_var.len()))
                }
                _ => false,
            };
            if !ok {
                return Err(ModelError::Topology(format!("parameters of layer {i} do not match the topology")));
            }
        }
        Ok(Self { spec, params })
    }

    pub fn spec(&self) -> &NetworkSpec {
        &self.spec
    }

    pub fn class_count(&self) -> usize {
        self.spec.class_count
    }

    /// Parameter slot per layer (`None` for parameter-free layers).
    pub fn layer_params(&self) -> &[Option<LayerParams<T>>] {
        &self.params
    }

    pub fn layer_params_mut(&mut self) -> &mut [Option<LayerParams<T>>] {
        &mut self.params
    }

    /// Trainable buffers: weights then bias of each parametrized layer.
    pub fn parameters(&self) -> Vec<&[T]> {
        self.params
            .iter()
            .flatten()
            .flat_map(|p| [p.weights.data(), p.bias.as_slice()])
            .collect()
    }

    pub fn parameters_mut(&mut self) -> Vec<&mut [T]> {
        self.params
            .iter_mut()
            .flatten()
            .flat_map(|p| [p.weights.data_mut(), p.bias.as_mut_slice()])
            .collect()
    }

    pub fn parameter_names(&self) -> Vec<String> {
        let mut counters = [0usize; 3];
        let mut names = Vec::new();
        for p in self.params.iter().flatten() {
            let (slot, prefix) = match p.kind {
                LayerKind::Conv => (0, "conv"),
                LayerKind::BatchNorm => (1, "batchnorm"),
                LayerKind::FullyConnected => (2, "fc"),
            };
            counters[slot] += 1;
            names.push(format!("{prefix}{}.weights", counters[slot]));
            names.push(format!("{prefix}{}.bias", counters[slot]));
        }
        names
    }

    /// Number of trainable scalars.
    pub fn parameter_count(&self) -> usize {
        self.params.iter().flatten().map(LayerParams::trainable_len).sum()
    }

    fn check_input(&self, x: &Tensor<T>) -> Result<(), TensorError> {
        let (c, h, w) = self.spec.input_shape;
        let s = x.shape();
        if (s.c, s.h, s.w) != (c, h, w) || s.n == 0 {
            return Err(TensorError::Shape(format!("network expects Nx{c}x{h}x{w}, got {s}")));
        }
        Ok(())
    }

    fn run(&self, x: &Tensor<T>, mode: ForwardMode, mut tape: Option<&mut Tape<T>>) -> Result<Tensor<T>, TensorError> {
        self.check_input(x)?;
        let mut cur = x.clone();
        for (layer, params) in self.spec.layers.iter().zip(&self.params) {
            let (next, cache) = match *layer {
                LayerSpec::Conv { pad, stride, .. } => {
                    (conv2d_forward(&cur, params.as_ref().expect("conv params"), pad, stride)?, LayerCache::None)
                }
                LayerSpec::BatchNorm => {
                    let (y, c) = batchnorm_forward_frozen(&cur, params.as_ref().expect("norm params"), mode.batch_stats())?;
                    (y, LayerCache::Norm(c))
                }
                LayerSpec::Relu => (relu(&cur), LayerCache::None),
                LayerSpec::MaxPool { size, stride } => {
                    let (y, map) = maxpool_forward(&cur, size, stride)?;
                    (y, LayerCache::Pool(map))
                }
                LayerSpec::FullyConnected { .. } => {
                    (fully_connected_forward(&cur, params.as_ref().expect("fc params"))?, LayerCache::None)
                }
            };
            if let Some(t) = tape.as_deref_mut() {
                t.inputs.push(std::mem::replace(&mut cur, next));
                t.caches.push(cache);
            } else {
                cur = next;
            }
        }
        cur.ensure_finite("network forward")
    }

    /// Logits without recording a tape. [`ForwardMode::Train`] behaves like
    /// [`ForwardMode::BatchStatistics`] here.
    pub fn forward_pure(&self, x: &Tensor<T>, mode: ForwardMode) -> Result<Tensor<T>, TensorError> {
        self.run(x, mode, None)
    }

    /// Inference-mode logits.
    pub fn infer(&self, x: &Tensor<T>) -> Result<Tensor<T>, TensorError> {
        self.run(x, ForwardMode::Inference, None)
    }

    /// Forward pass recording a tape, never touching running statistics.
    pub fn forward_taped(&self, x: &Tensor<T>, mode: ForwardMode) -> Result<(Tensor<T>, Tape<T>), TensorError> {
        let mut tape = Tape { inputs: Vec::new(), caches: Vec::new() };
        let y = self.run(x, mode, Some(&mut tape))?;
        Ok((y, tape))
    }

    /// Training forward pass: batch statistics, running statistics updated.
    pub fn forward_train(&mut self, x: &Tensor<T>) -> Result<(Tensor<T>, Tape<T>), TensorError> {
        let (y, tape) = self.forward_taped(x, ForwardMode::Train)?;
        for (params, cache) in self.params.iter_mut().zip(&tape.caches) {
            if let (Some(p), LayerCache::Norm(c)) = (params.as_mut(), cache) {
                update_running_stats(p, c);
            }
        }
        Ok((y, tape))
    }

    /// Backpropagates `grad_logits` through a recorded tape.
    pub fn backward(&self, tape: &Tape<T>, grad_logits: &Tensor<T>, need_input: bool) -> Result<NetworkGrads<T>, TensorError> {
        if tape.inputs.len() != self.spec.layers.len() {
            return Err(TensorError::Shape("tape does not belong to this network".into()));
        }
        let mut grad = grad_logits.clone();
        let mut param_grads: Vec<Option<(Vec<T>, Vec<T>)>> = vec![None; self.params.len()];
        for i in (0..self.spec.layers.len()).rev() {
            let input = &tape.inputs[i];
            let want_input = need_input || i > 0;
            grad = match (self.spec.layers[i], &tape.caches[i]) {
                (LayerSpec::Conv { pad, stride, .. }, _) => {
                    let p = self.params[i].as_ref().expect("conv params");
                    let (gi, gw, gb) = conv2d_backward_impl(input, p, &grad, pad, stride, want_input)?;
                    param_grads[i] = Some((gw.into_data(), gb));
                    match gi {
                        Some(g) => g,
                        None => Tensor::zeros(input.shape()),
                    }
                }
                (LayerSpec::BatchNorm, LayerCache::Norm(cache)) => {
                    let g = batchnorm_backward(cache, self.params[i].as_ref().expect("norm params"), &grad)?;
                    param_grads[i] = Some((g.weights, g.bias));
                    g.input
                }
                (LayerSpec::Relu, _) => relu_backward(input, &grad)?,
                (LayerSpec::MaxPool { .. }, LayerCache::Pool(map)) => maxpool_backward(map, &grad)?,
                (LayerSpec::FullyConnected { .. }, _) => {
                    let g = fully_connected_backward(input, self.params[i].as_ref().expect("fc params"), &grad)?;
                    param_grads[i] = Some((g.weights.into_data(), g.bias));
                    g.input
                }
                _ => return Err(TensorError::Shape(format!("tape entry {i} does not match its layer"))),
            };
        }
        let params = param_grads.into_iter().flatten().flat_map(|(w, b)| [w, b]).collect();
        Ok(NetworkGrads { input: need_input.then_some(grad), params })
    }

    /// ReLU masks and pooling argmaxes of a forward pass, concatenated.
    pub fn activation_pattern(&self, x: &Tensor<T>, mode: ForwardMode) -> Result<Vec<usize>, TensorError> {
        let (_, tape) = self.forward_taped(x, mode)?;
        let mut pattern = Vec::new();
        for (i, layer) in self.spec.layers.iter().enumerate() {
            match (layer, &tape.caches[i]) {
                (LayerSpec::Relu, _) => {
                    pattern.extend(tape.inputs[i].data().iter().map(|&v| usize::from(v > T::zero())))
                }
                (LayerSpec::MaxPool { .. }, LayerCache::Pool(map)) => pattern.extend_from_slice(&map.indices),
                _ => {}
            }
        }
        Ok(pattern)
    }

    /// Converts every parameter and statistic to another scalar type.
    pub fn cast<U: Scalar>(&self) -> Network<U> {
        let params = self.params.iter().map(|p| p.as_ref().map(LayerParams::cast)).collect();
        Network { spec: self.spec.clone(), params }
    }
}

/// Seeded network with the tongue-detection topology.
pub fn build_paper_network<T: Scalar>(class_count: usize, seed: u64) -> Result<Network<T>, ModelError> {
    Network::new(NetworkSpec::paper(class_count), seed)
}

/// Class labels and probability rows, in inference mode.
///
/// Ties resolve to the lower class index.
pub fn predict<T: Scalar>(net: &Network<T>, batch: &Tensor<T>) -> Result<(Vec<usize>, Tensor<T>), TensorError> {
    let probs = softmax(&net.infer(batch)?);
    let k = net.class_count();
    let labels = probs
        .data()
        .chunks(k)
        .map(|row| {
            let mut best = 0;
            for (j, &p) in row.iter().enumerate() {
                if p > row[best] {
                    best = j;
                }
            }
            best
        })
        .collect();
    Ok((labels, probs))
}
