//! Mini-batch SGD training with a stratified validation hold-out and
//! best-validation model selection.

use log::{debug, info};
use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::model::network::{Network, NetworkSpec};
use crate::model::split::stratified_split;
use crate::model::ModelError;
use crate::nn::loss::weighted_softmax_cross_entropy;
use crate::nn::optim::{sgd_momentum_step, OptimizerState, DEFAULT_LEARNING_RATE, DEFAULT_MOMENTUM};
use crate::scalar::Scalar;
use crate::tensor::Tensor;
use crate::vision::augment::augment;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct TrainConfig {
    pub max_epochs: usize,
    pub batch_size: usize,
    pub learning_rate: f64,
    pub momentum: f64,
    pub validation_fraction: f64,
    pub seed: u64,
    /// Random scale/rotation of training and validation samples.
    pub augment: bool,
    /// Weight the loss by inverse class frequency.
    pub class_weighting: bool,
    /// Learning-rate multiplier applied by [`fine_tune`].
    pub fine_tune_lr_scale: f64,
    pub class_count: usize,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            max_epochs: 50,
            batch_size: 128,
            learning_rate: DEFAULT_LEARNING_RATE,
            momentum: DEFAULT_MOMENTUM,
            validation_fraction: 0.15,
            seed: 0,
            augment: true,
            class_weighting: false,
            fine_tune_lr_scale: 0.1,
            class_count: 2,
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<(), ModelError> {
        let bad = |m: String| Err(ModelError::Config(m));
        if self.batch_size == 0 {
            return bad("batch_size must be at least 1".into());
        }
        if !(self.validation_fraction > 0.0 && self.validation_fraction < 1.0) {
            return bad(format!("validation_fraction must lie in (0, 1), got {}", self.validation_fraction));
        }
        if !(self.learning_rate > 0.0 && self.learning_rate.is_finite()) {
            return bad(format!("learning_rate must be positive, got {}", self.learning_rate));
        }
        if !(0.0..1.0).contains(&self.momentum) {
            return bad(format!("momentum must lie in [0, 1), got {}", self.momentum));
        }
        if !(self.fine_tune_lr_scale > 0.0) {
            return bad(format!("fine_tune_lr_scale must be positive, got {}", self.fine_tune_lr_scale));
        }
        if self.class_count < 2 {
            return bad(format!("class_count must be at least 2, got {}", self.class_count));
        }
        Ok(())
    }
}

/// One labeled `1 x C x H x W` input; `group` is the participant id.
#[derive(Clone, Debug, PartialEq)]
pub struct TrainSample<T> {
    pub input: Tensor<T>,
    pub label: usize,
    pub group: String,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct EpochRecord {
    pub epoch: usize,
    pub train_loss: f64,
    pub train_accuracy: f64,
    pub val_loss: Option<f64>,
    pub val_accuracy: Option<f64>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct TrainingLog {
    pub train_size: usize,
    pub val_size: usize,
    /// Validation loss of the starting weights.
    pub initial_val_loss: Option<f64>,
    pub epochs: Vec<EpochRecord>,
    /// Epoch whose weights were returned; 0 means the starting weights.
    pub best_epoch: usize,
    pub best_val_loss: Option<f64>,
}

impl TrainingLog {
    pub fn final_val_loss(&self) -> Option<f64> {
        self.epochs.last().and_then(|e| e.val_loss).or(self.initial_val_loss)
    }
}

// Independent generator streams derived from one seed.
const STREAM_SPLIT: u64 = 0;
const STREAM_SHUFFLE: u64 = 1;
const STREAM_AUGMENT: u64 = 2;
const STREAM_VAL_AUGMENT: u64 = 3;

fn stream(seed: u64, id: u64) -> ChaCha8Rng {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(id);
    rng
}

const EVAL_BATCH: usize = 256;

/// Mean cross-entropy and accuracy in inference mode.
pub fn evaluate<T: Scalar>(net: &Network<T>, inputs: &[Tensor<T>], labels: &[usize]) -> Result<(f64, f64), ModelError> {
    let mut loss = 0.0;
    let mut correct = 0;
    for (xs, ys) in inputs.chunks(EVAL_BATCH).zip(labels.chunks(EVAL_BATCH)) {
        let batch = Tensor::stack(xs)?;
        let logits = net.infer(&batch)?;
        let out = weighted_softmax_cross_entropy(&logits, ys, None)?;
        loss += out.loss.to_f64_lossy() * ys.len() as f64;
        correct += count_correct(out.probabilities.data(), ys);
    }
    let n = labels.len().max(1) as f64;
    Ok((loss / n, correct as f64 / n))
}

fn count_correct<T: Scalar>(probs: &[T], labels: &[usize]) -> usize {
    let k = probs.len() / labels.len().max(1);
    probs
        .chunks(k)
        .zip(labels)
        .filter(|(row, &y)| {
            let mut best = 0;
            for (j, &p) in row.iter().enumerate() {
                if p > row[best] {
                    best = j;
                }
            }
            best == y
        })
        .count()
}

/// Trains `net` and returns the weights with the lowest validation loss
/// (the starting weights count as epoch 0).
pub fn train<T: Scalar>(
    mut net: Network<T>,
    samples: &[TrainSample<T>],
    config: &TrainConfig,
) -> Result<(Network<T>, TrainingLog), ModelError> {
    config.validate()?;
    if net.class_count() != config.class_count {
        return Err(ModelError::Config(format!(
            "network has {} classes, configuration {}",
            net.class_count(),
            config.class_count
        )));
    }
    if let Some(s) = samples.iter().find(|s| s.label >= config.class_count) {
        return Err(ModelError::Dataset(format!("label {} out of range in group {}", s.label, s.group)));
    }
    let keys: Vec<(&str, usize)> = samples.iter().map(|s| (s.group.as_str(), s.label)).collect();
    let (train_idx, val_idx) = stratified_split(&keys, config.validation_fraction, &mut stream(config.seed, STREAM_SPLIT))?;
    let mut class_counts = vec![0usize; config.class_count];
    for &i in &train_idx {
        class_counts[samples[i].label] += 1;
    }
    if let Some(c) = class_counts.iter().position(|&n| n == 0) {
        return Err(ModelError::Dataset(format!("class {c} has no training samples")));
    }
    let class_weights: Option<Vec<T>> = config.class_weighting.then(|| {
        let total = train_idx.len() as f64;
        class_counts
            .iter()
            .map(|&n| T::from_f64_lossy(total / (config.class_count as f64 * n as f64)))
            .collect()
    });

    let mut val_rng = stream(config.seed, STREAM_VAL_AUGMENT);
    let val_inputs: Vec<Tensor<T>> = val_idx
        .iter()
        .map(|&i| if config.augment { augment(&samples[i].input, &mut val_rng) } else { samples[i].input.clone() })
        .collect();
    let val_labels: Vec<usize> = val_idx.iter().map(|&i| samples[i].label).collect();
    let validate = |net: &Network<T>| -> Result<Option<(f64, f64)>, ModelError> {
        if val_inputs.is_empty() {
            Ok(None)
        } else {
            evaluate(net, &val_inputs, &val_labels).map(Some)
        }
    };

    let initial = validate(&net)?;
    let mut log = TrainingLog {
        train_size: train_idx.len(),
        val_size: val_idx.len(),
        initial_val_loss: initial.map(|v| v.0),
        epochs: Vec::with_capacity(config.max_epochs),
        best_epoch: 0,
        best_val_loss: initial.map(|v| v.0),
    };
    let mut best = net.clone();
    let lens: Vec<usize> = net.parameters().iter().map(|p| p.len()).collect();
    let mut opt = OptimizerState::new(
        T::from_f64_lossy(config.learning_rate),
        T::from_f64_lossy(config.momentum),
        lens,
    );
    let mut shuffle_rng = stream(config.seed, STREAM_SHUFFLE);
    let mut aug_rng = stream(config.seed, STREAM_AUGMENT);
    let mut order = train_idx.clone();
    for epoch in 1..=config.max_epochs {
        order.shuffle(&mut shuffle_rng);
        let mut loss_sum = 0.0;
        let mut correct = 0;
        for chunk in order.chunks(config.batch_size) {
            let inputs: Vec<Tensor<T>> = chunk
                .iter()
                .map(|&i| if config.augment { augment(&samples[i].input, &mut aug_rng) } else { samples[i].input.clone() })
                .collect();
            let labels: Vec<usize> = chunk.iter().map(|&i| samples[i].label).collect();
            let batch = Tensor::stack(&inputs)?;
            let (logits, tape) = net.forward_train(&batch).map_err(|e| diverged(e, epoch))?;
            let out = weighted_softmax_cross_entropy(&logits, &labels, class_weights.as_deref())
                .map_err(|e| diverged(e, epoch))?;
            let loss = out.loss.to_f64_lossy();
            if !loss.is_finite() {
                return Err(ModelError::Divergence { epoch, loss });
            }
            loss_sum += loss * labels.len() as f64;
            correct += count_correct(out.probabilities.data(), &labels);
            let grads = net.backward(&tape, &out.grad_logits, false)?;
            let grad_slices = grads.as_slices();
            sgd_momentum_step(&mut net.parameters_mut(), &grad_slices, &mut opt);
        }
        let n = order.len() as f64;
        let val = validate(&net)?;
        let record = EpochRecord {
            epoch,
            train_loss: loss_sum / n,
            train_accuracy: correct as f64 / n,
            val_loss: val.map(|v| v.0),
            val_accuracy: val.map(|v| v.1),
        };
        if let Some(v) = record.val_loss {
            if !v.is_finite() {
                return Err(ModelError::Divergence { epoch, loss: v });
            }
        }
        debug!(
            "epoch {epoch}: train loss {:.4} acc {:.3}, val loss {:?}",
            record.train_loss, record.train_accuracy, record.val_loss
        );
        let improved = match (record.val_loss, log.best_val_loss) {
            (Some(v), Some(b)) => v < b,
            (Some(_), None) => true,
            // no validation data: keep the latest weights
            (None, _) => true,
        };
        if improved {
            log.best_epoch = epoch;
            log.best_val_loss = record.val_loss;
            best = net.clone();
        }
        log.epochs.push(record);
    }
    info!(
        "trained {} epochs on {} samples ({} held out); best epoch {}",
        config.max_epochs,
        log.train_size,
        log.val_size,
        log.best_epoch
    );
    Ok((best, log))
}

fn diverged(e: crate::tensor::TensorError, epoch: usize) -> ModelError {
    match e {
        crate::tensor::TensorError::NonFinite(_) => ModelError::Divergence { epoch, loss: f64::NAN },
        other => other.into(),
    }
}

/// Continues training every layer of `pretrained` on new samples with the
/// learning rate scaled by `config.fine_tune_lr_scale`.
pub fn fine_tune<T: Scalar>(
    pretrained: &Network<T>,
    samples: &[TrainSample<T>],
    config: &TrainConfig,
) -> Result<(Network<T>, TrainingLog), ModelError> {
    let expected = NetworkSpec::paper(config.class_count);
    if pretrained.spec() != &expected {
        return Err(ModelError::Transfer(format!(
            "pretrained topology ({} classes, {} layers) does not match the {}-class network",
            pretrained.class_count(),
            pretrained.spec().layers.len(),
            config.class_count
        )));
    }
    let mut cfg = config.clone();
    cfg.learning_rate = config.learning_rate * config.fine_tune_lr_scale;
    train(pretrained.clone(), samples, &cfg)
}
