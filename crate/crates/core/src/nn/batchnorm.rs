//! Per-channel batch normalization over `(N, H, W)`.
//!
//! Training mode normalizes with biased batch statistics and folds them into
//! the running estimates with `stats_momentum` (the running variance uses the
//! unbiased batch variance). Inference mode uses the running estimates only.

use crate::nn::params::{LayerKind, LayerParams, NormStats};
use crate::scalar::Scalar;
use crate::tensor::{Tensor, TensorError};

/// Values saved by the forward pass for the backward pass.
#[derive(Clone, Debug)]
pub struct BatchNormCache<T> {
    pub(crate) normalized: Tensor<T>,
    pub(crate) inv_std: Vec<T>,
    pub(crate) training: bool,
    /// Batch mean and unbiased variance per channel (training mode only).
    pub(crate) batch_stats: Option<(Vec<T>, Vec<T>)>,
}

#[derive(Clone, Debug, PartialEq)]
pub struct BatchNormGrads<T> {
    pub input: Tensor<T>,
    pub weights: Vec<T>,
    pub bias: Vec<T>,
}

fn check<'a, T: Scalar>(input: &Tensor<T>, params: &'a LayerParams<T>) -> Result<&'a NormStats<T>, TensorError> {
    let stats = match (params.kind, params.norm.as_ref()) {
        (LayerKind::BatchNorm, Some(s)) => s,
        _ => return Err(TensorError::Shape("expected batch-norm parameters".into())),
    };
    let c = input.shape().c;
    if params.weights.len() != c
        || params.bias.len() != c
        || stats.running_mean.len() != c
        || stats.running_var.len() != c
    {
        return Err(TensorError::Shape(format!(
            "batch-norm parameters for {} channels applied to input {}",
            params.weights.len(),
            input.shape()
        )));
    }
    Ok(stats)
}

/// Forward pass. In training mode `params`' running statistics are updated.
pub fn batchnorm_forward<T: Scalar>(
    input: &Tensor<T>,
    params: &mut LayerParams<T>,
    training: bool,
) -> Result<(Tensor<T>, BatchNormCache<T>), TensorError> {
    let (out, cache) = normalize(input, params, training)?;
    update_running_stats(params, &cache);
    Ok((out, cache))
}

/// Folds a training-mode forward's batch statistics into the running ones.
pub fn update_running_stats<T: Scalar>(params: &mut LayerParams<T>, cache: &BatchNormCache<T>) {
    let (Some((mean, unbiased_var)), Some(stats)) = (cache.batch_stats.as_ref(), params.norm.as_mut()) else {
        return;
    };
    let m = stats.stats_momentum;
    let keep = T::one() - m;
    for c in 0..mean.len() {
        stats.running_mean[c] = keep * stats.running_mean[c] + m * mean[c];
        stats.running_var[c] = keep * stats.running_var[c] + m * unbiased_var[c];
    }
}

/// Forward pass that never touches the running statistics.
pub fn batchnorm_forward_frozen<T: Scalar>(
    input: &Tensor<T>,
    params: &LayerParams<T>,
    training: bool,
) -> Result<(Tensor<T>, BatchNormCache<T>), TensorError> {
    normalize(input, params, training)
}

fn normalize<T: Scalar>(
    input: &Tensor<T>,
    params: &LayerParams<T>,
    training: bool,
) -> Result<(Tensor<T>, BatchNormCache<T>), TensorError> {
    let stats = check(input, params)?;
    let s = input.shape();
    let plane = s.plane_len();
    let count = s.n * plane;
    if training && count < 2 {
        return Err(TensorError::DegenerateBatch(format!(
            "training-mode normalization needs at least 2 values per channel, input {s} has {count}"
        )));
    }
    let mut normalized = Tensor::zeros(s);
    let mut out = Tensor::zeros(s);
    let mut inv_std = vec![T::zero(); s.c];
    let mut batch_mean = vec![T::zero(); s.c];
    let mut batch_var = vec![T::zero(); s.c];
    let gamma = params.weights.data();
    for c in 0..s.c {
        let (mean, var) = if training {
            let m = T::from_usize_lossy(count);
            let mut sum = T::zero();
            for n in 0..s.n {
                let base = (n * s.c + c) * plane;
                sum += input.data()[base..base + plane].iter().copied().sum::<T>();
            }
            let mean = sum / m;
            let mut sq = T::zero();
            for n in 0..s.n {
                let base = (n * s.c + c) * plane;
                for &v in &input.data()[base..base + plane] {
                    let d = v - mean;
                    sq += d * d;
                }
            }
            batch_mean[c] = mean;
            batch_var[c] = sq / (m - T::one());
            (mean, sq / m)
        } else {
            (stats.running_mean[c], stats.running_var[c])
        };
        let istd = T::one() / (var + stats.epsilon).sqrt();
        inv_std[c] = istd;
        for n in 0..s.n {
            let base = (n * s.c + c) * plane;
            for i in base..base + plane {
                let xh = (input.data()[i] - mean) * istd;
                normalized.data_mut()[i] = xh;
                out.data_mut()[i] = gamma[c] * xh + params.bias[c];
            }
        }
    }
    let out = out.ensure_finite("batchnorm_forward")?;
    let batch_stats = training.then_some((batch_mean, batch_var));
    Ok((out, BatchNormCache { normalized, inv_std, training, batch_stats }))
}

pub fn batchnorm_backward<T: Scalar>(
    cache: &BatchNormCache<T>,
    params: &LayerParams<T>,
    grad_out: &Tensor<T>,
) -> Result<BatchNormGrads<T>, TensorError> {
    let s = grad_out.shape();
    if s != cache.normalized.shape() {
        return Err(TensorError::Shape(format!(
            "gradient {} does not match normalized input {}",
            s,
            cache.normalized.shape()
        )));
    }
    check(grad_out, params)?;
    let plane = s.plane_len();
    let m = T::from_usize_lossy(s.n * plane);
    let gamma = params.weights.data();
    let mut grad_in = Tensor::zeros(s);
    let mut grad_gamma = vec![T::zero(); s.c];
    let mut grad_beta = vec![T::zero(); s.c];
    for c in 0..s.c {
        let mut sum_dy = T::zero();
        let mut sum_dy_xh = T::zero();
        for n in 0..s.n {
            let base = (n * s.c + c) * plane;
            for i in base..base + plane {
                let dy = grad_out.data()[i];
                sum_dy += dy;
                sum_dy_xh += dy * cache.normalized.data()[i];
            }
        }
        grad_gamma[c] = sum_dy_xh;
        grad_beta[c] = sum_dy;
        let scale = gamma[c] * cache.inv_std[c];
        for n in 0..s.n {
            let base = (n * s.c + c) * plane;
            for i in base..base + plane {
                let dy = grad_out.data()[i];
                grad_in.data_mut()[i] = if cache.training {
                    scale / m * (m * dy - sum_dy - cache.normalized.data()[i] * sum_dy_xh)
                } else {
                    scale * dy
                };
            }
        }
    }
    Ok(BatchNormGrads { input: grad_in, weights: grad_gamma, bias: grad_beta })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::tensor::Shape;

    fn ramp() -> Tensor<f64> {
        Tensor::from_fn(Shape::new(3, 2, 2, 2), |n, c, h, w| {
            ((n * 7 + c * 3 + h * 5 + w) % 11) as f64 * (c as f64 + 1.0) - 2.0
        })
    }

    #[test]
    fn training_output_is_standardized() {
        let x = ramp();
        let mut p = LayerParams::batch_norm(2);
        let (y, _) = batchnorm_forward(&x, &mut p, true).unwrap();
        let s = y.shape();
        for c in 0..2 {
            let vals: Vec<f64> = (0..s.n)
                .flat_map(|n| (0..2).flat_map(move |h| (0..2).map(move |w| (n, h, w))))
                .map(|(n, h, w)| y.get(n, c, h, w))
                .collect();
            let mean = vals.iter().sum::<f64>() / vals.len() as f64;
            let var = vals.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / vals.len() as f64;
            assert!(mean.abs() < 1e-4);
            assert!((var - 1.0).abs() < 1e-3);
        }
    }

    #[test]
    fn training_updates_running_statistics() {
        let x = ramp();
        let mut p = LayerParams::batch_norm(2);
        batchnorm_forward(&x, &mut p, true).unwrap();
        let stats = p.norm.as_ref().unwrap();
        assert!(stats.running_mean.iter().any(|&m| m != 0.0));
        assert!(stats.running_var.iter().all(|&v| v > 0.0));

        let mut frozen = LayerParams::batch_norm(2);
        batchnorm_forward_frozen(&x, &frozen, true).unwrap();
        assert_eq!(frozen, LayerParams::batch_norm(2));
        // inference leaves statistics alone as well
        batchnorm_forward(&x, &mut frozen, false).unwrap();
        assert_eq!(frozen, LayerParams::batch_norm(2));
    }

    #[test]
    fn inference_with_identity_stats_is_nearly_identity() {
        let x = ramp();
        let mut p = LayerParams::batch_norm(2);
        let (y, _) = batchnorm_forward(&x, &mut p, false).unwrap();
        let scale = 1.0 / (1.0f64 + 1e-5).sqrt();
        for (a, b) in y.data().iter().zip(x.data()) {
            assert!((a - b * scale).abs() < 1e-12);
        }
    }

    #[test]
    fn single_value_channel_is_degenerate_in_training() {
        let x = Tensor::<f32>::zeros(Shape::new(1, 2, 1, 1));
        let mut p = LayerParams::batch_norm(2);
        assert!(matches!(batchnorm_forward(&x, &mut p, true), Err(TensorError::DegenerateBatch(_))));
        assert!(batchnorm_forward(&x, &mut p, false).is_ok());
    }

    #[test]
    fn channel_count_mismatch_is_rejected() {
        let x = Tensor::<f32>::zeros(Shape::new(2, 3, 2, 2));
        let mut p = LayerParams::batch_norm(2);
        assert!(matches!(batchnorm_forward(&x, &mut p, true), Err(TensorError::Shape(_))));
    }
}
