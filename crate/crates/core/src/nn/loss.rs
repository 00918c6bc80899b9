use crate::scalar::Scalar;
use crate::tensor::{Shape, Tensor, TensorError};

/// Result of [`softmax_cross_entropy`].
#[derive(Clone, Debug)]
pub struct LossOutput<T> {
    /// Mean negative log-likelihood.
    pub loss: T,
    /// `N x K x 1 x 1` class probabilities.
    pub probabilities: Tensor<T>,
    /// Gradient of `loss` with respect to the logits.
    pub grad_logits: Tensor<T>,
}

/// Row-wise softmax with max subtraction.
pub fn softmax<T: Scalar>(logits: &Tensor<T>) -> Tensor<T> {
    let k = logits.shape().sample_len();
    let mut out = logits.clone();
    for row in out.data_mut().chunks_mut(k.max(1)) {
        let max = row.iter().copied().fold(T::neg_infinity(), T::max);
        let mut sum = T::zero();
        for v in row.iter_mut() {
            *v = (*v - max).exp();
            sum += *v;
        }
        for v in row.iter_mut() {
            *v /= sum;
        }
    }
    out
}

/// Softmax followed by mean negative log-likelihood over the batch.
pub fn softmax_cross_entropy<T: Scalar>(logits: &Tensor<T>, labels: &[usize]) -> Result<LossOutput<T>, TensorError> {
    weighted_softmax_cross_entropy(logits, labels, None)
}

/// Like [`softmax_cross_entropy`] with optional per-class weights; the loss
/// is then `sum(w_y * nll) / sum(w_y)`.
pub fn weighted_softmax_cross_entropy<T: Scalar>(
    logits: &Tensor<T>,
    labels: &[usize],
    class_weights: Option<&[T]>,
) -> Result<LossOutput<T>, TensorError> {
    let s = logits.shape();
    let (n, k) = (s.n, s.sample_len());
    if labels.len() != n {
        return Err(TensorError::Shape(format!("{} labels for {n} logit rows", labels.len())));
    }
    if let Some(w) = class_weights {
        if w.len() != k {
            return Err(TensorError::Shape(format!("{} class weights for {k} classes", w.len())));
        }
    }
    if let Some(&label) = labels.iter().find(|&&l| l >= k) {
        return Err(TensorError::Label { label, classes: k });
    }
    let probabilities = softmax(logits);
    let weight = |l: usize| class_weights.map_or(T::one(), |w| w[l]);
    let total: T = labels.iter().map(|&l| weight(l)).sum();
    let mut loss = T::zero();
    let mut grad = probabilities.data().to_vec();
    for (i, &l) in labels.iter().enumerate() {
        let row = &logits.data()[i * k..(i + 1) * k];
        let max = row.iter().copied().fold(T::neg_infinity(), T::max);
        let lse = max + row.iter().map(|&v| (v - max).exp()).sum::<T>().ln();
        let w = weight(l);
        loss += w * (lse - row[l]);
        grad[i * k + l] -= T::one();
        for g in &mut grad[i * k..(i + 1) * k] {
            *g = *g * w / total;
        }
    }
    loss /= total;
    if !loss.is_finite() {
        return Err(TensorError::NonFinite("softmax_cross_entropy"));
    }
    let grad_logits = Tensor::from_vec(Shape::new(n, k, 1, 1), grad)?;
    Ok(LossOutput { loss, probabilities: probabilities.reshaped(Shape::new(n, k, 1, 1))?, grad_logits })
}

#[cfg(test)]
mod tests {
    use super::*;

    fn logits(v: Vec<f64>, k: usize) -> Tensor<f64> {
        let n = v.len() / k;
        Tensor::from_vec(Shape::new(n, k, 1, 1), v).unwrap()
    }

    #[test]
    fn uniform_logits_give_ln2() {
        let out = softmax_cross_entropy(&logits(vec![0.0, 0.0], 2), &[1]).unwrap();
        assert_eq!(out.probabilities.data(), &[0.5, 0.5]);
        assert!((out.loss - std::f64::consts::LN_2).abs() < 1e-15);
    }

    #[test]
    fn extreme_logits_do_not_overflow() {
        let out = softmax_cross_entropy(&Tensor::from_vec(Shape::new(1, 2, 1, 1), vec![1000.0f32, -1000.0]).unwrap(), &[0])
            .unwrap();
        assert!(out.loss.abs() < 1e-6);
        assert!(out.grad_logits.is_finite());
        let wrong = softmax_cross_entropy(&logits(vec![1000.0, -1000.0], 2), &[1]).unwrap();
        assert!((wrong.loss - 2000.0).abs() < 1e-9);
    }

    #[test]
    fn label_out_of_range() {
        let err = softmax_cross_entropy(&logits(vec![0.0, 1.0], 2), &[2]).unwrap_err();
        assert_eq!(err, TensorError::Label { label: 2, classes: 2 });
    }

    #[test]
    fn gradient_is_probabilities_minus_one_hot_over_n() {
        let out = softmax_cross_entropy(&logits(vec![0.3, -0.2, 1.0, 2.0], 2), &[0, 1]).unwrap();
        let p = out.probabilities.data();
        let g = out.grad_logits.data();
        assert!((g[0] - (p[0] - 1.0) / 2.0).abs() < 1e-15);
        assert!((g[1] - p[1] / 2.0).abs() < 1e-15);
        assert!((g[3] - (p[3] - 1.0) / 2.0).abs() < 1e-15);
    }

    #[test]
    fn unit_class_weights_match_unweighted() {
        let l = logits(vec![0.3, -0.2, 1.0, 2.0, -1.0, 0.0], 2);
        let a = softmax_cross_entropy(&l, &[0, 1, 1]).unwrap();
        let b = weighted_softmax_cross_entropy(&l, &[0, 1, 1], Some(&[1.0, 1.0])).unwrap();
        assert!((a.loss - b.loss).abs() < 1e-15);
    }
}
