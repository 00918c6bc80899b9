//! Fully-connected layer over the flattened `(C, H, W)` sample.

use crate::nn::params::{LayerKind, LayerParams};
use crate::scalar::{gemm, MatRef, Scalar};
use crate::tensor::{Shape, Tensor, TensorError};

#[derive(Clone, Debug, PartialEq)]
pub struct LinearGrads<T> {
    /// Same shape as the forward input (not flattened).
    pub input: Tensor<T>,
    pub weights: Tensor<T>,
    pub bias: Vec<T>,
}

fn dims<T: Scalar>(input: &Tensor<T>, params: &LayerParams<T>) -> Result<(usize, usize, usize), TensorError> {
    if params.kind != LayerKind::FullyConnected {
        return Err(TensorError::Shape(format!("expected fully-connected parameters, got {:?}", params.kind)));
    }
    let ws = params.weights.shape();
    let d = input.shape().sample_len();
    if ws.c != d {
        return Err(TensorError::Shape(format!(
            "fully-connected layer expects {} inputs, sample {} flattens to {d}",
            ws.c,
            input.shape()
        )));
    }
    if params.bias.len() != ws.n {
        return Err(TensorError::Shape(format!("{} biases for {} outputs", params.bias.len(), ws.n)));
    }
    Ok((input.shape().n, d, ws.n))
}

/// `y = W x + b` per sample; output is `N x K x 1 x 1`.
pub fn fully_connected_forward<T: Scalar>(
    input: &Tensor<T>,
    params: &LayerParams<T>,
) -> Result<Tensor<T>, TensorError> {
    let (n, d, k) = dims(input, params)?;
    let mut out = Tensor::zeros(Shape::new(n, k, 1, 1));
    gemm(
        MatRef::row_major(input.data(), n, d),
        MatRef::transposed(params.weights.data(), k, d),
        T::zero(),
        out.data_mut(),
    );
    for row in out.data_mut().chunks_mut(k) {
        for (v, &b) in row.iter_mut().zip(&params.bias) {
            *v += b;
        }
    }
    Ok(out)
}

pub fn fully_connected_backward<T: Scalar>(
    input: &Tensor<T>,
    params: &LayerParams<T>,
    grad_out: &Tensor<T>,
) -> Result<LinearGrads<T>, TensorError> {
    let (n, d, k) = dims(input, params)?;
    if grad_out.shape() != Shape::new(n, k, 1, 1) {
        return Err(TensorError::Shape(format!(
            "gradient {} does not match fully-connected output {n}x{k}x1x1",
            grad_out.shape()
        )));
    }
    let mut grad_w = Tensor::zeros(params.weights.shape());
    gemm(
        MatRef::transposed(grad_out.data(), n, k),
        MatRef::row_major(input.data(), n, d),
        T::zero(),
        grad_w.data_mut(),
    );
    let mut grad_in = Tensor::zeros(input.shape());
    gemm(
        MatRef::row_major(grad_out.data(), n, k),
        MatRef::row_major(params.weights.data(), k, d),
        T::zero(),
        grad_in.data_mut(),
    );
    let mut grad_b = vec![T::zero(); k];
    for row in grad_out.data().chunks(k) {
        for (b, &g) in grad_b.iter_mut().zip(row) {
            *b += g;
        }
    }
    Ok(LinearGrads { input: grad_in, weights: grad_w, bias: grad_b })
}

#[cfg(test)]
mod tests {
    use super::*;

    fn identity(k: usize) -> LayerParams<f32> {
        let w = Tensor::from_fn(Shape::new(k, k, 1, 1), |i, j, _, _| if i == j { 1.0 } else { 0.0 });
        LayerParams::fully_connected(w, vec![0.0; k]).unwrap()
    }

    #[test]
    fn identity_weights_pass_input_through() {
        let x = Tensor::from_vec(Shape::new(2, 3, 1, 1), vec![1.0, -2.0, 3.0, 0.5, 0.0, -1.0]).unwrap();
        let y = fully_connected_forward(&x, &identity(3)).unwrap();
        assert_eq!(y.data(), x.data());
    }

    #[test]
    fn zero_input_gives_bias() {
        let w = Tensor::filled(Shape::new(2, 4, 1, 1), 3.0f32);
        let p = LayerParams::fully_connected(w, vec![0.25, -0.5]).unwrap();
        let x = Tensor::zeros(Shape::new(3, 1, 2, 2));
        let y = fully_connected_forward(&x, &p).unwrap();
        for row in y.data().chunks(2) {
            assert_eq!(row, &[0.25, -0.5]);
        }
    }

    #[test]
    fn dimension_mismatch_is_rejected() {
        let x = Tensor::<f32>::zeros(Shape::new(1, 4, 1, 1));
        assert!(fully_connected_forward(&x, &identity(3)).is_err());
    }
}
