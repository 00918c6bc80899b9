//! Max pooling with floor geometry (trailing rows/columns are dropped).

use crate::scalar::Scalar;
use crate::tensor::{Shape, Tensor, TensorError};

/// Winning input position for every pooled output element.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct ArgmaxMap {
    pub input_shape: Shape,
    pub output_shape: Shape,
    /// Flat input offset per output element, in output order.
    pub indices: Vec<usize>,
}

pub fn pooled_extent(len: usize, size: usize, stride: usize) -> Result<usize, TensorError> {
    if size == 0 || stride == 0 {
        return Err(TensorError::Geometry("pool size and stride must be at least 1".into()));
    }
    if len < size {
        return Err(TensorError::Geometry(format!("extent {len} is smaller than pool window {size}")));
    }
    Ok((len - size) / stride + 1)
}

/// Window maxima; ties go to the first position in row-major window order.
pub fn maxpool_forward<T: Scalar>(
    input: &Tensor<T>,
    size: usize,
    stride: usize,
) -> Result<(Tensor<T>, ArgmaxMap), TensorError> {
    let s = input.shape();
    let oh = pooled_extent(s.h, size, stride)?;
    let ow = pooled_extent(s.w, size, stride)?;
    let os = Shape::new(s.n, s.c, oh, ow);
    let mut out = Vec::with_capacity(os.len());
    let mut indices = Vec::with_capacity(os.len());
    let data = input.data();
    for n in 0..s.n {
        for c in 0..s.c {
            let base = (n * s.c + c) * s.plane_len();
            for oy in 0..oh {
                for ox in 0..ow {
                    let mut best = base + oy * stride * s.w + ox * stride;
                    for dy in 0..size {
                        for dx in 0..size {
                            let i = base + (oy * stride + dy) * s.w + ox * stride + dx;
                            if data[i] > data[best] {
                                best = i;
                            }
                        }
                    }
                    out.push(data[best]);
                    indices.push(best);
                }
            }
        }
    }
    let t = Tensor::from_vec(os, out)?;
    Ok((t, ArgmaxMap { input_shape: s, output_shape: os, indices }))
}

/// Routes each upstream gradient to its window's argmax.
pub fn maxpool_backward<T: Scalar>(map: &ArgmaxMap, grad_out: &Tensor<T>) -> Result<Tensor<T>, TensorError> {
    if grad_out.shape() != map.output_shape || map.indices.len() != map.output_shape.len() {
        return Err(TensorError::Shape(format!(
            "gradient {} does not match pooled output {}",
            grad_out.shape(),
            map.output_shape
        )));
    }
    let mut grad_in = Tensor::zeros(map.input_shape);
    let gi = grad_in.data_mut();
    for (&i, &g) in map.indices.iter().zip(grad_out.data()) {
        if i >= gi.len() {
            return Err(TensorError::Shape(format!("stale argmax index {i}")));
        }
        gi[i] += g;
    }
    Ok(grad_in)
}
