//! 2-D convolution lowered to `im2col` + GEMM, one batch entry at a time.

use crate::nn::params::{LayerKind, LayerParams};
use crate::scalar::{gemm, MatRef, Scalar};
use crate::tensor::{Shape, Tensor, TensorError};

/// Gradients of a convolution with respect to its input and parameters.
#[derive(Clone, Debug, PartialEq)]
pub struct ConvGrads<T> {
    pub input: Tensor<T>,
    pub weights: Tensor<T>,
    pub bias: Vec<T>,
}

#[derive(Clone, Copy, Debug)]
struct Geometry {
    input: Shape,
    filters: usize,
    kh: usize,
    kw: usize,
    pad: usize,
    stride: usize,
    out_h: usize,
    out_w: usize,
}

impl Geometry {
    fn output(&self) -> Shape {
        Shape::new(self.input.n, self.filters, self.out_h, self.out_w)
    }

    fn col_rows(&self) -> usize {
        self.input.c * self.kh * self.kw
    }

    fn col_cols(&self) -> usize {
        self.out_h * self.out_w
    }
}

fn out_extent(len: usize, k: usize, pad: usize, stride: usize, axis: &str) -> Result<usize, TensorError> {
    let padded = len + 2 * pad;
    if padded < k {
        return Err(TensorError::Geometry(format!(
            "{axis} extent {len} with padding {pad} is smaller than kernel {k}"
        )));
    }
    if (padded - k) % stride != 0 {
        return Err(TensorError::Geometry(format!(
            "{axis}: ({len} + 2*{pad} - {k}) is not divisible by stride {stride}"
        )));
    }
    Ok((padded - k) / stride + 1)
}

fn geometry<T: Scalar>(
    input: Shape,
    params: &LayerParams<T>,
    pad: usize,
    stride: usize,
) -> Result<Geometry, TensorError> {
    if params.kind != LayerKind::Conv {
        return Err(TensorError::Shape(format!("expected conv parameters, got {:?}", params.kind)));
    }
    if stride == 0 {
        return Err(TensorError::Geometry("stride must be at least 1".into()));
    }
    let w = params.weights.shape();
    if w.c != input.c {
        return Err(TensorError::Shape(format!(
            "kernel expects {} input channels, input {input} has {}",
            w.c, input.c
        )));
    }
    if params.bias.len() != w.n {
        return Err(TensorError::Shape(format!("{} biases for {} filters", params.bias.len(), w.n)));
    }
    let out_h = out_extent(input.h, w.h, pad, stride, "height")?;
    let out_w = out_extent(input.w, w.w, pad, stride, "width")?;
    Ok(Geometry { input, filters: w.n, kh: w.h, kw: w.w, pad, stride, out_h, out_w })
}

/// Unfolds one sample (`C x H x W`) into a `(C*kh*kw) x (out_h*out_w)` matrix.
fn im2col<T: Scalar>(g: &Geometry, sample: &[T], col: &mut [T]) {
    let (h, w) = (g.input.h as isize, g.input.w as isize);
    let cols = g.col_cols();
    for c in 0..g.input.c {
        let plane = &sample[c * g.input.plane_len()..(c + 1) * g.input.plane_len()];
        for i in 0..g.kh {
            for j in 0..g.kw {
                let row = (c * g.kh + i) * g.kw + j;
                let dst = &mut col[row * cols..(row + 1) * cols];
                for oy in 0..g.out_h {
                    let y = (oy * g.stride + i) as isize - g.pad as isize;
                    let line = &mut dst[oy * g.out_w..(oy + 1) * g.out_w];
                    if y < 0 || y >= h {
                        line.fill(T::zero());
                        continue;
                    }
                    let src = &plane[y as usize * g.input.w..(y as usize + 1) * g.input.w];
                    for (ox, v) in line.iter_mut().enumerate() {
                        let x = (ox * g.stride + j) as isize - g.pad as isize;
                        *v = if x < 0 || x >= w { T::zero() } else { src[x as usize] };
                    }
                }
            }
        }
    }
}

/// Scatter-adds a column matrix back onto a `C x H x W` gradient sample.
fn col2im<T: Scalar>(g: &Geometry, col: &[T], sample: &mut [T]) {
    let (h, w) = (g.input.h as isize, g.input.w as isize);
    let cols = g.col_cols();
    for c in 0..g.input.c {
        let plane = &mut sample[c * g.input.plane_len()..(c + 1) * g.input.plane_len()];
        for i in 0..g.kh {
            for j in 0..g.kw {
                let row = (c * g.kh + i) * g.kw + j;
                let src = &col[row * cols..(row + 1) * cols];
                for oy in 0..g.out_h {
                    let y = (oy * g.stride + i) as isize - g.pad as isize;
                    if y < 0 || y >= h {
                        continue;
                    }
                    let dst = &mut plane[y as usize * g.input.w..(y as usize + 1) * g.input.w];
                    for ox in 0..g.out_w {
                        let x = (ox * g.stride + j) as isize - g.pad as isize;
                        if x >= 0 && x < w {
                            dst[x as usize] += src[oy * g.out_w + ox];
                        }
                    }
                }
            }
        }
    }
}

/// Zero-padded cross-correlation plus bias.
pub fn conv2d_forward<T: Scalar>(
    input: &Tensor<T>,
    params: &LayerParams<T>,
    pad: usize,
    stride: usize,
) -> Result<Tensor<T>, TensorError> {
    let g = geometry(input.shape(), params, pad, stride)?;
    let mut out = Tensor::zeros(g.output());
    let (k, p) = (g.col_rows(), g.col_cols());
    let mut col = vec![T::zero(); k * p];
    let wmat = MatRef::row_major(params.weights.data(), g.filters, k);
    for n in 0..g.input.n {
        im2col(&g, input.sample(n), &mut col);
        let dst = out.sample_mut(n);
        gemm(wmat, MatRef::row_major(&col, k, p), T::zero(), dst);
        for (f, &b) in params.bias.iter().enumerate() {
            for v in &mut dst[f * p..(f + 1) * p] {
                *v += b;
            }
        }
    }
    Ok(out)
}

/// Backward pass; `grad_out` is dL/d(output).
pub fn conv2d_backward<T: Scalar>(
    input: &Tensor<T>,
    params: &LayerParams<T>,
    grad_out: &Tensor<T>,
    pad: usize,
    stride: usize,
) -> Result<ConvGrads<T>, TensorError> {
    let (gi, gw, gb) = conv2d_backward_impl(input, params, grad_out, pad, stride, true)?;
    Ok(ConvGrads { input: gi.expect("input gradient requested"), weights: gw, bias: gb })
}

/// Like [`conv2d_backward`] but the input gradient is optional, which lets the
/// first layer of a network skip the `col2im` work.
pub(crate) fn conv2d_backward_impl<T: Scalar>(
    input: &Tensor<T>,
    params: &LayerParams<T>,
    grad_out: &Tensor<T>,
    pad: usize,
    stride: usize,
    need_input: bool,
) -> Result<(Option<Tensor<T>>, Tensor<T>, Vec<T>), TensorError> {
    let g = geometry(input.shape(), params, pad, stride)?;
    if grad_out.shape() != g.output() {
        return Err(TensorError::Shape(format!(
            "gradient {} does not match conv output {}",
            grad_out.shape(),
            g.output()
        )));
    }
    let (k, p) = (g.col_rows(), g.col_cols());
    let mut col = vec![T::zero(); k * p];
    let mut dcol = vec![T::zero(); k * p];
    let mut grad_w = Tensor::zeros(params.weights.shape());
    let mut grad_b = vec![T::zero(); g.filters];
    let mut grad_in = need_input.then(|| Tensor::zeros(g.input));
    for n in 0..g.input.n {
        let go = grad_out.sample(n);
        im2col(&g, input.sample(n), &mut col);
        // dW += dY * col^T
        gemm(
            MatRef::row_major(go, g.filters, p),
            MatRef::transposed(&col, k, p),
            T::one(),
            grad_w.data_mut(),
        );
        for (f, b) in grad_b.iter_mut().enumerate() {
            *b += go[f * p..(f + 1) * p].iter().copied().sum::<T>();
        }
        if let Some(gi) = grad_in.as_mut() {
            // dcol = W^T * dY
            gemm(
                MatRef::transposed(params.weights.data(), g.filters, k),
                MatRef::row_major(go, g.filters, p),
                T::zero(),
                &mut dcol,
            );
            col2im(&g, &dcol, gi.sample_mut(n));
        }
    }
    Ok((grad_in, grad_w, grad_b))
}
