//! Valid-mode convolution and non-overlapping max pooling.
//!
//! Image batches are `Matrix` values with one example per row, laid out
//! channel-major: index `(c * height + y) * width + x`.

use crate::error::{Error, Result};
use crate::nn::spec::ImageShape;
use crate::numerics::Matrix;

fn check_input(input: &Matrix, shape: ImageShape) -> Result<()> {
    if input.cols() != shape.size() {
        return Err(Error::Shape(format!(
            "image batch has {} columns, expected {}x{}x{} = {}",
            input.cols(),
            shape.channels,
            shape.height,
            shape.width,
            shape.size()
        )));
    }
    Ok(())
}

/// Output geometry of a valid convolution.
pub fn conv2d_output_shape(
    input: ImageShape,
    out_channels: usize,
    kernel_h: usize,
    kernel_w: usize,
) -> Result<ImageShape> {
    if kernel_h > input.height || kernel_w > input.width || kernel_h == 0 || kernel_w == 0 {
        return Err(Error::Shape(format!(
            "kernel {kernel_h}x{kernel_w} does not fit {}x{} input",
            input.height, input.width
        )));
    }
    Ok(ImageShape::new(
        out_channels,
        input.height - kernel_h + 1,
        input.width - kernel_w + 1,
    ))
}

/// Stride-1 cross-correlation without padding.
///
/// `kernel` is `[out_ch x (in_ch * kh * kw)]`, `bias` has `out_ch` entries.
pub fn conv2d_forward(
    kernel: &Matrix,
    bias: &[f64],
    kernel_h: usize,
    kernel_w: usize,
    input: &Matrix,
    in_shape: ImageShape,
) -> Result<(Matrix, ImageShape)> {
    check_input(input, in_shape)?;
    let out_ch = kernel.rows();
    if kernel.cols() != in_shape.channels * kernel_h * kernel_w || bias.len() != out_ch {
        return Err(Error::Shape(format!(
            "kernel {}x{} / bias {} inconsistent with {} input channels and {kernel_h}x{kernel_w} window",
            kernel.rows(),
            kernel.cols(),
            bias.len(),
            in_shape.channels
        )));
    }
    let out_shape = conv2d_output_shape(in_shape, out_ch, kernel_h, kernel_w)?;
    let (ih, iw) = (in_shape.height, in_shape.width);
    let (oh, ow) = (out_shape.height, out_shape.width);
    let mut out = Matrix::zeros(input.rows(), out_shape.size());
    for b in 0..input.rows() {
        let x = input.row(b);
        let y = out.row_mut(b);
        for o in 0..out_ch {
            let w = kernel.row(o);
            for r in 0..oh {
                for c in 0..ow {
                    let mut acc = bias[o];
                    for ic in 0..in_shape.channels {
                        for kr in 0..kernel_h {
                            let xrow = (ic * ih + r + kr) * iw + c;
                            let wrow = (ic * kernel_h + kr) * kernel_w;
                            for kc in 0..kernel_w {
                                acc += w[wrow + kc] * x[xrow + kc];
                            }
                        }
                    }
                    y[(o * oh + r) * ow + c] = acc;
                }
            }
        }
    }
    Ok((out, out_shape))
}

/// Gradients of a convolution: `(d_kernel, d_bias, d_input)`.
pub fn conv2d_backward(
    kernel: &Matrix,
    kernel_h: usize,
    kernel_w: usize,
    input: &Matrix,
    in_shape: ImageShape,
    d_out: &Matrix,
    need_input_grad: bool,
) -> Result<(Matrix, Vec<f64>, Option<Matrix>)> {
    check_input(input, in_shape)?;
    let out_ch = kernel.rows();
    let out_shape = conv2d_output_shape(in_shape, out_ch, kernel_h, kernel_w)?;
    if d_out.shape() != (input.rows(), out_shape.size()) {
        return Err(Error::Shape(format!(
            "conv output gradient is {}x{}, expected {}x{}",
            d_out.rows(),
            d_out.cols(),
            input.rows(),
            out_shape.size()
        )));
    }
    let (ih, iw) = (in_shape.height, in_shape.width);
    let (oh, ow) = (out_shape.height, out_shape.width);
    let mut d_kernel = Matrix::zeros(kernel.rows(), kernel.cols());
    let mut d_bias = vec![0.0; out_ch];
    let mut d_input = need_input_grad.then(|| Matrix::zeros(input.rows(), input.cols()));
    for b in 0..input.rows() {
        let x = input.row(b);
        let g = d_out.row(b);
        for o in 0..out_ch {
            for r in 0..oh {
                for c in 0..ow {
                    let go = g[(o * oh + r) * ow + c];
                    if go == 0.0 {
                        continue;
                    }
                    d_bias[o] += go;
                    let dk = d_kernel.row_mut(o);
                    for ic in 0..in_shape.channels {
                        for kr in 0..kernel_h {
                            let xrow = (ic * ih + r + kr) * iw + c;
                            let wrow = (ic * kernel_h + kr) * kernel_w;
                            for kc in 0..kernel_w {
                                dk[wrow + kc] += go * x[xrow + kc];
                            }
                        }
                    }
                    if let Some(dx) = d_input.as_mut() {
                        let w = kernel.row(o);
                        let dx = dx.row_mut(b);
                        for ic in 0..in_shape.channels {
                            for kr in 0..kernel_h {
                                let xrow = (ic * ih + r + kr) * iw + c;
                                let wrow = (ic * kernel_h + kr) * kernel_w;
                                for kc in 0..kernel_w {
                                    dx[xrow + kc] += go * w[wrow + kc];
                                }
                            }
                        }
                    }
                }
            }
        }
    }
    Ok((d_kernel, d_bias, d_input))
}

/// Max pooling over non-overlapping `pool_h x pool_w` windows.
///
/// Returns the pooled batch, its shape, and for every pooled cell the column
/// index of the winning input (first maximum on ties).
pub fn maxpool_forward(
    pool_h: usize,
    pool_w: usize,
    input: &Matrix,
    in_shape: ImageShape,
) -> Result<(Matrix, ImageShape, Vec<usize>)> {
    check_input(input, in_shape)?;
    if pool_h == 0 || pool_w == 0 || pool_h > in_shape.height || pool_w > in_shape.width {
        return Err(Error::Shape(format!(
            "pool {pool_h}x{pool_w} does not fit {}x{} input",
            in_shape.height, in_shape.width
        )));
    }
    let out_shape = ImageShape::new(
        in_shape.channels,
        in_shape.height / pool_h,
        in_shape.width / pool_w,
    );
    let (ih, iw) = (in_shape.height, in_shape.width);
    let (oh, ow) = (out_shape.height, out_shape.width);
    let mut out = Matrix::zeros(input.rows(), out_shape.size());
    let mut argmax = Vec::with_capacity(input.rows() * out_shape.size());
    for b in 0..input.rows() {
        let x = input.row(b);
        let y = out.row_mut(b);
        for ch in 0..in_shape.channels {
            for r in 0..oh {
                for c in 0..ow {
                    let mut best = f64::NEG_INFINITY;
                    let mut best_at = 0;
                    for pr in 0..pool_h {
                        for pc in 0..pool_w {
                            let at = (ch * ih + r * pool_h + pr) * iw + c * pool_w + pc;
                            if x[at] > best {
                                best = x[at];
                                best_at = at;
                            }
                        }
                    }
                    y[(ch * oh + r) * ow + c] = best;
                    argmax.push(best_at);
                }
            }
        }
    }
    Ok((out, out_shape, argmax))
}

/// Routes pooled-output gradients back to the recorded argmax positions.
pub fn maxpool_backward(
    argmax: &[usize],
    in_shape: ImageShape,
    d_out: &Matrix,
) -> Result<Matrix> {
    if argmax.len() != d_out.rows() * d_out.cols() {
        return Err(Error::Contract(format!(
            "{} recorded argmax positions for a {}x{} pooled gradient",
            argmax.len(),
            d_out.rows(),
            d_out.cols()
        )));
    }
    let mut d_in = Matrix::zeros(d_out.rows(), in_shape.size());
    let per_row = d_out.cols();
    for b in 0..d_out.rows() {
        let g = d_out.row(b);
        let idx = &argmax[b * per_row..(b + 1) * per_row];
        let dx = d_in.row_mut(b);
        for (&at, &gv) in idx.iter().zip(g) {
            dx[at] += gv;
        }
    }
    Ok(d_in)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn unit_kernel_is_identity() {
        let shape = ImageShape::new(1, 2, 3);
        let input = Matrix::from_rows(&[[1.0, 2.0, 3.0, 4.0, 5.0, 6.0]]).unwrap();
        let kernel = Matrix::from_rows(&[[1.0]]).unwrap();
        let (out, out_shape) = conv2d_forward(&kernel, &[0.0], 1, 1, &input, shape).unwrap();
        assert_eq!(out_shape, shape);
        assert_eq!(out, input);
    }

    #[test]
    fn diagonal_kernel_hand_example() {
        let shape = ImageShape::new(1, 2, 2);
        let input = Matrix::from_rows(&[[1.0, 2.0, 3.0, 4.0]]).unwrap();
        let kernel = Matrix::from_rows(&[[1.0, 0.0, 0.0, 1.0]]).unwrap();
        let (out, _) = conv2d_forward(&kernel, &[0.0], 2, 2, &input, shape).unwrap();
        assert_eq!(out.as_slice(), &[5.0]);
    }

    #[test]
    fn kernel_larger_than_input_is_shape_error() {
        let shape = ImageShape::new(1, 2, 2);
        let input = Matrix::zeros(1, 4);
        let kernel = Matrix::zeros(1, 9);
        assert!(matches!(
            conv2d_forward(&kernel, &[0.0], 3, 3, &input, shape),
            Err(Error::Shape(_))
        ));
    }

    #[test]
    fn maxpool_constant_image() {
        let shape = ImageShape::new(2, 4, 4);
        let input = Matrix::filled(3, shape.size(), 7.0);
        let (out, out_shape, _) = maxpool_forward(2, 2, &input, shape).unwrap();
        assert_eq!(out_shape, ImageShape::new(2, 2, 2));
        assert!(out.as_slice().iter().all(|&v| v == 7.0));
    }

    #[test]
    fn maxpool_truncates_ragged_edges_and_routes_gradient() {
        let shape = ImageShape::new(1, 3, 3);
        let input =
            Matrix::from_rows(&[[1.0, 5.0, 9.0, 2.0, 3.0, 9.0, 9.0, 9.0, 9.0]]).unwrap();
        let (out, out_shape, argmax) = maxpool_forward(2, 2, &input, shape).unwrap();
        assert_eq!(out_shape, ImageShape::new(1, 1, 1));
        assert_eq!(out.as_slice(), &[5.0]);
        assert_eq!(argmax, vec![1]);
        let d_in = maxpool_backward(&argmax, shape, &Matrix::filled(1, 1, 2.0)).unwrap();
        assert_eq!(d_in.as_slice(), &[0.0, 2.0, 0.0, 0.0, 0.0, 0.0, 0.0, 0.0, 0.0]);
    }
}
