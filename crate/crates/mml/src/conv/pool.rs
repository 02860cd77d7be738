//! Max pooling over linearized image rows, with explicit argmax tracking so
//! the backward pass routes gradients to exactly the positions the forward
//! pass selected.

use super::{check_extent, ConvError};
use crate::matrix::{Matrix, TensorShape};

#[derive(Debug, Clone, Copy)]
pub struct PoolParams {
    pub shape_in: TensorShape,
    pub window: (usize, usize),
    pub stride: (usize, usize),
    pub pad: (usize, usize),
    pub out: (usize, usize),
}

impl PoolParams {
    pub fn new(
        shape_in: TensorShape,
        window: (usize, usize),
        stride: (usize, usize),
        pad: (usize, usize),
    ) -> Result<PoolParams, ConvError> {
        let p = check_extent("height", shape_in.h, window.0, stride.0, pad.0)?;
        let q = check_extent("width", shape_in.w, window.1, stride.1, pad.1)?;
        Ok(PoolParams {
            shape_in,
            window,
            stride,
            pad,
            out: (p, q),
        })
    }

    pub fn out_width(&self) -> usize {
        self.shape_in.c * self.out.0 * self.out.1
    }
}

/// Per-window maximum. Padded positions never win (they act as negative
/// infinity); a window that is entirely padding outputs 0 and stores the
/// argmax sentinel -1. Ties keep the first position in row-major window
/// order. The argmax matrix stores flat (c,h,w) indices as floats.
pub fn maxpool_forward(x: &Matrix, p: &PoolParams) -> Result<(Matrix, Matrix), ConvError> {
    let shape = p.shape_in;
    if x.rows() != shape.n || x.cols() != shape.row_width() {
        return Err(ConvError::InputShape {
            rows: x.rows(),
            cols: x.cols(),
            n: shape.n,
            width: shape.row_width(),
        });
    }
    let (r_k, s_k) = p.window;
    let (sh, sw) = p.stride;
    let (ph, pw) = p.pad;
    let (p_out, q_out) = p.out;
    let width = p.out_width();
    let mut out = vec![0.0; shape.n * width];
    let mut arg = vec![-1.0; shape.n * width];
    for n in 0..shape.n {
        let row: Vec<f64> = (0..x.cols()).map(|j| x.get(n, j)).collect();
        for c in 0..shape.c {
            for po in 0..p_out {
                for qo in 0..q_out {
                    let mut best: Option<(f64, usize)> = None;
                    for r in 0..r_k {
                        let h = po * sh + r;
                        if h < ph || h - ph >= shape.h {
                            continue;
                        }
                        let h = h - ph;
                        for s in 0..s_k {
                            let w = qo * sw + s;
                            if w < pw || w - pw >= shape.w {
                                continue;
                            }
                            let flat = (c * shape.h + h) * shape.w + (w - pw);
                            let v = row[flat];
                            if best.map_or(true, |(bv, _)| v > bv) {
                                best = Some((v, flat));
                            }
                        }
                    }
                    let dst = (c * p_out + po) * q_out + qo;
                    if let Some((v, flat)) = best {
                        out[n * width + dst] = v;
                        arg[n * width + dst] = flat as f64;
                    }
                }
            }
        }
    }
    let out = Matrix::dense(shape.n, width, out).expect("positive dims").decide_format_default();
    let arg = Matrix::dense(shape.n, width, arg).expect("positive dims");
    Ok((out, arg))
}

/// Routes each upstream gradient entry to the input position its window
/// selected, summing when windows overlap on the same winner.
pub fn maxpool_backward(
    argmax: &Matrix,
    dout: &Matrix,
    p: &PoolParams,
) -> Result<Matrix, ConvError> {
    let shape = p.shape_in;
    let width = p.out_width();
    if dout.rows() != shape.n || dout.cols() != width {
        return Err(ConvError::GradShape {
            rows: dout.rows(),
            cols: dout.cols(),
            n: shape.n,
            width,
        });
    }
    if argmax.rows() != dout.rows() || argmax.cols() != dout.cols() {
        return Err(ConvError::GradShape {
            rows: argmax.rows(),
            cols: argmax.cols(),
            n: shape.n,
            width,
        });
    }
    let in_width = shape.row_width();
    let mut dx = vec![0.0; shape.n * in_width];
    for n in 0..shape.n {
        for j in 0..width {
            let idx = argmax.get(n, j);
            if idx < 0.0 {
                continue;
            }
            dx[n * in_width + idx as usize] += dout.get(n, j);
        }
    }
    Ok(Matrix::dense(shape.n, in_width, dx)
        .expect("positive dims")
        .decide_format_default())
}

#[cfg(test)]
mod tests {
    use super::*;

    fn shape(n: usize, c: usize, h: usize, w: usize) -> TensorShape {
        TensorShape::new(n, c, h, w)
    }

    #[test]
    fn single_window_takes_the_max() {
        let p = PoolParams::new(shape(1, 1, 2, 2), (2, 2), (1, 1), (0, 0)).unwrap();
        let x = Matrix::dense(1, 4, vec![1.0, 2.0, 3.0, 4.0]).unwrap();
        let (out, arg) = maxpool_forward(&x, &p).unwrap();
        assert_eq!(out.get(0, 0), 4.0);
        assert_eq!(arg.get(0, 0), 3.0);
    }

    #[test]
    fn constant_input_ties_break_to_first_position() {
        let p = PoolParams::new(shape(1, 1, 2, 4), (2, 2), (2, 2), (0, 0)).unwrap();
        let x = Matrix::filled(1, 8, 7.0);
        let (out, arg) = maxpool_forward(&x, &p).unwrap();
        assert_eq!(out, Matrix::filled(1, 2, 7.0));
        // First window starts at (0,0) flat 0, second at (0,2) flat 2.
        assert_eq!(arg.get(0, 0), 0.0);
        assert_eq!(arg.get(0, 1), 2.0);
    }

    #[test]
    fn unit_window_is_identity() {
        let p = PoolParams::new(shape(2, 1, 2, 3), (1, 1), (1, 1), (0, 0)).unwrap();
        let x = Matrix::dense(2, 6, (0..12).map(|v| v as f64 - 3.0).collect()).unwrap();
        let (out, _) = maxpool_forward(&x, &p).unwrap();
        assert_eq!(out, x);
        let dout = Matrix::dense(2, 6, (0..12).map(|v| v as f64).collect()).unwrap();
        let (_, arg) = maxpool_forward(&x, &p).unwrap();
        let dx = maxpool_backward(&arg, &dout, &p).unwrap();
        assert_eq!(dx, dout);
    }

    #[test]
    fn padding_is_never_selected_over_real_values() {
        // 1x1 input, 3x3 window, pad 1: the window is mostly padding but the
        // real value, even when negative, must win.
        let p = PoolParams::new(shape(1, 1, 1, 1), (3, 3), (1, 1), (1, 1)).unwrap();
        let x = Matrix::dense(1, 1, vec![-5.0]).unwrap();
        let (out, arg) = maxpool_forward(&x, &p).unwrap();
        assert_eq!(out.get(0, 0), -5.0);
        assert_eq!(arg.get(0, 0), 0.0);
    }

    #[test]
    fn fully_padded_window_outputs_zero_and_routes_nothing() {
        // 1x3 input, 1x1 window, stride (1,2), pad (0,1): the three output
        // positions read padded columns 0, 2, 4, i.e. pad, input col 1, pad.
        let p = PoolParams::new(shape(1, 1, 1, 3), (1, 1), (1, 2), (0, 1)).unwrap();
        assert_eq!(p.out, (1, 3));
        let x = Matrix::dense(1, 3, vec![3.0, 9.0, 4.0]).unwrap();
        let (out, arg) = maxpool_forward(&x, &p).unwrap();
        assert_eq!(out.get(0, 0), 0.0);
        assert_eq!(arg.get(0, 0), -1.0);
        assert_eq!(out.get(0, 1), 9.0);
        assert_eq!(arg.get(0, 1), 1.0);
        assert_eq!(out.get(0, 2), 0.0);
        assert_eq!(arg.get(0, 2), -1.0);
        let dout = Matrix::dense(1, 3, vec![5.0, 7.0, 11.0]).unwrap();
        let dx = maxpool_backward(&arg, &dout, &p).unwrap();
        assert_eq!(dx.to_dense_vec(), vec![0.0, 7.0, 0.0]);
    }

    #[test]
    fn overlapping_windows_sum_gradient_collisions() {
        // 1x3 input, 1x2 window, stride 1: windows (0,1) and (1,2); with a
        // peak in the middle both windows select flat index 1.
        let p = PoolParams::new(shape(1, 1, 1, 3), (1, 2), (1, 1), (0, 0)).unwrap();
        let x = Matrix::dense(1, 3, vec![1.0, 9.0, 2.0]).unwrap();
        let (out, arg) = maxpool_forward(&x, &p).unwrap();
        assert_eq!(out, Matrix::dense(1, 2, vec![9.0, 9.0]).unwrap());
        assert_eq!(arg.get(0, 0), 1.0);
        assert_eq!(arg.get(0, 1), 1.0);
        let dout = Matrix::dense(1, 2, vec![0.5, 0.25]).unwrap();
        let dx = maxpool_backward(&arg, &dout, &p).unwrap();
        assert_eq!(dx.get(0, 1), 0.75);
        assert_eq!(dx.nnz(), 1);
    }
}
