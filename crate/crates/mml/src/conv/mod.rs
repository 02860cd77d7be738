//! 2-D convolution and max pooling over linearized (N, C, H, W) tensors.
//!
//! Convolution is lowered to patch extraction plus matrix multiplication.
//! Four physical forward kernels exist, chosen by the storage formats of the
//! input and the filter; all four produce values within 1e-12 of each other,
//! and the sparse ones skip work for stored-zero entries, which the MAC
//! counters in [`ConvStats`] make observable.

mod im2col;
pub mod pool;

pub use pool::{maxpool_backward, maxpool_forward, PoolParams};

use crate::matrix::{ElemOp, Matrix, TensorShape};
use im2col::{add_col2im, dense_patches, sparse_patches};
use thiserror::Error;

#[derive(Debug, Error)]
pub enum ConvError {
    #[error("{axis} output extent is not a positive integer: ({input} + 2*{pad} - {kernel}) is not divisible by stride {stride}")]
    NonIntegralOutput {
        axis: &'static str,
        input: usize,
        kernel: usize,
        pad: usize,
        stride: usize,
    },
    #[error("{axis} kernel {kernel} exceeds padded input extent {padded}")]
    KernelTooLarge {
        axis: &'static str,
        kernel: usize,
        padded: usize,
    },
    #[error("{axis} parameter must be positive")]
    ZeroParam { axis: &'static str },
    #[error("input is {rows}x{cols}, expected {n}x{width} for the declared shape")]
    InputShape {
        rows: usize,
        cols: usize,
        n: usize,
        width: usize,
    },
    #[error("filter is {rows}x{cols}, expected {k}x{width}")]
    FilterShape {
        rows: usize,
        cols: usize,
        k: usize,
        width: usize,
    },
    #[error("gradient is {rows}x{cols}, expected {n}x{width}")]
    GradShape {
        rows: usize,
        cols: usize,
        n: usize,
        width: usize,
    },
}

/// Validates one spatial axis and returns its output extent
/// (input + 2*pad - kernel) / stride + 1, which must come out a positive
/// integer; flooring would hide configuration mistakes.
pub(crate) fn check_extent(
    axis: &'static str,
    input: usize,
    kernel: usize,
    stride: usize,
    pad: usize,
) -> Result<usize, ConvError> {
    if kernel == 0 || stride == 0 || input == 0 {
        return Err(ConvError::ZeroParam { axis });
    }
    let padded = input + 2 * pad;
    if kernel > padded {
        return Err(ConvError::KernelTooLarge {
            axis,
            kernel,
            padded,
        });
    }
    let span = padded - kernel;
    if span % stride != 0 {
        return Err(ConvError::NonIntegralOutput {
            axis,
            input,
            kernel,
            pad,
            stride,
        });
    }
    Ok(span / stride + 1)
}

#[derive(Debug, Clone, Copy)]
pub struct ConvParams {
    pub shape_in: TensorShape,
    pub filters: usize,
    pub kernel: (usize, usize),
    pub stride: (usize, usize),
    pub pad: (usize, usize),
    /// Derived output extents (P, Q).
    pub out: (usize, usize),
}

impl ConvParams {
    pub fn new(
        shape_in: TensorShape,
        filters: usize,
        kernel: (usize, usize),
        stride: (usize, usize),
        pad: (usize, usize),
    ) -> Result<ConvParams, ConvError> {
        if filters == 0 {
            return Err(ConvError::ZeroParam { axis: "filters" });
        }
        let p = check_extent("height", shape_in.h, kernel.0, stride.0, pad.0)?;
        let q = check_extent("width", shape_in.w, kernel.1, stride.1, pad.1)?;
        Ok(ConvParams {
            shape_in,
            filters,
            kernel,
            stride,
            pad,
            out: (p, q),
        })
    }

    /// Patch matrix height C*R*S, which is also the filter row width.
    pub fn patch_rows(&self) -> usize {
        self.shape_in.c * self.kernel.0 * self.kernel.1
    }

    /// Patch matrix width P*Q.
    pub fn patch_cols(&self) -> usize {
        self.out.0 * self.out.1
    }

    /// Output row width K*P*Q.
    pub fn out_width(&self) -> usize {
        self.filters * self.patch_cols()
    }

    pub fn shape_out(&self) -> TensorShape {
        TensorShape::new(self.shape_in.n, self.filters, self.out.0, self.out.1)
    }

    fn check_input(&self, x: &Matrix) -> Result<(), ConvError> {
        if x.rows() != self.shape_in.n || x.cols() != self.shape_in.row_width() {
            return Err(ConvError::InputShape {
                rows: x.rows(),
                cols: x.cols(),
                n: self.shape_in.n,
                width: self.shape_in.row_width(),
            });
        }
        Ok(())
    }

    fn check_filter(&self, f: &Matrix) -> Result<(), ConvError> {
        if f.rows() != self.filters || f.cols() != self.patch_rows() {
            return Err(ConvError::FilterShape {
                rows: f.rows(),
                cols: f.cols(),
                k: self.filters,
                width: self.patch_rows(),
            });
        }
        Ok(())
    }

    fn check_grad(&self, dout: &Matrix) -> Result<(), ConvError> {
        if dout.rows() != self.shape_in.n || dout.cols() != self.out_width() {
            return Err(ConvError::GradShape {
                rows: dout.rows(),
                cols: dout.cols(),
                n: self.shape_in.n,
                width: self.out_width(),
            });
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ConvVariant {
    DenseDense,
    SparseDense,
    DenseSparse,
    SparseSparse,
}

/// Multiply-accumulate counts for one forward call, for checking that the
/// sparse kernels actually skip work.
#[derive(Debug, Clone, Copy)]
pub struct ConvStats {
    pub variant: ConvVariant,
    /// MACs the chosen kernel performed.
    pub macs: u64,
    /// MACs the dense-dense kernel would have performed on the same shapes.
    pub dense_macs: u64,
}

/// Patch matrix for a single sample row (the spec-level im2col operation).
pub fn im2col(x_row: &Matrix, p: &ConvParams) -> Result<Matrix, ConvError> {
    if x_row.rows() != 1 || x_row.cols() != p.shape_in.row_width() {
        return Err(ConvError::InputShape {
            rows: x_row.rows(),
            cols: x_row.cols(),
            n: 1,
            width: p.shape_in.row_width(),
        });
    }
    let data = dense_patches(&x_row.to_dense_vec(), p);
    Ok(Matrix::dense(p.patch_rows(), p.patch_cols(), data)
        .expect("positive dims")
        .decide_format_default())
}

/// Overlap-summing adjoint of [`im2col`] for a single sample.
pub fn col2im(cols: &Matrix, p: &ConvParams) -> Result<Matrix, ConvError> {
    if cols.rows() != p.patch_rows() || cols.cols() != p.patch_cols() {
        return Err(ConvError::GradShape {
            rows: cols.rows(),
            cols: cols.cols(),
            n: p.patch_rows(),
            width: p.patch_cols(),
        });
    }
    let mut row = vec![0.0; p.shape_in.row_width()];
    add_col2im(&cols.to_dense_vec(), p, &mut row);
    Ok(Matrix::dense(1, row.len(), row)
        .expect("positive dims")
        .decide_format_default())
}

pub fn conv2d_forward(x: &Matrix, f: &Matrix, p: &ConvParams) -> Result<Matrix, ConvError> {
    conv2d_forward_with_stats(x, f, p).map(|(m, _)| m)
}

/// Forward convolution: per sample, flatten(filter x patch-matrix). The
/// kernel is picked from the operand formats; every output element
/// accumulates its patch contributions in ascending patch-row order.
pub fn conv2d_forward_with_stats(
    x: &Matrix,
    f: &Matrix,
    p: &ConvParams,
) -> Result<(Matrix, ConvStats), ConvError> {
    p.check_input(x)?;
    p.check_filter(f)?;
    let n = p.shape_in.n;
    let k = p.filters;
    let crs = p.patch_rows();
    let pq = p.patch_cols();
    let out_w = p.out_width();
    let mut out = vec![0.0; n * out_w];
    let mut macs = 0u64;
    let dense_macs = (n * k * crs * pq) as u64;

    let variant = match (x.is_sparse(), f.is_sparse()) {
        (false, false) => ConvVariant::DenseDense,
        (true, false) => ConvVariant::SparseDense,
        (false, true) => ConvVariant::DenseSparse,
        (true, true) => ConvVariant::SparseSparse,
    };

    let x_dense = x.dense_data();
    let x_csr = x.csr_parts();
    let f_dense = f.dense_data();
    let f_csr = f.csr_parts();

    for s in 0..n {
        let orow = &mut out[s * out_w..(s + 1) * out_w];
        match variant {
            ConvVariant::DenseDense => {
                let xd = x_dense.expect("dense variant");
                let fd = f_dense.expect("dense variant");
                let patch = dense_patches(&xd[s * x.cols()..(s + 1) * x.cols()], p);
                for ki in 0..k {
                    let frow = &fd[ki * crs..(ki + 1) * crs];
                    let dst = &mut orow[ki * pq..(ki + 1) * pq];
                    for (ci, &fv) in frow.iter().enumerate() {
                        let prow = &patch[ci * pq..(ci + 1) * pq];
                        for j in 0..pq {
                            dst[j] += fv * prow[j];
                        }
                    }
                }
                macs += (k * crs * pq) as u64;
            }
            ConvVariant::SparseDense => {
                let (row_ptr, col_idx, values) = x_csr.expect("sparse variant");
                let fd = f_dense.expect("dense variant");
                let patch = sparse_patches(
                    &col_idx[row_ptr[s]..row_ptr[s + 1]],
                    &values[row_ptr[s]..row_ptr[s + 1]],
                    p,
                );
                let patch_nnz: usize = patch.iter().map(Vec::len).sum();
                for ki in 0..k {
                    let frow = &fd[ki * crs..(ki + 1) * crs];
                    let dst = &mut orow[ki * pq..(ki + 1) * pq];
                    for (ci, row) in patch.iter().enumerate() {
                        let fv = frow[ci];
                        for &(j, v) in row {
                            dst[j] += fv * v;
                        }
                    }
                }
                macs += (k * patch_nnz) as u64;
            }
            ConvVariant::DenseSparse => {
                let xd = x_dense.expect("dense variant");
                let (f_ptr, f_idx, f_val) = f_csr.expect("sparse variant");
                let patch = dense_patches(&xd[s * x.cols()..(s + 1) * x.cols()], p);
                for ki in 0..k {
                    let dst = &mut orow[ki * pq..(ki + 1) * pq];
                    for e in f_ptr[ki]..f_ptr[ki + 1] {
                        let prow = &patch[f_idx[e] * pq..(f_idx[e] + 1) * pq];
                        let fv = f_val[e];
                        for j in 0..pq {
                            dst[j] += fv * prow[j];
                        }
                        macs += pq as u64;
                    }
                }
            }
            ConvVariant::SparseSparse => {
                let (row_ptr, col_idx, values) = x_csr.expect("sparse variant");
                let (f_ptr, f_idx, f_val) = f_csr.expect("sparse variant");
                let patch = sparse_patches(
                    &col_idx[row_ptr[s]..row_ptr[s + 1]],
                    &values[row_ptr[s]..row_ptr[s + 1]],
                    p,
                );
                for ki in 0..k {
                    let dst = &mut orow[ki * pq..(ki + 1) * pq];
                    for e in f_ptr[ki]..f_ptr[ki + 1] {
                        let fv = f_val[e];
                        let prow = &patch[f_idx[e]];
                        for &(j, v) in prow {
                            dst[j] += fv * v;
                        }
                        macs += prow.len() as u64;
                    }
                }
            }
        }
    }

    let out = Matrix::dense(n, out_w, out)
        .expect("positive dims")
        .decide_format_default();
    Ok((
        out,
        ConvStats {
            variant,
            macs,
            dense_macs,
        },
    ))
}

/// Filter gradient: the per-sample terms reshape(dout_n) x patch(x_n)^T are
/// added left to right starting from zeros, so a per-sample outer fold of
/// the same terms reproduces this result exactly.
pub fn conv2d_backward_filter(
    x: &Matrix,
    dout: &Matrix,
    p: &ConvParams,
) -> Result<Matrix, ConvError> {
    p.check_input(x)?;
    p.check_grad(dout)?;
    let k = p.filters;
    let crs = p.patch_rows();
    let pq = p.patch_cols();
    let mut acc = Matrix::zeros(k, crs);
    for s in 0..p.shape_in.n {
        let xrow: Vec<f64> = (0..x.cols()).map(|j| x.get(s, j)).collect();
        let patch = dense_patches(&xrow, p);
        let mut term = vec![0.0; k * crs];
        for ki in 0..k {
            for ci in 0..crs {
                let mut v = 0.0;
                let prow = &patch[ci * pq..(ci + 1) * pq];
                for j in 0..pq {
                    v += dout.get(s, ki * pq + j) * prow[j];
                }
                term[ki * crs + ci] = v;
            }
        }
        let term = Matrix::dense(k, crs, term).expect("positive dims");
        acc = acc
            .elementwise(&term, ElemOp::Add)
            .expect("same shape by construction");
    }
    Ok(acc)
}

/// Data gradient: per sample col2im(filter^T x reshape(dout_n)).
pub fn conv2d_backward_data(
    f: &Matrix,
    dout: &Matrix,
    p: &ConvParams,
) -> Result<Matrix, ConvError> {
    p.check_filter(f)?;
    p.check_grad(dout)?;
    let n = p.shape_in.n;
    let k = p.filters;
    let crs = p.patch_rows();
    let pq = p.patch_cols();
    let in_w = p.shape_in.row_width();
    let fd = f.to_dense_vec();
    let mut dx = vec![0.0; n * in_w];
    for s in 0..n {
        let mut dcol = vec![0.0; crs * pq];
        for ci in 0..crs {
            let drow = &mut dcol[ci * pq..(ci + 1) * pq];
            for ki in 0..k {
                let fv = fd[ki * crs + ci];
                if fv == 0.0 {
                    continue;
                }
                for j in 0..pq {
                    drow[j] += fv * dout.get(s, ki * pq + j);
                }
            }
        }
        add_col2im(&dcol, p, &mut dx[s * in_w..(s + 1) * in_w]);
    }
    Ok(Matrix::dense(n, in_w, dx)
        .expect("positive dims")
        .decide_format_default())
}
