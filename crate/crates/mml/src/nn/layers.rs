//! Forward and backward passes for the layer library.
//!
//! These functions are the single numeric implementation behind both the
//! scripting builtins and the native execution paths, so the order of
//! elementary float operations here is a compatibility contract: per-row
//! work depends only on that row, and batch reductions accumulate in
//! ascending row order. That is what lets a per-sample computation fold
//! back into exactly the full-batch result.

use super::NnError;
use crate::conv::{self, ConvParams, PoolParams};
use crate::matrix::{ElemOp, Matrix};
use rand::Rng;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

/// Additive clip inside logarithms and divisions of the cross-entropy loss.
pub const LOG_CLIP: f64 = 1e-15;

fn shape_err(op: &'static str, a: &Matrix, b: &Matrix) -> NnError {
    NnError::Shape {
        op,
        a_rows: a.rows(),
        a_cols: a.cols(),
        b_rows: b.rows(),
        b_cols: b.cols(),
    }
}

/// Scaled-uniform init over (-s, s) with s = sqrt(6 / (fan_in + fan_out)).
pub fn scaled_uniform_init(rng: &mut ChaCha8Rng, rows: usize, cols: usize, fan_in: usize, fan_out: usize) -> Matrix {
    let s = (6.0 / (fan_in + fan_out) as f64).sqrt();
    let data: Vec<f64> = (0..rows * cols).map(|_| rng.random_range(-s..s)).collect();
    Matrix::dense(rows, cols, data).expect("positive dims")
}

/// Affine init: W is D x K scaled-uniform with fan_in = D, fan_out = K;
/// bias starts at zero.
pub fn affine_init(rng: &mut ChaCha8Rng, d: usize, k: usize) -> (Matrix, Matrix) {
    (scaled_uniform_init(rng, d, k, d, k), Matrix::zeros(1, k))
}

pub fn affine_forward(x: &Matrix, w: &Matrix, b: &Matrix) -> Result<Matrix, NnError> {
    if x.cols() != w.rows() {
        return Err(shape_err("affine forward", x, w));
    }
    if b.rows() != 1 || b.cols() != w.cols() {
        return Err(shape_err("affine bias", w, b));
    }
    let scores = x.matmul(w)?;
    Ok(scores.elementwise(b, ElemOp::Add)?)
}

pub fn affine_backward(
    dout: &Matrix,
    x: &Matrix,
    w: &Matrix,
) -> Result<(Matrix, Matrix, Matrix), NnError> {
    if dout.rows() != x.rows() || dout.cols() != w.cols() || x.cols() != w.rows() {
        return Err(shape_err("affine backward", dout, w));
    }
    let dx = dout.matmul(&w.transpose())?;
    let dw = x.transpose().matmul(dout)?;
    let db = dout.reduce(crate::matrix::ReduceOp::Sum, crate::matrix::Axis::Cols);
    Ok((dx, dw, db))
}

pub fn relu_forward(x: &Matrix) -> Matrix {
    x.map(|v| if v > 0.0 { v } else { 0.0 })
}

/// Gradient masked by input > 0; the subgradient at exactly 0 is 0.
pub fn relu_backward(dout: &Matrix, x: &Matrix) -> Result<Matrix, NnError> {
    if dout.rows() != x.rows() || dout.cols() != x.cols() {
        return Err(shape_err("relu backward", dout, x));
    }
    let mask = x.map(|v| f64::from(v > 0.0));
    Ok(dout.elementwise(&mask, ElemOp::Mul)?)
}

fn sigmoid(v: f64) -> f64 {
    1.0 / (1.0 + (-v).exp())
}

pub fn sigmoid_forward(x: &Matrix) -> Matrix {
    x.map(sigmoid)
}

pub fn sigmoid_backward(dout: &Matrix, x: &Matrix) -> Result<Matrix, NnError> {
    if dout.rows() != x.rows() || dout.cols() != x.cols() {
        return Err(shape_err("sigmoid backward", dout, x));
    }
    let grad = x.map(|v| {
        let s = sigmoid(v);
        s * (1.0 - s)
    });
    Ok(dout.elementwise(&grad, ElemOp::Mul)?)
}

pub fn tanh_forward(x: &Matrix) -> Matrix {
    x.map(f64::tanh)
}

pub fn tanh_backward(dout: &Matrix, x: &Matrix) -> Result<Matrix, NnError> {
    if dout.rows() != x.rows() || dout.cols() != x.cols() {
        return Err(shape_err("tanh backward", dout, x));
    }
    let grad = x.map(|v| {
        let t = v.tanh();
        1.0 - t * t
    });
    Ok(dout.elementwise(&grad, ElemOp::Mul)?)
}

/// Row-wise exp-normalize with max subtraction; rows sum to 1 and all
/// outputs are strictly positive.
pub fn softmax_forward(scores: &Matrix) -> Matrix {
    let rows = scores.rows();
    let cols = scores.cols();
    let mut out = scores.to_dense_vec();
    for r in 0..rows {
        let row = &mut out[r * cols..(r + 1) * cols];
        let m = row.iter().copied().fold(f64::NEG_INFINITY, f64::max);
        let mut sum = 0.0;
        for v in row.iter_mut() {
            *v = (*v - m).exp();
            sum += *v;
        }
        for v in row.iter_mut() {
            *v /= sum;
        }
    }
    Matrix::dense(rows, cols, out)
        .expect("positive dims")
        .decide_format_default()
}

/// Exact softmax Jacobian-vector product:
/// dscores_j = probs_j * (dprobs_j - sum_k dprobs_k * probs_k), per row.
pub fn softmax_backward(dprobs: &Matrix, scores: &Matrix) -> Result<Matrix, NnError> {
    if dprobs.rows() != scores.rows() || dprobs.cols() != scores.cols() {
        return Err(shape_err("softmax backward", dprobs, scores));
    }
    let probs = softmax_forward(scores);
    let rows = scores.rows();
    let cols = scores.cols();
    let mut out = vec![0.0; rows * cols];
    for r in 0..rows {
        let mut dot = 0.0;
        for c in 0..cols {
            dot += dprobs.get(r, c) * probs.get(r, c);
        }
        for c in 0..cols {
            out[r * cols + c] = probs.get(r, c) * (dprobs.get(r, c) - dot);
        }
    }
    Ok(Matrix::dense(rows, cols, out)?.decide_format_default())
}

/// Mean cross-entropy: -(1/N) * sum(y * log(probs + clip)), accumulated in
/// row-major order.
pub fn cross_entropy_forward(probs: &Matrix, y: &Matrix) -> Result<f64, NnError> {
    if probs.rows() != y.rows() || probs.cols() != y.cols() {
        return Err(shape_err("cross entropy", probs, y));
    }
    let mut acc = 0.0;
    for r in 0..probs.rows() {
        for c in 0..probs.cols() {
            acc += y.get(r, c) * (probs.get(r, c) + LOG_CLIP).ln();
        }
    }
    Ok((0.0 - acc) / probs.rows() as f64)
}

/// Loss gradient with the element sequence
/// `(0 - y / (probs + clip)) / n`, where `n` is passed explicitly so a
/// per-sample call normalized by the full batch size produces bit-identical
/// entries to the full-batch call.
pub fn cross_entropy_backward_scaled(
    probs: &Matrix,
    y: &Matrix,
    n: f64,
) -> Result<Matrix, NnError> {
    if probs.rows() != y.rows() || probs.cols() != y.cols() {
        return Err(shape_err("cross entropy backward", probs, y));
    }
    let rows = probs.rows();
    let cols = probs.cols();
    let mut out = vec![0.0; rows * cols];
    for r in 0..rows {
        for c in 0..cols {
            out[r * cols + c] = (0.0 - y.get(r, c) / (probs.get(r, c) + LOG_CLIP)) / n;
        }
    }
    Ok(Matrix::dense(rows, cols, out)?.decide_format_default())
}

pub fn cross_entropy_backward(probs: &Matrix, y: &Matrix) -> Result<Matrix, NnError> {
    cross_entropy_backward_scaled(probs, y, probs.rows() as f64)
}

/// Inverted dropout. The 0/1 mask is drawn Bernoulli(keep_p) in row-major
/// order from a generator seeded with `seed`, so (seed, shape) fixes it.
pub fn dropout_forward(
    x: &Matrix,
    keep_p: f64,
    seed: u64,
) -> Result<(Matrix, Matrix), NnError> {
    if !(keep_p > 0.0 && keep_p <= 1.0) {
        return Err(NnError::BadKeepProbability { keep_p });
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mask: Vec<f64> = (0..x.rows() * x.cols())
        .map(|_| f64::from(rng.random_bool(keep_p)))
        .collect();
    let mask = Matrix::dense(x.rows(), x.cols(), mask)?;
    let out = x
        .elementwise(&mask, ElemOp::Mul)?
        .elementwise_scalar(keep_p, ElemOp::Div);
    Ok((out, mask))
}

pub fn dropout_backward(dout: &Matrix, mask: &Matrix, keep_p: f64) -> Result<Matrix, NnError> {
    if dout.rows() != mask.rows() || dout.cols() != mask.cols() {
        return Err(shape_err("dropout backward", dout, mask));
    }
    if !(keep_p > 0.0 && keep_p <= 1.0) {
        return Err(NnError::BadKeepProbability { keep_p });
    }
    Ok(dout
        .elementwise(mask, ElemOp::Mul)?
        .elementwise_scalar(keep_p, ElemOp::Div))
}

/// Conv filter init: K x (C*R*S) scaled-uniform with fan_in = C*R*S,
/// fan_out = K*R*S; bias starts at zero.
pub fn conv2d_init(
    rng: &mut ChaCha8Rng,
    k: usize,
    c: usize,
    r: usize,
    s: usize,
) -> (Matrix, Matrix) {
    let w = scaled_uniform_init(rng, k, c * r * s, c * r * s, k * r * s);
    (w, Matrix::zeros(1, k))
}

/// Convolution forward with per-filter bias added to every output position.
pub fn conv2d_forward_bias(
    x: &Matrix,
    f: &Matrix,
    b: &Matrix,
    p: &ConvParams,
) -> Result<Matrix, NnError> {
    if b.rows() != 1 || b.cols() != p.filters {
        return Err(shape_err("conv bias", f, b));
    }
    let raw = conv::conv2d_forward(x, f, p)?;
    let pq = p.patch_cols();
    let mut out = raw.to_dense_vec();
    for n in 0..raw.rows() {
        for k in 0..p.filters {
            let bv = b.get(0, k);
            for j in 0..pq {
                out[n * raw.cols() + k * pq + j] += bv;
            }
        }
    }
    Ok(Matrix::dense(raw.rows(), raw.cols(), out)?.decide_format_default())
}

/// Conv backward for (data, filter, bias). The bias gradient sums dout over
/// samples and positions per filter, rows ascending.
pub fn conv2d_backward_bias(
    dout: &Matrix,
    x: &Matrix,
    f: &Matrix,
    p: &ConvParams,
) -> Result<(Matrix, Matrix, Matrix), NnError> {
    let dx = conv::conv2d_backward_data(f, dout, p)?;
    let df = conv::conv2d_backward_filter(x, dout, p)?;
    let pq = p.patch_cols();
    let mut db = vec![0.0; p.filters];
    for n in 0..dout.rows() {
        for k in 0..p.filters {
            for j in 0..pq {
                db[k] += dout.get(n, k * pq + j);
            }
        }
    }
    let db = Matrix::dense(1, p.filters, db)?;
    Ok((dx, df, db))
}

/// Max pooling re-exported alongside the other layers.
pub fn max_pool2d_forward(x: &Matrix, p: &PoolParams) -> Result<(Matrix, Matrix), NnError> {
    Ok(conv::maxpool_forward(x, p)?)
}

pub fn max_pool2d_backward(
    argmax: &Matrix,
    dout: &Matrix,
    p: &PoolParams,
) -> Result<Matrix, NnError> {
    Ok(conv::maxpool_backward(argmax, dout, p)?)
}
