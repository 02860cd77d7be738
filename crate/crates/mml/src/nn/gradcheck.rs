//! Central-difference gradient checking for every layer and for a composed
//! network. The numeric side never touches the backward implementations, so
//! it is a genuinely independent oracle.

use super::layers::*;
use super::NnError;
use crate::conv::{ConvParams, PoolParams};
use crate::matrix::{ElemOp, Matrix, TensorShape};
use rand::Rng;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

/// Central-difference step.
pub const FD_STEP: f64 = 1e-5;
/// Per-layer relative error bound the library holds itself to.
pub const REL_TOLERANCE: f64 = 1e-5;
/// Looser bound at which the gradcheck command reports failure.
pub const CLI_TOLERANCE: f64 = 1e-4;
/// Denominator floor so near-zero gradients do not inflate relative error.
const REL_FLOOR: f64 = 1e-4;

#[derive(Debug, Clone)]
pub struct CheckReport {
    pub layer: String,
    pub param: &'static str,
    pub max_rel: f64,
}

/// Numeric gradient of a scalar function at `at`, one central difference
/// per element.
pub fn numerical_grad(at: &Matrix, h: f64, mut f: impl FnMut(&Matrix) -> f64) -> Matrix {
    let (rows, cols) = (at.rows(), at.cols());
    let base = at.to_dense_vec();
    let mut out = vec![0.0; rows * cols];
    for i in 0..rows * cols {
        let mut hi = base.clone();
        hi[i] += h;
        let mut lo = base.clone();
        lo[i] -= h;
        let fp = f(&Matrix::dense(rows, cols, hi).expect("positive dims"));
        let fm = f(&Matrix::dense(rows, cols, lo).expect("positive dims"));
        out[i] = (fp - fm) / (2.0 * h);
    }
    Matrix::dense(rows, cols, out).expect("positive dims")
}

/// Largest relative discrepancy |a - n| / max(|a|, |n|, floor).
pub fn max_rel_error(analytic: &Matrix, numeric: &Matrix) -> f64 {
    assert_eq!(
        (analytic.rows(), analytic.cols()),
        (numeric.rows(), numeric.cols()),
        "gradient shape mismatch"
    );
    let mut worst = 0.0f64;
    for r in 0..analytic.rows() {
        for c in 0..analytic.cols() {
            let a = analytic.get(r, c);
            let n = numeric.get(r, c);
            let rel = (a - n).abs() / a.abs().max(n.abs()).max(REL_FLOOR);
            worst = worst.max(rel);
        }
    }
    worst
}

fn uniform(rng: &mut ChaCha8Rng, rows: usize, cols: usize, lo: f64, hi: f64) -> Matrix {
    let data: Vec<f64> = (0..rows * cols).map(|_| rng.random_range(lo..hi)).collect();
    Matrix::dense(rows, cols, data).expect("positive dims")
}

/// Uniform values pushed away from zero, for layers with a kink there.
fn uniform_off_zero(rng: &mut ChaCha8Rng, rows: usize, cols: usize) -> Matrix {
    uniform(rng, rows, cols, -1.0, 1.0).map(|v| if v >= 0.0 { v + 0.2 } else { v - 0.2 })
}

fn weighted_sum(out: &Matrix, weights: &Matrix) -> f64 {
    out.elementwise(weights, ElemOp::Mul)
        .expect("same shape")
        .reduce(crate::matrix::ReduceOp::Sum, crate::matrix::Axis::All)
        .get(0, 0)
}

fn one_hot_rows(rng: &mut ChaCha8Rng, rows: usize, cols: usize) -> Matrix {
    let mut data = vec![0.0; rows * cols];
    for r in 0..rows {
        data[r * cols + rng.random_range(0..cols)] = 1.0;
    }
    Matrix::dense(rows, cols, data).expect("positive dims")
}

pub fn layer_names() -> &'static [&'static str] {
    &[
        "affine",
        "relu",
        "sigmoid",
        "tanh",
        "softmax",
        "cross_entropy_loss",
        "dropout",
        "conv2d",
        "max_pool2d",
    ]
}

/// Gradient-checks one layer with inputs drawn from `seed`. Returns one
/// report per checked tensor.
pub fn check_layer(name: &str, seed: u64) -> Result<Vec<CheckReport>, NnError> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let report = |param: &'static str, analytic: &Matrix, numeric: &Matrix| CheckReport {
        layer: name.to_string(),
        param,
        max_rel: max_rel_error(analytic, numeric),
    };
    match name {
        "affine" => {
            let x = uniform(&mut rng, 3, 4, -1.0, 1.0);
            let w = uniform(&mut rng, 4, 2, -1.0, 1.0);
            let b = uniform(&mut rng, 1, 2, -1.0, 1.0);
            let r = uniform(&mut rng, 3, 2, -1.0, 1.0);
            let (dx, dw, db) = affine_backward(&r, &x, &w)?;
            let nx = numerical_grad(&x, FD_STEP, |m| {
                weighted_sum(&affine_forward(m, &w, &b).unwrap(), &r)
            });
            let nw = numerical_grad(&w, FD_STEP, |m| {
                weighted_sum(&affine_forward(&x, m, &b).unwrap(), &r)
            });
            let nb = numerical_grad(&b, FD_STEP, |m| {
                weighted_sum(&affine_forward(&x, &w, m).unwrap(), &r)
            });
            Ok(vec![
                report("x", &dx, &nx),
                report("W", &dw, &nw),
                report("b", &db, &nb),
            ])
        }
        "relu" => {
            let x = uniform_off_zero(&mut rng, 3, 5);
            let r = uniform(&mut rng, 3, 5, -1.0, 1.0);
            let dx = relu_backward(&r, &x)?;
            let nx = numerical_grad(&x, FD_STEP, |m| weighted_sum(&relu_forward(m), &r));
            Ok(vec![report("x", &dx, &nx)])
        }
        "sigmoid" => {
            let x = uniform(&mut rng, 3, 5, -2.0, 2.0);
            let r = uniform(&mut rng, 3, 5, -1.0, 1.0);
            let dx = sigmoid_backward(&r, &x)?;
            let nx = numerical_grad(&x, FD_STEP, |m| weighted_sum(&sigmoid_forward(m), &r));
            Ok(vec![report("x", &dx, &nx)])
        }
        "tanh" => {
            let x = uniform(&mut rng, 3, 5, -2.0, 2.0);
            let r = uniform(&mut rng, 3, 5, -1.0, 1.0);
            let dx = tanh_backward(&r, &x)?;
            let nx = numerical_grad(&x, FD_STEP, |m| weighted_sum(&tanh_forward(m), &r));
            Ok(vec![report("x", &dx, &nx)])
        }
        "softmax" => {
            let s = uniform(&mut rng, 3, 4, -2.0, 2.0);
            let r = uniform(&mut rng, 3, 4, -1.0, 1.0);
            let ds = softmax_backward(&r, &s)?;
            let ns = numerical_grad(&s, FD_STEP, |m| weighted_sum(&softmax_forward(m), &r));
            Ok(vec![report("scores", &ds, &ns)])
        }
        "cross_entropy_loss" => {
            let probs = uniform(&mut rng, 3, 4, 0.05, 0.95);
            let y = one_hot_rows(&mut rng, 3, 4);
            let dp = cross_entropy_backward(&probs, &y)?;
            let np = numerical_grad(&probs, FD_STEP, |m| {
                cross_entropy_forward(m, &y).unwrap()
            });
            Ok(vec![report("probs", &dp, &np)])
        }
        "dropout" => {
            let x = uniform(&mut rng, 3, 5, -1.0, 1.0);
            let r = uniform(&mut rng, 3, 5, -1.0, 1.0);
            let keep_p = 0.6;
            let mask_seed = seed ^ 0x5eed;
            let (_, mask) = dropout_forward(&x, keep_p, mask_seed)?;
            let dx = dropout_backward(&r, &mask, keep_p)?;
            // The mask depends only on (seed, shape), so finite differences
            // see a fixed linear map.
            let nx = numerical_grad(&x, FD_STEP, |m| {
                weighted_sum(&dropout_forward(m, keep_p, mask_seed).unwrap().0, &r)
            });
            Ok(vec![report("x", &dx, &nx)])
        }
        "conv2d" => {
            let p = ConvParams::new(TensorShape::new(2, 1, 4, 4), 2, (3, 3), (1, 1), (1, 1))?;
            let x = uniform(&mut rng, 2, 16, -1.0, 1.0);
            let f = uniform(&mut rng, 2, 9, -1.0, 1.0);
            let b = uniform(&mut rng, 1, 2, -0.5, 0.5);
            let r = uniform(&mut rng, 2, p.out_width(), -1.0, 1.0);
            let (dx, df, db) = conv2d_backward_bias(&r, &x, &f, &p)?;
            let nx = numerical_grad(&x, FD_STEP, |m| {
                weighted_sum(&conv2d_forward_bias(m, &f, &b, &p).unwrap(), &r)
            });
            let nf = numerical_grad(&f, FD_STEP, |m| {
                weighted_sum(&conv2d_forward_bias(&x, m, &b, &p).unwrap(), &r)
            });
            let nb = numerical_grad(&b, FD_STEP, |m| {
                weighted_sum(&conv2d_forward_bias(&x, &f, m, &p).unwrap(), &r)
            });
            Ok(vec![
                report("x", &dx, &nx),
                report("W", &df, &nf),
                report("b", &db, &nb),
            ])
        }
        "max_pool2d" => {
            let p = PoolParams::new(TensorShape::new(2, 1, 4, 4), (2, 2), (2, 2), (0, 0))?;
            // Spread values so windows have clear winners away from ties.
            let x = uniform(&mut rng, 2, 16, -3.0, 3.0);
            let r = uniform(&mut rng, 2, p.out_width(), -1.0, 1.0);
            let (_, argmax) = max_pool2d_forward(&x, &p)?;
            let dx = max_pool2d_backward(&argmax, &r, &p)?;
            let nx = numerical_grad(&x, FD_STEP, |m| {
                weighted_sum(&max_pool2d_forward(m, &p).unwrap().0, &r)
            });
            Ok(vec![report("x", &dx, &nx)])
        }
        other => Err(NnError::UnknownLayer {
            name: other.to_string(),
        }),
    }
}

/// End-to-end check of conv -> relu -> maxpool -> affine -> softmax ->
/// cross-entropy, against finite differences of the whole composition.
pub fn check_composed(seed: u64) -> Result<Vec<CheckReport>, NnError> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let conv_p = ConvParams::new(TensorShape::new(2, 1, 4, 4), 2, (3, 3), (1, 1), (1, 1))?;
    let pool_p = PoolParams::new(TensorShape::new(2, 2, 4, 4), (2, 2), (2, 2), (0, 0))?;
    let classes = 3;
    let pooled = pool_p.out_width();

    let x = uniform(&mut rng, 2, 16, -1.0, 1.0);
    let f = uniform(&mut rng, 2, 9, -1.0, 1.0);
    let cb = uniform(&mut rng, 1, 2, -0.3, 0.3);
    let w = uniform(&mut rng, pooled, classes, -1.0, 1.0);
    let b = uniform(&mut rng, 1, classes, -0.3, 0.3);
    let y = one_hot_rows(&mut rng, 2, classes);

    let forward = |x: &Matrix, f: &Matrix, cb: &Matrix, w: &Matrix, b: &Matrix| -> f64 {
        let c = conv2d_forward_bias(x, f, cb, &conv_p).unwrap();
        let a = relu_forward(&c);
        let (pooled, _) = max_pool2d_forward(&a, &pool_p).unwrap();
        let scores = affine_forward(&pooled, w, b).unwrap();
        let probs = softmax_forward(&scores);
        cross_entropy_forward(&probs, &y).unwrap()
    };

    // Analytic chain, backward through every stage.
    let conv_out = conv2d_forward_bias(&x, &f, &cb, &conv_p)?;
    let act = relu_forward(&conv_out);
    let (pooled_out, argmax) = max_pool2d_forward(&act, &pool_p)?;
    let scores = affine_forward(&pooled_out, &w, &b)?;
    let probs = softmax_forward(&scores);
    let dprobs = cross_entropy_backward(&probs, &y)?;
    let dscores = softmax_backward(&dprobs, &scores)?;
    let (dpooled, dw, db) = affine_backward(&dscores, &pooled_out, &w)?;
    let dact = max_pool2d_backward(&argmax, &dpooled, &pool_p)?;
    let dconv = relu_backward(&dact, &conv_out)?;
    let (dx, df, dcb) = conv2d_backward_bias(&dconv, &x, &f, &conv_p)?;

    let checks: Vec<(&'static str, &Matrix, Matrix)> = vec![
        (
            "x",
            &dx,
            numerical_grad(&x, FD_STEP, |m| forward(m, &f, &cb, &w, &b)),
        ),
        (
            "conv W",
            &df,
            numerical_grad(&f, FD_STEP, |m| forward(&x, m, &cb, &w, &b)),
        ),
        (
            "conv b",
            &dcb,
            numerical_grad(&cb, FD_STEP, |m| forward(&x, &f, m, &w, &b)),
        ),
        (
            "W",
            &dw,
            numerical_grad(&w, FD_STEP, |m| forward(&x, &f, &cb, m, &b)),
        ),
        (
            "b",
            &db,
            numerical_grad(&b, FD_STEP, |m| forward(&x, &f, &cb, &w, m)),
        ),
    ];
    Ok(checks
        .into_iter()
        .map(|(param, analytic, numeric)| CheckReport {
            layer: "composed".to_string(),
            param,
            max_rel: max_rel_error(analytic, &numeric),
        })
        .collect())
}
