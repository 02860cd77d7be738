//! Native functions reachable from scripts: the global builtins (reductions,
//! shape probes, elementwise math, matrix construction, solve) and the
//! bundled layer and optimizer library addressed through `source(...) as ns`.

use rand_chacha::ChaCha8Rng;

use super::{DslError, Value};
use crate::conv::{ConvParams, PoolParams};
use crate::matrix::{solve, Axis, ElemOp, Matrix, ReduceOp, TensorShape};
use crate::nn::{layers, optim};

/// Canonical namespace key for a bundled library path, if the path is one.
pub fn library_key(path: &str) -> Option<&'static str> {
    Some(match path {
        "nn/layers/affine.dml" => "affine",
        "nn/layers/relu.dml" => "relu",
        "nn/layers/sigmoid.dml" => "sigmoid",
        "nn/layers/tanh.dml" => "tanh",
        "nn/layers/softmax.dml" => "softmax",
        "nn/layers/cross_entropy_loss.dml" => "cross_entropy_loss",
        "nn/layers/dropout.dml" => "dropout",
        "nn/layers/conv2d.dml" => "conv2d",
        "nn/layers/max_pool2d.dml" => "max_pool2d",
        "nn/optim/sgd.dml" => "sgd",
        "nn/optim/sgd_momentum.dml" => "sgd_momentum",
        "nn/optim/sgd_nesterov.dml" => "sgd_nesterov",
        "nn/optim/adagrad.dml" => "adagrad",
        "nn/optim/rmsprop.dml" => "rmsprop",
        "nn/optim/adam.dml" => "adam",
        _ => return None,
    })
}

fn rt(line: usize, e: impl std::fmt::Display) -> DslError {
    DslError::Runtime {
        line,
        msg: e.to_string(),
    }
}

fn kind_err(line: usize, what: &str, expected: &'static str, got: &Value) -> DslError {
    DslError::KindMismatch {
        line,
        what: what.to_string(),
        expected,
        got: got.kind_name(),
    }
}

/// Matrix argument, with scalars promoted to 1x1 at the call boundary.
fn want_matrix(v: &Value, line: usize, what: &str) -> Result<Matrix, DslError> {
    match v {
        Value::Matrix(m) => Ok(m.clone()),
        Value::Scalar(s) => Ok(Matrix::filled(1, 1, *s)),
        other => Err(kind_err(line, what, "a matrix", other)),
    }
}

/// Scalar argument, with 1x1 matrices demoted at the call boundary.
fn want_scalar(v: &Value, line: usize, what: &str) -> Result<f64, DslError> {
    match v {
        Value::Scalar(s) => Ok(*s),
        Value::Matrix(m) if m.rows() == 1 && m.cols() == 1 => Ok(m.get(0, 0)),
        other => Err(kind_err(line, what, "a scalar", other)),
    }
}

fn want_whole(v: &Value, line: usize, what: &str) -> Result<i64, DslError> {
    let x = want_scalar(v, line, what)?;
    let r = x.round();
    if (x - r).abs() > 1e-9 || !r.is_finite() {
        return Err(DslError::NonIntegerValue {
            line,
            what: what.to_string(),
            value: x,
        });
    }
    Ok(r as i64)
}

fn want_count(v: &Value, line: usize, what: &str) -> Result<usize, DslError> {
    let n = want_whole(v, line, what)?;
    if n < 0 {
        return Err(rt(line, format!("{what} must be non-negative, got {n}")));
    }
    Ok(n as usize)
}

fn check_arity(
    name: &str,
    expected: usize,
    args: &[Value],
    line: usize,
) -> Result<(), DslError> {
    if args.len() != expected {
        return Err(DslError::ArityMismatch {
            line,
            name: name.to_string(),
            expected,
            got: args.len(),
        });
    }
    Ok(())
}

fn one(v: Value) -> Result<Vec<Value>, DslError> {
    Ok(vec![v])
}

/// Dispatch a global builtin. `None` means the name is not a builtin at all,
/// which the interpreter turns into an undefined-function error.
pub fn call_global(name: &str, args: &[Value], line: usize) -> Option<Result<Vec<Value>, DslError>> {
    let result = match name {
        "nrow" | "ncol" => check_arity(name, 1, args, line).and_then(|()| {
            let m = want_matrix(&args[0], line, "argument of nrow/ncol")?;
            let v = if name == "nrow" { m.rows() } else { m.cols() };
            one(Value::Scalar(v as f64))
        }),
        "sum" | "mean" => check_arity(name, 1, args, line).and_then(|()| {
            let m = want_matrix(&args[0], line, name)?;
            let op = if name == "sum" { ReduceOp::Sum } else { ReduceOp::Mean };
            one(Value::Scalar(m.reduce(op, Axis::All).get(0, 0)))
        }),
        "min" | "max" => {
            let op = if name == "min" { ReduceOp::Min } else { ReduceOp::Max };
            let eop = if name == "min" { ElemOp::Min } else { ElemOp::Max };
            match args.len() {
                1 => match &args[0] {
                    Value::Scalar(s) => one(Value::Scalar(*s)),
                    v => want_matrix(v, line, name)
                        .and_then(|m| one(Value::Scalar(m.reduce(op, Axis::All).get(0, 0)))),
                },
                2 => match (&args[0], &args[1]) {
                    (Value::Scalar(a), Value::Scalar(b)) => {
                        one(Value::Scalar(if name == "min" { a.min(*b) } else { a.max(*b) }))
                    }
                    (a, b) => {
                        let am = match want_matrix(a, line, name) {
                            Ok(m) => m,
                            Err(e) => return Some(Err(e)),
                        };
                        let bm = match want_matrix(b, line, name) {
                            Ok(m) => m,
                            Err(e) => return Some(Err(e)),
                        };
                        am.elementwise(&bm, eop)
                            .map_err(|e| rt(line, e))
                            .and_then(|m| one(Value::Matrix(m)))
                    }
                },
                n => Err(DslError::ArityMismatch {
                    line,
                    name: name.to_string(),
                    expected: 2,
                    got: n,
                }),
            }
        }
        "rowSums" | "rowMeans" | "rowMins" | "rowMaxs" | "colSums" | "colMeans" | "colMins"
        | "colMaxs" => check_arity(name, 1, args, line).and_then(|()| {
            let m = want_matrix(&args[0], line, name)?;
            let op = match name {
                "rowSums" | "colSums" => ReduceOp::Sum,
                "rowMeans" | "colMeans" => ReduceOp::Mean,
                "rowMins" | "colMins" => ReduceOp::Min,
                _ => ReduceOp::Max,
            };
            let axis = if name.starts_with("row") { Axis::Rows } else { Axis::Cols };
            one(Value::Matrix(m.reduce(op, axis)))
        }),
        "t" => check_arity(name, 1, args, line).and_then(|()| {
            let m = want_matrix(&args[0], line, "argument of t")?;
            one(Value::Matrix(m.transpose()))
        }),
        "solve" => check_arity(name, 2, args, line).and_then(|()| {
            let a = want_matrix(&args[0], line, "coefficient matrix")?;
            let b = want_matrix(&args[1], line, "right-hand side")?;
            solve(&a, &b).map_err(|e| rt(line, e)).and_then(|m| one(Value::Matrix(m)))
        }),
        "matrix" => check_arity(name, 3, args, line).and_then(|()| {
            let rows = want_count(&args[1], line, "matrix() row count")?;
            let cols = want_count(&args[2], line, "matrix() column count")?;
            if rows == 0 || cols == 0 {
                return Err(rt(line, "matrix() dimensions must be at least 1"));
            }
            match &args[0] {
                Value::Scalar(v) => one(Value::Matrix(Matrix::filled(rows, cols, *v))),
                Value::Matrix(m) => {
                    if m.rows() * m.cols() != rows * cols {
                        return Err(rt(
                            line,
                            format!(
                                "matrix() cannot reshape {}x{} into {rows}x{cols}",
                                m.rows(),
                                m.cols()
                            ),
                        ));
                    }
                    let data = m.to_dense_vec();
                    one(Value::Matrix(
                        Matrix::dense(rows, cols, data).map_err(|e| rt(line, e))?,
                    ))
                }
                other => Err(kind_err(line, "matrix() fill value", "a matrix", other)),
            }
        }),
        "ceil" | "floor" | "round" | "abs" | "exp" | "log" | "sqrt" => {
            let f: fn(f64) -> f64 = match name {
                "ceil" => f64::ceil,
                "floor" => f64::floor,
                "round" => f64::round,
                "abs" => f64::abs,
                "exp" => f64::exp,
                "log" => f64::ln,
                _ => f64::sqrt,
            };
            check_arity(name, 1, args, line).and_then(|()| match &args[0] {
                Value::Scalar(s) => one(Value::Scalar(f(*s))),
                Value::Matrix(m) => one(Value::Matrix(m.map(f))),
                other => Err(kind_err(line, name, "a scalar", other)),
            })
        }
        _ => return None,
    };
    Some(result)
}

struct ConvArgs {
    params: ConvParams,
}

/// Shared tail of the conv2d signatures: C, Hin, Win, Hf, Wf, strideh,
/// stridew, padh, padw.
fn conv_args(
    n: usize,
    filters: usize,
    tail: &[Value],
    line: usize,
) -> Result<ConvArgs, DslError> {
    let c = want_count(&tail[0], line, "channel count")?;
    let hin = want_count(&tail[1], line, "input height")?;
    let win = want_count(&tail[2], line, "input width")?;
    let hf = want_count(&tail[3], line, "kernel height")?;
    let wf = want_count(&tail[4], line, "kernel width")?;
    let sh = want_count(&tail[5], line, "stride height")?;
    let sw = want_count(&tail[6], line, "stride width")?;
    let ph = want_count(&tail[7], line, "pad height")?;
    let pw = want_count(&tail[8], line, "pad width")?;
    let params = ConvParams::new(
        TensorShape::new(n, c, hin, win),
        filters,
        (hf, wf),
        (sh, sw),
        (ph, pw),
    )
    .map_err(|e| rt(line, e))?;
    Ok(ConvArgs { params })
}

fn pool_args(n: usize, tail: &[Value], line: usize) -> Result<PoolParams, DslError> {
    let c = want_count(&tail[0], line, "channel count")?;
    let hin = want_count(&tail[1], line, "input height")?;
    let win = want_count(&tail[2], line, "input width")?;
    let hf = want_count(&tail[3], line, "window height")?;
    let wf = want_count(&tail[4], line, "window width")?;
    let sh = want_count(&tail[5], line, "stride height")?;
    let sw = want_count(&tail[6], line, "stride width")?;
    let ph = want_count(&tail[7], line, "pad height")?;
    let pw = want_count(&tail[8], line, "pad width")?;
    PoolParams::new(TensorShape::new(n, c, hin, win), (hf, wf), (sh, sw), (ph, pw))
        .map_err(|e| rt(line, e))
}

fn check_out_extents(
    line: usize,
    declared: (usize, usize),
    actual: (usize, usize),
) -> Result<(), DslError> {
    if declared != actual {
        return Err(rt(
            line,
            format!(
                "declared output extents {}x{} do not match computed {}x{}",
                declared.0, declared.1, actual.0, actual.1
            ),
        ));
    }
    Ok(())
}

/// Dispatch a call into the bundled library namespace `key`.
pub fn call_library(
    key: &'static str,
    func: &str,
    args: &[Value],
    line: usize,
    rng: &mut ChaCha8Rng,
) -> Result<Vec<Value>, DslError> {
    let qualified = |f: &str| format!("{key}::{f}");
    match (key, func) {
        ("affine", "init") => {
            check_arity(&qualified(func), 2, args, line)?;
            let d = want_count(&args[0], line, "input feature count")?;
            let k = want_count(&args[1], line, "output feature count")?;
            let (w, b) = layers::affine_init(rng, d, k);
            Ok(vec![Value::Matrix(w), Value::Matrix(b)])
        }
        ("affine", "forward") => {
            check_arity(&qualified(func), 3, args, line)?;
            let x = want_matrix(&args[0], line, "X")?;
            let w = want_matrix(&args[1], line, "W")?;
            let b = want_matrix(&args[2], line, "b")?;
            let out = layers::affine_forward(&x, &w, &b).map_err(|e| rt(line, e))?;
            Ok(vec![Value::Matrix(out)])
        }
        ("affine", "backward") => {
            check_arity(&qualified(func), 4, args, line)?;
            let dout = want_matrix(&args[0], line, "dout")?;
            let x = want_matrix(&args[1], line, "X")?;
            let w = want_matrix(&args[2], line, "W")?;
            let (dx, dw, db) = layers::affine_backward(&dout, &x, &w).map_err(|e| rt(line, e))?;
            Ok(vec![Value::Matrix(dx), Value::Matrix(dw), Value::Matrix(db)])
        }
        ("relu" | "sigmoid" | "tanh", "forward") => {
            check_arity(&qualified(func), 1, args, line)?;
            let x = want_matrix(&args[0], line, "X")?;
            let out = match key {
                "relu" => layers::relu_forward(&x),
                "sigmoid" => layers::sigmoid_forward(&x),
                _ => layers::tanh_forward(&x),
            };
            Ok(vec![Value::Matrix(out)])
        }
        ("relu" | "sigmoid" | "tanh", "backward") => {
            check_arity(&qualified(func), 2, args, line)?;
            let dout = want_matrix(&args[0], line, "dout")?;
            let x = want_matrix(&args[1], line, "X")?;
            let out = match key {
                "relu" => layers::relu_backward(&dout, &x),
                "sigmoid" => layers::sigmoid_backward(&dout, &x),
                _ => layers::tanh_backward(&dout, &x),
            }
            .map_err(|e| rt(line, e))?;
            Ok(vec![Value::Matrix(out)])
        }
        ("softmax", "forward") => {
            check_arity(&qualified(func), 1, args, line)?;
            let scores = want_matrix(&args[0], line, "scores")?;
            Ok(vec![Value::Matrix(layers::softmax_forward(&scores))])
        }
        ("softmax", "backward") => {
            check_arity(&qualified(func), 2, args, line)?;
            let dprobs = want_matrix(&args[0], line, "dprobs")?;
            let scores = want_matrix(&args[1], line, "scores")?;
            let out = layers::softmax_backward(&dprobs, &scores).map_err(|e| rt(line, e))?;
            Ok(vec![Value::Matrix(out)])
        }
        ("cross_entropy_loss", "forward") => {
            check_arity(&qualified(func), 2, args, line)?;
            let probs = want_matrix(&args[0], line, "probs")?;
            let y = want_matrix(&args[1], line, "y")?;
            let loss = layers::cross_entropy_forward(&probs, &y).map_err(|e| rt(line, e))?;
            Ok(vec![Value::Scalar(loss)])
        }
        ("cross_entropy_loss", "backward") => {
            check_arity(&qualified(func), 2, args, line)?;
            let probs = want_matrix(&args[0], line, "probs")?;
            let y = want_matrix(&args[1], line, "y")?;
            let d = layers::cross_entropy_backward(&probs, &y).map_err(|e| rt(line, e))?;
            Ok(vec![Value::Matrix(d)])
        }
        ("dropout", "forward") => {
            check_arity(&qualified(func), 3, args, line)?;
            let x = want_matrix(&args[0], line, "X")?;
            let keep_p = want_scalar(&args[1], line, "keep probability")?;
            let seed = want_whole(&args[2], line, "dropout seed")?;
            if seed < 0 {
                return Err(rt(line, "dropout seed must be non-negative"));
            }
            let (out, mask) =
                layers::dropout_forward(&x, keep_p, seed as u64).map_err(|e| rt(line, e))?;
            Ok(vec![Value::Matrix(out), Value::Matrix(mask)])
        }
        ("dropout", "backward") => {
            check_arity(&qualified(func), 4, args, line)?;
            let dout = want_matrix(&args[0], line, "dout")?;
            let keep_p = want_scalar(&args[2], line, "keep probability")?;
            let mask = want_matrix(&args[3], line, "mask")?;
            let dx = layers::dropout_backward(&dout, &mask, keep_p).map_err(|e| rt(line, e))?;
            Ok(vec![Value::Matrix(dx)])
        }
        ("conv2d", "init") => {
            check_arity(&qualified(func), 4, args, line)?;
            let f = want_count(&args[0], line, "filter count")?;
            let c = want_count(&args[1], line, "channel count")?;
            let hf = want_count(&args[2], line, "kernel height")?;
            let wf = want_count(&args[3], line, "kernel width")?;
            let (w, b) = layers::conv2d_init(rng, f, c, hf, wf);
            Ok(vec![Value::Matrix(w), Value::Matrix(b)])
        }
        ("conv2d", "forward") => {
            check_arity(&qualified(func), 12, args, line)?;
            let x = want_matrix(&args[0], line, "X")?;
            let w = want_matrix(&args[1], line, "W")?;
            let b = want_matrix(&args[2], line, "b")?;
            let ca = conv_args(x.rows(), w.rows(), &args[3..], line)?;
            let out = layers::conv2d_forward_bias(&x, &w, &b, &ca.params).map_err(|e| rt(line, e))?;
            Ok(vec![
                Value::Matrix(out),
                Value::Scalar(ca.params.out.0 as f64),
                Value::Scalar(ca.params.out.1 as f64),
            ])
        }
        ("conv2d", "backward") => {
            check_arity(&qualified(func), 15, args, line)?;
            let dout = want_matrix(&args[0], line, "dout")?;
            let hout = want_count(&args[1], line, "output height")?;
            let wout = want_count(&args[2], line, "output width")?;
            let x = want_matrix(&args[3], line, "X")?;
            let w = want_matrix(&args[4], line, "W")?;
            let _b = want_matrix(&args[5], line, "b")?;
            let ca = conv_args(x.rows(), w.rows(), &args[6..], line)?;
            check_out_extents(line, (hout, wout), ca.params.out)?;
            let (dx, dw, db) =
                layers::conv2d_backward_bias(&dout, &x, &w, &ca.params).map_err(|e| rt(line, e))?;
            Ok(vec![Value::Matrix(dx), Value::Matrix(dw), Value::Matrix(db)])
        }
        ("max_pool2d", "forward") => {
            check_arity(&qualified(func), 10, args, line)?;
            let x = want_matrix(&args[0], line, "X")?;
            let params = pool_args(x.rows(), &args[1..], line)?;
            let (out, _argmax) = layers::max_pool2d_forward(&x, &params).map_err(|e| rt(line, e))?;
            Ok(vec![
                Value::Matrix(out),
                Value::Scalar(params.out.0 as f64),
                Value::Scalar(params.out.1 as f64),
            ])
        }
        ("max_pool2d", "backward") => {
            check_arity(&qualified(func), 13, args, line)?;
            let dout = want_matrix(&args[0], line, "dout")?;
            let hout = want_count(&args[1], line, "output height")?;
            let wout = want_count(&args[2], line, "output width")?;
            let x = want_matrix(&args[3], line, "X")?;
            let params = pool_args(x.rows(), &args[4..], line)?;
            check_out_extents(line, (hout, wout), params.out)?;
            let (_out, argmax) = layers::max_pool2d_forward(&x, &params).map_err(|e| rt(line, e))?;
            let dx = layers::max_pool2d_backward(&argmax, &dout, &params).map_err(|e| rt(line, e))?;
            Ok(vec![Value::Matrix(dx)])
        }
        ("sgd", "update") => {
            check_arity(&qualified(func), 3, args, line)?;
            let p = want_matrix(&args[0], line, "parameter")?;
            let g = want_matrix(&args[1], line, "gradient")?;
            let lr = want_scalar(&args[2], line, "learning rate")?;
            let out = optim::sgd_update(&p, &g, lr).map_err(|e| rt(line, e))?;
            Ok(vec![Value::Matrix(out)])
        }
        ("sgd_momentum" | "sgd_nesterov" | "adagrad" | "rmsprop", "init") => {
            check_arity(&qualified(func), 1, args, line)?;
            let p = want_matrix(&args[0], line, "parameter")?;
            Ok(vec![Value::Matrix(Matrix::zeros(p.rows(), p.cols()))])
        }
        ("sgd_momentum" | "sgd_nesterov", "update") => {
            check_arity(&qualified(func), 5, args, line)?;
            let p = want_matrix(&args[0], line, "parameter")?;
            let g = want_matrix(&args[1], line, "gradient")?;
            let lr = want_scalar(&args[2], line, "learning rate")?;
            let mu = want_scalar(&args[3], line, "momentum")?;
            let v = want_matrix(&args[4], line, "velocity")?;
            let (p2, v2) = if key == "sgd_momentum" {
                optim::sgd_momentum_update(&p, &g, lr, mu, &v)
            } else {
                optim::sgd_nesterov_update(&p, &g, lr, mu, &v)
            }
            .map_err(|e| rt(line, e))?;
            Ok(vec![Value::Matrix(p2), Value::Matrix(v2)])
        }
        ("adagrad", "update") => {
            check_arity(&qualified(func), 5, args, line)?;
            let p = want_matrix(&args[0], line, "parameter")?;
            let g = want_matrix(&args[1], line, "gradient")?;
            let lr = want_scalar(&args[2], line, "learning rate")?;
            let eps = want_scalar(&args[3], line, "epsilon")?;
            let cache = want_matrix(&args[4], line, "cache")?;
            let (p2, c2) = optim::adagrad_update(&p, &g, lr, eps, &cache).map_err(|e| rt(line, e))?;
            Ok(vec![Value::Matrix(p2), Value::Matrix(c2)])
        }
        ("rmsprop", "update") => {
            check_arity(&qualified(func), 6, args, line)?;
            let p = want_matrix(&args[0], line, "parameter")?;
            let g = want_matrix(&args[1], line, "gradient")?;
            let lr = want_scalar(&args[2], line, "learning rate")?;
            let rho = want_scalar(&args[3], line, "decay rate")?;
            let eps = want_scalar(&args[4], line, "epsilon")?;
            let cache = want_matrix(&args[5], line, "cache")?;
            let (p2, c2) =
                optim::rmsprop_update(&p, &g, lr, rho, eps, &cache).map_err(|e| rt(line, e))?;
            Ok(vec![Value::Matrix(p2), Value::Matrix(c2)])
        }
        ("adam", "init") => {
            check_arity(&qualified(func), 1, args, line)?;
            let p = want_matrix(&args[0], line, "parameter")?;
            Ok(vec![
                Value::Matrix(Matrix::zeros(p.rows(), p.cols())),
                Value::Matrix(Matrix::zeros(p.rows(), p.cols())),
            ])
        }
        ("adam", "update") => {
            check_arity(&qualified(func), 9, args, line)?;
            let p = want_matrix(&args[0], line, "parameter")?;
            let g = want_matrix(&args[1], line, "gradient")?;
            let lr = want_scalar(&args[2], line, "learning rate")?;
            let beta1 = want_scalar(&args[3], line, "beta1")?;
            let beta2 = want_scalar(&args[4], line, "beta2")?;
            let eps = want_scalar(&args[5], line, "epsilon")?;
            let t = want_whole(&args[6], line, "step counter t")?;
            if t < 1 {
                return Err(rt(line, format!("adam step counter must be >= 1, got {t}")));
            }
            let m = want_matrix(&args[7], line, "first moment")?;
            let v = want_matrix(&args[8], line, "second moment")?;
            let (p2, m2, v2) =
                optim::adam_update(&p, &g, lr, beta1, beta2, eps, t as u64, &m, &v)
                    .map_err(|e| rt(line, e))?;
            Ok(vec![Value::Matrix(p2), Value::Matrix(m2), Value::Matrix(v2)])
        }
        _ => Err(DslError::UndefinedFunction {
            line,
            name: qualified(func),
        }),
    }
}
