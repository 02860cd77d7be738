//! The six optimizer update rules as pure functions over (parameter,
//! gradient, accumulator) matrices. The scripting builtins call straight
//! into these.

use super::NnError;
use crate::matrix::Matrix;

pub const DEFAULT_EPSILON: f64 = 1e-8;
pub const DEFAULT_MOMENTUM: f64 = 0.9;
pub const DEFAULT_DECAY: f64 = 0.99;
pub const DEFAULT_BETA1: f64 = 0.9;
pub const DEFAULT_BETA2: f64 = 0.999;

fn check_same(op: &'static str, a: &Matrix, b: &Matrix) -> Result<(), NnError> {
    if a.rows() != b.rows() || a.cols() != b.cols() {
        return Err(NnError::Shape {
            op,
            a_rows: a.rows(),
            a_cols: a.cols(),
            b_rows: b.rows(),
            b_cols: b.cols(),
        });
    }
    Ok(())
}

fn zip2(a: &Matrix, b: &Matrix, f: impl Fn(f64, f64) -> f64) -> Matrix {
    let (rows, cols) = (a.rows(), a.cols());
    let mut out = vec![0.0; rows * cols];
    for r in 0..rows {
        for c in 0..cols {
            out[r * cols + c] = f(a.get(r, c), b.get(r, c));
        }
    }
    Matrix::dense(rows, cols, out)
        .expect("positive dims")
        .decide_format_default()
}

fn zip3(a: &Matrix, b: &Matrix, c: &Matrix, f: impl Fn(f64, f64, f64) -> f64) -> Matrix {
    let (rows, cols) = (a.rows(), a.cols());
    let mut out = vec![0.0; rows * cols];
    for r in 0..rows {
        for cc in 0..cols {
            out[r * cols + cc] = f(a.get(r, cc), b.get(r, cc), c.get(r, cc));
        }
    }
    Matrix::dense(rows, cols, out)
        .expect("positive dims")
        .decide_format_default()
}

/// p' = p - lr * g
pub fn sgd_update(p: &Matrix, g: &Matrix, lr: f64) -> Result<Matrix, NnError> {
    check_same("sgd", p, g)?;
    Ok(zip2(p, g, |pv, gv| pv - lr * gv))
}

/// v' = mu * v - lr * g; p' = p + v'
pub fn sgd_momentum_update(
    p: &Matrix,
    g: &Matrix,
    lr: f64,
    mu: f64,
    v: &Matrix,
) -> Result<(Matrix, Matrix), NnError> {
    check_same("sgd_momentum", p, g)?;
    check_same("sgd_momentum velocity", p, v)?;
    let v_new = zip2(v, g, |vv, gv| mu * vv - lr * gv);
    let p_new = zip2(p, &v_new, |pv, vv| pv + vv);
    Ok((p_new, v_new))
}

/// Nesterov momentum in its lookahead form:
/// v' = mu * v - lr * g; p' = p - mu * v + (1 + mu) * v'
pub fn sgd_nesterov_update(
    p: &Matrix,
    g: &Matrix,
    lr: f64,
    mu: f64,
    v: &Matrix,
) -> Result<(Matrix, Matrix), NnError> {
    check_same("sgd_nesterov", p, g)?;
    check_same("sgd_nesterov velocity", p, v)?;
    let v_new = zip2(v, g, |vv, gv| mu * vv - lr * gv);
    let p_new = zip3(p, v, &v_new, |pv, v_old, vv| {
        pv - mu * v_old + (1.0 + mu) * vv
    });
    Ok((p_new, v_new))
}

/// c' = c + g^2; p' = p - lr * g / (sqrt(c') + eps)
pub fn adagrad_update(
    p: &Matrix,
    g: &Matrix,
    lr: f64,
    eps: f64,
    cache: &Matrix,
) -> Result<(Matrix, Matrix), NnError> {
    check_same("adagrad", p, g)?;
    check_same("adagrad cache", p, cache)?;
    let c_new = zip2(cache, g, |cv, gv| cv + gv * gv);
    let p_new = zip3(p, g, &c_new, |pv, gv, cv| pv - lr * gv / (cv.sqrt() + eps));
    Ok((p_new, c_new))
}

/// c' = rho * c + (1 - rho) * g^2; p' = p - lr * g / (sqrt(c') + eps)
pub fn rmsprop_update(
    p: &Matrix,
    g: &Matrix,
    lr: f64,
    rho: f64,
    eps: f64,
    cache: &Matrix,
) -> Result<(Matrix, Matrix), NnError> {
    check_same("rmsprop", p, g)?;
    check_same("rmsprop cache", p, cache)?;
    let c_new = zip2(cache, g, |cv, gv| rho * cv + (1.0 - rho) * gv * gv);
    let p_new = zip3(p, g, &c_new, |pv, gv, cv| pv - lr * gv / (cv.sqrt() + eps));
    Ok((p_new, c_new))
}

/// Bias-corrected Adam. `t` is the 1-based step number of this update.
#[allow(clippy::too_many_arguments)]
pub fn adam_update(
    p: &Matrix,
    g: &Matrix,
    lr: f64,
    beta1: f64,
    beta2: f64,
    eps: f64,
    t: u64,
    m: &Matrix,
    v: &Matrix,
) -> Result<(Matrix, Matrix, Matrix), NnError> {
    check_same("adam", p, g)?;
    check_same("adam first moment", p, m)?;
    check_same("adam second moment", p, v)?;
    if t == 0 {
        return Err(NnError::AdamStepZero);
    }
    let m_new = zip2(m, g, |mv, gv| beta1 * mv + (1.0 - beta1) * gv);
    let v_new = zip2(v, g, |vv, gv| beta2 * vv + (1.0 - beta2) * gv * gv);
    let mc = 1.0 - beta1.powi(t as i32);
    let vc = 1.0 - beta2.powi(t as i32);
    let p_new = zip3(p, &m_new, &v_new, |pv, mv, vv| {
        pv - lr * (mv / mc) / ((vv / vc).sqrt() + eps)
    });
    Ok((p_new, m_new, v_new))
}
