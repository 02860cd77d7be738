//! Dense linear system solver used by the `solve` builtin.

use super::{Matrix, MatrixError};

/// Solves `A x = B` by Gaussian elimination with partial pivoting. `B` may
/// have multiple right-hand-side columns. A pivot whose magnitude falls
/// below `1e-12 * max|A|` marks the system as singular.
pub fn solve(a: &Matrix, b: &Matrix) -> Result<Matrix, MatrixError> {
    if a.rows() != a.cols() {
        return Err(MatrixError::NotSquare {
            rows: a.rows(),
            cols: a.cols(),
        });
    }
    if b.rows() != a.rows() {
        return Err(MatrixError::ShapeMismatch {
            op: "solve",
            a_rows: a.rows(),
            a_cols: a.cols(),
            b_rows: b.rows(),
            b_cols: b.cols(),
        });
    }
    let n = a.rows();
    let m = b.cols();
    let mut lhs = a.to_dense_vec();
    let mut rhs = b.to_dense_vec();
    let scale = lhs.iter().fold(0.0f64, |acc, &v| acc.max(v.abs()));
    let tol = 1e-12 * scale.max(1.0);

    for step in 0..n {
        let mut pivot_row = step;
        let mut pivot_mag = lhs[step * n + step].abs();
        for r in step + 1..n {
            let mag = lhs[r * n + step].abs();
            if mag > pivot_mag {
                pivot_mag = mag;
                pivot_row = r;
            }
        }
        if pivot_mag < tol {
            return Err(MatrixError::Singular {
                step: step + 1,
                pivot: pivot_mag,
                tol,
            });
        }
        if pivot_row != step {
            for c in 0..n {
                lhs.swap(step * n + c, pivot_row * n + c);
            }
            for c in 0..m {
                rhs.swap(step * m + c, pivot_row * m + c);
            }
        }
        let pivot = lhs[step * n + step];
        for r in step + 1..n {
            let factor = lhs[r * n + step] / pivot;
            if factor == 0.0 {
                continue;
            }
            lhs[r * n + step] = 0.0;
            for c in step + 1..n {
                lhs[r * n + c] -= factor * lhs[step * n + c];
            }
            for c in 0..m {
                rhs[r * m + c] -= factor * rhs[step * m + c];
            }
        }
    }

    for step in (0..n).rev() {
        let pivot = lhs[step * n + step];
        for c in 0..m {
            let mut acc = rhs[step * m + c];
            for k in step + 1..n {
                acc -= lhs[step * n + k] * rhs[k * m + c];
            }
            rhs[step * m + c] = acc / pivot;
        }
    }

    Ok(Matrix::dense(n, m, rhs)?.decide_format_default())
}
