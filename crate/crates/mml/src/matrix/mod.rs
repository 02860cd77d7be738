//! Two-dimensional float64 matrix with dense row-major and CSR sparse layouts.
//!
//! Every value is immutable after construction; operations return new
//! matrices. The exact nonzero count is maintained eagerly on every
//! construction path, and [`Matrix::decide_format`] converts between layouts
//! around a sparsity threshold so downstream code can stay format-agnostic.
//!
//! Reduction order is part of the contract: accumulations that cross rows
//! (matmul contractions, column sums) always visit rows in ascending order,
//! which is what makes partitioned gradient execution reproduce sequential
//! results exactly (see the `plan` module).

pub mod io;
pub mod mem;
pub mod shape;
mod solve;

pub use shape::TensorShape;
pub use solve::solve;

use thiserror::Error;

/// Matrices at or below this nonzero fraction are stored sparse by default.
pub const DEFAULT_SPARSITY_THRESHOLD: f64 = 0.4;

#[derive(Debug, Error)]
pub enum MatrixError {
    #[error("matrix dimensions must be positive, got {rows}x{cols}")]
    EmptyShape { rows: usize, cols: usize },
    #[error("data length {len} does not match a {rows}x{cols} matrix")]
    DataLength { len: usize, rows: usize, cols: usize },
    #[error("ragged rows: row {row} has {got} entries, expected {expected}")]
    RaggedRows { row: usize, got: usize, expected: usize },
    #[error("shape mismatch in {op}: left is {a_rows}x{a_cols}, right is {b_rows}x{b_cols}")]
    ShapeMismatch {
        op: &'static str,
        a_rows: usize,
        a_cols: usize,
        b_rows: usize,
        b_cols: usize,
    },
    #[error("{what} index {index} out of range 1..={extent}")]
    IndexOutOfRange {
        what: &'static str,
        index: usize,
        extent: usize,
    },
    #[error("empty {what} range {lo}:{hi}")]
    EmptyRange { what: &'static str, lo: usize, hi: usize },
    #[error("entry ({row}, {col}) outside a {rows}x{cols} matrix")]
    EntryOutOfBounds {
        row: usize,
        col: usize,
        rows: usize,
        cols: usize,
    },
    #[error("duplicate entry for position ({row}, {col})")]
    DuplicateEntry { row: usize, col: usize },
    #[error("solve requires a square coefficient matrix, got {rows}x{cols}")]
    NotSquare { rows: usize, cols: usize },
    #[error("matrix is singular: pivot {pivot:e} at elimination step {step} is below tolerance {tol:e}")]
    Singular { step: usize, pivot: f64, tol: f64 },
    #[error("parse error at {path}:{line}: {msg}")]
    Parse {
        path: String,
        line: usize,
        msg: String,
    },
    #[error("io error on {path}: {source}")]
    Io {
        path: String,
        #[source]
        source: std::io::Error,
    },
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ElemOp {
    Add,
    Sub,
    Mul,
    Div,
    Pow,
    Min,
    Max,
    Lt,
    Le,
    Gt,
    Ge,
    Eq,
    Ne,
    And,
    Or,
}

impl ElemOp {
    fn apply(self, a: f64, b: f64) -> f64 {
        match self {
            ElemOp::Add => a + b,
            ElemOp::Sub => a - b,
            ElemOp::Mul => a * b,
            ElemOp::Div => a / b,
            ElemOp::Pow => a.powf(b),
            ElemOp::Min => a.min(b),
            ElemOp::Max => a.max(b),
            ElemOp::Lt => f64::from(a < b),
            ElemOp::Le => f64::from(a <= b),
            ElemOp::Gt => f64::from(a > b),
            ElemOp::Ge => f64::from(a >= b),
            ElemOp::Eq => f64::from(a == b),
            ElemOp::Ne => f64::from(a != b),
            ElemOp::And => f64::from(a != 0.0 && b != 0.0),
            ElemOp::Or => f64::from(a != 0.0 || b != 0.0),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ReduceOp {
    Sum,
    Mean,
    Min,
    Max,
}

/// Which axis a reduction collapses. `Rows` keeps one value per row
/// (a rows x 1 result), `Cols` one value per column (1 x cols), `All` a 1 x 1.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Axis {
    All,
    Rows,
    Cols,
}

#[derive(Debug, Clone)]
enum Payload {
    Dense(Vec<f64>),
    Csr {
        row_ptr: Vec<usize>,
        col_idx: Vec<usize>,
        values: Vec<f64>,
    },
}

impl Payload {
    fn bytes(&self) -> u64 {
        let f = std::mem::size_of::<f64>() as u64;
        let u = std::mem::size_of::<usize>() as u64;
        match self {
            Payload::Dense(d) => d.len() as u64 * f,
            Payload::Csr {
                row_ptr,
                col_idx,
                values,
            } => row_ptr.len() as u64 * u + col_idx.len() as u64 * u + values.len() as u64 * f,
        }
    }
}

#[derive(Debug)]
pub struct Matrix {
    rows: usize,
    cols: usize,
    nnz: usize,
    payload: Payload,
}

impl Clone for Matrix {
    fn clone(&self) -> Self {
        let payload = self.payload.clone();
        mem::on_alloc(payload.bytes());
        Matrix {
            rows: self.rows,
            cols: self.cols,
            nnz: self.nnz,
            payload,
        }
    }
}

impl Drop for Matrix {
    fn drop(&mut self) {
        mem::on_free(self.payload.bytes());
    }
}

/// Logical equality: same dimensions and element-wise `==` regardless of
/// storage format. NaN entries compare unequal, matching IEEE semantics.
impl PartialEq for Matrix {
    fn eq(&self, other: &Self) -> bool {
        if self.rows != other.rows || self.cols != other.cols {
            return false;
        }
        for i in 0..self.rows {
            for j in 0..self.cols {
                if self.get(i, j) != other.get(i, j) {
                    return false;
                }
            }
        }
        true
    }
}

fn count_nonzeros(data: &[f64]) -> usize {
    data.iter().filter(|&&v| v != 0.0).count()
}

impl Matrix {
    fn build(rows: usize, cols: usize, payload: Payload) -> Matrix {
        assert!(rows > 0 && cols > 0, "matrix dimensions must be positive");
        let nnz = match &payload {
            Payload::Dense(d) => {
                debug_assert_eq!(d.len(), rows * cols);
                count_nonzeros(d)
            }
            Payload::Csr { values, .. } => {
                debug_assert!(values.iter().all(|&v| v != 0.0 && v.is_finite()));
                values.len()
            }
        };
        mem::on_alloc(payload.bytes());
        Matrix {
            rows,
            cols,
            nnz,
            payload,
        }
    }

    pub fn dense(rows: usize, cols: usize, data: Vec<f64>) -> Result<Matrix, MatrixError> {
        if rows == 0 || cols == 0 {
            return Err(MatrixError::EmptyShape { rows, cols });
        }
        if data.len() != rows * cols {
            return Err(MatrixError::DataLength {
                len: data.len(),
                rows,
                cols,
            });
        }
        Ok(Matrix::build(rows, cols, Payload::Dense(data)))
    }

    pub fn zeros(rows: usize, cols: usize) -> Matrix {
        Matrix::build(rows, cols, Payload::Dense(vec![0.0; rows * cols]))
    }

    pub fn filled(rows: usize, cols: usize, v: f64) -> Matrix {
        Matrix::build(rows, cols, Payload::Dense(vec![v; rows * cols]))
    }

    pub fn identity(n: usize) -> Matrix {
        let mut d = vec![0.0; n * n];
        for i in 0..n {
            d[i * n + i] = 1.0;
        }
        Matrix::build(n, n, Payload::Dense(d))
    }

    pub fn from_rows(rows_vec: Vec<Vec<f64>>) -> Result<Matrix, MatrixError> {
        if rows_vec.is_empty() || rows_vec[0].is_empty() {
            return Err(MatrixError::EmptyShape {
                rows: rows_vec.len(),
                cols: rows_vec.first().map_or(0, Vec::len),
            });
        }
        let cols = rows_vec[0].len();
        let mut data = Vec::with_capacity(rows_vec.len() * cols);
        for (i, row) in rows_vec.iter().enumerate() {
            if row.len() != cols {
                return Err(MatrixError::RaggedRows {
                    row: i + 1,
                    got: row.len(),
                    expected: cols,
                });
            }
            data.extend_from_slice(row);
        }
        Matrix::dense(rows_vec.len(), cols, data)
    }

    /// Builds a matrix from 0-based (row, col, value) triplets. Duplicate
    /// coordinates are rejected; zero values are dropped rather than stored.
    pub fn from_triplets(
        rows: usize,
        cols: usize,
        triplets: &[(usize, usize, f64)],
    ) -> Result<Matrix, MatrixError> {
        if rows == 0 || cols == 0 {
            return Err(MatrixError::EmptyShape { rows, cols });
        }
        let mut entries: Vec<(usize, usize, f64)> = Vec::with_capacity(triplets.len());
        for &(r, c, v) in triplets {
            if r >= rows || c >= cols {
                return Err(MatrixError::EntryOutOfBounds {
                    row: r,
                    col: c,
                    rows,
                    cols,
                });
            }
            entries.push((r, c, v));
        }
        entries.sort_by_key(|&(r, c, _)| (r, c));
        for pair in entries.windows(2) {
            if pair[0].0 == pair[1].0 && pair[0].1 == pair[1].1 {
                return Err(MatrixError::DuplicateEntry {
                    row: pair[0].0,
                    col: pair[0].1,
                });
            }
        }
        if entries.iter().any(|&(_, _, v)| !v.is_finite()) {
            // Non-finite values cannot live in CSR storage; fall back to dense.
            let mut data = vec![0.0; rows * cols];
            for (r, c, v) in entries {
                data[r * cols + c] = v;
            }
            return Matrix::dense(rows, cols, data);
        }
        let mut row_ptr = vec![0usize; rows + 1];
        let mut col_idx = Vec::new();
        let mut values = Vec::new();
        for &(r, c, v) in &entries {
            if v != 0.0 {
                row_ptr[r + 1] += 1;
                col_idx.push(c);
                values.push(v);
            }
        }
        for r in 0..rows {
            row_ptr[r + 1] += row_ptr[r];
        }
        Ok(Matrix::build(
            rows,
            cols,
            Payload::Csr {
                row_ptr,
                col_idx,
                values,
            },
        ))
    }

    pub fn rows(&self) -> usize {
        self.rows
    }

    pub fn cols(&self) -> usize {
        self.cols
    }

    /// Exact count of nonzero entries, maintained on every construction.
    pub fn nnz(&self) -> usize {
        self.nnz
    }

    /// Fraction of entries that are nonzero.
    pub fn fill_ratio(&self) -> f64 {
        self.nnz as f64 / (self.rows * self.cols) as f64
    }

    pub fn is_sparse(&self) -> bool {
        matches!(self.payload, Payload::Csr { .. })
    }

    pub fn get(&self, r: usize, c: usize) -> f64 {
        assert!(r < self.rows && c < self.cols, "element access out of bounds");
        match &self.payload {
            Payload::Dense(d) => d[r * self.cols + c],
            Payload::Csr {
                row_ptr,
                col_idx,
                values,
            } => {
                let lo = row_ptr[r];
                let hi = row_ptr[r + 1];
                match col_idx[lo..hi].binary_search(&c) {
                    Ok(pos) => values[lo + pos],
                    Err(_) => 0.0,
                }
            }
        }
    }

    /// Dense row-major copy of the contents.
    pub fn to_dense_vec(&self) -> Vec<f64> {
        match &self.payload {
            Payload::Dense(d) => d.clone(),
            Payload::Csr {
                row_ptr,
                col_idx,
                values,
            } => {
                let mut out = vec![0.0; self.rows * self.cols];
                for r in 0..self.rows {
                    for k in row_ptr[r]..row_ptr[r + 1] {
                        out[r * self.cols + col_idx[k]] = values[k];
                    }
                }
                out
            }
        }
    }

    pub(crate) fn dense_data(&self) -> Option<&[f64]> {
        match &self.payload {
            Payload::Dense(d) => Some(d),
            Payload::Csr { .. } => None,
        }
    }

    pub(crate) fn csr_parts(&self) -> Option<(&[usize], &[usize], &[f64])> {
        match &self.payload {
            Payload::Dense(_) => None,
            Payload::Csr {
                row_ptr,
                col_idx,
                values,
            } => Some((row_ptr, col_idx, values)),
        }
    }

    /// Always-dense copy.
    pub fn to_dense(&self) -> Matrix {
        Matrix::build(self.rows, self.cols, Payload::Dense(self.to_dense_vec()))
    }

    /// Sparse copy, or `None` when a non-finite entry makes CSR storage
    /// invalid (all stored values must be finite).
    pub fn to_sparse(&self) -> Option<Matrix> {
        let mut row_ptr = vec![0usize; self.rows + 1];
        let mut col_idx = Vec::with_capacity(self.nnz);
        let mut values = Vec::with_capacity(self.nnz);
        match &self.payload {
            Payload::Csr { .. } => return Some(self.clone()),
            Payload::Dense(d) => {
                for r in 0..self.rows {
                    for c in 0..self.cols {
                        let v = d[r * self.cols + c];
                        if v != 0.0 {
                            if !v.is_finite() {
                                return None;
                            }
                            col_idx.push(c);
                            values.push(v);
                        }
                    }
                    row_ptr[r + 1] = values.len();
                }
            }
        }
        Some(Matrix::build(
            self.rows,
            self.cols,
            Payload::Csr {
                row_ptr,
                col_idx,
                values,
            },
        ))
    }

    /// Picks the storage format from the fill ratio: at or below `threshold`
    /// the matrix is stored sparse, above it dense. Non-finite entries force
    /// dense storage. Idempotent.
    pub fn decide_format(self, threshold: f64) -> Matrix {
        let want_sparse = self.fill_ratio() <= threshold;
        match (&self.payload, want_sparse) {
            (Payload::Dense(_), true) => self.to_sparse().unwrap_or(self),
            (Payload::Csr { .. }, false) => self.to_dense(),
            _ => self,
        }
    }

    pub fn decide_format_default(self) -> Matrix {
        self.decide_format(DEFAULT_SPARSITY_THRESHOLD)
    }

    pub fn transpose(&self) -> Matrix {
        match &self.payload {
            Payload::Dense(d) => {
                let mut out = vec![0.0; self.rows * self.cols];
                for r in 0..self.rows {
                    for c in 0..self.cols {
                        out[c * self.rows + r] = d[r * self.cols + c];
                    }
                }
                Matrix::build(self.cols, self.rows, Payload::Dense(out))
            }
            Payload::Csr {
                row_ptr,
                col_idx,
                values,
            } => {
                // Counting transpose keeps the result in CSR.
                let mut new_ptr = vec![0usize; self.cols + 1];
                for &c in col_idx {
                    new_ptr[c + 1] += 1;
                }
                for c in 0..self.cols {
                    new_ptr[c + 1] += new_ptr[c];
                }
                let mut cursor = new_ptr.clone();
                let mut new_idx = vec![0usize; values.len()];
                let mut new_val = vec![0.0; values.len()];
                for r in 0..self.rows {
                    for k in row_ptr[r]..row_ptr[r + 1] {
                        let c = col_idx[k];
                        let dst = cursor[c];
                        new_idx[dst] = r;
                        new_val[dst] = values[k];
                        cursor[c] += 1;
                    }
                }
                Matrix::build(
                    self.cols,
                    self.rows,
                    Payload::Csr {
                        row_ptr: new_ptr,
                        col_idx: new_idx,
                        values: new_val,
                    },
                )
            }
        }
    }

    /// Matrix product. Each output element accumulates its contraction terms
    /// in ascending index order for every format combination, so results
    /// agree across formats up to the handling of signed zeros.
    pub fn matmul(&self, rhs: &Matrix) -> Result<Matrix, MatrixError> {
        if self.cols != rhs.rows {
            return Err(MatrixError::ShapeMismatch {
                op: "matmul",
                a_rows: self.rows,
                a_cols: self.cols,
                b_rows: rhs.rows,
                b_cols: rhs.cols,
            });
        }
        let m = self.rows;
        let n = rhs.cols;
        let mut out = vec![0.0; m * n];
        match (&self.payload, &rhs.payload) {
            (Payload::Dense(a), Payload::Dense(b)) => {
                for i in 0..m {
                    let arow = &a[i * self.cols..(i + 1) * self.cols];
                    let orow = &mut out[i * n..(i + 1) * n];
                    for (k, &av) in arow.iter().enumerate() {
                        let brow = &b[k * n..(k + 1) * n];
                        for j in 0..n {
                            orow[j] += av * brow[j];
                        }
                    }
                }
            }
            (Payload::Csr { row_ptr, col_idx, values }, Payload::Dense(b)) => {
                for i in 0..m {
                    let orow = &mut out[i * n..(i + 1) * n];
                    for k in row_ptr[i]..row_ptr[i + 1] {
                        let av = values[k];
                        let brow = &b[col_idx[k] * n..(col_idx[k] + 1) * n];
                        for j in 0..n {
                            orow[j] += av * brow[j];
                        }
                    }
                }
            }
            (Payload::Dense(a), Payload::Csr { row_ptr, col_idx, values }) => {
                for i in 0..m {
                    let arow = &a[i * self.cols..(i + 1) * self.cols];
                    let orow = &mut out[i * n..(i + 1) * n];
                    for (k, &av) in arow.iter().enumerate() {
                        if av == 0.0 {
                            continue;
                        }
                        for idx in row_ptr[k]..row_ptr[k + 1] {
                            orow[col_idx[idx]] += av * values[idx];
                        }
                    }
                }
            }
            (
                Payload::Csr { row_ptr, col_idx, values },
                Payload::Csr {
                    row_ptr: b_ptr,
                    col_idx: b_idx,
                    values: b_val,
                },
            ) => {
                for i in 0..m {
                    let orow = &mut out[i * n..(i + 1) * n];
                    for k in row_ptr[i]..row_ptr[i + 1] {
                        let av = values[k];
                        let kk = col_idx[k];
                        for idx in b_ptr[kk]..b_ptr[kk + 1] {
                            orow[b_idx[idx]] += av * b_val[idx];
                        }
                    }
                }
            }
        }
        Ok(Matrix::build(m, n, Payload::Dense(out)).decide_format_default())
    }

    /// Element-wise binary operation with broadcasting: each dimension of the
    /// two operands must match or be 1, and the result takes the larger
    /// extent. Scalars enter as 1x1 matrices.
    pub fn elementwise(&self, rhs: &Matrix, op: ElemOp) -> Result<Matrix, MatrixError> {
        let rows_ok = self.rows == rhs.rows || self.rows == 1 || rhs.rows == 1;
        let cols_ok = self.cols == rhs.cols || self.cols == 1 || rhs.cols == 1;
        if !rows_ok || !cols_ok {
            return Err(MatrixError::ShapeMismatch {
                op: "elementwise",
                a_rows: self.rows,
                a_cols: self.cols,
                b_rows: rhs.rows,
                b_cols: rhs.cols,
            });
        }
        let out_rows = self.rows.max(rhs.rows);
        let out_cols = self.cols.max(rhs.cols);
        let mut out = vec![0.0; out_rows * out_cols];
        if let (Some(a), Some(b)) = (self.dense_data(), rhs.dense_data()) {
            if self.rows == rhs.rows && self.cols == rhs.cols {
                for (o, (&x, &y)) in out.iter_mut().zip(a.iter().zip(b.iter())) {
                    *o = op.apply(x, y);
                }
                return Ok(Matrix::build(out_rows, out_cols, Payload::Dense(out))
                    .decide_format_default());
            }
        }
        for i in 0..out_rows {
            let ai = if self.rows == 1 { 0 } else { i };
            let bi = if rhs.rows == 1 { 0 } else { i };
            for j in 0..out_cols {
                let aj = if self.cols == 1 { 0 } else { j };
                let bj = if rhs.cols == 1 { 0 } else { j };
                out[i * out_cols + j] = op.apply(self.get(ai, aj), rhs.get(bi, bj));
            }
        }
        Ok(Matrix::build(out_rows, out_cols, Payload::Dense(out)).decide_format_default())
    }

    pub fn elementwise_scalar(&self, s: f64, op: ElemOp) -> Matrix {
        let scalar = Matrix::filled(1, 1, s);
        self.elementwise(&scalar, op)
            .expect("1x1 operand always broadcasts")
    }

    /// Applies `f` to every logical element (implicit zeros included), so a
    /// function with `f(0) != 0` correctly densifies a sparse operand.
    pub fn map(&self, f: impl Fn(f64) -> f64) -> Matrix {
        let mut out = self.to_dense_vec();
        for v in &mut out {
            *v = f(*v);
        }
        Matrix::build(self.rows, self.cols, Payload::Dense(out)).decide_format_default()
    }

    /// Reduction over the chosen axis. Implicit zeros in sparse storage
    /// participate: the min of a sparse matrix with any empty position is at
    /// most 0. Sums accumulate in ascending row order per output element.
    pub fn reduce(&self, op: ReduceOp, axis: Axis) -> Matrix {
        match axis {
            Axis::All => {
                if op == ReduceOp::Mean {
                    let s = self.reduce(ReduceOp::Sum, Axis::All).get(0, 0);
                    return Matrix::filled(1, 1, s / (self.rows * self.cols) as f64);
                }
                // Row results are complete values, so no gap handling here.
                let per_row = self.reduce(op, Axis::Rows).to_dense_vec();
                let v = fold_reduce(op, &per_row, per_row.len(), per_row.len());
                Matrix::filled(1, 1, v)
            }
            Axis::Rows => {
                let mut out = Vec::with_capacity(self.rows);
                for r in 0..self.rows {
                    let row: Vec<f64> = match &self.payload {
                        Payload::Dense(d) => d[r * self.cols..(r + 1) * self.cols].to_vec(),
                        Payload::Csr { row_ptr, values, .. } => {
                            values[row_ptr[r]..row_ptr[r + 1]].to_vec()
                        }
                    };
                    out.push(fold_reduce(op, &row, self.cols, row.len()));
                }
                Matrix::build(self.rows, 1, Payload::Dense(out))
            }
            Axis::Cols => {
                let mut sums = vec![0.0; self.cols];
                let mut mins = vec![f64::INFINITY; self.cols];
                let mut maxs = vec![f64::NEG_INFINITY; self.cols];
                let mut counts = vec![0usize; self.cols];
                let mut visit = |c: usize, v: f64| {
                    sums[c] += v;
                    mins[c] = mins[c].min(v);
                    maxs[c] = maxs[c].max(v);
                    counts[c] += 1;
                };
                match &self.payload {
                    Payload::Dense(d) => {
                        for r in 0..self.rows {
                            for c in 0..self.cols {
                                visit(c, d[r * self.cols + c]);
                            }
                        }
                    }
                    Payload::Csr {
                        row_ptr,
                        col_idx,
                        values,
                    } => {
                        for r in 0..self.rows {
                            for k in row_ptr[r]..row_ptr[r + 1] {
                                visit(col_idx[k], values[k]);
                            }
                        }
                    }
                }
                let out: Vec<f64> = (0..self.cols)
                    .map(|c| {
                        let gaps = counts[c] < self.rows;
                        match op {
                            ReduceOp::Sum => sums[c],
                            ReduceOp::Mean => sums[c] / self.rows as f64,
                            ReduceOp::Min => {
                                if gaps {
                                    mins[c].min(0.0)
                                } else {
                                    mins[c]
                                }
                            }
                            ReduceOp::Max => {
                                if gaps {
                                    maxs[c].max(0.0)
                                } else {
                                    maxs[c]
                                }
                            }
                        }
                    })
                    .collect();
                Matrix::build(1, self.cols, Payload::Dense(out))
            }
        }
    }

    /// Inclusive 1-based sub-matrix selection; `None` selects the full axis.
    pub fn slice(
        &self,
        rows: Option<(usize, usize)>,
        cols: Option<(usize, usize)>,
    ) -> Result<Matrix, MatrixError> {
        let (r_lo, r_hi) = check_range("row", rows, self.rows)?;
        let (c_lo, c_hi) = check_range("column", cols, self.cols)?;
        let out_rows = r_hi - r_lo + 1;
        let out_cols = c_hi - c_lo + 1;
        let mut out = vec![0.0; out_rows * out_cols];
        match &self.payload {
            Payload::Dense(d) => {
                for (ri, r) in (r_lo..=r_hi).enumerate() {
                    let src = &d[(r - 1) * self.cols + (c_lo - 1)..(r - 1) * self.cols + c_hi];
                    out[ri * out_cols..(ri + 1) * out_cols].copy_from_slice(src);
                }
            }
            Payload::Csr {
                row_ptr,
                col_idx,
                values,
            } => {
                for (ri, r) in (r_lo..=r_hi).enumerate() {
                    for k in row_ptr[r - 1]..row_ptr[r] {
                        let c = col_idx[k] + 1;
                        if c >= c_lo && c <= c_hi {
                            out[ri * out_cols + (c - c_lo)] = values[k];
                        }
                    }
                }
            }
        }
        Ok(Matrix::build(out_rows, out_cols, Payload::Dense(out)).decide_format_default())
    }

    /// Returns a copy with the inclusive 1-based region replaced by `rhs`,
    /// whose dimensions must match the region exactly.
    pub fn set_slice(
        &self,
        rows: Option<(usize, usize)>,
        cols: Option<(usize, usize)>,
        rhs: &Matrix,
    ) -> Result<Matrix, MatrixError> {
        let (r_lo, r_hi) = check_range("row", rows, self.rows)?;
        let (c_lo, c_hi) = check_range("column", cols, self.cols)?;
        let region_rows = r_hi - r_lo + 1;
        let region_cols = c_hi - c_lo + 1;
        if rhs.rows != region_rows || rhs.cols != region_cols {
            return Err(MatrixError::ShapeMismatch {
                op: "indexed assignment",
                a_rows: region_rows,
                a_cols: region_cols,
                b_rows: rhs.rows,
                b_cols: rhs.cols,
            });
        }
        let mut out = self.to_dense_vec();
        for ri in 0..region_rows {
            for ci in 0..region_cols {
                out[(r_lo - 1 + ri) * self.cols + (c_lo - 1 + ci)] = rhs.get(ri, ci);
            }
        }
        Ok(Matrix::build(self.rows, self.cols, Payload::Dense(out)).decide_format_default())
    }

    /// Vertical concatenation in argument order.
    pub fn concat_rows(parts: &[&Matrix]) -> Result<Matrix, MatrixError> {
        assert!(!parts.is_empty(), "concat_rows needs at least one part");
        let cols = parts[0].cols;
        for p in parts {
            if p.cols != cols {
                return Err(MatrixError::ShapeMismatch {
                    op: "concat_rows",
                    a_rows: parts[0].rows,
                    a_cols: cols,
                    b_rows: p.rows,
                    b_cols: p.cols,
                });
            }
        }
        let total: usize = parts.iter().map(|p| p.rows).sum();
        let mut out = Vec::with_capacity(total * cols);
        for p in parts {
            out.extend_from_slice(&p.to_dense_vec());
        }
        Ok(Matrix::build(total, cols, Payload::Dense(out)).decide_format_default())
    }

    /// Largest absolute element-wise difference; panics on shape mismatch.
    /// A NaN on exactly one side counts as an infinite difference.
    pub fn max_abs_diff(&self, other: &Matrix) -> f64 {
        assert_eq!(
            (self.rows, self.cols),
            (other.rows, other.cols),
            "max_abs_diff shape mismatch"
        );
        let mut worst = 0.0f64;
        for i in 0..self.rows {
            for j in 0..self.cols {
                let a = self.get(i, j);
                let b = other.get(i, j);
                let d = (a - b).abs();
                if d.is_nan() {
                    if a.is_nan() && b.is_nan() {
                        continue;
                    }
                    return f64::INFINITY;
                }
                worst = worst.max(d);
            }
        }
        worst
    }
}

fn check_range(
    what: &'static str,
    range: Option<(usize, usize)>,
    extent: usize,
) -> Result<(usize, usize), MatrixError> {
    match range {
        None => Ok((1, extent)),
        Some((lo, hi)) => {
            if lo == 0 || lo > extent {
                return Err(MatrixError::IndexOutOfRange {
                    what,
                    index: lo,
                    extent,
                });
            }
            if hi == 0 || hi > extent {
                return Err(MatrixError::IndexOutOfRange {
                    what,
                    index: hi,
                    extent,
                });
            }
            if hi < lo {
                return Err(MatrixError::EmptyRange { what, lo, hi });
            }
            Ok((lo, hi))
        }
    }
}

/// Reduces a row's stored values, treating `logical_len - stored_len`
/// trailing implicit zeros as present for min/max and as nothing for sums.
fn fold_reduce(op: ReduceOp, stored: &[f64], logical_len: usize, stored_len: usize) -> f64 {
    let has_gaps = stored_len < logical_len;
    match op {
        ReduceOp::Sum => stored.iter().sum(),
        ReduceOp::Mean => stored.iter().sum::<f64>() / logical_len as f64,
        ReduceOp::Min => {
            let m = stored.iter().copied().fold(f64::INFINITY, f64::min);
            if has_gaps {
                m.min(0.0)
            } else {
                m
            }
        }
        ReduceOp::Max => {
            let m = stored.iter().copied().fold(f64::NEG_INFINITY, f64::max);
            if has_gaps {
                m.max(0.0)
            } else {
                m
            }
        }
    }
}
