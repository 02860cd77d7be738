//! Text formats for matrices: dense CSV and a coordinate format for sparse
//! data. The coordinate format starts with a "rows cols nnz" header followed
//! by one "row col value" line per nonzero, all indices 1-based.

use super::{Matrix, MatrixError};
use std::path::Path;

fn parse_err(path: &str, line: usize, msg: impl Into<String>) -> MatrixError {
    MatrixError::Parse {
        path: path.to_string(),
        line,
        msg: msg.into(),
    }
}

/// Shortest round-trip decimal for an f64, via the standard formatter.
fn fmt_value(v: f64) -> String {
    format!("{v}")
}

pub fn parse_csv(text: &str, path: &str) -> Result<Matrix, MatrixError> {
    let mut rows: Vec<Vec<f64>> = Vec::new();
    for (i, line) in text.lines().enumerate() {
        let line = line.trim();
        if line.is_empty() {
            continue;
        }
        let mut row = Vec::new();
        for field in line.split(',') {
            let field = field.trim();
            let v: f64 = field
                .parse()
                .map_err(|_| parse_err(path, i + 1, format!("bad number {field:?}")))?;
            row.push(v);
        }
        rows.push(row);
    }
    if rows.is_empty() {
        return Err(parse_err(path, 1, "no data rows"));
    }
    let expected = rows[0].len();
    for (i, row) in rows.iter().enumerate() {
        if row.len() != expected {
            return Err(parse_err(
                path,
                i + 1,
                format!("row has {} fields, expected {expected}", row.len()),
            ));
        }
    }
    Matrix::from_rows(rows)
}

pub fn write_csv(m: &Matrix) -> String {
    let mut out = String::new();
    for r in 0..m.rows() {
        for c in 0..m.cols() {
            if c > 0 {
                out.push(',');
            }
            out.push_str(&fmt_value(m.get(r, c)));
        }
        out.push('\n');
    }
    out
}

pub fn parse_coo(text: &str, path: &str) -> Result<Matrix, MatrixError> {
    let mut lines = text
        .lines()
        .enumerate()
        .map(|(i, l)| (i + 1, l.trim()))
        .filter(|(_, l)| !l.is_empty());
    let (header_line, header) = lines
        .next()
        .ok_or_else(|| parse_err(path, 1, "empty file"))?;
    let parts: Vec<&str> = header.split_whitespace().collect();
    if parts.len() != 3 {
        return Err(parse_err(
            path,
            header_line,
            "header must be: rows cols nnz",
        ));
    }
    let rows: usize = parts[0]
        .parse()
        .map_err(|_| parse_err(path, header_line, "bad row count"))?;
    let cols: usize = parts[1]
        .parse()
        .map_err(|_| parse_err(path, header_line, "bad column count"))?;
    let declared_nnz: usize = parts[2]
        .parse()
        .map_err(|_| parse_err(path, header_line, "bad entry count"))?;

    let mut triplets = Vec::with_capacity(declared_nnz);
    let mut seen = 0usize;
    for (lineno, line) in lines {
        let parts: Vec<&str> = line.split_whitespace().collect();
        if parts.len() != 3 {
            return Err(parse_err(path, lineno, "entry must be: row col value"));
        }
        let r: usize = parts[0]
            .parse()
            .map_err(|_| parse_err(path, lineno, "bad row index"))?;
        let c: usize = parts[1]
            .parse()
            .map_err(|_| parse_err(path, lineno, "bad column index"))?;
        let v: f64 = parts[2]
            .parse()
            .map_err(|_| parse_err(path, lineno, "bad value"))?;
        if r == 0 || r > rows || c == 0 || c > cols {
            return Err(parse_err(
                path,
                lineno,
                format!("entry ({r}, {c}) outside {rows}x{cols}"),
            ));
        }
        seen += 1;
        // Zero-valued entries count against the header but are not stored.
        if v != 0.0 {
            triplets.push((r - 1, c - 1, v));
        }
    }
    if seen != declared_nnz {
        return Err(parse_err(
            path,
            header_line,
            format!("header declares {declared_nnz} entries, found {seen}"),
        ));
    }
    Matrix::from_triplets(rows, cols, &triplets)
}

pub fn write_coo(m: &Matrix) -> String {
    let mut out = format!("{} {} {}\n", m.rows(), m.cols(), m.nnz());
    if let Some((row_ptr, col_idx, values)) = m.csr_parts() {
        for r in 0..m.rows() {
            for k in row_ptr[r]..row_ptr[r + 1] {
                out.push_str(&format!(
                    "{} {} {}\n",
                    r + 1,
                    col_idx[k] + 1,
                    fmt_value(values[k])
                ));
            }
        }
    } else {
        for r in 0..m.rows() {
            for c in 0..m.cols() {
                let v = m.get(r, c);
                if v != 0.0 {
                    out.push_str(&format!("{} {} {}\n", r + 1, c + 1, fmt_value(v)));
                }
            }
        }
    }
    out
}

fn io_err(path: &Path, source: std::io::Error) -> MatrixError {
    MatrixError::Io {
        path: path.display().to_string(),
        source,
    }
}

/// Reads a matrix, picking the format from the extension: `.coo` and `.mtx`
/// parse as coordinate text, anything else as dense CSV.
pub fn read_matrix(path: &Path) -> Result<Matrix, MatrixError> {
    let text = std::fs::read_to_string(path).map_err(|e| io_err(path, e))?;
    let name = path.display().to_string();
    if is_coo_path(path) {
        parse_coo(&text, &name)
    } else {
        parse_csv(&text, &name)
    }
}

/// Writes a matrix in the format implied by the extension, as in
/// [`read_matrix`].
pub fn write_matrix(path: &Path, m: &Matrix) -> Result<(), MatrixError> {
    let text = if is_coo_path(path) {
        write_coo(m)
    } else {
        write_csv(m)
    };
    std::fs::write(path, text).map_err(|e| io_err(path, e))
}

pub fn is_coo_path(path: &Path) -> bool {
    matches!(
        path.extension().and_then(|e| e.to_str()),
        Some("coo") | Some("mtx")
    )
}
