//! Matrix Market reading and writing.
//!
//! Supported: `matrix coordinate real symmetric` (1-based, one triangle,
//! mirrored on load) and `matrix array real general` (column-major dense).

use std::fmt::Write as _;
use std::fs;
use std::path::Path;

use crate::error::{Error, Result};
use crate::linalg::{Matrix, SymmetricMatrix};
use crate::sparse::SparseMatrix;

#[derive(Debug, Clone, PartialEq)]
pub enum LoadedMatrix {
    Dense(SymmetricMatrix),
    Sparse(SparseMatrix),
}

impl LoadedMatrix {
    pub fn dim(&self) -> usize {
        match self {
            LoadedMatrix::Dense(m) => m.dim(),
            LoadedMatrix::Sparse(m) => m.dim(),
        }
    }

    pub fn to_dense(&self) -> SymmetricMatrix {
        match self {
            LoadedMatrix::Dense(m) => m.clone(),
            LoadedMatrix::Sparse(m) => m.to_dense(),
        }
    }

    pub fn into_dense(self) -> SymmetricMatrix {
        match self {
            LoadedMatrix::Dense(m) => m,
            LoadedMatrix::Sparse(m) => m.to_dense(),
        }
    }
}

fn parse_err(line: usize, message: impl Into<String>) -> Error {
    Error::Parse {
        line,
        message: message.into(),
    }
}

#[derive(Clone, Copy, PartialEq)]
enum Layout {
    CoordinateSymmetric,
    ArrayGeneral,
}

pub fn read_matrix_market(path: impl AsRef<Path>) -> Result<LoadedMatrix> {
    parse_matrix_market(&fs::read_to_string(path)?)
}

pub fn parse_matrix_market(text: &str) -> Result<LoadedMatrix> {
    let mut lines = text.lines().enumerate().map(|(i, l)| (i + 1, l));
    let (_, banner) = lines.next().ok_or_else(|| parse_err(1, "empty file"))?;
    let words: Vec<String> = banner.split_whitespace().map(str::to_ascii_lowercase).collect();
    if words.first().map(String::as_str) != Some("%%matrixmarket") {
        return Err(parse_err(1, "missing %%MatrixMarket banner"));
    }
    let layout = match words[1..].iter().map(String::as_str).collect::<Vec<_>>()[..] {
        ["matrix", "coordinate", "real", "symmetric"] => Layout::CoordinateSymmetric,
        ["matrix", "array", "real", "general"] => Layout::ArrayGeneral,
        _ => return Err(parse_err(1, format!("unsupported banner {banner:?}"))),
    };

    let mut body = lines.filter(|(_, l)| {
        let t = l.trim();
        !t.is_empty() && !t.starts_with('%')
    });
    let (size_line, size) = body.next().ok_or_else(|| parse_err(1, "missing size line"))?;
    let dims: Vec<usize> = size
        .split_whitespace()
        .map(|t| t.parse::<usize>().map_err(|_| parse_err(size_line, format!("bad size field {t:?}"))))
        .collect::<Result<_>>()?;
    let expected_fields = if layout == Layout::CoordinateSymmetric { 3 } else { 2 };
    if dims.len() != expected_fields {
        return Err(parse_err(size_line, format!("expected {expected_fields} size fields")));
    }
    let (rows, cols) = (dims[0], dims[1]);
    if rows != cols || rows == 0 {
        return Err(parse_err(size_line, format!("matrix must be square and non-empty, got {rows}x{cols}")));
    }
    let n = rows;

    let parse_value = |line: usize, t: &str| -> Result<f64> {
        let v: f64 = t.parse().map_err(|_| parse_err(line, format!("bad value {t:?}")))?;
        if !v.is_finite() {
            return Err(parse_err(line, "non-finite value"));
        }
        Ok(v)
    };

    match layout {
        Layout::CoordinateSymmetric => {
            let nnz = dims[2];
            let mut triplets = Vec::with_capacity(2 * nnz);
            let mut count = 0;
            for (ln, l) in body {
                let f: Vec<&str> = l.split_whitespace().collect();
                if f.len() != 3 {
                    return Err(parse_err(ln, "expected `row col value`"));
                }
                let idx = |t: &str| -> Result<usize> {
                    match t.parse::<usize>() {
                        Ok(k) if (1..=n).contains(&k) => Ok(k - 1),
                        _ => Err(parse_err(ln, format!("index {t:?} outside 1..={n}"))),
                    }
                };
                let (i, j, v) = (idx(f[0])?, idx(f[1])?, parse_value(ln, f[2])?);
                count += 1;
                if count > nnz {
                    return Err(parse_err(ln, format!("more than the declared {nnz} entries")));
                }
                triplets.push((i, j, v));
                if i != j {
                    triplets.push((j, i, v));
                }
            }
            if count != nnz {
                return Err(parse_err(size_line, format!("declared {nnz} entries, found {count}")));
            }
            Ok(LoadedMatrix::Sparse(SparseMatrix::from_triplets(n, &triplets)?))
        }
        Layout::ArrayGeneral => {
            let mut values = Vec::with_capacity(n * n);
            for (ln, l) in body {
                for t in l.split_whitespace() {
                    if values.len() == n * n {
                        return Err(parse_err(ln, format!("more than {} values", n * n)));
                    }
                    values.push(parse_value(ln, t)?);
                }
            }
            if values.len() != n * n {
                return Err(parse_err(size_line, format!("expected {} values, found {}", n * n, values.len())));
            }
            Ok(LoadedMatrix::Dense(SymmetricMatrix::new(Matrix::from_column_slice(n, n, &values))?))
        }
    }
}

/// Coordinate symmetric text (lower triangle, nonzeros, 17 significant digits).
pub fn format_matrix_market(x: &SymmetricMatrix) -> String {
    let n = x.dim();
    let mut entries = Vec::new();
    for j in 0..n {
        for i in j..n {
            let v = x.get(i, j);
            if v != 0.0 {
                entries.push((i, j, v));
            }
        }
    }
    let mut out = String::from("%%MatrixMarket matrix coordinate real symmetric\n");
    let _ = writeln!(out, "{n} {n} {}", entries.len());
    for (i, j, v) in entries {
        let _ = writeln!(out, "{} {} {v:.16e}", i + 1, j + 1);
    }
    out
}

pub fn write_matrix_market(path: impl AsRef<Path>, x: &SymmetricMatrix) -> Result<()> {
    fs::write(path, format_matrix_market(x))?;
    Ok(())
}

pub fn write_sparse_matrix_market(path: impl AsRef<Path>, x: &SparseMatrix) -> Result<()> {
    let n = x.dim();
    let mut entries = Vec::new();
    for i in 0..n {
        let (cols, vals) = x.row(i);
        for (&j, &v) in cols.iter().zip(vals) {
            if j <= i {
                entries.push((i, j, v));
            }
        }
    }
    let mut out = String::from("%%MatrixMarket matrix coordinate real symmetric\n");
    let _ = writeln!(out, "{n} {n} {}", entries.len());
    for (i, j, v) in entries {
        let _ = writeln!(out, "{} {} {v:.16e}", i + 1, j + 1);
    }
    fs::write(path, out)?;
    Ok(())
}
