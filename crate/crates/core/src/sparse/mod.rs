//! Compressed sparse storage and a symmetric LDLᵀ factorization whose
//! symbolic analysis can be reused for every matrix sharing a pattern.

mod ldlt;
mod ordering;

use std::fmt::Write as _;

use nalgebra::DMatrix;
use thiserror::Error;

pub use ldlt::{analyze, analyze_with, factorize, logdet, solve, NumericFactor, SymbolicFactor};
pub use ordering::{fill_in, minimum_degree, Ordering};

/// Smallest pivot accepted by the numeric factorization.
pub const PIVOT_TOL: f64 = 1e-300;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum SparseError {
    #[error("malformed sparse matrix: {0}")]
    Malformed(String),
    #[error("diagonal entry of column {0} is missing from the pattern")]
    MissingDiagonal(usize),
    #[error("matrix is not positive definite: pivot {pivot} is {value:e}")]
    NotPositiveDefinite { pivot: usize, value: f64 },
    #[error("sparsity pattern differs from the analyzed one")]
    PatternMismatch,
    #[error("dimension mismatch: expected {expected}, got {got}")]
    DimensionMismatch { expected: usize, got: usize },
}

fn check_csc(n_rows: usize, n_cols: usize, col_ptr: &[usize], row_idx: &[usize], n_values: usize) -> Result<(), SparseError> {
    if col_ptr.len() != n_cols + 1 || col_ptr[0] != 0 {
        return Err(SparseError::Malformed("column offsets have the wrong shape".into()));
    }
    if col_ptr.windows(2).any(|w| w[0] > w[1]) {
        return Err(SparseError::Malformed("column offsets decrease".into()));
    }
    let nnz = col_ptr[n_cols];
    if row_idx.len() != nnz || n_values != nnz {
        return Err(SparseError::Malformed("index and value arrays disagree with offsets".into()));
    }
    for c in 0..n_cols {
        let rows = &row_idx[col_ptr[c]..col_ptr[c + 1]];
        if rows.iter().any(|&r| r >= n_rows) {
            return Err(SparseError::Malformed(format!("row index out of range in column {c}")));
        }
        if rows.windows(2).any(|w| w[0] >= w[1]) {
            return Err(SparseError::Malformed(format!("row indices not strictly increasing in column {c}")));
        }
    }
    Ok(())
}

/// General sparse matrix in compressed-column form.
#[derive(Debug, Clone, PartialEq)]
pub struct SparseMatrix {
    n_rows: usize,
    n_cols: usize,
    col_ptr: Vec<usize>,
    row_idx: Vec<usize>,
    values: Vec<f64>,
}

impl SparseMatrix {
    pub fn new(n_rows: usize, n_cols: usize, col_ptr: Vec<usize>, row_idx: Vec<usize>, values: Vec<f64>) -> Result<Self, SparseError> {
        check_csc(n_rows, n_cols, &col_ptr, &row_idx, values.len())?;
        Ok(Self {
            n_rows,
            n_cols,
            col_ptr,
            row_idx,
            values,
        })
    }

    /// Build from rows given as (sorted column indices, values).
    pub fn from_rows(n_cols: usize, rows: &[(Vec<usize>, Vec<f64>)]) -> Result<Self, SparseError> {
        let mut counts = vec![0usize; n_cols + 1];
        for (cols, vals) in rows {
            if cols.len() != vals.len() {
                return Err(SparseError::Malformed("row index/value lengths differ".into()));
            }
            for &c in cols {
                if c >= n_cols {
                    return Err(SparseError::Malformed(format!("column {c} out of range")));
                }
                counts[c + 1] += 1;
            }
        }
        for c in 0..n_cols {
            counts[c + 1] += counts[c];
        }
        let nnz = counts[n_cols];
        let mut next = counts.clone();
        let mut row_idx = vec![0; nnz];
        let mut values = vec![0.0; nnz];
        for (r, (cols, vals)) in rows.iter().enumerate() {
            for (&c, &v) in cols.iter().zip(vals) {
                row_idx[next[c]] = r;
                values[next[c]] = v;
                next[c] += 1;
            }
        }
        Self::new(rows.len(), n_cols, counts, row_idx, values)
    }

    pub fn from_dense(m: &DMatrix<f64>) -> Self {
        let mut col_ptr = vec![0];
        let mut row_idx = Vec::new();
        let mut values = Vec::new();
        for j in 0..m.ncols() {
            for i in 0..m.nrows() {
                if m[(i, j)] != 0.0 {
                    row_idx.push(i);
                    values.push(m[(i, j)]);
                }
            }
            col_ptr.push(row_idx.len());
        }
        Self {
            n_rows: m.nrows(),
            n_cols: m.ncols(),
            col_ptr,
            row_idx,
            values,
        }
    }

    pub fn n_rows(&self) -> usize {
        self.n_rows
    }

    pub fn n_cols(&self) -> usize {
        self.n_cols
    }

    pub fn nnz(&self) -> usize {
        self.values.len()
    }

    pub fn col_ptr(&self) -> &[usize] {
        &self.col_ptr
    }

    pub fn row_idx(&self) -> &[usize] {
        &self.row_idx
    }

    pub fn values(&self) -> &[f64] {
        &self.values
    }

    pub fn values_mut(&mut self) -> &mut [f64] {
        &mut self.values
    }

    pub fn same_pattern(&self, other: &Self) -> bool {
        self.n_rows == other.n_rows
            && self.n_cols == other.n_cols
            && self.col_ptr == other.col_ptr
            && self.row_idx == other.row_idx
    }

    pub fn to_dense(&self) -> DMatrix<f64> {
        let mut m = DMatrix::zeros(self.n_rows, self.n_cols);
        for c in 0..self.n_cols {
            for k in self.col_ptr[c]..self.col_ptr[c + 1] {
                m[(self.row_idx[k], c)] += self.values[k];
            }
        }
        m
    }

    /// The transpose, i.e. this matrix in compressed-row form.
    pub fn transpose(&self) -> Self {
        let mut counts = vec![0usize; self.n_rows + 1];
        for &r in &self.row_idx {
            counts[r + 1] += 1;
        }
        for r in 0..self.n_rows {
            counts[r + 1] += counts[r];
        }
        let mut next = counts.clone();
        let mut row_idx = vec![0; self.nnz()];
        let mut values = vec![0.0; self.nnz()];
        for c in 0..self.n_cols {
            for k in self.col_ptr[c]..self.col_ptr[c + 1] {
                let r = self.row_idx[k];
                row_idx[next[r]] = c;
                values[next[r]] = self.values[k];
                next[r] += 1;
            }
        }
        Self {
            n_rows: self.n_cols,
            n_cols: self.n_rows,
            col_ptr: counts,
            row_idx,
            values,
        }
    }

    /// `A x`.
    pub fn mul_vec(&self, x: &[f64]) -> Result<Vec<f64>, SparseError> {
        if x.len() != self.n_cols {
            return Err(SparseError::DimensionMismatch {
                expected: self.n_cols,
                got: x.len(),
            });
        }
        let mut y = vec![0.0; self.n_rows];
        for c in 0..self.n_cols {
            let xc = x[c];
            for k in self.col_ptr[c]..self.col_ptr[c + 1] {
                y[self.row_idx[k]] += self.values[k] * xc;
            }
        }
        Ok(y)
    }

    /// `Aᵀ x`.
    pub fn tr_mul_vec(&self, x: &[f64]) -> Result<Vec<f64>, SparseError> {
        if x.len() != self.n_rows {
            return Err(SparseError::DimensionMismatch {
                expected: self.n_rows,
                got: x.len(),
            });
        }
        Ok((0..self.n_cols)
            .map(|c| {
                (self.col_ptr[c]..self.col_ptr[c + 1])
                    .map(|k| self.values[k] * x[self.row_idx[k]])
                    .sum()
            })
            .collect())
    }

    /// Coordinate dump, one `row col` pair per line.
    pub fn pattern_coo(&self) -> String {
        let mut s = String::new();
        for c in 0..self.n_cols {
            for k in self.col_ptr[c]..self.col_ptr[c + 1] {
                let _ = writeln!(s, "{} {}", self.row_idx[k], c);
            }
        }
        s
    }
}

/// Symmetric matrix storing only its lower triangle, compressed by column.
#[derive(Debug, Clone, PartialEq)]
pub struct SparseSymMatrix {
    n: usize,
    col_ptr: Vec<usize>,
    row_idx: Vec<usize>,
    values: Vec<f64>,
}

impl SparseSymMatrix {
    pub fn new(n: usize, col_ptr: Vec<usize>, row_idx: Vec<usize>, values: Vec<f64>) -> Result<Self, SparseError> {
        check_csc(n, n, &col_ptr, &row_idx, values.len())?;
        for c in 0..n {
            if row_idx[col_ptr[c]..col_ptr[c + 1]].iter().any(|&r| r < c) {
                return Err(SparseError::Malformed(format!("entry above the diagonal in column {c}")));
            }
        }
        Ok(Self {
            n,
            col_ptr,
            row_idx,
            values,
        })
    }

    /// Lower triangle of a dense symmetric matrix; zeros are dropped except on
    /// the diagonal.
    pub fn from_dense(m: &DMatrix<f64>) -> Self {
        assert_eq!(m.nrows(), m.ncols(), "matrix must be square");
        let n = m.nrows();
        let mut col_ptr = vec![0];
        let mut row_idx = Vec::new();
        let mut values = Vec::new();
        for j in 0..n {
            for i in j..n {
                if i == j || m[(i, j)] != 0.0 {
                    row_idx.push(i);
                    values.push(m[(i, j)]);
                }
            }
            col_ptr.push(row_idx.len());
        }
        Self {
            n,
            col_ptr,
            row_idx,
            values,
        }
    }

    pub fn identity(n: usize) -> Self {
        Self {
            n,
            col_ptr: (0..=n).collect(),
            row_idx: (0..n).collect(),
            values: vec![1.0; n],
        }
    }

    pub fn order(&self) -> usize {
        self.n
    }

    pub fn nnz(&self) -> usize {
        self.values.len()
    }

    pub fn col_ptr(&self) -> &[usize] {
        &self.col_ptr
    }

    pub fn row_idx(&self) -> &[usize] {
        &self.row_idx
    }

    pub fn values(&self) -> &[f64] {
        &self.values
    }

    pub fn values_mut(&mut self) -> &mut [f64] {
        &mut self.values
    }

    pub fn same_pattern(&self, other: &Self) -> bool {
        self.n == other.n && self.col_ptr == other.col_ptr && self.row_idx == other.row_idx
    }

    /// Position of entry `(row, col)` with `row >= col`, if structurally present.
    pub fn position(&self, row: usize, col: usize) -> Option<usize> {
        let lo = self.col_ptr[col];
        let hi = self.col_ptr[col + 1];
        self.row_idx[lo..hi].binary_search(&row).ok().map(|k| lo + k)
    }

    pub fn to_dense(&self) -> DMatrix<f64> {
        let mut m = DMatrix::zeros(self.n, self.n);
        for c in 0..self.n {
            for k in self.col_ptr[c]..self.col_ptr[c + 1] {
                let r = self.row_idx[k];
                m[(r, c)] = self.values[k];
                m[(c, r)] = self.values[k];
            }
        }
        m
    }

    pub fn mul_vec(&self, x: &[f64]) -> Result<Vec<f64>, SparseError> {
        if x.len() != self.n {
            return Err(SparseError::DimensionMismatch {
                expected: self.n,
                got: x.len(),
            });
        }
        let mut y = vec![0.0; self.n];
        for c in 0..self.n {
            for k in self.col_ptr[c]..self.col_ptr[c + 1] {
                let r = self.row_idx[k];
                let v = self.values[k];
                y[r] += v * x[c];
                if r != c {
                    y[c] += v * x[r];
                }
            }
        }
        Ok(y)
    }

    /// Coordinate dump of the lower-triangle pattern, one `row col` pair per line.
    pub fn pattern_coo(&self) -> String {
        let mut s = String::new();
        for c in 0..self.n {
            for k in self.col_ptr[c]..self.col_ptr[c + 1] {
                let _ = writeln!(s, "{} {}", self.row_idx[k], c);
            }
        }
        s
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn csc_validation() {
        assert!(SparseMatrix::new(2, 2, vec![0, 1, 2], vec![1, 0], vec![1.0, 2.0]).is_ok());
        assert!(SparseMatrix::new(2, 2, vec![0, 2, 1], vec![0, 1], vec![1.0, 2.0]).is_err());
        assert!(SparseMatrix::new(2, 1, vec![0, 2], vec![1, 0], vec![1.0, 2.0]).is_err());
        assert!(SparseMatrix::new(2, 1, vec![0, 1], vec![2], vec![1.0]).is_err());
        assert!(SparseSymMatrix::new(2, vec![0, 1, 2], vec![0, 0], vec![1.0, 1.0]).is_err());
    }

    #[test]
    fn rows_transpose_and_products() {
        let rows = vec![(vec![0, 2], vec![1.0, 2.0]), (vec![1], vec![3.0])];
        let a = SparseMatrix::from_rows(3, &rows).unwrap();
        let d = a.to_dense();
        assert_eq!(d, DMatrix::from_row_slice(2, 3, &[1.0, 0.0, 2.0, 0.0, 3.0, 0.0]));
        assert_eq!(a.transpose().to_dense(), d.transpose());
        assert_eq!(a.mul_vec(&[1.0, 1.0, 1.0]).unwrap(), vec![3.0, 3.0]);
        assert_eq!(a.tr_mul_vec(&[1.0, 2.0]).unwrap(), vec![1.0, 6.0, 2.0]);
        assert!(a.mul_vec(&[1.0]).is_err());
        assert_eq!(a.pattern_coo(), "0 0\n1 1\n0 2\n");
    }

    #[test]
    fn symmetric_roundtrip() {
        let m = DMatrix::from_row_slice(3, 3, &[4.0, 1.0, 0.0, 1.0, 3.0, 0.5, 0.0, 0.5, 2.0]);
        let s = SparseSymMatrix::from_dense(&m);
        assert_eq!(s.nnz(), 5);
        assert_eq!(s.to_dense(), m);
        let y = s.mul_vec(&[1.0, 2.0, 3.0]).unwrap();
        let expected = &m * nalgebra::DVector::from_vec(vec![1.0, 2.0, 3.0]);
        assert_eq!(y, expected.as_slice());
        assert_eq!(s.position(2, 1), Some(3));
        assert_eq!(s.position(2, 0), None);
    }
}
