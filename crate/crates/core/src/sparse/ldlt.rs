//! Up-looking LDLᵀ factorization (the QDLDL scheme) split into a symbolic
//! phase, which depends only on the pattern, and a numeric phase.

use std::sync::Arc;

use nalgebra::DMatrix;
use rayon::prelude::*;

use super::ordering::{resolve, Ordering};
use super::{SparseError, SparseSymMatrix, PIVOT_TOL};

const NONE: usize = usize::MAX;

/// Pattern-only analysis: ordering, elimination tree and factor structure.
#[derive(Debug, Clone)]
pub struct SymbolicFactor {
    n: usize,
    perm: Vec<usize>,
    perm_inv: Vec<usize>,
    src_col_ptr: Vec<usize>,
    src_row_idx: Vec<usize>,
    up_col_ptr: Vec<usize>,
    up_row_idx: Vec<usize>,
    /// Position in the permuted upper pattern of every source entry.
    src_to_up: Vec<usize>,
    etree: Vec<usize>,
    l_col_ptr: Vec<usize>,
}

impl SymbolicFactor {
    pub fn order(&self) -> usize {
        self.n
    }

    /// `perm[k]` is the original index at position `k`.
    pub fn perm(&self) -> &[usize] {
        &self.perm
    }

    /// Parent of every (permuted) column in the elimination tree.
    pub fn etree(&self) -> Vec<Option<usize>> {
        self.etree.iter().map(|&p| (p != NONE).then_some(p)).collect()
    }

    /// Number of entries in the strictly lower factor.
    pub fn factor_nnz(&self) -> usize {
        self.l_col_ptr[self.n]
    }

    /// Whether `a` has exactly the analyzed pattern.
    pub fn matches(&self, a: &SparseSymMatrix) -> bool {
        a.order() == self.n && a.col_ptr() == self.src_col_ptr && a.row_idx() == self.src_row_idx
    }
}

/// Analyze with the default minimum-degree ordering.
pub fn analyze(pattern: &SparseSymMatrix) -> Result<SymbolicFactor, SparseError> {
    analyze_with(pattern, &Ordering::MinimumDegree)
}

pub fn analyze_with(pattern: &SparseSymMatrix, ordering: &Ordering) -> Result<SymbolicFactor, SparseError> {
    let n = pattern.order();
    let cp = pattern.col_ptr();
    let ri = pattern.row_idx();
    for c in 0..n {
        if cp[c] == cp[c + 1] || ri[cp[c]] != c {
            return Err(SparseError::MissingDiagonal(c));
        }
    }
    let perm = resolve(ordering, pattern)?;
    let mut perm_inv = vec![0; n];
    for (k, &i) in perm.iter().enumerate() {
        perm_inv[i] = k;
    }

    // Upper triangle of P A Pᵀ, column compressed.
    let mut counts = vec![0usize; n + 1];
    let mut coords = Vec::with_capacity(pattern.nnz());
    for c in 0..n {
        for &r in &ri[cp[c]..cp[c + 1]] {
            let (pr, pc) = (perm_inv[r], perm_inv[c]);
            let (row, col) = if pr <= pc { (pr, pc) } else { (pc, pr) };
            counts[col + 1] += 1;
            coords.push((row, col));
        }
    }
    for c in 0..n {
        counts[c + 1] += counts[c];
    }
    let mut entries: Vec<Vec<(usize, usize)>> = vec![Vec::new(); n];
    for (e, &(row, col)) in coords.iter().enumerate() {
        entries[col].push((row, e));
    }
    let mut up_row_idx = vec![0; coords.len()];
    let mut src_to_up = vec![0; coords.len()];
    for (col, list) in entries.iter_mut().enumerate() {
        list.sort_unstable();
        for (k, &(row, e)) in list.iter().enumerate() {
            up_row_idx[counts[col] + k] = row;
            src_to_up[e] = counts[col] + k;
        }
    }
    let up_col_ptr = counts;

    // Elimination tree and column counts of L.
    let mut etree = vec![NONE; n];
    let mut l_nz = vec![0usize; n];
    let mut work = vec![NONE; n];
    for j in 0..n {
        work[j] = j;
        for &row in &up_row_idx[up_col_ptr[j]..up_col_ptr[j + 1]] {
            let mut i = row;
            while work[i] != j {
                if etree[i] == NONE {
                    etree[i] = j;
                }
                l_nz[i] += 1;
                work[i] = j;
                i = etree[i];
            }
        }
    }
    let mut l_col_ptr = vec![0usize; n + 1];
    for i in 0..n {
        l_col_ptr[i + 1] = l_col_ptr[i] + l_nz[i];
    }

    Ok(SymbolicFactor {
        n,
        perm,
        perm_inv,
        src_col_ptr: cp.to_vec(),
        src_row_idx: ri.to_vec(),
        up_col_ptr,
        up_row_idx,
        src_to_up,
        etree,
        l_col_ptr,
    })
}

/// Numeric factor `P A Pᵀ = L D Lᵀ` with unit lower-triangular `L`.
#[derive(Debug, Clone)]
pub struct NumericFactor {
    symbolic: Arc<SymbolicFactor>,
    l_row_idx: Vec<usize>,
    l_values: Vec<f64>,
    d: Vec<f64>,
}

/// Numeric factorization of `a`, which must have the analyzed pattern.
pub fn factorize(symbolic: &Arc<SymbolicFactor>, a: &SparseSymMatrix) -> Result<NumericFactor, SparseError> {
    let sym = symbolic.as_ref();
    if !sym.matches(a) {
        return Err(SparseError::PatternMismatch);
    }
    let n = sym.n;
    let mut ax = vec![0.0; sym.up_row_idx.len()];
    for (e, &v) in a.values().iter().enumerate() {
        ax[sym.src_to_up[e]] = v;
    }

    let lp = &sym.l_col_ptr;
    let mut l_row_idx = vec![0usize; lp[n]];
    let mut l_values = vec![0.0; lp[n]];
    let mut d = vec![0.0; n];
    let mut d_inv = vec![0.0; n];
    let mut next_in_col: Vec<usize> = lp[..n].to_vec();
    let mut y_vals = vec![0.0; n];
    let mut y_used = vec![false; n];
    let mut y_idx = vec![0usize; n];
    let mut elim = vec![0usize; n];

    for k in 0..n {
        let mut n_y = 0;
        for p in sym.up_col_ptr[k]..sym.up_col_ptr[k + 1] {
            let b = sym.up_row_idx[p];
            if b == k {
                d[k] = ax[p];
                continue;
            }
            y_vals[b] = ax[p];
            if !y_used[b] {
                // Walk up the elimination tree, collecting the reach of row k.
                y_used[b] = true;
                elim[0] = b;
                let mut n_e = 1;
                let mut next = sym.etree[b];
                while next != NONE && next < k {
                    if y_used[next] {
                        break;
                    }
                    y_used[next] = true;
                    elim[n_e] = next;
                    n_e += 1;
                    next = sym.etree[next];
                }
                while n_e > 0 {
                    n_e -= 1;
                    y_idx[n_y] = elim[n_e];
                    n_y += 1;
                }
            }
        }
        for i in (0..n_y).rev() {
            let c = y_idx[i];
            let end = next_in_col[c];
            let yc = y_vals[c];
            for j in lp[c]..end {
                y_vals[l_row_idx[j]] -= l_values[j] * yc;
            }
            l_row_idx[end] = k;
            let lv = yc * d_inv[c];
            l_values[end] = lv;
            d[k] -= yc * lv;
            next_in_col[c] += 1;
            y_vals[c] = 0.0;
            y_used[c] = false;
        }
        if !(d[k] > PIVOT_TOL) {
            return Err(SparseError::NotPositiveDefinite {
                pivot: sym.perm[k],
                value: d[k],
            });
        }
        d_inv[k] = 1.0 / d[k];
    }

    Ok(NumericFactor {
        symbolic: Arc::clone(symbolic),
        l_row_idx,
        l_values,
        d,
    })
}

impl NumericFactor {
    pub fn symbolic(&self) -> &Arc<SymbolicFactor> {
        &self.symbolic
    }

    pub fn order(&self) -> usize {
        self.symbolic.n
    }

    pub fn d(&self) -> &[f64] {
        &self.d
    }

    /// Dense unit lower-triangular `L` (permuted ordering).
    pub fn l_dense(&self) -> DMatrix<f64> {
        let n = self.order();
        let lp = &self.symbolic.l_col_ptr;
        let mut l = DMatrix::identity(n, n);
        for c in 0..n {
            for k in lp[c]..lp[c + 1] {
                l[(self.l_row_idx[k], c)] = self.l_values[k];
            }
        }
        l
    }

    pub fn logdet(&self) -> f64 {
        self.d.iter().map(|v| v.ln()).sum()
    }

    /// Solve in place for one right-hand side given in original ordering.
    pub fn solve_in_place(&self, b: &mut [f64]) -> Result<(), SparseError> {
        let sym = self.symbolic.as_ref();
        let n = sym.n;
        if b.len() != n {
            return Err(SparseError::DimensionMismatch {
                expected: n,
                got: b.len(),
            });
        }
        let lp = &sym.l_col_ptr;
        let mut x: Vec<f64> = sym.perm.iter().map(|&i| b[i]).collect();
        for c in 0..n {
            let xc = x[c];
            if xc != 0.0 {
                for k in lp[c]..lp[c + 1] {
                    x[self.l_row_idx[k]] -= self.l_values[k] * xc;
                }
            }
        }
        for (xi, di) in x.iter_mut().zip(&self.d) {
            *xi /= di;
        }
        for c in (0..n).rev() {
            let mut acc = x[c];
            for k in lp[c]..lp[c + 1] {
                acc -= self.l_values[k] * x[self.l_row_idx[k]];
            }
            x[c] = acc;
        }
        for (k, &i) in sym.perm.iter().enumerate() {
            b[i] = x[k];
        }
        Ok(())
    }

    pub fn solve_vec(&self, b: &[f64]) -> Result<Vec<f64>, SparseError> {
        let mut x = b.to_vec();
        self.solve_in_place(&mut x)?;
        Ok(x)
    }

    /// `hᵀ A⁻¹ h` for a sparse vector `h` (original ordering), using a sparse
    /// forward solve restricted to the elimination-tree reach of `h`.
    pub fn inv_quad_form(&self, idx: &[usize], vals: &[f64]) -> Result<f64, SparseError> {
        let sym = self.symbolic.as_ref();
        let n = sym.n;
        if idx.len() != vals.len() {
            return Err(SparseError::Malformed("index/value lengths differ".into()));
        }
        if let Some(&bad) = idx.iter().find(|&&i| i >= n) {
            return Err(SparseError::DimensionMismatch { expected: n, got: bad + 1 });
        }
        let mut mark = vec![false; n];
        let mut reach = Vec::new();
        for &i in idx {
            let mut j = sym.perm_inv[i];
            while j != NONE && !mark[j] {
                mark[j] = true;
                reach.push(j);
                j = sym.etree[j];
            }
        }
        reach.sort_unstable();
        let mut x = vec![0.0; n];
        for (&i, &v) in idx.iter().zip(vals) {
            x[sym.perm_inv[i]] += v;
        }
        let lp = &sym.l_col_ptr;
        let mut acc = 0.0;
        for &c in &reach {
            let xc = x[c];
            if xc != 0.0 {
                for k in lp[c]..lp[c + 1] {
                    x[self.l_row_idx[k]] -= self.l_values[k] * xc;
                }
            }
            acc += xc * xc / self.d[c];
        }
        Ok(acc)
    }
}

/// Solve `A X = B` column by column; columns are processed in parallel.
pub fn solve(factor: &NumericFactor, rhs: &DMatrix<f64>) -> Result<DMatrix<f64>, SparseError> {
    let n = factor.order();
    if rhs.nrows() != n {
        return Err(SparseError::DimensionMismatch {
            expected: n,
            got: rhs.nrows(),
        });
    }
    let mut x = rhs.clone();
    if n == 0 {
        return Ok(x);
    }
    x.as_mut_slice()
        .par_chunks_mut(n)
        .try_for_each(|col| factor.solve_in_place(col))?;
    Ok(x)
}

pub fn logdet(factor: &NumericFactor) -> f64 {
    factor.logdet()
}
