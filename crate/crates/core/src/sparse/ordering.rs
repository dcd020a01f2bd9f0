use std::collections::BTreeSet;

use super::{SparseError, SparseSymMatrix};

/// Fill-reducing ordering choice for [`analyze_with`](super::analyze_with).
#[derive(Debug, Clone, PartialEq, Default)]
pub enum Ordering {
    /// Greedy minimum degree on the elimination graph.
    #[default]
    MinimumDegree,
    Natural,
    /// `perm[k]` is the original index placed at position `k`.
    Given(Vec<usize>),
}

fn adjacency(a: &SparseSymMatrix) -> Vec<Vec<usize>> {
    let n = a.order();
    let mut adj = vec![Vec::new(); n];
    for c in 0..n {
        for k in a.col_ptr()[c]..a.col_ptr()[c + 1] {
            let r = a.row_idx()[k];
            if r != c {
                adj[r].push(c);
                adj[c].push(r);
            }
        }
    }
    for list in &mut adj {
        list.sort_unstable();
        list.dedup();
    }
    adj
}

/// Sorted union of `a` and `b`, skipping `skip_a` and `skip_b`.
fn merge_without(a: &[usize], b: &[usize], skip_a: usize, skip_b: usize) -> Vec<usize> {
    let mut out = Vec::with_capacity(a.len().max(b.len()));
    let (mut i, mut j) = (0, 0);
    while i < a.len() || j < b.len() {
        let v = match (a.get(i), b.get(j)) {
            (Some(&x), Some(&y)) if x == y => {
                i += 1;
                j += 1;
                x
            }
            (Some(&x), Some(&y)) if x < y => {
                i += 1;
                x
            }
            (Some(_), Some(&y)) => {
                j += 1;
                y
            }
            (Some(&x), None) => {
                i += 1;
                x
            }
            (None, Some(&y)) => {
                j += 1;
                y
            }
            (None, None) => unreachable!(),
        };
        if v != skip_a && v != skip_b {
            out.push(v);
        }
    }
    out
}

/// Minimum-degree ordering of the graph of `a`, computed on the explicit
/// elimination graph. Ties go to the lowest index, so the result depends on
/// the pattern only.
pub fn minimum_degree(a: &SparseSymMatrix) -> Vec<usize> {
    let n = a.order();
    let mut adj = adjacency(a);
    let mut queue: BTreeSet<(usize, usize)> = (0..n).map(|v| (adj[v].len(), v)).collect();
    let mut perm = Vec::with_capacity(n);
    while let Some((_, v)) = queue.pop_first() {
        let nbrs = std::mem::take(&mut adj[v]);
        for &u in &nbrs {
            let old = adj[u].len();
            let merged = merge_without(&adj[u], &nbrs, u, v);
            queue.remove(&(old, u));
            queue.insert((merged.len(), u));
            adj[u] = merged;
        }
        perm.push(v);
    }
    perm
}

pub(crate) fn resolve(ordering: &Ordering, a: &SparseSymMatrix) -> Result<Vec<usize>, SparseError> {
    let n = a.order();
    match ordering {
        Ordering::MinimumDegree => Ok(minimum_degree(a)),
        Ordering::Natural => Ok((0..n).collect()),
        Ordering::Given(p) => {
            if p.len() != n {
                return Err(SparseError::DimensionMismatch {
                    expected: n,
                    got: p.len(),
                });
            }
            let mut seen = vec![false; n];
            for &i in p {
                if i >= n || std::mem::replace(&mut seen[i], true) {
                    return Err(SparseError::Malformed("ordering is not a permutation".into()));
                }
            }
            Ok(p.clone())
        }
    }
}

/// Number of entries of the strictly lower factor that are not in the
/// strictly lower part of `P A Pᵀ`.
pub fn fill_in(a: &SparseSymMatrix, perm: &[usize]) -> Result<usize, SparseError> {
    let sym = super::analyze_with(a, &Ordering::Given(perm.to_vec()))?;
    let off_diag = a.nnz() - a.order();
    Ok(sym.factor_nnz() - off_diag)
}
