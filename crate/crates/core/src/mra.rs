//! Multi-resolution basis, prior blocks and the full conditional of the mean
//! parameters.
//!
//! Let `C₀` be the covariance function (with nugget). For a region at
//! resolution `k` with ancestors `a₀, …, a_{k-1}` (root first) the basis
//! functions are the conditional covariances
//!
//! ```text
//! b_k(s) = C₀(s, Q_k) − Σ_{j<k} b_j(s) A_{j→k},     A_{j→k} = V_j⁻¹ b_j(Q_k)ᵀ
//! V_k    = b_k(Q_k)
//! ```
//!
//! where `Q_k` are the region's knots and `b_j` is evaluated in the level-`j`
//! ancestor. The coefficients of region `k` have covariance `V_k⁻¹`, so `V_k`
//! is their prior precision and enters the full conditional precision as is.
//!
//! Columns of `H = [X F]` are laid out as the `p` covariates followed by one
//! contiguous block per region, regions in level order.

use std::ops::Range;
use std::sync::Arc;

use nalgebra::{Cholesky, DMatrix, Dyn, RowDVector};
use rayon::prelude::*;
use thiserror::Error;

use std::collections::HashMap;

use crate::covariance::{cov_matrix_sym, cov_matrix_with, CovarianceFunction, HyperParams, SeparableMaternExp};
use crate::geo::SpatioTemporalPoint;
use crate::partition::RegionTree;
use crate::sparse::{analyze, factorize, NumericFactor, SparseError, SparseMatrix, SparseSymMatrix, SymbolicFactor};

#[derive(Debug, Error, Clone, PartialEq)]
pub enum MraError {
    #[error("region {path}: knot covariance block is not positive definite (condition estimate {condition:e})")]
    SingularBlock { path: String, condition: f64 },
    #[error("dimension mismatch in {what}: expected {expected}, got {got}")]
    Dimension {
        what: &'static str,
        expected: usize,
        got: usize,
    },
    #[error("full conditional at {psi:?} could not be factorized: {source}")]
    Factorization {
        psi: HyperParams,
        #[source]
        source: SparseError,
    },
    #[error(transparent)]
    Sparse(#[from] SparseError),
}

/// Prior precision blocks of the basis coefficients, one per region.
#[derive(Debug, Clone)]
pub struct GammaBlocks {
    blocks: Vec<PriorBlock>,
    n_cols: usize,
    logdet_precision: f64,
}

#[derive(Debug, Clone)]
struct PriorBlock {
    cols: Range<usize>,
    /// Conditional knot covariance `V`, the coefficients' prior precision.
    v: DMatrix<f64>,
    chol: Cholesky<f64, Dyn>,
    logdet: f64,
}

impl PriorBlock {
    fn new(cols: Range<usize>, v: DMatrix<f64>) -> Option<Self> {
        let chol = v.clone().cholesky()?;
        let logdet = 2.0 * chol.l_dirty().diagonal().iter().map(|d| d.ln()).sum::<f64>();
        Some(Self { cols, v, chol, logdet })
    }
}

impl GammaBlocks {
    /// Blocks given directly as precision matrices, laid out consecutively.
    pub fn from_precision_blocks(blocks: Vec<DMatrix<f64>>) -> Result<Self, MraError> {
        let mut start = 0;
        let mut out = Vec::with_capacity(blocks.len());
        for (i, v) in blocks.into_iter().enumerate() {
            if v.nrows() != v.ncols() {
                return Err(MraError::Dimension {
                    what: "prior block",
                    expected: v.nrows(),
                    got: v.ncols(),
                });
            }
            let m = v.nrows();
            let cond = condition_estimate(&v);
            let block = PriorBlock::new(start..start + m, v).ok_or(MraError::SingularBlock {
                path: format!("block {i}"),
                condition: cond,
            })?;
            out.push(block);
            start += m;
        }
        Ok(Self::assemble(out, start))
    }

    fn assemble(blocks: Vec<PriorBlock>, n_cols: usize) -> Self {
        let logdet_precision = blocks.iter().map(|b| b.logdet).sum();
        Self {
            blocks,
            n_cols,
            logdet_precision,
        }
    }

    pub fn n_blocks(&self) -> usize {
        self.blocks.len()
    }

    /// Total number of basis coefficients.
    pub fn n_cols(&self) -> usize {
        self.n_cols
    }

    /// Column range (within `F`) of block `b`.
    pub fn cols(&self, b: usize) -> Range<usize> {
        self.blocks[b].cols.clone()
    }

    /// Prior precision `V` of block `b`.
    pub fn precision(&self, b: usize) -> &DMatrix<f64> {
        &self.blocks[b].v
    }

    /// Prior covariance `Γ = V⁻¹` of block `b`, formed on demand.
    pub fn covariance(&self, b: usize) -> DMatrix<f64> {
        self.blocks[b].chol.inverse()
    }

    /// `Σ log det V` over all blocks.
    pub fn logdet_precision(&self) -> f64 {
        self.logdet_precision
    }

    /// `Σ ηᵦᵀ V ηᵦ` for the coefficient vector `eta` (length `n_cols`).
    pub fn quad_form(&self, eta: &[f64]) -> f64 {
        self.blocks
            .iter()
            .map(|b| {
                let e = &eta[b.cols.clone()];
                let m = e.len();
                let mut acc = 0.0;
                for j in 0..m {
                    let mut col = 0.0;
                    for i in 0..m {
                        col += b.v[(i, j)] * e[i];
                    }
                    acc += col * e[j];
                }
                acc
            })
            .sum()
    }

    /// Dense block-diagonal coefficient covariance (small problems only).
    pub fn dense_covariance(&self) -> DMatrix<f64> {
        let mut g = DMatrix::zeros(self.n_cols, self.n_cols);
        for (b, block) in self.blocks.iter().enumerate() {
            let s = block.cols.start;
            let m = block.cols.len();
            g.view_mut((s, s), (m, m)).copy_from(&self.covariance(b));
        }
        g
    }
}

fn condition_estimate(v: &DMatrix<f64>) -> f64 {
    if v.is_empty() {
        return 1.0;
    }
    let ev = v.clone().symmetric_eigenvalues();
    let max = ev.iter().fold(f64::NEG_INFINITY, |a, &b| a.max(b.abs()));
    let min = ev.iter().fold(f64::INFINITY, |a, &b| a.min(b));
    if min <= 0.0 {
        f64::INFINITY
    } else {
        max / min
    }
}

/// Everything needed to evaluate basis rows at arbitrary points.
#[derive(Debug, Clone)]
pub struct BasisSystem {
    tree: Arc<RegionTree>,
    kernel: SeparableMaternExp,
    /// Column range of every region, indexed by region id.
    cols: Vec<Range<usize>>,
    /// `cross[r][j]` is `A_{j→r}` for the `j`-th strict ancestor of `r`.
    cross: Vec<Vec<DMatrix<f64>>>,
    /// Basis rows already known at the knots of each finest region.
    leaf_rows: Vec<Option<LeafRows>>,
    n_cols: usize,
}

/// Rows of the basis at a finest region's own knots: `b_j(Q_K)` for every
/// ancestor `j`, and `V_K`. Observations sitting on a finest knot (the usual
/// case) reuse these instead of evaluating the recursion again.
#[derive(Debug, Clone)]
struct LeafRows {
    ancestors: Vec<DMatrix<f64>>,
    v: DMatrix<f64>,
    lookup: HashMap<[u64; 3], usize>,
}

/// Column ranges per region id, regions in arena (level) order.
pub fn column_layout(tree: &RegionTree) -> (Vec<Range<usize>>, usize) {
    let mut start = 0;
    let cols = tree
        .regions()
        .iter()
        .map(|r| {
            let range = start..start + r.knots.len();
            start = range.end;
            range
        })
        .collect();
    (cols, start)
}

struct RegionWork {
    cross: Vec<DMatrix<f64>>,
    knot_rows: Vec<DMatrix<f64>>,
    block: PriorBlock,
}

fn build_region(
    tree: &RegionTree,
    rid: usize,
    kernel: &SeparableMaternExp,
    cols: Range<usize>,
    done: &[Option<RegionWork>],
) -> Result<RegionWork, MraError> {
    let knots = &tree.region(rid).knots;
    let ancestors = tree.ancestry(rid);
    let ancestors = &ancestors[..ancestors.len() - 1];

    // b_j(Q_k) for every ancestor j, and the corresponding A_{j→k}.
    let mut b_list: Vec<DMatrix<f64>> = Vec::with_capacity(ancestors.len());
    let mut cross = Vec::with_capacity(ancestors.len());
    for &a in ancestors {
        let aw = done[a].as_ref().expect("ancestors are built first");
        let mut b = cov_matrix_with(kernel, knots, &tree.region(a).knots);
        for (i, bi) in b_list.iter().enumerate() {
            b -= bi * &aw.cross[i];
        }
        cross.push(aw.block.chol.solve(&b.transpose()));
        b_list.push(b);
    }

    let mut v = cov_matrix_sym(kernel, knots);
    for (b, a) in b_list.iter().zip(&cross) {
        v -= b * a;
    }
    let v = (&v + v.transpose()) * 0.5;
    let cond_v = v.clone();
    let block = PriorBlock::new(cols, v).ok_or_else(|| MraError::SingularBlock {
        path: tree.path_label(rid),
        condition: condition_estimate(&cond_v),
    })?;
    Ok(RegionWork {
        cross,
        knot_rows: b_list,
        block,
    })
}

/// Run the prior recursion over the whole tree. Regions of one resolution
/// are processed in parallel.
pub fn build_gamma_and_bases(tree: &Arc<RegionTree>, psi: &HyperParams) -> Result<(GammaBlocks, BasisSystem), MraError> {
    let kernel = psi.kernel();
    let (cols, n_cols) = column_layout(tree);
    let mut done: Vec<Option<RegionWork>> = (0..tree.regions().len()).map(|_| None).collect();
    for k in 0..=tree.depth() {
        let ids = tree.level(k);
        let built: Vec<Result<RegionWork, MraError>> = ids
            .par_iter()
            .map(|&rid| build_region(tree, rid, &kernel, cols[rid].clone(), &done))
            .collect();
        for (&rid, work) in ids.iter().zip(built) {
            done[rid] = Some(work?);
        }
    }
    let depth = tree.depth();
    let mut blocks = Vec::with_capacity(done.len());
    let mut cross = Vec::with_capacity(done.len());
    let mut leaf_rows = Vec::with_capacity(done.len());
    for (rid, work) in done.into_iter().enumerate() {
        let work = work.expect("every region is built");
        let region = tree.region(rid);
        leaf_rows.push((region.resolution == depth).then(|| LeafRows {
            ancestors: work.knot_rows,
            v: work.block.v.clone(),
            lookup: region.knots.iter().enumerate().map(|(i, q)| (q.key(), i)).collect(),
        }));
        blocks.push(work.block);
        cross.push(work.cross);
    }
    let gamma = GammaBlocks::assemble(blocks, n_cols);
    let sys = BasisSystem {
        tree: Arc::clone(tree),
        kernel,
        cols,
        cross,
        leaf_rows,
        n_cols,
    };
    Ok((gamma, sys))
}

impl BasisSystem {
    pub fn tree(&self) -> &Arc<RegionTree> {
        &self.tree
    }

    /// Number of basis functions (columns of `F`).
    pub fn n_cols(&self) -> usize {
        self.n_cols
    }

    pub fn region_cols(&self, rid: usize) -> Range<usize> {
        self.cols[rid].clone()
    }

    /// Sparse row of `F` at `point`: sorted column indices and values. Points
    /// outside the root box are clipped onto it to pick their regions.
    pub fn evaluate_basis_row(&self, point: &SpatioTemporalPoint) -> (Vec<usize>, Vec<f64>) {
        let path = self.tree.locate(point);
        let leaf = *path.last().expect("paths are never empty");
        if let Some(rows) = &self.leaf_rows[leaf] {
            if let Some(&i) = rows.lookup.get(&point.key()) {
                let nnz: usize = path.iter().map(|&r| self.cols[r].len()).sum();
                let mut idx = Vec::with_capacity(nnz);
                let mut vals = Vec::with_capacity(nnz);
                for (&rid, b) in path.iter().zip(&rows.ancestors) {
                    idx.extend(self.cols[rid].clone());
                    vals.extend(b.row(i).iter());
                }
                idx.extend(self.cols[leaf].clone());
                vals.extend(rows.v.row(i).iter());
                return (idx, vals);
            }
        }
        let mut blocks: Vec<RowDVector<f64>> = Vec::with_capacity(path.len());
        for &rid in &path {
            let knots = &self.tree.region(rid).knots;
            let mut b = RowDVector::from_fn(knots.len(), |_, c| self.kernel.covariance(point, &knots[c]));
            for (j, bj) in blocks.iter().enumerate() {
                b -= bj * &self.cross[rid][j];
            }
            blocks.push(b);
        }
        let nnz: usize = blocks.iter().map(|b| b.len()).sum();
        let mut idx = Vec::with_capacity(nnz);
        let mut vals = Vec::with_capacity(nnz);
        for (&rid, b) in path.iter().zip(&blocks) {
            idx.extend(self.cols[rid].clone());
            vals.extend(b.iter());
        }
        (idx, vals)
    }
}

/// `H = [X F]` at `points`. The covariate block is stored densely, so the
/// pattern depends only on the tree and the points.
pub fn assemble_h(sys: &BasisSystem, x: &DMatrix<f64>, points: &[SpatioTemporalPoint]) -> Result<SparseMatrix, MraError> {
    if x.nrows() != points.len() {
        return Err(MraError::Dimension {
            what: "covariate rows",
            expected: points.len(),
            got: x.nrows(),
        });
    }
    let p = x.ncols();
    let rows: Vec<(Vec<usize>, Vec<f64>)> = points
        .par_iter()
        .enumerate()
        .map(|(i, pt)| {
            let (fi, fv) = sys.evaluate_basis_row(pt);
            let mut idx: Vec<usize> = (0..p).collect();
            let mut vals: Vec<f64> = x.row(i).iter().copied().collect();
            idx.extend(fi.into_iter().map(|c| c + p));
            vals.extend(fv);
            (idx, vals)
        })
        .collect();
    Ok(SparseMatrix::from_rows(p + sys.n_cols(), &rows)?)
}

#[derive(Debug, Clone)]
struct RowGroup {
    rows: Vec<usize>,
    cols: Vec<usize>,
    /// Positions in `Q`'s value array of the packed lower triangle of the
    /// group's Gram matrix, column by column.
    pos: Vec<usize>,
}

/// Sparsity structure of the full conditional precision and the scatter maps
/// used to fill it. Depends only on the patterns of `H` and of the prior
/// blocks, so one instance serves every hyperparameter value.
#[derive(Debug, Clone)]
pub struct QStructure {
    pattern: SparseSymMatrix,
    p: usize,
    h_rows: usize,
    h_pattern: (Vec<usize>, Vec<usize>),
    beta_pos: Vec<usize>,
    block_pos: Vec<Vec<usize>>,
    groups: Vec<RowGroup>,
}

fn packed_positions(pattern: &SparseSymMatrix, cols: &[usize]) -> Result<Vec<usize>, SparseError> {
    let cp = pattern.col_ptr();
    let ri = pattern.row_idx();
    let c = cols.len();
    let mut pos = Vec::with_capacity(c * (c + 1) / 2);
    for j in 0..c {
        let col = cols[j];
        let mut k = cp[col];
        for &row in &cols[j..] {
            while k < cp[col + 1] && ri[k] < row {
                k += 1;
            }
            if k == cp[col + 1] || ri[k] != row {
                return Err(SparseError::PatternMismatch);
            }
            pos.push(k);
        }
    }
    Ok(pos)
}

impl QStructure {
    pub fn new(h: &SparseMatrix, gamma: &GammaBlocks) -> Result<Self, MraError> {
        let n = h.n_cols();
        if n < gamma.n_cols() {
            return Err(MraError::Dimension {
                what: "columns of H",
                expected: gamma.n_cols(),
                got: n,
            });
        }
        let p = n - gamma.n_cols();

        // Group rows of H by their column pattern, in first-occurrence order.
        let ht = h.transpose();
        let (tp, ti) = (ht.col_ptr(), ht.row_idx());
        let mut index: std::collections::HashMap<&[usize], usize> = std::collections::HashMap::new();
        let mut groups: Vec<RowGroup> = Vec::new();
        for r in 0..h.n_rows() {
            let cols = &ti[tp[r]..tp[r + 1]];
            let g = *index.entry(cols).or_insert_with(|| {
                groups.push(RowGroup {
                    rows: Vec::new(),
                    cols: cols.to_vec(),
                    pos: Vec::new(),
                });
                groups.len() - 1
            });
            groups[g].rows.push(r);
        }

        let mut col_rows: Vec<Vec<usize>> = (0..n).map(|c| vec![c]).collect();
        for b in 0..gamma.n_blocks() {
            let cols = gamma.cols(b);
            for a in cols.clone() {
                col_rows[a + p].extend(a + p..cols.end + p);
            }
        }
        for g in &groups {
            for (i, &a) in g.cols.iter().enumerate() {
                col_rows[a].extend_from_slice(&g.cols[i..]);
            }
        }
        let mut col_ptr = Vec::with_capacity(n + 1);
        col_ptr.push(0);
        let mut row_idx = Vec::new();
        for mut rows in col_rows {
            rows.sort_unstable();
            rows.dedup();
            row_idx.extend(rows);
            col_ptr.push(row_idx.len());
        }
        let nnz = row_idx.len();
        let pattern = SparseSymMatrix::new(n, col_ptr, row_idx, vec![0.0; nnz])?;

        let beta_pos = (0..p)
            .map(|a| pattern.position(a, a).expect("diagonal is present"))
            .collect();
        let block_pos = (0..gamma.n_blocks())
            .map(|b| {
                let cols: Vec<usize> = gamma.cols(b).map(|c| c + p).collect();
                packed_positions(&pattern, &cols)
            })
            .collect::<Result<_, _>>()?;
        for g in &mut groups {
            g.pos = packed_positions(&pattern, &g.cols)?;
        }
        Ok(Self {
            pattern,
            p,
            h_rows: h.n_rows(),
            h_pattern: (h.col_ptr().to_vec(), h.row_idx().to_vec()),
            beta_pos,
            block_pos,
            groups,
        })
    }

    /// `Q` with zero values.
    pub fn pattern(&self) -> &SparseSymMatrix {
        &self.pattern
    }

    /// Number of covariate columns.
    pub fn p(&self) -> usize {
        self.p
    }

    pub fn order(&self) -> usize {
        self.pattern.order()
    }

    fn check_h(&self, h: &SparseMatrix) -> Result<(), MraError> {
        if h.n_rows() != self.h_rows || h.col_ptr() != self.h_pattern.0 || h.row_idx() != self.h_pattern.1 {
            return Err(SparseError::PatternMismatch.into());
        }
        Ok(())
    }

    /// Assemble `Q = blockdiag(I / beta_var, V blocks) + HᵀH / ζ²`.
    pub fn assemble_q(&self, h: &SparseMatrix, gamma: &GammaBlocks, zeta2: f64, beta_var: f64) -> Result<SparseSymMatrix, MraError> {
        self.check_h(h)?;
        if gamma.n_blocks() != self.block_pos.len() || gamma.n_cols() + self.p != self.order() {
            return Err(SparseError::PatternMismatch.into());
        }
        let mut q = self.pattern.clone();
        let vals = q.values_mut();
        for &k in &self.beta_pos {
            vals[k] += 1.0 / beta_var;
        }
        for (b, pos) in self.block_pos.iter().enumerate() {
            let v = gamma.precision(b);
            let m = v.nrows();
            let mut t = 0;
            for j in 0..m {
                for i in j..m {
                    vals[pos[t]] += v[(i, j)];
                    t += 1;
                }
            }
        }
        let ht = h.transpose();
        let (tp, tv) = (ht.col_ptr(), ht.values());
        let grams: Vec<DMatrix<f64>> = self
            .groups
            .par_iter()
            .map(|g| {
                let c = g.cols.len();
                // Rows of the group as columns, so the Gram is a plain product.
                let mut mt = DMatrix::zeros(c, g.rows.len());
                for (r, &row) in g.rows.iter().enumerate() {
                    mt.column_mut(r).copy_from_slice(&tv[tp[row]..tp[row] + c]);
                }
                &mt * mt.transpose()
            })
            .collect();
        let scale = 1.0 / zeta2;
        for (g, gram) in self.groups.iter().zip(&grams) {
            let c = g.cols.len();
            let mut t = 0;
            for j in 0..c {
                for i in j..c {
                    vals[g.pos[t]] += gram[(i, j)] * scale;
                    t += 1;
                }
            }
        }
        Ok(q)
    }
}

/// Full conditional of the mean parameters `v = (β, η)` given `Ψ` and `y`.
#[derive(Debug, Clone)]
pub struct FullConditional {
    pub q: SparseSymMatrix,
    pub xi: Vec<f64>,
    pub mean: Vec<f64>,
    pub factor: NumericFactor,
    pub logdet_q: f64,
    /// `log det` of the prior precision of `v`: `Σ log det V − p log σ²_β`.
    pub logdet_prior_precision: f64,
    pub p: usize,
}

/// Build, factorize and solve the full conditional. When `sym` is given it
/// must have been computed from the same `Q` pattern.
pub fn build_full_conditional(
    h: &SparseMatrix,
    gamma: &GammaBlocks,
    y: &[f64],
    psi: &HyperParams,
    beta_prior_var: f64,
    sym: Option<&Arc<SymbolicFactor>>,
) -> Result<FullConditional, MraError> {
    let structure = QStructure::new(h, gamma)?;
    build_full_conditional_with(&structure, h, gamma, y, psi, beta_prior_var, sym)
}

pub fn build_full_conditional_with(
    structure: &QStructure,
    h: &SparseMatrix,
    gamma: &GammaBlocks,
    y: &[f64],
    psi: &HyperParams,
    beta_prior_var: f64,
    sym: Option<&Arc<SymbolicFactor>>,
) -> Result<FullConditional, MraError> {
    if y.len() != h.n_rows() {
        return Err(MraError::Dimension {
            what: "response length",
            expected: h.n_rows(),
            got: y.len(),
        });
    }
    let zeta2 = psi.zeta() * psi.zeta();
    let q = structure.assemble_q(h, gamma, zeta2, beta_prior_var)?;
    let xi: Vec<f64> = h.tr_mul_vec(y)?.into_iter().map(|v| v / zeta2).collect();
    let owned;
    let sym = match sym {
        Some(s) => s,
        None => {
            owned = Arc::new(analyze(&q)?);
            &owned
        }
    };
    let factor = factorize(sym, &q).map_err(|source| MraError::Factorization { psi: *psi, source })?;
    let mean = factor.solve_vec(&xi)?;
    let p = structure.p();
    Ok(FullConditional {
        logdet_q: factor.logdet(),
        logdet_prior_precision: gamma.logdet_precision() - p as f64 * beta_prior_var.ln(),
        q,
        xi,
        mean,
        factor,
        p,
    })
}

/// Prior log density of `v = (β, η)`: `β ~ N(0, σ²_β I)` and independent
/// blocks `η_b ~ N(0, V_b⁻¹)`.
pub fn log_prior_coefficients(v: &[f64], p: usize, gamma: &GammaBlocks, beta_prior_var: f64) -> f64 {
    let n = v.len() as f64;
    let beta_sq: f64 = v[..p].iter().map(|b| b * b).sum();
    let logdet = gamma.logdet_precision() - p as f64 * beta_prior_var.ln();
    -0.5 * n * crate::covariance::LN_2PI + 0.5 * logdet - 0.5 * beta_sq / beta_prior_var - 0.5 * gamma.quad_form(&v[p..])
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::covariance::cov_matrix;
    use crate::partition::{KnotMode, PartitionConfig};
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn pt(lon: f64, lat: f64, t: u32) -> SpatioTemporalPoint {
        SpatioTemporalPoint::new(lon, lat, t).unwrap()
    }

    fn random_points(n: usize, seed: u64) -> Vec<SpatioTemporalPoint> {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        (0..n)
            .map(|_| pt(73.2 + rng.random::<f64>() * 0.2, 18.6 + rng.random::<f64>() * 0.2, rng.random_range(0..4)))
            .collect()
    }

    fn psi() -> HyperParams {
        HyperParams::from_natural(1.3, 6.0, 3.0, 0.5).unwrap()
    }

    fn rel_frob(a: &DMatrix<f64>, b: &DMatrix<f64>) -> f64 {
        (a - b).norm() / b.norm()
    }

    fn two_level_tree() -> (Arc<RegionTree>, Vec<SpatioTemporalPoint>) {
        let obs = vec![pt(73.20, 18.60, 0), pt(73.22, 18.63, 1), pt(73.30, 18.61, 0), pt(73.33, 18.64, 2)];
        let cfg = PartitionConfig {
            n_lon_splits: 1,
            n_lat_splits: 0,
            ..PartitionConfig::default()
        };
        let mut tree = RegionTree::build(&obs, &cfg).unwrap();
        tree.set_knots(0, vec![pt(73.21, 18.62, 1), pt(73.26, 18.615, 0), pt(73.31, 18.63, 1)]);
        let [l, r] = [tree.level(1)[0], tree.level(1)[1]];
        tree.set_knots(l, obs[..2].to_vec());
        tree.set_knots(r, obs[2..].to_vec());
        (Arc::new(tree), obs)
    }

    fn multi_level_tree(n: usize, seed: u64) -> (Arc<RegionTree>, Vec<SpatioTemporalPoint>) {
        let obs = random_points(n, seed);
        let cfg = PartitionConfig {
            n_lon_splits: 1,
            n_lat_splits: 1,
            m0: 6,
            j: 2,
            ..PartitionConfig::default()
        };
        let mut tree = RegionTree::build(&obs, &cfg).unwrap();
        tree.place_knots(&obs, &[], &cfg, seed).unwrap();
        (Arc::new(tree), obs)
    }

    #[test]
    fn base_case_gamma_is_inverse_covariance() {
        let obs = random_points(25, 1);
        let tree = Arc::new(RegionTree::root_only(&obs, obs.clone()).unwrap());
        let (gam, _) = build_gamma_and_bases(&tree, &psi()).unwrap();
        let sigma = cov_matrix(&obs, &obs, &psi());
        let oracle = sigma.clone().try_inverse().unwrap();
        assert!(rel_frob(&gam.covariance(0), &oracle) < 1e-8);
        assert!(rel_frob(gam.precision(0), &sigma) < 1e-14);
    }

    #[test]
    fn blocks_are_symmetric_pd() {
        let (tree, _) = multi_level_tree(80, 3);
        let (gam, _) = build_gamma_and_bases(&tree, &psi()).unwrap();
        for b in 0..gam.n_blocks() {
            let v = gam.precision(b);
            assert_eq!(v, &v.transpose());
            let min = v.clone().symmetric_eigenvalues().min();
            assert!(min > 0.0, "block {b} min eigenvalue {min}");
        }
    }

    #[test]
    fn child_block_is_schur_complement() {
        let (tree, _) = two_level_tree();
        let psi = psi();
        let (gam, _) = build_gamma_and_bases(&tree, &psi).unwrap();
        let root = &tree.region(0).knots;
        let c_root = cov_matrix(root, root, &psi);
        for &child in tree.level(1) {
            let q = &tree.region(child).knots;
            let c_child = cov_matrix(q, q, &psi);
            let c_cross = cov_matrix(q, root, &psi);
            let oracle = &c_child - &c_cross * c_root.clone().try_inverse().unwrap() * c_cross.transpose();
            assert!(rel_frob(gam.precision(child), &oracle) < 1e-10);
        }
    }

    #[test]
    fn basis_at_finest_knot_reproduces_block_row() {
        let (tree, _) = multi_level_tree(60, 5);
        let (gam, sys) = build_gamma_and_bases(&tree, &psi()).unwrap();
        let leaf = tree.leaves()[2];
        let knot = tree.region(leaf).knots[1];
        let (idx, vals) = sys.evaluate_basis_row(&knot);
        let range = sys.region_cols(leaf);
        let block: Vec<f64> = idx.iter().zip(&vals).filter(|(c, _)| range.contains(c)).map(|(_, v)| *v).collect();
        let row = gam.precision(leaf).row(1);
        for (a, b) in block.iter().zip(row.iter()) {
            assert!((a - b).abs() < 1e-10 * b.abs().max(1.0));
        }
    }

    #[test]
    fn basis_row_support_follows_region_path() {
        let (tree, obs) = multi_level_tree(60, 7);
        let (_, sys) = build_gamma_and_bases(&tree, &psi()).unwrap();
        for p in &obs[..10] {
            let (idx, _) = sys.evaluate_basis_row(p);
            let path = tree.locate(p);
            let expected: usize = path.iter().map(|&r| tree.region(r).knots.len()).sum();
            assert_eq!(idx.len(), expected);
            assert!(idx.windows(2).all(|w| w[0] < w[1]));
        }
    }

    #[test]
    fn base_case_basis_is_plain_covariance() {
        let obs = random_points(6, 2);
        let knots = random_points(4, 9);
        let tree = Arc::new(RegionTree::root_only(&obs, knots.clone()).unwrap());
        let (_, sys) = build_gamma_and_bases(&tree, &psi()).unwrap();
        let (idx, vals) = sys.evaluate_basis_row(&obs[0]);
        assert_eq!(idx, vec![0, 1, 2, 3]);
        let oracle = cov_matrix(&obs[..1], &knots, &psi());
        assert_eq!(vals, oracle.iter().copied().collect::<Vec<_>>());
    }

    #[test]
    fn h_rows_and_pattern() {
        let point = pt(73.25, 18.65, 1);
        let knots = vec![pt(73.24, 18.64, 1), pt(73.3, 18.7, 2)];
        let tree = Arc::new(RegionTree::root_only(&[point], knots.clone()).unwrap());
        let (_, sys) = build_gamma_and_bases(&tree, &psi()).unwrap();
        let x = DMatrix::from_element(1, 1, 0.7);
        let h = assemble_h(&sys, &x, &[point]).unwrap().to_dense();
        assert_eq!(h.ncols(), 3);
        assert_eq!(h[(0, 0)], 0.7);
        for (k, knot) in knots.iter().enumerate() {
            assert_eq!(h[(0, k + 1)], crate::covariance::cov_st(&point, knot, &psi()));
        }

        // No covariates: H is F.
        let (tree, obs) = multi_level_tree(40, 4);
        let (_, sys) = build_gamma_and_bases(&tree, &psi()).unwrap();
        let f = assemble_h(&sys, &DMatrix::zeros(obs.len(), 0), &obs).unwrap();
        assert_eq!(f.n_cols(), sys.n_cols());

        // Pattern does not depend on the hyperparameters.
        let other = HyperParams::from_natural(0.4, 20.0, 1.0, 0.1).unwrap();
        let (_, sys2) = build_gamma_and_bases(&tree, &other).unwrap();
        let x = DMatrix::from_fn(obs.len(), 2, |i, j| (i + j) as f64);
        let h1 = assemble_h(&sys, &x, &obs).unwrap();
        let h2 = assemble_h(&sys2, &x, &obs).unwrap();
        assert!(h1.same_pattern(&h2));
        assert_ne!(h1.values(), h2.values());
        assert!(assemble_h(&sys, &DMatrix::zeros(3, 1), &obs).is_err());
    }

    #[test]
    fn full_conditional_scalar_examples() {
        let psi1 = HyperParams::from_natural(1.0, 1.0, 1.0, 1.0).unwrap();
        let h = SparseMatrix::from_dense(&DMatrix::identity(2, 2));
        let gam = GammaBlocks::from_precision_blocks(vec![DMatrix::identity(2, 2)]).unwrap();
        let fc = build_full_conditional(&h, &gam, &[3.0, -1.0], &psi1, 100.0, None).unwrap();
        assert_eq!(fc.q.to_dense(), DMatrix::identity(2, 2) * 2.0);
        assert_eq!(fc.mean, vec![1.5, -0.5]);

        let h = SparseMatrix::from_dense(&DMatrix::from_element(1, 1, 1.0));
        let gam = GammaBlocks::from_precision_blocks(vec![]).unwrap();
        let fc = build_full_conditional(&h, &gam, &[2.0], &psi1, 100.0, None).unwrap();
        assert!((fc.q.values()[0] - 1.01).abs() < 1e-15);
        assert!((fc.mean[0] - 2.0 / 1.01).abs() < 1e-14);
    }

    #[test]
    fn posterior_mean_matches_dense_oracle() {
        let (tree, obs) = multi_level_tree(50, 11);
        let psi = psi();
        let (gam, sys) = build_gamma_and_bases(&tree, &psi).unwrap();
        let n = obs.len();
        let x = DMatrix::from_fn(n, 2, |i, j| if j == 0 { 1.0 } else { obs[i].lon() - 73.3 });
        let h = assemble_h(&sys, &x, &obs).unwrap();
        let y: Vec<f64> = (0..n).map(|i| (i as f64 * 0.37).sin() * 2.0 + 1.0).collect();
        let fc = build_full_conditional(&h, &gam, &y, &psi, 100.0, None).unwrap();

        let hd = h.to_dense();
        let z2 = psi.zeta().powi(2);
        let mut prior = DMatrix::zeros(hd.ncols(), hd.ncols());
        prior[(0, 0)] = 0.01;
        prior[(1, 1)] = 0.01;
        for b in 0..gam.n_blocks() {
            let c = gam.cols(b);
            prior.view_mut((c.start + 2, c.start + 2), (c.len(), c.len())).copy_from(gam.precision(b));
        }
        let q = prior + hd.transpose() * &hd / z2;
        assert!(rel_frob(&fc.q.to_dense(), &q) < 1e-13);
        let xi = hd.transpose() * nalgebra::DVector::from_vec(y) / z2;
        let mean = q.clone().cholesky().unwrap().solve(&xi);
        let diff = mean.iter().zip(&fc.mean).map(|(a, b)| (a - b).abs()).fold(0.0, f64::max);
        assert!(diff < 1e-8 * mean.amax().max(1.0), "max diff {diff}");
        let oracle_logdet: f64 = q.symmetric_eigenvalues().iter().map(|v| v.ln()).sum();
        assert!((fc.logdet_q - oracle_logdet).abs() < 1e-8 * oracle_logdet.abs());
    }

    #[test]
    fn base_case_is_exact() {
        let obs = random_points(40, 13);
        let tree = Arc::new(RegionTree::root_only(&obs, obs.clone()).unwrap());
        let (gam, sys) = build_gamma_and_bases(&tree, &psi()).unwrap();
        let f = assemble_h(&sys, &DMatrix::zeros(obs.len(), 0), &obs).unwrap().to_dense();
        let implied = &f * gam.dense_covariance() * f.transpose();
        assert!(rel_frob(&implied, &cov_matrix(&obs, &obs, &psi())) < 1e-8);
    }

    #[test]
    fn q_pattern_is_hyperparameter_invariant() {
        let (tree, obs) = multi_level_tree(70, 17);
        let x = DMatrix::from_element(obs.len(), 1, 1.0);
        let y = vec![0.5; obs.len()];
        let mut patterns = Vec::new();
        for psi in [psi(), HyperParams::new(-1.0, 3.0, -0.5, -2.0).unwrap()] {
            let (gam, sys) = build_gamma_and_bases(&tree, &psi).unwrap();
            let h = assemble_h(&sys, &x, &obs).unwrap();
            let fc = build_full_conditional(&h, &gam, &y, &psi, 100.0, None).unwrap();
            patterns.push((fc.q.col_ptr().to_vec(), fc.q.row_idx().to_vec()));
        }
        assert_eq!(patterns[0], patterns[1]);
    }

    #[test]
    fn q_nonzeros_shrink_with_resolution_at_fixed_knot_count() {
        let obs = random_points(256, 19);
        let total = 64;
        let mut counts = Vec::new();
        for k in 0..=3usize {
            let (lon, lat, time) = [(0, 0, 0), (1, 0, 0), (1, 1, 0), (1, 1, 1)][k];
            let mut tree = if k == 0 {
                RegionTree::root_only(&obs, Vec::new()).unwrap()
            } else {
                let cfg = PartitionConfig {
                    n_lon_splits: lon,
                    n_lat_splits: lat,
                    n_time_splits: time,
                    knot_mode: KnotMode::PerRegion(1),
                    ..PartitionConfig::default()
                };
                RegionTree::build(&obs, &cfg).unwrap()
            };
            // Same total at every depth: the root keeps `total / (k + 1)` and
            // the remainder is spread evenly over the deeper levels.
            // Knot sites are distinct observation sites across all levels.
            let per_level = total / (k + 1);
            let mut used = vec![false; obs.len()];
            for level in 0..=k {
                let ids = tree.level(level).to_vec();
                let budget = if level == 0 { total - per_level * k } else { per_level };
                for (i, &rid) in ids.iter().enumerate() {
                    let m = budget / ids.len() + usize::from(i < budget % ids.len());
                    let picks: Vec<usize> = tree.region(rid).obs_idx.iter().copied().filter(|&i| !used[i]).take(m).collect();
                    let sites: Vec<_> = picks.iter().map(|&i| { used[i] = true; obs[i] }).collect();
                    tree.set_knots(rid, sites);
                }
            }
            assert_eq!(tree.total_knots(), total);
            let tree = Arc::new(tree);
            let (gam, sys) = build_gamma_and_bases(&tree, &psi()).unwrap();
            let h = assemble_h(&sys, &DMatrix::zeros(obs.len(), 0), &obs).unwrap();
            counts.push(QStructure::new(&h, &gam).unwrap().pattern().nnz());
        }
        assert!(counts.windows(2).all(|w| w[1] < w[0]), "{counts:?}");
    }

    #[test]
    fn prior_log_density_matches_dense_gaussian() {
        let (tree, _) = two_level_tree();
        let (gam, _) = build_gamma_and_bases(&tree, &psi()).unwrap();
        let p = 1;
        let n = p + gam.n_cols();
        let v: Vec<f64> = (0..n).map(|i| 0.3 * i as f64 - 0.5).collect();
        let mut cov = DMatrix::zeros(n, n);
        cov[(0, 0)] = 100.0;
        cov.view_mut((1, 1), (n - 1, n - 1)).copy_from(&gam.dense_covariance());
        let chol = cov.cholesky().unwrap();
        let vv = nalgebra::DVector::from_vec(v.clone());
        let quad = vv.dot(&chol.solve(&vv));
        let oracle = -0.5 * n as f64 * crate::covariance::LN_2PI - 0.5 * chol.ln_determinant() - 0.5 * quad;
        assert!((log_prior_coefficients(&v, p, &gam, 100.0) - oracle).abs() < 1e-8);
    }
}
