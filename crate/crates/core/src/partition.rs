//! Nested partition of the spatiotemporal domain and knot placement.
//!
//! Resolution `k + 1` is obtained by splitting every resolution-`k` region in
//! two at the median of its observations along one dimension. Longitude
//! splits come first, then latitude, then time. Split boundaries are
//! left-continuous: a point on a boundary belongs to the lower child.

use std::collections::HashSet;
use std::fmt::Write as _;

use rand::seq::index::sample;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use thiserror::Error;

use crate::geo::SpatioTemporalPoint;

pub const DIM_NAMES: [&str; 3] = ["lon", "lat", "time"];

#[derive(Debug, Error, Clone, PartialEq)]
pub enum PartitionError {
    #[error("invalid partition config: {0}")]
    Config(String),
    #[error("need at least 2 observations, got {0}")]
    TooFewObservations(usize),
    #[error("region {path}: all observations share the same {dim} value, cannot split")]
    DegenerateSplit { path: String, dim: &'static str },
    #[error("region {path}: splitting on {dim} at the median {at} leaves an empty child")]
    EmptyRegion { path: String, dim: &'static str, at: f64 },
}

/// How the coarse-resolution knot budget is set.
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum KnotMode {
    /// Resolution `r` receives `m0 * j^r` knots in total, shared equally
    /// among its regions (remainder to the earliest regions).
    LevelTotal,
    /// Every coarse region receives this many knots.
    PerRegion(usize),
}

/// Where coarse knots go once prediction sites are exhausted.
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum KnotPlacement {
    /// Prediction sites first, then the edges of a nested rectangular prism.
    Prism,
    /// Uniformly at random inside the region.
    UniformRandom,
}

#[derive(Debug, Clone, PartialEq)]
pub struct PartitionConfig {
    pub n_lon_splits: usize,
    pub n_lat_splits: usize,
    pub n_time_splits: usize,
    /// Knots at resolution 0.
    pub m0: usize,
    /// Knot growth factor per resolution.
    pub j: usize,
    /// Fraction of finest-resolution knots retained, in (0, 1].
    pub thinning_rate: f64,
    pub knot_mode: KnotMode,
    pub placement: KnotPlacement,
    /// Fraction of each region extent spanned by the knot prism.
    pub prism_span: f64,
    /// Half-width of the uniform jitter, as a fraction of the region extent.
    pub jitter: f64,
}

impl Default for PartitionConfig {
    fn default() -> Self {
        Self {
            n_lon_splits: 1,
            n_lat_splits: 1,
            n_time_splits: 0,
            m0: 20,
            j: 2,
            thinning_rate: 1.0,
            knot_mode: KnotMode::LevelTotal,
            placement: KnotPlacement::Prism,
            prism_span: 0.8,
            jitter: 0.01,
        }
    }
}

impl PartitionConfig {
    pub fn resolutions(&self) -> usize {
        self.n_lon_splits + self.n_lat_splits + self.n_time_splits
    }

    pub fn validate(&self) -> Result<(), PartitionError> {
        if self.resolutions() == 0 {
            return Err(PartitionError::Config("at least one split is required".into()));
        }
        if self.m0 == 0 {
            return Err(PartitionError::Config("m0 must be at least 1".into()));
        }
        if self.j == 0 {
            return Err(PartitionError::Config("j must be at least 1".into()));
        }
        if !(self.thinning_rate > 0.0 && self.thinning_rate <= 1.0) {
            return Err(PartitionError::Config(format!(
                "thinning rate must lie in (0, 1], got {}",
                self.thinning_rate
            )));
        }
        if let KnotMode::PerRegion(0) = self.knot_mode {
            return Err(PartitionError::Config("per-region knot count must be positive".into()));
        }
        if !(self.prism_span > 0.0 && self.prism_span < 1.0) {
            return Err(PartitionError::Config("prism span must lie in (0, 1)".into()));
        }
        if !(self.jitter >= 0.0 && self.jitter < (1.0 - self.prism_span) / 2.0) {
            return Err(PartitionError::Config(
                "jitter must be smaller than the prism margin".into(),
            ));
        }
        Ok(())
    }

    fn split_dims(&self) -> Vec<usize> {
        let mut dims = vec![0; self.n_lon_splits];
        dims.extend(std::iter::repeat_n(1, self.n_lat_splits));
        dims.extend(std::iter::repeat_n(2, self.n_time_splits));
        dims
    }
}

/// Axis-aligned box over (lon, lat, time).
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Bounds {
    pub lo: [f64; 3],
    pub hi: [f64; 3],
}

impl Bounds {
    fn enclosing<'a>(pts: impl IntoIterator<Item = &'a SpatioTemporalPoint>) -> Self {
        let mut lo = [f64::INFINITY; 3];
        let mut hi = [f64::NEG_INFINITY; 3];
        for p in pts {
            for d in 0..3 {
                lo[d] = lo[d].min(p.coord(d));
                hi[d] = hi[d].max(p.coord(d));
            }
        }
        Self { lo, hi }
    }

    pub fn extent(&self, dim: usize) -> f64 {
        self.hi[dim] - self.lo[dim]
    }

    /// Closed-box membership.
    pub fn contains(&self, p: &SpatioTemporalPoint) -> bool {
        (0..3).all(|d| p.coord(d) >= self.lo[d] && p.coord(d) <= self.hi[d])
    }

    fn clip(&self, p: &SpatioTemporalPoint) -> [f64; 3] {
        let mut c = [0.0; 3];
        for (d, v) in c.iter_mut().enumerate() {
            *v = p.coord(d).clamp(self.lo[d], self.hi[d]);
        }
        c
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Split {
    pub dim: usize,
    pub at: f64,
}

#[derive(Debug, Clone)]
pub struct Region {
    pub id: usize,
    pub resolution: usize,
    pub parent: Option<usize>,
    /// Arena indices of the two children (empty for leaves).
    pub children: Vec<usize>,
    pub bounds: Bounds,
    pub split: Option<Split>,
    pub obs_idx: Vec<usize>,
    pub knots: Vec<SpatioTemporalPoint>,
}

/// The nested partition, stored as an arena in level order.
#[derive(Debug, Clone)]
pub struct RegionTree {
    regions: Vec<Region>,
    levels: Vec<Vec<usize>>,
    root_bounds: Bounds,
    n_obs: usize,
}

fn median(sorted: &[f64]) -> f64 {
    let n = sorted.len();
    if n % 2 == 1 {
        sorted[n / 2]
    } else {
        0.5 * (sorted[n / 2 - 1] + sorted[n / 2])
    }
}

impl RegionTree {
    /// Median-split the observations into `cfg.resolutions()` nested levels.
    pub fn build(obs: &[SpatioTemporalPoint], cfg: &PartitionConfig) -> Result<Self, PartitionError> {
        cfg.validate()?;
        if obs.len() < 2 {
            return Err(PartitionError::TooFewObservations(obs.len()));
        }
        let root_bounds = Bounds::enclosing(obs);
        let mut tree = Self {
            regions: vec![Region {
                id: 0,
                resolution: 0,
                parent: None,
                children: Vec::new(),
                bounds: root_bounds,
                split: None,
                obs_idx: (0..obs.len()).collect(),
                knots: Vec::new(),
            }],
            levels: vec![vec![0]],
            root_bounds,
            n_obs: obs.len(),
        };
        for (k, dim) in cfg.split_dims().into_iter().enumerate() {
            let mut next = Vec::with_capacity(tree.levels[k].len() * 2);
            for &rid in &tree.levels[k].clone() {
                let (left, right) = tree.split_region(rid, dim, obs)?;
                next.push(left);
                next.push(right);
            }
            tree.levels.push(next);
        }
        Ok(tree)
    }

    fn split_region(&mut self, rid: usize, dim: usize, obs: &[SpatioTemporalPoint]) -> Result<(usize, usize), PartitionError> {
        let region = &self.regions[rid];
        let mut vals: Vec<f64> = region.obs_idx.iter().map(|&i| obs[i].coord(dim)).collect();
        vals.sort_by(f64::total_cmp);
        if vals.first() == vals.last() {
            return Err(PartitionError::DegenerateSplit {
                path: self.path_label(rid),
                dim: DIM_NAMES[dim],
            });
        }
        let at = median(&vals);
        let (left_idx, right_idx): (Vec<usize>, Vec<usize>) =
            region.obs_idx.iter().partition(|&&i| obs[i].coord(dim) <= at);
        if left_idx.is_empty() || right_idx.is_empty() {
            return Err(PartitionError::EmptyRegion {
                path: self.path_label(rid),
                dim: DIM_NAMES[dim],
                at,
            });
        }
        let mut lb = region.bounds;
        let mut rb = region.bounds;
        lb.hi[dim] = at;
        rb.lo[dim] = at;
        let resolution = region.resolution + 1;
        let mut ids = [0; 2];
        for (slot, (bounds, idx)) in [(lb, left_idx), (rb, right_idx)].into_iter().enumerate() {
            let id = self.regions.len();
            self.regions.push(Region {
                id,
                resolution,
                parent: Some(rid),
                children: Vec::new(),
                bounds,
                split: None,
                obs_idx: idx,
                knots: Vec::new(),
            });
            ids[slot] = id;
        }
        let region = &mut self.regions[rid];
        region.split = Some(Split { dim, at });
        region.children = ids.to_vec();
        Ok((ids[0], ids[1]))
    }

    /// A single-resolution tree (`K = 0`) with explicitly supplied knots.
    pub fn root_only(obs: &[SpatioTemporalPoint], knots: Vec<SpatioTemporalPoint>) -> Result<Self, PartitionError> {
        if obs.is_empty() {
            return Err(PartitionError::TooFewObservations(0));
        }
        let root_bounds = Bounds::enclosing(obs.iter().chain(knots.iter()));
        Ok(Self {
            regions: vec![Region {
                id: 0,
                resolution: 0,
                parent: None,
                children: Vec::new(),
                bounds: root_bounds,
                split: None,
                obs_idx: (0..obs.len()).collect(),
                knots,
            }],
            levels: vec![vec![0]],
            root_bounds,
            n_obs: obs.len(),
        })
    }

    /// Replace the knots of one region (manual placement).
    pub fn set_knots(&mut self, rid: usize, knots: Vec<SpatioTemporalPoint>) {
        self.regions[rid].knots = knots;
    }

    /// Finest resolution `K`.
    pub fn depth(&self) -> usize {
        self.levels.len() - 1
    }

    pub fn regions(&self) -> &[Region] {
        &self.regions
    }

    pub fn region(&self, id: usize) -> &Region {
        &self.regions[id]
    }

    /// Region ids at resolution `k`, in traversal order.
    pub fn level(&self, k: usize) -> &[usize] {
        &self.levels[k]
    }

    pub fn leaves(&self) -> &[usize] {
        &self.levels[self.depth()]
    }

    pub fn root_bounds(&self) -> &Bounds {
        &self.root_bounds
    }

    pub fn n_obs(&self) -> usize {
        self.n_obs
    }

    pub fn total_knots(&self) -> usize {
        self.regions.iter().map(|r| r.knots.len()).sum()
    }

    /// Ancestors of `rid` from the root down to and including `rid`.
    pub fn ancestry(&self, rid: usize) -> Vec<usize> {
        let mut path = vec![rid];
        let mut cur = rid;
        while let Some(p) = self.regions[cur].parent {
            path.push(p);
            cur = p;
        }
        path.reverse();
        path
    }

    /// Human-readable path such as `root/L/R`.
    pub fn path_label(&self, rid: usize) -> String {
        let path = self.ancestry(rid);
        let mut s = String::from("root");
        for w in path.windows(2) {
            let side = if self.regions[w[0]].children.first() == Some(&w[1]) {
                "L"
            } else {
                "R"
            };
            s.push('/');
            s.push_str(side);
        }
        s
    }

    /// Region ids at every resolution containing `p`; coordinates outside the
    /// root box are clipped to it first.
    pub fn locate(&self, p: &SpatioTemporalPoint) -> Vec<usize> {
        let c = self.root_bounds.clip(p);
        let mut path = Vec::with_capacity(self.levels.len());
        let mut cur = 0;
        path.push(cur);
        while let Some(split) = self.regions[cur].split {
            let children = &self.regions[cur].children;
            cur = if c[split.dim] <= split.at {
                children[0]
            } else {
                children[1]
            };
            path.push(cur);
        }
        path
    }

    /// Leaf region containing `p` (after clipping).
    pub fn locate_leaf(&self, p: &SpatioTemporalPoint) -> usize {
        *self.locate(p).last().expect("path is never empty")
    }

    /// Place knots at every resolution.
    ///
    /// Finest-resolution regions receive knots at their (distinct)
    /// observation sites, thinned uniformly at random. Coarser regions,
    /// processed from coarse to fine, take available prediction sites first
    /// and fill the rest of their budget according to `cfg.placement`. A
    /// prediction site used as a knot is not reused.
    pub fn place_knots(
        &mut self,
        obs: &[SpatioTemporalPoint],
        pred: &[SpatioTemporalPoint],
        cfg: &PartitionConfig,
        seed: u64,
    ) -> Result<(), PartitionError> {
        cfg.validate()?;
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let depth = self.depth();

        let pred_paths: Vec<Option<Vec<usize>>> = pred
            .iter()
            .map(|p| self.root_bounds.contains(p).then(|| self.locate(p)))
            .collect();
        let mut available = vec![true; pred.len()];

        for r in 0..depth {
            let ids = self.levels[r].clone();
            let budgets = level_budgets(cfg, r, ids.len());
            for (rid, budget) in ids.into_iter().zip(budgets) {
                let candidates: Vec<usize> = pred_paths
                    .iter()
                    .enumerate()
                    .filter(|(i, path)| available[*i] && path.as_ref().is_some_and(|p| p[r] == rid))
                    .map(|(i, _)| i)
                    .collect();
                let bounds = self.regions[rid].bounds;
                let mut knots = Vec::with_capacity(budget);
                let chosen: Vec<usize> = if candidates.len() >= budget {
                    let mut pick: Vec<usize> = sample(&mut rng, candidates.len(), budget)
                        .into_iter()
                        .map(|k| candidates[k])
                        .collect();
                    pick.sort_unstable();
                    pick
                } else {
                    candidates
                };
                for &i in &chosen {
                    available[i] = false;
                    knots.push(pred[i]);
                }
                let missing = budget - knots.len();
                if missing > 0 {
                    match cfg.placement {
                        KnotPlacement::Prism => {
                            knots.extend(prism_sites(&bounds, missing, cfg.prism_span, cfg.jitter, &mut rng))
                        }
                        KnotPlacement::UniformRandom => {
                            knots.extend((0..missing).map(|_| uniform_site(&bounds, &mut rng)))
                        }
                    }
                }
                self.regions[rid].knots = knots;
            }
        }

        for rid in self.levels[depth].clone() {
            // An observation site that already is an ancestor knot carries no
            // conditional variance at this resolution; reusing it would make
            // the leaf's knot covariance singular.
            let mut seen: HashSet<[u64; 3]> = self
                .ancestry(rid)
                .iter()
                .flat_map(|&a| self.regions[a].knots.iter().map(|k| k.key()))
                .collect();
            let sites: Vec<SpatioTemporalPoint> = self.regions[rid]
                .obs_idx
                .iter()
                .map(|&i| obs[i])
                .filter(|p| seen.insert(p.key()))
                .collect();
            let keep = thinned_count(sites.len(), cfg.thinning_rate);
            let knots = if keep == sites.len() {
                sites
            } else {
                let mut idx = sample(&mut rng, sites.len(), keep).into_vec();
                idx.sort_unstable();
                idx.into_iter().map(|i| sites[i]).collect()
            };
            self.regions[rid].knots = knots;
        }
        Ok(())
    }

    /// CSV summary: one row per region, then per-level knot totals as comments.
    pub fn summary_csv(&self) -> String {
        let mut s = String::from(
            "region,resolution,path,lon_lo,lon_hi,lat_lo,lat_hi,time_lo,time_hi,n_obs,n_knots\n",
        );
        for r in &self.regions {
            let b = &r.bounds;
            let _ = writeln!(
                s,
                "{},{},{},{},{},{},{},{},{},{},{}",
                r.id,
                r.resolution,
                self.path_label(r.id),
                b.lo[0],
                b.hi[0],
                b.lo[1],
                b.hi[1],
                b.lo[2],
                b.hi[2],
                r.obs_idx.len(),
                r.knots.len()
            );
        }
        for (k, ids) in self.levels.iter().enumerate() {
            let total: usize = ids.iter().map(|&i| self.regions[i].knots.len()).sum();
            let _ = writeln!(s, "# level {k}: {} regions, {total} knots", ids.len());
        }
        s
    }
}

/// Knot budgets for the regions of coarse level `r`.
pub fn level_budgets(cfg: &PartitionConfig, r: usize, n_regions: usize) -> Vec<usize> {
    match cfg.knot_mode {
        KnotMode::PerRegion(m) => vec![m; n_regions],
        KnotMode::LevelTotal => {
            let total = cfg.m0.saturating_mul(cfg.j.saturating_pow(r as u32));
            let share = total / n_regions;
            let extra = total % n_regions;
            (0..n_regions).map(|i| share + usize::from(i < extra)).collect()
        }
    }
}

/// `ceil(rate * count)`, at least one when `count > 0`.
pub fn thinned_count(count: usize, rate: f64) -> usize {
    if count == 0 {
        return 0;
    }
    let k = (rate * count as f64 - 1e-9).ceil() as usize;
    k.clamp(1, count)
}

fn van_der_corput(mut i: usize) -> f64 {
    let mut f = 0.5;
    let mut v = 0.0;
    while i > 0 {
        if i & 1 == 1 {
            v += f;
        }
        i >>= 1;
        f *= 0.5;
    }
    v
}

/// `count` sites on the edges of a box spanning the central `span` of every
/// dimension with positive extent: vertices first, then edge points at
/// successively finer dyadic fractions. Each coordinate gets uniform jitter
/// of `±jitter · extent`.
pub fn prism_sites(bounds: &Bounds, count: usize, span: f64, jitter: f64, rng: &mut impl Rng) -> Vec<SpatioTemporalPoint> {
    let active: Vec<usize> = (0..3).filter(|&d| bounds.extent(d) > 0.0).collect();
    let d = active.len();
    let margin = (1.0 - span) / 2.0;
    let to_site = |unit: &[f64], rng: &mut dyn rand::RngCore| {
        let mut c = bounds.lo;
        for (k, &dim) in active.iter().enumerate() {
            let ext = bounds.extent(dim);
            let jit = if jitter > 0.0 {
                rng.random_range(-jitter..jitter)
            } else {
                0.0
            };
            c[dim] = bounds.lo[dim] + ext * (margin + span * unit[k] + jit);
        }
        SpatioTemporalPoint::from_coords_unchecked(c)
    };
    if d == 0 {
        // A single site: nothing distinct to add beyond it.
        return if count > 0 {
            vec![to_site(&[], rng)]
        } else {
            Vec::new()
        };
    }
    let unit_of = |mask: usize| -> Vec<f64> { (0..d).map(|k| ((mask >> k) & 1) as f64).collect() };
    let n_vert = 1usize << d;
    let mut edges = Vec::new();
    for a in 0..n_vert {
        for k in 0..d {
            if a & (1 << k) == 0 {
                edges.push((a, a | (1 << k)));
            }
        }
    }
    let mut out = Vec::with_capacity(count);
    for v in 0..n_vert.min(count) {
        out.push(to_site(&unit_of(v), rng));
    }
    let mut round = 1;
    while out.len() < count {
        let f = van_der_corput(round);
        for &(a, b) in &edges {
            if out.len() == count {
                break;
            }
            let ua = unit_of(a);
            let ub = unit_of(b);
            let u: Vec<f64> = ua.iter().zip(&ub).map(|(x, y)| x + f * (y - x)).collect();
            out.push(to_site(&u, rng));
        }
        round += 1;
    }
    out
}

fn uniform_site(bounds: &Bounds, rng: &mut impl Rng) -> SpatioTemporalPoint {
    let mut c = bounds.lo;
    for (d, v) in c.iter_mut().enumerate() {
        let ext = bounds.extent(d);
        if ext > 0.0 {
            // Strictly inside the region.
            *v = bounds.lo[d] + ext * rng.random_range(0.001..0.999);
        }
    }
    SpatioTemporalPoint::from_coords_unchecked(c)
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;
    use rand::Rng;

    fn p(lon: f64, lat: f64, t: u32) -> SpatioTemporalPoint {
        SpatioTemporalPoint::new(lon, lat, t).unwrap()
    }

    fn lon_only(n_lon: usize) -> PartitionConfig {
        PartitionConfig {
            n_lon_splits: n_lon,
            n_lat_splits: 0,
            n_time_splits: 0,
            ..Default::default()
        }
    }

    fn grid(n: usize, days: u32) -> Vec<SpatioTemporalPoint> {
        let mut v = Vec::new();
        for t in 0..days {
            for i in 0..n {
                for j in 0..n {
                    v.push(p(73.2 + 0.2 * i as f64 / n as f64, 18.6 + 0.2 * j as f64 / n as f64, t));
                }
            }
        }
        v
    }

    #[test]
    fn even_count_median_is_midpoint() {
        let obs: Vec<_> = [1.0, 2.0, 3.0, 4.0].iter().map(|&x| p(x, 0.0, 0)).collect();
        let tree = RegionTree::build(&obs, &lon_only(1)).unwrap();
        assert_eq!(tree.region(0).split.unwrap().at, 2.5);
        assert_eq!(tree.region(tree.leaves()[0]).obs_idx, vec![0, 1]);
        assert_eq!(tree.region(tree.leaves()[1]).obs_idx, vec![2, 3]);
    }

    #[test]
    fn boundary_points_go_left() {
        let obs: Vec<_> = [1.0, 2.0, 3.0].iter().map(|&x| p(x, 0.0, 0)).collect();
        let tree = RegionTree::build(&obs, &lon_only(1)).unwrap();
        assert_eq!(tree.region(0).split.unwrap().at, 2.0);
        assert_eq!(tree.region(tree.leaves()[0]).obs_idx, vec![0, 1]);
        assert_eq!(tree.region(tree.leaves()[1]).obs_idx, vec![2]);
        assert_eq!(tree.locate_leaf(&p(2.0, 0.0, 0)), tree.leaves()[0]);
    }

    #[test]
    fn one_split_per_dimension_gives_eight_leaves() {
        let cfg = PartitionConfig {
            n_lon_splits: 1,
            n_lat_splits: 1,
            n_time_splits: 1,
            ..Default::default()
        };
        let obs = grid(6, 4);
        let tree = RegionTree::build(&obs, &cfg).unwrap();
        assert_eq!(tree.depth(), 3);
        assert_eq!(tree.leaves().len(), 8);
        assert_eq!(tree.region(0).split.unwrap().dim, 0);
        assert_eq!(tree.region(tree.level(1)[0]).split.unwrap().dim, 1);
        assert_eq!(tree.region(tree.level(2)[0]).split.unwrap().dim, 2);
        for &l in tree.leaves() {
            assert_eq!(tree.region(l).resolution, 3);
        }
    }

    #[test]
    fn degenerate_and_empty_splits() {
        let obs: Vec<_> = (0..4).map(|_| p(5.0, 1.0, 0)).collect();
        let err = RegionTree::build(&obs, &lon_only(1)).unwrap_err();
        assert!(matches!(err, PartitionError::DegenerateSplit { dim: "lon", .. }));

        let obs: Vec<_> = [1.0, 2.0, 2.0, 2.0].iter().map(|&x| p(x, 0.0, 0)).collect();
        let err = RegionTree::build(&obs, &lon_only(1)).unwrap_err();
        assert!(matches!(err, PartitionError::EmptyRegion { .. }));

        // Second level fails inside the right child, and the path says so.
        let obs: Vec<_> = [1.0, 2.0, 3.0, 4.0, 4.0, 4.0].iter().map(|&x| p(x, 0.0, 0)).collect();
        let err = RegionTree::build(&obs, &lon_only(2)).unwrap_err();
        match err {
            PartitionError::DegenerateSplit { path, .. } => assert_eq!(path, "root/R"),
            other => panic!("unexpected {other:?}"),
        }
        assert!(RegionTree::build(&obs[..1], &lon_only(1)).is_err());
    }

    #[test]
    fn level_budgets_grow_geometrically() {
        let cfg = PartitionConfig::default();
        let totals: Vec<usize> = (0..4)
            .map(|r| level_budgets(&cfg, r, 1 << r).iter().sum())
            .collect();
        assert_eq!(totals, vec![20, 40, 80, 160]);
        assert_eq!(level_budgets(&cfg, 1, 3), vec![14, 13, 13]);
        let per = PartitionConfig {
            knot_mode: KnotMode::PerRegion(8),
            ..cfg
        };
        assert_eq!(level_budgets(&per, 5, 4), vec![8; 4]);
    }

    #[test]
    fn thinning_counts() {
        assert_eq!(thinned_count(3, 1.0 / 3.0), 1);
        assert_eq!(thinned_count(10, 0.5), 5);
        assert_eq!(thinned_count(7, 0.5), 4);
        assert_eq!(thinned_count(5, 1.0), 5);
        assert_eq!(thinned_count(0, 0.5), 0);
    }

    #[test]
    fn thinned_finest_knots() {
        let obs = vec![p(1.0, 0.0, 0), p(2.0, 0.0, 0), p(3.0, 0.0, 0), p(10.0, 0.0, 0), p(11.0, 0.0, 0), p(12.0, 0.0, 0)];
        let cfg = PartitionConfig {
            thinning_rate: 1.0 / 3.0,
            ..lon_only(1)
        };
        let mut tree = RegionTree::build(&obs, &cfg).unwrap();
        tree.place_knots(&obs, &[], &cfg, 3).unwrap();
        for &l in tree.leaves() {
            let r = tree.region(l);
            assert_eq!(r.knots.len(), 1);
            assert!(r.obs_idx.iter().any(|&i| obs[i].same_site(&r.knots[0])));
        }
    }

    #[test]
    fn prism_only_when_no_prediction_sites() {
        let bounds = Bounds {
            lo: [73.2, 18.6, 0.0],
            hi: [73.4, 18.8, 2.0],
        };
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let sites = prism_sites(&bounds, 8, 0.8, 0.01, &mut rng);
        assert_eq!(sites.len(), 8);
        for s in &sites {
            for d in 0..3 {
                assert!(s.coord(d) > bounds.lo[d] && s.coord(d) < bounds.hi[d]);
            }
        }
        let keys: HashSet<_> = sites.iter().map(|s| s.key()).collect();
        assert_eq!(keys.len(), 8);

        // Zero time extent: the box collapses to a rectangle, sites stay distinct.
        let flat = Bounds {
            lo: [73.2, 18.6, 1.0],
            hi: [73.4, 18.8, 1.0],
        };
        let sites = prism_sites(&flat, 12, 0.8, 0.01, &mut rng);
        let keys: HashSet<_> = sites.iter().map(|s| s.key()).collect();
        assert_eq!(keys.len(), 12);
        assert!(sites.iter().all(|s| s.time() == 1.0));
    }

    #[test]
    fn coarse_knots_prefer_prediction_sites() {
        let obs = grid(8, 2);
        let cfg = PartitionConfig {
            knot_mode: KnotMode::PerRegion(5),
            ..lon_only(1)
        };
        let mut tree = RegionTree::build(&obs, &cfg).unwrap();
        // Three prediction sites: fewer than the budget, all used at the root.
        let pred = vec![p(73.25, 18.65, 1), p(73.3, 18.7, 0), p(73.35, 18.75, 1)];
        tree.place_knots(&obs, &pred, &cfg, 9).unwrap();
        let root = tree.region(0);
        assert_eq!(root.knots.len(), 5);
        for q in &pred {
            assert!(root.knots.iter().any(|k| k.same_site(q)));
        }

        // Many prediction sites: sampled without replacement.
        let many = grid(5, 2);
        let mut tree = RegionTree::build(&obs, &cfg).unwrap();
        tree.place_knots(&obs, &many, &cfg, 9).unwrap();
        let root = tree.region(0);
        assert!(root.knots.iter().all(|k| many.iter().any(|q| q.same_site(k))));
        let keys: HashSet<_> = root.knots.iter().map(|s| s.key()).collect();
        assert_eq!(keys.len(), 5);
    }

    #[test]
    fn finest_knots_skip_ancestor_knot_sites() {
        let obs = grid(8, 2);
        let cfg = PartitionConfig {
            knot_mode: KnotMode::PerRegion(4),
            ..lon_only(1)
        };
        let mut tree = RegionTree::build(&obs, &cfg).unwrap();
        // Prediction at training sites: the root takes them as knots, so the
        // leaves must not repeat them.
        let pred = obs[..4].to_vec();
        tree.place_knots(&obs, &pred, &cfg, 1).unwrap();
        let root_keys: HashSet<_> = tree.region(0).knots.iter().map(|k| k.key()).collect();
        assert_eq!(root_keys.len(), 4);
        let leaf_total: usize = tree.leaves().iter().map(|&l| tree.region(l).knots.len()).sum();
        assert_eq!(leaf_total, obs.len() - 4);
        for &l in tree.leaves() {
            assert!(tree.region(l).knots.iter().all(|k| !root_keys.contains(&k.key())));
        }
    }

    #[test]
    fn uniform_random_placement_stays_inside() {
        let obs = grid(6, 3);
        let cfg = PartitionConfig {
            n_lon_splits: 1,
            n_lat_splits: 1,
            placement: KnotPlacement::UniformRandom,
            ..Default::default()
        };
        let mut tree = RegionTree::build(&obs, &cfg).unwrap();
        tree.place_knots(&obs, &[], &cfg, 4).unwrap();
        for r in tree.regions() {
            for k in &r.knots {
                assert!(r.bounds.contains(k));
            }
        }
    }

    fn random_points(seed: u64, n: usize) -> Vec<SpatioTemporalPoint> {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        (0..n)
            .map(|_| p(rng.random_range(73.2..73.4), rng.random_range(18.6..18.8), rng.random_range(0..20)))
            .collect()
    }

    proptest! {
        #![proptest_config(ProptestConfig::with_cases(48))]

        #[test]
        fn tree_invariants(seed in 0u64..10_000, n in 40usize..200, rate in 0.2..1.0f64) {
            let obs = random_points(seed, n);
            let pred = random_points(seed + 1, 30);
            let cfg = PartitionConfig {
                n_lon_splits: 1,
                n_lat_splits: 1,
                n_time_splits: 1,
                m0: 6,
                thinning_rate: rate,
                ..Default::default()
            };
            let built = RegionTree::build(&obs, &cfg);
            prop_assume!(built.is_ok());
            let mut tree = built.unwrap();
            tree.place_knots(&obs, &pred, &cfg, seed).unwrap();

            // Children partition their parent.
            for r in tree.regions() {
                if !r.children.is_empty() {
                    let mut union: Vec<usize> = r.children.iter().flat_map(|&c| tree.region(c).obs_idx.clone()).collect();
                    union.sort_unstable();
                    let mut own = r.obs_idx.clone();
                    own.sort_unstable();
                    prop_assert_eq!(union, own);
                }
                for k in &r.knots {
                    prop_assert!(r.bounds.contains(k));
                }
            }
            let total: usize = tree.leaves().iter().map(|&l| tree.region(l).obs_idx.len()).sum();
            prop_assert_eq!(total, n);
            // Every observation is located in the leaf that owns it.
            for &l in tree.leaves() {
                for &i in &tree.region(l).obs_idx {
                    prop_assert_eq!(tree.locate_leaf(&obs[i]), l);
                }
                for k in &tree.region(l).knots {
                    prop_assert!(obs.iter().any(|o| o.same_site(k)));
                }
            }

            // Same seed, same knots, bit for bit.
            let mut again = RegionTree::build(&obs, &cfg).unwrap();
            again.place_knots(&obs, &pred, &cfg, seed).unwrap();
            for (a, b) in tree.regions().iter().zip(again.regions()) {
                let ka: Vec<_> = a.knots.iter().map(|k| k.key()).collect();
                let kb: Vec<_> = b.knots.iter().map(|k| k.key()).collect();
                prop_assert_eq!(ka, kb);
            }
        }
    }
}
