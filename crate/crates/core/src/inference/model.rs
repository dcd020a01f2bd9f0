use std::sync::{Arc, OnceLock};

use nalgebra::DMatrix;

use super::{InferenceError, LogDensity};
use crate::covariance::{log_hyper_prior, HyperParams, PriorSpec, LN_2PI};
use crate::geo::SpatioTemporalPoint;
use crate::mra::{
    assemble_h, build_full_conditional_with, build_gamma_and_bases, log_prior_coefficients, BasisSystem,
    FullConditional, GammaBlocks, QStructure,
};
use crate::partition::RegionTree;
use crate::sparse::{analyze, NumericFactor, SparseMatrix, SymbolicFactor};

/// Observations, design, partition and priors: everything needed to evaluate
/// the hyperparameter posterior.
///
/// The sparsity structure of the full conditional and its symbolic
/// factorization are computed on the first evaluation and shared by all
/// later ones, whatever the hyperparameters.
#[derive(Debug)]
pub struct Model {
    tree: Arc<RegionTree>,
    points: Vec<SpatioTemporalPoint>,
    x: DMatrix<f64>,
    y: Vec<f64>,
    priors: PriorSpec,
    structure: OnceLock<Arc<QStructure>>,
    symbolic: OnceLock<Arc<SymbolicFactor>>,
}

/// One posterior evaluation with the intermediate products it produced.
#[derive(Debug, Clone)]
pub struct Evaluation {
    pub psi: HyperParams,
    pub gamma: GammaBlocks,
    pub basis: BasisSystem,
    pub h: SparseMatrix,
    pub fc: FullConditional,
    pub log_posterior: f64,
}

/// What prediction needs from one evaluation.
#[derive(Debug, Clone)]
pub struct PredictState {
    pub psi: HyperParams,
    pub basis: BasisSystem,
    pub mean: Vec<f64>,
    pub factor: NumericFactor,
    pub p: usize,
}

impl From<Evaluation> for PredictState {
    fn from(e: Evaluation) -> Self {
        Self {
            psi: e.psi,
            basis: e.basis,
            p: e.fc.p,
            mean: e.fc.mean,
            factor: e.fc.factor,
        }
    }
}

impl Model {
    pub fn new(
        tree: Arc<RegionTree>,
        points: Vec<SpatioTemporalPoint>,
        x: DMatrix<f64>,
        y: Vec<f64>,
        priors: PriorSpec,
    ) -> Result<Self, InferenceError> {
        let n = points.len();
        if y.len() != n {
            return Err(InferenceError::Dimension {
                what: "response length",
                expected: n,
                got: y.len(),
            });
        }
        if x.nrows() != n {
            return Err(InferenceError::Dimension {
                what: "covariate rows",
                expected: n,
                got: x.nrows(),
            });
        }
        if tree.n_obs() != n {
            return Err(InferenceError::Dimension {
                what: "observations in the partition",
                expected: n,
                got: tree.n_obs(),
            });
        }
        if y.iter().chain(x.iter()).any(|v| !v.is_finite()) {
            return Err(InferenceError::InvalidArgument("responses and covariates must be finite".into()));
        }
        priors.validate()?;
        Ok(Self {
            tree,
            points,
            x,
            y,
            priors,
            structure: OnceLock::new(),
            symbolic: OnceLock::new(),
        })
    }

    pub fn tree(&self) -> &Arc<RegionTree> {
        &self.tree
    }

    pub fn points(&self) -> &[SpatioTemporalPoint] {
        &self.points
    }

    pub fn x(&self) -> &DMatrix<f64> {
        &self.x
    }

    pub fn y(&self) -> &[f64] {
        &self.y
    }

    pub fn priors(&self) -> &PriorSpec {
        &self.priors
    }

    /// Number of covariate columns.
    pub fn p(&self) -> usize {
        self.x.ncols()
    }

    /// Lower-triangle nonzeros of the full conditional precision, once known.
    pub fn q_nnz(&self) -> Option<usize> {
        self.structure.get().map(|s| s.pattern().nnz())
    }

    pub fn q_structure(&self) -> Option<&Arc<QStructure>> {
        self.structure.get()
    }

    /// The shared symbolic factorization, once computed.
    pub fn symbolic(&self) -> Option<&Arc<SymbolicFactor>> {
        self.symbolic.get()
    }

    /// Build the basis, the full conditional and the log posterior at `psi`.
    pub fn evaluate(&self, psi: &HyperParams) -> Result<Evaluation, InferenceError> {
        let (gamma, basis) = build_gamma_and_bases(&self.tree, psi)?;
        let h = assemble_h(&basis, &self.x, &self.points)?;
        let structure = match self.structure.get() {
            Some(s) => s,
            None => {
                let s = Arc::new(QStructure::new(&h, &gamma)?);
                self.structure.get_or_init(|| s)
            }
        };
        let symbolic = match self.symbolic.get() {
            Some(s) => s,
            None => {
                let s = Arc::new(analyze(structure.pattern()).map_err(crate::mra::MraError::from)?);
                self.symbolic.get_or_init(|| s)
            }
        };
        let fc = build_full_conditional_with(
            structure,
            &h,
            &gamma,
            &self.y,
            psi,
            self.priors.beta_prior_var,
            Some(symbolic),
        )?;
        let mut eval = Evaluation {
            psi: *psi,
            gamma,
            basis,
            h,
            fc,
            log_posterior: f64::NAN,
        };
        eval.log_posterior = self.log_posterior_at(&eval, &eval.fc.mean)?;
        Ok(eval)
    }

    /// `log p(Ψ) + log p(v|Ψ) + log p(y|v,Ψ) − log p(v|Ψ,y)` at an arbitrary
    /// `v`. The value does not depend on `v` up to rounding.
    pub fn log_posterior_at(&self, eval: &Evaluation, v: &[f64]) -> Result<f64, InferenceError> {
        let fc = &eval.fc;
        let n_v = fc.mean.len();
        if v.len() != n_v {
            return Err(InferenceError::Dimension {
                what: "coefficient vector",
                expected: n_v,
                got: v.len(),
            });
        }
        let psi = &eval.psi;
        let n = self.y.len() as f64;
        let zeta = psi.zeta();

        let hv = eval.h.mul_vec(v).map_err(crate::mra::MraError::from)?;
        let rss: f64 = self.y.iter().zip(&hv).map(|(y, f)| (y - f).powi(2)).sum();
        let log_lik = -0.5 * n * LN_2PI - n * zeta.ln() - 0.5 * rss / (zeta * zeta);

        let log_prior = log_prior_coefficients(v, fc.p, &eval.gamma, self.priors.beta_prior_var);

        let d: Vec<f64> = v.iter().zip(&fc.mean).map(|(a, b)| a - b).collect();
        let qd = fc.q.mul_vec(&d).map_err(crate::mra::MraError::from)?;
        let quad: f64 = d.iter().zip(&qd).map(|(a, b)| a * b).sum();
        let log_cond = -0.5 * n_v as f64 * LN_2PI + 0.5 * fc.logdet_q - 0.5 * quad;

        Ok(log_hyper_prior(psi, &self.priors) + log_prior + log_lik - log_cond)
    }

    /// The log posterior, or `-inf` (with a warning) when it cannot be
    /// evaluated.
    pub fn log_unnormalized_posterior(&self, psi: &HyperParams) -> f64 {
        match self.evaluate(psi) {
            Ok(e) if e.log_posterior.is_finite() => e.log_posterior,
            Ok(e) => {
                log::warn!("non-finite log posterior {} at {psi:?}", e.log_posterior);
                f64::NEG_INFINITY
            }
            Err(err) => {
                log::warn!("log posterior evaluation failed at {psi:?}: {err}");
                f64::NEG_INFINITY
            }
        }
    }

    /// Hyperparameters for a point of the free (sampled) space.
    pub fn psi_from_free(&self, free: &[f64]) -> Result<HyperParams, InferenceError> {
        Ok(self.priors.from_free(free)?)
    }
}

impl LogDensity for Model {
    fn dim(&self) -> usize {
        self.priors.n_free()
    }

    fn log_density(&self, x: &[f64]) -> f64 {
        match self.priors.from_free(x) {
            Ok(psi) => self.log_unnormalized_posterior(&psi),
            Err(_) => f64::NEG_INFINITY,
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::oracle::DenseGP;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn pt(lon: f64, lat: f64, t: u32) -> SpatioTemporalPoint {
        SpatioTemporalPoint::new(lon, lat, t).unwrap()
    }

    fn full_knot_model(n: usize, seed: u64, priors: PriorSpec) -> (Model, DenseGP, HyperParams) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let pts: Vec<_> = (0..n)
            .map(|_| pt(73.2 + 0.3 * rng.random::<f64>(), 18.6 + 0.3 * rng.random::<f64>(), rng.random_range(0..5)))
            .collect();
        let x = DMatrix::from_fn(n, 2, |i, j| if j == 0 { 1.0 } else { pts[i].lon() - 73.35 });
        let psi = HyperParams::from_natural(2.0, 8.0, 2.5, 0.5).unwrap();
        let gp = DenseGP::new(pts.clone(), x.clone(), &psi).unwrap();
        let y = gp.simulate(&[3.0, 1.0], seed).unwrap();
        let tree = Arc::new(RegionTree::root_only(&pts, pts.clone()).unwrap());
        (Model::new(tree, pts, x, y, priors).unwrap(), gp, psi)
    }

    #[test]
    fn single_observation_matches_scalar_marginal() {
        let p0 = pt(73.3, 18.7, 0);
        let tree = Arc::new(RegionTree::root_only(&[p0], vec![p0]).unwrap());
        let priors = PriorSpec {
            fixed_log_zeta: None,
            ..PriorSpec::default()
        };
        let y = 0.8;
        let model = Model::new(tree, vec![p0], DMatrix::zeros(1, 0), vec![y], priors.clone()).unwrap();
        let psi = HyperParams::from_natural(1.0, 5.0, 2.0, 1.0).unwrap();
        let s2 = 1.0 + crate::covariance::NUGGET + 1.0;
        let oracle = -0.5 * (2.0 * std::f64::consts::PI * s2).ln() - 0.5 * y * y / s2 + log_hyper_prior(&psi, &priors);
        assert!((model.log_unnormalized_posterior(&psi) - oracle).abs() < 1e-10);
    }

    #[test]
    fn prior_shift_is_additive() {
        let (model, _, psi) = full_knot_model(15, 1, PriorSpec::default());
        let shifted = PriorSpec {
            hyper_prior_sd: [2.0, 2.0, 2.0, 2.0],
            hyper_prior_mean: [0.3, 0.0, 0.0, 0.0],
            ..PriorSpec::default()
        };
        let (model2, _, _) = full_knot_model(15, 1, shifted.clone());
        let delta = log_hyper_prior(&psi, &shifted) - log_hyper_prior(&psi, model.priors());
        let a = model.log_unnormalized_posterior(&psi);
        let b = model2.log_unnormalized_posterior(&psi);
        assert!((b - a - delta).abs() < 1e-10);
    }

    #[test]
    fn full_knot_posterior_matches_dense_evidence() {
        let priors = PriorSpec::default();
        let (model, gp, psi) = full_knot_model(60, 2, priors.clone());
        let lp = model.log_unnormalized_posterior(&psi) - log_hyper_prior(&psi, &priors);
        let ev = gp.dense_evidence(model.y(), &priors).unwrap();
        assert!((lp - ev).abs() < 1e-6, "{lp} vs {ev}");
    }

    #[test]
    fn value_does_not_depend_on_the_evaluation_point() {
        let (model, _, psi) = full_knot_model(30, 3, PriorSpec::default());
        let eval = model.evaluate(&psi).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        let v: Vec<f64> = eval.fc.mean.iter().map(|m| m + 0.1 * (rng.random::<f64>() - 0.5)).collect();
        let other = model.log_posterior_at(&eval, &v).unwrap();
        assert!((other - eval.log_posterior).abs() < 1e-8, "{other} vs {}", eval.log_posterior);
    }

    #[test]
    fn structure_is_shared_across_evaluations() {
        let (model, _, psi) = full_knot_model(20, 4, PriorSpec::default());
        assert!(model.q_nnz().is_none());
        model.evaluate(&psi).unwrap();
        let sym = Arc::clone(model.symbolic().unwrap());
        model.evaluate(&HyperParams::new(0.1, 1.0, 0.2, -1.0).unwrap()).unwrap();
        assert!(Arc::ptr_eq(&sym, model.symbolic().unwrap()));
        assert_eq!(model.q_nnz(), Some(22 * 23 / 2));
    }

    #[test]
    fn rejects_inconsistent_inputs() {
        let p0 = pt(73.3, 18.7, 0);
        let tree = Arc::new(RegionTree::root_only(&[p0], vec![p0]).unwrap());
        let err = Model::new(tree.clone(), vec![p0], DMatrix::zeros(1, 0), vec![1.0, 2.0], PriorSpec::default());
        assert!(matches!(err, Err(InferenceError::Dimension { .. })));
        let err = Model::new(tree, vec![p0], DMatrix::zeros(1, 0), vec![f64::NAN], PriorSpec::default());
        assert!(matches!(err, Err(InferenceError::InvalidArgument(_))));
    }
}
