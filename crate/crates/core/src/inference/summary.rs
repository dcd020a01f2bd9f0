//! Weighted marginal summaries with skew-normal credible intervals.

use statrs::function::erf::erfc;

use super::ISResult;
use crate::covariance::HYPER_NAMES;

/// Supremum of the absolute skewness attainable by a skew-normal law; the
/// method-of-moments fit is only used strictly below it.
pub const SKEW_LIMIT: f64 = 0.9952;

pub(crate) const Z975: f64 = 1.959_963_984_540_054;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum CiMethod {
    /// Exact Gaussian interval (the dense baseline).
    Normal,
    SkewNormal,
    EmpiricalQuantile,
    /// The distribution is a point mass; the interval collapses to it.
    Degenerate,
}

impl CiMethod {
    pub fn as_str(&self) -> &'static str {
        match self {
            CiMethod::Normal => "normal",
            CiMethod::SkewNormal => "skew-normal",
            CiMethod::EmpiricalQuantile => "empirical-quantile",
            CiMethod::Degenerate => "degenerate",
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct MarginalSummary {
    pub name: String,
    pub mean: f64,
    pub sd: f64,
    pub skewness: f64,
    pub ci_low: f64,
    pub ci_high: f64,
    pub method: CiMethod,
}

fn std_normal_cdf(z: f64) -> f64 {
    0.5 * erfc(-z / std::f64::consts::SQRT_2)
}

/// Owen's T function, `T(h, a) = (1/2π) ∫₀^{atan a} exp(−h² / (2 cos² θ)) dθ`,
/// by composite Simpson quadrature over the angle.
fn owens_t(h: f64, a: f64) -> f64 {
    const N: usize = 256;
    let upper = a.atan();
    let step = upper / N as f64;
    let f = |t: f64| (-0.5 * h * h / t.cos().powi(2)).exp();
    let mut acc = f(0.0) + f(upper);
    for i in 1..N {
        acc += f(i as f64 * step) * if i % 2 == 1 { 4.0 } else { 2.0 };
    }
    acc * step / 3.0 / (2.0 * std::f64::consts::PI)
}

/// Skew-normal law with location `xi`, scale `omega` and shape `alpha`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SkewNormal {
    pub xi: f64,
    pub omega: f64,
    pub alpha: f64,
}

impl SkewNormal {
    /// Method-of-moments fit; `None` when `|skew| ≥ SKEW_LIMIT` or `sd ≤ 0`.
    pub fn fit(mean: f64, sd: f64, skew: f64) -> Option<Self> {
        if !(sd > 0.0) || !(skew.abs() < SKEW_LIMIT) {
            return None;
        }
        let c = (4.0 - std::f64::consts::PI) / 2.0;
        let g = skew.abs().powf(2.0 / 3.0);
        let u2 = g / (g + c.powf(2.0 / 3.0));
        let delta = skew.signum() * (std::f64::consts::FRAC_PI_2 * u2).sqrt();
        let delta = if skew == 0.0 { 0.0 } else { delta };
        if delta.abs() >= 1.0 {
            return None;
        }
        let alpha = delta / (1.0 - delta * delta).sqrt();
        let b = (2.0 / std::f64::consts::PI).sqrt();
        let omega = sd / (1.0 - b * b * delta * delta).sqrt();
        let xi = mean - omega * delta * b;
        Some(Self { xi, omega, alpha })
    }

    fn delta(&self) -> f64 {
        self.alpha / (1.0 + self.alpha * self.alpha).sqrt()
    }

    /// (mean, sd, skewness) from the closed-form moment expressions.
    pub fn moments(&self) -> (f64, f64, f64) {
        let b = (2.0 / std::f64::consts::PI).sqrt();
        let u = b * self.delta();
        let mean = self.xi + self.omega * u;
        let var = self.omega * self.omega * (1.0 - u * u);
        let skew = (4.0 - std::f64::consts::PI) / 2.0 * u.powi(3) / (1.0 - u * u).powf(1.5);
        (mean, var.sqrt(), skew)
    }

    pub fn cdf(&self, x: f64) -> f64 {
        let z = (x - self.xi) / self.omega;
        if self.alpha == 0.0 {
            return std_normal_cdf(z);
        }
        (std_normal_cdf(z) - 2.0 * owens_t(z, self.alpha)).clamp(0.0, 1.0)
    }

    pub fn quantile(&self, p: f64) -> f64 {
        if self.alpha == 0.0 {
            return self.xi + self.omega * normal_quantile(p);
        }
        bisect_cdf(|x| self.cdf(x), p, self.xi, self.omega)
    }
}

fn normal_quantile(p: f64) -> f64 {
    if (p - 0.975).abs() < 1e-15 {
        return Z975;
    }
    if (p - 0.025).abs() < 1e-15 {
        return -Z975;
    }
    bisect_cdf(std_normal_cdf, p, 0.0, 1.0)
}

/// Invert a continuous CDF by bisection, bracketing outwards from `center`.
fn bisect_cdf(cdf: impl Fn(f64) -> f64, p: f64, center: f64, scale: f64) -> f64 {
    let mut lo = center - scale;
    let mut hi = center + scale;
    let mut width = scale;
    while cdf(lo) > p {
        width *= 2.0;
        lo = center - width;
    }
    width = scale;
    while cdf(hi) < p {
        width *= 2.0;
        hi = center + width;
    }
    for _ in 0..100 {
        let mid = 0.5 * (lo + hi);
        if cdf(mid) < p {
            lo = mid;
        } else {
            hi = mid;
        }
        if hi - lo <= 1e-13 * scale.max(mid.abs()) {
            break;
        }
    }
    0.5 * (lo + hi)
}

/// Weighted quantile of atoms: the smallest value whose cumulative weight
/// reaches `p`.
fn weighted_quantile(values: &[f64], weights: &[f64], p: f64) -> f64 {
    let mut order: Vec<usize> = (0..values.len()).collect();
    order.sort_by(|&a, &b| values[a].total_cmp(&values[b]));
    let mut acc = 0.0;
    for &i in &order {
        acc += weights[i];
        if acc >= p {
            return values[i];
        }
    }
    values[*order.last().expect("nonempty")]
}

fn finish(name: &str, mean: f64, var: f64, third: f64, empirical: impl Fn(f64) -> f64) -> MarginalSummary {
    let sd = var.max(0.0).sqrt();
    let scale = mean.abs().max(1.0);
    if !(sd > 1e-12 * scale) {
        return MarginalSummary {
            name: name.to_string(),
            mean,
            sd: 0.0,
            skewness: 0.0,
            ci_low: mean,
            ci_high: mean,
            method: CiMethod::Degenerate,
        };
    }
    let skewness = third / sd.powi(3);
    let (ci_low, ci_high, method) = match SkewNormal::fit(mean, sd, skewness) {
        Some(sn) => (sn.quantile(0.025), sn.quantile(0.975), CiMethod::SkewNormal),
        None => (empirical(0.025), empirical(0.975), CiMethod::EmpiricalQuantile),
    };
    MarginalSummary {
        name: name.to_string(),
        mean,
        sd,
        skewness,
        ci_low,
        ci_high,
        method,
    }
}

/// Summary of the discrete distribution with atoms `values` and masses
/// `weights` (which sum to one).
pub fn summarize_weighted(name: &str, values: &[f64], weights: &[f64]) -> MarginalSummary {
    let mean: f64 = values.iter().zip(weights).map(|(v, w)| v * w).sum();
    let var: f64 = values.iter().zip(weights).map(|(v, w)| w * (v - mean).powi(2)).sum();
    let third: f64 = values.iter().zip(weights).map(|(v, w)| w * (v - mean).powi(3)).sum();
    finish(name, mean, var, third, |p| weighted_quantile(values, weights, p))
}

/// Summary of the Gaussian mixture `Σ wᵢ N(meansᵢ, varsᵢ)`.
pub fn summarize_mixture(name: &str, means: &[f64], vars: &[f64], weights: &[f64]) -> MarginalSummary {
    let mean: f64 = means.iter().zip(weights).map(|(m, w)| m * w).sum();
    let mut var = 0.0;
    let mut third = 0.0;
    for ((m, v), w) in means.iter().zip(vars).zip(weights) {
        let d = m - mean;
        var += w * (v + d * d);
        third += w * (d.powi(3) + 3.0 * d * v);
    }
    let sd = var.max(0.0).sqrt();
    finish(name, mean, var, third, |p| {
        let cdf = |x: f64| -> f64 {
            means
                .iter()
                .zip(vars)
                .zip(weights)
                .map(|((m, v), w)| {
                    if *v > 0.0 {
                        w * std_normal_cdf((x - m) / v.sqrt())
                    } else if x >= *m {
                        *w
                    } else {
                        0.0
                    }
                })
                .sum()
        };
        bisect_cdf(cdf, p, mean, sd)
    })
}

/// Summaries of the free log hyperparameters (weighted atoms) and of the
/// fixed effects (weighted Gaussian mixtures of the full conditionals).
pub fn marginal_summaries(is: &ISResult, beta_names: &[String]) -> (Vec<MarginalSummary>, Vec<MarginalSummary>) {
    let live: Vec<_> = is.samples.iter().filter(|s| s.weight > 0.0).collect();
    let weights: Vec<f64> = live.iter().map(|s| s.weight).collect();
    let mut hyper = Vec::new();
    for (k, name) in HYPER_NAMES.iter().enumerate() {
        let values: Vec<f64> = live.iter().map(|s| s.psi.as_array()[k]).collect();
        hyper.push(summarize_weighted(name, &values, &weights));
    }
    let p = live.first().map_or(0, |s| s.beta_mean.len());
    let beta = (0..p)
        .map(|j| {
            let means: Vec<f64> = live.iter().map(|s| s.beta_mean[j]).collect();
            let vars: Vec<f64> = live.iter().map(|s| s.beta_var[j]).collect();
            let name = beta_names.get(j).cloned().unwrap_or_else(|| format!("beta{j}"));
            summarize_mixture(&name, &means, &vars, &weights)
        })
        .collect();
    (hyper, beta)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn symmetric_case_is_normal() {
        let s = summarize_mixture("b", &[1.5], &[4.0], &[1.0]);
        assert_eq!(s.method, CiMethod::SkewNormal);
        assert!(s.skewness.abs() < 1e-15);
        assert!((s.ci_low - (1.5 - 1.96 * 2.0)).abs() < 1e-3);
        assert!((s.ci_low - (1.5 - Z975 * 2.0)).abs() < 1e-6);
        assert!((s.ci_high - (1.5 + Z975 * 2.0)).abs() < 1e-6);
    }

    #[test]
    fn moment_roundtrip() {
        for &(m, sd, g) in &[(0.0, 1.0, 0.5), (2.0, 0.3, -0.9), (-1.0, 5.0, 0.1), (0.0, 1.0, 0.9)] {
            let sn = SkewNormal::fit(m, sd, g).unwrap();
            let (m2, sd2, g2) = sn.moments();
            assert!((m - m2).abs() < 1e-6 && (sd - sd2).abs() < 1e-6 && (g - g2).abs() < 1e-6);
        }
        assert!(SkewNormal::fit(0.0, 1.0, 0.9952).is_none());
        assert!(SkewNormal::fit(0.0, 1.0, -1.2).is_none());
    }

    #[test]
    fn skew_normal_cdf_matches_numerical_integration() {
        let sn = SkewNormal {
            xi: 0.5,
            omega: 1.3,
            alpha: 3.0,
        };
        // Density 2/ω φ(z) Φ(αz), integrated by the trapezoid rule.
        let pdf = |x: f64| {
            let z = (x - sn.xi) / sn.omega;
            2.0 / sn.omega * (-0.5 * z * z).exp() / (2.0 * std::f64::consts::PI).sqrt() * std_normal_cdf(sn.alpha * z)
        };
        let (a, b, n) = (-10.0, 1.7, 200_000);
        let h = (b - a) / n as f64;
        let mut acc = 0.5 * (pdf(a) + pdf(b));
        for i in 1..n {
            acc += pdf(a + i as f64 * h);
        }
        assert!((acc * h - sn.cdf(b)).abs() < 1e-8);
        let q = sn.quantile(0.975);
        assert!((sn.cdf(q) - 0.975).abs() < 1e-9);
    }

    #[test]
    fn extreme_skew_uses_empirical_quantiles() {
        // Atoms at 0 (mass 0.9) and 10 (mass 0.1): skewness ≈ 2.67.
        let s = summarize_weighted("x", &[0.0, 10.0], &[0.9, 0.1]);
        assert_eq!(s.method, CiMethod::EmpiricalQuantile);
        assert!(s.skewness > SKEW_LIMIT);
        assert_eq!((s.ci_low, s.ci_high), (0.0, 10.0));

        let s = summarize_mixture("b", &[0.0, 10.0], &[0.01, 0.01], &[0.95, 0.05]);
        assert_eq!(s.method, CiMethod::EmpiricalQuantile);
        assert!(s.ci_low < 0.0 && s.ci_high > 9.0);
    }

    #[test]
    fn identical_atoms_are_degenerate() {
        let s = summarize_weighted("log_rho", &[1.7; 4], &[0.25; 4]);
        assert_eq!(s.method, CiMethod::Degenerate);
        assert_eq!(s.sd, 0.0);
        assert!((s.mean - 1.7).abs() < 1e-15);
    }

    #[test]
    fn mixture_moments_are_closed_form() {
        let means = [0.0, 1.0, 3.0];
        let vars = [1.0, 0.5, 2.0];
        let w = [0.5, 0.3, 0.2];
        let s = summarize_mixture("b", &means, &vars, &w);
        // Raw moments of the mixture.
        let m1: f64 = (0..3).map(|i| w[i] * means[i]).sum();
        let m2: f64 = (0..3).map(|i| w[i] * (vars[i] + means[i] * means[i])).sum();
        let m3: f64 = (0..3).map(|i| w[i] * (means[i].powi(3) + 3.0 * means[i] * vars[i])).sum();
        let var = m2 - m1 * m1;
        let third = m3 - 3.0 * m1 * m2 + 2.0 * m1.powi(3);
        assert!((s.mean - m1).abs() < 1e-14);
        assert!((s.sd - var.sqrt()).abs() < 1e-12);
        assert!((s.skewness - third / var.powf(1.5)).abs() < 1e-12);
        assert!(s.ci_low < s.ci_high);
    }
}
