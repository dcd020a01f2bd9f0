//! Limited-memory BFGS ascent with finite-difference gradients.

use std::collections::VecDeque;

use rayon::prelude::*;

use super::{InferenceError, LogDensity};

#[derive(Debug, Clone, PartialEq)]
pub struct OptimOptions {
    pub max_iter: usize,
    /// Central-difference step for the gradient.
    pub grad_step: f64,
    /// Number of curvature pairs kept.
    pub memory: usize,
    /// Stop once the gradient's infinity norm falls below this.
    pub grad_tol: f64,
    /// Largest step (Euclidean norm) taken in one iteration.
    pub max_step: f64,
}

impl Default for OptimOptions {
    fn default() -> Self {
        Self {
            max_iter: 25,
            grad_step: 1e-4,
            memory: 6,
            grad_tol: 1e-7,
            max_step: 2.0,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct ModeResult {
    pub x: Vec<f64>,
    pub value: f64,
    pub iterations: usize,
    pub evaluations: usize,
    pub grad_norm: f64,
}

/// Central-difference gradient; falls back to a one-sided difference when
/// one side cannot be evaluated, and to zero when neither can.
pub(crate) fn fd_gradient(target: &dyn LogDensity, x: &[f64], fx: f64, h: f64) -> Vec<f64> {
    let d = x.len();
    let vals: Vec<f64> = (0..2 * d)
        .into_par_iter()
        .map(|k| {
            let mut xk = x.to_vec();
            xk[k / 2] += if k % 2 == 0 { h } else { -h };
            target.log_density(&xk)
        })
        .collect();
    (0..d)
        .map(|i| {
            let (fp, fm) = (vals[2 * i], vals[2 * i + 1]);
            match (fp.is_finite(), fm.is_finite()) {
                (true, true) => (fp - fm) / (2.0 * h),
                (true, false) => (fp - fx) / h,
                (false, true) => (fx - fm) / h,
                (false, false) => 0.0,
            }
        })
        .collect()
}

fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

fn norm(a: &[f64]) -> f64 {
    dot(a, a).sqrt()
}

/// Maximize `target` from `start`. Returns the best point visited.
pub fn find_mode(target: &dyn LogDensity, start: &[f64], opts: &OptimOptions) -> Result<ModeResult, InferenceError> {
    if start.len() != target.dim() {
        return Err(InferenceError::Dimension {
            what: "start point",
            expected: target.dim(),
            got: start.len(),
        });
    }
    let d = start.len();
    let mut x = start.to_vec();
    let mut fx = target.log_density(&x);
    let mut evaluations = 1;
    if !fx.is_finite() {
        return Err(InferenceError::AllEvaluationsFailed);
    }
    let mut g = fd_gradient(target, &x, fx, opts.grad_step);
    evaluations += 2 * d;
    // Curvature pairs for the minimization of -f.
    let mut history: VecDeque<(Vec<f64>, Vec<f64>, f64)> = VecDeque::new();
    let mut iterations = 0;

    while iterations < opts.max_iter {
        let inf_norm = g.iter().fold(0.0f64, |a, v| a.max(v.abs()));
        if inf_norm < opts.grad_tol {
            break;
        }
        iterations += 1;

        // Two-loop recursion on the descent gradient -g.
        let mut q: Vec<f64> = g.iter().map(|v| -v).collect();
        let mut alphas = Vec::with_capacity(history.len());
        for (s, y, rho) in history.iter().rev() {
            let a = rho * dot(s, &q);
            for (qi, yi) in q.iter_mut().zip(y) {
                *qi -= a * yi;
            }
            alphas.push(a);
        }
        let gamma = match history.back() {
            Some((s, y, _)) => dot(s, y) / dot(y, y),
            None => 1.0 / norm(&g).max(1.0),
        };
        for v in q.iter_mut() {
            *v *= gamma;
        }
        for ((s, y, rho), a) in history.iter().zip(alphas.into_iter().rev()) {
            let b = rho * dot(y, &q);
            for (qi, si) in q.iter_mut().zip(s) {
                *qi += (a - b) * si;
            }
        }
        // Ascent direction for f.
        let mut dir: Vec<f64> = q.iter().map(|v| -v).collect();
        let mut slope = dot(&g, &dir);
        if !(slope > 0.0) {
            history.clear();
            dir = g.clone();
            slope = dot(&g, &dir);
        }
        let len = norm(&dir);
        if len > opts.max_step {
            let s = opts.max_step / len;
            for v in dir.iter_mut() {
                *v *= s;
            }
            slope *= s;
        }

        let mut step = 1.0;
        let mut accepted = None;
        for _ in 0..40 {
            let xn: Vec<f64> = x.iter().zip(&dir).map(|(a, b)| a + step * b).collect();
            let fnew = target.log_density(&xn);
            evaluations += 1;
            if fnew.is_finite() && fnew >= fx + 1e-4 * step * slope {
                accepted = Some((xn, fnew));
                break;
            }
            step *= 0.5;
        }
        let Some((xn, fnew)) = accepted else {
            break;
        };
        let gn = fd_gradient(target, &xn, fnew, opts.grad_step);
        evaluations += 2 * d;
        let s: Vec<f64> = xn.iter().zip(&x).map(|(a, b)| a - b).collect();
        let y: Vec<f64> = g.iter().zip(&gn).map(|(old, new)| old - new).collect();
        let sy = dot(&s, &y);
        if sy > 1e-12 * norm(&s) * norm(&y) {
            if history.len() == opts.memory {
                history.pop_front();
            }
            history.push_back((s.clone(), y, 1.0 / sy));
        }
        x = xn;
        fx = fnew;
        g = gn;
        if norm(&s) < 1e-12 {
            break;
        }
    }
    Ok(ModeResult {
        grad_norm: norm(&g),
        x,
        value: fx,
        iterations,
        evaluations,
    })
}
