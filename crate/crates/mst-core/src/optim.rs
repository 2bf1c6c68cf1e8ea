//! Smooth convex minimization for the gradient-based leaf families.
//!
//! Three interchangeable optimizers sit behind one interface: mini-batch SGD
//! with a `c/sqrt(t)` step schedule for very large nodes, damped Newton with a
//! step-halving line search for small ones, and an L-BFGS fallback.  All of
//! them stop when the full-gradient infinity norm drops below the tolerance
//! or the iteration cap is hit; running out of iterations is reported, never
//! hidden.

use crate::rng::Stream;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Optimizer {
    Sgd,
    Newton,
    Lbfgs,
}

impl std::str::FromStr for Optimizer {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s {
            "sgd" => Ok(Optimizer::Sgd),
            "newton" => Ok(Optimizer::Newton),
            "lbfgs" => Ok(Optimizer::Lbfgs),
            other => Err(format!("unknown optimizer {other:?} (expected sgd|newton|lbfgs)")),
        }
    }
}

impl std::fmt::Display for Optimizer {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        match self {
            Optimizer::Sgd => write!(f, "sgd"),
            Optimizer::Newton => write!(f, "newton"),
            Optimizer::Lbfgs => write!(f, "lbfgs"),
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct FitConfig {
    pub optimizer: Optimizer,
    pub max_iterations: usize,
    pub gradient_tolerance: f64,
    /// Coefficient of the `l2/2 * |x|^2` penalty added to the training
    /// objective.  Reported losses exclude it.
    pub l2_ridge: f64,
    pub sgd_batch_size: usize,
    /// `c` in the SGD step schedule `c / sqrt(t)`.
    pub sgd_step_scale: f64,
}

impl Default for FitConfig {
    fn default() -> Self {
        FitConfig {
            optimizer: Optimizer::Newton,
            max_iterations: 200,
            gradient_tolerance: 1e-8,
            l2_ridge: 1e-6,
            sgd_batch_size: 256,
            sgd_step_scale: 0.5,
        }
    }
}

impl FitConfig {
    pub fn validate(&self) -> crate::error::Result<()> {
        use crate::error::Error;
        if self.max_iterations == 0 {
            return Err(Error::Config("max_iterations must be positive".into()));
        }
        if !(self.gradient_tolerance > 0.0) {
            return Err(Error::Config("gradient_tolerance must be positive".into()));
        }
        if !(self.l2_ridge >= 0.0) {
            return Err(Error::Config("l2_ridge must be nonnegative".into()));
        }
        if self.sgd_batch_size == 0 {
            return Err(Error::Config("sgd_batch_size must be positive".into()));
        }
        if !(self.sgd_step_scale > 0.0) {
            return Err(Error::Config("sgd_step_scale must be positive".into()));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct FitReport {
    pub converged: bool,
    /// Gradient evaluations performed (full or mini-batch).
    pub iterations: u64,
    pub final_grad_norm: f64,
    /// Final penalized objective value.
    pub final_value: f64,
}

/// A smooth objective of the form `sum_i f_i(x) + l2/2 * |x|^2`.
pub trait Objective: Sync {
    fn dim(&self) -> usize;
    fn term_count(&self) -> usize;
    fn value(&self, x: &[f64]) -> f64;
    fn value_grad(&self, x: &[f64], grad: &mut [f64]) -> f64;
    /// Unbiased estimate of the gradient of the *mean* objective from the
    /// given terms.
    fn batch_grad(&self, x: &[f64], terms: &[usize], grad: &mut [f64]);
    /// Dense Hessian, row-major `dim*dim`.
    fn hessian(&self, x: &[f64], hess: &mut [f64]);
}

pub fn inf_norm(v: &[f64]) -> f64 {
    v.iter().fold(0.0, |m, x| m.max(x.abs()))
}

/// Minimizes `obj` starting from `warm` (zeros when absent).  `sgd_stream`
/// drives mini-batch sampling and is untouched by the exact optimizers.
pub fn minimize(
    obj: &dyn Objective,
    warm: Option<&[f64]>,
    cfg: &FitConfig,
    sgd_stream: &mut Stream,
) -> (Vec<f64>, FitReport) {
    let dim = obj.dim();
    let mut x = match warm {
        Some(w) => {
            assert_eq!(w.len(), dim, "warm start dimension mismatch");
            w.to_vec()
        }
        None => vec![0.0; dim],
    };
    let report = match cfg.optimizer {
        Optimizer::Newton => newton(obj, &mut x, cfg),
        Optimizer::Lbfgs => lbfgs(obj, &mut x, cfg),
        Optimizer::Sgd => sgd(obj, &mut x, cfg, sgd_stream),
    };
    (x, report)
}

fn newton(obj: &dyn Objective, x: &mut [f64], cfg: &FitConfig) -> FitReport {
    let dim = obj.dim();
    let mut grad = vec![0.0; dim];
    let mut hess = vec![0.0; dim * dim];
    let mut iterations = 0u64;
    let mut value = obj.value_grad(x, &mut grad);
    loop {
        let gnorm = inf_norm(&grad);
        if gnorm <= cfg.gradient_tolerance {
            return FitReport { converged: true, iterations, final_grad_norm: gnorm, final_value: value };
        }
        if iterations as usize >= cfg.max_iterations {
            return FitReport { converged: false, iterations, final_grad_norm: gnorm, final_value: value };
        }
        obj.hessian(x, &mut hess);
        let mut dir = match solve_direction(&hess, &grad, dim) {
            Some(d) => d,
            None => grad.iter().map(|g| -g).collect(),
        };
        let mut slope: f64 = dir.iter().zip(&grad).map(|(d, g)| d * g).sum();
        if slope >= 0.0 {
            // Not a descent direction (numerical breakdown); fall back to steepest descent.
            for (d, g) in dir.iter_mut().zip(&grad) {
                *d = -g;
            }
            slope = -grad.iter().map(|g| g * g).sum::<f64>();
        }
        let mut step = 1.0;
        let mut accepted = false;
        for _ in 0..60 {
            let trial: Vec<f64> = x.iter().zip(&dir).map(|(xi, di)| xi + step * di).collect();
            let trial_value = obj.value(&trial);
            if trial_value < value + 1e-4 * step * slope || trial_value < value {
                x.copy_from_slice(&trial);
                value = trial_value;
                accepted = true;
                break;
            }
            step *= 0.5;
        }
        iterations += 1;
        if !accepted {
            // Line search stalled: no step improves the objective.
            let gnorm = inf_norm(&grad);
            return FitReport {
                converged: gnorm <= cfg.gradient_tolerance,
                iterations,
                final_grad_norm: gnorm,
                final_value: value,
            };
        }
        value = obj.value_grad(x, &mut grad);
    }
}

/// Solves `H d = -g` by Cholesky, escalating diagonal damping on failure.
fn solve_direction(hess: &[f64], grad: &[f64], dim: usize) -> Option<Vec<f64>> {
    let avg_diag = (0..dim).map(|i| hess[i * dim + i].abs()).sum::<f64>() / dim.max(1) as f64;
    let mut damp = 0.0;
    for _ in 0..12 {
        let mut a = hess.to_vec();
        for i in 0..dim {
            a[i * dim + i] += damp;
        }
        if let Some(chol) = cholesky(&mut a, dim) {
            let mut rhs: Vec<f64> = grad.iter().map(|g| -g).collect();
            cholesky_solve(&chol, &mut rhs, dim);
            return Some(rhs);
        }
        damp = if damp == 0.0 { 1e-10 * (1.0 + avg_diag) } else { damp * 100.0 };
    }
    None
}

/// In-place lower Cholesky factorization; returns None when not positive
/// definite.
fn cholesky(a: &mut [f64], dim: usize) -> Option<&[f64]> {
    for j in 0..dim {
        let mut d = a[j * dim + j];
        for k in 0..j {
            d -= a[j * dim + k] * a[j * dim + k];
        }
        if d <= 0.0 || !d.is_finite() {
            return None;
        }
        let d = d.sqrt();
        a[j * dim + j] = d;
        for i in (j + 1)..dim {
            let mut s = a[i * dim + j];
            for k in 0..j {
                s -= a[i * dim + k] * a[j * dim + k];
            }
            a[i * dim + j] = s / d;
        }
    }
    Some(a)
}

/// Solves `L L^T x = b` in place given the lower factor.
fn cholesky_solve(l: &[f64], b: &mut [f64], dim: usize) {
    for i in 0..dim {
        let mut s = b[i];
        for k in 0..i {
            s -= l[i * dim + k] * b[k];
        }
        b[i] = s / l[i * dim + i];
    }
    for i in (0..dim).rev() {
        let mut s = b[i];
        for k in (i + 1)..dim {
            s -= l[k * dim + i] * b[k];
        }
        b[i] = s / l[i * dim + i];
    }
}

fn lbfgs(obj: &dyn Objective, x: &mut [f64], cfg: &FitConfig) -> FitReport {
    const HISTORY: usize = 10;
    let dim = obj.dim();
    let mut grad = vec![0.0; dim];
    let mut value = obj.value_grad(x, &mut grad);
    let mut iterations = 0u64;
    let mut s_hist: Vec<Vec<f64>> = Vec::new();
    let mut y_hist: Vec<Vec<f64>> = Vec::new();
    let mut rho: Vec<f64> = Vec::new();
    loop {
        let gnorm = inf_norm(&grad);
        if gnorm <= cfg.gradient_tolerance {
            return FitReport { converged: true, iterations, final_grad_norm: gnorm, final_value: value };
        }
        if iterations as usize >= cfg.max_iterations {
            return FitReport { converged: false, iterations, final_grad_norm: gnorm, final_value: value };
        }
        // Two-loop recursion.
        let mut dir: Vec<f64> = grad.iter().map(|g| -g).collect();
        let mut alpha = vec![0.0; s_hist.len()];
        for i in (0..s_hist.len()).rev() {
            let a = rho[i] * dot(&s_hist[i], &dir);
            alpha[i] = a;
            axpy(&mut dir, -a, &y_hist[i]);
        }
        if let (Some(s), Some(y)) = (s_hist.last(), y_hist.last()) {
            let yy = dot(y, y);
            if yy > 0.0 {
                let gamma = dot(s, y) / yy;
                dir.iter_mut().for_each(|d| *d *= gamma);
            }
        }
        for i in 0..s_hist.len() {
            let b = rho[i] * dot(&y_hist[i], &dir);
            axpy(&mut dir, alpha[i] - b, &s_hist[i]);
        }
        let mut slope = dot(&dir, &grad);
        if slope >= 0.0 {
            dir = grad.iter().map(|g| -g).collect();
            slope = -dot(&grad, &grad);
        }
        let mut step = 1.0;
        let mut accepted = false;
        for _ in 0..50 {
            let trial: Vec<f64> = x.iter().zip(&dir).map(|(xi, di)| xi + step * di).collect();
            let tv = obj.value(&trial);
            if tv <= value + 1e-4 * step * slope {
                let mut new_grad = vec![0.0; dim];
                let nv = obj.value_grad(&trial, &mut new_grad);
                let s: Vec<f64> = trial.iter().zip(x.iter()).map(|(a, b)| a - b).collect();
                let y: Vec<f64> = new_grad.iter().zip(&grad).map(|(a, b)| a - b).collect();
                let sy = dot(&s, &y);
                if sy > 1e-12 {
                    if s_hist.len() == HISTORY {
                        s_hist.remove(0);
                        y_hist.remove(0);
                        rho.remove(0);
                    }
                    rho.push(1.0 / sy);
                    s_hist.push(s);
                    y_hist.push(y);
                }
                x.copy_from_slice(&trial);
                grad = new_grad;
                value = nv;
                accepted = true;
                break;
            }
            step *= 0.5;
        }
        iterations += 1;
        if !accepted {
            let gnorm = inf_norm(&grad);
            return FitReport {
                converged: gnorm <= cfg.gradient_tolerance,
                iterations,
                final_grad_norm: gnorm,
                final_value: value,
            };
        }
    }
}

fn sgd(obj: &dyn Objective, x: &mut [f64], cfg: &FitConfig, stream: &mut Stream) -> FitReport {
    let dim = obj.dim();
    let n = obj.term_count().max(1);
    let batch = cfg.sgd_batch_size.max(1).min(n);
    let check_every = (n / batch).max(1);
    let mut grad = vec![0.0; dim];
    let mut terms = vec![0usize; batch];
    let mut iterations = 0u64;
    let mut t = 0u64;
    loop {
        // Full-gradient convergence check once per epoch-equivalent.
        let mut full = vec![0.0; dim];
        let value = obj.value_grad(x, &mut full);
        let gnorm = inf_norm(&full);
        if gnorm <= cfg.gradient_tolerance {
            return FitReport { converged: true, iterations, final_grad_norm: gnorm, final_value: value };
        }
        if iterations as usize >= cfg.max_iterations {
            return FitReport { converged: false, iterations, final_grad_norm: gnorm, final_value: value };
        }
        for _ in 0..check_every {
            if iterations as usize >= cfg.max_iterations {
                break;
            }
            t += 1;
            for slot in terms.iter_mut() {
                *slot = stream.below(n as u64) as usize;
            }
            obj.batch_grad(x, &terms, &mut grad);
            let step = cfg.sgd_step_scale / (t as f64).sqrt();
            axpy(x, -step, &grad);
            iterations += 1;
        }
    }
}

#[inline]
fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

#[inline]
fn axpy(x: &mut [f64], a: f64, y: &[f64]) {
    for (xi, yi) in x.iter_mut().zip(y) {
        *xi += a * yi;
    }
}
