//! Multinomial logit over offered assortments.
//!
//! Utilities are linear in the option features with no implicit intercept;
//! the no-purchase outcome is index 0 and has utility zero.  The shared
//! variant uses one coefficient vector for every option; the option-specific
//! variant keeps one row of coefficients per option position, sized by the
//! largest assortment in the training dataset.

use serde::{Deserialize, Serialize};

use crate::data::{Dataset, Decision, Response};
use crate::error::{Error, Result};
use crate::optim::{minimize, FitConfig, FitReport, Objective};
use crate::rng::Stream;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MnlShared {
    pub beta: Vec<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MnlOptionSpecific {
    /// `beta[h]` applies to the option at position `h + 1`.
    pub beta: Vec<Vec<f64>>,
}

/// Probabilities over `{0 = no purchase, 1..=H}` for utilities `u`, computed
/// with the usual max-shift so huge utilities cannot overflow.
fn probs_from_utilities(u: &[f64]) -> Vec<f64> {
    let mut m = 0.0f64; // include the no-purchase utility
    for &ui in u {
        m = m.max(ui);
    }
    let mut probs = Vec::with_capacity(u.len() + 1);
    probs.push((-m).exp());
    let mut denom = probs[0];
    for &ui in u {
        let e = (ui - m).exp();
        probs.push(e);
        denom += e;
    }
    for p in probs.iter_mut() {
        *p /= denom;
    }
    probs
}

impl MnlShared {
    pub fn choice_probs(&self, options: &[Vec<f64>]) -> Result<Vec<f64>> {
        let mut u = Vec::with_capacity(options.len());
        for o in options {
            if o.len() != self.beta.len() {
                return Err(Error::DimensionMismatch(format!(
                    "option has {} features, model expects {}",
                    o.len(),
                    self.beta.len()
                )));
            }
            u.push(dot(&self.beta, o));
        }
        Ok(probs_from_utilities(&u))
    }
}

impl MnlOptionSpecific {
    pub fn choice_probs(&self, options: &[Vec<f64>]) -> Result<Vec<f64>> {
        if options.len() > self.beta.len() {
            return Err(Error::DimensionMismatch(format!(
                "assortment has {} options, model has parameters for {}",
                options.len(),
                self.beta.len()
            )));
        }
        let mut u = Vec::with_capacity(options.len());
        for (o, beta) in options.iter().zip(&self.beta) {
            if o.len() != beta.len() {
                return Err(Error::DimensionMismatch(format!(
                    "option has {} features, model expects {}",
                    o.len(),
                    beta.len()
                )));
            }
            u.push(dot(beta, o));
        }
        Ok(probs_from_utilities(&u))
    }
}

#[inline]
fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

/// Negative log-likelihood objective over a row subset, plus an l2 ridge.
/// `positions` is 1 for the shared variant and `H_max` for option-specific;
/// the flattened parameter vector is `positions * option_dim` long, position
/// `h` occupying the h-th block.
struct MnlObjective<'a> {
    data: &'a Dataset,
    rows: &'a [usize],
    option_dim: usize,
    positions: usize,
    l2: f64,
}

impl MnlObjective<'_> {
    #[inline]
    fn block<'x>(&self, x: &'x [f64], position: usize) -> &'x [f64] {
        let h = if self.positions == 1 { 0 } else { position };
        &x[h * self.option_dim..(h + 1) * self.option_dim]
    }

    /// Per-row NLL and, when `grad` is given, gradient accumulation.
    fn row_term(&self, x: &[f64], row: usize, mut grad: Option<&mut [f64]>) -> f64 {
        let (options, y) = match (self.data.decision(row), self.data.response(row)) {
            (Decision::Assortment(o), Response::Choice(y)) => (o, y as usize),
            _ => unreachable!("choice objective over non-choice rows"),
        };
        let mut u = Vec::with_capacity(options.len());
        for (h, o) in options.iter().enumerate() {
            u.push(dot(self.block(x, h), o));
        }
        let probs = probs_from_utilities(&u);
        if let Some(grad) = grad.as_deref_mut() {
            for (h, o) in options.iter().enumerate() {
                let mut w = probs[h + 1];
                if y == h + 1 {
                    w -= 1.0;
                }
                let base = if self.positions == 1 { 0 } else { h * self.option_dim };
                for (j, &oj) in o.iter().enumerate() {
                    grad[base + j] += w * oj;
                }
            }
        }
        -probs[y].max(f64::MIN_POSITIVE).ln()
    }
}

/// The optimizer sees the objective scaled by `1/n`: the minimizer is
/// unchanged but values, gradients, and the convergence tolerance stay
/// O(1) regardless of node size.
impl Objective for MnlObjective<'_> {
    fn dim(&self) -> usize {
        self.positions * self.option_dim
    }

    fn term_count(&self) -> usize {
        self.rows.len()
    }

    fn value(&self, x: &[f64]) -> f64 {
        let inv = 1.0 / self.rows.len().max(1) as f64;
        let mut v = 0.0;
        for &r in self.rows {
            v += self.row_term(x, r, None);
        }
        (v + 0.5 * self.l2 * dot(x, x)) * inv
    }

    fn value_grad(&self, x: &[f64], grad: &mut [f64]) -> f64 {
        let inv = 1.0 / self.rows.len().max(1) as f64;
        grad.iter_mut().for_each(|g| *g = 0.0);
        let mut v = 0.0;
        for &r in self.rows {
            v += self.row_term(x, r, Some(grad));
        }
        for (g, xi) in grad.iter_mut().zip(x) {
            *g = (*g + self.l2 * xi) * inv;
        }
        (v + 0.5 * self.l2 * dot(x, x)) * inv
    }

    fn batch_grad(&self, x: &[f64], terms: &[usize], grad: &mut [f64]) {
        grad.iter_mut().for_each(|g| *g = 0.0);
        for &t in terms {
            self.row_term(x, self.rows[t], Some(grad));
        }
        let scale = 1.0 / terms.len().max(1) as f64;
        let n = self.rows.len() as f64;
        for (g, xi) in grad.iter_mut().zip(x) {
            *g = *g * scale + self.l2 / n * xi;
        }
    }

    fn hessian(&self, x: &[f64], hess: &mut [f64]) {
        let dim = self.dim();
        hess.iter_mut().for_each(|h| *h = 0.0);
        let mut weighted = vec![0.0; dim];
        for &r in self.rows {
            let options = match self.data.decision(r) {
                Decision::Assortment(o) => o,
                Decision::Bid(_) => unreachable!(),
            };
            let mut u = Vec::with_capacity(options.len());
            for (h, o) in options.iter().enumerate() {
                u.push(dot(self.block(x, h), o));
            }
            let probs = probs_from_utilities(&u);
            // sum_h p_h f_h f_h^T - (sum_h p_h f_h)(sum_h p_h f_h)^T where
            // f_h embeds option h's features at its parameter block.
            weighted.iter_mut().for_each(|w| *w = 0.0);
            for (h, o) in options.iter().enumerate() {
                let p = probs[h + 1];
                let base = if self.positions == 1 { 0 } else { h * self.option_dim };
                for (j, &oj) in o.iter().enumerate() {
                    weighted[base + j] += p * oj;
                }
                for j in 0..o.len() {
                    for k in 0..o.len() {
                        hess[(base + j) * dim + (base + k)] += p * o[j] * o[k];
                    }
                }
            }
            for j in 0..dim {
                if weighted[j] == 0.0 {
                    continue;
                }
                for k in 0..dim {
                    hess[j * dim + k] -= weighted[j] * weighted[k];
                }
            }
        }
        let inv = 1.0 / self.rows.len().max(1) as f64;
        for i in 0..dim {
            hess[i * dim + i] += self.l2;
        }
        hess.iter_mut().for_each(|h| *h *= inv);
    }
}

pub fn fit_shared(
    data: &Dataset,
    rows: &[usize],
    cfg: &FitConfig,
    warm: Option<&[f64]>,
    stream: &mut Stream,
) -> Result<(MnlShared, FitReport)> {
    if rows.is_empty() {
        return Err(Error::EmptyInput("mnl fit with no rows"));
    }
    let obj = MnlObjective { data, rows, option_dim: data.option_dim, positions: 1, l2: cfg.l2_ridge };
    let (beta, report) = minimize(&obj, warm, cfg, stream);
    Ok((MnlShared { beta }, report))
}

pub fn fit_option_specific(
    data: &Dataset,
    rows: &[usize],
    cfg: &FitConfig,
    warm: Option<&MnlOptionSpecific>,
    stream: &mut Stream,
) -> Result<(MnlOptionSpecific, FitReport)> {
    if rows.is_empty() {
        return Err(Error::EmptyInput("mnl fit with no rows"));
    }
    let positions = data.max_assortment();
    let q = data.option_dim;
    let obj = MnlObjective { data, rows, option_dim: q, positions, l2: cfg.l2_ridge };
    let warm_flat: Option<Vec<f64>> = warm.map(|w| {
        let mut flat = vec![0.0; positions * q];
        for (h, row) in w.beta.iter().enumerate().take(positions) {
            flat[h * q..(h + 1) * q].copy_from_slice(row);
        }
        flat
    });
    let (flat, report) = minimize(&obj, warm_flat.as_deref(), cfg, stream);
    let beta = (0..positions).map(|h| flat[h * q..(h + 1) * q].to_vec()).collect();
    Ok((MnlOptionSpecific { beta }, report))
}

/// Analytic gradient of the mean NLL (ridge excluded), exposed so tests can
/// compare it against finite differences.
pub fn nll_and_grad(data: &Dataset, rows: &[usize], beta: &[f64]) -> (f64, Vec<f64>) {
    let obj = MnlObjective { data, rows, option_dim: data.option_dim, positions: 1, l2: 0.0 };
    let mut grad = vec![0.0; beta.len()];
    let v = obj.value_grad(beta, &mut grad);
    (v, grad)
}
