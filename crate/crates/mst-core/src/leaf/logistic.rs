//! Logistic win-rate curve `sigma(slope * bid + intercept)`, fit by maximum
//! likelihood through the shared optimizer stack.

use serde::{Deserialize, Serialize};

use crate::data::{Dataset, Decision, Response};
use crate::error::{Error, Result};
use crate::optim::{minimize, FitConfig, FitReport, Objective};
use crate::rng::Stream;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct LogisticModel {
    pub slope: f64,
    pub intercept: f64,
}

#[inline]
pub fn sigmoid(z: f64) -> f64 {
    if z >= 0.0 {
        1.0 / (1.0 + (-z).exp())
    } else {
        let e = z.exp();
        e / (1.0 + e)
    }
}

/// `ln(1 + e^z)` without overflow.
#[inline]
fn log1p_exp(z: f64) -> f64 {
    if z > 0.0 {
        z + (-z).exp().ln_1p()
    } else {
        z.exp().ln_1p()
    }
}

impl LogisticModel {
    pub fn predict(&self, bid: f64) -> f64 {
        sigmoid(self.slope * bid + self.intercept)
    }
}

struct LogisticObjective<'a> {
    data: &'a Dataset,
    rows: &'a [usize],
    l2: f64,
}

impl LogisticObjective<'_> {
    #[inline]
    fn row(&self, r: usize) -> (f64, f64) {
        match (self.data.decision(r), self.data.response(r)) {
            (Decision::Bid(b), Response::Win(w)) => (*b, if w { 1.0 } else { 0.0 }),
            _ => unreachable!("logistic objective over non-auction rows"),
        }
    }
}

/// Scaled by `1/n` like the choice objective: same minimizer, size-free
/// convergence behavior.
impl Objective for LogisticObjective<'_> {
    fn dim(&self) -> usize {
        2
    }

    fn term_count(&self) -> usize {
        self.rows.len()
    }

    fn value(&self, x: &[f64]) -> f64 {
        let inv = 1.0 / self.rows.len().max(1) as f64;
        let mut v = 0.0;
        for &r in self.rows {
            let (b, y) = self.row(r);
            let z = x[0] * b + x[1];
            v += log1p_exp(z) - y * z;
        }
        (v + 0.5 * self.l2 * (x[0] * x[0] + x[1] * x[1])) * inv
    }

    fn value_grad(&self, x: &[f64], grad: &mut [f64]) -> f64 {
        let inv = 1.0 / self.rows.len().max(1) as f64;
        let mut v = 0.0;
        let (mut g0, mut g1) = (0.0, 0.0);
        for &r in self.rows {
            let (b, y) = self.row(r);
            let z = x[0] * b + x[1];
            v += log1p_exp(z) - y * z;
            let d = sigmoid(z) - y;
            g0 += d * b;
            g1 += d;
        }
        grad[0] = (g0 + self.l2 * x[0]) * inv;
        grad[1] = (g1 + self.l2 * x[1]) * inv;
        (v + 0.5 * self.l2 * (x[0] * x[0] + x[1] * x[1])) * inv
    }

    fn batch_grad(&self, x: &[f64], terms: &[usize], grad: &mut [f64]) {
        let (mut g0, mut g1) = (0.0, 0.0);
        for &t in terms {
            let (b, y) = self.row(self.rows[t]);
            let d = sigmoid(x[0] * b + x[1]) - y;
            g0 += d * b;
            g1 += d;
        }
        let scale = 1.0 / terms.len().max(1) as f64;
        let n = self.rows.len() as f64;
        grad[0] = g0 * scale + self.l2 / n * x[0];
        grad[1] = g1 * scale + self.l2 / n * x[1];
    }

    fn hessian(&self, x: &[f64], hess: &mut [f64]) {
        let inv = 1.0 / self.rows.len().max(1) as f64;
        let (mut h00, mut h01, mut h11) = (0.0, 0.0, 0.0);
        for &r in self.rows {
            let (b, _) = self.row(r);
            let p = sigmoid(x[0] * b + x[1]);
            let w = p * (1.0 - p);
            h00 += w * b * b;
            h01 += w * b;
            h11 += w;
        }
        hess[0] = (h00 + self.l2) * inv;
        hess[1] = h01 * inv;
        hess[2] = h01 * inv;
        hess[3] = (h11 + self.l2) * inv;
    }
}

pub fn fit(
    data: &Dataset,
    rows: &[usize],
    cfg: &FitConfig,
    warm: Option<&[f64]>,
    stream: &mut Stream,
) -> Result<(LogisticModel, FitReport)> {
    if rows.is_empty() {
        return Err(Error::EmptyInput("logistic fit with no rows"));
    }
    let obj = LogisticObjective { data, rows, l2: cfg.l2_ridge };
    let (x, report) = minimize(&obj, warm, cfg, stream);
    Ok((LogisticModel { slope: x[0], intercept: x[1] }, report))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::data::{ContextSchema, ContextValue, PayloadKind, Variable};
    use approx::assert_abs_diff_eq;

    fn auction_data(rows: &[(f64, bool)]) -> Dataset {
        let schema = ContextSchema::new(vec![Variable::numeric("x")]).unwrap();
        let mut data = Dataset::new(schema, PayloadKind::Auction, 0);
        for &(bid, win) in rows {
            data.push(vec![ContextValue::Num(0.0)], Decision::Bid(bid), Response::Win(win)).unwrap();
        }
        data
    }

    #[test]
    fn sigmoid_midpoint() {
        assert_abs_diff_eq!(sigmoid(0.0), 0.5, epsilon = 1e-15);
        assert!(sigmoid(-800.0) >= 0.0);
        assert!(sigmoid(800.0) <= 1.0);
    }

    /// 2-D grid search refined around the coarse optimum; independent of the
    /// analytic optimizer path.
    fn grid_oracle(data: &Dataset, rows: &[usize]) -> (f64, f64) {
        let obj = LogisticObjective { data, rows, l2: 0.0 };
        let (mut best_a, mut best_b, mut best_v) = (0.0, 0.0, f64::INFINITY);
        let (mut ca, mut cb, mut half) = (0.0, 0.0, 4.0);
        for _ in 0..24 {
            for i in -8i32..=8 {
                for j in -8i32..=8 {
                    let a = ca + half * i as f64 / 8.0;
                    let b = cb + half * j as f64 / 8.0;
                    let v = obj.value(&[a, b]);
                    if v < best_v {
                        best_v = v;
                        best_a = a;
                        best_b = b;
                    }
                }
            }
            ca = best_a;
            cb = best_b;
            half *= 0.25;
        }
        (best_a, best_b)
    }

    #[test]
    fn symmetric_data_has_zero_intercept() {
        // Mirror-symmetric: flipping bid sign flips the outcome, so the
        // likelihood is symmetric in the intercept around zero.
        let mut rows = Vec::new();
        for i in 1..=20 {
            let b = i as f64 / 10.0;
            rows.push((b, true));
            rows.push((-b, false));
        }
        // A pooled pair at both extremes keeps the data non-separable.
        rows.push((2.5, false));
        rows.push((-2.5, true));
        let data = auction_data(&rows);
        let idx: Vec<usize> = (0..data.len()).collect();
        let cfg = FitConfig { l2_ridge: 0.0, ..FitConfig::default() };
        let mut stream = Stream::new(0, &[]);
        let (m, rep) = fit(&data, &idx, &cfg, None, &mut stream).unwrap();
        assert!(rep.converged);
        assert_abs_diff_eq!(m.intercept, 0.0, epsilon = 1e-6);
        let (oa, ob) = grid_oracle(&data, &idx);
        assert_abs_diff_eq!(m.slope, oa, epsilon = 1e-3);
        assert_abs_diff_eq!(m.intercept, ob, epsilon = 1e-3);
    }

    #[test]
    fn all_wins_converges_with_ridge() {
        let rows: Vec<(f64, bool)> = (1..=50).map(|i| (i as f64 / 10.0, true)).collect();
        let data = auction_data(&rows);
        let idx: Vec<usize> = (0..data.len()).collect();
        let cfg = FitConfig { l2_ridge: 1e-4, ..FitConfig::default() };
        let mut stream = Stream::new(0, &[]);
        let (m, rep) = fit(&data, &idx, &cfg, None, &mut stream).unwrap();
        assert!(rep.converged, "separable fit must converge under a ridge");
        assert!(m.intercept > 1.0, "intercept should be large positive, got {}", m.intercept);
        assert!(m.predict(2.0) > 0.95);
    }

    #[test]
    fn recovers_true_curve_roughly() {
        let mut stream = Stream::new(77, &[]);
        let truth = LogisticModel { slope: 2.0, intercept: -1.0 };
        let rows: Vec<(f64, bool)> = (0..20_000)
            .map(|_| {
                let b = stream.uniform_in(-2.0, 3.0);
                (b, stream.bernoulli(truth.predict(b)))
            })
            .collect();
        let data = auction_data(&rows);
        let idx: Vec<usize> = (0..data.len()).collect();
        let mut fit_stream = Stream::new(0, &[]);
        let (m, _) = fit(&data, &idx, &FitConfig::default(), None, &mut fit_stream).unwrap();
        assert!((m.slope - 2.0).abs() < 0.15, "slope {}", m.slope);
        assert!((m.intercept + 1.0).abs() < 0.15, "intercept {}", m.intercept);
    }
}
