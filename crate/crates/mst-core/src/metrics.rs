//! Evaluation metrics and per-segment breakdowns.
//!
//! All metrics are means over rows, so they are invariant under row
//! permutation and duplication-consistent.  Probability floors keep the
//! log-loss finite when a model assigns zero to a realized outcome.

use serde::Serialize;

use crate::data::{ContextValue, Dataset, Decision, PayloadKind, Response};
use crate::datagen::GroundTruth;
use crate::error::{Error, Result};
use crate::leaf::LeafModel;
use crate::tree::Tree;

/// Floor applied to realized-outcome probabilities inside the log loss.
pub const NLL_FLOOR: f64 = 1e-12;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
#[serde(rename_all = "lowercase")]
pub enum Metric {
    Mae,
    Mse,
    Nll,
    Auc,
}

impl std::str::FromStr for Metric {
    type Err = String;

    fn from_str(s: &str) -> std::result::Result<Self, String> {
        match s {
            "mae" => Ok(Metric::Mae),
            "mse" => Ok(Metric::Mse),
            "nll" => Ok(Metric::Nll),
            "auc" => Ok(Metric::Auc),
            other => Err(format!("unknown metric {other:?} (expected mae|mse|nll|auc)")),
        }
    }
}

impl std::fmt::Display for Metric {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        match self {
            Metric::Mae => write!(f, "mae"),
            Metric::Mse => write!(f, "mse"),
            Metric::Nll => write!(f, "nll"),
            Metric::Auc => write!(f, "auc"),
        }
    }
}

/// Anything that turns a context and a decision into response
/// probabilities: a single leaf model, a segmentation tree, or a clustered
/// benchmark model.
pub trait Predictor {
    /// Probabilities over the H+1 outcomes, no-purchase first.
    fn choice_probs(&self, ctx: &[ContextValue], options: &[Vec<f64>]) -> Result<Vec<f64>>;
    fn win_prob(&self, ctx: &[ContextValue], bid: f64) -> Result<f64>;
}

impl Predictor for LeafModel {
    fn choice_probs(&self, _ctx: &[ContextValue], options: &[Vec<f64>]) -> Result<Vec<f64>> {
        LeafModel::choice_probs(self, options)
    }

    fn win_prob(&self, _ctx: &[ContextValue], bid: f64) -> Result<f64> {
        LeafModel::win_prob(self, bid)
    }
}

impl Predictor for Tree {
    fn choice_probs(&self, ctx: &[ContextValue], options: &[Vec<f64>]) -> Result<Vec<f64>> {
        self.leaf_model(ctx, false)?.choice_probs(options)
    }

    fn win_prob(&self, ctx: &[ContextValue], bid: f64) -> Result<f64> {
        self.leaf_model(ctx, false)?.win_prob(bid)
    }
}

/// Per-row squared error: for choice rows the full Brier sum over the H+1
/// outcomes, for auction rows the squared win-probability residual.
pub fn row_mse(pred: &dyn Predictor, data: &Dataset, row: usize) -> Result<f64> {
    match (data.decision(row), data.response(row)) {
        (Decision::Assortment(options), Response::Choice(y)) => {
            let p = pred.choice_probs(data.context(row), options)?;
            Ok(p.iter()
                .enumerate()
                .map(|(h, &q)| {
                    let target = f64::from(h as u32 == y);
                    (q - target) * (q - target)
                })
                .sum())
        }
        (Decision::Bid(bid), Response::Win(won)) => {
            let p = pred.win_prob(data.context(row), *bid)?;
            let y = f64::from(won);
            Ok((p - y) * (p - y))
        }
        _ => Err(Error::SchemaMismatch("row decision/response mismatch".into())),
    }
}

/// Per-row negative log-likelihood of the realized outcome, floored.
pub fn row_nll(pred: &dyn Predictor, data: &Dataset, row: usize) -> Result<f64> {
    let p = match (data.decision(row), data.response(row)) {
        (Decision::Assortment(options), Response::Choice(y)) => {
            pred.choice_probs(data.context(row), options)?[y as usize]
        }
        (Decision::Bid(bid), Response::Win(won)) => {
            let p = pred.win_prob(data.context(row), *bid)?;
            if won { p } else { 1.0 - p }
        }
        _ => return Err(Error::SchemaMismatch("row decision/response mismatch".into())),
    };
    Ok(-p.max(NLL_FLOOR).ln())
}

#[derive(Debug, Clone, Copy)]
pub struct MaeOptions {
    /// Include the no-purchase outcome in the per-row option average.
    pub include_no_purchase: bool,
    /// For mixture truths, ignore recorded latent clusters and compare
    /// against the posterior-weighted mixture probabilities.
    pub use_posterior: bool,
}

impl Default for MaeOptions {
    fn default() -> Self {
        MaeOptions { include_no_purchase: false, use_posterior: false }
    }
}

fn row_mae(
    pred: &dyn Predictor,
    truth: &GroundTruth,
    data: &Dataset,
    row: usize,
    opts: MaeOptions,
) -> Result<f64> {
    match data.decision(row) {
        Decision::Assortment(options) => {
            let latent = if opts.use_posterior {
                None
            } else {
                data.latent.as_ref().map(|l| l[row])
            };
            let target = truth.true_choice_probs(data.context(row), options, latent)?;
            let fitted = pred.choice_probs(data.context(row), options)?;
            let start = usize::from(!opts.include_no_purchase);
            let count = (fitted.len() - start) as f64;
            Ok(fitted
                .iter()
                .zip(&target)
                .skip(start)
                .map(|(a, b)| (a - b).abs())
                .sum::<f64>()
                / count)
        }
        Decision::Bid(bid) => {
            let target = truth.true_win_prob(data.context(row), *bid)?;
            let fitted = pred.win_prob(data.context(row), *bid)?;
            Ok((fitted - target).abs())
        }
    }
}

fn mean_over_rows(
    data: &Dataset,
    rows: Option<&[usize]>,
    mut f: impl FnMut(usize) -> Result<f64>,
) -> Result<f64> {
    let n = rows.map_or(data.len(), <[usize]>::len);
    if n == 0 {
        return Err(Error::EmptyInput("metric over an empty dataset"));
    }
    let mut total = 0.0;
    match rows {
        Some(rs) => {
            for &r in rs {
                total += f(r)?;
            }
        }
        None => {
            for r in 0..n {
                total += f(r)?;
            }
        }
    }
    Ok(total / n as f64)
}

/// Mean absolute error between fitted and exact generative probabilities.
/// Choice rows average |error| over the offered options (the no-purchase
/// entry joins under the flag); auction rows use the win probability.
pub fn mae_vs_truth(
    pred: &dyn Predictor,
    truth: &GroundTruth,
    test: &Dataset,
    opts: MaeOptions,
) -> Result<f64> {
    mean_over_rows(test, None, |r| row_mae(pred, truth, test, r, opts))
}

/// Mean squared error; for choice data this is the Brier score.
pub fn mse(pred: &dyn Predictor, test: &Dataset) -> Result<f64> {
    mean_over_rows(test, None, |r| row_mse(pred, test, r))
}

/// Brier score over choice rows: squared error summed across all H+1
/// outcomes including no-purchase, averaged over rows.
pub fn brier(pred: &dyn Predictor, test: &Dataset) -> Result<f64> {
    if test.kind != PayloadKind::Choice {
        return Err(Error::SchemaMismatch("brier is defined on choice data".into()));
    }
    mse(pred, test)
}

/// Mean negative log-likelihood of realized outcomes.
pub fn mean_nll(pred: &dyn Predictor, test: &Dataset) -> Result<f64> {
    mean_over_rows(test, None, |r| row_nll(pred, test, r))
}

/// Win-probability scores and outcomes for ranking metrics.
pub fn auction_scores(pred: &dyn Predictor, test: &Dataset) -> Result<(Vec<f64>, Vec<bool>)> {
    let mut scores = Vec::with_capacity(test.len());
    let mut labels = Vec::with_capacity(test.len());
    for r in 0..test.len() {
        let Decision::Bid(bid) = test.decision(r) else {
            return Err(Error::SchemaMismatch("auction scores need bid rows".into()));
        };
        scores.push(pred.win_prob(test.context(r), *bid)?);
        labels.push(test.response(r) == Response::Win(true));
    }
    Ok((scores, labels))
}

/// Probability that a random positive outscores a random negative, ties
/// counted half (the rank-sum formulation, which equals the area under the
/// ROC curve).
pub fn roc_auc(scores: &[f64], labels: &[bool]) -> Result<f64> {
    if scores.len() != labels.len() {
        return Err(Error::DimensionMismatch("scores and labels differ in length".into()));
    }
    let n_pos = labels.iter().filter(|&&l| l).count();
    let n_neg = labels.len() - n_pos;
    if n_pos == 0 || n_neg == 0 {
        return Err(Error::InvalidArgument("roc_auc needs both classes present".into()));
    }
    let mut order: Vec<usize> = (0..scores.len()).collect();
    order.sort_by(|&a, &b| scores[a].partial_cmp(&scores[b]).expect("finite scores"));
    // Average ranks across tied scores, then sum positive ranks.
    let mut rank_pos_sum = 0.0;
    let mut i = 0;
    while i < order.len() {
        let mut j = i;
        while j < order.len() && scores[order[j]] == scores[order[i]] {
            j += 1;
        }
        let avg_rank = (i + 1 + j) as f64 / 2.0;
        for &idx in &order[i..j] {
            if labels[idx] {
                rank_pos_sum += avg_rank;
            }
        }
        i = j;
    }
    let u = rank_pos_sum - (n_pos * (n_pos + 1)) as f64 / 2.0;
    Ok(u / (n_pos as f64 * n_neg as f64))
}

/// Test rows grouped by the leaf they route to, ordered by leaf id.
pub fn route_slices(router: &Tree, test: &Dataset) -> Result<Vec<Vec<usize>>> {
    let mut slices = vec![Vec::new(); router.leaf_count()];
    for r in 0..test.len() {
        let leaf = router.route(test.context(r), false)?;
        slices[leaf as usize].push(r);
    }
    Ok(slices)
}

#[derive(Debug, Clone, Serialize)]
pub struct PerLeafMetric {
    pub leaf_id: u32,
    pub row_count: usize,
    pub value: f64,
}

/// One metric evaluated inside every leaf of the router.  Empty leaves are
/// reported with a zero count and NaN value.
pub fn per_leaf_metric(
    pred: &dyn Predictor,
    router: &Tree,
    test: &Dataset,
    metric: Metric,
    truth: Option<&GroundTruth>,
) -> Result<Vec<PerLeafMetric>> {
    let slices = route_slices(router, test)?;
    let mut out = Vec::with_capacity(slices.len());
    for (leaf_id, rows) in slices.iter().enumerate() {
        let value = if rows.is_empty() {
            f64::NAN
        } else {
            leaf_metric_value(pred, test, rows, metric, truth)?
        };
        out.push(PerLeafMetric { leaf_id: leaf_id as u32, row_count: rows.len(), value });
    }
    Ok(out)
}

fn leaf_metric_value(
    pred: &dyn Predictor,
    test: &Dataset,
    rows: &[usize],
    metric: Metric,
    truth: Option<&GroundTruth>,
) -> Result<f64> {
    match metric {
        Metric::Mse => mean_over_rows(test, Some(rows), |r| row_mse(pred, test, r)),
        Metric::Nll => mean_over_rows(test, Some(rows), |r| row_nll(pred, test, r)),
        Metric::Mae => {
            let truth = truth.ok_or_else(|| {
                Error::InvalidArgument("mae needs a ground-truth oracle".into())
            })?;
            mean_over_rows(test, Some(rows), |r| {
                row_mae(pred, truth, test, r, MaeOptions::default())
            })
        }
        Metric::Auc => Err(Error::InvalidArgument(
            "auc is not a per-row mean; use auction_scores + roc_auc".into(),
        )),
    }
}

#[derive(Debug, Clone, Serialize)]
pub struct PerLeafImprovement {
    pub leaf_id: u32,
    pub row_count: usize,
    pub metric_a: f64,
    pub metric_b: f64,
    /// Positive when model A beats model B on this lower-is-better metric.
    pub improvement_pct: f64,
}

/// Per-segment comparison of two models on rows routed by `router`.  Only
/// leaves holding strictly more than `min_rows` test rows are reported.
pub fn per_leaf_improvement(
    pred_a: &dyn Predictor,
    pred_b: &dyn Predictor,
    router: &Tree,
    test: &Dataset,
    metric: Metric,
    truth: Option<&GroundTruth>,
    min_rows: usize,
) -> Result<Vec<PerLeafImprovement>> {
    let slices = route_slices(router, test)?;
    let mut out = Vec::new();
    for (leaf_id, rows) in slices.iter().enumerate() {
        if rows.len() <= min_rows {
            continue;
        }
        let a = leaf_metric_value(pred_a, test, rows, metric, truth)?;
        let b = leaf_metric_value(pred_b, test, rows, metric, truth)?;
        let improvement_pct = if b.abs() < f64::MIN_POSITIVE { 0.0 } else { 100.0 * (b - a) / b };
        out.push(PerLeafImprovement {
            leaf_id: leaf_id as u32,
            row_count: rows.len(),
            metric_a: a,
            metric_b: b,
            improvement_pct,
        });
    }
    Ok(out)
}

#[derive(Debug, Clone, Default, Serialize)]
pub struct MetricsReport {
    pub overall: Vec<(Metric, f64)>,
    pub per_leaf: Vec<PerLeafMetric>,
}

impl MetricsReport {
    /// Tab-separated rendering: an overall block, then a per-leaf block
    /// when present.
    pub fn tsv(&self) -> String {
        let mut out = String::from("metric\tvalue\n");
        for (metric, value) in &self.overall {
            out.push_str(&format!("{metric}\t{value:.6}\n"));
        }
        if !self.per_leaf.is_empty() {
            out.push_str("\nleaf_id\trows\tvalue\n");
            for leaf in &self.per_leaf {
                out.push_str(&format!(
                    "{}\t{}\t{:.6}\n",
                    leaf.leaf_id, leaf.row_count, leaf.value
                ));
            }
        }
        out
    }
}
