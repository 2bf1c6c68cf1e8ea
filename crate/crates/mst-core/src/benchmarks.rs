//! Comparison models: a context-free fit on all rows, and cluster-then-fit
//! models that run K-means on encoded contexts and fit one leaf model per
//! cluster, with validation-driven selection of K.

use serde::{Deserialize, Serialize};

use crate::data::{ContextSchema, ContextValue, Dataset, VarKind, UNKNOWN_CATEGORY};
use crate::error::{Error, Result};
use crate::format;
use crate::leaf::{self, LeafFamily, LeafModel};
use crate::metrics::Predictor;
use crate::optim::{FitConfig, FitReport};
use crate::parallel;
use crate::rng::{label, Stream};

pub const KMEANS_RESTARTS: u64 = 10;
pub const KMEANS_MAX_ITERATIONS: usize = 300;

/// Dense row-major matrix; all clustering runs on this flat layout.
#[derive(Debug, Clone, PartialEq)]
pub struct Matrix {
    pub data: Vec<f64>,
    pub dim: usize,
}

impl Matrix {
    pub fn with_dim(dim: usize) -> Matrix {
        Matrix { data: Vec::new(), dim }
    }

    pub fn from_rows(rows: &[Vec<f64>]) -> Result<Matrix> {
        let dim = rows.first().map_or(0, |r| r.len());
        let mut m = Matrix::with_dim(dim);
        for r in rows {
            if r.len() != dim {
                return Err(Error::DimensionMismatch(format!(
                    "matrix rows of width {} and {}",
                    dim,
                    r.len()
                )));
            }
            m.data.extend_from_slice(r);
        }
        Ok(m)
    }

    pub fn rows(&self) -> usize {
        if self.dim == 0 { 0 } else { self.data.len() / self.dim }
    }

    pub fn row(&self, i: usize) -> &[f64] {
        &self.data[i * self.dim..(i + 1) * self.dim]
    }

    pub fn push_row(&mut self, row: &[f64]) {
        debug_assert_eq!(row.len(), self.dim);
        self.data.extend_from_slice(row);
    }
}

fn sq_dist(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| (x - y) * (x - y)).sum()
}

fn distinct_rows(points: &Matrix) -> usize {
    let n = points.rows();
    if n == 0 {
        return 0;
    }
    let mut order: Vec<usize> = (0..n).collect();
    order.sort_unstable_by(|&a, &b| {
        points
            .row(a)
            .iter()
            .zip(points.row(b))
            .map(|(x, y)| x.total_cmp(y))
            .find(|o| o.is_ne())
            .unwrap_or(std::cmp::Ordering::Equal)
    });
    1 + order.windows(2).filter(|w| points.row(w[0]) != points.row(w[1])).count()
}

#[derive(Debug, Clone)]
pub struct KmeansResult {
    pub centroids: Vec<Vec<f64>>,
    pub assignments: Vec<usize>,
    pub inertia: f64,
    /// Inertia after each centroid update of the winning restart.
    pub inertia_trace: Vec<f64>,
}

/// Index of the nearest centroid; ties go to the lowest index.
fn nearest(point: &[f64], centroids: &Matrix) -> usize {
    let mut best = 0;
    let mut best_d = f64::INFINITY;
    for c in 0..centroids.rows() {
        let d = sq_dist(point, centroids.row(c));
        if d < best_d {
            best_d = d;
            best = c;
        }
    }
    best
}

fn seed_plus_plus(points: &Matrix, k: usize, stream: &mut Stream) -> Matrix {
    let n = points.rows();
    let mut centroids = Matrix::with_dim(points.dim);
    let first = stream.below(n as u64) as usize;
    centroids.push_row(points.row(first));
    let mut d2: Vec<f64> = (0..n).map(|i| sq_dist(points.row(i), centroids.row(0))).collect();
    while centroids.rows() < k {
        let total: f64 = d2.iter().sum();
        let target = stream.uniform() * total;
        let mut acc = 0.0;
        let mut pick = n - 1;
        for (i, &d) in d2.iter().enumerate() {
            acc += d;
            if acc > target {
                pick = i;
                break;
            }
        }
        let c = centroids.rows();
        centroids.push_row(points.row(pick));
        for i in 0..n {
            let d = sq_dist(points.row(i), centroids.row(c));
            if d < d2[i] {
                d2[i] = d;
            }
        }
    }
    centroids
}

fn assign_all(points: &Matrix, centroids: &Matrix, workers: usize) -> Vec<usize> {
    let n = points.rows();
    let chunk = n.div_ceil(workers.max(1)).max(1);
    let parts = parallel::map_chunks(n, chunk, workers, &|range: std::ops::Range<usize>| {
        range.map(|i| nearest(points.row(i), centroids)).collect::<Vec<usize>>()
    });
    parts.into_iter().flatten().collect()
}

/// Moves the farthest-from-centroid point out of a multi-member cluster
/// into each empty cluster.
fn repair_empty(points: &Matrix, centroids: &Matrix, assignments: &mut [usize], k: usize) {
    let mut counts = vec![0usize; k];
    for &a in assignments.iter() {
        counts[a] += 1;
    }
    for c in 0..k {
        if counts[c] > 0 {
            continue;
        }
        let mut far = usize::MAX;
        let mut far_d = -1.0;
        for (i, &a) in assignments.iter().enumerate() {
            if counts[a] < 2 {
                continue;
            }
            let d = sq_dist(points.row(i), centroids.row(a));
            if d > far_d {
                far_d = d;
                far = i;
            }
        }
        debug_assert!(far != usize::MAX, "no donor cluster for empty-cluster repair");
        counts[assignments[far]] -= 1;
        assignments[far] = c;
        counts[c] += 1;
    }
}

fn update_centroids(points: &Matrix, assignments: &[usize], k: usize) -> Matrix {
    let dim = points.dim;
    let mut sums = vec![0.0; k * dim];
    let mut counts = vec![0usize; k];
    for (i, &a) in assignments.iter().enumerate() {
        counts[a] += 1;
        let row = points.row(i);
        for d in 0..dim {
            sums[a * dim + d] += row[d];
        }
    }
    for c in 0..k {
        debug_assert!(counts[c] > 0);
        for d in 0..dim {
            sums[c * dim + d] /= counts[c] as f64;
        }
    }
    Matrix { data: sums, dim }
}

fn inertia_of(points: &Matrix, centroids: &Matrix, assignments: &[usize]) -> f64 {
    (0..points.rows()).map(|i| sq_dist(points.row(i), centroids.row(assignments[i]))).sum()
}

fn lloyd(points: &Matrix, k: usize, stream: &mut Stream, workers: usize) -> (Matrix, Vec<usize>, f64, Vec<f64>) {
    let mut centroids = seed_plus_plus(points, k, stream);
    let mut assignments: Vec<usize> = Vec::new();
    let mut trace = Vec::new();
    for _ in 0..KMEANS_MAX_ITERATIONS {
        let mut next = assign_all(points, &centroids, workers);
        repair_empty(points, &centroids, &mut next, k);
        if next == assignments {
            break;
        }
        assignments = next;
        centroids = update_centroids(points, &assignments, k);
        trace.push(inertia_of(points, &centroids, &assignments));
    }
    let inertia = inertia_of(points, &centroids, &assignments);
    (centroids, assignments, inertia, trace)
}

/// Lloyd's algorithm with k-means++ seeding, run to an assignment fixpoint
/// (capped) and restarted several times; the lowest-inertia run wins.
/// Deterministic for a given seed regardless of `workers`.
pub fn kmeans(points: &Matrix, k: usize, seed: u64, workers: usize) -> Result<KmeansResult> {
    let n = points.rows();
    if n == 0 {
        return Err(Error::EmptyInput("kmeans needs at least one point"));
    }
    if k == 0 {
        return Err(Error::InvalidArgument("kmeans needs k >= 1".into()));
    }
    let distinct = distinct_rows(points);
    if k > distinct {
        return Err(Error::InvalidArgument(format!(
            "k = {k} exceeds the {distinct} distinct points"
        )));
    }
    let mut best: Option<(Matrix, Vec<usize>, f64, Vec<f64>)> = None;
    for restart in 0..KMEANS_RESTARTS {
        let mut stream = Stream::new(seed, &[label::KMEANS, restart]);
        let run = lloyd(points, k, &mut stream, workers);
        if best.as_ref().is_none_or(|b| run.2 < b.2) {
            best = Some(run);
        }
    }
    let (centroids, assignments, inertia, trace) = best.expect("at least one restart");
    Ok(KmeansResult {
        centroids: (0..k).map(|c| centroids.row(c).to_vec()).collect(),
        assignments,
        inertia,
        inertia_trace: trace,
    })
}

/// Width of the encoded context vector: one column per numeric variable,
/// one per category of each categorical variable.
pub fn encoded_dim(schema: &ContextSchema) -> usize {
    schema
        .variables
        .iter()
        .map(|v| match v.kind {
            VarKind::Numeric => 1,
            VarKind::Categorical => v.categories.len(),
        })
        .sum()
}

/// Raw encoding: numeric values as-is, categoricals one-hot.  An unknown
/// category encodes as all zeros.
pub fn encode_context(schema: &ContextSchema, ctx: &[ContextValue], out: &mut [f64]) {
    let mut at = 0;
    for (var, value) in schema.variables.iter().zip(ctx) {
        match var.kind {
            VarKind::Numeric => {
                out[at] = value.as_num().unwrap_or(0.0);
                at += 1;
            }
            VarKind::Categorical => {
                let width = var.categories.len();
                out[at..at + width].fill(0.0);
                if let Some(code) = value.as_cat() {
                    if code != UNKNOWN_CATEGORY && (code as usize) < width {
                        out[at + code as usize] = 1.0;
                    }
                }
                at += width;
            }
        }
    }
}

/// Per-column standardization constants.  Numeric columns carry the training
/// mean and standard deviation; one-hot columns stay untouched (mean 0,
/// deviation 1), as do constant numeric columns.
fn standardization(schema: &ContextSchema, points: &Matrix) -> (Vec<f64>, Vec<f64>) {
    let dim = points.dim;
    let n = points.rows() as f64;
    let mut means = vec![0.0; dim];
    let mut sds = vec![1.0; dim];
    let mut numeric = vec![false; dim];
    let mut at = 0;
    for var in &schema.variables {
        match var.kind {
            VarKind::Numeric => {
                numeric[at] = true;
                at += 1;
            }
            VarKind::Categorical => at += var.categories.len(),
        }
    }
    for d in 0..dim {
        if !numeric[d] {
            continue;
        }
        let mut sum = 0.0;
        for i in 0..points.rows() {
            sum += points.row(i)[d];
        }
        let mean = sum / n;
        let mut var = 0.0;
        for i in 0..points.rows() {
            let dv = points.row(i)[d] - mean;
            var += dv * dv;
        }
        let sd = (var / n).sqrt();
        means[d] = mean;
        sds[d] = if sd > 1e-12 { sd } else { 1.0 };
    }
    (means, sds)
}

fn encode_dataset(data: &Dataset) -> Matrix {
    let dim = encoded_dim(&data.schema);
    let mut points = Matrix::with_dim(dim);
    let mut buf = vec![0.0; dim];
    for row in 0..data.len() {
        encode_context(&data.schema, data.context(row), &mut buf);
        points.push_row(&buf);
    }
    points
}

fn standardize_in_place(points: &mut Matrix, means: &[f64], sds: &[f64]) {
    let dim = points.dim;
    for (i, v) in points.data.iter_mut().enumerate() {
        let d = i % dim;
        *v = (*v - means[d]) / sds[d];
    }
}

/// K-means cluster centers over standardized contexts with one response
/// model per cluster.  Prediction routes a context to its nearest centroid.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ClusteredModel {
    pub schema: ContextSchema,
    pub family: LeafFamily,
    pub feature_means: Vec<f64>,
    pub feature_sds: Vec<f64>,
    pub centroids: Vec<Vec<f64>>,
    pub models: Vec<LeafModel>,
}

impl ClusteredModel {
    pub fn cluster_count(&self) -> usize {
        self.centroids.len()
    }

    pub fn validate(&self) -> Result<()> {
        let dim = encoded_dim(&self.schema);
        if self.centroids.is_empty() {
            return Err(Error::InvalidArgument("clustered model with no centroids".into()));
        }
        if self.models.len() != self.centroids.len() {
            return Err(Error::InvalidArgument(format!(
                "{} centroids but {} models",
                self.centroids.len(),
                self.models.len()
            )));
        }
        if self.feature_means.len() != dim || self.feature_sds.len() != dim {
            return Err(Error::DimensionMismatch(format!(
                "standardization constants sized {}/{} for encoded width {dim}",
                self.feature_means.len(),
                self.feature_sds.len()
            )));
        }
        if self.centroids.iter().any(|c| c.len() != dim) {
            return Err(Error::DimensionMismatch("centroid width != encoded width".into()));
        }
        let finite = self
            .feature_means
            .iter()
            .chain(&self.feature_sds)
            .chain(self.centroids.iter().flatten())
            .all(|v| v.is_finite());
        if !finite || self.feature_sds.iter().any(|&s| s <= 0.0) {
            return Err(Error::InvalidArgument("non-finite or non-positive model constants".into()));
        }
        for m in &self.models {
            if m.family() != self.family {
                return Err(Error::FamilyMismatch {
                    family: self.family.to_string(),
                    payload: m.family().to_string(),
                });
            }
        }
        Ok(())
    }

    /// Cluster index for a context: standardized encoding, nearest centroid.
    pub fn assign(&self, ctx: &[ContextValue]) -> usize {
        let dim = encoded_dim(&self.schema);
        let mut enc = vec![0.0; dim];
        encode_context(&self.schema, ctx, &mut enc);
        for d in 0..dim {
            enc[d] = (enc[d] - self.feature_means[d]) / self.feature_sds[d];
        }
        let mut best = 0;
        let mut best_d = f64::INFINITY;
        for (c, centroid) in self.centroids.iter().enumerate() {
            let d = sq_dist(&enc, centroid);
            if d < best_d {
                best_d = d;
                best = c;
            }
        }
        best
    }

    pub fn model_for(&self, ctx: &[ContextValue]) -> &LeafModel {
        &self.models[self.assign(ctx)]
    }
}

impl Predictor for ClusteredModel {
    fn choice_probs(&self, ctx: &[ContextValue], options: &[Vec<f64>]) -> Result<Vec<f64>> {
        self.model_for(ctx).choice_probs(options)
    }

    fn win_prob(&self, ctx: &[ContextValue], bid: f64) -> Result<f64> {
        self.model_for(ctx).win_prob(bid)
    }
}

fn cluster_stream(seed: u64, cluster: usize) -> Stream {
    Stream::new(seed, &[label::SGD, cluster as u64])
}

fn check_cluster_family(family: LeafFamily) -> Result<()> {
    match family {
        LeafFamily::Mnl | LeafFamily::Isotonic | LeafFamily::Logistic => Ok(()),
        other => Err(Error::InvalidArgument(format!(
            "clustered fits support mnl|isotonic|logistic, not {other}"
        ))),
    }
}

/// One leaf model over the whole dataset, ignoring contexts.  Matches the
/// cluster-0 fit of `fit_clustered` bit for bit when K = 1.
pub fn fit_context_free(
    data: &Dataset,
    family: LeafFamily,
    cfg: &FitConfig,
    seed: u64,
) -> Result<(LeafModel, FitReport)> {
    let rows: Vec<usize> = (0..data.len()).collect();
    leaf::fit(family, data, &rows, cfg, None, &mut cluster_stream(seed, 0))
}

/// Standardizes and one-hot encodes contexts, clusters them with K-means,
/// and fits one model per cluster on that cluster's rows.
pub fn fit_clustered(
    data: &Dataset,
    k: usize,
    family: LeafFamily,
    cfg: &FitConfig,
    seed: u64,
    workers: usize,
) -> Result<(ClusteredModel, Vec<FitReport>)> {
    check_cluster_family(family)?;
    cfg.validate()?;
    if data.is_empty() {
        return Err(Error::EmptyInput("clustered fit needs rows"));
    }
    let mut points = encode_dataset(data);
    let (means, sds) = standardization(&data.schema, &points);
    standardize_in_place(&mut points, &means, &sds);
    let clustering = kmeans(&points, k, seed, workers)?;
    let mut member_rows: Vec<Vec<usize>> = vec![Vec::new(); k];
    for (row, &c) in clustering.assignments.iter().enumerate() {
        member_rows[c].push(row);
    }
    let mut models = Vec::with_capacity(k);
    let mut reports = Vec::with_capacity(k);
    for (c, rows) in member_rows.iter().enumerate() {
        let (model, report) = leaf::fit(family, data, rows, cfg, None, &mut cluster_stream(seed, c))?;
        models.push(model);
        reports.push(report);
    }
    let model = ClusteredModel {
        schema: data.schema.clone(),
        family,
        feature_means: means,
        feature_sds: sds,
        centroids: clustering.centroids,
        models,
    };
    model.validate()?;
    Ok((model, reports))
}

/// Mean per-row family loss of a clustered model on a dataset.
pub fn clustered_loss(model: &ClusteredModel, data: &Dataset) -> Result<f64> {
    if data.is_empty() {
        return Err(Error::EmptyInput("loss over an empty dataset"));
    }
    let mut total = 0.0;
    for row in 0..data.len() {
        total += model.model_for(data.context(row)).row_loss(data.decision(row), data.response(row))?;
    }
    Ok(total / data.len() as f64)
}

#[derive(Debug, Clone)]
pub struct TuneResult {
    pub model: ClusteredModel,
    pub k: usize,
    /// Mean validation family loss per candidate, indexed by K - 1.
    pub candidates: Vec<f64>,
}

/// Candidate K values whose mean validation loss lands within this relative
/// band of the best are treated as tied.  A held-out mean carries sampling
/// noise well above float precision, so exact-minimum selection would flap
/// between adjacent K on homogeneous data; the band makes near-ties resolve
/// toward the simpler model.
pub const TUNE_TOLERANCE: f64 = 1e-4;

/// Fits K = 1..=k_max clustered models (concurrently across K) and keeps the
/// smallest K whose mean validation family loss ties the best, where losses
/// within `TUNE_TOLERANCE` (relative) count as tied.
pub fn tune_k(
    train: &Dataset,
    validation: &Dataset,
    k_max: usize,
    family: LeafFamily,
    cfg: &FitConfig,
    seed: u64,
    workers: usize,
) -> Result<TuneResult> {
    if k_max == 0 {
        return Err(Error::InvalidArgument("tune_k needs k_max >= 1".into()));
    }
    if validation.is_empty() {
        return Err(Error::EmptyInput("tune_k needs a validation set"));
    }
    let jobs: Vec<usize> = (1..=k_max).collect();
    let fitted = parallel::run_batched(jobs, workers, &|k| -> Result<(ClusteredModel, f64)> {
        let (model, _) = fit_clustered(train, k, family, cfg, seed, 1)?;
        let loss = clustered_loss(&model, validation)?;
        Ok((model, loss))
    });
    let mut models = Vec::with_capacity(k_max);
    let mut candidates = Vec::with_capacity(k_max);
    for outcome in fitted {
        let (model, loss) = outcome?;
        candidates.push(loss);
        models.push(model);
    }
    let min_loss = candidates.iter().cloned().fold(f64::INFINITY, f64::min);
    let band = min_loss + TUNE_TOLERANCE * (1.0 + min_loss.abs());
    let k = 1 + candidates.iter().position(|&l| l <= band).expect("band contains the minimum");
    let model = models.swap_remove(k - 1);
    Ok(TuneResult { model, k, candidates })
}

#[derive(Serialize, Deserialize)]
struct ClusteredDocument {
    format: String,
    #[serde(flatten)]
    model: ClusteredModel,
}

pub fn clustered_to_string(model: &ClusteredModel) -> Result<String> {
    model.validate()?;
    format::to_json_string(&ClusteredDocument {
        format: format::KMEANS_FORMAT.into(),
        model: model.clone(),
    })
}

pub fn clustered_from_str(text: &str) -> Result<ClusteredModel> {
    format::check_format_tag(text, format::KMEANS_FORMAT)?;
    let doc: ClusteredDocument = format::from_json_str(text)?;
    let model = ClusteredModel {
        schema: ContextSchema::new(doc.model.schema.variables.clone())?,
        ..doc.model
    };
    model.validate()?;
    Ok(model)
}

pub fn write_clustered(path: &std::path::Path, model: &ClusteredModel) -> Result<()> {
    format::write_atomic(path, &clustered_to_string(model)?)
}

pub fn read_clustered(path: &std::path::Path) -> Result<ClusteredModel> {
    clustered_from_str(&std::fs::read_to_string(path)?)
}
