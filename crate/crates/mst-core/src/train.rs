//! Greedy tree growth.
//!
//! Each depth level enumerates candidate splits per node, refits a child
//! model on both sides of every feasible candidate, and keeps the candidate
//! with the lowest summed child loss when it beats the node's own loss.
//! Node-level searches at one depth run as one job each, scheduled in
//! batches across workers; merged results depend only on node order, so the
//! grown tree is identical for any worker count.

use std::time::Instant;

use crate::data::{Dataset, VarKind};
use crate::error::{Error, Result};
use crate::leaf::{self, LeafFamily, LeafModel};
use crate::optim::{FitConfig, Optimizer};
use crate::parallel::run_batched;
use crate::rng::{label, Stream};
use crate::tree::{Node, Split, Tree};

#[derive(Debug, Clone)]
pub struct TrainConfig {
    /// None grows until the other stopping rules bite.
    pub max_depth: Option<usize>,
    pub min_leaf_size: usize,
    /// Candidate thresholds sit at every q-th quantile of a variable's
    /// distinct values; 1 tries every distinct value.
    pub q_split: usize,
    pub worker_count: usize,
    pub fit_config: FitConfig,
    /// At or below this many rows a node configured for sgd fits with
    /// newton instead.
    pub adaptive_switch_threshold: usize,
    /// Each child of an accepted split must receive at least this fraction
    /// of the node's rows.  Zero disables the balance restriction.
    pub min_child_fraction: f64,
    pub seed: u64,
    /// Child fits start from the parent's parameters and, for ordered
    /// numeric candidates, from the previous candidate's children.
    pub warm_start: bool,
}

impl Default for TrainConfig {
    fn default() -> Self {
        TrainConfig {
            max_depth: Some(5),
            min_leaf_size: 100,
            q_split: 10,
            worker_count: 1,
            fit_config: FitConfig::default(),
            adaptive_switch_threshold: 50_000,
            min_child_fraction: 0.0,
            seed: 0,
            warm_start: true,
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        if self.min_leaf_size < 1 {
            return Err(Error::Config("min_leaf_size must be at least 1".into()));
        }
        if self.q_split < 1 {
            return Err(Error::Config("q_split must be at least 1".into()));
        }
        if self.worker_count < 1 {
            return Err(Error::Config("worker_count must be at least 1".into()));
        }
        if !(0.0..0.5).contains(&self.min_child_fraction) {
            return Err(Error::Config("min_child_fraction must lie in [0, 0.5)".into()));
        }
        self.fit_config.validate()?;
        Ok(())
    }

    /// Applies `key = value` pairs on top of `self`.  Keys are the config
    /// field names; optimizer settings use the fit-config field names.
    pub fn apply_key_values<'a, I>(&mut self, pairs: I) -> Result<()>
    where
        I: IntoIterator<Item = (&'a str, &'a str)>,
    {
        fn parse<T: std::str::FromStr>(key: &str, value: &str) -> Result<T> {
            value
                .trim()
                .parse()
                .map_err(|_| Error::Config(format!("invalid value {value:?} for {key}")))
        }
        for (key, value) in pairs {
            match key {
                "max_depth" => {
                    let v = value.trim();
                    self.max_depth =
                        if v == "none" { None } else { Some(parse::<usize>(key, v)?) };
                }
                "min_leaf_size" => self.min_leaf_size = parse(key, value)?,
                "q_split" => self.q_split = parse(key, value)?,
                "worker_count" => self.worker_count = parse(key, value)?,
                "adaptive_switch_threshold" => {
                    self.adaptive_switch_threshold = parse(key, value)?
                }
                "min_child_fraction" => self.min_child_fraction = parse(key, value)?,
                "seed" => self.seed = parse(key, value)?,
                "warm_start" => self.warm_start = parse(key, value)?,
                "optimizer" => {
                    self.fit_config.optimizer = value
                        .trim()
                        .parse::<Optimizer>()
                        .map_err(|e| Error::Config(format!("{key}: {e}")))?
                }
                "max_iterations" => self.fit_config.max_iterations = parse(key, value)?,
                "gradient_tolerance" => self.fit_config.gradient_tolerance = parse(key, value)?,
                "l2_ridge" => self.fit_config.l2_ridge = parse(key, value)?,
                "sgd_batch_size" => self.fit_config.sgd_batch_size = parse(key, value)?,
                "sgd_step_scale" => self.fit_config.sgd_step_scale = parse(key, value)?,
                other => return Err(Error::Config(format!("unknown config key {other:?}"))),
            }
        }
        self.validate()
    }

    /// Builds a config from key-value pairs over the defaults.
    pub fn from_key_values<'a, I>(pairs: I) -> Result<TrainConfig>
    where
        I: IntoIterator<Item = (&'a str, &'a str)>,
    {
        let mut cfg = TrainConfig::default();
        cfg.apply_key_values(pairs)?;
        Ok(cfg)
    }
}

#[derive(Debug, Clone, Default, PartialEq)]
pub struct TrainReport {
    pub depth: usize,
    pub leaf_count: usize,
    pub train_loss: f64,
    pub split_evaluations: u64,
    /// Gradient-step total across every model fit during growth.
    pub fit_iterations: u64,
    pub nonconverged_fits: u64,
    pub elapsed_ms: u64,
}

/// Fitted children of one evaluated candidate.
#[derive(Debug, Clone)]
pub struct SplitOutcome {
    pub split: Split,
    pub left_rows: Vec<usize>,
    pub right_rows: Vec<usize>,
    pub left_model: LeafModel,
    pub right_model: LeafModel,
    pub left_loss: f64,
    pub right_loss: f64,
}

impl SplitOutcome {
    pub fn total_loss(&self) -> f64 {
        self.left_loss + self.right_loss
    }
}

/// Result of the exhaustive candidate search at one node.
#[derive(Debug, Clone)]
pub struct SplitSearch {
    pub best: Option<SplitOutcome>,
    pub parent_loss: f64,
    pub evaluations: u64,
    pub fit_iterations: u64,
    pub nonconverged_fits: u64,
}

/// A split must beat the parent loss by more than this to be accepted, and
/// losses this close count as tied during candidate comparison.
pub const SPLIT_TOLERANCE: f64 = 1e-9;

/// Candidate splits for one variable over the given rows.
///
/// Numeric variables contribute the values at every q-th quantile of the
/// sorted distinct observations (a full sweep when q_split exceeds the
/// distinct count), minus the maximum, which could never send a row right.
/// Categorical variables contribute one equality split per observed
/// category.  A constant column yields nothing.
pub fn candidate_splits(
    data: &Dataset,
    rows: &[usize],
    variable: usize,
    q_split: usize,
) -> Vec<Split> {
    let schema = &data.schema;
    match schema.variables[variable].kind {
        VarKind::Numeric => {
            let mut values: Vec<f64> = rows
                .iter()
                .map(|&r| data.context(r)[variable].as_num().expect("numeric variable"))
                .collect();
            values.sort_by(|a, b| a.partial_cmp(b).expect("finite context value"));
            values.dedup();
            let k = values.len();
            if k < 2 {
                return Vec::new();
            }
            let mut thresholds = Vec::new();
            for j in 1..=q_split {
                // ceil(j*k/q) as a 1-based rank into the distinct values.
                let rank = (j * k).div_ceil(q_split);
                let v = values[rank - 1];
                if v < values[k - 1] && thresholds.last() != Some(&v) {
                    thresholds.push(v);
                }
            }
            thresholds.into_iter().map(|t| Split::numeric(variable, t)).collect()
        }
        VarKind::Categorical => {
            let n_cats = schema.variables[variable].categories.len();
            let mut seen = vec![false; n_cats];
            for &r in rows {
                let code = data.context(r)[variable].as_cat().expect("categorical variable");
                seen[code as usize] = true;
            }
            if seen.iter().filter(|&&s| s).count() < 2 {
                return Vec::new();
            }
            seen.iter()
                .enumerate()
                .filter(|(_, &s)| s)
                .map(|(code, _)| Split::categorical(variable, code as u32))
                .collect()
        }
    }
}

fn partition(data: &Dataset, rows: &[usize], split: &Split) -> Result<(Vec<usize>, Vec<usize>)> {
    let mut left = Vec::new();
    let mut right = Vec::new();
    for &r in rows {
        if split.goes_left(data.context(r), &data.schema, false)? {
            left.push(r);
        } else {
            right.push(r);
        }
    }
    Ok((left, right))
}

/// Node-level fit settings: sgd hands over to newton on small nodes.
fn node_fit_config(cfg: &TrainConfig, n_rows: usize) -> FitConfig {
    let mut fit = cfg.fit_config.clone();
    if fit.optimizer == Optimizer::Sgd && n_rows <= cfg.adaptive_switch_threshold {
        fit.optimizer = Optimizer::Newton;
    }
    fit
}

struct FitTally {
    iterations: u64,
    nonconverged: u64,
}

impl FitTally {
    fn absorb(&mut self, report: &crate::optim::FitReport) {
        self.iterations += report.iterations;
        self.nonconverged += u64::from(!report.converged);
    }
}

/// Evaluates one candidate: partitions the rows, refits a model per child,
/// and reports the summed child losses (regularization excluded).  Returns
/// None for candidates whose children violate the size floor.
#[allow(clippy::too_many_arguments)]
fn evaluate_candidate(
    data: &Dataset,
    rows: &[usize],
    split: Split,
    family: LeafFamily,
    fit_cfg: &FitConfig,
    min_child: usize,
    warm: (Option<&LeafModel>, Option<&LeafModel>),
    stream: &mut Stream,
    tally: &mut FitTally,
) -> Result<Option<SplitOutcome>> {
    let (left_rows, right_rows) = partition(data, rows, &split)?;
    if left_rows.len() < min_child || right_rows.len() < min_child {
        return Ok(None);
    }
    let (left_model, left_rep) = leaf::fit(family, data, &left_rows, fit_cfg, warm.0, stream)?;
    let (right_model, right_rep) = leaf::fit(family, data, &right_rows, fit_cfg, warm.1, stream)?;
    tally.absorb(&left_rep);
    tally.absorb(&right_rep);
    let left_loss = leaf::loss(&left_model, data, &left_rows)?;
    let right_loss = leaf::loss(&right_model, data, &right_rows)?;
    Ok(Some(SplitOutcome {
        split,
        left_rows,
        right_rows,
        left_model,
        right_model,
        left_loss,
        right_loss,
    }))
}

/// Exhaustive candidate search at one node.
///
/// Candidates are scanned variable by variable; numeric thresholds ascend
/// and chain their warm starts so each fit begins from the previous
/// candidate's children, while categorical fits start from the parent.  The
/// first candidate seen wins ties within `SPLIT_TOLERANCE`, which encodes
/// the lowest-variable-then-smallest-threshold preference.  Returns no
/// split unless the best candidate beats the parent loss by more than the
/// tolerance.
pub fn select_split(
    data: &Dataset,
    rows: &[usize],
    family: LeafFamily,
    parent_model: &LeafModel,
    parent_loss: f64,
    cfg: &TrainConfig,
    stream: &mut Stream,
) -> Result<SplitSearch> {
    let mut search = SplitSearch {
        best: None,
        parent_loss,
        evaluations: 0,
        fit_iterations: 0,
        nonconverged_fits: 0,
    };
    let n = rows.len();
    if n < 2 * cfg.min_leaf_size {
        return Ok(search);
    }
    let balance_floor = (cfg.min_child_fraction * n as f64).ceil() as usize;
    let min_child = cfg.min_leaf_size.max(balance_floor);
    let fit_cfg = node_fit_config(cfg, n);
    let parent_warm = cfg.warm_start.then_some(parent_model);
    let mut tally = FitTally { iterations: 0, nonconverged: 0 };
    let mut best: Option<SplitOutcome> = None;

    for variable in 0..data.schema.len() {
        let candidates = candidate_splits(data, rows, variable, cfg.q_split);
        let numeric = matches!(data.schema.variables[variable].kind, VarKind::Numeric);
        // Previous candidate's children, reused along the threshold sweep.
        let mut chain: Option<(LeafModel, LeafModel)> = None;
        for split in candidates {
            let warm = match &chain {
                Some((l, r)) => (Some(l), Some(r)),
                None => (parent_warm, parent_warm),
            };
            let outcome = evaluate_candidate(
                data, rows, split, family, &fit_cfg, min_child, warm, stream, &mut tally,
            )?;
            let Some(outcome) = outcome else { continue };
            search.evaluations += 1;
            if numeric && cfg.warm_start {
                chain = Some((outcome.left_model.clone(), outcome.right_model.clone()));
            }
            let better = match &best {
                None => true,
                Some(b) => outcome.total_loss() < b.total_loss() - SPLIT_TOLERANCE,
            };
            if better {
                best = Some(outcome);
            }
        }
    }

    if let Some(b) = &best {
        if b.total_loss() >= parent_loss - SPLIT_TOLERANCE {
            best = None;
        }
    }
    search.best = best;
    search.fit_iterations = tally.iterations;
    search.nonconverged_fits = tally.nonconverged;
    Ok(search)
}

struct Frontier {
    arena_idx: usize,
    rows: Vec<usize>,
    model: LeafModel,
    loss: f64,
    /// Left/right turns from the root, low bit first; keys the node's
    /// random stream independently of worker scheduling.
    path: u64,
}

fn node_stream(seed: u64, depth: usize, path: u64) -> Stream {
    Stream::new(seed, &[label::SGD, depth as u64, path])
}

/// Grows a tree breadth-first.  The root model is fit cold; every depth
/// level dispatches its node searches in batches of `worker_count` jobs.
pub fn grow(data: &Dataset, family: LeafFamily, cfg: &TrainConfig) -> Result<(Tree, TrainReport)> {
    cfg.validate()?;
    if data.is_empty() {
        return Err(Error::EmptyInput("cannot grow a tree on an empty dataset"));
    }
    if family.payload() != data.kind {
        return Err(Error::FamilyMismatch {
            family: family.to_string(),
            payload: data.kind.to_string(),
        });
    }
    if data.len() < cfg.min_leaf_size {
        return Err(Error::Config(format!(
            "training data has {} rows, below min_leaf_size {}",
            data.len(),
            cfg.min_leaf_size
        )));
    }
    let start = Instant::now();
    let mut report = TrainReport::default();

    let mut rows: Vec<usize> = (0..data.len()).collect();
    // Bid-ordered rows keep every isotonic refit's sort near linear; order
    // is preserved by partitioning, so children stay sorted too.
    if family == LeafFamily::Isotonic {
        rows.sort_by(|&a, &b| {
            let (crate::data::Decision::Bid(x), crate::data::Decision::Bid(y)) =
                (data.decision(a), data.decision(b))
            else {
                unreachable!("isotonic family implies bid decisions");
            };
            x.partial_cmp(y).expect("finite bid").then(a.cmp(&b))
        });
    }

    let root_cfg = node_fit_config(cfg, rows.len());
    let mut root_stream = node_stream(cfg.seed, 0, 0);
    let (root_model, root_rep) = leaf::fit(family, data, &rows, &root_cfg, None, &mut root_stream)?;
    report.fit_iterations += root_rep.iterations;
    report.nonconverged_fits += u64::from(!root_rep.converged);
    let root_loss = leaf::loss(&root_model, data, &rows)?;

    let mut nodes: Vec<Node> = vec![Node::Leaf {
        leaf_id: 0,
        model: root_model.clone(),
        train_loss: root_loss,
        train_rows: rows.len() as u64,
    }];
    let mut frontier =
        vec![Frontier { arena_idx: 0, rows, model: root_model, loss: root_loss, path: 0 }];

    let mut depth = 0usize;
    while !frontier.is_empty() {
        if let Some(limit) = cfg.max_depth {
            if depth >= limit {
                break;
            }
        }
        let searches: Vec<Result<SplitSearch>> = run_batched(
            frontier
                .iter()
                .map(|f| (f.rows.as_slice(), &f.model, f.loss, f.path))
                .collect(),
            cfg.worker_count,
            &|(node_rows, model, loss, path): (&[usize], &LeafModel, f64, u64)| {
                let mut stream = node_stream(cfg.seed, depth + 1, path);
                select_split(data, node_rows, family, model, loss, cfg, &mut stream)
            },
        );

        let mut next = Vec::new();
        let mut depth_evals = 0u64;
        let examined = frontier.len();
        for (f, search) in frontier.into_iter().zip(searches) {
            let search = search?;
            depth_evals += search.evaluations;
            report.fit_iterations += search.fit_iterations;
            report.nonconverged_fits += search.nonconverged_fits;
            let Some(best) = search.best else { continue };
            let left_idx = nodes.len();
            let right_idx = nodes.len() + 1;
            nodes.push(Node::Leaf {
                leaf_id: 0,
                model: best.left_model.clone(),
                train_loss: best.left_loss,
                train_rows: best.left_rows.len() as u64,
            });
            nodes.push(Node::Leaf {
                leaf_id: 0,
                model: best.right_model.clone(),
                train_loss: best.right_loss,
                train_rows: best.right_rows.len() as u64,
            });
            nodes[f.arena_idx] = Node::Internal {
                split: best.split,
                left: left_idx,
                right: right_idx,
                model: f.model,
                train_loss: f.loss,
                train_rows: f.rows.len() as u64,
            };
            next.push(Frontier {
                arena_idx: left_idx,
                rows: best.left_rows,
                model: best.left_model,
                loss: best.left_loss,
                path: f.path,
            });
            next.push(Frontier {
                arena_idx: right_idx,
                rows: best.right_rows,
                model: best.right_model,
                loss: best.right_loss,
                path: f.path | (1 << depth),
            });
        }
        report.split_evaluations += depth_evals;
        log::info!(
            "depth={} nodes={} split_evals={} elapsed_ms={}",
            depth,
            examined,
            depth_evals,
            start.elapsed().as_millis()
        );
        frontier = next;
        depth += 1;
    }

    let mut tree = Tree { schema: data.schema.clone(), family, nodes, root: 0 };
    tree.renumber_leaves();
    tree.validate()?;

    report.depth = tree.depth();
    report.leaf_count = tree.leaf_count();
    report.train_loss = tree.nodes.iter().filter(|n| n.is_leaf()).map(|n| n.train_loss()).sum();
    report.elapsed_ms = start.elapsed().as_millis() as u64;
    Ok((tree, report))
}
