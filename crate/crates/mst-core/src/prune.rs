//! Cost-complexity pruning against a held-out validation set.
//!
//! The weakest-link sequence repeatedly collapses the internal node whose
//! removal costs the least training loss per pruned leaf; the returned tree
//! is the sequence element with the lowest validation metric, ties going to
//! the smaller subtree.  Collapsed nodes serve the model cached for them
//! during growth, so pruning needs no access to the training data.

use std::collections::HashMap;

use crate::data::Dataset;
use crate::error::{Error, Result};
use crate::metrics;
use crate::tree::{Node, Tree};

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum PruneMetric {
    /// The leaf family's own training loss (log loss for choice and
    /// logistic models, squared error for isotonic and constant).
    FamilyLoss,
    Mse,
    Nll,
}

impl std::str::FromStr for PruneMetric {
    type Err = String;

    fn from_str(s: &str) -> std::result::Result<Self, String> {
        match s {
            "family-loss" | "family_loss" => Ok(PruneMetric::FamilyLoss),
            "mse" => Ok(PruneMetric::Mse),
            "nll" => Ok(PruneMetric::Nll),
            other => Err(format!("unknown prune metric {other:?} (expected family-loss|mse|nll)")),
        }
    }
}

impl std::fmt::Display for PruneMetric {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        match self {
            PruneMetric::FamilyLoss => write!(f, "family-loss"),
            PruneMetric::Mse => write!(f, "mse"),
            PruneMetric::Nll => write!(f, "nll"),
        }
    }
}

#[derive(Debug, Clone)]
pub struct PruneConfig {
    pub metric: PruneMetric,
}

impl Default for PruneConfig {
    fn default() -> Self {
        PruneConfig { metric: PruneMetric::FamilyLoss }
    }
}

/// One element of the weakest-link sequence.
#[derive(Debug, Clone)]
pub struct PruneStep {
    /// Complexity price at which this subtree becomes optimal; 0 for the
    /// unpruned tree.
    pub alpha: f64,
    pub leaf_count: usize,
    /// Mean validation metric of this subtree.
    pub validation: f64,
}

#[derive(Debug, Clone)]
pub struct PruneReport {
    pub sequence: Vec<PruneStep>,
    pub selected: usize,
    pub validation_before: f64,
    pub validation_after: f64,
}

/// Losses this close are treated as equal when grouping weakest links and
/// when comparing validation metrics across subtrees.
pub const PRUNE_TOLERANCE: f64 = 1e-12;

fn row_metric(model: &crate::leaf::LeafModel, data: &Dataset, row: usize, metric: PruneMetric) -> Result<f64> {
    match metric {
        PruneMetric::FamilyLoss => model.row_loss(data.decision(row), data.response(row)),
        PruneMetric::Mse => metrics::row_mse(model, data, row),
        PruneMetric::Nll => metrics::row_nll(model, data, row),
    }
}

/// Sum of cached leaf training losses and the leaf count of `idx`'s
/// subtree, treating collapsed nodes as leaves.
fn subtree_stats(nodes: &[Node], collapsed: &[bool], idx: usize) -> (f64, usize) {
    match &nodes[idx] {
        Node::Leaf { train_loss, .. } => (*train_loss, 1),
        Node::Internal { train_loss, left, right, .. } => {
            if collapsed[idx] {
                (*train_loss, 1)
            } else {
                let (ll, lc) = subtree_stats(nodes, collapsed, *left);
                let (rl, rc) = subtree_stats(nodes, collapsed, *right);
                (ll + rl, lc + rc)
            }
        }
    }
}

/// Weakest-link prices for every live internal node.
fn link_prices(nodes: &[Node], collapsed: &[bool], idx: usize, out: &mut Vec<(usize, f64)>) {
    if collapsed[idx] {
        return;
    }
    if let Node::Internal { left, right, train_loss, .. } = &nodes[idx] {
        let (sub_loss, sub_leaves) = subtree_stats(nodes, collapsed, idx);
        let g = (*train_loss - sub_loss) / (sub_leaves - 1) as f64;
        out.push((idx, g));
        link_prices(nodes, collapsed, *left, out);
        link_prices(nodes, collapsed, *right, out);
    }
}

/// Live leaves (original or collapsed) under `idx`.
fn live_leaves(nodes: &[Node], collapsed: &[bool], idx: usize, out: &mut Vec<usize>) {
    match &nodes[idx] {
        Node::Leaf { .. } => out.push(idx),
        Node::Internal { left, right, .. } => {
            if collapsed[idx] {
                out.push(idx);
            } else {
                live_leaves(nodes, collapsed, *left, out);
                live_leaves(nodes, collapsed, *right, out);
            }
        }
    }
}

/// Rebuilds a standalone tree from the original arena with the flagged
/// nodes collapsed into leaves serving their cached models.
fn materialize(tree: &Tree, collapsed: &[bool]) -> Result<Tree> {
    fn copy(
        src: &[Node],
        collapsed: &[bool],
        idx: usize,
        dst: &mut Vec<Node>,
    ) -> usize {
        let slot = dst.len();
        match &src[idx] {
            Node::Leaf { .. } => {
                dst.push(src[idx].clone());
                slot
            }
            Node::Internal { split, left, right, model, train_loss, train_rows } => {
                if collapsed[idx] {
                    dst.push(Node::Leaf {
                        leaf_id: 0,
                        model: model.clone(),
                        train_loss: *train_loss,
                        train_rows: *train_rows,
                    });
                    return slot;
                }
                dst.push(src[idx].clone());
                let l = copy(src, collapsed, *left, dst);
                let r = copy(src, collapsed, *right, dst);
                let Node::Internal { left, right, .. } = &mut dst[slot] else { unreachable!() };
                *left = l;
                *right = r;
                let _ = split;
                slot
            }
        }
    }
    let mut nodes = Vec::new();
    copy(&tree.nodes, collapsed, tree.root, &mut nodes);
    let mut out = Tree { schema: tree.schema.clone(), family: tree.family, nodes, root: 0 };
    out.renumber_leaves();
    out.validate()?;
    Ok(out)
}

/// Prunes `tree` against held-out data.  The whole weakest-link sequence is
/// evaluated and the subtree with the lowest mean validation metric wins;
/// within tolerance, fewer leaves win.
pub fn prune(tree: &Tree, validation: &Dataset, cfg: &PruneConfig) -> Result<(Tree, PruneReport)> {
    if validation.is_empty() {
        return Err(Error::EmptyInput("pruning needs a non-empty validation set"));
    }
    if validation.kind != tree.family.payload() {
        return Err(Error::FamilyMismatch {
            family: tree.family.to_string(),
            payload: validation.kind.to_string(),
        });
    }
    tree.validate()?;
    let n_val = validation.len() as f64;
    let nodes = &tree.nodes;
    let mut collapsed = vec![false; nodes.len()];

    // Route every validation row once; afterwards only rows under a
    // collapsing node are rescored.
    let mut leaf_rows: HashMap<usize, Vec<usize>> = HashMap::new();
    for row in 0..validation.len() {
        let leaf = tree.route_arena(validation.context(row), false)?;
        leaf_rows.entry(leaf).or_default().push(row);
    }
    let mut leaf_val: HashMap<usize, f64> = HashMap::new();
    for (&leaf, rows) in &leaf_rows {
        let model = nodes[leaf].model();
        let mut sum = 0.0;
        for &r in rows {
            sum += row_metric(model, validation, r, cfg.metric)?;
        }
        leaf_val.insert(leaf, sum);
    }

    let mut snapshots: Vec<(Vec<bool>, PruneStep)> = Vec::new();
    let total: f64 = leaf_val.values().sum();
    snapshots.push((
        collapsed.clone(),
        PruneStep { alpha: 0.0, leaf_count: tree.leaf_count(), validation: total / n_val },
    ));

    while !collapsed[tree.root] && !nodes[tree.root].is_leaf() {
        let mut prices = Vec::new();
        link_prices(nodes, &collapsed, tree.root, &mut prices);
        let min_g = prices.iter().map(|&(_, g)| g).fold(f64::INFINITY, f64::min);
        // Top-most nodes within tolerance of the weakest price all collapse
        // in one step, which keeps the alpha sequence strictly increasing.
        let mut step_set = Vec::new();
        let mut stack = vec![tree.root];
        while let Some(idx) = stack.pop() {
            if collapsed[idx] {
                continue;
            }
            if let Node::Internal { left, right, .. } = &nodes[idx] {
                let g = prices.iter().find(|&&(i, _)| i == idx).expect("priced node").1;
                if g <= min_g + PRUNE_TOLERANCE {
                    step_set.push(idx);
                } else {
                    stack.push(*left);
                    stack.push(*right);
                }
            }
        }
        for &idx in &step_set {
            let mut under = Vec::new();
            live_leaves(nodes, &collapsed, idx, &mut under);
            let mut rows = Vec::new();
            for leaf in under {
                if let Some(r) = leaf_rows.remove(&leaf) {
                    rows.extend(r);
                }
                leaf_val.remove(&leaf);
            }
            let model = nodes[idx].model();
            let mut sum = 0.0;
            for &r in &rows {
                sum += row_metric(model, validation, r, cfg.metric)?;
            }
            collapsed[idx] = true;
            leaf_rows.insert(idx, rows);
            leaf_val.insert(idx, sum);
        }
        let total: f64 = leaf_val.values().sum();
        let (_, leaf_count) = subtree_stats(nodes, &collapsed, tree.root);
        snapshots.push((
            collapsed.clone(),
            PruneStep { alpha: min_g, leaf_count, validation: total / n_val },
        ));
    }

    let min_val = snapshots
        .iter()
        .map(|(_, s)| s.validation)
        .fold(f64::INFINITY, f64::min);
    // Later snapshots have strictly fewer leaves, so the last one within
    // tolerance of the minimum is the smallest tied subtree.
    let selected = snapshots
        .iter()
        .rposition(|(_, s)| s.validation <= min_val + PRUNE_TOLERANCE)
        .expect("non-empty sequence");

    let pruned = materialize(tree, &snapshots[selected].0)?;
    let report = PruneReport {
        validation_before: snapshots[0].1.validation,
        validation_after: snapshots[selected].1.validation,
        sequence: snapshots.into_iter().map(|(_, s)| s).collect(),
        selected,
    };
    Ok((pruned, report))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::data::{ContextSchema, ContextValue, Decision, PayloadKind, Response, Variable};
    use crate::leaf::{ConstantModel, LeafFamily, LeafModel};
    use crate::rng::Stream;
    use crate::tree::Split;
    use approx::assert_abs_diff_eq;

    fn constant(p: f64) -> LeafModel {
        LeafModel::Constant(ConstantModel { probability: p })
    }

    /// Root splits x at 0.5; left child splits again at 0.25.  Training
    /// losses are arranged so the left child is the weakest link.
    fn two_level_tree(leaf_probs: [f64; 3], root_prob: f64) -> Tree {
        let schema = ContextSchema::new(vec![Variable::numeric("x")]).unwrap();
        let nodes = vec![
            Node::Internal {
                split: Split::numeric(0, 0.5),
                left: 1,
                right: 2,
                model: constant(root_prob),
                train_loss: 20.0,
                train_rows: 100,
            },
            Node::Internal {
                split: Split::numeric(0, 0.25),
                left: 3,
                right: 4,
                model: constant(leaf_probs[0]),
                train_loss: 8.0,
                train_rows: 50,
            },
            Node::Leaf { leaf_id: 2, model: constant(leaf_probs[2]), train_loss: 5.0, train_rows: 50 },
            Node::Leaf { leaf_id: 0, model: constant(leaf_probs[0]), train_loss: 3.0, train_rows: 25 },
            Node::Leaf { leaf_id: 1, model: constant(leaf_probs[1]), train_loss: 3.0, train_rows: 25 },
        ];
        Tree::from_nodes(schema, LeafFamily::Constant, nodes, 0).unwrap()
    }

    fn auction_rows(pattern: &[(f64, bool)]) -> Dataset {
        let schema = ContextSchema::new(vec![Variable::numeric("x")]).unwrap();
        let mut data = Dataset::new(schema, PayloadKind::Auction, 0);
        for &(x, w) in pattern {
            data.push(vec![ContextValue::Num(x)], Decision::Bid(1.0), Response::Win(w)).unwrap();
        }
        data
    }

    #[test]
    fn depth_zero_tree_is_returned_unchanged() {
        let schema = ContextSchema::new(vec![Variable::numeric("x")]).unwrap();
        let tree = Tree::single_leaf(schema, LeafFamily::Constant, constant(0.5));
        let val = auction_rows(&[(0.2, true), (0.8, false)]);
        let (pruned, report) = prune(&tree, &val, &PruneConfig::default()).unwrap();
        assert_eq!(pruned, tree);
        assert_eq!(report.sequence.len(), 1);
        assert_eq!(report.selected, 0);
    }

    #[test]
    fn weakest_link_alphas_increase_strictly() {
        let tree = two_level_tree([0.3, 0.6, 0.8], 0.55);
        let val = auction_rows(&[
            (0.1, false),
            (0.2, true),
            (0.4, true),
            (0.6, true),
            (0.9, false),
        ]);
        let (_, report) = prune(&tree, &val, &PruneConfig::default()).unwrap();
        // alpha at step 1: inner node g = (8-6)/1 = 2; after its collapse
        // the root's g = (20-13)/1 = 7.
        assert_eq!(report.sequence.len(), 3);
        assert_abs_diff_eq!(report.sequence[1].alpha, 2.0, epsilon = 1e-12);
        assert_abs_diff_eq!(report.sequence[2].alpha, 7.0, epsilon = 1e-12);
        for w in report.sequence.windows(2) {
            assert!(w[1].alpha > w[0].alpha);
        }
        assert_eq!(report.sequence[0].leaf_count, 3);
        assert_eq!(report.sequence[1].leaf_count, 2);
        assert_eq!(report.sequence[2].leaf_count, 1);
    }

    #[test]
    fn validation_never_worse_than_unpruned() {
        // Leaf models disagree with validation outcomes; the root model is
        // closer, so pruning should improve the metric and never hurt it.
        let tree = two_level_tree([0.05, 0.1, 0.95], 0.5);
        let mut stream = Stream::new(8, &[]);
        let pattern: Vec<(f64, bool)> =
            (0..200).map(|_| (stream.uniform(), stream.bernoulli(0.5))).collect();
        let val = auction_rows(&pattern);
        let (pruned, report) = prune(&tree, &val, &PruneConfig::default()).unwrap();
        assert!(report.validation_after <= report.validation_before + PRUNE_TOLERANCE);
        assert_eq!(pruned.depth(), 0);
    }

    #[test]
    fn good_splits_survive_pruning() {
        // Validation strongly matches the leaf models' regimes, so the full
        // tree must survive.
        let tree = two_level_tree([0.0, 0.5, 1.0], 0.5);
        let mut pattern = Vec::new();
        for i in 0..60 {
            let x = (i as f64 + 0.5) / 60.0;
            let win = match x {
                v if v <= 0.25 => false,
                v if v <= 0.5 => i % 2 == 0,
                _ => true,
            };
            pattern.push((x, win));
        }
        let val = auction_rows(&pattern);
        let (pruned, report) = prune(&tree, &val, &PruneConfig::default()).unwrap();
        assert_eq!(pruned.leaf_count(), 3);
        assert_eq!(report.selected, 0);
    }

    #[test]
    fn tied_validation_prefers_the_smaller_subtree() {
        // Identical models everywhere: every subtree scores the same, so
        // the root-only tree wins.
        let tree = two_level_tree([0.4, 0.4, 0.4], 0.4);
        let val = auction_rows(&[(0.2, true), (0.4, false), (0.7, true), (0.9, false)]);
        let (pruned, report) = prune(&tree, &val, &PruneConfig::default()).unwrap();
        assert_eq!(pruned.depth(), 0);
        assert_eq!(report.selected, report.sequence.len() - 1);
    }

    #[test]
    fn output_is_a_subtree_with_identical_splits() {
        let tree = two_level_tree([0.1, 0.6, 0.9], 0.5);
        let mut stream = Stream::new(77, &[]);
        let pattern: Vec<(f64, bool)> =
            (0..100).map(|_| (stream.uniform(), stream.bernoulli(0.6))).collect();
        let val = auction_rows(&pattern);
        let (pruned, _) = prune(&tree, &val, &PruneConfig::default()).unwrap();
        let input_splits: Vec<_> = tree
            .nodes
            .iter()
            .filter_map(|n| match n {
                Node::Internal { split, .. } => Some(split.clone()),
                _ => None,
            })
            .collect();
        for node in &pruned.nodes {
            if let Node::Internal { split, .. } = node {
                assert!(input_splits.contains(split), "split {split:?} not in the input tree");
            }
        }
        assert!(pruned.leaf_count() <= tree.leaf_count());
    }

    #[test]
    fn pruning_is_idempotent() {
        let tree = two_level_tree([0.2, 0.5, 0.9], 0.45);
        let mut stream = Stream::new(15, &[]);
        let pattern: Vec<(f64, bool)> = (0..150)
            .map(|_| {
                let x = stream.uniform();
                (x, stream.bernoulli(if x > 0.5 { 0.9 } else { 0.3 }))
            })
            .collect();
        let val = auction_rows(&pattern);
        let cfg = PruneConfig::default();
        let (once, _) = prune(&tree, &val, &cfg).unwrap();
        let (twice, _) = prune(&once, &val, &cfg).unwrap();
        assert_eq!(once, twice);
    }

    #[test]
    fn empty_validation_is_rejected() {
        let tree = two_level_tree([0.2, 0.5, 0.9], 0.45);
        let empty = auction_rows(&[]);
        assert!(matches!(
            prune(&tree, &empty, &PruneConfig::default()),
            Err(Error::EmptyInput(_))
        ));
    }

    #[test]
    fn mse_and_nll_metrics_run() {
        let tree = two_level_tree([0.2, 0.5, 0.9], 0.45);
        let mut stream = Stream::new(5, &[]);
        let pattern: Vec<(f64, bool)> =
            (0..80).map(|_| (stream.uniform(), stream.bernoulli(0.5))).collect();
        let val = auction_rows(&pattern);
        for metric in [PruneMetric::Mse, PruneMetric::Nll] {
            let (pruned, report) = prune(&tree, &val, &PruneConfig { metric }).unwrap();
            assert!(report.validation_after <= report.validation_before + PRUNE_TOLERANCE);
            assert!(pruned.leaf_count() <= tree.leaf_count());
        }
    }
}
