//! Binary market-segmentation tree over contexts.
//!
//! Numeric splits send `x[j] <= threshold` left; categorical splits send
//! `x[j] == category` left.  Each node carries the model fit on its training
//! rows during growth: for leaves it is the serving model, for internal nodes
//! it is the collapse fallback the pruner promotes without refitting.

use serde::{Deserialize, Serialize};

use crate::data::{ContextSchema, ContextValue, Dataset, VarKind, UNKNOWN_CATEGORY};
use crate::error::{Error, Result};
use crate::leaf::{LeafFamily, LeafModel};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "lowercase")]
pub enum SplitRule {
    Numeric { threshold: f64 },
    Categorical { category: u32 },
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Split {
    pub variable: usize,
    #[serde(flatten)]
    pub rule: SplitRule,
}

impl Split {
    pub fn numeric(variable: usize, threshold: f64) -> Self {
        Split { variable, rule: SplitRule::Numeric { threshold } }
    }

    pub fn categorical(variable: usize, category: u32) -> Self {
        Split { variable, rule: SplitRule::Categorical { category } }
    }

    /// True routes left.  `strict` turns an unknown category code into an
    /// error instead of routing it right.
    pub fn goes_left(&self, ctx: &[ContextValue], schema: &ContextSchema, strict: bool) -> Result<bool> {
        let value = ctx.get(self.variable).ok_or_else(|| {
            Error::DimensionMismatch(format!("context lacks variable {}", self.variable))
        })?;
        match (&self.rule, value) {
            (SplitRule::Numeric { threshold }, ContextValue::Num(x)) => Ok(x <= threshold),
            (SplitRule::Categorical { category }, ContextValue::Cat(code)) => {
                if *code == UNKNOWN_CATEGORY {
                    if strict {
                        let var = &schema.variables[self.variable];
                        return Err(Error::UnknownCategory {
                            variable: var.name.clone(),
                            value: "out-of-schema category".into(),
                        });
                    }
                    return Ok(false);
                }
                Ok(code == category)
            }
            _ => Err(Error::SchemaMismatch(format!(
                "split on variable {} does not match context value kind",
                self.variable
            ))),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "type", rename_all = "lowercase")]
pub enum Node {
    Internal {
        split: Split,
        left: usize,
        right: usize,
        model: LeafModel,
        train_loss: f64,
        train_rows: u64,
    },
    Leaf {
        leaf_id: u32,
        model: LeafModel,
        train_loss: f64,
        train_rows: u64,
    },
}

impl Node {
    pub fn model(&self) -> &LeafModel {
        match self {
            Node::Internal { model, .. } | Node::Leaf { model, .. } => model,
        }
    }

    pub fn train_loss(&self) -> f64 {
        match self {
            Node::Internal { train_loss, .. } | Node::Leaf { train_loss, .. } => *train_loss,
        }
    }

    pub fn train_rows(&self) -> u64 {
        match self {
            Node::Internal { train_rows, .. } | Node::Leaf { train_rows, .. } => *train_rows,
        }
    }

    pub fn is_leaf(&self) -> bool {
        matches!(self, Node::Leaf { .. })
    }
}

/// Deserialization restores fields verbatim; callers loading untrusted
/// documents must run `validate` (the format module's readers do).
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Tree {
    pub schema: ContextSchema,
    pub family: LeafFamily,
    pub nodes: Vec<Node>,
    pub root: usize,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum DescribeFormat {
    Text,
    Dot,
}

impl Tree {
    pub fn single_leaf(schema: ContextSchema, family: LeafFamily, model: LeafModel) -> Tree {
        Tree {
            schema,
            family,
            nodes: vec![Node::Leaf { leaf_id: 0, model, train_loss: 0.0, train_rows: 0 }],
            root: 0,
        }
    }

    /// Builds and validates a tree from an explicit node arena.
    pub fn from_nodes(
        schema: ContextSchema,
        family: LeafFamily,
        nodes: Vec<Node>,
        root: usize,
    ) -> Result<Tree> {
        let tree = Tree { schema, family, nodes, root };
        tree.validate()?;
        Ok(tree)
    }

    /// Structural validation: every node reachable exactly once, indices in
    /// bounds, splits consistent with the schema, leaf ids 0..L-1 in
    /// left-to-right depth-first order, one model family throughout.
    pub fn validate(&self) -> Result<()> {
        if self.nodes.is_empty() {
            return Err(Error::Decode("tree has no nodes".into()));
        }
        if self.root >= self.nodes.len() {
            return Err(Error::Decode("root index out of bounds".into()));
        }
        let mut visited = vec![false; self.nodes.len()];
        let mut next_leaf = 0u32;
        let mut stack = vec![(self.root, false)];
        // Manual DFS, right child pushed first so lefts come out first.
        let mut order = Vec::with_capacity(self.nodes.len());
        while let Some((idx, _)) = stack.pop() {
            if idx >= self.nodes.len() {
                return Err(Error::Decode(format!("child index {idx} out of bounds")));
            }
            if visited[idx] {
                return Err(Error::Decode(format!("node {idx} reachable more than once")));
            }
            visited[idx] = true;
            order.push(idx);
            match &self.nodes[idx] {
                Node::Internal { split, left, right, model, train_loss, .. } => {
                    if model.family() != self.family {
                        return Err(Error::Decode(format!(
                            "node {idx} model family {} does not match tree family {}",
                            model.family(),
                            self.family
                        )));
                    }
                    if !train_loss.is_finite() {
                        return Err(Error::Decode(format!("node {idx} has non-finite loss")));
                    }
                    let var = self.schema.variables.get(split.variable).ok_or_else(|| {
                        Error::Decode(format!("split variable {} not in schema", split.variable))
                    })?;
                    match (&split.rule, &var.kind) {
                        (SplitRule::Numeric { threshold }, VarKind::Numeric) => {
                            if !threshold.is_finite() {
                                return Err(Error::Decode("non-finite split threshold".into()));
                            }
                        }
                        (SplitRule::Categorical { category }, VarKind::Categorical) => {
                            if *category as usize >= var.categories.len() {
                                return Err(Error::Decode(format!(
                                    "split category {} outside schema for {:?}",
                                    category, var.name
                                )));
                            }
                        }
                        _ => {
                            return Err(Error::Decode(format!(
                                "split kind does not match variable {:?}",
                                var.name
                            )))
                        }
                    }
                    stack.push((*right, false));
                    stack.push((*left, false));
                }
                Node::Leaf { leaf_id, model, train_loss, .. } => {
                    if model.family() != self.family {
                        return Err(Error::Decode(format!(
                            "leaf {leaf_id} family {} does not match tree family {}",
                            model.family(),
                            self.family
                        )));
                    }
                    if !train_loss.is_finite() {
                        return Err(Error::Decode("leaf has non-finite loss".into()));
                    }
                    if *leaf_id != next_leaf {
                        return Err(Error::Decode(format!(
                            "leaf ids not contiguous depth-first: expected {next_leaf}, found {leaf_id}"
                        )));
                    }
                    next_leaf += 1;
                }
            }
        }
        if visited.iter().any(|v| !v) {
            return Err(Error::Decode("tree arena contains unreachable nodes".into()));
        }
        let _ = order;
        Ok(())
    }

    pub fn leaf_count(&self) -> usize {
        self.nodes.iter().filter(|n| n.is_leaf()).count()
    }

    pub fn depth(&self) -> usize {
        fn rec(tree: &Tree, idx: usize) -> usize {
            match &tree.nodes[idx] {
                Node::Leaf { .. } => 0,
                Node::Internal { left, right, .. } => 1 + rec(tree, *left).max(rec(tree, *right)),
            }
        }
        rec(self, self.root)
    }

    /// Arena index of the leaf the context routes to.
    pub fn route_arena(&self, ctx: &[ContextValue], strict: bool) -> Result<usize> {
        let mut idx = self.root;
        loop {
            match &self.nodes[idx] {
                Node::Leaf { .. } => return Ok(idx),
                Node::Internal { split, left, right, .. } => {
                    idx = if split.goes_left(ctx, &self.schema, strict)? { *left } else { *right };
                }
            }
        }
    }

    /// Leaf id (0-based, left-to-right) the context routes to.
    pub fn route(&self, ctx: &[ContextValue], strict: bool) -> Result<u32> {
        match &self.nodes[self.route_arena(ctx, strict)?] {
            Node::Leaf { leaf_id, .. } => Ok(*leaf_id),
            Node::Internal { .. } => unreachable!(),
        }
    }

    pub fn leaf_model(&self, ctx: &[ContextValue], strict: bool) -> Result<&LeafModel> {
        Ok(self.nodes[self.route_arena(ctx, strict)?].model())
    }

    /// Summed training loss of the routed leaf models over `rows`; no refits.
    /// An empty selection has zero loss.
    pub fn loss_rows(&self, data: &Dataset, rows: &[usize]) -> Result<f64> {
        let mut total = 0.0;
        for &r in rows {
            let model = self.leaf_model(data.context(r), false)?;
            total += model.row_loss(data.decision(r), data.response(r))?;
        }
        Ok(total)
    }

    pub fn loss(&self, data: &Dataset) -> Result<f64> {
        let rows: Vec<usize> = (0..data.len()).collect();
        self.loss_rows(data, &rows)
    }

    /// Human-readable rendering: indented text or Graphviz dot.
    pub fn describe(&self, format: DescribeFormat) -> String {
        match format {
            DescribeFormat::Text => {
                let mut out = String::new();
                self.describe_text(self.root, 0, &mut out);
                out
            }
            DescribeFormat::Dot => self.describe_dot(),
        }
    }

    fn split_label(&self, split: &Split, ascii: bool) -> String {
        let var = &self.schema.variables[split.variable];
        match &split.rule {
            SplitRule::Numeric { threshold } => {
                let op = if ascii { "<=" } else { "\u{2264}" };
                format!("{} {} {}", var.name, op, threshold)
            }
            SplitRule::Categorical { category } => {
                format!("{} = {}", var.name, var.categories[*category as usize])
            }
        }
    }

    fn describe_text(&self, idx: usize, depth: usize, out: &mut String) {
        let pad = "  ".repeat(depth);
        match &self.nodes[idx] {
            Node::Leaf { leaf_id, model, train_rows, .. } => {
                out.push_str(&format!("{pad}leaf {leaf_id}: {} (rows={train_rows})\n", model.summary()));
            }
            Node::Internal { split, left, right, .. } => {
                out.push_str(&format!("{pad}{}\n", self.split_label(split, false)));
                self.describe_text(*left, depth + 1, out);
                self.describe_text(*right, depth + 1, out);
            }
        }
    }

    fn describe_dot(&self) -> String {
        let mut out = String::from("digraph tree {\n");
        for (idx, node) in self.nodes.iter().enumerate() {
            match node {
                Node::Leaf { leaf_id, model, .. } => {
                    out.push_str(&format!(
                        "  n{idx} [shape=box, label=\"leaf {leaf_id}: {}\"];\n",
                        model.summary()
                    ));
                }
                Node::Internal { split, .. } => {
                    out.push_str(&format!(
                        "  n{idx} [label=\"{}\"];\n",
                        self.split_label(split, true)
                    ));
                }
            }
        }
        for (idx, node) in self.nodes.iter().enumerate() {
            if let Node::Internal { left, right, .. } = node {
                out.push_str(&format!("  n{idx} -> n{} [label=\"yes\"];\n", left));
                out.push_str(&format!("  n{idx} -> n{} [label=\"no\"];\n", right));
            }
        }
        out.push_str("}\n");
        out
    }

    /// Reassigns leaf ids in left-to-right depth-first order.
    pub fn renumber_leaves(&mut self) {
        let mut next = 0u32;
        let mut stack = vec![self.root];
        let mut order = Vec::new();
        while let Some(idx) = stack.pop() {
            match &self.nodes[idx] {
                Node::Leaf { .. } => order.push(idx),
                Node::Internal { left, right, .. } => {
                    stack.push(*right);
                    stack.push(*left);
                }
            }
        }
        for idx in order {
            if let Node::Leaf { leaf_id, .. } = &mut self.nodes[idx] {
                *leaf_id = next;
                next += 1;
            }
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::data::{Decision, PayloadKind, Response, Variable};
    use crate::leaf::{ConstantModel, MnlShared};
    use approx::assert_abs_diff_eq;

    fn mnl(beta: Vec<f64>) -> LeafModel {
        LeafModel::Mnl(MnlShared { beta })
    }

    fn leaf(leaf_id: u32, model: LeafModel) -> Node {
        Node::Leaf { leaf_id, model, train_loss: 0.0, train_rows: 0 }
    }

    /// Age/location/gender demographic tree with five segments; a 30-year-old
    /// male in the USA lands in the second segment (leaf id 1).
    fn demographic_tree() -> Tree {
        let schema = ContextSchema::new(vec![
            Variable::numeric("age"),
            Variable::categorical("location", vec!["USA".into(), "Germany".into()]),
            Variable::categorical("gender", vec!["Female".into(), "Male".into()]),
        ])
        .unwrap();
        let nodes = vec![
            Node::Internal {
                split: Split::numeric(0, 40.0),
                left: 1,
                right: 2,
                model: mnl(vec![0.0]),
                train_loss: 0.0,
                train_rows: 0,
            },
            Node::Internal {
                split: Split::categorical(1, 0),
                left: 3,
                right: 4,
                model: mnl(vec![0.0]),
                train_loss: 0.0,
                train_rows: 0,
            },
            Node::Internal {
                split: Split::categorical(2, 0),
                left: 5,
                right: 6,
                model: mnl(vec![0.0]),
                train_loss: 0.0,
                train_rows: 0,
            },
            Node::Internal {
                split: Split::categorical(2, 0),
                left: 7,
                right: 8,
                model: mnl(vec![0.0]),
                train_loss: 0.0,
                train_rows: 0,
            },
            leaf(2, mnl(vec![0.2])),
            leaf(3, mnl(vec![0.3])),
            leaf(4, mnl(vec![0.4])),
            leaf(0, mnl(vec![0.0])),
            leaf(1, mnl(vec![0.1])),
        ];
        Tree::from_nodes(schema, LeafFamily::Mnl, nodes, 0).unwrap()
    }

    #[test]
    fn demographic_context_routes_to_second_segment() {
        let tree = demographic_tree();
        let ctx = [ContextValue::Num(30.0), ContextValue::Cat(0), ContextValue::Cat(1)];
        assert_eq!(tree.route(&ctx, true).unwrap(), 1);
    }

    #[test]
    fn depth_zero_routes_everything_to_leaf_zero() {
        let schema = ContextSchema::new(vec![Variable::numeric("x")]).unwrap();
        let tree = Tree::single_leaf(schema, LeafFamily::Mnl, mnl(vec![1.0]));
        assert_eq!(tree.route(&[ContextValue::Num(-5.0)], true).unwrap(), 0);
        assert_eq!(tree.route(&[ContextValue::Num(5.0)], true).unwrap(), 0);
        assert_eq!(tree.depth(), 0);
        assert_eq!(tree.leaf_count(), 1);
    }

    #[test]
    fn boundary_routes_left() {
        let schema = ContextSchema::new(vec![Variable::numeric("x")]).unwrap();
        let nodes = vec![
            Node::Internal {
                split: Split::numeric(0, 1.5),
                left: 1,
                right: 2,
                model: mnl(vec![0.0]),
                train_loss: 0.0,
                train_rows: 0,
            },
            leaf(0, mnl(vec![0.0])),
            leaf(1, mnl(vec![1.0])),
        ];
        let tree = Tree::from_nodes(schema, LeafFamily::Mnl, nodes, 0).unwrap();
        assert_eq!(tree.route(&[ContextValue::Num(1.5)], true).unwrap(), 0);
        assert_eq!(tree.route(&[ContextValue::Num(1.5000001)], true).unwrap(), 1);
    }

    #[test]
    fn unknown_category_lenient_goes_right_strict_errors() {
        let schema =
            ContextSchema::new(vec![Variable::categorical("site", vec!["a".into(), "b".into()])])
                .unwrap();
        let nodes = vec![
            Node::Internal {
                split: Split::categorical(0, 0),
                left: 1,
                right: 2,
                model: mnl(vec![0.0]),
                train_loss: 0.0,
                train_rows: 0,
            },
            leaf(0, mnl(vec![0.0])),
            leaf(1, mnl(vec![1.0])),
        ];
        let tree = Tree::from_nodes(schema, LeafFamily::Mnl, nodes, 0).unwrap();
        let ctx = [ContextValue::Cat(UNKNOWN_CATEGORY)];
        assert_eq!(tree.route(&ctx, false).unwrap(), 1);
        assert!(matches!(tree.route(&ctx, true), Err(Error::UnknownCategory { .. })));
    }

    #[test]
    fn validation_rejects_malformed_trees() {
        let schema = ContextSchema::new(vec![Variable::numeric("x")]).unwrap();
        // child index out of bounds
        let bad = Tree {
            schema: schema.clone(),
            family: LeafFamily::Mnl,
            nodes: vec![Node::Internal {
                split: Split::numeric(0, 0.0),
                left: 1,
                right: 7,
                model: mnl(vec![0.0]),
                train_loss: 0.0,
                train_rows: 0,
            }],
            root: 0,
        };
        assert!(bad.validate().is_err());
        // leaf ids out of order
        let bad = Tree {
            schema: schema.clone(),
            family: LeafFamily::Mnl,
            nodes: vec![
                Node::Internal {
                    split: Split::numeric(0, 0.0),
                    left: 1,
                    right: 2,
                    model: mnl(vec![0.0]),
                    train_loss: 0.0,
                    train_rows: 0,
                },
                leaf(1, mnl(vec![0.0])),
                leaf(0, mnl(vec![0.0])),
            ],
            root: 0,
        };
        assert!(bad.validate().is_err());
        // split variable outside schema
        let bad = Tree {
            schema,
            family: LeafFamily::Mnl,
            nodes: vec![
                Node::Internal {
                    split: Split::numeric(3, 0.0),
                    left: 1,
                    right: 2,
                    model: mnl(vec![0.0]),
                    train_loss: 0.0,
                    train_rows: 0,
                },
                leaf(0, mnl(vec![0.0])),
                leaf(1, mnl(vec![0.0])),
            ],
            root: 0,
        };
        assert!(bad.validate().is_err());
    }

    fn binary_auction_dataset(wins: &[bool]) -> Dataset {
        let schema = ContextSchema::new(vec![Variable::numeric("x")]).unwrap();
        let mut data = Dataset::new(schema, PayloadKind::Auction, 0);
        for (i, &w) in wins.iter().enumerate() {
            data.push(vec![ContextValue::Num(i as f64)], Decision::Bid(1.0), Response::Win(w))
                .unwrap();
        }
        data
    }

    #[test]
    fn constant_tree_loss_matches_variance_identity() {
        let wins = [true, true, false, true, false, true, true, false, true, true];
        let data = binary_auction_dataset(&wins);
        let mean = 0.7;
        let schema = data.schema.clone();
        let tree = Tree::single_leaf(
            schema,
            LeafFamily::Constant,
            LeafModel::Constant(ConstantModel { probability: mean }),
        );
        let loss = tree.loss(&data).unwrap();
        // Direct summation oracle and the n*p*(1-p) identity.
        let direct: f64 =
            wins.iter().map(|&w| { let y = if w { 1.0 } else { 0.0 }; (y - mean) * (y - mean) }).sum();
        assert_abs_diff_eq!(loss, direct, epsilon = 1e-12);
        assert_abs_diff_eq!(loss, 10.0 * mean * (1.0 - mean), epsilon = 1e-12);
    }

    #[test]
    fn loss_is_additive_and_empty_is_zero() {
        let wins = [true, false, true, true, false];
        let data = binary_auction_dataset(&wins);
        let tree = Tree::single_leaf(
            data.schema.clone(),
            LeafFamily::Constant,
            LeafModel::Constant(ConstantModel { probability: 0.4 }),
        );
        assert_eq!(tree.loss_rows(&data, &[]).unwrap(), 0.0);
        let all = tree.loss(&data).unwrap();
        let a = tree.loss_rows(&data, &[0, 1]).unwrap();
        let b = tree.loss_rows(&data, &[2, 3, 4]).unwrap();
        assert_abs_diff_eq!(all, a + b, epsilon = 1e-12);
        // Duplicating every row doubles the loss.
        let mut doubled = data.clone();
        doubled.extend(&data).unwrap();
        let twice = tree.loss(&doubled).unwrap();
        assert_abs_diff_eq!(twice, 2.0 * all, epsilon = 1e-12 * (1.0 + twice.abs()));
    }

    #[test]
    fn text_rendering_of_single_split_is_three_lines() {
        let schema = ContextSchema::new(vec![Variable::numeric("age")]).unwrap();
        let nodes = vec![
            Node::Internal {
                split: Split::numeric(0, 40.0),
                left: 1,
                right: 2,
                model: mnl(vec![0.0]),
                train_loss: 0.0,
                train_rows: 0,
            },
            leaf(0, mnl(vec![0.5])),
            leaf(1, mnl(vec![-0.5])),
        ];
        let tree = Tree::from_nodes(schema, LeafFamily::Mnl, nodes, 0).unwrap();
        let text = tree.describe(DescribeFormat::Text);
        let lines: Vec<&str> = text.trim_end().lines().collect();
        assert_eq!(lines.len(), 3);
        assert!(lines[0].contains("age \u{2264} 40"));
        assert!(lines[1].trim_start().starts_with("leaf 0:"));
        assert!(lines[2].trim_start().starts_with("leaf 1:"));
    }

    #[test]
    fn dot_rendering_has_node_and_edge_statements() {
        let tree = demographic_tree();
        let dot = tree.describe(DescribeFormat::Dot);
        assert!(dot.starts_with("digraph"));
        assert_eq!(dot.matches("->").count(), 8);
        assert_eq!(dot.matches("shape=box").count(), 5);
    }

    #[test]
    fn routing_partitions_random_contexts() {
        let tree = demographic_tree();
        let mut stream = crate::rng::Stream::new(5, &[]);
        let mut counts = vec![0usize; tree.leaf_count()];
        for _ in 0..10_000 {
            let ctx = [
                ContextValue::Num(stream.uniform_in(10.0, 80.0)),
                ContextValue::Cat(stream.below(2) as u32),
                ContextValue::Cat(stream.below(2) as u32),
            ];
            let leaf = tree.route(&ctx, true).unwrap();
            counts[leaf as usize] += 1;
        }
        assert_eq!(counts.iter().sum::<usize>(), 10_000);
        assert!(counts.iter().all(|&c| c > 0), "every segment reachable: {counts:?}");
    }
}
