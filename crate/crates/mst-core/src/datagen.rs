//! Synthetic dataset generators with exact probability oracles.
//!
//! Four ground-truth families: a single context-free choice model, a
//! segmentation tree with a choice model per segment, a Gaussian mixture of
//! choice models, and a segmented auction market with a monotone win curve
//! per segment.  Every generator is a pure function of its seed: truth
//! parameters come from one stream, row i from a stream keyed by i, so
//! output is reproducible independently of generation order.
//!
//! Each truth exposes its exact generative probabilities, which is what
//! absolute-error evaluation compares fitted models against.

use serde::{Deserialize, Serialize};

use crate::data::{ContextSchema, ContextValue, Dataset, Decision, PayloadKind, Response, VarKind, Variable};
use crate::error::{Error, Result};
use crate::format;
use crate::leaf::{ConstantModel, LeafFamily, LeafModel, MnlShared};
use crate::rng::{label, Stream};
use crate::tree::{Node, Split, Tree};

pub const CONTEXT_DIM: usize = 4;
pub const OPTION_DIM: usize = 4;
/// Cluster spread of the mixture truth.
pub const DEFAULT_SIGMA: f64 = 0.08;
/// Choice rows offer between 2 and 5 options.
pub const MIN_OPTIONS: u64 = 2;
pub const MAX_OPTIONS: u64 = 5;

fn choice_schema() -> ContextSchema {
    ContextSchema::new((0..CONTEXT_DIM).map(|i| Variable::numeric(format!("x{i}"))).collect())
        .expect("static schema")
}

fn auction_schema() -> ContextSchema {
    ContextSchema::new(vec![
        Variable::numeric("x0"),
        Variable::numeric("x1"),
        Variable::numeric("x2"),
        Variable::categorical("site", vec!["a".into(), "b".into(), "c".into()]),
    ])
    .expect("static schema")
}

/// One additive piece of a win curve, monotone nondecreasing in the bid.
/// Both shapes work on ln(bid) so they respect the log-uniform bid scale.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "shape", rename_all = "lowercase")]
pub enum CurveComponent {
    Sigmoid { center: f64, scale: f64, weight: f64 },
    Ramp { start: f64, end: f64, weight: f64 },
}

impl CurveComponent {
    fn eval(&self, log_bid: f64) -> f64 {
        match self {
            CurveComponent::Sigmoid { center, scale, weight } => {
                let z = (log_bid - center) / scale;
                weight * (1.0 / (1.0 + (-z).exp()))
            }
            CurveComponent::Ramp { start, end, weight } => {
                weight * ((log_bid - start) / (end - start)).clamp(0.0, 1.0)
            }
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct WinCurve {
    pub components: Vec<CurveComponent>,
}

impl WinCurve {
    pub fn eval(&self, bid: f64) -> f64 {
        let log_bid = bid.ln();
        self.components.iter().map(|c| c.eval(log_bid)).sum::<f64>().clamp(0.0, 1.0)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ContextFreeTruth {
    pub beta: Vec<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CmtTruth {
    /// Segment tree whose leaf models are the per-segment choice models.
    pub tree: Tree,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct KmeansTruth {
    pub sigma: f64,
    /// Cluster centers in context space, one row per cluster.
    pub means: Vec<Vec<f64>>,
    /// Mixture weights, positive, summing to 1.
    pub weights: Vec<f64>,
    /// Per-cluster choice-model coefficients.
    pub betas: Vec<Vec<f64>>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AuctionTruth {
    /// Routing tree; its leaf models are placeholders, the curves below are
    /// the actual truth, indexed by leaf id.
    pub tree: Tree,
    pub curves: Vec<WinCurve>,
    pub bid_range: (f64, f64),
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "variant", rename_all = "kebab-case")]
pub enum GroundTruth {
    ContextFree(ContextFreeTruth),
    Cmt(CmtTruth),
    KmeansMixture(KmeansTruth),
    SegmentedAuction(AuctionTruth),
}

impl GroundTruth {
    pub fn kind(&self) -> PayloadKind {
        match self {
            GroundTruth::SegmentedAuction(_) => PayloadKind::Auction,
            _ => PayloadKind::Choice,
        }
    }

    /// Exact choice probabilities (no-purchase first) for a context and
    /// assortment.  For the mixture truth, `latent` selects the generating
    /// cluster; without it the posterior-weighted mixture is returned.
    pub fn true_choice_probs(
        &self,
        ctx: &[ContextValue],
        options: &[Vec<f64>],
        latent: Option<u32>,
    ) -> Result<Vec<f64>> {
        match self {
            GroundTruth::ContextFree(t) => {
                MnlShared { beta: t.beta.clone() }.choice_probs(options)
            }
            GroundTruth::Cmt(t) => t.tree.leaf_model(ctx, true)?.choice_probs(options),
            GroundTruth::KmeansMixture(t) => match latent {
                Some(k) => {
                    let beta = t.betas.get(k as usize).ok_or_else(|| {
                        Error::InvalidArgument(format!("latent cluster {k} out of range"))
                    })?;
                    MnlShared { beta: beta.clone() }.choice_probs(options)
                }
                None => {
                    let posterior = t.posterior(ctx)?;
                    let mut mix = vec![0.0; options.len() + 1];
                    for (k, w) in posterior.iter().enumerate() {
                        let p = MnlShared { beta: t.betas[k].clone() }.choice_probs(options)?;
                        for (m, q) in mix.iter_mut().zip(p) {
                            *m += w * q;
                        }
                    }
                    Ok(mix)
                }
            },
            GroundTruth::SegmentedAuction(_) => Err(Error::FamilyMismatch {
                family: "auction truth".into(),
                payload: "choice query".into(),
            }),
        }
    }

    pub fn true_win_prob(&self, ctx: &[ContextValue], bid: f64) -> Result<f64> {
        match self {
            GroundTruth::SegmentedAuction(t) => {
                let leaf = t.tree.route(ctx, true)?;
                Ok(t.curves[leaf as usize].eval(bid))
            }
            _ => Err(Error::FamilyMismatch {
                family: "choice truth".into(),
                payload: "auction query".into(),
            }),
        }
    }
}

impl KmeansTruth {
    /// P(cluster | context) under the Gaussian mixture.
    pub fn posterior(&self, ctx: &[ContextValue]) -> Result<Vec<f64>> {
        let x: Vec<f64> = ctx
            .iter()
            .map(|v| v.as_num().ok_or_else(|| Error::SchemaMismatch("numeric context expected".into())))
            .collect::<Result<_>>()?;
        let sq_dist: Vec<f64> = self
            .means
            .iter()
            .map(|m| m.iter().zip(&x).map(|(a, b)| (a - b) * (a - b)).sum::<f64>())
            .collect();
        let min = sq_dist.iter().cloned().fold(f64::INFINITY, f64::min);
        let mut post: Vec<f64> = sq_dist
            .iter()
            .zip(&self.weights)
            .map(|(d, w)| w * (-(d - min) / (2.0 * self.sigma * self.sigma)).exp())
            .collect();
        let z: f64 = post.iter().sum();
        for p in &mut post {
            *p /= z;
        }
        Ok(post)
    }
}

#[derive(Serialize, Deserialize)]
struct TruthDocument {
    format: String,
    truth: GroundTruth,
}

pub fn truth_to_string(truth: &GroundTruth) -> Result<String> {
    format::to_json_string(&TruthDocument {
        format: format::TRUTH_FORMAT.to_string(),
        truth: truth.clone(),
    })
}

pub fn truth_from_str(json: &str) -> Result<GroundTruth> {
    format::check_format_tag(json, format::TRUTH_FORMAT)?;
    let doc: TruthDocument = format::from_json_str(json)?;
    if let GroundTruth::Cmt(t) = &doc.truth {
        t.tree.validate()?;
    }
    if let GroundTruth::SegmentedAuction(t) = &doc.truth {
        t.tree.validate()?;
        if t.curves.len() != t.tree.leaf_count() {
            return Err(Error::Decode("curve count does not match segment count".into()));
        }
    }
    Ok(doc.truth)
}

pub fn write_truth(path: &std::path::Path, truth: &GroundTruth) -> Result<()> {
    format::write_atomic(path, &truth_to_string(truth)?)
}

pub fn read_truth(path: &std::path::Path) -> Result<GroundTruth> {
    truth_from_str(&std::fs::read_to_string(path)?)
}

fn uniform_beta(stream: &mut Stream) -> Vec<f64> {
    (0..OPTION_DIM).map(|_| stream.uniform_in(-1.0, 1.0)).collect()
}

/// Draws the assortment for one choice row: a uniform size in
/// {2,...,5} and one uniform feature vector per offered option.
fn sample_assortment(stream: &mut Stream) -> Vec<Vec<f64>> {
    let h = MIN_OPTIONS + stream.below(MAX_OPTIONS - MIN_OPTIONS + 1);
    (0..h).map(|_| (0..OPTION_DIM).map(|_| stream.uniform()).collect()).collect()
}

/// One context-free choice model over every context.
pub fn gen_context_free(seed: u64, n: usize) -> Result<(Dataset, GroundTruth)> {
    let mut truth_stream = Stream::new(seed, &[label::TRUTH]);
    let truth = GroundTruth::ContextFree(ContextFreeTruth { beta: uniform_beta(&mut truth_stream) });
    let data = gen_choice_rows(seed, n, &truth)?;
    Ok((data, truth))
}

/// Random segmentation tree (up to depth 3, 4 to 7 segments, every split
/// leaving at least 30% of its region's mass on each side) with an
/// independent choice model per segment.
pub fn gen_cmt_truth(seed: u64, n: usize) -> Result<(Dataset, GroundTruth)> {
    let mut ts = Stream::new(seed, &[label::TRUTH]);
    let target_leaves = 4 + ts.below(4) as usize;
    let tree = build_segment_tree(
        &mut ts,
        &choice_schema(),
        target_leaves,
        Some(3),
        |stream, leaves| {
            (0..leaves)
                .map(|_| LeafModel::Mnl(MnlShared { beta: uniform_beta(stream) }))
                .collect()
        },
    )?;
    let truth = GroundTruth::Cmt(CmtTruth { tree });
    let data = gen_choice_rows(seed, n, &truth)?;
    Ok((data, truth))
}

/// Gaussian-mixture truth: cluster centers in the unit cube, softmax
/// mixture weights, an independent choice model per cluster.
pub fn gen_kmeans_truth(seed: u64, n: usize) -> Result<(Dataset, GroundTruth)> {
    let mut ts = Stream::new(seed, &[label::TRUTH]);
    let k = 4 + ts.below(4) as usize;
    let betas: Vec<Vec<f64>> = (0..k).map(|_| uniform_beta(&mut ts)).collect();
    let means: Vec<Vec<f64>> =
        (0..k).map(|_| (0..CONTEXT_DIM).map(|_| ts.uniform()).collect()).collect();
    let raw: Vec<f64> = (0..k).map(|_| ts.uniform_in(-1.0, 1.0)).collect();
    let m = raw.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
    let exps: Vec<f64> = raw.iter().map(|u| (u - m).exp()).collect();
    let z: f64 = exps.iter().sum();
    let weights: Vec<f64> = exps.iter().map(|e| e / z).collect();
    let truth = GroundTruth::KmeansMixture(KmeansTruth {
        sigma: DEFAULT_SIGMA,
        means,
        weights,
        betas,
    });
    let data = gen_choice_rows(seed, n, &truth)?;
    Ok((data, truth))
}

/// Segmented auction market: contexts route through a random balanced tree
/// to one of `segments` monotone win curves; bids are log-uniform and the
/// outcome is a coin flip at the curve's value.
pub fn gen_auctions(
    seed: u64,
    n: usize,
    segments: usize,
    bid_range: (f64, f64),
) -> Result<(Dataset, GroundTruth)> {
    if segments < 1 {
        return Err(Error::InvalidArgument("segments must be at least 1".into()));
    }
    let (bid_lo, bid_hi) = bid_range;
    if !(bid_lo > 0.0 && bid_hi > bid_lo) {
        return Err(Error::InvalidArgument("bid range must satisfy 0 < lo < hi".into()));
    }
    let mut ts = Stream::new(seed, &[label::TRUTH]);
    let schema = auction_schema();
    let tree = build_segment_tree(&mut ts, &schema, segments, None, |_, leaves| {
        vec![LeafModel::Constant(ConstantModel { probability: 0.5 }); leaves]
    })?;
    let curves: Vec<WinCurve> =
        (0..segments).map(|_| sample_curve(&mut ts, bid_lo, bid_hi)).collect();
    let truth =
        GroundTruth::SegmentedAuction(AuctionTruth { tree, curves, bid_range: (bid_lo, bid_hi) });

    let mut data = Dataset::new(schema, PayloadKind::Auction, 0);
    for i in 0..n {
        let mut rs = Stream::new(seed, &[label::ROW, i as u64]);
        let ctx = vec![
            ContextValue::Num(rs.uniform()),
            ContextValue::Num(rs.uniform()),
            ContextValue::Num(rs.uniform()),
            ContextValue::Cat(rs.below(3) as u32),
        ];
        let bid = rs.log_uniform(bid_lo, bid_hi);
        let p = truth.true_win_prob(&ctx, bid)?;
        let win = rs.bernoulli(p);
        data.push(ctx, Decision::Bid(bid), Response::Win(win))?;
    }
    Ok((data, truth))
}

/// Draws contexts, assortments, and choices for any choice-format truth.
fn gen_choice_rows(seed: u64, n: usize, truth: &GroundTruth) -> Result<Dataset> {
    let schema = choice_schema();
    let mut data = Dataset::new(schema, PayloadKind::Choice, OPTION_DIM);
    let mixture = match truth {
        GroundTruth::KmeansMixture(t) => Some(t),
        _ => None,
    };
    let mut latents = mixture.map(|_| Vec::with_capacity(n));
    for i in 0..n {
        let mut rs = Stream::new(seed, &[label::ROW, i as u64]);
        let (ctx, latent) = match mixture {
            None => (
                (0..CONTEXT_DIM).map(|_| ContextValue::Num(rs.uniform())).collect::<Vec<_>>(),
                None,
            ),
            Some(t) => {
                let k = rs.categorical(&t.weights);
                let ctx = t.means[k]
                    .iter()
                    .map(|&m| ContextValue::Num(rs.normal(m, t.sigma)))
                    .collect::<Vec<_>>();
                (ctx, Some(k as u32))
            }
        };
        let options = sample_assortment(&mut rs);
        let probs = truth.true_choice_probs(&ctx, &options, latent)?;
        let choice = rs.categorical(&probs) as u32;
        data.push(ctx, Decision::Assortment(options), Response::Choice(choice))?;
        if let (Some(l), Some(k)) = (latents.as_mut(), latent) {
            l.push(k);
        }
    }
    data.latent = latents;
    Ok(data)
}

/// A leaf region during random tree construction: an interval per numeric
/// variable plus the still-present category set per categorical variable.
#[derive(Clone)]
struct Region {
    numeric: Vec<(f64, f64)>,
    categories: Vec<Vec<u32>>,
}

struct ProtoNode {
    region: Region,
    depth: usize,
    split: Option<(Split, usize, usize)>,
}

/// Grows a random tree to `target_leaves` by repeatedly splitting a
/// uniformly chosen expandable leaf on a uniformly chosen variable and
/// point, resampling until each side keeps at least 30% of the region's
/// probability mass under the generator's context distribution.
fn build_segment_tree(
    stream: &mut Stream,
    schema: &ContextSchema,
    target_leaves: usize,
    max_depth: Option<usize>,
    leaf_models: impl FnOnce(&mut Stream, usize) -> Vec<LeafModel>,
) -> Result<Tree> {
    let root_region = Region {
        numeric: schema
            .variables
            .iter()
            .map(|v| match v.kind {
                VarKind::Numeric => (0.0, 1.0),
                VarKind::Categorical => (f64::NAN, f64::NAN),
            })
            .collect(),
        categories: schema
            .variables
            .iter()
            .map(|v| (0..v.categories.len() as u32).collect())
            .collect(),
    };
    let mut proto = vec![ProtoNode { region: root_region, depth: 0, split: None }];
    let mut leaves = 1usize;
    while leaves < target_leaves {
        let expandable: Vec<usize> = proto
            .iter()
            .enumerate()
            .filter(|(_, p)| p.split.is_none() && max_depth.is_none_or(|d| p.depth < d))
            .map(|(i, _)| i)
            .collect();
        assert!(!expandable.is_empty(), "leaf target unreachable under depth cap");
        let pick = expandable[stream.below(expandable.len() as u64) as usize];
        let (split, left_region, right_region) = loop {
            let var = stream.below(schema.len() as u64) as usize;
            match schema.variables[var].kind {
                VarKind::Numeric => {
                    let (lo, hi) = proto[pick].region.numeric[var];
                    let s = stream.uniform_in(lo, hi);
                    let frac = (s - lo) / (hi - lo);
                    if !(0.3..=0.7).contains(&frac) {
                        continue;
                    }
                    let mut lr = proto[pick].region.clone();
                    let mut rr = proto[pick].region.clone();
                    lr.numeric[var] = (lo, s);
                    rr.numeric[var] = (s, hi);
                    break (Split::numeric(var, s), lr, rr);
                }
                VarKind::Categorical => {
                    let present = &proto[pick].region.categories[var];
                    // One-vs-rest keeps 1/|present| of the mass on the left;
                    // acceptable only while three or fewer codes remain.
                    if present.len() < 2 || present.len() > 3 {
                        continue;
                    }
                    let code = present[stream.below(present.len() as u64) as usize];
                    let mut lr = proto[pick].region.clone();
                    let mut rr = proto[pick].region.clone();
                    lr.categories[var] = vec![code];
                    rr.categories[var] = present.iter().cloned().filter(|&c| c != code).collect();
                    break (Split::categorical(var, code), lr, rr);
                }
            }
        };
        let depth = proto[pick].depth;
        let l = proto.len();
        proto.push(ProtoNode { region: left_region, depth: depth + 1, split: None });
        let r = proto.len();
        proto.push(ProtoNode { region: right_region, depth: depth + 1, split: None });
        proto[pick].split = Some((split, l, r));
        leaves += 1;
    }

    let models = leaf_models(stream, leaves);
    // Convert to the arena layout, numbering leaves depth-first so model
    // assignment matches leaf ids.
    let mut nodes = Vec::with_capacity(proto.len());
    let mut next_leaf = 0u32;
    fn convert(
        proto: &[ProtoNode],
        models: &[LeafModel],
        idx: usize,
        nodes: &mut Vec<Node>,
        next_leaf: &mut u32,
        family: LeafFamily,
    ) -> usize {
        let slot = nodes.len();
        match &proto[idx].split {
            None => {
                let leaf_id = *next_leaf;
                *next_leaf += 1;
                nodes.push(Node::Leaf {
                    leaf_id,
                    model: models[leaf_id as usize].clone(),
                    train_loss: 0.0,
                    train_rows: 0,
                });
                slot
            }
            Some((split, l, r)) => {
                nodes.push(Node::Leaf {
                    leaf_id: 0,
                    model: models[0].clone(),
                    train_loss: 0.0,
                    train_rows: 0,
                });
                let left = convert(proto, models, *l, nodes, next_leaf, family);
                let right = convert(proto, models, *r, nodes, next_leaf, family);
                nodes[slot] = Node::Internal {
                    split: split.clone(),
                    left,
                    right,
                    model: models[0].clone(),
                    train_loss: 0.0,
                    train_rows: 0,
                };
                slot
            }
        }
    }
    let family = models[0].family();
    let root = convert(&proto, &models, 0, &mut nodes, &mut next_leaf, family);
    Tree::from_nodes(schema.clone(), family, nodes, root)
}

/// Random monotone win curve: one to three log-bid sigmoids and ramps with
/// normalized weights.
fn sample_curve(stream: &mut Stream, bid_lo: f64, bid_hi: f64) -> WinCurve {
    let (llo, lhi) = (bid_lo.ln(), bid_hi.ln());
    let span = lhi - llo;
    let n_comp = 1 + stream.below(3) as usize;
    let mut components = Vec::with_capacity(n_comp);
    let mut weights = Vec::with_capacity(n_comp);
    for _ in 0..n_comp {
        weights.push(stream.uniform_in(0.2, 1.0));
        if stream.bernoulli(0.5) {
            components.push(CurveComponent::Sigmoid {
                center: stream.uniform_in(llo + 0.1 * span, lhi - 0.1 * span),
                scale: stream.uniform_in(0.05 * span, 0.3 * span),
                weight: 0.0,
            });
        } else {
            let start = stream.uniform_in(llo, lhi - 0.2 * span);
            let end = start + stream.uniform_in(0.2 * span, (lhi - start).max(0.25 * span));
            components.push(CurveComponent::Ramp { start, end, weight: 0.0 });
        }
    }
    let z: f64 = weights.iter().sum();
    for (c, w) in components.iter_mut().zip(weights) {
        let nw = w / z;
        match c {
            CurveComponent::Sigmoid { weight, .. } | CurveComponent::Ramp { weight, .. } => {
                *weight = nw
            }
        }
    }
    WinCurve { components }
}
