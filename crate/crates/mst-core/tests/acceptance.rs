//! Benchmark-scale acceptance checks: ground-truth recovery, model ordering
//! on synthetic auctions, oracle equivalence of the fitting routines,
//! determinism across worker counts, and the pruning contract.
//!
//! Every test ends with a single `[acceptance] <name>: PASS|FAIL (...)`
//! line; pass `--nocapture` to see the lines for passing tests too.  The
//! heavy per-seed pipelines are shared between tests through `OnceLock`
//! caches, and datasets are regenerated on demand (generation is cheap and
//! deterministic) instead of being held in memory.

use std::sync::OnceLock;

use mst_core::benchmarks::{fit_context_free, tune_k};
use mst_core::data::PayloadKind;
use mst_core::datagen::{
    gen_auctions, gen_cmt_truth, gen_context_free, gen_kmeans_truth, GroundTruth,
};
use mst_core::format::tree_to_string;
use mst_core::leaf::{self, isotonic, mnl};
use mst_core::metrics::{
    mae_vs_truth, mean_nll, mse, per_leaf_metric, MaeOptions, Metric, MetricsReport, Predictor,
};
use mst_core::optim::FitConfig;
use mst_core::prune::{prune, PruneConfig, PRUNE_TOLERANCE};
use mst_core::rng::Stream;
use mst_core::train::{grow, TrainConfig, TrainReport};
use mst_core::{
    ContextSchema, ContextValue, Dataset, Decision, LeafFamily, LeafModel, Node, Response, Split,
    Tree, Variable,
};

const DESK_SEEDS: u64 = 10;
/// 25k train / 25k validation / 25k test per seed.
const DESK_ROWS: usize = 75_000;
const DESK_THIRD: usize = DESK_ROWS / 3;

const AUCTION_SEEDS: u64 = 5;
const AUCTION_ROWS: usize = 1_000_000;
const AUCTION_TRAIN: usize = 600_000;
const AUCTION_VALID: usize = 800_000;
const AUCTION_SEGMENTS: usize = 8;
const AUCTION_BIDS: (f64, f64) = (0.1, 10.0);

const WORKERS: usize = 8;
/// Cluster-count search ceiling for the clustered choice benchmark.
const CHOICE_K_MAX: usize = 32;
/// Ceiling for the auction benchmark; the market has 8 segments, so 12
/// leaves room above the truth without exploding the per-seed budget.
const AUCTION_K_MAX: usize = 12;
/// Ceiling when checking that a context-free market tunes to one cluster.
const SELECT_K_MAX: usize = 8;

/// Prints the one-line result and panics with the same text on failure.
fn verdict(name: &str, pass: bool, details: String) {
    let line =
        format!("[acceptance] {name}: {} ({details})", if pass { "PASS" } else { "FAIL" });
    println!("{line}");
    assert!(pass, "{line}");
}

#[derive(Clone, Copy, PartialEq)]
enum ChoiceKind {
    ContextFree,
    SegmentTree,
    Mixture,
}

fn gen_choice(kind: ChoiceKind, seed: u64) -> (Dataset, GroundTruth) {
    match kind {
        ChoiceKind::ContextFree => gen_context_free(seed, DESK_ROWS),
        ChoiceKind::SegmentTree => gen_cmt_truth(seed, DESK_ROWS),
        ChoiceKind::Mixture => gen_kmeans_truth(seed, DESK_ROWS),
    }
    .expect("generator")
}

fn desk_split(data: &Dataset) -> (Dataset, Dataset, Dataset) {
    (
        data.subset(0..DESK_THIRD),
        data.subset(DESK_THIRD..2 * DESK_THIRD),
        data.subset(2 * DESK_THIRD..DESK_ROWS),
    )
}

fn desk_config(seed: u64) -> TrainConfig {
    TrainConfig { worker_count: WORKERS, seed, ..TrainConfig::default() }
}

struct TrainedSeed {
    seed: u64,
    tree: Tree,
    report: TrainReport,
}

static CONTEXT_FREE_RUNS: OnceLock<Vec<TrainedSeed>> = OnceLock::new();
static SEGMENT_RUNS: OnceLock<Vec<TrainedSeed>> = OnceLock::new();
static MIXTURE_RUNS: OnceLock<Vec<TrainedSeed>> = OnceLock::new();

/// Depth-5 trees for every desk seed of one generator, grown once and
/// shared by the recovery, warm-start, and pruning tests.
fn trained(kind: ChoiceKind) -> &'static [TrainedSeed] {
    let slot = match kind {
        ChoiceKind::ContextFree => &CONTEXT_FREE_RUNS,
        ChoiceKind::SegmentTree => &SEGMENT_RUNS,
        ChoiceKind::Mixture => &MIXTURE_RUNS,
    };
    slot.get_or_init(|| {
        (0..DESK_SEEDS)
            .map(|seed| {
                let (data, _) = gen_choice(kind, seed);
                let (train, _, _) = desk_split(&data);
                let (tree, report) =
                    grow(&train, LeafFamily::Mnl, &desk_config(seed)).expect("grow");
                TrainedSeed { seed, tree, report }
            })
            .collect()
    })
}

fn mean(xs: &[f64]) -> f64 {
    xs.iter().sum::<f64>() / xs.len() as f64
}

#[test]
fn context_free_truth_recovery() {
    let runs = trained(ChoiceKind::ContextFree);
    let mut depth_zero = 0;
    let mut tuned_to_one = 0;
    let mut max_mae = 0.0f64;
    let mut max_mae_all = 0.0f64;
    let mut k1_excess = Vec::new();
    for run in runs {
        let (data, truth) = gen_choice(ChoiceKind::ContextFree, run.seed);
        let (train, validation, test) = desk_split(&data);
        let (pruned, _) = prune(&run.tree, &validation, &PruneConfig::default()).expect("prune");
        if pruned.depth() == 0 {
            depth_zero += 1;
        }
        let mae = mae_vs_truth(&pruned, &truth, &test, MaeOptions::default()).expect("mae");
        let with_no_purchase = MaeOptions { include_no_purchase: true, ..MaeOptions::default() };
        let mae_all = mae_vs_truth(&pruned, &truth, &test, with_no_purchase).expect("mae");
        max_mae = max_mae.max(mae);
        max_mae_all = max_mae_all.max(mae_all);
        let tuned = tune_k(
            &train,
            &validation,
            SELECT_K_MAX,
            LeafFamily::Mnl,
            &FitConfig::default(),
            run.seed,
            WORKERS,
        )
        .expect("tune_k");
        if tuned.k == 1 {
            tuned_to_one += 1;
        }
        // How close the single-model candidate came to the best loss; shows
        // what the tie band had to absorb on each seed.
        let best = tuned.candidates.iter().cloned().fold(f64::INFINITY, f64::min);
        k1_excess.push(tuned.candidates[0] - best);
    }
    let pass = depth_zero >= 9 && max_mae <= 0.005 && tuned_to_one >= 9;
    let worst_excess = k1_excess.iter().cloned().fold(0.0f64, f64::max);
    verdict(
        "context-free truth recovery",
        pass,
        format!(
            "pruned to depth 0 on {depth_zero}/{DESK_SEEDS} seeds; worst test MAE {max_mae:.5} \
             vs bound 0.005 ({max_mae_all:.5} counting the no-purchase column); one cluster \
             selected on {tuned_to_one}/{DESK_SEEDS} seeds (worst single-model loss excess \
             {worst_excess:.2e})"
        ),
    );
}

#[test]
fn segment_truth_recovery_beats_clustering() {
    let runs = trained(ChoiceKind::SegmentTree);
    let mut tree_maes = Vec::new();
    let mut cluster_maes = Vec::new();
    let mut leaves = Vec::new();
    for run in runs {
        let (data, truth) = gen_choice(ChoiceKind::SegmentTree, run.seed);
        let (train, validation, test) = desk_split(&data);
        // The pipeline's model is the grown-then-pruned tree; skipping the
        // prune leaves dozens of small leaves whose refit noise swamps the
        // probability error being measured.
        let (pruned, _) = prune(&run.tree, &validation, &PruneConfig::default()).expect("prune");
        leaves.push(pruned.leaf_count());
        tree_maes.push(mae_vs_truth(&pruned, &truth, &test, MaeOptions::default()).expect("mae"));
        let tuned = tune_k(
            &train,
            &validation,
            CHOICE_K_MAX,
            LeafFamily::Mnl,
            &FitConfig::default(),
            run.seed,
            WORKERS,
        )
        .expect("tune_k");
        cluster_maes
            .push(mae_vs_truth(&tuned.model, &truth, &test, MaeOptions::default()).expect("mae"));
    }
    let tree_mean = mean(&tree_maes);
    let cluster_mean = mean(&cluster_maes);
    let ratio = cluster_mean / tree_mean;
    let pass = tree_mean <= 0.01 && ratio >= 3.0;
    verdict(
        "segment-truth recovery beats clustering",
        pass,
        format!(
            "pruned tree mean test MAE {tree_mean:.5} vs bound 0.01 (leaf counts {leaves:?}); \
             clustered mean {cluster_mean:.5}; ratio {ratio:.2} vs floor 3.0"
        ),
    );
}

#[test]
fn mixture_truth_competitive_with_clustering() {
    let runs = trained(ChoiceKind::Mixture);
    let mut tree_maes = Vec::new();
    let mut cluster_maes = Vec::new();
    let mut leaves = Vec::new();
    for run in runs {
        let (data, truth) = gen_choice(ChoiceKind::Mixture, run.seed);
        let (train, validation, test) = desk_split(&data);
        let (pruned, _) = prune(&run.tree, &validation, &PruneConfig::default()).expect("prune");
        leaves.push(pruned.leaf_count());
        tree_maes.push(mae_vs_truth(&pruned, &truth, &test, MaeOptions::default()).expect("mae"));
        let tuned = tune_k(
            &train,
            &validation,
            CHOICE_K_MAX,
            LeafFamily::Mnl,
            &FitConfig::default(),
            run.seed,
            WORKERS,
        )
        .expect("tune_k");
        cluster_maes
            .push(mae_vs_truth(&tuned.model, &truth, &test, MaeOptions::default()).expect("mae"));
    }
    let tree_mean = mean(&tree_maes);
    let cluster_mean = mean(&cluster_maes);
    let pass = tree_mean <= 1.5 * cluster_mean;
    verdict(
        "mixture-truth trees stay competitive with clustering",
        pass,
        format!(
            "pruned tree mean test MAE {tree_mean:.5} vs clustered mean {cluster_mean:.5} \
             (allowed up to 1.5x = {:.5}; leaf counts {leaves:?})",
            1.5 * cluster_mean
        ),
    );
}

#[test]
fn auction_benchmark_ordering() {
    // `a` must beat `b` by at least 1% relative.
    fn beats(a: f64, b: f64) -> bool {
        (b - a) / b >= 0.01
    }
    let mut pass = true;
    let mut lines = Vec::new();
    for seed in 0..AUCTION_SEEDS {
        let (data, _) =
            gen_auctions(seed, AUCTION_ROWS, AUCTION_SEGMENTS, AUCTION_BIDS).expect("generator");
        let train = data.subset(0..AUCTION_TRAIN);
        let validation = data.subset(AUCTION_TRAIN..AUCTION_VALID);
        let test = data.subset(AUCTION_VALID..AUCTION_ROWS);
        drop(data);
        let cfg = desk_config(seed);
        let fit_cfg = FitConfig::default();

        let (iso_tree, _) = grow(&train, LeafFamily::Isotonic, &cfg).expect("grow");
        let (logit_tree, _) = grow(&train, LeafFamily::Logistic, &cfg).expect("grow");
        let iso_global = Tree::single_leaf(
            train.schema.clone(),
            LeafFamily::Isotonic,
            fit_context_free(&train, LeafFamily::Isotonic, &fit_cfg, seed).expect("fit").0,
        );
        let logit_global = Tree::single_leaf(
            train.schema.clone(),
            LeafFamily::Logistic,
            fit_context_free(&train, LeafFamily::Logistic, &fit_cfg, seed).expect("fit").0,
        );
        let iso_km = tune_k(
            &train,
            &validation,
            AUCTION_K_MAX,
            LeafFamily::Isotonic,
            &fit_cfg,
            seed,
            WORKERS,
        )
        .expect("tune_k")
        .model;
        let logit_km = tune_k(
            &train,
            &validation,
            AUCTION_K_MAX,
            LeafFamily::Logistic,
            &fit_cfg,
            seed,
            WORKERS,
        )
        .expect("tune_k")
        .model;

        let score = |p: &dyn Predictor| mse(p, &test).expect("mse");
        let it = score(&iso_tree);
        let ik = score(&iso_km);
        let ig = score(&iso_global);
        let lt = score(&logit_tree);
        let lk = score(&logit_km);
        let lg = score(&logit_global);

        let seed_ok = beats(it, ik)
            && beats(ik, ig)
            && beats(it, lt)
            && beats(ik, lk)
            && beats(ig, lg);
        pass &= seed_ok;
        lines.push(format!(
            "seed {seed}: iso tree {it:.5} < iso kmeans {ik:.5} < iso global {ig:.5}, logit tree \
             {lt:.5} / kmeans {lk:.5} / global {lg:.5}{}",
            if seed_ok { "" } else { " <- ordering violated" }
        ));
    }
    verdict("auction benchmark ordering", pass, lines.join("; "));
}

/// Exact minimizer of the monotone least-squares problem by exhaustive
/// search over consecutive-block partitions: block values are weighted
/// means, partitions with decreasing means are infeasible, and the feasible
/// partition with the lowest per-point squared error is the optimum.
/// Input must be sorted by x; returns the fitted value per point.
fn isotonic_oracle(points: &[(f64, f64)]) -> Vec<f64> {
    let mut groups: Vec<(usize, usize)> = Vec::new();
    let mut start = 0;
    for i in 1..=points.len() {
        if i == points.len() || points[i].0 != points[start].0 {
            groups.push((start, i));
            start = i;
        }
    }
    let g = groups.len();
    let mut best_sse = f64::INFINITY;
    let mut best = vec![0.0; points.len()];
    for mask in 0u32..(1 << (g - 1)) {
        let mut fitted = vec![0.0; points.len()];
        let mut feasible = true;
        let mut prev = f64::NEG_INFINITY;
        let mut block_start = 0;
        for gi in 0..g {
            let block_ends = gi == g - 1 || mask & (1 << gi) != 0;
            if !block_ends {
                continue;
            }
            let lo = groups[block_start].0;
            let hi = groups[gi].1;
            let value = points[lo..hi].iter().map(|p| p.1).sum::<f64>() / (hi - lo) as f64;
            if value < prev {
                feasible = false;
                break;
            }
            fitted[lo..hi].fill(value);
            prev = value;
            block_start = gi + 1;
        }
        if !feasible {
            continue;
        }
        let sse: f64 =
            points.iter().zip(&fitted).map(|(p, f)| (p.1 - f) * (p.1 - f)).sum();
        if sse < best_sse {
            best_sse = sse;
            best = fitted;
        }
    }
    best
}

fn random_choice_data(stream: &mut Stream, option_dim: usize) -> Dataset {
    let schema = ContextSchema::new(vec![Variable::numeric("x")]).expect("schema");
    let mut data = Dataset::new(schema, PayloadKind::Choice, option_dim);
    let rows = 5 + stream.below(36) as usize;
    for _ in 0..rows {
        let h = 1 + stream.below(4) as usize;
        let options: Vec<Vec<f64>> = (0..h)
            .map(|_| (0..option_dim).map(|_| stream.uniform_in(-1.0, 1.0)).collect())
            .collect();
        let y = stream.below(h as u64 + 1) as u32;
        data.push(
            vec![ContextValue::Num(0.0)],
            Decision::Assortment(options),
            Response::Choice(y),
        )
        .expect("push");
    }
    data
}

/// n sessions offering one option with the single feature 1.0; the first
/// `chosen` sessions take it, the rest walk away.
fn single_option_data(n: usize, chosen: usize) -> Dataset {
    let schema = ContextSchema::new(vec![Variable::numeric("x")]).expect("schema");
    let mut data = Dataset::new(schema, PayloadKind::Choice, 1);
    for i in 0..n {
        let y = u32::from(i < chosen);
        data.push(
            vec![ContextValue::Num(0.0)],
            Decision::Assortment(vec![vec![1.0]]),
            Response::Choice(y),
        )
        .expect("push");
    }
    data
}

/// Mean NLL of the one-option/one-feature market written out directly:
/// the chosen-option probability is e^b / (1 + e^b).
fn single_option_nll(n: usize, chosen: usize, b: f64) -> f64 {
    let log_z = if b > 0.0 { b + (-b).exp().ln_1p() } else { b.exp().ln_1p() };
    (log_z * n as f64 - b * chosen as f64) / n as f64
}

/// Three-stage grid refinement of the 1-D objective above; unimodal, so a
/// shrinking sweep pins the minimizer to ~1e-7.
fn grid_minimizer(n: usize, chosen: usize) -> f64 {
    let mut lo = -4.0;
    let mut hi = 4.0;
    let mut best = 0.0;
    for _ in 0..3 {
        let step = (hi - lo) / 2000.0;
        let mut best_val = f64::INFINITY;
        let mut b = lo;
        while b <= hi {
            let v = single_option_nll(n, chosen, b);
            if v < best_val {
                best_val = v;
                best = b;
            }
            b += step;
        }
        lo = best - step;
        hi = best + step;
    }
    best
}

#[test]
fn fitting_oracle_equivalence() {
    // Monotone least squares against the exhaustive-partition optimum.
    let mut stream = Stream::new(90, &[7]);
    let mut max_dev = 0.0f64;
    for instance in 0..200 {
        let n = 1 + stream.below(20) as usize;
        let lattice = instance % 2 == 0;
        let mut pairs: Vec<(f64, f64)> = (0..n)
            .map(|_| {
                let x = if lattice {
                    0.25 * stream.below(12) as f64
                } else {
                    stream.uniform_in(0.0, 3.0)
                };
                (x, stream.uniform())
            })
            .collect();
        let mut sorted = pairs.clone();
        sorted.sort_by(|a, b| a.0.total_cmp(&b.0));
        let oracle = isotonic_oracle(&sorted);
        let curve = isotonic::fit(&mut pairs).expect("fit");
        for (point, want) in sorted.iter().zip(&oracle) {
            max_dev = max_dev.max((curve.predict(point.0) - want).abs());
        }
    }
    let isotonic_ok = max_dev <= 1e-9;

    // Analytic choice-model gradient against central finite differences.
    let mut stream = Stream::new(91, &[11]);
    let mut max_rel = 0.0f64;
    let option_dim = 3;
    for _ in 0..100 {
        let data = random_choice_data(&mut stream, option_dim);
        let rows: Vec<usize> = (0..data.len()).collect();
        let beta: Vec<f64> =
            (0..option_dim).map(|_| stream.uniform_in(-2.0, 2.0)).collect();
        let (_, grad) = mnl::nll_and_grad(&data, &rows, &beta);
        let mut dev = 0.0f64;
        for j in 0..option_dim {
            let h = 1e-5 * (1.0 + beta[j].abs());
            let mut up = beta.clone();
            up[j] += h;
            let mut down = beta.clone();
            down[j] -= h;
            let fd = (mnl::nll_and_grad(&data, &rows, &up).0
                - mnl::nll_and_grad(&data, &rows, &down).0)
                / (2.0 * h);
            dev = dev.max((grad[j] - fd).abs());
        }
        let scale = 1.0 + grad.iter().fold(0.0f64, |a, g| a.max(g.abs()));
        max_rel = max_rel.max(dev / scale);
    }
    let gradient_ok = max_rel <= 1e-5;

    // Fitted coefficient against a 1-D grid oracle on the two markets whose
    // optimum is known in closed form (balanced choices -> 0, two-thirds
    // choices -> ln 2).
    let mut max_gap = 0.0f64;
    let mut max_analytic_gap = 0.0f64;
    for (n, chosen, analytic) in
        [(100, 50, 0.0), (99, 66, std::f64::consts::LN_2)]
    {
        let data = single_option_data(n, chosen);
        let rows: Vec<usize> = (0..n).collect();
        let cfg = FitConfig { l2_ridge: 0.0, ..FitConfig::default() };
        let (model, _) =
            leaf::fit(LeafFamily::Mnl, &data, &rows, &cfg, None, &mut Stream::new(0, &[99]))
                .expect("fit");
        let LeafModel::Mnl(m) = model else { panic!("family changed under us") };
        let grid = grid_minimizer(n, chosen);
        max_gap = max_gap.max((m.beta[0] - grid).abs());
        max_analytic_gap = max_analytic_gap.max((grid - analytic).abs());
    }
    let fit_ok = max_gap <= 1e-4;

    let pass = isotonic_ok && gradient_ok && fit_ok;
    verdict(
        "fitting oracle equivalence",
        pass,
        format!(
            "monotone fit within {max_dev:.2e} of the exhaustive optimum over 200 instances \
             (bound 1e-9); gradient within {max_rel:.2e} relative of finite differences over \
             100 instances (bound 1e-5); fitted coefficient within {max_gap:.2e} of the grid \
             minimizer on both closed-form markets (bound 1e-4, grid vs analytic gap \
             {max_analytic_gap:.2e})"
        ),
    );
}

fn splits_match(a: &Split, b: &Split, tol: f64) -> bool {
    use mst_core::tree::SplitRule;
    if a.variable != b.variable {
        return false;
    }
    match (&a.rule, &b.rule) {
        (SplitRule::Numeric { threshold: ta }, SplitRule::Numeric { threshold: tb }) => {
            (ta - tb).abs() <= tol
        }
        (SplitRule::Categorical { category: ca }, SplitRule::Categorical { category: cb }) => {
            ca == cb
        }
        _ => false,
    }
}

fn slices_match(a: &[f64], b: &[f64], tol: f64) -> bool {
    a.len() == b.len() && a.iter().zip(b).all(|(x, y)| (x - y).abs() <= tol)
}

fn models_match(a: &LeafModel, b: &LeafModel, tol: f64) -> bool {
    match (a, b) {
        (LeafModel::Mnl(x), LeafModel::Mnl(y)) => slices_match(&x.beta, &y.beta, tol),
        (LeafModel::MnlOptionSpecific(x), LeafModel::MnlOptionSpecific(y)) => {
            x.beta.len() == y.beta.len()
                && x.beta.iter().zip(&y.beta).all(|(r, s)| slices_match(r, s, tol))
        }
        (LeafModel::Isotonic(x), LeafModel::Isotonic(y)) => {
            slices_match(&x.breakpoints, &y.breakpoints, tol)
                && slices_match(&x.levels, &y.levels, tol)
        }
        (LeafModel::Logistic(x), LeafModel::Logistic(y)) => {
            (x.slope - y.slope).abs() <= tol && (x.intercept - y.intercept).abs() <= tol
        }
        (LeafModel::Constant(x), LeafModel::Constant(y)) => {
            (x.probability - y.probability).abs() <= tol
        }
        _ => false,
    }
}

fn nodes_match(a: &Tree, ai: usize, b: &Tree, bi: usize, tol: f64) -> bool {
    match (&a.nodes[ai], &b.nodes[bi]) {
        (
            Node::Internal { split: sa, left: la, right: ra, model: ma, .. },
            Node::Internal { split: sb, left: lb, right: rb, model: mb, .. },
        ) => {
            splits_match(sa, sb, tol)
                && models_match(ma, mb, tol)
                && nodes_match(a, *la, b, *lb, tol)
                && nodes_match(a, *ra, b, *rb, tol)
        }
        (Node::Leaf { model: ma, .. }, Node::Leaf { model: mb, .. }) => models_match(ma, mb, tol),
        _ => false,
    }
}

fn trees_match(a: &Tree, b: &Tree, tol: f64) -> bool {
    nodes_match(a, a.root, b, b.root, tol)
}

#[test]
fn worker_count_invariance() {
    let seed = 3;
    let (data, truth) = gen_choice(ChoiceKind::SegmentTree, seed);
    let (train, _, test) = desk_split(&data);
    let trees: Vec<Tree> = [1, 2, 8]
        .into_iter()
        .map(|workers| {
            let cfg = TrainConfig { worker_count: workers, ..desk_config(seed) };
            grow(&train, LeafFamily::Mnl, &cfg).expect("grow").0
        })
        .collect();

    let structure_ok =
        trees_match(&trees[0], &trees[1], 1e-9) && trees_match(&trees[0], &trees[2], 1e-9);

    let report_for = |tree: &Tree| {
        let report = MetricsReport {
            overall: vec![
                (
                    Metric::Mae,
                    mae_vs_truth(tree, &truth, &test, MaeOptions::default()).expect("mae"),
                ),
                (Metric::Mse, mse(tree, &test).expect("mse")),
                (Metric::Nll, mean_nll(tree, &test).expect("nll")),
            ],
            per_leaf: per_leaf_metric(tree, tree, &test, Metric::Nll, None).expect("per leaf"),
        };
        report.tsv()
    };
    let reports: Vec<String> = trees.iter().map(report_for).collect();
    let reports_ok = reports[0] == reports[1] && reports[0] == reports[2];

    let encodings: Vec<String> =
        trees.iter().map(|t| tree_to_string(t).expect("encode")).collect();
    let byte_identical = encodings[0] == encodings[1] && encodings[0] == encodings[2];

    let pass = structure_ok && reports_ok;
    verdict(
        "worker-count invariance",
        pass,
        format!(
            "1/2/8-worker trees structurally equal within 1e-9: {structure_ok}; metric reports \
             byte-identical: {reports_ok}; encoded trees byte-identical: {byte_identical}"
        ),
    );
}

#[test]
fn warm_start_fidelity() {
    let runs = trained(ChoiceKind::SegmentTree);
    let mut pass = true;
    let mut lines = Vec::new();
    for run in &runs[..5] {
        let (data, _) = gen_choice(ChoiceKind::SegmentTree, run.seed);
        let (train, _, _) = desk_split(&data);
        let cold_cfg = TrainConfig { warm_start: false, ..desk_config(run.seed) };
        let (_, cold) = grow(&train, LeafFamily::Mnl, &cold_cfg).expect("grow");
        let rel = (run.report.train_loss - cold.train_loss).abs()
            / cold.train_loss.abs().max(f64::MIN_POSITIVE);
        let loss_ok = rel <= 1e-4;
        let iters_ok = run.report.fit_iterations <= cold.fit_iterations;
        pass &= loss_ok && iters_ok;
        lines.push(format!(
            "seed {}: loss gap {rel:.2e}, iterations {} warm vs {} cold{}",
            run.seed,
            run.report.fit_iterations,
            cold.fit_iterations,
            if loss_ok && iters_ok { "" } else { " <- violated" }
        ));
    }
    verdict("warm-start fidelity", pass, lines.join("; "));
}

/// Every internal node of `sub` must appear in `orig` at the same position
/// with the identical split; leaves of `sub` may cover any original node.
fn is_subtree(orig: &Tree, oi: usize, sub: &Tree, si: usize) -> bool {
    match &sub.nodes[si] {
        Node::Leaf { .. } => true,
        Node::Internal { split, left, right, .. } => match &orig.nodes[oi] {
            Node::Internal { split: os, left: ol, right: or, .. } => {
                split == os && is_subtree(orig, *ol, sub, *left) && is_subtree(orig, *or, sub, *right)
            }
            Node::Leaf { .. } => false,
        },
    }
}

#[test]
fn pruning_contract() {
    let kinds = [ChoiceKind::ContextFree, ChoiceKind::SegmentTree, ChoiceKind::Mixture];
    let mut checked = 0;
    let mut pass = true;
    let mut failures = Vec::new();
    for kind in kinds {
        for run in trained(kind) {
            let (data, _) = gen_choice(kind, run.seed);
            let (_, validation, _) = desk_split(&data);
            let cfg = PruneConfig::default();
            let (pruned, report) = prune(&run.tree, &validation, &cfg).expect("prune");
            let never_worse =
                report.validation_after <= report.validation_before + PRUNE_TOLERANCE;
            let subtree = is_subtree(&run.tree, run.tree.root, &pruned, pruned.root);
            let (again, _) = prune(&pruned, &validation, &cfg).expect("prune");
            let idempotent = again == pruned
                && tree_to_string(&again).expect("encode")
                    == tree_to_string(&pruned).expect("encode");
            checked += 1;
            if !(never_worse && subtree && idempotent) {
                pass = false;
                failures.push(format!(
                    "seed {} (never_worse {never_worse}, subtree {subtree}, idempotent \
                     {idempotent})",
                    run.seed
                ));
            }
        }
    }
    verdict(
        "pruning contract",
        pass,
        if pass {
            format!(
                "{checked}/{checked} trees: validation never worse within 1e-12, structural \
                 subtree, idempotent"
            )
        } else {
            format!("violations on {}", failures.join(", "))
        },
    );
}
