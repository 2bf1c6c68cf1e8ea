//! Implementations of the seven subcommands.  Each one reads its inputs,
//! delegates to the library, and writes artifacts atomically; any module
//! error propagates out as a nonzero exit with the error's message.

use std::path::Path;

use log::info;

use mst_core::benchmarks::{clustered_from_str, tune_k, write_clustered, ClusteredModel};
use mst_core::data::PayloadKind;
use mst_core::datagen::{
    gen_auctions, gen_cmt_truth, gen_context_free, gen_kmeans_truth, read_truth, write_truth,
    GroundTruth,
};
use mst_core::format::{self, tree_from_str, write_atomic, write_tree};
use mst_core::ingest::{read_csv, write_csv, Filter};
use mst_core::metrics::{
    auction_scores, mae_vs_truth, mean_nll, mse, per_leaf_metric, roc_auc, MaeOptions, Metric,
    MetricsReport, Predictor,
};
use mst_core::prune::{prune as prune_tree, PruneConfig, PruneMetric};
use mst_core::train::{grow, TrainConfig};
use mst_core::tree::DescribeFormat;
use mst_core::{ContextSchema, Dataset, Decision, Error, LeafFamily, Result, Tree};

use crate::config::{load_pairs, parse_value};
use crate::{
    BenchArgs, EvaluateArgs, InspectArgs, PredictArgs, PruneArgs, SimulateArgs, TrainArgs,
    TruthFlag,
};

fn parse_filters(specs: &[String]) -> Result<Vec<Filter>> {
    specs.iter().map(|s| s.parse()).collect()
}

fn parse_truth(value: &str) -> Result<TruthFlag> {
    match value {
        "context-free" => Ok(TruthFlag::ContextFree),
        "cmt" => Ok(TruthFlag::Cmt),
        "kmeans" => Ok(TruthFlag::Kmeans),
        "auction" => Ok(TruthFlag::Auction),
        other => Err(Error::Config(format!(
            "unknown truth {other:?} (expected context-free|cmt|kmeans|auction)"
        ))),
    }
}

/// A saved model of either format, scored through the common predictor view.
enum ModelArtifact {
    Tree(Tree),
    Clustered(ClusteredModel),
}

impl ModelArtifact {
    fn schema(&self) -> &ContextSchema {
        match self {
            ModelArtifact::Tree(t) => &t.schema,
            ModelArtifact::Clustered(c) => &c.schema,
        }
    }

    fn family(&self) -> LeafFamily {
        match self {
            ModelArtifact::Tree(t) => t.family,
            ModelArtifact::Clustered(c) => c.family,
        }
    }

    fn predictor(&self) -> &dyn Predictor {
        match self {
            ModelArtifact::Tree(t) => t,
            ModelArtifact::Clustered(c) => c,
        }
    }
}

/// Routes on the document's format tag so a clustered model is never
/// reported as a malformed tree (or vice versa).
fn load_model(path: &Path) -> Result<ModelArtifact> {
    let text = std::fs::read_to_string(path)?;
    let doc: serde_json::Value =
        serde_json::from_str(&text).map_err(|e| Error::Decode(e.to_string()))?;
    match doc.get("format").and_then(|v| v.as_str()) {
        Some(format::TREE_FORMAT) => Ok(ModelArtifact::Tree(tree_from_str(&text)?)),
        Some(format::KMEANS_FORMAT) => Ok(ModelArtifact::Clustered(clustered_from_str(&text)?)),
        Some(other) => Err(Error::Decode(format!("unsupported model format {other:?}"))),
        None => Err(Error::Decode("model file has no format tag".into())),
    }
}

/// Dataset rows scored by a model must carry the payload the model's leaf
/// family understands; checking up front beats a per-row error later.
fn check_payload(model: &ModelArtifact, data: &Dataset) -> Result<()> {
    if model.family().payload() != data.kind {
        return Err(Error::FamilyMismatch {
            family: model.family().to_string(),
            payload: data.kind.to_string(),
        });
    }
    Ok(())
}

fn parse_split(spec: &str) -> Result<[usize; 3]> {
    let parts: Vec<&str> = spec.split(',').collect();
    if parts.len() != 3 {
        return Err(Error::Config(format!(
            "--split wants train,validation,test row counts, got {spec:?}"
        )));
    }
    let mut counts = [0usize; 3];
    for (slot, part) in counts.iter_mut().zip(&parts) {
        *slot = parse_value("split", part.trim())?;
    }
    Ok(counts)
}

pub fn simulate(mut args: SimulateArgs) -> Result<()> {
    if let Some(path) = args.config.take() {
        for (key, value) in load_pairs(&path)? {
            match key.as_str() {
                "truth" => args.truth = parse_truth(&value)?,
                "seed" => args.seed = parse_value(&key, &value)?,
                "n" => args.n = parse_value(&key, &value)?,
                "segments" => args.segments = parse_value(&key, &value)?,
                "bid_min" => args.bid_min = parse_value(&key, &value)?,
                "bid_max" => args.bid_max = parse_value(&key, &value)?,
                "split" => args.split = Some(value),
                other => return Err(Error::Config(format!("unknown config key {other:?}"))),
            }
        }
    }
    let (data, truth) = match args.truth {
        TruthFlag::ContextFree => gen_context_free(args.seed, args.n)?,
        TruthFlag::Cmt => gen_cmt_truth(args.seed, args.n)?,
        TruthFlag::Kmeans => gen_kmeans_truth(args.seed, args.n)?,
        TruthFlag::Auction => {
            gen_auctions(args.seed, args.n, args.segments, (args.bid_min, args.bid_max))?
        }
    };
    std::fs::create_dir_all(&args.out)?;
    match &args.split {
        Some(spec) => {
            let counts = parse_split(spec)?;
            let total: usize = counts.iter().sum();
            if total > data.len() {
                return Err(Error::Config(format!(
                    "--split asks for {total} rows but only {} were drawn",
                    data.len()
                )));
            }
            let names = ["train.csv", "validation.csv", "test.csv"];
            let mut offset = 0;
            for (name, count) in names.iter().zip(counts) {
                let part = data.subset(offset..offset + count);
                offset += count;
                write_csv(&args.out.join(name), &part)?;
                info!("wrote {} ({count} rows)", args.out.join(name).display());
            }
        }
        None => {
            write_csv(&args.out.join("data.csv"), &data)?;
            info!("wrote {} ({} rows)", args.out.join("data.csv").display(), data.len());
        }
    }
    write_truth(&args.out.join("truth.json"), &truth)?;
    info!("wrote {}", args.out.join("truth.json").display());
    Ok(())
}

pub fn train(args: TrainArgs) -> Result<()> {
    let mut cfg = TrainConfig { seed: args.seed, ..TrainConfig::default() };
    if let Some(v) = args.max_depth {
        cfg.max_depth = Some(v);
    }
    if let Some(v) = args.min_leaf {
        cfg.min_leaf_size = v;
    }
    if let Some(v) = args.q_split {
        cfg.q_split = v;
    }
    if let Some(v) = args.workers {
        cfg.worker_count = v;
    }
    let mut family: LeafFamily = args.leaf_family.parse().map_err(Error::Config)?;
    let mut kmax = args.kmax;
    let mut filters = parse_filters(&args.filter)?;
    if let Some(path) = &args.config {
        let mut leftover: Vec<(String, String)> = Vec::new();
        for (key, value) in load_pairs(path)? {
            match key.as_str() {
                "leaf_family" => family = value.parse().map_err(Error::Config)?,
                "kmax" => kmax = Some(parse_value(&key, &value)?),
                "filter" => filters = vec![value.parse()?],
                _ => leftover.push((key, value)),
            }
        }
        cfg.apply_key_values(leftover.iter().map(|(k, v)| (k.as_str(), v.as_str())))?;
    }
    cfg.validate()?;

    let data = read_csv(&args.train, None, &filters)?;
    info!("training a {family} model on {} rows of {} data", data.len(), data.kind);
    match kmax {
        Some(k_max) => {
            let validation_path = args.validation.as_ref().ok_or_else(|| {
                Error::Config("--kmax tunes on held-out data; pass --validation".into())
            })?;
            let validation = read_csv(validation_path, Some(&data.schema), &filters)?;
            let tuned = tune_k(
                &data,
                &validation,
                k_max,
                family,
                &cfg.fit_config,
                cfg.seed,
                cfg.worker_count,
            )?;
            info!(
                "selected K = {} of {k_max} (validation loss per K: {})",
                tuned.k,
                tuned
                    .candidates
                    .iter()
                    .map(|v| format!("{v:.6}"))
                    .collect::<Vec<_>>()
                    .join(", ")
            );
            write_clustered(&args.out, &tuned.model)?;
        }
        None => {
            let (tree, report) = grow(&data, family, &cfg)?;
            info!(
                "grew to depth {} with {} leaves: train loss {:.6}, {} split evaluations, {} \
                 gradient iterations ({} fits left unconverged), {} ms",
                report.depth,
                report.leaf_count,
                report.train_loss,
                report.split_evaluations,
                report.fit_iterations,
                report.nonconverged_fits,
                report.elapsed_ms
            );
            write_tree(&args.out, &tree)?;
        }
    }
    info!("wrote {}", args.out.display());
    Ok(())
}

pub fn prune(args: PruneArgs) -> Result<()> {
    let mut metric: PruneMetric = args.metric.parse().map_err(Error::Config)?;
    let mut filters = parse_filters(&args.filter)?;
    if let Some(path) = &args.config {
        for (key, value) in load_pairs(path)? {
            match key.as_str() {
                "metric" => metric = value.parse().map_err(Error::Config)?,
                "filter" => filters = vec![value.parse()?],
                other => return Err(Error::Config(format!("unknown config key {other:?}"))),
            }
        }
    }
    let ModelArtifact::Tree(tree) = load_model(&args.model)? else {
        return Err(Error::InvalidArgument("pruning applies to tree models".into()));
    };
    let validation = read_csv(&args.validation, Some(&tree.schema), &filters)?;
    let (pruned, report) = prune_tree(&tree, &validation, &PruneConfig { metric })?;
    info!(
        "{} collapse steps; picked step {} by {metric}: validation {:.6} -> {:.6}, {} -> {} \
         leaves, depth {} -> {}",
        report.sequence.len(),
        report.selected,
        report.validation_before,
        report.validation_after,
        tree.leaf_count(),
        pruned.leaf_count(),
        tree.depth(),
        pruned.depth()
    );
    write_tree(&args.out, &pruned)?;
    info!("wrote {}", args.out.display());
    Ok(())
}

pub fn predict(args: PredictArgs) -> Result<()> {
    let filters = parse_filters(&args.filter)?;
    let model = load_model(&args.model)?;
    let data = read_csv(&args.test, Some(model.schema()), &filters)?;
    check_payload(&model, &data)?;
    let pred = model.predictor();
    let mut out = String::new();
    match data.kind {
        PayloadKind::Choice => {
            // Option 0 is the no-purchase outcome; 1.. follow input order.
            out.push_str("row,option,probability\n");
            for row in 0..data.len() {
                let Decision::Assortment(options) = data.decision(row) else { unreachable!() };
                let probs = pred.choice_probs(data.context(row), options)?;
                for (option, p) in probs.iter().enumerate() {
                    out.push_str(&format!("{row},{option},{p}\n"));
                }
            }
        }
        PayloadKind::Auction => {
            out.push_str("row,win_probability\n");
            for row in 0..data.len() {
                let Decision::Bid(bid) = data.decision(row) else { unreachable!() };
                let p = pred.win_prob(data.context(row), *bid)?;
                out.push_str(&format!("{row},{p}\n"));
            }
        }
    }
    write_atomic(&args.out, out.trim_end_matches('\n'))?;
    info!("wrote {} ({} rows)", args.out.display(), data.len());
    Ok(())
}

fn overall_value(
    metric: Metric,
    pred: &dyn Predictor,
    data: &Dataset,
    truth: Option<&GroundTruth>,
) -> Result<f64> {
    match metric {
        Metric::Mae => {
            let truth = truth.ok_or_else(|| {
                Error::Config("mae compares against generative truth; pass --truth-file".into())
            })?;
            mae_vs_truth(pred, truth, data, MaeOptions::default())
        }
        Metric::Mse => mse(pred, data),
        Metric::Nll => mean_nll(pred, data),
        Metric::Auc => {
            if data.kind != PayloadKind::Auction {
                return Err(Error::Config("auc applies to auction data".into()));
            }
            let (scores, labels) = auction_scores(pred, data)?;
            roc_auc(&scores, &labels)
        }
    }
}

pub fn evaluate(args: EvaluateArgs) -> Result<()> {
    let mut metric_names = args.metric.clone();
    let mut filters = parse_filters(&args.filter)?;
    if let Some(path) = &args.config {
        for (key, value) in load_pairs(path)? {
            match key.as_str() {
                "metric" => metric_names = vec![value],
                "filter" => filters = vec![value.parse()?],
                other => return Err(Error::Config(format!("unknown config key {other:?}"))),
            }
        }
    }
    let model = load_model(&args.model)?;
    let data = read_csv(&args.test, Some(model.schema()), &filters)?;
    check_payload(&model, &data)?;
    let truth = args.truth_file.as_deref().map(read_truth).transpose()?;

    let metrics: Vec<Metric> = if metric_names.is_empty() {
        let mut defaults = match data.kind {
            PayloadKind::Choice => vec![Metric::Nll, Metric::Mse],
            PayloadKind::Auction => vec![Metric::Mse, Metric::Nll, Metric::Auc],
        };
        if truth.is_some() {
            defaults.insert(0, Metric::Mae);
        }
        defaults
    } else {
        metric_names
            .iter()
            .map(|name| name.parse().map_err(Error::Config))
            .collect::<Result<_>>()?
    };

    let pred = model.predictor();
    let mut overall = Vec::with_capacity(metrics.len());
    for &metric in &metrics {
        overall.push((metric, overall_value(metric, pred, &data, truth.as_ref())?));
    }
    // Per-leaf slices only make sense for a tree, and AUC degenerates on
    // leaves that see a single outcome, so slice by the first other metric.
    let per_leaf = match &model {
        ModelArtifact::Tree(tree) => {
            let sliceable = metrics.iter().copied().find(|m| {
                *m != Metric::Auc && (*m != Metric::Mae || truth.is_some())
            });
            match sliceable {
                Some(metric) => per_leaf_metric(tree, tree, &data, metric, truth.as_ref())?,
                None => Vec::new(),
            }
        }
        ModelArtifact::Clustered(_) => Vec::new(),
    };

    let report = MetricsReport { overall, per_leaf };
    let tsv = report.tsv();
    print!("{tsv}");
    if let Some(dir) = &args.out {
        std::fs::create_dir_all(dir)?;
        write_atomic(&dir.join("report.tsv"), tsv.trim_end_matches('\n'))?;
        let json =
            serde_json::to_string_pretty(&report).map_err(|e| Error::Decode(e.to_string()))?;
        write_atomic(&dir.join("report.json"), &json)?;
        info!("wrote {} and report.json", dir.join("report.tsv").display());
    }
    Ok(())
}

pub fn inspect(args: InspectArgs) -> Result<()> {
    match load_model(&args.model)? {
        ModelArtifact::Tree(tree) => {
            let layout = if args.dot { DescribeFormat::Dot } else { DescribeFormat::Text };
            print!("{}", tree.describe(layout));
        }
        ModelArtifact::Clustered(model) => {
            if args.dot {
                return Err(Error::InvalidArgument("dot output applies to tree models".into()));
            }
            println!(
                "clustered {} model over {} contexts, K = {}",
                model.family,
                model.schema.len(),
                model.cluster_count()
            );
            for (cluster, leaf) in model.models.iter().enumerate() {
                println!("  cluster {cluster}: {}", leaf.summary());
            }
        }
    }
    Ok(())
}

pub fn bench(mut args: BenchArgs) -> Result<()> {
    if let Some(path) = args.config.take() {
        for (key, value) in load_pairs(&path)? {
            match key.as_str() {
                "seed" => args.seed = parse_value(&key, &value)?,
                "workers" => args.workers = parse_value(&key, &value)?,
                other => return Err(Error::Config(format!("unknown config key {other:?}"))),
            }
        }
    }
    // Depth sweep at fixed size, size sweep at fixed depth, then the
    // requested worker count; wall time should grow roughly linearly in
    // depth and size, but the table is informational, not asserted.
    let combos: [(usize, usize, usize); 7] = [
        (10_000, 1, 1),
        (10_000, 2, 1),
        (10_000, 3, 1),
        (10_000, 4, 1),
        (5_000, 3, 1),
        (20_000, 3, 1),
        (10_000, 3, args.workers.max(1)),
    ];
    let mut table =
        String::from("rows\tmax_options\tdepth_limit\tdepth\tleaves\tworkers\ttrain_loss\telapsed_ms\n");
    for (rows, depth, workers) in combos {
        let (data, _) = gen_cmt_truth(args.seed, rows)?;
        let cfg = TrainConfig {
            max_depth: Some(depth),
            worker_count: workers,
            seed: args.seed,
            ..TrainConfig::default()
        };
        let (_, report) = grow(&data, LeafFamily::Mnl, &cfg)?;
        table.push_str(&format!(
            "{rows}\t{}\t{depth}\t{}\t{}\t{workers}\t{:.6}\t{}\n",
            data.max_options(),
            report.depth,
            report.leaf_count,
            report.train_loss,
            report.elapsed_ms
        ));
    }
    print!("{table}");
    if let Some(path) = &args.out {
        write_atomic(path, table.trim_end_matches('\n'))?;
        info!("wrote {}", path.display());
    }
    Ok(())
}
