//! `mst` drives the segmentation-tree pipeline from the shell: generate
//! synthetic markets, train and prune trees, fit clustered baselines, and
//! score any saved model against a dataset.
//!
//! Every command is deterministic given its inputs and seed, and artifacts
//! are written atomically, so reruns produce bytewise-identical files.

mod commands;
mod config;

use std::path::PathBuf;

use clap::{Args, Parser, Subcommand, ValueEnum};

#[derive(Parser)]
#[command(name = "mst", version, about = "Segmentation trees over choice and auction data")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Draw a synthetic dataset (and its generative truth) to CSV/JSON.
    Simulate(SimulateArgs),
    /// Fit a tree, or a clustered baseline when --kmax is given.
    Train(TrainArgs),
    /// Cost-complexity prune a trained tree against validation data.
    Prune(PruneArgs),
    /// Write per-row model probabilities for a dataset.
    Predict(PredictArgs),
    /// Score a model on a dataset and emit metric reports.
    Evaluate(EvaluateArgs),
    /// Render a saved model as text or Graphviz dot.
    Inspect(InspectArgs),
    /// Time tree growth across dataset size, depth, and worker count.
    Bench(BenchArgs),
}

#[derive(Clone, Copy, PartialEq, Eq, ValueEnum)]
enum TruthFlag {
    /// One choice model shared by every context.
    ContextFree,
    /// Segment tree over contexts with a choice model per segment.
    Cmt,
    /// Gaussian-mixture contexts with a choice model per cluster.
    Kmeans,
    /// Segmented market of (bid, win) auctions.
    Auction,
}

#[derive(Args)]
struct SimulateArgs {
    /// Generator family.
    #[arg(long, value_enum)]
    truth: TruthFlag,
    #[arg(long)]
    seed: u64,
    /// Rows to draw.
    #[arg(long)]
    n: usize,
    /// Segment count (auction generator only).
    #[arg(long, default_value_t = 8)]
    segments: usize,
    /// Bid range (auction generator only).
    #[arg(long, default_value_t = 0.1)]
    bid_min: f64,
    #[arg(long, default_value_t = 10.0)]
    bid_max: f64,
    /// train,validation,test row counts; emits three files sharing one truth
    /// instead of a single data.csv.
    #[arg(long)]
    split: Option<String>,
    /// Output directory.
    #[arg(long, default_value = ".")]
    out: PathBuf,
    /// key = value file applied on top of the flags.
    #[arg(long)]
    config: Option<PathBuf>,
}

#[derive(Args)]
struct TrainArgs {
    /// Training dataset CSV.
    #[arg(long)]
    train: PathBuf,
    /// Validation CSV; required with --kmax, unused otherwise.
    #[arg(long)]
    validation: Option<PathBuf>,
    /// Output model path.
    #[arg(long)]
    out: PathBuf,
    #[arg(long)]
    seed: u64,
    #[arg(long)]
    max_depth: Option<usize>,
    /// Minimum rows per leaf.
    #[arg(long)]
    min_leaf: Option<usize>,
    /// Candidate thresholds per split variable sit at every q-th quantile.
    #[arg(long)]
    q_split: Option<usize>,
    #[arg(long)]
    workers: Option<usize>,
    #[arg(long, default_value = "mnl")]
    leaf_family: String,
    /// Tune a clustered baseline over K = 1..=kmax instead of growing a tree.
    #[arg(long)]
    kmax: Option<usize>,
    /// Ingestion filter like "price<=4000"; repeatable.
    #[arg(long)]
    filter: Vec<String>,
    /// key = value file applied on top of the flags.
    #[arg(long)]
    config: Option<PathBuf>,
}

#[derive(Args)]
struct PruneArgs {
    /// Trained tree (mst-v1).
    #[arg(long)]
    model: PathBuf,
    /// Validation dataset CSV.
    #[arg(long)]
    validation: PathBuf,
    /// Output model path.
    #[arg(long)]
    out: PathBuf,
    /// Subtree selection metric: family-loss, mse, or nll.
    #[arg(long, default_value = "family-loss")]
    metric: String,
    /// Ingestion filter like "price<=4000"; repeatable.
    #[arg(long)]
    filter: Vec<String>,
    /// key = value file applied on top of the flags.
    #[arg(long)]
    config: Option<PathBuf>,
}

#[derive(Args)]
struct PredictArgs {
    /// Saved model (mst-v1 or mstkm-v1).
    #[arg(long)]
    model: PathBuf,
    /// Dataset CSV to score.
    #[arg(long)]
    test: PathBuf,
    /// Output CSV path.
    #[arg(long)]
    out: PathBuf,
    /// Ingestion filter like "price<=4000"; repeatable.
    #[arg(long)]
    filter: Vec<String>,
}

#[derive(Args)]
struct EvaluateArgs {
    /// Saved model (mst-v1 or mstkm-v1).
    #[arg(long)]
    model: PathBuf,
    /// Dataset CSV to score.
    #[arg(long)]
    test: PathBuf,
    /// Metrics to report (mae|mse|nll|auc); repeatable.  Defaults to the
    /// payload's natural set.
    #[arg(long)]
    metric: Vec<String>,
    /// Generative-truth JSON; required for mae.
    #[arg(long)]
    truth_file: Option<PathBuf>,
    /// Directory for report.tsv and report.json; stdout always gets the table.
    #[arg(long)]
    out: Option<PathBuf>,
    /// Ingestion filter like "price<=4000"; repeatable.
    #[arg(long)]
    filter: Vec<String>,
    /// key = value file applied on top of the flags.
    #[arg(long)]
    config: Option<PathBuf>,
}

#[derive(Args)]
struct InspectArgs {
    /// Saved model (mst-v1 or mstkm-v1).
    #[arg(long)]
    model: PathBuf,
    /// Emit Graphviz dot instead of indented text (trees only).
    #[arg(long)]
    dot: bool,
}

#[derive(Args)]
struct BenchArgs {
    #[arg(long, default_value_t = 0)]
    seed: u64,
    /// Worker count for the parallel-growth column.
    #[arg(long, default_value_t = 2)]
    workers: usize,
    /// Optional path for the table; stdout always gets it.
    #[arg(long)]
    out: Option<PathBuf>,
    /// key = value file applied on top of the flags.
    #[arg(long)]
    config: Option<PathBuf>,
}

fn main() {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("info"))
        .format_timestamp(None)
        .init();
    let cli = Cli::parse();
    let result = match cli.command {
        Command::Simulate(args) => commands::simulate(args),
        Command::Train(args) => commands::train(args),
        Command::Prune(args) => commands::prune(args),
        Command::Predict(args) => commands::predict(args),
        Command::Evaluate(args) => commands::evaluate(args),
        Command::Inspect(args) => commands::inspect(args),
        Command::Bench(args) => commands::bench(args),
    };
    if let Err(err) = result {
        eprintln!("error: {err}");
        std::process::exit(1);
    }
}
