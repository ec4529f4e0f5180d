mod commands;

use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};
use matchcut::datastore::Task;
use matchcut::Error;

#[derive(Parser)]
#[command(name = "matchcut", version, about = "Rank match-cut candidate shot pairs")]
pub struct Cli {
    /// Directory holding one movie pack per subdirectory.
    #[arg(long, global = true, env = "MATCHCUT_DATA_ROOT")]
    data_root: Option<PathBuf>,
    /// Seed for every random choice: splits, sampling, index levels, and
    /// the first of the training seeds.
    #[arg(long, global = true, default_value_t = 0)]
    seed: u64,
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
pub enum Command {
    /// Remove near-duplicate shots of one movie.
    Dedup {
        #[command(flatten)]
        pack: PackArg,
        #[arg(long, default_value_t = matchcut::dedup::DEFAULT_THRESHOLD)]
        threshold: f64,
        #[arg(long)]
        out: PathBuf,
    },
    /// Exact top-K pairs of one movie under a similarity function.
    Topk {
        #[command(flatten)]
        pack: PackArg,
        /// cosine_features, face_count_equal, mask_iou, instance_iou,
        /// flow_cosine, their h1..h5 aliases, or `learned` with --model.
        #[arg(long)]
        sim: String,
        #[arg(long, default_value_t = 50)]
        k: usize,
        /// Feature pack for vector-based functions.
        #[arg(long)]
        encoder: Option<String>,
        /// Checkpoint backing `--sim learned`.
        #[arg(long)]
        model: Option<PathBuf>,
        /// Append this function's top-K pairs not already ranked.
        #[arg(long)]
        union_with: Option<String>,
        #[command(flatten)]
        dedup: DedupArgs,
        #[arg(long)]
        out: PathBuf,
    },
    /// Build an approximate nearest-neighbor index over all movies.
    Index {
        #[arg(long)]
        encoder: String,
        /// Metric-head checkpoint applied to the vectors before indexing.
        #[arg(long)]
        model: Option<PathBuf>,
        /// Scan every vector instead of building a graph.
        #[arg(long)]
        exhaustive: bool,
        #[arg(long, default_value_t = 16)]
        m: usize,
        #[arg(long, default_value_t = 200)]
        ef_construction: usize,
        #[arg(long, default_value_t = 128)]
        ef_search: usize,
        #[command(flatten)]
        dedup: DedupArgs,
        #[arg(long)]
        out: PathBuf,
    },
    /// Global top-K pairs from an index.
    Query {
        #[arg(long)]
        index: PathBuf,
        #[arg(long, default_value_t = 50)]
        k: usize,
        /// Keep only pairs within one movie.
        #[arg(long)]
        intra_movie: bool,
        /// Let each shot's own vector occupy one of its k neighbor slots.
        #[arg(long)]
        include_self: bool,
        #[arg(long)]
        out: PathBuf,
    },
    /// Train a pair classifier on the training split.
    TrainClassifier {
        #[command(flatten)]
        data: TrainData,
        /// lr, mlp-s, mlp-m or mlp-l.
        #[arg(long, default_value = "lr")]
        kind: String,
        /// cat, mean or diff.
        #[arg(long, default_value = "cat")]
        aggregator: String,
        #[arg(long)]
        epochs: Option<usize>,
        #[arg(long)]
        out: PathBuf,
    },
    /// Train a metric-learning embedding head on the training split.
    TrainMetric {
        #[command(flatten)]
        data: TrainData,
        #[command(flatten)]
        metric: MetricArgs,
        #[arg(long)]
        out: PathBuf,
    },
    /// Run the seed-repeated experiment protocol for one method.
    Eval {
        #[arg(long)]
        task: Task,
        #[arg(long)]
        labels: Option<PathBuf>,
        /// A similarity function, lr, mlp-s/m/l, or metric.
        #[arg(long)]
        method: String,
        #[arg(long)]
        encoder: Option<String>,
        #[arg(long, default_value = "cat")]
        aggregator: String,
        /// Training runs; seeds are --seed, --seed+1, ...
        #[arg(long, default_value_t = 5)]
        runs: u64,
        /// Random negatives added per movie; 0 disables.
        #[arg(long, default_value_t = 50)]
        random_negatives: usize,
        #[command(flatten)]
        metric: MetricArgs,
        #[arg(long)]
        out: PathBuf,
    },
    /// Merge experiment reports and print the table.
    Report {
        #[arg(required = true)]
        inputs: Vec<PathBuf>,
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Run the embedded oracle checks.
    Selfcheck,
}

#[derive(Args)]
pub struct PackArg {
    /// Movie pack directory.
    #[arg(long, conflicts_with = "movie")]
    pack: Option<PathBuf>,
    /// Movie id under the data root.
    #[arg(long)]
    movie: Option<String>,
}

#[derive(Args)]
pub struct DedupArgs {
    #[arg(long, default_value_t = matchcut::dedup::DEFAULT_THRESHOLD)]
    threshold: f64,
    /// Rank every shot without removing duplicates.
    #[arg(long)]
    no_dedup: bool,
}

#[derive(Args)]
pub struct TrainData {
    #[arg(long)]
    task: Task,
    /// Labels file; defaults to labels.jsonl under the data root.
    #[arg(long)]
    labels: Option<PathBuf>,
    #[arg(long)]
    encoder: String,
    /// Random negatives added per movie; 0 disables.
    #[arg(long, default_value_t = 50)]
    random_negatives: usize,
}

#[derive(Args)]
pub struct MetricArgs {
    #[arg(long)]
    hidden: Option<usize>,
    #[arg(long)]
    output_dim: Option<usize>,
    #[arg(long)]
    batch_size: Option<usize>,
    #[arg(long = "metric-epochs")]
    epochs: Option<usize>,
}

fn exit_code(e: &Error) -> u8 {
    match e {
        Error::InvalidArgument(_) => 2,
        Error::Internal(_) => 4,
        _ => 3,
    }
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    match commands::run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            let report = serde_json::json!({ "error": e.kind(), "message": e.to_string() });
            eprintln!("{report}");
            ExitCode::from(exit_code(&e))
        }
    }
}
