//! Command-line front end.

mod commands;
mod config;
mod output;

use std::path::PathBuf;

use clap::{Args, Parser, Subcommand};

use qder::data_io::RecordFormat;
use qder::diagnostics::{DumpMode, LabelKind};
use qder::interaction::{HeadKind, InteractionOp};

pub use config::{Resolved, Settings};

#[derive(Debug, Parser)]
#[command(
    name = "qder",
    version,
    about = "Entity- and token-aware neural re-ranking with bilinear scoring"
)]
pub struct Cli {
    /// TOML file of flat settings; flags override its values.
    #[arg(long, global = true, value_name = "FILE")]
    pub config: Option<PathBuf>,
    /// Worker threads. Defaults to all cores; 1 gives bit-reproducible output.
    #[arg(long, global = true, value_name = "N")]
    pub threads: Option<usize>,
    /// Random seed for folds, sampling and initialisation.
    #[arg(long, global = true)]
    pub seed: Option<u64>,
    /// Directory receiving every artifact and manifest.json.
    #[arg(long, global = true, value_name = "DIR", default_value = "qder-out")]
    pub out: PathBuf,
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Check corpus and query files and report every violation.
    Validate(ValidateArgs),
    /// Cross-validate the scorer; writes fold checkpoints, logs and the out-of-fold run.
    Train {
        #[command(flatten)]
        data: DataArgs,
        #[command(flatten)]
        train: TrainArgs,
    },
    /// Re-rank a candidate run with a saved checkpoint.
    Rerank {
        #[command(flatten)]
        data: DataArgs,
        /// Checkpoint written by `train`.
        #[arg(long, value_name = "FILE")]
        checkpoint: PathBuf,
    },
    /// Interpolate two runs after per-query min-max normalisation.
    Fuse(FuseArgs),
    /// Score runs against qrels, with significance tests and per-query analyses.
    Eval(EvalArgs),
    /// Cross-validate every ablation variant.
    Ablate {
        #[command(flatten)]
        data: DataArgs,
        #[command(flatten)]
        train: TrainArgs,
    },
    /// Measure how feature directions and rankings react to embedding noise.
    Noise(NoiseArgs),
    /// Clustering quality of embedding dumps.
    Cluster(ClusterArgs),
    /// Generate a planted-signal dataset.
    Synth(SynthArgs),
}

#[derive(Debug, Args)]
pub struct ValidateArgs {
    #[arg(long, value_name = "FILE")]
    pub corpus: Option<PathBuf>,
    #[arg(long, value_name = "FILE")]
    pub queries: Option<PathBuf>,
    /// Record layout; sniffed from the file when omitted.
    #[arg(long, value_parser = parse_format)]
    pub format: Option<RecordFormat>,
    /// Longest document accepted, in tokens.
    #[arg(long)]
    pub max_seq_len: Option<usize>,
}

#[derive(Debug, Clone, Default, Args)]
pub struct DataArgs {
    /// Document records (NDJSON or packed).
    #[arg(long, value_name = "FILE")]
    pub corpus: Option<PathBuf>,
    /// Query records (NDJSON or packed).
    #[arg(long, value_name = "FILE")]
    pub queries: Option<PathBuf>,
    /// First-stage candidate run in TREC format.
    #[arg(long, value_name = "FILE")]
    pub run: Option<PathBuf>,
    /// Relevance judgments in TREC format.
    #[arg(long, value_name = "FILE")]
    pub qrels: Option<PathBuf>,
    /// Longest document accepted, in tokens.
    #[arg(long)]
    pub max_seq_len: Option<usize>,
    /// Metric cutoff for nDCG and precision.
    #[arg(long)]
    pub k: Option<usize>,
}

#[derive(Debug, Clone, Default, Args)]
pub struct TrainArgs {
    #[arg(long)]
    pub learning_rate: Option<f64>,
    #[arg(long)]
    pub batch_size: Option<usize>,
    #[arg(long)]
    pub epochs: Option<usize>,
    #[arg(long)]
    pub warmup_steps: Option<usize>,
    /// Number of cross-validation folds.
    #[arg(long)]
    pub folds: Option<usize>,
    /// Comma-separated interaction ops: multiply, add, subtract. `none` disables all.
    #[arg(long, value_parser = parse_ops)]
    pub ops: Option<OpList>,
    /// Drop the text channel.
    #[arg(long)]
    pub no_text: bool,
    /// Drop the entity channel.
    #[arg(long)]
    pub no_entity: bool,
    /// Do not scale pooled features by the first-stage score.
    #[arg(long)]
    pub no_score_scaling: bool,
    /// Scoring head: bilinear or linear.
    #[arg(long, value_parser = parse_head)]
    pub head: Option<HeadKind>,
    /// Train per-channel affine adapters with the head.
    #[arg(long)]
    pub adapter: bool,
}

#[derive(Debug, Args)]
pub struct FuseArgs {
    /// Run weighted by lambda.
    #[arg(long, value_name = "FILE")]
    pub run_a: PathBuf,
    /// Run weighted by 1 - lambda.
    #[arg(long, value_name = "FILE")]
    pub run_b: PathBuf,
    #[arg(long, value_name = "FILE")]
    pub qrels: Option<PathBuf>,
    /// `folds.json` from `train`; lambda is then fit per fold on the other folds' queries.
    #[arg(long, value_name = "FILE")]
    pub folds_file: Option<PathBuf>,
    /// Use this lambda instead of fitting one.
    #[arg(long)]
    pub lambda: Option<f64>,
    /// Spacing of the lambda grid.
    #[arg(long)]
    pub grid_step: Option<f64>,
}

#[derive(Debug, Args)]
pub struct EvalArgs {
    /// Run to evaluate; repeatable. Named after the file stem.
    #[arg(long = "run", value_name = "FILE", required = true)]
    pub runs: Vec<PathBuf>,
    /// Reference run for significance tests, difficulty bins and rank shifts.
    #[arg(long, value_name = "FILE")]
    pub baseline: Option<PathBuf>,
    #[arg(long, value_name = "FILE")]
    pub qrels: Option<PathBuf>,
    /// Metric cutoff for nDCG and precision.
    #[arg(long)]
    pub k: Option<usize>,
}

#[derive(Debug, Args)]
pub struct NoiseArgs {
    /// Trials per noise level.
    #[arg(long, default_value_t = 100)]
    pub trials: usize,
    /// Comma-separated noise standard deviations.
    #[arg(long, value_delimiter = ',')]
    pub sigmas: Option<Vec<f64>>,
    /// Comma-separated ops to study; all by default.
    #[arg(long, value_parser = parse_ops)]
    pub ops: Option<OpList>,
    #[arg(long, default_value_t = 100)]
    pub candidates: usize,
    #[arg(long, default_value_t = 4)]
    pub query_tokens: usize,
    #[arg(long, default_value_t = 16)]
    pub doc_tokens: usize,
    #[arg(long, default_value_t = 16)]
    pub dim: usize,
}

#[derive(Debug, Args)]
pub struct ClusterArgs {
    /// Existing NDJSON dump(s) of {id, label, vec}; skips dumping.
    #[arg(long, value_name = "FILE")]
    pub points: Vec<PathBuf>,
    #[command(flatten)]
    pub data: DataArgs,
    /// Model whose feature vectors are dumped.
    #[arg(long, value_name = "FILE")]
    pub checkpoint: Option<PathBuf>,
    /// query_specific (needs a checkpoint) or static_pool.
    #[arg(long, value_parser = parse_mode)]
    pub mode: Option<DumpMode>,
    /// relevance or topic.
    #[arg(long, value_parser = parse_labels, default_value = "relevance")]
    pub labels: LabelKind,
}

#[derive(Debug, Args)]
pub struct SynthArgs {
    /// TOML file of generator settings.
    #[arg(long, value_name = "FILE", conflicts_with = "fixture")]
    pub spec: Option<PathBuf>,
    /// The small 10-query fixture.
    #[arg(long)]
    pub fixture: bool,
}

/// Parsed `--ops` value; empty means no interactions.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct OpList(pub Vec<InteractionOp>);

fn parse_ops(s: &str) -> Result<OpList, String> {
    if s == "none" {
        return Ok(OpList(Vec::new()));
    }
    s.split(',')
        .map(|p| p.trim().parse::<InteractionOp>().map_err(|e| e.to_string()))
        .collect::<Result<_, _>>()
        .map(OpList)
}

fn parse_head(s: &str) -> Result<HeadKind, String> {
    match s {
        "bilinear" => Ok(HeadKind::Bilinear),
        "linear" => Ok(HeadKind::Linear),
        other => Err(format!("unknown head {other:?}")),
    }
}

fn parse_format(s: &str) -> Result<RecordFormat, String> {
    s.parse().map_err(|e: qder::QderError| e.to_string())
}

fn parse_mode(s: &str) -> Result<DumpMode, String> {
    s.parse().map_err(|e: qder::QderError| e.to_string())
}

fn parse_labels(s: &str) -> Result<LabelKind, String> {
    s.parse().map_err(|e: qder::QderError| e.to_string())
}

/// Parse arguments, run the command and return the process exit code.
pub fn run() -> i32 {
    let cli = match Cli::try_parse() {
        Ok(cli) => cli,
        Err(e) => {
            let _ = e.print();
            return if e.use_stderr() { 1 } else { 0 };
        }
    };
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("info")).init();
    if let Some(n) = cli.threads {
        if n == 0 {
            eprintln!("error: --threads must be ≥ 1");
            return 1;
        }
        if let Err(e) = rayon::ThreadPoolBuilder::new()
            .num_threads(n)
            .build_global()
        {
            eprintln!("error: {e}");
            return 1;
        }
    }
    match commands::dispatch(cli) {
        Ok(code) => code,
        Err(e) => {
            eprintln!("error: {e}");
            e.exit_code()
        }
    }
}
