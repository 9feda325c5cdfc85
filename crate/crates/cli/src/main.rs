use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand, ValueEnum};
use entailrank::{Error, ErrorKind};

mod stages;

#[derive(Parser)]
#[command(name = "entailrank", version, about = "Rank documents by NLI entailment and evaluate the ranking")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Segment and score every (task, query type, granularity), writing the score cache.
    Score(ScoreArgs),
    /// Aggregate cached scores into rankings and reading lists.
    Rank(RankArgs),
    /// Compute AP and recall curves for every ranking in the output directory.
    Eval(EvalArgs),
    /// Render tables and the recall-curve plot from evaluation output.
    Report(ReportArgs),
    /// Score (or load the cache), rank, evaluate and report in one go.
    Run(RunArgs),
    /// Check a configuration without writing anything.
    Validate(RunArgs),
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, ValueEnum)]
pub enum Adapter {
    Generic,
    India,
    Protestnews,
}

#[derive(Args, Clone, Debug)]
pub struct DataArgs {
    #[arg(long, value_enum, default_value = "generic")]
    pub adapter: Adapter,
    /// Corpus file (generic, protestnews) or release directory (india).
    #[arg(long)]
    pub dataset_path: PathBuf,
    /// Dataset name for query lookup; generic corpora default to the file stem.
    #[arg(long)]
    pub dataset_name: Option<String>,
    /// Draw a seeded random subset of this many documents (protestnews).
    #[arg(long)]
    pub subset_size: Option<usize>,
    #[arg(long)]
    pub seed: Option<u64>,
    /// Restrict to these tasks (comma separated).
    #[arg(long, value_delimiter = ',')]
    pub tasks: Vec<String>,
}

#[derive(Args, Clone, Debug)]
pub struct QueryArgs {
    #[arg(long, value_delimiter = ',', default_value = "declarative,definitional")]
    pub query_type: Vec<String>,
    #[arg(long, value_delimiter = ',', default_value = "sentence,document")]
    pub granularity: Vec<String>,
    /// Query registry file replacing the bundled one.
    #[arg(long)]
    pub queries: Option<PathBuf>,
    /// Abbreviation list replacing the bundled one.
    #[arg(long)]
    pub abbreviations: Option<PathBuf>,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, ValueEnum)]
pub enum CacheMode {
    /// Score with the backend and write nothing to the cache.
    Off,
    /// Read scores from the cache; the backend is never loaded.
    In,
    /// Score with the backend and write the cache.
    Out,
}

#[derive(Args, Clone, Debug)]
pub struct BackendArgs {
    /// mock-marker, mock-oracle, mock-random, dlm, rlm or onnx.
    #[arg(long, default_value = "mock-marker")]
    pub backend: String,
    /// Exported model directory; for dlm/rlm a parent holding `dlm/` and `rlm/` also works.
    #[arg(long, env = "ENTAILRANK_MODEL_DIR")]
    pub model_path: Option<PathBuf>,
    #[arg(long, default_value_t = 16)]
    pub batch_size: usize,
    /// Worker lanes for scoring.
    #[arg(long, default_value_t = 1)]
    pub lanes: usize,
    /// three_way or entailment_vs_contradiction.
    #[arg(long, default_value = "three_way")]
    pub normalization: String,
    /// Marker substring for the mock-marker backend.
    #[arg(long, default_value = "PROTEST_MARKER")]
    pub marker: String,
    #[arg(long, value_enum, default_value = "out")]
    pub cache: CacheMode,
    /// Score cache directory (default: <out-dir>/cache).
    #[arg(long)]
    pub cache_dir: Option<PathBuf>,
}

#[derive(Args, Clone, Debug)]
pub struct ScoreArgs {
    #[command(flatten)]
    pub data: DataArgs,
    #[command(flatten)]
    pub query: QueryArgs,
    #[command(flatten)]
    pub backend: BackendArgs,
    #[arg(long)]
    pub out_dir: PathBuf,
}

#[derive(Args, Clone, Debug)]
pub struct RankArgs {
    #[command(flatten)]
    pub data: DataArgs,
    #[arg(long)]
    pub out_dir: PathBuf,
    #[arg(long)]
    pub cache_dir: Option<PathBuf>,
}

#[derive(Args, Clone, Debug)]
pub struct EvalArgs {
    #[command(flatten)]
    pub data: DataArgs,
    #[arg(long)]
    pub out_dir: PathBuf,
    /// Recall-curve grid step in percent.
    #[arg(long, default_value_t = 1)]
    pub grid_step: u32,
}

#[derive(Args, Clone, Debug)]
pub struct ReportArgs {
    #[arg(long)]
    pub out_dir: PathBuf,
}

#[derive(Args, Clone, Debug)]
pub struct RunArgs {
    #[command(flatten)]
    pub data: DataArgs,
    #[command(flatten)]
    pub query: QueryArgs,
    #[command(flatten)]
    pub backend: BackendArgs,
    #[arg(long)]
    pub out_dir: PathBuf,
    #[arg(long, default_value_t = 1)]
    pub grid_step: u32,
}

fn exit_code(kind: ErrorKind) -> u8 {
    match kind {
        ErrorKind::Config => 1,
        ErrorKind::Data => 2,
        ErrorKind::Backend => 3,
    }
}

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(cli) => cli,
        Err(e) => {
            let _ = e.print();
            return if e.use_stderr() {
                ExitCode::from(1)
            } else {
                ExitCode::SUCCESS
            };
        }
    };
    let (stage, result): (&str, Result<(), Error>) = match cli.command {
        Command::Score(a) => ("score", stages::score(&a)),
        Command::Rank(a) => ("rank", stages::rank(&a)),
        Command::Eval(a) => ("eval", stages::eval(&a)),
        Command::Report(a) => ("report", stages::report(&a)),
        Command::Run(a) => ("run", stages::run(&a)),
        Command::Validate(a) => return stages::validate(&a).map_or(ExitCode::SUCCESS, |k| ExitCode::from(exit_code(k))),
    };
    match result {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error ({stage}): {e}");
            ExitCode::from(exit_code(e.kind()))
        }
    }
}
