//! `ktlab`: ingest interaction logs, format them as prompts, train the
//! language model and the classical tracers, and run the evaluation
//! protocols.

mod commands;
mod config;
mod models;
mod output;

use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand, ValueEnum};
use ktlab::ktlp::RepresentationMode;

#[derive(Parser, Debug)]
#[command(name = "ktlab", version, about = "Knowledge tracing as language processing")]
pub struct Cli {
    /// JSON run configuration.
    #[arg(long, global = true)]
    pub config: Option<PathBuf>,
    /// Global seed; overrides the config.
    #[arg(long, global = true)]
    pub seed: Option<u64>,
    /// Output directory; overrides the config.
    #[arg(long, global = true, env = "KTLAB_OUT")]
    pub out: Option<PathBuf>,
    /// Worker threads for independent grid cells.
    #[arg(long, global = true)]
    pub threads: Option<usize>,
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Subcommand, Debug)]
pub enum Command {
    /// Load a raw CSV, filter it and write the canonical dataset plus stats.
    Ingest(IngestArgs),
    /// Print dataset statistics.
    Stats(DataArg),
    /// Render a dataset as prompt/answer JSONL.
    Format(FormatArgs),
    /// Train the language model on formatted examples.
    TrainLm(TrainLmArgs),
    /// Tune a low-rank adapter on a frozen checkpoint.
    FinetuneLora(FinetuneArgs),
    /// Fit BKT, IRT, PFA or DKT.
    TrainBaseline(BaselineArgs),
    /// Score a dataset with a trained model.
    Evaluate(ModelDataArgs),
    /// Run the cold-start grid from the config.
    Coldstart,
    /// Tune on one configured dataset, evaluate on another.
    Crossdomain(CrossArgs),
    /// Reliability table and ECE.
    Calibrate(CalibrateArgs),
    /// Per-KC mastery trajectory of one student.
    Trajectory(TrajectoryArgs),
    /// Generate a synthetic BKT dataset.
    Synth(SynthArgs),
}

#[derive(Args, Debug)]
pub struct IngestArgs {
    #[arg(long)]
    pub input: PathBuf,
    #[arg(long, default_value = "student_id")]
    pub student_col: String,
    #[arg(long, default_value = "step")]
    pub step_col: String,
    #[arg(long, default_value = "exercise_id")]
    pub exercise_col: String,
    #[arg(long, default_value = "kc_id")]
    pub kc_col: String,
    #[arg(long, default_value = "kc_name")]
    pub kc_name_col: String,
    #[arg(long, default_value = "correct")]
    pub correct_col: String,
    /// Drop students with fewer interactions.
    #[arg(long, default_value_t = 1)]
    pub min_interactions: usize,
    /// Keep at most this many interactions per student.
    #[arg(long)]
    pub max_interactions: Option<usize>,
}

#[derive(Args, Debug)]
pub struct DataArg {
    /// Canonical dataset CSV.
    #[arg(long)]
    pub data: PathBuf,
}

#[derive(Clone, Copy, Debug, ValueEnum)]
pub enum ModeArg {
    Description,
    Id,
}

impl From<ModeArg> for RepresentationMode {
    fn from(m: ModeArg) -> Self {
        match m {
            ModeArg::Description => RepresentationMode::Description,
            ModeArg::Id => RepresentationMode::Id,
        }
    }
}

#[derive(Args, Debug)]
pub struct PromptArgs {
    /// Overrides the config's representation mode.
    #[arg(long, value_enum)]
    pub mode: Option<ModeArg>,
    /// Prompt template JSON; overrides the config.
    #[arg(long)]
    pub template: Option<PathBuf>,
}

#[derive(Args, Debug)]
pub struct FormatArgs {
    #[arg(long)]
    pub data: PathBuf,
    #[command(flatten)]
    pub prompt: PromptArgs,
}

#[derive(Args, Debug)]
pub struct ScheduleArgs {
    #[arg(long)]
    pub epochs: Option<usize>,
    #[arg(long)]
    pub lr: Option<f64>,
    #[arg(long)]
    pub batch_size: Option<usize>,
}

#[derive(Args, Debug)]
pub struct TrainLmArgs {
    /// Formatted JSONL examples.
    #[arg(long)]
    pub examples: PathBuf,
    /// Existing vocabulary; built from the examples when absent.
    #[arg(long)]
    pub vocab: Option<PathBuf>,
    #[command(flatten)]
    pub schedule: ScheduleArgs,
}

#[derive(Args, Debug)]
pub struct FinetuneArgs {
    #[arg(long)]
    pub base: PathBuf,
    #[arg(long)]
    pub vocab: PathBuf,
    #[arg(long)]
    pub examples: PathBuf,
    #[arg(long)]
    pub rank: Option<usize>,
    #[arg(long)]
    pub alpha: Option<f64>,
    #[command(flatten)]
    pub schedule: ScheduleArgs,
}

#[derive(Clone, Copy, Debug, ValueEnum, PartialEq, Eq)]
pub enum BaselineKind {
    Bkt,
    Irt,
    Pfa,
    Dkt,
}

#[derive(Args, Debug)]
pub struct BaselineArgs {
    #[arg(long, value_enum)]
    pub kind: BaselineKind,
    #[arg(long)]
    pub data: PathBuf,
}

#[derive(Args, Debug)]
pub struct ModelDataArgs {
    /// Model file from `train-lm`, `finetune-lora` or `train-baseline`.
    #[arg(long)]
    pub model: PathBuf,
    /// Vocabulary, required for language-model checkpoints.
    #[arg(long)]
    pub vocab: Option<PathBuf>,
    #[arg(long)]
    pub data: PathBuf,
    #[command(flatten)]
    pub prompt: PromptArgs,
    #[arg(long, default_value_t = 10)]
    pub bins: usize,
}

#[derive(Args, Debug)]
pub struct CrossArgs {
    #[arg(long)]
    pub source: Option<String>,
    #[arg(long)]
    pub target: Option<String>,
    /// Name of a model in the config.
    #[arg(long)]
    pub model: Option<String>,
    #[arg(long)]
    pub n_students: Option<usize>,
}

#[derive(Args, Debug)]
pub struct CalibrateArgs {
    /// Records CSV written by `evaluate`.
    #[arg(long, conflicts_with_all = ["model", "data"])]
    pub records: Option<PathBuf>,
    #[arg(long, requires = "data")]
    pub model: Option<PathBuf>,
    #[arg(long)]
    pub vocab: Option<PathBuf>,
    #[arg(long, requires = "model")]
    pub data: Option<PathBuf>,
    #[command(flatten)]
    pub prompt: PromptArgs,
    #[arg(long, default_value_t = 10)]
    pub bins: usize,
}

#[derive(Args, Debug)]
pub struct TrajectoryArgs {
    #[arg(long)]
    pub model: PathBuf,
    #[arg(long)]
    pub vocab: Option<PathBuf>,
    #[arg(long)]
    pub data: PathBuf,
    #[arg(long)]
    pub student: String,
    /// Comma-separated KC ids; every KC in the dataset when absent.
    #[arg(long, value_delimiter = ',')]
    pub kcs: Vec<String>,
    #[command(flatten)]
    pub prompt: PromptArgs,
}

#[derive(Args, Debug)]
pub struct SynthArgs {
    #[arg(long, default_value_t = 100)]
    pub students: usize,
    #[arg(long, default_value_t = 20)]
    pub steps: usize,
    /// World description JSON; the built-in five-KC world when absent.
    #[arg(long)]
    pub world: Option<PathBuf>,
    #[arg(long, default_value = "")]
    pub prefix: String,
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("info")).init();
    let cli = Cli::parse();
    match commands::run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e:#}");
            ExitCode::from(commands::exit_code(&e))
        }
    }
}
