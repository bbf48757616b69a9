use std::path::PathBuf;

use clap::{Args, Parser, Subcommand, ValueEnum};
use pathprune_fuzz::campaign::Mode;

#[derive(Debug, Parser)]
#[command(name = "pathprune", version, about = "Directed fuzzing by static path pruning")]
pub struct Cli {
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Find relevant blocks and insert markers.
    Analyze(AnalyzeArgs),
    /// Insert pruning exits into a marked program.
    Prune(PruneArgs),
    /// Interpret a program on one input.
    Run(RunArgs),
    /// Run one fuzzing campaign.
    Fuzz(FuzzArgs),
    /// Replay a corpus on a marked program and compute metrics.
    Replay(ReplayArgs),
    /// Compare two replay reports.
    Report(ReportArgs),
    /// List, emit or generate benchmark programs.
    #[command(subcommand)]
    Corpus(CorpusCommand),
    /// Analyze, prune, fuzz, replay and compare in one go.
    Pipeline(PipelineArgs),
}

#[derive(Debug, Clone, Args)]
pub struct ProgramArgs {
    /// Program file in .tir syntax.
    #[arg(long, conflicts_with = "scenario")]
    pub program: Option<PathBuf>,
    /// Built-in benchmark program.
    #[arg(long)]
    pub scenario: Option<String>,
    /// Comma-separated target ids; defaults to the program's `targets` line.
    #[arg(long, value_delimiter = ',')]
    pub targets: Vec<String>,
}

#[derive(Debug, Args)]
pub struct AnalyzeArgs {
    #[command(flatten)]
    pub program: ProgramArgs,
    /// Drop indirect call edges instead of matching signatures.
    #[arg(long)]
    pub no_signature_matching: bool,
    #[arg(long)]
    pub emit_marked: Option<PathBuf>,
    /// Write the finder report here instead of stdout.
    #[arg(long)]
    pub emit_report: Option<PathBuf>,
    /// Print the inverse call graph as JSON.
    #[arg(long)]
    pub dump_callgraph: bool,
}

#[derive(Debug, Args)]
pub struct PruneArgs {
    /// Marked program.
    #[arg(long = "in")]
    pub input: PathBuf,
    /// Pruned program; stdout when absent.
    #[arg(long)]
    pub out: Option<PathBuf>,
    #[arg(long)]
    pub stats: Option<PathBuf>,
}

#[derive(Debug, Args)]
pub struct RunArgs {
    #[command(flatten)]
    pub program: ProgramArgs,
    /// `hex:..`, `file:PATH` or `text:..`.
    #[arg(long, default_value = "")]
    pub input: String,
    #[arg(long, default_value_t = 1_000_000)]
    pub budget: u64,
    #[arg(long)]
    pub json: bool,
}

#[derive(Debug, Args)]
pub struct CampaignArgs {
    #[arg(long)]
    pub budget_steps: Option<u64>,
    #[arg(long)]
    pub per_run_budget: Option<u64>,
    /// Initial seed input (`hex:..`, `file:PATH` or `text:..`); repeatable.
    #[arg(long = "seed-input")]
    pub seed_inputs: Vec<String>,
    /// Weight seed selection by distance in pruning mode too.
    #[arg(long)]
    pub distance_energy: bool,
    #[arg(long)]
    pub no_signature_matching: bool,
    /// Additionally stop each campaign after this many seconds.
    #[arg(long)]
    pub wall_clock_secs: Option<f64>,
}

#[derive(Debug, Args)]
pub struct FuzzArgs {
    #[command(flatten)]
    pub program: ProgramArgs,
    #[arg(long, default_value = "pruning")]
    pub mode: Mode,
    #[arg(long, default_value_t = 0)]
    pub rng_seed: u64,
    #[command(flatten)]
    pub campaign: CampaignArgs,
    /// Campaign statistics; stdout when absent.
    #[arg(long)]
    pub out: Option<PathBuf>,
    #[arg(long)]
    pub corpus_dir: Option<PathBuf>,
}

#[derive(Debug, Args)]
pub struct ReplayArgs {
    #[arg(long)]
    pub corpus: PathBuf,
    #[arg(long)]
    pub marked: PathBuf,
    #[arg(long, value_delimiter = ',')]
    pub targets: Vec<String>,
    /// Per-input step limit; defaults to the campaign's.
    #[arg(long)]
    pub budget: Option<u64>,
    /// Report JSON; stdout when absent.
    #[arg(long)]
    pub report: Option<PathBuf>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum Format {
    Table,
    Json,
    Csv,
}

#[derive(Debug, Args)]
pub struct ReportArgs {
    #[arg(long, num_args = 2, value_names = ["A", "B"], required = true)]
    pub compare: Vec<PathBuf>,
    #[arg(long, value_enum, default_value = "table")]
    pub format: Format,
}

#[derive(Debug, Subcommand)]
pub enum CorpusCommand {
    /// List built-in programs.
    List,
    /// Write built-in programs and their metadata.
    Emit {
        /// Program name, or `all`.
        name: String,
        #[arg(long)]
        out: PathBuf,
    },
    /// Generate a random program.
    Gen {
        #[arg(long, default_value_t = 0)]
        seed: u64,
        #[arg(long, default_value_t = 4)]
        functions: usize,
        #[arg(long, default_value_t = 5)]
        blocks: usize,
        #[arg(long, default_value_t = 0.3)]
        indirect: f64,
        #[arg(long, default_value_t = 0.5)]
        collision: f64,
        /// Directory for the program and its metadata; stdout when absent.
        #[arg(long)]
        out: Option<PathBuf>,
    },
}

#[derive(Debug, Args)]
pub struct PipelineArgs {
    /// TOML file with pipeline settings; flags override it.
    #[arg(long)]
    pub config: Option<PathBuf>,
    #[command(flatten)]
    pub program: ProgramArgs,
    #[arg(long, value_delimiter = ',')]
    pub modes: Vec<Mode>,
    #[command(flatten)]
    pub campaign: CampaignArgs,
    /// Run rng seeds 0..N.
    #[arg(long, conflicts_with = "rng_seeds")]
    pub trials: Option<u64>,
    #[arg(long, value_delimiter = ',')]
    pub rng_seeds: Vec<u64>,
    #[arg(long)]
    pub out: Option<PathBuf>,
    /// Concurrent trials.
    #[arg(long)]
    pub jobs: Option<usize>,
}
