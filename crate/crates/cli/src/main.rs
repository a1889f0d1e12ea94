mod commands;

use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand, ValueEnum};

#[global_allocator]
static GLOBAL: mimalloc::MiMalloc = mimalloc::MiMalloc;

/// Multi-magnification slide graphs: build, train, predict, interpret.
#[derive(Debug, Parser)]
#[command(name = "msgcn", version)]
pub struct Cli {
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Generate a synthetic dataset (manifest, feature files, labels).
    Synth(SynthArgs),
    /// Build one .msgg graph per slide from a tile manifest.
    BuildGraph(BuildArgs),
    /// Stratified k-fold grid search on the training split.
    Cv(TrainArgs),
    /// Select hyperparameters, train the final model and score the test split.
    Train(TrainArgs),
    /// Class probabilities and attention for every graph.
    Predict(PredictArgs),
    /// Per-magnification influence scores.
    Influence(InfluenceArgs),
    /// Attention heatmaps as CSV and PGM.
    Heatmap(HeatmapArgs),
    /// Vertex, edge and degree statistics of graph files.
    Stats(StatsArgs),
}

#[derive(Debug, Clone, Copy, ValueEnum)]
pub enum TaskArg {
    Structure,
    Cellular,
}

#[derive(Debug, Args)]
pub struct SynthArgs {
    /// Where the class signal lives
    #[arg(long, value_enum)]
    pub task: Option<TaskArg>,
    /// Number of slides [default: 40]
    #[arg(long)]
    pub num_wsis: Option<usize>,
    /// Seed for every random stream
    #[arg(long)]
    pub seed: u64,
    /// Output directory
    #[arg(long)]
    pub out: PathBuf,
    /// JSON dataset spec; flags take precedence
    #[arg(long)]
    pub config: Option<PathBuf>,
}

#[derive(Debug, Args)]
pub struct BuildArgs {
    /// Tile manifest (JSON lines)
    #[arg(long)]
    pub manifest: PathBuf,
    /// Root for feature_file paths [default: the manifest's directory]
    #[arg(long)]
    pub features_dir: Option<PathBuf>,
    /// Output directory for <wsi_id>.msgg files
    #[arg(long)]
    pub out: PathBuf,
    /// Worker threads across slides
    #[arg(long, default_value_t = 1)]
    pub threads: usize,
}

#[derive(Debug, Args)]
pub struct TrainArgs {
    /// Directory of .msgg files
    #[arg(long)]
    pub graphs: PathBuf,
    /// CSV with wsi_id,label
    #[arg(long)]
    pub labels: PathBuf,
    /// Seed for every random stream
    #[arg(long)]
    pub seed: u64,
    /// JSON run config {train, grid, model}; flags take precedence
    #[arg(long)]
    pub config: Option<PathBuf>,
    /// Number of cross-validation folds [default: 5]
    #[arg(long)]
    pub folds: Option<usize>,
    /// JSON grid {learning_rates, hidden_dims, dropouts, batch_sizes}
    #[arg(long)]
    pub grid: Option<PathBuf>,
    /// Output directory
    #[arg(long)]
    pub out: PathBuf,
}

#[derive(Debug, Args)]
pub struct PredictArgs {
    /// Model file (.msgp with its .json sidecar)
    #[arg(long)]
    pub model: PathBuf,
    /// Directory of .msgg files, or one file
    #[arg(long)]
    pub graphs: PathBuf,
    /// Output JSON file
    #[arg(long)]
    pub out: PathBuf,
    /// Worker threads across slides
    #[arg(long, default_value_t = 1)]
    pub threads: usize,
}

#[derive(Debug, Args)]
pub struct InfluenceArgs {
    /// Model file (.msgp with its .json sidecar)
    #[arg(long)]
    pub model: PathBuf,
    /// Directory of .msgg files, or one file
    #[arg(long)]
    pub graphs: PathBuf,
    /// Output JSON report
    #[arg(long)]
    pub out: PathBuf,
}

#[derive(Debug, Args)]
pub struct HeatmapArgs {
    /// Model file (.msgp with its .json sidecar)
    #[arg(long)]
    pub model: PathBuf,
    /// Directory of .msgg files, or one file
    #[arg(long)]
    pub graphs: PathBuf,
    /// Magnification level (1-based) [default: every level]
    #[arg(long)]
    pub mag_level: Option<u32>,
    /// Output directory
    #[arg(long)]
    pub out: PathBuf,
}

#[derive(Debug, Args)]
pub struct StatsArgs {
    /// Directory of .msgg files, or one file
    #[arg(long)]
    pub graphs: PathBuf,
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
    match commands::run(cli.command) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(e.exit_code())
        }
    }
}
