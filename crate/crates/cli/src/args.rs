use std::path::PathBuf;

use clap::{Args, Parser, Subcommand, ValueEnum};
use serde::Deserialize;

#[derive(Debug, Parser)]
#[command(name = "dsmis", version, about = "Importance sampling for context-dependent sequence evolution")]
pub struct Cli {
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Estimate the dependent-site transition probability of a sequence pair.
    Estimate(EstimateArgs),
    /// Evaluate sample-size bounds over a grid of (r, T, lambda).
    Bound(BoundArgs),
    /// Run the island problem: estimate, bounds and (when small) the exact value.
    Island(IslandArgs),
    /// Exact transition probability and ordering tables on small instances.
    Oracle(OracleArgs),
    /// Bound vs empirical sample-size curves (CSV and SVG).
    Figure(FigureArgs),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum, Default)]
pub enum Format {
    #[default]
    Json,
    Csv,
}

#[derive(Debug, Clone, Default, Args)]
pub struct PairArgs {
    /// Two-record FASTA file holding x then y.
    #[arg(long, conflicts_with_all = ["x", "y"])]
    pub fasta: Option<PathBuf>,
    /// Start sequence.
    #[arg(long, requires = "y")]
    pub x: Option<String>,
    /// End sequence.
    #[arg(long, requires = "x")]
    pub y: Option<String>,
}

#[derive(Debug, Clone, Default, Args)]
pub struct ModelArgs {
    /// Built-in model name; table models come from a config file.
    #[arg(long, value_name = "NAME")]
    pub model: Option<String>,
    /// CpG multiplier.
    #[arg(long)]
    pub lambda: Option<f64>,
}

#[derive(Debug, Clone, Default, Args)]
pub struct RunArgs {
    /// Time horizon.
    #[arg(long = "T", value_name = "T")]
    pub horizon: Option<f64>,
    /// Number of importance samples.
    #[arg(long = "N", value_name = "N")]
    pub samples: Option<usize>,
    #[arg(long)]
    pub seed: Option<u64>,
    /// Worker streams; results depend on this count.
    #[arg(long, env = "DSMIS_WORKERS")]
    pub workers: Option<usize>,
}

#[derive(Debug, Clone, Default, Args)]
pub struct EstimateArgs {
    /// JSON config file; flags override its values.
    #[arg(long)]
    pub config: Option<PathBuf>,
    #[command(flatten)]
    pub pair: PairArgs,
    #[command(flatten)]
    pub model: ModelArgs,
    #[command(flatten)]
    pub run: RunArgs,
    /// Report the median of independent batches, sized for failure probability delta.
    #[arg(long, value_name = "DELTA")]
    pub median_delta: Option<f64>,
    #[arg(long, value_enum, default_value_t)]
    pub format: Format,
    /// Write to this file instead of stdout.
    #[arg(long)]
    pub out: Option<PathBuf>,
    /// Record wall-clock time (makes output non-reproducible).
    #[arg(long)]
    pub timing: bool,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum KindArg {
    All,
    Theorem1,
    Theorem3,
    Prop3,
    Prop4,
}

#[derive(Debug, Clone, Args)]
pub struct BoundArgs {
    #[command(flatten)]
    pub pair: PairArgs,
    /// Sequence length for island instances.
    #[arg(long)]
    pub n: Option<usize>,
    /// Observed mutation counts (even; island instances).
    #[arg(long, value_delimiter = ',')]
    pub r: Vec<usize>,
    /// Absolute time horizons.
    #[arg(long = "T", value_name = "T", value_delimiter = ',')]
    pub horizon: Vec<f64>,
    /// Time horizons as multiples of r/n.
    #[arg(long, value_delimiter = ',', conflicts_with = "horizon")]
    pub t_mult: Vec<f64>,
    #[arg(long, value_delimiter = ',', required = true)]
    pub lambda: Vec<f64>,
    #[arg(long, value_enum, default_value = "all")]
    pub kind: KindArg,
    #[arg(long, default_value_t = 0.01)]
    pub epsilon: f64,
    #[arg(long, value_enum, default_value = "csv")]
    pub format: Format,
    #[arg(long)]
    pub out: Option<PathBuf>,
}

#[derive(Debug, Clone, Args)]
pub struct IslandArgs {
    #[arg(long)]
    pub config: Option<PathBuf>,
    /// Number of islands r_I.
    #[arg(long)]
    pub islands: usize,
    /// Pad with inert sites to this length.
    #[arg(long)]
    pub n: Option<usize>,
    #[arg(long)]
    pub lambda: Option<f64>,
    #[command(flatten)]
    pub run: RunArgs,
    #[arg(long, value_enum, default_value = "csv")]
    pub format: Format,
    #[arg(long)]
    pub out: Option<PathBuf>,
}

#[derive(Debug, Clone, Args)]
pub struct OracleArgs {
    #[arg(long)]
    pub config: Option<PathBuf>,
    #[command(flatten)]
    pub pair: PairArgs,
    #[command(flatten)]
    pub model: ModelArgs,
    #[arg(long = "T", value_name = "T")]
    pub horizon: Option<f64>,
    /// Emit the ordering table over permutations of the mutated sites.
    #[arg(long)]
    pub orderings: bool,
    /// Largest state space to build.
    #[arg(long, default_value_t = 16_384)]
    pub state_limit: u64,
    #[arg(long, value_enum, default_value_t)]
    pub format: Format,
    #[arg(long)]
    pub out: Option<PathBuf>,
}

/// Built-in figure grids.
#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum, Default, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Preset {
    #[default]
    Paper,
    Desk,
}

#[derive(Debug, Clone, Args)]
pub struct FigureArgs {
    /// JSON grid file; flags override its values.
    #[arg(long)]
    pub config: Option<PathBuf>,
    /// Base grid (default paper).
    #[arg(long, value_enum)]
    pub preset: Option<Preset>,
    #[arg(long)]
    pub n: Option<usize>,
    #[arg(long)]
    pub lambda: Option<f64>,
    #[arg(long)]
    pub epsilon: Option<f64>,
    #[arg(long, value_delimiter = ',')]
    pub r: Option<Vec<usize>>,
    /// Time horizons as multiples of r/n.
    #[arg(long, value_delimiter = ',', conflicts_with = "horizon")]
    pub t_mult: Option<Vec<f64>>,
    /// Absolute time horizons.
    #[arg(long = "T", value_name = "T", value_delimiter = ',')]
    pub horizon: Option<Vec<f64>>,
    #[arg(long)]
    pub replicates: Option<usize>,
    #[arg(long = "N", value_name = "N")]
    pub samples: Option<usize>,
    #[arg(long)]
    pub seed: Option<u64>,
    #[arg(long, env = "DSMIS_WORKERS")]
    pub workers: Option<usize>,
    /// Directory for figure.csv and figure.svg.
    #[arg(long, default_value = ".")]
    pub out_dir: PathBuf,
    /// Stop after this many seconds, leaving a resume token.
    #[arg(long)]
    pub budget_secs: Option<f64>,
    /// Continue a run stopped by the budget.
    #[arg(long)]
    pub resume: Option<String>,
}
