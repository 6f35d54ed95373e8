use std::path::PathBuf;

use clap::{Args, Parser, Subcommand, ValueEnum};

#[derive(Debug, Parser)]
#[command(name = "mgccf", version, about = "Multi-graph convolution collaborative filtering")]
pub struct Cli {
    /// Worker threads for graph building and evaluation.
    #[arg(long, global = true, env = "MGCCF_THREADS")]
    pub threads: Option<usize>,

    /// Log progress to stderr.
    #[arg(short, long, global = true)]
    pub verbose: bool,

    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Filter, index and split raw interactions into a dataset snapshot.
    Prepare(PrepareArgs),
    /// Build similarity graphs and neighbour samples for a snapshot.
    BuildGraphs(BuildGraphsArgs),
    /// Train a model.
    Train(TrainArgs),
    /// Score a checkpoint on the validation or test split.
    Evaluate(EvaluateArgs),
    /// Train over a grid of learning rates and regularisation weights.
    Sweep(SweepArgs),
    /// Dump fused embeddings as `index<TAB>v1,...,vd` lines.
    ExportEmbeddings(ExportArgs),
}

#[derive(Debug, Args)]
pub struct PrepareArgs {
    /// Raw interaction file (`user item [...]` per line).
    #[arg(long, conflicts_with = "synthetic")]
    pub input: Option<PathBuf>,
    /// Generate a planted-block dataset instead of reading a file.
    #[arg(long)]
    pub synthetic: bool,
    #[arg(long, requires = "synthetic")]
    pub users: Option<usize>,
    #[arg(long, requires = "synthetic")]
    pub items: Option<usize>,
    #[arg(long, requires = "synthetic")]
    pub blocks: Option<usize>,
    #[arg(long, requires = "synthetic")]
    pub p_within: Option<f64>,
    #[arg(long, requires = "synthetic")]
    pub p_across: Option<f64>,
    #[arg(long, value_enum)]
    pub format: Option<FormatArg>,
    #[arg(long)]
    pub min_interactions: Option<usize>,
    /// Output directory.
    #[arg(long)]
    pub out: PathBuf,
    #[command(flatten)]
    pub common: CommonArgs,
}

#[derive(Debug, Args)]
pub struct BuildGraphsArgs {
    #[arg(long)]
    pub dataset: PathBuf,
    /// Output bundle file.
    #[arg(long)]
    pub out: PathBuf,
    #[arg(long)]
    pub target_degree: Option<f64>,
    #[arg(long)]
    pub max_degree: Option<usize>,
    /// Number of pre-sampled neighbour sets.
    #[arg(long)]
    pub sets: Option<usize>,
    /// Per-hop sample sizes, first hop first.
    #[arg(long, value_delimiter = ',')]
    pub sample_sizes: Option<Vec<usize>>,
    #[command(flatten)]
    pub common: CommonArgs,
}

#[derive(Debug, Args)]
pub struct CommonArgs {
    /// JSON run configuration; flags override its values.
    #[arg(long)]
    pub config: Option<PathBuf>,
    #[arg(long)]
    pub seed: Option<u64>,
}

#[derive(Debug, Clone, Copy, ValueEnum)]
pub enum FormatArg {
    Auto,
    Whitespace,
    Csv,
}

#[derive(Debug, Clone, Copy, ValueEnum)]
pub enum ModelArg {
    MultiGccf,
    Bprmf,
}

#[derive(Debug, Clone, Copy, ValueEnum)]
pub enum FusionArg {
    Sum,
    Concat,
    Attention,
}

#[derive(Debug, Clone, Copy, ValueEnum)]
pub enum NeighborhoodArg {
    Full,
    Union,
}

#[derive(Debug, Clone, Copy, ValueEnum)]
pub enum SplitArg {
    Validation,
    Test,
}

#[derive(Debug, Clone, Copy, ValueEnum)]
pub enum SideArg {
    Users,
    Items,
}

/// Model, training and evaluation overrides shared by `train` and `sweep`.
#[derive(Debug, Args)]
pub struct ModelArgs {
    #[arg(long, value_enum)]
    pub model: Option<ModelArg>,
    #[arg(long, value_enum)]
    pub fusion: Option<FusionArg>,
    /// Drop the multi-graph branch.
    #[arg(long)]
    pub no_mge: bool,
    /// Drop the skip connection.
    #[arg(long)]
    pub no_skip: bool,
    /// Bipartite GCN depth.
    #[arg(long, value_parser = clap::value_parser!(u8).range(1..=2))]
    pub bipar_hops: Option<u8>,
    #[arg(long)]
    pub input_dim: Option<usize>,
    #[arg(long)]
    pub layer1_dim: Option<usize>,
    #[arg(long)]
    pub output_dim: Option<usize>,
    #[arg(long)]
    pub dropout: Option<f64>,
    #[arg(long)]
    pub lambda: Option<f64>,
    #[arg(long)]
    pub beta: Option<f64>,
    /// Also apply the weight penalty to the embedding tables.
    #[arg(long)]
    pub regularize_embeddings: bool,
    #[arg(long)]
    pub lr: Option<f64>,
    #[arg(long)]
    pub batch_size: Option<usize>,
    #[arg(long)]
    pub epochs: Option<usize>,
    #[arg(long)]
    pub patience: Option<usize>,
    #[arg(long)]
    pub eval_every: Option<usize>,
    #[arg(long)]
    pub validation_users: Option<usize>,
    #[command(flatten)]
    pub eval: EvalArgs,
}

#[derive(Debug, Args)]
pub struct EvalArgs {
    #[arg(long, value_delimiter = ',')]
    pub cutoffs: Option<Vec<usize>>,
    #[arg(long, value_enum)]
    pub eval_neighborhood: Option<NeighborhoodArg>,
    #[arg(long)]
    pub max_eval_neighbors: Option<usize>,
}

#[derive(Debug, Args)]
pub struct TrainArgs {
    /// Dataset snapshot written by `prepare`.
    #[arg(long)]
    pub dataset: PathBuf,
    /// Graph bundle written by `build-graphs`; built on the fly if absent.
    #[arg(long)]
    pub graphs: Option<PathBuf>,
    /// Output directory.
    #[arg(long)]
    pub out: PathBuf,
    /// BPRMF checkpoint to initialise and freeze the embedding tables.
    #[arg(long)]
    pub warm_start: Option<PathBuf>,
    #[command(flatten)]
    pub model: ModelArgs,
    #[command(flatten)]
    pub common: CommonArgs,
}

#[derive(Debug, Args)]
pub struct EvaluateArgs {
    #[arg(long)]
    pub dataset: PathBuf,
    #[arg(long)]
    pub checkpoint: PathBuf,
    #[arg(long)]
    pub graphs: Option<PathBuf>,
    #[arg(long, value_enum, default_value = "test")]
    pub split: SplitArg,
    /// Write `<out>.json` and `<out>.csv`.
    #[arg(long)]
    pub out: Option<PathBuf>,
    #[command(flatten)]
    pub eval: EvalArgs,
    #[command(flatten)]
    pub common: CommonArgs,
}

#[derive(Debug, Args)]
pub struct SweepArgs {
    #[arg(long)]
    pub dataset: PathBuf,
    #[arg(long)]
    pub graphs: Option<PathBuf>,
    #[arg(long)]
    pub out: PathBuf,
    #[arg(long, value_delimiter = ',', default_value = "0.0001,0.001,0.01,0.1")]
    pub lrs: Vec<f64>,
    /// Weight-penalty grid; defaults to the configured value.
    #[arg(long, value_delimiter = ',')]
    pub lambdas: Option<Vec<f64>>,
    /// Embedding-penalty grid; defaults to the configured value.
    #[arg(long, value_delimiter = ',')]
    pub betas: Option<Vec<f64>>,
    #[command(flatten)]
    pub model: ModelArgs,
    #[command(flatten)]
    pub common: CommonArgs,
}

#[derive(Debug, Args)]
pub struct ExportArgs {
    #[arg(long)]
    pub dataset: PathBuf,
    #[arg(long)]
    pub checkpoint: PathBuf,
    #[arg(long)]
    pub graphs: Option<PathBuf>,
    #[arg(long, value_enum, default_value = "users")]
    pub side: SideArg,
    /// Output text file.
    #[arg(long)]
    pub out: PathBuf,
    #[command(flatten)]
    pub eval: EvalArgs,
    #[command(flatten)]
    pub common: CommonArgs,
}
