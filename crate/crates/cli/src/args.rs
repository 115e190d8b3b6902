use std::path::PathBuf;

use clap::{Args, Parser, Subcommand, ValueEnum};
use serde::Serialize;

#[derive(Debug, Parser)]
#[command(
    name = "delius",
    version,
    about = "Deep embedded clustering of feature vectors"
)]
pub struct Cli {
    /// Seed for every random choice the command makes.
    #[arg(long, global = true, default_value_t = 0)]
    pub seed: u64,

    /// Worker threads; 1 keeps results byte-reproducible across machines.
    #[arg(long, global = true, env = "DELIUS_THREADS", default_value_t = 1)]
    pub threads: usize,

    /// Where to write the run manifest (defaults next to the main output).
    #[arg(long, global = true)]
    pub manifest: Option<PathBuf>,

    /// CSV feature files start with a header row.
    #[arg(long, global = true)]
    pub csv_header: bool,

    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Average-pool DELM feature maps into a feature matrix.
    Gap(GapArgs),
    /// Train the autoencoder on reconstruction.
    Pretrain(PretrainArgs),
    /// Refine encoder and centroids with the KL clustering objective.
    Cluster(ClusterArgs),
    /// Internal metrics (and accuracy, given labels) of an assignment.
    Eval(EvalArgs),
    /// PCA + k-means or autoencoder + k-means.
    Baseline(BaselineArgs),
    /// 2-D (or r-D) projection of points for plotting.
    Project(ProjectArgs),
    /// SVG scatter plot of projected points colored by cluster.
    Plot(PlotArgs),
    /// pretrain → cluster → eval → project → plot.
    Run(RunArgs),
}

impl Command {
    pub fn name(&self) -> &'static str {
        match self {
            Command::Gap(_) => "gap",
            Command::Pretrain(_) => "pretrain",
            Command::Cluster(_) => "cluster",
            Command::Eval(_) => "eval",
            Command::Baseline(_) => "baseline",
            Command::Project(_) => "project",
            Command::Plot(_) => "plot",
            Command::Run(_) => "run",
        }
    }
}

#[derive(Debug, Clone, Copy, ValueEnum, Serialize)]
#[serde(rename_all = "lowercase")]
pub enum DtypeArg {
    F32,
    F64,
}

#[derive(Debug, Clone, Copy, ValueEnum, Serialize)]
#[serde(rename_all = "lowercase")]
pub enum LabelColumnArg {
    Style,
    Genre,
}

#[derive(Debug, Clone, Copy, ValueEnum, Serialize)]
#[serde(rename_all = "kebab-case")]
pub enum StrategyArg {
    PcaKmeans,
    AeKmeans,
}

#[derive(Debug, Clone, Copy, ValueEnum, Serialize)]
#[serde(rename_all = "lowercase")]
pub enum MethodArg {
    Pca,
    Tsne,
}

#[derive(Debug, Clone, Args, Serialize)]
pub struct AdamOpts {
    #[arg(long, default_value_t = 1e-3)]
    pub lr: f64,
    #[arg(long, default_value_t = 0.9)]
    pub beta1: f64,
    #[arg(long, default_value_t = 0.999)]
    pub beta2: f64,
    #[arg(long, default_value_t = 1e-8)]
    pub epsilon: f64,
}

#[derive(Debug, Clone, Args, Serialize)]
pub struct PretrainOpts {
    /// Encoder widths after the input; the decoder mirrors them.
    #[arg(long, value_delimiter = ',', default_value = "500,500,2000,10")]
    pub encoder_dims: Vec<usize>,
    #[arg(long, default_value_t = 200)]
    pub epochs: usize,
}

#[derive(Debug, Clone, Args, Serialize)]
pub struct ClusterOpts {
    /// Minibatch steps between full-data target refreshes.
    #[arg(long, default_value_t = 140)]
    pub update_interval: usize,
    /// Stop once fewer than this fraction of labels change between refreshes.
    #[arg(long, default_value_t = 0.001)]
    pub delta: f64,
    #[arg(long, default_value_t = 20_000)]
    pub max_iterations: usize,
    /// k-means restarts for the centroid initialization.
    #[arg(long, default_value_t = 20)]
    pub restarts: usize,
}

#[derive(Debug, Clone, Args, Serialize)]
pub struct LabelOpts {
    /// CSV with columns id,style,genre.
    #[arg(long)]
    pub labels_manifest: Option<PathBuf>,
    /// Restrict accuracy (or stratification) to one label column.
    #[arg(long, value_enum)]
    pub label_column: Option<LabelColumnArg>,
}

#[derive(Debug, Clone, Args, Serialize)]
pub struct GapArgs {
    #[arg(long)]
    pub maps: PathBuf,
    #[arg(long)]
    pub out: PathBuf,
    #[arg(long, value_enum, default_value_t = DtypeArg::F64)]
    pub dtype: DtypeArg,
}

#[derive(Debug, Clone, Args, Serialize)]
pub struct PretrainArgs {
    #[arg(long)]
    pub features: PathBuf,
    #[arg(long)]
    pub out_checkpoint: PathBuf,
    /// Loss curve CSV (epoch,loss); defaults to <checkpoint>.loss.csv.
    #[arg(long)]
    pub out_curve: Option<PathBuf>,
    #[arg(long, default_value_t = 256)]
    pub batch: usize,
    #[command(flatten)]
    pub pretrain: PretrainOpts,
    #[command(flatten)]
    pub adam: AdamOpts,
}

#[derive(Debug, Clone, Args, Serialize)]
pub struct ClusterArgs {
    #[arg(long)]
    pub features: PathBuf,
    #[arg(long)]
    pub ae_checkpoint: PathBuf,
    #[arg(long)]
    pub k: usize,
    #[arg(long, default_value_t = 256)]
    pub batch: usize,
    #[command(flatten)]
    pub cluster: ClusterOpts,
    #[command(flatten)]
    pub adam: AdamOpts,
    #[arg(long)]
    pub out_assignments: PathBuf,
    #[arg(long)]
    pub out_checkpoint: PathBuf,
    /// Refresh history CSV; defaults to <assignments>.history.csv.
    #[arg(long)]
    pub out_history: Option<PathBuf>,
    /// Final embedded points (DELF or CSV by extension).
    #[arg(long)]
    pub out_embedded: Option<PathBuf>,
}

#[derive(Debug, Clone, Args, Serialize)]
pub struct EvalArgs {
    /// Points the metrics are computed in (typically the embedded matrix).
    #[arg(long)]
    pub points: PathBuf,
    #[arg(long)]
    pub assignments: PathBuf,
    #[command(flatten)]
    pub labels: LabelOpts,
    #[arg(long, default_value = "embedded")]
    pub space_tag: String,
    #[arg(long)]
    pub out: PathBuf,
}

#[derive(Debug, Clone, Args, Serialize)]
pub struct BaselineArgs {
    #[arg(long, value_enum)]
    pub strategy: StrategyArg,
    #[arg(long)]
    pub features: PathBuf,
    #[arg(long)]
    pub k: usize,
    /// Principal components kept by pca-kmeans.
    #[arg(long, default_value_t = 200)]
    pub r: usize,
    /// Pretrained autoencoder, required by ae-kmeans.
    #[arg(long)]
    pub ae_checkpoint: Option<PathBuf>,
    #[arg(long, default_value_t = 20)]
    pub restarts: usize,
    #[command(flatten)]
    pub labels: LabelOpts,
    #[arg(long)]
    pub out: PathBuf,
    #[arg(long)]
    pub out_assignments: Option<PathBuf>,
}

#[derive(Debug, Clone, Args, Serialize)]
pub struct ProjectOpts {
    #[arg(long, value_enum, default_value_t = MethodArg::Tsne)]
    pub method: MethodArg,
    /// Components kept by PCA.
    #[arg(long, default_value_t = 2)]
    pub r: usize,
    #[arg(long, default_value_t = 30.0)]
    pub perplexity: f64,
    #[arg(long, default_value_t = 1000)]
    pub tsne_iterations: usize,
}

#[derive(Debug, Clone, Args, Serialize)]
pub struct ProjectArgs {
    #[arg(long)]
    pub points: PathBuf,
    #[command(flatten)]
    pub projection: ProjectOpts,
    /// Stratified sampling fraction in (0, 1].
    #[arg(long, default_value_t = 1.0)]
    pub fraction: f64,
    /// Cluster assignments used as strata when no label column is given.
    #[arg(long)]
    pub assignments: Option<PathBuf>,
    #[command(flatten)]
    pub labels: LabelOpts,
    #[arg(long)]
    pub out: PathBuf,
}

#[derive(Debug, Clone, Args, Serialize)]
pub struct PlotArgs {
    /// Projection CSV (id plus at least two coordinate columns).
    #[arg(long)]
    pub xy: PathBuf,
    #[arg(long)]
    pub assignments: PathBuf,
    #[arg(long)]
    pub out: PathBuf,
    #[arg(long)]
    pub title: Option<String>,
    #[arg(long, default_value_t = 800)]
    pub width: u32,
    #[arg(long, default_value_t = 800)]
    pub height: u32,
    #[arg(long, default_value_t = 3.0)]
    pub radius: f64,
}

#[derive(Debug, Clone, Args, Serialize)]
pub struct RunArgs {
    #[arg(long)]
    pub features: PathBuf,
    #[arg(long)]
    pub k: usize,
    #[arg(long)]
    pub out_dir: PathBuf,
    #[arg(long, default_value_t = 256)]
    pub batch: usize,
    #[command(flatten)]
    pub pretrain: PretrainOpts,
    #[command(flatten)]
    pub cluster: ClusterOpts,
    #[command(flatten)]
    pub adam: AdamOpts,
    #[command(flatten)]
    pub projection: ProjectOpts,
    /// Stratified sampling fraction for the projection and plot.
    #[arg(long, default_value_t = 0.1)]
    pub fraction: f64,
    #[command(flatten)]
    pub labels: LabelOpts,
}
