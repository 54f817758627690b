use std::path::PathBuf;

use clap::{Args, Parser, Subcommand, ValueEnum};
use ptdet_core::geometry::CanonicalMode;
use ptdet_core::model::{EfsaMode, QueryMode};
use ptdet_core::train::LabelMode;

/// Point-query text detector: data generation, training, evaluation and
/// self-checks.
#[derive(Debug, Parser)]
#[command(name = "ptdet", version)]
pub struct Cli {
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Generate a synthetic split (PGM images plus annotation JSON).
    GenData(GenDataArgs),
    /// Rewrite an annotation file into a canonical label form.
    Canonicalize(CanonicalizeArgs),
    /// Train a detector.
    Train(TrainArgs),
    /// Score a checkpoint on a split.
    Eval(EvalArgs),
    /// Train a grid of configurations and tabulate final F per test split.
    Ablate(AblateArgs),
    /// Finite-difference check of every registered op and the tiny model.
    Gradcheck(GradcheckArgs),
    /// Re-run the command recorded in a manifest.
    Replay(ReplayArgs),
}

#[derive(Debug, Clone, Args)]
pub struct OutputArgs {
    #[arg(long)]
    pub out: PathBuf,
    /// Overwrite an existing non-empty output.
    #[arg(long)]
    pub force: bool,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum RotationSet {
    None,
    /// One angle per scene drawn from the training augmentation set.
    TrainSet,
    /// Each scene kept upright plus one copy per large test angle.
    RotTestSet,
}

#[derive(Debug, Clone, Args)]
pub struct GenDataArgs {
    #[arg(long)]
    pub scenes: usize,
    /// Fraction of instances drawn upside down [default: 0.03].
    #[arg(long)]
    pub inverse_prob: Option<f64>,
    /// Fraction of instances drawn mirrored [default: 0].
    #[arg(long)]
    pub mirrored_prob: Option<f64>,
    #[arg(long, value_enum, default_value_t = RotationSet::None)]
    pub rotation: RotationSet,
    /// Scene parameters as JSON; flags above take precedence.
    #[arg(long)]
    pub params: Option<PathBuf>,
    #[arg(long)]
    pub seed: Option<u64>,
    #[command(flatten)]
    pub output: OutputArgs,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum CanonicalArg {
    Positional,
    ClockwiseOnly,
}

impl From<CanonicalArg> for CanonicalMode {
    fn from(m: CanonicalArg) -> Self {
        match m {
            CanonicalArg::Positional => CanonicalMode::Positional,
            CanonicalArg::ClockwiseOnly => CanonicalMode::ClockwiseOnly,
        }
    }
}

#[derive(Debug, Clone, Args)]
pub struct CanonicalizeArgs {
    #[arg(long = "in")]
    pub input: PathBuf,
    #[arg(long, value_enum, default_value_t = CanonicalArg::Positional)]
    pub mode: CanonicalArg,
    #[command(flatten)]
    pub output: OutputArgs,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum QueryArg {
    Box,
    Point,
}

impl From<QueryArg> for QueryMode {
    fn from(q: QueryArg) -> Self {
        match q {
            QueryArg::Box => QueryMode::BoxBaseline,
            QueryArg::Point => QueryMode::ExplicitPoint,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum EfsaArg {
    Fsa,
    Efsa,
}

impl From<EfsaArg> for EfsaMode {
    fn from(e: EfsaArg) -> Self {
        match e {
            EfsaArg::Fsa => EfsaMode::Fsa,
            EfsaArg::Efsa => EfsaMode::Efsa,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum LabelArg {
    Original,
    Positional,
}

impl From<LabelArg> for LabelMode {
    fn from(l: LabelArg) -> Self {
        match l {
            LabelArg::Original => LabelMode::Original,
            LabelArg::Positional => LabelMode::Positional,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum Switch {
    On,
    Off,
}

/// Training configuration source plus flat overrides.
#[derive(Debug, Clone, Default, Args)]
pub struct ConfigArgs {
    /// Training configuration JSON.
    #[arg(long)]
    pub config: Option<PathBuf>,
    #[arg(long, value_enum)]
    pub query_mode: Option<QueryArg>,
    #[arg(long, value_enum)]
    pub efsa: Option<EfsaArg>,
    #[arg(long, value_enum)]
    pub label_mode: Option<LabelArg>,
    #[arg(long, value_enum)]
    pub rotation: Option<Switch>,
    #[arg(long)]
    pub iterations: Option<usize>,
    #[arg(long)]
    pub seed: Option<u64>,
    /// Let flags replace values the config file sets explicitly.
    #[arg(long)]
    pub allow_override: bool,
}

#[derive(Debug, Clone, Args)]
pub struct TrainArgs {
    #[command(flatten)]
    pub config: ConfigArgs,
    #[arg(long)]
    pub train_data: Option<PathBuf>,
    #[arg(long)]
    pub eval_data: Option<PathBuf>,
    #[command(flatten)]
    pub output: OutputArgs,
}

#[derive(Debug, Clone, Args)]
pub struct EvalArgs {
    #[arg(long)]
    pub checkpoint: PathBuf,
    #[arg(long)]
    pub data: PathBuf,
    #[arg(long, value_enum, default_value_t = LabelArg::Positional)]
    pub label_mode: LabelArg,
    #[arg(long, default_value_t = 0.5)]
    pub iou_threshold: f64,
    #[arg(long, default_value_t = 0.5)]
    pub score_threshold: f64,
    #[arg(long, default_value_t = ptdet_core::geometry::DEFAULT_IOU_RESOLUTION)]
    pub iou_resolution: usize,
    /// Write the report as JSON here (with a manifest beside it).
    #[arg(long)]
    pub out: Option<PathBuf>,
    #[arg(long)]
    pub force: bool,
}

#[derive(Debug, Clone, Args)]
pub struct AblateArgs {
    #[command(flatten)]
    pub config: ConfigArgs,
    #[arg(long)]
    pub train_data: PathBuf,
    /// Held-out split with the training distribution.
    #[arg(long)]
    pub normal_data: PathBuf,
    #[arg(long)]
    pub rotated_data: PathBuf,
    #[arg(long)]
    pub inverse_data: PathBuf,
    /// Comma-separated training seeds.
    #[arg(long, value_delimiter = ',', default_values_t = [0u64, 1, 2])]
    pub seeds: Vec<u64>,
    /// Restrict the default grid to these configuration names.
    #[arg(long, value_delimiter = ',')]
    pub only: Vec<String>,
    #[command(flatten)]
    pub output: OutputArgs,
}

#[derive(Debug, Clone, Args)]
pub struct GradcheckArgs {
    #[arg(long)]
    pub seed: Option<u64>,
    /// Number of seeds derived from `--seed`.
    #[arg(long, default_value_t = 10)]
    pub seeds: usize,
    #[arg(long, default_value_t = 1e-4)]
    pub tolerance: f64,
    #[arg(long, default_value_t = ptdet_core::model::check::FULL_MODEL_TOLERANCE)]
    pub model_tolerance: f64,
    /// `all` or a comma-separated list of registered names.
    #[arg(long, value_delimiter = ',', default_value = "all")]
    pub ops: Vec<String>,
    /// Replace the named op's backward with a wrong one.
    #[arg(long, hide = true)]
    pub inject_fault: Option<String>,
    #[arg(long)]
    pub out: Option<PathBuf>,
    #[arg(long)]
    pub force: bool,
}

#[derive(Debug, Clone, Args)]
pub struct ReplayArgs {
    #[arg(long)]
    pub manifest: PathBuf,
    #[command(flatten)]
    pub output: OutputArgs,
}
