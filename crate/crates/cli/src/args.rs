use clap::{Args, Parser, Subcommand, ValueEnum};
use occfield::losses::LossKind;
use occfield::renderer::SampleMode;
use std::path::PathBuf;

#[derive(Parser, Debug)]
#[command(name = "occfield", version, about = "Voxel feature-field fitting and zero-shot semantic occupancy")]
pub struct Cli {
    #[command(flatten)]
    pub global: GlobalArgs,
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Args, Debug, Clone)]
pub struct GlobalArgs {
    /// Worker threads (defaults to one per core).
    #[arg(long, global = true, env = "OCCFIELD_THREADS")]
    pub threads: Option<usize>,
    /// Reduce per-chunk gradients in a fixed order so results do not depend
    /// on scheduling.
    #[arg(long, global = true)]
    pub deterministic: bool,
    /// Print the report as JSON instead of text.
    #[arg(long, global = true)]
    pub json: bool,
    /// More log output; repeat for more detail.
    #[arg(short, long, global = true, action = clap::ArgAction::Count)]
    pub verbose: u8,
    /// Only log errors.
    #[arg(short, long, global = true)]
    pub quiet: bool,
}

#[derive(Subcommand, Debug)]
pub enum Command {
    /// Build a synthetic ground-truth bundle: grid, labels, cameras,
    /// vocabulary and rendered target maps.
    Synth(SynthArgs),
    /// Fit a voxel grid to target feature (or RGB) maps.
    Fit(FitArgs),
    /// Render feature, depth and RGB maps of a grid for every camera.
    Render(RenderArgs),
    /// Train a feature reducer on a vocabulary and optionally compress a
    /// bundle's feature maps.
    Reduce(ReduceArgs),
    /// Label each voxel with its best-matching class.
    Segment(SegmentArgs),
    /// Score every voxel against one text query.
    Retrieve(RetrieveArgs),
    /// Compare a prediction with ground-truth labels.
    Eval(EvalArgs),
    /// Check analytic gradients against central finite differences.
    Gradcheck(GradcheckArgs),
}

#[derive(Args, Debug)]
#[command(allow_negative_numbers = true)]
pub struct SynthArgs {
    /// Output bundle directory.
    #[arg(long, required_unless_present = "dump_spec")]
    pub out: Option<PathBuf>,
    /// Scene description (JSON); the built-in street scene when omitted.
    #[arg(long)]
    pub spec: Option<PathBuf>,
    #[arg(long)]
    pub seed: Option<u64>,
    /// Number of orbit cameras.
    #[arg(long)]
    pub cameras: Option<usize>,
    /// Standard deviation of Gaussian noise added to target features.
    #[arg(long)]
    pub noise: Option<f64>,
    /// Print the scene description that would be used and stop.
    #[arg(long)]
    pub dump_spec: bool,
}

#[derive(Clone, Copy, Debug, ValueEnum)]
#[value(rename_all = "snake_case")]
pub enum LossArg {
    CosGuidedMse,
    Mse,
    Cosine,
    Photometric,
}

impl From<LossArg> for LossKind {
    fn from(l: LossArg) -> Self {
        match l {
            LossArg::CosGuidedMse => LossKind::CosGuidedMse,
            LossArg::Mse => LossKind::Mse,
            LossArg::Cosine => LossKind::Cosine,
            LossArg::Photometric => LossKind::Photometric,
        }
    }
}

#[derive(Clone, Copy, Debug, ValueEnum)]
pub enum SampleArg {
    Uniform,
    Stratified,
}

impl From<SampleArg> for SampleMode {
    fn from(s: SampleArg) -> Self {
        match s {
            SampleArg::Uniform => SampleMode::Uniform,
            SampleArg::Stratified => SampleMode::Stratified,
        }
    }
}

#[derive(Args, Debug)]
#[command(allow_negative_numbers = true)]
pub struct FitArgs {
    /// Bundle written by `synth`; supplies the track, target maps and grid
    /// geometry.
    #[arg(long)]
    pub bundle: Option<PathBuf>,
    /// Camera track (JSON); overrides the bundle's.
    #[arg(long)]
    pub track: Option<PathBuf>,
    /// Directory holding `maps/feat_*` / `maps/rgb_*` targets; overrides
    /// the bundle.
    #[arg(long)]
    pub maps: Option<PathBuf>,
    /// Output directory for the grid, optimizer state and report.
    #[arg(long)]
    pub out: PathBuf,
    /// Fit configuration (JSON); flags override its fields.
    #[arg(long)]
    pub config: Option<PathBuf>,
    /// Starting grid instead of the default initialization.
    #[arg(long, conflicts_with = "resume")]
    pub init: Option<PathBuf>,
    /// Continue from a previous `fit` output directory.
    #[arg(long)]
    pub resume: Option<PathBuf>,

    /// Rays per step [default: 32768].
    #[arg(long)]
    pub rays: Option<usize>,
    /// Samples per ray [default: 100].
    #[arg(long)]
    pub samples: Option<usize>,
    /// Frame offsets used: |offset| ≤ horizon [default: 12].
    #[arg(long)]
    pub horizon: Option<u32>,
    /// Optimizer steps [default: 2000].
    #[arg(long)]
    pub steps: Option<usize>,
    /// Adam step size [default: 0.1].
    #[arg(long)]
    pub lr: Option<f64>,
    /// Adam first-moment decay [default: 0.9].
    #[arg(long)]
    pub beta1: Option<f64>,
    /// Adam second-moment decay [default: 0.999].
    #[arg(long)]
    pub beta2: Option<f64>,
    /// Adam denominator guard [default: 1e-8].
    #[arg(long)]
    pub eps: Option<f64>,
    /// Training loss [default: cos_guided_mse].
    #[arg(long, value_enum)]
    pub loss: Option<LossArg>,
    /// Ray start distance [default: 0.5].
    #[arg(long)]
    pub near: Option<f64>,
    /// Ray end distance [default: farthest camera-to-grid-corner distance].
    #[arg(long)]
    pub far: Option<f64>,
    /// Sample placement along rays [default: stratified].
    #[arg(long, value_enum)]
    pub sample_mode: Option<SampleArg>,
    /// Seed for ray batches, sample jitter and initialization [default: 0].
    #[arg(long)]
    pub seed: Option<u64>,
    /// Multiplier from density to extinction [default: 1].
    #[arg(long)]
    pub density_scale: Option<f64>,
    /// Total-variation weight on density logits [default: 0].
    #[arg(long)]
    pub tv_weight: Option<f64>,
    /// Longest voxel feature vector allowed after each update [default: 1].
    #[arg(long, conflicts_with = "no_feature_norm_cap")]
    pub feature_norm_cap: Option<f64>,
    /// Leave voxel feature norms unbounded.
    #[arg(long)]
    pub no_feature_norm_cap: bool,
}

#[derive(Args, Debug)]
#[command(allow_negative_numbers = true)]
pub struct RenderArgs {
    #[arg(long)]
    pub grid: PathBuf,
    #[arg(long)]
    pub track: PathBuf,
    #[arg(long)]
    pub out: PathBuf,
    #[arg(long, default_value_t = occfield::trainer::DEFAULT_NEAR)]
    pub near: f64,
    /// Defaults to the farthest camera-to-grid-corner distance.
    #[arg(long)]
    pub far: Option<f64>,
    #[arg(long, default_value_t = 100)]
    pub samples: usize,
    #[arg(long, value_enum, default_value = "uniform")]
    pub sample_mode: SampleArg,
    #[arg(long, default_value_t = 1.0)]
    pub density_scale: f64,
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
    /// Only frames with |offset| ≤ horizon.
    #[arg(long)]
    pub horizon: Option<u32>,
}

#[derive(Args, Debug)]
#[command(allow_negative_numbers = true)]
pub struct ReduceArgs {
    /// Vocabulary whose prompt embeddings are the training set.
    #[arg(long)]
    pub vocab: PathBuf,
    #[arg(long)]
    pub target_dim: usize,
    #[arg(long)]
    pub out: PathBuf,
    /// Reducer training configuration (JSON); flags override its fields.
    #[arg(long)]
    pub config: Option<PathBuf>,
    #[arg(long)]
    pub steps: Option<usize>,
    #[arg(long)]
    pub lr: Option<f64>,
    #[arg(long)]
    pub final_lr_fraction: Option<f64>,
    #[arg(long)]
    pub seed: Option<u64>,
    /// Also compress this bundle's feature maps into `<out>/maps`.
    #[arg(long)]
    pub bundle: Option<PathBuf>,
}

#[derive(Args, Debug, Clone)]
pub struct QueryArgs {
    #[arg(long)]
    pub grid: PathBuf,
    #[arg(long)]
    pub vocab: PathBuf,
    /// Reducer applied to the vocabulary before matching.
    #[arg(long)]
    pub reducer: Option<PathBuf>,
    /// Unnormalized dot product instead of cosine similarity.
    #[arg(long)]
    pub raw_dot: bool,
}

#[derive(Args, Debug)]
#[command(allow_negative_numbers = true)]
pub struct SegmentArgs {
    #[command(flatten)]
    pub query: QueryArgs,
    /// Density threshold for occupancy.
    #[arg(long, default_value_t = occfield::inference::DEFAULT_TAU)]
    pub tau: f64,
    #[arg(long)]
    pub out: PathBuf,
}

#[derive(Args, Debug)]
#[command(allow_negative_numbers = true)]
pub struct RetrieveArgs {
    #[arg(long)]
    pub grid: PathBuf,
    /// Query vector (JSON array); alternative to --vocab/--class.
    #[arg(long, conflicts_with_all = ["vocab", "class"])]
    pub query: Option<PathBuf>,
    #[arg(long, requires = "class")]
    pub vocab: Option<PathBuf>,
    #[arg(long, requires = "vocab")]
    pub class: Option<String>,
    /// Which of the class's prompts to use.
    #[arg(long, default_value_t = 0)]
    pub prompt: usize,
    #[arg(long)]
    pub reducer: Option<PathBuf>,
    #[arg(long)]
    pub raw_dot: bool,
    /// Voxels below this density score lowest.
    #[arg(long)]
    pub density_filter: Option<f64>,
    /// Also write a 0/1 mask of voxels scoring at least this value.
    #[arg(long)]
    pub threshold: Option<f64>,
    /// Best-scoring voxels listed in the report.
    #[arg(long, default_value_t = 10)]
    pub top: usize,
    #[arg(long)]
    pub out: PathBuf,
}

#[derive(Args, Debug)]
#[command(allow_negative_numbers = true)]
pub struct EvalArgs {
    /// Ground-truth labels.
    #[arg(long)]
    pub gt: PathBuf,
    /// Predicted labels from `segment`.
    #[arg(long, conflicts_with_all = ["grid", "tau"])]
    pub pred: Option<PathBuf>,
    /// Fitted grid; segmented here at every --tau.
    #[arg(long, requires = "vocab")]
    pub grid: Option<PathBuf>,
    #[arg(long)]
    pub vocab: Option<PathBuf>,
    #[arg(long)]
    pub reducer: Option<PathBuf>,
    #[arg(long)]
    pub raw_dot: bool,
    /// Occupancy thresholds, comma separated.
    #[arg(long, value_delimiter = ',')]
    pub tau: Vec<f64>,
    /// Camera track; enables the retrieval mAP benchmark (needs --grid).
    #[arg(long, requires = "grid")]
    pub track: Option<PathBuf>,
    /// Directory for the report and manifest.
    #[arg(long)]
    pub out: Option<PathBuf>,
}

#[derive(Args, Debug)]
#[command(allow_negative_numbers = true)]
pub struct GradcheckArgs {
    /// Voxels per axis.
    #[arg(long, default_value_t = 4)]
    pub grid: usize,
    #[arg(long, default_value_t = 8)]
    pub feature_dim: usize,
    #[arg(long, default_value_t = 16)]
    pub rays: usize,
    #[arg(long, default_value_t = 8)]
    pub samples: usize,
    /// Finite-difference step.
    #[arg(long, default_value_t = 1e-4)]
    pub step: f64,
    #[arg(long, default_value_t = 1.0)]
    pub density_scale: f64,
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
    /// Exit with status 3 when the error exceeds this.
    #[arg(long, default_value_t = 1e-4)]
    pub tolerance: f64,
    #[arg(long)]
    pub out: Option<PathBuf>,
}
