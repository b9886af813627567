use std::path::PathBuf;

use clap::{Args, Parser, Subcommand, ValueEnum};
use repcam::metrics::CostScheme;
use repcam::pipeline::SamplerKind;
use repcam::repcam::{ForwardRoute, MergeMode};
use serde::{Deserialize, Serialize};

pub const SEED_ENV: &str = "REPCAM_SEED";

#[derive(Debug, Parser)]
#[command(name = "repcam", version, about = "Content-aware video super-resolution with re-parameterizable branches")]
pub struct Cli {
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Generate a synthetic test video as a PPM frame directory.
    Synth(SynthArgs),
    /// Split HR frames into chunks of bicubic LR frames for delivery.
    Chunk(ChunkArgs),
    /// Train a multi-branch model (and per-chunk prompts) on a video.
    Train(TrainArgs),
    /// Collapse a trained multi-branch model into its single-branch form.
    Fuse(FuseArgs),
    /// Check that a fused model reproduces its multi-branch source.
    VerifyFuse(VerifyFuseArgs),
    /// Super-resolve a chunked LR video.
    Infer(InferArgs),
    /// Score SR frames against HR frames.
    Eval(EvalArgs),
    /// Delivery cost under each transmission scheme.
    CostReport(CostReportArgs),
}

#[derive(Debug, Clone, Args, Serialize, Deserialize)]
pub struct SynthArgs {
    /// Output frame directory.
    #[arg(long)]
    pub out: PathBuf,
    #[arg(long, default_value_t = 16)]
    pub frames: usize,
    #[arg(long, default_value_t = 96)]
    pub height: usize,
    #[arg(long, default_value_t = 96)]
    pub width: usize,
    /// Per-frame translation in pixels, rows.
    #[arg(long, default_value_t = 1, allow_hyphen_values = true)]
    pub motion_y: i32,
    /// Per-frame translation in pixels, columns.
    #[arg(long, default_value_t = 2, allow_hyphen_values = true)]
    pub motion_x: i32,
    #[arg(long, env = SEED_ENV, default_value_t = 0)]
    pub seed: u64,
}

#[derive(Debug, Clone, Args, Serialize, Deserialize)]
pub struct ChunkArgs {
    /// HR frame directory.
    #[arg(long)]
    pub frames: PathBuf,
    /// Output directory; receives one LR frame directory per chunk.
    #[arg(long)]
    pub out: PathBuf,
    #[arg(long, default_value_t = 2, value_parser = clap::value_parser!(u32).range(2..=4))]
    pub scale: u32,
    #[arg(long, default_value_t = 9)]
    pub chunks: usize,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum SamplerArg {
    Uniform,
    Loss,
}

impl From<SamplerArg> for SamplerKind {
    fn from(s: SamplerArg) -> Self {
        match s {
            SamplerArg::Uniform => SamplerKind::Uniform,
            SamplerArg::Loss => SamplerKind::Loss,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum MergeArg {
    Sum,
    Concat,
}

impl From<MergeArg> for MergeMode {
    fn from(m: MergeArg) -> Self {
        match m {
            MergeArg::Sum => MergeMode::Sum,
            MergeArg::Concat => MergeMode::Concat,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum RouteArg {
    Branchwise,
    Reparameterized,
}

impl From<RouteArg> for ForwardRoute {
    fn from(r: RouteArg) -> Self {
        match r {
            RouteArg::Branchwise => ForwardRoute::Branchwise,
            RouteArg::Reparameterized => ForwardRoute::Reparameterized,
        }
    }
}

#[derive(Debug, Clone, Args, Serialize, Deserialize)]
pub struct TrainArgs {
    /// Replay the run recorded in a manifest. Only --out may be changed.
    #[arg(long)]
    #[serde(skip)]
    pub from_manifest: Option<PathBuf>,
    /// HR frame directory.
    #[arg(long, required_unless_present = "from_manifest")]
    pub frames: Option<PathBuf>,
    /// Model container, or a directory of containers with --baseline-per-chunk.
    #[arg(long, required_unless_present = "from_manifest")]
    pub out: Option<PathBuf>,
    #[arg(long, default_value_t = 2, value_parser = clap::value_parser!(u32).range(2..=4))]
    pub scale: u32,
    #[arg(long, default_value_t = 9)]
    pub chunks: usize,
    #[arg(long, default_value_t = 3)]
    pub branches: usize,
    #[arg(long, default_value_t = 16)]
    pub channels: usize,
    #[arg(long, default_value_t = 2)]
    pub blocks: usize,
    #[arg(long, value_enum, default_value_t = MergeArg::Sum)]
    pub merge: MergeArg,
    /// Train without the bicubic skip connection.
    #[arg(long)]
    pub no_global_skip: bool,
    /// Prompt edge in LR pixels; 0 disables prompts.
    #[arg(long, default_value_t = 48)]
    pub tvp_size: usize,
    #[arg(long, value_enum, default_value_t = SamplerArg::Loss)]
    pub sampler: SamplerArg,
    /// Train one single-branch model per chunk instead of a shared model.
    #[arg(long)]
    pub baseline_per_chunk: bool,
    #[arg(long, env = SEED_ENV, default_value_t = 0)]
    pub seed: u64,
    /// Overrides --iterations when given.
    #[arg(long)]
    pub epochs: Option<u64>,
    #[arg(long, default_value_t = 2000)]
    pub iterations: u64,
    #[arg(long, default_value_t = 64)]
    pub batch: usize,
    /// HR patch edge.
    #[arg(long, default_value_t = 48)]
    pub patch_size: usize,
    #[arg(long = "lr", default_value_t = 5e-5)]
    pub learning_rate: f64,
    #[arg(long, default_value_t = 200)]
    pub decay_epoch: u64,
    #[arg(long, default_value_t = 0.5)]
    pub decay_factor: f64,
    #[arg(long, value_enum, default_value_t = RouteArg::Reparameterized)]
    pub route: RouteArg,
    /// Every n-th frame is scored at each epoch end.
    #[arg(long, default_value_t = 10)]
    pub eval_stride: usize,
}

#[derive(Debug, Clone, Args, Serialize, Deserialize)]
pub struct FuseArgs {
    /// Trained model container.
    #[arg(long)]
    pub model: PathBuf,
    #[arg(long)]
    pub out: PathBuf,
}

#[derive(Debug, Clone, Args, Serialize, Deserialize)]
pub struct VerifyFuseArgs {
    /// Multi-branch model container.
    #[arg(long)]
    pub model: PathBuf,
    /// Fused container; fused in memory when omitted.
    #[arg(long)]
    pub fused: Option<PathBuf>,
    /// Chunk directory whose LR frames are used as probes; random frames otherwise.
    #[arg(long)]
    pub lr_dir: Option<PathBuf>,
    /// Edge of the random probe frames.
    #[arg(long, default_value_t = 32)]
    pub probe_size: usize,
    #[arg(long, default_value_t = 4)]
    pub probes: usize,
    #[arg(long, default_value_t = 1e-4, allow_negative_numbers = true)]
    pub tolerance: f64,
    #[arg(long, env = SEED_ENV, default_value_t = 0)]
    pub seed: u64,
}

#[derive(Debug, Clone, Args, Serialize, Deserialize)]
pub struct InferArgs {
    /// Model container, fused or multi-branch.
    #[arg(long)]
    pub model: PathBuf,
    /// Chunk directory written by `chunk`.
    #[arg(long)]
    pub lr_dir: PathBuf,
    /// Output SR frame directory.
    #[arg(long)]
    pub out: PathBuf,
    /// Ignore the prompts stored in the model.
    #[arg(long)]
    pub no_tvp: bool,
    #[arg(long)]
    pub parallel_frames: bool,
}

#[derive(Debug, Clone, Args, Serialize, Deserialize)]
pub struct EvalArgs {
    /// SR frame directory.
    #[arg(long)]
    pub sr: PathBuf,
    /// HR reference frame directory.
    #[arg(long)]
    pub hr: PathBuf,
    /// Chunk directory with the LR inputs; enables the consistency score.
    #[arg(long)]
    pub lr_dir: Option<PathBuf>,
    /// Round both images to 8 bits before scoring.
    #[arg(long)]
    pub quantize_8bit: bool,
    #[arg(long)]
    pub parallel_frames: bool,
    /// Line-delimited JSON records, one per frame plus a summary.
    #[arg(long)]
    pub records: Option<PathBuf>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum SchemeArg {
    PerChunkModels,
    SharedModel,
    #[value(name = "shared-model+tvp")]
    #[serde(rename = "shared-model+tvp")]
    SharedModelTvp,
}

impl From<SchemeArg> for CostScheme {
    fn from(s: SchemeArg) -> Self {
        match s {
            SchemeArg::PerChunkModels => CostScheme::PerChunkModels,
            SchemeArg::SharedModel => CostScheme::SharedModel,
            SchemeArg::SharedModelTvp => CostScheme::SharedModelTvp,
        }
    }
}

#[derive(Debug, Clone, Args, Serialize, Deserialize)]
pub struct CostReportArgs {
    /// Chunk directory written by `chunk`.
    #[arg(long)]
    pub lr_dir: PathBuf,
    /// One shared container, or one per chunk in chunk order.
    #[arg(long = "model", required = true)]
    pub models: Vec<PathBuf>,
    /// Scheme to report; every applicable scheme when omitted.
    #[arg(long, value_enum)]
    pub scheme: Option<SchemeArg>,
    /// JSON `{"lr_bytes": [...]}` with encoded per-chunk LR sizes.
    #[arg(long)]
    pub size_file: Option<PathBuf>,
    #[arg(long)]
    pub records: Option<PathBuf>,
}
