use std::path::PathBuf;

use clap::{Args, Parser, Subcommand, ValueEnum};

#[derive(Parser)]
#[command(
    name = "ankle-reduce",
    version,
    about = "Synthetic ankle data, shape models, image segmentation, and fibular reduction plans",
    propagate_version = true
)]
pub struct Cli {
    /// Suppress progress and summary output (errors still go to stderr).
    #[arg(long, global = true)]
    pub quiet: bool,

    #[command(subcommand)]
    pub command: Command,
}

#[derive(Subcommand)]
pub enum Command {
    /// Generate a deformed phantom population with recorded ground truth.
    Phantom(PhantomArgs),
    /// Build a statistical shape model from corresponded meshes.
    BuildModel(BuildModelArgs),
    /// Fit a coupled model set to an image volume.
    Segment(SegmentArgs),
    /// Plan a fibular reduction from injured and healthy surfaces.
    Plan(PlanArgs),
    /// Compare fitted meshes against corresponded ground-truth meshes.
    Evaluate(EvaluateArgs),
    /// Run phantom, model building, segmentation, and planning end to end.
    RunAll(RunAllArgs),
}

#[derive(Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum QualityArg {
    High,
    Low,
}

#[derive(Args)]
pub struct PhantomArgs {
    /// Population spec (JSON).
    #[arg(long)]
    pub spec: PathBuf,
    /// Number of members to generate.
    #[arg(long)]
    pub count: usize,
    /// Output directory (created if missing).
    #[arg(long)]
    pub out: PathBuf,
    /// Image quality tier for the synthesized volumes.
    #[arg(long, value_enum, default_value = "high")]
    pub quality: QualityArg,
    /// Voxel spacing in mm.
    #[arg(long, default_value_t = 1.0)]
    pub spacing: f64,
    /// Overrides the seed in the spec file.
    #[arg(long)]
    pub seed: Option<u64>,
}

#[derive(Args)]
pub struct BuildModelArgs {
    /// Glob matching the training meshes, e.g. 'pop/meshes/*.obj'.
    #[arg(long)]
    pub meshes: String,
    /// Model output path (JSON); a .report.json sidecar is written next to it.
    #[arg(long)]
    pub out: PathBuf,
    /// Keep exactly this many modes.
    #[arg(long, conflicts_with = "variance_fraction")]
    pub modes: Option<usize>,
    /// Keep the smallest mode count reaching this cumulative variance
    /// fraction (default 0.95).
    #[arg(long)]
    pub variance_fraction: Option<f64>,
    /// Align with similarity transforms instead of rigid ones (eigenvalues
    /// then live in normalized shape space rather than mm²).
    #[arg(long)]
    pub with_scale: bool,
}

#[derive(Args)]
pub struct SegmentArgs {
    /// Input volume (NIfTI).
    #[arg(long)]
    pub volume: PathBuf,
    /// Model-set manifest (JSON) referencing per-bone model files.
    #[arg(long)]
    pub model_set: PathBuf,
    /// Output directory (created if missing).
    #[arg(long)]
    pub out: PathBuf,
    /// Fit configuration (JSON); defaults apply to missing fields.
    #[arg(long)]
    pub config: Option<PathBuf>,
    /// Directory of ground-truth meshes named <bone>.obj; adds surface
    /// metrics to the report.
    #[arg(long)]
    pub truth: Option<PathBuf>,
}

#[derive(Args)]
pub struct PlanArgs {
    /// Injured-side surface (OBJ), typically the displaced fragment.
    #[arg(long)]
    pub injured: PathBuf,
    /// Healthy contralateral surface (OBJ).
    #[arg(long)]
    pub healthy: PathBuf,
    /// Plan output path (JSON).
    #[arg(long)]
    pub out: PathBuf,
    /// Reduction configuration (JSON); defaults apply to missing fields.
    #[arg(long)]
    pub config: Option<PathBuf>,
    /// x-position of the sagittal mirror plane in mm.
    #[arg(long, default_value_t = 0.0)]
    pub mirror_x: f64,
}

#[derive(Args)]
pub struct EvaluateArgs {
    /// Directory of fitted meshes (*.obj).
    #[arg(long)]
    pub fitted: PathBuf,
    /// Directory of ground-truth meshes with matching file names.
    #[arg(long)]
    pub truth: PathBuf,
    /// Report output path (JSON); an aligned-column .txt sidecar is written
    /// next to it.
    #[arg(long)]
    pub out: PathBuf,
}

#[derive(Args)]
pub struct RunAllArgs {
    /// Output directory (created if missing).
    #[arg(long)]
    pub out: PathBuf,
    /// Pipeline configuration (JSON); defaults apply to missing fields.
    #[arg(long)]
    pub config: Option<PathBuf>,
    /// Overrides the seed in the configuration.
    #[arg(long)]
    pub seed: Option<u64>,
}
