use std::ffi::OsString;
use std::path::PathBuf;
use std::process::ExitCode;

use clap::{ArgAction, Args, CommandFactory, FromArgMatches, Parser, Subcommand, ValueEnum};

mod commands;
mod config;

/// Multi-object tracking with a mixture of dynamical VAEs.
#[derive(Debug, Parser)]
#[command(name = "mixdvae", version)]
pub struct Cli {
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Generate synthetic trajectories or multi-source scenes.
    GenData(GenDataArgs),
    /// Pre-train the SRNN or the Deep AR baseline on a trajectory file.
    Pretrain(PretrainArgs),
    /// Track every sequence of a scene file.
    Track(TrackArgs),
    /// Score a results file against the ground truth of a scene file.
    Evaluate(EvaluateArgs),
    /// Build 3-track test sequences from MOT17-style annotations.
    MakeMot3t(MakeMot3tArgs),
    /// Render tracks of one sequence to SVG.
    Plot(PlotArgs),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum DataKind {
    Trajectories,
    Scenes,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum PretrainModel {
    Srnn,
    Deepar,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum TrackModel {
    Mixdvae,
    Vkf,
    Deepar,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum EncoderInputArg {
    Samples,
    Means,
}

#[derive(Debug, Args)]
pub struct GenDataArgs {
    /// JSON file with option values; flags given here take precedence.
    #[arg(long)]
    pub config: Option<PathBuf>,
    #[arg(long, value_enum, default_value_t = DataKind::Trajectories)]
    pub kind: DataKind,
    /// Number of trajectories or scenes.
    #[arg(long, default_value_t = 1)]
    pub count: usize,
    #[arg(long)]
    pub out: PathBuf,
    /// Number of validation trajectories written to --val-out.
    #[arg(long, default_value_t = 0)]
    pub val_count: usize,
    #[arg(long)]
    pub val_out: Option<PathBuf>,
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
    #[arg(long, default_value_t = 60)]
    pub seq_len: usize,
    /// Maximum number of motion segments per coordinate.
    #[arg(long, default_value_t = 3)]
    pub s_max: usize,
    /// Probabilities of static, constant velocity, constant acceleration and
    /// sinusoidal segments.
    #[arg(long, value_delimiter = ',', num_args = 4, default_values_t = [0.25, 0.25, 0.25, 0.25])]
    pub kind_probabilities: Vec<f64>,
    #[arg(long, default_value_t = 0.0, allow_negative_numbers = true)]
    pub a1_mean: f64,
    #[arg(long, default_value_t = 0.005)]
    pub a1_std: f64,
    #[arg(long, default_value_t = 0.0, allow_negative_numbers = true)]
    pub a2_mean: f64,
    #[arg(long, default_value_t = 0.0002)]
    pub a2_std: f64,
    #[arg(long, default_value_t = 0.05, allow_negative_numbers = true)]
    pub omega_mean: f64,
    #[arg(long, default_value_t = 0.02)]
    pub omega_std: f64,
    #[arg(long, default_value_t = 0.0, allow_negative_numbers = true)]
    pub phase_mean: f64,
    #[arg(long, default_value_t = std::f64::consts::PI)]
    pub phase_std: f64,
    /// Mean of the log initial box width.
    #[arg(long, default_value_t = 0.1f64.ln(), allow_negative_numbers = true)]
    pub width_log_mean: f64,
    #[arg(long, default_value_t = 0.5)]
    pub width_log_std: f64,
    /// Mean of the log height/width ratio.
    #[arg(long, default_value_t = 2.5f64.ln(), allow_negative_numbers = true)]
    pub ratio_log_mean: f64,
    #[arg(long, default_value_t = 0.3)]
    pub ratio_log_std: f64,
    /// Sources per scene.
    #[arg(long, default_value_t = 3)]
    pub n_sources: usize,
    #[arg(long, default_value_t = 0.15)]
    pub occlusion_rate: f64,
    #[arg(long, default_value_t = 0.04)]
    pub noise_scale: f64,
    /// Remove the detections of one source on this many consecutive frames.
    #[arg(long, default_value_t = 0)]
    pub gap_length: usize,
    /// First frame of the removal gap (1-based).
    #[arg(long, default_value_t = 25)]
    pub gap_start: usize,
    /// Source whose detections are removed (1-based).
    #[arg(long, default_value_t = 1)]
    pub gap_source: usize,
}

#[derive(Debug, Args)]
pub struct PretrainArgs {
    #[arg(long)]
    pub config: Option<PathBuf>,
    #[arg(long, value_enum, default_value_t = PretrainModel::Srnn)]
    pub model: PretrainModel,
    /// Training trajectory file.
    #[arg(long)]
    pub train: PathBuf,
    /// Validation trajectory file.
    #[arg(long)]
    pub val: PathBuf,
    /// Checkpoint written with the best validation parameters.
    #[arg(long)]
    pub out: PathBuf,
    /// Per-epoch history CSV; defaults to the checkpoint path with a
    /// `.history.csv` suffix.
    #[arg(long)]
    pub history: Option<PathBuf>,
    #[arg(long, default_value_t = 0.001)]
    pub learning_rate: f64,
    #[arg(long, default_value_t = 256)]
    pub batch_size: usize,
    #[arg(long, default_value_t = 50)]
    pub patience: usize,
    #[arg(long, default_value_t = 500)]
    pub max_epochs: usize,
    /// Per-epoch teacher-forcing probabilities (comma separated). When unset
    /// the probability falls linearly from 1 to 0 over the first half of
    /// training.
    #[arg(long, value_delimiter = ',')]
    pub schedule: Vec<f64>,
    #[arg(long, default_value_t = 0.5)]
    pub validation_teacher_forcing: f64,
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
}

#[derive(Debug, Args)]
pub struct TrackArgs {
    #[arg(long)]
    pub config: Option<PathBuf>,
    #[arg(long, value_enum, default_value_t = TrackModel::Mixdvae)]
    pub model: TrackModel,
    /// Scene file; only the observations are used.
    #[arg(long)]
    pub scenes: PathBuf,
    /// Model checkpoint (required for mixdvae and deepar).
    #[arg(long)]
    pub checkpoint: Option<PathBuf>,
    #[arg(long)]
    pub out: PathBuf,
    /// Per-iteration diagnostics CSV.
    #[arg(long)]
    pub diagnostics: Option<PathBuf>,
    /// Sequences processed concurrently. Results do not depend on it.
    #[arg(long, default_value_t = 1)]
    pub jobs: usize,
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
    /// Number of sources; defaults to the detection count of the first frame.
    #[arg(long)]
    pub n_sources: Option<usize>,
    /// Observation noise ratio.
    #[arg(long, default_value_t = 0.04)]
    pub r_phi: f64,
    #[arg(long, default_value_t = 70)]
    pub iterations: usize,
    /// Subsequence length of the cascade initialization.
    #[arg(long, default_value_t = 30)]
    pub init_subseq_len: usize,
    /// VEM iterations per cascade subsequence.
    #[arg(long, default_value_t = 20)]
    pub init_iterations: usize,
    /// Fine-tune the encoder during tracking.
    #[arg(long, default_value_t = false, action = ArgAction::Set, num_args = 0..=1, default_missing_value = "true")]
    pub fine_tune: bool,
    #[arg(long, default_value_t = 0.0001)]
    pub fine_tune_lr: f64,
    /// Re-estimate the observation covariances.
    #[arg(long, default_value_t = false, action = ArgAction::Set, num_args = 0..=1, default_missing_value = "true")]
    pub m_step_phi: bool,
    /// Sequence fed to the encoder between iterations.
    #[arg(long, value_enum, default_value_t = EncoderInputArg::Samples)]
    pub encoder_input: EncoderInputArg,
}

#[derive(Debug, Args)]
pub struct EvaluateArgs {
    #[arg(long)]
    pub config: Option<PathBuf>,
    #[arg(long)]
    pub results: PathBuf,
    /// Scene file holding the ground truth.
    #[arg(long)]
    pub scenes: PathBuf,
    #[arg(long, default_value_t = 0.5)]
    pub iou_threshold: f64,
    /// Also write the key=value report to this file.
    #[arg(long)]
    pub out: Option<PathBuf>,
    /// Print one report per sequence before the aggregate.
    #[arg(long, default_value_t = false, action = ArgAction::Set, num_args = 0..=1, default_missing_value = "true")]
    pub per_sequence: bool,
}

#[derive(Debug, Args)]
pub struct MakeMot3tArgs {
    #[arg(long)]
    pub config: Option<PathBuf>,
    /// Video directory containing gt/gt.txt, det/det.txt and optionally
    /// seqinfo.ini. Repeat for several videos.
    #[arg(long, required = true)]
    pub sequence_dir: Vec<PathBuf>,
    #[arg(long)]
    pub out: PathBuf,
    #[arg(long, default_value_t = 60)]
    pub seq_len: usize,
    #[arg(long, default_value_t = 3)]
    pub n_tracks: usize,
    /// IoU threshold for labelling detections with ground-truth identities.
    #[arg(long, default_value_t = 0.5)]
    pub iou_threshold: f64,
    /// Image width used when seqinfo.ini is absent.
    #[arg(long)]
    pub image_width: Option<f64>,
    #[arg(long)]
    pub image_height: Option<f64>,
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
}

#[derive(Debug, Args)]
pub struct PlotArgs {
    #[arg(long)]
    pub config: Option<PathBuf>,
    #[arg(long)]
    pub results: PathBuf,
    /// Scene file providing ground truth and observations.
    #[arg(long)]
    pub scenes: Option<PathBuf>,
    /// Sequence to draw (1-based).
    #[arg(long, default_value_t = 1)]
    pub sequence: usize,
    /// Frames to draw (1-based, comma separated); every frame when unset.
    #[arg(long, value_delimiter = ',')]
    pub frames: Vec<usize>,
    #[arg(long)]
    pub out: PathBuf,
}

fn parse_args(args: Vec<OsString>) -> anyhow::Result<Cli> {
    let root = Cli::command();
    let matches = root.clone().try_get_matches_from(&args).unwrap_or_else(|e| e.exit());
    let extra = config::config_args(&root, &matches)?;
    if extra.is_empty() {
        return Ok(Cli::from_arg_matches(&matches).unwrap_or_else(|e| e.exit()));
    }
    let merged = root
        .try_get_matches_from(args.into_iter().chain(extra))
        .unwrap_or_else(|e| e.exit());
    Ok(Cli::from_arg_matches(&merged).unwrap_or_else(|e| e.exit()))
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("info")).init();
    let result = parse_args(std::env::args_os().collect()).and_then(|cli| commands::run(cli.command));
    match result {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e:#}");
            ExitCode::FAILURE
        }
    }
}
