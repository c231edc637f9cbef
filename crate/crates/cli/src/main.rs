//! `eegvis` command-line entry point.

mod commands;
mod run;

use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand, ValueEnum};
use eegvis::encoders::EncoderKind;
use eegvis::metric::Mining;
use eegvis::nn::OptimizerKind;
use eegvis::ErrorClass;
use serde::Serialize;

#[derive(Parser)]
#[command(name = "eegvis", version, about = "EEG visual representation toolkit")]
struct Cli {
    /// Use all cores and skip the single-worker determinism guarantees.
    #[arg(long, global = true)]
    fast: bool,

    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Write a synthetic EEGPACK container to `<out>/data`.
    MakeSynthetic(MakeSyntheticArgs),
    /// Train an EEG encoder from scratch.
    TrainEncoder(TrainEncoderArgs),
    /// Continue training an encoder checkpoint.
    Finetune(FinetuneArgs),
    /// Train the joint EEG-image embedding.
    TrainClip(TrainClipArgs),
    /// Train the conditional image generator.
    TrainGan(TrainGanArgs),
    /// Generate images from a generator checkpoint.
    Synthesize(SynthesizeArgs),
    /// Fit an image-to-EEG-feature translator and translate test images.
    TranslateImage(TranslateImageArgs),
    /// Compute metrics from exported embeddings, rankings or features.
    Evaluate(EvaluateArgs),
    /// Probe a frozen encoder on held-out classes.
    ZeroShot(ZeroShotArgs),
    /// Write per-record embeddings of a split to CSV.
    ExportEmbeddings(ExportArgs),
}

#[derive(Args, Serialize)]
pub struct OutArgs {
    /// Output directory.
    #[arg(long)]
    pub out: PathBuf,
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
}

#[derive(Args, Serialize)]
pub struct MakeSyntheticArgs {
    #[command(flatten)]
    pub common: OutArgs,
    #[arg(long, default_value_t = 3)]
    pub classes: usize,
    #[arg(long, default_value_t = 14)]
    pub channels: usize,
    #[arg(long, default_value_t = 32)]
    pub timesteps: usize,
    #[arg(long, default_value_t = 100)]
    pub per_class: usize,
    #[arg(long, default_value_t = 5.0)]
    pub separation: f32,
    #[arg(long, default_value_t = 0.1)]
    pub noise: f32,
    /// Also render one paired image per record at this size.
    #[arg(long)]
    pub image_size: Option<usize>,
    /// How strongly each image's latent is mixed into its EEG record.
    #[arg(long, default_value_t = 1.0)]
    pub coupling: f32,
    /// Write all labels as 0 and mark the manifest unlabeled.
    #[arg(long)]
    pub unlabeled: bool,
    #[arg(long, default_value = "synthetic")]
    pub name: String,
}

#[derive(Copy, Clone, PartialEq, Eq, ValueEnum, Serialize)]
#[serde(rename_all = "snake_case")]
pub enum Regime {
    Triplet,
    Supervised,
}

#[derive(Args, Serialize)]
pub struct TrainingArgs {
    #[arg(long, value_enum, default_value = "triplet")]
    pub regime: Regime,
    #[arg(long, default_value_t = 30)]
    pub epochs: usize,
    #[arg(long, default_value_t = 64)]
    pub batch_size: usize,
    #[arg(long, default_value_t = 1e-3)]
    pub lr: f64,
    /// sgd_momentum or adaptive_moments.
    #[arg(long, default_value = "adaptive_moments")]
    pub optimizer: OptimizerKind,
    /// Triplet margin on squared distances.
    #[arg(long, default_value_t = 0.2)]
    pub margin: f64,
    /// semi_hard or all_valid.
    #[arg(long, default_value = "semi_hard")]
    pub mining: Mining,
    /// Save a checkpoint every this many epochs (0 disables).
    #[arg(long, default_value_t = 0)]
    pub checkpoint_every: usize,
    /// Comma-separated classes removed from every split before training.
    #[arg(long, value_delimiter = ',')]
    pub exclude_classes: Vec<usize>,
}

#[derive(Args, Serialize)]
pub struct TrainEncoderArgs {
    #[command(flatten)]
    pub common: OutArgs,
    /// EEGPACK container directory.
    #[arg(long)]
    pub data: PathBuf,
    /// lstm or cnn.
    #[arg(long, default_value = "lstm")]
    pub kind: EncoderKind,
    #[arg(long, default_value_t = 128)]
    pub embed_dim: usize,
    #[command(flatten)]
    pub train: TrainingArgs,
}

#[derive(Args, Serialize)]
pub struct FinetuneArgs {
    #[command(flatten)]
    pub common: OutArgs,
    #[arg(long)]
    pub data: PathBuf,
    /// Encoder checkpoint to start from.
    #[arg(long)]
    pub encoder: PathBuf,
    #[command(flatten)]
    pub train: TrainingArgs,
}

#[derive(Args, Serialize)]
pub struct ExtractorArgs {
    /// Image feature extractor checkpoint; a seeded tiny backbone otherwise.
    #[arg(long)]
    pub extractor: Option<PathBuf>,
    #[arg(long, default_value_t = 0)]
    pub extractor_seed: u64,
}

#[derive(Args, Serialize)]
pub struct TrainClipArgs {
    #[command(flatten)]
    pub common: OutArgs,
    #[arg(long)]
    pub data: PathBuf,
    /// Start from this encoder checkpoint instead of a fresh one.
    #[arg(long)]
    pub encoder: Option<PathBuf>,
    #[arg(long, default_value = "lstm")]
    pub kind: EncoderKind,
    #[command(flatten)]
    pub extractor: ExtractorArgs,
    #[arg(long, default_value_t = 100)]
    pub epochs: usize,
    #[arg(long, default_value_t = 32)]
    pub batch_size: usize,
    #[arg(long, default_value_t = 1e-3)]
    pub lr: f64,
    #[arg(long, default_value = "adaptive_moments")]
    pub optimizer: OptimizerKind,
    #[arg(long, default_value_t = 0.07)]
    pub temperature: f64,
    /// Keep the temperature fixed.
    #[arg(long)]
    pub fixed_temperature: bool,
    #[arg(long, default_value_t = 128)]
    pub projection_dim: usize,
}

#[derive(Copy, Clone, PartialEq, Eq, ValueEnum, Serialize)]
#[serde(rename_all = "snake_case")]
pub enum Condition {
    Eeg,
    OneHot,
}

#[derive(Args, Serialize)]
pub struct TrainGanArgs {
    #[command(flatten)]
    pub common: OutArgs,
    #[arg(long)]
    pub data: PathBuf,
    #[arg(long, value_enum, default_value = "eeg")]
    pub condition: Condition,
    /// Frozen encoder supplying EEG conditions.
    #[arg(long)]
    pub encoder: Option<PathBuf>,
    #[arg(long, default_value_t = 32)]
    pub image_size: usize,
    #[arg(long, default_value_t = 64)]
    pub noise_dim: usize,
    #[arg(long, default_value_t = 2000)]
    pub steps: usize,
    #[arg(long, default_value_t = 16)]
    pub batch_size: usize,
    #[arg(long, default_value_t = 2e-3)]
    pub lr_g: f64,
    #[arg(long, default_value_t = 2e-3)]
    pub lr_d: f64,
    #[arg(long)]
    pub no_ada: bool,
    #[arg(long, default_value_t = 0.6)]
    pub ada_target: f64,
    #[arg(long, default_value_t = 1e-4)]
    pub ada_step: f64,
    #[arg(long, default_value_t = 1.0)]
    pub r1_gamma: f64,
    #[arg(long, default_value_t = 250)]
    pub eval_every: usize,
    #[arg(long, default_value_t = 256)]
    pub eval_samples: usize,
}

#[derive(Args, Serialize)]
pub struct SynthesizeArgs {
    #[command(flatten)]
    pub common: OutArgs,
    #[arg(long)]
    pub generator: PathBuf,
    #[arg(long)]
    pub data: PathBuf,
    /// Needed when the generator is EEG-conditioned.
    #[arg(long)]
    pub encoder: Option<PathBuf>,
    #[arg(long, default_value = "test")]
    pub split: String,
    /// Number of records to condition on.
    #[arg(long, default_value_t = 8)]
    pub count: usize,
    /// Noise draws per record.
    #[arg(long, default_value_t = 4)]
    pub samples: usize,
}

#[derive(Args, Serialize)]
pub struct TranslateImageArgs {
    #[command(flatten)]
    pub common: OutArgs,
    #[arg(long)]
    pub data: PathBuf,
    #[arg(long)]
    pub encoder: PathBuf,
    #[command(flatten)]
    pub extractor: ExtractorArgs,
    /// EEG-conditioned generator used to render translated test images.
    #[arg(long)]
    pub generator: Option<PathBuf>,
    #[arg(long, default_value_t = 0.2)]
    pub holdout: f64,
}

#[derive(Args, Serialize)]
pub struct EvaluateArgs {
    #[command(flatten)]
    pub common: OutArgs,
    /// Comma-separated: kmeans,svm,knn,topk,mrr,map,is,fid,kid.
    #[arg(long, value_delimiter = ',', required = true)]
    pub metrics: Vec<Metric>,
    /// Embedding CSV (k-means input, probe training set).
    #[arg(long)]
    pub embeddings: Option<PathBuf>,
    /// Embedding CSV scored by the svm and knn probes.
    #[arg(long)]
    pub test_embeddings: Option<PathBuf>,
    /// Cluster count for k-means; the number of distinct labels otherwise.
    #[arg(long)]
    pub k: Option<usize>,
    #[arg(long, default_value_t = 5)]
    pub knn_k: usize,
    /// Ranking CSV with `query_id,rank,image_id,...` rows.
    #[arg(long)]
    pub ranked: Option<PathBuf>,
    /// Relevance CSV with `query_id,image_id` rows.
    #[arg(long)]
    pub relevance: Option<PathBuf>,
    #[arg(long, value_delimiter = ',', default_value = "1,5,10")]
    pub ks: Vec<usize>,
    /// Headerless CSV of class-probability rows.
    #[arg(long)]
    pub probs: Option<PathBuf>,
    #[arg(long, default_value_t = 10)]
    pub is_splits: usize,
    /// Real samples: headerless feature CSV or a directory of PNGs.
    #[arg(long)]
    pub real: Option<PathBuf>,
    /// Generated samples, same formats as `--real`.
    #[arg(long)]
    pub fake: Option<PathBuf>,
    #[command(flatten)]
    pub extractor: ExtractorArgs,
    #[arg(long, default_value_t = 100)]
    pub kid_subset_size: usize,
    #[arg(long, default_value_t = 10)]
    pub kid_subsets: usize,
}

#[derive(Copy, Clone, PartialEq, Eq, PartialOrd, Ord, ValueEnum, Serialize)]
#[serde(rename_all = "snake_case")]
pub enum Metric {
    Kmeans,
    Svm,
    Knn,
    Topk,
    Mrr,
    Map,
    Is,
    Fid,
    Kid,
}

#[derive(Args, Serialize)]
pub struct ZeroShotArgs {
    #[command(flatten)]
    pub common: OutArgs,
    #[arg(long)]
    pub data: PathBuf,
    #[arg(long)]
    pub encoder: PathBuf,
    /// Comma-separated held-out classes (at least two).
    #[arg(long, value_delimiter = ',', required = true)]
    pub holdout: Vec<usize>,
    #[arg(long, default_value_t = 5)]
    pub knn_k: usize,
}

#[derive(Args, Serialize)]
pub struct ExportArgs {
    #[command(flatten)]
    pub common: OutArgs,
    #[arg(long)]
    pub data: PathBuf,
    #[arg(long)]
    pub encoder: PathBuf,
    /// Split name, or `all`.
    #[arg(long, default_value = "test")]
    pub split: String,
}

const EXIT_CONFIG: u8 = 2;
const EXIT_DATA: u8 = 3;
const EXIT_RUNTIME: u8 = 4;

fn exit_code(err: &anyhow::Error) -> u8 {
    match err.downcast_ref::<eegvis::Error>().map(|e| e.class()) {
        Some(ErrorClass::Config) => EXIT_CONFIG,
        Some(ErrorClass::Data) => EXIT_DATA,
        Some(ErrorClass::Runtime) | None => EXIT_RUNTIME,
    }
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    if !cli.fast {
        // one worker thread keeps floating-point reductions in a fixed order
        std::env::set_var("RAYON_NUM_THREADS", "1");
    }
    let fast = cli.fast;
    let result = match cli.command {
        Command::MakeSynthetic(a) => commands::make_synthetic(&a, fast),
        Command::TrainEncoder(a) => commands::train_encoder(&a, fast),
        Command::Finetune(a) => commands::finetune(&a, fast),
        Command::TrainClip(a) => commands::train_clip(&a, fast),
        Command::TrainGan(a) => commands::train_gan(&a, fast),
        Command::Synthesize(a) => commands::synthesize(&a, fast),
        Command::TranslateImage(a) => commands::translate_image(&a, fast),
        Command::Evaluate(a) => commands::evaluate(&a, fast),
        Command::ZeroShot(a) => commands::zero_shot(&a, fast),
        Command::ExportEmbeddings(a) => commands::export_embeddings(&a, fast),
    };
    match result {
        Ok(()) => ExitCode::SUCCESS,
        Err(err) => {
            log::error!("{err:#}");
            eprintln!("error: {err:#}");
            ExitCode::from(exit_code(&err))
        }
    }
}
