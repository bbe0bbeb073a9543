//! `voxvae`: the volumetric-VAE pipeline as subcommands.
//!
//! Each subcommand persists a `<command>.run.json` snapshot of its fully
//! resolved configuration (and a plain-text log) into its output directory
//! before doing any work, so every run can be repeated from its artifacts
//! alone. Exit codes: 0 success, 1 validation error (bad flags, bad config,
//! ineligible inputs), 2 runtime failure (I/O, training divergence).

mod commands;
mod tables;

use std::path::PathBuf;
use std::process::ExitCode;

use clap::{ArgGroup, Args, Parser, Subcommand, ValueEnum};
use voxvae::{Error, ModelConfig, Task};

#[derive(Parser)]
#[command(
    name = "voxvae",
    version,
    about = "Volumetric VAE pipeline: synthetic cohorts, preprocessing, latent training, and latent-space classification"
)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Generate a synthetic phantom cohort (raw volumes + manifest.csv)
    Synth(SynthArgs),
    /// Normalize intensities and crop/pad volumes to a target shape
    Preprocess(PreprocessArgs),
    /// Train the VAE; writes config.json, history.jsonl, checkpoints/
    TrainVae(TrainVaeArgs),
    /// Encode every manifest subject into a latent store
    Encode(EncodeArgs),
    /// Train one classifier fold on stored latents
    TrainClf(TrainClfArgs),
    /// Cross-validate latent classifiers with a stratified k-fold plan
    RunCv(RunCvArgs),
    /// Score reconstruction fidelity of a trained VAE
    EvalFidelity(EvalFidelityArgs),
    /// Fit a PCA on stored latent means and export a 2D scatter
    Pca(PcaArgs),
    /// Render CSV tables and plots from finished run directories
    Report(ReportArgs),
}

/// Classification task; DS-only tasks skip EU records.
#[derive(Debug, Clone, Copy, ValueEnum)]
pub enum TaskArg {
    #[value(name = "eu_vs_ds")]
    EuVsDs,
    #[value(name = "ad_binary")]
    AdBinary,
    #[value(name = "ad_3class")]
    Ad3Class,
    #[value(name = "id_binary")]
    IdBinary,
}

impl From<TaskArg> for Task {
    fn from(t: TaskArg) -> Task {
        match t {
            TaskArg::EuVsDs => Task::EuVsDs,
            TaskArg::AdBinary => Task::AdBinary,
            TaskArg::Ad3Class => Task::Ad3Class,
            TaskArg::IdBinary => Task::IdBinary,
        }
    }
}

/// Architecture presets; `latent_*` expect 192³ inputs, `desk_48` 48³.
#[derive(Debug, Clone, Copy, ValueEnum)]
pub enum Preset {
    #[value(name = "latent_24")]
    Latent24,
    #[value(name = "latent_12")]
    Latent12,
    #[value(name = "latent_3")]
    Latent3,
    #[value(name = "desk_48")]
    Desk48,
}

impl Preset {
    fn config(self) -> ModelConfig {
        match self {
            Preset::Latent24 => ModelConfig::latent_24(),
            Preset::Latent12 => ModelConfig::latent_12(),
            Preset::Latent3 => ModelConfig::latent_3(),
            Preset::Desk48 => ModelConfig::desk_48(),
        }
    }
}

#[derive(Debug, Clone, Copy, ValueEnum)]
pub enum CohortPreset {
    /// 80 subjects (40 EU / 40 DS) at 48³ with separable group morphology
    #[value(name = "separable_desk")]
    SeparableDesk,
}

/// Model configuration: preset, then config file, then flags; flags win.
#[derive(Args)]
pub struct ModelArgs {
    /// Base architecture preset
    #[arg(long, value_enum, default_value_t = Preset::Latent24)]
    pub preset: Preset,
    /// Config file layered over the preset: a TOML fragment of fields to
    /// override, or a complete config.json from a previous run
    #[arg(long)]
    pub config: Option<PathBuf>,
    #[arg(long)]
    pub epochs_vae: Option<usize>,
    #[arg(long)]
    pub epochs_clf: Option<usize>,
    #[arg(long)]
    pub batch_size: Option<usize>,
    #[arg(long)]
    pub lr_vae: Option<f64>,
    #[arg(long)]
    pub lr_clf: Option<f64>,
    /// Perceptual-loss weight
    #[arg(long)]
    pub lambda_perc: Option<f64>,
    /// Adversarial-loss weight
    #[arg(long)]
    pub lambda_adv: Option<f64>,
    /// KL-divergence weight
    #[arg(long)]
    pub lambda_kl: Option<f64>,
}

/// Fields a TOML config file may override; unknown keys are rejected.
#[derive(Debug, Default, serde::Deserialize)]
#[serde(deny_unknown_fields)]
struct ConfigPatch {
    input_edge: Option<usize>,
    latent_edge: Option<usize>,
    stage_channels: Option<Vec<usize>>,
    res_blocks_per_stage: Option<usize>,
    latent_channels: Option<usize>,
    lambda_perc: Option<f64>,
    lambda_adv: Option<f64>,
    lambda_kl: Option<f64>,
    lr_vae: Option<f64>,
    lr_clf: Option<f64>,
    epochs_vae: Option<usize>,
    epochs_clf: Option<usize>,
    batch_size: Option<usize>,
    seed: Option<u64>,
}

impl ModelArgs {
    pub fn resolve(&self) -> anyhow::Result<ModelConfig> {
        let mut cfg = self.preset.config();
        if let Some(path) = &self.config {
            let text = std::fs::read_to_string(path)
                .map_err(|e| Error::io(path.clone(), e))?;
            if path.extension().is_some_and(|e| e == "json") {
                cfg = serde_json::from_str(&text)
                    .map_err(|e| Error::Config(format!("{}: {e}", path.display())))?;
            } else {
                let patch: ConfigPatch = toml::from_str(&text)
                    .map_err(|e| Error::Config(format!("{}: {e}", path.display())))?;
                apply_patch(&mut cfg, patch);
            }
        }
        let flag_patch = ConfigPatch {
            lambda_perc: self.lambda_perc,
            lambda_adv: self.lambda_adv,
            lambda_kl: self.lambda_kl,
            lr_vae: self.lr_vae,
            lr_clf: self.lr_clf,
            epochs_vae: self.epochs_vae,
            epochs_clf: self.epochs_clf,
            batch_size: self.batch_size,
            ..ConfigPatch::default()
        };
        apply_patch(&mut cfg, flag_patch);
        cfg.validate()?;
        Ok(cfg)
    }
}

fn apply_patch(cfg: &mut ModelConfig, p: ConfigPatch) {
    macro_rules! set {
        ($($field:ident),*) => {
            $(if let Some(v) = p.$field { cfg.$field = v; })*
        };
    }
    set!(
        input_edge,
        latent_edge,
        stage_channels,
        res_blocks_per_stage,
        latent_channels,
        lambda_perc,
        lambda_adv,
        lambda_kl,
        lr_vae,
        lr_clf,
        epochs_vae,
        epochs_clf,
        batch_size,
        seed
    );
}

#[derive(Args)]
#[command(group(ArgGroup::new("recipe").required(true).args(["spec", "preset"])))]
pub struct SynthArgs {
    /// Cohort recipe TOML (all fields; `synth` writes a reusable one)
    #[arg(long)]
    pub spec: Option<PathBuf>,
    /// Built-in cohort recipe
    #[arg(long, value_enum)]
    pub preset: Option<CohortPreset>,
    /// Override the recipe's seed
    #[arg(long)]
    pub seed: Option<u64>,
    /// Cohort directory to create (volumes, manifest.csv, cohort.toml)
    #[arg(long)]
    pub out: PathBuf,
}

#[derive(Args)]
pub struct PreprocessArgs {
    /// Input manifest CSV; volume paths resolve against its directory
    #[arg(long)]
    pub manifest: PathBuf,
    /// Pipeline TOML: clip_percentile, target_shape, external_steps, scratch_dir
    #[arg(long)]
    pub config: Option<PathBuf>,
    /// Cubic target edge; shorthand for target_shape = [E, E, E]
    #[arg(long)]
    pub target: Option<usize>,
    /// Intensity-clip percentile in (50, 100]
    #[arg(long)]
    pub clip: Option<f64>,
    /// Scratch directory for external-step temp files
    /// (default: $VOXVAE_SCRATCH, then the system temp dir)
    #[arg(long)]
    pub scratch: Option<PathBuf>,
    /// Output directory (volumes, manifest.csv, provenance/)
    #[arg(long)]
    pub out: PathBuf,
}

#[derive(Args)]
pub struct TrainVaeArgs {
    /// Manifest of preprocessed volumes; all records are used for training
    #[arg(long)]
    pub manifest: PathBuf,
    #[command(flatten)]
    pub model: ModelArgs,
    /// Master seed for parameter init, shuffling, and sampling noise;
    /// becomes part of the config identity latents are checked against
    #[arg(long)]
    pub seed: Option<u64>,
    /// Cap the run at this many optimization steps
    #[arg(long)]
    pub max_steps: Option<usize>,
    /// Write checkpoints/vae_NNNNNN.ckpt every N steps
    #[arg(long)]
    pub checkpoint_every: Option<usize>,
    /// Stop once mean train reconstruction L1 drops below this
    #[arg(long)]
    pub early_stop_l1: Option<f64>,
    /// Progress line to stderr every N steps (0 = silent)
    #[arg(long, default_value_t = 50)]
    pub log_every: usize,
    /// Continue from an existing checkpoint's parameters
    #[arg(long)]
    pub resume: Option<PathBuf>,
    /// Compute device; this build supports "cpu" only
    #[arg(long, default_value = "cpu")]
    pub device: String,
    /// Run directory (config.json, history.jsonl, checkpoints/)
    #[arg(long)]
    pub out: PathBuf,
}

#[derive(Args)]
pub struct EncodeArgs {
    /// Trained VAE checkpoint
    #[arg(long)]
    pub checkpoint: PathBuf,
    /// Manifest of preprocessed volumes to encode
    #[arg(long)]
    pub manifest: PathBuf,
    /// Compute device; this build supports "cpu" only
    #[arg(long, default_value = "cpu")]
    pub device: String,
    /// Output store path; a directory (existing or with a trailing slash)
    /// receives latents.bin inside
    #[arg(long)]
    pub out: PathBuf,
}

#[derive(Args)]
pub struct TrainClfArgs {
    /// Latent store file, or a directory containing latents.bin
    #[arg(long)]
    pub latents: PathBuf,
    /// Manifest supplying diagnosis labels
    #[arg(long)]
    pub manifest: PathBuf,
    #[arg(long, value_enum)]
    pub task: TaskArg,
    /// Reuse an existing fold plan JSON instead of splitting
    #[arg(long, conflicts_with_all = ["k", "seed"])]
    pub folds: Option<PathBuf>,
    /// Folds in a freshly built stratified plan
    #[arg(long, default_value_t = 5)]
    pub k: usize,
    /// Seed for the fresh fold plan
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
    /// Plan fold to train on; its test split is held out
    #[arg(long, default_value_t = 0)]
    pub fold: usize,
    /// Project latents onto this many principal components (fit on the
    /// training split only)
    #[arg(long)]
    pub pca: Option<usize>,
    #[command(flatten)]
    pub model: ModelArgs,
    /// Compute device; this build supports "cpu" only
    #[arg(long, default_value = "cpu")]
    pub device: String,
    /// Output directory (classifier.ckpt, predictions.csv, folds.json)
    #[arg(long)]
    pub out: PathBuf,
}

#[derive(Args)]
pub struct RunCvArgs {
    /// Latent store file, or a directory containing latents.bin
    #[arg(long)]
    pub latents: PathBuf,
    /// Manifest supplying diagnosis labels
    #[arg(long)]
    pub manifest: PathBuf,
    #[arg(long, value_enum)]
    pub task: TaskArg,
    /// Number of folds
    #[arg(long, default_value_t = 5)]
    pub k: usize,
    /// Seed for the stratified fold plan
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
    /// Reuse an existing fold plan JSON instead of splitting
    #[arg(long, conflicts_with_all = ["k", "seed"])]
    pub folds: Option<PathBuf>,
    /// Project latents onto this many principal components (fit per fold,
    /// on the training split only)
    #[arg(long)]
    pub pca: Option<usize>,
    #[command(flatten)]
    pub model: ModelArgs,
    /// Compute device; this build supports "cpu" only
    #[arg(long, default_value = "cpu")]
    pub device: String,
    /// Run directory (folds.json, report.json)
    #[arg(long)]
    pub out: PathBuf,
}

#[derive(Args)]
pub struct EvalFidelityArgs {
    /// Trained VAE checkpoint
    #[arg(long)]
    pub checkpoint: PathBuf,
    /// Manifest of preprocessed volumes to reconstruct
    #[arg(long)]
    pub manifest: PathBuf,
    /// MS-SSIM scales (each halves the volume; edge/2^(scales-1) must
    /// still fit the 7³ window)
    #[arg(long, default_value_t = 3)]
    pub ms_scales: usize,
    /// Seed of the random feature extractor behind feat_dist/cos_sim
    #[arg(long, default_value_t = 0)]
    pub extractor_seed: u64,
    /// Decode a sampled z instead of the latent mean; per-subject noise
    /// seeds derive from this value in subject-id order
    #[arg(long)]
    pub sample_seed: Option<u64>,
    /// Compute device; this build supports "cpu" only
    #[arg(long, default_value = "cpu")]
    pub device: String,
    /// Output directory (fidelity.json, fidelity.csv)
    #[arg(long)]
    pub out: PathBuf,
}

#[derive(Args)]
pub struct PcaArgs {
    /// Latent store file, or a directory containing latents.bin
    #[arg(long)]
    pub latents: PathBuf,
    /// Manifest supplying group labels for the scatter
    #[arg(long)]
    pub manifest: PathBuf,
    /// Label and filter subjects by this task's classes instead of EU/DS
    #[arg(long, value_enum)]
    pub task: Option<TaskArg>,
    /// Principal components to fit (the scatter uses the first two)
    #[arg(long, default_value_t = 2)]
    pub components: usize,
    /// Output directory (pca.json, scatter.csv, scatter.svg)
    #[arg(long)]
    pub out: PathBuf,
}

#[derive(Args)]
pub struct ReportArgs {
    /// Run directory to summarize; repeat for several runs. Picks up
    /// report.json, fidelity.json, and scatter.csv where present
    #[arg(long = "run", required = true)]
    pub runs: Vec<PathBuf>,
    /// Output directory for tables and plots
    #[arg(long)]
    pub out: PathBuf,
}

fn dispatch(cli: Cli) -> anyhow::Result<()> {
    match cli.command {
        Command::Synth(args) => commands::synth(args),
        Command::Preprocess(args) => commands::preprocess(args),
        Command::TrainVae(args) => commands::train_vae(args),
        Command::Encode(args) => commands::encode(args),
        Command::TrainClf(args) => commands::train_clf(args),
        Command::RunCv(args) => commands::run_cv(args),
        Command::EvalFidelity(args) => commands::eval_fidelity(args),
        Command::Pca(args) => commands::pca(args),
        Command::Report(args) => tables::report(args),
    }
}

/// Validation failures are the caller's to fix; everything else is a
/// failure of the run itself.
fn exit_code_for(err: &anyhow::Error) -> u8 {
    match err.downcast_ref::<Error>() {
        Some(
            Error::Config(_)
            | Error::InvalidInput(_)
            | Error::Manifest(_)
            | Error::ShapeMismatch { .. },
        ) => 1,
        _ => 2,
    }
}

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(cli) => cli,
        Err(e) => {
            // --help/--version land on stdout and exit 0; anything else is
            // a usage error.
            let code = u8::from(e.use_stderr());
            let _ = e.print();
            return ExitCode::from(code);
        }
    };
    match dispatch(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e:#}");
            ExitCode::from(exit_code_for(&e))
        }
    }
}
