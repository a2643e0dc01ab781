//! Command-line definitions and the `--config` file expansion.

use anyhow::{bail, Context};
use clap::{Args, Parser, Subcommand, ValueEnum};
use serde::Serialize;
use std::ffi::OsString;
use std::fs;
use std::path::PathBuf;

#[derive(Debug, Parser)]
#[command(name = "topood", version, about = "Predictive topological uncertainty and covariate-shift tests for Bayesian MLPs")]
pub struct Cli {
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Train a Bayesian MLP with Bayes-by-Backprop.
    #[command(args_override_self = true)]
    Train(TrainArgs),
    /// Convert 32×32 RGB images into 28×28 grayscale IDX files.
    #[command(args_override_self = true)]
    Convert(ConvertArgs),
    /// Compute pTU for every input of an IDX image file.
    #[command(args_override_self = true)]
    Ptu(PtuArgs),
    /// Two-sample permutation test on pTU values.
    #[command(args_override_self = true)]
    OodTest(OodTestArgs),
    /// Rejection rate of the test along the Gaussian shift family.
    #[command(args_override_self = true)]
    PowerCurve(PowerCurveArgs),
    /// Train every architecture of a grid and record per-layer variances.
    #[command(args_override_self = true)]
    ArchSweep(ArchSweepArgs),
    /// Layer constants and an empirical check of the Lipschitz bound of pTU.
    #[command(args_override_self = true)]
    Stability(StabilityArgs),
}

/// Options shared by every command.
#[derive(Debug, Clone, Args, Serialize)]
pub struct RunArgs {
    /// key=value file whose entries act as flags; explicit flags win.
    #[arg(long, value_name = "FILE")]
    #[serde(skip)]
    pub config: Option<PathBuf>,
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
    /// Worker threads; outputs do not depend on this.
    #[arg(long, default_value_t = 1)]
    pub workers: usize,
}

/// An IDX image file and the slice of it to use.
#[derive(Debug, Clone, Args, Serialize)]
pub struct ImageSource {
    #[arg(long)]
    pub images: PathBuf,
    #[arg(long, default_value_t = 0)]
    pub offset: usize,
    /// Use at most this many images.
    #[arg(long)]
    pub limit: Option<usize>,
}

#[derive(Debug, Clone, Args, Serialize)]
pub struct TrainingArgs {
    #[arg(long)]
    pub labels: PathBuf,
    #[arg(long, default_value_t = 100)]
    pub batch_size: usize,
    #[arg(long, default_value_t = 1e-3)]
    pub lr: f64,
    #[arg(long, default_value_t = 100)]
    pub max_epochs: usize,
    #[arg(long, default_value_t = 25)]
    pub patience: usize,
    #[arg(long, default_value_t = 1)]
    pub mc_samples: usize,
    #[arg(long, default_value_t = 0.1)]
    pub val_fraction: f64,
    #[arg(long, default_value_t = 1.0)]
    pub prior_sigma1: f64,
    #[arg(long, default_value_t = 0.007)]
    pub prior_sigma2: f64,
    #[arg(long, default_value_t = 0.5)]
    pub prior_pi: f64,
    /// Append a noisy copy of every sample with noise N(mu, 1/9).
    #[arg(long, allow_hyphen_values = true)]
    pub augment_mu: Option<f64>,
}

#[derive(Debug, Clone, Args, Serialize)]
pub struct TrainArgs {
    #[command(flatten)]
    pub data: ImageSource,
    #[command(flatten)]
    pub training: TrainingArgs,
    /// Architecture name (M3..M9) or layer sizes such as 784-64-16-10.
    #[arg(long, default_value = "784-64-16-10")]
    pub arch: String,
    /// Model snapshot (JSON).
    #[arg(long)]
    pub out: PathBuf,
    /// Per-epoch metrics CSV; defaults to `<out>.metrics.csv`.
    #[arg(long)]
    pub metrics: Option<PathBuf>,
    #[command(flatten)]
    pub run: RunArgs,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum, Serialize)]
#[serde(rename_all = "lowercase")]
pub enum RgbLayout {
    /// CIFAR-10 binary records: one label byte, then red, green and blue
    /// 32×32 planes.
    Cifar,
    /// Unlabelled 32×32×3 records in height-width-channel order.
    Hwc,
}

#[derive(Debug, Clone, Args, Serialize)]
pub struct ConvertArgs {
    #[arg(long, value_enum)]
    pub layout: RgbLayout,
    #[arg(long)]
    pub input: PathBuf,
    /// One label byte per image, for the `hwc` layout; zeros when omitted.
    #[arg(long)]
    pub labels: Option<PathBuf>,
    #[arg(long)]
    pub out_images: PathBuf,
    #[arg(long)]
    pub out_labels: PathBuf,
    #[command(flatten)]
    pub run: RunArgs,
}

#[derive(Debug, Clone, Args, Serialize)]
pub struct PtuArgs {
    #[arg(long)]
    pub model: PathBuf,
    #[command(flatten)]
    pub data: ImageSource,
    /// Posterior draws per input.
    #[arg(long, default_value_t = 30)]
    pub m: usize,
    /// Apply the shift s_mu to every input first.
    #[arg(long, allow_hyphen_values = true)]
    pub shift_mu: Option<f64>,
    /// pTU table (CSV: input_index, ptu).
    #[arg(long)]
    pub out: PathBuf,
    /// Per-layer variances (CSV: input_index, layer, variance).
    #[arg(long)]
    pub breakdown: Option<PathBuf>,
    /// Diagrams of the first input under its first draw (CSV: layer_index,
    /// rank, death_value).
    #[arg(long)]
    pub diagrams: Option<PathBuf>,
    #[command(flatten)]
    pub run: RunArgs,
}

#[derive(Debug, Clone, Args, Serialize)]
pub struct TestArgs {
    /// Order of the Wasserstein statistic.
    #[arg(long, default_value_t = 2.0)]
    pub order: f64,
    #[arg(long, default_value_t = 1000)]
    pub permutations: usize,
    #[arg(long, default_value_t = 0.05)]
    pub alpha: f64,
}

#[derive(Debug, Clone, Args, Serialize)]
pub struct OodTestArgs {
    /// pTU table of the first sample; use with --y-ptu.
    #[arg(long, requires = "y_ptu", conflicts_with_all = ["model", "x_images", "y_images"])]
    pub x_ptu: Option<PathBuf>,
    #[arg(long, requires = "x_ptu")]
    pub y_ptu: Option<PathBuf>,
    /// Model used to compute pTU from images; use with --x-images and --y-images.
    #[arg(long, requires_all = ["x_images", "y_images"])]
    pub model: Option<PathBuf>,
    #[arg(long)]
    pub x_images: Option<PathBuf>,
    #[arg(long, default_value_t = 0)]
    pub x_offset: usize,
    #[arg(long)]
    pub y_images: Option<PathBuf>,
    #[arg(long, default_value_t = 0)]
    pub y_offset: usize,
    /// Images per side.
    #[arg(long, default_value_t = 100)]
    pub n: usize,
    #[arg(long, default_value_t = 30)]
    pub m: usize,
    /// Use the same pTU seed for both sides.
    #[arg(long)]
    pub shared_ptu_seed: bool,
    #[command(flatten)]
    pub test: TestArgs,
    /// Include every permuted statistic in the result.
    #[arg(long)]
    pub full: bool,
    /// Result (JSON).
    #[arg(long)]
    pub out: PathBuf,
    #[command(flatten)]
    pub run: RunArgs,
}

#[derive(Debug, Clone, Args, Serialize)]
pub struct PowerCurveArgs {
    /// Comma-separated snapshots, each `path` or `id=path`.
    #[arg(long)]
    pub models: String,
    #[command(flatten)]
    pub data: ImageSource,
    /// Comma-separated shift means.
    #[arg(long, default_value = "0,0.1,0.2,0.3,0.4", allow_hyphen_values = true)]
    pub mu_grid: String,
    #[arg(long, default_value_t = 50)]
    pub reps: usize,
    #[arg(long, default_value_t = 100)]
    pub n_per_side: usize,
    #[arg(long, default_value_t = 30)]
    pub m: usize,
    #[command(flatten)]
    pub test: TestArgs,
    /// Curves (CSV: model_id, mu, power, se, reps).
    #[arg(long)]
    pub out: PathBuf,
    #[command(flatten)]
    pub run: RunArgs,
}

#[derive(Debug, Clone, Args, Serialize)]
pub struct ArchSweepArgs {
    #[command(flatten)]
    pub data: ImageSource,
    #[command(flatten)]
    pub training: TrainingArgs,
    /// Comma-separated architecture names or layer sizes.
    #[arg(long, default_value = "M3,M4,M5,M6,M7,M8,M9")]
    pub archs: String,
    /// Images whose pTU breakdown is recorded.
    #[arg(long)]
    pub eval_images: PathBuf,
    #[arg(long, default_value_t = 0)]
    pub eval_offset: usize,
    #[arg(long, default_value_t = 100)]
    pub n_eval: usize,
    #[arg(long, default_value_t = 30)]
    pub m: usize,
    #[arg(long)]
    pub out_dir: PathBuf,
    #[command(flatten)]
    pub run: RunArgs,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum, Serialize)]
#[serde(rename_all = "kebab-case")]
pub enum BoundForm {
    Declared,
    WithPrefix,
}

#[derive(Debug, Clone, Args, Serialize)]
pub struct StabilityArgs {
    #[arg(long)]
    pub model: PathBuf,
    /// Inputs from which random pairs are drawn.
    #[command(flatten)]
    pub data: ImageSource,
    #[arg(long, default_value_t = 500)]
    pub pairs: usize,
    #[arg(long, default_value_t = 10)]
    pub m: usize,
    /// Bound on ‖x‖∞ over the input domain.
    #[arg(long, default_value_t = 1.0)]
    pub b0: f64,
    #[arg(long, value_enum, default_value_t = BoundForm::Declared)]
    pub form: BoundForm,
    /// Check report (JSON).
    #[arg(long)]
    pub out: PathBuf,
    /// Per-draw layer constants (CSV).
    #[arg(long)]
    pub constants: Option<PathBuf>,
    #[command(flatten)]
    pub run: RunArgs,
}

/// Splices the entries of a `--config` file into `argv` right after the
/// subcommand, so that flags given on the command line override them.
///
/// Lines are `key = value` with the long flag name as key; `#` starts a
/// comment. `true` and `false` switch boolean flags on and off.
pub fn expand_config(argv: Vec<OsString>) -> anyhow::Result<Vec<OsString>> {
    let mut rest = Vec::with_capacity(argv.len());
    let mut config = None;
    let mut it = argv.into_iter();
    while let Some(arg) = it.next() {
        let text = arg.to_string_lossy().into_owned();
        if text == "--config" {
            config = Some(it.next().context("--config needs a file")?);
        } else if let Some(path) = text.strip_prefix("--config=") {
            config = Some(OsString::from(path));
        } else {
            rest.push(arg);
        }
    }
    let Some(path) = config else {
        return Ok(rest);
    };
    let path = PathBuf::from(path);
    let body = fs::read_to_string(&path).with_context(|| format!("reading {}", path.display()))?;
    let mut spliced = Vec::new();
    for (n, line) in body.lines().enumerate() {
        let line = line.split('#').next().unwrap_or("").trim();
        if line.is_empty() {
            continue;
        }
        let Some((key, value)) = line.split_once('=') else {
            bail!("{}:{}: expected key = value", path.display(), n + 1);
        };
        let key = key.trim().trim_start_matches("--").replace('_', "-");
        let value = value.trim();
        if key.is_empty() || key == "config" {
            bail!("{}:{}: invalid key", path.display(), n + 1);
        }
        match value {
            "true" => spliced.push(OsString::from(format!("--{key}"))),
            "false" => {}
            _ => spliced.push(OsString::from(format!("--{key}={value}"))),
        }
    }
    if rest.len() < 2 {
        bail!("--config must follow a subcommand");
    }
    rest.splice(2..2, spliced);
    Ok(rest)
}
