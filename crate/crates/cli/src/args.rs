//! Command-line argument definitions and the small string-typed enums they
//! parse into.

use std::path::PathBuf;
use std::str::FromStr;

use clap::{Args, Parser, Subcommand};

#[derive(Parser, Debug)]
#[command(
    name = "gamepl",
    about = "Two-player pseudo-label training for multi-label classification from partial labels",
    version
)]
pub struct Cli {
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Subcommand, Debug)]
pub enum Command {
    /// Generate a synthetic multi-label dataset (train + test files).
    Gen(GenArgs),
    /// Mask a dataset and train one loss, writing checkpoints and traces.
    Train(TrainArgs),
    /// Evaluate a model checkpoint (and optionally a pseudo-label store).
    Eval(EvalArgs),
    /// Cross-product of settings, losses, and seeds into one results table.
    Sweep(SweepArgs),
}

#[derive(Args, Debug)]
pub struct GenArgs {
    /// Number of classes L.
    #[arg(long, default_value_t = 8)]
    pub classes: usize,
    /// Feature dimensionality.
    #[arg(long, default_value_t = 16)]
    pub dim: usize,
    /// Training samples.
    #[arg(long, default_value_t = 2000)]
    pub train: usize,
    /// Test samples.
    #[arg(long, default_value_t = 1000)]
    pub test: usize,
    /// Mean number of positive classes per image.
    #[arg(long, default_value_t = 2.0)]
    pub mean_positives: f64,
    /// Norm of each class prototype.
    #[arg(long, default_value_t = 1.0)]
    pub separation: f64,
    /// Additive feature noise standard deviation, in [0, 0.5).
    #[arg(long, default_value_t = 0.25)]
    pub noise: f64,
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
    /// Output stem; writes <out>.train.csv, <out>.test.csv, <out>.manifest.json.
    #[arg(long)]
    pub out: PathBuf,
}

#[derive(Args, Debug, Clone)]
pub struct TrainArgs {
    /// Dataset stem as written by `gen`.
    #[arg(long)]
    pub data: PathBuf,
    /// Label setting: `fspl`, `sspl:<fraction>`, or `full`.
    #[arg(long)]
    pub setting: Option<String>,
    /// Loss: `g2netpl`, `an`, `an-ls`, `wan`, `epr`, or `bce`.
    #[arg(long)]
    pub loss: Option<String>,
    /// Flat `key = value` config file; flags override file keys.
    #[arg(long)]
    pub config: Option<PathBuf>,
    #[arg(long)]
    pub seed: Option<u64>,
    /// Directory for checkpoints, traces, metrics, and the manifest.
    #[arg(long)]
    pub out_dir: PathBuf,

    #[command(flatten)]
    pub hyper: HyperArgs,
}

/// Tunables shared by `train` and `sweep`. Every flag is optional; absent
/// flags fall back to config-file keys and then to the documented defaults.
#[derive(Args, Debug, Clone, Default)]
pub struct HyperArgs {
    /// `linear` or `mlp:<hidden_dim>`.
    #[arg(long)]
    pub arch: Option<String>,
    /// Latent mapping: `gauss` or `sigmoid`.
    #[arg(long)]
    pub mapping: Option<String>,
    /// Spread of the Gaussian-CDF mapping.
    #[arg(long)]
    pub sigma: Option<f64>,
    #[arg(long)]
    pub lambda_max: Option<f64>,
    #[arg(long)]
    pub lambda_width: Option<f64>,
    /// Scheduler confidence/progress mix.
    #[arg(long)]
    pub beta: Option<f64>,
    /// Scheduler confidence shaping.
    #[arg(long)]
    pub gamma: Option<f64>,
    /// Pseudo-player loss: `additive` or `exponential`.
    #[arg(long)]
    pub ace: Option<String>,
    #[arg(long)]
    pub lr: Option<f64>,
    #[arg(long)]
    pub lr_decay: Option<f64>,
    #[arg(long)]
    pub momentum: Option<f64>,
    #[arg(long)]
    pub eta_u: Option<f64>,
    #[arg(long)]
    pub pseudo_steps: Option<usize>,
    /// Extra full-split pseudo pass at the end of each epoch.
    #[arg(long)]
    pub full_pseudo_pass: Option<bool>,
    #[arg(long)]
    pub epochs: Option<usize>,
    #[arg(long)]
    pub batch_size: Option<usize>,
    /// Expected positives per image for the regularizer.
    #[arg(long)]
    pub reg_k: Option<f64>,
    #[arg(long)]
    pub reg_weight: Option<f64>,
    /// Label smoothing for the `an-ls` baseline.
    #[arg(long)]
    pub smoothing: Option<f64>,
    /// `end-to-end` or `linear-init:<phase1_epochs>`.
    #[arg(long)]
    pub training_mode: Option<String>,
    #[arg(long)]
    pub convergence_tol: Option<f64>,
    #[arg(long)]
    pub patience: Option<usize>,
    #[arg(long)]
    pub divergence_factor: Option<f64>,
    /// Worker threads for gradient passes; 0 is the single-threaded
    /// reference and every value produces identical results.
    #[arg(long)]
    pub threads: Option<usize>,
}

#[derive(Args, Debug)]
pub struct EvalArgs {
    /// Model checkpoint JSON.
    #[arg(long)]
    pub model: PathBuf,
    /// Optional pseudo-label store checkpoint CSV.
    #[arg(long)]
    pub pseudo: Option<PathBuf>,
    /// Dataset stem.
    #[arg(long)]
    pub data: PathBuf,
    /// Also write the metrics JSON here (always printed to stdout).
    #[arg(long)]
    pub out: Option<PathBuf>,
}

#[derive(Args, Debug)]
pub struct SweepArgs {
    #[arg(long)]
    pub data: PathBuf,
    /// Comma-separated settings, e.g. `fspl,sspl:0.2,sspl:0.4`.
    #[arg(long)]
    pub settings: String,
    /// Comma-separated losses, e.g. `g2netpl,an`.
    #[arg(long)]
    pub losses: String,
    /// Comma-separated seeds, e.g. `1,2,3`.
    #[arg(long, default_value = "0")]
    pub seeds: String,
    /// Bounded worker pool for child runs; per-run results do not depend on
    /// the pool size.
    #[arg(long, default_value_t = 1)]
    pub jobs: usize,
    #[arg(long)]
    pub config: Option<PathBuf>,
    /// Results table CSV; child artifacts land in `<out>.runs/`.
    #[arg(long)]
    pub out: PathBuf,

    #[command(flatten)]
    pub hyper: HyperArgs,
}

/// Masking setting applied before training.
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum Setting {
    Fspl,
    Sspl(f64),
    Full,
}

impl FromStr for Setting {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s {
            "fspl" => Ok(Setting::Fspl),
            "full" => Ok(Setting::Full),
            other => {
                if let Some(frac) = other.strip_prefix("sspl:") {
                    let p: f64 = frac
                        .parse()
                        .map_err(|_| format!("bad sspl fraction '{frac}'"))?;
                    Ok(Setting::Sspl(p))
                } else {
                    Err(format!(
                        "unknown setting '{other}' (expected fspl, sspl:<p>, or full)"
                    ))
                }
            }
        }
    }
}

impl std::fmt::Display for Setting {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        match self {
            Setting::Fspl => write!(f, "fspl"),
            Setting::Sspl(p) => write!(f, "sspl:{p}"),
            Setting::Full => write!(f, "full"),
        }
    }
}

/// Which objective a run trains.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum LossKind {
    G2NetPl,
    Baseline(gamepl::losses::BaselineKind),
}

impl FromStr for LossKind {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        use gamepl::losses::BaselineKind::*;
        match s {
            "g2netpl" => Ok(LossKind::G2NetPl),
            "an" => Ok(LossKind::Baseline(An)),
            "an-ls" => Ok(LossKind::Baseline(AnLs)),
            "wan" => Ok(LossKind::Baseline(Wan)),
            "epr" => Ok(LossKind::Baseline(Epr)),
            "bce" => Ok(LossKind::Baseline(BceFull)),
            other => Err(format!(
                "unknown loss '{other}' (expected g2netpl, an, an-ls, wan, epr, or bce)"
            )),
        }
    }
}

impl std::fmt::Display for LossKind {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        match self {
            LossKind::G2NetPl => write!(f, "g2netpl"),
            LossKind::Baseline(kind) => write!(f, "{}", kind.name()),
        }
    }
}
