//! Resolution of run configuration: command-line flags override config-file
//! keys, which override the built-in defaults. The fully resolved
//! configuration is what lands in the run manifest.

use std::collections::BTreeMap;
use std::path::Path;
use std::str::FromStr;

use gamepl::classifier::Arch;
use gamepl::losses::{BaselineParams, RegParams};
use gamepl::numerics::{MappingKind, MappingSpec};
use gamepl::pseudo::{AceVariant, LambdaSchedule};
use gamepl::trainer::{TrainConfig, TrainingMode};

use crate::args::{HyperArgs, LossKind, Setting};
use crate::CliError;

/// Flat `key = value` file; `#` starts a comment.
pub fn read_config_file(path: &Path) -> Result<BTreeMap<String, String>, CliError> {
    let text = std::fs::read_to_string(path)
        .map_err(|e| CliError::Io(format!("config file {}: {e}", path.display())))?;
    let mut map = BTreeMap::new();
    for (idx, line) in text.lines().enumerate() {
        let line = line.split('#').next().unwrap_or("").trim();
        if line.is_empty() {
            continue;
        }
        let Some((key, value)) = line.split_once('=') else {
            return Err(CliError::Usage(format!(
                "{}:{}: expected 'key = value'",
                path.display(),
                idx + 1
            )));
        };
        map.insert(key.trim().to_string(), value.trim().to_string());
    }
    Ok(map)
}

/// A run configuration with every default materialized.
#[derive(Debug, Clone)]
pub struct ResolvedRun {
    pub setting: Setting,
    pub loss: LossKind,
    pub seed: u64,
    pub train: TrainConfig<f64>,
    pub baseline: BaselineParams<f64>,
    /// Every resolved key, for the manifest.
    pub flat: BTreeMap<String, String>,
}

macro_rules! resolve {
    ($flags:expr, $file:expr, $key:literal, $default:expr) => {{
        match &$flags {
            Some(v) => v.clone(),
            None => match $file.get($key) {
                Some(raw) => raw.parse().map_err(|_| {
                    CliError::Usage(format!("config key '{}': bad value '{raw}'", $key))
                })?,
                None => $default,
            },
        }
    }};
}

pub fn resolve_run(
    setting_flag: &Option<String>,
    loss_flag: &Option<String>,
    seed_flag: Option<u64>,
    hyper: &HyperArgs,
    file: &BTreeMap<String, String>,
) -> Result<ResolvedRun, CliError> {
    let known_keys = [
        "setting", "loss", "seed", "arch", "mapping", "sigma", "lambda_max", "lambda_width",
        "beta", "gamma", "ace", "lr", "lr_decay", "momentum", "eta_u", "pseudo_steps",
        "full_pseudo_pass", "epochs", "batch_size", "reg_k", "reg_weight", "smoothing",
        "training_mode", "convergence_tol", "patience", "divergence_factor", "threads",
    ];
    for key in file.keys() {
        if !known_keys.contains(&key.as_str()) {
            return Err(CliError::Usage(format!("unknown config key '{key}'")));
        }
    }

    let defaults = TrainConfig::<f64>::default();
    let default_reg = RegParams::<f64>::default();
    let default_baseline = BaselineParams::<f64>::default();

    let setting_str: String = resolve!(setting_flag, file, "setting", "fspl".to_string());
    let setting = Setting::from_str(&setting_str).map_err(CliError::Usage)?;
    let loss_str: String = resolve!(loss_flag, file, "loss", "g2netpl".to_string());
    let loss = LossKind::from_str(&loss_str).map_err(CliError::Usage)?;
    let seed: u64 = resolve!(seed_flag, file, "seed", 0);

    let arch_str: String = resolve!(hyper.arch, file, "arch", "linear".to_string());
    let arch = parse_arch(&arch_str)?;
    let mapping_str: String = resolve!(hyper.mapping, file, "mapping", "gauss".to_string());
    let sigma: f64 = resolve!(hyper.sigma, file, "sigma", 0.3);
    let mapping = match mapping_str.as_str() {
        "gauss" => MappingSpec::gaussian_cdf(sigma).map_err(|e| CliError::Usage(e.to_string()))?,
        "sigmoid" => MappingSpec::sigmoid(),
        other => {
            return Err(CliError::Usage(format!(
                "unknown mapping '{other}' (expected gauss or sigmoid)"
            )))
        }
    };

    let lambda_max: f64 = resolve!(hyper.lambda_max, file, "lambda_max", 1.0);
    let lambda_width: f64 = resolve!(hyper.lambda_width, file, "lambda_width", 0.2);
    let lambda = LambdaSchedule::new(lambda_max, lambda_width)
        .map_err(|e| CliError::Usage(e.to_string()))?;

    let ace_str: String = resolve!(hyper.ace, file, "ace", "additive".to_string());
    let ace_variant = match ace_str.as_str() {
        "additive" => AceVariant::Additive,
        "exponential" => AceVariant::Exponential,
        other => {
            return Err(CliError::Usage(format!(
                "unknown ace variant '{other}' (expected additive or exponential)"
            )))
        }
    };

    let mode_str: String = resolve!(hyper.training_mode, file, "training_mode", "end-to-end".to_string());
    let training_mode = parse_training_mode(&mode_str)?;

    let train = TrainConfig {
        arch,
        mapping,
        lambda,
        beta: resolve!(hyper.beta, file, "beta", defaults.beta),
        gamma: resolve!(hyper.gamma, file, "gamma", defaults.gamma),
        ace_variant,
        lr: resolve!(hyper.lr, file, "lr", defaults.lr),
        lr_decay: resolve!(hyper.lr_decay, file, "lr_decay", defaults.lr_decay),
        momentum: resolve!(hyper.momentum, file, "momentum", defaults.momentum),
        eta_u: resolve!(hyper.eta_u, file, "eta_u", defaults.eta_u),
        pseudo_steps: resolve!(hyper.pseudo_steps, file, "pseudo_steps", defaults.pseudo_steps),
        full_pseudo_pass: resolve!(
            hyper.full_pseudo_pass,
            file,
            "full_pseudo_pass",
            defaults.full_pseudo_pass
        ),
        epochs: resolve!(hyper.epochs, file, "epochs", defaults.epochs),
        batch_size: resolve!(hyper.batch_size, file, "batch_size", defaults.batch_size),
        reg: RegParams {
            expected_positives: resolve!(hyper.reg_k, file, "reg_k", default_reg.expected_positives),
            weight: resolve!(hyper.reg_weight, file, "reg_weight", default_reg.weight),
        },
        seed,
        training_mode,
        convergence_tol: resolve!(
            hyper.convergence_tol,
            file,
            "convergence_tol",
            defaults.convergence_tol
        ),
        convergence_patience: resolve!(hyper.patience, file, "patience", defaults.convergence_patience),
        divergence_factor: resolve!(
            hyper.divergence_factor,
            file,
            "divergence_factor",
            defaults.divergence_factor
        ),
        threads: resolve!(hyper.threads, file, "threads", defaults.threads),
    };

    let baseline = BaselineParams {
        smoothing: resolve!(hyper.smoothing, file, "smoothing", default_baseline.smoothing),
        reg: train.reg,
    };

    if loss == LossKind::Baseline(gamepl::losses::BaselineKind::BceFull) && setting != Setting::Full
    {
        return Err(CliError::Usage(
            "the bce loss needs the full setting (it trains on complete ground truth)".into(),
        ));
    }
    if let Setting::Sspl(p) = setting {
        if !(p > 0.0 && p <= 1.0) {
            return Err(CliError::Usage(format!(
                "sspl fraction must be in (0, 1], got {p}"
            )));
        }
    }
    train
        .validate()
        .map_err(|e| CliError::Usage(e.to_string()))?;

    let mut flat = BTreeMap::new();
    let mode_repr = match training_mode {
        TrainingMode::EndToEnd => "end-to-end".to_string(),
        TrainingMode::LinearInit { phase1_epochs } => format!("linear-init:{phase1_epochs}"),
    };
    let pairs: Vec<(&str, String)> = vec![
        ("setting", setting.to_string()),
        ("loss", loss.to_string()),
        ("seed", seed.to_string()),
        ("arch", arch_repr(arch)),
        (
            "mapping",
            match mapping.kind() {
                MappingKind::Sigmoid => "sigmoid".to_string(),
                MappingKind::GaussianCdf => "gauss".to_string(),
            },
        ),
        ("sigma", sigma.to_string()),
        ("lambda_max", lambda_max.to_string()),
        ("lambda_width", lambda_width.to_string()),
        ("beta", train.beta.to_string()),
        ("gamma", train.gamma.to_string()),
        ("ace", ace_str.clone()),
        ("lr", train.lr.to_string()),
        ("lr_decay", train.lr_decay.to_string()),
        ("momentum", train.momentum.to_string()),
        ("eta_u", train.eta_u.to_string()),
        ("pseudo_steps", train.pseudo_steps.to_string()),
        ("full_pseudo_pass", train.full_pseudo_pass.to_string()),
        ("epochs", train.epochs.to_string()),
        ("batch_size", train.batch_size.to_string()),
        ("reg_k", train.reg.expected_positives.to_string()),
        ("reg_weight", train.reg.weight.to_string()),
        ("smoothing", baseline.smoothing.to_string()),
        ("training_mode", mode_repr),
        ("convergence_tol", train.convergence_tol.to_string()),
        ("patience", train.convergence_patience.to_string()),
        ("divergence_factor", train.divergence_factor.to_string()),
        ("threads", train.threads.to_string()),
    ];
    for (k, v) in pairs {
        flat.insert(k.to_string(), v);
    }

    Ok(ResolvedRun {
        setting,
        loss,
        seed,
        train,
        baseline,
        flat,
    })
}

fn parse_arch(s: &str) -> Result<Arch, CliError> {
    if s == "linear" {
        return Ok(Arch::Linear);
    }
    if let Some(h) = s.strip_prefix("mlp:") {
        let hidden_dim: usize = h
            .parse()
            .map_err(|_| CliError::Usage(format!("bad hidden dim '{h}'")))?;
        return Ok(Arch::Mlp { hidden_dim });
    }
    Err(CliError::Usage(format!(
        "unknown arch '{s}' (expected linear or mlp:<hidden_dim>)"
    )))
}

fn arch_repr(arch: Arch) -> String {
    match arch {
        Arch::Linear => "linear".to_string(),
        Arch::Mlp { hidden_dim } => format!("mlp:{hidden_dim}"),
    }
}

fn parse_training_mode(s: &str) -> Result<TrainingMode, CliError> {
    if s == "end-to-end" {
        return Ok(TrainingMode::EndToEnd);
    }
    if let Some(n) = s.strip_prefix("linear-init:") {
        let phase1_epochs: usize = n
            .parse()
            .map_err(|_| CliError::Usage(format!("bad phase length '{n}'")))?;
        return Ok(TrainingMode::LinearInit { phase1_epochs });
    }
    Err(CliError::Usage(format!(
        "unknown training mode '{s}' (expected end-to-end or linear-init:<epochs>)"
    )))
}
