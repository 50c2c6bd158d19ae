//! Implementations of the `gen`, `train`, and `eval` commands.

use std::collections::BTreeMap;
use std::path::{Path, PathBuf};
use std::time::Instant;

use serde::{Deserialize, Serialize};

use gamepl::classifier::{load_model, save_model};
use gamepl::data::{
    dataset_paths, gen_synthetic, load_dataset, mask_fspl, mask_sspl, save_dataset, Observation,
    ObservationMask, PartialDataset, SyntheticSpec,
};
use gamepl::evaluation::{export_traces, map_score, restricted_map_score};
use gamepl::matrix::Matrix;
use gamepl::pseudo::PseudoLabelStore;
use gamepl::trainer::{train, train_baseline};

use crate::args::{EvalArgs, GenArgs, LossKind, Setting, TrainArgs};
use crate::config::{read_config_file, resolve_run, ResolvedRun};
use crate::manifest::{fingerprint, RunManifest, MANIFEST_FORMAT};
use crate::CliError;

/// Metrics JSON written by `train`.
#[derive(Debug, Clone, Serialize, Deserialize, PartialEq)]
pub struct TrainMetrics {
    pub map_test_final: f64,
    pub map_test_best: f64,
    pub best_epoch: usize,
    pub pseudo_map: Option<f64>,
    pub converged_epoch: Option<usize>,
    pub wall_seconds: f64,
}

/// Metrics JSON written by `eval`.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct EvalMetrics {
    pub map_test: f64,
    pub pseudo_map: Option<f64>,
    pub wall_seconds: f64,
}

pub fn cmd_gen(args: &GenArgs) -> Result<(), CliError> {
    let started = Instant::now();
    let spec = SyntheticSpec {
        num_classes: args.classes,
        input_dim: args.dim,
        train_samples: args.train,
        test_samples: args.test,
        separation: args.separation,
        noise: args.noise,
        mean_positives: args.mean_positives,
    };
    let dataset = gen_synthetic::<f64>(&spec, args.seed)?;
    if let Some(parent) = args.out.parent() {
        if !parent.as_os_str().is_empty() {
            std::fs::create_dir_all(parent)
                .map_err(|e| CliError::Io(format!("{}: {e}", parent.display())))?;
        }
    }
    save_dataset(&dataset, &args.out)?;
    let (train_path, test_path) = dataset_paths(&args.out);

    let mut resolved = BTreeMap::new();
    for (k, v) in [
        ("classes", args.classes.to_string()),
        ("dim", args.dim.to_string()),
        ("train", args.train.to_string()),
        ("test", args.test.to_string()),
        ("mean_positives", args.mean_positives.to_string()),
        ("separation", args.separation.to_string()),
        ("noise", args.noise.to_string()),
    ] {
        resolved.insert(k.to_string(), v);
    }
    let mut artifacts = BTreeMap::new();
    artifacts.insert("train_csv".to_string(), train_path.display().to_string());
    artifacts.insert("test_csv".to_string(), test_path.display().to_string());

    let manifest = RunManifest {
        format: MANIFEST_FORMAT.to_string(),
        command: "gen".to_string(),
        resolved_config: resolved,
        dataset_fingerprint: fingerprint(&[&train_path, &test_path])?,
        seed: args.seed,
        artifacts,
        wall_seconds: started.elapsed().as_secs_f64(),
    };
    manifest.write(&PathBuf::from(format!("{}.manifest.json", args.out.display())))?;
    println!(
        "wrote {} train and {} test samples to {}.{{train,test}}.csv",
        args.train,
        args.test,
        args.out.display()
    );
    Ok(())
}

/// Applies the masking setting to a freshly loaded dataset.
pub fn apply_setting(
    dataset: &PartialDataset<f64>,
    setting: Setting,
    seed: u64,
) -> Result<PartialDataset<f64>, CliError> {
    let masked = match setting {
        Setting::Fspl => mask_fspl(dataset, seed)?,
        Setting::Sspl(p) => mask_sspl(dataset, p, seed)?,
        Setting::Full => PartialDataset {
            features: dataset.features.clone(),
            ground_truth: dataset.ground_truth.clone(),
            mask: ObservationMask::fully_observed(&dataset.ground_truth),
            split: dataset.split.clone(),
        },
    };
    Ok(masked)
}

pub fn cmd_train(args: &TrainArgs) -> Result<TrainMetrics, CliError> {
    let file_config = match &args.config {
        Some(path) => read_config_file(path)?,
        None => BTreeMap::new(),
    };
    let resolved = resolve_run(
        &args.setting,
        &args.loss,
        args.seed,
        &args.hyper,
        &file_config,
    )?;
    run_train(&args.data, &args.out_dir, &resolved)
}

pub fn run_train(
    data: &Path,
    out_dir: &Path,
    resolved: &ResolvedRun,
) -> Result<TrainMetrics, CliError> {
    let started = Instant::now();
    let dataset = load_dataset::<f64>(data)?;
    let masked = apply_setting(&dataset, resolved.setting, resolved.seed)?;
    std::fs::create_dir_all(out_dir)
        .map_err(|e| CliError::Io(format!("{}: {e}", out_dir.display())))?;

    let model_path = out_dir.join("model.json");
    let pseudo_path = out_dir.join("pseudo.csv");
    let trace_path = out_dir.join("trace.csv");
    let metrics_path = out_dir.join("metrics.json");
    let manifest_path = out_dir.join("manifest.json");

    let (traces, converged_epoch, pseudo_map) = match resolved.loss {
        LossKind::G2NetPl => {
            let outcome = train(&masked, &resolved.train)?;
            save_model(&outcome.model, &model_path)?;
            outcome.store.save(&pseudo_path)?;
            let pseudo_map = outcome.traces.last().and_then(|t| t.pseudo_map);
            (outcome.traces, outcome.converged_epoch, pseudo_map)
        }
        LossKind::Baseline(kind) => {
            let outcome = train_baseline(&masked, kind, &resolved.baseline, &resolved.train)?;
            save_model(&outcome.model, &model_path)?;
            (outcome.traces, outcome.converged_epoch, None)
        }
    };
    export_traces(&traces, &trace_path)?;

    let last = traces.last().expect("training emits at least one record");
    let (best_epoch, best) = traces
        .iter()
        .map(|t| (t.epoch, t.map_test))
        .fold((0, f64::NEG_INFINITY), |acc, (e, m)| {
            if m > acc.1 {
                (e, m)
            } else {
                acc
            }
        });

    let metrics = TrainMetrics {
        map_test_final: last.map_test,
        map_test_best: best,
        best_epoch,
        pseudo_map,
        converged_epoch,
        wall_seconds: started.elapsed().as_secs_f64(),
    };
    std::fs::write(
        &metrics_path,
        serde_json::to_string_pretty(&metrics)
            .map_err(|e| CliError::Io(format!("metrics serialization: {e}")))?,
    )
    .map_err(|e| CliError::Io(format!("{}: {e}", metrics_path.display())))?;

    let (train_path, test_path) = dataset_paths(data);
    let mut artifacts = BTreeMap::new();
    artifacts.insert("model".to_string(), model_path.display().to_string());
    if resolved.loss == LossKind::G2NetPl {
        artifacts.insert("pseudo".to_string(), pseudo_path.display().to_string());
    }
    artifacts.insert("trace".to_string(), trace_path.display().to_string());
    artifacts.insert("metrics".to_string(), metrics_path.display().to_string());
    let manifest = RunManifest {
        format: MANIFEST_FORMAT.to_string(),
        command: "train".to_string(),
        resolved_config: resolved.flat.clone(),
        dataset_fingerprint: fingerprint(&[&train_path, &test_path])?,
        seed: resolved.seed,
        artifacts,
        wall_seconds: started.elapsed().as_secs_f64(),
    };
    manifest.write(&manifest_path)?;

    println!(
        "{} on {}: final mAP {:.4}, best mAP {:.4} (epoch {}){}",
        resolved.loss,
        resolved.setting,
        metrics.map_test_final,
        metrics.map_test_best,
        metrics.best_epoch,
        match metrics.converged_epoch {
            Some(e) => format!(", converged at epoch {e}"),
            None => String::new(),
        }
    );
    Ok(metrics)
}

pub fn cmd_eval(args: &EvalArgs) -> Result<EvalMetrics, CliError> {
    let started = Instant::now();
    let model = load_model::<f64>(&args.model)?;
    let dataset = load_dataset::<f64>(&args.data)?;
    if model.input_dim() != dataset.input_dim() {
        return Err(CliError::Usage(format!(
            "model expects input_dim {}, dataset provides {}",
            model.input_dim(),
            dataset.input_dim()
        )));
    }
    if model.num_classes() != dataset.num_classes() {
        return Err(CliError::Usage(format!(
            "model predicts {} classes, dataset has {}",
            model.num_classes(),
            dataset.num_classes()
        )));
    }
    let test_rows = dataset.test_rows();
    if test_rows.is_empty() {
        return Err(CliError::Usage("dataset has no test rows".into()));
    }
    let preds = model.forward(&dataset.features.gather_rows(&test_rows))?;
    let mut gt = gamepl::matrix::LabelMatrix::new(test_rows.len(), dataset.num_classes());
    for (b, &r) in test_rows.iter().enumerate() {
        for c in 0..dataset.num_classes() {
            gt.set(b, c, dataset.ground_truth.get(r, c));
        }
    }
    let map_test = map_score(&preds, &gt)?.map;

    let pseudo_map = match &args.pseudo {
        Some(path) => Some(eval_pseudo_store(path, &dataset)?),
        None => None,
    };

    let metrics = EvalMetrics {
        map_test,
        pseudo_map,
        wall_seconds: started.elapsed().as_secs_f64(),
    };
    let body = serde_json::to_string_pretty(&metrics)
        .map_err(|e| CliError::Io(format!("metrics serialization: {e}")))?;
    println!("{body}");
    if let Some(out) = &args.out {
        std::fs::write(out, body).map_err(|e| CliError::Io(format!("{}: {e}", out.display())))?;
    }
    Ok(metrics)
}

// Pseudo-label quality from a checkpoint: the store's frozen flags say which
// entries were observed, so the mask is reconstructed from them.
fn eval_pseudo_store(
    path: &Path,
    dataset: &PartialDataset<f64>,
) -> Result<f64, CliError> {
    let store = PseudoLabelStore::<f64>::load(path)?;
    if store.num_classes() != dataset.num_classes() {
        return Err(CliError::Usage(format!(
            "pseudo store has {} classes, dataset has {}",
            store.num_classes(),
            dataset.num_classes()
        )));
    }
    let n = dataset.num_samples();
    let mut mask = ObservationMask::all_unobserved(n, dataset.num_classes());
    let mut scores = Matrix::zeros(store.len(), store.num_classes());
    for (i, &id) in store.ids().iter().enumerate() {
        if id >= n {
            return Err(CliError::Usage(format!(
                "pseudo store references image {id}, dataset has {n} samples"
            )));
        }
        for c in 0..store.num_classes() {
            if store.frozen_row(i)[c] {
                let o = if store.mapped_row(i)[c] >= 0.5 {
                    Observation::Positive
                } else {
                    Observation::Negative
                };
                mask.set(id, c, o);
            }
            scores.set(i, c, store.mapped_row(i)[c]);
        }
    }
    let ids = store.ids().to_vec();
    let quality = restricted_map_score(&scores, &ids, &mask, &dataset.ground_truth)?;
    Ok(quality.map)
}
