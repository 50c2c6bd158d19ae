//! The sweep command: a cross product of (setting, loss, seed) runs, a
//! bounded worker pool, and one aggregated CSV. Child failures are recorded
//! per row and the sweep keeps going.

use std::collections::BTreeMap;
use std::fmt::Write as _;
use std::path::PathBuf;
use std::str::FromStr;
use std::sync::Mutex;
use std::time::Instant;

use crate::args::{LossKind, Setting, SweepArgs};
use crate::config::{read_config_file, resolve_run};
use crate::manifest::{fingerprint, RunManifest, MANIFEST_FORMAT};
use crate::runner::run_train;
use crate::CliError;

struct SweepCell {
    setting: String,
    loss: String,
    seed: u64,
    result: Result<crate::runner::TrainMetrics, String>,
}

pub fn cmd_sweep(args: &SweepArgs) -> Result<(), CliError> {
    let started = Instant::now();
    let settings: Vec<Setting> = parse_list(&args.settings, "settings")?;
    let losses: Vec<LossKind> = parse_list(&args.losses, "losses")?;
    let seeds: Vec<u64> = args
        .seeds
        .split(',')
        .filter(|s| !s.trim().is_empty())
        .map(|s| {
            s.trim()
                .parse::<u64>()
                .map_err(|_| CliError::Usage(format!("bad seed '{s}'")))
        })
        .collect::<Result<_, _>>()?;
    if settings.is_empty() {
        return Err(CliError::Usage("settings list is empty".into()));
    }
    if losses.is_empty() {
        return Err(CliError::Usage("losses list is empty".into()));
    }
    if seeds.is_empty() {
        return Err(CliError::Usage("seeds list is empty".into()));
    }
    if args.jobs == 0 {
        return Err(CliError::Usage("jobs must be >= 1".into()));
    }
    let file_config = match &args.config {
        Some(path) => read_config_file(path)?,
        None => BTreeMap::new(),
    };

    // resolve every run up front so usage errors surface before any work
    let mut runs = Vec::new();
    for setting in &settings {
        for loss in &losses {
            for &seed in &seeds {
                let resolved = resolve_run(
                    &Some(setting.to_string()),
                    &Some(loss.to_string()),
                    Some(seed),
                    &args.hyper,
                    &file_config,
                )?;
                runs.push(resolved);
            }
        }
    }

    let runs_dir = PathBuf::from(format!("{}.runs", args.out.display()));
    std::fs::create_dir_all(&runs_dir)
        .map_err(|e| CliError::Io(format!("{}: {e}", runs_dir.display())))?;

    let cells: Vec<Mutex<Option<SweepCell>>> = (0..runs.len()).map(|_| Mutex::new(None)).collect();
    let next = Mutex::new(0usize);
    std::thread::scope(|scope| {
        for _ in 0..args.jobs.min(runs.len()) {
            scope.spawn(|| loop {
                let index = {
                    let mut guard = next.lock().expect("queue lock");
                    let i = *guard;
                    if i >= runs.len() {
                        break;
                    }
                    *guard += 1;
                    i
                };
                let resolved = &runs[index];
                let child_dir = runs_dir.join(format!(
                    "{}_{}_s{}",
                    resolved.setting.to_string().replace(':', "-"),
                    resolved.loss,
                    resolved.seed
                ));
                let result = run_train(&args.data, &child_dir, resolved)
                    .map_err(|e| e.to_string());
                *cells[index].lock().expect("cell lock") = Some(SweepCell {
                    setting: resolved.setting.to_string(),
                    loss: resolved.loss.to_string(),
                    seed: resolved.seed,
                    result,
                });
            });
        }
    });

    let cells: Vec<SweepCell> = cells
        .into_iter()
        .map(|c| c.into_inner().expect("cell lock").expect("worker filled every cell"))
        .collect();

    let fmt_opt = |v: Option<f64>| v.map(|x| format!("{x:.9e}")).unwrap_or_default();
    let mut out = String::from(
        "kind,setting,loss,seed,map_test_final,map_test_best,pseudo_map,converged_epoch,status,map_final_mean,map_final_std\n",
    );
    for cell in &cells {
        match &cell.result {
            Ok(m) => writeln!(
                out,
                "run,{},{},{},{:.9e},{:.9e},{},{},ok,,",
                cell.setting,
                cell.loss,
                cell.seed,
                m.map_test_final,
                m.map_test_best,
                fmt_opt(m.pseudo_map),
                cell.result
                    .as_ref()
                    .ok()
                    .and_then(|m| m.converged_epoch)
                    .map(|e| e.to_string())
                    .unwrap_or_default(),
            )
            .expect("string write"),
            Err(msg) => writeln!(
                out,
                "run,{},{},{},,,,,error: {},,",
                cell.setting,
                cell.loss,
                cell.seed,
                msg.replace(',', ";")
            )
            .expect("string write"),
        }
    }

    // per-(setting, loss) aggregate over seeds
    for setting in &settings {
        for loss in &losses {
            let finals: Vec<f64> = cells
                .iter()
                .filter(|c| c.setting == setting.to_string() && c.loss == loss.to_string())
                .filter_map(|c| c.result.as_ref().ok().map(|m| m.map_test_final))
                .collect();
            if finals.is_empty() {
                continue;
            }
            let mean = finals.iter().sum::<f64>() / finals.len() as f64;
            let var = finals.iter().map(|v| (v - mean) * (v - mean)).sum::<f64>()
                / finals.len() as f64;
            writeln!(
                out,
                "summary,{setting},{loss},,,,,,{} runs,{mean:.9e},{:.9e}",
                finals.len(),
                var.sqrt()
            )
            .expect("string write");
        }
    }
    std::fs::write(&args.out, out)
        .map_err(|e| CliError::Io(format!("{}: {e}", args.out.display())))?;

    let (train_path, test_path) = gamepl::data::dataset_paths(&args.data);
    let mut resolved_config = BTreeMap::new();
    resolved_config.insert("settings".to_string(), args.settings.clone());
    resolved_config.insert("losses".to_string(), args.losses.clone());
    resolved_config.insert("seeds".to_string(), args.seeds.clone());
    resolved_config.insert("jobs".to_string(), args.jobs.to_string());
    let mut artifacts = BTreeMap::new();
    artifacts.insert("table".to_string(), args.out.display().to_string());
    artifacts.insert("runs_dir".to_string(), runs_dir.display().to_string());
    RunManifest {
        format: MANIFEST_FORMAT.to_string(),
        command: "sweep".to_string(),
        resolved_config,
        dataset_fingerprint: fingerprint(&[&train_path, &test_path])?,
        seed: 0,
        artifacts,
        wall_seconds: started.elapsed().as_secs_f64(),
    }
    .write(&PathBuf::from(format!("{}.manifest.json", args.out.display())))?;

    let failures = cells.iter().filter(|c| c.result.is_err()).count();
    println!(
        "sweep finished: {} runs, {} failures, table at {}",
        cells.len(),
        failures,
        args.out.display()
    );
    Ok(())
}

fn parse_list<T: FromStr<Err = String>>(raw: &str, what: &str) -> Result<Vec<T>, CliError> {
    let items: Vec<T> = raw
        .split(',')
        .filter(|s| !s.trim().is_empty())
        .map(|s| T::from_str(s.trim()).map_err(CliError::Usage))
        .collect::<Result<_, _>>()?;
    if items.is_empty() {
        return Err(CliError::Usage(format!("{what} list is empty")));
    }
    Ok(items)
}
