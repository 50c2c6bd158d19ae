//! The alternating training loop: per epoch, the scheduler weights are
//! refreshed from the current pseudo labels, the network descends its
//! objective over shuffled mini-batches, and right after each batch step the
//! pseudo labels for that batch take their own descent move against the
//! refreshed predictions. Training stops at the epoch budget or once both
//! players' per-epoch change norms stay below tolerance.

use crate::classifier::{Arch, ClassifierModel, SgdOptimizer};
use crate::data::PartialDataset;
use crate::evaluation;
use crate::losses::{baseline_loss, loss_g2netpl, BaselineKind, BaselineParams, RegParams};
use crate::matrix::{LabelMatrix, Matrix};
use crate::numerics::MappingSpec;
use crate::pseudo::{AceVariant, LambdaSchedule, PseudoLabelStore};
use crate::scheduler::{progress, xi, SchedulerParams};
use crate::{real, rng, Error, Real, Result};

/// Whether all layers train from the start or the final layer trains alone
/// for a warmup phase.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum TrainingMode {
    EndToEnd,
    /// Freeze everything below the output layer for the first
    /// `phase1_epochs` epochs, then train end to end.
    LinearInit { phase1_epochs: usize },
}

/// All hyperparameters of a run. `Default` gives the documented desk-scale
/// configuration.
#[derive(Debug, Clone, PartialEq)]
pub struct TrainConfig<T> {
    pub arch: Arch,
    pub mapping: MappingSpec<T>,
    pub lambda: LambdaSchedule<T>,
    /// Scheduler mix between confidence and progress terms.
    pub beta: T,
    /// Scheduler confidence shaping.
    pub gamma: T,
    pub ace_variant: AceVariant,
    /// Initial learning rate; per-epoch rate is `lr * lr_decay^epoch`.
    pub lr: T,
    pub lr_decay: T,
    pub momentum: T,
    /// Pseudo-player step size.
    pub eta_u: T,
    /// Pseudo-player descent steps per visit.
    pub pseudo_steps: usize,
    /// Run one extra pseudo pass over the full training split per epoch.
    pub full_pseudo_pass: bool,
    pub epochs: usize,
    pub batch_size: usize,
    pub reg: RegParams<T>,
    pub seed: u64,
    pub training_mode: TrainingMode,
    /// Convergence is declared once the Nash residual stays below this for
    /// `convergence_patience` consecutive epochs.
    pub convergence_tol: T,
    pub convergence_patience: usize,
    /// Abort when the epoch loss exceeds this multiple of its initial value.
    pub divergence_factor: T,
    /// Worker threads for batch gradient passes; 0 = single-threaded
    /// reference path. Results are identical for every value.
    pub threads: usize,
}

impl<T: Real> Default for TrainConfig<T> {
    fn default() -> Self {
        Self {
            arch: Arch::Linear,
            mapping: MappingSpec::gaussian_cdf(real(0.3)).expect("positive sigma"),
            lambda: LambdaSchedule::new(T::one(), real(0.2)).expect("positive width"),
            beta: real(0.7),
            gamma: T::one(),
            ace_variant: AceVariant::Additive,
            lr: real(0.1),
            lr_decay: real(0.97),
            momentum: T::zero(),
            eta_u: real(0.1),
            pseudo_steps: 1,
            full_pseudo_pass: false,
            epochs: 10,
            batch_size: 16,
            reg: RegParams::default(),
            seed: 0,
            training_mode: TrainingMode::EndToEnd,
            convergence_tol: real(1e-4),
            convergence_patience: 2,
            divergence_factor: real(10.0),
            threads: 0,
        }
    }
}

impl<T: Real> TrainConfig<T> {
    pub fn validate(&self) -> Result<()> {
        if self.epochs == 0 {
            return Err(Error::Argument("epochs must be >= 1".into()));
        }
        if self.batch_size == 0 {
            return Err(Error::Argument("batch_size must be >= 1".into()));
        }
        if self.pseudo_steps == 0 {
            return Err(Error::Argument("pseudo_steps must be >= 1".into()));
        }
        if self.convergence_patience == 0 {
            return Err(Error::Argument("convergence_patience must be >= 1".into()));
        }
        for (name, v) in [("lr", self.lr), ("eta_u", self.eta_u)] {
            if !v.is_finite() || v < T::zero() {
                return Err(Error::Argument(format!("{name} must be finite and >= 0")));
            }
        }
        if !self.lr_decay.is_finite() || self.lr_decay <= T::zero() {
            return Err(Error::Argument("lr_decay must be > 0".into()));
        }
        if !self.momentum.is_finite() || self.momentum < T::zero() || self.momentum >= T::one() {
            return Err(Error::Argument("momentum must be in [0, 1)".into()));
        }
        if self.divergence_factor.is_nan() || self.divergence_factor <= T::one() {
            return Err(Error::Argument("divergence_factor must be > 1".into()));
        }
        if self.convergence_tol.is_nan() || self.convergence_tol <= T::zero() {
            return Err(Error::Argument("convergence_tol must be > 0".into()));
        }
        SchedulerParams::new(self.beta, self.gamma, self.epochs)?;
        Ok(())
    }
}

/// Per-epoch diagnostics. Losses are per-image means over the training
/// split, evaluated at the end of the epoch with that epoch's scheduler
/// weights; the change norms are Euclidean distances to the previous
/// epoch's state.
#[derive(Debug, Clone, PartialEq)]
pub struct TraceRecord<T> {
    pub epoch: usize,
    pub loss_total: T,
    pub loss_obs: T,
    pub loss_unobs: T,
    /// Mean `|2ŷ_u − 1|` over unobserved entries.
    pub pseudo_confidence_mean: T,
    pub pseudo_delta_norm: T,
    pub theta_delta_norm: T,
    /// Macro mAP on the held-out test split.
    pub map_test: T,
    /// Pseudo-label quality against ground truth on unobserved entries;
    /// absent for baseline runs and fully-observed datasets.
    pub pseudo_map: Option<T>,
}

/// Result of a game-trainer run.
#[derive(Debug, Clone)]
pub struct TrainOutcome<T> {
    pub model: ClassifierModel<T>,
    pub store: PseudoLabelStore<T>,
    pub traces: Vec<TraceRecord<T>>,
    pub converged_epoch: Option<usize>,
}

/// Result of a baseline run (no pseudo-label player).
#[derive(Debug, Clone)]
pub struct BaselineOutcome<T> {
    pub model: ClassifierModel<T>,
    pub traces: Vec<TraceRecord<T>>,
    pub converged_epoch: Option<usize>,
}

/// Convergence diagnostic between two consecutive trace records: the larger
/// of the two players' change norms. Symmetric in which player moved last.
pub fn nash_residual<T: Real>(
    current: &TraceRecord<T>,
    previous: &TraceRecord<T>,
) -> Result<T> {
    if current.epoch != previous.epoch + 1 {
        return Err(Error::Argument(format!(
            "records are not consecutive: epochs {} and {}",
            previous.epoch, current.epoch
        )));
    }
    Ok(current.pseudo_delta_norm.max(current.theta_delta_norm))
}

type LoopOutput<T> = (
    ClassifierModel<T>,
    Option<PseudoLabelStore<T>>,
    Vec<TraceRecord<T>>,
    Option<usize>,
);

enum Objective<'a, T> {
    Game,
    Baseline {
        kind: BaselineKind,
        params: &'a BaselineParams<T>,
    },
}

/// Runs the two-player training loop.
pub fn train<T: Real>(
    dataset: &PartialDataset<T>,
    config: &TrainConfig<T>,
) -> Result<TrainOutcome<T>> {
    let (model, store, traces, converged_epoch) = run_loop(dataset, config, Objective::Game)?;
    Ok(TrainOutcome {
        model,
        store: store.expect("game objective always carries a store"),
        traces,
        converged_epoch,
    })
}

/// Trains one of the baseline losses with the same batching, optimizer, and
/// trace machinery. Baseline traces report the whole loss under `loss_obs`
/// and zero for the pseudo-player columns.
pub fn train_baseline<T: Real>(
    dataset: &PartialDataset<T>,
    kind: BaselineKind,
    params: &BaselineParams<T>,
    config: &TrainConfig<T>,
) -> Result<BaselineOutcome<T>> {
    let (model, _, traces, converged_epoch) =
        run_loop(dataset, config, Objective::Baseline { kind, params })?;
    Ok(BaselineOutcome {
        model,
        traces,
        converged_epoch,
    })
}

fn run_loop<T: Real>(
    dataset: &PartialDataset<T>,
    config: &TrainConfig<T>,
    objective: Objective<'_, T>,
) -> Result<LoopOutput<T>> {
    config.validate()?;
    dataset.validate()?;
    let train_rows = dataset.train_rows();
    if train_rows.is_empty() {
        return Err(Error::Argument("dataset has no training samples".into()));
    }
    let test_rows = dataset.test_rows();
    if test_rows.is_empty() {
        return Err(Error::Argument(
            "dataset has no test samples for the held-out mAP trace".into(),
        ));
    }
    let num_classes = dataset.num_classes();
    let sched = SchedulerParams::new(config.beta, config.gamma, config.epochs)?;

    let mut model = ClassifierModel::init(
        config.arch,
        dataset.input_dim(),
        num_classes,
        config.seed,
    )?;
    let mut store = match objective {
        Objective::Game => Some(PseudoLabelStore::init(
            &dataset.mask,
            &train_rows,
            &config.mapping,
        )),
        Objective::Baseline { .. } => None,
    };
    let mut optimizer = SgdOptimizer::new(config.momentum);
    let pool = if config.threads > 0 {
        Some(
            rayon::ThreadPoolBuilder::new()
                .num_threads(config.threads)
                .build()
                .map_err(|e| Error::Argument(format!("could not build thread pool: {e}")))?,
        )
    } else {
        None
    };

    // row k of these matrices corresponds to train_rows[k] / test_rows[k]
    let train_features = dataset.features.gather_rows(&train_rows);
    let test_features = dataset.features.gather_rows(&test_rows);
    let test_gt = gather_labels(&dataset.ground_truth, &test_rows);

    let mut traces: Vec<TraceRecord<T>> = Vec::with_capacity(config.epochs);
    let mut converged_epoch = None;
    let mut quiet_streak = 0usize;
    // Divergence reference: the untrained model's per-image loss, floored at
    // ln 2 (one maximally uncertain binary term). The floor matters because
    // the epoch-0 scheduler can legitimately zero the whole unobserved part
    // (gamma = 1, phi = 0), which would otherwise make the reference tiny
    // and trip the guard on ordinary scheduler growth.
    let mut divergence_reference: Option<T> = None;
    let mut prev_mapped = store.as_ref().map(|s| s.mapped_matrix());
    let mut prev_model = model.clone();

    for epoch in 0..config.epochs {
        let phi = progress(epoch, &sched)?;
        // scheduler weights are refreshed once per epoch from the store
        let xi_mat = store
            .as_ref()
            .map(|s| xi_matrix(s, phi, &sched))
            .unwrap_or_else(|| Matrix::zeros(0, 0));
        let lr_t = config.lr * powi(config.lr_decay, epoch);
        let frozen = frozen_layers(config, epoch);

        if divergence_reference.is_none() {
            let (total, _, _) = mean_losses(
                &model,
                &train_features,
                dataset,
                &train_rows,
                &objective,
                store.as_ref(),
                &xi_mat,
                &config.reg,
            )?;
            divergence_reference = Some(total.max(real(std::f64::consts::LN_2)));
        }

        let mut order: Vec<usize> = (0..train_rows.len()).collect();
        rng::shuffle(
            &mut order,
            &mut rng::stream(config.seed, rng::SALT_SHUFFLE + epoch as u64),
        );

        for chunk in order.chunks(config.batch_size) {
            let batch_features = train_features.gather_rows(chunk);
            let ds_rows: Vec<usize> = chunk.iter().map(|&k| train_rows[k]).collect();
            let preds = model.forward(&batch_features)?;
            let (batch_loss, mut grad) = match (&objective, store.as_ref()) {
                (Objective::Game, Some(s)) => {
                    let batch_pseudo = gather_store_rows(s, chunk);
                    let batch_xi = xi_mat.gather_rows(chunk);
                    let report = loss_g2netpl(
                        &preds,
                        &dataset.mask,
                        &ds_rows,
                        &batch_pseudo,
                        &batch_xi,
                        &config.reg,
                    )?;
                    (report.total, report.grad)
                }
                (Objective::Baseline { kind, params }, _) => baseline_loss(
                    *kind,
                    &preds,
                    &dataset.mask,
                    &ds_rows,
                    Some(&dataset.ground_truth),
                    params,
                )?,
                _ => unreachable!(),
            };
            if !batch_loss.is_finite() {
                return Err(Error::Diverged {
                    epoch,
                    loss: batch_loss.to_f64().unwrap_or(f64::NAN),
                });
            }
            // losses are batch sums; the step uses the mean gradient so the
            // learning rate means the same thing at every batch size
            let inv_batch = T::one() / real::<T>(chunk.len() as f64);
            for b in 0..grad.rows() {
                for g in grad.row_mut(b) {
                    *g *= inv_batch;
                }
            }
            let grads = model.backward_with(&batch_features, &grad, pool.as_ref())?;
            optimizer.step(&mut model, &grads, lr_t, &frozen);

            if let Some(s) = store.as_mut() {
                // the pseudo player answers the refreshed predictions
                let refreshed = model.forward(&batch_features)?;
                s.update_rows_with(
                    chunk,
                    &refreshed,
                    &config.lambda,
                    &config.mapping,
                    config.eta_u,
                    config.pseudo_steps,
                    config.ace_variant,
                )?;
            }
        }

        if config.full_pseudo_pass {
            if let Some(s) = store.as_mut() {
                let preds = model.forward(&train_features)?;
                s.update_rows_with(
                    &(0..train_rows.len()).collect::<Vec<_>>(),
                    &preds,
                    &config.lambda,
                    &config.mapping,
                    config.eta_u,
                    config.pseudo_steps,
                    config.ace_variant,
                )?;
            }
        }

        // end-of-epoch diagnostics over the full training split
        let (loss_total, loss_obs, loss_unobs) = mean_losses(
            &model,
            &train_features,
            dataset,
            &train_rows,
            &objective,
            store.as_ref(),
            &xi_mat,
            &config.reg,
        )?;

        let test_preds = model.forward(&test_features)?;
        let map_test = evaluation::map_score(&test_preds, &test_gt)?.map;

        let (pseudo_confidence_mean, pseudo_delta_norm, pseudo_map) = match store.as_ref() {
            Some(s) => {
                let mapped = s.mapped_matrix();
                let delta = mapped.l2_distance(prev_mapped.as_ref().expect("tracked"));
                prev_mapped = Some(mapped);
                let quality =
                    evaluation::pseudo_label_quality(s, &dataset.ground_truth, &dataset.mask)
                        .ok()
                        .map(|r| r.map);
                (s.mean_confidence(), delta, quality)
            }
            None => (T::zero(), T::zero(), None),
        };
        let theta_delta_norm = model.l2_distance(&prev_model);
        prev_model = model.clone();

        let record = TraceRecord {
            epoch,
            loss_total,
            loss_obs,
            loss_unobs,
            pseudo_confidence_mean,
            pseudo_delta_norm,
            theta_delta_norm,
            map_test,
            pseudo_map,
        };

        if !loss_total.is_finite() {
            return Err(Error::Diverged {
                epoch,
                loss: loss_total.to_f64().unwrap_or(f64::NAN),
            });
        }
        let reference = divergence_reference.expect("set before the first epoch runs");
        if loss_total > config.divergence_factor * reference {
            return Err(Error::Diverged {
                epoch,
                loss: loss_total.to_f64().unwrap_or(f64::NAN),
            });
        }

        let residual = record.pseudo_delta_norm.max(record.theta_delta_norm);
        traces.push(record);
        if residual < config.convergence_tol {
            quiet_streak += 1;
            if quiet_streak >= config.convergence_patience && converged_epoch.is_none() {
                converged_epoch = Some(epoch);
                break;
            }
        } else {
            quiet_streak = 0;
        }
    }

    Ok((model, store, traces, converged_epoch))
}

// Per-image mean (total, observed, unobserved) loss of the current model
// over the given rows, under the objective in play.
#[allow(clippy::too_many_arguments)]
fn mean_losses<T: Real>(
    model: &ClassifierModel<T>,
    features: &Matrix<T>,
    dataset: &PartialDataset<T>,
    rows: &[usize],
    objective: &Objective<'_, T>,
    store: Option<&PseudoLabelStore<T>>,
    xi_mat: &Matrix<T>,
    reg: &RegParams<T>,
) -> Result<(T, T, T)> {
    let preds = model.forward(features)?;
    let n = real::<T>(rows.len() as f64);
    match (objective, store) {
        (Objective::Game, Some(s)) => {
            let report = loss_g2netpl(
                &preds,
                &dataset.mask,
                rows,
                &s.mapped_matrix(),
                xi_mat,
                reg,
            )?;
            Ok((
                report.total / n,
                report.obs_part / n,
                report.unobs_part / n,
            ))
        }
        (Objective::Baseline { kind, params }, _) => {
            let (total, _) = baseline_loss(
                *kind,
                &preds,
                &dataset.mask,
                rows,
                Some(&dataset.ground_truth),
                params,
            )?;
            let mean = total / n;
            Ok((mean, mean, T::zero()))
        }
        _ => unreachable!("game objective always carries a store"),
    }
}

fn powi<T: Real>(base: T, exp: usize) -> T {
    let mut acc = T::one();
    for _ in 0..exp {
        acc *= base;
    }
    acc
}

fn frozen_layers<T: Real>(config: &TrainConfig<T>, epoch: usize) -> Vec<bool> {
    match (config.training_mode, config.arch) {
        (TrainingMode::LinearInit { phase1_epochs }, Arch::Mlp { .. })
            if epoch < phase1_epochs =>
        {
            vec![true, false]
        }
        (_, Arch::Mlp { .. }) => vec![false, false],
        _ => vec![false],
    }
}

fn xi_matrix<T: Real>(
    store: &PseudoLabelStore<T>,
    phi: T,
    sched: &SchedulerParams<T>,
) -> Matrix<T> {
    let mut m = Matrix::zeros(store.len(), store.num_classes());
    for i in 0..store.len() {
        let mapped = store.mapped_row(i);
        let row = m.row_mut(i);
        for (w, &p) in row.iter_mut().zip(mapped) {
            *w = xi(p, phi, sched);
        }
    }
    m
}

fn gather_store_rows<T: Real>(store: &PseudoLabelStore<T>, positions: &[usize]) -> Matrix<T> {
    let mut m = Matrix::zeros(positions.len(), store.num_classes());
    for (b, &i) in positions.iter().enumerate() {
        m.row_mut(b).copy_from_slice(store.mapped_row(i));
    }
    m
}

fn gather_labels(gt: &LabelMatrix, rows: &[usize]) -> LabelMatrix {
    let mut out = LabelMatrix::new(rows.len(), gt.cols());
    for (b, &r) in rows.iter().enumerate() {
        for c in 0..gt.cols() {
            out.set(b, c, gt.get(r, c));
        }
    }
    out
}
