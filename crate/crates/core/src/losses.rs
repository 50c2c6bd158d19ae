//! The network player's objective — observed-label cross-entropy plus
//! scheduler-weighted unobserved-label cross-entropy — and the baseline loss
//! catalog it is compared against. Every loss returns its value together
//! with the exact gradient at the predictions.

use crate::data::{Observation, ObservationMask};
use crate::matrix::{LabelMatrix, Matrix};
use crate::numerics::{stable_bce, stable_bce_grad};
use crate::{real, Error, Real, Result};

/// Expected-positives regularizer: penalizes the squared deviation of the
/// mean predicted probability from `expected_positives / L` per image. A
/// documented stand-in that implicitly penalizes false positives.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct RegParams<T> {
    pub expected_positives: T,
    pub weight: T,
}

impl<T: Real> Default for RegParams<T> {
    fn default() -> Self {
        Self {
            expected_positives: T::one(),
            weight: real(0.1),
        }
    }
}

/// Value and gradient of the full objective, split into its two parts.
#[derive(Debug, Clone, PartialEq)]
pub struct LossReport<T> {
    pub total: T,
    pub obs_part: T,
    pub unobs_part: T,
    pub grad: Matrix<T>,
}

fn check_alignment<T: Real>(
    preds: &Matrix<T>,
    mask: &ObservationMask,
    rows: &[usize],
) -> Result<()> {
    if preds.rows() != rows.len() {
        return Err(Error::Dimension(format!(
            "{} prediction rows for {} mask rows",
            preds.rows(),
            rows.len()
        )));
    }
    if preds.cols() != mask.cols() {
        return Err(Error::Dimension(format!(
            "predictions have {} classes, mask has {}",
            preds.cols(),
            mask.cols()
        )));
    }
    if let Some(&r) = rows.iter().max() {
        if r >= mask.rows() {
            return Err(Error::Dimension(format!(
                "row {r} out of bounds for mask with {} rows",
                mask.rows()
            )));
        }
    }
    Ok(())
}

/// Cross-entropy over the observed entries plus the expected-positives
/// regularizer, summed over the batch. `rows[b]` names the mask row backing
/// prediction row `b`.
pub fn loss_obs<T: Real>(
    preds: &Matrix<T>,
    mask: &ObservationMask,
    rows: &[usize],
    reg: &RegParams<T>,
) -> Result<(T, Matrix<T>)> {
    check_alignment(preds, mask, rows)?;
    let l = preds.cols();
    let inv_l = T::one() / real::<T>(l as f64);
    let mut total = T::zero();
    let mut grad = Matrix::zeros(preds.rows(), l);

    for (b, &r) in rows.iter().enumerate() {
        for c in 0..l {
            let target = match mask.get(r, c) {
                Observation::Positive => T::one(),
                Observation::Negative => T::zero(),
                Observation::Unobserved => continue,
            };
            let q = preds.get(b, c);
            total += stable_bce(target, q);
            grad.set(b, c, stable_bce_grad(target, q));
        }
        if reg.weight > T::zero() {
            let mean: T = preds.row(b).iter().copied().sum::<T>() * inv_l;
            let dev = mean - reg.expected_positives * inv_l;
            total += reg.weight * dev * dev;
            let per_entry = reg.weight * real::<T>(2.0) * dev * inv_l;
            for g in grad.row_mut(b) {
                *g += per_entry;
            }
        }
    }
    Ok((total, grad))
}

/// Scheduler-weighted cross-entropy between predictions and pseudo labels
/// over the unobserved entries only. `pseudo` and `xi_weights` align with
/// `preds` row by row; observed entries contribute nothing.
pub fn loss_unobs<T: Real>(
    preds: &Matrix<T>,
    pseudo: &Matrix<T>,
    mask: &ObservationMask,
    rows: &[usize],
    xi_weights: &Matrix<T>,
) -> Result<(T, Matrix<T>)> {
    check_alignment(preds, mask, rows)?;
    for (name, m) in [("pseudo labels", pseudo), ("xi weights", xi_weights)] {
        if m.rows() != preds.rows() || m.cols() != preds.cols() {
            return Err(Error::Dimension(format!(
                "{name} are {}x{}, predictions are {}x{}",
                m.rows(),
                m.cols(),
                preds.rows(),
                preds.cols()
            )));
        }
    }
    let mut total = T::zero();
    let mut grad = Matrix::zeros(preds.rows(), preds.cols());
    for (b, &r) in rows.iter().enumerate() {
        for c in 0..preds.cols() {
            if mask.get(r, c) != Observation::Unobserved {
                continue;
            }
            let w = xi_weights.get(b, c);
            let p_u = pseudo.get(b, c);
            let q = preds.get(b, c);
            total += w * stable_bce(p_u, q);
            grad.set(b, c, w * stable_bce_grad(p_u, q));
        }
    }
    Ok((total, grad))
}

/// The full two-part objective; total and gradient are the sums of the
/// observed and unobserved parts.
pub fn loss_g2netpl<T: Real>(
    preds: &Matrix<T>,
    mask: &ObservationMask,
    rows: &[usize],
    pseudo: &Matrix<T>,
    xi_weights: &Matrix<T>,
    reg: &RegParams<T>,
) -> Result<LossReport<T>> {
    let (obs_part, mut grad) = loss_obs(preds, mask, rows, reg)?;
    let (unobs_part, unobs_grad) = loss_unobs(preds, pseudo, mask, rows, xi_weights)?;
    grad.add_assign(&unobs_grad);
    Ok(LossReport {
        total: obs_part + unobs_part,
        obs_part,
        unobs_part,
        grad,
    })
}

/// Baseline losses from the comparison catalog.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum BaselineKind {
    /// Cross-entropy against the full ground truth (needs full labels).
    BceFull,
    /// Assume-negative: every unobserved entry is treated as a negative.
    An,
    /// Assume-negative with label smoothing (targets `ε` and `1−ε`).
    AnLs,
    /// Assume-negative with negative terms down-weighted by `1/(L−1)`.
    Wan,
    /// Cross-entropy on observed entries plus the expected-positives
    /// regularizer; no assumption about the unobserved entries.
    Epr,
}

impl BaselineKind {
    pub fn name(&self) -> &'static str {
        match self {
            BaselineKind::BceFull => "bce",
            BaselineKind::An => "an",
            BaselineKind::AnLs => "an-ls",
            BaselineKind::Wan => "wan",
            BaselineKind::Epr => "epr",
        }
    }
}

/// Knobs shared by the baseline catalog.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct BaselineParams<T> {
    /// Label-smoothing amount for [`BaselineKind::AnLs`].
    pub smoothing: T,
    /// Regularizer for [`BaselineKind::Epr`].
    pub reg: RegParams<T>,
}

impl<T: Real> Default for BaselineParams<T> {
    fn default() -> Self {
        Self {
            smoothing: real(0.1),
            reg: RegParams::default(),
        }
    }
}

/// Evaluates one baseline loss. `full_labels` is required for
/// [`BaselineKind::BceFull`] and ignored otherwise; `rows[b]` names the
/// mask/label row backing prediction row `b`.
pub fn baseline_loss<T: Real>(
    kind: BaselineKind,
    preds: &Matrix<T>,
    mask: &ObservationMask,
    rows: &[usize],
    full_labels: Option<&LabelMatrix>,
    params: &BaselineParams<T>,
) -> Result<(T, Matrix<T>)> {
    check_alignment(preds, mask, rows)?;
    let l = preds.cols();
    match kind {
        BaselineKind::BceFull => {
            let labels = full_labels.ok_or_else(|| {
                Error::Argument("the full-label loss needs ground-truth labels".into())
            })?;
            if labels.cols() != l {
                return Err(Error::Dimension(format!(
                    "labels have {} classes, predictions have {l}",
                    labels.cols()
                )));
            }
            let mut total = T::zero();
            let mut grad = Matrix::zeros(preds.rows(), l);
            for (b, &r) in rows.iter().enumerate() {
                for c in 0..l {
                    let t = if labels.get(r, c) { T::one() } else { T::zero() };
                    total += stable_bce(t, preds.get(b, c));
                    grad.set(b, c, stable_bce_grad(t, preds.get(b, c)));
                }
            }
            Ok((total, grad))
        }
        BaselineKind::An | BaselineKind::AnLs | BaselineKind::Wan => {
            if kind == BaselineKind::Wan && l < 2 {
                return Err(Error::Argument(
                    "the down-weighted loss needs at least 2 classes".into(),
                ));
            }
            let eps = if kind == BaselineKind::AnLs {
                params.smoothing
            } else {
                T::zero()
            };
            let neg_weight = if kind == BaselineKind::Wan {
                T::one() / real::<T>((l - 1) as f64)
            } else {
                T::one()
            };
            let mut total = T::zero();
            let mut grad = Matrix::zeros(preds.rows(), l);
            for (b, &r) in rows.iter().enumerate() {
                for c in 0..l {
                    let positive = mask.get(r, c) == Observation::Positive;
                    let (target, w) = if positive {
                        (T::one() - eps, T::one())
                    } else {
                        (eps, neg_weight)
                    };
                    let q = preds.get(b, c);
                    total += w * stable_bce(target, q);
                    grad.set(b, c, w * stable_bce_grad(target, q));
                }
            }
            Ok((total, grad))
        }
        BaselineKind::Epr => loss_obs(preds, mask, rows, &params.reg),
    }
}
