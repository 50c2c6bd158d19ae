//! The pseudo-label player: latent per-entry state, the augmented
//! cross-entropy loss in both variants, its analytic gradient, and the
//! per-entry descent updates toward 0/1 convergence.

use std::fmt::Write as _;
use std::fs;
use std::path::Path;

use crate::data::{Observation, ObservationMask};
use crate::matrix::Matrix;
use crate::numerics::{
    clamp_prob, map_latent, map_latent_derivative, stable_bce, MappingSpec,
};
use crate::{real, Error, Real, Result};

/// Confidence-dependent weight for the 0/1 convergence penalty: a Gaussian
/// bump in the prediction, largest where the network is least decided
/// (prediction near 0.5).
///
/// `width = ∞` (see [`LambdaSchedule::constant`]) makes the weight a flat
/// `lambda_max` regardless of the prediction.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct LambdaSchedule<T> {
    lambda_max: T,
    width: T,
}

impl<T: Real> LambdaSchedule<T> {
    pub fn new(lambda_max: T, width: T) -> Result<Self> {
        if !lambda_max.is_finite() || lambda_max < T::zero() {
            return Err(Error::Argument(format!(
                "lambda_max must be >= 0, got {lambda_max}"
            )));
        }
        if width <= T::zero() || width.is_nan() {
            return Err(Error::Argument(format!("width must be > 0, got {width}")));
        }
        Ok(Self { lambda_max, width })
    }

    /// A prediction-independent weight.
    pub fn constant(value: T) -> Result<Self> {
        Self::new(value, T::infinity())
    }

    pub fn lambda_max(&self) -> T {
        self.lambda_max
    }

    pub fn width(&self) -> T {
        self.width
    }
}

/// Evaluates the schedule at one prediction:
/// `λ_j = lambda_max · exp(−(pred − 0.5)² / (2·width²))`.
pub fn lambda_at<T: Real>(pred_j: T, lam: &LambdaSchedule<T>) -> T {
    let d = pred_j - real::<T>(0.5);
    lam.lambda_max * (-(d * d) / (real::<T>(2.0) * lam.width * lam.width)).exp()
}

/// One additive augmented cross-entropy term:
/// `L(pred, F(y)) + λ·F(y)·(1−F(y))`.
pub fn ace_term<T: Real>(pred_j: T, latent_j: T, lambda_j: T, spec: &MappingSpec<T>) -> T {
    let f = map_latent(latent_j, spec);
    stable_bce(pred_j, f) + lambda_j * f * (T::one() - f)
}

/// One multiplicative augmented cross-entropy term:
/// `exp(λ·F(y)·(1−F(y))) · L(pred, F(y))`.
pub fn ace_term_exp<T: Real>(pred_j: T, latent_j: T, lambda_j: T, spec: &MappingSpec<T>) -> T {
    let f = map_latent(latent_j, spec);
    (lambda_j * f * (T::one() - f)).exp() * stable_bce(pred_j, f)
}

/// Additive augmented cross-entropy over a label vector, with per-entry
/// weights drawn from the schedule at each prediction.
pub fn ace_loss<T: Real>(
    pred: &[T],
    latent: &[T],
    lam: &LambdaSchedule<T>,
    spec: &MappingSpec<T>,
) -> Result<T> {
    if pred.len() != latent.len() {
        return Err(Error::Dimension(format!(
            "prediction vector has {} entries, latent vector has {}",
            pred.len(),
            latent.len()
        )));
    }
    Ok(pred
        .iter()
        .zip(latent)
        .map(|(&p, &y)| ace_term(p, y, lambda_at(p, lam), spec))
        .sum())
}

/// Multiplicative variant of [`ace_loss`]; amplifies the cross-entropy where
/// the mapped value sits far from 0 and 1.
pub fn ace_loss_exp<T: Real>(
    pred: &[T],
    latent: &[T],
    lam: &LambdaSchedule<T>,
    spec: &MappingSpec<T>,
) -> Result<T> {
    if pred.len() != latent.len() {
        return Err(Error::Dimension(format!(
            "prediction vector has {} entries, latent vector has {}",
            pred.len(),
            latent.len()
        )));
    }
    Ok(pred
        .iter()
        .zip(latent)
        .map(|(&p, &y)| ace_term_exp(p, y, lambda_at(p, lam), spec))
        .sum())
}

/// Which augmented cross-entropy the pseudo player descends.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum AceVariant {
    /// Cross-entropy plus the additive penalty `λ·F·(1−F)`.
    #[default]
    Additive,
    /// Cross-entropy amplified by `exp(λ·F·(1−F))`.
    Exponential,
}

/// Analytic gradient of one additive term in the latent value:
/// `((ŷ_u − ŷ) / (ŷ_u(1−ŷ_u)) + λ − 2λŷ_u) · F'(y)` with `ŷ_u` clamped away
/// from 0 and 1.
pub fn ace_grad<T: Real>(pred_j: T, latent_j: T, lambda_j: T, spec: &MappingSpec<T>) -> T {
    let one = T::one();
    let y_u = clamp_prob(map_latent(latent_j, spec));
    let bracket =
        (y_u - pred_j) / (y_u * (one - y_u)) + lambda_j - real::<T>(2.0) * lambda_j * y_u;
    bracket * map_latent_derivative(latent_j, spec)
}

/// Analytic gradient of one multiplicative term in the latent value:
/// `e^(λF(1−F)) · F'(y) · [ λ(1−2F)·L(ŷ, F) + (F − ŷ)/(F(1−F)) ]`.
pub fn ace_grad_exp<T: Real>(pred_j: T, latent_j: T, lambda_j: T, spec: &MappingSpec<T>) -> T {
    let one = T::one();
    let f_raw = map_latent(latent_j, spec);
    let f = clamp_prob(f_raw);
    let scale = (lambda_j * f * (one - f)).exp();
    let ce = stable_bce(pred_j, f_raw);
    let bracket = lambda_j * (one - real::<T>(2.0) * f) * ce + (f - pred_j) / (f * (one - f));
    scale * bracket * map_latent_derivative(latent_j, spec)
}

/// Gradient of one term under the selected variant.
pub fn ace_entry_grad<T: Real>(
    variant: AceVariant,
    pred_j: T,
    latent_j: T,
    lambda_j: T,
    spec: &MappingSpec<T>,
) -> T {
    match variant {
        AceVariant::Additive => ace_grad(pred_j, latent_j, lambda_j, spec),
        AceVariant::Exponential => ace_grad_exp(pred_j, latent_j, lambda_j, spec),
    }
}

/// Global minimizer of one additive term, found by a dense grid over the
/// latent working range followed by ternary refinement. Exists as an
/// independent check on the iterative updates.
pub fn solve_pseudo_exact<T: Real>(pred_j: T, lambda_j: T, spec: &MappingSpec<T>) -> T {
    const GRID: usize = 20_000;
    let (lo, hi) = spec.latent_bounds();
    let step = (hi - lo) / real::<T>(GRID as f64);
    let eval = |y: T| ace_term(pred_j, y, lambda_j, spec);

    let mut best_i = 0usize;
    let mut best = T::infinity();
    for i in 0..=GRID {
        let v = eval(lo + step * real::<T>(i as f64));
        if v < best {
            best = v;
            best_i = i;
        }
    }
    let mut a = lo + step * real::<T>(best_i.saturating_sub(1) as f64);
    let mut b = lo + step * real::<T>(best_i.min(GRID - 1) as f64 + 1.0);
    for _ in 0..200 {
        let third = (b - a) / real::<T>(3.0);
        let m1 = a + third;
        let m2 = b - third;
        if eval(m1) <= eval(m2) {
            b = m2;
        } else {
            a = m1;
        }
    }
    (a + b) / real::<T>(2.0)
}

/// Latent pseudo-label state for the training images. Observed entries are
/// frozen at their annotated value and never move; unobserved entries start
/// at the unbiased probability 0.5.
#[derive(Debug, Clone, PartialEq)]
pub struct PseudoLabelStore<T> {
    ids: Vec<usize>,
    num_classes: usize,
    latent: Vec<T>,
    mapped: Vec<T>,
    frozen: Vec<bool>,
}

impl<T: Real> PseudoLabelStore<T> {
    /// Builds the store for the given dataset rows: observed entries frozen
    /// at exactly 1 or 0, unobserved entries at the latent midpoint so their
    /// mapped value is 0.5.
    pub fn init(mask: &ObservationMask, rows: &[usize], spec: &MappingSpec<T>) -> Self {
        let l = mask.cols();
        let mid = spec.midpoint_latent();
        let mut latent = Vec::with_capacity(rows.len() * l);
        let mut mapped = Vec::with_capacity(rows.len() * l);
        let mut frozen = Vec::with_capacity(rows.len() * l);
        for &r in rows {
            for c in 0..l {
                match mask.get(r, c) {
                    Observation::Positive => {
                        latent.push(spec.latent_bounds().1);
                        mapped.push(T::one());
                        frozen.push(true);
                    }
                    Observation::Negative => {
                        latent.push(spec.latent_bounds().0);
                        mapped.push(T::zero());
                        frozen.push(true);
                    }
                    Observation::Unobserved => {
                        latent.push(mid);
                        mapped.push(real(0.5));
                        frozen.push(false);
                    }
                }
            }
        }
        Self {
            ids: rows.to_vec(),
            num_classes: l,
            latent,
            mapped,
            frozen,
        }
    }

    /// Number of images the store covers.
    pub fn len(&self) -> usize {
        self.ids.len()
    }

    pub fn is_empty(&self) -> bool {
        self.ids.is_empty()
    }

    pub fn num_classes(&self) -> usize {
        self.num_classes
    }

    /// Dataset row backing each store row.
    pub fn ids(&self) -> &[usize] {
        &self.ids
    }

    pub fn mapped_row(&self, i: usize) -> &[T] {
        &self.mapped[i * self.num_classes..(i + 1) * self.num_classes]
    }

    pub fn latent_row(&self, i: usize) -> &[T] {
        &self.latent[i * self.num_classes..(i + 1) * self.num_classes]
    }

    pub fn frozen_row(&self, i: usize) -> &[bool] {
        &self.frozen[i * self.num_classes..(i + 1) * self.num_classes]
    }

    /// Copy of the mapped values as a matrix, rows aligned with [`ids`].
    pub fn mapped_matrix(&self) -> Matrix<T> {
        Matrix::from_vec(self.len(), self.num_classes, self.mapped.clone())
            .expect("store shape is consistent")
    }

    /// Gradient-descent updates on the latent entries of the listed store
    /// rows, descending the additive augmented loss. `preds` rows align with
    /// `positions`. Frozen entries never move; mapped values are recomputed
    /// from the clamped latents.
    pub fn update_rows(
        &mut self,
        positions: &[usize],
        preds: &Matrix<T>,
        lam: &LambdaSchedule<T>,
        spec: &MappingSpec<T>,
        eta_u: T,
        steps: usize,
    ) -> Result<()> {
        self.update_rows_with(
            positions,
            preds,
            lam,
            spec,
            eta_u,
            steps,
            AceVariant::Additive,
        )
    }

    /// [`update_rows`](Self::update_rows) under an explicit loss variant.
    #[allow(clippy::too_many_arguments)]
    pub fn update_rows_with(
        &mut self,
        positions: &[usize],
        preds: &Matrix<T>,
        lam: &LambdaSchedule<T>,
        spec: &MappingSpec<T>,
        eta_u: T,
        steps: usize,
        variant: AceVariant,
    ) -> Result<()> {
        if preds.rows() != positions.len() || preds.cols() != self.num_classes {
            return Err(Error::Dimension(format!(
                "predictions are {}x{}, expected {}x{}",
                preds.rows(),
                preds.cols(),
                positions.len(),
                self.num_classes
            )));
        }
        if eta_u.is_nan() || eta_u < T::zero() {
            return Err(Error::Argument(format!("eta_u must be >= 0, got {eta_u}")));
        }
        for (b, &i) in positions.iter().enumerate() {
            for c in 0..self.num_classes {
                let k = i * self.num_classes + c;
                if self.frozen[k] {
                    continue;
                }
                let p = preds.get(b, c);
                let lambda_j = lambda_at(p, lam);
                let mut y = self.latent[k];
                for _ in 0..steps {
                    y = spec.clamp_latent(y - eta_u * ace_entry_grad(variant, p, y, lambda_j, spec));
                }
                self.latent[k] = y;
                self.mapped[k] = map_latent(y, spec);
            }
        }
        Ok(())
    }

    /// [`update_rows`](Self::update_rows) over the whole store; `preds` rows
    /// align with store rows.
    pub fn update(
        &mut self,
        preds: &Matrix<T>,
        lam: &LambdaSchedule<T>,
        spec: &MappingSpec<T>,
        eta_u: T,
        steps: usize,
    ) -> Result<()> {
        let all: Vec<usize> = (0..self.len()).collect();
        self.update_rows(&all, preds, lam, spec, eta_u, steps)
    }

    /// Mean confidence `|2ŷ_u − 1|` over the non-frozen entries; 0 when
    /// everything is frozen.
    pub fn mean_confidence(&self) -> T {
        let mut sum = T::zero();
        let mut count = 0usize;
        for (m, &f) in self.mapped.iter().zip(&self.frozen) {
            if !f {
                sum += (real::<T>(2.0) * *m - T::one()).abs();
                count += 1;
            }
        }
        if count == 0 {
            T::zero()
        } else {
            sum / real::<T>(count as f64)
        }
    }

    /// Writes the store as CSV: `image_id,class,latent,mapped,frozen`.
    pub fn save(&self, path: &Path) -> Result<()> {
        let mut out = String::from("#gamepl-pseudo-v1\nimage_id,class,latent,mapped,frozen\n");
        for (i, &id) in self.ids.iter().enumerate() {
            for c in 0..self.num_classes {
                let k = i * self.num_classes + c;
                writeln!(
                    out,
                    "{id},{c},{},{},{}",
                    self.latent[k].to_f64().unwrap_or(f64::NAN),
                    self.mapped[k].to_f64().unwrap_or(f64::NAN),
                    u8::from(self.frozen[k])
                )
                .expect("string write");
            }
        }
        fs::write(path, out)?;
        Ok(())
    }

    /// Reads a checkpoint written by [`save`](Self::save).
    pub fn load(path: &Path) -> Result<Self> {
        let text = fs::read_to_string(path)?;
        let name = path.display().to_string();
        let perr = |line: usize, msg: String| Error::Parse {
            path: name.clone(),
            line,
            msg,
        };
        let mut lines = text.lines().enumerate();
        match lines.next() {
            Some((_, "#gamepl-pseudo-v1")) => {}
            _ => return Err(perr(1, "expected header '#gamepl-pseudo-v1'".into())),
        }
        match lines.next() {
            Some((_, "image_id,class,latent,mapped,frozen")) => {}
            _ => return Err(perr(2, "expected column header".into())),
        }

        let mut rows: Vec<(usize, usize, f64, f64, bool)> = Vec::new();
        for (idx, line) in lines {
            if line.trim().is_empty() {
                continue;
            }
            let lineno = idx + 1;
            let cells: Vec<&str> = line.split(',').collect();
            if cells.len() != 5 {
                return Err(perr(lineno, format!("expected 5 columns, found {}", cells.len())));
            }
            let id: usize = cells[0]
                .parse()
                .map_err(|_| perr(lineno, format!("bad image id '{}'", cells[0])))?;
            let class: usize = cells[1]
                .parse()
                .map_err(|_| perr(lineno, format!("bad class index '{}'", cells[1])))?;
            let latent: f64 = cells[2]
                .parse()
                .map_err(|_| perr(lineno, format!("bad latent value '{}'", cells[2])))?;
            let mapped: f64 = cells[3]
                .parse()
                .map_err(|_| perr(lineno, format!("bad mapped value '{}'", cells[3])))?;
            let frozen = match cells[4] {
                "0" => false,
                "1" => true,
                other => return Err(perr(lineno, format!("bad frozen flag '{other}'"))),
            };
            rows.push((id, class, latent, mapped, frozen));
        }
        if rows.is_empty() {
            return Err(perr(2, "checkpoint holds no entries".into()));
        }
        let num_classes = rows.iter().map(|r| r.1).max().unwrap() + 1;
        if !rows.len().is_multiple_of(num_classes) {
            return Err(perr(
                2,
                format!("{} entries is not a multiple of {num_classes} classes", rows.len()),
            ));
        }
        let n = rows.len() / num_classes;
        let mut store = Self {
            ids: vec![0; n],
            num_classes,
            latent: vec![T::zero(); n * num_classes],
            mapped: vec![T::zero(); n * num_classes],
            frozen: vec![false; n * num_classes],
        };
        for (i, chunk) in rows.chunks(num_classes).enumerate() {
            store.ids[i] = chunk[0].0;
            for (c, &(id, class, latent, mapped, frozen)) in chunk.iter().enumerate() {
                if id != chunk[0].0 || class != c {
                    return Err(perr(
                        3 + i * num_classes + c,
                        "entries out of order; expected class-major blocks per image".into(),
                    ));
                }
                let k = i * num_classes + c;
                store.latent[k] = real(latent);
                store.mapped[k] = real(mapped);
                store.frozen[k] = frozen;
            }
        }
        Ok(store)
    }
}
