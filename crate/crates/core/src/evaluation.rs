//! Ranking metrics and trace files.
//!
//! Average precision is the uninterpolated variant: samples are ranked by
//! descending score with ties broken by ascending sample index, and AP is
//! the mean of the precision at each positive hit. The macro mAP averages
//! per-class AP over classes that have at least one positive; positive-free
//! classes are excluded and counted.

use std::cmp::Ordering;
use std::fmt::Write as _;
use std::fs;
use std::path::Path;

use crate::data::{Observation, ObservationMask};
use crate::matrix::{LabelMatrix, Matrix};
use crate::pseudo::PseudoLabelStore;
use crate::trainer::TraceRecord;
use crate::{real, Error, Real, Result};

/// Per-class average precision and the macro mean. `None` marks a class
/// excluded for having no positives.
#[derive(Debug, Clone, PartialEq)]
pub struct ApResult<T> {
    pub per_class_ap: Vec<Option<T>>,
    pub map: T,
    pub excluded_classes: usize,
}

/// Uninterpolated average precision of one score vector against binary
/// ground truth. Errors when the class has no positives.
pub fn average_precision<T: Real>(scores: &[T], gt: &[bool]) -> Result<T> {
    if scores.len() != gt.len() {
        return Err(Error::Dimension(format!(
            "{} scores against {} labels",
            scores.len(),
            gt.len()
        )));
    }
    let positives = gt.iter().filter(|&&g| g).count();
    if positives == 0 {
        return Err(Error::Argument(
            "average precision is undefined without positives".into(),
        ));
    }
    let mut order: Vec<usize> = (0..scores.len()).collect();
    order.sort_by(|&a, &b| {
        scores[b]
            .partial_cmp(&scores[a])
            .unwrap_or(Ordering::Equal)
            .then(a.cmp(&b))
    });
    let mut hits = 0usize;
    let mut sum = T::zero();
    for (rank0, &i) in order.iter().enumerate() {
        if gt[i] {
            hits += 1;
            sum += real::<T>(hits as f64) / real::<T>((rank0 + 1) as f64);
        }
    }
    Ok(sum / real::<T>(positives as f64))
}

/// Macro mAP of a score matrix against binary labels, per class over the
/// sample axis.
pub fn map_score<T: Real>(preds: &Matrix<T>, gt: &LabelMatrix) -> Result<ApResult<T>> {
    if preds.rows() != gt.rows() || preds.cols() != gt.cols() {
        return Err(Error::Dimension(format!(
            "predictions are {}x{}, labels are {}x{}",
            preds.rows(),
            preds.cols(),
            gt.rows(),
            gt.cols()
        )));
    }
    let mut columns: Vec<(Vec<T>, Vec<bool>)> = vec![(vec![], vec![]); preds.cols()];
    for r in 0..preds.rows() {
        for (c, col) in columns.iter_mut().enumerate() {
            col.0.push(preds.get(r, c));
            col.1.push(gt.get(r, c));
        }
    }
    per_class_map(columns)
}

/// mAP over a restricted entry set: only unobserved `(row, class)` cells
/// count, with `scores[b]` aligned to dataset row `rows[b]`. Shared by the
/// pseudo-label quality metric and by masked evaluation of model
/// predictions.
pub fn restricted_map_score<T: Real>(
    scores: &Matrix<T>,
    rows: &[usize],
    mask: &ObservationMask,
    gt: &LabelMatrix,
) -> Result<ApResult<T>> {
    if scores.rows() != rows.len() {
        return Err(Error::Dimension(format!(
            "{} score rows for {} dataset rows",
            scores.rows(),
            rows.len()
        )));
    }
    if scores.cols() != gt.cols() || mask.cols() != gt.cols() {
        return Err(Error::Dimension(
            "scores, mask, and labels disagree on the class count".into(),
        ));
    }
    let mut columns: Vec<(Vec<T>, Vec<bool>)> = vec![(vec![], vec![]); scores.cols()];
    let mut any = false;
    for (b, &r) in rows.iter().enumerate() {
        for (c, col) in columns.iter_mut().enumerate() {
            if mask.get(r, c) == Observation::Unobserved {
                col.0.push(scores.get(b, c));
                col.1.push(gt.get(r, c));
                any = true;
            }
        }
    }
    if !any {
        return Err(Error::Argument(
            "no unobserved entries to score".into(),
        ));
    }
    per_class_map(columns)
}

/// Quality of the soft pseudo labels against ground truth, restricted to the
/// unobserved entries (observed entries equal the ground truth by
/// construction and are excluded).
pub fn pseudo_label_quality<T: Real>(
    store: &PseudoLabelStore<T>,
    gt: &LabelMatrix,
    mask: &ObservationMask,
) -> Result<ApResult<T>> {
    restricted_map_score(&store.mapped_matrix(), store.ids(), mask, gt)
}

fn per_class_map<T: Real>(columns: Vec<(Vec<T>, Vec<bool>)>) -> Result<ApResult<T>> {
    let mut per_class_ap = Vec::with_capacity(columns.len());
    let mut sum = T::zero();
    let mut kept = 0usize;
    for (scores, labels) in &columns {
        if labels.iter().any(|&g| g) {
            let ap = average_precision(scores, labels)?;
            per_class_ap.push(Some(ap));
            sum += ap;
            kept += 1;
        } else {
            per_class_ap.push(None);
        }
    }
    if kept == 0 {
        return Err(Error::Argument(
            "every class is positive-free; mAP is undefined".into(),
        ));
    }
    Ok(ApResult {
        map: sum / real::<T>(kept as f64),
        excluded_classes: per_class_ap.len() - kept,
        per_class_ap,
    })
}

/// Column order of the trace CSV.
pub const TRACE_COLUMNS: [&str; 9] = [
    "epoch",
    "loss_total",
    "loss_obs",
    "loss_unobs",
    "pseudo_confidence_mean",
    "pseudo_delta_norm",
    "theta_delta_norm",
    "map_test",
    "pseudo_map",
];

fn fmt_sig9(v: f64) -> String {
    format!("{v:.8e}")
}

/// Writes one CSV row per epoch in [`TRACE_COLUMNS`] order, values at 9
/// significant digits. A missing `pseudo_map` (baseline runs) leaves the
/// field empty.
pub fn export_traces<T: Real>(traces: &[TraceRecord<T>], path: &Path) -> Result<()> {
    if traces.is_empty() {
        return Err(Error::Argument("no trace records to export".into()));
    }
    let mut out = TRACE_COLUMNS.join(",");
    out.push('\n');
    for t in traces {
        let f = |v: T| fmt_sig9(v.to_f64().unwrap_or(f64::NAN));
        let pseudo_map = t
            .pseudo_map
            .map(|v| fmt_sig9(v.to_f64().unwrap_or(f64::NAN)))
            .unwrap_or_default();
        writeln!(
            out,
            "{},{},{},{},{},{},{},{},{}",
            t.epoch,
            f(t.loss_total),
            f(t.loss_obs),
            f(t.loss_unobs),
            f(t.pseudo_confidence_mean),
            f(t.pseudo_delta_norm),
            f(t.theta_delta_norm),
            f(t.map_test),
            pseudo_map,
        )
        .expect("string write");
    }
    fs::write(path, out)?;
    Ok(())
}

/// Parses a file written by [`export_traces`].
pub fn read_traces<T: Real>(path: &Path) -> Result<Vec<TraceRecord<T>>> {
    let text = fs::read_to_string(path)?;
    let name = path.display().to_string();
    let perr = |line: usize, msg: String| Error::Parse {
        path: name.clone(),
        line,
        msg,
    };
    let mut lines = text.lines().enumerate();
    match lines.next() {
        Some((_, header)) if header == TRACE_COLUMNS.join(",") => {}
        _ => return Err(perr(1, "unexpected trace header".into())),
    }
    let mut traces = Vec::new();
    for (idx, line) in lines {
        if line.trim().is_empty() {
            continue;
        }
        let lineno = idx + 1;
        let cells: Vec<&str> = line.split(',').collect();
        if cells.len() != TRACE_COLUMNS.len() {
            return Err(perr(
                lineno,
                format!("expected {} columns, found {}", TRACE_COLUMNS.len(), cells.len()),
            ));
        }
        let num = |s: &str| -> Result<T> {
            s.parse::<f64>()
                .map(real::<T>)
                .map_err(|_| perr(lineno, format!("bad numeric value '{s}'")))
        };
        traces.push(TraceRecord {
            epoch: cells[0]
                .parse()
                .map_err(|_| perr(lineno, format!("bad epoch '{}'", cells[0])))?,
            loss_total: num(cells[1])?,
            loss_obs: num(cells[2])?,
            loss_unobs: num(cells[3])?,
            pseudo_confidence_mean: num(cells[4])?,
            pseudo_delta_norm: num(cells[5])?,
            theta_delta_norm: num(cells[6])?,
            map_test: num(cells[7])?,
            pseudo_map: if cells[8].is_empty() {
                None
            } else {
                Some(num(cells[8])?)
            },
        });
    }
    Ok(traces)
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::Rng;

    // deliberately literal precision/recall-table implementation used as the
    // independent check on `average_precision`
    pub(crate) fn brute_force_ap(scores: &[f64], gt: &[bool]) -> f64 {
        let n = scores.len();
        let mut ranked: Vec<(f64, usize, bool)> = (0..n).map(|i| (scores[i], i, gt[i])).collect();
        ranked.sort_by(|a, b| {
            b.0.partial_cmp(&a.0)
                .unwrap_or(std::cmp::Ordering::Equal)
                .then(a.1.cmp(&b.1))
        });
        let mut table: Vec<(usize, usize, bool)> = Vec::new(); // (tp, considered, is_hit)
        let mut tp = 0;
        for (k, &(_, _, hit)) in ranked.iter().enumerate() {
            if hit {
                tp += 1;
            }
            table.push((tp, k + 1, hit));
        }
        let total_pos = gt.iter().filter(|&&g| g).count();
        let mut ap = 0.0;
        for &(tp, considered, hit) in &table {
            if hit {
                ap += tp as f64 / considered as f64;
            }
        }
        ap / total_pos as f64
    }

    #[test]
    fn ap_known_values() {
        // all positives ranked above all negatives
        assert_eq!(
            average_precision(&[0.9, 0.8, 0.1], &[true, true, false]).unwrap(),
            1.0
        );
        // single positive at rank 2 of 3
        assert_eq!(
            average_precision(&[0.9, 0.8, 0.7], &[false, true, false]).unwrap(),
            0.5
        );
        // single positive ranked last of n
        for n in [2usize, 5, 9] {
            let scores: Vec<f64> = (0..n).map(|i| 1.0 - i as f64 / n as f64).collect();
            let mut gt = vec![false; n];
            gt[n - 1] = true;
            assert_eq!(
                average_precision(&scores, &gt).unwrap(),
                1.0 / n as f64
            );
        }
    }

    #[test]
    fn ap_requires_positives_and_matching_lengths() {
        assert!(average_precision(&[0.5, 0.4], &[false, false]).is_err());
        assert!(average_precision(&[0.5], &[true, false]).is_err());
    }

    #[test]
    fn ap_is_invariant_to_monotone_transforms() {
        let scores = [0.1_f64, 0.7, 0.3, 0.9, 0.5];
        let gt = [false, true, false, true, true];
        let base = average_precision(&scores, &gt).unwrap();
        let squashed: Vec<f64> = scores.iter().map(|&s| 1.0 / (1.0 + (-5.0 * s).exp())).collect();
        assert!((average_precision(&squashed, &gt).unwrap() - base).abs() < 1e-15);
        let scaled: Vec<f64> = scores.iter().map(|&s| 3.0 * s + 10.0).collect();
        assert!((average_precision(&scaled, &gt).unwrap() - base).abs() < 1e-15);
    }

    #[test]
    fn ap_matches_the_brute_force_table() {
        let mut rng = crate::rng::stream(3, 31);
        for trial in 0..100 {
            let n = rng.gen_range(2..=20);
            let mut scores = Vec::with_capacity(n);
            let mut gt = Vec::with_capacity(n);
            for _ in 0..n {
                // quantized scores so ties actually happen
                scores.push((rng.gen_range(0..6) as f64) / 5.0);
                gt.push(rng.gen::<f64>() < 0.4);
            }
            if !gt.iter().any(|&g| g) {
                gt[0] = true;
            }
            let fast = average_precision(&scores, &gt).unwrap();
            let brute = brute_force_ap(&scores, &gt);
            assert_eq!(fast, brute, "trial {trial}: scores {scores:?} gt {gt:?}");
        }
    }

    // Exact E[AP] under a uniformly random ranking of P positives among n
    // items: E[AP] = (1/P) sum_{k,r} (k/r) P(R_k = r) with the order
    // statistics R_k hypergeometric, P(R_k = r) = C(r-1,k-1)C(n-r,P-k)/C(n,P).
    fn expected_ap_random(n: usize, p: usize) -> f64 {
        // Pascal's triangle in f64; C(100, 50) ~ 1e29 is far from overflow
        let mut binom = vec![vec![0.0f64; n + 1]; n + 1];
        for i in 0..=n {
            binom[i][0] = 1.0;
            for j in 1..=i {
                binom[i][j] = if j == i {
                    1.0
                } else {
                    binom[i - 1][j - 1] + binom[i - 1][j]
                };
            }
        }
        let total = binom[n][p];
        let mut e = 0.0;
        for k in 1..=p {
            for r in k..=(n - (p - k)) {
                let ways = binom[r - 1][k - 1] * binom[n - r][p - k];
                e += (k as f64 / r as f64) * ways / total;
            }
        }
        e / p as f64
    }

    #[test]
    fn shuffled_scores_have_prevalence_expectation() {
        // AP of random scores concentrates near the positive prevalence;
        // the exact finite-sample expectation carries a small upward bias
        // which the combinatorial oracle pins down
        let n = 100;
        let positives = 20;
        let exact = expected_ap_random(n, positives);
        let prevalence = positives as f64 / n as f64;
        assert!((exact - prevalence).abs() < 0.05, "exact {exact}");

        let mut rng = crate::rng::stream(9, 91);
        let gt: Vec<bool> = (0..n).map(|i| i % 5 == 0).collect(); // prevalence 0.2
        let trials = 10_000;
        let mut sum = 0.0;
        let mut sum_sq = 0.0;
        for _ in 0..trials {
            let scores: Vec<f64> = (0..n).map(|_| rng.gen::<f64>()).collect();
            let ap = average_precision(&scores, &gt).unwrap();
            sum += ap;
            sum_sq += ap * ap;
        }
        let mean = sum / trials as f64;
        let var = (sum_sq / trials as f64 - mean * mean).max(0.0);
        let sigma_mean = (var / trials as f64).sqrt();
        assert!(
            (mean - exact).abs() <= 3.0 * sigma_mean,
            "mean {mean}, exact {exact}, 3 sigma {:.2e}",
            3.0 * sigma_mean
        );
    }

    #[test]
    fn map_score_known_cases() {
        let gt = LabelMatrix::from_vec(3, 2, vec![true, false, false, true, true, false]).unwrap();
        // scores equal to the labels rank every positive first
        let mut preds = Matrix::zeros(3, 2);
        for r in 0..3 {
            for c in 0..2 {
                preds.set(r, c, if gt.get(r, c) { 1.0 } else { 0.0 });
            }
        }
        let res = map_score(&preds, &gt).unwrap();
        assert_eq!(res.map, 1.0);
        assert_eq!(res.excluded_classes, 0);

        // inverted scores produce the closed-form worst-rank AP
        let mut inv = Matrix::zeros(3, 2);
        for r in 0..3 {
            for c in 0..2 {
                inv.set(r, c, 1.0 - preds.get(r, c));
            }
        }
        let res = map_score(&inv, &gt).unwrap();
        // class 0: positives [r0, r2] fall to ranks 2,3 -> (1/2 + 2/3)/2
        let want_c0 = (0.5_f64 + 2.0 / 3.0) / 2.0;
        // class 1: positive [r1] falls to rank 3 -> 1/3
        let want_c1 = 1.0_f64 / 3.0;
        assert!((res.per_class_ap[0].unwrap() - want_c0).abs() < 1e-15);
        assert!((res.per_class_ap[1].unwrap() - want_c1).abs() < 1e-15);

        // permuting samples with distinct scores changes nothing
        let mut distinct = Matrix::zeros(3, 2);
        let vals = [0.9, 0.2, 0.5, 0.8, 0.7, 0.1];
        for (i, &v) in vals.iter().enumerate() {
            distinct.set(i / 2, i % 2, v);
        }
        let base = map_score(&distinct, &gt).unwrap();
        let perm = [2usize, 0, 1];
        let permuted = distinct.gather_rows(&perm);
        let gt_perm = LabelMatrix::from_vec(
            3,
            2,
            perm.iter()
                .flat_map(|&r| [gt.get(r, 0), gt.get(r, 1)])
                .collect(),
        )
        .unwrap();
        let res = map_score(&permuted, &gt_perm).unwrap();
        assert_eq!(res.map, base.map);
    }

    #[test]
    fn positive_free_classes_are_excluded_and_reported() {
        let gt = LabelMatrix::from_vec(2, 3, vec![true, false, false, true, false, false]).unwrap();
        let preds = Matrix::from_vec(2, 3, vec![0.9, 0.4, 0.3, 0.8, 0.2, 0.6]).unwrap();
        let res = map_score(&preds, &gt).unwrap();
        assert_eq!(res.excluded_classes, 2);
        assert!(res.per_class_ap[1].is_none());
        assert!(res.per_class_ap[2].is_none());

        let all_neg = LabelMatrix::new(2, 3);
        assert!(map_score(&preds, &all_neg).is_err());
    }

    #[test]
    fn pseudo_quality_cases() {
        use crate::data::ObservationMask;
        use crate::numerics::MappingSpec;

        let spec = MappingSpec::gaussian_cdf(0.3).unwrap();
        let gt = LabelMatrix::from_vec(2, 2, vec![true, false, false, true]).unwrap();
        let mut mask = ObservationMask::all_unobserved(2, 2);
        mask.set(0, 0, Observation::Positive);
        let store = PseudoLabelStore::init(&mask, &[0, 1], &spec);

        // uninformative store: every unobserved entry sits at 0.5; the
        // brute-force oracle on constant scores fixes the expectation
        let res = pseudo_label_quality(&store, &gt, &mask).unwrap();
        let want_c0 = brute_force_ap(&[0.5], &[false]); // class 0 has no unobserved positive
        assert!(want_c0.is_nan() || want_c0 == 0.0 || res.per_class_ap[0].is_none());
        let want_c1 = brute_force_ap(&[0.5, 0.5], &[false, true]);
        assert_eq!(res.per_class_ap[1].unwrap(), want_c1);

        // perfect pseudo labels reach mAP 1 on the scorable classes
        let mut mask2 = ObservationMask::all_unobserved(2, 2);
        mask2.set(0, 1, Observation::Negative);
        let mut store2 = PseudoLabelStore::init(&mask2, &[0, 1], &spec);
        let preds = Matrix::from_vec(2, 2, vec![1.0, 0.0, 0.0, 1.0]).unwrap();
        let lam = crate::pseudo::LambdaSchedule::constant(0.5).unwrap();
        store2.update(&preds, &lam, &spec, 0.1, 600).unwrap();
        let res = pseudo_label_quality(&store2, &gt, &mask2).unwrap();
        assert_eq!(res.map, 1.0);

        // frozen-only store: nothing to score
        let full = ObservationMask::fully_observed(&gt);
        let frozen = PseudoLabelStore::init(&full, &[0, 1], &spec);
        assert!(pseudo_label_quality(&frozen, &gt, &full).is_err());
    }

    #[test]
    fn traces_round_trip_through_csv() {
        let traces: Vec<TraceRecord<f64>> = vec![
            TraceRecord {
                epoch: 0,
                loss_total: 5.432_109_876,
                loss_obs: 3.2,
                loss_unobs: 2.232_109_876,
                pseudo_confidence_mean: 0.123_456_789_12,
                pseudo_delta_norm: 0.004_2,
                theta_delta_norm: 1.25e-3,
                map_test: 0.876_543_219,
                pseudo_map: Some(0.65),
            },
            TraceRecord {
                epoch: 1,
                loss_total: 4.0,
                loss_obs: 2.0,
                loss_unobs: 2.0,
                pseudo_confidence_mean: 0.2,
                pseudo_delta_norm: 0.001,
                theta_delta_norm: 9.0e-4,
                map_test: 0.9,
                pseudo_map: None,
            },
        ];
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("trace.csv");
        export_traces(&traces, &path).unwrap();

        let text = fs::read_to_string(&path).unwrap();
        let mut lines = text.lines();
        assert_eq!(lines.next().unwrap(), TRACE_COLUMNS.join(","));
        assert_eq!(text.lines().count(), 3);

        let back = read_traces::<f64>(&path).unwrap();
        assert_eq!(back.len(), 2);
        for (a, b) in traces.iter().zip(&back) {
            assert_eq!(a.epoch, b.epoch);
            for (x, y) in [
                (a.loss_total, b.loss_total),
                (a.loss_obs, b.loss_obs),
                (a.loss_unobs, b.loss_unobs),
                (a.pseudo_confidence_mean, b.pseudo_confidence_mean),
                (a.pseudo_delta_norm, b.pseudo_delta_norm),
                (a.theta_delta_norm, b.theta_delta_norm),
                (a.map_test, b.map_test),
            ] {
                // 9 significant digits recover small metrics to 1e-9 and
                // larger ones to the same relative precision
                assert!((x - y).abs() <= 1e-9_f64.max(5e-9 * x.abs()), "{x} vs {y}");
            }
        }
        assert_eq!(back[0].pseudo_map, Some(0.65));
        assert_eq!(back[1].pseudo_map, None);

        // single epoch gives a two-line file
        let one = vec![traces[0].clone()];
        export_traces(&one, &path).unwrap();
        assert_eq!(fs::read_to_string(&path).unwrap().lines().count(), 2);

        assert!(export_traces::<f64>(&[], &path).is_err());
    }
}
