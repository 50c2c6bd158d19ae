//! Synthetic multi-label datasets, partial-label masking, and dataset files.

use std::fmt::Write as _;
use std::fs;
use std::path::{Path, PathBuf};

use rand::Rng;
use rand_chacha::ChaCha8Rng;

use crate::matrix::{LabelMatrix, Matrix};
use crate::{real, rng, Error, Real, Result};

/// State of one (image, class) annotation cell.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Observation {
    /// The class is annotated present.
    Positive,
    /// The class is annotated absent.
    Negative,
    /// No annotation; the entry is handled by the pseudo-label player.
    Unobserved,
}

/// Per-entry annotation state for a whole dataset.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct ObservationMask {
    rows: usize,
    cols: usize,
    data: Vec<Observation>,
}

impl ObservationMask {
    pub fn all_unobserved(rows: usize, cols: usize) -> Self {
        Self {
            rows,
            cols,
            data: vec![Observation::Unobserved; rows * cols],
        }
    }

    /// Mask that observes every entry of the given ground truth.
    pub fn fully_observed(gt: &LabelMatrix) -> Self {
        let mut mask = Self::all_unobserved(gt.rows(), gt.cols());
        for r in 0..gt.rows() {
            for c in 0..gt.cols() {
                let o = if gt.get(r, c) {
                    Observation::Positive
                } else {
                    Observation::Negative
                };
                mask.set(r, c, o);
            }
        }
        mask
    }

    pub fn rows(&self) -> usize {
        self.rows
    }

    pub fn cols(&self) -> usize {
        self.cols
    }

    #[inline]
    pub fn get(&self, r: usize, c: usize) -> Observation {
        self.data[r * self.cols + c]
    }

    #[inline]
    pub fn set(&mut self, r: usize, c: usize, o: Observation) {
        self.data[r * self.cols + c] = o;
    }

    #[inline]
    pub fn row(&self, r: usize) -> &[Observation] {
        &self.data[r * self.cols..(r + 1) * self.cols]
    }

    pub fn count(&self, o: Observation) -> usize {
        self.data.iter().filter(|&&x| x == o).count()
    }
}

/// Which side of the train/test divide a sample sits on.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Split {
    Train,
    Test,
}

/// Feature vectors, held-out ground truth, and the annotation mask.
///
/// Ground truth is never seen by training; it exists so maskers can derive
/// observations from it and so evaluation can score against it.
#[derive(Debug, Clone, PartialEq)]
pub struct PartialDataset<T> {
    pub features: Matrix<T>,
    pub ground_truth: LabelMatrix,
    pub mask: ObservationMask,
    pub split: Vec<Split>,
}

impl<T: Real> PartialDataset<T> {
    pub fn num_samples(&self) -> usize {
        self.features.rows()
    }

    pub fn input_dim(&self) -> usize {
        self.features.cols()
    }

    pub fn num_classes(&self) -> usize {
        self.ground_truth.cols()
    }

    pub fn train_rows(&self) -> Vec<usize> {
        self.rows_of(Split::Train)
    }

    pub fn test_rows(&self) -> Vec<usize> {
        self.rows_of(Split::Test)
    }

    fn rows_of(&self, which: Split) -> Vec<usize> {
        self.split
            .iter()
            .enumerate()
            .filter(|(_, &s)| s == which)
            .map(|(i, _)| i)
            .collect()
    }

    /// Checks the structural invariants: consistent shapes and no observed
    /// positive sitting on a ground-truth zero.
    pub fn validate(&self) -> Result<()> {
        let n = self.num_samples();
        if self.ground_truth.rows() != n || self.mask.rows() != n || self.split.len() != n {
            return Err(Error::Dimension(format!(
                "inconsistent sample counts: features {n}, labels {}, mask {}, split {}",
                self.ground_truth.rows(),
                self.mask.rows(),
                self.split.len()
            )));
        }
        if self.mask.cols() != self.num_classes() {
            return Err(Error::Dimension(format!(
                "mask has {} classes, labels have {}",
                self.mask.cols(),
                self.num_classes()
            )));
        }
        for r in 0..n {
            for c in 0..self.num_classes() {
                if self.mask.get(r, c) == Observation::Positive && !self.ground_truth.get(r, c) {
                    return Err(Error::Argument(format!(
                        "observed positive at image {r}, class {c} contradicts ground truth"
                    )));
                }
            }
        }
        Ok(())
    }
}

/// Knobs for the synthetic generator.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SyntheticSpec {
    pub num_classes: usize,
    pub input_dim: usize,
    pub train_samples: usize,
    pub test_samples: usize,
    /// L2 norm of each class prototype vector.
    pub separation: f64,
    /// Standard deviation of the additive feature noise.
    pub noise: f64,
    /// Target mean number of positive classes per image, in `[1, L]`.
    pub mean_positives: f64,
}

impl SyntheticSpec {
    pub fn validate(&self) -> Result<()> {
        if self.num_classes == 0
            || self.input_dim == 0
            || self.train_samples == 0
            || self.test_samples == 0
        {
            return Err(Error::Argument("all counts must be >= 1".into()));
        }
        if !(0.0..0.5).contains(&self.noise) {
            return Err(Error::Argument(format!(
                "noise must be in [0, 0.5), got {}",
                self.noise
            )));
        }
        if !self.separation.is_finite() || self.separation <= 0.0 {
            return Err(Error::Argument("separation must be positive".into()));
        }
        if self.mean_positives < 1.0 || self.mean_positives > self.num_classes as f64 {
            return Err(Error::Argument(format!(
                "mean_positives must be in [1, {}], got {}",
                self.num_classes, self.mean_positives
            )));
        }
        Ok(())
    }
}

// Per-class activation probability p such that the expected positives per
// image, including the forced fallback class when no Bernoulli fires, equals
// the requested mean: L*p + (1-p)^L = mean. Monotone in p, so bisection.
fn activation_rate(num_classes: usize, mean_positives: f64) -> f64 {
    let l = num_classes as f64;
    if mean_positives >= l {
        return 1.0;
    }
    let f = |p: f64| l * p + (1.0 - p).powi(num_classes as i32) - mean_positives;
    let (mut lo, mut hi) = (0.0, 1.0);
    for _ in 0..80 {
        let mid = 0.5 * (lo + hi);
        if f(mid) < 0.0 {
            lo = mid;
        } else {
            hi = mid;
        }
    }
    0.5 * (lo + hi)
}

/// Generates a fully-observed synthetic dataset: each sample activates a
/// random class subset and its features are the noisy sum of the active
/// class prototypes. Deterministic per seed.
pub fn gen_synthetic<T: Real>(spec: &SyntheticSpec, seed: u64) -> Result<PartialDataset<T>> {
    spec.validate()?;
    let (l, d) = (spec.num_classes, spec.input_dim);
    let n = spec.train_samples + spec.test_samples;
    let mut rng = rng::stream(seed, rng::SALT_GEN);

    let mut prototypes = vec![vec![0.0f64; d]; l];
    for proto in prototypes.iter_mut() {
        for v in proto.iter_mut() {
            *v = rng::standard_normal(&mut rng);
        }
        let norm = proto.iter().map(|v| v * v).sum::<f64>().sqrt().max(1e-12);
        for v in proto.iter_mut() {
            *v *= spec.separation / norm;
        }
    }

    let p_active = activation_rate(l, spec.mean_positives);
    let mut features = Matrix::zeros(n, d);
    let mut ground_truth = LabelMatrix::new(n, l);

    for i in 0..n {
        let mut active = vec![false; l];
        for flag in active.iter_mut() {
            *flag = rng.gen::<f64>() < p_active;
        }
        if !active.iter().any(|&a| a) {
            active[rng.gen_range(0..l)] = true;
        }
        for dim in 0..d {
            let mut v = 0.0;
            for (proto, &is_active) in prototypes.iter().zip(&active) {
                if is_active {
                    v += proto[dim];
                }
            }
            v += spec.noise * rng::standard_normal(&mut rng);
            features.set(i, dim, real(v));
        }
        for (c, &is_active) in active.iter().enumerate() {
            ground_truth.set(i, c, is_active);
        }
    }

    let mask = ObservationMask::fully_observed(&ground_truth);
    let mut split = vec![Split::Train; spec.train_samples];
    split.extend(vec![Split::Test; spec.test_samples]);

    Ok(PartialDataset {
        features,
        ground_truth,
        mask,
        split,
    })
}

// Single-positive assignment over the given train rows (ascending), then a
// coverage-repair pass: classes observed nowhere get one of their positive
// images reassigned, walking class indices in order and preferring donors
// whose current class keeps another observer.
fn assign_single_positives<T: Real>(
    ds: &PartialDataset<T>,
    rows: &[usize],
    rng: &mut ChaCha8Rng,
) -> Result<ObservationMask> {
    let l = ds.num_classes();
    let mut mask = ds.mask.clone();
    let mut chosen = vec![0usize; ds.num_samples()];

    for &r in rows {
        let positives: Vec<usize> = (0..l).filter(|&c| ds.ground_truth.get(r, c)).collect();
        if positives.is_empty() {
            return Err(Error::Argument(format!(
                "image {r} has no positive label to observe"
            )));
        }
        let pick = positives[rng.gen_range(0..positives.len())];
        for c in 0..l {
            mask.set(r, c, Observation::Unobserved);
        }
        mask.set(r, pick, Observation::Positive);
        chosen[r] = pick;
    }

    let mut observers = vec![0usize; l];
    for &r in rows {
        observers[chosen[r]] += 1;
    }

    for _pass in 0..l {
        let mut moved = false;
        for c in 0..l {
            if observers[c] > 0 {
                continue;
            }
            let candidates: Vec<usize> = rows
                .iter()
                .copied()
                .filter(|&r| ds.ground_truth.get(r, c))
                .collect();
            if candidates.is_empty() {
                continue; // class absent from these rows; nothing to repair
            }
            let donor = candidates
                .iter()
                .copied()
                .find(|&r| observers[chosen[r]] > 1)
                .unwrap_or(candidates[0]);
            observers[chosen[donor]] -= 1;
            mask.set(donor, chosen[donor], Observation::Unobserved);
            mask.set(donor, c, Observation::Positive);
            chosen[donor] = c;
            observers[c] += 1;
            moved = true;
        }
        if !moved {
            break;
        }
    }

    Ok(mask)
}

/// Full-set single-positive masking: every train image keeps exactly one
/// uniformly chosen positive observation, everything else becomes
/// unobserved, and every class retains at least one observer. Test rows are
/// left untouched.
pub fn mask_fspl<T: Real>(ds: &PartialDataset<T>, seed: u64) -> Result<PartialDataset<T>> {
    ds.validate()?;
    let rows = ds.train_rows();
    let l = ds.num_classes();
    for c in 0..l {
        if !rows.iter().any(|&r| ds.ground_truth.get(r, c)) {
            return Err(Error::Argument(format!(
                "class {c} has no positive training image, coverage is impossible"
            )));
        }
    }
    let mut rng = rng::stream(seed, rng::SALT_MASK);
    let mask = assign_single_positives(ds, &rows, &mut rng)?;
    for c in 0..l {
        if !rows.iter().any(|&r| mask.get(r, c) == Observation::Positive) {
            return Err(Error::Argument(format!(
                "class {c} could not be covered by the repair pass"
            )));
        }
    }
    Ok(PartialDataset {
        features: ds.features.clone(),
        ground_truth: ds.ground_truth.clone(),
        mask,
        split: ds.split.clone(),
    })
}

/// Subset single-positive masking: `⌈p·N_train⌉` uniformly chosen train
/// images get the single-positive treatment, the rest become fully
/// unobserved. `p = 1` reproduces [`mask_fspl`] bit for bit on the same
/// seed.
pub fn mask_sspl<T: Real>(ds: &PartialDataset<T>, p: f64, seed: u64) -> Result<PartialDataset<T>> {
    if !(p > 0.0 && p <= 1.0) {
        return Err(Error::Argument(format!(
            "labeled fraction must be in (0, 1], got {p}"
        )));
    }
    ds.validate()?;
    let rows = ds.train_rows();
    let n_train = rows.len();
    // tiny slack so p*N that is an integer up to f64 rounding stays exact
    let labeled = (((p * n_train as f64) - 1e-9).ceil() as usize).clamp(1, n_train);

    let mut rng = rng::stream(seed, rng::SALT_MASK);
    let selected: Vec<usize> = if labeled == n_train {
        rows.clone() // no selection draw, so the stream matches mask_fspl
    } else {
        let mut pool = rows.clone();
        rng::shuffle(&mut pool, &mut rng);
        let mut picked: Vec<usize> = pool.into_iter().take(labeled).collect();
        picked.sort_unstable();
        picked
    };

    let mut mask = assign_single_positives(ds, &selected, &mut rng)?;
    let selected_set: std::collections::HashSet<usize> = selected.iter().copied().collect();
    for &r in &rows {
        if !selected_set.contains(&r) {
            for c in 0..ds.num_classes() {
                mask.set(r, c, Observation::Unobserved);
            }
        }
    }
    Ok(PartialDataset {
        features: ds.features.clone(),
        ground_truth: ds.ground_truth.clone(),
        mask,
        split: ds.split.clone(),
    })
}

const DATASET_FORMAT: &str = "#gamepl-v1";

/// The two files a dataset stem resolves to.
pub fn dataset_paths(stem: &Path) -> (PathBuf, PathBuf) {
    let base = stem.to_string_lossy();
    (
        PathBuf::from(format!("{base}.train.csv")),
        PathBuf::from(format!("{base}.test.csv")),
    )
}

/// Writes `<stem>.train.csv` and `<stem>.test.csv`, one file per split.
/// Each file carries a `#gamepl-v1,N,input_dim,L` header and rows of
/// `id, features.., ground truth.., mask..` with mask symbols `1`, `0`, `?`.
pub fn save_dataset<T: Real>(ds: &PartialDataset<T>, stem: &Path) -> Result<()> {
    ds.validate()?;
    let (train_path, test_path) = dataset_paths(stem);
    write_split(ds, &ds.train_rows(), &train_path)?;
    write_split(ds, &ds.test_rows(), &test_path)?;
    Ok(())
}

fn write_split<T: Real>(ds: &PartialDataset<T>, rows: &[usize], path: &Path) -> Result<()> {
    let (d, l) = (ds.input_dim(), ds.num_classes());
    let mut out = String::new();
    writeln!(out, "{DATASET_FORMAT},{},{d},{l}", rows.len()).expect("string write");
    for (id, &r) in rows.iter().enumerate() {
        write!(out, "{id}").expect("string write");
        for dim in 0..d {
            let v = ds.features.get(r, dim).to_f64().unwrap_or(f64::NAN);
            write!(out, ",{v}").expect("string write");
        }
        for c in 0..l {
            write!(out, ",{}", u8::from(ds.ground_truth.get(r, c))).expect("string write");
        }
        for c in 0..l {
            let sym = match ds.mask.get(r, c) {
                Observation::Positive => "1",
                Observation::Negative => "0",
                Observation::Unobserved => "?",
            };
            write!(out, ",{sym}").expect("string write");
        }
        out.push('\n');
    }
    fs::write(path, out)?;
    Ok(())
}

/// Loads the pair of files written by [`save_dataset`]; train rows come
/// first, test rows after.
pub fn load_dataset<T: Real>(stem: &Path) -> Result<PartialDataset<T>> {
    let (train_path, test_path) = dataset_paths(stem);
    let train = read_split::<T>(&train_path)?;
    let test = read_split::<T>(&test_path)?;
    if train.dim != test.dim || train.classes != test.classes {
        return Err(Error::Argument(format!(
            "train file is {}x{} but test file is {}x{}",
            train.dim, train.classes, test.dim, test.classes
        )));
    }

    let n = train.rows + test.rows;
    let mut features = Vec::with_capacity(n * train.dim);
    features.extend(train.features);
    features.extend(test.features);
    let mut gt = Vec::with_capacity(n * train.classes);
    gt.extend(train.gt);
    gt.extend(test.gt);
    let mut mask_data = Vec::with_capacity(n * train.classes);
    mask_data.extend(train.mask);
    mask_data.extend(test.mask);

    let mut split = vec![Split::Train; train.rows];
    split.extend(vec![Split::Test; test.rows]);

    let ds = PartialDataset {
        features: Matrix::from_vec(n, train.dim, features)?,
        ground_truth: LabelMatrix::from_vec(n, train.classes, gt)?,
        mask: ObservationMask {
            rows: n,
            cols: train.classes,
            data: mask_data,
        },
        split,
    };
    ds.validate().map_err(|e| match e {
        Error::Argument(msg) => Error::Parse {
            path: train_path.display().to_string(),
            line: 0,
            msg,
        },
        other => other,
    })?;
    Ok(ds)
}

struct RawSplit<T> {
    rows: usize,
    dim: usize,
    classes: usize,
    features: Vec<T>,
    gt: Vec<bool>,
    mask: Vec<Observation>,
}

fn read_split<T: Real>(path: &Path) -> Result<RawSplit<T>> {
    let text = fs::read_to_string(path)?;
    let name = path.display().to_string();
    let perr = |line: usize, msg: String| Error::Parse {
        path: name.clone(),
        line,
        msg,
    };

    let mut lines = text.lines().enumerate();
    let (_, header) = lines
        .next()
        .ok_or_else(|| perr(1, "empty file".to_string()))?;
    let fields: Vec<&str> = header.split(',').collect();
    if fields.len() != 4 || fields[0] != DATASET_FORMAT {
        return Err(perr(
            1,
            format!("expected header '{DATASET_FORMAT},N,input_dim,L'"),
        ));
    }
    let parse_count = |s: &str, what: &str| -> Result<usize> {
        s.parse::<usize>()
            .map_err(|_| perr(1, format!("bad {what} '{s}'")))
    };
    let rows = parse_count(fields[1], "sample count")?;
    let dim = parse_count(fields[2], "input_dim")?;
    let classes = parse_count(fields[3], "class count")?;
    if dim == 0 || classes == 0 {
        return Err(perr(1, "input_dim and L must be >= 1".to_string()));
    }

    let mut features = Vec::with_capacity(rows * dim);
    let mut gt = Vec::with_capacity(rows * classes);
    let mut mask = Vec::with_capacity(rows * classes);
    let mut seen = 0usize;

    for (idx, line) in lines {
        let lineno = idx + 1;
        if line.trim().is_empty() {
            continue;
        }
        let cells: Vec<&str> = line.split(',').collect();
        let expected = 1 + dim + classes + classes;
        if cells.len() != expected {
            return Err(perr(
                lineno,
                format!("expected {expected} columns, found {}", cells.len()),
            ));
        }
        cells[0]
            .parse::<usize>()
            .map_err(|_| perr(lineno, format!("bad image id '{}'", cells[0])))?;
        for cell in &cells[1..1 + dim] {
            let v: f64 = cell
                .parse()
                .map_err(|_| perr(lineno, format!("bad feature value '{cell}'")))?;
            features.push(real::<T>(v));
        }
        for cell in &cells[1 + dim..1 + dim + classes] {
            match *cell {
                "0" => gt.push(false),
                "1" => gt.push(true),
                other => {
                    return Err(perr(lineno, format!("bad ground-truth value '{other}'")));
                }
            }
        }
        for cell in &cells[1 + dim + classes..] {
            let o = match *cell {
                "1" => Observation::Positive,
                "0" => Observation::Negative,
                "?" => Observation::Unobserved,
                other => {
                    return Err(perr(
                        lineno,
                        format!("mask symbol must be one of 1, 0, ?, found '{other}'"),
                    ));
                }
            };
            mask.push(o);
        }
        seen += 1;
    }
    if seen != rows {
        return Err(perr(
            1,
            format!("header declares {rows} rows, file holds {seen}"),
        ));
    }
    Ok(RawSplit {
        rows,
        dim,
        classes,
        features,
        gt,
        mask,
    })
}
