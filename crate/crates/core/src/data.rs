//! Binary-classification datasets: loading, min-max scaling, stratified
//! fold assignment and label-noise injection.
//!
//! Labels are stored as `f64` values that are exactly `+1.0` or `-1.0`, so
//! they can enter the kernel algebra without conversion.

use std::fs;
use std::path::Path;

use ndarray::{Array1, Array2, Axis};
use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Feature matrix (one row per sample) with labels in {+1, -1}.
#[derive(Debug, Clone, PartialEq)]
pub struct Dataset {
    pub features: Array2<f64>,
    pub labels: Array1<f64>,
    pub name: String,
}

impl Dataset {
    /// Builds a dataset, checking label values, shape and finiteness.
    pub fn new(features: Array2<f64>, labels: Array1<f64>, name: impl Into<String>) -> Result<Self> {
        if features.nrows() != labels.len() {
            return Err(Error::Validation(format!(
                "{} feature rows but {} labels",
                features.nrows(),
                labels.len()
            )));
        }
        if let Some((i, y)) = labels.iter().enumerate().find(|(_, &y)| y != 1.0 && y != -1.0) {
            return Err(Error::Validation(format!("label {y} at row {i} is not +1 or -1")));
        }
        if let Some(((i, j), v)) = features.indexed_iter().find(|(_, v)| !v.is_finite()) {
            return Err(Error::Validation(format!("non-finite feature {v} at row {i}, column {j}")));
        }
        Ok(Self {
            features,
            labels,
            name: name.into(),
        })
    }

    pub fn len(&self) -> usize {
        self.labels.len()
    }

    pub fn is_empty(&self) -> bool {
        self.labels.is_empty()
    }

    pub fn dim(&self) -> usize {
        self.features.ncols()
    }

    /// Number of samples labelled +1 and -1.
    pub fn class_counts(&self) -> (usize, usize) {
        let pos = self.labels.iter().filter(|&&y| y > 0.0).count();
        (pos, self.len() - pos)
    }

    /// Training needs at least two samples and both classes.
    pub fn check_trainable(&self) -> Result<()> {
        if self.len() < 2 {
            return Err(Error::Validation(format!("{} samples, need at least 2", self.len())));
        }
        let (pos, neg) = self.class_counts();
        if pos == 0 || neg == 0 {
            return Err(Error::Validation("only one class present".into()));
        }
        Ok(())
    }

    /// Rows at `idx`, in that order.
    pub fn subset(&self, idx: &[usize]) -> Dataset {
        Dataset {
            features: self.features.select(Axis(0), idx),
            labels: self.labels.select(Axis(0), idx),
            name: self.name.clone(),
        }
    }

    /// Same features with every label negated.
    pub fn negated(&self) -> Dataset {
        Dataset {
            features: self.features.clone(),
            labels: self.labels.mapv(|y| -y),
            name: self.name.clone(),
        }
    }
}

/// Which CSV column holds the label.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum LabelColumn {
    #[default]
    Last,
    Index(usize),
}

fn label_value(v: f64) -> Option<f64> {
    match v {
        v if v == 1.0 => Some(1.0),
        v if v == -1.0 || v == 0.0 => Some(-1.0),
        _ => None,
    }
}

fn parse_label(raw: &str) -> Option<f64> {
    label_value(raw.trim().parse::<f64>().ok()?)
}

/// A numeric CSV table with an optional header row.
#[derive(Debug, Clone)]
pub struct CsvTable {
    pub header: Option<Vec<String>>,
    pub rows: Array2<f64>,
    /// 1-based source line of each row.
    pub line_numbers: Vec<usize>,
}

/// Reads a comma-separated numeric table. The first line is treated as a
/// header when any of its fields fails to parse as a number.
pub fn read_csv_table(path: &Path) -> Result<CsvTable> {
    let text = fs::read_to_string(path)?;
    let parse_err = |line: usize, message: String| Error::Parse {
        path: path.to_path_buf(),
        line,
        message,
    };

    let mut header = None;
    let mut values = Vec::new();
    let mut width = None;
    let mut line_numbers = Vec::new();
    for (lineno, line) in text.lines().enumerate().map(|(i, l)| (i + 1, l)) {
        if line.trim().is_empty() {
            continue;
        }
        let fields: Vec<&str> = line.split(',').map(str::trim).collect();
        let parsed: std::result::Result<Vec<f64>, _> = fields.iter().map(|f| f.parse::<f64>()).collect();
        let row = match parsed {
            Ok(row) => row,
            Err(_) if header.is_none() && width.is_none() => {
                header = Some(fields.iter().map(|s| s.to_string()).collect());
                width = Some(fields.len());
                continue;
            }
            Err(e) => {
                let bad = fields.iter().find(|f| f.parse::<f64>().is_err()).unwrap_or(&"");
                return Err(parse_err(lineno, format!("field {bad:?} is not a number ({e})")));
            }
        };
        match width {
            None => width = Some(row.len()),
            Some(w) if w != row.len() => {
                return Err(parse_err(lineno, format!("expected {w} fields, found {}", row.len())));
            }
            _ => {}
        }
        values.extend(row);
        line_numbers.push(lineno);
    }
    let nrows = line_numbers.len();
    let ncols = if nrows == 0 { 0 } else { width.unwrap_or(0) };
    let rows = Array2::from_shape_vec((nrows, ncols), values).expect("row widths checked above");
    Ok(CsvTable {
        header,
        rows,
        line_numbers,
    })
}

/// Loads a labelled CSV file. Labels may be written as +1/-1 or 1/0.
pub fn load_csv(path: &Path, label_column: LabelColumn) -> Result<Dataset> {
    let table = read_csv_table(path)?;
    let (m, width) = table.rows.dim();
    if width < 2 {
        return Err(Error::Validation(format!(
            "{}: need at least one feature column and a label column",
            path.display()
        )));
    }
    let label_col = match label_column {
        LabelColumn::Last => width - 1,
        LabelColumn::Index(j) if j < width => j,
        LabelColumn::Index(j) => {
            return Err(Error::Argument(format!("label column {j} out of range for {width} columns")))
        }
    };
    let mut labels = Array1::zeros(m);
    for (i, &raw) in table.rows.column(label_col).iter().enumerate() {
        labels[i] = label_value(raw).ok_or_else(|| Error::Parse {
            path: path.to_path_buf(),
            line: table.line_numbers[i],
            message: format!("label {raw} is not one of +1, -1, 1, 0"),
        })?;
    }
    let keep: Vec<usize> = (0..width).filter(|&j| j != label_col).collect();
    let features = table.rows.select(Axis(1), &keep);
    let ds = Dataset::new(features, labels, dataset_name(path))?;
    ds.check_trainable()?;
    Ok(ds)
}

/// Loads a file in the sparse `label idx:val ...` format with 1-based,
/// strictly increasing indices. Missing entries are zero. The result must
/// be trainable.
pub fn load_libsvm(path: &Path) -> Result<Dataset> {
    let ds = read_libsvm(path)?;
    ds.check_trainable()?;
    Ok(ds)
}

/// Parses the sparse format without requiring both classes, so that test
/// files can be scored.
pub fn read_libsvm(path: &Path) -> Result<Dataset> {
    let text = fs::read_to_string(path)?;
    let parse_err = |line: usize, message: String| Error::Parse {
        path: path.to_path_buf(),
        line,
        message,
    };

    let mut labels = Vec::new();
    let mut rows: Vec<Vec<(usize, f64)>> = Vec::new();
    let mut dim = 0;
    for (lineno, line) in text.lines().enumerate().map(|(i, l)| (i + 1, l)) {
        let line = line.split('#').next().unwrap_or("").trim();
        if line.is_empty() {
            continue;
        }
        let mut tokens = line.split_whitespace();
        let raw_label = tokens.next().expect("line is non-empty");
        let label =
            parse_label(raw_label).ok_or_else(|| parse_err(lineno, format!("bad label {raw_label:?}")))?;
        let mut entries = Vec::new();
        let mut last = 0;
        for tok in tokens {
            let (idx, val) = tok
                .split_once(':')
                .ok_or_else(|| parse_err(lineno, format!("expected idx:val, found {tok:?}")))?;
            let idx: usize = idx
                .parse()
                .map_err(|_| parse_err(lineno, format!("bad index {idx:?}")))?;
            let val: f64 = val
                .parse()
                .map_err(|_| parse_err(lineno, format!("bad value {val:?}")))?;
            if idx == 0 {
                return Err(parse_err(lineno, "indices are 1-based".into()));
            }
            if idx <= last {
                return Err(parse_err(lineno, format!("index {idx} follows {last}; indices must increase")));
            }
            last = idx;
            entries.push((idx, val));
        }
        dim = dim.max(last);
        labels.push(label);
        rows.push(entries);
    }

    let mut features = Array2::zeros((rows.len(), dim));
    for (i, entries) in rows.iter().enumerate() {
        for &(idx, val) in entries {
            features[[i, idx - 1]] = val;
        }
    }
    Dataset::new(features, Array1::from(labels), dataset_name(path))
}

fn dataset_name(path: &Path) -> String {
    path.file_stem()
        .map(|s| s.to_string_lossy().into_owned())
        .unwrap_or_default()
}

/// Per-column affine map onto [-1, 1].
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ScalingMap {
    pub min: Vec<f64>,
    pub max: Vec<f64>,
}

impl ScalingMap {
    pub fn apply_row(&self, row: &mut [f64]) {
        for ((v, &lo), &hi) in row.iter_mut().zip(&self.min).zip(&self.max) {
            *v = if hi > lo { 2.0 * (*v - lo) / (hi - lo) - 1.0 } else { 0.0 };
        }
    }

    pub fn apply_matrix(&self, x: &Array2<f64>) -> Array2<f64> {
        let mut out = x.as_standard_layout().into_owned();
        for mut row in out.rows_mut() {
            self.apply_row(row.as_slice_mut().expect("owned rows are contiguous"));
        }
        out
    }
}

pub fn fit_scaling(train: &Dataset) -> ScalingMap {
    let n = train.dim();
    let mut min = vec![f64::INFINITY; n];
    let mut max = vec![f64::NEG_INFINITY; n];
    for row in train.features.rows() {
        for (j, &v) in row.iter().enumerate() {
            min[j] = min[j].min(v);
            max[j] = max[j].max(v);
        }
    }
    ScalingMap { min, max }
}

/// Applies `s` without clamping, so out-of-sample values may leave [-1, 1].
pub fn apply_scaling(d: &Dataset, s: &ScalingMap) -> Result<Dataset> {
    if s.min.len() != d.dim() {
        return Err(Error::Argument(format!(
            "scaling map has {} columns, dataset has {}",
            s.min.len(),
            d.dim()
        )));
    }
    Ok(Dataset {
        features: s.apply_matrix(&d.features),
        labels: d.labels.clone(),
        name: d.name.clone(),
    })
}

/// Assignment of every sample to one of `fold_count` folds.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct FoldPlan {
    pub fold_count: usize,
    pub assignments: Vec<usize>,
    pub seed: u64,
}

impl FoldPlan {
    pub fn test_indices(&self, fold: usize) -> Vec<usize> {
        (0..self.assignments.len())
            .filter(|&i| self.assignments[i] == fold)
            .collect()
    }

    pub fn train_indices(&self, fold: usize) -> Vec<usize> {
        (0..self.assignments.len())
            .filter(|&i| self.assignments[i] != fold)
            .collect()
    }

    pub fn fold_sizes(&self) -> Vec<usize> {
        let mut sizes = vec![0; self.fold_count];
        for &f in &self.assignments {
            sizes[f] += 1;
        }
        sizes
    }
}

/// Stratified k-fold split. Each class is shuffled separately and dealt
/// round-robin, continuing the deal across classes, so fold sizes differ by
/// at most one and each fold's class counts are within one of proportional.
pub fn stratified_kfold(d: &Dataset, k: usize, seed: u64) -> Result<FoldPlan> {
    let m = d.len();
    if k == 0 || k > m {
        return Err(Error::Argument(format!("cannot split {m} samples into {k} folds")));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut pos: Vec<usize> = (0..m).filter(|&i| d.labels[i] > 0.0).collect();
    let mut neg: Vec<usize> = (0..m).filter(|&i| d.labels[i] < 0.0).collect();
    pos.shuffle(&mut rng);
    neg.shuffle(&mut rng);

    let mut assignments = vec![0; m];
    for (slot, &i) in pos.iter().chain(neg.iter()).enumerate() {
        assignments[i] = slot % k;
    }
    Ok(FoldPlan {
        fold_count: k,
        assignments,
        seed,
    })
}

/// Label-noise specification.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct NoiseSpec {
    pub flip_rate: f64,
    pub seed: u64,
    pub stratified: bool,
}

impl NoiseSpec {
    pub fn new(flip_rate: f64, seed: u64) -> Self {
        Self {
            flip_rate,
            seed,
            stratified: true,
        }
    }
}

/// Indices whose labels `flip_labels` negates, in ascending order.
pub fn flip_indices(d: &Dataset, spec: &NoiseSpec) -> Result<Vec<usize>> {
    if !(0.0..1.0).contains(&spec.flip_rate) {
        return Err(Error::Argument(format!("flip rate {} outside [0, 1)", spec.flip_rate)));
    }
    let m = d.len();
    let total = (spec.flip_rate * m as f64).round() as usize;
    let mut rng = ChaCha8Rng::seed_from_u64(spec.seed);
    let mut chosen = if spec.stratified {
        let mut pos: Vec<usize> = (0..m).filter(|&i| d.labels[i] > 0.0).collect();
        let mut neg: Vec<usize> = (0..m).filter(|&i| d.labels[i] < 0.0).collect();
        let pos_quota = ((total * pos.len()) as f64 / m as f64).round() as usize;
        let pos_quota = pos_quota.min(pos.len()).max(total.saturating_sub(neg.len()));
        pos.shuffle(&mut rng);
        neg.shuffle(&mut rng);
        pos.truncate(pos_quota);
        neg.truncate(total - pos_quota);
        pos.extend(neg);
        pos
    } else {
        let mut all: Vec<usize> = (0..m).collect();
        all.shuffle(&mut rng);
        all.truncate(total);
        all
    };
    chosen.sort_unstable();
    Ok(chosen)
}

/// Negates exactly `round(flip_rate * m)` labels. With `stratified` set,
/// the flipped labels are split between the classes in proportion to the
/// class rates; otherwise they are drawn uniformly.
pub fn flip_labels(d: &Dataset, spec: &NoiseSpec) -> Result<Dataset> {
    let mut out = d.clone();
    for i in flip_indices(d, spec)? {
        out.labels[i] = -out.labels[i];
    }
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;
    use ndarray::array;
    use std::io::Write;

    fn write_tmp(contents: &str) -> tempfile::NamedTempFile {
        let mut f = tempfile::NamedTempFile::new().unwrap();
        f.write_all(contents.as_bytes()).unwrap();
        f
    }

    fn toy(labels: &[f64]) -> Dataset {
        let m = labels.len();
        let features = Array2::from_shape_fn((m, 2), |(i, j)| (i * 2 + j) as f64);
        Dataset::new(features, Array1::from(labels.to_vec()), "toy").unwrap()
    }

    #[test]
    fn csv_three_rows() {
        let f = write_tmp("1,2,1\n3,4,-1\n5,6,1\n");
        let d = load_csv(f.path(), LabelColumn::Last).unwrap();
        assert_eq!(d.len(), 3);
        assert_eq!(d.labels, array![1.0, -1.0, 1.0]);
        assert_eq!(d.features.row(1).to_vec(), vec![3.0, 4.0]);
    }

    #[test]
    fn csv_zero_labels_map_to_negative() {
        let f = write_tmp("x,y,label\n1,2,0\n3,4,1\n5,6,0\n");
        let d = load_csv(f.path(), LabelColumn::Last).unwrap();
        assert_eq!(d.labels, array![-1.0, 1.0, -1.0]);
    }

    #[test]
    fn csv_label_column_index() {
        let f = write_tmp("1,0.5,2\n-1,0.25,4\n");
        let d = load_csv(f.path(), LabelColumn::Index(0)).unwrap();
        assert_eq!(d.labels, array![1.0, -1.0]);
        assert_eq!(d.features, array![[0.5, 2.0], [0.25, 4.0]]);
    }

    #[test]
    fn csv_text_in_numeric_column_reports_line() {
        let f = write_tmp("1,2,1\n3,abc,-1\n");
        match load_csv(f.path(), LabelColumn::Last) {
            Err(Error::Parse { line, .. }) => assert_eq!(line, 2),
            other => panic!("expected parse error, got {other:?}"),
        }
    }

    #[test]
    fn csv_ragged_row() {
        let f = write_tmp("1,2,1\n3,-1\n");
        assert!(matches!(load_csv(f.path(), LabelColumn::Last), Err(Error::Parse { line: 2, .. })));
    }

    #[test]
    fn csv_bad_label_value() {
        let f = write_tmp("a,b\n1,2\n3,1\n");
        assert!(matches!(load_csv(f.path(), LabelColumn::Last), Err(Error::Parse { line: 2, .. })));
    }

    #[test]
    fn csv_single_class_rejected() {
        let f = write_tmp("1,2,1\n3,4,1\n");
        assert!(matches!(load_csv(f.path(), LabelColumn::Last), Err(Error::Validation(_))));
    }

    #[test]
    fn libsvm_sparse_rows() {
        let f = write_tmp("+1 1:0.5 3:2\n-1\n");
        let d = load_libsvm(f.path()).unwrap();
        assert_eq!(d.features, array![[0.5, 0.0, 2.0], [0.0, 0.0, 0.0]]);
        assert_eq!(d.labels, array![1.0, -1.0]);
    }

    #[test]
    fn libsvm_rejects_unordered_indices() {
        let f = write_tmp("+1 1:1\n-1 2:1 1:3\n");
        assert!(matches!(load_libsvm(f.path()), Err(Error::Parse { line: 2, .. })));
    }

    #[test]
    fn libsvm_rejects_zero_index() {
        let f = write_tmp("+1 0:1\n-1 1:1\n");
        assert!(matches!(load_libsvm(f.path()), Err(Error::Parse { line: 1, .. })));
    }

    #[test]
    fn scaling_column_major_input() {
        let x = array![[0.0, 2.0], [10.0, 20.0]].t().to_owned();
        assert!(!x.is_standard_layout());
        let s = ScalingMap {
            min: vec![0.0, 10.0],
            max: vec![2.0, 20.0],
        };
        assert_eq!(s.apply_matrix(&x), array![[-1.0, -1.0], [1.0, 1.0]]);
    }

    #[test]
    fn scaling_min_max() {
        let d = Dataset::new(
            array![[0.0, 4.0], [5.0, 4.0], [10.0, 4.0]],
            array![1.0, -1.0, 1.0],
            "s",
        )
        .unwrap();
        let s = fit_scaling(&d);
        let scaled = apply_scaling(&d, &s).unwrap();
        assert_eq!(scaled.features.column(0).to_vec(), vec![-1.0, 0.0, 1.0]);
        assert_eq!(scaled.features.column(1).to_vec(), vec![0.0, 0.0, 0.0]);

        let test = Dataset::new(array![[12.0, 9.0]], array![1.0], "t").unwrap();
        let out = apply_scaling(&test, &s).unwrap();
        assert!((out.features[[0, 0]] - 1.4).abs() < 1e-15);
        assert_eq!(out.features[[0, 1]], 0.0);
    }

    #[test]
    fn kfold_balanced_pairs() {
        let d = toy(&[1.0, -1.0, 1.0, -1.0, 1.0, -1.0, 1.0, -1.0, 1.0, -1.0]);
        let plan = stratified_kfold(&d, 5, 3).unwrap();
        for f in 0..5 {
            let test = plan.test_indices(f);
            assert_eq!(test.len(), 2);
            let pos = test.iter().filter(|&&i| d.labels[i] > 0.0).count();
            assert_eq!(pos, 1);
        }
        assert_eq!(plan, stratified_kfold(&d, 5, 3).unwrap());
    }

    #[test]
    fn kfold_sizes_for_699() {
        let labels: Vec<f64> = (0..699).map(|i| if i < 241 { 1.0 } else { -1.0 }).collect();
        let d = toy(&labels);
        let plan = stratified_kfold(&d, 10, 0).unwrap();
        let mut sizes = plan.fold_sizes();
        sizes.sort_unstable();
        // 699 = 9 * 70 + 69
        assert_eq!(sizes, vec![69, 70, 70, 70, 70, 70, 70, 70, 70, 70]);
    }

    #[test]
    fn kfold_too_many_folds() {
        let d = toy(&[1.0, -1.0, 1.0]);
        assert!(matches!(stratified_kfold(&d, 4, 0), Err(Error::Argument(_))));
    }

    #[test]
    fn flip_zero_rate_is_identity() {
        let d = toy(&[1.0, -1.0, 1.0, -1.0]);
        assert_eq!(flip_labels(&d, &NoiseSpec::new(0.0, 9)).unwrap(), d);
    }

    #[test]
    fn flip_count_and_class_split() {
        let labels: Vec<f64> = (0..100).map(|i| if i < 30 { 1.0 } else { -1.0 }).collect();
        let d = toy(&labels);
        let idx = flip_indices(&d, &NoiseSpec::new(0.10, 4)).unwrap();
        assert_eq!(idx.len(), 10);
        assert_eq!(idx.iter().filter(|&&i| i < 30).count(), 3);
        let flipped = flip_labels(&d, &NoiseSpec::new(0.10, 4)).unwrap();
        assert_eq!(flipped.features, d.features);
    }

    #[test]
    fn uniform_flip_is_an_involution() {
        let labels: Vec<f64> = (0..50).map(|i| if i % 3 == 0 { 1.0 } else { -1.0 }).collect();
        let d = toy(&labels);
        let spec = NoiseSpec {
            flip_rate: 0.2,
            seed: 11,
            stratified: false,
        };
        let once = flip_labels(&d, &spec).unwrap();
        assert_ne!(once, d);
        assert_eq!(flip_labels(&once, &spec).unwrap(), d);
    }

    #[test]
    fn flip_rate_out_of_range() {
        let d = toy(&[1.0, -1.0]);
        assert!(flip_labels(&d, &NoiseSpec::new(1.0, 0)).is_err());
    }
}
