//! Dataset ingestion, encoding, standardization, splitting and the Gaussian
//! perturbation used for behavioral profiling.

use std::collections::HashMap;
use std::io::Read;
use std::path::Path;

use rand::seq::{index, SliceRandom};
use rand_distr::{Distribution, Normal};

use crate::error::{Error, Result};
use crate::matrix::Matrix;
use crate::rng;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ColumnKind {
    Numeric,
    Nominal,
}

#[derive(Debug, Clone, PartialEq)]
pub struct ColumnSpec {
    pub name: String,
    pub kind: ColumnKind,
}

/// Parsed CSV: feature columns with inferred kinds, plus the label column
/// kept apart as raw strings.
#[derive(Debug, Clone, PartialEq)]
pub struct RawTable {
    pub columns: Vec<ColumnSpec>,
    pub rows: Vec<Vec<String>>,
    pub labels: Vec<String>,
    pub label_column: String,
}

impl RawTable {
    pub fn nrows(&self) -> usize {
        self.rows.len()
    }
}

fn is_missing(v: &str) -> bool {
    v.is_empty() || v == "?" || v.eq_ignore_ascii_case("nan")
}

pub fn load_csv(path: impl AsRef<Path>, label_column: &str) -> Result<RawTable> {
    let path = path.as_ref();
    if !path.exists() {
        return Err(Error::MissingFile(path.to_path_buf()));
    }
    let file = std::fs::File::open(path).map_err(|e| Error::io(path, e))?;
    read_csv(file, label_column)
}

/// Same as [`load_csv`] over any reader.
pub fn read_csv<R: Read>(reader: R, label_column: &str) -> Result<RawTable> {
    let mut rdr = csv::ReaderBuilder::new()
        .has_headers(true)
        .flexible(true)
        .trim(csv::Trim::All)
        .from_reader(reader);

    let header: Vec<String> = rdr
        .headers()
        .map_err(|e| Error::Csv(e.to_string()))?
        .iter()
        .map(str::to_owned)
        .collect();
    if header.is_empty() || (header.len() == 1 && header[0].is_empty()) {
        return Err(Error::EmptyTable);
    }
    let label_pos = header
        .iter()
        .position(|h| h == label_column)
        .ok_or_else(|| Error::MissingLabelColumn(label_column.to_owned()))?;

    let mut rows = Vec::new();
    let mut labels = Vec::new();
    for (k, rec) in rdr.records().enumerate() {
        let rec = rec.map_err(|e| Error::Csv(e.to_string()))?;
        let line = k + 2;
        if rec.len() != header.len() {
            return Err(Error::RaggedRow {
                line,
                expected: header.len(),
                found: rec.len(),
            });
        }
        let mut feats = Vec::with_capacity(header.len() - 1);
        for (j, v) in rec.iter().enumerate() {
            if is_missing(v) {
                return Err(Error::MissingValue {
                    column: header[j].clone(),
                    line,
                });
            }
            if j == label_pos {
                labels.push(v.to_owned());
            } else {
                feats.push(v.to_owned());
            }
        }
        rows.push(feats);
    }
    if rows.is_empty() {
        return Err(Error::EmptyTable);
    }

    let distinct = first_appearance(&labels).len();
    if distinct < 2 {
        return Err(Error::DegenerateLabels(distinct));
    }

    let columns = header
        .iter()
        .enumerate()
        .filter(|&(j, _)| j != label_pos)
        .enumerate()
        .map(|(fj, (_, name))| {
            let numeric = rows.iter().all(|r| r[fj].parse::<f64>().is_ok_and(f64::is_finite));
            ColumnSpec {
                name: name.clone(),
                kind: if numeric {
                    ColumnKind::Numeric
                } else {
                    ColumnKind::Nominal
                },
            }
        })
        .collect();

    Ok(RawTable {
        columns,
        rows,
        labels,
        label_column: label_column.to_owned(),
    })
}

fn first_appearance(values: &[String]) -> Vec<String> {
    let mut seen = HashMap::new();
    let mut order = Vec::new();
    for v in values {
        if !seen.contains_key(v) {
            seen.insert(v.clone(), order.len());
            order.push(v.clone());
        }
    }
    order
}

#[derive(Debug, Clone, PartialEq)]
pub enum ColumnEncoding {
    Numeric,
    /// Categories in first-appearance order; one output column each.
    Nominal(Vec<String>),
}

impl ColumnEncoding {
    fn width(&self) -> usize {
        match self {
            ColumnEncoding::Numeric => 1,
            ColumnEncoding::Nominal(cats) => cats.len(),
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct EncodingSpec {
    pub columns: Vec<ColumnEncoding>,
    pub classes: Vec<String>,
}

impl EncodingSpec {
    pub fn fit(table: &RawTable) -> Self {
        let columns = table
            .columns
            .iter()
            .enumerate()
            .map(|(j, c)| match c.kind {
                ColumnKind::Numeric => ColumnEncoding::Numeric,
                ColumnKind::Nominal => {
                    let vals: Vec<String> = table.rows.iter().map(|r| r[j].clone()).collect();
                    ColumnEncoding::Nominal(first_appearance(&vals))
                }
            })
            .collect();
        EncodingSpec {
            columns,
            classes: first_appearance(&table.labels),
        }
    }

    pub fn output_width(&self) -> usize {
        self.columns.iter().map(ColumnEncoding::width).sum()
    }

    /// Output-column mask: `true` for columns that came from numeric inputs.
    pub fn numeric_mask(&self) -> Vec<bool> {
        self.columns
            .iter()
            .flat_map(|c| {
                let numeric = matches!(c, ColumnEncoding::Numeric);
                std::iter::repeat_n(numeric, c.width())
            })
            .collect()
    }

    /// Encodes rows. Unseen categories become an all-zero block; a value
    /// in a numeric column that does not parse is an error.
    pub fn transform(&self, table: &RawTable) -> Result<Matrix> {
        let width = self.output_width();
        let mut x = Matrix::zeros(table.nrows(), width);
        for (i, raw) in table.rows.iter().enumerate() {
            let out = x.row_mut(i);
            let mut at = 0;
            for (j, enc) in self.columns.iter().enumerate() {
                match enc {
                    ColumnEncoding::Numeric => {
                        out[at] = raw[j].parse::<f64>().map_err(|_| {
                            Error::InvalidArgument(format!(
                                "non-numeric value `{}` in numeric column {}",
                                raw[j], table.columns[j].name
                            ))
                        })?;
                    }
                    ColumnEncoding::Nominal(cats) => {
                        if let Some(k) = cats.iter().position(|c| c == &raw[j]) {
                            out[at + k] = 1.0;
                        }
                    }
                }
                at += enc.width();
            }
        }
        Ok(x)
    }

    pub fn encode_labels(&self, labels: &[String]) -> Result<Vec<usize>> {
        labels
            .iter()
            .map(|l| {
                self.classes
                    .iter()
                    .position(|c| c == l)
                    .ok_or_else(|| Error::InvalidArgument(format!("unknown class label `{l}`")))
            })
            .collect()
    }

    pub fn decode_labels(&self, y: &[usize]) -> Vec<String> {
        y.iter().map(|&c| self.classes[c].clone()).collect()
    }
}

/// Per-output-column `(mean, sd)`; `None` for one-hot columns, which are
/// never rescaled.
#[derive(Debug, Clone, PartialEq)]
pub struct Scaler {
    pub params: Vec<Option<(f64, f64)>>,
}

impl Scaler {
    /// Fits on the given rows of `x` using the sample (N-1) standard
    /// deviation. A zero or undefined sd is replaced by 1.
    pub fn fit(x: &Matrix, numeric_mask: &[bool], rows: &[usize]) -> Self {
        let n = rows.len();
        let params = numeric_mask
            .iter()
            .enumerate()
            .map(|(j, &numeric)| {
                if !numeric {
                    return None;
                }
                let mean = rows.iter().map(|&i| x.get(i, j)).sum::<f64>() / n.max(1) as f64;
                let sd = if n > 1 {
                    let ss: f64 = rows.iter().map(|&i| (x.get(i, j) - mean).powi(2)).sum();
                    (ss / (n - 1) as f64).sqrt()
                } else {
                    0.0
                };
                let sd = if sd > 0.0 && sd.is_finite() { sd } else { 1.0 };
                Some((mean, sd))
            })
            .collect();
        Scaler { params }
    }

    pub fn apply(&self, x: &Matrix) -> Matrix {
        let mut out = x.clone();
        for i in 0..out.nrows() {
            for (v, p) in out.row_mut(i).iter_mut().zip(&self.params) {
                if let Some((mean, sd)) = p {
                    *v = (*v - mean) / sd;
                }
            }
        }
        out
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Dataset {
    pub x: Matrix,
    pub y: Vec<usize>,
    pub n_classes: usize,
    pub encoder: EncodingSpec,
    pub scaler: Scaler,
    pub standardized: bool,
}

impl Dataset {
    /// Wraps an already-numeric matrix; every column counts as numeric.
    pub fn from_numeric(x: Matrix, y: Vec<usize>, n_classes: usize) -> Result<Self> {
        if x.nrows() != y.len() {
            return Err(Error::DimensionMismatch {
                expected: x.nrows(),
                found: y.len(),
            });
        }
        if let Some(&bad) = y.iter().find(|&&c| c >= n_classes) {
            return Err(Error::InvalidArgument(format!("label {bad} outside [0, {n_classes})")));
        }
        if !x.all_finite() {
            return Err(Error::InvalidArgument("non-finite feature value".into()));
        }
        let encoder = EncodingSpec {
            columns: vec![ColumnEncoding::Numeric; x.ncols()],
            classes: (0..n_classes).map(|c| c.to_string()).collect(),
        };
        let all: Vec<usize> = (0..x.nrows()).collect();
        let scaler = Scaler::fit(&x, &encoder.numeric_mask(), &all);
        Ok(Dataset {
            x,
            y,
            n_classes,
            encoder,
            scaler,
            standardized: false,
        })
    }

    pub fn len(&self) -> usize {
        self.y.len()
    }

    pub fn is_empty(&self) -> bool {
        self.y.is_empty()
    }

    pub fn n_features(&self) -> usize {
        self.x.ncols()
    }

    pub fn class_counts(&self) -> Vec<usize> {
        class_counts(&self.y, self.n_classes)
    }

    pub fn subset(&self, idx: &[usize]) -> Dataset {
        Dataset {
            x: self.x.select_rows(idx),
            y: idx.iter().map(|&i| self.y[i]).collect(),
            n_classes: self.n_classes,
            encoder: self.encoder.clone(),
            scaler: self.scaler.clone(),
            standardized: self.standardized,
        }
    }

    /// Refits the scaler on the given rows only (used to keep test rows out
    /// of the scaling statistics). Must be called before standardizing.
    pub fn refit_scaler(&self, rows: &[usize]) -> Dataset {
        let mut out = self.clone();
        out.scaler = Scaler::fit(&self.x, &self.encoder.numeric_mask(), rows);
        out
    }
}

pub fn class_counts(y: &[usize], n_classes: usize) -> Vec<usize> {
    let mut counts = vec![0; n_classes];
    for &c in y {
        counts[c] += 1;
    }
    counts
}

/// One-hot encodes nominal columns, maps labels to `[0, C)` in
/// first-appearance order and fits the scaler on the numeric columns.
pub fn encode(table: &RawTable) -> Result<Dataset> {
    let encoder = EncodingSpec::fit(table);
    let x = encoder.transform(table)?;
    let y = encoder.encode_labels(&table.labels)?;
    let all: Vec<usize> = (0..x.nrows()).collect();
    let scaler = Scaler::fit(&x, &encoder.numeric_mask(), &all);
    Ok(Dataset {
        n_classes: encoder.classes.len(),
        x,
        y,
        encoder,
        scaler,
        standardized: false,
    })
}

/// Applies the fitted scaler to the numeric columns. Idempotent.
pub fn standardize(ds: &Dataset) -> Dataset {
    if ds.standardized {
        return ds.clone();
    }
    Dataset {
        x: ds.scaler.apply(&ds.x),
        standardized: true,
        ..ds.clone()
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct SplitPlan {
    pub train_idx: Vec<usize>,
    pub test_idx: Vec<usize>,
    pub seed: u64,
}

/// Stratified split. Per-class test counts come from a largest-remainder
/// allocation of the test size, so each class is within one sample of its
/// proportional share, and every class keeps at least one sample on each
/// side.
pub fn stratified_split(y: &[usize], n_classes: usize, test_fraction: f64, seed: u64) -> Result<SplitPlan> {
    if !(test_fraction > 0.0 && test_fraction < 1.0) {
        return Err(Error::InvalidArgument(format!(
            "test fraction {test_fraction} outside (0, 1)"
        )));
    }
    let counts = class_counts(y, n_classes);
    for (c, &n) in counts.iter().enumerate() {
        if n == 1 {
            return Err(Error::Unstratifiable {
                class: c,
                count: n,
                required: 2,
            });
        }
    }
    let n = y.len();
    let n_test = (test_fraction * n as f64).round() as usize;
    let quotas = largest_remainder(&counts, n_test);

    let mut rng = rng::stream(seed, "stratified-split");
    let mut train_idx = Vec::with_capacity(n - n_test);
    let mut test_idx = Vec::with_capacity(n_test);
    for (c, &quota) in quotas.iter().enumerate() {
        if counts[c] == 0 {
            continue;
        }
        let mut members: Vec<usize> = (0..n).filter(|&i| y[i] == c).collect();
        members.shuffle(&mut rng);
        let k = quota.clamp(1, counts[c] - 1);
        test_idx.extend_from_slice(&members[..k]);
        train_idx.extend_from_slice(&members[k..]);
    }
    train_idx.sort_unstable();
    test_idx.sort_unstable();
    Ok(SplitPlan {
        train_idx,
        test_idx,
        seed,
    })
}

/// Splits `total` across groups proportionally to `weights` (Hamilton's
/// method; remainder ties go to the lower group index).
pub(crate) fn largest_remainder(weights: &[usize], total: usize) -> Vec<usize> {
    let sum: usize = weights.iter().sum();
    if sum == 0 {
        return vec![0; weights.len()];
    }
    let exact: Vec<f64> = weights.iter().map(|&w| w as f64 * total as f64 / sum as f64).collect();
    let mut out: Vec<usize> = exact.iter().map(|e| e.floor() as usize).collect();
    let assigned: usize = out.iter().sum();
    let mut order: Vec<usize> = (0..weights.len()).collect();
    order.sort_by(|&a, &b| {
        let ra = exact[a] - exact[a].floor();
        let rb = exact[b] - exact[b].floor();
        rb.total_cmp(&ra).then(a.cmp(&b))
    });
    for &g in order.iter().take(total.saturating_sub(assigned)) {
        out[g] += 1;
    }
    out
}

/// Uniform sample of `max_n` rows without replacement when the dataset is
/// larger than `max_n`; rows keep their original relative order.
pub fn downsample(ds: &Dataset, max_n: usize, seed: u64) -> Result<Dataset> {
    if max_n < ds.n_classes {
        return Err(Error::InvalidArgument(format!(
            "max_n {max_n} smaller than class count {}",
            ds.n_classes
        )));
    }
    if ds.len() <= max_n {
        return Ok(ds.clone());
    }
    let mut rng = rng::stream(seed, "downsample");
    let mut idx = index::sample(&mut rng, ds.len(), max_n).into_vec();
    idx.sort_unstable();
    Ok(ds.subset(&idx))
}

/// `X + E` with `E` i.i.d. `N(0, delta^2)`, drawn from the `(seed, "perturb")`
/// stream in row-major order.
pub fn perturb(x: &Matrix, delta: f64, seed: u64) -> Result<Matrix> {
    if !(delta >= 0.0 && delta.is_finite()) {
        return Err(Error::InvalidArgument(format!("perturbation scale {delta}")));
    }
    if delta == 0.0 {
        return Ok(x.clone());
    }
    let normal = Normal::new(0.0, delta).map_err(|e| Error::InvalidArgument(e.to_string()))?;
    let mut rng = rng::stream(seed, "perturb");
    let mut out = x.clone();
    for v in out.as_mut_slice() {
        *v += normal.sample(&mut rng);
    }
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn table(csv: &str, label: &str) -> Result<RawTable> {
        read_csv(csv.as_bytes(), label)
    }

    #[test]
    fn infers_column_kinds() {
        let t = table("a,color,y\n1.5,red,p\n2,green,q\n3,red,p\n", "y").unwrap();
        let kinds: Vec<_> = t.columns.iter().map(|c| c.kind).collect();
        assert_eq!(kinds, vec![ColumnKind::Numeric, ColumnKind::Nominal]);
        assert_eq!(t.label_column, "y");
        assert_eq!(t.labels, vec!["p", "q", "p"]);
    }

    #[test]
    fn one_unparsable_value_forces_nominal() {
        let t = table("z,y\n1,a\n2,b\nx,a\n", "y").unwrap();
        assert_eq!(t.columns[0].kind, ColumnKind::Nominal);
    }

    #[test]
    fn ragged_row_is_rejected() {
        let err = table("a,b,y\n1,2,p\n1,q\n", "y").unwrap_err();
        assert!(err.to_string().contains("ragged row"), "{err}");
    }

    #[test]
    fn load_errors() {
        assert!(matches!(
            load_csv("/nonexistent/file.csv", "y"),
            Err(Error::MissingFile(_))
        ));
        assert!(matches!(table("a,b\n1,2\n", "y"), Err(Error::MissingLabelColumn(_))));
        assert!(matches!(table("a,y\n", "y"), Err(Error::EmptyTable)));
        assert!(matches!(table("a,y\n1,p\n,q\n", "y"), Err(Error::MissingValue { .. })));
        assert!(matches!(table("a,y\n1,p\n2,p\n", "y"), Err(Error::DegenerateLabels(1))));
    }

    #[test]
    fn nominal_expands_to_one_hot() {
        let t = table("color,y\nred,a\ngreen,b\nred,a\n", "y").unwrap();
        let ds = encode(&t).unwrap();
        assert_eq!(ds.n_features(), 2);
        assert_eq!(ds.x.row(0), &[1.0, 0.0]);
        assert_eq!(ds.x.row(1), &[0.0, 1.0]);
        assert_eq!(ds.x.row(2), &[1.0, 0.0]);
    }

    #[test]
    fn all_numeric_is_passthrough() {
        let t = table("a,b,c,d,y\n1,2,3,4,p\n5,6,7,8,q\n", "y").unwrap();
        let ds = encode(&t).unwrap();
        assert_eq!(ds.n_features(), 4);
        assert!(ds.encoder.columns.iter().all(|c| *c == ColumnEncoding::Numeric));
        assert_eq!(ds.x.row(1), &[5.0, 6.0, 7.0, 8.0]);
    }

    #[test]
    fn labels_in_first_appearance_order() {
        let t = table("a,y\n1,cat\n2,dog\n3,cat\n4,bird\n", "y").unwrap();
        let ds = encode(&t).unwrap();
        assert_eq!(ds.y, vec![0, 1, 0, 2]);
        assert_eq!(ds.n_classes, 3);
        assert_eq!(ds.encoder.decode_labels(&ds.y), t.labels);
    }

    #[test]
    fn unseen_category_is_all_zero() {
        let t = table("color,y\nred,a\ngreen,b\n", "y").unwrap();
        let enc = EncodingSpec::fit(&t);
        let other = table("color,y\nblue,a\n", "y");
        // single-class table is rejected at load, so build it by hand
        assert!(other.is_err());
        let other = RawTable {
            rows: vec![vec!["blue".into()]],
            labels: vec!["a".into()],
            ..t.clone()
        };
        assert_eq!(enc.transform(&other).unwrap().row(0), &[0.0, 0.0]);
    }

    #[test]
    fn standardize_uses_sample_sd() {
        let t = table("a,k,c,y\n1,5,x,p\n2,5,z,q\n3,5,x,p\n", "y").unwrap();
        let ds = standardize(&encode(&t).unwrap());
        assert_eq!(ds.x.column(0), vec![-1.0, 0.0, 1.0]);
        assert_eq!(ds.x.column(1), vec![0.0, 0.0, 0.0]);
        // one-hot block for column c untouched
        assert_eq!(ds.x.column(2), vec![1.0, 0.0, 1.0]);
        assert_eq!(standardize(&ds), ds);
    }

    #[test]
    fn split_balanced_classes() {
        let y = vec![0, 0, 0, 0, 0, 1, 1, 1, 1, 1];
        let plan = stratified_split(&y, 2, 0.2, 3).unwrap();
        assert_eq!(plan.test_idx.len(), 2);
        let test_classes: Vec<usize> = plan.test_idx.iter().map(|&i| y[i]).collect();
        assert_eq!(class_counts(&test_classes, 2), vec![1, 1]);
        assert_eq!(plan, stratified_split(&y, 2, 0.2, 3).unwrap());
    }

    #[test]
    fn split_rejects_singleton_class() {
        let y = vec![0, 0, 0, 1];
        assert!(matches!(
            stratified_split(&y, 2, 0.25, 0),
            Err(Error::Unstratifiable { class: 1, .. })
        ));
    }

    #[test]
    fn largest_remainder_sums_to_total() {
        assert_eq!(largest_remainder(&[5, 5], 2), vec![1, 1]);
        assert_eq!(largest_remainder(&[1, 1, 1], 2), vec![1, 1, 0]);
        assert_eq!(largest_remainder(&[7, 2, 1], 3).iter().sum::<usize>(), 3);
    }

    fn numeric_dataset(n: usize) -> Dataset {
        let x = Matrix::from_vec(n, 1, (0..n).map(|i| i as f64).collect()).unwrap();
        let y = (0..n).map(|i| i % 2).collect();
        Dataset::from_numeric(x, y, 2).unwrap()
    }

    #[test]
    fn downsample_rules() {
        let small = numeric_dataset(500);
        assert_eq!(downsample(&small, 10_000, 1).unwrap(), small);

        let big = numeric_dataset(12_000);
        let a = downsample(&big, 10_000, 1).unwrap();
        assert_eq!(a.len(), 10_000);
        assert_eq!(a, downsample(&big, 10_000, 1).unwrap());
        assert_ne!(a, downsample(&big, 10_000, 2).unwrap());
    }

    #[test]
    fn perturb_zero_and_determinism() {
        let x = Matrix::from_rows(&[[1.0, -2.0], [0.5, 3.0]]).unwrap();
        assert_eq!(perturb(&x, 0.0, 9).unwrap(), x);
        let a = perturb(&x, 0.5, 9).unwrap();
        let b = perturb(&x, 0.5, 9).unwrap();
        assert_eq!(a.as_slice(), b.as_slice());
        assert_ne!(a, x);
    }

    #[test]
    fn perturb_noise_moments() {
        // 10^6 draws: 4 standard errors of the mean is 4 * 0.5 / 1000 = 0.002,
        // and of the sd is about 4 * 0.5 / sqrt(2 * 10^6) < 0.002.
        let n = 1000;
        let x = Matrix::zeros(n, n);
        let noise = perturb(&x, 0.5, 42).unwrap();
        let v = noise.as_slice();
        let mean = v.iter().sum::<f64>() / v.len() as f64;
        let sd = (v.iter().map(|e| (e - mean).powi(2)).sum::<f64>() / (v.len() - 1) as f64).sqrt();
        assert!(mean.abs() <= 0.002, "mean {mean}");
        assert!((sd - 0.5).abs() <= 0.002, "sd {sd}");
    }
}
