//! Static fusion rules and reference-set-based dynamic selection baselines.
//!
//! The dynamic methods all work per test row from a [`RoC`] (the k nearest
//! reference rows) and the K member outputs at that test row.

use std::fmt;
use std::str::FromStr;

use crate::bpe::{fuse, fuse_row, WeightVector};
use crate::error::{Error, Result};
use crate::matrix::{argmax, Matrix, ProbMatrix};

pub const DEFAULT_ROC_K: usize = 7;
pub const DEFAULT_MCB_THETA: f64 = 0.7;
pub const DEFAULT_DES_PA: f64 = 0.5;
pub const DEFAULT_DES_PB: f64 = 0.3;

/// Reference rows with every member's prediction on them.
#[derive(Debug, Clone)]
pub struct ReferenceSet {
    pub x: Matrix,
    pub y: Vec<usize>,
    pub outputs: Vec<ProbMatrix>,
    pub predicted: Vec<Vec<usize>>,
    pub correct: Vec<Vec<bool>>,
}

impl ReferenceSet {
    pub fn new(x: Matrix, y: Vec<usize>, outputs: Vec<ProbMatrix>) -> Result<Self> {
        if x.nrows() != y.len() {
            return Err(Error::DimensionMismatch {
                expected: x.nrows(),
                found: y.len(),
            });
        }
        for (k, o) in outputs.iter().enumerate() {
            if o.nrows() != y.len() {
                return Err(Error::ShapeMismatch(format!(
                    "reference output {k} has {} rows, expected {}",
                    o.nrows(),
                    y.len()
                )));
            }
        }
        let predicted: Vec<Vec<usize>> = outputs.iter().map(ProbMatrix::predictions).collect();
        let correct = predicted
            .iter()
            .map(|p| p.iter().zip(&y).map(|(a, b)| a == b).collect())
            .collect();
        Ok(ReferenceSet {
            x,
            y,
            outputs,
            predicted,
            correct,
        })
    }

    pub fn len(&self) -> usize {
        self.y.len()
    }

    pub fn is_empty(&self) -> bool {
        self.y.is_empty()
    }

    pub fn n_models(&self) -> usize {
        self.outputs.len()
    }

    /// Fraction of reference rows each member gets right.
    pub fn accuracies(&self) -> Vec<f64> {
        self.correct
            .iter()
            .map(|c| c.iter().filter(|&&b| b).count() as f64 / c.len().max(1) as f64)
            .collect()
    }
}

/// Region of competence: neighbour indices with ascending distances.
#[derive(Debug, Clone, PartialEq)]
pub struct RoC {
    pub indices: Vec<usize>,
    pub distances: Vec<f64>,
}

impl RoC {
    pub fn len(&self) -> usize {
        self.indices.len()
    }

    pub fn is_empty(&self) -> bool {
        self.indices.is_empty()
    }
}

/// Exact k-nearest neighbours by linear scan (Euclidean; ties by index).
pub fn knn_query(x_ref: &Matrix, x: &[f64], k: usize) -> Result<RoC> {
    if k > x_ref.nrows() {
        return Err(Error::InvalidArgument(format!(
            "k = {k} exceeds reference size {}",
            x_ref.nrows()
        )));
    }
    if x.len() != x_ref.ncols() {
        return Err(Error::DimensionMismatch {
            expected: x_ref.ncols(),
            found: x.len(),
        });
    }
    let mut d: Vec<(f64, usize)> = x_ref
        .rows_iter()
        .enumerate()
        .map(|(i, r)| (r.iter().zip(x).map(|(a, b)| (a - b) * (a - b)).sum(), i))
        .collect();
    let cmp = |a: &(f64, usize), b: &(f64, usize)| a.0.total_cmp(&b.0).then(a.1.cmp(&b.1));
    if k > 0 && k < d.len() {
        d.select_nth_unstable_by(k - 1, cmp);
        d.truncate(k);
    }
    d.sort_by(cmp);
    d.truncate(k);
    Ok(RoC {
        indices: d.iter().map(|p| p.1).collect(),
        distances: d.iter().map(|p| p.0.sqrt()).collect(),
    })
}

// ---------------------------------------------------------------------------
// Static rules

/// Index of the highest screening accuracy; ties go to the lowest index.
pub fn single_best(screening_acc: &[f64]) -> Result<usize> {
    if screening_acc.is_empty() {
        return Err(Error::InvalidArgument("no screening accuracies".into()));
    }
    Ok(argmax(screening_acc))
}

/// Uniform fusion; shares its arithmetic with BPE at `lambda = 0`.
pub fn simple_average(outputs: &[ProbMatrix]) -> Result<ProbMatrix> {
    fuse(outputs, &WeightVector::uniform(outputs.len()))
}

fn median(v: &mut [f64]) -> f64 {
    v.sort_by(f64::total_cmp);
    let n = v.len();
    if n % 2 == 1 {
        v[n / 2]
    } else {
        (v[n / 2 - 1] + v[n / 2]) / 2.0
    }
}

/// Per-class median across members, renormalized per row.
pub fn median_average(outputs: &[ProbMatrix]) -> Result<ProbMatrix> {
    let first = outputs
        .first()
        .ok_or_else(|| Error::ShapeMismatch("no model outputs".into()))?;
    let (n, c) = (first.nrows(), first.nclasses());
    if outputs.iter().any(|o| o.nrows() != n || o.nclasses() != c) {
        return Err(Error::ShapeMismatch("outputs differ in shape".into()));
    }
    let mut out = Matrix::zeros(n, c);
    let mut buf = vec![0.0; outputs.len()];
    for i in 0..n {
        for j in 0..c {
            for (b, o) in buf.iter_mut().zip(outputs) {
                *b = o.row(i)[j];
            }
            out.set(i, j, median(&mut buf));
        }
    }
    Ok(ProbMatrix::normalized(out))
}

/// Static weights proportional to reference accuracy.
pub fn weighted_average(outputs: &[ProbMatrix], ref_acc: &[f64]) -> Result<ProbMatrix> {
    if ref_acc.iter().any(|a| !(0.0..=1.0).contains(a)) {
        return Err(Error::InvalidArgument(format!(
            "accuracies outside [0, 1]: {ref_acc:?}"
        )));
    }
    fuse(outputs, &WeightVector::from_competences(ref_acc))
}

// ---------------------------------------------------------------------------
// Dynamic selectors

fn average_of(rows: &[&[f64]], members: &[usize]) -> Vec<f64> {
    let picked: Vec<&[f64]> = members.iter().map(|&k| rows[k]).collect();
    let mut out = vec![0.0; rows[0].len()];
    fuse_row(&picked, WeightVector::uniform(picked.len()).as_slice(), &mut out);
    out
}

fn all_members(k: usize) -> Vec<usize> {
    (0..k).collect()
}

/// Members tied at the maximum value.
fn argmax_set(values: &[f64]) -> Vec<usize> {
    let best = values.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
    (0..values.len()).filter(|&k| values[k] == best).collect()
}

/// Local class accuracy of each member: among the neighbours the member
/// assigns to its own predicted class at `x`, the fraction truly of that
/// class (0 when it assigns none).
pub fn lca_competences(rs: &ReferenceSet, roc: &RoC, outputs_at_x: &[&[f64]]) -> Vec<f64> {
    outputs_at_x
        .iter()
        .enumerate()
        .map(|(k, row)| {
            let c = argmax(row);
            let mut assigned = 0usize;
            let mut right = 0usize;
            for &i in &roc.indices {
                if rs.predicted[k][i] == c {
                    assigned += 1;
                    if rs.y[i] == c {
                        right += 1;
                    }
                }
            }
            if assigned == 0 {
                0.0
            } else {
                right as f64 / assigned as f64
            }
        })
        .collect()
}

/// Hard selection of the most locally class-accurate member; ties average.
pub fn lca_select(rs: &ReferenceSet, roc: &RoC, outputs_at_x: &[&[f64]]) -> Vec<f64> {
    average_of(outputs_at_x, &argmax_set(&lca_competences(rs, roc, outputs_at_x)))
}

/// Neighbours whose label profile agrees with `x`'s on at least `theta` of
/// the members; the whole RoC if none qualify.
pub fn mcb_filter(rs: &ReferenceSet, roc: &RoC, profile_at_x: &[usize], theta: f64) -> Vec<usize> {
    let k = profile_at_x.len() as f64;
    let kept: Vec<usize> = roc
        .indices
        .iter()
        .copied()
        .filter(|&i| {
            let agree = profile_at_x
                .iter()
                .enumerate()
                .filter(|&(m, &p)| rs.predicted[m][i] == p)
                .count();
            agree as f64 / k >= theta
        })
        .collect();
    if kept.is_empty() {
        roc.indices.clone()
    } else {
        kept
    }
}

pub fn mcb_select(rs: &ReferenceSet, roc: &RoC, outputs_at_x: &[&[f64]], theta: f64) -> Vec<f64> {
    let profile: Vec<usize> = outputs_at_x.iter().map(|r| argmax(r)).collect();
    let region = mcb_filter(rs, roc, &profile, theta);
    let acc: Vec<f64> = (0..outputs_at_x.len())
        .map(|k| region.iter().filter(|&&i| rs.correct[k][i]).count() as f64 / region.len() as f64)
        .collect();
    average_of(outputs_at_x, &argmax_set(&acc))
}

pub fn knora_union_votes(rs: &ReferenceSet, roc: &RoC) -> Vec<f64> {
    (0..rs.n_models())
        .map(|k| roc.indices.iter().filter(|&&i| rs.correct[k][i]).count() as f64)
        .collect()
}

/// Vote-weighted mean; no votes at all falls back to the simple average.
pub fn knora_union(rs: &ReferenceSet, roc: &RoC, outputs_at_x: &[&[f64]]) -> Vec<f64> {
    let w = WeightVector::from_competences(&knora_union_votes(rs, roc));
    let mut out = vec![0.0; outputs_at_x[0].len()];
    fuse_row(outputs_at_x, w.as_slice(), &mut out);
    out
}

/// Members correct on every one of the first `k` RoC neighbours, for the
/// largest `k` where that set is non-empty. Empty if none is right on the
/// nearest neighbour.
pub fn knora_eliminate_set(rs: &ReferenceSet, roc: &RoC) -> Vec<usize> {
    for k in (1..=roc.len()).rev() {
        let e: Vec<usize> = (0..rs.n_models())
            .filter(|&m| roc.indices[..k].iter().all(|&i| rs.correct[m][i]))
            .collect();
        if !e.is_empty() {
            return e;
        }
    }
    Vec::new()
}

pub fn knora_eliminate(rs: &ReferenceSet, roc: &RoC, outputs_at_x: &[&[f64]]) -> Vec<f64> {
    let set = knora_eliminate_set(rs, roc);
    if set.is_empty() {
        average_of(outputs_at_x, &all_members(outputs_at_x.len()))
    } else {
        average_of(outputs_at_x, &set)
    }
}

/// Gaussian-potential competence with bandwidth equal to the mean RoC
/// distance (kernel 1 everywhere when that mean is 0).
pub fn rrc_competences(rs: &ReferenceSet, roc: &RoC) -> Vec<f64> {
    let h = roc.distances.iter().sum::<f64>() / roc.len().max(1) as f64;
    let kernel: Vec<f64> = roc
        .distances
        .iter()
        .map(|&d| if h > 0.0 { (-(d * d) / (2.0 * h * h)).exp() } else { 1.0 })
        .collect();
    (0..rs.n_models())
        .map(|m| {
            roc.indices
                .iter()
                .zip(&kernel)
                .filter(|(&i, _)| rs.correct[m][i])
                .map(|(_, &g)| g)
                .sum()
        })
        .collect()
}

pub fn rrc_weights(rs: &ReferenceSet, roc: &RoC) -> WeightVector {
    WeightVector::from_competences(&rrc_competences(rs, roc))
}

pub fn rrc(rs: &ReferenceSet, roc: &RoC, outputs_at_x: &[&[f64]]) -> Vec<f64> {
    let mut out = vec![0.0; outputs_at_x[0].len()];
    fuse_row(outputs_at_x, rrc_weights(rs, roc).as_slice(), &mut out);
    out
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum DiversityMeasure {
    DoubleFault,
    QStatistic,
    RatioErrors,
}

impl DiversityMeasure {
    pub fn as_str(self) -> &'static str {
        match self {
            DiversityMeasure::DoubleFault => "df",
            DiversityMeasure::QStatistic => "q",
            DiversityMeasure::RatioErrors => "re",
        }
    }
}

/// Pairwise diversity of two correctness vectors, oriented so that larger
/// means more diverse. Degenerate denominators give the least-diverse value.
pub fn pair_diversity(a: &[bool], b: &[bool], measure: DiversityMeasure) -> f64 {
    let (mut n11, mut n00, mut n10, mut n01) = (0.0, 0.0, 0.0, 0.0);
    for (&ca, &cb) in a.iter().zip(b) {
        match (ca, cb) {
            (true, true) => n11 += 1.0,
            (false, false) => n00 += 1.0,
            (true, false) => n10 += 1.0,
            (false, true) => n01 += 1.0,
        }
    }
    let n = n11 + n00 + n10 + n01;
    match measure {
        DiversityMeasure::DoubleFault => {
            if n == 0.0 {
                -1.0
            } else {
                -(n00 / n)
            }
        }
        DiversityMeasure::QStatistic => {
            let den = n11 * n00 + n01 * n10;
            if den == 0.0 {
                -1.0
            } else {
                -((n11 * n00 - n01 * n10) / den)
            }
        }
        DiversityMeasure::RatioErrors => {
            let errors = n00 + n01 + n10;
            if errors == 0.0 {
                -1.0
            } else {
                -(n00 / errors)
            }
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct DesKnnParams {
    pub p_a: f64,
    pub p_b: f64,
    pub measure: DiversityMeasure,
}

impl DesKnnParams {
    pub fn new(measure: DiversityMeasure) -> Self {
        DesKnnParams {
            p_a: DEFAULT_DES_PA,
            p_b: DEFAULT_DES_PB,
            measure,
        }
    }
}

/// `ceil(p * k)`, at least 1; a small slack keeps `0.3 * 10` at 3.
pub fn top_count(p: f64, k: usize) -> usize {
    ((p * k as f64 - 1e-9).ceil() as usize).clamp(1, k)
}

fn top_by(values: &[f64], count: usize) -> Vec<usize> {
    let mut order: Vec<usize> = (0..values.len()).collect();
    order.sort_by(|&a, &b| values[b].total_cmp(&values[a]).then(a.cmp(&b)));
    order.truncate(count);
    order
}

/// Ensemble of competence: the top `p_a` members by local accuracy united
/// with the top `p_b` by mean pairwise diversity, in member order.
pub fn des_knn_set(rs: &ReferenceSet, roc: &RoC, params: &DesKnnParams) -> Vec<usize> {
    let k = rs.n_models();
    let local: Vec<Vec<bool>> = (0..k)
        .map(|m| roc.indices.iter().map(|&i| rs.correct[m][i]).collect())
        .collect();
    let acc: Vec<f64> = local
        .iter()
        .map(|c| c.iter().filter(|&&b| b).count() as f64 / c.len() as f64)
        .collect();
    let div: Vec<f64> = (0..k)
        .map(|m| {
            if k == 1 {
                return 0.0;
            }
            (0..k)
                .filter(|&o| o != m)
                .map(|o| pair_diversity(&local[m], &local[o], params.measure))
                .sum::<f64>()
                / (k - 1) as f64
        })
        .collect();
    let mut set = top_by(&acc, top_count(params.p_a, k));
    set.extend(top_by(&div, top_count(params.p_b, k)));
    set.sort_unstable();
    set.dedup();
    set
}

pub fn des_knn(rs: &ReferenceSet, roc: &RoC, outputs_at_x: &[&[f64]], params: &DesKnnParams) -> Vec<f64> {
    average_of(outputs_at_x, &des_knn_set(rs, roc, params))
}

// ---------------------------------------------------------------------------
// Whole-matrix driver

#[derive(Debug, Clone, Copy, PartialEq)]
pub enum DynamicMethod {
    Lca,
    Mcb { theta: f64 },
    KnoraU,
    KnoraE,
    Rrc,
    DesKnn(DesKnnParams),
}

impl fmt::Display for DynamicMethod {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            DynamicMethod::Lca => f.write_str("lca"),
            DynamicMethod::Mcb { .. } => f.write_str("mcb"),
            DynamicMethod::KnoraU => f.write_str("knora_u"),
            DynamicMethod::KnoraE => f.write_str("knora_e"),
            DynamicMethod::Rrc => f.write_str("rrc"),
            DynamicMethod::DesKnn(p) => write!(f, "des_knn_{}", p.measure.as_str()),
        }
    }
}

impl FromStr for DiversityMeasure {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "df" => Ok(DiversityMeasure::DoubleFault),
            "q" => Ok(DiversityMeasure::QStatistic),
            "re" => Ok(DiversityMeasure::RatioErrors),
            other => Err(Error::Config(format!("unknown diversity measure `{other}`"))),
        }
    }
}

/// Runs a dynamic method over every test row. `test_outputs` are the
/// members' predictions on `x_test`, in reference-set member order.
pub fn predict_dynamic(
    method: DynamicMethod,
    rs: &ReferenceSet,
    x_test: &Matrix,
    test_outputs: &[ProbMatrix],
    k: usize,
) -> Result<ProbMatrix> {
    if test_outputs.len() != rs.n_models() {
        return Err(Error::ShapeMismatch(format!(
            "{} test outputs for {} reference members",
            test_outputs.len(),
            rs.n_models()
        )));
    }
    if rs.is_empty() {
        return Err(Error::InvalidArgument("empty reference set".into()));
    }
    let k = k.min(rs.len());
    let c = test_outputs[0].nclasses();
    let mut out = Matrix::zeros(x_test.nrows(), c);
    let mut rows = Vec::with_capacity(test_outputs.len());
    for i in 0..x_test.nrows() {
        let roc = knn_query(&rs.x, x_test.row(i), k)?;
        rows.clear();
        rows.extend(test_outputs.iter().map(|o| o.row(i)));
        let fused = match method {
            DynamicMethod::Lca => lca_select(rs, &roc, &rows),
            DynamicMethod::Mcb { theta } => mcb_select(rs, &roc, &rows, theta),
            DynamicMethod::KnoraU => knora_union(rs, &roc, &rows),
            DynamicMethod::KnoraE => knora_eliminate(rs, &roc, &rows),
            DynamicMethod::Rrc => rrc(rs, &roc, &rows),
            DynamicMethod::DesKnn(p) => des_knn(rs, &roc, &rows, &p),
        };
        out.row_mut(i).copy_from_slice(&fused);
    }
    Ok(ProbMatrix::normalized(out))
}
