//! Two-model fusion analysis: the T/F/N partition, exchange thresholds,
//! static-weight feasibility, discriminative margins and an exhaustive
//! simplex-grid search, plus randomized suites that check them against
//! each other.
//!
//! Throughout, a static two-model fusion is `w * q + (1 - w) * q'` with
//! `w` in (0, 1), parameterized as `tau = (1 - w) / w`.

use rand::Rng;

use crate::error::{Error, Result};
use crate::matrix::{argmax, ProbMatrix};
use crate::rng::{stream, StreamRng};

#[derive(Debug, Clone)]
pub struct TwoModelInstance {
    pub q: ProbMatrix,
    pub q_prime: ProbMatrix,
    pub y: Vec<usize>,
}

impl TwoModelInstance {
    pub fn new(q: ProbMatrix, q_prime: ProbMatrix, y: Vec<usize>) -> Result<Self> {
        if q.nrows() != q_prime.nrows() || q.nclasses() != q_prime.nclasses() || q.nrows() != y.len() {
            return Err(Error::ShapeMismatch(format!(
                "q {}x{}, q' {}x{}, {} labels",
                q.nrows(),
                q.nclasses(),
                q_prime.nrows(),
                q_prime.nclasses(),
                y.len()
            )));
        }
        if let Some(&bad) = y.iter().find(|&&k| k >= q.nclasses()) {
            return Err(Error::InvalidArgument(format!("label {bad} out of range")));
        }
        Ok(TwoModelInstance { q, q_prime, y })
    }

    pub fn len(&self) -> usize {
        self.y.len()
    }

    pub fn is_empty(&self) -> bool {
        self.y.is_empty()
    }
}

/// `t`: primary wrong, secondary right. `f`: primary right, secondary
/// wrong. `n`: everything else.
#[derive(Debug, Clone, PartialEq, Eq, Default)]
pub struct Partition {
    pub t: Vec<usize>,
    pub f: Vec<usize>,
    pub n: Vec<usize>,
}

impl Partition {
    pub fn total(&self) -> usize {
        self.t.len() + self.f.len() + self.n.len()
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct FeasibilityResult {
    pub feasible: bool,
    /// Open interval of admissible `tau`; `None` when empty.
    pub tau_interval: Option<(f64, f64)>,
    pub witness_w: Option<f64>,
}

pub fn partition(inst: &TwoModelInstance) -> Partition {
    let mut p = Partition::default();
    for (s, &k) in inst.y.iter().enumerate() {
        let pm = argmax(inst.q.row(s)) == k;
        let sm = argmax(inst.q_prime.row(s)) == k;
        match (pm, sm) {
            (false, true) => p.t.push(s),
            (true, false) => p.f.push(s),
            _ => p.n.push(s),
        }
    }
    p
}

/// `tau` beyond which the fused decision moves from class `i` to `j`;
/// infinite when the secondary model does not favour `j` over `i`.
pub fn exchange_threshold(q: &[f64], q_prime: &[f64], i: usize, j: usize) -> f64 {
    let den = q_prime[j] - q_prime[i];
    if den <= 0.0 {
        f64::INFINITY
    } else {
        (q[i] - q[j]) / den
    }
}

/// Whether the fused row puts strictly more mass on `k` than on any other
/// class.
pub fn fused_strictly_correct(q: &[f64], q_prime: &[f64], w: f64, k: usize) -> bool {
    let fk = w * q[k] + (1.0 - w) * q_prime[k];
    (0..q.len())
        .filter(|&j| j != k)
        .all(|j| fk > w * q[j] + (1.0 - w) * q_prime[j])
}

/// Interval of `tau` under which every sample of `T` and `F` is strictly
/// correct, built from one linear constraint `tau * b > a` per competing
/// class. For two classes the bounds are exactly the exchange thresholds:
/// `lo = max ET(t)`, `hi = min ET(f)`. The midpoint witness is re-checked by
/// direct evaluation.
pub fn static_feasibility(inst: &TwoModelInstance, part: &Partition) -> FeasibilityResult {
    let mut lo = 0.0f64;
    let mut hi = f64::INFINITY;
    for &s in part.t.iter().chain(&part.f) {
        let (q, qp, k) = (inst.q.row(s), inst.q_prime.row(s), inst.y[s]);
        for j in (0..q.len()).filter(|&j| j != k) {
            let a = q[j] - q[k];
            let b = qp[k] - qp[j];
            if b > 0.0 {
                lo = lo.max(a / b);
            } else if b < 0.0 {
                hi = hi.min(a / b);
            } else if a >= 0.0 {
                lo = f64::INFINITY;
            }
        }
    }
    let empty = FeasibilityResult {
        feasible: false,
        tau_interval: None,
        witness_w: None,
    };
    if lo >= hi {
        return empty;
    }
    let tau = if hi.is_finite() { (lo + hi) / 2.0 } else { lo + 1.0 };
    let w = 1.0 / (1.0 + tau);
    let ok = part
        .t
        .iter()
        .chain(&part.f)
        .all(|&s| fused_strictly_correct(inst.q.row(s), inst.q_prime.row(s), w, inst.y[s]));
    if !ok || !(w > 0.0 && w < 1.0) {
        return empty;
    }
    FeasibilityResult {
        feasible: true,
        tau_interval: Some((lo, hi)),
        witness_w: Some(w),
    }
}

pub fn discriminative_margin(p: &[f64], k: usize) -> f64 {
    let runner_up = p
        .iter()
        .enumerate()
        .filter(|&(j, _)| j != k)
        .map(|(_, &v)| v)
        .fold(f64::NEG_INFINITY, f64::max);
    p[k] - runner_up
}

pub fn ensemble_margin(margins: &[f64], w: &[f64]) -> Result<f64> {
    if margins.len() != w.len() {
        return Err(Error::DimensionMismatch {
            expected: margins.len(),
            found: w.len(),
        });
    }
    if w.iter().any(|&v| v < 0.0) {
        return Err(Error::InvalidArgument("negative weight".into()));
    }
    Ok(margins.iter().zip(w).map(|(d, w)| d * w).sum())
}

/// Integer compositions of `r` into `k` parts in lexicographic order.
fn compositions(k: usize, r: usize) -> Vec<Vec<usize>> {
    fn rec(k: usize, r: usize, prefix: &mut Vec<usize>, out: &mut Vec<Vec<usize>>) {
        if k == 1 {
            prefix.push(r);
            out.push(prefix.clone());
            prefix.pop();
            return;
        }
        for a in 0..=r {
            prefix.push(a);
            rec(k - 1, r - a, prefix, out);
            prefix.pop();
        }
    }
    let mut out = Vec::new();
    rec(k, r, &mut Vec::with_capacity(k), &mut out);
    out
}

/// Best accuracy over the simplex grid with step `1 / resolution`, and the
/// lexicographically first weight vector achieving it. Fused scores use the
/// integer grid coordinates directly, which leaves the argmax unchanged and
/// keeps the arithmetic exact for dyadic inputs.
pub fn best_static_accuracy(outputs: &[ProbMatrix], y: &[usize], resolution: usize) -> Result<(f64, Vec<f64>)> {
    let k = outputs.len();
    if k == 0 || k > 3 {
        return Err(Error::InvalidArgument(format!(
            "exhaustive grid search supports 1 to 3 models, got {k}"
        )));
    }
    if resolution < 2 {
        return Err(Error::InvalidArgument("grid resolution must be at least 2".into()));
    }
    if outputs
        .iter()
        .any(|o| o.nrows() != y.len() || o.nclasses() != outputs[0].nclasses())
    {
        return Err(Error::ShapeMismatch("outputs and labels differ in shape".into()));
    }
    let c = outputs[0].nclasses();
    let mut best: Option<(usize, Vec<usize>)> = None;
    let mut fused = vec![0.0; c];
    for a in compositions(k, resolution) {
        let mut correct = 0;
        for (s, &label) in y.iter().enumerate() {
            fused.iter_mut().for_each(|v| *v = 0.0);
            for (o, &ai) in outputs.iter().zip(&a) {
                for (f, p) in fused.iter_mut().zip(o.row(s)) {
                    *f += ai as f64 * p;
                }
            }
            if argmax(&fused) == label {
                correct += 1;
            }
        }
        if best.as_ref().is_none_or(|(b, _)| correct > *b) {
            best = Some((correct, a));
        }
    }
    let (correct, a) = best.expect("grid is never empty");
    let acc = if y.is_empty() {
        0.0
    } else {
        correct as f64 / y.len() as f64
    };
    Ok((acc, a.iter().map(|&v| v as f64 / resolution as f64).collect()))
}

// ---------------------------------------------------------------------------
// Randomized suites

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct SuiteReport {
    pub name: &'static str,
    pub trials: usize,
    pub violations: usize,
}

impl SuiteReport {
    pub fn passed(&self) -> bool {
        self.violations == 0
    }
}

const DYADIC: u32 = 64;

/// Probability row whose entries are multiples of 1/64.
fn dyadic_row(rng: &mut StreamRng, c: usize) -> Vec<f64> {
    let mut cuts: Vec<u32> = (0..c - 1).map(|_| rng.random_range(0..=DYADIC)).collect();
    cuts.push(0);
    cuts.push(DYADIC);
    cuts.sort_unstable();
    cuts.windows(2)
        .map(|w| f64::from(w[1] - w[0]) / f64::from(DYADIC))
        .collect()
}

fn dyadic_matrix(rng: &mut StreamRng, n: usize, c: usize) -> ProbMatrix {
    let rows: Vec<Vec<f64>> = (0..n).map(|_| dyadic_row(rng, c)).collect();
    ProbMatrix::from_rows(&rows).expect("dyadic rows sum to one")
}

fn uniform_binary_row(rng: &mut StreamRng) -> [f64; 2] {
    let p: f64 = rng.random();
    [p, 1.0 - p]
}

/// Fused decision flips away from the primary's class exactly when the
/// exchange threshold is below `tau`.
pub fn check_flip_threshold(seed: u64, trials: usize) -> SuiteReport {
    let mut rng = stream(seed, "theory-flip");
    let mut violations = 0;
    for _ in 0..trials {
        let q = uniform_binary_row(&mut rng);
        let qp = uniform_binary_row(&mut rng);
        let w: f64 = rng.random_range(0.001..0.999);
        let tau = (1.0 - w) / w;
        let i = argmax(&q);
        let j = 1 - i;
        let fused = [w * q[0] + (1.0 - w) * qp[0], w * q[1] + (1.0 - w) * qp[1]];
        let flipped = argmax(&fused) != i;
        let predicted = exchange_threshold(&q, &qp, i, j) < tau;
        // exact ties sit on the boundary and are decided by index order
        let tie = fused[0] == fused[1];
        if flipped != predicted && !tie {
            violations += 1;
        }
    }
    SuiteReport {
        name: "flip iff exchange threshold",
        trials,
        violations,
    }
}

/// Whether some grid weight `a / resolution` makes every sample in `idx`
/// strictly correct, evaluated in exact integer arithmetic on 1/64 rows.
pub fn grid_separates(inst: &TwoModelInstance, idx: &[usize], resolution: u32) -> bool {
    let scale = f64::from(DYADIC);
    (0..=resolution).any(|a| {
        idx.iter().all(|&s| {
            let (q, qp, k) = (inst.q.row(s), inst.q_prime.row(s), inst.y[s]);
            let fused = |c: usize| {
                let qi = (q[c] * scale).round() as i64;
                let pi = (qp[c] * scale).round() as i64;
                i64::from(a) * qi + i64::from(resolution - a) * pi
            };
            (0..q.len()).filter(|&j| j != k).all(|j| fused(k) > fused(j))
        })
    })
}

/// Infeasible instances admit no static weight separating `T` and `F`;
/// feasible ones are separated by the reported witness.
pub fn check_static_feasibility(seed: u64, trials: usize) -> SuiteReport {
    let mut rng = stream(seed, "theory-feasibility");
    let mut violations = 0;
    for _ in 0..trials {
        let n = rng.random_range(2..=8);
        let inst = TwoModelInstance::new(
            dyadic_matrix(&mut rng, n, 2),
            dyadic_matrix(&mut rng, n, 2),
            (0..n).map(|_| rng.random_range(0..2)).collect(),
        )
        .expect("shapes agree");
        let part = partition(&inst);
        let res = static_feasibility(&inst, &part);
        let tf: Vec<usize> = part.t.iter().chain(&part.f).copied().collect();
        let bad = match res.witness_w {
            Some(w) => !tf
                .iter()
                .all(|&s| fused_strictly_correct(inst.q.row(s), inst.q_prime.row(s), w, inst.y[s])),
            None => grid_separates(&inst, &tf, 1000),
        };
        if bad || res.feasible != res.witness_w.is_some() {
            violations += 1;
        }
    }
    SuiteReport {
        name: "static feasibility vs grid search",
        trials,
        violations,
    }
}

/// Moves each row a dyadic fraction of the way toward the one-hot true
/// class, which raises every discriminative margin.
fn sharpen(rng: &mut StreamRng, p: &ProbMatrix, y: &[usize]) -> ProbMatrix {
    let rows: Vec<Vec<f64>> = (0..p.nrows())
        .map(|s| {
            let alpha = f64::from(rng.random_range(0..=16u32)) / 16.0;
            p.row(s)
                .iter()
                .enumerate()
                .map(|(c, &v)| (1.0 - alpha) * v + if c == y[s] { alpha } else { 0.0 })
                .collect()
        })
        .collect();
    ProbMatrix::from_rows(&rows).expect("convex combination of rows")
}

/// Raising member margins never lowers the best static accuracy.
pub fn check_margin_monotonicity(seed: u64, trials: usize, resolution: usize) -> SuiteReport {
    let mut rng = stream(seed, "theory-margin");
    let mut violations = 0;
    for _ in 0..trials {
        let k = rng.random_range(1..=3);
        let c = rng.random_range(2..=3);
        let n = rng.random_range(1..=50);
        let y: Vec<usize> = (0..n).map(|_| rng.random_range(0..c)).collect();
        let outputs: Vec<ProbMatrix> = (0..k).map(|_| dyadic_matrix(&mut rng, n, c)).collect();
        let improved: Vec<ProbMatrix> = outputs.iter().map(|o| sharpen(&mut rng, o, &y)).collect();
        let (before, _) = best_static_accuracy(&outputs, &y, resolution).expect("k <= 3");
        let (after, _) = best_static_accuracy(&improved, &y, resolution).expect("k <= 3");
        if after < before {
            violations += 1;
        }
    }
    SuiteReport {
        name: "margin improvement never lowers best static accuracy",
        trials,
        violations,
    }
}

/// Two samples whose margin vectors sum to a strictly negative vector, so
/// no convex weighting of the three members classifies both.
pub fn conflicting_three_model_fixture() -> (Vec<ProbMatrix>, Vec<usize>) {
    let m = |a: [f64; 2], b: [f64; 2]| ProbMatrix::from_rows(&[a, b]).expect("valid rows");
    (
        vec![
            m([0.7, 0.3], [0.75, 0.25]),
            m([0.25, 0.75], [0.3, 0.7]),
            m([0.4, 0.6], [0.6, 0.4]),
        ],
        vec![0, 1],
    )
}

pub fn check_conflicting_fixture() -> SuiteReport {
    let (outputs, y) = conflicting_three_model_fixture();
    let mut violations = 0;
    let (acc, _) = best_static_accuracy(&outputs, &y, 1000).expect("three models");
    if acc >= 1.0 {
        violations += 1;
    }
    let pair = TwoModelInstance::new(outputs[0].clone(), outputs[1].clone(), y).expect("shapes agree");
    if static_feasibility(&pair, &partition(&pair)).feasible {
        violations += 1;
    }
    SuiteReport {
        name: "conflicting three-model fixture stays infeasible",
        trials: 1,
        violations,
    }
}

pub fn check_partition_cover(seed: u64, trials: usize) -> SuiteReport {
    let mut rng = stream(seed, "theory-partition");
    let mut violations = 0;
    for _ in 0..trials {
        let n = rng.random_range(1..=30);
        let c = rng.random_range(2..=4);
        let inst = TwoModelInstance::new(
            dyadic_matrix(&mut rng, n, c),
            dyadic_matrix(&mut rng, n, c),
            (0..n).map(|_| rng.random_range(0..c)).collect(),
        )
        .expect("shapes agree");
        let p = partition(&inst);
        let mut all: Vec<usize> = p.t.iter().chain(&p.f).chain(&p.n).copied().collect();
        all.sort_unstable();
        if p.total() != n || all != (0..n).collect::<Vec<_>>() {
            violations += 1;
        }
    }
    SuiteReport {
        name: "partition covers every sample once",
        trials,
        violations,
    }
}

/// Trial counts for [`run_all`], scaled by one factor.
pub fn run_all(seed: u64, trials: usize) -> Vec<SuiteReport> {
    let small = (trials / 10).max(1);
    vec![
        check_flip_threshold(seed, trials),
        check_static_feasibility(seed, small),
        check_margin_monotonicity(seed, small, 20),
        check_conflicting_fixture(),
        check_partition_cover(seed, small),
    ]
}
