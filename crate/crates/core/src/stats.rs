//! Accuracy, Friedman mean ranks, the Wilcoxon signed-rank test and
//! win/tie/loss counting with sign-test critical values.

use statrs::function::erf::erfc;

use crate::error::{Error, Result};
use crate::matrix::ProbMatrix;

pub const DEFAULT_TIE_EPSILON: f64 = 1e-9;
pub const SIGN_TEST_ALPHAS: [f64; 3] = [0.10, 0.05, 0.01];
/// One-sided standard normal quantiles for [`SIGN_TEST_ALPHAS`].
pub const SIGN_TEST_Z: [f64; 3] = [1.2816, 1.6449, 2.3263];
/// Published critical win counts used for the 42-dataset comparison.
pub const PUBLISHED_CRITICAL_42: [f64; 3] = [24.05, 25.20, 27.36];
const EXACT_MAX_N: usize = 12;

pub fn accuracy(pred: &ProbMatrix, y: &[usize]) -> Result<f64> {
    if pred.nrows() != y.len() {
        return Err(Error::DimensionMismatch {
            expected: pred.nrows(),
            found: y.len(),
        });
    }
    if y.is_empty() {
        return Err(Error::InvalidArgument("accuracy of an empty set".into()));
    }
    let hits = pred.predictions().iter().zip(y).filter(|(a, b)| a == b).count();
    Ok(hits as f64 / y.len() as f64)
}

/// Ranks starting at 1 in ascending order of `values`, tied entries sharing
/// the mean of their positions.
pub fn mean_ranks(values: &[f64]) -> Vec<f64> {
    let mut order: Vec<usize> = (0..values.len()).collect();
    order.sort_by(|&a, &b| values[a].total_cmp(&values[b]));
    let mut ranks = vec![0.0; values.len()];
    let mut i = 0;
    while i < order.len() {
        let mut j = i;
        while j + 1 < order.len() && values[order[j + 1]] == values[order[i]] {
            j += 1;
        }
        let r = (i + j) as f64 / 2.0 + 1.0;
        for &o in &order[i..=j] {
            ranks[o] = r;
        }
        i = j + 1;
    }
    ranks
}

/// Datasets by methods, mean accuracy per cell.
#[derive(Debug, Clone, PartialEq)]
pub struct ResultsMatrix {
    pub datasets: Vec<String>,
    pub methods: Vec<String>,
    pub values: Vec<Vec<f64>>,
}

impl ResultsMatrix {
    pub fn new(datasets: Vec<String>, methods: Vec<String>, values: Vec<Vec<f64>>) -> Result<Self> {
        if values.len() != datasets.len() || values.iter().any(|r| r.len() != methods.len()) {
            return Err(Error::ShapeMismatch("results matrix does not match its names".into()));
        }
        for names in [&datasets, &methods] {
            let mut sorted = names.clone();
            sorted.sort();
            sorted.dedup();
            if sorted.len() != names.len() {
                return Err(Error::InvalidArgument("duplicate row or column name".into()));
            }
        }
        if values.iter().flatten().any(|v| !v.is_finite()) {
            return Err(Error::InvalidArgument("missing or non-finite entry".into()));
        }
        Ok(ResultsMatrix {
            datasets,
            methods,
            values,
        })
    }

    pub fn column(&self, method: usize) -> Vec<f64> {
        self.values.iter().map(|r| r[method]).collect()
    }

    pub fn method_index(&self, name: &str) -> Option<usize> {
        self.methods.iter().position(|m| m == name)
    }
}

/// Mean rank of every method across datasets (1 = best).
pub fn friedman_ranks(m: &ResultsMatrix) -> Result<Vec<f64>> {
    if m.methods.len() < 2 || m.datasets.is_empty() {
        return Err(Error::InvalidArgument(
            "Friedman ranks need at least two methods and one dataset".into(),
        ));
    }
    let mut total = vec![0.0; m.methods.len()];
    for row in &m.values {
        let negated: Vec<f64> = row.iter().map(|v| -v).collect();
        for (t, r) in total.iter_mut().zip(mean_ranks(&negated)) {
            *t += r;
        }
    }
    let n = m.datasets.len() as f64;
    Ok(total.into_iter().map(|t| t / n).collect())
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct WilcoxonOutcome {
    pub r_plus: f64,
    pub r_minus: f64,
    pub n_effective: usize,
    pub p_value: f64,
    pub rejected_at_005: bool,
    pub exact: bool,
}

fn normal_two_sided(z: f64) -> f64 {
    erfc(z.abs() / std::f64::consts::SQRT_2).min(1.0)
}

/// Two-sided p-value from the normal approximation with continuity
/// correction and a tie-corrected variance.
pub fn wilcoxon_normal_p(r_plus: f64, n: usize, tie_correction: f64) -> f64 {
    let nf = n as f64;
    let mean = nf * (nf + 1.0) / 4.0;
    let var = nf * (nf + 1.0) * (2.0 * nf + 1.0) / 24.0 - tie_correction / 48.0;
    if var <= 0.0 {
        return 1.0;
    }
    let z = ((r_plus - mean).abs() - 0.5).max(0.0) / var.sqrt();
    normal_two_sided(z)
}

/// Outcome reconstructed from published rank sums (no tie information).
pub fn wilcoxon_from_rank_sums(r_plus: f64, r_minus: f64) -> Result<WilcoxonOutcome> {
    let total = r_plus + r_minus;
    // n(n+1)/2 = total
    let n = ((-1.0 + (1.0 + 8.0 * total).sqrt()) / 2.0).round() as usize;
    if n == 0 || ((n * (n + 1)) as f64 / 2.0 - total).abs() > 1e-9 {
        return Err(Error::InvalidArgument(format!(
            "rank sums {r_plus} + {r_minus} are not a triangular number"
        )));
    }
    let p = wilcoxon_normal_p(r_plus, n, 0.0);
    Ok(WilcoxonOutcome {
        r_plus,
        r_minus,
        n_effective: n,
        p_value: p,
        rejected_at_005: p < 0.05,
        exact: false,
    })
}

fn exact_two_sided(ranks: &[f64], r_plus: f64) -> f64 {
    // doubled ranks are integers, so sums compare exactly
    let doubled: Vec<u64> = ranks.iter().map(|r| (r * 2.0).round() as u64).collect();
    let obs = (r_plus * 2.0).round() as u64;
    let n = doubled.len();
    let (mut le, mut ge) = (0u64, 0u64);
    for mask in 0u32..(1 << n) {
        let s: u64 = (0..n).filter(|&i| mask & (1 << i) != 0).map(|i| doubled[i]).sum();
        if s <= obs {
            le += 1;
        }
        if s >= obs {
            ge += 1;
        }
    }
    let total = (1u64 << n) as f64;
    (2.0 * le.min(ge) as f64 / total).min(1.0)
}

/// Paired two-sided signed-rank test on `a - b`. Zero differences are
/// dropped; up to 12 remaining pairs use the exact null distribution.
pub fn wilcoxon_signed_rank(a: &[f64], b: &[f64]) -> Result<WilcoxonOutcome> {
    if a.len() != b.len() {
        return Err(Error::DimensionMismatch {
            expected: a.len(),
            found: b.len(),
        });
    }
    let d: Vec<f64> = a.iter().zip(b).map(|(x, y)| x - y).filter(|d| *d != 0.0).collect();
    if d.is_empty() {
        return Err(Error::InvalidArgument("all paired differences are zero".into()));
    }
    let abs: Vec<f64> = d.iter().map(|v| v.abs()).collect();
    let ranks = mean_ranks(&abs);
    let r_plus: f64 = d
        .iter()
        .zip(&ranks)
        .filter(|(v, _)| **v > 0.0)
        .fold(0.0, |s, (_, r)| s + r);
    let r_minus: f64 = d
        .iter()
        .zip(&ranks)
        .filter(|(v, _)| **v < 0.0)
        .fold(0.0, |s, (_, r)| s + r);
    let n = d.len();
    let (p, exact) = if n <= EXACT_MAX_N {
        (exact_two_sided(&ranks, r_plus), true)
    } else {
        let mut sorted = abs.clone();
        sorted.sort_by(f64::total_cmp);
        let mut ties = 0.0;
        let mut i = 0;
        while i < sorted.len() {
            let j = sorted[i..].iter().take_while(|v| **v == sorted[i]).count();
            let t = j as f64;
            ties += t * t * t - t;
            i += j;
        }
        (wilcoxon_normal_p(r_plus, n, ties), false)
    };
    Ok(WilcoxonOutcome {
        r_plus,
        r_minus,
        n_effective: n,
        p_value: p,
        rejected_at_005: p < 0.05,
        exact,
    })
}

/// Win counts needed for significance at each of [`SIGN_TEST_ALPHAS`].
pub fn critical_values(n: usize) -> [f64; 3] {
    if n == 42 {
        return PUBLISHED_CRITICAL_42;
    }
    critical_values_formula(n)
}

pub fn critical_values_formula(n: usize) -> [f64; 3] {
    let nf = n as f64;
    SIGN_TEST_Z.map(|z| nf / 2.0 + z * nf.sqrt() / 2.0)
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct WinTieLoss {
    pub wins: usize,
    pub ties: usize,
    pub losses: usize,
    pub critical: [f64; 3],
    /// Per alpha in [`SIGN_TEST_ALPHAS`]: whether `wins + ties / 2` reaches
    /// the critical value.
    pub significant: [bool; 3],
}

pub fn win_tie_loss(a: &[f64], b: &[f64], tie_epsilon: f64) -> Result<WinTieLoss> {
    if a.len() != b.len() {
        return Err(Error::DimensionMismatch {
            expected: a.len(),
            found: b.len(),
        });
    }
    let (mut wins, mut ties, mut losses) = (0, 0, 0);
    for (x, y) in a.iter().zip(b) {
        if x - y > tie_epsilon {
            wins += 1;
        } else if y - x > tie_epsilon {
            losses += 1;
        } else {
            ties += 1;
        }
    }
    let critical = critical_values(a.len());
    let score = wins as f64 + ties as f64 / 2.0;
    Ok(WinTieLoss {
        wins,
        ties,
        losses,
        critical,
        significant: critical.map(|c| score >= c),
    })
}
