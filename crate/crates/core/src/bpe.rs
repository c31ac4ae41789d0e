//! Behavioral profiling ensemble.
//!
//! Offline, each pool member is run over a Gaussian-perturbed copy of the
//! (standardized) training features and the mean and sample standard
//! deviation of its confidence score are stored as its profile. Online, a
//! member's weight for a test row is a softmax over how far its confidence
//! on that row sits above or below its own profile:
//!
//! ```text
//! S_k = sum_c p_kc ln p_kc
//! z_k = clip((S_k - mu_k) / (sigma_k + xi), -clip, clip)
//! w_k = exp(lambda z_k) / sum_j exp(lambda z_j)
//! H   = sum_k w_k p_k
//! ```
//!
//! Nothing from the training or reference data is consulted at inference,
//! so per-row cost is `O(K * C)` regardless of the training size.

use std::fmt;
use std::io::{BufRead, BufReader, Read, Write};
use std::str::FromStr;

use crate::data::perturb;
use crate::error::{Error, Result};
use crate::learners::{Classifier, TrainedPool};
use crate::matrix::{Matrix, ProbMatrix};

pub const DEFAULT_LAMBDA: f64 = 1.0;
pub const DEFAULT_DELTA: f64 = 0.5;
pub const DEFAULT_XI: f64 = 1e-12;
pub const DEFAULT_CLIP: f64 = 5.0;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Default)]
pub enum ScoreKind {
    /// Negative Shannon entropy (natural log); 0 for a one-hot row.
    #[default]
    NegEntropy,
    /// Difference between the two largest probabilities.
    TopMargin,
}

impl ScoreKind {
    pub fn as_str(self) -> &'static str {
        match self {
            ScoreKind::NegEntropy => "neg_entropy",
            ScoreKind::TopMargin => "top_margin",
        }
    }
}

impl fmt::Display for ScoreKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for ScoreKind {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "neg_entropy" => Ok(ScoreKind::NegEntropy),
            "top_margin" => Ok(ScoreKind::TopMargin),
            other => Err(Error::Config(format!("unknown score kind `{other}`"))),
        }
    }
}

pub fn score(p: &[f64], kind: ScoreKind) -> f64 {
    match kind {
        ScoreKind::NegEntropy => p.iter().filter(|&&v| v > 0.0).map(|&v| v * v.ln()).sum(),
        ScoreKind::TopMargin => {
            let (mut first, mut second) = (f64::NEG_INFINITY, f64::NEG_INFINITY);
            for &v in p {
                if v > first {
                    second = first;
                    first = v;
                } else if v > second {
                    second = v;
                }
            }
            if second == f64::NEG_INFINITY {
                first
            } else {
                first - second
            }
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct BehavioralProfile {
    pub model_id: String,
    pub score_kind: ScoreKind,
    pub mu: f64,
    pub sigma: f64,
    pub delta: f64,
    pub n: usize,
}

/// Mean and sample (N-1) standard deviation.
pub fn mean_and_sd(scores: &[f64]) -> Result<(f64, f64)> {
    if scores.len() < 2 {
        return Err(Error::InvalidArgument(format!(
            "profiling needs at least 2 samples, got {}",
            scores.len()
        )));
    }
    let n = scores.len() as f64;
    let mu = scores.iter().sum::<f64>() / n;
    let var = scores.iter().map(|s| (s - mu).powi(2)).sum::<f64>() / (n - 1.0);
    Ok((mu, var.sqrt()))
}

fn profile_from_outputs(id: &str, p: &ProbMatrix, kind: ScoreKind, delta: f64) -> Result<BehavioralProfile> {
    let scores: Vec<f64> = (0..p.nrows()).map(|i| score(p.row(i), kind)).collect();
    let (mu, sigma) = mean_and_sd(&scores)?;
    Ok(BehavioralProfile {
        model_id: id.to_owned(),
        score_kind: kind,
        mu,
        sigma,
        delta,
        n: scores.len(),
    })
}

/// Profiles one model. `x_train` must already be standardized.
pub fn build_profile(
    model_id: &str,
    model: &dyn Classifier,
    x_train: &Matrix,
    delta: f64,
    seed: u64,
    kind: ScoreKind,
) -> Result<BehavioralProfile> {
    if x_train.nrows() < 2 {
        return Err(Error::InvalidArgument(format!(
            "profiling needs at least 2 samples, got {}",
            x_train.nrows()
        )));
    }
    let perturbed = perturb(x_train, delta, seed)?;
    profile_from_outputs(model_id, &model.predict_proba(&perturbed)?, kind, delta)
}

/// Profiles every pool member against one shared perturbed copy of the
/// training set.
pub fn build_profiles(
    pool: &TrainedPool,
    x_train: &Matrix,
    delta: f64,
    seed: u64,
    kind: ScoreKind,
) -> Result<Vec<BehavioralProfile>> {
    if x_train.nrows() < 2 {
        return Err(Error::InvalidArgument(format!(
            "profiling needs at least 2 samples, got {}",
            x_train.nrows()
        )));
    }
    let perturbed = perturb(x_train, delta, seed)?;
    pool.members
        .iter()
        .map(|m| profile_from_outputs(m.id(), &m.model.predict_proba(&perturbed)?, kind, delta))
        .collect()
}

pub fn z_score(s_test: f64, profile: &BehavioralProfile, xi: f64, clip: f64) -> f64 {
    let z = (s_test - profile.mu) / (profile.sigma + xi);
    if z.is_nan() {
        0.0
    } else {
        z.clamp(-clip, clip)
    }
}

/// Non-negative weights summing to one.
#[derive(Debug, Clone, PartialEq)]
pub struct WeightVector(Vec<f64>);

impl WeightVector {
    pub const SUM_TOL: f64 = 1e-9;

    pub fn new(w: Vec<f64>) -> Result<Self> {
        let ok = !w.is_empty()
            && w.iter().all(|&v| v >= 0.0 && v.is_finite())
            && (w.iter().sum::<f64>() - 1.0).abs() <= Self::SUM_TOL;
        if ok {
            Ok(WeightVector(w))
        } else {
            Err(Error::InvalidArgument(format!("not a weight vector: {w:?}")))
        }
    }

    /// `1/K` each; all entries bit-identical.
    pub fn uniform(k: usize) -> Self {
        WeightVector(vec![1.0 / k as f64; k])
    }

    /// Normalizes non-negative competences; all-zero becomes uniform.
    pub fn from_competences(c: &[f64]) -> Self {
        let s: f64 = c.iter().sum();
        if s > 0.0 && s.is_finite() {
            WeightVector(c.iter().map(|v| v / s).collect())
        } else {
            Self::uniform(c.len())
        }
    }

    pub fn as_slice(&self) -> &[f64] {
        &self.0
    }

    pub fn len(&self) -> usize {
        self.0.len()
    }

    pub fn is_empty(&self) -> bool {
        self.0.is_empty()
    }
}

/// Softmax of `lambda * z` with max-subtraction.
pub fn weights(z: &[f64], lambda: f64) -> WeightVector {
    let scaled: Vec<f64> = z.iter().map(|&v| lambda * v).collect();
    let max = scaled.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
    let e: Vec<f64> = scaled.iter().map(|&v| (v - max).exp()).collect();
    let s: f64 = e.iter().sum();
    WeightVector(e.into_iter().map(|v| v / s).collect())
}

/// `out = sum_k w_k rows[k]`, then renormalized to unit sum.
pub fn fuse_row(rows: &[&[f64]], w: &[f64], out: &mut [f64]) {
    out.iter_mut().for_each(|v| *v = 0.0);
    for (row, &wk) in rows.iter().zip(w) {
        for (o, &p) in out.iter_mut().zip(row.iter()) {
            *o += wk * p;
        }
    }
    crate::matrix::normalize(out);
}

fn check_outputs(outputs: &[ProbMatrix], k: usize) -> Result<(usize, usize)> {
    let first = outputs
        .first()
        .ok_or_else(|| Error::ShapeMismatch("no model outputs to fuse".into()))?;
    if outputs.len() != k {
        return Err(Error::ShapeMismatch(format!(
            "{} outputs for {k} weights",
            outputs.len()
        )));
    }
    let (n, c) = (first.nrows(), first.nclasses());
    for (i, o) in outputs.iter().enumerate() {
        if o.nrows() != n || o.nclasses() != c {
            return Err(Error::ShapeMismatch(format!(
                "output {i} is {}x{}, expected {n}x{c}",
                o.nrows(),
                o.nclasses()
            )));
        }
    }
    Ok((n, c))
}

/// Static fusion: one weight vector for every row.
pub fn fuse(outputs: &[ProbMatrix], w: &WeightVector) -> Result<ProbMatrix> {
    let (n, c) = check_outputs(outputs, w.len())?;
    let mut out = Matrix::zeros(n, c);
    let mut rows = Vec::with_capacity(outputs.len());
    for i in 0..n {
        rows.clear();
        rows.extend(outputs.iter().map(|o| o.row(i)));
        fuse_row(&rows, w.as_slice(), out.row_mut(i));
    }
    Ok(ProbMatrix::normalized(out))
}

/// Borda scores of one row: the largest probability gets `C - 1`, the
/// smallest 0; tied entries share the mean of their ranks.
pub fn borda_scores(row: &[f64]) -> Vec<f64> {
    let c = row.len();
    let mut order: Vec<usize> = (0..c).collect();
    order.sort_by(|&a, &b| row[a].total_cmp(&row[b]).then(a.cmp(&b)));
    let mut out = vec![0.0; c];
    let mut i = 0;
    while i < c {
        let mut j = i;
        while j + 1 < c && row[order[j + 1]] == row[order[i]] {
            j += 1;
        }
        let mean_rank = (i + j) as f64 / 2.0;
        for &o in &order[i..=j] {
            out[o] = mean_rank;
        }
        i = j + 1;
    }
    out
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct BpeParams {
    pub lambda: f64,
    pub xi: f64,
    pub clip: f64,
    pub score: ScoreKind,
}

impl Default for BpeParams {
    fn default() -> Self {
        BpeParams {
            lambda: DEFAULT_LAMBDA,
            xi: DEFAULT_XI,
            clip: DEFAULT_CLIP,
            score: ScoreKind::NegEntropy,
        }
    }
}

impl BpeParams {
    pub fn validate(&self) -> Result<()> {
        if !(self.lambda >= 0.0 && self.lambda.is_finite()) {
            return Err(Error::InvalidArgument(format!("lambda {}", self.lambda)));
        }
        if self.xi.is_nan() || self.xi <= 0.0 {
            return Err(Error::InvalidArgument(format!("xi {}", self.xi)));
        }
        if self.clip.is_nan() || self.clip <= 0.0 {
            return Err(Error::InvalidArgument(format!("clip {}", self.clip)));
        }
        Ok(())
    }
}

fn check_profiles(ids: &[&str], profiles: &[BehavioralProfile], kind: ScoreKind) -> Result<()> {
    if ids.len() != profiles.len() {
        return Err(Error::ShapeMismatch(format!(
            "{} pool members but {} profiles",
            ids.len(),
            profiles.len()
        )));
    }
    for (id, p) in ids.iter().zip(profiles) {
        if *id != p.model_id {
            return Err(Error::IdMismatch {
                pool: (*id).to_owned(),
                profile: p.model_id.clone(),
            });
        }
        if p.score_kind != kind {
            return Err(Error::InvalidArgument(format!(
                "profile `{}` uses {} but prediction asks for {kind}",
                p.model_id, p.score_kind
            )));
        }
    }
    Ok(())
}

/// Per-row weight vector for each test row.
pub fn instance_weights(
    outputs: &[ProbMatrix],
    profiles: &[BehavioralProfile],
    params: &BpeParams,
) -> Result<Vec<WeightVector>> {
    params.validate()?;
    let (n, _) = check_outputs(outputs, profiles.len())?;
    let mut z = vec![0.0; outputs.len()];
    Ok((0..n)
        .map(|i| {
            for ((zk, o), prof) in z.iter_mut().zip(outputs).zip(profiles) {
                *zk = z_score(score(o.row(i), params.score), prof, params.xi, params.clip);
            }
            weights(&z, params.lambda)
        })
        .collect())
}

/// Fuses precomputed member outputs (in pool order) with per-row weights.
pub fn bpe_fuse_outputs(
    outputs: &[ProbMatrix],
    profiles: &[BehavioralProfile],
    params: &BpeParams,
) -> Result<ProbMatrix> {
    let ws = instance_weights(outputs, profiles, params)?;
    let (n, c) = (outputs[0].nrows(), outputs[0].nclasses());
    let mut out = Matrix::zeros(n, c);
    let mut rows = Vec::with_capacity(outputs.len());
    for (i, w) in ws.iter().enumerate() {
        rows.clear();
        rows.extend(outputs.iter().map(|o| o.row(i)));
        fuse_row(&rows, w.as_slice(), out.row_mut(i));
    }
    Ok(ProbMatrix::normalized(out))
}

pub fn bpe_predict(
    pool: &TrainedPool,
    profiles: &[BehavioralProfile],
    x_test: &Matrix,
    params: &BpeParams,
) -> Result<ProbMatrix> {
    check_profiles(&pool.ids(), profiles, params.score)?;
    let outputs = pool.predict_all(x_test)?;
    bpe_fuse_outputs(&outputs, profiles, params)
}

/// Rank-fusion variant: weights are computed exactly as in [`bpe_predict`]
/// but applied to per-row Borda scores. The result is a score matrix, not a
/// distribution; argmax gives the predicted class.
pub fn bpe_predict_ranked(
    pool: &TrainedPool,
    profiles: &[BehavioralProfile],
    x_test: &Matrix,
    params: &BpeParams,
) -> Result<Matrix> {
    check_profiles(&pool.ids(), profiles, params.score)?;
    let outputs = pool.predict_all(x_test)?;
    let ws = instance_weights(&outputs, profiles, params)?;
    let (n, c) = (outputs[0].nrows(), outputs[0].nclasses());
    let mut out = Matrix::zeros(n, c);
    for (i, w) in ws.iter().enumerate() {
        let row = out.row_mut(i);
        for (o, &wk) in outputs.iter().zip(w.as_slice()) {
            for (r, b) in row.iter_mut().zip(borda_scores(o.row(i))) {
                *r += wk * b;
            }
        }
    }
    Ok(out)
}

// ---------------------------------------------------------------------------
// Profile store

const STORE_HEADER: &str = "model_id,score_kind,mu,sigma,delta,n";

/// 17 significant digits with an explicit sign and a 3-digit exponent, so a
/// record's width depends only on its id and score kind.
fn fmt_real(v: f64) -> String {
    let s = format!("{v:+.16e}");
    let (mant, exp) = s.split_once('e').expect("exponent form");
    let exp: i32 = exp.parse().expect("integer exponent");
    format!("{mant}e{exp:+04}")
}

pub fn write_profiles<W: Write>(mut w: W, profiles: &[BehavioralProfile]) -> Result<()> {
    let io = |e| Error::io("<profile store>", e);
    writeln!(w, "{STORE_HEADER}").map_err(io)?;
    for p in profiles {
        if p.model_id.contains([',', '\n', '\r']) {
            return Err(Error::InvalidArgument(format!(
                "model id `{}` cannot be stored",
                p.model_id
            )));
        }
        if !(p.mu.is_finite() && p.sigma.is_finite() && p.delta.is_finite()) {
            return Err(Error::InvalidArgument(format!(
                "non-finite profile for `{}`",
                p.model_id
            )));
        }
        writeln!(
            w,
            "{},{},{},{},{},{:020}",
            p.model_id,
            p.score_kind,
            fmt_real(p.mu),
            fmt_real(p.sigma),
            fmt_real(p.delta),
            p.n
        )
        .map_err(io)?;
    }
    Ok(())
}

pub fn profiles_to_string(profiles: &[BehavioralProfile]) -> Result<String> {
    let mut buf = Vec::new();
    write_profiles(&mut buf, profiles)?;
    Ok(String::from_utf8(buf).expect("ascii output"))
}

pub fn read_profiles<R: Read>(r: R) -> Result<Vec<BehavioralProfile>> {
    let mut lines = BufReader::new(r).lines();
    let io = |e| Error::io("<profile store>", e);
    let header = lines.next().transpose().map_err(io)?;
    if header.as_deref().map(str::trim_end) != Some(STORE_HEADER) {
        return Err(Error::Csv("profile store header missing".into()));
    }
    let mut out = Vec::new();
    for (k, line) in lines.enumerate() {
        let line = line.map_err(io)?;
        if line.trim().is_empty() {
            continue;
        }
        let f: Vec<&str> = line.split(',').collect();
        if f.len() != 6 {
            return Err(Error::RaggedRow {
                line: k + 2,
                expected: 6,
                found: f.len(),
            });
        }
        let real = |s: &str| {
            s.parse::<f64>()
                .map_err(|_| Error::Csv(format!("line {}: bad number `{s}`", k + 2)))
        };
        out.push(BehavioralProfile {
            model_id: f[0].to_owned(),
            score_kind: f[1].parse()?,
            mu: real(f[2])?,
            sigma: real(f[3])?,
            delta: real(f[4])?,
            n: f[5]
                .parse()
                .map_err(|_| Error::Csv(format!("line {}: bad count `{}`", k + 2, f[5])))?,
        });
    }
    Ok(out)
}
