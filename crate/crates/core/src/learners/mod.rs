//! Probabilistic base classifiers and the pool that holds them.
//!
//! Every learner is fitted through [`fit`] from a [`LearnerSpec`] and answers
//! [`Classifier::predict_proba`] with a clamped, row-stochastic
//! [`ProbMatrix`].

mod knn;
mod logistic;
mod naive_bayes;
mod tree;

use std::fmt;
use std::str::FromStr;

use rand::Rng;
use rayon::prelude::*;

pub use knn::KnnClassifier;
pub use logistic::LogisticRegression;
pub use naive_bayes::GaussianNb;
pub use tree::DecisionTree;

use crate::error::{Error, Result};
use crate::matrix::{Matrix, ProbMatrix};
use crate::rng;

pub trait Classifier: fmt::Debug + Send + Sync {
    fn n_features(&self) -> usize;
    fn n_classes(&self) -> usize;

    /// Unclamped per-row class scores; rows need not be normalized.
    fn raw_proba(&self, x: &Matrix) -> Matrix;

    fn predict_proba(&self, x: &Matrix) -> Result<ProbMatrix> {
        if x.ncols() != self.n_features() {
            return Err(Error::DimensionMismatch {
                expected: self.n_features(),
                found: x.ncols(),
            });
        }
        Ok(ProbMatrix::clamped(self.raw_proba(x)))
    }
}

#[derive(Debug, Clone, PartialEq)]
pub enum LearnerSpec {
    DecisionTree { max_depth: Option<usize>, min_leaf: usize },
    GaussianNb { var_smoothing: f64 },
    LogisticRegression { max_iter: usize, l2: f64 },
    Knn { k: usize },
}

impl LearnerSpec {
    pub fn decision_tree() -> Self {
        LearnerSpec::DecisionTree {
            max_depth: None,
            min_leaf: 1,
        }
    }

    pub fn gaussian_nb() -> Self {
        LearnerSpec::GaussianNb { var_smoothing: 1e-9 }
    }

    pub fn logistic_regression() -> Self {
        LearnerSpec::LogisticRegression {
            max_iter: 1000,
            l2: 1.0,
        }
    }

    pub fn knn() -> Self {
        LearnerSpec::Knn { k: 5 }
    }

    /// The four in-scope families with their default settings.
    pub fn default_pool() -> Vec<LearnerSpec> {
        vec![
            Self::decision_tree(),
            Self::gaussian_nb(),
            Self::logistic_regression(),
            Self::knn(),
        ]
    }

    pub fn name(&self) -> &'static str {
        match self {
            LearnerSpec::DecisionTree { .. } => "decision_tree",
            LearnerSpec::GaussianNb { .. } => "gaussian_nb",
            LearnerSpec::LogisticRegression { .. } => "logistic_regression",
            LearnerSpec::Knn { .. } => "knn",
        }
    }

    pub fn validate(&self) -> Result<()> {
        let ok = match *self {
            LearnerSpec::DecisionTree { max_depth, min_leaf } => min_leaf >= 1 && max_depth.is_none_or(|d| d >= 1),
            LearnerSpec::GaussianNb { var_smoothing } => var_smoothing >= 0.0 && var_smoothing.is_finite(),
            LearnerSpec::LogisticRegression { max_iter, l2 } => max_iter >= 1 && l2 > 0.0 && l2.is_finite(),
            LearnerSpec::Knn { k } => k >= 1,
        };
        if ok {
            Ok(())
        } else {
            Err(Error::InvalidArgument(format!("invalid hyperparameters: {self:?}")))
        }
    }
}

impl FromStr for LearnerSpec {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "decision_tree" => Ok(Self::decision_tree()),
            "gaussian_nb" => Ok(Self::gaussian_nb()),
            "logistic_regression" => Ok(Self::logistic_regression()),
            "knn" => Ok(Self::knn()),
            other => Err(Error::Config(format!("unknown learner `{other}`"))),
        }
    }
}

/// Fits one classifier. `n_classes` is the class count of the whole task so
/// that outputs of models fitted on different subsets stay aligned.
pub fn fit(spec: &LearnerSpec, x: &Matrix, y: &[usize], n_classes: usize, seed: u64) -> Result<Box<dyn Classifier>> {
    spec.validate()?;
    check_training_set(x, y, n_classes)?;
    // All four in-scope learners are deterministic given the data.
    let _ = seed;
    Ok(match *spec {
        LearnerSpec::DecisionTree { max_depth, min_leaf } => {
            Box::new(DecisionTree::fit(x, y, n_classes, max_depth, min_leaf))
        }
        LearnerSpec::GaussianNb { var_smoothing } => Box::new(GaussianNb::fit(x, y, n_classes, var_smoothing)),
        LearnerSpec::LogisticRegression { max_iter, l2 } => {
            Box::new(LogisticRegression::fit(x, y, n_classes, max_iter, l2))
        }
        LearnerSpec::Knn { k } => Box::new(KnnClassifier::fit(x, y, n_classes, k)),
    })
}

fn check_training_set(x: &Matrix, y: &[usize], n_classes: usize) -> Result<()> {
    if x.nrows() != y.len() {
        return Err(Error::DimensionMismatch {
            expected: x.nrows(),
            found: y.len(),
        });
    }
    if y.len() < 2 {
        return Err(Error::DegenerateTrainingSet(format!("{} sample(s)", y.len())));
    }
    if let Some(&c) = y.iter().find(|&&c| c >= n_classes) {
        return Err(Error::InvalidArgument(format!("label {c} outside [0, {n_classes})")));
    }
    if y.iter().all(|&c| c == y[0]) {
        return Err(Error::DegenerateTrainingSet("single-class labels".into()));
    }
    if !x.all_finite() {
        return Err(Error::InvalidArgument("non-finite feature value".into()));
    }
    Ok(())
}

/// Row filter restricting a member's training data to a half-open window of
/// one feature.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct FeatureWindow {
    pub feature: usize,
    pub lo: f64,
    pub hi: f64,
}

impl FeatureWindow {
    pub fn contains(&self, row: &[f64]) -> bool {
        let v = row[self.feature];
        v >= self.lo && v < self.hi
    }
}

/// Everything needed to (re)fit one pool member on any training set: the
/// learner, an optional bootstrap seed and an optional training window.
#[derive(Debug, Clone, PartialEq)]
pub struct MemberRecipe {
    pub id: String,
    pub spec: LearnerSpec,
    pub bootstrap_seed: Option<u64>,
    pub window: Option<FeatureWindow>,
}

impl MemberRecipe {
    pub fn plain(spec: LearnerSpec) -> Self {
        MemberRecipe {
            id: spec.name().to_owned(),
            spec,
            bootstrap_seed: None,
            window: None,
        }
    }

    /// Rows of `x` this member trains on, in order (bootstrap draws repeat).
    pub fn training_rows(&self, x: &Matrix) -> Vec<usize> {
        let base: Vec<usize> = match &self.window {
            Some(w) => (0..x.nrows()).filter(|&i| w.contains(x.row(i))).collect(),
            None => (0..x.nrows()).collect(),
        };
        match self.bootstrap_seed {
            Some(seed) => {
                let mut rng = rng::stream(seed, "bootstrap");
                (0..base.len()).map(|_| base[rng.random_range(0..base.len())]).collect()
            }
            None => base,
        }
    }

    pub fn fit(&self, x: &Matrix, y: &[usize], n_classes: usize, seed: u64) -> Result<PoolMember> {
        let rows = self.training_rows(x);
        let xs = x.select_rows(&rows);
        let ys: Vec<usize> = rows.iter().map(|&i| y[i]).collect();
        let model = fit(&self.spec, &xs, &ys, n_classes, rng::derive_seed(seed, &self.id)).map_err(|e| match e {
            Error::DegenerateTrainingSet(msg) => Error::DegenerateTrainingSet(format!("member {}: {msg}", self.id)),
            other => other,
        })?;
        Ok(PoolMember {
            recipe: self.clone(),
            model,
        })
    }
}

#[derive(Debug)]
pub struct PoolMember {
    pub recipe: MemberRecipe,
    pub model: Box<dyn Classifier>,
}

impl PoolMember {
    pub fn id(&self) -> &str {
        &self.recipe.id
    }
}

#[derive(Debug)]
pub struct TrainedPool {
    pub members: Vec<PoolMember>,
    pub screening_acc: Option<Vec<f64>>,
}

impl TrainedPool {
    /// Fits every recipe on `(x, y)`; members fit in parallel but keep the
    /// recipe order.
    pub fn fit(recipes: &[MemberRecipe], x: &Matrix, y: &[usize], n_classes: usize, seed: u64) -> Result<Self> {
        let mut seen = std::collections::HashSet::new();
        for r in recipes {
            if !seen.insert(r.id.as_str()) {
                return Err(Error::InvalidArgument(format!("duplicate pool id `{}`", r.id)));
            }
        }
        let members = recipes
            .par_iter()
            .map(|r| r.fit(x, y, n_classes, seed))
            .collect::<Result<Vec<_>>>()?;
        Ok(TrainedPool {
            members,
            screening_acc: None,
        })
    }

    pub fn len(&self) -> usize {
        self.members.len()
    }

    pub fn is_empty(&self) -> bool {
        self.members.is_empty()
    }

    pub fn ids(&self) -> Vec<&str> {
        self.members.iter().map(PoolMember::id).collect()
    }

    pub fn n_classes(&self) -> usize {
        self.members.first().map_or(0, |m| m.model.n_classes())
    }

    /// One prediction matrix per member, in pool order.
    pub fn predict_all(&self, x: &Matrix) -> Result<Vec<ProbMatrix>> {
        self.members.iter().map(|m| m.model.predict_proba(x)).collect()
    }
}

/// `m` bootstrap replicas of `spec`, ids `bag-000` … `bag-(m-1)`.
pub fn bag_recipes(spec: &LearnerSpec, m: usize, seed: u64) -> Vec<MemberRecipe> {
    (0..m)
        .map(|i| {
            let id = format!("bag-{i:03}");
            MemberRecipe {
                bootstrap_seed: Some(rng::derive_seed(seed, &id)),
                id,
                spec: spec.clone(),
                window: None,
            }
        })
        .collect()
}

/// Homogeneous bagged pool.
pub fn bag(spec: &LearnerSpec, x: &Matrix, y: &[usize], n_classes: usize, m: usize, seed: u64) -> Result<TrainedPool> {
    if m == 0 {
        return Err(Error::InvalidArgument("bag size must be at least 1".into()));
    }
    TrainedPool::fit(&bag_recipes(spec, m, seed), x, y, n_classes, seed)
}
