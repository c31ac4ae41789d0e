//! Experiment configuration, read from TOML. Unknown keys are rejected.

use std::fmt;
use std::path::{Path, PathBuf};
use std::str::FromStr;

use serde::Deserialize;

use crate::baselines::{DesKnnParams, DiversityMeasure, DynamicMethod, DEFAULT_MCB_THETA, DEFAULT_ROC_K};
use crate::bpe::{BpeParams, ScoreKind, DEFAULT_CLIP, DEFAULT_DELTA, DEFAULT_LAMBDA, DEFAULT_XI};
use crate::error::{Error, Result};
use crate::learners::LearnerSpec;
use crate::synthetic::SyntheticSpec;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Deserialize)]
#[serde(try_from = "String")]
pub enum Method {
    BpeEntropy,
    SingleBest,
    SimpleAverage,
    MedianAverage,
    WeightedAverage,
    Lca,
    Mcb,
    KnoraU,
    KnoraE,
    Rrc,
    DesKnnDf,
    DesKnnQ,
    DesKnnRe,
}

impl Method {
    pub const ALL: [Method; 13] = [
        Method::BpeEntropy,
        Method::SingleBest,
        Method::SimpleAverage,
        Method::MedianAverage,
        Method::WeightedAverage,
        Method::Lca,
        Method::Mcb,
        Method::KnoraU,
        Method::KnoraE,
        Method::Rrc,
        Method::DesKnnDf,
        Method::DesKnnQ,
        Method::DesKnnRe,
    ];

    pub fn as_str(self) -> &'static str {
        match self {
            Method::BpeEntropy => "bpe_entropy",
            Method::SingleBest => "single_best",
            Method::SimpleAverage => "simple_average",
            Method::MedianAverage => "median_average",
            Method::WeightedAverage => "weighted_average",
            Method::Lca => "lca",
            Method::Mcb => "mcb",
            Method::KnoraU => "knora_u",
            Method::KnoraE => "knora_e",
            Method::Rrc => "rrc",
            Method::DesKnnDf => "des_knn_df",
            Method::DesKnnQ => "des_knn_q",
            Method::DesKnnRe => "des_knn_re",
        }
    }

    /// Whether the method reads a reference set of held-out predictions.
    pub fn needs_reference(self) -> bool {
        !matches!(
            self,
            Method::BpeEntropy | Method::SingleBest | Method::SimpleAverage | Method::MedianAverage
        )
    }

    pub fn dynamic(self) -> Option<DynamicMethod> {
        let des = |m| Some(DynamicMethod::DesKnn(DesKnnParams::new(m)));
        match self {
            Method::Lca => Some(DynamicMethod::Lca),
            Method::Mcb => Some(DynamicMethod::Mcb {
                theta: DEFAULT_MCB_THETA,
            }),
            Method::KnoraU => Some(DynamicMethod::KnoraU),
            Method::KnoraE => Some(DynamicMethod::KnoraE),
            Method::Rrc => Some(DynamicMethod::Rrc),
            Method::DesKnnDf => des(DiversityMeasure::DoubleFault),
            Method::DesKnnQ => des(DiversityMeasure::QStatistic),
            Method::DesKnnRe => des(DiversityMeasure::RatioErrors),
            _ => None,
        }
    }
}

impl fmt::Display for Method {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for Method {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        Method::ALL
            .into_iter()
            .find(|m| m.as_str() == s)
            .ok_or_else(|| Error::Config(format!("unknown method `{s}`")))
    }
}

impl TryFrom<String> for Method {
    type Error = Error;

    fn try_from(s: String) -> Result<Self> {
        s.parse()
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ReferenceMode {
    #[default]
    Oof,
    FixedSplit,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum PoolKind {
    #[default]
    Heterogeneous,
    Bagged,
    RegionExperts,
}

#[derive(Debug, Clone, PartialEq, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct PoolConfig {
    #[serde(default)]
    pub kind: PoolKind,
    /// Heterogeneous pool members.
    #[serde(default = "default_learners")]
    pub learners: Vec<String>,
    #[serde(default = "default_bag_learner")]
    pub bag_learner: String,
    #[serde(default = "default_bag_size")]
    pub bag_size: usize,
    #[serde(default = "default_expert_learner")]
    pub expert_learner: String,
    #[serde(default = "default_regions")]
    pub regions: usize,
}

fn default_learners() -> Vec<String> {
    LearnerSpec::default_pool()
        .iter()
        .map(|s| s.name().to_owned())
        .collect()
}

fn default_bag_learner() -> String {
    "decision_tree".into()
}

fn default_bag_size() -> usize {
    40
}

fn default_expert_learner() -> String {
    "logistic_regression".into()
}

fn default_regions() -> usize {
    3
}

impl Default for PoolConfig {
    fn default() -> Self {
        PoolConfig {
            kind: PoolKind::default(),
            learners: default_learners(),
            bag_learner: default_bag_learner(),
            bag_size: default_bag_size(),
            expert_learner: default_expert_learner(),
            regions: default_regions(),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct BpeConfig {
    #[serde(default = "default_lambda")]
    pub lambda: f64,
    #[serde(default = "default_delta")]
    pub delta: f64,
    #[serde(default = "default_xi")]
    pub xi: f64,
    #[serde(default = "default_clip")]
    pub clip: f64,
    #[serde(default, deserialize_with = "score_kind")]
    pub score: ScoreKind,
}

fn default_lambda() -> f64 {
    DEFAULT_LAMBDA
}

fn default_delta() -> f64 {
    DEFAULT_DELTA
}

fn default_xi() -> f64 {
    DEFAULT_XI
}

fn default_clip() -> f64 {
    DEFAULT_CLIP
}

fn score_kind<'de, D: serde::Deserializer<'de>>(d: D) -> std::result::Result<ScoreKind, D::Error> {
    let s = String::deserialize(d)?;
    s.parse().map_err(serde::de::Error::custom)
}

impl Default for BpeConfig {
    fn default() -> Self {
        BpeConfig {
            lambda: DEFAULT_LAMBDA,
            delta: DEFAULT_DELTA,
            xi: DEFAULT_XI,
            clip: DEFAULT_CLIP,
            score: ScoreKind::NegEntropy,
        }
    }
}

impl BpeConfig {
    pub fn params(&self) -> BpeParams {
        BpeParams {
            lambda: self.lambda,
            xi: self.xi,
            clip: self.clip,
            score: self.score,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct DatasetConfig {
    pub name: String,
    pub path: Option<PathBuf>,
    pub label: Option<String>,
    pub synthetic: Option<SyntheticSpec>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum SweepAxis {
    Lambda,
    Delta,
    Alpha,
}

impl SweepAxis {
    pub fn as_str(self) -> &'static str {
        match self {
            SweepAxis::Lambda => "lambda",
            SweepAxis::Delta => "delta",
            SweepAxis::Alpha => "alpha",
        }
    }

    pub fn default_values(self) -> Vec<f64> {
        match self {
            SweepAxis::Lambda => vec![0.5, 0.7, 1.2, 1.5],
            SweepAxis::Delta => vec![0.1, 0.3, 0.7, 1.0],
            SweepAxis::Alpha => vec![0.05, 0.1, 0.15, 0.2, 0.25],
        }
    }
}

impl FromStr for SweepAxis {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        let parts: Vec<&str> = s.split(',').map(str::trim).filter(|p| !p.is_empty()).collect();
        if parts.len() != 1 {
            return Err(Error::InvalidArgument(format!(
                "a sweep varies exactly one axis, got `{s}`"
            )));
        }
        match parts[0] {
            "lambda" => Ok(SweepAxis::Lambda),
            "delta" => Ok(SweepAxis::Delta),
            "alpha" => Ok(SweepAxis::Alpha),
            other => Err(Error::InvalidArgument(format!(
                "unknown sweep axis `{other}` (expected lambda, delta or alpha)"
            ))),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Default, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SweepConfig {
    pub lambda: Option<Vec<f64>>,
    pub delta: Option<Vec<f64>>,
    pub alpha: Option<Vec<f64>>,
}

impl SweepConfig {
    fn get(&self, axis: SweepAxis) -> Option<&Vec<f64>> {
        match axis {
            SweepAxis::Lambda => self.lambda.as_ref(),
            SweepAxis::Delta => self.delta.as_ref(),
            SweepAxis::Alpha => self.alpha.as_ref(),
        }
    }

    pub fn axes(&self) -> Vec<SweepAxis> {
        [SweepAxis::Lambda, SweepAxis::Delta, SweepAxis::Alpha]
            .into_iter()
            .filter(|a| self.get(*a).is_some())
            .collect()
    }
}

#[derive(Debug, Clone, PartialEq, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ExperimentConfig {
    pub datasets: Vec<DatasetConfig>,
    #[serde(default = "default_methods")]
    pub methods: Vec<Method>,
    #[serde(default)]
    pub pool: PoolConfig,
    #[serde(default = "default_alpha")]
    pub screening_alpha: f64,
    #[serde(default = "default_folds")]
    pub oof_folds: usize,
    #[serde(default)]
    pub master_seed: u64,
    #[serde(default = "default_n_seeds")]
    pub n_seeds: usize,
    /// Explicit seeds; overrides `master_seed` and `n_seeds`.
    pub seeds: Option<Vec<u64>>,
    #[serde(default)]
    pub bpe: BpeConfig,
    #[serde(default = "default_roc_k")]
    pub roc_k: usize,
    #[serde(default = "default_test_fraction")]
    pub test_fraction: f64,
    #[serde(default = "default_max_samples")]
    pub max_samples: usize,
    #[serde(default)]
    pub reference_mode: ReferenceMode,
    #[serde(default)]
    pub record_timings: bool,
    pub sweep: Option<SweepConfig>,
    /// Directory that relative dataset paths resolve against.
    #[serde(skip)]
    pub base_dir: PathBuf,
}

fn default_methods() -> Vec<Method> {
    Method::ALL.to_vec()
}

fn default_alpha() -> f64 {
    0.15
}

fn default_folds() -> usize {
    5
}

fn default_n_seeds() -> usize {
    50
}

fn default_roc_k() -> usize {
    DEFAULT_ROC_K
}

fn default_test_fraction() -> f64 {
    0.25
}

fn default_max_samples() -> usize {
    10_000
}

impl ExperimentConfig {
    pub fn from_toml(text: &str) -> Result<Self> {
        let cfg: ExperimentConfig = toml::from_str(text).map_err(|e| Error::Config(e.to_string()))?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        if !path.exists() {
            return Err(Error::MissingFile(path.to_owned()));
        }
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        let mut cfg = Self::from_toml(&text)?;
        cfg.base_dir = path.parent().map(Path::to_owned).unwrap_or_default();
        Ok(cfg)
    }

    pub fn seed_list(&self) -> Vec<u64> {
        match &self.seeds {
            Some(s) => s.clone(),
            None => (0..self.n_seeds as u64)
                .map(|i| self.master_seed.wrapping_add(i))
                .collect(),
        }
    }

    pub fn validate(&self) -> Result<()> {
        let bad = |field: &str, why: String| Err(Error::Config(format!("{field}: {why}")));
        if self.datasets.is_empty() {
            return bad("datasets", "at least one dataset is required".into());
        }
        if self.methods.is_empty() {
            return bad("methods", "at least one method is required".into());
        }
        if !(0.0..1.0).contains(&self.screening_alpha) {
            return bad("screening_alpha", format!("{} outside [0, 1)", self.screening_alpha));
        }
        if self.oof_folds < 2 {
            return bad("oof_folds", format!("{} < 2", self.oof_folds));
        }
        if self.seed_list().is_empty() {
            return bad("seeds", "no seeds".into());
        }
        if !(self.test_fraction > 0.0 && self.test_fraction < 1.0) {
            return bad("test_fraction", format!("{} outside (0, 1)", self.test_fraction));
        }
        if self.roc_k == 0 {
            return bad("roc_k", "must be at least 1".into());
        }
        if self.max_samples < 4 {
            return bad("max_samples", format!("{} too small", self.max_samples));
        }
        if !(self.bpe.delta >= 0.0 && self.bpe.delta.is_finite()) {
            return bad("bpe.delta", format!("{}", self.bpe.delta));
        }
        self.bpe
            .params()
            .validate()
            .map_err(|e| Error::Config(format!("bpe: {e}")))?;
        self.pool_specs()?;
        let mut names: Vec<&str> = self.datasets.iter().map(|d| d.name.as_str()).collect();
        names.sort_unstable();
        if names.windows(2).any(|w| w[0] == w[1]) {
            return bad("datasets", "dataset names must be unique".into());
        }
        for d in &self.datasets {
            match (&d.path, &d.label, &d.synthetic) {
                (Some(_), Some(_), None) | (None, None, Some(_)) => {}
                _ => {
                    return bad(
                        &format!("datasets.{}", d.name),
                        "give either `path` and `label`, or `synthetic`".into(),
                    )
                }
            }
        }
        if let Some(s) = &self.sweep {
            for axis in s.axes() {
                let values = s.get(axis).expect("listed axis");
                if values.is_empty() {
                    return bad(&format!("sweep.{}", axis.as_str()), "empty value list".into());
                }
            }
        }
        Ok(())
    }

    /// Learner specs named by the pool section, validated.
    pub fn pool_specs(&self) -> Result<Vec<LearnerSpec>> {
        let names: Vec<&String> = match self.pool.kind {
            PoolKind::Heterogeneous => self.pool.learners.iter().collect(),
            PoolKind::Bagged => vec![&self.pool.bag_learner],
            PoolKind::RegionExperts => vec![&self.pool.expert_learner],
        };
        if names.is_empty() {
            return Err(Error::Config("pool.learners: empty pool".into()));
        }
        if self.pool.kind == PoolKind::Bagged && self.pool.bag_size == 0 {
            return Err(Error::Config("pool.bag_size: must be at least 1".into()));
        }
        if self.pool.kind == PoolKind::RegionExperts && self.pool.regions == 0 {
            return Err(Error::Config("pool.regions: must be at least 1".into()));
        }
        names
            .iter()
            .map(|n| {
                n.parse::<LearnerSpec>()
                    .map_err(|e| Error::Config(format!("pool: {e}")))
            })
            .collect()
    }

    /// Values for a sweep along `axis`: the `[sweep]` list if present, the
    /// standard grid otherwise.
    pub fn sweep_values(&self, axis: SweepAxis) -> Vec<f64> {
        self.sweep
            .as_ref()
            .and_then(|s| s.get(axis).cloned())
            .unwrap_or_else(|| axis.default_values())
    }

    /// The axis to sweep when none is given explicitly: the single axis
    /// listed under `[sweep]`.
    pub fn implied_axis(&self) -> Result<SweepAxis> {
        let axes = self.sweep.as_ref().map(SweepConfig::axes).unwrap_or_default();
        match axes.as_slice() {
            [one] => Ok(*one),
            [] => Err(Error::InvalidArgument("no sweep axis given".into())),
            _ => Err(Error::InvalidArgument(format!(
                "a sweep varies exactly one axis, config lists {}",
                axes.iter().map(|a| a.as_str()).collect::<Vec<_>>().join(", ")
            ))),
        }
    }

    /// Copy with one hyperparameter replaced.
    pub fn with_axis_value(&self, axis: SweepAxis, value: f64) -> Result<Self> {
        let mut c = self.clone();
        match axis {
            SweepAxis::Lambda => c.bpe.lambda = value,
            SweepAxis::Delta => c.bpe.delta = value,
            SweepAxis::Alpha => c.screening_alpha = value,
        }
        c.validate()?;
        Ok(c)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    const MINIMAL: &str = r#"
        [[datasets]]
        name = "toy"
        synthetic = { regions = 2, n_samples = 80 }
    "#;

    #[test]
    fn defaults() {
        let c = ExperimentConfig::from_toml(MINIMAL).unwrap();
        assert_eq!(c.screening_alpha, 0.15);
        assert_eq!(c.oof_folds, 5);
        assert_eq!(c.seed_list().len(), 50);
        assert_eq!(c.seed_list()[..3], [0, 1, 2]);
        assert_eq!(c.bpe.lambda, 1.0);
        assert_eq!(c.bpe.delta, 0.5);
        assert_eq!(c.roc_k, 7);
        assert_eq!(c.test_fraction, 0.25);
        assert_eq!(c.methods.len(), 13);
        assert_eq!(c.pool.bag_size, 40);
        assert_eq!(c.reference_mode, ReferenceMode::Oof);
    }

    #[test]
    fn unknown_keys_rejected() {
        let text = format!("{MINIMAL}\nbogus = 1\n");
        assert!(matches!(ExperimentConfig::from_toml(&text), Err(Error::Config(_))));
        let text = format!("[bpe]\nlambda = 1.0\ntemperature = 2\n{MINIMAL}");
        assert!(ExperimentConfig::from_toml(&text).is_err());
        let text = format!("methods = [\"bpe_entropy\", \"stacking\"]\n{MINIMAL}");
        let err = ExperimentConfig::from_toml(&text).unwrap_err().to_string();
        assert!(err.contains("stacking"), "{err}");
    }

    #[test]
    fn validation_names_field() {
        let text = format!("screening_alpha = 1.0\n{MINIMAL}");
        let err = ExperimentConfig::from_toml(&text).unwrap_err().to_string();
        assert!(err.contains("screening_alpha"), "{err}");
        let text = format!("oof_folds = 1\n{MINIMAL}");
        assert!(ExperimentConfig::from_toml(&text)
            .unwrap_err()
            .to_string()
            .contains("oof_folds"));
    }

    #[test]
    fn sweep_axes() {
        assert_eq!("lambda".parse::<SweepAxis>().unwrap(), SweepAxis::Lambda);
        assert!("lambda,delta".parse::<SweepAxis>().is_err());
        let c = ExperimentConfig::from_toml(MINIMAL).unwrap();
        assert_eq!(c.sweep_values(SweepAxis::Lambda), vec![0.5, 0.7, 1.2, 1.5]);
        assert_eq!(c.sweep_values(SweepAxis::Delta).len(), 4);
        assert_eq!(c.sweep_values(SweepAxis::Alpha).len(), 5);
        let two = format!("[sweep]\nlambda = [0.5]\ndelta = [0.1]\n{MINIMAL}");
        assert!(ExperimentConfig::from_toml(&two).unwrap().implied_axis().is_err());
    }

    #[test]
    fn method_names_round_trip() {
        for m in Method::ALL {
            assert_eq!(m.as_str().parse::<Method>().unwrap(), m);
        }
        assert!(!Method::SimpleAverage.needs_reference());
        assert!(Method::KnoraU.needs_reference());
        assert!(Method::WeightedAverage.needs_reference());
    }
}
