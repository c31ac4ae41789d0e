//! Region-specialized synthetic classification tasks.
//!
//! Feature 0 is uniform on `[0, regions)` and picks the region. Inside
//! region `r` the label is the sign of feature `r + 1`, which sits near ±2;
//! every other feature is quiet noise. A fraction of labels is flipped.

use rand::Rng;
use rand_distr::{Distribution, Normal};
use serde::Deserialize;

use crate::data::Dataset;
use crate::error::{Error, Result};
use crate::learners::{FeatureWindow, LearnerSpec, MemberRecipe};
use crate::matrix::Matrix;
use crate::rng::stream;

#[derive(Debug, Clone, PartialEq, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SyntheticSpec {
    #[serde(default = "default_regions")]
    pub regions: usize,
    #[serde(default = "default_samples")]
    pub n_samples: usize,
    #[serde(default = "default_noise")]
    pub label_noise: f64,
    #[serde(default)]
    pub seed: u64,
}

fn default_regions() -> usize {
    3
}

fn default_samples() -> usize {
    600
}

fn default_noise() -> f64 {
    0.05
}

impl Default for SyntheticSpec {
    fn default() -> Self {
        SyntheticSpec {
            regions: default_regions(),
            n_samples: default_samples(),
            label_noise: default_noise(),
            seed: 0,
        }
    }
}

const SIGNAL: f64 = 2.0;
const SIGNAL_SD: f64 = 0.6;
const QUIET_SD: f64 = 0.3;

pub fn region_dataset(spec: &SyntheticSpec) -> Result<Dataset> {
    if spec.regions < 1 || spec.n_samples < 4 * spec.regions {
        return Err(Error::InvalidArgument(format!(
            "synthetic task needs regions >= 1 and at least 4 samples per region: {spec:?}"
        )));
    }
    if !(0.0..0.5).contains(&spec.label_noise) {
        return Err(Error::InvalidArgument(format!("label noise {}", spec.label_noise)));
    }
    let mut rng = stream(spec.seed, "synthetic-regions");
    let signal = Normal::new(SIGNAL, SIGNAL_SD).expect("positive sd");
    let quiet = Normal::new(0.0, QUIET_SD).expect("positive sd");
    let d = spec.regions + 1;
    let mut x = Matrix::zeros(spec.n_samples, d);
    let mut y = Vec::with_capacity(spec.n_samples);
    for i in 0..spec.n_samples {
        // balanced regions and classes
        let r = i % spec.regions;
        let label = (i / spec.regions) % 2;
        let row = x.row_mut(i);
        row[0] = r as f64 + rng.random::<f64>();
        for (j, v) in row.iter_mut().enumerate().skip(1) {
            *v = if j == r + 1 {
                let m = signal.sample(&mut rng).abs();
                if label == 1 {
                    m
                } else {
                    -m
                }
            } else {
                quiet.sample(&mut rng)
            };
        }
        let flip = rng.random::<f64>() < spec.label_noise;
        y.push(if flip { 1 - label } else { label });
    }
    Dataset::from_numeric(x, y, 2)
}

/// One member per region, trained only on training rows whose feature 0
/// falls inside that region. Region boundaries are the empirical quantiles
/// of feature 0 in `x_train`, so they hold in any monotone rescaling.
pub fn region_expert_recipes(spec: &LearnerSpec, regions: usize, x_train: &Matrix) -> Result<Vec<MemberRecipe>> {
    if regions == 0 || x_train.nrows() < regions {
        return Err(Error::InvalidArgument(format!(
            "{regions} regions over {} training rows",
            x_train.nrows()
        )));
    }
    let mut f0 = x_train.column(0);
    f0.sort_by(f64::total_cmp);
    let cut = |r: usize| f0[(r * f0.len()) / regions];
    Ok((0..regions)
        .map(|r| MemberRecipe {
            id: format!("expert-{r}"),
            spec: spec.clone(),
            bootstrap_seed: None,
            window: Some(FeatureWindow {
                feature: 0,
                lo: if r == 0 { f64::NEG_INFINITY } else { cut(r) },
                hi: if r + 1 == regions { f64::INFINITY } else { cut(r + 1) },
            }),
        })
        .collect())
}
