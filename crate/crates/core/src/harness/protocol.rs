//! Pool screening and leakage-free reference construction.

use rand::seq::SliceRandom;

use crate::baselines::ReferenceSet;
use crate::data::{class_counts, stratified_split, SplitPlan};
use crate::error::{Error, Result};
use crate::learners::{MemberRecipe, TrainedPool};
use crate::matrix::{Matrix, ProbMatrix};
use crate::rng::{derive_seed, stream};
use crate::stats::accuracy;

pub const SCREEN_HOLDOUT: f64 = 0.2;
pub const FIXED_REFERENCE_FRACTION: f64 = 0.25;
const SCREEN_TOL: f64 = 1e-12;

/// Indices of members with `acc >= best * (1 - alpha)`.
pub fn screening_keep(acc: &[f64], alpha: f64) -> Vec<usize> {
    let best = acc.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
    let threshold = best * (1.0 - alpha);
    (0..acc.len()).filter(|&k| acc[k] >= threshold - SCREEN_TOL).collect()
}

#[derive(Debug)]
pub struct ScreenOutcome {
    /// Retained members refit on the full training set, with their
    /// screening accuracies.
    pub pool: TrainedPool,
    pub retained: Vec<MemberRecipe>,
    pub all_accuracies: Vec<f64>,
    pub split: SplitPlan,
}

/// Fits every recipe on a stratified 80% of the training rows, scores it on
/// the remaining 20%, keeps the members within `alpha` of the best and
/// refits those on all training rows.
pub fn screen(
    recipes: &[MemberRecipe],
    x: &Matrix,
    y: &[usize],
    n_classes: usize,
    alpha: f64,
    seed: u64,
) -> Result<ScreenOutcome> {
    if !(0.0..1.0).contains(&alpha) {
        return Err(Error::InvalidArgument(format!(
            "screening alpha {alpha} outside [0, 1)"
        )));
    }
    if recipes.is_empty() {
        return Err(Error::InvalidArgument("empty pool".into()));
    }
    let split = stratified_split(y, n_classes, SCREEN_HOLDOUT, derive_seed(seed, "screen-split"))?;
    let x_fit = x.select_rows(&split.train_idx);
    let y_fit: Vec<usize> = split.train_idx.iter().map(|&i| y[i]).collect();
    let x_val = x.select_rows(&split.test_idx);
    let y_val: Vec<usize> = split.test_idx.iter().map(|&i| y[i]).collect();

    let trial = TrainedPool::fit(recipes, &x_fit, &y_fit, n_classes, derive_seed(seed, "screen-fit"))?;
    let all_accuracies = trial
        .predict_all(&x_val)?
        .iter()
        .map(|p| accuracy(p, &y_val))
        .collect::<Result<Vec<_>>>()?;
    let keep = screening_keep(&all_accuracies, alpha);
    let retained: Vec<MemberRecipe> = keep.iter().map(|&k| recipes[k].clone()).collect();
    let mut pool = TrainedPool::fit(&retained, x, y, n_classes, derive_seed(seed, "pool-fit"))?;
    pool.screening_acc = Some(keep.iter().map(|&k| all_accuracies[k]).collect());
    Ok(ScreenOutcome {
        pool,
        retained,
        all_accuracies,
        split,
    })
}

/// Stratified fold assignment: each class is shuffled and dealt round-robin.
pub fn stratified_folds(y: &[usize], n_classes: usize, folds: usize, seed: u64) -> Result<Vec<usize>> {
    if folds < 2 {
        return Err(Error::InvalidArgument(format!("{folds} folds")));
    }
    if folds > y.len() {
        return Err(Error::InvalidArgument(format!("{folds} folds for {} samples", y.len())));
    }
    let counts = class_counts(y, n_classes);
    let mut rng = stream(seed, "folds");
    let mut fold_of = vec![0; y.len()];
    let mut offset = 0;
    for (c, &n) in counts.iter().enumerate() {
        if n == 0 {
            continue;
        }
        if n < folds {
            return Err(Error::Unstratifiable {
                class: c,
                count: n,
                required: folds,
            });
        }
        let mut members: Vec<usize> = (0..y.len()).filter(|&i| y[i] == c).collect();
        members.shuffle(&mut rng);
        // continue dealing where the previous class stopped so fold sizes
        // stay balanced overall
        for (j, &i) in members.iter().enumerate() {
            fold_of[i] = (offset + j) % folds;
        }
        offset = (offset + n) % folds;
    }
    Ok(fold_of)
}

/// Reference predictions with the bookkeeping needed to check that no
/// sample was predicted by a model trained on it.
#[derive(Debug)]
pub struct OofReference {
    pub reference: ReferenceSet,
    pub fold_of: Vec<usize>,
    /// Training rows used by the models of each fold.
    pub fold_train_rows: Vec<Vec<usize>>,
}

impl OofReference {
    /// True when no sample appears among the training rows of the fold
    /// that predicted it.
    pub fn leakage_free(&self) -> bool {
        self.fold_of
            .iter()
            .enumerate()
            .all(|(i, &f)| !self.fold_train_rows[f].contains(&i))
    }
}

pub fn build_oof_reference(
    recipes: &[MemberRecipe],
    x: &Matrix,
    y: &[usize],
    n_classes: usize,
    folds: usize,
    seed: u64,
) -> Result<OofReference> {
    let fold_of = stratified_folds(y, n_classes, folds, derive_seed(seed, "oof-folds"))?;
    let mut outputs: Vec<Matrix> = recipes.iter().map(|_| Matrix::zeros(y.len(), n_classes)).collect();
    let mut fold_train_rows = Vec::with_capacity(folds);
    for f in 0..folds {
        let held: Vec<usize> = (0..y.len()).filter(|&i| fold_of[i] == f).collect();
        let train: Vec<usize> = (0..y.len()).filter(|&i| fold_of[i] != f).collect();
        let xt = x.select_rows(&train);
        let yt: Vec<usize> = train.iter().map(|&i| y[i]).collect();
        let pool = TrainedPool::fit(recipes, &xt, &yt, n_classes, derive_seed(seed, &format!("oof-fit-{f}")))?;
        let preds = pool.predict_all(&x.select_rows(&held))?;
        for (out, p) in outputs.iter_mut().zip(&preds) {
            for (r, &i) in held.iter().enumerate() {
                out.row_mut(i).copy_from_slice(p.row(r));
            }
        }
        fold_train_rows.push(train);
    }
    let outputs = outputs.into_iter().map(ProbMatrix::new).collect::<Result<Vec<_>>>()?;
    Ok(OofReference {
        reference: ReferenceSet::new(x.clone(), y.to_vec(), outputs)?,
        fold_of,
        fold_train_rows,
    })
}

/// Cheaper alternative: a single stratified 75/25 split of the training
/// rows; the reference set is the 25% part, predicted by models fit on the
/// other 75%.
pub fn build_fixed_reference(
    recipes: &[MemberRecipe],
    x: &Matrix,
    y: &[usize],
    n_classes: usize,
    seed: u64,
) -> Result<(ReferenceSet, SplitPlan)> {
    let split = stratified_split(
        y,
        n_classes,
        FIXED_REFERENCE_FRACTION,
        derive_seed(seed, "fixed-reference"),
    )?;
    let xt = x.select_rows(&split.train_idx);
    let yt: Vec<usize> = split.train_idx.iter().map(|&i| y[i]).collect();
    let pool = TrainedPool::fit(recipes, &xt, &yt, n_classes, derive_seed(seed, "fixed-reference-fit"))?;
    let xr = x.select_rows(&split.test_idx);
    let yr: Vec<usize> = split.test_idx.iter().map(|&i| y[i]).collect();
    let outputs = pool.predict_all(&xr)?;
    Ok((ReferenceSet::new(xr, yr, outputs)?, split))
}
