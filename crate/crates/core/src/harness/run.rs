//! Multi-seed experiment runs, sweeps and the results CSV.

use std::io::{Read, Write};
use std::path::Path;
use std::time::Instant;

use rayon::prelude::*;
use serde::Deserialize;

use super::config::{ExperimentConfig, Method, PoolKind, ReferenceMode, SweepAxis};
use super::protocol::{build_fixed_reference, build_oof_reference, screen};
use crate::baselines::{median_average, predict_dynamic, simple_average, single_best, weighted_average, ReferenceSet};
use crate::bpe::{bpe_fuse_outputs, build_profiles, BehavioralProfile};
use crate::data::{self, downsample, standardize, stratified_split, Dataset};
use crate::error::{Error, Result};
use crate::learners::{bag_recipes, LearnerSpec, MemberRecipe, TrainedPool};
use crate::matrix::{Matrix, ProbMatrix};
use crate::rng::derive_seed;
use crate::stats::accuracy;
use crate::synthetic::{region_dataset, region_expert_recipes};

#[derive(Debug, Clone)]
pub struct LoadedDataset {
    pub name: String,
    pub data: Dataset,
}

pub fn load_datasets(config: &ExperimentConfig) -> Result<Vec<LoadedDataset>> {
    config
        .datasets
        .iter()
        .map(|d| {
            let data = match (&d.path, &d.label, &d.synthetic) {
                (Some(path), Some(label), None) => data::encode(&data::load_csv(config.base_dir.join(path), label)?)?,
                (None, None, Some(spec)) => region_dataset(spec)?,
                _ => {
                    return Err(Error::Config(format!(
                        "datasets.{}: give either `path` and `label`, or `synthetic`",
                        d.name
                    )))
                }
            };
            Ok(LoadedDataset {
                name: d.name.clone(),
                data,
            })
        })
        .collect()
}

#[derive(Debug, Clone, PartialEq)]
pub struct ResultRecord {
    pub dataset: String,
    pub method: String,
    pub seed: u64,
    pub accuracy: f64,
    pub fit_seconds: f64,
    pub predict_seconds: f64,
    pub pool_size: usize,
}

/// Standardized train/test views and the screened pool for one
/// (dataset, seed) job.
#[derive(Debug)]
pub struct JobContext {
    pub x_train: Matrix,
    pub y_train: Vec<usize>,
    pub x_test: Matrix,
    pub y_test: Vec<usize>,
    pub train_idx: Vec<usize>,
    pub test_idx: Vec<usize>,
    pub n_classes: usize,
    pub pool: TrainedPool,
    pub retained: Vec<MemberRecipe>,
    pub test_outputs: Vec<ProbMatrix>,
    pub fit_seconds: f64,
}

fn pool_recipes(config: &ExperimentConfig, x_train: &Matrix, seed: u64) -> Result<Vec<MemberRecipe>> {
    let specs: Vec<LearnerSpec> = config.pool_specs()?;
    Ok(match config.pool.kind {
        PoolKind::Heterogeneous => specs.into_iter().map(MemberRecipe::plain).collect(),
        PoolKind::Bagged => bag_recipes(&specs[0], config.pool.bag_size, derive_seed(seed, "bag")),
        PoolKind::RegionExperts => region_expert_recipes(&specs[0], config.pool.regions, x_train)?,
    })
}

/// Downsample, split, scale on training rows only, screen the pool and
/// predict the test rows once with every retained member.
pub fn prepare_job(config: &ExperimentConfig, ds: &Dataset, seed: u64) -> Result<JobContext> {
    let start = Instant::now();
    let ds = downsample(ds, config.max_samples, derive_seed(seed, "downsample"))?;
    let split = stratified_split(&ds.y, ds.n_classes, config.test_fraction, derive_seed(seed, "split"))?;
    let scaled = standardize(&ds.refit_scaler(&split.train_idx));
    let train = scaled.subset(&split.train_idx);
    let test = scaled.subset(&split.test_idx);
    let recipes = pool_recipes(config, &train.x, seed)?;
    let screened = screen(
        &recipes,
        &train.x,
        &train.y,
        ds.n_classes,
        config.screening_alpha,
        derive_seed(seed, "screen"),
    )?;
    let fit_seconds = start.elapsed().as_secs_f64();
    let test_outputs = screened.pool.predict_all(&test.x)?;
    Ok(JobContext {
        x_train: train.x,
        y_train: train.y,
        x_test: test.x,
        y_test: test.y,
        train_idx: split.train_idx,
        test_idx: split.test_idx,
        n_classes: ds.n_classes,
        pool: screened.pool,
        retained: screened.retained,
        test_outputs,
        fit_seconds,
    })
}

pub fn build_reference(config: &ExperimentConfig, ctx: &JobContext, seed: u64) -> Result<ReferenceSet> {
    let seed = derive_seed(seed, "reference");
    match config.reference_mode {
        ReferenceMode::Oof => Ok(build_oof_reference(
            &ctx.retained,
            &ctx.x_train,
            &ctx.y_train,
            ctx.n_classes,
            config.oof_folds,
            seed,
        )?
        .reference),
        ReferenceMode::FixedSplit => {
            Ok(build_fixed_reference(&ctx.retained, &ctx.x_train, &ctx.y_train, ctx.n_classes, seed)?.0)
        }
    }
}

pub fn job_profiles(config: &ExperimentConfig, ctx: &JobContext, seed: u64) -> Result<Vec<BehavioralProfile>> {
    build_profiles(
        &ctx.pool,
        &ctx.x_train,
        config.bpe.delta,
        derive_seed(seed, "profile"),
        config.bpe.score,
    )
}

/// Test-row predictions of one method. BPE reads only `profiles`; the
/// reference-based methods only `reference`.
pub fn predict_method(
    config: &ExperimentConfig,
    ctx: &JobContext,
    method: Method,
    reference: Option<&ReferenceSet>,
    profiles: Option<&[BehavioralProfile]>,
) -> Result<ProbMatrix> {
    let outputs = &ctx.test_outputs;
    let need_ref = || reference.ok_or_else(|| Error::InvalidArgument(format!("{method} needs a reference set")));
    match method {
        Method::BpeEntropy => {
            let profiles =
                profiles.ok_or_else(|| Error::InvalidArgument("bpe_entropy needs behavioral profiles".into()))?;
            bpe_fuse_outputs(outputs, profiles, &config.bpe.params())
        }
        Method::SingleBest => {
            let acc = ctx
                .pool
                .screening_acc
                .as_ref()
                .ok_or_else(|| Error::InvalidArgument("single_best needs screening accuracies".into()))?;
            Ok(outputs[single_best(acc)?].clone())
        }
        Method::SimpleAverage => simple_average(outputs),
        Method::MedianAverage => median_average(outputs),
        Method::WeightedAverage => weighted_average(outputs, &need_ref()?.accuracies()),
        m => {
            let dynamic = m.dynamic().expect("remaining methods are dynamic");
            predict_dynamic(dynamic, need_ref()?, &ctx.x_test, outputs, config.roc_k)
        }
    }
}

/// All configured methods on one (dataset, seed).
pub fn run_job(config: &ExperimentConfig, name: &str, ds: &Dataset, seed: u64) -> Result<Vec<ResultRecord>> {
    let ctx = prepare_job(config, ds, seed)?;
    let timed = config.record_timings;
    let secs = |t: Instant| if timed { t.elapsed().as_secs_f64() } else { 0.0 };

    let mut reference = None;
    let mut reference_secs = 0.0;
    if config.methods.iter().any(|m| m.needs_reference()) {
        let t = Instant::now();
        reference = Some(build_reference(config, &ctx, seed)?);
        reference_secs = secs(t);
    }
    let mut profiles = None;
    let mut profile_secs = 0.0;
    if config.methods.contains(&Method::BpeEntropy) {
        let t = Instant::now();
        profiles = Some(job_profiles(config, &ctx, seed)?);
        profile_secs = secs(t);
    }
    let base_fit = if timed { ctx.fit_seconds } else { 0.0 };

    config
        .methods
        .iter()
        .map(|&m| {
            let t = Instant::now();
            let pred = predict_method(config, &ctx, m, reference.as_ref(), profiles.as_deref())?;
            let predict_seconds = secs(t);
            let extra = match m {
                Method::BpeEntropy => profile_secs,
                m if m.needs_reference() => reference_secs,
                _ => 0.0,
            };
            Ok(ResultRecord {
                dataset: name.to_owned(),
                method: m.as_str().to_owned(),
                seed,
                accuracy: accuracy(&pred, &ctx.y_test)?,
                fit_seconds: base_fit + extra,
                predict_seconds,
                pool_size: ctx.pool.len(),
            })
        })
        .collect()
}

/// Runs every (dataset, seed) job on up to `workers` threads and returns
/// the records sorted by (dataset, method, seed). The first failing job
/// aborts the run.
pub fn run_experiment(
    config: &ExperimentConfig,
    datasets: &[LoadedDataset],
    workers: usize,
) -> Result<Vec<ResultRecord>> {
    config.validate()?;
    let seeds = config.seed_list();
    let jobs: Vec<(&LoadedDataset, u64)> = datasets
        .iter()
        .flat_map(|d| seeds.iter().map(move |&s| (d, s)))
        .collect();
    let pool = rayon::ThreadPoolBuilder::new()
        .num_threads(workers.max(1))
        .build()
        .map_err(|e| Error::InvalidArgument(format!("worker pool: {e}")))?;
    let per_job: Vec<Vec<ResultRecord>> = pool.install(|| {
        jobs.par_iter()
            .map(|(d, seed)| {
                log::debug!("job {} seed {seed}", d.name);
                run_job(config, &d.name, &d.data, *seed).map_err(|e| Error::Job {
                    dataset: d.name.clone(),
                    seed: *seed,
                    source: Box::new(e),
                })
            })
            .collect::<Result<Vec<_>>>()
    })?;
    let mut records: Vec<ResultRecord> = per_job.into_iter().flatten().collect();
    sort_records(&mut records);
    Ok(records)
}

pub fn sort_records(records: &mut [ResultRecord]) {
    records.sort_by(|a, b| {
        (a.dataset.as_str(), a.method.as_str(), a.seed).cmp(&(b.dataset.as_str(), b.method.as_str(), b.seed))
    });
}

#[derive(Debug, Clone)]
pub struct SweepPoint {
    pub axis: SweepAxis,
    pub value: f64,
    pub records: Vec<ResultRecord>,
}

/// One full run per value of a single hyperparameter, all sharing seeds.
pub fn sweep(
    config: &ExperimentConfig,
    datasets: &[LoadedDataset],
    axis: SweepAxis,
    workers: usize,
) -> Result<Vec<SweepPoint>> {
    config
        .sweep_values(axis)
        .into_iter()
        .map(|value| {
            let c = config.with_axis_value(axis, value)?;
            Ok(SweepPoint {
                axis,
                value,
                records: run_experiment(&c, datasets, workers)?,
            })
        })
        .collect()
}

pub const RESULTS_HEADER: [&str; 7] = [
    "dataset",
    "method",
    "seed",
    "accuracy",
    "fit_seconds",
    "predict_seconds",
    "pool_size",
];

fn record_fields(r: &ResultRecord) -> [String; 7] {
    [
        r.dataset.clone(),
        r.method.clone(),
        r.seed.to_string(),
        format!("{:.6}", r.accuracy),
        format!("{:.6}", r.fit_seconds),
        format!("{:.6}", r.predict_seconds),
        r.pool_size.to_string(),
    ]
}

fn csv_err(e: csv::Error) -> Error {
    Error::Csv(e.to_string())
}

pub fn write_results<W: Write>(w: W, records: &[ResultRecord]) -> Result<()> {
    let mut out = csv::Writer::from_writer(w);
    out.write_record(RESULTS_HEADER).map_err(csv_err)?;
    for r in records {
        out.write_record(record_fields(r)).map_err(csv_err)?;
    }
    out.flush().map_err(|e| Error::Csv(e.to_string()))
}

pub fn write_sweep<W: Write>(w: W, points: &[SweepPoint]) -> Result<()> {
    let mut out = csv::Writer::from_writer(w);
    let mut header = vec!["axis", "value"];
    header.extend(RESULTS_HEADER);
    out.write_record(&header).map_err(csv_err)?;
    for p in points {
        for r in &p.records {
            let mut row = vec![p.axis.as_str().to_owned(), format!("{}", p.value)];
            row.extend(record_fields(r));
            out.write_record(&row).map_err(csv_err)?;
        }
    }
    out.flush().map_err(|e| Error::Csv(e.to_string()))
}

#[derive(Deserialize)]
struct Row {
    dataset: String,
    method: String,
    seed: u64,
    accuracy: f64,
    fit_seconds: f64,
    predict_seconds: f64,
    pool_size: usize,
}

pub fn read_results<R: Read>(r: R) -> Result<Vec<ResultRecord>> {
    let mut rdr = csv::Reader::from_reader(r);
    let headers = rdr.headers().map_err(csv_err)?.clone();
    if headers.iter().collect::<Vec<_>>() != RESULTS_HEADER {
        return Err(Error::Csv(format!(
            "unexpected results header `{}`",
            headers.iter().collect::<Vec<_>>().join(",")
        )));
    }
    rdr.deserialize::<Row>()
        .map(|row| {
            let r = row.map_err(csv_err)?;
            if !(0.0..=1.0).contains(&r.accuracy) {
                return Err(Error::Csv(format!("accuracy {} outside [0, 1]", r.accuracy)));
            }
            Ok(ResultRecord {
                dataset: r.dataset,
                method: r.method,
                seed: r.seed,
                accuracy: r.accuracy,
                fit_seconds: r.fit_seconds,
                predict_seconds: r.predict_seconds,
                pool_size: r.pool_size,
            })
        })
        .collect()
}

pub fn read_results_file(path: &Path) -> Result<Vec<ResultRecord>> {
    if !path.exists() {
        return Err(Error::MissingFile(path.to_owned()));
    }
    read_results(std::fs::File::open(path).map_err(|e| Error::io(path, e))?)
}

/// Mean accuracy per (dataset, method), as a datasets-by-methods matrix.
pub fn mean_accuracy_matrix(records: &[ResultRecord]) -> Result<crate::stats::ResultsMatrix> {
    let mut datasets: Vec<String> = records.iter().map(|r| r.dataset.clone()).collect();
    datasets.sort();
    datasets.dedup();
    let mut methods: Vec<String> = records.iter().map(|r| r.method.clone()).collect();
    methods.sort();
    methods.dedup();
    let mut values = Vec::with_capacity(datasets.len());
    for d in &datasets {
        let mut row = Vec::with_capacity(methods.len());
        for m in &methods {
            let accs: Vec<f64> = records
                .iter()
                .filter(|r| &r.dataset == d && &r.method == m)
                .map(|r| r.accuracy)
                .collect();
            if accs.is_empty() {
                return Err(Error::InvalidArgument(format!("no results for {m} on {d}")));
            }
            row.push(accs.iter().sum::<f64>() / accs.len() as f64);
        }
        values.push(row);
    }
    crate::stats::ResultsMatrix::new(datasets, methods, values)
}
