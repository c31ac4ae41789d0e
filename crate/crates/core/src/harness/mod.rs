//! Experimental protocol: configuration, pool screening, reference
//! construction, multi-seed runs and sweeps.

pub mod config;
pub mod protocol;
pub mod run;

pub use config::{ExperimentConfig, Method, PoolKind, ReferenceMode, SweepAxis};
pub use protocol::{build_fixed_reference, build_oof_reference, screen, screening_keep, OofReference, ScreenOutcome};
pub use run::{
    load_datasets, mean_accuracy_matrix, predict_method, prepare_job, read_results, read_results_file, run_experiment,
    run_job, sweep, write_results, write_sweep, JobContext, LoadedDataset, ResultRecord, SweepPoint,
};
