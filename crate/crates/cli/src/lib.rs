//! Argument parsing and subcommand dispatch for the `bpe` binary.

use std::fs;
use std::io::Write;
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{ArgAction, Parser, Subcommand};
use log::{info, LevelFilter};

use bpe_core::bpe::{build_profiles, profiles_to_string, ScoreKind};
use bpe_core::data::{encode, load_csv, standardize};
use bpe_core::harness::{
    load_datasets, run_experiment, sweep, write_results, write_sweep, ExperimentConfig, SweepAxis,
};
use bpe_core::learners::{LearnerSpec, MemberRecipe, TrainedPool};
use bpe_core::theory::run_all;
use bpe_core::{Error, Result};

mod report;

const PRECEDENCE: &str = "Precedence: command-line flags override values from the config file, \
which override built-in defaults. `--seed` replaces both `master_seed` and any explicit `seeds` list.";

#[derive(Debug, Parser)]
#[command(name = "bpe", version, about = "Behavioral profiling ensemble benchmarks", after_help = PRECEDENCE)]
pub struct Cli {
    /// Master seed; overrides the config file
    #[arg(long, global = true)]
    pub seed: Option<u64>,

    /// More log output (repeat for trace)
    #[arg(short, long, global = true, action = ArgAction::Count, conflicts_with = "quiet")]
    pub verbose: u8,

    /// Errors only
    #[arg(short, long, global = true)]
    pub quiet: bool,

    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Run every configured method on every dataset and seed
    #[command(after_help = PRECEDENCE)]
    Run {
        /// Experiment config (TOML)
        #[arg(long)]
        config: PathBuf,
        /// Output directory; results go to DIR/results.csv
        #[arg(long)]
        out: PathBuf,
        /// Worker threads; results do not depend on this
        #[arg(long, default_value_t = default_workers())]
        workers: usize,
        /// Number of seeds; overrides `n_seeds`
        #[arg(long)]
        n_seeds: Option<usize>,
    },
    /// Repeat the run once per value of one hyperparameter
    #[command(after_help = PRECEDENCE)]
    Sweep {
        #[arg(long)]
        config: PathBuf,
        /// lambda, delta or alpha; defaults to the single axis under [sweep]
        #[arg(long)]
        axis: Option<String>,
        /// Output directory; results go to DIR/sweep_<axis>.csv
        #[arg(long)]
        out: PathBuf,
        #[arg(long, default_value_t = default_workers())]
        workers: usize,
        #[arg(long)]
        n_seeds: Option<usize>,
    },
    /// Accuracy table, Friedman ranks, signed-rank tests and win-tie-loss
    /// counts from a results CSV
    Report {
        #[arg(long)]
        results: PathBuf,
        /// Method the others are compared against
        #[arg(long, default_value = "bpe_entropy")]
        reference: String,
    },
    /// Machine-check the fusion theory on random instances
    VerifyTheory {
        /// Trials for the flip check; the other suites use a tenth
        #[arg(long, default_value_t = 1000)]
        trials: usize,
    },
    /// Fit a pool on a CSV dataset and print its behavioral profiles
    Profile {
        #[arg(long)]
        dataset: PathBuf,
        /// Label column name
        #[arg(long)]
        label: String,
        /// Profile store to write
        #[arg(long)]
        out: PathBuf,
        /// Perturbation scale in standardized units
        #[arg(long, default_value_t = bpe_core::bpe::DEFAULT_DELTA)]
        delta: f64,
        /// Comma-separated pool members
        #[arg(
            long,
            value_delimiter = ',',
            default_value = "decision_tree,gaussian_nb,logistic_regression,knn"
        )]
        learners: Vec<String>,
    },
}

fn default_workers() -> usize {
    std::thread::available_parallelism().map_or(1, |n| n.get())
}

fn init_logging(cli: &Cli) {
    let level = match (cli.quiet, cli.verbose) {
        (true, _) => LevelFilter::Error,
        (false, 0) => LevelFilter::Info,
        (false, 1) => LevelFilter::Debug,
        _ => LevelFilter::Trace,
    };
    // a second init (tests calling `main_with` twice) is harmless
    let _ = env_logger::Builder::new()
        .filter_level(level)
        .format(|buf, rec| writeln!(buf, "[{}] {}", rec.level(), rec.args()))
        .try_init();
}

/// Parses `args` and runs the subcommand. Exit codes: 0 success, 1 invalid
/// input (bad flag, config or file), 2 failure while running.
pub fn main_with<I, T>(args: I) -> ExitCode
where
    I: IntoIterator<Item = T>,
    T: Into<std::ffi::OsString> + Clone,
{
    let cli = match Cli::try_parse_from(args) {
        Ok(c) => c,
        Err(e) => {
            let code = if e.use_stderr() { 1 } else { 0 };
            let _ = e.print();
            return ExitCode::from(code);
        }
    };
    init_logging(&cli);
    match dispatch(&cli) {
        Ok(code) => code,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(if e.is_validation() { 1 } else { 2 })
        }
    }
}

fn load_config(path: &Path, seed: Option<u64>, n_seeds: Option<usize>) -> Result<ExperimentConfig> {
    let mut config = ExperimentConfig::load(path)?;
    if let Some(s) = seed {
        config.master_seed = s;
        config.seeds = None;
    }
    if let Some(n) = n_seeds {
        config.n_seeds = n;
    }
    config.validate()?;
    Ok(config)
}

fn create_out_dir(dir: &Path) -> Result<()> {
    fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))
}

fn write_file(path: &Path, bytes: &[u8]) -> Result<()> {
    fs::write(path, bytes).map_err(|e| Error::io(path, e))
}

fn dispatch(cli: &Cli) -> Result<ExitCode> {
    match &cli.command {
        Command::Run {
            config,
            out,
            workers,
            n_seeds,
        } => {
            let config = load_config(config, cli.seed, *n_seeds)?;
            let datasets = load_datasets(&config)?;
            info!(
                "{} datasets x {} seeds x {} methods on {workers} workers",
                datasets.len(),
                config.seed_list().len(),
                config.methods.len()
            );
            let records = run_experiment(&config, &datasets, *workers)?;
            let mut buf = Vec::new();
            write_results(&mut buf, &records)?;
            create_out_dir(out)?;
            let path = out.join("results.csv");
            write_file(&path, &buf)?;
            info!("wrote {} records to {}", records.len(), path.display());
        }
        Command::Sweep {
            config,
            axis,
            out,
            workers,
            n_seeds,
        } => {
            let config = load_config(config, cli.seed, *n_seeds)?;
            let axis: SweepAxis = match axis {
                Some(a) => a.parse()?,
                None => config.implied_axis()?,
            };
            let datasets = load_datasets(&config)?;
            let points = sweep(&config, &datasets, axis, *workers)?;
            let mut buf = Vec::new();
            write_sweep(&mut buf, &points)?;
            create_out_dir(out)?;
            let path = out.join(format!("sweep_{}.csv", axis.as_str()));
            write_file(&path, &buf)?;
            info!("wrote {} sweep points to {}", points.len(), path.display());
        }
        Command::Report { results, reference } => {
            let records = bpe_core::harness::read_results_file(results)?;
            print!("{}", report::render(&records, reference)?);
        }
        Command::VerifyTheory { trials } => {
            if *trials == 0 {
                return Err(Error::InvalidArgument("--trials must be positive".into()));
            }
            let reports = run_all(cli.seed.unwrap_or(0), *trials);
            println!("{:<56} {:>7} {:>10}  status", "check", "trials", "violations");
            for r in &reports {
                let status = if r.passed() { "ok" } else { "FAILED" };
                println!("{:<56} {:>7} {:>10}  {status}", r.name, r.trials, r.violations);
            }
            if reports.iter().any(|r| !r.passed()) {
                return Ok(ExitCode::from(2));
            }
        }
        Command::Profile {
            dataset,
            label,
            out,
            delta,
            learners,
        } => {
            let seed = cli.seed.unwrap_or(0);
            let ds = encode(&load_csv(dataset, label)?)?;
            let all: Vec<usize> = (0..ds.len()).collect();
            let ds = standardize(&ds.refit_scaler(&all));
            let recipes = learners
                .iter()
                .map(|l| l.parse::<LearnerSpec>().map(MemberRecipe::plain))
                .collect::<Result<Vec<_>>>()?;
            let pool = TrainedPool::fit(&recipes, &ds.x, &ds.y, ds.n_classes, seed)?;
            let profiles = build_profiles(&pool, &ds.x, *delta, seed, ScoreKind::NegEntropy)?;
            let text = profiles_to_string(&profiles)?;
            if let Some(dir) = out.parent().filter(|d| !d.as_os_str().is_empty()) {
                create_out_dir(dir)?;
            }
            write_file(out, text.as_bytes())?;
            print!("{text}");
        }
    }
    Ok(ExitCode::SUCCESS)
}
