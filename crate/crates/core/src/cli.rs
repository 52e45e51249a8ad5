//! Experiment runner: argument parsing, multi-seed execution and CSV output.
//!
//! Configuration comes from command-line flags, optionally layered over a
//! plain-text `key = value` file passed with `--config` (flags win). File keys
//! are the flag names without the leading dashes; `seed` may be repeated or
//! given as a comma-separated list.

use std::collections::HashSet;
use std::ffi::OsString;
use std::fs;
use std::io;
use std::path::{Path, PathBuf};
use std::str::FromStr;

use clap::Parser;
use log::{info, warn};
use rayon::prelude::*;
use thiserror::Error;

use crate::envs::EnvKind;
use crate::optimizer::{run_apois, run_ppois, Algorithm, IterationRecord, OptimizerConfig, OptimizerError};
use crate::surrogate::{PenaltyKind, WeightEstimator};

/// Seeds used when none are given.
pub const DEFAULT_SEEDS: [u64; 5] = [10, 109, 904, 160, 570];

/// Column set of the per-seed CSV files.
pub const CSV_COLUMNS: [&str; 11] = [
    "iteration",
    "episodes_cum",
    "avg_return",
    "ess_hat",
    "weight_var",
    "d2_hat",
    "bound_before",
    "bound_after",
    "policy_sigma_mean",
    "offline_iters",
    "step_size_last",
];

#[derive(Debug, Error)]
pub enum CliError {
    #[error(transparent)]
    Usage(#[from] clap::Error),
    #[error("missing required option --{0}")]
    Missing(&'static str),
    #[error("invalid value {value:?} for --{key}: {reason}")]
    InvalidValue { key: String, value: String, reason: String },
    #[error("{path}:{line}: unknown configuration key {key:?}")]
    UnknownKey { path: PathBuf, line: usize, key: String },
    #[error("{path}:{line}: expected `key = value`")]
    Malformed { path: PathBuf, line: usize },
    #[error("{path}: {source}")]
    Io { path: PathBuf, source: io::Error },
    #[error("{path}: {source}")]
    Csv { path: PathBuf, source: csv::Error },
    #[error(transparent)]
    Optimizer(#[from] OptimizerError),
    #[error("{} of {} seeds failed: {}", failed.len(), total, describe_failures(failed))]
    SeedsFailed { total: usize, failed: Vec<(u64, String)> },
}

fn describe_failures(failed: &[(u64, String)]) -> String {
    failed.iter().map(|(s, e)| format!("seed {s}: {e}")).collect::<Vec<_>>().join("; ")
}

/// A fully validated experiment: one optimizer configuration run once per seed.
#[derive(Debug, Clone, PartialEq)]
pub struct ExperimentConfig {
    pub env: EnvKind,
    pub algorithm: Algorithm,
    pub seeds: Vec<u64>,
    pub output: PathBuf,
    /// Shared optimizer settings; its `seed` field is replaced per run.
    pub optimizer: OptimizerConfig,
}

impl ExperimentConfig {
    pub fn algorithm_name(&self) -> &'static str {
        algorithm_name(self.algorithm)
    }

    pub fn seed_csv_path(&self, seed: u64) -> PathBuf {
        self.output.join(format!("{}_{}_seed{}.csv", self.env.name(), self.algorithm_name(), seed))
    }

    pub fn aggregate_csv_path(&self) -> PathBuf {
        self.output.join(format!("{}_{}_aggregate.csv", self.env.name(), self.algorithm_name()))
    }
}

pub fn algorithm_name(algorithm: Algorithm) -> &'static str {
    match algorithm {
        Algorithm::ActionBased => "a-pois",
        Algorithm::ParameterBased => "p-pois",
    }
}

#[derive(Debug, Parser)]
#[command(name = "pois", version, allow_negative_numbers = true, about = "Run A-POIS / P-POIS experiments over several seeds")]
struct Args {
    /// Environment: lqg, cartpole, mountaincar or pendulum.
    #[arg(long)]
    env: Option<String>,
    /// Algorithm: a-pois or p-pois.
    #[arg(long)]
    algo: Option<String>,
    /// Confidence level of the bound, in (0, 1].
    #[arg(long)]
    delta: Option<String>,
    /// Number of online iterations.
    #[arg(long)]
    iterations: Option<String>,
    /// Episodes collected per online iteration.
    #[arg(long = "batch-size")]
    batch_size: Option<String>,
    #[arg(long)]
    horizon: Option<String>,
    #[arg(long)]
    gamma: Option<String>,
    /// Random seed; repeat the flag for several seeds.
    #[arg(long = "seed")]
    seeds: Vec<String>,
    /// Weight estimator: is or sn.
    #[arg(long)]
    estimator: Option<String>,
    /// Natural gradient: on or off.
    #[arg(long)]
    natural: Option<String>,
    /// Divergence penalty: exact or ess.
    #[arg(long)]
    penalty: Option<String>,
    /// Step growth factor of the line search.
    #[arg(long)]
    eta: Option<String>,
    /// Maximum offline iterations per online iteration.
    #[arg(long = "max-offline")]
    max_offline: Option<String>,
    /// Output directory for the CSV files.
    #[arg(long)]
    output: Option<PathBuf>,
    /// Plain-text `key = value` configuration file.
    #[arg(long)]
    config: Option<PathBuf>,
}

const FILE_KEYS: [&str; 14] = [
    "env",
    "algo",
    "delta",
    "iterations",
    "batch-size",
    "horizon",
    "gamma",
    "seed",
    "estimator",
    "natural",
    "penalty",
    "eta",
    "max-offline",
    "output",
];

/// Raw key/value settings, before type conversion.
#[derive(Debug, Default)]
struct Settings {
    values: Vec<(&'static str, String)>,
    seeds: Vec<String>,
}

impl Settings {
    fn get(&self, key: &str) -> Option<&str> {
        self.values.iter().rev().find(|(k, _)| *k == key).map(|(_, v)| v.as_str())
    }

    fn set(&mut self, key: &'static str, value: String) {
        self.values.push((key, value));
    }
}

fn read_config_file(path: &Path) -> Result<Settings, CliError> {
    let text = fs::read_to_string(path).map_err(|source| CliError::Io { path: path.to_path_buf(), source })?;
    let mut settings = Settings::default();
    for (idx, raw) in text.lines().enumerate() {
        let line = raw.split('#').next().unwrap_or("").trim();
        if line.is_empty() {
            continue;
        }
        let (key, value) = line
            .split_once('=')
            .ok_or_else(|| CliError::Malformed { path: path.to_path_buf(), line: idx + 1 })?;
        let key = key.trim();
        let value = value.trim().to_string();
        let key = FILE_KEYS.iter().copied().find(|k| *k == key).ok_or_else(|| CliError::UnknownKey {
            path: path.to_path_buf(),
            line: idx + 1,
            key: key.to_string(),
        })?;
        if key == "seed" {
            settings.seeds.extend(value.split(',').map(|s| s.trim().to_string()).filter(|s| !s.is_empty()));
        } else {
            settings.set(key, value);
        }
    }
    Ok(settings)
}

fn invalid(key: &str, value: &str, reason: impl ToString) -> CliError {
    CliError::InvalidValue { key: key.to_string(), value: value.to_string(), reason: reason.to_string() }
}

fn parse_value<T: FromStr>(key: &str, value: &str) -> Result<T, CliError>
where
    T::Err: ToString,
{
    value.parse().map_err(|e: T::Err| invalid(key, value, e))
}

fn parse_algorithm(value: &str) -> Result<Algorithm, CliError> {
    match value {
        "a-pois" => Ok(Algorithm::ActionBased),
        "p-pois" => Ok(Algorithm::ParameterBased),
        _ => Err(invalid("algo", value, "expected a-pois or p-pois")),
    }
}

fn parse_estimator(value: &str) -> Result<WeightEstimator, CliError> {
    match value {
        "is" => Ok(WeightEstimator::Is),
        "sn" => Ok(WeightEstimator::Sn),
        _ => Err(invalid("estimator", value, "expected is or sn")),
    }
}

fn parse_switch(value: &str) -> Result<bool, CliError> {
    match value {
        "on" => Ok(true),
        "off" => Ok(false),
        _ => Err(invalid("natural", value, "expected on or off")),
    }
}

fn parse_penalty(value: &str) -> Result<PenaltyKind, CliError> {
    match value {
        "exact" => Ok(PenaltyKind::Exact),
        "ess" => Ok(PenaltyKind::Ess),
        _ => Err(invalid("penalty", value, "expected exact or ess")),
    }
}

/// Parses a full argument vector (including the program name) into a
/// validated [`ExperimentConfig`].
pub fn parse_args<I, T>(argv: I) -> Result<ExperimentConfig, CliError>
where
    I: IntoIterator<Item = T>,
    T: Into<OsString> + Clone,
{
    let args = Args::try_parse_from(argv)?;
    let mut settings = match &args.config {
        Some(path) => read_config_file(path)?,
        None => Settings::default(),
    };
    let overrides = [
        ("env", &args.env),
        ("algo", &args.algo),
        ("delta", &args.delta),
        ("iterations", &args.iterations),
        ("batch-size", &args.batch_size),
        ("horizon", &args.horizon),
        ("gamma", &args.gamma),
        ("estimator", &args.estimator),
        ("natural", &args.natural),
        ("penalty", &args.penalty),
        ("eta", &args.eta),
        ("max-offline", &args.max_offline),
    ];
    for (key, value) in overrides {
        if let Some(v) = value {
            settings.set(key, v.clone());
        }
    }
    if let Some(out) = &args.output {
        settings.set("output", out.to_string_lossy().into_owned());
    }
    if !args.seeds.is_empty() {
        settings.seeds = args.seeds.clone();
    }

    let env_name = settings.get("env").ok_or(CliError::Missing("env"))?;
    let env: EnvKind = parse_value("env", env_name)?;
    let algorithm = parse_algorithm(settings.get("algo").ok_or(CliError::Missing("algo"))?)?;

    let mut optimizer = OptimizerConfig::defaults(env.build().as_ref(), algorithm);
    if let Some(v) = settings.get("delta") {
        let delta: f64 = parse_value("delta", v)?;
        if !(delta > 0.0 && delta <= 1.0) {
            return Err(invalid("delta", v, "must lie in (0, 1]"));
        }
        optimizer.delta = delta;
    }
    if let Some(v) = settings.get("iterations") {
        optimizer.online_iterations = parse_value("iterations", v)?;
    }
    if let Some(v) = settings.get("batch-size") {
        optimizer.n_episodes = parse_value("batch-size", v)?;
    }
    if let Some(v) = settings.get("horizon") {
        optimizer.horizon = parse_value("horizon", v)?;
    }
    if let Some(v) = settings.get("gamma") {
        optimizer.gamma = parse_value("gamma", v)?;
    }
    if let Some(v) = settings.get("estimator") {
        optimizer.estimator = parse_estimator(v)?;
    }
    if let Some(v) = settings.get("natural") {
        optimizer.natural = parse_switch(v)?;
    }
    if let Some(v) = settings.get("penalty") {
        optimizer.penalty = parse_penalty(v)?;
    }
    if let Some(v) = settings.get("eta") {
        optimizer.line_search.eta = parse_value("eta", v)?;
    }
    if let Some(v) = settings.get("max-offline") {
        optimizer.max_offline_iterations = parse_value("max-offline", v)?;
    }
    optimizer.validate()?;

    let seeds = if settings.seeds.is_empty() {
        DEFAULT_SEEDS.to_vec()
    } else {
        let mut seen = HashSet::new();
        let mut seeds = Vec::with_capacity(settings.seeds.len());
        for s in &settings.seeds {
            let seed: u64 = parse_value("seed", s)?;
            if !seen.insert(seed) {
                return Err(invalid("seed", s, "duplicate seed"));
            }
            seeds.push(seed);
        }
        seeds
    };
    let output = PathBuf::from(settings.get("output").unwrap_or("results"));

    Ok(ExperimentConfig { env, algorithm, seeds, output, optimizer })
}

/// Runs one seed of the experiment.
pub fn run_seed(cfg: &ExperimentConfig, seed: u64) -> Result<Vec<IterationRecord>, OptimizerError> {
    let env = cfg.env.build();
    let opt = OptimizerConfig { seed, ..cfg.optimizer.clone() };
    match cfg.algorithm {
        Algorithm::ActionBased => run_apois(env.as_ref(), &opt),
        Algorithm::ParameterBased => run_ppois(env.as_ref(), &opt),
    }
}

fn record_row(r: &IterationRecord) -> [f64; 11] {
    [
        r.iteration as f64,
        r.episodes_cum as f64,
        r.avg_return,
        r.ess_hat,
        r.weight_var,
        r.d2_hat,
        r.bound_before,
        r.bound_after,
        r.policy_sigma_mean,
        r.offline_iters as f64,
        r.step_size_last,
    ]
}

fn record_fields(r: &IterationRecord) -> Vec<String> {
    let row = record_row(r);
    let mut fields = vec![r.iteration.to_string(), r.episodes_cum.to_string()];
    fields.extend(row[2..9].iter().map(|v| v.to_string()));
    fields.push(r.offline_iters.to_string());
    fields.push(row[10].to_string());
    fields
}

fn csv_error(path: &Path) -> impl Fn(csv::Error) -> CliError + '_ {
    move |source| CliError::Csv { path: path.to_path_buf(), source }
}

/// Writes one row per online iteration. Floats use Rust's shortest
/// round-trip formatting, which is locale independent.
pub fn write_seed_csv(path: &Path, records: &[IterationRecord]) -> Result<(), CliError> {
    let mut w = csv::Writer::from_path(path).map_err(csv_error(path))?;
    w.write_record(CSV_COLUMNS).map_err(csv_error(path))?;
    for r in records {
        w.write_record(record_fields(r)).map_err(csv_error(path))?;
    }
    w.flush().map_err(|source| CliError::Io { path: path.to_path_buf(), source })
}

/// Mean and 95% normal-approximation half-width `1.96 s/√n` (NaN for a
/// single value).
pub fn mean_and_half_width(values: &[f64]) -> (f64, f64) {
    let n = values.len() as f64;
    let mean = values.iter().sum::<f64>() / n;
    if values.len() < 2 {
        return (mean, f64::NAN);
    }
    let var = values.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / (n - 1.0);
    (mean, 1.96 * (var / n).sqrt())
}

/// Writes the across-seed aggregate: for every metric column `c`, the
/// columns `c_mean` and `c_ci95`.
pub fn write_aggregate_csv(path: &Path, runs: &[Vec<IterationRecord>]) -> Result<(), CliError> {
    let mut w = csv::Writer::from_path(path).map_err(csv_error(path))?;
    let mut header = vec!["iteration".to_string()];
    for c in &CSV_COLUMNS[1..] {
        header.push(format!("{c}_mean"));
        header.push(format!("{c}_ci95"));
    }
    w.write_record(&header).map_err(csv_error(path))?;
    let rows = runs.iter().map(Vec::len).min().unwrap_or(0);
    for i in 0..rows {
        let per_seed: Vec<[f64; 11]> = runs.iter().map(|r| record_row(&r[i])).collect();
        let mut fields = vec![runs[0][i].iteration.to_string()];
        for col in 1..CSV_COLUMNS.len() {
            let values: Vec<f64> = per_seed.iter().map(|row| row[col]).collect();
            let (mean, hw) = mean_and_half_width(&values);
            fields.push(mean.to_string());
            fields.push(hw.to_string());
        }
        w.write_record(&fields).map_err(csv_error(path))?;
    }
    w.flush().map_err(|source| CliError::Io { path: path.to_path_buf(), source })
}

/// Runs every seed (in parallel), writes the per-seed files and the
/// aggregate, and returns the paths written. Fails if any seed failed; the
/// files of the completed seeds are still written.
pub fn run_experiment(cfg: &ExperimentConfig) -> Result<Vec<PathBuf>, CliError> {
    fs::create_dir_all(&cfg.output).map_err(|source| CliError::Io { path: cfg.output.clone(), source })?;
    let outcomes: Vec<(u64, Result<Vec<IterationRecord>, OptimizerError>)> =
        cfg.seeds.par_iter().map(|&seed| (seed, run_seed(cfg, seed))).collect();

    let mut written = Vec::new();
    let mut completed = Vec::new();
    let mut failed = Vec::new();
    for (seed, outcome) in outcomes {
        match outcome {
            Ok(records) => {
                let path = cfg.seed_csv_path(seed);
                write_seed_csv(&path, &records)?;
                info!("seed {seed}: {} iterations written to {}", records.len(), path.display());
                written.push(path);
                completed.push(records);
            }
            Err(e) => {
                warn!("seed {seed} failed: {e}");
                failed.push((seed, e.to_string()));
            }
        }
    }
    if !completed.is_empty() {
        let path = cfg.aggregate_csv_path();
        write_aggregate_csv(&path, &completed)?;
        written.push(path);
    }
    if failed.is_empty() {
        Ok(written)
    } else {
        Err(CliError::SeedsFailed { total: cfg.seeds.len(), failed })
    }
}
