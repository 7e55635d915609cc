//! The `cqr` command-line tool: model fits, bootstrap intervals and Monte
//! Carlo studies as reproducible batch runs.
//!
//! Each run prints its main result on stdout. With `--out-dir` it also
//! writes JSON/CSV outputs and a `manifest.json` from which `cqr replay`
//! reproduces them byte for byte.
//!
//! Exit codes: 0 success, 1 output I/O failure, 2 invalid arguments, input
//! or parameters, 3 numerical fit failure, 4 too many failed replicates.

pub mod args;
pub mod manifest;

use std::ffi::OsString;
use std::path::{Path, PathBuf};
use std::time::Instant;

use clap::Parser;
use cqr_core::inference::DEFAULT_GRID;
use cqr_core::rng::derive_seed;
use cqr_core::{
    bootstrap_ci, cv_bandwidth, fit, load_csv, run_coverage, run_mc, CsvSchema, CvResult, DataError, FitError,
    FitOptions, InferenceError, KernelScale, McReport, Method, ScenarioSpec, SimulationError, StopReason,
    SurvivalDataset,
};
use serde::Serialize;
use thiserror::Error;

pub use args::{Bandwidth, BootstrapArgs, Cli, Command, FitArgs, ReplayArgs, SimulateArgs};
pub use manifest::{sha256_file, RunManifest, MANIFEST_FILE};

#[derive(Debug, Error)]
pub enum CliError {
    #[error("{flag}: {message}")]
    Invalid { flag: String, message: String },
    #[error("cannot read {path}: {source}")]
    Input { path: String, source: std::io::Error },
    #[error("{path}: {source}")]
    Data { path: String, source: DataError },
    #[error("fit failed: {0}")]
    Fit(#[from] FitError),
    #[error(transparent)]
    Inference(#[from] InferenceError),
    #[error("simulation: {0}")]
    Simulation(#[from] SimulationError),
    #[error("manifest: {0}")]
    Manifest(String),
    #[error("cannot write {path}: {source}")]
    Output { path: String, source: std::io::Error },
}

fn fit_exit_code(e: &FitError) -> i32 {
    match e {
        FitError::InvalidOptions(_) => 2,
        _ => 3,
    }
}

impl CliError {
    pub fn exit_code(&self) -> i32 {
        match self {
            CliError::Invalid { .. } | CliError::Input { .. } | CliError::Data { .. } | CliError::Manifest(_) => 2,
            CliError::Fit(e) => fit_exit_code(e),
            CliError::Inference(e) => match e {
                InferenceError::InvalidArgument(_) => 2,
                InferenceError::Fit(f) => fit_exit_code(f),
                InferenceError::TooManyFailures { .. } => 4,
                InferenceError::AllCandidatesFailed => 3,
            },
            CliError::Simulation(e) => match e {
                SimulationError::TooManyFailures { .. } => 4,
                _ => 2,
            },
            CliError::Output { .. } => 1,
        }
    }
}

fn invalid(flag: &str, message: impl Into<String>) -> CliError {
    CliError::Invalid { flag: flag.to_string(), message: message.into() }
}

/// Parses `args` (program name first), runs, prints and returns the exit code.
pub fn run_from<I, T>(args: I) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<OsString> + Clone,
{
    let cli = match Cli::try_parse_from(args) {
        Ok(cli) => cli,
        Err(e) => {
            let _ = e.print();
            return e.exit_code();
        }
    };
    match run(&cli) {
        Ok(stdout) => {
            print!("{stdout}");
            0
        }
        Err(e) => {
            eprintln!("error: {e}");
            e.exit_code()
        }
    }
}

/// Runs a parsed command and returns what it prints on stdout.
pub fn run(cli: &Cli) -> Result<String, CliError> {
    let command = match &cli.command {
        Command::Replay(r) => replay_command(&r.manifest)?,
        other => other.clone(),
    };
    let out_dir = cli.out_dir.as_deref();
    match cli.threads {
        Some(k) => {
            let pool = rayon::ThreadPoolBuilder::new()
                .num_threads(k as usize)
                .build()
                .map_err(|e| invalid("--threads", e.to_string()))?;
            pool.install(|| execute(&command, out_dir, k as usize))
        }
        None => execute(&command, out_dir, rayon::current_num_threads()),
    }
}

/// Loads a manifest and checks that its input file is unchanged.
fn replay_command(path: &Path) -> Result<Command, CliError> {
    let text =
        std::fs::read_to_string(path).map_err(|source| CliError::Input { path: path.display().to_string(), source })?;
    let manifest = RunManifest::from_json(&text)?;
    if let (Some(input), Some(hash)) = (&manifest.input, &manifest.input_sha256) {
        if sha256_file(Path::new(input))? != *hash {
            return Err(CliError::Manifest(format!("{input} has changed since the recorded run")));
        }
    }
    manifest.invocation()
}

struct Outcome {
    seed: u64,
    options: serde_json::Value,
    input: Option<(PathBuf, String)>,
    /// (file name, contents); the first is also printed.
    files: Vec<(&'static str, String)>,
}

fn execute(command: &Command, out_dir: Option<&Path>, threads: usize) -> Result<String, CliError> {
    let start = Instant::now();
    let outcome = match command {
        Command::Fit(a) => cmd_fit(a)?,
        Command::Bootstrap(a) => cmd_bootstrap(a)?,
        Command::Simulate(a) => cmd_simulate(a)?,
        Command::Replay(_) => return Err(CliError::Manifest("a manifest cannot record a replay".into())),
    };
    if let Some(dir) = out_dir {
        let write = |name: &str, contents: &str| {
            let path = dir.join(name);
            std::fs::write(&path, contents).map_err(|source| CliError::Output { path: path.display().to_string(), source })
        };
        std::fs::create_dir_all(dir).map_err(|source| CliError::Output { path: dir.display().to_string(), source })?;
        for (name, contents) in &outcome.files {
            write(name, contents)?;
        }
        let (input, input_sha256) = match &outcome.input {
            Some((p, h)) => (Some(p.display().to_string()), Some(h.clone())),
            None => (None, None),
        };
        let manifest = RunManifest {
            command: command.name().to_string(),
            options: outcome.options.clone(),
            seed: outcome.seed,
            input,
            input_sha256,
            version: env!("CARGO_PKG_VERSION").to_string(),
            threads,
            duration_secs: start.elapsed().as_secs_f64(),
            outputs: outcome.files.iter().map(|(n, _)| n.to_string()).collect(),
        };
        write(MANIFEST_FILE, &manifest.to_json())?;
    }
    Ok(outcome.files.into_iter().next().map(|(_, c)| c).unwrap_or_default())
}

fn to_json<T: Serialize>(value: &T) -> String {
    let mut s = serde_json::to_string_pretty(value).expect("report serializes");
    s.push('\n');
    s
}

#[derive(Serialize)]
struct Coefficient {
    name: String,
    estimate: f64,
    #[serde(skip_serializing_if = "Option::is_none")]
    lower: Option<f64>,
    #[serde(skip_serializing_if = "Option::is_none")]
    upper: Option<f64>,
}

#[derive(Serialize)]
struct FitReport {
    method: Method,
    tau: f64,
    bandwidth: f64,
    kernel_scale: KernelScale,
    #[serde(skip_serializing_if = "Option::is_none")]
    bandwidth_selection: Option<CvResult>,
    n: usize,
    events: usize,
    coefficients: Vec<Coefficient>,
    iterations: usize,
    converged: bool,
    stop: StopReason,
    ee_residual: f64,
    fallback_count: usize,
    g_zero_count: usize,
    g_min: f64,
}

#[derive(Serialize)]
struct BootstrapReport {
    method: Method,
    tau: f64,
    bandwidth: f64,
    kernel_scale: KernelScale,
    #[serde(skip_serializing_if = "Option::is_none")]
    bandwidth_selection: Option<CvResult>,
    n: usize,
    events: usize,
    level: f64,
    reps: usize,
    n_failed: usize,
    seed: u64,
    coefficients: Vec<Coefficient>,
}

fn load(a: &FitArgs) -> Result<(SurvivalDataset, String), CliError> {
    let schema = CsvSchema {
        time: a.time_col.clone(),
        status: a.status_col.clone(),
        covariates: a.covariates.clone(),
    };
    let hash = sha256_file(&a.input)?;
    let data =
        load_csv(&a.input, &schema).map_err(|source| CliError::Data { path: a.input.display().to_string(), source })?;
    Ok((data, hash))
}

fn fit_options(a: &FitArgs) -> FitOptions {
    FitOptions {
        tau: a.tau,
        kernel_scale: a.kernel_scale,
        max_iter: a.max_iter,
        conv_tol: a.tol,
        y_star_offset: a.y_star_offset,
        method: a.method,
        ..FitOptions::default()
    }
}

/// Seed of the cross-validation fold shuffle, apart from the bootstrap streams.
fn cv_seed(seed: u64) -> u64 {
    derive_seed(seed, u64::MAX)
}

fn resolve_bandwidth(
    a: &FitArgs,
    data: &SurvivalDataset,
    opts: &FitOptions,
) -> Result<(f64, Option<CvResult>), CliError> {
    match a.bandwidth {
        Bandwidth::Fixed(h) => Ok((h, None)),
        Bandwidth::Cv => {
            if a.folds < 2 || a.folds > data.n() {
                return Err(invalid("--folds", format!("must lie in [2, {}], got {}", data.n(), a.folds)));
            }
            let cv = cv_bandwidth(data, opts, &DEFAULT_GRID, a.folds, cv_seed(a.seed))?;
            Ok((cv.chosen, Some(cv)))
        }
    }
}

fn options_json<T: Serialize>(a: &T) -> serde_json::Value {
    serde_json::to_value(a).expect("options serialize")
}

fn cmd_fit(a: &FitArgs) -> Result<Outcome, CliError> {
    let (data, hash) = load(a)?;
    let mut opts = fit_options(a);
    let (h, selection) = resolve_bandwidth(a, &data, &opts)?;
    opts.bandwidth = h;
    let f = fit(&data, &opts)?;
    let report = FitReport {
        method: opts.method,
        tau: opts.tau,
        bandwidth: h,
        kernel_scale: opts.kernel_scale,
        bandwidth_selection: selection,
        n: data.n(),
        events: data.event_count(),
        coefficients: data
            .names()
            .iter()
            .zip(&f.beta)
            .map(|(name, &estimate)| Coefficient { name: name.clone(), estimate, lower: None, upper: None })
            .collect(),
        iterations: f.iterations,
        converged: f.converged,
        stop: f.stop,
        ee_residual: f.ee_residual,
        fallback_count: f.fallback_count,
        g_zero_count: f.g_zero_count,
        g_min: f.g_min,
    };
    Ok(Outcome {
        seed: a.seed,
        options: options_json(a),
        input: Some((a.input.clone(), hash)),
        files: vec![("fit.json", to_json(&report))],
    })
}

fn cmd_bootstrap(a: &BootstrapArgs) -> Result<Outcome, CliError> {
    if a.reps < cqr_core::inference::MIN_REPLICATES {
        return Err(invalid("--reps", format!("need at least {}", cqr_core::inference::MIN_REPLICATES)));
    }
    let (data, hash) = load(&a.fit)?;
    let mut opts = fit_options(&a.fit);
    let (h, selection) = resolve_bandwidth(&a.fit, &data, &opts)?;
    opts.bandwidth = h;
    let res = bootstrap_ci(&data, &opts, a.reps, a.level, a.fit.seed)?;
    let coefficients = (0..res.estimate.len())
        .map(|j| Coefficient {
            name: data.names()[j].clone(),
            estimate: res.estimate[j],
            lower: Some(res.ci_lower[j]),
            upper: Some(res.ci_upper[j]),
        })
        .collect();
    let report = BootstrapReport {
        method: opts.method,
        tau: opts.tau,
        bandwidth: h,
        kernel_scale: opts.kernel_scale,
        bandwidth_selection: selection,
        n: data.n(),
        events: data.event_count(),
        level: a.level,
        reps: a.reps,
        n_failed: res.n_failed,
        seed: res.seed,
        coefficients,
    };
    Ok(Outcome {
        seed: a.fit.seed,
        options: options_json(a),
        input: Some((a.fit.input.clone(), hash)),
        files: vec![("bootstrap.json", to_json(&report))],
    })
}

/// Scenario from `--config` then `--params`, with `--seed` applied last.
pub fn resolve_scenario(a: &SimulateArgs) -> Result<(ScenarioSpec, Option<(PathBuf, String)>), CliError> {
    let mut text = String::new();
    let mut input = None;
    if let Some(path) = &a.config {
        text = std::fs::read_to_string(path)
            .map_err(|source| CliError::Input { path: path.display().to_string(), source })?;
        text.push('\n');
        input = Some((path.clone(), sha256_file(path)?));
    }
    if let Some(p) = &a.params {
        text.push_str(p);
    }
    let mut spec = ScenarioSpec::parse(a.scenario, &text)?;
    if let Some(seed) = a.seed {
        spec.seed = seed;
    }
    Ok((spec, input))
}

pub const SIMULATE_CSV_HEADER: &str =
    "scenario,method,coefficient,truth,mb,mae,rmse,ecp,eml,replications,excluded,nonconverged,censoring_rate,bandwidth";

fn simulate_csv(reports: &[McReport]) -> String {
    let opt = |v: Option<f64>| v.map(|x| x.to_string()).unwrap_or_default();
    let mut out = String::from(SIMULATE_CSV_HEADER);
    out.push('\n');
    for r in reports {
        for c in &r.coefficients {
            out.push_str(&format!(
                "{},{},{},{},{},{},{},{},{},{},{},{},{},{}\n",
                r.scenario.example,
                r.method,
                c.index,
                c.truth,
                c.mean_bias,
                c.mae,
                c.rmse,
                opt(c.ecp),
                opt(c.eml),
                r.replications,
                r.excluded,
                r.nonconverged,
                r.censoring_rate,
                r.bandwidth
            ));
        }
    }
    out
}

fn cmd_simulate(a: &SimulateArgs) -> Result<Outcome, CliError> {
    if a.coverage && a.boot_reps < cqr_core::inference::MIN_REPLICATES {
        return Err(invalid("--boot-reps", format!("need at least {}", cqr_core::inference::MIN_REPLICATES)));
    }
    let (spec, input) = resolve_scenario(a)?;
    let base = FitOptions {
        tau: spec.tau,
        bandwidth: a.bandwidth,
        kernel_scale: a.kernel_scale,
        max_iter: a.max_iter,
        conv_tol: a.tol,
        ..FitOptions::default()
    };
    let reports = a
        .method
        .iter()
        .map(|&method| {
            let opts = FitOptions { method, ..base.clone() };
            if a.coverage {
                run_coverage(&spec, a.boot_reps, a.level, a.reps, &opts)
            } else {
                run_mc(&spec, a.reps, &opts)
            }
        })
        .collect::<Result<Vec<_>, _>>()?;
    #[derive(Serialize)]
    struct SimulateReport<'a> {
        scenario: &'a ScenarioSpec,
        reports: &'a [McReport],
    }
    let json = to_json(&SimulateReport { scenario: &spec, reports: &reports });
    Ok(Outcome {
        seed: spec.seed,
        options: options_json(a),
        input,
        files: vec![("simulate.csv", simulate_csv(&reports)), ("simulate.json", json)],
    })
}
