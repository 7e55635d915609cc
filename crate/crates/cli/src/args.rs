use std::fmt;
use std::path::PathBuf;
use std::str::FromStr;

use clap::{Args, Parser, Subcommand};
use cqr_core::{Example, KernelScale, Method};
use serde::{Deserialize, Serialize};

#[derive(Debug, Parser)]
#[command(name = "cqr", version, about = "Censored quantile regression with local Kaplan-Meier weights")]
pub struct Cli {
    /// Directory for JSON/CSV outputs and the run manifest. Nothing is
    /// written to disk without it.
    #[arg(long, global = true)]
    pub out_dir: Option<PathBuf>,
    /// Worker threads for bootstrap, cross-validation and Monte Carlo loops.
    #[arg(long, global = true, env = "CQR_THREADS", value_parser = clap::value_parser!(u32).range(1..))]
    pub threads: Option<u32>,
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Clone, PartialEq, Subcommand)]
pub enum Command {
    /// Fit one model to a CSV file.
    Fit(FitArgs),
    /// Fit plus percentile bootstrap intervals.
    Bootstrap(BootstrapArgs),
    /// Monte Carlo study of a simulation design.
    Simulate(SimulateArgs),
    /// Re-run the command recorded in a manifest.
    Replay(ReplayArgs),
}

impl Command {
    pub fn name(&self) -> &'static str {
        match self {
            Command::Fit(_) => "fit",
            Command::Bootstrap(_) => "bootstrap",
            Command::Simulate(_) => "simulate",
            Command::Replay(_) => "replay",
        }
    }
}

/// Fixed bandwidth or `cv` for 10-fold cross-validation over the default grid.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(into = "String", try_from = "String")]
pub enum Bandwidth {
    Fixed(f64),
    Cv,
}

impl FromStr for Bandwidth {
    type Err = String;
    fn from_str(s: &str) -> Result<Self, String> {
        if s.trim().eq_ignore_ascii_case("cv") {
            return Ok(Bandwidth::Cv);
        }
        let h: f64 = s.trim().parse().map_err(|_| format!("expected a positive number or `cv`, got `{s}`"))?;
        if h > 0.0 && h.is_finite() {
            Ok(Bandwidth::Fixed(h))
        } else {
            Err(format!("bandwidth must be positive, got {s}"))
        }
    }
}

impl fmt::Display for Bandwidth {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Bandwidth::Fixed(h) => write!(f, "{h}"),
            Bandwidth::Cv => f.write_str("cv"),
        }
    }
}

impl From<Bandwidth> for String {
    fn from(b: Bandwidth) -> String {
        b.to_string()
    }
}

impl TryFrom<String> for Bandwidth {
    type Error = String;
    fn try_from(s: String) -> Result<Self, String> {
        s.parse()
    }
}

fn open_unit(s: &str) -> Result<f64, String> {
    let v: f64 = s.parse().map_err(|_| format!("`{s}` is not a number"))?;
    if v > 0.0 && v < 1.0 {
        Ok(v)
    } else {
        Err(format!("must lie strictly between 0 and 1, got {s}"))
    }
}

fn positive(s: &str) -> Result<f64, String> {
    let v: f64 = s.parse().map_err(|_| format!("`{s}` is not a number"))?;
    if v > 0.0 && v.is_finite() {
        Ok(v)
    } else {
        Err(format!("must be positive, got {s}"))
    }
}

fn at_least_one(s: &str) -> Result<usize, String> {
    match s.parse::<usize>() {
        Ok(v) if v >= 1 => Ok(v),
        _ => Err(format!("must be a positive integer, got {s}")),
    }
}

#[derive(Debug, Clone, PartialEq, Args, Serialize, Deserialize)]
pub struct FitArgs {
    /// CSV with a header row.
    #[arg(long)]
    pub input: PathBuf,
    #[arg(long, default_value = "time")]
    pub time_col: String,
    #[arg(long, default_value = "status")]
    pub status_col: String,
    /// Comma-separated covariate columns; every other column when omitted.
    #[arg(long, value_delimiter = ',')]
    pub covariates: Option<Vec<String>>,
    #[arg(long, default_value_t = 0.5, value_parser = open_unit)]
    pub tau: f64,
    #[arg(long, default_value = "0.05")]
    pub bandwidth: Bandwidth,
    #[arg(long, default_value = "cqr")]
    pub method: Method,
    #[arg(long, default_value = "standardized")]
    pub kernel_scale: KernelScale,
    #[arg(long, default_value_t = 50, value_parser = at_least_one)]
    pub max_iter: usize,
    /// Convergence tolerance on the coefficient change.
    #[arg(long, default_value_t = 1e-4, value_parser = positive)]
    pub tol: f64,
    /// `A` in the pseudo-response `min(Y) - A`.
    #[arg(long, default_value_t = 200.0, value_parser = positive)]
    pub y_star_offset: f64,
    /// Folds for `--bandwidth cv`.
    #[arg(long, default_value_t = 10)]
    pub folds: usize,
    #[arg(long, default_value_t = 1)]
    pub seed: u64,
}

#[derive(Debug, Clone, PartialEq, Args, Serialize, Deserialize)]
pub struct BootstrapArgs {
    #[command(flatten)]
    #[serde(flatten)]
    pub fit: FitArgs,
    #[arg(long, default_value_t = 1000)]
    pub reps: usize,
    #[arg(long, default_value_t = 0.95, value_parser = open_unit)]
    pub level: f64,
}

#[derive(Debug, Clone, PartialEq, Args, Serialize, Deserialize)]
pub struct SimulateArgs {
    #[arg(long)]
    pub scenario: Example,
    /// Design parameters as `k=v,...` (n, tau, cens, a, b, A, d, seed).
    #[arg(long)]
    pub params: Option<String>,
    /// File of `k=v` lines read before `--params`.
    #[arg(long)]
    pub config: Option<PathBuf>,
    #[arg(long, default_value_t = 100, value_parser = at_least_one)]
    pub reps: usize,
    #[arg(long, value_delimiter = ',', default_value = "cqr")]
    pub method: Vec<Method>,
    /// Also compute bootstrap interval coverage.
    #[arg(long)]
    pub coverage: bool,
    #[arg(long, default_value_t = 400)]
    pub boot_reps: usize,
    #[arg(long, default_value_t = 0.95, value_parser = open_unit)]
    pub level: f64,
    /// Ignored for multid, which uses a fixed schedule by dimension.
    #[arg(long, default_value_t = 0.05, value_parser = positive)]
    pub bandwidth: f64,
    #[arg(long, default_value = "raw")]
    pub kernel_scale: KernelScale,
    #[arg(long, default_value_t = 50, value_parser = at_least_one)]
    pub max_iter: usize,
    #[arg(long, default_value_t = 1e-4, value_parser = positive)]
    pub tol: f64,
    /// Master seed; overrides `seed` in the parameters.
    #[arg(long)]
    pub seed: Option<u64>,
}

#[derive(Debug, Clone, PartialEq, Args)]
pub struct ReplayArgs {
    pub manifest: PathBuf,
}
