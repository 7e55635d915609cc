//! Synthetic censored-data scenarios and a Monte Carlo driver reporting
//! MB / MAE / RMSE and bootstrap coverage.

use std::fmt;
use std::str::FromStr;

use rand::Rng;
use rand_distr::{Distribution, StandardNormal, Uniform};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use statrs::distribution::{ContinuousCDF, Normal};
use thiserror::Error;

use crate::data::SurvivalDataset;
use crate::estimator::{fit, FitOptions, KernelScale, Method};
use crate::inference::bootstrap_ci;
use crate::rng::{derive_seed, stream};

/// Largest share of replicates that may fail before a run is rejected.
pub const MAX_EXCLUDED_SHARE: f64 = 0.05;
/// Bandwidth for `d` covariates in the multi-covariate study.
pub const MULTI_D_BANDWIDTHS: [f64; 5] = [0.05, 0.1, 0.2, 0.3, 0.4];

#[derive(Debug, Error, Clone, PartialEq)]
pub enum SimulationError {
    #[error("unknown scenario '{0}' (expected ex1, ex2, ex3, ex4 or multid)")]
    UnknownScenario(String),
    #[error("unknown parameter '{0}'")]
    UnknownParam(String),
    #[error("parameter '{key}': {reason}")]
    InvalidParam { key: String, reason: String },
    #[error("replications must be at least 1")]
    NoReplications,
    #[error("{excluded} of {replications} replicates failed to fit (limit is 5%)")]
    TooManyFailures { excluded: usize, replications: usize },
}

fn invalid(key: &str, reason: impl Into<String>) -> SimulationError {
    SimulationError::InvalidParam { key: key.to_string(), reason: reason.into() }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Example {
    Ex1,
    Ex2,
    Ex3,
    Ex4,
    MultiD,
}

impl Example {
    pub fn as_str(self) -> &'static str {
        match self {
            Example::Ex1 => "ex1",
            Example::Ex2 => "ex2",
            Example::Ex3 => "ex3",
            Example::Ex4 => "ex4",
            Example::MultiD => "multid",
        }
    }
}

const KEYS: [&str; 9] = ["n", "tau", "cens", "seed", "scenario", "a", "b", "A", "d"];

impl Example {
    /// Whether the key=value form of this design accepts `key`.
    pub fn uses(self, key: &str) -> bool {
        match key {
            "n" | "tau" | "cens" | "seed" | "scenario" => true,
            "a" => matches!(self, Example::Ex2 | Example::Ex3 | Example::Ex4),
            "b" | "A" => self == Example::Ex4,
            "d" => self == Example::MultiD,
            _ => false,
        }
    }
}

impl FromStr for Example {
    type Err = SimulationError;
    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s.trim().to_ascii_lowercase().as_str() {
            "ex1" | "1" => Ok(Example::Ex1),
            "ex2" | "2" => Ok(Example::Ex2),
            "ex3" | "3" => Ok(Example::Ex3),
            "ex4" | "4" => Ok(Example::Ex4),
            "multid" | "multi_d" => Ok(Example::MultiD),
            other => Err(SimulationError::UnknownScenario(other.to_string())),
        }
    }
}

impl fmt::Display for Example {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

/// One simulation design. Keys in the key=value form are the field names,
/// with `cens` for the censoring target and `A` for the Ex4 offset.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ScenarioSpec {
    pub example: Example,
    pub n: usize,
    pub tau: f64,
    /// Censoring target in percent.
    pub cens: u32,
    /// Heteroscedasticity `a` of Ex2 to Ex4.
    pub a: f64,
    /// Covariate dependence `b` of the Ex4 censoring time.
    pub b: f64,
    /// Location `A` of the Ex4 censoring time.
    pub offset: f64,
    /// Total covariate count for the multi-covariate study.
    pub d: usize,
    pub seed: u64,
}

impl ScenarioSpec {
    pub fn new(example: Example) -> Self {
        let mut s = ScenarioSpec { example, n: 100, tau: 0.5, cens: 40, a: 2.0, b: 1.0, offset: ex4_offset(30), d: 1, seed: 1 };
        match example {
            Example::Ex1 => s.a = 0.0,
            Example::Ex3 => s.cens = 30,
            Example::Ex4 => s.cens = 30,
            Example::MultiD => {
                s.a = 0.0;
                s.n = 200;
                s.d = 2;
            }
            Example::Ex2 => {}
        }
        s
    }

    /// Parses `k=v` pairs separated by commas or newlines; `#` starts a
    /// comment. A `scenario` key, when present, must agree with `example`.
    pub fn parse(example: Example, text: &str) -> Result<Self, SimulationError> {
        let mut spec = ScenarioSpec::new(example);
        let mut explicit_offset = false;
        for line in text.lines() {
            let line = line.split('#').next().unwrap_or("");
            for item in line.split(',') {
                let item = item.trim();
                if item.is_empty() {
                    continue;
                }
                let (k, v) = item
                    .split_once('=')
                    .ok_or_else(|| invalid(item, "expected key=value"))?;
                let (k, v) = (k.trim(), v.trim());
                if !example.uses(k) {
                    return Err(if KEYS.contains(&k) {
                        invalid(k, format!("not used by {example}"))
                    } else {
                        SimulationError::UnknownParam(k.to_string())
                    });
                }
                let num = |v: &str| v.parse::<f64>().map_err(|_| invalid(k, format!("'{v}' is not a number")));
                let int = |v: &str| v.parse::<u64>().map_err(|_| invalid(k, format!("'{v}' is not an integer")));
                match k {
                    "n" => spec.n = int(v)? as usize,
                    "tau" => spec.tau = num(v)?,
                    "cens" => {
                        let c = v.trim_end_matches('%');
                        spec.cens = c.parse().map_err(|_| invalid(k, format!("'{c}' is not a percentage")))?;
                    }
                    "a" => spec.a = num(v)?,
                    "b" => spec.b = num(v)?,
                    "A" => {
                        spec.offset = num(v)?;
                        explicit_offset = true;
                    }
                    "d" => spec.d = int(v)? as usize,
                    "seed" => spec.seed = int(v)?,
                    "scenario" => {
                        if v.parse::<Example>()? != example {
                            return Err(invalid(k, format!("'{v}' conflicts with {example}")));
                        }
                    }
                    _ => unreachable!("key checked above"),
                }
            }
        }
        if example == Example::Ex4 && !explicit_offset {
            spec.offset = ex4_offset(spec.cens);
        }
        spec.validate()?;
        Ok(spec)
    }

    /// Key=value form accepted by [`ScenarioSpec::parse`].
    pub fn to_kv(&self) -> String {
        let mut out = format!("scenario={}\nn={}\ntau={}\ncens={}\nseed={}\n", self.example, self.n, self.tau, self.cens, self.seed);
        match self.example {
            Example::Ex1 => {}
            Example::Ex2 | Example::Ex3 => out += &format!("a={}\n", self.a),
            Example::Ex4 => out += &format!("a={}\nb={}\nA={}\n", self.a, self.b, self.offset),
            Example::MultiD => out += &format!("d={}\n", self.d),
        }
        out
    }

    pub fn validate(&self) -> Result<(), SimulationError> {
        if self.n < 2 {
            return Err(invalid("n", "must be at least 2"));
        }
        if !(self.tau > 0.0 && self.tau < 1.0) {
            return Err(invalid("tau", "must lie in (0, 1)"));
        }
        let allowed: &[u32] = match self.example {
            Example::Ex1 | Example::Ex2 | Example::MultiD => &[40, 15],
            Example::Ex3 => &[30],
            Example::Ex4 => &[30, 40, 15],
        };
        if !allowed.contains(&self.cens) {
            return Err(invalid("cens", format!("{} is not available for {}", self.cens, self.example)));
        }
        if !(self.a >= 0.0 && self.a.is_finite()) {
            return Err(invalid("a", "must be finite and non-negative"));
        }
        if !self.b.is_finite() {
            return Err(invalid("b", "must be finite"));
        }
        if !self.offset.is_finite() {
            return Err(invalid("A", "must be finite"));
        }
        if self.example == Example::MultiD && !(1..=5).contains(&self.d) {
            return Err(invalid("d", "must lie in 1..=5"));
        }
        Ok(())
    }

    /// Number of non-intercept covariates.
    pub fn covariates(&self) -> usize {
        if self.example == Example::MultiD { self.d } else { 1 }
    }

    pub fn true_beta(&self) -> Vec<f64> {
        let mut beta = match self.example {
            Example::Ex1 | Example::MultiD => vec![3.0, 5.0],
            Example::Ex2 | Example::Ex4 => vec![2.0, 1.0],
            Example::Ex3 => vec![1.0, 1.0],
        };
        beta.resize(self.covariates() + 1, 0.0);
        beta
    }

    /// Bandwidth for this design: the shared default, except in the
    /// multi-covariate study where it grows with `d`.
    pub fn bandwidth(&self, default: f64) -> f64 {
        match self.example {
            Example::MultiD => MULTI_D_BANDWIDTHS[self.d - 1],
            _ => default,
        }
    }
}

/// Ex4 censoring location giving `cens` percent censoring at `b = 1`,
/// `a = 2`, `tau = 0.5` (found by bisection on 2e6 draws).
pub fn ex4_offset(cens: u32) -> f64 {
    match cens {
        15 => 4.24,
        40 => 2.44,
        _ => 2.95,
    }
}

/// Fit options used for the simulation designs: kernel distances are
/// measured on the covariates as generated.
pub fn design_options() -> FitOptions {
    FitOptions { kernel_scale: KernelScale::Raw, ..FitOptions::default() }
}

/// Standard normal quantile.
pub fn normal_quantile(p: f64) -> f64 {
    Normal::standard().inverse_cdf(p)
}

fn scale(a: f64, z: f64) -> f64 {
    let s = 0.2 + a * (z - 0.5).powi(2);
    assert!(s > 0.0, "scale function must be positive");
    s
}

/// Failure time at first covariate `z` for error `eps = eta - q_tau`.
pub fn failure_time(spec: &ScenarioSpec, beta: &[f64], z: f64, eps: f64) -> f64 {
    match spec.example {
        Example::Ex1 | Example::MultiD => beta[0] + beta[1] * z + eps,
        _ => beta[0] + beta[1] * z + scale(spec.a, z) * eps,
    }
}

/// Draws one data set using `spec.seed`.
pub fn generate(spec: &ScenarioSpec) -> SurvivalDataset {
    generate_seeded(spec, spec.seed)
}

/// Draws one data set from the design of `spec` with an explicit seed.
pub fn generate_seeded(spec: &ScenarioSpec, seed: u64) -> SurvivalDataset {
    let mut rng = stream(seed, 0);
    let q = normal_quantile(spec.tau);
    let beta = spec.true_beta();
    let k = spec.covariates();
    let unit = Uniform::new(0.0, 1.0).expect("valid range");
    let mut y = Vec::with_capacity(spec.n);
    let mut delta = Vec::with_capacity(spec.n);
    let mut z = Vec::with_capacity(spec.n);
    for _ in 0..spec.n {
        let z1: f64 = match spec.example {
            Example::Ex1 | Example::MultiD => unit.sample(&mut rng),
            _ => StandardNormal.sample(&mut rng),
        };
        let eta: f64 = StandardNormal.sample(&mut rng);
        let t = failure_time(spec, &beta, z1, eta - q);
        let mut row = Vec::with_capacity(k);
        row.push(z1);
        for _ in 1..k {
            row.push(unit.sample(&mut rng));
        }
        z.push(row);
        let c = match spec.example {
            Example::Ex1 | Example::MultiD => rng.random::<f64>() * if spec.cens == 15 { 36.0 } else { 14.0 },
            Example::Ex2 => rng.random::<f64>() * if spec.cens == 15 { 18.0 } else { 7.0 },
            Example::Ex3 => rng.random::<f64>() * if z1 < 1.0 { 4.0 } else { 8.0 },
            Example::Ex4 => {
                let eta: f64 = StandardNormal.sample(&mut rng);
                spec.offset + spec.b * z1 + eta
            }
        };
        y.push(t.min(c));
        delta.push(t <= c);
    }
    SurvivalDataset::from_covariates(y, delta, &z).expect("generated data are well formed")
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CoefficientSummary {
    pub index: usize,
    pub truth: f64,
    pub mean_bias: f64,
    pub mae: f64,
    pub rmse: f64,
    pub ecp: Option<f64>,
    pub eml: Option<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct McReport {
    pub scenario: ScenarioSpec,
    pub method: Method,
    pub replications: usize,
    /// Replicates excluded after a fit failure.
    pub excluded: usize,
    /// Replicates whose fit stopped without converging.
    pub nonconverged: usize,
    pub censoring_rate: f64,
    pub bandwidth: f64,
    pub level: Option<f64>,
    pub boot_reps: Option<usize>,
    pub coefficients: Vec<CoefficientSummary>,
}

struct Replicate {
    beta: Vec<f64>,
    converged: bool,
    censoring: f64,
    interval: Option<(Vec<f64>, Vec<f64>)>,
}

fn median(mut v: Vec<f64>) -> f64 {
    v.sort_by(f64::total_cmp);
    let m = v.len();
    if m % 2 == 1 { v[m / 2] } else { 0.5 * (v[m / 2 - 1] + v[m / 2]) }
}

/// Monte Carlo point-estimate study of `opts.method`. Replicate `r` uses
/// seed `derive_seed(spec.seed, r)`.
pub fn run_mc(spec: &ScenarioSpec, replications: usize, opts: &FitOptions) -> Result<McReport, SimulationError> {
    run(spec, replications, opts, None)
}

/// Monte Carlo coverage study of percentile bootstrap intervals.
pub fn run_coverage(
    spec: &ScenarioSpec,
    boot_reps: usize,
    level: f64,
    replications: usize,
    opts: &FitOptions,
) -> Result<McReport, SimulationError> {
    run(spec, replications, opts, Some((boot_reps, level)))
}

/// Example 1 with `d - 1` extra uniform null covariates at the design's
/// bandwidth schedule.
pub fn multi_d_study(
    d: usize,
    cens: u32,
    n: usize,
    replications: usize,
    seed: u64,
    opts: &FitOptions,
) -> Result<McReport, SimulationError> {
    let spec = ScenarioSpec { d, cens, n, seed, tau: opts.tau, ..ScenarioSpec::new(Example::MultiD) };
    spec.validate()?;
    run_mc(&spec, replications, opts)
}

fn run(
    spec: &ScenarioSpec,
    replications: usize,
    opts: &FitOptions,
    coverage: Option<(usize, f64)>,
) -> Result<McReport, SimulationError> {
    spec.validate()?;
    if replications == 0 {
        return Err(SimulationError::NoReplications);
    }
    let opts = FitOptions { tau: spec.tau, bandwidth: spec.bandwidth(opts.bandwidth), ..opts.clone() };
    let results: Vec<Option<Replicate>> = (0..replications)
        .into_par_iter()
        .map(|r| {
            let seed = derive_seed(spec.seed, r as u64);
            let data = generate_seeded(spec, seed);
            let censoring = data.censoring_rate();
            match coverage {
                None => fit(&data, &opts).ok().map(|f| Replicate {
                    beta: f.beta,
                    converged: f.converged,
                    censoring,
                    interval: None,
                }),
                Some((b, level)) => bootstrap_ci(&data, &opts, b, level, derive_seed(seed, 1)).ok().map(|res| Replicate {
                    beta: res.estimate,
                    converged: true,
                    censoring,
                    interval: Some((res.ci_lower, res.ci_upper)),
                }),
            }
        })
        .collect();

    let excluded = results.iter().filter(|r| r.is_none()).count();
    if excluded as f64 > MAX_EXCLUDED_SHARE * replications as f64 {
        return Err(SimulationError::TooManyFailures { excluded, replications });
    }
    let kept: Vec<Replicate> = results.into_iter().flatten().collect();
    let used = kept.len() as f64;
    let truth = spec.true_beta();
    let coefficients = truth
        .iter()
        .enumerate()
        .map(|(j, &t)| {
            let err: Vec<f64> = kept.iter().map(|r| r.beta[j] - t).collect();
            let (ecp, eml) = match coverage {
                None => (None, None),
                Some(_) => {
                    let ivs = kept.iter().map(|r| r.interval.as_ref().expect("coverage run"));
                    let covered = ivs.clone().filter(|(lo, hi)| lo[j] <= t && t <= hi[j]).count();
                    let length: f64 = ivs.map(|(lo, hi)| hi[j] - lo[j]).sum();
                    (Some(covered as f64 / used), Some(length / used))
                }
            };
            CoefficientSummary {
                index: j,
                truth: t,
                mean_bias: err.iter().sum::<f64>() / used,
                mae: median(err.iter().map(|e| e.abs()).collect()),
                rmse: (err.iter().map(|e| e * e).sum::<f64>() / used).sqrt(),
                ecp,
                eml,
            }
        })
        .collect();
    Ok(McReport {
        scenario: spec.clone(),
        method: opts.method,
        replications,
        excluded,
        nonconverged: kept.iter().filter(|r| !r.converged).count(),
        censoring_rate: kept.iter().map(|r| r.censoring).sum::<f64>() / used,
        bandwidth: opts.bandwidth,
        level: coverage.map(|c| c.1),
        boot_reps: coverage.map(|c| c.0),
        coefficients,
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn parse_defaults_and_overrides() {
        let s = ScenarioSpec::parse(Example::Ex2, "cens=15, a=0.5\n# note\nn=50").unwrap();
        assert_eq!((s.cens, s.a, s.n), (15, 0.5, 50));
        assert_eq!(s.true_beta(), vec![2.0, 1.0]);
        let e4 = ScenarioSpec::parse(Example::Ex4, "cens=15").unwrap();
        assert_eq!(e4.offset, 4.24);
        let m = ScenarioSpec::parse(Example::MultiD, "d=3").unwrap();
        assert_eq!(m.true_beta(), vec![3.0, 5.0, 0.0, 0.0]);
        assert_eq!(m.bandwidth(0.05), 0.2);
    }

    #[test]
    fn parse_rejects_bad_input() {
        assert_eq!(
            ScenarioSpec::parse(Example::Ex1, "bogus=1"),
            Err(SimulationError::UnknownParam("bogus".into()))
        );
        assert!(ScenarioSpec::parse(Example::Ex1, "n=abc").is_err());
        assert!(ScenarioSpec::parse(Example::Ex1, "cens=30").is_err());
        assert!(ScenarioSpec::parse(Example::Ex1, "tau=1").is_err());
        assert!(ScenarioSpec::parse(Example::Ex1, "scenario=ex2").is_err());
        assert!(ScenarioSpec::parse(Example::MultiD, "d=6").is_err());
        assert!(ScenarioSpec::parse(Example::Ex1, "n").is_err());
    }

    #[test]
    fn kv_round_trip() {
        for ex in [Example::Ex1, Example::Ex2, Example::Ex3, Example::Ex4, Example::MultiD] {
            let s = ScenarioSpec { seed: 99, n: 37, ..ScenarioSpec::new(ex) };
            assert_eq!(ScenarioSpec::parse(ex, &s.to_kv()).unwrap(), s);
        }
    }

    #[test]
    fn generator_is_deterministic() {
        let s = ScenarioSpec::new(Example::Ex3);
        assert_eq!(generate(&s), generate(&s));
        assert_ne!(generate(&s).y(), generate_seeded(&s, 2).y());
    }

    #[test]
    fn single_replicate_metrics() {
        let s = ScenarioSpec { n: 60, ..ScenarioSpec::new(Example::Ex1) };
        let opts = FitOptions::default();
        let rep = run_mc(&s, 1, &opts).unwrap();
        let f = fit(&generate_seeded(&s, derive_seed(s.seed, 0)), &opts).unwrap();
        for (c, (b, t)) in rep.coefficients.iter().zip(f.beta.iter().zip(s.true_beta())) {
            assert_eq!(c.mean_bias, b - t);
            assert_eq!(c.mae, (b - t).abs());
            assert_eq!(c.rmse, (b - t).abs());
        }
    }
}
