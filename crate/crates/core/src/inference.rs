//! Percentile bootstrap intervals and K-fold cross-validated bandwidth choice.

use rand::seq::SliceRandom;
use rand::Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::data::SurvivalDataset;
use crate::estimator::{fit, FitError, FitOptions};
use crate::qr::check_loss;
use crate::rng::stream;

/// Bandwidths tried by default.
pub const DEFAULT_GRID: [f64; 5] = [0.05, 0.1, 0.2, 0.3, 0.4];
pub const DEFAULT_FOLDS: usize = 10;
pub const MIN_REPLICATES: usize = 50;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum InferenceError {
    #[error("invalid argument: {0}")]
    InvalidArgument(String),
    #[error("fit on the full sample failed: {0}")]
    Fit(#[from] FitError),
    #[error("{failed} of {replicates} bootstrap replicates failed (limit is 10%)")]
    TooManyFailures { failed: usize, replicates: usize },
    #[error("every bandwidth candidate failed to fit on some fold")]
    AllCandidatesFailed,
}

/// How bootstrap samples are drawn.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Resample {
    /// `n` draws with replacement.
    WithReplacement,
    /// The original sample every time; a diagnostic that must reproduce the
    /// point estimate.
    Identity,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BootstrapResult {
    /// Fit on the full sample.
    pub estimate: Vec<f64>,
    /// Successful replicate fits, in replicate order.
    pub replicates: Vec<Vec<f64>>,
    pub ci_lower: Vec<f64>,
    pub ci_upper: Vec<f64>,
    pub level: f64,
    pub n_failed: usize,
    pub seed: u64,
}

impl BootstrapResult {
    /// Percentile interval of every coefficient at another level, from the
    /// same replicates.
    pub fn intervals(&self, level: f64) -> (Vec<f64>, Vec<f64>) {
        percentile_intervals(&self.replicates, self.estimate.len(), level)
    }
}

/// Order-statistic percentile interval of `sorted` (ascending): the
/// endpoints are the `ceil(q N)`-th smallest values for
/// `q = (1 -/+ level) / 2`.
pub fn percentile_interval(sorted: &[f64], level: f64) -> (f64, f64) {
    let n = sorted.len();
    assert!(n > 0, "empty replicate set");
    let pick = |q: f64| {
        // Guard against q * n landing a rounding error above an integer.
        let k = (q * n as f64 - 1e-9).ceil() as usize;
        sorted[k.clamp(1, n) - 1]
    };
    (pick((1.0 - level) / 2.0), pick((1.0 + level) / 2.0))
}

fn percentile_intervals(replicates: &[Vec<f64>], p: usize, level: f64) -> (Vec<f64>, Vec<f64>) {
    (0..p)
        .map(|j| {
            let mut col: Vec<f64> = replicates.iter().map(|r| r[j]).collect();
            col.sort_by(f64::total_cmp);
            percentile_interval(&col, level)
        })
        .unzip()
}

pub fn bootstrap_ci(
    data: &SurvivalDataset,
    opts: &FitOptions,
    replicates: usize,
    level: f64,
    seed: u64,
) -> Result<BootstrapResult, InferenceError> {
    bootstrap_with(data, opts, replicates, level, seed, Resample::WithReplacement)
}

pub fn bootstrap_with(
    data: &SurvivalDataset,
    opts: &FitOptions,
    replicates: usize,
    level: f64,
    seed: u64,
    resample: Resample,
) -> Result<BootstrapResult, InferenceError> {
    if replicates < MIN_REPLICATES {
        return Err(InferenceError::InvalidArgument(format!(
            "need at least {MIN_REPLICATES} bootstrap replicates, got {replicates}"
        )));
    }
    if !(level > 0.0 && level < 1.0) {
        return Err(InferenceError::InvalidArgument(format!("level must lie in (0, 1), got {level}")));
    }
    let estimate = fit(data, opts)?.beta;
    let n = data.n();
    let fits: Vec<Option<Vec<f64>>> = (0..replicates)
        .into_par_iter()
        .map(|r| {
            let sample = match resample {
                Resample::WithReplacement => {
                    let mut rng = stream(seed, r as u64);
                    let rows: Vec<usize> = (0..n).map(|_| rng.random_range(0..n)).collect();
                    data.select(&rows)
                }
                Resample::Identity => data.clone(),
            };
            fit(&sample, opts).ok().map(|f| f.beta)
        })
        .collect();
    let n_failed = fits.iter().filter(|f| f.is_none()).count();
    if n_failed * 10 > replicates {
        return Err(InferenceError::TooManyFailures { failed: n_failed, replicates });
    }
    let replicates: Vec<Vec<f64>> = fits.into_iter().flatten().collect();
    let (ci_lower, ci_upper) = percentile_intervals(&replicates, estimate.len(), level);
    Ok(BootstrapResult { estimate, replicates, ci_lower, ci_upper, level, n_failed, seed })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CvResult {
    pub grid: Vec<f64>,
    /// Mean held-out check loss per candidate; infinite when a fold failed.
    pub losses: Vec<f64>,
    pub chosen: f64,
}

/// Random, near-equal partition of `0..n` into `k` folds.
pub fn fold_assignment(n: usize, k: usize, seed: u64) -> Vec<usize> {
    let mut perm: Vec<usize> = (0..n).collect();
    perm.shuffle(&mut stream(seed, 0));
    let mut folds = vec![0; n];
    for (pos, &i) in perm.iter().enumerate() {
        folds[i] = pos % k;
    }
    folds
}

pub fn cv_bandwidth(
    data: &SurvivalDataset,
    opts: &FitOptions,
    grid: &[f64],
    k: usize,
    seed: u64,
) -> Result<CvResult, InferenceError> {
    if k < 2 || k > data.n() {
        return Err(InferenceError::InvalidArgument(format!("fold count {k} must lie in [2, n]")));
    }
    cv_with_folds(data, opts, grid, &fold_assignment(data.n(), k, seed))
}

/// Cross-validation over a fixed partition (`folds[i]` is the fold label of
/// observation `i`).
pub fn cv_with_folds(
    data: &SurvivalDataset,
    opts: &FitOptions,
    grid: &[f64],
    folds: &[usize],
) -> Result<CvResult, InferenceError> {
    if grid.is_empty() {
        return Err(InferenceError::InvalidArgument("empty bandwidth grid".into()));
    }
    if let Some(h) = grid.iter().find(|h| !(**h > 0.0 && h.is_finite())) {
        return Err(InferenceError::InvalidArgument(format!("bandwidth {h} is not positive")));
    }
    if folds.len() != data.n() {
        return Err(InferenceError::InvalidArgument("one fold label per observation".into()));
    }
    // folds in order of first appearance, so relabeling leaves sums unchanged
    let mut labels: Vec<usize> = Vec::new();
    for &f in folds {
        if !labels.contains(&f) {
            labels.push(f);
        }
    }

    let splits: Vec<(SurvivalDataset, SurvivalDataset)> = labels
        .iter()
        .map(|&f| {
            let train: Vec<usize> = (0..data.n()).filter(|&i| folds[i] != f).collect();
            let test: Vec<usize> = (0..data.n()).filter(|&i| folds[i] == f).collect();
            (data.select(&train), data.select(&test))
        })
        .collect();

    let losses: Vec<f64> = grid
        .par_iter()
        .map(|&h| {
            let o = FitOptions { bandwidth: h, ..opts.clone() };
            let mut total = 0.0;
            for (train, test) in &splits {
                let Ok(f) = fit(train, &o) else {
                    return f64::INFINITY;
                };
                total += (0..test.n())
                    .filter(|&i| test.delta()[i])
                    .map(|i| check_loss(test.y()[i] - test.predict(i, &f.beta), o.tau))
                    .sum::<f64>();
            }
            total / splits.len() as f64
        })
        .collect();

    let mut best: Option<usize> = None;
    for c in 0..grid.len() {
        if !losses[c].is_finite() {
            continue;
        }
        best = match best {
            Some(b) if losses[b] < losses[c] || (losses[b] == losses[c] && grid[b] <= grid[c]) => Some(b),
            _ => Some(c),
        };
    }
    let chosen = grid[best.ok_or(InferenceError::AllCandidatesFailed)?];
    Ok(CvResult { grid: grid.to_vec(), losses, chosen })
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn percentile_endpoints() {
        let v: Vec<f64> = (1..=400).map(f64::from).collect();
        assert_eq!(percentile_interval(&v, 0.95), (10.0, 390.0));
        assert_eq!(percentile_interval(&v, 0.90), (20.0, 380.0));
        let one = [3.5];
        assert_eq!(percentile_interval(&one, 0.95), (3.5, 3.5));
    }

    #[test]
    fn folds_are_balanced() {
        let f = fold_assignment(23, 5, 1);
        let mut counts = [0; 5];
        f.iter().for_each(|&k| counts[k] += 1);
        assert!(counts.iter().all(|&c| c == 4 || c == 5));
        assert_eq!(f, fold_assignment(23, 5, 1));
    }
}
