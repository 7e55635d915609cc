//! Censored quantile regression by iterated weighted quantile regression.
//!
//! The estimating equation
//!
//! ```text
//! M_n(beta) = sum_i Z_i [ I(Y_i - beta'Z_i >= 0) / G(beta'Z_i | Z_i) - (1 - tau) ]
//! ```
//!
//! is, for fixed weights `G_i`, the subgradient condition of a weighted
//! check-loss problem on an augmented sample: each observation `(Y_i, Z_i)`
//! with weight `1/G_i` plus a pseudo-observation `(Y*, Z_i (G_i - 1))` with
//! the same weight, where `Y*` sits far below every fitted value. [`fit`]
//! alternates between re-estimating `G_i` at the current coefficients and
//! solving that problem, starting from an inverse-probability-weighted fit on
//! the uncensored observations.

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::data::{dot, DataError, Standardization, SurvivalDataset};
use crate::km::{kernel_weights, KernelSpec, LocalKmCurve, TimeOrder};
use crate::qr::{self, QrError, QrProblem};

#[derive(Debug, Error, Clone, PartialEq)]
pub enum FitError {
    #[error("invalid option: {0}")]
    InvalidOptions(String),
    #[error("cannot standardize covariates: non-intercept column {0} is constant")]
    ConstantColumn(usize),
    #[error("only {usable} uncensored observations with positive censoring weight; need {required}")]
    InsufficientUncensored { usable: usize, required: usize },
    #[error("quantile regression failed: {0}")]
    Solver(#[from] QrError),
    #[error(
        "pseudo-response offset {offset} is too small for the fitted values (needs more than {required}); \
         increase the offset"
    )]
    OffsetTooSmall { offset: f64, required: f64 },
}

impl From<DataError> for FitError {
    fn from(e: DataError) -> Self {
        match e {
            DataError::ConstantColumn(j) => FitError::ConstantColumn(j),
            other => FitError::InvalidOptions(other.to_string()),
        }
    }
}

/// How the censoring survival function is estimated.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Method {
    /// Local Kaplan-Meier given the covariates.
    Cqr,
    /// One-sample Kaplan-Meier, ignoring the covariates.
    Yjw,
    /// Stop after the inverse-probability-weighted initial fit.
    Ipw,
}

impl Method {
    pub fn as_str(&self) -> &'static str {
        match self {
            Method::Cqr => "cqr",
            Method::Yjw => "yjw",
            Method::Ipw => "ipw",
        }
    }
}

impl std::str::FromStr for Method {
    type Err = String;
    fn from_str(s: &str) -> Result<Self, String> {
        match s.to_ascii_lowercase().as_str() {
            "cqr" => Ok(Method::Cqr),
            "yjw" => Ok(Method::Yjw),
            "ipw" | "ipw_only" => Ok(Method::Ipw),
            other => Err(format!("unknown method `{other}` (expected cqr, yjw or ipw)")),
        }
    }
}

impl std::fmt::Display for Method {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(self.as_str())
    }
}

/// Covariate scale on which kernel distances are measured.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum KernelScale {
    /// Each covariate centred and divided by its standard deviation.
    #[default]
    Standardized,
    /// Covariates as given.
    Raw,
}

impl KernelScale {
    pub fn as_str(self) -> &'static str {
        match self {
            KernelScale::Standardized => "standardized",
            KernelScale::Raw => "raw",
        }
    }
}

impl std::str::FromStr for KernelScale {
    type Err = String;
    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s.trim().to_ascii_lowercase().as_str() {
            "standardized" | "std" => Ok(KernelScale::Standardized),
            "raw" => Ok(KernelScale::Raw),
            other => Err(format!("unknown kernel scale '{other}' (expected standardized or raw)")),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FitOptions {
    pub tau: f64,
    /// Kernel bandwidth, on the scale picked by `kernel_scale`.
    pub bandwidth: f64,
    pub kernel_scale: KernelScale,
    pub max_iter: usize,
    pub conv_tol: f64,
    /// `A` in `Y* = min(Y) - A`.
    pub y_star_offset: f64,
    pub method: Method,
    pub solver_tol: f64,
}

impl Default for FitOptions {
    fn default() -> Self {
        Self {
            tau: 0.5,
            bandwidth: 0.05,
            kernel_scale: KernelScale::default(),
            max_iter: 50,
            conv_tol: 1e-4,
            y_star_offset: 200.0,
            method: Method::Cqr,
            solver_tol: qr::DEFAULT_TOL,
        }
    }
}

impl FitOptions {
    pub fn validate(&self) -> Result<(), FitError> {
        let bad = |m: &str| Err(FitError::InvalidOptions(m.to_string()));
        if !(self.tau > 0.0 && self.tau < 1.0) {
            return bad("tau must lie strictly inside (0, 1)");
        }
        if !(self.bandwidth > 0.0 && self.bandwidth.is_finite()) {
            return bad("bandwidth must be positive");
        }
        if self.max_iter == 0 {
            return bad("max_iter must be at least 1");
        }
        if !(self.conv_tol > 0.0) {
            return bad("conv_tol must be positive");
        }
        if !(self.y_star_offset > 0.0 && self.y_star_offset.is_finite()) {
            return bad("y_star_offset must be positive");
        }
        if !(self.solver_tol > 0.0) {
            return bad("solver_tol must be positive");
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum StopReason {
    Converged,
    MaxIter,
    /// The augmented objective rose three iterations in a row.
    Oscillation,
    /// Initial estimate only.
    Initial,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CqrFit {
    /// Coefficients on the original covariate scale.
    pub beta: Vec<f64>,
    pub iterations: usize,
    pub converged: bool,
    pub stop: StopReason,
    /// `||M_n(beta) / n||_inf` at the returned coefficients.
    pub ee_residual: f64,
    /// Observations whose kernel window held no mass.
    pub fallback_count: usize,
    /// Observations with `G(beta'Z_i | Z_i) = 0` at the returned coefficients.
    pub g_zero_count: usize,
    /// Smallest positive `G(beta'Z_i | Z_i)` at the returned coefficients.
    pub g_min: f64,
}

/// Censoring survival curves, one per observation (local) or shared (global).
#[derive(Debug, Clone)]
pub(crate) enum CensoringCurves {
    Local(Vec<LocalKmCurve>),
    Global(LocalKmCurve),
}

impl CensoringCurves {
    pub(crate) fn at(&self, i: usize, t: f64) -> f64 {
        match self {
            CensoringCurves::Local(c) => c[i].eval(t),
            CensoringCurves::Global(c) => c.eval(t),
        }
    }
}

/// Standardized data with its censoring curves; the curves depend only on
/// the covariates, so they are built once per fit.
pub(crate) struct Prepared {
    pub data: SurvivalDataset,
    pub scaling: Option<Standardization>,
    pub curves: CensoringCurves,
    pub fallback_count: usize,
}

impl Prepared {
    pub fn new(data: &SurvivalDataset, opts: &FitOptions) -> Result<Self, FitError> {
        opts.validate()?;
        let (std_data, scaling) = if data.p() > 1 {
            let s = Standardization::fit(data)?;
            (s.apply(data), Some(s))
        } else {
            (data.clone(), None)
        };
        let order = TimeOrder::new(&std_data);
        let mut fallback_count = 0;
        let curves = match opts.method {
            Method::Yjw => CensoringCurves::Global(order.uniform_curve()),
            Method::Cqr | Method::Ipw if std_data.p() == 1 => CensoringCurves::Global(order.uniform_curve()),
            Method::Cqr | Method::Ipw => {
                let d = std_data.p() - 1;
                let spec = KernelSpec::new(opts.bandwidth, d)
                    .ok_or_else(|| FitError::InvalidOptions("bandwidth must be positive".into()))?;
                let points = match opts.kernel_scale {
                    KernelScale::Standardized => std_data.covariates(),
                    KernelScale::Raw => data.covariates(),
                };
                let curves = points
                    .chunks_exact(d)
                    .map(|z0| {
                        let kw = kernel_weights(z0, &points, &spec);
                        fallback_count += usize::from(kw.fallback_used);
                        order.curve(&kw.weights)
                    })
                    .collect();
                CensoringCurves::Local(curves)
            }
        };
        Ok(Self { data: std_data, scaling, curves, fallback_count })
    }

    /// `G_i = G(gamma'Z_i | Z_i)` on the standardized design.
    pub fn weights_at(&self, gamma: &[f64]) -> Vec<f64> {
        (0..self.data.n()).map(|i| self.curves.at(i, self.data.predict(i, gamma))).collect()
    }

    pub fn to_original(&self, gamma: &[f64]) -> Vec<f64> {
        match &self.scaling {
            Some(s) => s.to_original(gamma),
            None => gamma.to_vec(),
        }
    }

    /// Inverse-probability-weighted quantile regression on the events.
    pub fn ipw(&self, opts: &FitOptions) -> Result<Vec<f64>, FitError> {
        let data = &self.data;
        let p = data.p();
        let mut x = Vec::new();
        let mut y = Vec::new();
        let mut w = Vec::new();
        for i in (0..data.n()).filter(|&i| data.delta()[i]) {
            let g = self.curves.at(i, data.y()[i]);
            if g > 0.0 {
                x.extend_from_slice(data.row(i));
                y.push(data.y()[i]);
                w.push(1.0 / g);
            }
        }
        if y.len() < p {
            return Err(FitError::InsufficientUncensored { usable: y.len(), required: p });
        }
        let prob = QrProblem::new(x, p, y, w, opts.tau)?;
        Ok(qr::solve(&prob, opts.solver_tol)?.beta)
    }
}

/// Inverse-probability-weighted initial estimate: weighted quantile
/// regression on the uncensored rows with weights `1 / G(Y_i | Z_i)`.
pub fn ipw_initial(data: &SurvivalDataset, opts: &FitOptions) -> Result<Vec<f64>, FitError> {
    let prep = Prepared::new(data, opts)?;
    let gamma = prep.ipw(opts)?;
    Ok(prep.to_original(&gamma))
}

/// `Y* = min(Y) - offset`.
pub fn pseudo_response(data: &SurvivalDataset, offset: f64) -> f64 {
    data.y().iter().copied().fold(f64::INFINITY, f64::min) - offset
}

/// Augmented weighted quantile regression problem for fixed weights `g`.
///
/// Rows `0..k` are the observations with `G_i > 0` (response `Y_i`, design
/// `Z_i`, weight `1/G_i`), followed in the same order by their
/// pseudo-observations (response `Y*`, design `Z_i (G_i - 1)`, weight
/// `1/G_i`). Observations with `G_i = 0` are left out.
pub fn augment(data: &SurvivalDataset, g: &[f64], offset: f64, tau: f64) -> Result<QrProblem, QrError> {
    assert_eq!(g.len(), data.n(), "one weight per observation");
    let p = data.p();
    let y_star = pseudo_response(data, offset);
    let keep: Vec<usize> = (0..data.n()).filter(|&i| g[i] > 0.0).collect();
    let m = 2 * keep.len();
    let mut x = Vec::with_capacity(m * p);
    let mut y = Vec::with_capacity(m);
    let mut w = Vec::with_capacity(m);
    for &i in &keep {
        x.extend_from_slice(data.row(i));
        y.push(data.y()[i]);
        w.push(1.0 / g[i]);
    }
    for &i in &keep {
        x.extend(data.row(i).iter().map(|v| v * (g[i] - 1.0)));
        y.push(y_star);
        w.push(1.0 / g[i]);
    }
    QrProblem::new(x, p, y, w, tau)
}

/// Relative size below which a residual counts as zero.
const ZERO_RESIDUAL: f64 = 1e-10;

/// `M_n(beta) / n`, with `I(.)/G_i` read as 0 when `G_i = 0`.
pub fn estimating_equation(beta: &[f64], data: &SurvivalDataset, g: &[f64], tau: f64) -> Vec<f64> {
    let p = data.p();
    let mut m = vec![0.0; p];
    for i in 0..data.n() {
        // interpolated rows have residual zero up to rounding
        let fitted = data.predict(i, beta);
        let hit = data.y()[i] - fitted >= -ZERO_RESIDUAL * (1.0 + data.y()[i].abs() + fitted.abs());
        let ipw = if hit && g[i] > 0.0 { 1.0 / g[i] } else { 0.0 };
        let f = ipw - (1.0 - tau);
        for (mj, zj) in m.iter_mut().zip(data.row(i)) {
            *mj += zj * f;
        }
    }
    let n = data.n() as f64;
    m.iter_mut().for_each(|v| *v /= n);
    m
}

fn sup_norm(v: &[f64]) -> f64 {
    v.iter().fold(0.0, |a, x| a.max(x.abs()))
}

#[derive(Clone)]
struct Iterate {
    gamma: Vec<f64>,
    g: Vec<f64>,
    ee: f64,
}

pub fn fit(data: &SurvivalDataset, opts: &FitOptions) -> Result<CqrFit, FitError> {
    let prep = Prepared::new(data, opts)?;
    let gamma0 = prep.ipw(opts)?;
    fit_from(&prep, data, opts, gamma0)
}

fn fit_from(
    prep: &Prepared,
    data: &SurvivalDataset,
    opts: &FitOptions,
    gamma0: Vec<f64>,
) -> Result<CqrFit, FitError> {
    let tau = opts.tau;
    let evaluate = |gamma: Vec<f64>| {
        let g = prep.weights_at(&gamma);
        let ee = sup_norm(&estimating_equation(&prep.to_original(&gamma), data, &g, tau));
        Iterate { gamma, g, ee }
    };
    let finish = |it: &Iterate, iterations: usize, stop: StopReason| CqrFit {
        beta: prep.to_original(&it.gamma),
        iterations,
        converged: matches!(stop, StopReason::Converged | StopReason::Initial),
        stop,
        ee_residual: it.ee,
        fallback_count: prep.fallback_count,
        g_zero_count: it.g.iter().filter(|&&v| v == 0.0).count(),
        g_min: it.g.iter().copied().filter(|&v| v > 0.0).fold(1.0, f64::min),
    };

    let mut current = evaluate(gamma0);
    if opts.method == Method::Ipw {
        return Ok(finish(&current, 0, StopReason::Initial));
    }

    let y_star = pseudo_response(&prep.data, opts.y_star_offset);
    let mut prev_objective = augmented_objective(prep, &current, opts)?;
    let mut rises = 0;
    let mut best = current.clone();
    for k in 1..=opts.max_iter {
        let prob = augment(&prep.data, &current.g, opts.y_star_offset, tau)?;
        let gamma = qr::solve(&prob, opts.solver_tol)?.beta;
        check_offset(&prep.data, &gamma, &current.g, y_star, opts.y_star_offset)?;

        let step = current.gamma.iter().zip(&gamma).fold(0.0f64, |a, (u, v)| a.max((u - v).abs()));
        let next = evaluate(gamma);
        if step < opts.conv_tol {
            return Ok(finish(&next, k, StopReason::Converged));
        }

        let objective = augmented_objective(prep, &next, opts)?;
        rises = if objective > prev_objective { rises + 1 } else { 0 };
        prev_objective = objective;
        if next.ee < best.ee {
            best = next.clone();
        }
        current = next;
        if rises >= 3 {
            return Ok(finish(&best, k, StopReason::Oscillation));
        }
    }
    Ok(finish(&current, opts.max_iter, StopReason::MaxIter))
}

/// Augmented objective at an iterate, with weights computed at that iterate.
fn augmented_objective(prep: &Prepared, it: &Iterate, opts: &FitOptions) -> Result<f64, FitError> {
    Ok(augment(&prep.data, &it.g, opts.y_star_offset, opts.tau)?.objective_at(&it.gamma))
}

/// The pseudo-rows stay below every fitted value only if
/// `Y* < -|beta'Z_i (G_i - 1)|` for every kept observation.
fn check_offset(data: &SurvivalDataset, gamma: &[f64], g: &[f64], y_star: f64, offset: f64) -> Result<(), FitError> {
    let worst = (0..data.n())
        .filter(|&i| g[i] > 0.0)
        .map(|i| (dot(data.row(i), gamma) * (g[i] - 1.0)).abs())
        .fold(0.0, f64::max);
    if y_star < -worst {
        Ok(())
    } else {
        Err(FitError::OffsetTooSmall { offset, required: offset + y_star + worst })
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn toy(delta: Vec<bool>) -> SurvivalDataset {
        let z = [0.1, 0.5, 0.9, 0.3, 0.7, 0.2, 0.8, 0.4, 0.6, 0.05, 0.95];
        let y: Vec<f64> = z.iter().enumerate().map(|(i, v)| 1.0 + 2.0 * v + 0.3 * ((i * 7 % 5) as f64 - 2.0)).collect();
        let cov: Vec<Vec<f64>> = z.iter().map(|&v| vec![v]).collect();
        SurvivalDataset::from_covariates(y, delta, &cov).unwrap()
    }

    #[test]
    fn augmentation_rows() {
        let d = SurvivalDataset::from_design(vec![3.0], vec![true], vec![1.0, 2.0], 2).unwrap();
        let prob = augment(&d, &[0.5], 200.0, 0.5).unwrap();
        assert_eq!(prob.m(), 2);
        assert_eq!(prob.row(0), &[1.0, 2.0]);
        assert_eq!(prob.y()[0], 3.0);
        assert_eq!(prob.row(1), &[-0.5, -1.0]);
        assert_eq!(prob.y()[1], -197.0);
        assert_eq!(prob.weights(), &[2.0, 2.0]);
    }

    #[test]
    fn zero_weight_observation_is_dropped() {
        let d = toy(vec![true; 11]);
        let mut g = vec![1.0; 11];
        g[0] = 0.0;
        assert_eq!(augment(&d, &g, 200.0, 0.5).unwrap().m(), 20);
    }

    #[test]
    fn balanced_residuals_give_zero_equation() {
        let d = SurvivalDataset::from_design(vec![1.0, -1.0, 1.0, -1.0], vec![true; 4], vec![1.0; 4], 1).unwrap();
        assert_eq!(estimating_equation(&[0.0], &d, &[1.0; 4], 0.5), vec![0.0]);
    }

    #[test]
    fn too_few_events() {
        let mut delta = vec![false; 11];
        delta[3] = true;
        let err = fit(&toy(delta), &FitOptions::default()).unwrap_err();
        assert_eq!(err, FitError::InsufficientUncensored { usable: 1, required: 2 });
    }

    #[test]
    fn uncensored_fit_is_plain_quantile_regression() {
        let d = toy(vec![true; 11]);
        let opts = FitOptions { bandwidth: 0.5, ..Default::default() };
        let f = fit(&d, &opts).unwrap();
        assert!(f.converged && f.iterations <= 2);
        let plain = QrProblem::unweighted(d.design().to_vec(), 2, d.y().to_vec(), 0.5).unwrap();
        let best = qr::solve(&plain, 1e-10).unwrap().objective;
        assert!((plain.objective_at(&f.beta) - best).abs() <= 1e-8 * (1.0 + best));
        assert_eq!(f.g_zero_count, 0);
        let ipw = ipw_initial(&d, &opts).unwrap();
        assert!((plain.objective_at(&ipw) - best).abs() <= 1e-8 * (1.0 + best));
    }

    #[test]
    fn invalid_options_are_rejected() {
        let d = toy(vec![true; 11]);
        for opts in [
            FitOptions { tau: 1.5, ..Default::default() },
            FitOptions { bandwidth: 0.0, ..Default::default() },
            FitOptions { max_iter: 0, ..Default::default() },
        ] {
            assert!(matches!(fit(&d, &opts), Err(FitError::InvalidOptions(_))));
        }
    }

    #[test]
    fn tiny_offset_is_diagnosed() {
        let mut delta = vec![true; 11];
        delta[2] = false;
        delta[6] = false;
        let d = toy(delta).shift_times(50.0);
        let opts = FitOptions { y_star_offset: 1e-3, bandwidth: 1.0, ..Default::default() };
        assert!(matches!(fit(&d, &opts), Err(FitError::OffsetTooSmall { .. })));
    }

    #[test]
    fn method_parsing() {
        assert_eq!("CQR".parse::<Method>().unwrap(), Method::Cqr);
        assert_eq!("ipw".parse::<Method>().unwrap(), Method::Ipw);
        assert!("lcrq".parse::<Method>().is_err());
    }
}
