//! Censored linear quantile regression under conditional independent
//! censoring.
//!
//! The censoring survival function `G(t | z)` is estimated by a kernel-weighted
//! Kaplan-Meier estimator ([`km`]); the unbiased estimating equation it
//! weights is solved by repeatedly fitting an augmented weighted quantile
//! regression ([`estimator`], [`qr`]). [`inference`] adds percentile bootstrap
//! intervals and cross-validated bandwidth choice, and [`simulation`] holds the
//! data generators and Monte Carlo drivers used to benchmark the estimator.

pub mod data;
pub mod estimator;
pub mod inference;
pub mod km;
pub mod qr;
pub mod rng;
pub mod simulation;

pub use data::{load_csv, parse_csv, standardize, CsvSchema, DataError, Standardization, SurvivalDataset};
pub use estimator::{augment, estimating_equation, fit, ipw_initial, CqrFit, FitError, FitOptions, KernelScale, Method, StopReason};
pub use km::{biquadratic, global_km, kernel_weights, local_km, KernelSpec, KernelWeights, LocalKmCurve};
pub use qr::{check_loss, solve, QrError, QrProblem, QrSolution};
pub use inference::{bootstrap_ci, cv_bandwidth, BootstrapResult, CvResult, InferenceError};
pub use simulation::{generate, run_coverage, run_mc, Example, McReport, ScenarioSpec, SimulationError};
