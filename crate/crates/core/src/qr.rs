//! Weighted linear quantile regression.
//!
//! Minimizes `sum_i w_i rho_tau(y_i - x_i' beta)` exactly. The solver walks
//! the vertices of the check-loss LP (each vertex interpolates `p` rows, the
//! basis). At every step it solves for the basic rows' dual multipliers; a
//! multiplier outside `[tau - 1, tau]` names a descent edge, and the step
//! along that edge is a weighted-median search over the residual breakpoints,
//! so one step may pass many vertices. At termination every multiplier lies
//! in its box, which is the optimality certificate reported with the
//! solution.

use nalgebra::{DMatrix, DVector};
use thiserror::Error;

use crate::data::dot;

pub const DEFAULT_TOL: f64 = 1e-8;

/// Multipliers within this distance of their box count as feasible.
const MULTIPLIER_SLACK: f64 = 1e-10;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum QrError {
    #[error("tau must lie strictly inside (0, 1), got {0}")]
    InvalidTau(f64),
    #[error("dimension mismatch: {0}")]
    Dimension(String),
    #[error("weights must be finite and non-negative (row {0})")]
    InvalidWeight(usize),
    #[error("non-finite value in row {0}")]
    NonFinite(usize),
    #[error("weighted design has rank below {0}")]
    RankDeficient(usize),
    #[error("objective is unbounded below")]
    Unbounded,
    #[error("no optimal vertex within {0} pivots")]
    IterationLimit(usize),
}

/// `rho_tau(s) = s (I(s >= 0) - (1 - tau))`.
#[inline]
pub fn check_loss(s: f64, tau: f64) -> f64 {
    if s >= 0.0 {
        tau * s
    } else {
        (tau - 1.0) * s
    }
}

/// A weighted check-loss minimization instance.
#[derive(Debug, Clone, PartialEq)]
pub struct QrProblem {
    x: Vec<f64>,
    y: Vec<f64>,
    w: Vec<f64>,
    p: usize,
    tau: f64,
}

impl QrProblem {
    /// `x` is row-major `m x p`.
    pub fn new(x: Vec<f64>, p: usize, y: Vec<f64>, w: Vec<f64>, tau: f64) -> Result<Self, QrError> {
        if !(tau > 0.0 && tau < 1.0) {
            return Err(QrError::InvalidTau(tau));
        }
        let m = y.len();
        if p == 0 || x.len() != m * p || w.len() != m {
            return Err(QrError::Dimension(format!("x={}, y={m}, w={}, p={p}", x.len(), w.len())));
        }
        for i in 0..m {
            if !(w[i].is_finite() && w[i] >= 0.0) {
                return Err(QrError::InvalidWeight(i));
            }
            if !y[i].is_finite() || x[i * p..(i + 1) * p].iter().any(|v| !v.is_finite()) {
                return Err(QrError::NonFinite(i));
            }
        }
        Ok(Self { x, y, w, p, tau })
    }

    pub fn unweighted(x: Vec<f64>, p: usize, y: Vec<f64>, tau: f64) -> Result<Self, QrError> {
        let m = y.len();
        Self::new(x, p, y, vec![1.0; m], tau)
    }

    pub fn m(&self) -> usize {
        self.y.len()
    }

    pub fn p(&self) -> usize {
        self.p
    }

    pub fn tau(&self) -> f64 {
        self.tau
    }

    pub fn y(&self) -> &[f64] {
        &self.y
    }

    pub fn weights(&self) -> &[f64] {
        &self.w
    }

    pub fn row(&self, i: usize) -> &[f64] {
        &self.x[i * self.p..(i + 1) * self.p]
    }

    pub fn residual(&self, i: usize, beta: &[f64]) -> f64 {
        self.y[i] - dot(self.row(i), beta)
    }

    /// `sum_i w_i rho_tau(y_i - x_i' beta)`.
    pub fn objective_at(&self, beta: &[f64]) -> f64 {
        (0..self.m()).map(|i| self.w[i] * check_loss(self.residual(i, beta), self.tau)).sum()
    }

    /// `||sum_i w_i x_i a_i||_inf` for per-row selectors `a_i`.
    pub fn subgradient_norm(&self, selectors: &[f64]) -> f64 {
        let mut g = vec![0.0; self.p];
        for i in 0..self.m() {
            let s = self.w[i] * selectors[i];
            for (gj, xj) in g.iter_mut().zip(self.row(i)) {
                *gj += s * xj;
            }
        }
        g.iter().fold(0.0, |acc, v| acc.max(v.abs()))
    }

    /// `tol * sum_i w_i ||x_i||_inf`, the certificate threshold.
    pub fn certificate_bound(&self, tol: f64) -> f64 {
        tol * (0..self.m())
            .map(|i| self.w[i] * self.row(i).iter().fold(0.0f64, |a, v| a.max(v.abs())))
            .sum::<f64>()
    }
}

/// Minimizer of a [`QrProblem`] with its optimality certificate.
#[derive(Debug, Clone, PartialEq)]
pub struct QrSolution {
    pub beta: Vec<f64>,
    pub objective: f64,
    /// `||sum_i w_i x_i a_i||_inf` with `a_i` a subgradient selector at `beta`.
    pub certificate: f64,
    /// Rows of the problem interpolated exactly by `beta`.
    pub basis: Vec<usize>,
    pub pivots: usize,
}

struct Work<'a> {
    prob: &'a QrProblem,
    rows: Vec<usize>,
    p: usize,
}

impl Work<'_> {
    fn x(&self, k: usize) -> &[f64] {
        self.prob.row(self.rows[k])
    }
    fn y(&self, k: usize) -> f64 {
        self.prob.y[self.rows[k]]
    }
    fn w(&self, k: usize) -> f64 {
        self.prob.w[self.rows[k]]
    }
}

pub fn solve(problem: &QrProblem, tol: f64) -> Result<QrSolution, QrError> {
    let p = problem.p;
    let tau = problem.tau;
    // Zero-weight rows never matter; all-zero design rows only add a constant.
    let rows: Vec<usize> = (0..problem.m())
        .filter(|&i| problem.w[i] > 0.0 && problem.row(i).iter().any(|&v| v != 0.0))
        .collect();
    if rows.len() < p {
        return Err(QrError::RankDeficient(p));
    }
    let work = Work { prob: problem, rows, p };
    let m = work.rows.len();

    let mut basis = initial_basis(&work)?;
    let mut is_basic = vec![false; m];
    basis.iter().for_each(|&k| is_basic[k] = true);
    // Side of each non-basic row: true means multiplier tau (residual >= 0).
    let mut upper = vec![true; m];
    let mut first = true;

    let max_pivots = 50 * m + 1000;
    let mut degenerate_run = 0usize;
    let mut r = vec![0.0; m];
    let mut c = vec![0.0; m];
    let mut breaks: Vec<(f64, usize)> = Vec::with_capacity(m);

    for pivot in 0..max_pivots {
        let xb = DMatrix::from_fn(p, p, |a, b| work.x(basis[a])[b]);
        let inv = xb.try_inverse().ok_or(QrError::RankDeficient(p))?;
        let yb = DVector::from_fn(p, |a, _| work.y(basis[a]));
        let beta: Vec<f64> = (&inv * yb).iter().copied().collect();

        let mut scale = vec![0.0; m];
        for k in 0..m {
            if is_basic[k] {
                r[k] = 0.0;
                continue;
            }
            let fit: f64 = dot(work.x(k), &beta);
            r[k] = work.y(k) - fit;
            scale[k] = 1e-11 * (1.0 + work.y(k).abs() + work.x(k).iter().zip(&beta).map(|(a, b)| (a * b).abs()).sum::<f64>());
            if r[k].abs() > scale[k] || first {
                upper[k] = r[k] >= 0.0;
            }
        }
        first = false;

        // Dual multipliers of the basic rows: X_B' b_B = -sum_N w a x.
        let mut g = DVector::<f64>::zeros(p);
        for k in (0..m).filter(|&k| !is_basic[k]) {
            let a = if upper[k] { tau } else { tau - 1.0 };
            let s = work.w(k) * a;
            for (j, xj) in work.x(k).iter().enumerate() {
                g[j] += s * xj;
            }
        }
        let b_basic = -(inv.transpose() * g);

        let mut leave = None;
        let mut worst = MULTIPLIER_SLACK;
        for (pos, &k) in basis.iter().enumerate() {
            let a = b_basic[pos] / work.w(k);
            let viol = (a - tau).max(tau - 1.0 - a);
            let better = if degenerate_run > 2 * m { viol > MULTIPLIER_SLACK && leave.is_none() } else { viol > worst };
            if better {
                worst = viol;
                leave = Some((pos, a > tau, viol));
            }
        }

        let Some((pos, up, viol)) = leave else {
            return Ok(finish(&work, problem, &basis, &upper, &beta, b_basic.as_slice(), tol, pivot));
        };

        // Move along d so that the leaving row's residual becomes sigma * t.
        let sigma = if up { 1.0 } else { -1.0 };
        let d: Vec<f64> = (0..p).map(|j| -sigma * inv[(j, pos)]).collect();
        let dnorm = d.iter().fold(0.0f64, |a, v| a.max(v.abs()));
        breaks.clear();
        for k in 0..m {
            if is_basic[k] {
                continue;
            }
            c[k] = -dot(work.x(k), &d);
            let xnorm = work.x(k).iter().fold(0.0f64, |a, v| a.max(v.abs()));
            if c[k].abs() <= 1e-12 * xnorm * dnorm {
                continue;
            }
            if upper[k] && c[k] < 0.0 {
                breaks.push((r[k].max(0.0) / -c[k], k));
            } else if !upper[k] && c[k] > 0.0 {
                breaks.push(((-r[k]).max(0.0) / c[k], k));
            }
        }
        breaks.sort_unstable_by(|a, b| a.0.total_cmp(&b.0).then(a.1.cmp(&b.1)));

        let leaving_row = basis[pos];
        let mut slope = -work.w(leaving_row) * viol;
        let mut entering = None;
        for (idx, &(t, k)) in breaks.iter().enumerate() {
            slope += work.w(k) * c[k].abs();
            if slope >= 0.0 {
                entering = Some((idx, t, k));
                break;
            }
        }
        let Some((idx, t, enter)) = entering else {
            return Err(QrError::Unbounded);
        };
        for &(_, k) in &breaks[..idx] {
            upper[k] = !upper[k];
        }
        if t == 0.0 {
            degenerate_run += 1;
        } else {
            degenerate_run = 0;
        }
        is_basic[leaving_row] = false;
        upper[leaving_row] = up;
        is_basic[enter] = true;
        basis[pos] = enter;
    }
    Err(QrError::IterationLimit(max_pivots))
}

#[allow(clippy::too_many_arguments)]
fn finish(
    work: &Work<'_>,
    problem: &QrProblem,
    basis: &[usize],
    upper: &[bool],
    beta: &[f64],
    b_basic: &[f64],
    tol: f64,
    pivots: usize,
) -> QrSolution {
    let tau = problem.tau;
    let mut selectors = vec![0.0; problem.m()];
    for i in 0..problem.m() {
        let r = problem.residual(i, beta);
        selectors[i] = if r > 0.0 { tau } else if r < 0.0 { tau - 1.0 } else { tau };
    }
    for k in 0..work.rows.len() {
        selectors[work.rows[k]] = if upper[k] { tau } else { tau - 1.0 };
    }
    for (pos, &k) in basis.iter().enumerate() {
        selectors[work.rows[k]] = (b_basic[pos] / work.w(k)).clamp(tau - 1.0, tau);
    }
    let certificate = problem.subgradient_norm(&selectors);
    debug_assert!(certificate <= problem.certificate_bound(tol).max(1e-12), "certificate {certificate}");
    QrSolution {
        beta: beta.to_vec(),
        objective: problem.objective_at(beta),
        certificate,
        basis: basis.iter().map(|&k| work.rows[k]).collect(),
        pivots,
    }
}

/// Picks `p` well-conditioned rows by greedy pivoted Gram-Schmidt.
fn initial_basis(work: &Work<'_>) -> Result<Vec<usize>, QrError> {
    let p = work.p;
    let m = work.rows.len();
    let mut resid: Vec<Vec<f64>> = (0..m).map(|k| work.x(k).to_vec()).collect();
    let norms0: Vec<f64> = resid.iter().map(|v| v.iter().map(|a| a * a).sum::<f64>().sqrt()).collect();
    let mut chosen = Vec::with_capacity(p);
    let mut used = vec![false; m];
    for _ in 0..p {
        let mut best = None;
        let mut best_ratio = 1e-9;
        for k in 0..m {
            if used[k] || norms0[k] == 0.0 {
                continue;
            }
            let ratio = resid[k].iter().map(|a| a * a).sum::<f64>().sqrt() / norms0[k];
            if ratio > best_ratio + 1e-12 {
                best_ratio = ratio;
                best = Some(k);
            }
        }
        let k = best.ok_or(QrError::RankDeficient(p))?;
        used[k] = true;
        chosen.push(k);
        let q: Vec<f64> = {
            let v = &resid[k];
            let nv = v.iter().map(|a| a * a).sum::<f64>().sqrt();
            v.iter().map(|a| a / nv).collect()
        };
        for v in resid.iter_mut() {
            let proj = dot(v, &q);
            v.iter_mut().zip(&q).for_each(|(a, b)| *a -= proj * b);
        }
    }
    Ok(chosen)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn intercept(y: &[f64], w: &[f64], tau: f64) -> QrProblem {
        QrProblem::new(vec![1.0; y.len()], 1, y.to_vec(), w.to_vec(), tau).unwrap()
    }

    #[test]
    fn check_loss_values() {
        assert_eq!(check_loss(2.0, 0.5), 1.0);
        assert_eq!(check_loss(-2.0, 0.5), 1.0);
        assert!((check_loss(1.0, 0.7) - 0.7).abs() < 1e-15);
        assert!((check_loss(-1.0, 0.7) - 0.3).abs() < 1e-15);
        for tau in [0.1, 0.5, 0.9] {
            assert_eq!(check_loss(0.0, tau), 0.0);
        }
    }

    #[test]
    fn sample_median() {
        let s = solve(&intercept(&[1.0, 2.0, 3.0], &[1.0; 3], 0.5), DEFAULT_TOL).unwrap();
        assert!((s.beta[0] - 2.0).abs() < 1e-12);
        assert!((s.objective - 1.0).abs() < 1e-12);
    }

    #[test]
    fn weighted_median_picks_heavy_point() {
        let s = solve(&intercept(&[1.0, 2.0], &[3.0, 1.0], 0.5), DEFAULT_TOL).unwrap();
        assert!((s.beta[0] - 1.0).abs() < 1e-12);
        assert!((s.objective - 0.5).abs() < 1e-12);
    }

    #[test]
    fn flat_lower_quartile() {
        let prob = intercept(&[1.0, 2.0, 3.0, 4.0], &[1.0; 4], 0.25);
        let s = solve(&prob, DEFAULT_TOL).unwrap();
        assert!((s.objective - 1.5).abs() < 1e-12);
        assert!(s.beta[0] >= 1.0 - 1e-12 && s.beta[0] <= 2.0 + 1e-12);
    }

    #[test]
    fn exact_interpolation() {
        let prob = QrProblem::unweighted(vec![1.0, 0.0, 1.0, 1.0], 2, vec![3.0, 5.0], 0.3).unwrap();
        let s = solve(&prob, DEFAULT_TOL).unwrap();
        assert!(s.objective.abs() < 1e-12);
        assert!((s.beta[0] - 3.0).abs() < 1e-12 && (s.beta[1] - 2.0).abs() < 1e-12);
    }

    #[test]
    fn single_positive_weight() {
        let prob = intercept(&[4.0, 7.0], &[0.0, 2.0], 0.3);
        let s = solve(&prob, DEFAULT_TOL).unwrap();
        assert_eq!(s.beta[0], 7.0);
        assert_eq!(prob.objective_at(&[5.0]), 2.0 * check_loss(2.0, 0.3));
    }

    #[test]
    fn rank_deficiency_is_reported() {
        let prob = QrProblem::unweighted(vec![1.0, 2.0, 1.0, 2.0, 2.0, 4.0], 2, vec![1.0, 2.0, 3.0], 0.5).unwrap();
        assert_eq!(solve(&prob, DEFAULT_TOL), Err(QrError::RankDeficient(2)));
        let prob = intercept(&[1.0, 2.0], &[0.0, 0.0], 0.5);
        assert_eq!(solve(&prob, DEFAULT_TOL), Err(QrError::RankDeficient(1)));
    }

    #[test]
    fn invalid_inputs() {
        assert_eq!(QrProblem::unweighted(vec![1.0], 1, vec![1.0], 1.0), Err(QrError::InvalidTau(1.0)));
        assert_eq!(QrProblem::new(vec![1.0], 1, vec![1.0], vec![-1.0], 0.5), Err(QrError::InvalidWeight(0)));
        assert!(matches!(QrProblem::unweighted(vec![1.0], 2, vec![1.0], 0.5), Err(QrError::Dimension(_))));
    }

    #[test]
    fn duplicated_rows_and_zero_rows() {
        // Identical rows produce degenerate vertices; zero rows are constants.
        let x = vec![1.0, 0.0, 1.0, 0.0, 1.0, 1.0, 1.0, 1.0, 1.0, 2.0, 0.0, 0.0];
        let y = vec![1.0, 1.0, 2.0, 2.0, 2.5, -200.0];
        let prob = QrProblem::unweighted(x, 2, y, 0.5).unwrap();
        let s = solve(&prob, DEFAULT_TOL).unwrap();
        assert!(s.certificate <= prob.certificate_bound(DEFAULT_TOL));
        // Constant part from the zero row: 0.5 * 200.
        assert!(s.objective >= 100.0);
    }
}
