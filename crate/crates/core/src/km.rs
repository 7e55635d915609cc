//! Bi-quadratic kernel weights and the (locally weighted) Kaplan-Meier
//! estimator of the censoring survival function `G(t | z) = P(C > t | Z = z)`.
//!
//! With weights `B_j(z)` summing to one,
//!
//! ```text
//! G(t | z) = prod_j [1 - B_j(z) / sum_k I(Y_k >= Y_j) B_k(z)] ^ I(Y_j <= t, delta_j = 0)
//! ```
//!
//! Uniform weights `1/n` give the classical product-limit estimator.

use serde::{Deserialize, Serialize};

use crate::data::SurvivalDataset;

/// `K(s) = 15/16 (1 - s^2)^2` on `|s| <= 1`.
#[inline]
pub fn biquadratic(s: f64) -> f64 {
    if s.abs() <= 1.0 {
        let u = 1.0 - s * s;
        0.9375 * u * u
    } else {
        0.0
    }
}

/// Product bi-quadratic kernel with one bandwidth shared by `dim` coordinates.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct KernelSpec {
    bandwidth: f64,
    dim: usize,
}

impl KernelSpec {
    pub fn new(bandwidth: f64, dim: usize) -> Option<Self> {
        (bandwidth > 0.0 && bandwidth.is_finite() && dim >= 1).then_some(Self { bandwidth, dim })
    }

    pub fn bandwidth(&self) -> f64 {
        self.bandwidth
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn eval(&self, z0: &[f64], zj: &[f64]) -> f64 {
        let mut k = 1.0;
        for (a, b) in z0.iter().zip(zj) {
            k *= biquadratic((a - b) / self.bandwidth);
            if k == 0.0 {
                break;
            }
        }
        k
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct KernelWeights {
    pub weights: Vec<f64>,
    /// Set when no point had positive kernel mass and uniform weights were used.
    pub fallback_used: bool,
}

/// Normalized kernel weights of the rows of `points` (row-major `n x dim`)
/// around `z0`.
pub fn kernel_weights(z0: &[f64], points: &[f64], spec: &KernelSpec) -> KernelWeights {
    let d = spec.dim;
    assert_eq!(z0.len(), d, "query dimension");
    assert_eq!(points.len() % d, 0, "point matrix shape");
    let n = points.len() / d;
    let mut weights: Vec<f64> = points.chunks_exact(d).map(|zj| spec.eval(z0, zj)).collect();
    let total: f64 = weights.iter().sum();
    if total > 0.0 {
        weights.iter_mut().for_each(|w| *w /= total);
        KernelWeights { weights, fallback_used: false }
    } else {
        KernelWeights { weights: vec![1.0 / n as f64; n], fallback_used: true }
    }
}

/// Right-continuous non-increasing step function starting at 1.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LocalKmCurve {
    times: Vec<f64>,
    values: Vec<f64>,
}

impl LocalKmCurve {
    pub fn constant_one() -> Self {
        Self { times: Vec::new(), values: Vec::new() }
    }

    pub fn times(&self) -> &[f64] {
        &self.times
    }

    pub fn values(&self) -> &[f64] {
        &self.values
    }

    /// Value at `t`; past the last jump the last plateau is carried forward.
    /// A `t` within rounding of a jump time counts as at the jump, so fitted
    /// values that interpolate an observation see its own jump.
    pub fn eval(&self, t: f64) -> f64 {
        let t = t + JUMP_SNAP * t.abs().max(1.0);
        let k = self.times.partition_point(|&s| s <= t);
        if k == 0 {
            1.0
        } else {
            self.values[k - 1]
        }
    }
}

/// Relative distance below a jump time that still counts as at the jump.
const JUMP_SNAP: f64 = 1e-12;

/// Observation order by time, shared by every curve built on one dataset.
#[derive(Debug, Clone)]
pub struct TimeOrder {
    order: Vec<usize>,
    /// Start offsets into `order` of each run of tied times, plus `n` at the end.
    groups: Vec<usize>,
    times: Vec<f64>,
    censored: Vec<bool>,
}

impl TimeOrder {
    pub fn new(data: &SurvivalDataset) -> Self {
        let y = data.y();
        let mut order: Vec<usize> = (0..y.len()).collect();
        order.sort_by(|&a, &b| y[a].total_cmp(&y[b]).then(a.cmp(&b)));
        let mut groups = vec![0];
        for k in 1..order.len() {
            if y[order[k]] != y[order[k - 1]] {
                groups.push(k);
            }
        }
        groups.push(order.len());
        Self {
            order,
            groups,
            times: y.to_vec(),
            censored: data.delta().iter().map(|d| !d).collect(),
        }
    }

    pub fn n(&self) -> usize {
        self.order.len()
    }

    /// Product-limit curve for observation weights `w` (indexed like the data).
    ///
    /// Times are processed in increasing order; tied observations share one
    /// risk set and each tied censored observation contributes its own factor.
    pub fn curve(&self, w: &[f64]) -> LocalKmCurve {
        debug_assert_eq!(w.len(), self.n());
        let ng = self.groups.len() - 1;
        // later[g]: weight strictly after group g, accumulated from the end.
        let mut later = vec![0.0; ng];
        let mut acc = 0.0;
        for g in (0..ng).rev() {
            later[g] = acc;
            for &j in &self.order[self.groups[g]..self.groups[g + 1]] {
                acc += w[j];
            }
        }
        let mut times = Vec::new();
        let mut values = Vec::new();
        let mut surv = 1.0;
        for g in 0..ng {
            let group = &self.order[self.groups[g]..self.groups[g + 1]];
            if let [j] = *group {
                if self.censored[j] && w[j] > 0.0 {
                    surv *= (later[g] / (later[g] + w[j])).clamp(0.0, 1.0);
                    times.push(self.times[j]);
                    values.push(surv);
                }
                continue;
            }
            let mut jumped = false;
            // Mass of the other tied members: prefix before j plus suffix after j.
            let mut suffix = vec![0.0; group.len() + 1];
            for (pos, &k) in group.iter().enumerate().rev() {
                suffix[pos] = suffix[pos + 1] + w[k];
            }
            let mut prefix = 0.0;
            for (pos, &j) in group.iter().enumerate() {
                if self.censored[j] && w[j] > 0.0 {
                    // 1 - B_j / risk, with the numerator summed from the
                    // other members of the risk set.
                    let others = later[g] + (prefix + suffix[pos + 1]);
                    let risk = others + w[j];
                    surv *= (others / risk).clamp(0.0, 1.0);
                    jumped = true;
                }
                prefix += w[j];
            }
            if jumped {
                times.push(self.times[group[0]]);
                values.push(surv);
            }
        }
        LocalKmCurve { times, values }
    }

    pub fn uniform_curve(&self) -> LocalKmCurve {
        let n = self.n();
        self.curve(&vec![1.0 / n as f64; n])
    }
}

/// Local Kaplan-Meier curve at covariate point `z0`, with kernel weights
/// computed on the non-intercept columns of `data`.
pub fn curve_at(data: &SurvivalDataset, z0: &[f64], spec: &KernelSpec) -> (LocalKmCurve, bool) {
    let kw = kernel_weights(z0, &data.covariates(), spec);
    (TimeOrder::new(data).curve(&kw.weights), kw.fallback_used)
}

pub fn local_km(t: f64, z0: &[f64], data: &SurvivalDataset, spec: &KernelSpec) -> f64 {
    curve_at(data, z0, spec).0.eval(t)
}

/// Local Kaplan-Meier with caller-supplied weights `B_j`.
pub fn weighted_km(t: f64, weights: &[f64], data: &SurvivalDataset) -> f64 {
    TimeOrder::new(data).curve(weights).eval(t)
}

/// One-sample Kaplan-Meier estimate of the censoring survival function.
pub fn global_km(t: f64, data: &SurvivalDataset) -> f64 {
    TimeOrder::new(data).uniform_curve().eval(t)
}
