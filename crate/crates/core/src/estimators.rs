//! Importance-sampling estimators, effective sample size and the
//! high-confidence bounds built on the 2-Rényi divergence.
//!
//! Weights are carried as log-weights. The plain IS estimator exponentiates
//! them as they are (it is not invariant to a common shift); the
//! self-normalised estimator and the ESS estimate subtract the maximum first.

use thiserror::Error;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum EstimatorError {
    #[error("no samples")]
    Empty,
    #[error("importance weights are degenerate (sum is zero or not finite)")]
    DegenerateWeights,
    #[error("exponentiated 2-Rényi divergence must be >= 1, got {0}")]
    InvalidDivergence(f64),
    #[error("invalid bound configuration: {0}")]
    InvalidConfig(&'static str),
}

/// One draw `x_i ~ Q` summarised by `log(p(x_i)/q(x_i))` and `f(x_i)`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct WeightedSample {
    pub log_weight: f64,
    pub value: f64,
}

impl WeightedSample {
    pub fn new(log_weight: f64, value: f64) -> Self {
        Self { log_weight, value }
    }
}

/// Confidence level, sup-norm of the estimated function and sample count.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct BoundConfig {
    delta: f64,
    f_inf: f64,
    n: usize,
}

impl BoundConfig {
    pub fn new(delta: f64, f_inf: f64, n: usize) -> Result<Self, EstimatorError> {
        if !(delta > 0.0 && delta <= 1.0) {
            return Err(EstimatorError::InvalidConfig("delta must lie in (0, 1]"));
        }
        if !(f_inf >= 0.0) || !f_inf.is_finite() {
            return Err(EstimatorError::InvalidConfig("f_inf must be finite and non-negative"));
        }
        if n == 0 {
            return Err(EstimatorError::InvalidConfig("n must be positive"));
        }
        Ok(Self { delta, f_inf, n })
    }

    pub fn delta(&self) -> f64 {
        self.delta
    }

    pub fn f_inf(&self) -> f64 {
        self.f_inf
    }

    pub fn n(&self) -> usize {
        self.n
    }
}

/// Self-normalised weights `w_i / Σ_j w_j` computed with the max-shift trick.
pub fn normalized_weights(log_weights: &[f64]) -> Result<Vec<f64>, EstimatorError> {
    if log_weights.is_empty() {
        return Err(EstimatorError::Empty);
    }
    let max = log_weights.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    if !max.is_finite() || log_weights.iter().any(|l| l.is_nan()) {
        return Err(EstimatorError::DegenerateWeights);
    }
    let mut w: Vec<f64> = log_weights.iter().map(|l| (l - max).exp()).collect();
    let total: f64 = w.iter().sum();
    if !(total > 0.0) || !total.is_finite() {
        return Err(EstimatorError::DegenerateWeights);
    }
    w.iter_mut().for_each(|v| *v /= total);
    Ok(w)
}

/// `log Σ exp(x_i)`, stable for large magnitudes.
pub fn log_sum_exp(values: &[f64]) -> f64 {
    let max = values.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    if !max.is_finite() {
        return max;
    }
    max + values.iter().map(|v| (v - max).exp()).sum::<f64>().ln()
}

/// `(1/N) Σ w_i f_i`.
pub fn is_estimate(samples: &[WeightedSample]) -> Result<f64, EstimatorError> {
    if samples.is_empty() {
        return Err(EstimatorError::Empty);
    }
    let total: f64 = samples.iter().map(|s| s.log_weight.exp() * s.value).sum();
    Ok(total / samples.len() as f64)
}

/// `Σ w̃_i f_i`; always within `[min f_i, max f_i]`.
pub fn sn_estimate(samples: &[WeightedSample]) -> Result<f64, EstimatorError> {
    let log_w: Vec<f64> = samples.iter().map(|s| s.log_weight).collect();
    let w = normalized_weights(&log_w)?;
    let est: f64 = w.iter().zip(samples).map(|(wi, s)| wi * s.value).sum();
    // Rounding can push the convex combination a hair outside the hull.
    let (lo, hi) = samples
        .iter()
        .fold((f64::INFINITY, f64::NEG_INFINITY), |(lo, hi), s| (lo.min(s.value), hi.max(s.value)));
    Ok(est.clamp(lo, hi))
}

/// `N / d_2`.
pub fn ess_exact(n: usize, d2: f64) -> Result<f64, EstimatorError> {
    if n == 0 {
        return Err(EstimatorError::Empty);
    }
    if !(d2 >= 1.0) {
        return Err(EstimatorError::InvalidDivergence(d2));
    }
    Ok(n as f64 / d2)
}

/// `1 / Σ w̃_i²`, in `[1, N]`.
pub fn ess_estimate(samples: &[WeightedSample]) -> Result<f64, EstimatorError> {
    let log_w: Vec<f64> = samples.iter().map(|s| s.log_weight).collect();
    ess_from_log_weights(&log_w)
}

pub fn ess_from_log_weights(log_weights: &[f64]) -> Result<f64, EstimatorError> {
    let (sum, sum_sq) = shifted_weight_sums(log_weights)?;
    // (Σw)²/Σw² on max-shifted weights is exactly N for equal weights.
    Ok((sum * sum / sum_sq).clamp(1.0, log_weights.len() as f64))
}

/// `Σ w̃_i²` for the self-normalised weights, i.e. `1 / ÊSS` before clamping.
pub fn sum_sq_normalized_weights(log_weights: &[f64]) -> Result<f64, EstimatorError> {
    let (sum, sum_sq) = shifted_weight_sums(log_weights)?;
    Ok(sum_sq / (sum * sum))
}

fn shifted_weight_sums(log_weights: &[f64]) -> Result<(f64, f64), EstimatorError> {
    if log_weights.is_empty() {
        return Err(EstimatorError::Empty);
    }
    let max = log_weights.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    if !max.is_finite() || log_weights.iter().any(|l| l.is_nan()) {
        return Err(EstimatorError::DegenerateWeights);
    }
    let (sum, sum_sq) = log_weights.iter().fold((0.0, 0.0), |(s, s2), l| {
        let w = (l - max).exp();
        (s + w, s2 + w * w)
    });
    Ok((sum, sum_sq))
}

/// Population variance of the raw (unnormalised) weights.
pub fn weight_variance(samples: &[WeightedSample]) -> Result<f64, EstimatorError> {
    let log_w: Vec<f64> = samples.iter().map(|s| s.log_weight).collect();
    weight_variance_from_log_weights(&log_w)
}

pub fn weight_variance_from_log_weights(log_weights: &[f64]) -> Result<f64, EstimatorError> {
    if log_weights.is_empty() {
        return Err(EstimatorError::Empty);
    }
    let n = log_weights.len() as f64;
    let w: Vec<f64> = log_weights.iter().map(|l| l.exp()).collect();
    let mean = w.iter().sum::<f64>() / n;
    Ok(w.iter().map(|v| (v - mean) * (v - mean)).sum::<f64>() / n)
}

/// Variance bound of the IS estimator: `‖f‖∞² d_2 / N`.
pub fn is_variance_bound(cfg: &BoundConfig, d2: f64) -> f64 {
    cfg.f_inf * cfg.f_inf * d2 / cfg.n as f64
}

/// Lower confidence bound from Cantelli's inequality, valid with probability `1 − δ`.
pub fn is_lower_bound(point_estimate: f64, cfg: &BoundConfig, d2: f64) -> f64 {
    point_estimate - cfg.f_inf * ((1.0 - cfg.delta) * d2 / (cfg.delta * cfg.n as f64)).sqrt()
}

/// `λ = ‖f‖∞ sqrt((1 − δ)/δ)`, the penalty coefficient of the surrogate objectives.
pub fn lambda_from_delta(cfg: &BoundConfig) -> f64 {
    cfg.f_inf * ((1.0 - cfg.delta) / cfg.delta).sqrt()
}

pub fn sn_bias_bound(cfg: &BoundConfig, d2: f64) -> f64 {
    cfg.f_inf * f64::min(2.0, ((d2 - 1.0).max(0.0) / cfg.n as f64).sqrt())
}

pub fn sn_mse_bound(cfg: &BoundConfig, d2: f64) -> f64 {
    2.0 * cfg.f_inf * cfg.f_inf * f64::min(2.0, (2.0 * d2 - 1.0) / cfg.n as f64)
}

/// Lower confidence bound for the self-normalised estimator.
pub fn sn_lower_bound(point_estimate: f64, cfg: &BoundConfig, d2: f64) -> f64 {
    let radius = (d2 * (4.0 - 3.0 * cfg.delta) / (cfg.delta * cfg.n as f64)).sqrt();
    point_estimate - 2.0 * cfg.f_inf * f64::min(1.0, radius)
}
