//! Diagonal Gaussians, closed-form Rényi divergences and the law of the
//! importance weight between two univariate Gaussians.
//!
//! For `P = N(mu_p, diag(sigma_p^2))` and `Q = N(mu_q, diag(sigma_q^2))` the
//! α-Rényi divergence has the closed form
//!
//! ```text
//! D_α(P‖Q) = α/2 · Σ_i Δ_i² / v_i  −  1/(2(α−1)) · Σ_i log( v_i / (p_i^(1−α) q_i^α) )
//! ```
//!
//! with `Δ = mu_p − mu_q`, `p_i = sigma_p,i²`, `q_i = sigma_q,i²` and
//! `v_i = α q_i + (1−α) p_i`. It is finite only while every `v_i > 0`.
//! `α = 1` is the Kullback–Leibler limit and is evaluated separately.
//!
//! The exponentiated divergence `d_α = exp(D_α)` is the α-th moment of the
//! importance weight `w = p(x)/q(x)` under `x ~ Q`; in particular
//! `Var_Q[w] = d_2 − 1`.

use rand::Rng;
use rand_distr::StandardNormal;
use statrs::function::erf::erfc;
use std::f64::consts::{LN_2, PI};
use thiserror::Error;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum GaussianError {
    #[error("dimension mismatch: expected {expected}, got {got}")]
    DimensionMismatch { expected: usize, got: usize },
    #[error("non-finite parameter in Gaussian")]
    NonFinite,
    #[error("Rényi divergence of order {alpha} is undefined: α·σ_Q² + (1−α)·σ_P² ≤ 0 in dimension {dim}")]
    DivergenceUndefined { alpha: f64, dim: usize },
    #[error("invalid Rényi order {0}")]
    InvalidOrder(f64),
    #[error("weight law is degenerate: P and Q coincide, w ≡ 1")]
    DegenerateWeightLaw,
}

/// Gaussian with diagonal covariance, parameterised by mean and log standard deviation.
#[derive(Debug, Clone, PartialEq)]
pub struct DiagGaussian {
    mean: Vec<f64>,
    log_std: Vec<f64>,
}

impl DiagGaussian {
    pub fn new(mean: Vec<f64>, log_std: Vec<f64>) -> Result<Self, GaussianError> {
        if mean.len() != log_std.len() {
            return Err(GaussianError::DimensionMismatch {
                expected: mean.len(),
                got: log_std.len(),
            });
        }
        if mean.iter().chain(&log_std).any(|v| !v.is_finite()) {
            return Err(GaussianError::NonFinite);
        }
        Ok(Self { mean, log_std })
    }

    /// Builds from standard deviations instead of their logarithms.
    pub fn from_std(mean: Vec<f64>, std: &[f64]) -> Result<Self, GaussianError> {
        Self::new(mean, std.iter().map(|s| s.ln()).collect())
    }

    pub fn standard(dim: usize) -> Self {
        Self {
            mean: vec![0.0; dim],
            log_std: vec![0.0; dim],
        }
    }

    pub fn dim(&self) -> usize {
        self.mean.len()
    }

    pub fn mean(&self) -> &[f64] {
        &self.mean
    }

    pub fn log_std(&self) -> &[f64] {
        &self.log_std
    }

    pub fn std(&self) -> Vec<f64> {
        self.log_std.iter().map(|l| l.exp()).collect()
    }

    pub fn log_pdf(&self, x: &[f64]) -> Result<f64, GaussianError> {
        if x.len() != self.dim() {
            return Err(GaussianError::DimensionMismatch {
                expected: self.dim(),
                got: x.len(),
            });
        }
        let mut acc = -0.5 * (2.0 * PI).ln() * self.dim() as f64;
        for ((xi, mi), li) in x.iter().zip(&self.mean).zip(&self.log_std) {
            let z = (xi - mi) * (-li).exp();
            acc -= 0.5 * z * z + li;
        }
        Ok(acc)
    }

    pub fn sample<R: Rng + ?Sized>(&self, rng: &mut R) -> Vec<f64> {
        self.mean
            .iter()
            .zip(&self.log_std)
            .map(|(m, l)| {
                let z: f64 = rng.sample(StandardNormal);
                m + l.exp() * z
            })
            .collect()
    }
}

fn check_pair(alpha: f64, p: &DiagGaussian, q: &DiagGaussian) -> Result<(), GaussianError> {
    if !(alpha >= 0.0) || !alpha.is_finite() {
        return Err(GaussianError::InvalidOrder(alpha));
    }
    if p.dim() != q.dim() {
        return Err(GaussianError::DimensionMismatch {
            expected: p.dim(),
            got: q.dim(),
        });
    }
    Ok(())
}

/// Per-dimension term of `D_α` and its partial derivatives with respect to
/// the mean and log standard deviation of `P`.
fn renyi_term(alpha: f64, dim: usize, mu_p: f64, ls_p: f64, mu_q: f64, ls_q: f64) -> Result<(f64, f64, f64), GaussianError> {
    let p = (2.0 * ls_p).exp();
    let q = (2.0 * ls_q).exp();
    let delta = mu_p - mu_q;
    // v = α q + (1 − α) p = q·c, with c written relative to 1 so that equal
    // variances give exactly zero log-determinant contribution.
    let ratio_m1 = (2.0 * (ls_p - ls_q)).exp_m1();
    let c_m1 = (1.0 - alpha) * ratio_m1;
    let v = q * (1.0 + c_m1);
    if !(v > 0.0) {
        return Err(GaussianError::DivergenceUndefined { alpha, dim });
    }
    let value = if alpha == 1.0 {
        ls_q - ls_p + 0.5 * ratio_m1 + delta * delta / (2.0 * q)
    } else {
        0.5 * alpha * delta * delta / v - c_m1.ln_1p() / (2.0 * (alpha - 1.0)) + (ls_q - ls_p)
    };
    let d_mean = alpha * delta / v;
    let d_var = -alpha * (1.0 - alpha) * delta * delta / (2.0 * v * v) + 0.5 * (1.0 / v - 1.0 / p);
    Ok((value, d_mean, 2.0 * p * d_var))
}

/// `D_α(P‖Q)` for diagonal Gaussians, `α ∈ [0, ∞)`.
pub fn renyi_divergence(alpha: f64, p: &DiagGaussian, q: &DiagGaussian) -> Result<f64, GaussianError> {
    check_pair(alpha, p, q)?;
    let mut total = 0.0;
    for i in 0..p.dim() {
        total += renyi_term(alpha, i, p.mean[i], p.log_std[i], q.mean[i], q.log_std[i])?.0;
    }
    Ok(total)
}

/// `D_α(P‖Q)` together with its gradient with respect to the parameters of
/// `P`, laid out as `[d/d mean..., d/d log_std...]`.
pub fn renyi_divergence_grad(alpha: f64, p: &DiagGaussian, q: &DiagGaussian) -> Result<(f64, Vec<f64>), GaussianError> {
    check_pair(alpha, p, q)?;
    let d = p.dim();
    let mut total = 0.0;
    let mut grad = vec![0.0; 2 * d];
    for i in 0..d {
        let (v, gm, gs) = renyi_term(alpha, i, p.mean[i], p.log_std[i], q.mean[i], q.log_std[i])?;
        total += v;
        grad[i] = gm;
        grad[d + i] = gs;
    }
    Ok((total, grad))
}

/// Univariate `D_α(N(μ_p, σ_p²) ‖ N(μ_q, σ_q²))` with its partial derivatives
/// `(value, d/dμ_p, d/d log σ_p)`. Allocation-free building block for
/// per-state divergences.
pub fn renyi_divergence_1d(alpha: f64, mu_p: f64, log_std_p: f64, mu_q: f64, log_std_q: f64) -> Result<(f64, f64, f64), GaussianError> {
    if !(alpha >= 0.0) || !alpha.is_finite() {
        return Err(GaussianError::InvalidOrder(alpha));
    }
    renyi_term(alpha, 0, mu_p, log_std_p, mu_q, log_std_q)
}

/// Exponentiated divergence `d_α = exp(D_α) = E_Q[w^α]`.
pub fn exp_renyi_divergence(alpha: f64, p: &DiagGaussian, q: &DiagGaussian) -> Result<f64, GaussianError> {
    renyi_divergence(alpha, p, q).map(f64::exp)
}

/// Standard normal c.d.f.
pub fn normal_cdf(x: f64) -> f64 {
    0.5 * erfc(-x / std::f64::consts::SQRT_2)
}

fn ln_cosh(x: f64) -> f64 {
    let a = x.abs();
    a + (-2.0 * a).exp().ln_1p() - LN_2
}

/// Shape of the importance-weight law, decided by the sign of `σ_Q² − σ_P²`.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum WeightRegime {
    /// `σ_P < σ_Q`: weights live on `[0, A]`.
    Bounded,
    /// `σ_P > σ_Q`: weights live on `[A, ∞)`.
    Unbounded,
    /// `σ_P = σ_Q`: weights live on `(0, ∞)`.
    EqualVariance,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub enum TailRegime {
    /// Moments of order `>= critical_order` do not exist.
    FatTail { critical_order: f64 },
    AllMoments,
}

/// Parameters of the density of `w(x) = p(x)/q(x)` for `x ~ Q` with univariate
/// Gaussian `P`, `Q`.
///
/// `mu_bar`, `sigma_bar_sq` and `boundary` describe the unequal-variance
/// regimes; `mu_tilde` and `sigma_tilde` the equal-variance one. Fields that do
/// not apply to the current regime are `NaN`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct WeightLawParams {
    pub mu_bar: f64,
    pub sigma_bar_sq: f64,
    pub mu_tilde: f64,
    pub sigma_tilde: f64,
    /// `A`: the supremum (bounded) or infimum (unbounded) of the weight.
    pub boundary: f64,
    pub regime: WeightRegime,
    var_p: f64,
    var_q: f64,
}

impl WeightLawParams {
    pub fn from_univariate(mu_p: f64, sigma_p: f64, mu_q: f64, sigma_q: f64) -> Result<Self, GaussianError> {
        if ![mu_p, sigma_p, mu_q, sigma_q].iter().all(|v| v.is_finite()) || sigma_p <= 0.0 || sigma_q <= 0.0 {
            return Err(GaussianError::NonFinite);
        }
        let var_p = sigma_p * sigma_p;
        let var_q = sigma_q * sigma_q;
        let delta = mu_p - mu_q;
        if var_p == var_q {
            if delta == 0.0 {
                return Err(GaussianError::DegenerateWeightLaw);
            }
            return Ok(Self {
                mu_bar: f64::NAN,
                sigma_bar_sq: f64::NAN,
                mu_tilde: delta / (2.0 * sigma_p),
                sigma_tilde: sigma_p / delta,
                boundary: f64::NAN,
                regime: WeightRegime::EqualVariance,
                var_p,
                var_q,
            });
        }
        let gap = var_q - var_p;
        let regime = if gap > 0.0 {
            WeightRegime::Bounded
        } else {
            WeightRegime::Unbounded
        };
        Ok(Self {
            mu_bar: sigma_q * delta / gap,
            sigma_bar_sq: var_p / gap.abs(),
            mu_tilde: f64::NAN,
            sigma_tilde: f64::NAN,
            boundary: sigma_q / sigma_p * (0.5 * delta * delta / gap).exp(),
            regime,
            var_p,
            var_q,
        })
    }

    pub fn from_gaussians(p: &DiagGaussian, q: &DiagGaussian) -> Result<Self, GaussianError> {
        if p.dim() != 1 || q.dim() != 1 {
            return Err(GaussianError::DimensionMismatch {
                expected: 1,
                got: p.dim().max(q.dim()),
            });
        }
        Self::from_univariate(p.mean[0], p.log_std[0].exp(), q.mean[0], q.log_std[0].exp())
    }

    /// Closed support interval of the weight.
    pub fn support(&self) -> (f64, f64) {
        match self.regime {
            WeightRegime::Bounded => (0.0, self.boundary),
            WeightRegime::Unbounded => (self.boundary, f64::INFINITY),
            WeightRegime::EqualVariance => (0.0, f64::INFINITY),
        }
    }

    fn radius(&self, log_ratio: f64) -> f64 {
        (2.0 * self.sigma_bar_sq * log_ratio).sqrt()
    }
}

/// Density of the importance weight at `y`; zero outside the support.
pub fn weight_pdf(params: &WeightLawParams, y: f64) -> f64 {
    if !(y > 0.0) || !y.is_finite() {
        return 0.0;
    }
    match params.regime {
        WeightRegime::Bounded | WeightRegime::Unbounded => {
            let log_ratio = match params.regime {
                WeightRegime::Bounded => (params.boundary / y).ln(),
                _ => (y / params.boundary).ln(),
            };
            if !(log_ratio > 0.0) {
                return 0.0;
            }
            let sigma_bar = params.sigma_bar_sq.sqrt();
            let c = params.mu_bar * sigma_bar * (2.0 * log_ratio).sqrt();
            let ln_f = sigma_bar.ln() - y.ln() - 0.5 * (PI * log_ratio).ln() - 0.5 * params.mu_bar * params.mu_bar
                - params.sigma_bar_sq * log_ratio
                + ln_cosh(c);
            ln_f.exp()
        }
        WeightRegime::EqualVariance => {
            let ly = y.ln();
            let st = params.sigma_tilde;
            st.abs() / ((2.0 * PI).sqrt() * y.powf(1.5))
                * (-0.5 * (params.mu_tilde * params.mu_tilde + st * st * ly * ly)).exp()
        }
    }
}

/// Cumulative distribution function of the importance weight.
pub fn weight_cdf(params: &WeightLawParams, y: f64) -> f64 {
    if !(y > 0.0) {
        return 0.0;
    }
    match params.regime {
        WeightRegime::Bounded => {
            if y >= params.boundary {
                return 1.0;
            }
            let r = params.radius((params.boundary / y).ln());
            normal_cdf(params.mu_bar - r) + normal_cdf(-(params.mu_bar + r))
        }
        WeightRegime::Unbounded => {
            if y <= params.boundary {
                return 0.0;
            }
            if y.is_infinite() {
                return 1.0;
            }
            let r = params.radius((y / params.boundary).ln());
            normal_cdf(params.mu_bar + r) - normal_cdf(params.mu_bar - r)
        }
        WeightRegime::EqualVariance => {
            if y.is_infinite() {
                return 1.0;
            }
            let u = params.mu_tilde + params.sigma_tilde * y.ln();
            if params.sigma_tilde > 0.0 {
                normal_cdf(u)
            } else {
                normal_cdf(-u)
            }
        }
    }
}

/// Tail classification: fat tails exactly when `σ_P > σ_Q`.
pub fn weight_tail_regime(params: &WeightLawParams) -> TailRegime {
    match params.regime {
        WeightRegime::Unbounded => TailRegime::FatTail {
            critical_order: params.var_p / (params.var_p - params.var_q),
        },
        WeightRegime::Bounded | WeightRegime::EqualVariance => TailRegime::AllMoments,
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::quadrature::{integrate_real_line, integrate_to_infinity};
    use approx::assert_abs_diff_eq;
    use proptest::prelude::*;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    fn uni(m: f64, s: f64) -> DiagGaussian {
        DiagGaussian::from_std(vec![m], &[s]).unwrap()
    }

    #[test]
    fn log_pdf_examples() {
        let half_log_2pi = 0.5 * (2.0 * PI).ln();
        assert_abs_diff_eq!(DiagGaussian::standard(1).log_pdf(&[0.0]).unwrap(), -half_log_2pi, epsilon = 1e-15);
        assert_abs_diff_eq!(
            DiagGaussian::standard(2).log_pdf(&[0.0, 0.0]).unwrap(),
            -(2.0 * PI).ln(),
            epsilon = 1e-15
        );
        assert_abs_diff_eq!(uni(1.0, 2.0).log_pdf(&[1.0]).unwrap(), -half_log_2pi - 2f64.ln(), epsilon = 1e-15);
        assert!(matches!(
            DiagGaussian::standard(2).log_pdf(&[0.0]),
            Err(GaussianError::DimensionMismatch { .. })
        ));
    }

    #[test]
    fn construction_rejects_bad_input() {
        assert!(DiagGaussian::new(vec![0.0], vec![0.0, 1.0]).is_err());
        assert!(DiagGaussian::new(vec![0.0], vec![f64::INFINITY]).is_err());
        assert!(DiagGaussian::new(vec![f64::NAN], vec![0.0]).is_err());
    }

    #[test]
    fn sampling_is_seeded_and_unbiased() {
        let g = uni(3.0, 1.0);
        let a = g.sample(&mut ChaCha8Rng::seed_from_u64(5));
        let b = g.sample(&mut ChaCha8Rng::seed_from_u64(5));
        assert_eq!(a, b);

        let mut rng = ChaCha8Rng::seed_from_u64(11);
        let n = 100_000;
        let mean = (0..n).map(|_| g.sample(&mut rng)[0]).sum::<f64>() / n as f64;
        assert!((mean - 3.0).abs() < 0.02, "{mean}");

        let narrow = DiagGaussian::new(vec![-2.0], vec![-30.0]).unwrap();
        for _ in 0..100 {
            assert!((narrow.sample(&mut rng)[0] + 2.0).abs() < 1e-9);
        }
    }

    #[test]
    fn renyi_examples() {
        let p = uni(1.0, 1.0);
        let q = uni(0.0, 1.0);
        assert_abs_diff_eq!(renyi_divergence(2.0, &p, &p).unwrap(), 0.0, epsilon = 1e-15);
        assert_abs_diff_eq!(exp_renyi_divergence(2.0, &p, &p).unwrap(), 1.0, epsilon = 1e-15);
        assert_abs_diff_eq!(renyi_divergence(2.0, &p, &q).unwrap(), 1.0, epsilon = 1e-14);
        assert_abs_diff_eq!(exp_renyi_divergence(2.0, &p, &q).unwrap(), std::f64::consts::E, epsilon = 1e-13);
        let wide = uni(0.0, 1.2);
        let d2 = renyi_divergence(2.0, &wide, &q).unwrap();
        assert_abs_diff_eq!(d2, -0.5 * (0.56f64 * 1.44).ln(), epsilon = 1e-14);
        assert_abs_diff_eq!(d2, 0.107_6, epsilon = 1e-4);
    }

    #[test]
    fn kl_limit_is_continuous() {
        let p = DiagGaussian::from_std(vec![0.3, -1.0], &[0.7, 1.4]).unwrap();
        let q = DiagGaussian::from_std(vec![-0.2, 0.5], &[1.1, 0.9]).unwrap();
        let kl = renyi_divergence(1.0, &p, &q).unwrap();
        let near = renyi_divergence(1.0 + 1e-7, &p, &q).unwrap();
        assert!((kl - near).abs() < 1e-5, "{kl} {near}");
    }

    #[test]
    fn undefined_divergence_is_an_error() {
        // σ_P = 2, σ_Q = 1: d_2 needs 2·1 − 4 > 0.
        let p = uni(0.0, 2.0);
        let q = uni(0.0, 1.0);
        assert!(matches!(
            renyi_divergence(2.0, &p, &q),
            Err(GaussianError::DivergenceUndefined { .. })
        ));
        // Critical order 4/3: 1.3 is fine, 1.34 is not.
        assert!(renyi_divergence(1.3, &p, &q).is_ok());
        assert!(renyi_divergence(1.34, &p, &q).is_err());
        assert!(matches!(renyi_divergence(-1.0, &p, &q), Err(GaussianError::InvalidOrder(_))));
    }

    #[test]
    fn divergence_gradient_matches_finite_differences() {
        let q = DiagGaussian::from_std(vec![0.1, -0.4], &[1.0, 0.8]).unwrap();
        let base_mean = vec![0.3, -0.1];
        let base_ls = vec![0.1f64.ln_1p(), -0.3];
        for &alpha in &[0.5, 1.0, 2.0, 3.0] {
            let p = DiagGaussian::new(base_mean.clone(), base_ls.clone()).unwrap();
            let (_, g) = renyi_divergence_grad(alpha, &p, &q).unwrap();
            let h = 1e-6;
            for k in 0..4 {
                let shifted = |s: f64| {
                    let mut m = base_mean.clone();
                    let mut l = base_ls.clone();
                    if k < 2 {
                        m[k] += s;
                    } else {
                        l[k - 2] += s;
                    }
                    renyi_divergence(alpha, &DiagGaussian::new(m, l).unwrap(), &q).unwrap()
                };
                let fd = (shifted(h) - shifted(-h)) / (2.0 * h);
                assert!((fd - g[k]).abs() < 1e-7, "alpha {alpha} k {k}: {fd} vs {}", g[k]);
            }
        }
    }

    #[test]
    fn d2_minus_one_matches_weight_variance() {
        let p = uni(0.3, 0.9);
        let q = uni(0.0, 1.0);
        let d2 = exp_renyi_divergence(2.0, &p, &q).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(2024);
        let n = 1_000_000;
        let (mut s1, mut s2) = (0.0, 0.0);
        for _ in 0..n {
            let x = q.sample(&mut rng);
            let w = (p.log_pdf(&x).unwrap() - q.log_pdf(&x).unwrap()).exp();
            s1 += w;
            s2 += w * w;
        }
        let mean = s1 / n as f64;
        let var = s2 / n as f64 - mean * mean;
        assert!(((var - (d2 - 1.0)) / (d2 - 1.0)).abs() < 0.02, "var {var} vs {}", d2 - 1.0);
    }

    #[test]
    fn weight_law_regimes_and_tails() {
        let fat = WeightLawParams::from_univariate(0.0, 2.0, 0.0, 1.0).unwrap();
        assert_eq!(fat.regime, WeightRegime::Unbounded);
        match weight_tail_regime(&fat) {
            TailRegime::FatTail { critical_order } => assert_abs_diff_eq!(critical_order, 4.0 / 3.0, epsilon = 1e-15),
            other => panic!("{other:?}"),
        }
        let eq = WeightLawParams::from_univariate(1.0, 1.0, 0.0, 1.0).unwrap();
        assert_eq!(eq.regime, WeightRegime::EqualVariance);
        assert_eq!(weight_tail_regime(&eq), TailRegime::AllMoments);
        let bounded = WeightLawParams::from_univariate(0.4, 0.5, 0.0, 1.0).unwrap();
        assert_eq!(bounded.regime, WeightRegime::Bounded);
        assert_eq!(weight_tail_regime(&bounded), TailRegime::AllMoments);
        assert_eq!(weight_pdf(&bounded, bounded.boundary * 1.01), 0.0);
        assert_eq!(weight_pdf(&fat, fat.boundary * 0.99), 0.0);
        assert_eq!(weight_pdf(&eq, -1.0), 0.0);
        assert_eq!(
            WeightLawParams::from_univariate(0.0, 1.0, 0.0, 1.0),
            Err(GaussianError::DegenerateWeightLaw)
        );
    }

    /// Integrates the density on its support after the substitution
    /// `y = A·exp(∓u²)` (or `y = e^u`), which removes the endpoint singularities.
    fn pdf_mass(params: &WeightLawParams) -> f64 {
        let cutoff = 1e-12;
        let tol = 1e-6;
        match params.regime {
            WeightRegime::Bounded => integrate_to_infinity(
                |u| {
                    let y = params.boundary * (-u * u).exp();
                    weight_pdf(params, y) * 2.0 * u * y
                },
                0.0,
                tol,
                cutoff,
            )
            .value,
            WeightRegime::Unbounded => integrate_to_infinity(
                |u| {
                    let y = params.boundary * (u * u).exp();
                    weight_pdf(params, y) * 2.0 * u * y
                },
                0.0,
                tol,
                cutoff,
            )
            .value,
            WeightRegime::EqualVariance => {
                let center = -params.mu_tilde / params.sigma_tilde;
                integrate_real_line(|u| weight_pdf(params, u.exp()) * u.exp(), center, tol, cutoff).value
            }
        }
    }

    #[test]
    fn weight_pdf_integrates_to_one() {
        for (mp, sp) in [(0.5, 0.6), (-0.3, 0.9), (0.4, 1.3), (1.0, 1.1), (0.8, 1.0), (-0.5, 1.0)] {
            let params = WeightLawParams::from_univariate(mp, sp, 0.0, 1.0).unwrap();
            let mass = pdf_mass(&params);
            assert!((mass - 1.0).abs() < 1e-3, "({mp},{sp}) mass {mass}");
        }
    }

    #[test]
    fn weight_cdf_is_the_integral_of_the_pdf() {
        let params = WeightLawParams::from_univariate(0.5, 0.7, 0.0, 1.0).unwrap();
        let y = 0.6 * params.boundary;
        let partial = crate::quadrature::integrate_to_infinity(
            |u| {
                let yy = params.boundary * (-u * u).exp();
                if yy > y {
                    0.0
                } else {
                    weight_pdf(&params, yy) * 2.0 * u * yy
                }
            },
            (params.boundary / y).ln().sqrt(),
            1e-9,
            1e-14,
        );
        assert!((partial.value - weight_cdf(&params, y)).abs() < 1e-6);
    }

    proptest! {
        #[test]
        fn divergence_is_nondecreasing_in_order(
            mp in -1.5f64..1.5, mq in -1.5f64..1.5,
            lp in -0.7f64..0.7, lq in -0.7f64..0.7,
        ) {
            let p = DiagGaussian::new(vec![mp], vec![lp]).unwrap();
            let q = DiagGaussian::new(vec![mq], vec![lq]).unwrap();
            let mut prev = 0.0;
            for k in 1..40 {
                let alpha = 0.1 * k as f64;
                match renyi_divergence(alpha, &p, &q) {
                    Ok(d) => {
                        prop_assert!(d >= prev - 1e-12, "alpha {} d {} prev {}", alpha, d, prev);
                        prev = d;
                    }
                    Err(GaussianError::DivergenceUndefined { .. }) => break,
                    Err(e) => return Err(TestCaseError::fail(e.to_string())),
                }
            }
        }

        #[test]
        fn self_divergence_vanishes(m in -3.0f64..3.0, l in -2.0f64..2.0, alpha in 0.0f64..6.0) {
            let p = DiagGaussian::new(vec![m, -m], vec![l, 0.5 * l]).unwrap();
            prop_assert!(renyi_divergence(alpha, &p, &p).unwrap().abs() < 1e-12);
            prop_assert!((exp_renyi_divergence(alpha, &p, &p).unwrap() - 1.0).abs() < 1e-12);
        }
    }
}
