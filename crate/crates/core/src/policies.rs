//! Linear policies, Gaussian hyperpolicies, likelihood ratios, scores and
//! Fisher information.
//!
//! Parameter vectors are flattened as `[M row-major..., Ω...]` for the
//! linear-Gaussian policy (`M` is `action_dim × state_dim`) and as
//! `[μ..., log σ...]` for hyperpolicies.

use nalgebra::{DMatrix, DVector};
use rand::{Rng, RngCore};
use rand_distr::{Distribution, Normal, StandardNormal};
use thiserror::Error;

use crate::envs::{Actor, Trajectory};
use crate::estimators::normalized_weights;
use crate::gaussians::{DiagGaussian, GaussianError};

const HALF_LN_2PI: f64 = 0.918_938_533_204_672_8;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum PolicyError {
    #[error("expected {what} of length {expected}, got {got}")]
    DimensionMismatch { what: &'static str, expected: usize, got: usize },
    #[error("policy parameters must be finite")]
    NonFinite,
    #[error("cannot estimate a Fisher matrix from an empty batch")]
    EmptyBatch,
    #[error(transparent)]
    Gaussian(#[from] GaussianError),
}

fn check_len(what: &'static str, expected: usize, got: usize) -> Result<(), PolicyError> {
    if expected != got {
        return Err(PolicyError::DimensionMismatch { what, expected, got });
    }
    Ok(())
}

/// `a ~ N(M s, diag(e^{2Ω}))`, no bias term.
#[derive(Debug, Clone, PartialEq)]
pub struct LinearGaussianPolicy {
    state_dim: usize,
    action_dim: usize,
    m: Vec<f64>,
    omega: Vec<f64>,
}

impl LinearGaussianPolicy {
    pub fn new(state_dim: usize, action_dim: usize, m: Vec<f64>, omega: Vec<f64>) -> Result<Self, PolicyError> {
        check_len("gain matrix", state_dim * action_dim, m.len())?;
        check_len("log-std vector", action_dim, omega.len())?;
        if m.iter().chain(&omega).any(|v| !v.is_finite()) {
            return Err(PolicyError::NonFinite);
        }
        Ok(Self { state_dim, action_dim, m, omega })
    }

    /// Gains drawn from `N(0, 0.01²)` and unit standard deviation.
    pub fn initial<R: Rng + ?Sized>(state_dim: usize, action_dim: usize, rng: &mut R) -> Self {
        let normal = Normal::new(0.0, 0.01).expect("valid normal");
        let m = (0..state_dim * action_dim).map(|_| normal.sample(rng)).collect();
        Self { state_dim, action_dim, m, omega: vec![0.0; action_dim] }
    }

    pub fn state_dim(&self) -> usize {
        self.state_dim
    }

    pub fn action_dim(&self) -> usize {
        self.action_dim
    }

    pub fn gains(&self) -> &[f64] {
        &self.m
    }

    pub fn log_std(&self) -> &[f64] {
        &self.omega
    }

    pub fn n_params(&self) -> usize {
        self.m.len() + self.omega.len()
    }

    pub fn params(&self) -> Vec<f64> {
        self.m.iter().chain(&self.omega).copied().collect()
    }

    /// A policy of the same shape with the given flattened parameters.
    pub fn with_params(&self, params: &[f64]) -> Result<Self, PolicyError> {
        check_len("parameter vector", self.n_params(), params.len())?;
        let (m, omega) = params.split_at(self.m.len());
        Self::new(self.state_dim, self.action_dim, m.to_vec(), omega.to_vec())
    }

    /// Mean of the action distribution; `state` must have `state_dim` entries.
    pub fn mean_action_k(&self, k: usize, state: &[f64]) -> f64 {
        let row = &self.m[k * self.state_dim..(k + 1) * self.state_dim];
        row.iter().zip(state).map(|(m, s)| m * s).sum()
    }

    pub fn mean_action(&self, state: &[f64]) -> Vec<f64> {
        (0..self.action_dim).map(|k| self.mean_action_k(k, state)).collect()
    }

    pub fn action_distribution(&self, state: &[f64]) -> Result<DiagGaussian, PolicyError> {
        check_len("state", self.state_dim, state.len())?;
        Ok(DiagGaussian::new(self.mean_action(state), self.omega.clone())?)
    }

    pub fn act<R: Rng + ?Sized>(&self, state: &[f64], rng: &mut R) -> Result<Vec<f64>, PolicyError> {
        check_len("state", self.state_dim, state.len())?;
        Ok(self.sample_action(state, rng))
    }

    fn sample_action<R: Rng + ?Sized>(&self, state: &[f64], rng: &mut R) -> Vec<f64> {
        (0..self.action_dim)
            .map(|k| {
                let z: f64 = rng.sample(StandardNormal);
                self.mean_action_k(k, state) + self.omega[k].exp() * z
            })
            .collect()
    }

    /// `log π(a|s)`.
    pub fn log_prob(&self, state: &[f64], action: &[f64]) -> f64 {
        (0..self.action_dim)
            .map(|k| {
                let z = (action[k] - self.mean_action_k(k, state)) * (-self.omega[k]).exp();
                -0.5 * z * z - self.omega[k] - HALF_LN_2PI
            })
            .sum()
    }

    /// `log π(a|s)`, adding `∇ log π(a|s)` into `grad`.
    pub fn log_prob_and_score(&self, state: &[f64], action: &[f64], grad: &mut [f64]) -> f64 {
        let sd = self.state_dim;
        let mut total = 0.0;
        for k in 0..self.action_dim {
            let inv_std = (-self.omega[k]).exp();
            let z = (action[k] - self.mean_action_k(k, state)) * inv_std;
            total += -0.5 * z * z - self.omega[k] - HALF_LN_2PI;
            let dm = z * inv_std;
            for (g, s) in grad[k * sd..(k + 1) * sd].iter_mut().zip(state) {
                *g += dm * s;
            }
            grad[self.m.len() + k] += z * z - 1.0;
        }
        total
    }

    pub fn sigma_mean(&self) -> f64 {
        self.omega.iter().map(|o| o.exp()).sum::<f64>() / self.action_dim as f64
    }
}

impl Actor for LinearGaussianPolicy {
    fn act(&self, state: &[f64], rng: &mut dyn RngCore) -> Vec<f64> {
        debug_assert_eq!(state.len(), self.state_dim);
        self.sample_action(state, rng)
    }
}

/// `a = M s` exactly.
#[derive(Debug, Clone, PartialEq)]
pub struct DeterministicLinearPolicy {
    state_dim: usize,
    action_dim: usize,
    theta: Vec<f64>,
}

impl DeterministicLinearPolicy {
    pub fn new(state_dim: usize, action_dim: usize, theta: Vec<f64>) -> Result<Self, PolicyError> {
        check_len("gain matrix", state_dim * action_dim, theta.len())?;
        if theta.iter().any(|v| !v.is_finite()) {
            return Err(PolicyError::NonFinite);
        }
        Ok(Self { state_dim, action_dim, theta })
    }

    pub fn theta(&self) -> &[f64] {
        &self.theta
    }

    pub fn action(&self, state: &[f64]) -> Vec<f64> {
        self.theta
            .chunks(self.state_dim)
            .map(|row| row.iter().zip(state).map(|(m, s)| m * s).sum())
            .collect()
    }
}

impl Actor for DeterministicLinearPolicy {
    fn act(&self, state: &[f64], _rng: &mut dyn RngCore) -> Vec<f64> {
        debug_assert_eq!(state.len(), self.state_dim);
        self.action(state)
    }
}

/// `θ ~ N(μ, diag(σ²))` over the parameters of a deterministic policy.
#[derive(Debug, Clone, PartialEq)]
pub struct GaussianHyperpolicy {
    dist: DiagGaussian,
}

impl GaussianHyperpolicy {
    pub fn new(mu: Vec<f64>, log_sigma: Vec<f64>) -> Result<Self, PolicyError> {
        Ok(Self { dist: DiagGaussian::new(mu, log_sigma)? })
    }

    /// Means drawn from `N(0, 0.01²)` and unit standard deviation.
    pub fn initial<R: Rng + ?Sized>(dim: usize, rng: &mut R) -> Self {
        let normal = Normal::new(0.0, 0.01).expect("valid normal");
        let mu = (0..dim).map(|_| normal.sample(rng)).collect();
        Self::new(mu, vec![0.0; dim]).expect("finite initial hyperpolicy")
    }

    pub fn dim(&self) -> usize {
        self.dist.dim()
    }

    pub fn mu(&self) -> &[f64] {
        self.dist.mean()
    }

    pub fn log_sigma(&self) -> &[f64] {
        self.dist.log_std()
    }

    pub fn distribution(&self) -> &DiagGaussian {
        &self.dist
    }

    pub fn n_params(&self) -> usize {
        2 * self.dim()
    }

    pub fn params(&self) -> Vec<f64> {
        self.mu().iter().chain(self.log_sigma()).copied().collect()
    }

    pub fn with_params(&self, params: &[f64]) -> Result<Self, PolicyError> {
        check_len("parameter vector", self.n_params(), params.len())?;
        let (mu, ls) = params.split_at(self.dim());
        Self::new(mu.to_vec(), ls.to_vec())
    }

    pub fn sample<R: Rng + ?Sized>(&self, rng: &mut R) -> Vec<f64> {
        self.dist.sample(rng)
    }

    pub fn log_density(&self, theta: &[f64]) -> Result<f64, PolicyError> {
        Ok(self.dist.log_pdf(theta)?)
    }

    pub fn sigma_mean(&self) -> f64 {
        self.log_sigma().iter().map(|s| s.exp()).sum::<f64>() / self.dim() as f64
    }
}

/// `Σ_t log π(a_t|s_t)`: the policy part of the trajectory log-density.
pub fn traj_log_density(traj: &Trajectory, policy: &LinearGaussianPolicy) -> f64 {
    traj.steps().map(|(s, a)| policy.log_prob(s, a)).sum()
}

/// `log p(τ|θ') − log p(τ|θ)`; transition terms cancel.
pub fn traj_log_weight(traj: &Trajectory, target: &LinearGaussianPolicy, behavioral: &LinearGaussianPolicy) -> f64 {
    traj.steps().map(|(s, a)| target.log_prob(s, a) - behavioral.log_prob(s, a)).sum()
}

/// `log ν_{ρ'}(θ) − log ν_ρ(θ)`.
pub fn hyper_log_weight(theta: &[f64], target: &GaussianHyperpolicy, behavioral: &GaussianHyperpolicy) -> Result<f64, PolicyError> {
    Ok(target.log_density(theta)? - behavioral.log_density(theta)?)
}

/// `∇_θ log p(τ|θ) = Σ_t ∇ log π_θ(a_t|s_t)`.
pub fn traj_score(traj: &Trajectory, policy: &LinearGaussianPolicy) -> Vec<f64> {
    let mut grad = vec![0.0; policy.n_params()];
    for (s, a) in traj.steps() {
        policy.log_prob_and_score(s, a, &mut grad);
    }
    grad
}

/// `∇_ρ log ν_ρ(θ)` in the `(μ, log σ)` parameterisation.
pub fn hyper_score(theta: &[f64], hyper: &GaussianHyperpolicy) -> Result<Vec<f64>, PolicyError> {
    check_len("policy parameters", hyper.dim(), theta.len())?;
    let d = hyper.dim();
    let mut grad = vec![0.0; 2 * d];
    for i in 0..d {
        let inv_var = (-2.0 * hyper.log_sigma()[i]).exp();
        let diff = theta[i] - hyper.mu()[i];
        grad[i] = diff * inv_var;
        grad[d + i] = diff * diff * inv_var - 1.0;
    }
    Ok(grad)
}

/// Diagonal of the Fisher matrix of a Gaussian hyperpolicy:
/// `1/σ²` for each mean and `2` for each log standard deviation.
pub fn exact_hyper_fim(hyper: &GaussianHyperpolicy) -> Vec<f64> {
    hyper
        .log_sigma()
        .iter()
        .map(|ls| (-2.0 * ls).exp())
        .chain(std::iter::repeat_n(2.0, hyper.dim()))
        .collect()
}

/// Off-policy Fisher estimate `Σ_i ω_i ∇log p(τ_i|θ') ∇log p(τ_i|θ')ᵀ`, with
/// `ω_i = w_i / N` (IS) or `w̃_i` (SN).
pub fn estimated_fim(
    trajectories: &[Trajectory],
    target: &LinearGaussianPolicy,
    behavioral: &LinearGaussianPolicy,
    use_sn: bool,
) -> Result<DMatrix<f64>, PolicyError> {
    if trajectories.is_empty() {
        return Err(PolicyError::EmptyBatch);
    }
    let n = trajectories.len();
    let log_w: Vec<f64> = trajectories.iter().map(|t| traj_log_weight(t, target, behavioral)).collect();
    let coeffs: Vec<f64> = if use_sn {
        normalized_weights(&log_w).map_err(|_| PolicyError::NonFinite)?
    } else {
        log_w.iter().map(|l| l.exp() / n as f64).collect()
    };
    let p = target.n_params();
    let mut fim = DMatrix::zeros(p, p);
    for (traj, c) in trajectories.iter().zip(coeffs) {
        let score = DVector::from_vec(traj_score(traj, target));
        fim.syger(c, &score, &score, 1.0);
    }
    fim.fill_upper_triangle_with_lower_triangle();
    Ok(fim)
}
