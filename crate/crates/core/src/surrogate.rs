//! Surrogate objectives: an importance-sampled return estimate minus a
//! penalty in `sqrt(d₂/N)` (or its ESS-based practical counterpart), with
//! analytic gradients.
//!
//! Candidates whose penalty divergence is undefined, or whose value is not
//! finite, evaluate to a `−∞` marker so that line searches reject them.

use rayon::prelude::*;
use thiserror::Error;

use crate::envs::Trajectory;
use crate::estimators::{ess_from_log_weights, log_sum_exp, normalized_weights, sum_sq_normalized_weights, weight_variance_from_log_weights, EstimatorError};
use crate::gaussians::{renyi_divergence_1d, renyi_divergence_grad, GaussianError};
use crate::policies::{hyper_log_weight, hyper_score, GaussianHyperpolicy, LinearGaussianPolicy, PolicyError};

#[derive(Debug, Error, Clone, PartialEq)]
pub enum SurrogateError {
    #[error("invalid batch: {0}")]
    InvalidBatch(&'static str),
    #[error("candidate does not match the batch (action-based vs parameter-based)")]
    ModeMismatch,
    #[error("candidate lies outside the region where the surrogate is defined")]
    Infeasible,
    #[error(transparent)]
    Policy(#[from] PolicyError),
    #[error(transparent)]
    Estimator(#[from] EstimatorError),
    #[error(transparent)]
    Gaussian(#[from] GaussianError),
}

/// `Σ_t γ^t r_t`.
pub fn trajectory_return(traj: &Trajectory, gamma: f64) -> f64 {
    let mut discount = 1.0;
    let mut total = 0.0;
    for r in &traj.rewards {
        total += discount * r;
        discount *= gamma;
    }
    total
}

/// The distribution that generated a batch.
#[derive(Debug, Clone, PartialEq)]
pub enum Behavioral {
    Action(LinearGaussianPolicy),
    Parameter(GaussianHyperpolicy),
}

/// N trajectories and, in parameter-based mode, the policy parameters that
/// generated each of them.
#[derive(Debug, Clone, PartialEq)]
pub struct Batch {
    trajectories: Vec<Trajectory>,
    thetas: Option<Vec<Vec<f64>>>,
    behavioral: Behavioral,
    gamma: f64,
    returns: Vec<f64>,
}

impl Batch {
    pub fn action_based(trajectories: Vec<Trajectory>, behavioral: LinearGaussianPolicy, gamma: f64) -> Result<Self, SurrogateError> {
        Self::build(trajectories, None, Behavioral::Action(behavioral), gamma)
    }

    pub fn parameter_based(
        trajectories: Vec<Trajectory>,
        thetas: Vec<Vec<f64>>,
        behavioral: GaussianHyperpolicy,
        gamma: f64,
    ) -> Result<Self, SurrogateError> {
        if thetas.len() != trajectories.len() {
            return Err(SurrogateError::InvalidBatch("one parameter vector per trajectory is required"));
        }
        if thetas.iter().any(|t| t.len() != behavioral.dim()) {
            return Err(SurrogateError::InvalidBatch("parameter vector dimension differs from the hyperpolicy"));
        }
        Self::build(trajectories, Some(thetas), Behavioral::Parameter(behavioral), gamma)
    }

    fn build(trajectories: Vec<Trajectory>, thetas: Option<Vec<Vec<f64>>>, behavioral: Behavioral, gamma: f64) -> Result<Self, SurrogateError> {
        if trajectories.is_empty() {
            return Err(SurrogateError::InvalidBatch("no trajectories"));
        }
        if !(0.0..=1.0).contains(&gamma) {
            return Err(SurrogateError::InvalidBatch("gamma must lie in [0, 1]"));
        }
        if let Behavioral::Action(policy) = &behavioral {
            let ok = trajectories.iter().all(|t| {
                t.states.len() == t.actions.len() + 1
                    && t.steps().all(|(s, a)| s.len() == policy.state_dim() && a.len() == policy.action_dim())
            });
            if !ok {
                return Err(SurrogateError::InvalidBatch("trajectory shapes do not match the policy"));
            }
        }
        let returns = trajectories.iter().map(|t| trajectory_return(t, gamma)).collect();
        Ok(Self { trajectories, thetas, behavioral, gamma, returns })
    }

    pub fn len(&self) -> usize {
        self.trajectories.len()
    }

    pub fn is_empty(&self) -> bool {
        self.trajectories.is_empty()
    }

    pub fn trajectories(&self) -> &[Trajectory] {
        &self.trajectories
    }

    pub fn thetas(&self) -> Option<&[Vec<f64>]> {
        self.thetas.as_deref()
    }

    pub fn behavioral(&self) -> &Behavioral {
        &self.behavioral
    }

    pub fn gamma(&self) -> f64 {
        self.gamma
    }

    pub fn returns(&self) -> &[f64] {
        &self.returns
    }

    pub fn mean_return(&self) -> f64 {
        self.returns.iter().sum::<f64>() / self.len() as f64
    }

    /// Empirical `max_i |R(τ_i)|`.
    pub fn max_abs_return(&self) -> f64 {
        self.returns.iter().fold(0.0, |m, r| m.max(r.abs()))
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum WeightEstimator {
    Is,
    Sn,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum PenaltyKind {
    /// `λ sqrt(d₂/N)`: per-state estimate (action-based) or closed form (parameter-based).
    Exact,
    /// `λ / sqrt(ÊSS)`.
    Ess,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SurrogateConfig {
    pub lambda: f64,
    pub estimator: WeightEstimator,
    pub penalty: PenaltyKind,
}

/// Parameters being evaluated against a batch.
#[derive(Debug, Clone, Copy)]
pub enum Candidate<'a> {
    Action(&'a LinearGaussianPolicy),
    Parameter(&'a GaussianHyperpolicy),
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SurrogateEval {
    /// `is_term − penalty`, or `−∞` for a rejected candidate.
    pub value: f64,
    pub is_term: f64,
    pub penalty: f64,
    /// The divergence entering the penalty; `N / ÊSS` in ESS mode.
    pub d2_hat: f64,
    pub ess_hat: f64,
    /// Population variance of the raw importance weights.
    pub weight_var: f64,
}

impl SurrogateEval {
    /// The `−∞` marker returned for rejected candidates.
    pub fn rejected() -> Self {
        Self {
            value: f64::NEG_INFINITY,
            is_term: f64::NAN,
            penalty: f64::NAN,
            d2_hat: f64::NAN,
            ess_hat: f64::NAN,
            weight_var: f64::NAN,
        }
    }

    pub fn is_feasible(&self) -> bool {
        self.value.is_finite()
    }
}

/// Per-trajectory ingredients of a surrogate evaluation.
struct Terms {
    log_w: Vec<f64>,
    /// Target score per trajectory (gradient runs only).
    scores: Vec<Vec<f64>>,
    penalty_div: PenaltyDivergence,
}

enum PenaltyDivergence {
    None,
    /// Per-trajectory `Σ_t D₂` and its gradients.
    PerTrajectory { log_d2: Vec<f64>, grads: Vec<Vec<f64>> },
    /// Closed-form `D₂` between hyperpolicies and its gradient.
    Exact { value: f64, grad: Vec<f64> },
}

/// Marker for a candidate at which the penalty divergence is undefined.
struct Undefined;

/// Per-trajectory `(log w, score, log d₂, ∇ log d₂)`; `None` when a per-state
/// divergence is undefined.
type TrajTerms = Option<(f64, Vec<f64>, f64, Vec<f64>)>;

fn action_terms(
    batch: &Batch,
    target: &LinearGaussianPolicy,
    behavioral: &LinearGaussianPolicy,
    need_div: bool,
    want_grad: bool,
) -> Result<Result<Terms, Undefined>, SurrogateError> {
    if target.state_dim() != behavioral.state_dim() || target.action_dim() != behavioral.action_dim() {
        return Err(SurrogateError::ModeMismatch);
    }
    let p = target.n_params();
    let sd = target.state_dim();
    let m_len = sd * target.action_dim();
    let per_traj: Vec<TrajTerms> = batch
        .trajectories
        .par_iter()
        .map(|traj| {
            let mut log_w = 0.0;
            let mut score = if want_grad { vec![0.0; p] } else { Vec::new() };
            let mut div = 0.0;
            let mut div_grad = if want_grad && need_div { vec![0.0; p] } else { Vec::new() };
            for (s, a) in traj.steps() {
                log_w += if want_grad {
                    target.log_prob_and_score(s, a, &mut score)
                } else {
                    target.log_prob(s, a)
                } - behavioral.log_prob(s, a);
                if need_div {
                    for k in 0..target.action_dim() {
                        let (d, d_mean, d_ls) = renyi_divergence_1d(
                            2.0,
                            target.mean_action_k(k, s),
                            target.log_std()[k],
                            behavioral.mean_action_k(k, s),
                            behavioral.log_std()[k],
                        )
                        .ok()?;
                        div += d;
                        if want_grad {
                            for (g, sj) in div_grad[k * sd..(k + 1) * sd].iter_mut().zip(s) {
                                *g += d_mean * sj;
                            }
                            div_grad[m_len + k] += d_ls;
                        }
                    }
                }
            }
            Some((log_w, score, div, div_grad))
        })
        .collect();
    if per_traj.iter().any(Option::is_none) {
        return Ok(Err(Undefined));
    }
    let n = per_traj.len();
    let mut log_w = Vec::with_capacity(n);
    let mut scores = Vec::with_capacity(n);
    let mut log_d2 = Vec::with_capacity(n);
    let mut grads = Vec::with_capacity(n);
    for (lw, sc, d, dg) in per_traj.into_iter().flatten() {
        log_w.push(lw);
        scores.push(sc);
        log_d2.push(d);
        grads.push(dg);
    }
    let penalty_div = if need_div { PenaltyDivergence::PerTrajectory { log_d2, grads } } else { PenaltyDivergence::None };
    Ok(Ok(Terms { log_w, scores, penalty_div }))
}

fn parameter_terms(
    batch: &Batch,
    target: &GaussianHyperpolicy,
    behavioral: &GaussianHyperpolicy,
    need_div: bool,
    want_grad: bool,
) -> Result<Result<Terms, Undefined>, SurrogateError> {
    let thetas = batch.thetas.as_ref().ok_or(SurrogateError::ModeMismatch)?;
    if target.dim() != behavioral.dim() {
        return Err(SurrogateError::ModeMismatch);
    }
    let log_w = thetas
        .iter()
        .map(|t| hyper_log_weight(t, target, behavioral))
        .collect::<Result<Vec<_>, _>>()?;
    let scores = if want_grad {
        thetas.iter().map(|t| hyper_score(t, target)).collect::<Result<Vec<_>, _>>()?
    } else {
        Vec::new()
    };
    let penalty_div = if need_div {
        match renyi_divergence_grad(2.0, target.distribution(), behavioral.distribution()) {
            Ok((value, grad)) => PenaltyDivergence::Exact { value, grad },
            Err(GaussianError::DivergenceUndefined { .. }) => return Ok(Err(Undefined)),
            Err(e) => return Err(e.into()),
        }
    } else {
        PenaltyDivergence::None
    };
    Ok(Ok(Terms { log_w, scores, penalty_div }))
}

fn axpy(acc: &mut [f64], a: f64, x: &[f64]) {
    for (y, xi) in acc.iter_mut().zip(x) {
        *y += a * xi;
    }
}

fn evaluate_impl(batch: &Batch, candidate: Candidate<'_>, cfg: &SurrogateConfig, want_grad: bool) -> Result<(SurrogateEval, Option<Vec<f64>>), SurrogateError> {
    if !(cfg.lambda >= 0.0) || !cfg.lambda.is_finite() {
        return Err(SurrogateError::InvalidBatch("lambda must be finite and non-negative"));
    }
    let need_div = cfg.penalty == PenaltyKind::Exact;
    let (terms, n_params) = match (candidate, &batch.behavioral) {
        (Candidate::Action(target), Behavioral::Action(behavioral)) => {
            (action_terms(batch, target, behavioral, need_div, want_grad)?, target.n_params())
        }
        (Candidate::Parameter(target), Behavioral::Parameter(behavioral)) => {
            (parameter_terms(batch, target, behavioral, need_div, want_grad)?, target.n_params())
        }
        _ => return Err(SurrogateError::ModeMismatch),
    };
    let Ok(terms) = terms else {
        return Ok((SurrogateEval::rejected(), None));
    };
    let n = batch.len() as f64;
    let returns = &batch.returns;
    let Terms { log_w, scores, penalty_div } = terms;

    // Self-normalised weights are needed for the SN term and the ESS
    // diagnostics; all-zero weights make the candidate unusable.
    let w_tilde = match normalized_weights(&log_w) {
        Ok(w) => w,
        Err(EstimatorError::DegenerateWeights) => return Ok((SurrogateEval::rejected(), None)),
        Err(e) => return Err(e.into()),
    };
    let sum_sq = sum_sq_normalized_weights(&log_w)?;
    let ess_hat = ess_from_log_weights(&log_w)?;
    let weight_var = weight_variance_from_log_weights(&log_w)?;

    let mut grad = if want_grad { vec![0.0; n_params] } else { Vec::new() };

    let is_term = match cfg.estimator {
        WeightEstimator::Is => {
            let mut total = 0.0;
            for (i, (lw, r)) in log_w.iter().zip(returns).enumerate() {
                let wr = lw.exp() * r;
                total += wr;
                if want_grad {
                    axpy(&mut grad, wr / n, &scores[i]);
                }
            }
            total / n
        }
        WeightEstimator::Sn => {
            let est: f64 = w_tilde.iter().zip(returns).map(|(w, r)| w * r).sum();
            if want_grad {
                for (i, (w, r)) in w_tilde.iter().zip(returns).enumerate() {
                    axpy(&mut grad, w * (r - est), &scores[i]);
                }
            }
            est
        }
    };

    let lambda = cfg.lambda;
    let (penalty, d2_hat) = match (&penalty_div, cfg.penalty) {
        (PenaltyDivergence::PerTrajectory { log_d2, grads }, _) => {
            let lse = log_sum_exp(log_d2);
            let d2 = (lse - n.ln()).exp();
            let penalty = if lambda == 0.0 { 0.0 } else { lambda * (d2 / n).sqrt() };
            if want_grad && penalty > 0.0 && penalty.is_finite() {
                for (ld, g) in log_d2.iter().zip(grads) {
                    axpy(&mut grad, -0.5 * penalty * (ld - lse).exp(), g);
                }
            }
            (penalty, d2)
        }
        (PenaltyDivergence::Exact { value, grad: dgrad }, _) => {
            let d2 = value.exp();
            let penalty = if lambda == 0.0 { 0.0 } else { lambda * (d2 / n).sqrt() };
            if want_grad && penalty > 0.0 && penalty.is_finite() {
                axpy(&mut grad, -0.5 * penalty, dgrad);
            }
            (penalty, d2)
        }
        (PenaltyDivergence::None, _) => {
            let penalty = lambda * sum_sq.sqrt();
            if want_grad && lambda > 0.0 {
                // ∇ Σ w̃² = 2 Σ w̃_i² (s_i − s̄), s̄ = Σ w̃_j s_j.
                let mut mean_score = vec![0.0; n_params];
                for (w, s) in w_tilde.iter().zip(&scores) {
                    axpy(&mut mean_score, *w, s);
                }
                let coeff = -lambda / sum_sq.sqrt();
                for (w, s) in w_tilde.iter().zip(&scores) {
                    axpy(&mut grad, coeff * w * w, s);
                    axpy(&mut grad, -coeff * w * w, &mean_score);
                }
            }
            (penalty, n * sum_sq)
        }
    };

    let value = is_term - penalty;
    if !value.is_finite() || (want_grad && grad.iter().any(|g| !g.is_finite())) {
        return Ok((SurrogateEval::rejected(), None));
    }
    let eval = SurrogateEval { value, is_term, penalty, d2_hat, ess_hat, weight_var };
    Ok((eval, want_grad.then_some(grad)))
}

/// Evaluates the configured surrogate at `candidate`.
pub fn evaluate(batch: &Batch, candidate: Candidate<'_>, cfg: &SurrogateConfig) -> Result<SurrogateEval, SurrogateError> {
    Ok(evaluate_impl(batch, candidate, cfg, false)?.0)
}

/// Evaluates the surrogate and its gradient with respect to the candidate's
/// flattened parameters. Fails with [`SurrogateError::Infeasible`] at a
/// rejected candidate.
pub fn evaluate_with_gradient(batch: &Batch, candidate: Candidate<'_>, cfg: &SurrogateConfig) -> Result<(SurrogateEval, Vec<f64>), SurrogateError> {
    match evaluate_impl(batch, candidate, cfg, true)? {
        (eval, Some(grad)) => Ok((eval, grad)),
        _ => Err(SurrogateError::Infeasible),
    }
}

pub fn surrogate_gradient(batch: &Batch, candidate: Candidate<'_>, cfg: &SurrogateConfig) -> Result<Vec<f64>, SurrogateError> {
    evaluate_with_gradient(batch, candidate, cfg).map(|(_, g)| g)
}

/// Action-based surrogate with the per-state `d₂` penalty.
pub fn apois_surrogate(batch: &Batch, target: &LinearGaussianPolicy, lambda: f64, estimator: WeightEstimator) -> Result<SurrogateEval, SurrogateError> {
    let cfg = SurrogateConfig { lambda, estimator, penalty: PenaltyKind::Exact };
    evaluate(batch, Candidate::Action(target), &cfg)
}

/// Parameter-based surrogate with the closed-form `d₂` penalty.
pub fn ppois_surrogate(batch: &Batch, target: &GaussianHyperpolicy, lambda: f64, estimator: WeightEstimator) -> Result<SurrogateEval, SurrogateError> {
    let cfg = SurrogateConfig { lambda, estimator, penalty: PenaltyKind::Exact };
    evaluate(batch, Candidate::Parameter(target), &cfg)
}

/// Either surrogate with the penalty replaced by `λ / sqrt(ÊSS)`.
pub fn practical_surrogate(batch: &Batch, candidate: Candidate<'_>, lambda: f64, estimator: WeightEstimator) -> Result<SurrogateEval, SurrogateError> {
    let cfg = SurrogateConfig { lambda, estimator, penalty: PenaltyKind::Ess };
    evaluate(batch, candidate, &cfg)
}

/// `(1/N) Σ_i Π_t d₂(π'(·|s_{i,t}) ‖ π(·|s_{i,t}))`, accumulated in log space.
pub fn estimate_traj_renyi(
    trajectories: &[Trajectory],
    target: &LinearGaussianPolicy,
    behavioral: &LinearGaussianPolicy,
) -> Result<f64, SurrogateError> {
    if trajectories.is_empty() {
        return Err(SurrogateError::InvalidBatch("no trajectories"));
    }
    let mut per_traj = Vec::with_capacity(trajectories.len());
    for traj in trajectories {
        let mut total = 0.0;
        for (s, _) in traj.steps() {
            for k in 0..target.action_dim() {
                total += renyi_divergence_1d(
                    2.0,
                    target.mean_action_k(k, s),
                    target.log_std()[k],
                    behavioral.mean_action_k(k, s),
                    behavioral.log_std()[k],
                )?
                .0;
            }
        }
        per_traj.push(total);
    }
    Ok((log_sum_exp(&per_traj) - (per_traj.len() as f64).ln()).exp())
}

/// `(sup_s d₂(π'(·|s) ‖ π(·|s)))^H` over the box `[state_low, state_high]`;
/// `+∞` when the supremum is unbounded or the divergence is undefined.
pub fn sup_renyi_bound(
    target: &LinearGaussianPolicy,
    behavioral: &LinearGaussianPolicy,
    horizon: usize,
    state_low: &[f64],
    state_high: &[f64],
) -> f64 {
    let sd = target.state_dim();
    let ad = target.action_dim();
    assert!(state_low.len() == sd && state_high.len() == sd, "state bounds must match the policy");
    // Per action dimension the divergence is a constant plus Δ_k(s)²/v_k with
    // Δ_k linear in s, so the supremum over a box is attained at a vertex.
    let mut constant = 0.0;
    let mut inv_v = Vec::with_capacity(ad);
    for k in 0..ad {
        match renyi_divergence_1d(2.0, 0.0, target.log_std()[k], 0.0, behavioral.log_std()[k]) {
            Ok((d, _, _)) => constant += d,
            Err(_) => return f64::INFINITY,
        }
        let p = (2.0 * target.log_std()[k]).exp();
        let q = (2.0 * behavioral.log_std()[k]).exp();
        inv_v.push(1.0 / (2.0 * q - p));
    }
    let diff: Vec<f64> = target.gains().iter().zip(behavioral.gains()).map(|(a, b)| a - b).collect();
    for j in 0..sd {
        let moves = (0..ad).any(|k| diff[k * sd + j] != 0.0);
        if moves && !(state_low[j].is_finite() && state_high[j].is_finite()) {
            return f64::INFINITY;
        }
    }
    let active: Vec<usize> = (0..sd).filter(|&j| (0..ad).any(|k| diff[k * sd + j] != 0.0)).collect();
    assert!(active.len() < 30, "too many state dimensions for vertex enumeration");
    let mut best: f64 = 0.0;
    let mut vertex = vec![0.0; sd];
    for mask in 0u64..(1u64 << active.len()) {
        for (bit, &j) in active.iter().enumerate() {
            vertex[j] = if mask >> bit & 1 == 1 { state_high[j] } else { state_low[j] };
        }
        let quad: f64 = (0..ad)
            .map(|k| {
                let delta: f64 = diff[k * sd..(k + 1) * sd].iter().zip(&vertex).map(|(d, s)| d * s).sum();
                delta * delta * inv_v[k]
            })
            .sum();
        best = best.max(quad);
    }
    (horizon as f64 * (constant + best)).exp()
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::envs::{collect_trajectories, Environment, Lqg};
    use crate::gaussians::exp_renyi_divergence;
    use approx::assert_abs_diff_eq;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn lqg_batch(seed: u64, n: usize, horizon: usize) -> (Batch, LinearGaussianPolicy) {
        let env = Lqg::default();
        let policy = LinearGaussianPolicy::new(1, 1, vec![-0.3], vec![-0.2]).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let trajs = collect_trajectories(&env, &policy, n, horizon, &mut rng).unwrap();
        (Batch::action_based(trajs, policy.clone(), 0.99).unwrap(), policy)
    }

    fn hyper_batch(seed: u64, n: usize) -> (Batch, GaussianHyperpolicy) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let hyper = GaussianHyperpolicy::new(vec![-0.4], vec![-1.0]).unwrap();
        let thetas: Vec<Vec<f64>> = (0..n).map(|_| hyper.sample(&mut rng)).collect();
        let trajs = thetas
            .iter()
            .map(|t| Trajectory {
                states: vec![vec![1.0], vec![1.0 + t[0]]],
                actions: vec![t.clone()],
                rewards: vec![-(t[0] + 0.5).powi(2)],
                done: false,
            })
            .collect();
        (Batch::parameter_based(trajs, thetas, hyper.clone(), 1.0).unwrap(), hyper)
    }

    #[test]
    fn trajectory_return_examples() {
        let t = |rewards: Vec<f64>| Trajectory {
            states: vec![vec![0.0]; rewards.len() + 1],
            actions: vec![vec![0.0]; rewards.len()],
            rewards,
            done: false,
        };
        assert_eq!(trajectory_return(&t(vec![0.0; 10]), 0.9), 0.0);
        assert_eq!(trajectory_return(&t(vec![1.0; 500]), 1.0), 500.0);
        assert_abs_diff_eq!(trajectory_return(&t(vec![1.0; 3]), 0.99), 2.9701, epsilon = 1e-12);
    }

    #[test]
    fn batch_validation() {
        let (batch, policy) = lqg_batch(0, 3, 4);
        assert!(Batch::action_based(vec![], policy.clone(), 0.9).is_err());
        assert!(Batch::action_based(batch.trajectories().to_vec(), policy, 1.5).is_err());
        let hyper = GaussianHyperpolicy::new(vec![0.0], vec![0.0]).unwrap();
        assert!(Batch::parameter_based(batch.trajectories().to_vec(), vec![vec![0.0]], hyper, 0.9).is_err());
    }

    #[test]
    fn on_policy_surrogates_reduce_to_mean_return() {
        let (batch, policy) = lqg_batch(1, 20, 10);
        let n = batch.len() as f64;
        for estimator in [WeightEstimator::Is, WeightEstimator::Sn] {
            let eval = apois_surrogate(&batch, &policy, 2.0, estimator).unwrap();
            assert_abs_diff_eq!(eval.value, batch.mean_return() - 2.0 / n.sqrt(), epsilon = 1e-12);
            assert_eq!(eval.d2_hat, 1.0);
            assert_eq!(eval.ess_hat, n);
            assert_eq!(eval.weight_var, 0.0);
            let eval = practical_surrogate(&batch, Candidate::Action(&policy), 2.0, estimator).unwrap();
            assert_abs_diff_eq!(eval.penalty, 2.0 / n.sqrt(), epsilon = 1e-12);
        }
        let (batch, hyper) = hyper_batch(2, 30);
        let eval = ppois_surrogate(&batch, &hyper, 1.5, WeightEstimator::Is).unwrap();
        assert_abs_diff_eq!(eval.value, batch.mean_return() - 1.5 / 30f64.sqrt(), epsilon = 1e-12);
        let eval = apois_surrogate(&lqg_batch(1, 20, 10).0, &policy, 0.0, WeightEstimator::Is).unwrap();
        assert_eq!(eval.penalty, 0.0);
    }

    #[test]
    fn parameter_penalty_uses_closed_form_divergence() {
        let (batch, hyper) = hyper_batch(3, 25);
        let target = GaussianHyperpolicy::new(vec![-0.3], vec![-0.9]).unwrap();
        let eval = ppois_surrogate(&batch, &target, 1.0, WeightEstimator::Sn).unwrap();
        let d2 = exp_renyi_divergence(2.0, target.distribution(), hyper.distribution()).unwrap();
        assert_abs_diff_eq!(eval.d2_hat, d2, epsilon = 1e-12);
        assert_abs_diff_eq!(eval.penalty, (d2 / 25.0).sqrt(), epsilon = 1e-12);
        assert_abs_diff_eq!(eval.value, eval.is_term - eval.penalty, epsilon = 1e-15);
    }

    #[test]
    fn undefined_divergence_is_rejected() {
        let (batch, hyper) = hyper_batch(4, 10);
        let wide = GaussianHyperpolicy::new(hyper.mu().to_vec(), vec![hyper.log_sigma()[0] + 0.5]).unwrap();
        let eval = ppois_surrogate(&batch, &wide, 1.0, WeightEstimator::Is).unwrap();
        assert_eq!(eval.value, f64::NEG_INFINITY);
        assert!(!eval.is_feasible());
        let cfg = SurrogateConfig { lambda: 1.0, estimator: WeightEstimator::Is, penalty: PenaltyKind::Exact };
        assert_eq!(surrogate_gradient(&batch, Candidate::Parameter(&wide), &cfg), Err(SurrogateError::Infeasible));
        // The practical penalty has no such restriction.
        assert!(practical_surrogate(&batch, Candidate::Parameter(&wide), 1.0, WeightEstimator::Is).unwrap().is_feasible());
    }

    #[test]
    fn mode_mismatch_is_an_error() {
        let (batch, _) = lqg_batch(5, 3, 3);
        let hyper = GaussianHyperpolicy::new(vec![0.0], vec![0.0]).unwrap();
        assert_eq!(ppois_surrogate(&batch, &hyper, 1.0, WeightEstimator::Is), Err(SurrogateError::ModeMismatch));
    }

    #[test]
    fn dominant_weight_drives_practical_penalty_to_lambda() {
        let (batch, policy) = lqg_batch(6, 10, 20);
        let far = LinearGaussianPolicy::new(1, 1, vec![3.0], vec![-3.0]).unwrap();
        let eval = practical_surrogate(&batch, Candidate::Action(&far), 1.0, WeightEstimator::Sn).unwrap();
        assert!(eval.ess_hat < 1.01);
        assert!((eval.penalty - 1.0).abs() < 0.01);
        assert!(eval.value <= eval.is_term);
        let _ = policy;
    }

    #[test]
    fn renyi_estimator_examples() {
        let (batch, policy) = lqg_batch(7, 15, 6);
        let trajs = batch.trajectories();
        assert_eq!(estimate_traj_renyi(trajs, &policy, &policy).unwrap(), 1.0);

        let mut rng = ChaCha8Rng::seed_from_u64(8);
        let target = LinearGaussianPolicy::new(1, 1, vec![-0.5], vec![-0.3]).unwrap();
        let single: Vec<Trajectory> = trajs
            .iter()
            .map(|t| Trajectory { states: t.states[..2].to_vec(), actions: t.actions[..1].to_vec(), rewards: t.rewards[..1].to_vec(), done: false })
            .collect();
        let expected = single
            .iter()
            .map(|t| {
                let s = &t.states[0];
                exp_renyi_divergence(2.0, &target.action_distribution(s).unwrap(), &policy.action_distribution(s).unwrap()).unwrap()
            })
            .sum::<f64>()
            / single.len() as f64;
        assert_abs_diff_eq!(estimate_traj_renyi(&single, &target, &policy).unwrap(), expected, epsilon = 1e-12);

        // State-independent policies: the estimate is d₂^H exactly.
        let p = LinearGaussianPolicy::new(2, 2, vec![0.0; 4], vec![rng.random_range(-0.3..0.0), 0.1]).unwrap();
        let q = LinearGaussianPolicy::new(2, 2, vec![0.0; 4], vec![0.0, 0.0]).unwrap();
        let h = 7;
        let t = Trajectory {
            states: (0..=h).map(|_| vec![rng.random(), rng.random()]).collect(),
            actions: vec![vec![0.0, 0.0]; h],
            rewards: vec![0.0; h],
            done: false,
        };
        let d2 = exp_renyi_divergence(2.0, &p.action_distribution(&[0.0, 0.0]).unwrap(), &q.action_distribution(&[0.0, 0.0]).unwrap()).unwrap();
        assert_abs_diff_eq!(estimate_traj_renyi(&[t.clone(), t], &p, &q).unwrap(), d2.powi(h as i32), epsilon = 1e-10);

        let bad = LinearGaussianPolicy::new(1, 1, vec![-0.3], vec![1.0]).unwrap();
        assert!(estimate_traj_renyi(trajs, &bad, &policy).is_err());
    }

    #[test]
    fn sup_bound_examples() {
        let p = LinearGaussianPolicy::new(2, 1, vec![0.5, -0.2], vec![-0.1]).unwrap();
        assert_eq!(sup_renyi_bound(&p, &p, 20, &[-1.0, -1.0], &[1.0, 1.0]), 1.0);
        let q = LinearGaussianPolicy::new(2, 1, vec![0.5, -0.2], vec![0.0]).unwrap();
        let d2 = exp_renyi_divergence(2.0, &p.action_distribution(&[0.0, 0.0]).unwrap(), &q.action_distribution(&[0.0, 0.0]).unwrap()).unwrap();
        assert_abs_diff_eq!(sup_renyi_bound(&p, &q, 10, &[-1.0, -1.0], &[1.0, 1.0]), d2.powi(10), epsilon = 1e-10);
        assert_abs_diff_eq!(
            sup_renyi_bound(&p, &q, 10, &[f64::NEG_INFINITY; 2], &[f64::INFINITY; 2]),
            d2.powi(10),
            epsilon = 1e-10
        );
        let r = LinearGaussianPolicy::new(2, 1, vec![0.6, -0.2], vec![0.0]).unwrap();
        assert_eq!(sup_renyi_bound(&r, &q, 10, &[f64::NEG_INFINITY; 2], &[f64::INFINITY; 2]), f64::INFINITY);
        let wide = LinearGaussianPolicy::new(2, 1, vec![0.5, -0.2], vec![1.0]).unwrap();
        assert_eq!(sup_renyi_bound(&wide, &q, 1, &[-1.0; 2], &[1.0; 2]), f64::INFINITY);
    }

    #[test]
    fn sup_bound_dominates_estimate() {
        let mut rng = ChaCha8Rng::seed_from_u64(9);
        let env = Lqg::default();
        let spec = env.spec();
        for _ in 0..10 {
            let (batch, policy) = lqg_batch(rng.random(), 20, 10);
            let target = LinearGaussianPolicy::new(1, 1, vec![-0.3 + rng.random_range(-0.2..0.2)], vec![-0.2 + rng.random_range(-0.2..0.2)]).unwrap();
            let est = estimate_traj_renyi(batch.trajectories(), &target, &policy).unwrap();
            let sup = sup_renyi_bound(&target, &policy, 10, &spec.state_low, &spec.state_high);
            assert!(sup >= est * (1.0 - 1e-12), "{sup} < {est}");
        }
    }

    #[test]
    fn reinforce_identity_on_policy() {
        let (batch, policy) = lqg_batch(10, 25, 8);
        let cfg = SurrogateConfig { lambda: 0.0, estimator: WeightEstimator::Is, penalty: PenaltyKind::Exact };
        let g = surrogate_gradient(&batch, Candidate::Action(&policy), &cfg).unwrap();
        let mut expected = vec![0.0; 2];
        for (t, r) in batch.trajectories().iter().zip(batch.returns()) {
            axpy(&mut expected, r / 25.0, &crate::policies::traj_score(t, &policy));
        }
        for (a, b) in g.iter().zip(&expected) {
            assert_abs_diff_eq!(a, b, epsilon = 1e-10 * (1.0 + b.abs()));
        }
    }

    #[test]
    fn parameter_penalty_gradient_vanishes_on_policy() {
        let (batch, hyper) = hyper_batch(11, 10);
        let with = SurrogateConfig { lambda: 3.0, estimator: WeightEstimator::Is, penalty: PenaltyKind::Exact };
        let without = SurrogateConfig { lambda: 0.0, ..with };
        let g1 = surrogate_gradient(&batch, Candidate::Parameter(&hyper), &with).unwrap();
        let g0 = surrogate_gradient(&batch, Candidate::Parameter(&hyper), &without).unwrap();
        for (a, b) in g1.iter().zip(&g0) {
            assert_abs_diff_eq!(a, b, epsilon = 1e-12);
        }
    }

    /// Central differences with a step scaled per coordinate; returns the
    /// norm-relative error between analytic and numeric gradients.
    fn gradient_error(batch: &Batch, params: &[f64], cfg: &SurrogateConfig) -> f64 {
        let value = |x: &[f64]| match batch.behavioral() {
            Behavioral::Action(p) => evaluate(batch, Candidate::Action(&p.with_params(x).unwrap()), cfg).unwrap().value,
            Behavioral::Parameter(h) => evaluate(batch, Candidate::Parameter(&h.with_params(x).unwrap()), cfg).unwrap().value,
        };
        let analytic = match batch.behavioral() {
            Behavioral::Action(p) => surrogate_gradient(batch, Candidate::Action(&p.with_params(params).unwrap()), cfg).unwrap(),
            Behavioral::Parameter(h) => surrogate_gradient(batch, Candidate::Parameter(&h.with_params(params).unwrap()), cfg).unwrap(),
        };
        let h = 1e-6;
        let numeric: Vec<f64> = (0..params.len())
            .map(|i| {
                let mut a = params.to_vec();
                let mut b = params.to_vec();
                a[i] += h;
                b[i] -= h;
                (value(&a) - value(&b)) / (2.0 * h)
            })
            .collect();
        let num: f64 = analytic.iter().zip(&numeric).map(|(a, b)| (a - b).powi(2)).sum::<f64>().sqrt();
        let den: f64 = numeric.iter().map(|b| b * b).sum::<f64>().sqrt();
        num / den
    }

    #[test]
    fn gradients_match_finite_differences() {
        let mut rng = ChaCha8Rng::seed_from_u64(12);
        for estimator in [WeightEstimator::Is, WeightEstimator::Sn] {
            for penalty in [PenaltyKind::Exact, PenaltyKind::Ess] {
                let cfg = SurrogateConfig { lambda: 0.7, estimator, penalty };
                let (batch, policy) = lqg_batch(rng.random(), 8, 5);
                let params: Vec<f64> = policy.params().iter().map(|p| p + rng.random_range(-0.1..0.1)).collect();
                assert!(gradient_error(&batch, &params, &cfg) < 1e-5);
                let (batch, hyper) = hyper_batch(rng.random(), 8);
                let params: Vec<f64> = hyper.params().iter().map(|p| p + rng.random_range(-0.1..0.1)).collect();
                assert!(gradient_error(&batch, &params, &cfg) < 1e-5);
            }
        }
    }

    #[test]
    fn value_never_exceeds_is_term() {
        let mut rng = ChaCha8Rng::seed_from_u64(13);
        let (batch, policy) = lqg_batch(14, 12, 6);
        for _ in 0..20 {
            let params: Vec<f64> = policy.params().iter().map(|p| p + rng.random_range(-0.3..0.3)).collect();
            let target = policy.with_params(&params).unwrap();
            for penalty in [PenaltyKind::Exact, PenaltyKind::Ess] {
                let cfg = SurrogateConfig { lambda: 1.0, estimator: WeightEstimator::Is, penalty };
                let eval = evaluate(&batch, Candidate::Action(&target), &cfg).unwrap();
                if eval.is_feasible() {
                    assert!(eval.value <= eval.is_term);
                    assert!(eval.d2_hat >= 1.0 - 1e-12);
                }
            }
        }
    }
}
