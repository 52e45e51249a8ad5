//! Online/offline POIS loops and the parabolic line search.
//!
//! Each online iteration collects a fresh batch with the current parameters,
//! fixes `λ` from `δ` and the batch's empirical return range, then runs up to
//! `max_offline_iterations` (natural) gradient steps on the surrogate, each
//! sized by the line search.

use log::warn;
use nalgebra::{DMatrix, DVector};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use thiserror::Error;

use crate::envs::{collect_per_actor, collect_trajectories, EnvError, Environment};
use crate::estimators::{lambda_from_delta, BoundConfig, EstimatorError};
use crate::policies::{estimated_fim, exact_hyper_fim, DeterministicLinearPolicy, GaussianHyperpolicy, LinearGaussianPolicy, PolicyError};
use crate::surrogate::{evaluate, evaluate_with_gradient, Batch, Behavioral, Candidate, PenaltyKind, SurrogateConfig, SurrogateError, SurrogateEval, WeightEstimator};

const FIM_RIDGE: f64 = 1e-6;

#[derive(Debug, Error)]
pub enum OptimizerError {
    #[error("invalid optimizer configuration: {0}")]
    Config(&'static str),
    #[error("environment failure at online iteration {iteration}: {source}")]
    Env { iteration: usize, source: EnvError },
    #[error("surrogate failure at online iteration {iteration}: {source}")]
    Surrogate { iteration: usize, source: SurrogateError },
    #[error(transparent)]
    Policy(#[from] PolicyError),
    #[error(transparent)]
    Estimator(#[from] EstimatorError),
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct LineSearchConfig {
    pub tol_dl: f64,
    pub max_attempts: usize,
    pub eta: f64,
}

impl Default for LineSearchConfig {
    fn default() -> Self {
        Self { tol_dl: 1e-4, max_attempts: 30, eta: 2.0 }
    }
}

impl LineSearchConfig {
    pub fn validate(&self) -> Result<(), OptimizerError> {
        if !(self.tol_dl > 0.0) {
            return Err(OptimizerError::Config("line-search tolerance must be positive"));
        }
        if self.max_attempts == 0 {
            return Err(OptimizerError::Config("line search needs at least one attempt"));
        }
        if !(self.eta > 1.0) || !self.eta.is_finite() {
            return Err(OptimizerError::Config("eta must be a finite number greater than 1"));
        }
        Ok(())
    }
}

/// Step-size update of the line search, in units of `ε = α ‖g‖²_{G⁻¹}`.
pub fn next_epsilon(eps: f64, delta_l: f64, eta: f64) -> f64 {
    if !delta_l.is_finite() {
        // Rejected probe (−∞): back off geometrically.
        eps / (2.0 * eta)
    } else if delta_l > eps * (2.0 * eta - 1.0) / (2.0 * eta) {
        eta * eps
    } else {
        eps * eps / (2.0 * (eps - delta_l))
    }
}

/// Parabolic line search along a fixed ascent direction.
///
/// `loss(α)` must return `L(θ₀ + α d) − L(θ₀)` (`−∞` for rejected points)
/// and `grad_metric_norm_sq` is the directional slope `‖g‖²_{G⁻¹}`. Returns
/// `(α*, ΔL(α*))`; `α* = 0` when no probe strictly improved the objective.
pub fn parabolic_line_search<F: FnMut(f64) -> f64>(mut loss: F, grad_metric_norm_sq: f64, cfg: &LineSearchConfig) -> (f64, f64) {
    if !(grad_metric_norm_sq > 0.0) || !grad_metric_norm_sq.is_finite() {
        return (0.0, 0.0);
    }
    let mut eps = 1.0;
    let mut prev_alpha = 0.0;
    let mut prev_dl = f64::NEG_INFINITY;
    for _ in 0..cfg.max_attempts {
        let alpha = eps / grad_metric_norm_sq;
        let dl = loss(alpha);
        let dl = if dl.is_nan() { f64::NEG_INFINITY } else { dl };
        if dl < prev_dl + cfg.tol_dl {
            break;
        }
        prev_alpha = alpha;
        prev_dl = dl;
        eps = next_epsilon(eps, dl, cfg.eta);
    }
    if prev_dl > 0.0 {
        (prev_alpha, prev_dl)
    } else {
        (0.0, 0.0)
    }
}

/// How `‖f‖∞` entering `λ` is obtained.
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum FInfMode {
    /// `max_i |R(τ_i)|` over the current batch.
    Empirical,
    /// `R_max (1 − γ^H)/(1 − γ)` from the environment's declared reward bound.
    Theoretical,
}

#[derive(Debug, Clone, PartialEq)]
pub struct OptimizerConfig {
    pub delta: f64,
    pub n_episodes: usize,
    pub horizon: usize,
    pub gamma: f64,
    pub online_iterations: usize,
    pub max_offline_iterations: usize,
    pub estimator: WeightEstimator,
    pub natural: bool,
    pub penalty: PenaltyKind,
    pub f_inf: FInfMode,
    pub seed: u64,
    pub line_search: LineSearchConfig,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Algorithm {
    ActionBased,
    ParameterBased,
}

impl OptimizerConfig {
    /// Defaults for linear policies: IS and plain gradient for the
    /// action-based variant, SN and natural gradient for the parameter-based
    /// one; horizon and discount come from the environment.
    pub fn defaults(env: &dyn Environment, algorithm: Algorithm) -> Self {
        let spec = env.spec();
        let action_based = algorithm == Algorithm::ActionBased;
        Self {
            delta: 0.4,
            n_episodes: 100,
            horizon: spec.horizon,
            gamma: spec.gamma,
            online_iterations: 500,
            max_offline_iterations: 10,
            estimator: if action_based { WeightEstimator::Is } else { WeightEstimator::Sn },
            natural: !action_based,
            penalty: PenaltyKind::Exact,
            f_inf: FInfMode::Empirical,
            seed: 0,
            line_search: LineSearchConfig::default(),
        }
    }

    pub fn validate(&self) -> Result<(), OptimizerError> {
        if !(self.delta > 0.0 && self.delta <= 1.0) {
            return Err(OptimizerError::Config("delta must lie in (0, 1]"));
        }
        if self.n_episodes == 0 || self.horizon == 0 || self.online_iterations == 0 {
            return Err(OptimizerError::Config("episodes, horizon and iterations must be positive"));
        }
        if !(0.0..=1.0).contains(&self.gamma) {
            return Err(OptimizerError::Config("gamma must lie in [0, 1]"));
        }
        self.line_search.validate()
    }
}

/// One accepted point of an offline optimisation (the first is the start).
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct OfflineStep {
    pub eval: SurrogateEval,
    /// Step size `α*` that produced this point (0 for the start).
    pub step_size: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct OfflineResult {
    pub params: Vec<f64>,
    pub lambda: f64,
    pub trace: Vec<OfflineStep>,
}

impl OfflineResult {
    pub fn iterations(&self) -> usize {
        self.trace.len() - 1
    }
}

/// `λ` for a batch: `‖f‖∞ sqrt((1 − δ)/δ)` with `‖f‖∞` per `cfg.f_inf`.
pub fn batch_lambda(batch: &Batch, cfg: &OptimizerConfig, return_bound: f64) -> Result<f64, EstimatorError> {
    let f_inf = match cfg.f_inf {
        FInfMode::Empirical => batch.max_abs_return(),
        FInfMode::Theoretical => return_bound,
    };
    Ok(lambda_from_delta(&BoundConfig::new(cfg.delta, f_inf, batch.len())?))
}

fn eval_at(batch: &Batch, params: &[f64], surrogate: &SurrogateConfig) -> Result<SurrogateEval, SurrogateError> {
    match batch.behavioral() {
        Behavioral::Action(p) => match p.with_params(params) {
            Ok(target) => evaluate(batch, Candidate::Action(&target), surrogate),
            Err(PolicyError::NonFinite) => Ok(SurrogateEval::rejected()),
            Err(e) => Err(e.into()),
        },
        Behavioral::Parameter(h) => match h.with_params(params) {
            Ok(target) => evaluate(batch, Candidate::Parameter(&target), surrogate),
            Err(PolicyError::NonFinite) | Err(PolicyError::Gaussian(_)) => Ok(SurrogateEval::rejected()),
            Err(e) => Err(e.into()),
        },
    }
}

fn eval_grad_at(batch: &Batch, params: &[f64], surrogate: &SurrogateConfig) -> Result<(SurrogateEval, Vec<f64>), SurrogateError> {
    match batch.behavioral() {
        Behavioral::Action(p) => evaluate_with_gradient(batch, Candidate::Action(&p.with_params(params)?), surrogate),
        Behavioral::Parameter(h) => evaluate_with_gradient(batch, Candidate::Parameter(&h.with_params(params)?), surrogate),
    }
}

/// Ascent direction `G⁻¹ g` and `‖g‖²_{G⁻¹}`.
fn ascent_direction(batch: &Batch, params: &[f64], grad: &[f64], cfg: &OptimizerConfig) -> Result<(Vec<f64>, f64), SurrogateError> {
    let plain = || {
        let g2 = grad.iter().map(|g| g * g).sum();
        (grad.to_vec(), g2)
    };
    if !cfg.natural {
        return Ok(plain());
    }
    match batch.behavioral() {
        Behavioral::Parameter(h) => {
            let fim = exact_hyper_fim(&h.with_params(params)?);
            let dir: Vec<f64> = grad.iter().zip(&fim).map(|(g, f)| g / f).collect();
            let g2 = dir.iter().zip(grad).map(|(d, g)| d * g).sum();
            Ok((dir, g2))
        }
        Behavioral::Action(behavioral) => {
            let target = behavioral.with_params(params)?;
            let fim = estimated_fim(batch.trajectories(), &target, behavioral, cfg.estimator == WeightEstimator::Sn)?;
            let p = fim.nrows();
            let regularized = fim + DMatrix::identity(p, p) * FIM_RIDGE;
            match regularized.cholesky() {
                Some(chol) => {
                    let dir = chol.solve(&DVector::from_column_slice(grad));
                    if dir.iter().all(|d| d.is_finite()) {
                        let g2 = dir.iter().zip(grad).map(|(d, g)| d * g).sum();
                        return Ok((dir.as_slice().to_vec(), g2));
                    }
                    warn!("natural-gradient solve produced non-finite values; using the plain gradient");
                    Ok(plain())
                }
                None => {
                    warn!("estimated Fisher matrix is not positive definite; using the plain gradient");
                    Ok(plain())
                }
            }
        }
    }
}

/// Maximises the surrogate on a fixed batch starting from the behavioral
/// parameters. The surrogate value is non-decreasing along the trace.
pub fn offline_optimize(batch: &Batch, start_params: &[f64], lambda: f64, cfg: &OptimizerConfig) -> Result<OfflineResult, SurrogateError> {
    let surrogate = SurrogateConfig { lambda, estimator: cfg.estimator, penalty: cfg.penalty };
    let mut params = start_params.to_vec();
    let (mut eval, mut grad) = eval_grad_at(batch, &params, &surrogate)?;
    let mut trace = vec![OfflineStep { eval, step_size: 0.0 }];
    for _ in 0..cfg.max_offline_iterations {
        let (dir, g2) = ascent_direction(batch, &params, &grad, cfg)?;
        if !(g2 > 0.0) || !g2.is_finite() {
            break;
        }
        let base = eval.value;
        let mut probe_error = None;
        let (alpha, _) = parabolic_line_search(
            |alpha| {
                let moved: Vec<f64> = params.iter().zip(&dir).map(|(p, d)| p + alpha * d).collect();
                match eval_at(batch, &moved, &surrogate) {
                    Ok(e) => e.value - base,
                    Err(e) => {
                        probe_error.get_or_insert(e);
                        f64::NEG_INFINITY
                    }
                }
            },
            g2,
            &cfg.line_search,
        );
        if let Some(e) = probe_error {
            if !matches!(e, SurrogateError::Estimator(_) | SurrogateError::Infeasible) {
                return Err(e);
            }
        }
        if alpha == 0.0 {
            break;
        }
        let moved: Vec<f64> = params.iter().zip(&dir).map(|(p, d)| p + alpha * d).collect();
        match eval_grad_at(batch, &moved, &surrogate) {
            Ok((e, g)) => {
                params = moved;
                eval = e;
                grad = g;
                trace.push(OfflineStep { eval, step_size: alpha });
            }
            Err(SurrogateError::Infeasible) => break,
            Err(e) => return Err(e),
        }
    }
    Ok(OfflineResult { params, lambda, trace })
}

/// Per-online-iteration diagnostics.
#[derive(Debug, Clone, PartialEq)]
pub struct IterationRecord {
    pub iteration: usize,
    pub episodes_cum: usize,
    /// Mean discounted return of the batch collected this iteration.
    pub avg_return: f64,
    /// ESS, weight variance and divergence at the parameters adopted for the
    /// next iteration, measured on this iteration's batch.
    pub ess_hat: f64,
    pub weight_var: f64,
    pub d2_hat: f64,
    pub bound_before: f64,
    pub bound_after: f64,
    pub policy_sigma_mean: f64,
    pub offline_iters: usize,
    pub step_size_last: f64,
    pub lambda: f64,
    /// ESS and divergence at the start of the offline phase (on-policy).
    pub ess_start: f64,
    pub d2_start: f64,
    /// Surrogate values along the accepted offline iterates.
    pub offline_values: Vec<f64>,
}

fn record(iteration: usize, episodes_cum: usize, batch: &Batch, result: &OfflineResult, sigma_mean: f64) -> IterationRecord {
    let first = result.trace.first().expect("trace holds the start point").eval;
    let last = result.trace.last().expect("trace holds the start point");
    IterationRecord {
        iteration,
        episodes_cum,
        avg_return: batch.mean_return(),
        ess_hat: last.eval.ess_hat,
        weight_var: last.eval.weight_var,
        d2_hat: last.eval.d2_hat,
        bound_before: first.value,
        bound_after: last.eval.value,
        policy_sigma_mean: sigma_mean,
        offline_iters: result.iterations(),
        step_size_last: last.step_size,
        lambda: result.lambda,
        ess_start: first.ess_hat,
        d2_start: first.d2_hat,
        offline_values: result.trace.iter().map(|s| s.eval.value).collect(),
    }
}

/// Action-based POIS with a linear-Gaussian policy.
pub fn run_apois(env: &dyn Environment, cfg: &OptimizerConfig) -> Result<Vec<IterationRecord>, OptimizerError> {
    run_apois_from(env, cfg, None).map(|(records, _)| records)
}

/// As [`run_apois`], optionally from a given initial policy; also returns
/// the final policy.
pub fn run_apois_from(
    env: &dyn Environment,
    cfg: &OptimizerConfig,
    initial: Option<LinearGaussianPolicy>,
) -> Result<(Vec<IterationRecord>, LinearGaussianPolicy), OptimizerError> {
    cfg.validate()?;
    let spec = env.spec();
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    let mut policy = match initial {
        Some(p) => p,
        None => LinearGaussianPolicy::initial(spec.state_dim, spec.action_dim, &mut rng),
    };
    let return_bound = spec.return_bound(cfg.horizon, cfg.gamma);
    let mut records = Vec::with_capacity(cfg.online_iterations);
    for iteration in 0..cfg.online_iterations {
        let trajs = collect_trajectories(env, &policy, cfg.n_episodes, cfg.horizon, &mut rng)
            .map_err(|source| OptimizerError::Env { iteration, source })?;
        let batch = Batch::action_based(trajs, policy.clone(), cfg.gamma).map_err(|source| OptimizerError::Surrogate { iteration, source })?;
        debug_assert!(batch.max_abs_return() <= return_bound * (1.0 + 1e-9));
        let lambda = batch_lambda(&batch, cfg, return_bound)?;
        let result = offline_optimize(&batch, &policy.params(), lambda, cfg).map_err(|source| OptimizerError::Surrogate { iteration, source })?;
        policy = policy.with_params(&result.params)?;
        records.push(record(iteration, (iteration + 1) * cfg.n_episodes, &batch, &result, policy.sigma_mean()));
    }
    Ok((records, policy))
}

/// Parameter-based POIS with a Gaussian hyperpolicy over deterministic
/// linear policies.
pub fn run_ppois(env: &dyn Environment, cfg: &OptimizerConfig) -> Result<Vec<IterationRecord>, OptimizerError> {
    run_ppois_from(env, cfg, None).map(|(records, _)| records)
}

pub fn run_ppois_from(
    env: &dyn Environment,
    cfg: &OptimizerConfig,
    initial: Option<GaussianHyperpolicy>,
) -> Result<(Vec<IterationRecord>, GaussianHyperpolicy), OptimizerError> {
    cfg.validate()?;
    let spec = env.spec();
    let (sd, ad) = (spec.state_dim, spec.action_dim);
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    let mut hyper = match initial {
        Some(h) => h,
        None => GaussianHyperpolicy::initial(sd * ad, &mut rng),
    };
    let return_bound = spec.return_bound(cfg.horizon, cfg.gamma);
    let mut records = Vec::with_capacity(cfg.online_iterations);
    for iteration in 0..cfg.online_iterations {
        let thetas: Vec<Vec<f64>> = (0..cfg.n_episodes).map(|_| hyper.sample(&mut rng)).collect();
        let actors = thetas
            .iter()
            .map(|t| DeterministicLinearPolicy::new(sd, ad, t.clone()))
            .collect::<Result<Vec<_>, _>>()?;
        let trajs = collect_per_actor(env, &actors, cfg.horizon, &mut rng).map_err(|source| OptimizerError::Env { iteration, source })?;
        let batch = Batch::parameter_based(trajs, thetas, hyper.clone(), cfg.gamma).map_err(|source| OptimizerError::Surrogate { iteration, source })?;
        let lambda = batch_lambda(&batch, cfg, return_bound)?;
        let result = offline_optimize(&batch, &hyper.params(), lambda, cfg).map_err(|source| OptimizerError::Surrogate { iteration, source })?;
        hyper = hyper.with_params(&result.params)?;
        records.push(record(iteration, (iteration + 1) * cfg.n_episodes, &batch, &result, hyper.sigma_mean()));
    }
    Ok((records, hyper))
}
