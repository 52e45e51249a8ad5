//! Small continuous-control environments and episode collection.
//!
//! Every environment is deterministic given `(state, action)`; randomness
//! comes only from the initial-state distribution and the acting policy, so
//! transition terms cancel exactly in trajectory importance weights.
//! Actions are clipped inside `step`; the policy density used for weights is
//! always the pre-clip one.

use std::f64::consts::PI;
use std::fmt;
use std::str::FromStr;

use rand::{Rng, RngCore, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use thiserror::Error;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum EnvError {
    #[error("expected a {what} of dimension {expected}, got {got}")]
    DimensionMismatch { what: &'static str, expected: usize, got: usize },
    #[error("non-finite {0} passed to step")]
    NonFinite(&'static str),
    #[error("unknown environment `{0}` (expected lqg, cartpole, mountaincar or pendulum)")]
    UnknownEnv(String),
    #[error("horizon must be at least 1")]
    ZeroHorizon,
}

/// Static description of an environment.
#[derive(Debug, Clone, PartialEq)]
pub struct EnvSpec {
    pub name: &'static str,
    pub state_dim: usize,
    pub action_dim: usize,
    pub horizon: usize,
    pub gamma: f64,
    /// Bound on `|r(s, a)|`.
    pub r_max: f64,
    pub action_low: Vec<f64>,
    pub action_high: Vec<f64>,
    /// Box containing every reachable state; infinite where unbounded.
    pub state_low: Vec<f64>,
    pub state_high: Vec<f64>,
}

impl EnvSpec {
    /// `r_max (1 − γ^H) / (1 − γ)`, or `r_max · H` when `γ = 1`.
    pub fn return_bound(&self, horizon: usize, gamma: f64) -> f64 {
        if gamma == 1.0 {
            self.r_max * horizon as f64
        } else {
            self.r_max * (1.0 - gamma.powi(horizon as i32)) / (1.0 - gamma)
        }
    }

    fn clip_action(&self, action: &[f64]) -> Vec<f64> {
        action
            .iter()
            .zip(self.action_low.iter().zip(&self.action_high))
            .map(|(a, (lo, hi))| a.clamp(*lo, *hi))
            .collect()
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Step {
    pub next_state: Vec<f64>,
    pub reward: f64,
    pub done: bool,
}

/// One episode: `states` has one more entry than `actions` and `rewards`.
#[derive(Debug, Clone, PartialEq)]
pub struct Trajectory {
    pub states: Vec<Vec<f64>>,
    pub actions: Vec<Vec<f64>>,
    pub rewards: Vec<f64>,
    pub done: bool,
}

impl Trajectory {
    pub fn len(&self) -> usize {
        self.actions.len()
    }

    pub fn is_empty(&self) -> bool {
        self.actions.is_empty()
    }

    /// `(s_t, a_t)` pairs in order.
    pub fn steps(&self) -> impl Iterator<Item = (&[f64], &[f64])> {
        self.states
            .iter()
            .zip(&self.actions)
            .map(|(s, a)| (s.as_slice(), a.as_slice()))
    }
}

pub trait Environment: Send + Sync {
    fn spec(&self) -> &EnvSpec;
    fn reset(&self, rng: &mut dyn RngCore) -> Vec<f64>;
    fn step(&self, state: &[f64], action: &[f64]) -> Result<Step, EnvError>;
}

/// Anything that maps a state to an action, possibly at random.
pub trait Actor: Sync {
    fn act(&self, state: &[f64], rng: &mut dyn RngCore) -> Vec<f64>;
}

fn check_inputs(spec: &EnvSpec, state: &[f64], action: &[f64]) -> Result<(), EnvError> {
    if state.len() != spec.state_dim {
        return Err(EnvError::DimensionMismatch { what: "state", expected: spec.state_dim, got: state.len() });
    }
    if action.len() != spec.action_dim {
        return Err(EnvError::DimensionMismatch { what: "action", expected: spec.action_dim, got: action.len() });
    }
    if state.iter().any(|v| !v.is_finite()) {
        return Err(EnvError::NonFinite("state"));
    }
    if action.iter().any(|v| !v.is_finite()) {
        return Err(EnvError::NonFinite("action"));
    }
    Ok(())
}

/// Scalar linear-quadratic system `x' = clip(a x + b u)` with cost
/// `½(q x² + r u²)` and `x₀ ~ U[−w, w]`.
#[derive(Debug, Clone, PartialEq)]
pub struct Lqg {
    spec: EnvSpec,
    pub a: f64,
    pub b: f64,
    pub q: f64,
    pub r: f64,
    pub init_half_width: f64,
}

impl Default for Lqg {
    fn default() -> Self {
        Self::new(1.0, 1.0, 1.0, 1.0)
    }
}

impl Lqg {
    pub const STATE_LIMIT: f64 = 4.0;
    pub const ACTION_LIMIT: f64 = 2.0;

    pub fn new(a: f64, b: f64, q: f64, r: f64) -> Self {
        let (x, u) = (Self::STATE_LIMIT, Self::ACTION_LIMIT);
        Self {
            spec: EnvSpec {
                name: "lqg",
                state_dim: 1,
                action_dim: 1,
                horizon: 20,
                gamma: 0.99,
                r_max: 0.5 * (q.abs() * x * x + r.abs() * u * u),
                action_low: vec![-u],
                action_high: vec![u],
                state_low: vec![-x],
                state_high: vec![x],
            },
            a,
            b,
            q,
            r,
            init_half_width: 1.0,
        }
    }

    /// Riccati coefficients `P_0..P_H` with value `V_t(x) = −½ P_t x²`.
    pub fn riccati(&self, horizon: usize, gamma: f64) -> Vec<f64> {
        let mut p = vec![0.0; horizon + 1];
        for t in (0..horizon).rev() {
            let next = p[t + 1];
            let denom = self.r + gamma * self.b * self.b * next;
            let cross = gamma * self.a * self.b * next;
            p[t] = self.q + gamma * self.a * self.a * next - if denom > 0.0 { cross * cross / denom } else { 0.0 };
        }
        p
    }

    /// Optimal time-varying feedback gains `u_t = K_t x_t`.
    pub fn optimal_gains(&self, horizon: usize, gamma: f64) -> Vec<f64> {
        let p = self.riccati(horizon, gamma);
        (0..horizon)
            .map(|t| {
                let denom = self.r + gamma * self.b * self.b * p[t + 1];
                if denom > 0.0 {
                    -gamma * self.a * self.b * p[t + 1] / denom
                } else {
                    0.0
                }
            })
            .collect()
    }
}

impl Environment for Lqg {
    fn spec(&self) -> &EnvSpec {
        &self.spec
    }

    fn reset(&self, rng: &mut dyn RngCore) -> Vec<f64> {
        vec![rng.random_range(-self.init_half_width..=self.init_half_width)]
    }

    fn step(&self, state: &[f64], action: &[f64]) -> Result<Step, EnvError> {
        check_inputs(&self.spec, state, action)?;
        let u = self.spec.clip_action(action)[0];
        let x = state[0];
        let next = (self.a * x + self.b * u).clamp(-Self::STATE_LIMIT, Self::STATE_LIMIT);
        Ok(Step {
            next_state: vec![next],
            reward: -0.5 * (self.q * x * x + self.r * u * u),
            done: false,
        })
    }
}

/// Expected optimal discounted return of the unconstrained LQ problem from
/// `x₀ ~ U[−w, w]`, i.e. `−½ P_0 E[x₀²]`.
pub fn lqg_optimal_return(env: &Lqg, horizon: usize, gamma: f64) -> f64 {
    let p0 = env.riccati(horizon, gamma)[0];
    -0.5 * p0 * env.init_half_width * env.init_half_width / 3.0
}

/// Cart-pole balancing with a continuous force, Euler-integrated.
#[derive(Debug, Clone, PartialEq)]
pub struct CartPole {
    spec: EnvSpec,
}

impl Default for CartPole {
    fn default() -> Self {
        Self {
            spec: EnvSpec {
                name: "cartpole",
                state_dim: 4,
                action_dim: 1,
                horizon: 500,
                gamma: 1.0,
                r_max: 10.0,
                action_low: vec![-1.0],
                action_high: vec![1.0],
                state_low: vec![f64::NEG_INFINITY; 4],
                state_high: vec![f64::INFINITY; 4],
            },
        }
    }
}

impl CartPole {
    const GRAVITY: f64 = 9.8;
    const CART_MASS: f64 = 1.0;
    const POLE_MASS: f64 = 0.1;
    const HALF_LENGTH: f64 = 0.5;
    const FORCE_SCALE: f64 = 10.0;
    const DT: f64 = 0.02;
    const X_LIMIT: f64 = 2.4;
    const THETA_LIMIT: f64 = 0.2;
}

impl Environment for CartPole {
    fn spec(&self) -> &EnvSpec {
        &self.spec
    }

    fn reset(&self, rng: &mut dyn RngCore) -> Vec<f64> {
        (0..4).map(|_| rng.random_range(-0.05..=0.05)).collect()
    }

    fn step(&self, state: &[f64], action: &[f64]) -> Result<Step, EnvError> {
        check_inputs(&self.spec, state, action)?;
        let u = self.spec.clip_action(action)[0];
        let (x, x_dot, theta, theta_dot) = (state[0], state[1], state[2], state[3]);
        let force = Self::FORCE_SCALE * u;
        let total_mass = Self::CART_MASS + Self::POLE_MASS;
        let pole_moment = Self::POLE_MASS * Self::HALF_LENGTH;
        let (sin, cos) = theta.sin_cos();
        let temp = (force + pole_moment * theta_dot * theta_dot * sin) / total_mass;
        let theta_acc = (Self::GRAVITY * sin - cos * temp)
            / (Self::HALF_LENGTH * (4.0 / 3.0 - Self::POLE_MASS * cos * cos / total_mass));
        let x_acc = temp - pole_moment * theta_acc * cos / total_mass;
        let next = vec![
            x + Self::DT * x_dot,
            x_dot + Self::DT * x_acc,
            theta + Self::DT * theta_dot,
            theta_dot + Self::DT * theta_acc,
        ];
        let done = next[0].abs() > Self::X_LIMIT || next[2].abs() > Self::THETA_LIMIT;
        Ok(Step {
            reward: 10.0 - (1.0 - theta.cos()) - 1e-5 * u * u,
            next_state: next,
            done,
        })
    }
}

/// Continuous mountain car: −1 per step until the car reaches the hilltop.
#[derive(Debug, Clone, PartialEq)]
pub struct MountainCar {
    spec: EnvSpec,
}

impl Default for MountainCar {
    fn default() -> Self {
        Self {
            spec: EnvSpec {
                name: "mountaincar",
                state_dim: 2,
                action_dim: 1,
                horizon: 500,
                gamma: 1.0,
                r_max: 1.0,
                action_low: vec![-1.0],
                action_high: vec![1.0],
                state_low: vec![Self::MIN_POSITION, -Self::MAX_SPEED],
                state_high: vec![Self::MAX_POSITION, Self::MAX_SPEED],
            },
        }
    }
}

impl MountainCar {
    const MIN_POSITION: f64 = -1.2;
    const MAX_POSITION: f64 = 0.6;
    const MAX_SPEED: f64 = 0.07;
    pub const GOAL_POSITION: f64 = 0.45;
    const POWER: f64 = 0.0015;
}

impl Environment for MountainCar {
    fn spec(&self) -> &EnvSpec {
        &self.spec
    }

    fn reset(&self, rng: &mut dyn RngCore) -> Vec<f64> {
        vec![rng.random_range(-0.6..=-0.4), 0.0]
    }

    fn step(&self, state: &[f64], action: &[f64]) -> Result<Step, EnvError> {
        check_inputs(&self.spec, state, action)?;
        let u = self.spec.clip_action(action)[0];
        let (pos, vel) = (state[0], state[1]);
        let mut vel = (vel + u * Self::POWER - 0.0025 * (3.0 * pos).cos()).clamp(-Self::MAX_SPEED, Self::MAX_SPEED);
        let pos = (pos + vel).clamp(Self::MIN_POSITION, Self::MAX_POSITION);
        if pos == Self::MIN_POSITION && vel < 0.0 {
            vel = 0.0;
        }
        Ok(Step {
            next_state: vec![pos, vel],
            reward: -1.0,
            done: pos >= Self::GOAL_POSITION,
        })
    }
}

/// Inverted pendulum started near the upright position (`θ = 0`), with a
/// quadratic penalty on angle, angular velocity and torque.
#[derive(Debug, Clone, PartialEq)]
pub struct Pendulum {
    spec: EnvSpec,
}

impl Default for Pendulum {
    fn default() -> Self {
        let r_max = PI * PI + 0.1 * Self::MAX_SPEED * Self::MAX_SPEED + 0.001 * Self::MAX_TORQUE * Self::MAX_TORQUE;
        Self {
            spec: EnvSpec {
                name: "pendulum",
                state_dim: 2,
                action_dim: 1,
                horizon: 500,
                gamma: 1.0,
                r_max,
                action_low: vec![-Self::MAX_TORQUE],
                action_high: vec![Self::MAX_TORQUE],
                state_low: vec![-PI, -Self::MAX_SPEED],
                state_high: vec![PI, Self::MAX_SPEED],
            },
        }
    }
}

impl Pendulum {
    const MAX_SPEED: f64 = 8.0;
    const MAX_TORQUE: f64 = 2.0;
    const DT: f64 = 0.05;
    const GRAVITY: f64 = 10.0;
}

fn wrap_angle(theta: f64) -> f64 {
    (theta + PI).rem_euclid(2.0 * PI) - PI
}

impl Environment for Pendulum {
    fn spec(&self) -> &EnvSpec {
        &self.spec
    }

    fn reset(&self, rng: &mut dyn RngCore) -> Vec<f64> {
        vec![rng.random_range(-0.1..=0.1), rng.random_range(-0.1..=0.1)]
    }

    fn step(&self, state: &[f64], action: &[f64]) -> Result<Step, EnvError> {
        check_inputs(&self.spec, state, action)?;
        let u = self.spec.clip_action(action)[0];
        let (theta, theta_dot) = (state[0], state[1]);
        let reward = -(theta * theta + 0.1 * theta_dot * theta_dot + 0.001 * u * u);
        // Unit mass and length.
        let theta_dot = (theta_dot + (1.5 * Self::GRAVITY * theta.sin() + 3.0 * u) * Self::DT)
            .clamp(-Self::MAX_SPEED, Self::MAX_SPEED);
        let theta = wrap_angle(theta + theta_dot * Self::DT);
        Ok(Step {
            next_state: vec![theta, theta_dot],
            reward,
            done: false,
        })
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum EnvKind {
    Lqg,
    CartPole,
    MountainCar,
    Pendulum,
}

impl EnvKind {
    pub fn build(self) -> Box<dyn Environment> {
        match self {
            EnvKind::Lqg => Box::new(Lqg::default()),
            EnvKind::CartPole => Box::new(CartPole::default()),
            EnvKind::MountainCar => Box::new(MountainCar::default()),
            EnvKind::Pendulum => Box::new(Pendulum::default()),
        }
    }

    pub fn name(self) -> &'static str {
        match self {
            EnvKind::Lqg => "lqg",
            EnvKind::CartPole => "cartpole",
            EnvKind::MountainCar => "mountaincar",
            EnvKind::Pendulum => "pendulum",
        }
    }
}

impl fmt::Display for EnvKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for EnvKind {
    type Err = EnvError;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s {
            "lqg" => Ok(EnvKind::Lqg),
            "cartpole" => Ok(EnvKind::CartPole),
            "mountaincar" => Ok(EnvKind::MountainCar),
            "pendulum" => Ok(EnvKind::Pendulum),
            other => Err(EnvError::UnknownEnv(other.to_string())),
        }
    }
}

/// Runs one episode of at most `horizon` steps.
pub fn rollout(env: &dyn Environment, actor: &dyn Actor, horizon: usize, rng: &mut dyn RngCore) -> Result<Trajectory, EnvError> {
    if horizon == 0 {
        return Err(EnvError::ZeroHorizon);
    }
    let mut state = env.reset(rng);
    let mut traj = Trajectory {
        states: Vec::with_capacity(horizon + 1),
        actions: Vec::with_capacity(horizon),
        rewards: Vec::with_capacity(horizon),
        done: false,
    };
    for _ in 0..horizon {
        let action = actor.act(&state, rng);
        let step = env.step(&state, &action)?;
        debug_assert!(step.reward.abs() <= env.spec().r_max * (1.0 + 1e-12));
        traj.states.push(std::mem::replace(&mut state, step.next_state));
        traj.actions.push(action);
        traj.rewards.push(step.reward);
        if step.done {
            traj.done = true;
            break;
        }
    }
    traj.states.push(state);
    Ok(traj)
}

/// Collects `n` independent episodes with a shared actor. Episode `i` uses
/// its own ChaCha stream derived from one draw of `rng`, so the result does
/// not depend on how rayon schedules the episodes.
pub fn collect_trajectories(
    env: &dyn Environment,
    actor: &dyn Actor,
    n: usize,
    horizon: usize,
    rng: &mut dyn RngCore,
) -> Result<Vec<Trajectory>, EnvError> {
    collect_indexed(env, n, horizon, rng, |_| actor)
}

/// Collects one episode per actor, in order.
pub fn collect_per_actor<A: Actor>(
    env: &dyn Environment,
    actors: &[A],
    horizon: usize,
    rng: &mut dyn RngCore,
) -> Result<Vec<Trajectory>, EnvError> {
    collect_indexed(env, actors.len(), horizon, rng, |i| &actors[i] as &dyn Actor)
}

fn collect_indexed<'a, F>(env: &dyn Environment, n: usize, horizon: usize, rng: &mut dyn RngCore, actor_for: F) -> Result<Vec<Trajectory>, EnvError>
where
    F: Sync + Fn(usize) -> &'a dyn Actor,
{
    let base_seed = rng.next_u64();
    (0..n)
        .into_par_iter()
        .map(|i| {
            let mut episode_rng = ChaCha8Rng::seed_from_u64(base_seed);
            episode_rng.set_stream(i as u64);
            rollout(env, actor_for(i), horizon, &mut episode_rng)
        })
        .collect()
}
