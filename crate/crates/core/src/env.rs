//! Environment contract, wrappers and rollout primitives.

use std::collections::VecDeque;

use rand_distr::{Distribution as _, StandardNormal};
use rayon::prelude::*;

use crate::domain::{DomainDistribution, DomainParamSet};
use crate::error::{Error, Result};
use crate::rng::{SeedKey, Stream, StreamRng};

/// Result of one environment transition.
#[derive(Clone, Debug, PartialEq)]
pub struct Step {
    pub obs: Vec<f64>,
    pub reward: f64,
    pub done: bool,
}

/// A time-discrete simulated MDP instantiated for one domain.
///
/// `reset` takes the rollout's [`SeedKey`]; implementations draw initial
/// states from its [`Stream::InitState`] stream and wrappers take their own
/// streams from the same key, so two policies evaluated under the same key
/// see identical initial states and noise.
pub trait Env: Send {
    fn state_dim(&self) -> usize;
    fn action_dim(&self) -> usize;
    /// Episode length in steps.
    fn horizon(&self) -> usize;
    fn dt(&self) -> f64;
    /// Symmetric actuator limit applied to every action component.
    fn action_limit(&self) -> f64;
    fn reset(&mut self, seed: SeedKey) -> Vec<f64>;
    fn step(&mut self, action: &[f64]) -> Result<Step>;
}

impl<E: Env + ?Sized> Env for Box<E> {
    fn state_dim(&self) -> usize {
        (**self).state_dim()
    }
    fn action_dim(&self) -> usize {
        (**self).action_dim()
    }
    fn horizon(&self) -> usize {
        (**self).horizon()
    }
    fn dt(&self) -> f64 {
        (**self).dt()
    }
    fn action_limit(&self) -> f64 {
        (**self).action_limit()
    }
    fn reset(&mut self, seed: SeedKey) -> Vec<f64> {
        (**self).reset(seed)
    }
    fn step(&mut self, action: &[f64]) -> Result<Step> {
        (**self).step(action)
    }
}

/// Builds environments for sampled domains.
pub trait EnvFactory: Sync {
    fn distribution(&self) -> &DomainDistribution;
    fn make(&self, domain: &DomainParamSet) -> Result<Box<dyn Env>>;
}

/// Deterministic action map used for evaluation rollouts.
pub trait Policy: Sync {
    fn act(&self, obs: &[f64]) -> Result<Vec<f64>>;
}

#[derive(Clone, Debug, PartialEq)]
pub struct Trajectory {
    pub states: Vec<Vec<f64>>,
    pub actions: Vec<Vec<f64>>,
    pub rewards: Vec<f64>,
    /// Observation after the last step.
    pub final_obs: Vec<f64>,
    /// True when the episode ended by reaching the horizon.
    pub truncated: bool,
    pub seed: SeedKey,
}

impl Trajectory {
    pub fn len(&self) -> usize {
        self.rewards.len()
    }

    pub fn is_empty(&self) -> bool {
        self.rewards.is_empty()
    }
}

/// Σ_t γ^t r_t.
pub fn discounted_return(traj: &Trajectory, gamma: f64) -> Result<f64> {
    discounted_sum(&traj.rewards, gamma)
}

pub fn discounted_sum(rewards: &[f64], gamma: f64) -> Result<f64> {
    if rewards.is_empty() {
        return Err(Error::EmptyTrajectory);
    }
    let mut acc = 0.0;
    let mut discount = 1.0;
    for r in rewards {
        acc += discount * r;
        discount *= gamma;
    }
    Ok(acc)
}

pub(crate) fn clip_action(action: &mut [f64], limit: f64) -> Result<()> {
    for a in action.iter_mut() {
        if !a.is_finite() {
            return Err(Error::NonFinite("action"));
        }
        *a = a.clamp(-limit, limit);
    }
    Ok(())
}

/// Runs one deterministic episode of `policy` in `env`.
pub fn rollout<E: Env + ?Sized, P: Policy + ?Sized>(
    env: &mut E,
    policy: &P,
    seed: SeedKey,
) -> Result<Trajectory> {
    let limit = env.action_limit();
    let mut obs = env.reset(seed);
    let horizon = env.horizon();
    let mut traj = Trajectory {
        states: Vec::with_capacity(horizon),
        actions: Vec::with_capacity(horizon),
        rewards: Vec::with_capacity(horizon),
        final_obs: Vec::new(),
        truncated: false,
        seed,
    };
    for t in 0..horizon {
        let mut action = policy.act(&obs)?;
        clip_action(&mut action, limit)?;
        let step = env.step(&action)?;
        traj.states.push(std::mem::replace(&mut obs, step.obs));
        traj.actions.push(action);
        traj.rewards.push(step.reward);
        if step.done {
            traj.truncated = t + 1 == horizon;
            break;
        }
    }
    traj.final_obs = obs;
    Ok(traj)
}

/// Discounted return of each of `n` rollouts keyed `seed_base.child(j)`.
pub fn rollout_returns<P: Policy + ?Sized>(
    factory: &dyn EnvFactory,
    domain: &DomainParamSet,
    policy: &P,
    n: usize,
    seed_base: SeedKey,
    gamma: f64,
) -> Result<Vec<f64>> {
    (0..n as u64)
        .into_par_iter()
        .map(|j| {
            let mut env = factory.make(domain)?;
            let traj = rollout(&mut env, policy, seed_base.child(j))?;
            discounted_return(&traj, gamma)
        })
        .collect()
}

/// Mean discounted return over `n_j` rollouts in domain `domain`.
///
/// Rollout `j` is keyed `seed_base.child(j)`; the reduction is a fixed-order
/// sum, so the result does not depend on the thread count.
pub fn estimate_return<P: Policy + ?Sized>(
    factory: &dyn EnvFactory,
    domain: &DomainParamSet,
    policy: &P,
    n_j: usize,
    seed_base: SeedKey,
    gamma: f64,
) -> Result<f64> {
    if n_j == 0 {
        return Err(Error::InvalidArgument("n_J must be >= 1".into()));
    }
    let returns = rollout_returns(factory, domain, policy, n_j, seed_base, gamma)?;
    Ok(returns.iter().sum::<f64>() / n_j as f64)
}

/// Applies at step t the action commanded at step t − delay.
#[derive(Debug)]
pub struct ActionDelay<E> {
    inner: E,
    delay: usize,
    hold: Vec<f64>,
    queue: VecDeque<Vec<f64>>,
}

/// Wraps `env` with a FIFO action delay of `delay_steps`; the first
/// `delay_steps` applied actions are zero.
pub fn wrap_action_delay<E: Env>(env: E, delay_steps: usize) -> ActionDelay<E> {
    let hold = vec![0.0; env.action_dim()];
    ActionDelay {
        inner: env,
        delay: delay_steps,
        hold,
        queue: VecDeque::with_capacity(delay_steps + 1),
    }
}

impl<E> ActionDelay<E> {
    pub fn with_hold_action(mut self, hold: Vec<f64>) -> Self {
        self.hold = hold;
        self
    }

    pub fn delay(&self) -> usize {
        self.delay
    }

    pub fn inner(&self) -> &E {
        &self.inner
    }
}

impl<E: Env> Env for ActionDelay<E> {
    fn state_dim(&self) -> usize {
        self.inner.state_dim()
    }
    fn action_dim(&self) -> usize {
        self.inner.action_dim()
    }
    fn horizon(&self) -> usize {
        self.inner.horizon()
    }
    fn dt(&self) -> f64 {
        self.inner.dt()
    }
    fn action_limit(&self) -> f64 {
        self.inner.action_limit()
    }

    fn reset(&mut self, seed: SeedKey) -> Vec<f64> {
        self.queue.clear();
        for _ in 0..self.delay {
            self.queue.push_back(self.hold.clone());
        }
        self.inner.reset(seed)
    }

    fn step(&mut self, action: &[f64]) -> Result<Step> {
        if self.delay == 0 {
            return self.inner.step(action);
        }
        self.queue.push_back(action.to_vec());
        let applied = self.queue.pop_front().expect("queue holds delay + 1 entries");
        self.inner.step(&applied)
    }
}

/// Adds zero-mean Gaussian noise to observations; rewards stay noiseless.
#[derive(Debug)]
pub struct ObsNoise<E> {
    inner: E,
    stds: Vec<f64>,
    rng: StreamRng,
}

pub fn wrap_obs_noise<E: Env>(env: E, stds: Vec<f64>) -> Result<ObsNoise<E>> {
    if stds.len() != env.state_dim() {
        return Err(Error::DimensionMismatch {
            what: "observation noise",
            expected: env.state_dim(),
            got: stds.len(),
        });
    }
    if stds.iter().any(|s| !(s.is_finite() && *s >= 0.0)) {
        return Err(Error::InvalidArgument(
            "observation noise stds must be finite and >= 0".into(),
        ));
    }
    Ok(ObsNoise {
        inner: env,
        stds,
        rng: SeedKey::new(0).rng(Stream::ObsNoise),
    })
}

impl<E> ObsNoise<E> {
    fn corrupt(&mut self, mut obs: Vec<f64>) -> Vec<f64> {
        for (o, s) in obs.iter_mut().zip(&self.stds) {
            let z: f64 = StandardNormal.sample(&mut self.rng);
            if *s > 0.0 {
                *o += s * z;
            }
        }
        obs
    }
}

impl<E: Env> Env for ObsNoise<E> {
    fn state_dim(&self) -> usize {
        self.inner.state_dim()
    }
    fn action_dim(&self) -> usize {
        self.inner.action_dim()
    }
    fn horizon(&self) -> usize {
        self.inner.horizon()
    }
    fn dt(&self) -> f64 {
        self.inner.dt()
    }
    fn action_limit(&self) -> f64 {
        self.inner.action_limit()
    }

    fn reset(&mut self, seed: SeedKey) -> Vec<f64> {
        self.rng = seed.rng(Stream::ObsNoise);
        let obs = self.inner.reset(seed);
        self.corrupt(obs)
    }

    fn step(&mut self, action: &[f64]) -> Result<Step> {
        let mut step = self.inner.step(action)?;
        step.obs = self.corrupt(std::mem::take(&mut step.obs));
        Ok(step)
    }
}
