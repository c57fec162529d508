//! Clipped-surrogate policy gradient with a separate value network,
//! generalized advantage estimation and Adam updates.

use rayon::prelude::*;

use super::epopt::epopt_filter;
use super::policy::{gaussian_log_prob, Architecture, Mlp, PolicyParams};
use super::{PolOptSpec, PolOptTraceRow};
use crate::domain::DomainParamSet;
use crate::env::{clip_action, discounted_sum, EnvFactory};
use crate::error::{Error, Result};
use crate::rng::{SeedKey, Stream};
use crate::stats::{mean, std_dev};

/// One trajectory of a batch, tagged with the index of its domain.
#[derive(Clone, Debug, PartialEq)]
pub struct BatchTrajectory {
    pub domain: usize,
    pub rollout: usize,
    pub obs: Vec<Vec<f64>>,
    /// Sampled actions before clipping to the actuator box.
    pub actions: Vec<Vec<f64>>,
    pub rewards: Vec<f64>,
    pub final_obs: Vec<f64>,
    pub discounted_return: f64,
}

#[derive(Clone, Debug, PartialEq)]
pub struct RolloutBatch {
    pub trajectories: Vec<BatchTrajectory>,
}

impl RolloutBatch {
    pub fn returns(&self) -> Vec<f64> {
        self.trajectories.iter().map(|t| t.discounted_return).collect()
    }

    pub fn n_steps(&self) -> usize {
        self.trajectories.iter().map(|t| t.rewards.len()).sum()
    }
}

/// Runs `n_tau` rollouts in each domain. Rollout `(i, j)` is keyed
/// `key.child(i).child(j)`: the environment draws its initial state and
/// sensor noise from that key and the exploration noise comes from the
/// key's own exploration stream. With `explore == false` the mean action is
/// used.
pub fn collect_batch(
    factory: &dyn EnvFactory,
    domains: &[DomainParamSet],
    policy: &PolicyParams,
    n_tau: usize,
    gamma: f64,
    key: SeedKey,
    explore: bool,
) -> Result<RolloutBatch> {
    if domains.is_empty() || n_tau == 0 {
        return Err(Error::InvalidArgument("batch needs n >= 1 domains and n_tau >= 1".into()));
    }
    let cells: Vec<(usize, usize)> = (0..domains.len())
        .flat_map(|i| (0..n_tau).map(move |j| (i, j)))
        .collect();
    let trajectories = cells
        .par_iter()
        .map(|&(i, j)| {
            let seed = key.child(i as u64).child(j as u64);
            let mut env = factory.make(&domains[i])?;
            let mut rng = seed.rng(Stream::Exploration);
            let limit = env.action_limit();
            let mut obs = env.reset(seed);
            let horizon = env.horizon();
            let mut t = BatchTrajectory {
                domain: i,
                rollout: j,
                obs: Vec::with_capacity(horizon),
                actions: Vec::with_capacity(horizon),
                rewards: Vec::with_capacity(horizon),
                final_obs: Vec::new(),
                discounted_return: 0.0,
            };
            for _ in 0..horizon {
                let action = if explore {
                    policy.sample_action(&obs, &mut rng)?
                } else {
                    policy.mean_action(&obs)?
                };
                let mut applied = action.clone();
                clip_action(&mut applied, limit)?;
                let step = env.step(&applied)?;
                t.obs.push(std::mem::replace(&mut obs, step.obs));
                t.actions.push(action);
                t.rewards.push(step.reward);
                if step.done {
                    break;
                }
            }
            t.final_obs = obs;
            t.discounted_return = discounted_sum(&t.rewards, gamma)?;
            Ok(t)
        })
        .collect::<Result<Vec<_>>>()?;
    Ok(RolloutBatch { trajectories })
}

/// `A_t = Σ_l (γλ)^l δ_{t+l}` with `δ_t = r_t + γ V_{t+1} − V_t` and
/// `V_T = last_value`.
pub fn gae_advantages(rewards: &[f64], values: &[f64], last_value: f64, gamma: f64, lam: f64) -> Result<Vec<f64>> {
    if rewards.len() != values.len() {
        return Err(Error::DimensionMismatch {
            what: "value estimates",
            expected: rewards.len(),
            got: values.len(),
        });
    }
    let mut adv = vec![0.0; rewards.len()];
    let mut next_value = last_value;
    let mut acc = 0.0;
    for t in (0..rewards.len()).rev() {
        let delta = rewards[t] + gamma * next_value - values[t];
        acc = delta + gamma * lam * acc;
        adv[t] = acc;
        next_value = values[t];
    }
    Ok(adv)
}

/// Shifts to zero mean and scales to unit standard deviation; constant
/// input is only centered.
pub fn normalize_advantages(adv: &mut [f64]) {
    if adv.is_empty() {
        return;
    }
    let m = mean(adv);
    let var = adv.iter().map(|a| (a - m) * (a - m)).sum::<f64>() / adv.len() as f64;
    let s = var.sqrt();
    for a in adv.iter_mut() {
        *a -= m;
        if s > 1e-12 {
            *a /= s;
        }
    }
}

/// One state-action pair of the surrogate objective.
#[derive(Clone, Debug, PartialEq)]
pub struct SurrogateSample {
    pub obs: Vec<f64>,
    pub action: Vec<f64>,
    pub logp_old: f64,
    pub advantage: f64,
}

/// `mean_t min(r_t A_t, clip(r_t, 1 − ε, 1 + ε) A_t)` with
/// `r_t = π(a_t|s_t) / π_old(a_t|s_t)`.
pub fn surrogate(policy: &PolicyParams, samples: &[SurrogateSample], clip: f64) -> Result<f64> {
    Ok(surrogate_with_grad(policy, samples, clip, false)?.0)
}

/// Surrogate value and its gradient with respect to all policy parameters.
pub fn surrogate_grad(policy: &PolicyParams, samples: &[SurrogateSample], clip: f64) -> Result<(f64, Vec<f64>)> {
    surrogate_with_grad(policy, samples, clip, true)
}

fn surrogate_with_grad(
    policy: &PolicyParams,
    samples: &[SurrogateSample],
    clip: f64,
    with_grad: bool,
) -> Result<(f64, Vec<f64>)> {
    if samples.is_empty() {
        return Err(Error::EmptyTrajectory);
    }
    let n = samples.len() as f64;
    let mut grad = vec![0.0; if with_grad { policy.theta().len() } else { 0 }];
    let mut total = 0.0;
    let log_std = policy.log_std();
    let ad = policy.action_dim();
    let mut g_mean = vec![0.0; ad];
    let mut g_ls = vec![0.0; ad];
    for s in samples {
        let (mu, cache) = policy.forward_cached(&s.obs)?;
        let logp = gaussian_log_prob(&mu, log_std, &s.action);
        let ratio = (logp - s.logp_old).exp();
        let unclipped = ratio * s.advantage;
        let clipped = ratio.clamp(1.0 - clip, 1.0 + clip) * s.advantage;
        total += unclipped.min(clipped);
        if with_grad && unclipped <= clipped {
            // d(r A)/dθ = A r ∇log π
            let w = s.advantage * ratio / n;
            for d in 0..ad {
                let inv_var = (-2.0 * log_std[d]).exp();
                let diff = s.action[d] - mu[d];
                g_mean[d] = w * diff * inv_var;
                g_ls[d] = w * (diff * diff * inv_var - 1.0);
            }
            policy.backward(cache.as_ref(), &g_mean, &g_ls, &mut grad);
        }
    }
    Ok((total / n, grad))
}

/// Mean squared error of the value network and its gradient.
pub fn value_loss_grad(net: &Mlp, params: &[f64], obs: &[Vec<f64>], targets: &[f64]) -> Result<(f64, Vec<f64>)> {
    let n = obs.len() as f64;
    let mut grad = vec![0.0; params.len()];
    let mut loss = 0.0;
    for (o, y) in obs.iter().zip(targets) {
        let cache = net.forward(params, o)?;
        let err = cache.output()[0] - y;
        loss += err * err;
        net.backward(params, &cache, &[2.0 * err / n], &mut grad);
    }
    Ok((loss / n, grad))
}

/// Adam with bias correction.
#[derive(Clone, Debug)]
pub struct Adam {
    lr: f64,
    beta1: f64,
    beta2: f64,
    eps: f64,
    m: Vec<f64>,
    v: Vec<f64>,
    t: i32,
}

impl Adam {
    pub fn new(n: usize, lr: f64) -> Self {
        Adam {
            lr,
            beta1: 0.9,
            beta2: 0.999,
            eps: 1e-8,
            m: vec![0.0; n],
            v: vec![0.0; n],
            t: 0,
        }
    }

    /// Moves `params` against `grad` (gradient descent).
    pub fn step(&mut self, params: &mut [f64], grad: &[f64]) {
        self.t += 1;
        let bc1 = 1.0 - self.beta1.powi(self.t);
        let bc2 = 1.0 - self.beta2.powi(self.t);
        for i in 0..params.len() {
            self.m[i] = self.beta1 * self.m[i] + (1.0 - self.beta1) * grad[i];
            self.v[i] = self.beta2 * self.v[i] + (1.0 - self.beta2) * grad[i] * grad[i];
            let m_hat = self.m[i] / bc1;
            let v_hat = self.v[i] / bc2;
            params[i] -= self.lr * m_hat / (v_hat.sqrt() + self.eps);
        }
    }
}

#[derive(Clone, Debug)]
pub struct PgResult {
    pub policy: PolicyParams,
    pub value_params: Vec<f64>,
    pub trace: Vec<PolOptTraceRow>,
}

fn check_grad(grad: &[f64], iteration: usize, what: &str) -> Result<()> {
    if let Some(i) = grad.iter().position(|g| !g.is_finite()) {
        return Err(Error::NonFiniteGradient {
            iteration,
            detail: format!("{what} gradient entry {i} is {}", grad[i]),
        });
    }
    Ok(())
}

/// Trains `init` on `domains`. Iteration `k` collects its batch under
/// `key.child(k)`; with `cvar_epsilon` set only the worst ⌈εN⌉ trajectories
/// of each batch enter the update.
pub fn pol_opt_clipped_pg(
    factory: &dyn EnvFactory,
    domains: &[DomainParamSet],
    init: &PolicyParams,
    spec: &PolOptSpec,
    key: SeedKey,
) -> Result<PgResult> {
    spec.validate()?;
    if !(spec.learning_rate > 0.0) {
        return Err(Error::InvalidArgument("learning_rate must be > 0".into()));
    }
    let state_dim = match init.arch() {
        Architecture::Fnn { state_dim, .. } => *state_dim,
        Architecture::Constant { .. } => factory.make(&domains[0])?.state_dim(),
    };
    let hidden = match init.arch() {
        Architecture::Fnn { hidden, .. } => hidden.clone(),
        Architecture::Constant { .. } => super::policy::DEFAULT_HIDDEN.to_vec(),
    };
    let vnet = Mlp::new(state_dim, &hidden, 1)?;
    let mut vparams = vnet.init(1.0, &mut key.label("value").rng(Stream::Optimizer));
    let mut theta = init.theta().to_vec();
    let mut policy = init.clone();
    let mut opt_pi = Adam::new(theta.len(), spec.learning_rate);
    let mut opt_v = Adam::new(vparams.len(), spec.learning_rate);
    let mut trace = Vec::with_capacity(spec.iterations);

    for it in 0..spec.iterations {
        let batch = collect_batch(factory, domains, &policy, spec.n_tau, spec.gamma, key.child(it as u64), true)?;
        let returns = batch.returns();
        trace.push(PolOptTraceRow {
            iteration: it,
            mean_return: mean(&returns),
            std_return: std_dev(&returns),
        });
        let keep: Vec<usize> = match spec.cvar_epsilon {
            Some(eps) => epopt_filter(&returns, eps)?,
            None => (0..batch.trajectories.len()).collect(),
        };

        let mut samples = Vec::new();
        let mut v_obs = Vec::new();
        let mut v_targets = Vec::new();
        for &k in &keep {
            let tr = &batch.trajectories[k];
            let values = tr
                .obs
                .iter()
                .map(|o| Ok(vnet.forward(&vparams, o)?.output()[0]))
                .collect::<Result<Vec<f64>>>()?;
            let last = vnet.forward(&vparams, &tr.final_obs)?.output()[0];
            let adv = gae_advantages(&tr.rewards, &values, last, spec.gamma, spec.lam)?;
            for t in 0..tr.rewards.len() {
                samples.push(SurrogateSample {
                    obs: tr.obs[t].clone(),
                    action: tr.actions[t].clone(),
                    logp_old: policy.log_prob(&tr.obs[t], &tr.actions[t])?,
                    advantage: adv[t],
                });
                v_obs.push(tr.obs[t].clone());
                v_targets.push(adv[t] + values[t]);
            }
        }
        let mut adv: Vec<f64> = samples.iter().map(|s| s.advantage).collect();
        normalize_advantages(&mut adv);
        for (s, a) in samples.iter_mut().zip(adv) {
            s.advantage = a;
        }

        for _ in 0..spec.epochs {
            let (_, g) = surrogate_grad(&policy, &samples, spec.clip_ratio)?;
            check_grad(&g, it, "policy")?;
            let neg: Vec<f64> = g.iter().map(|g| -g).collect();
            opt_pi.step(&mut theta, &neg);
            policy.set_theta(theta.clone()).map_err(|_| Error::NonFiniteGradient {
                iteration: it,
                detail: "policy parameters became non-finite".into(),
            })?;
            let (_, gv) = value_loss_grad(&vnet, &vparams, &v_obs, &v_targets)?;
            check_grad(&gv, it, "value")?;
            opt_v.step(&mut vparams, &gv);
        }
    }
    Ok(PgResult {
        policy,
        value_params: vparams,
        trace,
    })
}
