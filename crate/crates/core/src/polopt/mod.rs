//! Policy representation and policy optimizers.

pub mod cem;
pub mod epopt;
pub mod pg;
pub mod policy;

use serde::{Deserialize, Serialize};

use crate::catapult::{catapult_opt_policy, CatapultDomain, MARS, VENUS, VENUS_PARAM};
use crate::domain::DomainParamSet;
use crate::env::{discounted_return, rollout, EnvFactory};
use crate::error::{Error, Result};
use crate::rng::SeedKey;

pub use cem::{cem_maximize, CemResult, CemSpec, Score};
pub use epopt::{cvar_count, epopt_filter};
pub use pg::{collect_batch, gae_advantages, pol_opt_clipped_pg, RolloutBatch};
pub use policy::{policy_from_str, policy_to_string, Architecture, Mlp, PolicyParams};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Method {
    Cem,
    ClippedPg,
    /// Exact optimum of the catapult problem; only valid with the catapult
    /// environment.
    ClosedForm,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct PolOptSpec {
    pub method: Method,
    pub iterations: usize,
    /// Rollouts per domain.
    pub n_tau: usize,
    pub gamma: f64,
    /// GAE λ.
    pub lam: f64,
    pub learning_rate: f64,
    pub clip_ratio: f64,
    /// Gradient steps per batch.
    pub epochs: usize,
    pub population: usize,
    pub elite: usize,
    /// Initial CEM search std over network weights.
    pub init_std: f64,
    pub extra_std: f64,
    pub extra_std_decay: f64,
    /// Log-std of the Gaussian action noise at initialization and after an
    /// exploration reset.
    pub init_log_std: f64,
    /// Optimize the mean of the worst ε-fraction of rollouts instead of the
    /// mean of all of them.
    pub cvar_epsilon: Option<f64>,
}

impl Default for PolOptSpec {
    fn default() -> Self {
        PolOptSpec {
            method: Method::Cem,
            iterations: 400,
            n_tau: 10,
            gamma: 0.999,
            lam: 0.95,
            learning_rate: 1e-4,
            clip_ratio: 0.2,
            epochs: 10,
            population: 20,
            elite: 5,
            init_std: 0.05,
            extra_std: 0.05,
            extra_std_decay: 0.95,
            init_log_std: 0.0,
            cvar_epsilon: None,
        }
    }
}

impl PolOptSpec {
    pub fn validate(&self) -> Result<()> {
        let bad = |msg: String| Err(Error::InvalidArgument(msg));
        if !(0.0..=1.0).contains(&self.gamma) || !(0.0..=1.0).contains(&self.lam) {
            return bad(format!("gamma and lam must lie in [0, 1], got {} and {}", self.gamma, self.lam));
        }
        if let Some(eps) = self.cvar_epsilon {
            if !(eps > 0.0 && eps <= 1.0) {
                return bad(format!("cvar_epsilon must lie in (0, 1], got {eps}"));
            }
        }
        if self.n_tau == 0 {
            return bad("n_tau must be >= 1".into());
        }
        if self.method == Method::ClippedPg && !(self.learning_rate > 0.0 && self.clip_ratio > 0.0) {
            return bad("clipped-pg needs learning_rate > 0 and clip_ratio > 0".into());
        }
        if self.method == Method::Cem {
            self.cem_spec().validate()?;
        }
        if !self.init_log_std.is_finite() {
            return bad("init_log_std must be finite".into());
        }
        Ok(())
    }

    pub fn cem_spec(&self) -> CemSpec {
        CemSpec {
            iterations: self.iterations,
            population: self.population,
            elite: self.elite,
            init_std: self.init_std,
            extra_std: self.extra_std,
            extra_std_decay: self.extra_std_decay,
        }
    }

    pub fn score(&self) -> Score {
        match self.cvar_epsilon {
            Some(eps) => Score::Cvar(eps),
            None => Score::Mean,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct PolOptTraceRow {
    pub iteration: usize,
    pub mean_return: f64,
    pub std_return: f64,
}

#[derive(Clone, Debug, PartialEq)]
pub struct PolOptOutput {
    pub policy: PolicyParams,
    pub trace: Vec<PolOptTraceRow>,
}

/// Approximately solves `max_θ (1/n) Σ_i J(θ, ξ_i)` over a fixed domain set.
pub trait PolicyOptimizer: Sync {
    fn optimize(
        &self,
        factory: &dyn EnvFactory,
        domains: &[DomainParamSet],
        init: &PolicyParams,
        key: SeedKey,
    ) -> Result<PolOptOutput>;
}

fn check_domains(domains: &[DomainParamSet]) -> Result<()> {
    if domains.is_empty() {
        return Err(Error::InvalidArgument("policy optimization needs at least one domain".into()));
    }
    Ok(())
}

/// Sample-average return estimator: rollout `(i, j)` runs in domain `i`
/// under key `key.child(i).child(j)`.
pub fn domain_returns(
    factory: &dyn EnvFactory,
    domains: &[DomainParamSet],
    policy: &PolicyParams,
    n_tau: usize,
    gamma: f64,
    key: SeedKey,
) -> Result<Vec<f64>> {
    let mut out = Vec::with_capacity(domains.len() * n_tau);
    for (i, dom) in domains.iter().enumerate() {
        let mut env = factory.make(dom)?;
        for j in 0..n_tau {
            let traj = rollout(&mut env, policy, key.child(i as u64).child(j as u64))?;
            out.push(discounted_return(&traj, gamma)?);
        }
    }
    Ok(out)
}

/// CEM over the mean-network weights; log-stds are carried along unchanged.
#[derive(Clone, Debug)]
pub struct CemOptimizer {
    pub spec: PolOptSpec,
}

impl PolicyOptimizer for CemOptimizer {
    fn optimize(
        &self,
        factory: &dyn EnvFactory,
        domains: &[DomainParamSet],
        init: &PolicyParams,
        key: SeedKey,
    ) -> Result<PolOptOutput> {
        self.spec.validate()?;
        check_domains(domains)?;
        let eval_key = key.label("eval");
        let outcomes = |w: &[f64]| {
            let policy = init.with_weights(w)?;
            domain_returns(factory, domains, &policy, self.spec.n_tau, self.spec.gamma, eval_key)
        };
        let res = cem_maximize(outcomes, self.spec.score(), init.weights(), &self.spec.cem_spec(), key.label("cem"))?;
        Ok(PolOptOutput {
            policy: init.with_weights(&res.best)?,
            trace: res
                .trace
                .iter()
                .map(|r| PolOptTraceRow {
                    iteration: r.iteration,
                    mean_return: r.outcome_mean,
                    std_return: r.outcome_std,
                })
                .collect(),
        })
    }
}

#[derive(Clone, Debug)]
pub struct ClippedPgOptimizer {
    pub spec: PolOptSpec,
}

impl PolicyOptimizer for ClippedPgOptimizer {
    fn optimize(
        &self,
        factory: &dyn EnvFactory,
        domains: &[DomainParamSet],
        init: &PolicyParams,
        key: SeedKey,
    ) -> Result<PolOptOutput> {
        check_domains(domains)?;
        let res = pol_opt_clipped_pg(factory, domains, init, &self.spec, key)?;
        Ok(PolOptOutput {
            policy: res.policy,
            trace: res.trace,
        })
    }
}

/// Exact sample-average optimum for catapult domains: counts the Venus
/// domains and returns the constant policy θ*_n.
#[derive(Clone, Debug)]
pub struct CatapultClosedForm {
    pub mars: CatapultDomain,
    pub venus: CatapultDomain,
}

impl Default for CatapultClosedForm {
    fn default() -> Self {
        CatapultClosedForm {
            mars: MARS,
            venus: VENUS,
        }
    }
}

impl PolicyOptimizer for CatapultClosedForm {
    fn optimize(
        &self,
        _factory: &dyn EnvFactory,
        domains: &[DomainParamSet],
        init: &PolicyParams,
        _key: SeedKey,
    ) -> Result<PolOptOutput> {
        check_domains(domains)?;
        if !matches!(init.arch(), Architecture::Constant { action_dim: 1 }) {
            return Err(Error::InvalidArgument(
                "closed-form catapult optimizer needs a 1-D constant policy".into(),
            ));
        }
        let mut n_venus = 0;
        for d in domains {
            if d.get(VENUS_PARAM)? >= 0.5 {
                n_venus += 1;
            }
        }
        let theta = catapult_opt_policy(domains.len() - n_venus, n_venus, &self.mars, &self.venus)?;
        Ok(PolOptOutput {
            policy: init.with_weights(&[theta])?,
            trace: Vec::new(),
        })
    }
}

pub fn make_optimizer(spec: &PolOptSpec) -> Result<Box<dyn PolicyOptimizer>> {
    spec.validate()?;
    Ok(match spec.method {
        Method::Cem => Box::new(CemOptimizer { spec: spec.clone() }),
        Method::ClippedPg => Box::new(ClippedPgOptimizer { spec: spec.clone() }),
        Method::ClosedForm => Box::new(CatapultClosedForm::default()),
    })
}
