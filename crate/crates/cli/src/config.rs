//! Experiment configuration files.
//!
//! A TOML file with the sections `[env]`, `[distribution.<param>]`,
//! `[polopt]`, `[spota]`, `[sweep]`, `[train]` and `[catapult]`. Every key is
//! optional; some defaults depend on the selected environment and are
//! filled in after parsing unless the file sets them.

use std::collections::BTreeMap;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};
use spota::catapult::{CatapultFactory, CatapultStudyConfig};
use spota::domain::{Distribution, DomainParamSpec, Support};
use spota::polopt::{Architecture, Method, PolOptSpec};
use spota::sim::qbb::RewardBox;
use spota::sim::{BallBalancerConfig, BallBalancerFactory, CartPoleConfig, CartPoleFactory};
use spota::spota::SpotaConfig;
use spota::EnvFactory;

use crate::error::{CliError, Result};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum EnvName {
    Qbb,
    Qcp,
    Catapult,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct EnvSection {
    pub name: EnvName,
    /// Episode length in steps; platform default when absent.
    #[serde(skip_serializing_if = "Option::is_none")]
    pub horizon: Option<usize>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub dt: Option<f64>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub action_limit: Option<f64>,
    pub obs_noise: bool,
    /// Std of the initial pole angle (Cart-Pole).
    #[serde(skip_serializing_if = "Option::is_none")]
    pub init_angle_std: Option<f64>,
    /// Radius of the initial ball circle (Ball-Balancer).
    #[serde(skip_serializing_if = "Option::is_none")]
    pub init_radius: Option<f64>,
    /// Probability of Venus (catapult).
    pub psi: f64,
    /// Projectile mass (catapult).
    pub mass: f64,
}

impl Default for EnvSection {
    fn default() -> Self {
        EnvSection {
            name: EnvName::Qcp,
            horizon: None,
            dt: None,
            action_limit: None,
            obs_noise: true,
            init_angle_std: None,
            init_radius: None,
            psi: 0.7,
            mass: 1.0,
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum DistKind {
    Normal,
    Uniform,
    TwoPoint,
    Point,
}

/// Replacement for one domain-parameter distribution.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct DistributionEntry {
    pub kind: DistKind,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub mean: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub std: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub lo: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub hi: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub a: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub b: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub prob_b: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub value: Option<f64>,
    /// `[min, max]`; the built-in support of the parameter when absent.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub support: Option<[f64; 2]>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub units: Option<String>,
}

impl DistributionEntry {
    fn to_spec(&self, name: &str, current: &DomainParamSpec) -> Result<DomainParamSpec> {
        let need = |v: Option<f64>, field: &str| {
            v.ok_or_else(|| CliError::Config(format!("distribution.{name}: missing field `{field}`")))
        };
        let dist = match self.kind {
            DistKind::Normal => Distribution::Normal {
                mean: need(self.mean, "mean")?,
                std: need(self.std, "std")?,
            },
            DistKind::Uniform => Distribution::Uniform {
                lo: need(self.lo, "lo")?,
                hi: need(self.hi, "hi")?,
            },
            DistKind::TwoPoint => Distribution::TwoPoint {
                a: need(self.a, "a")?,
                b: need(self.b, "b")?,
                prob_b: need(self.prob_b, "prob_b")?,
            },
            DistKind::Point => Distribution::Point {
                value: need(self.value, "value")?,
            },
        };
        let support = match self.support {
            Some([min, max]) => Support { min, max },
            None => current.support(),
        };
        let units = self.units.clone().unwrap_or_else(|| current.units().to_owned());
        Ok(DomainParamSpec::new(name, dist, support)?.with_units(units))
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct SweepSection {
    pub param: String,
    pub values: Vec<f64>,
    pub rollouts: usize,
}

impl Default for SweepSection {
    fn default() -> Self {
        SweepSection {
            param: "act_delay".into(),
            values: (0..=10).map(f64::from).collect(),
            rollouts: 360,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct TrainSection {
    /// Domains sampled once for the CVaR baseline.
    pub epopt_domains: usize,
    /// CVaR level of the baseline; `polopt.cvar_epsilon` takes precedence.
    pub epopt_epsilon: f64,
    /// Optimizer iterations of the baselines; `polopt.iterations` when
    /// absent.
    #[serde(skip_serializing_if = "Option::is_none")]
    pub baseline_iterations: Option<usize>,
}

impl Default for TrainSection {
    fn default() -> Self {
        TrainSection {
            epopt_domains: 20,
            epopt_epsilon: 0.2,
            baseline_iterations: None,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct Config {
    pub seed: u64,
    pub out_dir: PathBuf,
    pub env: EnvSection,
    pub distribution: BTreeMap<String, DistributionEntry>,
    pub polopt: PolOptSpec,
    pub spota: SpotaConfig,
    pub sweep: SweepSection,
    pub train: TrainSection,
    pub catapult: CatapultStudyConfig,
}

impl Default for Config {
    fn default() -> Self {
        Config {
            seed: 0,
            out_dir: PathBuf::from("out"),
            env: EnvSection::default(),
            distribution: BTreeMap::new(),
            polopt: PolOptSpec::default(),
            spota: SpotaConfig::default(),
            sweep: SweepSection::default(),
            train: TrainSection::default(),
            catapult: CatapultStudyConfig::default(),
        }
    }
}

fn has_key(raw: &toml::Table, section: &str, key: &str) -> bool {
    raw.get(section)
        .and_then(|s| s.as_table())
        .is_some_and(|t| t.contains_key(key))
}

impl Config {
    /// Parses a configuration and fills in environment-dependent defaults
    /// for keys the text leaves out.
    pub fn from_toml_str(text: &str) -> Result<Self> {
        let raw: toml::Table = text.parse()?;
        let mut cfg: Config = raw.clone().try_into()?;
        match cfg.env.name {
            EnvName::Qbb => {
                if !has_key(&raw, "spota", "n_j") {
                    cfg.spota.n_j = 120;
                }
                if !has_key(&raw, "spota", "beta") {
                    cfg.spota.beta = 50.0;
                }
            }
            EnvName::Qcp => {}
            EnvName::Catapult => {
                if !has_key(&raw, "polopt", "method") {
                    cfg.polopt.method = Method::ClosedForm;
                }
                if !has_key(&raw, "spota", "n_j") {
                    cfg.spota.n_j = 1;
                }
            }
        }
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).map_err(|e| CliError::io(path, e))?;
        Self::from_toml_str(&text)
    }

    /// Fully resolved configuration as TOML; parses back to `self`.
    pub fn to_toml_string(&self) -> Result<String> {
        Ok(toml::to_string(self)?)
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        std::fs::write(path, self.to_toml_string()?).map_err(|e| CliError::io(path, e))
    }

    pub fn validate(&self) -> Result<()> {
        self.polopt.validate()?;
        self.spota.validate()?;
        self.catapult.validate()?;
        if self.polopt.method == Method::ClosedForm && self.env.name != EnvName::Catapult {
            return Err(CliError::Config(
                "polopt.method = \"closed-form\" requires env.name = \"catapult\"".into(),
            ));
        }
        if self.sweep.values.is_empty() || self.sweep.rollouts == 0 {
            return Err(CliError::Config("sweep needs at least one value and one rollout".into()));
        }
        if !(self.train.epopt_epsilon > 0.0 && self.train.epopt_epsilon <= 1.0) || self.train.epopt_domains == 0 {
            return Err(CliError::Config(
                "train.epopt_epsilon must lie in (0, 1] and train.epopt_domains be >= 1".into(),
            ));
        }
        // Builds the factory once so unknown parameter names and invalid
        // distributions surface at load time.
        self.factory()?;
        Ok(())
    }

    fn apply_distribution(&self, dist: &mut spota::DomainDistribution) -> Result<()> {
        for (name, entry) in &self.distribution {
            let current = dist
                .spec(name)
                .ok_or_else(|| CliError::Config(format!("unknown domain parameter `{name}`")))?
                .clone();
            dist.replace(entry.to_spec(name, &current)?)?;
        }
        Ok(())
    }

    /// Environment factory with all overrides applied.
    pub fn factory(&self) -> Result<Box<dyn EnvFactory>> {
        self.factory_with_noise(self.env.obs_noise)
    }

    pub fn factory_with_noise(&self, obs_noise: bool) -> Result<Box<dyn EnvFactory>> {
        let e = &self.env;
        Ok(match e.name {
            EnvName::Qcp => {
                let mut c = CartPoleConfig::default();
                c.horizon = e.horizon.unwrap_or(c.horizon);
                c.dt = e.dt.unwrap_or(c.dt);
                c.action_limit = e.action_limit.unwrap_or(c.action_limit);
                c.init_angle_std = e.init_angle_std.unwrap_or(c.init_angle_std);
                if !obs_noise {
                    c.obs_noise = None;
                }
                let mut f = CartPoleFactory::new(c);
                self.apply_distribution(&mut f.distribution)?;
                Box::new(f)
            }
            EnvName::Qbb => {
                let mut c = BallBalancerConfig::default();
                c.horizon = e.horizon.unwrap_or(c.horizon);
                c.dt = e.dt.unwrap_or(c.dt);
                if let Some(lim) = e.action_limit {
                    c.action_limit = lim;
                    c.reward_box = RewardBox {
                        action: lim,
                        ..c.reward_box
                    };
                }
                c.init_radius = e.init_radius.unwrap_or(c.init_radius);
                if !obs_noise {
                    c.obs_noise = None;
                }
                let mut f = BallBalancerFactory::new(c);
                self.apply_distribution(&mut f.distribution)?;
                Box::new(f)
            }
            EnvName::Catapult => {
                let mut f = CatapultFactory::new(e.psi, e.mass)?;
                self.apply_distribution(&mut f.distribution)?;
                Box::new(f)
            }
        })
    }

    pub fn architecture(&self) -> Architecture {
        match self.env.name {
            EnvName::Qcp => Architecture::fnn(4, 1),
            EnvName::Qbb => Architecture::fnn(8, 2),
            EnvName::Catapult => Architecture::Constant { action_dim: 1 },
        }
    }
}
