//! Cart-Pole: a pole on a motor-driven cart running on a finite rail.
//!
//! State `(x, α, ẋ, α̇)` with `α = 0` hanging down; the task is to balance the
//! pole upright (`α = π`). One voltage input.

use std::f64::consts::PI;

use rand_distr::{Distribution as _, StandardNormal};

use super::integrate::rk4_step;
use crate::domain::{DomainDistribution, DomainParamSet, DomainParamSpec, Support};
use crate::env::{wrap_action_delay, wrap_obs_noise, Env, EnvFactory, Step};
use crate::error::{Error, Result};
use crate::rng::{SeedKey, Stream};

pub const STATE_DIM: usize = 4;

pub const Q_DEFAULT: [f64; 4] = [10.0, 1e3, 5e-2, 5e-3];
pub const R_DEFAULT: f64 = 1e-4;

/// Observation noise for `(x, α, ẋ, α̇)`: 5 mm, 0.5°, 0.05 m/s, 2°/s.
pub const OBS_NOISE_DEFAULT: [f64; 4] = [5e-3, 0.5 * PI / 180.0, 0.05, 2.0 * PI / 180.0];

#[derive(Clone, Debug, PartialEq)]
pub struct CartPoleParams {
    pub g: f64,
    pub m_c: f64,
    pub m_p: f64,
    /// Half pole length.
    pub l_p: f64,
    /// Rail length.
    pub l_r: f64,
    pub r_mp: f64,
    pub k_g: f64,
    pub eta_g: f64,
    pub eta_m: f64,
    pub j_m: f64,
    pub k_m: f64,
    pub r_m: f64,
    pub b_eq: f64,
    pub b_p: f64,
    pub delay_steps: usize,
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct CartPoleDerived {
    /// Pole inertia about the pivot.
    pub j_p: f64,
    /// Combined linear inertia of cart and motor.
    pub j_eq: f64,
}

impl CartPoleParams {
    pub fn from_domain(domain: &DomainParamSet) -> Result<Self> {
        let p = CartPoleParams {
            g: domain.get("g")?,
            m_c: domain.get("m_c")?,
            m_p: domain.get("m_p")?,
            l_p: domain.get("l_p")?,
            l_r: domain.get("l_r")?,
            r_mp: domain.get("r_mp")?,
            k_g: domain.get("K_g")?,
            eta_g: domain.get("eta_g")?,
            eta_m: domain.get("eta_m")?,
            j_m: domain.get("J_m")?,
            k_m: domain.get("k_m")?,
            r_m: domain.get("R_m")?,
            b_eq: domain.get("B_eq")?,
            b_p: domain.get("B_p")?,
            delay_steps: domain.get("act_delay")?.max(0.0).round() as usize,
        };
        p.validate()?;
        Ok(p)
    }

    pub fn nominal() -> Self {
        Self::from_domain(&default_distribution().nominal()).expect("nominal parameters are valid")
    }

    pub fn validate(&self) -> Result<()> {
        let positive = [
            ("g", self.g),
            ("m_c", self.m_c),
            ("m_p", self.m_p),
            ("l_p", self.l_p),
            ("l_r", self.l_r),
            ("r_mp", self.r_mp),
            ("K_g", self.k_g),
            ("k_m", self.k_m),
            ("R_m", self.r_m),
        ];
        for (name, v) in positive {
            if !(v > 0.0 && v.is_finite()) {
                return Err(Error::InvalidParam {
                    name: name.into(),
                    reason: format!("must be > 0, got {v}"),
                });
            }
        }
        for (name, v) in [("eta_g", self.eta_g), ("eta_m", self.eta_m)] {
            if !(v > 0.0 && v <= 1.0) {
                return Err(Error::InvalidParam {
                    name: name.into(),
                    reason: format!("efficiency must lie in (0, 1], got {v}"),
                });
            }
        }
        for (name, v) in [("J_m", self.j_m), ("B_eq", self.b_eq), ("B_p", self.b_p)] {
            if !(v >= 0.0 && v.is_finite()) {
                return Err(Error::InvalidParam {
                    name: name.into(),
                    reason: format!("must be >= 0, got {v}"),
                });
            }
        }
        Ok(())
    }

    /// Admissible cart positions are `|x| <= x_max()`.
    pub fn x_max(&self) -> f64 {
        0.5 * self.l_r
    }
}

pub fn qcp_derived(p: &CartPoleParams) -> CartPoleDerived {
    CartPoleDerived {
        j_p: p.m_p * p.l_p * p.l_p / 3.0,
        j_eq: p.m_c + p.eta_g * p.k_g * p.k_g * p.j_m / (p.r_mp * p.r_mp),
    }
}

/// Cart force for motor voltage `v` at cart velocity `xdot`:
/// `F = η_g K_g k_m / (R_m r_mp) · (η_m V − K_g k_m ẋ) / r_mp`.
pub fn qcp_force(v: f64, xdot: f64, p: &CartPoleParams) -> f64 {
    p.eta_g * p.k_g * p.k_m / (p.r_m * p.r_mp) * (p.eta_m * v - p.k_g * p.k_m * xdot) / p.r_mp
}

/// Solves the 2×2 mass-matrix system for `(ẍ, α̈)` under cart force `force`.
pub fn qcp_accelerations(
    s: &[f64; 4],
    force: f64,
    p: &CartPoleParams,
    d: &CartPoleDerived,
) -> Result<[f64; 2]> {
    let [_, alpha, xdot, alphadot] = *s;
    let (sin_a, cos_a) = alpha.sin_cos();
    let ml = p.m_p * p.l_p;
    let m11 = p.m_p + d.j_eq;
    let m12 = ml * cos_a;
    let m22 = d.j_p + ml * p.l_p;
    let b1 = force + ml * sin_a * alphadot * alphadot - p.b_eq * xdot;
    let b2 = -ml * p.g * sin_a - p.b_p * alphadot;
    let det = m11 * m22 - m12 * m12;
    if !(det > 1e-12 * m11 * m22) {
        return Err(Error::SingularMassMatrix(det));
    }
    Ok([(m22 * b1 - m12 * b2) / det, (m11 * b2 - m12 * b1) / det])
}

pub fn qcp_dynamics(
    s: &[f64; 4],
    v: f64,
    p: &CartPoleParams,
    d: &CartPoleDerived,
) -> Result<[f64; 4]> {
    if s.iter().any(|x| !x.is_finite()) {
        return Err(Error::NonFinite("cart-pole state"));
    }
    let force = qcp_force(v, s[2], p);
    let [xdd, add] = qcp_accelerations(s, force, p, d)?;
    Ok([s[2], s[3], xdd, add])
}

/// Wraps an angle to (−π, π].
pub fn wrap_angle(a: f64) -> f64 {
    let w = (a + PI).rem_euclid(2.0 * PI) - PI;
    if w <= -PI {
        w + 2.0 * PI
    } else {
        w
    }
}

/// `exp(−(eᵀQe + R a²))` with the upright error `e = (x, wrap(α − π), ẋ, α̇)`.
pub fn qcp_reward(s: &[f64; 4], a: f64, q: &[f64; 4], r: f64) -> f64 {
    let e = [s[0], wrap_angle(s[1] - PI), s[2], s[3]];
    let cost: f64 = e.iter().zip(q).map(|(e, q)| q * e * e).sum::<f64>() + r * a * a;
    (-cost).exp()
}

/// Kinetic plus potential energy; conserved when damping and force vanish.
pub fn qcp_energy(s: &[f64; 4], p: &CartPoleParams, d: &CartPoleDerived) -> f64 {
    let [_, alpha, xdot, alphadot] = *s;
    let ml = p.m_p * p.l_p;
    let kinetic = 0.5 * (p.m_p + d.j_eq) * xdot * xdot
        + ml * alpha.cos() * xdot * alphadot
        + 0.5 * (d.j_p + ml * p.l_p) * alphadot * alphadot;
    kinetic - ml * p.g * alpha.cos()
}

pub fn default_distribution() -> DomainDistribution {
    let pos = Support::POSITIVE;
    let nonneg = Support::NONNEGATIVE;
    let eff = Support::EFFICIENCY;
    let specs = vec![
        DomainParamSpec::normal("g", 9.81, 1.962, pos).map(|s| s.with_units("m/s^2")),
        DomainParamSpec::normal("m_c", 0.38, 0.076, pos).map(|s| s.with_units("kg")),
        DomainParamSpec::normal("m_p", 0.127, 2.54e-2, pos).map(|s| s.with_units("kg")),
        DomainParamSpec::normal("l_p", 0.089, 1.78e-2, pos).map(|s| s.with_units("m")),
        DomainParamSpec::normal("l_r", 0.814, 0.163, pos).map(|s| s.with_units("m")),
        DomainParamSpec::normal("r_mp", 6.35e-3, 1.27e-3, pos).map(|s| s.with_units("m")),
        DomainParamSpec::normal("K_g", 3.71, 0.0, pos),
        DomainParamSpec::uniform("eta_g", 1.0, 0.8, eff),
        DomainParamSpec::uniform("eta_m", 1.0, 0.8, eff),
        DomainParamSpec::normal("J_m", 3.9e-7, 0.0, pos).map(|s| s.with_units("kg m^2")),
        DomainParamSpec::normal("k_m", 7.67e-3, 1.52e-3, pos).map(|s| s.with_units("N m/A")),
        DomainParamSpec::normal("R_m", 2.6, 0.52, pos).map(|s| s.with_units("Ohm")),
        DomainParamSpec::uniform("B_eq", 5.4, 0.0, nonneg).map(|s| s.with_units("N s/m")),
        DomainParamSpec::uniform("B_p", 2.4e-3, 0.0, nonneg).map(|s| s.with_units("N s")),
        DomainParamSpec::uniform("act_delay", 0.0, 10.0, nonneg).map(|s| s.with_units("steps")),
    ];
    DomainDistribution::new(specs.into_iter().collect::<Result<_>>().expect("built-in parameter values are valid"))
        .expect("unique names")
}

#[derive(Clone, Debug, PartialEq)]
pub struct CartPoleConfig {
    pub horizon: usize,
    pub dt: f64,
    pub action_limit: f64,
    pub q: [f64; 4],
    pub r: f64,
    /// Std of the initial pole angle around upright.
    pub init_angle_std: f64,
    pub obs_noise: Option<[f64; 4]>,
}

impl Default for CartPoleConfig {
    fn default() -> Self {
        CartPoleConfig {
            horizon: 2500,
            dt: 0.002,
            action_limit: 10.0,
            q: Q_DEFAULT,
            r: R_DEFAULT,
            init_angle_std: 0.05,
            obs_noise: Some(OBS_NOISE_DEFAULT),
        }
    }
}

/// Cart-Pole without actuator delay or sensor noise.
#[derive(Clone, Debug)]
pub struct CartPoleEnv {
    params: CartPoleParams,
    derived: CartPoleDerived,
    config: CartPoleConfig,
    state: [f64; 4],
    t: usize,
}

impl CartPoleEnv {
    pub fn new(params: CartPoleParams, config: CartPoleConfig) -> Result<Self> {
        params.validate()?;
        if config.horizon == 0 || !(config.dt > 0.0) {
            return Err(Error::InvalidArgument(
                "cart-pole horizon and dt must be positive".into(),
            ));
        }
        Ok(CartPoleEnv {
            derived: qcp_derived(&params),
            params,
            config,
            state: [0.0, PI, 0.0, 0.0],
            t: 0,
        })
    }

    pub fn state(&self) -> [f64; 4] {
        self.state
    }

    pub fn set_state(&mut self, s: [f64; 4]) {
        self.state = s;
    }

    pub fn params(&self) -> &CartPoleParams {
        &self.params
    }
}

impl Env for CartPoleEnv {
    fn state_dim(&self) -> usize {
        STATE_DIM
    }
    fn action_dim(&self) -> usize {
        1
    }
    fn horizon(&self) -> usize {
        self.config.horizon
    }
    fn dt(&self) -> f64 {
        self.config.dt
    }
    fn action_limit(&self) -> f64 {
        self.config.action_limit
    }

    fn reset(&mut self, seed: SeedKey) -> Vec<f64> {
        let z: f64 = StandardNormal.sample(&mut seed.rng(Stream::InitState));
        self.state = [0.0, PI + self.config.init_angle_std * z, 0.0, 0.0];
        self.t = 0;
        self.state.to_vec()
    }

    fn step(&mut self, action: &[f64]) -> Result<Step> {
        if action.len() != 1 {
            return Err(Error::DimensionMismatch {
                what: "cart-pole action",
                expected: 1,
                got: action.len(),
            });
        }
        let lim = self.config.action_limit;
        let v = action[0].clamp(-lim, lim);
        let reward = qcp_reward(&self.state, v, &self.config.q, self.config.r);
        let (p, d) = (&self.params, &self.derived);
        let mut next = rk4_step(|s, v: &f64| qcp_dynamics(s, *v, p, d), &self.state, &v, self.config.dt)?;
        let x_max = self.params.x_max();
        if next[0].abs() > x_max {
            next[0] = next[0].clamp(-x_max, x_max);
            next[2] = 0.0;
        }
        self.state = next;
        self.t += 1;
        Ok(Step {
            obs: next.to_vec(),
            reward,
            done: self.t >= self.config.horizon,
        })
    }
}

/// Builds delayed, optionally noisy Cart-Pole instances.
#[derive(Clone, Debug)]
pub struct CartPoleFactory {
    pub distribution: DomainDistribution,
    pub config: CartPoleConfig,
}

impl CartPoleFactory {
    pub fn new(config: CartPoleConfig) -> Self {
        CartPoleFactory {
            distribution: default_distribution(),
            config,
        }
    }
}

impl EnvFactory for CartPoleFactory {
    fn distribution(&self) -> &DomainDistribution {
        &self.distribution
    }

    fn make(&self, domain: &DomainParamSet) -> Result<Box<dyn Env>> {
        let params = CartPoleParams::from_domain(domain)?;
        let delay = params.delay_steps;
        let env = wrap_action_delay(CartPoleEnv::new(params, self.config.clone())?, delay);
        Ok(match self.config.obs_noise {
            Some(stds) => Box::new(wrap_obs_noise(env, stds.to_vec())?),
            None => Box::new(env),
        })
    }
}
