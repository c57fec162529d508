//! Ball-Balancer: a ball rolling on a plate tilted by two servo motors.
//!
//! State `(θ_x, θ_y, x_b, y_b, θ̇_x, θ̇_y, ẋ_b, ẏ_b)` with motor shaft angles
//! θ and ball position relative to the plate center; two voltage inputs.
//! Plate angles follow the motor angles through the linear map
//! `α = c_kin θ_x`, `β = c_kin θ_y`.

use std::f64::consts::PI;

use rand::Rng;

use super::integrate::rk4_step;
use crate::domain::{DomainDistribution, DomainParamSet, DomainParamSpec, Support};
use crate::env::{wrap_action_delay, wrap_obs_noise, Env, EnvFactory, Step};
use crate::error::{Error, Result};
use crate::rng::{SeedKey, Stream};

pub const STATE_DIM: usize = 8;
pub const ACTION_DIM: usize = 2;

pub const Q_DEFAULT: [f64; 8] = [1.0, 1.0, 5e3, 5e3, 1e-2, 1e-2, 5e-2, 5e-2];
pub const R_DEFAULT: [f64; 2] = [1e-3, 1e-3];
pub const R_MIN_DEFAULT: f64 = 1e-4;

const DEG: f64 = PI / 180.0;

pub const OBS_NOISE_DEFAULT: [f64; 8] = [
    0.5 * DEG,
    0.5 * DEG,
    5e-3,
    5e-3,
    2.0 * DEG,
    2.0 * DEG,
    0.05,
    0.05,
];

#[derive(Clone, Debug, PartialEq)]
pub struct BallBalancerParams {
    pub g: f64,
    pub m_b: f64,
    pub r_b: f64,
    /// Plate side length.
    pub l_p: f64,
    pub r_kin: f64,
    pub k_g: f64,
    pub eta_g: f64,
    pub eta_m: f64,
    pub j_l: f64,
    pub j_m: f64,
    pub k_m: f64,
    pub r_m: f64,
    pub b_eq: f64,
    pub c_v: f64,
    pub v_thold_x_plus: f64,
    pub v_thold_x_minus: f64,
    pub v_thold_y_plus: f64,
    pub v_thold_y_minus: f64,
    /// Servo offsets in radians.
    pub delta_theta_x: f64,
    pub delta_theta_y: f64,
    pub delay_steps: usize,
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct BallBalancerDerived {
    pub c_kin: f64,
    pub a_m: f64,
    pub b_v: f64,
    pub j_eq: f64,
    pub j_b: f64,
    pub zeta: f64,
}

impl BallBalancerParams {
    /// Reads a domain; servo offsets are given in degrees.
    pub fn from_domain(domain: &DomainParamSet) -> Result<Self> {
        let p = BallBalancerParams {
            g: domain.get("g")?,
            m_b: domain.get("m_b")?,
            r_b: domain.get("r_b")?,
            l_p: domain.get("l_p")?,
            r_kin: domain.get("r_kin")?,
            k_g: domain.get("K_g")?,
            eta_g: domain.get("eta_g")?,
            eta_m: domain.get("eta_m")?,
            j_l: domain.get("J_l")?,
            j_m: domain.get("J_m")?,
            k_m: domain.get("k_m")?,
            r_m: domain.get("R_m")?,
            b_eq: domain.get("B_eq")?,
            c_v: domain.get("c_v")?,
            v_thold_x_plus: domain.get("V_thold_x_plus")?,
            v_thold_x_minus: domain.get("V_thold_x_minus")?,
            v_thold_y_plus: domain.get("V_thold_y_plus")?,
            v_thold_y_minus: domain.get("V_thold_y_minus")?,
            delta_theta_x: domain.get("delta_theta_x")? * DEG,
            delta_theta_y: domain.get("delta_theta_y")? * DEG,
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
            ("m_b", self.m_b),
            ("r_b", self.r_b),
            ("l_p", self.l_p),
            ("r_kin", self.r_kin),
            ("K_g", self.k_g),
            ("J_l", self.j_l),
            ("J_m", self.j_m),
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
        for (name, v) in [("B_eq", self.b_eq), ("c_v", self.c_v)] {
            if !(v >= 0.0 && v.is_finite()) {
                return Err(Error::InvalidParam {
                    name: name.into(),
                    reason: format!("must be >= 0, got {v}"),
                });
            }
        }
        let bands = [
            ("V_thold_x", self.v_thold_x_minus, self.v_thold_x_plus),
            ("V_thold_y", self.v_thold_y_minus, self.v_thold_y_plus),
        ];
        for (name, minus, plus) in bands {
            if !(minus <= 0.0 && plus >= 0.0) {
                return Err(Error::InvalidParam {
                    name: name.into(),
                    reason: format!("need minus <= 0 <= plus, got [{minus}, {plus}]"),
                });
            }
        }
        for (name, v) in [
            ("delta_theta_x", self.delta_theta_x),
            ("delta_theta_y", self.delta_theta_y),
        ] {
            if !v.is_finite() {
                return Err(Error::InvalidParam {
                    name: name.into(),
                    reason: format!("must be finite, got {v}"),
                });
            }
        }
        Ok(())
    }
}

pub fn qbb_derived(p: &BallBalancerParams) -> BallBalancerDerived {
    let j_b = 0.4 * p.m_b * p.r_b * p.r_b;
    BallBalancerDerived {
        c_kin: 2.0 * p.r_kin / p.l_p,
        a_m: p.eta_g * p.k_g * p.eta_m * p.k_m / p.r_m,
        b_v: p.eta_g * p.k_g * p.k_g * p.eta_m * p.k_m * p.k_m / p.r_m + p.b_eq,
        j_eq: p.eta_g * p.k_g * p.k_g * p.j_m + p.j_l,
        j_b,
        zeta: p.m_b * p.r_b * p.r_b + j_b,
    }
}

/// Dead zone: voltages inside `[thold_minus, thold_plus]` become zero.
pub fn apply_backlash(v: f64, thold_plus: f64, thold_minus: f64) -> f64 {
    if v >= thold_minus && v <= thold_plus {
        0.0
    } else {
        v
    }
}

/// State derivative for voltages `a` already clipped to the actuator box.
pub fn qbb_dynamics(
    s: &[f64; 8],
    a: &[f64; 2],
    p: &BallBalancerParams,
    d: &BallBalancerDerived,
) -> Result<[f64; 8]> {
    if s.iter().chain(a).any(|x| !x.is_finite()) {
        return Err(Error::NonFinite("ball-balancer state"));
    }
    let [th_x, th_y, x_b, y_b, thd_x, thd_y, xd_b, yd_b] = *s;
    let v_x = apply_backlash(a[0], p.v_thold_x_plus, p.v_thold_x_minus);
    let v_y = apply_backlash(a[1], p.v_thold_y_plus, p.v_thold_y_minus);
    let thdd_x = (d.a_m * v_x - d.b_v * thd_x) / d.j_eq;
    let thdd_y = (d.a_m * v_y - d.b_v * thd_y) / d.j_eq;

    let rb2 = p.r_b * p.r_b;
    let ball = |pos: f64, vel: f64, theta: f64, theta_dot: f64, theta_ddot: f64| {
        let plate_dot = d.c_kin * theta_dot;
        let plate_ddot = d.c_kin * theta_ddot;
        (-p.c_v * vel * rb2 - d.j_b * p.r_b * plate_ddot
            + p.m_b * pos * plate_dot * plate_dot * rb2
            + d.c_kin * p.m_b * p.g * rb2 * theta.sin())
            / d.zeta
    };
    let xdd_b = ball(x_b, xd_b, th_x + p.delta_theta_x, thd_x, thdd_x);
    let ydd_b = ball(y_b, yd_b, th_y + p.delta_theta_y, thd_y, thdd_y);
    Ok([thd_x, thd_y, xd_b, yd_b, thdd_x, thdd_y, xdd_b, ydd_b])
}

/// Symmetric bounds of the nominal state and action sets used to scale the
/// reward.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct RewardBox {
    pub theta: f64,
    pub ball_pos: f64,
    pub theta_dot: f64,
    pub ball_vel: f64,
    pub action: f64,
}

impl RewardBox {
    /// Box for a plate of side `l_p` and actuator limit `action`.
    pub fn for_plate(l_p: f64, action: f64) -> Self {
        RewardBox {
            theta: PI / 6.0,
            ball_pos: 0.5 * l_p,
            theta_dot: PI,
            ball_vel: 0.5,
            action,
        }
    }

    pub fn state_corner(&self) -> [f64; 8] {
        [
            self.theta,
            self.theta,
            self.ball_pos,
            self.ball_pos,
            self.theta_dot,
            self.theta_dot,
            self.ball_vel,
            self.ball_vel,
        ]
    }
}

fn quad<const N: usize>(x: &[f64; N], w: &[f64; N]) -> f64 {
    x.iter().zip(w).map(|(x, w)| w * x * x).sum()
}

/// Scaling `c = ln(r_min) / max_{box} (sᵀQs + aᵀRa)`; the maximum of a
/// diagonal quadratic form over a box sits at a corner.
pub fn qbb_reward_scale(q: &[f64; 8], r: &[f64; 2], r_min: f64, bounds: &RewardBox) -> Result<f64> {
    if !(r_min > 0.0 && r_min < 1.0) {
        return Err(Error::InvalidArgument(format!("r_min must lie in (0, 1), got {r_min}")));
    }
    let max_cost = quad(&bounds.state_corner(), q) + quad(&[bounds.action; 2], r);
    if !(max_cost > 0.0 && max_cost.is_finite()) {
        return Err(Error::InvalidArgument(
            "reward normalizer is zero or not finite".into(),
        ));
    }
    Ok(r_min.ln() / max_cost)
}

/// `exp(c (sᵀQs + aᵀRa))`, floored at `r_min` for states outside the box.
pub fn qbb_reward(
    s: &[f64; 8],
    a: &[f64; 2],
    q: &[f64; 8],
    r: &[f64; 2],
    r_min: f64,
    bounds: &RewardBox,
) -> Result<f64> {
    let c = qbb_reward_scale(q, r, r_min, bounds)?;
    Ok(scaled_reward(s, a, q, r, r_min, c))
}

fn scaled_reward(s: &[f64; 8], a: &[f64; 2], q: &[f64; 8], r: &[f64; 2], r_min: f64, c: f64) -> f64 {
    (c * (quad(s, q) + quad(a, r))).exp().max(r_min)
}

pub fn default_distribution() -> DomainDistribution {
    let pos = Support::POSITIVE;
    let nonneg = Support::NONNEGATIVE;
    let eff = Support::EFFICIENCY;
    let neg = Support {
        min: f64::NEG_INFINITY,
        max: 0.0,
    };
    let specs = vec![
        DomainParamSpec::normal("g", 9.81, 1.962, pos).map(|s| s.with_units("m/s^2")),
        DomainParamSpec::normal("m_b", 5e-3, 6e-4, pos).map(|s| s.with_units("kg")),
        DomainParamSpec::normal("r_b", 1.96e-2, 3.93e-3, pos).map(|s| s.with_units("m")),
        DomainParamSpec::normal("l_p", 0.275, 5.5e-2, pos).map(|s| s.with_units("m")),
        DomainParamSpec::normal("r_kin", 2.54e-2, 3.08e-3, pos).map(|s| s.with_units("m")),
        DomainParamSpec::normal("K_g", 70.0, 14.0, pos),
        DomainParamSpec::uniform("eta_g", 1.0, 0.6, eff),
        DomainParamSpec::uniform("eta_m", 0.89, 0.49, eff),
        DomainParamSpec::normal("J_l", 5.28e-5, 1.06e-5, pos).map(|s| s.with_units("kg m^2")),
        DomainParamSpec::normal("J_m", 4.61e-7, 9.22e-8, pos).map(|s| s.with_units("kg m^2")),
        DomainParamSpec::normal("k_m", 7.7e-3, 1.52e-3, pos).map(|s| s.with_units("N m/A")),
        DomainParamSpec::normal("R_m", 2.6, 0.52, pos).map(|s| s.with_units("Ohm")),
        DomainParamSpec::uniform("B_eq", 0.15, 3.75e-3, nonneg).map(|s| s.with_units("N m s")),
        DomainParamSpec::uniform("c_v", 5e-2, 1.25e-3, nonneg),
        DomainParamSpec::uniform("V_thold_x_plus", 0.353, 8.84e-2, nonneg).map(|s| s.with_units("V")),
        DomainParamSpec::uniform("V_thold_x_minus", -8.9e-2, -2.22e-3, neg).map(|s| s.with_units("V")),
        DomainParamSpec::uniform("V_thold_y_plus", 0.29, 7.25e-2, nonneg).map(|s| s.with_units("V")),
        DomainParamSpec::uniform("V_thold_y_minus", -7.3e-2, -1.83e-2, neg).map(|s| s.with_units("V")),
        DomainParamSpec::uniform("delta_theta_x", -5.0, 5.0, Support::UNBOUNDED).map(|s| s.with_units("deg")),
        DomainParamSpec::uniform("delta_theta_y", -5.0, 5.0, Support::UNBOUNDED).map(|s| s.with_units("deg")),
        DomainParamSpec::uniform("act_delay", 0.0, 30.0, nonneg).map(|s| s.with_units("steps")),
    ];
    DomainDistribution::new(specs.into_iter().collect::<Result<_>>().expect("built-in parameter values are valid"))
        .expect("unique names")
}

#[derive(Clone, Debug, PartialEq)]
pub struct BallBalancerConfig {
    pub horizon: usize,
    pub dt: f64,
    pub action_limit: f64,
    pub q: [f64; 8],
    pub r: [f64; 2],
    pub r_min: f64,
    pub reward_box: RewardBox,
    /// Radius of the circle the ball starts on.
    pub init_radius: f64,
    pub obs_noise: Option<[f64; 8]>,
}

impl Default for BallBalancerConfig {
    fn default() -> Self {
        BallBalancerConfig {
            horizon: 2000,
            dt: 0.002,
            action_limit: 10.0,
            q: Q_DEFAULT,
            r: R_DEFAULT,
            r_min: R_MIN_DEFAULT,
            reward_box: RewardBox::for_plate(0.275, 10.0),
            init_radius: 0.1,
            obs_noise: Some(OBS_NOISE_DEFAULT),
        }
    }
}

/// Ball-Balancer without actuator delay or sensor noise.
#[derive(Clone, Debug)]
pub struct BallBalancerEnv {
    params: BallBalancerParams,
    derived: BallBalancerDerived,
    config: BallBalancerConfig,
    reward_scale: f64,
    state: [f64; 8],
    t: usize,
}

impl BallBalancerEnv {
    pub fn new(params: BallBalancerParams, config: BallBalancerConfig) -> Result<Self> {
        params.validate()?;
        if config.horizon == 0 || !(config.dt > 0.0) {
            return Err(Error::InvalidArgument(
                "ball-balancer horizon and dt must be positive".into(),
            ));
        }
        let reward_scale = qbb_reward_scale(&config.q, &config.r, config.r_min, &config.reward_box)?;
        Ok(BallBalancerEnv {
            derived: qbb_derived(&params),
            params,
            config,
            reward_scale,
            state: [0.0; 8],
            t: 0,
        })
    }

    pub fn state(&self) -> [f64; 8] {
        self.state
    }

    pub fn set_state(&mut self, s: [f64; 8]) {
        self.state = s;
    }

    pub fn params(&self) -> &BallBalancerParams {
        &self.params
    }
}

impl Env for BallBalancerEnv {
    fn state_dim(&self) -> usize {
        STATE_DIM
    }
    fn action_dim(&self) -> usize {
        ACTION_DIM
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
        let phi: f64 = seed.rng(Stream::InitState).random_range(0.0..2.0 * PI);
        let rad = self.config.init_radius;
        self.state = [0.0, 0.0, rad * phi.cos(), rad * phi.sin(), 0.0, 0.0, 0.0, 0.0];
        self.t = 0;
        self.state.to_vec()
    }

    fn step(&mut self, action: &[f64]) -> Result<Step> {
        if action.len() != ACTION_DIM {
            return Err(Error::DimensionMismatch {
                what: "ball-balancer action",
                expected: ACTION_DIM,
                got: action.len(),
            });
        }
        let lim = self.config.action_limit;
        let a = [action[0].clamp(-lim, lim), action[1].clamp(-lim, lim)];
        let c = &self.config;
        let reward = scaled_reward(&self.state, &a, &c.q, &c.r, c.r_min, self.reward_scale);
        let (p, d) = (&self.params, &self.derived);
        let next = rk4_step(|s, a: &[f64; 2]| qbb_dynamics(s, a, p, d), &self.state, &a, c.dt)?;
        self.state = next;
        self.t += 1;
        Ok(Step {
            obs: next.to_vec(),
            reward,
            done: self.t >= c.horizon,
        })
    }
}

/// Builds delayed, optionally noisy Ball-Balancer instances.
#[derive(Clone, Debug)]
pub struct BallBalancerFactory {
    pub distribution: DomainDistribution,
    pub config: BallBalancerConfig,
}

impl BallBalancerFactory {
    pub fn new(config: BallBalancerConfig) -> Self {
        BallBalancerFactory {
            distribution: default_distribution(),
            config,
        }
    }
}

impl EnvFactory for BallBalancerFactory {
    fn distribution(&self) -> &DomainDistribution {
        &self.distribution
    }

    fn make(&self, domain: &DomainParamSet) -> Result<Box<dyn Env>> {
        let params = BallBalancerParams::from_domain(domain)?;
        let delay = params.delay_steps;
        let env = wrap_action_delay(BallBalancerEnv::new(params, self.config.clone())?, delay);
        Ok(match self.config.obs_noise {
            Some(stds) => Box::new(wrap_obs_noise(env, stds.to_vec())?),
            None => Box::new(env),
        })
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn nominal_derived_values() {
        let p = BallBalancerParams::nominal();
        assert_eq!(p.eta_g, 0.8);
        assert!((p.eta_m - 0.69).abs() < 1e-15);
        let d = qbb_derived(&p);
        assert!((d.a_m - 0.8 * 70.0 * 0.69 * 7.7e-3 / 2.6).abs() < 1e-15);
        assert!((d.a_m - 0.11444).abs() < 1e-5);
        assert!((d.j_b - 7.683e-7).abs() < 1e-10);
        assert_eq!(p.delta_theta_x, 0.0);
        assert_eq!(p.delay_steps, 15);
    }

    #[test]
    fn c_kin_is_one_for_half_plate_arm() {
        let mut p = BallBalancerParams::nominal();
        p.r_kin = p.l_p / 2.0;
        assert!((qbb_derived(&p).c_kin - 1.0).abs() < 1e-15);
    }

    #[test]
    fn backlash_dead_zone() {
        assert_eq!(apply_backlash(0.0, 0.353, -0.089), 0.0);
        assert_eq!(apply_backlash(0.2, 0.353, -0.089), 0.0);
        assert_eq!(apply_backlash(0.5, 0.353, -0.089), 0.5);
        assert_eq!(apply_backlash(-0.05, 0.353, -0.089), 0.0);
        assert_eq!(apply_backlash(-0.1, 0.353, -0.089), -0.1);
    }

    #[test]
    fn rest_and_flat_plate() {
        let p = BallBalancerParams::nominal();
        let d = qbb_derived(&p);
        assert_eq!(qbb_dynamics(&[0.0; 8], &[0.0; 2], &p, &d).unwrap(), [0.0; 8]);
        let s = [0.0, 0.0, 0.05, -0.07, 0.0, 0.0, 0.0, 0.0];
        let ds = qbb_dynamics(&s, &[0.0; 2], &p, &d).unwrap();
        assert_eq!(ds[6], 0.0);
        assert_eq!(ds[7], 0.0);
    }

    #[test]
    fn reward_corner_and_center() {
        let bounds = RewardBox::for_plate(0.275, 10.0);
        let r = |s: &[f64; 8], a: &[f64; 2]| {
            qbb_reward(s, a, &Q_DEFAULT, &R_DEFAULT, R_MIN_DEFAULT, &bounds).unwrap()
        };
        assert_eq!(r(&[0.0; 8], &[0.0; 2]), 1.0);
        assert!((r(&bounds.state_corner(), &[10.0, -10.0]) - 1e-4).abs() < 1e-15);
        let mid = r(&[0.1, 0.0, 0.02, 0.0, 0.0, 0.0, 0.0, 0.0], &[1.0, 0.0]);
        assert!(mid > 1e-4 && mid < 1.0);
        assert_eq!(r(&[10.0; 8], &[0.0; 2]), 1e-4);
    }

    #[test]
    fn reward_rejects_bad_r_min() {
        let bounds = RewardBox::for_plate(0.275, 10.0);
        assert!(qbb_reward_scale(&Q_DEFAULT, &R_DEFAULT, 1.0, &bounds).is_err());
        assert!(qbb_reward_scale(&[0.0; 8], &[0.0; 2], 1e-4, &bounds).is_err());
    }

    #[test]
    fn reset_places_ball_on_circle() {
        let mut env = BallBalancerEnv::new(BallBalancerParams::nominal(), BallBalancerConfig::default()).unwrap();
        for k in 0..20 {
            let s = env.reset(SeedKey::new(k));
            assert!(((s[2] * s[2] + s[3] * s[3]).sqrt() - 0.1).abs() < 1e-12);
        }
    }
}
