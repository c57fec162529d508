use std::f64::consts::PI;

use rand::Rng;
use spota::env::Env;
use spota::sim::qbb::{self, apply_backlash, qbb_derived, qbb_dynamics, qbb_reward, RewardBox};
use spota::sim::qcp::{self, qcp_accelerations, qcp_derived, qcp_dynamics, qcp_energy, qcp_force, qcp_reward};
use spota::sim::{rk4_step, BallBalancerConfig, BallBalancerEnv, BallBalancerParams, CartPoleConfig, CartPoleEnv, CartPoleParams};
use spota::{SeedKey, Stream};

#[test]
fn cart_pole_rest_is_an_equilibrium() {
    let p = CartPoleParams::nominal();
    let d = qcp_derived(&p);
    let ds = qcp_dynamics(&[0.0, 0.0, 0.0, 0.0], 0.0, &p, &d).unwrap();
    assert_eq!(ds, [0.0; 4]);
    let ds = qcp_dynamics(&[0.1, 0.0, 0.0, 0.0], 0.0, &p, &d).unwrap();
    assert_eq!(ds, [0.0; 4]);
}

#[test]
fn ball_balancer_rest_is_an_equilibrium() {
    let mut p = BallBalancerParams::nominal();
    p.delta_theta_x = 0.0;
    p.delta_theta_y = 0.0;
    let d = qbb_derived(&p);
    assert_eq!(qbb_dynamics(&[0.0; 8], &[0.0; 2], &p, &d).unwrap(), [0.0; 8]);
    // Ball resting anywhere on a level, still plate stays put; small
    // voltages inside the dead zone do nothing.
    let s = [0.0, 0.0, 0.05, -0.03, 0.0, 0.0, 0.0, 0.0];
    let a = [0.5 * p.v_thold_x_plus, 0.5 * p.v_thold_y_minus];
    assert_eq!(qbb_dynamics(&s, &a, &p, &d).unwrap(), [0.0; 8]);
}

/// Undamped, unforced Cart-Pole: RK4 at dt = 0.002 conserves energy.
#[test]
fn cart_pole_energy_drift() {
    let mut p = CartPoleParams::nominal();
    p.b_eq = 0.0;
    p.b_p = 0.0;
    let d = qcp_derived(&p);
    let f = |s: &[f64; 4], _: &()| {
        let [xdd, add] = qcp_accelerations(s, 0.0, &p, &d)?;
        Ok([s[2], s[3], xdd, add])
    };
    for s0 in [[0.0, PI - 0.3, 0.0, 0.0], [0.0, 1.0, 0.2, -2.0], [0.0, 0.5, 0.0, 0.0]] {
        let e0 = qcp_energy(&s0, &p, &d);
        let scale = e0.abs().max(p.m_p * p.l_p * p.g);
        let mut s = s0;
        for _ in 0..500 {
            s = rk4_step(f, &s, &(), 0.002).unwrap();
        }
        let drift = (qcp_energy(&s, &p, &d) - e0).abs() / scale;
        assert!(drift <= 1e-6, "drift {drift:e} from {s0:?}");
    }
}

/// The 2x2 solve satisfies the equations of motion written out directly.
#[test]
fn cart_pole_mass_matrix_residual() {
    let dist = qcp::default_distribution();
    let mut rng = SeedKey::new(11).rng(Stream::DomainSampling);
    for _ in 0..200 {
        let p = CartPoleParams::from_domain(&dist.sample(&mut rng)).unwrap();
        let d = qcp_derived(&p);
        let s = [
            rng.random_range(-0.3..0.3),
            rng.random_range(-PI..PI),
            rng.random_range(-2.0..2.0),
            rng.random_range(-20.0..20.0),
        ];
        let force = rng.random_range(-50.0..50.0);
        let [xdd, add] = qcp_accelerations(&s, force, &p, &d).unwrap();
        let (sa, ca) = s[1].sin_cos();
        let ml = p.m_p * p.l_p;
        let j_p = p.m_p * p.l_p * p.l_p / 3.0;
        let j_eq = p.m_c + p.eta_g * p.k_g * p.k_g * p.j_m / (p.r_mp * p.r_mp);
        let r1 = (p.m_p + j_eq) * xdd + ml * ca * add - (force + ml * sa * s[3] * s[3] - p.b_eq * s[2]);
        let r2 = ml * ca * xdd + (j_p + ml * p.l_p) * add - (-ml * p.g * sa - p.b_p * s[3]);
        let scale = 1.0 + force.abs() + ml * s[3] * s[3];
        assert!(r1.abs() / scale <= 1e-10 && r2.abs() / scale <= 1e-10, "{r1:e} {r2:e}");
    }
}

#[test]
fn derived_parameters_recompute() {
    let mut rng = SeedKey::new(3).rng(Stream::DomainSampling);
    let close = |a: f64, b: f64| (a - b).abs() <= 1e-12 * b.abs().max(1e-300);
    let dist = qcp::default_distribution();
    for _ in 0..100 {
        let p = CartPoleParams::from_domain(&dist.sample(&mut rng)).unwrap();
        let d = qcp_derived(&p);
        assert!(close(d.j_p, p.m_p * p.l_p.powi(2) / 3.0));
        assert!(close(d.j_eq, p.m_c + p.eta_g * p.k_g.powi(2) * p.j_m / p.r_mp.powi(2)));
    }
    let dist = qbb::default_distribution();
    for _ in 0..100 {
        let p = BallBalancerParams::from_domain(&dist.sample(&mut rng)).unwrap();
        let d = qbb_derived(&p);
        let j_b = 2.0 / 5.0 * p.m_b * p.r_b.powi(2);
        assert!(close(d.j_b, j_b));
        assert!(close(d.zeta, p.m_b * p.r_b.powi(2) + j_b));
        assert!(close(d.c_kin, 2.0 * p.r_kin / p.l_p));
        assert!(close(d.a_m, p.eta_g * p.k_g * p.eta_m * p.k_m / p.r_m));
        assert!(close(d.b_v, p.eta_g * p.k_g.powi(2) * p.eta_m * p.k_m.powi(2) / p.r_m + p.b_eq));
        assert!(close(d.j_eq, p.eta_g * p.k_g.powi(2) * p.j_m + p.j_l));
    }
}

/// A solid ball rolling on a still, tilted plate accelerates at
/// `5/7 g sin(plate angle)`.
#[test]
fn ball_on_still_tilted_plate() {
    let mut p = BallBalancerParams::nominal();
    p.delta_theta_x = 0.0;
    p.delta_theta_y = 0.0;
    p.c_v = 0.0;
    let d = qbb_derived(&p);
    for theta in [-0.3, 0.05, 0.2] {
        let s = [theta, -theta, 0.0, 0.0, 0.0, 0.0, 0.0, 0.0];
        let ds = qbb_dynamics(&s, &[0.0; 2], &p, &d).unwrap();
        let expect = 5.0 / 7.0 * p.g * d.c_kin * theta.sin();
        assert!((ds[6] - expect).abs() <= 1e-12 * expect.abs());
        assert!((ds[7] + expect).abs() <= 1e-12 * expect.abs());
    }
}

#[test]
fn ball_balancer_reward_range() {
    let cfg = BallBalancerConfig::default();
    let b = RewardBox::for_plate(0.275, 10.0);
    let corner = b.state_corner();
    let mut rng = SeedKey::new(5).rng(Stream::InitState);
    let (mut lo, mut hi) = (f64::INFINITY, f64::NEG_INFINITY);
    for _ in 0..100_000 {
        // Points slightly beyond the box exercise the floor.
        let s: [f64; 8] = std::array::from_fn(|i| 1.2 * corner[i] * rng.random_range(-1.0..=1.0));
        let a = [rng.random_range(-10.0..=10.0), rng.random_range(-10.0..=10.0)];
        let r = qbb_reward(&s, &a, &cfg.q, &cfg.r, cfg.r_min, &b).unwrap();
        lo = lo.min(r);
        hi = hi.max(r);
    }
    assert!(lo >= 1e-4 && hi <= 1.0, "[{lo}, {hi}]");
    let r = qbb_reward(&corner, &[10.0, 10.0], &cfg.q, &cfg.r, cfg.r_min, &b).unwrap();
    assert!((r - 1e-4).abs() < 1e-15);
    assert_eq!(qbb_reward(&[0.0; 8], &[0.0; 2], &cfg.q, &cfg.r, cfg.r_min, &b).unwrap(), 1.0);
}

#[test]
fn cart_pole_reward_range() {
    let mut rng = SeedKey::new(6).rng(Stream::InitState);
    for _ in 0..10_000 {
        let s = [
            rng.random_range(-0.4..0.4),
            rng.random_range(-10.0..10.0),
            rng.random_range(-3.0..3.0),
            rng.random_range(-30.0..30.0),
        ];
        let r = qcp_reward(&s, rng.random_range(-10.0..10.0), &qcp::Q_DEFAULT, qcp::R_DEFAULT);
        assert!((0.0..=1.0).contains(&r));
    }
    assert_eq!(qcp_reward(&[0.0, PI, 0.0, 0.0], 0.0, &qcp::Q_DEFAULT, qcp::R_DEFAULT), 1.0);
    // Upright is the same whichever way the angle wrapped.
    let a = qcp_reward(&[0.0, 3.0 * PI + 0.1, 0.0, 0.0], 0.0, &qcp::Q_DEFAULT, 0.0);
    let b = qcp_reward(&[0.0, PI + 0.1, 0.0, 0.0], 0.0, &qcp::Q_DEFAULT, 0.0);
    assert!((a - b).abs() < 1e-12);
}

#[test]
fn cart_force_at_nominal() {
    let p = CartPoleParams::nominal();
    // Stall force at one volt, written out from the motor constants.
    let expect = p.eta_g * p.k_g * p.k_m * p.eta_m / (p.r_m * p.r_mp * p.r_mp);
    assert!((qcp_force(1.0, 0.0, &p) - expect).abs() < 1e-9 * expect);
    assert!(qcp_force(0.0, 1.0, &p) < 0.0);
}

#[test]
fn backlash_band_edges() {
    assert_eq!(apply_backlash(0.2, 0.3, -0.1), 0.0);
    assert_eq!(apply_backlash(-0.1, 0.3, -0.1), 0.0);
    assert_eq!(apply_backlash(0.31, 0.3, -0.1), 0.31);
    assert_eq!(apply_backlash(-0.2, 0.3, -0.1), -0.2);
}

#[test]
fn rk4_is_fourth_order_on_oscillator() {
    let f = |s: &[f64; 2], _: &()| Ok([s[1], -s[0]]);
    let err = |dt: f64| {
        let steps = (2.0 / dt).round() as usize;
        let mut s = [1.0, 0.0];
        for _ in 0..steps {
            s = rk4_step(f, &s, &(), dt).unwrap();
        }
        ((s[0] - 2f64.cos()).powi(2) + (s[1] + 2f64.sin()).powi(2)).sqrt()
    };
    let (e1, e2) = (err(0.1), err(0.05));
    let order = (e1 / e2).log2();
    assert!((order - 4.0).abs() < 0.15, "observed order {order}");
}

#[test]
fn cart_pole_env_stays_on_rail() {
    let cfg = CartPoleConfig {
        horizon: 3000,
        obs_noise: None,
        ..Default::default()
    };
    let mut env = CartPoleEnv::new(CartPoleParams::nominal(), cfg).unwrap();
    env.reset(SeedKey::new(0));
    let x_max = env.params().x_max();
    for _ in 0..3000 {
        let step = env.step(&[10.0]).unwrap();
        assert!(step.obs[0].abs() <= x_max);
    }
    assert_eq!(env.state()[0], x_max);
}

#[test]
fn ball_balancer_env_rollout_is_bounded_reward() {
    let mut env = BallBalancerEnv::new(BallBalancerParams::nominal(), BallBalancerConfig::default()).unwrap();
    let obs = env.reset(SeedKey::new(9));
    assert!(((obs[2].powi(2) + obs[3].powi(2)).sqrt() - 0.1).abs() < 1e-12);
    for t in 0..200 {
        let step = env.step(&[(t as f64 * 0.1).sin() * 3.0, 1.0]).unwrap();
        assert!(step.reward >= 1e-4 && step.reward <= 1.0);
    }
}
