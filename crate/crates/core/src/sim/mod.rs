//! Simulated platforms and the fixed-step integrator they share.

pub mod integrate;
pub mod qbb;
pub mod qcp;

pub use integrate::rk4_step;
pub use qbb::{BallBalancerConfig, BallBalancerEnv, BallBalancerFactory, BallBalancerParams};
pub use qcp::{CartPoleConfig, CartPoleEnv, CartPoleFactory, CartPoleParams};
