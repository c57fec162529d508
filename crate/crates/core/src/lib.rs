//! Domain-randomized policy search with a bootstrap bound on the optimality
//! gap as stopping rule, plus the simulated platforms and analytic test
//! problem it is evaluated on.

pub mod catapult;
pub mod domain;
pub mod env;
pub mod error;
pub mod polopt;
pub mod rng;
pub mod sim;
pub mod spota;
pub mod stats;

pub use domain::{DomainDistribution, DomainParamSet, DomainParamSpec, Support};
pub use env::{Env, EnvFactory, Policy};
pub use error::{Error, Result};
pub use rng::{SeedKey, Stream};
