//! Domain-parameter distributions and sampled domain instances.
//!
//! A [`DomainDistribution`] is an ordered list of independent per-parameter
//! distributions. Every parameter carries a support interval; sampled values
//! that fall outside of it are redrawn a bounded number of times and finally
//! clamped, so sampling is total and deterministic.

use rand::Rng;
use rand_distr::{Distribution as _, Normal};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Number of redraws before an out-of-support sample is clamped.
pub const MAX_REDRAWS: usize = 100;

/// Lower bound used for strictly positive physical quantities.
pub const POSITIVE_EPS: f64 = 1e-8;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "kebab-case")]
pub enum Distribution {
    Normal { mean: f64, std: f64 },
    Uniform { lo: f64, hi: f64 },
    /// `a` with probability `1 - prob_b`, `b` with probability `prob_b`.
    TwoPoint { a: f64, b: f64, prob_b: f64 },
    Point { value: f64 },
}

impl Distribution {
    fn draw<R: Rng + ?Sized>(&self, rng: &mut R) -> f64 {
        match *self {
            Distribution::Normal { mean, std } => {
                if std == 0.0 {
                    mean
                } else {
                    Normal::new(mean, std).map(|n| n.sample(rng)).unwrap_or(mean)
                }
            }
            Distribution::Uniform { lo, hi } => {
                if lo == hi {
                    lo
                } else {
                    lo + (hi - lo) * rng.random::<f64>()
                }
            }
            Distribution::TwoPoint { a, b, prob_b } => {
                if rng.random::<f64>() < prob_b {
                    b
                } else {
                    a
                }
            }
            Distribution::Point { value } => value,
        }
    }

    fn nominal(&self) -> f64 {
        match *self {
            Distribution::Normal { mean, .. } => mean,
            Distribution::Uniform { lo, hi } => 0.5 * (lo + hi),
            Distribution::TwoPoint { a, b, prob_b } => {
                if prob_b > 0.5 {
                    b
                } else {
                    a
                }
            }
            Distribution::Point { value } => value,
        }
    }
}

/// Physical-plausibility interval `[min, max]` for a parameter.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct Support {
    pub min: f64,
    pub max: f64,
}

impl Support {
    pub const UNBOUNDED: Support = Support {
        min: f64::NEG_INFINITY,
        max: f64::INFINITY,
    };
    pub const POSITIVE: Support = Support {
        min: POSITIVE_EPS,
        max: f64::INFINITY,
    };
    pub const NONNEGATIVE: Support = Support {
        min: 0.0,
        max: f64::INFINITY,
    };
    pub const EFFICIENCY: Support = Support {
        min: POSITIVE_EPS,
        max: 1.0,
    };

    pub fn contains(&self, v: f64) -> bool {
        v >= self.min && v <= self.max
    }

    pub fn clamp(&self, v: f64) -> f64 {
        v.max(self.min).min(self.max)
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct DomainParamSpec {
    name: String,
    dist: Distribution,
    support: Support,
    units: String,
}

impl DomainParamSpec {
    /// Validates `dist` and `support`. Uniform bounds may be given in either
    /// order.
    pub fn new(name: impl Into<String>, dist: Distribution, support: Support) -> Result<Self> {
        let name = name.into();
        let invalid = |reason: String| Error::InvalidParam {
            name: name.clone(),
            reason,
        };
        let finite = |v: f64, what: &str| {
            if v.is_finite() {
                Ok(())
            } else {
                Err(invalid(format!("{what} must be finite, got {v}")))
            }
        };
        let dist = match dist {
            Distribution::Normal { mean, std } => {
                finite(mean, "mean")?;
                finite(std, "std")?;
                if std < 0.0 {
                    return Err(invalid(format!("std must be >= 0, got {std}")));
                }
                Distribution::Normal { mean, std }
            }
            Distribution::Uniform { lo, hi } => {
                finite(lo, "lo")?;
                finite(hi, "hi")?;
                Distribution::Uniform {
                    lo: lo.min(hi),
                    hi: lo.max(hi),
                }
            }
            Distribution::TwoPoint { a, b, prob_b } => {
                finite(a, "a")?;
                finite(b, "b")?;
                if !(0.0..=1.0).contains(&prob_b) {
                    return Err(invalid(format!("prob_b must lie in [0, 1], got {prob_b}")));
                }
                Distribution::TwoPoint { a, b, prob_b }
            }
            Distribution::Point { value } => {
                finite(value, "value")?;
                Distribution::Point { value }
            }
        };
        if support.min.is_nan() || support.max.is_nan() || support.min > support.max {
            return Err(invalid(format!(
                "support [{}, {}] is empty",
                support.min, support.max
            )));
        }
        Ok(DomainParamSpec {
            name,
            dist,
            support,
            units: String::new(),
        })
    }

    pub fn normal(name: impl Into<String>, mean: f64, std: f64, support: Support) -> Result<Self> {
        Self::new(name, Distribution::Normal { mean, std }, support)
    }

    pub fn uniform(name: impl Into<String>, lo: f64, hi: f64, support: Support) -> Result<Self> {
        Self::new(name, Distribution::Uniform { lo, hi }, support)
    }

    pub fn two_point(name: impl Into<String>, a: f64, b: f64, prob_b: f64) -> Result<Self> {
        Self::new(name, Distribution::TwoPoint { a, b, prob_b }, Support::UNBOUNDED)
    }

    pub fn point(name: impl Into<String>, value: f64) -> Result<Self> {
        Self::new(name, Distribution::Point { value }, Support::UNBOUNDED)
    }

    pub fn with_units(mut self, units: impl Into<String>) -> Self {
        self.units = units.into();
        self
    }

    pub fn name(&self) -> &str {
        &self.name
    }

    pub fn distribution(&self) -> &Distribution {
        &self.dist
    }

    pub fn support(&self) -> Support {
        self.support
    }

    pub fn units(&self) -> &str {
        &self.units
    }

    pub fn sample<R: Rng + ?Sized>(&self, rng: &mut R) -> f64 {
        let mut v = self.dist.draw(rng);
        for _ in 1..MAX_REDRAWS {
            if self.support.contains(v) {
                return v;
            }
            v = self.dist.draw(rng);
        }
        self.support.clamp(v)
    }

    pub fn nominal(&self) -> f64 {
        self.support.clamp(self.dist.nominal())
    }
}

/// One realization ξ of the domain parameters.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct DomainParamSet {
    values: Vec<(String, f64)>,
}

impl DomainParamSet {
    pub fn get(&self, name: &str) -> Result<f64> {
        self.values
            .iter()
            .find(|(n, _)| n == name)
            .map(|(_, v)| *v)
            .ok_or_else(|| Error::UnknownParam(name.to_owned()))
    }

    /// Replaces the value of an existing parameter.
    pub fn set(&mut self, name: &str, value: f64) -> Result<()> {
        let slot = self
            .values
            .iter_mut()
            .find(|(n, _)| n == name)
            .ok_or_else(|| Error::UnknownParam(name.to_owned()))?;
        slot.1 = value;
        Ok(())
    }

    pub fn iter(&self) -> impl Iterator<Item = (&str, f64)> {
        self.values.iter().map(|(n, v)| (n.as_str(), *v))
    }

    pub fn len(&self) -> usize {
        self.values.len()
    }

    pub fn is_empty(&self) -> bool {
        self.values.is_empty()
    }
}

/// ν(ξ; φ): independent per-parameter distributions with unique names.
#[derive(Clone, Debug, PartialEq)]
pub struct DomainDistribution {
    specs: Vec<DomainParamSpec>,
}

impl DomainDistribution {
    pub fn new(specs: Vec<DomainParamSpec>) -> Result<Self> {
        for (i, s) in specs.iter().enumerate() {
            if specs[..i].iter().any(|o| o.name == s.name) {
                return Err(Error::DuplicateParam(s.name.clone()));
            }
        }
        Ok(DomainDistribution { specs })
    }

    pub fn specs(&self) -> &[DomainParamSpec] {
        &self.specs
    }

    pub fn spec(&self, name: &str) -> Option<&DomainParamSpec> {
        self.specs.iter().find(|s| s.name == name)
    }

    /// Swaps in a new spec for an existing parameter name.
    pub fn replace(&mut self, spec: DomainParamSpec) -> Result<()> {
        let slot = self
            .specs
            .iter_mut()
            .find(|s| s.name == spec.name)
            .ok_or_else(|| Error::UnknownParam(spec.name.clone()))?;
        *slot = spec;
        Ok(())
    }

    pub fn sample<R: Rng + ?Sized>(&self, rng: &mut R) -> DomainParamSet {
        sample_domain(self, rng)
    }

    pub fn sample_n<R: Rng + ?Sized>(&self, n: usize, rng: &mut R) -> Vec<DomainParamSet> {
        (0..n).map(|_| sample_domain(self, rng)).collect()
    }

    pub fn nominal(&self) -> DomainParamSet {
        nominal_domain(self)
    }
}

/// Draws each parameter independently from its spec.
pub fn sample_domain<R: Rng + ?Sized>(dist: &DomainDistribution, rng: &mut R) -> DomainParamSet {
    DomainParamSet {
        values: dist
            .specs
            .iter()
            .map(|s| (s.name.clone(), s.sample(rng)))
            .collect(),
    }
}

/// Mean for normal, midpoint for uniform, the more probable value for
/// two-point (`a` on ties).
pub fn nominal_domain(dist: &DomainDistribution) -> DomainParamSet {
    DomainParamSet {
        values: dist
            .specs
            .iter()
            .map(|s| (s.name.clone(), s.nominal()))
            .collect(),
    }
}
