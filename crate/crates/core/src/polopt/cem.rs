//! Cross-entropy method with a diagonal Gaussian search distribution.

use rand_distr::{Distribution as _, StandardNormal};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use super::epopt::epopt_filter;
use crate::error::{Error, Result};
use crate::rng::{SeedKey, Stream};
use crate::stats::{mean, std_dev};

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct CemSpec {
    pub iterations: usize,
    pub population: usize,
    pub elite: usize,
    /// Initial per-coordinate standard deviation.
    pub init_std: f64,
    /// Extra standard deviation added after each refit, multiplied by
    /// `extra_std_decay^iteration`; keeps the search from collapsing early.
    pub extra_std: f64,
    pub extra_std_decay: f64,
}

impl Default for CemSpec {
    fn default() -> Self {
        CemSpec {
            iterations: 50,
            population: 20,
            elite: 5,
            init_std: 0.1,
            extra_std: 0.0,
            extra_std_decay: 0.9,
        }
    }
}

impl CemSpec {
    pub fn validate(&self) -> Result<()> {
        if self.elite == 0 || self.population < self.elite {
            return Err(Error::InvalidArgument(format!(
                "CEM needs population >= elite >= 1, got {} and {}",
                self.population, self.elite
            )));
        }
        if !(self.init_std >= 0.0 && self.extra_std >= 0.0 && self.extra_std_decay >= 0.0) {
            return Err(Error::InvalidArgument("CEM standard deviations must be >= 0".into()));
        }
        Ok(())
    }
}

/// How per-sample outcomes are reduced to one score.
#[derive(Clone, Copy, Debug, PartialEq)]
pub enum Score {
    Mean,
    /// Mean of the worst ⌈εN⌉ outcomes.
    Cvar(f64),
}

impl Score {
    pub fn apply(self, outcomes: &[f64]) -> Result<f64> {
        if outcomes.is_empty() {
            return Err(Error::InvalidArgument("no outcomes to score".into()));
        }
        match self {
            Score::Mean => Ok(mean(outcomes)),
            Score::Cvar(eps) => {
                let idx = epopt_filter(outcomes, eps)?;
                Ok(idx.iter().map(|&i| outcomes[i]).sum::<f64>() / idx.len() as f64)
            }
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct CemIteration {
    pub iteration: usize,
    /// Score of the refitted distribution mean.
    pub mean_score: f64,
    /// Mean and standard deviation of the outcomes at the distribution mean.
    pub outcome_mean: f64,
    pub outcome_std: f64,
    pub best_score: f64,
    /// Average search standard deviation over coordinates.
    pub search_std: f64,
}

#[derive(Clone, Debug, PartialEq)]
pub struct CemResult {
    pub best: Vec<f64>,
    pub best_score: f64,
    pub trace: Vec<CemIteration>,
}

/// Maximizes `score(outcomes(x))`.
///
/// `outcomes` must be deterministic in `x` (sample-average approximation
/// with fixed seeds). Every evaluated point, population members and refitted
/// means alike, competes for the returned best, so the best score never
/// decreases. The population is drawn serially from `key` and evaluated in
/// parallel.
pub fn cem_maximize<F>(outcomes: F, score: Score, init_mean: &[f64], spec: &CemSpec, key: SeedKey) -> Result<CemResult>
where
    F: Fn(&[f64]) -> Result<Vec<f64>> + Sync,
{
    spec.validate()?;
    let dim = init_mean.len();
    let eval = |x: &[f64]| -> Result<(f64, Vec<f64>)> {
        let out = outcomes(x)?;
        let s = score.apply(&out)?;
        if s.is_nan() {
            return Err(Error::NonFinite("CEM objective"));
        }
        Ok((s, out))
    };
    let mut rng = key.rng(Stream::Optimizer);
    let mut mu = init_mean.to_vec();
    let mut sigma = vec![spec.init_std; dim];
    let (mut best_score, _) = eval(&mu)?;
    let mut best = mu.clone();
    let mut trace = Vec::with_capacity(spec.iterations);

    for it in 0..spec.iterations {
        let pop: Vec<Vec<f64>> = (0..spec.population)
            .map(|_| {
                mu.iter()
                    .zip(&sigma)
                    .map(|(m, s)| {
                        let z: f64 = StandardNormal.sample(&mut rng);
                        m + s * z
                    })
                    .collect()
            })
            .collect();
        let scores = pop
            .par_iter()
            .map(|x| eval(x).map(|(s, _)| s))
            .collect::<Result<Vec<f64>>>()?;
        let mut order: Vec<usize> = (0..pop.len()).collect();
        order.sort_by(|&a, &b| scores[b].total_cmp(&scores[a]).then(a.cmp(&b)));
        let elite = &order[..spec.elite];
        if scores[elite[0]] > best_score {
            best_score = scores[elite[0]];
            best = pop[elite[0]].clone();
        }

        let extra = spec.extra_std * spec.extra_std_decay.powi(it as i32);
        let elite_pts: Vec<Vec<f64>> = elite.iter().map(|&i| pop[i].clone()).collect();
        let (m, s) = elite_moments(&elite_pts);
        mu = m;
        sigma = s.iter().map(|s| (s * s + extra * extra).sqrt()).collect();

        let (mean_score, out) = eval(&mu)?;
        if mean_score > best_score {
            best_score = mean_score;
            best = mu.clone();
        }
        trace.push(CemIteration {
            iteration: it,
            mean_score,
            outcome_mean: mean(&out),
            outcome_std: std_dev(&out),
            best_score,
            search_std: if dim == 0 { 0.0 } else { mean(&sigma) },
        });
    }
    Ok(CemResult {
        best,
        best_score,
        trace,
    })
}

/// Mean and population standard deviation per coordinate, as used by the
/// refit.
pub fn elite_moments(points: &[Vec<f64>]) -> (Vec<f64>, Vec<f64>) {
    let dim = points.first().map_or(0, Vec::len);
    (0..dim)
        .map(|d| {
            let vals: Vec<f64> = points.iter().map(|p| p[d]).collect();
            let m = mean(&vals);
            let var = vals.iter().map(|v| (v - m) * (v - m)).sum::<f64>() / vals.len() as f64;
            (m, var.sqrt())
        })
        .unzip()
}
