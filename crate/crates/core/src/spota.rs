//! Policy search with an optimality-gap stopping rule.
//!
//! Each iteration trains a candidate policy on `n_c` sampled domains and
//! `n_G` reference policies, warm-started from the candidate, on `n_r`
//! fresh domains each. The candidate's optimality gap is estimated by
//! comparing both policies on the reference domains with paired seeds; a
//! bootstrap upper confidence bound on the mean gap (UCBOG) decides whether
//! the candidate can be trusted. Sample sizes grow between iterations.

use rand::Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::domain::DomainParamSet;
use crate::env::{estimate_return, EnvFactory};
use crate::error::{Error, Result};
use crate::polopt::{Architecture, PolOptSpec, PolOptTraceRow, PolicyOptimizer, PolicyParams};
use crate::rng::{SeedKey, Stream};
use crate::stats::{mean, quantile_sorted};

/// Growth rule for `n_c` and `n_r`.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Schedule {
    /// `n_k = n_0 (k + 1)`.
    Linear,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct SpotaConfig {
    pub n_c_init: usize,
    pub n_r_init: usize,
    pub n_g: usize,
    /// Rollouts per return estimate.
    pub n_j: usize,
    /// Bootstrap replications.
    pub n_b: usize,
    pub alpha: f64,
    /// Threshold of trust: stop once the UCBOG is at most this.
    pub beta: f64,
    pub max_iterations: usize,
    pub schedule: Schedule,
    /// Initialize each candidate from the previous one.
    pub warm_start: bool,
}

impl Default for SpotaConfig {
    fn default() -> Self {
        SpotaConfig {
            n_c_init: 5,
            n_r_init: 1,
            n_g: 20,
            n_j: 50,
            n_b: 1000,
            alpha: 0.05,
            beta: 60.0,
            max_iterations: 20,
            schedule: Schedule::Linear,
            warm_start: true,
        }
    }
}

impl SpotaConfig {
    pub fn validate(&self) -> Result<()> {
        let bad = |msg: String| Err(Error::InvalidArgument(msg));
        for (name, v) in [
            ("n_c_init", self.n_c_init),
            ("n_r_init", self.n_r_init),
            ("n_g", self.n_g),
            ("n_j", self.n_j),
            ("max_iterations", self.max_iterations),
        ] {
            if v == 0 {
                return bad(format!("{name} must be >= 1"));
            }
        }
        if self.n_b < 100 {
            return bad(format!("n_b must be >= 100, got {}", self.n_b));
        }
        if !(self.alpha > 0.0 && self.alpha < 0.5) {
            return bad(format!("alpha must lie in (0, 0.5), got {}", self.alpha));
        }
        if !(self.beta >= 0.0) {
            return bad(format!("beta must be >= 0, got {}", self.beta));
        }
        Ok(())
    }

    pub fn n_c(&self, k: usize) -> usize {
        nondecr_seq(self.n_c_init, k, self.schedule)
    }

    pub fn n_r(&self, k: usize) -> usize {
        nondecr_seq(self.n_r_init, k, self.schedule)
    }
}

pub fn nondecr_seq(n0: usize, k: usize, schedule: Schedule) -> usize {
    match schedule {
        Schedule::Linear => n0 * (k + 1),
    }
}

/// A trained policy together with the domains it was trained on.
#[derive(Clone, Debug)]
pub struct Solution {
    pub policy: PolicyParams,
    pub domains: Vec<DomainParamSet>,
    pub trace: Vec<PolOptTraceRow>,
}

/// Samples `n_c` domains from `key` and optimizes `init` on them.
pub fn train_candidate(
    factory: &dyn EnvFactory,
    optimizer: &dyn PolicyOptimizer,
    n_c: usize,
    init: &PolicyParams,
    key: SeedKey,
) -> Result<Solution> {
    let domains = factory
        .distribution()
        .sample_n(n_c, &mut key.rng(Stream::DomainSampling));
    let out = optimizer.optimize(factory, &domains, init, key.label("polopt"))?;
    Ok(Solution {
        policy: out.policy,
        domains,
        trace: out.trace,
    })
}

/// Trains `n_g` references; reference `k` samples its `n_r` domains from
/// `key.child(k)` and starts from the candidate with exploration reset to
/// `init_log_std`.
pub fn train_references(
    factory: &dyn EnvFactory,
    optimizer: &dyn PolicyOptimizer,
    candidate: &PolicyParams,
    n_g: usize,
    n_r: usize,
    init_log_std: f64,
    key: SeedKey,
) -> Result<Vec<Solution>> {
    let init = candidate.with_exploration_reset(init_log_std);
    (0..n_g)
        .into_par_iter()
        .map(|k| {
            train_candidate(factory, optimizer, n_r, &init, key.child(k as u64)).map_err(|e| Error::Reference {
                k,
                source: Box::new(e),
            })
        })
        .collect()
}

/// Raw gaps `Ĵ_{n_J}(θ^k, ξ^k_i) − Ĵ_{n_J}(θ^c, ξ^k_i)`; both estimates of
/// cell `(k, i)` use the rollout keys `key.child(k).child(i).child(j)`.
pub fn compare_solutions(
    factory: &dyn EnvFactory,
    candidate: &PolicyParams,
    references: &[Solution],
    n_j: usize,
    gamma: f64,
    key: SeedKey,
) -> Result<Vec<Vec<f64>>> {
    references
        .par_iter()
        .enumerate()
        .map(|(k, r)| {
            r.domains
                .iter()
                .enumerate()
                .map(|(i, dom)| {
                    let base = key.child(k as u64).child(i as u64);
                    let j_ref = estimate_return(factory, dom, &r.policy, n_j, base, gamma)?;
                    let j_cand = estimate_return(factory, dom, candidate, n_j, base, gamma)?;
                    Ok(j_ref - j_cand)
                })
                .collect::<Result<Vec<f64>>>()
        })
        .collect()
}

/// Gap samples after outlier rejection.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct GapSampleSet {
    /// `samples[k][i]`: reference `k`, domain `i`; every entry >= 0.
    pub samples: Vec<Vec<f64>>,
    pub negative_fraction: f64,
}

impl GapSampleSet {
    pub fn flatten(&self) -> Vec<f64> {
        self.samples.iter().flatten().copied().collect()
    }
}

/// Replaces each negative gap `(k, i)` by the first strictly larger gap
/// `(k', i)`, scanning `k' ≠ k` in ascending order over the matrix as
/// updated so far, then clamps remaining negatives to zero.
pub fn reject_outliers(raw: &[Vec<f64>]) -> Result<GapSampleSet> {
    let n_total: usize = raw.iter().map(Vec::len).sum();
    if n_total == 0 {
        return Err(Error::InvalidArgument("empty gap matrix".into()));
    }
    if raw.iter().flatten().any(|g| !g.is_finite()) {
        return Err(Error::NonFinite("gap estimate"));
    }
    let n_r = raw[0].len();
    if raw.iter().any(|row| row.len() != n_r) {
        return Err(Error::InvalidArgument("gap matrix rows differ in length".into()));
    }
    let negatives = raw.iter().flatten().filter(|g| **g < 0.0).count();
    let mut g = raw.to_vec();
    for k in 0..g.len() {
        for i in 0..n_r {
            if g[k][i] >= 0.0 {
                continue;
            }
            for kp in 0..g.len() {
                if kp != k && g[kp][i] > g[k][i] {
                    g[k][i] = g[kp][i];
                    break;
                }
            }
        }
    }
    for v in g.iter_mut().flatten() {
        *v = v.max(0.0);
    }
    Ok(GapSampleSet {
        samples: g,
        negative_fraction: negatives as f64 / n_total as f64,
    })
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct UcbogReport {
    pub mean_gap: f64,
    pub q_alpha: f64,
    pub ucbog: f64,
    pub alpha: f64,
    pub n_samples: usize,
    pub negative_fraction: f64,
    pub stop: bool,
}

/// Basic-bootstrap upper bound `max(0, 2·mean − q_α)` where `q_α` is the
/// lower α-quantile of `n_b` resample means.
pub fn bootstrap_ucb(samples: &[f64], n_b: usize, alpha: f64, key: SeedKey) -> Result<(f64, f64, f64)> {
    if samples.len() < 2 {
        return Err(Error::InvalidArgument("bootstrap needs at least 2 samples".into()));
    }
    if n_b == 0 {
        return Err(Error::InvalidArgument("n_b must be >= 1".into()));
    }
    let n = samples.len();
    let mut rng = key.rng(Stream::Bootstrap);
    let mut means: Vec<f64> = (0..n_b)
        .map(|_| (0..n).map(|_| samples[rng.random_range(0..n)]).sum::<f64>() / n as f64)
        .collect();
    means.sort_by(f64::total_cmp);
    let m = mean(samples);
    let q = quantile_sorted(&means, alpha)?;
    Ok((m, q, (2.0 * m - q).max(0.0)))
}

pub fn ucbog(gaps: &GapSampleSet, n_b: usize, alpha: f64, beta: f64, key: SeedKey) -> Result<UcbogReport> {
    let samples = gaps.flatten();
    let (mean_gap, q_alpha, ucb) = bootstrap_ucb(&samples, n_b, alpha, key)?;
    Ok(UcbogReport {
        mean_gap,
        q_alpha,
        ucbog: ucb,
        alpha,
        n_samples: samples.len(),
        negative_fraction: gaps.negative_fraction,
        stop: ucb <= beta,
    })
}

/// One line of the SPOTA trace.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct IterationRecord {
    pub iteration: usize,
    pub n_c: usize,
    pub n_r: usize,
    pub mean_gap: f64,
    pub q_alpha: f64,
    pub ucbog: f64,
    pub negative_fraction: f64,
    pub stop: bool,
}

#[derive(Clone, Debug)]
pub struct IterationDetail {
    pub record: IterationRecord,
    pub raw_gaps: Vec<Vec<f64>>,
    pub gaps: GapSampleSet,
    pub candidate_trace: Vec<PolOptTraceRow>,
}

#[derive(Clone, Debug)]
pub struct SpotaResult {
    /// The final candidate.
    pub policy: PolicyParams,
    pub iterations: Vec<IterationDetail>,
    /// False when the loop ended at `max_iterations` without reaching β.
    pub reached_threshold: bool,
}

impl SpotaResult {
    pub fn trace(&self) -> Vec<IterationRecord> {
        self.iterations.iter().map(|d| d.record.clone()).collect()
    }
}

/// Runs the full loop from the master seed.
///
/// Iteration `j` uses `SeedKey::new(seed).child(j)` with labelled
/// sub-keys for the candidate, the references, the comparison and the
/// bootstrap. The initial policy comes from the `"init"` label of the
/// master key.
pub fn spota_run(
    factory: &dyn EnvFactory,
    cfg: &SpotaConfig,
    spec: &PolOptSpec,
    optimizer: &dyn PolicyOptimizer,
    arch: Architecture,
    seed: u64,
    on_iteration: &mut dyn FnMut(&IterationRecord),
) -> Result<SpotaResult> {
    cfg.validate()?;
    spec.validate()?;
    let master = SeedKey::new(seed);
    let init = PolicyParams::random(arch, spec.init_log_std, master.label("init"))?;
    let mut candidate = init.clone();
    let mut iterations = Vec::new();
    let mut reached = false;
    for j in 0..cfg.max_iterations {
        let key = master.child(j as u64);
        let (n_c, n_r) = (cfg.n_c(j), cfg.n_r(j));
        let start = if cfg.warm_start { &candidate } else { &init };
        let cand = train_candidate(factory, optimizer, n_c, start, key.label("cand"))?;
        let refs = train_references(
            factory,
            optimizer,
            &cand.policy,
            cfg.n_g,
            n_r,
            spec.init_log_std,
            key.label("ref"),
        )?;
        let raw = compare_solutions(factory, &cand.policy, &refs, cfg.n_j, spec.gamma, key.label("cmp"))?;
        let gaps = reject_outliers(&raw)?;
        let rep = ucbog(&gaps, cfg.n_b, cfg.alpha, cfg.beta, key.label("boot"))?;
        let record = IterationRecord {
            iteration: j,
            n_c,
            n_r,
            mean_gap: rep.mean_gap,
            q_alpha: rep.q_alpha,
            ucbog: rep.ucbog,
            negative_fraction: rep.negative_fraction,
            stop: rep.stop,
        };
        on_iteration(&record);
        candidate = cand.policy;
        iterations.push(IterationDetail {
            record,
            raw_gaps: raw,
            gaps,
            candidate_trace: cand.trace,
        });
        if rep.stop {
            reached = true;
            break;
        }
    }
    Ok(SpotaResult {
        policy: candidate,
        iterations,
        reached_threshold: reached,
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn schedule() {
        assert_eq!(nondecr_seq(5, 0, Schedule::Linear), 5);
        assert_eq!(nondecr_seq(5, 3, Schedule::Linear), 20);
        let seq: Vec<usize> = (0..=10).map(|k| nondecr_seq(3, k, Schedule::Linear)).collect();
        assert!(seq.windows(2).all(|w| w[0] <= w[1]));
    }

    #[test]
    fn rejection_examples() {
        let g = reject_outliers(&[vec![-2.0], vec![5.0]]).unwrap();
        assert_eq!(g.samples, vec![vec![5.0], vec![5.0]]);
        assert_eq!(g.negative_fraction, 0.5);
        let g = reject_outliers(&[vec![-2.0, 1.0], vec![-3.0, 0.5]]).unwrap();
        assert_eq!(g.samples, vec![vec![0.0, 1.0], vec![0.0, 0.5]]);
        let clean = vec![vec![1.0, 2.0], vec![0.0, 3.0]];
        assert_eq!(reject_outliers(&clean).unwrap().samples, clean);
    }

    #[test]
    fn degenerate_bootstrap() {
        let (m, q, u) = bootstrap_ucb(&[2.5; 6], 200, 0.05, SeedKey::new(0)).unwrap();
        assert_eq!((m, q, u), (2.5, 2.5, 2.5));
        assert_eq!(bootstrap_ucb(&[0.0; 4], 200, 0.05, SeedKey::new(0)).unwrap().2, 0.0);
        assert!(bootstrap_ucb(&[1.0], 200, 0.05, SeedKey::new(0)).is_err());
    }

    #[test]
    fn config_validation() {
        assert!(SpotaConfig::default().validate().is_ok());
        let bad = SpotaConfig {
            alpha: 0.5,
            ..SpotaConfig::default()
        };
        assert!(bad.validate().is_err());
        let bad = SpotaConfig {
            n_b: 10,
            ..SpotaConfig::default()
        };
        assert!(bad.validate().is_err());
    }
}
