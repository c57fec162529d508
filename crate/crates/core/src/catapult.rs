//! Analytic two-planet catapult problem.
//!
//! A spring catapult with pre-extension `x` and stiffness `k` shoots a mass
//! `m` vertically under gravity `g`; the policy is the spring extension θ and
//! the return is the negative apex height. Domains are either Mars or Venus,
//! Venus with probability ψ. All optima are closed-form, which makes the
//! problem a ground truth for optimality-gap and bias estimates.

use rand::Rng;
use rand_distr::{Distribution as _, Normal};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::domain::{DomainDistribution, DomainParamSet, DomainParamSpec};
use crate::env::{Env, EnvFactory, Step};
use crate::error::{Error, Result};
use crate::rng::{SeedKey, Stream};
use crate::stats::{mean, std_dev};

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct CatapultDomain {
    pub g: f64,
    pub k: f64,
    pub x: f64,
}

pub const MARS: CatapultDomain = CatapultDomain {
    g: 3.71,
    k: 1000.0,
    x: 0.5,
};

pub const VENUS: CatapultDomain = CatapultDomain {
    g: 8.87,
    k: 3000.0,
    x: 1.5,
};

impl CatapultDomain {
    pub fn validate(&self) -> Result<()> {
        if !(self.g > 0.0 && self.k > 0.0 && self.x.is_finite()) {
            return Err(Error::InvalidArgument(format!(
                "catapult domain needs g > 0, k > 0, finite x; got {self:?}"
            )));
        }
        Ok(())
    }
}

/// Apex height `k (θ − x)² / (2 m g)`.
pub fn catapult_height(theta: f64, dom: &CatapultDomain, m: f64) -> f64 {
    dom.k * (theta - dom.x).powi(2) / (2.0 * m * dom.g)
}

pub fn catapult_return(theta: f64, dom: &CatapultDomain, m: f64) -> f64 {
    -catapult_height(theta, dom, m)
}

/// Minimizer of the mixture `w_M h_M + w_V h_V` for nonnegative weights.
fn weighted_opt(w_m: f64, w_v: f64, mars: &CatapultDomain, venus: &CatapultDomain) -> f64 {
    let c_m = w_m * mars.k * venus.g;
    let c_v = w_v * venus.k * mars.g;
    (mars.x * c_m + venus.x * c_v) / (c_m + c_v)
}

/// Maximizer of the sample-average return over `n_m` Mars and `n_v` Venus
/// domains.
pub fn catapult_opt_policy(
    n_m: usize,
    n_v: usize,
    mars: &CatapultDomain,
    venus: &CatapultDomain,
) -> Result<f64> {
    if n_m + n_v == 0 {
        return Err(Error::InvalidArgument(
            "optimal catapult policy needs at least one domain".into(),
        ));
    }
    Ok(match (n_m, n_v) {
        (_, 0) => mars.x,
        (0, _) => venus.x,
        _ => weighted_opt(n_m as f64, n_v as f64, mars, venus),
    })
}

/// Maximizer of the expected return when Venus has probability `psi`.
pub fn catapult_true_opt(psi: f64, mars: &CatapultDomain, venus: &CatapultDomain) -> Result<f64> {
    if !(0.0..=1.0).contains(&psi) {
        return Err(Error::InvalidArgument(format!("psi must lie in [0, 1], got {psi}")));
    }
    Ok(if psi == 0.0 {
        mars.x
    } else if psi == 1.0 {
        venus.x
    } else {
        weighted_opt(1.0 - psi, psi, mars, venus)
    })
}

/// Expected return `−((1 − ψ) h_M + ψ h_V)`.
pub fn catapult_expected_return(
    theta: f64,
    psi: f64,
    mars: &CatapultDomain,
    venus: &CatapultDomain,
    m: f64,
) -> f64 {
    -((1.0 - psi) * catapult_height(theta, mars, m) + psi * catapult_height(theta, venus, m))
}

/// Sample-average return over `domains`.
pub fn catapult_jhat(theta: f64, domains: &[CatapultDomain], m: f64) -> Result<f64> {
    if domains.is_empty() {
        return Err(Error::InvalidArgument("sample-average return needs domains".into()));
    }
    Ok(-domains.iter().map(|d| catapult_height(theta, d, m)).sum::<f64>() / domains.len() as f64)
}

/// Sample-average return given only the Venus count among `n` domains.
pub fn catapult_jhat_counts(
    theta: f64,
    n: usize,
    n_venus: usize,
    mars: &CatapultDomain,
    venus: &CatapultDomain,
    m: f64,
) -> Result<f64> {
    if n == 0 || n_venus > n {
        return Err(Error::InvalidArgument(format!(
            "invalid domain counts: {n_venus} Venus out of {n}"
        )));
    }
    let frac_v = n_venus as f64 / n as f64;
    Ok(catapult_expected_return(theta, frac_v, mars, venus, m))
}

/// Simulation optimization bias `E[max_θ Ĵ_n(θ)] − max_θ J(θ)` computed
/// exactly by summing over the Binomial(n, ψ) Venus count.
pub fn catapult_sob_exact(
    n: usize,
    psi: f64,
    mars: &CatapultDomain,
    venus: &CatapultDomain,
    m: f64,
) -> Result<f64> {
    if n == 0 {
        return Err(Error::InvalidArgument("SOB needs n >= 1".into()));
    }
    let theta_star = catapult_true_opt(psi, mars, venus)?;
    let j_star = catapult_expected_return(theta_star, psi, mars, venus, m);
    let mut expected = 0.0;
    for n_v in 0..=n {
        let p = binomial_pmf(n, n_v, psi);
        if p == 0.0 {
            continue;
        }
        let theta_n = catapult_opt_policy(n - n_v, n_v, mars, venus)?;
        expected += p * catapult_jhat_counts(theta_n, n, n_v, mars, venus, m)?;
    }
    Ok(expected - j_star)
}

fn binomial_pmf(n: usize, k: usize, p: f64) -> f64 {
    if p == 0.0 {
        return if k == 0 { 1.0 } else { 0.0 };
    }
    if p == 1.0 {
        return if k == n { 1.0 } else { 0.0 };
    }
    let ln_choose: f64 = (1..=k).map(|i| ((n - k + i) as f64 / i as f64).ln()).sum();
    (ln_choose + k as f64 * p.ln() + (n - k) as f64 * (1.0 - p).ln()).exp()
}

/// How the perturbed candidate θ^c is obtained.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum CandidateSet {
    /// θ^c is drawn around the optimum of a second, independent set of `n`
    /// domains and then scored on the evaluation set.
    Independent,
    /// θ^c is drawn around the optimum of the evaluation set itself.
    Shared,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct CatapultStudyConfig {
    pub mass: f64,
    pub psi: f64,
    pub sigma_theta: f64,
    pub n_grid: Vec<usize>,
    pub n_seeds: usize,
    pub candidate_set: CandidateSet,
    pub mars: CatapultDomain,
    pub venus: CatapultDomain,
}

impl Default for CatapultStudyConfig {
    fn default() -> Self {
        CatapultStudyConfig {
            mass: 1.0,
            psi: 0.7,
            sigma_theta: 0.15,
            n_grid: (1..=30).collect(),
            n_seeds: 100,
            candidate_set: CandidateSet::Independent,
            mars: MARS,
            venus: VENUS,
        }
    }
}

impl CatapultStudyConfig {
    pub fn validate(&self) -> Result<()> {
        let bad = |msg: String| Err(Error::InvalidArgument(msg));
        if !(self.mass > 0.0 && self.mass.is_finite()) {
            return bad(format!("mass must be > 0, got {}", self.mass));
        }
        if !(0.0..=1.0).contains(&self.psi) {
            return bad(format!("psi must lie in [0, 1], got {}", self.psi));
        }
        if !(self.sigma_theta >= 0.0 && self.sigma_theta.is_finite()) {
            return bad(format!("sigma_theta must be >= 0, got {}", self.sigma_theta));
        }
        if self.n_grid.is_empty() || self.n_grid[0] == 0 || self.n_grid.windows(2).any(|w| w[0] >= w[1]) {
            return bad("n_grid must be strictly increasing positive integers".into());
        }
        if self.n_seeds == 0 {
            return bad("n_seeds must be >= 1".into());
        }
        self.mars.validate()?;
        self.venus.validate()
    }
}

/// Outcome of one seed at one sample size.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SeedRecord {
    pub n_venus: usize,
    pub theta_opt_n: f64,
    pub theta_cand: f64,
    /// Ĵ_n(θ*_n).
    pub j_opt_n: f64,
    /// Ĵ_n(θ^c).
    pub j_cand: f64,
    /// Ĵ_n(θ*).
    pub j_true_opt: f64,
    /// J(θ*) − J(θ^c).
    pub og: f64,
    /// Ĵ_n(θ*_n) − Ĵ_n(θ^c).
    pub og_hat: f64,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct StudyRow {
    pub n: usize,
    pub mean_j_opt_n: f64,
    pub std_j_opt_n: f64,
    pub mean_j_cand: f64,
    pub std_j_cand: f64,
    pub mean_j_true_opt: f64,
    pub mean_og: f64,
    pub std_og: f64,
    pub mean_og_hat: f64,
    pub std_og_hat: f64,
    /// Exact bias over the Binomial Venus count.
    pub sob: f64,
    /// Seed estimate of the bias, `mean(Ĵ_n(θ*_n)) − J(θ*)`.
    pub sob_seed_mean: f64,
}

#[derive(Clone, Debug, PartialEq)]
pub struct StudyResult {
    pub theta_star: f64,
    pub j_star: f64,
    pub rows: Vec<StudyRow>,
    /// `records[i][s]` belongs to `rows[i]` and seed `s`.
    pub records: Vec<Vec<SeedRecord>>,
}

fn draw_venus_count(n: usize, psi: f64, key: SeedKey) -> usize {
    let mut rng = key.rng(Stream::DomainSampling);
    (0..n).filter(|_| rng.random::<f64>() < psi).count()
}

fn study_seed(cfg: &CatapultStudyConfig, n: usize, key: SeedKey, theta_star: f64, j_star: f64) -> Result<SeedRecord> {
    let (mars, venus, m) = (&cfg.mars, &cfg.venus, cfg.mass);
    let n_venus = draw_venus_count(n, cfg.psi, key.label("eval"));
    let theta_opt_n = catapult_opt_policy(n - n_venus, n_venus, mars, venus)?;
    let center = match cfg.candidate_set {
        CandidateSet::Shared => theta_opt_n,
        CandidateSet::Independent => {
            let n_v_cand = draw_venus_count(n, cfg.psi, key.label("cand"));
            catapult_opt_policy(n - n_v_cand, n_v_cand, mars, venus)?
        }
    };
    let theta_cand = if cfg.sigma_theta == 0.0 {
        center
    } else {
        let normal = Normal::new(center, cfg.sigma_theta)
            .map_err(|e| Error::InvalidArgument(e.to_string()))?;
        normal.sample(&mut key.rng(Stream::Perturbation))
    };
    let jhat = |theta| catapult_jhat_counts(theta, n, n_venus, mars, venus, m);
    let j_opt_n = jhat(theta_opt_n)?;
    let j_cand = jhat(theta_cand)?;
    Ok(SeedRecord {
        n_venus,
        theta_opt_n,
        theta_cand,
        j_opt_n,
        j_cand,
        j_true_opt: jhat(theta_star)?,
        og: j_star - catapult_expected_return(theta_cand, cfg.psi, mars, venus, m),
        og_hat: j_opt_n - j_cand,
    })
}

/// Monte-Carlo study of sample optimum, candidate and true optimum over the
/// sample sizes in `cfg.n_grid`. Seed `s` at size `n` uses the key
/// `SeedKey::new(master_seed).child(n).child(s)`.
pub fn catapult_study(cfg: &CatapultStudyConfig, master_seed: u64) -> Result<StudyResult> {
    cfg.validate()?;
    let (mars, venus, m) = (&cfg.mars, &cfg.venus, cfg.mass);
    let theta_star = catapult_true_opt(cfg.psi, mars, venus)?;
    let j_star = catapult_expected_return(theta_star, cfg.psi, mars, venus, m);
    let master = SeedKey::new(master_seed);
    let mut rows = Vec::with_capacity(cfg.n_grid.len());
    let mut records = Vec::with_capacity(cfg.n_grid.len());
    for &n in &cfg.n_grid {
        let recs = (0..cfg.n_seeds as u64)
            .into_par_iter()
            .map(|s| study_seed(cfg, n, master.child(n as u64).child(s), theta_star, j_star))
            .collect::<Result<Vec<_>>>()?;
        let col = |f: fn(&SeedRecord) -> f64| recs.iter().map(f).collect::<Vec<_>>();
        let j_opt_n = col(|r| r.j_opt_n);
        let j_cand = col(|r| r.j_cand);
        let og = col(|r| r.og);
        let og_hat = col(|r| r.og_hat);
        rows.push(StudyRow {
            n,
            mean_j_opt_n: mean(&j_opt_n),
            std_j_opt_n: std_dev(&j_opt_n),
            mean_j_cand: mean(&j_cand),
            std_j_cand: std_dev(&j_cand),
            mean_j_true_opt: mean(&col(|r| r.j_true_opt)),
            mean_og: mean(&og),
            std_og: std_dev(&og),
            mean_og_hat: mean(&og_hat),
            std_og_hat: std_dev(&og_hat),
            sob: catapult_sob_exact(n, cfg.psi, mars, venus, m)?,
            sob_seed_mean: mean(&j_opt_n) - j_star,
        });
        records.push(recs);
    }
    Ok(StudyResult {
        theta_star,
        j_star,
        rows,
        records,
    })
}

/// Name of the single domain parameter of [`CatapultFactory`]: 1 on Venus,
/// 0 on Mars.
pub const VENUS_PARAM: &str = "venus";

/// One-shot environment: the action is the spring extension, the reward the
/// negative apex height; the observation is a constant zero.
#[derive(Clone, Debug)]
pub struct CatapultEnv {
    dom: CatapultDomain,
    mass: f64,
    done: bool,
}

impl CatapultEnv {
    pub fn new(dom: CatapultDomain, mass: f64) -> Result<Self> {
        dom.validate()?;
        if !(mass > 0.0) {
            return Err(Error::InvalidArgument(format!("mass must be > 0, got {mass}")));
        }
        Ok(CatapultEnv {
            dom,
            mass,
            done: false,
        })
    }
}

impl Env for CatapultEnv {
    fn state_dim(&self) -> usize {
        1
    }
    fn action_dim(&self) -> usize {
        1
    }
    fn horizon(&self) -> usize {
        1
    }
    fn dt(&self) -> f64 {
        1.0
    }
    fn action_limit(&self) -> f64 {
        f64::INFINITY
    }
    fn reset(&mut self, _seed: SeedKey) -> Vec<f64> {
        self.done = false;
        vec![0.0]
    }
    fn step(&mut self, action: &[f64]) -> Result<Step> {
        if action.len() != 1 {
            return Err(Error::DimensionMismatch {
                what: "catapult action",
                expected: 1,
                got: action.len(),
            });
        }
        if self.done {
            return Err(Error::InvalidArgument("catapult episode already finished".into()));
        }
        self.done = true;
        Ok(Step {
            obs: vec![0.0],
            reward: catapult_return(action[0], &self.dom, self.mass),
            done: true,
        })
    }
}

#[derive(Clone, Debug)]
pub struct CatapultFactory {
    pub distribution: DomainDistribution,
    pub mars: CatapultDomain,
    pub venus: CatapultDomain,
    pub mass: f64,
}

impl CatapultFactory {
    pub fn new(psi: f64, mass: f64) -> Result<Self> {
        let spec = DomainParamSpec::two_point(VENUS_PARAM, 0.0, 1.0, psi)?;
        Ok(CatapultFactory {
            distribution: DomainDistribution::new(vec![spec])?,
            mars: MARS,
            venus: VENUS,
            mass,
        })
    }

    pub fn domain_of(&self, domain: &DomainParamSet) -> Result<CatapultDomain> {
        Ok(if domain.get(VENUS_PARAM)? >= 0.5 {
            self.venus
        } else {
            self.mars
        })
    }
}

impl EnvFactory for CatapultFactory {
    fn distribution(&self) -> &DomainDistribution {
        &self.distribution
    }
    fn make(&self, domain: &DomainParamSet) -> Result<Box<dyn Env>> {
        Ok(Box::new(CatapultEnv::new(self.domain_of(domain)?, self.mass)?))
    }
}
