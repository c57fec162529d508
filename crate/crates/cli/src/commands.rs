//! Implementations of the `catapult`, `train`, `sweep` and `report`
//! subcommands. Every function writes its files below `cfg.out_dir` and
//! returns the in-memory results as well.

use std::fmt::Write as _;
use std::fs;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};
use spota::catapult::{catapult_study, StudyResult};
use spota::env::rollout_returns;
use spota::polopt::{make_optimizer, policy_from_str, policy_to_string, PolOptSpec, PolOptTraceRow, PolicyParams};
use spota::spota::{spota_run, IterationRecord, SpotaResult};
use spota::stats::{mean, std_dev};
use spota::{SeedKey, Stream};

use crate::config::Config;
use crate::error::{CliError, Result};

#[derive(Clone, Copy, Debug, PartialEq, Eq, clap::ValueEnum)]
pub enum TrainMethod {
    Spota,
    BaselineNominal,
    BaselineEpopt,
}

fn ensure_dir(dir: &Path) -> Result<()> {
    fs::create_dir_all(dir).map_err(|e| CliError::io(dir, e))
}

fn write_file(path: &Path, contents: &str) -> Result<()> {
    fs::write(path, contents).map_err(|e| CliError::io(path, e))
}

fn read_file(path: &Path) -> Result<String> {
    fs::read_to_string(path).map_err(|e| CliError::io(path, e))
}

pub fn catapult_csv(study: &StudyResult) -> String {
    let mut out = String::from(
        "n,mean_J_opt_n,std_J_opt_n,mean_J_cand,std_J_cand,mean_J_true_opt,mean_OG,std_OG,mean_OGhat,std_OGhat,SOB\n",
    );
    for r in &study.rows {
        writeln!(
            out,
            "{},{},{},{},{},{},{},{},{},{},{}",
            r.n,
            r.mean_j_opt_n,
            r.std_j_opt_n,
            r.mean_j_cand,
            r.std_j_cand,
            r.mean_j_true_opt,
            r.mean_og,
            r.std_og,
            r.mean_og_hat,
            r.std_og_hat,
            r.sob
        )
        .unwrap();
    }
    out
}

/// Runs the catapult study and writes `catapult.csv`.
pub fn run_catapult(cfg: &Config) -> Result<StudyResult> {
    let study = catapult_study(&cfg.catapult, cfg.seed)?;
    ensure_dir(&cfg.out_dir)?;
    write_file(&cfg.out_dir.join("catapult.csv"), &catapult_csv(&study))?;
    Ok(study)
}

#[derive(Clone, Debug)]
pub struct TrainOutput {
    pub policy: PolicyParams,
    /// SPOTA trace; empty for the baselines.
    pub trace: Vec<IterationRecord>,
    /// Optimizer traces, one per optimizer run (one per SPOTA candidate).
    pub polopt_traces: Vec<Vec<PolOptTraceRow>>,
    pub spota: Option<SpotaResult>,
}

pub fn trace_csv(trace: &[IterationRecord]) -> String {
    let mut out = String::from("iteration,n_c,n_r,mean_gap,q_alpha,ucbog,negative_fraction,stop\n");
    for r in trace {
        writeln!(
            out,
            "{},{},{},{},{},{},{},{}",
            r.iteration, r.n_c, r.n_r, r.mean_gap, r.q_alpha, r.ucbog, r.negative_fraction, r.stop
        )
        .unwrap();
    }
    out
}

pub fn trace_jsonl(trace: &[IterationRecord]) -> Result<String> {
    let mut out = String::new();
    for r in trace {
        out.push_str(&serde_json::to_string(r)?);
        out.push('\n');
    }
    Ok(out)
}

pub fn polopt_trace_csv(traces: &[Vec<PolOptTraceRow>]) -> String {
    let mut out = String::from("run,iteration,mean_return,std_return\n");
    for (run, t) in traces.iter().enumerate() {
        for r in t {
            writeln!(out, "{run},{},{},{}", r.iteration, r.mean_return, r.std_return).unwrap();
        }
    }
    out
}

fn baseline_spec(cfg: &Config) -> PolOptSpec {
    let mut spec = cfg.polopt.clone();
    if let Some(it) = cfg.train.baseline_iterations {
        spec.iterations = it;
    }
    spec
}

/// Trains a policy without writing anything.
pub fn train(cfg: &Config, method: TrainMethod, on_iteration: &mut dyn FnMut(&IterationRecord)) -> Result<TrainOutput> {
    let factory = cfg.factory()?;
    let master = SeedKey::new(cfg.seed);
    match method {
        TrainMethod::Spota => {
            let optimizer = make_optimizer(&cfg.polopt)?;
            let res = spota_run(
                factory.as_ref(),
                &cfg.spota,
                &cfg.polopt,
                optimizer.as_ref(),
                cfg.architecture(),
                cfg.seed,
                on_iteration,
            )?;
            Ok(TrainOutput {
                policy: res.policy.clone(),
                trace: res.trace(),
                polopt_traces: res.iterations.iter().map(|d| d.candidate_trace.clone()).collect(),
                spota: Some(res),
            })
        }
        TrainMethod::BaselineNominal | TrainMethod::BaselineEpopt => {
            let mut spec = baseline_spec(cfg);
            let dist = factory.distribution();
            let domains = if method == TrainMethod::BaselineNominal {
                vec![dist.nominal()]
            } else {
                spec.cvar_epsilon = Some(spec.cvar_epsilon.unwrap_or(cfg.train.epopt_epsilon));
                dist.sample_n(
                    cfg.train.epopt_domains,
                    &mut master.label("epopt-domains").rng(Stream::DomainSampling),
                )
            };
            let init = PolicyParams::random(cfg.architecture(), spec.init_log_std, master.label("init"))?;
            let out = make_optimizer(&spec)?.optimize(factory.as_ref(), &domains, &init, master.label("baseline"))?;
            Ok(TrainOutput {
                policy: out.policy,
                trace: Vec::new(),
                polopt_traces: vec![out.trace],
                spota: None,
            })
        }
    }
}

/// Trains and writes `policy.txt`, `polopt_trace.csv`, the resolved
/// `config.toml` and, for SPOTA, `trace.csv` and `trace.jsonl`.
pub fn run_train(cfg: &Config, method: TrainMethod, on_iteration: &mut dyn FnMut(&IterationRecord)) -> Result<TrainOutput> {
    let out = train(cfg, method, on_iteration)?;
    let dir = &cfg.out_dir;
    ensure_dir(dir)?;
    write_file(&dir.join("policy.txt"), &policy_to_string(&out.policy))?;
    write_file(&dir.join("polopt_trace.csv"), &polopt_trace_csv(&out.polopt_traces))?;
    cfg.save(&dir.join("config.toml"))?;
    if method == TrainMethod::Spota {
        write_file(&dir.join("trace.csv"), &trace_csv(&out.trace))?;
        write_file(&dir.join("trace.jsonl"), &trace_jsonl(&out.trace)?)?;
    }
    Ok(out)
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SweepRow {
    pub value: f64,
    pub mean_return: f64,
    pub std_return: f64,
    pub rollouts: usize,
    pub is_nominal: bool,
}

/// Evaluates `policy` on the nominal domain with `cfg.sweep.param` set to
/// each sweep value, without observation noise. Rollout `r` uses the key
/// `SeedKey::new(cfg.seed).label("sweep").child(r)` for every value and
/// every policy, so all cells share initial states.
pub fn sweep_policy(cfg: &Config, policy: &PolicyParams) -> Result<Vec<SweepRow>> {
    let factory = cfg.factory_with_noise(false)?;
    let nominal = factory.distribution().nominal();
    let nominal_value = nominal.get(&cfg.sweep.param)?;
    let key = SeedKey::new(cfg.seed).label("sweep");
    cfg.sweep
        .values
        .iter()
        .map(|&v| {
            let mut dom = nominal.clone();
            dom.set(&cfg.sweep.param, v)?;
            let returns = rollout_returns(factory.as_ref(), &dom, policy, cfg.sweep.rollouts, key, cfg.polopt.gamma)?;
            Ok(SweepRow {
                value: v,
                mean_return: mean(&returns),
                std_return: std_dev(&returns),
                rollouts: returns.len(),
                is_nominal: v == nominal_value,
            })
        })
        .collect()
}

pub fn load_policy(path: &Path) -> Result<PolicyParams> {
    policy_from_str(&read_file(path)?).map_err(|e| CliError::Input(format!("{}: {e}", path.display())))
}

pub fn sweep_csv(name: &str, param: &str, rows: &[SweepRow]) -> String {
    let mut out = String::from("policy,param,value,mean_return,std_return,rollouts,is_nominal\n");
    for r in rows {
        writeln!(
            out,
            "{name},{param},{},{},{},{},{}",
            r.value, r.mean_return, r.std_return, r.rollouts, r.is_nominal
        )
        .unwrap();
    }
    out
}

/// Sweeps every policy file and writes `sweep_<file stem>.csv` for each.
pub fn run_sweep(cfg: &Config, policies: &[PathBuf]) -> Result<Vec<PathBuf>> {
    if policies.is_empty() {
        return Err(CliError::Input("sweep needs at least one --policy".into()));
    }
    ensure_dir(&cfg.out_dir)?;
    let mut written = Vec::new();
    for path in policies {
        let policy = load_policy(path)?;
        if policy.arch() != &cfg.architecture() {
            return Err(CliError::Input(format!(
                "{}: policy architecture does not match env `{:?}`",
                path.display(),
                cfg.env.name
            )));
        }
        let rows = sweep_policy(cfg, &policy)?;
        let stem = path
            .file_stem()
            .map(|s| s.to_string_lossy().into_owned())
            .unwrap_or_else(|| "policy".into());
        let out = cfg.out_dir.join(format!("sweep_{stem}.csv"));
        write_file(&out, &sweep_csv(&stem, &cfg.sweep.param, &rows))?;
        written.push(out);
    }
    Ok(written)
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ReportRow {
    pub iteration: usize,
    pub n_c: usize,
    pub n_r: usize,
    pub runs: usize,
    pub mean_ucbog: f64,
    pub std_ucbog: f64,
    pub mean_negative_fraction: f64,
    pub stopped: usize,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Report {
    pub runs: usize,
    pub iterations: Vec<ReportRow>,
    /// Whether the across-run mean UCBOG never increases.
    pub mean_ucbog_nonincreasing: bool,
}

pub fn parse_trace_jsonl(text: &str) -> Result<Vec<IterationRecord>> {
    text.lines()
        .filter(|l| !l.trim().is_empty())
        .map(|l| serde_json::from_str(l).map_err(CliError::from))
        .collect()
}

/// Aggregates SPOTA traces of several runs iteration by iteration; all runs
/// must follow the same `n_c`/`n_r` schedule.
pub fn aggregate_traces(traces: &[Vec<IterationRecord>]) -> Result<Report> {
    if traces.is_empty() {
        return Err(CliError::Input("report needs at least one trace".into()));
    }
    let longest = traces.iter().map(Vec::len).max().unwrap_or(0);
    let mut rows = Vec::with_capacity(longest);
    for it in 0..longest {
        let recs: Vec<&IterationRecord> = traces.iter().filter_map(|t| t.get(it)).collect();
        let (n_c, n_r) = (recs[0].n_c, recs[0].n_r);
        if recs.iter().any(|r| r.n_c != n_c || r.n_r != n_r || r.iteration != it) {
            return Err(CliError::Input(format!(
                "traces disagree on the sample-size schedule at iteration {it}"
            )));
        }
        let u: Vec<f64> = recs.iter().map(|r| r.ucbog).collect();
        let neg: Vec<f64> = recs.iter().map(|r| r.negative_fraction).collect();
        rows.push(ReportRow {
            iteration: it,
            n_c,
            n_r,
            runs: recs.len(),
            mean_ucbog: mean(&u),
            std_ucbog: std_dev(&u),
            mean_negative_fraction: mean(&neg),
            stopped: recs.iter().filter(|r| r.stop).count(),
        });
    }
    let nonincreasing = rows.windows(2).all(|w| w[1].mean_ucbog <= w[0].mean_ucbog);
    Ok(Report {
        runs: traces.len(),
        iterations: rows,
        mean_ucbog_nonincreasing: nonincreasing,
    })
}

/// Reads `trace.jsonl` files and writes `report.json`.
pub fn run_report(cfg: &Config, traces: &[PathBuf]) -> Result<Report> {
    let parsed = traces
        .iter()
        .map(|p| parse_trace_jsonl(&read_file(p)?))
        .collect::<Result<Vec<_>>>()?;
    let report = aggregate_traces(&parsed)?;
    ensure_dir(&cfg.out_dir)?;
    let mut json = serde_json::to_string_pretty(&report)?;
    json.push('\n');
    write_file(&cfg.out_dir.join("report.json"), &json)?;
    Ok(report)
}
