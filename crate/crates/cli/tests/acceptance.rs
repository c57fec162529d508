//! Acceptance suite. Prints one PASS/FAIL line per criterion and exits
//! non-zero if any criterion fails.

use std::collections::BTreeMap;
use std::f64::consts::PI;
use std::path::Path;
use std::process::Command;
use std::time::Instant;

use rand::Rng;
use rand_distr::{Distribution, Exp};
use spota::catapult::{catapult_study, CatapultStudyConfig, StudyResult};
use spota::polopt::pg::{surrogate, surrogate_grad, SurrogateSample};
use spota::polopt::{cem_maximize, cvar_count, epopt_filter, Architecture, CemSpec, PolicyParams, Score};
use spota::sim::qbb::{self, qbb_derived, qbb_dynamics, qbb_reward, RewardBox};
use spota::sim::qcp::{qcp_accelerations, qcp_derived, qcp_dynamics, qcp_energy};
use spota::sim::{rk4_step, BallBalancerParams, CartPoleParams};
use spota::spota::{bootstrap_ucb, reject_outliers};
use spota::stats::{mean, std_err};
use spota::{SeedKey, Stream};
use spota_cli::commands::{sweep_policy, train, TrainMethod};
use spota_cli::Config;

struct Outcome {
    pass: bool,
    detail: String,
}

fn outcome(pass: bool, detail: impl Into<String>) -> Outcome {
    Outcome {
        pass,
        detail: detail.into(),
    }
}

fn within(value: f64, target: f64, rel: f64) -> bool {
    (value - target).abs() <= rel * target.abs()
}

fn c1_catapult(study: &StudyResult, secs: f64) -> Outcome {
    let row = study.rows.iter().find(|r| r.n == 30).expect("n = 30 in default grid");
    let pass = within(row.mean_og, 4.23, 0.15)
        && within(row.mean_og_hat, 4.97, 0.15)
        && within(row.sob, 0.911, 0.25)
        && secs < 60.0;
    outcome(
        pass,
        format!(
            "n=30: OG={:.3} (4.23±15%), OGhat={:.3} (4.97±15%), SOB={:.4} (0.911±25%), {:.2}s",
            row.mean_og, row.mean_og_hat, row.sob, secs
        ),
    )
}

fn suite_study() -> StudyResult {
    let cfg = CatapultStudyConfig {
        n_grid: vec![1, 2, 5, 10, 20, 30],
        n_seeds: 1000,
        ..Default::default()
    };
    catapult_study(&cfg, 0).unwrap()
}

fn c2_jensen(study: &StudyResult) -> Outcome {
    let n_seeds = study.records[0].len();
    let mut worst_z = f64::INFINITY;
    let mut violations = 0;
    for (row, recs) in study.rows.iter().zip(&study.records) {
        let se = row.std_j_opt_n / (n_seeds as f64).sqrt();
        worst_z = worst_z.min((row.mean_j_opt_n - study.j_star) / se);
        violations += recs.iter().filter(|r| r.j_opt_n < r.j_cand).count();
    }
    outcome(
        worst_z >= -2.0 && violations == 0,
        format!("min (mean Jhat_n(theta*_n) - J*)/SE = {worst_z:.2} (>= -2), per-seed violations = {violations}"),
    )
}

/// Largest rise between successive grid points of mean ÔG and of the seed
/// estimate of SOB, in standard errors of the difference.
fn largest_rise(study: &StudyResult) -> (f64, &'static str, usize) {
    let n_seeds = study.records[0].len() as f64;
    let mut worst = (f64::NEG_INFINITY, "", 0);
    for w in study.rows.windows(2) {
        let se_og = (w[0].std_og_hat.powi(2) + w[1].std_og_hat.powi(2)).sqrt() / n_seeds.sqrt();
        let se_sob = (w[0].std_j_opt_n.powi(2) + w[1].std_j_opt_n.powi(2)).sqrt() / n_seeds.sqrt();
        for (z, what) in [
            ((w[1].mean_og_hat - w[0].mean_og_hat) / se_og, "OGhat"),
            ((w[1].sob_seed_mean - w[0].sob_seed_mean) / se_sob, "seed SOB"),
        ] {
            if z > worst.0 {
                worst = (z, what, w[1].n);
            }
        }
    }
    worst
}

fn c3_monotone(suite: &StudyResult, dense: &StudyResult) -> Outcome {
    // The exact SOB column has no sampling error.
    let sob_ok = suite.rows.windows(2).chain(dense.rows.windows(2)).all(|w| w[1].sob <= w[0].sob + 1e-12);
    let (z, what, n) = largest_rise(suite);
    let (dz, dwhat, dn) = largest_rise(dense);
    outcome(
        sob_ok && z <= 2.0,
        format!(
            "exact SOB nonincreasing: {sob_ok}; n in {{1,2,5,10,20,30}}, 1000 seeds: largest step rise {z:.2} SE ({what} at n={n}) (<= 2); \
             info, dense grid 1..30 at 100 seeds: {dz:.2} SE ({dwhat} at n={dn})"
        ),
    )
}

fn c4_coverage() -> Outcome {
    let exp = Exp::new(1.0).unwrap();
    let (reps, n, shift) = (10_000u64, 1000, 0.5);
    let true_mean = shift + 1.0;
    let mut covered = 0;
    for r in 0..reps {
        let key = SeedKey::new(2024).child(r);
        let mut rng = key.rng(Stream::Perturbation);
        let samples: Vec<f64> = (0..n).map(|_| shift + exp.sample(&mut rng)).collect();
        let (_, _, ucb) = bootstrap_ucb(&samples, 1000, 0.05, key.label("boot")).unwrap();
        if ucb >= true_mean {
            covered += 1;
        }
    }
    let rate = covered as f64 / reps as f64;
    outcome(
        (0.935..=0.965).contains(&rate),
        format!("coverage {:.2}% over {reps} repetitions of {n} samples (95 ± 1.5%)", 100.0 * rate),
    )
}

/// Raw gaps, expected gaps after rejection, negative fraction.
type RejectionCase = (Vec<Vec<f64>>, Vec<Vec<f64>>, f64);

fn c5_rejection() -> Outcome {
    let cases: [RejectionCase; 4] = [
        (
            vec![vec![-1.0, -5.0], vec![2.0, -1.0], vec![3.0, -3.0]],
            vec![vec![2.0, 0.0], vec![2.0, 0.0], vec![3.0, 0.0]],
            4.0 / 6.0,
        ),
        (
            vec![vec![1.0, 4.0], vec![-2.0, 5.0], vec![0.5, -1.0]],
            vec![vec![1.0, 4.0], vec![1.0, 5.0], vec![0.5, 4.0]],
            2.0 / 6.0,
        ),
        (
            vec![vec![-3.0, 2.0], vec![-1.0, 1.0], vec![-2.0, 0.0]],
            vec![vec![0.0, 2.0], vec![0.0, 1.0], vec![0.0, 0.0]],
            3.0 / 6.0,
        ),
        (
            vec![vec![0.0, 0.0], vec![-4.0, -4.0], vec![-4.0, 7.0]],
            vec![vec![0.0, 0.0], vec![0.0, 0.0], vec![0.0, 7.0]],
            3.0 / 6.0,
        ),
    ];
    let mut failures = Vec::new();
    for (i, (raw, expect, frac)) in cases.iter().enumerate() {
        let g = reject_outliers(raw).unwrap();
        if &g.samples != expect || (g.negative_fraction - frac).abs() > 1e-15 {
            failures.push(format!("case {i}: got {:?}", g.samples));
        }
    }
    let mut rng = SeedKey::new(5).rng(Stream::Perturbation);
    let mut nonneg = true;
    for _ in 0..1000 {
        let raw: Vec<Vec<f64>> = (0..3).map(|_| (0..2).map(|_| rng.random_range(-5.0..5.0)).collect()).collect();
        nonneg &= reject_outliers(&raw).unwrap().flatten().iter().all(|g| *g >= 0.0);
    }
    outcome(
        failures.is_empty() && nonneg,
        format!(
            "{} hand traces, {} mismatches; 1000 random 3x2 matrices nonnegative after rejection: {nonneg}",
            cases.len(),
            failures.len()
        ) + &failures.join("; "),
    )
}

fn c6_simulators() -> Outcome {
    let mut notes = Vec::new();
    // Rest equilibria.
    let p = CartPoleParams::nominal();
    let d = qcp_derived(&p);
    let qcp_rest = qcp_dynamics(&[0.0; 4], 0.0, &p, &d).unwrap() == [0.0; 4];
    let mut pb = BallBalancerParams::nominal();
    pb.delta_theta_x = 0.0;
    pb.delta_theta_y = 0.0;
    let db = qbb_derived(&pb);
    let qbb_rest = qbb_dynamics(&[0.0; 8], &[0.0; 2], &pb, &db).unwrap() == [0.0; 8];
    notes.push(format!("rest zero: qcp {qcp_rest}, qbb {qbb_rest}"));

    // Energy drift.
    let mut pu = p.clone();
    pu.b_eq = 0.0;
    pu.b_p = 0.0;
    let du = qcp_derived(&pu);
    let f = |s: &[f64; 4], _: &()| {
        let [xdd, add] = qcp_accelerations(s, 0.0, &pu, &du)?;
        Ok([s[2], s[3], xdd, add])
    };
    let s0 = [0.0, PI - 0.3, 0.0, 0.0];
    let e0 = qcp_energy(&s0, &pu, &du);
    let mut s = s0;
    for _ in 0..500 {
        s = rk4_step(f, &s, &(), 0.002).unwrap();
    }
    let drift = (qcp_energy(&s, &pu, &du) - e0).abs() / e0.abs();
    notes.push(format!("energy drift {drift:.1e}"));

    // Ball-Balancer reward range.
    let cfg = spota::sim::BallBalancerConfig::default();
    let b = RewardBox::for_plate(0.275, 10.0);
    let corner = b.state_corner();
    let mut rng = SeedKey::new(1).rng(Stream::InitState);
    let (mut lo, mut hi) = (f64::INFINITY, f64::NEG_INFINITY);
    for _ in 0..100_000 {
        let st: [f64; 8] = std::array::from_fn(|i| corner[i] * rng.random_range(-1.0..=1.0));
        let a = [rng.random_range(-10.0..=10.0), rng.random_range(-10.0..=10.0)];
        let r = qbb_reward(&st, &a, &qbb::Q_DEFAULT, &qbb::R_DEFAULT, cfg.r_min, &b).unwrap();
        lo = lo.min(r);
        hi = hi.max(r);
    }
    notes.push(format!("qbb reward in [{lo:.2e}, {hi:.4}]"));

    // Mass-matrix solve residual.
    let mut resid: f64 = 0.0;
    for _ in 0..1000 {
        let st = [0.0, rng.random_range(-PI..PI), rng.random_range(-2.0..2.0), rng.random_range(-20.0..20.0)];
        let force = rng.random_range(-50.0..50.0);
        let [xdd, add] = qcp_accelerations(&st, force, &p, &d).unwrap();
        let (sa, ca) = st[1].sin_cos();
        let ml = p.m_p * p.l_p;
        let r1 = (p.m_p + d.j_eq) * xdd + ml * ca * add - (force + ml * sa * st[3] * st[3] - p.b_eq * st[2]);
        let r2 = ml * ca * xdd + (d.j_p + ml * p.l_p) * add - (-ml * p.g * sa - p.b_p * st[3]);
        resid = resid.max(r1.abs()).max(r2.abs());
    }
    notes.push(format!("2x2 residual {resid:.1e}"));

    // RK4 order on x'' = -x.
    let osc = |s: &[f64; 2], _: &()| Ok([s[1], -s[0]]);
    let err = |dt: f64| {
        let mut s = [1.0, 0.0];
        for _ in 0..(2.0 / dt).round() as usize {
            s = rk4_step(osc, &s, &(), dt).unwrap();
        }
        ((s[0] - 2f64.cos()).powi(2) + (s[1] + 2f64.sin()).powi(2)).sqrt()
    };
    let order = (err(0.1) / err(0.05)).log2();
    notes.push(format!("RK4 order {order:.3}"));

    let pass = qcp_rest
        && qbb_rest
        && drift <= 1e-6
        && lo >= 1e-4
        && hi <= 1.0
        && resid <= 1e-10
        && (order - 4.0).abs() < 0.15;
    outcome(pass, notes.join(", "))
}

fn c7_optimizers() -> Outcome {
    // Clipped-surrogate gradient.
    let old = PolicyParams::random(Architecture::fnn(4, 1), -0.3, SeedKey::new(1)).unwrap();
    let mut rng = SeedKey::new(2).rng(Stream::Perturbation);
    let samples: Vec<SurrogateSample> = (0..64)
        .map(|_| {
            let obs: Vec<f64> = (0..4).map(|_| rng.random_range(-1.0..1.0)).collect();
            let action = old.sample_action(&obs, &mut rng).unwrap();
            SurrogateSample {
                logp_old: old.log_prob(&obs, &action).unwrap(),
                obs,
                action,
                advantage: rng.random_range(-2.0..2.0),
            }
        })
        .collect();
    let theta: Vec<f64> = old.theta().iter().map(|v| v + rng.random_range(-0.01..0.01)).collect();
    let policy = PolicyParams::new(old.arch().clone(), theta.clone()).unwrap();
    let (_, grad) = surrogate_grad(&policy, &samples, 0.2).unwrap();
    let mut worst_rel: f64 = 0.0;
    for _ in 0..20 {
        let i = rng.random_range(0..theta.len());
        let h = 1e-6;
        let at = |dx: f64| {
            let mut t = theta.clone();
            t[i] += dx;
            surrogate(&PolicyParams::new(old.arch().clone(), t).unwrap(), &samples, 0.2).unwrap()
        };
        let fd = (at(h) - at(-h)) / (2.0 * h);
        worst_rel = worst_rel.max((fd - grad[i]).abs() / fd.abs().max(grad[i].abs()).max(1e-8));
    }

    // CEM on a 1-D quadratic.
    let spec = CemSpec {
        iterations: 50,
        population: 20,
        elite: 5,
        init_std: 1.0,
        ..CemSpec::default()
    };
    let cem = cem_maximize(|x| Ok(vec![-(x[0] - 3.0).powi(2)]), Score::Mean, &[0.0], &spec, SeedKey::new(0)).unwrap();
    let cem_err = (cem.best[0] - 3.0).abs();

    // EPOpt cardinality.
    let mut card_ok = true;
    for n in 1..=200usize {
        let returns: Vec<f64> = (0..n).map(|_| rng.random_range(-1.0..1.0)).collect();
        for eps in [0.05, 0.1, 0.2, 0.33, 0.5, 1.0] {
            let expect = (eps * n as f64).ceil() as usize;
            card_ok &= epopt_filter(&returns, eps).unwrap().len() == expect && cvar_count(n, eps) == expect;
        }
    }
    outcome(
        worst_rel <= 1e-4 && cem_err <= 1e-2 && card_ok,
        format!("surrogate grad max rel err {worst_rel:.1e}, CEM |x - 3| = {cem_err:.1e}, EPOpt cardinality exact: {card_ok}"),
    )
}

const DESK_SCALE: &str = r#"
[env]
name = "qcp"
horizon = 500

[polopt]
method = "cem"
iterations = 10
n_tau = 1

[spota]
n_c_init = 5
n_r_init = 1
n_g = 4
n_j = 10
beta = 0.0
max_iterations = 5
"#;

struct DeskRuns {
    first: Vec<f64>,
    last: Vec<f64>,
    secs: f64,
    spota: Vec<PolicyParams>,
}

fn desk_runs(seeds: &[u64]) -> DeskRuns {
    let base = Config::from_toml_str(DESK_SCALE).unwrap();
    let start = Instant::now();
    let mut runs = DeskRuns {
        first: Vec::new(),
        last: Vec::new(),
        secs: 0.0,
        spota: Vec::new(),
    };
    for &seed in seeds {
        let cfg = Config { seed, ..base.clone() };
        let out = train(&cfg, TrainMethod::Spota, &mut |_| {}).unwrap();
        runs.first.push(out.trace.first().unwrap().ucbog);
        runs.last.push(out.trace.last().unwrap().ucbog);
        runs.spota.push(out.policy);
    }
    runs.secs = start.elapsed().as_secs_f64();
    runs
}

fn c8_trend(runs: &DeskRuns) -> Outcome {
    let diff: Vec<f64> = runs.last.iter().zip(&runs.first).map(|(l, f)| l - f).collect();
    let (m_first, m_last) = (mean(&runs.first), mean(&runs.last));
    let slack = 2.0 * std_err(&diff);
    outcome(
        m_last <= m_first + slack && runs.secs < 1800.0,
        format!(
            "{} seeds: mean UCBOG first {m_first:.2} -> final {m_last:.2} (2 SE of difference {slack:.2}, strictly lower: {}), {:.0}s",
            runs.first.len(),
            m_last < m_first,
            runs.secs
        ),
    )
}

fn c9_sweep(runs: &DeskRuns, seeds: &[u64]) -> Outcome {
    let base = Config::from_toml_str(DESK_SCALE).unwrap();
    let (lo, hi) = (base.sweep.values[0], *base.sweep.values.last().unwrap());
    let mut per_value: BTreeMap<&str, Vec<Vec<f64>>> = BTreeMap::new();
    for (i, &seed) in seeds.iter().enumerate() {
        let cfg = Config { seed, ..base.clone() };
        let nominal = train(&cfg, TrainMethod::BaselineNominal, &mut |_| {}).unwrap().policy;
        // Same sweep seed for every policy so all see identical initial states.
        let sweep_cfg = Config { seed: 0, ..base.clone() };
        for (name, policy) in [("spota", &runs.spota[i]), ("nominal", &nominal)] {
            let rows = sweep_policy(&sweep_cfg, policy).unwrap();
            per_value.entry(name).or_default().push(rows.iter().map(|r| r.mean_return).collect());
        }
    }
    let curve = |name: &str| -> Vec<f64> {
        let runs = &per_value[name];
        (0..runs[0].len()).map(|j| mean(&runs.iter().map(|r| r[j]).collect::<Vec<_>>())).collect()
    };
    let (s, n) = (curve("spota"), curve("nominal"));
    let last = s.len() - 1;
    let fmt = |c: &[f64]| c.iter().map(|v| format!("{v:.0}")).collect::<Vec<_>>().join(" ");
    outcome(
        s[0] >= n[0] && s[last] >= n[last],
        format!(
            "{} seeds, delay {lo}: randomized {:.1} vs nominal {:.1}; delay {hi}: {:.1} vs {:.1} [randomized curve {}; nominal curve {}]",
            seeds.len(),
            s[0],
            n[0],
            s[last],
            n[last],
            fmt(&s),
            fmt(&n)
        ),
    )
}

const DETERMINISM: &str = r#"
[env]
name = "qcp"
horizon = 100

[polopt]
iterations = 2
population = 6
elite = 2
n_tau = 1

[spota]
n_c_init = 2
n_r_init = 1
n_g = 2
n_j = 2
n_b = 200
beta = 0.0
max_iterations = 2

[train]
epopt_domains = 4

[sweep]
values = [0.0, 4.0]
rollouts = 8

[catapult]
n_seeds = 20
"#;

fn read_dir_bytes(dir: &Path) -> BTreeMap<String, Vec<u8>> {
    let mut out = BTreeMap::new();
    for entry in std::fs::read_dir(dir).unwrap() {
        let path = entry.unwrap().path();
        if path.is_file() {
            out.insert(path.file_name().unwrap().to_string_lossy().into_owned(), std::fs::read(&path).unwrap());
        } else {
            for (k, v) in read_dir_bytes(&path) {
                out.insert(format!("{}/{k}", path.file_name().unwrap().to_string_lossy()), v);
            }
        }
    }
    out
}

fn c10_determinism() -> Outcome {
    let tmp = tempfile::tempdir().unwrap();
    let root = tmp.path();
    let cfg_path = root.join("config.toml");
    std::fs::write(&cfg_path, DETERMINISM).unwrap();
    let bin = env!("CARGO_BIN_EXE_spota");
    let out = root.join("out");
    let run = |args: &[&str], sub: &str| {
        let status = Command::new(bin)
            .arg("--config")
            .arg(&cfg_path)
            .arg("--seed")
            .arg("3")
            .arg("--out")
            .arg(out.join(sub))
            .args(args)
            .output()
            .unwrap();
        assert!(status.status.success(), "{args:?}: {}", String::from_utf8_lossy(&status.stderr));
    };
    let s = |p: std::path::PathBuf| p.to_string_lossy().into_owned();
    let all = || {
        run(&["catapult"], "catapult");
        run(&["train", "--method", "spota"], "spota");
        run(&["train", "--method", "baseline-nominal"], "nominal");
        run(&["train", "--method", "baseline-epopt"], "epopt");
        let policies = [s(out.join("spota/policy.txt")), s(out.join("nominal/policy.txt")), s(out.join("epopt/policy.txt"))];
        let mut sweep = vec!["sweep", "--policy"];
        sweep.extend(policies.iter().map(String::as_str));
        run(&sweep, "sweep");
        let trace = s(out.join("spota/trace.jsonl"));
        run(&["report", "--trace", &trace, &trace], "report");
        read_dir_bytes(&out)
    };
    let first = all();
    let second = all();
    let differing: Vec<&String> = first.keys().filter(|k| first.get(*k) != second.get(*k)).collect();
    outcome(
        first.len() >= 12 && differing.is_empty() && first.keys().eq(second.keys()),
        format!("{} output files from catapult/train x3/sweep/report, {} differ between runs {differing:?}", first.len(), differing.len()),
    )
}

fn main() {
    // Optional criterion numbers on the command line restrict the run,
    // e.g. `cargo test --test acceptance -- 3 8`.
    let only: Vec<usize> = std::env::args().skip(1).filter_map(|a| a.parse().ok()).collect();
    let wanted = |id: usize| only.is_empty() || only.contains(&id);
    let mut results: Vec<(usize, &str, Outcome)> = Vec::new();
    let mut report = |id: usize, name: &'static str, run: &mut dyn FnMut() -> Outcome| {
        if !wanted(id) {
            return;
        }
        let o = run();
        println!("criterion {id:>2} [{}] {name}: {}", if o.pass { "PASS" } else { "FAIL" }, o.detail);
        results.push((id, name, o));
    };

    let start = Instant::now();
    let study = catapult_study(&CatapultStudyConfig::default(), 0).unwrap();
    let secs = start.elapsed().as_secs_f64();
    report(1, "catapult reproduction", &mut || c1_catapult(&study, secs));
    let suite = if wanted(2) || wanted(3) { Some(suite_study()) } else { None };
    report(2, "Jensen / positivity", &mut || c2_jensen(suite.as_ref().unwrap()));
    report(3, "monotone decrease", &mut || c3_monotone(suite.as_ref().unwrap(), &study));
    report(4, "bootstrap coverage", &mut c4_coverage);
    report(5, "outlier rejection", &mut c5_rejection);
    report(6, "simulators", &mut c6_simulators);
    report(7, "optimizers", &mut c7_optimizers);
    let seeds = [0, 1, 2, 3, 4];
    let runs = if wanted(8) || wanted(9) { Some(desk_runs(&seeds)) } else { None };
    report(8, "desk-scale SPOTA UCBOG trend", &mut || c8_trend(runs.as_ref().unwrap()));
    report(9, "action-delay robustness sweep", &mut || c9_sweep(runs.as_ref().unwrap(), &seeds));
    report(10, "determinism", &mut c10_determinism);

    let failed: Vec<usize> = results.iter().filter(|r| !r.2.pass).map(|r| r.0).collect();
    println!(
        "acceptance: {}/{} criteria passed{}",
        results.len() - failed.len(),
        results.len(),
        if failed.is_empty() { String::new() } else { format!(", failed {failed:?}") }
    );
    if !failed.is_empty() {
        std::process::exit(1);
    }
}
