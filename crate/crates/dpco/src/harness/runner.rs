//! Seeded Monte-Carlo orchestration for every mode.

use std::collections::BTreeMap;
use std::fs;
use std::path::{Path, PathBuf};
use std::time::{SystemTime, UNIX_EPOCH};

use rayon::prelude::*;
use serde::Serialize;
use serde_json::json;

use super::config::{ExperimentConfig, Method, Mode};
use super::output::{aggregate, write_aggregate, write_comparison, write_rows, AggregateRow, RunRecord, Stats, Summary, SCHEMA_VERSION};
use super::{sub_seed, HarnessError};
use crate::accountant::{optimizer_epsilon_bound, ConsensusLedger, OptimizerLedger};
use crate::consensus::{run_consensus, ConsensusConfig, ConstantInput, InputSignal, ZeroInput};
use crate::metrics::{log_grid, MetricRow};
use crate::optimizer::{run_optimizer, Baseline, OptimizerConfig};
use crate::oracle::{check_optimality, grid_minimize, solve_centralized, OptimalSet, SaddlePoint, GRID_MAX_DIM};
use crate::problem::ProblemInstance;
use crate::schedules::{validate_consensus_schedules, validate_optimizer_schedules, validate_privacy_finiteness, Certificate, NoiseChannels, NoiseSchedule, Schedule};

fn now() -> u64 {
    SystemTime::now().duration_since(UNIX_EPOCH).map(|d| d.as_secs()).unwrap_or(0)
}

fn io<E: std::fmt::Display>(path: &Path) -> impl Fn(E) -> HarnessError + '_ {
    move |e| HarnessError::Io(format!("{}: {e}", path.display()))
}

fn create(path: &Path) -> Result<fs::File, HarnessError> {
    fs::File::create(path).map_err(io(path))
}

fn out_dir(config: &ExperimentConfig) -> PathBuf {
    config.out_dir.clone().unwrap_or_else(|| PathBuf::from("out"))
}

fn pool(config: &ExperimentConfig) -> Result<rayon::ThreadPool, HarnessError> {
    let mut b = rayon::ThreadPoolBuilder::new();
    if let Some(n) = config.workers {
        b = b.num_threads(n);
    }
    b.build().map_err(|e| HarnessError::Config(format!("worker pool: {e}")))
}

/// Optimizer settings of the proposed method for one seed.
pub fn optimizer_config(config: &ExperimentConfig, inst: &ProblemInstance, seed: u64) -> OptimizerConfig {
    OptimizerConfig {
        rho1: config.steps.rho1.unwrap_or(inst.rho1_max()),
        rho2: config.steps.rho2.unwrap_or(inst.rho2_max()),
        chi: config.schedules.chi,
        gamma: config.schedules.gamma,
        theta: config.theta(),
        noise: config.noise.channels(),
        noise_enabled: config.noise.enabled,
        horizon: config.horizon,
        seed,
        override_certificates: config.override_certificates,
        override_step_caps: config.override_step_caps,
        sensitivity: config.privacy.sensitivity,
        log_at: log_grid(config.horizon),
    }
}

/// Centralized reference solution used for `‖x − x*‖`.
pub fn reference_solution(config: &ExperimentConfig, inst: &ProblemInstance) -> Result<SaddlePoint, HarnessError> {
    let o = config.oracle;
    Ok(solve_centralized(inst, inst.rho1_max(), inst.rho2_max(), &Schedule::Constant { value: o.step }, o.max_iterations, o.tol)?)
}

/// Budget-matched settings of the geometric baseline.
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct GeoMatch {
    pub initial: f64,
    pub ratio: f64,
    pub noise: f64,
    pub eps_proposed: f64,
    pub eps_geo: f64,
}

impl GeoMatch {
    pub fn baseline(&self) -> Baseline {
        Baseline::GeoDp { initial: self.initial, ratio: self.ratio, noise: self.noise }
    }

    pub fn relative_mismatch(&self) -> f64 {
        (self.eps_geo - self.eps_proposed).abs() / self.eps_proposed
    }
}

/// Bisects the constant Laplace scale of the geometric baseline so its budget at
/// the horizon equals the proposed method's within 1%.
pub fn match_geo_noise(config: &ExperimentConfig, inst: &ProblemInstance, w_bar: f64) -> Result<GeoMatch, HarnessError> {
    if !config.noise.enabled {
        return Err(HarnessError::Bisection("the proposed method runs without noise, so it has no budget to match".into()));
    }
    let base = optimizer_config(config, inst, 0);
    let c = config.privacy.sensitivity;
    let eps_proposed = optimizer_epsilon_bound(&base.chi, &base.gamma, &base.theta, &base.noise, c, w_bar, config.horizon)?;
    if !(eps_proposed > 0.0 && eps_proposed.is_finite()) {
        return Err(HarnessError::Bisection(format!("proposed budget {eps_proposed} cannot be matched")));
    }
    let ratio = config.compare.geo_ratio;
    let first = config.compare.geo_first_step.unwrap_or(base.gamma.value(1));
    let geo = Schedule::Geometric { initial: first / ratio, ratio };
    let unit = Schedule::Constant { value: 1.0 };
    let eps_at = |nu: f64| -> Result<f64, HarnessError> {
        let noise = NoiseChannels::shared(NoiseSchedule::constant(nu).map_err(|e| HarnessError::Bisection(e.to_string()))?);
        Ok(optimizer_epsilon_bound(&unit, &geo, &geo, &noise, c, w_bar, config.horizon)?)
    };
    // ε̂ scales as 1/ν, so bisect on log ν.
    let (mut lo, mut hi) = (1e-9_f64, 1e9_f64);
    if eps_at(lo)? < eps_proposed || eps_at(hi)? > eps_proposed {
        return Err(HarnessError::Bisection("target budget outside the bracket".into()));
    }
    for _ in 0..200 {
        let mid = (lo * hi).sqrt();
        if eps_at(mid)? > eps_proposed {
            lo = mid;
        } else {
            hi = mid;
        }
    }
    let noise = (lo * hi).sqrt();
    let m = GeoMatch { initial: first / ratio, ratio, noise, eps_proposed, eps_geo: eps_at(noise)? };
    if m.relative_mismatch() >= 0.01 {
        return Err(HarnessError::Bisection(format!("budget mismatch {:.3e}", m.relative_mismatch())));
    }
    Ok(m)
}

/// Rows, certificates and accountant error of one run, or its error message.
type JobOutcome = Result<(Vec<MetricRow>, Vec<Certificate>, Option<String>), String>;

/// Result of one seeded run, before writing.
struct RunResult {
    record: RunRecord,
    rows: Option<Vec<MetricRow>>,
    certificates: Vec<Certificate>,
}

fn finish_run(
    index: usize,
    seed: u64,
    method: Option<&str>,
    csv_path: &Path,
    outcome: JobOutcome,
) -> RunResult {
    let mut record = RunRecord {
        index,
        seed,
        method: method.map(str::to_owned),
        ok: false,
        error: None,
        csv: None,
        final_err_x: None,
        final_eps_hat: None,
        accountant_error: None,
    };
    match outcome.and_then(|(rows, certs, acc)| {
        create(csv_path).and_then(|f| write_rows(f, &rows)).map_err(|e| e.to_string())?;
        Ok((rows, certs, acc))
    }) {
        Ok((rows, certificates, accountant_error)) => {
            record.ok = true;
            record.csv = Some(csv_path.file_name().expect("file name").to_string_lossy().into_owned());
            record.final_err_x = rows.last().and_then(|r| r.err_x);
            record.final_eps_hat = rows.last().and_then(|r| r.eps_hat);
            record.accountant_error = accountant_error;
            RunResult { record, rows: Some(rows), certificates }
        }
        Err(e) => {
            record.error = Some(e);
            RunResult { record, rows: None, certificates: Vec::new() }
        }
    }
}

fn run_name(index: usize) -> String {
    format!("run_{index:04}.csv")
}

/// Runs `n` seeds of a mode-specific closure on the pool and writes one CSV each.
fn run_seeds<F>(config: &ExperimentConfig, dir: &Path, method: Option<&str>, job: F) -> Result<Vec<RunResult>, HarnessError>
where
    F: Fn(u64) -> JobOutcome + Sync,
{
    fs::create_dir_all(dir).map_err(io(dir))?;
    let pool = pool(config)?;
    Ok(pool.install(|| {
        (0..config.seeds)
            .into_par_iter()
            .map(|i| {
                let seed = sub_seed(config.base_seed, i as u64);
                finish_run(i, seed, method, &dir.join(run_name(i)), job(seed))
            })
            .collect()
    }))
}

struct MethodOutcome {
    name: String,
    results: Vec<RunResult>,
    aggregate: Vec<AggregateRow>,
}

fn collect(name: &str, dir: &Path, results: Vec<RunResult>) -> Result<MethodOutcome, HarnessError> {
    let completed: Vec<Vec<MetricRow>> = results.iter().filter_map(|r| r.rows.clone()).collect();
    let agg = aggregate(&completed);
    let path = dir.join("aggregate.csv");
    write_aggregate(create(&path)?, &agg)?;
    Ok(MethodOutcome { name: name.to_owned(), results, aggregate: agg })
}

fn summarize(config: &ExperimentConfig, started: u64, outcomes: &[MethodOutcome], details: serde_json::Value) -> Result<Summary, HarnessError> {
    let mut runs = Vec::new();
    let mut final_error = BTreeMap::new();
    let mut eps_hat = BTreeMap::new();
    let mut certificates = Vec::new();
    for o in outcomes {
        let finals: Vec<f64> = o.results.iter().filter_map(|r| r.record.final_err_x).collect();
        if let Some(s) = Stats::of(&finals) {
            final_error.insert(o.name.clone(), s);
        }
        if let Some(e) = o.results.iter().find_map(|r| r.record.final_eps_hat) {
            eps_hat.insert(o.name.clone(), e);
        }
        if let Some(first) = o.results.iter().find(|r| r.record.ok) {
            for c in &first.certificates {
                let mut c = c.clone();
                if outcomes.len() > 1 {
                    c.kind = format!("{}/{}", o.name, c.kind);
                }
                certificates.push(c);
            }
        }
        runs.extend(o.results.iter().map(|r| r.record.clone()));
    }
    let completed = runs.iter().filter(|r| r.ok).count();
    Ok(Summary {
        schema_version: SCHEMA_VERSION,
        mode: config.mode()?.name().to_owned(),
        config_hash: config.hash(),
        base_seed: config.base_seed,
        horizon: config.horizon,
        started_unix: started,
        finished_unix: now(),
        completed,
        failed: runs.len() - completed,
        runs,
        final_error,
        eps_hat,
        certificates,
        details,
    })
}

fn write_summary(dir: &Path, summary: &Summary) -> Result<(), HarnessError> {
    let path = dir.join("summary.json");
    let text = serde_json::to_string_pretty(summary).map_err(|e| HarnessError::Io(e.to_string()))?;
    fs::write(&path, text + "\n").map_err(io(&path))
}

/// Executes the configured mode and writes CSVs plus `summary.json` under the output directory.
pub fn run_experiment(config: &ExperimentConfig) -> Result<Summary, HarnessError> {
    config.validate()?;
    let started = now();
    let dir = out_dir(config);
    fs::create_dir_all(&dir).map_err(io(&dir))?;
    let summary = match config.mode()? {
        Mode::Consensus => consensus_mode(config, &dir, started)?,
        Mode::Optimize => optimize_mode(config, &dir, started)?,
        Mode::Compare => compare_baselines(config)?,
        Mode::Accountant => accountant_mode(config, &dir, started)?,
        Mode::Oracle => oracle_mode(config, &dir, started)?,
    };
    write_summary(&dir, &summary)?;
    Ok(summary)
}

fn consensus_mode(config: &ExperimentConfig, dir: &Path, started: u64) -> Result<Summary, HarnessError> {
    let spec = config.consensus.as_ref().expect("validated");
    let w = config.weights(None)?;
    let constant = config.inputs().map(ConstantInput);
    let inputs: &dyn InputSignal = match &constant {
        Some(c) => c,
        None => &ZeroInput,
    };
    let results = run_seeds(config, dir, None, |seed| {
        let run = run_consensus(
            &w,
            inputs,
            &ConsensusConfig {
                set: spec.set.clone(),
                chi: config.schedules.chi,
                gamma: config.schedules.gamma,
                noise: config.noise.enabled.then(|| config.noise.shared()),
                seed,
                horizon: config.horizon,
                override_certificates: config.override_certificates,
                initial: None,
                sensitivity: config.privacy.sensitivity,
                log_at: log_grid(config.horizon),
            },
        )
        .map_err(|e| e.to_string())?;
        let certs = std::iter::once(run.certificate).chain(run.privacy_certificate).collect();
        Ok((run.rows, certs, None))
    })?;
    let outcome = collect("consensus", dir, results)?;
    summarize(config, started, &[outcome], json!({ "agents": w.size(), "w_bar": w.min_self_weight() }))
}

fn optimize_mode(config: &ExperimentConfig, dir: &Path, started: u64) -> Result<Summary, HarnessError> {
    let inst = config.instance()?;
    let w = config.weights(Some(inst.num_agents()))?;
    let sp = reference_solution(config, &inst)?;
    let reference = OptimalSet::new(&inst, sp.x.clone());
    let results = run_seeds(config, dir, None, |seed| {
        let oc = optimizer_config(config, &inst, seed);
        let run = run_optimizer(&inst, &w, &oc, Some(&reference)).map_err(|e| e.to_string())?;
        let mut certs = vec![run.certificate];
        certs.extend(run.privacy_certificates);
        Ok((run.rows, certs, run.accountant_error))
    })?;
    let outcome = collect("proposed", dir, results)?;
    let details = json!({
        "agents": inst.num_agents(),
        "w_bar": w.min_self_weight(),
        "rho1": optimizer_config(config, &inst, 0).rho1,
        "rho2": optimizer_config(config, &inst, 0).rho2,
        "rho1_max": inst.rho1_max(),
        "rho2_max": inst.rho2_max(),
        "dual_radius": inst.dual_radius(),
        "reference": { "converged": sp.converged, "vi_residual": sp.vi_residual, "singleton": reference.is_singleton() },
    });
    summarize(config, started, &[outcome], details)
}

/// Runs every configured method on identical instances and seeds and writes
/// `compare.csv` with one error column pair per method.
pub fn compare_baselines(config: &ExperimentConfig) -> Result<Summary, HarnessError> {
    config.validate()?;
    let started = now();
    let dir = out_dir(config);
    fs::create_dir_all(&dir).map_err(io(&dir))?;
    let inst = config.instance()?;
    let w = config.weights(Some(inst.num_agents()))?;
    let sp = reference_solution(config, &inst)?;
    let reference = OptimalSet::new(&inst, sp.x.clone());
    let geo = if config.compare.methods.contains(&Method::GeoDp) { Some(match_geo_noise(config, &inst, w.min_self_weight())) } else { None };
    let mut outcomes = Vec::new();
    let mut skipped = Vec::new();
    for &method in &config.compare.methods {
        let baseline = match method {
            Method::Proposed => Baseline::Proposed,
            Method::Pdp => Baseline::Pdp,
            Method::GeoDp => match geo.as_ref().expect("computed above") {
                Ok(m) => m.baseline(),
                Err(e) => {
                    skipped.push(json!({ "method": method.name(), "reason": e.to_string() }));
                    continue;
                }
            },
        };
        let sub = dir.join(method.name());
        let results = run_seeds(config, &sub, Some(method.name()), |seed| {
            let oc = optimizer_config(config, &inst, seed).with_baseline(baseline);
            let run = run_optimizer(&inst, &w, &oc, Some(&reference)).map_err(|e| e.to_string())?;
            let mut certs = vec![run.certificate];
            certs.extend(run.privacy_certificates);
            Ok((run.rows, certs, run.accountant_error))
        })?;
        outcomes.push(collect(method.name(), &sub, results)?);
    }
    let joined: Vec<(&str, Vec<AggregateRow>)> = outcomes.iter().map(|o| (o.name.as_str(), o.aggregate.clone())).collect();
    let path = dir.join("compare.csv");
    write_comparison(create(&path)?, &joined)?;
    let details = json!({
        "geo_dp": geo.and_then(|g| g.ok()),
        "skipped": skipped,
        "w_bar": w.min_self_weight(),
        "reference": { "converged": sp.converged, "vi_residual": sp.vi_residual },
    });
    let summary = summarize(config, started, &outcomes, details)?;
    write_summary(&dir, &summary)?;
    Ok(summary)
}

/// One logged line of the accountant table.
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct AccountantRow {
    pub k: usize,
    pub consensus_delta: Option<f64>,
    pub consensus_eps_hat: Option<f64>,
    pub sens_lambda: Option<f64>,
    pub sens_y: Option<f64>,
    pub sens_z: Option<f64>,
    pub optimizer_eps_hat: Option<f64>,
}

/// Both budget recursions on the logging grid; a ledger stops at its first invalid step.
pub fn accountant_table(config: &ExperimentConfig, w_bar: f64) -> (Vec<AccountantRow>, Vec<String>) {
    let c = config.privacy.sensitivity;
    let noise = config.noise.channels();
    let shared = config.noise.shared();
    let theta = config.theta();
    let mut cons = Some(ConsensusLedger::new(c, w_bar));
    let mut opt = Some(OptimizerLedger::new(c, w_bar));
    let mut errors = Vec::new();
    let grid = log_grid(config.horizon);
    let mut next = grid.iter().peekable();
    let mut rows = Vec::with_capacity(grid.len());
    for k in 1..=config.horizon {
        let (chi, gamma) = (config.schedules.chi.value(k), config.schedules.gamma.value(k));
        if let Some(l) = cons.as_mut() {
            if let Err(e) = l.step(chi, gamma, shared.value(k)) {
                errors.push(format!("consensus: {e}"));
                cons = None;
            }
        }
        if let Some(l) = opt.as_mut() {
            if let Err(e) = l.step(chi, gamma, theta.value(k), [noise.lambda.value(k), noise.y.value(k), noise.z.value(k)]) {
                errors.push(format!("optimizer: {e}"));
                opt = None;
            }
        }
        if next.peek() == Some(&&k) {
            next.next();
            rows.push(AccountantRow {
                k,
                consensus_delta: cons.as_ref().map(|l| l.delta),
                consensus_eps_hat: cons.as_ref().map(|l| l.eps_hat),
                sens_lambda: opt.as_ref().map(|l| l.c * l.varsigma_lambda),
                sens_y: opt.as_ref().map(|l| l.c * l.varsigma_y),
                sens_z: opt.as_ref().map(|l| l.c * l.varsigma_z),
                optimizer_eps_hat: opt.as_ref().map(|l| l.eps_hat),
            });
        }
    }
    (rows, errors)
}

fn accountant_mode(config: &ExperimentConfig, dir: &Path, started: u64) -> Result<Summary, HarnessError> {
    let agents = match &config.instance {
        Some(_) => Some(config.instance()?.num_agents()),
        None => None,
    };
    let w = config.weights(agents)?;
    let (rows, errors) = accountant_table(config, w.min_self_weight());
    let path = dir.join("accountant.csv");
    let mut out = csv::Writer::from_writer(create(&path)?);
    out.write_record(["k", "consensus_delta", "consensus_eps_hat", "sens_lambda", "sens_y", "sens_z", "optimizer_eps_hat"])?;
    let cell = |v: Option<f64>| v.map(|x| x.to_string()).unwrap_or_default();
    for r in &rows {
        out.write_record([r.k.to_string(), cell(r.consensus_delta), cell(r.consensus_eps_hat), cell(r.sens_lambda), cell(r.sens_y), cell(r.sens_z), cell(r.optimizer_eps_hat)])?;
    }
    out.flush().map_err(io(&path))?;
    let theta = config.theta();
    let noise = config.noise.channels();
    let mut certificates = vec![
        validate_consensus_schedules(&config.schedules.chi, &config.schedules.gamma),
        validate_privacy_finiteness(&config.schedules.gamma, &config.noise.shared(), Some(&config.schedules.chi)),
    ];
    certificates[1].kind = "privacy/consensus".into();
    if config.schedules.theta.is_some() {
        certificates.push(validate_optimizer_schedules(&config.schedules.chi, &config.schedules.gamma, &theta));
        for (n, ch) in [(noise.lambda, "lambda"), (noise.y, "y"), (noise.z, "z")] {
            let mut c = validate_privacy_finiteness(&theta, &n, Some(&config.schedules.chi));
            c.kind = format!("privacy/{ch}");
            certificates.push(c);
        }
    }
    // Relative growth over the final decade of the horizon.
    let growth = |pick: fn(&AccountantRow) -> Option<f64>| -> Option<f64> {
        let last = rows.last()?;
        let tenth = rows.iter().rev().find(|r| r.k * 10 <= last.k)?;
        let (a, b) = (pick(tenth)?, pick(last)?);
        Some((b - a) / a)
    };
    let mut eps_hat = BTreeMap::new();
    if let Some(e) = rows.last().and_then(|r| r.consensus_eps_hat) {
        eps_hat.insert("consensus".to_owned(), e);
    }
    if let Some(e) = rows.last().and_then(|r| r.optimizer_eps_hat) {
        eps_hat.insert("optimizer".to_owned(), e);
    }
    Ok(Summary {
        schema_version: SCHEMA_VERSION,
        mode: Mode::Accountant.name().to_owned(),
        config_hash: config.hash(),
        base_seed: config.base_seed,
        horizon: config.horizon,
        started_unix: started,
        finished_unix: now(),
        completed: 0,
        failed: 0,
        runs: Vec::new(),
        final_error: BTreeMap::new(),
        eps_hat,
        certificates,
        details: json!({
            "w_bar": w.min_self_weight(),
            "errors": errors,
            "final_decade_growth": { "consensus": growth(|r| r.consensus_eps_hat), "optimizer": growth(|r| r.optimizer_eps_hat) },
        }),
    })
}

fn oracle_mode(config: &ExperimentConfig, dir: &Path, started: u64) -> Result<Summary, HarnessError> {
    let inst = config.instance()?;
    let sp = reference_solution(config, &inst)?;
    let report = check_optimality(&inst, &sp.x, &sp.lambda, 1e-4, inst.rho1_max());
    let sp_path = dir.join("saddle_point.json");
    fs::write(&sp_path, sp.to_json() + "\n").map_err(io(&sp_path))?;
    let inst_path = dir.join("instance.json");
    fs::write(&inst_path, inst.to_json() + "\n").map_err(io(&inst_path))?;
    let coords: usize = inst.dims().iter().sum();
    let grid = if coords <= GRID_MAX_DIM {
        let g = grid_minimize(&inst, 1e-2, 2, 21)?;
        let dist = g.x.iter().zip(&sp.x).map(|(a, b)| (a - b).norm_squared()).sum::<f64>().sqrt();
        Some(json!({ "objective": g.objective, "cell": g.cell, "distance_to_solver": dist }))
    } else {
        None
    };
    let details = json!({
        "converged": sp.converged,
        "iterations": sp.iterations,
        "objective": inst.objective(&sp.x),
        "optimality": report,
        "passed": report.passed(),
        "grid": grid,
    });
    Ok(Summary {
        schema_version: SCHEMA_VERSION,
        mode: Mode::Oracle.name().to_owned(),
        config_hash: config.hash(),
        base_seed: config.base_seed,
        horizon: config.horizon,
        started_unix: started,
        finished_unix: now(),
        completed: 0,
        failed: 0,
        runs: Vec::new(),
        final_error: BTreeMap::new(),
        eps_hat: BTreeMap::new(),
        certificates: Vec::new(),
        details,
    })
}
