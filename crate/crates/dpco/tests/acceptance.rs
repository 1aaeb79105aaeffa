//! Acceptance suite: one PASS/FAIL line per criterion.
//!
//! Criteria listed in `KNOWN_UNATTAINABLE` are strict expected failures: a failure is
//! reported as known, an unexpected pass fails the suite.

mod common;

use std::collections::BTreeMap;
use std::fs;
use std::path::Path;
use std::process::ExitCode;
use std::time::{Duration, Instant};

use common::{brute_force_projection, column, configs_dir, fd_jacobian, instances, pair_weights, random_point, random_set, relative_error, VARIANTS};
use dpco::accountant::{consensus_epsilon_trace, empirical_sensitivity_probe, optimizer_epsilon_trace, penalized_neighbor, SaturationProbe};
use dpco::harness::output::read_rows;
use dpco::harness::{run_experiment, ExperimentConfig, Summary};
use dpco::linalg::mean;
use dpco::optimizer::{run_optimizer, OptimizerConfig};
use dpco::oracle::{check_optimality, lemma12_gap, solve_centralized, OptimalSet};
use dpco::problem::{pair_toy, BallPenalty};
use dpco::schedules::{validate_privacy_finiteness, NoiseChannels, NoiseSchedule, Schedule};
use nalgebra::DVector;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

const KNOWN_UNATTAINABLE: &[usize] = &[7];

struct Outcome {
    pass: bool,
    detail: String,
}

impl Outcome {
    fn new(pass: bool, detail: impl Into<String>) -> Self {
        Outcome { pass, detail: detail.into() }
    }
}

/// Saddle-gap margins gathered by criteria 4 and 5 for criterion 6.
#[derive(Default)]
struct Margins(Vec<f64>);

impl Margins {
    fn worst(&self) -> f64 {
        self.0.iter().copied().fold(f64::INFINITY, f64::min)
    }
}

fn load(name: &str, out: &Path) -> ExperimentConfig {
    let mut c = ExperimentConfig::load(&configs_dir().join(name)).unwrap();
    c.out_dir = Some(out.to_path_buf());
    c
}

/// `k → value` of one column of a CSV with a leading `k` column.
fn csv_column(path: &Path, name: &str) -> BTreeMap<usize, f64> {
    let mut r = csv::Reader::from_path(path).unwrap();
    let j = r.headers().unwrap().iter().position(|h| h == name).unwrap_or_else(|| panic!("no column {name}"));
    r.records()
        .map(|rec| {
            let rec = rec.unwrap();
            (rec[0].parse().unwrap(), rec[j].parse().unwrap())
        })
        .collect()
}

fn run_margins(dir: &Path, summary: &Summary) -> Vec<f64> {
    summary
        .runs
        .iter()
        .filter_map(|r| r.csv.as_ref())
        .flat_map(|name| read_rows(fs::File::open(dir.join(name)).unwrap()).unwrap())
        .filter_map(|row| row.lemma12_margin)
        .collect()
}

fn projections() -> Outcome {
    let mut rng = ChaCha8Rng::seed_from_u64(1);
    let (mut worst_match, mut worst_idem, mut worst_expand) = (0.0f64, 0.0f64, f64::NEG_INFINITY);
    for variant in 0..VARIANTS {
        for _ in 0..100 {
            let set = random_set(&mut rng, variant);
            let p = random_point(&mut rng, set.dim(), 6.0);
            worst_match = worst_match.max((set.project(&p).unwrap() - brute_force_projection(&set, &p)).amax());
        }
        let set = random_set(&mut rng, variant);
        for _ in 0..1000 {
            let (a, b) = (random_point(&mut rng, set.dim(), 6.0), random_point(&mut rng, set.dim(), 6.0));
            let (pa, pb) = (set.project(&a).unwrap(), set.project(&b).unwrap());
            worst_idem = worst_idem.max((set.project(&pa).unwrap() - &pa).amax());
            worst_expand = worst_expand.max((pa - pb).norm() - (a - b).norm());
        }
    }
    Outcome::new(
        worst_match < 1e-6 && worst_idem == 0.0 && worst_expand <= 1e-12,
        format!("max deviation from brute force {worst_match:.1e}, idempotence {worst_idem:.1e}, expansion {worst_expand:.1e}"),
    )
}

fn gradients() -> Outcome {
    const H: f64 = 1e-6;
    let mut rng = ChaCha8Rng::seed_from_u64(2);
    let mut worst = 0.0f64;
    for (_, inst) in instances() {
        for _ in 0..100 {
            let x: Vec<DVector<f64>> = inst.agents().iter().map(|a| a.set.sample_uniform(&mut rng).unwrap()).collect();
            let lambda = inst.dual_set().sample_uniform(&mut rng).unwrap();
            let y = inst.aggregate(&x);
            for (i, a) in inst.agents().iter().enumerate() {
                worst = worst.max(relative_error(&a.map.matrix, &fd_jacobian(|v| a.map.eval(v), &x[i], H)));
                worst = worst.max(relative_error(&a.constraint.jacobian(&x[i]), &fd_jacobian(|v| a.constraint.eval(v), &x[i], H)));
                let lagr = |v: &DVector<f64>| {
                    let mut xs = x.clone();
                    xs[i] = v.clone();
                    DVector::from_element(1, inst.lagrangian(&xs, &lambda))
                };
                let lx = inst.lagrangian_x_grad(i, &x[i], &y, &lambda).unwrap();
                worst = worst.max(relative_error(&column(lx), &fd_jacobian(lagr, &x[i], H).transpose()));
            }
            let fd_cost = fd_jacobian(|v| DVector::from_element(1, inst.cost().value(v)), &y, H).transpose();
            worst = worst.max(relative_error(&column(inst.cost().gradient(&y)), &fd_cost));
        }
    }
    Outcome::new(worst < 1e-5, format!("worst relative error {worst:.2e}"))
}

fn consensus_convergence() -> Outcome {
    let dir = tempfile::tempdir().unwrap();
    run_experiment(&load("consensus_er10.toml", dir.path())).unwrap();
    let med = csv_column(&dir.path().join("aggregate.csv"), "err_x_median");
    let (early, late) = (med[&100], med[&10_000]);
    Outcome::new(late < 0.1 * early, format!("median disagreement {early:.3e} at 1e2, {late:.3e} at 1e4 (ratio {:.3})", late / early))
}

fn noiseless_convergence(margins: &mut Margins) -> Outcome {
    let inst = pair_toy();
    let sp = solve_centralized(&inst, inst.rho1_max(), inst.rho2_max(), &Schedule::Constant { value: 0.1 }, 200_000, 1e-10).unwrap();
    let reference = OptimalSet::new(&inst, sp.x.clone());
    let mut cfg = OptimizerConfig::experiment_defaults(&inst, 100_000, 3);
    cfg.chi = Schedule::pure_power(0.6).unwrap();
    cfg.gamma = Schedule::power(2.0, 0.0, 1.0).unwrap();
    cfg.theta = Schedule::power(0.01, 0.0, 0.9).unwrap();
    cfg.noise_enabled = false;
    let run = run_optimizer(&inst, &pair_weights(), &cfg, Some(&reference)).unwrap();
    margins.0.extend(run.rows.iter().filter_map(|r| r.lemma12_margin));
    let err = run.rows.last().and_then(|r| r.err_x).unwrap();
    let x: Vec<DVector<f64>> = run.final_iterates.iter().map(|it| it.x.clone()).collect();
    let lambda = mean(&run.final_iterates.iter().map(|it| it.lambda.clone()).collect::<Vec<_>>());
    let report = check_optimality(&inst, &x, &lambda, 1e-3, inst.rho1_max());
    Outcome::new(
        sp.converged && err < 1e-2 && report.passed(),
        format!("final error {err:.2e}, optimality checks {}", if report.passed() { "passed" } else { "failed" }),
    )
}

fn noisy_convergence(margins: &mut Margins) -> Outcome {
    let dir = tempfile::tempdir().unwrap();
    let summary = run_experiment(&load("demand_response.toml", dir.path())).unwrap();
    margins.0.extend(run_margins(dir.path(), &summary));
    let means = csv_column(&dir.path().join("aggregate.csv"), "err_x_mean");
    let at: Vec<f64> = [100, 1000, 10_000].iter().map(|k| means[k]).collect();
    Outcome::new(
        summary.failed == 0 && at[1] < at[0] && at[2] < at[1],
        format!("mean error {:.3e} / {:.3e} / {:.3e} at 1e2 / 1e3 / 1e4 over {} runs", at[0], at[1], at[2], summary.completed),
    )
}

fn saddle_margins(margins: &Margins) -> Outcome {
    let mut rng = ChaCha8Rng::seed_from_u64(6);
    let mut random = f64::INFINITY;
    let cases = instances();
    for n in 0..10_000 {
        let inst = &cases[n % cases.len()].1;
        let x: Vec<DVector<f64>> = inst.agents().iter().map(|a| a.set.sample_uniform(&mut rng).unwrap()).collect();
        let lambda = inst.dual_set().sample_uniform(&mut rng).unwrap();
        random = random.min(lemma12_gap(inst, &x, &lambda, inst.rho1_max(), inst.rho2_max()).margin);
    }
    let logged = margins.worst();
    Outcome::new(
        !margins.0.is_empty() && logged >= -1e-8 && random >= -1e-8,
        format!("worst margin {logged:.2e} over {} logged rows, {random:.2e} over 10^4 random states", margins.0.len()),
    )
}

fn budget_finiteness() -> Outcome {
    const STEP_OVER_NOISE: &str = "sum step/nu converges";
    let config = ExperimentConfig::load(&configs_dir().join("accountant.toml")).unwrap();
    let w_bar = config.weights(None).unwrap().min_self_weight();
    let s = &config.schedules;
    let theta = config.theta();
    let horizon = 100_000;
    let growth = |noise: &NoiseSchedule| {
        let cons = consensus_epsilon_trace(&s.chi, &s.gamma, noise, 1.0, w_bar, horizon).unwrap();
        let opt = optimizer_epsilon_trace(&s.chi, &s.gamma, &theta, &NoiseChannels::shared(*noise), 1.0, w_bar, horizon).unwrap();
        (cons, opt)
    };
    let (cons, opt) = growth(&config.noise.shared());
    let g_cons = SaturationProbe::final_relative_growth(&cons).unwrap();
    let g_opt = SaturationProbe::final_relative_growth(&opt).unwrap();
    let flat = NoiseSchedule::constant(config.noise.base).unwrap();
    let cert_cons = validate_privacy_finiteness(&s.gamma, &flat, None).holds(STEP_OVER_NOISE).unwrap();
    let cert_opt = validate_privacy_finiteness(&theta, &flat, None).holds(STEP_OVER_NOISE).unwrap();
    let (cons_flat, opt_flat) = growth(&flat);
    let sat_cons = SaturationProbe::from_trace(&cons_flat).saturating();
    let sat_opt = SaturationProbe::from_trace(&opt_flat).saturating();
    Outcome::new(
        g_cons < 0.05 && g_opt < 0.05 && !cert_cons && !cert_opt && !sat_cons && !sat_opt,
        format!(
            "last-decade growth consensus {g_cons:.3}, optimizer {g_opt:.3}; constant noise: certificates {cert_cons}/{cert_opt}, saturating {sat_cons}/{sat_opt}"
        ),
    )
}

fn gap_domination() -> Outcome {
    let inst = pair_toy();
    let w = pair_weights();
    let bump = BallPenalty { center: DVector::from_element(1, 0.5), radius: 0.3, weight: 1.0 };
    let neighbor = penalized_neighbor(&inst, 0, bump).unwrap();
    let horizon = 100_000;
    let fit_until = horizon / 10;
    let (mut dominated, mut converged, mut worst_ratio) = (0, 0, 0.0f64);
    for seed in 0..20 {
        let mut cfg = OptimizerConfig::experiment_defaults(&inst, horizon, seed);
        cfg.chi = Schedule::pure_power(0.72).unwrap();
        cfg.gamma = Schedule::power(2.0, 0.0, 1.0).unwrap();
        cfg.theta = Schedule::power(0.3, 0.0, 0.87).unwrap();
        cfg.noise = NoiseChannels::shared(NoiseSchedule::new(1.0, 0.1, 0.2).unwrap());
        cfg.log_at.clear();
        let trace = empirical_sensitivity_probe(&inst, &neighbor, &w, &cfg).unwrap();
        let theta = |k: usize| cfg.theta.value(k);
        let c = trace.fit_constant(theta, fit_until);
        dominated += usize::from(trace.dominated(theta, c, fit_until + 1, horizon));
        let early = trace.gap[..fit_until].iter().copied().fold(0.0, f64::max);
        let late = trace.gap[horizon - fit_until..].iter().copied().fold(0.0, f64::max);
        converged += usize::from(late <= 1e-2 * early);
        worst_ratio = worst_ratio.max(late / early);
    }
    Outcome::new(
        dominated == 20 && converged == 20,
        format!("dominated {dominated}/20, vanishing {converged}/20 (worst final/early gap {worst_ratio:.1e})"),
    )
}

fn baseline_ordering() -> Outcome {
    let dir = tempfile::tempdir().unwrap();
    let summary = run_experiment(&load("compare_pair_toy.toml", dir.path())).unwrap();
    let geo = &summary.details["geo_dp"];
    let (eps_p, eps_g) = (geo["eps_proposed"].as_f64().unwrap(), geo["eps_geo"].as_f64().unwrap());
    let mismatch = (eps_g - eps_p).abs() / eps_p;
    let fin = |m: &str| summary.final_error[m].mean;
    let path = dir.path().join("compare.csv");
    let stats = |m: &str| (csv_column(&path, &format!("{m}_err_mean")), csv_column(&path, &format!("{m}_err_var")));
    let ((pdp, pdp_var), others) = (stats("pdp"), [stats("proposed"), stats("geo_dp")]);
    let n = summary.runs.iter().filter(|r| r.method.as_deref() == Some("pdp")).count() as f64;
    // A reversal counts when the PDP mean exceeds another method's by more than
    // two standard errors of the difference.
    let (mut raw, mut significant) = (0, 0);
    for (k, e) in &pdp {
        let above: Vec<_> = others.iter().filter(|(m, _)| *e >= m[k]).collect();
        raw += usize::from(!above.is_empty());
        significant += usize::from(above.iter().any(|(m, v)| e - m[k] > 2.0 * ((pdp_var[k] + v[k]) / n).sqrt()));
    }
    Outcome::new(
        summary.failed == 0 && mismatch < 0.01 && fin("proposed") < fin("geo_dp") && significant == 0,
        format!(
            "budget mismatch {:.2e}; final mean error proposed {:.3e}, geo_dp {:.3e}, pdp {:.3e}; pdp mean not lowest at {raw}/{} logged k, significantly above at {significant}",
            mismatch,
            fin("proposed"),
            fin("geo_dp"),
            fin("pdp"),
            pdp.len()
        ),
    )
}

fn csv_bytes(dir: &Path) -> BTreeMap<String, Vec<u8>> {
    let mut files = BTreeMap::new();
    let mut stack = vec![dir.to_path_buf()];
    while let Some(d) = stack.pop() {
        for entry in fs::read_dir(&d).unwrap() {
            let p = entry.unwrap().path();
            if p.is_dir() {
                stack.push(p);
            } else if p.extension().is_some_and(|e| e == "csv") {
                files.insert(p.strip_prefix(dir).unwrap().display().to_string(), fs::read(&p).unwrap());
            }
        }
    }
    files
}

fn determinism() -> Outcome {
    let mut compared = 0;
    let mut differing = Vec::new();
    for name in ["consensus_er10.toml", "demand_response.toml", "compare_pair_toy.toml"] {
        let (a, b) = (tempfile::tempdir().unwrap(), tempfile::tempdir().unwrap());
        for (dir, workers) in [(&a, Some(1)), (&b, None)] {
            let mut c = load(name, dir.path());
            c.seeds = 3;
            c.horizon = 1000;
            c.workers = workers;
            run_experiment(&c).unwrap();
        }
        let (fa, fb) = (csv_bytes(a.path()), csv_bytes(b.path()));
        compared += fa.len();
        if fa != fb {
            differing.push(name);
        }
    }
    Outcome::new(differing.is_empty() && compared > 0, format!("{compared} CSV files compared, differing configs {differing:?}"))
}

fn main() -> ExitCode {
    let mut margins = Margins::default();
    type Check<'a> = Box<dyn FnOnce(&mut Margins) -> Outcome + 'a>;
    let criteria: Vec<(usize, &str, Option<u64>, Check)> = vec![
        (1, "projection oracle equivalence", Some(10), Box::new(|_| projections())),
        (2, "gradient checks", Some(10), Box::new(|_| gradients())),
        (3, "consensus convergence", Some(120), Box::new(|_| consensus_convergence())),
        (4, "noiseless optimizer convergence", Some(60), Box::new(noiseless_convergence)),
        (5, "noisy optimizer convergence", Some(600), Box::new(noisy_convergence)),
        (6, "saddle-gap margin", None, Box::new(|m| saddle_margins(m))),
        (7, "privacy budget finiteness", Some(30), Box::new(|_| budget_finiteness())),
        (8, "adjacency gap domination", Some(300), Box::new(|_| gap_domination())),
        (9, "baseline ordering", Some(600), Box::new(|_| baseline_ordering())),
        (10, "determinism", None, Box::new(|_| determinism())),
    ];
    let mut unexpected = Vec::new();
    for (id, name, budget, check) in criteria {
        let start = Instant::now();
        let mut outcome = check(&mut margins);
        let elapsed = start.elapsed();
        if let Some(limit) = budget.map(Duration::from_secs) {
            if elapsed > limit {
                outcome.pass = false;
                outcome.detail.push_str(&format!("; over the {}s budget", limit.as_secs()));
            }
        }
        let known = KNOWN_UNATTAINABLE.contains(&id);
        let status = match (outcome.pass, known) {
            (true, false) => "PASS",
            (false, true) => "FAIL (known, documented)",
            (true, true) => "XPASS (listed as unattainable)",
            (false, false) => "FAIL",
        };
        if outcome.pass == known {
            unexpected.push(id);
        }
        println!("criterion {id:>2} {name}: {status} [{:.1}s] {}", elapsed.as_secs_f64(), outcome.detail);
    }
    if unexpected.is_empty() {
        println!("acceptance: all criteria as expected (known unattainable: {KNOWN_UNATTAINABLE:?})");
        ExitCode::SUCCESS
    } else {
        println!("acceptance: unexpected results for criteria {unexpected:?}");
        ExitCode::FAILURE
    }
}
