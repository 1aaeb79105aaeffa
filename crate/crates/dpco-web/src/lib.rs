//! WebAssembly bindings for the static demo page. Every export returns a JSON
//! string so the page needs no generated type bindings.

use dpco::accountant::{consensus_epsilon_trace, optimizer_epsilon_trace};
use dpco::consensus::{run_consensus, ConsensusConfig, ZeroInput};
use dpco::geometry::ConvexSet;
use dpco::metrics::log_grid;
use dpco::optimizer::{run_optimizer, OptimizerConfig};
use dpco::oracle::{solve_centralized, OptimalSet};
use dpco::problem::{make_demand_response, pair_toy};
use dpco::schedules::{NoiseChannels, NoiseSchedule, Schedule};
use dpco::topology::WeightMatrix;
use serde::Serialize;
use wasm_bindgen::prelude::*;

#[derive(Serialize)]
struct Curve {
    k: Vec<usize>,
    value: Vec<f64>,
}

#[derive(Serialize)]
struct BudgetCurves {
    k: Vec<usize>,
    consensus: Vec<f64>,
    optimizer: Vec<f64>,
    certificate_consensus: bool,
    certificate_optimizer: bool,
}

fn err(e: impl std::fmt::Display) -> JsError {
    JsError::new(&e.to_string())
}

fn to_json(v: &impl Serialize) -> Result<String, JsError> {
    serde_json::to_string(v).map_err(err)
}

fn experiment_noise(noise: bool) -> Option<NoiseSchedule> {
    noise.then_some(NoiseSchedule { base: 1.0, growth: 0.1, exponent: 0.2 })
}

/// Consensus disagreement `max_i ‖x_i − x̄‖` on a random graph in the box `[-5, 5]²`.
#[wasm_bindgen]
pub fn consensus_curve(agents: usize, edge_probability: f64, horizon: usize, seed: u64, chi_exponent: f64, gamma_exponent: f64, noise: bool) -> Result<String, JsError> {
    let w = WeightMatrix::erdos_renyi(agents, edge_probability, 1.0, seed).map_err(err)?;
    let config = ConsensusConfig {
        set: ConvexSet::cube(2, -5.0, 5.0).map_err(err)?,
        chi: Schedule::pure_power(chi_exponent).map_err(err)?,
        gamma: Schedule::pure_power(gamma_exponent).map_err(err)?,
        noise: experiment_noise(noise),
        seed,
        horizon,
        override_certificates: true,
        initial: None,
        sensitivity: 1.0,
        log_at: log_grid(horizon),
    };
    let run = run_consensus(&w, &ZeroInput, &config).map_err(err)?;
    to_json(&Curve { k: run.rows.iter().map(|r| r.k).collect(), value: run.rows.iter().filter_map(|r| r.err_x).collect() })
}

/// Cumulative budget bounds of both recursions with growing noise `ν_k = base(1 + growth·k^exponent)`.
#[wasm_bindgen]
pub fn budget_curves(horizon: usize, w_bar: f64, noise_growth: f64, noise_exponent: f64) -> Result<String, JsError> {
    let chi = Schedule::Power { scale: 1.0, offset: 0.1, exponent: 0.9 };
    let gamma = Schedule::Power { scale: 0.1, offset: 0.1, exponent: 1.0 };
    let theta = Schedule::Power { scale: 0.1, offset: 0.1, exponent: 0.96 };
    let noise = NoiseSchedule::new(1.0, noise_growth, noise_exponent).map_err(err)?;
    let cons = consensus_epsilon_trace(&chi, &gamma, &noise, 1.0, w_bar, horizon).map_err(err)?;
    let opt = optimizer_epsilon_trace(&chi, &gamma, &theta, &NoiseChannels::shared(noise), 1.0, w_bar, horizon).map_err(err)?;
    let ks = log_grid(horizon);
    to_json(&BudgetCurves {
        consensus: ks.iter().map(|&k| cons[k - 1]).collect(),
        optimizer: ks.iter().map(|&k| opt[k - 1]).collect(),
        certificate_consensus: dpco::schedules::validate_privacy_finiteness(&gamma, &noise, Some(&chi)).valid(),
        certificate_optimizer: dpco::schedules::validate_privacy_finiteness(&theta, &noise, Some(&chi)).valid(),
        k: ks,
    })
}

/// Distance to the optimal set of the private optimizer, on the two-agent toy or
/// a small demand-response instance.
#[wasm_bindgen]
pub fn optimizer_curve(instance: &str, horizon: usize, seed: u64, noise: bool) -> Result<String, JsError> {
    let (inst, w, step) = match instance {
        "pair_toy" => (pair_toy(), WeightMatrix::complete(2, 0.5).map_err(err)?, 0.1),
        "demand_response" => (make_demand_response(5, 4, 1.0, 1.0, 1).map_err(err)?, WeightMatrix::erdos_renyi(5, 0.5, 1.0, 1).map_err(err)?, 0.01),
        other => return Err(JsError::new(&format!("unknown instance {other}"))),
    };
    let sp = solve_centralized(&inst, inst.rho1_max(), inst.rho2_max(), &Schedule::Constant { value: step }, 300_000, 1e-9).map_err(err)?;
    let reference = OptimalSet::new(&inst, sp.x);
    let mut config = OptimizerConfig::experiment_defaults(&inst, horizon, seed);
    config.noise_enabled = noise;
    let run = run_optimizer(&inst, &w, &config, Some(&reference)).map_err(err)?;
    to_json(&Curve { k: run.rows.iter().map(|r| r.k).collect(), value: run.rows.iter().filter_map(|r| r.err_x).collect() })
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn exports_produce_aligned_curves() {
        let c: serde_json::Value = serde_json::from_str(&consensus_curve(5, 0.6, 200, 1, 0.7, 0.9, true).unwrap()).unwrap();
        assert_eq!(c["k"].as_array().unwrap().len(), c["value"].as_array().unwrap().len());
        let b: serde_json::Value = serde_json::from_str(&budget_curves(1000, 0.5, 0.1, 0.2).unwrap()).unwrap();
        assert_eq!(b["k"].as_array().unwrap().len(), b["optimizer"].as_array().unwrap().len());
        assert_eq!(b["certificate_optimizer"], true);
        let o: serde_json::Value = serde_json::from_str(&optimizer_curve("pair_toy", 100, 2, false).unwrap()).unwrap();
        assert_eq!(o["k"].as_array().unwrap().len(), 100);
    }
}
