//! Sensitivity recursions and cumulative privacy-budget upper bounds.
//!
//! Index convention: iteration `k ≥ 1` uses `χ(k)`, `γ(k)`, `θ(k)`, `ν(k)`; the
//! sensitivity after the first round is `C χ(1) γ(1)` (consensus) and the budget
//! is `ε̂_T = Σ_{k ≤ T} Δ_k / ν(k)`. Every figure here is an upper bound.

use nalgebra::DVector;
use serde::Serialize;
use thiserror::Error;

use crate::optimizer::{prepare_run, run_streams, OptimizerConfig, OptimizerError, RoundSteps, Swarm};
use crate::problem::{BallPenalty, ConstraintMap, ProblemError, ProblemInstance};
use crate::schedules::{NoiseChannels, NoiseSchedule, Schedule};
use crate::topology::WeightMatrix;

#[derive(Debug, Clone, PartialEq, Error)]
pub enum AccountantError {
    #[error("step too large at k = {k}: contraction factor {factor} ≤ 0")]
    StepTooLarge { k: usize, factor: f64 },
    #[error("invalid input: {0}")]
    InvalidInput(String),
    #[error("instances are not adjacent: {0}")]
    NotAdjacent(String),
    #[error("optimizer: {0}")]
    Optimizer(String),
    #[error(transparent)]
    Problem(#[from] ProblemError),
}

impl From<OptimizerError> for AccountantError {
    fn from(e: OptimizerError) -> Self {
        AccountantError::Optimizer(e.to_string())
    }
}

/// `Δ⁺ = (1 − w̄χ)Δ + C_r χ γ`.
pub fn consensus_sensitivity_step(delta: f64, w_bar: f64, chi: f64, gamma: f64, c_r: f64) -> Result<f64, AccountantError> {
    let factor = 1.0 - w_bar * chi;
    if factor <= 0.0 {
        return Err(AccountantError::StepTooLarge { k: 0, factor });
    }
    Ok(factor * delta + c_r * chi * gamma)
}

/// Running consensus sensitivity and budget.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct ConsensusLedger {
    pub c_r: f64,
    pub w_bar: f64,
    pub k: usize,
    pub delta: f64,
    pub eps_hat: f64,
}

impl ConsensusLedger {
    pub fn new(c_r: f64, w_bar: f64) -> Self {
        ConsensusLedger { c_r, w_bar, k: 0, delta: 0.0, eps_hat: 0.0 }
    }

    /// Advances one iteration and returns `ε̂_k`.
    pub fn step(&mut self, chi: f64, gamma: f64, nu: f64) -> Result<f64, AccountantError> {
        self.k += 1;
        self.delta = consensus_sensitivity_step(self.delta, self.w_bar, chi, gamma, self.c_r).map_err(|e| match e {
            AccountantError::StepTooLarge { factor, .. } => AccountantError::StepTooLarge { k: self.k, factor },
            other => other,
        })?;
        self.eps_hat += self.delta / nu;
        Ok(self.eps_hat)
    }
}

/// `ε̂_1, …, ε̂_T` for the consensus recursion.
pub fn consensus_epsilon_trace(
    chi: &Schedule,
    gamma: &Schedule,
    noise: &NoiseSchedule,
    c_r: f64,
    w_bar: f64,
    horizon: usize,
) -> Result<Vec<f64>, AccountantError> {
    let mut ledger = ConsensusLedger::new(c_r, w_bar);
    (1..=horizon).map(|k| ledger.step(chi.value(k), gamma.value(k), noise.value(k))).collect()
}

/// `ε̂_T = Σ_{k ≤ T} C_r ς_k / ν(k)`.
pub fn consensus_epsilon_bound(
    chi: &Schedule,
    gamma: &Schedule,
    noise: &NoiseSchedule,
    c_r: f64,
    w_bar: f64,
    horizon: usize,
) -> Result<f64, AccountantError> {
    if horizon == 0 {
        return Err(AccountantError::InvalidInput("horizon must be at least 1".into()));
    }
    Ok(*consensus_epsilon_trace(chi, gamma, noise, c_r, w_bar, horizon)?.last().expect("nonempty"))
}

/// `ς_k = Σ_{l ≤ k} χ(l)γ(l) Π_{l < j ≤ k} (1 − w̄χ(j))`, summed directly in `O(k²)`.
pub fn consensus_varsigma_direct(chi: &Schedule, gamma: &Schedule, w_bar: f64, k: usize) -> f64 {
    (1..=k)
        .map(|l| chi.value(l) * gamma.value(l) * ((l + 1)..=k).map(|j| 1.0 - w_bar * chi.value(j)).product::<f64>())
        .sum()
}

/// `Σ_{k ≤ T} C_r ς_k / ν(k)` from [`consensus_varsigma_direct`].
pub fn consensus_epsilon_direct(chi: &Schedule, gamma: &Schedule, noise: &NoiseSchedule, c_r: f64, w_bar: f64, horizon: usize) -> f64 {
    (1..=horizon).map(|k| c_r * consensus_varsigma_direct(chi, gamma, w_bar, k) / noise.value(k)).sum()
}

/// Budget growth per decade, `ε̂_{10^d} − ε̂_{10^{d−1}}` for `d = 1..=decades`.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct SaturationProbe {
    pub increments: Vec<f64>,
}

impl SaturationProbe {
    pub fn from_trace(trace: &[f64]) -> Self {
        let mut increments = Vec::new();
        let mut lo = 1usize;
        while lo * 10 <= trace.len() {
            increments.push(trace[lo * 10 - 1] - trace[lo - 1]);
            lo *= 10;
        }
        SaturationProbe { increments }
    }

    /// Whether the last decade adds less than the one before it.
    ///
    /// Early decades are skipped since sensitivities build up before they decay.
    pub fn saturating(&self) -> bool {
        match self.increments.as_slice() {
            [.., prev, last] => last < prev,
            _ => false,
        }
    }

    /// `(ε̂_T − ε̂_{T/10}) / ε̂_{T/10}` for the last decade.
    pub fn final_relative_growth(trace: &[f64]) -> Option<f64> {
        let t = trace.len();
        (t >= 10).then(|| (trace[t - 1] - trace[t / 10 - 1]) / trace[t / 10 - 1])
    }
}

/// Running optimizer sensitivities for the dual, value-tracking and
/// constraint-tracking channels, plus the budget.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct OptimizerLedger {
    pub c: f64,
    pub w_bar: f64,
    pub k: usize,
    /// Unit-constant sensitivity sequences; the channel bound is `c` times these.
    pub varsigma_lambda: f64,
    pub varsigma_y: f64,
    pub varsigma_z: f64,
    pub eps_hat: f64,
}

impl OptimizerLedger {
    pub fn new(c: f64, w_bar: f64) -> Self {
        OptimizerLedger { c, w_bar, k: 0, varsigma_lambda: 0.0, varsigma_y: 0.0, varsigma_z: 0.0, eps_hat: 0.0 }
    }

    /// Advances one iteration with per-channel scales `[ν_λ, ν_y, ν_z]`; returns `ε̂_k`.
    pub fn step(&mut self, chi: f64, gamma: f64, theta: f64, nu: [f64; 3]) -> Result<f64, AccountantError> {
        self.k += 1;
        let dual = 1.0 - self.w_bar * chi;
        let tracking = 1.0 - theta - self.w_bar * chi;
        for factor in [dual, tracking] {
            if factor <= 0.0 {
                return Err(AccountantError::StepTooLarge { k: self.k, factor });
            }
        }
        self.varsigma_lambda = dual * self.varsigma_lambda + gamma * chi * theta;
        let increment = (2.0 - theta) * chi * theta;
        self.varsigma_y = tracking * self.varsigma_y + increment;
        self.varsigma_z = tracking * self.varsigma_z + increment;
        self.eps_hat += self.c * (self.varsigma_lambda / nu[0] + self.varsigma_y / nu[1] + self.varsigma_z / nu[2]);
        Ok(self.eps_hat)
    }

    /// `Δ_λ + Δ_y + Δ_z` at the current iteration.
    pub fn total_sensitivity(&self) -> f64 {
        self.c * (self.varsigma_lambda + self.varsigma_y + self.varsigma_z)
    }
}

/// `ε̂_1, …, ε̂_T` for the optimizer recursions.
pub fn optimizer_epsilon_trace(
    chi: &Schedule,
    gamma: &Schedule,
    theta: &Schedule,
    noise: &NoiseChannels,
    c: f64,
    w_bar: f64,
    horizon: usize,
) -> Result<Vec<f64>, AccountantError> {
    let mut ledger = OptimizerLedger::new(c, w_bar);
    (1..=horizon)
        .map(|k| ledger.step(chi.value(k), gamma.value(k), theta.value(k), [noise.lambda.value(k), noise.y.value(k), noise.z.value(k)]))
        .collect()
}

/// `ε̂_T = Σ_{k ≤ T} C(ς_λ + ς_y + ς_z)_k / ν(k)`.
pub fn optimizer_epsilon_bound(
    chi: &Schedule,
    gamma: &Schedule,
    theta: &Schedule,
    noise: &NoiseChannels,
    c: f64,
    w_bar: f64,
    horizon: usize,
) -> Result<f64, AccountantError> {
    if horizon == 0 {
        return Err(AccountantError::InvalidInput("horizon must be at least 1".into()));
    }
    Ok(*optimizer_epsilon_trace(chi, gamma, theta, noise, c, w_bar, horizon)?.last().expect("nonempty"))
}

/// Copy of `inst` whose agent `agent` carries `g + penalty·1`.
///
/// The penalty vanishes on the ball, so both problems agree near any point
/// inside it.
pub fn penalized_neighbor(inst: &ProblemInstance, agent: usize, penalty: BallPenalty) -> Result<ProblemInstance, AccountantError> {
    if agent >= inst.num_agents() {
        return Err(AccountantError::InvalidInput(format!("agent {agent} out of range")));
    }
    let mut agents = inst.agents().to_vec();
    let base = agents[agent].constraint.clone();
    agents[agent].constraint = ConstraintMap::Penalized { base: Box::new(base), penalty };
    let mut out = ProblemInstance::with_dual_radius(agents, inst.cost().clone(), inst.dual_radius())?;
    for (k, v) in inst.metadata() {
        out.set_metadata(k, v.clone());
    }
    out.set_metadata("adjacent_agent", agent.to_string());
    Ok(out)
}

/// Returns the single agent whose data differ between the two instances.
pub fn adjacent_agent(a: &ProblemInstance, b: &ProblemInstance) -> Result<usize, AccountantError> {
    if a.num_agents() != b.num_agents() {
        return Err(AccountantError::NotAdjacent("different agent counts".into()));
    }
    if a.cost() != b.cost() {
        return Err(AccountantError::NotAdjacent("aggregate costs differ".into()));
    }
    if a.dual_radius() != b.dual_radius() {
        return Err(AccountantError::NotAdjacent("dual radii differ".into()));
    }
    let differing: Vec<usize> = (0..a.num_agents()).filter(|&i| a.agent(i) != b.agent(i)).collect();
    match differing.as_slice() {
        [i] if a.agent(*i).set == b.agent(*i).set => Ok(*i),
        [i] => Err(AccountantError::NotAdjacent(format!("agent {i} feasible sets differ"))),
        [] => Err(AccountantError::NotAdjacent("instances are identical".into())),
        many => Err(AccountantError::NotAdjacent(format!("{} agents differ", many.len()))),
    }
}

/// Per-iteration state gap between two adjacent executions with identical observations.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct GapTrace {
    /// `gap[k-1] = ‖λ_i − λ_i'‖₁ + ‖y_i − y_i'‖₁ + ‖z_i − z_i'‖₁` after round `k`, summed over agents.
    pub gap: Vec<f64>,
    /// Analytic `Δ_λ + Δ_y + Δ_z` after round `k` with unit constant.
    pub analytic: Vec<f64>,
}

impl GapTrace {
    /// Smallest `C` with `gap_k ≤ C·scale_k` for `k ≤ until`.
    pub fn fit_constant(&self, scale: impl Fn(usize) -> f64, until: usize) -> f64 {
        (1..=until.min(self.gap.len())).map(|k| self.gap[k - 1] / scale(k)).fold(0.0, f64::max)
    }

    /// Whether `gap_k ≤ c·scale_k` for every `k` in `from..=to`.
    pub fn dominated(&self, scale: impl Fn(usize) -> f64, c: f64, from: usize, to: usize) -> bool {
        (from..=to.min(self.gap.len())).all(|k| self.gap[k - 1] <= c * scale(k))
    }
}

/// Runs `original` with noisy broadcasts, then replays exactly those broadcasts
/// to every agent of `neighbor`, and records the resulting state gap.
///
/// With identical initial states and observations, only the differing agent's
/// internal state can diverge.
pub fn empirical_sensitivity_probe(
    original: &ProblemInstance,
    neighbor: &ProblemInstance,
    w: &WeightMatrix,
    config: &OptimizerConfig,
) -> Result<GapTrace, AccountantError> {
    let identical = original == neighbor;
    if !identical {
        adjacent_agent(original, neighbor)?;
    }
    prepare_run(original, config)?;
    let (mut init_rng, mut noise_rng) = run_streams(config.seed);
    let start = Swarm::random_start(original, &mut init_rng).map_err(|e| AccountantError::InvalidInput(e.to_string()))?;
    let mut p = Swarm::new(original, w, start.clone(), config.rho1, config.rho2)?;
    let mut q = Swarm::new(neighbor, w, start, config.rho1, config.rho2)?;
    let mut ledger = OptimizerLedger::new(1.0, w.min_self_weight());
    let mut gap = Vec::with_capacity(config.horizon);
    let mut analytic = Vec::with_capacity(config.horizon);
    for k in 1..=config.horizon {
        let steps = RoundSteps { chi: config.chi.value(k), gamma: config.gamma.value(k), theta: config.theta.value(k) };
        let nus = [config.noise.lambda.value(k), config.noise.y.value(k), config.noise.z.value(k)];
        let messages = p.broadcast(config.noise_enabled.then_some((&mut noise_rng, nus)));
        p.round(steps, &messages);
        q.round(steps, &messages);
        let mut total = 0.0;
        for (a, b) in p.iterates().iter().zip(q.iterates()) {
            total += l1(&a.lambda, &b.lambda) + l1(&a.y, &b.y) + l1(&a.z, &b.z);
        }
        gap.push(total);
        ledger.step(steps.chi, steps.gamma, steps.theta, nus)?;
        analytic.push(ledger.total_sensitivity());
    }
    Ok(GapTrace { gap, analytic })
}

fn l1(a: &DVector<f64>, b: &DVector<f64>) -> f64 {
    (a - b).abs().sum()
}
