//! Private distributed primal-dual optimization with value tracking.
//!
//! A round runs, in order: (a) local perturbation points from round-k values,
//! (b) noisy broadcasts of `λ_i`, `y_i`, `z_i`, (c) the primal-dual update,
//! (d) the two tracking updates using the new primal iterate.
//!
//! `y_i` tracks the mean of `f_j(x_j)` and `z_i` the mean of `g_j(x_j)`, so
//! `m·y_i` stands in for the aggregate wherever `∇F` is evaluated.

use nalgebra::DVector;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::accountant::{AccountantError, OptimizerLedger};
use crate::geometry::GeometryError;
use crate::linalg;
use crate::metrics::MetricRow;
use crate::oracle::{lemma12_gap, OptimalSet};
use crate::problem::ProblemInstance;
use crate::schedules::{
    sample_laplace, validate_optimizer_schedules, validate_privacy_finiteness, Certificate, NoiseChannels, NoiseSchedule, Schedule,
};
use crate::topology::WeightMatrix;

// Relative slack when comparing a step against its cap.
const CAP_SLACK: f64 = 1e-12;

#[derive(Debug, Clone, PartialEq, Error)]
pub enum OptimizerError {
    #[error("dimension mismatch: {0}")]
    Dimension(String),
    #[error("schedule certificate failed: {0}")]
    Certificate(String),
    #[error("step {name} = {value} exceeds its cap {cap}")]
    StepCap { name: &'static str, value: f64, cap: f64 },
    #[error("step {name} must be positive and finite, got {value}")]
    BadStep { name: &'static str, value: f64 },
    #[error(transparent)]
    Geometry(#[from] GeometryError),
    #[error(transparent)]
    Accountant(#[from] AccountantError),
}

/// Per-agent iterates plus the last perturbation points.
#[derive(Debug, Clone, PartialEq)]
pub struct AgentIterate {
    pub x: DVector<f64>,
    pub lambda: DVector<f64>,
    pub y: DVector<f64>,
    pub z: DVector<f64>,
    pub alpha: DVector<f64>,
    pub beta: DVector<f64>,
}

impl AgentIterate {
    /// Starts tracking at `y = f_i(x)`, `z = g_i(x)`.
    pub fn start(inst: &ProblemInstance, i: usize, x: DVector<f64>, lambda: DVector<f64>) -> Self {
        AgentIterate {
            y: inst.local_value(i, &x),
            z: inst.local_constraint(i, &x),
            alpha: x.clone(),
            beta: lambda.clone(),
            x,
            lambda,
        }
    }
}

/// What every agent broadcasts in one round, indexed by sender.
#[derive(Debug, Clone, PartialEq)]
pub struct Messages {
    pub lambda: Vec<DVector<f64>>,
    pub y: Vec<DVector<f64>>,
    pub z: Vec<DVector<f64>>,
}

/// Step values used in one round.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct RoundSteps {
    pub chi: f64,
    pub gamma: f64,
    pub theta: f64,
}

fn check_sizes(inst: &ProblemInstance, w: &WeightMatrix, iterates: &[AgentIterate]) -> Result<(), OptimizerError> {
    let m = inst.num_agents();
    if w.size() != m || iterates.len() != m {
        return Err(OptimizerError::Dimension(format!("{} iterates, W of size {}, {m} agents", iterates.len(), w.size())));
    }
    for (i, it) in iterates.iter().enumerate() {
        if it.x.len() != inst.agent(i).dim()
            || it.lambda.len() != inst.constraint_dim()
            || it.y.len() != inst.map_dim()
            || it.z.len() != inst.constraint_dim()
        {
            return Err(OptimizerError::Dimension(format!("agent {i} iterate")));
        }
    }
    Ok(())
}

fn check_channel(name: &str, vs: &[DVector<f64>], m: usize, len: usize) -> Result<(), OptimizerError> {
    if vs.len() != m || vs.iter().any(|v| v.len() != len) {
        return Err(OptimizerError::Dimension(format!("{name}: expected {m} vectors of length {len}")));
    }
    Ok(())
}

/// `α_i = Π_{X_i}[x_i − ρ1(∇f_iᵀ∇F(m y_i) + ∇g_iᵀλ_i)]`, `β_i = Π_D[λ_i + ρ2 m z_i]`.
pub fn perturbation_step(inst: &ProblemInstance, i: usize, it: &AgentIterate, rho1: f64, rho2: f64) -> (DVector<f64>, DVector<f64>) {
    let m = inst.num_agents() as f64;
    let cost_grad = inst.cost().gradient(&(&it.y * m));
    let grad = inst.x_grad_unchecked(i, &it.x, &cost_grad, &it.lambda);
    let alpha = inst.agent(i).set.project_unchecked(&(&it.x - grad * rho1));
    let beta = inst.dual_set().project_unchecked(&(&it.lambda + &it.z * (rho2 * m)));
    (alpha, beta)
}

/// Updated pair of per-agent vectors: `(x, λ)` or `(y, z)`.
pub type VectorPair = (DVector<f64>, DVector<f64>);

/// Primal-dual update given `α_i`, `β_i` already stored in the iterates.
///
/// `dual_noise[j]` obscures agent `j`'s dual broadcast. Returns `(x_i⁺, λ_i⁺)`.
pub fn primal_dual_step(
    inst: &ProblemInstance,
    w: &WeightMatrix,
    iterates: &[AgentIterate],
    gamma: f64,
    chi: f64,
    dual_noise: &[DVector<f64>],
) -> Result<Vec<VectorPair>, OptimizerError> {
    check_sizes(inst, w, iterates)?;
    check_channel("dual noise", dual_noise, iterates.len(), inst.constraint_dim())?;
    let observed: Vec<DVector<f64>> = iterates.iter().zip(dual_noise).map(|(it, n)| &it.lambda + n).collect();
    Ok(primal_dual_observed(inst, w, iterates, gamma, chi, &observed))
}

fn primal_dual_observed(
    inst: &ProblemInstance,
    w: &WeightMatrix,
    iterates: &[AgentIterate],
    gamma: f64,
    chi: f64,
    observed_lambda: &[DVector<f64>],
) -> Vec<(DVector<f64>, DVector<f64>)> {
    let m = inst.num_agents() as f64;
    let dual = inst.dual_set();
    iterates
        .iter()
        .enumerate()
        .map(|(i, it)| {
            let cost_grad = inst.cost().gradient(&(&it.y * m));
            let grad = inst.x_grad_unchecked(i, &it.x, &cost_grad, &it.beta);
            let x_next = inst.agent(i).set.project_unchecked(&(&it.x - grad * gamma));
            let mut pull = DVector::zeros(it.lambda.len());
            for &j in w.neighbors(i) {
                pull += (&observed_lambda[j] - &it.lambda) * w.weight(i, j);
            }
            let lambda_next = dual.project_unchecked(&(&it.lambda + pull * chi + inst.local_constraint(i, &it.alpha) * gamma));
            (x_next, lambda_next)
        })
        .collect()
}

/// Tracking update for `y_i` and `z_i`; `x_next` holds the new primal iterates.
///
/// Returns `(y_i⁺, z_i⁺)`.
#[allow(clippy::too_many_arguments)]
pub fn tracking_step(
    inst: &ProblemInstance,
    w: &WeightMatrix,
    iterates: &[AgentIterate],
    theta: f64,
    chi: f64,
    y_noise: &[DVector<f64>],
    z_noise: &[DVector<f64>],
    x_next: &[DVector<f64>],
) -> Result<Vec<VectorPair>, OptimizerError> {
    check_sizes(inst, w, iterates)?;
    let m = iterates.len();
    check_channel("y noise", y_noise, m, inst.map_dim())?;
    check_channel("z noise", z_noise, m, inst.constraint_dim())?;
    if x_next.len() != m || x_next.iter().enumerate().any(|(i, x)| x.len() != inst.agent(i).dim()) {
        return Err(OptimizerError::Dimension("new primal iterates".into()));
    }
    let oy: Vec<DVector<f64>> = iterates.iter().zip(y_noise).map(|(it, n)| &it.y + n).collect();
    let oz: Vec<DVector<f64>> = iterates.iter().zip(z_noise).map(|(it, n)| &it.z + n).collect();
    Ok(tracking_observed(inst, w, iterates, theta, chi, &oy, &oz, x_next))
}

#[allow(clippy::too_many_arguments)]
fn tracking_observed(
    inst: &ProblemInstance,
    w: &WeightMatrix,
    iterates: &[AgentIterate],
    theta: f64,
    chi: f64,
    observed_y: &[DVector<f64>],
    observed_z: &[DVector<f64>],
    x_next: &[DVector<f64>],
) -> Vec<(DVector<f64>, DVector<f64>)> {
    let keep = 1.0 - theta;
    iterates
        .iter()
        .enumerate()
        .map(|(i, it)| {
            let mut pull_y = DVector::zeros(it.y.len());
            let mut pull_z = DVector::zeros(it.z.len());
            for &j in w.neighbors(i) {
                let wij = w.weight(i, j);
                pull_y += (&observed_y[j] - &it.y) * wij;
                pull_z += (&observed_z[j] - &it.z) * wij;
            }
            let y = &it.y * keep + pull_y * chi + inst.local_value(i, &x_next[i]) - inst.local_value(i, &it.x) * keep;
            let z = &it.z * keep + pull_z * chi + inst.local_constraint(i, &x_next[i]) - inst.local_constraint(i, &it.x) * keep;
            (y, z)
        })
        .collect()
}

/// All agents of one execution.
#[derive(Debug, Clone)]
pub struct Swarm<'a> {
    inst: &'a ProblemInstance,
    w: &'a WeightMatrix,
    iterates: Vec<AgentIterate>,
    rho1: f64,
    rho2: f64,
}

impl<'a> Swarm<'a> {
    pub fn new(inst: &'a ProblemInstance, w: &'a WeightMatrix, iterates: Vec<AgentIterate>, rho1: f64, rho2: f64) -> Result<Self, OptimizerError> {
        check_sizes(inst, w, &iterates)?;
        Ok(Swarm { inst, w, iterates, rho1, rho2 })
    }

    /// Uniform `x_i ∈ X_i` and `λ_i ∈ D`, tracking started at the local values.
    pub fn random_start<R: Rng + ?Sized>(inst: &ProblemInstance, rng: &mut R) -> Result<Vec<AgentIterate>, GeometryError> {
        let dual = inst.dual_set();
        (0..inst.num_agents())
            .map(|i| {
                let x = inst.agent(i).set.sample_uniform(rng)?;
                let lambda = dual.sample_uniform(rng)?;
                Ok(AgentIterate::start(inst, i, x, lambda))
            })
            .collect()
    }

    pub fn iterates(&self) -> &[AgentIterate] {
        &self.iterates
    }

    pub fn primal(&self) -> Vec<DVector<f64>> {
        self.iterates.iter().map(|it| it.x.clone()).collect()
    }

    pub fn dual_mean(&self) -> DVector<f64> {
        linalg::mean(&self.iterates.iter().map(|it| it.lambda.clone()).collect::<Vec<_>>())
    }

    /// Broadcasts of the current state, obscured when `noise` carries scales.
    pub fn broadcast<R: Rng + ?Sized>(&self, noise: Option<(&mut R, [f64; 3])>) -> Messages {
        let mut msg = Messages {
            lambda: self.iterates.iter().map(|it| it.lambda.clone()).collect(),
            y: self.iterates.iter().map(|it| it.y.clone()).collect(),
            z: self.iterates.iter().map(|it| it.z.clone()).collect(),
        };
        if let Some((rng, [nl, ny, nz])) = noise {
            for j in 0..self.iterates.len() {
                let (dl, dy, dz) = (msg.lambda[j].len(), msg.y[j].len(), msg.z[j].len());
                msg.lambda[j] += sample_laplace(rng, nl, dl);
                msg.y[j] += sample_laplace(rng, ny, dy);
                msg.z[j] += sample_laplace(rng, nz, dz);
            }
        }
        msg
    }

    /// One round driven by the given broadcasts.
    pub fn round(&mut self, steps: RoundSteps, messages: &Messages) {
        for i in 0..self.iterates.len() {
            let (alpha, beta) = perturbation_step(self.inst, i, &self.iterates[i], self.rho1, self.rho2);
            self.iterates[i].alpha = alpha;
            self.iterates[i].beta = beta;
        }
        let pd = primal_dual_observed(self.inst, self.w, &self.iterates, steps.gamma, steps.chi, &messages.lambda);
        let x_next: Vec<DVector<f64>> = pd.iter().map(|(x, _)| x.clone()).collect();
        let tr = tracking_observed(self.inst, self.w, &self.iterates, steps.theta, steps.chi, &messages.y, &messages.z, &x_next);
        for (it, ((x, lambda), (y, z))) in self.iterates.iter_mut().zip(pd.into_iter().zip(tr)) {
            it.x = x;
            it.lambda = lambda;
            it.y = y;
            it.z = z;
        }
    }

    /// Metrics of the current state (privacy columns left empty).
    pub fn observe(&self, k: usize, reference: Option<&OptimalSet>) -> MetricRow {
        let x = self.primal();
        let lambdas: Vec<DVector<f64>> = self.iterates.iter().map(|it| it.lambda.clone()).collect();
        let ys: Vec<DVector<f64>> = self.iterates.iter().map(|it| it.y.clone()).collect();
        let zs: Vec<DVector<f64>> = self.iterates.iter().map(|it| it.z.clone()).collect();
        let gsum = self.inst.lagrangian_lambda_grad(&x);
        let gap = lemma12_gap(self.inst, &x, &linalg::mean(&lambdas), self.rho1, self.rho2);
        let mut row = MetricRow::empty(k);
        row.err_x = reference.map(|r| r.distance(&x));
        row.cons_lambda = Some(linalg::max_deviation(&lambdas));
        row.cons_y = Some(linalg::max_deviation(&ys));
        row.cons_z = Some(linalg::max_deviation(&zs));
        row.constraint_max = gsum.iter().copied().reduce(f64::max);
        row.lemma12_margin = Some(gap.margin);
        row
    }
}

/// Settings for a full optimizer run.
#[derive(Debug, Clone, PartialEq)]
pub struct OptimizerConfig {
    pub rho1: f64,
    pub rho2: f64,
    pub chi: Schedule,
    pub gamma: Schedule,
    pub theta: Schedule,
    pub noise: NoiseChannels,
    pub noise_enabled: bool,
    pub horizon: usize,
    pub seed: u64,
    pub override_certificates: bool,
    pub override_step_caps: bool,
    /// Adjacency constant `C` of the privacy bound.
    pub sensitivity: f64,
    /// Iterations to log, strictly increasing.
    pub log_at: Vec<usize>,
}

impl OptimizerConfig {
    /// Schedules and noise of the demand-response experiment with steps at their caps.
    pub fn experiment_defaults(inst: &ProblemInstance, horizon: usize, seed: u64) -> Self {
        OptimizerConfig {
            rho1: inst.rho1_max(),
            rho2: inst.rho2_max(),
            chi: Schedule::Power { scale: 1.0, offset: 0.1, exponent: 0.9 },
            gamma: Schedule::Power { scale: 0.1, offset: 0.1, exponent: 1.0 },
            theta: Schedule::Power { scale: 0.1, offset: 0.1, exponent: 0.96 },
            noise: NoiseChannels::shared(NoiseSchedule { base: 1.0, growth: 0.1, exponent: 0.2 }),
            noise_enabled: true,
            horizon,
            seed,
            override_certificates: false,
            override_step_caps: false,
            sensitivity: 1.0,
            log_at: crate::metrics::log_grid(horizon),
        }
    }

    /// Applies a baseline's schedule and noise settings.
    pub fn with_baseline(&self, baseline: Baseline) -> Self {
        let mut c = self.clone();
        match baseline {
            Baseline::Proposed => {}
            Baseline::Pdp => {
                c.chi = Schedule::Constant { value: 1.0 };
                c.theta = Schedule::Constant { value: 0.0 };
                c.noise_enabled = false;
                c.override_certificates = true;
            }
            Baseline::GeoDp { initial, ratio, noise } => {
                c.chi = Schedule::Constant { value: 1.0 };
                c.gamma = Schedule::Geometric { initial, ratio };
                c.theta = Schedule::Geometric { initial, ratio };
                c.noise = NoiseChannels::shared(NoiseSchedule { base: noise, growth: 0.0, exponent: 0.0 });
                c.noise_enabled = true;
                c.override_certificates = true;
            }
        }
        c
    }
}

/// Comparison methods sharing the optimizer code path.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "method", rename_all = "snake_case")]
pub enum Baseline {
    Proposed,
    /// No noise, full-strength mixing (`χ ≡ 1`) and exact dynamic averaging (`θ ≡ 0`).
    Pdp,
    /// The unweakened method with geometric step and tracking factor and a constant Laplace scale.
    GeoDp { initial: f64, ratio: f64, noise: f64 },
}

/// Output of [`run_optimizer`].
#[derive(Debug, Clone, Serialize)]
pub struct OptimizerRun {
    pub rows: Vec<MetricRow>,
    pub certificate: Certificate,
    pub privacy_certificates: Vec<Certificate>,
    pub rho1: f64,
    pub rho2: f64,
    /// Set when the privacy recursion could not be evaluated.
    pub accountant_error: Option<String>,
    #[serde(skip)]
    pub final_iterates: Vec<AgentIterate>,
}

fn check_step(name: &'static str, value: f64, cap: f64, allow_over: bool) -> Result<(), OptimizerError> {
    if !(value > 0.0 && value.is_finite()) {
        return Err(OptimizerError::BadStep { name, value });
    }
    if !allow_over && value > cap * (1.0 + CAP_SLACK) {
        return Err(OptimizerError::StepCap { name, value, cap });
    }
    Ok(())
}

pub(crate) fn run_streams(seed: u64) -> (ChaCha8Rng, ChaCha8Rng) {
    let init = ChaCha8Rng::seed_from_u64(seed);
    let mut noise = ChaCha8Rng::seed_from_u64(seed);
    noise.set_stream(1);
    (init, noise)
}

pub(crate) fn prepare_run(
    inst: &ProblemInstance,
    config: &OptimizerConfig,
) -> Result<(Certificate, Vec<Certificate>), OptimizerError> {
    let certificate = validate_optimizer_schedules(&config.chi, &config.gamma, &config.theta);
    if !certificate.valid() && !config.override_certificates {
        return Err(OptimizerError::Certificate(certificate.failed().join("; ")));
    }
    check_step("rho1", config.rho1, inst.rho1_max(), config.override_step_caps)?;
    check_step("rho2", config.rho2, inst.rho2_max(), config.override_step_caps)?;
    let privacy = if config.noise_enabled {
        [config.noise.lambda, config.noise.y, config.noise.z]
            .iter()
            .zip(["lambda", "y", "z"])
            .map(|(n, ch)| {
                let mut c = validate_privacy_finiteness(&config.theta, n, Some(&config.chi));
                c.kind = format!("privacy/{ch}");
                c
            })
            .collect()
    } else {
        Vec::new()
    };
    Ok((certificate, privacy))
}

pub fn run_optimizer(
    inst: &ProblemInstance,
    w: &WeightMatrix,
    config: &OptimizerConfig,
    reference: Option<&OptimalSet>,
) -> Result<OptimizerRun, OptimizerError> {
    let (certificate, privacy_certificates) = prepare_run(inst, config)?;
    let (mut init_rng, mut noise_rng) = run_streams(config.seed);
    let start = Swarm::random_start(inst, &mut init_rng)?;
    let mut swarm = Swarm::new(inst, w, start, config.rho1, config.rho2)?;
    let mut ledger = OptimizerLedger::new(config.sensitivity, w.min_self_weight());
    let mut accountant_error = None;
    let mut rows = Vec::with_capacity(config.log_at.len());
    let mut next_log = config.log_at.iter().peekable();
    for k in 1..=config.horizon {
        let steps = RoundSteps { chi: config.chi.value(k), gamma: config.gamma.value(k), theta: config.theta.value(k) };
        let nus = [config.noise.lambda.value(k), config.noise.y.value(k), config.noise.z.value(k)];
        let messages = if config.noise_enabled { swarm.broadcast(Some((&mut noise_rng, nus))) } else { swarm.broadcast::<ChaCha8Rng>(None) };
        swarm.round(steps, &messages);
        let eps = if config.noise_enabled && accountant_error.is_none() {
            match ledger.step(steps.chi, steps.gamma, steps.theta, nus) {
                Ok(e) => Some(e),
                Err(e) => {
                    accountant_error = Some(e.to_string());
                    None
                }
            }
        } else {
            None
        };
        if next_log.peek() == Some(&&k) {
            next_log.next();
            let mut row = swarm.observe(k, reference);
            row.eps_hat = eps;
            row.nu_k = config.noise_enabled.then_some(nus[0]);
            rows.push(row);
        }
    }
    Ok(OptimizerRun {
        rows,
        certificate,
        privacy_certificates,
        rho1: config.rho1,
        rho2: config.rho2,
        accountant_error,
        final_iterates: swarm.iterates,
    })
}
