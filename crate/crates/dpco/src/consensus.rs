//! Private constrained consensus: every agent broadcasts a Laplace-obscured
//! copy of its state and moves toward its neighbors' broadcasts with a
//! diminishing weakening factor, plus a diminishing local input term.

use nalgebra::DVector;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::Serialize;
use thiserror::Error;

use crate::accountant::{AccountantError, ConsensusLedger};
use crate::geometry::{ConvexSet, GeometryError};
use crate::linalg;
use crate::metrics::MetricRow;
use crate::schedules::{sample_laplace, validate_consensus_schedules, validate_privacy_finiteness, Certificate, NoiseSchedule, Schedule};
use crate::topology::WeightMatrix;

#[derive(Debug, Clone, PartialEq, Error)]
pub enum ConsensusError {
    #[error("dimension mismatch: {0}")]
    Dimension(String),
    #[error("step values must be positive and finite, got chi {chi}, gamma {gamma}")]
    InvalidStep { chi: f64, gamma: f64 },
    #[error("schedule certificate failed: {0}")]
    Certificate(String),
    #[error(transparent)]
    Geometry(#[from] GeometryError),
    #[error(transparent)]
    Accountant(#[from] AccountantError),
}

/// Local inputs `r_i^k` with a uniform norm bound.
pub trait InputSignal: Sync {
    fn input(&self, agent: usize, k: usize, dim: usize) -> DVector<f64>;
    fn bound(&self) -> f64;
}

/// `r_i^k = 0`.
#[derive(Debug, Clone, Copy, Default)]
pub struct ZeroInput;

impl InputSignal for ZeroInput {
    fn input(&self, _agent: usize, _k: usize, dim: usize) -> DVector<f64> {
        DVector::zeros(dim)
    }

    fn bound(&self) -> f64 {
        0.0
    }
}

/// Time-invariant per-agent inputs.
#[derive(Debug, Clone)]
pub struct ConstantInput(pub Vec<DVector<f64>>);

impl InputSignal for ConstantInput {
    fn input(&self, agent: usize, _k: usize, _dim: usize) -> DVector<f64> {
        self.0[agent].clone()
    }

    fn bound(&self) -> f64 {
        self.0.iter().map(|r| r.norm()).fold(0.0, f64::max)
    }
}

/// One synchronous round; `noises[j]` obscures agent `j`'s broadcast to all of its neighbors.
pub fn consensus_step(
    states: &[DVector<f64>],
    w: &WeightMatrix,
    set: &ConvexSet,
    chi: f64,
    gamma: f64,
    noises: &[DVector<f64>],
    inputs: &[DVector<f64>],
) -> Result<Vec<DVector<f64>>, ConsensusError> {
    let m = w.size();
    if states.len() != m || noises.len() != m || inputs.len() != m {
        return Err(ConsensusError::Dimension(format!(
            "{} states, {} noises, {} inputs for {m} agents",
            states.len(),
            noises.len(),
            inputs.len()
        )));
    }
    if !(chi > 0.0 && chi.is_finite() && gamma > 0.0 && gamma.is_finite()) {
        return Err(ConsensusError::InvalidStep { chi, gamma });
    }
    let d = set.dim();
    for (i, (s, (n, r))) in states.iter().zip(noises.iter().zip(inputs)).enumerate() {
        if s.len() != d || n.len() != d || r.len() != d {
            return Err(ConsensusError::Dimension(format!("agent {i} vectors must have length {d}")));
        }
    }
    let observed: Vec<DVector<f64>> = states.iter().zip(noises).map(|(x, z)| x + z).collect();
    Ok(step_observed(states, w, set, chi, gamma, &observed, inputs))
}

fn step_observed(
    states: &[DVector<f64>],
    w: &WeightMatrix,
    set: &ConvexSet,
    chi: f64,
    gamma: f64,
    observed: &[DVector<f64>],
    inputs: &[DVector<f64>],
) -> Vec<DVector<f64>> {
    (0..states.len())
        .map(|i| {
            let mut pull = DVector::zeros(states[i].len());
            for &j in w.neighbors(i) {
                pull += (&observed[j] - &states[i]) * w.weight(i, j);
            }
            set.project_unchecked(&(&states[i] + pull * chi + &inputs[i] * gamma))
        })
        .collect()
}

/// Settings for a full consensus run.
#[derive(Debug, Clone)]
pub struct ConsensusConfig {
    pub set: ConvexSet,
    pub chi: Schedule,
    pub gamma: Schedule,
    /// `None` disables noise.
    pub noise: Option<NoiseSchedule>,
    pub seed: u64,
    pub horizon: usize,
    pub override_certificates: bool,
    /// Starting states; drawn uniformly from the set when absent.
    pub initial: Option<Vec<DVector<f64>>>,
    /// Input-sensitivity constant of the privacy bound.
    pub sensitivity: f64,
    /// Iterations to log, strictly increasing.
    pub log_at: Vec<usize>,
}

/// Output of [`run_consensus`].
#[derive(Debug, Clone, Serialize)]
pub struct ConsensusRun {
    pub rows: Vec<MetricRow>,
    pub certificate: Certificate,
    pub privacy_certificate: Option<Certificate>,
    /// `Σ_k χ^k Σ_i ‖x_i^k − x̄^k‖²`.
    pub chi_weighted_square_sum: f64,
    /// `Σ_k γ^k Σ_i ‖x_i^k − x̄^k‖`.
    pub gamma_weighted_sum: f64,
    /// Mean absolute noise entry over the run.
    pub mean_abs_noise: f64,
    #[serde(skip)]
    pub final_states: Vec<DVector<f64>>,
}

pub fn run_consensus(
    w: &WeightMatrix,
    inputs: &dyn InputSignal,
    config: &ConsensusConfig,
) -> Result<ConsensusRun, ConsensusError> {
    let certificate = validate_consensus_schedules(&config.chi, &config.gamma);
    if !certificate.valid() && !config.override_certificates {
        return Err(ConsensusError::Certificate(certificate.failed().join("; ")));
    }
    let m = w.size();
    let d = config.set.dim();
    let mut init_rng = ChaCha8Rng::seed_from_u64(config.seed);
    let mut noise_rng = ChaCha8Rng::seed_from_u64(config.seed);
    noise_rng.set_stream(1);
    let mut states = match &config.initial {
        Some(init) => {
            if init.len() != m || init.iter().any(|x| x.len() != d) {
                return Err(ConsensusError::Dimension("initial states".into()));
            }
            init.clone()
        }
        None => (0..m).map(|_| config.set.sample_uniform(&mut init_rng)).collect::<Result<_, _>>()?,
    };
    let mut ledger = ConsensusLedger::new(config.sensitivity, w.min_self_weight());
    let mut rows = Vec::with_capacity(config.log_at.len());
    let mut next_log = config.log_at.iter().peekable();
    let (mut sq_sum, mut lin_sum, mut abs_noise, mut noise_count) = (0.0, 0.0, 0.0, 0usize);
    for k in 1..=config.horizon {
        let chi = config.chi.value(k);
        let gamma = config.gamma.value(k);
        let (observed, nu) = match &config.noise {
            Some(noise) => {
                let nu = noise.value(k);
                let obs: Vec<DVector<f64>> = states
                    .iter()
                    .map(|x| {
                        let z = sample_laplace(&mut noise_rng, nu, d);
                        abs_noise += z.abs().sum();
                        x + z
                    })
                    .collect();
                noise_count += m * d;
                (obs, Some(nu))
            }
            None => (states.clone(), None),
        };
        let r: Vec<DVector<f64>> = (0..m).map(|i| inputs.input(i, k, d)).collect();
        if !(chi > 0.0 && gamma > 0.0) {
            return Err(ConsensusError::InvalidStep { chi, gamma });
        }
        states = step_observed(&states, w, &config.set, chi, gamma, &observed, &r);
        let center = linalg::mean(&states);
        let devs: Vec<f64> = states.iter().map(|x| (x - &center).norm()).collect();
        sq_sum += chi * devs.iter().map(|v| v * v).sum::<f64>();
        lin_sum += gamma * devs.iter().sum::<f64>();
        let eps = nu.map(|nu| ledger.step(chi, gamma, nu)).transpose()?;
        if next_log.peek() == Some(&&k) {
            next_log.next();
            let mut row = MetricRow::empty(k);
            row.err_x = Some(devs.iter().copied().fold(0.0, f64::max));
            row.eps_hat = eps;
            row.nu_k = nu;
            rows.push(row);
        }
    }
    let privacy_certificate = config.noise.as_ref().map(|n| validate_privacy_finiteness(&config.gamma, n, Some(&config.chi)));
    Ok(ConsensusRun {
        rows,
        certificate,
        privacy_certificate,
        chi_weighted_square_sum: sq_sum,
        gamma_weighted_sum: lin_sum,
        mean_abs_noise: if noise_count > 0 { abs_noise / noise_count as f64 } else { 0.0 },
        final_states: states,
    })
}
