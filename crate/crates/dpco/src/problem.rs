//! Constrained aggregative problems: minimize `F(Σ f_i(x_i))` subject to
//! `x_i ∈ X_i` and `Σ g_i(x_i) ≤ 0`.
//!
//! Local maps `f_i` are affine, constraint maps `g_i` are affine, convex
//! quadratic, or one of those plus a squared distance-to-ball penalty, and the
//! aggregate cost `F` is a convex quadratic. Every bound in [`Constants`] is
//! derived analytically from these forms.

use std::collections::BTreeMap;

use nalgebra::{DMatrix, DVector};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::geometry::{ConvexSet, GeometryError};
use crate::linalg::{self, spectral_norm};
use crate::oracle;

const PSD_TOL: f64 = 1e-10;

#[derive(Debug, Clone, PartialEq, Error)]
pub enum ProblemError {
    #[error("dimension mismatch: {0}")]
    Dimension(String),
    #[error("unsupported form: {0}")]
    Unsupported(String),
    #[error("slater violation: constraint component {component} evaluates to {value} at the candidate point")]
    SlaterViolation { component: usize, value: f64 },
    #[error("reference dual must be nonnegative")]
    NegativeReferenceDual,
    #[error("invalid parameter: {0}")]
    InvalidParameter(String),
    #[error(transparent)]
    Geometry(#[from] GeometryError),
    #[error("json: {0}")]
    Json(String),
}

/// `x ↦ A x + b`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct AffineMap {
    #[serde(with = "linalg::matrix_rows")]
    pub matrix: DMatrix<f64>,
    #[serde(with = "linalg::vector")]
    pub offset: DVector<f64>,
}

impl AffineMap {
    pub fn new(matrix: DMatrix<f64>, offset: DVector<f64>) -> Result<Self, ProblemError> {
        if matrix.nrows() != offset.len() {
            return Err(ProblemError::Dimension(format!(
                "affine map has {} rows but offset of length {}",
                matrix.nrows(),
                offset.len()
            )));
        }
        Ok(AffineMap { matrix, offset })
    }

    pub fn linear(matrix: DMatrix<f64>) -> Self {
        let offset = DVector::zeros(matrix.nrows());
        AffineMap { matrix, offset }
    }

    pub fn eval(&self, x: &DVector<f64>) -> DVector<f64> {
        &self.matrix * x + &self.offset
    }

    pub fn in_dim(&self) -> usize {
        self.matrix.ncols()
    }

    pub fn out_dim(&self) -> usize {
        self.matrix.nrows()
    }
}

/// One convex component `xᵀQx + cᵀx + e` with `Q` symmetric positive semidefinite.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct QuadraticComponent {
    #[serde(with = "linalg::matrix_rows")]
    pub quad: DMatrix<f64>,
    #[serde(with = "linalg::vector")]
    pub lin: DVector<f64>,
    pub constant: f64,
}

/// `weight · dist(x, B(center, radius))²`, zero inside the ball.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct BallPenalty {
    #[serde(with = "linalg::vector")]
    pub center: DVector<f64>,
    pub radius: f64,
    pub weight: f64,
}

impl BallPenalty {
    fn excess(&self, x: &DVector<f64>) -> (f64, DVector<f64>) {
        let offset = x - &self.center;
        let n = offset.norm();
        if n <= self.radius {
            (0.0, DVector::zeros(x.len()))
        } else {
            let out = n - self.radius;
            (out, offset * (out / n))
        }
    }

    pub fn value(&self, x: &DVector<f64>) -> f64 {
        let (out, _) = self.excess(x);
        self.weight * out * out
    }

    pub fn gradient(&self, x: &DVector<f64>) -> DVector<f64> {
        let (_, displacement) = self.excess(x);
        displacement * (2.0 * self.weight)
    }
}

/// Componentwise convex constraint map `g_i`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "form", rename_all = "snake_case", deny_unknown_fields)]
pub enum ConstraintMap {
    Affine { map: AffineMap },
    Quadratic { components: Vec<QuadraticComponent> },
    /// `base(x) + penalty(x)·1`.
    Penalized { base: Box<ConstraintMap>, penalty: BallPenalty },
}

impl ConstraintMap {
    pub fn affine(matrix: DMatrix<f64>, offset: DVector<f64>) -> Result<Self, ProblemError> {
        Ok(ConstraintMap::Affine { map: AffineMap::new(matrix, offset)? })
    }

    pub fn out_dim(&self) -> usize {
        match self {
            ConstraintMap::Affine { map } => map.out_dim(),
            ConstraintMap::Quadratic { components } => components.len(),
            ConstraintMap::Penalized { base, .. } => base.out_dim(),
        }
    }

    pub fn in_dim(&self) -> Option<usize> {
        match self {
            ConstraintMap::Affine { map } => Some(map.in_dim()),
            ConstraintMap::Quadratic { components } => components.first().map(|c| c.lin.len()),
            ConstraintMap::Penalized { base, .. } => base.in_dim(),
        }
    }

    pub fn eval(&self, x: &DVector<f64>) -> DVector<f64> {
        match self {
            ConstraintMap::Affine { map } => map.eval(x),
            ConstraintMap::Quadratic { components } => DVector::from_iterator(
                components.len(),
                components.iter().map(|c| x.dot(&(&c.quad * x)) + c.lin.dot(x) + c.constant),
            ),
            ConstraintMap::Penalized { base, penalty } => base.eval(x).add_scalar(penalty.value(x)),
        }
    }

    /// Jacobian, one row per component.
    pub fn jacobian(&self, x: &DVector<f64>) -> DMatrix<f64> {
        match self {
            ConstraintMap::Affine { map } => map.matrix.clone(),
            ConstraintMap::Quadratic { components } => {
                let mut jac = DMatrix::zeros(components.len(), x.len());
                for (p, c) in components.iter().enumerate() {
                    let grad = (&c.quad + c.quad.transpose()) * x + &c.lin;
                    jac.set_row(p, &grad.transpose());
                }
                jac
            }
            ConstraintMap::Penalized { base, penalty } => {
                let mut jac = base.jacobian(x);
                let grad = penalty.gradient(x).transpose();
                for p in 0..jac.nrows() {
                    let row = jac.row(p) + &grad;
                    jac.set_row(p, &row);
                }
                jac
            }
        }
    }

    /// `Jᵀλ`.
    pub fn jacobian_transpose_mul(&self, x: &DVector<f64>, lambda: &DVector<f64>) -> DVector<f64> {
        match self {
            ConstraintMap::Affine { map } => map.matrix.tr_mul(lambda),
            _ => self.jacobian(x).tr_mul(lambda),
        }
    }

    fn check(&self, dim: usize) -> Result<(), ProblemError> {
        match self {
            ConstraintMap::Affine { map } => {
                if map.in_dim() != dim {
                    return Err(ProblemError::Dimension(format!("constraint takes {} inputs, set has {dim}", map.in_dim())));
                }
            }
            ConstraintMap::Quadratic { components } => {
                for c in components {
                    if c.quad.nrows() != dim || c.quad.ncols() != dim || c.lin.len() != dim {
                        return Err(ProblemError::Dimension("quadratic constraint component".into()));
                    }
                    if linalg::min_symmetric_eigenvalue(&c.quad) < -PSD_TOL {
                        return Err(ProblemError::Unsupported("constraint component is not convex".into()));
                    }
                }
            }
            ConstraintMap::Penalized { base, penalty } => {
                base.check(dim)?;
                if penalty.center.len() != dim || penalty.radius < 0.0 || penalty.weight < 0.0 {
                    return Err(ProblemError::Unsupported("penalty needs matching center, radius ≥ 0, weight ≥ 0".into()));
                }
            }
        }
        Ok(())
    }

    /// (value bound, Jacobian norm bound, Jacobian Lipschitz bound) over a set of radius `d`.
    fn bounds(&self, d: f64) -> (f64, f64, f64) {
        match self {
            ConstraintMap::Affine { map } => {
                let a = spectral_norm(&map.matrix);
                (a * d + map.offset.norm(), a, 0.0)
            }
            ConstraintMap::Quadratic { components } => {
                let (mut v, mut j, mut h) = (0.0, 0.0, 0.0);
                for c in components {
                    let q = spectral_norm(&((&c.quad + c.quad.transpose()) * 0.5));
                    let l = c.lin.norm();
                    v += (q * d * d + l * d + c.constant.abs()).powi(2);
                    j += (2.0 * q * d + l).powi(2);
                    h += (2.0 * q).powi(2);
                }
                (v.sqrt(), j.sqrt(), h.sqrt())
            }
            ConstraintMap::Penalized { base, penalty } => {
                let (v, j, h) = base.bounds(d);
                let reach = d + penalty.center.norm();
                let root_p = (base.out_dim() as f64).sqrt();
                let w = penalty.weight;
                (v + root_p * w * reach * reach, j + root_p * 2.0 * w * reach, h + root_p * 2.0 * w)
            }
        }
    }
}

/// Aggregate cost `F(y) = yᵀQy + qᵀy + c` with `Q` symmetric positive semidefinite.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct QuadraticCost {
    #[serde(with = "linalg::matrix_rows")]
    pub quad: DMatrix<f64>,
    #[serde(with = "linalg::vector")]
    pub lin: DVector<f64>,
    pub constant: f64,
}

impl QuadraticCost {
    pub fn new(quad: DMatrix<f64>, lin: DVector<f64>, constant: f64) -> Result<Self, ProblemError> {
        if quad.nrows() != quad.ncols() || quad.nrows() != lin.len() {
            return Err(ProblemError::Dimension("cost matrix and linear term".into()));
        }
        if (&quad - quad.transpose()).abs().max() > PSD_TOL {
            return Err(ProblemError::Unsupported("cost matrix must be symmetric".into()));
        }
        if linalg::min_symmetric_eigenvalue(&quad) < -PSD_TOL {
            return Err(ProblemError::Unsupported("cost matrix must be positive semidefinite".into()));
        }
        Ok(QuadraticCost { quad, lin, constant })
    }

    pub fn dim(&self) -> usize {
        self.lin.len()
    }

    pub fn value(&self, y: &DVector<f64>) -> f64 {
        y.dot(&(&self.quad * y)) + self.lin.dot(y) + self.constant
    }

    pub fn gradient(&self, y: &DVector<f64>) -> DVector<f64> {
        (&self.quad * y) * 2.0 + &self.lin
    }
}

/// One agent's data: feasible set, local map and constraint map.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct LocalProblem {
    pub set: ConvexSet,
    pub map: AffineMap,
    pub constraint: ConstraintMap,
}

impl LocalProblem {
    pub fn dim(&self) -> usize {
        self.set.dim()
    }
}

/// Analytic bounds over the product of feasible sets.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Constants {
    /// `max_i sup ‖x_i‖`.
    pub d_x: f64,
    pub c_f: f64,
    pub c_g: f64,
    pub l_f: f64,
    pub l_g: f64,
    /// Lipschitz bound of the constraint Jacobian.
    pub g_g: f64,
    /// Bound on `‖∇F‖` over the reachable aggregate.
    pub l_cost: f64,
    /// Lipschitz bound of `∇F`.
    pub g_cost: f64,
    /// Lipschitz bound of the gradient of `x ↦ F(Σ f_i(x_i))`.
    pub g_j: f64,
}

/// A validated problem with its constants, dual radius and step caps.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ProblemInstance {
    agents: Vec<LocalProblem>,
    cost: QuadraticCost,
    constants: Constants,
    dual_radius: f64,
    rho1_max: f64,
    rho2_max: f64,
    #[serde(with = "linalg::opt_vectors")]
    slater_point: Option<Vec<DVector<f64>>>,
    metadata: BTreeMap<String, String>,
}

/// Result of the dual-radius computation.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct DualBound {
    pub radius: f64,
    /// Lower bound on `min_X L(x, λ̃)`.
    pub q_tilde: f64,
    pub objective_at_slater: f64,
    pub slater_gap: f64,
}

impl ProblemInstance {
    /// Builds an instance with a user-supplied dual radius.
    pub fn with_dual_radius(agents: Vec<LocalProblem>, cost: QuadraticCost, dual_radius: f64) -> Result<Self, ProblemError> {
        if !(dual_radius.is_finite() && dual_radius > 0.0) {
            return Err(ProblemError::InvalidParameter(format!("dual radius {dual_radius}")));
        }
        let constants = estimate_constants(&agents, &cost)?;
        let mut inst = ProblemInstance {
            agents,
            cost,
            constants,
            dual_radius,
            rho1_max: 0.0,
            rho2_max: 0.0,
            slater_point: None,
            metadata: BTreeMap::new(),
        };
        inst.refresh_caps();
        Ok(inst)
    }

    /// Builds an instance whose dual radius comes from a strictly feasible point.
    pub fn with_slater_point(
        agents: Vec<LocalProblem>,
        cost: QuadraticCost,
        slater_point: Vec<DVector<f64>>,
        reference_dual: &DVector<f64>,
    ) -> Result<Self, ProblemError> {
        let mut inst = Self::with_dual_radius(agents, cost, 1.0)?;
        let bound = compute_dual_bound(&inst, &slater_point, reference_dual)?;
        inst.dual_radius = bound.radius;
        inst.slater_point = Some(slater_point);
        inst.metadata.insert("q_tilde_lower_bound".into(), format!("{}", bound.q_tilde));
        inst.refresh_caps();
        Ok(inst)
    }

    fn refresh_caps(&mut self) {
        let c = &self.constants;
        self.rho1_max = 1.0 / (c.g_j + self.dual_radius * c.g_g);
        self.rho2_max = 1.0 / (self.agents.len() as f64 * c.c_g);
    }

    pub fn agents(&self) -> &[LocalProblem] {
        &self.agents
    }

    pub fn agent(&self, i: usize) -> &LocalProblem {
        &self.agents[i]
    }

    pub fn num_agents(&self) -> usize {
        self.agents.len()
    }

    pub fn cost(&self) -> &QuadraticCost {
        &self.cost
    }

    pub fn constants(&self) -> &Constants {
        &self.constants
    }

    pub fn dual_radius(&self) -> f64 {
        self.dual_radius
    }

    pub fn dual_set(&self) -> ConvexSet {
        ConvexSet::DualBall { radius: self.dual_radius, dim: self.constraint_dim() }
    }

    pub fn rho1_max(&self) -> f64 {
        self.rho1_max
    }

    pub fn rho2_max(&self) -> f64 {
        self.rho2_max
    }

    pub fn slater_point(&self) -> Option<&[DVector<f64>]> {
        self.slater_point.as_deref()
    }

    pub fn metadata(&self) -> &BTreeMap<String, String> {
        &self.metadata
    }

    pub fn set_metadata(&mut self, key: &str, value: impl Into<String>) {
        self.metadata.insert(key.to_string(), value.into());
    }

    /// Dimension `M` of the aggregate.
    pub fn map_dim(&self) -> usize {
        self.cost.dim()
    }

    /// Number `P` of coupled constraints.
    pub fn constraint_dim(&self) -> usize {
        self.agents[0].constraint.out_dim()
    }

    pub fn dims(&self) -> Vec<usize> {
        self.agents.iter().map(LocalProblem::dim).collect()
    }

    pub fn local_value(&self, i: usize, x_i: &DVector<f64>) -> DVector<f64> {
        self.agents[i].map.eval(x_i)
    }

    pub fn local_constraint(&self, i: usize, x_i: &DVector<f64>) -> DVector<f64> {
        self.agents[i].constraint.eval(x_i)
    }

    /// `Σ f_i(x_i)`.
    pub fn aggregate(&self, x: &[DVector<f64>]) -> DVector<f64> {
        let mut acc = DVector::zeros(self.map_dim());
        for (i, xi) in x.iter().enumerate() {
            acc += self.local_value(i, xi);
        }
        acc
    }

    /// `F(Σ f_i(x_i))`.
    pub fn objective(&self, x: &[DVector<f64>]) -> f64 {
        self.cost.value(&self.aggregate(x))
    }

    /// `L(x, λ) = F(Σ f_i(x_i)) + λᵀ Σ g_i(x_i)`.
    pub fn lagrangian(&self, x: &[DVector<f64>], lambda: &DVector<f64>) -> f64 {
        self.objective(x) + lambda.dot(&self.lagrangian_lambda_grad(x))
    }

    /// `∇f_iᵀ ∇F(y) + ∇g_i(x_i)ᵀ λ`, with `y` the argument handed to `∇F`.
    pub fn lagrangian_x_grad(
        &self,
        i: usize,
        x_i: &DVector<f64>,
        y: &DVector<f64>,
        lambda: &DVector<f64>,
    ) -> Result<DVector<f64>, ProblemError> {
        let a = &self.agents[i];
        if x_i.len() != a.dim() || y.len() != self.map_dim() || lambda.len() != self.constraint_dim() {
            return Err(ProblemError::Dimension(format!(
                "agent {i}: x {} (want {}), y {} (want {}), λ {} (want {})",
                x_i.len(),
                a.dim(),
                y.len(),
                self.map_dim(),
                lambda.len(),
                self.constraint_dim()
            )));
        }
        Ok(self.x_grad_unchecked(i, x_i, &self.cost.gradient(y), lambda))
    }

    pub(crate) fn x_grad_unchecked(
        &self,
        i: usize,
        x_i: &DVector<f64>,
        cost_grad: &DVector<f64>,
        lambda: &DVector<f64>,
    ) -> DVector<f64> {
        let a = &self.agents[i];
        a.map.matrix.tr_mul(cost_grad) + a.constraint.jacobian_transpose_mul(x_i, lambda)
    }

    /// `Σ g_i(x_i)`.
    pub fn lagrangian_lambda_grad(&self, x: &[DVector<f64>]) -> DVector<f64> {
        let mut acc = DVector::zeros(self.constraint_dim());
        for (i, xi) in x.iter().enumerate() {
            acc += self.local_constraint(i, xi);
        }
        acc
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("instance serializes")
    }

    /// Parses an instance and recomputes its constants and caps from the data.
    pub fn from_json(text: &str) -> Result<Self, ProblemError> {
        let doc: ProblemInstance = serde_json::from_str(text).map_err(|e| ProblemError::Json(e.to_string()))?;
        let mut inst = Self::with_dual_radius(doc.agents, doc.cost, doc.dual_radius)?;
        inst.slater_point = doc.slater_point;
        inst.metadata = doc.metadata;
        Ok(inst)
    }
}

/// Analytic constants for affine maps, convex-quadratic constraints and a quadratic cost.
pub fn estimate_constants(agents: &[LocalProblem], cost: &QuadraticCost) -> Result<Constants, ProblemError> {
    if agents.is_empty() {
        return Err(ProblemError::InvalidParameter("at least one agent is required".into()));
    }
    let m_out = cost.dim();
    let p_out = agents[0].constraint.out_dim();
    let mut c = Constants { d_x: 0.0, c_f: 0.0, c_g: 0.0, l_f: 0.0, l_g: 0.0, g_g: 0.0, l_cost: 0.0, g_cost: 0.0, g_j: 0.0 };
    for (i, a) in agents.iter().enumerate() {
        a.set.validate()?;
        let dim = a.dim();
        if a.map.in_dim() != dim || a.map.out_dim() != m_out {
            return Err(ProblemError::Dimension(format!(
                "agent {i}: map is {}x{}, expected {m_out}x{dim}",
                a.map.out_dim(),
                a.map.in_dim()
            )));
        }
        if a.constraint.out_dim() != p_out {
            return Err(ProblemError::Dimension(format!("agent {i}: {} constraints, expected {p_out}", a.constraint.out_dim())));
        }
        a.constraint.check(dim)?;
        let d = a.set.diameter_bound()?;
        let psi = spectral_norm(&a.map.matrix);
        let (gv, gj, gh) = a.constraint.bounds(d);
        c.d_x = c.d_x.max(d);
        c.l_f = c.l_f.max(psi);
        c.c_f = c.c_f.max(psi * d + a.map.offset.norm());
        c.c_g = c.c_g.max(gv);
        c.l_g = c.l_g.max(gj);
        c.g_g = c.g_g.max(gh);
    }
    let m = agents.len() as f64;
    let q = spectral_norm(&cost.quad);
    c.g_cost = 2.0 * q;
    c.l_cost = 2.0 * q * m * c.c_f + cost.lin.norm();
    c.g_j = m * c.l_f * c.l_f * c.g_cost;
    Ok(c)
}

/// Dual radius `(F(Σf(x̂)) − q̃) / min_p(−Σ g_p(x̂)) + 1` with `q̃` a certified
/// lower bound on `min_X L(x, λ̃)`.
pub fn compute_dual_bound(
    inst: &ProblemInstance,
    slater_point: &[DVector<f64>],
    reference_dual: &DVector<f64>,
) -> Result<DualBound, ProblemError> {
    if slater_point.len() != inst.num_agents() {
        return Err(ProblemError::Dimension("slater point must have one block per agent".into()));
    }
    if reference_dual.len() != inst.constraint_dim() {
        return Err(ProblemError::Dimension("reference dual".into()));
    }
    if reference_dual.iter().any(|v| *v < 0.0) {
        return Err(ProblemError::NegativeReferenceDual);
    }
    let gsum = inst.lagrangian_lambda_grad(slater_point);
    for (p, v) in gsum.iter().enumerate() {
        if *v >= 0.0 {
            return Err(ProblemError::SlaterViolation { component: p, value: *v });
        }
    }
    let gap = gsum.iter().map(|v| -v).fold(f64::INFINITY, f64::min);
    let objective = inst.objective(slater_point);
    let q_tilde = oracle::minimize_lagrangian(inst, reference_dual, oracle::INNER_ITERATIONS)?.lower_bound;
    Ok(DualBound { radius: dual_radius_formula(objective, q_tilde, gap), q_tilde, objective_at_slater: objective, slater_gap: gap })
}

/// `(objective − q̃)/gap + 1`.
pub fn dual_radius_formula(objective: f64, q_tilde: f64, gap: f64) -> f64 {
    (objective - q_tilde) / gap + 1.0
}

/// Demand-response instance with the price split `(π_p, π_s)`.
///
/// Agent 0 additionally owns the shortfall variable `z ∈ [0, z_max]^T`, so the
/// aggregate is `[Σ Ψ_i x_i ; z]` and `F([a; z]) = π_p‖z‖² + π_s‖z − a + p‖²`.
/// The coupled constraint `Σ Ψ_i x_i − p − z ≤ 0` is split as
/// `g_0 = Ψ_0 x_0 − z − p/m` and `g_i = Ψ_i x_i − p/m`.
pub fn make_demand_response(m: usize, periods: usize, price_peak: f64, price_shortfall: f64, seed: u64) -> Result<ProblemInstance, ProblemError> {
    if m < 2 || periods < 1 {
        return Err(ProblemError::InvalidParameter(format!("need m ≥ 2 and T ≥ 1, got m={m}, T={periods}")));
    }
    if !(price_peak > 0.0 && price_shortfall > 0.0) {
        return Err(ProblemError::InvalidParameter("prices must be positive".into()));
    }
    let t = periods;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let loads: Vec<DMatrix<f64>> = (0..m)
        .map(|_| {
            let raw = DMatrix::from_fn(t, t, |_, _| rng.gen::<f64>());
            let n = spectral_norm(&raw);
            raw / n.max(1.0)
        })
        .collect();
    let full_load: DVector<f64> = loads.iter().fold(DVector::zeros(t), |acc, psi| acc + psi.column_sum());
    let bid = DVector::from_iterator(t, full_load.iter().map(|l| l * rng.gen_range(0.25..0.75)));
    let local_radius = (t as f64).sqrt();
    let max_psi = loads.iter().map(spectral_norm).fold(0.0, f64::max);
    let z_max = 2.0 * bid.amax() + 2.0 * m as f64 * max_psi * local_radius;
    let share = &bid / m as f64;

    let mut agents = Vec::with_capacity(m);
    for (i, psi) in loads.iter().enumerate() {
        if i == 0 {
            let mut map = DMatrix::zeros(2 * t, 2 * t);
            map.view_mut((0, 0), (t, t)).copy_from(psi);
            map.view_mut((t, t), (t, t)).fill_with_identity();
            let mut g = DMatrix::zeros(t, 2 * t);
            g.view_mut((0, 0), (t, t)).copy_from(psi);
            g.view_mut((0, t), (t, t)).copy_from(&(-DMatrix::<f64>::identity(t, t)));
            let mut upper = vec![1.0; t];
            upper.extend(std::iter::repeat_n(z_max, t));
            agents.push(LocalProblem {
                set: ConvexSet::boxed(vec![0.0; 2 * t], upper)?,
                map: AffineMap::linear(map),
                constraint: ConstraintMap::affine(g, -&share)?,
            });
        } else {
            let mut map = DMatrix::zeros(2 * t, t);
            map.view_mut((0, 0), (t, t)).copy_from(psi);
            agents.push(LocalProblem {
                set: ConvexSet::cube(t, 0.0, 1.0)?,
                map: AffineMap::linear(map),
                constraint: ConstraintMap::affine(psi.clone(), -&share)?,
            });
        }
    }

    let eye = DMatrix::<f64>::identity(t, t);
    let mut quad = DMatrix::zeros(2 * t, 2 * t);
    quad.view_mut((0, 0), (t, t)).copy_from(&(&eye * price_shortfall));
    quad.view_mut((0, t), (t, t)).copy_from(&(&eye * -price_shortfall));
    quad.view_mut((t, 0), (t, t)).copy_from(&(&eye * -price_shortfall));
    quad.view_mut((t, t), (t, t)).copy_from(&(&eye * (price_peak + price_shortfall)));
    let mut lin = DVector::zeros(2 * t);
    lin.rows_mut(0, t).copy_from(&(&bid * (-2.0 * price_shortfall)));
    lin.rows_mut(t, t).copy_from(&(&bid * (2.0 * price_shortfall)));
    let cost = QuadraticCost::new(quad, lin, price_shortfall * bid.norm_squared())?;

    let mut slater: Vec<DVector<f64>> = agents.iter().map(|a| DVector::zeros(a.dim())).collect();
    slater[0].rows_mut(t, t).fill(bid.amax());
    let mut inst = ProblemInstance::with_slater_point(agents, cost, slater, &DVector::zeros(t))?;
    inst.set_metadata("generator", "demand_response");
    inst.set_metadata("periods", t.to_string());
    inst.set_metadata("seed", seed.to_string());
    inst.set_metadata("bid", format!("{:?}", bid.as_slice()));
    inst.set_metadata("z_max", z_max.to_string());
    inst.set_metadata("slater_point", "x_i = 0, z = max(bid)");
    Ok(inst)
}

/// Demand-response bid vector `p`, recovered from the cost's linear term.
pub fn demand_response_bid(inst: &ProblemInstance) -> DVector<f64> {
    let t = inst.map_dim() / 2;
    let c = &inst.cost;
    c.lin.rows(t, t).into_owned() / (2.0 * c.quad[(0, 0)])
}

/// One agent: `f(x) = x`, `g(x) = x − 1`, `F(y) = y²` on `[−1, 1]`.
pub fn scalar_toy() -> ProblemInstance {
    let agent = LocalProblem {
        set: ConvexSet::cube(1, -1.0, 1.0).expect("valid box"),
        map: AffineMap::linear(DMatrix::identity(1, 1)),
        constraint: ConstraintMap::affine(DMatrix::identity(1, 1), DVector::from_element(1, -1.0)).expect("valid map"),
    };
    let cost = QuadraticCost::new(DMatrix::identity(1, 1), DVector::zeros(1), 0.0).expect("valid cost");
    ProblemInstance::with_slater_point(vec![agent], cost, vec![DVector::zeros(1)], &DVector::zeros(1)).expect("valid toy")
}

/// Two agents on `[−1, 1]` with `f_i(x_i) = x_i e_i`, `F(y) = ‖y − 1‖²` and the
/// binding constraint `x_1 + x_2 ≤ 1`, split as `g_i = x_i − 1/2`.
///
/// Unique saddle point: `x* = (1/2, 1/2)`, `λ* = 1`.
pub fn pair_toy() -> ProblemInstance {
    let agents = (0..2)
        .map(|i| {
            let mut map = DMatrix::zeros(2, 1);
            map[(i, 0)] = 1.0;
            LocalProblem {
                set: ConvexSet::cube(1, -1.0, 1.0).expect("valid box"),
                map: AffineMap::linear(map),
                constraint: ConstraintMap::affine(DMatrix::identity(1, 1), DVector::from_element(1, -0.5)).expect("valid map"),
            }
        })
        .collect();
    let cost = QuadraticCost::new(DMatrix::identity(2, 2), DVector::from_element(2, -2.0), 2.0).expect("valid cost");
    let slater = vec![DVector::from_element(1, -1.0); 2];
    let mut inst = ProblemInstance::with_slater_point(agents, cost, slater, &DVector::zeros(1)).expect("valid toy");
    inst.set_metadata("generator", "pair_toy");
    inst
}

#[cfg(test)]
mod tests {
    use super::*;

    fn v(xs: &[f64]) -> DVector<f64> {
        DVector::from_column_slice(xs)
    }

    #[test]
    fn scalar_toy_gradient_example() {
        let inst = scalar_toy();
        let g = inst.lagrangian_x_grad(0, &v(&[1.0]), &v(&[1.0]), &v(&[0.0])).unwrap();
        assert_eq!(g, v(&[2.0]));
    }

    #[test]
    fn zero_cost_gradient_and_zero_dual_vanish() {
        let mut inst = scalar_toy();
        inst.cost = QuadraticCost::new(DMatrix::zeros(1, 1), DVector::zeros(1), 3.0).unwrap();
        let g = inst.lagrangian_x_grad(0, &v(&[0.3]), &v(&[0.7]), &v(&[0.0])).unwrap();
        assert_eq!(g, v(&[0.0]));
    }

    #[test]
    fn constraint_sum_cancels() {
        let mk = |s: f64| LocalProblem {
            set: ConvexSet::cube(1, -1.0, 1.0).unwrap(),
            map: AffineMap::linear(DMatrix::identity(1, 1)),
            constraint: ConstraintMap::affine(DMatrix::from_element(1, 1, s), DVector::zeros(1)).unwrap(),
        };
        let cost = QuadraticCost::new(DMatrix::identity(1, 1), DVector::zeros(1), 0.0).unwrap();
        let inst = ProblemInstance::with_dual_radius(vec![mk(1.0), mk(-1.0)], cost, 1.0).unwrap();
        assert_eq!(inst.lagrangian_lambda_grad(&[v(&[0.4]), v(&[0.4])]), v(&[0.0]));
    }

    #[test]
    fn empty_constraint_gives_empty_vector() {
        let agent = LocalProblem {
            set: ConvexSet::cube(1, -1.0, 1.0).unwrap(),
            map: AffineMap::linear(DMatrix::identity(1, 1)),
            constraint: ConstraintMap::affine(DMatrix::zeros(0, 1), DVector::zeros(0)).unwrap(),
        };
        let cost = QuadraticCost::new(DMatrix::identity(1, 1), DVector::zeros(1), 0.0).unwrap();
        let inst = ProblemInstance::with_dual_radius(vec![agent], cost, 1.0).unwrap();
        assert_eq!(inst.lagrangian_lambda_grad(&[v(&[0.2])]).len(), 0);
    }

    #[test]
    fn dual_radius_formula_example() {
        assert_eq!(dual_radius_formula(4.0, 0.0, 2.0), 3.0);
    }

    #[test]
    fn slater_violation_detected() {
        let inst = scalar_toy();
        let err = compute_dual_bound(&inst, &[v(&[1.0])], &v(&[0.0])).unwrap_err();
        assert!(matches!(err, ProblemError::SlaterViolation { component: 0, .. }));
    }

    #[test]
    fn scalar_toy_constants() {
        let c = *scalar_toy().constants();
        assert_eq!((c.l_f, c.c_f), (1.0, 1.0));
        assert_eq!((c.l_g, c.c_g, c.g_g), (1.0, 2.0, 0.0));
    }

    #[test]
    fn cost_bounds_for_square() {
        // F(y) = y² with two unit agents: aggregate radius R = 2.
        let agent = scalar_toy().agents()[0].clone();
        let cost = QuadraticCost::new(DMatrix::identity(1, 1), DVector::zeros(1), 0.0).unwrap();
        let c = estimate_constants(&[agent.clone(), agent], &cost).unwrap();
        assert_eq!((c.g_cost, c.l_cost), (2.0, 4.0));
    }

    #[test]
    fn pair_toy_caps() {
        let inst = pair_toy();
        assert!((inst.dual_radius() - (8.0 / 3.0 + 1.0)).abs() < 1e-9);
        assert!((inst.rho1_max() - 0.25).abs() < 1e-15);
        assert!((inst.rho2_max() - 1.0 / 3.0).abs() < 1e-15);
    }

    #[test]
    fn nonconvex_constraint_rejected() {
        let agent = LocalProblem {
            set: ConvexSet::cube(1, -1.0, 1.0).unwrap(),
            map: AffineMap::linear(DMatrix::identity(1, 1)),
            constraint: ConstraintMap::Quadratic {
                components: vec![QuadraticComponent { quad: DMatrix::from_element(1, 1, -1.0), lin: v(&[0.0]), constant: 0.0 }],
            },
        };
        let cost = QuadraticCost::new(DMatrix::identity(1, 1), DVector::zeros(1), 0.0).unwrap();
        assert!(matches!(
            ProblemInstance::with_dual_radius(vec![agent], cost, 1.0),
            Err(ProblemError::Unsupported(_))
        ));
    }

    #[test]
    fn demand_response_is_deterministic() {
        let a = make_demand_response(3, 2, 1.0, 1.0, 5).unwrap();
        let b = make_demand_response(3, 2, 1.0, 1.0, 5).unwrap();
        assert_eq!(a, b);
        assert_eq!(a.map_dim(), 4);
        assert_eq!(a.constraint_dim(), 2);
    }
}
