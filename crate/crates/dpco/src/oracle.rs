//! Centralized ground truth and diagnostics.

use nalgebra::{DMatrix, DVector};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::geometry::ConvexSet;
use crate::linalg::{self, stack, unstack};
use crate::problem::{ProblemError, ProblemInstance};
use crate::schedules::Schedule;

/// Iteration budget for inner Lagrangian minimizations.
pub const INNER_ITERATIONS: usize = 20_000;
/// Number of sampled points per agent in the sampled variational check.
pub const VI_SAMPLES: usize = 200;
/// Largest stacked dimension accepted by [`grid_minimize`].
pub const GRID_MAX_DIM: usize = 6;

/// Approximate minimizer of `x ↦ L(x, λ)` over `X`.
#[derive(Debug, Clone, PartialEq)]
pub struct InnerSolution {
    pub x: Vec<DVector<f64>>,
    pub value: f64,
    /// Linearization lower bound `L(x) + min_{x'∈X} ⟨∇L(x), x' − x⟩`.
    pub lower_bound: f64,
}

/// Accelerated projected gradient with restarts on `L(·, λ)`.
pub fn minimize_lagrangian(inst: &ProblemInstance, lambda: &DVector<f64>, iterations: usize) -> Result<InnerSolution, ProblemError> {
    let c = inst.constants();
    let lip = c.g_j + lambda.norm() * c.g_g;
    let mut x: Vec<DVector<f64>> = inst
        .agents()
        .iter()
        .map(|a| a.set.bounding_box().map(|(lo, hi)| a.set.project_unchecked(&((lo + hi) * 0.5))))
        .collect::<Result<_, _>>()?;
    if lip > 0.0 {
        let step = 1.0 / lip;
        let mut anchor = x.clone();
        let mut t = 1.0_f64;
        let mut prev_value = inst.lagrangian(&x, lambda);
        for _ in 0..iterations {
            let grad = stacked_x_grad(inst, &anchor, lambda);
            let next: Vec<DVector<f64>> = inst
                .agents()
                .iter()
                .enumerate()
                .map(|(i, a)| a.set.project_unchecked(&(&anchor[i] - &grad[i] * step)))
                .collect();
            let value = inst.lagrangian(&next, lambda);
            if value > prev_value {
                // Restart momentum from the last accepted point.
                t = 1.0;
                anchor = x.clone();
                continue;
            }
            let t_next = (1.0 + (1.0 + 4.0 * t * t).sqrt()) / 2.0;
            let beta = (t - 1.0) / t_next;
            anchor = next.iter().zip(&x).map(|(n, o)| n + (n - o) * beta).collect();
            anchor = inst.agents().iter().zip(anchor).map(|(a, p)| a.set.project_unchecked(&p)).collect();
            x = next;
            t = t_next;
            prev_value = value;
        }
    }
    let grad = stacked_x_grad(inst, &x, lambda);
    let value = inst.lagrangian(&x, lambda);
    let mut lower_bound = value;
    for (i, a) in inst.agents().iter().enumerate() {
        let vertex = a.set.linear_minimizer(&grad[i])?;
        lower_bound += grad[i].dot(&(vertex - &x[i]));
    }
    Ok(InnerSolution { x, value, lower_bound })
}

/// Per-agent `∇_{x_i} L(x, λ)` evaluated at the true aggregate.
pub fn stacked_x_grad(inst: &ProblemInstance, x: &[DVector<f64>], lambda: &DVector<f64>) -> Vec<DVector<f64>> {
    let cost_grad = inst.cost().gradient(&inst.aggregate(x));
    x.iter().enumerate().map(|(i, xi)| inst.x_grad_unchecked(i, xi, &cost_grad, lambda)).collect()
}

/// Saddle point estimate with its optimality residuals.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SaddlePoint {
    #[serde(with = "linalg::vectors")]
    pub x: Vec<DVector<f64>>,
    #[serde(with = "linalg::vector")]
    pub lambda: DVector<f64>,
    pub vi_residual: f64,
    pub constraint_max: f64,
    pub complementarity: f64,
    pub iterations: usize,
    pub converged: bool,
}

impl SaddlePoint {
    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("saddle point serializes")
    }
}

/// Centralized primal-dual perturbation iteration with exact aggregates.
///
/// Stops when `‖x⁺ − x‖ + ‖λ⁺ − λ‖ < tol·γ_k`; otherwise returns the iterate
/// with the smallest such residual and `converged = false`.
pub fn solve_centralized(
    inst: &ProblemInstance,
    rho1: f64,
    rho2: f64,
    gamma: &Schedule,
    max_iterations: usize,
    tol: f64,
) -> Result<SaddlePoint, ProblemError> {
    let dual = inst.dual_set();
    let mut x: Vec<DVector<f64>> = inst
        .agents()
        .iter()
        .map(|a| a.set.bounding_box().map(|(lo, hi)| a.set.project_unchecked(&((lo + hi) * 0.5))))
        .collect::<Result<_, _>>()?;
    let mut lambda = DVector::zeros(inst.constraint_dim());
    let mut best = (f64::INFINITY, x.clone(), lambda.clone());
    let mut converged = false;
    let mut iterations = max_iterations;
    for k in 1..=max_iterations {
        let step = gamma.value(k);
        let grad = stacked_x_grad(inst, &x, &lambda);
        let alpha: Vec<DVector<f64>> = inst
            .agents()
            .iter()
            .enumerate()
            .map(|(i, a)| a.set.project_unchecked(&(&x[i] - &grad[i] * rho1)))
            .collect();
        let beta = dual.project_unchecked(&(&lambda + inst.lagrangian_lambda_grad(&x) * rho2));
        let grad_beta = stacked_x_grad(inst, &x, &beta);
        let x_next: Vec<DVector<f64>> = inst
            .agents()
            .iter()
            .enumerate()
            .map(|(i, a)| a.set.project_unchecked(&(&x[i] - &grad_beta[i] * step)))
            .collect();
        let lambda_next = dual.project_unchecked(&(&lambda + inst.lagrangian_lambda_grad(&alpha) * step));
        let moved: f64 = x_next.iter().zip(&x).map(|(a, b)| (a - b).norm_squared()).sum::<f64>().sqrt()
            + (&lambda_next - &lambda).norm();
        x = x_next;
        lambda = lambda_next;
        let scaled = moved / step;
        if scaled < best.0 {
            best = (scaled, x.clone(), lambda.clone());
        }
        if moved < tol * step {
            converged = true;
            iterations = k;
            break;
        }
    }
    let (x, lambda) = if converged { (x, lambda) } else { (best.1, best.2) };
    let report = check_optimality(inst, &x, &lambda, tol, rho1);
    Ok(SaddlePoint {
        vi_residual: report.fixed_point_residual,
        constraint_max: report.constraint_max,
        complementarity: report.complementarity,
        x,
        lambda,
        iterations,
        converged,
    })
}

/// Outcome of the three optimality conditions.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct OptimalityReport {
    /// `min` over sampled `x_i ∈ X_i` of `(x_i − x_i*)ᵀ L_{x_i}(x*, λ*)`.
    pub vi_sampled_min: f64,
    /// `‖x* − Π_X[x* − ρ1 L_x(x*, λ*)]‖`, the authoritative variational check.
    pub fixed_point_residual: f64,
    pub constraint_max: f64,
    pub complementarity: f64,
    pub vi_sampled_pass: bool,
    pub vi_pass: bool,
    pub feasibility_pass: bool,
    pub complementarity_pass: bool,
}

impl OptimalityReport {
    pub fn passed(&self) -> bool {
        self.vi_pass && self.feasibility_pass && self.complementarity_pass
    }
}

/// Checks the variational inequality, feasibility and complementarity at `(x, λ)`.
pub fn check_optimality(inst: &ProblemInstance, x: &[DVector<f64>], lambda: &DVector<f64>, tol: f64, rho1: f64) -> OptimalityReport {
    let grad = stacked_x_grad(inst, x, lambda);
    let mut rng = ChaCha8Rng::seed_from_u64(0x5_eed0_f0b7);
    let mut vi_min = f64::INFINITY;
    let mut residual_sq = 0.0;
    for (i, a) in inst.agents().iter().enumerate() {
        if a.set.is_compact() {
            for _ in 0..VI_SAMPLES {
                let s = a.set.sample_uniform(&mut rng).expect("compact set samples");
                vi_min = vi_min.min((s - &x[i]).dot(&grad[i]));
            }
            // Vertices of the linearization are the most adversarial samples.
            let vertex = a.set.linear_minimizer(&grad[i]).expect("compact set");
            vi_min = vi_min.min((vertex - &x[i]).dot(&grad[i]));
        }
        let fixed = a.set.project_unchecked(&(&x[i] - &grad[i] * rho1));
        residual_sq += (&x[i] - fixed).norm_squared();
    }
    let gsum = inst.lagrangian_lambda_grad(x);
    let constraint_max = gsum.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let complementarity = lambda.dot(&gsum).abs();
    let fixed_point_residual = residual_sq.sqrt();
    OptimalityReport {
        vi_sampled_min: vi_min,
        fixed_point_residual,
        constraint_max,
        complementarity,
        vi_sampled_pass: vi_min >= -tol,
        vi_pass: fixed_point_residual <= tol,
        feasibility_pass: gsum.is_empty() || constraint_max <= tol,
        complementarity_pass: complementarity <= tol,
    }
}

/// Both sides of the saddle-gap inequality at a global snapshot.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SaddleGap {
    pub lhs: f64,
    pub rhs: f64,
    pub margin: f64,
}

/// Evaluates `L(x, β̂) − L(α̂, λ̄)` against
/// `(1/ρ1 − G_J − D_λ G_g)‖x − α̂‖² + (1/ρ2)‖λ̄ − β̂‖²`, where `α̂`, `β̂` are the
/// centralized perturbation points of the snapshot.
pub fn lemma12_gap(inst: &ProblemInstance, x: &[DVector<f64>], lambda_bar: &DVector<f64>, rho1: f64, rho2: f64) -> SaddleGap {
    let grad = stacked_x_grad(inst, x, lambda_bar);
    let alpha: Vec<DVector<f64>> =
        inst.agents().iter().enumerate().map(|(i, a)| a.set.project_unchecked(&(&x[i] - &grad[i] * rho1))).collect();
    let gsum = inst.lagrangian_lambda_grad(x);
    let beta = inst.dual_set().project_unchecked(&(lambda_bar + &gsum * rho2));
    // L(x, β̂) − L(x, λ̄) is linear in the dual, so evaluate it directly.
    let primal_part = inst.objective(x) + lambda_bar.dot(&gsum) - inst.lagrangian(&alpha, lambda_bar);
    let lhs = (&beta - lambda_bar).dot(&gsum) + primal_part;
    let c = inst.constants();
    let dx: f64 = x.iter().zip(&alpha).map(|(a, b)| (a - b).norm_squared()).sum();
    let rhs = (1.0 / rho1 - c.g_j - inst.dual_radius() * c.g_g) * dx + (lambda_bar - &beta).norm_squared() / rho2;
    SaddleGap { lhs, rhs, margin: lhs - rhs }
}

/// Optimal solutions described by their aggregate: `{x ∈ X : Σ f_i(x_i) = y*}`.
///
/// When the stacked local maps are injective this is the single point `x*`.
#[derive(Debug, Clone)]
pub struct OptimalSet {
    x_star: Vec<DVector<f64>>,
    sets: Vec<ConvexSet>,
    dims: Vec<usize>,
    injective: bool,
    target: DVector<f64>,
    matrix: DMatrix<f64>,
    pinv: DMatrix<f64>,
}

impl OptimalSet {
    pub fn new(inst: &ProblemInstance, x_star: Vec<DVector<f64>>) -> Self {
        let dims = inst.dims();
        let n: usize = dims.iter().sum();
        let mut matrix = DMatrix::zeros(inst.map_dim(), n);
        let mut offset = DVector::zeros(inst.map_dim());
        let mut col = 0;
        for a in inst.agents() {
            matrix.view_mut((0, col), (a.map.out_dim(), a.dim())).copy_from(&a.map.matrix);
            offset += &a.map.offset;
            col += a.dim();
        }
        let svd = matrix.clone().svd(false, false);
        let scale = svd.singular_values.max().max(1.0);
        let rank = svd.singular_values.iter().filter(|s| **s > 1e-10 * scale).count();
        let pinv = matrix.clone().pseudo_inverse(1e-10 * scale).expect("pseudo-inverse exists");
        let target = inst.aggregate(&x_star) - offset;
        OptimalSet {
            sets: inst.agents().iter().map(|a| a.set.clone()).collect(),
            injective: rank == n,
            x_star,
            dims,
            target,
            matrix,
            pinv,
        }
    }

    pub fn x_star(&self) -> &[DVector<f64>] {
        &self.x_star
    }

    pub fn is_singleton(&self) -> bool {
        self.injective
    }

    fn project_box(&self, v: &DVector<f64>) -> DVector<f64> {
        let parts = unstack(v, &self.dims);
        stack(&parts.iter().zip(&self.sets).map(|(p, s)| s.project_unchecked(p)).collect::<Vec<_>>())
    }

    fn project_affine(&self, v: &DVector<f64>) -> DVector<f64> {
        v - &self.pinv * (&self.matrix * v - &self.target)
    }

    /// Euclidean distance from `x` to the optimal set (Dykstra projection when not a singleton).
    pub fn distance(&self, x: &[DVector<f64>]) -> f64 {
        let point = stack(x);
        if self.injective {
            return (point - stack(&self.x_star)).norm();
        }
        let mut cur = point.clone();
        let mut p = DVector::zeros(point.len());
        let mut q = DVector::zeros(point.len());
        for _ in 0..20_000 {
            let y = self.project_box(&(&cur + &p));
            p = &cur + &p - &y;
            let next = self.project_affine(&(&y + &q));
            q = &y + &q - &next;
            let done = (&next - &cur).norm() < 1e-13 && (&next - &y).norm() < 1e-12;
            cur = next;
            if done {
                break;
            }
        }
        (point - cur).norm()
    }
}

/// Result of the exhaustive grid search.
#[derive(Debug, Clone, PartialEq)]
pub struct GridSolution {
    pub x: Vec<DVector<f64>>,
    pub objective: f64,
    pub cell: f64,
}

/// Coarse-to-fine grid search for `min F(Σ f_i)` over feasible points of a box product.
///
/// Each level scans `points` values per coordinate and zooms to two cells around
/// the best feasible point until the cell is below `resolution`; then `refinements`
/// further zoom passes follow.
pub fn grid_minimize(inst: &ProblemInstance, resolution: f64, refinements: usize, points: usize) -> Result<GridSolution, ProblemError> {
    let dims = inst.dims();
    let n: usize = dims.iter().sum();
    if n > GRID_MAX_DIM {
        return Err(ProblemError::Unsupported(format!("grid oracle limited to {GRID_MAX_DIM} coordinates, instance has {n}")));
    }
    let mut lo = Vec::with_capacity(n);
    let mut hi = Vec::with_capacity(n);
    let mut bound_lo = Vec::with_capacity(n);
    let mut bound_hi = Vec::with_capacity(n);
    for a in inst.agents() {
        match &a.set {
            ConvexSet::Box { lower, upper } => {
                lo.extend_from_slice(lower);
                hi.extend_from_slice(upper);
            }
            _ => return Err(ProblemError::Unsupported("grid oracle requires box sets".into())),
        }
    }
    bound_lo.extend_from_slice(&lo);
    bound_hi.extend_from_slice(&hi);
    let points = points.max(3);
    let mut best: Option<(f64, Vec<f64>)> = None;
    let mut extra = 0;
    loop {
        let cells: Vec<f64> = lo.iter().zip(&hi).map(|(l, h)| (h - l) / (points - 1) as f64).collect();
        let mut idx = vec![0usize; n];
        let mut level_best: Option<(f64, Vec<f64>)> = None;
        loop {
            let coords: Vec<f64> = (0..n).map(|d| lo[d] + cells[d] * idx[d] as f64).collect();
            let x = unstack(&DVector::from_vec(coords.clone()), &dims);
            let feasible = inst.lagrangian_lambda_grad(&x).iter().all(|g| *g <= 0.0);
            if feasible {
                let val = inst.objective(&x);
                if level_best.as_ref().is_none_or(|(b, _)| val < *b) {
                    level_best = Some((val, coords));
                }
            }
            let mut d = 0;
            while d < n {
                idx[d] += 1;
                if idx[d] < points {
                    break;
                }
                idx[d] = 0;
                d += 1;
            }
            if d == n {
                break;
            }
        }
        if let Some(lb) = level_best {
            if best.as_ref().is_none_or(|(b, _)| lb.0 <= *b) {
                best = Some(lb);
            }
        }
        let Some((_, center)) = best.clone() else {
            return Err(ProblemError::Unsupported("no feasible grid point".into()));
        };
        let cell = cells.iter().copied().fold(0.0, f64::max);
        if cell <= resolution {
            if extra == refinements {
                let (objective, coords) = best.expect("best exists");
                return Ok(GridSolution { x: unstack(&DVector::from_vec(coords), &dims), objective, cell });
            }
            extra += 1;
        }
        for d in 0..n {
            lo[d] = (center[d] - 2.0 * cells[d]).max(bound_lo[d]);
            hi[d] = (center[d] + 2.0 * cells[d]).min(bound_hi[d]);
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::problem::{pair_toy, scalar_toy};

    fn v(xs: &[f64]) -> DVector<f64> {
        DVector::from_column_slice(xs)
    }

    #[test]
    fn scalar_toy_saddle_is_origin() {
        let inst = scalar_toy();
        let sp = solve_centralized(&inst, inst.rho1_max(), inst.rho2_max(), &Schedule::Constant { value: 0.2 }, 100_000, 1e-10).unwrap();
        assert!(sp.converged);
        assert!(sp.x[0][0].abs() < 1e-8);
        assert!(sp.lambda[0].abs() < 1e-8);
        let report = check_optimality(&inst, &sp.x, &sp.lambda, 1e-6, inst.rho1_max());
        assert!(report.passed(), "{report:?}");
    }

    #[test]
    fn wrong_boundary_fails_variational_check() {
        let inst = scalar_toy();
        let report = check_optimality(&inst, &[v(&[1.0])], &v(&[0.0]), 1e-6, inst.rho1_max());
        assert!(!report.vi_pass);
        assert!(!report.vi_sampled_pass);
    }

    #[test]
    fn infeasible_point_fails_feasibility() {
        let inst = pair_toy();
        let report = check_optimality(&inst, &[v(&[1.0]), v(&[1.0])], &v(&[0.0]), 1e-6, inst.rho1_max());
        assert!(!report.feasibility_pass);
    }

    #[test]
    fn saddle_gap_vanishes_at_saddle() {
        let inst = pair_toy();
        let gap = lemma12_gap(&inst, &[v(&[0.5]), v(&[0.5])], &v(&[1.0]), inst.rho1_max(), inst.rho2_max());
        assert!(gap.lhs.abs() < 1e-10 && gap.rhs.abs() < 1e-10 && gap.margin.abs() < 1e-10);
    }

    #[test]
    fn inner_minimizer_bounds_bracket_the_minimum() {
        let inst = pair_toy();
        let sol = minimize_lagrangian(&inst, &v(&[0.0]), 2_000).unwrap();
        assert!(sol.lower_bound <= sol.value + 1e-15);
        assert!(sol.value.abs() < 1e-12);
    }

    #[test]
    fn grid_finds_pair_toy_optimum() {
        let inst = pair_toy();
        let sol = grid_minimize(&inst, 1e-2, 2, 21).unwrap();
        assert!((sol.x[0][0] - 0.5).abs() <= 2.0 * sol.cell);
        assert!((sol.x[1][0] - 0.5).abs() <= 2.0 * sol.cell);
    }
}
