//! Independent reference computations shared by the integration and acceptance targets.
#![allow(dead_code)]

use std::path::PathBuf;

use dpco::geometry::ConvexSet;
use dpco::problem::{make_demand_response, pair_toy, scalar_toy, BallPenalty, ProblemInstance};
use dpco::accountant::penalized_neighbor;
use dpco::topology::{Edge, WeightMatrix};
use nalgebra::{DMatrix, DVector};
use rand::Rng;

pub fn configs_dir() -> PathBuf {
    PathBuf::from(env!("CARGO_MANIFEST_DIR")).join("../../configs")
}

pub fn pair_weights() -> WeightMatrix {
    WeightMatrix::from_edges(&[Edge { i: 0, j: 1, weight: 0.5 }], 2).unwrap()
}

/// Shipped instances plus a penalized variant exercising the nonsmooth-curvature branch.
pub fn instances() -> Vec<(&'static str, ProblemInstance)> {
    let dr = make_demand_response(5, 4, 1.0, 1.0, 1).unwrap();
    let bump = BallPenalty { center: DVector::from_element(1, 0.5), radius: 0.2, weight: 1.0 };
    let penalized = penalized_neighbor(&pair_toy(), 0, bump).unwrap();
    vec![("scalar_toy", scalar_toy()), ("pair_toy", pair_toy()), ("demand_response", dr), ("penalized_pair", penalized)]
}

/// Golden-section minimizer of a unimodal function on `[a, b]`.
pub fn golden_min(f: impl Fn(f64) -> f64, mut a: f64, mut b: f64) -> f64 {
    let r = (5f64.sqrt() - 1.0) / 2.0;
    let mut c = b - r * (b - a);
    let mut d = a + r * (b - a);
    let (mut fc, mut fd) = (f(c), f(d));
    for _ in 0..200 {
        if (b - a).abs() < 1e-13 * (1.0 + a.abs().max(b.abs())) {
            break;
        }
        if fc < fd {
            b = d;
            d = c;
            fd = fc;
            c = b - r * (b - a);
            fc = f(c);
        } else {
            a = c;
            c = d;
            fc = fd;
            d = a + r * (b - a);
            fd = f(d);
        }
    }
    (a + b) / 2.0
}

/// Smallest `μ ≥ 0` with `ok(μ)`, assuming monotonicity, by bisection.
fn smallest_multiplier(ok: impl Fn(f64) -> bool) -> f64 {
    if ok(0.0) {
        return 0.0;
    }
    let mut hi = 1.0;
    while !ok(hi) {
        hi *= 2.0;
    }
    let mut lo = 0.0;
    for _ in 0..200 {
        let mid = 0.5 * (lo + hi);
        if ok(mid) {
            hi = mid;
        } else {
            lo = mid;
        }
    }
    hi
}

/// Euclidean projection by direct minimization: coordinatewise line search for
/// separable sets, Lagrange-multiplier bisection for the norm constraints.
pub fn brute_force_projection(set: &ConvexSet, p: &DVector<f64>) -> DVector<f64> {
    let coord = |lo: f64, hi: f64, target: f64, mu: f64| golden_min(|y| (y - target).powi(2) + mu * y * y, lo, hi);
    match set {
        ConvexSet::FullSpace { .. } => p.clone(),
        ConvexSet::Box { lower, upper } => DVector::from_fn(p.len(), |i, _| coord(lower[i], upper[i], p[i], 0.0)),
        ConvexSet::NonnegOrthant { .. } => DVector::from_fn(p.len(), |i, _| coord(0.0, p[i].abs() + 1.0, p[i], 0.0)),
        ConvexSet::Ball { center, radius } => {
            let c = DVector::from_column_slice(center);
            // Stationary point of ‖y − p‖² + μ‖y − c‖².
            let at = |mu: f64| (p + &c * mu) / (1.0 + mu);
            let mu = smallest_multiplier(|mu| (at(mu) - &c).norm() <= radius * (1.0 + 1e-14));
            at(mu)
        }
        ConvexSet::DualBall { radius, .. } => {
            let at = |mu: f64| DVector::from_fn(p.len(), |i, _| coord(0.0, p[i].abs() + 1.0, p[i], mu));
            let mu = smallest_multiplier(|mu| at(mu).norm() <= radius * (1.0 + 1e-9));
            at(mu)
        }
    }
}

/// Random compact or unbounded set of each variant.
pub fn random_set<R: Rng>(rng: &mut R, variant: usize) -> ConvexSet {
    let dim = rng.gen_range(1..=5);
    match variant {
        0 => {
            let lower: Vec<f64> = (0..dim).map(|_| rng.gen_range(-3.0..1.0)).collect();
            let upper = lower.iter().map(|l| l + rng.gen_range(0.0..3.0)).collect();
            ConvexSet::boxed(lower, upper).unwrap()
        }
        1 => ConvexSet::ball((0..dim).map(|_| rng.gen_range(-2.0..2.0)).collect(), rng.gen_range(0.1..3.0)).unwrap(),
        2 => ConvexSet::NonnegOrthant { dim },
        3 => ConvexSet::dual_ball(rng.gen_range(0.1..3.0), dim).unwrap(),
        _ => ConvexSet::FullSpace { dim },
    }
}

pub const VARIANTS: usize = 5;

pub fn random_point<R: Rng>(rng: &mut R, dim: usize, spread: f64) -> DVector<f64> {
    DVector::from_fn(dim, |_, _| rng.gen_range(-spread..spread))
}

/// Central-difference Jacobian of `f` at `x`.
pub fn fd_jacobian(f: impl Fn(&DVector<f64>) -> DVector<f64>, x: &DVector<f64>, h: f64) -> DMatrix<f64> {
    let out = f(x).len();
    let mut jac = DMatrix::zeros(out, x.len());
    for j in 0..x.len() {
        let mut plus = x.clone();
        let mut minus = x.clone();
        plus[j] += h;
        minus[j] -= h;
        jac.set_column(j, &((f(&plus) - f(&minus)) / (2.0 * h)));
    }
    jac
}

/// Largest entrywise error relative to `max(1, |analytic|)`.
pub fn relative_error(analytic: &DMatrix<f64>, numeric: &DMatrix<f64>) -> f64 {
    analytic.iter().zip(numeric.iter()).map(|(a, n)| (a - n).abs() / a.abs().max(1.0)).fold(0.0, f64::max)
}

pub fn column(v: DVector<f64>) -> DMatrix<f64> {
    let n = v.len();
    DMatrix::from_column_slice(n, 1, v.as_slice())
}

/// Median with the middle pair averaged.
pub fn median(mut v: Vec<f64>) -> f64 {
    v.sort_by(|a, b| a.partial_cmp(b).unwrap());
    let n = v.len();
    if n % 2 == 1 {
        v[n / 2]
    } else {
        0.5 * (v[n / 2 - 1] + v[n / 2])
    }
}
