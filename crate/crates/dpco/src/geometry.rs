//! Closed convex sets with exact Euclidean projections.

use nalgebra::DVector;
use rand::Rng;
use serde::{Deserialize, Serialize};
use thiserror::Error;

/// Default membership tolerance.
pub const MEMBERSHIP_TOL: f64 = 1e-9;

// Points whose norm exceeds the radius by a few ulps count as inside, so that
// projecting an already-projected point returns it bit for bit.
const RADIAL_SLACK: f64 = 4.0 * f64::EPSILON;

#[derive(Debug, Clone, PartialEq, Error)]
pub enum GeometryError {
    #[error("dimension mismatch: set has dimension {expected}, point has {found}")]
    DimensionMismatch { expected: usize, found: usize },
    #[error("invalid set: {0}")]
    InvalidSet(String),
    #[error("set is unbounded")]
    Unbounded,
}

/// A nonempty closed convex subset of R^n.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case", deny_unknown_fields)]
pub enum ConvexSet {
    Box { lower: Vec<f64>, upper: Vec<f64> },
    Ball { center: Vec<f64>, radius: f64 },
    NonnegOrthant { dim: usize },
    /// `{λ ≥ 0, ‖λ‖ ≤ radius}`.
    DualBall { radius: f64, dim: usize },
    FullSpace { dim: usize },
}

impl ConvexSet {
    pub fn boxed(lower: Vec<f64>, upper: Vec<f64>) -> Result<Self, GeometryError> {
        let set = ConvexSet::Box { lower, upper };
        set.validate()?;
        Ok(set)
    }

    /// The box `[lo, hi]^dim`.
    pub fn cube(dim: usize, lo: f64, hi: f64) -> Result<Self, GeometryError> {
        Self::boxed(vec![lo; dim], vec![hi; dim])
    }

    pub fn ball(center: Vec<f64>, radius: f64) -> Result<Self, GeometryError> {
        let set = ConvexSet::Ball { center, radius };
        set.validate()?;
        Ok(set)
    }

    pub fn dual_ball(radius: f64, dim: usize) -> Result<Self, GeometryError> {
        let set = ConvexSet::DualBall { radius, dim };
        set.validate()?;
        Ok(set)
    }

    /// Checks the structural invariants; deserialized sets should pass through here.
    pub fn validate(&self) -> Result<(), GeometryError> {
        match self {
            ConvexSet::Box { lower, upper } => {
                if lower.len() != upper.len() {
                    return Err(GeometryError::InvalidSet(format!(
                        "box bounds have lengths {} and {}",
                        lower.len(),
                        upper.len()
                    )));
                }
                for (i, (l, u)) in lower.iter().zip(upper).enumerate() {
                    if !(l.is_finite() && u.is_finite()) || l > u {
                        return Err(GeometryError::InvalidSet(format!(
                            "box coordinate {i}: lower {l} upper {u}"
                        )));
                    }
                }
                Ok(())
            }
            ConvexSet::Ball { center, radius } => {
                if !(radius.is_finite() && *radius >= 0.0) || center.iter().any(|c| !c.is_finite()) {
                    return Err(GeometryError::InvalidSet(format!("ball radius {radius}")));
                }
                Ok(())
            }
            ConvexSet::DualBall { radius, .. } => {
                if !(radius.is_finite() && *radius >= 0.0) {
                    return Err(GeometryError::InvalidSet(format!("dual ball radius {radius}")));
                }
                Ok(())
            }
            ConvexSet::NonnegOrthant { .. } | ConvexSet::FullSpace { .. } => Ok(()),
        }
    }

    pub fn dim(&self) -> usize {
        match self {
            ConvexSet::Box { lower, .. } => lower.len(),
            ConvexSet::Ball { center, .. } => center.len(),
            ConvexSet::NonnegOrthant { dim } | ConvexSet::DualBall { dim, .. } | ConvexSet::FullSpace { dim } => *dim,
        }
    }

    pub fn is_compact(&self) -> bool {
        matches!(self, ConvexSet::Box { .. } | ConvexSet::Ball { .. } | ConvexSet::DualBall { .. })
    }

    fn check_dim(&self, point: &DVector<f64>) -> Result<(), GeometryError> {
        if point.len() != self.dim() {
            return Err(GeometryError::DimensionMismatch { expected: self.dim(), found: point.len() });
        }
        Ok(())
    }

    /// Euclidean projection onto the set.
    pub fn project(&self, point: &DVector<f64>) -> Result<DVector<f64>, GeometryError> {
        self.check_dim(point)?;
        Ok(self.project_unchecked(point))
    }

    /// Projection without the dimension check; callers guarantee matching sizes.
    pub(crate) fn project_unchecked(&self, point: &DVector<f64>) -> DVector<f64> {
        match self {
            ConvexSet::Box { lower, upper } => {
                DVector::from_iterator(point.len(), point.iter().zip(lower.iter().zip(upper)).map(|(p, (l, u))| p.clamp(*l, *u)))
            }
            ConvexSet::Ball { center, radius } => {
                let c = DVector::from_column_slice(center);
                let offset = point - &c;
                let n = offset.norm();
                if n <= radius * (1.0 + RADIAL_SLACK) {
                    point.clone()
                } else {
                    c + offset * (radius / n)
                }
            }
            ConvexSet::NonnegOrthant { .. } => point.map(|v| v.max(0.0)),
            ConvexSet::DualBall { radius, .. } => {
                let clipped = point.map(|v| v.max(0.0));
                let n = clipped.norm();
                if n <= radius * (1.0 + RADIAL_SLACK) {
                    clipped
                } else {
                    clipped * (radius / n)
                }
            }
            ConvexSet::FullSpace { .. } => point.clone(),
        }
    }

    /// True iff the point lies within Euclidean distance `tol` of the set.
    pub fn contains(&self, point: &DVector<f64>, tol: f64) -> Result<bool, GeometryError> {
        self.check_dim(point)?;
        if tol < 0.0 || tol.is_nan() {
            return Err(GeometryError::InvalidSet(format!("negative tolerance {tol}")));
        }
        Ok((point - self.project_unchecked(point)).norm() <= tol)
    }

    /// Upper bound on `sup ‖x‖` over the set.
    pub fn diameter_bound(&self) -> Result<f64, GeometryError> {
        match self {
            ConvexSet::Box { lower, upper } => {
                Ok(lower.iter().zip(upper).map(|(l, u)| (l * l).max(u * u)).sum::<f64>().sqrt())
            }
            ConvexSet::Ball { center, radius } => Ok(DVector::from_column_slice(center).norm() + radius),
            ConvexSet::DualBall { radius, .. } => Ok(*radius),
            ConvexSet::NonnegOrthant { .. } | ConvexSet::FullSpace { .. } => Err(GeometryError::Unbounded),
        }
    }

    /// Axis-aligned bounding box of a compact set.
    pub fn bounding_box(&self) -> Result<(DVector<f64>, DVector<f64>), GeometryError> {
        match self {
            ConvexSet::Box { lower, upper } => {
                Ok((DVector::from_column_slice(lower), DVector::from_column_slice(upper)))
            }
            ConvexSet::Ball { center, radius } => {
                let c = DVector::from_column_slice(center);
                Ok((c.add_scalar(-radius), c.add_scalar(*radius)))
            }
            ConvexSet::DualBall { radius, dim } => {
                Ok((DVector::zeros(*dim), DVector::from_element(*dim, *radius)))
            }
            _ => Err(GeometryError::Unbounded),
        }
    }

    /// Minimizer of the linear function `⟨c, x⟩` over a compact set.
    pub fn linear_minimizer(&self, c: &DVector<f64>) -> Result<DVector<f64>, GeometryError> {
        self.check_dim(c)?;
        match self {
            ConvexSet::Box { lower, upper } => Ok(DVector::from_iterator(
                c.len(),
                c.iter().zip(lower.iter().zip(upper)).map(|(ci, (l, u))| if *ci > 0.0 { *l } else { *u }),
            )),
            ConvexSet::Ball { center, radius } => {
                let n = c.norm();
                let ctr = DVector::from_column_slice(center);
                if n == 0.0 {
                    Ok(ctr)
                } else {
                    Ok(ctr - c * (radius / n))
                }
            }
            ConvexSet::DualBall { radius, .. } => {
                let neg = c.map(|v| (-v).max(0.0));
                let n = neg.norm();
                if n == 0.0 {
                    Ok(DVector::zeros(c.len()))
                } else {
                    Ok(neg * (radius / n))
                }
            }
            _ => Err(GeometryError::Unbounded),
        }
    }

    /// Uniform sample from a compact set.
    ///
    /// Balls use a Gaussian direction with radius `r·U^{1/n}`; the dual ball folds
    /// such a sample into the orthant by taking absolute values, which keeps it
    /// uniform by symmetry.
    pub fn sample_uniform<R: Rng + ?Sized>(&self, rng: &mut R) -> Result<DVector<f64>, GeometryError> {
        match self {
            ConvexSet::Box { lower, upper } => Ok(DVector::from_iterator(
                lower.len(),
                lower.iter().zip(upper).map(|(l, h)| l + (h - l) * rng.gen::<f64>()),
            )),
            ConvexSet::Ball { center, radius } => {
                Ok(DVector::from_column_slice(center) + uniform_in_ball(rng, center.len(), *radius))
            }
            ConvexSet::DualBall { radius, dim } => Ok(uniform_in_ball(rng, *dim, *radius).abs()),
            _ => Err(GeometryError::Unbounded),
        }
    }
}

fn uniform_in_ball<R: Rng + ?Sized>(rng: &mut R, dim: usize, radius: f64) -> DVector<f64> {
    if dim == 0 {
        return DVector::zeros(0);
    }
    loop {
        let dir = DVector::from_fn(dim, |_, _| standard_normal(rng));
        let n = dir.norm();
        if n > 0.0 {
            let r = radius * rng.gen::<f64>().powf(1.0 / dim as f64);
            return dir * (r / n);
        }
    }
}

/// Box–Muller draw.
fn standard_normal<R: Rng + ?Sized>(rng: &mut R) -> f64 {
    let u1: f64 = rng.sample(rand::distributions::Open01);
    let u2: f64 = rng.gen();
    (-2.0 * u1.ln()).sqrt() * (std::f64::consts::TAU * u2).cos()
}
