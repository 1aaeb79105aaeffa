//! Differentially private constrained consensus and distributed primal-dual
//! optimization over networks, with privacy accounting and centralized
//! reference diagnostics.

pub mod accountant;
pub mod consensus;
pub mod geometry;
pub mod linalg;
pub mod metrics;
pub mod optimizer;
pub mod oracle;
pub mod problem;
pub mod schedules;
pub mod topology;

#[cfg(feature = "harness")]
pub mod harness;
