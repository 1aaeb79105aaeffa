//! Interaction weight matrices over undirected connected graphs.
//!
//! Conventions: agents are indexed from 0, off-diagonal weights are
//! nonnegative, and each diagonal entry is minus the sum of its row's
//! off-diagonal weights, so every row and column sums to zero.

use nalgebra::{DMatrix, SymmetricEigen};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use std::collections::BTreeSet;

const VALIDATION_TOL: f64 = 1e-10;
const MAX_GRAPH_ATTEMPTS: usize = 10_000;

#[derive(Debug, Clone, PartialEq, Error)]
pub enum TopologyError {
    #[error("at least two agents are required, got {0}")]
    TooFewAgents(usize),
    #[error("self-loop on agent {0}")]
    SelfLoop(usize),
    #[error("edge ({0}, {1}) references an agent outside 0..{2}")]
    AgentOutOfRange(usize, usize, usize),
    #[error("edge ({0}, {1}) has non-positive or non-finite weight {2}")]
    BadWeight(usize, usize, f64),
    #[error("edge ({0}, {1}) listed twice")]
    DuplicateEdge(usize, usize),
    #[error("graph is disconnected")]
    Disconnected,
    #[error("contraction fails: spectral norm of I + W - 11'/m is {0}")]
    NotContractive(f64),
    #[error("matrix invariant violated: {0}")]
    Invariant(String),
    #[error("metropolis scale must lie in (0, 1], got {0}")]
    BadScale(f64),
    #[error("edge probability must lie in (0, 1], got {0}")]
    BadProbability(f64),
    #[error("no connected graph found after {0} draws")]
    GenerationFailed(usize),
    #[error("edge list line {line}: {reason}")]
    Parse { line: usize, reason: String },
}

/// Undirected weighted edge `(i, j, w)` between distinct agents.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Edge {
    pub i: usize,
    pub j: usize,
    pub weight: f64,
}

/// Validated symmetric weight matrix with zero row sums.
#[derive(Debug, Clone, PartialEq)]
pub struct WeightMatrix {
    matrix: DMatrix<f64>,
    neighbors: Vec<Vec<usize>>,
    edges: Vec<Edge>,
}

impl WeightMatrix {
    /// Builds W from an edge list, filling the diagonal and validating every invariant.
    pub fn from_edges(edges: &[Edge], m: usize) -> Result<Self, TopologyError> {
        if m < 2 {
            return Err(TopologyError::TooFewAgents(m));
        }
        let mut matrix = DMatrix::zeros(m, m);
        let mut seen = BTreeSet::new();
        for e in edges {
            if e.i == e.j {
                return Err(TopologyError::SelfLoop(e.i));
            }
            if e.i >= m || e.j >= m {
                return Err(TopologyError::AgentOutOfRange(e.i, e.j, m));
            }
            if !(e.weight.is_finite() && e.weight > 0.0) {
                return Err(TopologyError::BadWeight(e.i, e.j, e.weight));
            }
            if !seen.insert((e.i.min(e.j), e.i.max(e.j))) {
                return Err(TopologyError::DuplicateEdge(e.i, e.j));
            }
            matrix[(e.i, e.j)] = e.weight;
            matrix[(e.j, e.i)] = e.weight;
        }
        for i in 0..m {
            let off: f64 = (0..m).filter(|&j| j != i).map(|j| matrix[(i, j)]).sum();
            matrix[(i, i)] = -off;
        }
        let neighbors = (0..m)
            .map(|i| (0..m).filter(|&j| j != i && matrix[(i, j)] > 0.0).collect())
            .collect();
        let w = WeightMatrix { matrix, neighbors, edges: edges.to_vec() };
        w.validate()?;
        Ok(w)
    }

    /// Re-checks every invariant from the dense matrix alone.
    pub fn validate(&self) -> Result<(), TopologyError> {
        let m = self.size();
        if m < 2 {
            return Err(TopologyError::TooFewAgents(m));
        }
        let w = &self.matrix;
        for i in 0..m {
            let mut row = 0.0;
            for j in 0..m {
                row += w[(i, j)];
                if (w[(i, j)] - w[(j, i)]).abs() > VALIDATION_TOL {
                    return Err(TopologyError::Invariant(format!("asymmetric at ({i}, {j})")));
                }
                if i != j && w[(i, j)] < 0.0 {
                    return Err(TopologyError::Invariant(format!("negative weight at ({i}, {j})")));
                }
                if i != j && (w[(i, j)] > 0.0) != self.neighbors[i].contains(&j) {
                    return Err(TopologyError::Invariant(format!("neighbor list disagrees at ({i}, {j})")));
                }
            }
            if row.abs() > VALIDATION_TOL {
                return Err(TopologyError::Invariant(format!("row {i} sums to {row}")));
            }
        }
        if !is_connected(&self.neighbors) {
            return Err(TopologyError::Disconnected);
        }
        let norm = self.contraction_norm();
        if norm >= 1.0 {
            return Err(TopologyError::NotContractive(norm));
        }
        Ok(())
    }

    /// Metropolis-style weights `c / (1 + max(deg_i, deg_j))` on an unweighted graph.
    pub fn metropolis(pairs: &[(usize, usize)], m: usize, c: f64) -> Result<Self, TopologyError> {
        if !(c > 0.0 && c <= 1.0) {
            return Err(TopologyError::BadScale(c));
        }
        let mut degree = vec![0usize; m];
        for &(i, j) in pairs {
            if i < m && j < m && i != j {
                degree[i] += 1;
                degree[j] += 1;
            }
        }
        let edges: Vec<Edge> = pairs
            .iter()
            .map(|&(i, j)| {
                let d = if i < m && j < m { degree[i].max(degree[j]) } else { 0 };
                Edge { i, j, weight: c / (1.0 + d as f64) }
            })
            .collect();
        Self::from_edges(&edges, m)
    }

    /// Seeded Erdős–Rényi graph with Metropolis weights; disconnected draws are rejected.
    pub fn erdos_renyi(m: usize, p: f64, c: f64, seed: u64) -> Result<Self, TopologyError> {
        if m < 2 {
            return Err(TopologyError::TooFewAgents(m));
        }
        if !(p > 0.0 && p <= 1.0) {
            return Err(TopologyError::BadProbability(p));
        }
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        for _ in 0..MAX_GRAPH_ATTEMPTS {
            let mut pairs = Vec::new();
            for i in 0..m {
                for j in (i + 1)..m {
                    if rng.gen::<f64>() < p {
                        pairs.push((i, j));
                    }
                }
            }
            let mut adj = vec![Vec::new(); m];
            for &(i, j) in &pairs {
                adj[i].push(j);
                adj[j].push(i);
            }
            if is_connected(&adj) {
                return Self::metropolis(&pairs, m, c);
            }
        }
        Err(TopologyError::GenerationFailed(MAX_GRAPH_ATTEMPTS))
    }

    /// Cycle 0-1-…-(m-1)-0 with uniform weight.
    pub fn ring(m: usize, weight: f64) -> Result<Self, TopologyError> {
        let edges: Vec<Edge> = if m == 2 {
            vec![Edge { i: 0, j: 1, weight }]
        } else {
            (0..m).map(|i| Edge { i, j: (i + 1) % m, weight }).collect()
        };
        Self::from_edges(&edges, m)
    }

    pub fn complete(m: usize, weight: f64) -> Result<Self, TopologyError> {
        let mut edges = Vec::new();
        for i in 0..m {
            for j in (i + 1)..m {
                edges.push(Edge { i, j, weight });
            }
        }
        Self::from_edges(&edges, m)
    }

    pub fn size(&self) -> usize {
        self.matrix.nrows()
    }

    pub fn weight(&self, i: usize, j: usize) -> f64 {
        self.matrix[(i, j)]
    }

    pub fn neighbors(&self, i: usize) -> &[usize] {
        &self.neighbors[i]
    }

    pub fn matrix(&self) -> &DMatrix<f64> {
        &self.matrix
    }

    pub fn edges(&self) -> &[Edge] {
        &self.edges
    }

    /// `min_i |w_ii|`, the contraction constant of the privacy recursions.
    pub fn min_self_weight(&self) -> f64 {
        (0..self.size()).map(|i| self.matrix[(i, i)].abs()).fold(f64::INFINITY, f64::min)
    }

    /// Spectral norm of `I + W - 11'/m`.
    pub fn contraction_norm(&self) -> f64 {
        let m = self.size();
        let mut a = DMatrix::identity(m, m) + &self.matrix;
        a.add_scalar_mut(-1.0 / m as f64);
        SymmetricEigen::new(a).eigenvalues.iter().fold(0.0_f64, |acc, e| acc.max(e.abs()))
    }

    /// Eigenvalues of W in descending order.
    pub fn eigenvalues(&self) -> Vec<f64> {
        let mut ev: Vec<f64> = SymmetricEigen::new(self.matrix.clone()).eigenvalues.iter().copied().collect();
        ev.sort_by(|a, b| b.total_cmp(a));
        ev
    }

    /// Second largest eigenvalue of W (the largest is 0).
    pub fn second_eigenvalue(&self) -> f64 {
        self.eigenvalues()[1]
    }
}

fn is_connected(adj: &[Vec<usize>]) -> bool {
    let m = adj.len();
    if m == 0 {
        return false;
    }
    let mut seen = vec![false; m];
    let mut stack = vec![0];
    seen[0] = true;
    while let Some(u) = stack.pop() {
        for &v in &adj[u] {
            if !seen[v] {
                seen[v] = true;
                stack.push(v);
            }
        }
    }
    seen.into_iter().all(|s| s)
}

/// Parses `i j weight` lines (0-based agents); `#` starts a comment.
pub fn parse_edge_list(text: &str) -> Result<Vec<Edge>, TopologyError> {
    let mut edges = Vec::new();
    for (n, raw) in text.lines().enumerate() {
        let line = raw.split('#').next().unwrap_or("").trim();
        if line.is_empty() {
            continue;
        }
        let parts: Vec<&str> = line.split_whitespace().collect();
        if parts.len() != 3 {
            return Err(TopologyError::Parse { line: n + 1, reason: format!("expected 3 fields, got {}", parts.len()) });
        }
        let bad = |what: &str| TopologyError::Parse { line: n + 1, reason: format!("cannot parse {what}") };
        edges.push(Edge {
            i: parts[0].parse().map_err(|_| bad("agent i"))?,
            j: parts[1].parse().map_err(|_| bad("agent j"))?,
            weight: parts[2].parse().map_err(|_| bad("weight"))?,
        });
    }
    Ok(edges)
}
