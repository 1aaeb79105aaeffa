//! Per-iteration records shared by both engines and the logging grid.

use serde::{Deserialize, Serialize};

/// Column order of every per-run CSV.
pub const COLUMNS: [&str; 9] = ["k", "err_x", "cons_lambda", "cons_y", "cons_z", "constraint_max", "lemma12_margin", "eps_hat", "nu_k"];

/// One logged iteration. Fields that do not apply to a mode are `None`.
///
/// In consensus runs `err_x` holds `max_i ‖x_i − x̄‖`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct MetricRow {
    pub k: usize,
    pub err_x: Option<f64>,
    pub cons_lambda: Option<f64>,
    pub cons_y: Option<f64>,
    pub cons_z: Option<f64>,
    pub constraint_max: Option<f64>,
    pub lemma12_margin: Option<f64>,
    pub eps_hat: Option<f64>,
    pub nu_k: Option<f64>,
}

impl MetricRow {
    pub fn empty(k: usize) -> Self {
        MetricRow {
            k,
            err_x: None,
            cons_lambda: None,
            cons_y: None,
            cons_z: None,
            constraint_max: None,
            lemma12_margin: None,
            eps_hat: None,
            nu_k: None,
        }
    }

    /// The eight value columns in [`COLUMNS`] order (after `k`).
    pub fn values(&self) -> [Option<f64>; 8] {
        [
            self.err_x,
            self.cons_lambda,
            self.cons_y,
            self.cons_z,
            self.constraint_max,
            self.lemma12_margin,
            self.eps_hat,
            self.nu_k,
        ]
    }

    pub fn from_values(k: usize, v: [Option<f64>; 8]) -> Self {
        MetricRow {
            k,
            err_x: v[0],
            cons_lambda: v[1],
            cons_y: v[2],
            cons_z: v[3],
            constraint_max: v[4],
            lemma12_margin: v[5],
            eps_hat: v[6],
            nu_k: v[7],
        }
    }
}

/// Every `k ≤ 100`, then 100 log-spaced points per decade, plus the horizon.
pub fn log_grid(horizon: usize) -> Vec<usize> {
    let mut ks: Vec<usize> = (1..=horizon.min(100)).collect();
    let mut decade = 2;
    while 10f64.powi(decade) < horizon as f64 {
        for j in 1..=100 {
            let k = 10f64.powf(decade as f64 + j as f64 / 100.0).round() as usize;
            if k > horizon {
                break;
            }
            if ks.last().is_none_or(|&last| k > last) {
                ks.push(k);
            }
        }
        decade += 1;
    }
    if ks.last().is_some_and(|&last| last < horizon) {
        ks.push(horizon);
    }
    ks
}

/// Row at exactly `k`, if logged.
pub fn row_at(rows: &[MetricRow], k: usize) -> Option<&MetricRow> {
    rows.binary_search_by_key(&k, |r| r.k).ok().map(|i| &rows[i])
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn grid_is_strictly_increasing_and_hits_decades() {
        let g = log_grid(100_000);
        assert!(g.windows(2).all(|w| w[0] < w[1]));
        for k in [1, 100, 1000, 10_000, 100_000] {
            assert!(g.contains(&k), "missing {k}");
        }
        assert_eq!(g.len(), 100 + 3 * 100);
    }

    #[test]
    fn short_horizons() {
        assert_eq!(log_grid(5), vec![1, 2, 3, 4, 5]);
        let g = log_grid(150);
        assert_eq!(*g.last().unwrap(), 150);
        assert!(g.contains(&126));
    }
}
