use alloc::string::String;
use alloc::vec::Vec;

use serde::{Deserialize, Serialize};

use super::EvalError;

/// Relative tolerance under which a makespan below the optimum counts as
/// rounding noise.
pub const GAP_EPSILON: f64 = 1e-9;

/// Percentage excess of `t` over the optimum `t_star`.
pub fn optimality_gap(t: f64, t_star: f64) -> Result<f64, EvalError> {
    if !(t_star > 0.0) {
        return Err(EvalError::NonPositiveOptimum(t_star));
    }
    let gap = (t - t_star) / t_star * 100.0;
    if gap >= 0.0 {
        Ok(gap)
    } else if t >= t_star * (1.0 - GAP_EPSILON) {
        Ok(0.0)
    } else {
        Err(EvalError::BelowOptimum { t, t_star })
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GapRow {
    pub instance: String,
    pub method: String,
    pub t: f64,
    pub t_star: f64,
    pub gap: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GapAggregate {
    pub method: String,
    pub count: usize,
    pub avg: f64,
    /// Population standard deviation.
    pub std: f64,
    pub min: f64,
    pub max: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GapReport {
    pub rows: Vec<GapRow>,
    /// One entry per method, in order of first appearance.
    pub aggregates: Vec<GapAggregate>,
}

impl GapReport {
    pub fn from_rows(rows: Vec<GapRow>) -> Self {
        let mut methods: Vec<&str> = Vec::new();
        for r in &rows {
            if !methods.contains(&r.method.as_str()) {
                methods.push(&r.method);
            }
        }
        let aggregates = methods
            .iter()
            .map(|m| {
                let gaps: Vec<f64> = rows.iter().filter(|r| r.method == *m).map(|r| r.gap).collect();
                let n = gaps.len() as f64;
                let avg = gaps.iter().sum::<f64>() / n;
                let var = gaps.iter().map(|g| (g - avg) * (g - avg)).sum::<f64>() / n;
                GapAggregate {
                    method: (*m).into(),
                    count: gaps.len(),
                    avg,
                    std: libm::sqrt(var),
                    min: gaps.iter().copied().fold(f64::INFINITY, f64::min),
                    max: gaps.iter().copied().fold(f64::NEG_INFINITY, f64::max),
                }
            })
            .collect();
        Self { rows, aggregates }
    }

    pub fn aggregate(&self, method: &str) -> Option<&GapAggregate> {
        self.aggregates.iter().find(|a| a.method == method)
    }
}
