//! Token-step cost model: prefill and decode usage, precedence delays and
//! schedule makespan.

mod timeline;

use alloc::collections::BTreeSet;
use alloc::vec;
use alloc::vec::Vec;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::trt::{TemplatedRadixTree, TrtIndex};

pub use timeline::Timeline;

/// KV capacity `M` (tokens) and normalization `alpha` of one worker.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct WorkerParams {
    pub capacity: f64,
    pub alpha: f64,
}

impl WorkerParams {
    /// `alpha = 1 / capacity`, the setting for identical workers.
    pub fn with_capacity(capacity: f64) -> Self {
        Self { capacity, alpha: 1.0 / capacity }
    }
}

pub const DEFAULT_CAPACITY: f64 = 8192.0;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CostParams {
    pub workers: Vec<WorkerParams>,
}

impl CostParams {
    pub fn uniform(workers: usize, capacity: f64) -> Self {
        Self { workers: vec![WorkerParams::with_capacity(capacity); workers] }
    }

    pub fn single() -> Self {
        Self::uniform(1, DEFAULT_CAPACITY)
    }

    pub fn scaled(&self, k: f64) -> Self {
        Self {
            workers: self.workers.iter().map(|w| WorkerParams { capacity: w.capacity, alpha: w.alpha * k }).collect(),
        }
    }
}

/// Cumulative tokens over all decode steps: `n (n + 1) / 2`.
pub fn decode_usage(len_out: f64) -> f64 {
    0.5 * len_out * (len_out + 1.0)
}

pub fn total_usage(prefill: f64, len_out: f64, alpha: f64) -> f64 {
    alpha * (len_out * prefill + decode_usage(len_out))
}

pub fn precedence_delay(alpha: f64, capacity: f64, len_out: f64) -> f64 {
    alpha * capacity * len_out
}

/// New prompt tokens of `leaf` when it follows `prev` on the same worker.
pub fn prefill_usage(tree: &TemplatedRadixTree, prev: Option<TrtIndex>, leaf: TrtIndex) -> f64 {
    match prev {
        None => tree.root_path_weight(leaf),
        Some(p) => tree.lca_path_weight(p, leaf),
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct CallEval {
    pub leaf: TrtIndex,
    pub worker: usize,
    pub position: usize,
    pub prefill: f64,
    pub usage: f64,
    pub delay: f64,
    pub start: f64,
    pub completion: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct ScheduleEval {
    /// In evaluation order.
    pub calls: Vec<CallEval>,
    pub total: f64,
}

impl ScheduleEval {
    pub fn call(&self, leaf: TrtIndex) -> Option<&CallEval> {
        self.calls.iter().find(|c| c.leaf == leaf)
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Error)]
pub enum CostError {
    #[error("schedule has {found} worker sequences but {expected} workers are configured")]
    WorkerCount { expected: usize, found: usize },
    #[error("node {0} is not a leaf of the tree")]
    NotALeaf(TrtIndex),
    #[error("leaf {0} is scheduled more than once")]
    Duplicate(TrtIndex),
    #[error("leaf {0} is not scheduled")]
    Missing(TrtIndex),
    #[error("infeasible schedule: leaf {to} depends on leaf {from} which cannot complete first")]
    Infeasible { from: TrtIndex, to: TrtIndex },
}

/// Checks that `sigma` places every leaf exactly once.
pub fn check_partition(tree: &TemplatedRadixTree, sigma: &[Vec<TrtIndex>], workers: usize) -> Result<(), CostError> {
    if sigma.len() != workers {
        return Err(CostError::WorkerCount { expected: workers, found: sigma.len() });
    }
    let mut seen = BTreeSet::new();
    for seq in sigma {
        for l in seq {
            if *l >= tree.nodes().len() || !tree.node(*l).is_leaf() {
                return Err(CostError::NotALeaf(*l));
            }
            if !seen.insert(*l) {
                return Err(CostError::Duplicate(*l));
            }
        }
    }
    if let Some(l) = tree.leaves().iter().find(|l| !seen.contains(*l)) {
        return Err(CostError::Missing(*l));
    }
    Ok(())
}

/// Start and completion token steps of every call of `sigma`, where
/// `sigma[i]` is the call order of worker `i`. A call starts once the
/// previous call on its worker has completed and every dependency has
/// completed plus its precedence delay.
pub fn evaluate_schedule(
    tree: &TemplatedRadixTree,
    sigma: &[Vec<TrtIndex>],
    params: &CostParams,
) -> Result<ScheduleEval, CostError> {
    check_partition(tree, sigma, params.workers.len())?;
    let mut timeline = Timeline::new(tree, params);
    let mut next = vec![0usize; sigma.len()];
    let mut remaining: usize = sigma.iter().map(Vec::len).sum();
    while remaining > 0 {
        let mut progressed = false;
        for (w, seq) in sigma.iter().enumerate() {
            while next[w] < seq.len() && timeline.deps_placed(seq[next[w]]) {
                timeline.place(seq[next[w]], w);
                next[w] += 1;
                remaining -= 1;
                progressed = true;
            }
        }
        if !progressed {
            let (w, seq) = sigma
                .iter()
                .enumerate()
                .find(|(w, seq)| next[*w] < seq.len())
                .expect("some worker has calls left");
            let to = seq[next[w]];
            let from = *tree
                .preds(to)
                .iter()
                .find(|p| !timeline.is_placed(**p))
                .expect("blocked call has an unplaced dependency");
            return Err(CostError::Infeasible { from, to });
        }
    }
    Ok(timeline.into_eval())
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn decode_usage_is_triangular() {
        for n in 0..=100u32 {
            assert_eq!(decode_usage(n as f64), (n * (n + 1) / 2) as f64);
        }
    }

    #[test]
    fn usage_and_delay_arithmetic() {
        assert_eq!(total_usage(10.0, 2.0, 1.0), 23.0);
        assert_eq!(total_usage(10.0, 0.0, 1.0 / 1000.0), 0.0);
        assert_eq!(total_usage(10.0, 2.0, 2.0), 46.0);
        let m = 8192.0;
        assert_eq!(precedence_delay(1.0 / m, m, 7.0), 7.0);
        assert_eq!(precedence_delay(1.0 / m, m, 0.0), 0.0);
        assert_eq!(precedence_delay(2.0 / m, m, 5.0), 10.0);
    }
}
