//! Exact minimum makespan by depth-first branch and bound.

use alloc::collections::BTreeMap;
use alloc::vec;
use alloc::vec::Vec;

use serde::{Deserialize, Serialize};

use super::EvalError;
use crate::cost::{decode_usage, precedence_delay, CostParams, Timeline};
use crate::trt::{TemplatedRadixTree, TrtIndex};

pub const DEFAULT_ORACLE_LIMIT: usize = 10;

/// Lower bounds are shrunk by this factor before pruning so rounding never
/// discards an optimal branch.
const BOUND_SLACK: f64 = 1.0 - 1e-9;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct OracleLimits {
    pub max_calls: usize,
}

impl Default for OracleLimits {
    fn default() -> Self {
        Self { max_calls: DEFAULT_ORACLE_LIMIT }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct OracleSolution {
    pub makespan: f64,
    pub sigma: Vec<Vec<TrtIndex>>,
    /// Search nodes expanded.
    pub nodes: u64,
}

struct Search<'a> {
    tree: &'a TemplatedRadixTree,
    params: &'a CostParams,
    calls: Vec<TrtIndex>,
    /// Position of a leaf in `calls`.
    slot: BTreeMap<TrtIndex, usize>,
    /// Cheapest usage of each call over every possible predecessor and worker.
    umin: Vec<f64>,
    /// Cheapest completion-to-makespan chain starting with each call.
    tail: Vec<f64>,
    best: f64,
    best_sigma: Vec<Vec<TrtIndex>>,
    memo: BTreeMap<(u64, Vec<Option<TrtIndex>>), Vec<Vec<f64>>>,
    nodes: u64,
}

/// Optimal per-worker call orders under the token-step cost model. The
/// search tries every feasible placement order over every worker, skipping
/// all but one of several identical idle workers, and prunes with a
/// critical-path bound, a load bound and dominance between states that
/// placed the same calls with the same last calls per worker.
pub fn exact_min_token_steps(
    tree: &TemplatedRadixTree,
    params: &CostParams,
    limits: OracleLimits,
) -> Result<OracleSolution, EvalError> {
    let calls = tree.leaves().to_vec();
    if calls.len() > limits.max_calls || calls.len() > 64 {
        return Err(EvalError::OverLimit { calls: calls.len(), limit: limits.max_calls.min(64) });
    }
    if params.workers.is_empty() {
        return Err(crate::scheduler::ScheduleError::NoWorkers.into());
    }
    let slot: BTreeMap<_, _> = calls.iter().enumerate().map(|(i, l)| (*l, i)).collect();
    let alpha_min = params.workers.iter().map(|w| w.alpha).fold(f64::INFINITY, f64::min);
    let delay_min = |l: TrtIndex| {
        let n = tree.leaf_info(l).len_out;
        params.workers.iter().map(|w| precedence_delay(w.alpha, w.capacity, n)).fold(f64::INFINITY, f64::min)
    };
    let umin: Vec<f64> = calls
        .iter()
        .map(|l| {
            let mut prefill = tree.root_path_weight(*l);
            for p in &calls {
                if p != l {
                    prefill = prefill.min(tree.lca_path_weight(*p, *l));
                }
            }
            let n = tree.leaf_info(*l).len_out;
            alpha_min * (n * prefill + decode_usage(n))
        })
        .collect();
    // Leaves are inserted after their dependencies, so reverse order visits
    // successors first.
    let mut tail = vec![0.0; calls.len()];
    for i in (0..calls.len()).rev() {
        let l = calls[i];
        let after = tree.succs(l).iter().map(|s| delay_min(l) + tail[slot[s]]).fold(0.0, f64::max);
        tail[i] = umin[i] + after;
    }
    let mut search = Search {
        tree,
        params,
        calls,
        slot,
        umin,
        tail,
        best: f64::INFINITY,
        best_sigma: Vec::new(),
        memo: BTreeMap::new(),
        nodes: 0,
    };
    let timeline = Timeline::new(tree, params);
    search.descend(&timeline, 0);
    if search.calls.is_empty() {
        search.best = 0.0;
        search.best_sigma = vec![Vec::new(); params.workers.len()];
    }
    Ok(OracleSolution { makespan: search.best, sigma: search.best_sigma, nodes: search.nodes })
}

impl<'a> Search<'a> {
    fn descend(&mut self, timeline: &Timeline<'a>, mask: u64) {
        self.nodes += 1;
        let n = self.calls.len();
        if timeline.placed_count() == n {
            let t = timeline.makespan();
            if t < self.best {
                self.best = t;
                self.best_sigma = timeline.sequences();
            }
            return;
        }
        if self.lower_bound(timeline, mask) * BOUND_SLACK >= self.best {
            return;
        }
        if self.dominated(timeline, mask) {
            return;
        }
        let workers = timeline.workers();
        let mut branches: Vec<(f64, usize, usize)> = Vec::new();
        for (i, l) in self.calls.iter().enumerate() {
            if mask & (1 << i) != 0 || !timeline.deps_placed(*l) {
                continue;
            }
            let mut idle_seen: Vec<usize> = Vec::new();
            for w in 0..workers {
                if timeline.last(w).is_none() {
                    let same = idle_seen.iter().any(|v| self.params.workers[*v] == self.params.workers[w]);
                    if same {
                        continue;
                    }
                    idle_seen.push(w);
                }
                let c = timeline.completion_if(*l, w).expect("dependencies placed");
                branches.push((c, i, w));
            }
        }
        branches.sort_by(|a, b| a.0.total_cmp(&b.0).then(a.1.cmp(&b.1)).then(a.2.cmp(&b.2)));
        for (c, i, w) in branches {
            if c * BOUND_SLACK >= self.best {
                continue;
            }
            let mut next = timeline.clone();
            next.place(self.calls[i], w);
            self.descend(&next, mask | (1 << i));
        }
    }

    fn lower_bound(&self, timeline: &Timeline<'_>, mask: u64) -> f64 {
        let workers = timeline.workers();
        let min_clock = (0..workers).map(|w| timeline.clock(w)).fold(f64::INFINITY, f64::min);
        let mut critical: f64 = 0.0;
        let mut load: f64 = (0..workers).map(|w| timeline.clock(w)).sum();
        for (i, l) in self.calls.iter().enumerate() {
            if mask & (1 << i) != 0 {
                continue;
            }
            load += self.umin[i];
            if let Some(ready) = timeline.ready_time(*l) {
                critical = critical.max(ready.max(min_clock) + self.tail[i]);
            }
        }
        timeline.makespan().max(critical).max(load / workers as f64)
    }

    /// Whether an explored state with the same placed set and last calls had
    /// no later worker clocks and no later release of any still-needed
    /// output. Records the state otherwise.
    fn dominated(&mut self, timeline: &Timeline<'_>, mask: u64) -> bool {
        let workers = timeline.workers();
        let lasts: Vec<Option<TrtIndex>> = (0..workers).map(|w| timeline.last(w)).collect();
        let mut vector: Vec<f64> = (0..workers).map(|w| timeline.clock(w)).collect();
        for (i, l) in self.calls.iter().enumerate() {
            if mask & (1 << i) == 0 {
                continue;
            }
            let needed = self.tree.succs(*l).iter().any(|s| mask & (1 << self.slot[s]) == 0);
            if needed {
                let release = timeline.release(*l).expect("placed call");
                vector.push(release);
            }
        }
        let entry = self.memo.entry((mask, lasts)).or_default();
        if entry.iter().any(|old| old.iter().zip(&vector).all(|(o, v)| o <= v)) {
            return true;
        }
        entry.retain(|old| !old.iter().zip(&vector).all(|(o, v)| v <= o));
        entry.push(vector);
        false
    }
}
