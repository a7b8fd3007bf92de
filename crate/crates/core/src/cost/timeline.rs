use alloc::vec;
use alloc::vec::Vec;

use super::{precedence_delay, prefill_usage, total_usage, CallEval, CostParams, ScheduleEval};
use crate::trt::{TemplatedRadixTree, TrtIndex};

/// Incremental schedule evaluation: calls are appended to worker sequences
/// one at a time and their start and completion steps fixed immediately.
#[derive(Debug, Clone)]
pub struct Timeline<'a> {
    tree: &'a TemplatedRadixTree,
    params: &'a CostParams,
    clocks: Vec<f64>,
    last: Vec<Option<TrtIndex>>,
    counts: Vec<usize>,
    /// Completion plus precedence delay, per placed leaf.
    release: Vec<Option<f64>>,
    calls: Vec<CallEval>,
}

impl<'a> Timeline<'a> {
    pub fn new(tree: &'a TemplatedRadixTree, params: &'a CostParams) -> Self {
        let w = params.workers.len();
        Self {
            tree,
            params,
            clocks: vec![0.0; w],
            last: vec![None; w],
            counts: vec![0; w],
            release: vec![None; tree.nodes().len()],
            calls: Vec::new(),
        }
    }

    pub fn tree(&self) -> &'a TemplatedRadixTree {
        self.tree
    }

    pub fn params(&self) -> &'a CostParams {
        self.params
    }

    pub fn workers(&self) -> usize {
        self.clocks.len()
    }

    /// Completion step of the last call on worker `w`.
    pub fn clock(&self, w: usize) -> f64 {
        self.clocks[w]
    }

    pub fn last(&self, w: usize) -> Option<TrtIndex> {
        self.last[w]
    }

    pub fn is_placed(&self, leaf: TrtIndex) -> bool {
        self.release[leaf].is_some()
    }

    pub fn placed_count(&self) -> usize {
        self.calls.len()
    }

    /// Completion plus precedence delay of a placed call.
    pub fn release(&self, leaf: TrtIndex) -> Option<f64> {
        self.release[leaf]
    }

    pub fn deps_placed(&self, leaf: TrtIndex) -> bool {
        self.tree.preds(leaf).iter().all(|p| self.release[*p].is_some())
    }

    /// Earliest start allowed by dependencies, `None` while one is unplaced.
    pub fn ready_time(&self, leaf: TrtIndex) -> Option<f64> {
        let mut t: f64 = 0.0;
        for p in self.tree.preds(leaf) {
            t = t.max(self.release[*p]?);
        }
        Some(t)
    }

    /// Prefill, usage and start of `leaf` if appended to worker `w` now.
    pub fn probe(&self, leaf: TrtIndex, w: usize) -> Option<(f64, f64, f64)> {
        let ready = self.ready_time(leaf)?;
        let info = self.tree.leaf_info(leaf);
        let prefill = prefill_usage(self.tree, self.last[w], leaf);
        let usage = total_usage(prefill, info.len_out, self.params.workers[w].alpha);
        Some((prefill, usage, ready.max(self.clocks[w])))
    }

    /// Completion step of `leaf` if appended to worker `w` now.
    pub fn completion_if(&self, leaf: TrtIndex, w: usize) -> Option<f64> {
        self.probe(leaf, w).map(|(_, u, b)| b + u)
    }

    /// Appends `leaf` to worker `w`. Panics if a dependency is unplaced.
    pub fn place(&mut self, leaf: TrtIndex, w: usize) -> &CallEval {
        let (prefill, usage, start) = self.probe(leaf, w).expect("dependencies placed");
        let info = self.tree.leaf_info(leaf);
        let wp = self.params.workers[w];
        let delay = precedence_delay(wp.alpha, wp.capacity, info.len_out);
        let completion = start + usage;
        self.clocks[w] = completion;
        self.last[w] = Some(leaf);
        self.release[leaf] = Some(completion + delay);
        self.calls.push(CallEval { leaf, worker: w, position: self.counts[w], prefill, usage, delay, start, completion });
        self.counts[w] += 1;
        self.calls.last().expect("just pushed")
    }

    pub fn makespan(&self) -> f64 {
        self.clocks.iter().copied().fold(0.0, f64::max)
    }

    /// Per-worker call sequences in placement order.
    pub fn sequences(&self) -> Vec<Vec<TrtIndex>> {
        let mut out = vec![Vec::new(); self.clocks.len()];
        for c in &self.calls {
            out[c.worker].push(c.leaf);
        }
        out
    }

    pub fn into_eval(self) -> ScheduleEval {
        let total = self.makespan();
        ScheduleEval { calls: self.calls, total }
    }
}
