use alloc::vec::Vec;
use core::fmt;
use core::str::FromStr;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::EvalError;
use crate::cost::{CostParams, Timeline};
use crate::trt::{TemplatedRadixTree, TrtIndex};

/// Cache-unaware reference schedulers.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase", tag = "kind")]
pub enum BaselineKind {
    /// Queries one after another, operators in topological order.
    QueryWise,
    /// Operators in topological order, all queries of one operator together.
    OpWise,
    /// Any ready call, uniformly at random.
    Random { seed: u64 },
    /// The ready call sharing the longest prefix with the worker's previous
    /// call.
    Lspf,
}

impl BaselineKind {
    pub fn name(&self) -> &'static str {
        match self {
            BaselineKind::QueryWise => "querywise",
            BaselineKind::OpWise => "opwise",
            BaselineKind::Random { .. } => "random",
            BaselineKind::Lspf => "lspf",
        }
    }
}

impl fmt::Display for BaselineKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for BaselineKind {
    type Err = EvalError;

    /// Parses a name; `random` gets seed 0.
    fn from_str(s: &str) -> Result<Self, EvalError> {
        match s {
            "querywise" => Ok(BaselineKind::QueryWise),
            "opwise" => Ok(BaselineKind::OpWise),
            "random" => Ok(BaselineKind::Random { seed: 0 }),
            "lspf" => Ok(BaselineKind::Lspf),
            _ => Err(EvalError::UnknownMethod(s.into())),
        }
    }
}

/// Per-worker call orders of a baseline on a call-level tree whose leaves
/// were expanded operator by operator in topological order.
///
/// QueryWise and OpWise fix a global order and deal it round-robin over the
/// workers. Random and LSPF dispatch as the cost model advances: the n-th
/// dispatched call goes to worker `n % W` and is chosen among the calls
/// whose inputs are available when that worker frees up, or else among
/// those available soonest.
pub fn baseline_schedule(kind: BaselineKind, tree: &TemplatedRadixTree, params: &CostParams) -> Vec<Vec<TrtIndex>> {
    let workers = params.workers.len().max(1);
    match kind {
        BaselineKind::QueryWise | BaselineKind::OpWise => {
            let mut calls: Vec<TrtIndex> = tree.leaves().to_vec();
            let op_rank = |l: &TrtIndex| {
                let op = tree.leaf_info(*l).op;
                tree.leaves().iter().position(|x| tree.leaf_info(*x).op == op).expect("leaf present")
            };
            let query = |l: &TrtIndex| tree.leaf_info(*l).query.unwrap_or(0);
            if kind == BaselineKind::QueryWise {
                calls.sort_by_key(|l| (query(l), op_rank(l)));
            } else {
                calls.sort_by_key(|l| (op_rank(l), query(l)));
            }
            let mut out = alloc::vec![Vec::new(); workers];
            for (i, l) in calls.into_iter().enumerate() {
                out[i % workers].push(l);
            }
            out
        }
        BaselineKind::Random { seed } => {
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            dispatch(tree, params, |_, cands| rng.gen_range(0..cands.len()))
        }
        BaselineKind::Lspf => dispatch(tree, params, |timeline, cands| {
            let key = |l: TrtIndex| {
                let info = tree.leaf_info(l);
                (info.op, info.query)
            };
            let shared = |l: TrtIndex| match timeline.last(timeline.placed_count() % timeline.workers()) {
                Some(prev) => tree.root_path_weight(tree.lca(prev, l)),
                None => 0.0,
            };
            let mut best = 0;
            for i in 1..cands.len() {
                let (a, b) = (shared(cands[i]), shared(cands[best]));
                if a > b || (a == b && key(cands[i]) < key(cands[best])) {
                    best = i;
                }
            }
            best
        }),
    }
}

fn dispatch(
    tree: &TemplatedRadixTree,
    params: &CostParams,
    mut choose: impl FnMut(&Timeline<'_>, &[TrtIndex]) -> usize,
) -> Vec<Vec<TrtIndex>> {
    let mut timeline = Timeline::new(tree, params);
    let total = tree.leaves().len();
    while timeline.placed_count() < total {
        let w = timeline.placed_count() % timeline.workers();
        let clock = timeline.clock(w);
        let frontier: Vec<(TrtIndex, f64)> = tree
            .leaves()
            .iter()
            .filter(|l| !timeline.is_placed(**l))
            .filter_map(|l| timeline.ready_time(*l).map(|r| (*l, r)))
            .collect();
        let mut cands: Vec<TrtIndex> = frontier.iter().filter(|(_, r)| *r <= clock).map(|(l, _)| *l).collect();
        if cands.is_empty() {
            let soonest = frontier.iter().map(|(_, r)| *r).fold(f64::INFINITY, f64::min);
            cands = frontier.iter().filter(|(_, r)| *r <= soonest).map(|(l, _)| *l).collect();
        }
        let pick = cands[choose(&timeline, &cands)];
        timeline.place(pick, w);
    }
    timeline.sequences()
}
