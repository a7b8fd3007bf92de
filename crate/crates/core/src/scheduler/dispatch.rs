//! Best-effort dispatch of calls against the cost model.

use alloc::vec::Vec;

use super::SoftSchedule;
use crate::cost::{CostParams, Timeline};
use crate::ir::NodeId;
use crate::trt::{TemplatedRadixTree, TrtIndex};

/// Call order encoded by a soft schedule on a call-level tree. Inner
/// sequences run one after another. Inside one, calls go query by query
/// when its operators share a per-query prompt prefix (the prefix is then
/// reused across operators), and operator by operator otherwise.
pub fn call_priority(soft: &SoftSchedule, call_tree: &TemplatedRadixTree, batch: usize) -> Vec<Vec<TrtIndex>> {
    let call = |op: NodeId, q: usize| call_tree.leaf_of(op, Some(q as u32)).expect("call-level tree covers the schedule");
    soft.workers
        .iter()
        .map(|seqs| {
            let mut out = Vec::new();
            for seq in seqs {
                let per_query = batch > 1
                    && seq.windows(2).any(|p| {
                        let same = call_tree.root_path_weight(call_tree.lca(call(p[0], 0), call(p[1], 0)));
                        let cross = call_tree.root_path_weight(call_tree.lca(call(p[0], 0), call(p[1], 1)));
                        same > cross
                    });
                if per_query {
                    for q in 0..batch {
                        out.extend(seq.iter().map(|op| call(*op, q)));
                    }
                } else {
                    for op in seq {
                        out.extend((0..batch).map(|q| call(*op, q)));
                    }
                }
            }
            out
        })
        .collect()
}

/// Places calls following per-worker priority lists. Each worker's candidate
/// is the first call of its list whose inputs are available when the worker
/// frees up, or else the call that becomes available soonest; the candidate
/// with the earliest start is placed, ties going to the lower worker.
/// Returns the realized per-worker call orders.
pub fn dispatch_priority(tree: &TemplatedRadixTree, params: &CostParams, lists: &[Vec<TrtIndex>]) -> Vec<Vec<TrtIndex>> {
    let mut timeline = Timeline::new(tree, params);
    let mut pending: Vec<Vec<TrtIndex>> = lists.to_vec();
    loop {
        let mut choice: Option<(usize, usize, f64)> = None;
        for (w, list) in pending.iter().enumerate() {
            let clock = timeline.clock(w);
            let mut pick: Option<(usize, f64)> = None;
            for (i, leaf) in list.iter().enumerate() {
                let Some(ready) = timeline.ready_time(*leaf) else { continue };
                let start = ready.max(clock);
                if start <= clock {
                    pick = Some((i, start));
                    break;
                }
                if pick.map_or(true, |(_, s)| start < s) {
                    pick = Some((i, start));
                }
            }
            if let Some((i, start)) = pick {
                let better = choice.map_or(true, |(_, _, cs)| start < cs);
                if better {
                    choice = Some((w, i, start));
                }
            }
        }
        let Some((w, i, _)) = choice else { break };
        let leaf = pending[w].remove(i);
        timeline.place(leaf, w);
    }
    debug_assert!(pending.iter().all(Vec::is_empty), "priority lists must cover a dependency-closed set");
    timeline.sequences()
}

/// Call-level order realized from a soft schedule on a call-level tree.
pub fn expand_soft_schedule(
    soft: &SoftSchedule,
    call_tree: &TemplatedRadixTree,
    params: &CostParams,
    batch: usize,
) -> Vec<Vec<TrtIndex>> {
    let lists = call_priority(soft, call_tree, batch);
    let mut padded = lists;
    padded.resize(params.workers.len(), Vec::new());
    dispatch_priority(call_tree, params, &padded)
}
