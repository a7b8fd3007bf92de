//! Assignment of LLM operators to workers by whole prefix subtrees.

use alloc::collections::BTreeMap;
use alloc::vec;
use alloc::vec::Vec;

use crate::cost::CostParams;
use crate::ir::NodeId;
use crate::trt::{TemplatedRadixTree, TrtIndex};

use super::opcost::OpCost;

/// Loads above this multiple of the lightest worker trigger cluster splits.
pub const BALANCE_FACTOR: f64 = 1.5;

/// Number of time windows a cluster's load is spread over.
const WINDOWS: usize = 16;

/// Maps every LLM operator of `tree` to a worker. Root subtrees are placed
/// largest first where they add least to the estimated makespan; while the
/// heaviest worker carries more than [`BALANCE_FACTOR`] times the lightest,
/// the largest cluster of the bottleneck worker is split into child
/// subtrees if that lowers the estimate.
///
/// Load is tracked per time window of each operator's earliest start with
/// unlimited workers, so operators that can run together are spread out.
/// The makespan estimate sums the busiest worker's load over the windows.
pub fn partition_workflow(tree: &TemplatedRadixTree, params: &CostParams, batch: usize) -> BTreeMap<NodeId, usize> {
    let workers = params.workers.len().max(1);
    let mut out = BTreeMap::new();
    if workers == 1 {
        for l in tree.leaves() {
            out.insert(tree.leaf_info(*l).op, 0);
        }
        return out;
    }
    let cost = OpCost::new(tree, params, batch);
    let window = windows(tree, &cost);
    let profile_of = |node: TrtIndex| -> Vec<f64> {
        let mut p = vec![0.0; WINDOWS];
        for l in subtree_leaves(tree, node) {
            p[window[l]] += cost.standalone(l, 0);
        }
        p
    };
    let mut clusters: Vec<TrtIndex> = tree.node(TemplatedRadixTree::ROOT).children.clone();
    let mut best = pack(&clusters, &profile_of, workers);
    loop {
        let packed = &best;
        let totals: Vec<f64> = packed.loads.iter().map(|p| p.iter().sum()).collect();
        let max = totals.iter().copied().fold(0.0, f64::max);
        let min = totals.iter().copied().fold(f64::INFINITY, f64::min);
        if max <= BALANCE_FACTOR * min {
            break;
        }
        let heavy = (0..workers).find(|w| totals[*w] == max).expect("max is attained");
        let victim = clusters
            .iter()
            .enumerate()
            .filter(|(i, _)| packed.assign[*i] == heavy)
            .map(|(_, c)| *c)
            .filter(|c| splittable(tree, *c).is_some())
            .max_by(|a, b| {
                let (la, lb) = (profile_of(*a).iter().sum::<f64>(), profile_of(*b).iter().sum::<f64>());
                la.total_cmp(&lb).then(b.cmp(a))
            });
        let Some(victim) = victim else { break };
        let parts = splittable(tree, victim).expect("filtered above");
        let mut trial: Vec<TrtIndex> = clusters.iter().copied().filter(|c| *c != victim).collect();
        trial.extend(parts);
        let packed = pack(&trial, &profile_of, workers);
        if packed.makespan < best.makespan {
            clusters = trial;
            best = packed;
        } else {
            break;
        }
    }
    for (i, c) in clusters.iter().enumerate() {
        for l in subtree_leaves(tree, *c) {
            out.insert(tree.leaf_info(l).op, best.assign[i]);
        }
    }
    out
}

/// Window of each leaf's earliest start when every operator has a worker
/// of its own.
fn windows(tree: &TemplatedRadixTree, cost: &OpCost<'_>) -> Vec<usize> {
    let n = tree.nodes().len();
    let mut start = vec![0.0f64; n];
    let mut horizon: f64 = 0.0;
    // Leaves are stored in topological order.
    for l in tree.leaves() {
        start[*l] = tree
            .preds(*l)
            .iter()
            .map(|p| start[*p] + cost.standalone(*p, 0) + cost.delay(*p, 0))
            .fold(0.0, f64::max);
        horizon = horizon.max(start[*l] + cost.standalone(*l, 0));
    }
    let mut out = vec![0; n];
    if horizon > 0.0 {
        for l in tree.leaves() {
            out[*l] = ((start[*l] / horizon * WINDOWS as f64) as usize).min(WINDOWS - 1);
        }
    }
    out
}

/// Children of the first node below `node` with more than one child.
fn splittable(tree: &TemplatedRadixTree, mut node: TrtIndex) -> Option<Vec<TrtIndex>> {
    loop {
        let children = &tree.node(node).children;
        match children.len() {
            0 => return None,
            1 => node = children[0],
            _ => return Some(children.clone()),
        }
    }
}

struct Packing {
    assign: Vec<usize>,
    loads: Vec<Vec<f64>>,
    makespan: f64,
}

fn makespan(loads: &[Vec<f64>]) -> f64 {
    (0..WINDOWS).map(|k| loads.iter().map(|p| p[k]).fold(0.0, f64::max)).sum()
}

/// Largest-first packing; each cluster goes where the makespan estimate
/// grows least, ties to the lighter worker, then the lower index.
fn pack(clusters: &[TrtIndex], profile_of: &dyn Fn(TrtIndex) -> Vec<f64>, workers: usize) -> Packing {
    let profiles: Vec<Vec<f64>> = clusters.iter().map(|c| profile_of(*c)).collect();
    let mut order: Vec<(usize, f64)> = profiles.iter().enumerate().map(|(i, p)| (i, p.iter().sum())).collect();
    order.sort_by(|a, b| b.1.total_cmp(&a.1).then(clusters[a.0].cmp(&clusters[b.0])));
    let mut loads = vec![vec![0.0f64; WINDOWS]; workers];
    let mut assign = vec![0; clusters.len()];
    for (i, _) in order {
        let score = |w: usize, loads: &mut Vec<Vec<f64>>| -> (f64, f64) {
            for k in 0..WINDOWS {
                loads[w][k] += profiles[i][k];
            }
            let s = (makespan(loads), loads[w].iter().sum());
            for k in 0..WINDOWS {
                loads[w][k] -= profiles[i][k];
            }
            s
        };
        let mut best = (0, score(0, &mut loads));
        for w in 1..workers {
            let s = score(w, &mut loads);
            if s.0 < best.1 .0 || (s.0 == best.1 .0 && s.1 < best.1 .1) {
                best = (w, s);
            }
        }
        for k in 0..WINDOWS {
            loads[best.0][k] += profiles[i][k];
        }
        assign[i] = best.0;
    }
    let makespan = makespan(&loads);
    Packing { assign, loads, makespan }
}

pub(crate) fn subtree_leaves(tree: &TemplatedRadixTree, node: TrtIndex) -> Vec<TrtIndex> {
    let mut out = Vec::new();
    let mut stack = vec![node];
    while let Some(n) = stack.pop() {
        if tree.node(n).is_leaf() {
            out.push(n);
        }
        stack.extend(tree.node(n).children.iter().rev().copied());
    }
    out
}
