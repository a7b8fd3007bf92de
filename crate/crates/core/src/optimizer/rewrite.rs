use alloc::collections::{BTreeMap, BTreeSet};
use alloc::vec::Vec;

use serde::Serialize;

use super::cache::PromptCache;
use super::signature::{structural_signatures, value_signatures};
use crate::digest::Signature;
use crate::ir::{CompiledGraph, NodeId, OpArgs, Operator, Token, WorkflowGraph};

/// Counts of nodes touched by each rewrite.
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize)]
pub struct OptimizeReport {
    pub pruned: usize,
    pub merged: usize,
    pub substituted: usize,
}

/// Which rewrites [`optimize`] applies.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct Rewrites {
    pub prune: bool,
    pub cse: bool,
    pub prompt_cache: bool,
}

impl Default for Rewrites {
    fn default() -> Self {
        Self { prune: true, cse: true, prompt_cache: true }
    }
}

impl Rewrites {
    pub fn none() -> Self {
        Self { prune: false, cse: false, prompt_cache: false }
    }
}

/// Keeps only operators that reach a designated output.
pub fn prune(graph: WorkflowGraph) -> (WorkflowGraph, usize) {
    let mut live = BTreeSet::new();
    let mut stack: Vec<NodeId> = graph.outputs().to_vec();
    while let Some(id) = stack.pop() {
        if live.insert(id) {
            stack.extend(graph.node(id).expect("validated edge").inputs.iter().copied());
        }
    }
    let removed = graph.len() - live.len();
    if removed == 0 {
        return (graph, 0);
    }
    let (mut nodes, outputs) = graph.into_parts();
    nodes.retain(|id, _| live.contains(id));
    (WorkflowGraph::from_parts(nodes, outputs), removed)
}

/// Merges operators with equal structural signatures into the one with the
/// lowest id and rewires consumers to it.
pub fn eliminate_common_subgraphs(graph: WorkflowGraph) -> (WorkflowGraph, usize) {
    let sigs = structural_signatures(&graph);
    let mut survivor: BTreeMap<Signature, NodeId> = BTreeMap::new();
    // Ascending id order, so the first node seen per signature is the lowest.
    for (id, sig) in &sigs {
        survivor.entry(*sig).or_insert(*id);
    }
    let merged = sigs.len() - survivor.len();
    if merged == 0 {
        return (graph, 0);
    }
    let (nodes, outputs) = graph.into_parts();
    let mut kept = BTreeMap::new();
    for (id, mut op) in nodes {
        if survivor[&sigs[&id]] != id {
            continue;
        }
        for input in op.inputs.iter_mut() {
            *input = survivor[&sigs[input]];
        }
        kept.insert(id, op);
    }
    (WorkflowGraph::from_parts(kept, outputs), merged)
}

/// Replaces every deterministic LLM operator whose value signature hits the
/// cache for all queries with a `CacheFetch` node holding the stored outputs.
/// Inputs of replaced nodes are left for [`prune`] to remove.
pub fn substitute_cache(compiled: &CompiledGraph, cache: &mut PromptCache) -> (CompiledGraph, usize) {
    if cache.is_empty() {
        return (compiled.clone(), 0);
    }
    let values = value_signatures(compiled);
    let mut replacements: BTreeMap<NodeId, Operator> = BTreeMap::new();
    for op in compiled.graph.nodes() {
        if !matches!(op.args, OpArgs::Llm { deterministic: true, .. }) {
            continue;
        }
        let Some(keys) = values[&op.id].iter().copied().collect::<Option<Vec<Signature>>>() else {
            continue;
        };
        if !keys.iter().all(|k| cache.contains(*k)) {
            continue;
        }
        let outputs: Vec<Vec<Token>> =
            keys.iter().map(|k| cache.get(*k).expect("checked above").to_vec()).collect();
        replacements.insert(op.id, Operator::new(op.id, OpArgs::CacheFetch { keys, outputs }, Vec::new()));
    }
    let count = replacements.len();
    if count == 0 {
        return (compiled.clone(), 0);
    }
    let (mut nodes, outputs) = compiled.graph.clone().into_parts();
    for (id, op) in replacements {
        nodes.insert(id, op);
    }
    (compiled.with_graph(WorkflowGraph::from_parts(nodes, outputs)), count)
}

/// Stores the outputs of reusable LLM operators. `values[node][query]` holds
/// the concrete output of each executed node.
pub fn record_outputs(
    compiled: &CompiledGraph,
    values: &BTreeMap<NodeId, Vec<Vec<Token>>>,
    cache: &mut PromptCache,
) -> usize {
    let sigs = value_signatures(compiled);
    let mut stored = 0;
    for op in compiled.graph.nodes() {
        if !op.is_llm() {
            continue;
        }
        let Some(outs) = values.get(&op.id) else { continue };
        for (q, sig) in sigs[&op.id].iter().enumerate() {
            if let Some(sig) = sig {
                cache.insert(*sig, outs[q].clone());
                stored += 1;
            }
        }
    }
    stored
}

/// Prune, merge, substitute cache hits, prune again.
pub fn optimize(
    compiled: &CompiledGraph,
    cache: Option<&mut PromptCache>,
    rewrites: Rewrites,
) -> (CompiledGraph, OptimizeReport) {
    let mut report = OptimizeReport::default();
    let mut graph = compiled.graph.clone();
    if rewrites.prune {
        let (g, n) = prune(graph);
        graph = g;
        report.pruned += n;
    }
    if rewrites.cse {
        let (g, n) = eliminate_common_subgraphs(graph);
        graph = g;
        report.merged = n;
    }
    let mut current = compiled.with_graph(graph);
    if rewrites.prompt_cache {
        if let Some(cache) = cache {
            let (c, n) = substitute_cache(&current, cache);
            current = c;
            report.substituted = n;
        }
    }
    if rewrites.prune {
        let (g, n) = prune(current.graph);
        current.graph = g;
        report.pruned += n;
    }
    (current, report)
}
