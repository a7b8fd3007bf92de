//! Templated radix tree: a radix tree over prompt templates whose leaves are
//! LLM operators (or individual calls), plus dependency edges between leaves.

mod dump;
mod template;

use alloc::collections::BTreeMap;
use alloc::vec;
use alloc::vec::Vec;

use serde::Serialize;
use thiserror::Error;

use crate::ir::{topo_sort, CompiledGraph, NodeId, ProfileStats};

pub use template::{
    expected_lengths, instantiate, segment_parts, template_weight, Elem, SegmentPart, TemplateBuilder,
    TemplateError,
};

pub type TrtIndex = usize;

/// Identity of a leaf: an LLM operator, or one query's call of it.
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct LeafInfo {
    pub op: NodeId,
    pub worker: usize,
    pub query: Option<u32>,
    pub len_out: f64,
}

#[derive(Debug, Clone)]
pub struct TrtNode {
    pub parent: Option<TrtIndex>,
    pub segment: Vec<Elem>,
    /// Token count of the segment, placeholders counted at their expected
    /// length. Zero for the root and leaves.
    pub weight: f64,
    pub children: Vec<TrtIndex>,
    pub leaf: Option<LeafInfo>,
    pub depth: usize,
}

impl TrtNode {
    pub fn is_leaf(&self) -> bool {
        self.leaf.is_some()
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Error)]
pub enum TrtError {
    #[error("operator {0} already has a leaf")]
    Duplicate(NodeId),
    #[error("dependency leaf {0} is not in the tree")]
    UnknownLeaf(TrtIndex),
    #[error("operator {0} has no worker assignment")]
    Unassigned(NodeId),
    #[error(transparent)]
    Template(#[from] TemplateError),
}

#[derive(Debug, Clone)]
pub struct TemplatedRadixTree {
    nodes: Vec<TrtNode>,
    leaves: Vec<TrtIndex>,
    preds: BTreeMap<TrtIndex, Vec<TrtIndex>>,
    succs: BTreeMap<TrtIndex, Vec<TrtIndex>>,
    leaf_map: BTreeMap<(NodeId, Option<u32>), TrtIndex>,
}

impl Default for TemplatedRadixTree {
    fn default() -> Self {
        Self::new()
    }
}

impl TemplatedRadixTree {
    pub const ROOT: TrtIndex = 0;

    pub fn new() -> Self {
        let root = TrtNode { parent: None, segment: Vec::new(), weight: 0.0, children: Vec::new(), leaf: None, depth: 0 };
        Self {
            nodes: vec![root],
            leaves: Vec::new(),
            preds: BTreeMap::new(),
            succs: BTreeMap::new(),
            leaf_map: BTreeMap::new(),
        }
    }

    pub fn node(&self, idx: TrtIndex) -> &TrtNode {
        &self.nodes[idx]
    }

    pub fn nodes(&self) -> &[TrtNode] {
        &self.nodes
    }

    /// Leaves in insertion order.
    pub fn leaves(&self) -> &[TrtIndex] {
        &self.leaves
    }

    pub fn leaf_info(&self, leaf: TrtIndex) -> &LeafInfo {
        self.nodes[leaf].leaf.as_ref().expect("index is a leaf")
    }

    pub fn leaf_of(&self, op: NodeId, query: Option<u32>) -> Option<TrtIndex> {
        self.leaf_map.get(&(op, query)).copied()
    }

    /// Dependency predecessors of a leaf, ascending.
    pub fn preds(&self, leaf: TrtIndex) -> &[TrtIndex] {
        self.preds.get(&leaf).map(Vec::as_slice).unwrap_or(&[])
    }

    pub fn succs(&self, leaf: TrtIndex) -> &[TrtIndex] {
        self.succs.get(&leaf).map(Vec::as_slice).unwrap_or(&[])
    }

    /// All dependency edges `(from, to)`.
    pub fn dep_edges(&self) -> Vec<(TrtIndex, TrtIndex)> {
        let mut out = Vec::new();
        for (to, from) in &self.preds {
            for f in from {
                out.push((*f, *to));
            }
        }
        out.sort_unstable();
        out
    }

    pub fn internal_count(&self) -> usize {
        self.nodes.len() - self.leaves.len() - 1
    }

    pub fn max_depth(&self) -> usize {
        self.nodes.iter().map(|n| n.depth).max().unwrap_or(0)
    }

    pub fn max_children(&self) -> usize {
        self.nodes.iter().map(|n| n.children.len()).max().unwrap_or(0)
    }

    fn push(&mut self, parent: TrtIndex, segment: Vec<Elem>, leaf: Option<LeafInfo>) -> TrtIndex {
        let idx = self.nodes.len();
        let weight = if leaf.is_some() { 0.0 } else { template_weight(&segment) };
        let depth = self.nodes[parent].depth + 1;
        self.nodes.push(TrtNode { parent: Some(parent), segment, weight, children: Vec::new(), leaf, depth });
        self.nodes[parent].children.push(idx);
        idx
    }

    /// Splits `child` after `at` elements; returns the new upper node.
    fn split(&mut self, child: TrtIndex, at: usize) -> TrtIndex {
        let parent = self.nodes[child].parent.expect("split below root");
        let tail = self.nodes[child].segment.split_off(at);
        let head = core::mem::replace(&mut self.nodes[child].segment, tail);
        self.nodes[child].weight = template_weight(&self.nodes[child].segment);
        let mid = self.nodes.len();
        let depth = self.nodes[parent].depth + 1;
        self.nodes.push(TrtNode {
            parent: Some(parent),
            weight: template_weight(&head),
            segment: head,
            children: vec![child],
            leaf: None,
            depth,
        });
        let slot = self.nodes[parent].children.iter().position(|c| *c == child).expect("child of parent");
        self.nodes[parent].children[slot] = mid;
        self.nodes[child].parent = Some(mid);
        self.bump_depth(child);
        mid
    }

    fn bump_depth(&mut self, idx: TrtIndex) {
        let mut stack = vec![idx];
        while let Some(n) = stack.pop() {
            self.nodes[n].depth += 1;
            stack.extend(self.nodes[n].children.iter().copied());
        }
    }

    /// Radix insertion of `template`, then a new leaf for `info` with
    /// dependency edges from `deps`.
    pub fn add(&mut self, template: &[Elem], info: LeafInfo, deps: &[TrtIndex]) -> Result<TrtIndex, TrtError> {
        if self.leaf_map.contains_key(&(info.op, info.query)) {
            return Err(TrtError::Duplicate(info.op));
        }
        if let Some(d) = deps.iter().find(|d| self.nodes.get(**d).map_or(true, |n| !n.is_leaf())) {
            return Err(TrtError::UnknownLeaf(*d));
        }
        let mut cur = Self::ROOT;
        let mut pos = 0;
        while pos < template.len() {
            let rest = &template[pos..];
            let next = self.nodes[cur]
                .children
                .iter()
                .copied()
                .find(|c| !self.nodes[*c].is_leaf() && self.nodes[*c].segment[0] == rest[0]);
            let Some(child) = next else {
                cur = self.push(cur, rest.to_vec(), None);
                break;
            };
            let seg = &self.nodes[child].segment;
            let common = seg.iter().zip(rest).take_while(|(a, b)| a == b).count();
            cur = if common < seg.len() { self.split(child, common) } else { child };
            pos += common;
        }
        let leaf = self.push(cur, Vec::new(), Some(info));
        self.leaves.push(leaf);
        self.leaf_map.insert((info.op, info.query), leaf);
        let mut sorted: Vec<TrtIndex> = deps.to_vec();
        sorted.sort_unstable();
        sorted.dedup();
        for d in &sorted {
            self.succs.entry(*d).or_default().push(leaf);
        }
        if !sorted.is_empty() {
            self.preds.insert(leaf, sorted);
        }
        Ok(leaf)
    }

    /// Nodes from the root (exclusive) down to `idx` (inclusive).
    pub fn root_path(&self, idx: TrtIndex) -> Vec<TrtIndex> {
        let mut path = Vec::new();
        let mut cur = idx;
        while let Some(p) = self.nodes[cur].parent {
            path.push(cur);
            cur = p;
        }
        path.reverse();
        path
    }

    pub fn lca(&self, a: TrtIndex, b: TrtIndex) -> TrtIndex {
        let (mut a, mut b) = (a, b);
        while self.nodes[a].depth > self.nodes[b].depth {
            a = self.nodes[a].parent.expect("deeper node has a parent");
        }
        while self.nodes[b].depth > self.nodes[a].depth {
            b = self.nodes[b].parent.expect("deeper node has a parent");
        }
        while a != b {
            a = self.nodes[a].parent.expect("distinct nodes below root");
            b = self.nodes[b].parent.expect("distinct nodes below root");
        }
        a
    }

    /// Weight of the path from the root (exclusive) to `leaf`.
    pub fn root_path_weight(&self, leaf: TrtIndex) -> f64 {
        let mut w = 0.0;
        let mut cur = leaf;
        while let Some(p) = self.nodes[cur].parent {
            w += self.nodes[cur].weight;
            cur = p;
        }
        w
    }

    /// Weight of the path from `lca(prev, next)` (exclusive) to `next`: the
    /// prompt tokens of `next` not shared with `prev`.
    pub fn lca_path_weight(&self, prev: TrtIndex, next: TrtIndex) -> f64 {
        let stop = self.lca(prev, next);
        let mut w = 0.0;
        let mut cur = next;
        while cur != stop {
            w += self.nodes[cur].weight;
            cur = self.nodes[cur].parent.expect("lca is an ancestor");
        }
        w
    }

    /// Concatenated segments on the root path of `idx`.
    pub fn path_template(&self, idx: TrtIndex) -> Vec<Elem> {
        let mut out = Vec::new();
        for n in self.root_path(idx) {
            out.extend_from_slice(&self.nodes[n].segment);
        }
        out
    }

    /// Length of the leading all-static part of the root path of `idx`.
    pub fn static_prefix_len(&self, idx: TrtIndex) -> usize {
        let mut len = 0;
        for n in self.root_path(idx) {
            for e in &self.nodes[n].segment {
                if !e.is_static() {
                    return len;
                }
                len += 1;
            }
        }
        len
    }
}

/// Operator-level tree of every LLM operator of `compiled`, inserted in
/// topological order. `assignment` maps operators to workers; operators
/// missing from a non-empty map are an error, an empty map puts everything
/// on worker 0.
pub fn build_trt(
    compiled: &CompiledGraph,
    profile: &ProfileStats,
    assignment: &BTreeMap<NodeId, usize>,
) -> Result<TemplatedRadixTree, TrtError> {
    let builder = TemplateBuilder::new(compiled, profile);
    let graph = &compiled.graph;
    let mut tree = TemplatedRadixTree::new();
    for id in topo_sort(graph).expect("validated graph") {
        let op = graph.node(id).expect("node from topo order");
        if !op.is_llm() {
            continue;
        }
        let template = builder.prompt(id, None)?;
        let deps: Vec<TrtIndex> = graph
            .llm_dependencies(id)
            .iter()
            .map(|d| tree.leaf_of(*d, None).expect("dependency inserted earlier"))
            .collect();
        let worker = worker_of(assignment, id)?;
        let info = LeafInfo { op: id, worker, query: None, len_out: profile.len_out(id) };
        tree.add(&template, info, &deps)?;
    }
    Ok(tree)
}

fn worker_of(assignment: &BTreeMap<NodeId, usize>, id: NodeId) -> Result<usize, TrtError> {
    if assignment.is_empty() {
        return Ok(0);
    }
    assignment.get(&id).copied().ok_or(TrtError::Unassigned(id))
}

/// Call-level tree: one leaf per (operator, query), with concrete prompt
/// tokens wherever they are known before execution. Operator leaves are
/// expanded in the order of `op_tree`, queries in ascending order.
pub fn expand_to_calls(
    op_tree: &TemplatedRadixTree,
    compiled: &CompiledGraph,
    profile: &ProfileStats,
) -> Result<TemplatedRadixTree, TrtError> {
    let builder = TemplateBuilder::new(compiled, profile);
    let graph = &compiled.graph;
    let mut tree = TemplatedRadixTree::new();
    for leaf in op_tree.leaves() {
        let info = *op_tree.leaf_info(*leaf);
        for q in 0..compiled.batch_size as u32 {
            let template = builder.prompt(info.op, Some(q))?;
            let deps: Vec<TrtIndex> = graph
                .llm_dependencies(info.op)
                .iter()
                .map(|d| tree.leaf_of(*d, Some(q)).expect("dependency expanded earlier"))
                .collect();
            tree.add(&template, LeafInfo { query: Some(q), ..info }, &deps)?;
        }
    }
    Ok(tree)
}
