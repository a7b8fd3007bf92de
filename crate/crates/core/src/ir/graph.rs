use alloc::collections::{BTreeMap, BTreeSet};
use alloc::string::String;
use alloc::vec::Vec;
use core::fmt;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use super::token::Token;
use crate::digest::Signature;

/// Identifier of a workflow node. Ids come straight from the workflow file
/// and order every deterministic tie-break in the engine.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(transparent)]
pub struct NodeId(pub u32);

impl fmt::Display for NodeId {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{}", self.0)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum OpKind {
    Data,
    Input,
    Output,
    Format,
    Lambda,
    Llm,
    CacheFetch,
}

impl OpKind {
    pub fn name(self) -> &'static str {
        match self {
            OpKind::Data => "data",
            OpKind::Input => "input",
            OpKind::Output => "output",
            OpKind::Format => "format",
            OpKind::Lambda => "lambda",
            OpKind::Llm => "llm",
            OpKind::CacheFetch => "cache_fetch",
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Role {
    System,
    User,
    Assistant,
}

impl Role {
    pub fn name(self) -> &'static str {
        match self {
            Role::System => "system",
            Role::User => "user",
            Role::Assistant => "assistant",
        }
    }
}

/// Piece of a format template or message: literal tokens or a reference to
/// the operator's `slot`-th input.
#[derive(Debug, Clone, PartialEq, Eq, Hash)]
pub enum Part {
    Text(Vec<Token>),
    Slot(usize),
}

#[derive(Debug, Clone, PartialEq, Eq, Hash)]
pub struct Message {
    pub role: Role,
    pub parts: Vec<Part>,
}

/// Registry of pure transforms available to `Lambda` nodes.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum LambdaFn {
    Identity,
    Concat,
    Truncate(usize),
}

impl LambdaFn {
    pub fn apply(&self, inputs: &[&[Token]]) -> Vec<Token> {
        match self {
            LambdaFn::Identity => inputs.first().map(|t| t.to_vec()).unwrap_or_default(),
            LambdaFn::Concat => inputs.iter().flat_map(|t| t.iter().copied()).collect(),
            LambdaFn::Truncate(n) => inputs
                .first()
                .map(|t| t[..(*n).min(t.len())].to_vec())
                .unwrap_or_default(),
        }
    }

    /// Output length given input lengths.
    pub fn output_len(&self, inputs: &[f64]) -> f64 {
        match self {
            LambdaFn::Identity => inputs.first().copied().unwrap_or(0.0),
            LambdaFn::Concat => inputs.iter().sum(),
            LambdaFn::Truncate(n) => inputs.first().copied().unwrap_or(0.0).min(*n as f64),
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub enum OpArgs {
    /// One value (broadcast to every query) or one value per query.
    Data { values: Vec<Vec<Token>> },
    Input { name: String },
    Output,
    Format { template: Vec<Part> },
    Lambda { func: LambdaFn },
    Llm { messages: Vec<Message>, deterministic: bool },
    /// Inserted by the optimizer. `keys` and `outputs` hold one entry, or one
    /// per query.
    CacheFetch { keys: Vec<Signature>, outputs: Vec<Vec<Token>> },
}

#[derive(Debug, Clone, PartialEq)]
pub struct Operator {
    pub id: NodeId,
    pub args: OpArgs,
    /// Upstream producers in slot order.
    pub inputs: Vec<NodeId>,
}

impl Operator {
    pub fn new(id: NodeId, args: OpArgs, inputs: Vec<NodeId>) -> Self {
        Self { id, args, inputs }
    }

    pub fn kind(&self) -> OpKind {
        match self.args {
            OpArgs::Data { .. } => OpKind::Data,
            OpArgs::Input { .. } => OpKind::Input,
            OpArgs::Output => OpKind::Output,
            OpArgs::Format { .. } => OpKind::Format,
            OpArgs::Lambda { .. } => OpKind::Lambda,
            OpArgs::Llm { .. } => OpKind::Llm,
            OpArgs::CacheFetch { .. } => OpKind::CacheFetch,
        }
    }

    pub fn is_llm(&self) -> bool {
        matches!(self.args, OpArgs::Llm { .. })
    }

    /// Deterministic LLM nodes and every non-LLM node.
    pub fn is_deterministic(&self) -> bool {
        match &self.args {
            OpArgs::Llm { deterministic, .. } => *deterministic,
            _ => true,
        }
    }

    fn referenced_slots(&self) -> Vec<usize> {
        let mut slots = Vec::new();
        match &self.args {
            OpArgs::Format { template } => collect_slots(template, &mut slots),
            OpArgs::Llm { messages, .. } => {
                for m in messages {
                    collect_slots(&m.parts, &mut slots);
                }
            }
            _ => {}
        }
        slots
    }
}

fn collect_slots(parts: &[Part], out: &mut Vec<usize>) {
    for p in parts {
        if let Part::Slot(s) = p {
            out.push(*s);
        }
    }
}

/// Dependency edge `from -> to`, feeding `to`'s input `slot`.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
pub struct Edge {
    pub from: NodeId,
    pub to: NodeId,
    pub slot: usize,
}

#[derive(Debug, Clone, PartialEq, Eq, Error)]
pub enum GraphError {
    #[error("duplicate node id {0}")]
    DuplicateNode(NodeId),
    #[error("dangling edge {from} -> {to}")]
    DanglingEdge { from: NodeId, to: NodeId },
    #[error("cycle detected through node {0}")]
    Cycle(NodeId),
    #[error("no outputs")]
    NoOutputs,
    #[error("output references missing node {0}")]
    MissingOutput(NodeId),
    #[error("node {node} ({kind}) expects {expected} inputs, found {found}")]
    Arity { node: NodeId, kind: &'static str, expected: &'static str, found: usize },
    #[error("node {node} references slot {slot} but has {inputs} inputs")]
    BadSlot { node: NodeId, slot: usize, inputs: usize },
}

/// Immutable, validated workflow DAG.
#[derive(Debug, Clone, PartialEq)]
pub struct WorkflowGraph {
    nodes: BTreeMap<NodeId, Operator>,
    outputs: Vec<NodeId>,
}

impl WorkflowGraph {
    pub fn new(nodes: Vec<Operator>, outputs: Vec<NodeId>) -> Result<Self, GraphError> {
        let mut map = BTreeMap::new();
        for op in nodes {
            let id = op.id;
            if map.insert(id, op).is_some() {
                return Err(GraphError::DuplicateNode(id));
            }
        }
        let g = Self { nodes: map, outputs };
        g.validate()?;
        Ok(g)
    }

    fn validate(&self) -> Result<(), GraphError> {
        if self.outputs.is_empty() {
            return Err(GraphError::NoOutputs);
        }
        for id in &self.outputs {
            if !self.nodes.contains_key(id) {
                return Err(GraphError::MissingOutput(*id));
            }
        }
        for op in self.nodes.values() {
            for from in &op.inputs {
                if !self.nodes.contains_key(from) {
                    return Err(GraphError::DanglingEdge { from: *from, to: op.id });
                }
            }
            check_arity(op)?;
            for slot in op.referenced_slots() {
                if slot >= op.inputs.len() {
                    return Err(GraphError::BadSlot { node: op.id, slot, inputs: op.inputs.len() });
                }
            }
        }
        topo_sort(self)?;
        Ok(())
    }

    pub fn node(&self, id: NodeId) -> Option<&Operator> {
        self.nodes.get(&id)
    }

    pub fn nodes(&self) -> impl Iterator<Item = &Operator> {
        self.nodes.values()
    }

    pub fn node_ids(&self) -> impl Iterator<Item = NodeId> + '_ {
        self.nodes.keys().copied()
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    pub fn outputs(&self) -> &[NodeId] {
        &self.outputs
    }

    pub fn contains(&self, id: NodeId) -> bool {
        self.nodes.contains_key(&id)
    }

    pub fn edges(&self) -> Vec<Edge> {
        let mut edges = Vec::new();
        for op in self.nodes.values() {
            for (slot, from) in op.inputs.iter().enumerate() {
                edges.push(Edge { from: *from, to: op.id, slot });
            }
        }
        edges
    }

    /// Consumers of every node, ascending and deduplicated.
    pub fn consumers(&self) -> BTreeMap<NodeId, Vec<NodeId>> {
        let mut out: BTreeMap<NodeId, Vec<NodeId>> =
            self.nodes.keys().map(|k| (*k, Vec::new())).collect();
        for op in self.nodes.values() {
            for from in &op.inputs {
                let list = out.get_mut(from).expect("validated edge");
                if list.last() != Some(&op.id) {
                    list.push(op.id);
                }
            }
        }
        out
    }

    pub fn llm_ids(&self) -> Vec<NodeId> {
        self.nodes.values().filter(|o| o.is_llm()).map(|o| o.id).collect()
    }

    /// Input placeholder names, deduplicated.
    pub fn input_names(&self) -> BTreeSet<&str> {
        self.nodes
            .values()
            .filter_map(|o| match &o.args {
                OpArgs::Input { name } => Some(name.as_str()),
                _ => None,
            })
            .collect()
    }

    /// Nearest LLM (or `CacheFetch`) ancestors of `id`, i.e. the LLM
    /// operators whose output reaches `id` through non-LLM operators only.
    pub fn llm_dependencies(&self, id: NodeId) -> Vec<NodeId> {
        let mut found = BTreeSet::new();
        let mut seen = BTreeSet::new();
        let mut stack: Vec<NodeId> = match self.nodes.get(&id) {
            Some(op) => op.inputs.clone(),
            None => return Vec::new(),
        };
        while let Some(n) = stack.pop() {
            if !seen.insert(n) {
                continue;
            }
            let op = &self.nodes[&n];
            if op.is_llm() {
                found.insert(n);
            } else {
                stack.extend(op.inputs.iter().copied());
            }
        }
        found.into_iter().collect()
    }

    /// Rebuilds the graph with a different node set. Used by rewrites, which
    /// are responsible for keeping the result valid.
    pub(crate) fn from_parts(nodes: BTreeMap<NodeId, Operator>, outputs: Vec<NodeId>) -> Self {
        let g = Self { nodes, outputs };
        debug_assert!(g.validate().is_ok(), "rewrite produced an invalid graph");
        g
    }

    pub(crate) fn into_parts(self) -> (BTreeMap<NodeId, Operator>, Vec<NodeId>) {
        (self.nodes, self.outputs)
    }
}

fn check_arity(op: &Operator) -> Result<(), GraphError> {
    let n = op.inputs.len();
    let (ok, expected) = match &op.args {
        OpArgs::Data { .. } | OpArgs::Input { .. } | OpArgs::CacheFetch { .. } => (n == 0, "0"),
        OpArgs::Output => (n == 1, "1"),
        OpArgs::Lambda { func: LambdaFn::Concat } => (n >= 1, ">= 1"),
        OpArgs::Lambda { .. } => (n == 1, "1"),
        OpArgs::Format { .. } | OpArgs::Llm { .. } => (true, "any"),
    };
    if ok {
        Ok(())
    } else {
        Err(GraphError::Arity { node: op.id, kind: op.kind().name(), expected, found: n })
    }
}

/// Topological order; among ready nodes the smallest id goes first.
pub fn topo_sort(graph: &WorkflowGraph) -> Result<Vec<NodeId>, GraphError> {
    let mut indegree: BTreeMap<NodeId, usize> = BTreeMap::new();
    for op in graph.nodes.values() {
        indegree.insert(op.id, op.inputs.len());
    }
    let consumers = {
        let mut c: BTreeMap<NodeId, Vec<NodeId>> = BTreeMap::new();
        for op in graph.nodes.values() {
            for from in &op.inputs {
                if let Some(list) = c.get_mut(from) {
                    list.push(op.id);
                } else {
                    c.insert(*from, alloc::vec![op.id]);
                }
            }
        }
        c
    };
    let mut ready: BTreeSet<NodeId> =
        indegree.iter().filter(|(_, d)| **d == 0).map(|(k, _)| *k).collect();
    let mut order = Vec::with_capacity(indegree.len());
    while let Some(id) = ready.pop_first() {
        order.push(id);
        if let Some(list) = consumers.get(&id) {
            for c in list {
                let d = indegree.get_mut(c).expect("consumer exists");
                *d -= 1;
                if *d == 0 {
                    ready.insert(*c);
                }
            }
        }
    }
    if order.len() != indegree.len() {
        let stuck = indegree
            .iter()
            .find(|(_, d)| **d > 0)
            .map(|(k, _)| *k)
            .expect("some node is stuck");
        return Err(GraphError::Cycle(stuck));
    }
    Ok(order)
}
