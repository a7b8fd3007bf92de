use alloc::collections::BTreeMap;
use alloc::string::{String, ToString};
use alloc::vec::Vec;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use super::graph::{Message, NodeId, OpArgs, Operator, Part, Role, WorkflowGraph};
use super::token::Token;

#[derive(Debug, Clone, PartialEq, Eq, Error)]
pub enum BindError {
    #[error("missing binding for input '{0}'")]
    MissingBinding(String),
    #[error("ragged batch: '{name}' has {found} entries, expected {expected}")]
    Ragged { name: String, expected: usize, found: usize },
    #[error("batch size must be at least 1")]
    EmptyBatch,
    #[error("data node {node} has {found} values for batch size {batch}")]
    DataLength { node: NodeId, found: usize, batch: usize },
}

/// A workflow graph together with one concrete input batch.
#[derive(Debug, Clone, PartialEq)]
pub struct CompiledGraph {
    pub graph: WorkflowGraph,
    pub batch_size: usize,
    pub bindings: BTreeMap<String, Vec<Vec<Token>>>,
}

impl CompiledGraph {
    /// Same batch, different (rewritten) graph.
    pub fn with_graph(&self, graph: WorkflowGraph) -> Self {
        Self { graph, batch_size: self.batch_size, bindings: self.bindings.clone() }
    }

    pub fn binding(&self, name: &str, query: usize) -> &[Token] {
        &self.bindings[name][query]
    }
}

/// Binds placeholder names to a batch. Returns the compiled graph and the
/// names present in `batch` but unused by the graph.
pub fn bind_inputs(
    graph: WorkflowGraph,
    batch: BTreeMap<String, Vec<Vec<Token>>>,
) -> Result<(CompiledGraph, Vec<String>), BindError> {
    let names = graph.input_names();
    let mut size: Option<(String, usize)> = None;
    for name in &names {
        let values = batch.get(*name).ok_or_else(|| BindError::MissingBinding(name.to_string()))?;
        match &size {
            None => size = Some((name.to_string(), values.len())),
            Some((_, expected)) if *expected != values.len() => {
                return Err(BindError::Ragged {
                    name: name.to_string(),
                    expected: *expected,
                    found: values.len(),
                })
            }
            _ => {}
        }
    }
    let batch_size = match size {
        Some((_, n)) => n,
        // A graph without inputs runs once per data row, or once.
        None => graph
            .nodes()
            .filter_map(|o| match &o.args {
                OpArgs::Data { values } if values.len() > 1 => Some(values.len()),
                _ => None,
            })
            .max()
            .unwrap_or(1),
    };
    if batch_size == 0 {
        return Err(BindError::EmptyBatch);
    }
    for op in graph.nodes() {
        let n = match &op.args {
            OpArgs::Data { values } => values.len(),
            OpArgs::CacheFetch { outputs, .. } => outputs.len(),
            _ => continue,
        };
        if n != 1 && n != batch_size {
            return Err(BindError::DataLength { node: op.id, found: n, batch: batch_size });
        }
    }
    let mut bindings = BTreeMap::new();
    let mut ignored = Vec::new();
    for (name, values) in batch {
        if names.contains(name.as_str()) {
            bindings.insert(name, values);
        } else {
            ignored.push(name);
        }
    }
    Ok((CompiledGraph { graph, batch_size, bindings }, ignored))
}

/// Profiled statistics of one LLM operator.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct OpProfile {
    pub len_out: f64,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub spread: Option<f64>,
}

impl OpProfile {
    pub fn new(len_out: f64) -> Self {
        Self { len_out, spread: None }
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Error)]
pub enum ProfileError {
    #[error("profile has no entry for LLM operator {0}")]
    Missing(NodeId),
    #[error("profile entry for {0} is negative or not finite")]
    Invalid(NodeId),
}

/// Per-operator output-length estimates.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(transparent)]
pub struct ProfileStats {
    pub ops: BTreeMap<NodeId, OpProfile>,
}

impl ProfileStats {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn insert(&mut self, id: NodeId, len_out: f64) -> &mut Self {
        self.ops.insert(id, OpProfile::new(len_out));
        self
    }

    /// Estimated output length; zero for operators without an entry.
    pub fn len_out(&self, id: NodeId) -> f64 {
        self.ops.get(&id).map(|p| p.len_out).unwrap_or(0.0)
    }

    pub fn get(&self, id: NodeId) -> Option<&OpProfile> {
        self.ops.get(&id)
    }

    pub fn check_covers(&self, graph: &WorkflowGraph) -> Result<(), ProfileError> {
        for id in graph.llm_ids() {
            let p = self.ops.get(&id).ok_or(ProfileError::Missing(id))?;
            if !(p.len_out.is_finite() && p.len_out >= 0.0) {
                return Err(ProfileError::Invalid(id));
            }
        }
        Ok(())
    }
}

/// Messages of an LLM operator in prompt order: system messages first, then
/// the rest as declared.
pub fn ordered_messages(messages: &[Message]) -> Vec<&Message> {
    let mut out: Vec<&Message> = messages.iter().filter(|m| m.role == Role::System).collect();
    out.extend(messages.iter().filter(|m| m.role != Role::System));
    out
}

/// Concatenates template parts, resolving slots against `inputs`.
pub fn fill_parts(parts: &[Part], inputs: &[&[Token]], out: &mut Vec<Token>) {
    for p in parts {
        match p {
            Part::Text(t) => out.extend_from_slice(t),
            Part::Slot(s) => out.extend_from_slice(inputs[*s]),
        }
    }
}

/// Concrete output of a non-LLM operator for one query, or the prompt of an
/// LLM operator. `inputs` are the values of `op.inputs` in slot order.
pub fn materialize(op: &Operator, query: usize, inputs: &[&[Token]], bindings: &BTreeMap<String, Vec<Vec<Token>>>) -> Vec<Token> {
    match &op.args {
        OpArgs::Data { values } => pick(values, query).to_vec(),
        OpArgs::Input { name } => bindings[name][query].clone(),
        OpArgs::Output => inputs[0].to_vec(),
        OpArgs::Format { template } => {
            let mut out = Vec::new();
            fill_parts(template, inputs, &mut out);
            out
        }
        OpArgs::Lambda { func } => func.apply(inputs),
        OpArgs::Llm { messages, .. } => {
            let mut out = Vec::new();
            for m in ordered_messages(messages) {
                fill_parts(&m.parts, inputs, &mut out);
            }
            out
        }
        OpArgs::CacheFetch { outputs, .. } => pick(outputs, query).to_vec(),
    }
}

/// Entry `query` of a broadcast-or-per-query list.
pub fn pick<T>(values: &[T], query: usize) -> &T {
    if values.len() == 1 {
        &values[0]
    } else {
        &values[query]
    }
}
