//! JSON file formats: workflows, input batches, profiles and prompt caches.
//!
//! Text in workflow and input files is whitespace-tokenized through a shared
//! [`Vocab`]. Synthetic tokens render as `#<id>` and parse back to the same
//! token, so every emitted file round-trips.

use std::collections::BTreeMap;

use helios_core::digest::Signature;
use helios_core::gen::{SyntheticInput, Workload};
use helios_core::ir::{LambdaFn, Message, OpArgs, Operator, Part, Role};
use helios_core::optimizer::PromptCache;
use helios_core::{NodeId, OpKind, ProfileStats, Token, Vocab, WorkflowGraph};
use serde::{Deserialize, Serialize};
use thiserror::Error;

#[derive(Debug, Error)]
pub enum FormatError {
    #[error("malformed JSON: {0}")]
    Json(#[from] serde_json::Error),
    #[error("unknown op kind '{0}'")]
    UnknownKind(String),
    #[error("node {node}: {msg}")]
    Args { node: NodeId, msg: String },
    #[error("node {node}: input slots are not dense (missing slot {slot})")]
    SparseSlots { node: NodeId, slot: usize },
    #[error("node {node}: slot {slot} is fed twice")]
    DuplicateSlot { node: NodeId, slot: usize },
    #[error("dangling edge {from} -> {to}")]
    DanglingEdge { from: NodeId, to: NodeId },
    #[error("cache entry key '{0}' is not a 16-digit hex signature")]
    BadKey(String),
    #[error(transparent)]
    Graph(#[from] helios_core::ir::GraphError),
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(untagged)]
enum PartDoc {
    Text { text: String },
    Ref {
        #[serde(rename = "ref")]
        node: NodeId,
    },
}

#[derive(Debug, Clone, Serialize, Deserialize)]
struct MessageDoc {
    role: Role,
    parts: Vec<PartDoc>,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
enum LambdaDoc {
    Identity,
    Concat,
    Truncate(usize),
}

/// Kind-specific arguments. Every field is optional at the serde level;
/// [`parse_workflow`] checks that the kind's fields are present.
#[derive(Debug, Clone, Default, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct ArgsDoc {
    #[serde(default, skip_serializing_if = "Option::is_none")]
    name: Option<String>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    values: Option<Vec<String>>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    template: Option<Vec<PartDoc>>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    func: Option<LambdaDoc>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    messages: Option<Vec<MessageDoc>>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    deterministic: Option<bool>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    keys: Option<Vec<String>>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    outputs: Option<Vec<Vec<u32>>>,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
struct NodeDoc {
    id: NodeId,
    kind: String,
    #[serde(default)]
    args: ArgsDoc,
}

#[derive(Debug, Clone, Copy, Serialize, Deserialize)]
struct EdgeDoc {
    from: NodeId,
    to: NodeId,
    slot: usize,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
struct WorkflowDoc {
    nodes: Vec<NodeDoc>,
    #[serde(default)]
    edges: Vec<EdgeDoc>,
    outputs: Vec<NodeId>,
}

fn kind_of(s: &str) -> Option<OpKind> {
    [OpKind::Data, OpKind::Input, OpKind::Output, OpKind::Format, OpKind::Lambda, OpKind::Llm, OpKind::CacheFetch]
        .into_iter()
        .find(|k| k.name() == s)
}

fn need<T>(v: Option<T>, node: NodeId, field: &str) -> Result<T, FormatError> {
    v.ok_or_else(|| FormatError::Args { node, msg: format!("missing '{field}'") })
}

/// Resolves `{ref: id}` parts to slots, appending implicit inputs for ids
/// not fed by an explicit edge.
fn parts_in(parts: Vec<PartDoc>, inputs: &mut Vec<NodeId>, vocab: &mut Vocab) -> Vec<Part> {
    parts
        .into_iter()
        .map(|p| match p {
            PartDoc::Text { text } => Part::Text(vocab.parse_rendered(&text)),
            PartDoc::Ref { node } => Part::Slot(inputs.iter().position(|i| *i == node).unwrap_or_else(|| {
                inputs.push(node);
                inputs.len() - 1
            })),
        })
        .collect()
}

fn parts_out(parts: &[Part], inputs: &[NodeId], vocab: &Vocab) -> Vec<PartDoc> {
    parts
        .iter()
        .map(|p| match p {
            Part::Text(t) => PartDoc::Text { text: vocab.render_all(t) },
            Part::Slot(s) => PartDoc::Ref { node: inputs[*s] },
        })
        .collect()
}

/// Parses a workflow document. Explicit edges fix slot positions; text
/// parts referencing other nodes add edges for any source not listed.
pub fn parse_workflow(text: &str, vocab: &mut Vocab) -> Result<WorkflowGraph, FormatError> {
    let doc: WorkflowDoc = serde_json::from_str(text)?;
    let ids: std::collections::BTreeSet<NodeId> = doc.nodes.iter().map(|n| n.id).collect();
    let mut fed: BTreeMap<NodeId, BTreeMap<usize, NodeId>> = BTreeMap::new();
    for e in &doc.edges {
        if !ids.contains(&e.from) || !ids.contains(&e.to) {
            return Err(FormatError::DanglingEdge { from: e.from, to: e.to });
        }
        if fed.entry(e.to).or_default().insert(e.slot, e.from).is_some() {
            return Err(FormatError::DuplicateSlot { node: e.to, slot: e.slot });
        }
    }
    let mut nodes = Vec::with_capacity(doc.nodes.len());
    for n in doc.nodes {
        let id = n.id;
        let kind = kind_of(&n.kind).ok_or_else(|| FormatError::UnknownKind(n.kind.clone()))?;
        let mut inputs = Vec::new();
        if let Some(slots) = fed.get(&id) {
            for (k, (slot, from)) in slots.iter().enumerate() {
                if *slot != k {
                    return Err(FormatError::SparseSlots { node: id, slot: k });
                }
                inputs.push(*from);
            }
        }
        let a = n.args;
        let args = match kind {
            OpKind::Data => OpArgs::Data {
                values: need(a.values, id, "values")?.iter().map(|v| vocab.parse_rendered(v)).collect(),
            },
            OpKind::Input => OpArgs::Input { name: need(a.name, id, "name")? },
            OpKind::Output => OpArgs::Output,
            OpKind::Format => OpArgs::Format { template: parts_in(need(a.template, id, "template")?, &mut inputs, vocab) },
            OpKind::Lambda => OpArgs::Lambda {
                func: match need(a.func, id, "func")? {
                    LambdaDoc::Identity => LambdaFn::Identity,
                    LambdaDoc::Concat => LambdaFn::Concat,
                    LambdaDoc::Truncate(k) => LambdaFn::Truncate(k),
                },
            },
            OpKind::Llm => {
                let messages = need(a.messages, id, "messages")?
                    .into_iter()
                    .map(|m| Message { role: m.role, parts: parts_in(m.parts, &mut inputs, vocab) })
                    .collect();
                OpArgs::Llm { messages, deterministic: a.deterministic.unwrap_or(true) }
            }
            OpKind::CacheFetch => {
                let keys = need(a.keys, id, "keys")?
                    .iter()
                    .map(|k| Signature::from_hex(k).ok_or_else(|| FormatError::BadKey(k.clone())))
                    .collect::<Result<_, _>>()?;
                let outputs =
                    need(a.outputs, id, "outputs")?.into_iter().map(|o| o.into_iter().map(Token).collect()).collect();
                OpArgs::CacheFetch { keys, outputs }
            }
        };
        nodes.push(Operator::new(id, args, inputs));
    }
    Ok(WorkflowGraph::new(nodes, doc.outputs)?)
}

/// Serializes a graph with every edge listed explicitly.
pub fn workflow_to_json(graph: &WorkflowGraph, vocab: &Vocab) -> String {
    let nodes = graph
        .nodes()
        .map(|op| {
            let mut a = ArgsDoc::default();
            match &op.args {
                OpArgs::Data { values } => a.values = Some(values.iter().map(|v| vocab.render_all(v)).collect()),
                OpArgs::Input { name } => a.name = Some(name.clone()),
                OpArgs::Output => {}
                OpArgs::Format { template } => a.template = Some(parts_out(template, &op.inputs, vocab)),
                OpArgs::Lambda { func } => {
                    a.func = Some(match func {
                        LambdaFn::Identity => LambdaDoc::Identity,
                        LambdaFn::Concat => LambdaDoc::Concat,
                        LambdaFn::Truncate(k) => LambdaDoc::Truncate(*k),
                    })
                }
                OpArgs::Llm { messages, deterministic } => {
                    a.messages = Some(
                        messages
                            .iter()
                            .map(|m| MessageDoc { role: m.role, parts: parts_out(&m.parts, &op.inputs, vocab) })
                            .collect(),
                    );
                    a.deterministic = Some(*deterministic);
                }
                OpArgs::CacheFetch { keys, outputs } => {
                    a.keys = Some(keys.iter().map(|k| k.to_hex()).collect());
                    a.outputs = Some(outputs.iter().map(|o| o.iter().map(|t| t.0).collect()).collect());
                }
            }
            NodeDoc { id: op.id, kind: op.kind().name().into(), args: a }
        })
        .collect();
    let edges = graph.edges().into_iter().map(|e| EdgeDoc { from: e.from, to: e.to, slot: e.slot }).collect();
    let doc = WorkflowDoc { nodes, edges, outputs: graph.outputs().to_vec() };
    serde_json::to_string_pretty(&doc).expect("workflow documents serialize")
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(untagged)]
enum EntryDoc {
    Text(String),
    Synthetic {
        token_count: usize,
        #[serde(default, skip_serializing_if = "Option::is_none")]
        salt: Option<u64>,
    },
}

/// Parses an input batch. Entries are strings or `{token_count, salt}`;
/// a missing salt defaults to the entry's index so entries of one name
/// differ.
pub fn parse_inputs(text: &str, vocab: &mut Vocab) -> Result<BTreeMap<String, Vec<Vec<Token>>>, FormatError> {
    let doc: BTreeMap<String, Vec<EntryDoc>> = serde_json::from_str(text)?;
    Ok(doc
        .into_iter()
        .map(|(name, entries)| {
            let values = entries
                .into_iter()
                .enumerate()
                .map(|(i, e)| match e {
                    EntryDoc::Text(t) => vocab.parse_rendered(&t),
                    EntryDoc::Synthetic { token_count, salt } => {
                        SyntheticInput { token_count, salt: salt.unwrap_or(i as u64) }.tokens(&name)
                    }
                })
                .collect();
            (name, values)
        })
        .collect())
}

pub fn inputs_to_json(workload: &Workload) -> String {
    let doc: BTreeMap<&str, Vec<EntryDoc>> = workload
        .inputs
        .iter()
        .map(|(name, entries)| {
            let list = entries
                .iter()
                .map(|e| EntryDoc::Synthetic { token_count: e.token_count, salt: Some(e.salt) })
                .collect();
            (name.as_str(), list)
        })
        .collect();
    serde_json::to_string_pretty(&doc).expect("inputs serialize")
}

pub fn parse_profile(text: &str) -> Result<ProfileStats, FormatError> {
    Ok(serde_json::from_str(text)?)
}

pub fn profile_to_json(profile: &ProfileStats) -> String {
    serde_json::to_string_pretty(profile).expect("profiles serialize")
}

/// Prompt cache file: signature hex to output token ids, least recently
/// used first, so loading replays the recency order.
pub fn parse_cache(text: &str, capacity: usize) -> Result<PromptCache, FormatError> {
    let doc: serde_json::Map<String, serde_json::Value> = serde_json::from_str(text)?;
    let mut cache = PromptCache::new(capacity);
    for (key, value) in doc {
        let sig = Signature::from_hex(&key).ok_or_else(|| FormatError::BadKey(key.clone()))?;
        let tokens: Vec<u32> = serde_json::from_value(value)?;
        cache.insert(sig, tokens.into_iter().map(Token).collect());
    }
    Ok(cache)
}

pub fn cache_to_json(cache: &PromptCache) -> String {
    let doc: serde_json::Map<String, serde_json::Value> = cache
        .iter_lru()
        .map(|(sig, out)| (sig.to_hex(), out.iter().map(|t| t.0).collect::<Vec<_>>().into()))
        .collect();
    serde_json::to_string_pretty(&doc).expect("caches serialize")
}

/// Renders output values per output node and query.
pub fn outputs_to_json(outputs: &BTreeMap<NodeId, Vec<Vec<Token>>>, vocab: &Vocab) -> String {
    let doc: BTreeMap<String, Vec<String>> = outputs
        .iter()
        .map(|(id, per_query)| (id.to_string(), per_query.iter().map(|t| vocab.render_all(t)).collect()))
        .collect();
    serde_json::to_string_pretty(&doc).expect("outputs serialize")
}
