//! Prefix templates: LLM prompts flattened into static tokens and
//! placeholders for values produced by other operators.

use alloc::collections::BTreeMap;
use alloc::vec::Vec;
use core::fmt;

use thiserror::Error;

use crate::ir::{
    ordered_messages, pick, CompiledGraph, LambdaFn, NodeId, OpArgs, Part, ProfileStats,
    Token,
};

/// One prompt element. Placeholders compare equal when they stand for the
/// same value (same source, same query); the expected length is carried
/// along for weighting only.
#[derive(Debug, Clone, Copy)]
pub enum Elem {
    Tok(Token),
    Hole { source: NodeId, query: Option<u32>, len: f64 },
}

impl PartialEq for Elem {
    fn eq(&self, other: &Self) -> bool {
        match (self, other) {
            (Elem::Tok(a), Elem::Tok(b)) => a == b,
            (Elem::Hole { source: a, query: qa, .. }, Elem::Hole { source: b, query: qb, .. }) => {
                a == b && qa == qb
            }
            _ => false,
        }
    }
}

impl Eq for Elem {}

impl Elem {
    pub fn weight(&self) -> f64 {
        match self {
            Elem::Tok(_) => 1.0,
            Elem::Hole { len, .. } => *len,
        }
    }

    pub fn is_static(&self) -> bool {
        matches!(self, Elem::Tok(_))
    }
}

impl fmt::Display for Elem {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Elem::Tok(t) => write!(f, "{t}"),
            Elem::Hole { source, query: None, len } => write!(f, "<{source}:{len}>"),
            Elem::Hole { source, query: Some(q), len } => write!(f, "<{source}@{q}:{len}>"),
        }
    }
}

/// Normalized view of a template: runs of static tokens and placeholders.
#[derive(Debug, Clone, PartialEq)]
pub enum SegmentPart {
    Static(Vec<Token>),
    Placeholder { source: NodeId, query: Option<u32>, expected_len: f64 },
}

pub fn segment_parts(elems: &[Elem]) -> Vec<SegmentPart> {
    let mut out: Vec<SegmentPart> = Vec::new();
    for e in elems {
        match e {
            Elem::Tok(t) => {
                if let Some(SegmentPart::Static(run)) = out.last_mut() {
                    run.push(*t);
                } else {
                    out.push(SegmentPart::Static(alloc::vec![*t]));
                }
            }
            Elem::Hole { source, query, len } => out.push(SegmentPart::Placeholder {
                source: *source,
                query: *query,
                expected_len: *len,
            }),
        }
    }
    out
}

pub fn template_weight(elems: &[Elem]) -> f64 {
    elems.iter().map(Elem::weight).sum()
}

#[derive(Debug, Clone, PartialEq, Eq, Error)]
pub enum TemplateError {
    #[error("operator {0} is not an LLM operator")]
    NotLlm(NodeId),
    #[error("operator {0} not found")]
    Missing(NodeId),
}

/// Expected output lengths of every node, averaged over the batch where
/// values are known and taken from the profile for LLM operators.
pub fn expected_lengths(compiled: &CompiledGraph, profile: &ProfileStats) -> BTreeMap<NodeId, f64> {
    let graph = &compiled.graph;
    let b = compiled.batch_size as f64;
    let mut lens = BTreeMap::new();
    for id in crate::ir::topo_sort(graph).expect("validated graph") {
        let op = graph.node(id).expect("node from topo order");
        let input_lens: Vec<f64> = op.inputs.iter().map(|i| lens[i]).collect();
        let mean = |values: &Vec<Vec<Token>>| {
            let n = if values.len() == 1 { 1.0 } else { b };
            values.iter().map(|v| v.len() as f64).sum::<f64>() / n
        };
        let len = match &op.args {
            OpArgs::Data { values } => mean(values),
            OpArgs::Input { name } => mean(&compiled.bindings[name]),
            OpArgs::CacheFetch { outputs, .. } => mean(outputs),
            OpArgs::Output => input_lens[0],
            OpArgs::Format { template } => parts_len(template, &input_lens),
            OpArgs::Lambda { func } => func.output_len(&input_lens),
            OpArgs::Llm { .. } => profile.len_out(id),
        };
        lens.insert(id, len);
    }
    lens
}

fn parts_len(parts: &[Part], input_lens: &[f64]) -> f64 {
    parts
        .iter()
        .map(|p| match p {
            Part::Text(t) => t.len() as f64,
            Part::Slot(s) => input_lens[*s],
        })
        .sum()
}

/// Builds templates, either at operator granularity (`query = None`, values
/// that vary per query become placeholders) or for one concrete call
/// (`query = Some(q)`, every value known before execution is inlined and
/// only LLM outputs remain placeholders).
pub struct TemplateBuilder<'a> {
    compiled: &'a CompiledGraph,
    lens: BTreeMap<NodeId, f64>,
}

impl<'a> TemplateBuilder<'a> {
    pub fn new(compiled: &'a CompiledGraph, profile: &ProfileStats) -> Self {
        Self { compiled, lens: expected_lengths(compiled, profile) }
    }

    pub fn expected_len(&self, id: NodeId) -> f64 {
        self.lens.get(&id).copied().unwrap_or(0.0)
    }

    /// Prompt template of LLM operator `op`.
    pub fn prompt(&self, op: NodeId, query: Option<u32>) -> Result<Vec<Elem>, TemplateError> {
        let node = self.compiled.graph.node(op).ok_or(TemplateError::Missing(op))?;
        let OpArgs::Llm { messages, .. } = &node.args else {
            return Err(TemplateError::NotLlm(op));
        };
        let mut out = Vec::new();
        for m in ordered_messages(messages) {
            self.expand_parts(&m.parts, &node.inputs, query, &mut out);
        }
        Ok(out)
    }

    fn expand_parts(&self, parts: &[Part], inputs: &[NodeId], query: Option<u32>, out: &mut Vec<Elem>) {
        for p in parts {
            match p {
                Part::Text(t) => out.extend(t.iter().map(|t| Elem::Tok(*t))),
                Part::Slot(s) => self.expand_value(inputs[*s], query, out),
            }
        }
    }

    fn hole(&self, source: NodeId, query: Option<u32>) -> Elem {
        Elem::Hole { source, query, len: self.expected_len(source) }
    }

    /// Appends the value of node `id`.
    fn expand_value(&self, id: NodeId, query: Option<u32>, out: &mut Vec<Elem>) {
        let op = self.compiled.graph.node(id).expect("validated edge");
        match (&op.args, query) {
            (OpArgs::Data { values }, _) | (OpArgs::CacheFetch { outputs: values, .. }, _)
                if values.len() == 1 =>
            {
                out.extend(values[0].iter().map(|t| Elem::Tok(*t)));
            }
            (OpArgs::Data { values }, Some(q)) | (OpArgs::CacheFetch { outputs: values, .. }, Some(q)) => {
                out.extend(pick(values, q as usize).iter().map(|t| Elem::Tok(*t)));
            }
            (OpArgs::Input { name }, Some(q)) => {
                out.extend(self.compiled.bindings[name][q as usize].iter().map(|t| Elem::Tok(*t)));
            }
            (OpArgs::Data { .. } | OpArgs::CacheFetch { .. } | OpArgs::Input { .. }, None) => {
                out.push(self.hole(id, None));
            }
            (OpArgs::Output, _) => self.expand_value(op.inputs[0], query, out),
            (OpArgs::Format { template }, _) => self.expand_parts(template, &op.inputs, query, out),
            (OpArgs::Lambda { func: LambdaFn::Identity }, _) => self.expand_value(op.inputs[0], query, out),
            (OpArgs::Lambda { func: LambdaFn::Concat }, _) => {
                for i in &op.inputs {
                    self.expand_value(*i, query, out);
                }
            }
            (OpArgs::Lambda { func: LambdaFn::Truncate(n) }, _) => {
                let mut inner = Vec::new();
                self.expand_value(op.inputs[0], query, &mut inner);
                if inner.iter().all(Elem::is_static) {
                    out.extend(inner.into_iter().take(*n));
                } else {
                    out.push(self.hole(id, query));
                }
            }
            (OpArgs::Llm { .. }, _) => out.push(self.hole(id, query)),
        }
    }
}

/// Concrete tokens of a call template once every placeholder is known.
pub fn instantiate(elems: &[Elem], mut resolve: impl FnMut(NodeId, Option<u32>) -> Vec<Token>) -> Vec<Token> {
    let mut out = Vec::new();
    for e in elems {
        match e {
            Elem::Tok(t) => out.push(*t),
            Elem::Hole { source, query, .. } => out.extend(resolve(*source, *query)),
        }
    }
    out
}
