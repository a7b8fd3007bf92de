//! Operator signatures.
//!
//! Structural signatures identify an operator by kind, arguments and the
//! structural signatures of its inputs; they drive common subgraph
//! elimination. Value signatures are computed per query and fold in the bound
//! input values, so they identify one concrete computation and key the
//! prompt cache.

use alloc::collections::BTreeMap;
use alloc::vec::Vec;

use crate::digest::{Digest, Signature};
use crate::ir::{pick, CompiledGraph, LambdaFn, NodeId, OpArgs, Operator, Part, Token, WorkflowGraph};
use crate::ir::topo_sort;

fn write_tokens(d: &mut Digest, tokens: &[Token]) {
    d.write_u64(tokens.len() as u64);
    for t in tokens {
        d.write_u32(t.0);
    }
}

fn write_parts(d: &mut Digest, parts: &[Part]) {
    d.write_u64(parts.len() as u64);
    for p in parts {
        match p {
            Part::Text(t) => {
                d.write_u8(0);
                write_tokens(d, t);
            }
            Part::Slot(s) => {
                d.write_u8(1).write_u64(*s as u64);
            }
        }
    }
}

/// Kind and kind-specific arguments, excluding per-query values.
fn write_args(d: &mut Digest, args: &OpArgs) {
    match args {
        OpArgs::Data { .. } => {
            d.write_str("data");
        }
        OpArgs::Input { .. } => {
            d.write_str("input");
        }
        OpArgs::Output => {
            d.write_str("output");
        }
        OpArgs::Format { template } => {
            d.write_str("format");
            write_parts(d, template);
        }
        OpArgs::Lambda { func } => {
            d.write_str("lambda");
            match func {
                LambdaFn::Identity => d.write_u8(0),
                LambdaFn::Concat => d.write_u8(1),
                LambdaFn::Truncate(n) => d.write_u8(2).write_u64(*n as u64),
            };
        }
        OpArgs::Llm { messages, deterministic } => {
            d.write_str("llm").write_u8(u8::from(*deterministic));
            d.write_u64(messages.len() as u64);
            for m in messages {
                d.write_str(m.role.name());
                write_parts(d, &m.parts);
            }
        }
        OpArgs::CacheFetch { .. } => {
            d.write_str("cache_fetch");
        }
    }
}

/// Whether two copies of `op` with equal inputs may be merged. Designated
/// outputs, sampled LLM calls and cache fetches keep their identity.
fn mergeable(op: &Operator, outputs: &[NodeId]) -> bool {
    op.is_deterministic()
        && !outputs.contains(&op.id)
        && !matches!(op.args, OpArgs::Output | OpArgs::CacheFetch { .. })
}

/// Structural signature of every node.
pub fn structural_signatures(graph: &WorkflowGraph) -> BTreeMap<NodeId, Signature> {
    let order = topo_sort(graph).expect("validated graph is acyclic");
    let mut sigs: BTreeMap<NodeId, Signature> = BTreeMap::new();
    for id in order {
        let op = graph.node(id).expect("node from topo order");
        let mut d = Digest::with_domain("structural");
        write_args(&mut d, &op.args);
        match &op.args {
            OpArgs::Data { values } => {
                d.write_u64(values.len() as u64);
                for v in values {
                    write_tokens(&mut d, v);
                }
            }
            OpArgs::Input { name } => {
                d.write_str(name);
            }
            OpArgs::CacheFetch { keys, .. } => {
                d.write_u64(keys.len() as u64);
                for k in keys {
                    d.write_u64(k.0);
                }
            }
            _ => {}
        }
        if !mergeable(op, graph.outputs()) {
            d.write_str("id").write_u32(id.0);
        }
        d.write_u64(op.inputs.len() as u64);
        for i in &op.inputs {
            d.write_u64(sigs[i].0);
        }
        sigs.insert(id, Signature(d.finish()));
    }
    sigs
}

/// Per-query value signature of every node, `None` where the value depends
/// on a sampled (nondeterministic) LLM call and therefore cannot be reused.
pub fn value_signatures(compiled: &CompiledGraph) -> BTreeMap<NodeId, Vec<Option<Signature>>> {
    let graph = &compiled.graph;
    let b = compiled.batch_size;
    let order = topo_sort(graph).expect("validated graph is acyclic");
    let mut sigs: BTreeMap<NodeId, Vec<Option<Signature>>> = BTreeMap::new();
    for id in order {
        let op = graph.node(id).expect("node from topo order");
        let mut row = Vec::with_capacity(b);
        for q in 0..b {
            let sig = match &op.args {
                OpArgs::Data { values } => Some(value_leaf(pick(values, q))),
                OpArgs::Input { name } => Some(value_leaf(&compiled.bindings[name][q])),
                OpArgs::CacheFetch { keys, .. } => Some(*pick(keys, q)),
                OpArgs::Llm { deterministic: false, .. } => None,
                _ => {
                    let inputs: Option<Vec<Signature>> =
                        op.inputs.iter().map(|i| sigs[i][q]).collect();
                    inputs.map(|inputs| {
                        let mut d = Digest::with_domain("value");
                        write_args(&mut d, &op.args);
                        d.write_u64(inputs.len() as u64);
                        for s in inputs {
                            d.write_u64(s.0);
                        }
                        Signature(d.finish())
                    })
                }
            };
            row.push(sig);
        }
        sigs.insert(id, row);
    }
    sigs
}

fn value_leaf(tokens: &[Token]) -> Signature {
    let mut d = Digest::with_domain("value-leaf");
    write_tokens(&mut d, tokens);
    Signature(d.finish())
}
