//! Synthetic LLM outputs and the reference evaluator.

use alloc::collections::BTreeMap;
use alloc::vec::Vec;

use serde::{Deserialize, Serialize};

use crate::digest::{mix64, Digest};
use crate::ir::{materialize, topo_sort, CompiledGraph, NodeId, OpArgs, ProfileStats, Token};

/// How synthetic outputs are drawn.
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct SynthConfig {
    /// Draw output lengths around the profiled mean instead of using it.
    pub stochastic: bool,
    pub seed: u64,
}

fn prompt_digest(prompt: &[Token]) -> u64 {
    let mut d = Digest::with_domain("synthetic-output");
    d.write_u64(prompt.len() as u64);
    for t in prompt {
        d.write_u32(t.0);
    }
    d.finish()
}

/// Output of one LLM call. Deterministic operators answer as a function of
/// the prompt alone, so equal prompts give equal outputs whatever the
/// operator; nondeterministic ones also mix in the operator and the seed.
/// The length is the rounded mean, or in stochastic mode a draw spread
/// uniformly over half to one and a half times the mean.
pub fn synth_output(op: NodeId, prompt: &[Token], len_out: f64, deterministic: bool, cfg: SynthConfig) -> Vec<Token> {
    let mut base = prompt_digest(prompt);
    if !deterministic {
        base = mix64(base ^ mix64(u64::from(op.0)) ^ mix64(cfg.seed.wrapping_add(0x5eed)));
    }
    let mean = len_out.max(0.0);
    let len = if cfg.stochastic && mean > 0.0 {
        let u = (mix64(base ^ cfg.seed) >> 11) as f64 / (1u64 << 53) as f64;
        libm::round(mean * (0.5 + u)) as usize
    } else {
        libm::round(mean) as usize
    };
    (0..len as u64).map(|k| Token::synthetic(mix64(base.wrapping_add(k.wrapping_mul(0x9e37_79b9_7f4a_7c15))))).collect()
}

/// Values of every operator for every query, evaluated in topological order
/// with synthetic LLM outputs.
pub fn execute_all(compiled: &CompiledGraph, profile: &ProfileStats, cfg: SynthConfig) -> BTreeMap<NodeId, Vec<Vec<Token>>> {
    let graph = &compiled.graph;
    let mut values: BTreeMap<NodeId, Vec<Vec<Token>>> = BTreeMap::new();
    for id in topo_sort(graph).expect("validated graph") {
        let op = graph.node(id).expect("node from topo order");
        let per_query = (0..compiled.batch_size)
            .map(|q| {
                let inputs: Vec<&[Token]> = op.inputs.iter().map(|i| values[i][q].as_slice()).collect();
                let v = materialize(op, q, &inputs, &compiled.bindings);
                match &op.args {
                    OpArgs::Llm { deterministic, .. } => synth_output(id, &v, profile.len_out(id), *deterministic, cfg),
                    _ => v,
                }
            })
            .collect();
        values.insert(id, per_query);
    }
    values
}

/// Final values of the output operators.
pub fn execute(compiled: &CompiledGraph, profile: &ProfileStats, cfg: SynthConfig) -> BTreeMap<NodeId, Vec<Vec<Token>>> {
    let mut all = execute_all(compiled, profile, cfg);
    compiled.graph.outputs().iter().map(|o| (*o, all.remove(o).expect("output evaluated"))).collect()
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn output_shape() {
        let cfg = SynthConfig::default();
        let p = [Token(1), Token(2)];
        assert!(synth_output(NodeId(0), &p, 0.0, true, cfg).is_empty());
        assert_eq!(synth_output(NodeId(0), &p, 7.4, true, cfg).len(), 7);
        assert_eq!(synth_output(NodeId(0), &p, 5.0, true, cfg), synth_output(NodeId(9), &p, 5.0, true, cfg));
        assert_ne!(synth_output(NodeId(0), &p, 5.0, false, cfg), synth_output(NodeId(9), &p, 5.0, false, cfg));
        assert_ne!(synth_output(NodeId(0), &p, 5.0, true, cfg), synth_output(NodeId(0), &[Token(1)], 5.0, true, cfg));
    }

    #[test]
    fn stochastic_lengths_stay_in_range() {
        for seed in 0..200 {
            let cfg = SynthConfig { stochastic: true, seed };
            let n = synth_output(NodeId(1), &[Token(seed as u32)], 40.0, false, cfg).len();
            assert!((20..=60).contains(&n), "{n}");
        }
    }
}
