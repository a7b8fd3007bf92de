//! Synthetic multi-agent workloads. Prompts are declared by token counts;
//! static texts and inputs are deterministic synthetic token streams.

mod patterns;

use alloc::collections::BTreeMap;
use alloc::string::{String, ToString};
use alloc::vec::Vec;
use core::fmt;
use core::str::FromStr;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::digest::Digest;
use crate::ir::{
    bind_inputs, CompiledGraph, Message, NodeId, OpArgs, Operator, Part, ProfileStats, Role, Token, Vocab,
    WorkflowGraph,
};

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Pattern {
    Mapred,
    Debate,
    Reflect,
    Iterative,
    Parallel,
    TradingMini,
}

impl Pattern {
    pub const ALL: [Pattern; 6] =
        [Pattern::Mapred, Pattern::Debate, Pattern::Reflect, Pattern::Iterative, Pattern::Parallel, Pattern::TradingMini];

    pub fn name(self) -> &'static str {
        match self {
            Pattern::Mapred => "mapred",
            Pattern::Debate => "debate",
            Pattern::Reflect => "reflect",
            Pattern::Iterative => "iterative",
            Pattern::Parallel => "parallel",
            Pattern::TradingMini => "trading-mini",
        }
    }
}

impl fmt::Display for Pattern {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for Pattern {
    type Err = GenError;

    fn from_str(s: &str) -> Result<Self, GenError> {
        Pattern::ALL.iter().copied().find(|p| p.name() == s).ok_or_else(|| GenError::UnknownPattern(s.to_string()))
    }
}

/// Token lengths of the system prompt, context, question and output.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct PromptShape {
    pub system: usize,
    pub context: usize,
    pub question: usize,
    pub output: usize,
}

impl PromptShape {
    pub const fn new(system: usize, context: usize, question: usize, output: usize) -> Self {
        Self { system, context, question, output }
    }
}

impl Default for PromptShape {
    fn default() -> Self {
        Self::new(300, 600, 40, 60)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SynthSpec {
    pub pattern: Pattern,
    /// Experts (mapred, parallel), debaters, critics (reflect) or chunks
    /// (iterative).
    pub agents: usize,
    /// Debate rounds, or chunks per expert for parallel.
    pub rounds: usize,
    pub batch: usize,
    pub shape: PromptShape,
    /// Every query of the batch shares one context.
    pub shared_context: bool,
    /// All experts share one role prompt (mapred).
    pub same_role: bool,
    /// Relative jitter applied to system-prompt and output lengths.
    pub jitter: f64,
    /// Varies the per-day inputs of trading-mini; other patterns ignore it.
    pub day: u64,
}

impl SynthSpec {
    pub fn new(pattern: Pattern) -> Self {
        let (agents, rounds) = match pattern {
            Pattern::Mapred => (3, 1),
            Pattern::Debate => (3, 2),
            Pattern::Reflect => (2, 1),
            Pattern::Iterative => (6, 1),
            Pattern::Parallel => (3, 2),
            Pattern::TradingMini => (4, 2),
        };
        Self {
            pattern,
            agents,
            rounds,
            batch: 4,
            shape: PromptShape::default(),
            shared_context: false,
            same_role: false,
            jitter: 0.0,
            day: 0,
        }
    }

    pub fn validate(&self) -> Result<(), GenError> {
        if self.batch == 0 {
            return Err(GenError::Invalid("batch must be at least 1"));
        }
        if self.agents == 0 {
            return Err(GenError::Invalid("agents must be at least 1"));
        }
        if self.rounds == 0 {
            return Err(GenError::Invalid("rounds must be at least 1"));
        }
        if !(0.0..1.0).contains(&self.jitter) {
            return Err(GenError::Invalid("jitter must lie in [0, 1)"));
        }
        if self.pattern == Pattern::TradingMini && self.shape.system < 1 {
            return Err(GenError::Invalid("trading-mini needs non-empty system prompts"));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Error)]
pub enum GenError {
    #[error("unknown pattern '{0}'")]
    UnknownPattern(String),
    #[error("invalid generator parameters: {0}")]
    Invalid(&'static str),
}

/// An input entry declared by length.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct SyntheticInput {
    pub token_count: usize,
    pub salt: u64,
}

impl SyntheticInput {
    pub fn tokens(&self, name: &str) -> Vec<Token> {
        Vocab::synthetic_entry(name, self.salt, self.token_count)
    }
}

#[derive(Debug, Clone)]
pub struct Workload {
    pub graph: WorkflowGraph,
    pub inputs: BTreeMap<String, Vec<SyntheticInput>>,
    pub profile: ProfileStats,
}

impl Workload {
    pub fn batch(&self) -> BTreeMap<String, Vec<Vec<Token>>> {
        self.inputs
            .iter()
            .map(|(name, entries)| (name.clone(), entries.iter().map(|e| e.tokens(name)).collect()))
            .collect()
    }

    pub fn compile(&self) -> CompiledGraph {
        bind_inputs(self.graph.clone(), self.batch()).expect("generated inputs cover the graph").0
    }
}

pub fn generate(spec: &SynthSpec, seed: u64) -> Result<Workload, GenError> {
    spec.validate()?;
    let mut b = Builder::new(spec, seed);
    match spec.pattern {
        Pattern::Mapred => patterns::mapred(&mut b),
        Pattern::Debate => patterns::debate(&mut b),
        Pattern::Reflect => patterns::reflect(&mut b),
        Pattern::Iterative => patterns::iterative(&mut b),
        Pattern::Parallel => patterns::parallel(&mut b),
        Pattern::TradingMini => patterns::trading_mini(&mut b),
    }
    Ok(b.finish())
}

/// Message part used while building: literal tokens or another node.
pub(crate) enum Piece {
    Text(Vec<Token>),
    Ref(NodeId),
}

pub(crate) struct Builder<'s> {
    pub spec: &'s SynthSpec,
    seed: u64,
    rng: ChaCha8Rng,
    nodes: Vec<Operator>,
    outputs: Vec<NodeId>,
    inputs: BTreeMap<String, Vec<SyntheticInput>>,
    profile: ProfileStats,
}

impl<'s> Builder<'s> {
    fn new(spec: &'s SynthSpec, seed: u64) -> Self {
        Self {
            spec,
            seed,
            rng: ChaCha8Rng::seed_from_u64(seed),
            nodes: Vec::new(),
            outputs: Vec::new(),
            inputs: BTreeMap::new(),
            profile: ProfileStats::new(),
        }
    }

    fn finish(self) -> Workload {
        let graph = WorkflowGraph::new(self.nodes, self.outputs).expect("generated graphs are valid");
        Workload { graph, inputs: self.inputs, profile: self.profile }
    }

    fn next_id(&self) -> NodeId {
        NodeId(self.nodes.len() as u32)
    }

    pub fn jittered(&mut self, base: usize) -> usize {
        let j = self.spec.jitter;
        if j == 0.0 || base == 0 {
            return base;
        }
        let f: f64 = self.rng.gen_range(1.0 - j..=1.0 + j);
        libm::round(base as f64 * f).max(1.0) as usize
    }

    /// Static text of `len` tokens identified by `label`; equal labels and
    /// lengths give equal text.
    pub fn text(&self, label: &str, len: usize) -> Vec<Token> {
        Vocab::synthetic_entry(label, 0, len)
    }

    fn salt(&self, name: &str, index: u64, day: Option<u64>) -> u64 {
        let mut d = Digest::with_domain("generator-input");
        d.write_u64(self.seed).write_str(name).write_u64(index);
        if let Some(day) = day {
            d.write_u64(day);
        }
        d.finish()
    }

    /// Input placeholder with one synthetic entry per query. `shared` gives
    /// every query the same entry; `daily` varies entries with the day.
    pub fn input(&mut self, name: &str, len: usize, shared: bool, daily: bool) -> NodeId {
        let day = daily.then_some(self.spec.day);
        let entries = (0..self.spec.batch as u64)
            .map(|q| SyntheticInput { token_count: len, salt: self.salt(name, if shared { 0 } else { q }, day) })
            .collect();
        self.inputs.insert(name.to_string(), entries);
        let id = self.next_id();
        self.nodes.push(Operator::new(id, OpArgs::Input { name: name.to_string() }, Vec::new()));
        id
    }

    fn slots(pieces: Vec<Piece>, inputs: &mut Vec<NodeId>) -> Vec<Part> {
        pieces
            .into_iter()
            .map(|p| match p {
                Piece::Text(t) => Part::Text(t),
                Piece::Ref(id) => {
                    let slot = inputs.iter().position(|i| *i == id).unwrap_or_else(|| {
                        inputs.push(id);
                        inputs.len() - 1
                    });
                    Part::Slot(slot)
                }
            })
            .collect()
    }

    pub fn format(&mut self, pieces: Vec<Piece>) -> NodeId {
        let mut inputs = Vec::new();
        let template = Self::slots(pieces, &mut inputs);
        let id = self.next_id();
        self.nodes.push(Operator::new(id, OpArgs::Format { template }, inputs));
        id
    }

    /// Structural equality: equal arguments over pairwise equal inputs.
    fn same(&self, a: &Operator, b: &Operator) -> bool {
        a.id == b.id
            || (a.args == b.args
                && a.inputs.len() == b.inputs.len()
                && a.inputs.iter().zip(&b.inputs).all(|(x, y)| {
                    self.same(&self.nodes[x.0 as usize], &self.nodes[y.0 as usize])
                }))
    }

    pub fn llm(&mut self,messages: Vec<(Role, Vec<Piece>)>, len_out: usize) -> NodeId {
        let mut inputs = Vec::new();
        let messages = messages
            .into_iter()
            .map(|(role, pieces)| Message { role, parts: Self::slots(pieces, &mut inputs) })
            .collect();
        let id = self.next_id();
        let op = Operator::new(id, OpArgs::Llm { messages, deterministic: true }, inputs);
        // A deterministic model answers an identical prompt identically, so a
        // repeated operator keeps the output length of its first occurrence.
        let twin = self.nodes.iter().find(|n| self.same(n, &op)).map(|n| n.id);
        let len = twin.map_or(len_out as f64, |t| self.profile.len_out(t));
        self.nodes.push(op);
        self.profile.insert(id, len);
        id
    }

    pub fn output(&mut self, source: NodeId) -> NodeId {
        let id = self.next_id();
        self.nodes.push(Operator::new(id, OpArgs::Output, alloc::vec![source]));
        self.outputs.push(id);
        id
    }
}
