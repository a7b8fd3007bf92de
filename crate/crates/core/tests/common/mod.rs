//! Small workflow builders shared by the integration tests.
#![allow(dead_code)]

use std::collections::BTreeMap;

use helios_core::ir::{bind_inputs, LambdaFn, Message, OpArgs, Operator, Part, Role};
use helios_core::{CompiledGraph, NodeId, ProfileStats, Token, Vocab, WorkflowGraph};

pub enum P {
    T(Vec<Token>),
    R(NodeId),
}

pub fn text(label: &str, len: usize) -> Vec<Token> {
    Vocab::synthetic_entry(label, 0, len)
}

pub fn t(label: &str, len: usize) -> P {
    P::T(text(label, len))
}

#[derive(Default)]
pub struct G {
    pub nodes: Vec<Operator>,
    pub outputs: Vec<NodeId>,
    pub profile: ProfileStats,
    pub batch: BTreeMap<String, Vec<Vec<Token>>>,
}

impl G {
    pub fn new() -> Self {
        Self::default()
    }

    fn next(&self) -> NodeId {
        NodeId(self.nodes.len() as u32)
    }

    fn slots(pieces: Vec<P>, inputs: &mut Vec<NodeId>) -> Vec<Part> {
        pieces
            .into_iter()
            .map(|p| match p {
                P::T(t) => Part::Text(t),
                P::R(id) => Part::Slot(inputs.iter().position(|i| *i == id).unwrap_or_else(|| {
                    inputs.push(id);
                    inputs.len() - 1
                })),
            })
            .collect()
    }

    /// Input named `name` bound to `batch` synthetic entries of `len` tokens.
    pub fn input(&mut self, name: &str, len: usize, batch: usize) -> NodeId {
        let values = (0..batch as u64).map(|q| Vocab::synthetic_entry(name, q + 1, len)).collect();
        self.batch.insert(name.into(), values);
        let id = self.next();
        self.nodes.push(Operator::new(id, OpArgs::Input { name: name.into() }, vec![]));
        id
    }

    pub fn data(&mut self, values: Vec<Vec<Token>>) -> NodeId {
        let id = self.next();
        self.nodes.push(Operator::new(id, OpArgs::Data { values }, vec![]));
        id
    }

    pub fn format(&mut self, pieces: Vec<P>) -> NodeId {
        let mut inputs = vec![];
        let template = Self::slots(pieces, &mut inputs);
        let id = self.next();
        self.nodes.push(Operator::new(id, OpArgs::Format { template }, inputs));
        id
    }

    pub fn lambda(&mut self, func: LambdaFn, inputs: Vec<NodeId>) -> NodeId {
        let id = self.next();
        self.nodes.push(Operator::new(id, OpArgs::Lambda { func }, inputs));
        id
    }

    pub fn llm_with(&mut self, msgs: Vec<(Role, Vec<P>)>, len_out: f64, deterministic: bool) -> NodeId {
        let mut inputs = vec![];
        let messages = msgs.into_iter().map(|(role, p)| Message { role, parts: Self::slots(p, &mut inputs) }).collect();
        let id = self.next();
        self.nodes.push(Operator::new(id, OpArgs::Llm { messages, deterministic }, inputs));
        self.profile.insert(id, len_out);
        id
    }

    pub fn llm(&mut self, msgs: Vec<(Role, Vec<P>)>, len_out: f64) -> NodeId {
        self.llm_with(msgs, len_out, true)
    }

    pub fn output(&mut self, src: NodeId) -> NodeId {
        let id = self.next();
        self.nodes.push(Operator::new(id, OpArgs::Output, vec![src]));
        self.outputs.push(id);
        id
    }

    pub fn graph(&self) -> WorkflowGraph {
        WorkflowGraph::new(self.nodes.clone(), self.outputs.clone()).expect("valid test graph")
    }

    pub fn compile(&self) -> CompiledGraph {
        bind_inputs(self.graph(), self.batch.clone()).expect("bound test graph").0
    }
}

/// Two agents over one question batch. Agent 1 answers (op 1); agent 2,
/// whose system prompt is `sys2` tokens, answers (op 2) and then reviews
/// agent 1's answer (op 3). Returns the graph and the three LLM ids.
pub fn two_agents(batch: usize, sys2: usize, question: usize, len_out: f64) -> (G, [NodeId; 3]) {
    let mut g = G::new();
    let q = g.input("question", question, batch);
    let a1 = g.llm(vec![(Role::System, vec![t("agent-1", 40)]), (Role::User, vec![P::R(q)])], len_out);
    let a2 = g.llm(vec![(Role::System, vec![t("agent-2", sys2)]), (Role::User, vec![P::R(q)])], len_out);
    let a3 = g.llm(
        vec![
            (Role::System, vec![t("agent-2", sys2)]),
            (Role::User, vec![P::R(q), t("review-header", 4), P::R(a1)]),
        ],
        len_out,
    );
    g.output(a2);
    g.output(a3);
    (g, [a1, a2, a3])
}

/// Analyst stage of a trading pipeline: a market agent (ops 1, 2 sharing
/// a prompt, op 3 reading both) and a news agent (ops 4, 5, op 6).
pub fn analysts(batch: usize) -> (G, [NodeId; 6]) {
    let mut g = G::new();
    let ticker = g.input("ticker", 8, batch);
    let agent = |g: &mut G, name: &str| {
        let doc = g.input(&format!("{name}-doc"), 120, batch);
        let sys = text(name, 400);
        let a = g.llm(vec![(Role::System, vec![P::T(sys.clone())]), (Role::User, vec![t("trend", 4), P::R(ticker), P::R(doc)])], 40.0);
        let b = g.llm(vec![(Role::System, vec![P::T(sys.clone())]), (Role::User, vec![t("risk", 4), P::R(ticker), P::R(doc)])], 40.0);
        let c = g.llm(
            vec![(Role::System, vec![P::T(sys)]), (Role::User, vec![t("report", 4), P::R(ticker), P::R(a), P::R(b)])],
            60.0,
        );
        g.output(c);
        [a, b, c]
    };
    let [o1, o2, o3] = agent(&mut g, "market");
    let [o4, o5, o6] = agent(&mut g, "news");
    (g, [o1, o2, o3, o4, o5, o6])
}

/// Random DAG of `n` operators over two inputs: each operator is a Format
/// or an LLM reading up to three earlier nodes, every sink is an output.
pub fn random_workflow(seed: u64, n: usize, batch: usize) -> G {
    use rand::{Rng, SeedableRng};
    let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(seed);
    let mut g = G::new();
    let mut pool = vec![g.input("question", 6, batch), g.input("context", 10, batch)];
    let systems = ["alpha", "beta", "gamma"];
    for _ in 0..n {
        let k = rng.gen_range(1..=pool.len().min(3));
        let mut refs: Vec<NodeId> = (0..k).map(|_| pool[rng.gen_range(0..pool.len())]).collect();
        refs.dedup();
        let header = rng.gen_range(1..4);
        let mut user = vec![t("header", header)];
        user.extend(refs.iter().map(|r| P::R(*r)));
        let id = match rng.gen_range(0..4) {
            0 => g.format(user),
            1 => {
                let dup = *pool.last().unwrap();
                g.lambda(LambdaFn::Concat, vec![refs[0], dup])
            }
            _ => {
                let s = rng.gen_range(0..systems.len());
                // Equal prompts must get equal output lengths, as they would
                // from one deterministic model.
                let len = ((s * 3 + header) % 6) as f64;
                g.llm(vec![(Role::System, vec![t(systems[s], 20)]), (Role::User, user)], len)
            }
        };
        pool.push(id);
    }
    let consumed: std::collections::BTreeSet<NodeId> = g.nodes.iter().flat_map(|o| o.inputs.clone()).collect();
    let sinks: Vec<NodeId> = g.nodes.iter().map(|o| o.id).filter(|id| !consumed.contains(id) && id.0 >= 2).collect();
    for s in sinks {
        g.output(s);
    }
    if g.outputs.is_empty() {
        let last = NodeId(g.nodes.len() as u32 - 1);
        g.output(last);
    }
    g
}
