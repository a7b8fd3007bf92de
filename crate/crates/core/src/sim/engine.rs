use alloc::collections::BTreeMap;
use alloc::vec;
use alloc::vec::Vec;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::Serialize;

use super::{pin_static_prefixes, synth_output, KvCache, Policy, SimConfig, SimError};
use crate::ir::{materialize, topo_sort, CompiledGraph, NodeId, OpArgs, ProfileStats, Token};
use crate::trt::build_trt;

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize)]
pub struct WorkerMetrics {
    pub calls: u64,
    pub prompt_tokens: u64,
    pub prefill_computed: u64,
    pub prefill_cached: u64,
    pub pinned_tokens: u64,
    pub evictions: u64,
}

/// Work batched on one worker in one iteration.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
pub struct IterationRecord {
    pub iteration: u64,
    pub worker: usize,
    pub requests: u32,
    pub tokens: u64,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
pub struct CallRecord {
    pub op: NodeId,
    pub query: u32,
    pub worker: usize,
    pub admitted: u64,
    /// Iterations elapsed when the last output token was produced.
    pub completed: u64,
    pub prompt_tokens: u64,
    pub cached_tokens: u64,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct SimMetrics {
    /// Token steps: iterations until the last call completes.
    pub iterations: u64,
    pub prompt_tokens: u64,
    pub prefill_computed: u64,
    pub prefill_cached: u64,
    /// Cached share of prompt tokens, in percent.
    pub hit_rate: f64,
    pub pinned_tokens: u64,
    pub workers: Vec<WorkerMetrics>,
    pub trace: Vec<IterationRecord>,
    /// In completion order.
    pub calls: Vec<CallRecord>,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct SimResult {
    pub metrics: SimMetrics,
    /// Values of the output operators per query.
    pub outputs: BTreeMap<NodeId, Vec<Vec<Token>>>,
}

#[derive(Debug, Clone, PartialEq)]
enum Phase {
    Waiting,
    Queued,
    /// `wait` names a running call whose prefill computes part of this
    /// prompt; this call borrows those blocks and prefills after it.
    Prefill { left: usize, wait: Option<usize> },
    Decode { produced: usize, from: u64 },
    Done,
}

#[derive(Debug, Clone)]
struct Call {
    op: NodeId,
    query: u32,
    worker: Option<usize>,
    prompt: Vec<Token>,
    output: Vec<Token>,
    profiled: f64,
    len_out: usize,
    deterministic: bool,
    phase: Phase,
    lease: Vec<usize>,
    reserved: usize,
    admitted: u64,
    cached: usize,
}

/// Tokens of `a` and `b` that fall in identical leading whole blocks.
fn shared_blocks(a: &[Token], b: &[Token], bs: usize) -> usize {
    let common = a.iter().zip(b).take_while(|(x, y)| x == y).count();
    common / bs * bs
}

struct Worker {
    cache: KvCache,
    reserved: usize,
    /// Admitted, unfinished calls in admission order.
    running: Vec<usize>,
    /// Ready calls of the worker in policy order (lists) or arrival order.
    queue: Vec<usize>,
    metrics: WorkerMetrics,
}

struct Engine<'a> {
    compiled: &'a CompiledGraph,
    cfg: &'a SimConfig,
    order: Vec<NodeId>,
    values: BTreeMap<NodeId, Vec<Option<Vec<Token>>>>,
    calls: Vec<Call>,
    index: BTreeMap<(NodeId, u32), usize>,
    workers: Vec<Worker>,
    policy: &'a Policy,
    /// Per worker, call indices in list order (lists policy only).
    lists: Vec<Vec<usize>>,
    rng: ChaCha8Rng,
    dealt: usize,
    trace: Vec<IterationRecord>,
    records: Vec<CallRecord>,
    done: usize,
}

/// Executes every call of `compiled` on the configured workers. Output
/// values are identical to [`execute`](super::execute) with the same
/// synthetic-output settings, whatever the policy.
pub fn run(compiled: &CompiledGraph, profile: &ProfileStats, policy: &Policy, cfg: &SimConfig) -> Result<SimResult, SimError> {
    cfg.validate()?;
    profile.check_covers(&compiled.graph)?;
    let graph = &compiled.graph;
    let batch = compiled.batch_size;
    let mut calls = Vec::new();
    let mut index = BTreeMap::new();
    for id in graph.llm_ids() {
        let OpArgs::Llm { deterministic, .. } = graph.node(id).expect("llm id").args else { unreachable!() };
        for q in 0..batch as u32 {
            index.insert((id, q), calls.len());
            calls.push(Call {
                op: id,
                query: q,
                worker: None,
                prompt: Vec::new(),
                output: Vec::new(),
                profiled: profile.len_out(id),
                len_out: 0,
                deterministic,
                phase: Phase::Waiting,
                lease: Vec::new(),
                reserved: 0,
                admitted: 0,
                cached: 0,
            });
        }
    }
    let mut lists = vec![Vec::new(); cfg.workers.len()];
    if let Policy::Lists(l) = policy {
        if l.len() != cfg.workers.len() {
            return Err(SimError::WorkerCount { expected: cfg.workers.len(), found: l.len() });
        }
        for (w, list) in l.iter().enumerate() {
            for (op, query) in list {
                let i = *index.get(&(*op, *query)).ok_or(SimError::UnknownCall { op: *op, query: *query })?;
                if calls[i].worker.is_some() {
                    return Err(SimError::DuplicateCall { op: *op, query: *query });
                }
                calls[i].worker = Some(w);
                lists[w].push(i);
            }
        }
        if let Some(c) = calls.iter().find(|c| c.worker.is_none()) {
            return Err(SimError::MissingCall { op: c.op, query: c.query });
        }
    }
    let mut workers: Vec<Worker> = cfg
        .workers
        .iter()
        .map(|w| Worker {
            cache: KvCache::new(w.capacity, w.block_size),
            reserved: 0,
            running: Vec::new(),
            queue: Vec::new(),
            metrics: WorkerMetrics::default(),
        })
        .collect();
    if cfg.proactive_kv {
        let tree = build_trt(compiled, profile, &BTreeMap::new())?;
        for (w, worker) in workers.iter_mut().enumerate() {
            let runs_here = |op: NodeId| match policy {
                Policy::Lists(_) => lists[w].iter().any(|i| calls[*i].op == op),
                _ => true,
            };
            let pinned = pin_static_prefixes(&mut worker.cache, &tree, cfg.pin_threshold, runs_here);
            worker.metrics.pinned_tokens = pinned as u64;
        }
    }
    let seed = match policy {
        Policy::Random { seed } => *seed,
        _ => 0,
    };
    let mut engine = Engine {
        compiled,
        cfg,
        order: topo_sort(graph).expect("validated graph"),
        values: graph.node_ids().map(|id| (id, vec![None; batch])).collect(),
        calls,
        index,
        workers,
        policy,
        lists,
        rng: ChaCha8Rng::seed_from_u64(seed),
        dealt: 0,
        trace: Vec::new(),
        records: Vec::new(),
        done: 0,
    };
    engine.simulate()?;
    Ok(engine.finish())
}

impl<'a> Engine<'a> {
    fn simulate(&mut self) -> Result<(), SimError> {
        let mut t: u64 = 0;
        while self.done < self.calls.len() {
            self.propagate();
            let mut active = false;
            let mut finished = Vec::new();
            for w in 0..self.workers.len() {
                self.admit(w, t);
                active |= self.step(w, t, &mut finished);
            }
            for i in finished {
                self.complete(i, t);
            }
            if !active {
                return Err(SimError::Stalled(t));
            }
            t += 1;
        }
        self.propagate();
        Ok(())
    }

    /// Evaluates every non-LLM value whose inputs are known and queues the
    /// LLM calls that became ready.
    fn propagate(&mut self) {
        let graph = &self.compiled.graph;
        for id in &self.order {
            let op = graph.node(*id).expect("node from topo order");
            for q in 0..self.compiled.batch_size {
                if self.values[id][q].is_some() {
                    continue;
                }
                let Some(inputs) = op.inputs.iter().map(|i| self.values[i][q].as_deref()).collect::<Option<Vec<&[Token]>>>()
                else {
                    continue;
                };
                let v = materialize(op, q, &inputs, &self.compiled.bindings);
                if op.is_llm() {
                    let i = self.index[&(*id, q as u32)];
                    if self.calls[i].phase == Phase::Waiting {
                        let c = &mut self.calls[i];
                        // Outputs depend on the prompt only, so the decode
                        // length is known once the prompt is.
                        c.output = synth_output(c.op, &v, c.profiled, c.deterministic, self.cfg.synth);
                        c.len_out = c.output.len();
                        self.calls[i].prompt = v;
                        self.calls[i].phase = Phase::Queued;
                        let w = match self.calls[i].worker {
                            Some(w) => w,
                            None => {
                                let w = self.dealt % self.workers.len();
                                self.dealt += 1;
                                self.calls[i].worker = Some(w);
                                w
                            }
                        };
                        self.workers[w].queue.push(i);
                    }
                } else {
                    self.values.get_mut(id).expect("value row")[q] = Some(v);
                }
            }
        }
    }

    fn candidates(&mut self, w: usize) -> Vec<usize> {
        let queued: Vec<usize> = match self.policy {
            Policy::Lists(_) => self.lists[w].iter().copied().filter(|i| self.calls[*i].phase == Phase::Queued).collect(),
            _ => self.workers[w].queue.iter().copied().filter(|i| self.calls[*i].phase == Phase::Queued).collect(),
        };
        match self.policy {
            Policy::Lists(_) => queued,
            Policy::LongestPrefixFirst => {
                let mut keyed: Vec<(usize, usize)> = queued.iter().map(|i| (self.reusable(w, *i).0, *i)).collect();
                keyed.sort_by(|a, b| {
                    let (ca, cb) = (&self.calls[a.1], &self.calls[b.1]);
                    b.0.cmp(&a.0).then((ca.op, ca.query).cmp(&(cb.op, cb.query)))
                });
                keyed.into_iter().map(|(_, i)| i).collect()
            }
            Policy::Random { .. } => {
                let mut rest = queued;
                let mut out = Vec::with_capacity(rest.len());
                while !rest.is_empty() {
                    let k = self.rng.gen_range(0..rest.len());
                    out.push(rest.remove(k));
                }
                out
            }
        }
    }

    /// Prompt tokens of call `i` that worker `w` need not compute: the
    /// cached prefix, or a longer one being prefilled by a running call,
    /// which is returned too.
    fn reusable(&self, w: usize, i: usize) -> (usize, Option<usize>) {
        let worker = &self.workers[w];
        let prompt = &self.calls[i].prompt;
        let mut best = (worker.cache.peek(prompt), None);
        if !self.cfg.workers[w].prefix_caching {
            return best;
        }
        for j in &worker.running {
            if matches!(self.calls[*j].phase, Phase::Prefill { .. }) {
                let n = shared_blocks(prompt, &self.calls[*j].prompt, self.cfg.workers[w].block_size);
                if n > best.0 {
                    best = (n, Some(*j));
                }
            }
        }
        best
    }

    fn admit(&mut self, w: usize, t: u64) {
        let spec = self.cfg.workers[w];
        let bs = spec.block_size;
        let mut pending: usize = self.workers[w]
            .running
            .iter()
            .map(|i| match self.calls[*i].phase {
                Phase::Prefill { left, .. } => left,
                _ => 0,
            })
            .sum();
        for i in self.candidates(w) {
            if pending >= spec.budget {
                break;
            }
            let (reuse, owner) = self.reusable(w, i);
            let worker = &mut self.workers[w];
            let call = &mut self.calls[i];
            let need = (call.prompt.len() - reuse + call.len_out).div_ceil(bs);
            let room = worker.cache.capacity().saturating_sub(worker.cache.pinned_blocks());
            if !worker.running.is_empty() && worker.reserved + need > room {
                break;
            }
            let (matched, lease) = worker.cache.lookup_locked(&call.prompt);
            let matched = if owner.is_some() { reuse } else { matched };
            let left = call.prompt.len() - matched;
            call.lease = lease;
            call.cached = matched;
            call.reserved = need;
            call.admitted = t;
            call.phase = if left == 0 && owner.is_none() {
                Phase::Decode { produced: 0, from: t }
            } else {
                Phase::Prefill { left, wait: owner }
            };
            worker.reserved += need;
            worker.cache.set_reserved(worker.reserved);
            worker.metrics.calls += 1;
            worker.metrics.prompt_tokens += call.prompt.len() as u64;
            worker.metrics.prefill_cached += matched as u64;
            worker.metrics.prefill_computed += left as u64;
            worker.running.push(i);
            pending += left;
        }
    }

    /// Runs one iteration on worker `w`; returns whether anything ran.
    fn step(&mut self, w: usize, t: u64, finished: &mut Vec<usize>) -> bool {
        let spec = self.cfg.workers[w];
        let running = self.workers[w].running.clone();
        let mut requests = 0u32;
        let mut tokens = 0u64;
        let mut decodes = 0usize;
        for i in &running {
            let call = &mut self.calls[*i];
            if let Phase::Decode { produced, from } = &mut call.phase {
                if *from <= t && *produced < call.len_out {
                    *produced += 1;
                    decodes += 1;
                    requests += 1;
                    tokens += 1;
                }
            }
        }
        // Borrowers whose owner has finished prefilling pick up the blocks
        // it inserted; whatever was evicted meanwhile is computed again.
        for i in &running {
            let Phase::Prefill { left, wait: Some(j) } = self.calls[*i].phase else { continue };
            if matches!(self.calls[j].phase, Phase::Prefill { .. }) {
                continue;
            }
            let worker = &mut self.workers[w];
            let call = &mut self.calls[*i];
            worker.cache.unlock(&call.lease);
            let (matched, lease) = worker.cache.lookup_locked(&call.prompt);
            call.lease = lease;
            let lost = call.cached.saturating_sub(matched);
            call.cached -= lost;
            worker.metrics.prefill_cached -= lost as u64;
            worker.metrics.prefill_computed += lost as u64;
            call.phase = Phase::Prefill { left: left + lost, wait: None };
        }
        let mut budget = spec.budget.saturating_sub(decodes);
        for i in &running {
            let call = &mut self.calls[*i];
            let Phase::Prefill { left, wait: None } = &mut call.phase else { continue };
            if budget == 0 {
                break;
            }
            let take = (*left).min(budget);
            *left -= take;
            budget -= take;
            if take > 0 {
                requests += 1;
            }
            tokens += take as u64;
            if *left == 0 {
                call.phase = Phase::Decode { produced: 0, from: t + 1 };
                let worker = &mut self.workers[w];
                if spec.prefix_caching {
                    worker.cache.insert(&call.prompt);
                }
                let prompt_blocks = (call.prompt.len() - call.cached).div_ceil(spec.block_size).min(call.reserved);
                call.reserved -= prompt_blocks;
                worker.reserved -= prompt_blocks;
                worker.cache.set_reserved(worker.reserved);
            }
        }
        for i in &running {
            if let Phase::Decode { produced, .. } = self.calls[*i].phase {
                if produced >= self.calls[*i].len_out {
                    finished.push(*i);
                }
            }
        }
        if requests > 0 {
            self.trace.push(IterationRecord { iteration: t, worker: w, requests, tokens });
        }
        requests > 0 || !running.is_empty()
    }

    fn complete(&mut self, i: usize, t: u64) {
        let w = self.calls[i].worker.expect("admitted call has a worker");
        let call = &mut self.calls[i];
        let output = core::mem::take(&mut call.output);
        let worker = &mut self.workers[w];
        worker.cache.unlock(&call.lease);
        call.lease.clear();
        worker.reserved -= call.reserved;
        call.reserved = 0;
        worker.cache.set_reserved(worker.reserved);
        if self.cfg.workers[w].prefix_caching {
            let mut full = call.prompt.clone();
            full.extend_from_slice(&output);
            worker.cache.insert(&full);
        }
        worker.running.retain(|r| *r != i);
        call.phase = Phase::Done;
        self.records.push(CallRecord {
            op: call.op,
            query: call.query,
            worker: w,
            admitted: call.admitted,
            completed: t + 1,
            prompt_tokens: call.prompt.len() as u64,
            cached_tokens: call.cached as u64,
        });
        self.values.get_mut(&call.op).expect("value row")[call.query as usize] = Some(output);
        self.done += 1;
    }

    fn finish(mut self) -> SimResult {
        let mut workers = Vec::new();
        for w in &mut self.workers {
            w.metrics.evictions = w.cache.evictions();
            workers.push(w.metrics);
        }
        let sum = |f: fn(&WorkerMetrics) -> u64| workers.iter().map(f).sum::<u64>();
        let prompt_tokens = sum(|m| m.prompt_tokens);
        let prefill_cached = sum(|m| m.prefill_cached);
        let metrics = SimMetrics {
            iterations: self.records.iter().map(|r| r.completed).max().unwrap_or(0),
            prompt_tokens,
            prefill_computed: sum(|m| m.prefill_computed),
            prefill_cached,
            hit_rate: if prompt_tokens == 0 { 0.0 } else { prefill_cached as f64 / prompt_tokens as f64 * 100.0 },
            pinned_tokens: sum(|m| m.pinned_tokens),
            workers,
            trace: self.trace,
            calls: self.records,
        };
        let outputs = self
            .compiled
            .graph
            .outputs()
            .iter()
            .map(|o| {
                let row = self.values[o].iter().map(|v| v.clone().expect("outputs materialized")).collect();
                (*o, row)
            })
            .collect();
        SimResult { metrics, outputs }
    }
}
