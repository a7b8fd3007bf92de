//! End-to-end runs: optimize, schedule, evaluate under the cost model and
//! simulate, with every optimization individually switchable.

use alloc::collections::BTreeMap;
use alloc::string::String;
use alloc::vec::Vec;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::cost::{evaluate_schedule, CostError, CostParams, WorkerParams};
use crate::eval::{baseline_schedule, BaselineKind, Method};
use crate::ir::{CompiledGraph, NodeId, ProfileStats, Token};
use crate::optimizer::{optimize, record_outputs, OptimizeReport, PromptCache, Rewrites};
use crate::scheduler::{expand_soft_schedule, schedule, ScheduleError, SoftSchedule};
use crate::sim::{self, execute_all, Policy, SimConfig, SimError, SimMetrics};
use crate::trt::{build_trt, expand_to_calls, TemplatedRadixTree, TrtError, TrtIndex};

/// Optimizations of a run; all on by default.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct Toggles {
    pub prune: bool,
    pub cse: bool,
    pub prompt_cache: bool,
    pub proactive_kv: bool,
    /// Cache-aware scheduling; without it the cache-aware method falls back
    /// to operator-by-operator order.
    pub cas: bool,
}

impl Default for Toggles {
    fn default() -> Self {
        Self { prune: true, cse: true, prompt_cache: true, proactive_kv: true, cas: true }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PipelineConfig {
    pub method: Method,
    pub toggles: Toggles,
    pub params: CostParams,
    pub sim: SimConfig,
}

impl PipelineConfig {
    /// Cost parameters matched to the simulator: a worker's capacity in the
    /// cost model is the number of tokens it processes per iteration.
    pub fn new(method: Method, toggles: Toggles, sim: SimConfig) -> Self {
        let params = CostParams {
            workers: sim.workers.iter().map(|w| WorkerParams::with_capacity(w.budget as f64)).collect(),
        };
        Self { method, toggles, params, sim }
    }
}

#[derive(Debug, Clone, PartialEq, Error)]
pub enum PipelineError {
    #[error("{0} workers in the cost model but {1} in the simulator")]
    WorkerMismatch(usize, usize),
    #[error(transparent)]
    Schedule(#[from] ScheduleError),
    #[error(transparent)]
    Cost(#[from] CostError),
    #[error(transparent)]
    Sim(#[from] SimError),
    #[error(transparent)]
    Tree(#[from] TrtError),
}

/// Schedule of one run: per worker, the calls in dispatch order.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct CallOrder {
    pub workers: Vec<Vec<(NodeId, u32)>>,
}

#[derive(Debug, Clone, Serialize)]
pub struct RunReport {
    pub method: String,
    pub toggles: Toggles,
    pub optimize: OptimizeReport,
    pub llm_ops: usize,
    /// Present for the cache-aware scheduler.
    pub soft_schedule: Option<SoftSchedule>,
    pub calls: CallOrder,
    /// Makespan of the call order under the token-step cost model.
    pub cost_total: f64,
    /// Cost-model timing of every call, in evaluation order.
    pub cost_calls: Vec<CallCost>,
    pub sim: SimMetrics,
    /// Values of the output operators per query.
    pub outputs: BTreeMap<NodeId, Vec<Vec<Token>>>,
    /// Call-level tree the schedule was evaluated on.
    #[serde(skip)]
    pub call_tree: TemplatedRadixTree,
}

/// Token-step timing of one call under the cost model.
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct CallCost {
    pub op: NodeId,
    pub query: u32,
    pub worker: usize,
    pub prefill: f64,
    pub usage: f64,
    pub delay: f64,
    pub start: f64,
    pub completion: f64,
}

fn as_pairs(tree: &TemplatedRadixTree, sigma: &[Vec<TrtIndex>]) -> Vec<Vec<(NodeId, u32)>> {
    sigma
        .iter()
        .map(|seq| {
            seq.iter()
                .map(|l| {
                    let info = tree.leaf_info(*l);
                    (info.op, info.query.unwrap_or(0))
                })
                .collect()
        })
        .collect()
}

/// Runs `compiled` once. With a prompt cache and the prompt-cache toggle on,
/// cached LLM results are substituted before scheduling and the run's
/// results are stored afterwards.
pub fn run_pipeline(
    compiled: &CompiledGraph,
    profile: &ProfileStats,
    cfg: &PipelineConfig,
    mut cache: Option<&mut PromptCache>,
) -> Result<RunReport, PipelineError> {
    if cfg.params.workers.len() != cfg.sim.workers.len() {
        return Err(PipelineError::WorkerMismatch(cfg.params.workers.len(), cfg.sim.workers.len()));
    }
    let t = cfg.toggles;
    let rewrites = Rewrites { prune: t.prune, cse: t.cse, prompt_cache: t.prompt_cache };
    let use_cache = if t.prompt_cache { cache.as_deref_mut() } else { None };
    let (opt, report) = optimize(compiled, use_cache, rewrites);
    let method = match cfg.method {
        Method::CacheAware if !t.cas => Method::Baseline(BaselineKind::OpWise),
        m => m,
    };
    let params = &cfg.params;
    let batch = opt.batch_size;
    let (soft, call_tree, sigma) = match method {
        Method::CacheAware => {
            let scheduled = schedule(&opt, profile, params)?;
            let call_tree = expand_to_calls(&scheduled.tree, &opt, profile)?;
            let sigma = expand_soft_schedule(&scheduled.soft, &call_tree, params, batch);
            (Some(scheduled.soft), call_tree, sigma)
        }
        Method::Baseline(kind) => {
            let op_tree = build_trt(&opt, profile, &BTreeMap::new())?;
            let call_tree = expand_to_calls(&op_tree, &opt, profile)?;
            let sigma = baseline_schedule(kind, &call_tree, params);
            (None, call_tree, sigma)
        }
    };
    let eval = evaluate_schedule(&call_tree, &sigma, params)?;
    let cost_calls = eval
        .calls
        .iter()
        .map(|c| {
            let info = call_tree.leaf_info(c.leaf);
            CallCost {
                op: info.op,
                query: info.query.unwrap_or(0),
                worker: c.worker,
                prefill: c.prefill,
                usage: c.usage,
                delay: c.delay,
                start: c.start,
                completion: c.completion,
            }
        })
        .collect();
    let order = as_pairs(&call_tree, &sigma);
    let policy = match method {
        Method::Baseline(BaselineKind::Random { seed }) => Policy::Random { seed },
        Method::Baseline(BaselineKind::Lspf) => Policy::LongestPrefixFirst,
        _ => Policy::Lists(order.clone()),
    };
    let mut sim_cfg = cfg.sim.clone();
    sim_cfg.proactive_kv = t.proactive_kv;
    let result = sim::run(&opt, profile, &policy, &sim_cfg)?;
    if t.prompt_cache {
        if let Some(cache) = cache {
            let values = execute_all(&opt, profile, sim_cfg.synth);
            record_outputs(&opt, &values, cache);
        }
    }
    Ok(RunReport {
        method: method.name().into(),
        toggles: t,
        optimize: report,
        llm_ops: opt.graph.llm_ids().len(),
        soft_schedule: soft,
        calls: CallOrder { workers: order },
        cost_total: eval.total,
        cost_calls,
        sim: result.metrics,
        outputs: result.outputs,
        call_tree,
    })
}

/// One configuration of an ablation study.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
pub struct Variant {
    pub name: &'static str,
    pub toggles: Toggles,
}

/// The full configuration followed by one variant per disabled
/// optimization. Plan pruning covers both dead-operator removal and common
/// subgraph elimination.
pub fn ablation_variants() -> [Variant; 5] {
    let full = Toggles::default();
    [
        Variant { name: "full", toggles: full },
        Variant { name: "no-proactive-kv", toggles: Toggles { proactive_kv: false, ..full } },
        Variant { name: "no-plan-pruning", toggles: Toggles { prune: false, cse: false, ..full } },
        Variant { name: "no-prompt-cache", toggles: Toggles { prompt_cache: false, ..full } },
        Variant { name: "no-cas", toggles: Toggles { cas: false, ..full } },
    ]
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct AblationRow {
    pub variant: String,
    pub iterations: u64,
    /// Change against the full configuration, in percent.
    pub delta: f64,
    pub hit_rate: f64,
    pub prefill_computed: u64,
    pub cost_total: f64,
}

/// Runs every variant on `measured` with a fresh prompt cache, first
/// warming the cache with a run over `warmup` when given.
pub fn run_ablation(
    warmup: Option<&CompiledGraph>,
    measured: &CompiledGraph,
    profile: &ProfileStats,
    base: &PipelineConfig,
    cache_capacity: usize,
) -> Result<Vec<AblationRow>, PipelineError> {
    let mut rows: Vec<AblationRow> = Vec::new();
    for v in ablation_variants() {
        let cfg = PipelineConfig { toggles: v.toggles, ..base.clone() };
        let mut cache = PromptCache::new(cache_capacity);
        if let Some(w) = warmup {
            run_pipeline(w, profile, &cfg, Some(&mut cache))?;
        }
        let r = run_pipeline(measured, profile, &cfg, Some(&mut cache))?;
        let full = rows.first().map_or(r.sim.iterations, |f| f.iterations) as f64;
        rows.push(AblationRow {
            variant: v.name.into(),
            iterations: r.sim.iterations,
            delta: if full > 0.0 { (r.sim.iterations as f64 / full - 1.0) * 100.0 } else { 0.0 },
            hit_rate: r.sim.hit_rate,
            prefill_computed: r.sim.prefill_computed,
            cost_total: r.cost_total,
        });
    }
    Ok(rows)
}
