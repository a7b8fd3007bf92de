use alloc::collections::BTreeMap;
use alloc::format;
use alloc::string::String;
use alloc::vec;
use alloc::vec::Vec;
use core::fmt;
use core::str::FromStr;

use serde::{Deserialize, Serialize};

use super::{baseline_schedule, exact_min_token_steps, optimality_gap, BaselineKind, EvalError, GapReport, GapRow, OracleLimits};
use crate::cost::{evaluate_schedule, CostParams};
use crate::digest::mix64;
use crate::gen::{generate, Pattern, PromptShape, SynthSpec};
use crate::ir::{CompiledGraph, ProfileStats};
use crate::scheduler::{expand_soft_schedule, schedule};
use crate::trt::{build_trt, expand_to_calls, TemplatedRadixTree, TrtIndex};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum Method {
    CacheAware,
    Baseline(BaselineKind),
}

impl Method {
    /// The cache-aware scheduler followed by every baseline, Random seeded
    /// with `seed`.
    pub fn all(seed: u64) -> [Method; 5] {
        [
            Method::CacheAware,
            Method::Baseline(BaselineKind::QueryWise),
            Method::Baseline(BaselineKind::OpWise),
            Method::Baseline(BaselineKind::Random { seed }),
            Method::Baseline(BaselineKind::Lspf),
        ]
    }

    pub fn name(&self) -> &'static str {
        match self {
            Method::CacheAware => "cache-aware",
            Method::Baseline(b) => b.name(),
        }
    }
}

impl fmt::Display for Method {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for Method {
    type Err = EvalError;

    fn from_str(s: &str) -> Result<Self, EvalError> {
        match s {
            "cache-aware" | "helium" => Ok(Method::CacheAware),
            _ => s.parse().map(Method::Baseline),
        }
    }
}

/// Per-worker call orders of `method` on `call_tree`, the call-level
/// expansion of the operator tree of `compiled`.
pub fn schedule_calls(
    method: Method,
    compiled: &CompiledGraph,
    profile: &ProfileStats,
    params: &CostParams,
    call_tree: &TemplatedRadixTree,
) -> Result<Vec<Vec<TrtIndex>>, EvalError> {
    match method {
        Method::CacheAware => {
            let scheduled = schedule(compiled, profile, params)?;
            Ok(expand_soft_schedule(&scheduled.soft, call_tree, params, compiled.batch_size))
        }
        Method::Baseline(kind) => Ok(baseline_schedule(kind, call_tree, params)),
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SuiteInstance {
    pub name: String,
    pub spec: SynthSpec,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SuiteConfig {
    pub instances: Vec<SuiteInstance>,
    pub seeds: Vec<u64>,
    pub params: CostParams,
    pub limits: OracleLimits,
}

const MMLU: PromptShape = PromptShape::new(300, 0, 60, 30);
const TATQA: PromptShape = PromptShape::new(200, 600, 30, 40);
const AMAZON: PromptShape = PromptShape::new(150, 400, 0, 60);

impl SuiteConfig {
    /// Seven small dataset-shaped configurations, four seeds each, on one
    /// worker. Every instance has at most 12 calls.
    pub fn standard() -> Self {
        let cfg = |name: &str, pattern, agents, rounds, batch, shape, shared| {
            let mut spec = SynthSpec::new(pattern);
            spec.agents = agents;
            spec.rounds = rounds;
            spec.batch = batch;
            spec.shape = shape;
            spec.shared_context = shared;
            spec.jitter = 0.25;
            SuiteInstance { name: name.into(), spec }
        };
        Self {
            instances: vec![
                cfg("mapred-mmlu", Pattern::Mapred, 3, 1, 2, MMLU, false),
                cfg("mapred-tatqa", Pattern::Mapred, 2, 1, 4, TATQA, true),
                cfg("debate-mmlu", Pattern::Debate, 2, 2, 2, MMLU, false),
                cfg("debate-tatqa", Pattern::Debate, 3, 2, 2, TATQA, false),
                cfg("reflect-tatqa", Pattern::Reflect, 2, 1, 2, TATQA, false),
                cfg("iterative-amazon", Pattern::Iterative, 3, 1, 4, AMAZON, false),
                cfg("parallel-amazon", Pattern::Parallel, 2, 2, 2, AMAZON, false),
            ],
            seeds: vec![0, 1, 2, 3],
            params: CostParams::single(),
            limits: OracleLimits { max_calls: 12 },
        }
    }
}

/// Solves every instance exactly and reports the gap of every method.
pub fn run_gap_suite(config: &SuiteConfig) -> Result<GapReport, EvalError> {
    if config.instances.is_empty() || config.seeds.is_empty() {
        return Err(EvalError::EmptySuite);
    }
    let mut rows = Vec::new();
    for inst in &config.instances {
        for seed in &config.seeds {
            let workload = generate(&inst.spec, *seed)?;
            let compiled = workload.compile();
            let op_tree = build_trt(&compiled, &workload.profile, &BTreeMap::new())?;
            let call_tree = expand_to_calls(&op_tree, &compiled, &workload.profile)?;
            let optimum = exact_min_token_steps(&call_tree, &config.params, config.limits)?;
            let id = format!("{}-s{}", inst.name, seed);
            for method in Method::all(mix64(*seed)) {
                let sigma = schedule_calls(method, &compiled, &workload.profile, &config.params, &call_tree)?;
                let t = evaluate_schedule(&call_tree, &sigma, &config.params)?.total;
                rows.push(GapRow {
                    instance: id.clone(),
                    method: method.name().into(),
                    t,
                    t_star: optimum.makespan,
                    gap: optimality_gap(t, optimum.makespan)?,
                });
            }
        }
    }
    Ok(GapReport::from_rows(rows))
}
