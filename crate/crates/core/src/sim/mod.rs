//! Iteration-level simulation of LLM workers with continuous batching,
//! chunked prefill and block-granular prefix KV caches.

mod engine;
mod kv;
mod pin;
mod synth;

use alloc::vec;
use alloc::vec::Vec;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::ir::{NodeId, ProfileError};
use crate::trt::TrtError;

pub use engine::{run, CallRecord, IterationRecord, SimMetrics, SimResult, WorkerMetrics};
pub use kv::{KvCache, DEFAULT_BLOCK_SIZE};
pub use pin::{pin_static_prefixes, static_prefixes, PIN_CAP_FRACTION};
pub use synth::{execute, execute_all, synth_output, SynthConfig};

pub const DEFAULT_PIN_THRESHOLD: usize = 200;

/// One simulated worker.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct WorkerSim {
    /// KV capacity in tokens.
    pub capacity: usize,
    pub block_size: usize,
    /// Tokens processed per iteration, decode tokens first, the rest on
    /// chunked prefill.
    pub budget: usize,
    /// Keep computed prompts in the cache for later calls. When off, only
    /// pinned prefixes are ever reused.
    #[serde(default = "enabled")]
    pub prefix_caching: bool,
}

fn enabled() -> bool {
    true
}

impl WorkerSim {
    /// Default block size and a budget of an eighth of the capacity.
    pub fn new(capacity: usize) -> Self {
        Self { capacity, block_size: DEFAULT_BLOCK_SIZE, budget: (capacity / 8).max(1), prefix_caching: true }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SimConfig {
    pub workers: Vec<WorkerSim>,
    /// Prefill and pin static prompt prefixes before the run.
    pub proactive_kv: bool,
    /// Minimum static prefix length worth pinning, in tokens.
    pub pin_threshold: usize,
    pub synth: SynthConfig,
}

impl SimConfig {
    pub fn uniform(workers: usize, capacity: usize) -> Self {
        Self {
            workers: vec![WorkerSim::new(capacity); workers],
            proactive_kv: true,
            pin_threshold: DEFAULT_PIN_THRESHOLD,
            synth: SynthConfig::default(),
        }
    }

    /// Sets every worker's per-iteration token budget.
    pub fn with_budget(mut self, budget: usize) -> Self {
        for w in &mut self.workers {
            w.budget = budget;
        }
        self
    }

    pub fn validate(&self) -> Result<(), SimError> {
        if self.workers.is_empty() {
            return Err(SimError::Config("at least one worker is required"));
        }
        for w in &self.workers {
            if w.block_size == 0 {
                return Err(SimError::Config("block size must be positive"));
            }
            if w.budget == 0 {
                return Err(SimError::Config("per-iteration budget must be positive"));
            }
        }
        Ok(())
    }
}

/// Order in which a worker admits its ready calls.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub enum Policy {
    /// Fixed per-worker priority lists of (operator, query); a worker admits
    /// the first ready calls of its list, skipping blocked ones.
    Lists(Vec<Vec<(NodeId, u32)>>),
    /// Calls are dealt round-robin to workers as they become ready; each
    /// worker admits the call with the longest cached prefix first.
    LongestPrefixFirst,
    /// Calls are dealt round-robin; each worker admits ready calls in random
    /// order.
    Random { seed: u64 },
}

#[derive(Debug, Clone, PartialEq, Eq, Error)]
pub enum SimError {
    #[error("invalid simulator configuration: {0}")]
    Config(&'static str),
    #[error("schedule does not list call {op}@{query}")]
    MissingCall { op: NodeId, query: u32 },
    #[error("schedule lists call {op}@{query} more than once")]
    DuplicateCall { op: NodeId, query: u32 },
    #[error("schedule lists unknown call {op}@{query}")]
    UnknownCall { op: NodeId, query: u32 },
    #[error("schedule has {found} worker lists but {expected} workers are configured")]
    WorkerCount { expected: usize, found: usize },
    #[error("simulation stalled at iteration {0}")]
    Stalled(u64),
    #[error(transparent)]
    Profile(#[from] ProfileError),
    #[error(transparent)]
    Tree(#[from] TrtError),
}
