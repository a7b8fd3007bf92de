//! Cache-aware scheduling: worker partitioning, the recursive tree-guided
//! scheduler producing soft schedules, and best-effort expansion of soft
//! schedules into per-call orders.

mod algo;
mod dispatch;
mod opcost;
mod partition;

use alloc::collections::BTreeMap;
use alloc::vec::Vec;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::cost::CostParams;
use crate::ir::{CompiledGraph, NodeId, ProfileError, ProfileStats};
use crate::trt::{build_trt, TemplatedRadixTree, TrtError};

pub use algo::{PendingBuffer, ScheduleStats};
pub use dispatch::{call_priority, dispatch_priority, expand_soft_schedule};
pub use partition::{partition_workflow, BALANCE_FACTOR};

#[derive(Debug, Clone, PartialEq, Eq, Error)]
pub enum ScheduleError {
    #[error("dependency cycle among LLM operators")]
    Cycle,
    #[error("released an incomplete group ({have} of {want} operators)")]
    IncompleteGroup { have: usize, want: usize },
    #[error("at least one worker is required")]
    NoWorkers,
    #[error("schedule does not cover operator {0}")]
    MissingOperator(NodeId),
    #[error(transparent)]
    Profile(#[from] ProfileError),
    #[error(transparent)]
    Tree(#[from] TrtError),
}

/// Per worker, an ordered list of inner sequences of LLM operators.
#[derive(Debug, Clone, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct SoftSchedule {
    pub workers: Vec<Vec<Vec<NodeId>>>,
}

impl SoftSchedule {
    /// All operators, worker by worker.
    pub fn ops(&self) -> Vec<NodeId> {
        self.workers.iter().flatten().flatten().copied().collect()
    }

    pub fn worker_of(&self, op: NodeId) -> Option<usize> {
        self.workers.iter().position(|w| w.iter().flatten().any(|o| *o == op))
    }

    /// Checks that every LLM operator of `compiled` appears exactly once.
    pub fn check_covers(&self, compiled: &CompiledGraph) -> Result<(), ScheduleError> {
        let ops = self.ops();
        for id in compiled.graph.llm_ids() {
            if ops.iter().filter(|o| **o == id).count() != 1 {
                return Err(ScheduleError::MissingOperator(id));
            }
        }
        Ok(())
    }
}

/// Result of [`schedule`].
#[derive(Debug, Clone)]
pub struct Scheduled {
    pub soft: SoftSchedule,
    pub assignment: BTreeMap<NodeId, usize>,
    /// Operator-level tree with the final worker assignment.
    pub tree: TemplatedRadixTree,
    /// Operators in emission order.
    pub emission: Vec<NodeId>,
    pub stats: ScheduleStats,
}

/// Partitions the operators, builds the tree and runs the recursive
/// scheduler until every operator is emitted.
pub fn schedule(compiled: &CompiledGraph, profile: &ProfileStats, params: &CostParams) -> Result<Scheduled, ScheduleError> {
    if params.workers.is_empty() {
        return Err(ScheduleError::NoWorkers);
    }
    profile.check_covers(&compiled.graph)?;
    let unassigned = build_trt(compiled, profile, &BTreeMap::new())?;
    let assignment = partition_workflow(&unassigned, params, compiled.batch_size);
    let tree = build_trt(compiled, profile, &assignment)?;
    let (soft, emission, stats) = schedule_tree(&tree, params, compiled.batch_size)?;
    Ok(Scheduled { soft, assignment, tree, emission, stats })
}

/// Runs the scheduler on an operator-level tree whose leaves already carry
/// worker assignments.
pub fn schedule_tree(
    tree: &TemplatedRadixTree,
    params: &CostParams,
    batch: usize,
) -> Result<(SoftSchedule, Vec<NodeId>, ScheduleStats), ScheduleError> {
    let mut st = algo::SchedulingTree::new(tree, params, batch);
    while !st.is_done() {
        if !st.pass(false)? && !st.is_done() {
            st.pass(true)?;
        }
    }
    let op = |l: &usize| tree.leaf_info(*l).op;
    let soft = SoftSchedule {
        workers: st.inner.iter().map(|w| w.iter().map(|seq| seq.iter().map(op).collect()).collect()).collect(),
    };
    let emission = st.emission.iter().map(op).collect();
    Ok((soft, emission, st.stats))
}
