//! Baseline schedulers, the exact minimum-makespan oracle and optimality
//! gap reports.

mod baseline;
mod gap;
mod oracle;
mod suite;

use thiserror::Error;

use crate::cost::CostError;
use crate::scheduler::ScheduleError;
use crate::trt::TrtError;

pub use baseline::{baseline_schedule, BaselineKind};
pub use gap::{optimality_gap, GapAggregate, GapReport, GapRow, GAP_EPSILON};
pub use oracle::{exact_min_token_steps, OracleLimits, OracleSolution, DEFAULT_ORACLE_LIMIT};
pub use suite::{run_gap_suite, schedule_calls, Method, SuiteConfig, SuiteInstance};

#[derive(Debug, Clone, PartialEq, Error)]
pub enum EvalError {
    #[error("instance has {calls} calls, above the oracle limit of {limit}; raise the limit to solve it")]
    OverLimit { calls: usize, limit: usize },
    #[error("optimal makespan must be positive, got {0}")]
    NonPositiveOptimum(f64),
    #[error("makespan {t} lies below the optimum {t_star}")]
    BelowOptimum { t: f64, t_star: f64 },
    #[error("gap suite has no instances")]
    EmptySuite,
    #[error("unknown method '{0}'")]
    UnknownMethod(alloc::string::String),
    #[error(transparent)]
    Cost(#[from] CostError),
    #[error(transparent)]
    Schedule(#[from] ScheduleError),
    #[error(transparent)]
    Tree(#[from] TrtError),
    #[error(transparent)]
    Generate(#[from] crate::gen::GenError),
}
