//! Logical plan rewrites: operator pruning, common subgraph elimination and
//! prompt-cache substitution.

mod cache;
mod rewrite;
mod signature;

pub use cache::{PromptCache, DEFAULT_PROMPT_CACHE_CAPACITY};
pub use rewrite::{
    eliminate_common_subgraphs, optimize, prune, record_outputs, substitute_cache, OptimizeReport,
    Rewrites,
};
pub use signature::{structural_signatures, value_signatures};
