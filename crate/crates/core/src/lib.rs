//! Core engine for optimizing, scheduling and simulating batch agentic LLM
//! workflows.
//!
//! The crate is `no_std` (it needs `alloc`) and performs no IO. File formats,
//! the command-line driver and wall-clock measurements live in the `helios`
//! companion crate.
//!
//! Pipeline overview:
//!
//! 1. [`ir`] holds the symbolic workflow DAG, batch binding and graph utilities.
//! 2. [`optimizer`] prunes dead operators, merges common subgraphs and swaps
//!    prompt-cache hits for `CacheFetch` nodes.
//! 3. [`trt`] builds the templated radix tree over prompt templates.
//! 4. [`cost`] evaluates call-level schedules in token steps.
//! 5. [`scheduler`] produces the cache-aware soft schedule.
//! 6. [`eval`] hosts the baseline schedulers, the exact oracle and gap reports.
//! 7. [`sim`] runs compiled graphs on simulated engines with prefix KV caches.
//! 8. [`gen`] generates synthetic multi-agent workloads.
//! 9. [`pipeline`] chains all of the above into single runs and ablations.
#![cfg_attr(not(test), no_std)]

extern crate alloc;

pub mod cost;
pub mod digest;
pub mod eval;
pub mod gen;
pub mod ir;
pub mod optimizer;
pub mod pipeline;
pub mod scheduler;
pub mod sim;
pub mod trt;

pub use ir::{CompiledGraph, NodeId, OpKind, Operator, ProfileStats, Token, Vocab, WorkflowGraph};
