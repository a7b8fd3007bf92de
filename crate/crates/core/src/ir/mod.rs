//! Symbolic workflow DAG, batch binding and graph utilities.

mod compile;
mod graph;
mod token;

pub use compile::{
    bind_inputs, fill_parts, materialize, ordered_messages, pick, BindError, CompiledGraph, OpProfile,
    ProfileError, ProfileStats,
};
pub use graph::{
    topo_sort, Edge, GraphError, LambdaFn, Message, NodeId, OpArgs, OpKind, Operator, Part, Role,
    WorkflowGraph,
};
pub use token::{Token, Vocab, SYNTHETIC_BIT};
