mod common;

use std::collections::{BTreeMap, BTreeSet};

use common::{G, P};
use helios_core::ir::{bind_inputs, topo_sort, BindError, GraphError, LambdaFn, OpArgs, Operator, Role};
use helios_core::{NodeId, Token, Vocab, WorkflowGraph};
use proptest::prelude::*;

fn concat(id: u32, inputs: &[u32]) -> Operator {
    Operator::new(NodeId(id), OpArgs::Lambda { func: LambdaFn::Concat }, inputs.iter().map(|i| NodeId(*i)).collect())
}

/// Depth-first search with colors, independent of the engine's sort.
fn has_cycle(adj: &BTreeMap<u32, Vec<u32>>) -> bool {
    fn visit(n: u32, adj: &BTreeMap<u32, Vec<u32>>, color: &mut BTreeMap<u32, u8>) -> bool {
        match color.get(&n) {
            Some(1) => return true,
            Some(2) => return false,
            _ => {}
        }
        color.insert(n, 1);
        for m in &adj[&n] {
            if visit(*m, adj, color) {
                return true;
            }
        }
        color.insert(n, 2);
        false
    }
    let mut color = BTreeMap::new();
    adj.keys().any(|n| visit(*n, adj, &mut color))
}

/// `n` nodes: node 0 is a data source, every other node concatenates the
/// listed producers (falling back to node 0).
fn graph_from(n: u32, edges: &[(u32, u32)]) -> (Vec<Operator>, BTreeMap<u32, Vec<u32>>) {
    let mut inputs: BTreeMap<u32, Vec<u32>> = (0..n).map(|i| (i, vec![])).collect();
    for (from, to) in edges {
        let (from, to) = (from % n, to % n);
        if to != 0 && !inputs[&to].contains(&from) {
            inputs.get_mut(&to).unwrap().push(from);
        }
    }
    let mut adj: BTreeMap<u32, Vec<u32>> = (0..n).map(|i| (i, vec![])).collect();
    let mut ops = vec![Operator::new(NodeId(0), OpArgs::Data { values: vec![vec![Token(1)]] }, vec![])];
    for i in 1..n {
        let mut ins = inputs[&i].clone();
        if ins.is_empty() {
            ins.push(0);
        }
        for f in &ins {
            adj.get_mut(f).unwrap().push(i);
        }
        ops.push(concat(i, &ins));
    }
    (ops, adj)
}

proptest! {
    #[test]
    fn sort_succeeds_iff_acyclic(n in 2u32..9, edges in prop::collection::vec((0u32..9, 0u32..9), 0..16)) {
        let (ops, adj) = graph_from(n, &edges);
        let result = WorkflowGraph::new(ops, vec![NodeId(n - 1)]);
        prop_assert_eq!(result.is_ok(), !has_cycle(&adj));
        if let Err(e) = &result {
            prop_assert!(matches!(e, GraphError::Cycle(_)));
        }
        if let Ok(g) = result {
            let order = topo_sort(&g).unwrap();
            prop_assert_eq!(order.len(), n as usize);
            let pos: BTreeMap<NodeId, usize> = order.iter().enumerate().map(|(i, id)| (*id, i)).collect();
            for e in g.edges() {
                prop_assert!(pos[&e.from] < pos[&e.to]);
            }
            // Smallest ready id first: replay Kahn's algorithm with a sorted set.
            let mut indeg: BTreeMap<u32, usize> = (0..n).map(|i| (i, 0)).collect();
            for targets in adj.values() {
                for t in targets {
                    *indeg.get_mut(t).unwrap() += 1;
                }
            }
            let mut ready: BTreeSet<u32> = indeg.iter().filter(|(_, d)| **d == 0).map(|(k, _)| *k).collect();
            let mut expected = vec![];
            while let Some(x) = ready.pop_first() {
                expected.push(NodeId(x));
                for t in &adj[&x] {
                    let d = indeg.get_mut(t).unwrap();
                    *d -= 1;
                    if *d == 0 {
                        ready.insert(*t);
                    }
                }
            }
            prop_assert_eq!(order, expected);
        }
    }
}

#[test]
fn diamond_breaks_ties_by_id() {
    let ops = vec![
        Operator::new(NodeId(0), OpArgs::Data { values: vec![vec![Token(1)]] }, vec![]),
        concat(2, &[0]),
        concat(1, &[0]),
        concat(3, &[1, 2]),
    ];
    let g = WorkflowGraph::new(ops, vec![NodeId(3)]).unwrap();
    assert_eq!(topo_sort(&g).unwrap(), [0, 1, 2, 3].map(NodeId));
}

#[test]
fn revise_answer_workflow_binds_one_query() {
    let mut vocab = Vocab::new();
    let mut g = G::new();
    let q = g.input("q", 0, 1);
    let first = g.llm(vec![(Role::User, vec![P::R(q)])], 8.0);
    let revise = g.format(vec![P::T(vocab.tokenize("Revise answer to")), P::R(q), P::T(vocab.tokenize("given")), P::R(first)]);
    let second = g.llm(vec![(Role::User, vec![P::R(revise)])], 8.0);
    g.output(second);
    let graph = g.graph();
    assert_eq!(graph.len(), 5);
    assert_eq!(graph.edges().len(), 5);
    let batch = BTreeMap::from([("q".to_string(), vec![vocab.tokenize("How many inches is 1 meter?")])]);
    let (compiled, ignored) = bind_inputs(graph.clone(), batch).unwrap();
    assert_eq!(compiled.batch_size, 1);
    assert!(ignored.is_empty());
    assert_eq!(compiled.graph, graph, "binding leaves the graph untouched");
}

#[test]
fn binding_rejects_ragged_and_empty_batches() {
    let mut g = G::new();
    let a = g.input("a", 2, 3);
    let b = g.input("b", 2, 2);
    let f = g.format(vec![P::R(a), P::R(b)]);
    g.output(f);
    assert!(matches!(bind_inputs(g.graph(), g.batch.clone()), Err(BindError::Ragged { .. })));
    let empty = BTreeMap::from([("a".to_string(), vec![]), ("b".to_string(), vec![])]);
    assert_eq!(bind_inputs(g.graph(), empty), Err(BindError::EmptyBatch));
    let mut superset = g.batch.clone();
    superset.insert("b".into(), superset["a"].clone());
    superset.insert("extra".into(), vec![vec![]; 3]);
    let (c, ignored) = bind_inputs(g.graph(), superset).unwrap();
    assert_eq!((c.batch_size, ignored), (3, vec!["extra".to_string()]));
}

#[test]
fn structural_errors_are_named() {
    let out = |id: u32, src: u32| Operator::new(NodeId(id), OpArgs::Output, vec![NodeId(src)]);
    let data = Operator::new(NodeId(0), OpArgs::Data { values: vec![vec![]] }, vec![]);
    let e = WorkflowGraph::new(vec![data.clone()], vec![]).unwrap_err();
    assert_eq!(e.to_string(), "no outputs");
    let e = WorkflowGraph::new(vec![data.clone(), out(1, 7)], vec![NodeId(1)]).unwrap_err();
    assert!(e.to_string().starts_with("dangling edge"));
    let e = WorkflowGraph::new(vec![data.clone(), data.clone()], vec![NodeId(0)]).unwrap_err();
    assert_eq!(e, GraphError::DuplicateNode(NodeId(0)));
}

#[test]
fn tokenization_is_stable_within_a_run() {
    let mut v = Vocab::new();
    assert!(v.tokenize("").is_empty());
    let a = v.tokenize("a b a");
    assert_eq!(a, vec![Token(0), Token(1), Token(0)]);
    assert_eq!(v.tokenize("a b a"), a);
}
