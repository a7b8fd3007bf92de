mod common;

use std::collections::{BTreeMap, BTreeSet};

use common::{analysts, random_workflow, t, two_agents, G, P};
use helios_core::cost::{evaluate_schedule, CostParams};
use helios_core::ir::Role;
use helios_core::scheduler::{expand_soft_schedule, partition_workflow, schedule};
use helios_core::trt::{build_trt, expand_to_calls};
use helios_core::NodeId;
use proptest::prelude::*;

#[test]
fn shared_system_prompt_runs_back_to_back() {
    let (g, [a1, a2, a3]) = two_agents(1, 200, 20, 20.0);
    let s = schedule(&g.compile(), &g.profile, &CostParams::single()).unwrap();
    assert_eq!(s.emission, vec![a1, a2, a3]);
    assert_eq!(s.soft.workers, vec![vec![vec![a1], vec![a2, a3]]]);
}

#[test]
fn analyst_siblings_run_before_their_reports_at_any_batch() {
    for batch in [1, 2, 4] {
        let (g, [o1, o2, o3, o4, o5, o6]) = analysts(batch);
        let s = schedule(&g.compile(), &g.profile, &CostParams::single()).unwrap();
        assert_eq!(s.emission, vec![o1, o2, o4, o5, o3, o6], "batch {batch}");
    }
}

#[test]
fn a_chain_is_emitted_in_order() {
    let mut g = G::new();
    let q = g.input("q", 10, 2);
    let mut prev = q;
    let mut chain = vec![];
    for i in 0..5 {
        prev = g.llm(vec![(Role::System, vec![t(&format!("step-{i}"), 30)]), (Role::User, vec![P::R(prev)])], 10.0);
        chain.push(prev);
    }
    g.output(prev);
    let s = schedule(&g.compile(), &g.profile, &CostParams::single()).unwrap();
    assert_eq!(s.emission, chain);
    s.soft.check_covers(&g.compile()).unwrap();
}

#[test]
fn one_worker_takes_everything() {
    let (g, ops) = analysts(2);
    let compiled = g.compile();
    let tree = build_trt(&compiled, &g.profile, &BTreeMap::new()).unwrap();
    let part = partition_workflow(&tree, &CostParams::single(), 2);
    assert_eq!(part.len(), 6);
    assert!(ops.iter().all(|o| part[o] == 0));
}

#[test]
fn two_equal_agents_split_across_two_workers() {
    let (g, [o1, o2, o3, o4, o5, o6]) = analysts(4);
    let compiled = g.compile();
    let tree = build_trt(&compiled, &g.profile, &BTreeMap::new()).unwrap();
    let part = partition_workflow(&tree, &CostParams::uniform(2, 8192.0), 4);
    // Each agent's subtree stays on one worker, the two agents do not share one.
    assert_eq!(part[&o1], part[&o2]);
    assert_eq!(part[&o1], part[&o3]);
    assert_eq!(part[&o4], part[&o5]);
    assert_eq!(part[&o4], part[&o6]);
    assert_ne!(part[&o1], part[&o4]);
}

#[test]
fn no_workers_is_an_error() {
    let (g, _) = two_agents(1, 10, 10, 5.0);
    assert!(schedule(&g.compile(), &g.profile, &CostParams { workers: vec![] }).is_err());
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(64))]

    #[test]
    fn schedules_cover_and_respect_dependencies(seed in 0u64..10_000, n in 2usize..16, batch in 1usize..4, workers in 1usize..4) {
        let g = random_workflow(seed, n, batch);
        let compiled = g.compile();
        let params = CostParams::uniform(workers, 4096.0);
        let s = schedule(&compiled, &g.profile, &params).unwrap();
        s.soft.check_covers(&compiled).unwrap();
        prop_assert_eq!(s.soft.workers.len(), workers);
        let llm: BTreeSet<NodeId> = compiled.graph.llm_ids().into_iter().collect();
        prop_assert_eq!(s.emission.iter().copied().collect::<BTreeSet<_>>(), llm);
        prop_assert_eq!(s.emission.len(), s.soft.ops().len());
        for op in &s.emission {
            prop_assert_eq!(s.soft.worker_of(*op), Some(s.assignment[op]));
        }
        // Emission is a topological order of the LLM dependencies.
        let pos: BTreeMap<NodeId, usize> = s.emission.iter().enumerate().map(|(i, o)| (*o, i)).collect();
        for (from, to) in s.tree.dep_edges() {
            prop_assert!(pos[&s.tree.leaf_info(from).op] < pos[&s.tree.leaf_info(to).op]);
        }
        // The expanded call order is a feasible schedule of every call.
        let calls = expand_to_calls(&s.tree, &compiled, &g.profile).unwrap();
        let sigma = expand_soft_schedule(&s.soft, &calls, &params, compiled.batch_size);
        let eval = evaluate_schedule(&calls, &sigma, &params).unwrap();
        prop_assert_eq!(eval.calls.len(), calls.leaves().len());
    }

    #[test]
    fn scheduling_work_does_not_grow_with_the_batch(seed in 0u64..10_000, n in 2usize..16) {
        let small = random_workflow(seed, n, 1);
        let large = random_workflow(seed, n, 64);
        let params = CostParams::single();
        let a = schedule(&small.compile(), &small.profile, &params).unwrap();
        let b = schedule(&large.compile(), &large.profile, &params).unwrap();
        prop_assert_eq!(a.tree.nodes().len(), b.tree.nodes().len());
        // Batch size changes cost estimates, not the amount of work: steps
        // are bounded by the operator count alone.
        let ops = a.tree.leaves().len() as u64;
        let bound = 4 * (ops + 1) * (ops + 1) + 4 * a.tree.nodes().len() as u64;
        prop_assert!(a.stats.steps <= bound);
        prop_assert!(b.stats.steps <= bound);
    }
}
