mod common;

use std::collections::BTreeSet;

use common::{random_workflow, t, G, P};
use helios_core::ir::{OpArgs, Role};
use helios_core::optimizer::{
    eliminate_common_subgraphs, optimize, prune, record_outputs, structural_signatures, substitute_cache,
    PromptCache, Rewrites,
};
use helios_core::sim::{execute, execute_all, SynthConfig};
use helios_core::{NodeId, OpKind, Vocab, WorkflowGraph};
use proptest::prelude::*;

/// Nodes reachable backwards from the outputs, by breadth-first search.
fn reachable(g: &WorkflowGraph) -> BTreeSet<NodeId> {
    let mut seen: BTreeSet<NodeId> = g.outputs().iter().copied().collect();
    let mut queue: std::collections::VecDeque<NodeId> = seen.iter().copied().collect();
    while let Some(n) = queue.pop_front() {
        for i in &g.node(n).unwrap().inputs {
            if seen.insert(*i) {
                queue.push_back(*i);
            }
        }
    }
    seen
}

fn ids(g: &WorkflowGraph) -> BTreeSet<NodeId> {
    g.node_ids().collect()
}

#[test]
fn pruning_drops_a_speculative_branch() {
    let mut g = G::new();
    let q = g.input("q", 4, 2);
    let answer = g.llm(vec![(Role::User, vec![P::R(q)])], 5.0);
    let speculative = g.llm(vec![(Role::User, vec![t("guess", 3), P::R(q)])], 5.0);
    g.output(answer);
    let (pruned, removed) = prune(g.graph());
    assert_eq!(removed, 1);
    assert!(!pruned.contains(speculative));
    assert!(pruned.contains(q) && pruned.contains(answer));
}

#[test]
fn pruning_ten_nodes_with_three_dead() {
    let mut g = G::new();
    let q = g.input("q", 4, 1);
    let a = g.format(vec![t("a", 2), P::R(q)]);
    let b = g.llm(vec![(Role::User, vec![P::R(a)])], 3.0);
    let c = g.format(vec![P::R(a), P::R(b)]);
    let d = g.llm(vec![(Role::User, vec![P::R(c)])], 3.0);
    let dead1 = g.format(vec![t("x", 2), P::R(b)]);
    let dead2 = g.llm(vec![(Role::User, vec![P::R(dead1)])], 3.0);
    let dead3 = g.format(vec![P::R(dead2), P::R(d)]);
    let e = g.format(vec![P::R(d)]);
    g.output(e);
    let graph = g.graph();
    assert_eq!(graph.len(), 10);
    let (pruned, removed) = prune(graph.clone());
    assert_eq!((pruned.len(), removed), (7, 3));
    assert_eq!(ids(&pruned), reachable(&graph));
    for dead in [dead1, dead2, dead3] {
        assert!(!pruned.contains(dead));
    }
    let (again, n) = prune(pruned.clone());
    assert_eq!((again, n), (pruned, 0));
}

#[test]
fn identical_formats_merge_into_the_lowest_id() {
    let mut g = G::new();
    let q = g.input("q", 4, 2);
    let f1 = g.format(vec![t("ctx", 3), P::R(q)]);
    let f2 = g.format(vec![t("ctx", 3), P::R(q)]);
    let a = g.llm(vec![(Role::System, vec![t("one", 5)]), (Role::User, vec![P::R(f1)])], 4.0);
    let b = g.llm(vec![(Role::System, vec![t("two", 5)]), (Role::User, vec![P::R(f2)])], 4.0);
    g.output(a);
    g.output(b);
    let (merged, n) = eliminate_common_subgraphs(g.graph());
    assert_eq!(n, 1);
    assert!(merged.contains(f1) && !merged.contains(f2));
    assert_eq!(merged.node(a).unwrap().inputs, vec![f1]);
    assert_eq!(merged.node(b).unwrap().inputs, vec![f1]);
    let distinct = g.graph();
    let (_, none) = eliminate_common_subgraphs(merged.clone());
    assert_eq!(none, 0);
    assert_eq!(eliminate_common_subgraphs(merged.clone()).0, merged);
    assert_ne!(distinct, merged);
}

#[test]
fn duplicated_subchain_merges_and_preserves_outputs() {
    let mut g = G::new();
    let q = g.input("q", 6, 3);
    let mut tails = vec![];
    for _ in 0..2 {
        let f = g.format(vec![t("prep", 4), P::R(q)]);
        let l = g.llm(vec![(Role::System, vec![t("solver", 30)]), (Role::User, vec![P::R(f)])], 6.0);
        tails.push(g.format(vec![t("answer", 2), P::R(l)]));
    }
    let judge = g.llm(vec![(Role::User, vec![P::R(tails[0]), P::R(tails[1])])], 4.0);
    g.output(judge);
    let compiled = g.compile();
    let (opt, report) = optimize(&compiled, None, Rewrites::default());
    assert_eq!(report.merged, 3);
    assert_eq!(opt.graph.len(), compiled.graph.len() - 3);
    let cfg = SynthConfig::default();
    assert_eq!(execute(&opt, &g.profile, cfg), execute(&compiled, &g.profile, cfg));
}

#[test]
fn warm_resubmission_fetches_every_deterministic_call() {
    let (g, _) = common::analysts(3);
    let compiled = g.compile();
    let mut cache = PromptCache::default();
    assert_eq!(substitute_cache(&compiled, &mut cache).1, 0, "empty cache substitutes nothing");
    assert_eq!(substitute_cache(&compiled, &mut cache).0, compiled);
    record_outputs(&compiled, &execute_all(&compiled, &g.profile, SynthConfig::default()), &mut cache);
    let (opt, report) = optimize(&compiled, Some(&mut cache), Rewrites::default());
    assert_eq!(report.substituted, 6);
    assert!(opt.graph.llm_ids().is_empty());
    assert!(opt.graph.nodes().all(|o| matches!(o.kind(), OpKind::CacheFetch | OpKind::Output)));
    let cfg = SynthConfig::default();
    assert_eq!(execute(&opt, &g.profile, cfg), execute(&compiled, &g.profile, cfg));
}

#[test]
fn nondeterministic_calls_are_never_substituted() {
    let mut g = G::new();
    let q = g.input("q", 4, 2);
    let a = g.llm_with(vec![(Role::User, vec![P::R(q)])], 5.0, false);
    g.output(a);
    let compiled = g.compile();
    let mut cache = PromptCache::default();
    record_outputs(&compiled, &execute_all(&compiled, &g.profile, SynthConfig::default()), &mut cache);
    assert!(cache.is_empty());
    assert_eq!(substitute_cache(&compiled, &mut cache).1, 0);
}

#[test]
fn cached_analysts_collapse_to_fetches() {
    // Four analysts; the warm-up batch shares the documents of the first two.
    let build = |day: u64| {
        let mut g = G::new();
        let ticker = g.input("ticker", 6, 2);
        let mut reports = vec![];
        for (i, name) in ["fundamentals", "social", "news", "market"].iter().enumerate() {
            let doc = g.input(name, 50, 2);
            if i >= 2 {
                let fresh = (0..2u64).map(|q| Vocab::synthetic_entry(name, 100 * day + q, 50)).collect();
                g.batch.insert(name.to_string(), fresh);
            }
            reports.push(g.llm(vec![(Role::System, vec![t(name, 200)]), (Role::User, vec![P::R(ticker), P::R(doc)])], 20.0));
        }
        let mut user = vec![t("reports", 2)];
        user.extend(reports.iter().map(|r| P::R(*r)));
        let manager = g.llm(vec![(Role::System, vec![t("manager", 100)]), (Role::User, user)], 20.0);
        g.output(manager);
        (g, reports)
    };
    let (warm, _) = build(0);
    let (today, reports) = build(1);
    let mut cache = PromptCache::default();
    let warm_c = warm.compile();
    record_outputs(&warm_c, &execute_all(&warm_c, &warm.profile, SynthConfig::default()), &mut cache);
    let compiled = today.compile();
    let (opt, report) = optimize(&compiled, Some(&mut cache), Rewrites::default());
    assert_eq!(report.substituted, 2);
    for (i, r) in reports.iter().enumerate() {
        let kind = opt.graph.node(*r).unwrap().kind();
        assert_eq!(kind, if i < 2 { OpKind::CacheFetch } else { OpKind::Llm }, "analyst {i}");
    }
    // The documents feeding only fetched analysts are pruned afterwards.
    let names: BTreeSet<&str> = opt.graph.input_names();
    assert_eq!(names, BTreeSet::from(["market", "news", "ticker"]));
    let cfg = SynthConfig::default();
    assert_eq!(execute(&opt, &today.profile, cfg), execute(&compiled, &today.profile, cfg));
}

#[test]
fn over_capacity_insert_evicts_first_key() {
    use helios_core::digest::Signature;
    let n = 5;
    let mut cache = PromptCache::new(n);
    for k in 0..=n as u64 {
        cache.insert(Signature(k), vec![]);
    }
    assert!(!cache.contains(Signature(0)));
    assert!((1..=n as u64).all(|k| cache.contains(Signature(k))));
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(64))]

    #[test]
    fn pruning_keeps_exactly_the_output_ancestors(seed in any::<u64>(), n in 3usize..14) {
        let g = random_workflow(seed, n, 2).graph();
        let (pruned, _) = prune(g.clone());
        prop_assert_eq!(ids(&pruned), reachable(&g));
    }

    #[test]
    fn rewrites_preserve_outputs_and_are_idempotent(seed in any::<u64>(), n in 3usize..14, batch in 1usize..4) {
        let g = random_workflow(seed, n, batch);
        let compiled = g.compile();
        let cfg = SynthConfig::default();
        let reference = execute(&compiled, &g.profile, cfg);
        let (once, _) = optimize(&compiled, None, Rewrites::default());
        prop_assert_eq!(&execute(&once, &g.profile, cfg), &reference);
        let (twice, _) = optimize(&once, None, Rewrites::default());
        prop_assert_eq!(&twice.graph, &once.graph);
        let sigs = structural_signatures(&once.graph);
        let distinct: BTreeSet<_> = sigs.values().collect();
        prop_assert_eq!(distinct.len(), sigs.len());

        let mut cache = PromptCache::default();
        record_outputs(&compiled, &execute_all(&compiled, &g.profile, cfg), &mut cache);
        let (fetched, _) = optimize(&compiled, Some(&mut cache), Rewrites::default());
        prop_assert_eq!(&execute(&fetched, &g.profile, cfg), &reference);
        let live_calls = fetched.graph.nodes().filter(|o| matches!(o.args, OpArgs::Llm { .. })).count();
        prop_assert_eq!(live_calls, 0);
    }
}
