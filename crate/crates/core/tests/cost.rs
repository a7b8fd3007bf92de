mod common;

use std::collections::BTreeMap;

use common::{random_workflow, two_agents};
use helios_core::cost::{evaluate_schedule, CostError, CostParams, WorkerParams};
use helios_core::trt::{build_trt, expand_to_calls, template_weight, Elem, LeafInfo, TemplateBuilder, TemplatedRadixTree, TrtIndex};
use helios_core::{NodeId, Token};
use proptest::prelude::*;

fn one_worker(alpha: f64, capacity: f64) -> CostParams {
    CostParams { workers: vec![WorkerParams { capacity, alpha }] }
}

#[test]
fn single_call_costs_prefill_times_length_plus_triangle() {
    let mut tree = TemplatedRadixTree::new();
    let tpl: Vec<Elem> = (0..10).map(|i| Elem::Tok(Token(i))).collect();
    let l = tree.add(&tpl, LeafInfo { op: NodeId(1), worker: 0, query: None, len_out: 2.0 }, &[]).unwrap();
    let eval = evaluate_schedule(&tree, &[vec![l]], &one_worker(1.0, 1.0)).unwrap();
    // 2 * 10 + 2 * 3 / 2
    assert_eq!(eval.total, 23.0);
    assert_eq!(eval.calls[0].prefill, 10.0);
    assert_eq!(eval.calls[0].delay, 2.0);
}

#[test]
fn repeated_call_has_no_prefill() {
    let mut tree = TemplatedRadixTree::new();
    let tpl: Vec<Elem> = (0..10).map(|i| Elem::Tok(Token(i))).collect();
    let info = |op| LeafInfo { op: NodeId(op), worker: 0, query: None, len_out: 3.0 };
    let a = tree.add(&tpl, info(1), &[]).unwrap();
    let b = tree.add(&tpl, info(2), &[]).unwrap();
    let eval = evaluate_schedule(&tree, &[vec![a, b]], &one_worker(1.0, 1.0)).unwrap();
    assert_eq!(eval.call(b).unwrap().prefill, 0.0);
    assert_eq!(eval.call(b).unwrap().usage, 6.0);
    assert_eq!(eval.total, 36.0 + 6.0);
}

#[test]
fn dependency_waits_for_completion_plus_delay() {
    let mut tree = TemplatedRadixTree::new();
    let tpl = |s: u32| -> Vec<Elem> { (0..4).map(|i| Elem::Tok(Token(s * 10 + i))).collect() };
    let info = |op| LeafInfo { op: NodeId(op), worker: 0, query: None, len_out: 5.0 };
    let a = tree.add(&tpl(1), info(1), &[]).unwrap();
    let b = tree.add(&tpl(2), info(2), &[a]).unwrap();
    let params = CostParams::uniform(2, 100.0);
    let eval = evaluate_schedule(&tree, &[vec![a], vec![b]], &params).unwrap();
    let ca = eval.call(a).unwrap();
    // alpha * M * lenOut = lenOut when alpha = 1 / M.
    assert_eq!(ca.delay, 5.0);
    assert_eq!(eval.call(b).unwrap().start, ca.completion + 5.0);
}

#[test]
fn reusing_the_shared_system_prompt_first_is_cheaper() {
    let (g, [a1, a2, a3]) = two_agents(1, 200, 20, 20.0);
    let compiled = g.compile();
    let tree = build_trt(&compiled, &g.profile, &BTreeMap::new()).unwrap();
    let [l1, l2, l3] = [a1, a2, a3].map(|op| tree.leaf_of(op, None).unwrap());
    let params = CostParams::single();
    let t123 = evaluate_schedule(&tree, &[vec![l1, l2, l3]], &params).unwrap().total;
    let t213 = evaluate_schedule(&tree, &[vec![l2, l1, l3]], &params).unwrap().total;
    assert!(t123 < t213, "{t123} vs {t213}");
}

#[test]
fn infeasible_orders_are_rejected() {
    let (g, [a1, _, a3]) = two_agents(1, 200, 20, 20.0);
    let compiled = g.compile();
    let tree = build_trt(&compiled, &g.profile, &BTreeMap::new()).unwrap();
    let [l1, l3] = [a1, a3].map(|op| tree.leaf_of(op, None).unwrap());
    let l2 = tree.leaves().iter().copied().find(|l| ![l1, l3].contains(l)).unwrap();
    let err = evaluate_schedule(&tree, &[vec![l3, l1, l2]], &CostParams::single()).unwrap_err();
    assert_eq!(err, CostError::Infeasible { from: l1, to: l3 });
    let err = evaluate_schedule(&tree, &[vec![l1, l2]], &CostParams::single()).unwrap_err();
    assert_eq!(err, CostError::Missing(l3));
    let err = evaluate_schedule(&tree, &[vec![l1, l2, l3, l1]], &CostParams::single()).unwrap_err();
    assert_eq!(err, CostError::Duplicate(l1));
    let err = evaluate_schedule(&tree, &[vec![l1, l2, l3]], &CostParams::uniform(2, 10.0)).unwrap_err();
    assert_eq!(err, CostError::WorkerCount { expected: 2, found: 1 });
    let root = TemplatedRadixTree::ROOT;
    let err = evaluate_schedule(&tree, &[vec![root, l1, l2, l3]], &CostParams::single()).unwrap_err();
    assert_eq!(err, CostError::NotALeaf(root));
}

/// Independent evaluator: prefill from the common prefix of consecutive
/// prompts, start at `max(worker clock, dependency completion + delay)`,
/// resolved by repeated sweeps. `None` when the schedule deadlocks.
fn oracle(
    prompts: &BTreeMap<TrtIndex, Vec<Elem>>,
    info: &BTreeMap<TrtIndex, LeafInfo>,
    preds: &BTreeMap<TrtIndex, Vec<TrtIndex>>,
    sigma: &[Vec<TrtIndex>],
    params: &CostParams,
) -> Option<f64> {
    let mut done: BTreeMap<TrtIndex, f64> = BTreeMap::new();
    let mut clocks = vec![0.0f64; sigma.len()];
    let mut next = vec![0usize; sigma.len()];
    loop {
        let mut moved = false;
        for (w, seq) in sigma.iter().enumerate() {
            while let Some(&l) = seq.get(next[w]) {
                let ps = preds.get(&l).cloned().unwrap_or_default();
                if ps.iter().any(|p| !done.contains_key(p)) {
                    break;
                }
                let wp = params.workers[w];
                let ready = ps
                    .iter()
                    .map(|p| {
                        let pw = sigma.iter().position(|s| s.contains(p)).unwrap();
                        done[p] + params.workers[pw].alpha * params.workers[pw].capacity * info[p].len_out
                    })
                    .fold(0.0, f64::max);
                let prompt = &prompts[&l];
                let shared = match next[w].checked_sub(1) {
                    None => 0.0,
                    Some(i) => {
                        let prev = &prompts[&seq[i]];
                        let n = prev.iter().zip(prompt).take_while(|(a, b)| a == b).count();
                        template_weight(&prompt[..n])
                    }
                };
                let prefill = template_weight(prompt) - shared;
                let n = info[&l].len_out;
                let start = clocks[w].max(ready);
                clocks[w] = start + wp.alpha * (n * prefill + n * (n + 1.0) / 2.0);
                done.insert(l, clocks[w]);
                next[w] += 1;
                moved = true;
            }
        }
        if next.iter().zip(sigma).all(|(i, s)| *i == s.len()) {
            return Some(clocks.into_iter().fold(0.0, f64::max));
        }
        if !moved {
            return None;
        }
    }
}

fn tree_parts(
    seed: u64,
    n: usize,
    batch: usize,
) -> (TemplatedRadixTree, BTreeMap<TrtIndex, Vec<Elem>>, BTreeMap<TrtIndex, LeafInfo>, BTreeMap<TrtIndex, Vec<TrtIndex>>) {
    let g = random_workflow(seed, n, batch);
    let compiled = g.compile();
    let builder = TemplateBuilder::new(&compiled, &g.profile);
    let ops = build_trt(&compiled, &g.profile, &BTreeMap::new()).unwrap();
    let tree = expand_to_calls(&ops, &compiled, &g.profile).unwrap();
    let mut prompts = BTreeMap::new();
    let mut info = BTreeMap::new();
    let mut preds = BTreeMap::new();
    for l in tree.leaves() {
        let i = *tree.leaf_info(*l);
        prompts.insert(*l, builder.prompt(i.op, i.query).unwrap());
        info.insert(*l, i);
        preds.insert(*l, tree.preds(*l).to_vec());
    }
    (tree, prompts, info, preds)
}

fn deal(leaves: &[TrtIndex], keys: &[u64], workers: usize) -> Vec<Vec<TrtIndex>> {
    let mut order: Vec<(u64, TrtIndex)> = keys.iter().copied().zip(leaves.iter().copied()).collect();
    order.sort();
    let mut sigma = vec![vec![]; workers];
    for (i, (k, l)) in order.into_iter().enumerate() {
        sigma[(k as usize + i) % workers].push(l);
    }
    sigma
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(96))]

    #[test]
    fn evaluation_matches_the_independent_oracle(
        seed in 0u64..5_000,
        n in 2usize..10,
        batch in 1usize..3,
        workers in 1usize..4,
        keys in prop::collection::vec(any::<u64>(), 64),
    ) {
        let (tree, prompts, info, preds) = tree_parts(seed, n, batch);
        prop_assume!(!tree.leaves().is_empty());
        let params = CostParams::uniform(workers, 64.0);
        let sigma = deal(tree.leaves(), &keys[..tree.leaves().len()], workers);
        let expected = oracle(&prompts, &info, &preds, &sigma, &params);
        match (evaluate_schedule(&tree, &sigma, &params), expected) {
            (Ok(eval), Some(t)) => prop_assert!((eval.total - t).abs() <= 1e-9 * t.max(1.0), "{} vs {}", eval.total, t),
            (Err(CostError::Infeasible { .. }), None) => {}
            (got, want) => prop_assert!(false, "evaluator {:?} but oracle {:?}", got.map(|e| e.total), want),
        }
    }

    #[test]
    fn scaling_alpha_scales_the_makespan(seed in 0u64..5_000, n in 2usize..10, k in 0.1f64..10.0) {
        let (tree, ..) = tree_parts(seed, n, 2);
        prop_assume!(!tree.leaves().is_empty());
        let params = CostParams::uniform(2, 512.0);
        let sigma = deal(tree.leaves(), &vec![0; tree.leaves().len()], 2);
        let base = evaluate_schedule(&tree, &sigma, &params).unwrap().total;
        let scaled = evaluate_schedule(&tree, &sigma, &params.scaled(k)).unwrap().total;
        prop_assert!((scaled - k * base).abs() <= 1e-9 * scaled.max(1.0));
    }

    #[test]
    fn appending_a_call_never_shortens_the_makespan(seed in 0u64..5_000, n in 2usize..10) {
        // Feasible prefixes of a topological order: each longer prefix costs at least as much.
        let (tree, ..) = tree_parts(seed, n, 2);
        let leaves = tree.leaves().to_vec();
        let mut prev = 0.0;
        for k in 1..=leaves.len() {
            let mut sub = TemplatedRadixTree::new();
            let mut map = BTreeMap::new();
            for l in &leaves[..k] {
                let deps: Vec<_> = tree.preds(*l).iter().map(|p| map[p]).collect();
                let idx = sub.add(&tree.path_template(*l), *tree.leaf_info(*l), &deps).unwrap();
                map.insert(*l, idx);
            }
            let sigma = vec![sub.leaves().to_vec()];
            let t = evaluate_schedule(&sub, &sigma, &CostParams::single()).unwrap().total;
            prop_assert!(t >= prev);
            prev = t;
        }
    }

    #[test]
    fn longer_outputs_never_shorten_the_makespan(seed in 0u64..5_000, n in 2usize..10, bump in 1.0f64..20.0, which in any::<prop::sample::Index>()) {
        let (tree, ..) = tree_parts(seed, n, 1);
        prop_assume!(!tree.leaves().is_empty());
        let target = *which.get(tree.leaves());
        let mut bumped = TemplatedRadixTree::new();
        for l in tree.leaves() {
            let mut info = *tree.leaf_info(*l);
            if *l == target {
                info.len_out += bump;
            }
            bumped.add(&tree.path_template(*l), info, tree.preds(*l)).unwrap();
        }
        let sigma = vec![tree.leaves().to_vec()];
        let params = CostParams::single();
        let before = evaluate_schedule(&tree, &sigma, &params).unwrap().total;
        let after = evaluate_schedule(&bumped, &sigma, &params).unwrap().total;
        prop_assert!(after >= before);
    }
}
