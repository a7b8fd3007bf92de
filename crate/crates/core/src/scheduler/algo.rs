//! Recursive cache-aware scheduling over the operator-level tree.

use alloc::collections::{BTreeMap, BTreeSet};
use alloc::vec;
use alloc::vec::Vec;

use serde::Serialize;

use crate::cost::CostParams;
use crate::trt::{TemplatedRadixTree, TrtIndex};

use super::opcost::OpCost;
use super::ScheduleError;

/// Work counters of one scheduling run.
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize)]
pub struct ScheduleStats {
    /// Elementary steps: sibling-pair inspections during child selection
    /// plus per-node state refreshes.
    pub steps: u64,
    pub passes: u32,
    pub forced: u32,
}

/// Identity of a static prompt prefix: the tree node where it ends and the
/// offset inside that node's segment.
type GroupKey = (usize, TrtIndex, usize);

/// Operators collected per static-prefix group until the group is complete.
#[derive(Debug, Default)]
pub struct PendingBuffer {
    members: BTreeMap<GroupKey, usize>,
    collected: BTreeMap<GroupKey, Vec<TrtIndex>>,
}

impl PendingBuffer {
    pub fn register(&mut self, key: GroupKey) {
        *self.members.entry(key).or_insert(0) += 1;
    }

    /// Adds an emitted operator; returns the finished inner sequence when
    /// this completes its group.
    pub fn push(&mut self, key: GroupKey, leaf: TrtIndex) -> Option<Vec<TrtIndex>> {
        let list = self.collected.entry(key).or_default();
        list.push(leaf);
        if list.len() == self.members[&key] {
            self.release(key).ok()
        } else {
            None
        }
    }

    pub fn release(&mut self, key: GroupKey) -> Result<Vec<TrtIndex>, ScheduleError> {
        let have = self.collected.get(&key).map_or(0, Vec::len);
        let want = self.members.get(&key).copied().unwrap_or(0);
        if have == 0 || have != want {
            return Err(ScheduleError::IncompleteGroup { have, want });
        }
        Ok(self.collected.remove(&key).expect("checked non-empty"))
    }

    pub fn is_empty(&self) -> bool {
        self.collected.is_empty()
    }
}

pub(crate) struct SchedulingTree<'a> {
    tree: &'a TemplatedRadixTree,
    cost: OpCost<'a>,
    workers: usize,
    live: Vec<Vec<TrtIndex>>,
    remaining: Vec<usize>,
    emitted: Vec<bool>,
    emitted_at: Vec<usize>,
    /// Critical path in token steps from the start of a leaf to the end of
    /// its longest dependent chain.
    height: Vec<f64>,
    agg_depth: Vec<f64>,
    /// Per node and worker: minimum dependency-ready step over unemitted
    /// leaves whose dependencies are all emitted.
    min_ready: Vec<Vec<f64>>,
    ready: Vec<f64>,
    unmet: Vec<usize>,
    /// Unresolved dependency edges between sibling subtrees, per parent.
    sibling_deps: BTreeMap<TrtIndex, BTreeMap<(TrtIndex, TrtIndex), usize>>,
    clocks: Vec<f64>,
    last: Vec<Option<TrtIndex>>,
    release: Vec<f64>,
    group: Vec<Option<GroupKey>>,
    buffer: PendingBuffer,
    pub(crate) emission: Vec<TrtIndex>,
    pub(crate) inner: Vec<Vec<Vec<TrtIndex>>>,
    pub(crate) stats: ScheduleStats,
    target: Option<TrtIndex>,
}

impl<'a> SchedulingTree<'a> {
    pub fn new(tree: &'a TemplatedRadixTree, params: &'a CostParams, batch: usize) -> Self {
        let n = tree.nodes().len();
        let workers = params.workers.len();
        let mut s = Self {
            tree,
            cost: OpCost::new(tree, params, batch),
            workers,
            live: tree.nodes().iter().map(|x| x.children.clone()).collect(),
            remaining: vec![0; n],
            emitted: vec![false; n],
            emitted_at: vec![usize::MAX; n],
            height: vec![0.0; n],
            agg_depth: vec![0.0; n],
            min_ready: vec![vec![f64::INFINITY; workers]; n],
            ready: vec![f64::INFINITY; n],
            unmet: vec![0; n],
            sibling_deps: BTreeMap::new(),
            clocks: vec![0.0; workers],
            last: vec![None; workers],
            release: vec![0.0; n],
            group: vec![None; n],
            buffer: PendingBuffer::default(),
            emission: Vec::new(),
            inner: vec![Vec::new(); workers],
            stats: ScheduleStats::default(),
            target: None,
        };
        s.init();
        s
    }

    fn init(&mut self) {
        let tree = self.tree;
        // Leaves are stored in topological order, so a reverse sweep sees
        // successors first.
        for l in tree.leaves().iter().rev() {
            let w = tree.leaf_info(*l).worker;
            let after = tree.succs(*l).iter().map(|s| self.cost.delay(*l, w) + self.height[*s]).fold(0.0, f64::max);
            self.height[*l] = self.cost.standalone(*l, w) + after;
        }
        for l in tree.leaves() {
            self.unmet[*l] = tree.preds(*l).len();
            if self.unmet[*l] == 0 {
                self.ready[*l] = 0.0;
            }
            self.group[*l] = self.group_key(*l);
            if let Some(k) = self.group[*l] {
                self.buffer.register(k);
            }
        }
        for (from, to) in tree.dep_edges() {
            let (a, b, parent) = self.sibling_pair(from, to);
            *self.sibling_deps.entry(parent).or_default().entry((a, b)).or_insert(0) += 1;
        }
        // Post-order refresh of subtree aggregates.
        let mut order = Vec::new();
        let mut stack = vec![TemplatedRadixTree::ROOT];
        while let Some(n) = stack.pop() {
            order.push(n);
            stack.extend(tree.node(n).children.iter().copied());
        }
        for n in order.into_iter().rev() {
            self.refresh(n);
        }
    }

    /// Children of `lca(a, b)` containing `a` and `b`.
    fn sibling_pair(&self, a: TrtIndex, b: TrtIndex) -> (TrtIndex, TrtIndex, TrtIndex) {
        let lca = self.tree.lca(a, b);
        (self.child_towards(lca, a), self.child_towards(lca, b), lca)
    }

    fn child_towards(&self, ancestor: TrtIndex, mut node: TrtIndex) -> TrtIndex {
        while let Some(p) = self.tree.node(node).parent {
            if p == ancestor {
                return node;
            }
            node = p;
        }
        unreachable!("ancestor is on the root path")
    }

    fn group_key(&self, leaf: TrtIndex) -> Option<GroupKey> {
        let mut remaining = self.tree.static_prefix_len(leaf);
        if remaining == 0 {
            return None;
        }
        for n in self.tree.root_path(leaf) {
            let len = self.tree.node(n).segment.len();
            if remaining <= len {
                return Some((self.tree.leaf_info(leaf).worker, n, remaining));
            }
            remaining -= len;
        }
        unreachable!("static prefix lies on the root path")
    }

    fn refresh(&mut self, n: TrtIndex) {
        let node = self.tree.node(n);
        if let Some(info) = &node.leaf {
            let alive = !self.emitted[n];
            self.remaining[n] = usize::from(alive);
            self.agg_depth[n] = if alive { self.height[n] } else { 0.0 };
            let mut row = vec![f64::INFINITY; self.workers];
            if alive && self.unmet[n] == 0 {
                row[info.worker] = self.ready[n];
            }
            self.min_ready[n] = row;
            self.stats.steps += 1;
            return;
        }
        let mut remaining = 0;
        let mut depth: f64 = 0.0;
        let mut row = vec![f64::INFINITY; self.workers];
        for c in &node.children {
            remaining += self.remaining[*c];
            depth = depth.max(self.agg_depth[*c]);
            for (w, v) in row.iter_mut().enumerate() {
                *v = v.min(self.min_ready[*c][w]);
            }
        }
        self.stats.steps += node.children.len() as u64;
        self.remaining[n] = remaining;
        self.agg_depth[n] = depth;
        self.min_ready[n] = row;
    }

    fn refresh_up(&mut self, mut n: TrtIndex) {
        loop {
            self.refresh(n);
            match self.tree.node(n).parent {
                Some(p) => n = p,
                None => break,
            }
        }
    }

    /// Earliest step at which some unemitted leaf below `n` can start.
    fn earliest(&self, n: TrtIndex) -> f64 {
        (0..self.workers).map(|w| self.min_ready[n][w].max(self.clocks[w])).fold(f64::INFINITY, f64::min)
    }

    pub fn is_done(&self) -> bool {
        self.remaining[TemplatedRadixTree::ROOT] == 0
    }

    fn can_schedule(&self, leaf: TrtIndex, force: bool) -> bool {
        if self.emitted[leaf] || self.unmet[leaf] > 0 {
            return false;
        }
        let w = self.tree.leaf_info(leaf).worker;
        force || self.ready[leaf] <= self.clocks[w]
    }

    fn emit(&mut self, leaf: TrtIndex) {
        let w = self.tree.leaf_info(leaf).worker;
        let start = self.clocks[w].max(self.ready[leaf]);
        let end = start + self.cost.usage(self.last[w], leaf, w);
        self.clocks[w] = end;
        self.last[w] = Some(leaf);
        self.release[leaf] = end + self.cost.delay(leaf, w);
        self.emitted[leaf] = true;
        self.emitted_at[leaf] = self.emission.len();
        self.emission.push(leaf);
        match self.group[leaf] {
            Some(key) => {
                if let Some(seq) = self.buffer.push(key, leaf) {
                    self.place_inner(w, seq);
                }
            }
            None => self.place_inner(w, vec![leaf]),
        }
        self.refresh_up(leaf);
        for s in self.tree.succs(leaf) {
            let (a, b, parent) = self.sibling_pair(leaf, *s);
            if let Some(map) = self.sibling_deps.get_mut(&parent) {
                if let Some(c) = map.get_mut(&(a, b)) {
                    *c -= 1;
                    if *c == 0 {
                        map.remove(&(a, b));
                    }
                }
            }
            self.unmet[*s] -= 1;
            if self.unmet[*s] == 0 {
                self.ready[*s] = self.tree.preds(*s).iter().map(|p| self.release[*p]).fold(0.0, f64::max);
                self.refresh_up(*s);
            }
        }
    }

    /// A released inner sequence takes the slot of its first emitted member,
    /// so groups completed late still run where they started.
    fn place_inner(&mut self, w: usize, seq: Vec<TrtIndex>) {
        let first = |s: &[TrtIndex]| s.iter().map(|l| self.emitted_at[*l]).min().unwrap_or(usize::MAX);
        let key = first(&seq);
        let at = self.inner[w].partition_point(|s| first(s) < key);
        self.inner[w].insert(at, seq);
    }

    /// Dependency-satisfied leaf with the earliest start, ties by index.
    fn pick_force_target(&self) -> Option<TrtIndex> {
        self.tree
            .leaves()
            .iter()
            .copied()
            .filter(|l| !self.emitted[*l] && self.unmet[*l] == 0)
            .min_by(|a, b| {
                let ea = self.ready[*a].max(self.clocks[self.tree.leaf_info(*a).worker]);
                let eb = self.ready[*b].max(self.clocks[self.tree.leaf_info(*b).worker]);
                ea.total_cmp(&eb).then(a.cmp(b))
            })
    }

    /// Runs one pass from the root. Returns true when everything is emitted.
    pub fn pass(&mut self, force: bool) -> Result<bool, ScheduleError> {
        self.stats.passes += 1;
        self.target = None;
        if force {
            self.stats.forced += 1;
            self.target = self.pick_force_target();
            if self.target.is_none() {
                return Err(ScheduleError::Cycle);
            }
        }
        let before = self.emission.len();
        let done = self.recurse(TemplatedRadixTree::ROOT, force);
        if force && self.emission.len() == before {
            return Err(ScheduleError::Cycle);
        }
        Ok(done)
    }

    /// Whether some leaf below `n` can start without forcing.
    fn startable(&self, n: TrtIndex) -> bool {
        (0..self.workers).any(|w| self.min_ready[n][w] <= self.clocks[w])
    }

    fn recurse(&mut self, node: TrtIndex, force: bool) -> bool {
        // Without a startable leaf the walk below would emit nothing and
        // change no state, so it is skipped.
        if !force && !self.startable(node) {
            return self.remaining[node] == 0;
        }
        if self.tree.node(node).is_leaf() {
            if self.can_schedule(node, force) {
                self.emit(node);
            }
            return self.emitted[node];
        }
        let mut force = force;
        let mut tried = BTreeSet::new();
        loop {
            let order = self.select_children(node, force, &tried);
            let Some(child) = order.first().copied() else { break };
            tried.insert(child);
            if self.recurse(child, force) {
                self.live[node].retain(|c| *c != child);
            }
            force = false;
        }
        self.live[node].is_empty()
    }

    /// Live children of `node` not in `skip`, ordered by sibling
    /// dependencies first, then deeper dependency chains, then earlier
    /// start, then index. Mutually dependent siblings are ordered by start,
    /// then depth.
    pub(crate) fn select_children(&mut self, node: TrtIndex, force: bool, skip: &BTreeSet<TrtIndex>) -> Vec<TrtIndex> {
        let kids: Vec<TrtIndex> = self.live[node].iter().copied().filter(|c| !skip.contains(c)).collect();
        let k = kids.len();
        self.stats.steps += (k * k) as u64;
        if k == 0 {
            return kids;
        }
        let pos: BTreeMap<TrtIndex, usize> = kids.iter().enumerate().map(|(i, c)| (*c, i)).collect();
        let mut adj = vec![Vec::new(); k];
        if let Some(map) = self.sibling_deps.get(&node) {
            for (a, b) in map.keys() {
                if let (Some(ia), Some(ib)) = (pos.get(a), pos.get(b)) {
                    adj[*ia].push(*ib);
                }
            }
        }
        let est: Vec<f64> = kids.iter().map(|c| self.earliest(*c)).collect();
        let depth: Vec<f64> = kids.iter().map(|c| self.agg_depth[*c]).collect();
        let comp = tarjan(&adj);
        let ncomp = comp.iter().copied().max().map_or(0, |m| m + 1);
        let mut members: Vec<Vec<usize>> = vec![Vec::new(); ncomp];
        for (i, c) in comp.iter().enumerate() {
            members[*c].push(i);
        }
        let better = |a: usize, b: usize| -> bool {
            depth[a] > depth[b]
                || (depth[a] == depth[b] && (est[a] < est[b] || (est[a] == est[b] && kids[a] < kids[b])))
        };
        let best: Vec<usize> = members
            .iter()
            .map(|m| m.iter().copied().reduce(|x, y| if better(y, x) { y } else { x }).expect("non-empty"))
            .collect();
        let mut indeg = vec![0usize; ncomp];
        let mut cadj: Vec<BTreeSet<usize>> = vec![BTreeSet::new(); ncomp];
        for (i, outs) in adj.iter().enumerate() {
            for j in outs {
                if comp[i] != comp[*j] && cadj[comp[i]].insert(comp[*j]) {
                    indeg[comp[*j]] += 1;
                }
            }
        }
        // A forced pass goes straight to the subtree holding the target.
        let target_child = if force {
            self.target.filter(|t| *t != node).map(|t| self.child_towards(node, t)).and_then(|c| pos.get(&c).copied())
        } else {
            None
        };
        let mut order = Vec::with_capacity(k);
        if let Some(t) = target_child {
            order.push(kids[t]);
        }
        let mut ready: Vec<usize> = (0..ncomp).filter(|c| indeg[*c] == 0).collect();
        while !ready.is_empty() {
            let (slot, _) = ready
                .iter()
                .enumerate()
                .reduce(|x, y| if better(best[*y.1], best[*x.1]) { y } else { x })
                .expect("non-empty ready set");
            let c = ready.swap_remove(slot);
            let mut inner = members[c].clone();
            inner.sort_by(|a, b| {
                est[*a].total_cmp(&est[*b]).then(depth[*b].total_cmp(&depth[*a])).then(kids[*a].cmp(&kids[*b]))
            });
            for i in inner {
                if Some(i) != target_child {
                    order.push(kids[i]);
                }
            }
            for d in &cadj[c] {
                indeg[*d] -= 1;
                if indeg[*d] == 0 {
                    ready.push(*d);
                }
            }
        }
        order
    }
}

/// Strongly connected components; returns the component index of each
/// vertex.
fn tarjan(adj: &[Vec<usize>]) -> Vec<usize> {
    struct State<'g> {
        adj: &'g [Vec<usize>],
        index: Vec<Option<usize>>,
        low: Vec<usize>,
        on_stack: Vec<bool>,
        stack: Vec<usize>,
        comp: Vec<usize>,
        next_index: usize,
        next_comp: usize,
    }
    fn visit(s: &mut State<'_>, v: usize) {
        s.index[v] = Some(s.next_index);
        s.low[v] = s.next_index;
        s.next_index += 1;
        s.stack.push(v);
        s.on_stack[v] = true;
        for &w in &s.adj[v] {
            match s.index[w] {
                None => {
                    visit(s, w);
                    s.low[v] = s.low[v].min(s.low[w]);
                }
                Some(iw) if s.on_stack[w] => s.low[v] = s.low[v].min(iw),
                _ => {}
            }
        }
        if Some(s.low[v]) == s.index[v] {
            loop {
                let w = s.stack.pop().expect("v is on the stack");
                s.on_stack[w] = false;
                s.comp[w] = s.next_comp;
                if w == v {
                    break;
                }
            }
            s.next_comp += 1;
        }
    }
    let n = adj.len();
    let mut s = State {
        adj,
        index: vec![None; n],
        low: vec![0; n],
        on_stack: vec![false; n],
        stack: Vec::new(),
        comp: vec![0; n],
        next_index: 0,
        next_comp: 0,
    };
    for v in 0..n {
        if s.index[v].is_none() {
            visit(&mut s, v);
        }
    }
    s.comp
}
