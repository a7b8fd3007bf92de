use alloc::collections::BTreeSet;
use alloc::vec::Vec;

use super::KvCache;
use crate::ir::{NodeId, Token};
use crate::trt::{Elem, TemplatedRadixTree};

/// At most this fraction of a cache's blocks is pinned.
pub const PIN_CAP_FRACTION: f64 = 0.5;

/// Leading all-static token runs of the tree's leaves that are at least
/// `threshold` tokens long, with the operators they prefix. Equal runs are
/// reported once.
pub fn static_prefixes(tree: &TemplatedRadixTree, threshold: usize) -> Vec<(Vec<Token>, Vec<NodeId>)> {
    let mut out: Vec<(Vec<Token>, Vec<NodeId>)> = Vec::new();
    for leaf in tree.leaves() {
        let len = tree.static_prefix_len(*leaf);
        if len == 0 || len < threshold {
            continue;
        }
        let tokens: Vec<Token> = tree
            .path_template(*leaf)
            .iter()
            .take(len)
            .map(|e| match e {
                Elem::Tok(t) => *t,
                Elem::Hole { .. } => unreachable!("static prefix holds tokens only"),
            })
            .collect();
        let op = tree.leaf_info(*leaf).op;
        match out.iter_mut().find(|(t, _)| *t == tokens) {
            Some((_, ops)) => ops.push(op),
            None => out.push((tokens, alloc::vec![op])),
        }
    }
    out
}

/// Prefills and pins the static prefixes of the operators accepted by
/// `runs_here`, shortest first, while at most half of the cache is pinned;
/// prefixes that do not fit are skipped. Only whole blocks are pinned.
/// Returns the number of tokens newly pinned.
pub fn pin_static_prefixes(
    cache: &mut KvCache,
    tree: &TemplatedRadixTree,
    threshold: usize,
    runs_here: impl Fn(NodeId) -> bool,
) -> usize {
    let bs = cache.block_size();
    let cap = (cache.capacity() as f64 * PIN_CAP_FRACTION) as usize;
    let mut prefixes: BTreeSet<(usize, Vec<Token>)> = BTreeSet::new();
    for (tokens, ops) in static_prefixes(tree, threshold) {
        if ops.iter().any(|o| runs_here(*o)) {
            let whole = tokens.len() / bs * bs;
            if whole > 0 {
                prefixes.insert((whole, tokens[..whole].to_vec()));
            }
        }
    }
    let mut pinned = 0;
    for (len, tokens) in prefixes {
        let fresh = (len - cache.peek(&tokens)) / bs;
        if cache.pinned_blocks() + fresh > cap {
            continue;
        }
        pinned += cache.pin(&tokens) * bs;
    }
    pinned
}
