//! Operator-level token-step estimates. An operator stands for `B` calls:
//! the static part of its prompt is prefilled once per run of calls, the
//! rest once per query.

use alloc::vec::Vec;

use crate::cost::{decode_usage, precedence_delay, CostParams};
use crate::trt::{TemplatedRadixTree, TrtIndex};

pub(crate) struct OpCost<'a> {
    tree: &'a TemplatedRadixTree,
    params: &'a CostParams,
    batch: f64,
    static_weight: Vec<f64>,
}

impl<'a> OpCost<'a> {
    pub fn new(tree: &'a TemplatedRadixTree, params: &'a CostParams, batch: usize) -> Self {
        let mut static_weight = alloc::vec![0.0; tree.nodes().len()];
        for l in tree.leaves() {
            static_weight[*l] = tree.static_prefix_len(*l) as f64;
        }
        Self { tree, params, batch: batch as f64, static_weight }
    }

    /// Estimated token steps of all calls of `leaf` on worker `w` right
    /// after `prev`.
    pub fn usage(&self, prev: Option<TrtIndex>, leaf: TrtIndex, w: usize) -> f64 {
        let total = self.tree.root_path_weight(leaf);
        let fixed = self.static_weight[leaf];
        let shared = match prev {
            Some(p) => self.tree.root_path_weight(self.tree.lca(p, leaf)),
            None => 0.0,
        };
        let once = (fixed - shared).max(0.0);
        let per_query = (total - fixed.max(shared)).max(0.0);
        let len_out = self.tree.leaf_info(leaf).len_out;
        let alpha = self.params.workers[w].alpha;
        alpha * (len_out * (once + self.batch * per_query) + self.batch * decode_usage(len_out))
    }

    pub fn standalone(&self, leaf: TrtIndex, w: usize) -> f64 {
        self.usage(None, leaf, w)
    }

    pub fn delay(&self, leaf: TrtIndex, w: usize) -> f64 {
        let p = self.params.workers[w];
        precedence_delay(p.alpha, p.capacity, self.tree.leaf_info(leaf).len_out)
    }
}
