//! Block-granular prefix KV cache organized as a radix tree of blocks.

use alloc::collections::BTreeMap;
use alloc::vec;
use alloc::vec::Vec;

use crate::ir::Token;

pub const DEFAULT_BLOCK_SIZE: usize = 16;

#[derive(Debug, Clone)]
struct Block {
    parent: usize,
    children: BTreeMap<Vec<Token>, usize>,
    key: Vec<Token>,
    depth: usize,
    last_use: u64,
    pinned: bool,
    locks: u32,
    alive: bool,
}

/// Prefix cache holding whole blocks of `block_size` tokens. Node 0 is the
/// empty root and holds no block.
#[derive(Debug, Clone)]
pub struct KvCache {
    block_size: usize,
    capacity: usize,
    reserved: usize,
    used: usize,
    pinned: usize,
    clock: u64,
    blocks: Vec<Block>,
    free: Vec<usize>,
    evictions: u64,
}

impl KvCache {
    /// Cache of `capacity_tokens / block_size` blocks.
    pub fn new(capacity_tokens: usize, block_size: usize) -> Self {
        assert!(block_size > 0, "block size must be positive");
        let root = Block {
            parent: 0,
            children: BTreeMap::new(),
            key: Vec::new(),
            depth: 0,
            last_use: 0,
            pinned: true,
            locks: 0,
            alive: true,
        };
        Self {
            block_size,
            capacity: capacity_tokens / block_size,
            reserved: 0,
            used: 0,
            pinned: 0,
            clock: 0,
            blocks: vec![root],
            free: Vec::new(),
            evictions: 0,
        }
    }

    pub fn block_size(&self) -> usize {
        self.block_size
    }

    /// Capacity in blocks.
    pub fn capacity(&self) -> usize {
        self.capacity
    }

    /// Blocks held.
    pub fn occupancy(&self) -> usize {
        self.used
    }

    pub fn pinned_blocks(&self) -> usize {
        self.pinned
    }

    pub fn evictions(&self) -> u64 {
        self.evictions
    }

    /// Blocks set aside for running requests; cached blocks are evicted to
    /// make room when the reservation grows.
    pub fn reserved(&self) -> usize {
        self.reserved
    }

    pub fn set_reserved(&mut self, blocks: usize) {
        self.reserved = blocks;
        while self.used + self.reserved > self.capacity && self.evict_one(&[]) {}
    }

    fn tick(&mut self) -> u64 {
        self.clock += 1;
        self.clock
    }

    /// Nodes of the longest cached whole-block prefix of `tokens`.
    fn walk(&self, tokens: &[Token]) -> Vec<usize> {
        let mut path = Vec::new();
        let mut cur = 0;
        for chunk in tokens.chunks_exact(self.block_size) {
            match self.blocks[cur].children.get(chunk) {
                Some(next) => {
                    path.push(*next);
                    cur = *next;
                }
                None => break,
            }
        }
        path
    }

    /// Length of the longest cached prefix of `tokens`, a multiple of the
    /// block size. Refreshes the recency of the matched blocks.
    pub fn lookup(&mut self, tokens: &[Token]) -> usize {
        let path = self.walk(tokens);
        let now = self.tick();
        for n in &path {
            self.blocks[*n].last_use = now;
        }
        path.len() * self.block_size
    }

    /// Matched length without touching recency.
    pub fn peek(&self, tokens: &[Token]) -> usize {
        self.walk(tokens).len() * self.block_size
    }

    /// Like [`lookup`](Self::lookup), and protects the matched blocks from
    /// eviction until [`unlock`](Self::unlock).
    pub fn lookup_locked(&mut self, tokens: &[Token]) -> (usize, Vec<usize>) {
        let path = self.walk(tokens);
        let now = self.tick();
        for n in &path {
            self.blocks[*n].last_use = now;
            self.blocks[*n].locks += 1;
        }
        (path.len() * self.block_size, path)
    }

    pub fn unlock(&mut self, path: &[usize]) {
        for n in path {
            let b = &mut self.blocks[*n];
            debug_assert!(b.alive && b.locks > 0, "unlocking a block that is not locked");
            b.locks -= 1;
        }
    }

    /// Inserts the whole blocks of `tokens`, evicting least recently used
    /// unpinned, unlocked leaf blocks when full (deepest first among equally
    /// old ones). Stops when nothing more can be evicted. Returns the number
    /// of new blocks.
    pub fn insert(&mut self, tokens: &[Token]) -> usize {
        self.insert_path(tokens).1
    }

    fn insert_path(&mut self, tokens: &[Token]) -> (Vec<usize>, usize) {
        let now = self.tick();
        let mut path = Vec::new();
        let mut cur = 0;
        let mut added = 0;
        for chunk in tokens.chunks_exact(self.block_size) {
            if let Some(next) = self.blocks[cur].children.get(chunk).copied() {
                self.blocks[next].last_use = now;
                path.push(next);
                cur = next;
                continue;
            }
            if self.used + self.reserved >= self.capacity && !self.evict_one(&path) {
                break;
            }
            if self.used + self.reserved >= self.capacity {
                break;
            }
            let block = Block {
                parent: cur,
                children: BTreeMap::new(),
                key: chunk.to_vec(),
                depth: self.blocks[cur].depth + 1,
                last_use: now,
                pinned: false,
                locks: 0,
                alive: true,
            };
            let idx = match self.free.pop() {
                Some(i) => {
                    self.blocks[i] = block;
                    i
                }
                None => {
                    self.blocks.push(block);
                    self.blocks.len() - 1
                }
            };
            self.blocks[cur].children.insert(chunk.to_vec(), idx);
            self.used += 1;
            added += 1;
            path.push(idx);
            cur = idx;
        }
        (path, added)
    }

    /// Inserts `tokens` and pins its whole blocks. Returns the number of
    /// blocks that became pinned.
    pub fn pin(&mut self, tokens: &[Token]) -> usize {
        let (path, _) = self.insert_path(tokens);
        let mut newly = 0;
        for n in path {
            if !self.blocks[n].pinned {
                self.blocks[n].pinned = true;
                newly += 1;
            }
        }
        self.pinned += newly;
        newly
    }

    fn evict_one(&mut self, protect: &[usize]) -> bool {
        let victim = self
            .blocks
            .iter()
            .enumerate()
            .skip(1)
            .filter(|(i, b)| b.alive && !b.pinned && b.locks == 0 && b.children.is_empty() && !protect.contains(i))
            .min_by(|(ia, a), (ib, b)| a.last_use.cmp(&b.last_use).then(b.depth.cmp(&a.depth)).then(ia.cmp(ib)))
            .map(|(i, _)| i);
        let Some(v) = victim else { return false };
        let parent = self.blocks[v].parent;
        let key = core::mem::take(&mut self.blocks[v].key);
        self.blocks[parent].children.remove(&key);
        self.blocks[v].alive = false;
        self.free.push(v);
        self.used -= 1;
        self.evictions += 1;
        true
    }

    /// Every cached sequence as a list of root-to-leaf token paths; for
    /// tests and debugging.
    pub fn sequences(&self) -> Vec<Vec<Token>> {
        let mut out = Vec::new();
        let mut stack = vec![(0usize, Vec::new())];
        while let Some((n, prefix)) = stack.pop() {
            let b = &self.blocks[n];
            if b.children.is_empty() && n != 0 {
                out.push(prefix.clone());
            }
            for child in b.children.values().rev() {
                let mut p = prefix.clone();
                p.extend_from_slice(&self.blocks[*child].key);
                stack.push((*child, p));
            }
        }
        out
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn seq(start: u32, len: u32) -> Vec<Token> {
        (start..start + len).map(Token).collect()
    }

    #[test]
    fn lookup_counts_whole_blocks() {
        let mut c = KvCache::new(1024, 4);
        assert_eq!(c.lookup(&seq(0, 10)), 0);
        assert_eq!(c.insert(&seq(0, 10)), 2);
        assert_eq!(c.lookup(&seq(0, 10)), 8);
        let mut diverging = seq(0, 12);
        diverging[9] = Token(999);
        assert_eq!(c.lookup(&diverging), 8);
        assert_eq!(c.insert(&seq(0, 10)), 0);
        assert_eq!(c.occupancy(), 2);
    }

    #[test]
    fn evicts_least_recent_leaf() {
        let mut c = KvCache::new(12, 4);
        c.insert(&seq(0, 4));
        c.insert(&seq(100, 4));
        c.insert(&seq(200, 4));
        c.lookup(&seq(0, 4));
        c.insert(&seq(300, 4));
        assert_eq!(c.peek(&seq(100, 4)), 0);
        assert_eq!(c.peek(&seq(0, 4)), 4);
        assert_eq!(c.occupancy(), 3);
    }

    #[test]
    fn pinned_and_locked_blocks_survive() {
        let mut c = KvCache::new(8, 4);
        c.pin(&seq(0, 4));
        c.insert(&seq(50, 4));
        let (_, lease) = c.lookup_locked(&seq(50, 4));
        assert_eq!(c.insert(&seq(100, 8)), 0);
        c.unlock(&lease);
        assert_eq!(c.insert(&seq(100, 8)), 1);
        assert_eq!(c.peek(&seq(0, 4)), 4);
    }

    #[test]
    fn zero_capacity_caches_nothing() {
        let mut c = KvCache::new(8, 16);
        assert_eq!(c.insert(&seq(0, 64)), 0);
        assert_eq!(c.lookup(&seq(0, 64)), 0);
    }
}
