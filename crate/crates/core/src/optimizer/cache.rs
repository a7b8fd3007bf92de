use alloc::collections::BTreeMap;
use alloc::vec::Vec;

use crate::digest::Signature;
use crate::ir::Token;

pub const DEFAULT_PROMPT_CACHE_CAPACITY: usize = 4096;

/// LRU map from value signatures of deterministic operators to their
/// outputs.
#[derive(Debug, Clone)]
pub struct PromptCache {
    capacity: usize,
    clock: u64,
    entries: BTreeMap<Signature, (Vec<Token>, u64)>,
    recency: BTreeMap<u64, Signature>,
}

impl Default for PromptCache {
    fn default() -> Self {
        Self::new(DEFAULT_PROMPT_CACHE_CAPACITY)
    }
}

impl PromptCache {
    pub fn new(capacity: usize) -> Self {
        Self { capacity, clock: 0, entries: BTreeMap::new(), recency: BTreeMap::new() }
    }

    pub fn capacity(&self) -> usize {
        self.capacity
    }

    pub fn len(&self) -> usize {
        self.entries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }

    pub fn contains(&self, sig: Signature) -> bool {
        self.entries.contains_key(&sig)
    }

    fn touch(&mut self, sig: Signature) {
        self.clock += 1;
        let stamp = self.clock;
        if let Some(entry) = self.entries.get_mut(&sig) {
            self.recency.remove(&entry.1);
            entry.1 = stamp;
            self.recency.insert(stamp, sig);
        }
    }

    /// Looks up an entry and marks it most recently used.
    pub fn get(&mut self, sig: Signature) -> Option<&[Token]> {
        if !self.entries.contains_key(&sig) {
            return None;
        }
        self.touch(sig);
        self.entries.get(&sig).map(|e| e.0.as_slice())
    }

    /// Looks up an entry without changing recency.
    pub fn peek(&self, sig: Signature) -> Option<&[Token]> {
        self.entries.get(&sig).map(|e| e.0.as_slice())
    }

    /// Inserts or replaces an entry, evicting least recently used entries
    /// while over capacity.
    pub fn insert(&mut self, sig: Signature, output: Vec<Token>) {
        self.clock += 1;
        let stamp = self.clock;
        if let Some(old) = self.entries.insert(sig, (output, stamp)) {
            self.recency.remove(&old.1);
        }
        self.recency.insert(stamp, sig);
        while self.entries.len() > self.capacity {
            let (_, victim) = self.recency.pop_first().expect("non-empty recency list");
            self.entries.remove(&victim);
        }
    }

    /// Entries from least to most recently used, so re-inserting them in
    /// order restores the recency list.
    pub fn iter_lru(&self) -> impl Iterator<Item = (Signature, &[Token])> + '_ {
        self.recency.values().map(move |s| (*s, self.entries[s].0.as_slice()))
    }
}
