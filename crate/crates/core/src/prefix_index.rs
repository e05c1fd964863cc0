//! Block-granular prefix trie recording which regions have served which
//! prompt prefixes.
//!
//! Edges carry fixed-size token blocks; a prompt whose length is not a
//! multiple of the block size ends in a shorter trailing block, which only
//! matches an identical trailing block. Every node on an inserted path records
//! the inserting region, so the holder sets are prefix-closed: if a region
//! holds a node it holds all of that node's ancestors.
//!
//! Nodes live in an arena. Eviction removes least-recently-touched leaves.

use crate::state::{RegionId, Token};
use serde::{Deserialize, Serialize};
use std::collections::{BTreeMap, BTreeSet};
use std::fmt::Write as _;

pub const DEFAULT_BLOCK_SIZE: usize = 16;
pub const DEFAULT_CAPACITY_BLOCKS: usize = 1 << 16;

const ROOT: usize = 0;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(default)]
pub struct IndexConfig {
    pub block_size: usize,
    pub capacity_blocks: usize,
}

impl Default for IndexConfig {
    fn default() -> Self {
        IndexConfig {
            block_size: DEFAULT_BLOCK_SIZE,
            capacity_blocks: DEFAULT_CAPACITY_BLOCKS,
        }
    }
}

#[derive(Debug, Clone, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct MatchResult {
    pub match_len: usize,
    pub holders: BTreeSet<RegionId>,
}

#[derive(Debug, Clone)]
struct Node {
    key: Box<[Token]>,
    parent: usize,
    children: BTreeMap<Box<[Token]>, usize>,
    holders: BTreeMap<RegionId, u64>,
    last_touch: u64,
}

impl Node {
    fn new(key: Box<[Token]>, parent: usize) -> Self {
        Node {
            key,
            parent,
            children: BTreeMap::new(),
            holders: BTreeMap::new(),
            last_touch: 0,
        }
    }
}

#[derive(Debug, Clone)]
pub struct PrefixIndex {
    block_size: usize,
    capacity_blocks: usize,
    nodes: Vec<Option<Node>>,
    free: Vec<usize>,
    // (last_touch, arena index) of every non-root leaf
    leaves: BTreeSet<(u64, usize)>,
    total_blocks: usize,
}

impl Default for PrefixIndex {
    fn default() -> Self {
        PrefixIndex::new(IndexConfig::default())
    }
}

impl PrefixIndex {
    /// # Panics
    /// If `block_size` is zero.
    pub fn new(cfg: IndexConfig) -> Self {
        assert!(cfg.block_size > 0, "block size must be positive");
        PrefixIndex {
            block_size: cfg.block_size,
            capacity_blocks: cfg.capacity_blocks,
            nodes: vec![Some(Node::new(Box::new([]), ROOT))],
            free: Vec::new(),
            leaves: BTreeSet::new(),
            total_blocks: 0,
        }
    }

    pub fn with_block_size(block_size: usize) -> Self {
        PrefixIndex::new(IndexConfig { block_size, ..IndexConfig::default() })
    }

    pub fn block_size(&self) -> usize {
        self.block_size
    }

    pub fn capacity_blocks(&self) -> usize {
        self.capacity_blocks
    }

    pub fn total_blocks(&self) -> usize {
        self.total_blocks
    }

    pub fn is_empty(&self) -> bool {
        self.total_blocks == 0
    }

    fn node(&self, idx: usize) -> &Node {
        self.nodes[idx].as_ref().expect("live node")
    }

    fn node_mut(&mut self, idx: usize) -> &mut Node {
        self.nodes[idx].as_mut().expect("live node")
    }

    fn is_leaf(&self, idx: usize) -> bool {
        idx != ROOT && self.node(idx).children.is_empty()
    }

    fn alloc(&mut self, node: Node) -> usize {
        match self.free.pop() {
            Some(idx) => {
                self.nodes[idx] = Some(node);
                idx
            }
            None => {
                self.nodes.push(Some(node));
                self.nodes.len() - 1
            }
        }
    }

    fn touch(&mut self, idx: usize, now: u64) {
        let leaf = self.is_leaf(idx);
        let node = self.node_mut(idx);
        let old = node.last_touch;
        let new = old.max(now);
        node.last_touch = new;
        if leaf && new != old {
            self.leaves.remove(&(old, idx));
            self.leaves.insert((new, idx));
        }
    }

    /// Record that `node_id` served `tokens`. Evicts down to capacity before
    /// returning.
    pub fn insert(&mut self, tokens: &[Token], node_id: &RegionId, now: u64) {
        self.insert_with_evictions(tokens, node_id, now);
    }

    /// [`insert`](Self::insert), returning the token paths of the blocks
    /// evicted to make room.
    pub fn insert_with_evictions(
        &mut self,
        tokens: &[Token],
        node_id: &RegionId,
        now: u64,
    ) -> Vec<Vec<Token>> {
        let mut cur = ROOT;
        for block in tokens.chunks(self.block_size) {
            let next = match self.node(cur).children.get(block) {
                Some(&child) => child,
                None => {
                    let parent_was_leaf = self.is_leaf(cur);
                    let child = self.alloc(Node::new(block.into(), cur));
                    self.node_mut(cur).children.insert(block.into(), child);
                    if parent_was_leaf {
                        let t = self.node(cur).last_touch;
                        self.leaves.remove(&(t, cur));
                    }
                    self.leaves.insert((0, child));
                    self.total_blocks += 1;
                    child
                }
            };
            self.touch(next, now);
            let holders = &mut self.node_mut(next).holders;
            let ts = holders.entry(node_id.clone()).or_insert(now);
            *ts = (*ts).max(now);
            cur = next;
        }
        self.evict_collect()
    }

    /// Longest stored prefix of `tokens`, at block granularity, and the
    /// regions holding it.
    pub fn longest_prefix_match(&self, tokens: &[Token]) -> MatchResult {
        let mut cur = ROOT;
        let mut len = 0;
        for block in tokens.chunks(self.block_size) {
            match self.node(cur).children.get(block) {
                Some(&child) => {
                    cur = child;
                    len += block.len();
                }
                None => break,
            }
        }
        if cur == ROOT {
            return MatchResult::default();
        }
        MatchResult {
            match_len: len,
            holders: self.node(cur).holders.keys().cloned().collect(),
        }
    }

    /// Longest stored prefix of `tokens` held by `node_id`. Unknown ids get 0.
    pub fn overlap_for_node(&self, tokens: &[Token], node_id: &RegionId) -> usize {
        let mut cur = ROOT;
        let mut len = 0;
        for block in tokens.chunks(self.block_size) {
            match self.node(cur).children.get(block) {
                Some(&child) if self.node(child).holders.contains_key(node_id) => {
                    cur = child;
                    len += block.len();
                }
                _ => break,
            }
        }
        len
    }

    /// Evict least-recently-touched leaves until within capacity. Returns the
    /// number of blocks removed.
    pub fn evict_to_capacity(&mut self, _now: u64) -> usize {
        self.evict_collect().len()
    }

    pub fn set_capacity(&mut self, capacity_blocks: usize) -> Vec<Vec<Token>> {
        self.capacity_blocks = capacity_blocks;
        self.evict_collect()
    }

    fn evict_collect(&mut self) -> Vec<Vec<Token>> {
        let mut evicted = Vec::new();
        while self.total_blocks > self.capacity_blocks {
            let Some(&(ts, idx)) = self.leaves.iter().next() else { break };
            self.leaves.remove(&(ts, idx));
            evicted.push(self.path_of(idx));
            self.remove_leaf(idx);
        }
        evicted
    }

    fn path_of(&self, mut idx: usize) -> Vec<Token> {
        let mut parts = Vec::new();
        while idx != ROOT {
            let n = self.node(idx);
            parts.push(&n.key[..]);
            idx = n.parent;
        }
        parts.iter().rev().flat_map(|k| k.iter().copied()).collect()
    }

    // Caller has already dropped `idx` from `leaves`.
    fn remove_leaf(&mut self, idx: usize) {
        let node = self.nodes[idx].take().expect("live node");
        debug_assert!(node.children.is_empty());
        self.free.push(idx);
        self.total_blocks -= 1;
        let parent = node.parent;
        self.node_mut(parent).children.remove(&node.key);
        if self.is_leaf(parent) {
            let t = self.node(parent).last_touch;
            self.leaves.insert((t, parent));
        }
    }

    fn remove_subtree(&mut self, idx: usize) {
        let children: Vec<usize> = self.node(idx).children.values().copied().collect();
        for c in children {
            self.remove_subtree(c);
        }
        let t = self.node(idx).last_touch;
        self.leaves.remove(&(t, idx));
        self.remove_leaf(idx);
    }

    /// Drop `node_id` from the node at exactly `tokens` and from everything
    /// below it. Nodes left without holders are removed. Returns false when
    /// the path is not stored.
    pub fn remove_holder(&mut self, tokens: &[Token], node_id: &RegionId) -> bool {
        let mut cur = ROOT;
        for block in tokens.chunks(self.block_size) {
            match self.node(cur).children.get(block) {
                Some(&child) => cur = child,
                None => return false,
            }
        }
        if cur == ROOT {
            return false;
        }
        let mut stack = vec![cur];
        let mut emptied = Vec::new();
        while let Some(i) = stack.pop() {
            let n = self.node_mut(i);
            n.holders.remove(node_id);
            if n.holders.is_empty() {
                emptied.push(i);
            }
            stack.extend(n.children.values().copied());
        }
        // holder sets are prefix-closed, so an emptied node's whole subtree is
        // emptied too; remove only the topmost ones
        for i in emptied {
            if self.nodes[i].is_none() {
                continue;
            }
            let parent = self.node(i).parent;
            if parent == ROOT || !self.node(parent).holders.is_empty() {
                self.remove_subtree(i);
            }
        }
        true
    }

    /// One line per stored block: `<path tokens> -> <holder>@<touch>,...`,
    /// depth-first in token order.
    pub fn dump(&self) -> String {
        let mut out = String::new();
        let mut stack: Vec<usize> = self.node(ROOT).children.values().rev().copied().collect();
        while let Some(idx) = stack.pop() {
            let n = self.node(idx);
            let path = self.path_of(idx);
            let path: Vec<String> = path.iter().map(|t| t.to_string()).collect();
            let holders: Vec<String> =
                n.holders.iter().map(|(h, ts)| format!("{h}@{ts}")).collect();
            let _ = writeln!(out, "{} -> {}", path.join(" "), holders.join(","));
            stack.extend(n.children.values().rev().copied());
        }
        out
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn r(s: &str) -> RegionId {
        RegionId::new(s)
    }

    fn set(ids: &[&str]) -> BTreeSet<RegionId> {
        ids.iter().map(|s| r(s)).collect()
    }

    #[test]
    fn exact_reinsertion() {
        let mut idx = PrefixIndex::with_block_size(1);
        idx.insert(&[1, 2, 3, 4], &r("A"), 1);
        let m = idx.longest_prefix_match(&[1, 2, 3, 4]);
        assert_eq!(m.match_len, 4);
        assert_eq!(m.holders, set(&["A"]));
    }

    #[test]
    fn divergent_branches() {
        let mut idx = PrefixIndex::with_block_size(1);
        idx.insert(&[1, 2, 3, 4], &r("A"), 1);
        idx.insert(&[1, 2, 9, 9], &r("B"), 2);
        let m = idx.longest_prefix_match(&[1, 2, 3, 0]);
        assert_eq!((m.match_len, m.holders), (3, set(&["A"])));
        let m = idx.longest_prefix_match(&[1, 2]);
        assert_eq!((m.match_len, m.holders), (2, set(&["A", "B"])));
    }

    #[test]
    fn block_granularity_rounds_down() {
        let mut idx = PrefixIndex::with_block_size(2);
        idx.insert(&[1, 2, 3, 4], &r("A"), 1);
        assert_eq!(idx.longest_prefix_match(&[1, 2, 3, 0]).match_len, 2);
        assert_eq!(idx.longest_prefix_match(&[1, 2, 3]).match_len, 2);
        idx.insert(&[1, 2, 3], &r("B"), 2);
        // trailing partial block matches only an identical partial block
        assert_eq!(idx.longest_prefix_match(&[1, 2, 3]).match_len, 3);
    }

    #[test]
    fn shared_sequence_union_holders() {
        let mut idx = PrefixIndex::with_block_size(1);
        idx.insert(&[7, 7], &r("A"), 1);
        idx.insert(&[7, 7], &r("B"), 2);
        assert_eq!(idx.longest_prefix_match(&[7, 7]).holders, set(&["A", "B"]));
    }

    #[test]
    fn empty_trie() {
        let idx = PrefixIndex::with_block_size(1);
        assert_eq!(idx.longest_prefix_match(&[1, 2]), MatchResult::default());
        assert_eq!(idx.longest_prefix_match(&[]), MatchResult::default());
    }

    #[test]
    fn repeated_token_prefix() {
        let mut idx = PrefixIndex::with_block_size(1);
        idx.insert(&[5, 5, 5, 5, 5], &r("C"), 1);
        let m = idx.longest_prefix_match(&[5, 5, 5, 7]);
        assert_eq!((m.match_len, m.holders), (3, set(&["C"])));
    }

    #[test]
    fn lru_eviction() {
        let mut idx = PrefixIndex::new(IndexConfig { block_size: 1, capacity_blocks: 2 });
        idx.insert(&[1], &r("A"), 1);
        idx.insert(&[2], &r("A"), 2);
        assert_eq!(idx.evict_to_capacity(2), 0);
        let evicted = idx.insert_with_evictions(&[3], &r("A"), 3);
        assert_eq!(evicted, vec![vec![1]]);
        assert_eq!(idx.total_blocks(), 2);
        assert_eq!(idx.longest_prefix_match(&[1]).match_len, 0);
        assert_eq!(idx.longest_prefix_match(&[2]).match_len, 1);
        assert_eq!(idx.longest_prefix_match(&[3]).match_len, 1);
    }

    #[test]
    fn eviction_takes_leaves_first() {
        let mut idx = PrefixIndex::new(IndexConfig { block_size: 1, capacity_blocks: 3 });
        idx.insert(&[1, 2, 3], &r("A"), 1);
        idx.insert(&[9], &r("A"), 2);
        // over by one: the deepest node of the oldest path goes
        assert_eq!(idx.longest_prefix_match(&[1, 2, 3]).match_len, 2);
        assert_eq!(idx.total_blocks(), 3);
    }

    #[test]
    fn overlap_per_node() {
        let mut idx = PrefixIndex::with_block_size(1);
        assert_eq!(idx.overlap_for_node(&[1, 2], &r("A")), 0);
        idx.insert(&[1, 2, 3], &r("A"), 1);
        idx.insert(&[1, 2, 3, 4, 5], &r("B"), 2);
        assert_eq!(idx.overlap_for_node(&[1, 2, 3, 4, 5], &r("A")), 3);
        assert_eq!(idx.overlap_for_node(&[1, 2, 3, 4, 5], &r("B")), 5);
        assert_eq!(idx.overlap_for_node(&[1, 2, 3, 4, 5], &r("Z")), 0);
    }

    #[test]
    fn single_holder_overlap_equals_match() {
        let mut idx = PrefixIndex::with_block_size(1);
        idx.insert(&[4, 4, 1], &r("A"), 1);
        idx.insert(&[4, 2], &r("A"), 2);
        for q in [&[4, 4, 1, 0][..], &[4, 2, 2], &[3]] {
            assert_eq!(idx.overlap_for_node(q, &r("A")), idx.longest_prefix_match(q).match_len);
        }
    }

    #[test]
    fn remove_holder_prunes() {
        let mut idx = PrefixIndex::with_block_size(1);
        idx.insert(&[1, 2, 3], &r("A"), 1);
        idx.insert(&[1, 2], &r("B"), 2);
        assert!(idx.remove_holder(&[1, 2, 3], &r("A")));
        assert_eq!(idx.total_blocks(), 2);
        assert_eq!(idx.overlap_for_node(&[1, 2, 3], &r("A")), 2);
        assert!(idx.remove_holder(&[1], &r("A")));
        assert_eq!(idx.overlap_for_node(&[1, 2, 3], &r("A")), 0);
        assert_eq!(idx.overlap_for_node(&[1, 2, 3], &r("B")), 2);
        assert!(idx.remove_holder(&[1], &r("B")));
        assert!(idx.is_empty());
        assert!(!idx.remove_holder(&[1], &r("B")));
    }

    #[test]
    fn dump_format() {
        let mut idx = PrefixIndex::with_block_size(2);
        idx.insert(&[1, 2, 3], &r("A"), 4);
        idx.insert(&[1, 2], &r("B"), 5);
        assert_eq!(idx.dump(), "1 2 -> A@4,B@5\n1 2 3 -> A@4\n");
    }

    fn block_lcp(a: &[Token], b: &[Token], bs: usize) -> usize {
        let mut len = 0;
        for (x, y) in a.chunks(bs).zip(b.chunks(bs)) {
            if x != y {
                break;
            }
            len += x.len();
        }
        len
    }

    proptest! {
        #[test]
        fn idempotent_reinsert(
            seqs in prop::collection::vec(prop::collection::vec(0u32..4, 1..12), 1..20),
            queries in prop::collection::vec(prop::collection::vec(0u32..4, 0..12), 1..20),
            bs in 1usize..4,
        ) {
            let mut idx = PrefixIndex::with_block_size(bs);
            for (i, s) in seqs.iter().enumerate() {
                idx.insert(s, &r(if i % 2 == 0 { "A" } else { "B" }), i as u64);
            }
            let before: Vec<_> = queries.iter().map(|q| idx.longest_prefix_match(q)).collect();
            let blocks = idx.total_blocks();
            for (i, s) in seqs.iter().enumerate() {
                idx.insert(s, &r(if i % 2 == 0 { "A" } else { "B" }), 100 + i as u64);
            }
            let after: Vec<_> = queries.iter().map(|q| idx.longest_prefix_match(q)).collect();
            prop_assert_eq!(before, after);
            prop_assert_eq!(blocks, idx.total_blocks());
        }

        #[test]
        fn matches_block_lcp_oracle(
            seqs in prop::collection::vec(prop::collection::vec(0u32..3, 1..10), 1..15),
            queries in prop::collection::vec(prop::collection::vec(0u32..3, 0..10), 1..15),
            bs in 1usize..4,
        ) {
            let mut idx = PrefixIndex::with_block_size(bs);
            for s in &seqs {
                idx.insert(s, &r("A"), 0);
            }
            for q in &queries {
                let want = seqs.iter().map(|s| block_lcp(s, q, bs)).max().unwrap_or(0);
                prop_assert_eq!(idx.longest_prefix_match(q).match_len, want);
            }
        }

        #[test]
        fn capacity_holds(
            seqs in prop::collection::vec(prop::collection::vec(0u32..5, 1..8), 1..40),
            cap in 1usize..12,
        ) {
            let mut idx = PrefixIndex::new(IndexConfig { block_size: 1, capacity_blocks: cap });
            for (i, s) in seqs.iter().enumerate() {
                idx.insert(s, &r("A"), i as u64);
                prop_assert!(idx.total_blocks() <= cap);
            }
        }

        #[test]
        fn extension_never_shrinks_match(
            base in prop::collection::vec(0u32..4, 1..10),
            ext in prop::collection::vec(0u32..4, 1..10),
            query in prop::collection::vec(0u32..4, 0..20),
        ) {
            let mut idx = PrefixIndex::with_block_size(1);
            idx.insert(&base, &r("A"), 1);
            let before = idx.longest_prefix_match(&query).match_len;
            let mut longer = base.clone();
            longer.extend(&ext);
            idx.insert(&longer, &r("B"), 2);
            prop_assert!(idx.longest_prefix_match(&query).match_len >= before);
        }
    }
}
