//! Binary trie over destination prefix bits.

use crate::ids::NextHop;
use crate::prefix::{Prefix, PrefixError};

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct RouteEntry {
    pub prefix: Prefix,
    pub next: NextHop,
}

impl RouteEntry {
    /// Rejects prefixes with bits set below `len`.
    pub fn new(addr: u32, len: u8, next: NextHop) -> Result<Self, PrefixError> {
        Ok(RouteEntry {
            prefix: Prefix::new(addr, len)?,
            next,
        })
    }
}

const NIL: u32 = u32::MAX;

#[derive(Clone, Copy, Debug)]
struct TrieNode {
    child: [u32; 2],
    entry: u32,
}

impl TrieNode {
    const EMPTY: TrieNode = TrieNode {
        child: [NIL, NIL],
        entry: NIL,
    };
}

/// Result of a trie walk.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct FibLookup<'a> {
    pub route: Option<&'a RouteEntry>,
    /// Trie nodes touched, root included.
    pub nodes_visited: u32,
}

/// Arena-backed binary trie. Node 0 is the root.
#[derive(Clone, Debug)]
pub struct Fib {
    nodes: Vec<TrieNode>,
    entries: Vec<RouteEntry>,
}

impl Default for Fib {
    fn default() -> Self {
        Fib::new()
    }
}

fn bit_at(addr: u32, depth: u8) -> usize {
    ((addr >> (31 - u32::from(depth))) & 1) as usize
}

impl Fib {
    pub fn new() -> Self {
        Fib {
            nodes: vec![TrieNode::EMPTY],
            entries: Vec::new(),
        }
    }

    pub fn entry_count(&self) -> usize {
        self.entries.len()
    }

    pub fn trie_nodes(&self) -> usize {
        self.nodes.len()
    }

    pub fn entries(&self) -> &[RouteEntry] {
        &self.entries
    }

    /// Inserts `entry`, returning the route it replaced for the same
    /// (prefix, length), if any.
    pub fn insert(&mut self, entry: RouteEntry) -> Option<RouteEntry> {
        let prefix = entry.prefix;
        let mut at = 0usize;
        for depth in 0..prefix.len() {
            let b = bit_at(prefix.addr(), depth);
            let next = self.nodes[at].child[b];
            at = if next == NIL {
                self.nodes.push(TrieNode::EMPTY);
                let idx = (self.nodes.len() - 1) as u32;
                self.nodes[at].child[b] = idx;
                idx as usize
            } else {
                next as usize
            };
        }
        let slot = self.nodes[at].entry;
        if slot == NIL {
            self.entries.push(entry);
            self.nodes[at].entry = (self.entries.len() - 1) as u32;
            None
        } else {
            Some(std::mem::replace(&mut self.entries[slot as usize], entry))
        }
    }

    pub fn lookup(&self, addr: u32) -> FibLookup<'_> {
        let mut at = 0usize;
        let mut visited = 1;
        let mut best = self.nodes[0].entry;
        for depth in 0..32u8 {
            let next = self.nodes[at].child[bit_at(addr, depth)];
            if next == NIL {
                break;
            }
            at = next as usize;
            visited += 1;
            if self.nodes[at].entry != NIL {
                best = self.nodes[at].entry;
            }
        }
        FibLookup {
            route: (best != NIL).then(|| &self.entries[best as usize]),
            nodes_visited: visited,
        }
    }

    /// Exact-match lookup of a stored (prefix, length).
    pub fn get(&self, prefix: &Prefix) -> Option<&RouteEntry> {
        let mut at = 0usize;
        for depth in 0..prefix.len() {
            let next = self.nodes[at].child[bit_at(prefix.addr(), depth)];
            if next == NIL {
                return None;
            }
            at = next as usize;
        }
        let slot = self.nodes[at].entry;
        (slot != NIL).then(|| &self.entries[slot as usize])
    }
}
