//! Bulk-built R-tree variant over the nonempty bounding boxes of a store.
//!
//! A set of `W` refs becomes a single leaf when `W <= f`. Otherwise it is cut
//! into six groups of `ceil(W/6)` refs, each chosen from what the previous
//! groups left behind:
//!
//! 1. smallest `top_rt`
//! 2. smallest `left_mz`
//! 3. largest `bottom_rt`
//! 4. largest `right_mz`
//! 5. smallest `left_mz`
//! 6. everything else
//!
//! and each nonempty group is built recursively into a child. Ties on a key are
//! broken by `(strip_id, offset)`, which makes the build deterministic.

use std::cmp::Ordering;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::model::Rect;

pub const INDEX_MAGIC: [u8; 8] = *b"MZRTIDX0";
pub const INDEX_VERSION: u16 = 1;

const BBREF_BYTES: usize = 28;
const NODE_HEADER_BYTES: usize = 24;
const FILE_HEADER_BYTES: usize = 8 + 2 + 2 + 4 + 4 + 8 + 8;

/// Index entry pointing at one stored bounding box.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct BBRef {
    pub top_rt: u32,
    pub bottom_rt: u32,
    pub left_mz: u32,
    pub right_mz: u32,
    pub strip_id: u32,
    /// Byte offset of the BB record within its strip file.
    pub offset: u64,
}

impl BBRef {
    pub fn rect(&self) -> Rect {
        Rect {
            row_lo: self.top_rt,
            row_hi: self.bottom_rt,
            col_lo: self.left_mz,
            col_hi: self.right_mz,
        }
    }

    #[inline]
    pub fn location(&self) -> (u32, u64) {
        (self.strip_id, self.offset)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct IndexParams {
    /// Internal node fanout.
    pub d: u32,
    /// Leaf capacity.
    pub f: u32,
}

impl Default for IndexParams {
    fn default() -> Self {
        IndexParams { d: 6, f: 200 }
    }
}

impl IndexParams {
    pub fn validate(&self) -> Result<()> {
        if self.d < 2 || self.f < 1 {
            return Err(Error::invalid(format!(
                "index params need d >= 2 and f >= 1, got d={} f={}",
                self.d, self.f
            )));
        }
        Ok(())
    }
}

/// Ordering used by one partition step.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum GroupKey {
    SmallestTopRt,
    SmallestLeftMz,
    LargestBottomRt,
    LargestRightMz,
}

impl GroupKey {
    fn cmp(self, a: &BBRef, b: &BBRef) -> Ordering {
        let primary = match self {
            GroupKey::SmallestTopRt => a.top_rt.cmp(&b.top_rt),
            GroupKey::SmallestLeftMz => a.left_mz.cmp(&b.left_mz),
            GroupKey::LargestBottomRt => b.bottom_rt.cmp(&a.bottom_rt),
            GroupKey::LargestRightMz => b.right_mz.cmp(&a.right_mz),
        };
        primary.then_with(|| a.location().cmp(&b.location()))
    }
}

/// Keys for groups 1 through 5; group 6 takes the remainder.
pub const GROUP_KEYS: [GroupKey; 5] = [
    GroupKey::SmallestTopRt,
    GroupKey::SmallestLeftMz,
    GroupKey::LargestBottomRt,
    GroupKey::LargestRightMz,
    GroupKey::SmallestLeftMz,
];

/// Splits `refs` into six groups. Groups 1 to 5 get `ceil(W/6)` refs each while
/// refs remain; trailing groups may be empty.
pub fn partition_groups(mut refs: Vec<BBRef>) -> [Vec<BBRef>; 6] {
    let q = refs.len().div_ceil(6);
    let mut groups: [Vec<BBRef>; 6] = Default::default();
    for (group, key) in groups.iter_mut().zip(GROUP_KEYS) {
        refs.sort_unstable_by(|a, b| key.cmp(a, b));
        let take = q.min(refs.len());
        let rest = refs.split_off(take);
        *group = std::mem::replace(&mut refs, rest);
    }
    refs.sort_unstable_by_key(|r| r.location());
    groups[5] = refs;
    groups
}

#[derive(Debug, Clone, PartialEq)]
pub enum NodeKind {
    /// Indices of child nodes in [`RTree::nodes`].
    Internal(Vec<u32>),
    Leaf(Vec<BBRef>),
}

#[derive(Debug, Clone, PartialEq)]
pub struct RTreeNode {
    pub mbr: Rect,
    pub kind: NodeKind,
}

/// Arena-allocated tree; nodes are stored in preorder with the root at 0.
#[derive(Debug, Clone, PartialEq)]
pub struct RTree {
    pub params: IndexParams,
    /// Identifies the store build this index belongs to.
    pub generation: u64,
    pub nodes: Vec<RTreeNode>,
}

/// Counters from one index lookup.
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq)]
pub struct IndexStats {
    pub nodes_visited: u64,
}

fn mbr_of(refs: &[BBRef]) -> Rect {
    refs.iter()
        .map(BBRef::rect)
        .reduce(|a, b| a.union(&b))
        .expect("nonempty group")
}

impl RTree {
    /// Builds the tree over `refs`. An empty set gives a tree with no nodes.
    pub fn build(refs: Vec<BBRef>, params: IndexParams) -> Result<RTree> {
        params.validate()?;
        let mut tree = RTree {
            params,
            generation: 0,
            nodes: Vec::new(),
        };
        if !refs.is_empty() {
            tree.build_node(refs);
        }
        Ok(tree)
    }

    fn build_node(&mut self, mut refs: Vec<BBRef>) -> u32 {
        let id = self.nodes.len() as u32;
        if refs.len() <= self.params.f as usize {
            refs.sort_unstable_by_key(|r| r.location());
            self.nodes.push(RTreeNode {
                mbr: mbr_of(&refs),
                kind: NodeKind::Leaf(refs),
            });
            return id;
        }
        let mbr = mbr_of(&refs);
        let groups: Vec<Vec<BBRef>> = split(refs, self.params.d as usize)
            .into_iter()
            .filter(|g| !g.is_empty())
            .collect();
        if groups.len() == 1 {
            let only = groups.into_iter().next().unwrap();
            return self.build_node(only);
        }
        self.nodes.push(RTreeNode {
            mbr,
            kind: NodeKind::Internal(Vec::new()),
        });
        let children: Vec<u32> = groups.into_iter().map(|g| self.build_node(g)).collect();
        self.nodes[id as usize].kind = NodeKind::Internal(children);
        id
    }

    pub fn root(&self) -> Option<&RTreeNode> {
        self.nodes.first()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    /// Number of edges on the longest root-to-leaf path; 0 for a single leaf.
    pub fn height(&self) -> u32 {
        fn depth(tree: &RTree, id: usize) -> u32 {
            match &tree.nodes[id].kind {
                NodeKind::Leaf(_) => 0,
                NodeKind::Internal(ch) => {
                    1 + ch.iter().map(|&c| depth(tree, c as usize)).max().unwrap_or(0)
                }
            }
        }
        if self.nodes.is_empty() {
            0
        } else {
            depth(self, 0)
        }
    }

    pub fn leaves(&self) -> impl Iterator<Item = &[BBRef]> {
        self.nodes.iter().filter_map(|n| match &n.kind {
            NodeKind::Leaf(refs) => Some(refs.as_slice()),
            NodeKind::Internal(_) => None,
        })
    }

    pub fn len(&self) -> usize {
        self.leaves().map(<[BBRef]>::len).sum()
    }

    /// All refs whose rectangles intersect the closed rect `q`, sorted by
    /// `(strip_id, offset)`. Subtrees whose MBR misses `q` are not visited.
    pub fn query(&self, q: &Rect) -> (Vec<BBRef>, IndexStats) {
        let mut out = Vec::new();
        let mut stats = IndexStats::default();
        if self.nodes.is_empty() {
            return (out, stats);
        }
        let mut stack = vec![0u32];
        while let Some(id) = stack.pop() {
            let node = &self.nodes[id as usize];
            stats.nodes_visited += 1;
            if !node.mbr.intersects(q) {
                continue;
            }
            match &node.kind {
                NodeKind::Internal(children) => {
                    stack.extend(
                        children
                            .iter()
                            .rev()
                            .filter(|&&c| self.nodes[c as usize].mbr.intersects(q)),
                    );
                }
                NodeKind::Leaf(refs) => {
                    out.extend(refs.iter().filter(|r| r.rect().intersects(q)));
                }
            }
        }
        out.sort_unstable_by_key(BBRef::location);
        (out, stats)
    }

    /// Size of the fixed slot area following each node header.
    fn slot_bytes(params: &IndexParams) -> usize {
        (params.d as usize * 4).max(params.f as usize * BBREF_BYTES)
    }

    /// Serializes to the `index.bin` format: file header, fixed-size preorder
    /// node records, CRC32 trailer.
    pub fn serialize(&self) -> Vec<u8> {
        let slot = Self::slot_bytes(&self.params);
        let record = NODE_HEADER_BYTES + slot;
        let mut out = Vec::with_capacity(FILE_HEADER_BYTES + self.nodes.len() * record + 4);
        out.extend_from_slice(&INDEX_MAGIC);
        out.extend_from_slice(&INDEX_VERSION.to_le_bytes());
        out.extend_from_slice(&0u16.to_le_bytes());
        out.extend_from_slice(&self.params.d.to_le_bytes());
        out.extend_from_slice(&self.params.f.to_le_bytes());
        out.extend_from_slice(&self.generation.to_le_bytes());
        out.extend_from_slice(&(self.nodes.len() as u64).to_le_bytes());
        for node in &self.nodes {
            let start = out.len();
            let (kind, count) = match &node.kind {
                NodeKind::Internal(ch) => (0u8, ch.len()),
                NodeKind::Leaf(refs) => (1u8, refs.len()),
            };
            out.push(kind);
            out.extend_from_slice(&[0u8; 3]);
            out.extend_from_slice(&(count as u32).to_le_bytes());
            for v in [node.mbr.row_lo, node.mbr.row_hi, node.mbr.col_lo, node.mbr.col_hi] {
                out.extend_from_slice(&v.to_le_bytes());
            }
            match &node.kind {
                NodeKind::Internal(ch) => {
                    for c in ch {
                        out.extend_from_slice(&c.to_le_bytes());
                    }
                }
                NodeKind::Leaf(refs) => {
                    for r in refs {
                        for v in [r.top_rt, r.bottom_rt, r.left_mz, r.right_mz, r.strip_id] {
                            out.extend_from_slice(&v.to_le_bytes());
                        }
                        out.extend_from_slice(&r.offset.to_le_bytes());
                    }
                }
            }
            out.resize(start + record, 0);
        }
        let crc = crc32fast::hash(&out);
        out.extend_from_slice(&crc.to_le_bytes());
        out
    }

    pub fn load(bytes: &[u8]) -> Result<RTree> {
        if bytes.len() < FILE_HEADER_BYTES + 4 {
            return Err(Error::corruption(0, "truncated index header"));
        }
        if bytes[0..8] != INDEX_MAGIC {
            return Err(Error::corruption(0, "bad index magic"));
        }
        let u16_at = |at: usize| u16::from_le_bytes(bytes[at..at + 2].try_into().unwrap());
        let u32_at = |at: usize| u32::from_le_bytes(bytes[at..at + 4].try_into().unwrap());
        let u64_at = |at: usize| u64::from_le_bytes(bytes[at..at + 8].try_into().unwrap());
        let version = u16_at(8);
        if version != INDEX_VERSION {
            return Err(Error::corruption(8, format!("unsupported index version {version}")));
        }
        let params = IndexParams {
            d: u32_at(12),
            f: u32_at(16),
        };
        params
            .validate()
            .map_err(|e| Error::corruption(12, e.to_string()))?;
        let generation = u64_at(20);
        let count = u64_at(28);
        let record = NODE_HEADER_BYTES + Self::slot_bytes(&params);
        let expected = (count as u128) * record as u128 + FILE_HEADER_BYTES as u128 + 4;
        if expected != bytes.len() as u128 {
            return Err(Error::corruption(
                28,
                format!("index holds {} bytes, {count} nodes need {expected}", bytes.len()),
            ));
        }
        let body = bytes.len() - 4;
        if crc32fast::hash(&bytes[..body]) != u32_at(body) {
            return Err(Error::corruption(body as u64, "index checksum mismatch"));
        }

        let count = count as usize;
        let mut nodes = Vec::with_capacity(count);
        for i in 0..count {
            let at = FILE_HEADER_BYTES + i * record;
            let bad = |msg: &str| Error::corruption(at as u64, msg.to_string());
            let kind = bytes[at];
            let n = u32_at(at + 4) as usize;
            let mbr = Rect {
                row_lo: u32_at(at + 8),
                row_hi: u32_at(at + 12),
                col_lo: u32_at(at + 16),
                col_hi: u32_at(at + 20),
            };
            let slots = at + NODE_HEADER_BYTES;
            let kind = match kind {
                0 => {
                    if n > params.d as usize || n < 2 {
                        return Err(bad("internal node child count out of range"));
                    }
                    let children: Vec<u32> = (0..n).map(|j| u32_at(slots + 4 * j)).collect();
                    if children.iter().any(|&c| c as usize <= i || c as usize >= count) {
                        return Err(bad("child index out of preorder range"));
                    }
                    NodeKind::Internal(children)
                }
                1 => {
                    if n > params.f as usize || n == 0 {
                        return Err(bad("leaf ref count out of range"));
                    }
                    let refs = (0..n)
                        .map(|j| {
                            let r = slots + j * BBREF_BYTES;
                            BBRef {
                                top_rt: u32_at(r),
                                bottom_rt: u32_at(r + 4),
                                left_mz: u32_at(r + 8),
                                right_mz: u32_at(r + 12),
                                strip_id: u32_at(r + 16),
                                offset: u64_at(r + 20),
                            }
                        })
                        .collect();
                    NodeKind::Leaf(refs)
                }
                other => return Err(bad(&format!("unknown node kind {other}"))),
            };
            nodes.push(RTreeNode { mbr, kind });
        }
        Ok(RTree {
            params,
            generation,
            nodes,
        })
    }
}

fn split(refs: Vec<BBRef>, d: usize) -> Vec<Vec<BBRef>> {
    if d == 6 {
        return partition_groups(refs).into_iter().collect();
    }
    // Other fanouts reuse the key cycle: d - 1 keyed groups plus the remainder.
    let mut refs = refs;
    let q = refs.len().div_ceil(d);
    let mut groups = Vec::with_capacity(d);
    for i in 0..d - 1 {
        let key = GROUP_KEYS[i % GROUP_KEYS.len()];
        refs.sort_unstable_by(|a, b| key.cmp(a, b));
        let rest = refs.split_off(q.min(refs.len()));
        groups.push(std::mem::replace(&mut refs, rest));
    }
    groups.push(refs);
    groups
}
