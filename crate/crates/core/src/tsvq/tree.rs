//! The binary codebook tree and the tile → leaf assignment.

use std::collections::{BTreeMap, HashMap};

use serde::{Deserialize, Serialize};

use super::distance::{distance_sq_unchecked, NormMode, OpCount};
use super::TsvqError;
use crate::vector::{Centroid, SparseVector};

pub const FORMAT_VERSION: u32 = 1;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct TsvqParams {
    pub n_min: usize,
    pub wcss_min: f64,
    pub h_max: usize,
    pub kmeans_tol: f64,
    pub kmeans_max_iter: usize,
    pub seed: u64,
    /// Size of the map worker pool. Does not affect the result.
    pub num_partitions: usize,
}

impl Default for TsvqParams {
    fn default() -> Self {
        Self {
            n_min: 16,
            wcss_min: 1e-4,
            h_max: 12,
            kmeans_tol: 1e-4,
            kmeans_max_iter: 50,
            seed: 0,
            num_partitions: 1,
        }
    }
}

impl TsvqParams {
    pub fn validate(&self) -> Result<(), TsvqError> {
        let bad = |m: &str| Err(TsvqError::InvalidParams(m.into()));
        if self.n_min < 2 {
            return bad("n_min must be at least 2");
        }
        if self.h_max < 1 {
            return bad("h_max must be at least 1");
        }
        if !(self.kmeans_tol > 0.0) {
            return bad("kmeans_tol must be positive");
        }
        if self.kmeans_max_iter < 1 {
            return bad("kmeans_max_iter must be at least 1");
        }
        if !(self.wcss_min >= 0.0) {
            return bad("wcss_min must be non-negative");
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum LeafReason {
    NMin,
    WcssMin,
    HMax,
    Degenerate,
}

impl LeafReason {
    pub fn code(self) -> u8 {
        match self {
            LeafReason::NMin => 1,
            LeafReason::WcssMin => 2,
            LeafReason::HMax => 3,
            LeafReason::Degenerate => 4,
        }
    }

    pub fn from_code(c: u8) -> Option<Option<Self>> {
        Some(match c {
            0 => None,
            1 => Some(LeafReason::NMin),
            2 => Some(LeafReason::WcssMin),
            3 => Some(LeafReason::HMax),
            4 => Some(LeafReason::Degenerate),
            _ => return None,
        })
    }
}

/// Stopping rule, evaluated in a fixed order: member count, then
/// distortion, then height. A node holding no more than `n_min` points
/// is not split.
pub fn stop_check(member_count: usize, wcss: f64, depth: usize, params: &TsvqParams) -> Option<LeafReason> {
    if member_count <= params.n_min {
        Some(LeafReason::NMin)
    } else if wcss < params.wcss_min {
        Some(LeafReason::WcssMin)
    } else if depth >= params.h_max {
        Some(LeafReason::HMax)
    } else {
        None
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct TsvqNode {
    pub node_id: u64,
    pub parent: Option<u64>,
    /// Root-to-node path as '0'/'1' characters; empty at the root.
    pub codeword: String,
    pub centroid: Centroid,
    pub member_count: u64,
    pub wcss: f64,
    pub children: Option<[u64; 2]>,
    pub leaf_reason: Option<LeafReason>,
}

impl TsvqNode {
    pub fn depth(&self) -> usize {
        self.codeword.len()
    }

    pub fn is_leaf(&self) -> bool {
        self.children.is_none()
    }
}

/// Nodes are addressed by id, which is also their position in `nodes`.
#[derive(Debug, Clone, PartialEq)]
pub struct TsvqTree {
    pub params: TsvqParams,
    pub dim: usize,
    pub nodes: Vec<TsvqNode>,
    pub total_points: u64,
    pub version: u32,
}

/// Leaf reached by a point, with the cost of getting there.
#[derive(Debug, Clone, PartialEq)]
pub struct Encoded {
    pub leaf: u64,
    pub codeword: String,
    pub ops: OpCount,
}

impl TsvqTree {
    pub const ROOT: u64 = 0;

    pub fn root(&self) -> &TsvqNode {
        &self.nodes[0]
    }

    pub fn node(&self, id: u64) -> Option<&TsvqNode> {
        self.nodes.get(id as usize)
    }

    pub fn leaves(&self) -> impl Iterator<Item = &TsvqNode> {
        self.nodes.iter().filter(|n| n.is_leaf())
    }

    pub fn leaf_count(&self) -> usize {
        self.leaves().count()
    }

    pub fn height(&self) -> usize {
        self.nodes.iter().map(|n| n.depth()).max().unwrap_or(0)
    }

    /// Descends by minimum distortion (ties to the '0' child), evaluating two
    /// distances per level.
    pub fn encode(&self, x: &SparseVector) -> Result<Encoded, TsvqError> {
        self.encode_with(x, NormMode::Cached)
    }

    pub fn encode_with(&self, x: &SparseVector, mode: NormMode) -> Result<Encoded, TsvqError> {
        if x.dim() != self.dim {
            return Err(TsvqError::InvalidInput(format!("descriptor dimension {} != index dimension {}", x.dim(), self.dim)));
        }
        let mut ops = OpCount::default();
        let mut node = self.root();
        while let Some([c0, c1]) = node.children {
            let a = &self.nodes[c0 as usize];
            let b = &self.nodes[c1 as usize];
            let d0 = distance_sq_unchecked(x, &a.centroid, mode, &mut ops);
            let d1 = distance_sq_unchecked(x, &b.centroid, mode, &mut ops);
            node = if d0 <= d1 { a } else { b };
        }
        Ok(Encoded { leaf: node.node_id, codeword: node.codeword.clone(), ops })
    }

    /// Checks every structural invariant of the tree.
    pub fn validate(&self) -> Result<(), TsvqError> {
        let bad = |m: String| Err(TsvqError::Format(m));
        if self.version != FORMAT_VERSION {
            return bad(format!("unsupported version {}", self.version));
        }
        self.params.validate().or_else(|e| bad(e.to_string()))?;
        if self.nodes.is_empty() {
            return bad("tree has no nodes".into());
        }
        let root = self.root();
        if root.parent.is_some() || !root.codeword.is_empty() {
            return bad("malformed root".into());
        }
        if root.member_count != self.total_points {
            return bad(format!("root holds {} points, tree says {}", root.member_count, self.total_points));
        }
        let mut seen_child = vec![false; self.nodes.len()];
        let mut leaf_total = 0u64;
        for (pos, n) in self.nodes.iter().enumerate() {
            if n.node_id != pos as u64 {
                return bad(format!("node at position {pos} has id {}", n.node_id));
            }
            if n.centroid.dim() != self.dim {
                return bad(format!("node {pos}: centroid dimension {}", n.centroid.dim()));
            }
            if !n.codeword.bytes().all(|b| b == b'0' || b == b'1') {
                return bad(format!("node {pos}: bad codeword"));
            }
            if n.depth() > self.params.h_max {
                return bad(format!("node {pos} deeper than h_max"));
            }
            match n.children {
                None => {
                    if n.leaf_reason.is_none() {
                        return bad(format!("leaf {pos} has no leaf reason"));
                    }
                    leaf_total += n.member_count;
                }
                Some(kids) => {
                    if n.leaf_reason.is_some() {
                        return bad(format!("internal node {pos} has a leaf reason"));
                    }
                    let mut sum = 0;
                    for (bit, &k) in kids.iter().enumerate() {
                        let Some(child) = self.node(k) else {
                            return bad(format!("node {pos}: missing child {k}"));
                        };
                        if k as usize <= pos || seen_child[k as usize] {
                            return bad(format!("node {pos}: child {k} out of order or shared"));
                        }
                        seen_child[k as usize] = true;
                        if child.parent != Some(pos as u64) || child.codeword != format!("{}{bit}", n.codeword) {
                            return bad(format!("node {k}: inconsistent with parent {pos}"));
                        }
                        sum += child.member_count;
                    }
                    if sum != n.member_count {
                        return bad(format!("node {pos}: children hold {sum} of {} points", n.member_count));
                    }
                }
            }
        }
        if seen_child.iter().skip(1).any(|s| !s) {
            return bad("unreachable node".into());
        }
        if leaf_total != self.total_points {
            return bad(format!("leaves hold {leaf_total} of {} points", self.total_points));
        }
        Ok(())
    }
}

/// Tile id → leaf node id.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct Assignment {
    pub leaves: BTreeMap<String, u64>,
}

impl Assignment {
    pub fn len(&self) -> usize {
        self.leaves.len()
    }

    pub fn is_empty(&self) -> bool {
        self.leaves.is_empty()
    }

    pub fn leaf_of(&self, tile_id: &str) -> Option<u64> {
        self.leaves.get(tile_id).copied()
    }

    pub fn codeword<'t>(&self, tile_id: &str, tree: &'t TsvqTree) -> Option<&'t str> {
        self.leaf_of(tile_id).and_then(|id| tree.node(id)).map(|n| n.codeword.as_str())
    }

    /// Leaf id → member tile ids in ascending order.
    pub fn members(&self) -> HashMap<u64, Vec<String>> {
        let mut out: HashMap<u64, Vec<String>> = HashMap::new();
        for (tile, &leaf) in &self.leaves {
            out.entry(leaf).or_default().push(tile.clone());
        }
        out
    }

    /// Every tile maps to a leaf whose member count matches.
    pub fn validate(&self, tree: &TsvqTree) -> Result<(), TsvqError> {
        let mut counts: HashMap<u64, u64> = HashMap::new();
        for (tile, &leaf) in &self.leaves {
            match tree.node(leaf) {
                Some(n) if n.is_leaf() => *counts.entry(leaf).or_default() += 1,
                _ => return Err(TsvqError::Format(format!("{tile} assigned to non-leaf {leaf}"))),
            }
        }
        if self.leaves.len() as u64 != tree.total_points {
            return Err(TsvqError::Format(format!(
                "{} assignments for {} points",
                self.leaves.len(),
                tree.total_points
            )));
        }
        for n in tree.leaves() {
            if counts.get(&n.node_id).copied().unwrap_or(0) != n.member_count {
                return Err(TsvqError::Format(format!("leaf {} member count mismatch", n.node_id)));
            }
        }
        Ok(())
    }
}
