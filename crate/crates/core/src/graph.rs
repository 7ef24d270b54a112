//! Bipartite mask graphs and reconstruction orderings.
//!
//! Row `i` and column `j` of the matrix become nodes on opposite sides of a
//! bipartite graph, with one edge per observed position. An ordering of all
//! nodes orients each edge from the earlier endpoint to the later one; a node
//! can be solved for once it has `r` incoming edges.
//!
//! Internally nodes are addressed by a dense id: rows occupy `0..n1` and
//! columns `n1..n1 + n2`. That id order is also the tie-break order.

use std::collections::BTreeSet;
use std::fmt;

use crate::matrix::Mask;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub enum Side {
    Row,
    Col,
}

impl Side {
    pub fn opposite(self) -> Self {
        match self {
            Side::Row => Side::Col,
            Side::Col => Side::Row,
        }
    }
}

/// A row or column node. `index` is 0-based within its side.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub struct NodeId {
    pub side: Side,
    pub index: usize,
}

impl NodeId {
    pub const fn row(index: usize) -> Self {
        Self {
            side: Side::Row,
            index,
        }
    }

    pub const fn col(index: usize) -> Self {
        Self {
            side: Side::Col,
            index,
        }
    }

    fn dense(self, n1: usize) -> usize {
        match self.side {
            Side::Row => self.index,
            Side::Col => n1 + self.index,
        }
    }

    fn from_dense(id: usize, n1: usize) -> Self {
        if id < n1 {
            Self::row(id)
        } else {
            Self::col(id - n1)
        }
    }
}

impl fmt::Display for NodeId {
    /// 1-based, e.g. `r3` or `c12`.
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self.side {
            Side::Row => write!(f, "r{}", self.index + 1),
            Side::Col => write!(f, "c{}", self.index + 1),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct MaskGraph {
    n1: usize,
    n2: usize,
    adjacency: Vec<Vec<usize>>,
    n_edges: usize,
}

impl MaskGraph {
    pub fn n_rows(&self) -> usize {
        self.n1
    }

    pub fn n_cols(&self) -> usize {
        self.n2
    }

    pub fn n_nodes(&self) -> usize {
        self.n1 + self.n2
    }

    pub fn n_edges(&self) -> usize {
        self.n_edges
    }

    pub fn contains(&self, node: NodeId) -> bool {
        match node.side {
            Side::Row => node.index < self.n1,
            Side::Col => node.index < self.n2,
        }
    }

    pub fn degree(&self, node: NodeId) -> usize {
        self.adjacency[node.dense(self.n1)].len()
    }

    /// Neighbors in ascending index order.
    pub fn neighbors(&self, node: NodeId) -> impl Iterator<Item = NodeId> + '_ {
        self.adjacency[node.dense(self.n1)]
            .iter()
            .map(move |&v| NodeId::from_dense(v, self.n1))
    }

    pub fn has_edge(&self, a: NodeId, b: NodeId) -> bool {
        self.adjacency[a.dense(self.n1)]
            .binary_search(&b.dense(self.n1))
            .is_ok()
    }

    /// All nodes in tie-break order: rows ascending, then columns ascending.
    pub fn nodes(&self) -> impl Iterator<Item = NodeId> + '_ {
        (0..self.n_nodes()).map(move |v| NodeId::from_dense(v, self.n1))
    }

    pub fn nodes_on(&self, side: Side) -> impl Iterator<Item = NodeId> {
        let n = match side {
            Side::Row => self.n1,
            Side::Col => self.n2,
        };
        (0..n).map(move |index| NodeId { side, index })
    }
}

pub fn build_mask_graph(mask: &Mask) -> MaskGraph {
    let (n1, n2) = (mask.n_rows(), mask.n_cols());
    let mut adjacency = vec![Vec::new(); n1 + n2];
    for (i, j) in mask.iter() {
        adjacency[i].push(n1 + j);
        adjacency[n1 + j].push(i);
    }
    for list in &mut adjacency {
        list.sort_unstable();
    }
    MaskGraph {
        n1,
        n2,
        adjacency,
        n_edges: mask.len(),
    }
}

/// A permutation of all nodes of a mask graph.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Ordering {
    n1: usize,
    sequence: Vec<NodeId>,
    position: Vec<usize>,
}

impl Ordering {
    /// Returns `None` unless `sequence` lists every node of an `n1 x n2`
    /// graph exactly once.
    pub fn new(n1: usize, n2: usize, sequence: Vec<NodeId>) -> Option<Self> {
        if sequence.len() != n1 + n2 {
            return None;
        }
        let mut position = vec![usize::MAX; n1 + n2];
        for (p, node) in sequence.iter().enumerate() {
            let in_range = match node.side {
                Side::Row => node.index < n1,
                Side::Col => node.index < n2,
            };
            if !in_range {
                return None;
            }
            let slot = &mut position[node.dense(n1)];
            if *slot != usize::MAX {
                return None;
            }
            *slot = p;
        }
        Some(Self {
            n1,
            sequence,
            position,
        })
    }

    pub fn sequence(&self) -> &[NodeId] {
        &self.sequence
    }

    pub fn len(&self) -> usize {
        self.sequence.len()
    }

    pub fn is_empty(&self) -> bool {
        self.sequence.is_empty()
    }

    /// 0-based position of `node`.
    pub fn position(&self, node: NodeId) -> usize {
        self.position[node.dense(self.n1)]
    }

    pub fn into_sequence(self) -> Vec<NodeId> {
        self.sequence
    }

    fn from_sequence_unchecked(n1: usize, sequence: Vec<NodeId>) -> Self {
        let mut position = vec![0; sequence.len()];
        for (p, node) in sequence.iter().enumerate() {
            position[node.dense(n1)] = p;
        }
        Self {
            n1,
            sequence,
            position,
        }
    }
}

/// Smallest-last (degeneracy) ordering.
///
/// Repeatedly removes a minimum-degree node of the remaining graph and gives
/// it the last free position. Among tied nodes the one latest in tie-break
/// order is removed first, so ties come out rows-before-columns and
/// lowest-index-first in the final ordering.
pub fn smallest_last_order(graph: &MaskGraph) -> Ordering {
    let n = graph.n_nodes();
    let mut degree: Vec<usize> = graph.adjacency.iter().map(Vec::len).collect();
    let max_degree = degree.iter().copied().max().unwrap_or(0);
    let mut buckets: Vec<BTreeSet<usize>> = vec![BTreeSet::new(); max_degree + 1];
    for (v, &d) in degree.iter().enumerate() {
        buckets[d].insert(v);
    }
    let mut removed = vec![false; n];
    let mut sequence = vec![NodeId::row(0); n];
    let mut lowest = 0;
    for slot in (0..n).rev() {
        while buckets[lowest].is_empty() {
            lowest += 1;
        }
        let v = buckets[lowest].pop_last().expect("non-empty bucket");
        removed[v] = true;
        sequence[slot] = NodeId::from_dense(v, graph.n1);
        for &w in &graph.adjacency[v] {
            if removed[w] {
                continue;
            }
            let d = degree[w];
            buckets[d].remove(&w);
            buckets[d - 1].insert(w);
            degree[w] = d - 1;
            if d - 1 < lowest {
                lowest = d - 1;
            }
        }
    }
    Ordering::from_sequence_unchecked(graph.n1, sequence)
}

/// Moves one node according to the repositioning rules.
///
/// A node of degree at most `rank` goes immediately after its latest
/// neighbor; a node of larger degree goes immediately after the neighbor that
/// is `rank`-th earliest. Isolated nodes (and `rank == 0`) are left alone.
pub fn reposition_node(graph: &MaskGraph, order: &Ordering, node: NodeId, rank: usize) -> Ordering {
    let degree = graph.degree(node);
    if degree == 0 || rank == 0 {
        return order.clone();
    }
    let mut neighbor_positions: Vec<usize> =
        graph.neighbors(node).map(|v| order.position(v)).collect();
    neighbor_positions.sort_unstable();
    let anchor_pos = if degree <= rank {
        neighbor_positions[degree - 1]
    } else {
        neighbor_positions[rank - 1]
    };
    let anchor = order.sequence[anchor_pos];
    let mut sequence = order.sequence.clone();
    sequence.remove(order.position(node));
    let anchor_now = sequence
        .iter()
        .position(|&v| v == anchor)
        .expect("anchor is a neighbor, never the moved node");
    sequence.insert(anchor_now + 1, node);
    Ordering::from_sequence_unchecked(graph.n1, sequence)
}

/// Applies [`reposition_node`] to every node, visiting nodes in the order
/// they appear in `order` at the start of each pass.
pub fn adjust_order_passes(
    graph: &MaskGraph,
    order: &Ordering,
    rank: usize,
    passes: usize,
) -> Ordering {
    let mut current = order.clone();
    for _ in 0..passes {
        let visit: Vec<NodeId> = current.sequence.clone();
        for node in visit {
            current = reposition_node(graph, &current, node, rank);
        }
    }
    current
}

/// One repositioning pass.
pub fn adjust_order(graph: &MaskGraph, order: &Ordering, rank: usize) -> Ordering {
    adjust_order_passes(graph, order, rank, 1)
}

/// Number of neighbors of `node` placed before it.
pub fn implied_indegree(graph: &MaskGraph, order: &Ordering, node: NodeId) -> usize {
    let p = order.position(node);
    graph
        .neighbors(node)
        .filter(|&v| order.position(v) < p)
        .count()
}

/// Total number of edges that would have to be added for every node after
/// the first `rank` positions to have `rank` incoming edges.
pub fn order_deficiency(graph: &MaskGraph, order: &Ordering, rank: usize) -> usize {
    order
        .sequence
        .iter()
        .skip(rank)
        .map(|&u| rank.saturating_sub(implied_indegree(graph, order, u)))
        .sum()
}
