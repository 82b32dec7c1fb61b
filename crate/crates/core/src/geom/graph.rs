use std::collections::BTreeSet;

use serde::{Deserialize, Serialize};

use super::point::{intersect_segments, Point2, Segment};
use crate::Real;

#[derive(Debug, Clone, PartialEq, thiserror::Error)]
pub enum GraphError {
    #[error("edge ({0}, {1}) is a self-loop")]
    SelfLoop(usize, usize),
    #[error("edge ({i}, {j}) references a node outside 0..{nodes}")]
    NodeOutOfRange { i: usize, j: usize, nodes: usize },
    #[error("node {0} has a non-finite coordinate")]
    NonFinite(usize),
}

/// Undirected planar embedded graph.
///
/// Edges are stored as `(i, j)` with `i < j`, without duplicates, in the order
/// they were first given.
#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
pub struct RoadGraph<T> {
    nodes: Vec<Point2<T>>,
    edges: Vec<(usize, usize)>,
}

impl<T: Real> RoadGraph<T> {
    pub fn new(nodes: Vec<Point2<T>>, edges: Vec<(usize, usize)>) -> Result<Self, GraphError> {
        if let Some(i) = nodes.iter().position(|p| !p.is_finite()) {
            return Err(GraphError::NonFinite(i));
        }
        let n = nodes.len();
        let mut seen = BTreeSet::new();
        let mut out = Vec::with_capacity(edges.len());
        for (i, j) in edges {
            if i == j {
                return Err(GraphError::SelfLoop(i, j));
            }
            if i >= n || j >= n {
                return Err(GraphError::NodeOutOfRange { i, j, nodes: n });
            }
            let e = (i.min(j), i.max(j));
            if seen.insert(e) {
                out.push(e);
            }
        }
        Ok(Self { nodes, edges: out })
    }

    /// Builds a graph while silently dropping self-loops and duplicate edges.
    pub(crate) fn from_raw(nodes: Vec<Point2<T>>, edges: impl IntoIterator<Item = (usize, usize)>) -> Self {
        let mut seen = BTreeSet::new();
        let edges = edges
            .into_iter()
            .filter(|&(i, j)| i != j)
            .map(|(i, j)| (i.min(j), i.max(j)))
            .filter(|e| seen.insert(*e))
            .collect();
        Self { nodes, edges }
    }

    pub fn empty() -> Self {
        Self { nodes: Vec::new(), edges: Vec::new() }
    }

    pub fn nodes(&self) -> &[Point2<T>] {
        &self.nodes
    }

    pub fn edges(&self) -> &[(usize, usize)] {
        &self.edges
    }

    pub fn node_count(&self) -> usize {
        self.nodes.len()
    }

    pub fn edge_count(&self) -> usize {
        self.edges.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    pub fn segment(&self, e: (usize, usize)) -> Segment<T> {
        Segment::new(self.nodes[e.0], self.nodes[e.1])
    }

    pub fn segments(&self) -> impl Iterator<Item = Segment<T>> + '_ {
        self.edges.iter().map(|&e| self.segment(e))
    }

    pub fn has_edge(&self, i: usize, j: usize) -> bool {
        let e = (i.min(j), i.max(j));
        self.edges.contains(&e)
    }

    /// Neighbor lists, each sorted by node index.
    pub fn adjacency(&self) -> Vec<Vec<usize>> {
        let mut adj = vec![Vec::new(); self.nodes.len()];
        for &(i, j) in &self.edges {
            adj[i].push(j);
            adj[j].push(i);
        }
        for list in &mut adj {
            list.sort_unstable();
        }
        adj
    }

    pub fn total_length(&self) -> T {
        self.segments().fold(T::zero(), |acc, s| acc + s.length())
    }

    /// Relabels nodes so that new node `k` is old node `order[k]`.
    ///
    /// `order` must be a permutation of `0..node_count`.
    pub fn reorder(&self, order: &[usize]) -> Self {
        assert_eq!(order.len(), self.nodes.len(), "order must cover every node");
        let mut new_index = vec![usize::MAX; self.nodes.len()];
        for (new, &old) in order.iter().enumerate() {
            new_index[old] = new;
        }
        let nodes = order.iter().map(|&old| self.nodes[old]).collect();
        let mut edges: Vec<(usize, usize)> = self
            .edges
            .iter()
            .map(|&(i, j)| {
                let (a, b) = (new_index[i], new_index[j]);
                (a.min(b), a.max(b))
            })
            .collect();
        edges.sort_unstable();
        Self { nodes, edges }
    }

    /// Same graph with the edge list stored in the given order.
    pub fn with_edge_order(&self, order: &[usize]) -> Self {
        Self {
            nodes: self.nodes.clone(),
            edges: order.iter().map(|&k| self.edges[k]).collect(),
        }
    }

    pub fn map_points(&self, f: impl Fn(Point2<T>) -> Point2<T>) -> Self {
        Self {
            nodes: self.nodes.iter().map(|&p| f(p)).collect(),
            edges: self.edges.clone(),
        }
    }

    pub fn cast<U: Real>(&self) -> RoadGraph<U> {
        RoadGraph {
            nodes: self.nodes.iter().map(|p| p.cast()).collect(),
            edges: self.edges.clone(),
        }
    }

    /// Disjoint union; `other`'s node indices are shifted past ours.
    pub fn union(&self, other: &Self) -> Self {
        let off = self.nodes.len();
        let mut nodes = self.nodes.clone();
        nodes.extend_from_slice(&other.nodes);
        let mut edges = self.edges.clone();
        edges.extend(other.edges.iter().map(|&(i, j)| (i + off, j + off)));
        Self { nodes, edges }
    }

    /// Index pairs of edges that cross properly.
    pub fn proper_crossings(&self) -> Vec<(usize, usize)> {
        let segs: Vec<_> = self.segments().collect();
        let mut out = Vec::new();
        for a in 0..segs.len() {
            for b in a + 1..segs.len() {
                if intersect_segments(&segs[a], &segs[b]).is_some() {
                    out.push((a, b));
                }
            }
        }
        out
    }

    /// Smallest pairwise node distance, `None` with fewer than two nodes.
    pub fn min_node_distance(&self) -> Option<T> {
        let mut best: Option<T> = None;
        for i in 0..self.nodes.len() {
            for j in i + 1..self.nodes.len() {
                let d = self.nodes[i].dist(self.nodes[j]);
                best = Some(best.map_or(d, |b| b.min(d)));
            }
        }
        best
    }

    /// Graph equality up to node reindexing, with coordinates compared within `tol`.
    ///
    /// Nodes are matched after sorting both sides top-left first, so this is
    /// only meaningful when nodes are separated by more than `tol`.
    pub fn approx_eq(&self, other: &Self, tol: T) -> bool {
        if self.node_count() != other.node_count() || self.edge_count() != other.edge_count() {
            return false;
        }
        let a = self.sorted_by_position();
        let b = other.sorted_by_position();
        let close = a
            .nodes
            .iter()
            .zip(&b.nodes)
            .all(|(p, q)| (p.x - q.x).abs() <= tol && (p.y - q.y).abs() <= tol);
        if !close {
            return false;
        }
        let ea: BTreeSet<_> = a.edges.iter().copied().collect();
        let eb: BTreeSet<_> = b.edges.iter().copied().collect();
        ea == eb
    }

    fn sorted_by_position(&self) -> Self {
        let mut order: Vec<usize> = (0..self.nodes.len()).collect();
        order.sort_by(|&i, &j| self.nodes[i].top_left_cmp(&self.nodes[j]));
        self.reorder(&order)
    }

    /// Removes nodes without incident edges.
    pub fn without_isolated_nodes(&self) -> Self {
        let adj = self.adjacency();
        let keep: Vec<usize> = (0..self.nodes.len()).filter(|&i| !adj[i].is_empty()).collect();
        let mut index = vec![usize::MAX; self.nodes.len()];
        for (new, &old) in keep.iter().enumerate() {
            index[old] = new;
        }
        Self {
            nodes: keep.iter().map(|&i| self.nodes[i]).collect(),
            edges: self.edges.iter().map(|&(i, j)| (index[i], index[j])).collect(),
        }
    }
}
