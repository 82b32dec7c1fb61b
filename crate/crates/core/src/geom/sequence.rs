//! Canonical BFS ordering and the stepwise sequence encoding used by the
//! autoregressive decoders.

use std::cmp::Ordering;
use std::collections::VecDeque;

use serde::{Deserialize, Serialize};

use super::graph::RoadGraph;
use super::point::Point2;
use crate::Real;

/// Clockwise angle from `reference` to `v` in `[0, 2pi)`, with `y` pointing down.
fn clockwise_angle<T: Real>(reference: Point2<T>, v: Point2<T>) -> T {
    let tau = T::lit(std::f64::consts::TAU);
    let mut a = v.y.atan2(v.x) - reference.y.atan2(reference.x);
    while a < T::zero() {
        a += tau;
    }
    while a >= tau {
        a -= tau;
    }
    a
}

/// Deterministic BFS node order.
///
/// Each traversal (the first and every restart for a new component) begins at
/// the unvisited node with the smallest `(y, x)`. Unvisited neighbors are
/// enqueued clockwise starting from the direction back along the edge the
/// node was reached by; for a traversal root the reference direction is up,
/// `(0, -1)`. Returns `order` with `order[k]` = original index of the k-th node.
pub fn canonical_order<T: Real>(g: &RoadGraph<T>) -> Vec<usize> {
    let n = g.node_count();
    let pts = g.nodes();
    let adj = g.adjacency();
    let mut by_position: Vec<usize> = (0..n).collect();
    by_position.sort_by(|&a, &b| pts[a].top_left_cmp(&pts[b]));

    let mut discovered = vec![false; n];
    let mut parent: Vec<Option<usize>> = vec![None; n];
    let mut order = Vec::with_capacity(n);
    let up = Point2::new(T::zero(), -T::one());

    for &root in &by_position {
        if discovered[root] {
            continue;
        }
        discovered[root] = true;
        let mut queue = VecDeque::from([root]);
        while let Some(u) = queue.pop_front() {
            order.push(u);
            let reference = match parent[u] {
                Some(p) => pts[p] - pts[u],
                None => up,
            };
            let mut next: Vec<(T, T, usize)> = adj[u]
                .iter()
                .filter(|&&w| !discovered[w])
                .map(|&w| {
                    let d = pts[w] - pts[u];
                    (clockwise_angle(reference, d), d.norm_sq(), w)
                })
                .collect();
            next.sort_by(|a, b| {
                a.0.partial_cmp(&b.0)
                    .unwrap_or(Ordering::Equal)
                    .then(a.1.partial_cmp(&b.1).unwrap_or(Ordering::Equal))
                    .then(pts[a.2].top_left_cmp(&pts[b.2]))
            });
            for (_, _, w) in next {
                discovered[w] = true;
                parent[w] = Some(u);
                queue.push_back(w);
            }
        }
    }
    order
}

/// Reorders `g` into canonical BFS order.
pub fn canonicalize<T: Real>(g: &RoadGraph<T>) -> RoadGraph<T> {
    g.reorder(&canonical_order(g))
}

/// Largest index distance `j - i` over all edges of an ordered graph (0 when edgeless).
pub fn max_span<T: Real>(g: &RoadGraph<T>) -> usize {
    g.edges().iter().map(|&(i, j)| j - i).max().unwrap_or(0)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SequenceStep<T> {
    /// Bit `j` marks an edge to the node emitted `1 + j` steps earlier.
    pub adjacency: Vec<bool>,
    pub coords: Point2<T>,
    pub stop: bool,
}

/// BFS-ordered encoding of a graph, terminated by a single stop step.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CanonicalSequence<T> {
    pub steps: Vec<SequenceStep<T>>,
    pub frontier_size: usize,
}

/// Model-space step: soft adjacency values and stop probability in `[0, 1]`.
#[derive(Debug, Clone, PartialEq)]
pub struct SoftStep<T> {
    pub adjacency: Vec<T>,
    pub stop: T,
    pub coords: Point2<T>,
}

#[derive(Debug, Clone, PartialEq, Eq, thiserror::Error)]
pub enum SequenceError {
    #[error("edge ({i}, {j}) spans {span} positions, frontier size is {frontier}")]
    FrontierOverflow { i: usize, j: usize, span: usize, frontier: usize },
    #[error("frontier size must be at least 1")]
    ZeroFrontier,
    #[error("malformed sequence: {0}")]
    Malformed(String),
}

impl<T: Real> CanonicalSequence<T> {
    pub fn len(&self) -> usize {
        self.steps.len()
    }

    pub fn is_empty(&self) -> bool {
        self.steps.is_empty()
    }

    pub fn node_count(&self) -> usize {
        self.steps.len().saturating_sub(1)
    }

    pub fn validate(&self) -> Result<(), SequenceError> {
        let m = self.frontier_size;
        let last = self.steps.len().checked_sub(1).ok_or_else(|| SequenceError::Malformed("no steps".into()))?;
        for (t, s) in self.steps.iter().enumerate() {
            if s.adjacency.len() != m {
                return Err(SequenceError::Malformed(format!("step {t} has {} adjacency bits, expected {m}", s.adjacency.len())));
            }
            if s.stop != (t == last) {
                return Err(SequenceError::Malformed(format!("stop flag misplaced at step {t}")));
            }
            if s.stop && (s.adjacency.iter().any(|&b| b) || s.coords != Point2::origin()) {
                return Err(SequenceError::Malformed("stop step must be all zero".into()));
            }
            if let Some(j) = s.adjacency.iter().enumerate().filter(|(_, &b)| b).map(|(j, _)| j).find(|&j| j + 1 > t) {
                return Err(SequenceError::Malformed(format!("step {t} bit {j} points before the first node")));
            }
        }
        Ok(())
    }

    pub fn to_soft(&self) -> Vec<SoftStep<T>> {
        let bit = |b: bool| if b { T::one() } else { T::zero() };
        self.steps
            .iter()
            .map(|s| SoftStep {
                adjacency: s.adjacency.iter().map(|&b| bit(b)).collect(),
                stop: bit(s.stop),
                coords: s.coords,
            })
            .collect()
    }
}

/// Encodes an already ordered graph: one step per node followed by a stop step.
pub fn to_sequence<T: Real>(g: &RoadGraph<T>, frontier: usize) -> Result<CanonicalSequence<T>, SequenceError> {
    if frontier == 0 {
        return Err(SequenceError::ZeroFrontier);
    }
    let n = g.node_count();
    let mut steps: Vec<SequenceStep<T>> = g
        .nodes()
        .iter()
        .map(|&coords| SequenceStep { adjacency: vec![false; frontier], coords, stop: false })
        .collect();
    for &(i, j) in g.edges() {
        let span = j - i;
        if span > frontier {
            return Err(SequenceError::FrontierOverflow { i, j, span, frontier });
        }
        steps[j].adjacency[span - 1] = true;
    }
    steps.push(SequenceStep { adjacency: vec![false; frontier], coords: Point2::origin(), stop: true });
    debug_assert_eq!(steps.len(), n + 1);
    Ok(CanonicalSequence { steps, frontier_size: frontier })
}

/// Decodes soft steps into a graph.
///
/// Decoding stops before the first step whose stop probability exceeds
/// `threshold`; an edge is kept iff its value exceeds `threshold`.
pub fn from_sequence<T: Real>(steps: &[SoftStep<T>], threshold: T) -> RoadGraph<T> {
    let mut nodes = Vec::new();
    let mut edges = Vec::new();
    for (t, s) in steps.iter().enumerate() {
        if s.stop > threshold {
            break;
        }
        for (j, &v) in s.adjacency.iter().enumerate() {
            if v > threshold && j < t {
                edges.push((t - 1 - j, t));
            }
        }
        nodes.push(s.coords);
    }
    edges.sort_unstable();
    RoadGraph::from_raw(nodes, edges)
}

/// The eight symmetries of the square: `k` quarter turns clockwise, preceded
/// by a horizontal flip `x -> -x` when `flip` is set.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct Dihedral {
    pub quarter_turns: u8,
    pub flip: bool,
}

impl Dihedral {
    pub const IDENTITY: Self = Self { quarter_turns: 0, flip: false };

    pub fn all() -> [Self; 8] {
        std::array::from_fn(|i| Self::from_index(i as u8))
    }

    /// Index in `0..8`: `quarter_turns + 4 * flip`.
    pub fn from_index(i: u8) -> Self {
        Self { quarter_turns: i % 4, flip: i >= 4 }
    }

    pub fn index(self) -> u8 {
        self.quarter_turns + if self.flip { 4 } else { 0 }
    }

    pub fn apply<T: Real>(self, p: Point2<T>) -> Point2<T> {
        let mut q = if self.flip { Point2::new(-p.x, p.y) } else { p };
        for _ in 0..self.quarter_turns {
            q = Point2::new(-q.y, q.x);
        }
        q
    }

    /// Maps pixel `(row, col)` of a `size x size` image to its image under this transform.
    pub fn apply_pixel(self, row: usize, col: usize, size: usize) -> (usize, usize) {
        let (mut r, mut c) = if self.flip { (row, size - 1 - col) } else { (row, col) };
        for _ in 0..self.quarter_turns {
            (r, c) = (c, size - 1 - r);
        }
        (r, c)
    }
}

/// The eight dihedral images of `g`, in [`Dihedral::from_index`] order.
pub fn dihedral_augment<T: Real>(g: &RoadGraph<T>) -> Vec<RoadGraph<T>> {
    Dihedral::all().iter().map(|d| g.map_points(|p| d.apply(p))).collect()
}

#[cfg(test)]
mod tests {
    use super::*;

    fn p(x: f64, y: f64) -> Point2<f64> {
        Point2::new(x, y)
    }

    fn graph(nodes: &[(f64, f64)], edges: &[(usize, usize)]) -> RoadGraph<f64> {
        RoadGraph::new(nodes.iter().map(|&(x, y)| p(x, y)).collect(), edges.to_vec()).unwrap()
    }

    #[test]
    fn single_edge_order_is_storage_independent() {
        let a = graph(&[(0.5, 0.5), (-0.5, -0.5)], &[(0, 1)]);
        let b = a.reorder(&[1, 0]);
        let ca = canonicalize(&a);
        let cb = canonicalize(&b);
        assert_eq!(ca, cb);
        assert_eq!(ca.nodes()[0], p(-0.5, -0.5));
    }

    #[test]
    fn path_from_top_left_endpoint() {
        // Hand trace: start at (-1,-1) (smallest y), then its only neighbor, then the next.
        let g = graph(&[(0., 0.), (1., 0.5), (-1., -1.)], &[(2, 0), (0, 1)]);
        assert_eq!(canonical_order(&g), vec![2, 0, 1]);
    }

    #[test]
    fn clockwise_from_up_at_root_and_from_parent_afterwards() {
        // Star: center reached from the root above it; its other neighbors
        // are left, down and right. Looking back toward the root (up),
        // clockwise gives right, down, left.
        let g = graph(
            &[(0., 0.), (0., -1.), (-1., 0.2), (0., 1.), (1., 0.2)],
            &[(0, 1), (0, 2), (0, 3), (0, 4)],
        );
        assert_eq!(canonical_order(&g), vec![1, 0, 4, 3, 2]);
    }

    #[test]
    fn second_component_restarts_top_left() {
        let g = graph(
            &[(0.5, 0.6), (0.9, 0.9), (-0.9, -0.9), (-0.5, -0.8), (0.8, 0.5)],
            &[(0, 1), (2, 3), (0, 4)],
        );
        let order = canonical_order(&g);
        // first component starts at (-0.9,-0.9); second at (0.8,0.5) (smaller y than (0.5,0.6)).
        assert_eq!(order[0], 2);
        assert_eq!(order[1], 3);
        assert_eq!(order[2], 4);
        assert_eq!(order.len(), 5);
    }

    #[test]
    fn two_node_sequence() {
        let g = graph(&[(0.1, 0.2), (0.3, 0.4)], &[(0, 1)]);
        let s = to_sequence(&g, 2).unwrap();
        assert_eq!(s.steps.len(), 3);
        assert_eq!(s.steps[0].adjacency, vec![false, false]);
        assert_eq!(s.steps[0].coords, p(0.1, 0.2));
        assert_eq!(s.steps[1].adjacency, vec![true, false]);
        assert!(s.steps[2].stop && s.steps[2].coords == Point2::origin());
        s.validate().unwrap();
    }

    #[test]
    fn frontier_overflow_at_boundary() {
        let g = graph(&[(0., 0.), (1., 0.), (2., 0.), (3., 0.)], &[(0, 3)]);
        assert!(to_sequence(&g, 3).is_ok());
        assert_eq!(
            to_sequence(&g, 2),
            Err(SequenceError::FrontierOverflow { i: 0, j: 3, span: 3, frontier: 2 })
        );
    }

    #[test]
    fn square_encoding() {
        // Stored in cycle order 0-1-2-3-0: the last node links back one and three steps.
        let cycle = graph(&[(-1., -1.), (1., -1.), (1., 1.), (-1., 1.)], &[(0, 1), (1, 2), (2, 3), (0, 3)]);
        let s = to_sequence(&cycle, 3).unwrap();
        assert_eq!(s.steps[3].adjacency, vec![true, false, true]);
        // In BFS order the last corner is adjacent to both neighbors of the root.
        let c = canonicalize(&cycle);
        assert_eq!(c.nodes(), &[p(-1., -1.), p(1., -1.), p(-1., 1.), p(1., 1.)]);
        let s = to_sequence(&c, 3).unwrap();
        assert_eq!(s.steps[3].adjacency, vec![true, true, false]);
    }

    #[test]
    fn from_sequence_thresholds() {
        let g = canonicalize(&graph(&[(0., 0.), (1., 0.), (1., 1.)], &[(0, 1), (1, 2)]));
        let s = to_sequence(&g, 2).unwrap();
        assert_eq!(from_sequence(&s.to_soft(), 0.5), g);

        let soft: Vec<SoftStep<f64>> = (0..3)
            .map(|t| SoftStep { adjacency: vec![0.4; 2], stop: 0.4, coords: p(t as f64, 0.) })
            .collect();
        let h = from_sequence(&soft, 0.5);
        assert_eq!((h.node_count(), h.edge_count()), (3, 0));

        let tie = vec![
            SoftStep { adjacency: vec![0.0], stop: 0.0, coords: p(0., 0.) },
            SoftStep { adjacency: vec![0.5], stop: 0.5, coords: p(1., 0.) },
        ];
        let h = from_sequence(&tie, 0.5);
        assert_eq!((h.node_count(), h.edge_count()), (2, 0));
    }

    #[test]
    fn dihedral_examples() {
        let r = Dihedral::from_index(1);
        assert_eq!(r.apply(p(0.5, 0.2)), p(-0.2, 0.5));
        let mut q = p(0.3, -0.7);
        for _ in 0..4 {
            q = r.apply(q);
        }
        assert_eq!(q, p(0.3, -0.7));

        let g = graph(&[(0., 0.), (0.5, 0.), (0.5, 0.25)], &[(0, 1), (1, 2)]);
        let imgs = dihedral_augment(&g);
        assert_eq!(imgs.len(), 8);
        for a in 0..8 {
            for b in a + 1..8 {
                assert!(!imgs[a].approx_eq(&imgs[b], 1e-12), "{a} vs {b}");
            }
        }
    }

    #[test]
    fn dihedral_pixel_map_matches_point_map() {
        let size = 8;
        let center = |i: usize| (2 * i + 1) as f64 / size as f64 - 1.0;
        for d in Dihedral::all() {
            for r in 0..size {
                for c in 0..size {
                    let q = d.apply(p(center(c), center(r)));
                    let (r2, c2) = d.apply_pixel(r, c, size);
                    assert_eq!(q, p(center(c2), center(r2)));
                }
            }
        }
    }
}
