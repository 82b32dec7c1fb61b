//! Cleanup passes applied to every extracted tile graph: crossing splitting,
//! near-node contraction, straight-road fusion and the size filter.

use super::graph::RoadGraph;
use super::point::{intersect_segments, Point2, Segment};
use crate::Real;

/// Upper bound on repeated sweeps; each sweep strictly reduces the number of
/// crossings, close pairs or fusible nodes in any realistic input.
const MAX_SWEEPS: usize = 64;

pub const MIN_NODES: usize = 4;
pub const MAX_NODES: usize = 9;
pub const MAX_EDGES: usize = 15;

/// Splits every pair of properly crossing edges at their crossing point.
///
/// Repeats until no proper crossing remains, so the result is a fixpoint:
/// `planarize(planarize(g)) == planarize(g)`.
pub fn planarize<T: Real>(g: &RoadGraph<T>) -> RoadGraph<T> {
    let mut g = g.clone();
    for _ in 0..MAX_SWEEPS {
        match split_crossings(&g) {
            Some(next) => g = next,
            None => break,
        }
    }
    g
}

fn split_crossings<T: Real>(g: &RoadGraph<T>) -> Option<RoadGraph<T>> {
    let segs: Vec<Segment<T>> = g.segments().collect();
    let mut nodes = g.nodes().to_vec();
    let mut splits: Vec<Vec<(T, usize)>> = vec![Vec::new(); segs.len()];
    for a in 0..segs.len() {
        for b in a + 1..segs.len() {
            if let Some(p) = intersect_segments(&segs[a], &segs[b]) {
                let id = nodes.len();
                nodes.push(p);
                splits[a].push((param_along(&segs[a], p), id));
                splits[b].push((param_along(&segs[b], p), id));
            }
        }
    }
    if nodes.len() == g.node_count() {
        return None;
    }
    let mut edges = Vec::with_capacity(segs.len() * 2);
    for (k, &(i, j)) in g.edges().iter().enumerate() {
        let cuts = &mut splits[k];
        if cuts.is_empty() {
            edges.push((i, j));
            continue;
        }
        cuts.sort_by(|x, y| x.0.partial_cmp(&y.0).unwrap_or(std::cmp::Ordering::Equal));
        let mut prev = i;
        for &(_, id) in cuts.iter() {
            edges.push((prev, id));
            prev = id;
        }
        edges.push((prev, j));
    }
    Some(RoadGraph::from_raw(nodes, edges))
}

fn param_along<T: Real>(s: &Segment<T>, p: Point2<T>) -> T {
    let d = s.b - s.a;
    (p - s.a).dot(d) / d.norm_sq()
}

/// Contracts every cluster of nodes connected by the "closer than `eps`"
/// relation into its centroid.
///
/// Clusters are the transitive closure of the relation. The pass repeats
/// until no two nodes are closer than `eps`, so it is idempotent.
pub fn merge_close_nodes<T: Real>(g: &RoadGraph<T>, eps: T) -> RoadGraph<T> {
    assert!(eps > T::zero(), "merge radius must be positive");
    let mut g = g.clone();
    for _ in 0..MAX_SWEEPS {
        match contract_once(&g, eps) {
            Some(next) => g = next,
            None => break,
        }
    }
    g
}

fn contract_once<T: Real>(g: &RoadGraph<T>, eps: T) -> Option<RoadGraph<T>> {
    let n = g.node_count();
    let pts = g.nodes();
    let mut uf = UnionFind::new(n);
    let mut any = false;
    for i in 0..n {
        for j in i + 1..n {
            if pts[i].dist(pts[j]) < eps {
                uf.union(i, j);
                any = true;
            }
        }
    }
    if !any {
        return None;
    }
    // Clusters are numbered by their smallest member index.
    let mut cluster_of = vec![usize::MAX; n];
    let mut sums: Vec<(Point2<T>, usize)> = Vec::new();
    let mut root_to_cluster = vec![usize::MAX; n];
    for i in 0..n {
        let r = uf.find(i);
        if root_to_cluster[r] == usize::MAX {
            root_to_cluster[r] = sums.len();
            sums.push((Point2::origin(), 0));
        }
        let c = root_to_cluster[r];
        cluster_of[i] = c;
        sums[c].0 = sums[c].0 + pts[i];
        sums[c].1 += 1;
    }
    let nodes = sums
        .into_iter()
        .map(|(s, k)| s * (T::one() / T::from_usize(k).unwrap()))
        .collect();
    let edges = g.edges().iter().map(|&(i, j)| (cluster_of[i], cluster_of[j]));
    Some(RoadGraph::from_raw(nodes, edges))
}

pub(crate) struct UnionFind {
    parent: Vec<usize>,
}

impl UnionFind {
    pub(crate) fn new(n: usize) -> Self {
        Self { parent: (0..n).collect() }
    }

    pub(crate) fn find(&mut self, mut x: usize) -> usize {
        while self.parent[x] != x {
            self.parent[x] = self.parent[self.parent[x]];
            x = self.parent[x];
        }
        x
    }

    pub(crate) fn union(&mut self, a: usize, b: usize) {
        let (ra, rb) = (self.find(a), self.find(b));
        if ra != rb {
            // smaller index becomes the root, keeps numbering stable
            let (lo, hi) = (ra.min(rb), ra.max(rb));
            self.parent[hi] = lo;
        }
    }
}

/// Angle in degrees by which the path `u -> v -> w` deviates from a straight line.
pub fn bend_deviation_deg<T: Real>(u: Point2<T>, v: Point2<T>, w: Point2<T>) -> T {
    let a = u - v;
    let b = w - v;
    let denom = a.norm() * b.norm();
    if denom == T::zero() {
        return T::lit(180.0);
    }
    let cos = (a.dot(b) / denom).max(-T::one()).min(T::one());
    T::lit(180.0) - cos.acos().to_degrees()
}

/// Removes degree-2 nodes whose path deviates from straight by less than
/// `max_deviation_deg`, fusing their two edges, until no such node remains.
///
/// The most nearly straight candidate is fused first. A fusion is skipped
/// when the fused edge already exists or would properly cross another edge.
pub fn straighten<T: Real>(g: &RoadGraph<T>, max_deviation_deg: T) -> RoadGraph<T> {
    assert!(
        max_deviation_deg > T::zero() && max_deviation_deg < T::lit(90.0),
        "max deviation must lie in (0, 90) degrees"
    );
    let mut g = g.clone();
    for _ in 0..g.node_count() + 1 {
        let Some((v, u, w)) = best_fusion(&g, max_deviation_deg) else {
            break;
        };
        g = fuse(&g, v, u, w);
    }
    g
}

fn best_fusion<T: Real>(g: &RoadGraph<T>, max_dev: T) -> Option<(usize, usize, usize)> {
    let adj = g.adjacency();
    let pts = g.nodes();
    let mut best: Option<(T, usize, usize, usize)> = None;
    for v in 0..g.node_count() {
        if adj[v].len() != 2 {
            continue;
        }
        let (u, w) = (adj[v][0], adj[v][1]);
        let dev = bend_deviation_deg(pts[u], pts[v], pts[w]);
        if dev >= max_dev || g.has_edge(u, w) {
            continue;
        }
        let better = match best {
            None => true,
            Some((bd, bv, _, _)) => dev < bd || (dev == bd && pts[v].top_left_cmp(&pts[bv]).is_lt()),
        };
        if !better {
            continue;
        }
        let fused = Segment::new(pts[u], pts[w]);
        let crosses = g
            .edges()
            .iter()
            .filter(|&&(i, j)| i != v && j != v)
            .any(|&e| intersect_segments(&fused, &g.segment(e)).is_some());
        if !crosses {
            best = Some((dev, v, u, w));
        }
    }
    best.map(|(_, v, u, w)| (v, u, w))
}

fn fuse<T: Real>(g: &RoadGraph<T>, v: usize, u: usize, w: usize) -> RoadGraph<T> {
    let remap = |i: usize| if i > v { i - 1 } else { i };
    let nodes = g
        .nodes()
        .iter()
        .enumerate()
        .filter(|&(i, _)| i != v)
        .map(|(_, &p)| p)
        .collect();
    let edges = g
        .edges()
        .iter()
        .filter(|&&(i, j)| i != v && j != v)
        .map(|&(i, j)| (remap(i), remap(j)))
        .chain(std::iter::once((remap(u), remap(w))));
    RoadGraph::from_raw(nodes, edges)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, serde::Serialize, serde::Deserialize)]
pub enum RejectReason {
    /// Fewer than four nodes.
    Trivial,
    /// Ten or more nodes.
    TooManyNodes,
    /// Sixteen or more edges.
    TooManyEdges,
}

impl RejectReason {
    pub fn is_cluttered(self) -> bool {
        matches!(self, Self::TooManyNodes | Self::TooManyEdges)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum FilterOutcome {
    Accept,
    Reject(RejectReason),
}

/// Keeps graphs with `4 <= |V| <= 9` and `|E| <= 15`.
pub fn filter_graph<T: Real>(g: &RoadGraph<T>) -> FilterOutcome {
    let (v, e) = (g.node_count(), g.edge_count());
    if v < MIN_NODES {
        FilterOutcome::Reject(RejectReason::Trivial)
    } else if v > MAX_NODES {
        FilterOutcome::Reject(RejectReason::TooManyNodes)
    } else if e > MAX_EDGES {
        FilterOutcome::Reject(RejectReason::TooManyEdges)
    } else {
        FilterOutcome::Accept
    }
}

/// Runs planarize, merge and straighten until the result has no proper
/// crossings and no node pair closer than `eps`.
pub fn clean_graph<T: Real>(g: &RoadGraph<T>, eps: T, max_deviation_deg: T) -> RoadGraph<T> {
    let mut g = g.clone();
    for _ in 0..MAX_SWEEPS {
        let next = straighten(&merge_close_nodes(&planarize(&g), eps), max_deviation_deg);
        let stable = next == g;
        g = next;
        if stable || (g.proper_crossings().is_empty() && g.min_node_distance().is_none_or(|d| d >= eps)) {
            break;
        }
    }
    g
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
    fn planarize_x_cross() {
        let g = graph(&[(-1., 0.), (1., 0.), (0., -1.), (0., 1.)], &[(0, 1), (2, 3)]);
        let h = planarize(&g);
        assert_eq!((h.node_count(), h.edge_count()), (5, 4));
        assert_eq!(h.nodes()[4], p(0., 0.));
        assert!(h.proper_crossings().is_empty());
    }

    #[test]
    fn planarize_leaves_triangle() {
        let g = graph(&[(0., 0.), (1., 0.), (0., 1.)], &[(0, 1), (1, 2), (0, 2)]);
        assert_eq!(planarize(&g), g);
    }

    #[test]
    fn planarize_three_crossing_edges_matches_pairwise_oracle() {
        // Three long edges forming a "star of David"-like triangle of crossings.
        let g = graph(
            &[(-1., 0.), (1., 0.2), (-0.6, -1.), (0.3, 1.), (0.6, -1.), (-0.2, 1.)],
            &[(0, 1), (2, 3), (4, 5)],
        );
        // Oracle: count proper crossings pairwise; without triple points each
        // adds one node and lengthens both edges by one piece.
        let segs: Vec<_> = g.segments().collect();
        let mut k = 0;
        for a in 0..segs.len() {
            for b in a + 1..segs.len() {
                let (s, r) = (segs[a], segs[b]);
                let o = |u: Point2<f64>, v: Point2<f64>, w: Point2<f64>| (v - u).cross(w - u);
                if o(s.a, s.b, r.a) * o(s.a, s.b, r.b) < 0.0 && o(r.a, r.b, s.a) * o(r.a, r.b, s.b) < 0.0 {
                    k += 1;
                }
            }
        }
        assert_eq!(k, 3);
        let h = planarize(&g);
        assert_eq!(h.node_count(), 6 + k);
        assert_eq!(h.edge_count(), 3 + 2 * k);
        assert_eq!(planarize(&h), h);
    }

    #[test]
    fn merge_examples() {
        let eps = 0.1;
        let g = graph(&[(0., 0.), (0.05, 0.)], &[(0, 1)]);
        let h = merge_close_nodes(&g, eps);
        assert_eq!((h.node_count(), h.edge_count()), (1, 0));
        assert!((h.nodes()[0].x - 0.025).abs() < 1e-15);

        // 0.9 eps apart: each pair merges, closure takes all three
        let g = graph(&[(0., 0.), (0.09, 0.), (0.18, 0.), (1., 1.)], &[(0, 3), (2, 3)]);
        let h = merge_close_nodes(&g, eps);
        assert_eq!(h.node_count(), 2);
        assert_eq!(h.edges(), &[(0, 1)]);
        assert!((h.nodes()[0].x - 0.09).abs() < 1e-15);

        let g = graph(&[(0., 0.), (0.2, 0.)], &[(0, 1)]);
        assert_eq!(merge_close_nodes(&g, eps), g);
    }

    #[test]
    fn merge_reaches_fixpoint_when_centroids_collide() {
        // Two clusters whose centroids end up closer than eps.
        // First sweep merges the bottom pair only; its centroid is then within
        // eps of the top node.
        let g = graph(&[(0., 0.), (0.099, 0.), (0.0495, 0.095)], &[]);
        let h = merge_close_nodes(&g, 0.1);
        assert_eq!(h.node_count(), 1);
        assert!(h.min_node_distance().is_none_or(|d| d >= 0.1));
        assert_eq!(merge_close_nodes(&h, 0.1), h);
    }

    #[test]
    fn straighten_examples() {
        let g = graph(&[(0., 0.), (1., 0.), (2., 0.)], &[(0, 1), (1, 2)]);
        let h = straighten(&g, 15.0);
        assert_eq!(h.node_count(), 2);
        assert_eq!(h.nodes(), &[p(0., 0.), p(2., 0.)]);
        assert_eq!(h.edges(), &[(0, 1)]);

        let corner = graph(&[(0., 0.), (1., 0.), (1., 1.)], &[(0, 1), (1, 2)]);
        assert_eq!(straighten(&corner, 15.0), corner);

        // 10 degree bend: second leg leaves at angle 10 deg from the first.
        let (s, c) = (10f64.to_radians().sin(), 10f64.to_radians().cos());
        let bend = graph(&[(0., 0.), (1., 0.), (1. + c, s)], &[(0, 1), (1, 2)]);
        let dev = bend_deviation_deg(bend.nodes()[0], bend.nodes()[1], bend.nodes()[2]);
        assert!((dev - 10.0).abs() < 1e-9);
        assert_eq!(straighten(&bend, 15.0).node_count(), 2);
        assert_eq!(straighten(&bend, 5.0).node_count(), 3);
    }

    #[test]
    fn straighten_skips_fusions_that_would_cross() {
        // Fusing 0-1-2 would cut through the edge 3-4 that pokes into the bend.
        let g = graph(
            &[(0., 0.), (1., 0.1), (2., 0.), (1., -1.), (1., 0.05)],
            &[(0, 1), (1, 2), (3, 4)],
        );
        let h = straighten(&g, 15.0);
        assert_eq!(h.node_count(), 5);
    }

    #[test]
    fn filter_bounds() {
        let path = |n: usize| {
            let nodes = (0..n).map(|i| (i as f64, 0.)).collect::<Vec<_>>();
            let edges = (1..n).map(|i| (i - 1, i)).collect::<Vec<_>>();
            graph(&nodes, &edges)
        };
        assert_eq!(filter_graph(&path(3)), FilterOutcome::Reject(RejectReason::Trivial));
        assert_eq!(filter_graph(&path(10)), FilterOutcome::Reject(RejectReason::TooManyNodes));
        assert_eq!(filter_graph(&path(5)), FilterOutcome::Accept);
        assert_eq!(filter_graph(&path(9)), FilterOutcome::Accept);
        // complete graph on 7 nodes has 21 edges
        let nodes: Vec<_> = (0..7).map(|i| (i as f64, (i * i) as f64)).collect();
        let mut edges = Vec::new();
        for i in 0..7 {
            for j in i + 1..7 {
                edges.push((i, j));
            }
        }
        let k7 = graph(&nodes, &edges);
        assert_eq!(filter_graph(&k7), FilterOutcome::Reject(RejectReason::TooManyEdges));
        assert!(RejectReason::TooManyEdges.is_cluttered());
    }

    #[test]
    fn clean_graph_invariants() {
        let g = graph(
            &[(-1., 0.), (1., 0.), (0., -1.), (0.02, 1.), (0.5, 0.03), (0.51, -0.5)],
            &[(0, 1), (2, 3), (4, 5)],
        );
        let h = clean_graph(&g, 0.1, 15.0);
        assert!(h.proper_crossings().is_empty());
        assert!(h.min_node_distance().unwrap() >= 0.1);
    }
}
