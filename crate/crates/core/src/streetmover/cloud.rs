use crate::geom::{Point2, RoadGraph};
use crate::Real;

use super::MetricError;

/// Uniformly weighted point cloud.
#[derive(Debug, Clone, PartialEq)]
pub struct PointCloud<T> {
    points: Vec<Point2<T>>,
}

impl<T: Real> PointCloud<T> {
    pub fn new(points: Vec<Point2<T>>) -> Result<Self, MetricError> {
        if points.is_empty() {
            return Err(MetricError::EmptyCloud);
        }
        Ok(Self { points })
    }

    pub fn single(p: Point2<T>) -> Self {
        Self { points: vec![p] }
    }

    pub fn points(&self) -> &[Point2<T>] {
        &self.points
    }

    pub fn len(&self) -> usize {
        self.points.len()
    }

    pub fn is_empty(&self) -> bool {
        self.points.is_empty()
    }

    pub fn weight(&self) -> T {
        T::one() / T::from_usize(self.points.len()).unwrap()
    }

    /// Points sorted top-left first; two clouds are the same multiset iff
    /// their sorted forms are equal.
    pub fn sorted(&self) -> Vec<Point2<T>> {
        let mut pts = self.points.clone();
        pts.sort_by(|a, b| a.top_left_cmp(b));
        pts
    }
}

/// Samples roughly `n` equidistant points along the graph's edges.
///
/// Edge `e` of length `len_e` receives `n_e = max(1, round(n * len_e / L))`
/// points at arc-length positions `(k + 0.5) * len_e / n_e`, measured from the
/// endpoint that is first in `(y, x)` order. The result depends only on the
/// set of edge geometries, not on how nodes or edges are stored.
pub fn sample_point_cloud<T: Real>(g: &RoadGraph<T>, n: usize) -> Result<PointCloud<T>, MetricError> {
    assert!(n >= 1, "sample count must be positive");
    if g.edge_count() == 0 {
        return Err(MetricError::NoEdges);
    }
    let total = g.total_length();
    let nf = T::from_usize(n).unwrap();
    let mut points = Vec::with_capacity(n + g.edge_count());
    for s in g.segments() {
        let (a, b) = if s.a.top_left_cmp(&s.b).is_le() { (s.a, s.b) } else { (s.b, s.a) };
        let len = s.length();
        let count = if total > T::zero() {
            (nf * len / total).round().to_usize().unwrap_or(1).max(1)
        } else {
            1
        };
        let cf = T::from_usize(count).unwrap();
        for k in 0..count {
            let t = (T::from_usize(k).unwrap() + T::half()) / cf;
            points.push(a.lerp(b, t));
        }
    }
    Ok(PointCloud { points })
}

#[cfg(test)]
mod tests {
    use super::*;

    fn p(x: f64, y: f64) -> Point2<f64> {
        Point2::new(x, y)
    }

    #[test]
    fn midpoint_rule_on_unit_edge() {
        let g = RoadGraph::new(vec![p(0., 0.), p(1., 0.)], vec![(0, 1)]).unwrap();
        let c = sample_point_cloud(&g, 4).unwrap();
        let xs: Vec<f64> = c.points().iter().map(|q| q.x).collect();
        assert_eq!(xs, vec![0.125, 0.375, 0.625, 0.875]);
    }

    #[test]
    fn proportional_split() {
        let g = RoadGraph::new(vec![p(0., 0.), p(1., 0.), p(1., 1.)], vec![(0, 1), (1, 2)]).unwrap();
        let c = sample_point_cloud(&g, 4).unwrap();
        assert_eq!(c.len(), 4);
        assert_eq!(c.points().iter().filter(|q| q.y == 0.0).count(), 2);
    }

    #[test]
    fn storage_order_does_not_matter() {
        let g = RoadGraph::new(
            vec![p(0., 0.), p(1., 0.3), p(0.2, 1.), p(-0.5, 0.5)],
            vec![(0, 1), (1, 2), (2, 3), (0, 2)],
        )
        .unwrap();
        let base = sample_point_cloud(&g, 50).unwrap().sorted();
        let permuted_edges = g.with_edge_order(&[3, 1, 0, 2]);
        assert_eq!(sample_point_cloud(&permuted_edges, 50).unwrap().sorted(), base);
        let relabeled = g.reorder(&[2, 0, 3, 1]);
        assert_eq!(sample_point_cloud(&relabeled, 50).unwrap().sorted(), base);
    }

    #[test]
    fn edgeless_graph_is_an_error() {
        let g = RoadGraph::new(vec![p(0., 0.)], vec![]).unwrap();
        assert_eq!(sample_point_cloud(&g, 10), Err(MetricError::NoEdges));
    }
}
