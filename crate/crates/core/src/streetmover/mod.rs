//! StreetMover distance: optimal transport cost between point clouds sampled
//! equidistantly along two road graphs.

mod cloud;
mod exact;
mod sinkhorn;
mod svg;

pub use cloud::{sample_point_cloud, PointCloud};
pub use exact::{exact_ot, min_cost_assignment, EXACT_OT_MAX_POINTS};
pub use sinkhorn::{cost_matrix, sinkhorn, SinkhornParams, TransportResult};
pub use svg::render_transport_svg;

use serde::{Deserialize, Serialize};

use crate::geom::RoadGraph;
use crate::Real;

#[derive(Debug, Clone, PartialEq, Eq, thiserror::Error)]
pub enum MetricError {
    #[error("graph has no edges to sample")]
    NoEdges,
    #[error("point cloud is empty")]
    EmptyCloud,
    #[error("exact transport needs equal cloud sizes, got {left} and {right}")]
    SizeMismatch { left: usize, right: usize },
    #[error("exact transport supports at most {max} points, got {points}")]
    TooLarge { points: usize, max: usize },
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct StreetMoverParams {
    pub points: usize,
    pub sinkhorn: SinkhornParams,
}

impl Default for StreetMoverParams {
    fn default() -> Self {
        Self { points: 100, sinkhorn: SinkhornParams::default() }
    }
}

/// Sampled clouds and the full transport solution behind a StreetMover value.
#[derive(Debug, Clone)]
pub struct StreetMoverDetail<T> {
    pub predicted: PointCloud<T>,
    pub target: PointCloud<T>,
    pub transport: TransportResult<T>,
}

pub fn streetmover_detailed<T: Real>(
    predicted: &RoadGraph<T>,
    target: &RoadGraph<T>,
    params: &StreetMoverParams,
) -> Result<StreetMoverDetail<T>, MetricError> {
    let p = sample_point_cloud(predicted, params.points)?;
    let q = sample_point_cloud(target, params.points)?;
    let transport = sinkhorn(&p, &q, &params.sinkhorn);
    Ok(StreetMoverDetail { predicted: p, target: q, transport })
}

/// Transport cost of moving the predicted graph's cloud onto the target's.
pub fn streetmover<T: Real>(
    predicted: &RoadGraph<T>,
    target: &RoadGraph<T>,
    params: &StreetMoverParams,
) -> Result<T, MetricError> {
    streetmover_detailed(predicted, target, params).map(|d| d.transport.cost)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::geom::Point2;

    fn edge(a: (f64, f64), b: (f64, f64)) -> RoadGraph<f64> {
        RoadGraph::new(vec![Point2::new(a.0, a.1), Point2::new(b.0, b.1)], vec![(0, 1)]).unwrap()
    }

    #[test]
    fn self_distance_is_small() {
        let g = RoadGraph::new(
            vec![Point2::new(-0.8, -0.8), Point2::new(0.7, -0.6), Point2::new(0.1, 0.9), Point2::new(-0.9, 0.4)],
            vec![(0, 1), (1, 2), (2, 3), (0, 2)],
        )
        .unwrap();
        let d = streetmover(&g, &g, &StreetMoverParams::default()).unwrap();
        assert!(d < 1e-3, "self distance {d}");
    }

    #[test]
    fn perpendicular_shift_costs_delta_squared() {
        // Every sample moves straight across by delta; closed form delta^2.
        let delta = 0.2;
        let a = edge((-0.9, 0.0), (0.9, 0.0));
        let b = edge((-0.9, delta), (0.9, delta));
        let d = streetmover(&a, &b, &StreetMoverParams::default()).unwrap();
        assert!((d - delta * delta).abs() < 1e-3, "got {d}");
    }

    #[test]
    fn symmetric() {
        let a = edge((-0.5, -0.5), (0.5, 0.2));
        let b = RoadGraph::new(
            vec![Point2::new(0.0, -0.9), Point2::new(0.1, 0.8), Point2::new(0.6, 0.8)],
            vec![(0, 1), (1, 2)],
        )
        .unwrap();
        let params = StreetMoverParams::default();
        let ab = streetmover(&a, &b, &params).unwrap();
        let ba = streetmover(&b, &a, &params).unwrap();
        assert!((ab - ba).abs() < 1e-9, "{ab} vs {ba}");
    }

    #[test]
    fn no_edges_error() {
        let a = edge((0., 0.), (1., 0.));
        let empty = RoadGraph::new(vec![Point2::new(0.0, 0.0)], vec![]).unwrap();
        assert_eq!(streetmover(&a, &empty, &StreetMoverParams::default()), Err(MetricError::NoEdges));
    }

    #[test]
    fn sinkhorn_tracks_exact_assignment() {
        use rand::{Rng, SeedableRng};
        let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(7);
        let mut worst: f64 = 0.0;
        for n in [4, 8, 16] {
            for _ in 0..20 {
                let mut pts = || {
                    let v = (0..n).map(|_| Point2::new(rng.gen_range(-1.0f64..1.0), rng.gen_range(-1.0f64..1.0))).collect();
                    PointCloud::new(v).unwrap()
                };
                let (p, q) = (pts(), pts());
                let exact: f64 = exact_ot(&p, &q).unwrap();
                let approx = sinkhorn(&p, &q, &SinkhornParams::default());
                assert!(approx.converged, "n={n} err {:e} it {}", approx.marginal_error, approx.iterations);
                worst = worst.max((approx.cost - exact).abs() / exact);
            }
        }
        eprintln!("worst relative error {worst:e}");
        assert!(worst < 0.02, "worst relative error {worst}");
    }
}
