use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use super::{Bounds, DatasetError, MapSource, DEFAULT_TILE_SIDE};
use crate::geom::{canonicalize, clean_graph, filter_graph, FilterOutcome, GeoSegment, Point2, RoadGraph};

const ORIGIN: (f64, f64) = (1.4, 43.6);

/// Road-like map covering `size x size` tiles of the default side plus one
/// spare tile per axis for translations.
///
/// Streets are jittered polylines on a perturbed grid with random gaps, plus
/// a few long diagonals and short dead ends attached to street vertices.
/// Deterministic in `seed`.
pub fn generate_synthetic_map(seed: u64, size: usize) -> Result<MapSource, DatasetError> {
    if size == 0 {
        return Err(DatasetError::Config("synthetic map size must be positive".into()));
    }
    let side = DEFAULT_TILE_SIDE;
    let extent = (size + 1) as f64 * side;
    let bounds = Bounds { lon_min: ORIGIN.0, lat_min: ORIGIN.1, lon_max: ORIGIN.0 + extent, lat_max: ORIGIN.1 + extent };
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut segments = Vec::new();
    let mut anchors: Vec<(f64, f64)> = Vec::new();
    let clamp = |(lon, lat): (f64, f64)| {
        (lon.clamp(bounds.lon_min, bounds.lon_max), lat.clamp(bounds.lat_min, bounds.lat_max))
    };

    for vertical in [true, false] {
        let mut offset = rng.gen_range(0.2..0.8) * side;
        while offset < extent {
            let mut along = 0.0;
            let mut drift = 0.0;
            let mut prev = None;
            loop {
                let done = along >= extent;
                let a = along.min(extent);
                let p = if vertical {
                    clamp((bounds.lon_min + offset + drift, bounds.lat_min + a))
                } else {
                    clamp((bounds.lon_min + a, bounds.lat_min + offset + drift))
                };
                if let Some(q) = prev {
                    if rng.gen_bool(0.9) {
                        segments.push(GeoSegment::new(q, p));
                    }
                }
                anchors.push(p);
                prev = Some(p);
                if done {
                    break;
                }
                along += rng.gen_range(0.3..0.6) * side;
                drift = (drift + rng.gen_range(-0.05..0.05) * side).clamp(-0.15 * side, 0.15 * side);
            }
            offset += rng.gen_range(0.6..1.5) * side;
        }
    }

    let diagonals = (size / 3).max(1);
    for _ in 0..diagonals {
        let mut p = clamp((bounds.lon_min + rng.gen_range(0.0..extent), bounds.lat_min + rng.gen_range(0.0..extent)));
        let angle: f64 = rng.gen_range(0.0..std::f64::consts::TAU);
        let pieces = rng.gen_range(3..8);
        for _ in 0..pieces {
            let len = rng.gen_range(0.4..0.9) * side;
            let q = clamp((p.0 + len * angle.cos(), p.1 + len * angle.sin()));
            if q == p {
                break;
            }
            segments.push(GeoSegment::new(p, q));
            p = q;
        }
    }

    for _ in 0..size {
        let start = anchors[rng.gen_range(0..anchors.len())];
        let angle: f64 = rng.gen_range(0.0..std::f64::consts::TAU);
        let len = rng.gen_range(0.3..0.6) * side;
        let end = clamp((start.0 + len * angle.cos(), start.1 + len * angle.sin()));
        if end != start {
            segments.push(GeoSegment::new(start, end));
        }
    }

    MapSource::new(segments, bounds)
}

/// Random graph in canonical order that passes the preprocessing chain
/// (merge distance 0.1, straightening at 15 degrees) and the size filter.
///
/// Nodes are drawn in `[-0.95, 0.95]^2`, mostly attached to an earlier node,
/// with a few extra chords. Candidates are redrawn until one is accepted.
pub fn random_tile_graph<R: Rng>(rng: &mut R) -> RoadGraph<f64> {
    loop {
        let n = rng.gen_range(4..=9);
        let nodes: Vec<Point2<f64>> =
            (0..n).map(|_| Point2::new(rng.gen_range(-0.95..0.95), rng.gen_range(-0.95..0.95))).collect();
        let mut edges = Vec::new();
        for i in 1..n {
            if rng.gen_bool(0.85) {
                edges.push((rng.gen_range(0..i), i));
            }
        }
        for _ in 0..rng.gen_range(0..=n / 2) {
            let (i, j) = (rng.gen_range(0..n), rng.gen_range(0..n));
            if i != j && !edges.contains(&(i.min(j), i.max(j))) {
                edges.push((i.min(j), i.max(j)));
            }
        }
        let Ok(g) = RoadGraph::new(nodes, edges) else { continue };
        let g = canonicalize(&clean_graph(&g, 0.1, 15.0).without_isolated_nodes());
        if g.edge_count() > 0 && filter_graph(&g) == FilterOutcome::Accept {
            return g;
        }
    }
}
