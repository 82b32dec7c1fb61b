//! Dataset construction from a plain segment map: tiling, clipping and
//! normalization, split assignment, frontier size and file emission.

mod build;
mod synthetic;

pub use build::{
    build_dataset, load_dataset, read_sequence, sequence_to_text, BuildOutput, DatasetConfig, DatasetStats,
    LoadedDataset, LoadedRecord, ManifestRecord, SplitCounts,
};
pub use synthetic::{generate_synthetic_map, random_tile_graph};

use std::collections::HashMap;
use std::fmt;
use std::path::Path;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::geom::{clean_graph, GeoSegment, Point2, RoadGraph};

/// Default tile side in degrees.
pub const DEFAULT_TILE_SIDE: f64 = 0.001;
/// Default node merge distance in degrees.
pub const DEFAULT_EPS_MERGE_DEG: f64 = 0.00005;
/// Number of quarter-tile translation offsets (4 per axis).
pub const TRANSLATIONS: u8 = 16;

#[derive(Debug, thiserror::Error)]
pub enum DatasetError {
    #[error("no segment intersects the tile window")]
    EmptyTile,
    #[error("translated tile window lies outside the map bounds")]
    OutOfBounds,
    #[error("translation index {0} is outside 0..16")]
    BadTranslation(u8),
    #[error("training split is empty")]
    EmptyDataset,
    #[error("segment {index} is invalid or outside the map bounds")]
    BadSegment { index: usize },
    #[error("line {line}: {msg}")]
    Parse { line: usize, msg: String },
    #[error("invalid configuration: {0}")]
    Config(String),
    #[error(transparent)]
    Kv(#[from] crate::kv::KvError),
    #[error(transparent)]
    Rgf(#[from] crate::geom::rgf::RgfError),
    #[error(transparent)]
    Pgm(#[from] crate::raster::PgmError),
    #[error(transparent)]
    Json(#[from] serde_json::Error),
    #[error(transparent)]
    Io(#[from] std::io::Error),
}

impl DatasetError {
    pub fn is_io(&self) -> bool {
        matches!(self, Self::Io(_) | Self::Rgf(crate::geom::rgf::RgfError::Io(_)) | Self::Pgm(crate::raster::PgmError::Io(_)))
    }
}

/// Axis-aligned bounding box in degrees.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Bounds {
    pub lon_min: f64,
    pub lat_min: f64,
    pub lon_max: f64,
    pub lat_max: f64,
}

impl Bounds {
    pub fn contains(&self, (lon, lat): (f64, f64)) -> bool {
        lon >= self.lon_min && lon <= self.lon_max && lat >= self.lat_min && lat <= self.lat_max
    }
}

/// A road map given as straight segments in (lon, lat) degrees.
#[derive(Debug, Clone, PartialEq)]
pub struct MapSource {
    segments: Vec<GeoSegment>,
    bounds: Bounds,
}

impl MapSource {
    pub fn new(segments: Vec<GeoSegment>, bounds: Bounds) -> Result<Self, DatasetError> {
        if let Some(index) =
            segments.iter().position(|s| !s.is_valid() || !bounds.contains(s.start) || !bounds.contains(s.end))
        {
            return Err(DatasetError::BadSegment { index });
        }
        Ok(Self { segments, bounds })
    }

    /// Uses the bounding box of the segments as map bounds.
    pub fn from_segments(segments: Vec<GeoSegment>) -> Result<Self, DatasetError> {
        let mut b = Bounds { lon_min: f64::INFINITY, lat_min: f64::INFINITY, lon_max: -f64::INFINITY, lat_max: -f64::INFINITY };
        for s in &segments {
            for (lon, lat) in [s.start, s.end] {
                b.lon_min = b.lon_min.min(lon);
                b.lat_min = b.lat_min.min(lat);
                b.lon_max = b.lon_max.max(lon);
                b.lat_max = b.lat_max.max(lat);
            }
        }
        if segments.is_empty() {
            b = Bounds { lon_min: 0.0, lat_min: 0.0, lon_max: 0.0, lat_max: 0.0 };
        }
        Self::new(segments, b)
    }

    pub fn segments(&self) -> &[GeoSegment] {
        &self.segments
    }

    pub fn bounds(&self) -> Bounds {
        self.bounds
    }

    /// Segment CSV: one `lon1,lat1,lon2,lat2` per line, preceded by a
    /// `# bounds lon_min lat_min lon_max lat_max` comment.
    pub fn to_csv(&self) -> String {
        let b = self.bounds;
        let mut out = format!("# bounds {} {} {} {}\n", b.lon_min, b.lat_min, b.lon_max, b.lat_max);
        for s in &self.segments {
            out.push_str(&format!("{},{},{},{}\n", s.start.0, s.start.1, s.end.0, s.end.1));
        }
        out
    }

    /// Parses segment CSV. Without a `# bounds` line the segments' bounding
    /// box is used. Other `#` lines and blank lines are ignored.
    pub fn from_csv(text: &str) -> Result<Self, DatasetError> {
        let mut bounds = None;
        let mut segments = Vec::new();
        for (idx, raw) in text.lines().enumerate() {
            let line = raw.trim();
            let err = |msg: &str| DatasetError::Parse { line: idx + 1, msg: msg.to_string() };
            if let Some(rest) = line.strip_prefix('#') {
                if let Some(vals) = rest.trim().strip_prefix("bounds") {
                    let v: Vec<f64> = vals
                        .split_whitespace()
                        .map(f64::from_str)
                        .collect::<Result<_, _>>()
                        .map_err(|_| err("bad bounds value"))?;
                    if v.len() != 4 {
                        return Err(err("bounds needs 4 values"));
                    }
                    bounds = Some(Bounds { lon_min: v[0], lat_min: v[1], lon_max: v[2], lat_max: v[3] });
                }
                continue;
            }
            if line.is_empty() {
                continue;
            }
            let v: Vec<f64> =
                line.split(',').map(|s| s.trim().parse::<f64>()).collect::<Result<_, _>>().map_err(|_| err("bad number"))?;
            if v.len() != 4 {
                return Err(err("expected lon1,lat1,lon2,lat2"));
            }
            segments.push(GeoSegment::new((v[0], v[1]), (v[2], v[3])));
        }
        match bounds {
            Some(b) => Self::new(segments, b),
            None => Self::from_segments(segments),
        }
    }

    pub fn read_csv(path: &Path) -> Result<Self, DatasetError> {
        Self::from_csv(&std::fs::read_to_string(path)?)
    }

    pub fn write_csv(&self, path: &Path) -> Result<(), DatasetError> {
        std::fs::write(path, self.to_csv())?;
        Ok(())
    }
}

/// Square map window; `origin` is the (lon, lat) of its south-west corner.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Tile {
    pub origin: (f64, f64),
    pub side: f64,
}

impl Tile {
    pub fn new(origin: (f64, f64), side: f64) -> Self {
        assert!(side > 0.0, "tile side must be positive");
        Self { origin, side }
    }

    pub fn center(&self) -> (f64, f64) {
        (self.origin.0 + self.side / 2.0, self.origin.1 + self.side / 2.0)
    }

    /// South-west corner of the window shifted by translation `k`:
    /// `(k % 4, k / 4)` quarter sides east and north.
    pub fn translated_origin(&self, k: u8) -> (f64, f64) {
        let q = self.side / 4.0;
        (self.origin.0 + f64::from(k % 4) * q, self.origin.1 + f64::from(k / 4) * q)
    }
}

/// Tiles laid on a grid of `side` from the south-west corner, keeping only
/// those whose every translated window fits in the bounds. Row-major from
/// the north-west (image order).
pub fn enumerate_tiles(bounds: Bounds, side: f64) -> Vec<(usize, usize, Tile)> {
    let reach = side * 1.75;
    let fit = |extent: f64| -> usize {
        if extent < reach {
            0
        } else {
            // tolerate rounding in extent / side
            ((extent - reach) / side + 1e-9).floor() as usize + 1
        }
    };
    let cols = fit(bounds.lon_max - bounds.lon_min);
    let rows = fit(bounds.lat_max - bounds.lat_min);
    let mut out = Vec::with_capacity(rows * cols);
    for r in 0..rows {
        let lat = bounds.lat_min + (rows - 1 - r) as f64 * side;
        for c in 0..cols {
            out.push((r, c, Tile::new((bounds.lon_min + c as f64 * side, lat), side)));
        }
    }
    out
}

/// Parameter window `[t0, t1]` of `p0 + t (p1 - p0)` inside the box (Liang-Barsky).
fn clip(p0: (f64, f64), p1: (f64, f64), lo: (f64, f64), hi: (f64, f64)) -> Option<(f64, f64)> {
    let d = (p1.0 - p0.0, p1.1 - p0.1);
    let mut t0 = 0.0f64;
    let mut t1 = 1.0f64;
    for (p, q) in [(-d.0, p0.0 - lo.0), (d.0, hi.0 - p0.0), (-d.1, p0.1 - lo.1), (d.1, hi.1 - p0.1)] {
        if p == 0.0 {
            if q < 0.0 {
                return None;
            }
        } else {
            let r = q / p;
            if p < 0.0 {
                t0 = t0.max(r);
            } else {
                t1 = t1.min(r);
            }
        }
    }
    (t0 < t1).then_some((t0, t1))
}

/// Preprocessing thresholds applied to each tile.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct TileParams {
    pub eps_merge_deg: f64,
    pub straighten_max_deviation_deg: f64,
}

impl Default for TileParams {
    fn default() -> Self {
        Self { eps_merge_deg: DEFAULT_EPS_MERGE_DEG, straighten_max_deviation_deg: 15.0 }
    }
}

/// Clips the map to the (translated) tile window, normalizes to `[-1, 1]`
/// with y pointing south, then planarizes, merges nodes closer than
/// `2 * eps_merge_deg / side` and straightens.
pub fn extract_tile(
    map: &MapSource,
    tile: &Tile,
    translation: u8,
    params: &TileParams,
) -> Result<RoadGraph<f64>, DatasetError> {
    if translation >= TRANSLATIONS {
        return Err(DatasetError::BadTranslation(translation));
    }
    let (x0, y0) = tile.translated_origin(translation);
    let side = tile.side;
    let b = map.bounds();
    let slack = side * 1e-9;
    if x0 < b.lon_min - slack || y0 < b.lat_min - slack || x0 + side > b.lon_max + slack || y0 + side > b.lat_max + slack {
        return Err(DatasetError::OutOfBounds);
    }
    let lo = (x0, y0);
    let hi = (x0 + side, y0 + side);
    let norm = |(lon, lat): (f64, f64)| {
        let x = (2.0 * (lon - x0) / side - 1.0).clamp(-1.0, 1.0);
        let y = (1.0 - 2.0 * (lat - y0) / side).clamp(-1.0, 1.0);
        Point2::new(x, y)
    };

    let mut nodes: Vec<Point2<f64>> = Vec::new();
    let mut index: HashMap<(u64, u64), usize> = HashMap::new();
    let mut edges = Vec::new();
    let mut node_id = |p: Point2<f64>, nodes: &mut Vec<Point2<f64>>| {
        *index.entry((p.x.to_bits(), p.y.to_bits())).or_insert_with(|| {
            nodes.push(p);
            nodes.len() - 1
        })
    };
    for s in map.segments() {
        let (a, e) = (s.start, s.end);
        let Some((t0, t1)) = clip(a, e, lo, hi) else { continue };
        let at = |t: f64| if t == 0.0 { a } else if t == 1.0 { e } else { (a.0 + t * (e.0 - a.0), a.1 + t * (e.1 - a.1)) };
        let (p, q) = (norm(at(t0)), norm(at(t1)));
        if p == q {
            continue;
        }
        let (i, j) = (node_id(p, &mut nodes), node_id(q, &mut nodes));
        edges.push((i, j));
    }
    if edges.is_empty() {
        return Err(DatasetError::EmptyTile);
    }
    let g = RoadGraph::new(nodes, edges).expect("distinct finite clipped endpoints");
    let eps = 2.0 * params.eps_merge_deg / side;
    // Segments shorter than the merge distance collapse to isolated points.
    Ok(clean_graph(&g, eps, params.straighten_max_deviation_deg).without_isolated_nodes())
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Split {
    Train,
    Valid,
    Test,
}

impl Split {
    pub const ALL: [Split; 3] = [Split::Train, Split::Valid, Split::Test];

    pub fn as_str(self) -> &'static str {
        match self {
            Split::Train => "train",
            Split::Valid => "valid",
            Split::Test => "test",
        }
    }
}

impl fmt::Display for Split {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for Split {
    type Err = String;
    fn from_str(s: &str) -> Result<Self, String> {
        match s {
            "train" => Ok(Split::Train),
            "valid" => Ok(Split::Valid),
            "test" => Ok(Split::Test),
            other => Err(format!("unknown split `{other}`")),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Axis {
    Lon,
    Lat,
}

impl FromStr for Axis {
    type Err = String;
    fn from_str(s: &str) -> Result<Self, String> {
        match s {
            "lon" => Ok(Axis::Lon),
            "lat" => Ok(Axis::Lat),
            other => Err(format!("unknown axis `{other}`")),
        }
    }
}

impl fmt::Display for Axis {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Axis::Lon => "lon",
            Axis::Lat => "lat",
        })
    }
}

/// Three consecutive bands along one axis: train, then valid, then test.
/// Tiles whose centre is closer than `margin` degrees to a band boundary are
/// discarded.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SplitLayout {
    pub axis: Axis,
    /// Train/valid and valid/test boundaries, in degrees.
    pub boundaries: [f64; 2],
    pub margin: f64,
}

impl SplitLayout {
    /// Half-width of the discarded band around each boundary, in tile sides.
    /// Tile centres on opposite sides end up at least two sides apart, more
    /// than the 1.75 sides covered by a fully translated window.
    pub const MARGIN_TILES: f64 = 1.0;

    /// Bands sized by fractions of the extent left after removing the two
    /// discarded bands; test takes the remainder.
    pub fn from_fractions(bounds: Bounds, axis: Axis, train: f64, valid: f64, margin: f64) -> Self {
        assert!(train > 0.0 && valid >= 0.0 && train + valid <= 1.0, "bad split fractions");
        let (lo, hi) = match axis {
            Axis::Lon => (bounds.lon_min, bounds.lon_max),
            Axis::Lat => (bounds.lat_min, bounds.lat_max),
        };
        let usable = (hi - lo - 4.0 * margin).max(0.0);
        let b0 = lo + train * usable + margin;
        let b1 = b0 + 2.0 * margin + valid * usable;
        Self { axis, boundaries: [b0, b1], margin }
    }

    /// Default layout for tiles of the given side.
    pub fn for_tiles(bounds: Bounds, axis: Axis, train: f64, valid: f64, tile_side: f64) -> Self {
        Self::from_fractions(bounds, axis, train, valid, Self::MARGIN_TILES * tile_side)
    }
}

/// Split of a tile by the position of its centre; `None` means discarded.
pub fn assign_split(tile: &Tile, layout: &SplitLayout) -> Option<Split> {
    let (cx, cy) = tile.center();
    let v = match layout.axis {
        Axis::Lon => cx,
        Axis::Lat => cy,
    };
    if layout.boundaries.iter().any(|&b| (v - b).abs() < layout.margin) {
        return None;
    }
    Some(if v < layout.boundaries[0] {
        Split::Train
    } else if v < layout.boundaries[1] {
        Split::Valid
    } else {
        Split::Test
    })
}

/// Nearest-rank 99th percentile of per-graph maximum BFS edge spans, at least 1.
pub fn compute_frontier(spans: &[usize]) -> Result<usize, DatasetError> {
    if spans.is_empty() {
        return Err(DatasetError::EmptyDataset);
    }
    let mut sorted = spans.to_vec();
    sorted.sort_unstable();
    let rank = (99 * sorted.len()).div_ceil(100);
    Ok(sorted[rank - 1].max(1))
}

#[cfg(test)]
mod tests {
    use super::*;

    fn square_map(segs: &[((f64, f64), (f64, f64))]) -> MapSource {
        let b = Bounds { lon_min: 0.0, lat_min: 0.0, lon_max: 0.004, lat_max: 0.004 };
        MapSource::new(segs.iter().map(|&(a, e)| GeoSegment::new(a, e)).collect(), b).unwrap()
    }

    #[test]
    fn crossing_segment_is_clipped_to_the_boundary() {
        let map = square_map(&[((0.0, 0.0015), (0.004, 0.0015))]);
        let g = extract_tile(&map, &Tile::new((0.001, 0.001), 0.001), 0, &TileParams::default()).unwrap();
        assert_eq!(g.node_count(), 2);
        assert_eq!(g.edge_count(), 1);
        let mut xs: Vec<f64> = g.nodes().iter().map(|p| p.x).collect();
        xs.sort_by(f64::total_cmp);
        assert_eq!(xs, vec![-1.0, 1.0]);
        assert!(g.nodes().iter().all(|p| p.y.abs() < 1e-9));
    }

    #[test]
    fn north_maps_to_negative_y() {
        let map = square_map(&[((0.0015, 0.0015), (0.0015, 0.0019))]);
        let g = extract_tile(&map, &Tile::new((0.001, 0.001), 0.001), 0, &TileParams::default()).unwrap();
        let ys: Vec<f64> = g.nodes().iter().map(|p| p.y).collect();
        assert!(ys.iter().any(|&y| y.abs() < 1e-9));
        assert!(ys.iter().any(|&y| (y + 0.8).abs() < 1e-9));
    }

    #[test]
    fn merge_eps_in_normalized_units() {
        assert!((2.0 * DEFAULT_EPS_MERGE_DEG / DEFAULT_TILE_SIDE - 0.1).abs() < 1e-15);
    }

    #[test]
    fn empty_and_out_of_bounds_tiles() {
        let map = square_map(&[((0.0, 0.0), (0.0005, 0.0005))]);
        let t = Tile::new((0.002, 0.002), 0.001);
        assert!(matches!(extract_tile(&map, &t, 0, &TileParams::default()), Err(DatasetError::EmptyTile)));
        let edge = Tile::new((0.003, 0.003), 0.001);
        assert!(matches!(extract_tile(&map, &edge, 5, &TileParams::default()), Err(DatasetError::OutOfBounds)));
        assert!(matches!(extract_tile(&map, &t, 16, &TileParams::default()), Err(DatasetError::BadTranslation(16))));
    }

    #[test]
    fn translation_shifts_window() {
        let t = Tile::new((1.0, 2.0), 0.004);
        assert_eq!(t.translated_origin(0), (1.0, 2.0));
        let (x, y) = t.translated_origin(7);
        assert!((x - 1.003).abs() < 1e-15 && (y - 2.001).abs() < 1e-15);
    }

    #[test]
    fn liang_barsky_matches_direct_clip() {
        assert_eq!(clip((-1.0, 0.5), (2.0, 0.5), (0.0, 0.0), (1.0, 1.0)), Some((1.0 / 3.0, 2.0 / 3.0)));
        assert_eq!(clip((2.0, 2.0), (3.0, 3.0), (0.0, 0.0), (1.0, 1.0)), None);
        assert_eq!(clip((0.2, 0.2), (0.4, 0.3), (0.0, 0.0), (1.0, 1.0)), Some((0.0, 1.0)));
    }

    #[test]
    fn split_assignment() {
        let b = Bounds { lon_min: 0.0, lat_min: 0.0, lon_max: 0.1, lat_max: 0.1 };
        let layout = SplitLayout::from_fractions(b, Axis::Lon, 0.7, 0.1, 0.001);
        let at = |lon: f64| assign_split(&Tile::new((lon - 0.0005, 0.05), 0.001), &layout);
        assert_eq!(at(0.01), Some(Split::Train));
        assert_eq!(at(0.075), Some(Split::Valid));
        assert_eq!(at(0.09), Some(Split::Test));
        // usable extent 0.096: boundaries at 0.0672 + 0.001 and 0.0682 + 0.002 + 0.0096
        assert!((layout.boundaries[0] - 0.0682).abs() < 1e-12);
        assert!((layout.boundaries[1] - 0.0798).abs() < 1e-12);
        assert_eq!(at(0.0685), None);
        assert_eq!(at(0.0693), Some(Split::Valid));
        assert_eq!(at(0.0795), None);
    }

    #[test]
    fn frontier_percentile() {
        assert_eq!(compute_frontier(&[3, 3, 3]).unwrap(), 3);
        let spans: Vec<usize> = (1..=100).collect();
        let mut sorted = spans.clone();
        sorted.sort();
        assert_eq!(compute_frontier(&spans).unwrap(), sorted[(0.99f64 * 100.0).ceil() as usize - 1]);
        assert_eq!(compute_frontier(&[5]).unwrap(), 5);
        assert!(matches!(compute_frontier(&[]), Err(DatasetError::EmptyDataset)));
    }

    #[test]
    fn csv_round_trip() {
        let map = square_map(&[((0.0, 0.0), (0.0005, 0.0005)), ((0.001, 0.002), (0.003, 0.0001))]);
        let back = MapSource::from_csv(&map.to_csv()).unwrap();
        assert_eq!(back, map);
        let plain = MapSource::from_csv("0,0,1,1\n# note\n\n1,1,2,0.5\n").unwrap();
        assert_eq!(plain.bounds(), Bounds { lon_min: 0.0, lat_min: 0.0, lon_max: 2.0, lat_max: 1.0 });
        assert!(matches!(MapSource::from_csv("0,0,1\n"), Err(DatasetError::Parse { line: 1, .. })));
    }

    #[test]
    fn tile_enumeration_leaves_room_for_translation() {
        let b = Bounds { lon_min: 0.0, lat_min: 0.0, lon_max: 0.021, lat_max: 0.011 };
        let tiles = enumerate_tiles(b, 0.001);
        assert_eq!(tiles.len(), 20 * 10);
        for (_, _, t) in &tiles {
            let (x, y) = t.translated_origin(15);
            assert!(x + t.side <= b.lon_max + 1e-12 && y + t.side <= b.lat_max + 1e-12);
        }
        // first tile is the north-west one
        assert!(tiles[0].2.origin.1 > tiles.last().unwrap().2.origin.1);
    }
}
