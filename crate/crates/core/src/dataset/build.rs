use std::fs;
use std::path::{Path, PathBuf};

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use super::{
    assign_split, compute_frontier, enumerate_tiles, extract_tile, Axis, DatasetError, MapSource, Split, SplitLayout,
    TileParams, DEFAULT_TILE_SIDE, TRANSLATIONS,
};
use crate::geom::rgf::{format_decimal, read_rgf, to_rgf_string};
use crate::geom::{
    canonicalize, filter_graph, max_span, to_sequence, CanonicalSequence, Dihedral, FilterOutcome, Point2,
    RejectReason, RoadGraph, SequenceStep, MAX_EDGES, MAX_NODES,
};
use crate::kv::KvMap;
use crate::raster::{encode_pgm, rasterize, read_pgm, GrayImage, DEFAULT_HALF_WIDTH, DEFAULT_SIZE};

pub const MANIFEST_FILE: &str = "manifest.jsonl";
pub const STATS_FILE: &str = "stats.json";
pub const CONFIG_FILE: &str = "dataset.cfg";

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DatasetConfig {
    pub tile_side: f64,
    pub tile: TileParams,
    pub split_axis: Axis,
    pub split_train: f64,
    pub split_valid: f64,
    pub seed: u64,
    pub augment: bool,
    pub image_size: usize,
    pub half_width: f64,
    /// Fixed frontier size; computed from the training split when `None`.
    pub frontier: Option<usize>,
}

impl Default for DatasetConfig {
    fn default() -> Self {
        Self {
            tile_side: DEFAULT_TILE_SIDE,
            tile: TileParams::default(),
            split_axis: Axis::Lon,
            split_train: 0.724,
            split_valid: 0.105,
            seed: 0,
            augment: true,
            image_size: DEFAULT_SIZE,
            half_width: DEFAULT_HALF_WIDTH,
            frontier: None,
        }
    }
}

impl DatasetConfig {
    pub const KEYS: &'static [&'static str] = &[
        "tile_side",
        "eps_merge_deg",
        "straighten_max_deviation_deg",
        "split_axis",
        "split_train",
        "split_valid",
        "seed",
        "augment",
        "image_size",
        "half_width",
        "frontier",
    ];

    /// Defaults overridden by the keys present in `kv`.
    pub fn from_kv(kv: &KvMap) -> Result<Self, DatasetError> {
        kv.check_known(Self::KEYS)?;
        let mut c = Self::default();
        if let Some(v) = kv.parse_value("tile_side")? {
            c.tile_side = v;
        }
        if let Some(v) = kv.parse_value("eps_merge_deg")? {
            c.tile.eps_merge_deg = v;
        }
        if let Some(v) = kv.parse_value("straighten_max_deviation_deg")? {
            c.tile.straighten_max_deviation_deg = v;
        }
        if let Some(v) = kv.parse_value("split_axis")? {
            c.split_axis = v;
        }
        if let Some(v) = kv.parse_value("split_train")? {
            c.split_train = v;
        }
        if let Some(v) = kv.parse_value("split_valid")? {
            c.split_valid = v;
        }
        if let Some(v) = kv.parse_value("seed")? {
            c.seed = v;
        }
        if let Some(v) = kv.parse_value("augment")? {
            c.augment = v;
        }
        if let Some(v) = kv.parse_value("image_size")? {
            c.image_size = v;
        }
        if let Some(v) = kv.parse_value("half_width")? {
            c.half_width = v;
        }
        match kv.get("frontier") {
            None | Some("auto") => {}
            Some(_) => c.frontier = kv.parse_value("frontier")?,
        }
        c.validate()?;
        Ok(c)
    }

    pub fn to_kv(&self) -> KvMap {
        let mut kv = KvMap::default();
        kv.insert("tile_side", self.tile_side);
        kv.insert("eps_merge_deg", self.tile.eps_merge_deg);
        kv.insert("straighten_max_deviation_deg", self.tile.straighten_max_deviation_deg);
        kv.insert("split_axis", self.split_axis);
        kv.insert("split_train", self.split_train);
        kv.insert("split_valid", self.split_valid);
        kv.insert("seed", self.seed);
        kv.insert("augment", self.augment);
        kv.insert("image_size", self.image_size);
        kv.insert("half_width", self.half_width);
        kv.insert("frontier", self.frontier.map_or("auto".to_string(), |m| m.to_string()));
        kv
    }

    pub fn validate(&self) -> Result<(), DatasetError> {
        let bad = |m: &str| Err(DatasetError::Config(m.to_string()));
        if !(self.tile_side > 0.0) {
            return bad("tile_side must be positive");
        }
        if !(self.tile.eps_merge_deg > 0.0) {
            return bad("eps_merge_deg must be positive");
        }
        let dev = self.tile.straighten_max_deviation_deg;
        if !(dev > 0.0 && dev < 90.0) {
            return bad("straighten_max_deviation_deg must lie in (0, 90)");
        }
        if !(self.split_train > 0.0 && self.split_valid >= 0.0 && self.split_train + self.split_valid <= 1.0) {
            return bad("split fractions must be positive and sum to at most 1");
        }
        if self.image_size == 0 || !(self.half_width > 0.0) {
            return bad("image_size and half_width must be positive");
        }
        if self.frontier == Some(0) {
            return bad("frontier must be at least 1");
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct SplitCounts {
    pub train: usize,
    pub valid: usize,
    pub test: usize,
}

impl SplitCounts {
    pub fn get(&self, s: Split) -> usize {
        match s {
            Split::Train => self.train,
            Split::Valid => self.valid,
            Split::Test => self.test,
        }
    }

    fn bump(&mut self, s: Split) {
        match s {
            Split::Train => self.train += 1,
            Split::Valid => self.valid += 1,
            Split::Test => self.test += 1,
        }
    }

    pub fn total(&self) -> usize {
        self.train + self.valid + self.test
    }
}

#[derive(Debug, Clone, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct DatasetStats {
    pub frontier: usize,
    pub tiles: usize,
    pub tiles_discarded: usize,
    pub tiles_per_split: SplitCounts,
    /// Tiles that produced at least one record.
    pub tiles_kept: SplitCounts,
    pub records: SplitCounts,
    pub variants_attempted: usize,
    /// Largest number of variants attempted for one tile.
    pub max_variants_per_tile: usize,
    /// Largest number of records emitted for one tile.
    pub max_records_per_tile: usize,
    pub empty_variants: usize,
    pub rejected_trivial: usize,
    pub rejected_too_many_nodes: usize,
    pub rejected_too_many_edges: usize,
    pub frontier_overflow: usize,
    /// `node_histogram[v]` records with `v` nodes.
    pub node_histogram: Vec<usize>,
    pub edge_histogram: Vec<usize>,
}

/// One manifest line. Paths are relative to the dataset directory.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ManifestRecord {
    pub id: String,
    pub split: Split,
    pub graph_path: String,
    pub image_path: String,
    pub sequence_path: String,
    pub n_nodes: usize,
    pub n_edges: usize,
    pub max_span: usize,
    pub tile_row: usize,
    pub tile_col: usize,
    pub translation: u8,
    pub dihedral: u8,
}

#[derive(Debug, Clone)]
pub struct BuildOutput {
    pub stats: DatasetStats,
    pub records: Vec<ManifestRecord>,
}

struct Candidate {
    translation: u8,
    dihedral: u8,
    graph: RoadGraph<f64>,
    span: usize,
}

#[derive(Default)]
struct TileOutcome {
    split: Option<Split>,
    attempted: usize,
    empty: usize,
    trivial: usize,
    nodes: usize,
    edges: usize,
    candidates: Vec<Candidate>,
}

fn process_tile(map: &MapSource, tile: &super::Tile, layout: &SplitLayout, config: &DatasetConfig) -> TileOutcome {
    let mut out = TileOutcome { split: assign_split(tile, layout), ..Default::default() };
    let Some(split) = out.split else { return out };
    let augmented = split == Split::Train && config.augment;
    let translations = if augmented { 0..TRANSLATIONS } else { 0..1 };
    let dihedrals: Vec<Dihedral> = if augmented { Dihedral::all().to_vec() } else { vec![Dihedral::IDENTITY] };
    for k in translations {
        let base = extract_tile(map, tile, k, &config.tile);
        for &d in &dihedrals {
            out.attempted += 1;
            let g = match &base {
                Ok(g) => g,
                Err(_) => {
                    out.empty += 1;
                    continue;
                }
            };
            let g = canonicalize(&g.map_points(|p| d.apply(p)));
            match filter_graph(&g) {
                FilterOutcome::Accept => {
                    let span = max_span(&g);
                    out.candidates.push(Candidate { translation: k, dihedral: d.index(), graph: g, span });
                }
                FilterOutcome::Reject(RejectReason::Trivial) => out.trivial += 1,
                FilterOutcome::Reject(RejectReason::TooManyNodes) => out.nodes += 1,
                FilterOutcome::Reject(RejectReason::TooManyEdges) => out.edges += 1,
            }
        }
    }
    out
}

/// Text form of a sequence: a `SEQ1 <steps> <M>` header, then one line per
/// step with the adjacency bits, the coordinates and the stop flag.
pub fn sequence_to_text(seq: &CanonicalSequence<f64>) -> String {
    let mut out = format!("SEQ1 {} {}\n", seq.steps.len(), seq.frontier_size);
    for s in &seq.steps {
        let bits: String = s.adjacency.iter().map(|&b| if b { '1' } else { '0' }).collect();
        out.push_str(&format!(
            "{} {} {} {}\n",
            bits,
            format_decimal(s.coords.x),
            format_decimal(s.coords.y),
            u8::from(s.stop)
        ));
    }
    out
}

pub fn read_sequence(text: &str) -> Result<CanonicalSequence<f64>, DatasetError> {
    let err = |line: usize, msg: &str| DatasetError::Parse { line, msg: msg.to_string() };
    let mut lines = text.lines();
    let header: Vec<&str> = lines.next().ok_or_else(|| err(1, "empty file"))?.split_whitespace().collect();
    if header.len() != 3 || header[0] != "SEQ1" {
        return Err(err(1, "expected `SEQ1 <steps> <M>`"));
    }
    let n: usize = header[1].parse().map_err(|_| err(1, "bad step count"))?;
    let m: usize = header[2].parse().map_err(|_| err(1, "bad frontier size"))?;
    let mut steps = Vec::with_capacity(n);
    for (i, line) in lines.enumerate() {
        let f: Vec<&str> = line.split_whitespace().collect();
        if f.len() != 4 || f[0].len() != m {
            return Err(err(i + 2, "expected `<bits> <x> <y> <stop>`"));
        }
        let adjacency = f[0].chars().map(|c| c == '1').collect();
        let x: f64 = f[1].parse().map_err(|_| err(i + 2, "bad x"))?;
        let y: f64 = f[2].parse().map_err(|_| err(i + 2, "bad y"))?;
        steps.push(SequenceStep { adjacency, coords: Point2::new(x, y), stop: f[3] == "1" });
    }
    if steps.len() != n {
        return Err(err(n + 1, "step count does not match header"));
    }
    let seq = CanonicalSequence { steps, frontier_size: m };
    seq.validate().map_err(|e| err(0, &e.to_string()))?;
    Ok(seq)
}

fn run_in_pool<R: Send>(workers: usize, f: impl FnOnce() -> R + Send) -> Result<R, DatasetError> {
    if workers == 0 {
        return Ok(f());
    }
    let pool = rayon::ThreadPoolBuilder::new()
        .num_threads(workers)
        .build()
        .map_err(|e| DatasetError::Config(format!("worker pool: {e}")))?;
    Ok(pool.install(f))
}

/// Builds the dataset under `out_dir`.
///
/// Train tiles get all 16 translations x 8 dihedral images (when augmentation
/// is on); valid and test tiles are used as-is. Each variant is filtered on
/// its own. Records whose maximum BFS span exceeds the frontier size are
/// dropped. `workers = 0` uses the global thread pool; output does not depend
/// on the worker count.
pub fn build_dataset(
    map: &MapSource,
    config: &DatasetConfig,
    out_dir: &Path,
    workers: usize,
) -> Result<BuildOutput, DatasetError> {
    config.validate()?;
    let tiles = enumerate_tiles(map.bounds(), config.tile_side);
    let layout = SplitLayout::for_tiles(
        map.bounds(),
        config.split_axis,
        config.split_train,
        config.split_valid,
        config.tile_side,
    );
    let outcomes: Vec<TileOutcome> =
        run_in_pool(workers, || tiles.par_iter().map(|(_, _, t)| process_tile(map, t, &layout, config)).collect())?;

    let mut stats = DatasetStats {
        tiles: tiles.len(),
        node_histogram: vec![0; MAX_NODES + 1],
        edge_histogram: vec![0; MAX_EDGES + 1],
        ..Default::default()
    };
    let mut train_spans = Vec::new();
    for o in &outcomes {
        match o.split {
            None => stats.tiles_discarded += 1,
            Some(s) => {
                stats.tiles_per_split.bump(s);
                if s == Split::Train {
                    train_spans.extend(o.candidates.iter().map(|c| c.span));
                }
            }
        }
        stats.variants_attempted += o.attempted;
        stats.max_variants_per_tile = stats.max_variants_per_tile.max(o.attempted);
        stats.empty_variants += o.empty;
        stats.rejected_trivial += o.trivial;
        stats.rejected_too_many_nodes += o.nodes;
        stats.rejected_too_many_edges += o.edges;
    }
    let frontier = match config.frontier {
        Some(m) => m,
        None => compute_frontier(&train_spans)?,
    };
    stats.frontier = frontier;

    struct Pending<'a> {
        record: ManifestRecord,
        graph: &'a RoadGraph<f64>,
    }
    let mut pending = Vec::new();
    for ((row, col, _), o) in tiles.iter().zip(&outcomes) {
        let Some(split) = o.split else { continue };
        let mut kept = 0;
        for c in &o.candidates {
            if c.span > frontier {
                stats.frontier_overflow += 1;
                continue;
            }
            kept += 1;
            let id = format!("r{row:03}c{col:03}k{:02}d{}", c.translation, c.dihedral);
            stats.records.bump(split);
            stats.node_histogram[c.graph.node_count()] += 1;
            stats.edge_histogram[c.graph.edge_count()] += 1;
            pending.push(Pending {
                record: ManifestRecord {
                    graph_path: format!("graphs/{id}.rgf"),
                    image_path: format!("images/{id}.pgm"),
                    sequence_path: format!("sequences/{id}.seq"),
                    id,
                    split,
                    n_nodes: c.graph.node_count(),
                    n_edges: c.graph.edge_count(),
                    max_span: c.span,
                    tile_row: *row,
                    tile_col: *col,
                    translation: c.translation,
                    dihedral: c.dihedral,
                },
                graph: &c.graph,
            });
        }
        if kept > 0 {
            stats.tiles_kept.bump(split);
        }
        stats.max_records_per_tile = stats.max_records_per_tile.max(kept);
    }

    for sub in ["graphs", "images", "sequences"] {
        fs::create_dir_all(out_dir.join(sub))?;
    }
    let size = config.image_size;
    let half_width = config.half_width;
    let written: Result<Vec<()>, DatasetError> = run_in_pool(workers, || {
        pending
            .par_iter()
            .map(|p| -> Result<(), DatasetError> {
                let seq = to_sequence(p.graph, frontier).expect("span checked against frontier");
                fs::write(out_dir.join(&p.record.graph_path), to_rgf_string(p.graph))?;
                fs::write(out_dir.join(&p.record.image_path), encode_pgm(&rasterize(p.graph, size, half_width)))?;
                fs::write(out_dir.join(&p.record.sequence_path), sequence_to_text(&seq))?;
                Ok(())
            })
            .collect()
    })?;
    written?;

    let mut manifest = String::new();
    for p in &pending {
        manifest.push_str(&serde_json::to_string(&p.record)?);
        manifest.push('\n');
    }
    fs::write(out_dir.join(MANIFEST_FILE), manifest)?;
    fs::write(out_dir.join(STATS_FILE), serde_json::to_string_pretty(&stats)? + "\n")?;
    let mut cfg = config.to_kv();
    cfg.insert("frontier", frontier);
    fs::write(out_dir.join(CONFIG_FILE), cfg.to_text())?;

    Ok(BuildOutput { stats, records: pending.into_iter().map(|p| p.record).collect() })
}

#[derive(Debug, Clone)]
pub struct LoadedRecord {
    pub manifest: ManifestRecord,
    pub graph: RoadGraph<f64>,
    pub image: GrayImage,
}

impl LoadedRecord {
    pub fn sequence(&self, frontier: usize) -> CanonicalSequence<f64> {
        to_sequence(&self.graph, frontier).expect("dataset graphs fit the frontier")
    }
}

#[derive(Debug, Clone)]
pub struct LoadedDataset {
    pub root: PathBuf,
    pub config: DatasetConfig,
    pub frontier: usize,
    pub records: Vec<LoadedRecord>,
}

impl LoadedDataset {
    pub fn split(&self, split: Split) -> Vec<&LoadedRecord> {
        self.records.iter().filter(|r| r.manifest.split == split).collect()
    }
}

/// Reads a dataset directory written by [`build_dataset`].
pub fn load_dataset(dir: &Path) -> Result<LoadedDataset, DatasetError> {
    let cfg = KvMap::parse(&fs::read_to_string(dir.join(CONFIG_FILE))?)?;
    let config = DatasetConfig::from_kv(&cfg)?;
    let frontier = config.frontier.ok_or_else(|| DatasetError::Config("dataset.cfg lacks a frontier".into()))?;
    let manifest = fs::read_to_string(dir.join(MANIFEST_FILE))?;
    let entries: Vec<ManifestRecord> =
        manifest.lines().filter(|l| !l.trim().is_empty()).map(serde_json::from_str).collect::<Result<_, _>>()?;
    let records = entries
        .into_par_iter()
        .map(|m| -> Result<LoadedRecord, DatasetError> {
            let graph = read_rgf(&dir.join(&m.graph_path))?;
            let image = read_pgm(&dir.join(&m.image_path))?;
            Ok(LoadedRecord { manifest: m, graph, image })
        })
        .collect::<Result<Vec<_>, _>>()?;
    Ok(LoadedDataset { root: dir.to_path_buf(), config, frontier, records })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::dataset::generate_synthetic_map;
    use crate::geom::from_sequence;

    #[test]
    fn config_round_trip() {
        let c = DatasetConfig { seed: 9, frontier: Some(4), augment: false, ..Default::default() };
        assert_eq!(DatasetConfig::from_kv(&c.to_kv()).unwrap(), c);
        let bad = KvMap::parse("tile_size = 3").unwrap();
        assert!(DatasetConfig::from_kv(&bad).is_err());
    }

    #[test]
    fn sequence_text_round_trip() {
        let g = canonicalize(
            &RoadGraph::new(
                vec![Point2::new(-0.5, -0.5), Point2::new(0.5, -0.5), Point2::new(0.5, 0.5), Point2::new(-0.25, 0.125)],
                vec![(0, 1), (1, 2), (2, 3), (3, 0)],
            )
            .unwrap(),
        );
        let seq = to_sequence(&g, 3).unwrap();
        let back = read_sequence(&sequence_to_text(&seq)).unwrap();
        assert_eq!(back, seq);
        assert!(read_sequence("SEQ1 2 3\n000 0 0 1\n").is_err());
    }

    #[test]
    fn small_build_is_consistent() {
        let map = generate_synthetic_map(5, 6).unwrap();
        let dir = tempfile::tempdir().unwrap();
        let out = build_dataset(&map, &DatasetConfig::default(), dir.path(), 2).unwrap();
        assert!(out.stats.records.train > 0);
        assert!(out.stats.max_records_per_tile <= 128);
        assert_eq!(out.stats.max_variants_per_tile, 128);
        let loaded = load_dataset(dir.path()).unwrap();
        assert_eq!(loaded.records.len(), out.records.len());
        assert_eq!(loaded.frontier, out.stats.frontier);
        for r in &loaded.records {
            assert_eq!(filter_graph(&r.graph), FilterOutcome::Accept);
            let seq = r.sequence(loaded.frontier);
            assert_eq!(from_sequence(&seq.to_soft(), 0.5), r.graph);
            assert_eq!(r.image, rasterize(&r.graph, 64, 1.5));
        }
    }
}
