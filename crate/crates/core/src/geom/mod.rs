//! Embedded road graphs and their preprocessing and canonicalization.

mod graph;
mod point;
mod preprocess;
pub mod rgf;
mod sequence;

pub use graph::{GraphError, RoadGraph};
pub use point::{intersect_geo_segments, intersect_segments, GeoSegment, Point2, Segment};

pub(crate) use preprocess::UnionFind;
pub use preprocess::{
    bend_deviation_deg, clean_graph, filter_graph, merge_close_nodes, planarize, straighten, FilterOutcome,
    RejectReason, MAX_EDGES, MAX_NODES, MIN_NODES,
};
pub use sequence::{
    canonical_order, canonicalize, dihedral_augment, from_sequence, max_span, to_sequence, CanonicalSequence,
    Dihedral, SequenceError, SequenceStep, SoftStep,
};
