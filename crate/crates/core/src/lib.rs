//! Road-network graph toolkit: geometry preprocessing, canonical sequence
//! encoding, segmentation rendering, the StreetMover metric, tile stitching
//! and dataset construction.
//!
//! Geometry and metric code is generic over [`Real`] (`f32` or `f64`); the
//! aliases below fix the scalar for the common cases.

pub mod dataset;
pub mod geom;
pub mod kv;
pub mod raster;
mod real;
pub mod stitch;
pub mod streetmover;

pub use real::Real;

pub type Point = geom::Point2<f64>;
pub type PointF32 = geom::Point2<f32>;
pub type Graph = geom::RoadGraph<f64>;
pub type GraphF32 = geom::RoadGraph<f32>;
pub type Sequence = geom::CanonicalSequence<f64>;
pub type Cloud = streetmover::PointCloud<f64>;
pub type Transport = streetmover::TransportResult<f64>;
