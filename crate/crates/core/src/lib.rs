//! Tiled user-adaptive real-time point cloud streaming.
//!
//! The crate is organised along the streaming dataflow:
//!
//! * [`pccore`]: point and frame types, PLY I/O and a synthetic multi-sensor capture.
//! * [`tiling`]: per-sensor tiles carrying an orientation and a bounding-box centroid.
//! * [`codec`]: octree-occupancy geometry coding with quantized leaf-order attributes.
//! * [`adaptation`]: tile utility, ranking and per-frame budget allocation.
//! * [`stream`]: sender, receiver, transport, synchronizer and the session simulator.
//!
//! Geometry is generic over the scalar type (see [`Real`]); the aliases below fix the
//! precision used on the wire (`f32`) and in the adaptation engine (`f64`).

pub mod adaptation;
pub mod codec;
pub mod pccore;
pub mod scalar;
pub mod stream;
pub mod tiling;

pub use scalar::{Real, Vec3};

/// Single-precision vector; the storage type of point positions.
pub type Vec3f = Vec3<f32>;
/// Double-precision vector used by the adaptation engine.
pub type Vec3d = Vec3<f64>;

pub type BoundingBoxf = pccore::BoundingBox<f32>;
pub type BoundingBoxd = pccore::BoundingBox<f64>;
pub type SensorPosed = pccore::SensorPose<f64>;
pub type Tiled = tiling::Tile<f64>;
pub type TileSetd = tiling::TileSet<f64>;
pub type Viewportd = adaptation::Viewport<f64>;
pub type TileMetadatad = adaptation::TileMetadata<f64>;
