//! Point cloud data model, PLY I/O and synthetic capture.

mod geometry;
pub mod ply;
pub mod synth;

pub use geometry::{bounding_box, BoundingBox, GeometryError, SensorPose, ORTHONORMAL_TOLERANCE};
pub use ply::{emit_ply, load_ply, read_ply, write_ply, PlyError};
pub use synth::{synth_capture, SynthConfig, SynthError};

use crate::Vec3f;

/// Bytes per point in the uncompressed serialization: xyz as f32, rgb as u8, sensor id as u8.
pub const UNCOMPRESSED_POINT_BYTES: usize = 16;

/// A fused, colored point labeled with the sensor that contributed it.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Point {
    pub position: Vec3f,
    pub color: [u8; 3],
    pub sensor_id: u8,
}

impl Point {
    pub fn new(position: Vec3f, color: [u8; 3], sensor_id: u8) -> Self {
        Self {
            position,
            color,
            sensor_id,
        }
    }

    /// Appends the fixed 16-byte little-endian layout.
    pub fn write_uncompressed(&self, out: &mut Vec<u8>) {
        out.extend_from_slice(&self.position.x.to_le_bytes());
        out.extend_from_slice(&self.position.y.to_le_bytes());
        out.extend_from_slice(&self.position.z.to_le_bytes());
        out.extend_from_slice(&self.color);
        out.push(self.sensor_id);
    }

    /// Reads one point from a 16-byte chunk.
    pub fn read_uncompressed(chunk: &[u8; UNCOMPRESSED_POINT_BYTES]) -> Self {
        let f = |i: usize| f32::from_le_bytes([chunk[i], chunk[i + 1], chunk[i + 2], chunk[i + 3]]);
        Self {
            position: Vec3f::new(f(0), f(4), f(8)),
            color: [chunk[12], chunk[13], chunk[14]],
            sensor_id: chunk[15],
        }
    }
}

#[derive(Debug, thiserror::Error, PartialEq)]
pub enum FrameError {
    #[error("point {index} has non-finite position")]
    NonFinitePosition { index: usize },
    #[error("point {index} has sensor id {sensor_id} but the frame declares {sensor_count} sensors")]
    SensorOutOfRange {
        index: usize,
        sensor_id: u8,
        sensor_count: usize,
    },
    #[error("uncompressed payload length {0} is not a multiple of the point size")]
    BadPayloadLength(usize),
}

/// One captured frame.
#[derive(Debug, Clone, PartialEq)]
pub struct PointCloudFrame {
    pub frame_index: u64,
    /// Milliseconds since stream start.
    pub capture_ts_ms: f64,
    pub points: Vec<Point>,
    pub sensor_count: usize,
}

impl PointCloudFrame {
    /// Builds a frame after checking that every position is finite and every
    /// sensor id is below `sensor_count`.
    pub fn new(
        frame_index: u64,
        capture_ts_ms: f64,
        points: Vec<Point>,
        sensor_count: usize,
    ) -> Result<Self, FrameError> {
        for (index, p) in points.iter().enumerate() {
            if !p.position.is_finite() {
                return Err(FrameError::NonFinitePosition { index });
            }
            if usize::from(p.sensor_id) >= sensor_count {
                return Err(FrameError::SensorOutOfRange {
                    index,
                    sensor_id: p.sensor_id,
                    sensor_count,
                });
            }
        }
        Ok(Self {
            frame_index,
            capture_ts_ms,
            points,
            sensor_count,
        })
    }

    /// Builds a frame with `sensor_count = max(sensor_id) + 1`.
    pub fn from_points(
        frame_index: u64,
        capture_ts_ms: f64,
        points: Vec<Point>,
    ) -> Result<Self, FrameError> {
        let sensor_count = points
            .iter()
            .map(|p| usize::from(p.sensor_id) + 1)
            .max()
            .unwrap_or(1);
        Self::new(frame_index, capture_ts_ms, points, sensor_count)
    }

    pub fn len(&self) -> usize {
        self.points.len()
    }

    pub fn is_empty(&self) -> bool {
        self.points.is_empty()
    }

    pub fn uncompressed_len(&self) -> usize {
        self.points.len() * UNCOMPRESSED_POINT_BYTES
    }

    pub fn serialize_points(&self) -> Vec<u8> {
        let mut out = Vec::with_capacity(self.uncompressed_len());
        for p in &self.points {
            p.write_uncompressed(&mut out);
        }
        out
    }

    pub fn deserialize_points(bytes: &[u8]) -> Result<Vec<Point>, FrameError> {
        if bytes.len() % UNCOMPRESSED_POINT_BYTES != 0 {
            return Err(FrameError::BadPayloadLength(bytes.len()));
        }
        Ok(bytes
            .chunks_exact(UNCOMPRESSED_POINT_BYTES)
            .map(|c| Point::read_uncompressed(c.try_into().expect("chunk size")))
            .collect())
    }
}
