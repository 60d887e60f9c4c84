//! Per-sensor tiling.
//!
//! A frame is split into one tile per contributing sensor. Each tile carries the
//! sensor's viewing direction as its surface orientation and the centroid of its
//! bounding box; both feed the tile utility in [`crate::adaptation`].

use std::collections::BTreeMap;

use crate::pccore::{
    bounding_box, GeometryError, Point, PointCloudFrame, SensorPose, ORTHONORMAL_TOLERANCE,
};
use crate::{Real, Vec3};

#[derive(Debug, thiserror::Error, PartialEq)]
pub enum TilingError {
    #[error("no pose for sensor {0}")]
    MissingPose(u8),
    #[error(transparent)]
    Geometry(#[from] GeometryError),
}

/// Points contributed by one sensor.
#[derive(Debug, Clone, PartialEq)]
pub struct Tile<T> {
    /// Equal to the contributing sensor id.
    pub tile_id: u8,
    /// Unit vector, world frame.
    pub orientation: Vec3<T>,
    pub bbox_centroid: Vec3<T>,
    pub points: Vec<Point>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct TileSet<T> {
    pub frame_index: u64,
    pub capture_ts_ms: f64,
    /// Ascending by `tile_id`; sensors without points have no tile.
    pub tiles: Vec<Tile<T>>,
}

impl<T: Real> TileSet<T> {
    pub fn point_count(&self) -> usize {
        self.tiles.iter().map(|t| t.points.len()).sum()
    }

    pub fn tile(&self, tile_id: u8) -> Option<&Tile<T>> {
        self.tiles.iter().find(|t| t.tile_id == tile_id)
    }
}

/// Viewing direction of a sensor: its rotation applied to the local +Z axis.
pub fn sensor_forward<T: Real>(pose: &SensorPose<T>) -> Result<Vec3<T>, TilingError> {
    // Poses are validated on construction, but a cast to a narrower scalar may drift.
    let deviation = pose.orthonormal_deviation();
    if deviation > ORTHONORMAL_TOLERANCE {
        return Err(GeometryError::NotOrthonormal { deviation }.into());
    }
    pose.rotation_column(2)
        .normalized()
        .ok_or(TilingError::Geometry(GeometryError::NotOrthonormal { deviation: 1.0 }))
}

/// Partitions `frame` by sensor id, keeping the input order inside every tile.
pub fn tile_frame<T: Real>(
    frame: &PointCloudFrame,
    poses: &[SensorPose<T>],
) -> Result<TileSet<T>, TilingError> {
    let mut groups: BTreeMap<u8, Vec<Point>> = BTreeMap::new();
    for p in &frame.points {
        groups.entry(p.sensor_id).or_default().push(*p);
    }
    let mut tiles = Vec::with_capacity(groups.len());
    for (tile_id, points) in groups {
        let pose = poses
            .iter()
            .find(|p| p.sensor_id == tile_id)
            .ok_or(TilingError::MissingPose(tile_id))?;
        let orientation = sensor_forward(pose)?;
        let bbox = bounding_box(points.iter().map(|p| p.position.cast::<T>()))?;
        tiles.push(Tile {
            tile_id,
            orientation,
            bbox_centroid: bbox.centroid(),
            points,
        });
    }
    Ok(TileSet {
        frame_index: frame.frame_index,
        capture_ts_ms: frame.capture_ts_ms,
        tiles,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::pccore::synth::{synth_frame, SynthConfig};
    use crate::Vec3f;
    use rand::{Rng, SeedableRng};

    fn pt(x: f32, s: u8) -> Point {
        Point::new(Vec3f::new(x, 0.0, 0.0), [0, 0, 0], s)
    }

    #[test]
    fn single_sensor_single_tile() {
        let frame = PointCloudFrame::from_points(0, 0.0, (0..5).map(|i| pt(i as f32, 0)).collect()).unwrap();
        let ts = tile_frame(&frame, &[SensorPose::<f64>::identity(0)]).unwrap();
        assert_eq!(ts.tiles.len(), 1);
        assert_eq!(ts.tiles[0].points, frame.points);
        assert_eq!(ts.tiles[0].orientation, Vec3::new(0.0, 0.0, 1.0));
        assert_eq!(ts.tiles[0].bbox_centroid, Vec3::new(2.0, 0.0, 0.0));
    }

    #[test]
    fn empty_sensor_produces_no_tile() {
        let frame = PointCloudFrame::new(0, 0.0, vec![pt(0.0, 0), pt(1.0, 1), pt(2.0, 0)], 3).unwrap();
        let poses: Vec<_> = (0..3).map(SensorPose::<f64>::identity).collect();
        let ts = tile_frame(&frame, &poses).unwrap();
        let ids: Vec<u8> = ts.tiles.iter().map(|t| t.tile_id).collect();
        assert_eq!(ids, vec![0, 1]);
        assert_eq!(ts.tiles[0].points, vec![pt(0.0, 0), pt(2.0, 0)]);
    }

    #[test]
    fn missing_pose_errors() {
        let frame = PointCloudFrame::from_points(0, 0.0, vec![pt(0.0, 2)]).unwrap();
        assert_eq!(
            tile_frame(&frame, &[SensorPose::<f64>::identity(0)]).unwrap_err(),
            TilingError::MissingPose(2)
        );
    }

    #[test]
    fn forward_of_identity_and_half_turn() {
        assert_eq!(
            sensor_forward(&SensorPose::<f64>::identity(0)).unwrap(),
            Vec3::new(0.0, 0.0, 1.0)
        );
        let yaw180 = SensorPose::from_rotation_translation(
            0,
            [[-1.0, 0.0, 0.0], [0.0, 1.0, 0.0], [0.0, 0.0, -1.0]],
            Vec3::new(3.0, 4.0, 5.0),
        )
        .unwrap();
        assert_eq!(sensor_forward(&yaw180).unwrap(), Vec3::new(0.0, 0.0, -1.0));
    }

    /// Rotation from a random unit quaternion.
    fn random_rotation(rng: &mut impl Rng) -> [[f64; 3]; 3] {
        let q: Vec<f64> = (0..4).map(|_| rng.gen_range(-1.0..1.0)).collect();
        let n = q.iter().map(|v| v * v).sum::<f64>().sqrt();
        let (w, x, y, z) = (q[0] / n, q[1] / n, q[2] / n, q[3] / n);
        [
            [1.0 - 2.0 * (y * y + z * z), 2.0 * (x * y - w * z), 2.0 * (x * z + w * y)],
            [2.0 * (x * y + w * z), 1.0 - 2.0 * (x * x + z * z), 2.0 * (y * z - w * x)],
            [2.0 * (x * z - w * y), 2.0 * (y * z + w * x), 1.0 - 2.0 * (x * x + y * y)],
        ]
    }

    #[test]
    fn forward_is_third_column_and_translation_invariant() {
        let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(3);
        for _ in 0..200 {
            let r = random_rotation(&mut rng);
            let a = SensorPose::from_rotation_translation(0, r, Vec3::zero()).unwrap();
            let t = Vec3::new(rng.gen_range(-9.0..9.0), rng.gen_range(-9.0..9.0), 1.0);
            let b = SensorPose::from_rotation_translation(0, r, t).unwrap();
            let fa = sensor_forward(&a).unwrap();
            let col = Vec3::new(r[0][2], r[1][2], r[2][2]);
            assert!((fa - col).norm() < 1e-6);
            assert!((fa.norm() - 1.0).abs() < 1e-6);
            assert_eq!(fa, sensor_forward(&b).unwrap());
        }
    }

    #[test]
    fn synthetic_frame_has_three_tiles() {
        let cfg = SynthConfig {
            point_count: 3_000,
            frame_count: 1,
            ..SynthConfig::default()
        };
        let frame = synth_frame(&cfg, 0).unwrap();
        let ts = tile_frame(&frame, &cfg.sensor_poses).unwrap();
        assert_eq!(ts.tiles.len(), 3);
        assert_eq!(ts.point_count(), frame.points.len());
        for tile in &ts.tiles {
            assert!(tile.points.iter().all(|p| p.sensor_id == tile.tile_id));
            assert!((tile.orientation.norm() - 1.0).abs() < 1e-6);
        }
    }
}
