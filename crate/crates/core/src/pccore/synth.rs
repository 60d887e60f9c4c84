//! Synthetic multi-sensor capture.
//!
//! A vertical ellipsoid "body" is sampled on its surface, rigidly animated over
//! time and labeled with the sensor that faces each surface point most directly.
//! Points no sensor faces are resampled, so every emitted point has a contributor.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use super::{Point, PointCloudFrame, SensorPose};
use crate::{Vec3, Vec3d, Vec3f};

#[derive(Debug, thiserror::Error, PartialEq)]
pub enum SynthError {
    #[error("at least one sensor pose is required")]
    NoSensors,
    #[error("point count must be positive")]
    NonPositivePointCount,
    #[error("frame rate must be positive, got {0}")]
    NonPositiveFps(f64),
    #[error("sensor poses must have ids 0..{count}; found id {id}")]
    BadSensorId { id: u8, count: usize },
    #[error("body semi-axes must be positive")]
    BadBody,
}

/// Ellipsoid standing in for the captured person.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Body {
    pub center: Vec3d,
    pub semi_axes: Vec3d,
}

impl Default for Body {
    fn default() -> Self {
        Self {
            center: Vec3::new(0.0, 1.0, 0.0),
            semi_axes: Vec3::new(0.24, 0.85, 0.14),
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct SynthConfig {
    pub point_count: usize,
    pub sensor_poses: Vec<SensorPose<f64>>,
    pub seed: u64,
    pub frame_count: usize,
    pub fps: f64,
    pub body: Body,
}

impl Default for SynthConfig {
    fn default() -> Self {
        let body = Body::default();
        Self {
            point_count: 130_000,
            sensor_poses: ring_poses(3, body.center, 1.6),
            seed: 7,
            frame_count: 150,
            fps: 15.0,
            body,
        }
    }
}

/// `count` sensors evenly spaced on a horizontal circle around `center`, each
/// looking at it. Sensor 0 sits on the +Z side.
pub fn ring_poses(count: usize, center: Vec3d, radius: f64) -> Vec<SensorPose<f64>> {
    (0..count)
        .map(|k| {
            let phi = std::f64::consts::TAU * k as f64 / count as f64;
            let position = center + Vec3::new(phi.sin(), 0.0, phi.cos()) * radius;
            SensorPose::look_at(k as u8, position, center, Vec3::new(0.0, 1.0, 0.0))
                .expect("ring pose is a valid rigid transform")
        })
        .collect()
}

impl SynthConfig {
    pub fn validate(&self) -> Result<(), SynthError> {
        if self.sensor_poses.is_empty() {
            return Err(SynthError::NoSensors);
        }
        if self.point_count == 0 {
            return Err(SynthError::NonPositivePointCount);
        }
        if !(self.fps > 0.0) {
            return Err(SynthError::NonPositiveFps(self.fps));
        }
        let count = self.sensor_poses.len();
        for pose in &self.sensor_poses {
            if usize::from(pose.sensor_id) >= count {
                return Err(SynthError::BadSensorId {
                    id: pose.sensor_id,
                    count,
                });
            }
        }
        let a = self.body.semi_axes;
        if !(a.x > 0.0 && a.y > 0.0 && a.z > 0.0) {
            return Err(SynthError::BadBody);
        }
        Ok(())
    }
}

/// Small rigid motion of the body at time `t` seconds: yaw angle and translation.
fn body_motion(t: f64) -> (f64, Vec3d) {
    use std::f64::consts::TAU;
    let yaw = 0.15 * (TAU * 0.4 * t).sin();
    let sway = Vec3::new(
        0.03 * (TAU * 0.25 * t).sin(),
        0.01 * (TAU * 0.5 * t).sin(),
        0.0,
    );
    (yaw, sway)
}

fn rotate_yaw(v: Vec3d, yaw: f64) -> Vec3d {
    let (s, c) = yaw.sin_cos();
    Vec3::new(c * v.x + s * v.z, v.y, -s * v.x + c * v.z)
}

/// Cheap integer hash for procedural texture.
fn hash3(x: i64, y: i64, z: i64) -> u32 {
    let mut h = (x as u64).wrapping_mul(0x9E37_79B9_7F4A_7C15)
        ^ (y as u64).wrapping_mul(0xC2B2_AE3D_27D4_EB4F)
        ^ (z as u64).wrapping_mul(0x1656_67B1_9E37_79F9);
    h ^= h >> 29;
    h = h.wrapping_mul(0xBF58_476D_1CE4_E5B9);
    h ^= h >> 32;
    h as u32
}

fn body_color(local: Vec3d, body: &Body, rng: &mut ChaCha8Rng) -> [u8; 3] {
    // Height in [0, 1] from feet to head.
    let h = (local.y / body.semi_axes.y + 1.0) * 0.5;
    let base: [f64; 3] = if h > 0.84 {
        [222.0, 170.0, 138.0]
    } else if h > 0.45 {
        [38.0, 88.0, 158.0]
    } else {
        [52.0, 52.0, 64.0]
    };
    // 2 cm cell noise everywhere, plus a finer check print on the front of the shirt.
    let cell = 0.02;
    let n = hash3(
        (local.x / cell).floor() as i64,
        (local.y / cell).floor() as i64,
        (local.z / cell).floor() as i64,
    );
    let mut offset = (n % 33) as f64 - 16.0;
    if local.z > 0.0 && (0.45..=0.84).contains(&h) {
        let fine = 0.008;
        let check = ((local.x / fine).floor() as i64 + (local.y / fine).floor() as i64) & 1;
        offset += if check == 0 { 28.0 } else { -28.0 };
    }
    let jitter: f64 = rng.gen_range(-6.0..6.0);
    let c = |b: f64| (b + offset + jitter).round().clamp(0.0, 255.0) as u8;
    [c(base[0]), c(base[1]), c(base[2])]
}

fn frame_rng(seed: u64, frame: usize) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(seed ^ (frame as u64 + 1).wrapping_mul(0x9E37_79B9_7F4A_7C15))
}

/// Generates one frame of the sequence; `synth_capture` is this over all indices.
pub fn synth_frame(config: &SynthConfig, frame: usize) -> Result<PointCloudFrame, SynthError> {
    config.validate()?;
    let mut rng = frame_rng(config.seed, frame);
    let t = frame as f64 / config.fps;
    let (yaw, offset) = body_motion(t);
    let body = &config.body;
    let a = body.semi_axes;
    let forwards: Vec<(u8, Vec3d)> = config
        .sensor_poses
        .iter()
        .map(|p| (p.sensor_id, p.rotation_column(2)))
        .collect();

    let jitter: f64 = rng.gen_range(-0.05..0.05);
    let target = ((config.point_count as f64) * (1.0 + jitter)).round().max(1.0) as usize;
    let mut points = Vec::with_capacity(target);
    while points.len() < target {
        let z: f64 = rng.gen_range(-1.0..1.0);
        let phi: f64 = rng.gen_range(0.0..std::f64::consts::TAU);
        let r = (1.0 - z * z).sqrt();
        let u = Vec3::new(r * phi.cos(), z, r * phi.sin());
        let local = Vec3::new(u.x * a.x, u.y * a.y, u.z * a.z);
        let normal_local = Vec3::new(u.x / a.x, u.y / a.y, u.z / a.z)
            .normalized()
            .unwrap_or(u);
        let world = rotate_yaw(local, yaw) + body.center + offset;
        let normal = rotate_yaw(normal_local, yaw);

        // Front-facing test: the surface must face against the sensor's viewing axis.
        let mut best: Option<(u8, f64)> = None;
        for &(id, f) in &forwards {
            let facing = -normal.dot(f);
            if facing > 0.0 && best.map_or(true, |(_, b)| facing > b) {
                best = Some((id, facing));
            }
        }
        let Some((sensor_id, _)) = best else {
            continue;
        };
        let color = body_color(local, body, &mut rng);
        points.push(Point::new(world.cast::<f32>(), color, sensor_id));
    }
    let capture_ts_ms = frame as f64 * 1000.0 / config.fps;
    Ok(PointCloudFrame::new(
        frame as u64,
        capture_ts_ms,
        points,
        config.sensor_poses.len(),
    )
    .expect("synthetic points are finite and labeled with declared sensors"))
}

/// Generates the full frame sequence. Pure function of `config`.
pub fn synth_capture(config: &SynthConfig) -> Result<Vec<PointCloudFrame>, SynthError> {
    config.validate()?;
    (0..config.frame_count)
        .map(|i| synth_frame(config, i))
        .collect()
}

/// Positions as f32 for callers that only need the geometry.
pub fn positions(frame: &PointCloudFrame) -> impl Iterator<Item = Vec3f> + '_ {
    frame.points.iter().map(|p| p.position)
}
