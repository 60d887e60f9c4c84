use crate::{Real, Vec3};

/// Tolerance on the orthonormality of a pose's rotation block.
pub const ORTHONORMAL_TOLERANCE: f64 = 1e-6;

#[derive(Debug, thiserror::Error, PartialEq)]
pub enum GeometryError {
    #[error("bounding box of an empty point set")]
    Empty,
    #[error("rotation block is not orthonormal (max deviation {deviation:e})")]
    NotOrthonormal { deviation: f64 },
    #[error("last row of the transform must be (0, 0, 0, 1)")]
    NotAffine,
    #[error("transform contains non-finite entries")]
    NonFinite,
}

/// Axis-aligned box with `min <= max` componentwise.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct BoundingBox<T> {
    pub min: Vec3<T>,
    pub max: Vec3<T>,
}

impl<T: Real> BoundingBox<T> {
    pub fn centroid(&self) -> Vec3<T> {
        let two = T::one() + T::one();
        (self.min + self.max) / two
    }

    pub fn extent(&self) -> Vec3<T> {
        self.max - self.min
    }

    pub fn contains(&self, p: Vec3<T>) -> bool {
        self.min.le_all(p) && p.le_all(self.max)
    }

    pub fn include(&mut self, p: Vec3<T>) {
        self.min = self.min.min(p);
        self.max = self.max.max(p);
    }
}

/// Componentwise min/max of a non-empty set of positions.
pub fn bounding_box<T: Real>(
    positions: impl IntoIterator<Item = Vec3<T>>,
) -> Result<BoundingBox<T>, GeometryError> {
    let mut iter = positions.into_iter();
    let first = iter.next().ok_or(GeometryError::Empty)?;
    let mut bbox = BoundingBox {
        min: first,
        max: first,
    };
    for p in iter {
        bbox.include(p);
    }
    Ok(bbox)
}

/// Rigid sensor-to-world transform (row-major 4×4).
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SensorPose<T> {
    pub sensor_id: u8,
    transform: [[T; 4]; 4],
}

impl<T: Real> SensorPose<T> {
    /// Validates that the upper-left 3×3 block is orthonormal and the last row is `(0,0,0,1)`.
    pub fn new(sensor_id: u8, transform: [[T; 4]; 4]) -> Result<Self, GeometryError> {
        if transform.iter().flatten().any(|v| !v.is_finite()) {
            return Err(GeometryError::NonFinite);
        }
        let last = transform[3];
        if last[0] != T::zero() || last[1] != T::zero() || last[2] != T::zero() || last[3] != T::one()
        {
            return Err(GeometryError::NotAffine);
        }
        let pose = Self {
            sensor_id,
            transform,
        };
        let deviation = pose.orthonormal_deviation();
        if deviation > ORTHONORMAL_TOLERANCE {
            return Err(GeometryError::NotOrthonormal { deviation });
        }
        Ok(pose)
    }

    /// Builds a pose from a rotation (columns are the sensor axes in world frame) and a translation.
    pub fn from_rotation_translation(
        sensor_id: u8,
        rotation: [[T; 3]; 3],
        translation: Vec3<T>,
    ) -> Result<Self, GeometryError> {
        let z = T::zero();
        let t = translation.to_array();
        let mut m = [[z; 4]; 4];
        for r in 0..3 {
            m[r][..3].copy_from_slice(&rotation[r]);
            m[r][3] = t[r];
        }
        m[3][3] = T::one();
        Self::new(sensor_id, m)
    }

    /// Pose at `position` whose local +Z axis points at `target`, with local +Y
    /// as close to `up` as possible.
    pub fn look_at(
        sensor_id: u8,
        position: Vec3<T>,
        target: Vec3<T>,
        up: Vec3<T>,
    ) -> Result<Self, GeometryError> {
        let forward = (target - position)
            .normalized()
            .ok_or(GeometryError::NotOrthonormal { deviation: 1.0 })?;
        let right = up
            .cross(forward)
            .normalized()
            .ok_or(GeometryError::NotOrthonormal { deviation: 1.0 })?;
        let down_up = forward.cross(right);
        let cols = [right, down_up, forward];
        let mut rot = [[T::zero(); 3]; 3];
        for (c, col) in cols.iter().enumerate() {
            let a = col.to_array();
            for r in 0..3 {
                rot[r][c] = a[r];
            }
        }
        Self::from_rotation_translation(sensor_id, rot, position)
    }

    pub fn identity(sensor_id: u8) -> Self {
        let (o, l) = (T::zero(), T::one());
        Self {
            sensor_id,
            transform: [[l, o, o, o], [o, l, o, o], [o, o, l, o], [o, o, o, l]],
        }
    }

    pub fn matrix(&self) -> &[[T; 4]; 4] {
        &self.transform
    }

    pub fn rotation_column(&self, c: usize) -> Vec3<T> {
        let m = &self.transform;
        Vec3::new(m[0][c], m[1][c], m[2][c])
    }

    pub fn translation(&self) -> Vec3<T> {
        self.rotation_column(3)
    }

    pub fn transform_point(&self, p: Vec3<T>) -> Vec3<T> {
        let m = &self.transform;
        let row = |r: usize| m[r][0] * p.x + m[r][1] * p.y + m[r][2] * p.z + m[r][3];
        Vec3::new(row(0), row(1), row(2))
    }

    pub fn transform_direction(&self, d: Vec3<T>) -> Vec3<T> {
        let m = &self.transform;
        let row = |r: usize| m[r][0] * d.x + m[r][1] * d.y + m[r][2] * d.z;
        Vec3::new(row(0), row(1), row(2))
    }

    /// Largest absolute entry of `RᵀR − I`.
    pub fn orthonormal_deviation(&self) -> f64 {
        let mut worst = 0.0f64;
        for a in 0..3 {
            for b in 0..3 {
                let d = self.rotation_column(a).dot(self.rotation_column(b)).to_f64_lossy();
                let expected = if a == b { 1.0 } else { 0.0 };
                worst = worst.max((d - expected).abs());
            }
        }
        worst
    }

    pub fn cast<U: Real>(&self) -> SensorPose<U> {
        let mut m = [[U::zero(); 4]; 4];
        for r in 0..4 {
            for c in 0..4 {
                m[r][c] = U::from_f64_lossy(self.transform[r][c].to_f64_lossy());
            }
        }
        SensorPose {
            sensor_id: self.sensor_id,
            transform: m,
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::{Rng, SeedableRng};

    #[test]
    fn two_point_box() {
        let b = bounding_box([Vec3::new(0.0, 0.0, 0.0), Vec3::new(2.0, 2.0, 2.0)]).unwrap();
        assert_eq!(b.min, Vec3::zero());
        assert_eq!(b.max, Vec3::splat(2.0));
        assert_eq!(b.centroid(), Vec3::splat(1.0));
    }

    #[test]
    fn single_point_box_is_degenerate() {
        let p = Vec3::new(0.3f32, -1.0, 7.0);
        let b = bounding_box([p]).unwrap();
        assert_eq!(b.min, b.max);
        assert_eq!(b.centroid(), p);
    }

    #[test]
    fn empty_box_errors() {
        assert_eq!(
            bounding_box(Vec::<Vec3<f64>>::new()).unwrap_err(),
            GeometryError::Empty
        );
    }

    #[test]
    fn matches_brute_force_scan() {
        let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(11);
        let pts: Vec<Vec3<f64>> = (0..100)
            .map(|_| Vec3::new(rng.gen_range(-5.0..5.0), rng.gen_range(-5.0..5.0), rng.gen_range(-5.0..5.0)))
            .collect();
        let b = bounding_box(pts.iter().copied()).unwrap();
        let axis = |f: fn(&Vec3<f64>) -> f64| {
            let vals: Vec<f64> = pts.iter().map(f).collect();
            let lo = vals.iter().cloned().fold(f64::INFINITY, f64::min);
            let hi = vals.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
            (lo, hi)
        };
        assert_eq!(axis(|p| p.x), (b.min.x, b.max.x));
        assert_eq!(axis(|p| p.y), (b.min.y, b.max.y));
        assert_eq!(axis(|p| p.z), (b.min.z, b.max.z));
        assert!(pts.iter().all(|p| b.contains(*p)));
        assert!(b.contains(b.centroid()));
    }

    #[test]
    fn pose_rejects_shear() {
        let mut m = SensorPose::<f64>::identity(0).matrix().to_owned();
        m[0][1] = 0.1;
        assert!(matches!(
            SensorPose::new(0, m),
            Err(GeometryError::NotOrthonormal { .. })
        ));
        let mut m = SensorPose::<f64>::identity(0).matrix().to_owned();
        m[3][0] = 1.0;
        assert_eq!(SensorPose::new(0, m), Err(GeometryError::NotAffine));
    }

    #[test]
    fn look_at_points_z_at_target() {
        let pose = SensorPose::look_at(
            1,
            Vec3::new(2.0, 1.0, 0.0),
            Vec3::new(0.0, 1.0, 0.0),
            Vec3::new(0.0, 1.0, 0.0),
        )
        .unwrap();
        let f = pose.rotation_column(2);
        assert!((f - Vec3::new(-1.0, 0.0, 0.0)).norm() < 1e-12);
        assert!(pose.orthonormal_deviation() < 1e-12);
        assert_eq!(pose.translation(), Vec3::new(2.0, 1.0, 0.0));
    }
}
