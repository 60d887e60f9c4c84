//! Viewport traces: recorded samples from CSV, or a generated orbit.

use std::io::{Read, Write};
use std::path::Path;

use pcstream::adaptation::{Viewport, ViewportProvider};
use pcstream::Vec3d;
use serde::{Deserialize, Serialize};

#[derive(Debug, thiserror::Error)]
pub enum TraceError {
    #[error("trace is empty")]
    Empty,
    #[error("row {row}: time {time_ms} ms does not increase on the previous sample")]
    NonMonotoneTime { row: usize, time_ms: f64 },
    #[error("row {row}: direction vector is zero")]
    ZeroDirection { row: usize },
    #[error("row {row}: non-finite value")]
    NonFinite { row: usize },
    #[error("trace csv: {0}")]
    Csv(#[from] csv::Error),
    #[error("trace file: {0}")]
    Io(#[from] std::io::Error),
}

/// One row of a trace file: `time_ms,px,py,pz,dx,dy,dz`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct TraceSample {
    pub time_ms: f64,
    pub px: f64,
    pub py: f64,
    pub pz: f64,
    pub dx: f64,
    pub dy: f64,
    pub dz: f64,
}

impl TraceSample {
    fn position(&self) -> Vec3d {
        Vec3d::new(self.px, self.py, self.pz)
    }

    fn direction(&self) -> Vec3d {
        Vec3d::new(self.dx, self.dy, self.dz)
    }
}

/// Time-indexed viewport. Positions interpolate linearly, directions by normalized
/// linear interpolation; queries outside the samples clamp to the nearest end.
#[derive(Debug, Clone, PartialEq)]
pub struct ViewportTrace {
    samples: Vec<TraceSample>,
}

impl ViewportTrace {
    pub fn new(samples: Vec<TraceSample>) -> Result<Self, TraceError> {
        if samples.is_empty() {
            return Err(TraceError::Empty);
        }
        for (i, s) in samples.iter().enumerate() {
            let row = i + 1;
            let values = [s.time_ms, s.px, s.py, s.pz, s.dx, s.dy, s.dz];
            if values.iter().any(|v| !v.is_finite()) {
                return Err(TraceError::NonFinite { row });
            }
            if s.direction().norm() == 0.0 {
                return Err(TraceError::ZeroDirection { row });
            }
            if i > 0 && s.time_ms <= samples[i - 1].time_ms {
                return Err(TraceError::NonMonotoneTime { row, time_ms: s.time_ms });
            }
        }
        Ok(Self { samples })
    }

    pub fn read(reader: impl Read) -> Result<Self, TraceError> {
        let mut rdr = csv::ReaderBuilder::new().trim(csv::Trim::All).from_reader(reader);
        let samples = rdr.deserialize().collect::<Result<Vec<TraceSample>, _>>()?;
        Self::new(samples)
    }

    pub fn write(&self, writer: impl Write) -> Result<(), TraceError> {
        let mut w = csv::Writer::from_writer(writer);
        for s in &self.samples {
            w.serialize(s)?;
        }
        w.flush()?;
        Ok(())
    }

    pub fn samples(&self) -> &[TraceSample] {
        &self.samples
    }

    pub fn start_ms(&self) -> f64 {
        self.samples[0].time_ms
    }

    pub fn end_ms(&self) -> f64 {
        self.samples[self.samples.len() - 1].time_ms
    }
}

pub fn load_viewport_trace(path: impl AsRef<Path>) -> Result<ViewportTrace, TraceError> {
    ViewportTrace::read(std::fs::File::open(path)?)
}

impl ViewportProvider for ViewportTrace {
    fn viewport_at(&self, time_ms: f64) -> Viewport<f64> {
        let s = &self.samples;
        let after = s.partition_point(|x| x.time_ms <= time_ms);
        let (pos, dir) = if after == 0 {
            (s[0].position(), s[0].direction())
        } else if after == s.len() {
            (s[after - 1].position(), s[after - 1].direction())
        } else {
            let (a, b) = (&s[after - 1], &s[after]);
            let w = (time_ms - a.time_ms) / (b.time_ms - a.time_ms);
            let pos = a.position() * (1.0 - w) + b.position() * w;
            let mixed = a.direction().normalized().unwrap_or(a.direction()) * (1.0 - w)
                + b.direction().normalized().unwrap_or(b.direction()) * w;
            // Opposite directions cancel halfway; keep the nearer sample's.
            let dir = if mixed.norm() > 1e-9 {
                mixed
            } else if w < 0.5 {
                a.direction()
            } else {
                b.direction()
            };
            (pos, dir)
        };
        Viewport::looking(pos, dir, time_ms).expect("trace directions are validated non-zero")
    }
}

/// Viewer circling the subject at constant height, always looking at `target`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct Orbit {
    pub target: [f64; 3],
    pub radius_m: f64,
    pub height_m: f64,
    pub speed_deg_s: f64,
    /// Angle at t = 0, measured from +Z towards +X.
    pub start_deg: f64,
}

impl Default for Orbit {
    fn default() -> Self {
        Self {
            target: [0.0, 1.0, 0.0],
            radius_m: 1.5,
            height_m: 1.6,
            speed_deg_s: 20.0,
            start_deg: 0.0,
        }
    }
}

impl Orbit {
    pub fn validate(&self) -> Result<(), String> {
        let t = self.target;
        let vals = [t[0], t[1], t[2], self.radius_m, self.height_m, self.speed_deg_s, self.start_deg];
        if vals.iter().any(|v| !v.is_finite()) {
            return Err("orbit values must be finite".into());
        }
        if !(self.radius_m > 0.0) {
            return Err(format!("orbit radius_m must be positive, got {}", self.radius_m));
        }
        Ok(())
    }

    fn position(&self, time_ms: f64) -> Vec3d {
        let a = (self.start_deg + self.speed_deg_s * time_ms / 1000.0).to_radians();
        Vec3d::new(
            self.target[0] + self.radius_m * a.sin(),
            self.height_m,
            self.target[2] + self.radius_m * a.cos(),
        )
    }

    /// Samples the orbit every `step_ms` over `[0, duration_ms]`.
    pub fn to_trace(&self, duration_ms: f64, step_ms: f64) -> ViewportTrace {
        let n = (duration_ms / step_ms).ceil().max(1.0) as usize;
        let samples = (0..=n)
            .map(|i| {
                let t = i as f64 * step_ms;
                let v = self.viewport_at(t);
                let (p, d) = (v.position, v.orientation());
                TraceSample {
                    time_ms: t,
                    px: p.x,
                    py: p.y,
                    pz: p.z,
                    dx: d.x,
                    dy: d.y,
                    dz: d.z,
                }
            })
            .collect();
        ViewportTrace::new(samples).expect("orbit samples are valid")
    }
}

impl ViewportProvider for Orbit {
    fn viewport_at(&self, time_ms: f64) -> Viewport<f64> {
        let pos = self.position(time_ms);
        let [x, y, z] = self.target;
        Viewport::looking(pos, Vec3d::new(x, y, z) - pos, time_ms)
            .expect("validated orbit never sits on its target")
    }
}
