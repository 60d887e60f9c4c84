//! Frame sequences: generated in memory or stored as `frame_%05d.ply` plus `manifest.json`.

use std::path::{Path, PathBuf};

use anyhow::{bail, Context, Result};
use pcstream::pccore::synth::synth_frame;
use pcstream::pccore::{emit_ply, load_ply, PointCloudFrame, SensorPose, SynthConfig};
use serde::{Deserialize, Serialize};

use crate::config::Source;

pub const MANIFEST_FILE: &str = "manifest.json";
pub const MANIFEST_VERSION: u32 = 1;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ManifestSensor {
    pub sensor_id: u8,
    /// Row-major sensor-to-world transform.
    pub transform: [[f64; 4]; 4],
}

/// Sequence metadata stored next to the PLY files.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Manifest {
    pub version: u32,
    pub fps: f64,
    pub frame_count: usize,
    pub sensors: Vec<ManifestSensor>,
    /// Generator settings, when the sequence is synthetic.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub seed: Option<u64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub points_per_frame: Option<usize>,
}

pub fn frame_file_name(index: usize) -> String {
    format!("frame_{index:05}.ply")
}

/// A loaded capture shared by every condition of a run.
#[derive(Debug, Clone)]
pub struct Sequence {
    pub frames: Vec<PointCloudFrame>,
    pub poses: Vec<SensorPose<f64>>,
    pub fps: f64,
}

impl Sequence {
    pub fn duration_ms(&self) -> f64 {
        self.frames.len() as f64 * 1000.0 / self.fps
    }
}

pub fn synthesize(config: &SynthConfig) -> Result<Sequence> {
    let frames = pcstream::pccore::synth_capture(config)?;
    Ok(Sequence {
        frames,
        poses: config.sensor_poses.clone(),
        fps: config.fps,
    })
}

/// Writes a synthetic sequence frame by frame; returns the manifest.
pub fn write_synthetic(config: &SynthConfig, out: &Path, binary: bool) -> Result<Manifest> {
    config.validate()?;
    std::fs::create_dir_all(out).with_context(|| format!("cannot create {}", out.display()))?;
    for i in 0..config.frame_count {
        let frame = synth_frame(config, i)?;
        let path = out.join(frame_file_name(i));
        emit_ply(&frame, &path, binary).with_context(|| format!("cannot write {}", path.display()))?;
    }
    let manifest = Manifest {
        version: MANIFEST_VERSION,
        fps: config.fps,
        frame_count: config.frame_count,
        sensors: config
            .sensor_poses
            .iter()
            .map(|p| ManifestSensor {
                sensor_id: p.sensor_id,
                transform: *p.matrix(),
            })
            .collect(),
        seed: Some(config.seed),
        points_per_frame: Some(config.point_count),
    };
    let path = out.join(MANIFEST_FILE);
    let json = serde_json::to_string_pretty(&manifest)?;
    std::fs::write(&path, json + "\n").with_context(|| format!("cannot write {}", path.display()))?;
    Ok(manifest)
}

pub fn read_manifest(dir: &Path) -> Result<Manifest> {
    let path = dir.join(MANIFEST_FILE);
    let text = std::fs::read_to_string(&path).with_context(|| format!("cannot read {}", path.display()))?;
    let m: Manifest = serde_json::from_str(&text).with_context(|| format!("bad manifest {}", path.display()))?;
    if m.version != MANIFEST_VERSION {
        bail!("{}: unsupported manifest version {}", path.display(), m.version);
    }
    if !(m.fps > 0.0 && m.fps.is_finite()) {
        bail!("{}: fps must be positive", path.display());
    }
    Ok(m)
}

pub fn manifest_poses(m: &Manifest) -> Result<Vec<SensorPose<f64>>> {
    m.sensors
        .iter()
        .map(|s| SensorPose::new(s.sensor_id, s.transform).with_context(|| format!("sensor {}", s.sensor_id)))
        .collect()
}

/// Loads `frame_%05d.ply` files in index order. Frame `i` is stamped `i / fps`.
pub fn load_ply_dir(dir: &Path) -> Result<Sequence> {
    let manifest = read_manifest(dir)?;
    let poses = manifest_poses(&manifest)?;
    let mut files: Vec<PathBuf> = std::fs::read_dir(dir)
        .with_context(|| format!("cannot list {}", dir.display()))?
        .filter_map(|e| e.ok().map(|e| e.path()))
        .filter(|p| {
            p.file_name()
                .and_then(|n| n.to_str())
                .is_some_and(|n| n.starts_with("frame_") && n.ends_with(".ply"))
        })
        .collect();
    files.sort();
    if files.len() != manifest.frame_count {
        bail!(
            "{}: manifest lists {} frames but {} PLY files were found",
            dir.display(),
            manifest.frame_count,
            files.len()
        );
    }
    let frames = files
        .iter()
        .enumerate()
        .map(|(i, path)| {
            let f = load_ply(path).with_context(|| format!("cannot load {}", path.display()))?;
            Ok(PointCloudFrame::new(
                i as u64,
                i as f64 * 1000.0 / manifest.fps,
                f.points,
                poses.len().max(f.sensor_count),
            )?)
        })
        .collect::<Result<Vec<_>>>()?;
    Ok(Sequence {
        frames,
        poses,
        fps: manifest.fps,
    })
}

pub fn load_source(source: &Source) -> Result<Sequence> {
    match source {
        Source::Synthetic(s) => synthesize(s),
        Source::PlyDir(dir) => load_ply_dir(dir),
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn small() -> SynthConfig {
        SynthConfig {
            point_count: 500,
            frame_count: 3,
            ..SynthConfig::default()
        }
    }

    #[test]
    fn ply_dir_roundtrip() {
        let dir = tempfile::tempdir().unwrap();
        let cfg = small();
        let m = write_synthetic(&cfg, dir.path(), true).unwrap();
        assert_eq!(m.frame_count, 3);
        assert!(dir.path().join("frame_00002.ply").exists());
        let seq = load_ply_dir(dir.path()).unwrap();
        let mem = synthesize(&cfg).unwrap();
        assert_eq!(seq.frames, mem.frames);
        assert_eq!(seq.poses, mem.poses);
        assert_eq!(seq.fps, 15.0);
        assert!((seq.duration_ms() - 200.0).abs() < 1e-9);
    }

    #[test]
    fn missing_frames_are_reported() {
        let dir = tempfile::tempdir().unwrap();
        write_synthetic(&small(), dir.path(), false).unwrap();
        std::fs::remove_file(dir.path().join("frame_00001.ply")).unwrap();
        let msg = format!("{:#}", load_ply_dir(dir.path()).unwrap_err());
        assert!(msg.contains("lists 3 frames but 2"), "{msg}");
    }

    #[test]
    fn missing_manifest_is_reported() {
        let dir = tempfile::tempdir().unwrap();
        let msg = format!("{:#}", load_ply_dir(dir.path()).unwrap_err());
        assert!(msg.contains("manifest.json"), "{msg}");
    }
}
