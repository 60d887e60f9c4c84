//! Offline adaptation-set builder for inspecting the codec on one frame.

use std::path::Path;
use std::time::Instant;

use anyhow::{Context, Result};
use pcstream::codec::{build_adaptation_set, build_full_representations, decode_payload, QualityLevel};
use pcstream::pccore::{PointCloudFrame, SensorPose};
use pcstream::tiling::tile_frame;
use serde::Serialize;

/// One representation. `tile` is `None` for whole-cloud encodes.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct RepresentationInfo {
    pub tile: Option<u8>,
    pub quality_index: usize,
    pub octree_depth: u8,
    pub qp: u8,
    pub source_points: u32,
    pub voxels: u32,
    pub size_bytes: usize,
    /// Wall-clock of one decode on this machine.
    pub decode_ms: f64,
    pub file: String,
}

#[derive(Debug, Clone, Serialize)]
pub struct EncodeReport {
    pub frame_index: u64,
    pub points: usize,
    /// Wall-clock of the concurrent tile encodes plus tiling.
    pub tiled_encode_ms: f64,
    /// Wall-clock of the concurrent whole-cloud encodes.
    pub full_encode_ms: f64,
    pub representations: Vec<RepresentationInfo>,
}

fn timed_decode(payload: &[u8]) -> Result<f64> {
    let t = Instant::now();
    decode_payload(payload)?;
    Ok(t.elapsed().as_secs_f64() * 1e3)
}

/// Encodes `frame` per tile and whole, at every level of `qualities`. When `out`
/// is given, each bitstream is written there along with `representations.json`.
pub fn encode_frame(
    frame: &PointCloudFrame,
    poses: &[SensorPose<f64>],
    qualities: &[QualityLevel],
    out: Option<&Path>,
) -> Result<EncodeReport> {
    let t = Instant::now();
    let tiles = tile_frame::<f64>(frame, poses)?;
    let set = build_adaptation_set(&tiles, qualities)?;
    let tiled_encode_ms = t.elapsed().as_secs_f64() * 1e3;
    let t = Instant::now();
    let full = build_full_representations(frame, qualities)?;
    let full_encode_ms = t.elapsed().as_secs_f64() * 1e3;

    if let Some(dir) = out {
        std::fs::create_dir_all(dir).with_context(|| format!("cannot create {}", dir.display()))?;
    }
    let mut representations = Vec::new();
    let all = set
        .tiles
        .iter()
        .flat_map(|t| t.representations.iter().enumerate().map(move |(q, r)| (Some(t.tile_id), q, r)))
        .chain(full.iter().enumerate().map(|(q, r)| (None, q, r)));
    for (tile, qi, rep) in all {
        let file = match tile {
            Some(id) => format!("tile{id}_q{qi}.bin"),
            None => format!("full_q{qi}.bin"),
        };
        if let Some(dir) = out {
            let path = dir.join(&file);
            std::fs::write(&path, &rep.payload).with_context(|| format!("cannot write {}", path.display()))?;
        }
        representations.push(RepresentationInfo {
            tile,
            quality_index: qi,
            octree_depth: rep.quality.octree_depth,
            qp: rep.quality.qp,
            source_points: rep.source_points,
            voxels: rep.point_count,
            size_bytes: rep.size_bytes(),
            decode_ms: timed_decode(&rep.payload)?,
            file,
        });
    }
    let report = EncodeReport {
        frame_index: frame.frame_index,
        points: frame.len(),
        tiled_encode_ms,
        full_encode_ms,
        representations,
    };
    if let Some(dir) = out {
        let path = dir.join("representations.json");
        std::fs::write(&path, serde_json::to_string_pretty(&report)? + "\n")
            .with_context(|| format!("cannot write {}", path.display()))?;
    }
    Ok(report)
}

pub fn render_text(r: &EncodeReport) -> String {
    let mut out = format!(
        "frame {}: {} points, tiled encode {:.1} ms, full encode {:.1} ms\n",
        r.frame_index, r.points, r.tiled_encode_ms, r.full_encode_ms
    );
    out.push_str(&format!(
        "{:<6} {:>2} {:>5} {:>3} {:>8} {:>8} {:>10} {:>9}\n",
        "tile", "q", "depth", "qp", "points", "voxels", "bytes", "dec_ms"
    ));
    for x in &r.representations {
        let tile = x.tile.map_or("full".to_string(), |t| t.to_string());
        out.push_str(&format!(
            "{:<6} {:>2} {:>5} {:>3} {:>8} {:>8} {:>10} {:>9.2}\n",
            tile, x.quality_index, x.octree_depth, x.qp, x.source_points, x.voxels, x.size_bytes, x.decode_ms
        ));
    }
    out
}

#[cfg(test)]
mod tests {
    use super::*;
    use pcstream::pccore::synth::synth_frame;
    use pcstream::pccore::SynthConfig;

    #[test]
    fn writes_every_representation() {
        let cfg = SynthConfig {
            point_count: 3000,
            frame_count: 1,
            ..SynthConfig::default()
        };
        let frame = synth_frame(&cfg, 0).unwrap();
        let dir = tempfile::tempdir().unwrap();
        let ladder = QualityLevel::default_ladder();
        let r = encode_frame(&frame, &cfg.sensor_poses, &ladder, Some(dir.path())).unwrap();
        assert_eq!(r.representations.len(), 3 * 3 + 3);
        for x in &r.representations {
            let bytes = std::fs::read(dir.path().join(&x.file)).unwrap();
            assert_eq!(bytes.len(), x.size_bytes);
        }
        let tile_points: u32 = r
            .representations
            .iter()
            .filter(|x| x.tile.is_some() && x.quality_index == 0)
            .map(|x| x.source_points)
            .sum();
        assert_eq!(tile_points as usize, frame.len());
        assert!(dir.path().join("representations.json").exists());
        let text = render_text(&r);
        assert_eq!(text.lines().count(), 2 + 12);
    }
}
