//! Sender and receiver logic shared by the simulated and socket runtimes.

use std::collections::BTreeMap;
use std::time::Instant;

use super::wire::{Message, FULL_CLOUD};
use super::{makespan, Mode, SelectionSummary, StreamConfig, StreamError, TimingModel};
use crate::adaptation::{
    rank_tiles, score_tiles, select_network_adaptive, LevelInfo, TileInfo, TileMetadata, Viewport,
};
use crate::codec::{build_adaptation_set, build_full_representations, decode_payload, CodecError};
use crate::pccore::{bounding_box, Point, PointCloudFrame, SensorPose};
use crate::tiling::tile_frame;
use crate::Vec3d;

/// What the sender produced for one frame.
#[derive(Debug, Clone)]
pub enum EncodedContent {
    Uncompressed {
        sensor_count: u8,
        points: Vec<u8>,
    },
    Adaptive {
        metadata: TileMetadata<f64>,
        /// Keyed by `(tile_id, quality_index)`; whole-cloud entries use [`FULL_CLOUD`].
        payloads: BTreeMap<(u8, usize), Vec<u8>>,
    },
}

#[derive(Debug, Clone)]
pub struct EncodedFrame {
    pub frame_index: u64,
    pub capture_ts_ms: f64,
    pub content: EncodedContent,
    /// Duration of the encode stage under the configured timing model.
    pub encode_ms: f64,
}

impl EncodedFrame {
    /// First message for the frame: the capture itself or the metadata.
    pub fn announcement(&self) -> Message {
        let frame_index = self.frame_index as u32;
        match &self.content {
            EncodedContent::Uncompressed { sensor_count, points } => Message::Capture {
                frame_index,
                capture_ts_ms: self.capture_ts_ms,
                sensor_count: *sensor_count,
                points: points.clone(),
            },
            EncodedContent::Adaptive { metadata, .. } => Message::TileMetadata {
                frame_index,
                capture_ts_ms: self.capture_ts_ms,
                metadata: metadata.clone(),
            },
        }
    }

    pub fn payload(&self, tile_id: u8, quality_index: usize) -> Option<&[u8]> {
        match &self.content {
            EncodedContent::Adaptive { payloads, .. } => {
                payloads.get(&(tile_id, quality_index)).map(Vec::as_slice)
            }
            EncodedContent::Uncompressed { .. } => None,
        }
    }
}

pub struct SenderCore {
    config: StreamConfig,
    poses: Vec<SensorPose<f64>>,
}

impl SenderCore {
    pub fn new(config: StreamConfig, poses: Vec<SensorPose<f64>>) -> Result<Self, StreamError> {
        config.validate()?;
        Ok(Self { config, poses })
    }

    pub fn config(&self) -> &StreamConfig {
        &self.config
    }

    pub fn encode(&self, frame: &PointCloudFrame) -> Result<EncodedFrame, StreamError> {
        let fail = |reason: String| StreamError::Frame {
            frame_index: frame.frame_index,
            reason,
        };
        if u32::try_from(frame.frame_index).is_err() {
            return Err(fail("frame index exceeds the wire format".into()));
        }
        let started = Instant::now();
        let n = frame.len();
        let (content, modeled_ms) = match self.config.mode {
            Mode::Uncompressed => (
                EncodedContent::Uncompressed {
                    sensor_count: frame.sensor_count.min(255) as u8,
                    points: frame.serialize_points(),
                },
                self.cost().map(|c| c.serialize_ms(n)),
            ),
            Mode::NetworkAdaptive => {
                let reps = build_full_representations(frame, &self.config.qualities)
                    .map_err(|e| fail(e.to_string()))?;
                let bbox = bounding_box(frame.points.iter().map(|p| p.position.cast::<f64>()))
                    .map_err(|e| fail(e.to_string()))?;
                let metadata = TileMetadata::new(vec![TileInfo {
                    tile_id: FULL_CLOUD,
                    orientation: Vec3d::new(0.0, 0.0, 1.0),
                    bbox_centroid: bbox.centroid(),
                    levels: reps
                        .iter()
                        .map(|r| LevelInfo {
                            quality: r.quality,
                            size_bytes: r.size_bytes() as u32,
                        })
                        .collect(),
                }])
                .map_err(|e| fail(e.to_string()))?;
                let modeled = self.cost().map(|c| {
                    let jobs: Vec<f64> = self
                        .config
                        .qualities
                        .iter()
                        .map(|q| c.encode_ms(n, q.octree_depth))
                        .collect();
                    let workers = if self.config.na_parallel_codec {
                        self.config.sender_workers
                    } else {
                        1
                    };
                    makespan(&jobs, workers)
                });
                let payloads = reps
                    .into_iter()
                    .enumerate()
                    .map(|(qi, r)| ((FULL_CLOUD, qi), r.payload))
                    .collect();
                (EncodedContent::Adaptive { metadata, payloads }, modeled)
            }
            Mode::TiledAdaptive => {
                let tiles = tile_frame::<f64>(frame, &self.poses).map_err(|e| fail(e.to_string()))?;
                let set = build_adaptation_set(&tiles, &self.config.qualities)
                    .map_err(|e| fail(e.to_string()))?;
                let modeled = self.cost().map(|c| {
                    let jobs: Vec<f64> = tiles
                        .tiles
                        .iter()
                        .flat_map(|t| {
                            self.config
                                .qualities
                                .iter()
                                .map(move |q| c.encode_ms(t.points.len(), q.octree_depth))
                        })
                        .collect();
                    c.tiling_ms(n) + makespan(&jobs, self.config.sender_workers)
                });
                let metadata = set.metadata().clone();
                let payloads = set
                    .tiles
                    .into_iter()
                    .flat_map(|t| {
                        let id = t.tile_id;
                        t.representations
                            .into_iter()
                            .enumerate()
                            .map(move |(qi, r)| ((id, qi), r.payload))
                    })
                    .collect();
                (EncodedContent::Adaptive { metadata, payloads }, modeled)
            }
        };
        let encode_ms = modeled_ms.unwrap_or_else(|| started.elapsed().as_secs_f64() * 1e3);
        Ok(EncodedFrame {
            frame_index: frame.frame_index,
            capture_ts_ms: frame.capture_ts_ms,
            content,
            encode_ms,
        })
    }

    fn cost(&self) -> Option<super::CostModel> {
        match self.config.timing {
            TimingModel::Modeled(c) => Some(c),
            TimingModel::Measured { .. } => None,
        }
    }
}

/// Receiver-side choice for one frame.
#[derive(Debug, Clone, PartialEq)]
pub struct FrameSelection {
    /// `(tile_id, quality_index)` in request order (best-ranked tile first).
    pub requests: Vec<(u8, usize)>,
    pub summary: SelectionSummary,
    pub budget_bytes: u64,
    pub planned_bytes: u64,
    pub budget_violated: bool,
}

/// One decoded unit: a tile, a whole cloud or an uncompressed capture.
#[derive(Debug, Clone)]
pub struct DecodedUnit {
    pub frame_index: u64,
    pub tile_id: u8,
    pub points: Vec<Point>,
    /// Decode stage duration under the configured timing model.
    pub decode_ms: f64,
}

pub struct ReceiverCore {
    config: StreamConfig,
}

impl ReceiverCore {
    pub fn new(config: StreamConfig) -> Result<Self, StreamError> {
        config.validate()?;
        Ok(Self { config })
    }

    pub fn config(&self) -> &StreamConfig {
        &self.config
    }

    /// Selection for NA and TA; uncompressed streaming has nothing to select.
    pub fn select(
        &self,
        metadata: &TileMetadata<f64>,
        viewport: &Viewport<f64>,
    ) -> Result<FrameSelection, StreamError> {
        let budget = self
            .config
            .budget_bytes()
            .ok_or_else(|| StreamError::Protocol("no selection in uncompressed mode".into()))?;
        let protocol = |e: crate::adaptation::AllocationError| StreamError::Protocol(e.to_string());
        match self.config.mode {
            Mode::NetworkAdaptive => {
                let full = metadata
                    .tiles()
                    .iter()
                    .find(|t| t.tile_id == FULL_CLOUD)
                    .ok_or_else(|| StreamError::Protocol("metadata lacks the full-cloud entry".into()))?;
                let sizes: Vec<u64> = full.levels.iter().map(|l| u64::from(l.size_bytes)).collect();
                let na = select_network_adaptive(&sizes, budget).map_err(protocol)?;
                Ok(FrameSelection {
                    requests: vec![(FULL_CLOUD, na.quality_index)],
                    summary: SelectionSummary::Full {
                        quality_index: na.quality_index,
                    },
                    budget_bytes: budget,
                    planned_bytes: na.size_bytes,
                    budget_violated: na.budget_violated,
                })
            }
            Mode::TiledAdaptive => {
                let ranking = rank_tiles(&score_tiles(viewport, metadata));
                let sel = self
                    .config
                    .allocator
                    .allocate(&ranking, metadata, budget)
                    .map_err(protocol)?;
                let requests = ranking
                    .iter()
                    .map(|&id| (id, sel.quality_of(id).expect("every tile allocated")))
                    .collect();
                let mut per_tile: Vec<(u8, usize)> =
                    sel.tile_ids.iter().copied().zip(sel.qualities.iter().copied()).collect();
                per_tile.sort_unstable();
                Ok(FrameSelection {
                    requests,
                    summary: SelectionSummary::Tiles(per_tile),
                    budget_bytes: budget,
                    planned_bytes: sel.total_bytes,
                    budget_violated: sel.budget_violated,
                })
            }
            Mode::Uncompressed => unreachable!("handled by budget_bytes"),
        }
    }

    /// Decodes a codec bitstream. `tile_count` is the number of tiles in the frame.
    pub fn decode_payload(&self, bitstream: &[u8], tile_count: usize) -> Result<DecodedUnit, CodecError> {
        let started = Instant::now();
        let decoded = decode_payload(bitstream)?;
        let h = decoded.header;
        let top = self
            .config
            .qualities
            .last()
            .is_some_and(|q| q.octree_depth == h.octree_depth && q.qp == h.qp);
        let base = match self.config.timing {
            TimingModel::Modeled(c) => c.decode_ms(decoded.points.len(), h.octree_depth),
            TimingModel::Measured { .. } => started.elapsed().as_secs_f64() * 1e3,
        };
        let penalty = if top {
            self.config.timing.top_quality_penalty_ms() / tile_count.max(1) as f64
        } else {
            0.0
        };
        let tile_id = match self.config.mode {
            Mode::NetworkAdaptive => FULL_CLOUD,
            _ => h.tile_id,
        };
        Ok(DecodedUnit {
            frame_index: u64::from(h.frame_index),
            tile_id,
            points: decoded.points,
            decode_ms: base + penalty,
        })
    }

    pub fn decode_capture(&self, frame_index: u32, points: &[u8]) -> Result<DecodedUnit, StreamError> {
        let started = Instant::now();
        let pts = PointCloudFrame::deserialize_points(points).map_err(|e| StreamError::Frame {
            frame_index: u64::from(frame_index),
            reason: e.to_string(),
        })?;
        let decode_ms = match self.config.timing {
            TimingModel::Modeled(c) => c.deserialize_ms(pts.len()),
            TimingModel::Measured { .. } => started.elapsed().as_secs_f64() * 1e3,
        };
        Ok(DecodedUnit {
            frame_index: u64::from(frame_index),
            tile_id: 0,
            points: pts,
            decode_ms,
        })
    }
}
