//! Streaming pipeline: sender, transport, receiver and synchronizer.
//!
//! Two runtimes share the same sender and receiver logic ([`endpoint`]):
//! a deterministic discrete-event simulation over modeled links
//! ([`simulation::simulate_session`]) and a loopback TCP session
//! ([`socket::run_loopback_session`]).

pub mod endpoint;
pub mod simulation;
pub mod socket;
pub mod synchronizer;
pub mod transport;
pub mod wire;

pub use endpoint::{EncodedFrame, FrameSelection, ReceiverCore, SenderCore};
pub use simulation::{simulate_session, SessionReport};
pub use socket::run_loopback_session;
pub use synchronizer::{PlayoutPolicy, Synchronizer, TileTag};
pub use transport::{simulate_transport, SimulatedLink};
pub use wire::Message;

use crate::adaptation::Allocator;
use crate::codec::QualityLevel;

/// Streaming condition.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum Mode {
    /// 16-byte/point serialization, no adaptation.
    Uncompressed,
    /// Whole-cloud encodes; the receiver picks the best quality under budget.
    NetworkAdaptive,
    /// Per-tile encodes; the receiver allocates quality by viewport utility.
    TiledAdaptive,
}

impl Mode {
    pub fn label(self) -> &'static str {
        match self {
            Self::Uncompressed => "uncompressed",
            Self::NetworkAdaptive => "network_adaptive",
            Self::TiledAdaptive => "tiled_adaptive",
        }
    }

    pub fn from_label(s: &str) -> Option<Self> {
        [Self::Uncompressed, Self::NetworkAdaptive, Self::TiledAdaptive]
            .into_iter()
            .find(|m| m.label() == s)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum TransportMode {
    Simulated,
    Socket,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ChannelModel {
    pub bandwidth_bps: f64,
    pub propagation_delay_ms: f64,
    pub mode: TransportMode,
}

impl Default for ChannelModel {
    /// A dedicated gigabit link.
    fn default() -> Self {
        Self {
            bandwidth_bps: 1e9,
            propagation_delay_ms: 1.0,
            mode: TransportMode::Simulated,
        }
    }
}

/// Deterministic compute costs used by the simulator.
///
/// Defaults were fitted to single-threaded release-build throughput of the codec
/// on the development machine; see [`CostModel::encode_ms`] and friends.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct CostModel {
    pub encode_ns_per_point: f64,
    pub encode_ns_per_point_level: f64,
    pub decode_ns_per_voxel_level: f64,
    pub tiling_ns_per_point: f64,
    pub serialize_ns_per_point: f64,
    pub deserialize_ns_per_point: f64,
    /// Test hook: extra cost for every decode at the highest quality. A tiled
    /// frame splits it evenly over its tiles, which decode in parallel.
    pub top_quality_decode_penalty_ms: f64,
}

impl Default for CostModel {
    fn default() -> Self {
        Self {
            encode_ns_per_point: 60.0,
            encode_ns_per_point_level: 15.0,
            decode_ns_per_voxel_level: 10.0,
            tiling_ns_per_point: 4.0,
            serialize_ns_per_point: 3.0,
            deserialize_ns_per_point: 3.0,
            top_quality_decode_penalty_ms: 0.0,
        }
    }
}

impl CostModel {
    pub fn encode_ms(&self, points: usize, depth: u8) -> f64 {
        points as f64 * (self.encode_ns_per_point + self.encode_ns_per_point_level * f64::from(depth)) * 1e-6
    }

    pub fn decode_ms(&self, voxels: usize, depth: u8) -> f64 {
        voxels as f64 * self.decode_ns_per_voxel_level * f64::from(depth) * 1e-6
    }

    pub fn tiling_ms(&self, points: usize) -> f64 {
        points as f64 * self.tiling_ns_per_point * 1e-6
    }

    pub fn serialize_ms(&self, points: usize) -> f64 {
        points as f64 * self.serialize_ns_per_point * 1e-6
    }

    pub fn deserialize_ms(&self, points: usize) -> f64 {
        points as f64 * self.deserialize_ns_per_point * 1e-6
    }
}

/// How encode and decode durations are obtained.
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum TimingModel {
    /// Derived from work counts; reproducible across runs and machines.
    Modeled(CostModel),
    /// Wall-clock of the real codec work on this machine. Not reproducible.
    Measured { top_quality_decode_penalty_ms: f64 },
}

impl Default for TimingModel {
    fn default() -> Self {
        Self::Modeled(CostModel::default())
    }
}

impl TimingModel {
    pub fn top_quality_penalty_ms(&self) -> f64 {
        match self {
            Self::Modeled(c) => c.top_quality_decode_penalty_ms,
            Self::Measured {
                top_quality_decode_penalty_ms,
            } => *top_quality_decode_penalty_ms,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct StreamConfig {
    pub mode: Mode,
    /// Ignored for [`Mode::Uncompressed`].
    pub target_bitrate_bps: f64,
    pub fps: f64,
    pub qualities: Vec<QualityLevel>,
    pub allocator: Allocator,
    pub channel: ChannelModel,
    pub timing: TimingModel,
    /// Parallel encoders at the sender.
    pub sender_workers: usize,
    /// Parallel decoders at the receiver.
    pub decode_workers: usize,
    /// Lets the untiled modes use the worker pools. Off by default: one encoder
    /// produces the quality levels in turn and one decoder handles whole frames.
    pub na_parallel_codec: bool,
    /// Fixed playout offset; `None` calibrates it from the first frames.
    pub playout_offset_ms: Option<f64>,
    pub calibration_frames: usize,
}

impl Default for StreamConfig {
    fn default() -> Self {
        Self {
            mode: Mode::TiledAdaptive,
            target_bitrate_bps: 14e6,
            fps: 15.0,
            qualities: QualityLevel::default_ladder(),
            allocator: Allocator::UniformStepwise,
            channel: ChannelModel::default(),
            timing: TimingModel::default(),
            sender_workers: 9,
            decode_workers: 3,
            na_parallel_codec: false,
            playout_offset_ms: None,
            calibration_frames: 10,
        }
    }
}

#[derive(Debug, thiserror::Error, PartialEq)]
pub enum ConfigError {
    #[error("fps must be positive, got {0}")]
    NonPositiveFps(f64),
    #[error("target bitrate must be positive, got {0}")]
    NonPositiveBitrate(f64),
    #[error("quality levels must be non-empty and strictly increasing in octree depth")]
    BadQualities,
    #[error("simulated channel bandwidth must be positive, got {0}")]
    NonPositiveBandwidth(f64),
    #[error("propagation delay must be non-negative, got {0}")]
    NegativeDelay(f64),
    #[error("worker counts must be at least 1")]
    NoWorkers,
    #[error("playout offset must be non-negative, got {0}")]
    NegativeOffset(f64),
}

impl StreamConfig {
    pub fn validate(&self) -> Result<(), ConfigError> {
        if !(self.fps > 0.0) || !self.fps.is_finite() {
            return Err(ConfigError::NonPositiveFps(self.fps));
        }
        if self.mode != Mode::Uncompressed && !(self.target_bitrate_bps > 0.0) {
            return Err(ConfigError::NonPositiveBitrate(self.target_bitrate_bps));
        }
        if self.qualities.is_empty()
            || self
                .qualities
                .windows(2)
                .any(|w| w[0].octree_depth >= w[1].octree_depth)
        {
            return Err(ConfigError::BadQualities);
        }
        if self.channel.mode == TransportMode::Simulated && !(self.channel.bandwidth_bps > 0.0) {
            return Err(ConfigError::NonPositiveBandwidth(self.channel.bandwidth_bps));
        }
        if !(self.channel.propagation_delay_ms >= 0.0) {
            return Err(ConfigError::NegativeDelay(self.channel.propagation_delay_ms));
        }
        if self.sender_workers == 0 || self.decode_workers == 0 {
            return Err(ConfigError::NoWorkers);
        }
        if let Some(o) = self.playout_offset_ms {
            if !(o >= 0.0) {
                return Err(ConfigError::NegativeOffset(o));
            }
        }
        Ok(())
    }

    /// Decoders available to the receiver in this mode.
    pub fn effective_decode_workers(&self) -> usize {
        if self.mode == Mode::TiledAdaptive || self.na_parallel_codec {
            self.decode_workers
        } else {
            1
        }
    }

    pub fn frame_interval_ms(&self) -> f64 {
        1000.0 / self.fps
    }

    /// Per-frame byte budget; `None` for uncompressed streaming.
    pub fn budget_bytes(&self) -> Option<u64> {
        match self.mode {
            Mode::Uncompressed => None,
            _ => crate::adaptation::frame_budget(self.target_bitrate_bps, self.fps)
                .ok()
                .map(|b| b.bytes),
        }
    }
}

#[derive(Debug, thiserror::Error)]
pub enum StreamError {
    #[error(transparent)]
    Config(#[from] ConfigError),
    #[error("transport failure: {0}")]
    Transport(#[from] std::io::Error),
    #[error("protocol violation: {0}")]
    Protocol(String),
    #[error(transparent)]
    Wire(#[from] wire::WireError),
    #[error("frame {frame_index}: {reason}")]
    Frame { frame_index: u64, reason: String },
}

/// Outcome of one captured frame.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum FrameStatus {
    Presented,
    /// A newer capture replaced it while the encoder was busy.
    SkippedAtSender,
    /// A newer frame reached the decoder first.
    SkippedAtDecoder,
    /// Completed too late, or never completed, once a newer frame was ready.
    DroppedBySynchronizer,
    EncodeError,
    DecodeError,
    /// Still in flight when the session ended.
    Undelivered,
}

impl FrameStatus {
    pub fn label(self) -> &'static str {
        match self {
            Self::Presented => "presented",
            Self::SkippedAtSender => "skipped_sender",
            Self::SkippedAtDecoder => "skipped_decoder",
            Self::DroppedBySynchronizer => "dropped_sync",
            Self::EncodeError => "encode_error",
            Self::DecodeError => "decode_error",
            Self::Undelivered => "undelivered",
        }
    }

    pub fn from_label(s: &str) -> Option<Self> {
        [
            Self::Presented,
            Self::SkippedAtSender,
            Self::SkippedAtDecoder,
            Self::DroppedBySynchronizer,
            Self::EncodeError,
            Self::DecodeError,
            Self::Undelivered,
        ]
        .into_iter()
        .find(|v| v.label() == s)
    }
}

/// Quality chosen for a frame.
#[derive(Debug, Clone, PartialEq, Eq, Default)]
pub enum SelectionSummary {
    #[default]
    None,
    Full { quality_index: usize },
    /// `(tile_id, quality_index)` ascending by tile id.
    Tiles(Vec<(u8, usize)>),
}

impl SelectionSummary {
    /// `""`, `"full:2"` or `"0:1|1:0|2:2"`.
    pub fn render(&self) -> String {
        match self {
            Self::None => String::new(),
            Self::Full { quality_index } => format!("full:{quality_index}"),
            Self::Tiles(t) => t
                .iter()
                .map(|(id, q)| format!("{id}:{q}"))
                .collect::<Vec<_>>()
                .join("|"),
        }
    }

    pub fn parse(s: &str) -> Option<Self> {
        if s.is_empty() {
            return Some(Self::None);
        }
        if let Some(q) = s.strip_prefix("full:") {
            return q.parse().ok().map(|quality_index| Self::Full { quality_index });
        }
        s.split('|')
            .map(|part| {
                let (id, q) = part.split_once(':')?;
                Some((id.parse().ok()?, q.parse().ok()?))
            })
            .collect::<Option<Vec<_>>>()
            .map(Self::Tiles)
    }
}

/// Per-frame timing record. All times are stream-clock milliseconds.
#[derive(Debug, Clone, PartialEq)]
pub struct FrameTimeline {
    pub frame_index: u64,
    pub capture_ts_ms: f64,
    pub encode_ms: f64,
    /// Representation payload bytes sent for this frame.
    pub bytes_sent: u64,
    pub budget_bytes: Option<u64>,
    pub budget_violated: bool,
    /// First payload send to last payload delivery.
    pub transmit_ms: f64,
    /// First decode start to last decode end.
    pub decode_ms: f64,
    /// Last decode end to presentation.
    pub sync_wait_ms: f64,
    pub present_ts_ms: Option<f64>,
    pub end_to_end_ms: Option<f64>,
    pub status: FrameStatus,
    pub selection: SelectionSummary,
}

impl FrameTimeline {
    pub fn new(frame_index: u64, capture_ts_ms: f64) -> Self {
        Self {
            frame_index,
            capture_ts_ms,
            encode_ms: 0.0,
            bytes_sent: 0,
            budget_bytes: None,
            budget_violated: false,
            transmit_ms: 0.0,
            decode_ms: 0.0,
            sync_wait_ms: 0.0,
            present_ts_ms: None,
            end_to_end_ms: None,
            status: FrameStatus::Undelivered,
            selection: SelectionSummary::None,
        }
    }

    pub fn presented(&self) -> bool {
        self.status == FrameStatus::Presented
    }
}

/// Longest-processing-time list schedule of `jobs` on `workers`; returns the makespan.
pub(crate) fn makespan(jobs: &[f64], workers: usize) -> f64 {
    let mut sorted = jobs.to_vec();
    sorted.sort_by(|a, b| b.total_cmp(a));
    let mut loads = vec![0.0f64; workers.max(1)];
    for j in sorted {
        let slot = loads
            .iter_mut()
            .min_by(|a, b| a.total_cmp(b))
            .expect("at least one worker");
        *slot += j;
    }
    loads.into_iter().fold(0.0, f64::max)
}
