//! Experiment configuration (TOML).
//!
//! ```toml
//! seed = 7
//! output_dir = "results"
//!
//! [source.synthetic]          # or: [source] ply_dir = "capture/"
//! points = 130000
//! frames = 150
//! fps = 15.0
//!
//! [viewport.orbit]            # or: [viewport] trace = "trace.csv"
//! speed_deg_s = 20.0
//!
//! [[condition]]
//! name = "ta-14"
//! mode = "tiled_adaptive"
//! target_mbps = 14.0
//! channel_mbps = 20.0
//! ```
//!
//! Relative paths resolve against the directory of the config file.

use std::collections::BTreeSet;
use std::path::{Path, PathBuf};

use pcstream::adaptation::Allocator;
use pcstream::codec::QualityLevel;
use pcstream::pccore::synth::{ring_poses, Body};
use pcstream::pccore::SynthConfig;
use pcstream::stream::{ChannelModel, CostModel, Mode, StreamConfig, TimingModel, TransportMode};
use serde::Deserialize;
use toml::Spanned;

use crate::trace::Orbit;

#[derive(Debug, thiserror::Error)]
pub enum ConfigError {
    #[error("{0}")]
    Parse(String),
    #[error("line {line}: {context}{field}: {message}")]
    Invalid {
        line: usize,
        context: String,
        field: &'static str,
        message: String,
    },
    #[error("config needs at least one [[condition]]")]
    NoConditions,
    #[error("cannot read config {path}: {source}")]
    Io {
        path: PathBuf,
        source: std::io::Error,
    },
}

#[derive(Debug, Deserialize)]
#[serde(deny_unknown_fields)]
struct RawExperiment {
    seed: Option<u64>,
    output_dir: PathBuf,
    source: RawSource,
    #[serde(default)]
    viewport: Option<RawViewport>,
    #[serde(default, rename = "condition")]
    conditions: Vec<Spanned<RawCondition>>,
}

#[derive(Debug, Deserialize)]
#[serde(rename_all = "snake_case", deny_unknown_fields)]
enum RawSource {
    Synthetic(RawSynth),
    PlyDir(PathBuf),
}

#[derive(Debug, Deserialize)]
#[serde(default, deny_unknown_fields)]
struct RawSynth {
    points: usize,
    frames: usize,
    fps: f64,
    sensors: usize,
    sensor_radius_m: f64,
}

impl Default for RawSynth {
    fn default() -> Self {
        let d = SynthConfig::default();
        Self {
            points: d.point_count,
            frames: d.frame_count,
            fps: d.fps,
            sensors: d.sensor_poses.len(),
            sensor_radius_m: 1.6,
        }
    }
}

#[derive(Debug, Deserialize)]
#[serde(rename_all = "snake_case", deny_unknown_fields)]
enum RawViewport {
    Orbit(Orbit),
    Trace(PathBuf),
}

#[derive(Debug, Clone, Copy, Deserialize)]
#[serde(rename_all = "snake_case")]
enum RawMode {
    Uncompressed,
    NetworkAdaptive,
    TiledAdaptive,
}

#[derive(Debug, Clone, Copy, Default, Deserialize)]
#[serde(rename_all = "snake_case")]
enum RawAllocator {
    #[default]
    Stepwise,
    Greedy,
}

#[derive(Debug, Clone, Copy, Default, Deserialize)]
#[serde(rename_all = "snake_case")]
enum RawTransport {
    #[default]
    Simulated,
    Socket,
}

#[derive(Debug, Clone, Copy, Deserialize)]
#[serde(rename_all = "snake_case")]
enum RawTiming {
    Modeled,
    Measured,
}

#[derive(Debug, Clone, Copy, Deserialize)]
#[serde(deny_unknown_fields)]
struct RawQuality {
    depth: u8,
    qp: u8,
}

#[derive(Debug, Clone, Copy, Deserialize)]
#[serde(default, deny_unknown_fields)]
struct RawCost {
    encode_ns_per_point: f64,
    encode_ns_per_point_level: f64,
    decode_ns_per_voxel_level: f64,
    tiling_ns_per_point: f64,
    serialize_ns_per_point: f64,
    deserialize_ns_per_point: f64,
}

impl Default for RawCost {
    fn default() -> Self {
        let c = CostModel::default();
        Self {
            encode_ns_per_point: c.encode_ns_per_point,
            encode_ns_per_point_level: c.encode_ns_per_point_level,
            decode_ns_per_voxel_level: c.decode_ns_per_voxel_level,
            tiling_ns_per_point: c.tiling_ns_per_point,
            serialize_ns_per_point: c.serialize_ns_per_point,
            deserialize_ns_per_point: c.deserialize_ns_per_point,
        }
    }
}

#[derive(Debug, Deserialize)]
#[serde(deny_unknown_fields)]
struct RawCondition {
    name: String,
    mode: RawMode,
    target_mbps: Option<f64>,
    #[serde(default)]
    allocator: RawAllocator,
    #[serde(default = "default_channel_mbps")]
    channel_mbps: f64,
    #[serde(default = "default_delay_ms")]
    delay_ms: f64,
    #[serde(default)]
    transport: RawTransport,
    timing: Option<RawTiming>,
    #[serde(default)]
    top_quality_decode_penalty_ms: f64,
    #[serde(default)]
    cost: RawCost,
    sender_workers: Option<usize>,
    decode_workers: Option<usize>,
    #[serde(default)]
    na_parallel_codec: bool,
    playout_offset_ms: Option<f64>,
    calibration_frames: Option<usize>,
    qualities: Option<Vec<RawQuality>>,
}

fn default_channel_mbps() -> f64 {
    1000.0
}

fn default_delay_ms() -> f64 {
    1.0
}

#[derive(Debug, Clone, PartialEq)]
pub enum Source {
    Synthetic(SynthConfig),
    PlyDir(PathBuf),
}

#[derive(Debug, Clone, PartialEq)]
pub enum ViewportSource {
    Orbit(Orbit),
    Trace(PathBuf),
}

#[derive(Debug, Clone, PartialEq)]
pub struct Condition {
    pub name: String,
    pub target_mbps: Option<f64>,
    /// `fps` is replaced by the sequence frame rate at run time.
    pub stream: StreamConfig,
}

#[derive(Debug, Clone, PartialEq)]
pub struct ExperimentConfig {
    pub seed: u64,
    pub output_dir: PathBuf,
    pub source: Source,
    pub viewport: ViewportSource,
    pub conditions: Vec<Condition>,
}

fn line_of(text: &str, offset: usize) -> usize {
    text[..offset.min(text.len())].matches('\n').count() + 1
}

/// Offset of the line that opens top-level `key`, as a table header or an assignment.
fn key_offset(text: &str, key: &str) -> usize {
    let mut offset = 0;
    for line in text.split_inclusive('\n') {
        let t = line.trim_start();
        let rest = t.strip_prefix('[').unwrap_or(t);
        if let Some(after) = rest.strip_prefix(key) {
            if after.trim_start().starts_with(['.', ']', '=']) {
                return offset;
            }
        }
        offset += line.len();
    }
    0
}

impl ExperimentConfig {
    pub fn load(path: impl AsRef<Path>) -> Result<Self, ConfigError> {
        let path = path.as_ref();
        let text = std::fs::read_to_string(path).map_err(|source| ConfigError::Io {
            path: path.to_path_buf(),
            source,
        })?;
        let base = path.parent().unwrap_or(Path::new("."));
        Self::parse(&text, base)
    }

    /// Parses config text; relative paths are joined onto `base`.
    pub fn parse(text: &str, base: &Path) -> Result<Self, ConfigError> {
        let raw: RawExperiment = toml::from_str(text).map_err(|e| ConfigError::Parse(e.to_string()))?;
        let invalid = |span: std::ops::Range<usize>, context: String, field: &'static str, message: String| {
            ConfigError::Invalid {
                line: line_of(text, span.start),
                context,
                field,
                message,
            }
        };
        let resolve = |p: &Path| if p.is_absolute() { p.to_path_buf() } else { base.join(p) };

        let seed = raw.seed.unwrap_or(SynthConfig::default().seed);
        let at = key_offset(text, "source");
        let source_span = at..at;
        let source = match raw.source {
            RawSource::PlyDir(p) => Source::PlyDir(resolve(&p)),
            RawSource::Synthetic(s) => {
                let ctx = "source.synthetic: ".to_string();
                if s.points == 0 {
                    return Err(invalid(source_span, ctx, "points", "must be positive".into()));
                }
                if s.frames == 0 {
                    return Err(invalid(source_span, ctx, "frames", "must be positive".into()));
                }
                if !(s.fps > 0.0 && s.fps.is_finite()) {
                    return Err(invalid(source_span, ctx, "fps", format!("must be positive, got {}", s.fps)));
                }
                if !(1..=255).contains(&s.sensors) {
                    return Err(invalid(source_span, ctx, "sensors", format!("must be 1..=255, got {}", s.sensors)));
                }
                if !(s.sensor_radius_m > 0.0 && s.sensor_radius_m.is_finite()) {
                    return Err(invalid(source_span, ctx, "sensor_radius_m", "must be positive".into()));
                }
                let body = Body::default();
                Source::Synthetic(SynthConfig {
                    point_count: s.points,
                    sensor_poses: ring_poses(s.sensors, body.center, s.sensor_radius_m),
                    seed,
                    frame_count: s.frames,
                    fps: s.fps,
                    body,
                })
            }
        };

        let viewport = match raw.viewport {
            None => ViewportSource::Orbit(Orbit::default()),
            Some(v) => {
                let at = key_offset(text, "viewport");
                let span = at..at;
                match v {
                    RawViewport::Trace(p) => ViewportSource::Trace(resolve(&p)),
                    RawViewport::Orbit(o) => {
                        o.validate()
                            .map_err(|m| invalid(span, "viewport.".into(), "orbit", m))?;
                        ViewportSource::Orbit(o)
                    }
                }
            }
        };

        if raw.conditions.is_empty() {
            return Err(ConfigError::NoConditions);
        }
        let mut names = BTreeSet::new();
        let mut conditions = Vec::with_capacity(raw.conditions.len());
        for (i, spanned) in raw.conditions.into_iter().enumerate() {
            let span = spanned.span();
            let c = spanned.into_inner();
            let ctx = format!("condition #{} ({:?}): ", i + 1, c.name);
            let err = |field: &'static str, message: String| invalid(span.clone(), ctx.clone(), field, message);
            conditions.push(build_condition(c, &mut names, err)?);
        }

        Ok(Self {
            seed,
            output_dir: resolve(&raw.output_dir),
            source,
            viewport,
            conditions,
        })
    }
}

fn build_condition(
    c: RawCondition,
    names: &mut BTreeSet<String>,
    err: impl Fn(&'static str, String) -> ConfigError,
) -> Result<Condition, ConfigError> {
    if c.name.is_empty()
        || !c
            .name
            .chars()
            .all(|ch| ch.is_ascii_alphanumeric() || matches!(ch, '-' | '_' | '.'))
        || c.name.starts_with('.')
    {
        return Err(err("name", "use letters, digits, '-', '_' or '.' (it names the output directory)".into()));
    }
    if !names.insert(c.name.clone()) {
        return Err(err("name", "duplicate condition name".into()));
    }
    let mode = match c.mode {
        RawMode::Uncompressed => Mode::Uncompressed,
        RawMode::NetworkAdaptive => Mode::NetworkAdaptive,
        RawMode::TiledAdaptive => Mode::TiledAdaptive,
    };
    let target_bitrate_bps = match (mode, c.target_mbps) {
        (Mode::Uncompressed, t) => t.unwrap_or(0.0) * 1e6,
        (_, None) => return Err(err("target_mbps", "required for adaptive modes".into())),
        (_, Some(t)) if !(t > 0.0 && t.is_finite()) => {
            return Err(err("target_mbps", format!("must be positive, got {t}")))
        }
        (_, Some(t)) => t * 1e6,
    };
    if !(c.channel_mbps > 0.0 && c.channel_mbps.is_finite()) {
        return Err(err("channel_mbps", format!("must be positive, got {}", c.channel_mbps)));
    }
    if !(c.delay_ms >= 0.0 && c.delay_ms.is_finite()) {
        return Err(err("delay_ms", format!("must be non-negative, got {}", c.delay_ms)));
    }
    if !(c.top_quality_decode_penalty_ms >= 0.0 && c.top_quality_decode_penalty_ms.is_finite()) {
        return Err(err("top_quality_decode_penalty_ms", "must be non-negative".into()));
    }
    let cost = c.cost;
    let costs = [
        cost.encode_ns_per_point,
        cost.encode_ns_per_point_level,
        cost.decode_ns_per_voxel_level,
        cost.tiling_ns_per_point,
        cost.serialize_ns_per_point,
        cost.deserialize_ns_per_point,
    ];
    if costs.iter().any(|v| !(*v >= 0.0 && v.is_finite())) {
        return Err(err("cost", "costs must be non-negative".into()));
    }
    let transport = match c.transport {
        RawTransport::Simulated => TransportMode::Simulated,
        RawTransport::Socket => TransportMode::Socket,
    };
    let timing = match (transport, c.timing) {
        (TransportMode::Socket, Some(RawTiming::Modeled)) => {
            return Err(err("timing", "socket transport runs on the wall clock; use \"measured\"".into()))
        }
        (TransportMode::Socket, _) | (_, Some(RawTiming::Measured)) => TimingModel::Measured {
            top_quality_decode_penalty_ms: c.top_quality_decode_penalty_ms,
        },
        (TransportMode::Simulated, _) => TimingModel::Modeled(CostModel {
            encode_ns_per_point: cost.encode_ns_per_point,
            encode_ns_per_point_level: cost.encode_ns_per_point_level,
            decode_ns_per_voxel_level: cost.decode_ns_per_voxel_level,
            tiling_ns_per_point: cost.tiling_ns_per_point,
            serialize_ns_per_point: cost.serialize_ns_per_point,
            deserialize_ns_per_point: cost.deserialize_ns_per_point,
            top_quality_decode_penalty_ms: c.top_quality_decode_penalty_ms,
        }),
    };
    let qualities = match c.qualities {
        None => QualityLevel::default_ladder(),
        Some(q) => q
            .iter()
            .map(|q| QualityLevel::new(q.depth, q.qp))
            .collect::<Result<Vec<_>, _>>()
            .map_err(|e| err("qualities", e.to_string()))?,
    };
    let defaults = StreamConfig::default();
    let stream = StreamConfig {
        mode,
        target_bitrate_bps,
        fps: defaults.fps,
        qualities,
        allocator: match c.allocator {
            RawAllocator::Stepwise => Allocator::UniformStepwise,
            RawAllocator::Greedy => Allocator::GreedyRanked,
        },
        channel: ChannelModel {
            bandwidth_bps: c.channel_mbps * 1e6,
            propagation_delay_ms: c.delay_ms,
            mode: transport,
        },
        timing,
        sender_workers: c.sender_workers.unwrap_or(defaults.sender_workers),
        decode_workers: c.decode_workers.unwrap_or(defaults.decode_workers),
        na_parallel_codec: c.na_parallel_codec,
        playout_offset_ms: c.playout_offset_ms,
        calibration_frames: c.calibration_frames.unwrap_or(defaults.calibration_frames),
    };
    stream.validate().map_err(|e| err("condition", e.to_string()))?;
    Ok(Condition {
        name: c.name,
        target_mbps: (mode != Mode::Uncompressed).then_some(target_bitrate_bps / 1e6),
        stream,
    })
}
