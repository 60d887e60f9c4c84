//! Per-frame records (frames.csv) and the aggregate summary (summary.json).
//!
//! Aggregates are computed from the records as written, after rounding, so a
//! summary can always be recomputed exactly from its CSV.

use std::collections::BTreeMap;
use std::io::{Read, Write};

use pcstream::stream::{FrameStatus, FrameTimeline, Mode, SelectionSummary};
use serde::{Deserialize, Serialize};

/// frames.csv columns, in file order.
pub const FRAME_COLUMNS: [&str; 14] = [
    "frame_index",
    "capture_ts_ms",
    "mode",
    "status",
    "encode_ms",
    "bytes_sent",
    "budget_bytes",
    "budget_violated",
    "transmit_ms",
    "decode_ms",
    "sync_wait_ms",
    "present_ts_ms",
    "end_to_end_ms",
    "selection",
];

pub const SUMMARY_SCHEMA_VERSION: u32 = 1;

#[derive(Debug, thiserror::Error)]
pub enum RecordError {
    #[error("schema mismatch: expected columns {expected}, found {found}")]
    Schema { expected: String, found: String },
    #[error("row {row}: bad {column} value {value:?}")]
    Field {
        row: usize,
        column: &'static str,
        value: String,
    },
    #[error("rows mix modes {0} and {1}")]
    MixedModes(&'static str, &'static str),
    #[error("csv: {0}")]
    Csv(#[from] csv::Error),
    #[error("io: {0}")]
    Io(#[from] std::io::Error),
}

/// Timestamps and durations at the 0.1 ms resolution of the CSV.
pub fn round_ms(v: f64) -> f64 {
    (v * 10.0).round() / 10.0
}

/// One frames.csv row.
#[derive(Debug, Clone, PartialEq)]
pub struct FrameRecord {
    pub frame_index: u64,
    pub capture_ts_ms: f64,
    pub mode: Mode,
    pub status: FrameStatus,
    pub encode_ms: f64,
    pub bytes_sent: u64,
    pub budget_bytes: Option<u64>,
    pub budget_violated: bool,
    pub transmit_ms: f64,
    pub decode_ms: f64,
    pub sync_wait_ms: f64,
    pub present_ts_ms: Option<f64>,
    pub end_to_end_ms: Option<f64>,
    pub selection: SelectionSummary,
}

impl FrameRecord {
    pub fn from_timeline(mode: Mode, t: &FrameTimeline) -> Self {
        Self {
            frame_index: t.frame_index,
            capture_ts_ms: round_ms(t.capture_ts_ms),
            mode,
            status: t.status,
            encode_ms: round_ms(t.encode_ms),
            bytes_sent: t.bytes_sent,
            budget_bytes: t.budget_bytes,
            budget_violated: t.budget_violated,
            transmit_ms: round_ms(t.transmit_ms),
            decode_ms: round_ms(t.decode_ms),
            sync_wait_ms: round_ms(t.sync_wait_ms),
            present_ts_ms: t.present_ts_ms.map(round_ms),
            end_to_end_ms: t.end_to_end_ms.map(round_ms),
            selection: t.selection.clone(),
        }
    }

    pub fn presented(&self) -> bool {
        self.status == FrameStatus::Presented
    }

    fn fields(&self) -> [String; 14] {
        let ms = |v: f64| format!("{v:.1}");
        let opt_ms = |v: Option<f64>| v.map(ms).unwrap_or_default();
        [
            self.frame_index.to_string(),
            ms(self.capture_ts_ms),
            self.mode.label().to_string(),
            self.status.label().to_string(),
            ms(self.encode_ms),
            self.bytes_sent.to_string(),
            self.budget_bytes.map(|b| b.to_string()).unwrap_or_default(),
            u8::from(self.budget_violated).to_string(),
            ms(self.transmit_ms),
            ms(self.decode_ms),
            ms(self.sync_wait_ms),
            opt_ms(self.present_ts_ms),
            opt_ms(self.end_to_end_ms),
            self.selection.render(),
        ]
    }

    fn parse(row: usize, rec: &csv::StringRecord) -> Result<Self, RecordError> {
        let get = |i: usize| rec.get(i).unwrap_or("");
        let bad = |i: usize| RecordError::Field {
            row,
            column: FRAME_COLUMNS[i],
            value: get(i).to_string(),
        };
        let num = |i: usize| get(i).parse::<f64>().ok().filter(|v| v.is_finite()).ok_or_else(|| bad(i));
        let int = |i: usize| get(i).parse::<u64>().map_err(|_| bad(i));
        let opt_num = |i: usize| if get(i).is_empty() { Ok(None) } else { num(i).map(Some) };
        Ok(Self {
            frame_index: int(0)?,
            capture_ts_ms: num(1)?,
            mode: Mode::from_label(get(2)).ok_or_else(|| bad(2))?,
            status: FrameStatus::from_label(get(3)).ok_or_else(|| bad(3))?,
            encode_ms: num(4)?,
            bytes_sent: int(5)?,
            budget_bytes: if get(6).is_empty() { None } else { Some(int(6)?) },
            budget_violated: match get(7) {
                "0" => false,
                "1" => true,
                _ => return Err(bad(7)),
            },
            transmit_ms: num(8)?,
            decode_ms: num(9)?,
            sync_wait_ms: num(10)?,
            present_ts_ms: opt_num(11)?,
            end_to_end_ms: opt_num(12)?,
            selection: SelectionSummary::parse(get(13)).ok_or_else(|| bad(13))?,
        })
    }
}

pub fn write_records(records: &[FrameRecord], writer: impl Write) -> Result<(), RecordError> {
    let mut w = csv::Writer::from_writer(writer);
    w.write_record(FRAME_COLUMNS)?;
    for r in records {
        w.write_record(r.fields())?;
    }
    w.flush()?;
    Ok(())
}

pub fn read_records(reader: impl Read) -> Result<Vec<FrameRecord>, RecordError> {
    let mut rdr = csv::ReaderBuilder::new().has_headers(true).from_reader(reader);
    let header = rdr.headers()?.clone();
    if header.iter().ne(FRAME_COLUMNS) {
        return Err(RecordError::Schema {
            expected: FRAME_COLUMNS.join(","),
            found: header.iter().collect::<Vec<_>>().join(","),
        });
    }
    rdr.records()
        .enumerate()
        .map(|(i, rec)| FrameRecord::parse(i + 1, &rec?))
        .collect()
}

/// Middle value; the mean of the two middle values for even counts.
pub fn median(values: &[f64]) -> Option<f64> {
    let mut v = values.to_vec();
    v.sort_by(f64::total_cmp);
    let n = v.len();
    match n {
        0 => None,
        _ if n % 2 == 1 => Some(v[n / 2]),
        _ => Some((v[n / 2 - 1] + v[n / 2]) / 2.0),
    }
}

/// Nearest-rank percentile, `p` in (0, 100].
pub fn percentile(values: &[f64], p: f64) -> Option<f64> {
    let mut v = values.to_vec();
    v.sort_by(f64::total_cmp);
    let n = v.len();
    if n == 0 {
        return None;
    }
    let rank = ((p / 100.0) * n as f64).ceil() as usize;
    Some(v[rank.clamp(1, n) - 1])
}

fn mean(values: &[f64]) -> Option<f64> {
    (!values.is_empty()).then(|| values.iter().sum::<f64>() / values.len() as f64)
}

/// Aggregates of one condition.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ConditionMetrics {
    pub mode: String,
    pub frames: usize,
    pub presented: usize,
    /// Frames that never reached the screen, for any reason.
    pub dropped: usize,
    pub status_counts: BTreeMap<String, usize>,
    pub median_e2e_ms: Option<f64>,
    pub p95_e2e_ms: Option<f64>,
    /// Presented frames over the sequence duration.
    pub achieved_fps: Option<f64>,
    pub achieved_mbps: Option<f64>,
    pub budget_violations: usize,
    /// Over frames the sender encoded.
    pub mean_encode_ms: Option<f64>,
    /// Over presented frames.
    pub mean_decode_ms: Option<f64>,
    /// Selections per tile ("full" for whole-cloud requests): counts by quality index.
    pub quality_histogram: BTreeMap<String, Vec<u64>>,
}

/// Sequence duration from the capture timestamps: frame count times the mean
/// capture interval. `None` below two frames.
pub fn sequence_duration_ms(records: &[FrameRecord]) -> Option<f64> {
    let n = records.len();
    if n < 2 {
        return None;
    }
    let first = records.iter().map(|r| r.capture_ts_ms).fold(f64::INFINITY, f64::min);
    let last = records.iter().map(|r| r.capture_ts_ms).fold(f64::NEG_INFINITY, f64::max);
    let interval = (last - first) / (n - 1) as f64;
    (interval > 0.0).then(|| interval * n as f64)
}

pub fn summarize(records: &[FrameRecord]) -> Result<ConditionMetrics, RecordError> {
    let mode = records.first().map_or(Mode::TiledAdaptive, |r| r.mode);
    if let Some(r) = records.iter().find(|r| r.mode != mode) {
        return Err(RecordError::MixedModes(mode.label(), r.mode.label()));
    }
    let presented: Vec<&FrameRecord> = records.iter().filter(|r| r.presented()).collect();
    let e2e: Vec<f64> = presented.iter().filter_map(|r| r.end_to_end_ms).collect();
    let duration_s = sequence_duration_ms(records).map(|d| d / 1000.0);
    let bytes: u64 = records.iter().map(|r| r.bytes_sent).sum();
    let encoded: Vec<f64> = records
        .iter()
        .filter(|r| r.status != FrameStatus::SkippedAtSender)
        .map(|r| r.encode_ms)
        .collect();
    let decoded: Vec<f64> = presented.iter().map(|r| r.decode_ms).collect();

    let mut status_counts = BTreeMap::new();
    for r in records {
        *status_counts.entry(r.status.label().to_string()).or_insert(0) += 1;
    }
    let mut quality_histogram: BTreeMap<String, Vec<u64>> = BTreeMap::new();
    let mut bump = |key: String, q: usize| {
        let h = quality_histogram.entry(key).or_default();
        if h.len() <= q {
            h.resize(q + 1, 0);
        }
        h[q] += 1;
    };
    for r in records {
        match &r.selection {
            SelectionSummary::None => {}
            SelectionSummary::Full { quality_index } => bump("full".into(), *quality_index),
            SelectionSummary::Tiles(tiles) => {
                for &(tile, q) in tiles {
                    bump(format!("tile{tile}"), q);
                }
            }
        }
    }

    Ok(ConditionMetrics {
        mode: mode.label().to_string(),
        frames: records.len(),
        presented: presented.len(),
        dropped: records.len() - presented.len(),
        status_counts,
        median_e2e_ms: median(&e2e),
        p95_e2e_ms: percentile(&e2e, 95.0),
        achieved_fps: duration_s.map(|d| presented.len() as f64 / d),
        achieved_mbps: duration_s.map(|d| bytes as f64 * 8.0 / d / 1e6),
        budget_violations: records.iter().filter(|r| r.budget_violated).count(),
        mean_encode_ms: mean(&encoded),
        mean_decode_ms: mean(&decoded),
        quality_histogram,
    })
}

/// Settings echoed next to the aggregates; not recomputable from the CSV.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ConditionInfo {
    pub name: String,
    pub target_mbps: Option<f64>,
    pub frames_csv: String,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ConditionSummary {
    pub condition: ConditionInfo,
    pub metrics: ConditionMetrics,
}

/// summary.json
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MetricsSummary {
    pub schema_version: u32,
    pub seed: u64,
    pub conditions: Vec<ConditionSummary>,
}
