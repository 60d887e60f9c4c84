//! Comparison tables over frames.csv files.

use std::io::Write;
use std::path::{Path, PathBuf};

use anyhow::{Context, Result};
use pcstream::stream::Mode;
use serde::Serialize;

use crate::metrics::{read_records, summarize, ConditionMetrics, FrameRecord};
use crate::run::FRAMES_FILE;

#[derive(Debug, Clone)]
pub struct ReportRow {
    pub name: String,
    /// Per-frame byte budget shared by the condition's frames, if any.
    pub budget_bytes: Option<u64>,
    pub metrics: ConditionMetrics,
}

/// Accepts a frames.csv path or a directory holding one. The condition is named
/// after the containing directory.
pub fn load_row(path: &Path) -> Result<ReportRow> {
    let file = if path.is_dir() { path.join(FRAMES_FILE) } else { path.to_path_buf() };
    let records = read_records(std::fs::File::open(&file).with_context(|| format!("cannot open {}", file.display()))?)
        .with_context(|| format!("{}", file.display()))?;
    let name = file
        .parent()
        .and_then(|p| p.file_name())
        .and_then(|n| n.to_str())
        .filter(|n| !n.is_empty())
        .unwrap_or("frames")
        .to_string();
    Ok(row_from_records(name, &records)?)
}

pub fn row_from_records(name: String, records: &[FrameRecord]) -> Result<ReportRow> {
    Ok(ReportRow {
        name,
        budget_bytes: records.iter().find_map(|r| r.budget_bytes),
        metrics: summarize(records)?,
    })
}

pub fn load_rows(paths: &[PathBuf]) -> Result<Vec<ReportRow>> {
    paths.iter().map(|p| load_row(p)).collect()
}

/// Median latency of a TA condition against an NA condition with the same budget.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct LatencyDelta {
    pub tiled: String,
    pub network: String,
    pub tiled_median_ms: f64,
    pub network_median_ms: f64,
    /// NA minus TA; positive when tiling is faster.
    pub gain_ms: f64,
}

pub fn latency_deltas(rows: &[ReportRow]) -> Vec<LatencyDelta> {
    let of_mode = |m: Mode| rows.iter().filter(move |r| r.metrics.mode == m.label());
    let mut out = Vec::new();
    for ta in of_mode(Mode::TiledAdaptive) {
        for na in of_mode(Mode::NetworkAdaptive).filter(|na| na.budget_bytes == ta.budget_bytes) {
            if let (Some(t), Some(n)) = (ta.metrics.median_e2e_ms, na.metrics.median_e2e_ms) {
                out.push(LatencyDelta {
                    tiled: ta.name.clone(),
                    network: na.name.clone(),
                    tiled_median_ms: t,
                    network_median_ms: n,
                    gain_ms: n - t,
                });
            }
        }
    }
    out
}

const HEADER: [&str; 11] = [
    "condition",
    "mode",
    "frames",
    "presented",
    "fps",
    "median_e2e_ms",
    "p95_e2e_ms",
    "mbps",
    "dropped",
    "budget_violations",
    "mean_encode_ms",
];

fn cells(r: &ReportRow) -> [String; 11] {
    let f = |v: Option<f64>, p: usize| v.map(|v| format!("{v:.p$}")).unwrap_or_else(|| "-".into());
    let m = &r.metrics;
    [
        r.name.clone(),
        m.mode.clone(),
        m.frames.to_string(),
        m.presented.to_string(),
        f(m.achieved_fps, 2),
        f(m.median_e2e_ms, 1),
        f(m.p95_e2e_ms, 1),
        f(m.achieved_mbps, 2),
        m.dropped.to_string(),
        m.budget_violations.to_string(),
        f(m.mean_encode_ms, 1),
    ]
}

/// Aligned text table followed by the TA-vs-NA latency lines.
pub fn render_text(rows: &[ReportRow]) -> String {
    let body: Vec<[String; 11]> = rows.iter().map(cells).collect();
    let widths: Vec<usize> = (0..HEADER.len())
        .map(|i| body.iter().map(|r| r[i].len()).chain([HEADER[i].len()]).max().unwrap_or(0))
        .collect();
    let mut out = String::new();
    let mut line = |cols: Vec<&str>| {
        let parts: Vec<String> = cols
            .iter()
            .zip(&widths)
            .enumerate()
            .map(|(i, (c, w))| if i < 2 { format!("{c:<w$}") } else { format!("{c:>w$}") })
            .collect();
        out.push_str(parts.join("  ").trim_end());
        out.push('\n');
    };
    line(HEADER.to_vec());
    for r in &body {
        line(r.iter().map(String::as_str).collect());
    }
    for d in latency_deltas(rows) {
        let verdict = if d.gain_ms > 0.0 { "TA faster" } else { "TA not faster" };
        out.push_str(&format!(
            "\n>> {} vs {}: median latency {:.1} ms vs {:.1} ms, NA - TA = {:+.1} ms ({verdict})",
            d.tiled, d.network, d.tiled_median_ms, d.network_median_ms, d.gain_ms
        ));
    }
    if !out.ends_with('\n') {
        out.push('\n');
    }
    out
}

pub fn write_csv(rows: &[ReportRow], writer: impl Write) -> Result<()> {
    let mut w = csv::Writer::from_writer(writer);
    w.write_record(HEADER)?;
    for r in rows {
        let mut c = cells(r);
        for v in c.iter_mut().skip(2) {
            if v == "-" {
                v.clear();
            }
        }
        w.write_record(c)?;
    }
    w.flush()?;
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::metrics::{round_ms, write_records};
    use pcstream::stream::{FrameStatus, SelectionSummary};

    fn rows(mode: Mode, e2e: f64, n: u64) -> Vec<FrameRecord> {
        (0..n)
            .map(|i| FrameRecord {
                frame_index: i,
                capture_ts_ms: round_ms(i as f64 * 1000.0 / 15.0),
                mode,
                status: FrameStatus::Presented,
                encode_ms: 1.0,
                bytes_sent: 100,
                budget_bytes: Some(116_666),
                budget_violated: false,
                transmit_ms: 1.0,
                decode_ms: 1.0,
                sync_wait_ms: 0.0,
                present_ts_ms: Some(round_ms(i as f64 * 1000.0 / 15.0 + e2e)),
                end_to_end_ms: Some(e2e),
                selection: SelectionSummary::None,
            })
            .collect()
    }

    #[test]
    fn single_condition_table() {
        let r = row_from_records("only".into(), &rows(Mode::TiledAdaptive, 50.0, 10)).unwrap();
        let text = render_text(&[r]);
        let lines: Vec<&str> = text.lines().collect();
        assert_eq!(lines.len(), 2);
        assert!(lines[0].starts_with("condition"));
        assert!(lines[1].starts_with("only"));
        assert!(!text.contains(">>"));
    }

    #[test]
    fn delta_pairs_equal_budgets() {
        let ta = row_from_records("ta".into(), &rows(Mode::TiledAdaptive, 50.0, 10)).unwrap();
        let na = row_from_records("na".into(), &rows(Mode::NetworkAdaptive, 90.0, 10)).unwrap();
        let mut other = rows(Mode::NetworkAdaptive, 10.0, 10);
        other.iter_mut().for_each(|r| r.budget_bytes = Some(1));
        let na7 = row_from_records("na7".into(), &other).unwrap();
        let d = latency_deltas(&[ta.clone(), na.clone(), na7]);
        assert_eq!(d.len(), 1);
        assert_eq!((d[0].network.as_str(), d[0].gain_ms), ("na", 40.0));
        assert!(render_text(&[ta, na]).contains("+40.0 ms (TA faster)"));
    }

    #[test]
    fn loads_named_directories() {
        let dir = tempfile::tempdir().unwrap();
        let sub = dir.path().join("ta-14");
        std::fs::create_dir(&sub).unwrap();
        write_records(&rows(Mode::TiledAdaptive, 5.0, 3), std::fs::File::create(sub.join(FRAMES_FILE)).unwrap())
            .unwrap();
        let a = load_row(&sub).unwrap();
        let b = load_row(&sub.join(FRAMES_FILE)).unwrap();
        assert_eq!(a.name, "ta-14");
        assert_eq!(a.metrics, b.metrics);
        let mut buf = Vec::new();
        write_csv(&[a], &mut buf).unwrap();
        assert!(String::from_utf8(buf).unwrap().lines().nth(1).unwrap().starts_with("ta-14,tiled_adaptive,3,3,"));
    }
}
