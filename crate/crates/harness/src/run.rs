//! Runs the conditions of an experiment over one shared sequence and viewport.

use std::fs::File;
use std::io::BufWriter;
use std::path::Path;

use anyhow::{bail, Context, Result};
use pcstream::adaptation::{Viewport, ViewportProvider};
use pcstream::stream::{run_loopback_session, simulate_session, TransportMode};

use crate::config::{Condition, ExperimentConfig, ViewportSource};
use crate::metrics::{
    summarize, write_records, ConditionInfo, ConditionSummary, FrameRecord, MetricsSummary, SUMMARY_SCHEMA_VERSION,
};
use crate::sequence::{load_source, Sequence};
use crate::trace::{load_viewport_trace, Orbit, ViewportTrace};

pub const FRAMES_FILE: &str = "frames.csv";
pub const SUMMARY_FILE: &str = "summary.json";

/// The receiver's viewer.
#[derive(Debug, Clone)]
pub enum Viewer {
    Orbit(Orbit),
    Trace(ViewportTrace),
}

impl ViewportProvider for Viewer {
    fn viewport_at(&self, time_ms: f64) -> Viewport<f64> {
        match self {
            Self::Orbit(o) => o.viewport_at(time_ms),
            Self::Trace(t) => t.viewport_at(time_ms),
        }
    }
}

/// Loads the viewer; a trace must cover the whole sequence.
pub fn load_viewer(source: &ViewportSource, sequence_ms: f64) -> Result<Viewer> {
    match source {
        ViewportSource::Orbit(o) => Ok(Viewer::Orbit(*o)),
        ViewportSource::Trace(path) => {
            let t = load_viewport_trace(path).with_context(|| format!("viewport trace {}", path.display()))?;
            if t.end_ms() < sequence_ms {
                bail!(
                    "viewport trace {} ends at {} ms but the sequence lasts {} ms",
                    path.display(),
                    t.end_ms(),
                    sequence_ms
                );
            }
            Ok(Viewer::Trace(t))
        }
    }
}

/// One condition over the sequence; records are already rounded for the CSV.
pub fn run_condition(seq: &Sequence, viewer: &Viewer, condition: &Condition) -> Result<Vec<FrameRecord>> {
    let mut config = condition.stream.clone();
    config.fps = seq.fps;
    let report = match config.channel.mode {
        TransportMode::Simulated => simulate_session(&seq.frames, &seq.poses, &config, viewer),
        TransportMode::Socket => run_loopback_session(&seq.frames, &seq.poses, &config, viewer),
    }?;
    Ok(report
        .timelines
        .iter()
        .map(|t| FrameRecord::from_timeline(config.mode, t))
        .collect())
}

/// Runs every condition in order and writes `<output_dir>/<name>/frames.csv`
/// and `<output_dir>/summary.json`.
pub fn run_experiment(config: &ExperimentConfig) -> Result<MetricsSummary> {
    let seq = load_source(&config.source).context("cannot load the source sequence")?;
    let viewer = load_viewer(&config.viewport, seq.duration_ms())?;
    std::fs::create_dir_all(&config.output_dir)
        .with_context(|| format!("cannot create {}", config.output_dir.display()))?;
    let mut conditions = Vec::with_capacity(config.conditions.len());
    for c in &config.conditions {
        log::info!("running condition {}", c.name);
        let records = run_condition(&seq, &viewer, c).with_context(|| format!("condition {} failed", c.name))?;
        let dir = config.output_dir.join(&c.name);
        let csv_path = dir.join(FRAMES_FILE);
        write_csv(&csv_path, &records).with_context(|| format!("condition {}", c.name))?;
        conditions.push(ConditionSummary {
            condition: ConditionInfo {
                name: c.name.clone(),
                target_mbps: c.target_mbps,
                frames_csv: format!("{}/{FRAMES_FILE}", c.name),
            },
            metrics: summarize(&records)?,
        });
    }
    let summary = MetricsSummary {
        schema_version: SUMMARY_SCHEMA_VERSION,
        seed: config.seed,
        conditions,
    };
    let path = config.output_dir.join(SUMMARY_FILE);
    let json = serde_json::to_string_pretty(&summary)?;
    std::fs::write(&path, json + "\n").with_context(|| format!("cannot write {}", path.display()))?;
    Ok(summary)
}

fn write_csv(path: &Path, records: &[FrameRecord]) -> Result<()> {
    if let Some(dir) = path.parent() {
        std::fs::create_dir_all(dir).with_context(|| format!("cannot create {}", dir.display()))?;
    }
    let file = File::create(path).with_context(|| format!("cannot write {}", path.display()))?;
    write_records(records, BufWriter::new(file))?;
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::trace::TraceSample;

    #[test]
    fn short_trace_is_rejected() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("t.csv");
        Orbit::default()
            .to_trace(500.0, 100.0)
            .write(File::create(&path).unwrap())
            .unwrap();
        let err = load_viewer(&ViewportSource::Trace(path.clone()), 1000.0).unwrap_err();
        assert!(err.to_string().contains("ends at 500"), "{err}");
        assert!(load_viewer(&ViewportSource::Trace(path), 500.0).is_ok());
    }

    #[test]
    fn viewer_delegates() {
        let s = TraceSample {
            time_ms: 0.0,
            px: 0.0,
            py: 1.0,
            pz: 2.0,
            dx: 0.0,
            dy: 0.0,
            dz: -1.0,
        };
        let v = Viewer::Trace(ViewportTrace::new(vec![s]).unwrap());
        assert_eq!(v.viewport_at(10.0).position.z, 2.0);
        let o = Orbit::default();
        assert_eq!(Viewer::Orbit(o).viewport_at(42.0), o.viewport_at(42.0));
    }
}
