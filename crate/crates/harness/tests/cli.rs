use std::collections::BTreeMap;
use std::path::{Path, PathBuf};
use std::process::{Command, Output};

use pcstream_harness::trace::Orbit;

fn pcstream(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_pcstream")).args(args).output().unwrap()
}

fn ok(out: &Output) -> String {
    assert!(
        out.status.success(),
        "stdout:\n{}\nstderr:\n{}",
        String::from_utf8_lossy(&out.stdout),
        String::from_utf8_lossy(&out.stderr)
    );
    String::from_utf8(out.stdout.clone()).unwrap()
}

fn s(p: &Path) -> &str {
    p.to_str().unwrap()
}

fn dir_contents(dir: &Path) -> BTreeMap<String, Vec<u8>> {
    std::fs::read_dir(dir)
        .unwrap()
        .map(|e| {
            let p = e.unwrap().path();
            (p.file_name().unwrap().to_str().unwrap().to_string(), std::fs::read(&p).unwrap())
        })
        .collect()
}

#[test]
fn synth_single_frame_and_determinism() {
    let tmp = tempfile::tempdir().unwrap();
    let (a, b, c) = (tmp.path().join("a"), tmp.path().join("b"), tmp.path().join("c"));
    for d in [&a, &b] {
        ok(&pcstream(&["synth", "--points", "2000", "--frames", "3", "--seed", "5", "--out", s(d)]));
    }
    let (ca, cb) = (dir_contents(&a), dir_contents(&b));
    assert_eq!(ca.keys().cloned().collect::<Vec<_>>(), [
        "frame_00000.ply",
        "frame_00001.ply",
        "frame_00002.ply",
        "manifest.json"
    ]);
    assert_eq!(ca, cb);
    ok(&pcstream(&["synth", "--points", "2000", "--frames", "1", "--out", s(&c)]));
    assert_eq!(dir_contents(&c).len(), 2);
}

/// Independent aggregate computation over the raw CSV text.
struct Oracle {
    frames: usize,
    presented: usize,
    violations: usize,
    median: Option<f64>,
    p95: Option<f64>,
    fps: Option<f64>,
    mbps: Option<f64>,
    mean_encode: Option<f64>,
    mean_decode: Option<f64>,
}

fn oracle(csv_path: &Path) -> Oracle {
    let mut rdr = csv::Reader::from_path(csv_path).unwrap();
    let head = rdr.headers().unwrap().clone();
    let col = |name: &str| head.iter().position(|h| h == name).unwrap();
    let rows: Vec<csv::StringRecord> = rdr.records().map(Result::unwrap).collect();
    let f = |r: &csv::StringRecord, c: &str| r[col(c)].parse::<f64>().unwrap();
    let shown: Vec<&csv::StringRecord> = rows.iter().filter(|r| &r[col("status")] == "presented").collect();
    let mut e2e: Vec<f64> = shown.iter().map(|r| f(r, "end_to_end_ms")).collect();
    e2e.sort_by(|a, b| a.partial_cmp(b).unwrap());
    let n = e2e.len();
    let median = (n > 0).then(|| if n % 2 == 1 { e2e[n / 2] } else { 0.5 * (e2e[n / 2 - 1] + e2e[n / 2]) });
    let p95 = (n > 0).then(|| e2e[((95 * n + 99) / 100).max(1) - 1]);
    let ts: Vec<f64> = rows.iter().map(|r| f(r, "capture_ts_ms")).collect();
    let span_s = (ts[ts.len() - 1] - ts[0]) / (ts.len() - 1) as f64 * ts.len() as f64 / 1000.0;
    let bytes: f64 = rows.iter().map(|r| f(r, "bytes_sent")).sum();
    let enc: Vec<f64> = rows
        .iter()
        .filter(|r| &r[col("status")] != "skipped_sender")
        .map(|r| f(r, "encode_ms"))
        .collect();
    let avg = |v: &[f64]| (!v.is_empty()).then(|| v.iter().sum::<f64>() / v.len() as f64);
    let dec: Vec<f64> = shown.iter().map(|r| f(r, "decode_ms")).collect();
    Oracle {
        frames: rows.len(),
        presented: shown.len(),
        violations: rows.iter().filter(|r| &r[col("budget_violated")] == "1").count(),
        median,
        p95,
        fps: Some(shown.len() as f64 / span_s),
        mbps: Some(bytes * 8.0 / span_s / 1e6),
        mean_encode: avg(&enc),
        mean_decode: avg(&dec),
    }
}

fn close(a: Option<f64>, b: Option<f64>) -> bool {
    match (a, b) {
        (Some(a), Some(b)) => (a - b).abs() <= 1e-9 * a.abs().max(1.0),
        (None, None) => true,
        _ => false,
    }
}

fn write_config(dir: &Path, extra_source: &str, viewport: &str) -> PathBuf {
    let text = format!(
        r#"
output_dir = "out"
seed = 11

{extra_source}

{viewport}

[[condition]]
name = "raw"
mode = "uncompressed"

[[condition]]
name = "na"
mode = "network_adaptive"
target_mbps = 1.5
channel_mbps = 3.0

[[condition]]
name = "ta"
mode = "tiled_adaptive"
target_mbps = 1.5
channel_mbps = 3.0
"#
    );
    let path = dir.join("experiment.toml");
    std::fs::write(&path, text).unwrap();
    path
}

#[test]
fn simulate_writes_consistent_outputs() {
    let tmp = tempfile::tempdir().unwrap();
    let cfg = write_config(tmp.path(), "[source.synthetic]\npoints = 8000\nframes = 24", "");
    let stdout = ok(&pcstream(&["simulate", s(&cfg)]));
    assert!(stdout.contains(">> ta vs na"), "{stdout}");
    let out = tmp.path().join("out");
    let summary: serde_json::Value =
        serde_json::from_str(&std::fs::read_to_string(out.join("summary.json")).unwrap()).unwrap();
    assert_eq!(summary["schema_version"], 1);
    let conditions = summary["conditions"].as_array().unwrap();
    assert_eq!(conditions.len(), 3);
    for c in conditions {
        let name = c["condition"]["name"].as_str().unwrap();
        let csv_path = out.join(name).join("frames.csv");
        let text = std::fs::read_to_string(&csv_path).unwrap();
        assert_eq!(text.lines().count(), 1 + 24);
        let m = &c["metrics"];
        let o = oracle(&csv_path);
        let get = |k: &str| m[k].as_f64();
        assert_eq!(m["frames"].as_u64().unwrap() as usize, o.frames, "{name}");
        assert_eq!(m["presented"].as_u64().unwrap() as usize, o.presented, "{name}");
        assert_eq!(m["dropped"].as_u64().unwrap() as usize, o.frames - o.presented, "{name}");
        assert_eq!(m["budget_violations"].as_u64().unwrap() as usize, o.violations, "{name}");
        assert!(close(get("median_e2e_ms"), o.median), "{name}");
        assert!(close(get("p95_e2e_ms"), o.p95), "{name}");
        assert!(close(get("achieved_fps"), o.fps), "{name}");
        assert!(close(get("achieved_mbps"), o.mbps), "{name}");
        assert!(close(get("mean_encode_ms"), o.mean_encode), "{name}");
        assert!(close(get("mean_decode_ms"), o.mean_decode), "{name}");
        // 0.1 ms resolution throughout.
        for line in text.lines().skip(1).take(3) {
            let cells: Vec<&str> = line.split(',').collect();
            for i in [1, 4, 8, 9, 10, 11, 12] {
                if !cells[i].is_empty() {
                    assert_eq!(cells[i].split('.').nth(1).map(str::len), Some(1), "{line}");
                }
            }
        }
    }

    let report = ok(&pcstream(&["report", s(&out.join("ta")), s(&out.join("na").join("frames.csv"))]));
    assert!(report.contains("ta vs na"), "{report}");
    let single = ok(&pcstream(&["report", s(&out.join("raw")), "--csv", s(&tmp.path().join("t.csv"))]));
    assert_eq!(single.lines().count(), 2);
    let table = std::fs::read_to_string(tmp.path().join("t.csv")).unwrap();
    assert!(table.lines().nth(1).unwrap().starts_with("raw,uncompressed,24,"));
}

#[test]
fn ply_sequence_and_trace_file() {
    let tmp = tempfile::tempdir().unwrap();
    let seq = tmp.path().join("seq");
    ok(&pcstream(&["synth", "--points", "4000", "--frames", "6", "--out", s(&seq)]));
    let trace = tmp.path().join("trace.csv");
    Orbit::default()
        .to_trace(400.0, 50.0)
        .write(std::fs::File::create(&trace).unwrap())
        .unwrap();
    let cfg = write_config(tmp.path(), "[source]\nply_dir = \"seq\"", "[viewport]\ntrace = \"trace.csv\"");
    ok(&pcstream(&["simulate", s(&cfg)]));
    let rows = std::fs::read_to_string(tmp.path().join("out/ta/frames.csv")).unwrap();
    assert_eq!(rows.lines().count(), 7);

    // A trace shorter than the sequence is refused.
    Orbit::default()
        .to_trace(300.0, 50.0)
        .write(std::fs::File::create(&trace).unwrap())
        .unwrap();
    let out = pcstream(&["simulate", s(&cfg)]);
    assert!(!out.status.success());
    assert!(String::from_utf8_lossy(&out.stderr).contains("ends at 300"));
}

#[test]
fn errors_exit_nonzero_with_context() {
    let tmp = tempfile::tempdir().unwrap();
    let cfg = write_config(tmp.path(), "[source.synthetic]\npoints = 1000\nframes = 2", "");
    let text = std::fs::read_to_string(&cfg).unwrap().replace("channel_mbps = 3.0\n\n", "channel_mbps = 0.0\n\n");
    std::fs::write(&cfg, text).unwrap();
    let out = pcstream(&["simulate", s(&cfg)]);
    assert!(!out.status.success());
    let err = String::from_utf8_lossy(&out.stderr);
    assert!(err.contains("condition #2 (\"na\")") && err.contains("channel_mbps"), "{err}");

    let bad_csv = tmp.path().join("frames.csv");
    std::fs::write(&bad_csv, "a,b\n1,2\n").unwrap();
    let out = pcstream(&["report", s(&bad_csv)]);
    assert!(!out.status.success());
    assert!(String::from_utf8_lossy(&out.stderr).contains("schema mismatch"));
}

#[test]
fn encode_lists_representations() {
    let tmp = tempfile::tempdir().unwrap();
    let out = tmp.path().join("enc");
    let text = ok(&pcstream(&["encode", "--synth", "3000", "--levels", "5:50,7:90", "--out", s(&out)]));
    assert_eq!(text.lines().count(), 2 + 3 * 2 + 2);
    assert!(out.join("tile2_q1.bin").exists() && out.join("full_q0.bin").exists());

    let seq = tmp.path().join("seq");
    ok(&pcstream(&["synth", "--points", "2000", "--frames", "1", "--out", s(&seq)]));
    let text = ok(&pcstream(&["encode", "--input", s(&seq.join("frame_00000.ply"))]));
    assert!(text.starts_with("frame 0: "), "{text}");
}
