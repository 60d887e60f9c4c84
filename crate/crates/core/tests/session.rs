use pcstream::adaptation::{Viewport, ViewportProvider};
use pcstream::pccore::{synth_capture, PointCloudFrame, SynthConfig, UNCOMPRESSED_POINT_BYTES};
use pcstream::stream::{
    run_loopback_session, simulate_session, ChannelModel, FrameStatus, Mode, SelectionSummary, SessionReport,
    StreamConfig, TimingModel, TransportMode,
};
use pcstream::Vec3d;

struct Fixed;

impl ViewportProvider for Fixed {
    fn viewport_at(&self, t: f64) -> Viewport<f64> {
        let pos = Vec3d::new(0.0, 1.6, 1.5);
        Viewport::looking(pos, Vec3d::new(0.0, 1.0, 0.0) - pos, t).unwrap()
    }
}

fn capture(points: usize, frames: usize) -> (Vec<PointCloudFrame>, SynthConfig) {
    let cfg = SynthConfig {
        point_count: points,
        frame_count: frames,
        ..SynthConfig::default()
    };
    (synth_capture(&cfg).unwrap(), cfg)
}

fn config(mode: Mode, mbps: f64, link_mbps: f64) -> StreamConfig {
    StreamConfig {
        mode,
        target_bitrate_bps: mbps * 1e6,
        channel: ChannelModel {
            bandwidth_bps: link_mbps * 1e6,
            propagation_delay_ms: 2.0,
            mode: TransportMode::Simulated,
        },
        ..StreamConfig::default()
    }
}

fn run(frames: &[PointCloudFrame], synth: &SynthConfig, c: &StreamConfig) -> SessionReport {
    simulate_session(frames, &synth.sensor_poses, c, &Fixed).unwrap()
}

fn requests(s: &SelectionSummary) -> usize {
    match s {
        SelectionSummary::None => 0,
        SelectionSummary::Full { .. } => 1,
        SelectionSummary::Tiles(t) => t.len(),
    }
}

#[test]
fn modeled_sessions_are_reproducible() {
    let (frames, synth) = capture(20_000, 20);
    for mode in [Mode::Uncompressed, Mode::NetworkAdaptive, Mode::TiledAdaptive] {
        let c = config(mode, 2.0, 5.0);
        let a = run(&frames, &synth, &c);
        let b = run(&frames, &synth, &c);
        assert_eq!(a.timelines, b.timelines, "{}", mode.label());
        assert_eq!((a.forward_bytes, a.reverse_bytes), (b.forward_bytes, b.reverse_bytes));
    }
}

#[test]
fn adaptive_frames_respect_the_budget() {
    let (frames, synth) = capture(30_000, 20);
    for mode in [Mode::NetworkAdaptive, Mode::TiledAdaptive] {
        for mbps in [0.5, 2.0, 7.0] {
            let c = config(mode, mbps, 100.0);
            let budget = c.budget_bytes().unwrap();
            let r = run(&frames, &synth, &c);
            for t in &r.timelines {
                assert_eq!(t.budget_bytes, Some(budget));
                if !t.budget_violated {
                    assert!(t.bytes_sent <= budget, "{} {mbps}: {} > {budget}", mode.label(), t.bytes_sent);
                }
            }
        }
    }
}

#[test]
fn uncompressed_sends_sixteen_bytes_per_point() {
    let (frames, synth) = capture(5_000, 10);
    let r = run(&frames, &synth, &config(Mode::Uncompressed, 1.0, 1000.0));
    for (t, f) in r.timelines.iter().zip(&frames) {
        assert_eq!(t.bytes_sent as usize, f.len() * UNCOMPRESSED_POINT_BYTES);
        assert_eq!(t.status, FrameStatus::Presented);
        assert_eq!(t.budget_bytes, None);
    }
    // Capture message framing: length, type, frame, timestamp, sensor count, point count.
    let framing = 4 + 1 + 4 + 8 + 1 + 4;
    let expected: u64 = r.timelines.iter().map(|t| t.bytes_sent + framing).sum();
    assert_eq!(r.forward_bytes, expected);
    assert_eq!(r.reverse_bytes, 0);
}

#[test]
fn link_accounting_matches_the_protocol() {
    let (frames, synth) = capture(20_000, 15);
    for (mode, tiles) in [(Mode::NetworkAdaptive, 1), (Mode::TiledAdaptive, 3)] {
        let r = run(&frames, &synth, &config(mode, 3.0, 50.0));
        assert!(r.timelines.iter().all(|t| t.status != FrameStatus::SkippedAtSender));
        let reqs: usize = r.timelines.iter().map(|t| requests(&t.selection)).sum();
        assert_eq!(reqs, frames.len() * tiles);
        // Request: length, type, frame u32, tile u8, quality u8.
        assert_eq!(r.reverse_bytes as usize, reqs * (4 + 1 + 4 + 1 + 1));
        // Metadata: framing, frame, timestamp, tile count, then per tile id,
        // two f32x3 vectors, level count and six bytes per level.
        let metadata = 4 + 1 + 4 + 8 + 1 + tiles * (1 + 24 + 1 + 6 * 3);
        let payload: u64 = r.timelines.iter().map(|t| t.bytes_sent).sum();
        let expected = payload as usize + reqs * 5 + frames.len() * metadata;
        assert_eq!(r.forward_bytes as usize, expected, "{}", mode.label());
    }
}

#[test]
fn presentations_move_forward_in_time() {
    let (frames, synth) = capture(20_000, 30);
    let mut c = config(Mode::TiledAdaptive, 3.0, 4.0);
    c.playout_offset_ms = Some(30.0);
    let r = run(&frames, &synth, &c);
    let shown: Vec<(u64, f64)> = r
        .timelines
        .iter()
        .filter_map(|t| t.present_ts_ms.map(|p| (t.frame_index, p)))
        .collect();
    assert!(!shown.is_empty());
    for w in shown.windows(2) {
        assert!(w[0].0 < w[1].0 && w[0].1 <= w[1].1, "{w:?}");
    }
    for t in r.timelines.iter().filter(|t| t.presented()) {
        let e2e = t.end_to_end_ms.unwrap();
        assert!(e2e >= 30.0 - 1e-9, "frame {} presented before its deadline", t.frame_index);
    }
}

#[test]
fn slow_top_level_decode_throttles_untiled_frames() {
    let (frames, synth) = capture(20_000, 45);
    let rate = |mode: Mode| {
        let mut c = config(mode, 200.0, 1000.0);
        c.timing = TimingModel::Modeled(pcstream::stream::CostModel {
            top_quality_decode_penalty_ms: 100.0,
            ..Default::default()
        });
        run(&frames, &synth, &c).achieved_fps()
    };
    let (na, ta) = (rate(Mode::NetworkAdaptive), rate(Mode::TiledAdaptive));
    assert!(na < 14.0, "na {na}");
    assert!(ta >= 14.0, "ta {ta}");
}

#[test]
fn loopback_socket_session() {
    let (frames, synth) = capture(5_000, 8);
    let mut c = config(Mode::TiledAdaptive, 1.0, 1.0);
    c.channel.mode = TransportMode::Socket;
    c.timing = TimingModel::Measured {
        top_quality_decode_penalty_ms: 0.0,
    };
    let r = run_loopback_session(&frames, &synth.sensor_poses, &c, &Fixed).unwrap();
    assert_eq!(r.timelines.len(), frames.len());
    let budget = c.budget_bytes().unwrap();
    let presented: Vec<_> = r.timelines.iter().filter(|t| t.presented()).collect();
    assert!(presented.len() >= frames.len() / 2, "{:?}", r.timelines);
    for t in &presented {
        assert!(t.end_to_end_ms.unwrap() > 0.0);
        assert_eq!(requests(&t.selection), 3);
        if !t.budget_violated {
            assert!(t.bytes_sent <= budget);
        }
    }
}
