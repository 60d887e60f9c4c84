//! Discrete-event session over simulated links.
//!
//! Codec work is real (sizes and decoded points come from the actual codec); its
//! duration comes from the configured [`TimingModel`](super::TimingModel). Events
//! at equal times run in scheduling order, so a modeled session is reproducible.
//!
//! Stages:
//! * sender encode stage, one frame at a time; a capture arriving while it is busy
//!   waits, and a newer capture replaces a waiting one;
//! * forward and reverse links, each FIFO;
//! * receiver decode pool (see `StreamConfig::effective_decode_workers`); when jobs of several frames are
//!   queued, only the newest frame's jobs are kept;
//! * the synchronizer, polled on every completion and at every pending deadline.

use std::cmp::Ordering;
use std::collections::{BTreeMap, BinaryHeap, VecDeque};

use super::endpoint::{EncodedFrame, ReceiverCore, SenderCore};
use super::synchronizer::{PlayoutPolicy, PollResult, SyncCounters, Synchronizer, TileTag};
use super::transport::SimulatedLink;
use super::wire::Message;
use super::{ConfigError, FrameStatus, FrameTimeline, Mode, SelectionSummary, StreamConfig, StreamError};
use crate::adaptation::ViewportProvider;
use crate::pccore::{PointCloudFrame, SensorPose};

#[derive(Debug, Clone)]
pub struct SessionReport {
    pub mode: Mode,
    /// One record per source frame, in source order.
    pub timelines: Vec<FrameTimeline>,
    pub playout_offset_ms: Option<f64>,
    pub sync: SyncCounters,
    /// Source duration: frame count over fps.
    pub duration_ms: f64,
    pub forward_bytes: u64,
    pub reverse_bytes: u64,
}

impl SessionReport {
    pub fn presented_count(&self) -> usize {
        self.timelines.iter().filter(|t| t.presented()).count()
    }

    pub fn achieved_fps(&self) -> f64 {
        self.presented_count() as f64 / (self.duration_ms / 1000.0)
    }
}

enum Event {
    Capture(usize),
    EncodeDone,
    Deliver { pos: usize, message: Message },
    RequestArrives { pos: usize, tile_id: u8, quality_index: usize },
    DecodeDone { pos: usize, tile_id: u8, points: Option<usize> },
    Poll,
}

struct Scheduled {
    at: f64,
    seq: u64,
    event: Event,
}

impl PartialEq for Scheduled {
    fn eq(&self, other: &Self) -> bool {
        self.cmp(other) == Ordering::Equal
    }
}
impl Eq for Scheduled {}
impl PartialOrd for Scheduled {
    fn partial_cmp(&self, other: &Self) -> Option<Ordering> {
        Some(self.cmp(other))
    }
}
impl Ord for Scheduled {
    /// Reversed: the heap pops the earliest event.
    fn cmp(&self, other: &Self) -> Ordering {
        other.at.total_cmp(&self.at).then(other.seq.cmp(&self.seq))
    }
}

enum JobKind {
    Capture(Vec<u8>),
    Bitstream(Vec<u8>),
}

struct DecodeJob {
    pos: usize,
    kind: JobKind,
}

#[derive(Default, Clone, Copy)]
struct Span {
    start: Option<f64>,
    end: Option<f64>,
}

impl Span {
    fn open(&mut self, t: f64) {
        self.start = Some(self.start.map_or(t, |s| s.min(t)));
    }
    fn close(&mut self, t: f64) {
        self.end = Some(self.end.map_or(t, |e| e.max(t)));
    }
    fn len(&self) -> f64 {
        match (self.start, self.end) {
            (Some(s), Some(e)) => (e - s).max(0.0),
            _ => 0.0,
        }
    }
}

struct Sim<'a, V: ?Sized> {
    frames: &'a [PointCloudFrame],
    config: &'a StreamConfig,
    viewport: &'a V,
    sender: SenderCore,
    receiver: ReceiverCore,
    queue: BinaryHeap<Scheduled>,
    seq: u64,
    forward: SimulatedLink,
    reverse: SimulatedLink,
    encoding: Option<(usize, EncodedFrame)>,
    waiting_capture: Option<usize>,
    served: BTreeMap<usize, (EncodedFrame, usize)>,
    tile_counts: BTreeMap<usize, usize>,
    decode_queue: VecDeque<DecodeJob>,
    free_decoders: usize,
    sync: Synchronizer<usize>,
    by_index: BTreeMap<u64, usize>,
    timelines: Vec<FrameTimeline>,
    transmit: Vec<Span>,
    decode: Vec<Span>,
}

impl<'a, V: ViewportProvider + ?Sized> Sim<'a, V> {
    fn schedule(&mut self, at: f64, event: Event) {
        self.seq += 1;
        self.queue.push(Scheduled { at, seq: self.seq, event });
    }

    fn run(&mut self) -> Result<(), StreamError> {
        for pos in 0..self.frames.len() {
            self.schedule(self.frames[pos].capture_ts_ms, Event::Capture(pos));
        }
        while let Some(Scheduled { at, event, .. }) = self.queue.pop() {
            match event {
                Event::Capture(pos) => self.on_capture(pos, at),
                Event::EncodeDone => self.on_encode_done(at),
                Event::Deliver { pos, message } => self.on_deliver(pos, message, at)?,
                Event::RequestArrives {
                    pos,
                    tile_id,
                    quality_index,
                } => self.on_request(pos, tile_id, quality_index, at)?,
                Event::DecodeDone { pos, tile_id, points } => self.on_decode_done(pos, tile_id, points, at),
                Event::Poll => self.poll(at),
            }
        }
        Ok(())
    }

    fn on_capture(&mut self, pos: usize, t: f64) {
        if self.encoding.is_some() {
            if let Some(old) = self.waiting_capture.replace(pos) {
                self.timelines[old].status = FrameStatus::SkippedAtSender;
            }
        } else {
            self.start_encode(pos, t);
        }
    }

    fn start_encode(&mut self, pos: usize, t: f64) {
        match self.sender.encode(&self.frames[pos]) {
            Ok(enc) => {
                self.timelines[pos].encode_ms = enc.encode_ms;
                self.schedule(t + enc.encode_ms, Event::EncodeDone);
                self.encoding = Some((pos, enc));
            }
            Err(e) => {
                log::warn!("encode failed: {e}");
                self.timelines[pos].status = FrameStatus::EncodeError;
            }
        }
    }

    fn on_encode_done(&mut self, t: f64) {
        let (pos, enc) = self.encoding.take().expect("encode in progress");
        let message = enc.announcement();
        let delivery = self.forward.send(t, message.wire_len());
        if let Message::Capture { points, .. } = &message {
            self.timelines[pos].bytes_sent = points.len() as u64;
            self.transmit[pos].open(t);
            self.transmit[pos].close(delivery);
        } else {
            self.served.insert(pos, (enc, 0));
        }
        self.schedule(delivery, Event::Deliver { pos, message });
        if let Some(next) = self.waiting_capture.take() {
            self.start_encode(next, t);
        }
    }

    fn on_deliver(&mut self, pos: usize, message: Message, t: f64) -> Result<(), StreamError> {
        match message {
            Message::Capture { points, .. } => {
                self.tile_counts.insert(pos, 1);
                self.decode_queue.push_back(DecodeJob {
                    pos,
                    kind: JobKind::Capture(points),
                });
                self.dispatch(t);
            }
            Message::TileMetadata { metadata, .. } => {
                let viewport = self.viewport.viewport_at(t);
                let sel = self.receiver.select(&metadata, &viewport)?;
                let tl = &mut self.timelines[pos];
                tl.selection = sel.summary.clone();
                tl.budget_bytes = Some(sel.budget_bytes);
                tl.budget_violated = sel.budget_violated;
                self.tile_counts.insert(pos, metadata.tile_count());
                if let Some(entry) = self.served.get_mut(&pos) {
                    entry.1 = sel.requests.len();
                }
                let frame_index = self.frames[pos].frame_index as u32;
                for (tile_id, quality_index) in sel.requests {
                    let req = Message::Request {
                        frame_index,
                        tile_id,
                        quality_index: quality_index as u8,
                    };
                    let at = self.reverse.send(t, req.wire_len());
                    self.schedule(
                        at,
                        Event::RequestArrives {
                            pos,
                            tile_id,
                            quality_index,
                        },
                    );
                }
            }
            Message::Payload { bitstream } => {
                self.decode_queue.push_back(DecodeJob {
                    pos,
                    kind: JobKind::Bitstream(bitstream),
                });
                self.dispatch(t);
            }
            other => {
                return Err(StreamError::Protocol(format!(
                    "unexpected message type {} on the forward link",
                    other.type_code()
                )))
            }
        }
        Ok(())
    }

    fn on_request(&mut self, pos: usize, tile_id: u8, quality_index: usize, t: f64) -> Result<(), StreamError> {
        let (enc, remaining) = self
            .served
            .get_mut(&pos)
            .ok_or_else(|| StreamError::Protocol(format!("request for unknown frame position {pos}")))?;
        let bitstream = enc
            .payload(tile_id, quality_index)
            .ok_or_else(|| {
                StreamError::Protocol(format!("no representation for tile {tile_id} quality {quality_index}"))
            })?
            .to_vec();
        *remaining = remaining.saturating_sub(1);
        if *remaining == 0 {
            self.served.remove(&pos);
        }
        self.timelines[pos].bytes_sent += bitstream.len() as u64;
        let message = Message::Payload { bitstream };
        let delivery = self.forward.send(t, message.wire_len());
        self.transmit[pos].open(t);
        self.transmit[pos].close(delivery);
        self.schedule(delivery, Event::Deliver { pos, message });
        Ok(())
    }

    fn dispatch(&mut self, t: f64) {
        while self.free_decoders > 0 {
            let Some(newest) = self.decode_queue.iter().map(|j| j.pos).max() else { return };
            let last = self.sync.last_presented();
            let mut dropped = Vec::new();
            self.decode_queue.retain(|j| {
                let obsolete = j.pos < newest || last.is_some_and(|l| self.frames[j.pos].frame_index <= l);
                if obsolete {
                    dropped.push(j.pos);
                }
                !obsolete
            });
            for pos in dropped {
                if self.timelines[pos].status == FrameStatus::Undelivered {
                    self.timelines[pos].status = FrameStatus::SkippedAtDecoder;
                }
                self.sync.abandon(self.frames[pos].frame_index);
            }
            let Some(job) = self.decode_queue.pop_front() else { return };
            let pos = job.pos;
            let tile_count = self.tile_counts.get(&pos).copied().unwrap_or(1);
            let decoded = match &job.kind {
                JobKind::Capture(points) => self
                    .receiver
                    .decode_capture(self.frames[pos].frame_index as u32, points)
                    .map_err(|e| e.to_string()),
                JobKind::Bitstream(b) => self.receiver.decode_payload(b, tile_count).map_err(|e| e.to_string()),
            };
            self.free_decoders -= 1;
            self.decode[pos].open(t);
            match decoded {
                Ok(unit) => self.schedule(
                    t + unit.decode_ms,
                    Event::DecodeDone {
                        pos,
                        tile_id: unit.tile_id,
                        points: Some(unit.points.len()),
                    },
                ),
                Err(e) => {
                    log::warn!("decode failed for frame {}: {e}", self.frames[pos].frame_index);
                    self.schedule(t, Event::DecodeDone { pos, tile_id: 0, points: None });
                }
            }
        }
    }

    fn on_decode_done(&mut self, pos: usize, tile_id: u8, points: Option<usize>, t: f64) {
        self.free_decoders += 1;
        self.decode[pos].close(t);
        let frame = &self.frames[pos];
        match points {
            Some(n) => {
                let tag = TileTag {
                    frame_index: frame.frame_index,
                    capture_ts_ms: frame.capture_ts_ms,
                    tile_id,
                    tile_count: self.tile_counts.get(&pos).copied().unwrap_or(1),
                };
                self.sync.ingest(tag, n, t);
            }
            None => {
                self.timelines[pos].status = FrameStatus::DecodeError;
                self.sync.abandon(frame.frame_index);
            }
        }
        self.poll(t);
        self.dispatch(t);
    }

    fn poll(&mut self, t: f64) {
        let PollResult { presented, dropped } = self.sync.poll(t);
        for p in presented {
            let pos = self.by_index[&p.frame_index];
            let decode_end = self.decode[pos].end.unwrap_or(t);
            let tl = &mut self.timelines[pos];
            tl.status = FrameStatus::Presented;
            tl.present_ts_ms = Some(t);
            tl.end_to_end_ms = Some(t - tl.capture_ts_ms);
            tl.sync_wait_ms = (t - decode_end).max(0.0);
        }
        for idx in dropped {
            let pos = self.by_index[&idx];
            if self.timelines[pos].status == FrameStatus::Undelivered {
                self.timelines[pos].status = FrameStatus::DroppedBySynchronizer;
            }
        }
        if let Some(d) = self.sync.next_deadline() {
            if d > t {
                self.schedule(d, Event::Poll);
            }
        }
    }
}

/// Runs one streaming condition over `frames`.
pub fn simulate_session<V: ViewportProvider + ?Sized>(
    frames: &[PointCloudFrame],
    poses: &[SensorPose<f64>],
    config: &StreamConfig,
    viewport: &V,
) -> Result<SessionReport, StreamError> {
    config.validate()?;
    if !(config.channel.bandwidth_bps > 0.0) {
        return Err(ConfigError::NonPositiveBandwidth(config.channel.bandwidth_bps).into());
    }
    if frames.windows(2).any(|w| w[0].frame_index >= w[1].frame_index) {
        return Err(StreamError::Protocol("frame indices must strictly increase".into()));
    }
    let n = frames.len();
    let mut sim = Sim {
        frames,
        config,
        viewport,
        sender: SenderCore::new(config.clone(), poses.to_vec())?,
        receiver: ReceiverCore::new(config.clone())?,
        queue: BinaryHeap::new(),
        seq: 0,
        forward: SimulatedLink::new(config.channel),
        reverse: SimulatedLink::new(config.channel),
        encoding: None,
        waiting_capture: None,
        served: BTreeMap::new(),
        tile_counts: BTreeMap::new(),
        decode_queue: VecDeque::new(),
        free_decoders: config.effective_decode_workers(),
        sync: Synchronizer::new(PlayoutPolicy {
            offset_ms: config.playout_offset_ms,
            calibration_frames: config.calibration_frames,
        }),
        by_index: frames.iter().enumerate().map(|(i, f)| (f.frame_index, i)).collect(),
        timelines: frames
            .iter()
            .map(|f| FrameTimeline::new(f.frame_index, f.capture_ts_ms))
            .collect(),
        transmit: vec![Span::default(); n],
        decode: vec![Span::default(); n],
    };
    sim.run()?;
    for pos in 0..n {
        let tl = &mut sim.timelines[pos];
        tl.transmit_ms = sim.transmit[pos].len();
        tl.decode_ms = sim.decode[pos].len();
        if sim.config.mode == Mode::Uncompressed {
            tl.selection = SelectionSummary::None;
        }
    }
    Ok(SessionReport {
        mode: config.mode,
        playout_offset_ms: sim.sync.offset_ms(),
        sync: sim.sync.counters(),
        duration_ms: n as f64 * config.frame_interval_ms(),
        forward_bytes: sim.forward.bytes_carried(),
        reverse_bytes: sim.reverse.bytes_carried(),
        timelines: sim.timelines,
    })
}
