//! Loopback TCP runtime with wall-clock timing.
//!
//! The sender paces captures on the shared stream clock, announces each frame and
//! answers the receiver's requests until it sees `RequestsComplete` for that frame.
//! The receiver decodes the tiles of a frame concurrently and feeds the
//! synchronizer from the decode workers.

use std::collections::BTreeMap;
use std::io::{BufReader, BufWriter, Write};
use std::net::{TcpListener, TcpStream};
use std::time::{Duration, Instant};

use rayon::prelude::*;

use super::endpoint::{ReceiverCore, SenderCore};
use super::simulation::SessionReport;
use super::synchronizer::{PlayoutPolicy, PollResult, Synchronizer, TileTag};
use super::wire::{ControlCode, Message};
use super::{FrameStatus, FrameTimeline, StreamConfig, StreamError};
use crate::adaptation::ViewportProvider;
use crate::pccore::{PointCloudFrame, SensorPose};

fn now_ms(epoch: Instant) -> f64 {
    epoch.elapsed().as_secs_f64() * 1e3
}

fn sleep_until(epoch: Instant, at_ms: f64) {
    let now = now_ms(epoch);
    if at_ms > now {
        std::thread::sleep(Duration::from_secs_f64((at_ms - now) / 1e3));
    }
}

fn expect_message(r: &mut impl std::io::Read) -> Result<Message, StreamError> {
    Message::read_from(r)?.ok_or_else(|| StreamError::Protocol("connection closed mid-session".into()))
}

/// Encode time per sent frame.
#[derive(Debug, Clone, Default)]
pub struct SenderLog {
    pub encode_ms: BTreeMap<u64, f64>,
}

/// Streams `frames` over `stream`, one frame per capture interval.
pub fn run_sender(
    frames: &[PointCloudFrame],
    poses: &[SensorPose<f64>],
    config: &StreamConfig,
    stream: TcpStream,
    epoch: Instant,
) -> Result<SenderLog, StreamError> {
    let sender = SenderCore::new(config.clone(), poses.to_vec())?;
    let mut reader = BufReader::new(stream.try_clone()?);
    let mut writer = BufWriter::new(stream);
    let mut log = SenderLog::default();
    for frame in frames {
        sleep_until(epoch, frame.capture_ts_ms);
        if now_ms(epoch) > frame.capture_ts_ms + config.frame_interval_ms() {
            // Behind schedule: drop this capture in favor of fresher ones.
            continue;
        }
        let enc = match sender.encode(frame) {
            Ok(e) => e,
            Err(e) => {
                log::warn!("{e}");
                continue;
            }
        };
        log.encode_ms.insert(frame.frame_index, enc.encode_ms);
        let announcement = enc.announcement();
        let adaptive = !matches!(announcement, Message::Capture { .. });
        announcement.write_to(&mut writer)?;
        writer.flush()?;
        if !adaptive {
            continue;
        }
        loop {
            match expect_message(&mut reader)? {
                Message::Request {
                    frame_index,
                    tile_id,
                    quality_index,
                } if u64::from(frame_index) == frame.frame_index => {
                    let bitstream = enc
                        .payload(tile_id, usize::from(quality_index))
                        .ok_or_else(|| {
                            StreamError::Protocol(format!("no representation {tile_id}/{quality_index}"))
                        })?
                        .to_vec();
                    Message::Payload { bitstream }.write_to(&mut writer)?;
                }
                Message::Control {
                    code: ControlCode::RequestsComplete,
                    frame_index,
                } if u64::from(frame_index) == frame.frame_index => break,
                other => {
                    return Err(StreamError::Protocol(format!(
                        "sender got unexpected message type {}",
                        other.type_code()
                    )))
                }
            }
        }
        writer.flush()?;
    }
    Message::Control {
        code: ControlCode::EndOfSession,
        frame_index: 0,
    }
    .write_to(&mut writer)?;
    writer.flush()?;
    Ok(log)
}

fn record_poll(timelines: &mut BTreeMap<u64, FrameTimeline>, decode_end: &BTreeMap<u64, f64>, r: PollResult<usize>) {
    for p in r.presented {
        if let Some(tl) = timelines.get_mut(&p.frame_index) {
            tl.status = FrameStatus::Presented;
            tl.present_ts_ms = Some(p.present_ms);
            tl.end_to_end_ms = Some(p.present_ms - p.capture_ts_ms);
            tl.sync_wait_ms = decode_end
                .get(&p.frame_index)
                .map_or(0.0, |e| (p.present_ms - e).max(0.0));
        }
    }
    for idx in r.dropped {
        if let Some(tl) = timelines.get_mut(&idx) {
            if tl.status == FrameStatus::Undelivered {
                tl.status = FrameStatus::DroppedBySynchronizer;
            }
        }
    }
}

/// Receives until the sender ends the session; returns one record per announced frame.
pub fn run_receiver<V: ViewportProvider + Sync + ?Sized>(
    config: &StreamConfig,
    stream: TcpStream,
    viewport: &V,
    epoch: Instant,
) -> Result<Vec<FrameTimeline>, StreamError> {
    let receiver = ReceiverCore::new(config.clone())?;
    let mut reader = BufReader::new(stream.try_clone()?);
    let mut writer = BufWriter::new(stream);
    let sync: Synchronizer<usize> = Synchronizer::new(PlayoutPolicy {
        offset_ms: config.playout_offset_ms,
        calibration_frames: config.calibration_frames,
    });
    let mut timelines: BTreeMap<u64, FrameTimeline> = BTreeMap::new();
    let mut decode_end: BTreeMap<u64, f64> = BTreeMap::new();
    loop {
        let arrived = now_ms(epoch);
        match expect_message(&mut reader)? {
            Message::Capture {
                frame_index,
                capture_ts_ms,
                points,
                ..
            } => {
                let idx = u64::from(frame_index);
                let mut tl = FrameTimeline::new(idx, capture_ts_ms);
                tl.bytes_sent = points.len() as u64;
                let start = now_ms(epoch);
                tl.transmit_ms = (start - arrived).max(0.0);
                match receiver.decode_capture(frame_index, &points) {
                    Ok(unit) => {
                        let end = now_ms(epoch);
                        tl.decode_ms = end - start;
                        decode_end.insert(idx, end);
                        timelines.insert(idx, tl);
                        let tag = TileTag {
                            frame_index: idx,
                            capture_ts_ms,
                            tile_id: 0,
                            tile_count: 1,
                        };
                        sync.ingest(tag, unit.points.len(), end);
                    }
                    Err(e) => {
                        log::warn!("{e}");
                        tl.status = FrameStatus::DecodeError;
                        timelines.insert(idx, tl);
                    }
                }
            }
            Message::TileMetadata {
                frame_index,
                capture_ts_ms,
                metadata,
            } => {
                let idx = u64::from(frame_index);
                let mut tl = FrameTimeline::new(idx, capture_ts_ms);
                let sel = receiver.select(&metadata, &viewport.viewport_at(arrived))?;
                tl.selection = sel.summary.clone();
                tl.budget_bytes = Some(sel.budget_bytes);
                tl.budget_violated = sel.budget_violated;
                let sent = now_ms(epoch);
                for &(tile_id, q) in &sel.requests {
                    Message::Request {
                        frame_index,
                        tile_id,
                        quality_index: q as u8,
                    }
                    .write_to(&mut writer)?;
                }
                Message::Control {
                    code: ControlCode::RequestsComplete,
                    frame_index,
                }
                .write_to(&mut writer)?;
                writer.flush()?;
                let mut payloads = Vec::with_capacity(sel.requests.len());
                for _ in &sel.requests {
                    match expect_message(&mut reader)? {
                        Message::Payload { bitstream } => payloads.push(bitstream),
                        other => {
                            return Err(StreamError::Protocol(format!(
                                "receiver expected a payload, got type {}",
                                other.type_code()
                            )))
                        }
                    }
                }
                let received = now_ms(epoch);
                tl.transmit_ms = received - sent;
                tl.bytes_sent = payloads.iter().map(|p| p.len() as u64).sum();
                let tile_count = metadata.tile_count();
                let outcomes: Vec<bool> = payloads
                    .par_iter()
                    .map(|b| match receiver.decode_payload(b, tile_count) {
                        Ok(unit) if unit.frame_index == idx => {
                            let tag = TileTag {
                                frame_index: idx,
                                capture_ts_ms,
                                tile_id: unit.tile_id,
                                tile_count,
                            };
                            if let super::TimingModel::Measured {
                                top_quality_decode_penalty_ms,
                            } = config.timing
                            {
                                if top_quality_decode_penalty_ms > 0.0 {
                                    // The penalty is simulated work; wait out the unmeasured part.
                                    let elapsed = now_ms(epoch) - received;
                                    if unit.decode_ms > elapsed {
                                        std::thread::sleep(Duration::from_secs_f64((unit.decode_ms - elapsed) / 1e3));
                                    }
                                }
                            }
                            sync.ingest(tag, unit.points.len(), now_ms(epoch));
                            true
                        }
                        Ok(_) => false,
                        Err(e) => {
                            log::warn!("{e}");
                            false
                        }
                    })
                    .collect();
                let end = now_ms(epoch);
                tl.decode_ms = end - received;
                decode_end.insert(idx, end);
                if outcomes.iter().any(|ok| !ok) {
                    tl.status = FrameStatus::DecodeError;
                    sync.abandon(idx);
                }
                timelines.insert(idx, tl);
            }
            Message::Control {
                code: ControlCode::EndOfSession,
                ..
            } => break,
            other => {
                return Err(StreamError::Protocol(format!(
                    "receiver got unexpected message type {}",
                    other.type_code()
                )))
            }
        }
        record_poll(&mut timelines, &decode_end, sync.poll(now_ms(epoch)));
    }
    while let Some(d) = sync.next_deadline() {
        sleep_until(epoch, d);
        record_poll(&mut timelines, &decode_end, sync.poll(now_ms(epoch).max(d)));
    }
    record_poll(&mut timelines, &decode_end, sync.poll(now_ms(epoch)));
    Ok(timelines.into_values().collect())
}

/// Runs sender and receiver on two threads joined by a loopback TCP connection.
pub fn run_loopback_session<V: ViewportProvider + Sync + ?Sized>(
    frames: &[PointCloudFrame],
    poses: &[SensorPose<f64>],
    config: &StreamConfig,
    viewport: &V,
) -> Result<SessionReport, StreamError> {
    config.validate()?;
    let listener = TcpListener::bind(("127.0.0.1", 0))?;
    let addr = listener.local_addr()?;
    let epoch = Instant::now();
    let (sent, received) = std::thread::scope(|scope| {
        let sender = scope.spawn(move || -> Result<SenderLog, StreamError> {
            let stream = TcpStream::connect(addr)?;
            stream.set_nodelay(true)?;
            run_sender(frames, poses, config, stream, epoch)
        });
        let received = listener
            .accept()
            .map_err(StreamError::from)
            .and_then(|(stream, _)| {
                stream.set_nodelay(true)?;
                run_receiver(config, stream, viewport, epoch)
            });
        let sent = sender
            .join()
            .unwrap_or_else(|_| Err(StreamError::Protocol("sender thread panicked".into())));
        (sent, received)
    });
    let sent = sent?;
    let received = received?;
    let mut by_index: BTreeMap<u64, FrameTimeline> =
        received.into_iter().map(|t| (t.frame_index, t)).collect();
    let timelines = frames
        .iter()
        .map(|f| {
            let mut tl = by_index
                .remove(&f.frame_index)
                .unwrap_or_else(|| {
                    let mut t = FrameTimeline::new(f.frame_index, f.capture_ts_ms);
                    t.status = FrameStatus::SkippedAtSender;
                    t
                });
            tl.encode_ms = sent.encode_ms.get(&f.frame_index).copied().unwrap_or(0.0);
            tl
        })
        .collect();
    Ok(SessionReport {
        mode: config.mode,
        timelines,
        playout_offset_ms: None,
        sync: Default::default(),
        duration_ms: frames.len() as f64 * config.frame_interval_ms(),
        forward_bytes: 0,
        reverse_bytes: 0,
    })
}
