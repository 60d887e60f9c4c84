//! Playback synchronizer.
//!
//! Collects decoded tiles per frame and releases a frame only once every tile is
//! present. Frames play at `capture_ts + offset`. Until the offset is known
//! (auto mode), frames play as soon as they complete and their capture-to-completion
//! delays are collected; the offset becomes the 95th percentile of those samples.
//!
//! A frame that completes after its deadline plays immediately unless a newer frame
//! is already complete, in which case it is dropped. Presented indices strictly
//! increase; anything at or below the last presented index is discarded.

use std::collections::BTreeMap;
use std::sync::Mutex;

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct PlayoutPolicy {
    /// `None` calibrates from the first `calibration_frames` completed frames.
    pub offset_ms: Option<f64>,
    pub calibration_frames: usize,
}

impl Default for PlayoutPolicy {
    fn default() -> Self {
        Self {
            offset_ms: None,
            calibration_frames: 10,
        }
    }
}

/// Identifies one tile of one frame.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct TileTag {
    pub frame_index: u64,
    pub capture_ts_ms: f64,
    pub tile_id: u8,
    /// Number of tiles that make up the frame.
    pub tile_count: usize,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum IngestOutcome {
    Accepted,
    /// This tile completed its frame.
    Completed,
    /// The tile was already present; ignored.
    Duplicate,
    /// The frame was already presented or dropped; ignored.
    Stale,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Presentation<T> {
    pub frame_index: u64,
    pub capture_ts_ms: f64,
    pub completed_ms: f64,
    pub present_ms: f64,
    /// Ascending by tile id, all from `frame_index`.
    pub tiles: Vec<(u8, T)>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct PollResult<T> {
    pub presented: Vec<Presentation<T>>,
    pub dropped: Vec<u64>,
}

impl<T> Default for PollResult<T> {
    fn default() -> Self {
        Self {
            presented: Vec::new(),
            dropped: Vec::new(),
        }
    }
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq)]
pub struct SyncCounters {
    pub duplicates: u64,
    pub stale: u64,
    pub presented: u64,
    pub dropped: u64,
}

struct Pending<T> {
    capture_ts_ms: f64,
    tile_count: usize,
    tiles: BTreeMap<u8, T>,
    completed_ms: Option<f64>,
}

struct Inner<T> {
    policy: PlayoutPolicy,
    offset_ms: Option<f64>,
    samples: Vec<f64>,
    frames: BTreeMap<u64, Pending<T>>,
    last_presented: Option<u64>,
    counters: SyncCounters,
}

/// Thread-safe; every operation takes the internal lock, so ingests from
/// concurrent decoders are linearizable.
pub struct Synchronizer<T> {
    inner: Mutex<Inner<T>>,
}

/// Nearest-rank 95th percentile.
fn p95(samples: &[f64]) -> f64 {
    let mut s = samples.to_vec();
    s.sort_by(f64::total_cmp);
    let rank = ((0.95 * s.len() as f64).ceil() as usize).max(1);
    s[rank - 1]
}

impl<T> Synchronizer<T> {
    pub fn new(policy: PlayoutPolicy) -> Self {
        Self {
            inner: Mutex::new(Inner {
                offset_ms: policy.offset_ms,
                policy,
                samples: Vec::new(),
                frames: BTreeMap::new(),
                last_presented: None,
                counters: SyncCounters::default(),
            }),
        }
    }

    fn lock(&self) -> std::sync::MutexGuard<'_, Inner<T>> {
        self.inner.lock().unwrap_or_else(|e| e.into_inner())
    }

    pub fn ingest(&self, tag: TileTag, item: T, now_ms: f64) -> IngestOutcome {
        let mut g = self.lock();
        let inner = &mut *g;
        if inner.last_presented.is_some_and(|l| tag.frame_index <= l) {
            inner.counters.stale += 1;
            return IngestOutcome::Stale;
        }
        let pending = inner.frames.entry(tag.frame_index).or_insert_with(|| Pending {
            capture_ts_ms: tag.capture_ts_ms,
            tile_count: tag.tile_count.max(1),
            tiles: BTreeMap::new(),
            completed_ms: None,
        });
        if pending.completed_ms.is_some() || pending.tiles.contains_key(&tag.tile_id) {
            inner.counters.duplicates += 1;
            log::warn!("duplicate tile {} for frame {}", tag.tile_id, tag.frame_index);
            return IngestOutcome::Duplicate;
        }
        pending.tiles.insert(tag.tile_id, item);
        if pending.tiles.len() < pending.tile_count {
            return IngestOutcome::Accepted;
        }
        pending.completed_ms = Some(now_ms);
        if inner.offset_ms.is_none() && inner.samples.len() < inner.policy.calibration_frames {
            inner.samples.push(now_ms - pending.capture_ts_ms);
            if inner.samples.len() == inner.policy.calibration_frames {
                inner.offset_ms = Some(p95(&inner.samples));
            }
        }
        IngestOutcome::Completed
    }

    /// Releases every frame due at `now_ms`.
    pub fn poll(&self, now_ms: f64) -> PollResult<T> {
        let mut g = self.lock();
        let inner = &mut *g;
        let mut out = PollResult::default();
        loop {
            let offset = inner.offset_ms;
            let complete: Vec<u64> = inner
                .frames
                .iter()
                .filter(|(_, p)| p.completed_ms.is_some())
                .map(|(&k, _)| k)
                .collect();
            let Some(&first) = complete.first() else { break };
            let newer_complete = complete.len() > 1;
            let p = &inner.frames[&first];
            let completed = p.completed_ms.expect("complete");
            let release = match offset {
                None => true,
                Some(o) => {
                    let deadline = p.capture_ts_ms + o;
                    if completed <= deadline {
                        now_ms >= deadline
                    } else if newer_complete {
                        inner.frames.remove(&first);
                        out.dropped.push(first);
                        continue;
                    } else {
                        true
                    }
                }
            };
            if !release {
                break;
            }
            let p = inner.frames.remove(&first).expect("present");
            // Older frames can no longer play.
            let older: Vec<u64> = inner.frames.range(..first).map(|(&k, _)| k).collect();
            for k in older {
                inner.frames.remove(&k);
                out.dropped.push(k);
            }
            inner.last_presented = Some(first);
            out.presented.push(Presentation {
                frame_index: first,
                capture_ts_ms: p.capture_ts_ms,
                completed_ms: completed,
                present_ms: now_ms,
                tiles: p.tiles.into_iter().collect(),
            });
        }
        // An incomplete frame past its deadline yields to a newer complete frame.
        if let Some(o) = inner.offset_ms {
            if let Some(newest_complete) = inner
                .frames
                .iter()
                .rev()
                .find(|(_, p)| p.completed_ms.is_some())
                .map(|(&k, _)| k)
            {
                let late: Vec<u64> = inner
                    .frames
                    .range(..newest_complete)
                    .filter(|(_, p)| p.completed_ms.is_none() && now_ms > p.capture_ts_ms + o)
                    .map(|(&k, _)| k)
                    .collect();
                for k in late {
                    inner.frames.remove(&k);
                    out.dropped.push(k);
                }
            }
        }
        out.dropped.sort_unstable();
        inner.counters.presented += out.presented.len() as u64;
        inner.counters.dropped += out.dropped.len() as u64;
        out
    }

    /// Earliest future deadline of a complete, on-time frame; when to poll next.
    pub fn next_deadline(&self) -> Option<f64> {
        let g = self.lock();
        let o = g.offset_ms?;
        g.frames
            .values()
            .filter_map(|p| {
                let d = p.capture_ts_ms + o;
                p.completed_ms.filter(|&c| c <= d).map(|_| d)
            })
            .min_by(f64::total_cmp)
    }

    /// Discards a frame that will never complete; returns whether it was pending.
    pub fn abandon(&self, frame_index: u64) -> bool {
        let mut g = self.lock();
        let removed = g.frames.remove(&frame_index).is_some();
        if removed {
            g.counters.dropped += 1;
        }
        removed
    }

    /// Frames still held (incomplete or waiting for their deadline).
    pub fn pending_frames(&self) -> Vec<u64> {
        self.lock().frames.keys().copied().collect()
    }

    pub fn offset_ms(&self) -> Option<f64> {
        self.lock().offset_ms
    }

    pub fn last_presented(&self) -> Option<u64> {
        self.lock().last_presented
    }

    pub fn counters(&self) -> SyncCounters {
        self.lock().counters
    }
}
