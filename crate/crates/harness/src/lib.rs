//! Experiment harness for the `pcstream` pipeline: configuration, viewport traces,
//! sequence I/O, condition runs and reports.
//!
//! frames.csv columns, in order (times are stream-clock ms at 0.1 ms resolution,
//! empty cells mean "not applicable"):
//!
//! | column | meaning |
//! |---|---|
//! | `frame_index` | source frame |
//! | `capture_ts_ms` | capture time |
//! | `mode` | `uncompressed`, `network_adaptive` or `tiled_adaptive` |
//! | `status` | `presented`, `skipped_sender`, `skipped_decoder`, `dropped_sync`, `encode_error`, `decode_error`, `undelivered` |
//! | `encode_ms` | sender compute for the frame |
//! | `bytes_sent` | payload bytes delivered for the frame |
//! | `budget_bytes` | per-frame budget (adaptive modes) |
//! | `budget_violated` | 1 when even the lowest qualities exceed the budget |
//! | `transmit_ms` | first payload send to last payload arrival |
//! | `decode_ms` | first decode start to last decode end |
//! | `sync_wait_ms` | last decode end to presentation |
//! | `present_ts_ms` | presentation time |
//! | `end_to_end_ms` | capture to presentation |
//! | `selection` | `full:<q>` or `<tile>:<q>` joined by `|` |

pub mod config;
pub mod encode;
pub mod metrics;
pub mod report;
pub mod run;
pub mod sequence;
pub mod trace;

pub use config::{ConfigError, ExperimentConfig};
pub use metrics::{FrameRecord, MetricsSummary};
pub use run::run_experiment;
pub use trace::{load_viewport_trace, Orbit, ViewportTrace};
