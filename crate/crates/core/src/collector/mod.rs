//! Synchronized acquisition of mixed-rate devices at a target tick rate.
//!
//! Two schedulers share one frame-assembly path. Serial mode reads every
//! device inside the tick, so tick work includes every device's latency.
//! Parallel mode polls each device at its native rate on its own task into a
//! per-stream buffer, and the tick only associates buffered samples with the
//! tick timestamp. Tick timestamps are scheduled boundaries; when tick work
//! overruns the period the next tick starts at once and the schedule is
//! re-anchored there (no catch-up bursts).

mod session;

use std::borrow::Borrow;
use std::collections::BTreeMap;

use serde::{Deserialize, Serialize};
use thiserror::Error;

pub use session::{run_parallel, run_serial, DirectObserver, Observation, ObservationSource, Session, SessionObserver};

use crate::time::Timestamp;
use crate::types::{Frame, Sample};

#[derive(Debug, Error, PartialEq)]
pub enum CollectorError {
    #[error("samples out of order at index {index}")]
    Unordered { index: usize },
    #[error("effective rate needs at least 2 frames, got {0}")]
    TooFewFrames(usize),
    #[error("frames do not advance in time")]
    ZeroSpan,
    #[error("invalid collector config: {0}")]
    Config(String),
    #[error("collector mode is {found:?}, this entry point runs {expected:?}")]
    WrongMode { expected: Mode, found: Mode },
    #[error("collector task panicked")]
    TaskPanicked,
}

/// Index of the last sample with `capture_ts <= t`. Assumes `samples` is
/// ordered by capture time.
pub fn latest_index_at<S: Borrow<Sample>>(samples: &[S], t: Timestamp) -> Option<usize> {
    let n = samples.partition_point(|s| s.borrow().capture_ts <= t);
    n.checked_sub(1)
}

/// Greatest index whose `capture_ts <= tick_ts`, or `None` when every
/// sample is later than the tick. Rejects unordered input.
pub fn associate_latest<S: Borrow<Sample>>(samples: &[S], tick_ts: Timestamp) -> Result<Option<usize>, CollectorError> {
    if let Some(i) = samples
        .windows(2)
        .position(|w| w[1].borrow().capture_ts < w[0].borrow().capture_ts)
    {
        return Err(CollectorError::Unordered { index: i + 1 });
    }
    Ok(latest_index_at(samples, tick_ts))
}

/// `(N - 1) / (last tick - first tick)` in Hz.
pub fn effective_rate(frames: &[Frame]) -> Result<f64, CollectorError> {
    let ticks: Vec<Timestamp> = frames.iter().map(|f| f.tick_ts).collect();
    rate_of_ticks(&ticks)
}

pub(crate) fn rate_of_ticks(ticks: &[Timestamp]) -> Result<f64, CollectorError> {
    if ticks.len() < 2 {
        return Err(CollectorError::TooFewFrames(ticks.len()));
    }
    let span = ticks[ticks.len() - 1].saturating_since(ticks[0]);
    if span == 0 {
        return Err(CollectorError::ZeroSpan);
    }
    Ok((ticks.len() - 1) as f64 / (span as f64 * 1e-9))
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Mode {
    Serial,
    Parallel,
}

impl std::str::FromStr for Mode {
    type Err = String;
    fn from_str(s: &str) -> Result<Self, String> {
        match s {
            "serial" => Ok(Mode::Serial),
            "parallel" => Ok(Mode::Parallel),
            other => Err(format!("unknown mode '{other}' (serial|parallel)")),
        }
    }
}

impl std::fmt::Display for Mode {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(match self {
            Mode::Serial => "serial",
            Mode::Parallel => "parallel",
        })
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum StopCondition {
    DurationS(f64),
    FrameCount(u64),
    /// Run until [`Session::finish`].
    Manual,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CollectorConfig {
    pub target_rate_hz: f64,
    pub mode: Mode,
    pub stop: StopCondition,
    /// Per-stream staleness threshold for the degraded flag. Streams not
    /// listed use two native periods of the slowest device.
    #[serde(default)]
    pub staleness_limit_ns: BTreeMap<String, u64>,
    #[serde(default)]
    pub episode_id: Option<String>,
    #[serde(default)]
    pub task: String,
}

impl CollectorConfig {
    pub fn new(target_rate_hz: f64, mode: Mode, stop: StopCondition) -> Self {
        CollectorConfig {
            target_rate_hz,
            mode,
            stop,
            staleness_limit_ns: BTreeMap::new(),
            episode_id: None,
            task: String::new(),
        }
    }

    pub fn for_duration(target_rate_hz: f64, mode: Mode, secs: f64) -> Self {
        Self::new(target_rate_hz, mode, StopCondition::DurationS(secs))
    }

    pub fn with_task(mut self, task: impl Into<String>) -> Self {
        self.task = task.into();
        self
    }

    pub fn with_episode_id(mut self, id: impl Into<String>) -> Self {
        self.episode_id = Some(id.into());
        self
    }

    pub fn validate(&self) -> Result<(), CollectorError> {
        if !(self.target_rate_hz > 0.0 && self.target_rate_hz.is_finite()) {
            return Err(CollectorError::Config("target_rate_hz must be > 0".into()));
        }
        match self.stop {
            StopCondition::DurationS(d) if !(d > 0.0 && d.is_finite()) => {
                Err(CollectorError::Config("duration must be > 0".into()))
            }
            StopCondition::FrameCount(0) => Err(CollectorError::Config("frame_count must be > 0".into())),
            _ => Ok(()),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Default, Serialize, Deserialize)]
pub struct StalenessStats {
    pub stale_min_ns: u64,
    pub stale_mean_ns: f64,
    pub stale_max_ns: u64,
    /// Frames in which this stream's slot was filled.
    pub filled: u64,
    /// Records captured for this stream.
    pub records: u64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CollectorMetrics {
    pub mode: Mode,
    pub target_hz: f64,
    pub frames: u64,
    pub effective_hz: f64,
    pub overruns: u64,
    pub degraded: u64,
    pub read_errors: u64,
    pub streams: BTreeMap<String, StalenessStats>,
}

impl CollectorMetrics {
    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("serializable")
    }
}
