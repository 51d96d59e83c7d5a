//! Action generation: timed and checkpoint trajectory playback, and
//! leader-follower teleoperation with a clutch and single-pole smoothing.

mod plan;
mod playback;
mod teleop;

use serde::{Deserialize, Serialize};
use thiserror::Error;

pub use plan::{interpolate, plan_from_episode, validate_plan, PlanMode, PlanViolation, TrajectoryPlan, Waypoint, DEFAULT_TOLERANCE_RAD};
pub use playback::{execute_playback, execute_playback_with, PlaybackOptions};
pub use teleop::{run_teleop, Clutch, TeleopMapping, TeleopOptions, DEFAULT_FILTER_ALPHA};

use crate::device::{CommandError, DeviceError};
use crate::time::Timestamp;
use crate::types::{JointVector, TypeError};

#[derive(Debug, Error)]
pub enum ControlError {
    #[error("plan rejected: {}", .0.iter().map(|v| v.to_string()).collect::<Vec<_>>().join("; "))]
    InvalidPlan(Vec<PlanViolation>),
    #[error("checkpoint plans have no time parameter")]
    NotTimed,
    #[error("t must be finite and >= 0, got {0}")]
    BadTime(f64),
    #[error("plan file: {0}")]
    PlanFile(String),
    #[error("checkpoint {index} not reached within {timeout_s} s")]
    CheckpointTimeout { index: usize, timeout_s: f64, log: Box<ExecutionLog> },
    #[error("clutch already engaged")]
    AlreadyEngaged,
    #[error("teleop mapping: {0}")]
    Mapping(String),
    #[error(transparent)]
    Shape(#[from] TypeError),
    #[error(transparent)]
    Command(#[from] CommandError),
    #[error(transparent)]
    Device(#[from] DeviceError),
}

/// Commands sent and states measured during one execution.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct ExecutionLog {
    pub commanded: Vec<(Timestamp, JointVector)>,
    pub measured: Vec<(Timestamp, JointVector)>,
    /// Checkpoint arrivals: `(waypoint index, measurement time)`.
    #[serde(default)]
    pub arrivals: Vec<(usize, Timestamp)>,
    /// Non-fatal anomalies (clamped commands, timeouts handled by policy).
    #[serde(default)]
    pub violations: Vec<String>,
    /// Per-request round-trip latency in ns (policy execution only).
    #[serde(default)]
    pub round_trips_ns: Vec<u64>,
}

impl ExecutionLog {
    /// The last measured state at or before `t`.
    pub fn measured_at(&self, t: Timestamp) -> Option<&JointVector> {
        let i = self.measured.partition_point(|(ts, _)| *ts <= t);
        i.checked_sub(1).map(|i| &self.measured[i].1)
    }
}
