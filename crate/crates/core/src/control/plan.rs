use std::fmt;
use std::path::Path;

use serde::{Deserialize, Serialize};

use super::ControlError;
use crate::types::{Episode, JointVector, RobotConfig, ACTION_STREAM};

pub const DEFAULT_TOLERANCE_RAD: f64 = 0.01;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum PlanMode {
    Timed,
    Checkpoint,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Waypoint {
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub t: Option<f64>,
    pub q: JointVector,
}

/// Plan file contents: `{mode, command_rate_hz, tolerance_rad, waypoints}`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrajectoryPlan {
    pub mode: PlanMode,
    pub command_rate_hz: f64,
    #[serde(default = "default_tolerance")]
    pub tolerance_rad: f64,
    pub waypoints: Vec<Waypoint>,
}

fn default_tolerance() -> f64 {
    DEFAULT_TOLERANCE_RAD
}

impl TrajectoryPlan {
    pub fn timed(command_rate_hz: f64, waypoints: impl IntoIterator<Item = (f64, JointVector)>) -> Self {
        TrajectoryPlan {
            mode: PlanMode::Timed,
            command_rate_hz,
            tolerance_rad: DEFAULT_TOLERANCE_RAD,
            waypoints: waypoints.into_iter().map(|(t, q)| Waypoint { t: Some(t), q }).collect(),
        }
    }

    pub fn checkpoints(command_rate_hz: f64, tolerance_rad: f64, poses: impl IntoIterator<Item = JointVector>) -> Self {
        TrajectoryPlan {
            mode: PlanMode::Checkpoint,
            command_rate_hz,
            tolerance_rad,
            waypoints: poses.into_iter().map(|q| Waypoint { t: None, q }).collect(),
        }
    }

    pub fn from_json(text: &str) -> Result<Self, ControlError> {
        serde_json::from_str(text).map_err(|e| ControlError::PlanFile(e.to_string()))
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self, ControlError> {
        let path = path.as_ref();
        let text = std::fs::read_to_string(path).map_err(|e| ControlError::PlanFile(format!("{}: {e}", path.display())))?;
        Self::from_json(&text)
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("serializable")
    }

    /// Time of the last waypoint (timed plans).
    pub fn duration_s(&self) -> Option<f64> {
        self.waypoints.last().and_then(|w| w.t)
    }
}

/// Timed plan through every recorded action of `ep`, timed from the first
/// action. Of several actions sharing a timestamp the last one is kept.
pub fn plan_from_episode(ep: &Episode, command_rate_hz: f64) -> Result<TrajectoryPlan, ControlError> {
    let actions = ep.stream_samples(ACTION_STREAM).unwrap_or_default();
    let t0 = actions.first().ok_or(ControlError::InvalidPlan(vec![PlanViolation::NoWaypoints]))?.capture_ts;
    let mut waypoints: Vec<(f64, JointVector)> = Vec::with_capacity(actions.len());
    for s in actions {
        let q = s.payload.as_joints().ok_or_else(|| ControlError::PlanFile(format!("action at {} is not a joint vector", s.capture_ts)))?;
        let t = s.capture_ts.saturating_since(t0) as f64 * 1e-9;
        match waypoints.last_mut() {
            Some(last) if last.0 == t => last.1 = q.clone(),
            _ => waypoints.push((t, q.clone())),
        }
    }
    Ok(TrajectoryPlan::timed(command_rate_hz, waypoints))
}

#[derive(Debug, Clone, PartialEq)]
pub enum PlanViolation {
    NoWaypoints,
    BadRate(f64),
    BadTolerance(f64),
    Dim { waypoint: usize, expected: usize, got: usize },
    MissingTime { waypoint: usize },
    BadTime { waypoint: usize, t: f64 },
    NotIncreasing { waypoint: usize },
    OutOfLimits { waypoint: usize, joint: usize, value: f64 },
    TooFast { segment: usize, joint: usize, speed: f64, v_max: f64 },
}

impl fmt::Display for PlanViolation {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            PlanViolation::NoWaypoints => write!(f, "plan has no waypoints"),
            PlanViolation::BadRate(r) => write!(f, "command_rate_hz must be > 0, got {r}"),
            PlanViolation::BadTolerance(t) => write!(f, "tolerance_rad must be > 0, got {t}"),
            PlanViolation::Dim { waypoint, expected, got } => {
                write!(f, "waypoint {waypoint}: {got} dims, expected {expected}")
            }
            PlanViolation::MissingTime { waypoint } => write!(f, "waypoint {waypoint}: timed plans need t"),
            PlanViolation::BadTime { waypoint, t } => write!(f, "waypoint {waypoint}: t={t} must be finite and >= 0"),
            PlanViolation::NotIncreasing { waypoint } => write!(f, "waypoint {waypoint}: t does not increase"),
            PlanViolation::OutOfLimits { waypoint, joint, value } => {
                write!(f, "waypoint {waypoint}: joint {joint} = {value} outside limits")
            }
            PlanViolation::TooFast { segment, joint, speed, v_max } => {
                write!(f, "segment {segment}: joint {joint} needs {speed} rad/s > v_max {v_max}")
            }
        }
    }
}

/// Every reason the plan cannot be executed on `config`; `Ok` when none.
pub fn validate_plan(plan: &TrajectoryPlan, config: &RobotConfig) -> Result<(), Vec<PlanViolation>> {
    let mut out = Vec::new();
    if plan.waypoints.is_empty() {
        out.push(PlanViolation::NoWaypoints);
    }
    if !(plan.command_rate_hz > 0.0 && plan.command_rate_hz.is_finite()) {
        out.push(PlanViolation::BadRate(plan.command_rate_hz));
    }
    if plan.mode == PlanMode::Checkpoint && !(plan.tolerance_rad > 0.0 && plan.tolerance_rad.is_finite()) {
        out.push(PlanViolation::BadTolerance(plan.tolerance_rad));
    }
    let (q_min, q_max, v_max) = (config.q_min(), config.q_max(), config.v_max());
    let dim = config.action_dim();
    for (i, w) in plan.waypoints.iter().enumerate() {
        if w.q.dim() != dim {
            out.push(PlanViolation::Dim { waypoint: i, expected: dim, got: w.q.dim() });
            continue;
        }
        for (j, &v) in w.q.values().iter().enumerate() {
            if v < q_min[j] || v > q_max[j] {
                out.push(PlanViolation::OutOfLimits { waypoint: i, joint: j, value: v });
            }
        }
        if plan.mode == PlanMode::Timed {
            match w.t {
                None => out.push(PlanViolation::MissingTime { waypoint: i }),
                Some(t) if !(t >= 0.0 && t.is_finite()) => out.push(PlanViolation::BadTime { waypoint: i, t }),
                _ => {}
            }
        }
    }
    if plan.mode == PlanMode::Timed {
        for (k, pair) in plan.waypoints.windows(2).enumerate() {
            let (Some(t0), Some(t1)) = (pair[0].t, pair[1].t) else { continue };
            if t1 <= t0 {
                out.push(PlanViolation::NotIncreasing { waypoint: k + 1 });
                continue;
            }
            if pair[0].q.dim() != dim || pair[1].q.dim() != dim {
                continue;
            }
            for j in 0..dim {
                let speed = (pair[1].q.values()[j] - pair[0].q.values()[j]).abs() / (t1 - t0);
                if speed > v_max[j] {
                    out.push(PlanViolation::TooFast { segment: k, joint: j, speed, v_max: v_max[j] });
                }
            }
        }
    }
    if out.is_empty() {
        Ok(())
    } else {
        Err(out)
    }
}

/// Piecewise-linear position at `t` seconds; holds the first waypoint
/// before it and the last after it.
pub fn interpolate(plan: &TrajectoryPlan, t: f64) -> Result<JointVector, ControlError> {
    if plan.mode != PlanMode::Timed {
        return Err(ControlError::NotTimed);
    }
    if !(t >= 0.0 && t.is_finite()) {
        return Err(ControlError::BadTime(t));
    }
    let wps = &plan.waypoints;
    let time = |i: usize| wps[i].t.ok_or(ControlError::NotTimed);
    let first = wps.first().ok_or(ControlError::NotTimed)?;
    if t <= time(0)? {
        return Ok(first.q.clone());
    }
    let n = wps.partition_point(|w| w.t.is_some_and(|wt| wt <= t));
    if n >= wps.len() {
        return Ok(wps[wps.len() - 1].q.clone());
    }
    let (a, b) = (&wps[n - 1], &wps[n]);
    let (t0, t1) = (time(n - 1)?, time(n)?);
    if t == t0 {
        return Ok(a.q.clone());
    }
    let s = (t - t0) / (t1 - t0);
    let v = a.q.values().iter().zip(b.q.values()).map(|(x, y)| x + s * (y - x)).collect();
    Ok(JointVector::new(v)?)
}
