use std::time::Duration;

use serde::{Deserialize, Serialize};

use super::{ControlError, ExecutionLog};
use crate::device::{Device, RobotHandle};
use crate::time::grid_offset_ns;
use crate::types::{JointVector, RobotConfig};

pub const DEFAULT_FILTER_ALPHA: f64 = 0.8;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Clutch {
    Engaged,
    Released,
}

/// Leader-to-follower joint mapping. While engaged,
/// `raw = scale * (leader - leader_ref) + follower_ref`, smoothed by a
/// single-pole filter and clamped to the follower's limits.
#[derive(Debug, Clone, PartialEq)]
pub struct TeleopMapping {
    scale: Vec<f64>,
    filter_alpha: f64,
    q_min: Vec<f64>,
    q_max: Vec<f64>,
    clutch: Clutch,
    leader_ref: Vec<f64>,
    follower_ref: Vec<f64>,
    // last filter output; reset to follower_ref on engage
    filtered: Vec<f64>,
}

impl TeleopMapping {
    pub fn new(scale: Vec<f64>, filter_alpha: f64, q_min: Vec<f64>, q_max: Vec<f64>) -> Result<Self, ControlError> {
        let n = scale.len();
        if n == 0 || q_min.len() != n || q_max.len() != n {
            return Err(ControlError::Mapping(format!("scale/limit dims disagree ({n}, {}, {})", q_min.len(), q_max.len())));
        }
        if !(filter_alpha > 0.0 && filter_alpha <= 1.0) {
            return Err(ControlError::Mapping(format!("filter_alpha must be in (0,1], got {filter_alpha}")));
        }
        if scale.iter().any(|s| !s.is_finite()) {
            return Err(ControlError::Mapping("scale must be finite".into()));
        }
        Ok(TeleopMapping {
            scale,
            filter_alpha,
            q_min,
            q_max,
            clutch: Clutch::Released,
            leader_ref: vec![0.0; n],
            follower_ref: vec![0.0; n],
            filtered: vec![0.0; n],
        })
    }

    /// Unit scale over every dimension of `config`.
    pub fn for_config(config: &RobotConfig, filter_alpha: f64) -> Result<Self, ControlError> {
        Self::new(vec![1.0; config.action_dim()], filter_alpha, config.q_min(), config.q_max())
    }

    pub fn dim(&self) -> usize {
        self.scale.len()
    }

    pub fn clutch(&self) -> Clutch {
        self.clutch
    }

    pub fn scale(&self) -> &[f64] {
        &self.scale
    }

    pub fn filter_alpha(&self) -> f64 {
        self.filter_alpha
    }

    pub fn leader_ref(&self) -> &[f64] {
        &self.leader_ref
    }

    pub fn follower_ref(&self) -> &[f64] {
        &self.follower_ref
    }

    fn check_dim(&self, q: &JointVector) -> Result<(), ControlError> {
        if q.dim() != self.dim() {
            return Err(crate::types::TypeError::DimMismatch { expected: self.dim(), got: q.dim() }.into());
        }
        Ok(())
    }

    /// Latches both references and engages.
    pub fn engage(&mut self, leader_q: &JointVector, follower_q: &JointVector) -> Result<(), ControlError> {
        if self.clutch == Clutch::Engaged {
            return Err(ControlError::AlreadyEngaged);
        }
        self.check_dim(leader_q)?;
        self.check_dim(follower_q)?;
        self.leader_ref = leader_q.values().to_vec();
        self.follower_ref = follower_q.values().to_vec();
        self.filtered = self.follower_ref.clone();
        self.clutch = Clutch::Engaged;
        Ok(())
    }

    pub fn release(&mut self) {
        self.clutch = Clutch::Released;
    }

    /// Next follower command. Released: `follower_prev_cmd` unchanged.
    pub fn step(&mut self, leader_q: &JointVector, follower_prev_cmd: &JointVector) -> Result<JointVector, ControlError> {
        self.check_dim(leader_q)?;
        self.check_dim(follower_prev_cmd)?;
        if self.clutch == Clutch::Released {
            return Ok(follower_prev_cmd.clone());
        }
        let a = self.filter_alpha;
        let out: Vec<f64> = (0..self.dim())
            .map(|j| {
                let raw = self.scale[j] * (leader_q.values()[j] - self.leader_ref[j]) + self.follower_ref[j];
                let y = if a == 1.0 { raw } else { self.filtered[j] + a * (raw - self.filtered[j]) };
                y.clamp(self.q_min[j], self.q_max[j])
            })
            .collect();
        self.filtered = out.clone();
        Ok(JointVector::new(out)?)
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct TeleopOptions {
    pub rate_hz: f64,
    pub duration_s: f64,
    /// Also read and log follower state each tick (costs read latency).
    pub measure: bool,
}

/// Engages the clutch at the current leader and follower poses, then
/// mirrors the leader onto the robot at `rate_hz` for `duration_s`.
pub fn run_teleop(
    robot: &RobotHandle,
    leader: &dyn Device,
    mapping: &mut TeleopMapping,
    opts: TeleopOptions,
) -> Result<ExecutionLog, ControlError> {
    let clock = robot.clock();
    let mut log = ExecutionLog::default();
    let (_, follower) = robot.read_joint_state()?;
    let lead = leader_pose(leader)?;
    if mapping.clutch() == Clutch::Released {
        mapping.engage(&lead, &follower)?;
    }
    let start = clock.now();
    let end = start + Duration::from_secs_f64(opts.duration_s);
    let mut prev = follower;
    let mut k = 0u64;
    loop {
        let tick = start + grid_offset_ns(k, opts.rate_hz);
        if tick > end {
            break;
        }
        clock.sleep_until(tick);
        let lead = leader_pose(leader)?;
        let cmd = mapping.step(&lead, &prev)?;
        let (ts, clamped) = robot.command(&cmd)?;
        if clamped {
            log.violations.push(format!("command at {ts} clamped to limits"));
        }
        log.commanded.push((ts, cmd.clone()));
        if opts.measure {
            let (mts, q) = robot.read_joint_state()?;
            log.measured.push((mts, q));
        }
        prev = cmd;
        k += 1;
    }
    Ok(log)
}

fn leader_pose(leader: &dyn Device) -> Result<JointVector, ControlError> {
    let s = leader.read()?;
    s.payload
        .as_joints()
        .cloned()
        .ok_or_else(|| ControlError::Mapping(format!("leader '{}' does not report joints", leader.descriptor().id)))
}
