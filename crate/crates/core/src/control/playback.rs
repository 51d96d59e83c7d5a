use std::time::Duration;

use super::plan::{interpolate, validate_plan, PlanMode, TrajectoryPlan};
use super::{ControlError, ExecutionLog};
use crate::device::RobotHandle;
use crate::time::{grid_offset_ns, Timestamp};

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct PlaybackOptions {
    /// Per-checkpoint arrival timeout.
    pub checkpoint_timeout_s: f64,
}

impl Default for PlaybackOptions {
    fn default() -> Self {
        PlaybackOptions { checkpoint_timeout_s: 10.0 }
    }
}

pub fn execute_playback(robot: &RobotHandle, plan: &TrajectoryPlan) -> Result<ExecutionLog, ControlError> {
    execute_playback_with(robot, plan, PlaybackOptions::default())
}

/// Runs a validated plan. Timed plans command `interpolate(plan, t)` on the
/// command grid through the last waypoint plus one settling tick, and also
/// measure at every waypoint time. Checkpoint plans command waypoint `k`
/// every tick until the measured pose is within tolerance (max-norm).
pub fn execute_playback_with(robot: &RobotHandle, plan: &TrajectoryPlan, opts: PlaybackOptions) -> Result<ExecutionLog, ControlError> {
    validate_plan(plan, robot.config()).map_err(ControlError::InvalidPlan)?;
    match plan.mode {
        PlanMode::Timed => timed(robot, plan),
        PlanMode::Checkpoint => checkpoints(robot, plan, opts),
    }
}

fn command(robot: &RobotHandle, log: &mut ExecutionLog, q: &crate::types::JointVector) -> Result<(), ControlError> {
    let (ts, clamped) = robot.command(q)?;
    if clamped {
        log.violations.push(format!("command at {ts} clamped to limits"));
    }
    log.commanded.push((ts, q.clone()));
    Ok(())
}

fn measure(robot: &RobotHandle, log: &mut ExecutionLog) -> Result<crate::types::JointVector, ControlError> {
    let (ts, q) = robot.read_joint_state()?;
    log.measured.push((ts, q.clone()));
    Ok(q)
}

fn timed(robot: &RobotHandle, plan: &TrajectoryPlan) -> Result<ExecutionLog, ControlError> {
    let clock = robot.clock();
    let rate = plan.command_rate_hz;
    let end_ns = (plan.duration_s().unwrap_or(0.0) * 1e9).round() as u64;
    let start = clock.now();
    let mut waypoint_ns: Vec<u64> = plan.waypoints.iter().filter_map(|w| w.t).map(|t| (t * 1e9).round() as u64).collect();
    waypoint_ns.dedup();
    let mut log = ExecutionLog::default();
    let mut wp = waypoint_ns.iter().peekable();
    let mut k = 0u64;
    let mut settled = false;
    loop {
        let tick = grid_offset_ns(k, rate);
        // waypoint-only measurement instants before this tick
        while let Some(&&w) = wp.peek() {
            if w >= tick {
                break;
            }
            clock.sleep_until(start + w);
            measure(robot, &mut log)?;
            wp.next();
        }
        clock.sleep_until(start + tick);
        let q = interpolate(plan, tick as f64 * 1e-9)?;
        command(robot, &mut log, &q)?;
        measure(robot, &mut log)?;
        if wp.peek().is_some_and(|&&w| w == tick) {
            wp.next();
        }
        if settled {
            break;
        }
        settled = tick >= end_ns;
        k += 1;
    }
    Ok(log)
}

fn checkpoints(robot: &RobotHandle, plan: &TrajectoryPlan, opts: PlaybackOptions) -> Result<ExecutionLog, ControlError> {
    let clock = robot.clock();
    let period = Duration::from_secs_f64(1.0 / plan.command_rate_hz);
    let timeout = Duration::from_secs_f64(opts.checkpoint_timeout_s);
    let mut log = ExecutionLog::default();
    for (index, w) in plan.waypoints.iter().enumerate() {
        let began: Timestamp = clock.now();
        loop {
            command(robot, &mut log, &w.q)?;
            let q = measure(robot, &mut log)?;
            if q.max_abs_diff(&w.q) <= plan.tolerance_rad {
                log.arrivals.push((index, log.measured.last().expect("just measured").0));
                break;
            }
            if clock.now() - began >= timeout {
                return Err(ControlError::CheckpointTimeout { index, timeout_s: opts.checkpoint_timeout_s, log: Box::new(log) });
            }
            clock.sleep(period);
        }
    }
    Ok(log)
}
