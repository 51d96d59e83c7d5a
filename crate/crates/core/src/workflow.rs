//! End-to-end recording workflows built from the collector, the control
//! modes and the policy bridge.

use std::time::Duration;

use thiserror::Error;

use crate::collector::{CollectorConfig, CollectorError, CollectorMetrics, Mode, Session, StopCondition};
use crate::control::{
    execute_playback, run_teleop, ControlError, ExecutionLog, TeleopMapping, TeleopOptions, TrajectoryPlan, DEFAULT_FILTER_ALPHA,
};
use crate::device::Device;
use crate::policy::{run_policy_loop, PolicyError, PolicyLoopConfig};
use crate::sim::{LeaderScript, Motion, RigConfig, Segment, SimError, SimOptions, SimRig, Sine};
use crate::time::Clock;
use crate::types::{Episode, ACTION_STREAM};

#[derive(Debug, Error)]
pub enum WorkflowError {
    #[error(transparent)]
    Collector(#[from] CollectorError),
    #[error(transparent)]
    Control(#[from] ControlError),
    #[error(transparent)]
    Policy(#[from] PolicyError),
    #[error(transparent)]
    Sim(#[from] SimError),
    #[error("{0}")]
    Setup(String),
}

/// A recorded episode with the collector metrics and the control log.
#[derive(Debug, Clone)]
pub struct Recording {
    pub episode: Episode,
    pub metrics: CollectorMetrics,
    pub log: ExecutionLog,
}

/// Demonstration script: a short hold, then slow per-joint sinusoids
/// (0.3-0.4 rad, 0.1-0.3 Hz, starting at zero) on the arm joints with grippers held
/// half open.
pub fn demo_leader_script(dim: usize, duration_s: f64) -> LeaderScript {
    let gripper = |j: usize| j % 7 == 6;
    let per_joint = (0..dim)
        .map(|j| {
            if gripper(j) {
                // 0.5 * sin(pi/2): constant half-open aperture
                Sine { amplitude: 0.5, f: 0.0, phi: std::f64::consts::FRAC_PI_2 }
            } else {
                Sine { amplitude: 0.4 - 0.1 * (j / 7) as f64, f: 0.1 + 0.2 * (j % 7) as f64 / 6.0, phi: 0.0 }
            }
        })
        .collect();
    let hold = (0..dim).map(|j| if gripper(j) { 0.5 } else { 0.0 }).collect();
    let mut segments = vec![Segment { duration_s: 0.5_f64.min(duration_s), motion: Motion::Hold(hold) }];
    if duration_s > 0.5 {
        segments.push(Segment { duration_s: duration_s - 0.5, motion: Motion::Sine(per_joint) });
    }
    LeaderScript::new(segments).expect("valid script")
}

/// Records a teleoperated demonstration: the collector runs in `mode` at
/// `rate_hz` while the rig's leader drives the robot at the same rate,
/// phase-aligned with the collector ticks.
pub fn record_teleop(sim: &SimRig, rate_hz: f64, mode: Mode, duration_s: f64, task: &str) -> Result<Recording, WorkflowError> {
    let leader = sim.leader.as_ref().ok_or_else(|| WorkflowError::Setup("rig has no leader device".into()))?;
    let cfg = CollectorConfig::new(rate_hz, mode, StopCondition::Manual).with_task(task);
    let session = Session::start(&sim.robot, cfg)?;
    session.wait_for_first_tick();
    let mut mapping = TeleopMapping::for_config(sim.robot.config(), DEFAULT_FILTER_ALPHA)?;
    let log = run_teleop(
        &sim.robot,
        leader.as_ref() as &dyn Device,
        &mut mapping,
        TeleopOptions { rate_hz, duration_s, measure: false },
    );
    let (episode, metrics) = session.finish()?;
    Ok(Recording { episode, metrics, log: log? })
}

/// Records one closed-loop policy execution: a parallel collector at
/// `cfg.rate_hz` with the policy loop started on its first tick and fed
/// from the collector's buffers.
pub fn record_policy_run(sim: &SimRig, cfg: &PolicyLoopConfig, task: &str) -> Result<Recording, WorkflowError> {
    let ccfg = CollectorConfig::new(cfg.rate_hz, Mode::Parallel, StopCondition::Manual).with_task(task);
    let session = Session::start(&sim.robot, ccfg)?;
    session.wait_for_first_tick();
    let log = run_policy_loop(&sim.robot, cfg, &session.observer());
    let (episode, metrics) = session.finish()?;
    Ok(Recording { episode, metrics, log: log? })
}

/// Records the execution of `plan`: a parallel collector at `rate_hz`
/// with playback started `lead` after its first tick.
pub fn record_playback(sim: &SimRig, plan: &TrajectoryPlan, rate_hz: f64, lead: Duration, task: &str) -> Result<Recording, WorkflowError> {
    let cfg = CollectorConfig::new(rate_hz, Mode::Parallel, StopCondition::Manual).with_task(task);
    let session = Session::start(&sim.robot, cfg)?;
    sim.robot.clock().sleep_until(session.first_tick() + lead);
    let log = execute_playback(&sim.robot, plan);
    let (episode, metrics) = session.finish()?;
    Ok(Recording { episode, metrics, log: log? })
}

/// How long after its first tick `ep` issued its first action. Replaying
/// with this lead keeps commands in the same phase against the tick grid.
pub fn action_lead(ep: &Episode) -> Duration {
    let first_action = ep.stream_samples(ACTION_STREAM).and_then(|s| s.first()).map(|s| s.capture_ts);
    match (ep.first_tick(), first_action) {
        (Some(tick), Some(a)) => Duration::from_nanos(a.saturating_since(tick)),
        _ => Duration::ZERO,
    }
}

/// One fixed-duration collection on a freshly built rig.
pub fn bench_collect(rig: &RigConfig, clock: Clock, mode: Mode, rate_hz: f64, duration_s: f64) -> Result<CollectorMetrics, WorkflowError> {
    let sim = SimRig::build(rig, clock, SimOptions::default())?;
    let (_, metrics) = Session::start(&sim.robot, CollectorConfig::for_duration(rate_hz, mode, duration_s))?.wait()?;
    Ok(metrics)
}
