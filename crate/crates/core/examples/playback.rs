//! Timed and checkpoint playback on a noise-free simulated arm.
//!
//! cargo run --example playback

use cyr::control::{execute_playback, validate_plan, TrajectoryPlan};
use cyr::device::LatencyModel;
use cyr::sim::{RigConfig, SimOptions, SimRig};
use cyr::{Clock, JointVector};

fn pose(v: [f64; 7]) -> JointVector {
    JointVector::new(v.to_vec()).expect("finite")
}

fn main() -> Result<(), Box<dyn std::error::Error>> {
    let mut rig = RigConfig::single_arm();
    rig.devices[0].latency = LatencyModel::ZERO;
    let sim = SimRig::build(&rig, Clock::virtual_time(), SimOptions::default())?;
    let config = sim.robot.config().clone();

    let too_fast = TrajectoryPlan::timed(50.0, [(0.0, pose([0.0; 7])), (0.5, pose([1.0, 0.0, 0.0, 0.0, 0.0, 0.0, 0.0]))]);
    for v in validate_plan(&too_fast, &config).unwrap_err() {
        println!("rejected: {v}");
    }

    let plan = TrajectoryPlan::timed(
        50.0,
        [
            (0.0, pose([0.0; 7])),
            (1.0, pose([0.6, -0.3, 0.2, 0.0, 0.1, 0.0, 0.5])),
            (2.5, pose([0.2, 0.4, -0.5, 0.3, 0.0, 0.2, 1.0])),
        ],
    );
    validate_plan(&plan, &config).map_err(|v| format!("{v:?}"))?;
    let log = execute_playback(&sim.robot, &plan)?;
    let t0 = log.commanded[0].0;
    for w in &plan.waypoints {
        let t = t0 + std::time::Duration::from_secs_f64(w.t.unwrap_or(0.0));
        let q = log.measured_at(t).expect("measured");
        println!("t={:.2}s tracking error {:.2e} rad", w.t.unwrap_or(0.0), q.max_abs_diff(&w.q));
    }

    let cp = TrajectoryPlan::checkpoints(
        50.0,
        0.01,
        [pose([0.3, 0.3, 0.3, 0.3, 0.3, 0.3, 0.8]), pose([-0.2, -0.2, -0.2, -0.2, -0.2, -0.2, 0.1]), pose([0.0; 7])],
    );
    let log = execute_playback(&sim.robot, &cp)?;
    for (i, ts) in &log.arrivals {
        println!("checkpoint {i} reached at {ts}");
    }
    Ok(())
}
