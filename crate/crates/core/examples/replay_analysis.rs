//! Replay one demonstration several times on a noisy arm and write the
//! per-tick spread as CSV.
//!
//! cargo run --example replay_analysis [csv_path]

use cyr::analysis::{compare_replays, emit_stats_csv, Signal};
use cyr::collector::Mode;
use cyr::control::plan_from_episode;
use cyr::device::LatencyModel;
use cyr::sim::{RigConfig, SimOptions, SimRig};
use cyr::workflow::{action_lead, demo_leader_script, record_playback, record_teleop};
use cyr::Clock;

fn main() -> Result<(), Box<dyn std::error::Error>> {
    let csv = std::env::args().nth(1).map(Into::into).unwrap_or_else(|| std::env::temp_dir().join("cyr-replays.csv"));
    let rig = RigConfig::reference();
    let dim = rig.robot_config()?.action_dim();
    let opts = SimOptions { leader: Some((demo_leader_script(dim, 3.0), LatencyModel::fixed(200))), ..Default::default() };
    let expert = record_teleop(&SimRig::build(&rig, Clock::virtual_time(), opts)?, 30.0, Mode::Parallel, 3.0, "wave")?;
    let plan = plan_from_episode(&expert.episode, 30.0)?;

    let mut replays = Vec::new();
    for seed in 0..5 {
        let opts = SimOptions { noise_sigma: 1e-3, seed, initial_pose: Some(plan.waypoints[0].q.values().to_vec()), ..Default::default() };
        let sim = SimRig::build(&rig, Clock::virtual_time(), opts)?;
        replays.push(record_playback(&sim, &plan, 30.0, action_lead(&expert.episode), "replay")?.episode);
    }
    for signal in [Signal::Action, Signal::JointState] {
        let stats = compare_replays(&expert.episode, &replays, signal)?;
        println!("{signal:?}: MAD {:.3e}, max variance {:.3e}, {} ticks", stats.global_mad, stats.max_variance, stats.ticks.len());
        if signal == Signal::JointState {
            let lines = emit_stats_csv(&stats, &csv)?;
            println!("wrote {lines} lines to {}", csv.display());
        }
    }
    Ok(())
}
