//! Record an expert demonstration, serve it as a replay policy, run the
//! closed loop against it, and compare.
//!
//! cargo run --example policy_roundtrip

use cyr::analysis::{compare_replays, Signal};
use cyr::collector::Mode;
use cyr::device::LatencyModel;
use cyr::policy::{serve_replay_policy, PolicyEndpoint, PolicyLoopConfig};
use cyr::sim::{RigConfig, SimOptions, SimRig};
use cyr::workflow::{demo_leader_script, record_policy_run, record_teleop};
use cyr::Clock;

fn main() -> Result<(), Box<dyn std::error::Error>> {
    let rig = RigConfig::reference();
    let dim = rig.robot_config()?.action_dim();
    let opts = SimOptions { leader: Some((demo_leader_script(dim, 4.0), LatencyModel::fixed(200))), ..Default::default() };
    let expert = record_teleop(&SimRig::build(&rig, Clock::virtual_time(), opts)?, 30.0, Mode::Parallel, 4.0, "wave")?;

    let server = serve_replay_policy(&expert.episode, "127.0.0.1:0", 8)?;
    println!("replay policy on {}", server.local_addr());
    let cfg = PolicyLoopConfig::new(PolicyEndpoint::new("127.0.0.1", server.local_addr().port()), expert.episode.frames.len() as u64);

    let sim = SimRig::build(&rig, Clock::virtual_time(), SimOptions::default())?;
    let run = record_policy_run(&sim, &cfg, "wave-replay")?;
    println!("{} commands from {} queries", run.log.commanded.len(), run.log.round_trips_ns.len());

    let stats = compare_replays(&expert.episode, &[run.episode], Signal::Action)?;
    println!("MAD {:.3e} rad, max deviation {:.3e} rad over {} ticks", stats.global_mad, stats.max_deviation, stats.ticks.len());
    server.shutdown();
    Ok(())
}
