use cyr::analysis::{compare_replays, Signal};
use cyr::collector::Mode;
use cyr::device::LatencyModel;
use cyr::policy::{serve_replay_policy, PolicyEndpoint, PolicyLoopConfig};
use cyr::sim::{RigConfig, SimOptions, SimRig};
use cyr::workflow::{demo_leader_script, record_policy_run, record_teleop};
use cyr::Clock;

fn sim_with_leader(secs: f64) -> SimRig {
    let rig = RigConfig::reference();
    let dim = rig.robot_config().unwrap().action_dim();
    let mut init = vec![0.0; dim];
    init[6] = 0.5;
    init[13] = 0.5;
    let opts = SimOptions {
        initial_pose: Some(init),
        leader: Some((demo_leader_script(dim, secs), LatencyModel::fixed(200))),
        ..Default::default()
    };
    SimRig::build(&rig, Clock::virtual_time(), opts).unwrap()
}

#[test]
fn replayed_expert_matches_ground_truth() {
    let expert = record_teleop(&sim_with_leader(4.0), 30.0, Mode::Parallel, 4.0, "demo").unwrap();
    assert!(expert.episode.validate().is_empty());
    let server = serve_replay_policy(&expert.episode, "127.0.0.1:0", 8).unwrap();
    let endpoint = PolicyEndpoint::new("127.0.0.1", server.local_addr().port());
    let steps = expert.episode.frames.len() as u64;

    let mut replays = Vec::new();
    for _ in 0..3 {
        let sim = SimRig::build(&RigConfig::reference(), Clock::virtual_time(), SimOptions::default()).unwrap();
        let run = record_policy_run(&sim, &PolicyLoopConfig::new(endpoint.clone(), steps), "replay").unwrap();
        assert_eq!(run.log.commanded.len() as u64, steps);
        replays.push(run.episode);
    }
    let stats = compare_replays(&expert.episode, &replays, Signal::Action).unwrap();
    assert!(stats.global_mad <= 5e-3, "mad {}", stats.global_mad);
    assert!(stats.max_variance <= 1e-5);
    assert!(stats.ticks.len() + 2 >= expert.episode.frames.len(), "{} of {}", stats.ticks.len(), expert.episode.frames.len());
    server.shutdown();
}

#[test]
fn zero_steps_needs_only_a_connection() {
    let sim = SimRig::build(&RigConfig::reference(), Clock::virtual_time(), SimOptions::default()).unwrap();
    let cfg = PolicyLoopConfig::new(PolicyEndpoint::new("127.0.0.1", 1), 0);
    // nothing listens on port 1
    assert!(cyr::policy::run_policy_loop(&sim.robot, &cfg, &cyr::collector::DirectObserver::new(&sim.robot)).is_err());
    let expert = record_teleop(&sim_with_leader(1.0), 30.0, Mode::Parallel, 1.0, "demo").unwrap();
    let server = serve_replay_policy(&expert.episode, "127.0.0.1:0", 8).unwrap();
    let cfg = PolicyLoopConfig::new(PolicyEndpoint::new("127.0.0.1", server.local_addr().port()), 0);
    let log = cyr::policy::run_policy_loop(&sim.robot, &cfg, &cyr::collector::DirectObserver::new(&sim.robot)).unwrap();
    assert!(log.commanded.is_empty());
    assert!(sim.robot.action_log().is_empty());
}
