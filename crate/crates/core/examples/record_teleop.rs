//! Record a teleoperated demonstration from a scripted leader and store it.
//!
//! cargo run --example record_teleop [out_dir]

use cyr::collector::Mode;
use cyr::device::LatencyModel;
use cyr::sim::{RigConfig, SimOptions, SimRig};
use cyr::store::{read_episode, write_episode, EpisodeManifest};
use cyr::workflow::{demo_leader_script, record_teleop};
use cyr::Clock;

fn main() -> Result<(), Box<dyn std::error::Error>> {
    let out = std::env::args().nth(1).map(Into::into).unwrap_or_else(|| std::env::temp_dir().join("cyr-teleop-demo"));
    let _ = std::fs::remove_dir_all(&out);

    let rig = RigConfig::reference();
    let dim = rig.robot_config()?.action_dim();
    let opts = SimOptions { leader: Some((demo_leader_script(dim, 5.0), LatencyModel::fixed(200))), ..Default::default() };
    let sim = SimRig::build(&rig, Clock::virtual_time(), opts)?;

    let rec = record_teleop(&sim, 30.0, Mode::Parallel, 5.0, "wave")?;
    println!("{} frames at {:.3} Hz, {} commands", rec.episode.frames.len(), rec.metrics.effective_hz, rec.log.commanded.len());

    let manifest = write_episode(&rec.episode, &out)?;
    println!("wrote {} ({} streams)", out.display(), manifest.streams.len());
    for s in &EpisodeManifest::load(&out)?.streams {
        println!("    {:<10} {:>5} records -> {}", s.id, s.record_count, s.file);
    }
    let back = read_episode(&out)?;
    assert_eq!(back.frames, rec.episode.frames);
    Ok(())
}
