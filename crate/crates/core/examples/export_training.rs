//! Record a batch of short episodes and sample a reproducible training set.
//!
//! cargo run --example export_training [out_dir]

use cyr::collector::{CollectorConfig, Mode, Session};
use cyr::sim::{RigConfig, SimOptions, SimRig};
use cyr::store::{export_training_set, INDEX_FILE};
use cyr::Clock;

fn main() -> Result<(), Box<dyn std::error::Error>> {
    let out = std::env::args().nth(1).map(Into::into).unwrap_or_else(|| std::env::temp_dir().join("cyr-export"));
    let _ = std::fs::remove_dir_all(&out);
    let mut episodes = Vec::new();
    for i in 0..12 {
        let sim = SimRig::build(&RigConfig::single_arm(), Clock::virtual_time(), SimOptions::default())?;
        let cfg = CollectorConfig::for_duration(30.0, Mode::Parallel, 0.5).with_episode_id(format!("ep-{i:03}"));
        episodes.push(Session::start(&sim.robot, cfg)?.wait()?.0);
    }
    let index = export_training_set(&episodes, 5, 7, &out)?;
    let picked: Vec<&str> = index.entries.iter().map(|e| e.episode_id.as_str()).collect();
    println!("seed {} picked {picked:?} of {}", index.seed, index.available);
    println!("{}", std::fs::read_to_string(out.join(INDEX_FILE))?.lines().take(6).collect::<Vec<_>>().join("\n"));
    Ok(())
}
