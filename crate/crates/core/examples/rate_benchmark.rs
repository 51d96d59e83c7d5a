//! Serial against parallel collection on the reference rig at 60 Hz.
//!
//! cargo run --example rate_benchmark [seconds]

use cyr::collector::Mode;
use cyr::sim::RigConfig;
use cyr::workflow::bench_collect;
use cyr::Clock;

fn main() -> Result<(), Box<dyn std::error::Error>> {
    let secs: f64 = std::env::args().nth(1).map(|s| s.parse()).transpose()?.unwrap_or(30.0);
    let rig = RigConfig::reference();
    for mode in [Mode::Serial, Mode::Parallel] {
        let m = bench_collect(&rig, Clock::virtual_time(), mode, 60.0, secs)?;
        println!(
            "{mode:<8} {:.3} Hz over {} frames, {} overruns, {} degraded",
            m.effective_hz, m.frames, m.overruns, m.degraded
        );
        for (id, s) in &m.streams {
            println!("    {id:<10} staleness mean {:>8.3} ms, max {:>8.3} ms", s.stale_mean_ns / 1e6, s.stale_max_ns as f64 / 1e6);
        }
    }
    Ok(())
}
