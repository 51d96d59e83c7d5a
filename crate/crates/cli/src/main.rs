//! `cyr`: one subcommand per pipeline stage, run against the simulated rig.
//!
//! Exit codes: 0 on success, 2 when input fails validation, 1 on runtime
//! errors.

use std::path::{Path, PathBuf};
use std::process::ExitCode;

use anyhow::{anyhow, Context, Result};
use clap::{Parser, Subcommand, ValueEnum};
use serde_json::json;

use cyr::analysis::{compare_replays, emit_stats_csv, Signal};
use cyr::collector::{CollectorConfig, Mode, Session};
use cyr::control::{plan_from_episode, validate_plan};
use cyr::daemon::{daemon_serve, DaemonConfig};
use cyr::device::LatencyModel;
use cyr::policy::{serve_replay_policy, PolicyEndpoint, PolicyLoopConfig, TimeoutPolicy};
use cyr::sim::{LeaderScript, RigConfig, SimOptions, SimRig};
use cyr::store::{export_training_set, read_episode, write_episode};
use cyr::workflow::{action_lead, bench_collect, demo_leader_script, record_playback, record_policy_run, record_teleop, Recording};
use cyr::{Clock, Episode};

/// Input that failed validation; maps to exit code 2.
#[derive(Debug)]
struct Invalid(String);

impl std::fmt::Display for Invalid {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(&self.0)
    }
}

impl std::error::Error for Invalid {}

fn invalid(msg: impl Into<String>) -> anyhow::Error {
    Invalid(msg.into()).into()
}

#[derive(Parser)]
#[command(name = "cyr", version, about = "Robot data collection, playback and policy deployment over a simulated rig")]
struct Cli {
    #[command(subcommand)]
    command: Cmd,
}

#[derive(Clone, Copy, ValueEnum)]
enum ClockArg {
    /// Deterministic logical time; runs as fast as the host allows.
    Virtual,
    /// Wall-clock pacing.
    Real,
}

impl ClockArg {
    fn clock(self) -> Clock {
        match self {
            ClockArg::Virtual => Clock::virtual_time(),
            ClockArg::Real => Clock::real(),
        }
    }
}

#[derive(Clone, Copy, ValueEnum)]
enum ModeArg {
    Serial,
    Parallel,
}

impl From<ModeArg> for Mode {
    fn from(m: ModeArg) -> Mode {
        match m {
            ModeArg::Serial => Mode::Serial,
            ModeArg::Parallel => Mode::Parallel,
        }
    }
}

#[derive(Clone, Copy, ValueEnum)]
enum SignalArg {
    Action,
    JointState,
}

#[derive(Clone, Copy, ValueEnum)]
enum TimeoutArg {
    Hold,
    Abort,
}

#[derive(clap::Args)]
struct RigArgs {
    /// Rig configuration JSON. Defaults to the built-in dual-arm reference rig.
    #[arg(long)]
    rig: Option<PathBuf>,
    #[arg(long, value_enum, default_value = "virtual")]
    clock: ClockArg,
    /// Gaussian noise on reported joint positions, rad.
    #[arg(long, default_value_t = 0.0)]
    noise_sigma: f64,
    #[arg(long, default_value_t = 0)]
    seed: u64,
}

impl RigArgs {
    fn rig(&self) -> Result<RigConfig> {
        load_rig(self.rig.as_deref())
    }

    fn options(&self) -> SimOptions {
        SimOptions { noise_sigma: self.noise_sigma, seed: self.seed, ..Default::default() }
    }
}

#[derive(Subcommand)]
enum Cmd {
    /// Record a passive episode from every device on the rig.
    Collect {
        #[command(flatten)]
        rig: RigArgs,
        #[arg(long, value_enum, default_value = "parallel")]
        mode: ModeArg,
        /// Target tick rate, Hz.
        #[arg(long, default_value_t = 30.0)]
        rate: f64,
        /// Seconds.
        #[arg(long, default_value_t = 10.0)]
        duration: f64,
        /// Episode directory to create.
        #[arg(long)]
        out: PathBuf,
        #[arg(long, default_value = "")]
        task: String,
    },
    /// Record a teleoperated demonstration driven by a scripted leader.
    Teleop {
        #[command(flatten)]
        rig: RigArgs,
        /// Leader script JSON; the built-in demonstration script when absent.
        #[arg(long)]
        script: Option<PathBuf>,
        /// Pace on the wall clock (overrides --clock).
        #[arg(long)]
        live: bool,
        #[arg(long, value_enum, default_value = "parallel")]
        mode: ModeArg,
        #[arg(long, default_value_t = 30.0)]
        rate: f64,
        /// Seconds; defaults to the script length (10 s for the built-in script).
        #[arg(long)]
        duration: Option<f64>,
        /// Leader read latency, microseconds.
        #[arg(long, default_value_t = 200)]
        leader_latency_us: u64,
        #[arg(long)]
        out: PathBuf,
        #[arg(long, default_value = "teleop")]
        task: String,
    },
    /// Turn an episode's actions into a timed plan, optionally executing it.
    Replay {
        #[arg(long)]
        episode: PathBuf,
        /// Where to write the plan JSON.
        #[arg(long)]
        plan_out: PathBuf,
        /// Command rate, Hz; defaults to the episode's collection rate.
        #[arg(long)]
        rate: Option<f64>,
        /// Execute the plan on the rig and record the run into this directory.
        #[arg(long)]
        execute_out: Option<PathBuf>,
        #[command(flatten)]
        rig: RigArgs,
    },
    /// Serve a recorded episode over the policy protocol (blocks).
    ServePolicy {
        #[arg(long)]
        episode: PathBuf,
        #[arg(long, default_value = "127.0.0.1")]
        host: String,
        #[arg(long, default_value_t = 5555)]
        port: u16,
        /// Actions per reply when the client does not ask for a horizon.
        #[arg(long, default_value_t = 8)]
        horizon: u32,
    },
    /// Run the closed-loop client against a policy server.
    RunPolicy {
        #[arg(long, default_value = "127.0.0.1:5555")]
        endpoint: String,
        /// Action chunk length H.
        #[arg(long, default_value_t = 8)]
        horizon: u32,
        #[arg(long, default_value_t = 30.0)]
        rate: f64,
        /// Commands to execute.
        #[arg(long, default_value_t = 300)]
        steps: u64,
        #[arg(long, value_enum, default_value = "hold")]
        on_timeout: TimeoutArg,
        /// Query before every command and use only the first action.
        #[arg(long)]
        requery_every_tick: bool,
        /// Start the arms at this episode's first action.
        #[arg(long)]
        initial_pose_from: Option<PathBuf>,
        /// Record the run into this episode directory.
        #[arg(long)]
        out: Option<PathBuf>,
        #[arg(long, default_value = "policy")]
        task: String,
        #[command(flatten)]
        rig: RigArgs,
    },
    /// Compare replays against a ground-truth episode and write per-tick statistics.
    Analyze {
        #[arg(long)]
        gt: PathBuf,
        /// Glob matching replay episode directories.
        #[arg(long)]
        replays: String,
        #[arg(long)]
        csv: PathBuf,
        #[arg(long, value_enum, default_value = "action")]
        signal: SignalArg,
    },
    /// Measure effective collection rate per scheduling mode.
    BenchRate {
        #[arg(long)]
        rig: Option<PathBuf>,
        #[arg(long, value_enum, value_delimiter = ',', default_value = "serial,parallel")]
        modes: Vec<ModeArg>,
        #[arg(long, default_value_t = 60.0)]
        rate: f64,
        /// Seconds per run.
        #[arg(long, default_value_t = 30.0)]
        duration: f64,
        #[arg(long, default_value_t = 1)]
        runs: usize,
        #[arg(long, value_enum, default_value = "virtual")]
        clock: ClockArg,
    },
    /// Sample a reproducible training subset from recorded episodes.
    Export {
        /// Glob matching episode directories.
        #[arg(long)]
        episodes: String,
        #[arg(long, default_value_t = 20)]
        k: usize,
        #[arg(long, default_value_t = 0)]
        seed: u64,
        #[arg(long)]
        out: PathBuf,
    },
    /// Run the control daemon with its WebSocket bridge (blocks).
    Daemon {
        /// Rig configuration JSON; the built-in reference rig when absent.
        #[arg(long)]
        config: Option<PathBuf>,
        #[arg(long, default_value = "127.0.0.1")]
        host: String,
        #[arg(long, default_value_t = 8765)]
        ws_port: u16,
        #[arg(long, default_value = "episodes")]
        episodes_dir: PathBuf,
        /// Collector rate for recordings, Hz.
        #[arg(long, default_value_t = 30.0)]
        record_rate: f64,
    },
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    match run(cli.command) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e:#}");
            if e.downcast_ref::<Invalid>().is_some() {
                ExitCode::from(2)
            } else {
                ExitCode::from(1)
            }
        }
    }
}

fn load_rig(path: Option<&Path>) -> Result<RigConfig> {
    match path {
        None => Ok(RigConfig::reference()),
        Some(p) => RigConfig::load(p).map_err(|e| invalid(e.to_string())),
    }
}

fn load_episode(dir: &Path) -> Result<Episode> {
    read_episode(dir).map_err(|e| invalid(format!("{}: {e}", dir.display())))
}

fn glob_dirs(pattern: &str) -> Result<Vec<PathBuf>> {
    let mut out: Vec<PathBuf> = glob::glob(pattern)
        .map_err(|e| invalid(format!("bad glob '{pattern}': {e}")))?
        .filter_map(Result::ok)
        .filter(|p| p.is_dir())
        .collect();
    out.sort();
    if out.is_empty() {
        return Err(invalid(format!("'{pattern}' matches no directories")));
    }
    Ok(out)
}

fn positive(name: &str, v: f64) -> Result<()> {
    if v > 0.0 && v.is_finite() {
        Ok(())
    } else {
        Err(invalid(format!("--{name} must be > 0")))
    }
}

fn save(rec: &Recording, out: &Path) -> Result<()> {
    write_episode(&rec.episode, out).with_context(|| format!("writing {}", out.display()))?;
    println!("{}", json!({ "episode": out.display().to_string(), "frames": rec.episode.frames.len(), "metrics": rec.metrics }));
    Ok(())
}

fn run(cmd: Cmd) -> Result<()> {
    match cmd {
        Cmd::Collect { rig, mode, rate, duration, out, task } => {
            positive("rate", rate)?;
            positive("duration", duration)?;
            let sim = SimRig::build(&rig.rig()?, rig.clock.clock(), rig.options()).map_err(|e| invalid(e.to_string()))?;
            let cfg = CollectorConfig::for_duration(rate, mode.into(), duration).with_task(task);
            let (ep, metrics) = Session::start(&sim.robot, cfg)?.wait()?;
            write_episode(&ep, &out).with_context(|| format!("writing {}", out.display()))?;
            println!("{}", json!({ "episode": out.display().to_string(), "frames": ep.frames.len(), "metrics": metrics }));
        }
        Cmd::Teleop { rig, script, live, mode, rate, duration, leader_latency_us, out, task } => {
            positive("rate", rate)?;
            let config = rig.rig()?;
            let dim = config.robot_config().map_err(|e| invalid(e.to_string()))?.action_dim();
            let script = match &script {
                Some(p) => {
                    let text = std::fs::read_to_string(p).with_context(|| p.display().to_string())?;
                    LeaderScript::from_json(&text).map_err(|e| invalid(e.to_string()))?
                }
                None => demo_leader_script(dim, duration.unwrap_or(10.0)),
            };
            let duration = duration.unwrap_or(script.duration_s());
            positive("duration", duration)?;
            let clock = if live { Clock::real() } else { rig.clock.clock() };
            let opts = SimOptions { leader: Some((script, LatencyModel::fixed(leader_latency_us))), ..rig.options() };
            let sim = SimRig::build(&config, clock, opts).map_err(|e| invalid(e.to_string()))?;
            let rec = record_teleop(&sim, rate, mode.into(), duration, &task)?;
            save(&rec, &out)?;
        }
        Cmd::Replay { episode, plan_out, rate, execute_out, rig } => {
            let ep = load_episode(&episode)?;
            let rate = match rate {
                Some(r) => r,
                None => ep.meta.get("collection_rate_hz").and_then(|r| r.parse().ok()).unwrap_or(30.0),
            };
            positive("rate", rate)?;
            let plan = plan_from_episode(&ep, rate).map_err(|e| invalid(e.to_string()))?;
            if let Err(v) = validate_plan(&plan, &ep.config) {
                let msgs: Vec<String> = v.iter().map(|x| x.to_string()).collect();
                return Err(invalid(format!("plan rejected: {}", msgs.join("; "))));
            }
            std::fs::write(&plan_out, plan.to_json()).with_context(|| plan_out.display().to_string())?;
            println!("{}", json!({ "plan": plan_out.display().to_string(), "waypoints": plan.waypoints.len(), "duration_s": plan.duration_s() }));
            if let Some(out) = execute_out {
                let opts = SimOptions { initial_pose: Some(plan.waypoints[0].q.values().to_vec()), ..rig.options() };
                let sim = SimRig::build(&rig.rig()?, rig.clock.clock(), opts).map_err(|e| invalid(e.to_string()))?;
                let rec = record_playback(&sim, &plan, rate, action_lead(&ep), &format!("replay of {}", ep.id))?;
                save(&rec, &out)?;
            }
        }
        Cmd::ServePolicy { episode, host, port, horizon } => {
            if horizon == 0 {
                return Err(invalid("--horizon must be >= 1"));
            }
            let ep = load_episode(&episode)?;
            let server = serve_replay_policy(&ep, &format!("{host}:{port}"), horizon)?;
            eprintln!("serving {} on {}", ep.id, server.local_addr());
            server.wait();
        }
        Cmd::RunPolicy { endpoint, horizon, rate, steps, on_timeout, requery_every_tick, initial_pose_from, out, task, rig } => {
            positive("rate", rate)?;
            if horizon == 0 {
                return Err(invalid("--horizon must be >= 1"));
            }
            let mut cfg = PolicyLoopConfig::new(PolicyEndpoint::parse(&endpoint).map_err(|e| invalid(e.to_string()))?, steps);
            cfg.horizon = horizon;
            cfg.rate_hz = rate;
            cfg.requery_every_tick = requery_every_tick;
            cfg.on_timeout = match on_timeout {
                TimeoutArg::Hold => TimeoutPolicy::Hold,
                TimeoutArg::Abort => TimeoutPolicy::Abort,
            };
            let mut opts = rig.options();
            if let Some(dir) = initial_pose_from {
                let ep = load_episode(&dir)?;
                let first = ep
                    .stream_samples(cyr::types::ACTION_STREAM)
                    .and_then(|s| s.first())
                    .and_then(|s| s.payload.as_joints().cloned())
                    .ok_or_else(|| invalid(format!("{} has no actions", dir.display())))?;
                opts.initial_pose = Some(first.values().to_vec());
            }
            let sim = SimRig::build(&rig.rig()?, rig.clock.clock(), opts).map_err(|e| invalid(e.to_string()))?;
            let rec = record_policy_run(&sim, &cfg, &task)?;
            let rt = &rec.log.round_trips_ns;
            let mean_rt_us = if rt.is_empty() { 0.0 } else { rt.iter().sum::<u64>() as f64 / rt.len() as f64 / 1e3 };
            eprintln!("{} commands, {} queries, mean round trip {mean_rt_us:.1} us", rec.log.commanded.len(), rt.len());
            match out {
                Some(out) => save(&rec, &out)?,
                None => println!("{}", json!({ "commands": rec.log.commanded.len(), "metrics": rec.metrics })),
            }
        }
        Cmd::Analyze { gt, replays, csv, signal } => {
            let gt = load_episode(&gt)?;
            let reps = glob_dirs(&replays)?.iter().map(|d| load_episode(d)).collect::<Result<Vec<_>>>()?;
            let signal = match signal {
                SignalArg::Action => Signal::Action,
                SignalArg::JointState => Signal::JointState,
            };
            let stats = compare_replays(&gt, &reps, signal).map_err(|e| invalid(e.to_string()))?;
            let rows = emit_stats_csv(&stats, &csv)?;
            println!(
                "{}",
                json!({
                    "replays": stats.replays,
                    "ticks": stats.ticks.len(),
                    "dropped_ticks": stats.dropped_ticks,
                    "global_mad": stats.global_mad,
                    "max_deviation": stats.max_deviation,
                    "max_variance": stats.max_variance,
                    "csv_lines": rows,
                })
            );
        }
        Cmd::BenchRate { rig, modes, rate, duration, runs, clock } => {
            positive("rate", rate)?;
            positive("duration", duration)?;
            if runs == 0 || modes.is_empty() {
                return Err(invalid("--runs and --modes must be non-empty"));
            }
            let rig = load_rig(rig.as_deref())?;
            for m in modes {
                let mode: Mode = m.into();
                let mut rates = Vec::with_capacity(runs);
                for run in 0..runs {
                    let metrics = bench_collect(&rig, clock.clock(), mode, rate, duration)?;
                    println!(
                        "{}",
                        json!({ "mode": mode, "run": run, "effective_hz": metrics.effective_hz, "frames": metrics.frames, "overruns": metrics.overruns, "degraded": metrics.degraded })
                    );
                    rates.push(metrics.effective_hz);
                }
                rates.sort_by(f64::total_cmp);
                let median = if runs % 2 == 1 { rates[runs / 2] } else { 0.5 * (rates[runs / 2 - 1] + rates[runs / 2]) };
                println!("{}", json!({ "mode": mode, "target_hz": rate, "median_hz": median, "runs": runs }));
            }
        }
        Cmd::Export { episodes, k, seed, out } => {
            let eps = glob_dirs(&episodes)?.iter().map(|d| load_episode(d)).collect::<Result<Vec<_>>>()?;
            if k > eps.len() {
                return Err(invalid(format!("k={k} exceeds the {} episodes found", eps.len())));
            }
            let index = export_training_set(&eps, k, seed, &out)?;
            println!("{}", serde_json::to_string(&index)?);
        }
        Cmd::Daemon { config, host, ws_port, episodes_dir, record_rate } => {
            positive("record-rate", record_rate)?;
            let rig = load_rig(config.as_deref())?;
            let bind = format!("{host}:{ws_port}").parse().map_err(|e| invalid(format!("bad address: {e}")))?;
            let mut cfg = DaemonConfig::new(rig, bind, episodes_dir);
            cfg.record_rate_hz = record_rate;
            let daemon = daemon_serve(cfg).map_err(|e| anyhow!(e))?;
            eprintln!("daemon listening on ws://{}", daemon.local_addr());
            daemon.wait();
        }
    }
    Ok(())
}
