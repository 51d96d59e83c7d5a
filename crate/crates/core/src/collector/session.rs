use std::collections::BTreeMap;
use std::sync::atomic::{AtomicBool, AtomicU64, Ordering};
use std::sync::mpsc::{self, Receiver, Sender};
use std::sync::{Arc, Mutex};
use std::time::Duration;

use crate::buffer::StreamBuffer;
use crate::device::{BoundDevice, DeviceError, RobotHandle};
use crate::time::{grid_offset_ns, Clock, TaskHandle, Timestamp};
use crate::types::{Episode, Frame, ImagePayload, JointVector, Payload, PayloadKind, Stream, ACTION_STREAM};

use super::{rate_of_ticks, CollectorConfig, CollectorError, CollectorMetrics, Mode, StalenessStats, StopCondition};

struct DeviceStream {
    device: BoundDevice,
    buffer: Arc<StreamBuffer>,
}

#[derive(Debug, Default, Clone, Copy)]
struct Progress {
    frames: u64,
    first: Timestamp,
    last: Timestamp,
}

struct TickOutcome {
    frames: Vec<Frame>,
    overruns: u64,
    read_errors: u64,
}

/// A running recording: the tick task plus, in parallel mode, one poller
/// per device.
pub struct Session {
    robot: RobotHandle,
    cfg: CollectorConfig,
    streams: Arc<Vec<DeviceStream>>,
    action_from: usize,
    tick_stop: Arc<AtomicBool>,
    poll_stop: Arc<AtomicBool>,
    tick: Option<TaskHandle<TickOutcome>>,
    pollers: Vec<TaskHandle<()>>,
    first_tick: Timestamp,
    epoch_wall: String,
    progress: Arc<Mutex<Progress>>,
}

static EPISODE_SEQ: AtomicU64 = AtomicU64::new(0);

impl Session {
    pub fn start(robot: &RobotHandle, cfg: CollectorConfig) -> Result<Session, CollectorError> {
        cfg.validate()?;
        let clock = robot.clock().clone();
        let epoch_wall = chrono::Utc::now().to_rfc3339();
        let streams: Arc<Vec<DeviceStream>> = Arc::new(
            robot
                .devices()
                .map(|d| DeviceStream { device: d.clone(), buffer: Arc::new(StreamBuffer::new()) })
                .collect(),
        );
        let action_from = robot.action_log().len();
        let tick_stop = Arc::new(AtomicBool::new(false));
        let poll_stop = Arc::new(AtomicBool::new(false));
        let (err_tx, err_rx) = mpsc::channel();
        let start = clock.now();

        let mut pollers = Vec::new();
        let first_tick = match cfg.mode {
            Mode::Serial => start,
            Mode::Parallel => {
                for (i, _) in streams.iter().enumerate() {
                    let (clock, streams, stop, tx) = (clock.clone(), streams.clone(), poll_stop.clone(), err_tx.clone());
                    let name = format!("poll-{}", streams[i].device.desc.id);
                    pollers.push(robot.clock().spawn(&name, move || poll_loop(&clock, &streams[i], &stop, &tx, start)));
                }
                // let every poller complete one read before the first tick
                let warmup = streams
                    .iter()
                    .map(|s| {
                        let l = s.device.desc.latency;
                        l.base_us + if l.spike_period > 0 { l.spike_us } else { 0 }
                    })
                    .max()
                    .unwrap_or(0)
                    + 1000;
                start + Duration::from_micros(warmup)
            }
        };
        drop(err_tx);

        let progress = Arc::new(Mutex::new(Progress::default()));
        let tick = {
            let (clock, streams, stop, robot2, cfg2, prog) =
                (clock.clone(), streams.clone(), tick_stop.clone(), robot.clone(), cfg.clone(), progress.clone());
            robot.clock().spawn("collector-tick", move || {
                let ctx = TickContext { clock: &clock, cfg: &cfg2, streams: &streams, robot: &robot2, action_from, stop: &stop, progress: &prog };
                tick_loop(ctx, err_rx, first_tick)
            })
        };

        Ok(Session {
            robot: robot.clone(),
            cfg,
            streams,
            action_from,
            tick_stop,
            poll_stop,
            tick: Some(tick),
            pollers,
            first_tick,
            epoch_wall,
            progress,
        })
    }

    /// Frames emitted so far and the effective rate over them.
    pub fn progress(&self) -> (u64, Option<f64>) {
        let p = *self.progress.lock().unwrap_or_else(|e| e.into_inner());
        (p.frames, rate_of_ticks(&[p.first, p.last]).ok().map(|r| r * (p.frames.saturating_sub(1)) as f64))
    }

    /// Timestamp of tick 0.
    pub fn first_tick(&self) -> Timestamp {
        self.first_tick
    }

    /// Blocks until tick 0 is due, so a control loop started afterwards is
    /// phase-aligned with the tick schedule.
    pub fn wait_for_first_tick(&self) {
        self.robot.clock().sleep_until(self.first_tick);
    }

    pub fn observer(&self) -> SessionObserver {
        SessionObserver { streams: self.streams.clone(), controllers: self.robot.controllers().len(), clock: self.robot.clock().clone() }
    }

    /// Waits for the configured stop condition, then finalizes.
    pub fn wait(mut self) -> Result<(Episode, CollectorMetrics), CollectorError> {
        if self.cfg.stop == StopCondition::Manual {
            self.tick_stop.store(true, Ordering::SeqCst);
        }
        self.finalize()
    }

    /// Stops ticking now and finalizes.
    pub fn finish(mut self) -> Result<(Episode, CollectorMetrics), CollectorError> {
        self.tick_stop.store(true, Ordering::SeqCst);
        self.finalize()
    }

    fn finalize(&mut self) -> Result<(Episode, CollectorMetrics), CollectorError> {
        let outcome = self.tick.take().expect("finalized once").join().map_err(|_| CollectorError::TaskPanicked)?;
        self.poll_stop.store(true, Ordering::SeqCst);
        for p in self.pollers.drain(..) {
            p.join().map_err(|_| CollectorError::TaskPanicked)?;
        }
        Ok(self.assemble(outcome))
    }

    fn assemble(&self, outcome: TickOutcome) -> (Episode, CollectorMetrics) {
        let cfg = &self.cfg;
        let mut streams = BTreeMap::new();
        for s in self.streams.iter() {
            streams.insert(
                s.device.desc.id.clone(),
                Stream { kind: s.device.desc.schema, samples: s.buffer.snapshot_from(0) },
            );
        }
        streams.insert(
            ACTION_STREAM.to_string(),
            Stream { kind: PayloadKind::Joints, samples: self.robot.action_log().snapshot_from(self.action_from) },
        );

        let slowest = self
            .streams
            .iter()
            .map(|s| s.device.desc.nominal_rate_hz)
            .fold(f64::INFINITY, f64::min);
        let default_limit = if slowest.is_finite() { (2e9 / slowest) as u64 } else { u64::MAX };

        let mut stats: BTreeMap<String, StalenessStats> = BTreeMap::new();
        let mut sums: BTreeMap<String, f64> = BTreeMap::new();
        let mut degraded = 0;
        for frame in &outcome.frames {
            let mut bad = false;
            for (id, slot) in &frame.slots {
                let is_device = id != ACTION_STREAM;
                let st = stats.entry(id.clone()).or_insert(StalenessStats { stale_min_ns: u64::MAX, ..Default::default() });
                match (slot, frame.staleness.get(id)) {
                    (Some(_), Some(&age)) => {
                        st.stale_min_ns = st.stale_min_ns.min(age);
                        st.stale_max_ns = st.stale_max_ns.max(age);
                        st.filled += 1;
                        *sums.entry(id.clone()).or_default() += age as f64;
                        let limit = cfg.staleness_limit_ns.get(id).copied().unwrap_or(default_limit);
                        bad |= is_device && age > limit;
                    }
                    _ => bad |= is_device,
                }
            }
            degraded += bad as u64;
        }
        for (id, st) in stats.iter_mut() {
            if st.filled == 0 {
                st.stale_min_ns = 0;
            } else {
                st.stale_mean_ns = sums[id] / st.filled as f64;
            }
            st.records = streams.get(id).map_or(0, |s| s.samples.len() as u64);
        }

        let ticks: Vec<Timestamp> = outcome.frames.iter().map(|f| f.tick_ts).collect();
        let metrics = CollectorMetrics {
            mode: cfg.mode,
            target_hz: cfg.target_rate_hz,
            frames: outcome.frames.len() as u64,
            effective_hz: rate_of_ticks(&ticks).unwrap_or(0.0),
            overruns: outcome.overruns,
            degraded,
            read_errors: outcome.read_errors,
            streams: stats,
        };

        let id = cfg.episode_id.clone().unwrap_or_else(|| {
            format!(
                "ep-{}-{:04}",
                chrono::Utc::now().format("%Y%m%dT%H%M%S%3f"),
                EPISODE_SEQ.fetch_add(1, Ordering::Relaxed)
            )
        });
        let meta = BTreeMap::from([
            ("collection_rate_hz".to_string(), cfg.target_rate_hz.to_string()),
            ("mode".to_string(), cfg.mode.to_string()),
            ("session_epoch".to_string(), self.epoch_wall.clone()),
            ("first_tick_ns".to_string(), self.first_tick.0.to_string()),
            ("robot".to_string(), self.robot.config().name().to_string()),
            ("clock".to_string(), if self.robot.clock().is_virtual() { "virtual" } else { "real" }.to_string()),
        ]);
        let episode = Episode {
            id,
            task: cfg.task.clone(),
            config: self.robot.config().clone(),
            frames: outcome.frames,
            streams,
            meta,
        };
        (episode, metrics)
    }
}

impl Drop for Session {
    fn drop(&mut self) {
        self.tick_stop.store(true, Ordering::SeqCst);
        self.poll_stop.store(true, Ordering::SeqCst);
    }
}

fn accept(stream: &DeviceStream, result: Result<crate::types::Sample, DeviceError>) -> bool {
    match result {
        Ok(s) if s.stream_id == stream.device.desc.id && s.payload.kind() == stream.device.desc.schema => {
            stream.buffer.push_dedup(s);
            true
        }
        _ => false,
    }
}

fn poll_loop(clock: &Clock, stream: &DeviceStream, stop: &AtomicBool, errors: &Sender<String>, start: Timestamp) {
    let rate = stream.device.desc.nominal_rate_hz;
    let mut anchor = start;
    let mut k = 0u64;
    loop {
        clock.sleep_until(anchor + grid_offset_ns(k, rate));
        if stop.load(Ordering::SeqCst) {
            return;
        }
        let id = &stream.device.desc.id;
        if !accept(stream, stream.device.driver.read()) {
            let _ = errors.send(id.clone());
        }
        let now = clock.now();
        let next = anchor + grid_offset_ns(k + 1, rate);
        if now > next {
            anchor = now;
            k = 0;
        } else {
            k += 1;
        }
    }
}

struct TickContext<'a> {
    clock: &'a Clock,
    cfg: &'a CollectorConfig,
    streams: &'a [DeviceStream],
    robot: &'a RobotHandle,
    action_from: usize,
    stop: &'a AtomicBool,
    progress: &'a Mutex<Progress>,
}

fn tick_loop(ctx: TickContext<'_>, errors: Receiver<String>, first_tick: Timestamp) -> TickOutcome {
    let TickContext { clock, cfg, streams, robot, action_from, stop, progress } = ctx;
    let rate = cfg.target_rate_hz;
    let mut out = TickOutcome { frames: Vec::new(), overruns: 0, read_errors: 0 };
    let mut anchor = first_tick;
    let mut k = 0u64;
    loop {
        let tick_ts = anchor + grid_offset_ns(k, rate);
        let done = match cfg.stop {
            StopCondition::DurationS(d) => tick_ts.saturating_since(first_tick) as f64 >= d * 1e9,
            StopCondition::FrameCount(n) => out.frames.len() as u64 >= n,
            StopCondition::Manual => false,
        };
        if done {
            break;
        }
        clock.sleep_until(tick_ts);
        if stop.load(Ordering::SeqCst) {
            break;
        }

        if cfg.mode == Mode::Serial {
            for s in streams {
                if !accept(s, s.device.driver.read()) {
                    out.read_errors += 1;
                }
            }
        }
        out.read_errors += errors.try_iter().count() as u64;

        let mut slots = BTreeMap::new();
        let mut staleness = BTreeMap::new();
        for s in streams {
            let id = s.device.desc.id.clone();
            match s.buffer.associate(tick_ts, 0) {
                Some((idx, sample)) => {
                    staleness.insert(id.clone(), tick_ts.saturating_since(sample.capture_ts));
                    slots.insert(id, Some(idx));
                }
                None => {
                    slots.insert(id, None);
                }
            }
        }
        match robot.action_log().associate(tick_ts, action_from) {
            Some((idx, sample)) => {
                staleness.insert(ACTION_STREAM.to_string(), tick_ts.saturating_since(sample.capture_ts));
                slots.insert(ACTION_STREAM.to_string(), Some(idx - action_from));
            }
            None => {
                slots.insert(ACTION_STREAM.to_string(), None);
            }
        }
        out.frames.push(Frame { tick_index: out.frames.len() as u64, tick_ts, slots, staleness });
        {
            let mut p = progress.lock().unwrap_or_else(|e| e.into_inner());
            if p.frames == 0 {
                p.first = tick_ts;
            }
            p.frames += 1;
            p.last = tick_ts;
        }

        let now = clock.now();
        let next = anchor + grid_offset_ns(k + 1, rate);
        if now > next {
            out.overruns += 1;
            anchor = now;
            k = 0;
        } else {
            k += 1;
        }
    }
    out.read_errors += errors.try_iter().count() as u64;
    out
}

/// Runs a serial-mode collection to its stop condition.
pub fn run_serial(robot: &RobotHandle, cfg: CollectorConfig) -> Result<(Episode, CollectorMetrics), CollectorError> {
    if cfg.mode != Mode::Serial {
        return Err(CollectorError::WrongMode { expected: Mode::Serial, found: cfg.mode });
    }
    Session::start(robot, cfg)?.wait()
}

/// Runs a parallel-mode collection to its stop condition.
pub fn run_parallel(robot: &RobotHandle, cfg: CollectorConfig) -> Result<(Episode, CollectorMetrics), CollectorError> {
    if cfg.mode != Mode::Parallel {
        return Err(CollectorError::WrongMode { expected: Mode::Parallel, found: cfg.mode });
    }
    Session::start(robot, cfg)?.wait()
}

/// Joint state and camera images at one instant.
#[derive(Debug, Clone, PartialEq)]
pub struct Observation {
    pub ts: Timestamp,
    pub joints: JointVector,
    pub images: Vec<(String, ImagePayload)>,
}

pub trait ObservationSource {
    /// Latest observation, `None` when some controller has not reported yet.
    fn observe(&self) -> Option<Observation>;
}

/// Reads the latest buffered samples of a running [`Session`]; never
/// blocks on device latency.
#[derive(Clone)]
pub struct SessionObserver {
    streams: Arc<Vec<DeviceStream>>,
    controllers: usize,
    clock: Clock,
}

impl ObservationSource for SessionObserver {
    fn observe(&self) -> Option<Observation> {
        let mut parts = Vec::with_capacity(self.controllers);
        let mut images = Vec::new();
        for (i, s) in self.streams.iter().enumerate() {
            let latest = s.buffer.latest();
            if i < self.controllers {
                parts.push(latest?.payload.as_joints()?.clone());
            } else if let Some(sample) = latest {
                if let Payload::Image(img) = &sample.payload {
                    images.push((s.device.desc.id.clone(), img.clone()));
                }
            }
        }
        Some(Observation { ts: self.clock.now(), joints: JointVector::concat(&parts).ok()?, images })
    }
}

/// Reads every device directly, blocking on each read.
pub struct DirectObserver {
    robot: RobotHandle,
}

impl DirectObserver {
    pub fn new(robot: &RobotHandle) -> Self {
        DirectObserver { robot: robot.clone() }
    }
}

impl ObservationSource for DirectObserver {
    fn observe(&self) -> Option<Observation> {
        let (ts, joints) = self.robot.read_joint_state().ok()?;
        let images = self
            .robot
            .sensors()
            .iter()
            .filter_map(|s| match s.driver.read().ok()?.payload {
                Payload::Image(img) => Some((s.desc.id.clone(), img)),
                _ => None,
            })
            .collect();
        Some(Observation { ts, joints, images })
    }
}
