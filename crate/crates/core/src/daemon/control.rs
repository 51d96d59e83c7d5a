use std::path::PathBuf;
use std::sync::mpsc::{Receiver, RecvTimeoutError, Sender};
use std::time::{Duration, Instant};

use serde_json::{json, Value};
use tokio::sync::{oneshot, watch};
use tracing::{info, warn};

use super::machine::{apply, ControlMode, SessionState};
use super::protocol::{Command, EpisodeItem, MetricsView, RecordAction, Reply, Request, SessionView};
use super::DaemonConfig;
use crate::collector::{CollectorConfig, CollectorMetrics, Mode, Session, StopCondition};
use crate::control::{execute_playback, validate_plan, Clutch, ExecutionLog, TeleopMapping, TrajectoryPlan};
use crate::device::RobotHandle;
use crate::store::{self, EpisodeManifest};
use crate::types::JointVector;

pub(crate) type ReplyTx = oneshot::Sender<Vec<Reply>>;

pub(crate) enum Event {
    Client(Request, ReplyTx),
    Bench(Result<CollectorMetrics, String>, Option<Value>, ReplyTx),
    PlaybackDone(Result<ExecutionLog, String>),
    Shutdown,
}

/// Owns the robot and every piece of session state. Runs on one thread and
/// is driven only through [`Event`]s.
pub(crate) struct Controller {
    cfg: DaemonConfig,
    robot: RobotHandle,
    state: SessionState,
    mapping: TeleopMapping,
    leader: JointVector,
    target: JointVector,
    session: Option<Session>,
    busy: Option<&'static str>,
    last_episode: Option<String>,
    last_error: Option<String>,
    last_metrics: Option<(&'static str, CollectorMetrics)>,
    events: Sender<Event>,
    snapshots: watch::Sender<String>,
}

impl Controller {
    pub(crate) fn new(
        cfg: DaemonConfig,
        robot: RobotHandle,
        events: Sender<Event>,
        snapshots: watch::Sender<String>,
    ) -> Result<Self, super::DaemonError> {
        let mapping = TeleopMapping::for_config(robot.config(), cfg.filter_alpha)?;
        let (_, q) = robot.read_joint_state().map_err(crate::control::ControlError::from)?;
        Ok(Controller {
            cfg,
            robot,
            state: SessionState::default(),
            mapping,
            leader: q.clone(),
            target: q,
            session: None,
            busy: None,
            last_episode: None,
            last_error: None,
            last_metrics: None,
            events,
            snapshots,
        })
    }

    pub(crate) fn run(mut self, rx: Receiver<Event>) {
        let tick = Duration::from_secs_f64(1.0 / self.cfg.control_rate_hz);
        let snap = Duration::from_secs_f64(1.0 / self.cfg.snapshot_hz);
        let (mut next_tick, mut next_snap) = (Instant::now(), Instant::now());
        loop {
            let wait = next_tick.min(next_snap).saturating_duration_since(Instant::now());
            match rx.recv_timeout(wait) {
                Ok(Event::Shutdown) | Err(RecvTimeoutError::Disconnected) => break,
                Ok(ev) => self.handle(ev),
                Err(RecvTimeoutError::Timeout) => {}
            }
            let now = Instant::now();
            if now >= next_tick {
                self.control_tick();
                next_tick = (next_tick + tick).max(now);
            }
            if now >= next_snap {
                self.publish();
                next_snap = (next_snap + snap).max(now);
            }
        }
        if self.session.is_some() {
            if let Err(e) = self.stop_recording() {
                warn!("recording lost at shutdown: {e}");
            }
        }
    }

    fn control_tick(&mut self) {
        if self.state.mode != ControlMode::Teleop || self.mapping.clutch() != Clutch::Engaged {
            return;
        }
        match self.mapping.step(&self.leader, &self.target) {
            Ok(cmd) => match self.robot.command(&cmd) {
                Ok(_) => self.target = cmd,
                Err(e) => self.last_error = Some(e.to_string()),
            },
            Err(e) => self.last_error = Some(e.to_string()),
        }
    }

    pub(crate) fn snapshot(&self, id: Option<Value>) -> Reply {
        let joints = match self.robot.read_joint_state() {
            Ok((_, q)) => q.values().to_vec(),
            Err(_) => Vec::new(),
        };
        let metrics = match (&self.session, &self.last_metrics) {
            (Some(s), _) => {
                let (frames, hz) = s.progress();
                MetricsView { source: "recording".into(), effective_hz: hz, frames, ..Default::default() }
            }
            (None, Some((src, m))) => MetricsView {
                source: (*src).into(),
                effective_hz: Some(m.effective_hz),
                frames: m.frames,
                overruns: m.overruns,
                degraded: m.degraded,
                streams: m.streams.clone(),
            },
            (None, None) => MetricsView { source: "none".into(), ..Default::default() },
        };
        Reply::State {
            id,
            session: SessionView {
                state: self.state,
                robot: self.robot.config().name().to_string(),
                busy: self.busy.map(str::to_string),
                last_episode: self.last_episode.clone(),
                last_error: self.last_error.clone(),
            },
            joints,
            target: self.target.values().to_vec(),
            metrics,
        }
    }

    pub(crate) fn publish(&self) {
        self.snapshots.send_replace(self.snapshot(None).to_json());
    }

    fn handle(&mut self, ev: Event) {
        match ev {
            Event::Client(req, reply) => {
                let out = self.command(req, reply);
                if let Some((tx, replies)) = out {
                    let _ = tx.send(replies);
                }
            }
            Event::Bench(result, id, reply) => {
                self.busy = None;
                let r = match result {
                    Ok(m) => {
                        let v = serde_json::to_value(&m).ok();
                        self.last_metrics = Some(("bench", m));
                        Reply::ack(id, "bench", v)
                    }
                    Err(e) => {
                        self.last_error = Some(e.clone());
                        Reply::error(id, "bench_failed", e)
                    }
                };
                let _ = reply.send(vec![r]);
                self.publish();
            }
            Event::PlaybackDone(result) => {
                self.busy = None;
                match result {
                    Ok(log) => info!("playback finished, {} commands", log.commanded.len()),
                    Err(e) => self.last_error = Some(e),
                }
                self.target = self.robot.action_log().latest().and_then(|s| s.payload.as_joints().cloned()).unwrap_or(self.target.clone());
                self.publish();
            }
            Event::Shutdown => {}
        }
    }

    /// Applies one client command. Returns the reply to send now, or `None`
    /// when a background job answers later.
    fn command(&mut self, req: Request, reply: ReplyTx) -> Option<(ReplyTx, Vec<Reply>)> {
        let Request { id, command } = req;
        let name = command.name();
        let next = match apply(self.state, command.transition()) {
            Ok(s) => s,
            Err(r) => return Some((reply, vec![Reply::error(id, r.code, r.message)])),
        };
        if let Some(job) = self.busy {
            let blocked = match &command {
                Command::SetMode { mode } => *mode != self.state.mode,
                Command::Play { .. } | Command::Bench { .. } => true,
                _ => false,
            };
            if blocked {
                return Some((reply, vec![Reply::error(id, "busy", format!("{job} in progress"))]));
            }
        }
        let result: Result<Option<Value>, (String, String)> = match &command {
            Command::Subscribe => {
                return Some((reply, vec![Reply::ack(id.clone(), name, None), self.snapshot(id)]));
            }
            Command::ListEpisodes => {
                return Some(match self.episodes() {
                    Ok(items) => (reply, vec![Reply::Episodes { id, items }]),
                    Err(e) => (reply, vec![Reply::error(id, "store", e)]),
                });
            }
            Command::SetMode { mode } => self.set_mode(*mode),
            Command::Jog { joint, delta_rad } => self.jog(*joint, *delta_rad),
            Command::Clutch { engaged } => self.clutch(*engaged),
            Command::Record { action: RecordAction::Start, task } => self.start_recording(task),
            Command::Record { action: RecordAction::Stop, .. } => self.stop_recording().map_err(|e| ("store".into(), e)),
            Command::Play { plan_path } => self.play(plan_path),
            Command::Bench { mode } => {
                self.bench(*mode, id, reply);
                self.state = next;
                return None;
            }
        };
        let r = match result {
            Ok(v) => {
                self.state = next;
                Reply::ack(id, name, v)
            }
            Err((code, message)) => Reply::error(id, code, message),
        };
        self.publish();
        Some((reply, vec![r]))
    }

    fn set_mode(&mut self, mode: ControlMode) -> Result<Option<Value>, (String, String)> {
        if mode == self.state.mode {
            return Ok(None);
        }
        self.mapping.release();
        if mode == ControlMode::Teleop {
            self.leader = self.target.clone();
            self.mapping.engage(&self.leader, &self.target).map_err(|e| ("control".to_string(), e.to_string()))?;
        }
        Ok(None)
    }

    fn jog(&mut self, joint: usize, delta: f64) -> Result<Option<Value>, (String, String)> {
        if joint >= self.leader.dim() || !delta.is_finite() {
            return Err(("bad_request".into(), format!("joint must be < {} and delta finite", self.leader.dim())));
        }
        let mut v = self.leader.values().to_vec();
        v[joint] += delta;
        self.leader = JointVector::new(v).map_err(|e| ("bad_request".to_string(), e.to_string()))?;
        Ok(Some(json!({ "leader": self.leader.values() })))
    }

    fn clutch(&mut self, engaged: bool) -> Result<Option<Value>, (String, String)> {
        if engaged {
            self.mapping.engage(&self.leader, &self.target).map_err(|e| ("control".to_string(), e.to_string()))?;
        } else {
            self.mapping.release();
        }
        Ok(None)
    }

    fn start_recording(&mut self, task: &str) -> Result<Option<Value>, (String, String)> {
        let cfg = CollectorConfig::new(self.cfg.record_rate_hz, self.cfg.record_mode, StopCondition::Manual).with_task(task);
        let s = Session::start(&self.robot, cfg).map_err(|e| ("collector".to_string(), e.to_string()))?;
        self.session = Some(s);
        Ok(None)
    }

    fn stop_recording(&mut self) -> Result<Option<Value>, String> {
        let session = self.session.take().ok_or("no recording is running")?;
        let (ep, metrics) = session.finish().map_err(|e| e.to_string())?;
        let dir = self.cfg.episodes_dir.join(&ep.id);
        store::write_episode(&ep, &dir).map_err(|e| e.to_string())?;
        self.last_episode = Some(ep.id.clone());
        let out = json!({ "episode_id": ep.id, "path": dir.display().to_string(), "frames": ep.frames.len() });
        self.last_metrics = Some(("recording", metrics));
        Ok(Some(out))
    }

    fn play(&mut self, path: &str) -> Result<Option<Value>, (String, String)> {
        let plan = TrajectoryPlan::load(PathBuf::from(path)).map_err(|e| ("plan".to_string(), e.to_string()))?;
        if let Err(v) = validate_plan(&plan, self.robot.config()) {
            let msg: Vec<String> = v.iter().map(|x| x.to_string()).collect();
            return Err(("invalid_plan".into(), msg.join("; ")));
        }
        let (robot, events, n) = (self.robot.clone(), self.events.clone(), plan.waypoints.len());
        std::thread::Builder::new()
            .name("daemon-playback".into())
            .spawn(move || {
                let r = execute_playback(&robot, &plan).map_err(|e| e.to_string());
                let _ = events.send(Event::PlaybackDone(r));
            })
            .map_err(|e| ("io".to_string(), e.to_string()))?;
        self.busy = Some("playback");
        Ok(Some(json!({ "waypoints": n })))
    }

    fn bench(&mut self, mode: Mode, id: Option<Value>, reply: ReplyTx) {
        let (robot, events) = (self.robot.clone(), self.events.clone());
        let cfg = CollectorConfig::for_duration(self.cfg.record_rate_hz, mode, self.cfg.bench_duration_s);
        self.busy = Some("bench");
        let spawned = std::thread::Builder::new().name("daemon-bench".into()).spawn(move || {
            let r = Session::start(&robot, cfg).and_then(Session::wait).map(|(_, m)| m).map_err(|e| e.to_string());
            let _ = events.send(Event::Bench(r, id, reply));
        });
        if let Err(e) = spawned {
            self.busy = None;
            self.last_error = Some(e.to_string());
        }
        self.publish();
    }

    fn episodes(&self) -> Result<Vec<EpisodeItem>, String> {
        let dirs = store::list_episodes(&self.cfg.episodes_dir).map_err(|e| e.to_string())?;
        dirs.into_iter()
            .map(|d| {
                let m = EpisodeManifest::load(&d).map_err(|e| e.to_string())?;
                Ok(EpisodeItem {
                    id: m.id,
                    task: m.task,
                    frame_count: m.frame_count,
                    session_epoch: m.session_epoch,
                    path: d.display().to_string(),
                })
            })
            .collect()
    }
}
