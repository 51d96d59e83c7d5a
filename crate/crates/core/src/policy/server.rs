use std::io::{BufReader, BufWriter};
use std::net::{SocketAddr, TcpListener, TcpStream};
use std::sync::atomic::{AtomicBool, Ordering};
use std::sync::Arc;
use std::thread::JoinHandle;

use super::codec::{read_message, write_message, ActionMessage, ErrorMessage, ObservationMessage, PolicyMessage, ReadError};
use super::PolicyError;
use crate::types::{Episode, JointVector, RobotConfig};

/// Deterministic stand-in for a learned policy: replays an episode's
/// action stream in chunks.
#[derive(Debug, Clone)]
pub struct ReplayPolicy {
    /// Expert action in force at each frame's tick.
    actions: Vec<JointVector>,
    config: RobotConfig,
    default_horizon: u32,
}

impl ReplayPolicy {
    pub fn from_episode(ep: &Episode, default_horizon: u32) -> Result<Self, PolicyError> {
        if default_horizon == 0 {
            return Err(PolicyError::Config("horizon must be >= 1".into()));
        }
        let v = ep.validate();
        if !v.is_empty() {
            return Err(PolicyError::Config(format!("episode '{}' is invalid: {}", ep.id, v[0])));
        }
        let first = ep
            .stream_samples(crate::types::ACTION_STREAM)
            .and_then(|s| s.first())
            .and_then(|s| s.payload.as_joints().cloned())
            .ok_or_else(|| PolicyError::Config(format!("episode '{}' has no action stream", ep.id)))?;
        // frames before the first command fall back to the first action
        let actions = ep.frames.iter().map(|f| ep.action_at(f.tick_ts).cloned().unwrap_or_else(|| first.clone())).collect();
        Ok(ReplayPolicy { actions, config: ep.config.clone(), default_horizon })
    }

    pub fn len(&self) -> usize {
        self.actions.len()
    }

    pub fn is_empty(&self) -> bool {
        self.actions.is_empty()
    }

    /// Answers one request and advances `cursor` by the horizon. Past the
    /// end the final action is repeated.
    pub fn respond(&self, cursor: &mut usize, req: &ObservationMessage) -> Result<ActionMessage, ErrorMessage> {
        let dim = self.config.action_dim();
        if req.joints.dim() != dim {
            return Err(ErrorMessage {
                seq: req.seq,
                code: "dim_mismatch".into(),
                message: format!("observation has {} joints, policy expects {dim}", req.joints.dim()),
            });
        }
        let h = req.horizon.unwrap_or(self.default_horizon);
        if h == 0 {
            return Err(ErrorMessage { seq: req.seq, code: "bad_horizon".into(), message: "horizon must be >= 1".into() });
        }
        let last = self.actions.len() - 1;
        let mut clamped = false;
        let actions = (0..h as usize)
            .map(|i| {
                let (q, c) = self.config.clamp_to_limits(&self.actions[(*cursor + i).min(last)]);
                clamped |= c;
                q
            })
            .collect();
        *cursor += h as usize;
        Ok(ActionMessage { seq: req.seq, horizon: h, actions, clamped })
    }
}

/// A running replay-policy server. One connection is served at a time; the
/// replay cursor starts at frame 0 for every connection.
pub struct PolicyServer {
    addr: SocketAddr,
    stop: Arc<AtomicBool>,
    thread: Option<JoinHandle<()>>,
}

pub fn serve_replay_policy(ep: &Episode, bind: &str, default_horizon: u32) -> Result<PolicyServer, PolicyError> {
    let policy = ReplayPolicy::from_episode(ep, default_horizon)?;
    let listener = TcpListener::bind(bind).map_err(|e| PolicyError::Io { context: format!("bind {bind}"), source: e })?;
    let addr = listener.local_addr().map_err(|e| PolicyError::Io { context: "local_addr".into(), source: e })?;
    let stop = Arc::new(AtomicBool::new(false));
    let flag = stop.clone();
    let thread = std::thread::Builder::new()
        .name("replay-policy".into())
        .spawn(move || {
            for conn in listener.incoming() {
                if flag.load(Ordering::SeqCst) {
                    break;
                }
                match conn {
                    Ok(stream) => {
                        if let Err(e) = serve_connection(&policy, stream) {
                            tracing::debug!("policy connection ended: {e}");
                        }
                    }
                    Err(e) => tracing::warn!("accept failed: {e}"),
                }
            }
        })
        .map_err(|e| PolicyError::Io { context: "spawn server".into(), source: e })?;
    Ok(PolicyServer { addr, stop, thread: Some(thread) })
}

fn serve_connection(policy: &ReplayPolicy, stream: TcpStream) -> std::io::Result<()> {
    stream.set_nodelay(true)?;
    let mut reader = BufReader::new(stream.try_clone()?);
    let mut writer = BufWriter::new(stream);
    let mut cursor = 0usize;
    let mut last_seq: Option<u64> = None;
    loop {
        let reply = match read_message(&mut reader) {
            Ok(PolicyMessage::Observation(obs)) => {
                if last_seq.is_some_and(|s| obs.seq <= s) {
                    PolicyMessage::Error(ErrorMessage {
                        seq: obs.seq,
                        code: "seq_order".into(),
                        message: format!("seq {} does not follow {}", obs.seq, last_seq.unwrap_or(0)),
                    })
                } else {
                    last_seq = Some(obs.seq);
                    match policy.respond(&mut cursor, &obs) {
                        Ok(a) => PolicyMessage::Action(a),
                        Err(e) => PolicyMessage::Error(e),
                    }
                }
            }
            Ok(_) => PolicyMessage::Error(ErrorMessage {
                seq: 0,
                code: "unexpected_type".into(),
                message: "server accepts observation messages only".into(),
            }),
            Err(ReadError::Body(e)) => PolicyMessage::Error(ErrorMessage { seq: 0, code: "malformed".into(), message: e.to_string() }),
            Err(ReadError::Framing(e)) => {
                let msg = PolicyMessage::Error(ErrorMessage { seq: 0, code: "framing".into(), message: e.to_string() });
                write_message(&mut writer, &msg)?;
                return Ok(());
            }
            Err(ReadError::Io(e)) if e.kind() == std::io::ErrorKind::UnexpectedEof => return Ok(()),
            Err(ReadError::Io(e)) => return Err(e),
        };
        write_message(&mut writer, &reply)?;
    }
}

impl PolicyServer {
    pub fn local_addr(&self) -> SocketAddr {
        self.addr
    }

    /// Blocks until the server thread exits (it runs until shutdown).
    pub fn wait(mut self) {
        if let Some(t) = self.thread.take() {
            let _ = t.join();
        }
    }

    pub fn shutdown(mut self) {
        self.stop_thread();
    }

    fn stop_thread(&mut self) {
        self.stop.store(true, Ordering::SeqCst);
        // unblock accept()
        let _ = TcpStream::connect(self.addr);
        if let Some(t) = self.thread.take() {
            let _ = t.join();
        }
    }
}

impl Drop for PolicyServer {
    fn drop(&mut self) {
        if self.thread.is_some() {
            self.stop_thread();
        }
    }
}
