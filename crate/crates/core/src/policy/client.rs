use std::io::{BufReader, BufWriter};
use std::net::{TcpStream, ToSocketAddrs};
use std::time::{Duration, Instant};

use serde::{Deserialize, Serialize};

use super::codec::{read_message, write_message, ActionMessage, CameraImage, ObservationMessage, PolicyMessage, ReadError};
use super::PolicyError;
use crate::collector::ObservationSource;
use crate::control::ExecutionLog;
use crate::device::RobotHandle;
use crate::time::grid_offset_ns;
use crate::types::JointVector;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PolicyEndpoint {
    pub host: String,
    pub port: u16,
    pub connect_timeout_ms: u64,
    /// Receive deadline; `None` uses command period times horizon.
    pub read_timeout_ms: Option<u64>,
}

impl PolicyEndpoint {
    pub fn new(host: impl Into<String>, port: u16) -> Self {
        PolicyEndpoint { host: host.into(), port, connect_timeout_ms: 2000, read_timeout_ms: None }
    }

    pub fn parse(s: &str) -> Result<Self, PolicyError> {
        let (host, port) = s.rsplit_once(':').ok_or_else(|| PolicyError::Config(format!("endpoint '{s}' is not host:port")))?;
        let port = port.parse().map_err(|_| PolicyError::Config(format!("bad port in '{s}'")))?;
        Ok(Self::new(host, port))
    }
}

pub struct PolicyClient {
    reader: BufReader<TcpStream>,
    writer: BufWriter<TcpStream>,
    next_seq: u64,
}

impl PolicyClient {
    pub fn connect(ep: &PolicyEndpoint) -> Result<Self, PolicyError> {
        let target = format!("{}:{}", ep.host, ep.port);
        let io = |source| PolicyError::Connect { endpoint: target.clone(), source };
        let addr = target
            .to_socket_addrs()
            .map_err(io)?
            .next()
            .ok_or_else(|| PolicyError::Config(format!("'{target}' did not resolve")))?;
        let stream = TcpStream::connect_timeout(&addr, Duration::from_millis(ep.connect_timeout_ms.max(1))).map_err(io)?;
        stream.set_nodelay(true).map_err(io)?;
        let reader = BufReader::new(stream.try_clone().map_err(io)?);
        Ok(PolicyClient { reader, writer: BufWriter::new(stream), next_seq: 1 })
    }

    pub fn set_read_timeout(&self, t: Duration) -> Result<(), PolicyError> {
        self.reader
            .get_ref()
            .set_read_timeout(Some(t.max(Duration::from_millis(1))))
            .map_err(|source| PolicyError::Io { context: "set read timeout".into(), source })
    }

    /// Sends one observation (its `seq` is assigned here) and waits for the
    /// matching reply. Replies to earlier, timed-out requests are skipped.
    pub fn query(&mut self, mut obs: ObservationMessage) -> Result<ActionMessage, PolicyError> {
        obs.seq = self.next_seq;
        self.next_seq += 1;
        write_message(&mut self.writer, &PolicyMessage::Observation(obs.clone()))
            .map_err(|source| PolicyError::Io { context: "send observation".into(), source })?;
        loop {
            match read_message(&mut self.reader) {
                Ok(PolicyMessage::Action(a)) if a.seq == obs.seq => return Ok(a),
                Ok(PolicyMessage::Error(e)) if e.seq == obs.seq || e.seq == 0 => return Err(PolicyError::Server { code: e.code, message: e.message }),
                Ok(PolicyMessage::Action(_)) | Ok(PolicyMessage::Error(_)) => continue,
                Ok(PolicyMessage::Observation(_)) => return Err(PolicyError::Protocol("server sent an observation".into())),
                Err(ReadError::Io(e)) if matches!(e.kind(), std::io::ErrorKind::WouldBlock | std::io::ErrorKind::TimedOut) => {
                    return Err(PolicyError::Timeout { seq: obs.seq })
                }
                Err(ReadError::Io(source)) => return Err(PolicyError::Io { context: "receive action".into(), source }),
                Err(ReadError::Body(e) | ReadError::Framing(e)) => return Err(PolicyError::Protocol(e.to_string())),
            }
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum TimeoutPolicy {
    /// Keep commanding the last action and query again next chunk.
    Hold,
    Abort,
}

#[derive(Debug, Clone, PartialEq)]
pub struct PolicyLoopConfig {
    pub endpoint: PolicyEndpoint,
    pub horizon: u32,
    pub rate_hz: f64,
    pub steps: u64,
    pub on_timeout: TimeoutPolicy,
    /// Query before every command and execute only the first action.
    pub requery_every_tick: bool,
}

impl PolicyLoopConfig {
    pub fn new(endpoint: PolicyEndpoint, steps: u64) -> Self {
        PolicyLoopConfig { endpoint, horizon: 8, rate_hz: 30.0, steps, on_timeout: TimeoutPolicy::Hold, requery_every_tick: false }
    }
}

/// Closed-loop execution against a policy server. The connection is made
/// before anything is commanded. Commands land on the `rate_hz` grid from
/// the loop start; the next chunk is requested right after the last command
/// of the current one.
pub fn run_policy_loop(robot: &RobotHandle, cfg: &PolicyLoopConfig, observer: &dyn ObservationSource) -> Result<ExecutionLog, PolicyError> {
    if cfg.horizon == 0 || !(cfg.rate_hz > 0.0 && cfg.rate_hz.is_finite()) {
        return Err(PolicyError::Config("horizon must be >= 1 and rate_hz > 0".into()));
    }
    let mut client = PolicyClient::connect(&cfg.endpoint)?;
    let mut log = ExecutionLog::default();
    if cfg.steps == 0 {
        return Ok(log);
    }
    let h = if cfg.requery_every_tick { 1 } else { cfg.horizon };
    let deadline = match cfg.endpoint.read_timeout_ms {
        Some(ms) => Duration::from_millis(ms),
        None => Duration::from_secs_f64(h as f64 / cfg.rate_hz),
    };
    client.set_read_timeout(deadline)?;

    let clock = robot.clock().clone();
    let start = clock.now();
    let mut k = 0u64;
    let mut last_cmd: Option<JointVector> = None;
    while k < cfg.steps {
        let obs = observe(robot, observer)?;
        let sent = Instant::now();
        let chunk = match client.query(ObservationMessage {
            seq: 0,
            tick_ts: obs.ts,
            joints: obs.joints.clone(),
            images: obs.images.into_iter().map(|(id, image)| CameraImage { id, image }).collect(),
            horizon: Some(h),
        }) {
            Ok(a) => {
                log.round_trips_ns.push(sent.elapsed().as_nanos() as u64);
                if a.clamped {
                    log.violations.push(format!("server clamped chunk {}", a.seq));
                }
                a.actions
            }
            Err(PolicyError::Timeout { seq }) => {
                log.violations.push(format!("request {seq} timed out after {deadline:?}"));
                if cfg.on_timeout == TimeoutPolicy::Abort {
                    return Err(PolicyError::Aborted { seq, log: Box::new(log) });
                }
                vec![last_cmd.clone().unwrap_or(obs.joints); h as usize]
            }
            Err(e) => return Err(e),
        };
        for q in chunk.iter().take(h as usize) {
            if k >= cfg.steps {
                break;
            }
            clock.sleep_until(start + grid_offset_ns(k, cfg.rate_hz));
            let (ts, clamped) = robot.command(q)?;
            if clamped {
                log.violations.push(format!("command at {ts} clamped to limits"));
            }
            log.commanded.push((ts, q.clone()));
            if let Some(m) = observer.observe() {
                log.measured.push((m.ts, m.joints));
            }
            last_cmd = Some(q.clone());
            k += 1;
        }
    }
    Ok(log)
}

fn observe(robot: &RobotHandle, observer: &dyn ObservationSource) -> Result<crate::collector::Observation, PolicyError> {
    if let Some(o) = observer.observe() {
        return Ok(o);
    }
    crate::collector::DirectObserver::new(robot)
        .observe()
        .ok_or_else(|| PolicyError::Protocol("no observation available".into()))
}
