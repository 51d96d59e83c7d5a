//! Long-running control daemon with a JSON-over-WebSocket bridge.
//!
//! One control thread owns the robot and the session state. Each WebSocket
//! connection forwards parsed commands to it over a channel, relays the
//! replies, and streams state snapshots published at 10 Hz.

mod control;
pub mod machine;
pub mod protocol;

use std::net::SocketAddr;
use std::path::PathBuf;
use std::sync::mpsc;
use std::thread::JoinHandle;

use futures_util::{SinkExt, StreamExt};
use serde_json::Value;
use thiserror::Error;
use tokio::net::{TcpListener, TcpStream};
use tokio::sync::{oneshot, watch};
use tokio_tungstenite::tungstenite::Message;
use tracing::{debug, info};

pub use machine::{apply, ControlMode, Rejection, SessionState, Transition};
pub use protocol::{Command, EpisodeItem, MetricsView, RecordAction, Reply, Request, SessionView};

use crate::collector::Mode;
use crate::control::{ControlError, DEFAULT_FILTER_ALPHA};
use crate::sim::{RigConfig, SimError, SimOptions, SimRig};
use crate::time::Clock;
use control::{Controller, Event};

#[derive(Debug, Error)]
pub enum DaemonError {
    #[error(transparent)]
    Sim(#[from] SimError),
    #[error(transparent)]
    Control(#[from] ControlError),
    #[error("bind {addr}: {source}")]
    Bind { addr: SocketAddr, source: std::io::Error },
    #[error("daemon runtime: {0}")]
    Runtime(std::io::Error),
    #[error("invalid daemon config: {0}")]
    Config(String),
}

#[derive(Debug, Clone, PartialEq)]
pub struct DaemonConfig {
    pub rig: RigConfig,
    pub bind: SocketAddr,
    pub episodes_dir: PathBuf,
    /// Collector rate for recordings and benches.
    pub record_rate_hz: f64,
    pub record_mode: Mode,
    /// Teleop control loop rate.
    pub control_rate_hz: f64,
    pub snapshot_hz: f64,
    pub bench_duration_s: f64,
    pub filter_alpha: f64,
}

impl DaemonConfig {
    pub fn new(rig: RigConfig, bind: SocketAddr, episodes_dir: impl Into<PathBuf>) -> Self {
        DaemonConfig {
            rig,
            bind,
            episodes_dir: episodes_dir.into(),
            record_rate_hz: 30.0,
            record_mode: Mode::Parallel,
            control_rate_hz: 50.0,
            snapshot_hz: 10.0,
            bench_duration_s: 2.0,
            filter_alpha: DEFAULT_FILTER_ALPHA,
        }
    }

    fn validate(&self) -> Result<(), DaemonError> {
        for (name, v) in [
            ("record_rate_hz", self.record_rate_hz),
            ("control_rate_hz", self.control_rate_hz),
            ("snapshot_hz", self.snapshot_hz),
            ("bench_duration_s", self.bench_duration_s),
        ] {
            if !(v > 0.0 && v.is_finite()) {
                return Err(DaemonError::Config(format!("{name} must be > 0")));
            }
        }
        self.rig.validate()?;
        Ok(())
    }
}

/// A running daemon. Dropping it shuts it down.
pub struct Daemon {
    addr: SocketAddr,
    events: mpsc::Sender<Event>,
    stop: Option<oneshot::Sender<()>>,
    control: Option<JoinHandle<()>>,
    server: Option<JoinHandle<()>>,
}

/// Builds the simulated rig on the wall clock, binds the WebSocket port and
/// starts the control thread and the server.
pub fn daemon_serve(cfg: DaemonConfig) -> Result<Daemon, DaemonError> {
    cfg.validate()?;
    let rig = SimRig::build(&cfg.rig, Clock::real(), SimOptions::default())?;
    let listener = std::net::TcpListener::bind(cfg.bind).map_err(|source| DaemonError::Bind { addr: cfg.bind, source })?;
    listener.set_nonblocking(true).map_err(DaemonError::Runtime)?;
    let addr = listener.local_addr().map_err(DaemonError::Runtime)?;

    let (events, rx) = mpsc::channel();
    let (snap_tx, snap_rx) = watch::channel(String::new());
    let controller = Controller::new(cfg, rig.robot, events.clone(), snap_tx)?;
    controller.publish();
    let control = std::thread::Builder::new()
        .name("daemon-control".into())
        .spawn(move || controller.run(rx))
        .map_err(DaemonError::Runtime)?;

    let runtime = tokio::runtime::Builder::new_multi_thread()
        .worker_threads(2)
        .enable_all()
        .build()
        .map_err(DaemonError::Runtime)?;
    let (stop_tx, stop_rx) = oneshot::channel();
    let ev = events.clone();
    let server = std::thread::Builder::new()
        .name("daemon-ws".into())
        .spawn(move || {
            runtime.block_on(async move {
                let listener = match TcpListener::from_std(listener) {
                    Ok(l) => l,
                    Err(e) => return tracing::error!("listener: {e}"),
                };
                info!("daemon listening on ws://{addr}");
                tokio::select! {
                    _ = accept_loop(listener, ev, snap_rx) => {}
                    _ = stop_rx => {}
                }
            });
            runtime.shutdown_background();
        })
        .map_err(DaemonError::Runtime)?;
    Ok(Daemon { addr, events, stop: Some(stop_tx), control: Some(control), server: Some(server) })
}

impl Daemon {
    pub fn local_addr(&self) -> SocketAddr {
        self.addr
    }

    /// Blocks until the server stops.
    pub fn wait(mut self) {
        if let Some(h) = self.server.take() {
            let _ = h.join();
        }
    }

    /// Stops the server, finalizes any running recording and joins the
    /// threads.
    pub fn shutdown(mut self) {
        self.stop_threads();
    }

    fn stop_threads(&mut self) {
        if let Some(tx) = self.stop.take() {
            let _ = tx.send(());
        }
        let _ = self.events.send(Event::Shutdown);
        for h in [self.server.take(), self.control.take()].into_iter().flatten() {
            let _ = h.join();
        }
    }
}

impl Drop for Daemon {
    fn drop(&mut self) {
        self.stop_threads();
    }
}

async fn accept_loop(listener: TcpListener, events: mpsc::Sender<Event>, snapshots: watch::Receiver<String>) {
    loop {
        let Ok((stream, peer)) = listener.accept().await else { continue };
        let (events, snapshots) = (events.clone(), snapshots.clone());
        tokio::spawn(async move {
            if let Err(e) = connection(stream, events, snapshots).await {
                debug!("connection {peer}: {e}");
            }
        });
    }
}

async fn connection(
    stream: TcpStream,
    events: mpsc::Sender<Event>,
    mut snapshots: watch::Receiver<String>,
) -> Result<(), tokio_tungstenite::tungstenite::Error> {
    let ws = tokio_tungstenite::accept_async(stream).await?;
    let (mut sink, mut source) = ws.split();
    let first = snapshots.borrow_and_update().clone();
    sink.send(Message::text(first)).await?;
    let (out_tx, mut out_rx) = tokio::sync::mpsc::unbounded_channel::<Reply>();
    loop {
        tokio::select! {
            changed = snapshots.changed() => {
                if changed.is_err() {
                    break;
                }
                let s = snapshots.borrow_and_update().clone();
                sink.send(Message::text(s)).await?;
            }
            reply = out_rx.recv() => {
                if let Some(r) = reply {
                    sink.send(Message::text(r.to_json())).await?;
                }
            }
            msg = source.next() => match msg {
                Some(Ok(Message::Text(t))) => {
                    match Request::parse(t.as_str()) {
                        Ok(req) => {
                            let (tx, rx) = oneshot::channel();
                            if events.send(Event::Client(req, tx)).is_err() {
                                break;
                            }
                            let out = out_tx.clone();
                            tokio::spawn(async move {
                                for r in rx.await.unwrap_or_default() {
                                    let _ = out.send(r);
                                }
                            });
                        }
                        Err(e) => {
                            let id = serde_json::from_str::<Value>(t.as_str()).ok().and_then(|v| v.get("id").cloned());
                            sink.send(Message::text(Reply::error(id, "bad_request", e).to_json())).await?;
                        }
                    }
                }
                Some(Ok(Message::Close(_))) | None | Some(Err(_)) => break,
                Some(Ok(_)) => {}
            }
        }
    }
    Ok(())
}
