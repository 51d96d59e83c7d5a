//! Policy deployment bridge: the observation/action wire protocol, a
//! replay-policy server standing in for a learned model, and the
//! closed-loop client that executes action chunks on a robot.

pub mod codec;
mod client;
mod server;

use thiserror::Error;

pub use client::{run_policy_loop, PolicyClient, PolicyEndpoint, PolicyLoopConfig, TimeoutPolicy};
pub use codec::{
    decode_message, encode_message, read_message, write_message, ActionMessage, CameraImage, DecodeError, ErrorMessage,
    ObservationMessage, PolicyMessage, ReadError,
};
pub use server::{serve_replay_policy, PolicyServer, ReplayPolicy};

use crate::control::ExecutionLog;
use crate::device::CommandError;

#[derive(Debug, Error)]
pub enum PolicyError {
    #[error("cannot reach policy server at {endpoint}: {source}")]
    Connect { endpoint: String, source: std::io::Error },
    #[error("{context}: {source}")]
    Io { context: String, source: std::io::Error },
    #[error("no reply to request {seq} before the deadline")]
    Timeout { seq: u64 },
    #[error("aborted after request {seq} timed out")]
    Aborted { seq: u64, log: Box<ExecutionLog> },
    #[error("server error {code}: {message}")]
    Server { code: String, message: String },
    #[error("protocol violation: {0}")]
    Protocol(String),
    #[error("{0}")]
    Config(String),
    #[error(transparent)]
    Command(#[from] CommandError),
}
