//! JSON message shapes exchanged with console clients.

use std::collections::BTreeMap;

use serde::{Deserialize, Serialize};
use serde_json::Value;

use super::machine::{ControlMode, SessionState, Transition};
use crate::collector::{Mode, StalenessStats};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum RecordAction {
    Start,
    Stop,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "cmd", rename_all = "snake_case")]
pub enum Command {
    Subscribe,
    SetMode { mode: ControlMode },
    Jog { joint: usize, delta_rad: f64 },
    Clutch { engaged: bool },
    Record {
        action: RecordAction,
        #[serde(default)]
        task: String,
    },
    Play { plan_path: String },
    ListEpisodes,
    Bench { mode: Mode },
}

impl Command {
    pub fn name(&self) -> &'static str {
        match self {
            Command::Subscribe => "subscribe",
            Command::SetMode { .. } => "set_mode",
            Command::Jog { .. } => "jog",
            Command::Clutch { .. } => "clutch",
            Command::Record { .. } => "record",
            Command::Play { .. } => "play",
            Command::ListEpisodes => "list_episodes",
            Command::Bench { .. } => "bench",
        }
    }

    pub fn transition(&self) -> Transition {
        match self {
            Command::Subscribe => Transition::Subscribe,
            Command::SetMode { mode } => Transition::SetMode(*mode),
            Command::Jog { .. } => Transition::Jog,
            Command::Clutch { engaged } => Transition::Clutch(*engaged),
            Command::Record { action: RecordAction::Start, .. } => Transition::RecordStart,
            Command::Record { action: RecordAction::Stop, .. } => Transition::RecordStop,
            Command::Play { .. } => Transition::Play,
            Command::ListEpisodes => Transition::ListEpisodes,
            Command::Bench { .. } => Transition::Bench,
        }
    }
}

/// A client message: a command plus an optional correlation id.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Request {
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub id: Option<Value>,
    #[serde(flatten)]
    pub command: Command,
}

impl Request {
    pub fn parse(text: &str) -> Result<Request, String> {
        serde_json::from_str(text).map_err(|e| e.to_string())
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SessionView {
    #[serde(flatten)]
    pub state: SessionState,
    pub robot: String,
    /// Background job in progress: "playback" or "bench".
    pub busy: Option<String>,
    pub last_episode: Option<String>,
    pub last_error: Option<String>,
}

#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
pub struct MetricsView {
    /// "recording", "bench" or "none".
    pub source: String,
    pub effective_hz: Option<f64>,
    pub frames: u64,
    pub overruns: u64,
    pub degraded: u64,
    pub streams: BTreeMap<String, StalenessStats>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EpisodeItem {
    pub id: String,
    pub task: String,
    pub frame_count: u64,
    pub session_epoch: String,
    pub path: String,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "type", rename_all = "snake_case")]
pub enum Reply {
    State {
        #[serde(default, skip_serializing_if = "Option::is_none")]
        id: Option<Value>,
        session: SessionView,
        joints: Vec<f64>,
        /// Last commanded position.
        target: Vec<f64>,
        metrics: MetricsView,
    },
    Episodes {
        #[serde(default, skip_serializing_if = "Option::is_none")]
        id: Option<Value>,
        items: Vec<EpisodeItem>,
    },
    Error {
        #[serde(default, skip_serializing_if = "Option::is_none")]
        id: Option<Value>,
        code: String,
        message: String,
    },
    Ack {
        #[serde(default, skip_serializing_if = "Option::is_none")]
        id: Option<Value>,
        cmd: String,
        #[serde(default, skip_serializing_if = "Option::is_none")]
        result: Option<Value>,
    },
}

impl Reply {
    pub fn error(id: Option<Value>, code: impl Into<String>, message: impl Into<String>) -> Reply {
        Reply::Error { id, code: code.into(), message: message.into() }
    }

    pub fn ack(id: Option<Value>, cmd: &str, result: Option<Value>) -> Reply {
        Reply::Ack { id, cmd: cmd.into(), result }
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string(self).expect("serializable")
    }
}
