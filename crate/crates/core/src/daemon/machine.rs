//! Pure session state machine. The daemon consults it before acting on any
//! command, so a rejected command never touches the robot.

use serde::{Deserialize, Serialize};

use crate::control::Clutch;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ControlMode {
    Idle,
    Teleop,
    Playback,
    Policy,
}

impl ControlMode {
    pub const ALL: [ControlMode; 4] = [ControlMode::Idle, ControlMode::Teleop, ControlMode::Playback, ControlMode::Policy];
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct SessionState {
    pub mode: ControlMode,
    pub recording: bool,
    pub clutch: Clutch,
}

impl Default for SessionState {
    fn default() -> Self {
        SessionState { mode: ControlMode::Idle, recording: false, clutch: Clutch::Released }
    }
}

impl SessionState {
    /// Recording only in an active mode; the clutch only engages in teleop.
    pub fn is_consistent(&self) -> bool {
        !(self.recording && self.mode == ControlMode::Idle)
            && !(self.clutch == Clutch::Engaged && self.mode != ControlMode::Teleop)
    }
}

/// The command alphabet, stripped of payloads that do not affect state.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum Transition {
    Subscribe,
    SetMode(ControlMode),
    Jog,
    Clutch(bool),
    RecordStart,
    RecordStop,
    Play,
    ListEpisodes,
    Bench,
}

impl Transition {
    pub fn alphabet() -> Vec<Transition> {
        let mut v = vec![Transition::Subscribe];
        v.extend(ControlMode::ALL.map(Transition::SetMode));
        v.extend([
            Transition::Jog,
            Transition::Clutch(true),
            Transition::Clutch(false),
            Transition::RecordStart,
            Transition::RecordStop,
            Transition::Play,
            Transition::ListEpisodes,
            Transition::Bench,
        ]);
        v
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Rejection {
    pub code: &'static str,
    pub message: String,
}

fn reject(code: &'static str, message: impl Into<String>) -> Result<SessionState, Rejection> {
    Err(Rejection { code, message: message.into() })
}

/// Next state, or the reason the command is refused in `s`.
pub fn apply(s: SessionState, t: Transition) -> Result<SessionState, Rejection> {
    use ControlMode::*;
    match t {
        Transition::Subscribe | Transition::ListEpisodes => Ok(s),
        Transition::SetMode(m) => {
            if m == s.mode {
                return Ok(s);
            }
            if s.recording {
                return reject("recording_active", "stop recording before changing mode");
            }
            let clutch = if m == Teleop { Clutch::Engaged } else { Clutch::Released };
            Ok(SessionState { mode: m, recording: false, clutch })
        }
        Transition::Jog if s.mode != Teleop => reject("wrong_mode", format!("jog needs teleop mode, session is {:?}", s.mode)),
        Transition::Jog => Ok(s),
        Transition::Clutch(_) if s.mode != Teleop => {
            reject("wrong_mode", format!("clutch needs teleop mode, session is {:?}", s.mode))
        }
        Transition::Clutch(true) if s.clutch == Clutch::Engaged => reject("already_engaged", "clutch is already engaged"),
        Transition::Clutch(e) => Ok(SessionState { clutch: if e { Clutch::Engaged } else { Clutch::Released }, ..s }),
        Transition::RecordStart if s.mode == Idle => reject("idle", "cannot record while idle; select a control mode first"),
        Transition::RecordStart if s.recording => reject("already_recording", "a recording is already running"),
        Transition::RecordStart => Ok(SessionState { recording: true, ..s }),
        Transition::RecordStop if !s.recording => reject("not_recording", "no recording is running"),
        Transition::RecordStop => Ok(SessionState { recording: false, ..s }),
        Transition::Play if s.mode != Playback => {
            reject("wrong_mode", format!("play needs playback mode, session is {:?}", s.mode))
        }
        Transition::Play => Ok(s),
        Transition::Bench if s.mode != Idle => reject("wrong_mode", "bench runs only while idle"),
        Transition::Bench => Ok(s),
    }
}
