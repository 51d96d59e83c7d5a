//! Length-prefixed policy wire format, little-endian:
//! `total_len u32 | type u8 | body`, where `total_len` counts the type byte
//! and the body. Observation bodies are `meta_len u32 | meta JSON | pixels`;
//! action and error bodies are JSON.

use std::io::{self, Read, Write};

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::time::Timestamp;
use crate::types::{ImagePayload, JointVector};

pub const TYPE_OBSERVATION: u8 = 1;
pub const TYPE_ACTION: u8 = 2;
pub const TYPE_ERROR: u8 = 3;

/// Upper bound on `total_len`.
pub const MAX_FRAME_LEN: u32 = 64 << 20;

#[derive(Debug, Error, PartialEq)]
pub enum DecodeError {
    #[error("frame shorter than its {0}-byte length prefix")]
    ShortHeader(usize),
    #[error("frame length {0} is zero; a type byte is required")]
    ZeroLength(u32),
    #[error("frame length {declared} exceeds limit {max}")]
    LengthOverflow { declared: u32, max: u32 },
    #[error("frame declares {declared} bytes, {actual} present")]
    LengthMismatch { declared: u64, actual: u64 },
    #[error("unknown message type {0}")]
    UnknownType(u8),
    #[error("malformed body: {0}")]
    Malformed(String),
}

#[derive(Debug, Clone, PartialEq)]
pub struct CameraImage {
    pub id: String,
    pub image: ImagePayload,
}

#[derive(Debug, Clone, PartialEq)]
pub struct ObservationMessage {
    pub seq: u64,
    pub tick_ts: Timestamp,
    pub joints: JointVector,
    pub images: Vec<CameraImage>,
    /// Requested chunk length; the server default applies when absent.
    pub horizon: Option<u32>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ActionMessage {
    pub seq: u64,
    pub horizon: u32,
    pub actions: Vec<JointVector>,
    /// Set when the server clamped any action to position limits.
    #[serde(default, skip_serializing_if = "std::ops::Not::not")]
    pub clamped: bool,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ErrorMessage {
    pub seq: u64,
    pub code: String,
    pub message: String,
}

#[derive(Debug, Clone, PartialEq)]
pub enum PolicyMessage {
    Observation(ObservationMessage),
    Action(ActionMessage),
    Error(ErrorMessage),
}

#[derive(Serialize, Deserialize)]
struct ImageMeta {
    id: String,
    w: u32,
    h: u32,
    c: u8,
    offset: u64,
    len: u64,
}

#[derive(Serialize, Deserialize)]
struct ObservationMeta {
    seq: u64,
    tick_ts: u64,
    joints: JointVector,
    images: Vec<ImageMeta>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    horizon: Option<u32>,
}

fn json<T: Serialize>(v: &T) -> Vec<u8> {
    serde_json::to_vec(v).expect("message serializes")
}

fn encode_body(msg: &PolicyMessage) -> (u8, Vec<u8>) {
    match msg {
        PolicyMessage::Observation(o) => {
            let mut offset = 0u64;
            let images = o
                .images
                .iter()
                .map(|c| {
                    let len = c.image.pixels().len() as u64;
                    let m = ImageMeta { id: c.id.clone(), w: c.image.width(), h: c.image.height(), c: c.image.channels(), offset, len };
                    offset += len;
                    m
                })
                .collect();
            let meta = json(&ObservationMeta { seq: o.seq, tick_ts: o.tick_ts.0, joints: o.joints.clone(), images, horizon: o.horizon });
            let mut body = Vec::with_capacity(4 + meta.len() + offset as usize);
            body.extend_from_slice(&(meta.len() as u32).to_le_bytes());
            body.extend_from_slice(&meta);
            for c in &o.images {
                body.extend_from_slice(c.image.pixels());
            }
            (TYPE_OBSERVATION, body)
        }
        PolicyMessage::Action(a) => (TYPE_ACTION, json(a)),
        PolicyMessage::Error(e) => (TYPE_ERROR, json(e)),
    }
}

pub fn encode_message(msg: &PolicyMessage) -> Vec<u8> {
    let (tag, body) = encode_body(msg);
    let mut out = Vec::with_capacity(5 + body.len());
    out.extend_from_slice(&((body.len() + 1) as u32).to_le_bytes());
    out.push(tag);
    out.extend_from_slice(&body);
    out
}

fn check_len(declared: u32) -> Result<(), DecodeError> {
    if declared == 0 {
        return Err(DecodeError::ZeroLength(declared));
    }
    if declared > MAX_FRAME_LEN {
        return Err(DecodeError::LengthOverflow { declared, max: MAX_FRAME_LEN });
    }
    Ok(())
}

/// Decodes exactly one complete frame.
pub fn decode_message(bytes: &[u8]) -> Result<PolicyMessage, DecodeError> {
    let head: [u8; 4] = bytes.get(..4).and_then(|h| h.try_into().ok()).ok_or(DecodeError::ShortHeader(4))?;
    let declared = u32::from_le_bytes(head);
    check_len(declared)?;
    let rest = &bytes[4..];
    if rest.len() as u64 != declared as u64 {
        return Err(DecodeError::LengthMismatch { declared: declared as u64, actual: rest.len() as u64 });
    }
    decode_body(rest[0], &rest[1..])
}

fn malformed(e: impl ToString) -> DecodeError {
    DecodeError::Malformed(e.to_string())
}

pub fn decode_body(tag: u8, body: &[u8]) -> Result<PolicyMessage, DecodeError> {
    match tag {
        TYPE_OBSERVATION => decode_observation(body).map(PolicyMessage::Observation),
        TYPE_ACTION => {
            let a: ActionMessage = serde_json::from_slice(body).map_err(malformed)?;
            if a.horizon == 0 || a.actions.len() != a.horizon as usize {
                return Err(malformed(format!("horizon {} with {} action rows", a.horizon, a.actions.len())));
            }
            if a.actions.iter().any(|r| r.dim() != a.actions[0].dim()) {
                return Err(malformed("action rows differ in dimension"));
            }
            Ok(PolicyMessage::Action(a))
        }
        TYPE_ERROR => serde_json::from_slice(body).map(PolicyMessage::Error).map_err(malformed),
        other => Err(DecodeError::UnknownType(other)),
    }
}

fn decode_observation(body: &[u8]) -> Result<ObservationMessage, DecodeError> {
    let meta_len = body.get(..4).map(|h| u32::from_le_bytes(h.try_into().unwrap())).ok_or_else(|| malformed("missing meta_len"))? as usize;
    let meta_bytes = body.get(4..4usize.saturating_add(meta_len)).ok_or_else(|| malformed(format!("meta_len {meta_len} exceeds body")))?;
    let meta: ObservationMeta = serde_json::from_slice(meta_bytes).map_err(malformed)?;
    let pixels = &body[4 + meta_len..];
    let mut expected = 0u64;
    let mut images = Vec::with_capacity(meta.images.len());
    for m in meta.images {
        if m.offset != expected {
            return Err(malformed(format!("image '{}' at offset {}, expected {expected}", m.id, m.offset)));
        }
        let end = m.offset.checked_add(m.len).filter(|&e| e <= pixels.len() as u64).ok_or_else(|| malformed(format!("image '{}' runs past the pixel block", m.id)))?;
        let image = ImagePayload::new(m.w, m.h, m.c, pixels[m.offset as usize..end as usize].to_vec()).map_err(malformed)?;
        images.push(CameraImage { id: m.id, image });
        expected = end;
    }
    if expected != pixels.len() as u64 {
        return Err(malformed(format!("{} trailing pixel bytes", pixels.len() as u64 - expected)));
    }
    Ok(ObservationMessage { seq: meta.seq, tick_ts: Timestamp(meta.tick_ts), joints: meta.joints, images, horizon: meta.horizon })
}

#[derive(Debug, Error)]
pub enum ReadError {
    #[error(transparent)]
    Io(#[from] io::Error),
    /// The frame was consumed but its contents are invalid; the stream is
    /// still aligned on the next frame.
    #[error(transparent)]
    Body(DecodeError),
    /// The length prefix is unusable; the stream cannot be resynchronized.
    #[error(transparent)]
    Framing(DecodeError),
}

/// Reads one frame from a stream.
pub fn read_message<R: Read>(r: &mut R) -> Result<PolicyMessage, ReadError> {
    let mut head = [0u8; 4];
    r.read_exact(&mut head)?;
    let declared = u32::from_le_bytes(head);
    check_len(declared).map_err(ReadError::Framing)?;
    let mut rest = vec![0u8; declared as usize];
    r.read_exact(&mut rest)?;
    decode_body(rest[0], &rest[1..]).map_err(ReadError::Body)
}

pub fn write_message<W: Write>(w: &mut W, msg: &PolicyMessage) -> io::Result<()> {
    w.write_all(&encode_message(msg))?;
    w.flush()
}
