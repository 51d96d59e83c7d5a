//! Shared domain vocabulary: joint vectors, robot configuration, samples,
//! frames and episodes.

use std::collections::BTreeMap;
use std::fmt;
use std::sync::Arc;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::time::Timestamp;

/// Joints per arm, excluding the gripper.
pub const ARM_JOINTS: usize = 6;
/// Dimensions contributed by one arm: six joints plus the gripper aperture.
pub const DIMS_PER_ARM: usize = ARM_JOINTS + 1;

/// Name of the stream holding commanded actions.
pub const ACTION_STREAM: &str = "action";

#[derive(Debug, Clone, PartialEq, Error)]
pub enum TypeError {
    #[error("joint vector must have at least one dimension")]
    EmptyJointVector,
    #[error("joint {index} is not finite ({value})")]
    NonFinite { index: usize, value: f64 },
    #[error("dimension mismatch: expected {expected}, got {got}")]
    DimMismatch { expected: usize, got: usize },
    #[error("gripper dimension {index} out of [0,1]: {value}")]
    GripperRange { index: usize, value: f64 },
    #[error("image must have positive size, got {width}x{height}")]
    EmptyImage { width: u32, height: u32 },
    #[error("image channels must be 1 or 3, got {0}")]
    Channels(u8),
    #[error("image pixel buffer has {got} bytes, expected {expected}")]
    PixelLength { expected: usize, got: usize },
    #[error("invalid robot config: {0}")]
    Config(String),
    #[error("unknown stream '{0}'")]
    UnknownStream(String),
}

/// Ordered joint positions in radians; gripper dimensions hold a normalized
/// aperture in `[0,1]`.
#[derive(Debug, Clone, PartialEq, Serialize)]
#[serde(transparent)]
pub struct JointVector(Vec<f64>);

impl JointVector {
    pub fn new(values: Vec<f64>) -> Result<Self, TypeError> {
        if values.is_empty() {
            return Err(TypeError::EmptyJointVector);
        }
        if let Some((index, &value)) = values.iter().enumerate().find(|(_, v)| !v.is_finite()) {
            return Err(TypeError::NonFinite { index, value });
        }
        Ok(JointVector(values))
    }

    pub fn zeros(dim: usize) -> Self {
        JointVector(vec![0.0; dim.max(1)])
    }

    pub fn dim(&self) -> usize {
        self.0.len()
    }

    pub fn values(&self) -> &[f64] {
        &self.0
    }

    pub fn into_vec(self) -> Vec<f64> {
        self.0
    }

    /// Largest per-dimension absolute difference.
    pub fn max_abs_diff(&self, other: &JointVector) -> f64 {
        self.0
            .iter()
            .zip(&other.0)
            .map(|(a, b)| (a - b).abs())
            .fold(0.0, f64::max)
    }

    pub fn concat<'a>(parts: impl IntoIterator<Item = &'a JointVector>) -> Result<Self, TypeError> {
        JointVector::new(parts.into_iter().flat_map(|p| p.0.iter().copied()).collect())
    }
}

impl<'de> Deserialize<'de> for JointVector {
    fn deserialize<D: serde::Deserializer<'de>>(d: D) -> Result<Self, D::Error> {
        let v = Vec::<f64>::deserialize(d)?;
        JointVector::new(v).map_err(serde::de::Error::custom)
    }
}

impl fmt::Display for JointVector {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "[")?;
        for (i, v) in self.0.iter().enumerate() {
            if i > 0 {
                write!(f, ", ")?;
            }
            write!(f, "{v:.4}")?;
        }
        write!(f, "]")
    }
}

/// One 6-joint arm with a gripper. Vectors have [`DIMS_PER_ARM`] entries,
/// the last being the gripper.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ArmSpec {
    pub joints: usize,
    pub gripper: bool,
    pub v_max: Vec<f64>,
    pub q_min: Vec<f64>,
    pub q_max: Vec<f64>,
}

impl ArmSpec {
    /// Symmetric limits: joints in `[-q_abs, q_abs]`, gripper in `[0,1]`.
    pub fn uniform(v_max: f64, q_abs: f64) -> Self {
        let mut q_min = vec![-q_abs; ARM_JOINTS];
        let mut q_max = vec![q_abs; ARM_JOINTS];
        q_min.push(0.0);
        q_max.push(1.0);
        ArmSpec {
            joints: ARM_JOINTS,
            gripper: true,
            v_max: vec![v_max; DIMS_PER_ARM],
            q_min,
            q_max,
        }
    }

    fn validate(&self, arm: usize) -> Result<(), TypeError> {
        let bad = |m: String| Err(TypeError::Config(format!("arm {arm}: {m}")));
        if self.joints != ARM_JOINTS || !self.gripper {
            return bad(format!("arms must have {ARM_JOINTS} joints and a gripper"));
        }
        for (name, v) in [("v_max", &self.v_max), ("q_min", &self.q_min), ("q_max", &self.q_max)] {
            if v.len() != DIMS_PER_ARM {
                return bad(format!("{name} needs {DIMS_PER_ARM} entries, got {}", v.len()));
            }
            if v.iter().any(|x| !x.is_finite()) {
                return bad(format!("{name} has non-finite entries"));
            }
        }
        if let Some(j) = self.v_max.iter().position(|&v| v <= 0.0) {
            return bad(format!("v_max[{j}] must be > 0"));
        }
        if let Some(j) = (0..DIMS_PER_ARM).find(|&j| self.q_min[j] >= self.q_max[j]) {
            return bad(format!("q_min[{j}] must be < q_max[{j}]"));
        }
        let g = DIMS_PER_ARM - 1;
        if self.q_min[g] < 0.0 || self.q_max[g] > 1.0 {
            return bad("gripper limits must lie within [0,1]".into());
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CameraSpec {
    pub id: String,
    pub width: u32,
    pub height: u32,
    pub channels: u8,
    pub rate_hz: f64,
}

/// Validated robot configuration. Construct through [`RobotConfig::new`].
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct RobotConfig {
    name: String,
    arms: Vec<ArmSpec>,
    cameras: Vec<CameraSpec>,
}

#[derive(Deserialize)]
struct RawRobotConfig {
    name: String,
    arms: Vec<ArmSpec>,
    #[serde(default)]
    cameras: Vec<CameraSpec>,
}

impl<'de> Deserialize<'de> for RobotConfig {
    fn deserialize<D: serde::Deserializer<'de>>(d: D) -> Result<Self, D::Error> {
        let raw = RawRobotConfig::deserialize(d)?;
        RobotConfig::new(raw.name, raw.arms, raw.cameras).map_err(serde::de::Error::custom)
    }
}

impl RobotConfig {
    pub fn new(name: impl Into<String>, arms: Vec<ArmSpec>, cameras: Vec<CameraSpec>) -> Result<Self, TypeError> {
        if arms.is_empty() {
            return Err(TypeError::Config("at least one arm is required".into()));
        }
        for (i, arm) in arms.iter().enumerate() {
            arm.validate(i)?;
        }
        for cam in &cameras {
            if cam.width == 0 || cam.height == 0 {
                return Err(TypeError::EmptyImage { width: cam.width, height: cam.height });
            }
            if cam.channels != 1 && cam.channels != 3 {
                return Err(TypeError::Channels(cam.channels));
            }
            if !(cam.rate_hz > 0.0 && cam.rate_hz.is_finite()) {
                return Err(TypeError::Config(format!("camera {}: rate must be > 0", cam.id)));
            }
        }
        Ok(RobotConfig { name: name.into(), arms, cameras })
    }

    /// Single arm with a wrist and a global camera.
    pub fn single_arm() -> Self {
        RobotConfig::new(
            "single-arm",
            vec![ArmSpec::uniform(1.0, 3.0)],
            vec![camera("cam_wrist", 30.0), camera("cam_global", 30.0)],
        )
        .expect("valid preset")
    }

    /// Two arms, one wrist camera each, and a shared global camera.
    pub fn dual_arm() -> Self {
        RobotConfig::new(
            "dual-arm",
            vec![ArmSpec::uniform(1.0, 3.0), ArmSpec::uniform(1.0, 3.0)],
            vec![
                camera("cam_left_wrist", 30.0),
                camera("cam_right_wrist", 30.0),
                camera("cam_global", 30.0),
            ],
        )
        .expect("valid preset")
    }

    pub fn name(&self) -> &str {
        &self.name
    }

    pub fn arms(&self) -> &[ArmSpec] {
        &self.arms
    }

    pub fn cameras(&self) -> &[CameraSpec] {
        &self.cameras
    }

    /// Seven dimensions per arm.
    pub fn action_dim(&self) -> usize {
        DIMS_PER_ARM * self.arms.len()
    }

    pub fn v_max(&self) -> Vec<f64> {
        self.arms.iter().flat_map(|a| a.v_max.iter().copied()).collect()
    }

    pub fn q_min(&self) -> Vec<f64> {
        self.arms.iter().flat_map(|a| a.q_min.iter().copied()).collect()
    }

    pub fn q_max(&self) -> Vec<f64> {
        self.arms.iter().flat_map(|a| a.q_max.iter().copied()).collect()
    }

    pub fn is_gripper_dim(&self, dim: usize) -> bool {
        dim % DIMS_PER_ARM == DIMS_PER_ARM - 1
    }

    /// Checks dimension, finiteness (already guaranteed) and gripper range.
    pub fn check_action(&self, q: &JointVector) -> Result<(), TypeError> {
        if q.dim() != self.action_dim() {
            return Err(TypeError::DimMismatch { expected: self.action_dim(), got: q.dim() });
        }
        for (index, &value) in q.values().iter().enumerate() {
            if self.is_gripper_dim(index) && !(0.0..=1.0).contains(&value) {
                return Err(TypeError::GripperRange { index, value });
            }
        }
        Ok(())
    }

    /// Clamps to position limits. Returns whether any value changed.
    pub fn clamp_to_limits(&self, q: &JointVector) -> (JointVector, bool) {
        let (lo, hi) = (self.q_min(), self.q_max());
        let mut changed = false;
        let v = q
            .values()
            .iter()
            .enumerate()
            .map(|(j, &x)| {
                let c = x.clamp(lo[j], hi[j]);
                changed |= c != x;
                c
            })
            .collect();
        (JointVector(v), changed)
    }

    pub fn within_limits(&self, q: &JointVector) -> bool {
        let (lo, hi) = (self.q_min(), self.q_max());
        q.dim() == self.action_dim() && q.values().iter().enumerate().all(|(j, &x)| x >= lo[j] && x <= hi[j])
    }

    /// Mid-range pose with grippers half open.
    pub fn home_pose(&self) -> JointVector {
        let (lo, hi) = (self.q_min(), self.q_max());
        JointVector((0..self.action_dim()).map(|j| 0.5 * (lo[j] + hi[j])).collect())
    }
}

fn camera(id: &str, rate_hz: f64) -> CameraSpec {
    CameraSpec { id: id.into(), width: 64, height: 48, channels: 3, rate_hz }
}

/// Row-major image bytes.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct ImagePayload {
    width: u32,
    height: u32,
    channels: u8,
    pixels: Vec<u8>,
}

impl ImagePayload {
    pub fn new(width: u32, height: u32, channels: u8, pixels: Vec<u8>) -> Result<Self, TypeError> {
        if width == 0 || height == 0 {
            return Err(TypeError::EmptyImage { width, height });
        }
        if channels != 1 && channels != 3 {
            return Err(TypeError::Channels(channels));
        }
        let expected = width as usize * height as usize * channels as usize;
        if pixels.len() != expected {
            return Err(TypeError::PixelLength { expected, got: pixels.len() });
        }
        Ok(ImagePayload { width, height, channels, pixels })
    }

    pub fn width(&self) -> u32 {
        self.width
    }
    pub fn height(&self) -> u32 {
        self.height
    }
    pub fn channels(&self) -> u8 {
        self.channels
    }
    pub fn pixels(&self) -> &[u8] {
        &self.pixels
    }

    pub fn pixel(&self, x: u32, y: u32, c: u8) -> u8 {
        let idx = ((y as usize * self.width as usize + x as usize) * self.channels as usize) + c as usize;
        self.pixels[idx]
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum PayloadKind {
    Joints,
    Image,
    Scalar,
    Bytes,
}

impl fmt::Display for PayloadKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            PayloadKind::Joints => "joints",
            PayloadKind::Image => "image",
            PayloadKind::Scalar => "scalar",
            PayloadKind::Bytes => "bytes",
        })
    }
}

#[derive(Debug, Clone, PartialEq)]
pub enum Payload {
    Joints(JointVector),
    Image(ImagePayload),
    Scalar(f64),
    /// Opaque bytes for streams the middleware does not interpret.
    Bytes(Vec<u8>),
}

impl Payload {
    pub fn kind(&self) -> PayloadKind {
        match self {
            Payload::Joints(_) => PayloadKind::Joints,
            Payload::Image(_) => PayloadKind::Image,
            Payload::Scalar(_) => PayloadKind::Scalar,
            Payload::Bytes(_) => PayloadKind::Bytes,
        }
    }

    pub fn as_joints(&self) -> Option<&JointVector> {
        match self {
            Payload::Joints(j) => Some(j),
            _ => None,
        }
    }

    pub fn as_image(&self) -> Option<&ImagePayload> {
        match self {
            Payload::Image(i) => Some(i),
            _ => None,
        }
    }
}

/// One timestamped device reading.
#[derive(Debug, Clone, PartialEq)]
pub struct Sample {
    pub stream_id: String,
    pub capture_ts: Timestamp,
    pub payload: Payload,
}

impl Sample {
    pub fn new(stream_id: impl Into<String>, capture_ts: Timestamp, payload: Payload) -> Self {
        Sample { stream_id: stream_id.into(), capture_ts, payload }
    }
}

/// A frame slot: index into the episode stream of the same id, or missing.
pub type SlotRef = Option<usize>;

/// One synchronized multi-stream snapshot. Slots and staleness are keyed by
/// stream id.
#[derive(Debug, Clone, PartialEq)]
pub struct Frame {
    pub tick_index: u64,
    pub tick_ts: Timestamp,
    pub slots: BTreeMap<String, SlotRef>,
    pub staleness: BTreeMap<String, u64>,
}

/// A stream's declared payload kind plus its records.
#[derive(Debug, Clone, PartialEq)]
pub struct Stream {
    pub kind: PayloadKind,
    pub samples: Vec<Arc<Sample>>,
}

impl Stream {
    pub fn new(kind: PayloadKind) -> Self {
        Stream { kind, samples: Vec::new() }
    }
}

/// One recorded demonstration.
#[derive(Debug, Clone, PartialEq)]
pub struct Episode {
    pub id: String,
    pub task: String,
    pub config: RobotConfig,
    pub frames: Vec<Frame>,
    /// Streams in manifest order.
    pub streams: BTreeMap<String, Stream>,
    pub meta: BTreeMap<String, String>,
}

/// A single failed episode invariant.
#[derive(Debug, Clone, PartialEq, Eq)]
pub enum Violation {
    NoFrames,
    TickIndex { frame: usize, expected: u64, found: u64 },
    TickTimestamp { frame: usize, previous: Timestamp, found: Timestamp },
    UnknownSlotStream { frame: usize, stream: String },
    DanglingReference { frame: usize, stream: String, index: usize, len: usize },
    NegativeStaleness { frame: usize, stream: String },
    StalenessMismatch { frame: usize, stream: String },
    SchemaMismatch { stream: String, index: usize, expected: PayloadKind, found: PayloadKind },
    WrongStreamId { stream: String, index: usize, found: String },
    StreamOrder { stream: String, index: usize },
    ActionShape { index: usize, reason: String },
}

impl fmt::Display for Violation {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Violation::NoFrames => write!(f, "episode has no frames"),
            Violation::TickIndex { frame, expected, found } => {
                write!(f, "frame {frame}: tick_index {found}, expected {expected}")
            }
            Violation::TickTimestamp { frame, previous, found } => {
                write!(f, "frame {frame}: tick_ts {found} not after {previous}")
            }
            Violation::UnknownSlotStream { frame, stream } => {
                write!(f, "frame {frame}: slot for unknown stream '{stream}'")
            }
            Violation::DanglingReference { frame, stream, index, len } => {
                write!(f, "frame {frame}: '{stream}' record {index} does not exist (stream has {len})")
            }
            Violation::NegativeStaleness { frame, stream } => {
                write!(f, "frame {frame}: '{stream}' sample captured after the tick")
            }
            Violation::StalenessMismatch { frame, stream } => {
                write!(f, "frame {frame}: '{stream}' staleness disagrees with timestamps")
            }
            Violation::SchemaMismatch { stream, index, expected, found } => {
                write!(f, "'{stream}' record {index}: payload {found}, stream declares {expected}")
            }
            Violation::WrongStreamId { stream, index, found } => {
                write!(f, "'{stream}' record {index} is tagged '{found}'")
            }
            Violation::StreamOrder { stream, index } => {
                write!(f, "'{stream}' record {index} goes back in time")
            }
            Violation::ActionShape { index, reason } => write!(f, "action record {index}: {reason}"),
        }
    }
}

impl Episode {
    /// Every invariant violation, in scan order. Empty means valid.
    pub fn validate(&self) -> Vec<Violation> {
        let mut out = Vec::new();
        if self.frames.is_empty() {
            out.push(Violation::NoFrames);
        }
        for (name, stream) in &self.streams {
            let mut prev: Option<Timestamp> = None;
            for (index, s) in stream.samples.iter().enumerate() {
                if s.payload.kind() != stream.kind {
                    out.push(Violation::SchemaMismatch {
                        stream: name.clone(),
                        index,
                        expected: stream.kind,
                        found: s.payload.kind(),
                    });
                }
                if &s.stream_id != name {
                    out.push(Violation::WrongStreamId { stream: name.clone(), index, found: s.stream_id.clone() });
                }
                if prev.is_some_and(|p| s.capture_ts < p) {
                    out.push(Violation::StreamOrder { stream: name.clone(), index });
                }
                prev = Some(s.capture_ts);
            }
        }
        if let Some(action) = self.streams.get(ACTION_STREAM) {
            for (index, s) in action.samples.iter().enumerate() {
                if let Payload::Joints(q) = &s.payload {
                    if let Err(e) = self.config.check_action(q) {
                        out.push(Violation::ActionShape { index, reason: e.to_string() });
                    }
                }
            }
        }
        let mut prev_ts: Option<Timestamp> = None;
        for (i, frame) in self.frames.iter().enumerate() {
            if frame.tick_index != i as u64 {
                out.push(Violation::TickIndex { frame: i, expected: i as u64, found: frame.tick_index });
            }
            if let Some(p) = prev_ts {
                if frame.tick_ts <= p {
                    out.push(Violation::TickTimestamp { frame: i, previous: p, found: frame.tick_ts });
                }
            }
            prev_ts = Some(frame.tick_ts);
            for (name, slot) in &frame.slots {
                let Some(stream) = self.streams.get(name) else {
                    out.push(Violation::UnknownSlotStream { frame: i, stream: name.clone() });
                    continue;
                };
                let Some(index) = *slot else { continue };
                let Some(sample) = stream.samples.get(index) else {
                    out.push(Violation::DanglingReference {
                        frame: i,
                        stream: name.clone(),
                        index,
                        len: stream.samples.len(),
                    });
                    continue;
                };
                match frame.tick_ts.checked_since(sample.capture_ts) {
                    None => out.push(Violation::NegativeStaleness { frame: i, stream: name.clone() }),
                    Some(st) => {
                        if frame.staleness.get(name).is_some_and(|&s| s != st) {
                            out.push(Violation::StalenessMismatch { frame: i, stream: name.clone() });
                        }
                    }
                }
            }
        }
        out
    }

    /// `tick_ts - capture_ts` of the sample in `stream_id`'s slot, `None`
    /// when the slot is empty.
    pub fn staleness_of(&self, frame: &Frame, stream_id: &str) -> Result<Option<u64>, TypeError> {
        let stream = self
            .streams
            .get(stream_id)
            .ok_or_else(|| TypeError::UnknownStream(stream_id.to_string()))?;
        let Some(Some(index)) = frame.slots.get(stream_id) else {
            return Ok(None);
        };
        Ok(stream
            .samples
            .get(*index)
            .map(|s| frame.tick_ts.saturating_since(s.capture_ts)))
    }

    pub fn stream_samples(&self, id: &str) -> Option<&[Arc<Sample>]> {
        self.streams.get(id).map(|s| s.samples.as_slice())
    }

    /// The commanded action in force at `t`: the last action record with
    /// `capture_ts <= t`.
    pub fn action_at(&self, t: Timestamp) -> Option<&JointVector> {
        let samples = self.stream_samples(ACTION_STREAM)?;
        let idx = crate::collector::latest_index_at(samples, t)?;
        samples[idx].payload.as_joints()
    }

    /// Joint state at `t`, concatenated over the given controller streams.
    pub fn joint_state_at(&self, controllers: &[String], t: Timestamp) -> Option<JointVector> {
        let mut parts = Vec::with_capacity(controllers.len());
        for id in controllers {
            let samples = self.stream_samples(id)?;
            let idx = crate::collector::latest_index_at(samples, t)?;
            parts.push(samples[idx].payload.as_joints()?);
        }
        JointVector::concat(parts).ok()
    }

    /// Streams whose records are joint vectors, other than the action stream,
    /// in manifest order.
    pub fn joint_streams(&self) -> Vec<String> {
        self.streams
            .iter()
            .filter(|(id, s)| s.kind == PayloadKind::Joints && id.as_str() != ACTION_STREAM)
            .map(|(id, _)| id.clone())
            .collect()
    }

    pub fn first_tick(&self) -> Option<Timestamp> {
        self.frames.first().map(|f| f.tick_ts)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    pub(crate) fn tiny_episode() -> Episode {
        let config = RobotConfig::single_arm();
        let mut streams = BTreeMap::new();
        let mut arm = Stream::new(PayloadKind::Joints);
        for k in 0..4u64 {
            arm.samples.push(Arc::new(Sample::new(
                "arm",
                Timestamp(k * 10),
                Payload::Joints(JointVector::new(vec![k as f64 * 0.1; 7]).unwrap()),
            )));
        }
        streams.insert("arm".to_string(), arm);
        let frames = (0..4u64)
            .map(|k| Frame {
                tick_index: k,
                tick_ts: Timestamp(k * 10 + 3),
                slots: [("arm".to_string(), Some(k as usize))].into(),
                staleness: [("arm".to_string(), 3)].into(),
            })
            .collect();
        Episode { id: "e".into(), task: "t".into(), config, frames, streams, meta: BTreeMap::new() }
    }

    #[test]
    fn action_dim_by_arm_count() {
        assert_eq!(RobotConfig::dual_arm().action_dim(), 14);
        assert_eq!(RobotConfig::single_arm().action_dim(), 7);
        assert!(RobotConfig::new("none", vec![], vec![]).is_err());
    }

    #[test]
    fn action_dim_ignores_camera_order() {
        let a = RobotConfig::dual_arm();
        let mut cams = a.cameras().to_vec();
        cams.reverse();
        let b = RobotConfig::new("b", a.arms().to_vec(), cams).unwrap();
        assert_eq!(a.action_dim(), b.action_dim());
    }

    #[test]
    fn config_rejects_bad_limits() {
        let mut arm = ArmSpec::uniform(1.0, 1.0);
        arm.v_max[2] = 0.0;
        assert!(RobotConfig::new("x", vec![arm], vec![]).is_err());
        let mut arm = ArmSpec::uniform(1.0, 1.0);
        arm.q_min[0] = 2.0;
        assert!(RobotConfig::new("x", vec![arm], vec![]).is_err());
    }

    #[test]
    fn valid_episode_has_empty_report() {
        assert!(tiny_episode().validate().is_empty());
    }

    #[test]
    fn duplicated_tick_index_is_one_violation() {
        let mut ep = tiny_episode();
        ep.frames[2].tick_index = 1;
        let v = ep.validate();
        assert_eq!(v.len(), 1, "{v:?}");
        assert!(matches!(v[0], Violation::TickIndex { frame: 2, .. }));
    }

    #[test]
    fn deleted_sample_is_dangling() {
        let mut ep = tiny_episode();
        ep.streams.get_mut("arm").unwrap().samples.pop();
        let v = ep.validate();
        assert_eq!(v.len(), 1, "{v:?}");
        assert!(matches!(v[0], Violation::DanglingReference { frame: 3, index: 3, .. }));
    }

    #[test]
    fn empty_episode_is_flagged() {
        let mut ep = tiny_episode();
        ep.frames.clear();
        assert_eq!(ep.validate(), vec![Violation::NoFrames]);
    }

    #[test]
    fn staleness_cases() {
        let mut ep = tiny_episode();
        let f = ep.frames[1].clone();
        assert_eq!(ep.staleness_of(&f, "arm").unwrap(), Some(3));
        let mut exact = f.clone();
        exact.tick_ts = Timestamp(10);
        assert_eq!(ep.staleness_of(&exact, "arm").unwrap(), Some(0));
        let mut far = f.clone();
        far.tick_ts = Timestamp(3_000_010);
        assert_eq!(ep.staleness_of(&far, "arm").unwrap(), Some(3_000_000));
        ep.frames[1].slots.insert("arm".into(), None);
        let f = ep.frames[1].clone();
        assert_eq!(ep.staleness_of(&f, "arm").unwrap(), None);
        assert_eq!(ep.staleness_of(&f, "nope"), Err(TypeError::UnknownStream("nope".into())));
    }

    #[test]
    fn image_length_is_exact() {
        assert!(ImagePayload::new(2, 2, 3, vec![0; 12]).is_ok());
        assert!(ImagePayload::new(2, 2, 3, vec![0; 11]).is_err());
        assert!(ImagePayload::new(0, 2, 1, vec![]).is_err());
        assert!(ImagePayload::new(2, 2, 2, vec![0; 8]).is_err());
    }

    proptest! {
        #[test]
        fn joint_vector_accepts_exactly_finite(values in proptest::collection::vec(
            prop_oneof![any::<f64>(), Just(f64::NAN), Just(f64::INFINITY), Just(f64::NEG_INFINITY)], 1..20)) {
            let all_finite = values.iter().all(|v| v.is_finite());
            prop_assert_eq!(JointVector::new(values).is_ok(), all_finite);
        }
    }
}
