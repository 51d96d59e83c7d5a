use std::f64::consts::PI;

use serde::{Deserialize, Serialize};

use crate::device::{Device, DeviceDescriptor, DeviceError, DeviceKind, LatencyModel};
use crate::time::{Clock, Timestamp};
use crate::types::{JointVector, Payload, PayloadKind, Sample};

use super::SimError;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Sine {
    #[serde(rename = "A")]
    pub amplitude: f64,
    pub f: f64,
    pub phi: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub enum Motion {
    Sine(Vec<Sine>),
    Hold(Vec<f64>),
}

#[derive(Debug, Clone, PartialEq)]
pub struct Segment {
    pub duration_s: f64,
    pub motion: Motion,
}

/// A scripted leader trajectory. Evaluation is a pure function of time.
#[derive(Debug, Clone, PartialEq)]
pub struct LeaderScript {
    segments: Vec<Segment>,
    dim: usize,
}

#[derive(Serialize, Deserialize)]
#[serde(untagged)]
enum RawJoint {
    Sine(Sine),
    Hold { value: f64 },
}

#[derive(Serialize, Deserialize)]
struct RawSegment {
    kind: String,
    duration_s: f64,
    per_joint: Vec<RawJoint>,
}

#[derive(Serialize, Deserialize)]
struct RawScript {
    segments: Vec<RawSegment>,
}

impl LeaderScript {
    pub fn new(segments: Vec<Segment>) -> Result<Self, SimError> {
        let first = segments.first().ok_or_else(|| SimError::Script("script has no segments".into()))?;
        let dim = match &first.motion {
            Motion::Sine(s) => s.len(),
            Motion::Hold(h) => h.len(),
        };
        if dim == 0 {
            return Err(SimError::Script("segments need at least one joint".into()));
        }
        for (i, seg) in segments.iter().enumerate() {
            if !(seg.duration_s > 0.0 && seg.duration_s.is_finite()) {
                return Err(SimError::Script(format!("segment {i}: duration must be > 0")));
            }
            let (n, finite) = match &seg.motion {
                Motion::Sine(s) => (s.len(), s.iter().all(|j| j.amplitude.is_finite() && j.f.is_finite() && j.phi.is_finite())),
                Motion::Hold(h) => (h.len(), h.iter().all(|v| v.is_finite())),
            };
            if n != dim {
                return Err(SimError::Script(format!("segment {i}: {n} joints, expected {dim}")));
            }
            if !finite {
                return Err(SimError::Script(format!("segment {i}: non-finite parameter")));
            }
        }
        Ok(LeaderScript { segments, dim })
    }

    pub fn from_json(text: &str) -> Result<Self, SimError> {
        let raw: RawScript = serde_json::from_str(text).map_err(|e| SimError::Script(e.to_string()))?;
        let mut segments = Vec::with_capacity(raw.segments.len());
        for (i, seg) in raw.segments.into_iter().enumerate() {
            let motion = match seg.kind.as_str() {
                "sine" => Motion::Sine(
                    seg.per_joint
                        .into_iter()
                        .map(|j| match j {
                            RawJoint::Sine(s) => Ok(s),
                            RawJoint::Hold { .. } => Err(SimError::Script(format!("segment {i}: sine segment needs {{A,f,phi}}"))),
                        })
                        .collect::<Result<_, _>>()?,
                ),
                "hold" => Motion::Hold(
                    seg.per_joint
                        .into_iter()
                        .map(|j| match j {
                            RawJoint::Hold { value } => Ok(value),
                            RawJoint::Sine(_) => Err(SimError::Script(format!("segment {i}: hold segment needs {{value}}"))),
                        })
                        .collect::<Result<_, _>>()?,
                ),
                other => return Err(SimError::Script(format!("segment {i}: unknown kind '{other}'"))),
            };
            segments.push(Segment { duration_s: seg.duration_s, motion });
        }
        LeaderScript::new(segments)
    }

    pub fn to_json(&self) -> String {
        let raw = RawScript {
            segments: self
                .segments
                .iter()
                .map(|s| match &s.motion {
                    Motion::Sine(v) => RawSegment {
                        kind: "sine".into(),
                        duration_s: s.duration_s,
                        per_joint: v.iter().copied().map(RawJoint::Sine).collect(),
                    },
                    Motion::Hold(v) => RawSegment {
                        kind: "hold".into(),
                        duration_s: s.duration_s,
                        per_joint: v.iter().map(|&value| RawJoint::Hold { value }).collect(),
                    },
                })
                .collect(),
        };
        serde_json::to_string_pretty(&raw).expect("serializable")
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn duration_s(&self) -> f64 {
        self.segments.iter().map(|s| s.duration_s).sum()
    }

    /// Piecewise evaluation; past the end the last segment's terminal value
    /// is held.
    pub fn position(&self, t: f64) -> JointVector {
        let t = t.max(0.0);
        let mut start = 0.0;
        for seg in &self.segments {
            if t < start + seg.duration_s {
                return eval(&seg.motion, t - start);
            }
            start += seg.duration_s;
        }
        let last = self.segments.last().expect("non-empty");
        eval(&last.motion, last.duration_s)
    }
}

fn eval(m: &Motion, local: f64) -> JointVector {
    let v = match m {
        Motion::Hold(h) => h.clone(),
        Motion::Sine(s) => s
            .iter()
            .map(|j| j.amplitude * (2.0 * PI * j.f * local + j.phi).sin())
            .collect(),
    };
    JointVector::new(v).expect("finite by construction")
}

/// Scripted teleoperation leader exposed as a sensor.
pub struct SimLeader {
    desc: DeviceDescriptor,
    script: LeaderScript,
    start: Timestamp,
    clock: Clock,
}

impl SimLeader {
    /// The script's time zero is the clock's current time.
    pub fn new(id: &str, script: LeaderScript, rate_hz: f64, latency: LatencyModel, clock: Clock) -> Self {
        SimLeader {
            desc: DeviceDescriptor::new(id, DeviceKind::Sensor, PayloadKind::Joints, rate_hz, latency),
            start: clock.now(),
            script,
            clock,
        }
    }

    pub fn script(&self) -> &LeaderScript {
        &self.script
    }
}

impl Device for SimLeader {
    fn descriptor(&self) -> &DeviceDescriptor {
        &self.desc
    }

    fn read(&self) -> Result<Sample, DeviceError> {
        let now = self.clock.now();
        let q = self.script.position(now.saturating_since(self.start) as f64 * 1e-9);
        self.clock.sleep(self.desc.latency.read_latency(0));
        Ok(Sample::new(self.desc.id.clone(), now, Payload::Joints(q)))
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn script() -> LeaderScript {
        LeaderScript::new(vec![
            Segment { duration_s: 2.0, motion: Motion::Hold(vec![0.3]) },
            Segment { duration_s: 4.0, motion: Motion::Sine(vec![Sine { amplitude: 0.5, f: 0.25, phi: 0.0 }]) },
        ])
        .unwrap()
    }

    #[test]
    fn hold_and_sine_segments() {
        let s = script();
        assert_eq!(s.position(0.0).values(), [0.3]);
        assert_eq!(s.position(1.99).values(), [0.3]);
        // 0.5 * sin(2π · 0.25 · 1) = 0.5
        assert!((s.position(3.0).values()[0] - 0.5).abs() < 1e-15);
    }

    #[test]
    fn past_end_holds_terminal_value() {
        let s = script();
        let end = 0.5 * (2.0 * PI * 0.25 * 4.0).sin();
        assert_eq!(s.position(100.0).values(), [end]);
        assert_eq!(s.position(6.0).values(), [end]);
    }

    #[test]
    fn json_round_trip() {
        let text = r#"{"segments":[
            {"kind":"hold","duration_s":1.0,"per_joint":[{"value":0.1},{"value":0.2}]},
            {"kind":"sine","duration_s":2.5,"per_joint":[{"A":0.5,"f":0.25,"phi":0.0},{"A":0.1,"f":1.0,"phi":1.5}]}
        ]}"#;
        let s = LeaderScript::from_json(text).unwrap();
        assert_eq!(s.dim(), 2);
        assert_eq!(LeaderScript::from_json(&s.to_json()).unwrap(), s);
    }

    #[test]
    fn invalid_scripts_rejected() {
        assert!(LeaderScript::new(vec![]).is_err());
        assert!(LeaderScript::new(vec![Segment { duration_s: 0.0, motion: Motion::Hold(vec![0.0]) }]).is_err());
        let mixed = r#"{"segments":[{"kind":"sine","duration_s":1,"per_joint":[{"value":0.1}]}]}"#;
        assert!(LeaderScript::from_json(mixed).is_err());
    }
}
