//! Deterministic simulated hardware: arms, cameras and a scripted teleop
//! leader, plus assembly of a complete rig from a robot configuration file.

mod arm;
mod camera;
mod leader;

use std::collections::HashSet;
use std::path::Path;
use std::sync::Arc;

use serde::{Deserialize, Serialize};
use thiserror::Error;

pub use arm::{SimArm, SimArmState};
pub use camera::{SimCamera, SimCameraState};
pub use leader::{LeaderScript, Motion, Segment, Sine, SimLeader};

use crate::device::{DeviceKind, LatencyModel, Registry, RegistryError, RobotHandle};
use crate::time::Clock;
use crate::types::{ArmSpec, CameraSpec, RobotConfig, TypeError};

#[derive(Debug, Error)]
pub enum SimError {
    #[error("dt must be > 0, got {0}")]
    NonPositiveDt(f64),
    #[error("dimension mismatch: expected {expected}, got {got}")]
    Dim { expected: usize, got: usize },
    #[error("leader script: {0}")]
    Script(String),
    #[error("rig config: {0}")]
    Rig(String),
    #[error(transparent)]
    Config(#[from] TypeError),
    #[error(transparent)]
    Registry(#[from] RegistryError),
    #[error("{path}: {source}")]
    Io { path: String, source: std::io::Error },
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DeviceSpec {
    pub id: String,
    pub kind: DeviceKind,
    pub rate_hz: f64,
    #[serde(default)]
    pub latency: LatencyModel,
}

/// Robot configuration file: robot geometry plus the device list.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RigConfig {
    pub name: String,
    pub arms: Vec<ArmSpec>,
    #[serde(default)]
    pub cameras: Vec<CameraSpec>,
    pub devices: Vec<DeviceSpec>,
}

impl RigConfig {
    /// Benchmark rig: two 200 Hz arm-state buses (200 µs reads) and one
    /// 30 Hz global camera whose reads take 5 ms, with a 13 ms spike on
    /// every tenth read.
    pub fn reference() -> Self {
        let arm = ArmSpec::uniform(1.0, 3.0);
        RigConfig {
            name: "reference-dual-arm".into(),
            arms: vec![arm.clone(), arm],
            cameras: vec![CameraSpec { id: "cam_global".into(), width: 64, height: 48, channels: 3, rate_hz: 30.0 }],
            devices: vec![
                DeviceSpec { id: "arm_left".into(), kind: DeviceKind::Controller, rate_hz: 200.0, latency: LatencyModel::fixed(200) },
                DeviceSpec { id: "arm_right".into(), kind: DeviceKind::Controller, rate_hz: 200.0, latency: LatencyModel::fixed(200) },
                DeviceSpec {
                    id: "cam_global".into(),
                    kind: DeviceKind::Sensor,
                    rate_hz: 30.0,
                    latency: LatencyModel { base_us: 5000, spike_us: 13000, spike_period: 10 },
                },
            ],
        }
    }

    /// Single arm with wrist and global cameras.
    pub fn single_arm() -> Self {
        let cam = |id: &str| CameraSpec { id: id.into(), width: 64, height: 48, channels: 3, rate_hz: 30.0 };
        RigConfig {
            name: "single-arm".into(),
            arms: vec![ArmSpec::uniform(1.0, 3.0)],
            cameras: vec![cam("cam_wrist"), cam("cam_global")],
            devices: vec![
                DeviceSpec { id: "arm".into(), kind: DeviceKind::Controller, rate_hz: 200.0, latency: LatencyModel::fixed(200) },
                DeviceSpec { id: "cam_wrist".into(), kind: DeviceKind::Sensor, rate_hz: 30.0, latency: LatencyModel::fixed(3000) },
                DeviceSpec { id: "cam_global".into(), kind: DeviceKind::Sensor, rate_hz: 30.0, latency: LatencyModel::fixed(3000) },
            ],
        }
    }

    pub fn from_json(text: &str) -> Result<Self, SimError> {
        let rig: RigConfig = serde_json::from_str(text).map_err(|e| SimError::Rig(e.to_string()))?;
        rig.validate()?;
        Ok(rig)
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self, SimError> {
        let path = path.as_ref();
        let text = std::fs::read_to_string(path).map_err(|source| SimError::Io { path: path.display().to_string(), source })?;
        Self::from_json(&text)
    }

    pub fn robot_config(&self) -> Result<RobotConfig, SimError> {
        Ok(RobotConfig::new(self.name.clone(), self.arms.clone(), self.cameras.clone())?)
    }

    /// Scales every device's base latency.
    pub fn with_base_latency_scaled(mut self, factor: u64) -> Self {
        for d in &mut self.devices {
            d.latency.base_us *= factor;
        }
        self
    }

    pub fn validate(&self) -> Result<(), SimError> {
        self.robot_config()?;
        let mut ids = HashSet::new();
        for d in &self.devices {
            if !ids.insert(d.id.as_str()) {
                return Err(SimError::Rig(format!("duplicate device id '{}'", d.id)));
            }
            if !(d.rate_hz > 0.0 && d.rate_hz.is_finite()) {
                return Err(SimError::Rig(format!("device '{}': rate_hz must be > 0", d.id)));
            }
            if d.kind == DeviceKind::Sensor && !self.cameras.iter().any(|c| c.id == d.id) {
                return Err(SimError::Rig(format!("sensor '{}' has no camera entry", d.id)));
            }
        }
        let controllers = self.devices.iter().filter(|d| d.kind == DeviceKind::Controller).count();
        if controllers != self.arms.len() {
            return Err(SimError::Rig(format!("{} arm(s) but {controllers} controller device(s)", self.arms.len())));
        }
        Ok(())
    }
}

/// Per-rig simulation knobs.
#[derive(Debug, Clone, Default)]
pub struct SimOptions {
    pub noise_sigma: f64,
    pub seed: u64,
    /// Initial pose for all arms, concatenated; zeros when `None`.
    pub initial_pose: Option<Vec<f64>>,
    pub leader: Option<(LeaderScript, LatencyModel)>,
}

/// A built simulated rig: the registry, the robot, and direct handles to
/// the simulated arms (for inspection in tests).
pub struct SimRig {
    pub registry: Registry,
    pub robot: RobotHandle,
    pub arms: Vec<Arc<SimArm>>,
    pub leader: Option<Arc<SimLeader>>,
}

/// Id under which the scripted leader is registered.
pub const LEADER_ID: &str = "leader";

impl SimRig {
    pub fn build(rig: &RigConfig, clock: Clock, opts: SimOptions) -> Result<SimRig, SimError> {
        rig.validate()?;
        let config = rig.robot_config()?;
        let mut registry = Registry::new(clock.clone());
        let mut arms = Vec::new();
        let (mut ctrl_ids, mut sensor_ids) = (Vec::new(), Vec::new());
        let initial = opts.initial_pose.clone().unwrap_or_else(|| vec![0.0; config.action_dim()]);
        if initial.len() != config.action_dim() {
            return Err(SimError::Dim { expected: config.action_dim(), got: initial.len() });
        }
        for d in &rig.devices {
            match d.kind {
                DeviceKind::Controller => {
                    let i = arms.len();
                    let spec = &rig.arms[i];
                    let n = spec.v_max.len();
                    let mut st = SimArmState::new(spec, initial[i * n..(i + 1) * n].to_vec())?;
                    st.noise_sigma = opts.noise_sigma;
                    st.rng_seed = opts.seed.wrapping_add(i as u64);
                    let arm = Arc::new(SimArm::new(&d.id, d.rate_hz, d.latency, st, clock.clone()));
                    registry.register_driver(arm.clone())?;
                    arms.push(arm);
                    ctrl_ids.push(d.id.clone());
                }
                DeviceKind::Sensor => {
                    let cam = rig.cameras.iter().find(|c| c.id == d.id).expect("validated");
                    let state = SimCameraState {
                        width: cam.width,
                        height: cam.height,
                        channels: cam.channels,
                        native_rate_hz: d.rate_hz,
                    };
                    registry.register_driver(Arc::new(SimCamera::new(&d.id, state, d.latency, clock.clone())))?;
                    sensor_ids.push(d.id.clone());
                }
            }
        }
        let leader = match opts.leader {
            Some((script, latency)) => {
                if script.dim() != config.action_dim() {
                    return Err(SimError::Dim { expected: config.action_dim(), got: script.dim() });
                }
                let l = Arc::new(SimLeader::new(LEADER_ID, script, 200.0, latency, clock.clone()));
                registry.register_driver(l.clone())?;
                Some(l)
            }
            None => None,
        };
        let c: Vec<&str> = ctrl_ids.iter().map(String::as_str).collect();
        let s: Vec<&str> = sensor_ids.iter().map(String::as_str).collect();
        let robot = registry.build_robot(config, &c, &s)?;
        Ok(SimRig { registry, robot, arms, leader })
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn shipped_reference_rig_file_matches() {
        let text = include_str!("../../rigs/reference.json");
        assert_eq!(RigConfig::from_json(text).unwrap(), RigConfig::reference());
    }

    #[test]
    fn rig_builds_registry_in_file_order() {
        let rig = SimRig::build(&RigConfig::reference(), Clock::virtual_time(), SimOptions::default()).unwrap();
        let ids: Vec<_> = rig.registry.list_devices().into_iter().map(|d| d.id).collect();
        assert_eq!(ids, ["arm_left", "arm_right", "cam_global"]);
        assert_eq!(rig.robot.config().action_dim(), 14);
    }

    #[test]
    fn rig_validation() {
        let mut rig = RigConfig::reference();
        rig.devices.pop();
        rig.devices[0].kind = DeviceKind::Sensor;
        assert!(rig.validate().is_err());
        let mut rig = RigConfig::reference();
        rig.devices[1].id = "arm_left".into();
        assert!(rig.validate().is_err());
    }

    #[test]
    fn determinism_of_sim_rig() {
        use crate::types::JointVector;
        let run = || {
            let clock = Clock::virtual_time();
            let opts = SimOptions { noise_sigma: 0.001, seed: 3, ..Default::default() };
            let rig = SimRig::build(&RigConfig::reference(), clock.clone(), opts).unwrap();
            let mut out = Vec::new();
            for k in 0..50 {
                let target = JointVector::new((0..14).map(|j| ((k * j) % 7) as f64 * 0.01).collect()).unwrap();
                rig.robot.command(&target).unwrap();
                clock.sleep(std::time::Duration::from_millis(7));
                for d in rig.robot.devices() {
                    out.push(d.driver.read().unwrap());
                }
            }
            out
        };
        assert_eq!(run(), run());
    }
}
