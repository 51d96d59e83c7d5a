//! Device registration: the uniform contract every controller and sensor
//! implements once, the registry, and assembly of robots from registered
//! parts.

use std::collections::HashMap;
use std::fmt;
use std::sync::Arc;
use std::time::Duration;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::buffer::StreamBuffer;
use crate::time::{Clock, Timestamp};
use crate::types::{JointVector, Payload, PayloadKind, RobotConfig, Sample, TypeError, ACTION_STREAM, DIMS_PER_ARM};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum DeviceKind {
    Controller,
    Sensor,
}

impl fmt::Display for DeviceKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            DeviceKind::Controller => "controller",
            DeviceKind::Sensor => "sensor",
        })
    }
}

/// Per-read blocking time of a device.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
pub struct LatencyModel {
    pub base_us: u64,
    pub spike_us: u64,
    /// Every read whose index is a multiple of this incurs the spike; 0 disables.
    pub spike_period: u64,
}

impl LatencyModel {
    pub const ZERO: LatencyModel = LatencyModel { base_us: 0, spike_us: 0, spike_period: 0 };

    pub fn fixed(base_us: u64) -> Self {
        LatencyModel { base_us, spike_us: 0, spike_period: 0 }
    }

    /// Microseconds the `read_index`-th read (0-based) blocks for.
    pub fn read_latency_us(&self, read_index: u64) -> u64 {
        if self.spike_period > 0 && read_index % self.spike_period == 0 {
            self.base_us + self.spike_us
        } else {
            self.base_us
        }
    }

    pub fn read_latency(&self, read_index: u64) -> Duration {
        Duration::from_micros(self.read_latency_us(read_index))
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DeviceDescriptor {
    pub id: String,
    pub kind: DeviceKind,
    pub schema: PayloadKind,
    pub nominal_rate_hz: f64,
    pub latency: LatencyModel,
}

impl DeviceDescriptor {
    pub fn new(id: impl Into<String>, kind: DeviceKind, schema: PayloadKind, nominal_rate_hz: f64, latency: LatencyModel) -> Self {
        DeviceDescriptor { id: id.into(), kind, schema, nominal_rate_hz, latency }
    }
}

#[derive(Debug, Clone, PartialEq, Error)]
pub enum DeviceError {
    #[error("device '{0}' is not a controller")]
    NotAController(String),
    #[error("device '{id}' read failed: {reason}")]
    ReadFailed { id: String, reason: String },
    #[error("device '{id}' rejected command: {reason}")]
    CommandRejected { id: String, reason: String },
}

/// The whole device API: describe, read, and (controllers only) write.
///
/// `read` blocks for the device's latency and returns a sample stamped with
/// the time the value became valid, not the time the call returned.
pub trait Device: Send + Sync {
    fn descriptor(&self) -> &DeviceDescriptor;

    fn read(&self) -> Result<Sample, DeviceError>;

    fn write(&self, _command: &JointVector) -> Result<(), DeviceError> {
        Err(DeviceError::NotAController(self.descriptor().id.clone()))
    }
}

#[derive(Debug, Clone, PartialEq, Error)]
pub enum RegistryError {
    #[error("device id '{0}' is already registered")]
    DuplicateId(String),
    #[error("descriptor for '{0}' does not match the driver's own descriptor")]
    DescriptorMismatch(String),
    #[error("device '{0}': nominal rate must be > 0")]
    BadRate(String),
    #[error("device id '{0}' is reserved")]
    ReservedId(String),
    #[error("unknown device id '{0}'")]
    UnknownId(String),
    #[error("device '{id}' is a {found}, expected a {expected}")]
    KindMismatch { id: String, expected: DeviceKind, found: DeviceKind },
    #[error("config '{config}' has {arms} arm(s) but {controllers} controller(s) were given")]
    ArmCountMismatch { config: String, arms: usize, controllers: usize },
    #[error("controller '{0}' must publish joint vectors")]
    ControllerSchema(String),
    #[error("device '{0}' is bound twice")]
    DuplicateBinding(String),
}

struct Entry {
    desc: DeviceDescriptor,
    driver: Arc<dyn Device>,
}

/// Registered devices, in registration order.
pub struct Registry {
    clock: Clock,
    entries: Vec<Entry>,
    index: HashMap<String, usize>,
}

impl fmt::Debug for Registry {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.debug_struct("Registry").field("devices", &self.list_devices()).finish()
    }
}

impl Default for Registry {
    fn default() -> Self {
        Registry::new(Clock::real())
    }
}

impl Registry {
    pub fn new(clock: Clock) -> Self {
        Registry { clock, entries: Vec::new(), index: HashMap::new() }
    }

    pub fn clock(&self) -> &Clock {
        &self.clock
    }

    pub fn register(&mut self, desc: DeviceDescriptor, driver: Arc<dyn Device>) -> Result<String, RegistryError> {
        if self.index.contains_key(&desc.id) {
            return Err(RegistryError::DuplicateId(desc.id));
        }
        if desc.id == ACTION_STREAM {
            return Err(RegistryError::ReservedId(desc.id));
        }
        if !(desc.nominal_rate_hz > 0.0 && desc.nominal_rate_hz.is_finite()) {
            return Err(RegistryError::BadRate(desc.id));
        }
        if driver.descriptor() != &desc {
            return Err(RegistryError::DescriptorMismatch(desc.id));
        }
        let id = desc.id.clone();
        self.index.insert(id.clone(), self.entries.len());
        self.entries.push(Entry { desc, driver });
        Ok(id)
    }

    /// Registers a driver under its own descriptor.
    pub fn register_driver(&mut self, driver: Arc<dyn Device>) -> Result<String, RegistryError> {
        let desc = driver.descriptor().clone();
        self.register(desc, driver)
    }

    pub fn list_devices(&self) -> Vec<DeviceDescriptor> {
        self.entries.iter().map(|e| e.desc.clone()).collect()
    }

    pub fn len(&self) -> usize {
        self.entries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }

    pub fn get(&self, id: &str) -> Option<(&DeviceDescriptor, &Arc<dyn Device>)> {
        self.index.get(id).map(|&i| (&self.entries[i].desc, &self.entries[i].driver))
    }

    fn bind(&self, id: &str, kind: DeviceKind) -> Result<BoundDevice, RegistryError> {
        let (desc, driver) = self.get(id).ok_or_else(|| RegistryError::UnknownId(id.to_string()))?;
        if desc.kind != kind {
            return Err(RegistryError::KindMismatch { id: id.to_string(), expected: kind, found: desc.kind });
        }
        Ok(BoundDevice { desc: desc.clone(), driver: driver.clone() })
    }

    /// Validates all bindings up front; no driver is touched.
    pub fn build_robot(&self, config: RobotConfig, controller_ids: &[&str], sensor_ids: &[&str]) -> Result<RobotHandle, RegistryError> {
        let mut seen = std::collections::HashSet::new();
        for id in controller_ids.iter().chain(sensor_ids) {
            if !seen.insert(*id) {
                return Err(RegistryError::DuplicateBinding(id.to_string()));
            }
        }
        let controllers = controller_ids
            .iter()
            .map(|id| self.bind(id, DeviceKind::Controller))
            .collect::<Result<Vec<_>, _>>()?;
        let sensors = sensor_ids
            .iter()
            .map(|id| self.bind(id, DeviceKind::Sensor))
            .collect::<Result<Vec<_>, _>>()?;
        if controllers.len() != config.arms().len() {
            return Err(RegistryError::ArmCountMismatch {
                config: config.name().to_string(),
                arms: config.arms().len(),
                controllers: controllers.len(),
            });
        }
        if let Some(c) = controllers.iter().find(|c| c.desc.schema != PayloadKind::Joints) {
            return Err(RegistryError::ControllerSchema(c.desc.id.clone()));
        }
        Ok(RobotHandle {
            inner: Arc::new(RobotInner {
                config,
                controllers,
                sensors,
                clock: self.clock.clone(),
                actions: StreamBuffer::new(),
            }),
        })
    }
}

#[derive(Clone)]
pub struct BoundDevice {
    pub desc: DeviceDescriptor,
    pub driver: Arc<dyn Device>,
}

struct RobotInner {
    config: RobotConfig,
    controllers: Vec<BoundDevice>,
    sensors: Vec<BoundDevice>,
    clock: Clock,
    actions: StreamBuffer,
}

#[derive(Debug, Error)]
pub enum CommandError {
    #[error(transparent)]
    Shape(#[from] TypeError),
    #[error(transparent)]
    Device(#[from] DeviceError),
}

/// A validated robot: configuration plus bound controllers and sensors.
/// Clones share the same devices and action log.
#[derive(Clone)]
pub struct RobotHandle {
    inner: Arc<RobotInner>,
}

impl fmt::Debug for RobotHandle {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.debug_struct("RobotHandle")
            .field("config", &self.inner.config.name())
            .field("controllers", &self.controller_ids())
            .field("sensors", &self.sensor_ids())
            .finish()
    }
}

impl RobotHandle {
    pub fn config(&self) -> &RobotConfig {
        &self.inner.config
    }

    pub fn clock(&self) -> &Clock {
        &self.inner.clock
    }

    pub fn controllers(&self) -> &[BoundDevice] {
        &self.inner.controllers
    }

    pub fn sensors(&self) -> &[BoundDevice] {
        &self.inner.sensors
    }

    /// Controllers first, then sensors.
    pub fn devices(&self) -> impl Iterator<Item = &BoundDevice> {
        self.inner.controllers.iter().chain(&self.inner.sensors)
    }

    pub fn controller_ids(&self) -> Vec<String> {
        self.inner.controllers.iter().map(|d| d.desc.id.clone()).collect()
    }

    pub fn sensor_ids(&self) -> Vec<String> {
        self.inner.sensors.iter().map(|d| d.desc.id.clone()).collect()
    }

    /// Every command issued through [`RobotHandle::command`], in order.
    pub fn action_log(&self) -> &StreamBuffer {
        &self.inner.actions
    }

    /// Sends a full action (all arms) to the controllers, clamped to the
    /// position limits, and appends it to the action log. Returns the command
    /// timestamp and whether clamping changed anything.
    pub fn command(&self, action: &JointVector) -> Result<(Timestamp, bool), CommandError> {
        let cfg = &self.inner.config;
        if action.dim() != cfg.action_dim() {
            return Err(TypeError::DimMismatch { expected: cfg.action_dim(), got: action.dim() }.into());
        }
        let (q, clamped) = cfg.clamp_to_limits(action);
        for (arm, ctrl) in q.values().chunks(DIMS_PER_ARM).zip(&self.inner.controllers) {
            ctrl.driver.write(&JointVector::new(arm.to_vec())?)?;
        }
        let ts = self.inner.clock.now();
        self.inner.actions.push(Sample::new(ACTION_STREAM, ts, Payload::Joints(q)));
        Ok((ts, clamped))
    }

    /// Reads every controller in order (blocking on each device's latency)
    /// and concatenates the joint vectors.
    pub fn read_joint_state(&self) -> Result<(Timestamp, JointVector), DeviceError> {
        let mut parts = Vec::with_capacity(self.inner.controllers.len());
        let mut first_ts = None;
        for c in &self.inner.controllers {
            let s = c.driver.read()?;
            first_ts.get_or_insert(s.capture_ts);
            match s.payload {
                Payload::Joints(q) => parts.push(q),
                other => {
                    return Err(DeviceError::ReadFailed {
                        id: c.desc.id.clone(),
                        reason: format!("expected joints, got {}", other.kind()),
                    })
                }
            }
        }
        let q = JointVector::concat(&parts).map_err(|e| DeviceError::ReadFailed {
            id: "robot".into(),
            reason: e.to_string(),
        })?;
        Ok((first_ts.unwrap_or_default(), q))
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::types::ImagePayload;

    struct Fake(DeviceDescriptor);

    impl Device for Fake {
        fn descriptor(&self) -> &DeviceDescriptor {
            &self.0
        }
        fn read(&self) -> Result<Sample, DeviceError> {
            let payload = match self.0.schema {
                PayloadKind::Joints => Payload::Joints(JointVector::zeros(7)),
                _ => Payload::Image(ImagePayload::new(1, 1, 1, vec![0]).unwrap()),
            };
            Ok(Sample::new(self.0.id.clone(), Timestamp::ZERO, payload))
        }
    }

    fn fake(id: &str, kind: DeviceKind) -> (DeviceDescriptor, Arc<dyn Device>) {
        let schema = match kind {
            DeviceKind::Controller => PayloadKind::Joints,
            DeviceKind::Sensor => PayloadKind::Image,
        };
        let d = DeviceDescriptor::new(id, kind, schema, 30.0, LatencyModel::ZERO);
        (d.clone(), Arc::new(Fake(d)))
    }

    fn dual_rig() -> Registry {
        let mut reg = Registry::new(Clock::virtual_time());
        for (id, kind) in [
            ("arm_left", DeviceKind::Controller),
            ("arm_right", DeviceKind::Controller),
            ("cam_left_wrist", DeviceKind::Sensor),
            ("cam_right_wrist", DeviceKind::Sensor),
            ("cam_global", DeviceKind::Sensor),
        ] {
            let (d, drv) = fake(id, kind);
            reg.register(d, drv).unwrap();
        }
        reg
    }

    #[test]
    fn latency_schedule() {
        let m = LatencyModel::fixed(200);
        assert!((0..50).all(|i| m.read_latency_us(i) == 200));
        let m = LatencyModel { base_us: 5000, spike_us: 10000, spike_period: 20 };
        assert_eq!(m.read_latency_us(20), 15000);
        assert_eq!(m.read_latency_us(21), 5000);
        assert_eq!(m.read_latency_us(0), 15000);
    }

    #[test]
    fn register_then_list() {
        let mut reg = Registry::default();
        assert!(reg.list_devices().is_empty());
        let (d, drv) = fake("cam_global", DeviceKind::Sensor);
        assert_eq!(reg.register(d.clone(), drv.clone()).unwrap(), "cam_global");
        assert_eq!(reg.list_devices(), vec![d.clone()]);
        assert_eq!(reg.register(d, drv), Err(RegistryError::DuplicateId("cam_global".into())));
    }

    #[test]
    fn failed_duplicate_leaves_registry_unchanged() {
        let mut reg = Registry::default();
        let mut inserted = Vec::new();
        for id in ["a", "b"] {
            let (d, drv) = fake(id, DeviceKind::Sensor);
            reg.register(d.clone(), drv).unwrap();
            inserted.push(d);
        }
        let (d, drv) = fake("a", DeviceKind::Controller);
        assert!(reg.register(d, drv).is_err());
        assert_eq!(reg.list_devices(), inserted);
    }

    #[test]
    fn mismatched_descriptor_rejected() {
        let mut reg = Registry::default();
        let (mut d, drv) = fake("a", DeviceKind::Sensor);
        d.nominal_rate_hz = 60.0;
        assert_eq!(reg.register(d, drv), Err(RegistryError::DescriptorMismatch("a".into())));
    }

    #[test]
    fn dual_arm_with_three_cameras_builds() {
        let reg = dual_rig();
        let before = reg.list_devices();
        let robot = reg
            .build_robot(
                RobotConfig::dual_arm(),
                &["arm_left", "arm_right"],
                &["cam_left_wrist", "cam_right_wrist", "cam_global"],
            )
            .unwrap();
        assert_eq!(robot.controller_ids(), ["arm_left", "arm_right"]);
        assert_eq!(reg.list_devices(), before);
    }

    #[test]
    fn binding_errors_are_named() {
        let reg = dual_rig();
        let err = reg
            .build_robot(RobotConfig::single_arm(), &["arm_left", "arm_right"], &[])
            .unwrap_err();
        assert!(matches!(err, RegistryError::ArmCountMismatch { arms: 1, controllers: 2, .. }));
        let err = reg.build_robot(RobotConfig::single_arm(), &["cam_global"], &[]).unwrap_err();
        assert!(matches!(err, RegistryError::KindMismatch { expected: DeviceKind::Controller, .. }));
        let err = reg.build_robot(RobotConfig::single_arm(), &["nope"], &[]).unwrap_err();
        assert_eq!(err, RegistryError::UnknownId("nope".into()));
    }

    #[test]
    fn handle_survives_later_registrations() {
        let mut reg = dual_rig();
        let robot = reg
            .build_robot(RobotConfig::dual_arm(), &["arm_left", "arm_right"], &["cam_global"])
            .unwrap();
        let (d, drv) = fake("cam_extra", DeviceKind::Sensor);
        reg.register(d, drv).unwrap();
        assert_eq!(robot.sensor_ids(), ["cam_global"]);
        assert!(robot.read_joint_state().is_ok());
    }
}
