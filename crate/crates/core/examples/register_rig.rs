//! Register simulated devices, assemble a robot, and read it once.
//!
//! cargo run --example register_rig

use std::sync::Arc;

use cyr::device::{DeviceKind, LatencyModel, Registry};
use cyr::sim::{SimArm, SimArmState, SimCamera, SimCameraState};
use cyr::types::{ArmSpec, CameraSpec, RobotConfig};
use cyr::{Clock, JointVector};

fn main() -> Result<(), Box<dyn std::error::Error>> {
    let clock = Clock::virtual_time();
    let arm_spec = ArmSpec::uniform(1.0, 3.0);
    let cam_spec = CameraSpec { id: "cam_wrist".into(), width: 32, height: 24, channels: 3, rate_hz: 30.0 };
    let config = RobotConfig::new("bench-arm", vec![arm_spec.clone()], vec![cam_spec])?;

    let mut registry = Registry::new(clock.clone());
    let arm = SimArm::new("arm", 200.0, LatencyModel::fixed(200), SimArmState::new(&arm_spec, vec![0.0; 7])?, clock.clone());
    let cam = SimCameraState { width: 32, height: 24, channels: 3, native_rate_hz: 30.0 };
    registry.register_driver(Arc::new(arm))?;
    registry.register_driver(Arc::new(SimCamera::new("cam_wrist", cam, LatencyModel::fixed(3000), clock.clone())))?;

    // a second device under an existing id is refused
    let dup = SimCamera::new("arm", SimCameraState { width: 1, height: 1, channels: 1, native_rate_hz: 30.0 }, LatencyModel::ZERO, clock.clone());
    println!("duplicate: {}", registry.register_driver(Arc::new(dup)).unwrap_err());

    for d in registry.list_devices() {
        println!("{:<10} {:<10} {:>6.1} Hz  {} us", d.id, d.kind.to_string(), d.nominal_rate_hz, d.latency.base_us);
    }
    let robot = registry.build_robot(config, &["arm"], &["cam_wrist"])?;
    assert_eq!(robot.controllers()[0].desc.kind, DeviceKind::Controller);

    robot.command(&JointVector::new(vec![0.3, 0.0, 0.0, 0.0, 0.0, 0.0, 0.5])?)?;
    clock.sleep(std::time::Duration::from_millis(100));
    let (ts, q) = robot.read_joint_state()?;
    println!("joints at {ts}: {:?}", q.values());
    let frame = robot.sensors()[0].driver.read()?;
    println!("camera sample captured at {}", frame.capture_ts);
    Ok(())
}
