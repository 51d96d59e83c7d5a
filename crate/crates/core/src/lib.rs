//! Robot-control middleware: device registry, simulated hardware, a
//! mixed-rate collector, episode storage, control modes and a policy
//! bridge.

pub mod analysis;
pub mod buffer;
pub mod collector;
pub mod control;
pub mod daemon;
pub mod device;
pub mod policy;
pub mod sim;
pub mod store;
pub mod time;
pub mod types;
pub mod workflow;

pub use time::{Clock, Timestamp};
pub use types::{Episode, Frame, JointVector, Payload, RobotConfig, Sample};
