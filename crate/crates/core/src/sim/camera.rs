use std::sync::{Arc, Mutex};

use crate::device::{Device, DeviceDescriptor, DeviceError, DeviceKind, LatencyModel};
use crate::time::{grid_index_at, grid_offset_ns, Clock, Timestamp};
use crate::types::{ImagePayload, Payload, PayloadKind, Sample};

/// Synthetic camera producing one frame per native period.
#[derive(Debug, Clone, PartialEq)]
pub struct SimCameraState {
    pub width: u32,
    pub height: u32,
    pub channels: u8,
    pub native_rate_hz: f64,
}

impl SimCameraState {
    /// `pixel(x, y, c) = (x + y + frame_index + c) mod 256`.
    pub fn render(&self, frame_index: u64) -> ImagePayload {
        let (w, h, ch) = (self.width as u64, self.height as u64, self.channels as u64);
        let mut pixels = Vec::with_capacity((w * h * ch) as usize);
        for y in 0..h {
            for x in 0..w {
                for c in 0..ch {
                    pixels.push(((x + y + frame_index + c) % 256) as u8);
                }
            }
        }
        ImagePayload::new(self.width, self.height, self.channels, pixels).expect("valid geometry")
    }

    /// Index and generation time of the newest frame at `now`.
    pub fn frame_at(&self, now: Timestamp) -> (u64, Timestamp) {
        let k = grid_index_at(now.0, self.native_rate_hz);
        (k, Timestamp(grid_offset_ns(k, self.native_rate_hz)))
    }

    /// The most recent generated frame, stamped with its generation time.
    pub fn capture(&self, stream_id: &str, now: Timestamp) -> Sample {
        let (k, ts) = self.frame_at(now);
        Sample::new(stream_id, ts, Payload::Image(self.render(k)))
    }
}

pub struct SimCamera {
    desc: DeviceDescriptor,
    state: SimCameraState,
    clock: Clock,
    // (frame index, read count, cached sample)
    inner: Mutex<(Option<(u64, Arc<Sample>)>, u64)>,
}

impl SimCamera {
    pub fn new(id: &str, state: SimCameraState, latency: LatencyModel, clock: Clock) -> Self {
        SimCamera {
            desc: DeviceDescriptor::new(id, DeviceKind::Sensor, PayloadKind::Image, state.native_rate_hz, latency),
            state,
            clock,
            inner: Mutex::new((None, 0)),
        }
    }

    pub fn state(&self) -> &SimCameraState {
        &self.state
    }
}

impl Device for SimCamera {
    fn descriptor(&self) -> &DeviceDescriptor {
        &self.desc
    }

    fn read(&self) -> Result<Sample, DeviceError> {
        let (sample, latency) = {
            let mut inner = self.inner.lock().unwrap_or_else(|e| e.into_inner());
            let (k, _) = self.state.frame_at(self.clock.now());
            let sample = match &inner.0 {
                Some((idx, s)) if *idx == k => s.clone(),
                _ => {
                    let s = Arc::new(self.state.capture(&self.desc.id, self.clock.now()));
                    inner.0 = Some((k, s.clone()));
                    s
                }
            };
            let latency = self.desc.latency.read_latency(inner.1);
            inner.1 += 1;
            (sample, latency)
        };
        self.clock.sleep(latency);
        Ok((*sample).clone())
    }
}
