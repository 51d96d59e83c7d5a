use std::sync::{Mutex, MutexGuard};

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};

use crate::device::{Device, DeviceDescriptor, DeviceError, DeviceKind, LatencyModel};
use crate::time::{Clock, Timestamp};
use crate::types::{ArmSpec, JointVector, Payload, PayloadKind, Sample};

use super::SimError;

/// Plant state of one simulated arm: first-order, rate-limited tracking of
/// a position target.
#[derive(Debug, Clone, PartialEq)]
pub struct SimArmState {
    pub q: Vec<f64>,
    pub target: Vec<f64>,
    pub v_max: Vec<f64>,
    pub q_min: Vec<f64>,
    pub q_max: Vec<f64>,
    /// Standard deviation of Gaussian noise on reported positions; 0 disables.
    pub noise_sigma: f64,
    pub rng_seed: u64,
}

impl SimArmState {
    pub fn new(spec: &ArmSpec, initial: Vec<f64>) -> Result<Self, SimError> {
        if initial.len() != spec.v_max.len() {
            return Err(SimError::Dim { expected: spec.v_max.len(), got: initial.len() });
        }
        let q: Vec<f64> = initial
            .iter()
            .enumerate()
            .map(|(j, &x)| x.clamp(spec.q_min[j], spec.q_max[j]))
            .collect();
        Ok(SimArmState {
            target: q.clone(),
            q,
            v_max: spec.v_max.clone(),
            q_min: spec.q_min.clone(),
            q_max: spec.q_max.clone(),
            noise_sigma: 0.0,
            rng_seed: 0,
        })
    }

    /// Advances by `dt` seconds: each joint moves toward its target by at
    /// most `v_max * dt`, then is clamped to its position limits.
    pub fn step(&self, dt: f64) -> Result<SimArmState, SimError> {
        if !(dt > 0.0) {
            return Err(SimError::NonPositiveDt(dt));
        }
        let mut next = self.clone();
        next.advance(dt);
        Ok(next)
    }

    fn advance(&mut self, dt: f64) {
        for j in 0..self.q.len() {
            let err = self.target[j] - self.q[j];
            let lim = self.v_max[j] * dt;
            let q = if err.abs() <= lim { self.target[j] } else { self.q[j] + lim.copysign(err) };
            self.q[j] = q.clamp(self.q_min[j], self.q_max[j]);
        }
    }
}

struct ArmInner {
    state: SimArmState,
    updated_at: Timestamp,
    reads: u64,
    rng: ChaCha8Rng,
    noise: Option<Normal<f64>>,
}

/// A simulated arm-state bus: `read` reports the arm pose, `write` sets the
/// position target.
pub struct SimArm {
    desc: DeviceDescriptor,
    clock: Clock,
    inner: Mutex<ArmInner>,
}

impl SimArm {
    pub fn new(id: &str, rate_hz: f64, latency: LatencyModel, state: SimArmState, clock: Clock) -> Self {
        let noise = (state.noise_sigma > 0.0).then(|| Normal::new(0.0, state.noise_sigma).expect("finite sigma"));
        let now = clock.now();
        SimArm {
            desc: DeviceDescriptor::new(id, DeviceKind::Controller, PayloadKind::Joints, rate_hz, latency),
            inner: Mutex::new(ArmInner {
                rng: ChaCha8Rng::seed_from_u64(state.rng_seed),
                state,
                updated_at: now,
                reads: 0,
                noise,
            }),
            clock,
        }
    }

    fn lock(&self) -> MutexGuard<'_, ArmInner> {
        self.inner.lock().unwrap_or_else(|e| e.into_inner())
    }

    fn advance_to(inner: &mut ArmInner, now: Timestamp) {
        if now > inner.updated_at {
            let dt = (now.0 - inner.updated_at.0) as f64 * 1e-9;
            inner.state.advance(dt);
            inner.updated_at = now;
        }
    }

    /// Noise-free plant state at the current time.
    pub fn state(&self) -> SimArmState {
        let mut inner = self.lock();
        Self::advance_to(&mut inner, self.clock.now());
        inner.state.clone()
    }
}

impl Device for SimArm {
    fn descriptor(&self) -> &DeviceDescriptor {
        &self.desc
    }

    fn read(&self) -> Result<Sample, DeviceError> {
        let (sample, latency) = {
            let mut inner = self.lock();
            let now = self.clock.now();
            Self::advance_to(&mut inner, now);
            let mut q = inner.state.q.clone();
            if let Some(n) = inner.noise {
                let ArmInner { rng, .. } = &mut *inner;
                for v in &mut q {
                    *v += n.sample(rng);
                }
            }
            let latency = self.desc.latency.read_latency(inner.reads);
            inner.reads += 1;
            let q = JointVector::new(q).map_err(|e| DeviceError::ReadFailed { id: self.desc.id.clone(), reason: e.to_string() })?;
            (Sample::new(self.desc.id.clone(), now, Payload::Joints(q)), latency)
        };
        self.clock.sleep(latency);
        Ok(sample)
    }

    fn write(&self, command: &JointVector) -> Result<(), DeviceError> {
        let mut inner = self.lock();
        if command.dim() != inner.state.q.len() {
            return Err(DeviceError::CommandRejected {
                id: self.desc.id.clone(),
                reason: format!("expected {} dims, got {}", inner.state.q.len(), command.dim()),
            });
        }
        Self::advance_to(&mut inner, self.clock.now());
        let st = &mut inner.state;
        for (j, &x) in command.values().iter().enumerate() {
            st.target[j] = x.clamp(st.q_min[j], st.q_max[j]);
        }
        Ok(())
    }
}
