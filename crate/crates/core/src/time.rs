//! Session time base.
//!
//! All timestamps are nanoseconds since the epoch of a [`Clock`]. A clock is
//! either real (monotonic, backed by [`Instant`]) or virtual. The virtual
//! clock is a cooperative scheduler over ordinary OS threads: exactly one
//! participant runs at a time, and time only advances when the running
//! participant sleeps. Wake-ups are ordered by `(wake time, enqueue order)`,
//! so a run is bit-for-bit reproducible while the code under test is the same
//! threaded code that runs against the real clock.
//!
//! Threads become participants either by being spawned through
//! [`Clock::spawn`] or implicitly on their first [`Clock::sleep_until`].
//! A participant must not block on anything other than the clock while it
//! holds the run token; use [`TaskHandle::join`] to wait for other tasks.

use std::collections::{BTreeSet, HashMap};
use std::fmt;
use std::ops::{Add, Sub};
use std::sync::{Arc, Condvar, Mutex, MutexGuard};
use std::thread::{self, JoinHandle, ThreadId};
use std::time::{Duration, Instant};

use serde::{Deserialize, Serialize};

/// Nanoseconds since the session epoch.
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(transparent)]
pub struct Timestamp(pub u64);

impl Timestamp {
    pub const ZERO: Timestamp = Timestamp(0);

    pub fn from_secs_f64(secs: f64) -> Self {
        Timestamp((secs * 1e9).round().max(0.0) as u64)
    }

    pub fn nanos(self) -> u64 {
        self.0
    }

    pub fn as_secs_f64(self) -> f64 {
        self.0 as f64 * 1e-9
    }

    /// `self - earlier` in nanoseconds, `None` if `earlier` is later.
    pub fn checked_since(self, earlier: Timestamp) -> Option<u64> {
        self.0.checked_sub(earlier.0)
    }

    pub fn saturating_since(self, earlier: Timestamp) -> u64 {
        self.0.saturating_sub(earlier.0)
    }
}

impl fmt::Display for Timestamp {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{}ns", self.0)
    }
}

impl Add<Duration> for Timestamp {
    type Output = Timestamp;
    fn add(self, rhs: Duration) -> Timestamp {
        Timestamp(self.0 + rhs.as_nanos() as u64)
    }
}

impl Add<u64> for Timestamp {
    type Output = Timestamp;
    fn add(self, rhs: u64) -> Timestamp {
        Timestamp(self.0 + rhs)
    }
}

impl Sub<Timestamp> for Timestamp {
    type Output = Duration;
    fn sub(self, rhs: Timestamp) -> Duration {
        Duration::from_nanos(self.0.saturating_sub(rhs.0))
    }
}

/// Offset in nanoseconds of the `k`-th boundary of a `rate_hz` grid.
///
/// Floors to whole nanoseconds, so boundaries of a 30 Hz grid are
/// 0, 33_333_333, 66_666_666, 100_000_000, ...
pub fn grid_offset_ns(k: u64, rate_hz: f64) -> u64 {
    (k as f64 * 1e9 / rate_hz).floor() as u64
}

/// Index of the last boundary of a `rate_hz` grid at or before `t_ns`.
pub fn grid_index_at(t_ns: u64, rate_hz: f64) -> u64 {
    let mut k = (t_ns as f64 * rate_hz / 1e9).floor() as u64;
    // float rounding can land one step off either way
    while k > 0 && grid_offset_ns(k, rate_hz) > t_ns {
        k -= 1;
    }
    while grid_offset_ns(k + 1, rate_hz) <= t_ns {
        k += 1;
    }
    k
}

/// A shared time source. Cheap to clone.
#[derive(Clone)]
pub struct Clock {
    inner: ClockInner,
}

#[derive(Clone)]
enum ClockInner {
    Real(Instant),
    Virtual(Arc<VirtualClock>),
}

impl fmt::Debug for Clock {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match &self.inner {
            ClockInner::Real(_) => f.write_str("Clock::Real"),
            ClockInner::Virtual(_) => write!(f, "Clock::Virtual({})", self.now()),
        }
    }
}

impl Default for Clock {
    fn default() -> Self {
        Clock::real()
    }
}

impl Clock {
    /// Monotonic wall-time clock whose epoch is now.
    pub fn real() -> Self {
        Clock { inner: ClockInner::Real(Instant::now()) }
    }

    /// Logical clock starting at zero.
    pub fn virtual_time() -> Self {
        Clock { inner: ClockInner::Virtual(Arc::new(VirtualClock::default())) }
    }

    pub fn is_virtual(&self) -> bool {
        matches!(self.inner, ClockInner::Virtual(_))
    }

    pub fn now(&self) -> Timestamp {
        match &self.inner {
            ClockInner::Real(epoch) => Timestamp(epoch.elapsed().as_nanos() as u64),
            ClockInner::Virtual(v) => Timestamp(v.lock().now),
        }
    }

    pub fn sleep_until(&self, deadline: Timestamp) {
        match &self.inner {
            ClockInner::Real(epoch) => loop {
                let now = epoch.elapsed().as_nanos() as u64;
                if now >= deadline.0 {
                    return;
                }
                thread::sleep(Duration::from_nanos(deadline.0 - now));
            },
            ClockInner::Virtual(v) => v.sleep_until(deadline.0),
        }
    }

    pub fn sleep(&self, d: Duration) {
        if d.is_zero() && !self.is_virtual() {
            return;
        }
        self.sleep_until(self.now() + d);
    }

    /// Spawns a task that participates in this clock's schedule.
    pub fn spawn<F, T>(&self, name: &str, f: F) -> TaskHandle<T>
    where
        F: FnOnce() -> T + Send + 'static,
        T: Send + 'static,
    {
        let builder = thread::Builder::new().name(name.to_string());
        match &self.inner {
            ClockInner::Real(_) => TaskHandle {
                handle: builder.spawn(f).expect("spawn thread"),
                clock: self.clone(),
            },
            ClockInner::Virtual(v) => {
                v.acquire();
                let id = v.enqueue_new();
                let vc = v.clone();
                let handle = builder
                    .spawn(move || {
                        vc.attach(id);
                        let _exit = ExitGuard(vc);
                        f()
                    })
                    .expect("spawn thread");
                TaskHandle { handle, clock: self.clone() }
            }
        }
    }

    /// Releases the run token while `f` blocks on something outside the
    /// clock, then re-acquires it. A no-op wrapper for the real clock.
    pub fn blocking<R>(&self, f: impl FnOnce() -> R) -> R {
        match &self.inner {
            ClockInner::Real(_) => f(),
            ClockInner::Virtual(v) => {
                v.detach();
                let out = f();
                v.acquire();
                out
            }
        }
    }
}

/// Handle to a task spawned with [`Clock::spawn`].
pub struct TaskHandle<T> {
    handle: JoinHandle<T>,
    clock: Clock,
}

impl<T> TaskHandle<T> {
    pub fn join(self) -> thread::Result<T> {
        let handle = self.handle;
        self.clock.blocking(move || handle.join())
    }

    pub fn is_finished(&self) -> bool {
        self.handle.is_finished()
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
enum Participant {
    Running,
    Waiting,
    Detached,
}

#[derive(Default)]
struct VirtualState {
    now: u64,
    running: Option<u64>,
    queue: BTreeSet<(u64, u64, u64)>,
    participants: HashMap<u64, Participant>,
    threads: HashMap<ThreadId, u64>,
    next_id: u64,
    next_seq: u64,
}

#[derive(Default)]
struct VirtualClock {
    state: Mutex<VirtualState>,
    turn: Condvar,
}

impl VirtualClock {
    fn lock(&self) -> MutexGuard<'_, VirtualState> {
        self.state.lock().unwrap_or_else(|e| e.into_inner())
    }

    fn current(st: &mut VirtualState) -> u64 {
        let tid = thread::current().id();
        if let Some(&id) = st.threads.get(&tid) {
            return id;
        }
        let id = st.next_id;
        st.next_id += 1;
        st.threads.insert(tid, id);
        st.participants.insert(id, Participant::Detached);
        id
    }

    fn push(st: &mut VirtualState, id: u64, wake: u64) {
        let seq = st.next_seq;
        st.next_seq += 1;
        let wake = wake.max(st.now);
        st.queue.insert((wake, seq, id));
        st.participants.insert(id, Participant::Waiting);
    }

    fn dispatch(&self, st: &mut VirtualState) {
        if st.running.is_some() {
            return;
        }
        if let Some(first) = st.queue.iter().next().copied() {
            st.queue.remove(&first);
            let (wake, _, id) = first;
            st.now = st.now.max(wake);
            st.running = Some(id);
            st.participants.insert(id, Participant::Running);
            self.turn.notify_all();
        }
    }

    fn wait_turn(&self, mut st: MutexGuard<'_, VirtualState>, id: u64) {
        while st.running != Some(id) {
            st = self.turn.wait(st).unwrap_or_else(|e| e.into_inner());
        }
    }

    fn sleep_until(&self, deadline: u64) {
        let mut st = self.lock();
        let id = Self::current(&mut st);
        if st.running == Some(id) {
            st.running = None;
        }
        Self::push(&mut st, id, deadline);
        self.dispatch(&mut st);
        self.wait_turn(st, id);
    }

    /// Makes the calling thread the running participant.
    fn acquire(&self) {
        let mut st = self.lock();
        let id = Self::current(&mut st);
        if st.running == Some(id) {
            return;
        }
        let now = st.now;
        Self::push(&mut st, id, now);
        self.dispatch(&mut st);
        self.wait_turn(st, id);
    }

    fn detach(&self) {
        let mut st = self.lock();
        let id = Self::current(&mut st);
        if st.running == Some(id) {
            st.running = None;
        }
        st.participants.insert(id, Participant::Detached);
        self.dispatch(&mut st);
    }

    /// Registers a not-yet-started task, runnable at the current instant.
    fn enqueue_new(&self) -> u64 {
        let mut st = self.lock();
        let id = st.next_id;
        st.next_id += 1;
        let now = st.now;
        Self::push(&mut st, id, now);
        id
    }

    fn attach(&self, id: u64) {
        let mut st = self.lock();
        st.threads.insert(thread::current().id(), id);
        self.wait_turn(st, id);
    }

    fn exit(&self) {
        let mut st = self.lock();
        let tid = thread::current().id();
        if let Some(id) = st.threads.remove(&tid) {
            st.participants.remove(&id);
            st.queue.retain(|&(_, _, q)| q != id);
            if st.running == Some(id) {
                st.running = None;
            }
        }
        self.dispatch(&mut st);
    }
}

struct ExitGuard(Arc<VirtualClock>);

impl Drop for ExitGuard {
    fn drop(&mut self) {
        self.0.exit();
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use std::sync::atomic::{AtomicU64, Ordering};

    #[test]
    fn grid_boundaries_floor_to_nanos() {
        assert_eq!(grid_offset_ns(1, 30.0), 33_333_333);
        assert_eq!(grid_offset_ns(3, 30.0), 100_000_000);
        assert_eq!(grid_index_at(40_000_000, 30.0), 1);
        assert_eq!(grid_index_at(33_333_333, 30.0), 1);
        assert_eq!(grid_index_at(33_333_332, 30.0), 0);
        for k in 0..5000 {
            let t = grid_offset_ns(k, 60.0);
            assert_eq!(grid_index_at(t, 60.0), k);
            if t > 0 {
                assert_eq!(grid_index_at(t - 1, 60.0), k - 1);
            }
        }
    }

    #[test]
    fn virtual_sleep_advances_without_waiting() {
        let clock = Clock::virtual_time();
        let wall = Instant::now();
        clock.sleep(Duration::from_secs(3600));
        assert_eq!(clock.now(), Timestamp(3_600_000_000_000));
        assert!(wall.elapsed() < Duration::from_secs(5));
    }

    #[test]
    fn virtual_tasks_interleave_deterministically() {
        fn run() -> Vec<(u64, u64)> {
            let clock = Clock::virtual_time();
            let log = Arc::new(Mutex::new(Vec::new()));
            let mut handles = Vec::new();
            for (who, period) in [(1u64, 3u64), (2, 5)] {
                let c = clock.clone();
                let log = log.clone();
                handles.push(clock.spawn("t", move || {
                    for k in 1..=10 {
                        c.sleep_until(Timestamp(k * period));
                        log.lock().unwrap().push((c.now().0, who));
                    }
                }));
            }
            for h in handles {
                h.join().unwrap();
            }
            let v = log.lock().unwrap().clone();
            v
        }
        let a = run();
        assert_eq!(a, run());
        assert!(a.windows(2).all(|w| w[0].0 <= w[1].0));
        assert_eq!(a.len(), 20);
        assert_eq!(a.last().unwrap().0, 50);
    }

    #[test]
    fn spawner_keeps_token_until_it_sleeps() {
        let clock = Clock::virtual_time();
        let hits = Arc::new(AtomicU64::new(0));
        let h = {
            let hits = hits.clone();
            clock.spawn("child", move || {
                hits.fetch_add(1, Ordering::SeqCst);
            })
        };
        // the child cannot have run yet: we still hold the token
        assert_eq!(hits.load(Ordering::SeqCst), 0);
        h.join().unwrap();
        assert_eq!(hits.load(Ordering::SeqCst), 1);
    }
}
