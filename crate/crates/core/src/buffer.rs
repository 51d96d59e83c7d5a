//! Append-only per-stream sample history with a latest-value view.
//!
//! One writer appends; any number of readers take the latest sample or
//! associate a tick timestamp against the history. Each operation holds the
//! lock only for a slice lookup or a push, so readers never observe a torn
//! sample and never wait on device latency.

use std::sync::{Arc, Mutex, MutexGuard};

use crate::collector::latest_index_at;
use crate::time::Timestamp;
use crate::types::Sample;

#[derive(Debug, Default)]
pub struct StreamBuffer {
    samples: Mutex<Vec<Arc<Sample>>>,
}

impl StreamBuffer {
    pub fn new() -> Self {
        Self::default()
    }

    fn lock(&self) -> MutexGuard<'_, Vec<Arc<Sample>>> {
        self.samples.lock().unwrap_or_else(|e| e.into_inner())
    }

    /// Appends unless `sample` repeats the capture time of the last record,
    /// in which case the existing record stands. Returns the record index.
    pub fn push_dedup(&self, sample: Sample) -> usize {
        let mut v = self.lock();
        if let Some(last) = v.last() {
            if last.capture_ts == sample.capture_ts {
                return v.len() - 1;
            }
        }
        v.push(Arc::new(sample));
        v.len() - 1
    }

    pub fn push(&self, sample: Sample) -> usize {
        let mut v = self.lock();
        v.push(Arc::new(sample));
        v.len() - 1
    }

    pub fn latest(&self) -> Option<Arc<Sample>> {
        self.lock().last().cloned()
    }

    pub fn len(&self) -> usize {
        self.lock().len()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    /// Last record with `capture_ts <= t`, among records at or after `from`.
    pub fn associate(&self, t: Timestamp, from: usize) -> Option<(usize, Arc<Sample>)> {
        let v = self.lock();
        let tail = v.get(from..)?;
        latest_index_at(tail, t).map(|i| (from + i, tail[i].clone()))
    }

    pub fn snapshot_from(&self, from: usize) -> Vec<Arc<Sample>> {
        self.lock().get(from..).map(|s| s.to_vec()).unwrap_or_default()
    }
}
