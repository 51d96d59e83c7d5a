//! Replay statistics: replays are resampled onto the ground-truth tick
//! timeline and summarized per tick and per dimension.

use std::fmt::Write as _;
use std::path::Path;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::time::Timestamp;
use crate::types::{Episode, JointVector};

pub const CSV_HEADER: &str = "tick,dim,gt,mean,var,mad";

#[derive(Debug, Error)]
pub enum AnalysisError {
    #[error("no replays to compare")]
    NoReplays,
    #[error("episode '{episode}' has dimension {got}, ground truth has {expected}")]
    DimMismatch { episode: String, expected: usize, got: usize },
    #[error("episode '{0}' has no frames")]
    NoFrames(String),
    #[error("{path}: {source}")]
    Io { path: String, source: std::io::Error },
}

/// Which recorded signal to compare.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Signal {
    /// The commanded action stream.
    #[default]
    Action,
    /// Concatenated measured controller states.
    JointState,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TickStats {
    pub tick: u64,
    pub gt: Vec<f64>,
    pub mean: Vec<f64>,
    pub var: Vec<f64>,
    pub mad: Vec<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ReplayStats {
    pub dim: usize,
    pub replays: usize,
    pub ticks: Vec<TickStats>,
    /// Ground-truth ticks left out because some episode had no value there.
    pub dropped_ticks: usize,
    /// Mean of the per-tick, per-dimension MAD table.
    pub global_mad: f64,
    /// Largest |replay - gt| over every tick, dimension and replay.
    pub max_deviation: f64,
    pub max_variance: f64,
}

impl ReplayStats {
    pub fn empty(dim: usize) -> Self {
        ReplayStats { dim, replays: 0, ticks: Vec::new(), dropped_ticks: 0, global_mad: 0.0, max_deviation: 0.0, max_variance: 0.0 }
    }
}

fn value_at(ep: &Episode, signal: Signal, t: Timestamp) -> Option<JointVector> {
    let last = ep.frames.last()?.tick_ts;
    if t > last {
        return None;
    }
    match signal {
        Signal::Action => ep.action_at(t).cloned(),
        Signal::JointState => ep.joint_state_at(&ep.joint_streams(), t),
    }
}

/// Resamples each replay at `replay.first_tick + (gt_tick - gt.first_tick)`
/// by latest-sample association and computes mean, population variance and
/// mean absolute deviation from ground truth.
pub fn compare_replays(gt: &Episode, replays: &[Episode], signal: Signal) -> Result<ReplayStats, AnalysisError> {
    if replays.is_empty() {
        return Err(AnalysisError::NoReplays);
    }
    let gt0 = gt.first_tick().ok_or_else(|| AnalysisError::NoFrames(gt.id.clone()))?;
    let dim = gt.config.action_dim();
    let mut starts = Vec::with_capacity(replays.len());
    for r in replays {
        if r.config.action_dim() != dim {
            return Err(AnalysisError::DimMismatch { episode: r.id.clone(), expected: dim, got: r.config.action_dim() });
        }
        starts.push(r.first_tick().ok_or_else(|| AnalysisError::NoFrames(r.id.clone()))?);
    }

    let n = replays.len() as f64;
    let mut stats = ReplayStats::empty(dim);
    stats.replays = replays.len();
    let mut mad_sum = 0.0;
    'ticks: for f in &gt.frames {
        let rel = f.tick_ts.saturating_since(gt0);
        let Some(g) = value_at(gt, signal, f.tick_ts) else {
            stats.dropped_ticks += 1;
            continue;
        };
        let mut rows = Vec::with_capacity(replays.len());
        for (r, &s) in replays.iter().zip(&starts) {
            match value_at(r, signal, s + rel) {
                Some(v) if v.dim() == dim => rows.push(v),
                Some(v) => return Err(AnalysisError::DimMismatch { episode: r.id.clone(), expected: dim, got: v.dim() }),
                None => {
                    stats.dropped_ticks += 1;
                    continue 'ticks;
                }
            }
        }
        let g = g.values();
        let mut t = TickStats { tick: f.tick_index, gt: g.to_vec(), mean: vec![0.0; dim], var: vec![0.0; dim], mad: vec![0.0; dim] };
        for j in 0..dim {
            let mut sum = 0.0;
            let mut dev = 0.0;
            for r in &rows {
                let x = r.values()[j];
                sum += x;
                dev += (x - g[j]).abs();
                stats.max_deviation = stats.max_deviation.max((x - g[j]).abs());
            }
            let mean = sum / n;
            let mut sq = 0.0;
            for r in &rows {
                let d = r.values()[j] - mean;
                sq += d * d;
            }
            t.mean[j] = mean;
            t.var[j] = sq / n;
            t.mad[j] = dev / n;
            mad_sum += t.mad[j];
            stats.max_variance = stats.max_variance.max(t.var[j]);
        }
        stats.ticks.push(t);
    }
    let cells = (stats.ticks.len() * dim) as f64;
    stats.global_mad = if cells > 0.0 { mad_sum / cells } else { 0.0 };
    Ok(stats)
}

/// CSV text: header plus one row per (tick, dim), tick-major.
pub fn stats_csv(stats: &ReplayStats) -> String {
    let mut out = String::with_capacity(32 * (1 + stats.ticks.len() * stats.dim));
    out.push_str(CSV_HEADER);
    out.push('\n');
    for t in &stats.ticks {
        for j in 0..stats.dim {
            let _ = writeln!(out, "{},{},{},{},{},{}", t.tick, j, t.gt[j], t.mean[j], t.var[j], t.mad[j]);
        }
    }
    out
}

/// Writes [`stats_csv`] to `path`; returns the number of lines including
/// the header.
pub fn emit_stats_csv(stats: &ReplayStats, path: &Path) -> Result<usize, AnalysisError> {
    let text = stats_csv(stats);
    std::fs::write(path, &text).map_err(|source| AnalysisError::Io { path: path.display().to_string(), source })?;
    Ok(text.lines().count())
}
