use std::fs;
use std::io::{BufWriter, Write};
use std::path::Path;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::{io_err, StoreError};
use crate::types::{Episode, ACTION_STREAM};

pub const INDEX_FILE: &str = "index.json";
pub const RECORDS_FILE: &str = "records.jsonl";

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrainingEntry {
    pub episode_id: String,
    /// Half-open frame range `[frame_start, frame_end)`.
    pub frame_start: u64,
    pub frame_end: u64,
    pub action_stream: String,
    pub observation_streams: Vec<String>,
}

/// Contents of `index.json`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrainingIndex {
    pub seed: u64,
    pub k: usize,
    pub available: usize,
    pub entries: Vec<TrainingEntry>,
}

/// One line of `records.jsonl`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrainingRecord {
    pub episode_id: String,
    pub tick_index: u64,
    pub tick_ts: u64,
    pub action: Option<Vec<f64>>,
    /// Record index per observation stream, `None` for an empty slot.
    pub observations: std::collections::BTreeMap<String, Option<usize>>,
}

/// Selects `k` episodes uniformly without replacement (seeded), preserving
/// input order, and writes `index.json` plus one `records.jsonl` line per
/// frame of every selected episode.
pub fn export_training_set(episodes: &[Episode], k: usize, seed: u64, out: &Path) -> Result<TrainingIndex, StoreError> {
    if k > episodes.len() {
        return Err(StoreError::NotEnough { k, available: episodes.len() });
    }
    for ep in episodes {
        let v = ep.validate();
        if !v.is_empty() {
            return Err(StoreError::Invalid(v));
        }
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut picked = rand::seq::index::sample(&mut rng, episodes.len(), k).into_vec();
    picked.sort_unstable();

    fs::create_dir_all(out).map_err(io_err(out))?;
    let records_path = out.join(RECORDS_FILE);
    let mut w = BufWriter::new(fs::File::create(&records_path).map_err(io_err(&records_path))?);
    let mut entries = Vec::with_capacity(k);
    for &i in &picked {
        let ep = &episodes[i];
        let observation_streams: Vec<String> = ep.streams.keys().filter(|s| *s != ACTION_STREAM).cloned().collect();
        for f in &ep.frames {
            let action = f
                .slots
                .get(ACTION_STREAM)
                .copied()
                .flatten()
                .and_then(|idx| ep.streams[ACTION_STREAM].samples[idx].payload.as_joints().map(|q| q.values().to_vec()));
            let rec = TrainingRecord {
                episode_id: ep.id.clone(),
                tick_index: f.tick_index,
                tick_ts: f.tick_ts.0,
                action,
                observations: observation_streams.iter().map(|s| (s.clone(), f.slots.get(s).copied().flatten())).collect(),
            };
            serde_json::to_writer(&mut w, &rec).map_err(|source| StoreError::Json { file: records_path.clone(), source })?;
            w.write_all(b"\n").map_err(io_err(&records_path))?;
        }
        entries.push(TrainingEntry {
            episode_id: ep.id.clone(),
            frame_start: 0,
            frame_end: ep.frames.len() as u64,
            action_stream: ACTION_STREAM.to_string(),
            observation_streams,
        });
    }
    w.flush().map_err(io_err(&records_path))?;

    let index = TrainingIndex { seed, k, available: episodes.len(), entries };
    let index_path = out.join(INDEX_FILE);
    let json = serde_json::to_vec_pretty(&index).map_err(|source| StoreError::Json { file: index_path.clone(), source })?;
    fs::write(&index_path, json).map_err(io_err(&index_path))?;
    Ok(index)
}
