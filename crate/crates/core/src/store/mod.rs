//! On-disk episode container.
//!
//! An episode directory holds one `<stream_id>.cyr` file per stream, a
//! `frames.cyr` frame index, and `meta.json`. All binary data is
//! little-endian. Stream files are a 8-byte header (`CYRS`, version u16,
//! reserved u16) followed by `capture_ts u64 | payload_len u32 | payload`
//! records. The frame index is `CYRF`, version u16, stream_count u16, then
//! per frame `tick_index u32 | tick_ts u64` and one u64 record index per
//! stream in manifest order (`u64::MAX` marks a missing slot). The manifest
//! is written last and is the commit point.

mod export;

use std::collections::BTreeMap;
use std::fs::{self, File};
use std::io::{BufWriter, Write};
use std::path::{Path, PathBuf};
use std::sync::Arc;

use serde::{Deserialize, Serialize};
use thiserror::Error;

pub use export::{export_training_set, TrainingEntry, TrainingIndex, TrainingRecord, INDEX_FILE, RECORDS_FILE};

use crate::time::Timestamp;
use crate::types::{Episode, Frame, ImagePayload, JointVector, Payload, PayloadKind, RobotConfig, Sample, Stream, Violation};

pub const STREAM_MAGIC: [u8; 4] = *b"CYRS";
pub const FRAMES_MAGIC: [u8; 4] = *b"CYRF";
pub const FORMAT_VERSION: u16 = 1;
pub const SCHEMA_VERSION: u32 = 1;
pub const MANIFEST_FILE: &str = "meta.json";
pub const FRAMES_FILE: &str = "frames.cyr";
/// Frame-index sentinel for an empty slot.
pub const MISSING: u64 = u64::MAX;

const HEADER_LEN: usize = 8;
const RECORD_HEAD: usize = 12;

#[derive(Debug, Error)]
pub enum StoreError {
    #[error("{path}: {source}")]
    Io { path: PathBuf, source: std::io::Error },
    #[error("refusing to write into non-empty directory {0}")]
    NotEmpty(PathBuf),
    #[error("episode is invalid: {}", .0.iter().map(|v| v.to_string()).collect::<Vec<_>>().join("; "))]
    Invalid(Vec<Violation>),
    #[error("stream id '{0}' cannot be used as a file name")]
    BadStreamId(String),
    #[error("{file}: bad magic {found:?}, expected {expected:?}")]
    Magic { file: PathBuf, found: String, expected: String },
    #[error("{file}: unsupported version {found}, expected {expected}")]
    Version { file: PathBuf, found: u16, expected: u16 },
    #[error("{file}: header truncated ({len} bytes)")]
    TruncatedHeader { file: PathBuf, len: usize },
    #[error("{file}: record truncated at byte offset {offset}")]
    Truncated { file: PathBuf, offset: u64 },
    #[error("{file}: malformed payload in record at byte offset {offset}: {reason}")]
    Payload { file: PathBuf, offset: u64, reason: String },
    #[error("{file}: {reason}")]
    Corrupt { file: PathBuf, reason: String },
    #[error("{file}: manifest declares {declared} records, file has {found}")]
    CountMismatch { file: PathBuf, declared: u64, found: u64 },
    #[error("{file}: {source}")]
    Json { file: PathBuf, source: serde_json::Error },
    #[error("cannot sample {k} of {available} episodes")]
    NotEnough { k: usize, available: usize },
}

fn io_err(path: &Path) -> impl FnOnce(std::io::Error) -> StoreError + '_ {
    move |source| StoreError::Io { path: path.to_path_buf(), source }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct StreamEntry {
    pub id: String,
    pub payload_type: PayloadKind,
    pub record_count: u64,
    pub file: String,
}

/// Contents of `meta.json`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EpisodeManifest {
    pub id: String,
    pub task: String,
    pub schema_version: u32,
    pub streams: Vec<StreamEntry>,
    pub frame_count: u64,
    /// Wall-clock start of the recording session, ISO-8601.
    pub session_epoch: String,
    /// Collection settings (rate, mode) copied from the episode metadata.
    pub collection: BTreeMap<String, String>,
    pub robot: RobotConfig,
    #[serde(default)]
    pub meta: BTreeMap<String, String>,
}

impl EpisodeManifest {
    pub fn load(dir: &Path) -> Result<Self, StoreError> {
        let path = dir.join(MANIFEST_FILE);
        let text = fs::read(&path).map_err(io_err(&path))?;
        let m: EpisodeManifest = serde_json::from_slice(&text).map_err(|source| StoreError::Json { file: path.clone(), source })?;
        if m.schema_version != SCHEMA_VERSION {
            return Err(StoreError::Corrupt { file: path, reason: format!("schema_version {} unsupported", m.schema_version) });
        }
        Ok(m)
    }
}

/// Stream ids become file names, so they are limited to a safe alphabet.
pub fn check_stream_id(id: &str) -> Result<(), StoreError> {
    let ok = !id.is_empty()
        && id != "frames"
        && id != "meta"
        && !id.starts_with('.')
        && id.chars().all(|c| c.is_ascii_alphanumeric() || matches!(c, '_' | '-' | '.'));
    if ok {
        Ok(())
    } else {
        Err(StoreError::BadStreamId(id.to_string()))
    }
}

pub fn encode_payload(p: &Payload) -> Vec<u8> {
    match p {
        Payload::Joints(q) => q.values().iter().flat_map(|v| v.to_le_bytes()).collect(),
        Payload::Image(img) => {
            let mut out = Vec::with_capacity(9 + img.pixels().len());
            out.extend_from_slice(&img.width().to_le_bytes());
            out.extend_from_slice(&img.height().to_le_bytes());
            out.push(img.channels());
            out.extend_from_slice(img.pixels());
            out
        }
        Payload::Scalar(v) => v.to_le_bytes().to_vec(),
        Payload::Bytes(b) => b.clone(),
    }
}

pub fn decode_payload(kind: PayloadKind, bytes: &[u8]) -> Result<Payload, String> {
    let f64s = |b: &[u8]| -> Vec<f64> { b.chunks_exact(8).map(|c| f64::from_le_bytes(c.try_into().unwrap())).collect() };
    match kind {
        PayloadKind::Joints => {
            if bytes.len() % 8 != 0 {
                return Err(format!("joint payload length {} is not a multiple of 8", bytes.len()));
            }
            JointVector::new(f64s(bytes)).map(Payload::Joints).map_err(|e| e.to_string())
        }
        PayloadKind::Image => {
            if bytes.len() < 9 {
                return Err(format!("image payload too short ({} bytes)", bytes.len()));
            }
            let w = u32::from_le_bytes(bytes[0..4].try_into().unwrap());
            let h = u32::from_le_bytes(bytes[4..8].try_into().unwrap());
            ImagePayload::new(w, h, bytes[8], bytes[9..].to_vec()).map(Payload::Image).map_err(|e| e.to_string())
        }
        PayloadKind::Scalar => match bytes.try_into() {
            Ok(b) => Ok(Payload::Scalar(f64::from_le_bytes(b))),
            Err(_) => Err(format!("scalar payload must be 8 bytes, got {}", bytes.len())),
        },
        PayloadKind::Bytes => Ok(Payload::Bytes(bytes.to_vec())),
    }
}

/// Serializes one stream file.
pub fn encode_stream(samples: &[Arc<Sample>]) -> Vec<u8> {
    let mut out = Vec::new();
    out.extend_from_slice(&STREAM_MAGIC);
    out.extend_from_slice(&FORMAT_VERSION.to_le_bytes());
    out.extend_from_slice(&0u16.to_le_bytes());
    for s in samples {
        let payload = encode_payload(&s.payload);
        out.extend_from_slice(&s.capture_ts.0.to_le_bytes());
        out.extend_from_slice(&(payload.len() as u32).to_le_bytes());
        out.extend_from_slice(&payload);
    }
    out
}

fn check_header(file: &Path, bytes: &[u8], magic: [u8; 4]) -> Result<u16, StoreError> {
    if bytes.len() < HEADER_LEN {
        return Err(StoreError::TruncatedHeader { file: file.to_path_buf(), len: bytes.len() });
    }
    if bytes[0..4] != magic {
        return Err(StoreError::Magic {
            file: file.to_path_buf(),
            found: String::from_utf8_lossy(&bytes[0..4]).into_owned(),
            expected: String::from_utf8_lossy(&magic).into_owned(),
        });
    }
    let version = u16::from_le_bytes([bytes[4], bytes[5]]);
    if version != FORMAT_VERSION {
        return Err(StoreError::Version { file: file.to_path_buf(), found: version, expected: FORMAT_VERSION });
    }
    Ok(u16::from_le_bytes([bytes[6], bytes[7]]))
}

/// Raw records of a stream file: `(capture_ts, payload bytes, record offset)`.
pub fn decode_stream_records<'a>(file: &Path, bytes: &'a [u8]) -> Result<Vec<(Timestamp, &'a [u8], u64)>, StoreError> {
    check_header(file, bytes, STREAM_MAGIC)?;
    let mut out = Vec::new();
    let mut pos = HEADER_LEN;
    while pos < bytes.len() {
        let truncated = || StoreError::Truncated { file: file.to_path_buf(), offset: pos as u64 };
        let head = bytes.get(pos..pos + RECORD_HEAD).ok_or_else(truncated)?;
        let ts = u64::from_le_bytes(head[0..8].try_into().unwrap());
        let len = u32::from_le_bytes(head[8..12].try_into().unwrap()) as usize;
        let body = bytes.get(pos + RECORD_HEAD..pos + RECORD_HEAD + len).ok_or_else(truncated)?;
        out.push((Timestamp(ts), body, pos as u64));
        pos += RECORD_HEAD + len;
    }
    Ok(out)
}

/// Reads one stream file into samples of the given kind.
pub fn read_stream_file(path: &Path, stream_id: &str, kind: PayloadKind) -> Result<Vec<Arc<Sample>>, StoreError> {
    let bytes = fs::read(path).map_err(io_err(path))?;
    let mut out = Vec::new();
    let mut prev = Timestamp(0);
    for (ts, body, offset) in decode_stream_records(path, &bytes)? {
        if ts < prev {
            return Err(StoreError::Corrupt { file: path.to_path_buf(), reason: format!("record at byte offset {offset} goes back in time") });
        }
        prev = ts;
        let payload = decode_payload(kind, body).map_err(|reason| StoreError::Payload { file: path.to_path_buf(), offset, reason })?;
        out.push(Arc::new(Sample::new(stream_id, ts, payload)));
    }
    Ok(out)
}

/// Serializes the frame index with streams in `order`.
pub fn encode_frames(frames: &[Frame], order: &[&str]) -> Vec<u8> {
    let mut out = Vec::with_capacity(HEADER_LEN + frames.len() * (12 + 8 * order.len()));
    out.extend_from_slice(&FRAMES_MAGIC);
    out.extend_from_slice(&FORMAT_VERSION.to_le_bytes());
    out.extend_from_slice(&(order.len() as u16).to_le_bytes());
    for f in frames {
        out.extend_from_slice(&(f.tick_index as u32).to_le_bytes());
        out.extend_from_slice(&f.tick_ts.0.to_le_bytes());
        for id in order {
            let idx = f.slots.get(*id).copied().flatten().map_or(MISSING, |i| i as u64);
            out.extend_from_slice(&idx.to_le_bytes());
        }
    }
    out
}

/// Parses a frame index into `(tick_index, tick_ts, record indices)`.
pub fn decode_frames(file: &Path, bytes: &[u8]) -> Result<Vec<(u32, Timestamp, Vec<Option<u64>>)>, StoreError> {
    let n = check_header(file, bytes, FRAMES_MAGIC)? as usize;
    let rec = 12 + 8 * n;
    let body = &bytes[HEADER_LEN..];
    if body.len() % rec != 0 {
        let offset = (HEADER_LEN + body.len() / rec * rec) as u64;
        return Err(StoreError::Truncated { file: file.to_path_buf(), offset });
    }
    Ok(body
        .chunks_exact(rec)
        .map(|c| {
            let tick = u32::from_le_bytes(c[0..4].try_into().unwrap());
            let ts = Timestamp(u64::from_le_bytes(c[4..12].try_into().unwrap()));
            let slots = c[12..]
                .chunks_exact(8)
                .map(|s| match u64::from_le_bytes(s.try_into().unwrap()) {
                    MISSING => None,
                    i => Some(i),
                })
                .collect();
            (tick, ts, slots)
        })
        .collect())
}

pub fn manifest_for(ep: &Episode) -> EpisodeManifest {
    let collection = ["collection_rate_hz", "mode"]
        .iter()
        .filter_map(|k| ep.meta.get(*k).map(|v| (k.to_string(), v.clone())))
        .collect();
    EpisodeManifest {
        id: ep.id.clone(),
        task: ep.task.clone(),
        schema_version: SCHEMA_VERSION,
        streams: ep
            .streams
            .iter()
            .map(|(id, s)| StreamEntry {
                id: id.clone(),
                payload_type: s.kind,
                record_count: s.samples.len() as u64,
                file: format!("{id}.cyr"),
            })
            .collect(),
        frame_count: ep.frames.len() as u64,
        session_epoch: ep.meta.get("session_epoch").cloned().unwrap_or_default(),
        collection,
        robot: ep.config.clone(),
        meta: ep.meta.clone(),
    }
}

/// Writes `ep` into `dir`, which must be absent or empty. On failure every
/// file written so far is removed.
pub fn write_episode(ep: &Episode, dir: &Path) -> Result<EpisodeManifest, StoreError> {
    let violations = ep.validate();
    if !violations.is_empty() {
        return Err(StoreError::Invalid(violations));
    }
    for id in ep.streams.keys() {
        check_stream_id(id)?;
    }
    if let Some(f) = ep.frames.iter().find(|f| f.tick_index > u32::MAX as u64) {
        return Err(StoreError::Corrupt { file: dir.join(FRAMES_FILE), reason: format!("tick_index {} exceeds u32", f.tick_index) });
    }
    let created_dir = !dir.exists();
    if created_dir {
        fs::create_dir_all(dir).map_err(io_err(dir))?;
    } else if fs::read_dir(dir).map_err(io_err(dir))?.next().is_some() {
        return Err(StoreError::NotEmpty(dir.to_path_buf()));
    }

    let manifest = manifest_for(ep);
    let mut written = Vec::new();
    let result = (|| {
        for entry in &manifest.streams {
            let path = dir.join(&entry.file);
            written.push(path.clone());
            write_file(&path, &encode_stream(&ep.streams[&entry.id].samples))?;
        }
        let order: Vec<&str> = manifest.streams.iter().map(|s| s.id.as_str()).collect();
        let path = dir.join(FRAMES_FILE);
        written.push(path.clone());
        write_file(&path, &encode_frames(&ep.frames, &order))?;
        let path = dir.join(MANIFEST_FILE);
        written.push(path.clone());
        let json = serde_json::to_vec_pretty(&manifest).map_err(|source| StoreError::Json { file: path.clone(), source })?;
        write_file(&path, &json)
    })();
    if let Err(e) = result {
        for p in written {
            let _ = fs::remove_file(p);
        }
        if created_dir {
            let _ = fs::remove_dir(dir);
        }
        return Err(e);
    }
    Ok(manifest)
}

fn write_file(path: &Path, bytes: &[u8]) -> Result<(), StoreError> {
    let mut w = BufWriter::new(File::create(path).map_err(io_err(path))?);
    w.write_all(bytes).map_err(io_err(path))?;
    w.into_inner().map_err(|e| StoreError::Io { path: path.to_path_buf(), source: e.into_error() })?.sync_all().map_err(io_err(path))
}

pub fn read_episode(dir: &Path) -> Result<Episode, StoreError> {
    let manifest = EpisodeManifest::load(dir)?;
    let mut streams = BTreeMap::new();
    for entry in &manifest.streams {
        check_stream_id(&entry.id)?;
        let path = dir.join(&entry.file);
        let samples = read_stream_file(&path, &entry.id, entry.payload_type)?;
        if samples.len() as u64 != entry.record_count {
            return Err(StoreError::CountMismatch { file: path, declared: entry.record_count, found: samples.len() as u64 });
        }
        streams.insert(entry.id.clone(), Stream { kind: entry.payload_type, samples });
    }

    let path = dir.join(FRAMES_FILE);
    let bytes = fs::read(&path).map_err(io_err(&path))?;
    let raw = decode_frames(&path, &bytes)?;
    if u16::from_le_bytes([bytes[6], bytes[7]]) as usize != manifest.streams.len() {
        return Err(StoreError::Corrupt { file: path, reason: format!("stream_count disagrees with manifest ({} streams)", manifest.streams.len()) });
    }
    if raw.len() as u64 != manifest.frame_count {
        return Err(StoreError::CountMismatch { file: path, declared: manifest.frame_count, found: raw.len() as u64 });
    }
    let mut frames = Vec::with_capacity(raw.len());
    for (i, (tick, ts, idx)) in raw.into_iter().enumerate() {
        let mut slots = BTreeMap::new();
        let mut staleness = BTreeMap::new();
        for (entry, slot) in manifest.streams.iter().zip(idx) {
            let slot = match slot {
                Some(r) => {
                    let sample = streams[&entry.id].samples.get(r as usize).ok_or_else(|| StoreError::Corrupt {
                        file: path.clone(),
                        reason: format!("frame {i}: '{}' record {r} out of range", entry.id),
                    })?;
                    staleness.insert(entry.id.clone(), ts.saturating_since(sample.capture_ts));
                    Some(r as usize)
                }
                None => None,
            };
            slots.insert(entry.id.clone(), slot);
        }
        frames.push(Frame { tick_index: tick as u64, tick_ts: ts, slots, staleness });
    }

    Ok(Episode {
        id: manifest.id,
        task: manifest.task,
        config: manifest.robot,
        frames,
        streams,
        meta: manifest.meta,
    })
}

/// Episode directories (those holding a manifest) directly under `root`,
/// sorted by name.
pub fn list_episodes(root: &Path) -> Result<Vec<PathBuf>, StoreError> {
    if !root.exists() {
        return Ok(Vec::new());
    }
    let mut out: Vec<PathBuf> = fs::read_dir(root)
        .map_err(io_err(root))?
        .filter_map(|e| e.ok().map(|e| e.path()))
        .filter(|p| p.join(MANIFEST_FILE).is_file())
        .collect();
    out.sort();
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn episode() -> Episode {
        let config = RobotConfig::single_arm();
        let mut arm = Stream::new(PayloadKind::Joints);
        let mut cam = Stream::new(PayloadKind::Image);
        for k in 0..10u64 {
            arm.samples.push(Arc::new(Sample::new("arm", Timestamp(k * 100), Payload::Joints(JointVector::new(vec![k as f64; 7]).unwrap()))));
            if k % 2 == 0 {
                let img = ImagePayload::new(2, 2, 1, vec![k as u8; 4]).unwrap();
                cam.samples.push(Arc::new(Sample::new("cam", Timestamp(k * 100), Payload::Image(img))));
            }
        }
        let frames = (0..10u64)
            .map(|k| Frame {
                tick_index: k,
                tick_ts: Timestamp(k * 100 + 5),
                slots: [("arm".to_string(), Some(k as usize)), ("cam".to_string(), Some(k as usize / 2))].into(),
                staleness: [("arm".to_string(), 5), ("cam".to_string(), 5 + (k % 2) * 100)].into(),
            })
            .collect();
        Episode {
            id: "ep".into(),
            task: "pick".into(),
            config,
            frames,
            streams: [("arm".to_string(), arm), ("cam".to_string(), cam)].into(),
            meta: [("session_epoch".to_string(), "2026-01-01T00:00:00Z".to_string())].into(),
        }
    }

    #[test]
    fn two_streams_make_four_files_and_round_trip() {
        let dir = tempfile::tempdir().unwrap();
        let out = dir.path().join("ep");
        let m = write_episode(&episode(), &out).unwrap();
        assert_eq!(fs::read_dir(&out).unwrap().count(), 4);
        assert_eq!(m, EpisodeManifest::load(&out).unwrap());
        assert_eq!(read_episode(&out).unwrap(), episode());
    }

    #[test]
    fn refuses_non_empty_dir_and_empty_episode() {
        let dir = tempfile::tempdir().unwrap();
        fs::write(dir.path().join("x"), b"x").unwrap();
        assert!(matches!(write_episode(&episode(), dir.path()), Err(StoreError::NotEmpty(_))));
        let mut ep = episode();
        ep.frames.clear();
        assert!(matches!(write_episode(&ep, &dir.path().join("e")), Err(StoreError::Invalid(_))));
        assert!(!dir.path().join("e").exists());
    }

    #[test]
    fn unsafe_stream_ids_rejected() {
        for id in ["frames", "../x", "", "a/b", ".hidden"] {
            assert!(check_stream_id(id).is_err(), "{id}");
        }
        assert!(check_stream_id("cam_global").is_ok());
    }

    #[test]
    fn bad_magic_names_file_and_found_value() {
        let dir = tempfile::tempdir().unwrap();
        let out = dir.path().join("ep");
        write_episode(&episode(), &out).unwrap();
        let path = out.join("arm.cyr");
        let mut bytes = fs::read(&path).unwrap();
        bytes[0..4].copy_from_slice(b"XXXX");
        fs::write(&path, bytes).unwrap();
        match read_episode(&out) {
            Err(StoreError::Magic { file, found, .. }) => {
                assert_eq!(file, path);
                assert_eq!(found, "XXXX");
            }
            other => panic!("{other:?}"),
        }
    }

    #[test]
    fn truncation_reports_record_offset() {
        let dir = tempfile::tempdir().unwrap();
        let out = dir.path().join("ep");
        write_episode(&episode(), &out).unwrap();
        let path = out.join("arm.cyr");
        let bytes = fs::read(&path).unwrap();
        // records are 12 + 56 bytes; cut inside the payload of record 3
        let rec = 12 + 7 * 8;
        fs::write(&path, &bytes[..8 + 3 * rec + 20]).unwrap();
        match read_episode(&out) {
            Err(StoreError::Truncated { offset, .. }) => assert_eq!(offset, (8 + 3 * rec) as u64),
            other => panic!("{other:?}"),
        }
    }

    #[test]
    fn version_mismatch_is_typed() {
        let dir = tempfile::tempdir().unwrap();
        let out = dir.path().join("ep");
        write_episode(&episode(), &out).unwrap();
        let path = out.join(FRAMES_FILE);
        let mut bytes = fs::read(&path).unwrap();
        bytes[4] = 7;
        fs::write(&path, bytes).unwrap();
        assert!(matches!(read_episode(&out), Err(StoreError::Version { found: 7, .. })));
    }
}
