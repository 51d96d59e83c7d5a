//! Fixtures shared by the integration tests.
#![allow(dead_code)]

use std::collections::BTreeMap;
use std::path::Path;
use std::sync::Arc;

use cyr::types::{ImagePayload, PayloadKind, Stream, ACTION_STREAM};
use cyr::{Episode, Frame, JointVector, Payload, RobotConfig, Sample, Timestamp};
use rand::Rng;

/// Payload sizes drawn so both ends (0 and 65536 bytes) occur regularly.
pub fn payload_len(rng: &mut impl Rng) -> usize {
    match rng.random_range(0..10) {
        0 => 0,
        1 => 65_536,
        2..=5 => rng.random_range(0..256),
        _ => rng.random_range(0..=65_536),
    }
}

fn stream_of(id: &str, kind: PayloadKind, payloads: Vec<(u64, Payload)>) -> Stream {
    let mut s = Stream::new(kind);
    s.samples = payloads.into_iter().map(|(t, p)| Arc::new(Sample::new(id, Timestamp(t), p))).collect();
    s
}

fn timestamps(rng: &mut impl Rng, n: usize) -> Vec<u64> {
    let mut t = rng.random_range(0..1_000_000u64);
    (0..n)
        .map(|_| {
            t += rng.random_range(0..20_000_000u64);
            t
        })
        .collect()
}

/// A valid random episode with one stream of every payload kind plus
/// actions. Slots follow latest-sample association, so staleness is never
/// negative.
pub fn random_episode(rng: &mut impl Rng, id: &str) -> Episode {
    let config = if rng.random_bool(0.5) { RobotConfig::single_arm() } else { RobotConfig::dual_arm() };
    let dim = config.action_dim();
    let mut streams = BTreeMap::new();

    let n = rng.random_range(1..12);
    let joints = timestamps(rng, n)
        .into_iter()
        .map(|t| (t, Payload::Joints(JointVector::new((0..dim).map(|_| rng.random_range(-1.0..1.0)).collect()).unwrap())))
        .collect();
    streams.insert("arm".to_string(), stream_of("arm", PayloadKind::Joints, joints));

    let n = rng.random_range(0..6);
    let images = timestamps(rng, n)
        .into_iter()
        .map(|t| {
            // images cannot be empty; the byte stream covers zero-length payloads
            let len = payload_len(rng).max(1);
            let c: u8 = if len % 3 == 0 { 3 } else { 1 };
            let px = len / c as usize;
            let h = if px % 4 == 0 { 4 } else { 1 };
            let mut pixels = vec![0u8; len];
            rng.fill_bytes(&mut pixels);
            (t, Payload::Image(ImagePayload::new((px / h) as u32, h as u32, c, pixels).unwrap()))
        })
        .collect();
    streams.insert("cam_0".to_string(), stream_of("cam_0", PayloadKind::Image, images));

    let n = rng.random_range(0..6);
    let blobs = timestamps(rng, n)
        .into_iter()
        .map(|t| {
            let mut b = vec![0u8; payload_len(rng)];
            rng.fill_bytes(&mut b);
            (t, Payload::Bytes(b))
        })
        .collect();
    streams.insert("aux.raw".to_string(), stream_of("aux.raw", PayloadKind::Bytes, blobs));

    let n = rng.random_range(0..8);
    let scalars = timestamps(rng, n).into_iter().map(|t| (t, Payload::Scalar(rng.random_range(-1e6..1e6)))).collect();
    streams.insert("force".to_string(), stream_of("force", PayloadKind::Scalar, scalars));

    let n = rng.random_range(0..10);
    let actions = timestamps(rng, n)
        .into_iter()
        .map(|t| (t, Payload::Joints(JointVector::new((0..dim).map(|j| if config.is_gripper_dim(j) { 0.5 } else { 0.1 }).collect()).unwrap())))
        .collect();
    streams.insert(ACTION_STREAM.to_string(), stream_of(ACTION_STREAM, PayloadKind::Joints, actions));

    let n_ticks = rng.random_range(1..15);
    let frames = assemble(&streams, &timestamps(rng, n_ticks));
    let meta = [("collection_rate_hz".to_string(), "30".to_string()), ("mode".to_string(), "parallel".to_string())].into();
    Episode { id: id.into(), task: "random".into(), config, frames, streams, meta }
}

/// Frames at `ticks`, each slot holding the last record with
/// `capture_ts <= tick` found by a linear scan.
pub fn assemble(streams: &BTreeMap<String, Stream>, ticks: &[u64]) -> Vec<Frame> {
    ticks
        .iter()
        .enumerate()
        .map(|(k, &t)| {
            let mut slots = BTreeMap::new();
            let mut staleness = BTreeMap::new();
            for (id, s) in streams {
                let mut best = None;
                for (i, sample) in s.samples.iter().enumerate() {
                    if sample.capture_ts.0 <= t {
                        best = Some(i);
                    }
                }
                if let Some(i) = best {
                    staleness.insert(id.clone(), t - s.samples[i].capture_ts.0);
                }
                slots.insert(id.clone(), best);
            }
            Frame { tick_index: k as u64, tick_ts: Timestamp(t), slots, staleness }
        })
        .collect()
}

/// Counts records in a stream file by walking the layout directly:
/// 8-byte header, then `u64 ts | u32 len | len bytes` per record.
pub fn scan_record_count(path: &Path) -> u64 {
    let bytes = std::fs::read(path).unwrap();
    assert_eq!(&bytes[0..4], b"CYRS");
    let mut at = 8usize;
    let mut n = 0;
    while at < bytes.len() {
        let len = u32::from_le_bytes(bytes[at + 8..at + 12].try_into().unwrap()) as usize;
        at += 12 + len;
        n += 1;
    }
    assert_eq!(at, bytes.len(), "{} ends inside a record", path.display());
    n
}

/// Every file in `dir`, sorted by name, with contents.
pub fn dir_bytes(dir: &Path) -> Vec<(String, Vec<u8>)> {
    let mut out: Vec<(String, Vec<u8>)> = std::fs::read_dir(dir)
        .unwrap()
        .map(|e| {
            let e = e.unwrap();
            (e.file_name().to_string_lossy().into_owned(), std::fs::read(e.path()).unwrap())
        })
        .collect();
    out.sort();
    out
}
