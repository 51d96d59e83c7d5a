//! Encode and decode policy protocol frames.
//!
//! cargo run --example wire_codec

use cyr::policy::{decode_message, encode_message, ActionMessage, CameraImage, DecodeError, ObservationMessage, PolicyMessage};
use cyr::types::ImagePayload;
use cyr::{JointVector, Timestamp};

fn main() -> Result<(), Box<dyn std::error::Error>> {
    let obs = PolicyMessage::Observation(ObservationMessage {
        seq: 1,
        tick_ts: Timestamp(33_333_333),
        joints: JointVector::new(vec![0.1; 14])?,
        images: vec![CameraImage { id: "cam_global".into(), image: ImagePayload::new(4, 2, 3, (0..24).collect())? }],
        horizon: Some(8),
    });
    let bytes = encode_message(&obs);
    println!("observation: {} bytes, header {:02x?}", bytes.len(), &bytes[..5]);
    assert_eq!(decode_message(&bytes)?, obs);

    let act = PolicyMessage::Action(ActionMessage { seq: 1, horizon: 2, actions: vec![JointVector::new(vec![0.0; 14])?; 2], clamped: false });
    let bytes = encode_message(&act);
    println!("action body: {}", String::from_utf8_lossy(&bytes[5..]));

    let mut bad = bytes.clone();
    bad[4] = 9;
    match decode_message(&bad) {
        Err(DecodeError::UnknownType(t)) => println!("type {t} rejected"),
        other => println!("unexpected: {other:?}"),
    }
    println!("truncated: {}", decode_message(&bytes[..3]).unwrap_err());
    Ok(())
}
