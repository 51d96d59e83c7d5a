use std::collections::HashSet;
use std::time::Duration;

use cyr::daemon::{apply, daemon_serve, ControlMode, DaemonConfig, SessionState, Transition};
use cyr::sim::RigConfig;
use futures_util::{SinkExt, StreamExt};
use serde_json::{json, Value};
use tokio::net::TcpStream;
use tokio_tungstenite::tungstenite::Message;
use tokio_tungstenite::{MaybeTlsStream, WebSocketStream};

type Ws = WebSocketStream<MaybeTlsStream<TcpStream>>;

/// Walks every command sequence of length `depth` from `s`.
fn walk(s: SessionState, depth: usize, alphabet: &[Transition], seen: &mut HashSet<SessionState>, paths: &mut u64) {
    seen.insert(s);
    if depth == 0 {
        *paths += 1;
        return;
    }
    for &t in alphabet {
        let next = apply(s, t).unwrap_or(s);
        assert!(next.is_consistent(), "{t:?} from {s:?} reached {next:?}");
        assert!(!(next.recording && next.mode == ControlMode::Idle));
        walk(next, depth - 1, alphabet, seen, paths);
    }
}

#[test]
fn no_sequence_of_six_commands_records_while_idle() {
    let alphabet = Transition::alphabet();
    let (mut seen, mut paths) = (HashSet::new(), 0u64);
    walk(SessionState::default(), 6, &alphabet, &mut seen, &mut paths);
    assert_eq!(paths, (alphabet.len() as u64).pow(6));
    // idle, 3 active modes x recording, teleop x clutch
    assert_eq!(seen.len(), 1 + 3 * 2 + 2);
}

#[test]
fn rejected_commands_leave_state_unchanged() {
    let idle = SessionState::default();
    for t in [Transition::RecordStart, Transition::RecordStop, Transition::Jog, Transition::Play, Transition::Clutch(true)] {
        assert!(apply(idle, t).is_err(), "{t:?}");
    }
}

fn config(dir: &std::path::Path) -> DaemonConfig {
    let mut cfg = DaemonConfig::new(RigConfig::single_arm(), "127.0.0.1:0".parse().unwrap(), dir.join("episodes"));
    cfg.bench_duration_s = 0.5;
    cfg
}

async fn next_json(ws: &mut Ws) -> Value {
    let msg = tokio::time::timeout(Duration::from_secs(5), ws.next()).await.expect("message within 5 s");
    let text = msg.unwrap().unwrap().into_text().unwrap();
    serde_json::from_str(text.as_str()).unwrap()
}

/// Next message that is not a state broadcast.
async fn next_reply(ws: &mut Ws) -> Value {
    loop {
        let v = next_json(ws).await;
        if v["type"] != "state" || v.get("id").is_some() {
            return v;
        }
    }
}

async fn send(ws: &mut Ws, v: Value) {
    ws.send(Message::text(v.to_string())).await.unwrap();
}

async fn next_state(ws: &mut Ws) -> Value {
    loop {
        let v = next_json(ws).await;
        if v["type"] == "state" {
            return v;
        }
    }
}

#[tokio::test(flavor = "multi_thread", worker_threads = 2)]
async fn snapshot_on_connect_and_structured_errors() {
    let dir = tempfile::tempdir().unwrap();
    let daemon = daemon_serve(config(dir.path())).unwrap();
    let (mut ws, _) = tokio_tungstenite::connect_async(format!("ws://{}", daemon.local_addr())).await.unwrap();
    let first = tokio::time::timeout(Duration::from_millis(500), next_json(&mut ws)).await.unwrap();
    assert_eq!(first["type"], "state");
    assert_eq!(first["session"]["mode"], "idle");
    assert_eq!(first["joints"].as_array().unwrap().len(), 7);

    send(&mut ws, json!({"cmd":"record","action":"start","id":"r1"})).await;
    let e = next_reply(&mut ws).await;
    assert_eq!(e, json!({"type":"error","code":"idle","message":e["message"],"id":"r1"}));

    send(&mut ws, json!({"cmd":"jog","joint":0,"delta_rad":0.1,"id":2})).await;
    assert_eq!(next_reply(&mut ws).await["code"], "wrong_mode");

    ws.send(Message::text("{not json")).await.unwrap();
    assert_eq!(next_reply(&mut ws).await["code"], "bad_request");
    send(&mut ws, json!({"cmd":"warp","id":9})).await;
    let e = next_reply(&mut ws).await;
    assert_eq!((e["code"].as_str(), e["id"].as_i64()), (Some("bad_request"), Some(9)));

    let s = next_state(&mut ws).await;
    assert_eq!((s["session"]["mode"].as_str(), s["session"]["recording"].as_bool()), (Some("idle"), Some(false)));
    daemon.shutdown();
}

#[tokio::test(flavor = "multi_thread", worker_threads = 2)]
async fn jog_moves_target_and_arm() {
    let dir = tempfile::tempdir().unwrap();
    let daemon = daemon_serve(config(dir.path())).unwrap();
    let (mut ws, _) = tokio_tungstenite::connect_async(format!("ws://{}", daemon.local_addr())).await.unwrap();
    let q0 = next_state(&mut ws).await["joints"][2].as_f64().unwrap();

    send(&mut ws, json!({"cmd":"set_mode","mode":"teleop","id":1})).await;
    assert_eq!(next_reply(&mut ws).await, json!({"type":"ack","cmd":"set_mode","id":1}));
    send(&mut ws, json!({"cmd":"jog","joint":2,"delta_rad":0.05,"id":2})).await;
    assert_eq!(next_reply(&mut ws).await["type"], "ack");

    // The filtered command approaches q0 + 0.05 geometrically and the arm
    // follows at up to 1 rad/s, so both settle well within a few snapshots.
    let goal = q0 + 0.05;
    let mut settled = false;
    for _ in 0..10 {
        let s = next_state(&mut ws).await;
        let (t, q) = (s["target"][2].as_f64().unwrap(), s["joints"][2].as_f64().unwrap());
        assert!(t >= q0 - 1e-12 && t <= goal + 1e-12, "target {t}");
        assert_eq!(s["target"][0].as_f64(), Some(0.0));
        if (t - goal).abs() < 1e-6 && (q - goal).abs() < 1e-6 {
            settled = true;
            break;
        }
    }
    assert!(settled);

    send(&mut ws, json!({"cmd":"clutch","engaged":false})).await;
    assert_eq!(next_reply(&mut ws).await, json!({"type":"ack","cmd":"clutch"}));
    send(&mut ws, json!({"cmd":"jog","joint":2,"delta_rad":0.5})).await;
    next_reply(&mut ws).await;
    let s = next_state(&mut ws).await;
    let s = if s["session"]["clutch"] == "released" { next_state(&mut ws).await } else { s };
    assert!((s["target"][2].as_f64().unwrap() - goal).abs() < 1e-6, "released clutch holds the follower");
    daemon.shutdown();
}

#[tokio::test(flavor = "multi_thread", worker_threads = 2)]
async fn recording_lands_on_disk_and_in_listing() {
    let dir = tempfile::tempdir().unwrap();
    let daemon = daemon_serve(config(dir.path())).unwrap();
    let (mut ws, _) = tokio_tungstenite::connect_async(format!("ws://{}", daemon.local_addr())).await.unwrap();
    next_state(&mut ws).await;

    send(&mut ws, json!({"cmd":"set_mode","mode":"teleop"})).await;
    next_reply(&mut ws).await;
    send(&mut ws, json!({"cmd":"record","action":"start","task":"stack"})).await;
    assert_eq!(next_reply(&mut ws).await["type"], "ack");
    send(&mut ws, json!({"cmd":"set_mode","mode":"idle"})).await;
    assert_eq!(next_reply(&mut ws).await["code"], "recording_active");
    tokio::time::sleep(Duration::from_millis(600)).await;
    send(&mut ws, json!({"cmd":"record","action":"stop","id":"s"})).await;
    let ack = next_reply(&mut ws).await;
    assert_eq!(ack["cmd"], "record");
    let id = ack["result"]["episode_id"].as_str().unwrap().to_string();
    assert!(ack["result"]["frames"].as_u64().unwrap() >= 10);

    let on_disk: Vec<String> = std::fs::read_dir(dir.path().join("episodes"))
        .unwrap()
        .map(|e| e.unwrap())
        .filter(|e| e.path().join("meta.json").is_file())
        .map(|e| e.file_name().to_string_lossy().into_owned())
        .collect();
    assert_eq!(on_disk, vec![id.clone()]);

    send(&mut ws, json!({"cmd":"list_episodes","id":5})).await;
    let list = next_reply(&mut ws).await;
    assert_eq!(list["type"], "episodes");
    assert_eq!(list["id"], 5);
    assert_eq!(list["items"][0]["id"], id.as_str());
    assert_eq!(list["items"][0]["task"], "stack");
    daemon.shutdown();
}

#[tokio::test(flavor = "multi_thread", worker_threads = 2)]
async fn bench_reports_metrics_and_blocks_mode_changes() {
    let dir = tempfile::tempdir().unwrap();
    let daemon = daemon_serve(config(dir.path())).unwrap();
    let (mut ws, _) = tokio_tungstenite::connect_async(format!("ws://{}", daemon.local_addr())).await.unwrap();
    next_state(&mut ws).await;
    send(&mut ws, json!({"cmd":"bench","mode":"parallel","id":"b"})).await;
    send(&mut ws, json!({"cmd":"set_mode","mode":"teleop","id":"m"})).await;
    let busy = next_reply(&mut ws).await;
    assert_eq!((busy["id"].as_str(), busy["code"].as_str()), (Some("m"), Some("busy")));
    let done = next_reply(&mut ws).await;
    assert_eq!(done["cmd"], "bench");
    let hz = done["result"]["effective_hz"].as_f64().unwrap();
    assert!(hz > 25.0 && hz < 31.0, "{hz}");
    let s = next_state(&mut ws).await;
    assert_eq!(s["metrics"]["source"], "bench");
    daemon.shutdown();
}
