//! Drive the control daemon over its WebSocket bridge: switch to teleop,
//! jog a joint, and watch the snapshots converge.
//!
//! cargo run --example daemon_session

use std::time::Duration;

use cyr::daemon::{daemon_serve, DaemonConfig};
use cyr::sim::RigConfig;
use futures_util::{SinkExt, StreamExt};
use serde_json::{json, Value};
use tokio_tungstenite::tungstenite::Message;

#[tokio::main(flavor = "current_thread")]
async fn main() -> Result<(), Box<dyn std::error::Error>> {
    let episodes = std::env::temp_dir().join("cyr-daemon-episodes");
    let daemon = daemon_serve(DaemonConfig::new(RigConfig::single_arm(), "127.0.0.1:0".parse()?, &episodes))?;
    let (mut ws, _) = tokio_tungstenite::connect_async(format!("ws://{}", daemon.local_addr())).await?;

    for cmd in [
        json!({"cmd":"record","action":"start","id":1}),
        json!({"cmd":"set_mode","mode":"teleop","id":2}),
        json!({"cmd":"jog","joint":0,"delta_rad":0.05,"id":3}),
    ] {
        ws.send(Message::text(cmd.to_string())).await?;
    }
    let mut states = 0;
    while states < 4 {
        let Some(msg) = tokio::time::timeout(Duration::from_secs(2), ws.next()).await? else { break };
        let v: Value = serde_json::from_str(msg?.into_text()?.as_str())?;
        match v["type"].as_str() {
            Some("state") => {
                states += 1;
                println!("state mode={} target[0]={:.4} joints[0]={:.4}", v["session"]["mode"], v["target"][0], v["joints"][0]);
            }
            _ => println!("reply {v}"),
        }
    }
    daemon.shutdown();
    Ok(())
}
