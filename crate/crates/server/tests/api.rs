use std::time::Duration;

use futures_util::{SinkExt, StreamExt};
use serde_json::{json, Value};
use teamspace_core::config::ExperimentConfig;
use teamspace_core::engine::condition_sequence;
use teamspace_core::event::EventBody;
use teamspace_core::model::Condition;
use teamspace_core::persistence::read_log;
use teamspace_core::protocol::{Envelope, ServerFrame};
use teamspace_server::{Server, ServerOptions};
use tokio::net::TcpListener;
use tokio_tungstenite::tungstenite::Message;

type Ws = tokio_tungstenite::WebSocketStream<tokio_tungstenite::MaybeTlsStream<tokio::net::TcpStream>>;

fn config(first: Condition) -> ExperimentConfig {
    let seed = (0..1000).find(|&s| condition_sequence(s, 1) == [first]).unwrap();
    let mut c = ExperimentConfig { team_size: 3, min_team_size: 2, ..Default::default() };
    c.condition_assignment.seed = seed;
    c
}

async fn start(dir: &std::path::Path, cfg: ExperimentConfig) -> Server {
    let listener = TcpListener::bind("127.0.0.1:0").await.unwrap();
    Server::start(listener, cfg, ServerOptions::new(dir, "test")).await.unwrap()
}

async fn post(http: &reqwest::Client, url: String, body: Value) -> (u16, Value) {
    let r = http.post(url).json(&body).send().await.unwrap();
    let status = r.status().as_u16();
    (status, r.json().await.unwrap_or(Value::Null))
}

async fn session(http: &reqwest::Client, base: &str, name: &str) -> String {
    let (s, v) = post(http, format!("{base}/api/session"), json!({})).await;
    assert_eq!(s, 200);
    let id = v["session_id"].as_str().unwrap().to_string();
    let (s, _) = post(http, format!("{base}/api/session/{id}/pseudonym"), json!({ "pseudonym": name })).await;
    assert_eq!(s, 200);
    id
}

async fn connect(base: &str, id: &str) -> Ws {
    let url = format!("{}/ws?session={id}", base.replace("http://", "ws://"));
    let (mut ws, _) = tokio_tungstenite::connect_async(url).await.unwrap();
    let first = next_frame(&mut ws).await;
    assert_eq!(first.frame.type_name(), "state_snapshot");
    ws
}

async fn next_frame(ws: &mut Ws) -> Envelope {
    loop {
        let msg =
            tokio::time::timeout(Duration::from_secs(5), ws.next()).await.expect("frame in time").unwrap().unwrap();
        if let Message::Text(t) = msg {
            return serde_json::from_str(&t).unwrap();
        }
    }
}

async fn until(ws: &mut Ws, pred: impl Fn(&ServerFrame) -> bool) -> Envelope {
    loop {
        let env = next_frame(ws).await;
        if pred(&env.frame) {
            return env;
        }
    }
}

async fn send(ws: &mut Ws, frame: Value) {
    ws.send(Message::Text(frame.to_string().into())).await.unwrap();
}

/// Three joined members of one team, each with a live socket.
async fn team_of_three(http: &reqwest::Client, base: &str) -> Vec<(String, Ws)> {
    let mut out = Vec::new();
    for (i, name) in ["ann", "bob", "cat"].into_iter().enumerate() {
        let id = session(http, base, name).await;
        let ws = connect(base, &id).await;
        let ranking: Vec<u32> = (0..5).map(|p| ((p + i) % 5) as u32 + 1).collect();
        let (s, v) = post(http, format!("{base}/api/session/{id}/lobby-survey"), json!({ "ranking": ranking })).await;
        assert_eq!(s, 200, "{v}");
        out.push((id, ws));
    }
    out
}

#[tokio::test]
async fn session_endpoints_map_errors_to_statuses() {
    let dir = tempfile::tempdir().unwrap();
    let server = start(dir.path(), config(Condition::Control)).await;
    let base = server.url();
    let http = reqwest::Client::new();

    let id = session(&http, &base, "ann").await;
    let other = session(&http, &base, "bob").await;
    let (s, v) = post(&http, format!("{base}/api/session/{other}/pseudonym"), json!({ "pseudonym": "ANN" })).await;
    assert_eq!((s, v["code"].as_str()), (409, Some("CONFLICT")));
    let (s, v) = post(&http, format!("{base}/api/session/nope/pseudonym"), json!({ "pseudonym": "x" })).await;
    assert_eq!((s, v["code"].as_str()), (404, Some("NOT_FOUND")));
    let (s, v) =
        post(&http, format!("{base}/api/session/{id}/lobby-survey"), json!({ "ranking": [1, 1, 2, 3, 4] })).await;
    assert_eq!((s, v["code"].as_str()), (422, Some("VALIDATION")));
    let (s, v) =
        post(&http, format!("{base}/api/session/{id}/lobby-survey"), json!({ "ranking": [2, 1, 3, 4, 5] })).await;
    assert_eq!(s, 200);
    assert_eq!(v["lobby_position"], 1);
    assert_eq!(v["snapshot"]["status"], "queued");

    let snap: Value = http.get(format!("{base}/api/session/{id}/state")).send().await.unwrap().json().await.unwrap();
    assert_eq!(snap["pseudonym"], "ann");
    assert_eq!(snap["proposals"].as_array().unwrap().len(), 5);

    let status: Value = http.get(format!("{base}/api/status")).send().await.unwrap().json().await.unwrap();
    assert_eq!(status["run_id"], "test");
    assert_eq!(status["participants"], 2);
    assert_eq!(status["lobby"], 1);
    server.shutdown().await.unwrap();
}

#[tokio::test]
async fn state_long_poll_returns_on_change_or_timeout() {
    let dir = tempfile::tempdir().unwrap();
    let server = start(dir.path(), config(Condition::Control)).await;
    let base = server.url();
    let http = reqwest::Client::new();
    let id = session(&http, &base, "ann").await;
    let snap: Value = http.get(format!("{base}/api/session/{id}/state")).send().await.unwrap().json().await.unwrap();
    let v = snap["version"].as_u64().unwrap();

    let started = std::time::Instant::now();
    let idle: Value = http
        .get(format!("{base}/api/session/{id}/state?since={v}&timeout=0.3"))
        .send()
        .await
        .unwrap()
        .json()
        .await
        .unwrap();
    assert!(started.elapsed() >= Duration::from_millis(250));
    assert_eq!(idle["version"].as_u64(), Some(v));

    let poll = {
        let http = http.clone();
        let url = format!("{base}/api/session/{id}/state?since={v}&timeout=10");
        tokio::spawn(async move { http.get(url).send().await.unwrap().json::<Value>().await.unwrap() })
    };
    tokio::time::sleep(Duration::from_millis(100)).await;
    let started = std::time::Instant::now();
    let (s, _) =
        post(&http, format!("{base}/api/session/{id}/lobby-survey"), json!({ "ranking": [1, 2, 3, 4, 5] })).await;
    assert_eq!(s, 200);
    let changed = poll.await.unwrap();
    assert!(started.elapsed() < Duration::from_secs(5));
    assert!(changed["version"].as_u64().unwrap() > v);
    assert_eq!(changed["status"], "queued");
    server.shutdown().await.unwrap();
}

#[tokio::test]
async fn websocket_frames_follow_the_log() {
    let dir = tempfile::tempdir().unwrap();
    let server = start(dir.path(), config(Condition::Intervention)).await;
    let base = server.url();
    let http = reqwest::Client::new();
    let mut team = team_of_three(&http, &base).await;

    // Team formation pushes a snapshot with the team, then the discussion opens.
    let snap = until(&mut team[0].1, |f| matches!(f, ServerFrame::StateSnapshot(s) if s.team.is_some())).await;
    let ServerFrame::StateSnapshot(snap) = snap.frame else { unreachable!() };
    assert_eq!(snap.team.unwrap().members, vec!["ann", "bob", "cat"]);

    send(&mut team[1].1, json!({"type": "post_message", "payload": {"body": "hello you"}})).await;
    for (_, ws) in team.iter_mut() {
        let env = until(ws, |f| matches!(f, ServerFrame::Message { .. })).await;
        let ServerFrame::Message { message_id, sender, body, .. } = &env.frame else { unreachable!() };
        assert_eq!(env.seq, Some(*message_id));
        assert_eq!((sender.as_str(), body.as_str()), ("bob", "hello you"));
        // Written before it was sent.
        let log = read_log(&server.log_path).unwrap();
        assert!(log
            .events
            .iter()
            .any(|e| matches!(&e.body, EventBody::MessagePosted { message_id: m, .. } if m == message_id)));
    }

    send(&mut team[0].1, json!({"type": "nonsense", "payload": {}})).await;
    let err = until(&mut team[0].1, |f| matches!(f, ServerFrame::Error { .. })).await;
    assert!(matches!(err.frame, ServerFrame::Error { ref code, .. } if code == "VALIDATION"));

    for (_, ws) in team.iter_mut() {
        send(ws, json!({"type": "done_signal", "payload": {}})).await;
    }
    until(&mut team[2].1, |f| matches!(f, ServerFrame::LockState { locked: true, .. })).await;
    send(&mut team[2].1, json!({"type": "post_message", "payload": {"body": "still there?"}})).await;
    let err = until(&mut team[2].1, |f| matches!(f, ServerFrame::Error { .. })).await;
    assert!(matches!(err.frame, ServerFrame::Error { ref code, .. } if code == "CHAT_LOCKED"));

    let status: Value = http.get(format!("{base}/api/status")).send().await.unwrap().json().await.unwrap();
    assert_eq!(status["teams"][0]["phase"], "interlude");
    assert_eq!(status["teams"][0]["condition"], "intervention");
    let log = read_log(&server.log_path).unwrap();
    assert!(!log
        .events
        .iter()
        .any(|e| matches!(&e.body, EventBody::MessagePosted { body, .. } if body == "still there?")));
    server.shutdown().await.unwrap();
}

#[tokio::test]
async fn dropping_a_socket_updates_presence_and_restart_resumes() {
    let dir = tempfile::tempdir().unwrap();
    let server = start(dir.path(), config(Condition::Control)).await;
    let base = server.url();
    let http = reqwest::Client::new();
    let mut team = team_of_three(&http, &base).await;
    until(&mut team[0].1, |f| matches!(f, ServerFrame::PhaseChange { .. })).await;

    let (_, gone) = team.pop().unwrap();
    drop(gone);
    let presence = until(&mut team[0].1, |f| matches!(f, ServerFrame::Presence { .. })).await;
    assert!(matches!(presence.frame, ServerFrame::Presence { ref active } if active == &["ann", "bob"]));

    let before: Value = http.get(format!("{base}/api/status")).send().await.unwrap().json().await.unwrap();
    drop(team);
    server.shutdown().await.unwrap();

    let server = start(dir.path(), config(Condition::Control)).await;
    let after: Value = reqwest::get(format!("{}/api/status", server.url())).await.unwrap().json().await.unwrap();
    assert_eq!(after["teams"][0]["phase"], before["teams"][0]["phase"]);
    assert!(after["last_seq"].as_u64() >= before["last_seq"].as_u64());
    server.shutdown().await.unwrap();
}
