//! Runs a cohort of bots against a live server.

use std::collections::BTreeMap;
use std::sync::Arc;
use std::time::Duration;

use futures_util::{SinkExt, StreamExt};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use serde_json::json;
use teamspace_core::model::Phase;
use teamspace_core::protocol::{Envelope, OwnFeedback, RunStatus, Snapshot};
use thiserror::Error;
use tokio::net::TcpStream;
use tokio::time::{timeout_at, Instant};
use tokio_tungstenite::tungstenite::Message;
use tokio_tungstenite::{MaybeTlsStream, WebSocketStream};

use crate::bot::{Action, Bot, Outcome};
use crate::persona::{Behaviour, CohortSpec, Roster};
use crate::policy::{PolicyError, PolicyRegistry};

type Socket = WebSocketStream<MaybeTlsStream<TcpStream>>;

#[derive(Debug, Error)]
pub enum HarnessError {
    #[error(transparent)]
    Policy(#[from] PolicyError),
    #[error("http: {0}")]
    Http(#[from] reqwest::Error),
    #[error("{what} returned {status}: {body}")]
    Rejected { what: String, status: u16, body: String },
    #[error("websocket: {0}")]
    WebSocket(#[from] tokio_tungstenite::tungstenite::Error),
    #[error("{0} closed before sending a snapshot")]
    NoSnapshot(String),
    #[error("bad server url {0:?}")]
    Url(String),
    #[error("cohort is empty")]
    EmptyCohort,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct BotReport {
    pub name: String,
    pub session_id: String,
    pub team_id: Option<u32>,
    pub outcome: Outcome,
    pub self_report: Option<i64>,
    pub feedback: Option<OwnFeedback>,
    pub lock_rejections: usize,
    pub violations: Vec<String>,
    /// Every frame received, verbatim.
    pub frames: Vec<String>,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct RunSummary {
    pub teams_formed: usize,
    pub completions: usize,
    pub terminations: usize,
    pub log_path: String,
    pub last_seq: u64,
    pub bots: Vec<BotReport>,
}

impl RunSummary {
    pub fn violations(&self) -> Vec<&str> {
        self.bots.iter().flat_map(|b| b.violations.iter().map(String::as_str)).collect()
    }

    /// Counts without the per-bot traffic, for printing.
    pub fn brief(&self) -> serde_json::Value {
        json!({
            "teams_formed": self.teams_formed,
            "completions": self.completions,
            "terminations": self.terminations,
            "log_path": self.log_path,
            "last_seq": self.last_seq,
            "bots": self.bots.len(),
            "violations": self.violations(),
        })
    }
}

/// Per-bot generator: the cohort seed picks the key, the join index picks the stream.
pub fn bot_rng(seed: u64, index: usize) -> ChaCha8Rng {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(index as u64);
    rng
}

async fn json_or_reject<T: serde::de::DeserializeOwned>(
    what: &str,
    resp: reqwest::Response,
) -> Result<T, HarnessError> {
    let status = resp.status();
    if !status.is_success() {
        let body = resp.text().await.unwrap_or_default();
        return Err(HarnessError::Rejected { what: what.into(), status: status.as_u16(), body });
    }
    Ok(resp.json().await?)
}

/// Joins bots one at a time, so lobby order and team membership follow the cohort file,
/// then lets them play until every bot finishes or the cohort timeout passes.
pub async fn run_cohort(server: &str, spec: &CohortSpec, seed: u64) -> Result<RunSummary, HarnessError> {
    let base = server.trim_end_matches('/').to_string();
    let ws_base = base
        .strip_prefix("http://")
        .map(|rest| format!("ws://{rest}"))
        .ok_or_else(|| HarnessError::Url(server.to_string()))?;
    let bots = spec.expand();
    if bots.is_empty() {
        return Err(HarnessError::EmptyCohort);
    }
    let registry = PolicyRegistry::standard();
    let roster: Roster = Arc::new(bots.iter().cloned().collect::<BTreeMap<_, _>>());
    let deadline = Instant::now() + Duration::from_secs_f64(spec.timeout_seconds);
    let http = reqwest::Client::new();
    let mut tasks = Vec::new();
    let mut reports = Vec::new();

    for (index, (name, persona)) in bots.into_iter().enumerate() {
        let behaviour = Behaviour::resolve(&persona, &registry)?;
        let mut bot = Bot::new(name.clone(), behaviour, roster.clone(), bot_rng(seed, index));

        #[derive(Deserialize)]
        struct Created {
            session_id: String,
        }
        let created: Created =
            json_or_reject("create session", http.post(format!("{base}/api/session")).send().await?).await?;
        let session = created.session_id;
        let snap: Snapshot = json_or_reject(
            "pseudonym",
            http.post(format!("{base}/api/session/{session}/pseudonym"))
                .json(&json!({ "pseudonym": name }))
                .send()
                .await?,
        )
        .await?;
        bot.observe_snapshot(&snap);

        let (mut ws, _) = tokio_tungstenite::connect_async(format!("{ws_base}/ws?session={session}")).await?;
        // The first frame is the connect snapshot; after it, team frames cannot be missed.
        loop {
            match ws.next().await {
                Some(Ok(Message::Text(t))) => {
                    let is_snapshot =
                        serde_json::from_str::<Envelope>(&t).is_ok_and(|e| e.frame.type_name() == "state_snapshot");
                    bot.on_frame(&t);
                    if is_snapshot {
                        break;
                    }
                }
                Some(Ok(_)) => {}
                Some(Err(e)) => return Err(e.into()),
                None => return Err(HarnessError::NoSnapshot(name)),
            }
        }

        let ranking = bot.lobby_ranking();
        let joined: serde_json::Value = json_or_reject(
            "lobby survey",
            http.post(format!("{base}/api/session/{session}/lobby-survey"))
                .json(&json!({ "demographics": {}, "ranking": ranking }))
                .send()
                .await?,
        )
        .await?;
        let ws_url = format!("{ws_base}/ws?session={session}");
        tasks.push(tokio::spawn(drive(bot, session, ws_url, ws, deadline)));
        if spec.serial_teams && !joined["snapshot"]["team"].is_null() {
            for t in tasks.drain(..) {
                reports.push(t.await.expect("bot task panicked"));
            }
        }
    }

    for t in tasks {
        reports.push(t.await.expect("bot task panicked"));
    }
    let status: RunStatus = json_or_reject("status", http.get(format!("{base}/api/status")).send().await?).await?;
    Ok(RunSummary {
        teams_formed: status.teams.len(),
        completions: status.teams.iter().filter(|t| t.phase == Phase::Complete).count(),
        terminations: status.teams.iter().filter(|t| t.phase == Phase::Terminated).count(),
        log_path: status.log_path,
        last_seq: status.last_seq,
        bots: reports,
    })
}

async fn drive(mut bot: Bot, session_id: String, ws_url: String, mut ws: Socket, deadline: Instant) -> BotReport {
    while !bot.finished() {
        let next = match timeout_at(deadline, ws.next()).await {
            Err(_) => {
                bot.outcome = Some(Outcome::TimedOut);
                bot.violations.push(format!("{} timed out", bot.name));
                break;
            }
            Ok(next) => next,
        };
        let text = match next {
            Some(Ok(Message::Text(t))) => t,
            Some(Ok(Message::Close(_))) | None | Some(Err(_)) => {
                bot.outcome = Some(Outcome::ConnectionLost);
                bot.violations.push(format!("{} lost its connection", bot.name));
                break;
            }
            Some(Ok(_)) => continue,
        };
        for action in bot.on_frame(&text) {
            match action {
                Action::Send(frame) => {
                    let text = serde_json::to_string(&frame).expect("frames serialize");
                    if ws.send(Message::Text(text.into())).await.is_err() {
                        bot.outcome = Some(Outcome::ConnectionLost);
                        bot.violations.push(format!("{} could not send", bot.name));
                        break;
                    }
                }
                Action::Disconnect => break,
                Action::Reconnect => {
                    let _ = ws.close(None).await;
                    wait_until_departed(&ws_url, &session_id, &bot.name).await;
                    match tokio_tungstenite::connect_async(ws_url.as_str()).await {
                        Ok((fresh, _)) => ws = fresh,
                        Err(e) => {
                            bot.outcome = Some(Outcome::ConnectionLost);
                            bot.violations.push(format!("{} could not reconnect: {e}", bot.name));
                        }
                    }
                    // Anything queued after the reconnect request belongs to the old turn.
                    break;
                }
            }
        }
    }
    if bot.outcome != Some(Outcome::Disconnected) {
        let _ = ws.close(None).await;
    }
    drop(ws);
    BotReport {
        team_id: bot.team_id(),
        outcome: bot.outcome.unwrap_or(Outcome::ConnectionLost),
        self_report: bot.self_report,
        feedback: bot.feedback.clone(),
        lock_rejections: bot.lock_rejections,
        violations: std::mem::take(&mut bot.violations),
        frames: std::mem::take(&mut bot.frames),
        name: bot.name,
        session_id,
    }
}

/// Polls the session state until the server has seen the old connection go.
async fn wait_until_departed(ws_url: &str, session_id: &str, name: &str) {
    let Some((base, _)) =
        ws_url.replacen("ws://", "http://", 1).split_once("/ws?").map(|(b, q)| (b.to_string(), q.to_string()))
    else {
        return;
    };
    let http = reqwest::Client::new();
    for _ in 0..100 {
        let snap: Option<Snapshot> = match http.get(format!("{base}/api/session/{session_id}/state")).send().await {
            Ok(r) => r.json().await.ok(),
            Err(_) => None,
        };
        if snap.and_then(|s| s.team).is_none_or(|t| !t.active.iter().any(|m| m == name)) {
            return;
        }
        tokio::time::sleep(Duration::from_millis(20)).await;
    }
}
