use std::collections::BTreeMap;
use std::time::Duration;

use axum::extract::ws::{Message, WebSocket, WebSocketUpgrade};
use axum::extract::{Path, Query, State};
use axum::http::StatusCode;
use axum::response::{IntoResponse, Response};
use axum::routing::{get, post};
use axum::{Json, Router};
use futures_util::{SinkExt, StreamExt};
use serde::{Deserialize, Serialize};
use teamspace_core::engine::EngineError;
use teamspace_core::model::SessionId;
use teamspace_core::protocol::{ClientFrame, Envelope, ServerFrame, Snapshot};
use tokio::sync::mpsc;

use crate::actor::Handle;
use crate::ServerError;

pub(crate) fn router(handle: Handle) -> Router {
    Router::new()
        .route("/api/session", post(create_session))
        .route("/api/session/{id}/pseudonym", post(set_pseudonym))
        .route("/api/session/{id}/lobby-survey", post(lobby_survey))
        .route("/api/session/{id}/state", get(session_state))
        .route("/api/status", get(status))
        .route("/ws", get(websocket))
        .with_state(handle)
}

#[derive(Debug, Serialize, Deserialize)]
pub struct ErrorBody {
    pub code: String,
    pub message: String,
}

pub(crate) struct ApiError(StatusCode, ErrorBody);

impl From<EngineError> for ApiError {
    fn from(e: EngineError) -> Self {
        let status = match e.code() {
            "NOT_FOUND" => StatusCode::NOT_FOUND,
            "VALIDATION" => StatusCode::UNPROCESSABLE_ENTITY,
            "INTERNAL" | "CONFIG" => StatusCode::INTERNAL_SERVER_ERROR,
            _ => StatusCode::CONFLICT,
        };
        ApiError(status, ErrorBody { code: e.code().into(), message: e.to_string() })
    }
}

impl From<ServerError> for ApiError {
    fn from(e: ServerError) -> Self {
        ApiError(StatusCode::SERVICE_UNAVAILABLE, ErrorBody { code: "HALTED".into(), message: e.to_string() })
    }
}

impl IntoResponse for ApiError {
    fn into_response(self) -> Response {
        (self.0, Json(self.1)).into_response()
    }
}

type ApiResult<T> = Result<Json<T>, ApiError>;

#[derive(Debug, Serialize, Deserialize)]
pub struct SessionCreated {
    pub session_id: SessionId,
}

async fn create_session(State(h): State<Handle>) -> ApiResult<SessionCreated> {
    let session_id = h.call(|e, now| e.create_session(now)).await??;
    Ok(Json(SessionCreated { session_id }))
}

#[derive(Debug, Deserialize)]
struct PseudonymBody {
    pseudonym: String,
}

async fn set_pseudonym(
    State(h): State<Handle>,
    Path(id): Path<String>,
    Json(body): Json<PseudonymBody>,
) -> ApiResult<Snapshot> {
    let session = SessionId(id);
    let snap = h
        .call(move |e, now| {
            e.set_pseudonym(&session, &body.pseudonym, now)?;
            e.snapshot(&session, now)
        })
        .await??;
    Ok(Json(snap))
}

#[derive(Debug, Deserialize)]
struct LobbySurveyBody {
    #[serde(default)]
    demographics: BTreeMap<String, String>,
    ranking: Vec<u32>,
}

#[derive(Debug, Serialize, Deserialize)]
pub struct LobbySurveyAccepted {
    pub lobby_position: Option<usize>,
    pub snapshot: Snapshot,
}

async fn lobby_survey(
    State(h): State<Handle>,
    Path(id): Path<String>,
    Json(body): Json<LobbySurveyBody>,
) -> ApiResult<LobbySurveyAccepted> {
    let session = SessionId(id);
    let out = h
        .call(move |e, now| {
            let lobby_position = e.submit_lobby_survey(&session, body.demographics, body.ranking, now)?;
            Ok(LobbySurveyAccepted { lobby_position, snapshot: e.snapshot(&session, now)? })
        })
        .await??;
    Ok(Json(out))
}

#[derive(Debug, Deserialize)]
struct StateQuery {
    /// Return as soon as the snapshot version exceeds this.
    since: Option<u64>,
    /// Longest wait in seconds.
    timeout: Option<f64>,
}

async fn session_state(
    State(h): State<Handle>,
    Path(id): Path<String>,
    Query(q): Query<StateQuery>,
) -> ApiResult<Snapshot> {
    let session = SessionId(id);
    let wait = Duration::from_secs_f64(q.timeout.unwrap_or(25.0).clamp(0.0, 60.0));
    let deadline = tokio::time::Instant::now() + wait;
    let mut version = h.version();
    loop {
        let s = session.clone();
        let snap = h.call(move |e, now| e.snapshot(&s, now)).await??;
        match q.since {
            Some(since) if snap.version <= since => {}
            _ => return Ok(Json(snap)),
        }
        if tokio::time::timeout_at(deadline, version.changed()).await.is_err() {
            return Ok(Json(snap));
        }
    }
}

async fn status(State(h): State<Handle>) -> ApiResult<teamspace_core::protocol::RunStatus> {
    Ok(Json(h.status().await?))
}

#[derive(Debug, Deserialize)]
struct WsQuery {
    session: String,
}

async fn websocket(State(h): State<Handle>, Query(q): Query<WsQuery>, ws: WebSocketUpgrade) -> Response {
    let session = SessionId(q.session);
    let known = h.call({
        let s = session.clone();
        move |e, _| Ok(e.state().participant(&s).is_some())
    });
    match known.await {
        Ok(Ok(true)) => ws.on_upgrade(move |socket| serve_socket(h, session, socket)),
        Ok(_) => ApiError::from(EngineError::UnknownSession).into_response(),
        Err(e) => ApiError::from(e).into_response(),
    }
}

async fn serve_socket(h: Handle, session: SessionId, socket: WebSocket) {
    let (mut sink, mut stream) = socket.split();
    let (tx, mut rx) = mpsc::unbounded_channel::<String>();
    let conn = match h.attach(session.clone(), tx.clone()).await {
        Ok(Ok(id)) => id,
        _ => return,
    };
    let writer = tokio::spawn(async move {
        while let Some(text) = rx.recv().await {
            if sink.send(Message::Text(text.into())).await.is_err() {
                break;
            }
        }
        let _ = sink.close().await;
    });
    while let Some(Ok(msg)) = stream.next().await {
        let text = match msg {
            Message::Text(t) => t.to_string(),
            Message::Binary(b) => String::from_utf8_lossy(&b).into_owned(),
            Message::Close(_) => break,
            _ => continue,
        };
        match serde_json::from_str::<ClientFrame>(&text) {
            Ok(frame) => {
                if h.client_frame(session.clone(), conn, frame).await.is_err() {
                    break;
                }
            }
            Err(e) => {
                let frame =
                    ServerFrame::Error { code: "VALIDATION".into(), message: format!("bad frame: {e}"), request: None };
                let _ = tx.send(Envelope::new(frame).to_json());
            }
        }
    }
    drop(tx);
    h.detach(session, conn).await;
    let _ = writer.await;
}
