//! HTTP and WebSocket front end.
//!
//! One actor task owns the [`Engine`] and the event log. Handlers send it
//! closures; after each command the actor appends the new events to the
//! log and only then hands the resulting frames to the connections.

mod actor;
mod http;

use std::net::SocketAddr;
use std::path::{Path, PathBuf};
use std::time::Duration;

use teamspace_core::config::ExperimentConfig;
use teamspace_core::engine::{Engine, EngineError};
use teamspace_core::interlude::InterludeRegistry;
use teamspace_core::persistence::{read_log, replay, FsyncPolicy, JsonlLog, LogError};
use thiserror::Error;
use tokio::net::TcpListener;
use tokio::sync::{oneshot, watch};
use tokio::task::JoinHandle;

pub use actor::Handle;

#[derive(Debug, Error)]
pub enum ServerError {
    #[error(transparent)]
    Engine(#[from] EngineError),
    #[error(transparent)]
    Log(#[from] LogError),
    #[error("i/o: {0}")]
    Io(#[from] std::io::Error),
    #[error("server stopped: {0}")]
    Stopped(String),
}

#[derive(Debug, Clone)]
pub struct ServerOptions {
    pub data_dir: PathBuf,
    pub run_id: String,
    pub fsync: FsyncPolicy,
    /// How often phase deadlines are checked.
    pub tick_interval: Duration,
}

impl ServerOptions {
    pub fn new(data_dir: impl Into<PathBuf>, run_id: impl Into<String>) -> Self {
        Self {
            data_dir: data_dir.into(),
            run_id: run_id.into(),
            fsync: FsyncPolicy::PerBatch,
            tick_interval: Duration::from_millis(100),
        }
    }

    pub fn run_dir(&self) -> PathBuf {
        self.data_dir.join(&self.run_id)
    }

    pub fn log_path(&self) -> PathBuf {
        self.run_dir().join("events.jsonl")
    }
}

/// Builds the engine, continuing from an existing log in the run directory.
fn open_engine(config: ExperimentConfig, log_path: &Path) -> Result<Engine, ServerError> {
    let registry = InterludeRegistry::standard();
    if log_path.exists() {
        let contents = read_log(log_path)?;
        if contents.torn_tail {
            tracing::warn!(path = %log_path.display(), "dropping torn final line");
        }
        let state = replay(&contents.events)?;
        return Ok(Engine::resume(config, &registry, state)?);
    }
    Ok(Engine::new(config, &registry)?)
}

pub fn now_ms() -> i64 {
    std::time::SystemTime::now().duration_since(std::time::UNIX_EPOCH).map(|d| d.as_millis() as i64).unwrap_or_default()
}

/// A running server.
pub struct Server {
    pub addr: SocketAddr,
    pub log_path: PathBuf,
    pub handle: Handle,
    shutdown: Option<oneshot::Sender<()>>,
    task: JoinHandle<Result<(), ServerError>>,
}

impl Server {
    /// Binds `listener` and starts serving.
    pub async fn start(
        listener: TcpListener,
        config: ExperimentConfig,
        options: ServerOptions,
    ) -> Result<Self, ServerError> {
        let log_path = options.log_path();
        let mut engine = open_engine(config, &log_path)?;
        // A torn line must not be followed by new events on the same line.
        if log_path.exists() {
            let text = std::fs::read_to_string(&log_path)?;
            if !text.is_empty() && !text.ends_with('\n') {
                let keep = text.rfind('\n').map_or(0, |i| i + 1);
                std::fs::write(&log_path, &text[..keep])?;
            }
        }
        let log = JsonlLog::open(&log_path, options.fsync)?;
        engine.take_batch();
        let (version_tx, version_rx) = watch::channel(engine.state().last_seq);
        let (handle, actor_task) = actor::spawn(engine, Box::new(log), version_tx, version_rx, &options, &log_path);
        let addr = listener.local_addr()?;
        let app = http::router(handle.clone());
        let (shutdown_tx, shutdown_rx) = oneshot::channel::<()>();
        let halted = handle.halted();
        let task = tokio::spawn(async move {
            let serve = axum::serve(listener, app).with_graceful_shutdown(async move {
                tokio::select! {
                    _ = shutdown_rx => {}
                    _ = halted => {}
                }
            });
            serve.await?;
            match actor_task.await {
                Ok(result) => result,
                Err(e) => Err(ServerError::Stopped(e.to_string())),
            }
        });
        Ok(Self { addr, log_path, handle, shutdown: Some(shutdown_tx), task })
    }

    pub async fn bind(addr: &str, config: ExperimentConfig, options: ServerOptions) -> Result<Self, ServerError> {
        Self::start(TcpListener::bind(addr).await?, config, options).await
    }

    pub fn url(&self) -> String {
        format!("http://{}", self.addr)
    }

    /// Runs until the actor halts (storage failure) or `shutdown` is called elsewhere.
    pub async fn wait(self) -> Result<(), ServerError> {
        let _keep = self.shutdown;
        match self.task.await {
            Ok(r) => r,
            Err(e) => Err(ServerError::Stopped(e.to_string())),
        }
    }

    pub async fn shutdown(mut self) -> Result<(), ServerError> {
        if let Some(tx) = self.shutdown.take() {
            let _ = tx.send(());
        }
        self.handle.stop().await;
        match self.task.await {
            Ok(r) => r,
            Err(e) => Err(ServerError::Stopped(e.to_string())),
        }
    }
}
