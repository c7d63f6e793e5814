use std::collections::HashMap;
use std::path::Path;
use std::sync::atomic::{AtomicU64, Ordering};
use std::sync::Arc;

use teamspace_core::engine::{Engine, EngineError};
use teamspace_core::model::SessionId;
use teamspace_core::persistence::EventSink;
use teamspace_core::protocol::{ClientFrame, Envelope, RunStatus, ServerFrame};
use tokio::sync::{mpsc, oneshot, watch};
use tokio::task::JoinHandle;

use crate::{now_ms, ServerError, ServerOptions};

type Job = Box<dyn FnOnce(&mut Core) + Send>;

enum Command {
    Run(Job),
    Stop,
}

pub(crate) type ConnTx = mpsc::UnboundedSender<String>;

/// State owned by the actor task.
pub(crate) struct Core {
    pub engine: Engine,
    conns: HashMap<SessionId, Vec<(u64, ConnTx)>>,
    /// Frames for one connection, sent after the batch.
    direct: Vec<(u64, ServerFrame)>,
    fatal: Option<EngineError>,
}

impl Core {
    fn now(&self) -> i64 {
        now_ms()
    }

    fn check<T>(&mut self, r: Result<T, EngineError>) -> Result<T, EngineError> {
        if let Err(e) = &r {
            if e.is_internal() {
                self.fatal = Some(e.clone());
            }
        }
        r
    }

    fn conn(&self, id: u64) -> Option<&ConnTx> {
        self.conns.values().flatten().find(|(c, _)| *c == id).map(|(_, tx)| tx)
    }
}

#[derive(Clone)]
pub struct Handle {
    tx: mpsc::Sender<Command>,
    version: watch::Receiver<u64>,
    halted: watch::Receiver<bool>,
    next_conn: Arc<AtomicU64>,
    run_id: Arc<str>,
    log_path: Arc<str>,
}

impl Handle {
    async fn run<R: Send + 'static>(&self, f: impl FnOnce(&mut Core) -> R + Send + 'static) -> Result<R, ServerError> {
        let (tx, rx) = oneshot::channel();
        let job: Job = Box::new(move |core| {
            let _ = tx.send(f(core));
        });
        self.tx.send(Command::Run(job)).await.map_err(|_| ServerError::Stopped("engine halted".into()))?;
        rx.await.map_err(|_| ServerError::Stopped("engine halted".into()))
    }

    /// Runs `f` against the engine with the current time.
    pub async fn call<R: Send + 'static>(
        &self,
        f: impl FnOnce(&mut Engine, i64) -> Result<R, EngineError> + Send + 'static,
    ) -> Result<Result<R, EngineError>, ServerError> {
        self.run(move |core| {
            let now = core.now();
            let r = f(&mut core.engine, now);
            core.check(r)
        })
        .await
    }

    pub async fn status(&self) -> Result<RunStatus, ServerError> {
        let (run_id, log_path) = (self.run_id.clone(), self.log_path.clone());
        self.run(move |core| core.engine.status(&run_id, &log_path)).await
    }

    /// Registers a live connection and sends it a snapshot.
    pub(crate) async fn attach(&self, session: SessionId, tx: ConnTx) -> Result<Result<u64, EngineError>, ServerError> {
        let id = self.next_conn.fetch_add(1, Ordering::Relaxed);
        self.run(move |core| {
            if core.engine.state().participant(&session).is_none() {
                return Err(EngineError::UnknownSession);
            }
            core.conns.entry(session.clone()).or_default().push((id, tx));
            let now = core.now();
            let r = core.engine.connect(&session, now);
            core.check(r).map(|_| id)
        })
        .await
    }

    pub(crate) async fn detach(&self, session: SessionId, conn: u64) {
        let _ = self
            .run(move |core| {
                let remaining = match core.conns.get_mut(&session) {
                    Some(list) => {
                        list.retain(|(c, _)| *c != conn);
                        list.len()
                    }
                    None => 0,
                };
                if remaining == 0 {
                    core.conns.remove(&session);
                    let now = core.now();
                    let r = core.engine.disconnect(&session, now);
                    let _ = core.check(r);
                }
            })
            .await;
    }

    pub(crate) async fn client_frame(
        &self,
        session: SessionId,
        conn: u64,
        frame: ClientFrame,
    ) -> Result<(), ServerError> {
        self.run(move |core| {
            let request = frame.type_name().to_string();
            let now = core.now();
            let r = core.engine.handle_client_frame(&session, frame, now);
            if let Err(e) = core.check(r) {
                core.direct.push((
                    conn,
                    ServerFrame::Error { code: e.code().into(), message: e.to_string(), request: Some(request) },
                ));
            }
        })
        .await
    }

    pub fn version(&self) -> watch::Receiver<u64> {
        self.version.clone()
    }

    /// Resolves once the actor has stopped.
    pub fn halted(&self) -> impl std::future::Future<Output = ()> + Send + 'static {
        let mut rx = self.halted.clone();
        async move {
            let _ = rx.wait_for(|h| *h).await;
        }
    }

    pub fn is_halted(&self) -> bool {
        *self.halted.borrow()
    }

    pub async fn stop(&self) {
        let _ = self.tx.send(Command::Stop).await;
    }
}

pub(crate) fn spawn(
    engine: Engine,
    sink: Box<dyn EventSink>,
    version_tx: watch::Sender<u64>,
    version_rx: watch::Receiver<u64>,
    options: &ServerOptions,
    log_path: &Path,
) -> (Handle, JoinHandle<Result<(), ServerError>>) {
    let (tx, rx) = mpsc::channel(1024);
    let (halted_tx, halted_rx) = watch::channel(false);
    let handle = Handle {
        tx,
        version: version_rx,
        halted: halted_rx,
        next_conn: Arc::new(AtomicU64::new(1)),
        run_id: options.run_id.as_str().into(),
        log_path: log_path.display().to_string().into(),
    };
    let core = Core { engine, conns: HashMap::new(), direct: Vec::new(), fatal: None };
    let task = tokio::spawn(run_actor(core, sink, rx, version_tx, halted_tx, options.tick_interval));
    (handle, task)
}

async fn run_actor(
    mut core: Core,
    mut sink: Box<dyn EventSink>,
    mut rx: mpsc::Receiver<Command>,
    version_tx: watch::Sender<u64>,
    halted_tx: watch::Sender<bool>,
    tick_every: std::time::Duration,
) -> Result<(), ServerError> {
    let mut ticker = tokio::time::interval(tick_every);
    ticker.set_missed_tick_behavior(tokio::time::MissedTickBehavior::Delay);
    let result = loop {
        tokio::select! {
            cmd = rx.recv() => match cmd {
                Some(Command::Run(job)) => job(&mut core),
                Some(Command::Stop) | None => break Ok(()),
            },
            _ = ticker.tick() => {
                let now = core.now();
                let r = core.engine.tick(now);
                let _ = core.check(r);
            }
        }
        if let Err(e) = flush(&mut core, sink.as_mut(), &version_tx) {
            break Err(e);
        }
    };
    if let Err(e) = &result {
        tracing::error!(error = %e, "run halted");
    }
    core.conns.clear();
    let _ = halted_tx.send(true);
    result
}

/// Write-ahead: persist, then deliver.
fn flush(core: &mut Core, sink: &mut dyn EventSink, version_tx: &watch::Sender<u64>) -> Result<(), ServerError> {
    if let Some(e) = core.fatal.take() {
        return Err(ServerError::Engine(e));
    }
    let batch = core.engine.take_batch();
    if !batch.events.is_empty() {
        sink.append(&batch.events)?;
    }
    for out in batch.outbound {
        if let Some(conns) = core.conns.get(&out.to) {
            let text = Envelope::new(out.frame).to_json();
            for (_, tx) in conns {
                let _ = tx.send(text.clone());
            }
        }
    }
    for (conn, frame) in std::mem::take(&mut core.direct) {
        if let Some(tx) = core.conn(conn) {
            let _ = tx.send(Envelope::new(frame).to_json());
        }
    }
    version_tx.send_if_modified(|v| {
        let last = core.engine.state().last_seq;
        let changed = *v != last;
        *v = last;
        changed
    });
    Ok(())
}
