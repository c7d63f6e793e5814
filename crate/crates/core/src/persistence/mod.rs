//! JSON Lines event log, replay and tidy CSV export.

mod export;

use std::fs::{File, OpenOptions};
use std::io::{self, BufWriter, Write};
use std::path::{Path, PathBuf};

use thiserror::Error;

use crate::event::{Event, EventBody, MalformedEvent};
use crate::state::{RunState, StateError};

pub use export::{export_table, export_tidy, ExportError, Table, UnknownTable};

#[derive(Debug, Error)]
pub enum LogError {
    #[error("i/o error on {path}: {source}")]
    Io { path: PathBuf, source: io::Error },
    #[error(transparent)]
    Malformed(#[from] MalformedEvent),
    #[error("line {line}: unknown event kind {kind:?}")]
    UnknownKind { line: usize, kind: String },
    #[error("line {line}: {message}")]
    Parse { line: usize, message: String },
    #[error("event offset {offset}: expected event_seq {expected}, found {found}")]
    Gap { offset: usize, expected: u64, found: u64 },
    #[error("event offset {offset} (seq {seq}): {source}")]
    Apply { offset: usize, seq: u64, source: StateError },
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum FsyncPolicy {
    /// fsync after every appended batch.
    #[default]
    PerBatch,
    /// Flush to the OS but leave syncing to it.
    Never,
}

/// Where the engine's events go before any frame is released.
pub trait EventSink: Send {
    /// Durably appends a batch. Events are checked before anything is written.
    fn append(&mut self, events: &[Event]) -> Result<(), LogError>;
}

pub struct JsonlLog {
    path: PathBuf,
    out: BufWriter<File>,
    fsync: FsyncPolicy,
}

impl JsonlLog {
    /// Opens `path` for appending, creating it and its parent directory if needed.
    pub fn open(path: impl AsRef<Path>, fsync: FsyncPolicy) -> Result<Self, LogError> {
        let path = path.as_ref().to_path_buf();
        let io_err = |source| LogError::Io { path: path.clone(), source };
        if let Some(dir) = path.parent().filter(|d| !d.as_os_str().is_empty()) {
            std::fs::create_dir_all(dir).map_err(io_err)?;
        }
        let file = OpenOptions::new().create(true).append(true).open(&path).map_err(io_err)?;
        Ok(Self { out: BufWriter::new(file), path, fsync })
    }

    pub fn path(&self) -> &Path {
        &self.path
    }
}

impl EventSink for JsonlLog {
    fn append(&mut self, events: &[Event]) -> Result<(), LogError> {
        let lines = encode(events)?;
        let io_err = |source| LogError::Io { path: self.path.clone(), source };
        self.out.write_all(lines.as_bytes()).map_err(io_err)?;
        self.out.flush().map_err(io_err)?;
        if self.fsync == FsyncPolicy::PerBatch {
            self.out.get_ref().sync_data().map_err(io_err)?;
        }
        Ok(())
    }
}

/// In-memory sink for tests.
#[derive(Debug, Default, Clone)]
pub struct MemoryLog {
    pub events: Vec<Event>,
}

impl EventSink for MemoryLog {
    fn append(&mut self, events: &[Event]) -> Result<(), LogError> {
        encode(events)?;
        self.events.extend_from_slice(events);
        Ok(())
    }
}

fn encode(events: &[Event]) -> Result<String, LogError> {
    let mut text = String::new();
    for event in events {
        event.validate()?;
        text.push_str(&serde_json::to_string(event).expect("events serialize"));
        text.push('\n');
    }
    Ok(text)
}

/// Parsed log contents.
#[derive(Debug, Clone, Default)]
pub struct LogContents {
    pub events: Vec<Event>,
    /// A final line without a newline that did not parse was dropped.
    pub torn_tail: bool,
}

/// Parses JSON Lines. A torn final line (crash mid-write) is dropped;
/// any other bad line is an error naming its line number.
pub fn parse_log(text: &str) -> Result<LogContents, LogError> {
    let mut contents = LogContents::default();
    let complete = text.ends_with('\n');
    let lines: Vec<&str> = text.lines().collect();
    for (i, line) in lines.iter().enumerate() {
        let number = i + 1;
        if line.trim().is_empty() {
            continue;
        }
        let last = i + 1 == lines.len();
        match parse_line(line, number) {
            Ok(event) => contents.events.push(event),
            Err(LogError::Parse { .. }) if last && !complete => contents.torn_tail = true,
            Err(e) => return Err(e),
        }
    }
    Ok(contents)
}

fn parse_line(line: &str, number: usize) -> Result<Event, LogError> {
    let value: serde_json::Value =
        serde_json::from_str(line).map_err(|e| LogError::Parse { line: number, message: e.to_string() })?;
    match value.get("kind").and_then(|k| k.as_str()) {
        Some(kind) if !EventBody::KINDS.contains(&kind) => {
            return Err(LogError::UnknownKind { line: number, kind: kind.to_string() })
        }
        None => return Err(LogError::Parse { line: number, message: "missing kind".into() }),
        _ => {}
    }
    let event: Event =
        serde_json::from_value(value).map_err(|e| LogError::Parse { line: number, message: e.to_string() })?;
    event.validate()?;
    Ok(event)
}

pub fn read_log(path: impl AsRef<Path>) -> Result<LogContents, LogError> {
    let path = path.as_ref();
    let text = std::fs::read_to_string(path).map_err(|source| LogError::Io { path: path.to_path_buf(), source })?;
    parse_log(&text)
}

/// Folds events into run state, checking that sequence numbers run 1, 2, 3, ...
pub fn replay<'a>(events: impl IntoIterator<Item = &'a Event>) -> Result<RunState, LogError> {
    let mut state = RunState::new();
    for (offset, event) in events.into_iter().enumerate() {
        let expected = offset as u64 + 1;
        if event.event_seq != expected {
            return Err(LogError::Gap { offset, expected, found: event.event_seq });
        }
        state.apply(event).map_err(|source| LogError::Apply { offset, seq: event.event_seq, source })?;
    }
    Ok(state)
}
