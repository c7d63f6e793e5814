//! Experiment engine, sociometric measures, event log and analysis for
//! small-team deliberation studies.

pub mod analysis;
pub mod config;
pub mod engine;
pub mod event;
pub mod interlude;
pub mod model;
pub mod persistence;
pub mod protocol;
pub mod sociometrics;
pub mod state;

pub use config::ExperimentConfig;
pub use engine::{Batch, Engine, EngineError, Outbound};
pub use event::{Event, EventBody};
pub use state::RunState;
