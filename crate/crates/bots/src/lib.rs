//! Scripted participants that play the experiment through the public HTTP and WebSocket API.
//!
//! Bots in a team take turns: each acts only once the frames it has received show that
//! every active teammate ahead of it in member order has finished the current step. With
//! the same seed and cohort, each team's event stream then comes out the same.

pub mod bot;
pub mod corpus;
pub mod harness;
pub mod persona;
pub mod policy;

pub use harness::{run_cohort, BotReport, HarnessError, RunSummary};
pub use persona::{CohortSpec, Group, Persona};
