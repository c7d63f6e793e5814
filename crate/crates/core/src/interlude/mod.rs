//! What a team does between the two task phases.
//!
//! Each condition maps to an [`InterludeStrategy`] by name through the
//! [`InterludeRegistry`]. Strategies hold no state of their own: everything
//! they decide is emitted as events through the [`InterludeCx`] and folded
//! into the team state, so replay never needs the strategy objects.

mod exercise;
mod pause;

use std::collections::BTreeMap;
use std::sync::Arc;

pub use exercise::PerspectiveExercise;
pub use pause::ReflectivePause;

use crate::config::ExperimentConfig;
use crate::engine::{Engine, EngineError};
use crate::event::EventBody;
use crate::model::{ExerciseStage, MessagePhase, SessionId, TeamId};
use crate::protocol::{ExercisePayload, ServerFrame};
use crate::state::Team;

pub trait InterludeStrategy: Send + Sync {
    fn name(&self) -> &'static str;

    /// Called as the team leaves the discuss phase.
    fn begin(&self, cx: &mut InterludeCx<'_>) -> Result<(), EngineError>;

    /// Phase tag for chat posted during the interlude; `None` means chat is locked.
    fn chat_tag(&self) -> Option<MessagePhase>;

    /// Deadline handling. Call [`InterludeCx::finish`] to move the team on.
    fn tick(&self, cx: &mut InterludeCx<'_>) -> Result<(), EngineError>;

    fn submit(
        &self,
        _cx: &mut InterludeCx<'_>,
        _session: &SessionId,
        _stage: ExerciseStage,
        _payload: ExercisePayload,
    ) -> Result<(), EngineError> {
        Err(EngineError::NotAccepting("exercise answers"))
    }

    fn acknowledge(&self, _cx: &mut InterludeCx<'_>, _session: &SessionId) -> Result<(), EngineError> {
        Err(EngineError::NotAccepting("acknowledgements"))
    }

    /// A member dropped out; re-check whatever completion rule applies.
    fn member_left(&self, _cx: &mut InterludeCx<'_>, _session: &SessionId) -> Result<(), EngineError> {
        Ok(())
    }
}

/// Handle a strategy uses to read its team and emit events.
pub struct InterludeCx<'a> {
    pub(crate) engine: &'a mut Engine,
    pub(crate) team: TeamId,
    pub(crate) now: i64,
}

impl InterludeCx<'_> {
    pub fn team(&self) -> &Team {
        self.engine.state().team(self.team).expect("interlude runs on an existing team")
    }

    pub fn team_id(&self) -> TeamId {
        self.team
    }

    pub fn now(&self) -> i64 {
        self.now
    }

    pub fn config(&self) -> &ExperimentConfig {
        self.engine.config()
    }

    pub fn deadline_in(&self, seconds: f64) -> i64 {
        self.now + crate::config::seconds_to_ms(seconds)
    }

    pub fn emit(&mut self, session: Option<SessionId>, body: EventBody) -> Result<(), EngineError> {
        self.engine.emit(self.now, Some(self.team), session, body)
    }

    pub fn announce(&mut self, text: &str) -> Result<(), EngineError> {
        self.engine.system_announce(self.team, text, self.now).map(|_| ())
    }

    pub fn lock_chat(&mut self) -> Result<(), EngineError> {
        self.engine.lock_chat(self.team, self.now)
    }

    pub fn send(&mut self, to: &SessionId, frame: ServerFrame) {
        self.engine.push_frame(to, frame);
    }

    pub fn pseudonym(&self, session: &SessionId) -> String {
        self.engine.state().pseudonym(session).unwrap_or_default().to_string()
    }

    /// Ends the interlude and starts the decide phase.
    pub fn finish(&mut self) -> Result<(), EngineError> {
        self.engine.start_decide(self.team, self.now)
    }
}

/// Interlude strategies by name.
#[derive(Clone, Default)]
pub struct InterludeRegistry {
    strategies: BTreeMap<String, Arc<dyn InterludeStrategy>>,
}

impl InterludeRegistry {
    pub fn new() -> Self {
        Self::default()
    }

    /// The reflective pause and the perspective-taking exercise.
    pub fn standard() -> Self {
        let mut r = Self::new();
        r.register(ReflectivePause);
        r.register(PerspectiveExercise);
        r
    }

    pub fn register<S: InterludeStrategy + 'static>(&mut self, strategy: S) {
        self.strategies.insert(strategy.name().to_string(), Arc::new(strategy));
    }

    pub fn get(&self, name: &str) -> Option<Arc<dyn InterludeStrategy>> {
        self.strategies.get(name).cloned()
    }

    pub fn names(&self) -> impl Iterator<Item = &str> {
        self.strategies.keys().map(String::as_str)
    }
}

impl std::fmt::Debug for InterludeRegistry {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.debug_list().entries(self.strategies.keys()).finish()
    }
}
