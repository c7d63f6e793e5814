use crate::engine::EngineError;
use crate::event::EventBody;
use crate::model::{MessagePhase, Phase};

use super::{InterludeCx, InterludeStrategy};

/// Control condition: a timed pause announced with the configured prompt.
/// The transcript stays readable and chat stays open.
#[derive(Debug, Clone, Copy, Default)]
pub struct ReflectivePause;

impl InterludeStrategy for ReflectivePause {
    fn name(&self) -> &'static str {
        "reflective-pause"
    }

    fn begin(&self, cx: &mut InterludeCx<'_>) -> Result<(), EngineError> {
        let deadline = cx.deadline_in(cx.config().pause_seconds);
        cx.emit(None, EventBody::PhaseStarted { phase: Phase::Interlude, stage: None, deadline: Some(deadline) })?;
        let prompt = cx.config().control_prompt.clone();
        cx.announce(&prompt)
    }

    fn chat_tag(&self) -> Option<MessagePhase> {
        Some(MessagePhase::InterludeControl)
    }

    fn tick(&self, cx: &mut InterludeCx<'_>) -> Result<(), EngineError> {
        match cx.team().deadline {
            Some(deadline) if deadline <= cx.now() => cx.finish(),
            _ => Ok(()),
        }
    }
}
