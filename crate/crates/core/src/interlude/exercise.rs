use std::collections::{BTreeMap, BTreeSet};

use crate::engine::EngineError;
use crate::event::EventBody;
use crate::model::{ExerciseStage, MessagePhase, Phase, SessionId};
use crate::protocol::ExercisePayload;
use crate::sociometrics::{group_climate, perception_accuracy, EmotionScore, GuessSet};
use crate::state::{ExerciseState, Team};

use super::{InterludeCx, InterludeStrategy};

/// Intervention condition: chat locks while members privately report how
/// they feel, guess how each teammate feels, and then see the group climate
/// and their own guessing accuracy.
#[derive(Debug, Clone, Copy, Default)]
pub struct PerspectiveExercise;

fn exercise(team: &Team) -> Result<&ExerciseState, EngineError> {
    team.exercise.as_ref().ok_or(EngineError::NotAccepting("exercise answers"))
}

impl PerspectiveExercise {
    fn start_guessing(&self, cx: &mut InterludeCx<'_>) -> Result<(), EngineError> {
        let deadline = cx.deadline_in(cx.config().exercise_stage_seconds);
        cx.emit(
            None,
            EventBody::PhaseStarted {
                phase: Phase::Interlude,
                stage: Some(ExerciseStage::Guessing),
                deadline: Some(deadline),
            },
        )
    }

    fn compute_feedback(&self, cx: &mut InterludeCx<'_>) -> Result<(), EngineError> {
        let team = cx.team();
        let ex = exercise(team)?;
        let participants = team.active_members.clone();
        let present: BTreeSet<&SessionId> = participants.iter().collect();
        let actuals: BTreeMap<SessionId, EmotionScore> =
            ex.self_reports.iter().filter(|(k, _)| present.contains(k)).map(|(k, v)| (k.clone(), *v)).collect();
        let reports: Vec<EmotionScore> = actuals.values().copied().collect();
        let climate = group_climate(&reports).ok();
        let accuracies = ex
            .guess_sets
            .iter()
            .filter(|(k, _)| present.contains(k))
            .map(|(guesser, guesses)| {
                let set = GuessSet::new(guesser.clone(), guesses.clone());
                (guesser.clone(), perception_accuracy(&set, &actuals))
            })
            .collect();
        let deadline = cx.deadline_in(cx.config().feedback_seconds);
        cx.emit(None, EventBody::FeedbackComputed { climate, accuracies, participants, deadline })
    }

    /// Advances past any stage whose completion rule now holds.
    fn settle(&self, cx: &mut InterludeCx<'_>) -> Result<(), EngineError> {
        let team = cx.team();
        let ex = exercise(team)?;
        let everyone = |done: &dyn Fn(&SessionId) -> bool| team.active_members.iter().all(done);
        match ex.stage {
            ExerciseStage::SelfReport if everyone(&|m| ex.self_reports.contains_key(m)) => {
                self.start_guessing(cx)?;
                self.settle(cx)
            }
            ExerciseStage::Guessing if everyone(&|m| ex.guess_sets.contains_key(m)) => self.compute_feedback(cx),
            ExerciseStage::Feedback if team.all_active_done() => cx.finish(),
            _ => Ok(()),
        }
    }
}

impl InterludeStrategy for PerspectiveExercise {
    fn name(&self) -> &'static str {
        "perspective-exercise"
    }

    fn begin(&self, cx: &mut InterludeCx<'_>) -> Result<(), EngineError> {
        cx.lock_chat()?;
        let deadline = cx.deadline_in(cx.config().exercise_stage_seconds);
        cx.emit(
            None,
            EventBody::PhaseStarted {
                phase: Phase::Interlude,
                stage: Some(ExerciseStage::SelfReport),
                deadline: Some(deadline),
            },
        )
    }

    fn chat_tag(&self) -> Option<MessagePhase> {
        None
    }

    fn tick(&self, cx: &mut InterludeCx<'_>) -> Result<(), EngineError> {
        let ex = exercise(cx.team())?;
        let expired = ex.stage_deadline.is_some_and(|d| d <= cx.now());
        if !expired {
            return Ok(());
        }
        match ex.stage {
            ExerciseStage::SelfReport => {
                self.start_guessing(cx)?;
                self.settle(cx)
            }
            ExerciseStage::Guessing => self.compute_feedback(cx),
            ExerciseStage::Feedback => cx.finish(),
            ExerciseStage::Done => Ok(()),
        }
    }

    fn submit(
        &self,
        cx: &mut InterludeCx<'_>,
        session: &SessionId,
        stage: ExerciseStage,
        payload: ExercisePayload,
    ) -> Result<(), EngineError> {
        let team = cx.team();
        let ex = exercise(team)?;
        if stage != ex.stage {
            return Err(EngineError::WrongStage { expected: ex.stage, got: stage });
        }
        match (stage, payload) {
            (ExerciseStage::SelfReport, ExercisePayload::SelfReport { score }) => {
                if ex.self_reports.contains_key(session) {
                    return Err(EngineError::Duplicate("self report"));
                }
                let score = EmotionScore::new(score)?;
                cx.emit(Some(session.clone()), EventBody::SelfReportSubmitted { score })?;
            }
            (ExerciseStage::Guessing, ExercisePayload::Guesses { guesses }) => {
                if ex.guess_sets.contains_key(session) {
                    return Err(EngineError::Duplicate("guesses"));
                }
                let own_name = cx.pseudonym(session);
                if guesses.contains_key(&own_name) {
                    return Err(EngineError::Validation("guesses must not include yourself".into()));
                }
                let roster = ex.rosters.get(session).cloned().unwrap_or_default();
                let by_name: BTreeMap<String, SessionId> =
                    roster.iter().map(|m| (cx.pseudonym(m), m.clone())).collect();
                let missing: Vec<&String> = by_name.keys().filter(|n| !guesses.contains_key(*n)).collect();
                let extra: Vec<&String> = guesses.keys().filter(|n| !by_name.contains_key(*n)).collect();
                if !missing.is_empty() || !extra.is_empty() {
                    return Err(EngineError::Validation(format!(
                        "guesses must cover exactly your roster; missing {missing:?}, unexpected {extra:?}"
                    )));
                }
                let mut parsed = BTreeMap::new();
                for (name, value) in guesses {
                    parsed.insert(by_name[&name].clone(), EmotionScore::new(value)?);
                }
                cx.emit(Some(session.clone()), EventBody::GuessesSubmitted { guesses: parsed })?;
            }
            (stage, _) => {
                return Err(EngineError::Validation(format!("payload does not match stage {stage}")));
            }
        }
        self.settle(cx)
    }

    fn acknowledge(&self, cx: &mut InterludeCx<'_>, session: &SessionId) -> Result<(), EngineError> {
        let team = cx.team();
        let ex = exercise(team)?;
        if ex.stage != ExerciseStage::Feedback {
            return Err(EngineError::WrongStage { expected: ExerciseStage::Feedback, got: ex.stage });
        }
        if team.done.contains(session) {
            return Ok(());
        }
        cx.emit(
            Some(session.clone()),
            EventBody::DoneSignaled { phase: Phase::Interlude, stage: Some(ExerciseStage::Feedback) },
        )?;
        self.settle(cx)
    }

    fn member_left(&self, cx: &mut InterludeCx<'_>, _session: &SessionId) -> Result<(), EngineError> {
        self.settle(cx)
    }
}
