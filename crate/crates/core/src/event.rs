//! The append-only event record. Every state change in a run is one of these.

use std::collections::BTreeMap;

use chrono::{DateTime, Utc};
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::model::{
    Condition, ExerciseStage, ExitSurveyResponse, MessagePhase, Phase, SessionId, TeamId, MAX_MESSAGE_CHARS,
    MAX_PSEUDONYM_CHARS,
};
use crate::sociometrics::{AccuracyResult, AllocationVector, EmotionScore, RankVector};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Event {
    pub event_seq: u64,
    pub wall_time: DateTime<Utc>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub team_id: Option<TeamId>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub session_id: Option<SessionId>,
    #[serde(flatten)]
    pub body: EventBody,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum DisconnectReason {
    ConnectionLost,
    LobbyTimeout,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", content = "payload", rename_all = "snake_case")]
pub enum EventBody {
    ParticipantJoined {},
    PseudonymSet {
        pseudonym: String,
    },
    LobbySurveySubmitted {
        demographics: BTreeMap<String, String>,
        ranking: RankVector,
    },
    TeamFormed {
        condition: Condition,
        members: Vec<SessionId>,
    },
    PhaseStarted {
        phase: Phase,
        #[serde(default, skip_serializing_if = "Option::is_none")]
        stage: Option<ExerciseStage>,
        #[serde(default, skip_serializing_if = "Option::is_none")]
        deadline: Option<i64>,
    },
    MessagePosted {
        message_id: u64,
        sender: String,
        body: String,
        phase: MessagePhase,
    },
    SystemAnnounced {
        message_id: u64,
        text: String,
    },
    ChatLocked {},
    ChatUnlocked {},
    SelfReportSubmitted {
        score: EmotionScore,
    },
    GuessesSubmitted {
        guesses: BTreeMap<SessionId, EmotionScore>,
    },
    FeedbackComputed {
        climate: Option<f64>,
        accuracies: BTreeMap<SessionId, Option<AccuracyResult>>,
        /// Members active when feedback was computed; only their reports count as actuals.
        participants: Vec<SessionId>,
        deadline: i64,
    },
    TeamRankingSubmitted {
        ranking: RankVector,
        agreed: bool,
    },
    TeamAllocationSubmitted {
        allocation: AllocationVector,
    },
    ExitSurveySubmitted {
        response: ExitSurveyResponse,
    },
    DoneSignaled {
        phase: Phase,
        #[serde(default, skip_serializing_if = "Option::is_none")]
        stage: Option<ExerciseStage>,
    },
    ParticipantDisconnected {
        reason: DisconnectReason,
    },
    ParticipantReconnected {},
    TeamTerminated {
        reason: String,
        active_members: usize,
    },
    TeamCompleted {},
}

impl EventBody {
    pub const KINDS: [&'static str; 20] = [
        "participant_joined",
        "pseudonym_set",
        "lobby_survey_submitted",
        "team_formed",
        "phase_started",
        "message_posted",
        "system_announced",
        "chat_locked",
        "chat_unlocked",
        "self_report_submitted",
        "guesses_submitted",
        "feedback_computed",
        "team_ranking_submitted",
        "team_allocation_submitted",
        "exit_survey_submitted",
        "done_signaled",
        "participant_disconnected",
        "participant_reconnected",
        "team_terminated",
        "team_completed",
    ];

    pub fn kind(&self) -> &'static str {
        match self {
            EventBody::ParticipantJoined {} => "participant_joined",
            EventBody::PseudonymSet { .. } => "pseudonym_set",
            EventBody::LobbySurveySubmitted { .. } => "lobby_survey_submitted",
            EventBody::TeamFormed { .. } => "team_formed",
            EventBody::PhaseStarted { .. } => "phase_started",
            EventBody::MessagePosted { .. } => "message_posted",
            EventBody::SystemAnnounced { .. } => "system_announced",
            EventBody::ChatLocked {} => "chat_locked",
            EventBody::ChatUnlocked {} => "chat_unlocked",
            EventBody::SelfReportSubmitted { .. } => "self_report_submitted",
            EventBody::GuessesSubmitted { .. } => "guesses_submitted",
            EventBody::FeedbackComputed { .. } => "feedback_computed",
            EventBody::TeamRankingSubmitted { .. } => "team_ranking_submitted",
            EventBody::TeamAllocationSubmitted { .. } => "team_allocation_submitted",
            EventBody::ExitSurveySubmitted { .. } => "exit_survey_submitted",
            EventBody::DoneSignaled { .. } => "done_signaled",
            EventBody::ParticipantDisconnected { .. } => "participant_disconnected",
            EventBody::ParticipantReconnected {} => "participant_reconnected",
            EventBody::TeamTerminated { .. } => "team_terminated",
            EventBody::TeamCompleted {} => "team_completed",
        }
    }

    fn needs_team(&self) -> bool {
        !matches!(
            self,
            EventBody::ParticipantJoined {}
                | EventBody::PseudonymSet { .. }
                | EventBody::LobbySurveySubmitted { .. }
                | EventBody::ParticipantDisconnected { .. }
                | EventBody::ParticipantReconnected {}
        )
    }

    fn needs_session(&self) -> bool {
        matches!(
            self,
            EventBody::ParticipantJoined {}
                | EventBody::PseudonymSet { .. }
                | EventBody::LobbySurveySubmitted { .. }
                | EventBody::MessagePosted { .. }
                | EventBody::SelfReportSubmitted { .. }
                | EventBody::GuessesSubmitted { .. }
                | EventBody::TeamRankingSubmitted { .. }
                | EventBody::TeamAllocationSubmitted { .. }
                | EventBody::ExitSurveySubmitted { .. }
                | EventBody::DoneSignaled { .. }
                | EventBody::ParticipantDisconnected { .. }
                | EventBody::ParticipantReconnected {}
        )
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Error)]
#[error("malformed {kind} event: {reason}")]
pub struct MalformedEvent {
    pub kind: &'static str,
    pub reason: String,
}

impl Event {
    pub fn kind(&self) -> &'static str {
        self.body.kind()
    }

    /// Shape checks that do not need run state.
    pub fn validate(&self) -> Result<(), MalformedEvent> {
        let kind = self.kind();
        let fail = |reason: &str| Err(MalformedEvent { kind, reason: reason.to_string() });
        if self.event_seq == 0 {
            return fail("event_seq starts at 1");
        }
        if self.body.needs_team() && self.team_id.is_none() {
            return fail("missing team_id");
        }
        if self.body.needs_session() && self.session_id.is_none() {
            return fail("missing session_id");
        }
        match &self.body {
            EventBody::PseudonymSet { pseudonym } => {
                let n = pseudonym.chars().count();
                if n == 0 || n > MAX_PSEUDONYM_CHARS {
                    return fail("pseudonym length");
                }
            }
            EventBody::MessagePosted { body, sender, .. } => {
                if body.trim().is_empty() || body.chars().count() > MAX_MESSAGE_CHARS {
                    return fail("message body length");
                }
                if sender.is_empty() {
                    return fail("empty sender");
                }
            }
            EventBody::TeamFormed { members, .. } if members.is_empty() => {
                return fail("team without members");
            }
            EventBody::PhaseStarted { phase, stage, .. } => {
                if phase.is_finished() {
                    return fail("finished phases are entered through team_terminated/team_completed");
                }
                if stage.is_some() && *phase != Phase::Interlude {
                    return fail("exercise stage outside the interlude");
                }
            }
            EventBody::GuessesSubmitted { guesses } => {
                if guesses.keys().any(|k| Some(k) == self.session_id.as_ref()) {
                    return fail("self-guess");
                }
            }
            _ => {}
        }
        Ok(())
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn event(body: EventBody) -> Event {
        Event {
            event_seq: 1,
            wall_time: DateTime::from_timestamp_millis(1_700_000_000_123).unwrap(),
            team_id: Some(TeamId(1)),
            session_id: Some(SessionId("abc".into())),
            body,
        }
    }

    #[test]
    fn json_shape() {
        let e = event(EventBody::ChatLocked {});
        let text = serde_json::to_string(&e).unwrap();
        assert!(text.contains(r#""kind":"chat_locked""#), "{text}");
        assert!(text.contains(r#""wall_time":"2023-11-14T22:13:20.123Z""#), "{text}");
        let back: Event = serde_json::from_str(&text).unwrap();
        assert_eq!(back, e);
    }

    #[test]
    fn kinds_table_matches_variants() {
        let e = event(EventBody::PhaseStarted { phase: Phase::Discuss, stage: None, deadline: Some(5) });
        assert!(EventBody::KINDS.contains(&e.kind()));
        let v: serde_json::Value = serde_json::to_value(&e).unwrap();
        assert_eq!(v["kind"], "phase_started");
        assert_eq!(v["payload"]["deadline"], 5);
    }

    #[test]
    fn validation() {
        let mut e = event(EventBody::MessagePosted {
            message_id: 1,
            sender: "ann".into(),
            body: "   ".into(),
            phase: MessagePhase::Discuss,
        });
        assert!(e.validate().is_err());
        e.body = EventBody::ChatUnlocked {};
        assert!(e.validate().is_ok());
        e.team_id = None;
        assert!(e.validate().is_err());
        let e = event(EventBody::PhaseStarted {
            phase: Phase::Decide,
            stage: Some(ExerciseStage::Guessing),
            deadline: None,
        });
        assert!(e.validate().is_err());
    }
}
