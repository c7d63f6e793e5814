//! WebSocket wire format: JSON envelopes `{type, seq?, payload}`.

use std::collections::BTreeMap;

use serde::{Deserialize, Serialize};

use crate::config::{Proposal, SurveyItem};
use crate::model::{Condition, ExerciseStage, ExitSurveyResponse, MessagePhase, Phase};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "type", content = "payload", rename_all = "snake_case")]
pub enum ClientFrame {
    PostMessage {
        body: String,
    },
    DoneSignal {},
    ExerciseSubmit {
        stage: ExerciseStage,
        payload: ExercisePayload,
    },
    /// Acknowledges the feedback screen.
    Ack {},
    TeamRanking {
        ranking: Vec<u32>,
        agreed: bool,
    },
    TeamAllocation {
        amounts: Vec<u64>,
    },
    ExitSurvey {
        response: ExitSurveyResponse,
    },
}

impl ClientFrame {
    pub fn type_name(&self) -> &'static str {
        match self {
            ClientFrame::PostMessage { .. } => "post_message",
            ClientFrame::DoneSignal {} => "done_signal",
            ClientFrame::ExerciseSubmit { .. } => "exercise_submit",
            ClientFrame::Ack {} => "ack",
            ClientFrame::TeamRanking { .. } => "team_ranking",
            ClientFrame::TeamAllocation { .. } => "team_allocation",
            ClientFrame::ExitSurvey { .. } => "exit_survey",
        }
    }
}

/// Exercise answers. Guesses are keyed by teammate pseudonym.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(untagged)]
pub enum ExercisePayload {
    SelfReport { score: i64 },
    Guesses { guesses: BTreeMap<String, i64> },
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Envelope {
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub seq: Option<u64>,
    #[serde(flatten)]
    pub frame: ServerFrame,
}

impl Envelope {
    pub fn new(frame: ServerFrame) -> Self {
        let seq = match &frame {
            ServerFrame::Message { message_id, .. } | ServerFrame::System { message_id, .. } => Some(*message_id),
            _ => None,
        };
        Self { seq, frame }
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string(self).expect("frames serialize")
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "type", content = "payload", rename_all = "snake_case")]
pub enum ServerFrame {
    Message {
        message_id: u64,
        sender: String,
        body: String,
        phase: MessagePhase,
        sent_at: String,
    },
    System {
        message_id: u64,
        text: String,
        sent_at: String,
    },
    PhaseChange {
        phase: Phase,
        #[serde(default, skip_serializing_if = "Option::is_none")]
        stage: Option<ExerciseStage>,
        deadline: Option<i64>,
        remaining_seconds: Option<f64>,
        active: Vec<String>,
    },
    LockState {
        locked: bool,
        reason: LockReason,
    },
    ExercisePrompt {
        stage: ExerciseStage,
        #[serde(default, skip_serializing_if = "Option::is_none")]
        roster: Option<Vec<String>>,
        deadline: Option<i64>,
    },
    ExerciseFeedback {
        /// Mean of the self-reports, one decimal; `None` when nobody reported.
        climate: Option<f64>,
        own_accuracy_percent: Option<u32>,
        evaluated_targets: u32,
    },
    /// Who has finished the current step. Carries names only, never answers.
    Progress {
        phase: Phase,
        #[serde(default, skip_serializing_if = "Option::is_none")]
        stage: Option<ExerciseStage>,
        completed: Vec<String>,
        active: Vec<String>,
    },
    Presence {
        active: Vec<String>,
    },
    TeamSubmission {
        what: SubmissionKind,
        by: String,
        #[serde(default, skip_serializing_if = "Option::is_none")]
        ranking: Option<Vec<u32>>,
        #[serde(default, skip_serializing_if = "Option::is_none")]
        agreed: Option<bool>,
        #[serde(default, skip_serializing_if = "Option::is_none")]
        amounts: Option<Vec<u64>>,
    },
    TeamTerminated {
        reason: String,
    },
    Accepted {
        request: String,
    },
    Error {
        code: String,
        message: String,
        #[serde(default, skip_serializing_if = "Option::is_none")]
        request: Option<String>,
    },
    StateSnapshot(Box<Snapshot>),
}

impl ServerFrame {
    pub fn type_name(&self) -> &'static str {
        match self {
            ServerFrame::Message { .. } => "message",
            ServerFrame::System { .. } => "system",
            ServerFrame::PhaseChange { .. } => "phase_change",
            ServerFrame::LockState { .. } => "lock_state",
            ServerFrame::ExercisePrompt { .. } => "exercise_prompt",
            ServerFrame::ExerciseFeedback { .. } => "exercise_feedback",
            ServerFrame::Progress { .. } => "progress",
            ServerFrame::Presence { .. } => "presence",
            ServerFrame::TeamSubmission { .. } => "team_submission",
            ServerFrame::TeamTerminated { .. } => "team_terminated",
            ServerFrame::Accepted { .. } => "accepted",
            ServerFrame::Error { .. } => "error",
            ServerFrame::StateSnapshot(_) => "state_snapshot",
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum LockReason {
    Intervention,
    None,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum SubmissionKind {
    Ranking,
    Allocation,
}

/// Full resync for one participant. Contains only what that participant may see.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Snapshot {
    /// Sequence number of the last applied event.
    pub version: u64,
    pub pseudonym: Option<String>,
    pub status: String,
    pub lobby_position: Option<usize>,
    pub proposals: Vec<Proposal>,
    pub budget: u64,
    pub survey_items: Vec<SurveyItem>,
    pub team: Option<TeamView>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TeamView {
    pub team_id: u32,
    pub phase: Phase,
    pub deadline: Option<i64>,
    pub remaining_seconds: Option<f64>,
    pub locked: bool,
    pub members: Vec<String>,
    pub active: Vec<String>,
    pub transcript: Vec<TranscriptView>,
    pub team_ranking: Option<Vec<u32>>,
    pub team_ranking_agreed: Option<bool>,
    pub team_allocation: Option<Vec<u64>>,
    pub done: bool,
    pub survey_submitted: bool,
    pub exercise: Option<ExerciseView>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub termination_reason: Option<String>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TranscriptView {
    pub message_id: u64,
    pub sender: String,
    pub body: String,
    pub system: bool,
    pub sent_at: String,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ExerciseView {
    pub stage: ExerciseStage,
    pub deadline: Option<i64>,
    pub roster: Option<Vec<String>>,
    pub self_report_submitted: bool,
    pub guesses_submitted: bool,
    pub feedback: Option<OwnFeedback>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct OwnFeedback {
    pub climate: Option<f64>,
    pub own_accuracy_percent: Option<u32>,
    pub evaluated_targets: u32,
}

/// Read-only run overview for the status endpoint.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunStatus {
    pub run_id: String,
    pub log_path: String,
    pub last_seq: u64,
    pub lobby: usize,
    pub participants: usize,
    pub teams: Vec<TeamStatus>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TeamStatus {
    pub team_id: u32,
    pub condition: Condition,
    pub phase: Phase,
    pub members: usize,
    pub active: usize,
}
