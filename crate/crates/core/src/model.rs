use std::collections::BTreeMap;
use std::fmt;

use serde::{Deserialize, Serialize};

/// Opaque per-participant token. Doubles as the participant id in logs.
#[derive(Debug, Clone, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(transparent)]
pub struct SessionId(pub String);

impl SessionId {
    pub fn as_str(&self) -> &str {
        &self.0
    }
}

impl fmt::Display for SessionId {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(&self.0)
    }
}

impl From<&str> for SessionId {
    fn from(s: &str) -> Self {
        SessionId(s.to_string())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(transparent)]
pub struct TeamId(pub u32);

impl fmt::Display for TeamId {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{}", self.0)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Condition {
    Control,
    Intervention,
}

impl fmt::Display for Condition {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Condition::Control => "control",
            Condition::Intervention => "intervention",
        })
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Phase {
    Discuss,
    Interlude,
    Decide,
    ExitSurvey,
    Terminated,
    Complete,
}

impl Phase {
    pub fn is_finished(self) -> bool {
        matches!(self, Phase::Terminated | Phase::Complete)
    }

    /// The phase that follows on the normal path.
    pub fn next(self) -> Option<Phase> {
        match self {
            Phase::Discuss => Some(Phase::Interlude),
            Phase::Interlude => Some(Phase::Decide),
            Phase::Decide => Some(Phase::ExitSurvey),
            Phase::ExitSurvey => Some(Phase::Complete),
            Phase::Terminated | Phase::Complete => None,
        }
    }
}

impl fmt::Display for Phase {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Phase::Discuss => "discuss",
            Phase::Interlude => "interlude",
            Phase::Decide => "decide",
            Phase::ExitSurvey => "exit_survey",
            Phase::Terminated => "terminated",
            Phase::Complete => "complete",
        })
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ExerciseStage {
    SelfReport,
    Guessing,
    Feedback,
    Done,
}

impl fmt::Display for ExerciseStage {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            ExerciseStage::SelfReport => "self_report",
            ExerciseStage::Guessing => "guessing",
            ExerciseStage::Feedback => "feedback",
            ExerciseStage::Done => "done",
        })
    }
}

/// Phase tag carried by participant chat messages.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum MessagePhase {
    Discuss,
    Decide,
    InterludeControl,
}

impl fmt::Display for MessagePhase {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            MessagePhase::Discuss => "discuss",
            MessagePhase::Decide => "decide",
            MessagePhase::InterludeControl => "interlude-control",
        })
    }
}

/// Answers to the exit survey, including the private individual allocation.
#[derive(Debug, Clone, PartialEq, Eq, Default, Serialize, Deserialize)]
pub struct ExitSurveyResponse {
    #[serde(default)]
    pub likert: BTreeMap<String, u8>,
    #[serde(default)]
    pub binary: BTreeMap<String, bool>,
    #[serde(default)]
    pub open: BTreeMap<String, String>,
    pub allocation: Vec<u64>,
}

pub const SYSTEM_SENDER: &str = "system";
pub const MAX_MESSAGE_CHARS: usize = 2000;
pub const MAX_PSEUDONYM_CHARS: usize = 24;
