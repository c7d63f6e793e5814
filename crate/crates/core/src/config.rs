use std::collections::{BTreeMap, BTreeSet};

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::model::Condition;

#[derive(Debug, Clone, PartialEq, Eq, Error)]
#[error("invalid experiment config: {0}")]
pub struct ConfigError(pub String);

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Proposal {
    pub id: u32,
    pub title: String,
    pub description: String,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ItemKind {
    Likert,
    Binary,
    Open,
}

/// One exit-survey question. Likert items belong to a named scale.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct SurveyItem {
    pub id: String,
    pub kind: ItemKind,
    pub text: String,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub scale: Option<String>,
    #[serde(default, skip_serializing_if = "std::ops::Not::not")]
    pub reverse: bool,
    #[serde(default = "default_true")]
    pub required: bool,
}

fn default_true() -> bool {
    true
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct DemographicItem {
    pub id: String,
    pub prompt: String,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum AssignmentMode {
    RandomPerTeam,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ConditionAssignment {
    pub mode: AssignmentMode,
    pub seed: u64,
}

impl Default for ConditionAssignment {
    fn default() -> Self {
        Self { mode: AssignmentMode::RandomPerTeam, seed: 0 }
    }
}

/// Everything that shapes a run. Durations are in seconds and may be
/// fractional so tests can compress the session.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct ExperimentConfig {
    pub team_size: usize,
    pub min_team_size: usize,
    pub discuss_seconds: f64,
    pub decide_seconds: f64,
    pub pause_seconds: f64,
    pub exercise_stage_seconds: f64,
    pub feedback_seconds: f64,
    pub survey_timeout_seconds: f64,
    /// Queued participants not placed in a team within this window are released.
    pub lobby_timeout_seconds: f64,
    pub budget: u64,
    pub proposals: Vec<Proposal>,
    pub condition_assignment: ConditionAssignment,
    /// Interlude strategy name per condition, resolved through the registry.
    pub interludes: BTreeMap<Condition, String>,
    pub control_prompt: String,
    pub survey_items: Vec<SurveyItem>,
    pub demographic_items: Vec<DemographicItem>,
}

pub const CONTROL_PAUSE_PROMPT: &str = "The experiment will proceed after a brief two-minute pause. Use this time to revisit the messages exchanged in the conversation so far and reflect on how the experience of working with this group has been.";

fn proposal(id: u32, title: &str, description: &str) -> Proposal {
    Proposal { id, title: title.into(), description: description.into() }
}

pub fn default_proposals() -> Vec<Proposal> {
    vec![
        proposal(1, "Community arts program", "To establish a community arts program featuring art, music, and dance programs for children and adults"),
        proposal(2, "Tourist bureau", "To create a tourist bureau to develop advertising and other methods of attracting tourism into the community"),
        proposal(3, "Library volumes", "To purchase additional volumes for the community's library system"),
        proposal(4, "Homeless shelter", "To establish an additional shelter for the homeless in the community"),
        proposal(5, "Gallery art", "To purchase art for display in the community's art gallery"),
    ]
}

fn likert(id: &str, scale: &str, text: &str, reverse: bool) -> SurveyItem {
    SurveyItem {
        id: id.into(),
        kind: ItemKind::Likert,
        text: text.into(),
        scale: Some(scale.into()),
        reverse,
        required: true,
    }
}

fn item(id: &str, kind: ItemKind, text: &str, required: bool) -> SurveyItem {
    SurveyItem { id: id.into(), kind, text: text.into(), scale: None, reverse: false, required }
}

pub fn default_survey_items() -> Vec<SurveyItem> {
    vec![
        likert("viability_1", "viability", "Most of the members of this team would welcome the opportunity to work as a group again in the future", false),
        likert("viability_2", "viability", "As a team this work group shows signs of falling apart.", true),
        likert("viability_3", "viability", "The members of this team could work together for a long time.", false),
        likert("task_conflict_1", "task_conflict", "there was a lot of conflict of ideas in our group", false),
        likert("task_conflict_2", "task_conflict", "my team had frequent disagreements relating to the task we were assigned.", false),
        likert("relationship_conflict_1", "relationship_conflict", "people in my team often got angry while working together.", false),
        likert("relationship_conflict_2", "relationship_conflict", "there was a lot of relationship tension in my group.", false),
        likert("satisfaction", "satisfaction", "I am satisfied with my team's final solution", false),
        item("feedback_give", ItemKind::Binary, "Would you be willing to give feedback to other members of this group on their teamwork practices? Giving feedback is optional; if you are willing, we may follow up later to collect it.", true),
        item("feedback_receive", ItemKind::Binary, "Would you be willing to receive feedback from other members of your team on their view of your teamwork practices?", true),
        item("openness", ItemKind::Open, "Would you characterize the conversation in your group as open or guarded? Please explain.", false),
        item("second_stage", ItemKind::Open, "How did you engage with the group in the second stage?", false),
    ]
}

pub fn default_demographic_items() -> Vec<DemographicItem> {
    vec![
        DemographicItem { id: "age".into(), prompt: "Age".into() },
        DemographicItem { id: "gender".into(), prompt: "Gender".into() },
        DemographicItem { id: "education".into(), prompt: "Highest level of education".into() },
    ]
}

impl Default for ExperimentConfig {
    fn default() -> Self {
        Self {
            team_size: 6,
            min_team_size: 4,
            discuss_seconds: 540.0,
            decide_seconds: 540.0,
            pause_seconds: 120.0,
            exercise_stage_seconds: 90.0,
            feedback_seconds: 30.0,
            survey_timeout_seconds: 600.0,
            lobby_timeout_seconds: 1800.0,
            budget: 500_000,
            proposals: default_proposals(),
            condition_assignment: ConditionAssignment::default(),
            interludes: [
                (Condition::Control, "reflective-pause".to_string()),
                (Condition::Intervention, "perspective-exercise".to_string()),
            ]
            .into(),
            control_prompt: CONTROL_PAUSE_PROMPT.to_string(),
            survey_items: default_survey_items(),
            demographic_items: default_demographic_items(),
        }
    }
}

pub(crate) fn seconds_to_ms(seconds: f64) -> i64 {
    (seconds * 1000.0).round() as i64
}

impl ExperimentConfig {
    pub fn validate(&self) -> Result<(), ConfigError> {
        let fail = |m: &str| Err(ConfigError(m.to_string()));
        if self.min_team_size < 2 {
            return fail("min_team_size must be at least 2");
        }
        if self.team_size < self.min_team_size {
            return fail("team_size must be at least min_team_size");
        }
        if self.proposals.len() < 2 {
            return fail("at least 2 proposals are required");
        }
        let ids: BTreeSet<u32> = self.proposals.iter().map(|p| p.id).collect();
        if ids != (1..=self.proposals.len() as u32).collect() {
            return fail("proposal ids must be 1..=n in order");
        }
        if self.budget == 0 {
            return fail("budget must be positive");
        }
        for (name, secs) in [
            ("discuss_seconds", self.discuss_seconds),
            ("decide_seconds", self.decide_seconds),
            ("pause_seconds", self.pause_seconds),
            ("exercise_stage_seconds", self.exercise_stage_seconds),
            ("feedback_seconds", self.feedback_seconds),
            ("survey_timeout_seconds", self.survey_timeout_seconds),
            ("lobby_timeout_seconds", self.lobby_timeout_seconds),
        ] {
            if !(secs > 0.0 && secs.is_finite()) {
                return Err(ConfigError(format!("{name} must be positive")));
            }
        }
        for condition in [Condition::Control, Condition::Intervention] {
            if !self.interludes.contains_key(&condition) {
                return Err(ConfigError(format!("no interlude strategy for condition {condition}")));
            }
        }
        let mut seen = BTreeSet::new();
        for item in &self.survey_items {
            if !seen.insert(item.id.as_str()) {
                return Err(ConfigError(format!("duplicate survey item {}", item.id)));
            }
            if item.kind == ItemKind::Likert && item.scale.is_none() {
                return Err(ConfigError(format!("likert item {} has no scale", item.id)));
            }
        }
        Ok(())
    }

    pub fn proposal_count(&self) -> usize {
        self.proposals.len()
    }

    /// Likert item ids grouped by scale name.
    pub fn scales(&self) -> BTreeMap<&str, Vec<&SurveyItem>> {
        let mut out: BTreeMap<&str, Vec<&SurveyItem>> = BTreeMap::new();
        for item in &self.survey_items {
            if let (ItemKind::Likert, Some(scale)) = (item.kind, item.scale.as_deref()) {
                out.entry(scale).or_default().push(item);
            }
        }
        out
    }

    /// Parses a JSON or TOML config and validates it.
    pub fn parse(text: &str, format: ConfigFormat) -> Result<Self, ConfigError> {
        let config: Self = match format {
            ConfigFormat::Json => serde_json::from_str(text).map_err(|e| ConfigError(e.to_string()))?,
            ConfigFormat::Toml => toml::from_str(text).map_err(|e| ConfigError(e.to_string()))?,
        };
        config.validate()?;
        Ok(config)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ConfigFormat {
    Json,
    Toml,
}

impl ConfigFormat {
    pub fn from_path(path: &std::path::Path) -> Self {
        match path.extension().and_then(|e| e.to_str()) {
            Some("toml") => ConfigFormat::Toml,
            _ => ConfigFormat::Json,
        }
    }
}
