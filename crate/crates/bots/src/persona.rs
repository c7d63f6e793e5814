//! Bot personas and cohort files.

use std::collections::BTreeMap;
use std::sync::Arc;

use serde::{Deserialize, Serialize};
use teamspace_core::model::Phase;

use crate::corpus::CorpusKind;
use crate::policy::{
    AllocationPolicy, EmotionPolicy, GuessPolicy, PolicyError, PolicyRegistry, PolicySpec, RankingPolicy, SurveyPolicy,
};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct Persona {
    /// Pseudonym; defaults to `bot<index>`.
    pub name: Option<String>,
    /// Messages posted during the discussion phase.
    pub chattiness: usize,
    pub decide_messages: usize,
    /// Messages posted during an unlocked pause.
    pub pause_messages: usize,
    pub corpus: CorpusKind,
    pub emotion: PolicySpec,
    pub guess: PolicySpec,
    /// Lobby ranking, and the team ranking when this bot submits for the team.
    pub ranking: PolicySpec,
    /// Preferred split. Submitted for the team when this bot is the submitter, and in the exit survey.
    pub allocation: PolicySpec,
    pub survey: PolicySpec,
    /// Ends its turn with a done signal. Without it, phases run to their deadline.
    pub signal_done: bool,
    /// Drops the connection at its turn in this phase.
    pub disconnect_in: Option<Phase>,
    /// Drops the connection at its turn in this phase, reconnects at once and carries on.
    pub reconnect_in: Option<Phase>,
    /// Tries to post while chat is locked and right across phase boundaries.
    pub fuzz_lock: bool,
}

impl Default for Persona {
    fn default() -> Self {
        Self {
            name: None,
            chattiness: 2,
            decide_messages: 1,
            pause_messages: 0,
            corpus: CorpusKind::Plain,
            emotion: PolicySpec::named("seeded"),
            guess: PolicySpec::named("truthful-mirror"),
            ranking: PolicySpec::named("seeded"),
            allocation: PolicySpec::named("perturbed"),
            survey: PolicySpec::named("seeded"),
            signal_done: true,
            disconnect_in: None,
            reconnect_in: None,
            fuzz_lock: false,
        }
    }
}

impl Persona {
    pub fn messages_in(&self, phase: Phase) -> usize {
        match phase {
            Phase::Discuss => self.chattiness,
            Phase::Decide => self.decide_messages,
            Phase::Interlude => self.pause_messages,
            _ => 0,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Group {
    pub count: usize,
    #[serde(default)]
    pub persona: Persona,
}

/// Cohort file: groups of identical bots, joined in file order.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct CohortSpec {
    pub groups: Vec<Group>,
    /// Upper bound on the whole run.
    #[serde(default = "default_timeout")]
    pub timeout_seconds: f64,
    /// Let each team finish before the next bot joins, so teams never interleave in the log.
    #[serde(default)]
    pub serial_teams: bool,
}

fn default_timeout() -> f64 {
    300.0
}

impl CohortSpec {
    pub fn uniform(count: usize, persona: Persona) -> Self {
        Self { groups: vec![Group { count, persona }], timeout_seconds: default_timeout(), serial_teams: false }
    }

    /// Personas in join order, with their pseudonyms filled in.
    pub fn expand(&self) -> Vec<(String, Persona)> {
        let mut out = Vec::new();
        for g in &self.groups {
            for _ in 0..g.count {
                let i = out.len();
                let name = g
                    .persona
                    .name
                    .clone()
                    .map_or_else(|| format!("bot{i:02}"), |n| if g.count > 1 { format!("{n}{i:02}") } else { n });
                out.push((name, g.persona.clone()));
            }
        }
        out
    }
}

/// A persona with its policies resolved.
#[derive(Clone)]
pub struct Behaviour {
    pub persona: Persona,
    pub emotion: Arc<dyn EmotionPolicy>,
    pub guess: Arc<dyn GuessPolicy>,
    pub ranking: Arc<dyn RankingPolicy>,
    pub allocation: Arc<dyn AllocationPolicy>,
    pub survey: Arc<dyn SurveyPolicy>,
}

impl Behaviour {
    pub fn resolve(persona: &Persona, registry: &PolicyRegistry) -> Result<Self, PolicyError> {
        Ok(Self {
            persona: persona.clone(),
            emotion: registry.emotion.build(&persona.emotion)?,
            guess: registry.guess.build(&persona.guess)?,
            ranking: registry.ranking.build(&persona.ranking)?,
            allocation: registry.allocation.build(&persona.allocation)?,
            survey: registry.survey.build(&persona.survey)?,
        })
    }
}

/// Pseudonym to persona, shared by every bot of a cohort for turn taking.
pub type Roster = Arc<BTreeMap<String, Persona>>;
