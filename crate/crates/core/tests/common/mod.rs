#![allow(dead_code)]

use std::collections::BTreeMap;

use teamspace_core::config::ExperimentConfig;
use teamspace_core::engine::condition_sequence;
use teamspace_core::engine::{Batch, Engine, Outbound};
use teamspace_core::event::Event;
use teamspace_core::interlude::InterludeRegistry;
use teamspace_core::model::{Condition, ExitSurveyResponse, SessionId, TeamId};

pub const T0: i64 = 1_700_000_000_000;

/// Engine plus everything it has emitted so far.
pub struct Harness {
    pub engine: Engine,
    pub log: Vec<Event>,
    pub frames: Vec<Outbound>,
    pub now: i64,
}

impl Harness {
    pub fn new(config: ExperimentConfig) -> Self {
        let engine = Engine::new(config, &InterludeRegistry::standard()).unwrap();
        Self { engine, log: Vec::new(), frames: Vec::new(), now: T0 }
    }

    pub fn drain(&mut self) -> Batch {
        let batch = self.engine.take_batch();
        self.log.extend(batch.events.iter().cloned());
        self.frames.extend(batch.outbound.iter().cloned());
        batch
    }

    pub fn join(&mut self, name: &str) -> SessionId {
        let s = self.engine.create_session(self.now).unwrap();
        self.engine.connect(&s, self.now).unwrap();
        self.engine.set_pseudonym(&s, name, self.now).unwrap();
        self.drain();
        s
    }

    pub fn join_ranked(&mut self, name: &str, ranking: Vec<u32>) -> SessionId {
        let s = self.join(name);
        self.engine.submit_lobby_survey(&s, BTreeMap::new(), ranking, self.now).unwrap();
        self.drain();
        s
    }

    /// Joins `n` participants with rotated rankings; returns their ids.
    pub fn join_many(&mut self, prefix: &str, n: usize) -> Vec<SessionId> {
        (0..n)
            .map(|i| {
                let ranking: Vec<u32> = (0..5).map(|p| ((p + i) % 5) as u32 + 1).collect();
                self.join_ranked(&format!("{prefix}{i}"), ranking)
            })
            .collect()
    }

    pub fn advance(&mut self, secs: f64) {
        self.now += (secs * 1000.0).round() as i64;
        self.engine.tick(self.now).unwrap();
        self.drain();
    }

    pub fn team(&self, id: u32) -> &teamspace_core::state::Team {
        self.engine.state().team(TeamId(id)).unwrap()
    }

    pub fn frames_to(&self, s: &SessionId) -> Vec<&teamspace_core::protocol::ServerFrame> {
        self.frames.iter().filter(|o| &o.to == s).map(|o| &o.frame).collect()
    }
}

/// Smallest seed whose first teams get `wanted` in order.
pub fn seed_for(wanted: &[Condition]) -> u64 {
    (0..10_000).find(|&s| condition_sequence(s, wanted.len()) == wanted).expect("seed exists")
}

pub fn config_with(conditions: &[Condition]) -> ExperimentConfig {
    let mut c = ExperimentConfig::default();
    c.condition_assignment.seed = seed_for(conditions);
    c
}

pub fn survey(viability: [u8; 3], allocation: Vec<u64>) -> ExitSurveyResponse {
    let mut r = ExitSurveyResponse { allocation, ..Default::default() };
    for (i, v) in viability.iter().enumerate() {
        r.likert.insert(format!("viability_{}", i + 1), *v);
    }
    for id in
        ["task_conflict_1", "task_conflict_2", "relationship_conflict_1", "relationship_conflict_2", "satisfaction"]
    {
        r.likert.insert(id.into(), 3);
    }
    r.binary.insert("feedback_give".into(), true);
    r.binary.insert("feedback_receive".into(), false);
    r
}
