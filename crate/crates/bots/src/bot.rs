//! One scripted participant as a pure state machine: frames in, actions out.
//! The async driver in `harness` does the I/O.

use std::collections::{BTreeMap, BTreeSet};

use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use serde_json::Value;
use teamspace_core::config::{ItemKind, SurveyItem};
use teamspace_core::model::{ExerciseStage, ExitSurveyResponse, MessagePhase, Phase};
use teamspace_core::protocol::{ClientFrame, Envelope, ExercisePayload, OwnFeedback, ServerFrame, Snapshot};

use crate::persona::{Behaviour, Roster};

/// Keys that would expose another member's exercise answers.
pub const PRIVATE_KEYS: &[&str] =
    &["score", "self_report", "self_reports", "guesses", "guess_sets", "accuracies", "accuracy"];

const FEEDBACK_KEYS: &[&str] = &["climate", "evaluated_targets", "own_accuracy_percent"];

/// Error codes a lock fuzzer provokes on purpose.
const FUZZ_CODES: &[&str] = &["CHAT_LOCKED", "PHASE_CLOSED"];

const FUZZ_BURST: usize = 3;

#[derive(Debug, Clone, PartialEq)]
pub enum Action {
    Send(ClientFrame),
    /// Drop the connection without a goodbye.
    Disconnect,
    /// Drop the connection and open a new one.
    Reconnect,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Outcome {
    Complete,
    Terminated,
    Released,
    Disconnected,
    ConnectionLost,
    TimedOut,
}

#[derive(Debug, Clone)]
struct TeamTrack {
    team_id: u32,
    phase: Phase,
    stage: Option<ExerciseStage>,
    locked: bool,
    active: Vec<String>,
    completed: BTreeSet<String>,
    messages: BTreeMap<String, usize>,
    submission_seen: bool,
    last_message_id: u64,
    guess_roster: Option<Vec<String>>,
    feedback_seen: bool,
}

pub struct Bot {
    pub name: String,
    behaviour: Behaviour,
    roster: Roster,
    rng: ChaCha8Rng,
    proposals: usize,
    budget: u64,
    survey_items: Vec<SurveyItem>,
    team: Option<TeamTrack>,
    acted: BTreeSet<(Phase, Option<ExerciseStage>)>,
    reconnected: bool,
    lobby_ranking: Option<Vec<u32>>,
    preferred: Option<Vec<u64>>,
    pub frames: Vec<String>,
    pub violations: Vec<String>,
    pub lock_rejections: usize,
    pub self_report: Option<i64>,
    pub feedback: Option<OwnFeedback>,
    pub outcome: Option<Outcome>,
}

impl Bot {
    pub fn new(name: String, behaviour: Behaviour, roster: Roster, rng: ChaCha8Rng) -> Self {
        Self {
            name,
            behaviour,
            roster,
            rng,
            proposals: 0,
            budget: 0,
            survey_items: Vec::new(),
            team: None,
            acted: BTreeSet::new(),
            reconnected: false,
            lobby_ranking: None,
            preferred: None,
            frames: Vec::new(),
            violations: Vec::new(),
            lock_rejections: 0,
            self_report: None,
            feedback: None,
            outcome: None,
        }
    }

    pub fn team_id(&self) -> Option<u32> {
        self.team.as_ref().map(|t| t.team_id)
    }

    /// The private ranking, drawn once.
    pub fn lobby_ranking(&mut self) -> Vec<u32> {
        if self.lobby_ranking.is_none() {
            self.lobby_ranking = Some(self.behaviour.ranking.ranking(&mut self.rng, self.proposals));
        }
        self.lobby_ranking.clone().expect("set")
    }

    fn preferred(&mut self) -> Vec<u64> {
        if self.preferred.is_none() {
            self.preferred = Some(self.behaviour.allocation.allocation(&mut self.rng, self.proposals, self.budget));
        }
        self.preferred.clone().expect("set")
    }

    pub fn finished(&self) -> bool {
        self.outcome.is_some()
    }

    /// Takes the context an HTTP response carried.
    pub fn observe_snapshot(&mut self, snap: &Snapshot) {
        self.proposals = snap.proposals.len();
        self.budget = snap.budget;
        self.survey_items = snap.survey_items.clone();
        if snap.status == "released" {
            self.outcome = Some(Outcome::Released);
        }
        let Some(view) = &snap.team else { return };
        let stage = view.exercise.as_ref().map(|e| e.stage);
        let same_step =
            self.team.as_ref().is_some_and(|t| t.team_id == view.team_id && t.phase == view.phase && t.stage == stage);
        let last_message_id = view.transcript.last().map_or(0, |m| m.message_id);
        if same_step {
            let t = self.team.as_mut().expect("checked");
            t.active = view.active.clone();
            t.locked = view.locked;
            t.last_message_id = last_message_id;
        } else {
            self.team = Some(TeamTrack {
                team_id: view.team_id,
                phase: view.phase,
                stage,
                locked: view.locked,
                active: view.active.clone(),
                completed: BTreeSet::new(),
                messages: BTreeMap::new(),
                submission_seen: false,
                last_message_id,
                guess_roster: view.exercise.as_ref().and_then(|e| e.roster.clone()),
                feedback_seen: view.exercise.as_ref().is_some_and(|e| e.feedback.is_some()),
            });
        }
        self.note_terminal(view.phase);
    }

    fn note_terminal(&mut self, phase: Phase) {
        match phase {
            Phase::Complete => self.outcome = Some(Outcome::Complete),
            Phase::Terminated => self.outcome = Some(Outcome::Terminated),
            _ => {}
        }
    }

    /// Records a violation together with the offending frame.
    fn violation(&mut self, what: String) {
        let frame = self.frames.last().map(String::as_str).unwrap_or("");
        let frame: String = frame.chars().take(400).collect();
        self.violations.push(format!("{} frame {}: {what}; frame: {frame}", self.name, self.frames.len()));
    }

    /// Records a raw frame, checks it, updates state and returns what to do next.
    pub fn on_frame(&mut self, text: &str) -> Vec<Action> {
        self.frames.push(text.to_string());
        let value: Value = match serde_json::from_str(text) {
            Ok(v) => v,
            Err(e) => {
                self.violation(format!("not JSON: {e}"));
                return Vec::new();
            }
        };
        if let Some(key) = find_private_key(&value) {
            self.violation(format!("private key {key:?} in frame"));
        }
        let env: Envelope = match serde_json::from_value(value.clone()) {
            Ok(e) => e,
            Err(e) => {
                self.violation(format!("unknown envelope: {e}"));
                return Vec::new();
            }
        };
        if let ServerFrame::ExerciseFeedback { .. } = env.frame {
            let keys: Vec<&str> =
                value["payload"].as_object().map(|o| o.keys().map(String::as_str).collect()).unwrap_or_default();
            if keys != FEEDBACK_KEYS {
                self.violation(format!("feedback carries {keys:?}"));
            }
        }
        self.apply(env);
        self.next_actions()
    }

    fn apply(&mut self, env: Envelope) {
        match env.frame {
            ServerFrame::StateSnapshot(snap) => self.observe_snapshot(&snap),
            ServerFrame::PhaseChange { phase, stage, active, .. } => {
                if let Some(t) = self.team.as_mut() {
                    if t.phase != phase {
                        t.messages.clear();
                        t.submission_seen = false;
                    }
                    if (t.phase, t.stage) != (phase, stage) {
                        t.completed.clear();
                    }
                    t.phase = phase;
                    t.stage = stage;
                    t.active = active;
                }
                self.note_terminal(phase);
            }
            ServerFrame::LockState { locked, .. } => {
                if let Some(t) = self.team.as_mut() {
                    t.locked = locked;
                }
            }
            ServerFrame::Message { message_id, sender, phase, .. } => {
                self.check_seq(env.seq, message_id);
                let Some(t) = self.team.as_mut() else { return };
                let expected = match t.phase {
                    Phase::Discuss => Some(MessagePhase::Discuss),
                    Phase::Decide => Some(MessagePhase::Decide),
                    Phase::Interlude if !t.locked => Some(MessagePhase::InterludeControl),
                    _ => None,
                };
                *t.messages.entry(sender).or_default() += 1;
                let locked = t.locked;
                let current = t.phase;
                if locked {
                    self.violation(format!("message {message_id} delivered while chat is locked"));
                } else if expected != Some(phase) {
                    self.violation(format!("message {message_id} tagged {phase} during {current}"));
                }
            }
            ServerFrame::System { message_id, .. } => self.check_seq(env.seq, message_id),
            ServerFrame::ExercisePrompt { stage: ExerciseStage::Guessing, roster, .. } => {
                if let Some(t) = self.team.as_mut() {
                    t.guess_roster = roster;
                }
            }
            ServerFrame::ExercisePrompt { .. } => {}
            ServerFrame::ExerciseFeedback { climate, own_accuracy_percent, evaluated_targets } => {
                self.feedback = Some(OwnFeedback { climate, own_accuracy_percent, evaluated_targets });
                if let Some(t) = self.team.as_mut() {
                    t.feedback_seen = true;
                }
            }
            ServerFrame::Progress { phase, stage, completed, active } => {
                if let Some(t) = self.team.as_mut() {
                    if (t.phase, t.stage) == (phase, stage) {
                        t.completed = completed.into_iter().collect();
                    }
                    t.active = active;
                }
            }
            ServerFrame::Presence { active } => {
                if let Some(t) = self.team.as_mut() {
                    t.active = active;
                }
            }
            ServerFrame::TeamSubmission { .. } => {
                if let Some(t) = self.team.as_mut() {
                    t.submission_seen = true;
                }
            }
            ServerFrame::TeamTerminated { .. } => self.outcome = Some(Outcome::Terminated),
            ServerFrame::Accepted { .. } => {}
            ServerFrame::Error { code, message, request } => {
                if self.behaviour.persona.fuzz_lock && FUZZ_CODES.contains(&code.as_str()) {
                    self.lock_rejections += 1;
                } else {
                    self.violation(format!("unexpected error {code} for {request:?}: {message}"));
                }
            }
        }
    }

    fn check_seq(&mut self, seq: Option<u64>, message_id: u64) {
        if seq != Some(message_id) {
            self.violation(format!("envelope seq {seq:?} does not match message {message_id}"));
        }
        let Some(t) = self.team.as_mut() else {
            self.violation(format!("transcript frame {message_id} before team formation"));
            return;
        };
        let expected = t.last_message_id + 1;
        t.last_message_id = message_id;
        if message_id != expected {
            self.violation(format!("transcript gap: expected {expected}, got {message_id}"));
        }
    }

    /// Whether `member` has finished the current step, judged from frames alone.
    fn step_done(&self, t: &TeamTrack, member: &str) -> bool {
        let Some(persona) = self.roster.get(member) else {
            return true;
        };
        match (t.phase, t.stage) {
            (Phase::Discuss | Phase::Decide, _) => {
                if persona.signal_done {
                    t.completed.contains(member)
                } else {
                    let submitter = t.active.first().is_some_and(|s| s == member);
                    t.messages.get(member).copied().unwrap_or(0) >= persona.messages_in(t.phase)
                        && (!submitter || t.submission_seen)
                }
            }
            (Phase::Interlude, None) => {
                t.locked || t.messages.get(member).copied().unwrap_or(0) >= persona.pause_messages
            }
            _ => t.completed.contains(member),
        }
    }

    fn next_actions(&mut self) -> Vec<Action> {
        if self.finished() {
            return Vec::new();
        }
        let Some(t) = self.team.clone() else {
            return Vec::new();
        };
        let Some(me) = t.active.iter().position(|m| *m == self.name) else {
            return Vec::new();
        };
        let step = (t.phase, t.stage);
        if self.acted.contains(&step) {
            return Vec::new();
        }
        match step {
            (Phase::Complete | Phase::Terminated, _) | (Phase::Interlude, Some(ExerciseStage::Done)) => {
                return Vec::new()
            }
            (Phase::Interlude, Some(ExerciseStage::Guessing)) if t.guess_roster.is_none() => return Vec::new(),
            (Phase::Interlude, Some(ExerciseStage::Feedback)) if !t.feedback_seen => return Vec::new(),
            _ => {}
        }
        if !t.active[..me].iter().all(|p| self.step_done(&t, p)) {
            return Vec::new();
        }
        let persona = self.behaviour.persona.clone();
        if persona.reconnect_in == Some(t.phase) && !self.reconnected {
            // The turn is taken after the new connection's snapshot arrives.
            self.reconnected = true;
            return vec![Action::Reconnect];
        }
        self.acted.insert(step);
        if persona.disconnect_in == Some(t.phase) {
            self.outcome = Some(Outcome::Disconnected);
            return vec![Action::Disconnect];
        }
        let submitter = me == 0;
        let last = me + 1 == t.active.len();
        let mut out = Vec::new();
        match step {
            (Phase::Discuss, _) => {
                self.chat(&mut out, persona.chattiness);
                if submitter {
                    let ranking = self.lobby_ranking();
                    out.push(Action::Send(ClientFrame::TeamRanking { ranking, agreed: true }));
                }
                if persona.signal_done {
                    out.push(Action::Send(ClientFrame::DoneSignal {}));
                }
                if persona.fuzz_lock && last {
                    self.chat(&mut out, FUZZ_BURST);
                }
            }
            (Phase::Interlude, None) => {
                if !t.locked {
                    self.chat(&mut out, persona.pause_messages);
                }
            }
            (Phase::Interlude, Some(ExerciseStage::SelfReport)) => {
                if persona.fuzz_lock {
                    self.chat(&mut out, 1);
                }
                let score = self.behaviour.emotion.self_report(&mut self.rng);
                self.self_report = Some(score);
                out.push(Action::Send(ClientFrame::ExerciseSubmit {
                    stage: ExerciseStage::SelfReport,
                    payload: ExercisePayload::SelfReport { score },
                }));
            }
            (Phase::Interlude, Some(ExerciseStage::Guessing)) => {
                if persona.fuzz_lock {
                    self.chat(&mut out, 1);
                }
                let guesses = t
                    .guess_roster
                    .iter()
                    .flatten()
                    .map(|target| (target.clone(), self.behaviour.guess.guess(&mut self.rng, self.self_report)))
                    .collect();
                out.push(Action::Send(ClientFrame::ExerciseSubmit {
                    stage: ExerciseStage::Guessing,
                    payload: ExercisePayload::Guesses { guesses },
                }));
            }
            (Phase::Interlude, Some(_)) => out.push(Action::Send(ClientFrame::Ack {})),
            (Phase::Decide, _) => {
                self.chat(&mut out, persona.decide_messages);
                if submitter {
                    let amounts = self.preferred();
                    out.push(Action::Send(ClientFrame::TeamAllocation { amounts }));
                }
                if persona.signal_done {
                    out.push(Action::Send(ClientFrame::DoneSignal {}));
                }
                if persona.fuzz_lock && last {
                    self.chat(&mut out, FUZZ_BURST);
                }
            }
            (Phase::ExitSurvey, _) => {
                let response = self.survey_response();
                out.push(Action::Send(ClientFrame::ExitSurvey { response }));
            }
            (Phase::Complete | Phase::Terminated, _) => {}
        }
        out
    }

    fn chat(&mut self, out: &mut Vec<Action>, n: usize) {
        for _ in 0..n {
            let body = self.behaviour.persona.corpus.pick(&mut self.rng).to_string();
            out.push(Action::Send(ClientFrame::PostMessage { body }));
        }
    }

    fn survey_response(&mut self) -> ExitSurveyResponse {
        let mut response = ExitSurveyResponse { allocation: self.preferred(), ..Default::default() };
        for item in self.survey_items.clone() {
            match item.kind {
                ItemKind::Likert => {
                    response.likert.insert(item.id.clone(), self.behaviour.survey.likert(&mut self.rng, &item));
                }
                ItemKind::Binary => {
                    response.binary.insert(item.id.clone(), self.behaviour.survey.binary(&mut self.rng, &item));
                }
                ItemKind::Open => {
                    response.open.insert(item.id.clone(), "It went fine.".to_string());
                }
            }
        }
        response
    }
}

/// First object key anywhere in `v` that names private exercise data.
pub fn find_private_key(v: &Value) -> Option<String> {
    match v {
        Value::Object(map) => map.iter().find_map(|(k, inner)| {
            if PRIVATE_KEYS.contains(&k.as_str()) {
                Some(k.clone())
            } else {
                find_private_key(inner)
            }
        }),
        Value::Array(items) => items.iter().find_map(find_private_key),
        _ => None,
    }
}
