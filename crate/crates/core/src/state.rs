//! Run state as a pure fold over events.
//!
//! The engine mutates state only by applying the events it emits, so the
//! state of a live run and the state rebuilt from its log are the same value.

use std::collections::{BTreeMap, BTreeSet};

use chrono::{DateTime, Utc};
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::event::{DisconnectReason, Event, EventBody};
use crate::model::{
    Condition, ExerciseStage, ExitSurveyResponse, MessagePhase, Phase, SessionId, TeamId, SYSTEM_SENDER,
};
use crate::sociometrics::{AccuracyResult, AllocationVector, EmotionScore, RankVector};

#[derive(Debug, Clone, PartialEq, Eq, Error)]
pub enum StateError {
    #[error("unknown session {0}")]
    UnknownSession(SessionId),
    #[error("unknown team {0}")]
    UnknownTeam(TeamId),
    #[error("session {0} joined twice")]
    DuplicateSession(SessionId),
    #[error("team {0} formed twice")]
    DuplicateTeam(TeamId),
    #[error("team {team}: transcript entry {got} out of sequence, expected {expected}")]
    TranscriptGap { team: TeamId, expected: u64, got: u64 },
    #[error("{0} outside an intervention exercise")]
    NoExercise(&'static str),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ParticipantStatus {
    /// Joined, prerequisites for the queue not yet complete.
    Lobby,
    Queued,
    InTeam,
    /// Left the lobby queue after the lobby timeout.
    Released,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Participant {
    pub session_id: SessionId,
    pub pseudonym: Option<String>,
    pub demographics: BTreeMap<String, String>,
    pub lobby_ranking: Option<RankVector>,
    pub connected: bool,
    pub team_id: Option<TeamId>,
    pub status: ParticipantStatus,
    pub joined_at: DateTime<Utc>,
    pub queued_at: Option<DateTime<Utc>>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TranscriptEntry {
    pub message_id: u64,
    pub sender: String,
    /// `None` for system announcements.
    pub session_id: Option<SessionId>,
    pub body: String,
    pub phase: Option<MessagePhase>,
    pub sent_at: DateTime<Utc>,
}

impl TranscriptEntry {
    pub fn is_system(&self) -> bool {
        self.session_id.is_none()
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TeamRanking {
    pub ranking: RankVector,
    pub agreed: bool,
    pub submitter: SessionId,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TeamAllocation {
    pub allocation: AllocationVector,
    pub submitter: SessionId,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Feedback {
    pub climate: Option<f64>,
    pub accuracies: BTreeMap<SessionId, Option<AccuracyResult>>,
    pub participants: Vec<SessionId>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ExerciseState {
    pub stage: ExerciseStage,
    pub stage_deadline: Option<i64>,
    pub self_reports: BTreeMap<SessionId, EmotionScore>,
    pub guess_sets: BTreeMap<SessionId, BTreeMap<SessionId, EmotionScore>>,
    /// Teammates each member is asked to score during guessing.
    pub rosters: BTreeMap<SessionId, Vec<SessionId>>,
    pub feedback: Option<Feedback>,
}

impl ExerciseState {
    fn new(deadline: Option<i64>) -> Self {
        Self {
            stage: ExerciseStage::SelfReport,
            stage_deadline: deadline,
            self_reports: BTreeMap::new(),
            guess_sets: BTreeMap::new(),
            rosters: BTreeMap::new(),
            feedback: None,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Team {
    pub team_id: TeamId,
    pub condition: Condition,
    pub members: Vec<SessionId>,
    /// Members still taking part, in member order.
    pub active_members: Vec<SessionId>,
    pub phase: Phase,
    pub deadline: Option<i64>,
    pub phase_history: Vec<Phase>,
    pub locked: bool,
    pub transcript: Vec<TranscriptEntry>,
    pub team_ranking: Option<TeamRanking>,
    pub allocation: Option<TeamAllocation>,
    pub exercise: Option<ExerciseState>,
    pub surveys: BTreeMap<SessionId, ExitSurveyResponse>,
    /// Members who signalled they are done with the current phase or stage.
    pub done: BTreeSet<SessionId>,
    /// Members who left, keyed to the phase they left in.
    pub departed: BTreeMap<SessionId, Phase>,
    pub formed_at: DateTime<Utc>,
    pub terminated_reason: Option<String>,
}

impl Team {
    pub fn is_active(&self, session: &SessionId) -> bool {
        self.active_members.contains(session)
    }

    pub fn next_message_id(&self) -> u64 {
        self.transcript.len() as u64 + 1
    }

    pub fn all_active_done(&self) -> bool {
        !self.active_members.is_empty() && self.active_members.iter().all(|m| self.done.contains(m))
    }

    fn sort_active(&mut self) {
        let order: BTreeMap<&SessionId, usize> = self.members.iter().enumerate().map(|(i, m)| (m, i)).collect();
        let mut active = std::mem::take(&mut self.active_members);
        active.sort_by_key(|m| order.get(m).copied().unwrap_or(usize::MAX));
        active.dedup();
        self.active_members = active;
    }
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct RunState {
    pub participants: BTreeMap<SessionId, Participant>,
    /// FIFO of participants eligible for team formation.
    pub lobby: Vec<SessionId>,
    pub teams: BTreeMap<TeamId, Team>,
    pub last_seq: u64,
}

impl RunState {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn participant(&self, id: &SessionId) -> Option<&Participant> {
        self.participants.get(id)
    }

    pub fn team(&self, id: TeamId) -> Option<&Team> {
        self.teams.get(&id)
    }

    pub fn team_of(&self, id: &SessionId) -> Option<&Team> {
        self.participants.get(id)?.team_id.and_then(|t| self.teams.get(&t))
    }

    pub fn lobby_position(&self, id: &SessionId) -> Option<usize> {
        self.lobby.iter().position(|s| s == id).map(|p| p + 1)
    }

    pub fn pseudonym(&self, id: &SessionId) -> Option<&str> {
        self.participants.get(id)?.pseudonym.as_deref()
    }

    pub fn next_team_id(&self) -> TeamId {
        TeamId(self.teams.keys().next_back().map_or(1, |t| t.0 + 1))
    }

    /// Canonical serialized form, used for equality checks between live and replayed state.
    pub fn to_canonical_json(&self) -> String {
        serde_json::to_string(self).expect("state serializes")
    }

    fn participant_mut(&mut self, id: &SessionId) -> Result<&mut Participant, StateError> {
        self.participants.get_mut(id).ok_or_else(|| StateError::UnknownSession(id.clone()))
    }

    fn team_mut(&mut self, id: TeamId) -> Result<&mut Team, StateError> {
        self.teams.get_mut(&id).ok_or(StateError::UnknownTeam(id))
    }

    fn maybe_enqueue(&mut self, id: &SessionId, at: DateTime<Utc>) -> Result<(), StateError> {
        let p = self.participant_mut(id)?;
        if p.status == ParticipantStatus::Lobby && p.connected && p.pseudonym.is_some() && p.lobby_ranking.is_some() {
            p.status = ParticipantStatus::Queued;
            p.queued_at = Some(at);
            self.lobby.push(id.clone());
        }
        Ok(())
    }

    /// Applies one event. Sequence numbering is checked by the caller.
    pub fn apply(&mut self, event: &Event) -> Result<(), StateError> {
        let at = event.wall_time;
        let session = event.session_id.as_ref();
        let need_session = || session.cloned().ok_or(StateError::NoExercise("event without session"));
        let team_id = event.team_id;
        match &event.body {
            EventBody::ParticipantJoined {} => {
                let id = need_session()?;
                if self.participants.contains_key(&id) {
                    return Err(StateError::DuplicateSession(id));
                }
                self.participants.insert(
                    id.clone(),
                    Participant {
                        session_id: id,
                        pseudonym: None,
                        demographics: BTreeMap::new(),
                        lobby_ranking: None,
                        connected: true,
                        team_id: None,
                        status: ParticipantStatus::Lobby,
                        joined_at: at,
                        queued_at: None,
                    },
                );
            }
            EventBody::PseudonymSet { pseudonym } => {
                let id = need_session()?;
                self.participant_mut(&id)?.pseudonym = Some(pseudonym.clone());
                self.maybe_enqueue(&id, at)?;
            }
            EventBody::LobbySurveySubmitted { demographics, ranking } => {
                let id = need_session()?;
                let p = self.participant_mut(&id)?;
                p.demographics = demographics.clone();
                p.lobby_ranking = Some(ranking.clone());
                self.maybe_enqueue(&id, at)?;
            }
            EventBody::TeamFormed { condition, members } => {
                let tid = team_id.expect("validated");
                if self.teams.contains_key(&tid) {
                    return Err(StateError::DuplicateTeam(tid));
                }
                for m in members {
                    let p = self.participant_mut(m)?;
                    p.status = ParticipantStatus::InTeam;
                    p.team_id = Some(tid);
                    p.queued_at = None;
                }
                self.lobby.retain(|s| !members.contains(s));
                self.teams.insert(
                    tid,
                    Team {
                        team_id: tid,
                        condition: *condition,
                        members: members.clone(),
                        active_members: members.clone(),
                        phase: Phase::Discuss,
                        deadline: None,
                        phase_history: Vec::new(),
                        locked: false,
                        transcript: Vec::new(),
                        team_ranking: None,
                        allocation: None,
                        exercise: None,
                        surveys: BTreeMap::new(),
                        done: BTreeSet::new(),
                        departed: BTreeMap::new(),
                        formed_at: at,
                        terminated_reason: None,
                    },
                );
            }
            EventBody::PhaseStarted { phase, stage, deadline } => {
                let team = self.team_mut(team_id.expect("validated"))?;
                team.done.clear();
                if team.phase_history.last() != Some(phase) {
                    team.phase_history.push(*phase);
                }
                team.phase = *phase;
                team.deadline = *deadline;
                match (phase, stage) {
                    (Phase::Interlude, Some(ExerciseStage::SelfReport)) => {
                        team.exercise = Some(ExerciseState::new(*deadline));
                    }
                    (Phase::Interlude, Some(ExerciseStage::Guessing)) => {
                        let active = team.active_members.clone();
                        let ex = team.exercise.as_mut().ok_or(StateError::NoExercise("guessing stage"))?;
                        ex.stage = ExerciseStage::Guessing;
                        ex.stage_deadline = *deadline;
                        ex.rosters = active
                            .iter()
                            .map(|m| (m.clone(), active.iter().filter(|o| *o != m).cloned().collect()))
                            .collect();
                    }
                    (Phase::Decide, _) => {
                        if let Some(ex) = team.exercise.as_mut() {
                            ex.stage = ExerciseStage::Done;
                            ex.stage_deadline = None;
                        }
                    }
                    _ => {}
                }
            }
            EventBody::MessagePosted { message_id, sender, body, phase } => {
                let team = self.team_mut(team_id.expect("validated"))?;
                let expected = team.next_message_id();
                if *message_id != expected {
                    return Err(StateError::TranscriptGap { team: team.team_id, expected, got: *message_id });
                }
                team.transcript.push(TranscriptEntry {
                    message_id: *message_id,
                    sender: sender.clone(),
                    session_id: session.cloned(),
                    body: body.clone(),
                    phase: Some(*phase),
                    sent_at: at,
                });
            }
            EventBody::SystemAnnounced { message_id, text } => {
                let team = self.team_mut(team_id.expect("validated"))?;
                let expected = team.next_message_id();
                if *message_id != expected {
                    return Err(StateError::TranscriptGap { team: team.team_id, expected, got: *message_id });
                }
                team.transcript.push(TranscriptEntry {
                    message_id: *message_id,
                    sender: SYSTEM_SENDER.to_string(),
                    session_id: None,
                    body: text.clone(),
                    phase: None,
                    sent_at: at,
                });
            }
            EventBody::ChatLocked {} => self.team_mut(team_id.expect("validated"))?.locked = true,
            EventBody::ChatUnlocked {} => self.team_mut(team_id.expect("validated"))?.locked = false,
            EventBody::SelfReportSubmitted { score } => {
                let id = need_session()?;
                let team = self.team_mut(team_id.expect("validated"))?;
                let ex = team.exercise.as_mut().ok_or(StateError::NoExercise("self report"))?;
                ex.self_reports.insert(id, *score);
            }
            EventBody::GuessesSubmitted { guesses } => {
                let id = need_session()?;
                let team = self.team_mut(team_id.expect("validated"))?;
                let ex = team.exercise.as_mut().ok_or(StateError::NoExercise("guesses"))?;
                ex.guess_sets.insert(id, guesses.clone());
            }
            EventBody::FeedbackComputed { climate, accuracies, participants, deadline } => {
                let team = self.team_mut(team_id.expect("validated"))?;
                team.done.clear();
                team.deadline = Some(*deadline);
                let ex = team.exercise.as_mut().ok_or(StateError::NoExercise("feedback"))?;
                ex.stage = ExerciseStage::Feedback;
                ex.stage_deadline = Some(*deadline);
                ex.feedback = Some(Feedback {
                    climate: *climate,
                    accuracies: accuracies.clone(),
                    participants: participants.clone(),
                });
            }
            EventBody::TeamRankingSubmitted { ranking, agreed } => {
                let submitter = need_session()?;
                self.team_mut(team_id.expect("validated"))?.team_ranking =
                    Some(TeamRanking { ranking: ranking.clone(), agreed: *agreed, submitter });
            }
            EventBody::TeamAllocationSubmitted { allocation } => {
                let submitter = need_session()?;
                self.team_mut(team_id.expect("validated"))?.allocation =
                    Some(TeamAllocation { allocation: allocation.clone(), submitter });
            }
            EventBody::ExitSurveySubmitted { response } => {
                let id = need_session()?;
                self.team_mut(team_id.expect("validated"))?.surveys.insert(id, response.clone());
            }
            EventBody::DoneSignaled { .. } => {
                let id = need_session()?;
                self.team_mut(team_id.expect("validated"))?.done.insert(id);
            }
            EventBody::ParticipantDisconnected { reason } => {
                let id = need_session()?;
                let p = self.participant_mut(&id)?;
                p.connected = false;
                let team_of = p.team_id;
                match (reason, p.status) {
                    (DisconnectReason::LobbyTimeout, _) => {
                        p.status = ParticipantStatus::Released;
                        p.queued_at = None;
                        self.lobby.retain(|s| s != &id);
                    }
                    (DisconnectReason::ConnectionLost, ParticipantStatus::Queued) => {
                        p.status = ParticipantStatus::Lobby;
                        p.queued_at = None;
                        self.lobby.retain(|s| s != &id);
                    }
                    (DisconnectReason::ConnectionLost, ParticipantStatus::InTeam) => {
                        let team = self.team_mut(team_of.expect("in team"))?;
                        team.active_members.retain(|m| m != &id);
                        team.done.remove(&id);
                        team.departed.insert(id.clone(), team.phase);
                        if let Some(ex) = team.exercise.as_mut() {
                            if ex.stage == ExerciseStage::Guessing {
                                for (member, roster) in ex.rosters.iter_mut() {
                                    if !ex.guess_sets.contains_key(member) {
                                        roster.retain(|t| t != &id);
                                    }
                                }
                            }
                        }
                    }
                    _ => {}
                }
            }
            EventBody::ParticipantReconnected {} => {
                let id = need_session()?;
                let p = self.participant_mut(&id)?;
                p.connected = true;
                match (p.status, p.team_id) {
                    (ParticipantStatus::Lobby, _) => self.maybe_enqueue(&id, at)?,
                    (ParticipantStatus::InTeam, Some(tid)) => {
                        let team = self.team_mut(tid)?;
                        if team.departed.remove(&id).is_some() {
                            team.active_members.push(id.clone());
                            team.sort_active();
                            let active = team.active_members.clone();
                            if let Some(ex) = team.exercise.as_mut() {
                                if ex.stage == ExerciseStage::Guessing && !ex.guess_sets.contains_key(&id) {
                                    ex.rosters.insert(id.clone(), active.into_iter().filter(|m| m != &id).collect());
                                }
                            }
                        }
                    }
                    _ => {}
                }
            }
            EventBody::TeamTerminated { reason, .. } => {
                let team = self.team_mut(team_id.expect("validated"))?;
                team.phase = Phase::Terminated;
                team.phase_history.push(Phase::Terminated);
                team.deadline = None;
                team.locked = false;
                team.done.clear();
                team.terminated_reason = Some(reason.clone());
            }
            EventBody::TeamCompleted {} => {
                let team = self.team_mut(team_id.expect("validated"))?;
                team.phase = Phase::Complete;
                team.phase_history.push(Phase::Complete);
                team.deadline = None;
                team.done.clear();
            }
        }
        self.last_seq = event.event_seq;
        Ok(())
    }
}

/// True when `history` is a prefix of the normal phase path, optionally cut short by `Terminated`.
pub fn is_valid_phase_history(history: &[Phase]) -> bool {
    const PATH: [Phase; 5] = [Phase::Discuss, Phase::Interlude, Phase::Decide, Phase::ExitSurvey, Phase::Complete];
    let (body, terminated) = match history.split_last() {
        Some((Phase::Terminated, rest)) => (rest, true),
        _ => (history, false),
    };
    if terminated && body.last() == Some(&Phase::Complete) {
        return false;
    }
    body.len() <= PATH.len() && body.iter().zip(PATH.iter()).all(|(a, b)| a == b)
}
