//! The experiment state machine: lobby, team formation, phase timers,
//! dropouts, chat and task submissions.
//!
//! Every operation takes the current time in epoch milliseconds. State is
//! changed only by emitting events; the events and the frames they produce
//! accumulate in a pending [`Batch`] that the host must persist before
//! delivering any frame.

use std::collections::BTreeMap;
use std::sync::Arc;

use chrono::{DateTime, SecondsFormat, Utc};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use thiserror::Error;

use crate::config::{seconds_to_ms, ConfigError, ExperimentConfig, ItemKind};
use crate::event::{DisconnectReason, Event, EventBody, MalformedEvent};
use crate::interlude::{InterludeCx, InterludeRegistry, InterludeStrategy};
use crate::model::{
    Condition, ExerciseStage, ExitSurveyResponse, MessagePhase, Phase, SessionId, TeamId, MAX_MESSAGE_CHARS,
    MAX_PSEUDONYM_CHARS, SYSTEM_SENDER,
};
use crate::protocol::{
    ClientFrame, ExercisePayload, ExerciseView, LockReason, OwnFeedback, RunStatus, ServerFrame, Snapshot,
    SubmissionKind, TeamStatus, TeamView, TranscriptView,
};
use crate::sociometrics::{AllocationVector, RankVector, SociometricsError};
use crate::state::{ParticipantStatus, RunState, StateError, Team};

#[derive(Debug, Clone, PartialEq, Error)]
pub enum EngineError {
    #[error("unknown session")]
    UnknownSession,
    #[error("unknown team {0}")]
    UnknownTeam(TeamId),
    #[error("missing prerequisite: {0}")]
    MissingPrerequisite(&'static str),
    #[error("{0}")]
    Validation(String),
    #[error("chat is locked")]
    ChatLocked,
    #[error("chat is closed in the {0} phase")]
    PhaseClosed(Phase),
    #[error("not accepting {0}")]
    NotAccepting(&'static str),
    #[error("wrong exercise stage: expected {expected}, got {got}")]
    WrongStage { expected: ExerciseStage, got: ExerciseStage },
    #[error("duplicate {0}")]
    Duplicate(&'static str),
    #[error("participant is not in a team")]
    NotInTeam,
    #[error("participant already joined a team")]
    AlreadyInTeam,
    #[error("participant is no longer active in the team")]
    NotActive,
    #[error("pseudonym is taken")]
    PseudonymTaken,
    #[error("unknown interlude strategy {0:?}")]
    UnknownStrategy(String),
    #[error(transparent)]
    Sociometrics(#[from] SociometricsError),
    #[error(transparent)]
    Config(#[from] ConfigError),
    #[error(transparent)]
    Malformed(#[from] MalformedEvent),
    #[error(transparent)]
    State(#[from] StateError),
}

impl EngineError {
    /// Stable machine-readable code for wire errors.
    pub fn code(&self) -> &'static str {
        match self {
            EngineError::UnknownSession | EngineError::UnknownTeam(_) => "NOT_FOUND",
            EngineError::MissingPrerequisite(_) => "PREREQUISITE",
            EngineError::Validation(_) | EngineError::Sociometrics(_) => "VALIDATION",
            EngineError::ChatLocked => "CHAT_LOCKED",
            EngineError::PhaseClosed(_) | EngineError::NotAccepting(_) => "PHASE_CLOSED",
            EngineError::WrongStage { .. } => "WRONG_STAGE",
            EngineError::Duplicate(_) => "DUPLICATE",
            EngineError::NotInTeam | EngineError::AlreadyInTeam | EngineError::NotActive => "CONFLICT",
            EngineError::PseudonymTaken => "CONFLICT",
            EngineError::UnknownStrategy(_) | EngineError::Config(_) => "CONFIG",
            EngineError::Malformed(_) | EngineError::State(_) => "INTERNAL",
        }
    }

    /// Errors that indicate a bug rather than a bad request.
    pub fn is_internal(&self) -> bool {
        self.code() == "INTERNAL"
    }
}

/// A frame addressed to one participant.
#[derive(Debug, Clone, PartialEq)]
pub struct Outbound {
    pub to: SessionId,
    pub frame: ServerFrame,
}

/// Events to persist and the frames they release.
#[derive(Debug, Default)]
pub struct Batch {
    pub events: Vec<Event>,
    pub outbound: Vec<Outbound>,
}

impl Batch {
    pub fn is_empty(&self) -> bool {
        self.events.is_empty() && self.outbound.is_empty()
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Transition {
    pub team: TeamId,
    pub to: Phase,
    pub stage: Option<ExerciseStage>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum DisconnectOutcome {
    /// Not in a running team (lobby, finished team, or already gone).
    NoTeamEffect,
    Continues {
        active: usize,
    },
    Terminated,
}

pub fn ms_to_datetime(ms: i64) -> DateTime<Utc> {
    DateTime::from_timestamp_millis(ms).unwrap_or_default()
}

pub fn iso8601(t: &DateTime<Utc>) -> String {
    t.to_rfc3339_opts(SecondsFormat::Millis, true)
}

fn condition_rng(seed: u64) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(seed)
}

fn token_rng(seed: u64) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(seed ^ 0x7e57_5e55_10c0_ffee)
}

fn draw_condition(rng: &mut ChaCha8Rng) -> Condition {
    if rng.random_bool(0.5) {
        Condition::Intervention
    } else {
        Condition::Control
    }
}

/// The conditions the first `n` teams formed under `seed` receive.
pub fn condition_sequence(seed: u64, n: usize) -> Vec<Condition> {
    let mut rng = condition_rng(seed);
    (0..n).map(|_| draw_condition(&mut rng)).collect()
}

fn format_clock(seconds: f64) -> String {
    let total = seconds.round().max(0.0) as u64;
    format!("{}:{:02}", total / 60, total % 60)
}

pub struct Engine {
    config: ExperimentConfig,
    state: RunState,
    interludes: BTreeMap<Condition, Arc<dyn InterludeStrategy>>,
    condition_rng: ChaCha8Rng,
    token_rng: ChaCha8Rng,
    next_seq: u64,
    pending: Batch,
    transitions: Vec<Transition>,
}

impl Engine {
    pub fn new(config: ExperimentConfig, registry: &InterludeRegistry) -> Result<Self, EngineError> {
        config.validate()?;
        let mut interludes = BTreeMap::new();
        for (condition, name) in &config.interludes {
            let strategy = registry.get(name).ok_or_else(|| EngineError::UnknownStrategy(name.clone()))?;
            interludes.insert(*condition, strategy);
        }
        let seed = config.condition_assignment.seed;
        Ok(Self {
            condition_rng: condition_rng(seed),
            token_rng: token_rng(seed),
            config,
            state: RunState::new(),
            interludes,
            next_seq: 1,
            pending: Batch::default(),
            transitions: Vec::new(),
        })
    }

    /// Continues a run from its persisted state. Random streams are advanced
    /// past the draws the earlier process already made.
    pub fn resume(
        config: ExperimentConfig,
        registry: &InterludeRegistry,
        state: RunState,
    ) -> Result<Self, EngineError> {
        let mut engine = Self::new(config, registry)?;
        for _ in 0..state.teams.len() {
            draw_condition(&mut engine.condition_rng);
        }
        for _ in 0..state.participants.len() {
            engine.token_rng.random::<u64>();
        }
        engine.next_seq = state.last_seq + 1;
        engine.state = state;
        Ok(engine)
    }

    pub fn config(&self) -> &ExperimentConfig {
        &self.config
    }

    pub fn state(&self) -> &RunState {
        &self.state
    }

    /// Drains the events and frames produced since the last call.
    pub fn take_batch(&mut self) -> Batch {
        std::mem::take(&mut self.pending)
    }

    pub(crate) fn push_frame(&mut self, to: &SessionId, frame: ServerFrame) {
        self.pending.outbound.push(Outbound { to: to.clone(), frame });
    }

    pub(crate) fn emit(
        &mut self,
        now: i64,
        team_id: Option<TeamId>,
        session_id: Option<SessionId>,
        body: EventBody,
    ) -> Result<(), EngineError> {
        let event = Event { event_seq: self.next_seq, wall_time: ms_to_datetime(now), team_id, session_id, body };
        event.validate()?;
        self.state.apply(&event)?;
        self.next_seq += 1;
        match &event.body {
            EventBody::PhaseStarted { phase, stage, .. } => {
                self.transitions.push(Transition { team: team_id.expect("validated"), to: *phase, stage: *stage })
            }
            EventBody::TeamTerminated { .. } => self.transitions.push(Transition {
                team: team_id.expect("validated"),
                to: Phase::Terminated,
                stage: None,
            }),
            EventBody::TeamCompleted {} => self.transitions.push(Transition {
                team: team_id.expect("validated"),
                to: Phase::Complete,
                stage: None,
            }),
            _ => {}
        }
        self.frames_for(&event, now);
        self.pending.events.push(event);
        Ok(())
    }

    fn strategy(&self, team: &Team) -> Arc<dyn InterludeStrategy> {
        self.interludes[&team.condition].clone()
    }

    fn with_strategy<T>(
        &mut self,
        team: TeamId,
        now: i64,
        f: impl FnOnce(&dyn InterludeStrategy, &mut InterludeCx<'_>) -> Result<T, EngineError>,
    ) -> Result<T, EngineError> {
        let strategy = self.strategy(self.team(team)?);
        let mut cx = InterludeCx { engine: self, team, now };
        f(strategy.as_ref(), &mut cx)
    }

    fn team(&self, id: TeamId) -> Result<&Team, EngineError> {
        self.state.team(id).ok_or(EngineError::UnknownTeam(id))
    }

    fn known(&self, session: &SessionId) -> Result<(), EngineError> {
        if self.state.participants.contains_key(session) {
            Ok(())
        } else {
            Err(EngineError::UnknownSession)
        }
    }

    /// The running team of an active member.
    fn active_team(&self, session: &SessionId) -> Result<&Team, EngineError> {
        self.known(session)?;
        let team = self.state.team_of(session).ok_or(EngineError::NotInTeam)?;
        if !team.is_active(session) || team.phase.is_finished() {
            return Err(EngineError::NotActive);
        }
        Ok(team)
    }

    // ----- lobby -----

    pub fn create_session(&mut self, now: i64) -> Result<SessionId, EngineError> {
        let id = loop {
            let candidate = SessionId(format!("{:016x}", self.token_rng.random::<u64>()));
            if !self.state.participants.contains_key(&candidate) {
                break candidate;
            }
        };
        self.emit(now, None, Some(id.clone()), EventBody::ParticipantJoined {})?;
        Ok(id)
    }

    pub fn set_pseudonym(&mut self, session: &SessionId, pseudonym: &str, now: i64) -> Result<(), EngineError> {
        self.known(session)?;
        let participant = &self.state.participants[session];
        if participant.status == ParticipantStatus::InTeam {
            return Err(EngineError::AlreadyInTeam);
        }
        if participant.status == ParticipantStatus::Released {
            return Err(EngineError::NotActive);
        }
        let name = pseudonym.trim();
        let visible = name.chars().count();
        if visible == 0 || visible > MAX_PSEUDONYM_CHARS || name.chars().any(char::is_control) {
            return Err(EngineError::Validation(format!(
                "pseudonym must be 1-{MAX_PSEUDONYM_CHARS} visible characters"
            )));
        }
        if name.eq_ignore_ascii_case(SYSTEM_SENDER) {
            return Err(EngineError::PseudonymTaken);
        }
        let taken = self.state.participants.values().any(|p| {
            &p.session_id != session
                && p.pseudonym.as_deref().is_some_and(|n| n.to_lowercase() == name.to_lowercase())
                && match p.status {
                    ParticipantStatus::Lobby | ParticipantStatus::Queued => true,
                    ParticipantStatus::InTeam => {
                        self.state.team_of(&p.session_id).is_some_and(|t| !t.phase.is_finished())
                    }
                    ParticipantStatus::Released => false,
                }
        });
        if taken {
            return Err(EngineError::PseudonymTaken);
        }
        self.emit(now, None, Some(session.clone()), EventBody::PseudonymSet { pseudonym: name.to_string() })?;
        self.form_teams(now)?;
        Ok(())
    }

    /// Records demographics and the private proposal ranking, then forms teams if possible.
    /// Returns the lobby position when the participant is queued.
    pub fn submit_lobby_survey(
        &mut self,
        session: &SessionId,
        demographics: BTreeMap<String, String>,
        ranking: Vec<u32>,
        now: i64,
    ) -> Result<Option<usize>, EngineError> {
        self.known(session)?;
        let status = self.state.participants[session].status;
        if status == ParticipantStatus::InTeam {
            return Err(EngineError::AlreadyInTeam);
        }
        if status == ParticipantStatus::Released {
            return Err(EngineError::NotActive);
        }
        let ranking = self.validate_ranking(ranking)?;
        self.emit(now, None, Some(session.clone()), EventBody::LobbySurveySubmitted { demographics, ranking })?;
        let position = self.state.lobby_position(session);
        self.form_teams(now)?;
        Ok(position)
    }

    /// Lobby position of an eligible participant; rejects when a prerequisite is missing.
    pub fn enqueue(&self, session: &SessionId) -> Result<usize, EngineError> {
        self.known(session)?;
        let p = &self.state.participants[session];
        if p.pseudonym.is_none() {
            return Err(EngineError::MissingPrerequisite("pseudonym"));
        }
        if p.lobby_ranking.is_none() {
            return Err(EngineError::MissingPrerequisite("lobby ranking"));
        }
        match p.status {
            ParticipantStatus::InTeam => Err(EngineError::AlreadyInTeam),
            _ => self.state.lobby_position(session).ok_or(EngineError::NotActive),
        }
    }

    fn validate_ranking(&self, ranks: Vec<u32>) -> Result<RankVector, EngineError> {
        let expected = self.config.proposal_count();
        if ranks.len() != expected {
            return Err(EngineError::Validation(format!(
                "ranking must cover {expected} proposals, got {}",
                ranks.len()
            )));
        }
        Ok(RankVector::new(ranks)?)
    }

    /// Forms as many full teams as the queue allows, oldest participants first.
    pub fn form_teams(&mut self, now: i64) -> Result<Vec<TeamId>, EngineError> {
        let mut formed = Vec::new();
        while self.state.lobby.len() >= self.config.team_size {
            let members: Vec<SessionId> = self.state.lobby[..self.config.team_size].to_vec();
            let team_id = self.state.next_team_id();
            let condition = draw_condition(&mut self.condition_rng);
            self.emit(now, Some(team_id), None, EventBody::TeamFormed { condition, members })?;
            self.start_discuss(team_id, now)?;
            formed.push(team_id);
        }
        Ok(formed)
    }

    // ----- phases -----

    fn start_discuss(&mut self, team: TeamId, now: i64) -> Result<(), EngineError> {
        let secs = self.config.discuss_seconds;
        self.emit(
            now,
            Some(team),
            None,
            EventBody::PhaseStarted { phase: Phase::Discuss, stage: None, deadline: Some(now + seconds_to_ms(secs)) },
        )?;
        self.system_announce(
            team,
            &format!(
                "Discuss phase: {} remaining. Weigh the pros and cons of each proposal and agree on a ranking.",
                format_clock(secs)
            ),
            now,
        )?;
        Ok(())
    }

    fn end_discuss(&mut self, team: TeamId, now: i64) -> Result<(), EngineError> {
        self.with_strategy(team, now, |s, cx| s.begin(cx))
    }

    pub(crate) fn start_decide(&mut self, team: TeamId, now: i64) -> Result<(), EngineError> {
        let secs = self.config.decide_seconds;
        self.emit(
            now,
            Some(team),
            None,
            EventBody::PhaseStarted { phase: Phase::Decide, stage: None, deadline: Some(now + seconds_to_ms(secs)) },
        )?;
        self.unlock_chat(team, now)?;
        let budget = self.config.budget;
        self.system_announce(
            team,
            &format!(
                "Decide phase: {} remaining. Agree on how to allocate ${budget} across the proposals.",
                format_clock(secs)
            ),
            now,
        )?;
        Ok(())
    }

    fn start_exit_survey(&mut self, team: TeamId, now: i64) -> Result<(), EngineError> {
        self.emit(
            now,
            Some(team),
            None,
            EventBody::PhaseStarted {
                phase: Phase::ExitSurvey,
                stage: None,
                deadline: Some(now + seconds_to_ms(self.config.survey_timeout_seconds)),
            },
        )?;
        self.system_announce(team, "The task is over. Please complete the exit survey.", now)?;
        Ok(())
    }

    fn complete(&mut self, team: TeamId, now: i64) -> Result<(), EngineError> {
        self.emit(now, Some(team), None, EventBody::TeamCompleted {})
    }

    fn terminate(&mut self, team: TeamId, now: i64) -> Result<(), EngineError> {
        let active = self.team(team)?.active_members.len();
        let reason = format!("team dropped below {} members", self.config.min_team_size);
        self.emit(now, Some(team), None, EventBody::TeamTerminated { reason: reason.clone(), active_members: active })?;
        self.system_announce(
            team,
            &format!("The task has ended early because the {reason}. Thank you for taking part."),
            now,
        )?;
        Ok(())
    }

    /// Moves a team along when everyone still present has finished the current step.
    fn settle_team(&mut self, team_id: TeamId, now: i64, departed: Option<&SessionId>) -> Result<(), EngineError> {
        let team = self.team(team_id)?;
        match team.phase {
            Phase::Discuss if team.all_active_done() => self.end_discuss(team_id, now),
            Phase::Decide if team.all_active_done() => self.start_exit_survey(team_id, now),
            Phase::ExitSurvey if team.active_members.iter().all(|m| team.surveys.contains_key(m)) => {
                self.complete(team_id, now)
            }
            Phase::Interlude => match departed {
                Some(who) => {
                    let who = who.clone();
                    self.with_strategy(team_id, now, |s, cx| s.member_left(cx, &who))
                }
                None => Ok(()),
            },
            _ => Ok(()),
        }
    }

    /// Fires every expired deadline. Calling twice with the same `now` emits nothing the second time.
    pub fn tick(&mut self, now: i64) -> Result<Vec<Transition>, EngineError> {
        self.transitions.clear();
        let timeout = seconds_to_ms(self.config.lobby_timeout_seconds);
        let expired: Vec<SessionId> = self
            .state
            .lobby
            .iter()
            .filter(|s| self.state.participants[*s].queued_at.is_some_and(|q| q.timestamp_millis() + timeout <= now))
            .cloned()
            .collect();
        for session in expired {
            self.emit(
                now,
                None,
                Some(session),
                EventBody::ParticipantDisconnected { reason: DisconnectReason::LobbyTimeout },
            )?;
        }
        let due: Vec<(TeamId, Phase)> =
            self.state.teams.values().filter(|t| !t.phase.is_finished()).map(|t| (t.team_id, t.phase)).collect();
        for (team_id, phase) in due {
            let team = self.team(team_id)?;
            let expired = team.deadline.is_some_and(|d| d <= now);
            match phase {
                Phase::Discuss if expired => self.end_discuss(team_id, now)?,
                Phase::Interlude => self.with_strategy(team_id, now, |s, cx| s.tick(cx))?,
                Phase::Decide if expired => self.start_exit_survey(team_id, now)?,
                Phase::ExitSurvey if expired => self.complete(team_id, now)?,
                _ => {}
            }
        }
        Ok(std::mem::take(&mut self.transitions))
    }

    // ----- connections -----

    /// A live connection opened. Restores a dropped member when the team is
    /// still in the phase they left, and sends a full snapshot.
    pub fn connect(&mut self, session: &SessionId, now: i64) -> Result<(), EngineError> {
        self.known(session)?;
        let p = &self.state.participants[session];
        let rejoin = match p.status {
            ParticipantStatus::Lobby => !p.connected,
            ParticipantStatus::InTeam => self
                .state
                .team_of(session)
                .is_some_and(|t| !t.phase.is_finished() && t.departed.get(session) == Some(&t.phase)),
            _ => false,
        };
        if rejoin {
            self.emit(now, None, Some(session.clone()), EventBody::ParticipantReconnected {})?;
            self.form_teams(now)?;
        }
        let snapshot = self.snapshot(session, now)?;
        self.push_frame(session, ServerFrame::StateSnapshot(Box::new(snapshot)));
        Ok(())
    }

    pub fn disconnect(&mut self, session: &SessionId, now: i64) -> Result<DisconnectOutcome, EngineError> {
        self.known(session)?;
        let p = &self.state.participants[session];
        match p.status {
            ParticipantStatus::Lobby | ParticipantStatus::Queued if p.connected => {
                self.emit(
                    now,
                    None,
                    Some(session.clone()),
                    EventBody::ParticipantDisconnected { reason: DisconnectReason::ConnectionLost },
                )?;
                Ok(DisconnectOutcome::NoTeamEffect)
            }
            ParticipantStatus::InTeam => {
                let team = self.state.team_of(session).expect("in team");
                if team.phase.is_finished() || !team.is_active(session) {
                    return Ok(DisconnectOutcome::NoTeamEffect);
                }
                let team_id = team.team_id;
                self.emit(
                    now,
                    Some(team_id),
                    Some(session.clone()),
                    EventBody::ParticipantDisconnected { reason: DisconnectReason::ConnectionLost },
                )?;
                let active = self.team(team_id)?.active_members.len();
                if active < self.config.min_team_size {
                    self.terminate(team_id, now)?;
                    return Ok(DisconnectOutcome::Terminated);
                }
                self.settle_team(team_id, now, Some(session))?;
                Ok(DisconnectOutcome::Continues { active })
            }
            _ => Ok(DisconnectOutcome::NoTeamEffect),
        }
    }

    // ----- chat -----

    pub fn post_message(&mut self, session: &SessionId, body: &str, now: i64) -> Result<u64, EngineError> {
        let team = self.active_team(session)?;
        let tag = match team.phase {
            Phase::Discuss => MessagePhase::Discuss,
            Phase::Decide => MessagePhase::Decide,
            Phase::Interlude => match self.strategy(team).chat_tag() {
                Some(tag) => tag,
                None => return Err(EngineError::ChatLocked),
            },
            other => return Err(EngineError::PhaseClosed(other)),
        };
        if team.locked {
            return Err(EngineError::ChatLocked);
        }
        let trimmed = body.trim();
        if trimmed.is_empty() {
            return Err(EngineError::Validation("message is empty".into()));
        }
        let len = body.chars().count();
        if len > MAX_MESSAGE_CHARS {
            return Err(EngineError::Validation(format!(
                "message is {len} characters; the limit is {MAX_MESSAGE_CHARS}"
            )));
        }
        let message_id = team.next_message_id();
        let team_id = team.team_id;
        let sender = self.state.pseudonym(session).unwrap_or_default().to_string();
        self.emit(
            now,
            Some(team_id),
            Some(session.clone()),
            EventBody::MessagePosted { message_id, sender, body: body.to_string(), phase: tag },
        )?;
        Ok(message_id)
    }

    /// Posts a system line into the team transcript.
    pub fn system_announce(&mut self, team: TeamId, text: &str, now: i64) -> Result<u64, EngineError> {
        let message_id = self.team(team)?.next_message_id();
        self.emit(now, Some(team), None, EventBody::SystemAnnounced { message_id, text: text.to_string() })?;
        Ok(message_id)
    }

    pub fn lock_chat(&mut self, team: TeamId, now: i64) -> Result<(), EngineError> {
        if self.team(team)?.locked {
            return Ok(());
        }
        self.emit(now, Some(team), None, EventBody::ChatLocked {})
    }

    pub fn unlock_chat(&mut self, team: TeamId, now: i64) -> Result<(), EngineError> {
        if !self.team(team)?.locked {
            return Ok(());
        }
        self.emit(now, Some(team), None, EventBody::ChatUnlocked {})
    }

    // ----- task steps -----

    /// Member is finished with the discuss or decide phase.
    pub fn signal_done(&mut self, session: &SessionId, now: i64) -> Result<(), EngineError> {
        let team = self.active_team(session)?;
        if !matches!(team.phase, Phase::Discuss | Phase::Decide) {
            return Err(EngineError::NotAccepting("done signals"));
        }
        if team.done.contains(session) {
            return Ok(());
        }
        let (team_id, phase) = (team.team_id, team.phase);
        self.emit(now, Some(team_id), Some(session.clone()), EventBody::DoneSignaled { phase, stage: None })?;
        self.settle_team(team_id, now, None)
    }

    pub fn submit_exercise(
        &mut self,
        session: &SessionId,
        stage: ExerciseStage,
        payload: ExercisePayload,
        now: i64,
    ) -> Result<(), EngineError> {
        let team = self.active_team(session)?;
        if team.phase != Phase::Interlude {
            return Err(EngineError::NotAccepting("exercise answers"));
        }
        let (team_id, session) = (team.team_id, session.clone());
        self.with_strategy(team_id, now, |s, cx| s.submit(cx, &session, stage, payload))
    }

    pub fn acknowledge_feedback(&mut self, session: &SessionId, now: i64) -> Result<(), EngineError> {
        let team = self.active_team(session)?;
        if team.phase != Phase::Interlude {
            return Err(EngineError::NotAccepting("acknowledgements"));
        }
        let (team_id, session) = (team.team_id, session.clone());
        self.with_strategy(team_id, now, |s, cx| s.acknowledge(cx, &session))
    }

    pub fn submit_team_ranking(
        &mut self,
        session: &SessionId,
        ranking: Vec<u32>,
        agreed: bool,
        now: i64,
    ) -> Result<(), EngineError> {
        let team = self.active_team(session)?;
        if team.phase != Phase::Discuss {
            return Err(EngineError::NotAccepting("rankings"));
        }
        let team_id = team.team_id;
        let ranking = self.validate_ranking(ranking)?;
        self.emit(now, Some(team_id), Some(session.clone()), EventBody::TeamRankingSubmitted { ranking, agreed })
    }

    pub fn submit_team_allocation(
        &mut self,
        session: &SessionId,
        amounts: Vec<u64>,
        now: i64,
    ) -> Result<(), EngineError> {
        let team = self.active_team(session)?;
        if team.phase != Phase::Decide {
            return Err(EngineError::NotAccepting("allocations"));
        }
        let team_id = team.team_id;
        let allocation = self.validate_allocation(amounts)?;
        self.emit(now, Some(team_id), Some(session.clone()), EventBody::TeamAllocationSubmitted { allocation })
    }

    fn validate_allocation(&self, amounts: Vec<u64>) -> Result<AllocationVector, EngineError> {
        let expected = self.config.proposal_count();
        if amounts.len() != expected {
            return Err(EngineError::Validation(format!(
                "allocation must cover {expected} proposals, got {}",
                amounts.len()
            )));
        }
        Ok(AllocationVector::new(amounts, self.config.budget)?)
    }

    fn validate_survey(&self, response: &ExitSurveyResponse) -> Result<(), EngineError> {
        let items = &self.config.survey_items;
        for item in items {
            let answered = match item.kind {
                ItemKind::Likert => match response.likert.get(&item.id) {
                    Some(&v) if !(1..=5).contains(&v) => {
                        return Err(EngineError::Validation(format!("{}: likert value {v} outside 1-5", item.id)));
                    }
                    Some(_) => true,
                    None => false,
                },
                ItemKind::Binary => response.binary.contains_key(&item.id),
                ItemKind::Open => response.open.get(&item.id).is_some_and(|t| !t.trim().is_empty()),
            };
            if item.required && !answered {
                return Err(EngineError::Validation(format!("missing answer for {}", item.id)));
            }
        }
        let known = |id: &String, kind: ItemKind| items.iter().any(|i| &i.id == id && i.kind == kind);
        if let Some(id) = response.likert.keys().find(|id| !known(id, ItemKind::Likert)) {
            return Err(EngineError::Validation(format!("unknown likert item {id}")));
        }
        if let Some(id) = response.binary.keys().find(|id| !known(id, ItemKind::Binary)) {
            return Err(EngineError::Validation(format!("unknown yes/no item {id}")));
        }
        if let Some(id) = response.open.keys().find(|id| !known(id, ItemKind::Open)) {
            return Err(EngineError::Validation(format!("unknown open item {id}")));
        }
        self.validate_allocation(response.allocation.clone())?;
        Ok(())
    }

    pub fn submit_exit_survey(
        &mut self,
        session: &SessionId,
        response: ExitSurveyResponse,
        now: i64,
    ) -> Result<(), EngineError> {
        let team = self.active_team(session)?;
        if team.phase != Phase::ExitSurvey {
            return Err(EngineError::NotAccepting("exit surveys"));
        }
        if team.surveys.contains_key(session) {
            return Err(EngineError::Duplicate("exit survey"));
        }
        let team_id = team.team_id;
        self.validate_survey(&response)?;
        self.emit(now, Some(team_id), Some(session.clone()), EventBody::ExitSurveySubmitted { response })?;
        self.settle_team(team_id, now, None)
    }

    /// Dispatches a WebSocket frame from `session`. Rejections come back as the error;
    /// the caller turns them into an `error` frame for the sender only.
    pub fn handle_client_frame(
        &mut self,
        session: &SessionId,
        frame: ClientFrame,
        now: i64,
    ) -> Result<(), EngineError> {
        let request = frame.type_name();
        let acknowledged = !matches!(frame, ClientFrame::PostMessage { .. });
        match frame {
            ClientFrame::PostMessage { body } => self.post_message(session, &body, now).map(|_| ())?,
            ClientFrame::DoneSignal {} => self.signal_done(session, now)?,
            ClientFrame::ExerciseSubmit { stage, payload } => self.submit_exercise(session, stage, payload, now)?,
            ClientFrame::Ack {} => self.acknowledge_feedback(session, now)?,
            ClientFrame::TeamRanking { ranking, agreed } => self.submit_team_ranking(session, ranking, agreed, now)?,
            ClientFrame::TeamAllocation { amounts } => self.submit_team_allocation(session, amounts, now)?,
            ClientFrame::ExitSurvey { response } => self.submit_exit_survey(session, response, now)?,
        }
        if acknowledged {
            self.push_frame(session, ServerFrame::Accepted { request: request.to_string() });
        }
        Ok(())
    }

    // ----- views -----

    fn names(&self, sessions: &[SessionId]) -> Vec<String> {
        sessions.iter().map(|s| self.state.pseudonym(s).unwrap_or_default().to_string()).collect()
    }

    fn remaining(deadline: Option<i64>, now: i64) -> Option<f64> {
        deadline.map(|d| ((d - now).max(0) as f64) / 1000.0)
    }

    fn progress_frame(&self, team: &Team) -> ServerFrame {
        let stage = team.exercise.as_ref().filter(|_| team.phase == Phase::Interlude).map(|e| e.stage);
        let completed: Vec<SessionId> = team
            .active_members
            .iter()
            .filter(|m| match (team.phase, stage, team.exercise.as_ref()) {
                (Phase::Interlude, Some(ExerciseStage::SelfReport), Some(ex)) => ex.self_reports.contains_key(*m),
                (Phase::Interlude, Some(ExerciseStage::Guessing), Some(ex)) => ex.guess_sets.contains_key(*m),
                (Phase::ExitSurvey, _, _) => team.surveys.contains_key(*m),
                _ => team.done.contains(*m),
            })
            .cloned()
            .collect();
        ServerFrame::Progress {
            phase: team.phase,
            stage,
            completed: self.names(&completed),
            active: self.names(&team.active_members),
        }
    }

    fn broadcast(&mut self, team: TeamId, frame: ServerFrame) {
        let recipients = self.state.team(team).map(|t| t.active_members.clone()).unwrap_or_default();
        for to in recipients {
            self.push_frame(&to, frame.clone());
        }
    }

    fn frames_for(&mut self, event: &Event, now: i64) {
        let team_id = event.team_id;
        let session = event.session_id.clone();
        let sent_at = iso8601(&event.wall_time);
        match &event.body {
            EventBody::ParticipantJoined {} => {}
            EventBody::PseudonymSet { .. } | EventBody::LobbySurveySubmitted { .. } => {
                let s = session.expect("validated");
                if let Ok(snap) = self.snapshot(&s, now) {
                    self.push_frame(&s, ServerFrame::StateSnapshot(Box::new(snap)));
                }
            }
            EventBody::TeamFormed { members, .. } => {
                for m in members.clone() {
                    if let Ok(snap) = self.snapshot(&m, now) {
                        self.push_frame(&m, ServerFrame::StateSnapshot(Box::new(snap)));
                    }
                }
            }
            EventBody::PhaseStarted { phase, stage, deadline } => {
                let tid = team_id.expect("validated");
                let team = self.state.team(tid).expect("applied").clone();
                self.broadcast(
                    tid,
                    ServerFrame::PhaseChange {
                        phase: *phase,
                        stage: *stage,
                        deadline: *deadline,
                        remaining_seconds: Self::remaining(*deadline, now),
                        active: self.names(&team.active_members),
                    },
                );
                match stage {
                    Some(ExerciseStage::SelfReport) => self.broadcast(
                        tid,
                        ServerFrame::ExercisePrompt {
                            stage: ExerciseStage::SelfReport,
                            roster: None,
                            deadline: *deadline,
                        },
                    ),
                    Some(ExerciseStage::Guessing) => {
                        let ex = team.exercise.as_ref().expect("applied");
                        for m in &team.active_members {
                            let roster = self.names(ex.rosters.get(m).map(Vec::as_slice).unwrap_or_default());
                            self.push_frame(
                                m,
                                ServerFrame::ExercisePrompt {
                                    stage: ExerciseStage::Guessing,
                                    roster: Some(roster),
                                    deadline: *deadline,
                                },
                            );
                        }
                    }
                    _ => {}
                }
            }
            EventBody::MessagePosted { message_id, sender, body, phase } => {
                self.broadcast(
                    team_id.expect("validated"),
                    ServerFrame::Message {
                        message_id: *message_id,
                        sender: sender.clone(),
                        body: body.clone(),
                        phase: *phase,
                        sent_at,
                    },
                );
            }
            EventBody::SystemAnnounced { message_id, text } => {
                self.broadcast(
                    team_id.expect("validated"),
                    ServerFrame::System { message_id: *message_id, text: text.clone(), sent_at },
                );
            }
            EventBody::ChatLocked {} => self.broadcast(
                team_id.expect("validated"),
                ServerFrame::LockState { locked: true, reason: LockReason::Intervention },
            ),
            EventBody::ChatUnlocked {} => self.broadcast(
                team_id.expect("validated"),
                ServerFrame::LockState { locked: false, reason: LockReason::None },
            ),
            EventBody::SelfReportSubmitted { .. }
            | EventBody::GuessesSubmitted { .. }
            | EventBody::DoneSignaled { .. }
            | EventBody::ExitSurveySubmitted { .. } => {
                let tid = team_id.expect("validated");
                let frame = self.progress_frame(self.state.team(tid).expect("applied"));
                self.broadcast(tid, frame);
            }
            EventBody::FeedbackComputed { climate, accuracies, participants, deadline } => {
                let climate = climate.map(|c| (c * 10.0).round() / 10.0);
                let tid = team_id.expect("validated");
                self.broadcast(
                    tid,
                    ServerFrame::PhaseChange {
                        phase: Phase::Interlude,
                        stage: Some(ExerciseStage::Feedback),
                        deadline: Some(*deadline),
                        remaining_seconds: Self::remaining(Some(*deadline), now),
                        active: self.names(participants),
                    },
                );
                for p in participants {
                    let own = accuracies.get(p).copied().flatten();
                    self.push_frame(
                        p,
                        ServerFrame::ExerciseFeedback {
                            climate,
                            own_accuracy_percent: own.map(|a| a.percent()),
                            evaluated_targets: own.map_or(0, |a| a.evaluated_targets),
                        },
                    );
                }
            }
            EventBody::TeamRankingSubmitted { ranking, agreed } => {
                let by = self.state.pseudonym(session.as_ref().expect("validated")).unwrap_or_default().to_string();
                self.broadcast(
                    team_id.expect("validated"),
                    ServerFrame::TeamSubmission {
                        what: SubmissionKind::Ranking,
                        by,
                        ranking: Some(ranking.ranks().to_vec()),
                        agreed: Some(*agreed),
                        amounts: None,
                    },
                );
            }
            EventBody::TeamAllocationSubmitted { allocation } => {
                let by = self.state.pseudonym(session.as_ref().expect("validated")).unwrap_or_default().to_string();
                self.broadcast(
                    team_id.expect("validated"),
                    ServerFrame::TeamSubmission {
                        what: SubmissionKind::Allocation,
                        by,
                        ranking: None,
                        agreed: None,
                        amounts: Some(allocation.amounts().to_vec()),
                    },
                );
            }
            EventBody::ParticipantDisconnected { reason } => {
                if let Some(tid) = team_id {
                    let active = self.names(&self.state.team(tid).expect("applied").active_members);
                    self.broadcast(tid, ServerFrame::Presence { active });
                } else if *reason == DisconnectReason::LobbyTimeout {
                    // Tell the released participant; their status now reads "released".
                    let s = session.expect("validated");
                    if let Ok(snap) = self.snapshot(&s, now) {
                        self.push_frame(&s, ServerFrame::StateSnapshot(Box::new(snap)));
                    }
                }
            }
            EventBody::ParticipantReconnected {} => {
                let s = session.expect("validated");
                if let Some(tid) = self.state.participant(&s).and_then(|p| p.team_id) {
                    let active = self.names(&self.state.team(tid).expect("applied").active_members);
                    self.broadcast(tid, ServerFrame::Presence { active });
                }
            }
            EventBody::TeamTerminated { reason, .. } => {
                self.broadcast(team_id.expect("validated"), ServerFrame::TeamTerminated { reason: reason.clone() });
            }
            EventBody::TeamCompleted {} => {
                let tid = team_id.expect("validated");
                let active = self.names(&self.state.team(tid).expect("applied").active_members);
                self.broadcast(
                    tid,
                    ServerFrame::PhaseChange {
                        phase: Phase::Complete,
                        stage: None,
                        deadline: None,
                        remaining_seconds: None,
                        active,
                    },
                );
            }
        }
    }

    /// Everything `session` is allowed to see, for resync.
    pub fn snapshot(&self, session: &SessionId, now: i64) -> Result<Snapshot, EngineError> {
        let p = self.state.participant(session).ok_or(EngineError::UnknownSession)?;
        let status = match p.status {
            ParticipantStatus::Lobby => "lobby",
            ParticipantStatus::Queued => "queued",
            ParticipantStatus::InTeam => "in_team",
            ParticipantStatus::Released => "released",
        };
        let team = self.state.team_of(session).map(|team| {
            let exercise = team.exercise.as_ref().map(|ex| {
                let own = ex.feedback.as_ref().filter(|f| f.participants.contains(session)).map(|f| {
                    let acc = f.accuracies.get(session).copied().flatten();
                    OwnFeedback {
                        climate: f.climate.map(|c| (c * 10.0).round() / 10.0),
                        own_accuracy_percent: acc.map(|a| a.percent()),
                        evaluated_targets: acc.map_or(0, |a| a.evaluated_targets),
                    }
                });
                ExerciseView {
                    stage: ex.stage,
                    deadline: ex.stage_deadline,
                    roster: ex.rosters.get(session).map(|r| self.names(r)),
                    self_report_submitted: ex.self_reports.contains_key(session),
                    guesses_submitted: ex.guess_sets.contains_key(session),
                    feedback: own,
                }
            });
            TeamView {
                team_id: team.team_id.0,
                phase: team.phase,
                deadline: team.deadline,
                remaining_seconds: Self::remaining(team.deadline, now),
                locked: team.locked,
                members: self.names(&team.members),
                active: self.names(&team.active_members),
                transcript: team
                    .transcript
                    .iter()
                    .map(|e| TranscriptView {
                        message_id: e.message_id,
                        sender: e.sender.clone(),
                        body: e.body.clone(),
                        system: e.is_system(),
                        sent_at: iso8601(&e.sent_at),
                    })
                    .collect(),
                team_ranking: team.team_ranking.as_ref().map(|r| r.ranking.ranks().to_vec()),
                team_ranking_agreed: team.team_ranking.as_ref().map(|r| r.agreed),
                team_allocation: team.allocation.as_ref().map(|a| a.allocation.amounts().to_vec()),
                done: team.done.contains(session),
                survey_submitted: team.surveys.contains_key(session),
                exercise,
                termination_reason: team.terminated_reason.clone(),
            }
        });
        Ok(Snapshot {
            version: self.state.last_seq,
            pseudonym: p.pseudonym.clone(),
            status: status.to_string(),
            lobby_position: self.state.lobby_position(session),
            proposals: self.config.proposals.clone(),
            budget: self.config.budget,
            survey_items: self.config.survey_items.clone(),
            team,
        })
    }

    pub fn status(&self, run_id: &str, log_path: &str) -> RunStatus {
        RunStatus {
            run_id: run_id.to_string(),
            log_path: log_path.to_string(),
            last_seq: self.state.last_seq,
            lobby: self.state.lobby.len(),
            participants: self.state.participants.len(),
            teams: self
                .state
                .teams
                .values()
                .map(|t| TeamStatus {
                    team_id: t.team_id.0,
                    condition: t.condition,
                    phase: t.phase,
                    members: t.members.len(),
                    active: t.active_members.len(),
                })
                .collect(),
        }
    }
}
