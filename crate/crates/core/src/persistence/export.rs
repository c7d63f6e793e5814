use std::fmt;
use std::io::Write;
use std::path::Path;
use std::str::FromStr;

use thiserror::Error;

use crate::engine::iso8601;
use crate::event::Event;
use crate::model::SessionId;
use crate::state::{ParticipantStatus, RunState};

use super::{replay, LogError};

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord)]
pub enum Table {
    Participants,
    Teams,
    Messages,
    Rankings,
    Allocations,
    Exercise,
    Surveys,
}

impl Table {
    pub const ALL: [Table; 7] = [
        Table::Participants,
        Table::Teams,
        Table::Messages,
        Table::Rankings,
        Table::Allocations,
        Table::Exercise,
        Table::Surveys,
    ];

    pub fn name(self) -> &'static str {
        match self {
            Table::Participants => "participants",
            Table::Teams => "teams",
            Table::Messages => "messages",
            Table::Rankings => "rankings",
            Table::Allocations => "allocations",
            Table::Exercise => "exercise",
            Table::Surveys => "surveys",
        }
    }

    pub fn file_name(self) -> String {
        format!("{}.csv", self.name())
    }

    fn header(self) -> &'static [&'static str] {
        match self {
            Table::Participants => &[
                "session_id",
                "pseudonym",
                "team_id",
                "condition",
                "status",
                "joined_at",
                "lobby_ranking",
                "demographics",
            ],
            Table::Teams => &[
                "team_id",
                "condition",
                "formed_at",
                "final_phase",
                "members",
                "active_at_end",
                "team_ranking",
                "ranking_agreed",
                "team_allocation",
                "termination_reason",
            ],
            Table::Messages => &["team_id", "message_id", "phase", "sender", "sent_at", "body"],
            Table::Rankings => &["team_id", "source", "session_id", "proposal_id", "rank", "agreed"],
            Table::Allocations => &["team_id", "source", "session_id", "proposal_id", "amount", "budget"],
            Table::Exercise => &[
                "team_id",
                "session_id",
                "pseudonym",
                "self_report",
                "guesses",
                "accuracy",
                "accuracy_percent",
                "evaluated_targets",
            ],
            Table::Surveys => &["team_id", "session_id", "item_id", "kind", "value"],
        }
    }
}

impl fmt::Display for Table {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Error)]
#[error(
    "unknown table {name:?}; valid tables are participants, teams, messages, rankings, allocations, exercise, surveys"
)]
pub struct UnknownTable {
    pub name: String,
}

impl FromStr for Table {
    type Err = UnknownTable;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        let s = s.trim_end_matches(".csv");
        Table::ALL.into_iter().find(|t| t.name() == s).ok_or_else(|| UnknownTable { name: s.to_string() })
    }
}

fn joined<T: ToString>(values: &[T]) -> String {
    values.iter().map(T::to_string).collect::<Vec<_>>().join(" ")
}

fn opt<T: ToString>(v: Option<T>) -> String {
    v.map(|v| v.to_string()).unwrap_or_default()
}

fn rows(state: &RunState, table: Table) -> Vec<Vec<String>> {
    let name = |s: &SessionId| state.pseudonym(s).unwrap_or_default().to_string();
    let mut out = Vec::new();
    match table {
        Table::Participants => {
            for p in state.participants.values() {
                let team = p.team_id.and_then(|t| state.team(t));
                let status = match p.status {
                    ParticipantStatus::Lobby => "lobby",
                    ParticipantStatus::Queued => "queued",
                    ParticipantStatus::InTeam => "in_team",
                    ParticipantStatus::Released => "released",
                };
                out.push(vec![
                    p.session_id.to_string(),
                    p.pseudonym.clone().unwrap_or_default(),
                    opt(p.team_id),
                    opt(team.map(|t| t.condition)),
                    status.to_string(),
                    iso8601(&p.joined_at),
                    p.lobby_ranking.as_ref().map(|r| joined(r.ranks())).unwrap_or_default(),
                    serde_json::to_string(&p.demographics).expect("strings serialize"),
                ]);
            }
        }
        Table::Teams => {
            for t in state.teams.values() {
                out.push(vec![
                    t.team_id.to_string(),
                    t.condition.to_string(),
                    iso8601(&t.formed_at),
                    t.phase.to_string(),
                    joined(&t.members),
                    joined(&t.active_members),
                    t.team_ranking.as_ref().map(|r| joined(r.ranking.ranks())).unwrap_or_default(),
                    t.team_ranking.as_ref().is_some_and(|r| r.agreed).to_string(),
                    t.allocation.as_ref().map(|a| joined(a.allocation.amounts())).unwrap_or_default(),
                    t.terminated_reason.clone().unwrap_or_default(),
                ]);
            }
        }
        Table::Messages => {
            for t in state.teams.values() {
                for m in t.transcript.iter().filter(|m| !m.is_system()) {
                    out.push(vec![
                        t.team_id.to_string(),
                        m.message_id.to_string(),
                        opt(m.phase),
                        m.sender.clone(),
                        iso8601(&m.sent_at),
                        m.body.clone(),
                    ]);
                }
            }
        }
        Table::Rankings => {
            for t in state.teams.values() {
                for m in &t.members {
                    if let Some(r) = state.participant(m).and_then(|p| p.lobby_ranking.as_ref()) {
                        for (i, rank) in r.ranks().iter().enumerate() {
                            out.push(vec![
                                t.team_id.to_string(),
                                "lobby".into(),
                                m.to_string(),
                                (i + 1).to_string(),
                                rank.to_string(),
                                String::new(),
                            ]);
                        }
                    }
                }
                if let Some(r) = &t.team_ranking {
                    for (i, rank) in r.ranking.ranks().iter().enumerate() {
                        out.push(vec![
                            t.team_id.to_string(),
                            "team".into(),
                            r.submitter.to_string(),
                            (i + 1).to_string(),
                            rank.to_string(),
                            r.agreed.to_string(),
                        ]);
                    }
                }
            }
        }
        Table::Allocations => {
            for t in state.teams.values() {
                let budget = t.allocation.as_ref().map(|a| a.allocation.budget());
                if let Some(a) = &t.allocation {
                    for (i, amount) in a.allocation.amounts().iter().enumerate() {
                        out.push(vec![
                            t.team_id.to_string(),
                            "team".into(),
                            a.submitter.to_string(),
                            (i + 1).to_string(),
                            amount.to_string(),
                            a.allocation.budget().to_string(),
                        ]);
                    }
                }
                for (who, survey) in &t.surveys {
                    for (i, amount) in survey.allocation.iter().enumerate() {
                        out.push(vec![
                            t.team_id.to_string(),
                            "individual".into(),
                            who.to_string(),
                            (i + 1).to_string(),
                            amount.to_string(),
                            opt(budget.or(Some(survey.allocation.iter().sum()))),
                        ]);
                    }
                }
            }
        }
        Table::Exercise => {
            for t in state.teams.values() {
                let Some(ex) = &t.exercise else { continue };
                for m in &t.members {
                    let guesses = ex
                        .guess_sets
                        .get(m)
                        .map(|g| {
                            g.iter().map(|(k, v)| format!("{}={}", name(k), v.value())).collect::<Vec<_>>().join(";")
                        })
                        .unwrap_or_default();
                    let acc = ex.feedback.as_ref().and_then(|f| f.accuracies.get(m).copied().flatten());
                    out.push(vec![
                        t.team_id.to_string(),
                        m.to_string(),
                        name(m),
                        opt(ex.self_reports.get(m).map(|s| s.value())),
                        guesses,
                        opt(acc.map(|a| a.accuracy)),
                        opt(acc.map(|a| a.percent())),
                        opt(acc.map(|a| a.evaluated_targets)),
                    ]);
                }
            }
        }
        Table::Surveys => {
            for t in state.teams.values() {
                for (who, s) in &t.surveys {
                    let row = |item: &str, kind: &str, value: String| {
                        vec![t.team_id.to_string(), who.to_string(), item.to_string(), kind.to_string(), value]
                    };
                    out.extend(s.likert.iter().map(|(k, v)| row(k, "likert", v.to_string())));
                    out.extend(s.binary.iter().map(|(k, v)| row(k, "binary", v.to_string())));
                    out.extend(s.open.iter().map(|(k, v)| row(k, "open", v.clone())));
                }
            }
        }
    }
    out
}

/// Writes one table as CSV.
pub fn export_table<W: Write>(state: &RunState, table: Table, out: W) -> Result<(), csv::Error> {
    let mut w = csv::Writer::from_writer(out);
    w.write_record(table.header())?;
    for row in rows(state, table) {
        w.write_record(&row)?;
    }
    w.flush()?;
    Ok(())
}

#[derive(Debug, Error)]
pub enum ExportError {
    #[error(transparent)]
    Log(#[from] LogError),
    #[error("writing {path}: {source}")]
    Write { path: String, source: csv::Error },
    #[error("creating {path}: {source}")]
    Io { path: String, source: std::io::Error },
}

/// Replays `events` and writes the requested tables into `dir`.
pub fn export_tidy(events: &[Event], dir: &Path, tables: &[Table]) -> Result<Vec<std::path::PathBuf>, ExportError> {
    let state = replay(events)?;
    std::fs::create_dir_all(dir).map_err(|source| ExportError::Io { path: dir.display().to_string(), source })?;
    let mut written = Vec::new();
    for table in tables {
        let path = dir.join(table.file_name());
        let file = std::fs::File::create(&path)
            .map_err(|source| ExportError::Io { path: path.display().to_string(), source })?;
        export_table(&state, *table, file)
            .map_err(|source| ExportError::Write { path: path.display().to_string(), source })?;
        written.push(path);
    }
    Ok(written)
}
