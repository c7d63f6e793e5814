//! Offline measures over a run log.
//!
//! Each measure implements [`Measure`] and is looked up by name in a
//! [`MeasureRegistry`]. Only teams that reached `complete` are measured;
//! every other team is listed as excluded.

mod measures;

use std::collections::BTreeMap;
use std::fmt::Write as _;
use std::path::{Path, PathBuf};
use std::sync::Arc;

use thiserror::Error;

use crate::config::SurveyItem;
use crate::event::Event;
use crate::model::{Condition, Phase, TeamId};
use crate::persistence::{replay, LogError};
use crate::sociometrics::{describe, DictionaryError, LiwcDictionary, SociometricsError};
use crate::state::{RunState, Team};

pub use measures::{
    AccuracyMeasure, ClimateMeasure, CompromiseMeasure, DisagreementMeasure, LiwcMeasure, ReportMeasure, ScalesMeasure,
};

#[derive(Debug, Error)]
pub enum AnalysisError {
    #[error(transparent)]
    Log(#[from] LogError),
    #[error("dictionary {path}: {source}")]
    Dictionary { path: String, source: DictionaryError },
    #[error("no analyzable teams")]
    NoAnalyzableTeams,
    #[error("unknown measure {name:?}; available: {available}")]
    UnknownMeasure { name: String, available: String },
    #[error("team {team}: recomputed {what} {recomputed} differs from logged {logged}")]
    Consistency { team: TeamId, what: String, recomputed: String, logged: String },
    #[error("team {team}: {source}")]
    Measure { team: TeamId, source: SociometricsError },
    #[error("writing {path}: {message}")]
    Output { path: String, message: String },
}

impl AnalysisError {
    /// 2 for invalid input, 3 for a failed consistency check.
    pub fn exit_code(&self) -> i32 {
        match self {
            AnalysisError::Consistency { .. } => 3,
            _ => 2,
        }
    }
}

#[derive(Debug, Clone, Default)]
pub struct AnalysisOptions {
    pub by_phase: bool,
    pub shift: bool,
}

/// A CSV table held in memory; formatting is deterministic.
#[derive(Debug, Clone, PartialEq)]
pub struct Table {
    pub name: String,
    pub header: Vec<String>,
    pub rows: Vec<Vec<String>>,
}

impl Table {
    pub fn new(name: &str, header: &[&str]) -> Self {
        Self { name: name.to_string(), header: header.iter().map(|h| h.to_string()).collect(), rows: Vec::new() }
    }

    pub fn push(&mut self, row: Vec<String>) {
        debug_assert_eq!(row.len(), self.header.len(), "{}", self.name);
        self.rows.push(row);
    }

    pub fn file_name(&self) -> String {
        format!("{}.csv", self.name)
    }

    pub fn column(&self, name: &str) -> Option<usize> {
        self.header.iter().position(|h| h == name)
    }

    pub fn to_csv(&self) -> String {
        let mut w = csv::Writer::from_writer(Vec::new());
        w.write_record(&self.header).expect("in-memory write");
        for row in &self.rows {
            w.write_record(row).expect("in-memory write");
        }
        String::from_utf8(w.into_inner().expect("in-memory flush")).expect("utf-8")
    }
}

/// Output of one measure.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct AnalysisOutput {
    pub tables: Vec<Table>,
}

impl AnalysisOutput {
    pub fn table(&self, name: &str) -> Option<&Table> {
        self.tables.iter().find(|t| t.name == name)
    }

    pub fn write_to(&self, dir: &Path) -> Result<Vec<PathBuf>, AnalysisError> {
        let out_err = |path: &Path, e: std::io::Error| AnalysisError::Output {
            path: path.display().to_string(),
            message: e.to_string(),
        };
        std::fs::create_dir_all(dir).map_err(|e| out_err(dir, e))?;
        let mut written = Vec::new();
        for t in &self.tables {
            let path = dir.join(t.file_name());
            std::fs::write(&path, t.to_csv()).map_err(|e| out_err(&path, e))?;
            written.push(path);
        }
        Ok(written)
    }

    /// Human-readable summary of the tables, one line each.
    pub fn summary(&self) -> String {
        let mut s = String::new();
        for t in &self.tables {
            let _ = writeln!(s, "{}: {} rows", t.file_name(), t.rows.len());
        }
        s
    }
}

/// A replayed run ready for measurement.
pub struct AnalysisContext {
    pub state: RunState,
    pub survey_items: Vec<SurveyItem>,
    pub dictionary: LiwcDictionary,
    pub options: AnalysisOptions,
}

impl AnalysisContext {
    pub fn new(
        events: &[Event],
        survey_items: Vec<SurveyItem>,
        dictionary: LiwcDictionary,
        options: AnalysisOptions,
    ) -> Result<Self, AnalysisError> {
        let state = replay(events)?;
        let cx = Self { state, survey_items, dictionary, options };
        if cx.analyzable().next().is_none() {
            return Err(AnalysisError::NoAnalyzableTeams);
        }
        Ok(cx)
    }

    /// Completed teams in team id order.
    pub fn analyzable(&self) -> impl Iterator<Item = &Team> {
        self.state.teams.values().filter(|t| t.phase == Phase::Complete)
    }

    pub fn excluded(&self) -> impl Iterator<Item = &Team> {
        self.state.teams.values().filter(|t| t.phase != Phase::Complete)
    }

    /// Every team, with whether it was measured.
    pub fn roster(&self) -> Table {
        let mut t = Table::new("teams_roster", &["team_id", "condition", "final_phase", "analyzed", "reason"]);
        for team in self.state.teams.values() {
            let analyzed = team.phase == Phase::Complete;
            t.push(vec![
                team.team_id.to_string(),
                team.condition.to_string(),
                team.phase.to_string(),
                analyzed.to_string(),
                team.terminated_reason.clone().unwrap_or_else(|| {
                    if analyzed {
                        String::new()
                    } else {
                        "not complete".to_string()
                    }
                }),
            ]);
        }
        t
    }
}

pub(crate) fn fmt_f64(v: f64) -> String {
    format!("{v}")
}

pub(crate) fn fmt_opt(v: Option<f64>) -> String {
    v.map(fmt_f64).unwrap_or_default()
}

/// Per-condition mean, sample SD and n of `values`.
pub(crate) fn descriptives_table(name: &str, values: &BTreeMap<Condition, Vec<f64>>, measure: &str) -> Table {
    let mut t = Table::new(name, &["measure", "condition", "mean", "sd", "n"]);
    for (condition, vs) in values {
        let d = describe(vs);
        t.push(vec![measure.to_string(), condition.to_string(), fmt_opt(d.mean), fmt_opt(d.sd), d.n.to_string()]);
    }
    t
}

pub trait Measure: Send + Sync {
    fn name(&self) -> &'static str;
    fn run(&self, cx: &AnalysisContext) -> Result<AnalysisOutput, AnalysisError>;
}

#[derive(Clone, Default)]
pub struct MeasureRegistry {
    measures: BTreeMap<String, Arc<dyn Measure>>,
}

impl MeasureRegistry {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn standard() -> Self {
        let mut r = Self::new();
        r.register(DisagreementMeasure);
        r.register(ClimateMeasure);
        r.register(AccuracyMeasure);
        r.register(CompromiseMeasure);
        r.register(ScalesMeasure);
        r.register(LiwcMeasure);
        r.register(ReportMeasure);
        r
    }

    pub fn register<M: Measure + 'static>(&mut self, m: M) {
        self.measures.insert(m.name().to_string(), Arc::new(m));
    }

    pub fn names(&self) -> impl Iterator<Item = &str> {
        self.measures.keys().map(String::as_str)
    }

    pub fn get(&self, name: &str) -> Result<Arc<dyn Measure>, AnalysisError> {
        self.measures.get(name).cloned().ok_or_else(|| AnalysisError::UnknownMeasure {
            name: name.to_string(),
            available: self.names().collect::<Vec<_>>().join(", "),
        })
    }

    pub fn run(&self, name: &str, cx: &AnalysisContext) -> Result<AnalysisOutput, AnalysisError> {
        self.get(name)?.run(cx)
    }
}

impl std::fmt::Debug for MeasureRegistry {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.debug_list().entries(self.measures.keys()).finish()
    }
}
