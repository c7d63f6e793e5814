use std::collections::{BTreeMap, BTreeSet};

use crate::config::ItemKind;
use crate::model::{Condition, MessagePhase, SessionId};
use crate::sociometrics::{
    compromise, cronbach_alpha, group_climate, liwc_profile, liwc_shift, perception_accuracy, score_scale,
    team_disagreement, AccuracyResult, AllocationVector, EmotionScore, GuessSet, LikertResponse, LiwcProfile,
    SociometricsError,
};
use crate::state::Team;

use super::{descriptives_table, fmt_f64, fmt_opt, AnalysisContext, AnalysisError, AnalysisOutput, Measure, Table};

const LIKERT_POINTS: u8 = 5;

fn measure_err(team: &Team) -> impl Fn(SociometricsError) -> AnalysisError + '_ {
    move |source| AnalysisError::Measure { team: team.team_id, source }
}

/// Mean pairwise footrule distance over the lobby rankings of the members at formation.
fn baseline_disagreement(cx: &AnalysisContext, team: &Team) -> Option<f64> {
    let rankings: Vec<_> =
        team.members.iter().filter_map(|m| cx.state.participant(m)?.lobby_ranking.as_ref()).collect();
    team_disagreement(rankings).ok()
}

fn individual_allocations(team: &Team) -> Result<Vec<(SessionId, AllocationVector)>, AnalysisError> {
    let Some(team_alloc) = &team.allocation else { return Ok(Vec::new()) };
    let budget = team_alloc.allocation.budget();
    team.surveys
        .iter()
        .map(|(who, s)| {
            AllocationVector::new(s.allocation.clone(), budget).map(|a| (who.clone(), a)).map_err(measure_err(team))
        })
        .collect()
}

fn team_compromise(team: &Team) -> Result<Option<f64>, AnalysisError> {
    let Some(team_alloc) = &team.allocation else { return Ok(None) };
    let members: Vec<AllocationVector> = individual_allocations(team)?.into_iter().map(|(_, a)| a).collect();
    if members.is_empty() {
        return Ok(None);
    }
    compromise(&members, &team_alloc.allocation).map(Some).map_err(measure_err(team))
}

/// Recomputed exercise feedback, checked against the logged values.
struct ExerciseCheck {
    climate: Option<f64>,
    accuracies: BTreeMap<SessionId, Option<AccuracyResult>>,
    reports: usize,
}

fn check_exercise(team: &Team) -> Result<Option<ExerciseCheck>, AnalysisError> {
    let Some(ex) = &team.exercise else { return Ok(None) };
    let Some(logged) = &ex.feedback else { return Ok(None) };
    let present: BTreeSet<&SessionId> = logged.participants.iter().collect();
    let actuals: BTreeMap<SessionId, EmotionScore> =
        ex.self_reports.iter().filter(|(k, _)| present.contains(k)).map(|(k, v)| (k.clone(), *v)).collect();
    let reports: Vec<EmotionScore> = actuals.values().copied().collect();
    let climate = group_climate(&reports).ok();
    let accuracies: BTreeMap<SessionId, Option<AccuracyResult>> = ex
        .guess_sets
        .iter()
        .filter(|(k, _)| present.contains(k))
        .map(|(guesser, g)| {
            (guesser.clone(), perception_accuracy(&GuessSet::new(guesser.clone(), g.clone()), &actuals))
        })
        .collect();
    let mismatch = |what: &str, recomputed: String, logged: String| AnalysisError::Consistency {
        team: team.team_id,
        what: what.to_string(),
        recomputed,
        logged,
    };
    if climate != logged.climate {
        return Err(mismatch("climate", format!("{climate:?}"), format!("{:?}", logged.climate)));
    }
    if accuracies != logged.accuracies {
        let keys: BTreeSet<&SessionId> = accuracies.keys().chain(logged.accuracies.keys()).collect();
        for k in keys {
            let (a, b) = (accuracies.get(k), logged.accuracies.get(k));
            if a != b {
                return Err(mismatch(&format!("accuracy of {k}"), format!("{a:?}"), format!("{b:?}")));
            }
        }
    }
    Ok(Some(ExerciseCheck { climate, accuracies, reports: reports.len() }))
}

fn by_condition(rows: impl IntoIterator<Item = (Condition, Option<f64>)>) -> BTreeMap<Condition, Vec<f64>> {
    let mut out: BTreeMap<Condition, Vec<f64>> = BTreeMap::new();
    for (c, v) in rows {
        let entry = out.entry(c).or_default();
        if let Some(v) = v {
            entry.push(v);
        }
    }
    out
}

fn scale_items(cx: &AnalysisContext) -> BTreeMap<String, Vec<(String, bool)>> {
    let mut out: BTreeMap<String, Vec<(String, bool)>> = BTreeMap::new();
    for item in &cx.survey_items {
        if let (ItemKind::Likert, Some(scale)) = (item.kind, &item.scale) {
            out.entry(scale.clone()).or_default().push((item.id.clone(), item.reverse));
        }
    }
    out
}

fn binary_items(cx: &AnalysisContext) -> Vec<String> {
    cx.survey_items.iter().filter(|i| i.kind == ItemKind::Binary).map(|i| i.id.clone()).collect()
}

fn participant_scales(
    team: &Team,
    who: &SessionId,
    scales: &BTreeMap<String, Vec<(String, bool)>>,
) -> Result<BTreeMap<String, Option<f64>>, AnalysisError> {
    let mut out = BTreeMap::new();
    let Some(survey) = team.surveys.get(who) else {
        return Ok(scales.keys().map(|k| (k.clone(), None)).collect());
    };
    for (scale, items) in scales {
        let responses: Vec<LikertResponse> = items
            .iter()
            .filter_map(|(id, _)| survey.likert.get(id).map(|v| LikertResponse::new(id.clone(), *v)))
            .collect();
        let reverse: BTreeSet<String> =
            items.iter().filter(|(id, rev)| *rev && survey.likert.contains_key(id)).map(|(id, _)| id.clone()).collect();
        let score = if responses.is_empty() {
            None
        } else {
            Some(score_scale(&responses, &reverse, LIKERT_POINTS).map_err(measure_err(team))?)
        };
        out.insert(scale.clone(), score);
    }
    Ok(out)
}

pub struct DisagreementMeasure;

impl Measure for DisagreementMeasure {
    fn name(&self) -> &'static str {
        "disagreement"
    }

    fn run(&self, cx: &AnalysisContext) -> Result<AnalysisOutput, AnalysisError> {
        let mut t = Table::new("disagreement", &["team_id", "condition", "rankings", "baseline_disagreement"]);
        let mut values = Vec::new();
        for team in cx.analyzable() {
            let n = team
                .members
                .iter()
                .filter(|m| cx.state.participant(m).is_some_and(|p| p.lobby_ranking.is_some()))
                .count();
            let d = baseline_disagreement(cx, team);
            values.push((team.condition, d));
            t.push(vec![team.team_id.to_string(), team.condition.to_string(), n.to_string(), fmt_opt(d)]);
        }
        let desc = descriptives_table("disagreement_by_condition", &by_condition(values), "baseline_disagreement");
        Ok(AnalysisOutput { tables: vec![t, desc, cx.roster()] })
    }
}

pub struct ClimateMeasure;

impl Measure for ClimateMeasure {
    fn name(&self) -> &'static str {
        "climate"
    }

    fn run(&self, cx: &AnalysisContext) -> Result<AnalysisOutput, AnalysisError> {
        let mut t = Table::new("climate", &["team_id", "condition", "self_reports", "climate"]);
        let mut values = Vec::new();
        for team in cx.analyzable() {
            let Some(check) = check_exercise(team)? else { continue };
            values.push((team.condition, check.climate));
            t.push(vec![
                team.team_id.to_string(),
                team.condition.to_string(),
                check.reports.to_string(),
                fmt_opt(check.climate),
            ]);
        }
        let desc = descriptives_table("climate_by_condition", &by_condition(values), "climate");
        Ok(AnalysisOutput { tables: vec![t, desc, cx.roster()] })
    }
}

pub struct AccuracyMeasure;

impl Measure for AccuracyMeasure {
    fn name(&self) -> &'static str {
        "accuracy"
    }

    fn run(&self, cx: &AnalysisContext) -> Result<AnalysisOutput, AnalysisError> {
        let mut t = Table::new(
            "accuracy",
            &["team_id", "condition", "session_id", "pseudonym", "accuracy", "accuracy_percent", "evaluated_targets"],
        );
        let mut values = Vec::new();
        for team in cx.analyzable() {
            let Some(check) = check_exercise(team)? else { continue };
            for (who, acc) in &check.accuracies {
                values.push((team.condition, acc.map(|a| a.accuracy)));
                t.push(vec![
                    team.team_id.to_string(),
                    team.condition.to_string(),
                    who.to_string(),
                    cx.state.pseudonym(who).unwrap_or_default().to_string(),
                    fmt_opt(acc.map(|a| a.accuracy)),
                    acc.map(|a| a.percent().to_string()).unwrap_or_default(),
                    acc.map_or(0, |a| a.evaluated_targets).to_string(),
                ]);
            }
        }
        let desc = descriptives_table("accuracy_by_condition", &by_condition(values), "accuracy");
        Ok(AnalysisOutput { tables: vec![t, desc, cx.roster()] })
    }
}

pub struct CompromiseMeasure;

impl Measure for CompromiseMeasure {
    fn name(&self) -> &'static str {
        "compromise"
    }

    fn run(&self, cx: &AnalysisContext) -> Result<AnalysisOutput, AnalysisError> {
        let mut t = Table::new("compromise", &["team_id", "condition", "members", "agreed", "compromise"]);
        let mut values = Vec::new();
        for team in cx.analyzable() {
            let c = team_compromise(team)?;
            values.push((team.condition, c));
            t.push(vec![
                team.team_id.to_string(),
                team.condition.to_string(),
                individual_allocations(team)?.len().to_string(),
                team.team_ranking.as_ref().is_some_and(|r| r.agreed).to_string(),
                fmt_opt(c),
            ]);
        }
        let desc = descriptives_table("compromise_by_condition", &by_condition(values), "compromise");
        Ok(AnalysisOutput { tables: vec![t, desc, cx.roster()] })
    }
}

pub struct ScalesMeasure;

impl ScalesMeasure {
    fn reliability(cx: &AnalysisContext, scales: &BTreeMap<String, Vec<(String, bool)>>) -> Table {
        let mut t = Table::new("scale_reliability", &["scale", "items", "respondents", "alpha", "note"]);
        for (scale, items) in scales {
            let mut matrix = Vec::new();
            for team in cx.analyzable() {
                for survey in team.surveys.values() {
                    let row: Option<Vec<u8>> = items
                        .iter()
                        .map(|(id, rev)| survey.likert.get(id).map(|v| if *rev { LIKERT_POINTS + 1 - v } else { *v }))
                        .collect();
                    matrix.extend(row);
                }
            }
            let (alpha, note) = match cronbach_alpha(&matrix) {
                Ok(a) => (fmt_f64(a), String::new()),
                Err(e) => (String::new(), e.to_string()),
            };
            t.push(vec![scale.clone(), items.len().to_string(), matrix.len().to_string(), alpha, note]);
        }
        t
    }
}

impl Measure for ScalesMeasure {
    fn name(&self) -> &'static str {
        "scales"
    }

    fn run(&self, cx: &AnalysisContext) -> Result<AnalysisOutput, AnalysisError> {
        let scales = scale_items(cx);
        let binaries = binary_items(cx);
        let mut header = vec!["team_id", "condition", "session_id"];
        header.extend(scales.keys().map(String::as_str));
        header.extend(binaries.iter().map(String::as_str));
        let mut t = Table::new("scales", &header);
        let mut per_scale: BTreeMap<&str, Vec<(Condition, Option<f64>)>> = BTreeMap::new();
        for team in cx.analyzable() {
            for who in team.surveys.keys() {
                let scores = participant_scales(team, who, &scales)?;
                let mut row = vec![team.team_id.to_string(), team.condition.to_string(), who.to_string()];
                for (scale, score) in &scores {
                    row.push(fmt_opt(*score));
                    per_scale
                        .entry(scales.get_key_value(scale).expect("known").0)
                        .or_default()
                        .push((team.condition, *score));
                }
                let survey = &team.surveys[who];
                row.extend(binaries.iter().map(|b| survey.binary.get(b).map(|v| v.to_string()).unwrap_or_default()));
                t.push(row);
            }
        }
        let mut desc = Table::new("scales_by_condition", &["measure", "condition", "mean", "sd", "n"]);
        for (scale, values) in per_scale {
            desc.rows.extend(descriptives_table("", &by_condition(values), scale).rows);
        }
        Ok(AnalysisOutput { tables: vec![t, desc, Self::reliability(cx, &scales), cx.roster()] })
    }
}

pub struct LiwcMeasure;

#[derive(Clone, Copy, PartialEq, Eq, PartialOrd, Ord)]
enum LiwcPhase {
    All,
    Discuss,
    Decide,
}

impl LiwcPhase {
    fn name(self) -> &'static str {
        match self {
            LiwcPhase::All => "all",
            LiwcPhase::Discuss => "discuss",
            LiwcPhase::Decide => "decide",
        }
    }

    fn includes(self, tag: Option<MessagePhase>) -> bool {
        matches!(
            (self, tag),
            (LiwcPhase::All, Some(MessagePhase::Discuss | MessagePhase::Decide))
                | (LiwcPhase::Discuss, Some(MessagePhase::Discuss))
                | (LiwcPhase::Decide, Some(MessagePhase::Decide))
        )
    }
}

fn team_profile(cx: &AnalysisContext, team: &Team, phase: LiwcPhase) -> Option<LiwcProfile> {
    let messages: Vec<&str> =
        team.transcript.iter().filter(|m| !m.is_system() && phase.includes(m.phase)).map(|m| m.body.as_str()).collect();
    let profile = liwc_profile(&messages, &cx.dictionary);
    (profile.message_count > 0).then_some(profile)
}

fn fmt_shift(shift: Option<Option<f64>>) -> String {
    match shift {
        None => "n/a".to_string(),
        Some(None) => "new".to_string(),
        Some(Some(v)) => fmt_f64(v),
    }
}

impl Measure for LiwcMeasure {
    fn name(&self) -> &'static str {
        "liwc"
    }

    fn run(&self, cx: &AnalysisContext) -> Result<AnalysisOutput, AnalysisError> {
        let categories: Vec<&str> = cx.dictionary.category_names().collect();
        let mut header = vec!["team_id", "condition", "phase", "message_count"];
        header.extend(categories.iter().copied());
        let mut profiles_table = Table::new("liwc_profiles", &header);
        let phases: &[LiwcPhase] = if cx.options.by_phase || cx.options.shift {
            &[LiwcPhase::Discuss, LiwcPhase::Decide]
        } else {
            &[LiwcPhase::All]
        };
        let mut profiles: BTreeMap<(u32, LiwcPhase), LiwcProfile> = BTreeMap::new();
        for team in cx.analyzable() {
            for &phase in phases {
                let Some(profile) = team_profile(cx, team, phase) else { continue };
                let mut row = vec![
                    team.team_id.to_string(),
                    team.condition.to_string(),
                    phase.name().to_string(),
                    profile.message_count.to_string(),
                ];
                row.extend(categories.iter().map(|c| fmt_opt(profile.get(c))));
                profiles_table.push(row);
                profiles.insert((team.team_id.0, phase), profile);
            }
        }
        let mut tables = vec![profiles_table];
        if cx.options.shift {
            let mut shifts =
                Table::new("liwc_shift", &["team_id", "condition", "category", "discuss", "decide", "shift_percent"]);
            let mut means: BTreeMap<Condition, (usize, LiwcProfile, LiwcProfile)> = BTreeMap::new();
            for team in cx.analyzable() {
                let before = profiles.get(&(team.team_id.0, LiwcPhase::Discuss));
                let after = profiles.get(&(team.team_id.0, LiwcPhase::Decide));
                if let (Some(b), Some(a)) = (before, after) {
                    let entry = means.entry(team.condition).or_default();
                    entry.0 += 1;
                    for c in &categories {
                        *entry.1.values.entry(c.to_string()).or_default() += b.get(c).unwrap_or(0.0);
                        *entry.2.values.entry(c.to_string()).or_default() += a.get(c).unwrap_or(0.0);
                    }
                }
                for c in &categories {
                    let shift = match (before, after) {
                        (Some(b), Some(a)) => Some(liwc_shift(b, a, c).map_err(measure_err(team))?),
                        _ => None,
                    };
                    shifts.push(vec![
                        team.team_id.to_string(),
                        team.condition.to_string(),
                        c.to_string(),
                        fmt_opt(before.and_then(|p| p.get(c))),
                        fmt_opt(after.and_then(|p| p.get(c))),
                        fmt_shift(shift),
                    ]);
                }
            }
            let mut by_cond = Table::new(
                "liwc_shift_by_condition",
                &["condition", "category", "teams", "discuss_mean", "decide_mean", "shift_percent"],
            );
            for (condition, (n, mut before, mut after)) in means {
                for v in before.values.values_mut().chain(after.values.values_mut()) {
                    *v /= n as f64;
                }
                for c in &categories {
                    let shift = liwc_shift(&before, &after, c).ok();
                    by_cond.push(vec![
                        condition.to_string(),
                        c.to_string(),
                        n.to_string(),
                        fmt_opt(before.get(c)),
                        fmt_opt(after.get(c)),
                        fmt_shift(shift),
                    ]);
                }
            }
            tables.push(shifts);
            tables.push(by_cond);
        }
        tables.push(cx.roster());
        Ok(AnalysisOutput { tables })
    }
}

/// Every measure in one pass, plus a long-format participant table for external statistics.
pub struct ReportMeasure;

impl Measure for ReportMeasure {
    fn name(&self) -> &'static str {
        "report"
    }

    fn run(&self, cx: &AnalysisContext) -> Result<AnalysisOutput, AnalysisError> {
        let scales = scale_items(cx);
        let binaries = binary_items(cx);
        let mut teams = Table::new(
            "team_measures",
            &["team_id", "condition", "members_at_end", "baseline_disagreement", "climate", "compromise", "agreed"],
        );
        let mut header =
            vec!["team_id", "condition", "session_id", "pseudonym", "self_report", "accuracy", "individual_divergence"];
        header.extend(scales.keys().map(String::as_str));
        header.extend(binaries.iter().map(String::as_str));
        header.extend(["team_baseline_disagreement", "team_climate", "team_compromise", "team_agreed"]);
        let mut people = Table::new("participants_long", &header);
        let mut desc_values: BTreeMap<&str, Vec<(Condition, Option<f64>)>> = BTreeMap::new();
        for team in cx.analyzable() {
            let disagreement = baseline_disagreement(cx, team);
            let check = check_exercise(team)?;
            let climate = check.as_ref().and_then(|c| c.climate);
            let comp = team_compromise(team)?;
            let agreed = team.team_ranking.as_ref().is_some_and(|r| r.agreed);
            teams.push(vec![
                team.team_id.to_string(),
                team.condition.to_string(),
                team.active_members.len().to_string(),
                fmt_opt(disagreement),
                fmt_opt(climate),
                fmt_opt(comp),
                agreed.to_string(),
            ]);
            desc_values.entry("baseline_disagreement").or_default().push((team.condition, disagreement));
            desc_values.entry("compromise").or_default().push((team.condition, comp));
            if check.is_some() {
                desc_values.entry("climate").or_default().push((team.condition, climate));
            }
            let divergences: BTreeMap<SessionId, f64> = match &team.allocation {
                Some(t) => individual_allocations(team)?
                    .into_iter()
                    .map(|(who, a)| {
                        compromise(std::slice::from_ref(&a), &t.allocation).map(|v| (who, v)).map_err(measure_err(team))
                    })
                    .collect::<Result<_, _>>()?,
                None => BTreeMap::new(),
            };
            for who in &team.active_members {
                let acc = check.as_ref().and_then(|c| c.accuracies.get(who).copied().flatten()).map(|a| a.accuracy);
                let self_report =
                    team.exercise.as_ref().and_then(|e| e.self_reports.get(who)).map(|s| s.value().to_string());
                let scores = participant_scales(team, who, &scales)?;
                let mut row = vec![
                    team.team_id.to_string(),
                    team.condition.to_string(),
                    who.to_string(),
                    cx.state.pseudonym(who).unwrap_or_default().to_string(),
                    self_report.unwrap_or_default(),
                    fmt_opt(acc),
                    fmt_opt(divergences.get(who).copied()),
                ];
                for (scale, score) in &scores {
                    row.push(fmt_opt(*score));
                    let key = scales.get_key_value(scale).expect("known").0.as_str();
                    desc_values.entry(key).or_default().push((team.condition, *score));
                }
                let survey = team.surveys.get(who);
                row.extend(
                    binaries
                        .iter()
                        .map(|b| survey.and_then(|s| s.binary.get(b)).map(|v| v.to_string()).unwrap_or_default()),
                );
                row.extend([fmt_opt(disagreement), fmt_opt(climate), fmt_opt(comp), agreed.to_string()]);
                people.push(row);
                if team.exercise.is_some() {
                    desc_values.entry("accuracy").or_default().push((team.condition, acc));
                }
            }
        }
        let mut desc = Table::new("descriptives", &["measure", "condition", "mean", "sd", "n"]);
        for (measure, values) in desc_values {
            desc.rows.extend(descriptives_table("", &by_condition(values), measure).rows);
        }
        Ok(AnalysisOutput { tables: vec![teams, people, desc, ScalesMeasure::reliability(cx, &scales), cx.roster()] })
    }
}
