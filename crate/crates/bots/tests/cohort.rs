use teamspace_bots::bot::Outcome;
use teamspace_bots::{run_cohort, CohortSpec, Group, Persona};
use teamspace_core::config::ExperimentConfig;
use teamspace_core::engine::condition_sequence;
use teamspace_core::event::{Event, EventBody};
use teamspace_core::model::{Condition, Phase};
use teamspace_core::persistence::read_log;
use teamspace_server::{Server, ServerOptions};
use tokio::net::TcpListener;

fn fast_config(conditions: &[Condition]) -> ExperimentConfig {
    let seed = (0..10_000).find(|&s| condition_sequence(s, conditions.len()) == conditions).unwrap();
    let mut c = ExperimentConfig {
        discuss_seconds: 20.0,
        decide_seconds: 20.0,
        pause_seconds: 1.0,
        exercise_stage_seconds: 10.0,
        feedback_seconds: 10.0,
        survey_timeout_seconds: 20.0,
        ..Default::default()
    };
    c.condition_assignment.seed = seed;
    c
}

async fn serve(cfg: ExperimentConfig) -> (Server, tempfile::TempDir) {
    let dir = tempfile::tempdir().unwrap();
    let listener = TcpListener::bind("127.0.0.1:0").await.unwrap();
    let server = Server::start(listener, cfg, ServerOptions::new(dir.path(), "bots")).await.unwrap();
    (server, dir)
}

#[tokio::test(flavor = "multi_thread")]
async fn two_teams_complete_without_violations() {
    let (server, _dir) = serve(fast_config(&[Condition::Intervention, Condition::Control])).await;
    let spec = CohortSpec::uniform(12, Persona::default());
    let summary = run_cohort(&server.url(), &spec, 11).await.unwrap();
    assert_eq!(summary.violations(), Vec::<&str>::new());
    assert_eq!((summary.teams_formed, summary.completions, summary.terminations), (2, 2, 0));
    assert!(summary.bots.iter().all(|b| b.outcome == Outcome::Complete));
    // Only the intervention team's members saw feedback.
    let with_feedback = summary.bots.iter().filter(|b| b.feedback.is_some()).count();
    assert_eq!(with_feedback, 6);
    server.shutdown().await.unwrap();
}

#[tokio::test(flavor = "multi_thread")]
async fn three_departures_terminate_a_team() {
    let (server, _dir) = serve(fast_config(&[Condition::Control])).await;
    let quitter = Persona { disconnect_in: Some(Phase::Discuss), ..Persona::default() };
    let spec = CohortSpec {
        groups: vec![Group { count: 3, persona: Persona::default() }, Group { count: 3, persona: quitter }],
        timeout_seconds: 60.0,
        serial_teams: false,
    };
    let summary = run_cohort(&server.url(), &spec, 5).await.unwrap();
    assert_eq!(summary.violations(), Vec::<&str>::new());
    assert_eq!((summary.teams_formed, summary.completions, summary.terminations), (1, 0, 1));
    let outcomes: Vec<Outcome> = summary.bots.iter().map(|b| b.outcome).collect();
    assert_eq!(outcomes.iter().filter(|o| **o == Outcome::Disconnected).count(), 3);
    assert_eq!(outcomes.iter().filter(|o| **o == Outcome::Terminated).count(), 3);
    server.shutdown().await.unwrap();
}

#[tokio::test(flavor = "multi_thread")]
async fn lock_fuzzers_are_rejected_and_nothing_leaks() {
    let (server, _dir) = serve(fast_config(&[Condition::Intervention])).await;
    let fuzzer = Persona { fuzz_lock: true, ..Persona::default() };
    let spec = CohortSpec::uniform(6, fuzzer);
    let summary = run_cohort(&server.url(), &spec, 2).await.unwrap();
    assert_eq!(summary.violations(), Vec::<&str>::new());
    assert_eq!(summary.completions, 1);
    assert!(summary.bots.iter().map(|b| b.lock_rejections).sum::<usize>() >= 12);
    server.shutdown().await.unwrap();
}

async fn run_and_read(cfg: ExperimentConfig, spec: &CohortSpec, seed: u64) -> (teamspace_bots::RunSummary, Vec<Event>) {
    let (server, _dir) = serve(cfg).await;
    let summary = run_cohort(&server.url(), spec, seed).await.unwrap();
    let events = read_log(&server.log_path).unwrap().events;
    server.shutdown().await.unwrap();
    (summary, events)
}

/// The log with clock-derived fields removed.
fn logical(events: &[Event]) -> Vec<serde_json::Value> {
    events
        .iter()
        .map(|e| {
            let mut v = serde_json::to_value(e).unwrap();
            let obj = v.as_object_mut().unwrap();
            obj.remove("wall_time");
            if let Some(payload) = obj.get_mut("payload").and_then(|p| p.as_object_mut()) {
                payload.remove("deadline");
            }
            v
        })
        .collect()
}

#[tokio::test(flavor = "multi_thread")]
async fn twelve_bots_seed_7_golden_run() {
    let cfg = ExperimentConfig { pause_seconds: 1.0, ..fast_config(&[Condition::Control]) };
    let mut cfg = cfg;
    cfg.condition_assignment.seed = 7;
    let (summary, events) = run_and_read(cfg, &CohortSpec::uniform(12, Persona::default()), 7).await;
    assert_eq!((summary.teams_formed, summary.completions), (2, 2));
    let conditions: Vec<Condition> = events
        .iter()
        .filter_map(|e| match &e.body {
            EventBody::TeamFormed { condition, .. } => Some(*condition),
            _ => None,
        })
        .collect();
    assert_eq!(conditions, condition_sequence(7, 2));
}

#[tokio::test(flavor = "multi_thread")]
async fn same_seed_gives_the_same_logical_log() {
    let cfg = fast_config(&[Condition::Intervention, Condition::Control]);
    let spec = CohortSpec {
        serial_teams: true,
        ..CohortSpec::uniform(12, Persona { pause_messages: 1, ..Persona::default() })
    };
    let (a, first) = run_and_read(cfg.clone(), &spec, 21).await;
    let (b, second) = run_and_read(cfg, &spec, 21).await;
    assert_eq!((a.completions, b.completions), (2, 2));
    let (first, second) = (logical(&first), logical(&second));
    if let Some(i) = (0..first.len().max(second.len())).find(|&i| first.get(i) != second.get(i)) {
        panic!("logs diverge at {i}: {:?} vs {:?}", first.get(i), second.get(i));
    }
    let (_, other) = run_and_read(fast_config(&[Condition::Intervention, Condition::Control]), &spec, 22).await;
    assert_ne!(first, logical(&other));
}

#[tokio::test(flavor = "multi_thread")]
async fn standard_cohort_covers_every_event_kind() {
    let cfg = ExperimentConfig {
        lobby_timeout_seconds: 2.0,
        ..fast_config(&[Condition::Intervention, Condition::Control, Condition::Control])
    };
    let rejoiner = Persona { reconnect_in: Some(Phase::Discuss), ..Persona::default() };
    let quitter = Persona { disconnect_in: Some(Phase::Discuss), ..Persona::default() };
    let spec = CohortSpec {
        groups: vec![
            Group { count: 1, persona: rejoiner },
            Group { count: 5, persona: Persona { pause_messages: 1, ..Persona::default() } },
            Group { count: 6, persona: Persona { pause_messages: 1, ..Persona::default() } },
            Group { count: 3, persona: Persona::default() },
            Group { count: 3, persona: quitter },
            // Nobody joins after this one, so the lobby releases it.
            Group { count: 1, persona: Persona::default() },
        ],
        timeout_seconds: 60.0,
        serial_teams: false,
    };
    let (summary, events) = run_and_read(cfg, &spec, 3).await;
    assert_eq!(summary.violations(), Vec::<&str>::new());
    assert_eq!((summary.completions, summary.terminations), (2, 1));
    assert_eq!(summary.bots.last().unwrap().outcome, Outcome::Released);
    let seen: std::collections::BTreeSet<&str> = events.iter().map(|e| e.kind()).collect();
    let missing: Vec<&&str> = EventBody::KINDS.iter().filter(|k| !seen.contains(**k)).collect();
    assert!(missing.is_empty(), "never logged: {missing:?}");
}
