//! Acceptance checks against live servers and the bot harness.
//! Prints one PASS/FAIL line per criterion; exits non-zero if any fails.

use std::collections::{BTreeMap, BTreeSet};
use std::panic::AssertUnwindSafe;
use std::process::ExitCode;
use std::time::{Duration, Instant};

use num_rational::Ratio;
use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use teamspace_bots::bot::{find_private_key, Outcome};
use teamspace_bots::{run_cohort, CohortSpec, Group, Persona, RunSummary};
use teamspace_core::analysis::{AnalysisContext, AnalysisOptions, AnalysisOutput, MeasureRegistry};
use teamspace_core::config::{default_survey_items, ExperimentConfig};
use teamspace_core::engine::{condition_sequence, Engine};
use teamspace_core::event::{Event, EventBody};
use teamspace_core::interlude::InterludeRegistry;
use teamspace_core::model::{Condition, Phase, SessionId, TeamId};
use teamspace_core::persistence::{parse_log, read_log, replay};
use teamspace_core::protocol::{Envelope, ServerFrame};
use teamspace_core::sociometrics::{
    compromise, cronbach_alpha, footrule_distance, liwc_profile, perception_accuracy, score_scale, AllocationVector,
    EmotionScore, GuessSet, LikertResponse, LiwcDictionary, RankVector,
};
use teamspace_server::{Server, ServerOptions};

type Check = Result<String, String>;

macro_rules! ensure {
    ($cond:expr, $($fmt:tt)*) => {
        if !$cond {
            return Err(format!($($fmt)*));
        }
    };
}

fn err(e: impl std::fmt::Display) -> String {
    e.to_string()
}

// ----- live runs -----

struct LiveRun {
    summary: RunSummary,
    events: Vec<Event>,
    live_state: String,
    elapsed: Duration,
}

fn seed_for(conditions: &[Condition]) -> u64 {
    (0..100_000).find(|&s| condition_sequence(s, conditions.len()) == conditions).expect("seed exists")
}

fn config(seed: u64, phase_seconds: f64) -> ExperimentConfig {
    let mut c = ExperimentConfig {
        discuss_seconds: phase_seconds,
        decide_seconds: phase_seconds,
        pause_seconds: 2.0,
        exercise_stage_seconds: 15.0,
        feedback_seconds: 15.0,
        survey_timeout_seconds: 60.0,
        ..Default::default()
    };
    c.condition_assignment.seed = seed;
    c
}

async fn live_run(cfg: ExperimentConfig, spec: &CohortSpec, seed: u64) -> Result<LiveRun, String> {
    let dir = tempfile::tempdir().map_err(err)?;
    let listener = tokio::net::TcpListener::bind("127.0.0.1:0").await.map_err(err)?;
    let server = Server::start(listener, cfg, ServerOptions::new(dir.path(), "acceptance")).await.map_err(err)?;
    let started = Instant::now();
    let summary = run_cohort(&server.url(), spec, seed).await.map_err(err)?;
    let elapsed = started.elapsed();
    let live_state = server.handle.call(|e, _| Ok(e.state().to_canonical_json())).await.map_err(err)?.map_err(err)?;
    let events = read_log(&server.log_path).map_err(err)?.events;
    server.shutdown().await.map_err(err)?;
    Ok(LiveRun { summary, events, live_state, elapsed })
}

fn frames(summary: &RunSummary, name: &str) -> Vec<Envelope> {
    let bot = summary.bots.iter().find(|b| b.name == name).expect("bot exists");
    bot.frames.iter().filter_map(|f| serde_json::from_str(f).ok()).collect()
}

fn team_conditions(events: &[Event]) -> BTreeMap<TeamId, Condition> {
    events
        .iter()
        .filter_map(|e| match &e.body {
            EventBody::TeamFormed { condition, .. } => Some((e.team_id.expect("team event"), *condition)),
            _ => None,
        })
        .collect()
}

fn pseudonyms(events: &[Event]) -> BTreeMap<SessionId, String> {
    events
        .iter()
        .filter_map(|e| match &e.body {
            EventBody::PseudonymSet { pseudonym } => Some((e.session_id.clone()?, pseudonym.clone())),
            _ => None,
        })
        .collect()
}

// ----- criteria -----

fn accuracy_of(guesses: &[i64], actuals: &[i64]) -> f64 {
    let g = guesses.iter().enumerate().map(|(i, v)| (i, EmotionScore::new(*v).unwrap())).collect();
    let a = actuals.iter().enumerate().map(|(i, v)| (i, EmotionScore::new(*v).unwrap())).collect();
    perception_accuracy(&GuessSet::new(usize::MAX, g), &a).unwrap().accuracy
}

fn accuracy_oracle(guesses: &[i64], actuals: &[i64]) -> Ratio<i64> {
    let n = guesses.len() as i64;
    let error: i64 = guesses.iter().zip(actuals).map(|(g, s)| (g - s).abs()).sum();
    (Ratio::from_integer(1) - Ratio::new(error, 5 * n)).max(Ratio::from_integer(0))
}

fn ratio_f64(r: Ratio<i64>) -> f64 {
    *r.numer() as f64 / *r.denom() as f64
}

fn accuracy_formula() -> Check {
    let started = Instant::now();
    let mut exhaustive = 0;
    for g1 in -5..=5 {
        for g2 in -5..=5 {
            for s1 in -5..=5 {
                for s2 in -5..=5 {
                    let (g, s) = ([g1, g2], [s1, s2]);
                    let (got, want) = (accuracy_of(&g, &s), ratio_f64(accuracy_oracle(&g, &s)));
                    ensure!(got == want, "G={g:?} S={s:?}: {got} != {want}");
                    exhaustive += 1;
                }
            }
        }
    }
    let mut rng = ChaCha8Rng::seed_from_u64(1);
    for _ in 0..100_000 {
        let n = rng.random_range(3..=5);
        let g: Vec<i64> = (0..n).map(|_| rng.random_range(-5..=5)).collect();
        let s: Vec<i64> = (0..n).map(|_| rng.random_range(-5..=5)).collect();
        let (got, want) = (accuracy_of(&g, &s), ratio_f64(accuracy_oracle(&g, &s)));
        ensure!(got == want, "G={g:?} S={s:?}: {got} != {want}");
    }
    let secs = started.elapsed().as_secs_f64();
    ensure!(secs < 10.0, "took {secs:.2} s");
    Ok(format!("{exhaustive} exhaustive two-target cases and 100000 random 3-5 target cases exact in {secs:.2} s"))
}

fn accuracy_clamp() -> Check {
    let mut rng = ChaCha8Rng::seed_from_u64(2);
    let mut clamped = 0;
    for _ in 0..20_000 {
        let n = rng.random_range(1..=5);
        let s: Vec<i64> = (0..n).map(|_| rng.random_range(-5..=5)).collect();
        ensure!(accuracy_of(&s, &s) == 1.0, "exact guesses {s:?} not 1.0");
        let g: Vec<i64> = (0..n).map(|_| rng.random_range(-5..=5)).collect();
        let error: i64 = g.iter().zip(&s).map(|(a, b)| (a - b).abs()).sum();
        let a = accuracy_of(&g, &s);
        ensure!((0.0..=1.0).contains(&a), "{a} out of range");
        if error >= 5 * n as i64 {
            ensure!(a == 0.0, "mean error >= 5 but accuracy {a}");
            clamped += 1;
        }
    }
    for n in 1..=5 {
        ensure!(accuracy_of(&vec![5; n], &vec![-5; n]) == 0.0, "opposite extremes with {n} targets");
    }
    Ok(format!(
        "exact guesses give 1.0; {clamped} random cases with mean error >= 5 and all opposite-extreme cases give 0.0"
    ))
}

fn permutation(rng: &mut ChaCha8Rng, n: usize) -> RankVector {
    let mut v: Vec<u32> = (1..=n as u32).collect();
    v.shuffle(rng);
    RankVector::new(v).unwrap()
}

fn footrule_metric() -> Check {
    let mut rng = ChaCha8Rng::seed_from_u64(3);
    for _ in 0..10_000 {
        let n = rng.random_range(2..=8);
        let (a, b, c) = (permutation(&mut rng, n), permutation(&mut rng, n), permutation(&mut rng, n));
        let d = |x: &RankVector, y: &RankVector| footrule_distance(x, y).unwrap();
        ensure!(d(&a, &b) == d(&b, &a), "asymmetric {a:?} {b:?}");
        ensure!(d(&a, &a) == 0, "d(a,a) != 0");
        ensure!((d(&a, &b) == 0) == (a == b), "identity of indiscernibles fails");
        ensure!(d(&a, &c) <= d(&a, &b) + d(&b, &c), "triangle fails for {a:?} {b:?} {c:?}");
        ensure!(d(&a, &b) % 2 == 0, "odd distance {}", d(&a, &b));
    }
    Ok("symmetry, identity, triangle inequality and even parity hold on 10000 random triples, sizes 2-8".into())
}

fn compromise_check(e2e: Option<&LiveRun>) -> Check {
    let budget = 500_000;
    let even = AllocationVector::new(vec![100_000; 5], budget).unwrap();
    let outlier = AllocationVector::new(vec![200_000, 50_000, 100_000, 100_000, 50_000], budget).unwrap();
    let hand = compromise(&[outlier, even.clone(), even.clone(), even.clone()], &even).unwrap();
    ensure!((hand - 0.0274).abs() <= 1e-4, "hand example {hand}");
    let exact = (0.06f64 / 5.0).sqrt() / 4.0;
    ensure!((hand - exact).abs() <= 1e-15, "hand example {hand} vs {exact}");

    let mut rng = ChaCha8Rng::seed_from_u64(4);
    let random_alloc = |rng: &mut ChaCha8Rng, budget: u64| {
        let mut cuts: Vec<u64> = (0..4).map(|_| rng.random_range(0..=budget)).collect();
        cuts.sort();
        let mut v = Vec::new();
        let mut prev = 0;
        for c in cuts.into_iter().chain([budget]) {
            v.push(c - prev);
            prev = c;
        }
        v
    };
    let mut worst = 0.0f64;
    for _ in 0..2_000 {
        let members: Vec<Vec<u64>> = (0..rng.random_range(2..=6)).map(|_| random_alloc(&mut rng, budget)).collect();
        let team = random_alloc(&mut rng, budget);
        let k = rng.random_range(2..=1000u64);
        let build = |scale: u64| {
            let m: Vec<AllocationVector> = members
                .iter()
                .map(|a| AllocationVector::new(a.iter().map(|x| x * scale).collect(), budget * scale).unwrap())
                .collect();
            let t = AllocationVector::new(team.iter().map(|x| x * scale).collect(), budget * scale).unwrap();
            compromise(&m, &t).unwrap()
        };
        let (base, scaled) = (build(1), build(k));
        if base > 0.0 {
            worst = worst.max((base - scaled).abs() / base);
        }
        let same: Vec<AllocationVector> =
            (0..members.len()).map(|_| AllocationVector::new(team.clone(), budget).unwrap()).collect();
        ensure!(
            compromise(&same, &AllocationVector::new(team.clone(), budget).unwrap()).unwrap() == 0.0,
            "identical not 0"
        );
    }
    ensure!(worst <= 1e-12, "rescaling changed compromise by {worst:e} relative");

    let band = match e2e {
        Some(run) => {
            let out = analyze(&run.events, "compromise", AnalysisOptions::default()).map_err(err)?;
            let table = out.table("compromise").ok_or("no compromise table")?;
            let col = table.column("compromise").ok_or("no compromise column")?;
            let values: Vec<f64> = table.rows.iter().filter_map(|r| r[col].parse().ok()).collect();
            let inside = values.iter().all(|v| (0.01..=0.2).contains(v));
            format!(
                "; bot-run team values {} {} [0.01, 0.2] (informational)",
                values.iter().map(|v| format!("{v:.4}")).collect::<Vec<_>>().join(", "),
                if inside { "inside" } else { "OUTSIDE" }
            )
        }
        None => "; bot-run band unavailable (end-to-end run failed)".into(),
    };
    Ok(format!("hand example {hand:.5}, identical allocations 0, rescaling drift {worst:.1e} on 2000 cases{band}"))
}

fn e2e_spec() -> CohortSpec {
    let persona = |corpus: &str| Persona {
        signal_done: false,
        chattiness: 2,
        decide_messages: 1,
        pause_messages: 1,
        corpus: serde_json::from_value(serde_json::json!(corpus)).unwrap(),
        ..Persona::default()
    };
    CohortSpec {
        groups: vec![
            Group { count: 4, persona: persona("plain") },
            Group { count: 4, persona: persona("second-person") },
            Group { count: 4, persona: persona("netspeak") },
        ],
        timeout_seconds: 110.0,
        serial_teams: false,
    }
}

fn protocol_e2e(run: &Result<LiveRun, String>) -> Check {
    let run = run.as_ref().map_err(Clone::clone)?;
    let s = &run.summary;
    ensure!(run.elapsed < Duration::from_secs(120), "took {:?}", run.elapsed);
    ensure!(s.violations().is_empty(), "violations: {:?}", s.violations());
    ensure!((s.teams_formed, s.completions) == (2, 2), "teams {} complete {}", s.teams_formed, s.completions);
    let conditions: BTreeSet<Condition> = team_conditions(&run.events).into_values().collect();
    ensure!(conditions.len() == 2, "conditions {conditions:?}");
    ensure!(s.bots.iter().all(|b| b.outcome == Outcome::Complete), "not every bot completed");

    // Phase order and the compressed discussion timer.
    for team in team_conditions(&run.events).keys() {
        let mine: Vec<&Event> = run.events.iter().filter(|e| e.team_id == Some(*team)).collect();
        let phases: Vec<Phase> = mine
            .iter()
            .filter_map(|e| match &e.body {
                EventBody::PhaseStarted { phase, .. } => Some(*phase),
                EventBody::TeamCompleted {} => Some(Phase::Complete),
                _ => None,
            })
            .collect();
        // Exercise stages start the interlude phase again; collapse them.
        let mut dedup = phases;
        dedup.dedup();
        ensure!(
            dedup == [Phase::Discuss, Phase::Interlude, Phase::Decide, Phase::ExitSurvey, Phase::Complete],
            "team {team} went {dedup:?}"
        );
        let start = |p: Phase| {
            mine.iter()
                .find(|e| matches!(e.body, EventBody::PhaseStarted { phase, .. } if phase == p))
                .map(|e| e.wall_time)
        };
        let discuss = (start(Phase::Interlude).unwrap() - start(Phase::Discuss).unwrap()).num_milliseconds();
        ensure!(discuss >= 19_900, "team {team} discussion lasted {discuss} ms");
    }

    // Write-ahead and delivery, from the captures.
    let names = pseudonyms(&run.events);
    let mut team_messages: BTreeMap<TeamId, BTreeSet<u64>> = BTreeMap::new();
    for e in &run.events {
        if let EventBody::MessagePosted { message_id, .. } | EventBody::SystemAnnounced { message_id, .. } = &e.body {
            team_messages.entry(e.team_id.unwrap()).or_default().insert(*message_id);
        }
    }
    let mut checked = 0;
    for bot in &s.bots {
        let team = TeamId(bot.team_id.ok_or("bot without team")?);
        let logged = &team_messages[&team];
        let mut seen = BTreeSet::new();
        for env in frames(s, &bot.name) {
            match env.frame {
                ServerFrame::Message { message_id, .. } | ServerFrame::System { message_id, .. } => {
                    ensure!(
                        logged.contains(&message_id),
                        "{} got message {message_id} that is not in the log",
                        bot.name
                    );
                    seen.insert(message_id);
                    checked += 1;
                }
                ServerFrame::StateSnapshot(snap) => {
                    seen.extend(snap.team.iter().flat_map(|t| t.transcript.iter().map(|m| m.message_id)));
                }
                _ => {}
            }
        }
        ensure!(&seen == logged, "{} missed {:?}", bot.name, logged.difference(&seen).collect::<Vec<_>>());
    }
    ensure!(names.len() == 12, "expected 12 pseudonyms");
    Ok(format!(
        "12 bots, 2 teams ({}), both Complete in {:.1} s, discussion ran its 20 s, 0 violations, {checked} transcript frames all logged and all delivered",
        conditions.iter().map(|c| c.to_string()).collect::<Vec<_>>().join(" + "),
        run.elapsed.as_secs_f64()
    ))
}

fn lock_windows(events: &[Event]) -> Vec<(TeamId, u64, u64)> {
    let mut open: BTreeMap<TeamId, u64> = BTreeMap::new();
    let mut out = Vec::new();
    for e in events {
        match e.body {
            EventBody::ChatLocked {} => {
                open.insert(e.team_id.unwrap(), e.event_seq);
            }
            EventBody::ChatUnlocked {} => {
                let t = e.team_id.unwrap();
                out.push((t, open.remove(&t).expect("lock before unlock"), e.event_seq));
            }
            _ => {}
        }
    }
    out.extend(open.into_iter().map(|(t, from)| (t, from, u64::MAX)));
    out
}

async fn chat_lock(runtime_runs: &mut Vec<LiveRun>) -> Check {
    let seed = seed_for(&[Condition::Intervention, Condition::Intervention]);
    let fuzzer = Persona { fuzz_lock: true, chattiness: 1, ..Persona::default() };
    let mut windows = 0;
    let mut rejections = 0;
    for bot_seed in 0..3 {
        let run = live_run(config(seed, 20.0), &CohortSpec::uniform(12, fuzzer.clone()), bot_seed).await?;
        ensure!(run.summary.violations().is_empty(), "violations: {:?}", run.summary.violations());
        for (team, from, to) in lock_windows(&run.events) {
            windows += 1;
            let leaked: Vec<u64> = run
                .events
                .iter()
                .filter(|e| e.team_id == Some(team) && e.event_seq > from && e.event_seq < to)
                .filter(|e| matches!(e.body, EventBody::MessagePosted { .. }))
                .map(|e| e.event_seq)
                .collect();
            ensure!(leaked.is_empty(), "team {team} logged messages {leaked:?} while locked");
        }
        rejections += run.summary.bots.iter().map(|b| b.lock_rejections).sum::<usize>();
        runtime_runs.push(run);
    }
    ensure!(windows == 6, "expected 6 lock windows, saw {windows}");
    ensure!(rejections > 0, "no post was attempted inside a lock window");
    Ok(format!("3 fuzz runs, {windows} locked windows, {rejections} posts rejected, 0 messages logged while locked"))
}

async fn termination(runs: &mut Vec<LiveRun>) -> Check {
    let mut lines = Vec::new();
    for (quitters, expect_terminated) in [(3usize, true), (2, false)] {
        let quitter = Persona { disconnect_in: Some(Phase::Discuss), ..Persona::default() };
        let spec = CohortSpec {
            groups: vec![
                Group { count: 6 - quitters, persona: Persona::default() },
                Group { count: quitters, persona: quitter },
            ],
            timeout_seconds: 60.0,
            serial_teams: false,
        };
        let run = live_run(config(seed_for(&[Condition::Control]), 20.0), &spec, 9).await?;
        ensure!(run.summary.violations().is_empty(), "violations: {:?}", run.summary.violations());
        let terminated = run.events.iter().any(|e| matches!(e.body, EventBody::TeamTerminated { .. }));
        let final_phase = replay(&run.events).map_err(err)?.team(TeamId(1)).map(|t| (t.phase, t.active_members.len()));
        ensure!(terminated == expect_terminated, "{quitters} departures: terminated={terminated}");
        let want = if expect_terminated { Phase::Terminated } else { Phase::Complete };
        ensure!(final_phase.map(|f| f.0) == Some(want), "{quitters} departures ended {final_phase:?}");
        lines.push(format!("{} members left -> {}", 6 - quitters, want));
        runs.push(run);
    }
    Ok(lines.join(", "))
}

fn analyze(events: &[Event], measure: &str, options: AnalysisOptions) -> Result<AnalysisOutput, String> {
    let cx = AnalysisContext::new(events, default_survey_items(), LiwcDictionary::demo(), options).map_err(err)?;
    MeasureRegistry::standard().run(measure, &cx).map_err(err)
}

async fn replay_determinism() -> Check {
    let mut analyzed = 0;
    for seed in 0..20u64 {
        let spec = CohortSpec::uniform(6, Persona { pause_messages: 1, ..Persona::default() });
        let run = live_run(config(seed, 20.0), &spec, seed).await?;
        ensure!(run.summary.completions == 1, "seed {seed}: team did not complete");
        let replayed = replay(&run.events).map_err(err)?.to_canonical_json();
        ensure!(replayed == run.live_state, "seed {seed}: replayed state differs from live state");
        let again = replay(&run.events).map_err(err)?.to_canonical_json();
        ensure!(replayed == again, "seed {seed}: two replays differ");
        let text: String = run.events.iter().map(|e| serde_json::to_string(e).unwrap() + "\n").collect();
        let reparsed = parse_log(&text).map_err(err)?.events;
        for measure in MeasureRegistry::standard().names() {
            let options = AnalysisOptions { by_phase: true, shift: true };
            let a = analyze(&run.events, measure, options.clone())?;
            let b = analyze(&reparsed, measure, options)?;
            ensure!(a == b, "seed {seed}: {measure} differs after a log round trip");
            ensure!(
                a.tables.iter().map(|t| t.to_csv()).collect::<Vec<_>>()
                    == b.tables.iter().map(|t| t.to_csv()).collect::<Vec<_>>(),
                "seed {seed}: {measure} CSV bytes differ"
            );
            analyzed += 1;
        }
    }
    Ok(format!("20 seeded runs: replayed state equals live state byte for byte; {analyzed} measure outputs identical after a log round trip"))
}

fn privacy(runs: &[&LiveRun]) -> Check {
    let mut frames_scanned = 0;
    let mut feedback_frames = 0;
    for run in runs {
        let conditions = team_conditions(&run.events);
        let sessions: BTreeMap<String, SessionId> = pseudonyms(&run.events).into_iter().map(|(s, p)| (p, s)).collect();
        let mut logged: BTreeMap<SessionId, (Option<f64>, Option<u32>)> = BTreeMap::new();
        for e in &run.events {
            if let EventBody::FeedbackComputed { climate, accuracies, .. } = &e.body {
                for (s, a) in accuracies {
                    logged.insert(s.clone(), (climate.map(|c| (c * 10.0).round() / 10.0), a.map(|a| a.percent())));
                }
            }
        }
        for bot in &run.summary.bots {
            let session = &sessions[&bot.name];
            for raw in &bot.frames {
                frames_scanned += 1;
                let value: serde_json::Value = serde_json::from_str(raw).map_err(err)?;
                if let Some(key) = find_private_key(&value) {
                    return Err(format!("{} received private key {key:?}: {raw}", bot.name));
                }
                let env: Envelope = serde_json::from_value(value).map_err(err)?;
                if let ServerFrame::ExerciseFeedback { climate, own_accuracy_percent, .. } = env.frame {
                    feedback_frames += 1;
                    let team = TeamId(bot.team_id.ok_or("feedback outside a team")?);
                    ensure!(
                        conditions[&team] == Condition::Intervention,
                        "{} got feedback in a control team",
                        bot.name
                    );
                    let own =
                        logged.get(session).ok_or(format!("{} got feedback it has no logged entry for", bot.name))?;
                    ensure!(
                        (climate, own_accuracy_percent) == *own,
                        "{} feedback {:?} is not its own {:?}",
                        bot.name,
                        (climate, own_accuracy_percent),
                        own
                    );
                }
            }
        }
    }
    ensure!(feedback_frames > 0, "no feedback frames captured");
    Ok(format!(
        "{frames_scanned} captured frames from {} runs: no answer-bearing keys, {feedback_frames} feedback frames each carry only the owner's values",
        runs.len()
    ))
}

/// A control team whose decision messages use "you" 1.89 times as often as its discussion messages.
fn liwc_corpus() -> Vec<Event> {
    let mut cfg = ExperimentConfig::default();
    cfg.condition_assignment.seed = seed_for(&[Condition::Control]);
    let mut engine = Engine::new(cfg, &InterludeRegistry::standard()).unwrap();
    let mut now = 1_700_000_000_000i64;
    let mut events = Vec::new();
    let mut ids = Vec::new();
    for i in 0..6 {
        let s = engine.create_session(now).unwrap();
        engine.connect(&s, now).unwrap();
        engine.set_pseudonym(&s, &format!("p{i}"), now).unwrap();
        let ranking: Vec<u32> = (0..5).map(|p| ((p + i) % 5) as u32 + 1).collect();
        engine.submit_lobby_survey(&s, BTreeMap::new(), ranking, now).unwrap();
        ids.push(s);
    }
    let text = |you: usize| {
        let mut words = vec!["you"; you];
        words.extend(std::iter::repeat_n("a", 100 - you));
        words.join(" ")
    };
    for i in 0..100 {
        engine.post_message(&ids[i % 6], &text(1), now).unwrap();
    }
    for secs in [540, 120] {
        now += secs * 1000;
        engine.tick(now).unwrap();
    }
    for i in 0..100 {
        engine.post_message(&ids[i % 6], &text(if i < 89 { 2 } else { 1 }), now).unwrap();
    }
    for secs in [540, 600] {
        now += secs * 1000;
        engine.tick(now).unwrap();
    }
    events.extend(engine.take_batch().events);
    events
}

fn liwc_pipeline() -> Check {
    let events = liwc_corpus();
    let out = analyze(&events, "liwc", AnalysisOptions { by_phase: true, shift: true })?;
    let shifts = out.table("liwc_shift").ok_or("no liwc_shift table")?;
    let (cat, pct) = (shifts.column("category").unwrap(), shifts.column("shift_percent").unwrap());
    let row = shifts.rows.iter().find(|r| r[cat] == "secondperson").ok_or("no secondperson row")?;
    let shift: f64 = row[pct].parse().map_err(err)?;
    ensure!((shift - 89.0).abs() <= 0.5, "shift {shift}");

    let netspeak = LiwcDictionary::new([("netspeak", vec!["lol", "brb", "ok*"])]);
    let p = liwc_profile(&["lol ok", "hello there"], &netspeak).get("netspeak");
    ensure!(p == Some(0.5), "netspeak profile {p:?}");
    let demo = LiwcDictionary::demo();
    let p = liwc_profile(&["you ok?"], &demo);
    ensure!(p.get("secondperson") == Some(0.5), "secondperson {:?}", p.get("secondperson"));
    ensure!(p.get("assent") == Some(0.5), "assent {:?}", p.get("assent"));
    ensure!(p.get("negemo") == Some(0.0), "negemo {:?}", p.get("negemo"));
    let p = liwc_profile(&["lol u", "we agree", "hello"], &demo);
    ensure!(p.get("netspeak") == Some(1.0 / 3.0), "netspeak {:?}", p.get("netspeak"));
    ensure!(p.get("we") == Some(1.0 / 6.0), "we {:?}", p.get("we"));
    Ok(format!("constructed corpus shift {shift:+.2}% (target +89 +/- 0.5); dictionary hand examples exact"))
}

fn alpha_oracle(m: &[Vec<u8>]) -> Option<Ratio<i128>> {
    let n = m.len() as i128;
    let k = m[0].len() as i128;
    let var = |xs: Vec<i128>| {
        let sum: i128 = xs.iter().sum();
        let sq: i128 = xs.iter().map(|x| x * x).sum();
        Ratio::new(n * sq - sum * sum, n * (n - 1))
    };
    let items: Ratio<i128> = (0..k as usize).map(|j| var(m.iter().map(|r| r[j] as i128).collect())).sum();
    let total = var(m.iter().map(|r| r.iter().map(|v| *v as i128).sum()).collect());
    (total != Ratio::from_integer(0)).then(|| Ratio::new(k, k - 1) * (Ratio::from_integer(1) - items / total))
}

fn scales_alpha() -> Check {
    let mut rng = ChaCha8Rng::seed_from_u64(5);
    let mut matrices = 0;
    let mut worst = 0.0f64;
    while matrices < 50 {
        let n = rng.random_range(2..40);
        let k = rng.random_range(2..7);
        let m: Vec<Vec<u8>> = (0..n).map(|_| (0..k).map(|_| rng.random_range(1..=5)).collect()).collect();
        let Some(exact) = alpha_oracle(&m) else { continue };
        let exact = *exact.numer() as f64 / *exact.denom() as f64;
        let got = cronbach_alpha(&m).map_err(err)?;
        ensure!((exact - got).abs() <= 1e-9, "alpha {got} vs {exact}");
        worst = worst.max((exact - got).abs());

        // Scale score of every respondent, with a random subset reverse-coded.
        let reverse: BTreeSet<String> = (0..k).filter(|_| rng.random_bool(0.3)).map(|j| format!("q{j}")).collect();
        for row in &m {
            let responses: Vec<LikertResponse> =
                row.iter().enumerate().map(|(j, v)| LikertResponse::new(format!("q{j}"), *v)).collect();
            let sum: u32 = row
                .iter()
                .enumerate()
                .map(|(j, v)| if reverse.contains(&format!("q{j}")) { 6 - *v as u32 } else { *v as u32 })
                .sum();
            let want = sum as f64 / k as f64;
            let got = score_scale(&responses, &reverse, 5).map_err(err)?;
            ensure!((want - got).abs() <= 1e-9, "scale score {got} vs {want}");
        }
        matrices += 1;
    }
    Ok(format!("50 random matrices: alpha within {worst:.1e} of the exact rational value; every scale score matches"))
}

// ----- runner -----

fn guarded(f: impl FnOnce() -> Check) -> Check {
    match std::panic::catch_unwind(AssertUnwindSafe(f)) {
        Ok(r) => r,
        Err(p) => Err(p
            .downcast_ref::<String>()
            .cloned()
            .or_else(|| p.downcast_ref::<&str>().map(|s| s.to_string()))
            .unwrap_or_else(|| "panicked".into())),
    }
}

fn main() -> ExitCode {
    let rt = tokio::runtime::Builder::new_multi_thread().enable_all().build().expect("runtime");
    let mut results: Vec<(&str, Check)> = Vec::new();
    let mut report = |name: &'static str, r: Check| {
        match &r {
            Ok(detail) => println!("PASS {name}: {detail}"),
            Err(why) => println!("FAIL {name}: {why}"),
        }
        results.push((name, r));
    };

    report("accuracy-formula-oracle", guarded(accuracy_formula));
    report("accuracy-clamp-and-boundary", guarded(accuracy_clamp));
    report("footrule-metric-properties", guarded(footrule_metric));

    let e2e =
        rt.block_on(live_run(config(seed_for(&[Condition::Intervention, Condition::Control]), 20.0), &e2e_spec(), 7));
    report("compromise", guarded(|| compromise_check(e2e.as_ref().ok())));
    report("protocol-end-to-end", guarded(|| protocol_e2e(&e2e)));

    let mut fuzz_runs = Vec::new();
    report("chat-lock-safety", guarded(|| rt.block_on(chat_lock(&mut fuzz_runs))));
    let mut termination_runs = Vec::new();
    report("termination-rule", guarded(|| rt.block_on(termination(&mut termination_runs))));
    report("replay-determinism", guarded(|| rt.block_on(replay_determinism())));
    report(
        "privacy",
        guarded(|| {
            let mut runs: Vec<&LiveRun> = fuzz_runs.iter().chain(&termination_runs).collect();
            if let Ok(run) = &e2e {
                runs.push(run);
            }
            privacy(&runs)
        }),
    );
    report("liwc-pipeline", guarded(liwc_pipeline));
    report("scales-and-alpha", guarded(scales_alpha));

    let failed = results.iter().filter(|(_, r)| r.is_err()).count();
    println!("{} of {} acceptance criteria passed", results.len() - failed, results.len());
    if failed == 0 {
        ExitCode::SUCCESS
    } else {
        ExitCode::FAILURE
    }
}
