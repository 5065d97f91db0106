//! Acceptance suite. Runs every criterion, prints one line each and exits
//! nonzero if any criterion fails.

use std::collections::VecDeque;
use std::panic::{catch_unwind, AssertUnwindSafe};
use std::sync::Mutex;
use std::time::{Duration, Instant};

use moma_core::backends::{
    Backend, BackendError, BackendRequest, BackendResponse, HttpBackend, HttpConfig, LessonSensitiveOracle,
    OracleBackend, Provider, ReplayBackend,
};
use moma_core::engine::prompt::{Prompt, Stage, LESSON_HEADER, REASONING_INSTRUCTION};
use moma_core::engine::{Engine, EngineConfig, Mode, SkillInvocation, TrialResult};
use moma_core::harness::{
    categorize_failure, generate_offline, randomize_with, run_benchmark, run_offline_eval, solve, BenchConfig,
    FailureCategory, Scenario, ScenarioOptions, TaskKind,
};
use moma_core::memory::{
    curate_lessons, FailureLesson, LongTermStore, ParamRecord, SceneRef, ShortTermMemory, StepKind, StepRecord,
    DEFAULT_LESSON_CAP, SKILL_SELECTION,
};
use moma_core::nav::plan_on;
use moma_core::percept::{ForcedNan, NoiseConfig};
use moma_core::backends::OracleErrorProfile;
use moma_core::rng::SeedHasher;
use moma_core::skills::SkillRegistry;
use moma_core::world::{Cell, FailureCode, Outcome, WorldConfig};
use rand::Rng;

enum Verdict {
    Pass(String),
    Fail(String),
    Skip(String),
}

fn check(ok: bool, detail: String) -> Verdict {
    if ok {
        Verdict::Pass(detail)
    } else {
        Verdict::Fail(detail)
    }
}

fn buildings() -> Vec<WorldConfig> {
    ["b1", "b2", "b3"]
        .iter()
        .map(|b| {
            let path = format!("{}/../../scenarios/{b}.json", env!("CARGO_MANIFEST_DIR"));
            WorldConfig::from_json(&std::fs::read_to_string(&path).expect("scenario file")).expect("valid scenario")
        })
        .collect()
}

fn oracle(reg: &SkillRegistry) -> OracleBackend {
    OracleBackend::perfect(&reg.names())
}

fn run(cfg: &EngineConfig, backend: &dyn Backend, ltm: Option<&LongTermStore>, s: &Scenario, phrasing: usize) -> (TrialResult, moma_core::engine::TrialLog) {
    let reg = SkillRegistry::builtin();
    let engine = Engine::new(cfg, backend, &reg).with_ltm(ltm);
    engine.run_trial(&s.task_spec(phrasing).unwrap(), s.world().unwrap())
}

fn c1_oracle_end_to_end() -> Verdict {
    let reg = SkillRegistry::builtin();
    let cfg = BenchConfig::new(TaskKind::ALL.to_vec(), 10, 0, buildings());
    let plan = moma_core::harness::bench::plan_trials(&cfg).unwrap();
    let cross_floor = plan.iter().all(|p| {
        let ws = p.scenario.world().unwrap();
        let task_floor = match &p.scenario.target {
            Some(t) => ws.objects[t].floor().unwrap(),
            None => p.spec.goal.region.as_ref().unwrap().floor,
        };
        ws.robot.floor != task_floor
    });
    let o = oracle(&reg);
    let start = Instant::now();
    let out = run_benchmark(&cfg, &reg, None, |_| Ok(Box::new(o.clone()) as Box<dyn Backend>), None).unwrap();
    let elapsed = start.elapsed();
    let ok = out.results.iter().filter(|r| r.success && r.steps <= 25).count();
    check(
        out.results.len() == 90 && ok == 90 && cross_floor && elapsed < Duration::from_secs(120),
        format!("{ok}/{} trials succeeded, multi-floor starts: {cross_floor}, {:.1}s", out.results.len(), elapsed.as_secs_f64()),
    )
}

fn c2_minimal_plan() -> Verdict {
    let reg = SkillRegistry::builtin();
    let o = oracle(&reg);
    let bs = buildings();
    let cfg = EngineConfig::default();
    let mut mismatches = Vec::new();
    let mut blocked_counts = Vec::new();
    for i in 0..20u64 {
        let task = TaskKind::ALL[(i % 3) as usize];
        let opts = if i < 10 {
            ScenarioOptions::default()
        } else {
            ScenarioOptions { blocker_prob: 1.0, ..Default::default() }
        };
        let s = randomize_with(&bs[(i % 3) as usize], task, 100 + i, &opts).unwrap();
        let sol = solve(s.world().unwrap(), &s.goal(), &reg, &cfg.noise, &cfg.skills, cfg.max_steps).unwrap();
        let (res, _) = run(&cfg, &o, None, &s, 0);
        if !sol.success || !res.success || sol.skills.len() != res.executed_skills() {
            mismatches.push(format!("seed {}: solver {} vs oracle {}", 100 + i, sol.skills.len(), res.executed_skills()));
        }
        let ws = s.world().unwrap();
        let start_at_elevator = ws.building().landmark(&s.start).is_some_and(|l| l.elevator);
        let pushes = sol.skills.iter().filter(|k| *k == "push_object_on_ground").count();
        if task != TaskKind::RearrangeChairs && !start_at_elevator && pushes >= 2 {
            blocked_counts.push(sol.skills.len());
        }
    }
    let reaches = !blocked_counts.is_empty() && blocked_counts.iter().all(|n| *n >= 12);
    check(
        mismatches.is_empty() && reaches,
        format!("20 scenarios, mismatches {mismatches:?}, cross-floor blocked skill counts {blocked_counts:?}"),
    )
}

fn bfs_len(grid: &[bool], n: i32, start: Cell, goal: Cell) -> Option<usize> {
    let idx = |c: Cell| (c.row * n + c.col) as usize;
    let mut dist = vec![usize::MAX; grid.len()];
    dist[idx(start)] = 0;
    let mut q = VecDeque::from([start]);
    while let Some(c) = q.pop_front() {
        if c == goal {
            return Some(dist[idx(c)]);
        }
        for nb in c.neighbors4() {
            if nb.row >= 0 && nb.col >= 0 && nb.row < n && nb.col < n && grid[idx(nb)] && dist[idx(nb)] == usize::MAX {
                dist[idx(nb)] = dist[idx(c)] + 1;
                q.push_back(nb);
            }
        }
    }
    None
}

fn c3_planner_bfs() -> Verdict {
    let n = 20;
    let mut rng = SeedHasher::new("acceptance-grids").rng();
    let (mut solvable, mut mismatches) = (0, 0);
    while solvable < 500 {
        let grid: Vec<bool> = (0..n * n).map(|_| rng.random_bool(0.7)).collect();
        let start = Cell::new(rng.random_range(0..n), rng.random_range(0..n));
        let goal = Cell::new(rng.random_range(0..n), rng.random_range(0..n));
        let free = |c: Cell| grid[(c.row * n + c.col) as usize];
        if !free(start) || !free(goal) {
            continue;
        }
        let Some(expected) = bfs_len(&grid, n, start, goal) else { continue };
        solvable += 1;
        match plan_on(n, n, free, start, goal, 1.0) {
            Ok(p) if p.len() == expected => {}
            _ => mismatches += 1,
        }
    }
    check(mismatches == 0, format!("{solvable} solvable grids, {mismatches} mismatches"))
}

fn c4_calibration() -> Verdict {
    let reg = SkillRegistry::builtin();
    let targets = [
        ("pick_up_object#low", 0.20),
        ("pick_up_object#high", 0.35),
        ("push_object_on_ground", 0.19),
        ("call_elevator", 0.05),
    ];
    let profile = OracleErrorProfile {
        wrong_param: targets.iter().map(|(k, p)| (k.to_string(), *p)).collect(),
        ..Default::default()
    };
    let backend = OracleBackend::new(profile, &reg.names()).unwrap();
    let data = generate_offline(&buildings(), 5000, 11).unwrap();
    let report = run_offline_eval(&data, Mode::Bumble, &backend, &reg).unwrap();
    let mut worst: f64 = 0.0;
    let mut parts = Vec::new();
    for (row, p) in targets {
        let r = report.rows.iter().find(|r| r.row == row).unwrap();
        let want = 100.0 * (1.0 - p);
        worst = worst.max((r.rate - want).abs());
        parts.push(format!("{row} {:.1}% (want {want:.1}%)", r.rate));
    }
    check(worst <= 2.0 && data.len() == 20_000, format!("{} instances; {}", data.len(), parts.join(", ")))
}

fn door_push_suite(seeds: std::ops::Range<u64>) -> Vec<Scenario> {
    let b1 = &buildings()[0];
    seeds
        .map(|seed| {
            let opts = if seed % 2 == 0 {
                ScenarioOptions { closed_door_prob: 1.0, blocker_prob: 0.0, max_wet_signs: 0, ..Default::default() }
            } else {
                ScenarioOptions { closed_door_prob: 0.0, blocker_prob: 1.0, max_wet_signs: 0, ..Default::default() }
            };
            randomize_with(b1, TaskKind::RetrieveSoda, seed, &opts).unwrap()
        })
        .collect()
}

fn c5_memory_efficacy() -> Verdict {
    let reg = SkillRegistry::builtin();
    let backend = LessonSensitiveOracle::new(&reg.names());
    let train_cfg = EngineConfig { mode: Mode::Come, annotate: true, ..Default::default() };
    let (mut preds, mut anns) = (Vec::new(), Vec::new());
    for s in door_push_suite(1000..1004) {
        let (_, log) = run(&train_cfg, &backend, None, &s, 0);
        preds.extend(log.predictions);
        anns.extend(log.annotations);
    }
    let store = curate_lessons(&preds, &anns, &backend, DEFAULT_LESSON_CAP).unwrap();
    let suite = door_push_suite(0..20);
    let rate = |mode: Mode, ltm: Option<&LongTermStore>| {
        let cfg = EngineConfig { mode, ..Default::default() };
        let ok = suite.iter().filter(|s| run(&cfg, &backend, ltm, s, 0).0.success).count();
        100.0 * ok as f64 / suite.len() as f64
    };
    let without = rate(Mode::Come, None);
    let with = rate(Mode::Bumble, Some(&store));
    check(
        with >= without + 50.0,
        format!("{} lessons; success with LTM {with:.0}% vs without {without:.0}%", store.len()),
    )
}

fn c6_recovery() -> Verdict {
    let reg = SkillRegistry::builtin();
    let o = oracle(&reg);
    let bs = buildings();
    let mut recovered = 0;
    for i in 0..20u64 {
        let task = if i % 2 == 0 { TaskKind::RetrieveSoda } else { TaskKind::RetrieveMarker };
        let s = randomize_with(&bs[(i % 3) as usize], task, 300 + i, &ScenarioOptions::default()).unwrap();
        let base = EngineConfig::default();
        let sol = solve(s.world().unwrap(), &s.goal(), &reg, &base.noise, &base.skills, base.max_steps).unwrap();
        let Some(k) = sol.skills.iter().position(|n| n == "pick_up_object") else { continue };
        let (floor, cell) = sol.poses[k];
        let noise = NoiseConfig {
            forced_nan: vec![ForcedNan { entity: s.target.clone().unwrap(), floor, cell }],
            ..Default::default()
        };
        let cfg = EngineConfig { noise, ..Default::default() };
        let (res, _) = run(&cfg, &o, None, &s, 0);
        let sk: &[SkillInvocation] = &res.skills;
        let faulted = sk.iter().any(|x| x.skill == "pick_up_object" && !x.success);
        let recovery = sk.windows(2).any(|w| w[0].skill == "move_base")
            && sk.iter().skip_while(|x| x.skill != "move_base").any(|x| x.skill == "pick_up_object" && x.success);
        if faulted && recovery && res.success {
            recovered += 1;
        }
    }
    check(recovered >= 19, format!("{recovered}/20 trials recovered with move_base then a successful pickup"))
}

struct Recorder<B> {
    inner: B,
    prompts: Mutex<Vec<Prompt>>,
}

impl<B: Backend> Backend for Recorder<B> {
    fn id(&self) -> &str {
        self.inner.id()
    }

    fn complete(&self, req: &BackendRequest) -> Result<BackendResponse, BackendError> {
        self.prompts.lock().unwrap().push(req.prompt.clone());
        self.inner.complete(req)
    }
}

fn lesson(key: &str) -> FailureLesson {
    FailureLesson {
        id: format!("fixture-{key}"),
        key: key.into(),
        instruction: "fixture".into(),
        scene: String::new(),
        subtask: "fixture".into(),
        skill: key.into(),
        predicted: "a".into(),
        truth: "b".into(),
        analysis: "Look twice.".into(),
    }
}

fn has_marker_id(text: &str) -> bool {
    let lower = text.to_ascii_lowercase();
    lower.contains("marker:")
        || lower.match_indices("marker ").any(|(i, m)| lower[i + m.len()..].starts_with(|c: char| c.is_ascii_digit()))
        || lower.match_indices('#').any(|(i, _)| lower[i + 1..].starts_with(|c: char| c.is_ascii_digit()))
}

fn c7_mode_contracts() -> Verdict {
    let reg = SkillRegistry::builtin();
    let mut store = LongTermStore::new(DEFAULT_LESSON_CAP);
    for k in [SKILL_SELECTION, "goto_landmark", "pick_up_object", "call_elevator", "use_elevator", "navigate_to_point_on_ground"] {
        store.insert(lesson(k));
    }
    let scenarios: Vec<Scenario> = (0..6)
        .map(|i| randomize_with(&buildings()[0], TaskKind::ALL[i % 3], 500 + i as u64, &ScenarioOptions::default()).unwrap())
        .collect();
    let sample = |mode: Mode| {
        let rec = Recorder { inner: oracle(&reg), prompts: Mutex::new(Vec::new()) };
        let cfg = EngineConfig { mode, ..Default::default() };
        for s in &scenarios {
            if rec.prompts.lock().unwrap().len() >= 50 {
                break;
            }
            run(&cfg, &rec, Some(&store), s, 0);
        }
        let mut p = rec.prompts.into_inner().unwrap();
        p.truncate(50);
        p
    };
    let mut failures = Vec::new();
    let bumble = sample(Mode::Bumble);
    let im = sample(Mode::Im);
    let come = sample(Mode::Come);
    let nocot = sample(Mode::BumbleNoCot);
    let nosom = sample(Mode::BumbleNoSom);
    let sizes = [&bumble, &im, &come, &nocot, &nosom].map(|v| v.len());
    if sizes.iter().any(|n| *n < 50) {
        failures.push(format!("samples below 50 prompts: {sizes:?}"));
    }
    if im.iter().any(|p| p.image_count() > 0) {
        failures.push("IM prompt with an image".into());
    }
    if come.iter().any(|p| p.flat_text().contains(LESSON_HEADER)) {
        failures.push("COME prompt with lessons".into());
    }
    if nocot.iter().any(|p| p.flat_text().contains(REASONING_INSTRUCTION)) {
        failures.push("noCoT prompt with the reasoning instruction".into());
    }
    if nosom.iter().filter(|p| p.stage == Stage::Parameter).any(|p| has_marker_id(&p.flat_text())) {
        failures.push("noSoM stage-2 prompt with a marker id".into());
    }
    // The same checks must trip on the full mode.
    let controls = bumble.iter().any(|p| p.image_count() > 0)
        && bumble.iter().any(|p| p.flat_text().contains(LESSON_HEADER))
        && bumble.iter().any(|p| p.flat_text().contains(REASONING_INSTRUCTION))
        && bumble.iter().filter(|p| p.stage == Stage::Parameter).any(|p| has_marker_id(&p.flat_text()));
    if !controls {
        failures.push("BUMBLE control prompts do not trip the checks".into());
    }
    let detail = if failures.is_empty() {
        format!("50 prompts per mode checked, controls trip on BUMBLE")
    } else {
        failures.join("; ")
    };
    check(failures.is_empty(), detail)
}

fn c8_replay() -> Verdict {
    let reg = SkillRegistry::builtin();
    let bs = buildings();
    let mut bad = Vec::new();
    let mut count = 0;
    for (i, task) in TaskKind::ALL.into_iter().enumerate() {
        let s = randomize_with(&bs[i], task, 700 + i as u64, &ScenarioOptions::default()).unwrap();
        let backends: Vec<Box<dyn Backend>> =
            vec![Box::new(oracle(&reg)), Box::new(LessonSensitiveOracle::new(&reg.names()))];
        for b in backends {
            let cfg = EngineConfig::default();
            let (first, log) = run(&cfg, b.as_ref(), None, &s, i);
            let replay = ReplayBackend::new(log.transcript.clone());
            let cfg = EngineConfig { oracle_context: false, ..Default::default() };
            let (second, _) = run(&cfg, &replay, None, &s, i);
            count += 1;
            if first.skills != second.skills || first.final_state_hash != second.final_state_hash {
                bad.push(format!("{task} via {}", b.id()));
            }
        }
    }
    check(bad.is_empty(), format!("{count} logged trials replayed, divergent: {bad:?}"))
}

fn record(step: usize, skill: &str, outcome: Outcome) -> StepRecord {
    StepRecord {
        step,
        kind: StepKind::Skill,
        scene: SceneRef::default(),
        subtask: String::new(),
        skill: skill.into(),
        params: vec![ParamRecord { name: "x".into(), marker: Some(1), value: "v".into() }],
        outcome,
        transcript: vec![],
    }
}

fn failed(records: Vec<StepRecord>) -> TrialResult {
    let mut stm = ShortTermMemory::default();
    for r in records {
        stm.append(r).unwrap();
    }
    TrialResult {
        task_id: "retrieve_soda".into(),
        mode: Mode::Bumble,
        seed: 0,
        phrasing: 0,
        instruction: "fixture".into(),
        success: false,
        steps: stm.len(),
        skills: vec![],
        category: FailureCategory::None,
        predicate_satisfied: false,
        violations: vec![],
        held_object: None,
        held_matches: false,
        wrong_presses: 0,
        final_state_hash: String::new(),
        wall_time_ms: 0,
        stm,
        terminal: None,
    }
}

fn c9_categorization() -> Verdict {
    let fail = |c: FailureCode| Outcome::fail(c, "fixture");
    let mut fixtures: Vec<(&str, TrialResult, FailureCategory)> = Vec::new();

    let mut t = failed(vec![record(1, "pick_up_object", Outcome::ok())]);
    t.held_object = Some("soda_can_2".into());
    fixtures.push(("holding regular soda", t, FailureCategory::WrongObject));

    let mut t = failed(vec![record(1, "call_elevator", Outcome::ok()), record(2, "use_elevator", Outcome::ok())]);
    t.wrong_presses = 1;
    fixtures.push(("wrong floor pressed", t, FailureCategory::WrongButton));

    let t = failed(vec![
        record(1, "push_object_on_ground", fail(FailureCode::Collision)),
        record(2, "push_object_on_ground", fail(FailureCode::Collision)),
        record(3, "goto_landmark", fail(FailureCode::Blocked)),
    ]);
    fixtures.push(("pushes into the wall", t, FailureCategory::CollisionReasoning));

    let t = failed(vec![
        record(1, "goto_landmark", fail(FailureCode::Blocked)),
        record(2, "goto_landmark", fail(FailureCode::Blocked)),
        record(3, "navigate_to_point_on_ground", fail(FailureCode::Unreachable)),
    ]);
    fixtures.push(("three failed drives", t, FailureCategory::NavigationStuck));

    let t = failed(vec![
        record(1, "navigate_to_point_on_ground", Outcome::ok()),
        record(2, "pick_up_object", fail(FailureCode::SensorFault)),
    ]);
    fixtures.push(("unrecovered depth fault", t, FailureCategory::SensorFault));

    let mut t = failed(vec![record(1, "push_object_on_ground", Outcome::ok())]);
    t.predicate_satisfied = true;
    t.violations = vec!["pushed delicate object vase_1".into()];
    fixtures.push(("pushed a vase", t, FailureCategory::SemanticViolation));

    let t = failed((1..=25).map(|i| record(i, "move_base", Outcome::ok())).collect());
    fixtures.push(("wandering", t, FailureCategory::StepBudget));

    let mut t = failed(vec![
        record(1, "call_elevator", Outcome::ok()),
        record(2, "pick_up_object", Outcome::ok()),
    ]);
    t.held_object = Some("soda_can_2".into());
    t.wrong_presses = 2;
    fixtures.push(("wrong object and wrong button", t, FailureCategory::WrongObject));

    let mut wrong = Vec::new();
    for (name, t, want) in &fixtures {
        let got = categorize_failure(t);
        if got.as_ref() != Ok(want) {
            wrong.push(format!("{name}: got {got:?}, want {want}"));
        }
    }
    let mut ok_trial = failed(vec![]);
    ok_trial.success = true;
    if categorize_failure(&ok_trial).is_ok() {
        wrong.push("successful trial was categorized".into());
    }
    check(wrong.is_empty(), format!("{} fixtures, wrong: {wrong:?}", fixtures.len()))
}

fn c10_live_smoke() -> Verdict {
    if std::env::var("MOMA_API_KEY").map_or(true, |k| k.is_empty()) {
        return Verdict::Skip("MOMA_API_KEY not set".into());
    }
    let provider = match std::env::var("MOMA_PROVIDER").as_deref() {
        Ok("anthropic") => Provider::Anthropic,
        _ => Provider::Openai,
    };
    let default_url = match provider {
        Provider::Anthropic => "https://api.anthropic.com/v1/messages",
        Provider::Openai => "https://api.openai.com/v1/chat/completions",
    };
    let cfg = HttpConfig {
        provider,
        url: std::env::var("MOMA_API_URL").unwrap_or_else(|_| default_url.into()),
        model: std::env::var("MOMA_MODEL").unwrap_or_else(|_| "gpt-4o".into()),
        temperature: 0.0,
        max_tokens: 1024,
        api_key_env: "MOMA_API_KEY".into(),
        timeout_secs: 120,
    };
    let backend = match HttpBackend::new(cfg) {
        Ok(b) => b,
        Err(e) => return Verdict::Fail(e.to_string()),
    };
    let s = randomize_with(&buildings()[0], TaskKind::RetrieveSoda, 1, &ScenarioOptions::default()).unwrap();
    let engine_cfg = EngineConfig { max_steps: 5, oracle_context: false, ..Default::default() };
    let (res, _) = run(&engine_cfg, &backend, None, &s, 0);
    let crashes = res
        .stm
        .records
        .iter()
        .filter(|r| matches!(r.outcome.code(), Some(FailureCode::Aborted) | Some(FailureCode::ParseFailure)))
        .count();
    check(
        res.steps >= 5 && crashes == 0,
        format!("{} decision steps, {crashes} transport or parse failures", res.steps),
    )
}

fn main() {
    let criteria: [(&str, fn() -> Verdict); 10] = [
        ("oracle end-to-end", c1_oracle_end_to_end),
        ("minimal-plan check", c2_minimal_plan),
        ("planner oracle equivalence", c3_planner_bfs),
        ("calibrated error injection", c4_calibration),
        ("memory efficacy", c5_memory_efficacy),
        ("recovery behavior", c6_recovery),
        ("mode contracts", c7_mode_contracts),
        ("replay determinism", c8_replay),
        ("failure categorization", c9_categorization),
        ("live smoke test", c10_live_smoke),
    ];
    let mut failed = 0;
    for (i, (name, f)) in criteria.iter().enumerate() {
        let start = Instant::now();
        let verdict = catch_unwind(AssertUnwindSafe(f)).unwrap_or_else(|e| {
            let msg = e
                .downcast_ref::<String>()
                .cloned()
                .or_else(|| e.downcast_ref::<&str>().map(|s| s.to_string()))
                .unwrap_or_default();
            Verdict::Fail(format!("panicked: {msg}"))
        });
        let secs = start.elapsed().as_secs_f64();
        let (tag, detail) = match verdict {
            Verdict::Pass(d) => ("PASS", d),
            Verdict::Skip(d) => ("SKIP", d),
            Verdict::Fail(d) => {
                failed += 1;
                ("FAIL", d)
            }
        };
        println!("criterion {:>2} {tag} {name}: {detail} [{secs:.1}s]", i + 1);
    }
    if failed > 0 {
        println!("{failed} acceptance criteria failed");
        std::process::exit(1);
    }
}
