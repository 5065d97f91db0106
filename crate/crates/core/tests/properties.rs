use std::collections::VecDeque;
use std::sync::OnceLock;

use proptest::prelude::*;

use moma_core::backends::{OracleBackend, OracleErrorProfile};
use moma_core::engine::{Engine, EngineConfig, Mode};
use moma_core::harness::{generate_offline, randomize_with, run_offline_eval, OfflineInstance, ScenarioOptions, TaskKind};
use moma_core::memory::{FailureLesson, LongTermStore};
use moma_core::nav::plan_on;
use moma_core::skills::SkillRegistry;
use moma_core::world::{apply_push, Cell, RelDir, WorldConfig, PUSH_DISTANCE};

fn building(name: &str) -> WorldConfig {
    let path = format!("{}/../../scenarios/{name}.json", env!("CARGO_MANIFEST_DIR"));
    WorldConfig::from_json(&std::fs::read_to_string(path).unwrap()).unwrap()
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

fn small_dataset() -> &'static [OfflineInstance] {
    static DATA: OnceLock<Vec<OfflineInstance>> = OnceLock::new();
    DATA.get_or_init(|| generate_offline(&[building("b1"), building("b2")], 150, 3).unwrap())
}

fn lesson(key: &str, i: usize) -> FailureLesson {
    FailureLesson {
        id: format!("{key}-{i}"),
        key: key.into(),
        instruction: format!("instruction {i}"),
        scene: "scene".into(),
        subtask: "subtask".into(),
        skill: key.into(),
        predicted: "left".into(),
        truth: "right".into(),
        analysis: format!("analysis {i}"),
    }
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(64))]

    #[test]
    fn astar_length_matches_bfs(
        n in 2i32..16,
        cells in proptest::collection::vec(proptest::bool::weighted(0.7), 256),
        s in (0usize..256, 0usize..256),
    ) {
        let grid: Vec<bool> = cells[..(n * n) as usize].to_vec();
        let at = |k: usize| Cell::new((k as i32 % (n * n)) / n, (k as i32 % (n * n)) % n);
        let (start, goal) = (at(s.0), at(s.1));
        let free = |c: Cell| grid[(c.row * n + c.col) as usize];
        prop_assume!(free(start) && free(goal));
        let planned = plan_on(n, n, free, start, goal, 1.0).ok().map(|p| p.len());
        prop_assert_eq!(planned, bfs_len(&grid, n, start, goal));
    }

    #[test]
    fn lessons_survive_save_and_load(cap in 1usize..5, counts in proptest::collection::vec(0usize..8, 1..4)) {
        let mut store = LongTermStore::new(cap);
        for (k, &count) in counts.iter().enumerate() {
            for i in 0..count {
                store.insert(lesson(&format!("skill_{k}"), i));
            }
        }
        for (k, &count) in counts.iter().enumerate() {
            let kept = store.retrieve(&format!("skill_{k}"));
            prop_assert_eq!(kept.len(), count.min(cap));
            // earliest lessons are the ones kept
            let ids: Vec<String> = kept.iter().map(|l| l.id.clone()).collect();
            let want: Vec<String> = (0..count.min(cap)).map(|i| format!("skill_{k}-{i}")).collect();
            prop_assert_eq!(ids, want);
        }
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("ltm.json");
        store.save(&path).unwrap();
        prop_assert_eq!(LongTermStore::load(&path).unwrap(), store);
    }
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(12))]

    #[test]
    fn trials_are_deterministic(seed in 0u64..1000, task in 0usize..3, noisy in any::<bool>()) {
        let task = TaskKind::ALL[task];
        let s = randomize_with(&building("b1"), task, seed, &ScenarioOptions::default()).unwrap();
        let reg = SkillRegistry::builtin();
        let profile = if noisy {
            OracleErrorProfile { wrong_skill: 0.1, wrong_param: [("pick_up_object".to_string(), 0.3)].into(), seed }
        } else {
            OracleErrorProfile::default()
        };
        let backend = OracleBackend::new(profile, &reg.names()).unwrap();
        let cfg = EngineConfig::default();
        let spec = s.task_spec(0).unwrap();
        let engine = Engine::new(&cfg, &backend, &reg);
        let (a, la) = engine.run_trial(&spec, s.world().unwrap());
        let (b, lb) = engine.run_trial(&spec, s.world().unwrap());
        prop_assert_eq!(&a.final_state_hash, &b.final_state_hash);
        prop_assert_eq!(&a.skills, &b.skills);
        prop_assert_eq!(a.category, b.category);
        prop_assert_eq!(la.transcript.len(), lb.transcript.len());
        let again = randomize_with(&building("b1"), task, seed, &ScenarioOptions::default()).unwrap();
        prop_assert_eq!(again.to_json(), s.to_json());
    }

    #[test]
    fn pushes_conserve_objects(seed in 0u64..500, dir in 0usize..3) {
        let opts = ScenarioOptions { blocker_prob: 1.0, cross_floor: false, ..Default::default() };
        let s = randomize_with(&building("b1"), TaskKind::RetrieveSoda, seed, &opts).unwrap();
        let mut ws = s.world().unwrap();
        let Some(blocker) = s.blockers.first().cloned() else { return Ok(()) };
        let floor = ws.objects[&blocker].floor().unwrap();
        prop_assume!(floor == ws.robot.floor);
        // stand right next to the blocker so the push is in range
        let near = ws.objects[&blocker]
            .footprint
            .iter()
            .flat_map(|c| c.neighbors4())
            .find(|c| ws.is_free(floor, *c));
        prop_assume!(near.is_some());
        ws.robot.cell = near.unwrap();
        let before = ws.clone();
        let out = apply_push(&mut ws, &blocker, RelDir::PUSHABLE[dir], PUSH_DISTANCE);
        prop_assert_eq!(ws.objects.len(), before.objects.len());
        for (id, o) in &before.objects {
            let now = &ws.objects[id];
            prop_assert_eq!(now.footprint.len(), o.footprint.len());
            if id != &blocker {
                prop_assert_eq!(now, o);
            }
        }
        if out.success {
            let moved = &ws.objects[&blocker];
            prop_assert!(moved.footprint.iter().all(|c| ws.occupant_except(floor, *c, &blocker).is_none()));
            prop_assert!(!moved.footprint.contains(&ws.robot.cell));
        } else {
            prop_assert_eq!(ws.state_hash(), before.state_hash());
        }
    }

    /// The oracle's mistakes depend on the decision, never on how the
    /// instance is worded.
    #[test]
    fn offline_outcomes_ignore_wording(p in 0.0f64..1.0, k in 0usize..600) {
        let data = small_dataset();
        let inst = data[k % data.len()].clone();
        let mut reworded = inst.clone();
        reworded.instruction = format!("please, {}", inst.instruction.to_uppercase());
        reworded.subtask = format!("{} now", inst.subtask);
        let reg = SkillRegistry::builtin();
        let profile = OracleErrorProfile { wrong_param: [(inst.skill.clone(), p)].into(), ..Default::default() };
        let backend = OracleBackend::new(profile, &reg.names()).unwrap();
        let a = run_offline_eval(&[inst], Mode::Bumble, &backend, &reg).unwrap();
        let b = run_offline_eval(&[reworded], Mode::Bumble, &backend, &reg).unwrap();
        prop_assert_eq!(&a.outcomes, &b.outcomes);
    }

    #[test]
    fn error_rate_tracks_profile(p in 0.0f64..1.0) {
        let data = small_dataset();
        let reg = SkillRegistry::builtin();
        let profile = OracleErrorProfile {
            wrong_param: ["pick_up_object", "push_object_on_ground", "call_elevator"]
                .iter()
                .map(|s| (s.to_string(), p))
                .collect(),
            ..Default::default()
        };
        let backend = OracleBackend::new(profile, &reg.names()).unwrap();
        let report = run_offline_eval(data, Mode::Bumble, &backend, &reg).unwrap();
        let n = data.len() as f64;
        let correct = report.outcomes.iter().filter(|o| o.correct).count() as f64;
        let sigma = (p * (1.0 - p) / n).sqrt();
        prop_assert!((correct / n - (1.0 - p)).abs() <= 5.0 * sigma + 1e-9, "p {p}: {}", correct / n);
    }
}
