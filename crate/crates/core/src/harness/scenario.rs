//! Seeded scenario randomizer over a base building.

use std::collections::BTreeMap;

use rand::seq::{IndexedRandom, SliceRandom};
use rand::Rng;
use rand_chacha::ChaCha8Rng;

use super::{TaskError, TaskKind, TaskSpec};
use crate::nav::reachable_from;
use crate::percept::DISTRACTOR_VOCAB;
use crate::rng::SeedHasher;
use crate::world::{
    Cell, DoorState, FloorId, GoalSpec, ObjectConfig, Occupancy, RobotStart, WorldConfig, WorldError, WorldState,
};

pub const MAX_ATTEMPTS: usize = 100;

const SODA_BRANDS: [&str; 4] = ["coke", "pepsi", "dr pepper", "sprite"];
const MARKER_COLORS: [&str; 4] = ["blue", "green", "red", "black"];

#[derive(Debug, Clone, PartialEq)]
pub struct ScenarioOptions {
    /// Inclusive bounds on the number of distractor objects.
    pub distractors: (usize, usize),
    /// Put distractors in the target room before using other rooms.
    pub cluster: bool,
    pub blocker_prob: f64,
    pub closed_door_prob: f64,
    pub max_wet_signs: usize,
    /// Start on a floor other than the one the task happens on.
    pub cross_floor: bool,
}

impl Default for ScenarioOptions {
    fn default() -> Self {
        Self {
            distractors: (5, 25),
            cluster: false,
            blocker_prob: 0.5,
            closed_door_prob: 0.3,
            max_wet_signs: 3,
            cross_floor: true,
        }
    }
}

#[derive(Debug, Clone, PartialEq, thiserror::Error)]
pub enum ScenarioError {
    #[error("building {building} has no {kind} room")]
    NoRoom { building: String, kind: &'static str },
    #[error("building {0} has no reception area configured")]
    NoReception(String),
    #[error("degenerate scenario: no reachable layout after {0} attempts")]
    Degenerate(usize),
    #[error(transparent)]
    World(#[from] WorldError),
    #[error(transparent)]
    Task(#[from] TaskError),
}

/// A sampled scenario plus the facts the task and the tests need.
#[derive(Debug, Clone, PartialEq)]
pub struct Scenario {
    pub config: WorldConfig,
    pub task: TaskKind,
    pub seed: u64,
    pub start: String,
    /// Retrieval target object id.
    pub target: Option<String>,
    pub distractors: usize,
    pub blockers: Vec<String>,
    pub closed_doors: Vec<String>,
    pub wet_signs: usize,
}

impl Scenario {
    pub fn world(&self) -> Result<WorldState, WorldError> {
        self.config.build()
    }

    pub fn goal(&self) -> GoalSpec {
        self.task_spec(0).expect("randomizer only emits valid scenarios").goal
    }

    pub fn task_spec(&self, phrasing: usize) -> Result<TaskSpec, TaskError> {
        match self.task {
            TaskKind::RearrangeChairs => {
                let r = self.config.randomization.as_ref().and_then(|r| r.reception.as_ref());
                let region = r.map(|r| r.goal_region.clone()).ok_or(TaskError::MissingRegion)?;
                TaskSpec::arrange(phrasing, self.seed, region)
            }
            kind => TaskSpec::retrieve(kind, phrasing, self.seed, &self.start),
        }
    }

    /// Canonical bytes of the sampled configuration.
    pub fn to_json(&self) -> String {
        self.config.to_json()
    }
}

pub fn randomize_scenario(base: &WorldConfig, task: TaskKind, seed: u64) -> Result<Scenario, ScenarioError> {
    randomize_with(base, task, seed, &ScenarioOptions::default())
}

pub fn randomize_with(
    base: &WorldConfig,
    task: TaskKind,
    seed: u64,
    opts: &ScenarioOptions,
) -> Result<Scenario, ScenarioError> {
    let mut base = base.clone();
    base.objects.clear();
    let static_world = base.build()?;
    let mut rng = SeedHasher::new("scenario").str(&base.name).str(task.as_str()).u64(seed).rng();
    for _ in 0..MAX_ATTEMPTS {
        let s = sample(&base, &static_world, task, seed, opts, &mut rng)?;
        let ws = s.world()?;
        if solvable(&ws, &s) {
            return Ok(s);
        }
    }
    Err(ScenarioError::Degenerate(MAX_ATTEMPTS))
}

/// Counter cells of a room: furniture cells next to a free cell of the room.
fn counters(ws: &WorldState, floor: FloorId, room: &str) -> Vec<Cell> {
    let Some(fm) = ws.building().floor(floor) else { return vec![] };
    let Some(room) = fm.rooms.iter().find(|r| r.name == room) else { return vec![] };
    let mut out = Vec::new();
    for row in room.min.row..=room.max.row {
        for col in room.min.col..=room.max.col {
            let c = Cell::new(row, col);
            if fm.grid.get(c) == Some(Occupancy::Obstacle) && c.neighbors4().iter().any(|n| room.cells.contains(n)) {
                out.push(c);
            }
        }
    }
    out
}

fn rooms_of_kind(ws: &WorldState, kind: &str) -> Vec<(FloorId, String)> {
    ws.building()
        .floors
        .values()
        .flat_map(|f| f.rooms.iter().filter(|r| r.kind == kind).map(move |r| (f.floor_id, r.name.clone())))
        .collect()
}

fn small_object(id: String, category: &str, attrs: &[(&str, &str)], floor: FloorId, cell: Cell) -> ObjectConfig {
    ObjectConfig {
        id,
        category: category.into(),
        attributes: attrs.iter().map(|(k, v)| (k.to_string(), v.to_string())).collect(),
        floor,
        cell,
        offset: [0.0, 0.0],
        footprint: None,
        graspable: true,
        heavy: false,
        delicate: false,
        pushable: false,
    }
}

fn floor_object(id: String, category: &str, attrs: BTreeMap<String, String>, floor: FloorId, cell: Cell) -> ObjectConfig {
    let heavy = category == "chair";
    ObjectConfig {
        id,
        category: category.into(),
        attributes: attrs,
        floor,
        cell,
        offset: [0.0, 0.0],
        footprint: None,
        graspable: false,
        heavy,
        delicate: false,
        pushable: category != "wet_floor_sign",
    }
}

/// Hands out `category_N` ids.
#[derive(Default)]
struct Ids(BTreeMap<String, usize>);

impl Ids {
    fn next(&mut self, category: &str) -> String {
        let n = self.0.entry(category.to_string()).or_default();
        *n += 1;
        format!("{category}_{n}")
    }
}

fn sample(
    base: &WorldConfig,
    ws: &WorldState,
    task: TaskKind,
    seed: u64,
    opts: &ScenarioOptions,
    rng: &mut ChaCha8Rng,
) -> Result<Scenario, ScenarioError> {
    let b = ws.building();
    let mut cfg = base.clone();
    cfg.seed = seed;
    let mut ids = Ids::default();
    let mut objects = Vec::new();
    let mut target = None;

    let (task_floor, task_room) = match task {
        TaskKind::RearrangeChairs => {
            let r = b
                .randomization
                .as_ref()
                .and_then(|r| r.reception.clone())
                .ok_or_else(|| ScenarioError::NoReception(b.name.clone()))?;
            let room = b.landmark(&r.landmark).and_then(|l| l.room.clone()).unwrap_or_default();
            let n = rng.random_range(3..=r.chair_slots.len().max(3)).min(r.chair_slots.len());
            let mut slots = r.chair_slots.clone();
            slots.shuffle(rng);
            slots.truncate(n);
            slots.sort();
            for c in slots {
                let attrs = BTreeMap::from([("group".to_string(), "reception".to_string())]);
                objects.push(floor_object(ids.next("chair"), "chair", attrs, r.floor, c));
            }
            (r.floor, room)
        }
        TaskKind::RetrieveSoda | TaskKind::RetrieveMarker => {
            let kind = if task == TaskKind::RetrieveSoda { "kitchen" } else { "office" };
            let rooms = rooms_of_kind(ws, kind);
            let (floor, room) = rooms
                .choose(rng)
                .cloned()
                .ok_or(ScenarioError::NoRoom { building: b.name.clone(), kind })?;
            (floor, room)
        }
    };

    let floors: Vec<FloorId> = b.floors.keys().copied().collect();
    let start_floors: Vec<FloorId> = if opts.cross_floor && floors.len() > 1 {
        floors.iter().copied().filter(|f| *f != task_floor).collect()
    } else {
        vec![task_floor]
    };
    let start_floor = *start_floors.choose(rng).expect("at least one floor");
    let starts: Vec<&str> = b
        .landmark_graph
        .on_floor(start_floor)
        .filter(|l| l.room.as_deref() != Some(task_room.as_str()) || start_floor != task_floor)
        .map(|l| l.id.as_str())
        .collect();
    let start = starts.choose(rng).expect("every floor has a landmark").to_string();
    cfg.robot_start = RobotStart::Landmark { landmark: start.clone() };
    let relevant = [start_floor, task_floor];

    // Counter cells: target room first, then the rest of the task floor.
    let mut room_counters = counters(ws, task_floor, &task_room);
    room_counters.shuffle(rng);
    let mut other_counters: Vec<(FloorId, Cell)> = b
        .floors
        .values()
        .filter(|f| relevant.contains(&f.floor_id))
        .flat_map(|f| {
            f.rooms
                .iter()
                .filter(|r| !(f.floor_id == task_floor && r.name == task_room))
                .flat_map(|r| counters(ws, f.floor_id, &r.name).into_iter().map(|c| (f.floor_id, c)))
        })
        .collect();
    other_counters.shuffle(rng);

    if task != TaskKind::RearrangeChairs {
        let Some(cell) = room_counters.pop() else {
            return Err(ScenarioError::NoRoom { building: b.name.clone(), kind: "counter" });
        };
        let obj = match task {
            TaskKind::RetrieveSoda => {
                let brand = *SODA_BRANDS.choose(rng).expect("non-empty");
                small_object(ids.next("soda_can"), "soda_can", &[("brand", brand), ("diet", "true")], task_floor, cell)
            }
            _ => {
                let color = *MARKER_COLORS.choose(rng).expect("non-empty");
                small_object(ids.next("marker"), "marker", &[("color", color)], task_floor, cell)
            }
        };
        target = Some(obj.id.clone());
        objects.push(obj);
    }

    let n = rng.random_range(opts.distractors.0..=opts.distractors.1);
    let mut slots: Vec<(FloorId, Cell)> = if opts.cluster {
        room_counters.iter().map(|c| (task_floor, *c)).chain(other_counters.iter().copied()).collect()
    } else {
        let mut all: Vec<(FloorId, Cell)> =
            room_counters.iter().map(|c| (task_floor, *c)).chain(other_counters.iter().copied()).collect();
        all.shuffle(rng);
        all
    };
    slots.truncate(n);
    if slots.len() < n {
        return Err(ScenarioError::NoRoom { building: b.name.clone(), kind: "distractor" });
    }
    let target_brand = objects.iter().find_map(|o| o.attributes.get("brand").cloned());
    for (i, (floor, cell)) in slots.into_iter().enumerate() {
        let obj = if task == TaskKind::RetrieveSoda && rng.random_bool(0.3) {
            // The first regular can shares the target's brand.
            let brand = match (&target_brand, i) {
                (Some(b), 0) => b.clone(),
                _ => SODA_BRANDS.choose(rng).expect("non-empty").to_string(),
            };
            small_object(ids.next("soda_can"), "soda_can", &[("brand", &brand), ("diet", "false")], floor, cell)
        } else {
            let cat = *DISTRACTOR_VOCAB.choose(rng).expect("non-empty");
            small_object(ids.next(cat), cat, &[], floor, cell)
        };
        objects.push(obj);
    }

    let hints = b.randomization.clone().unwrap_or_default();
    let mut blockers = Vec::new();
    for slot in hints.blocker_slots.iter().filter(|s| relevant.contains(&s.floor)) {
        if rng.random_bool(opts.blocker_prob) {
            let cat = if rng.random_bool(0.5) { "box" } else { "chair" };
            let id = ids.next(cat);
            blockers.push(id.clone());
            objects.push(floor_object(id, cat, BTreeMap::new(), slot.floor, slot.cell));
        }
    }
    let mut wet_cells: Vec<_> = hints.wet_sign_cells.iter().filter(|s| relevant.contains(&s.floor)).collect();
    wet_cells.shuffle(rng);
    let wet = rng.random_range(0..=opts.max_wet_signs.min(wet_cells.len()));
    for slot in wet_cells.into_iter().take(wet) {
        objects.push(floor_object(ids.next("wet_floor_sign"), "wet_floor_sign", BTreeMap::new(), slot.floor, slot.cell));
    }
    let mut closed = Vec::new();
    for d in cfg.doors.iter_mut().filter(|d| relevant.contains(&d.floor)) {
        d.state = if rng.random_bool(opts.closed_door_prob) { DoorState::Closed } else { DoorState::Open };
        if d.state == DoorState::Closed {
            closed.push(d.id.clone());
        }
    }

    cfg.objects = objects;
    Ok(Scenario {
        config: cfg,
        task,
        seed,
        start,
        target,
        distractors: n,
        blockers,
        closed_doors: closed,
        wet_signs: wet,
    })
}

/// Every task object has an approachable side connected to its floor's
/// elevator, and the start landmark is connected too.
fn solvable(ws: &WorldState, s: &Scenario) -> bool {
    let b = ws.building();
    let anchor = |floor: FloorId| {
        b.landmark_graph
            .elevator_landmark(floor)
            .or_else(|| b.landmark_graph.on_floor(floor).next())
            .map(|l| l.cell)
    };
    let connected = |floor: FloorId, cells: &[Cell]| {
        let Some(a) = anchor(floor) else { return false };
        let reach = reachable_from(ws, floor, a);
        let cols = b.floor(floor).map(|f| f.grid.cols()).unwrap_or(0);
        cells.iter().any(|c| c.row >= 0 && c.col >= 0 && reach.get((c.row * cols + c.col) as usize) == Some(&true))
    };
    let goal = s.goal();
    let task_objects: Vec<_> = ws.objects.values().filter(|o| o.matches(&goal.filter)).collect();
    if task_objects.is_empty() {
        return false;
    }
    for o in task_objects {
        let Some(f) = o.floor() else { return false };
        let sides: Vec<Cell> = o
            .footprint
            .iter()
            .flat_map(|c| c.neighbors4())
            .filter(|c| !o.footprint.contains(c) && ws.is_free(f, *c))
            .collect();
        if !connected(f, &sides) {
            return false;
        }
    }
    match b.landmark(&s.start) {
        Some(l) => connected(l.floor, &[l.cell]),
        None => false,
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn base() -> WorldConfig {
        WorldConfig::from_json(include_str!("../../../../scenarios/b1.json")).unwrap()
    }

    #[test]
    fn same_seed_same_bytes() {
        let a = randomize_scenario(&base(), TaskKind::RetrieveSoda, 7).unwrap();
        let b = randomize_scenario(&base(), TaskKind::RetrieveSoda, 7).unwrap();
        assert_eq!(a.to_json(), b.to_json());
    }

    #[test]
    fn seeds_differ() {
        let a = randomize_scenario(&base(), TaskKind::RetrieveSoda, 1).unwrap();
        let b = randomize_scenario(&base(), TaskKind::RetrieveSoda, 2).unwrap();
        assert_ne!(a.to_json(), b.to_json());
    }

    #[test]
    fn start_is_on_another_floor() {
        for seed in 0..20 {
            let s = randomize_scenario(&base(), TaskKind::RetrieveMarker, seed).unwrap();
            let ws = s.world().unwrap();
            let target = &ws.objects[s.target.as_ref().unwrap()];
            assert_ne!(target.floor(), Some(ws.robot.floor));
        }
    }

    #[test]
    fn chairs_land_on_reception_slots() {
        let s = randomize_scenario(&base(), TaskKind::RearrangeChairs, 3).unwrap();
        let ws = s.world().unwrap();
        let chairs = ws.objects.values().filter(|o| o.matches(&s.goal().filter)).count();
        assert!((3..=4).contains(&chairs));
        assert!(s.target.is_none());
    }
}
