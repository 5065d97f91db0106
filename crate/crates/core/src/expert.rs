//! Reactive ground-truth policy over the full world state. The oracle
//! backends answer from it and offline annotations are produced with it.

use crate::memory::{StepKind, StepRecord};
use crate::nav::{nearest_ground_point, plan_route, traverse};
use crate::percept::{DetectionKind, Observation};
use crate::world::{
    apply_move_base, apply_push, check_task_success, ButtonAction, CallDirection, Cell, FailureCode, FloorId,
    GoalSpec, Heading, Landmark, Object, PanelRef, RelDir, Side, WorldState, INTERACT_RANGE, PUSH_DISTANCE,
    PUSH_RANGE,
};

/// Range within which the door skill aligns to a closed door, meters.
const DOOR_RANGE: f64 = 3.0;

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct ExpertAction {
    pub subtask: String,
    pub skill: String,
    /// Resolved parameter values, in the form `Candidate::resolved` uses.
    pub params: Vec<String>,
}

impl ExpertAction {
    fn new(subtask: impl Into<String>, skill: &str, params: Vec<String>) -> Self {
        Self { subtask: subtask.into(), skill: skill.into(), params }
    }

    pub fn done() -> Self {
        Self::new("The task is complete.", "done", vec![])
    }
}

/// Next action for the current state. `history` is the trial's STM.
pub fn decide(ws: &WorldState, goal: &GoalSpec, obs: &Observation, history: &[StepRecord]) -> ExpertAction {
    if check_task_success(ws, goal).unwrap_or(false) {
        return ExpertAction::done();
    }
    let last = history.iter().rev().find(|r| r.kind == StepKind::Skill);
    if let Some(last) = last {
        if let Some(a) = recover(ws, goal, obs, last) {
            return a;
        }
    }
    intent(ws, goal, obs)
}

fn recover(ws: &WorldState, goal: &GoalSpec, obs: &Observation, last: &StepRecord) -> Option<ExpertAction> {
    match last.outcome.code()? {
        FailureCode::SensorFault if last.skill == "pick_up_object" => {
            let id = last.outcome.blocking_entity()?;
            let dir = reposition_direction(ws, id)?;
            Some(ExpertAction::new(
                format!("Shift the base so the {} can be measured again.", object_name(ws, id)),
                "move_base",
                vec![dir.as_str().into()],
            ))
        }
        FailureCode::Blocked => {
            let next = intent(ws, goal, obs);
            let blocker = simulate_blocker(ws, &next)?;
            clear_action(ws, obs, &next, &blocker)
        }
        _ => None,
    }
}

/// Entity that would stop the navigation in `action`, if any.
fn simulate_blocker(ws: &WorldState, action: &ExpertAction) -> Option<String> {
    let goal = nav_goal(ws, action)?;
    let path = plan_route(ws, goal).ok()?;
    let mut w = ws.clone();
    let out = traverse(&mut w, &path);
    match out.code() {
        Some(FailureCode::Blocked) => out.blocking_entity().map(str::to_string),
        _ => None,
    }
}

fn nav_goal(ws: &WorldState, action: &ExpertAction) -> Option<Cell> {
    match action.skill.as_str() {
        "goto_landmark" => ws.building().landmark(&action.params[0]).map(|l| l.cell),
        "navigate_to_point_on_ground" => nearest_ground_point(ws, &action.params[0]).ok(),
        _ => None,
    }
}

fn clear_action(ws: &WorldState, obs: &Observation, next: &ExpertAction, blocker: &str) -> Option<ExpertAction> {
    if let Some(door) = ws.building().door(blocker) {
        if ws.robot_distance_to_door(&door.id)? > DOOR_RANGE + 1e-9 {
            return None;
        }
        let side = door_open_side(ws, blocker)?;
        return Some(ExpertAction::new(
            "Open the closed door blocking the way.",
            "open_door",
            vec![side.as_str().into()],
        ));
    }
    let obj = ws.object(blocker)?;
    if !obj.pushable || obs.detection(blocker).is_none() {
        return None;
    }
    let goal = nav_goal(ws, next)?;
    let dir = clearing_push_direction(ws, blocker, goal)?;
    Some(ExpertAction::new(
        format!("Push the {} out of the way.", object_name(ws, blocker)),
        "push_object_on_ground",
        vec![blocker.into(), dir.as_str().into()],
    ))
}

/// Side that opens `door_id` for the stance the door skill will take from
/// the robot's current cell.
pub fn door_open_side(ws: &WorldState, door_id: &str) -> Option<Side> {
    let door = ws.building().door(door_id)?;
    let cell = door.cells[0];
    let cs = ws.cell_size();
    let robot = ws.robot_point();
    let mut sides = [cell.step(door.approach.opposite()), cell.step(door.approach)];
    sides.sort_by(|a, b| {
        a.center(cs)
            .dist(robot)
            .total_cmp(&b.center(cs).dist(robot))
            .then(a.cmp(b))
    });
    let heading = Heading::between(sides[0], cell)?;
    Some(door.apparent_hinge(heading).opposite())
}

/// Push direction after which the route to `goal` no longer crosses the
/// object. Falls back to the first push that succeeds at all.
pub fn clearing_push_direction(ws: &WorldState, object_id: &str, goal: Cell) -> Option<RelDir> {
    let mut fallback = None;
    for d in [RelDir::Left, RelDir::Right, RelDir::Forward] {
        let mut w = ws.clone();
        let out = apply_push(&mut w, object_id, d, PUSH_DISTANCE);
        if !out.success || !out.violations.is_empty() {
            continue;
        }
        fallback.get_or_insert(d);
        let footprint = &w.objects[object_id].footprint;
        if let Ok(path) = plan_route(&w, goal) {
            if !path.cells.iter().any(|c| footprint.contains(c)) {
                return Some(d);
            }
        }
    }
    fallback
}

/// Direction that moves the robot to a fresh viewpoint while keeping the
/// object within reach and view.
pub fn reposition_direction(ws: &WorldState, object_id: &str) -> Option<RelDir> {
    let mut fallback = None;
    for d in [RelDir::Left, RelDir::Right, RelDir::Backward, RelDir::Forward] {
        let mut w = ws.clone();
        if !apply_move_base(&mut w, d).success {
            continue;
        }
        fallback.get_or_insert(d);
        let p = w.objects.get(object_id).and_then(|o| o.position(w.cell_size()));
        let reach = w.robot_distance_to(object_id).is_some_and(|x| x <= w.robot.arm_reach + 1e-9);
        let in_view = p.is_some_and(|p| {
            crate::world::bearing(w.robot_point(), w.robot.heading, p).abs()
                <= (crate::percept::FOV_DEG / 2.0).to_radians()
        });
        if reach && in_view {
            return Some(d);
        }
    }
    fallback
}

fn object_name(ws: &WorldState, id: &str) -> String {
    ws.object(id).map(|o| o.category.replace('_', " ")).unwrap_or_else(|| id.to_string())
}

/// The object a retrieval goal is after: matching, not held, nearest floor
/// first, then by id.
pub fn retrieval_target<'a>(ws: &'a WorldState, goal: &GoalSpec) -> Option<&'a Object> {
    ws.objects
        .values()
        .filter(|o| o.pose.is_some() && o.matches(&goal.filter))
        .min_by_key(|o| (o.floor() != Some(ws.robot.floor), o.id.clone()))
}

/// Landmark to drive to for reaching `cell`: the landmark of its room, or
/// the closest landmark on the floor.
pub fn landmark_near(ws: &WorldState, floor: FloorId, cell: Cell) -> Option<&Landmark> {
    let b = ws.building();
    if let Some(room) = b.floor(floor).and_then(|f| f.room_at(cell)) {
        if let Some(l) = b.landmark_graph.for_room(&room.name) {
            return Some(l);
        }
    }
    b.landmark_graph
        .on_floor(floor)
        .filter(|l| !l.elevator)
        .min_by_key(|l| (l.cell.manhattan(cell), l.id.clone()))
}

fn goto(l: &Landmark) -> ExpertAction {
    ExpertAction::new(format!("Go to the {}.", l.label), "goto_landmark", vec![l.id.clone()])
}

fn intent(ws: &WorldState, goal: &GoalSpec, obs: &Observation) -> ExpertAction {
    match goal.predicate.as_str() {
        "arrange" => arrange_intent(ws, goal, obs),
        _ => retrieve_intent(ws, goal, obs),
    }
}

fn retrieve_intent(ws: &WorldState, goal: &GoalSpec, obs: &Observation) -> ExpertAction {
    if ws.robot.held_object.is_some() {
        let Some(l) = goal.deliver_to.as_deref().and_then(|id| ws.building().landmark(id)) else {
            return ExpertAction::done();
        };
        if l.floor != ws.robot.floor {
            return elevator_step(ws, obs, l.floor);
        }
        return ExpertAction::new(format!("Bring the object back to the {}.", l.label), "goto_landmark", vec![l.id.clone()]);
    }
    let Some(target) = retrieval_target(ws, goal) else {
        return ExpertAction::done();
    };
    let pose = target.pose.as_ref().expect("filtered on pose");
    if pose.floor != ws.robot.floor {
        return elevator_step(ws, obs, pose.floor);
    }
    let name = object_name(ws, &target.id);
    if obs.detection(&target.id).is_some() {
        let dist = ws.robot_distance_to(&target.id).unwrap_or(f64::INFINITY);
        if dist <= ws.robot.arm_reach + 1e-9 {
            return ExpertAction::new(format!("Pick up the {name}."), "pick_up_object", vec![target.id.clone()]);
        }
        return ExpertAction::new(
            format!("Move next to the {name}."),
            "navigate_to_point_on_ground",
            vec![target.id.clone()],
        );
    }
    match landmark_near(ws, pose.floor, pose.cell) {
        Some(l) => goto(l),
        None => ExpertAction::done(),
    }
}

fn arrange_intent(ws: &WorldState, goal: &GoalSpec, obs: &Observation) -> ExpertAction {
    let Some(region) = goal.region.as_ref() else {
        return ExpertAction::done();
    };
    let pending = ws.objects.values().find(|o| {
        o.matches(&goal.filter) && !o.footprint.iter().all(|c| o.floor().is_some_and(|f| region.contains(f, *c)))
    });
    let Some(obj) = pending else {
        return ExpertAction::done();
    };
    let Some(pose) = obj.pose.as_ref() else {
        return ExpertAction::done();
    };
    if pose.floor != ws.robot.floor {
        return elevator_step(ws, obs, pose.floor);
    }
    let c = pose.cell;
    let want = if c.row > region.max.row {
        Heading::N
    } else if c.row < region.min.row {
        Heading::S
    } else if c.col < region.min.col {
        Heading::E
    } else {
        Heading::W
    };
    let name = object_name(ws, &obj.id);
    let rel = RelDir::PUSHABLE.into_iter().find(|d| d.apply(ws.robot.heading) == want);
    let in_range = ws.robot_distance_to(&obj.id).is_some_and(|d| d <= PUSH_RANGE + 1e-9);
    if let (Some(rel), true, Some(_)) = (rel, in_range, obs.detection(&obj.id)) {
        let mut w = ws.clone();
        if apply_push(&mut w, &obj.id, rel, PUSH_DISTANCE).success {
            return ExpertAction::new(
                format!("Push the {name} into the goal area."),
                "push_object_on_ground",
                vec![obj.id.clone(), rel.as_str().into()],
            );
        }
    }
    let anchor = landmark_near(ws, region.floor, region.min);
    match anchor {
        Some(l) if l.cell != ws.robot.cell || l.heading != ws.robot.heading => goto(l),
        _ if obs.detection(&obj.id).is_some() => ExpertAction::new(
            format!("Move next to the {name}."),
            "navigate_to_point_on_ground",
            vec![obj.id.clone()],
        ),
        Some(l) => goto(l),
        None => ExpertAction::done(),
    }
}

/// One step of the elevator procedure toward `target` floor.
fn elevator_step(ws: &WorldState, obs: &Observation, target: FloorId) -> ExpertAction {
    let current = ws.robot.floor;
    let subtask = format!("Go from floor {current} to floor {target}.");
    if let Some(elev) = ws.robot_cab() {
        if let Some(id) = button_detection(ws, obs, &elev.id, PanelRef::Cab, |a| a == ButtonAction::Floor(target)) {
            return ExpertAction::new(subtask, "use_elevator", vec![id]);
        }
    }
    let dir = if target > current { CallDirection::Up } else { CallDirection::Down };
    for elev in &ws.building().elevators {
        let Some(stop) = elev.stops.get(&current) else { continue };
        if !elev.served_floors.contains(&target) {
            continue;
        }
        let near = stop.call_panel_cell.center(ws.cell_size()).dist(ws.robot_point()) <= INTERACT_RANGE + 1e-9;
        if !near || ws.robot_cab().is_some() {
            continue;
        }
        if let Some(id) = button_detection(ws, obs, &elev.id, PanelRef::Call(current), |a| a == ButtonAction::Call(dir)) {
            return ExpertAction::new(subtask, "call_elevator", vec![id]);
        }
    }
    match ws.building().landmark_graph.elevator_landmark(current) {
        Some(l) => ExpertAction::new(
            format!("Go to the {} to take the elevator to floor {target}.", l.label),
            "goto_landmark",
            vec![l.id.clone()],
        ),
        None => ExpertAction::done(),
    }
}

fn button_detection(
    ws: &WorldState,
    obs: &Observation,
    elevator: &str,
    panel: PanelRef,
    want: impl Fn(ButtonAction) -> bool,
) -> Option<String> {
    let buttons = &ws.building().elevator(elevator)?.panel(panel)?.buttons;
    obs.detections.iter().find_map(|d| match &d.kind {
        DetectionKind::Button { button, .. }
            if button.elevator == elevator
                && button.panel == panel
                && buttons.get(button.index).is_some_and(|b| want(b.action)) =>
        {
            Some(d.entity_id.clone())
        }
        _ => None,
    })
}
