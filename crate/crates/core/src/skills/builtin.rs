use std::sync::Arc;

use super::{ParamKind, ParamSpec, Skill, SkillContext};
use crate::nav::{nearest_ground_point, plan_route, traverse, NavError};
use crate::percept::{detector_query, Candidate, CandidateValue, Detection, DetectionKind, LocalMap};
use crate::rng::SeedHasher;
use crate::world::{
    apply_move_base, apply_open_door, apply_pickup, apply_push, elevator_transition, press_button, Cell,
    FailureCode, Heading, Outcome, PanelRef, RelDir, Side, WorldState, PUSH_DISTANCE,
};

/// Radius of the map crop used as a landmark's reference image, cells.
const THUMB_RADIUS: i32 = 6;
/// How far away a closed door may be for the door skill to align to it, meters.
const DOOR_SEARCH_RANGE: f64 = 3.0;

pub fn builtin_skills() -> Vec<Arc<dyn Skill>> {
    vec![
        Arc::new(GoToLandmark),
        Arc::new(NavigateNearObj),
        Arc::new(MoveBase),
        Arc::new(Pickup),
        Arc::new(PushObjOnGround),
        Arc::new(OpenDoor),
        Arc::new(CallElevator),
        Arc::new(UseElevator),
    ]
}

fn detection(params: &[Candidate], i: usize) -> Option<&Detection> {
    match params.get(i).map(|c| &c.value) {
        Some(CandidateValue::Detection(d)) => Some(d),
        _ => None,
    }
}

fn bad_param(what: &str) -> Outcome {
    Outcome::fail(FailureCode::InvalidParameter, format!("expected {what} parameter"))
}

fn query(ctx: &SkillContext, prompt: &str) -> Vec<Candidate> {
    detector_query(ctx.observation, prompt).into_iter().map(Candidate::detection).collect()
}

/// Resolves an object detection to a live world object.
fn world_object<'a>(ws: &WorldState, d: &'a Detection) -> Result<&'a str, Outcome> {
    if matches!(d.kind, DetectionKind::Phantom) || !ws.objects.contains_key(&d.entity_id) {
        return Err(Outcome::fail(
            FailureCode::NotFound,
            format!("object not found: {} does not exist", d.detected_label),
        ));
    }
    Ok(&d.entity_id)
}

fn nav_failure(err: NavError) -> Outcome {
    match err {
        NavError::Unreachable => Outcome::fail(FailureCode::Unreachable, "unreachable: no collision-free path"),
        NavError::NotFree(c) => Outcome::fail(FailureCode::Blocked, format!("goal cell {c} is occupied")),
        NavError::Unapproachable => Outcome::fail(FailureCode::Unapproachable, "object unapproachable"),
        NavError::NotOnFloor(id) => Outcome::fail(FailureCode::NotFound, format!("object {id} is not on this floor")),
    }
}

fn go_to(ws: &mut WorldState, goal: Cell) -> Outcome {
    match plan_route(ws, goal) {
        Ok(path) => traverse(ws, &path),
        Err(e) => nav_failure(e),
    }
}

pub struct GoToLandmark;

impl Skill for GoToLandmark {
    fn name(&self) -> &str {
        "goto_landmark"
    }

    fn description(&self) -> &str {
        "skill_name: goto_landmark\n\
         arguments: one landmark image picked from the offered options.\n\
         description: Drives the robot to the chosen landmark, for example a kitchen, an office or the \
         elevator hall. Only landmarks on the current floor can be reached; other floors require the elevator."
    }

    fn parameters(&self) -> &[ParamSpec] {
        const P: [ParamSpec; 1] = [ParamSpec { name: "landmark", kind: ParamKind::Landmark, query: None }];
        &P
    }

    fn candidates(&self, _index: usize, ws: &WorldState, _ctx: &SkillContext) -> Vec<Candidate> {
        ws.building()
            .landmark_graph
            .nodes
            .iter()
            .map(|l| Candidate {
                value: CandidateValue::Landmark {
                    id: l.id.clone(),
                    label: l.label.clone(),
                    descriptor: l.descriptor.clone(),
                    floor: l.floor,
                    thumbnail: LocalMap::capture(ws, l.floor, l.cell, THUMB_RADIUS),
                },
            })
            .collect()
    }

    fn execute(&self, ws: &mut WorldState, params: &[Candidate], _ctx: &SkillContext) -> Outcome {
        let Some(CandidateValue::Landmark { id, .. }) = params.first().map(|c| &c.value) else {
            return bad_param("landmark");
        };
        let Some(lm) = ws.building().landmark(id).cloned() else {
            return Outcome::fail(FailureCode::NotFound, format!("landmark {id} not found"));
        };
        if lm.floor != ws.robot.floor {
            return Outcome::fail(
                FailureCode::CrossFloor,
                format!("landmark {} is on floor {}, not floor {}; use the elevator first", lm.id, lm.floor, ws.robot.floor),
            );
        }
        let out = go_to(ws, lm.cell);
        if out.success {
            ws.robot.heading = lm.heading;
        }
        out
    }
}

pub struct NavigateNearObj;

impl Skill for NavigateNearObj {
    fn name(&self) -> &str {
        "navigate_to_point_on_ground"
    }

    fn description(&self) -> &str {
        "skill_name: navigate_to_point_on_ground\n\
         arguments: object\n\
         description: Brings the robot to a spot on the floor next to the selected object, e.g. walking up \
         to a counter before picking something from it."
    }

    fn parameters(&self) -> &[ParamSpec] {
        const P: [ParamSpec; 1] =
            [ParamSpec { name: "object", kind: ParamKind::Detection, query: Some("all objects") }];
        &P
    }

    fn candidates(&self, _index: usize, _ws: &WorldState, ctx: &SkillContext) -> Vec<Candidate> {
        query(ctx, "all objects")
    }

    fn execute(&self, ws: &mut WorldState, params: &[Candidate], _ctx: &SkillContext) -> Outcome {
        let Some(d) = detection(params, 0) else { return bad_param("object") };
        let id = match world_object(ws, d) {
            Ok(id) => id,
            Err(out) => return out,
        };
        let goal = match nearest_ground_point(ws, id) {
            Ok(c) => c,
            Err(e) => return nav_failure(e),
        };
        let out = go_to(ws, goal);
        if out.success {
            if let Some(p) = ws.objects[id].position(ws.cell_size()) {
                ws.robot.heading = Heading::toward(ws.robot_point(), p);
            }
        }
        out
    }
}

pub struct MoveBase;

impl Skill for MoveBase {
    fn name(&self) -> &str {
        "move_base"
    }

    fn description(&self) -> &str {
        "skill_name: move_base\n\
         arguments: direction\n\
         description: Shifts the robot base by 0.3 meters forward, backward, left or right relative to the \
         camera view. Meant for small adjustments near the goal, not for travelling between rooms."
    }

    fn parameters(&self) -> &[ParamSpec] {
        const P: [ParamSpec; 1] = [ParamSpec { name: "direction", kind: ParamKind::Direction, query: None }];
        &P
    }

    fn candidates(&self, _index: usize, _ws: &WorldState, _ctx: &SkillContext) -> Vec<Candidate> {
        RelDir::ALL.iter().map(|d| Candidate::direction(*d)).collect()
    }

    fn execute(&self, ws: &mut WorldState, params: &[Candidate], _ctx: &SkillContext) -> Outcome {
        match params.first().map(|c| &c.value) {
            Some(CandidateValue::Direction(d)) => apply_move_base(ws, *d),
            _ => bad_param("direction"),
        }
    }
}

pub struct Pickup;

impl Skill for Pickup {
    fn name(&self) -> &str {
        "pick_up_object"
    }

    fn description(&self) -> &str {
        "skill_name: pick_up_object\n\
         arguments: object_of_interest\n\
         description: Reaches out with the arm and grasps object_of_interest. Works only for objects within \
         arm reach and never moves the base. Heavy things such as chairs or tables cannot be lifted."
    }

    fn parameters(&self) -> &[ParamSpec] {
        const P: [ParamSpec; 1] =
            [ParamSpec { name: "object_of_interest", kind: ParamKind::Detection, query: Some("all objects") }];
        &P
    }

    fn candidates(&self, _index: usize, _ws: &WorldState, ctx: &SkillContext) -> Vec<Candidate> {
        query(ctx, "all objects")
    }

    fn execute(&self, ws: &mut WorldState, params: &[Candidate], ctx: &SkillContext) -> Outcome {
        let Some(d) = detection(params, 0) else { return bad_param("object") };
        let id = match world_object(ws, d) {
            Ok(id) => id,
            Err(out) => return out,
        };
        if d.distance.is_nan() {
            return Outcome::fail_with(FailureCode::SensorFault, id, "sensor fault: unknown depth");
        }
        if ctx.config.ik_failure_rate > 0.0 {
            let u = SeedHasher::new("ik")
                .u64(ctx.config.seed)
                .u64(ctx.step as u64)
                .str(id)
                .unit();
            if u < ctx.config.ik_failure_rate {
                return Outcome::fail_with(FailureCode::IkFailure, id, "no valid inverse kinematics solution");
            }
        }
        apply_pickup(ws, id)
    }
}

pub struct PushObjOnGround;

impl Skill for PushObjOnGround {
    fn name(&self) -> &str {
        "push_object_on_ground"
    }

    fn description(&self) -> &str {
        "skill_name: push_object_on_ground\n\
         arguments: object, direction\n\
         description: Pushes an object standing on the floor forward, left or right. Objects up to about \
         3 meters away can be pushed. Useful for clearing an obstacle out of the robot's way or for \
         rearranging furniture."
    }

    fn parameters(&self) -> &[ParamSpec] {
        const P: [ParamSpec; 2] = [
            ParamSpec { name: "object", kind: ParamKind::Detection, query: Some("all objects") },
            ParamSpec { name: "direction", kind: ParamKind::Direction, query: None },
        ];
        &P
    }

    fn candidates(&self, index: usize, _ws: &WorldState, ctx: &SkillContext) -> Vec<Candidate> {
        if index == 0 {
            query(ctx, "all objects")
        } else {
            RelDir::PUSHABLE.iter().map(|d| Candidate::direction(*d)).collect()
        }
    }

    fn execute(&self, ws: &mut WorldState, params: &[Candidate], _ctx: &SkillContext) -> Outcome {
        let Some(d) = detection(params, 0) else { return bad_param("object") };
        let Some(CandidateValue::Direction(dir)) = params.get(1).map(|c| &c.value) else {
            return bad_param("direction");
        };
        let id = match world_object(ws, d) {
            Ok(id) => id.to_string(),
            Err(out) => return out,
        };
        apply_push(ws, &id, *dir, PUSH_DISTANCE)
    }
}

pub struct OpenDoor;

impl OpenDoor {
    /// Closest closed door on the robot's floor within search range.
    fn target(ws: &WorldState) -> Option<String> {
        ws.building()
            .doors
            .iter()
            .filter(|d| d.floor == ws.robot.floor && ws.door_closed(&d.id))
            .filter_map(|d| ws.robot_distance_to_door(&d.id).map(|dist| (dist, d.id.clone())))
            .filter(|(dist, _)| *dist <= DOOR_SEARCH_RANGE + 1e-9)
            .min_by(|a, b| a.0.total_cmp(&b.0).then(a.1.cmp(&b.1)))
            .map(|(_, id)| id)
    }
}

impl Skill for OpenDoor {
    fn name(&self) -> &str {
        "open_door"
    }

    fn description(&self) -> &str {
        "skill_name: open_door\n\
         arguments: door_side (left or right)\n\
         description: Opens a closed push door by driving into it with the arm on the chosen side held out. \
         The robot lines itself up with the nearest closed door first."
    }

    fn parameters(&self) -> &[ParamSpec] {
        const P: [ParamSpec; 1] = [ParamSpec { name: "door_side", kind: ParamKind::Side, query: None }];
        &P
    }

    fn candidates(&self, _index: usize, _ws: &WorldState, _ctx: &SkillContext) -> Vec<Candidate> {
        vec![Candidate::side(Side::Left), Candidate::side(Side::Right)]
    }

    fn execute(&self, ws: &mut WorldState, params: &[Candidate], _ctx: &SkillContext) -> Outcome {
        let Some(CandidateValue::Side(side)) = params.first().map(|c| &c.value) else {
            return bad_param("side");
        };
        let Some(door_id) = Self::target(ws) else {
            return Outcome::fail(FailureCode::NotFound, "no closed door nearby");
        };
        let door = ws.building().door(&door_id).cloned().expect("door exists");
        let cell = door.cells[0];
        let robot = ws.robot_point();
        let cs = ws.cell_size();
        let mut sides = [cell.step(door.approach.opposite()), cell.step(door.approach)];
        sides.sort_by(|a, b| {
            a.center(cs)
                .dist(robot)
                .total_cmp(&b.center(cs).dist(robot))
                .then(a.cmp(b))
        });
        let stand = sides[0];
        if ws.robot.cell != stand {
            let out = go_to(ws, stand);
            if !out.success {
                return out;
            }
        }
        ws.robot.heading = Heading::between(stand, cell).expect("adjacent");
        apply_open_door(ws, &door_id, *side)
    }
}

fn button_param(params: &[Candidate]) -> Option<&crate::world::ButtonRef> {
    match detection(params, 0).map(|d| &d.kind) {
        Some(DetectionKind::Button { button, .. }) => Some(button),
        _ => None,
    }
}

pub struct CallElevator;

impl Skill for CallElevator {
    fn name(&self) -> &str {
        "call_elevator"
    }

    fn description(&self) -> &str {
        "skill_name: call_elevator\n\
         arguments: button\n\
         description: Presses the chosen hall button to call the elevator to the current floor, then rides \
         into the cab. The subtask has to state the current floor and the floor to go to, e.g. \
         'Go from the first floor to the second floor.'"
    }

    fn parameters(&self) -> &[ParamSpec] {
        const P: [ParamSpec; 1] = [ParamSpec { name: "button", kind: ParamKind::Button, query: Some("buttons") }];
        &P
    }

    fn candidates(&self, _index: usize, _ws: &WorldState, ctx: &SkillContext) -> Vec<Candidate> {
        query(ctx, "buttons")
    }

    fn execute(&self, ws: &mut WorldState, params: &[Candidate], _ctx: &SkillContext) -> Outcome {
        let Some(b) = button_param(params) else { return bad_param("button") };
        if !matches!(b.panel, PanelRef::Call(_)) {
            return Outcome::fail(FailureCode::WrongPanel, "wrong panel: not a hall call button");
        }
        press_button(ws, b)
    }
}

pub struct UseElevator;

impl Skill for UseElevator {
    fn name(&self) -> &str {
        "use_elevator"
    }

    fn description(&self) -> &str {
        "skill_name: use_elevator\n\
         arguments: button\n\
         description: Inside the elevator, presses the chosen floor button, rides to that floor and steps \
         out. Only usable after the elevator has been called. The subtask has to state the target floor."
    }

    fn parameters(&self) -> &[ParamSpec] {
        const P: [ParamSpec; 1] = [ParamSpec { name: "button", kind: ParamKind::Button, query: Some("buttons") }];
        &P
    }

    fn candidates(&self, _index: usize, _ws: &WorldState, ctx: &SkillContext) -> Vec<Candidate> {
        query(ctx, "buttons")
    }

    fn execute(&self, ws: &mut WorldState, params: &[Candidate], _ctx: &SkillContext) -> Outcome {
        let Some(b) = button_param(params) else { return bad_param("button") };
        if b.panel != PanelRef::Cab {
            return Outcome::fail(FailureCode::WrongPanel, "wrong panel: not a cab floor button");
        }
        let pressed = press_button(ws, b);
        if !pressed.success {
            return pressed;
        }
        elevator_transition(ws, &b.elevator)
    }
}
