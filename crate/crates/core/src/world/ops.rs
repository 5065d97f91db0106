//! Discrete transition rules for skill effects.

use super::geom::{Cell, Heading, Point, RelDir, Side};
use super::model::{ButtonAction, ButtonRef, CallDirection, DoorState, PanelRef, WorldState};
use super::outcome::{FailureCode, Outcome};

/// Default displacement of one push, meters.
pub const PUSH_DISTANCE: f64 = 0.5;
/// Farthest object the robot will push, meters.
pub const PUSH_RANGE: f64 = 3.0;
/// Maximum robot-to-door and robot-to-panel distance, meters.
pub const INTERACT_RANGE: f64 = 1.0;

impl WorldState {
    /// Distance from the robot to an object on the robot's floor.
    pub fn robot_distance_to(&self, object_id: &str) -> Option<f64> {
        let o = self.objects.get(object_id)?;
        if o.floor() != Some(self.robot.floor) {
            return None;
        }
        o.position(self.cell_size()).map(|p| p.dist(self.robot_point()))
    }

    fn door_point(&self, door_id: &str) -> Option<Point> {
        let d = self.building().door(door_id)?;
        let cs = self.cell_size();
        let n = d.cells.len() as f64;
        let (x, y) = d.cells.iter().fold((0.0, 0.0), |(x, y), c| {
            let p = c.center(cs);
            (x + p.x, y + p.y)
        });
        Some(Point { x: x / n, y: y / n })
    }

    pub fn robot_distance_to_door(&self, door_id: &str) -> Option<f64> {
        let d = self.building().door(door_id)?;
        if d.floor != self.robot.floor {
            return None;
        }
        let r = self.robot_point();
        d.cells
            .iter()
            .map(|c| c.center(self.cell_size()).dist(r))
            .min_by(f64::total_cmp)
    }
}

/// Pushes an object `distance` meters in a direction relative to the robot.
///
/// On failure the world is left untouched.
pub fn apply_push(ws: &mut WorldState, object_id: &str, direction: RelDir, distance: f64) -> Outcome {
    let Some(obj) = ws.objects.get(object_id) else {
        return Outcome::fail(FailureCode::NotFound, format!("object {object_id} missing"));
    };
    if obj.floor() != Some(ws.robot.floor) {
        return Outcome::fail(FailureCode::NotFound, format!("object {object_id} is not on this floor"));
    }
    if direction == RelDir::Backward {
        return Outcome::fail(FailureCode::InvalidParameter, "objects cannot be pulled backward");
    }
    if !obj.pushable {
        return Outcome::fail_with(FailureCode::NotPushable, object_id, format!("object cannot be pushed: {object_id}"));
    }
    let floor = ws.robot.floor;
    if obj.footprint.iter().any(|c| on_surface(ws, floor, *c)) {
        return Outcome::fail_with(FailureCode::NotOnGround, object_id, format!("not on ground: {object_id}"));
    }
    let dist = ws.robot_distance_to(object_id).unwrap_or(f64::INFINITY);
    if dist > PUSH_RANGE + 1e-9 {
        return Outcome::fail_with(
            FailureCode::OutOfRange,
            object_id,
            format!("object out of push range ({dist:.1} m > {PUSH_RANGE:.1} m)"),
        );
    }
    let d = direction.apply(ws.robot.heading);
    let steps = (distance / ws.cell_size()).round().max(1.0) as i32;
    let footprint = obj.footprint.clone();
    for k in 1..=steps {
        for c in &footprint {
            let moved = c.offset(d, k);
            if let Some(occ) = ws.occupant_except(floor, moved, object_id) {
                return Outcome::fail_with(
                    FailureCode::Collision,
                    occ.entity_id(),
                    format!("collision with {}", occ.describe()),
                );
            }
        }
    }
    let new_fp: Vec<Cell> = footprint.iter().map(|c| c.offset(d, steps)).collect();

    // robot ends up directly behind the object, facing the push direction
    let (dr, dc) = d.delta();
    let back = new_fp
        .iter()
        .copied()
        .min_by_key(|c| (c.row * dr + c.col * dc, *c))
        .expect("footprint non-empty")
        .step(d.opposite());
    let robot_target = if ws.occupant_except(floor, back, object_id).is_none() && !new_fp.contains(&back) {
        back
    } else if !new_fp.contains(&ws.robot.cell) {
        ws.robot.cell
    } else {
        return Outcome::fail_with(FailureCode::Collision, "robot", "collision with robot");
    };

    let obj = ws.objects.get_mut(object_id).expect("checked above");
    obj.footprint = new_fp;
    if let Some(pose) = obj.pose.as_mut() {
        pose.cell = pose.cell.offset(d, steps);
    }
    let delicate = obj.delicate;
    ws.robot.cell = robot_target;
    ws.robot.heading = d;
    let mut out = Outcome::ok();
    if delicate {
        out.violations.push(format!("pushed delicate object {object_id}"));
    }
    out
}

fn on_surface(ws: &WorldState, floor: i32, c: Cell) -> bool {
    ws.building()
        .floor(floor)
        .is_some_and(|f| f.grid.get(c) == Some(super::model::Occupancy::Obstacle))
}

/// Opens a closed door by pushing on `side`. Succeeds iff `side` is
/// opposite the hinge as seen by the robot.
pub fn apply_open_door(ws: &mut WorldState, door_id: &str, side: Side) -> Outcome {
    let Some(door) = ws.building().door(door_id).cloned() else {
        return Outcome::fail(FailureCode::NotFound, format!("door {door_id} missing"));
    };
    if door.floor != ws.robot.floor {
        return Outcome::fail_with(FailureCode::NotFound, door_id, format!("door {door_id} is not on this floor"));
    }
    let dist = ws.robot_distance_to_door(door_id).unwrap_or(f64::INFINITY);
    if dist > INTERACT_RANGE + 1e-9 {
        return Outcome::fail_with(FailureCode::TooFar, door_id, format!("too far from door ({dist:.1} m)"));
    }
    let target = ws.door_point(door_id).expect("door exists");
    if Heading::toward(ws.robot_point(), target) != ws.robot.heading {
        return Outcome::fail_with(FailureCode::TooFar, door_id, "not facing the door");
    }
    if !ws.door_closed(door_id) {
        return Outcome::ok();
    }
    let hinge = door.apparent_hinge(ws.robot.heading);
    if side == hinge {
        return Outcome::fail_with(FailureCode::WrongSide, door_id, format!("wrong side: door {door_id} did not open"));
    }
    ws.doors.insert(door_id.to_string(), DoorState::Open);
    Outcome::ok()
}

/// Presses one button of an elevator panel.
pub fn press_button(ws: &mut WorldState, button: &ButtonRef) -> Outcome {
    let Some(elev) = ws.building().elevator(&button.elevator).cloned() else {
        return Outcome::fail(FailureCode::NotFound, format!("elevator {} missing", button.elevator));
    };
    let Some(panel) = elev.panel(button.panel) else {
        return Outcome::fail(FailureCode::WrongPanel, "wrong panel: no such panel");
    };
    let Some(b) = panel.buttons.get(button.index) else {
        return Outcome::fail(FailureCode::InvalidParameter, format!("button {} does not exist", button.index));
    };
    let in_cab = ws.robot_cab().is_some_and(|e| e.id == elev.id);
    match (button.panel, b.action) {
        (PanelRef::Call(floor), ButtonAction::Call(dir)) => {
            if floor != ws.robot.floor || in_cab {
                return Outcome::fail(FailureCode::WrongPanel, "wrong panel: call panel is not in front of the robot");
            }
            let stop = &elev.stops[&floor];
            let dist = stop.call_panel_cell.center(ws.cell_size()).dist(ws.robot_point());
            if dist > INTERACT_RANGE + 1e-9 {
                return Outcome::fail_with(FailureCode::TooFar, elev.id.clone(), format!("too far from call panel ({dist:.1} m)"));
            }
            if let Some(occ) = ws.occupant(floor, stop.cab_cell) {
                return Outcome::fail_with(FailureCode::Blocked, occ.entity_id(), "elevator cab is blocked");
            }
            let st = ws.elevators.get_mut(&elev.id).expect("elevator state");
            st.cab_floor = floor;
            st.call_direction = Some(dir);
            st.selected_floor = None;
            ws.robot.cell = stop.cab_cell;
            ws.robot.heading = stop.cab_heading;
            Outcome::ok()
        }
        (PanelRef::Cab, ButtonAction::Floor(target)) => {
            if !in_cab {
                return Outcome::fail(FailureCode::WrongPanel, "wrong panel: robot is not inside the cab");
            }
            ws.elevators.get_mut(&elev.id).expect("elevator state").selected_floor = Some(target);
            Outcome::ok()
        }
        _ => Outcome::fail(FailureCode::WrongPanel, "wrong panel: button does not belong to this panel"),
    }
}

/// Rides the elevator to the selected floor and steps out.
///
/// Riding in the direction opposite the call, or selecting the current floor,
/// fails and leaves the robot at the exit of its current floor.
pub fn elevator_transition(ws: &mut WorldState, elevator_id: &str) -> Outcome {
    let Some(elev) = ws.building().elevator(elevator_id).cloned() else {
        return Outcome::fail(FailureCode::NotFound, format!("elevator {elevator_id} missing"));
    };
    if !ws.robot_cab().is_some_and(|e| e.id == elev.id) {
        return Outcome::fail(FailureCode::WrongPanel, "wrong panel: robot is not inside the cab");
    }
    let current = ws.robot.floor;
    let st = ws.elevators[&elev.id].clone();
    let Some(target) = st.selected_floor else {
        return Outcome::fail(FailureCode::NoFloorSelected, "no floor selected");
    };
    let eject = |ws: &mut WorldState| {
        let stop = &elev.stops[&current];
        let s = ws.elevators.get_mut(&elev.id).expect("elevator state");
        s.call_direction = None;
        s.selected_floor = None;
        ws.robot.cell = stop.exit_cell;
        ws.robot.heading = stop.exit_heading;
    };
    if target == current {
        eject(ws);
        return Outcome::fail(FailureCode::AlreadyOnFloor, format!("already on floor {current}"));
    }
    let wrong = match st.call_direction {
        Some(CallDirection::Up) => target < current,
        Some(CallDirection::Down) => target > current,
        None => false,
    };
    if wrong {
        eject(ws);
        return Outcome::fail_with(
            FailureCode::WrongDirection,
            elev.id.clone(),
            format!("wrong direction: the cab was called {} but floor {target} was selected", match st.call_direction {
                Some(CallDirection::Up) => "up",
                _ => "down",
            }),
        );
    }
    let stop = &elev.stops[&target];
    if let Some(occ) = ws.occupant(target, stop.exit_cell) {
        return Outcome::fail_with(FailureCode::Blocked, occ.entity_id(), "elevator exit is blocked");
    }
    let s = ws.elevators.get_mut(&elev.id).expect("elevator state");
    s.cab_floor = target;
    s.call_direction = None;
    s.selected_floor = None;
    ws.robot.floor = target;
    ws.robot.cell = stop.exit_cell;
    ws.robot.heading = stop.exit_heading;
    Outcome::ok()
}

/// Grasps an object within arm reach.
pub fn apply_pickup(ws: &mut WorldState, object_id: &str) -> Outcome {
    let Some(obj) = ws.objects.get(object_id) else {
        return Outcome::fail(FailureCode::NotFound, format!("object {object_id} missing"));
    };
    if obj.floor() != Some(ws.robot.floor) {
        return Outcome::fail_with(FailureCode::NotFound, object_id, format!("object {object_id} is not on this floor"));
    }
    if ws.robot.held_object.is_some() {
        return Outcome::fail(FailureCode::HandFull, "hand full");
    }
    if obj.heavy {
        return Outcome::fail_with(FailureCode::TooHeavy, object_id, format!("{object_id} is too heavy to lift"));
    }
    if !obj.graspable {
        return Outcome::fail_with(FailureCode::NotGraspable, object_id, format!("{object_id} cannot be grasped"));
    }
    let dist = ws.robot_distance_to(object_id).unwrap_or(f64::INFINITY);
    if dist > ws.robot.arm_reach + 1e-9 {
        return Outcome::fail_with(
            FailureCode::OutOfReach,
            object_id,
            format!("out of reach ({dist:.1} m > {:.1} m)", ws.robot.arm_reach),
        );
    }
    let obj = ws.objects.get_mut(object_id).expect("checked above");
    obj.pose = None;
    obj.footprint.clear();
    ws.robot.held_object = Some(object_id.to_string());
    Outcome::ok()
}

/// Shifts the robot one cell in a camera-relative direction, keeping its
/// heading.
pub fn apply_move_base(ws: &mut WorldState, direction: RelDir) -> Outcome {
    let target = ws.robot.cell.step(direction.apply(ws.robot.heading));
    if let Some(occ) = ws.occupant(ws.robot.floor, target) {
        return Outcome::fail_with(
            FailureCode::TargetOccupied,
            occ.entity_id(),
            format!("target occupied by {}", occ.describe()),
        );
    }
    ws.robot.cell = target;
    Outcome::ok()
}
