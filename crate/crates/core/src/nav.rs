//! Grid path planning, traversal with halt-and-report, approach points.

use std::cmp::Reverse;
use std::collections::{BinaryHeap, VecDeque};

use serde::{Deserialize, Serialize};

use crate::percept::line_of_sight;
use crate::world::{Cell, FailureCode, FloorId, Grid, Heading, Occupant, Outcome, WorldState};

/// Distance ahead at which a blocker on the path stops the robot, meters.
pub const LOCAL_HORIZON: f64 = 2.0;

#[derive(Debug, Clone, PartialEq, thiserror::Error)]
pub enum NavError {
    #[error("unreachable")]
    Unreachable,
    #[error("cell {0} is not free")]
    NotFree(Cell),
    #[error("object unapproachable")]
    Unapproachable,
    #[error("object {0} is not on the robot's floor")]
    NotOnFloor(String),
}

/// Ordered cells from (excluding) the start to (including) the goal.
#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
pub struct Path {
    pub cells: Vec<Cell>,
    pub length_m: f64,
}

impl Path {
    pub fn len(&self) -> usize {
        self.cells.len()
    }

    pub fn is_empty(&self) -> bool {
        self.cells.is_empty()
    }
}

/// A* over a `rows × cols` grid with unit step cost and 4-connectivity.
///
/// The open list is keyed by `(f, row, col)`, so among equally promising
/// cells the lexicographically smallest is expanded first.
pub fn plan_on(
    rows: i32,
    cols: i32,
    passable: impl Fn(Cell) -> bool,
    start: Cell,
    goal: Cell,
    cell_size: f64,
) -> Result<Path, NavError> {
    let in_bounds = |c: Cell| c.row >= 0 && c.col >= 0 && c.row < rows && c.col < cols;
    for c in [start, goal] {
        if !in_bounds(c) || !passable(c) {
            return Err(NavError::NotFree(c));
        }
    }
    if start == goal {
        return Ok(Path::default());
    }
    let idx = |c: Cell| (c.row * cols + c.col) as usize;
    let n = (rows * cols) as usize;
    let mut g = vec![u32::MAX; n];
    let mut parent: Vec<Option<Cell>> = vec![None; n];
    let mut closed = vec![false; n];
    let mut open = BinaryHeap::new();
    g[idx(start)] = 0;
    open.push(Reverse((start.manhattan(goal), start.row, start.col)));
    while let Some(Reverse((_, row, col))) = open.pop() {
        let cur = Cell::new(row, col);
        if closed[idx(cur)] {
            continue;
        }
        closed[idx(cur)] = true;
        if cur == goal {
            let mut cells = vec![goal];
            let mut at = goal;
            while let Some(p) = parent[idx(at)] {
                if p == start {
                    break;
                }
                cells.push(p);
                at = p;
            }
            cells.reverse();
            let length_m = cells.len() as f64 * cell_size;
            return Ok(Path { cells, length_m });
        }
        let gc = g[idx(cur)];
        for nb in cur.neighbors4() {
            if !in_bounds(nb) || closed[idx(nb)] || !passable(nb) {
                continue;
            }
            if gc + 1 < g[idx(nb)] {
                g[idx(nb)] = gc + 1;
                parent[idx(nb)] = Some(cur);
                open.push(Reverse((gc + 1 + nb.manhattan(goal), nb.row, nb.col)));
            }
        }
    }
    Err(NavError::Unreachable)
}

/// Minimal path on a static grid, treating only free cells as passable.
pub fn plan_global(grid: &Grid, start: Cell, goal: Cell) -> Result<Path, NavError> {
    plan_on(grid.rows(), grid.cols(), |c| grid.is_free(c), start, goal, 0.25)
}

fn floor_dims(ws: &WorldState, floor: FloorId) -> (i32, i32) {
    let g = &ws.building().floors[&floor].grid;
    (g.rows(), g.cols())
}

/// Passability ignoring entities the agent can clear: closed doors and
/// pushable objects. Unpushable objects (e.g. wet-floor signs) still block.
pub fn relaxed_passable(ws: &WorldState, floor: FloorId, c: Cell) -> bool {
    match ws.occupant(floor, c) {
        None | Some(Occupant::Door(_)) => true,
        Some(Occupant::Object(_)) => ws
            .objects
            .values()
            .filter(|o| o.occupies(floor, c))
            .all(|o| o.pushable),
        _ => false,
    }
}

/// Plans from the robot to `goal` on the robot's floor.
///
/// Prefers a path around every current obstacle; if none exists, falls back
/// to a path through clearable entities so that traversal can report them.
pub fn plan_route(ws: &WorldState, goal: Cell) -> Result<Path, NavError> {
    let floor = ws.robot.floor;
    let (rows, cols) = floor_dims(ws, floor);
    let start = ws.robot.cell;
    let cs = ws.cell_size();
    let free = |c: Cell| c == start || ws.is_free(floor, c);
    match plan_on(rows, cols, free, start, goal, cs) {
        Ok(p) => Ok(p),
        Err(NavError::NotFree(c)) if c == goal && !relaxed_passable(ws, floor, goal) => Err(NavError::NotFree(c)),
        Err(_) => {
            let relaxed = |c: Cell| c == start || relaxed_passable(ws, floor, c);
            plan_on(rows, cols, relaxed, start, goal, cs)
        }
    }
}

/// Moves the robot along `path`. Halts `LOCAL_HORIZON` short of the first
/// occupied cell and reports the blocking entity.
pub fn traverse(ws: &mut WorldState, path: &Path) -> Outcome {
    let floor = ws.robot.floor;
    let blocked = path
        .cells
        .iter()
        .enumerate()
        .find_map(|(i, c)| ws.occupant(floor, *c).map(|occ| (i, occ)));
    match blocked {
        None => {
            if let Some(&last) = path.cells.last() {
                let prev = if path.cells.len() >= 2 { path.cells[path.cells.len() - 2] } else { ws.robot.cell };
                if let Some(h) = Heading::between(prev, last) {
                    ws.robot.heading = h;
                }
                ws.robot.cell = last;
            }
            Outcome::ok()
        }
        Some((b, occ)) => {
            let horizon = (LOCAL_HORIZON / ws.cell_size()).round() as usize;
            let blocker = path.cells[b];
            // Halt at the first cell within the horizon that sees the
            // blocker, or right before it if none does.
            let at = |i: usize| if i == 0 { ws.robot.cell } else { path.cells[i - 1] };
            let sees = |c: Cell| {
                let cs = ws.cell_size();
                line_of_sight(ws, floor, c.center(cs), blocker.center(cs), &[blocker])
            };
            let here = ((b + 1).saturating_sub(horizon)..=b).map(at).find(|c| sees(*c)).unwrap_or_else(|| at(b));
            ws.robot.cell = here;
            if here != blocker {
                let cs = ws.cell_size();
                ws.robot.heading = Heading::toward(here.center(cs), blocker.center(cs));
            }
            let id = occ.entity_id();
            let code = match occ {
                Occupant::Door(_) | Occupant::Object(_) => FailureCode::Blocked,
                _ => FailureCode::Collision,
            };
            Outcome::fail_with(code, id.clone(), format!("path blocked by {id}"))
        }
    }
}

/// Free cell adjacent to the object's footprint closest to the robot.
pub fn nearest_ground_point(ws: &WorldState, object_id: &str) -> Result<Cell, NavError> {
    let floor = ws.robot.floor;
    let obj = ws
        .objects
        .get(object_id)
        .filter(|o| o.floor() == Some(floor))
        .ok_or_else(|| NavError::NotOnFloor(object_id.to_string()))?;
    let reach = reachable_from(ws, floor, ws.robot.cell);
    let (_, cols) = floor_dims(ws, floor);
    let robot = ws.robot_point();
    let cs = ws.cell_size();
    obj.footprint
        .iter()
        .flat_map(|c| c.neighbors4())
        .filter(|c| !obj.footprint.contains(c))
        .filter(|c| *c == ws.robot.cell || ws.is_free(floor, *c))
        .filter(|c| reach[(c.row * cols + c.col) as usize])
        .min_by(|a, b| {
            let da = a.center(cs).dist(robot);
            let db = b.center(cs).dist(robot);
            da.total_cmp(&db).then(a.cmp(b))
        })
        .ok_or(NavError::Unapproachable)
}

/// Cells reachable from `start` under relaxed passability.
pub fn reachable_from(ws: &WorldState, floor: FloorId, start: Cell) -> Vec<bool> {
    let (rows, cols) = floor_dims(ws, floor);
    let mut seen = vec![false; (rows * cols) as usize];
    let idx = |c: Cell| (c.row * cols + c.col) as usize;
    let in_bounds = |c: Cell| c.row >= 0 && c.col >= 0 && c.row < rows && c.col < cols;
    if !in_bounds(start) {
        return seen;
    }
    seen[idx(start)] = true;
    let mut queue = VecDeque::from([start]);
    while let Some(cur) = queue.pop_front() {
        for nb in cur.neighbors4() {
            if in_bounds(nb) && !seen[idx(nb)] && relaxed_passable(ws, floor, nb) {
                seen[idx(nb)] = true;
                queue.push_back(nb);
            }
        }
    }
    seen
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::world::{load_world, Occupancy};
    use serde_json::json;

    #[test]
    fn identity_path_is_empty() {
        let g = Grid::new(5, 5, Occupancy::Free);
        let p = plan_global(&g, Cell::new(2, 2), Cell::new(2, 2)).unwrap();
        assert!(p.is_empty());
        assert_eq!(p.length_m, 0.0);
    }

    #[test]
    fn open_grid_corner_to_corner() {
        let g = Grid::new(10, 10, Occupancy::Free);
        let p = plan_global(&g, Cell::new(0, 0), Cell::new(9, 9)).unwrap();
        assert_eq!(p.len(), 18);
        assert_eq!(p.cells.last(), Some(&Cell::new(9, 9)));
        assert!((p.length_m - 4.5).abs() < 1e-12);
    }

    #[test]
    fn walled_off_goal_is_unreachable() {
        let g = Grid::from_rows(&["..#..", "..#..", "..#.."]).unwrap();
        assert_eq!(plan_global(&g, Cell::new(0, 0), Cell::new(0, 4)), Err(NavError::Unreachable));
        assert_eq!(plan_global(&g, Cell::new(0, 0), Cell::new(0, 2)), Err(NavError::NotFree(Cell::new(0, 2))));
    }

    #[test]
    fn equal_cost_paths_resolve_identically() {
        let g = Grid::new(6, 6, Occupancy::Free);
        let a = plan_global(&g, Cell::new(0, 0), Cell::new(5, 5)).unwrap();
        let b = plan_global(&g, Cell::new(0, 0), Cell::new(5, 5)).unwrap();
        assert_eq!(a, b);
    }

    fn corridor(objects: serde_json::Value, doors: serde_json::Value) -> WorldState {
        let cfg = json!({
            "name": "corridor",
            "floors": [{"id": 1, "grid": [
                "########################",
                "#......................#",
                "########################"
            ]}],
            "landmarks": [{"id": "w", "floor": 1, "cell": [1, 1], "heading": "E", "label": "w",
                           "descriptor": "", "elevator": false, "room": null}],
            "doors": doors,
            "objects": objects,
            "robot_start": {"landmark": "w"}
        });
        load_world(&cfg.to_string()).unwrap()
    }

    #[test]
    fn clear_corridor_reaches_goal() {
        let mut ws = corridor(json!([]), json!([]));
        let path = plan_route(&ws, Cell::new(1, 22)).unwrap();
        assert!(traverse(&mut ws, &path).success);
        assert_eq!(ws.robot.cell, Cell::new(1, 22));
        assert_eq!(ws.robot.heading, Heading::E);
    }

    #[test]
    fn box_in_corridor_halts_two_meters_short() {
        let mut ws = corridor(
            json!([{"id": "box_2", "category": "box", "floor": 1, "cell": [1, 15], "graspable": false}]),
            json!([]),
        );
        let path = plan_route(&ws, Cell::new(1, 22)).unwrap();
        let out = traverse(&mut ws, &path);
        assert_eq!(out.reason(), Some("path blocked by box_2"));
        assert_eq!(out.blocking_entity(), Some("box_2"));
        assert_eq!(ws.robot.cell, Cell::new(1, 7));
        let gap = Cell::new(1, 15).center(0.25).dist(ws.robot_point());
        assert!((gap - LOCAL_HORIZON).abs() < 1e-9);
    }

    #[test]
    fn closed_door_blocks() {
        let mut ws = corridor(
            json!([]),
            json!([{"id": "door_1", "floor": 1, "cells": [[1, 12]], "state": "closed", "hinge_side": "left", "approach": "E"}]),
        );
        let path = plan_route(&ws, Cell::new(1, 22)).unwrap();
        let out = traverse(&mut ws, &path);
        assert_eq!(out.reason(), Some("path blocked by door_1"));
    }

    #[test]
    fn wet_sign_is_not_planned_through() {
        let ws = corridor(
            json!([{"id": "sign", "category": "wet_floor_sign", "floor": 1, "cell": [1, 12], "graspable": false, "pushable": false}]),
            json!([]),
        );
        assert_eq!(plan_route(&ws, Cell::new(1, 22)), Err(NavError::Unreachable));
    }

    #[test]
    fn blocker_close_to_start_leaves_robot_in_place() {
        let mut ws = corridor(
            json!([{"id": "box", "category": "box", "floor": 1, "cell": [1, 4], "graspable": false}]),
            json!([]),
        );
        let path = plan_route(&ws, Cell::new(1, 22)).unwrap();
        assert!(!traverse(&mut ws, &path).success);
        assert_eq!(ws.robot.cell, Cell::new(1, 1));
    }

    #[test]
    fn approach_point_prefers_closest_then_lexicographic() {
        let cfg = json!({
            "name": "t",
            "floors": [{"id": 1, "grid": ["#######", "#.....#", "#.....#", "#.....#", "#######"]}],
            "landmarks": [{"id": "s", "floor": 1, "cell": [2, 1], "heading": "E", "label": "s",
                           "descriptor": "", "elevator": false, "room": null}],
            "objects": [{"id": "t", "category": "table", "floor": 1, "cell": [2, 3], "graspable": false}],
            "robot_start": {"landmark": "s"}
        });
        let mut ws = load_world(&cfg.to_string()).unwrap();
        assert_eq!(nearest_ground_point(&ws, "t").unwrap(), Cell::new(2, 2));
        ws.robot.cell = Cell::new(2, 5);
        assert_eq!(nearest_ground_point(&ws, "t").unwrap(), Cell::new(2, 4));
        ws.robot.cell = Cell::new(1, 1);
        // (1,3) at 0.5 m vs (2,2) at 0.354 m
        assert_eq!(nearest_ground_point(&ws, "t").unwrap(), Cell::new(2, 2));
    }

    #[test]
    fn equidistant_candidates_pick_smaller_cell() {
        let cfg = json!({
            "name": "t",
            "floors": [{"id": 1, "grid": ["#####", "#...#", "#.o.#", "#...#", "#####"]}],
            "landmarks": [{"id": "s", "floor": 1, "cell": [2, 1], "heading": "E", "label": "s",
                           "descriptor": "", "elevator": false, "room": null}],
            "objects": [{"id": "cup", "category": "cup", "floor": 1, "cell": [2, 2]}],
            "robot_start": {"floor": 1, "cell": [2, 3], "heading": "W"}
        });
        let mut ws = load_world(&cfg.to_string()).unwrap();
        // robot sits on a candidate itself
        assert_eq!(nearest_ground_point(&ws, "cup").unwrap(), Cell::new(2, 3));
        ws.robot.cell = Cell::new(3, 3);
        // (2,3) and (3,2) both at 0.25 m; (2,3) is lexicographically smaller
        assert_eq!(nearest_ground_point(&ws, "cup").unwrap(), Cell::new(2, 3));
    }

    #[test]
    fn enclosed_object_is_unapproachable() {
        let cfg = json!({
            "name": "t",
            "floors": [{"id": 1, "grid": ["#######", "#.#.#.#", "#.###.#", "#######"]}],
            "landmarks": [{"id": "s", "floor": 1, "cell": [1, 1], "heading": "E", "label": "s",
                           "descriptor": "", "elevator": false, "room": null}],
            "objects": [{"id": "safe", "category": "box", "floor": 1, "cell": [1, 3]}],
            "robot_start": {"landmark": "s"}
        });
        let ws = load_world(&cfg.to_string()).unwrap();
        assert_eq!(nearest_ground_point(&ws, "safe"), Err(NavError::Unapproachable));
    }

    #[test]
    fn shipped_landmarks_are_mutually_reachable() {
        for name in ["b1", "b2", "b3"] {
            let path = format!("{}/../../scenarios/{name}.json", env!("CARGO_MANIFEST_DIR"));
            let ws = load_world(&std::fs::read_to_string(path).unwrap()).unwrap();
            let b = ws.building();
            for a in &b.landmark_graph.nodes {
                for z in b.landmark_graph.on_floor(a.floor) {
                    let grid = &b.floors[&a.floor].grid;
                    assert!(plan_global(grid, a.cell, z.cell).is_ok(), "{name}: {} -> {}", a.id, z.id);
                }
            }
        }
    }
}
