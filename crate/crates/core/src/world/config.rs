//! Scenario file schema and loader.

use std::collections::{BTreeMap, BTreeSet, VecDeque};
use std::sync::Arc;

use serde::{Deserialize, Serialize};

use super::geom::{Cell, FloorId, Heading, Side};
use super::model::{
    Building, ButtonAction, ButtonPanel, CallDirection, Door, DoorState, Elevator, ElevatorState,
    ElevatorStop, FloorMap, Grid, Landmark, LandmarkGraph, Object, ObjectPose, Occupancy,
    RobotState, Room, WorldState,
};

#[derive(Debug, Clone, thiserror::Error, PartialEq)]
pub enum WorldError {
    #[error("schema violation: {0}")]
    Schema(String),
    #[error("invariant violation: {0}")]
    Invariant(String),
}

fn invariant(msg: impl Into<String>) -> WorldError {
    WorldError::Invariant(msg.into())
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct WorldConfig {
    pub name: String,
    #[serde(default = "default_cell_size")]
    pub cell_size: f64,
    #[serde(default)]
    pub seed: u64,
    #[serde(default = "default_arm_reach")]
    pub arm_reach: f64,
    pub floors: Vec<FloorConfig>,
    pub landmarks: Vec<Landmark>,
    #[serde(default)]
    pub elevators: Vec<ElevatorConfig>,
    #[serde(default)]
    pub doors: Vec<DoorConfig>,
    #[serde(default)]
    pub objects: Vec<ObjectConfig>,
    pub robot_start: RobotStart,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub randomization: Option<RandomizationConfig>,
}

fn default_cell_size() -> f64 {
    0.25
}

fn default_arm_reach() -> f64 {
    0.8
}

fn default_true() -> bool {
    true
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct FloorConfig {
    pub id: FloorId,
    pub grid: Vec<String>,
    #[serde(default)]
    pub rooms: Vec<RoomConfig>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RoomConfig {
    pub name: String,
    pub kind: String,
    pub min: Cell,
    pub max: Cell,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct PanelConfig {
    pub cell: Cell,
    pub buttons: Vec<super::model::Button>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct StopConfig {
    pub floor: FloorId,
    pub cab_cell: Cell,
    pub cab_heading: Heading,
    pub exit_cell: Cell,
    pub exit_heading: Heading,
    pub call_panel: PanelConfig,
    pub cab_panel_cell: Cell,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ElevatorConfig {
    pub id: String,
    pub initial_floor: FloorId,
    pub stops: Vec<StopConfig>,
    pub cab_panel: ButtonPanel,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct DoorConfig {
    pub id: String,
    pub floor: FloorId,
    pub cells: Vec<Cell>,
    pub state: DoorState,
    pub hinge_side: Side,
    pub approach: Heading,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ObjectConfig {
    pub id: String,
    pub category: String,
    #[serde(default)]
    pub attributes: BTreeMap<String, String>,
    pub floor: FloorId,
    pub cell: Cell,
    #[serde(default)]
    pub offset: [f64; 2],
    /// Defaults to the single anchor cell.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub footprint: Option<Vec<Cell>>,
    #[serde(default = "default_true")]
    pub graspable: bool,
    #[serde(default)]
    pub heavy: bool,
    #[serde(default)]
    pub delicate: bool,
    #[serde(default = "default_true")]
    pub pushable: bool,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(untagged)]
pub enum RobotStart {
    Landmark { landmark: String },
    Pose { floor: FloorId, cell: Cell, heading: Heading },
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct FloorCell {
    pub floor: FloorId,
    pub cell: Cell,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Region {
    pub floor: FloorId,
    pub min: Cell,
    pub max: Cell,
}

impl Region {
    pub fn contains(&self, floor: FloorId, c: Cell) -> bool {
        floor == self.floor
            && c.row >= self.min.row
            && c.row <= self.max.row
            && c.col >= self.min.col
            && c.col <= self.max.col
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ReceptionConfig {
    pub floor: FloorId,
    pub landmark: String,
    pub chair_slots: Vec<Cell>,
    pub goal_region: Region,
}

/// Hints used by the scenario randomizer; ignored by the simulator.
#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RandomizationConfig {
    #[serde(default)]
    pub blocker_slots: Vec<FloorCell>,
    #[serde(default)]
    pub wet_sign_cells: Vec<FloorCell>,
    #[serde(default)]
    pub reception: Option<ReceptionConfig>,
}

impl WorldConfig {
    pub fn from_json(text: &str) -> Result<Self, WorldError> {
        serde_json::from_str(text).map_err(|e| WorldError::Schema(e.to_string()))
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("config serializes")
    }
}

/// Parses and validates a scenario file.
pub fn load_world(text: &str) -> Result<WorldState, WorldError> {
    WorldConfig::from_json(text)?.build()
}

impl WorldConfig {
    /// Validates the configuration and produces the initial world state.
    pub fn build(&self) -> Result<WorldState, WorldError> {
        if !(self.cell_size > 0.0) {
            return Err(WorldError::Schema("cell_size: must be positive".into()));
        }
        if !(self.arm_reach > 0.0) {
            return Err(WorldError::Schema("arm_reach: must be positive".into()));
        }
        if self.floors.is_empty() {
            return Err(WorldError::Schema("floors: at least one floor required".into()));
        }
        let mut floors = BTreeMap::new();
        for f in &self.floors {
            let grid = Grid::from_rows(&f.grid)
                .map_err(|e| WorldError::Schema(format!("floors[{}].grid: {e}", f.id)))?;
            let rooms = build_rooms(f.id, &grid, &f.rooms)?;
            if floors
                .insert(f.id, FloorMap { floor_id: f.id, grid, rooms })
                .is_some()
            {
                return Err(invariant(format!("duplicate floor id {}", f.id)));
            }
        }

        let doors = self.build_doors(&floors)?;
        let door_cells: BTreeMap<(FloorId, Cell), &str> = doors
            .iter()
            .flat_map(|d| d.cells.iter().map(move |c| ((d.floor, *c), d.id.as_str())))
            .collect();

        let mut landmark_ids = BTreeSet::new();
        for lm in &self.landmarks {
            if !landmark_ids.insert(lm.id.as_str()) {
                return Err(invariant(format!("duplicate landmark id {}", lm.id)));
            }
            let floor = floors
                .get(&lm.floor)
                .ok_or_else(|| invariant(format!("landmark {} references unknown floor {}", lm.id, lm.floor)))?;
            if !floor.grid.is_free(lm.cell) || door_cells.contains_key(&(lm.floor, lm.cell)) {
                return Err(invariant(format!("landmark {} is not on a free cell", lm.id)));
            }
        }

        let elevators = self.build_elevators(&floors)?;

        if floors.len() > 1 {
            for id in floors.keys() {
                if !self.landmarks.iter().any(|l| l.floor == *id && l.elevator) {
                    return Err(invariant(format!("floor {id} has no elevator landmark")));
                }
            }
        }

        let landmark_graph = build_landmark_graph(&floors, &self.landmarks)?;

        let mut objects = BTreeMap::new();
        let mut occupied: BTreeMap<(FloorId, Cell), String> = BTreeMap::new();
        for oc in &self.objects {
            let obj = build_object(oc, &floors)?;
            for c in &obj.footprint {
                if let Some(other) = occupied.insert((oc.floor, *c), obj.id.clone()) {
                    return Err(invariant(format!(
                        "footprint overlap between {other} and {} at {c}",
                        obj.id
                    )));
                }
            }
            if objects.insert(obj.id.clone(), obj).is_some() {
                return Err(invariant(format!("duplicate object id {}", oc.id)));
            }
        }

        let (floor, cell, heading) = match &self.robot_start {
            RobotStart::Landmark { landmark } => {
                let lm = self
                    .landmarks
                    .iter()
                    .find(|l| &l.id == landmark)
                    .ok_or_else(|| WorldError::Schema(format!("robot_start.landmark: unknown landmark {landmark}")))?;
                (lm.floor, lm.cell, lm.heading)
            }
            RobotStart::Pose { floor, cell, heading } => (*floor, *cell, *heading),
        };

        let building = Building {
            name: self.name.clone(),
            cell_size: self.cell_size,
            floors,
            landmark_graph,
            elevators,
            doors,
            randomization: self.randomization.clone(),
        };
        let elevator_states = self
            .elevators
            .iter()
            .map(|e| {
                (
                    e.id.clone(),
                    ElevatorState {
                        cab_floor: e.initial_floor,
                        call_direction: None,
                        selected_floor: None,
                    },
                )
            })
            .collect();
        let ws = WorldState {
            building: Arc::new(building),
            objects,
            doors: self.doors.iter().map(|d| (d.id.clone(), d.state)).collect(),
            elevators: elevator_states,
            robot: RobotState {
                floor,
                cell,
                heading,
                held_object: None,
                arm_reach: self.arm_reach,
            },
            rng_seed: self.seed,
        };
        if ws.occupant(floor, cell).is_some() {
            return Err(invariant(format!("robot start cell {cell} on floor {floor} is occupied")));
        }
        ws.check_invariants().map_err(invariant)?;
        Ok(ws)
    }

    fn build_doors(&self, floors: &BTreeMap<FloorId, FloorMap>) -> Result<Vec<Door>, WorldError> {
        let mut ids = BTreeSet::new();
        let mut doors = Vec::new();
        for d in &self.doors {
            if !ids.insert(d.id.as_str()) {
                return Err(invariant(format!("duplicate door id {}", d.id)));
            }
            let floor = floors
                .get(&d.floor)
                .ok_or_else(|| invariant(format!("door {} references unknown floor {}", d.id, d.floor)))?;
            if d.cells.is_empty() {
                return Err(WorldError::Schema(format!("doors[{}].cells: empty", d.id)));
            }
            for c in &d.cells {
                if !floor.grid.is_free(*c) {
                    return Err(invariant(format!("door {} cell {c} is not free", d.id)));
                }
            }
            // the two sides along the approach axis must be free
            let first = d.cells[0];
            let before = first.step(d.approach.opposite());
            let after = first.step(d.approach);
            if !floor.grid.is_free(before) || !floor.grid.is_free(after) {
                return Err(invariant(format!("door {} does not connect two free cells", d.id)));
            }
            doors.push(Door {
                id: d.id.clone(),
                floor: d.floor,
                cells: d.cells.clone(),
                hinge_side: d.hinge_side,
                approach: d.approach,
            });
        }
        Ok(doors)
    }

    fn build_elevators(&self, floors: &BTreeMap<FloorId, FloorMap>) -> Result<Vec<Elevator>, WorldError> {
        let mut out = Vec::new();
        for e in &self.elevators {
            let mut stops = BTreeMap::new();
            for s in &e.stops {
                let floor = floors
                    .get(&s.floor)
                    .ok_or_else(|| invariant(format!("elevator {} serves unknown floor {}", e.id, s.floor)))?;
                for (what, c) in [("cab_cell", s.cab_cell), ("exit_cell", s.exit_cell)] {
                    if !floor.grid.is_free(c) {
                        return Err(invariant(format!("elevator {} {what} {c} on floor {} is not free", e.id, s.floor)));
                    }
                }
                validate_panel(&e.id, &s.call_panel.buttons)?;
                let stop = ElevatorStop {
                    floor: s.floor,
                    cab_cell: s.cab_cell,
                    cab_heading: s.cab_heading,
                    exit_cell: s.exit_cell,
                    exit_heading: s.exit_heading,
                    call_panel_cell: s.call_panel.cell,
                    call_panel: ButtonPanel {
                        buttons: s.call_panel.buttons.clone(),
                    },
                    cab_panel_cell: s.cab_panel_cell,
                };
                if stops.insert(s.floor, stop).is_some() {
                    return Err(invariant(format!("elevator {} lists floor {} twice", e.id, s.floor)));
                }
            }
            if stops.is_empty() {
                return Err(invariant(format!("elevator {} serves no floors", e.id)));
            }
            let served: BTreeSet<FloorId> = stops.keys().copied().collect();
            let lowest = *served.first().unwrap();
            let highest = *served.last().unwrap();
            for (f, stop) in &stops {
                let has = |dir| {
                    stop.call_panel
                        .buttons
                        .iter()
                        .any(|b| b.action == ButtonAction::Call(dir))
                };
                if served.len() > 1 && stop.call_panel.buttons.is_empty() {
                    return Err(invariant(format!("elevator {} has no call buttons on floor {f}", e.id)));
                }
                if *f < highest && !has(CallDirection::Up) {
                    return Err(invariant(format!("elevator {} floor {f} lacks an up button", e.id)));
                }
                if *f > lowest && !has(CallDirection::Down) {
                    return Err(invariant(format!("elevator {} floor {f} lacks a down button", e.id)));
                }
            }
            validate_panel(&e.id, &e.cab_panel.buttons)?;
            let mut cab_floors = BTreeSet::new();
            for b in &e.cab_panel.buttons {
                match b.action {
                    ButtonAction::Floor(f) if served.contains(&f) => {
                        if !cab_floors.insert(f) {
                            return Err(invariant(format!("elevator {} cab panel lists floor {f} twice", e.id)));
                        }
                    }
                    _ => {
                        return Err(invariant(format!(
                            "elevator {} cab button {:?} does not target a served floor",
                            e.id, b.label
                        )))
                    }
                }
            }
            if cab_floors != served {
                return Err(invariant(format!("elevator {} cab panel does not list every served floor", e.id)));
            }
            if !served.contains(&e.initial_floor) {
                return Err(invariant(format!("elevator {} initial floor is not served", e.id)));
            }
            out.push(Elevator {
                id: e.id.clone(),
                served_floors: served,
                stops,
                cab_panel: e.cab_panel.clone(),
                initial_floor: e.initial_floor,
            });
        }
        Ok(out)
    }
}

fn validate_panel(elevator: &str, buttons: &[super::model::Button]) -> Result<(), WorldError> {
    for (i, b) in buttons.iter().enumerate() {
        if b.label.trim().is_empty() {
            return Err(invariant(format!("elevator {elevator} has a button with an empty label")));
        }
        for other in &buttons[..i] {
            if other.position == b.position {
                return Err(invariant(format!(
                    "elevator {elevator} buttons {:?} and {:?} share a position",
                    other.label, b.label
                )));
            }
        }
    }
    Ok(())
}

fn build_rooms(floor: FloorId, grid: &Grid, rooms: &[RoomConfig]) -> Result<Vec<Room>, WorldError> {
    let mut taken: BTreeMap<Cell, &str> = BTreeMap::new();
    let mut out = Vec::new();
    for r in rooms {
        if !grid.in_bounds(r.min) || !grid.in_bounds(r.max) || r.min.row > r.max.row || r.min.col > r.max.col {
            return Err(WorldError::Schema(format!("floors[{floor}].rooms[{}]: bad bounds", r.name)));
        }
        let mut cells = BTreeSet::new();
        for row in r.min.row..=r.max.row {
            for col in r.min.col..=r.max.col {
                let c = Cell::new(row, col);
                if grid.get(c) == Some(Occupancy::Wall) {
                    continue;
                }
                if let Some(prev) = taken.insert(c, &r.name) {
                    return Err(invariant(format!("rooms {prev} and {} overlap at {c}", r.name)));
                }
                cells.insert(c);
            }
        }
        out.push(Room {
            name: r.name.clone(),
            kind: r.kind.clone(),
            min: r.min,
            max: r.max,
            cells,
        });
    }
    Ok(out)
}

fn build_object(oc: &ObjectConfig, floors: &BTreeMap<FloorId, FloorMap>) -> Result<Object, WorldError> {
    let floor = floors
        .get(&oc.floor)
        .ok_or_else(|| invariant(format!("object {} references unknown floor {}", oc.id, oc.floor)))?;
    if oc.heavy && oc.graspable {
        return Err(invariant(format!("object {} is heavy and graspable", oc.id)));
    }
    let footprint = oc.footprint.clone().unwrap_or_else(|| vec![oc.cell]);
    if footprint.is_empty() {
        return Err(WorldError::Schema(format!("objects[{}].footprint: empty", oc.id)));
    }
    for c in &footprint {
        match floor.grid.get(*c) {
            None | Some(Occupancy::Wall) => {
                return Err(invariant(format!("object {} footprint cell {c} is not placeable", oc.id)))
            }
            Some(Occupancy::Obstacle) if !oc.graspable => {
                return Err(invariant(format!("object {} is too large to rest on a surface", oc.id)))
            }
            _ => {}
        }
    }
    Ok(Object {
        id: oc.id.clone(),
        category: oc.category.clone(),
        attributes: oc.attributes.clone(),
        pose: Some(ObjectPose {
            floor: oc.floor,
            cell: oc.cell,
            offset: oc.offset,
        }),
        footprint,
        graspable: oc.graspable,
        heavy: oc.heavy,
        delicate: oc.delicate,
        pushable: oc.pushable,
    })
}

/// Flood-fill component ids over non-wall, non-obstacle cells.
fn components(grid: &Grid) -> BTreeMap<Cell, usize> {
    let mut comp = BTreeMap::new();
    let mut next = 0;
    for (c, occ) in grid.cells() {
        if occ != Occupancy::Free || comp.contains_key(&c) {
            continue;
        }
        let mut queue = VecDeque::from([c]);
        comp.insert(c, next);
        while let Some(cur) = queue.pop_front() {
            for n in cur.neighbors4() {
                if grid.is_free(n) && !comp.contains_key(&n) {
                    comp.insert(n, next);
                    queue.push_back(n);
                }
            }
        }
        next += 1;
    }
    comp
}

fn build_landmark_graph(
    floors: &BTreeMap<FloorId, FloorMap>,
    landmarks: &[Landmark],
) -> Result<LandmarkGraph, WorldError> {
    let mut edges = Vec::new();
    for (fid, floor) in floors {
        let comp = components(&floor.grid);
        let idx: Vec<usize> = (0..landmarks.len()).filter(|i| landmarks[*i].floor == *fid).collect();
        for (k, &i) in idx.iter().enumerate() {
            for &j in &idx[k + 1..] {
                if comp.get(&landmarks[i].cell) == comp.get(&landmarks[j].cell) {
                    edges.push((i, j));
                } else {
                    return Err(invariant(format!(
                        "landmarks {} and {} are not connected on floor {fid}",
                        landmarks[i].id, landmarks[j].id
                    )));
                }
            }
        }
    }
    Ok(LandmarkGraph {
        nodes: landmarks.to_vec(),
        edges,
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    fn tiny() -> serde_json::Value {
        serde_json::json!({
            "name": "tiny",
            "floors": [{"id": 1, "grid": ["#####", "#...#", "#...#", "#####"], "rooms": []}],
            "landmarks": [{"id": "a", "floor": 1, "cell": [1, 1], "heading": "E", "label": "a",
                           "descriptor": "corner", "elevator": false, "room": null}],
            "objects": [
                {"id": "can", "category": "soda_can", "floor": 1, "cell": [2, 3]},
                {"id": "box", "category": "box", "floor": 1, "cell": [2, 2], "graspable": false}
            ],
            "robot_start": {"landmark": "a"}
        })
    }

    #[test]
    fn loads_tiny_world() {
        let ws = load_world(&tiny().to_string()).unwrap();
        assert_eq!(ws.objects.len(), 2);
        assert_eq!(ws.robot.cell, Cell::new(1, 1));
        assert_eq!(ws.robot.arm_reach, 0.8);
        assert_eq!(ws.cell_size(), 0.25);
    }

    #[test]
    fn overlapping_footprints_rejected() {
        let mut v = tiny();
        v["objects"][1]["cell"] = serde_json::json!([2, 3]);
        let err = load_world(&v.to_string()).unwrap_err();
        assert!(err.to_string().contains("footprint overlap"), "{err}");
    }

    #[test]
    fn unknown_field_is_named() {
        let mut v = tiny();
        v["objects"][0]["colour"] = serde_json::json!("red");
        let err = load_world(&v.to_string()).unwrap_err();
        assert!(matches!(err, WorldError::Schema(_)));
        assert!(err.to_string().contains("colour"), "{err}");
    }

    #[test]
    fn missing_field_is_named() {
        let mut v = tiny();
        v.as_object_mut().unwrap().remove("landmarks");
        let err = load_world(&v.to_string()).unwrap_err();
        assert!(err.to_string().contains("landmarks"), "{err}");
    }

    #[test]
    fn heavy_graspable_rejected() {
        let mut v = tiny();
        v["objects"][0]["heavy"] = serde_json::json!(true);
        assert!(load_world(&v.to_string()).is_err());
    }

    #[test]
    fn landmark_on_wall_rejected() {
        let mut v = tiny();
        v["landmarks"][0]["cell"] = serde_json::json!([0, 0]);
        let err = load_world(&v.to_string()).unwrap_err();
        assert!(err.to_string().contains("free cell"), "{err}");
    }

    #[test]
    fn shipped_buildings_load() {
        for name in ["b1", "b2", "b3"] {
            let path = format!("{}/../../scenarios/{name}.json", env!("CARGO_MANIFEST_DIR"));
            let text = std::fs::read_to_string(path).unwrap();
            let ws = load_world(&text).unwrap();
            assert!(ws.building().floors.len() >= 2);
            assert_eq!(ws.building().elevators.len(), 1);
        }
    }
}
