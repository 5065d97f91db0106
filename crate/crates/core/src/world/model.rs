use std::collections::{BTreeMap, BTreeSet};
use std::sync::Arc;

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use super::config::RandomizationConfig;
use super::geom::{Cell, FloorId, Heading, Point, Side};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Occupancy {
    Free,
    Wall,
    /// Static furniture: blocks motion, not sight. Small objects may rest on it.
    Obstacle,
}

/// Rectangular occupancy grid of one floor.
#[derive(Debug, Clone, PartialEq)]
pub struct Grid {
    rows: i32,
    cols: i32,
    cells: Vec<Occupancy>,
}

impl Grid {
    pub fn new(rows: i32, cols: i32, fill: Occupancy) -> Self {
        Self {
            rows,
            cols,
            cells: vec![fill; (rows * cols) as usize],
        }
    }

    /// Parses rows of `#` (wall), `o` (static obstacle) and `.` (free).
    pub fn from_rows<S: AsRef<str>>(rows: &[S]) -> Result<Self, String> {
        let height = rows.len();
        if height == 0 {
            return Err("grid has no rows".into());
        }
        let width = rows[0].as_ref().chars().count();
        if width == 0 {
            return Err("grid has empty rows".into());
        }
        let mut cells = Vec::with_capacity(height * width);
        for (r, row) in rows.iter().enumerate() {
            let row = row.as_ref();
            if row.chars().count() != width {
                return Err(format!("row {r} has {} cells, expected {width}", row.chars().count()));
            }
            for (c, ch) in row.chars().enumerate() {
                cells.push(match ch {
                    '.' => Occupancy::Free,
                    '#' => Occupancy::Wall,
                    'o' => Occupancy::Obstacle,
                    other => return Err(format!("row {r} col {c}: unknown cell symbol {other:?}")),
                });
            }
        }
        Ok(Self {
            rows: height as i32,
            cols: width as i32,
            cells,
        })
    }

    pub fn rows(&self) -> i32 {
        self.rows
    }

    pub fn cols(&self) -> i32 {
        self.cols
    }

    pub fn in_bounds(&self, c: Cell) -> bool {
        c.row >= 0 && c.col >= 0 && c.row < self.rows && c.col < self.cols
    }

    pub fn get(&self, c: Cell) -> Option<Occupancy> {
        self.in_bounds(c)
            .then(|| self.cells[(c.row * self.cols + c.col) as usize])
    }

    pub fn set(&mut self, c: Cell, occ: Occupancy) {
        assert!(self.in_bounds(c), "cell {c} out of bounds");
        let idx = (c.row * self.cols + c.col) as usize;
        self.cells[idx] = occ;
    }

    pub fn is_free(&self, c: Cell) -> bool {
        self.get(c) == Some(Occupancy::Free)
    }

    pub fn is_wall(&self, c: Cell) -> bool {
        self.get(c) == Some(Occupancy::Wall)
    }

    pub fn cells(&self) -> impl Iterator<Item = (Cell, Occupancy)> + '_ {
        (0..self.rows).flat_map(move |r| {
            (0..self.cols).map(move |c| {
                let cell = Cell::new(r, c);
                (cell, self.cells[(r * self.cols + c) as usize])
            })
        })
    }

    pub fn to_rows(&self) -> Vec<String> {
        (0..self.rows)
            .map(|r| {
                (0..self.cols)
                    .map(|c| match self.cells[(r * self.cols + c) as usize] {
                        Occupancy::Free => '.',
                        Occupancy::Wall => '#',
                        Occupancy::Obstacle => 'o',
                    })
                    .collect()
            })
            .collect()
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Room {
    pub name: String,
    pub kind: String,
    pub min: Cell,
    pub max: Cell,
    /// Free cells of the rectangle.
    pub cells: BTreeSet<Cell>,
}

impl Room {
    pub fn contains_rect(&self, c: Cell) -> bool {
        c.row >= self.min.row && c.row <= self.max.row && c.col >= self.min.col && c.col <= self.max.col
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct FloorMap {
    pub floor_id: FloorId,
    pub grid: Grid,
    pub rooms: Vec<Room>,
}

impl FloorMap {
    pub fn room_at(&self, c: Cell) -> Option<&Room> {
        self.rooms.iter().find(|r| r.cells.contains(&c) || r.contains_rect(c))
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Landmark {
    pub id: String,
    pub floor: FloorId,
    pub cell: Cell,
    pub heading: Heading,
    pub label: String,
    pub descriptor: String,
    pub elevator: bool,
    pub room: Option<String>,
}

/// Topological map: landmark nodes plus same-floor traversability edges.
#[derive(Debug, Clone, PartialEq, Default)]
pub struct LandmarkGraph {
    pub nodes: Vec<Landmark>,
    pub edges: Vec<(usize, usize)>,
}

impl LandmarkGraph {
    pub fn get(&self, id: &str) -> Option<&Landmark> {
        self.nodes.iter().find(|n| n.id == id)
    }

    pub fn on_floor(&self, floor: FloorId) -> impl Iterator<Item = &Landmark> {
        self.nodes.iter().filter(move |n| n.floor == floor)
    }

    pub fn elevator_landmark(&self, floor: FloorId) -> Option<&Landmark> {
        self.nodes.iter().find(|n| n.floor == floor && n.elevator)
    }

    pub fn for_room(&self, room: &str) -> Option<&Landmark> {
        self.nodes.iter().find(|n| n.room.as_deref() == Some(room) && !n.elevator)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum CallDirection {
    Up,
    Down,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum ButtonAction {
    Call(CallDirection),
    Floor(FloorId),
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Button {
    pub label: String,
    /// Position on the panel plane, meters.
    pub position: [f64; 2],
    pub action: ButtonAction,
}

#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ButtonPanel {
    pub buttons: Vec<Button>,
}

/// Which physical panel a button lives on.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum PanelRef {
    Call(FloorId),
    Cab,
}

#[derive(Debug, Clone, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub struct ButtonRef {
    pub elevator: String,
    pub panel: PanelRef,
    pub index: usize,
}

#[derive(Debug, Clone, PartialEq)]
pub struct ElevatorStop {
    pub floor: FloorId,
    pub cab_cell: Cell,
    pub cab_heading: Heading,
    pub exit_cell: Cell,
    pub exit_heading: Heading,
    pub call_panel_cell: Cell,
    pub call_panel: ButtonPanel,
    pub cab_panel_cell: Cell,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Elevator {
    pub id: String,
    pub served_floors: BTreeSet<FloorId>,
    pub stops: BTreeMap<FloorId, ElevatorStop>,
    pub cab_panel: ButtonPanel,
    pub initial_floor: FloorId,
}

impl Elevator {
    pub fn panel(&self, panel: PanelRef) -> Option<&ButtonPanel> {
        match panel {
            PanelRef::Cab => Some(&self.cab_panel),
            PanelRef::Call(f) => self.stops.get(&f).map(|s| &s.call_panel),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum DoorState {
    Open,
    Closed,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Door {
    pub id: String,
    pub floor: FloorId,
    pub cells: Vec<Cell>,
    /// Hinge side as seen by a robot moving along `approach`.
    pub hinge_side: Side,
    pub approach: Heading,
}

impl Door {
    /// Hinge side as it appears to a robot facing `heading`.
    pub fn apparent_hinge(&self, heading: Heading) -> Side {
        if heading == self.approach.opposite() {
            self.hinge_side.opposite()
        } else {
            self.hinge_side
        }
    }
}

#[derive(Debug, Clone, PartialEq, Default)]
pub struct Building {
    pub name: String,
    pub cell_size: f64,
    pub floors: BTreeMap<FloorId, FloorMap>,
    pub landmark_graph: LandmarkGraph,
    pub elevators: Vec<Elevator>,
    pub doors: Vec<Door>,
    pub randomization: Option<RandomizationConfig>,
}

impl Building {
    pub fn floor(&self, id: FloorId) -> Option<&FloorMap> {
        self.floors.get(&id)
    }

    pub fn elevator(&self, id: &str) -> Option<&Elevator> {
        self.elevators.iter().find(|e| e.id == id)
    }

    pub fn door(&self, id: &str) -> Option<&Door> {
        self.doors.iter().find(|d| d.id == id)
    }

    pub fn landmark(&self, id: &str) -> Option<&Landmark> {
        self.landmark_graph.get(id)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ObjectPose {
    pub floor: FloorId,
    pub cell: Cell,
    #[serde(default)]
    pub offset: [f64; 2],
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Object {
    pub id: String,
    pub category: String,
    pub attributes: BTreeMap<String, String>,
    /// `None` while grasped.
    pub pose: Option<ObjectPose>,
    pub footprint: Vec<Cell>,
    pub graspable: bool,
    pub heavy: bool,
    pub delicate: bool,
    pub pushable: bool,
}

impl Object {
    pub fn floor(&self) -> Option<FloorId> {
        self.pose.as_ref().map(|p| p.floor)
    }

    /// Footprint centroid plus continuous offset, meters.
    pub fn position(&self, cell_size: f64) -> Option<Point> {
        let pose = self.pose.as_ref()?;
        if self.footprint.is_empty() {
            return None;
        }
        let n = self.footprint.len() as f64;
        let (sx, sy) = self.footprint.iter().fold((0.0, 0.0), |(x, y), c| {
            let p = c.center(cell_size);
            (x + p.x, y + p.y)
        });
        Some(Point {
            x: sx / n + pose.offset[0],
            y: sy / n + pose.offset[1],
        })
    }

    pub fn occupies(&self, floor: FloorId, cell: Cell) -> bool {
        self.floor() == Some(floor) && self.footprint.contains(&cell)
    }

    /// Human-readable appearance, i.e. what a camera would show.
    pub fn appearance(&self) -> String {
        let name = self.category.replace('_', " ");
        if self.attributes.is_empty() {
            return name;
        }
        let attrs: Vec<String> = self
            .attributes
            .iter()
            .map(|(k, v)| match v.as_str() {
                "true" => k.clone(),
                "false" => format!("not {k}"),
                _ => format!("{k}: {v}"),
            })
            .collect();
        format!("{name} ({})", attrs.join(", "))
    }

    pub fn matches(&self, filter: &BTreeMap<String, String>) -> bool {
        filter.iter().all(|(k, v)| {
            let actual = if k == "category" {
                Some(&self.category)
            } else {
                self.attributes.get(k)
            };
            actual.is_some_and(|a| a.eq_ignore_ascii_case(v))
        })
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RobotState {
    pub floor: FloorId,
    pub cell: Cell,
    pub heading: Heading,
    pub held_object: Option<String>,
    pub arm_reach: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ElevatorState {
    pub cab_floor: FloorId,
    pub call_direction: Option<CallDirection>,
    pub selected_floor: Option<FloorId>,
}

/// Dynamic world state. Owned by exactly one trial.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct WorldState {
    #[serde(skip)]
    pub building: Arc<Building>,
    pub objects: BTreeMap<String, Object>,
    pub doors: BTreeMap<String, DoorState>,
    pub elevators: BTreeMap<String, ElevatorState>,
    pub robot: RobotState,
    pub rng_seed: u64,
}

/// What occupies a cell besides free floor.
#[derive(Debug, Clone, PartialEq, Eq)]
pub enum Occupant {
    OutOfBounds,
    Wall,
    Obstacle,
    Door(String),
    Object(String),
}

impl Occupant {
    pub fn describe(&self) -> String {
        match self {
            Occupant::OutOfBounds | Occupant::Wall => "wall".into(),
            Occupant::Obstacle => "static obstacle".into(),
            Occupant::Door(id) => format!("door {id}"),
            Occupant::Object(id) => format!("object {id}"),
        }
    }

    pub fn entity_id(&self) -> String {
        match self {
            Occupant::OutOfBounds | Occupant::Wall => "wall".into(),
            Occupant::Obstacle => "obstacle".into(),
            Occupant::Door(id) | Occupant::Object(id) => id.clone(),
        }
    }
}

impl WorldState {
    pub fn building(&self) -> &Building {
        &self.building
    }

    pub fn cell_size(&self) -> f64 {
        self.building.cell_size
    }

    pub fn robot_point(&self) -> Point {
        self.robot.cell.center(self.cell_size())
    }

    pub fn object(&self, id: &str) -> Option<&Object> {
        self.objects.get(id)
    }

    pub fn door_closed(&self, id: &str) -> bool {
        self.doors.get(id) == Some(&DoorState::Closed)
    }

    /// First non-floor occupant of `cell`, or `None` if the cell is free.
    /// The robot itself is not an occupant.
    pub fn occupant(&self, floor: FloorId, cell: Cell) -> Option<Occupant> {
        let Some(map) = self.building().floor(floor) else {
            return Some(Occupant::OutOfBounds);
        };
        match map.grid.get(cell) {
            None => return Some(Occupant::OutOfBounds),
            Some(Occupancy::Wall) => return Some(Occupant::Wall),
            Some(Occupancy::Obstacle) => return Some(Occupant::Obstacle),
            Some(Occupancy::Free) => {}
        }
        for door in &self.building().doors {
            if door.floor == floor && door.cells.contains(&cell) && self.door_closed(&door.id) {
                return Some(Occupant::Door(door.id.clone()));
            }
        }
        self.objects
            .values()
            .find(|o| o.occupies(floor, cell))
            .map(|o| Occupant::Object(o.id.clone()))
    }

    pub fn is_free(&self, floor: FloorId, cell: Cell) -> bool {
        self.occupant(floor, cell).is_none()
    }

    /// Like [`WorldState::occupant`] but ignoring one object.
    pub fn occupant_except(&self, floor: FloorId, cell: Cell, except: &str) -> Option<Occupant> {
        match self.occupant(floor, cell) {
            Some(Occupant::Object(id)) if id == except => self
                .objects
                .values()
                .find(|o| o.id != except && o.occupies(floor, cell))
                .map(|o| Occupant::Object(o.id.clone())),
            other => other,
        }
    }

    /// Hash over the serialized dynamic state.
    pub fn state_hash(&self) -> String {
        let bytes = serde_json::to_vec(self).expect("world state serializes");
        let mut h = Sha256::new();
        h.update(self.building().name.as_bytes());
        h.update(&bytes);
        hex::encode(h.finalize())
    }

    /// Room name containing the robot, if any.
    pub fn robot_room(&self) -> Option<&str> {
        self.building()
            .floor(self.robot.floor)
            .and_then(|f| f.room_at(self.robot.cell))
            .map(|r| r.name.as_str())
    }

    /// Elevator whose cab currently holds the robot.
    pub fn robot_cab(&self) -> Option<&Elevator> {
        self.building().elevators.iter().find(|e| {
            let state = &self.elevators[&e.id];
            state.cab_floor == self.robot.floor
                && e.stops.get(&self.robot.floor).is_some_and(|s| s.cab_cell == self.robot.cell)
        })
    }

    /// Checks the dynamic invariants: free robot cell, disjoint footprints.
    pub fn check_invariants(&self) -> Result<(), String> {
        let r = &self.robot;
        if self.occupant(r.floor, r.cell).is_some() {
            return Err(format!("robot cell {} on floor {} is occupied", r.cell, r.floor));
        }
        let mut seen: BTreeMap<(FloorId, Cell), &str> = BTreeMap::new();
        for o in self.objects.values() {
            let Some(f) = o.floor() else {
                if !o.footprint.is_empty() {
                    return Err(format!("held object {} still has a footprint", o.id));
                }
                continue;
            };
            for c in &o.footprint {
                if let Some(prev) = seen.insert((f, *c), &o.id) {
                    return Err(format!("footprint overlap between {prev} and {} at {c}", o.id));
                }
            }
        }
        if let Some(h) = &r.held_object {
            match self.objects.get(h) {
                Some(o) if o.pose.is_none() => {}
                _ => return Err(format!("held object {h} is not in hand")),
            }
        }
        Ok(())
    }
}
