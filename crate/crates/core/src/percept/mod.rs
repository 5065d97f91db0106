//! Simulated perception: visible detections with seeded faults, the
//! category-level detector, marker annotation and scene rasters.

mod markers;
pub mod render;

use std::collections::BTreeSet;

use serde::{Deserialize, Serialize};

use crate::rng::SeedHasher;
use crate::world::{
    bearing, ButtonRef, Cell, DoorState, FloorId, Heading, Occupancy, PanelRef, Point, WorldState,
};

pub use markers::{annotate_markers, AnnotatedScene, Candidate, CandidateValue, Marker, MarkerSet, MAX_MARKERS};

pub const FOV_DEG: f64 = 120.0;
pub const VIEW_RANGE: f64 = 6.0;
/// Half-size of the local map crop stored with each observation, cells.
pub const CROP_RADIUS: i32 = 14;

#[derive(Debug, Clone, PartialEq, thiserror::Error)]
pub enum PerceptError {
    #[error("marker overflow: {0} candidates (max {MAX_MARKERS})")]
    MarkerOverflow(usize),
    #[error("invalid noise config: {0}")]
    InvalidNoise(String),
}

/// Forces a NaN depth reading for one entity seen from one cell.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ForcedNan {
    pub entity: String,
    pub floor: FloorId,
    pub cell: Cell,
}

#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct NoiseConfig {
    pub false_negative_rate: f64,
    pub false_positive_rate: f64,
    pub label_confusion_rate: f64,
    pub nan_depth_rate: f64,
    pub seed: u64,
    pub forced_nan: Vec<ForcedNan>,
}

impl NoiseConfig {
    pub fn validate(&self) -> Result<(), PerceptError> {
        for (name, v) in [
            ("false_negative_rate", self.false_negative_rate),
            ("false_positive_rate", self.false_positive_rate),
            ("label_confusion_rate", self.label_confusion_rate),
            ("nan_depth_rate", self.nan_depth_rate),
        ] {
            if !(0.0..=1.0).contains(&v) {
                return Err(PerceptError::InvalidNoise(format!("{name} = {v} is outside [0, 1]")));
            }
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "type", rename_all = "snake_case")]
pub enum DetectionKind {
    Object,
    /// Detector hallucination with no backing entity.
    Phantom,
    Button { button: ButtonRef, label: String, panel_pos: [f64; 2] },
    Door { closed: bool },
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Detection {
    pub entity_id: String,
    pub kind: DetectionKind,
    /// Category-level label, as an open-vocabulary detector reports it.
    pub detected_label: String,
    /// What the camera shows, including fine attributes.
    pub appearance: String,
    /// Meters; NaN on a depth fault.
    #[serde(with = "nan_as_null")]
    pub distance: f64,
    /// Radians, positive to the left.
    pub bearing: f64,
    pub position: Point,
    pub cell: Cell,
    pub confidence: f64,
}

impl Detection {
    pub fn is_object(&self) -> bool {
        matches!(self.kind, DetectionKind::Object | DetectionKind::Phantom)
    }

    pub fn is_button(&self) -> bool {
        matches!(self.kind, DetectionKind::Button { .. })
    }

    pub fn distance_text(&self) -> String {
        if self.distance.is_nan() {
            "distance: unknown (sensor fault)".to_string()
        } else {
            format!("distance: {:.1} m", self.distance)
        }
    }

    pub fn direction_text(&self) -> &'static str {
        let deg = self.bearing.to_degrees();
        if deg > 20.0 {
            "to the left"
        } else if deg < -20.0 {
            "to the right"
        } else {
            "ahead"
        }
    }
}

mod nan_as_null {
    use serde::{Deserialize, Deserializer, Serializer};

    pub fn serialize<S: Serializer>(v: &f64, s: S) -> Result<S::Ok, S::Error> {
        if v.is_nan() {
            s.serialize_none()
        } else {
            s.serialize_f64(*v)
        }
    }

    pub fn deserialize<'de, D: Deserializer<'de>>(d: D) -> Result<f64, D::Error> {
        Ok(Option::<f64>::deserialize(d)?.unwrap_or(f64::NAN))
    }
}

/// Occupancy crop around the robot at observation time.
///
/// Symbols: `#` wall, `o` furniture, `.` free, `D` closed door, `d` open door.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LocalMap {
    pub origin: Cell,
    pub rows: Vec<String>,
}

impl LocalMap {
    pub fn capture(ws: &WorldState, floor: FloorId, center: Cell, radius: i32) -> Self {
        let b = ws.building();
        let grid = &b.floors[&floor].grid;
        let origin = Cell::new(center.row - radius, center.col - radius);
        let mut rows = Vec::new();
        for r in 0..=2 * radius {
            let mut line = String::new();
            for c in 0..=2 * radius {
                let cell = Cell::new(origin.row + r, origin.col + c);
                let door = b.doors.iter().find(|d| d.floor == floor && d.cells.contains(&cell));
                let ch = match (door, grid.get(cell)) {
                    (Some(d), _) if ws.door_closed(&d.id) => 'D',
                    (Some(_), _) => 'd',
                    (None, Some(Occupancy::Free)) => '.',
                    (None, Some(Occupancy::Obstacle)) => 'o',
                    (None, _) => '#',
                };
                line.push(ch);
            }
            rows.push(line);
        }
        Self { origin, rows }
    }

    pub fn symbol(&self, cell: Cell) -> char {
        let r = cell.row - self.origin.row;
        let c = cell.col - self.origin.col;
        if r < 0 || c < 0 {
            return '#';
        }
        self.rows
            .get(r as usize)
            .and_then(|row| row.chars().nth(c as usize))
            .unwrap_or('#')
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Observation {
    pub step: usize,
    pub floor: FloorId,
    pub robot_cell: Cell,
    pub robot_heading: Heading,
    /// Appearance of the grasped object.
    pub holding: Option<String>,
    /// Human-readable place, e.g. "kitchen, floor 1".
    pub location: String,
    pub detections: Vec<Detection>,
    pub local_map: LocalMap,
    pub cell_size: f64,
}

impl Observation {
    pub fn robot_point(&self) -> Point {
        self.robot_cell.center(self.cell_size)
    }

    pub fn detection(&self, entity_id: &str) -> Option<&Detection> {
        self.detections.iter().find(|d| d.entity_id == entity_id)
    }

    /// Structured-text twin of the scene.
    pub fn scene_text(&self) -> String {
        let mut out = format!(
            "Robot location: {} (facing {}).\n",
            self.location,
            heading_word(self.robot_heading)
        );
        match &self.holding {
            Some(h) => out.push_str(&format!("Holding: {h}.\n")),
            None => out.push_str("Holding: nothing.\n"),
        }
        if self.detections.is_empty() {
            out.push_str("Nothing of interest is visible.\n");
            return out;
        }
        out.push_str("Visible:\n");
        for d in &self.detections {
            out.push_str(&format!("- {}, {}, {}\n", d.appearance, d.direction_text(), d.distance_text()));
        }
        out
    }
}

fn heading_word(h: Heading) -> &'static str {
    match h {
        Heading::N => "north",
        Heading::E => "east",
        Heading::S => "south",
        Heading::W => "west",
    }
}

/// Label vocabulary for detector hallucinations and label confusion.
pub const DISTRACTOR_VOCAB: &[&str] = &[
    "mug", "apple", "banana", "book", "water_bottle", "stapler", "scissors", "notebook", "potted_plant", "laptop",
    "bowl", "paper_cup", "tape_roll", "keyboard", "snack_bag", "tissue_box",
];

/// Keyword to category table used by the detector. Attribute words such as
/// colors, brands' variants or "diet" are deliberately absent.
const KEYWORDS: &[(&str, &str)] = &[
    ("soda", "soda_can"),
    ("can", "soda_can"),
    ("cans", "soda_can"),
    ("coke", "soda_can"),
    ("cola", "soda_can"),
    ("pepsi", "soda_can"),
    ("pepper", "soda_can"),
    ("sprite", "soda_can"),
    ("drink", "soda_can"),
    ("drinks", "soda_can"),
    ("beverage", "soda_can"),
    ("marker", "marker"),
    ("markers", "marker"),
    ("pen", "marker"),
    ("chair", "chair"),
    ("chairs", "chair"),
    ("seat", "chair"),
    ("box", "box"),
    ("boxes", "box"),
    ("cardboard", "box"),
    ("sign", "wet_floor_sign"),
    ("mug", "mug"),
    ("apple", "apple"),
    ("banana", "banana"),
    ("book", "book"),
    ("bottle", "water_bottle"),
    ("stapler", "stapler"),
    ("scissors", "scissors"),
    ("notebook", "notebook"),
    ("plant", "potted_plant"),
    ("laptop", "laptop"),
    ("bowl", "bowl"),
    ("cup", "paper_cup"),
    ("tape", "tape_roll"),
    ("keyboard", "keyboard"),
    ("snack", "snack_bag"),
    ("tissue", "tissue_box"),
    ("vase", "vase"),
];

pub fn category_label(category: &str) -> String {
    category.replace('_', " ")
}

fn tokens(text: &str) -> Vec<String> {
    text.to_ascii_lowercase()
        .split(|c: char| !c.is_ascii_alphanumeric())
        .filter(|t| !t.is_empty())
        .map(str::to_string)
        .collect()
}

/// Categories named by a free-text query.
pub fn query_categories(text: &str) -> BTreeSet<&'static str> {
    let toks = tokens(text);
    let mut cats = BTreeSet::new();
    for t in &toks {
        if let Some((_, cat)) = KEYWORDS.iter().find(|(k, _)| k == t) {
            cats.insert(*cat);
        }
    }
    cats
}

/// Open-vocabulary detector over an observation. Matches category keywords
/// only, so two prompts that differ in attribute words return the same set.
pub fn detector_query(obs: &Observation, prompt: &str) -> Vec<Detection> {
    let toks = tokens(prompt);
    let has = |w: &str| toks.iter().any(|t| t == w);
    if has("button") || has("buttons") {
        return obs.detections.iter().filter(|d| d.is_button()).cloned().collect();
    }
    if has("all") && (has("objects") || has("object")) {
        return obs.detections.iter().filter(|d| d.is_object()).cloned().collect();
    }
    let cats = query_categories(prompt);
    obs.detections
        .iter()
        .filter(|d| d.is_object())
        .filter(|d| cats.iter().any(|c| category_label(c) == d.detected_label))
        .cloned()
        .collect()
}

pub(crate) fn line_of_sight(ws: &WorldState, floor: FloorId, from: Point, to: Point, target: &[Cell]) -> bool {
    let grid = &ws.building().floors[&floor].grid;
    let cs = ws.cell_size();
    let dist = from.dist(to);
    let n = ((dist / (cs / 4.0)).ceil() as usize).max(1);
    for i in 1..n {
        let t = i as f64 / n as f64;
        let x = from.x + (to.x - from.x) * t;
        let y = from.y + (to.y - from.y) * t;
        let cell = Cell::new((y / cs).floor() as i32, (x / cs).floor() as i32);
        if target.contains(&cell) {
            continue;
        }
        if grid.is_wall(cell) {
            return false;
        }
    }
    true
}

fn in_view(origin: Point, heading: Heading, target: Point) -> Option<(f64, f64)> {
    let d = origin.dist(target);
    if d > VIEW_RANGE + 1e-9 {
        return None;
    }
    let b = if d < 1e-12 { 0.0 } else { bearing(origin, heading, target) };
    (b.abs() <= (FOV_DEG / 2.0).to_radians() + 1e-9).then_some((d, b))
}

struct Draw<'a> {
    noise: &'a NoiseConfig,
    step: usize,
}

impl Draw<'_> {
    fn per_step(&self, domain: &str, key: &str) -> f64 {
        SeedHasher::new(domain)
            .u64(self.noise.seed)
            .u64(self.step as u64)
            .str(key)
            .unit()
    }
}

/// Perceives the robot's surroundings. Deterministic in
/// `(ws, noise, step)`.
pub fn observe(ws: &WorldState, noise: &NoiseConfig, step: usize) -> Observation {
    let floor = ws.robot.floor;
    let heading = ws.robot.heading;
    let origin = ws.robot_point();
    let cs = ws.cell_size();
    let draw = Draw { noise, step };
    let viewpoint_nan = |entity: &str| {
        if noise
            .forced_nan
            .iter()
            .any(|f| f.entity == entity && f.floor == floor && f.cell == ws.robot.cell)
        {
            return true;
        }
        noise.nan_depth_rate > 0.0
            && SeedHasher::new("nan")
                .u64(noise.seed)
                .i64(floor.into())
                .i64(ws.robot.cell.row.into())
                .i64(ws.robot.cell.col.into())
                .str(&heading.to_string())
                .str(entity)
                .unit()
                < noise.nan_depth_rate
    };

    let mut dets = Vec::new();
    for o in ws.objects.values() {
        if o.floor() != Some(floor) {
            continue;
        }
        let Some(p) = o.position(cs) else { continue };
        let Some((d, b)) = in_view(origin, heading, p) else { continue };
        if !line_of_sight(ws, floor, origin, p, &o.footprint) {
            continue;
        }
        if draw.per_step("fn", &o.id) < noise.false_negative_rate {
            continue;
        }
        let mut label = category_label(&o.category);
        let mut confidence = 0.9;
        if draw.per_step("confuse", &o.id) < noise.label_confusion_rate {
            let pick = (draw.per_step("confuse-label", &o.id) * DISTRACTOR_VOCAB.len() as f64) as usize;
            let alt = DISTRACTOR_VOCAB[pick.min(DISTRACTOR_VOCAB.len() - 1)];
            let alt = if alt == o.category { DISTRACTOR_VOCAB[(pick + 1) % DISTRACTOR_VOCAB.len()] } else { alt };
            label = category_label(alt);
            confidence = 0.6;
        }
        dets.push(Detection {
            entity_id: o.id.clone(),
            kind: DetectionKind::Object,
            detected_label: label,
            appearance: o.appearance(),
            distance: if viewpoint_nan(&o.id) { f64::NAN } else { d },
            bearing: b,
            position: p,
            cell: o.pose.as_ref().map(|p| p.cell).unwrap_or(o.footprint[0]),
            confidence,
        });
    }

    for door in &ws.building().doors {
        if door.floor != floor {
            continue;
        }
        let p = door.cells[0].center(cs);
        let Some((d, b)) = in_view(origin, heading, p) else { continue };
        if !line_of_sight(ws, floor, origin, p, &door.cells) {
            continue;
        }
        let closed = ws.doors.get(&door.id) == Some(&DoorState::Closed);
        dets.push(Detection {
            entity_id: door.id.clone(),
            kind: DetectionKind::Door { closed },
            detected_label: "door".into(),
            appearance: if closed { "closed door".into() } else { "open door".into() },
            distance: if viewpoint_nan(&door.id) { f64::NAN } else { d },
            bearing: b,
            position: p,
            cell: door.cells[0],
            confidence: 0.9,
        });
    }

    // elevator buttons: the cab panel from inside the cab, the call panel otherwise
    for elev in &ws.building().elevators {
        let Some(stop) = elev.stops.get(&floor) else { continue };
        let in_cab = ws.robot_cab().is_some_and(|e| e.id == elev.id);
        let (panel_ref, panel_cell, panel) = if in_cab {
            (PanelRef::Cab, stop.cab_panel_cell, &elev.cab_panel)
        } else {
            (PanelRef::Call(floor), stop.call_panel_cell, &stop.call_panel)
        };
        let p = panel_cell.center(cs);
        let visible = if in_cab {
            Some((origin.dist(p), bearing(origin, heading, p)))
        } else {
            in_view(origin, heading, p).filter(|_| line_of_sight(ws, floor, origin, p, &[panel_cell]))
        };
        let Some((d, b)) = visible else { continue };
        for (i, btn) in panel.buttons.iter().enumerate() {
            let id = format!("{}/{}/{}", elev.id, panel_key(panel_ref), i);
            dets.push(Detection {
                entity_id: id.clone(),
                kind: DetectionKind::Button {
                    button: ButtonRef {
                        elevator: elev.id.clone(),
                        panel: panel_ref,
                        index: i,
                    },
                    label: btn.label.clone(),
                    panel_pos: btn.position,
                },
                detected_label: "button".into(),
                appearance: format!("elevator button labeled {:?}", btn.label),
                distance: if viewpoint_nan(&id) { f64::NAN } else { d },
                bearing: b,
                position: p,
                cell: panel_cell,
                confidence: 0.9,
            });
        }
    }

    for k in 0..3u64 {
        let key = format!("phantom{k}");
        if draw.per_step("fp", &key) >= noise.false_positive_rate {
            continue;
        }
        let pick = (draw.per_step("fp-label", &key) * DISTRACTOR_VOCAB.len() as f64) as usize;
        let cat = DISTRACTOR_VOCAB[pick.min(DISTRACTOR_VOCAB.len() - 1)];
        let dist = 1.0 + 4.0 * draw.per_step("fp-dist", &key);
        let b = (draw.per_step("fp-bearing", &key) - 0.5) * FOV_DEG.to_radians();
        let (hx, hy) = heading.vector();
        // rotate the heading by `b` (positive = left, with y pointing south)
        let (s, c) = b.sin_cos();
        let dx = hx * c + hy * s;
        let dy = -hx * s + hy * c;
        let p = Point {
            x: origin.x + dx * dist,
            y: origin.y + dy * dist,
        };
        dets.push(Detection {
            entity_id: format!("phantom_{step}_{k}"),
            kind: DetectionKind::Phantom,
            detected_label: category_label(cat),
            appearance: category_label(cat),
            distance: dist,
            bearing: b,
            position: p,
            cell: Cell::new((p.y / cs).floor() as i32, (p.x / cs).floor() as i32),
            confidence: 0.4,
        });
    }

    dets.sort_by(|a, b| {
        a.distance
            .is_nan()
            .cmp(&b.distance.is_nan())
            .then(a.distance.total_cmp(&b.distance))
            .then(a.entity_id.cmp(&b.entity_id))
    });

    let location = match ws.robot_cab() {
        Some(e) => format!("inside elevator {} at floor {floor}", e.id),
        None => {
            let room = ws.robot_room().and_then(|r| {
                ws.building()
                    .landmark_graph
                    .nodes
                    .iter()
                    .find(|l| l.room.as_deref() == Some(r))
                    .map(|l| l.label.clone())
            });
            room.unwrap_or_else(|| format!("corridor, floor {floor}"))
        }
    };

    Observation {
        step,
        floor,
        robot_cell: ws.robot.cell,
        robot_heading: heading,
        holding: ws
            .robot
            .held_object
            .as_ref()
            .and_then(|id| ws.objects.get(id))
            .map(|o| o.appearance()),
        location,
        detections: dets,
        local_map: LocalMap::capture(ws, floor, ws.robot.cell, CROP_RADIUS),
        cell_size: cs,
    }
}

fn panel_key(p: PanelRef) -> String {
    match p {
        PanelRef::Cab => "cab".into(),
        PanelRef::Call(f) => format!("call{f}"),
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::world::load_world;
    use serde_json::json;

    fn scene() -> WorldState {
        let cfg = json!({
            "name": "scene",
            "floors": [{"id": 1, "grid": [
                "##############",
                "#............#",
                "#............#",
                "#.....#......#",
                "#.....#......#",
                "##############"
            ]}],
            "landmarks": [{"id": "s", "floor": 1, "cell": [2, 1], "heading": "E", "label": "s",
                           "descriptor": "", "elevator": false, "room": null}],
            "objects": [
                {"id": "diet", "category": "soda_can", "attributes": {"brand": "dr pepper", "diet": "true"}, "floor": 1, "cell": [2, 4]},
                {"id": "regular", "category": "soda_can", "attributes": {"brand": "dr pepper", "diet": "false"}, "floor": 1, "cell": [1, 5]},
                {"id": "pen", "category": "marker", "floor": 1, "cell": [2, 8]},
                {"id": "hidden", "category": "mug", "floor": 1, "cell": [4, 8]},
                {"id": "behind", "category": "mug", "floor": 1, "cell": [3, 1]}
            ],
            "robot_start": {"landmark": "s"}
        });
        load_world(&cfg.to_string()).unwrap()
    }

    #[test]
    fn zero_noise_sees_visible_objects_with_exact_distance() {
        let ws = scene();
        let obs = observe(&ws, &NoiseConfig::default(), 0);
        let ids: BTreeSet<&str> = obs.detections.iter().map(|d| d.entity_id.as_str()).collect();
        // `hidden` sits behind the wall stub, `behind` is outside the cone
        assert_eq!(ids, BTreeSet::from(["diet", "regular", "pen"]));
        for d in &obs.detections {
            let truth = ws.robot_distance_to(&d.entity_id).unwrap();
            assert!((d.distance - truth).abs() < 1e-9);
        }
    }

    #[test]
    fn full_nan_rate_blanks_every_distance() {
        let noise = NoiseConfig { nan_depth_rate: 1.0, ..Default::default() };
        let obs = observe(&scene(), &noise, 3);
        assert!(!obs.detections.is_empty());
        assert!(obs.detections.iter().all(|d| d.distance.is_nan()));
        assert!(obs.scene_text().contains("distance: unknown (sensor fault)"));
    }

    #[test]
    fn attribute_words_do_not_narrow_the_query() {
        let obs = observe(&scene(), &NoiseConfig::default(), 0);
        let diet = detector_query(&obs, "Diet Dr. Pepper");
        let ids: Vec<&str> = diet.iter().map(|d| d.entity_id.as_str()).collect();
        assert_eq!(ids, ["diet", "regular"]);
        assert_eq!(detector_query(&obs, "regular Dr. Pepper"), diet);
        assert_eq!(detector_query(&obs, "all objects").len(), 3);
        assert!(detector_query(&obs, "buttons").is_empty());
    }

    #[test]
    fn noise_is_deterministic_per_step() {
        let noise = NoiseConfig {
            false_negative_rate: 0.3,
            false_positive_rate: 0.5,
            label_confusion_rate: 0.3,
            nan_depth_rate: 0.3,
            seed: 9,
            forced_nan: vec![],
        };
        let ws = scene();
        let a = serde_json::to_string(&observe(&ws, &noise, 4)).unwrap();
        let b = serde_json::to_string(&observe(&ws, &noise, 4)).unwrap();
        assert_eq!(a, b);
    }

    #[test]
    fn forced_nan_applies_only_at_its_viewpoint() {
        let mut ws = scene();
        let noise = NoiseConfig {
            forced_nan: vec![ForcedNan { entity: "diet".into(), floor: 1, cell: Cell::new(2, 1) }],
            ..Default::default()
        };
        assert!(observe(&ws, &noise, 0).detection("diet").unwrap().distance.is_nan());
        ws.robot.cell = Cell::new(2, 2);
        assert!(!observe(&ws, &noise, 0).detection("diet").unwrap().distance.is_nan());
    }

    #[test]
    fn rates_outside_unit_interval_rejected() {
        let noise = NoiseConfig { nan_depth_rate: 1.5, ..Default::default() };
        assert!(noise.validate().is_err());
    }
}
