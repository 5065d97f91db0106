use std::collections::BTreeMap;

use serde::{Deserialize, Serialize};

use super::config::{Region, WorldError};
use super::model::WorldState;

/// How close the robot must be to the delivery landmark, meters.
pub const DELIVERY_RADIUS: f64 = 0.5;

/// Goal predicate of a task, evaluated purely over a world state.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct GoalSpec {
    /// One of `retrieve`, `hold`, `arrange`.
    pub predicate: String,
    #[serde(default)]
    pub filter: BTreeMap<String, String>,
    /// Landmark the object has to be brought to (`retrieve`).
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub deliver_to: Option<String>,
    /// Region every matching object must lie in (`arrange`).
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub region: Option<Region>,
}

impl GoalSpec {
    pub fn holds_match(&self, ws: &WorldState) -> bool {
        ws.robot
            .held_object
            .as_ref()
            .and_then(|id| ws.objects.get(id))
            .is_some_and(|o| o.matches(&self.filter))
    }
}

pub fn check_task_success(ws: &WorldState, goal: &GoalSpec) -> Result<bool, WorldError> {
    match goal.predicate.as_str() {
        "hold" => Ok(goal.holds_match(ws)),
        "retrieve" => {
            let id = goal
                .deliver_to
                .as_deref()
                .ok_or_else(|| WorldError::Schema("goal.deliver_to: required for retrieve".into()))?;
            let lm = ws
                .building()
                .landmark(id)
                .ok_or_else(|| WorldError::Schema(format!("goal.deliver_to: unknown landmark {id}")))?;
            let near = lm.floor == ws.robot.floor
                && lm.cell.center(ws.cell_size()).dist(ws.robot_point()) <= DELIVERY_RADIUS + 1e-9;
            Ok(near && goal.holds_match(ws))
        }
        "arrange" => {
            let region = goal
                .region
                .as_ref()
                .ok_or_else(|| WorldError::Schema("goal.region: required for arrange".into()))?;
            let mut any = false;
            for o in ws.objects.values().filter(|o| o.matches(&goal.filter)) {
                any = true;
                let Some(f) = o.floor() else { return Ok(false) };
                if !o.footprint.iter().all(|c| region.contains(f, *c)) {
                    return Ok(false);
                }
            }
            Ok(any)
        }
        other => Err(WorldError::Schema(format!("unknown predicate {other:?}"))),
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::world::{load_world, Cell};
    use serde_json::json;

    fn world() -> WorldState {
        let cfg = json!({
            "name": "g",
            "floors": [{"id": 1, "grid": ["#######", "#.....#", "#.....#", "#######"]}],
            "landmarks": [{"id": "start", "floor": 1, "cell": [1, 1], "heading": "E", "label": "start",
                           "descriptor": "", "elevator": false, "room": null}],
            "objects": [
                {"id": "diet", "category": "soda_can", "attributes": {"diet": "true"}, "floor": 1, "cell": [1, 2]},
                {"id": "regular", "category": "soda_can", "attributes": {"diet": "false"}, "floor": 1, "cell": [2, 1]},
                {"id": "c1", "category": "chair", "floor": 1, "cell": [2, 3], "graspable": false, "heavy": true},
                {"id": "c2", "category": "chair", "floor": 1, "cell": [2, 5], "graspable": false, "heavy": true}
            ],
            "robot_start": {"landmark": "start"}
        });
        load_world(&cfg.to_string()).unwrap()
    }

    fn soda_goal() -> GoalSpec {
        GoalSpec {
            predicate: "retrieve".into(),
            filter: [("category".to_string(), "soda_can".to_string()), ("diet".to_string(), "true".to_string())].into(),
            deliver_to: Some("start".into()),
            region: None,
        }
    }

    fn grab(ws: &mut WorldState, id: &str) {
        let o = ws.objects.get_mut(id).unwrap();
        o.pose = None;
        o.footprint.clear();
        ws.robot.held_object = Some(id.into());
    }

    #[test]
    fn retrieve_requires_matching_object_at_start() {
        let mut ws = world();
        assert!(!check_task_success(&ws, &soda_goal()).unwrap());
        grab(&mut ws, "diet");
        assert!(check_task_success(&ws, &soda_goal()).unwrap());
        ws.robot.cell = Cell::new(1, 5);
        assert!(!check_task_success(&ws, &soda_goal()).unwrap());
    }

    #[test]
    fn regular_soda_is_not_diet() {
        let mut ws = world();
        grab(&mut ws, "regular");
        assert!(!check_task_success(&ws, &soda_goal()).unwrap());
    }

    #[test]
    fn arrange_needs_every_chair() {
        let ws = world();
        let mut goal = GoalSpec {
            predicate: "arrange".into(),
            filter: [("category".to_string(), "chair".to_string())].into(),
            deliver_to: None,
            region: Some(Region { floor: 1, min: Cell::new(2, 1), max: Cell::new(2, 4) }),
        };
        assert!(!check_task_success(&ws, &goal).unwrap());
        goal.region.as_mut().unwrap().max = Cell::new(2, 5);
        assert!(check_task_success(&ws, &goal).unwrap());
    }

    #[test]
    fn unknown_predicate_errors() {
        let goal = GoalSpec { predicate: "teleport".into(), ..soda_goal() };
        assert!(check_task_success(&world(), &goal).is_err());
    }
}
