//! Static building model, dynamic world state and transition rules.

mod config;
mod geom;
mod goal;
mod model;
mod ops;
mod outcome;

pub use config::{
    load_world, DoorConfig, ElevatorConfig, FloorCell, FloorConfig, ObjectConfig, PanelConfig, RandomizationConfig,
    ReceptionConfig, Region, RobotStart, RoomConfig, StopConfig, WorldConfig, WorldError,
};
pub use geom::{bearing, Cell, FloorId, Heading, Point, RelDir, Side};
pub use goal::{check_task_success, GoalSpec, DELIVERY_RADIUS};
pub use model::*;
pub use ops::{
    apply_move_base, apply_open_door, apply_pickup, apply_push, elevator_transition, press_button, INTERACT_RANGE,
    PUSH_DISTANCE, PUSH_RANGE,
};
pub use outcome::{Failure, FailureCode, Outcome};
