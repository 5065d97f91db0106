use std::fmt;

use serde::{Deserialize, Serialize};

/// Machine-parsable failure classes surfaced to the agent.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum FailureCode {
    Blocked,
    Collision,
    Unreachable,
    Unapproachable,
    SensorFault,
    OutOfReach,
    TooHeavy,
    NotGraspable,
    HandFull,
    IkFailure,
    TargetOccupied,
    NotPushable,
    NotOnGround,
    OutOfRange,
    WrongSide,
    TooFar,
    WrongPanel,
    NoFloorSelected,
    WrongDirection,
    AlreadyOnFloor,
    CrossFloor,
    NotFound,
    NoCandidates,
    ParseFailure,
    Aborted,
    TaskIncomplete,
    InvalidParameter,
}

impl FailureCode {
    pub fn as_str(self) -> &'static str {
        match self {
            FailureCode::Blocked => "blocked",
            FailureCode::Collision => "collision",
            FailureCode::Unreachable => "unreachable",
            FailureCode::Unapproachable => "unapproachable",
            FailureCode::SensorFault => "sensor_fault",
            FailureCode::OutOfReach => "out_of_reach",
            FailureCode::TooHeavy => "too_heavy",
            FailureCode::NotGraspable => "not_graspable",
            FailureCode::HandFull => "hand_full",
            FailureCode::IkFailure => "ik_failure",
            FailureCode::TargetOccupied => "target_occupied",
            FailureCode::NotPushable => "not_pushable",
            FailureCode::NotOnGround => "not_on_ground",
            FailureCode::OutOfRange => "out_of_range",
            FailureCode::WrongSide => "wrong_side",
            FailureCode::TooFar => "too_far",
            FailureCode::WrongPanel => "wrong_panel",
            FailureCode::NoFloorSelected => "no_floor_selected",
            FailureCode::WrongDirection => "wrong_direction",
            FailureCode::AlreadyOnFloor => "already_on_floor",
            FailureCode::CrossFloor => "cross_floor",
            FailureCode::NotFound => "not_found",
            FailureCode::NoCandidates => "no_candidates",
            FailureCode::ParseFailure => "parse_failure",
            FailureCode::Aborted => "aborted",
            FailureCode::TaskIncomplete => "task_incomplete",
            FailureCode::InvalidParameter => "invalid_parameter",
        }
    }
}

impl fmt::Display for FailureCode {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Failure {
    pub code: FailureCode,
    /// Entity responsible for the failure, when there is one (blocking
    /// object, door, wall).
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub entity: Option<String>,
    pub message: String,
}

/// Result of executing a skill or world transition.
///
/// `failure` is present iff `success` is false.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Outcome {
    pub success: bool,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub failure: Option<Failure>,
    /// Semantic violations committed while succeeding physically, e.g.
    /// pushing a delicate object.
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    pub violations: Vec<String>,
}

impl Outcome {
    pub fn ok() -> Self {
        Self {
            success: true,
            failure: None,
            violations: Vec::new(),
        }
    }

    pub fn fail(code: FailureCode, message: impl Into<String>) -> Self {
        Self {
            success: false,
            failure: Some(Failure {
                code,
                entity: None,
                message: message.into(),
            }),
            violations: Vec::new(),
        }
    }

    pub fn fail_with(code: FailureCode, entity: impl Into<String>, message: impl Into<String>) -> Self {
        Self {
            success: false,
            failure: Some(Failure {
                code,
                entity: Some(entity.into()),
                message: message.into(),
            }),
            violations: Vec::new(),
        }
    }

    pub fn code(&self) -> Option<FailureCode> {
        self.failure.as_ref().map(|f| f.code)
    }

    pub fn reason(&self) -> Option<&str> {
        self.failure.as_ref().map(|f| f.message.as_str())
    }

    pub fn blocking_entity(&self) -> Option<&str> {
        self.failure.as_ref().and_then(|f| f.entity.as_deref())
    }
}

impl fmt::Display for Outcome {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match &self.failure {
            None => f.write_str("success")?,
            Some(fail) => write!(f, "failure [{}]: {}", fail.code, fail.message)?,
        }
        for v in &self.violations {
            write!(f, " (violation: {v})")?;
        }
        Ok(())
    }
}
