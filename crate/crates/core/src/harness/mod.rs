//! Benchmark tasks, scenario randomization, metrics and offline parameter
//! evaluation.

pub mod bench;
pub mod offline;
pub mod scenario;
pub mod solver;

use std::collections::BTreeMap;
use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::engine::TrialResult;
use crate::world::{FailureCode, GoalSpec, Region};

pub use bench::{load_results, run_benchmark, trial_dir_name, BenchConfig, BenchOutput, Report, TaskRow};
pub use offline::{
    generate_offline, load_dataset, run_offline_eval, OfflineError, OfflineInstance, OfflineReport, OfflineRow,
};
pub use scenario::{randomize_scenario, randomize_with, Scenario, ScenarioError, ScenarioOptions};
pub use solver::{solve, SolverError, SolverRun};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum TaskKind {
    RetrieveSoda,
    RetrieveMarker,
    RearrangeChairs,
}

impl TaskKind {
    pub const ALL: [TaskKind; 3] = [TaskKind::RetrieveSoda, TaskKind::RetrieveMarker, TaskKind::RearrangeChairs];

    pub fn as_str(self) -> &'static str {
        match self {
            TaskKind::RetrieveSoda => "retrieve_soda",
            TaskKind::RetrieveMarker => "retrieve_marker",
            TaskKind::RearrangeChairs => "rearrange_chairs",
        }
    }

    pub fn phrasings(self) -> [&'static str; 3] {
        match self {
            TaskKind::RetrieveSoda => [
                "Could you grab me a drink that is low in calories?",
                "Any chance you can find me a sugar-free soda?",
                "I want something fizzy to drink, but I am on diet. Can you help me with that?",
            ],
            TaskKind::RetrieveMarker => [
                "I want to color the sky in my drawing. Can you get me a marker?",
                "I want to color grass in my drawing. Can you get me a marker?",
                "I need to color some hearts. Can you get a marker for that?",
            ],
            TaskKind::RearrangeChairs => [
                "Could you make the seating chairs in the reception area more orderly?",
                "Make the reception area more welcoming by arranging the chairs",
                "Can you help me arrange the chairs in the reception area?",
            ],
        }
    }

    /// Attribute filter of the objects the task is about.
    pub fn filter(self) -> BTreeMap<String, String> {
        let pairs: &[(&str, &str)] = match self {
            TaskKind::RetrieveSoda => &[("category", "soda_can"), ("diet", "true")],
            TaskKind::RetrieveMarker => &[("category", "marker")],
            TaskKind::RearrangeChairs => &[("category", "chair"), ("group", "reception")],
        };
        pairs.iter().map(|(k, v)| (k.to_string(), v.to_string())).collect()
    }
}

impl fmt::Display for TaskKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for TaskKind {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        TaskKind::ALL
            .into_iter()
            .find(|t| t.as_str() == s)
            .ok_or_else(|| format!("unknown task {s}; expected retrieve_soda, retrieve_marker or rearrange_chairs"))
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TaskSpec {
    /// `retrieve_soda`, `retrieve_marker`, `rearrange_chairs` or `custom`.
    pub task_id: String,
    pub instruction: String,
    pub goal: GoalSpec,
    pub seed: u64,
    pub phrasing: usize,
}

#[derive(Debug, Clone, PartialEq, thiserror::Error)]
pub enum TaskError {
    #[error("instruction is empty")]
    EmptyInstruction,
    #[error("phrasing {0} out of range 0..3")]
    Phrasing(usize),
    #[error("unknown goal predicate `{0}`")]
    Predicate(String),
    #[error("arrange goal needs a region")]
    MissingRegion,
}

impl TaskSpec {
    pub fn retrieve(kind: TaskKind, phrasing: usize, seed: u64, deliver_to: &str) -> Result<Self, TaskError> {
        let goal = GoalSpec {
            predicate: "retrieve".into(),
            filter: kind.filter(),
            deliver_to: Some(deliver_to.to_string()),
            region: None,
        };
        Self::from_kind(kind, phrasing, seed, goal)
    }

    pub fn arrange(phrasing: usize, seed: u64, region: Region) -> Result<Self, TaskError> {
        let kind = TaskKind::RearrangeChairs;
        let goal = GoalSpec { predicate: "arrange".into(), filter: kind.filter(), deliver_to: None, region: Some(region) };
        Self::from_kind(kind, phrasing, seed, goal)
    }

    fn from_kind(kind: TaskKind, phrasing: usize, seed: u64, goal: GoalSpec) -> Result<Self, TaskError> {
        let instruction = kind.phrasings().get(phrasing).ok_or(TaskError::Phrasing(phrasing))?.to_string();
        let spec = Self { task_id: kind.as_str().into(), instruction, goal, seed, phrasing };
        spec.validate()?;
        Ok(spec)
    }

    pub fn custom(instruction: &str, goal: GoalSpec, seed: u64) -> Result<Self, TaskError> {
        let spec = Self { task_id: "custom".into(), instruction: instruction.to_string(), goal, seed, phrasing: 0 };
        spec.validate()?;
        Ok(spec)
    }

    pub fn validate(&self) -> Result<(), TaskError> {
        if self.instruction.trim().is_empty() {
            return Err(TaskError::EmptyInstruction);
        }
        match self.goal.predicate.as_str() {
            "retrieve" | "hold" => Ok(()),
            "arrange" if self.goal.region.is_none() => Err(TaskError::MissingRegion),
            "arrange" => Ok(()),
            other => Err(TaskError::Predicate(other.to_string())),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum FailureCategory {
    None,
    WrongObject,
    WrongButton,
    CollisionReasoning,
    NavigationStuck,
    SensorFault,
    StepBudget,
    SemanticViolation,
}

impl FailureCategory {
    pub const FAILURES: [FailureCategory; 7] = [
        FailureCategory::WrongObject,
        FailureCategory::WrongButton,
        FailureCategory::CollisionReasoning,
        FailureCategory::NavigationStuck,
        FailureCategory::SensorFault,
        FailureCategory::StepBudget,
        FailureCategory::SemanticViolation,
    ];

    pub fn as_str(self) -> &'static str {
        match self {
            FailureCategory::None => "none",
            FailureCategory::WrongObject => "wrong-object",
            FailureCategory::WrongButton => "wrong-button",
            FailureCategory::CollisionReasoning => "collision-reasoning",
            FailureCategory::NavigationStuck => "navigation-stuck",
            FailureCategory::SensorFault => "sensor-fault",
            FailureCategory::StepBudget => "step-budget",
            FailureCategory::SemanticViolation => "semantic-violation",
        }
    }
}

impl fmt::Display for FailureCategory {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

#[derive(Debug, Clone, PartialEq, Eq, thiserror::Error)]
pub enum CategorizeError {
    #[error("not a failure")]
    NotAFailure,
}

const NAV_SKILLS: [&str; 2] = ["goto_landmark", "navigate_to_point_on_ground"];

/// Assigns a failed trial to exactly one category. Rules are tried in a
/// fixed order and the first that matches wins.
pub fn categorize_failure(result: &TrialResult) -> Result<FailureCategory, CategorizeError> {
    if result.success {
        return Err(CategorizeError::NotAFailure);
    }
    if result.predicate_satisfied && !result.violations.is_empty() {
        return Ok(FailureCategory::SemanticViolation);
    }
    if result.held_object.is_some() && !result.held_matches {
        return Ok(FailureCategory::WrongObject);
    }
    if result.wrong_presses > 0 {
        return Ok(FailureCategory::WrongButton);
    }
    let records = &result.stm.records;
    let mut counts: BTreeMap<FailureCode, usize> = BTreeMap::new();
    for code in records.iter().filter_map(|r| r.outcome.code()) {
        *counts.entry(code).or_default() += 1;
    }
    let collisions = counts.get(&FailureCode::Collision).copied().unwrap_or(0);
    let top_other = counts.iter().filter(|(c, _)| **c != FailureCode::Collision).map(|(_, n)| *n).max().unwrap_or(0);
    if collisions > 0 && collisions >= top_other {
        return Ok(FailureCategory::CollisionReasoning);
    }
    let mut run = 0;
    for r in records {
        if NAV_SKILLS.contains(&r.skill.as_str()) && !r.outcome.success {
            run += 1;
            if run >= 3 {
                return Ok(FailureCategory::NavigationStuck);
            }
        } else {
            run = 0;
        }
    }
    let last_pickup = records.iter().rev().find(|r| r.skill == "pick_up_object");
    if last_pickup.is_some_and(|r| r.outcome.code() == Some(FailureCode::SensorFault)) {
        return Ok(FailureCategory::SensorFault);
    }
    if !result.violations.is_empty() {
        return Ok(FailureCategory::SemanticViolation);
    }
    Ok(FailureCategory::StepBudget)
}
