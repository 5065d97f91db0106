//! Parameterized skills behind one interface, plus the registry that feeds
//! their descriptions to the decision engine.

mod builtin;

use std::collections::BTreeMap;
use std::sync::Arc;

use serde::{Deserialize, Serialize};

use crate::percept::{Candidate, Observation};
use crate::world::{Outcome, WorldState};

pub use builtin::{
    builtin_skills, CallElevator, GoToLandmark, MoveBase, NavigateNearObj, OpenDoor, Pickup, PushObjOnGround,
    UseElevator,
};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ParamKind {
    Landmark,
    Detection,
    Direction,
    Side,
    Button,
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct ParamSpec {
    pub name: &'static str,
    pub kind: ParamKind,
    /// Detector prompt used to generate candidates, for detection params.
    pub query: Option<&'static str>,
}

#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct SkillConfig {
    /// Probability that a grasp finds no inverse kinematics solution.
    pub ik_failure_rate: f64,
    pub seed: u64,
}

/// Read-only inputs available while generating candidates and executing.
pub struct SkillContext<'a> {
    pub observation: &'a Observation,
    pub config: &'a SkillConfig,
    pub step: usize,
}

pub trait Skill: Send + Sync {
    fn name(&self) -> &str;
    /// Text block shown to the model during skill selection.
    fn description(&self) -> &str;
    fn parameters(&self) -> &[ParamSpec];
    /// Candidates for parameter `index`, in the state the decision was
    /// made from.
    fn candidates(&self, index: usize, ws: &WorldState, ctx: &SkillContext) -> Vec<Candidate>;
    /// Runs the skill with one chosen candidate per parameter. Failures are
    /// outcomes, never panics.
    fn execute(&self, ws: &mut WorldState, params: &[Candidate], ctx: &SkillContext) -> Outcome;
}

#[derive(Debug, Clone, PartialEq, thiserror::Error)]
pub enum SkillError {
    #[error("skill {0} is already registered")]
    Duplicate(String),
    #[error("no skills registered")]
    Empty,
    #[error("unknown skill {0}")]
    Unknown(String),
}

#[derive(Clone, Default)]
pub struct SkillRegistry {
    skills: Vec<Arc<dyn Skill>>,
}

impl std::fmt::Debug for SkillRegistry {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.debug_list().entries(self.names()).finish()
    }
}

impl SkillRegistry {
    pub fn new() -> Self {
        Self::default()
    }

    /// Registry holding the eight built-in skills.
    pub fn builtin() -> Self {
        let mut reg = Self::new();
        for s in builtin_skills() {
            reg.register(s).expect("built-in names are unique");
        }
        reg
    }

    pub fn register(&mut self, skill: Arc<dyn Skill>) -> Result<(), SkillError> {
        if self.get(skill.name()).is_some() {
            return Err(SkillError::Duplicate(skill.name().to_string()));
        }
        self.skills.push(skill);
        Ok(())
    }

    /// Keeps only the skills the manifest does not disable.
    pub fn apply_manifest(&mut self, manifest: &BTreeMap<String, bool>) -> Result<(), SkillError> {
        for name in manifest.keys() {
            if self.get(name).is_none() {
                return Err(SkillError::Unknown(name.clone()));
            }
        }
        self.skills
            .retain(|s| manifest.get(s.name()).copied().unwrap_or(true));
        Ok(())
    }

    pub fn get(&self, name: &str) -> Option<&Arc<dyn Skill>> {
        self.skills.iter().find(|s| s.name() == name)
    }

    pub fn names(&self) -> Vec<&str> {
        self.skills.iter().map(|s| s.name()).collect()
    }

    pub fn len(&self) -> usize {
        self.skills.len()
    }

    pub fn is_empty(&self) -> bool {
        self.skills.is_empty()
    }

    /// All descriptions in registration order, separated by blank lines.
    pub fn describe_all(&self) -> Result<String, SkillError> {
        if self.skills.is_empty() {
            return Err(SkillError::Empty);
        }
        Ok(self
            .skills
            .iter()
            .map(|s| s.description().trim_end().to_string())
            .collect::<Vec<_>>()
            .join("\n\n"))
    }
}
