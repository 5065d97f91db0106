//! Scripted ground-truth solver: runs the expert policy straight against
//! the simulator, with no prompts, markers or parsing in between. Its skill
//! count is the reference an agent trial is compared to.

use crate::expert;
use crate::memory::{SceneRef, ShortTermMemory, StepKind, StepRecord};
use crate::percept::{observe, NoiseConfig};
use crate::skills::{SkillConfig, SkillContext, SkillRegistry};
use crate::world::{check_task_success, Cell, FloorId, GoalSpec, WorldState};

#[derive(Debug, Clone, PartialEq)]
pub struct SolverRun {
    /// Skill names in execution order.
    pub skills: Vec<String>,
    /// Robot floor and cell before each skill.
    pub poses: Vec<(FloorId, Cell)>,
    pub success: bool,
    pub world: WorldState,
}

#[derive(Debug, Clone, PartialEq, thiserror::Error)]
pub enum SolverError {
    #[error("step {step}: unknown skill {skill}")]
    UnknownSkill { step: usize, skill: String },
    #[error("step {step}: {skill} offers no candidate {value}")]
    MissingCandidate { step: usize, skill: String, value: String },
}

pub fn solve(
    mut ws: WorldState,
    goal: &GoalSpec,
    registry: &SkillRegistry,
    noise: &NoiseConfig,
    skills: &SkillConfig,
    max_steps: usize,
) -> Result<SolverRun, SolverError> {
    let mut stm = ShortTermMemory::default();
    let mut names = Vec::new();
    let mut poses = Vec::new();
    while stm.len() < max_steps && !check_task_success(&ws, goal).unwrap_or(false) {
        let step = stm.len() + 1;
        let obs = observe(&ws, noise, step);
        let action = expert::decide(&ws, goal, &obs, &stm.records);
        if action.skill == "done" {
            break;
        }
        let skill = registry
            .get(&action.skill)
            .ok_or_else(|| SolverError::UnknownSkill { step, skill: action.skill.clone() })?
            .clone();
        let ctx = SkillContext { observation: &obs, config: skills, step };
        let mut chosen = Vec::new();
        for (i, value) in action.params.iter().enumerate() {
            let c = skill
                .candidates(i, &ws, &ctx)
                .into_iter()
                .find(|c| c.resolved() == *value)
                .ok_or_else(|| SolverError::MissingCandidate { step, skill: action.skill.clone(), value: value.clone() })?;
            chosen.push(c);
        }
        poses.push((ws.robot.floor, ws.robot.cell));
        let outcome = skill.execute(&mut ws, &chosen, &ctx);
        names.push(action.skill.clone());
        let record = StepRecord {
            step,
            kind: StepKind::Skill,
            scene: SceneRef::default(),
            subtask: action.subtask,
            skill: action.skill,
            params: Vec::new(),
            outcome,
            transcript: Vec::new(),
        };
        stm.append(record).expect("contiguous steps");
    }
    let success = check_task_success(&ws, goal).unwrap_or(false);
    Ok(SolverRun { skills: names, poses, success, world: ws })
}
