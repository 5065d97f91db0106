//! Synthetic offline dataset of single parameter decisions and its
//! evaluation.

use std::collections::BTreeMap;
use std::fmt::Write as _;
use std::sync::Arc;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use super::bench::percent;
use super::{randomize_with, ScenarioError, ScenarioOptions, TaskKind};
use crate::backends::{AnswerForm, AnswerKey, Backend, BackendRequest, OracleContext, RequestMeta};
use crate::engine::parse::{parse_description, parse_stage2};
use crate::engine::prompt::{build_stage2_prompt, Stage2Inputs};
use crate::engine::{resolve_description, Mode};
use crate::expert::clearing_push_direction;
use crate::nav::{plan_route, traverse};
use crate::percept::{annotate_markers, observe, render, Candidate, CandidateValue, DetectionKind, NoiseConfig, Observation};
use crate::rng::SeedHasher;
use crate::skills::{SkillConfig, SkillContext, SkillRegistry};
use crate::world::{ButtonAction, CallDirection, FailureCode, FloorId, PanelRef, WorldConfig, WorldState};

/// One stage-2 decision with its ground truth.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct OfflineInstance {
    pub id: String,
    pub skill: String,
    /// Clutter band for pickups: `low` or `high`.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub variant: Option<String>,
    pub param_index: usize,
    pub instruction: String,
    pub subtask: String,
    /// `name=value` of earlier parameters of the same call.
    #[serde(default)]
    pub chosen: Vec<String>,
    pub observation: Observation,
    pub candidates: Vec<Candidate>,
    pub truth: String,
}

impl OfflineInstance {
    /// Table row the instance counts toward.
    pub fn row(&self) -> String {
        match &self.variant {
            Some(v) => format!("{}#{v}", self.skill),
            None => self.skill.clone(),
        }
    }

    pub fn validate(&self) -> Result<(), OfflineError> {
        if !self.candidates.iter().any(|c| c.resolved() == self.truth) {
            return Err(OfflineError::TruthNotOffered(self.id.clone()));
        }
        Ok(())
    }
}

#[derive(Debug, thiserror::Error)]
pub enum OfflineError {
    #[error("instance {0}: ground truth is not among the candidates")]
    TruthNotOffered(String),
    #[error("dataset line {line}: {message}")]
    Parse { line: usize, message: String },
    #[error("instance {id}: unknown skill {skill}")]
    UnknownSkill { id: String, skill: String },
    #[error("could not generate a {row} instance: {reason}")]
    Generation { row: String, reason: String },
    #[error(transparent)]
    Scenario(#[from] ScenarioError),
}

pub fn load_dataset(text: &str) -> Result<Vec<OfflineInstance>, OfflineError> {
    let mut out = Vec::new();
    for (i, line) in text.lines().enumerate().filter(|(_, l)| !l.trim().is_empty()) {
        let inst: OfflineInstance =
            serde_json::from_str(line).map_err(|e| OfflineError::Parse { line: i + 1, message: e.to_string() })?;
        inst.validate()?;
        out.push(inst);
    }
    Ok(out)
}

pub fn to_jsonl(instances: &[OfflineInstance]) -> String {
    let mut s = String::new();
    for i in instances {
        s.push_str(&serde_json::to_string(i).expect("instance serializes"));
        s.push('\n');
    }
    s
}

const GEN_ATTEMPTS: u64 = 50;

fn place_robot(ws: &mut WorldState, landmark: &str) -> bool {
    let Some(l) = ws.building().landmark(landmark).cloned() else { return false };
    ws.robot.floor = l.floor;
    ws.robot.cell = l.cell;
    ws.robot.heading = l.heading;
    true
}

fn candidates_for(ws: &WorldState, obs: &Observation, skill: &str, index: usize) -> Vec<Candidate> {
    let reg = SkillRegistry::builtin();
    let cfg = SkillConfig::default();
    let ctx = SkillContext { observation: obs, config: &cfg, step: 0 };
    reg.get(skill).map(|s| s.candidates(index, ws, &ctx)).unwrap_or_default()
}

fn pickup_instance(base: &WorldConfig, band: &str, seed: u64, id: String) -> Option<OfflineInstance> {
    let distractors = if band == "low" { (5, 10) } else { (20, 25) };
    let opts = ScenarioOptions {
        distractors,
        cluster: true,
        blocker_prob: 0.0,
        closed_door_prob: 0.0,
        max_wet_signs: 0,
        cross_floor: false,
    };
    let task = if seed % 2 == 0 { TaskKind::RetrieveSoda } else { TaskKind::RetrieveMarker };
    let s = randomize_with(base, task, seed, &opts).ok()?;
    let mut ws = s.world().ok()?;
    let target = s.target.clone()?;
    let obj = ws.object(&target)?.clone();
    let room = ws.building().floor(obj.floor()?)?.room_at(obj.pose.as_ref()?.cell)?.name.clone();
    let landmark = ws.building().landmark_graph.for_room(&room)?.id.clone();
    place_robot(&mut ws, &landmark);
    let obs = observe(&ws, &NoiseConfig::default(), 0);
    let candidates = candidates_for(&ws, &obs, "pick_up_object", 0);
    if candidates.len() < 2 || !candidates.iter().any(|c| c.resolved() == target) {
        return None;
    }
    let spec = s.task_spec((seed % 3) as usize).ok()?;
    Some(OfflineInstance {
        id,
        skill: "pick_up_object".into(),
        variant: Some(band.into()),
        param_index: 0,
        instruction: spec.instruction,
        subtask: format!("Pick up the {}.", obj.category.replace('_', " ")),
        chosen: vec![],
        observation: obs,
        candidates,
        truth: target,
    })
}

fn push_instance(base: &WorldConfig, seed: u64, id: String) -> Option<OfflineInstance> {
    let opts = ScenarioOptions {
        blocker_prob: 1.0,
        closed_door_prob: 0.0,
        max_wet_signs: 0,
        cross_floor: false,
        ..Default::default()
    };
    let s = randomize_with(base, TaskKind::RetrieveSoda, seed, &opts).ok()?;
    let mut ws = s.world().ok()?;
    let target = ws.object(s.target.as_ref()?)?.clone();
    let floor = target.floor()?;
    let g = &ws.building().landmark_graph;
    let elevator = g.elevator_landmark(floor)?.clone();
    let room = ws.building().floor(floor)?.room_at(target.pose.as_ref()?.cell)?.name.clone();
    let room_lm = g.for_room(&room)?.clone();
    // Alternate the direction of travel through the blocked passage.
    let (from, to) = if seed % 2 == 0 { (elevator, room_lm) } else { (room_lm, elevator) };
    place_robot(&mut ws, &from.id);
    let path = plan_route(&ws, to.cell).ok()?;
    let out = traverse(&mut ws, &path);
    if out.code() != Some(FailureCode::Blocked) {
        return None;
    }
    let blocker = out.blocking_entity()?.to_string();
    ws.object(&blocker)?;
    let truth = clearing_push_direction(&ws, &blocker, to.cell)?;
    let obs = observe(&ws, &NoiseConfig::default(), 0);
    obs.detection(&blocker)?;
    let candidates = candidates_for(&ws, &obs, "push_object_on_ground", 1);
    let name = ws.object(&blocker)?.category.replace('_', " ");
    Some(OfflineInstance {
        id,
        skill: "push_object_on_ground".into(),
        variant: None,
        param_index: 1,
        instruction: s.task_spec((seed % 3) as usize).ok()?.instruction,
        subtask: format!("Push the {name} out of the way."),
        chosen: vec![format!("object={blocker}")],
        observation: obs,
        candidates,
        truth: truth.as_str().to_string(),
    })
}

/// Floors whose call panel offers more than one button.
fn call_stops(ws: &WorldState) -> Vec<FloorId> {
    let mut out = Vec::new();
    for e in &ws.building().elevators {
        for (f, _) in &e.stops {
            if e.panel(PanelRef::Call(*f)).is_some_and(|p| p.buttons.len() > 1) {
                out.push(*f);
            }
        }
    }
    out
}

fn call_instance(base: &WorldConfig, seed: u64, id: String) -> Option<OfflineInstance> {
    let mut ws = base.build().ok()?;
    let stops = call_stops(&ws);
    let rng = |tag: &str| SeedHasher::new("offline-call").str(tag).u64(seed).finish();
    let floor = *stops.get((rng("floor") % stops.len().max(1) as u64) as usize)?;
    let others: Vec<FloorId> = ws.building().floors.keys().copied().filter(|f| *f != floor).collect();
    let target = others[(rng("target") % others.len() as u64) as usize];
    let lm = ws.building().landmark_graph.elevator_landmark(floor)?.id.clone();
    place_robot(&mut ws, &lm);
    let obs = observe(&ws, &NoiseConfig::default(), 0);
    let candidates = candidates_for(&ws, &obs, "call_elevator", 0);
    let want = ButtonAction::Call(if target > floor { CallDirection::Up } else { CallDirection::Down });
    let truth = candidates.iter().find_map(|c| match &c.value {
        CandidateValue::Detection(d) => match &d.kind {
            DetectionKind::Button { button, .. } => {
                let panel = ws.building().elevator(&button.elevator)?.panel(button.panel)?;
                (panel.buttons.get(button.index)?.action == want).then(|| d.entity_id.clone())
            }
            _ => None,
        },
        _ => None,
    })?;
    if candidates.len() < 2 {
        return None;
    }
    Some(OfflineInstance {
        id,
        skill: "call_elevator".into(),
        variant: None,
        param_index: 0,
        instruction: format!("Go to floor {target}."),
        subtask: format!("Go from floor {floor} to floor {target}."),
        chosen: vec![],
        observation: obs,
        candidates,
        truth,
    })
}

pub const ROWS: [&str; 4] = ["pick_up_object#low", "pick_up_object#high", "push_object_on_ground", "call_elevator"];

/// `per_row` instances for each of the four rows, cycling through the
/// buildings. Call instances only use buildings with a two-button call
/// panel.
pub fn generate_offline(buildings: &[WorldConfig], per_row: usize, seed: u64) -> Result<Vec<OfflineInstance>, OfflineError> {
    let call_buildings: Vec<&WorldConfig> = buildings
        .iter()
        .filter(|b| b.build().is_ok_and(|ws| !call_stops(&ws).is_empty()))
        .collect();
    let jobs: Vec<(&str, usize)> = ROWS.iter().flat_map(|r| (0..per_row).map(move |k| (*r, k))).collect();
    jobs.par_iter()
        .map(|&(row, k)| {
            let pool: Vec<&WorldConfig> =
                if row == "call_elevator" { call_buildings.clone() } else { buildings.iter().collect() };
            if pool.is_empty() {
                return Err(OfflineError::Generation { row: row.into(), reason: "no suitable building".into() });
            }
            let base = pool[k % pool.len()];
            let id = format!("{}-{k:05}", row.replace('#', "-"));
            for attempt in 0..GEN_ATTEMPTS {
                let s = SeedHasher::new("offline").str(row).u64(seed).u64(k as u64).u64(attempt).finish();
                let inst = match row {
                    "pick_up_object#low" => pickup_instance(base, "low", s, id.clone()),
                    "pick_up_object#high" => pickup_instance(base, "high", s, id.clone()),
                    "push_object_on_ground" => push_instance(base, s, id.clone()),
                    _ => call_instance(base, s, id.clone()),
                };
                if let Some(inst) = inst {
                    inst.validate()?;
                    return Ok(inst);
                }
            }
            Err(OfflineError::Generation { row: row.into(), reason: format!("{GEN_ATTEMPTS} attempts failed") })
        })
        .collect()
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct InstanceOutcome {
    pub id: String,
    pub row: String,
    /// Resolved value of the answer, `None` when it could not be parsed.
    pub predicted: Option<String>,
    pub correct: bool,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct OfflineRow {
    pub row: String,
    pub instances: usize,
    pub correct: usize,
    pub rate: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct OfflineReport {
    pub mode: Mode,
    pub rows: Vec<OfflineRow>,
    /// Mean of the row rates, percent.
    pub average: f64,
    pub outcomes: Vec<InstanceOutcome>,
}

impl OfflineReport {
    pub fn render_text(&self) -> String {
        let mut s = format!("mode: {}\n", self.mode);
        writeln!(s, "{:<26} {:>9} {:>8} {:>8}", "skill parameter", "instances", "correct", "rate").unwrap();
        for r in &self.rows {
            writeln!(s, "{:<26} {:>9} {:>8} {:>7.1}%", r.row, r.instances, r.correct, r.rate).unwrap();
        }
        writeln!(s, "{:<26} {:>9} {:>8} {:>7.1}%", "average", "", "", self.average).unwrap();
        s
    }

    pub fn render_csv(&self) -> String {
        let mut s = String::from("mode,row,instances,correct,rate\n");
        for r in &self.rows {
            writeln!(s, "{},{},{},{},{:.1}", self.mode, r.row, r.instances, r.correct, r.rate).unwrap();
        }
        writeln!(s, "{},average,,,{:.1}", self.mode, self.average).unwrap();
        s
    }
}

fn evaluate(inst: &OfflineInstance, mode: Mode, backend: &dyn Backend, registry: &SkillRegistry) -> Result<InstanceOutcome, OfflineError> {
    let skill = registry
        .get(&inst.skill)
        .ok_or_else(|| OfflineError::UnknownSkill { id: inst.id.clone(), skill: inst.skill.clone() })?;
    let outcome = |predicted: Option<String>| InstanceOutcome {
        id: inst.id.clone(),
        row: inst.row(),
        correct: predicted.as_deref() == Some(inst.truth.as_str()),
        predicted,
    };
    let Some(spec) = skill.parameters().get(inst.param_index) else {
        return Ok(outcome(None));
    };
    let Ok((markers, scene)) = annotate_markers(&inst.observation, inst.candidates.clone()) else {
        return Ok(outcome(None));
    };
    let plain_image = (!mode.markers()).then(|| render::plain(&inst.observation));
    let plain_options: Vec<String> = markers.markers.iter().map(|m| m.candidate.describe()).collect();
    let prompt = build_stage2_prompt(&Stage2Inputs {
        instruction: &inst.instruction,
        location: &inst.observation.location,
        subtask: &inst.subtask,
        skill: &inst.skill,
        param: spec,
        index: inst.param_index,
        count: skill.parameters().len(),
        chosen: &inst.chosen,
        scene: &scene,
        markers: &markers,
        plain_image: plain_image.as_ref(),
        plain_options: &plain_options,
        lessons: &[],
        mode,
    });
    let meta = RequestMeta {
        decision_key: SeedHasher::new("offline-decision").str(&inst.id).finish(),
        attempt: 0,
        skill: Some(inst.skill.clone()),
        param_index: Some(inst.param_index),
        variant: inst.variant.clone(),
        answer_form: if mode.markers() { AnswerForm::Marker } else { AnswerForm::Description },
        reasoning: mode.reasoning(),
        oracle: Some(Arc::new(OracleContext::AnswerKey(AnswerKey {
            skill: inst.skill.clone(),
            truth: inst.truth.clone(),
            markers: markers.clone(),
        }))),
    };
    let Ok(resp) = backend.complete(&BackendRequest { prompt, meta }) else {
        return Ok(outcome(None));
    };
    let id = if mode.markers() {
        parse_stage2(&resp.text, &markers).ok()
    } else {
        parse_description(&resp.text)
            .and_then(|d| resolve_description(&d, &markers, &inst.observation))
            .ok()
    };
    Ok(outcome(id.and_then(|id| markers.get(id)).map(|m| m.candidate.resolved())))
}

/// Scores one stage-2 query per instance under `mode`.
pub fn run_offline_eval(
    instances: &[OfflineInstance],
    mode: Mode,
    backend: &dyn Backend,
    registry: &SkillRegistry,
) -> Result<OfflineReport, OfflineError> {
    for i in instances {
        i.validate()?;
    }
    let outcomes: Vec<InstanceOutcome> = instances
        .par_iter()
        .map(|i| evaluate(i, mode, backend, registry))
        .collect::<Result<_, _>>()?;
    let mut by_row: BTreeMap<String, (usize, usize)> = BTreeMap::new();
    for o in &outcomes {
        let e = by_row.entry(o.row.clone()).or_default();
        e.0 += 1;
        e.1 += usize::from(o.correct);
    }
    let order = |r: &str| ROWS.iter().position(|x| *x == r).unwrap_or(ROWS.len());
    let mut rows: Vec<OfflineRow> = by_row
        .into_iter()
        .map(|(row, (n, c))| OfflineRow { rate: percent(c, n), row, instances: n, correct: c })
        .collect();
    rows.sort_by(|a, b| order(&a.row).cmp(&order(&b.row)).then(a.row.cmp(&b.row)));
    let average = if rows.is_empty() { 0.0 } else { rows.iter().map(|r| r.rate).sum::<f64>() / rows.len() as f64 };
    Ok(OfflineReport { mode, rows, average, outcomes })
}
