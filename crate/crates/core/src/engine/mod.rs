//! The two-stage perceive, decide, act loop.

pub mod parse;
pub mod prompt;

use std::collections::BTreeSet;
use std::fmt;
use std::path::Path;
use std::str::FromStr;
use std::sync::Arc;
use std::time::Instant;

use serde::{Deserialize, Serialize};

use crate::backends::{
    AnswerForm, Backend, BackendError, BackendRequest, OracleContext, RequestMeta, TrialContext, TranscriptEntry,
};
use crate::expert;
use crate::harness::{categorize_failure, FailureCategory, TaskSpec};
use crate::memory::{
    Annotation, LongTermStore, ParamRecord, PredictionRecord, SceneRef, ShortTermMemory, StepKind, StepRecord,
    SKILL_SELECTION,
};
use crate::percept::{self, annotate_markers, detector_query, render, Candidate, CandidateValue, MarkerSet, NoiseConfig, Observation};
use crate::rng::SeedHasher;
use crate::skills::{SkillConfig, SkillContext, SkillRegistry};
use crate::world::{check_task_success, FailureCode, FloorId, Outcome, WorldState};
use parse::{parse_description, parse_stage1, parse_stage2, ParseError};
use prompt::{build_stage1_prompt, build_stage2_prompt, format_reminder, Prompt, Stage, Stage1Inputs, Stage2Inputs};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub enum Mode {
    #[serde(rename = "BUMBLE")]
    Bumble,
    /// No long-term memory.
    #[serde(rename = "COME")]
    Come,
    /// Language-only scene description, no long-term memory.
    #[serde(rename = "IM")]
    Im,
    #[serde(rename = "BUMBLE_noCoT")]
    BumbleNoCot,
    #[serde(rename = "BUMBLE_noSoM")]
    BumbleNoSom,
}

impl Mode {
    pub const ALL: [Mode; 5] = [Mode::Bumble, Mode::Come, Mode::Im, Mode::BumbleNoCot, Mode::BumbleNoSom];

    pub fn as_str(self) -> &'static str {
        match self {
            Mode::Bumble => "BUMBLE",
            Mode::Come => "COME",
            Mode::Im => "IM",
            Mode::BumbleNoCot => "BUMBLE_noCoT",
            Mode::BumbleNoSom => "BUMBLE_noSoM",
        }
    }

    pub fn images(self) -> bool {
        self != Mode::Im
    }

    pub fn uses_ltm(self) -> bool {
        !matches!(self, Mode::Come | Mode::Im)
    }

    pub fn reasoning(self) -> bool {
        self != Mode::BumbleNoCot
    }

    pub fn markers(self) -> bool {
        self != Mode::BumbleNoSom
    }
}

impl fmt::Display for Mode {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for Mode {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        Mode::ALL
            .into_iter()
            .find(|m| m.as_str().eq_ignore_ascii_case(s))
            .ok_or_else(|| format!("unknown mode {s}; expected one of BUMBLE, COME, IM, BUMBLE_noCoT, BUMBLE_noSoM"))
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct EngineConfig {
    pub mode: Mode,
    pub max_steps: usize,
    pub noise: NoiseConfig,
    pub skills: SkillConfig,
    /// Steps whose scene rasters are attached to the history.
    pub stm_images: usize,
    pub max_prompt_chars: usize,
    /// Attach world ground truth to requests for the scripted backends.
    pub oracle_context: bool,
    /// Log expert ground truth next to every prediction.
    pub annotate: bool,
}

impl Default for EngineConfig {
    fn default() -> Self {
        Self {
            mode: Mode::Bumble,
            max_steps: 25,
            noise: NoiseConfig::default(),
            skills: SkillConfig::default(),
            stm_images: crate::memory::STM_IMAGE_STEPS,
            max_prompt_chars: 60_000,
            oracle_context: true,
            annotate: false,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct SkillInvocation {
    pub step: usize,
    pub skill: String,
    pub params: Vec<String>,
    pub success: bool,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrialResult {
    pub task_id: String,
    pub mode: Mode,
    pub seed: u64,
    pub phrasing: usize,
    pub instruction: String,
    pub success: bool,
    /// Executed decision steps.
    pub steps: usize,
    pub skills: Vec<SkillInvocation>,
    pub category: FailureCategory,
    pub predicate_satisfied: bool,
    pub violations: Vec<String>,
    /// Held object at termination and whether it matches the goal filter.
    pub held_object: Option<String>,
    pub held_matches: bool,
    /// Elevator presses that led away from every task-relevant floor.
    pub wrong_presses: usize,
    pub final_state_hash: String,
    pub wall_time_ms: u64,
    pub stm: ShortTermMemory,
    /// Terminal record emitted when the goal predicate holds.
    pub terminal: Option<StepRecord>,
}

impl TrialResult {
    /// Skills that ran (excludes decision failures and `done`).
    pub fn executed_skills(&self) -> usize {
        self.skills.len()
    }
}

/// Everything a trial writes besides its result.
#[derive(Debug, Clone, Default)]
pub struct TrialLog {
    pub transcript: Vec<TranscriptEntry>,
    pub predictions: Vec<PredictionRecord>,
    pub annotations: Vec<Annotation>,
}

/// Mutable state of one running trial.
pub struct TrialRun<'t> {
    pub task: &'t TaskSpec,
    pub world: WorldState,
    pub stm: ShortTermMemory,
    pub log: TrialLog,
    relevant_floors: BTreeSet<FloorId>,
    wrong_presses: usize,
}

impl<'t> TrialRun<'t> {
    pub fn new(task: &'t TaskSpec, world: WorldState) -> Self {
        let mut relevant = BTreeSet::from([world.robot.floor]);
        relevant.extend(world.objects.values().filter(|o| o.matches(&task.goal.filter)).filter_map(|o| o.floor()));
        if let Some(l) = task.goal.deliver_to.as_deref().and_then(|id| world.building().landmark(id)) {
            relevant.insert(l.floor);
        }
        if let Some(r) = &task.goal.region {
            relevant.insert(r.floor);
        }
        Self {
            task,
            world,
            stm: ShortTermMemory::default(),
            log: TrialLog::default(),
            relevant_floors: relevant,
            wrong_presses: 0,
        }
    }

    pub fn goal_satisfied(&self) -> bool {
        check_task_success(&self.world, &self.task.goal).unwrap_or(false)
    }
}

enum Ask<T> {
    Ok(T),
    Parse(String),
    Aborted(String),
}

pub struct Engine<'a> {
    pub config: &'a EngineConfig,
    pub backend: &'a dyn Backend,
    pub registry: &'a SkillRegistry,
    /// Ignored in modes without long-term memory.
    pub ltm: Option<&'a LongTermStore>,
}

impl<'a> Engine<'a> {
    pub fn new(config: &'a EngineConfig, backend: &'a dyn Backend, registry: &'a SkillRegistry) -> Self {
        Self { config, backend, registry, ltm: None }
    }

    pub fn with_ltm(mut self, ltm: Option<&'a LongTermStore>) -> Self {
        self.ltm = ltm;
        self
    }

    fn lessons(&self, key: &str) -> &'a [crate::memory::FailureLesson] {
        match (self.config.mode.uses_ltm(), self.ltm) {
            (true, Some(store)) => store.retrieve(key),
            _ => &[],
        }
    }

    fn decision_key(&self, run: &TrialRun, step: usize, stage: Stage, index: usize) -> u64 {
        SeedHasher::new("decision")
            .str(&run.task.task_id)
            .u64(run.task.seed)
            .u64(step as u64)
            .str(stage.as_str())
            .u64(index as u64)
            .finish()
    }

    fn base_meta(&self, run: &TrialRun, step: usize, stage: Stage, index: Option<usize>) -> RequestMeta {
        RequestMeta {
            decision_key: self.decision_key(run, step, stage, index.unwrap_or(0)),
            attempt: 0,
            skill: None,
            param_index: index,
            variant: None,
            answer_form: if stage == Stage::Parameter && !self.config.mode.markers() {
                AnswerForm::Description
            } else {
                AnswerForm::Marker
            },
            reasoning: self.config.mode.reasoning(),
            oracle: None,
        }
    }

    fn query(
        &self,
        run: &mut TrialRun,
        prompt: &Prompt,
        meta: &RequestMeta,
        step: usize,
        used: &mut Vec<usize>,
    ) -> Result<String, BackendError> {
        let req = BackendRequest { prompt: prompt.clone(), meta: meta.clone() };
        let res = self.backend.complete(&req);
        let index = run.log.transcript.len();
        used.push(index);
        run.log.transcript.push(TranscriptEntry {
            index,
            step,
            stage: prompt.stage,
            attempt: meta.attempt,
            param_index: meta.param_index,
            request_hash: prompt.hash(),
            prompt: prompt.flat_text(),
            images: prompt.images().map(|i| i.hash()).collect(),
            response: res.as_ref().ok().cloned(),
            error: res.as_ref().err().map(|e| e.to_string()),
        });
        res.map(|r| r.text)
    }

    /// One query plus a single retry with a format reminder.
    fn ask<T>(
        &self,
        run: &mut TrialRun,
        prompt: Prompt,
        mut meta: RequestMeta,
        step: usize,
        used: &mut Vec<usize>,
        parse: impl Fn(&str) -> Result<T, ParseError>,
    ) -> Ask<T> {
        let text = match self.query(run, &prompt, &meta, step, used) {
            Ok(t) => t,
            Err(e) => return Ask::Aborted(e.to_string()),
        };
        let err = match parse(&text) {
            Ok(v) => return Ask::Ok(v),
            Err(e) => e,
        };
        let mut retry = prompt.clone();
        retry.text(format_reminder(&err.to_string(), prompt.stage, self.config.mode));
        meta.attempt = 1;
        let text = match self.query(run, &retry, &meta, step, used) {
            Ok(t) => t,
            Err(e) => return Ask::Aborted(e.to_string()),
        };
        match parse(&text) {
            Ok(v) => Ask::Ok(v),
            Err(e) => Ask::Parse(e.to_string()),
        }
    }

    fn trial_context(
        &self,
        run: &TrialRun,
        obs: &Observation,
        skill: Option<&str>,
        chosen: &[String],
        markers: Option<&MarkerSet>,
    ) -> Option<Arc<OracleContext>> {
        self.config.oracle_context.then(|| {
            Arc::new(OracleContext::Trial(TrialContext {
                world: run.world.clone(),
                goal: run.task.goal.clone(),
                observation: obs.clone(),
                history: run.stm.records.clone(),
                skill: skill.map(str::to_string),
                chosen: chosen.to_vec(),
                markers: markers.cloned(),
            }))
        })
    }

    fn prediction_id(run: &TrialRun, step: usize, tag: &str) -> String {
        format!("{}-{}-{}-s{step}-{tag}", run.task.task_id, run.task.seed, run.task.phrasing)
    }

    fn log_prediction(&self, run: &mut TrialRun, rec: PredictionRecord, truth: Option<String>) {
        if self.config.annotate {
            let Some(t) = truth else { return };
            run.log.annotations.push(Annotation { id: rec.id.clone(), truth: Some(t), flagged: None });
        }
        run.log.predictions.push(rec);
    }

    /// Runs one decision step and appends its record to the STM.
    pub fn decide_and_act(&self, run: &mut TrialRun) -> StepRecord {
        let step = run.stm.len() + 1;
        let obs = percept::observe(&run.world, &self.config.noise, step);
        let overview = render::overview(&obs);
        let skills_text = self.registry.describe_all().unwrap_or_default();
        let names = self.registry.names();
        let mut used = Vec::new();
        let expert_now = self
            .config
            .annotate
            .then(|| expert::decide(&run.world, &run.task.goal, &obs, &run.stm.records));

        let mut record = StepRecord {
            step,
            kind: StepKind::Skill,
            scene: SceneRef {
                raster: Some(format!("scenes/step_{step:02}.png")),
                text: overview.text.clone(),
                image: Some(overview.image.clone()),
            },
            subtask: String::new(),
            skill: String::new(),
            params: Vec::new(),
            outcome: Outcome::ok(),
            transcript: Vec::new(),
        };

        let p1 = build_stage1_prompt(&Stage1Inputs {
            instruction: &run.task.instruction,
            location: &obs.location,
            skills: &skills_text,
            scene: &overview,
            stm: &run.stm,
            stm_images: self.config.stm_images,
            lessons: self.lessons(SKILL_SELECTION),
            mode: self.config.mode,
            max_chars: self.config.max_prompt_chars,
        });
        let mut meta = self.base_meta(run, step, Stage::Skill, None);
        meta.oracle = self.trial_context(run, &obs, None, &[], None);
        let decided = self.ask(run, p1, meta, step, &mut used, |t| parse_stage1(t, &names));
        let (subtask, skill_name) = match decided {
            Ask::Ok(v) => v,
            Ask::Parse(e) => return self.finish(run, record, used, StepKind::DecisionFailure, Outcome::fail(FailureCode::ParseFailure, format!("could not parse response: {e}"))),
            Ask::Aborted(e) => return self.finish(run, record, used, StepKind::Aborted, Outcome::fail(FailureCode::Aborted, format!("backend error: {e}"))),
        };
        record.subtask = subtask.clone();
        record.skill = skill_name.clone();
        let pred = PredictionRecord {
            id: Self::prediction_id(run, step, "skill"),
            key: SKILL_SELECTION.into(),
            instruction: run.task.instruction.clone(),
            scene: overview.text.clone(),
            subtask: subtask.clone(),
            skill: skill_name.clone(),
            predicted: skill_name.clone(),
        };
        self.log_prediction(run, pred, expert_now.as_ref().map(|a| a.skill.clone()));

        if skill_name == "done" {
            let out = if run.goal_satisfied() {
                Outcome::ok()
            } else {
                Outcome::fail(FailureCode::TaskIncomplete, "declared done but the task is not complete")
            };
            return self.finish(run, record, used, StepKind::Done, out);
        }

        let skill = self.registry.get(&skill_name).expect("parser only accepts registered skills").clone();
        let ctx = SkillContext { observation: &obs, config: &self.config.skills, step };
        let mut chosen: Vec<Candidate> = Vec::new();
        let mut chosen_text: Vec<String> = Vec::new();
        let mut chosen_values: Vec<String> = Vec::new();
        let params = skill.parameters();
        for (i, spec) in params.iter().enumerate() {
            let cands = skill.candidates(i, &run.world, &ctx);
            if cands.is_empty() {
                let out = Outcome::fail(FailureCode::NoCandidates, format!("no candidates for {}", spec.name));
                return self.finish(run, record, used, StepKind::Skill, out);
            }
            let (markers, scene) = match annotate_markers(&obs, cands) {
                Ok(v) => v,
                Err(e) => return self.finish(run, record, used, StepKind::Skill, Outcome::fail(FailureCode::NoCandidates, e.to_string())),
            };
            let plain_image = (!self.config.mode.markers()).then(|| render::plain(&obs));
            let plain_options: Vec<String> = markers.markers.iter().map(|m| m.candidate.describe()).collect();
            let p2 = build_stage2_prompt(&Stage2Inputs {
                instruction: &run.task.instruction,
                location: &obs.location,
                subtask: &subtask,
                skill: &skill_name,
                param: spec,
                index: i,
                count: params.len(),
                chosen: &chosen_text,
                scene: &scene,
                markers: &markers,
                plain_image: plain_image.as_ref(),
                plain_options: &plain_options,
                lessons: self.lessons(&skill_name),
                mode: self.config.mode,
            });
            let mut meta = self.base_meta(run, step, Stage::Parameter, Some(i));
            meta.skill = Some(skill_name.clone());
            meta.oracle = self.trial_context(run, &obs, Some(&skill_name), &chosen_values, Some(&markers));
            let answer = if self.config.mode.markers() {
                self.ask(run, p2, meta, step, &mut used, |t| parse_stage2(t, &markers))
            } else {
                self.ask(run, p2, meta, step, &mut used, |t| {
                    parse_description(t).and_then(|d| resolve_description(&d, &markers, &obs))
                })
            };
            let id = match answer {
                Ask::Ok(id) => id,
                Ask::Parse(e) => return self.finish(run, record, used, StepKind::DecisionFailure, Outcome::fail(FailureCode::ParseFailure, format!("could not parse response: {e}"))),
                Ask::Aborted(e) => return self.finish(run, record, used, StepKind::Aborted, Outcome::fail(FailureCode::Aborted, format!("backend error: {e}"))),
            };
            let m = markers.get(id).expect("parser checks membership");
            let value = m.candidate.resolved();
            record.params.push(ParamRecord {
                name: spec.name.to_string(),
                marker: self.config.mode.markers().then_some(id),
                value: value.clone(),
            });
            let truth = expert_now
                .as_ref()
                .filter(|a| a.skill == skill_name)
                .and_then(|a| a.params.get(i).cloned());
            let pred = PredictionRecord {
                id: Self::prediction_id(run, step, &format!("p{i}")),
                key: skill_name.clone(),
                instruction: run.task.instruction.clone(),
                scene: scene.text.clone(),
                subtask: subtask.clone(),
                skill: skill_name.clone(),
                predicted: value.clone(),
            };
            self.log_prediction(run, pred, truth);
            chosen_text.push(format!("{}={}", spec.name, value));
            chosen_values.push(value);
            chosen.push(m.candidate.clone());
        }

        let floor_before = run.world.robot.floor;
        let out = skill.execute(&mut run.world, &chosen, &ctx);
        let moved_floor = run.world.robot.floor != floor_before;
        if out.code() == Some(FailureCode::WrongDirection)
            || (moved_floor && !run.relevant_floors.contains(&run.world.robot.floor))
        {
            run.wrong_presses += 1;
        }
        self.finish(run, record, used, StepKind::Skill, out)
    }

    fn finish(
        &self,
        run: &mut TrialRun,
        mut record: StepRecord,
        used: Vec<usize>,
        kind: StepKind,
        outcome: Outcome,
    ) -> StepRecord {
        record.kind = kind;
        record.outcome = outcome;
        record.transcript = used;
        run.stm.append(record.clone()).expect("step index follows the STM length");
        record
    }

    /// Loops decisions until the goal predicate holds or the step budget is
    /// spent.
    pub fn run_trial(&self, task: &TaskSpec, world: WorldState) -> (TrialResult, TrialLog) {
        let start = Instant::now();
        let mut run = TrialRun::new(task, world);
        while run.stm.len() < self.config.max_steps && !run.goal_satisfied() {
            self.decide_and_act(&mut run);
        }
        let predicate = run.goal_satisfied();
        let violations: Vec<String> = run.stm.records.iter().flat_map(|r| r.outcome.violations.clone()).collect();
        let success = predicate && violations.is_empty();
        let terminal = predicate.then(|| StepRecord {
            step: run.stm.len() + 1,
            kind: StepKind::Done,
            scene: SceneRef::default(),
            subtask: "The task is complete.".into(),
            skill: "done".into(),
            params: Vec::new(),
            outcome: Outcome::ok(),
            transcript: Vec::new(),
        });
        let skills = run
            .stm
            .records
            .iter()
            .filter(|r| r.kind == StepKind::Skill && r.outcome.code() != Some(FailureCode::NoCandidates))
            .map(|r| SkillInvocation {
                step: r.step,
                skill: r.skill.clone(),
                params: r.params.iter().map(|p| p.value.clone()).collect(),
                success: r.outcome.success,
            })
            .collect();
        let held = run.world.robot.held_object.clone();
        let held_matches = held
            .as_ref()
            .and_then(|id| run.world.objects.get(id))
            .is_some_and(|o| o.matches(&task.goal.filter));
        let mut result = TrialResult {
            task_id: task.task_id.clone(),
            mode: self.config.mode,
            seed: task.seed,
            phrasing: task.phrasing,
            instruction: task.instruction.clone(),
            success,
            steps: run.stm.len(),
            skills,
            category: FailureCategory::None,
            predicate_satisfied: predicate,
            violations,
            held_object: held,
            held_matches,
            wrong_presses: run.wrong_presses,
            final_state_hash: run.world.state_hash(),
            wall_time_ms: start.elapsed().as_millis() as u64,
            stm: run.stm,
            terminal,
        };
        if !success {
            result.category = categorize_failure(&result).expect("trial failed");
        }
        (result, run.log)
    }
}

/// Resolves a free-text answer against the offered options, the way an
/// open-vocabulary detector would: object options by category keyword
/// (nearest match wins), buttons by label, everything else by name.
pub fn resolve_description(desc: &str, markers: &MarkerSet, obs: &Observation) -> Result<u32, ParseError> {
    let is_object = |c: &Candidate| matches!(&c.value, CandidateValue::Detection(d) if d.is_object());
    if !markers.is_empty() && markers.markers.iter().all(|m| is_object(&m.candidate)) {
        let hits: BTreeSet<String> = detector_query(obs, desc).into_iter().map(|d| d.entity_id).collect();
        return markers
            .markers
            .iter()
            .find(|m| hits.contains(&m.candidate.resolved()))
            .map(|m| m.id)
            .ok_or(ParseError::NoMatch);
    }
    let lower = desc.to_ascii_lowercase();
    let tokens: Vec<&str> = lower.split(|c: char| !c.is_ascii_alphanumeric()).filter(|t| !t.is_empty()).collect();
    let mut best: Option<(usize, u32)> = None;
    for m in &markers.markers {
        let name = match &m.candidate.value {
            CandidateValue::Detection(d) => match &d.kind {
                percept::DetectionKind::Button { label, .. } => label.to_ascii_lowercase(),
                _ => d.detected_label.to_ascii_lowercase(),
            },
            CandidateValue::Landmark { label, .. } => label.to_ascii_lowercase(),
            CandidateValue::Direction(d) => d.as_str().to_string(),
            CandidateValue::Side(s) => s.as_str().to_string(),
        };
        let hit = if name.contains(' ') { lower.contains(&name) } else { tokens.contains(&name.as_str()) };
        if hit && best.is_none_or(|(len, _)| name.len() > len) {
            best = Some((name.len(), m.id));
        }
    }
    best.map(|(_, id)| id).ok_or(ParseError::NoMatch)
}

fn jsonl<T: Serialize>(items: &[T]) -> std::io::Result<String> {
    let mut out = String::new();
    for i in items {
        out.push_str(&serde_json::to_string(i).map_err(std::io::Error::other)?);
        out.push('\n');
    }
    Ok(out)
}

/// Writes `steps.jsonl`, `transcript.jsonl`, `predictions.jsonl`,
/// `annotations.jsonl` (when annotating), `scenes/*.png` and `result.json`
/// into `dir`.
pub fn write_trial_logs(dir: &Path, result: &TrialResult, log: &TrialLog) -> std::io::Result<()> {
    std::fs::create_dir_all(dir.join("scenes"))?;
    let mut steps = String::new();
    for r in result.stm.records.iter().chain(result.terminal.iter()) {
        steps.push_str(&serde_json::to_string(r).map_err(std::io::Error::other)?);
        steps.push('\n');
        if let (Some(path), Some(img)) = (&r.scene.raster, &r.scene.image) {
            std::fs::write(dir.join(path), img.png())?;
        }
    }
    std::fs::write(dir.join("steps.jsonl"), steps)?;
    let mut transcript = String::new();
    for e in &log.transcript {
        transcript.push_str(&serde_json::to_string(e).map_err(std::io::Error::other)?);
        transcript.push('\n');
    }
    std::fs::write(dir.join("transcript.jsonl"), transcript)?;
    std::fs::write(dir.join("predictions.jsonl"), jsonl(&log.predictions)?)?;
    if !log.annotations.is_empty() {
        std::fs::write(dir.join("annotations.jsonl"), jsonl(&log.annotations)?)?;
    }
    let mut summary = result.clone();
    summary.stm = ShortTermMemory::default();
    std::fs::write(dir.join("result.json"), serde_json::to_string_pretty(&summary).map_err(std::io::Error::other)?)?;
    Ok(())
}
