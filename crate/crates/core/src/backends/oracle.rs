use std::collections::BTreeMap;

use serde::{Deserialize, Serialize};

use super::{
    AnalysisContext, AnswerForm, AnswerKey, Backend, BackendError, BackendRequest, BackendResponse, OracleContext,
    TrialContext,
};
use crate::engine::prompt::Stage;
use crate::expert::{self, ExpertAction};
use crate::percept::{CandidateValue, DetectionKind, MarkerSet};
use crate::rng::SeedHasher;
use crate::world::{apply_push, FailureCode, RelDir, PUSH_DISTANCE};

/// Lesson phrase that fixes the door-side mistake of the lesson-sensitive
/// oracle.
pub const DOOR_LESSON: &str = "push on the side opposite the hinge";
/// Lesson phrase that fixes the push-direction mistake.
pub const PUSH_LESSON: &str = "push away from the nearby wall";

#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct OracleErrorProfile {
    /// Probability of answering stage 1 with a wrong skill.
    pub wrong_skill: f64,
    /// Wrong-parameter probability keyed by `skill`, `skill#variant` or
    /// `skill@index`; the most specific key wins.
    pub wrong_param: BTreeMap<String, f64>,
    pub seed: u64,
}

impl OracleErrorProfile {
    pub fn validate(&self) -> Result<(), BackendError> {
        let bad = |p: f64| !(0.0..=1.0).contains(&p);
        if bad(self.wrong_skill) {
            return Err(BackendError::Config(format!("wrong_skill {} outside [0, 1]", self.wrong_skill)));
        }
        for (k, p) in &self.wrong_param {
            if bad(*p) {
                return Err(BackendError::Config(format!("wrong_param[{k}] = {p} outside [0, 1]")));
            }
        }
        Ok(())
    }

    pub fn param_probability(&self, skill: &str, variant: Option<&str>, index: Option<usize>) -> f64 {
        let mut keys = Vec::new();
        if let Some(v) = variant {
            keys.push(format!("{skill}#{v}"));
        }
        if let Some(i) = index {
            keys.push(format!("{skill}@{i}"));
        }
        keys.push(skill.to_string());
        keys.iter().find_map(|k| self.wrong_param.get(k).copied()).unwrap_or(0.0)
    }
}

/// Answers from the expert policy, with seeded error injection.
#[derive(Debug, Clone)]
pub struct OracleBackend {
    id: String,
    profile: OracleErrorProfile,
    skills: Vec<String>,
}

impl OracleBackend {
    pub fn new(profile: OracleErrorProfile, skills: &[&str]) -> Result<Self, BackendError> {
        profile.validate()?;
        Ok(Self { id: "oracle".into(), profile, skills: skills.iter().map(|s| s.to_string()).collect() })
    }

    pub fn perfect(skills: &[&str]) -> Self {
        Self::new(OracleErrorProfile::default(), skills).expect("zero profile is valid")
    }

    fn draw(&self, domain: &str, key: u64) -> f64 {
        SeedHasher::new(domain).u64(self.profile.seed).u64(key).unit()
    }

    fn skill_answer(&self, req: &BackendRequest, action: &ExpertAction) -> String {
        let mut skill = action.skill.clone();
        if self.profile.wrong_skill > 0.0 && self.draw("oracle-skill", req.meta.decision_key) < self.profile.wrong_skill {
            let others: Vec<&String> = self.skills.iter().filter(|s| **s != action.skill).collect();
            if !others.is_empty() {
                let i = (self.draw("oracle-skill-pick", req.meta.decision_key) * others.len() as f64) as usize;
                skill = others[i.min(others.len() - 1)].clone();
            }
        }
        let reasoning = format!(
            "The robot still has to make progress on the task. Next: {}",
            action.subtask.to_lowercase()
        );
        format_stage1(req.meta.reasoning, &reasoning, &action.subtask, &skill)
    }

    /// Picks the answer among `markers`, corrupting it with the profile's
    /// probability.
    fn param_answer(&self, req: &BackendRequest, skill: &str, markers: &MarkerSet, truth: Option<&str>) -> u32 {
        let target = truth.and_then(|t| markers.find_resolved(t)).map(|m| m.id);
        let Some(target) = target.or_else(|| markers.ids().first().copied()) else {
            return 1;
        };
        let p = self.profile.param_probability(skill, req.meta.variant.as_deref(), req.meta.param_index);
        if p > 0.0 && self.draw("oracle-param", req.meta.decision_key) < p {
            let others: Vec<u32> = markers.ids().into_iter().filter(|id| *id != target).collect();
            if !others.is_empty() {
                let i = (self.draw("oracle-param-pick", req.meta.decision_key) * others.len() as f64) as usize;
                return others[i.min(others.len() - 1)];
            }
        }
        target
    }

    fn trial_param(&self, req: &BackendRequest, ctx: &TrialContext) -> Result<u32, BackendError> {
        let markers = ctx
            .markers
            .as_ref()
            .ok_or_else(|| BackendError::Unsupported("parameter query without markers".into()))?;
        let skill = ctx.skill.as_deref().unwrap_or("");
        let truth = trial_truth(ctx, req.meta.param_index.unwrap_or(0));
        Ok(self.param_answer(req, skill, markers, truth.as_deref()))
    }
}

/// The expert's value for parameter `index` of the chosen skill, when the
/// expert would have chosen that skill too.
fn trial_truth(ctx: &TrialContext, index: usize) -> Option<String> {
    let action = expert::decide(&ctx.world, &ctx.goal, &ctx.observation, &ctx.history);
    (Some(action.skill.as_str()) == ctx.skill.as_deref())
        .then(|| action.params.get(index).cloned())
        .flatten()
}

pub(crate) fn format_stage1(reasoning: bool, why: &str, subtask: &str, skill: &str) -> String {
    let mut out = String::new();
    if reasoning {
        out.push_str(why);
        out.push_str("\n\n");
    }
    out.push_str(&format!("```answer\nsubtask: {subtask}\nskill: {skill}\n```\n"));
    out
}

fn format_stage2(req: &BackendRequest, markers: &MarkerSet, id: u32) -> String {
    let mut out = String::new();
    if req.meta.reasoning {
        out.push_str("Comparing the marked options against the subtask.\n\n");
    }
    match req.meta.answer_form {
        AnswerForm::Marker => out.push_str(&format!("```answer\nmarker: {id}\n```\n")),
        AnswerForm::Description => {
            let desc = markers.get(id).map(|m| describe_for_text(&m.candidate.value)).unwrap_or_default();
            out.push_str(&format!("```answer\ndescription: {desc}\n```\n"));
        }
    }
    out
}

/// Natural-language description of a candidate, as a model without marker
/// ids would give it.
pub(crate) fn describe_for_text(v: &CandidateValue) -> String {
    match v {
        CandidateValue::Detection(d) => match &d.kind {
            DetectionKind::Button { label, .. } => format!("the button labeled {label}"),
            _ => d.appearance.clone(),
        },
        CandidateValue::Landmark { label, .. } => label.clone(),
        CandidateValue::Direction(d) => d.as_str().to_string(),
        CandidateValue::Side(s) => s.as_str().to_string(),
    }
}

fn analysis_text(ctx: &AnalysisContext) -> String {
    format!(
        "For {} the choice {} was wrong; {} was the right answer. Check the scene details that separate them before answering.",
        ctx.skill, ctx.predicted, ctx.truth
    )
}

fn respond(provider: &str, text: String) -> Result<BackendResponse, BackendError> {
    Ok(BackendResponse { text, latency_ms: 0, provider: provider.to_string() })
}

fn context(req: &BackendRequest) -> Result<&OracleContext, BackendError> {
    req.meta
        .oracle
        .as_deref()
        .ok_or_else(|| BackendError::Unsupported("scripted backend needs oracle context".into()))
}

impl Backend for OracleBackend {
    fn id(&self) -> &str {
        &self.id
    }

    fn complete(&self, req: &BackendRequest) -> Result<BackendResponse, BackendError> {
        let text = match (context(req)?, req.stage()) {
            (OracleContext::Analysis(a), _) => analysis_text(a),
            (OracleContext::AnswerKey(k), _) => answer_key(self, req, k),
            (OracleContext::Trial(t), Stage::Skill) => {
                let action = expert::decide(&t.world, &t.goal, &t.observation, &t.history);
                self.skill_answer(req, &action)
            }
            (OracleContext::Trial(t), Stage::Parameter) => {
                let id = self.trial_param(req, t)?;
                format_stage2(req, t.markers.as_ref().expect("checked"), id)
            }
            (OracleContext::Trial(_), Stage::Analysis) => {
                return Err(BackendError::Unsupported("analysis without analysis context".into()))
            }
        };
        respond(&self.id, text)
    }
}

fn answer_key(o: &OracleBackend, req: &BackendRequest, k: &AnswerKey) -> String {
    let id = o.param_answer(req, &k.skill, &k.markers, Some(&k.truth));
    format_stage2(req, &k.markers, id)
}

/// Oracle that gets door sides and push directions wrong unless the prompt
/// carries the matching lesson, and writes those lessons when asked for a
/// failure analysis.
#[derive(Debug, Clone)]
pub struct LessonSensitiveOracle {
    inner: OracleBackend,
}

impl LessonSensitiveOracle {
    pub fn new(skills: &[&str]) -> Self {
        let mut inner = OracleBackend::perfect(skills);
        inner.id = "lesson_oracle".into();
        Self { inner }
    }

    fn wrong_value(ctx: &TrialContext, index: usize, truth: &str) -> Option<String> {
        match (ctx.skill.as_deref()?, index) {
            ("open_door", 0) => Some(if truth == "left" { "right" } else { "left" }.to_string()),
            ("push_object_on_ground", 1) => {
                let obj = ctx.chosen.first()?;
                let mut fallback = None;
                for d in RelDir::PUSHABLE {
                    if d.as_str() == truth {
                        continue;
                    }
                    let mut w = ctx.world.clone();
                    let out = apply_push(&mut w, obj, d, PUSH_DISTANCE);
                    if out.code() == Some(FailureCode::Collision) && out.blocking_entity() == Some("wall") {
                        return Some(d.as_str().to_string());
                    }
                    fallback.get_or_insert(d.as_str().to_string());
                }
                fallback
            }
            _ => None,
        }
    }
}

impl Backend for LessonSensitiveOracle {
    fn id(&self) -> &str {
        &self.inner.id
    }

    fn complete(&self, req: &BackendRequest) -> Result<BackendResponse, BackendError> {
        match (context(req)?, req.stage()) {
            (OracleContext::Analysis(a), _) => {
                let lesson = match a.skill.as_str() {
                    "open_door" => Some(DOOR_LESSON),
                    "push_object_on_ground" => Some(PUSH_LESSON),
                    _ => None,
                };
                let mut text = analysis_text(a);
                if let Some(l) = lesson {
                    text.push_str(&format!(" Next time {l}."));
                }
                respond(&self.inner.id, text)
            }
            (OracleContext::Trial(t), Stage::Parameter) => {
                let markers = t
                    .markers
                    .as_ref()
                    .ok_or_else(|| BackendError::Unsupported("parameter query without markers".into()))?;
                let index = req.meta.param_index.unwrap_or(0);
                let lesson = match t.skill.as_deref() {
                    Some("open_door") => DOOR_LESSON,
                    Some("push_object_on_ground") => PUSH_LESSON,
                    _ => "",
                };
                let truth = trial_truth(t, index);
                let knows = lesson.is_empty() || req.prompt.flat_text().contains(lesson);
                let value = match (&truth, knows) {
                    (Some(tv), false) => Self::wrong_value(t, index, tv).or(truth.clone()),
                    _ => truth.clone(),
                };
                let id = value
                    .as_deref()
                    .and_then(|v| markers.find_resolved(v))
                    .map(|m| m.id)
                    .or_else(|| markers.ids().first().copied())
                    .unwrap_or(1);
                respond(&self.inner.id, format_stage2(req, markers, id))
            }
            _ => self.inner.complete(req),
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::backends::RequestMeta;
    use crate::engine::prompt::Prompt;
    use crate::percept::{annotate_markers, Candidate, LocalMap, Observation};
    use crate::world::{Cell, Heading};
    use std::sync::Arc;

    fn obs() -> Observation {
        Observation {
            step: 0,
            floor: 1,
            robot_cell: Cell::new(2, 2),
            robot_heading: Heading::E,
            holding: None,
            location: "test".into(),
            detections: Vec::new(),
            local_map: LocalMap { origin: Cell::new(0, 0), rows: vec![".....".into(); 5] },
            cell_size: 0.25,
        }
    }

    fn key_request(truth: &str, key: u64) -> BackendRequest {
        let cands = RelDir::PUSHABLE.iter().map(|d| Candidate::direction(*d)).collect();
        let (markers, _) = annotate_markers(&obs(), cands).unwrap();
        BackendRequest {
            prompt: Prompt::new(Stage::Parameter),
            meta: RequestMeta {
                decision_key: key,
                skill: Some("move_base".into()),
                param_index: Some(0),
                oracle: Some(Arc::new(OracleContext::AnswerKey(AnswerKey {
                    skill: "move_base".into(),
                    truth: truth.into(),
                    markers,
                }))),
                ..RequestMeta::default()
            },
        }
    }

    #[test]
    fn perfect_oracle_names_the_target_marker() {
        let o = OracleBackend::perfect(&["move_base"]);
        let r = o.complete(&key_request("left", 1)).unwrap();
        assert_eq!(r.text, "```answer\nmarker: 2\n```\n");
    }

    #[test]
    fn certain_error_picks_a_fixed_other_marker() {
        let profile = OracleErrorProfile { wrong_param: [("move_base".into(), 1.0)].into(), ..Default::default() };
        let o = OracleBackend::new(profile, &["move_base"]).unwrap();
        let a = o.complete(&key_request("left", 7)).unwrap().text;
        let b = o.complete(&key_request("left", 7)).unwrap().text;
        assert_eq!(a, b);
        assert!(!a.contains("marker: 2"));
    }

    #[test]
    fn probabilities_validated() {
        let profile = OracleErrorProfile { wrong_skill: 1.5, ..Default::default() };
        assert!(OracleBackend::new(profile, &[]).is_err());
    }

    #[test]
    fn profile_prefers_specific_keys() {
        let p = OracleErrorProfile {
            wrong_param: [("pick_up_object".into(), 0.1), ("pick_up_object#high".into(), 0.3)].into(),
            ..Default::default()
        };
        assert_eq!(p.param_probability("pick_up_object", Some("high"), None), 0.3);
        assert_eq!(p.param_probability("pick_up_object", Some("low"), None), 0.1);
        assert_eq!(p.param_probability("move_base", None, None), 0.0);
    }

    #[test]
    fn missing_context_is_an_error() {
        let o = OracleBackend::perfect(&[]);
        let req = BackendRequest { prompt: Prompt::new(Stage::Skill), meta: RequestMeta::default() };
        assert!(matches!(o.complete(&req), Err(BackendError::Unsupported(_))));
    }
}
