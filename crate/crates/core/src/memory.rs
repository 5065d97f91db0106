//! Short-term per-trial execution history and long-term failure lessons.

use std::collections::{BTreeMap, BTreeSet};
use std::path::Path;
use std::sync::Arc;

use serde::{Deserialize, Serialize};

use crate::backends::{AnalysisContext, Backend, BackendRequest, OracleContext, RequestMeta};
use crate::engine::prompt::{Prompt, Stage};
use crate::percept::render::SceneImage;
use crate::rng::SeedHasher;
use crate::world::Outcome;

/// Scene rasters attached for this many most recent steps.
pub const STM_IMAGE_STEPS: usize = 3;
/// Lessons kept per key.
pub const DEFAULT_LESSON_CAP: usize = 3;
/// LTM key for stage-1 mistakes.
pub const SKILL_SELECTION: &str = "skill_selection";

#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
pub struct SceneRef {
    /// Path of the PNG relative to the trial directory, once written.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub raster: Option<String>,
    pub text: String,
    #[serde(skip)]
    pub image: Option<SceneImage>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ParamRecord {
    pub name: String,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub marker: Option<u32>,
    pub value: String,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum StepKind {
    /// A skill was selected and executed (or failed before executing).
    Skill,
    /// The response could not be parsed after the retry.
    DecisionFailure,
    /// The backend transport failed.
    Aborted,
    /// The backend declared completion.
    Done,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct StepRecord {
    pub step: usize,
    pub kind: StepKind,
    pub scene: SceneRef,
    pub subtask: String,
    pub skill: String,
    pub params: Vec<ParamRecord>,
    pub outcome: Outcome,
    /// Indices of this step's exchanges in the trial transcript.
    pub transcript: Vec<usize>,
}

impl StepRecord {
    fn param_text(&self) -> String {
        if self.params.is_empty() {
            return "none".into();
        }
        self.params
            .iter()
            .map(|p| match p.marker {
                Some(m) => format!("{}={} [#{m}]", p.name, p.value),
                None => format!("{}={}", p.name, p.value),
            })
            .collect::<Vec<_>>()
            .join(", ")
    }

    pub fn line(&self) -> String {
        format!(
            "step {}: subtask: {} | skill: {} | parameter: {} | result: {}",
            self.step,
            if self.subtask.is_empty() { "-" } else { &self.subtask },
            if self.skill.is_empty() { "-" } else { &self.skill },
            self.param_text(),
            self.outcome
        )
    }
}

#[derive(Debug, Clone, PartialEq, thiserror::Error)]
pub enum MemoryError {
    #[error("step index {got} breaks the sequence, expected {expected}")]
    StepIndex { expected: usize, got: usize },
    #[error("missing annotation for prediction {0}")]
    MissingAnnotation(String),
    #[error("duplicate prediction id {0}")]
    DuplicatePrediction(String),
    #[error("lesson analysis failed for {id}: {message}")]
    Analysis { id: String, message: String },
    #[error("memory store io: {0}")]
    Io(String),
    #[error("memory store format: {0}")]
    Format(String),
}

#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
pub struct ShortTermMemory {
    pub records: Vec<StepRecord>,
}

/// Rendered execution history.
#[derive(Debug, Clone, PartialEq)]
pub struct StmFragment {
    pub text: String,
    /// (step index, raster) for the most recent steps, oldest first.
    pub images: Vec<(usize, SceneImage)>,
}

impl ShortTermMemory {
    pub fn len(&self) -> usize {
        self.records.len()
    }

    pub fn is_empty(&self) -> bool {
        self.records.is_empty()
    }

    pub fn last(&self) -> Option<&StepRecord> {
        self.records.last()
    }

    pub fn append(&mut self, record: StepRecord) -> Result<(), MemoryError> {
        let expected = self.records.len() + 1;
        if record.step != expected {
            return Err(MemoryError::StepIndex { expected, got: record.step });
        }
        self.records.push(record);
        Ok(())
    }

    /// Every step as one text line, with rasters for the last `k` steps.
    /// `max_chars` drops the oldest lines first when set.
    pub fn render(&self, k: usize, max_chars: Option<usize>) -> StmFragment {
        if self.records.is_empty() {
            return StmFragment { text: "no steps executed yet\n".into(), images: Vec::new() };
        }
        let lines: Vec<String> = self.records.iter().map(StepRecord::line).collect();
        let mut start = 0;
        if let Some(max) = max_chars {
            let mut total: usize = lines.iter().map(|l| l.len() + 1).sum();
            while start < lines.len() && total > max {
                total -= lines[start].len() + 1;
                start += 1;
            }
        }
        let mut text = String::new();
        if start > 0 {
            text.push_str(&format!("({start} earlier steps omitted)\n"));
        }
        for l in &lines[start..] {
            text.push_str(l);
            text.push('\n');
        }
        let images = self
            .records
            .iter()
            .skip(self.records.len().saturating_sub(k))
            .filter_map(|r| r.scene.image.clone().map(|i| (r.step, i)))
            .collect();
        StmFragment { text, images }
    }
}

/// One logged prediction, the unit that curation compares against ground
/// truth.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PredictionRecord {
    pub id: String,
    /// Skill name for parameter predictions, `skill_selection` for stage 1.
    pub key: String,
    pub instruction: String,
    pub scene: String,
    pub subtask: String,
    pub skill: String,
    pub predicted: String,
}

/// Ground truth for one prediction. A human flag can stand in for the
/// answer: `flagged: true` marks the prediction wrong, `false` marks it
/// right regardless of `truth`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Annotation {
    pub id: String,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub truth: Option<String>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub flagged: Option<bool>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FailureLesson {
    pub id: String,
    pub key: String,
    pub instruction: String,
    pub scene: String,
    pub subtask: String,
    pub skill: String,
    pub predicted: String,
    pub truth: String,
    pub analysis: String,
}

impl FailureLesson {
    /// Text injected into prompts: context summary plus the analysis.
    pub fn render(&self) -> String {
        format!(
            "Past mistake ({}): for the task \"{}\" with subtask \"{}\" the answer {} was chosen but {} was correct.\nAnalysis: {}\n",
            self.key,
            self.instruction,
            self.subtask,
            self.predicted,
            self.truth,
            self.analysis.trim()
        )
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LongTermStore {
    pub cap: usize,
    pub lessons: BTreeMap<String, Vec<FailureLesson>>,
}

impl Default for LongTermStore {
    fn default() -> Self {
        Self::new(DEFAULT_LESSON_CAP)
    }
}

impl LongTermStore {
    pub fn new(cap: usize) -> Self {
        Self { cap, lessons: BTreeMap::new() }
    }

    /// Adds a lesson unless its key is full. Returns whether it was kept.
    pub fn insert(&mut self, lesson: FailureLesson) -> bool {
        let list = self.lessons.entry(lesson.key.clone()).or_default();
        if list.len() >= self.cap {
            return false;
        }
        list.push(lesson);
        true
    }

    pub fn retrieve(&self, key: &str) -> &[FailureLesson] {
        self.lessons.get(key).map(Vec::as_slice).unwrap_or(&[])
    }

    pub fn len(&self) -> usize {
        self.lessons.values().map(Vec::len).sum()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    pub fn save(&self, path: &Path) -> Result<(), MemoryError> {
        let text = serde_json::to_string_pretty(self).map_err(|e| MemoryError::Format(e.to_string()))?;
        std::fs::write(path, text).map_err(|e| MemoryError::Io(format!("{}: {e}", path.display())))
    }

    pub fn load(path: &Path) -> Result<Self, MemoryError> {
        let text = std::fs::read_to_string(path).map_err(|e| MemoryError::Io(format!("{}: {e}", path.display())))?;
        let store: Self = serde_json::from_str(&text).map_err(|e| MemoryError::Format(e.to_string()))?;
        for (k, v) in &store.lessons {
            if v.len() > store.cap {
                return Err(MemoryError::Format(format!("key {k} holds {} lessons, cap is {}", v.len(), store.cap)));
            }
        }
        Ok(store)
    }
}

fn normalize(s: &str) -> String {
    s.trim().to_ascii_lowercase()
}

/// Keeps only the erroneous predictions, asking `backend` to explain each
/// one. Lessons beyond `cap` for a key are dropped, earliest kept.
pub fn curate_lessons(
    log: &[PredictionRecord],
    truth: &[Annotation],
    backend: &dyn Backend,
    cap: usize,
) -> Result<LongTermStore, MemoryError> {
    let mut by_id = BTreeMap::new();
    for a in truth {
        by_id.insert(a.id.as_str(), a);
    }
    let mut seen = BTreeSet::new();
    for p in log {
        if !seen.insert(p.id.as_str()) {
            return Err(MemoryError::DuplicatePrediction(p.id.clone()));
        }
        match by_id.get(p.id.as_str()) {
            Some(a) if a.truth.is_some() || a.flagged.is_some() => {}
            _ => return Err(MemoryError::MissingAnnotation(p.id.clone())),
        }
    }

    let mut store = LongTermStore::new(cap);
    for p in log {
        let a = by_id[p.id.as_str()];
        let wrong = match (a.flagged, a.truth.as_deref()) {
            (Some(false), _) => false,
            (_, Some(t)) => normalize(t) != normalize(&p.predicted),
            (Some(true), None) => true,
            (None, None) => unreachable!("checked above"),
        };
        if !wrong {
            continue;
        }
        if store.retrieve(&p.key).len() >= cap {
            continue;
        }
        let truth_text = a.truth.clone().unwrap_or_else(|| "(flagged as wrong by an operator)".into());
        if normalize(&truth_text) == normalize(&p.predicted) {
            continue;
        }
        let analysis = analyze(p, &truth_text, backend)?;
        store.insert(FailureLesson {
            id: p.id.clone(),
            key: p.key.clone(),
            instruction: p.instruction.clone(),
            scene: p.scene.clone(),
            subtask: p.subtask.clone(),
            skill: p.skill.clone(),
            predicted: p.predicted.clone(),
            truth: truth_text,
            analysis,
        });
    }
    Ok(store)
}

fn analyze(p: &PredictionRecord, truth: &str, backend: &dyn Backend) -> Result<String, MemoryError> {
    let mut prompt = Prompt::new(Stage::Analysis);
    prompt.text(format!(
        "A robot agent made a wrong prediction.\nTask: {}\nSubtask: {}\nSkill: {}\nScene:\n{}\nPredicted: {}\nCorrect: {}\n\
         Explain in two or three sentences why the prediction was wrong and what to do differently next time.\n",
        p.instruction, p.subtask, p.skill, p.scene, p.predicted, truth
    ));
    let meta = RequestMeta {
        decision_key: SeedHasher::new("analysis").str(&p.id).finish(),
        skill: Some(p.skill.clone()),
        oracle: Some(Arc::new(OracleContext::Analysis(AnalysisContext {
            key: p.key.clone(),
            skill: p.skill.clone(),
            predicted: p.predicted.clone(),
            truth: truth.to_string(),
        }))),
        ..RequestMeta::default()
    };
    backend
        .complete(&BackendRequest { prompt, meta })
        .map(|r| r.text)
        .map_err(|e| MemoryError::Analysis { id: p.id.clone(), message: e.to_string() })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::backends::{BackendError, BackendResponse};
    use crate::world::FailureCode;
    use image::RgbImage;

    fn rec(step: usize, ok: bool) -> StepRecord {
        StepRecord {
            step,
            kind: StepKind::Skill,
            scene: SceneRef {
                raster: None,
                text: String::new(),
                image: Some(SceneImage::new(RgbImage::new(1, 1))),
            },
            subtask: "reach the kitchen".into(),
            skill: "goto_landmark".into(),
            params: vec![ParamRecord { name: "landmark".into(), marker: Some(2), value: "f1_kitchen".into() }],
            outcome: if ok {
                Outcome::ok()
            } else {
                Outcome::fail_with(FailureCode::Blocked, "box_1", "path blocked by box_1")
            },
            transcript: vec![],
        }
    }

    struct Echo;

    impl Backend for Echo {
        fn id(&self) -> &str {
            "echo"
        }

        fn complete(&self, _r: &BackendRequest) -> Result<BackendResponse, BackendError> {
            Ok(BackendResponse { text: "analysis".into(), latency_ms: 0, provider: "echo".into() })
        }
    }

    fn pred(id: &str, key: &str, predicted: &str) -> PredictionRecord {
        PredictionRecord {
            id: id.into(),
            key: key.into(),
            instruction: "get a soda".into(),
            scene: String::new(),
            subtask: String::new(),
            skill: key.into(),
            predicted: predicted.into(),
        }
    }

    fn truth(id: &str, t: &str) -> Annotation {
        Annotation { id: id.into(), truth: Some(t.into()), flagged: None }
    }

    #[test]
    fn empty_stm_renders_placeholder() {
        let f = ShortTermMemory::default().render(3, None);
        assert_eq!(f.text, "no steps executed yet\n");
        assert!(f.images.is_empty());
    }

    #[test]
    fn render_lists_all_steps_and_recent_images() {
        let mut stm = ShortTermMemory::default();
        for i in 1..=5 {
            stm.append(rec(i, i != 4)).unwrap();
        }
        let f = stm.render(3, None);
        assert_eq!(f.text.lines().count(), 5);
        assert_eq!(f.images.iter().map(|(s, _)| *s).collect::<Vec<_>>(), [3, 4, 5]);
        assert!(f.text.contains("path blocked by box_1"));
    }

    #[test]
    fn append_rejects_gaps() {
        let mut stm = ShortTermMemory::default();
        assert!(stm.append(rec(2, true)).is_err());
        stm.append(rec(1, true)).unwrap();
        assert_eq!(stm.len(), 1);
    }

    #[test]
    fn char_budget_drops_oldest() {
        let mut stm = ShortTermMemory::default();
        for i in 1..=5 {
            stm.append(rec(i, true)).unwrap();
        }
        let one = rec(1, true).line().len() + 1;
        let f = stm.render(3, Some(one * 2));
        assert!(f.text.starts_with("(3 earlier steps omitted)"));
        assert!(f.text.contains("step 5:"));
        assert!(!f.text.contains("step 3:"));
    }

    #[test]
    fn all_correct_yields_empty_store() {
        let log: Vec<_> = (0..5).map(|i| pred(&format!("p{i}"), "move_base", "left")).collect();
        let t: Vec<_> = (0..5).map(|i| truth(&format!("p{i}"), "left")).collect();
        assert!(curate_lessons(&log, &t, &Echo, 3).unwrap().is_empty());
    }

    #[test]
    fn only_mismatches_kept_and_capped() {
        let log: Vec<_> = (0..8).map(|i| pred(&format!("p{i}"), "move_base", "left")).collect();
        let mut t: Vec<_> = (0..8).map(|i| truth(&format!("p{i}"), "right")).collect();
        t[0].truth = Some("left".into());
        let store = curate_lessons(&log, &t, &Echo, 3).unwrap();
        let kept: Vec<_> = store.retrieve("move_base").iter().map(|l| l.id.as_str()).collect();
        assert_eq!(kept, ["p1", "p2", "p3"]);
        assert!(store.retrieve("fly").is_empty());
    }

    #[test]
    fn missing_annotation_names_prediction() {
        let log = vec![pred("a", "move_base", "left"), pred("b", "move_base", "left")];
        let err = curate_lessons(&log, &[truth("a", "left")], &Echo, 3).unwrap_err();
        assert_eq!(err, MemoryError::MissingAnnotation("b".into()));
    }

    #[test]
    fn human_flags_override() {
        let log = vec![pred("a", SKILL_SELECTION, "pick_up_object"), pred("b", SKILL_SELECTION, "move_base")];
        let t = vec![
            Annotation { id: "a".into(), truth: None, flagged: Some(true) },
            Annotation { id: "b".into(), truth: Some("goto_landmark".into()), flagged: Some(false) },
        ];
        let store = curate_lessons(&log, &t, &Echo, 3).unwrap();
        assert_eq!(store.retrieve(SKILL_SELECTION).len(), 1);
        assert_eq!(store.retrieve(SKILL_SELECTION)[0].id, "a");
    }

    #[test]
    fn store_round_trips_through_disk() {
        let log = vec![pred("a", "open_door", "left")];
        let store = curate_lessons(&log, &[truth("a", "right")], &Echo, 3).unwrap();
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("ltm.json");
        store.save(&path).unwrap();
        assert_eq!(LongTermStore::load(&path).unwrap(), store);
    }
}
