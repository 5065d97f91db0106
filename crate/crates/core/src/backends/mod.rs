//! Response providers behind one interface.

mod http;
mod oracle;
mod replay;

use std::sync::Arc;
use std::time::Duration;

use serde::{Deserialize, Serialize};

use crate::engine::prompt::{Prompt, Stage};
use crate::memory::StepRecord;
use crate::percept::{MarkerSet, Observation};
use crate::world::{GoalSpec, WorldState};

pub use http::{HttpBackend, HttpConfig, Provider};
pub use oracle::{
    LessonSensitiveOracle, OracleBackend, OracleErrorProfile, DOOR_LESSON, PUSH_LESSON,
};
pub use replay::{ReplayBackend, TranscriptEntry};

/// How the parameter answer is expected to be phrased.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "snake_case")]
pub enum AnswerForm {
    #[default]
    Marker,
    Description,
}

/// Ground truth available to the scripted backends. Live backends ignore it.
#[derive(Debug, Clone)]
pub enum OracleContext {
    Trial(TrialContext),
    /// Offline instance with a known answer.
    AnswerKey(AnswerKey),
    /// Failure analysis during lesson curation.
    Analysis(AnalysisContext),
}

#[derive(Debug, Clone)]
pub struct TrialContext {
    pub world: WorldState,
    pub goal: GoalSpec,
    pub observation: Observation,
    pub history: Vec<StepRecord>,
    /// Chosen skill, for parameter queries.
    pub skill: Option<String>,
    /// Resolved values of the parameters chosen so far in this step.
    pub chosen: Vec<String>,
    pub markers: Option<MarkerSet>,
}

#[derive(Debug, Clone)]
pub struct AnswerKey {
    pub skill: String,
    pub truth: String,
    pub markers: MarkerSet,
}

#[derive(Debug, Clone)]
pub struct AnalysisContext {
    pub key: String,
    pub skill: String,
    pub predicted: String,
    pub truth: String,
}

#[derive(Debug, Clone, Default)]
pub struct RequestMeta {
    /// Identifies the decision independent of prompt wording: derived from
    /// the scenario seed, step, stage and parameter index.
    pub decision_key: u64,
    pub attempt: u32,
    pub skill: Option<String>,
    pub param_index: Option<usize>,
    /// Finer error-profile bucket, e.g. a clutter band.
    pub variant: Option<String>,
    pub answer_form: AnswerForm,
    pub reasoning: bool,
    pub oracle: Option<Arc<OracleContext>>,
}

#[derive(Debug, Clone)]
pub struct BackendRequest {
    pub prompt: Prompt,
    pub meta: RequestMeta,
}

impl BackendRequest {
    pub fn stage(&self) -> Stage {
        self.prompt.stage
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BackendResponse {
    pub text: String,
    pub latency_ms: u64,
    pub provider: String,
}

#[derive(Debug, Clone, PartialEq, thiserror::Error)]
pub enum BackendError {
    #[error("transport error: {message}")]
    Transport { message: String, retry_after: Option<Duration> },
    #[error("request timed out after {0:?}")]
    Timeout(Duration),
    #[error("http status {status}: {body}")]
    Status { status: u16, body: String, retry_after: Option<Duration> },
    #[error("malformed provider response: {0}")]
    Malformed(String),
    #[error("replay exhausted after {0} responses")]
    ReplayExhausted(usize),
    #[error("replay mismatch at entry {index}: expected request hash {expected}, got {got}")]
    ReplayMismatch { index: usize, expected: String, got: String },
    #[error("backend configuration: {0}")]
    Config(String),
    #[error("backend cannot answer: {0}")]
    Unsupported(String),
}

impl BackendError {
    pub fn retry_after(&self) -> Option<Duration> {
        match self {
            BackendError::Transport { retry_after, .. } | BackendError::Status { retry_after, .. } => *retry_after,
            _ => None,
        }
    }
}

pub trait Backend: Send + Sync {
    fn id(&self) -> &str;
    fn complete(&self, request: &BackendRequest) -> Result<BackendResponse, BackendError>;
}
