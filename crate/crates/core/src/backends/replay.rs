use std::path::Path;
use std::sync::Mutex;

use serde::{Deserialize, Serialize};

use super::{Backend, BackendError, BackendRequest, BackendResponse};
use crate::engine::prompt::Stage;

/// One backend exchange as written to `transcript.jsonl`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TranscriptEntry {
    pub index: usize,
    pub step: usize,
    pub stage: Stage,
    pub attempt: u32,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub param_index: Option<usize>,
    pub request_hash: String,
    pub prompt: String,
    pub images: Vec<String>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub response: Option<BackendResponse>,
    /// Transport error text when the exchange failed.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub error: Option<String>,
}

/// Serves logged responses in order, refusing requests whose prompt hash
/// differs from the logged one.
#[derive(Debug)]
pub struct ReplayBackend {
    entries: Vec<TranscriptEntry>,
    cursor: Mutex<usize>,
}

impl ReplayBackend {
    pub fn new(entries: Vec<TranscriptEntry>) -> Self {
        Self { entries, cursor: Mutex::new(0) }
    }

    pub fn from_jsonl(text: &str) -> Result<Self, BackendError> {
        let mut entries = Vec::new();
        for (i, line) in text.lines().enumerate().filter(|(_, l)| !l.trim().is_empty()) {
            let e: TranscriptEntry = serde_json::from_str(line)
                .map_err(|e| BackendError::Config(format!("transcript line {}: {e}", i + 1)))?;
            entries.push(e);
        }
        Ok(Self::new(entries))
    }

    pub fn load(path: &Path) -> Result<Self, BackendError> {
        let text = std::fs::read_to_string(path)
            .map_err(|e| BackendError::Config(format!("{}: {e}", path.display())))?;
        Self::from_jsonl(&text)
    }

    pub fn remaining(&self) -> usize {
        self.entries.len() - *self.cursor.lock().expect("replay lock")
    }
}

impl Backend for ReplayBackend {
    fn id(&self) -> &str {
        "replay"
    }

    fn complete(&self, req: &BackendRequest) -> Result<BackendResponse, BackendError> {
        let mut cursor = self.cursor.lock().expect("replay lock");
        let Some(entry) = self.entries.get(*cursor) else {
            return Err(BackendError::ReplayExhausted(self.entries.len()));
        };
        let got = req.prompt.hash();
        if got != entry.request_hash {
            return Err(BackendError::ReplayMismatch { index: *cursor, expected: entry.request_hash.clone(), got });
        }
        *cursor += 1;
        match (&entry.response, &entry.error) {
            (Some(r), _) => Ok(r.clone()),
            (None, Some(e)) => Err(BackendError::Transport { message: e.clone(), retry_after: None }),
            (None, None) => Err(BackendError::Config(format!("transcript entry {} has no response", entry.index))),
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::backends::RequestMeta;
    use crate::engine::prompt::Prompt;

    fn req(text: &str) -> BackendRequest {
        let mut prompt = Prompt::new(Stage::Skill);
        prompt.text(text);
        BackendRequest { prompt, meta: RequestMeta::default() }
    }

    fn entry(i: usize, r: &BackendRequest, text: &str) -> TranscriptEntry {
        TranscriptEntry {
            index: i,
            step: 1,
            stage: Stage::Skill,
            attempt: 0,
            param_index: None,
            request_hash: r.prompt.hash(),
            prompt: r.prompt.flat_text(),
            images: vec![],
            response: Some(BackendResponse { text: text.into(), latency_ms: 3, provider: "x".into() }),
            error: None,
        }
    }

    #[test]
    fn serves_in_order_then_exhausts() {
        let (a, b) = (req("a"), req("b"));
        let jsonl = [entry(0, &a, "one"), entry(1, &b, "two")]
            .iter()
            .map(|e| serde_json::to_string(e).unwrap())
            .collect::<Vec<_>>()
            .join("\n");
        let r = ReplayBackend::from_jsonl(&jsonl).unwrap();
        assert_eq!(r.complete(&a).unwrap().text, "one");
        assert_eq!(r.complete(&b).unwrap().text, "two");
        assert_eq!(r.complete(&b), Err(BackendError::ReplayExhausted(2)));
    }

    #[test]
    fn drifted_prompt_is_rejected() {
        let a = req("a");
        let r = ReplayBackend::new(vec![entry(0, &a, "one")]);
        assert!(matches!(r.complete(&req("changed")), Err(BackendError::ReplayMismatch { index: 0, .. })));
        assert_eq!(r.remaining(), 1);
    }
}
