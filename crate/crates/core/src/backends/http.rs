use std::time::{Duration, Instant};

use base64::Engine as _;
use serde::{Deserialize, Serialize};
use serde_json::{json, Value};

use super::{Backend, BackendError, BackendRequest, BackendResponse};
use crate::engine::prompt::{Prompt, PromptPart};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Provider {
    /// Chat-completions style endpoints.
    Openai,
    /// Messages style endpoints.
    Anthropic,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct HttpConfig {
    pub provider: Provider,
    pub url: String,
    pub model: String,
    #[serde(default)]
    pub temperature: f64,
    #[serde(default = "default_max_tokens")]
    pub max_tokens: u32,
    /// Environment variable holding the API key.
    #[serde(default = "default_key_env")]
    pub api_key_env: String,
    #[serde(default = "default_timeout")]
    pub timeout_secs: u64,
}

fn default_max_tokens() -> u32 {
    1024
}

fn default_key_env() -> String {
    "MOMA_API_KEY".into()
}

fn default_timeout() -> u64 {
    120
}

/// Provider-neutral chat payload; adapters translate it per provider.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct ChatPayload {
    pub model: String,
    pub temperature: f64,
    pub max_tokens: u32,
    pub messages: Vec<ChatMessage>,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct ChatMessage {
    pub role: String,
    pub content: Vec<ContentPart>,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
#[serde(tag = "type", rename_all = "snake_case")]
pub enum ContentPart {
    Text { text: String },
    Image { media_type: String, data: String },
}

impl ChatPayload {
    pub fn from_prompt(prompt: &Prompt, cfg: &HttpConfig) -> Self {
        let b64 = base64::engine::general_purpose::STANDARD;
        let content = prompt
            .parts
            .iter()
            .map(|p| match p {
                PromptPart::Text(t) => ContentPart::Text { text: t.clone() },
                PromptPart::Image(i) => ContentPart::Image { media_type: "image/png".into(), data: b64.encode(i.png()) },
            })
            .collect();
        Self {
            model: cfg.model.clone(),
            temperature: cfg.temperature,
            max_tokens: cfg.max_tokens,
            messages: vec![ChatMessage { role: "user".into(), content }],
        }
    }

    fn to_openai(&self) -> Value {
        let messages: Vec<Value> = self
            .messages
            .iter()
            .map(|m| {
                let parts: Vec<Value> = m
                    .content
                    .iter()
                    .map(|c| match c {
                        ContentPart::Text { text } => json!({"type": "text", "text": text}),
                        ContentPart::Image { media_type, data } => json!({
                            "type": "image_url",
                            "image_url": {"url": format!("data:{media_type};base64,{data}")}
                        }),
                    })
                    .collect();
                json!({"role": m.role, "content": parts})
            })
            .collect();
        json!({
            "model": self.model,
            "temperature": self.temperature,
            "max_tokens": self.max_tokens,
            "messages": messages,
        })
    }

    fn to_anthropic(&self) -> Value {
        let messages: Vec<Value> = self
            .messages
            .iter()
            .map(|m| {
                let parts: Vec<Value> = m
                    .content
                    .iter()
                    .map(|c| match c {
                        ContentPart::Text { text } => json!({"type": "text", "text": text}),
                        ContentPart::Image { media_type, data } => json!({
                            "type": "image",
                            "source": {"type": "base64", "media_type": media_type, "data": data}
                        }),
                    })
                    .collect();
                json!({"role": m.role, "content": parts})
            })
            .collect();
        json!({
            "model": self.model,
            "temperature": self.temperature,
            "max_tokens": self.max_tokens,
            "messages": messages,
        })
    }
}

fn completion_text(provider: Provider, body: &Value) -> Option<String> {
    match provider {
        Provider::Openai => {
            let content = &body["choices"][0]["message"]["content"];
            match content {
                Value::String(s) => Some(s.clone()),
                Value::Array(parts) => Some(parts.iter().filter_map(|p| p["text"].as_str()).collect::<Vec<_>>().join("")),
                _ => None,
            }
        }
        Provider::Anthropic => {
            let parts = body["content"].as_array()?;
            Some(
                parts
                    .iter()
                    .filter(|p| p["type"] == "text")
                    .filter_map(|p| p["text"].as_str())
                    .collect::<Vec<_>>()
                    .join(""),
            )
        }
    }
}

pub struct HttpBackend {
    cfg: HttpConfig,
    key: String,
    client: reqwest::blocking::Client,
    id: String,
}

impl std::fmt::Debug for HttpBackend {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.debug_struct("HttpBackend").field("cfg", &self.cfg).finish_non_exhaustive()
    }
}

impl HttpBackend {
    /// Reads the API key from the configured environment variable.
    pub fn new(cfg: HttpConfig) -> Result<Self, BackendError> {
        let key = std::env::var(&cfg.api_key_env)
            .map_err(|_| BackendError::Config(format!("environment variable {} is not set", cfg.api_key_env)))?;
        Self::with_key(cfg, key)
    }

    pub fn with_key(cfg: HttpConfig, key: String) -> Result<Self, BackendError> {
        let client = reqwest::blocking::Client::builder()
            .timeout(Duration::from_secs(cfg.timeout_secs))
            .build()
            .map_err(|e| BackendError::Config(e.to_string()))?;
        let id = format!("http:{}", cfg.model);
        Ok(Self { cfg, key, client, id })
    }

    pub fn payload(&self, prompt: &Prompt) -> Value {
        let p = ChatPayload::from_prompt(prompt, &self.cfg);
        match self.cfg.provider {
            Provider::Openai => p.to_openai(),
            Provider::Anthropic => p.to_anthropic(),
        }
    }
}

fn retry_after(headers: &reqwest::header::HeaderMap) -> Option<Duration> {
    headers
        .get(reqwest::header::RETRY_AFTER)?
        .to_str()
        .ok()?
        .trim()
        .parse::<f64>()
        .ok()
        .map(Duration::from_secs_f64)
}

impl Backend for HttpBackend {
    fn id(&self) -> &str {
        &self.id
    }

    fn complete(&self, req: &BackendRequest) -> Result<BackendResponse, BackendError> {
        let body = self.payload(&req.prompt);
        let mut rb = self.client.post(&self.cfg.url).json(&body);
        rb = match self.cfg.provider {
            Provider::Openai => rb.bearer_auth(&self.key),
            Provider::Anthropic => rb.header("x-api-key", &self.key).header("anthropic-version", "2023-06-01"),
        };
        let start = Instant::now();
        let resp = rb.send().map_err(|e| {
            if e.is_timeout() {
                BackendError::Timeout(Duration::from_secs(self.cfg.timeout_secs))
            } else {
                BackendError::Transport { message: e.to_string(), retry_after: None }
            }
        })?;
        let status = resp.status();
        let hint = retry_after(resp.headers());
        let text = resp
            .text()
            .map_err(|e| BackendError::Transport { message: e.to_string(), retry_after: hint })?;
        if !status.is_success() {
            return Err(BackendError::Status { status: status.as_u16(), body: text, retry_after: hint });
        }
        let json: Value = serde_json::from_str(&text).map_err(|e| BackendError::Malformed(e.to_string()))?;
        let completion = completion_text(self.cfg.provider, &json)
            .ok_or_else(|| BackendError::Malformed("no completion text in response".into()))?;
        Ok(BackendResponse {
            text: completion,
            latency_ms: start.elapsed().as_millis() as u64,
            provider: self.id.clone(),
        })
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::backends::RequestMeta;
    use crate::engine::prompt::Stage;
    use crate::percept::render::SceneImage;
    use image::RgbImage;
    use std::io::{BufRead, BufReader, Read, Write};
    use std::net::TcpListener;
    use std::thread;

    /// Serves one canned response and hands back the raw request.
    fn mock(status: &str, extra_headers: &str, body: &str) -> (String, thread::JoinHandle<String>) {
        let listener = TcpListener::bind("127.0.0.1:0").unwrap();
        let url = format!("http://{}/v1/chat", listener.local_addr().unwrap());
        let reply = format!(
            "HTTP/1.1 {status}\r\ncontent-type: application/json\r\n{extra_headers}content-length: {}\r\nconnection: close\r\n\r\n{body}",
            body.len()
        );
        let handle = thread::spawn(move || {
            let (stream, _) = listener.accept().unwrap();
            let mut reader = BufReader::new(stream.try_clone().unwrap());
            let mut head = String::new();
            let mut len = 0usize;
            loop {
                let mut line = String::new();
                reader.read_line(&mut line).unwrap();
                if let Some(v) = line.to_ascii_lowercase().strip_prefix("content-length:") {
                    len = v.trim().parse().unwrap();
                }
                head.push_str(&line);
                if line == "\r\n" {
                    break;
                }
            }
            let mut body = vec![0; len];
            reader.read_exact(&mut body).unwrap();
            let mut stream = stream;
            stream.write_all(reply.as_bytes()).unwrap();
            head + &String::from_utf8(body).unwrap()
        });
        (url, handle)
    }

    fn cfg(provider: Provider, url: String) -> HttpConfig {
        HttpConfig {
            provider,
            url,
            model: "test-model".into(),
            temperature: 0.0,
            max_tokens: 64,
            api_key_env: "UNUSED".into(),
            timeout_secs: 10,
        }
    }

    fn request() -> BackendRequest {
        let mut prompt = Prompt::new(Stage::Skill);
        prompt.text("pick a skill").image(SceneImage::new(RgbImage::new(2, 2)));
        BackendRequest { prompt, meta: RequestMeta::default() }
    }

    #[test]
    fn openai_round_trip_embeds_png() {
        let (url, h) = mock("200 OK", "", r#"{"choices":[{"message":{"content":"skill: move_base"}}]}"#);
        let b = HttpBackend::with_key(cfg(Provider::Openai, url), "k".into()).unwrap();
        let r = b.complete(&request()).unwrap();
        assert_eq!(r.text, "skill: move_base");
        let raw = h.join().unwrap();
        assert!(raw.to_ascii_lowercase().contains("authorization: bearer k"));
        assert!(raw.contains("data:image/png;base64,iVBOR"));
        assert!(raw.contains("\"temperature\":0.0"));
    }

    #[test]
    fn anthropic_adapter_shape() {
        let (url, h) = mock("200 OK", "", r#"{"content":[{"type":"text","text":"ok"}]}"#);
        let b = HttpBackend::with_key(cfg(Provider::Anthropic, url), "k".into()).unwrap();
        assert_eq!(b.complete(&request()).unwrap().text, "ok");
        let raw = h.join().unwrap();
        assert!(raw.contains("\"source\":{"));
        assert!(raw.to_ascii_lowercase().contains("x-api-key: k"));
    }

    #[test]
    fn rate_limit_carries_retry_hint() {
        let (url, h) = mock("429 Too Many Requests", "retry-after: 7\r\n", "{}");
        let b = HttpBackend::with_key(cfg(Provider::Openai, url), "k".into()).unwrap();
        let err = b.complete(&request()).unwrap_err();
        h.join().unwrap();
        assert!(matches!(err, BackendError::Status { status: 429, .. }));
        assert_eq!(err.retry_after(), Some(Duration::from_secs(7)));
    }

    #[test]
    fn refused_connection_is_transport_error() {
        let port = TcpListener::bind("127.0.0.1:0").unwrap().local_addr().unwrap().port();
        let b = HttpBackend::with_key(cfg(Provider::Openai, format!("http://127.0.0.1:{port}/")), "k".into()).unwrap();
        assert!(matches!(b.complete(&request()), Err(BackendError::Transport { .. })));
    }

    #[test]
    fn missing_key_is_config_error() {
        let mut c = cfg(Provider::Openai, "http://localhost".into());
        c.api_key_env = "MOMA_TEST_KEY_THAT_IS_NOT_SET".into();
        assert!(matches!(HttpBackend::new(c), Err(BackendError::Config(_))));
    }
}
